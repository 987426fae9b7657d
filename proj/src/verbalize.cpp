#include "fluentprobe/verbalize.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

namespace fluentprobe {

std::string fill_template(std::string_view tmpl, std::string_view subject, std::string_view object) {
  if (count_occurrences(tmpl, "[X]") != 1 || count_occurrences(tmpl, "[Y]") != 1) {
    throw Error(ErrorCode::kMissingPlaceholder,
                "template must hold [X] and [Y] exactly once: " + std::string(tmpl));
  }
  std::string out;
  out.reserve(tmpl.size() + subject.size() + object.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "[X]") == 0) {
      out += subject;
      i += 3;
    } else if (tmpl.compare(i, 3, "[Y]") == 0) {
      out += object;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

namespace {

const std::string& require_label(const Entity& e, const std::string& language) {
  if (const auto* l = e.label(language)) return *l;
  throw Error(ErrorCode::kMissingLabel, e.id + " has no '" + language + "' label");
}

}  // namespace

Verbalization make_template_verbalization(const Fact& fact, const Corpus& corpus) {
  const auto& lang = fact.language.str();
  const auto& relation = corpus.relation(fact.relation_id);
  const auto* tmpl = relation.template_for(lang);
  if (!tmpl) throw Error(ErrorCode::kMissingTemplate, relation.id + " has no '" + lang + "' template");
  const auto& subject = require_label(corpus.entity(fact.subject_id), lang);
  const auto& object = require_label(corpus.entity(fact.object_id), lang);
  Verbalization v;
  v.fact_id = fact.id;
  v.source = VerbalizationSource::kTemplate;
  v.sentence = fill_template(*tmpl, subject, object);
  v.provenance.template_text = *tmpl;
  v.provenance.subject_label = subject;
  v.provenance.object_label = object;
  return v;
}

std::string english_sentence(const Fact& fact, const Corpus& corpus) {
  const auto& relation = corpus.relation(fact.relation_id);
  return fill_template(relation.english_template, require_label(corpus.entity(fact.subject_id), "en"),
                       require_label(corpus.entity(fact.object_id), "en"));
}

Verbalization make_mt_verbalization(const Fact& fact, const Corpus& corpus, TextClient& client,
                                    TranslationCache& cache, const MtSettings& settings) {
  TextRequest request;
  request.client_id = settings.translator_id;
  request.source_lang = "en";
  request.target_lang = fact.language.str();
  request.text = english_sentence(fact, corpus);

  const auto response = complete_cached(client, request, cache, settings.retry);
  const auto sentence = text::trim(response);
  if (sentence.empty()) throw Error(ErrorCode::kEmptyTranslation, "MT returned no text for " + fact.id);

  Verbalization v;
  v.fact_id = fact.id;
  v.source = VerbalizationSource::kMt;
  v.sentence = std::string(sentence);
  v.provenance.source_sentence = request.text;
  v.provenance.cache_key = request.digest();
  v.provenance.request = std::move(request);
  return v;
}

namespace {

constexpr std::string_view kSourceField = "Source sentence:";
constexpr std::string_view kSubjectField = "Subject translation:";
constexpr std::string_view kObjectField = "Object translation:";
constexpr std::string_view kTranslationField = "Translation:";
constexpr std::string_view kIndent = "        ";

bool take_field(std::string_view line, std::string_view field, std::string& out) {
  const auto trimmed = text::trim(line);
  if (!trimmed.starts_with(field)) return false;
  out = std::string(text::trim(trimmed.substr(field.size())));
  return true;
}

void check_exemplar(const FewShotExemplar& ex, int block, const MatchConfig& match) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kMalformedRecord, "exemplar " + std::to_string(block) + ": " + what);
  };
  if (ex.source_sentence.empty() || ex.subject_translation.empty() ||
      ex.object_translation.empty() || ex.translation.empty()) {
    fail("all four fields must be non-empty");
  }
  if (!match_object_form(ex.translation, {ex.subject_translation}, match)) {
    fail("translation does not contain the subject '" + ex.subject_translation + "'");
  }
  if (!match_object_form(ex.translation, {ex.object_translation}, match)) {
    fail("translation does not contain the object '" + ex.object_translation + "'");
  }
}

}  // namespace

std::vector<FewShotExemplar> parse_exemplars(std::istream& in, const MatchConfig& match) {
  std::vector<FewShotExemplar> out;
  std::vector<std::string> block;
  int block_no = 0;
  auto flush = [&] {
    if (block.empty()) return;
    ++block_no;
    FewShotExemplar ex;
    if (block.size() != 4 || !take_field(block[0], kSourceField, ex.source_sentence) ||
        !take_field(block[1], kSubjectField, ex.subject_translation) ||
        !take_field(block[2], kObjectField, ex.object_translation) ||
        !take_field(block[3], kTranslationField, ex.translation)) {
      throw Error(ErrorCode::kMalformedRecord,
                  "exemplar " + std::to_string(block_no) + " is not four labelled lines");
    }
    check_exemplar(ex, block_no, match);
    out.push_back(std::move(ex));
    block.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) {
      flush();
    } else {
      block.push_back(line);
    }
  }
  flush();
  return out;
}

std::vector<FewShotExemplar> load_exemplars(const std::filesystem::path& path,
                                            const MatchConfig& match) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNoExemplars, "cannot open exemplar file " + path.string());
  return parse_exemplars(in, match);
}

void write_exemplars(std::ostream& out, std::span<const FewShotExemplar> exemplars) {
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    if (i) out << '\n';
    const auto& ex = exemplars[i];
    out << kSourceField << ' ' << ex.source_sentence << '\n'
        << kSubjectField << ' ' << ex.subject_translation << '\n'
        << kObjectField << ' ' << ex.object_translation << '\n'
        << kTranslationField << ' ' << ex.translation << '\n';
  }
}

std::string language_name(const std::string& code) {
  static const std::map<std::string, std::string> kNames{
      {"cs", "Czech"},      {"da", "Danish"},    {"de", "German"},  {"en", "English"},
      {"es", "Spanish"},    {"fr", "French"},    {"hr", "Croatian"}, {"id", "Indonesian"},
      {"it", "Italian"},    {"pl", "Polish"},    {"ru", "Russian"},  {"sk", "Slovak"},
      {"uk", "Ukrainian"},  {"vi", "Vietnamese"}, {"zh", "Chinese"},
  };
  auto it = kNames.find(code);
  if (it == kNames.end()) {
    throw Error(ErrorCode::kInvalidConfig, "no language name for '" + code + "'; set it in config");
  }
  return it->second;
}

std::string build_fewshot_prompt(const Relation& relation, const LanguageCode& language,
                                 std::span<const FewShotExemplar> exemplars, const Fact& fact,
                                 const Corpus& corpus, std::string_view target_language_name) {
  if (exemplars.empty()) {
    throw Error(ErrorCode::kNoExemplars, relation.id + "/" + language.str());
  }
  const auto& subject = require_label(corpus.entity(fact.subject_id), language.str());
  const auto& object = require_label(corpus.entity(fact.object_id), language.str());
  const auto source = fill_template(relation.english_template,
                                    require_label(corpus.entity(fact.subject_id), "en"),
                                    require_label(corpus.entity(fact.object_id), "en"));

  std::ostringstream out;
  out << "You are a professional English-" << target_language_name
      << " translator. You are given English sentences \n"
         "about subjects and objects. You are also given translations of subjects and objects \n"
         "separately. You need to translate full sentences to "
      << target_language_name
      << ". When translating, you \n"
         "have to use the translated subjects and objects. Pay special attention \n"
         "to grammatical agreement between the words in the translated sentences.\n"
         "When translating, follow the examples:\n"
      << kIndent << '\n';
  auto block = [&](std::string_view src, std::string_view subj, std::string_view obj) {
    out << kIndent << kSourceField << ' ' << src << '\n'
        << kIndent << kSubjectField << ' ' << subj << '\n'
        << kIndent << kObjectField << ' ' << obj << '\n'
        << kIndent << kTranslationField << ' ';
  };
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    if (i) out << "\n\n";
    const auto& ex = exemplars[i];
    block(ex.source_sentence, ex.subject_translation, ex.object_translation);
    out << ex.translation;
  }
  out << '\n' << kIndent << '\n';
  block(source, subject, object);
  return out.str();
}

std::string parse_completion(std::string_view completion) {
  std::istringstream in{std::string(completion)};
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.starts_with(kTranslationField)) t = text::trim(t.substr(kTranslationField.size()));
    if (!t.empty()) return std::string(t);
  }
  return {};
}

Verbalization make_llm_verbalization(const Fact& fact, const Corpus& corpus, TextClient& client,
                                     std::span<const FewShotExemplar> exemplars,
                                     TranslationCache& cache, const LlmSettings& settings) {
  const auto& relation = corpus.relation(fact.relation_id);
  const auto lang_name = settings.target_language_name.empty()
                             ? language_name(fact.language.str())
                             : settings.target_language_name;
  TextRequest request;
  request.client_id = settings.model_id;
  request.source_lang = "en";
  request.target_lang = fact.language.str();
  request.text = build_fewshot_prompt(relation, fact.language, exemplars, fact, corpus, lang_name);
  const auto source = english_sentence(fact, corpus);
  std::ostringstream temp;
  temp << settings.temperature;
  request.aux = {{"query", source}, {"temperature", temp.str()}};

  const auto completion = complete_cached(client, request, cache, settings.retry);
  auto sentence = parse_completion(completion);
  if (sentence.empty()) {
    throw Error(ErrorCode::kEmptyTranslation, "LLM returned no text for " + fact.id);
  }

  const auto& object = corpus.entity(fact.object_id);
  std::vector<std::string> enforced{require_label(object, fact.language.str())};
  for (const auto& a : object.alias_list(fact.language.str())) enforced.push_back(a);

  Verbalization v;
  v.fact_id = fact.id;
  v.source = VerbalizationSource::kLlm;
  v.constraint_violation = !match_object_form(sentence, enforced, settings.match).has_value();
  v.sentence = std::move(sentence);
  v.provenance.source_sentence = source;
  v.provenance.subject_label = require_label(corpus.entity(fact.subject_id), fact.language.str());
  v.provenance.object_label = enforced.front();
  v.provenance.cache_key = request.digest();
  v.provenance.request = std::move(request);
  return v;
}

}  // namespace fluentprobe
