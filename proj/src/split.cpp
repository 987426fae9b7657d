#include "fluentprobe/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

namespace fluentprobe {

std::shared_ptr<TableLemmatizer> TableLemmatizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open lemma table " + path.string());
  std::map<std::string, std::string, std::less<>> table;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    table.emplace(line.substr(0, tab), line.substr(tab + 1));
  }
  return std::make_shared<TableLemmatizer>(std::move(table));
}

std::string TableLemmatizer::lemma(std::string_view word) const {
  auto it = table_.find(word);
  return it == table_.end() ? std::string(word) : it->second;
}

std::shared_ptr<const Lemmatizer> make_lemmatizer(const std::string& id) {
  if (id.empty()) return nullptr;
  if (id.starts_with("tsv:")) return TableLemmatizer::load(id.substr(4));
  throw Error(ErrorCode::kInvalidConfig, "unknown lemmatizer '" + id + "'");
}

void MatchConfig::validate() const {
  if (!(min_prefix_ratio > 0.0 && min_prefix_ratio <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "min_prefix_ratio must lie in (0, 1]");
  }
  if (min_prefix_chars < 1) throw Error(ErrorCode::kInvalidConfig, "min_prefix_chars must be >= 1");
  if (!lemmatizer_id.empty() && !lemmatizer) {
    throw Error(ErrorCode::kInvalidConfig, "lemmatizer '" + lemmatizer_id + "' not resolved");
  }
}

std::string_view matched_via_name(MatchedVia via) {
  switch (via) {
    case MatchedVia::kExact: return "EXACT";
    case MatchedVia::kStem: return "STEM";
    case MatchedVia::kLemma: return "LEMMA";
  }
  return "UNKNOWN";
}

std::string_view rejection_reason_name(RejectionReason reason) {
  switch (reason) {
    case RejectionReason::kObjectNotFound: return "OBJECT_NOT_FOUND";
    case RejectionReason::kNotSentenceFinal: return "NOT_SENTENCE_FINAL";
    case RejectionReason::kEmptyPrompt: return "EMPTY_PROMPT";
  }
  return "UNKNOWN";
}

namespace {

// Minimum shared prefix for a label word of n characters. Words shorter than
// the absolute floor must match in full.
std::size_t required_prefix(std::size_t n, const MatchConfig& config) {
  const auto by_ratio = static_cast<std::size_t>(std::ceil(config.min_prefix_ratio * n - 1e-9));
  return std::min(n, std::max(config.min_prefix_chars, by_ratio));
}

// Bytes after the label's last word, e.g. ".)" in "Rutherford (New Jersey, U. S.)".
std::string_view label_tail(std::string_view label, const std::vector<text::Word>& words) {
  return words.empty() ? std::string_view{} : label.substr(words.back().end);
}

void aligned_matches(std::string_view sentence, const std::vector<text::Word>& sentence_words,
                     std::string_view label, std::size_t label_index, const MatchConfig& config,
                     MatchedVia strategy, std::vector<ObjectMatch>& out) {
  const auto label_words = text::words(label);
  const auto n = label_words.size();
  if (n == 0 || n > sentence_words.size()) return;
  std::vector<std::string> label_lemmas;
  if (strategy == MatchedVia::kLemma) {
    for (const auto& w : label_words) {
      label_lemmas.push_back(config.lemmatizer->lemma(label.substr(w.begin, w.end - w.begin)));
    }
  }
  for (std::size_t start = 0; start + n <= sentence_words.size(); ++start) {
    double weakest = 1.0;
    bool ok = true;
    for (std::size_t k = 0; k < n && ok; ++k) {
      const auto& lw = label_words[k];
      const auto& sw = sentence_words[start + k];
      if (strategy == MatchedVia::kStem) {
        const auto p = text::common_prefix(lw.chars, sw.chars);
        const auto tail = std::max(lw.chars.size() - p, sw.chars.size() - p);
        ok = p >= required_prefix(lw.chars.size(), config) && tail <= config.max_suffix_delta;
        weakest = std::min(weakest, static_cast<double>(p) / static_cast<double>(lw.chars.size()));
      } else {
        const auto word = sentence.substr(sw.begin, sw.end - sw.begin);
        ok = config.lemmatizer->lemma(word) == label_lemmas[k] ||
             word == label.substr(lw.begin, lw.end - lw.begin);
      }
    }
    if (!ok) continue;
    ObjectMatch m;
    m.begin = sentence_words[start].begin;
    m.end = sentence_words[start + n - 1].end;
    const auto tail = label_tail(label, label_words);
    if (!tail.empty() && sentence.substr(m.end).starts_with(tail)) m.end += tail.size();
    m.form = std::string(sentence.substr(m.begin, m.end - m.begin));
    m.via = strategy;
    m.prefix_ratio = strategy == MatchedVia::kStem ? weakest : 1.0;
    m.label_index = label_index;
    out.push_back(std::move(m));
  }
}

}  // namespace

std::vector<ObjectMatch> find_matches(std::string_view sentence,
                                      const std::vector<std::string>& labels,
                                      const MatchConfig& config, MatchedVia strategy) {
  std::vector<ObjectMatch> out;
  if (strategy == MatchedVia::kExact) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (auto pos : text::find_whole_word(sentence, labels[i])) {
        out.push_back({pos, pos + labels[i].size(), labels[i], MatchedVia::kExact, 1.0, i});
      }
    }
    return out;
  }
  if (strategy == MatchedVia::kLemma && !config.lemmatizer) return out;
  const auto sentence_words = text::words(sentence);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    aligned_matches(sentence, sentence_words, labels[i], i, config, strategy, out);
  }
  return out;
}

std::optional<ObjectMatch> match_object_form(std::string_view sentence,
                                             const std::vector<std::string>& labels,
                                             const MatchConfig& config) {
  if (labels.empty()) throw Error(ErrorCode::kMissingLabel, "no candidate labels to match");
  for (auto strategy : {MatchedVia::kExact, MatchedVia::kStem, MatchedVia::kLemma}) {
    auto matches = find_matches(sentence, labels, config, strategy);
    if (matches.empty()) continue;
    // Rightmost end; on ties the longer span, then the earlier label.
    return *std::min_element(matches.begin(), matches.end(),
                             [](const ObjectMatch& a, const ObjectMatch& b) {
                               if (a.end != b.end) return a.end > b.end;
                               if (a.begin != b.begin) return a.begin < b.begin;
                               return a.label_index < b.label_index;
                             });
  }
  return std::nullopt;
}

std::string SplitResult::prompt() const { return std::string(text::trim_right(prompt_prefix)); }

std::vector<std::string> object_labels(const Entity& object, const std::string& language) {
  std::vector<std::string> labels;
  auto add = [&](const std::string& s) {
    if (std::find(labels.begin(), labels.end(), s) == labels.end()) labels.push_back(s);
  };
  if (const auto* l = object.label(language)) add(*l);
  for (const auto& a : object.alias_list(language)) add(a);
  if (const auto* en = object.label("en")) add(*en);
  return labels;
}

namespace {

SplitOutcome finish_split(std::string_view sentence, std::size_t begin, std::size_t end,
                          MatchedVia via, double ratio) {
  SplitResult r;
  r.prompt_prefix = std::string(sentence.substr(0, begin));
  r.object_form = std::string(sentence.substr(begin, end - begin));
  r.remainder = std::string(sentence.substr(end));
  r.begin = begin;
  r.end = end;
  r.via = via;
  r.prefix_ratio = ratio;
  if (!text::only_punct_or_space(r.remainder)) {
    return Rejection{RejectionReason::kNotSentenceFinal,
                     "object '" + r.object_form + "' followed by '" + r.remainder + "'"};
  }
  if (text::trim(r.prompt_prefix).empty()) {
    return Rejection{RejectionReason::kEmptyPrompt, "object opens the sentence"};
  }
  return r;
}

}  // namespace

SplitOutcome split_verbalization(const Verbalization& verbalization, const Entity& object,
                                 const std::string& language, const MatchConfig& config) {
  const auto& sentence = verbalization.sentence;
  if (sentence.empty()) return Rejection{RejectionReason::kObjectNotFound, "empty sentence"};

  if (verbalization.source == VerbalizationSource::kTemplate) {
    const auto& p = verbalization.provenance;
    const auto y = p.template_text.find("[Y]");
    const auto x = p.template_text.find("[X]");
    if (y == std::string::npos || x == std::string::npos) {
      throw Error(ErrorCode::kMissingPlaceholder, "template provenance lacks placeholders");
    }
    const auto begin = x < y ? y + p.subject_label.size() - 3 : y;
    const auto end = begin + p.object_label.size();
    if (end > sentence.size() || sentence.compare(begin, p.object_label.size(), p.object_label)) {
      return Rejection{RejectionReason::kObjectNotFound, "template provenance does not match"};
    }
    return finish_split(sentence, begin, end, MatchedVia::kExact, 1.0);
  }

  const auto labels = object_labels(object, language);
  if (labels.empty()) return Rejection{RejectionReason::kObjectNotFound, "object has no labels"};
  const auto match = match_object_form(sentence, labels, config);
  if (!match) return Rejection{RejectionReason::kObjectNotFound, "no form of the object found"};
  return finish_split(sentence, match->begin, match->end, match->via, match->prefix_ratio);
}

std::vector<std::string> collect_correct_forms(const Entity& object, const std::string& language,
                                               const SplitsBySource& splits,
                                               const CorrectFormOptions& options) {
  if (splits.empty()) throw Error(ErrorCode::kNoAcceptedSplits, object.id);
  const auto* label = object.label(language);
  if (!label) throw Error(ErrorCode::kMissingLabel, object.id + " has no '" + language + "' label");
  std::vector<std::string> forms;
  std::set<std::string> seen;
  auto add = [&](const std::string& f) {
    if (seen.insert(f).second) forms.push_back(f);
  };
  add(*label);
  for (const auto& [source, split] : splits) add(split.object_form);
  if (options.include_aliases) {
    auto aliases = object.alias_list(language);
    std::sort(aliases.begin(), aliases.end());
    for (const auto& a : aliases) add(a);
  }
  if (options.include_english) {
    if (const auto* en = object.label("en")) add(*en);
  }
  return forms;
}

}  // namespace fluentprobe
