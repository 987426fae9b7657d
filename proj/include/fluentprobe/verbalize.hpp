#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fluentprobe/client.hpp"
#include "fluentprobe/corpus.hpp"
#include "fluentprobe/split.hpp"
#include "fluentprobe/verbalization.hpp"

namespace fluentprobe {

// Replaces [X] and [Y] verbatim; every other byte of the template survives.
std::string fill_template(std::string_view tmpl, std::string_view subject, std::string_view object);

Verbalization make_template_verbalization(const Fact& fact, const Corpus& corpus);

// The English sentence both translated verbalizations start from.
std::string english_sentence(const Fact& fact, const Corpus& corpus);

struct MtSettings {
  std::string translator_id = "google-translate-v2";
  RetryPolicy retry;
};

Verbalization make_mt_verbalization(const Fact& fact, const Corpus& corpus, TextClient& client,
                                    TranslationCache& cache, const MtSettings& settings = {});

struct FewShotExemplar {
  std::string source_sentence;
  std::string subject_translation;
  std::string object_translation;
  std::string translation;
  bool operator==(const FewShotExemplar&) const = default;
};

// Blocks of four labelled lines ("Source sentence:", "Subject translation:",
// "Object translation:", "Translation:") separated by blank lines. Each
// exemplar is checked: the translation must contain a form of both entities.
std::vector<FewShotExemplar> parse_exemplars(std::istream& in, const MatchConfig& match = {});
std::vector<FewShotExemplar> load_exemplars(const std::filesystem::path& path,
                                            const MatchConfig& match = {});
void write_exemplars(std::ostream& out, std::span<const FewShotExemplar> exemplars);

// English name used in the instruction ("Czech" for "cs"); kInvalidConfig for
// codes without a built-in name.
std::string language_name(const std::string& code);

std::string build_fewshot_prompt(const Relation& relation, const LanguageCode& language,
                                 std::span<const FewShotExemplar> exemplars, const Fact& fact,
                                 const Corpus& corpus, std::string_view target_language_name);

struct LlmSettings {
  std::string model_id = "gpt-4o-mini";
  double temperature = 0.0;
  std::string target_language_name;  // empty: language_name(code)
  RetryPolicy retry;
  MatchConfig match;
};

// First non-empty completion line, with an echoed "Translation:" label removed.
std::string parse_completion(std::string_view completion);

Verbalization make_llm_verbalization(const Fact& fact, const Corpus& corpus, TextClient& client,
                                     std::span<const FewShotExemplar> exemplars,
                                     TranslationCache& cache, const LlmSettings& settings = {});

}  // namespace fluentprobe
