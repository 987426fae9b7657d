#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fluentprobe/corpus.hpp"
#include "fluentprobe/verbalization.hpp"

namespace fluentprobe {

class Lemmatizer {
 public:
  virtual ~Lemmatizer() = default;
  virtual std::string lemma(std::string_view word) const = 0;
};

// Form -> lemma table, one "form<TAB>lemma" pair per line. Words absent from
// the table are their own lemma. Intended for lemmas exported from an
// external morphological analyser.
class TableLemmatizer : public Lemmatizer {
 public:
  explicit TableLemmatizer(std::map<std::string, std::string, std::less<>> table)
      : table_(std::move(table)) {}
  static std::shared_ptr<TableLemmatizer> load(const std::filesystem::path& path);
  std::string lemma(std::string_view word) const override;

 private:
  std::map<std::string, std::string, std::less<>> table_;
};

// Resolves a lemmatizer id: "" -> none, "tsv:<path>" -> TableLemmatizer.
std::shared_ptr<const Lemmatizer> make_lemmatizer(const std::string& id);

struct MatchConfig {
  double min_prefix_ratio = 0.6;
  std::size_t min_prefix_chars = 3;
  std::size_t max_suffix_delta = 4;
  std::string lemmatizer_id;
  std::shared_ptr<const Lemmatizer> lemmatizer;

  // Throws kInvalidConfig when the ratio or floor is out of range.
  void validate() const;
};

enum class MatchedVia { kExact, kStem, kLemma };
std::string_view matched_via_name(MatchedVia via);

struct ObjectMatch {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string form;
  MatchedVia via = MatchedVia::kExact;
  double prefix_ratio = 1.0;  // weakest per-word prefix/label-word ratio
  std::size_t label_index = 0;
};

// Every match of one strategy, unordered. Exposed for tests and audits.
std::vector<ObjectMatch> find_matches(std::string_view sentence,
                                      const std::vector<std::string>& labels,
                                      const MatchConfig& config, MatchedVia strategy);

// EXACT, then STEM, then LEMMA (when configured); within the first strategy
// that matches, the rightmost match wins.
std::optional<ObjectMatch> match_object_form(std::string_view sentence,
                                             const std::vector<std::string>& labels,
                                             const MatchConfig& config);

struct SplitResult {
  std::string prompt_prefix;  // bytes before the object, trailing space kept
  std::string object_form;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string remainder;
  MatchedVia via = MatchedVia::kExact;
  double prefix_ratio = 1.0;

  // Prompt fed to the scorer: the prefix without trailing whitespace.
  std::string prompt() const;
  bool operator==(const SplitResult&) const = default;
};

enum class RejectionReason { kObjectNotFound, kNotSentenceFinal, kEmptyPrompt };
std::string_view rejection_reason_name(RejectionReason reason);

struct Rejection {
  RejectionReason reason;
  std::string detail;
};

using SplitOutcome = std::variant<SplitResult, Rejection>;

// Stem matches weaker than this are flagged in the audit trail.
inline constexpr double kLowConfidencePrefixRatio = 0.75;

// Labels probed for MT/LLM output: default label, aliases, English label.
std::vector<std::string> object_labels(const Entity& object, const std::string& language);

SplitOutcome split_verbalization(const Verbalization& verbalization, const Entity& object,
                                 const std::string& language, const MatchConfig& config);

struct CorrectFormOptions {
  bool include_aliases = false;
  bool include_english = false;
};

// Accepted splits keyed by source; iteration follows TEMPLATE, MT, LLM.
using SplitsBySource = std::map<VerbalizationSource, SplitResult>;

std::vector<std::string> collect_correct_forms(const Entity& object, const std::string& language,
                                               const SplitsBySource& splits,
                                               const CorrectFormOptions& options);

}  // namespace fluentprobe
