#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentprobe/score.hpp"
#include "fluentprobe/verbalization.hpp"

namespace fluentprobe {

enum class FormTag { kNonInflected, kInflected };

struct FormRank {
  std::string form;
  FormTag tag;
  int rank;
  bool operator==(const FormRank&) const = default;
};

struct EvalRecord {
  std::string fact_id;
  std::string language;
  std::string relation_id;
  VerbalizationSource source = VerbalizationSource::kTemplate;
  Normalization normalization = Normalization::kSum;
  int best_correct_rank = 1;
  std::string best_correct_form;
  std::map<int, bool> hits;
  std::vector<FormRank> form_ranks;  // at most one of each tag
  std::optional<double> qe_score;
  std::optional<std::string> subject_gender;
  std::string prompt;
  int candidate_count = 0;

  bool operator==(const EvalRecord&) const = default;
};

nlohmann::json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

// Canonical accumulation order: fact id, then source, then normalization.
bool canonical_less(const EvalRecord& a, const EvalRecord& b);

struct AggregateCell {
  std::string language;
  VerbalizationSource source = VerbalizationSource::kTemplate;
  std::optional<std::string> relation;
  std::map<int, double> r_at_n;
  double mean_rank = 1.0;
  std::size_t count = 0;
};

double recall_at_n(std::span<const EvalRecord> records, int n);
double mean_best_rank(std::span<const EvalRecord> records);

// One cell per (language, source[, relation]) group present in records.
std::vector<AggregateCell> aggregate(std::span<const EvalRecord> records,
                                     const std::vector<int>& n_values, bool by_relation = false);

using RecordPredicate = std::function<bool(const EvalRecord&)>;
AggregateCell subset_metrics(std::span<const EvalRecord> records, const RecordPredicate& predicate,
                             const std::vector<int>& n_values = kDefaultNValues);

bool is_female_subject(const EvalRecord& r);

struct RankHistogram {
  std::vector<std::size_t> counts;  // counts[i] holds rank i + 1
  std::size_t overflow = 0;         // ranks above max_bucket
  double q1 = 0, median = 0, q3 = 0;
};

// Quantile of sorted values by lower interpolation: element floor(q * (n - 1)).
double lower_quantile(std::span<const int> sorted, double q);
RankHistogram rank_histogram(std::span<const EvalRecord> records, int max_bucket);

// Table-2 sign: rank(non-inflected) - rank(inflected), positive favours the
// inflected form. kProse flips it.
enum class DeltaSign { kCaption, kProse };

struct DeltaCell {
  std::string language;
  VerbalizationSource source;
  double mean_delta = 0.0;
  std::size_t count = 0;
};

// Uses records carrying exactly one NONINFLECTED and one INFLECTED rank.
std::vector<DeltaCell> inflection_delta(std::span<const EvalRecord> records,
                                        DeltaSign sign = DeltaSign::kCaption);

struct GenderMarkers {
  std::vector<std::string> feminine;
  std::vector<std::string> masculine;
};

// language -> relation -> markers
using GenderPatterns = std::map<std::string, std::map<std::string, GenderMarkers>>;
GenderPatterns load_gender_patterns(const std::filesystem::path& path);
GenderPatterns gender_patterns_from_json(const nlohmann::json& j);

struct GenderProbe {
  std::string language;
  std::string relation_id;
  VerbalizationSource source;
  std::string prompt;
};

struct FeminineRate {
  std::string language;
  VerbalizationSource source;
  std::size_t feminine = 0;
  std::size_t masculine = 0;
  std::size_t undetermined = 0;
  // 100 * feminine / (feminine + masculine); empty when neither was seen.
  std::optional<double> percentage;
};

// Markers match on word boundaries; a prompt carrying both counts as feminine.
std::vector<FeminineRate> feminine_form_rate(std::span<const GenderProbe> probes,
                                             const GenderPatterns& patterns);

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;
  bool significant() const { return p < 0.05; }
};

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys);

struct QePoint {
  std::string relation_id;
  double delta_qe;
  double delta_r1;
};

struct QeRow {
  std::string language;
  VerbalizationSource source;  // comparison source
  std::optional<double> delta_qe;  // mean QE(source) - mean QE(baseline) over the language
  std::vector<QePoint> points;
  std::optional<PearsonResult> correlation;
  std::string note;  // why the correlation is absent
};

// Throws kInsufficientRelations or kDegenerateInput.
QeRow qe_delta_for_language(std::span<const EvalRecord> records, const std::string& language,
                            VerbalizationSource source,
                            VerbalizationSource baseline = VerbalizationSource::kTemplate);

// Every (language, comparison source) with QE data; failures become notes.
std::vector<QeRow> qe_delta_correlation(std::span<const EvalRecord> records,
                                        VerbalizationSource baseline = VerbalizationSource::kTemplate);

}  // namespace fluentprobe
