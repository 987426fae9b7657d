#pragma once

#include <map>
#include <string>
#include <vector>

#include "fluentprobe/metrics.hpp"

namespace fluentprobe::report {

// Number formats used by the tables.
// general: rounded, shortest form, integral values without a decimal point
//          ("0.67", "5", "19.98").
// fixed:   exactly `decimals` digits ("5.80").
// repr:    rounded, shortest form that always keeps a decimal point
//          ("0.0", "-0.0", "0.38").
std::string format_general(double value, int decimals);
std::string format_fixed(double value, int decimals);
std::string format_repr(double value, int decimals);

inline constexpr std::string_view kNotAvailable = "n/a";

// Row labels for the verbalization sources.
struct SourceLabels {
  std::map<VerbalizationSource, std::string> names{{VerbalizationSource::kTemplate, "Template"},
                                                   {VerbalizationSource::kMt, "GT"},
                                                   {VerbalizationSource::kLlm, "ChatGPT"}};
  const std::string& operator()(VerbalizationSource s) const { return names.at(s); }
};

struct Layout {
  std::vector<std::string> languages;
  std::vector<VerbalizationSource> sources;
  SourceLabels labels;
};

// Verbalization rows x language columns: one R@n block per n, then the mean
// rank block.
std::string main_table(const std::vector<AggregateCell>& cells, const Layout& layout,
                       const std::vector<int>& n_shown = {1});

std::string delta_table(const std::vector<DeltaCell>& cells, const Layout& layout);

// Delta rows then correlation rows, one per comparison source in layout.sources;
// significant correlations carry an asterisk.
std::string qe_table(const std::vector<QeRow>& rows, const Layout& layout);

struct GenderCell {
  std::string language;
  VerbalizationSource source;
  std::optional<double> feminine_percentage;
  std::optional<double> r_at_1;
};

std::string gender_table(const std::vector<GenderCell>& cells, const Layout& layout);

// Machine-readable exports.
std::string cells_csv(const std::vector<AggregateCell>& cells, const std::vector<int>& n_values);
std::string curves_csv(const std::vector<AggregateCell>& cells, const std::vector<int>& n_values);

struct HistogramRow {
  std::string language;
  VerbalizationSource source;
  RankHistogram histogram;
};
std::string histogram_csv(const std::vector<HistogramRow>& rows);

std::string csv_escape(const std::string& field);

}  // namespace fluentprobe::report
