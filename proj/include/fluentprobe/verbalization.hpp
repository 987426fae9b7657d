#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fluentprobe/client.hpp"

namespace fluentprobe {

enum class VerbalizationSource { kTemplate, kMt, kLlm };

inline constexpr std::array kAllSources{VerbalizationSource::kTemplate, VerbalizationSource::kMt,
                                        VerbalizationSource::kLlm};

std::string_view source_name(VerbalizationSource source);  // TEMPLATE | MT | LLM
VerbalizationSource parse_source(std::string_view name);

// Inputs a verbalization was produced from. For TEMPLATE the template and the
// two labels; for MT/LLM the exact client request and its cache key.
struct Provenance {
  std::string template_text;
  std::string subject_label;
  std::string object_label;
  std::string source_sentence;
  std::optional<TextRequest> request;
  std::string cache_key;
  bool operator==(const Provenance&) const = default;
};

struct Verbalization {
  std::string fact_id;
  VerbalizationSource source = VerbalizationSource::kTemplate;
  std::string sentence;
  Provenance provenance;
  bool constraint_violation = false;  // LLM output lost the enforced object
  bool operator==(const Verbalization&) const = default;
};

nlohmann::json to_json(const Verbalization& v);
Verbalization verbalization_from_json(const nlohmann::json& j);

}  // namespace fluentprobe
