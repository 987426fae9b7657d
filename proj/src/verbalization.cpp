#include "fluentprobe/verbalization.hpp"

#include "fluentprobe/error.hpp"

namespace fluentprobe {

using nlohmann::json;

std::string_view source_name(VerbalizationSource source) {
  switch (source) {
    case VerbalizationSource::kTemplate: return "TEMPLATE";
    case VerbalizationSource::kMt: return "MT";
    case VerbalizationSource::kLlm: return "LLM";
  }
  return "UNKNOWN";
}

VerbalizationSource parse_source(std::string_view name) {
  for (auto s : kAllSources) {
    if (source_name(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown verbalization source '" + std::string(name) + "'");
}

json to_json(const Verbalization& v) {
  json prov{{"template", v.provenance.template_text},
            {"subject_label", v.provenance.subject_label},
            {"object_label", v.provenance.object_label},
            {"source_sentence", v.provenance.source_sentence},
            {"cache_key", v.provenance.cache_key}};
  if (v.provenance.request) prov["request"] = v.provenance.request->to_json();
  return json{{"fact_id", v.fact_id},
              {"source", source_name(v.source)},
              {"sentence", v.sentence},
              {"constraint_violation", v.constraint_violation},
              {"provenance", prov}};
}

Verbalization verbalization_from_json(const json& j) {
  Verbalization v;
  v.fact_id = j.at("fact_id").get<std::string>();
  v.source = parse_source(j.at("source").get<std::string>());
  v.sentence = j.at("sentence").get<std::string>();
  v.constraint_violation = j.value("constraint_violation", false);
  const auto& p = j.at("provenance");
  v.provenance.template_text = p.value("template", "");
  v.provenance.subject_label = p.value("subject_label", "");
  v.provenance.object_label = p.value("object_label", "");
  v.provenance.source_sentence = p.value("source_sentence", "");
  v.provenance.cache_key = p.value("cache_key", "");
  if (auto it = p.find("request"); it != p.end()) v.provenance.request = TextRequest::from_json(*it);
  return v;
}

}  // namespace fluentprobe
