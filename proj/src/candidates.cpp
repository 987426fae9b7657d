#include "fluentprobe/candidates.hpp"

#include <algorithm>
#include <set>

#include "fluentprobe/digest.hpp"
#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

namespace fluentprobe {

namespace {
constexpr std::string_view kDelimiter = "\xE2\x80\x96";  // U+2016
}

std::string distractor_hash_input(const std::string& salt, const std::string& relation_id,
                                  const std::string& language, const std::string& entity_id) {
  std::string s;
  s.reserve(salt.size() + relation_id.size() + language.size() + entity_id.size() + 9);
  s.append(salt).append(kDelimiter).append(relation_id).append(kDelimiter);
  s.append(language).append(kDelimiter).append(entity_id);
  return s;
}

std::string distractor_key(const std::string& salt, const std::string& relation_id,
                           const std::string& language, const std::string& entity_id) {
  return sha256_hex(distractor_hash_input(salt, relation_id, language, entity_id));
}

std::vector<Distractor> sample_distractors(const std::vector<std::string>& object_pool,
                                           const Fact& fact, const Corpus& corpus,
                                           const std::vector<std::string>& correct_forms,
                                           std::size_t k, const std::string& salt) {
  if (k < 1) throw Error(ErrorCode::kInvalidConfig, "k must be at least 1");
  const auto& lang = fact.language.str();
  const std::set<std::string> correct(correct_forms.begin(), correct_forms.end());
  const std::set<std::string> pool(object_pool.begin(), object_pool.end());

  struct Keyed {
    std::string key;
    Distractor d;
  };
  std::vector<Keyed> eligible;
  for (const auto& id : pool) {
    if (id == fact.object_id) continue;
    const auto* label = corpus.entity(id).label(lang);
    if (!label || correct.contains(*label)) continue;
    eligible.push_back({distractor_key(salt, fact.relation_id, lang, id), {id, *label}});
  }
  if (eligible.empty()) {
    throw Error(ErrorCode::kEmptyPool, "no eligible distractors for " + fact.id);
  }
  const auto take = std::min(k, eligible.size());
  std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take),
                    eligible.end(), [](const Keyed& a, const Keyed& b) { return a.key < b.key; });
  std::vector<Distractor> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(std::move(eligible[i].d));
  return out;
}

AssembledCandidates assemble_candidate_set(std::string fact_id, std::string prompt,
                                           std::vector<std::string> correct_forms,
                                           const std::vector<Distractor>& distractors,
                                           std::string salt) {
  if (text::trim(prompt).empty()) throw Error(ErrorCode::kInvalidConfig, "empty prompt");
  if (correct_forms.empty()) throw Error(ErrorCode::kNoAcceptedSplits, "no correct forms");
  const std::set<std::string> correct(correct_forms.begin(), correct_forms.end());
  AssembledCandidates out;
  for (const auto& d : distractors) {
    (correct.contains(d.form) ? out.dropped : out.set.distractors).push_back(d);
  }
  if (out.set.distractors.empty()) {
    throw Error(ErrorCode::kNoDistractorsRemain, "every distractor collides with a correct form");
  }
  out.set.fact_id = std::move(fact_id);
  out.set.prompt = std::move(prompt);
  out.set.correct_forms = std::move(correct_forms);
  out.set.salt = std::move(salt);
  return out;
}

nlohmann::json to_json(const CandidateSet& set) {
  nlohmann::json distractors = nlohmann::json::array();
  for (const auto& d : set.distractors) distractors.push_back({{"id", d.entity_id}, {"form", d.form}});
  return {{"fact_id", set.fact_id},
          {"prompt", set.prompt},
          {"correct_forms", set.correct_forms},
          {"distractors", distractors},
          {"salt", set.salt}};
}

CandidateSet candidate_set_from_json(const nlohmann::json& j) {
  CandidateSet s;
  s.fact_id = j.at("fact_id").get<std::string>();
  s.prompt = j.at("prompt").get<std::string>();
  s.correct_forms = j.at("correct_forms").get<std::vector<std::string>>();
  for (const auto& d : j.at("distractors")) {
    s.distractors.push_back({d.at("id").get<std::string>(), d.at("form").get<std::string>()});
  }
  s.salt = j.at("salt").get<std::string>();
  return s;
}

}  // namespace fluentprobe
