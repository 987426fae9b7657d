#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentprobe/corpus.hpp"

namespace fluentprobe {

inline constexpr std::size_t kDefaultDistractorCount = 50;

struct Distractor {
  std::string entity_id;
  std::string form;
  bool operator==(const Distractor&) const = default;
};

struct CandidateSet {
  std::string fact_id;
  std::string prompt;
  std::vector<std::string> correct_forms;
  std::vector<Distractor> distractors;
  std::string salt;

  std::size_t size() const noexcept { return correct_forms.size() + distractors.size(); }
  bool operator==(const CandidateSet&) const = default;
};

// The string hashed for one pool entity: salt, relation, language and entity
// id joined with U+2016 DOUBLE VERTICAL LINE.
std::string distractor_hash_input(const std::string& salt, const std::string& relation_id,
                                  const std::string& language, const std::string& entity_id);
std::string distractor_key(const std::string& salt, const std::string& relation_id,
                           const std::string& language, const std::string& entity_id);

// The k eligible pool entities with the smallest keys, ascending. Eligible:
// not the fact's object, has a label in the fact's language, label not equal
// to any correct form. Fewer than k eligible: all of them.
std::vector<Distractor> sample_distractors(const std::vector<std::string>& object_pool,
                                           const Fact& fact, const Corpus& corpus,
                                           const std::vector<std::string>& correct_forms,
                                           std::size_t k, const std::string& salt);

struct AssembledCandidates {
  CandidateSet set;
  std::vector<Distractor> dropped;  // forms that collided with a correct form
};

AssembledCandidates assemble_candidate_set(std::string fact_id, std::string prompt,
                                           std::vector<std::string> correct_forms,
                                           const std::vector<Distractor>& distractors,
                                           std::string salt);

nlohmann::json to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const nlohmann::json& j);

}  // namespace fluentprobe
