#pragma once

#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fluentprobe {

// Two-letter lowercase language tag ("cs", "ru", ...).
class LanguageCode {
 public:
  LanguageCode() = default;
  // Throws kMalformedRecord unless code matches ^[a-z]{2}$.
  explicit LanguageCode(std::string code);

  static bool valid(std::string_view code);

  const std::string& str() const noexcept { return code_; }
  auto operator<=>(const LanguageCode&) const = default;

 private:
  std::string code_;
};

struct Entity {
  std::string id;
  std::map<std::string, std::string> labels;                 // language -> default label
  std::map<std::string, std::vector<std::string>> aliases;   // language -> aliases

  const std::string* label(const std::string& language) const;
  const std::vector<std::string>& alias_list(const std::string& language) const;
  bool operator==(const Entity&) const = default;
};

struct Relation {
  std::string id;
  std::string english_template;
  std::map<std::string, std::string> templates;
  std::map<std::string, bool> object_final;
  bool inflection_expected = false;

  const std::string* template_for(const std::string& language) const;
  bool is_object_final(const std::string& language) const;
  bool operator==(const Relation&) const = default;
};

struct Fact {
  std::string id;
  std::string subject_id;
  std::string relation_id;
  std::string object_id;
  LanguageCode language;
  std::optional<std::string> subject_gender;
  bool operator==(const Fact&) const = default;
};

// Immutable after construction; records are keyed by id, so two corpora
// built from the same records in any order compare equal.
class Corpus {
 public:
  Corpus(std::vector<Entity> entities, std::vector<Relation> relations, std::vector<Fact> facts);

  const std::map<std::string, Entity>& entities() const noexcept { return entities_; }
  const std::map<std::string, Relation>& relations() const noexcept { return relations_; }
  const std::map<std::string, Fact>& facts() const noexcept { return facts_; }

  const Entity* find_entity(const std::string& id) const;
  const Relation* find_relation(const std::string& id) const;
  const Entity& entity(const std::string& id) const;
  const Relation& relation(const std::string& id) const;

  bool operator==(const Corpus&) const = default;

 private:
  std::map<std::string, Entity> entities_;
  std::map<std::string, Relation> relations_;
  std::map<std::string, Fact> facts_;
};

struct CorpusPaths {
  std::filesystem::path entities;
  std::filesystem::path relations;
  std::filesystem::path facts;
};

inline constexpr int kCorpusSchemaVersion = 1;

Corpus load_corpus(const CorpusPaths& paths);
Corpus load_corpus(std::istream& entities, std::istream& relations, std::istream& facts);
void write_corpus(const Corpus& corpus, const CorpusPaths& paths);
void write_corpus(const Corpus& corpus, std::ostream& entities, std::ostream& relations,
                  std::ostream& facts);

enum class ExclusionReason { kNotObjectFinal, kTooFewObjects, kExplicitExclude };
std::string_view exclusion_reason_name(ExclusionReason reason);

struct RelationExclusion {
  std::string relation_id;
  ExclusionReason reason;
  bool operator==(const RelationExclusion&) const = default;
};

struct RelationFilterReport {
  std::vector<std::string> retained;
  std::vector<RelationExclusion> excluded;
  bool operator==(const RelationFilterReport&) const = default;
};

inline constexpr std::size_t kDefaultMinUniqueObjects = 10;

// Rules are checked in the order object-final, object count, explicit list;
// the first failing rule names the exclusion.
RelationFilterReport filter_relations(const Corpus& corpus,
                                      const std::vector<LanguageCode>& languages,
                                      std::size_t min_unique_objects,
                                      const std::set<std::string>& exclude_ids);

// Sorted, duplicate-free object ids seen with relation_id in language.
std::vector<std::string> unique_object_pool(const Corpus& corpus, const std::string& relation_id,
                                            const LanguageCode& language);

// Template shape checks shared with the verbalizer.
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);
bool template_is_object_final(std::string_view tmpl);

}  // namespace fluentprobe
