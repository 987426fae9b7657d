#include "fluentprobe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

namespace fluentprobe {

using nlohmann::json;

LanguageCode::LanguageCode(std::string code) : code_(std::move(code)) {
  if (!valid(code_)) {
    throw Error(ErrorCode::kMalformedRecord, "invalid language code '" + code_ + "'");
  }
}

bool LanguageCode::valid(std::string_view code) {
  return code.size() == 2 && std::all_of(code.begin(), code.end(),
                                         [](char c) { return c >= 'a' && c <= 'z'; });
}

const std::string* Entity::label(const std::string& language) const {
  auto it = labels.find(language);
  return it == labels.end() ? nullptr : &it->second;
}

const std::vector<std::string>& Entity::alias_list(const std::string& language) const {
  static const std::vector<std::string> kNone;
  auto it = aliases.find(language);
  return it == aliases.end() ? kNone : it->second;
}

const std::string* Relation::template_for(const std::string& language) const {
  if (language == "en") return &english_template;
  auto it = templates.find(language);
  return it == templates.end() ? nullptr : &it->second;
}

bool Relation::is_object_final(const std::string& language) const {
  auto it = object_final.find(language);
  return it != object_final.end() && it->second;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

bool template_is_object_final(std::string_view tmpl) {
  const auto y = tmpl.find("[Y]");
  const auto x = tmpl.find("[X]");
  if (y == std::string_view::npos || x == std::string_view::npos || x > y) return false;
  return text::only_punct_or_space(tmpl.substr(y + 3));
}

Corpus::Corpus(std::vector<Entity> entities, std::vector<Relation> relations,
               std::vector<Fact> facts) {
  for (auto& e : entities) {
    const auto id = e.id;
    if (!entities_.emplace(id, std::move(e)).second) {
      throw Error(ErrorCode::kDuplicateId, "entity " + id);
    }
  }
  for (auto& r : relations) {
    const auto id = r.id;
    if (!relations_.emplace(id, std::move(r)).second) {
      throw Error(ErrorCode::kDuplicateId, "relation " + id);
    }
  }
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  for (auto& f : facts) {
    if (!entities_.contains(f.subject_id) || !entities_.contains(f.object_id)) {
      throw Error(ErrorCode::kDanglingReference, "fact " + f.id + " references unknown entity");
    }
    if (!relations_.contains(f.relation_id)) {
      throw Error(ErrorCode::kDanglingReference,
                  "fact " + f.id + " references unknown relation " + f.relation_id);
    }
    if (!seen.emplace(f.subject_id, f.relation_id, f.object_id, f.language.str()).second) {
      throw Error(ErrorCode::kDuplicateId, "fact " + f.id + " repeats an existing triple");
    }
    const auto id = f.id;
    if (!facts_.emplace(id, std::move(f)).second) {
      throw Error(ErrorCode::kDuplicateId, "fact " + id);
    }
  }
}

const Entity* Corpus::find_entity(const std::string& id) const {
  auto it = entities_.find(id);
  return it == entities_.end() ? nullptr : &it->second;
}

const Relation* Corpus::find_relation(const std::string& id) const {
  auto it = relations_.find(id);
  return it == relations_.end() ? nullptr : &it->second;
}

const Entity& Corpus::entity(const std::string& id) const {
  if (const auto* e = find_entity(id)) return *e;
  throw Error(ErrorCode::kDanglingReference, "unknown entity " + id);
}

const Relation& Corpus::relation(const std::string& id) const {
  if (const auto* r = find_relation(id)) return *r;
  throw Error(ErrorCode::kUnknownRelation, id);
}

namespace {

class RecordReader {
 public:
  RecordReader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}

  // Returns false at end of input. Blank lines are skipped.
  bool next(json& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (text::trim(line).empty()) continue;
      try {
        out = json::parse(line);
      } catch (const json::parse_error& e) {
        fail("", e.what());
      }
      if (!out.is_object()) fail("", "record is not an object");
      if (!header_seen_) {
        check_header(out);
        header_seen_ = true;
        continue;
      }
      return true;
    }
    if (!header_seen_) fail("schema_version", "missing schema header");
    return false;
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    std::string msg = file_ + ":" + std::to_string(line_no_);
    if (!field.empty()) msg += " field '" + field + "'";
    throw Error(ErrorCode::kMalformedRecord, msg + ": " + what);
  }

  std::string string_field(const json& rec, const char* name) const {
    auto it = rec.find(name);
    if (it == rec.end() || !it->is_string()) fail(name, "expected string");
    auto value = it->get<std::string>();
    if (text::trim(value).empty()) fail(name, "empty string");
    return value;
  }

  std::map<std::string, std::string> string_map(const json& rec, const char* name,
                                                bool required) const {
    std::map<std::string, std::string> out;
    auto it = rec.find(name);
    if (it == rec.end()) {
      if (required) fail(name, "missing");
      return out;
    }
    if (!it->is_object()) fail(name, "expected object");
    for (const auto& [k, v] : it->items()) {
      if (!LanguageCode::valid(k)) fail(name, "invalid language key '" + k + "'");
      if (!v.is_string() || text::trim(v.get<std::string>()).empty()) {
        fail(name, "non-empty string expected for '" + k + "'");
      }
      out.emplace(k, v.get<std::string>());
    }
    return out;
  }

  int line() const noexcept { return line_no_; }

 private:
  void check_header(const json& rec) {
    auto it = rec.find("schema_version");
    if (it == rec.end()) fail("schema_version", "line 1 must carry the schema header");
    if (!it->is_number_integer() || it->get<int>() != kCorpusSchemaVersion) {
      fail("schema_version", "unsupported schema version");
    }
  }

  std::istream& in_;
  std::string file_;
  int line_no_ = 0;
  bool header_seen_ = false;
};

Entity parse_entity(RecordReader& r, const json& rec) {
  Entity e;
  e.id = r.string_field(rec, "id");
  e.labels = r.string_map(rec, "labels", true);
  if (auto it = rec.find("aliases"); it != rec.end()) {
    if (!it->is_object()) r.fail("aliases", "expected object");
    for (const auto& [lang, list] : it->items()) {
      if (!LanguageCode::valid(lang)) r.fail("aliases", "invalid language key '" + lang + "'");
      if (!list.is_array()) r.fail("aliases", "expected array for '" + lang + "'");
      std::vector<std::string> aliases;
      std::set<std::string> seen;
      const auto* label = e.label(lang);
      for (const auto& a : list) {
        if (!a.is_string() || text::trim(a.get<std::string>()).empty()) {
          r.fail("aliases", "non-empty string expected");
        }
        auto value = a.get<std::string>();
        if (!seen.insert(value).second) r.fail("aliases", "duplicate alias '" + value + "'");
        if (label && *label == value) r.fail("aliases", "label listed as its own alias");
        aliases.push_back(std::move(value));
      }
      if (!aliases.empty()) e.aliases.emplace(lang, std::move(aliases));
    }
  }
  return e;
}

void check_template(RecordReader& r, const char* field, const std::string& tmpl) {
  if (count_occurrences(tmpl, "[X]") != 1 || count_occurrences(tmpl, "[Y]") != 1) {
    r.fail(field, "template must contain [X] and [Y] exactly once");
  }
}

Relation parse_relation(RecordReader& r, const json& rec) {
  Relation rel;
  rel.id = r.string_field(rec, "id");
  rel.english_template = r.string_field(rec, "english_template");
  check_template(r, "english_template", rel.english_template);
  rel.templates = r.string_map(rec, "templates", false);
  for (const auto& [lang, tmpl] : rel.templates) check_template(r, "templates", tmpl);
  if (auto it = rec.find("object_final"); it != rec.end()) {
    if (!it->is_object()) r.fail("object_final", "expected object");
    for (const auto& [lang, flag] : it->items()) {
      if (!LanguageCode::valid(lang)) r.fail("object_final", "invalid language key");
      if (!flag.is_boolean()) r.fail("object_final", "expected boolean");
      const bool final = flag.get<bool>();
      if (final) {
        const auto* tmpl = rel.template_for(lang);
        if (tmpl && !template_is_object_final(*tmpl)) {
          r.fail("object_final", "template for '" + lang + "' does not end with [Y]");
        }
      }
      rel.object_final.emplace(lang, final);
    }
  }
  if (auto it = rec.find("inflection_expected"); it != rec.end()) {
    if (!it->is_boolean()) r.fail("inflection_expected", "expected boolean");
    rel.inflection_expected = it->get<bool>();
  }
  return rel;
}

Fact parse_fact(RecordReader& r, const json& rec) {
  Fact f;
  f.id = r.string_field(rec, "id");
  f.subject_id = r.string_field(rec, "subject_id");
  f.relation_id = r.string_field(rec, "relation_id");
  f.object_id = r.string_field(rec, "object_id");
  const auto lang = r.string_field(rec, "language");
  if (!LanguageCode::valid(lang)) r.fail("language", "invalid language code '" + lang + "'");
  f.language = LanguageCode(lang);
  if (f.subject_id == f.object_id) r.fail("object_id", "subject and object coincide");
  if (auto it = rec.find("subject_gender"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) r.fail("subject_gender", "expected string");
    f.subject_gender = it->get<std::string>();
  }
  return f;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  return out;
}

void write_header(std::ostream& out) {
  out << json{{"schema_version", kCorpusSchemaVersion}}.dump() << '\n';
}

}  // namespace

Corpus load_corpus(std::istream& entities, std::istream& relations, std::istream& facts) {
  std::vector<Entity> es;
  std::vector<Relation> rs;
  std::vector<Fact> fs;
  json rec;
  RecordReader er(entities, "entities.jsonl");
  while (er.next(rec)) es.push_back(parse_entity(er, rec));
  RecordReader rr(relations, "relations.jsonl");
  while (rr.next(rec)) rs.push_back(parse_relation(rr, rec));
  RecordReader fr(facts, "facts.jsonl");
  while (fr.next(rec)) fs.push_back(parse_fact(fr, rec));
  return Corpus(std::move(es), std::move(rs), std::move(fs));
}

Corpus load_corpus(const CorpusPaths& paths) {
  auto e = open_in(paths.entities);
  auto r = open_in(paths.relations);
  auto f = open_in(paths.facts);
  return load_corpus(e, r, f);
}

void write_corpus(const Corpus& corpus, std::ostream& entities, std::ostream& relations,
                  std::ostream& facts) {
  write_header(entities);
  for (const auto& [id, e] : corpus.entities()) {
    json rec{{"id", e.id}, {"labels", e.labels}};
    if (!e.aliases.empty()) rec["aliases"] = e.aliases;
    entities << rec.dump() << '\n';
  }
  write_header(relations);
  for (const auto& [id, r] : corpus.relations()) {
    json rec{{"id", r.id},
             {"english_template", r.english_template},
             {"templates", r.templates},
             {"object_final", r.object_final},
             {"inflection_expected", r.inflection_expected}};
    relations << rec.dump() << '\n';
  }
  write_header(facts);
  for (const auto& [id, f] : corpus.facts()) {
    json rec{{"id", f.id},
             {"subject_id", f.subject_id},
             {"relation_id", f.relation_id},
             {"object_id", f.object_id},
             {"language", f.language.str()}};
    if (f.subject_gender) rec["subject_gender"] = *f.subject_gender;
    facts << rec.dump() << '\n';
  }
}

void write_corpus(const Corpus& corpus, const CorpusPaths& paths) {
  auto e = open_out(paths.entities);
  auto r = open_out(paths.relations);
  auto f = open_out(paths.facts);
  write_corpus(corpus, e, r, f);
}

std::string_view exclusion_reason_name(ExclusionReason reason) {
  switch (reason) {
    case ExclusionReason::kNotObjectFinal: return "NOT_OBJECT_FINAL";
    case ExclusionReason::kTooFewObjects: return "TOO_FEW_OBJECTS";
    case ExclusionReason::kExplicitExclude: return "EXPLICIT_EXCLUDE";
  }
  return "UNKNOWN";
}

std::vector<std::string> unique_object_pool(const Corpus& corpus, const std::string& relation_id,
                                            const LanguageCode& language) {
  if (!corpus.find_relation(relation_id)) throw Error(ErrorCode::kUnknownRelation, relation_id);
  std::set<std::string> ids;
  for (const auto& [id, f] : corpus.facts()) {
    if (f.relation_id == relation_id && f.language == language) ids.insert(f.object_id);
  }
  return {ids.begin(), ids.end()};
}

RelationFilterReport filter_relations(const Corpus& corpus,
                                      const std::vector<LanguageCode>& languages,
                                      std::size_t min_unique_objects,
                                      const std::set<std::string>& exclude_ids) {
  if (min_unique_objects < 2) {
    throw Error(ErrorCode::kInvalidConfig, "min_unique_objects must be at least 2");
  }
  RelationFilterReport report;
  for (const auto& [id, rel] : corpus.relations()) {
    const bool final_everywhere = std::all_of(
        languages.begin(), languages.end(),
        [&](const LanguageCode& l) { return rel.is_object_final(l.str()); });
    const bool enough_objects = std::all_of(
        languages.begin(), languages.end(), [&](const LanguageCode& l) {
          return unique_object_pool(corpus, id, l).size() >= min_unique_objects;
        });
    if (!final_everywhere) {
      report.excluded.push_back({id, ExclusionReason::kNotObjectFinal});
    } else if (!enough_objects) {
      report.excluded.push_back({id, ExclusionReason::kTooFewObjects});
    } else if (exclude_ids.contains(id)) {
      report.excluded.push_back({id, ExclusionReason::kExplicitExclude});
    } else {
      report.retained.push_back(id);
    }
  }
  return report;
}

}  // namespace fluentprobe
