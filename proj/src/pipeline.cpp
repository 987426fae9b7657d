#include "fluentprobe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fluentprobe/digest.hpp"
#include "fluentprobe/error.hpp"
#include "fluentprobe/http_clients.hpp"
#include "fluentprobe/report.hpp"
#include "fluentprobe/text.hpp"
#include "fluentprobe/verbalize.hpp"

namespace fluentprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::string_view kBuildStage = "build-dataset";
constexpr std::string_view kEvaluateStage = "evaluate";
constexpr std::string_view kReportStage = "report";

[[noreturn]] void bad_config(const std::string& what) {
  throw Error(ErrorCode::kInvalidConfig, what);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> known,
                         const std::string& where) {
  if (!obj.is_object()) bad_config(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      bad_config("unknown key '" + key + "' in " + where);
    }
  }
}

ClientMode parse_mode(const std::string& s) {
  if (s == "replay") return ClientMode::kReplay;
  if (s == "record") return ClientMode::kRecord;
  if (s == "live") return ClientMode::kLive;
  bad_config("client mode must be replay, record or live, got '" + s + "'");
}

ClientConfig parse_client(const json& j, const fs::path& base, const std::string& where,
                          const std::string& default_model) {
  reject_unknown_keys(j, {"mode", "fixtures", "endpoint", "api_key_env", "model"}, where);
  ClientConfig c;
  c.mode = parse_mode(j.value("mode", "replay"));
  c.fixtures = resolve(base, j.value("fixtures", ""));
  c.endpoint = j.value("endpoint", "");
  c.api_key_env = j.value("api_key_env", "");
  c.model = j.value("model", default_model);
  if (c.mode != ClientMode::kLive && c.fixtures.empty()) bad_config(where + ".fixtures is required");
  if (c.mode != ClientMode::kReplay && c.endpoint.empty()) bad_config(where + ".endpoint is required");
  return c;
}

std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (!j.is_array()) bad_config(where + " must be a list");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) bad_config(where + " must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// Lines that fail to parse are dropped: a run killed mid-write leaves at most
// one torn line at the end of an append-only file.
std::vector<json> read_lines(const fs::path& path, bool tolerate_torn = false) {
  std::vector<json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      if (tolerate_torn) continue;
      throw Error(ErrorCode::kMalformedRecord,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string pair_key(const std::string& fact_id, VerbalizationSource s) {
  return fact_id + '\x1f' + std::string(source_name(s));
}

bool audit_less(const AuditEntry& a, const AuditEntry& b) {
  auto key = [](const AuditEntry& e) {
    return std::tie(e.fact_id, e.source, e.stage, e.kind, e.detail);
  };
  return key(a) < key(b);
}

std::map<std::string, std::size_t> count_audits(const std::vector<AuditEntry>& audit) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : audit) ++counts[e.kind];
  return counts;
}

std::size_t count_terminal(const std::vector<AuditEntry>& audit) {
  return static_cast<std::size_t>(
      std::count_if(audit.begin(), audit.end(), [](const auto& e) { return e.terminal; }));
}

std::map<std::string, std::string> digest_artifacts(const fs::path& dir,
                                                    const std::vector<std::string>& names) {
  std::map<std::string, std::string> out;
  for (const auto& n : names) out[n] = sha256_file(dir / n);
  return out;
}

std::map<std::string, std::string> corpus_digests(const CorpusPaths& paths) {
  return {{"entities", sha256_file(paths.entities)},
          {"relations", sha256_file(paths.relations)},
          {"facts", sha256_file(paths.facts)}};
}

// A stage is reusable when its manifest was written by the same config over
// the same inputs and every artifact still hashes to the recorded digest.
bool stage_reusable(const fs::path& dir, std::string_view stage, const std::string& config_digest,
                    const std::map<std::string, std::string>& inputs) {
  if (!fs::exists(dir / kManifestFile)) return false;
  try {
    const auto m = read_manifest(dir);
    if (!m.completed_stages.contains(std::string(stage))) return false;
    if (m.config_digest != config_digest || m.inputs != inputs) return false;
    for (const auto& [name, digest] : m.artifacts) {
      if (!fs::exists(dir / name) || sha256_file(dir / name) != digest) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

class CountingClient : public TextClient {
 public:
  explicit CountingClient(std::unique_ptr<TextClient> inner) : inner_(std::move(inner)) {}
  std::string complete(const TextRequest& request) override {
    ++calls_;
    return inner_->complete(request);
  }
  std::size_t calls() const { return calls_; }

 private:
  std::unique_ptr<TextClient> inner_;
  std::atomic<std::size_t> calls_{0};
};

std::unique_ptr<TextClient> make_text_client(const ClientConfig& c, VerbalizationSource source,
                                             bool qe) {
  if (c.mode == ClientMode::kReplay) return std::make_unique<ReplayClient>(c.fixtures);
  HttpEndpoint endpoint{c.endpoint, {}, 60};
  if (!c.api_key_env.empty()) {
    if (const char* key = std::getenv(c.api_key_env.c_str())) endpoint.api_key = key;
  }
  std::unique_ptr<TextClient> live;
  if (qe) {
    live = make_qe_client(endpoint);
  } else if (source == VerbalizationSource::kMt) {
    live = make_google_translate_client(endpoint);
  } else {
    live = make_chat_completion_client(endpoint, c.model);
  }
  if (c.mode == ClientMode::kLive) return live;
  return std::make_unique<RecordingClient>(std::move(live), c.fixtures);
}

struct FactOutput {
  std::vector<Verbalization> verbalizations;
  std::vector<BundleEntry> entries;
  std::vector<AuditEntry> audit;
};

}  // namespace

bool RunConfig::source_enabled(VerbalizationSource s) const {
  return std::find(sources.begin(), sources.end(), s) != sources.end();
}

bool RunConfig::language_enabled(const std::string& code) const {
  return std::any_of(languages.begin(), languages.end(),
                     [&](const LanguageCode& l) { return l.str() == code; });
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  reject_unknown_keys(doc,
                      {"version", "corpus", "languages", "relation_filter", "sources",
                       "mining_sources", "mt", "llm", "qe", "language_names", "scorer",
                       "cache_dir", "match", "distractors", "n_values", "normalization",
                       "include_aliases", "include_english", "inflection_delta_sign",
                       "no_space_languages", "gender_markers", "retry", "max_in_flight",
                       "histogram_buckets", "output_dir"},
                      "config");
  if (doc.value("version", 0) != kRunConfigVersion) {
    bad_config("config version must be " + std::to_string(kRunConfigVersion));
  }
  RunConfig c;
  c.base_dir = base_dir;
  try {
    const auto& corpus = doc.at("corpus");
    reject_unknown_keys(corpus, {"entities", "relations", "facts"}, "corpus");
    c.corpus.entities = resolve(base_dir, corpus.at("entities").get<std::string>());
    c.corpus.relations = resolve(base_dir, corpus.at("relations").get<std::string>());
    c.corpus.facts = resolve(base_dir, corpus.at("facts").get<std::string>());

    for (const auto& l : string_list(doc.at("languages"), "languages")) {
      if (!LanguageCode::valid(l)) bad_config("invalid language code '" + l + "'");
      c.languages.emplace_back(l);
    }
    if (c.languages.empty()) bad_config("languages must not be empty");

    if (doc.contains("relation_filter")) {
      const auto& f = doc["relation_filter"];
      reject_unknown_keys(f, {"min_unique_objects", "exclude"}, "relation_filter");
      c.min_unique_objects = f.value("min_unique_objects", kDefaultMinUniqueObjects);
      if (c.min_unique_objects < 2) bad_config("relation_filter.min_unique_objects must be at least 2");
      if (f.contains("exclude")) {
        for (auto& id : string_list(f["exclude"], "relation_filter.exclude")) {
          c.exclude_relations.insert(std::move(id));
        }
      }
    }

    if (doc.contains("sources")) {
      c.sources.clear();
      for (const auto& s : string_list(doc["sources"], "sources")) {
        const auto src = parse_source(s);
        if (!c.source_enabled(src)) c.sources.push_back(src);
      }
      std::sort(c.sources.begin(), c.sources.end());
      if (c.sources.empty()) bad_config("sources must not be empty");
    }
    c.mining_sources = c.sources;
    if (doc.contains("mining_sources")) {
      c.mining_sources.clear();
      for (const auto& s : string_list(doc["mining_sources"], "mining_sources")) {
        c.mining_sources.push_back(parse_source(s));
      }
      std::sort(c.mining_sources.begin(), c.mining_sources.end());
      c.mining_sources.erase(std::unique(c.mining_sources.begin(), c.mining_sources.end()),
                             c.mining_sources.end());
    }

    if (doc.contains("mt")) c.mt = parse_client(doc["mt"], base_dir, "mt", "google-translate-v2");
    if (doc.contains("llm")) {
      auto llm = doc["llm"];
      for (const char* key : {"exemplar_dir", "exemplar_count", "temperature"}) llm.erase(key);
      c.llm = parse_client(llm, base_dir, "llm", "gpt-4o-mini");
      c.exemplar_dir = resolve(base_dir, doc["llm"].value("exemplar_dir", ""));
      c.exemplar_count = doc["llm"].value("exemplar_count", std::size_t{20});
      c.llm_temperature = doc["llm"].value("temperature", 0.0);
      if (c.exemplar_count == 0) bad_config("llm.exemplar_count must be positive");
    }
    if (doc.contains("qe")) c.qe = parse_client(doc["qe"], base_dir, "qe", "comet-qe");
    if (doc.contains("language_names")) {
      c.language_names = doc["language_names"].get<std::map<std::string, std::string>>();
    }

    if (doc.contains("scorer")) {
      const auto& s = doc["scorer"];
      reject_unknown_keys(s, {"kind", "command"}, "scorer");
      const auto kind = s.value("kind", "subprocess");
      if (kind == "subprocess") {
        c.scorer.kind = ScorerKind::kSubprocess;
      } else if (kind == "oracle") {
        c.scorer.kind = ScorerKind::kOracle;
      } else if (kind == "adversarial") {
        c.scorer.kind = ScorerKind::kAdversarial;
      } else {
        bad_config("scorer.kind must be subprocess, oracle or adversarial");
      }
      if (s.contains("command")) {
        for (auto arg : string_list(s["command"], "scorer.command")) {
          // {config_dir} lets a config point at scripts stored next to it.
          for (auto pos = arg.find("{config_dir}"); pos != std::string::npos;
               pos = arg.find("{config_dir}")) {
            arg.replace(pos, 12, base_dir.string());
          }
          c.scorer.command.push_back(std::move(arg));
        }
      }
      if (c.scorer.kind == ScorerKind::kSubprocess && c.scorer.command.empty()) {
        bad_config("scorer.command is required for a subprocess scorer");
      }
    } else {
      bad_config("scorer is required");
    }

    c.cache_dir = resolve(base_dir, doc.value("cache_dir", ""));

    if (doc.contains("match")) {
      const auto& m = doc["match"];
      reject_unknown_keys(m, {"min_prefix_ratio", "min_prefix_chars", "max_suffix_delta", "lemmatizer"},
                          "match");
      c.match.min_prefix_ratio = m.value("min_prefix_ratio", c.match.min_prefix_ratio);
      c.match.min_prefix_chars = m.value("min_prefix_chars", c.match.min_prefix_chars);
      c.match.max_suffix_delta = m.value("max_suffix_delta", c.match.max_suffix_delta);
      auto lem = m.value("lemmatizer", "");
      if (lem.starts_with("tsv:")) lem = "tsv:" + resolve(base_dir, lem.substr(4)).string();
      c.match.lemmatizer_id = lem;
      c.match.lemmatizer = make_lemmatizer(lem);
    }
    c.match.validate();

    if (doc.contains("distractors")) {
      const auto& d = doc["distractors"];
      reject_unknown_keys(d, {"k", "salt"}, "distractors");
      c.distractor_count = d.value("k", kDefaultDistractorCount);
      c.salt = d.value("salt", c.salt);
      if (c.distractor_count == 0) bad_config("distractors.k must be positive");
      if (text::trim(c.salt).empty()) bad_config("distractors.salt must not be empty");
    }

    if (doc.contains("n_values")) {
      c.n_values = doc["n_values"].get<std::vector<int>>();
      std::sort(c.n_values.begin(), c.n_values.end());
      c.n_values.erase(std::unique(c.n_values.begin(), c.n_values.end()), c.n_values.end());
      if (c.n_values.empty() || c.n_values.front() < 1) bad_config("n_values must be positive");
    }

    const auto norm = doc.value("normalization", "SUM");
    if (norm == "BOTH") {
      c.normalizations = {Normalization::kSum, Normalization::kMean};
    } else {
      c.normalizations = {parse_normalization(norm)};
    }

    c.include_aliases = doc.value("include_aliases", false);
    c.include_english = doc.value("include_english", false);
    const auto sign = doc.value("inflection_delta_sign", "caption");
    if (sign == "caption") {
      c.delta_sign = DeltaSign::kCaption;
    } else if (sign == "prose") {
      c.delta_sign = DeltaSign::kProse;
    } else {
      bad_config("inflection_delta_sign must be caption or prose");
    }
    if (doc.contains("no_space_languages")) {
      const auto list = string_list(doc["no_space_languages"], "no_space_languages");
      c.no_space_languages = {list.begin(), list.end()};
    }
    c.gender_markers = resolve(base_dir, doc.value("gender_markers", ""));
    if (doc.contains("retry")) {
      const auto& r = doc["retry"];
      reject_unknown_keys(r, {"attempts", "base_delay_ms"}, "retry");
      c.retry.attempts = r.value("attempts", c.retry.attempts);
      c.retry.base_delay = std::chrono::milliseconds(
          r.value("base_delay_ms", static_cast<std::int64_t>(c.retry.base_delay.count())));
      if (c.retry.attempts < 1) bad_config("retry.attempts must be >= 1");
    }
    c.max_in_flight = doc.value("max_in_flight", c.max_in_flight);
    if (c.max_in_flight == 0) bad_config("max_in_flight must be positive");
    c.histogram_buckets = doc.value("histogram_buckets", c.histogram_buckets);
    if (c.histogram_buckets < 1) bad_config("histogram_buckets must be positive");
    c.output_dir = resolve(base_dir, doc.value("output_dir", "out"));
  } catch (const json::exception& e) {
    bad_config(std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw;
    bad_config(e.what());
  }

  for (auto s : c.sources) {
    if (s == VerbalizationSource::kMt && !c.mt) bad_config("source MT needs an mt client");
    if (s == VerbalizationSource::kLlm && !c.llm) bad_config("source LLM needs an llm client");
  }
  for (auto s : c.mining_sources) {
    if (s == VerbalizationSource::kMt && !c.mt) bad_config("mining source MT needs an mt client");
    if (s == VerbalizationSource::kLlm && !c.llm) bad_config("mining source LLM needs an llm client");
  }

  auto canonical = doc;
  canonical.erase("output_dir");
  canonical.erase("cache_dir");
  c.digest = sha256_hex(canonical.dump());
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    bad_config(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc, fs::absolute(path).parent_path());
}

void force_replay(RunConfig& config) {
  for (auto* c : {&config.mt, &config.llm, &config.qe}) {
    if (!*c) continue;
    if ((*c)->fixtures.empty()) bad_config("--replay needs fixtures for every client");
    (*c)->mode = ClientMode::kReplay;
  }
}

json to_json(const AuditEntry& e) {
  json j{{"stage", e.stage}, {"fact_id", e.fact_id}, {"kind", e.kind}, {"detail", e.detail},
         {"terminal", e.terminal}};
  if (e.source) j["source"] = source_name(*e.source);
  return j;
}

AuditEntry audit_entry_from_json(const json& j) {
  AuditEntry e;
  e.stage = j.at("stage").get<std::string>();
  e.fact_id = j.at("fact_id").get<std::string>();
  if (j.contains("source")) e.source = parse_source(j["source"].get<std::string>());
  e.kind = j.at("kind").get<std::string>();
  e.detail = j.value("detail", "");
  e.terminal = j.value("terminal", false);
  return e;
}

json to_json(const BundleEntry& e) {
  json tags = json::object();
  for (const auto& [form, tag] : e.form_tags) {
    tags[form] = tag == FormTag::kInflected ? "INFLECTED" : "NONINFLECTED";
  }
  json j{{"fact_id", e.fact_id},       {"source", source_name(e.source)},
         {"language", e.language},     {"relation_id", e.relation_id},
         {"sentence", e.sentence},     {"candidates", to_json(e.candidates)},
         {"form_tags", tags}};
  if (e.subject_gender) j["subject_gender"] = *e.subject_gender;
  if (e.qe_score) j["qe_score"] = *e.qe_score;
  return j;
}

BundleEntry bundle_entry_from_json(const json& j) {
  BundleEntry e;
  try {
    e.fact_id = j.at("fact_id").get<std::string>();
    e.source = parse_source(j.at("source").get<std::string>());
    e.language = j.at("language").get<std::string>();
    e.relation_id = j.at("relation_id").get<std::string>();
    e.sentence = j.at("sentence").get<std::string>();
    e.candidates = candidate_set_from_json(j.at("candidates"));
    for (const auto& [form, tag] : j.at("form_tags").items()) {
      e.form_tags[form] = tag.get<std::string>() == "INFLECTED" ? FormTag::kInflected
                                                                : FormTag::kNonInflected;
    }
    if (j.contains("subject_gender")) e.subject_gender = j["subject_gender"].get<std::string>();
    if (j.contains("qe_score")) e.qe_score = j["qe_score"].get<double>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kMalformedRecord, std::string("bundle entry: ") + ex.what());
  }
  return e;
}

json RunManifest::to_json() const {
  return json{{"config_digest", config_digest},
              {"completed_stages", completed_stages},
              {"audit_counts", audit_counts},
              {"artifacts", artifacts},
              {"inputs", inputs}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config_digest = j.at("config_digest").get<std::string>();
  m.completed_stages = j.at("completed_stages").get<std::set<std::string>>();
  m.audit_counts = j.at("audit_counts").get<std::map<std::string, std::size_t>>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  m.inputs = j.value("inputs", std::map<std::string, std::string>{});
  return m;
}

RunManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw Error(ErrorCode::kIo, "no manifest in " + dir.string());
  try {
    return RunManifest::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, (dir / kManifestFile).string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  write_text(dir / kManifestFile, manifest.to_json().dump(2) + "\n");
}

void parallel_for(std::size_t count, std::size_t max_in_flight,
                  const std::function<void(std::size_t)>& fn) {
  const auto workers = std::max<std::size_t>(1, std::min(count, max_in_flight));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (auto i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

Backends default_backends(const RunConfig& config) {
  Backends b;
  b.text_client = [&config](VerbalizationSource s) -> std::unique_ptr<TextClient> {
    const auto& c = s == VerbalizationSource::kMt ? config.mt : config.llm;
    if (!c) bad_config(std::string(source_name(s)) + " has no client configured");
    return make_text_client(*c, s, false);
  };
  if (config.qe) b.qe_client = make_text_client(*config.qe, VerbalizationSource::kTemplate, true);
  const auto scorer = config.scorer;
  b.scorer = [scorer](const std::vector<BundleEntry>& entries) -> std::unique_ptr<ScorerBackend> {
    if (scorer.kind == ScorerKind::kSubprocess) {
      return std::make_unique<SubprocessScorer>(scorer.command);
    }
    auto oracle = std::make_unique<OracleScorer>(scorer.kind == ScorerKind::kOracle
                                                     ? OracleScorer::Mode::kPerfect
                                                     : OracleScorer::Mode::kAdversarial);
    for (const auto& e : entries) oracle->add(e.candidates.prompt, e.candidates.correct_forms);
    return oracle;
  };
  return b;
}

// ---------------------------------------------------------------------------
// build-dataset

StageResult cmd_build_dataset(const RunConfig& config) {
  auto backends = default_backends(config);
  return cmd_build_dataset(config, backends);
}

StageResult cmd_build_dataset(const RunConfig& config, Backends& backends) {
  StageResult result;
  result.dir = config.output_dir / "bundle";
  const auto inputs = corpus_digests(config.corpus);
  if (stage_reusable(result.dir, kBuildStage, config.digest, inputs)) {
    result.reused = true;
    result.records = read_bundle(result.dir).size();
    result.terminal_audits = count_terminal(read_audit(result.dir / "audit.jsonl"));
    return result;
  }

  const auto corpus = load_corpus(config.corpus);
  const auto filter = filter_relations(corpus, config.languages, config.min_unique_objects,
                                       config.exclude_relations);
  std::map<std::string, std::string> excluded;
  for (const auto& e : filter.excluded) {
    excluded[e.relation_id] = std::string(exclusion_reason_name(e.reason));
  }

  // Sources that get verbalized: evaluated rows plus those mined for forms.
  std::set<VerbalizationSource> produced(config.sources.begin(), config.sources.end());
  produced.insert(config.mining_sources.begin(), config.mining_sources.end());
  const std::set<VerbalizationSource> mining(config.mining_sources.begin(),
                                             config.mining_sources.end());

  std::map<VerbalizationSource, std::unique_ptr<CountingClient>> clients;
  for (auto s : produced) {
    if (s != VerbalizationSource::kTemplate) {
      clients[s] = std::make_unique<CountingClient>(backends.text_client(s));
    }
  }
  std::unique_ptr<CountingClient> qe_client;
  if (backends.qe_client) qe_client = std::make_unique<CountingClient>(std::move(backends.qe_client));

  std::vector<const Fact*> facts;
  for (const auto& [id, f] : corpus.facts()) {
    if (config.language_enabled(f.language.str())) facts.push_back(&f);
  }

  // Shared read-only tables, filled before the parallel phase.
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> pools;
  std::map<std::pair<std::string, std::string>, std::vector<FewShotExemplar>> exemplars;
  for (const auto* f : facts) {
    if (excluded.contains(f->relation_id)) continue;
    const auto key = std::make_pair(f->relation_id, f->language.str());
    if (!pools.contains(key)) pools[key] = unique_object_pool(corpus, f->relation_id, f->language);
    // Exemplar problems are configuration errors: fail before any client call.
    if (produced.contains(VerbalizationSource::kLlm) && !exemplars.contains(key)) {
      auto ex = load_exemplars(config.exemplar_dir / (key.first + "." + key.second + ".txt"),
                               config.match);
      if (ex.empty()) throw Error(ErrorCode::kNoExemplars, key.first + "/" + key.second);
      if (ex.size() > config.exemplar_count) ex.resize(config.exemplar_count);
      exemplars[key] = std::move(ex);
    }
  }

  TranslationCache cache(config.cache_dir);
  MtSettings mt_settings;
  if (config.mt) mt_settings.translator_id = config.mt->model;
  mt_settings.retry = config.retry;
  LlmSettings llm_settings;
  if (config.llm) llm_settings.model_id = config.llm->model;
  llm_settings.temperature = config.llm_temperature;
  llm_settings.retry = config.retry;
  llm_settings.match = config.match;

  std::vector<FactOutput> outputs(facts.size());
  parallel_for(facts.size(), config.max_in_flight, [&](std::size_t i) {
    const Fact& fact = *facts[i];
    const std::string lang = fact.language.str();
    auto& out = outputs[i];
    auto audit = [&](std::optional<VerbalizationSource> s, std::string kind, std::string detail,
                     bool terminal) {
      out.audit.push_back({std::string(kBuildStage), fact.id, s, std::move(kind),
                           std::move(detail), terminal && s && config.source_enabled(*s)});
    };

    if (const auto it = excluded.find(fact.relation_id); it != excluded.end()) {
      for (auto s : config.sources) audit(s, "RELATION_EXCLUDED", it->second, true);
      return;
    }

    const auto& object = corpus.entity(fact.object_id);
    SplitsBySource splits;                                 // mined for correct forms
    std::map<VerbalizationSource, SplitResult> prompts;    // evaluated
    std::map<VerbalizationSource, std::string> sentences;
    for (auto s : produced) {
      try {
        Verbalization v;
        switch (s) {
          case VerbalizationSource::kTemplate:
            v = make_template_verbalization(fact, corpus);
            break;
          case VerbalizationSource::kMt:
            v = make_mt_verbalization(fact, corpus, *clients.at(s), cache, mt_settings);
            break;
          case VerbalizationSource::kLlm: {
            const auto& ex = exemplars.at({fact.relation_id, lang});
            auto settings = llm_settings;
            if (const auto n = config.language_names.find(lang); n != config.language_names.end()) {
              settings.target_language_name = n->second;
            }
            v = make_llm_verbalization(fact, corpus, *clients.at(s),
                                       ex, cache, settings);
            break;
          }
        }
        if (v.constraint_violation) audit(s, "CONSTRAINT_VIOLATION", v.sentence, false);
        out.verbalizations.push_back(v);
        const auto outcome = split_verbalization(v, object, lang, config.match);
        if (const auto* rej = std::get_if<Rejection>(&outcome)) {
          audit(s, std::string(rejection_reason_name(rej->reason)), rej->detail, true);
          continue;
        }
        const auto& split = std::get<SplitResult>(outcome);
        if (split.via == MatchedVia::kStem && split.prefix_ratio < kLowConfidencePrefixRatio) {
          audit(s, "LOW_CONFIDENCE_STEM", split.object_form, false);
        }
        if (mining.contains(s)) splits.emplace(s, split);
        if (config.source_enabled(s)) {
          prompts.emplace(s, split);
          sentences.emplace(s, v.sentence);
        }
      } catch (const Error& e) {
        audit(s, std::string(error_code_name(e.code())), e.what(), true);
      }
    }
    if (prompts.empty()) return;
    if (splits.empty()) {
      // No mined form survived: the default label alone is correct.
      auto only = prompts.begin()->second;
      only.object_form = *object.label(lang);
      splits.emplace(prompts.begin()->first, only);
    }

    std::vector<std::string> base;
    std::vector<std::string> expanded;
    std::vector<Distractor> distractors;
    try {
      base = collect_correct_forms(object, lang, splits, {});
      expanded = collect_correct_forms(object, lang, splits,
                                       {config.include_aliases, config.include_english});
      distractors = sample_distractors(pools.at({fact.relation_id, lang}), fact, corpus, base,
                                       config.distractor_count, config.salt);
    } catch (const Error& e) {
      for (const auto& [s, p] : prompts) audit(s, std::string(error_code_name(e.code())), e.what(), true);
      return;
    }

    std::map<std::string, FormTag> tags;
    if (corpus.relation(fact.relation_id).inflection_expected && base.size() == 2) {
      tags[base[0]] = FormTag::kNonInflected;
      tags[base[1]] = FormTag::kInflected;
    }

    const auto english = english_sentence(fact, corpus);
    for (const auto& [s, split] : prompts) {
      try {
        auto assembled =
            assemble_candidate_set(fact.id, split.prompt(), expanded, distractors, config.salt);
        for (const auto& d : assembled.dropped) {
          audit(s, "DISTRACTOR_DROPPED", d.entity_id + " " + d.form, false);
        }
        BundleEntry entry;
        entry.fact_id = fact.id;
        entry.source = s;
        entry.language = lang;
        entry.relation_id = fact.relation_id;
        entry.subject_gender = fact.subject_gender;
        entry.sentence = sentences.at(s);
        entry.candidates = std::move(assembled.set);
        entry.form_tags = tags;
        if (qe_client) {
          TextRequest request;
          request.client_id = config.qe->model;
          request.source_lang = "en";
          request.target_lang = lang;
          request.text = entry.sentence;
          request.aux = {{"source", english}};
          try {
            const auto response = complete_cached(*qe_client, request, cache, config.retry);
            std::size_t used = 0;
            const std::string trimmed(text::trim(response));
            const double score = std::stod(trimmed, &used);
            if (used != trimmed.size()) throw std::invalid_argument(trimmed);
            entry.qe_score = score;
          } catch (const std::exception& e) {
            audit(s, "QE_ERROR", e.what(), false);
          }
        }
        out.entries.push_back(std::move(entry));
      } catch (const Error& e) {
        audit(s, std::string(error_code_name(e.code())), e.what(), true);
      }
    }
  });

  fs::create_directories(result.dir);
  std::vector<json> verbalization_lines;
  std::vector<json> candidate_lines;
  std::vector<AuditEntry> audit;
  for (auto& o : outputs) {
    for (const auto& v : o.verbalizations) verbalization_lines.push_back(to_json(v));
    for (const auto& e : o.entries) candidate_lines.push_back(to_json(e));
    audit.insert(audit.end(), o.audit.begin(), o.audit.end());
  }
  std::stable_sort(audit.begin(), audit.end(), audit_less);
  std::vector<json> audit_lines;
  for (const auto& e : audit) audit_lines.push_back(to_json(e));

  write_lines(result.dir / "verbalizations.jsonl", verbalization_lines);
  write_lines(result.dir / "candidates.jsonl", candidate_lines);
  write_lines(result.dir / "audit.jsonl", audit_lines);

  RunManifest manifest;
  manifest.config_digest = config.digest;
  manifest.completed_stages = {std::string(kBuildStage)};
  manifest.audit_counts = count_audits(audit);
  manifest.inputs = inputs;
  manifest.artifacts =
      digest_artifacts(result.dir, {"verbalizations.jsonl", "candidates.jsonl", "audit.jsonl"});
  write_manifest(result.dir, manifest);

  result.records = candidate_lines.size();
  result.terminal_audits = count_terminal(audit);
  for (const auto& [s, c] : clients) result.client_calls += c->calls();
  if (qe_client) result.client_calls += qe_client->calls();
  return result;
}

std::vector<BundleEntry> read_bundle(const fs::path& bundle) {
  const auto manifest = read_manifest(bundle);
  if (!manifest.completed_stages.contains(std::string(kBuildStage))) {
    throw Error(ErrorCode::kIo, bundle.string() + " is not a complete bundle");
  }
  std::vector<BundleEntry> out;
  for (const auto& j : read_lines(bundle / "candidates.jsonl")) out.push_back(bundle_entry_from_json(j));
  return out;
}

std::vector<AuditEntry> read_audit(const fs::path& file) {
  std::vector<AuditEntry> out;
  for (const auto& j : read_lines(file)) out.push_back(audit_entry_from_json(j));
  return out;
}

std::vector<EvalRecord> read_records(const fs::path& records) {
  std::vector<EvalRecord> out;
  const auto file = records / "records.jsonl";
  if (!fs::exists(file)) throw Error(ErrorCode::kIo, "no records.jsonl in " + records.string());
  for (const auto& j : read_lines(file)) out.push_back(eval_record_from_json(j));
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

std::vector<EvalRecord> evaluate_entry(ScorerBackend& scorer, const BundleEntry& e,
                                       const RunConfig& config) {
  const bool no_space = config.no_space_languages.contains(e.language);
  std::vector<EvalRecord> out;
  for (auto norm : config.normalizations) {
    const auto scored = score_candidates(scorer, e.candidates, norm, no_space);
    const auto ranked = rank_candidates(e.fact_id, scored, e.candidates.correct_forms, config.n_values);
    EvalRecord r;
    r.fact_id = e.fact_id;
    r.language = e.language;
    r.relation_id = e.relation_id;
    r.source = e.source;
    r.normalization = norm;
    r.best_correct_rank = ranked.best_correct_rank;
    r.best_correct_form = ranked.best_correct_form;
    r.hits = ranked.hits;
    for (const auto& [form, tag] : e.form_tags) r.form_ranks.push_back({form, tag, rank_of_form(ranked, form)});
    std::sort(r.form_ranks.begin(), r.form_ranks.end(),
              [](const FormRank& a, const FormRank& b) { return a.tag < b.tag; });
    r.qe_score = e.qe_score;
    r.subject_gender = e.subject_gender;
    r.prompt = e.candidates.prompt;
    r.candidate_count = static_cast<int>(e.candidates.size());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

StageResult cmd_evaluate(const RunConfig& config, const fs::path& bundle,
                         const EvaluateOptions& options) {
  auto backends = default_backends(config);
  return cmd_evaluate(config, bundle, backends, options);
}

StageResult cmd_evaluate(const RunConfig& config, const fs::path& bundle, Backends& backends,
                         const EvaluateOptions& options) {
  StageResult result;
  result.dir = config.output_dir / "records";
  const auto bundle_manifest = read_manifest(bundle);
  const std::map<std::string, std::string> inputs{
      {"bundle", sha256_hex(bundle_manifest.to_json().dump())}};
  if (stage_reusable(result.dir, kEvaluateStage, config.digest, inputs)) {
    result.reused = true;
    result.records = read_records(result.dir).size();
    result.terminal_audits = count_terminal(read_audit(result.dir / "audit.jsonl"));
    return result;
  }

  const auto entries = read_bundle(bundle);
  auto scorer = backends.scorer(entries);
  try {
    scorer->ping();
  } catch (const Error& e) {
    throw Error(ErrorCode::kBackendError, std::string("scorer unreachable: ") + e.what());
  }

  // A partial run from another config or bundle cannot be resumed.
  fs::create_directories(result.dir);
  const auto partial_records = result.dir / "records.partial.jsonl";
  const auto partial_audit = result.dir / "audit.partial.jsonl";
  const auto partial_marker = result.dir / "partial.json";
  const json marker{{"config_digest", config.digest}, {"inputs", inputs}};
  bool resumable = false;
  if (fs::exists(partial_marker)) {
    std::ifstream in(partial_marker);
    try {
      resumable = json::parse(in) == marker;
    } catch (const json::exception&) {
    }
  }
  if (!resumable) {
    fs::remove(partial_records);
    fs::remove(partial_audit);
    fs::remove(result.dir / "records.jsonl");
    fs::remove(result.dir / "audit.jsonl");
    fs::remove(result.dir / kManifestFile);
    write_text(partial_marker, marker.dump() + "\n");
  }

  // Keep only whole lines, then rewrite so appends start on a clean line.
  const auto done_records = read_lines(partial_records, true);
  const auto done_audit = read_lines(partial_audit, true);
  write_lines(partial_records, done_records);
  write_lines(partial_audit, done_audit);

  std::set<std::string> done;
  for (const auto& j : done_records) {
    done.insert(pair_key(j.at("fact_id").get<std::string>(), parse_source(j.at("source").get<std::string>())));
  }
  for (const auto& j : done_audit) {
    const auto e = audit_entry_from_json(j);
    if (e.terminal && e.source) done.insert(pair_key(e.fact_id, *e.source));
  }

  std::vector<const BundleEntry*> todo;
  for (const auto& e : entries) {
    if (!config.source_enabled(e.source)) continue;
    if (!done.contains(pair_key(e.fact_id, e.source))) todo.push_back(&e);
  }
  const bool interrupted = options.stop_after && *options.stop_after < todo.size();
  if (interrupted) todo.resize(*options.stop_after);

  {
    std::ofstream records_out(partial_records, std::ios::binary | std::ios::app);
    std::ofstream audit_out(partial_audit, std::ios::binary | std::ios::app);
    std::mutex writer;
    parallel_for(todo.size(), config.max_in_flight, [&](std::size_t i) {
      const auto& e = *todo[i];
      std::vector<EvalRecord> records;
      std::optional<AuditEntry> failure;
      try {
        records = evaluate_entry(*scorer, e, config);
      } catch (const Error& ex) {
        failure = AuditEntry{std::string(kEvaluateStage), e.fact_id, e.source,
                             std::string(error_code_name(ex.code())), ex.what(), true};
      }
      std::lock_guard lock(writer);
      if (failure) {
        audit_out << to_json(*failure).dump() << '\n' << std::flush;
        return;
      }
      // All normalizations of a pair land together, so a resume never sees half a pair.
      std::string block;
      for (const auto& r : records) block += to_json(r).dump() + '\n';
      records_out << block << std::flush;
    });
  }

  if (interrupted) {
    result.complete = false;
    result.records = read_lines(partial_records, true).size();
    return result;
  }

  std::vector<EvalRecord> records;
  for (const auto& j : read_lines(partial_records)) records.push_back(eval_record_from_json(j));
  std::sort(records.begin(), records.end(), canonical_less);
  std::vector<AuditEntry> audit;
  for (const auto& j : read_lines(partial_audit)) audit.push_back(audit_entry_from_json(j));
  std::stable_sort(audit.begin(), audit.end(), audit_less);

  std::vector<json> record_lines;
  for (const auto& r : records) record_lines.push_back(to_json(r));
  std::vector<json> audit_lines;
  for (const auto& e : audit) audit_lines.push_back(to_json(e));
  write_lines(result.dir / "records.jsonl", record_lines);
  write_lines(result.dir / "audit.jsonl", audit_lines);

  RunManifest manifest;
  manifest.config_digest = config.digest;
  manifest.completed_stages = {std::string(kEvaluateStage)};
  manifest.audit_counts = count_audits(audit);
  manifest.inputs = inputs;
  manifest.artifacts = digest_artifacts(result.dir, {"records.jsonl", "audit.jsonl"});
  write_manifest(result.dir, manifest);
  fs::remove(partial_records);
  fs::remove(partial_audit);
  fs::remove(partial_marker);

  result.records = records.size();
  result.terminal_audits = count_terminal(audit);
  return result;
}

// ---------------------------------------------------------------------------
// report

namespace {

std::vector<EvalRecord> with_normalization(const std::vector<EvalRecord>& records, Normalization n) {
  std::vector<EvalRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [n](const EvalRecord& r) { return r.normalization == n; });
  return out;
}

std::string divergence_note(const std::vector<EvalRecord>& sum, const std::vector<EvalRecord>& mean) {
  std::map<std::string, bool> sum_hit;
  for (const auto& r : sum) sum_hit[pair_key(r.fact_id, r.source)] = r.best_correct_rank == 1;
  std::size_t compared = 0;
  std::size_t differing = 0;
  for (const auto& r : mean) {
    const auto it = sum_hit.find(pair_key(r.fact_id, r.source));
    if (it == sum_hit.end()) continue;
    ++compared;
    if (it->second != (r.best_correct_rank == 1)) ++differing;
  }
  std::ostringstream out;
  out << "SUM and MEAN normalization disagree on the R@1 hit for " << differing << " of "
      << compared << " (fact, source) pairs.\n";
  return out.str();
}

}  // namespace

StageResult cmd_report(const RunConfig& config, const fs::path& records_dir) {
  StageResult result;
  result.dir = config.output_dir / "report";
  const auto records = read_records(records_dir);
  if (records.empty()) throw Error(ErrorCode::kEmptyGroup, "record store is empty");
  fs::create_directories(result.dir);

  report::Layout layout;
  for (const auto& l : config.languages) layout.languages.push_back(l.str());
  layout.sources = config.sources;

  std::vector<std::string> artifacts;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(result.dir / name, text);
    artifacts.push_back(name);
  };

  std::string notes;
  for (auto norm : config.normalizations) {
    const auto subset = with_normalization(records, norm);
    if (subset.empty()) continue;
    const std::string suffix =
        norm == config.normalizations.front() ? "" : "_" + std::string(normalization_name(norm));
    auto cells = aggregate(subset, config.n_values);
    emit("main" + suffix + ".md", report::main_table(cells, layout));
    const auto by_relation = aggregate(subset, config.n_values, true);
    cells.insert(cells.end(), by_relation.begin(), by_relation.end());
    emit("cells" + suffix + ".csv", report::cells_csv(cells, config.n_values));
    emit("curves" + suffix + ".csv", report::curves_csv(cells, config.n_values));

    std::vector<report::HistogramRow> histograms;
    for (const auto& l : layout.languages) {
      for (auto s : layout.sources) {
        std::vector<EvalRecord> group;
        std::copy_if(subset.begin(), subset.end(), std::back_inserter(group),
                     [&](const EvalRecord& r) { return r.language == l && r.source == s; });
        if (!group.empty()) histograms.push_back({l, s, rank_histogram(group, config.histogram_buckets)});
      }
    }
    emit("histogram" + suffix + ".csv", report::histogram_csv(histograms));

    try {
      emit("delta" + suffix + ".md",
           report::delta_table(inflection_delta(subset, config.delta_sign), layout));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoEligibleRecords) throw;
      emit("delta" + suffix + ".md",
           "No records carry exactly one inflected and one non-inflected correct form.\n");
    }

    if (std::any_of(subset.begin(), subset.end(), [](const auto& r) { return r.qe_score.has_value(); })) {
      auto rows = qe_delta_correlation(subset);
      std::string text = report::qe_table(rows, {layout.languages,
                                                 [&] {
                                                   std::vector<VerbalizationSource> v;
                                                   for (auto s : layout.sources) {
                                                     if (s != VerbalizationSource::kTemplate) v.push_back(s);
                                                   }
                                                   return v;
                                                 }(),
                                                 layout.labels});
      for (const auto& r : rows) {
        if (!r.note.empty()) {
          text += "\n" + r.language + " " + layout.labels(r.source) + ": " + r.note;
        }
      }
      emit("qe" + suffix + ".md", text.back() == '\n' ? text : text + "\n");
    } else {
      emit("qe" + suffix + ".md", "QE section omitted: no record carries a QE score.\n");
    }

    if (!config.gender_markers.empty()) {
      const auto patterns = load_gender_patterns(config.gender_markers);
      std::vector<GenderProbe> probes;
      for (const auto& r : subset) {
        if (!is_female_subject(r)) continue;
        const auto lang = patterns.find(r.language);
        if (lang == patterns.end() || !lang->second.contains(r.relation_id)) continue;
        probes.push_back({r.language, r.relation_id, r.source, r.prompt});
      }
      if (probes.empty()) {
        emit("gender" + suffix + ".md", "Gender section omitted: no female subjects on patterned relations.\n");
      } else {
        std::vector<report::GenderCell> cells_f;
        for (const auto& rate : feminine_form_rate(probes, patterns)) {
          report::GenderCell cell{rate.language, rate.source, rate.percentage, std::nullopt};
          std::vector<EvalRecord> group;
          for (const auto& r : subset) {
            if (r.language != rate.language || r.source != rate.source) continue;
            const auto lang = patterns.find(r.language);
            if (lang->second.contains(r.relation_id)) group.push_back(r);
          }
          try {
            cell.r_at_1 = subset_metrics(group, is_female_subject, {1}).r_at_n.at(1);
          } catch (const Error&) {
          }
          cells_f.push_back(cell);
        }
        emit("gender" + suffix + ".md", report::gender_table(cells_f, layout));
      }
    }
  }
  if (config.normalizations.size() > 1) {
    notes += divergence_note(with_normalization(records, Normalization::kSum),
                             with_normalization(records, Normalization::kMean));
  }
  if (!notes.empty()) emit("notes.md", notes);

  RunManifest manifest;
  manifest.config_digest = config.digest;
  manifest.completed_stages = {std::string(kReportStage)};
  manifest.inputs = {{"records", sha256_file(records_dir / "records.jsonl")}};
  manifest.artifacts = digest_artifacts(result.dir, artifacts);
  write_manifest(result.dir, manifest);
  result.records = records.size();
  return result;
}

}  // namespace fluentprobe
