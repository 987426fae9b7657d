#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <variant>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentprobe/candidates.hpp"
#include "fluentprobe/client.hpp"
#include "fluentprobe/corpus.hpp"
#include "fluentprobe/metrics.hpp"
#include "fluentprobe/score.hpp"
#include "fluentprobe/split.hpp"
#include "fluentprobe/verbalization.hpp"

namespace fluentprobe {

inline constexpr int kRunConfigVersion = 1;

enum class ClientMode { kReplay, kRecord, kLive };

struct ClientConfig {
  ClientMode mode = ClientMode::kReplay;
  std::filesystem::path fixtures;
  std::string endpoint;
  std::string api_key_env;  // name of the variable holding the key
  std::string model;        // client id recorded in every request
};

enum class ScorerKind { kSubprocess, kOracle, kAdversarial };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::kSubprocess;
  std::vector<std::string> command;
};

struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  CorpusPaths corpus;
  std::vector<LanguageCode> languages;
  std::size_t min_unique_objects = kDefaultMinUniqueObjects;
  std::set<std::string> exclude_relations;
  std::vector<VerbalizationSource> sources{kAllSources.begin(), kAllSources.end()};
  // Sources whose object forms join the correct pool; defaults to `sources`.
  // Pinning it keeps the other rows unchanged when a row is switched off.
  std::vector<VerbalizationSource> mining_sources{kAllSources.begin(), kAllSources.end()};

  std::optional<ClientConfig> mt;
  std::optional<ClientConfig> llm;
  std::optional<ClientConfig> qe;
  std::filesystem::path exemplar_dir;
  std::size_t exemplar_count = 20;
  double llm_temperature = 0.0;
  std::map<std::string, std::string> language_names;

  ScorerConfig scorer;
  std::filesystem::path cache_dir;
  MatchConfig match;
  std::size_t distractor_count = kDefaultDistractorCount;
  std::string salt = "fluentprobe";
  std::vector<int> n_values = kDefaultNValues;
  std::vector<Normalization> normalizations{Normalization::kSum};
  bool include_aliases = false;
  bool include_english = false;
  DeltaSign delta_sign = DeltaSign::kCaption;
  std::set<std::string> no_space_languages{"ja", "zh"};
  std::filesystem::path gender_markers;
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
  int histogram_buckets = 50;
  std::filesystem::path output_dir;

  // SHA-256 of the canonical config document, excluding output_dir and
  // cache_dir, which never change results.
  std::string digest;

  bool source_enabled(VerbalizationSource s) const;
  bool language_enabled(const std::string& code) const;
};

RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Forces every configured text client into replay mode.
void force_replay(RunConfig& config);

// One line of the per-run audit trail. Terminal entries mean the (fact,
// source) pair produced no record.
struct AuditEntry {
  std::string stage;
  std::string fact_id;
  std::optional<VerbalizationSource> source;
  std::string kind;
  std::string detail;
  bool terminal = false;

  bool operator==(const AuditEntry&) const = default;
};

nlohmann::json to_json(const AuditEntry& e);
AuditEntry audit_entry_from_json(const nlohmann::json& j);

// Everything evaluation needs for one (fact, source) pair.
struct BundleEntry {
  std::string fact_id;
  VerbalizationSource source = VerbalizationSource::kTemplate;
  std::string language;
  std::string relation_id;
  std::optional<std::string> subject_gender;
  std::string sentence;
  CandidateSet candidates;
  std::map<std::string, FormTag> form_tags;  // only for inflection-eligible facts
  std::optional<double> qe_score;

  bool operator==(const BundleEntry&) const = default;
};

nlohmann::json to_json(const BundleEntry& e);
BundleEntry bundle_entry_from_json(const nlohmann::json& j);

// Per-directory manifest: config digest, completed stages, audit counts and
// the digest of every artifact file.
struct RunManifest {
  std::string config_digest;
  std::set<std::string> completed_stages;
  std::map<std::string, std::size_t> audit_counts;  // kind -> count
  std::map<std::string, std::string> artifacts;     // file name -> sha256
  std::map<std::string, std::string> inputs;        // upstream artifact -> sha256

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  bool operator==(const RunManifest&) const = default;
};

inline constexpr std::string_view kManifestFile = "manifest.json";

RunManifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

// Client and scorer factories; tests inject their own.
struct Backends {
  std::function<std::unique_ptr<TextClient>(VerbalizationSource)> text_client;
  std::unique_ptr<TextClient> qe_client;
  std::function<std::unique_ptr<ScorerBackend>(const std::vector<BundleEntry>&)> scorer;
};

Backends default_backends(const RunConfig& config);

struct StageResult {
  std::filesystem::path dir;
  bool reused = false;
  bool complete = true;
  std::size_t records = 0;  // bundle entries or eval records written
  std::size_t terminal_audits = 0;
  std::size_t client_calls = 0;
};

// Verbalize, split and assemble candidate sets into <output>/bundle.
StageResult cmd_build_dataset(const RunConfig& config, Backends& backends);
StageResult cmd_build_dataset(const RunConfig& config);

struct EvaluateOptions {
  std::optional<std::size_t> stop_after;  // simulate an interruption
};

// Score every bundle entry into <output>/records, resuming from a partial run.
StageResult cmd_evaluate(const RunConfig& config, const std::filesystem::path& bundle,
                         Backends& backends, const EvaluateOptions& options = {});
StageResult cmd_evaluate(const RunConfig& config, const std::filesystem::path& bundle,
                         const EvaluateOptions& options = {});

// Render tables and CSV exports into <output>/report.
StageResult cmd_report(const RunConfig& config, const std::filesystem::path& records);

std::vector<BundleEntry> read_bundle(const std::filesystem::path& bundle);
std::vector<EvalRecord> read_records(const std::filesystem::path& records);
std::vector<AuditEntry> read_audit(const std::filesystem::path& file);

// Runs fn(i) for i in [0, count) on at most max_in_flight threads.
void parallel_for(std::size_t count, std::size_t max_in_flight,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fluentprobe
