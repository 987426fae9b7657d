#include <cstdlib>
#include <set>
#include <sstream>

#include <doctest.h>

#include "fluentprobe/error.hpp"
#include "fluentprobe/pipeline.hpp"
#include "test_support.hpp"

using namespace fluentprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig config_from(const json& doc, const fs::path& dir) { return run_config_from_json(doc, dir); }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

struct Run {
  StageResult bundle, records, report;
};

Run full_run(const RunConfig& config) {
  Run r;
  r.bundle = cmd_build_dataset(config);
  r.records = cmd_evaluate(config, r.bundle.dir);
  r.report = cmd_report(config, r.records.dir);
  return r;
}

// Relative path -> content for every file under dir.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = fptest::read_file(e.path());
  }
  return out;
}

std::size_t toy_fact_count() {
  std::istringstream in(fptest::read_file(fptest::data_dir() / "toy" / "facts.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n - 1;  // schema header
}

std::size_t terminal_count(const std::vector<AuditEntry>& audit) {
  return static_cast<std::size_t>(
      std::count_if(audit.begin(), audit.end(), [](const AuditEntry& e) { return e.terminal; }));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("toy build produces at most 90 candidate sets and a full audit") {
  fptest::TempDir tmp;
  const auto config = config_from(fptest::toy_config(tmp / "out"), tmp.path());
  const auto built = cmd_build_dataset(config);
  CHECK_FALSE(built.reused);
  CHECK(built.records <= 90);
  CHECK(built.records > 0);

  const auto entries = read_bundle(built.dir);
  const auto audit = read_audit(built.dir / "audit.jsonl");
  CHECK(entries.size() == built.records);
  CHECK(entries.size() + terminal_count(audit) == toy_fact_count() * 3);

  // Designed cases in the fixture.
  auto has = [&](const std::string& fact, const std::string& kind) {
    return std::any_of(audit.begin(), audit.end(),
                       [&](const AuditEntry& e) { return e.fact_id == fact && e.kind == kind; });
  };
  CHECK(has("F-cs-P36-1", "NOT_SENTENCE_FINAL"));
  CHECK(has("F-ru-P36-5", "NOT_SENTENCE_FINAL"));
  CHECK(has("F-cs-P103-5", "OBJECT_NOT_FOUND"));
  CHECK(has("F-cs-P103-5", "CONSTRAINT_VIOLATION"));

  for (const auto& e : entries) {
    CHECK(e.candidates.size() >= 2);
    CHECK(e.sentence.find(e.candidates.prompt) == 0);
    CHECK(e.qe_score.has_value());
    for (const auto& d : e.candidates.distractors) {
      CHECK(std::find(e.candidates.correct_forms.begin(), e.candidates.correct_forms.end(), d.form) ==
            e.candidates.correct_forms.end());
    }
  }

  const auto manifest = read_manifest(built.dir);
  CHECK(manifest.config_digest == config.digest);
  CHECK(manifest.completed_stages.contains("build-dataset"));
  CHECK(manifest.artifacts.contains("candidates.jsonl"));
}

TEST_CASE("TEMPLATE-only runs never contact a client") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["sources"] = {"TEMPLATE"};
  doc.erase("qe");
  const auto config = config_from(doc, tmp.path());
  Backends backends;
  int created = 0;
  backends.text_client = [&](VerbalizationSource) -> std::unique_ptr<TextClient> {
    ++created;
    return std::make_unique<FunctionClient>([](const TextRequest&) -> std::string {
      throw Error(ErrorCode::kClientError, "no client expected");
    });
  };
  const auto built = cmd_build_dataset(config, backends);
  CHECK(built.client_calls == 0);
  CHECK(created == 0);
  for (const auto& e : read_bundle(built.dir)) CHECK(e.source == VerbalizationSource::kTemplate);
}

TEST_CASE("missing exemplars are fatal before any work") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["llm"]["exemplar_dir"] = (tmp / "nowhere").string();
  const auto config = config_from(doc, tmp.path());
  CHECK(code_of([&] { cmd_build_dataset(config); }) == ErrorCode::kNoExemplars);
  CHECK_FALSE(fs::exists(tmp / "out" / "bundle" / "manifest.json"));
}

TEST_CASE("oracle and adversarial scorers bound the metrics") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["scorer"] = {{"kind", "oracle"}};
  const auto oracle = config_from(doc, tmp.path());
  const auto run = full_run(oracle);
  const auto records = read_records(run.records.dir);
  REQUIRE_FALSE(records.empty());
  for (const auto& r : records) CHECK(r.best_correct_rank == 1);
  for (const auto& cell : aggregate(records, kDefaultNValues)) {
    CHECK(cell.r_at_n.at(1) == 1.0);
    CHECK(cell.mean_rank == 1.0);
  }

  doc["scorer"] = {{"kind", "adversarial"}};
  doc["output_dir"] = (tmp / "adv").string();
  const auto adversarial = config_from(doc, tmp.path());
  const auto adv = full_run(adversarial);
  const auto bundle = read_bundle(adv.bundle.dir);
  std::map<std::pair<std::string, VerbalizationSource>, std::size_t> distractors;
  for (const auto& e : bundle) distractors[{e.fact_id, e.source}] = e.candidates.distractors.size();
  for (const auto& r : read_records(adv.records.dir)) {
    const auto d = distractors.at({r.fact_id, r.source});
    CHECK(r.best_correct_rank == static_cast<int>(d) + 1);
    for (const auto& [n, hit] : r.hits) {
      if (n <= static_cast<int>(d)) CHECK_FALSE(hit);
    }
  }
}

TEST_CASE("records plus terminal audits cover every (fact, source) pair") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["normalization"] = "SUM";
  const auto config = config_from(doc, tmp.path());
  const auto run = full_run(config);
  const auto bundle_audit = read_audit(run.bundle.dir / "audit.jsonl");
  const auto eval_audit = read_audit(run.records.dir / "audit.jsonl");
  CHECK(read_records(run.records.dir).size() + terminal_count(bundle_audit) +
            terminal_count(eval_audit) ==
        toy_fact_count() * 3);

  SUBCASE("a failing scorer turns every pair into an audit entry") {
    doc["scorer"]["command"].push_back("--fail");
    doc["output_dir"] = (tmp / "fail").string();
    const auto failing = config_from(doc, tmp.path());
    const auto built = cmd_build_dataset(failing);
    const auto evaluated = cmd_evaluate(failing, built.dir);
    CHECK(evaluated.records == 0);
    const auto audit = read_audit(evaluated.dir / "audit.jsonl");
    CHECK(terminal_count(audit) == built.records);
    CHECK(audit.at(0).kind == "BACKEND_ERROR");
  }
}

TEST_CASE("unreachable scorer is fatal at start") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["scorer"]["command"] = {"/nonexistent/scorer"};
  const auto config = config_from(doc, tmp.path());
  const auto built = cmd_build_dataset(config);
  CHECK(code_of([&] { cmd_evaluate(config, built.dir); }) == ErrorCode::kBackendError);
}

TEST_CASE("interrupted evaluation resumes to the same record store") {
  fptest::TempDir tmp;
  const auto whole = config_from(fptest::toy_config(tmp / "whole"), tmp.path());
  const auto reference = full_run(whole);

  const auto config = config_from(fptest::toy_config(tmp / "parts"), tmp.path());
  const auto built = cmd_build_dataset(config);
  const auto first = cmd_evaluate(config, built.dir, EvaluateOptions{std::size_t{7}});
  CHECK_FALSE(first.complete);
  CHECK_FALSE(fs::exists(first.dir / "records.jsonl"));

  // A crash mid-write leaves a torn last line behind.
  {
    std::ofstream torn(first.dir / "records.partial.jsonl", std::ios::app | std::ios::binary);
    torn << R"({"fact_id":"F-ru-P19-3","sour)";
  }
  const auto second = cmd_evaluate(config, built.dir, EvaluateOptions{std::size_t{11}});
  CHECK_FALSE(second.complete);
  const auto last = cmd_evaluate(config, built.dir);
  CHECK(last.complete);
  CHECK_FALSE(fs::exists(last.dir / "records.partial.jsonl"));
  CHECK(fptest::read_file(last.dir / "records.jsonl") ==
        fptest::read_file(reference.records.dir / "records.jsonl"));
  CHECK(fptest::read_file(last.dir / "manifest.json") ==
        fptest::read_file(reference.records.dir / "manifest.json"));
}

TEST_CASE("two runs with the same config are byte-identical") {
  fptest::TempDir tmp;
  full_run(config_from(fptest::toy_config(tmp / "a"), tmp.path()));
  full_run(config_from(fptest::toy_config(tmp / "b"), tmp.path()));
  const auto sa = snapshot(tmp / "a");
  const auto sb = snapshot(tmp / "b");
  CHECK(sa.size() >= 10);
  CHECK(sa == sb);

  // Thread count is part of the config digest, but never of the artifacts.
  auto c_doc = fptest::toy_config(tmp / "c");
  c_doc["max_in_flight"] = 1;
  full_run(config_from(c_doc, tmp.path()));
  CHECK(fptest::read_file(tmp / "c" / "records" / "records.jsonl") ==
        sa.at("records/records.jsonl"));
  CHECK(fptest::read_file(tmp / "c" / "report" / "main.md") == sa.at("report/main.md"));
}

TEST_CASE("completed stages are reused and invalidated") {
  fptest::TempDir tmp;
  const auto config = config_from(fptest::toy_config(tmp / "out"), tmp.path());
  const auto first = full_run(config);
  const auto again = full_run(config);
  CHECK(again.bundle.reused);
  CHECK(again.records.reused);
  CHECK(again.bundle.client_calls == 0);

  // Tampering with an artifact invalidates that stage.
  fptest::write_file(first.bundle.dir / "audit.jsonl", "");
  CHECK_FALSE(cmd_build_dataset(config).reused);
  CHECK(cmd_evaluate(config, first.bundle.dir).reused);

  // A different config digest reruns.
  auto doc = fptest::toy_config(tmp / "out");
  doc["distractors"]["salt"] = "other";
  const auto changed = config_from(doc, tmp.path());
  CHECK(changed.digest != config.digest);
  CHECK_FALSE(cmd_build_dataset(changed).reused);
  CHECK_FALSE(cmd_evaluate(changed, first.bundle.dir).reused);
}

TEST_CASE("disabling a source leaves the other rows unchanged") {
  fptest::TempDir tmp;
  auto all_doc = fptest::toy_config(tmp / "all");
  all_doc["mining_sources"] = {"TEMPLATE", "MT", "LLM"};
  auto two_doc = all_doc;
  two_doc["output_dir"] = (tmp / "two").string();
  two_doc["sources"] = {"TEMPLATE", "MT"};
  const auto all = full_run(config_from(all_doc, tmp.path()));
  const auto two = full_run(config_from(two_doc, tmp.path()));

  std::vector<EvalRecord> expected;
  for (const auto& r : read_records(all.records.dir)) {
    if (r.source != VerbalizationSource::kLlm) expected.push_back(r);
  }
  CHECK(read_records(two.records.dir) == expected);

  // Every row of the reduced table appears verbatim in the full one, and no
  // ChatGPT row remains.
  const auto full_table = fptest::read_file(all.report.dir / "main.md");
  std::istringstream reduced(fptest::read_file(two.report.dir / "main.md"));
  std::string line;
  while (std::getline(reduced, line)) CHECK(full_table.find(line) != std::string::npos);
  CHECK(fptest::read_file(two.report.dir / "main.md").find("ChatGPT") == std::string::npos);
}

TEST_CASE("alias expansion never lowers recall") {
  fptest::TempDir tmp;
  auto base_doc = fptest::toy_config(tmp / "base");
  base_doc["normalization"] = "SUM";
  auto wide_doc = base_doc;
  wide_doc["output_dir"] = (tmp / "wide").string();
  wide_doc["include_aliases"] = true;
  wide_doc["include_english"] = true;
  const auto base = full_run(config_from(base_doc, tmp.path()));
  const auto wide = full_run(config_from(wide_doc, tmp.path()));
  const auto b = aggregate(read_records(base.records.dir), kDefaultNValues, true);
  const auto w = aggregate(read_records(wide.records.dir), kDefaultNValues, true);
  REQUIRE(b.size() == w.size());
  bool grew = false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    REQUIRE(b[i].relation == w[i].relation);
    for (int n : kDefaultNValues) {
      CHECK(w[i].r_at_n.at(n) >= b[i].r_at_n.at(n));
      grew = grew || w[i].r_at_n.at(n) > b[i].r_at_n.at(n);
    }
  }
  CHECK(grew);
}

TEST_CASE("report files") {
  fptest::TempDir tmp;
  auto doc = fptest::toy_config(tmp / "out");
  doc["normalization"] = "BOTH";
  const auto run = full_run(config_from(doc, tmp.path()));
  for (const char* f : {"main.md", "main_MEAN.md", "cells.csv", "curves.csv", "histogram.csv",
                        "delta.md", "qe.md", "gender.md", "notes.md", "manifest.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(run.report.dir / f));
  }
  CHECK(fptest::read_file(run.report.dir / "main.md").find("| Template |") != std::string::npos);
  CHECK(fptest::read_file(run.report.dir / "notes.md").find("SUM and MEAN") != std::string::npos);

  doc.erase("qe");
  doc["output_dir"] = (tmp / "noqe").string();
  const auto plain = full_run(config_from(doc, tmp.path()));
  CHECK(fptest::read_file(plain.report.dir / "qe.md").find("QE section omitted") != std::string::npos);
}

TEST_CASE("config validation") {
  fptest::TempDir tmp;
  auto invalid = [&](const std::function<void(json&)>& edit) {
    auto doc = fptest::toy_config(tmp / "out");
    edit(doc);
    return code_of([&] { config_from(doc, tmp.path()); }) == ErrorCode::kInvalidConfig;
  };
  CHECK(invalid([](json& d) { d["version"] = 2; }));
  CHECK(invalid([](json& d) { d.erase("version"); }));
  CHECK(invalid([](json& d) { d["colour"] = "blue"; }));
  CHECK(invalid([](json& d) { d["distractors"]["salt"] = ""; }));
  CHECK(invalid([](json& d) { d["distractors"]["k"] = 0; }));
  CHECK(invalid([](json& d) { d["sources"] = json::array(); }));
  CHECK(invalid([](json& d) { d["languages"] = {"CZ"}; }));
  CHECK(invalid([](json& d) { d["normalization"] = "MAX"; }));
  CHECK(invalid([](json& d) { d.erase("mt"); }));
  CHECK(invalid([](json& d) { d["scorer"] = {{"kind", "subprocess"}}; }));
  CHECK(invalid([](json& d) { d["relation_filter"]["min_unique_objects"] = 1; }));

  // output_dir and cache_dir never change the digest.
  auto a = fptest::toy_config(tmp / "x");
  auto b = fptest::toy_config(tmp / "y");
  b["cache_dir"] = (tmp / "cache").string();
  CHECK(config_from(a, tmp.path()).digest == config_from(b, tmp.path()).digest);

  // Relative paths resolve against the config file's directory.
  const auto path = fptest::write_config(tmp.path(), json{{"version", 1},
                                                          {"corpus",
                                                           {{"entities", "c/e.jsonl"},
                                                            {"relations", "c/r.jsonl"},
                                                            {"facts", "c/f.jsonl"}}},
                                                          {"languages", {"cs"}},
                                                          {"sources", {"TEMPLATE"}},
                                                          {"scorer", {{"kind", "oracle"}}}});
  const auto loaded = load_run_config(path);
  CHECK(loaded.corpus.entities == tmp.path() / "c" / "e.jsonl");
  CHECK(loaded.min_unique_objects == 10);
  CHECK(loaded.distractor_count == 50);
}

TEST_CASE("command line") {
  fptest::TempDir tmp;
  const auto config = fptest::write_config(tmp.path(), fptest::toy_config(tmp / "out"));
  const auto c = config.string();
  const auto out = (tmp / "out").string();
  CHECK(run_cli("build-dataset --config " + c) == 0);
  CHECK(run_cli("evaluate --config " + c + " --bundle " + out + "/bundle --stop-after 3") == 3);
  CHECK(run_cli("evaluate --config " + c + " --bundle " + out + "/bundle") == 0);
  CHECK(run_cli("report --config " + c + " --records " + out + "/records --replay") == 0);
  CHECK(fs::exists(tmp / "out" / "report" / "main.md"));

  fptest::write_file(tmp / "bad.json", "{\"version\": 9}");
  CHECK(run_cli("build-dataset --config " + (tmp / "bad.json").string()) == 2);
  CHECK(run_cli("build-dataset") != 0);
  CHECK(run_cli("frobnicate --config " + c) != 0);
}
