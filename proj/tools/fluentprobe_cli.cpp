// Command-line front end: build-dataset, evaluate, report.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fluentprobe/error.hpp"
#include "fluentprobe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fluentprobe;

namespace {

struct CommonOptions {
  std::string config;
  std::string output;
  bool replay = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "Run configuration (JSON, version 1)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--output", opts.output, "Override the configured output directory");
  cmd->add_flag("--replay", opts.replay, "Serve every text client from its fixture file");
}

RunConfig load(const CommonOptions& opts) {
  auto config = load_run_config(opts.config);
  if (!opts.output.empty()) config.output_dir = fs::absolute(opts.output);
  if (opts.replay) force_replay(config);
  return config;
}

void summarize(std::string_view stage, const StageResult& r) {
  std::cerr << stage << ": " << (r.reused ? "reused " : "") << r.dir.string() << " ("
            << r.records << " written, " << r.terminal_audits << " skipped";
  if (r.client_calls) std::cerr << ", " << r.client_calls << " client calls";
  std::cerr << ")" << (r.complete ? "" : " incomplete") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual factual-knowledge probing"};
  app.require_subcommand(1);

  CommonOptions build_opts;
  auto* build = app.add_subcommand("build-dataset", "Verbalize, split and build candidate sets");
  add_common(build, build_opts);

  CommonOptions eval_opts;
  std::string bundle;
  std::optional<std::size_t> stop_after;
  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset bundle");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--bundle", bundle, "Bundle directory from build-dataset")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--stop-after", stop_after, "Stop after scoring this many pairs");

  CommonOptions report_opts;
  std::string records;
  auto* report = app.add_subcommand("report", "Render tables from a record store");
  add_common(report, report_opts);
  report->add_option("--records", records, "Record directory from evaluate")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      summarize("build-dataset", cmd_build_dataset(load(build_opts)));
    } else if (*evaluate) {
      const auto r = cmd_evaluate(load(eval_opts), bundle, EvaluateOptions{stop_after});
      summarize("evaluate", r);
      if (!r.complete) return 3;
    } else if (*report) {
      summarize("report", cmd_report(load(report_opts), records));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
