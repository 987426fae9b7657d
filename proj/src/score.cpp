#include "fluentprobe/score.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

extern char** environ;

namespace fluentprobe {

using nlohmann::json;

ContinuationScore ScorerBackend::score(const std::string& prompt, const std::string& continuation) {
  auto out = score_batch(prompt, {continuation});
  if (out.size() != 1) throw Error(ErrorCode::kBackendError, "backend returned a wrong batch size");
  return out.front();
}

std::string_view normalization_name(Normalization n) {
  return n == Normalization::kSum ? "SUM" : "MEAN";
}

Normalization parse_normalization(std::string_view name) {
  if (name == "SUM") return Normalization::kSum;
  if (name == "MEAN") return Normalization::kMean;
  throw Error(ErrorCode::kInvalidConfig, "unknown normalization '" + std::string(name) + "'");
}

std::string continuation_for(std::string_view prompt, std::string_view form, bool no_space) {
  if (no_space || prompt.empty() || text::ends_with_space(prompt)) return std::string(form);
  return " " + std::string(form);
}

std::vector<ScoredCandidate> score_candidates(ScorerBackend& scorer, const CandidateSet& set,
                                              Normalization normalization, bool no_space) {
  if (set.size() == 0) throw Error(ErrorCode::kBackendError, "empty candidate set");
  std::vector<ScoredCandidate> out;
  out.reserve(set.size());
  for (const auto& f : set.correct_forms) out.push_back({f, "", 0.0, 1});
  for (const auto& d : set.distractors) out.push_back({d.form, d.entity_id, 0.0, 1});

  std::vector<std::string> continuations;
  continuations.reserve(out.size());
  for (const auto& c : out) continuations.push_back(continuation_for(set.prompt, c.form, no_space));
  const auto scores = scorer.score_batch(set.prompt, continuations);
  if (scores.size() != out.size()) {
    throw Error(ErrorCode::kBackendError, "backend returned " + std::to_string(scores.size()) +
                                              " scores for " + std::to_string(out.size()));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& s = scores[i];
    if (s.token_count < 1) throw Error(ErrorCode::kBackendError, "token count below 1");
    out[i].token_count = s.token_count;
    out[i].score = normalization == Normalization::kSum ? s.log_prob : s.log_prob / s.token_count;
  }
  return out;
}

RankedResult rank_candidates(std::string fact_id, const std::vector<ScoredCandidate>& scored,
                             const std::vector<std::string>& correct_forms,
                             const std::vector<int>& n_values) {
  RankedResult result;
  result.fact_id = std::move(fact_id);
  result.candidates.reserve(scored.size());
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) {
      throw Error(ErrorCode::kNonFiniteScore, "candidate '" + s.form + "' has a non-finite score");
    }
    const bool correct =
        std::find(correct_forms.begin(), correct_forms.end(), s.form) != correct_forms.end();
    result.candidates.push_back({s.form, s.entity_id, correct, s.score, 0});
  }
  std::sort(result.candidates.begin(), result.candidates.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.form != b.form) return a.form < b.form;
              return a.entity_id < b.entity_id;
            });
  for (std::size_t i = 0; i < result.candidates.size(); ++i) {
    auto& c = result.candidates[i];
    c.rank = static_cast<int>(i + 1);
    if (c.correct && result.best_correct_rank == 0) {
      result.best_correct_rank = c.rank;
      result.best_correct_form = c.form;
    }
  }
  if (result.best_correct_rank == 0) {
    throw Error(ErrorCode::kFormNotPresent, "no correct form among the candidates");
  }
  for (int n : n_values) result.hits[n] = result.best_correct_rank <= n;
  return result;
}

int rank_of_form(const RankedResult& result, std::string_view form) {
  for (const auto& c : result.candidates) {
    if (c.form == form) return c.rank;
  }
  throw Error(ErrorCode::kFormNotPresent, std::string(form));
}

void TableScorer::set(const std::string& prompt, const std::string& continuation,
                      ContinuationScore score) {
  table_[{prompt, continuation}] = score;
}

std::vector<ContinuationScore> TableScorer::score_batch(const std::string& prompt,
                                                        const std::vector<std::string>& continuations) {
  std::vector<ContinuationScore> out;
  for (const auto& c : continuations) {
    auto it = table_.find({prompt, c});
    if (it == table_.end()) {
      throw Error(ErrorCode::kBackendError, "no table score for '" + prompt + "' + '" + c + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

std::vector<ContinuationScore> FunctionScorer::score_batch(
    const std::string& prompt, const std::vector<std::string>& continuations) {
  std::vector<ContinuationScore> out;
  out.reserve(continuations.size());
  for (const auto& c : continuations) out.push_back(fn_(prompt, c));
  return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::u32string x, y;
  for (const auto& cp : text::decode(a)) x.push_back(cp.value);
  for (const auto& cp : text::decode(b)) y.push_back(cp.value);
  std::vector<std::size_t> row(y.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const auto up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[y.size()];
}

void OracleScorer::add(const std::string& prompt, const std::vector<std::string>& correct_forms) {
  truth_[prompt].insert(correct_forms.begin(), correct_forms.end());
}

std::vector<ContinuationScore> OracleScorer::score_batch(
    const std::string& prompt, const std::vector<std::string>& continuations) {
  auto it = truth_.find(prompt);
  if (it == truth_.end()) throw Error(ErrorCode::kBackendError, "oracle has no truth for prompt");
  const auto& truth = it->second;
  std::vector<ContinuationScore> out;
  for (const auto& c : continuations) {
    const std::string form(text::trim(c));
    const int tokens = std::max<int>(1, static_cast<int>(text::words(form).size()));
    if (truth.contains(form)) {
      out.push_back({mode_ == Mode::kPerfect ? 0.0 : -1e6, tokens});
      continue;
    }
    std::size_t nearest = SIZE_MAX;
    for (const auto& t : truth) nearest = std::min(nearest, edit_distance(form, t));
    out.push_back({-1.0 - static_cast<double>(nearest), tokens});
  }
  return out;
}

std::string encode_score_request(const std::string& prompt,
                                 const std::vector<std::string>& continuations) {
  return json{{"protocol", kScoreProtocol}, {"prompt", prompt}, {"continuations", continuations}}
      .dump();
}

std::vector<ContinuationScore> decode_score_response(std::string_view line, std::size_t expected) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBackendError, std::string("unparseable score response: ") + e.what());
  }
  if (!j.is_object() || j.value("protocol", "") != kScoreProtocol) {
    throw Error(ErrorCode::kBackendError, "score response lacks protocol tag");
  }
  if (auto err = j.find("error"); err != j.end()) {
    throw Error(ErrorCode::kBackendError, "backend: " + err->dump());
  }
  const auto results = j.find("results");
  if (results == j.end() || !results->is_array() || results->size() != expected) {
    throw Error(ErrorCode::kBackendError, "score response has a wrong result count");
  }
  std::vector<ContinuationScore> out;
  for (const auto& r : *results) {
    if (!r.contains("logprob") || !r["logprob"].is_number() || !r.contains("tokens") ||
        !r["tokens"].is_number_integer()) {
      throw Error(ErrorCode::kBackendError, "malformed score entry " + r.dump());
    }
    out.push_back({r["logprob"].get<double>(), r["tokens"].get<int>()});
  }
  return out;
}

SubprocessScorer::SubprocessScorer(std::vector<std::string> argv) {
  if (argv.empty()) throw Error(ErrorCode::kInvalidConfig, "scorer command is empty");
  std::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    throw Error(ErrorCode::kBackendError, std::string("pipe: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
  std::vector<char*> args;
  for (auto& a : argv) args.push_back(a.data());
  args.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    throw Error(ErrorCode::kBackendError, "cannot start scorer '" + argv[0] + "': " + std::strerror(rc));
  }
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

SubprocessScorer::~SubprocessScorer() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

std::string SubprocessScorer::round_trip(const std::string& line) {
  std::lock_guard lock(mu_);
  std::string payload = line + "\n";
  std::size_t written = 0;
  while (written < payload.size()) {
    const auto n = write(to_child_, payload.data() + written, payload.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kBackendError, std::string("scorer write: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      auto reply = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return reply;
    }
    char chunk[4096];
    const auto n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::kBackendError, "scorer closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::vector<ContinuationScore> SubprocessScorer::score_batch(
    const std::string& prompt, const std::vector<std::string>& continuations) {
  return decode_score_response(round_trip(encode_score_request(prompt, continuations)),
                               continuations.size());
}

void SubprocessScorer::ping() {
  const auto reply = round_trip(json{{"protocol", kScoreProtocol}, {"ping", true}}.dump());
  try {
    const auto j = json::parse(reply);
    if (j.value("pong", false)) return;
  } catch (const json::parse_error&) {
  }
  throw Error(ErrorCode::kBackendError, "scorer did not answer ping");
}

}  // namespace fluentprobe
