#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fluentprobe/candidates.hpp"

namespace fluentprobe {

struct ContinuationScore {
  double log_prob = 0.0;  // summed over the continuation's tokens
  int token_count = 1;
};

// Scores continuations of a prompt. Implementations must be deterministic
// and must score each continuation independently of the rest of the batch.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual std::vector<ContinuationScore> score_batch(const std::string& prompt,
                                                     const std::vector<std::string>& continuations) = 0;
  ContinuationScore score(const std::string& prompt, const std::string& continuation);
  // Throws kBackendError when the backend cannot be reached.
  virtual void ping() {}
};

enum class Normalization { kSum, kMean };
std::string_view normalization_name(Normalization n);
Normalization parse_normalization(std::string_view name);

// Continuation text for a form: one joining space unless the prompt already
// ends in whitespace or the language is written without spaces.
std::string continuation_for(std::string_view prompt, std::string_view form, bool no_space);

struct ScoredCandidate {
  std::string form;
  std::string entity_id;  // empty for correct forms
  double score = 0.0;
  int token_count = 1;
};

std::vector<ScoredCandidate> score_candidates(ScorerBackend& scorer, const CandidateSet& set,
                                              Normalization normalization, bool no_space = false);

struct RankedCandidate {
  std::string form;
  std::string entity_id;
  bool correct = false;
  double score = 0.0;
  int rank = 0;
};

inline const std::vector<int> kDefaultNValues{1, 2, 3, 4, 5};

struct RankedResult {
  std::string fact_id;
  std::vector<RankedCandidate> candidates;  // in rank order
  int best_correct_rank = 0;
  std::string best_correct_form;
  std::map<int, bool> hits;
};

// Descending score; ties by ascending byte order of the form, then entity id.
RankedResult rank_candidates(std::string fact_id, const std::vector<ScoredCandidate>& scored,
                             const std::vector<std::string>& correct_forms,
                             const std::vector<int>& n_values = kDefaultNValues);

int rank_of_form(const RankedResult& result, std::string_view form);

// Scores looked up from a table keyed by (prompt, continuation). Unknown pairs
// are a backend error.
class TableScorer : public ScorerBackend {
 public:
  void set(const std::string& prompt, const std::string& continuation, ContinuationScore score);
  std::vector<ContinuationScore> score_batch(const std::string& prompt,
                                             const std::vector<std::string>& continuations) override;

 private:
  std::map<std::pair<std::string, std::string>, ContinuationScore> table_;
};

class FunctionScorer : public ScorerBackend {
 public:
  using Fn = std::function<ContinuationScore(const std::string&, const std::string&)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<ContinuationScore> score_batch(const std::string& prompt,
                                             const std::vector<std::string>& continuations) override;

 private:
  Fn fn_;
};

// Knows the correct forms behind every prompt. In kPerfect mode a correct
// form scores 0 and anything else -(1 + edit distance to the nearest correct
// form); kAdversarial puts every correct form below every distractor.
class OracleScorer : public ScorerBackend {
 public:
  enum class Mode { kPerfect, kAdversarial };
  explicit OracleScorer(Mode mode) : mode_(mode) {}
  void add(const std::string& prompt, const std::vector<std::string>& correct_forms);
  std::vector<ContinuationScore> score_batch(const std::string& prompt,
                                             const std::vector<std::string>& continuations) override;

 private:
  Mode mode_;
  std::map<std::string, std::set<std::string>> truth_;
};

std::size_t edit_distance(std::string_view a, std::string_view b);

// Line protocol spoken with an external inference server over its stdin and
// stdout, one JSON object per line:
//   -> {"protocol":"fluentprobe-score/1","prompt":P,"continuations":[C...]}
//   <- {"protocol":"fluentprobe-score/1","results":[{"logprob":L,"tokens":N}...]}
//   <- {"protocol":"fluentprobe-score/1","error":"..."}
//   -> {"protocol":"fluentprobe-score/1","ping":true}
//   <- {"protocol":"fluentprobe-score/1","pong":true}
inline constexpr std::string_view kScoreProtocol = "fluentprobe-score/1";

std::string encode_score_request(const std::string& prompt,
                                 const std::vector<std::string>& continuations);
std::vector<ContinuationScore> decode_score_response(std::string_view line, std::size_t expected);

class SubprocessScorer : public ScorerBackend {
 public:
  explicit SubprocessScorer(std::vector<std::string> argv);
  ~SubprocessScorer() override;
  SubprocessScorer(const SubprocessScorer&) = delete;
  SubprocessScorer& operator=(const SubprocessScorer&) = delete;

  std::vector<ContinuationScore> score_batch(const std::string& prompt,
                                             const std::vector<std::string>& continuations) override;
  void ping() override;

 private:
  std::string round_trip(const std::string& line);

  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex mu_;
};

}  // namespace fluentprobe
