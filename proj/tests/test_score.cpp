#include <algorithm>
#include <random>

#include <doctest.h>

#include "fluentprobe/error.hpp"
#include "fluentprobe/score.hpp"
#include "test_support.hpp"

using namespace fluentprobe;

namespace {

std::vector<ScoredCandidate> scored(std::initializer_list<std::pair<const char*, double>> items) {
  std::vector<ScoredCandidate> out;
  for (const auto& [form, score] : items) out.push_back({form, form, score, 1});
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

// Brute force: one plus the number of candidates that beat c under the
// documented order (higher score, then smaller form, then smaller id).
int brute_rank(const std::vector<ScoredCandidate>& all, const ScoredCandidate& c) {
  int beaten_by = 0;
  for (const auto& o : all) {
    if (o.score > c.score || (o.score == c.score && o.form < c.form) ||
        (o.score == c.score && o.form == c.form && o.entity_id < c.entity_id)) {
      ++beaten_by;
    }
  }
  return beaten_by + 1;
}

CandidateSet praha_set() {
  CandidateSet set;
  set.fact_id = "f";
  set.prompt = "Karel se narodil v";
  set.correct_forms = {"Praha", "Praze"};
  set.distractors = {{"a", "Brno"}, {"b", "Plzeň"}, {"c", "Nové Město"}};
  return set;
}

}  // namespace

TEST_CASE("rank_candidates examples") {
  const auto r = rank_candidates("f", scored({{"A", -1}, {"B", -2}, {"C", -3}}), {"B"});
  CHECK(r.candidates[0].form == "A");
  CHECK(r.best_correct_rank == 2);
  CHECK(r.best_correct_form == "B");
  CHECK_FALSE(r.hits.at(1));
  CHECK(r.hits.at(2));
  CHECK(r.hits.at(5));
  CHECK(rank_of_form(r, "C") == 3);
  CHECK(code_of([&] { rank_of_form(r, "D"); }) == ErrorCode::kFormNotPresent);

  const auto tie = rank_candidates("f", scored({{"B", -1}, {"A", -1}}), {"B"});
  CHECK(rank_of_form(tie, "A") == 1);
  CHECK(rank_of_form(tie, "B") == 2);

  CHECK(code_of([] { rank_candidates("f", scored({{"A", std::nan("")}}), {"A"}); }) ==
        ErrorCode::kNonFiniteScore);
  CHECK(code_of([] { rank_candidates("f", scored({{"A", 0}}), {"Z"}); }) ==
        ErrorCode::kFormNotPresent);
}

TEST_CASE("inflected and uninflected forms get distinct ranks") {
  TableScorer table;
  const auto set = praha_set();
  table.set(set.prompt, " Praha", {-4.0, 1});
  table.set(set.prompt, " Praze", {-1.5, 1});
  table.set(set.prompt, " Brno", {-2.0, 1});
  table.set(set.prompt, " Plzeň", {-3.0, 1});
  table.set(set.prompt, " Nové Město", {-5.0, 2});
  const auto s = score_candidates(table, set, Normalization::kSum);
  REQUIRE(s.size() == 5);
  CHECK(s[0].form == "Praha");
  CHECK(s[0].score == -4.0);
  CHECK(s[4].score == -5.0);
  const auto r = rank_candidates("f", s, set.correct_forms);
  CHECK(rank_of_form(r, "Praze") == 1);
  CHECK(rank_of_form(r, "Praha") == 4);

  const auto mean = score_candidates(table, set, Normalization::kMean);
  CHECK(mean[4].score == -2.5);
  CHECK(mean[0].score == s[0].score);  // one token: MEAN equals SUM
}

TEST_CASE("ranking agrees with the brute-force oracle (property)") {
  std::mt19937 rng(17);
  std::uniform_int_distribution<int> coarse(-6, 0);  // coarse scores force ties
  for (int round = 0; round < 500; ++round) {
    std::vector<ScoredCandidate> all;
    const int n = 2 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) {
      const std::string form(1, static_cast<char>('A' + rng() % 6));
      all.push_back({form, "e" + std::to_string(i), static_cast<double>(coarse(rng)), 1});
    }
    const std::vector<std::string> correct{all[rng() % all.size()].form};
    const auto r = rank_candidates("f", all, correct);

    for (const auto& c : all) {
      const auto it = std::find_if(r.candidates.begin(), r.candidates.end(), [&](const auto& x) {
        return x.form == c.form && x.entity_id == c.entity_id;
      });
      REQUIRE(it != r.candidates.end());
      CHECK(it->rank == brute_rank(all, c));
    }

    // Positive affine transforms and input permutations leave ranks alone.
    auto moved = all;
    const double a = 0.5 + (rng() % 7), b = static_cast<double>(rng() % 11) - 5;
    for (auto& c : moved) c.score = a * c.score + b;
    std::shuffle(moved.begin(), moved.end(), rng);
    const auto r2 = rank_candidates("f", moved, correct);
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      CHECK(r2.candidates[i].form == r.candidates[i].form);
      CHECK(r2.candidates[i].entity_id == r.candidates[i].entity_id);
      CHECK(r2.candidates[i].rank == r.candidates[i].rank);
    }

    bool seen = false;
    for (const auto& [n_value, hit] : r.hits) {
      CHECK((!seen || hit));
      seen = seen || hit;
    }
  }
}

TEST_CASE("oracle scorers") {
  const auto set = praha_set();
  OracleScorer perfect(OracleScorer::Mode::kPerfect);
  perfect.add(set.prompt, set.correct_forms);
  const auto r = rank_candidates("f", score_candidates(perfect, set, Normalization::kSum),
                                 set.correct_forms);
  CHECK(r.best_correct_rank == 1);
  CHECK(r.candidates[0].score == 0.0);
  CHECK(r.candidates[2].score < 0.0);

  OracleScorer adversarial(OracleScorer::Mode::kAdversarial);
  adversarial.add(set.prompt, set.correct_forms);
  const auto a = rank_candidates("f", score_candidates(adversarial, set, Normalization::kSum),
                                 set.correct_forms);
  CHECK(a.best_correct_rank == 4);

  CHECK(edit_distance("Praha", "Praze") == 2);
  CHECK(edit_distance("", "abc") == 3);
}

TEST_CASE("continuation joining rule") {
  CHECK(continuation_for("Karel se narodil v", "Praze", false) == " Praze");
  CHECK(continuation_for("Karel se narodil v ", "Praze", false) == "Praze");
  CHECK(continuation_for("他出生于", "北京", true) == "北京");
}

TEST_CASE("subprocess scorer speaks the line protocol") {
  const auto script = (fptest::data_dir() / "fixture_scorer.py").string();
  SubprocessScorer scorer({"python3", script});
  scorer.ping();
  const auto s = score_candidates(scorer, praha_set(), Normalization::kSum);
  // Values frozen from the fixture script itself.
  CHECK(s[0].score == doctest::Approx(-15.222));
  CHECK(s[1].score == doctest::Approx(-11.24));
  CHECK(s[4].score == doctest::Approx(-11.604));
  CHECK(s[4].token_count == 2);

  // Batch composition never changes a score.
  CHECK(scorer.score("Karel se narodil v", " Praze").log_prob == doctest::Approx(-11.24));

  SubprocessScorer failing({"python3", script, "--fail"});
  failing.ping();
  CHECK(code_of([&] { failing.score("p", " x"); }) == ErrorCode::kBackendError);

  CHECK(code_of([] {
          SubprocessScorer missing({"/nonexistent/scorer"});
          missing.ping();
        }) == ErrorCode::kBackendError);
}

TEST_CASE("protocol decoding") {
  CHECK(encode_score_request("p", {" a"}) ==
        R"({"continuations":[" a"],"prompt":"p","protocol":"fluentprobe-score/1"})");
  const auto ok = decode_score_response(
      R"({"protocol":"fluentprobe-score/1","results":[{"logprob":-1.5,"tokens":2}]})", 1);
  CHECK(ok[0].log_prob == -1.5);
  CHECK(ok[0].token_count == 2);
  CHECK(code_of([] { decode_score_response(R"({"results":[]})", 0); }) == ErrorCode::kBackendError);
  CHECK(code_of([] {
          decode_score_response(R"({"protocol":"fluentprobe-score/1","results":[]})", 1);
        }) == ErrorCode::kBackendError);
}
