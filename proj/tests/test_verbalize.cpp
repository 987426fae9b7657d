#include <sstream>

#include <doctest.h>

#include "fluentprobe/error.hpp"
#include "fluentprobe/verbalize.hpp"
#include "test_support.hpp"

using namespace fluentprobe;

namespace {

const fptest::fs::path kShowcase = fptest::data_dir() / "czech_showcase";

Corpus czech_showcase() {
  return load_corpus(
      {kShowcase / "entities.jsonl", kShowcase / "relations.jsonl", kShowcase / "facts.jsonl"});
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

RetryPolicy fast_retry() {
  RetryPolicy p;
  p.base_delay = std::chrono::milliseconds(1);
  return p;
}

}  // namespace

TEST_CASE("fill_template") {
  CHECK(fill_template("[X] was born in [Y] .", "Cunigunde of Luxembourg", "Luxembourg") ==
        "Cunigunde of Luxembourg was born in Luxembourg .");
  CHECK(fill_template("[X] is [Y]", "a", "a") == "a is a");
  CHECK(fill_template("[Y] of [X]", "B", "A") == "A of B");
  CHECK(code_of([] { fill_template("[X] only", "a", "b"); }) == ErrorCode::kMissingPlaceholder);

  // Length identity over a few shapes.
  for (const std::string t : {"[X] [Y]", "před [X] a [Y].", "[Y]—[X] !"}) {
    for (const std::string x : {"", "ab", "Прага"}) {
      CHECK(fill_template(t, x, "yy").size() == t.size() - 6 + x.size() + 2);
    }
  }
}

TEST_CASE("template verbalization") {
  const auto c = czech_showcase();
  const auto v = make_template_verbalization(c.facts().at("A-6"), c);
  CHECK(v.source == VerbalizationSource::kTemplate);
  CHECK(v.sentence == "Theodoros Studijský se narodil v Konstantinopol.");
  CHECK(v.provenance.template_text == "[X] se narodil v [Y].");

  SUBCASE("ru fixture sentence is byte-exact") {
    const auto toy = fptest::data_dir() / "toy";
    const auto t = load_corpus({toy / "entities.jsonl", toy / "relations.jsonl", toy / "facts.jsonl"});
    const auto ru = make_template_verbalization(t.facts().at("F-ru-P19-1"), t);
    CHECK(ru.sentence == fptest::read_file(toy / "expected_ru_P19_1.txt"));
    CHECK(ru.sentence.find('[') == std::string::npos);
  }
  SUBCASE("missing label and template") {
    Corpus broken({{"a", {{"cs", "A"}}, {}}, {"b", {{"hr", "B"}}, {}}},
                  {{"P1", "[X] r [Y] .", {{"cs", "[X] r [Y]."}}, {{"cs", true}}, false}},
                  {{"f", "a", "P1", "b", LanguageCode("cs"), std::nullopt},
                   {"g", "b", "P1", "a", LanguageCode("hr"), std::nullopt}});
    CHECK(code_of([&] { make_template_verbalization(broken.facts().at("f"), broken); }) ==
          ErrorCode::kMissingLabel);
    CHECK(code_of([&] { make_template_verbalization(broken.facts().at("g"), broken); }) ==
          ErrorCode::kMissingTemplate);
  }
}

TEST_CASE("MT verbalization through replay fixtures and cache") {
  const auto c = czech_showcase();
  const auto& fact = c.facts().at("A-2");
  CHECK(english_sentence(fact, c) == "Karel Schwarzenberg was born in Prague .");

  ReplayClient client(kShowcase / "mt_fixtures.jsonl");
  TranslationCache cache;
  const auto v = make_mt_verbalization(fact, c, client, cache);
  CHECK(v.source == VerbalizationSource::kMt);
  CHECK(v.sentence == "Karel Schwarzenberg se narodil v Praze.");
  REQUIRE(v.provenance.request);
  CHECK(v.provenance.request->text == "Karel Schwarzenberg was born in Prague .");
  CHECK(v.provenance.cache_key == v.provenance.request->digest());
  CHECK(client.calls() == 1);

  const auto again = make_mt_verbalization(fact, c, client, cache);
  CHECK(again == v);
  CHECK(client.calls() == 1);

  SUBCASE("whitespace-only response") {
    FunctionClient blank([](const TextRequest&) { return std::string(" \n\t "); });
    TranslationCache fresh;
    CHECK(code_of([&] { make_mt_verbalization(fact, c, blank, fresh); }) ==
          ErrorCode::kEmptyTranslation);
  }
  SUBCASE("transport failures are retried, then surface") {
    int failures = 2;
    FunctionClient flaky([&](const TextRequest&) -> std::string {
      if (failures-- > 0) throw Error(ErrorCode::kClientError, "boom");
      return "Karel Schwarzenberg se narodil v Praze.";
    });
    TranslationCache fresh;
    MtSettings settings;
    settings.retry = fast_retry();
    CHECK(make_mt_verbalization(fact, c, flaky, fresh, settings).sentence ==
          "Karel Schwarzenberg se narodil v Praze.");
    CHECK(flaky.calls() == 3);

    FunctionClient dead([](const TextRequest&) -> std::string {
      throw Error(ErrorCode::kClientError, "down");
    });
    TranslationCache other;
    CHECK(code_of([&] { make_mt_verbalization(fact, c, dead, other, settings); }) ==
          ErrorCode::kClientError);
    CHECK(dead.calls() == 3);
  }
  SUBCASE("disk cache survives a new cache object") {
    fptest::TempDir tmp;
    {
      TranslationCache disk(tmp.path());
      make_mt_verbalization(fact, c, client, disk);
    }
    FunctionClient never([](const TextRequest&) -> std::string {
      throw Error(ErrorCode::kClientError, "should not be called");
    });
    TranslationCache disk(tmp.path());
    CHECK(make_mt_verbalization(fact, c, never, disk).sentence ==
          "Karel Schwarzenberg se narodil v Praze.");
    CHECK(never.calls() == 0);
  }
}

TEST_CASE("distinct requests never share a cache key") {
  TextRequest a{"m", "en", "cs", "ab", {}};
  TextRequest b{"m", "en", "cs", "a", {{"b", ""}}};
  TextRequest d{"m", "en", "csa", "b", {}};
  TextRequest e{"m", "enc", "s", "ab", {}};
  CHECK(a.digest() != b.digest());
  CHECK(a.digest() != d.digest());
  CHECK(a.digest() != e.digest());
  CHECK(a.digest() == TextRequest(a).digest());
}

TEST_CASE("few-shot prompt matches the frozen goldens") {
  const auto c = czech_showcase();
  const auto exemplars = load_exemplars(kShowcase / "P19.cs.txt");
  REQUIRE(exemplars.size() == 5);
  const auto& fact = c.facts().at("A-6");
  const auto& rel = c.relation("P19");

  CHECK(build_fewshot_prompt(rel, LanguageCode("cs"), exemplars, fact, c, language_name("cs")) ==
        fptest::read_file(fptest::golden_dir() / "fewshot_cs_P19.txt"));
  CHECK(build_fewshot_prompt(rel, LanguageCode("cs"), std::span(exemplars).first(1), fact, c,
                             "Czech") ==
        fptest::read_file(fptest::golden_dir() / "fewshot_cs_P19_one.txt"));
  CHECK(code_of([&] {
          build_fewshot_prompt(rel, LanguageCode("cs"), {}, fact, c, "Czech");
        }) == ErrorCode::kNoExemplars);
}

TEST_CASE("exemplar files round-trip") {
  const auto exemplars = load_exemplars(kShowcase / "P19.cs.txt");
  std::ostringstream out;
  write_exemplars(out, exemplars);
  std::istringstream in(out.str());
  CHECK(parse_exemplars(in) == exemplars);

  std::istringstream bad(
      "Source sentence: A was born in B .\nSubject translation: A\nObject translation: Praha\n"
      "Translation: A se narodil v Brně.\n");
  CHECK(code_of([&] { parse_exemplars(bad); }) == ErrorCode::kMalformedRecord);
}

TEST_CASE("LLM verbalization") {
  const auto c = czech_showcase();
  const auto exemplars = load_exemplars(kShowcase / "P19.cs.txt");
  const auto& fact = c.facts().at("A-6");
  const auto golden = fptest::read_file(fptest::golden_dir() / "fewshot_cs_P19.txt");

  std::string seen_prompt;
  FunctionClient llm([&](const TextRequest& r) {
    seen_prompt = r.text;
    return std::string("Translation: Theodoros Studijský se narodil v Konstantinopoli.\nextra");
  });
  TranslationCache cache;
  const auto v = make_llm_verbalization(fact, c, llm, exemplars, cache);
  CHECK(v.source == VerbalizationSource::kLlm);
  CHECK(v.sentence == "Theodoros Studijský se narodil v Konstantinopoli.");
  CHECK_FALSE(v.constraint_violation);
  CHECK(seen_prompt == golden);
  CHECK(make_llm_verbalization(fact, c, llm, exemplars, cache) == v);
  CHECK(llm.calls() == 1);

  FunctionClient drift([](const TextRequest&) {
    return std::string("Theodoros Studijský se narodil v Istanbulu.");
  });
  TranslationCache fresh;
  const auto w = make_llm_verbalization(fact, c, drift, exemplars, fresh);
  CHECK(w.constraint_violation);
  CHECK(w.sentence == "Theodoros Studijský se narodil v Istanbulu.");

  CHECK(parse_completion("\n  \nTranslation:  Ahoj.  \nnext") == "Ahoj.");
  CHECK(parse_completion("Ahoj.") == "Ahoj.");
}
