#include "fluentprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

#include "fluentprobe/error.hpp"
#include "fluentprobe/text.hpp"

namespace fluentprobe {

using nlohmann::json;

namespace {

std::string_view tag_name(FormTag tag) {
  return tag == FormTag::kInflected ? "INFLECTED" : "NONINFLECTED";
}

void require_records(std::span<const EvalRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyGroup, "no records in group");
}

std::vector<const EvalRecord*> canonical(std::span<const EvalRecord> records) {
  std::vector<const EvalRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  std::sort(out.begin(), out.end(),
            [](const EvalRecord* a, const EvalRecord* b) { return canonical_less(*a, *b); });
  return out;
}

std::optional<int> rank_for(const EvalRecord& r, FormTag tag) {
  std::optional<int> out;
  for (const auto& f : r.form_ranks) {
    if (f.tag != tag) continue;
    if (out) return std::nullopt;  // more than one of a tag: not a clean pair
    out = f.rank;
  }
  return out;
}

}  // namespace

json to_json(const EvalRecord& r) {
  json hits = json::object();
  for (const auto& [n, h] : r.hits) hits[std::to_string(n)] = h;
  json forms = json::array();
  for (const auto& f : r.form_ranks) {
    forms.push_back({{"form", f.form}, {"tag", tag_name(f.tag)}, {"rank", f.rank}});
  }
  json j{{"fact_id", r.fact_id},
         {"language", r.language},
         {"relation_id", r.relation_id},
         {"source", source_name(r.source)},
         {"normalization", normalization_name(r.normalization)},
         {"best_correct_rank", r.best_correct_rank},
         {"best_correct_form", r.best_correct_form},
         {"hits", hits},
         {"form_ranks", forms},
         {"prompt", r.prompt},
         {"candidate_count", r.candidate_count}};
  if (r.qe_score) j["qe_score"] = *r.qe_score;
  if (r.subject_gender) j["subject_gender"] = *r.subject_gender;
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r;
  r.fact_id = j.at("fact_id").get<std::string>();
  r.language = j.at("language").get<std::string>();
  r.relation_id = j.at("relation_id").get<std::string>();
  r.source = parse_source(j.at("source").get<std::string>());
  r.normalization = parse_normalization(j.at("normalization").get<std::string>());
  r.best_correct_rank = j.at("best_correct_rank").get<int>();
  r.best_correct_form = j.at("best_correct_form").get<std::string>();
  for (const auto& [n, h] : j.at("hits").items()) r.hits[std::stoi(n)] = h.get<bool>();
  for (const auto& f : j.at("form_ranks")) {
    r.form_ranks.push_back({f.at("form").get<std::string>(),
                            f.at("tag").get<std::string>() == "INFLECTED" ? FormTag::kInflected
                                                                          : FormTag::kNonInflected,
                            f.at("rank").get<int>()});
  }
  r.prompt = j.value("prompt", "");
  r.candidate_count = j.value("candidate_count", 0);
  if (auto it = j.find("qe_score"); it != j.end() && !it->is_null()) r.qe_score = it->get<double>();
  if (auto it = j.find("subject_gender"); it != j.end() && !it->is_null()) {
    r.subject_gender = it->get<std::string>();
  }
  return r;
}

bool canonical_less(const EvalRecord& a, const EvalRecord& b) {
  return std::tie(a.fact_id, a.source, a.normalization) <
         std::tie(b.fact_id, b.source, b.normalization);
}

double recall_at_n(std::span<const EvalRecord> records, int n) {
  require_records(records);
  if (n < 1) throw Error(ErrorCode::kInvalidConfig, "n must be at least 1");
  const auto hits = std::count_if(records.begin(), records.end(),
                                  [n](const EvalRecord& r) { return r.best_correct_rank <= n; });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_best_rank(std::span<const EvalRecord> records) {
  require_records(records);
  double sum = 0.0;
  for (const auto* r : canonical(records)) sum += r->best_correct_rank;
  return sum / static_cast<double>(records.size());
}

namespace {

AggregateCell make_cell(std::span<const EvalRecord> records, const std::vector<int>& n_values) {
  AggregateCell cell;
  cell.language = records.front().language;
  cell.source = records.front().source;
  for (int n : n_values) cell.r_at_n[n] = recall_at_n(records, n);
  cell.mean_rank = mean_best_rank(records);
  cell.count = records.size();
  return cell;
}

}  // namespace

std::vector<AggregateCell> aggregate(std::span<const EvalRecord> records,
                                     const std::vector<int>& n_values, bool by_relation) {
  std::map<std::tuple<std::string, VerbalizationSource, std::string>, std::vector<EvalRecord>> groups;
  for (const auto& r : records) {
    groups[{r.language, r.source, by_relation ? r.relation_id : std::string{}}].push_back(r);
  }
  std::vector<AggregateCell> out;
  for (const auto& [key, group] : groups) {
    auto cell = make_cell(group, n_values);
    if (by_relation) cell.relation = std::get<2>(key);
    out.push_back(std::move(cell));
  }
  return out;
}

AggregateCell subset_metrics(std::span<const EvalRecord> records, const RecordPredicate& predicate,
                             const std::vector<int>& n_values) {
  std::vector<EvalRecord> kept;
  std::copy_if(records.begin(), records.end(), std::back_inserter(kept), predicate);
  require_records(kept);
  return make_cell(kept, n_values);
}

bool is_female_subject(const EvalRecord& r) {
  return r.subject_gender && (*r.subject_gender == "female" ||
                              *r.subject_gender == "transgender female");
}

double lower_quantile(std::span<const int> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::kEmptyGroup, "quantile of nothing");
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)));
  return sorted[idx];
}

RankHistogram rank_histogram(std::span<const EvalRecord> records, int max_bucket) {
  require_records(records);
  if (max_bucket < 1) throw Error(ErrorCode::kInvalidConfig, "max_bucket must be at least 1");
  RankHistogram h;
  h.counts.assign(static_cast<std::size_t>(max_bucket), 0);
  std::vector<int> ranks;
  for (const auto& r : records) {
    ranks.push_back(r.best_correct_rank);
    if (r.best_correct_rank > max_bucket) {
      ++h.overflow;
    } else {
      ++h.counts[static_cast<std::size_t>(r.best_correct_rank - 1)];
    }
  }
  std::sort(ranks.begin(), ranks.end());
  h.q1 = lower_quantile(ranks, 0.25);
  h.median = lower_quantile(ranks, 0.5);
  h.q3 = lower_quantile(ranks, 0.75);
  return h;
}

std::vector<DeltaCell> inflection_delta(std::span<const EvalRecord> records, DeltaSign sign) {
  std::map<std::pair<std::string, VerbalizationSource>, std::pair<double, std::size_t>> groups;
  for (const auto* r : canonical(records)) {
    const auto non = rank_for(*r, FormTag::kNonInflected);
    const auto infl = rank_for(*r, FormTag::kInflected);
    if (!non || !infl) continue;
    const int delta = sign == DeltaSign::kCaption ? *non - *infl : *infl - *non;
    auto& g = groups[{r->language, r->source}];
    g.first += delta;
    ++g.second;
  }
  if (groups.empty()) throw Error(ErrorCode::kNoEligibleRecords, "no inflected/non-inflected pairs");
  std::vector<DeltaCell> out;
  for (const auto& [key, g] : groups) {
    out.push_back({key.first, key.second, g.first / static_cast<double>(g.second), g.second});
  }
  return out;
}

GenderPatterns gender_patterns_from_json(const json& j) {
  GenderPatterns out;
  for (const auto& [lang, relations] : j.items()) {
    for (const auto& [rel, markers] : relations.items()) {
      GenderMarkers m;
      m.feminine = markers.at("feminine").get<std::vector<std::string>>();
      m.masculine = markers.at("masculine").get<std::vector<std::string>>();
      out[lang][rel] = std::move(m);
    }
  }
  return out;
}

GenderPatterns load_gender_patterns(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingPatterns, "cannot open " + path.string());
  try {
    return gender_patterns_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, path.string() + ": " + e.what());
  }
}

std::vector<FeminineRate> feminine_form_rate(std::span<const GenderProbe> probes,
                                             const GenderPatterns& patterns) {
  std::map<std::pair<std::string, VerbalizationSource>, FeminineRate> groups;
  auto contains_any = [](const std::string& prompt, const std::vector<std::string>& markers) {
    return std::any_of(markers.begin(), markers.end(), [&](const std::string& m) {
      return !text::find_whole_word(prompt, m).empty();
    });
  };
  for (const auto& p : probes) {
    const auto lang = patterns.find(p.language);
    if (lang == patterns.end() || !lang->second.contains(p.relation_id)) {
      throw Error(ErrorCode::kMissingPatterns, p.language + "/" + p.relation_id);
    }
    const auto& markers = lang->second.at(p.relation_id);
    auto& g = groups[{p.language, p.source}];
    g.language = p.language;
    g.source = p.source;
    if (contains_any(p.prompt, markers.feminine)) {
      ++g.feminine;
    } else if (contains_any(p.prompt, markers.masculine)) {
      ++g.masculine;
    } else {
      ++g.undetermined;
    }
  }
  std::vector<FeminineRate> out;
  for (auto& [key, g] : groups) {
    if (g.feminine + g.masculine > 0) {
      g.percentage = 100.0 * static_cast<double>(g.feminine) /
                     static_cast<double>(g.feminine + g.masculine);
    }
    out.push_back(g);
  }
  return out;
}

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 3) {
    throw Error(ErrorCode::kDegenerateInput, "pearson needs two equal-length series of >= 3");
  }
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0 || syy <= 0) throw Error(ErrorCode::kDegenerateInput, "zero variance");
  PearsonResult out;
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = n - 2;
  const double one_minus = 1.0 - out.r * out.r;
  if (one_minus <= 0) {
    out.p = 0.0;
    return out;
  }
  const double t = out.r * std::sqrt(dof / one_minus);
  boost::math::students_t dist(dof);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  return out;
}

namespace {

struct QeAccum {
  double qe_sum = 0;
  std::size_t qe_n = 0;
  std::size_t hits = 0;
  std::size_t n = 0;
  void add(const EvalRecord& r) {
    qe_sum += *r.qe_score;
    ++qe_n;
    hits += r.best_correct_rank <= 1 ? 1 : 0;
    ++n;
  }
  double qe() const { return qe_sum / static_cast<double>(qe_n); }
  double r1() const { return static_cast<double>(hits) / static_cast<double>(n); }
};

}  // namespace

QeRow qe_delta_for_language(std::span<const EvalRecord> records, const std::string& language,
                            VerbalizationSource source, VerbalizationSource baseline) {
  std::map<std::string, QeAccum> base_rel, comp_rel;
  QeAccum base_all, comp_all;
  for (const auto* r : canonical(records)) {
    if (r->language != language || !r->qe_score) continue;
    if (r->source == baseline) {
      base_rel[r->relation_id].add(*r);
      base_all.add(*r);
    } else if (r->source == source) {
      comp_rel[r->relation_id].add(*r);
      comp_all.add(*r);
    }
  }
  if (base_all.n == 0 || comp_all.n == 0) {
    throw Error(ErrorCode::kInsufficientRelations, language + ": no QE annotations");
  }
  QeRow row;
  row.language = language;
  row.source = source;
  row.delta_qe = comp_all.qe() - base_all.qe();
  for (const auto& [rel, comp] : comp_rel) {
    auto it = base_rel.find(rel);
    if (it == base_rel.end()) continue;
    row.points.push_back({rel, comp.qe() - it->second.qe(), comp.r1() - it->second.r1()});
  }
  if (row.points.size() < 3) {
    throw Error(ErrorCode::kInsufficientRelations,
                language + ": " + std::to_string(row.points.size()) + " relation points");
  }
  std::vector<double> xs, ys;
  for (const auto& p : row.points) {
    xs.push_back(p.delta_qe);
    ys.push_back(p.delta_r1);
  }
  row.correlation = pearson(xs, ys);
  return row;
}

std::vector<QeRow> qe_delta_correlation(std::span<const EvalRecord> records,
                                        VerbalizationSource baseline) {
  std::set<std::pair<std::string, VerbalizationSource>> keys;
  for (const auto& r : records) {
    if (r.qe_score && r.source != baseline) keys.insert({r.language, r.source});
  }
  std::vector<QeRow> out;
  for (const auto& [language, source] : keys) {
    try {
      out.push_back(qe_delta_for_language(records, language, source, baseline));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientRelations && e.code() != ErrorCode::kDegenerateInput) {
        throw;
      }
      QeRow row;
      row.language = language;
      row.source = source;
      row.note = std::string(error_code_name(e.code()));
      // Keep the language-level delta when it exists.
      QeAccum b, c;
      for (const auto* r : canonical(records)) {
        if (r->language != language || !r->qe_score) continue;
        if (r->source == baseline) b.add(*r);
        if (r->source == source) c.add(*r);
      }
      if (b.n && c.n) row.delta_qe = c.qe() - b.qe();
      out.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace fluentprobe
