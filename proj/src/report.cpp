#include "fluentprobe/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fluentprobe::report {

namespace {

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

std::string shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

template <typename Row>
std::string render(const std::vector<std::string>& header, const std::vector<Row>& rows,
                   std::size_t left_columns) {
  std::ostringstream out;
  out << '|';
  for (const auto& h : header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out << (i < left_columns ? ":---|" : "---:|");
  out << '\n';
  for (const auto& row : rows) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

const AggregateCell* find_cell(const std::vector<AggregateCell>& cells, const std::string& lang,
                               VerbalizationSource source) {
  for (const auto& c : cells) {
    if (c.language == lang && c.source == source && !c.relation) return &c;
  }
  return nullptr;
}

}  // namespace

std::string format_general(double value, int decimals) {
  auto s = shortest(round_to(value, decimals));
  if (s == "-0") s = "0";
  return s;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string format_repr(double value, int decimals) {
  auto s = shortest(round_to(value, decimals));
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string main_table(const std::vector<AggregateCell>& cells, const Layout& layout,
                       const std::vector<int>& n_shown) {
  std::vector<std::string> header{"Verbalization"};
  for (int n : n_shown) {
    for (const auto& l : layout.languages) header.push_back("R@" + std::to_string(n) + " " + l);
  }
  for (const auto& l : layout.languages) header.push_back("Mean Rank " + l);
  std::vector<std::vector<std::string>> rows;
  for (auto source : layout.sources) {
    std::vector<std::string> row{layout.labels(source)};
    for (int n : n_shown) {
      for (const auto& l : layout.languages) {
        const auto* c = find_cell(cells, l, source);
        const auto it = c ? c->r_at_n.find(n) : decltype(c->r_at_n.end()){};
        row.push_back(c && it != c->r_at_n.end() ? format_general(it->second, 3)
                                                 : std::string(kNotAvailable));
      }
    }
    for (const auto& l : layout.languages) {
      const auto* c = find_cell(cells, l, source);
      row.push_back(c ? format_general(c->mean_rank, 2) : std::string(kNotAvailable));
    }
    rows.push_back(std::move(row));
  }
  return render(header, rows, 1);
}

std::string delta_table(const std::vector<DeltaCell>& cells, const Layout& layout) {
  std::vector<std::string> header{"Verbalization"};
  header.insert(header.end(), layout.languages.begin(), layout.languages.end());
  std::vector<std::vector<std::string>> rows;
  for (auto source : layout.sources) {
    std::vector<std::string> row{layout.labels(source)};
    for (const auto& l : layout.languages) {
      std::string value(kNotAvailable);
      for (const auto& c : cells) {
        if (c.language == l && c.source == source) value = format_fixed(c.mean_delta, 2);
      }
      row.push_back(value);
    }
    rows.push_back(std::move(row));
  }
  return render(header, rows, 1);
}

std::string qe_table(const std::vector<QeRow>& qe_rows, const Layout& layout) {
  std::vector<std::string> header{"Metric", "Verbalization"};
  header.insert(header.end(), layout.languages.begin(), layout.languages.end());
  auto find = [&](const std::string& l, VerbalizationSource s) -> const QeRow* {
    for (const auto& r : qe_rows) {
      if (r.language == l && r.source == s) return &r;
    }
    return nullptr;
  };
  std::vector<std::vector<std::string>> rows;
  for (int block = 0; block < 2; ++block) {
    bool first = true;
    for (auto source : layout.sources) {
      std::vector<std::string> row{first ? (block == 0 ? "Δ" : "r") : "", layout.labels(source)};
      first = false;
      for (const auto& l : layout.languages) {
        const auto* r = find(l, source);
        if (block == 0) {
          row.push_back(r && r->delta_qe ? format_repr(*r->delta_qe, 3) : std::string(kNotAvailable));
        } else if (r && r->correlation) {
          row.push_back(format_repr(r->correlation->r, 3) +
                        (r->correlation->significant() ? "*" : ""));
        } else {
          row.push_back(std::string(kNotAvailable));
        }
      }
      rows.push_back(std::move(row));
    }
  }
  return render(header, rows, 2);
}

std::string gender_table(const std::vector<GenderCell>& cells, const Layout& layout) {
  std::vector<std::string> header{"Verbalization"};
  for (const auto& l : layout.languages) {
    header.push_back(l + " %(F)");
    header.push_back(l + " R@1(F)");
  }
  std::vector<std::vector<std::string>> rows;
  for (auto source : layout.sources) {
    std::vector<std::string> row{layout.labels(source)};
    for (const auto& l : layout.languages) {
      const GenderCell* cell = nullptr;
      for (const auto& c : cells) {
        if (c.language == l && c.source == source) cell = &c;
      }
      row.push_back(cell && cell->feminine_percentage ? format_repr(*cell->feminine_percentage, 1)
                                                      : std::string(kNotAvailable));
      row.push_back(cell && cell->r_at_1 ? format_repr(*cell->r_at_1, 3)
                                         : std::string(kNotAvailable));
    }
    rows.push_back(std::move(row));
  }
  return render(header, rows, 1);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string cells_csv(const std::vector<AggregateCell>& cells, const std::vector<int>& n_values) {
  std::ostringstream out;
  out << "language,source,relation,count";
  for (int n : n_values) out << ",r_at_" << n;
  out << ",mean_rank\n";
  for (const auto& c : cells) {
    out << csv_escape(c.language) << ',' << source_name(c.source) << ','
        << csv_escape(c.relation.value_or("")) << ',' << c.count;
    for (int n : n_values) {
      auto it = c.r_at_n.find(n);
      out << ',' << (it == c.r_at_n.end() ? std::string(kNotAvailable) : shortest(it->second));
    }
    out << ',' << shortest(c.mean_rank) << '\n';
  }
  return out.str();
}

std::string curves_csv(const std::vector<AggregateCell>& cells, const std::vector<int>& n_values) {
  std::ostringstream out;
  out << "language,source,n,r_at_n\n";
  for (const auto& c : cells) {
    if (c.relation) continue;
    for (int n : n_values) {
      auto it = c.r_at_n.find(n);
      if (it == c.r_at_n.end()) continue;
      out << csv_escape(c.language) << ',' << source_name(c.source) << ',' << n << ','
          << shortest(it->second) << '\n';
    }
  }
  return out.str();
}

std::string histogram_csv(const std::vector<HistogramRow>& rows) {
  std::ostringstream out;
  out << "language,source,bucket,count\n";
  for (const auto& r : rows) {
    const auto& h = r.histogram;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      out << csv_escape(r.language) << ',' << source_name(r.source) << ',' << i + 1 << ','
          << h.counts[i] << '\n';
    }
    out << csv_escape(r.language) << ',' << source_name(r.source) << ",overflow," << h.overflow
        << '\n';
    out << csv_escape(r.language) << ',' << source_name(r.source) << ",q1," << shortest(h.q1) << '\n';
    out << csv_escape(r.language) << ',' << source_name(r.source) << ",median,"
        << shortest(h.median) << '\n';
    out << csv_escape(r.language) << ',' << source_name(r.source) << ",q3," << shortest(h.q3) << '\n';
  }
  return out.str();
}

}  // namespace fluentprobe::report
