// Copyright 2026 The lungvit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lungvit/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "lungvit/common.hpp"

namespace lungvit {

namespace {

constexpr int kN = static_cast<int>(RespiratoryClass::kNormal);

void check_class(int c, const char* what) {
  if (c < 0 || c >= kNumClasses) {
    throw ContractError(std::string("confusion matrix: ") + what + " class " + std::to_string(c) + " outside [0, 4)");
  }
}

std::string name_of(int c) { return std::string(class_name(static_cast<RespiratoryClass>(c))); }

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string percent1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t n) {
  check_class(truth, "true");
  check_class(predicted, "predicted");
  counts_[truth][predicted] += n;
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (int r = 0; r < kNumClasses; ++r)
    for (int c = 0; c < kNumClasses; ++c) counts_[r][c] += other.counts_[r][c];
  return *this;
}

std::uint64_t ConfusionMatrix::at(int truth, int predicted) const {
  check_class(truth, "true");
  check_class(predicted, "predicted");
  return counts_[truth][predicted];
}

std::uint64_t ConfusionMatrix::row_total(int truth) const {
  check_class(truth, "true");
  std::uint64_t s = 0;
  for (auto v : counts_[truth]) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::column_total(int predicted) const {
  check_class(predicted, "predicted");
  std::uint64_t s = 0;
  for (const auto& row : counts_) s += row[predicted];
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (int r = 0; r < kNumClasses; ++r) s += row_total(r);
  return s;
}

double sensitivity(const ConfusionMatrix& cm) {
  std::uint64_t hits = 0, total = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    hits += cm.at(c, c);
    total += cm.row_total(c);
  }
  if (total == 0) throw UndefinedMetricError("sensitivity undefined: no crackle, wheeze or both cycles were scored");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double specificity(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.row_total(kN);
  if (total == 0) throw UndefinedMetricError("specificity undefined: no normal cycles were scored");
  return static_cast<double>(cm.at(kN, kN)) / static_cast<double>(total);
}

double score(const ConfusionMatrix& cm) { return (sensitivity(cm) + specificity(cm)) / 2.0; }

ClassRates uar_and_macro_precision(const ConfusionMatrix& cm) {
  ClassRates rates;
  std::vector<std::string> empty_rows, empty_cols;
  for (int c = 0; c < kNumClasses; ++c) {
    if (const auto rt = cm.row_total(c); rt > 0) {
      rates.recall[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(rt);
    } else {
      empty_rows.push_back(name_of(c));
    }
    if (const auto ct = cm.column_total(c); ct > 0) {
      rates.precision[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(ct);
    } else {
      empty_cols.push_back(name_of(c));
    }
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!empty_rows.empty()) {
    throw UndefinedMetricError("unweighted average recall undefined: no cycles of class " + join(empty_rows));
  }
  double recall_sum = 0;
  for (const auto& r : rates.recall) recall_sum += *r;
  rates.uar = recall_sum / kNumClasses;

  if (empty_cols.size() == static_cast<std::size_t>(kNumClasses)) {
    throw UndefinedMetricError("macro precision undefined: no predictions");
  }
  if (!empty_cols.empty()) warn("macro precision excludes never-predicted class " + join(empty_cols));
  double precision_sum = 0;
  int defined = 0;
  for (const auto& p : rates.precision) {
    if (p) {
      precision_sum += *p;
      ++defined;
    }
  }
  rates.macro_precision = precision_sum / defined;
  return rates;
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.sensitivity = sensitivity(cm);
  r.specificity = specificity(cm);
  r.score = (r.sensitivity + r.specificity) / 2.0;
  r.rates = uar_and_macro_precision(cm);
  r.total = cm.total();
  return r;
}

std::string table_row(const MetricsReport& report) {
  return "AS-ViT (ours), " + percent1(report.rates.macro_precision) + ", " + percent1(report.rates.uar) + ", " +
         percent1(report.score);
}

std::string format_confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "truth\\predicted";
  for (int c = 0; c < kNumClasses; ++c) out << ',' << name_of(c);
  out << '\n';
  for (int r = 0; r < kNumClasses; ++r) {
    out << name_of(r);
    for (int c = 0; c < kNumClasses; ++c) out << ',' << cm.at(r, c);
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("confusion csv: missing header");
  ConfusionMatrix::Counts counts{};
  for (int r = 0; r < kNumClasses; ++r) {
    if (!std::getline(in, line)) throw ParseError("confusion csv: expected 4 class rows");
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    if (cell != name_of(r)) throw ParseError("confusion csv: row " + std::to_string(r + 1) + " should be " + name_of(r));
    for (int c = 0; c < kNumClasses; ++c) {
      if (!std::getline(row, cell, ',')) throw ParseError("confusion csv: row " + name_of(r) + " has too few cells");
      try {
        std::size_t used = 0;
        counts[r][c] = std::stoull(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("confusion csv: bad count '" + cell + "' in row " + name_of(r));
      }
    }
  }
  return ConfusionMatrix(counts);
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_confusion_csv(ss.str());
}

namespace {

std::string confusion_svg(const ConfusionMatrix& cm) {
  constexpr int cell = 80, left = 90, top = 50;
  std::uint64_t peak = 1;
  for (const auto& row : cm.counts())
    for (auto v : row) peak = std::max(peak, v);
  std::ostringstream s;
  const int size_x = left + cell * kNumClasses + 10, size_y = top + cell * kNumClasses + 30;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_x << "\" height=\"" << size_y
    << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  s << "<text x=\"" << left << "\" y=\"20\">predicted</text>\n";
  for (int c = 0; c < kNumClasses; ++c) {
    s << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\">"
      << name_of(c) << "</text>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << top + c * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << name_of(c) << "</text>\n";
  }
  for (int r = 0; r < kNumClasses; ++r)
    for (int c = 0; c < kNumClasses; ++c) {
      const auto v = cm.at(r, c);
      const int shade = 255 - static_cast<int>(200 * v / peak);
      s << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell << "\" width=\"" << cell << "\" height=\""
        << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#444\"/>\n";
      s << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top + r * cell + cell / 2 + 5
        << "\" text-anchor=\"middle\">" << v << "</text>\n";
    }
  s << "<text x=\"10\" y=\"" << size_y - 10 << "\">rows: true class</text>\n</svg>\n";
  return s.str();
}

}  // namespace

void emit_report(const MetricsReport& report, const ConfusionMatrix& cm, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());

  std::ostringstream m;
  m << "metric,value\n";
  m << "sensitivity," << fixed4(report.sensitivity) << '\n';
  m << "specificity," << fixed4(report.specificity) << '\n';
  m << "score," << fixed4(report.score) << '\n';
  m << "uar," << fixed4(report.rates.uar) << '\n';
  m << "macro_precision," << fixed4(report.rates.macro_precision) << '\n';
  for (int c = 0; c < kNumClasses; ++c) m << "recall_" << name_of(c) << ',' << fixed4(*report.rates.recall[c]) << '\n';
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& p = report.rates.precision[c];
    m << "precision_" << name_of(c) << ',' << (p ? fixed4(*p) : std::string("undefined")) << '\n';
  }
  m << "count," << report.total << '\n';
  write_text(dir / "metrics.csv", m.str());
  write_text(dir / "confusion.csv", format_confusion_csv(cm));
  write_text(dir / "confusion.svg", confusion_svg(cm));
  write_text(dir / "table_row.txt", "Model, Precision, Recall, Score\n" + table_row(report) + "\n");
}

}  // namespace lungvit
