// Copyright 2026 The zsdistill Authors
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

#pragma once

// Aggregation of long-form evaluation rows into accuracy matrices, and their
// CSV / SVG renderings.
//
// Model ids in the long form are "teacher", "pretrained" and
// "student:<tag>:<finetune set>:s<k>".

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "zsd/common.hpp"
#include "zsd/eval.hpp"

namespace zsd {

inline std::string student_id(const std::string& tag, const std::string& set, std::size_t k) {
  return "student:" + tag + ":" + set + ":s" + std::to_string(k);
}

struct StudentId {
  std::string tag, set;
  std::size_t seed_index = 0;
};

inline std::optional<StudentId> parse_student_id(const std::string& id) {
  const auto parts = split_list(id, ':');
  if (parts.size() != 4 || parts[0] != "student" || parts[3].size() < 2 || parts[3][0] != 's') return std::nullopt;
  try {
    return StudentId{parts[1], parts[2], std::stoul(parts[3].substr(1))};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Reads the output of reports_csv back. Accuracies come back as fractions at
// the CSV's 0.1% resolution.
inline std::vector<EvalReport> parse_reports_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<EvalReport> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "model,testset,condition,top1,top5,n") throw Error("reports csv: unexpected header '" + line + "'");
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (auto pos = line.find(','); ; pos = line.find(',', start)) {
      f.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() != 6) throw Error("reports csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    EvalReport r;
    r.model = f[0];
    r.testset = f[1];
    r.condition = f[2];
    try {
      r.top1 = std::stod(f[3]) / 100.0;
      r.top5 = std::stod(f[4]) / 100.0;
      r.n = std::stoul(f[5]);
    } catch (const std::exception&) {
      throw Error("reports csv: bad number on line " + std::to_string(lineno));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Mean top1 of all rows matching the selector; NaN when nothing matches.
// `model` is "teacher", "pretrained" or a loss tag; `set` restricts students
// to one fine-tune set.
inline double mean_top1(const std::vector<EvalReport>& reports, const std::string& model, const std::string& set,
                        const std::string& testset, const std::string& condition = "clean") {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : reports) {
    if (r.testset != testset || r.condition != condition) continue;
    bool match = false;
    if (model == "teacher" || model == "pretrained") {
      match = r.model == model;
    } else if (const auto id = parse_student_id(r.model)) {
      match = id->tag == model && id->set == set;
    }
    if (match) sum += r.top1, ++n;
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

struct AccuracyMatrix {
  std::vector<std::string> rows;     // "finetune_set:testset"
  std::vector<std::string> columns;  // loss tags, then teacher and pretrained
  std::vector<std::vector<double>> top1;  // NaN where no report exists
};

// `rows` are "finetune_set:testset" pairs; testset "train" is the fine-tune
// set itself. Student cells average over seeds.
inline AccuracyMatrix build_matrix(const std::vector<EvalReport>& reports, const std::vector<std::string>& rows,
                                   const std::vector<std::string>& tags, const std::string& condition = "clean") {
  AccuracyMatrix m;
  m.rows = rows;
  m.columns = tags;
  m.columns.push_back("teacher");
  m.columns.push_back("pretrained");
  for (const auto& row : rows) {
    const auto parts = split_list(row, ':');
    if (parts.size() != 2) throw Error("matrix row '" + row + "' must be 'finetune_set:testset'");
    const auto& set = parts[0];
    const auto testset = parts[1] == "train" ? set : parts[1];
    std::vector<double> line;
    for (const auto& col : m.columns) line.push_back(mean_top1(reports, col, set, testset, condition));
    m.top1.push_back(std::move(line));
  }
  return m;
}

inline std::string matrix_csv(const AccuracyMatrix& m) {
  std::ostringstream os;
  os << "finetune_set,testset";
  for (const auto& c : m.columns) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto parts = split_list(m.rows[i], ':');
    os << parts[0] << ',' << parts[1];
    for (double v : m.top1[i]) os << ',' << (std::isnan(v) ? std::string("") : format_percent(v));
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace detail

// Grouped bar chart: one group per matrix row, one bar per column.
inline std::string matrix_svg(const AccuracyMatrix& m, const std::string& title) {
  static const char* kColors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  const double bar = 14.0, gap = 18.0, left = 50.0, top = 40.0, plot_h = 200.0;
  const double group_w = bar * static_cast<double>(m.columns.size()) + gap;
  const double width = left + group_w * static_cast<double>(m.rows.size()) + 20.0;
  const double legend_y = top + plot_h + 90.0;
  const double height = legend_y + 18.0 * static_cast<double>(m.columns.size()) + 10.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::svg_num(width) << "\" height=\""
     << detail::svg_num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << detail::svg_num(left) << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(title)
     << "</text>\n";
  for (int t = 0; t <= 100; t += 25) {
    const double y = top + plot_h * (1.0 - t / 100.0);
    os << "<line x1=\"" << detail::svg_num(left) << "\" x2=\"" << detail::svg_num(width - 10) << "\" y1=\""
       << detail::svg_num(y) << "\" y2=\"" << detail::svg_num(y) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << detail::svg_num(left - 6) << "\" y=\"" << detail::svg_num(y + 4)
       << "\" text-anchor=\"end\">" << t << "</text>\n";
  }
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const double gx = left + gap / 2 + group_w * static_cast<double>(i);
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      const double v = m.top1[i][j];
      if (std::isnan(v)) continue;
      const double h = plot_h * v;
      os << "<rect x=\"" << detail::svg_num(gx + bar * static_cast<double>(j)) << "\" y=\""
         << detail::svg_num(top + plot_h - h) << "\" width=\"" << detail::svg_num(bar - 2) << "\" height=\""
         << detail::svg_num(h) << "\" fill=\"" << kColors[j % 10] << "\"><title>"
         << detail::xml_escape(m.columns[j]) << ": " << format_percent(v) << "</title></rect>\n";
    }
    const double cx = gx + bar * static_cast<double>(m.columns.size()) / 2;
    os << "<text transform=\"translate(" << detail::svg_num(cx) << "," << detail::svg_num(top + plot_h + 12)
       << ") rotate(30)\">" << detail::xml_escape(m.rows[i]) << "</text>\n";
  }
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    const double y = legend_y + 18.0 * static_cast<double>(j);
    os << "<rect x=\"" << detail::svg_num(left) << "\" y=\"" << detail::svg_num(y - 10)
       << "\" width=\"12\" height=\"12\" fill=\"" << kColors[j % 10] << "\"/>\n";
    os << "<text x=\"" << detail::svg_num(left + 18) << "\" y=\"" << detail::svg_num(y) << "\">"
       << detail::xml_escape(m.columns[j]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace zsd
