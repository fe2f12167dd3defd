// Copyright 2026 The ffnlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ffnlab/analysis.hpp"
#include "ffnlab/errors.hpp"
#include "ffnlab/training.hpp"

namespace ffnlab::analysis {

using train::format_number;

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string fx(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

const char* color_of(placement::Position p) {
  switch (p) {
    case placement::Position::first: return "#1f77b4";
    case placement::Position::middle: return "#2ca02c";
    case placement::Position::final: return "#d62728";
    default: return "#333333";
  }
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

nlohmann::json summary_json(const RITable& table, const AverageRI& avg,
                            const std::optional<ImportanceVector>& importance) {
  nlohmann::json j;
  nlohmann::json base = nlohmann::json::object();
  for (const auto& [name, r] : table.baseline) base[name] = r;
  j["baseline"] = base;
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& [cfg, mean] : avg.mean) {
    nlohmann::json c = {{"id", cfg.id},
                        {"position", placement::to_string(cfg.position)},
                        {"ratio", cfg.ratio_percent},
                        {"avg_ri", mean}};
    nlohmann::json ri = nlohmann::json::object();
    for (const auto& r : table.rows) {
      if (r.config_id == cfg.id) ri[r.task] = r.ri;
    }
    c["ri"] = ri;
    configs.push_back(c);
  }
  j["configs"] = configs;
  j["averaged_tasks"] = avg.tasks;
  j["excluded_tasks"] = avg.excluded;
  if (importance) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : importance->layers) {
      layers.push_back({{"layer", l.layer},
                        {"count", l.count},
                        {"raw", l.raw ? nlohmann::json(*l.raw) : nlohmann::json(nullptr)},
                        {"standardized", l.standardized ? nlohmann::json(*l.standardized)
                                                        : nlohmann::json(nullptr)}});
    }
    j["importance"] = {{"mu", importance->mu},
                       {"sigma", importance->sigma},
                       {"degenerate", importance->degenerate},
                       {"layers", layers},
                       {"warnings", importance->warnings}};
  } else {
    j["importance"] = nullptr;
  }
  return j;
}

std::string render_ri_svg(const RITable& table, const std::string& task) {
  const double w = 640, h = 400, left = 60, right = 120, top = 40, bottom = 50;
  std::vector<const RIRow*> rows;
  for (const auto& r : table.rows) {
    if (r.task == task) rows.push_back(&r);
  }
  double lo = 0, hi = 0;
  for (const auto* r : rows) {
    lo = std::min(lo, r->ri);
    hi = std::max(hi, r->ri);
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto xs = [&](double ratio) { return left + (ratio - 0) / 100.0 * (w - left - right); };
  auto ys = [&](double ri) { return top + (hi - ri) / (hi - lo) * (h - top - bottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << left << "\" y=\"20\">RI (%) vs ratio: " << task << "</text>\n";
  os << "<line class=\"axis\" x1=\"" << fx(left) << "\" y1=\"" << fx(ys(0)) << "\" x2=\""
     << fx(w - right) << "\" y2=\"" << fx(ys(0)) << "\" stroke=\"#999\"/>\n";
  os << "<line class=\"axis\" x1=\"" << fx(left) << "\" y1=\"" << fx(top) << "\" x2=\""
     << fx(left) << "\" y2=\"" << fx(h - bottom) << "\" stroke=\"#000\"/>\n";
  for (int r : placement::kRatios) {
    os << "<text x=\"" << fx(xs(r)) << "\" y=\"" << fx(h - bottom + 18)
       << "\" text-anchor=\"middle\">" << r << "</text>\n";
  }
  os << "<text x=\"" << fx(left - 8) << "\" y=\"" << fx(ys(hi)) << "\" text-anchor=\"end\">"
     << fx(hi) << "</text>\n";
  os << "<text x=\"" << fx(left - 8) << "\" y=\"" << fx(ys(lo)) << "\" text-anchor=\"end\">"
     << fx(lo) << "</text>\n";

  int legend = 0;
  for (auto pos : placement::kPositions) {
    std::vector<const RIRow*> line;
    for (const auto* r : rows) {
      if (r->position == pos) line.push_back(r);
    }
    if (line.empty()) continue;
    std::sort(line.begin(), line.end(),
              [](const RIRow* a, const RIRow* b) { return a->ratio_percent < b->ratio_percent; });
    os << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color_of(pos)
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << (i ? " " : "") << fx(xs(line[i]->ratio_percent)) << ',' << fx(ys(line[i]->ri));
    }
    os << "\"/>\n";
    for (const auto* r : line) {
      os << "<circle cx=\"" << fx(xs(r->ratio_percent)) << "\" cy=\"" << fx(ys(r->ri))
         << "\" r=\"3\" fill=\"" << color_of(pos) << "\"/>\n";
    }
    os << "<text x=\"" << fx(w - right + 10) << "\" y=\"" << fx(top + 16 * legend)
       << "\" fill=\"" << color_of(pos) << "\">" << placement::to_string(pos) << "</text>\n";
    ++legend;
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_importance_svg(const ImportanceVector& importance) {
  const std::size_t n = importance.layers.size();
  const double w = 640, h = 400, left = 50, right = 20, top = 40, bottom = 50;
  const double bw = (w - left - right) / static_cast<double>(std::max<std::size_t>(n, 1));
  double lo = 0, hi = 0;
  for (const auto& l : importance.layers) {
    if (!l.standardized) continue;
    lo = std::min(lo, *l.standardized);
    hi = std::max(hi, *l.standardized);
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  auto ys = [&](double v) { return top + (hi - v) / (hi - lo) * (h - top - bottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << left << "\" y=\"20\">Standardized layer importance</text>\n";
  os << "<line class=\"axis\" x1=\"" << fx(left) << "\" y1=\"" << fx(ys(0)) << "\" x2=\""
     << fx(w - right) << "\" y2=\"" << fx(ys(0)) << "\" stroke=\"#000\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = importance.layers[i];
    const double x = left + bw * static_cast<double>(i);
    if (l.standardized) {
      const double v = *l.standardized;
      const double y0 = ys(std::max(v, 0.0));
      const double y1 = ys(std::min(v, 0.0));
      os << "<rect class=\"bar\" data-layer=\"" << l.layer << "\" x=\"" << fx(x + 0.1 * bw)
         << "\" y=\"" << fx(y0) << "\" width=\"" << fx(0.8 * bw) << "\" height=\""
         << fx(y1 - y0) << "\" fill=\"#4c72b0\"/>\n";
    }
    os << "<text x=\"" << fx(x + 0.5 * bw) << "\" y=\"" << fx(h - bottom + 18)
       << "\" text-anchor=\"middle\">" << l.layer << "</text>\n";
  }
  const double mid = left + bw * static_cast<double>(n) / 2.0;
  os << "<line class=\"midpoint\" x1=\"" << fx(mid) << "\" y1=\"" << fx(top) << "\" x2=\""
     << fx(mid) << "\" y2=\"" << fx(h - bottom) << "\" stroke=\"#000\" stroke-dasharray=\"2,3\"/>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> emit_report(const std::filesystem::path& dir, const RITable& table,
                                     const AverageRI& avg,
                                     const std::optional<ImportanceVector>& importance) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "plots", ec);
  if (ec) throw IoError("cannot create " + (dir / "plots").string() + ": " + ec.message());
  std::vector<std::string> notices;

  std::ostringstream report;
  report << "config,position,ratio,task,metric,kind,value,baseline,ri,below_chance\n";
  for (const auto& r : table.rows) {
    report << r.config_id << ',' << placement::to_string(r.position) << ',' << r.ratio_percent
           << ',' << r.task << ',' << r.metric << ',' << to_string(r.kind) << ','
           << format_number(r.value) << ',' << format_number(r.baseline_value) << ','
           << format_number(r.ri) << ',' << (r.below_chance ? 1 : 0) << '\n';
  }
  write_file(dir / "report.csv", report.str());

  std::ostringstream avg_csv;
  avg_csv << "config,position,ratio,avg_ri\n";
  for (const auto& [cfg, v] : avg.mean) {
    avg_csv << cfg.id << ',' << placement::to_string(cfg.position) << ',' << cfg.ratio_percent
            << ',' << format_number(v) << '\n';
  }
  write_file(dir / "avg_ri.csv", avg_csv.str());

  for (const auto& [task, why] : avg.excluded) {
    notices.push_back("task " + task + " left out of the average: " + why);
  }

  if (importance) {
    std::ostringstream imp;
    imp << "layer,count,raw,standardized\n";
    for (const auto& l : importance->layers) {
      imp << l.layer << ',' << l.count << ',' << opt_number(l.raw) << ','
          << opt_number(l.standardized) << '\n';
    }
    write_file(dir / "importance.csv", imp.str());
    for (const auto& w : importance->warnings) notices.push_back(w);
  }

  write_file(dir / "summary.json", summary_json(table, avg, importance).dump(2) + "\n");

  for (const auto& task : table.tasks) {
    write_file(dir / "plots" / ("ri_" + safe_name(task) + ".svg"), render_ri_svg(table, task));
  }
  if (importance && !importance->layers.empty()) {
    write_file(dir / "plots" / "importance.svg", render_importance_svg(*importance));
  } else {
    notices.push_back("no importance vector (no configuration deactivates a layer); importance plot skipped");
  }
  return notices;
}

}  // namespace ffnlab::analysis
