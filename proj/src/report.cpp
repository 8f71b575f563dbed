// SPDX-License-Identifier: Apache-2.0
#include "shapectl/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << std::setprecision(17);
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

BenchmarkCell run_cell(ControllerKind kind, Difficulty d,
                       const std::shared_ptr<const DisplacementModel>& model,
                       const DisturbanceProfile& base, const RobotGeometry& geo,
                       const ControllerConfig& ctrl, const BenchmarkConfig& cfg) {
  BenchmarkCell cell;
  cell.controller = kind;
  cell.difficulty = d;
  const DisturbanceProfile scaled = scaled_profile(base, d);
  for (std::uint64_t seed : cfg.seeds) {
    const TrackingTarget target = make_target(d, scaled, geo, seed);
    DisturbanceProfile p = scaled;
    p.seed = scaled.seed + seed;
    ShapeController c(kind, geo, ctrl, kind == ControllerKind::phy ? nullptr : model);
    EpisodeLog log = run_episode(c, target, p, geo, cfg.episode);
    cell.runs.push_back(compute_metrics(log));
    cell.faults += log.faults;
    cell.logs.push_back(std::move(log));
  }
  const double n = static_cast<double>(cell.runs.size());
  for (const auto& m : cell.runs) {
    cell.e_mean += m.e_mean / n;
    cell.t95 += m.t95 / n;
    cell.chatter += m.chatter / n;
    cell.cost += m.cost / n;
  }
  double var = 0.0;
  for (const auto& m : cell.runs) var += (m.e_mean - cell.e_mean) * (m.e_mean - cell.e_mean);
  cell.e_mean_std = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return cell;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

// Gate colormap: 0 (network) dark blue through 1 (physics) warm yellow.
std::string gate_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(30 + v * (250 - 30)));
  const int g = static_cast<int>(std::lround(40 + v * (220 - 40)));
  const int b = static_cast<int>(std::lround(120 + v * (60 - 120)));
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

}  // namespace

const BenchmarkCell& BenchmarkReport::at(ControllerKind c, Difficulty d) const {
  for (const auto& cell : cells)
    if (cell.controller == c && cell.difficulty == d) return cell;
  throw InvalidInput(std::string("no benchmark cell for ") + to_string(c) + "/" + to_string(d));
}

BenchmarkReport run_benchmark(std::shared_ptr<const DisplacementModel> model,
                              const DisturbanceProfile& base, const RobotGeometry& geo,
                              const ControllerConfig& ctrl, const BenchmarkConfig& cfg) {
  base.validate();
  ctrl.validate();
  if (cfg.seeds.empty()) throw InvalidInput("run_benchmark: no seeds");
  for (ControllerKind k : cfg.controllers)
    if (k != ControllerKind::phy && !model)
      throw ConfigError("run_benchmark: neural controllers need a trained checkpoint");

  struct Job {
    ControllerKind kind;
    Difficulty difficulty;
  };
  std::vector<Job> jobs;
  for (Difficulty d : cfg.difficulties)
    for (ControllerKind k : cfg.controllers) jobs.push_back({k, d});

  unsigned threads = cfg.max_threads ? cfg.max_threads : std::thread::hardware_concurrency();
  threads = std::max(1u, threads);
  BenchmarkReport report;
  report.cells.resize(jobs.size());
  for (std::size_t start = 0; start < jobs.size(); start += threads) {
    const std::size_t end = std::min(jobs.size(), start + threads);
    if (threads == 1) {
      report.cells[start] = run_cell(jobs[start].kind, jobs[start].difficulty, model, base, geo, ctrl, cfg);
      continue;
    }
    std::vector<std::future<BenchmarkCell>> futures;
    for (std::size_t j = start; j < end; ++j)
      futures.push_back(std::async(std::launch::async, run_cell, jobs[j].kind, jobs[j].difficulty,
                                   std::cref(model), std::cref(base), std::cref(geo),
                                   std::cref(ctrl), std::cref(cfg)));
    for (std::size_t j = start; j < end; ++j) report.cells[j] = futures[j - start].get();
  }
  return report;
}

void write_benchmark_csv(const BenchmarkReport& report, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "controller,difficulty,e_mean_mm,t95_steps,chatter_mm,cost_mm,e_mean_std_mm,seeds,faults\n";
  for (const auto& c : report.cells)
    out << to_string(c.controller) << ',' << to_string(c.difficulty) << ',' << c.e_mean << ','
        << c.t95 << ',' << c.chatter << ',' << c.cost << ',' << c.e_mean_std << ','
        << c.runs.size() << ',' << c.faults << '\n';
}

std::string benchmark_summary(const BenchmarkReport& report) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(10) << "difficulty" << std::setw(9) << "control" << std::right
     << std::setw(12) << "e_mean mm" << std::setw(10) << "T95" << std::setw(12) << "chatter"
     << std::setw(12) << "cost mm" << '\n';
  for (const auto& c : report.cells)
    os << std::left << std::setw(10) << to_string(c.difficulty) << std::setw(9)
       << to_string(c.controller) << std::right << std::setprecision(3) << std::setw(12)
       << c.e_mean << std::setprecision(1) << std::setw(10) << c.t95 << std::setprecision(3)
       << std::setw(12) << c.chatter << std::setprecision(1) << std::setw(12) << c.cost << '\n';

  for (const auto& c : report.cells) {
    if (c.controller != ControllerKind::hybrid) continue;
    for (const auto& phy : report.cells)
      if (phy.controller == ControllerKind::phy && phy.difficulty == c.difficulty && phy.e_mean > 0.0)
        os << to_string(c.difficulty) << ": hybrid e_mean " << std::setprecision(1)
           << 100.0 * (1.0 - c.e_mean / phy.e_mean) << "% below phy\n";
  }
  return os.str();
}

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys)
      if (std::isfinite(y)) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  lo = std::min(lo, 0.0);
  if (hi <= lo) hi = lo + 1.0;
  const double xs = (W - L - R) / std::max<double>(1.0, static_cast<double>(n) - 1.0);
  const double ys = (H - T - B) / (hi - lo);

  std::ofstream out = open_out(path);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const double y = H - B - (v - lo) * ys;
    out << "<text x=\"" << L - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  out << "<text x=\"" << L << "\" y=\"" << H - B + 18 << "\">0</text>\n"
      << "<text x=\"" << W - R << "\" y=\"" << H - B + 18 << "\" text-anchor=\"end\">"
      << (n ? n - 1 : 0) << "</text>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\">step</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    const auto& v = series[s].second;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (std::isfinite(v[i])) out << L + i * xs << ',' << H - B - (v[i] - lo) * ys << ' ';
    out << "\"/>\n"
        << "<text x=\"" << W - R + 12 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << color
        << "\">" << xml_escape(series[s].first) << "</text>\n";
  }
  out << "</svg>\n";
}

std::vector<std::string> write_benchmark_plots(const BenchmarkReport& report, const std::string& dir) {
  std::vector<std::string> paths;
  std::vector<Difficulty> seen;
  for (const auto& c : report.cells)
    if (std::find(seen.begin(), seen.end(), c.difficulty) == seen.end()) seen.push_back(c.difficulty);
  for (Difficulty d : seen) {
    std::vector<Series> err, chat;
    for (const auto& c : report.cells) {
      if (c.difficulty != d || c.runs.empty()) continue;
      err.emplace_back(to_string(c.controller), c.runs.front().error);
      chat.emplace_back(to_string(c.controller), c.runs.front().chatter_series);
    }
    const std::string tag = lower(to_string(d));
    const std::string e = (std::filesystem::path(dir) / ("error_" + tag + ".svg")).string();
    const std::string ch = (std::filesystem::path(dir) / ("chatter_" + tag + ".svg")).string();
    write_line_plot_svg(e, std::string(to_string(d)) + ": mean node error", "error (mm)", err);
    write_line_plot_svg(ch, std::string(to_string(d)) + ": chatter", "|third difference of q| (mm)", chat);
    paths.push_back(e);
    paths.push_back(ch);
  }
  return paths;
}

Eigen::MatrixXd gate_matrix(const std::vector<Eigen::MatrixXd>& beta, int dim) {
  if (dim < 0 || dim > 2) throw InvalidInput("gate_matrix: dim must be 0, 1 or 2");
  if (beta.empty()) return Eigen::MatrixXd(0, 0);
  const Eigen::Index n = beta.front().cols();
  Eigen::MatrixXd m(n, static_cast<Eigen::Index>(beta.size()));
  for (std::size_t t = 0; t < beta.size(); ++t) {
    if (beta[t].rows() != 3 || beta[t].cols() != n)
      throw InvalidInput("gate_matrix: inconsistent gate telemetry");
    m.col(static_cast<Eigen::Index>(t)) = beta[t].row(dim).transpose();
  }
  return m;
}

void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream out = open_out(path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path + ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError(path + ": ragged rows");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

std::vector<std::string> export_gate_heatmap(const std::vector<Eigen::MatrixXd>& beta,
                                             const std::string& prefix) {
  const Eigen::MatrixXd bx = gate_matrix(beta, 0);
  const Eigen::MatrixXd by = gate_matrix(beta, 1);
  const std::string px = prefix + "_beta_x.csv", py = prefix + "_beta_y.csv",
                    svg = prefix + "_gates.svg";
  write_matrix_csv(bx, px);
  write_matrix_csv(by, py);

  constexpr double L = 60, T = 30, cell_h = 18, gap = 40, R = 80;
  const double steps = static_cast<double>(bx.cols());
  const double cell_w = steps > 0 ? std::max(1.0, 800.0 / steps) : 1.0;
  const double panel_h = cell_h * static_cast<double>(bx.rows());
  const double W = L + cell_w * steps + R, H = T + 2 * panel_h + gap + 40;
  std::ofstream out = open_out(svg);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\" shape-rendering=\"crispEdges\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const Eigen::MatrixXd* panels[2] = {&bx, &by};
  const char* names[2] = {"beta_x", "beta_y"};
  for (int p = 0; p < 2; ++p) {
    const double y0 = T + p * (panel_h + gap);
    out << "<text x=\"" << L << "\" y=\"" << y0 - 6 << "\">" << names[p] << "</text>\n";
    const Eigen::MatrixXd& m = *panels[p];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << "<text x=\"" << L - 6 << "\" y=\"" << y0 + (r + 0.7) * cell_h
          << "\" text-anchor=\"end\">seg " << r + 1 << "</text>\n";
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        out << "<rect x=\"" << L + c * cell_w << "\" y=\"" << y0 + r * cell_h << "\" width=\""
            << cell_w << "\" height=\"" << cell_h << "\" fill=\"" << gate_color(m(r, c))
            << "\"/>\n";
    }
  }
  // Color bar: bottom is 0 (network), top is 1 (physics).
  const double bx0 = L + cell_w * steps + 20, bh = 2 * panel_h + gap;
  for (int k = 0; k < 20; ++k)
    out << "<rect x=\"" << bx0 << "\" y=\"" << T + bh * (19 - k) / 20.0 << "\" width=\"14\" height=\""
        << bh / 20.0 + 0.5 << "\" fill=\"" << gate_color((k + 0.5) / 20.0) << "\"/>\n";
  out << "<text x=\"" << bx0 + 18 << "\" y=\"" << T + 8 << "\">1</text>\n"
      << "<text x=\"" << bx0 + 18 << "\" y=\"" << T + bh << "\">0</text>\n"
      << "<text x=\"" << L << "\" y=\"" << H - 12 << "\">step 0 to " << bx.cols() << "</text>\n"
      << "</svg>\n";
  return {px, py, svg};
}

}  // namespace shapectl
