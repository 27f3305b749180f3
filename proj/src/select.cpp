#include "uda/select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace uda {

namespace {

void column_sums(const Tensor<float>& features, std::vector<double>& acc) {
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (acc.empty()) acc.assign(d, 0.0);
  if (acc.size() != d) throw DimensionError("feature widths differ");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) acc[j] += features.at(i, j);
}

double distance_of_sums(const std::vector<double>& s, std::size_t ns, const std::vector<double>& t, std::size_t nt) {
  if (s.size() != t.size()) throw DimensionError("feature widths differ");
  double total = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double diff = s[j] / double(ns) - t[j] / double(nt);
    total += diff * diff;
  }
  return std::sqrt(total);
}

void require_features(const Tensor<float>& f) {
  if (f.rank() != 2) throw DimensionError("features must be [N,D], got " + shape_string(f.shape()));
  if (f.dim(0) == 0) throw UsageError("mean distance needs nonempty sets");
}

std::vector<double> normalized(std::span<const double> x) {
  double lowest = 0;
  for (double e : x) {
    if (e < 0 || !std::isfinite(e)) throw UsageError("measurements must be finite and nonnegative");
    if (e > 0 && (lowest == 0 || e < lowest)) lowest = e;
  }
  std::vector<double> out(x.size(), 1.0);
  if (lowest > 0) std::transform(x.begin(), x.end(), out.begin(), [&](double e) { return e / lowest; });
  return out;
}

double parse_double(const std::string& cell, std::size_t line) {
  try {
    std::size_t used = 0;
    const double value = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return value;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": '" + cell + "' is not a number");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

double mean_distance(const Tensor<float>& source_features, const Tensor<float>& target_features) {
  require_features(source_features);
  require_features(target_features);
  std::vector<double> s, t;
  column_sums(source_features, s);
  column_sums(target_features, t);
  return distance_of_sums(s, source_features.dim(0), t, target_features.dim(0));
}

double mean_distance(const Model<float>& model, const Tensor<float>& source_images, const Tensor<float>& target_images,
                     std::size_t chunk) {
  if (source_images.rank() == 0 || source_images.dim(0) == 0 || target_images.rank() == 0 || target_images.dim(0) == 0) {
    throw UsageError("mean distance needs nonempty sets");
  }
  if (chunk == 0) throw UsageError("chunk size must be positive");
  auto sums = [&](const Tensor<float>& images) {
    std::vector<double> acc;
    for (std::size_t begin = 0; begin < images.dim(0); begin += chunk) {
      const std::size_t end = std::min(images.dim(0), begin + chunk);
      column_sums(model.features(images.slice(begin, end), chunk), acc);
    }
    return acc;
  };
  return distance_of_sums(sums(source_images), source_images.dim(0), sums(target_images), target_images.dim(0));
}

std::vector<double> combine(std::span<const double> v, std::span<const double> w) {
  if (v.size() != w.size()) throw UsageError("v and w must have equal length");
  const auto nv = normalized(v), nw = normalized(w);
  std::vector<double> u(v.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = nv[i] + nw[i];
  return u;
}

std::size_t early_stop(std::span<const double> u) {
  if (u.empty()) throw UsageError("cannot pick an epoch from an empty trace");
  return static_cast<std::size_t>(std::min_element(u.begin(), u.end()) - u.begin());
}

Selection select_run(std::span<const RunTrace> runs) {
  if (runs.empty()) throw UsageError("no runs to select from");
  Selection best;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    auto u = combine(runs[r].v, runs[r].w);
    const std::size_t epoch = early_stop(u);
    if (r == 0 || u[epoch] < best.score) best = {r, epoch, u[epoch], std::move(u)};
  }
  return best;
}

RunTrace read_training_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + " is empty");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const auto epoch_col = column("epoch"), v_col = column("v"), w_col = column("w"), ckpt_col = column("checkpoint");
  if (epoch_col < 0 || v_col < 0 || w_col < 0) throw ParseError(path.string() + ": header lacks epoch, v or w");

  RunTrace trace;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    if (parse_double(cells[epoch_col], line_no) != double(trace.v.size())) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": epochs must count up from 0");
    }
    const double v = parse_double(cells[v_col], line_no), w = parse_double(cells[w_col], line_no);
    if (!(v >= 0) || !(w >= 0 && w <= 1)) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": v must be >= 0 and w in [0,1]");
    }
    trace.v.push_back(v);
    trace.w.push_back(w);
    trace.checkpoints.push_back(ckpt_col >= 0 ? cells[ckpt_col] : std::string{});
  }
  if (trace.v.empty()) throw ParseError(path.string() + " has no epochs");
  return trace;
}

void write_selection_report(const std::filesystem::path& path, const Selection& selection,
                            std::span<const RunTrace> runs, std::span<const std::string> run_names) {
  nlohmann::json report;
  const RunTrace& chosen = runs[selection.run];
  report["run"] = selection.run < run_names.size() ? run_names[selection.run] : std::to_string(selection.run);
  report["epoch"] = selection.epoch;
  report["score"] = selection.score;
  report["v"] = chosen.v[selection.epoch];
  report["w"] = chosen.w[selection.epoch];
  report["checkpoint"] = chosen.checkpoints.at(selection.epoch);
  nlohmann::json traces = nlohmann::json::array();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    traces.push_back({{"run", r < run_names.size() ? run_names[r] : std::to_string(r)},
                      {"v", runs[r].v},
                      {"w", runs[r].w},
                      {"u", combine(runs[r].v, runs[r].w)}});
  }
  report["traces"] = traces;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write selection report " + path.string());
  out << report.dump(2) << '\n';
}

}  // namespace uda
