#include "uda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace uda {

// Defined only here, so no other translation unit can mint a SidecarKey.
struct eval_access::Gate {
  static const std::vector<int>& labels(const UnlabeledSet& set) {
    if (!set.has_sidecar()) throw UsageError("test set has no evaluation labels; pass the sidecar file");
    return set.sidecar(SidecarKey{});
  }
};

namespace {

std::uint64_t row_hash(const float* pixels, std::size_t count, int label) {
  std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(pixels), count * sizeof(float)));
  return splitmix64(h ^ static_cast<std::uint64_t>(label));
}

nlohmann::json nan_to_null(double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); }

}  // namespace

std::uint64_t test_set_checksum(const Tensor<float>& images, std::span<const int> labels) {
  if (images.rank() == 0 || images.dim(0) != labels.size()) throw DimensionError("image and label counts differ");
  const std::size_t per = images.size() / images.dim(0);
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) sum += row_hash(images.data().data() + i * per, per, labels[i]);
  return sum;
}

EvalReport score(std::span<const int> predicted, std::span<const int> truth, int num_classes, std::uint64_t test_checksum) {
  if (predicted.size() != truth.size()) throw DimensionError("prediction and label counts differ");
  if (truth.empty()) throw UsageError("cannot score an empty test set");
  const auto k = static_cast<std::size_t>(num_classes);
  EvalReport r;
  r.num_classes = k;
  r.total = truth.size();
  r.test_checksum = test_checksum;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || std::size_t(truth[i]) >= k || predicted[i] < 0 || std::size_t(predicted[i]) >= k) {
      throw LabelError("class index outside [0," + std::to_string(k) + ")");
    }
    ++r.confusion[truth[i]][predicted[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    r.correct += r.confusion[c][c];
    std::size_t row = 0;
    for (auto n : r.confusion[c]) row += n;
    r.per_class.push_back(row ? double(r.confusion[c][c]) / double(row) : std::numeric_limits<double>::quiet_NaN());
  }
  r.accuracy = double(r.correct) / double(r.total);
  return r;
}

EvalReport accuracy(const Model<float>& model, const UnlabeledSet& test) {
  const auto& truth = eval_access::Gate::labels(test);
  return score(model.predict(test.images()), truth, test.num_classes(), test_set_checksum(test.images(), truth));
}

EvalReport accuracy(const Model<float>& model, const LabeledSet& test) {
  return score(model.predict(test.images), test.labels, test.num_classes, test_set_checksum(test.images, test.labels));
}

DeltaReport compare(const EvalReport& baseline, const EvalReport& adapted) {
  if (baseline.test_checksum != adapted.test_checksum || baseline.total != adapted.total ||
      baseline.num_classes != adapted.num_classes) {
    throw UsageError("reports were computed on different test sets");
  }
  DeltaReport d;
  d.overall = adapted.accuracy - baseline.accuracy;
  for (std::size_t c = 0; c < baseline.num_classes; ++c) {
    const double delta = adapted.per_class[c] - baseline.per_class[c];
    d.per_class.push_back(delta);
    if (std::isnan(delta) || delta == 0) {
      ++d.unchanged;
    } else {
      ++(delta > 0 ? d.improved : d.worsened);
    }
  }
  return d;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "class,count,correct,accuracy";
  for (std::size_t c = 0; c < report.num_classes; ++c) out << ",pred_" << c;
  out << '\n';
  for (std::size_t c = 0; c < report.num_classes; ++c) {
    std::size_t row = 0;
    for (auto n : report.confusion[c]) row += n;
    out << c << ',' << row << ',' << report.confusion[c][c] << ',';
    if (!std::isnan(report.per_class[c])) out << report.per_class[c];
    for (auto n : report.confusion[c]) out << ',' << n;
    out << '\n';
  }
  out << "all," << report.total << ',' << report.correct << ',' << report.accuracy << '\n';
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json per_class = nlohmann::json::array();
  for (double a : report.per_class) per_class.push_back(nan_to_null(a));
  const nlohmann::json j{{"accuracy", report.accuracy},
                         {"total", report.total},
                         {"correct", report.correct},
                         {"num_classes", report.num_classes},
                         {"per_class", per_class},
                         {"confusion", report.confusion},
                         {"test_checksum", report.test_checksum}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

EvalReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.total = j.at("total").get<std::size_t>();
    r.correct = j.at("correct").get<std::size_t>();
    r.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& a : j.at("per_class")) r.per_class.push_back(a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>());
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.test_checksum = j.at("test_checksum").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_delta_json(const std::filesystem::path& path, const DeltaReport& delta) {
  nlohmann::json per_class = nlohmann::json::array();
  for (double d : delta.per_class) per_class.push_back(nan_to_null(d));
  const nlohmann::json j{{"overall", delta.overall},
                         {"per_class", per_class},
                         {"improved", delta.improved},
                         {"worsened", delta.worsened},
                         {"unchanged", delta.unchanged}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace uda
