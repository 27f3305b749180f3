#pragma once

#include <map>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include "uda/tensor.hpp"

namespace uda {

/// A parameter tensor together with the stable name used for optimizer state
/// and checkpoints.
template <class T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

struct Milestone {
  std::size_t epoch;
  double factor;
};

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Milestone> milestones;

  void validate() const;
};

/// Learning rate in effect during a 0-based epoch: the initial rate times the
/// factor of every milestone whose epoch is <= the given one.
double learning_rate_at(const SgdConfig& cfg, std::size_t epoch);

/// Momentum SGD with weight decay folded into the gradient:
///   g = grad + wd * p;  buf = momentum * buf + g;  p -= lr * buf
template <class T>
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg);

  const SgdConfig& config() const { return cfg_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  void set_epoch(std::size_t epoch) { set_learning_rate(learning_rate_at(cfg_, epoch)); }

  /// Updates every listed parameter. Each must carry a gradient.
  void step(std::span<const NamedParam<T>> params);

  std::size_t steps_taken() const { return steps_; }

  /// Momentum buffers keyed by parameter name.
  const std::map<std::string, std::vector<T>>& buffers() const { return buffers_; }
  void restore(std::map<std::string, std::vector<T>> buffers, std::size_t steps);

 private:
  SgdConfig cfg_;
  double lr_;
  std::map<std::string, std::vector<T>> buffers_;
  std::size_t steps_ = 0;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace uda
