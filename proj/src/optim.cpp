#include "uda/optim.hpp"

namespace uda {

void SgdConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  for (const auto& m : milestones) {
    if (!(m.factor > 0)) throw ConfigError("milestone factor must be positive");
  }
}

double learning_rate_at(const SgdConfig& cfg, std::size_t epoch) {
  double lr = cfg.learning_rate;
  for (const auto& m : cfg.milestones) {
    if (epoch >= m.epoch) lr *= m.factor;
  }
  return lr;
}

template <class T>
Sgd<T>::Sgd(SgdConfig cfg) : cfg_(std::move(cfg)), lr_(cfg_.learning_rate) {
  cfg_.validate();
}

template <class T>
void Sgd<T>::set_learning_rate(double lr) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  lr_ = lr;
}

template <class T>
void Sgd<T>::step(std::span<const NamedParam<T>> params) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) throw UsageError("parameter '" + p.name + "' has no gradient");
  }
  const T lr = static_cast<T>(lr_);
  const T mom = static_cast<T>(cfg_.momentum);
  const T wd = static_cast<T>(cfg_.weight_decay);
  for (const auto& p : params) {
    auto values = p.tensor->data();
    auto grad = std::as_const(*p.tensor).grad();
    auto& buf = buffers_[p.name];
    if (buf.size() != values.size()) buf.assign(values.size(), T{0});
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad[i] + wd * values[i];
      buf[i] = mom * buf[i] + g;
      values[i] -= lr * buf[i];
    }
  }
  ++steps_;
}

template <class T>
void Sgd<T>::restore(std::map<std::string, std::vector<T>> buffers, std::size_t steps) {
  buffers_ = std::move(buffers);
  steps_ = steps;
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace uda
