#include "orpit/adam.hpp"

#include <cmath>

#include "orpit/errors.hpp"

namespace orpit {

AdamState::AdamState(AdamConfig cfg, const std::vector<std::size_t>& param_sizes) : cfg_(cfg) {
  if (cfg.lr <= 0 || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 ||
      cfg.eps <= 0 || cfg.weight_decay < 0)
    throw InvalidArgument("adam: config values out of range");
  m_.reserve(param_sizes.size());
  v_.reserve(param_sizes.size());
  for (std::size_t n : param_sizes) {
    m_.emplace_back(n, 0.f);
    v_.emplace_back(n, 0.f);
  }
}

void adam_step(std::vector<std::vector<float>*> params,
               const std::vector<const std::vector<float>*>& grads, AdamState& state) {
  if (params.size() != state.m_.size() || grads.size() != state.m_.size())
    throw InvalidArgument("adam_step: parameter/gradient count does not match state");
  state.step_ += 1;
  const AdamConfig& c = state.cfg_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_));
  for (std::size_t j = 0; j < params.size(); ++j) {
    std::vector<float>& p = *params[j];
    const std::vector<float>& g = *grads[j];
    std::vector<float>& m = state.m_[j];
    std::vector<float>& v = state.v_[j];
    if (p.size() != m.size() || g.size() != m.size())
      throw InvalidArgument("adam_step: buffer size does not match state");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double update = mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - c.lr * update);
    }
  }
}

}  // namespace orpit
