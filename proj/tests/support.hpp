#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "orpit/rng.hpp"
#include "orpit/tensor.hpp"

namespace orpit_test {

// Relative error metric shared by every finite-difference check. The 1.0 in
// the denominator keeps tiny gradients from blowing up the ratio.
inline double rel_err(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1.0});
  return std::fabs(a - b) / denom;
}

template <class S>
using BuildFn =
    std::function<orpit::Tensor<S>(orpit::Tape<S>&, const std::vector<orpit::Tensor<S>>&)>;

template <class S>
double eval_loss(const std::vector<orpit::TensorData<S>>& inputs, const BuildFn<S>& build) {
  orpit::Tape<S> tape;
  std::vector<orpit::Tensor<S>> xs;
  xs.reserve(inputs.size());
  for (const auto& in : inputs) xs.push_back(tape.input(in.shape, in.data, false));
  auto loss = tape.sum(build(tape, xs));  // sum() tolerates build fns returning non-scalars
  return static_cast<double>(loss.value()[0]);
}

// Max over all coordinates of all inputs of rel_err(analytic, central difference).
// Central differences use the actually-representable step so the float mode
// stays honest. min_grad_mag skips coordinates whose analytic gradient is
// smaller: at 32 bits the quotient for those is all forward rounding noise.
template <class S>
double max_fd_relerr(std::vector<orpit::TensorData<S>> inputs, const BuildFn<S>& build,
                     double eps, double min_grad_mag = 0.0) {
  std::vector<std::vector<S>> analytic;
  {
    orpit::Tape<S> tape;
    std::vector<orpit::Tensor<S>> xs;
    xs.reserve(inputs.size());
    for (const auto& in : inputs) xs.push_back(tape.input(in.shape, in.data, true));
    auto loss = tape.sum(build(tape, xs));
    tape.backward(loss);
    for (const auto& x : xs) analytic.push_back(x.grad());
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    for (std::size_t i = 0; i < inputs[j].data.size(); ++i) {
      if (std::fabs(static_cast<double>(analytic[j][i])) < min_grad_mag) continue;
      const S saved = inputs[j].data[i];
      const S xp = static_cast<S>(static_cast<double>(saved) + eps);
      const S xm = static_cast<S>(static_cast<double>(saved) - eps);
      inputs[j].data[i] = xp;
      const double lp = eval_loss(inputs, build);
      inputs[j].data[i] = xm;
      const double lm = eval_loss(inputs, build);
      inputs[j].data[i] = saved;
      const double h = static_cast<double>(xp) - static_cast<double>(xm);
      const double fd = (lp - lm) / h;
      worst = std::max(worst, rel_err(static_cast<double>(analytic[j][i]), fd));
    }
  }
  return worst;
}

template <class S>
orpit::TensorData<S> random_tensor(orpit::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                   double hi = 1.0) {
  orpit::TensorData<S> t;
  t.shape = std::move(shape);
  t.data.resize(t.numel());
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace orpit_test
