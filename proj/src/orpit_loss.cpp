#include "orpit/orpit_loss.hpp"

#include <cmath>

#include "orpit/errors.hpp"
#include "orpit/metrics.hpp"

namespace orpit {

namespace {

template <typename S>
std::vector<double> widen(const std::vector<S>& v) {
  return std::vector<double>(v.begin(), v.end());
}

// Differentiable SI-SNR of a graph estimate against a constant target.
// scored_db is the double-precision value from the split search; when it sits
// on the cap the term is a constant and no graph is built for it.
template <typename S>
Tensor<S> si_snr_graph(Tape<S>& tape, Tensor<S> est, const std::vector<double>& target,
                       double scored_db) {
  if (scored_db == kSnrCapDb || scored_db == -kSnrCapDb)
    return tape.scalar(static_cast<S>(scored_db));

  const std::size_t n = target.size();
  double tm = 0.0;
  for (double v : target) tm += v;
  tm /= static_cast<double>(n);
  std::vector<S> r0(n);
  double rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = target[i] - tm;
    r0[i] = static_cast<S>(v);
    rr += v * v;
  }

  // Copied: pushing constants can reallocate the tape's node storage.
  const std::vector<int> shape = est.shape();
  auto ones = tape.constant(shape, std::vector<S>(n, static_cast<S>(1)));
  auto r0c = tape.constant(shape, std::move(r0));
  auto e0 = tape.sub(est, tape.smul(ones, tape.mean(est)));
  auto c = tape.cmul(tape.dot(e0, r0c), 1.0 / rr);
  auto st = tape.smul(r0c, c);
  auto en = tape.sub(e0, st);
  auto st2 = tape.l2_norm_sq(st);
  auto en2 = tape.l2_norm_sq(en);
  return tape.cmul(tape.sub(tape.log10_safe(st2), tape.log10_safe(en2)), 10.0);
}

}  // namespace

template <typename S>
OrPitResult<S> or_pit_loss(Tensor<S> est_one, Tensor<S> est_rest,
                           const std::vector<Tensor<S>>& sources) {
  Tape<S>* tape = est_one.tape();
  const int n = static_cast<int>(sources.size());
  if (n < 2) throw InvalidArgument("or_pit_loss: need at least 2 sources");
  if (est_rest.tape() != tape) throw InvalidArgument("or_pit_loss: estimates on different tapes");
  const std::size_t len = est_one.numel();
  if (est_rest.numel() != len) throw InvalidArgument("or_pit_loss: estimate length mismatch");
  for (const auto& s : sources) {
    if (s.tape() != tape) throw InvalidArgument("or_pit_loss: source on a different tape");
    if (s.numel() != len) throw InvalidArgument("or_pit_loss: source length mismatch");
  }

  const std::vector<double> one_d = widen(est_one.value());
  const std::vector<double> rest_d = widen(est_rest.value());
  std::vector<std::vector<double>> src_d;
  src_d.reserve(sources.size());
  for (const auto& s : sources) src_d.push_back(widen(s.value()));

  LossBreakdown bd;
  std::vector<std::vector<double>> others_by_split(n);
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> others(len, 0.0);
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      for (std::size_t t = 0; t < len; ++t) others[t] += src_d[k][t];
    }
    const double one_term = -si_snr_core(one_d, src_d[i], true, nullptr);
    const double rest_term = -si_snr_core(rest_d, others, true, nullptr);
    const double total = one_term + rest_term / static_cast<double>(n - 1);
    bd.one_terms.push_back(one_term);
    bd.rest_terms.push_back(rest_term);
    if (i == 0 || total < best) {
      best = total;
      bd.best_index = i + 1;
    }
    others_by_split[i] = std::move(others);
  }
  bd.total = best;

  const int win = bd.best_index - 1;
  auto g_one = si_snr_graph(*tape, est_one, src_d[win], -bd.one_terms[win]);
  auto g_rest = si_snr_graph(*tape, est_rest, others_by_split[win], -bd.rest_terms[win]);
  auto loss = tape->add(tape->cmul(g_one, -1.0),
                        tape->cmul(g_rest, -1.0 / static_cast<double>(n - 1)));
  return OrPitResult<S>{loss, SplitAssignment{bd.best_index}, std::move(bd)};
}

template OrPitResult<float> or_pit_loss(Tensor<float>, Tensor<float>,
                                        const std::vector<Tensor<float>>&);
template OrPitResult<double> or_pit_loss(Tensor<double>, Tensor<double>,
                                         const std::vector<Tensor<double>>&);

double upit_loss_n2(const std::vector<double>& est_a, const std::vector<double>& est_b,
                    const std::vector<double>& s1, const std::vector<double>& s2) {
  // Written as one_term + rest_term/1.0 so the two candidates run through the
  // same expression shape as the N=2 split search.
  const double keep = -si_snr_core(est_a, s1, true, nullptr) +
                      -si_snr_core(est_b, s2, true, nullptr) / 1.0;
  const double swap = -si_snr_core(est_a, s2, true, nullptr) +
                      -si_snr_core(est_b, s1, true, nullptr) / 1.0;
  return swap < keep ? swap : keep;
}

}  // namespace orpit
