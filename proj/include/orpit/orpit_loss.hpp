#pragma once

#include <vector>

#include "orpit/tensor.hpp"

namespace orpit {

// Identifies the "one" source of a one-vs-rest split. Counts from 1.
struct SplitAssignment {
  int chosen_index = 1;
};

// Double-precision record of the split search. total is the winning split's
// one_term + rest_term/(N-1); exact-match tests and checkpoint-independent
// scoring read these, not the graph value.
struct LossBreakdown {
  std::vector<double> one_terms;
  std::vector<double> rest_terms;
  int best_index = 1;  // counts from 1, ties to the lowest
  double total = 0.0;
};

template <typename S>
struct OrPitResult {
  Tensor<S> loss;
  SplitAssignment best;
  LossBreakdown breakdown;
};

// Scores all N one-vs-rest splits in double precision:
//   total_i = -si_snr(est_one, s_i) + (1/(N-1)) * -si_snr(est_rest, sum of others)
// then builds the differentiable loss for the winning split only, on the tape
// owning est_one. Sources enter the graph as constants. Terms whose SI-SNR
// hit the cap become gradient-free constants.
template <typename S>
OrPitResult<S> or_pit_loss(Tensor<S> est_one, Tensor<S> est_rest,
                           const std::vector<Tensor<S>>& sources);

// Conventional two-source uPIT in plain double arithmetic: minimum over both
// channel permutations of the summed negative SI-SNR. Matches the N=2
// or_pit_loss total bit for bit.
double upit_loss_n2(const std::vector<double>& est_a, const std::vector<double>& est_b,
                    const std::vector<double>& s1, const std::vector<double>& s2);

}  // namespace orpit
