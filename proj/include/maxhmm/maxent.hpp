#pragma once

#include "maxhmm/types.hpp"

namespace maxhmm {

// P(label | event). Scores are summed in log space and the maximum is
// subtracted before exponentiation, so weight products that would under- or
// overflow a double still normalize correctly.
Distribution evaluate(const MaxentModel& model, const EventBlock& block);

// Same distribution in candidate order. This is the hot-path form used by the
// counting kernels; `log_weights` must hold std::log of each model weight.
void candidate_probs(const std::vector<double>& log_weights, const EventBlock& block,
                     std::vector<double>& out);

// Reference evaluation by raw weight products, no log space. Kept only so the
// tests can pin the log-space path against direct arithmetic.
Distribution evaluate_direct(const MaxentModel& model, const EventBlock& block);

double log_likelihood(const MaxentModel& model, const Dataset& data);

// Per-feature activation totals over true candidates.
CountVector observed_counts(const Dataset& data);

// Per-feature totals of P(candidate | event) over all candidates. The default
// entry point runs chunked over events (parallel when OpenMP is on); the
// _serial variant is the reference implementation it is tested against.
CountVector expected_counts(const MaxentModel& model, const Dataset& data);
CountVector expected_counts_serial(const MaxentModel& model, const Dataset& data);

// Largest active-set size over all candidates; the iterative-scaling exponent
// is 1 over this value.
int max_active_count(const Dataset& data);

double max_relative_residual(const CountVector& expected, const CountVector& observed);

struct GisResult {
  MaxentModel model;
  std::vector<double> ll_trace;  // log-likelihood before each update, plus final
  int iterations = 0;
  double final_residual = 0.0;
};

// Iterative scaling: w_i *= (observed_i / expected_i)^(1/C) with C the max
// active-set size. Converged when every relative residual is within opts.tol.
// Event weights, when given, scale each event's contribution to both count
// vectors and to the likelihood (used by the hidden-variable trainer).
GisResult train_gis(const MaxentModel& init, const Dataset& data, const TrainOptions& opts,
                    const std::vector<double>* event_weights = nullptr);

struct PruneResult {
  Dataset data;
  std::vector<FeatureId> remap;  // old id -> new id, -1 when dropped
  std::vector<FeatureId> kept;   // new id -> old id
};

// Drops features that never fire on a true candidate and renumbers the rest.
PruneResult prune_unobserved(const Dataset& data);

}  // namespace maxhmm
