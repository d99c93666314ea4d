#pragma once

#include <random>
#include <vector>

#include "maxhmm/maxent.hpp"
#include "maxhmm/transforms.hpp"

// Shared construction helpers for the suites. The two-candidate fixture with
// weights (0.5, 0.5, 0.5) against (0.5, 0.5, 0.25) recurs across modules: its
// products are 0.125 and 0.0625, so the conditional is {L: 2/3, M: 1/3}.
namespace fix {

inline maxhmm::EventBlock two_chain_block() {
  maxhmm::EventBlock b;
  b.event_id = "f1";
  b.true_label = "L";
  b.candidates.push_back({"L", {0, 1, 2}});
  b.candidates.push_back({"M", {3, 4, 5}});
  return b;
}

inline maxhmm::MaxentModel two_chain_model() {
  maxhmm::MaxentModel m;
  m.weights = {0.5, 0.5, 0.5, 0.5, 0.5, 0.25};
  return m;
}

inline maxhmm::Dataset two_chain_dataset() {
  maxhmm::Dataset d;
  d.events.push_back(two_chain_block());
  d.num_features = 6;
  return d;
}

// Random dataset with candidate-specific feature subsets. Candidates may
// share features and may have empty active sets; labels are o0..o{c-1}.
inline maxhmm::Dataset rand_dataset(std::uint64_t seed, int outputs, int features, int events,
                                    double density = 0.35) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick_true(0, outputs - 1);
  maxhmm::Dataset d;
  d.num_features = features;
  for (int e = 0; e < events; ++e) {
    maxhmm::EventBlock b;
    b.event_id = "e" + std::to_string(e);
    for (int c = 0; c < outputs; ++c) {
      maxhmm::Candidate cand;
      cand.label = "o" + std::to_string(c);
      for (int f = 0; f < features; ++f)
        if (u(rng) < density) cand.active.push_back(f);
      b.candidates.push_back(std::move(cand));
    }
    b.true_label = "o" + std::to_string(pick_true(rng));
    d.events.push_back(std::move(b));
  }
  return d;
}

inline maxhmm::MaxentModel rand_model(std::uint64_t seed, int features, double spread = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  maxhmm::MaxentModel m;
  m.weights.reserve(static_cast<size_t>(features));
  for (int f = 0; f < features; ++f) m.weights.push_back(std::exp(u(rng)));
  return m;
}

// Random model and dataset pushed through the grouping pipeline: completed
// groups, materialized complement activations, all weights strictly below 1.
struct SubunitInstance {
  maxhmm::MaxentModel model;
  maxhmm::Dataset data;
  maxhmm::GroupPartition part;
};

inline SubunitInstance rand_subunit(std::uint64_t seed, int outputs, int features, int events) {
  maxhmm::Dataset d = rand_dataset(seed, outputs, features, events);
  maxhmm::MaxentModel m = rand_model(seed ^ 0xabcdef, features);
  maxhmm::GroupPartition part = maxhmm::partition_exclusive(d);
  maxhmm::GroupedModel gm = maxhmm::complete_groups(m, d, part);
  SubunitInstance out;
  out.model = maxhmm::to_subunit(gm.model, gm.partition);
  out.data = std::move(gm.data);
  out.part = std::move(gm.partition);
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size() && i < b.size(); ++i)
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  if (a.size() != b.size()) worst = 1e300;
  return worst;
}

}  // namespace fix
