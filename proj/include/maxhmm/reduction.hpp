#pragma once

#include <memory>
#include <utility>

#include "maxhmm/hmm.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/transforms.hpp"

namespace maxhmm::red {

// Feature -> group lookup, built once per partition.
struct GroupIndex {
  std::vector<int> owner;  // feature id -> group index, -1 when ungrouped
  int n_groups = 0;

  GroupIndex() = default;
  GroupIndex(const GroupPartition& part, int num_features);
};

// Chain positions for every candidate of one event: the candidate's active
// features ordered by rotated group index. Candidates missing a group simply
// get a shorter chain; a candidate with no active features gets length 0.
struct ChainLayout {
  std::vector<std::vector<std::pair<int, FeatureId>>> positions;  // (group, feature)
  double branch_prob = 0.0;                                       // 1 / |candidates|
};

ChainLayout make_layout(const GroupIndex& gi, const EventBlock& block, int rotation);

// The restart network for one event: a fixed non-emitting branch arc from
// start to each candidate's chain entry; chain node j advances with
// probability w_j and falls back to start with 1 - w_j; the final advance
// emits the candidate's index and enters end. Zero-length chains become a
// fixed emitting arc start -> end. Arc probabilities reference `params`
// (table index = feature id), so all weights must be strictly below 1.
hmm::HmmNetwork build_event_network(const EventBlock& block, const ChainLayout& layout,
                                    std::shared_ptr<std::vector<double>> params);

struct SegmentedNetwork {
  std::vector<hmm::TrainingInstance> segments;  // one per event, dataset order
  std::shared_ptr<std::vector<double>> params;
};

// One segment per event over a shared table; each segment observes its own
// event's true candidate and its failure arcs return to its own start.
// `rotation` cyclically shifts the group-to-position map.
SegmentedNetwork build_training_network(const Dataset& data, const GroupIndex& gi, int rotation,
                                        std::shared_ptr<std::vector<double>> params);

// Conditional expected counts for a restart-chain network in closed form:
// per-attempt success probability, geometric retry count, per-position
// failure attribution. Must agree with the generic engine to 1e-10; throws
// on any topology build_event_network would not produce.
hmm::ArcCounts closed_form_counts(const hmm::HmmNetwork& net, hmm::SymbolId observed);

struct HmmTrainReport {
  int iterations = 0;
  double final_residual = 0.0;
  double final_ll = 0.0;
  std::vector<double> ll_trace;
  int n_groups = 0;
  int n_complements = 0;
  // Largest total-variation distance over training events against a
  // reference model, when one is supplied. NaN otherwise.
  double max_tv_vs_reference = 0.0;
};

struct HmmTrainOptions {
  TrainOptions base;
  bool rotate = true;
  bool use_closed_form = true;  // off: every count through the generic engine
};

// The full pipeline: group, complete, push sub-unit, string the per-event
// segments together, run forward-backward until the constraint residual of
// the read-back model meets opts.base.tol, then strip the complements again.
std::pair<MaxentModel, HmmTrainReport> train_maxent_via_hmm(
    const Dataset& data, const HmmTrainOptions& opts, const MaxentModel* reference = nullptr);

}  // namespace maxhmm::red
