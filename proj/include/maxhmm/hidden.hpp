#pragma once

#include <memory>
#include <utility>

#include "maxhmm/hmm.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/transforms.hpp"

namespace maxhmm::hv {

// Two-stage event: per hidden value, the selector candidate (features of the
// value given the history) and the output candidates (features of each output
// given value and history). Output labels must agree across hidden values.
struct HiddenEventBlock {
  std::string event_id;
  std::string true_label;
  std::vector<Candidate> selector;
  std::vector<std::vector<Candidate>> outputs;
};

struct HiddenDataset {
  std::vector<HiddenEventBlock> events;
  std::vector<std::string> hidden_values;
  int selector_features = 0;
  int emitter_features = 0;
};

// A maxent chooser over hidden values composed with one maxent emitter per
// value. When fixed_outputs is nonempty the emitters are deterministic: value
// z always produces fixed_outputs[z] and the emitters vector is unused.
struct HiddenMaxentModel {
  std::vector<std::string> hidden_values;
  MaxentModel selector;
  std::vector<MaxentModel> emitters;
  std::vector<std::string> fixed_outputs;

  bool deterministic() const { return !fixed_outputs.empty(); }
  int n_hidden() const { return static_cast<int>(hidden_values.size()); }
};

// Canonical lift of a plain dataset: hidden values z0..z{K-1}; selector
// feature (z, j) has id z*g + j and fires for value z exactly when plain
// feature j fires for any of the event's candidates; each emitter works on an
// unchanged copy of the plain feature space.
HiddenDataset augment_dataset(const Dataset& plain, int n_hidden);
HiddenEventBlock augment_block(const EventBlock& plain, int n_hidden, int plain_features);

void validate_hidden(const HiddenDataset& data);

// Output labels in block order, and the symbol index of one label.
std::vector<std::string> output_labels(const HiddenEventBlock& block);
int output_symbol(const HiddenEventBlock& block, const std::string& label);

// P(x | h) = sum over z of P_sel(z | h) * P_em_z(x | z, h).
Distribution hv_evaluate(const HiddenMaxentModel& model, const HiddenEventBlock& block);

// P(z | x, h) by Bayes over the two stages.
Distribution hv_posterior(const HiddenMaxentModel& model, const HiddenEventBlock& block,
                          const std::string& observed);

struct HvPrediction {
  std::string label;  // argmax, ties to the lexicographically first label
  Distribution marginal;
  std::map<std::string, Distribution> hidden_by_label;
};
HvPrediction hv_predict(const HiddenMaxentModel& model, const HiddenEventBlock& block);

// Both stages grouped, completed and pushed sub-unit, sharing one parameter
// table: selector weights first, then each emitter block. Blocks in `data`
// carry the materialized complement activations.
struct GroupedHidden {
  HiddenDataset data;
  MaxentModel selector;
  GroupPartition sel_part;
  std::vector<MaxentModel> emitters;            // per z, local feature ids
  std::vector<GroupPartition> em_part;
  std::vector<std::string> fixed_outputs;
  int sel_size = 0;
  std::vector<int> em_offset;
  int table_size = 0;

  std::vector<double> joint_table() const;
  std::vector<std::vector<int>> rescale_groups() const;  // table-index groups
};

GroupedHidden group_hidden(const HiddenMaxentModel& init, const HiddenDataset& data);

// Two-tier restart network for one event: from start, fixed 1/K arcs into the
// selector chains; selector failures return to start; a completed selector
// chain enters its value's cloud entry; emitter chains hang off that entry
// and their failures return to it; a completed emitter chain emits the output
// symbol and enters end. output_distribution matches hv_evaluate.
hmm::HmmNetwork build_hidden_network(const GroupedHidden& gh, int event_index, int rotation,
                                     std::shared_ptr<std::vector<double>> params);

// Closed-form conditional counts for the two-tier topology: per-cloud
// geometric retry mass plus commit posteriors propagated down the tree.
// Agrees with the generic engine to 1e-10.
hmm::ArcCounts cascade_counts(const hmm::HmmNetwork& net, hmm::SymbolId observed);

struct HvTrainReport {
  int iterations = 0;
  double final_ll = 0.0;
  std::vector<double> ll_trace;
};

struct HvTrainOptions {
  TrainOptions base;   // tol is the relative likelihood-gain stopping bound
  bool rotate = true;
  bool use_closed_form = true;
  int em_inner_iters = 5;  // scaling steps per M-step in the em trainer
};

HiddenMaxentModel default_hv_init(const HiddenDataset& data, std::uint64_t seed);

// Forward-backward on the concatenated two-tier segments, one per event,
// tied tables for both stages.
std::pair<HiddenMaxentModel, HvTrainReport> train_hv_fb(const HiddenDataset& data,
                                                        const HvTrainOptions& opts,
                                                        const HiddenMaxentModel* init = nullptr);

// Classical EM reference: hv_posterior E-step, fractional-count iterative
// scaling M-steps for selector and emitters.
std::pair<HiddenMaxentModel, HvTrainReport> train_hv_em_gis(const HiddenDataset& data,
                                                            const HvTrainOptions& opts,
                                                            const HiddenMaxentModel* init = nullptr);

}  // namespace maxhmm::hv
