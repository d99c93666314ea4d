#pragma once

#include <map>
#include <memory>
#include <tuple>

#include "maxhmm/hmm.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/transforms.hpp"

namespace maxhmm::seq {

// One labeled transition decision: from src_state after seeing obs, which
// next state follows. Candidate labels are next states; their active sets
// encode (source, observation, next) features.
struct SeqEventBlock {
  std::string sequence_id;
  int position = 0;  // 1-based within the sequence
  std::string src_state;
  std::string obs;
  std::string gold_next;
  std::vector<Candidate> candidates;
};

// Locally normalized per-source-state transition models over one shared
// feature id space; each per-state model keeps only the features observed in
// its own blocks (kept maps new -> old ids).
struct MemmModel {
  std::vector<std::string> states;
  std::map<std::string, MaxentModel> per_state;
  std::map<std::string, std::vector<FeatureId>> kept;
  int num_features = 0;

  const MaxentModel& model_for(const std::string& state) const;
};

struct MemmTrainReport {
  std::map<std::string, double> residuals;
  std::map<std::string, int> iterations;
  std::map<std::string, std::vector<double>> ll_traces;
};

// Groups blocks by source state and fits each group independently; the local
// normalization is exactly the per-subnetwork renormalization of the network
// construction below.
std::pair<MemmModel, MemmTrainReport> train_memm(const std::vector<SeqEventBlock>& blocks,
                                                 const TrainOptions& opts);

// P(next | src, obs) for one block, through the source state's model.
Distribution memm_transition(const MemmModel& model, const SeqEventBlock& block);

struct DecodeResult {
  std::vector<std::string> path;  // s_0 .. s_T
  double log_prob = 0.0;          // log of pi(s_0) * product of transitions
  double total_mass = 0.0;        // sum over all state sequences (1 when complete)
};

// Max-product decode over P(s_0..s_T | o_1..o_T) = pi(s_0) * prod_t
// P_{s_{t-1}}(s_t | o_t). The sequence may carry several blocks per position,
// one per possible source state; pi defaults to uniform over the sources
// present at position 1. Ties prefer the lexicographically smaller state.
DecodeResult memm_sequence_posterior(const MemmModel& model,
                                     const std::vector<SeqEventBlock>& sequence,
                                     const std::map<std::string, double>* initial = nullptr);

// A transition model prepared for network building: grouped, completed and
// sub-unit, with the matching grouped candidate block.
struct TransitionComponent {
  std::string src;
  MaxentModel model;
  GroupPartition part;
  EventBlock block;
};

TransitionComponent make_component(const std::string& src, const MaxentModel& model,
                                   const EventBlock& block);

enum class SeqNetKind { maxent_hmm, memm, crf };

struct SeqNetSpec {
  SeqNetKind kind = SeqNetKind::memm;
  int horizon = 1;
  std::vector<std::string> states;
  std::string initial_state;
  // components[t][src]: the transition component applying at position t+1.
  std::vector<std::map<std::string, TransitionComponent>> components;
  // maxent_hmm only: symbol emitted when taking src -> next.
  std::map<std::pair<std::string, std::string>, hmm::SymbolId> emit;
};

struct SeqNetBuild {
  hmm::HmmNetwork net;
  std::shared_ptr<std::vector<double>> params;
  // Clean-pass arcs (branch arc then the chain's advancing arcs) per
  // (position index, src, next); the unnormalized path weight of a state
  // sequence is the product of these arcs' probabilities.
  std::map<std::tuple<int, std::string, std::string>, std::vector<int>> routes;
  std::map<std::pair<int, std::string>, hmm::StateId> anchors;
};

// Unrolls the transition clouds over the horizon. Failure arcs return to the
// owning cloud's anchor for memm and maxent_hmm (the subnetwork entrance /
// the beginning of the state) but all the way to the global start for crf,
// which is what shifts the normalization from per-step to whole-sequence.
// memm and maxent_hmm emit on the final chain arc (next-state index for
// memm, the caller's symbol for maxent_hmm); crf networks emit nothing.
SeqNetBuild build_sequence_network(const SeqNetSpec& spec);

}  // namespace maxhmm::seq
