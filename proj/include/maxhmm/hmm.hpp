#pragma once

#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "maxhmm/types.hpp"

namespace maxhmm::hmm {

using StateId = int;
using SymbolId = int;
inline constexpr SymbolId kNoEmit = -1;

// Arc probabilities are either tied to a shared parameter table (theta or
// 1 - theta for the same entry) or fixed structural constants.
enum class Polarity { direct, complement, fixed };

struct ParamRef {
  Polarity pol = Polarity::fixed;
  int param = -1;
  double value = 0.0;

  static ParamRef direct(int id) { return {Polarity::direct, id, 0.0}; }
  static ParamRef complement(int id) { return {Polarity::complement, id, 0.0}; }
  static ParamRef fixed(double v) { return {Polarity::fixed, -1, v}; }
};

struct Arc {
  StateId src = 0;
  StateId dst = 0;
  ParamRef prob;
  SymbolId emit = kNoEmit;
};

// State-emitting is not modeled; emission sits on arcs, and arcs without a
// symbol are traversed silently. Loops through silent arcs are legal and are
// summed exactly by the engine (dense linear solves, no truncation).
struct HmmNetwork {
  int num_states = 0;
  StateId start = 0;
  StateId end = 0;
  std::vector<Arc> arcs;
  std::shared_ptr<std::vector<double>> params;

  double arc_prob(const Arc& a) const;
  int num_symbols() const;  // 1 + max emitted symbol, 0 when fully silent
};

// Structural problems: bad state or parameter references, probabilities
// outside range, outgoing sums off 1, states that cannot occur on a
// start-to-end path, an end state with outgoing arcs. Empty means sound.
std::vector<std::string> validate(const HmmNetwork& net);

// P(first emitted symbol, absorbed at end) for every symbol. For networks
// that emit exactly one symbol per complete path this is the output
// distribution and sums to 1.
std::map<SymbolId, double> output_distribution(const HmmNetwork& net);

double observation_log_prob(const HmmNetwork& net, SymbolId observed);

struct ArcCounts {
  std::vector<double> arc;     // expected traversals, aligned with net.arcs
  std::vector<double> visits;  // expected visits per state
  double log_prob = 0.0;       // log P(observed)
};

// Expected traversal counts conditional on the network emitting exactly
// `observed` and reaching end. Throws when that observation has zero
// probability.
ArcCounts expected_counts(const HmmNetwork& net, SymbolId observed);

struct ParamCounts {
  std::vector<double> direct;
  std::vector<double> complement;

  explicit ParamCounts(size_t n = 0) : direct(n, 0.0), complement(n, 0.0) {}
  void add(const ParamCounts& o);
};

void accumulate_param_counts(const HmmNetwork& net, const ArcCounts& counts, ParamCounts& into);

struct BwUpdate {
  std::vector<double> params;
  std::vector<int> untouched;  // entries with zero traversal mass, left as-is
};

// Tied reestimation: theta_j = direct_j / (direct_j + complement_j).
BwUpdate bw_update(const ParamCounts& counts, const std::vector<double>& current);

struct TrainingInstance {
  HmmNetwork net;
  SymbolId observe = kNoEmit;
};

// Per-instance counting hook. When it returns true it has added this
// instance's parameter counts and log-probability itself (a closed form);
// otherwise the generic engine runs. Must be safe to call concurrently.
using CountsFn = std::function<bool(const TrainingInstance&, ParamCounts&, double&)>;

struct FbOptions {
  int max_iters = 1000;
  // Stop when the likelihood gain drops to tol * max(1, |ll|). Set <= 0 to
  // rely on `stop` alone.
  double ll_delta_tol = 1e-9;
  bool record_trace = true;
  // Parameter index groups rescaled after every update so each group's
  // maximum lands back on stable_max. Safe whenever each group corresponds
  // to an exact feature group of the underlying model.
  std::vector<std::vector<int>> rescale_groups;
  double stable_max = 0.9;
  // Extra stopping rule checked on the freshly updated table.
  std::function<bool(const std::vector<double>&)> stop;
  CountsFn counts_fn;
};

struct FbResult {
  std::vector<double> params;
  std::vector<double> ll_trace;  // before each update, plus the final table
  int iterations = 0;
};

// Instances for one iteration; called once when `rotate` is false, every
// iteration otherwise. All instances must share one parameter table.
using SegmentBuilder = std::function<std::vector<TrainingInstance>(int iteration)>;

FbResult train_fb(const SegmentBuilder& build, std::shared_ptr<std::vector<double>> params,
                  const FbOptions& opts, bool rotate);

}  // namespace maxhmm::hmm
