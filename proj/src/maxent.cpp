#include "maxhmm/maxent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maxhmm/parallel.hpp"

namespace maxhmm {

namespace {

std::vector<double> log_weights_of(const MaxentModel& model) {
  std::vector<double> lw(model.weights.size());
  for (size_t i = 0; i < lw.size(); ++i) {
    if (!(model.weights[i] > 0.0))
      throw Error("model weight " + std::to_string(i) + " must be positive, got " +
                  std::to_string(model.weights[i]));
    lw[i] = std::log(model.weights[i]);
  }
  return lw;
}

void check_block(const EventBlock& block, int g) {
  if (block.candidates.empty()) throw Error("event " + block.event_id + ": no candidates");
  for (const auto& c : block.candidates)
    for (FeatureId f : c.active)
      if (f < 0 || f >= g)
        throw Error("event " + block.event_id + ": feature id " + std::to_string(f) +
                    " outside [0, " + std::to_string(g) + ")");
}

// One pass over the data: accumulates expected counts and, when obs_index
// is wanted, the log-likelihood of the true candidates.
struct PassResult {
  CountVector expected;
  double ll = 0.0;
};

PassResult count_pass(const std::vector<double>& lw, const Dataset& data,
                      const std::vector<double>* event_weights, bool chunked) {
  const int g = static_cast<int>(lw.size());
  const int n = static_cast<int>(data.events.size());
  const int nc = chunked ? par::chunk_count(n) : 1;
  std::vector<PassResult> partial(nc);
  for (auto& p : partial) p.expected.assign(g, 0.0);

  auto body = [&](int chunk, int begin, int end) {
    auto& acc = partial[chunk];
    std::vector<double> probs;
    for (int e = begin; e < end; ++e) {
      const EventBlock& ev = data.events[e];
      const double w = event_weights ? (*event_weights)[e] : 1.0;
      if (w == 0.0) continue;
      candidate_probs(lw, ev, probs);
      for (size_t c = 0; c < ev.candidates.size(); ++c) {
        const double p = w * probs[c];
        for (FeatureId f : ev.candidates[c].active) acc.expected[f] += p;
      }
      const int t = ev.true_index();
      if (t < 0) throw Error("event " + ev.event_id + ": true label missing");
      acc.ll += w * std::log(probs[t]);
    }
  };

  if (chunked) {
    par::for_each_chunk(n, body);
  } else {
    body(0, 0, n);
  }

  PassResult out;
  out.expected.assign(g, 0.0);
  for (const auto& p : partial) {
    for (int i = 0; i < g; ++i) out.expected[i] += p.expected[i];
    out.ll += p.ll;
  }
  return out;
}

CountVector observed_counts_weighted(const Dataset& data, const std::vector<double>* w) {
  CountVector obs(data.num_features, 0.0);
  for (size_t e = 0; e < data.events.size(); ++e) {
    const EventBlock& ev = data.events[e];
    const int t = ev.true_index();
    if (t < 0) throw Error("event " + ev.event_id + ": true label missing");
    const double we = w ? (*w)[e] : 1.0;
    for (FeatureId f : ev.candidates[t].active) obs[f] += we;
  }
  return obs;
}

}  // namespace

void candidate_probs(const std::vector<double>& log_weights, const EventBlock& block,
                     std::vector<double>& out) {
  const size_t nc = block.candidates.size();
  if (nc == 0) throw Error("event " + block.event_id + ": no candidates");
  out.resize(nc);
  double best = -std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < nc; ++c) {
    double s = 0.0;
    for (FeatureId f : block.candidates[c].active) s += log_weights[f];
    out[c] = s;
    best = std::max(best, s);
  }
  double z = 0.0;
  for (size_t c = 0; c < nc; ++c) {
    out[c] = std::exp(out[c] - best);
    z += out[c];
  }
  for (size_t c = 0; c < nc; ++c) out[c] /= z;
}

Distribution evaluate(const MaxentModel& model, const EventBlock& block) {
  check_block(block, model.num_features());
  std::vector<double> lw = log_weights_of(model);
  std::vector<double> probs;
  candidate_probs(lw, block, probs);
  Distribution d;
  for (size_t c = 0; c < block.candidates.size(); ++c) d[block.candidates[c].label] = probs[c];
  return d;
}

Distribution evaluate_direct(const MaxentModel& model, const EventBlock& block) {
  check_block(block, model.num_features());
  std::vector<double> score(block.candidates.size(), 1.0);
  double z = 0.0;
  for (size_t c = 0; c < block.candidates.size(); ++c) {
    for (FeatureId f : block.candidates[c].active) score[c] *= model.weights[f];
    z += score[c];
  }
  Distribution d;
  for (size_t c = 0; c < block.candidates.size(); ++c) d[block.candidates[c].label] = score[c] / z;
  return d;
}

double log_likelihood(const MaxentModel& model, const Dataset& data) {
  std::vector<double> lw = log_weights_of(model);
  std::vector<double> probs;
  double ll = 0.0;
  for (const auto& ev : data.events) {
    candidate_probs(lw, ev, probs);
    const int t = ev.true_index();
    if (t < 0) throw Error("event " + ev.event_id + ": true label missing");
    ll += std::log(probs[t]);
  }
  return ll;
}

CountVector observed_counts(const Dataset& data) { return observed_counts_weighted(data, nullptr); }

CountVector expected_counts(const MaxentModel& model, const Dataset& data) {
  return count_pass(log_weights_of(model), data, nullptr, true).expected;
}

CountVector expected_counts_serial(const MaxentModel& model, const Dataset& data) {
  return count_pass(log_weights_of(model), data, nullptr, false).expected;
}

int max_active_count(const Dataset& data) {
  if (data.events.empty()) throw Error("max_active_count: empty dataset");
  size_t m = 0;
  for (const auto& ev : data.events)
    for (const auto& c : ev.candidates) m = std::max(m, c.active.size());
  return static_cast<int>(m);
}

double max_relative_residual(const CountVector& expected, const CountVector& observed) {
  if (expected.size() != observed.size()) throw Error("residual: size mismatch");
  double r = 0.0;
  for (size_t i = 0; i < expected.size(); ++i) {
    if (observed[i] <= 0.0)
      throw Error("residual: observed count of feature " + std::to_string(i) + " is not positive");
    r = std::max(r, std::fabs(expected[i] - observed[i]) / observed[i]);
  }
  return r;
}

GisResult train_gis(const MaxentModel& init, const Dataset& data, const TrainOptions& opts,
                    const std::vector<double>* event_weights) {
  validate_dataset(data);
  if (init.num_features() != data.num_features)
    throw Error("train_gis: model has " + std::to_string(init.num_features()) +
                " features, data has " + std::to_string(data.num_features));
  if (event_weights && event_weights->size() != data.events.size())
    throw Error("train_gis: event weight vector size mismatch");

  GisResult res;
  res.model = init;
  const int g = data.num_features;
  if (g == 0 || data.events.empty()) {
    res.final_residual = 0.0;
    if (opts.record_trace) res.ll_trace.push_back(log_likelihood(res.model, data));
    return res;
  }

  const CountVector obs = observed_counts_weighted(data, event_weights);
  std::vector<FeatureId> dead;
  for (int i = 0; i < g; ++i)
    if (obs[i] <= 0.0) dead.push_back(i);
  if (!dead.empty()) throw UnobservedFeatureError(dead);

  const int c_max = max_active_count(data);
  const double inv_c = 1.0 / static_cast<double>(c_max);

  std::vector<double> lw = log_weights_of(res.model);
  for (int iter = 0;; ++iter) {
    PassResult pass = count_pass(lw, data, event_weights, true);
    if (opts.record_trace) res.ll_trace.push_back(pass.ll);
    res.final_residual = max_relative_residual(pass.expected, obs);
    if (res.final_residual <= opts.tol || iter >= opts.max_iters) break;
    for (int i = 0; i < g; ++i) lw[i] += inv_c * (std::log(obs[i]) - std::log(pass.expected[i]));
    ++res.iterations;
  }
  for (int i = 0; i < g; ++i) res.model.weights[i] = std::exp(lw[i]);
  return res;
}

PruneResult prune_unobserved(const Dataset& data) {
  validate_dataset(data);
  const CountVector obs = observed_counts(data);
  PruneResult r;
  r.remap.assign(data.num_features, -1);
  for (int i = 0; i < data.num_features; ++i) {
    if (obs[i] > 0.0) {
      r.remap[i] = static_cast<FeatureId>(r.kept.size());
      r.kept.push_back(i);
    }
  }
  r.data.num_features = static_cast<int>(r.kept.size());
  r.data.events = data.events;
  for (auto& ev : r.data.events)
    for (auto& c : ev.candidates) {
      std::vector<FeatureId> keep;
      keep.reserve(c.active.size());
      for (FeatureId f : c.active)
        if (r.remap[f] >= 0) keep.push_back(r.remap[f]);
      c.active = std::move(keep);
    }
  return r;
}

}  // namespace maxhmm
