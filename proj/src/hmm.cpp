#include "maxhmm/hmm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "maxhmm/parallel.hpp"

namespace maxhmm::hmm {

double HmmNetwork::arc_prob(const Arc& a) const {
  switch (a.prob.pol) {
    case Polarity::fixed:
      return a.prob.value;
    case Polarity::direct:
      return (*params)[a.prob.param];
    case Polarity::complement:
      return 1.0 - (*params)[a.prob.param];
  }
  return 0.0;
}

int HmmNetwork::num_symbols() const {
  int m = 0;
  for (const auto& a : arcs) m = std::max(m, a.emit + 1);
  return m;
}

std::vector<std::string> validate(const HmmNetwork& net) {
  std::vector<std::string> out;
  auto bad = [&](const std::string& msg) { out.push_back(msg); };

  if (net.num_states < 2) bad("fewer than two states");
  if (net.start < 0 || net.start >= net.num_states) bad("start state out of range");
  if (net.end < 0 || net.end >= net.num_states) bad("end state out of range");
  if (net.start == net.end) bad("start and end coincide");
  if (!out.empty()) return out;

  const int np = net.params ? static_cast<int>(net.params->size()) : 0;
  std::vector<double> outsum(net.num_states, 0.0);
  std::vector<bool> has_out(net.num_states, false);
  for (size_t i = 0; i < net.arcs.size(); ++i) {
    const Arc& a = net.arcs[i];
    if (a.src < 0 || a.src >= net.num_states || a.dst < 0 || a.dst >= net.num_states) {
      bad("arc " + std::to_string(i) + " references a state out of range");
      continue;
    }
    if (a.emit < kNoEmit) bad("arc " + std::to_string(i) + " has a negative symbol");
    if (a.prob.pol == Polarity::fixed) {
      if (!(a.prob.value >= 0.0 && a.prob.value <= 1.0))
        bad("arc " + std::to_string(i) + " fixed probability outside [0, 1]");
    } else {
      if (a.prob.param < 0 || a.prob.param >= np) {
        bad("arc " + std::to_string(i) + " references parameter " + std::to_string(a.prob.param) +
            " outside the table");
        continue;
      }
      const double t = (*net.params)[a.prob.param];
      if (!(t > 0.0 && t < 1.0))
        bad("parameter " + std::to_string(a.prob.param) + " = " + std::to_string(t) +
            " outside (0, 1)");
    }
    if (a.src == net.end) bad("arc " + std::to_string(i) + " leaves the end state");
    outsum[a.src] += net.arc_prob(a);
    has_out[a.src] = true;
  }
  for (StateId s = 0; s < net.num_states; ++s) {
    if (s == net.end) continue;
    if (!has_out[s]) {
      bad("state " + std::to_string(s) + " has no outgoing arcs");
      continue;
    }
    if (std::fabs(outsum[s] - 1.0) > 1e-9)
      bad("state " + std::to_string(s) + " outgoing probabilities sum to " +
          std::to_string(outsum[s]));
  }

  // Forward reachability from start and backward reachability from end over
  // arcs with nonzero probability.
  auto reach = [&](StateId from, bool forward) {
    std::vector<bool> seen(net.num_states, false);
    std::deque<StateId> q{from};
    seen[from] = true;
    while (!q.empty()) {
      StateId s = q.front();
      q.pop_front();
      for (const auto& a : net.arcs) {
        if (net.arc_prob(a) <= 0.0) continue;
        StateId u = forward ? a.src : a.dst;
        StateId v = forward ? a.dst : a.src;
        if (u == s && !seen[v]) {
          seen[v] = true;
          q.push_back(v);
        }
      }
    }
    return seen;
  };
  const auto fwd = reach(net.start, true);
  const auto bwd = reach(net.end, false);
  for (StateId s = 0; s < net.num_states; ++s) {
    if (!fwd[s]) bad("state " + std::to_string(s) + " unreachable from start");
    if (!bwd[s]) bad("state " + std::to_string(s) + " cannot reach end");
  }
  return out;
}

namespace {

// Everything the conditional count formulas need, factored once per network:
// absorption vectors and the LU of (I - Q) over the silent arc structure.
struct Engine {
  const HmmNetwork& net;
  int m;                    // solve dimension: all states except end
  std::vector<int> idx;     // state -> solve index, -1 for end
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  Eigen::VectorXd z;        // z[s]: P(reach end silently | at s)

  explicit Engine(const HmmNetwork& n) : net(n) {
    idx.assign(net.num_states, -1);
    int k = 0;
    for (StateId s = 0; s < net.num_states; ++s)
      if (s != net.end) idx[s] = k++;
    m = k;

    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd to_end = Eigen::VectorXd::Zero(m);
    for (const auto& arc : net.arcs) {
      if (arc.emit != kNoEmit) continue;
      const double p = net.arc_prob(arc);
      if (arc.dst == net.end)
        to_end[idx[arc.src]] += p;
      else
        a(idx[arc.src], idx[arc.dst]) -= p;
    }
    lu.compute(a);
    if (lu.rcond() < 1e-13)
      throw Error("hmm engine: silent arc structure does not absorb (singular system)");
    z = lu.solve(to_end);
  }

  double z_of(StateId s) const { return s == net.end ? 1.0 : z[idx[s]]; }

  // P(first emission is o and the path then completes silently | at start).
  Eigen::VectorXd absorb(SymbolId o) const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
    for (const auto& arc : net.arcs) {
      if (arc.emit != o || o == kNoEmit) continue;
      c[idx[arc.src]] += net.arc_prob(arc) * z_of(arc.dst);
    }
    return lu.solve(c);
  }
};

}  // namespace

std::map<SymbolId, double> output_distribution(const HmmNetwork& net) {
  auto errs = validate(net);
  if (!errs.empty()) throw Error("output_distribution: invalid network: " + errs.front());
  Engine eng(net);
  std::map<SymbolId, double> dist;
  double sum = 0.0;
  for (SymbolId o = 0; o < net.num_symbols(); ++o) {
    const double p = eng.absorb(o)[eng.idx[net.start]];
    dist[o] = p;
    sum += p;
  }
  sum += eng.z_of(net.start);
  if (std::fabs(sum - 1.0) > 1e-6)
    throw Error("output_distribution: path mass " + std::to_string(sum) +
                "; network is not single-emission");
  return dist;
}

double observation_log_prob(const HmmNetwork& net, SymbolId observed) {
  Engine eng(net);
  const double p = eng.absorb(observed)[eng.idx[net.start]];
  if (!(p > 0.0)) throw Error("observation has zero probability");
  return std::log(p);
}

ArcCounts expected_counts(const HmmNetwork& net, SymbolId observed) {
  auto errs = validate(net);
  if (!errs.empty()) throw Error("expected_counts: invalid network: " + errs.front());
  Engine eng(net);
  const int m = eng.m;

  const Eigen::VectorXd u = eng.absorb(observed);
  const double p_obs = u[eng.idx[net.start]];
  if (!(p_obs > 0.0))
    throw Error("expected_counts: observation " + std::to_string(observed) +
                " has zero probability");

  // Visit intensities before (a0) and after (a1) the emission.
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(m);
  e0[eng.idx[net.start]] = 1.0;
  const Eigen::VectorXd a0 = eng.lu.transpose().solve(e0);

  Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
  for (const auto& arc : net.arcs) {
    if (arc.emit != observed || arc.dst == net.end) continue;
    d[eng.idx[arc.dst]] += a0[eng.idx[arc.src]] * net.arc_prob(arc);
  }
  const Eigen::VectorXd a1 = eng.lu.transpose().solve(d);

  auto u_of = [&](StateId s) { return s == net.end ? 0.0 : u[eng.idx[s]]; };
  auto a0_of = [&](StateId s) { return s == net.end ? 0.0 : a0[eng.idx[s]]; };
  auto a1_of = [&](StateId s) { return s == net.end ? 0.0 : a1[eng.idx[s]]; };

  ArcCounts out;
  out.log_prob = std::log(p_obs);
  out.arc.assign(net.arcs.size(), 0.0);
  out.visits.assign(net.num_states, 0.0);
  for (size_t i = 0; i < net.arcs.size(); ++i) {
    const Arc& arc = net.arcs[i];
    const double p = net.arc_prob(arc);
    double mass = 0.0;
    if (arc.emit == kNoEmit)
      mass = a0_of(arc.src) * p * u_of(arc.dst) + a1_of(arc.src) * p * eng.z_of(arc.dst);
    else if (arc.emit == observed)
      mass = a0_of(arc.src) * p * eng.z_of(arc.dst);
    out.arc[i] = mass / p_obs;
    out.visits[arc.dst] += out.arc[i];
  }
  for (StateId s = 0; s < net.num_states; ++s) {
    if (s == net.end) continue;
    out.visits[s] = (a0_of(s) * u_of(s) + a1_of(s) * eng.z_of(s)) / p_obs;
  }
  return out;
}

void ParamCounts::add(const ParamCounts& o) {
  for (size_t i = 0; i < direct.size(); ++i) {
    direct[i] += o.direct[i];
    complement[i] += o.complement[i];
  }
}

void accumulate_param_counts(const HmmNetwork& net, const ArcCounts& counts, ParamCounts& into) {
  for (size_t i = 0; i < net.arcs.size(); ++i) {
    const auto& pr = net.arcs[i].prob;
    if (pr.pol == Polarity::direct)
      into.direct[pr.param] += counts.arc[i];
    else if (pr.pol == Polarity::complement)
      into.complement[pr.param] += counts.arc[i];
  }
}

BwUpdate bw_update(const ParamCounts& counts, const std::vector<double>& current) {
  if (counts.direct.size() != current.size()) throw Error("bw_update: size mismatch");
  BwUpdate out;
  out.params = current;
  for (size_t j = 0; j < current.size(); ++j) {
    const double denom = counts.direct[j] + counts.complement[j];
    if (denom <= 0.0) {
      out.untouched.push_back(static_cast<int>(j));
      continue;
    }
    // Clamped away from the ends so the arcs stay usable next iteration.
    out.params[j] = std::clamp(counts.direct[j] / denom, 1e-12, 1.0 - 1e-15);
  }
  return out;
}

namespace {

void rescale_params(std::vector<double>& params, const std::vector<std::vector<int>>& groups,
                    double stable_max) {
  for (const auto& grp : groups) {
    double mx = 0.0;
    for (int j : grp) mx = std::max(mx, params[j]);
    if (!(mx > 0.0)) throw Error("train_fb: rescale group with no positive parameter");
    const double f = stable_max / mx;
    for (int j : grp) params[j] *= f;
  }
}

// One E pass over all instances: chunked, per-chunk accumulators folded in
// chunk order so the reduction is deterministic.
double e_step(const std::vector<TrainingInstance>& segs, const CountsFn& counts_fn, size_t n_params,
              ParamCounts* total) {
  const int n = static_cast<int>(segs.size());
  const int nc = par::chunk_count(n);
  std::vector<ParamCounts> partial(nc, ParamCounts(n_params));
  std::vector<double> lls(nc, 0.0);
  par::for_each_chunk(n, [&](int chunk, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      double ll = 0.0;
      if (counts_fn && counts_fn(segs[i], partial[chunk], ll)) {
        lls[chunk] += ll;
        continue;
      }
      ArcCounts ac = expected_counts(segs[i].net, segs[i].observe);
      accumulate_param_counts(segs[i].net, ac, partial[chunk]);
      lls[chunk] += ac.log_prob;
    }
  });
  double ll = 0.0;
  for (int c = 0; c < nc; ++c) {
    if (total) total->add(partial[c]);
    ll += lls[c];
  }
  return ll;
}

}  // namespace

FbResult train_fb(const SegmentBuilder& build, std::shared_ptr<std::vector<double>> params,
                  const FbOptions& opts, bool rotate) {
  if (!params) throw Error("train_fb: no parameter table");
  FbResult res;
  const size_t np = params->size();
  std::vector<TrainingInstance> segs = build(0);
  if (segs.empty()) throw Error("train_fb: no training instances");
  for (const auto& s : segs)
    if (s.net.params != params) throw Error("train_fb: instance does not share the table");

  double prev_ll = -std::numeric_limits<double>::infinity();
  bool done = false;
  for (int iter = 0; iter < opts.max_iters && !done; ++iter) {
    if (rotate && iter > 0) segs = build(iter);
    ParamCounts pc(np);
    const double ll = e_step(segs, opts.counts_fn, np, &pc);
    if (opts.record_trace) res.ll_trace.push_back(ll);
    if (opts.ll_delta_tol > 0.0 && ll - prev_ll <= opts.ll_delta_tol * std::max(1.0, std::fabs(ll)))
      break;
    prev_ll = ll;

    BwUpdate up = bw_update(pc, *params);
    *params = up.params;
    rescale_params(*params, opts.rescale_groups, opts.stable_max);
    ++res.iterations;
    if (opts.stop && opts.stop(*params)) done = true;
  }
  if (opts.record_trace) res.ll_trace.push_back(e_step(segs, opts.counts_fn, np, nullptr));
  res.params = *params;
  return res;
}

}  // namespace maxhmm::hmm
