#include "maxhmm/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace maxhmm::red {

using hmm::Arc;
using hmm::ArcCounts;
using hmm::HmmNetwork;
using hmm::kNoEmit;
using hmm::ParamRef;
using hmm::Polarity;

GroupIndex::GroupIndex(const GroupPartition& part, int num_features) {
  owner.assign(num_features, -1);
  n_groups = static_cast<int>(part.groups.size());
  for (int g = 0; g < n_groups; ++g)
    for (FeatureId f : part.groups[g].members) {
      if (f < 0 || f >= num_features)
        throw Error("GroupIndex: feature " + std::to_string(f) + " outside the model");
      owner[f] = g;
    }
}

ChainLayout make_layout(const GroupIndex& gi, const EventBlock& block, int rotation) {
  if (block.candidates.empty()) throw Error("make_layout: event has no candidates");
  ChainLayout lay;
  lay.branch_prob = 1.0 / static_cast<double>(block.candidates.size());
  lay.positions.resize(block.candidates.size());
  const int ng = std::max(1, gi.n_groups);
  for (size_t c = 0; c < block.candidates.size(); ++c) {
    // Active feature per group for this candidate, then rotated group order.
    std::vector<FeatureId> in_group(gi.n_groups, -1);
    for (FeatureId f : block.candidates[c].active) {
      const int g = gi.owner[f];
      if (g < 0) throw Error("make_layout: feature " + std::to_string(f) + " has no group");
      if (in_group[g] >= 0)
        throw Error("make_layout: candidate activates two members of group " + std::to_string(g));
      in_group[g] = f;
    }
    for (int r = 0; r < gi.n_groups; ++r) {
      const int g = (r + rotation % ng) % ng;
      if (in_group[g] >= 0) lay.positions[c].emplace_back(g, in_group[g]);
    }
  }
  return lay;
}

HmmNetwork build_event_network(const EventBlock& block, const ChainLayout& layout,
                               std::shared_ptr<std::vector<double>> params) {
  if (!params) throw Error("build_event_network: no parameter table");
  if (layout.positions.size() != block.candidates.size())
    throw Error("build_event_network: layout does not cover the candidates");

  HmmNetwork net;
  net.params = std::move(params);
  net.start = 0;
  int next = 1;
  std::vector<int> entry(block.candidates.size());
  for (size_t c = 0; c < block.candidates.size(); ++c) {
    entry[c] = next;
    next += static_cast<int>(layout.positions[c].size());
  }
  net.end = next;
  net.num_states = next + 1;

  for (size_t c = 0; c < block.candidates.size(); ++c) {
    const auto& chain = layout.positions[c];
    const auto sym = static_cast<hmm::SymbolId>(c);
    if (chain.empty()) {
      net.arcs.push_back({net.start, net.end, ParamRef::fixed(layout.branch_prob), sym});
      continue;
    }
    net.arcs.push_back({net.start, entry[c], ParamRef::fixed(layout.branch_prob), kNoEmit});
    for (size_t j = 0; j < chain.size(); ++j) {
      const int node = entry[c] + static_cast<int>(j);
      const FeatureId f = chain[j].second;
      if (!((*net.params)[f] < 1.0))
        throw Error("build_event_network: weight of feature " + std::to_string(f) +
                    " is not below 1");
      const bool last = j + 1 == chain.size();
      net.arcs.push_back(
          {node, last ? net.end : node + 1, ParamRef::direct(f), last ? sym : kNoEmit});
      net.arcs.push_back({node, net.start, ParamRef::complement(f), kNoEmit});
    }
  }
  return net;
}

SegmentedNetwork build_training_network(const Dataset& data, const GroupIndex& gi, int rotation,
                                        std::shared_ptr<std::vector<double>> params) {
  SegmentedNetwork sn;
  sn.params = std::move(params);
  sn.segments.reserve(data.events.size());
  for (const auto& ev : data.events) {
    const int t = ev.true_index();
    if (t < 0) throw Error("build_training_network: event " + ev.event_id + " has no true label");
    hmm::TrainingInstance inst;
    inst.net = build_event_network(ev, make_layout(gi, ev, rotation), sn.params);
    inst.observe = static_cast<hmm::SymbolId>(t);
    sn.segments.push_back(std::move(inst));
  }
  return sn;
}

namespace {

// The restart-chain structure read back out of a network.
struct ChainShape {
  struct Link {
    int node = -1;
    int direct_arc = -1;
    int comp_arc = -1;
    double lambda = 0.0;
  };
  struct Branch {
    int branch_arc = -1;
    double beta = 0.0;
    hmm::SymbolId symbol = kNoEmit;
    std::vector<Link> links;
  };
  std::vector<Branch> branches;
};

ChainShape recognize_chain(const HmmNetwork& net) {
  ChainShape shape;
  std::vector<std::vector<int>> out(net.num_states);
  for (size_t i = 0; i < net.arcs.size(); ++i) out[net.arcs[i].src].push_back(static_cast<int>(i));

  std::vector<bool> node_seen(net.num_states, false);
  node_seen[net.start] = true;
  node_seen[net.end] = true;
  std::vector<bool> arc_seen(net.arcs.size(), false);
  std::vector<bool> sym_seen;

  auto note_symbol = [&](hmm::SymbolId s) {
    if (s < 0) throw Error("closed_form_counts: chain ends without a symbol");
    if (sym_seen.size() <= static_cast<size_t>(s)) sym_seen.resize(s + 1, false);
    if (sym_seen[s]) throw Error("closed_form_counts: symbol emitted by two chains");
    sym_seen[s] = true;
  };

  for (int bi : out[net.start]) {
    const Arc& b = net.arcs[bi];
    if (b.prob.pol != Polarity::fixed)
      throw Error("closed_form_counts: branch arc with tied probability");
    arc_seen[bi] = true;
    ChainShape::Branch br;
    br.branch_arc = bi;
    br.beta = b.prob.value;
    if (b.dst == net.end) {  // zero-length chain, emits on the branch arc
      note_symbol(b.emit);
      br.symbol = b.emit;
      shape.branches.push_back(std::move(br));
      continue;
    }
    if (b.emit != kNoEmit) throw Error("closed_form_counts: emitting branch arc into a chain");
    int node = b.dst;
    while (true) {
      if (node_seen[node]) throw Error("closed_form_counts: chain node visited twice");
      node_seen[node] = true;
      if (out[node].size() != 2)
        throw Error("closed_form_counts: chain node without direct/fallback arc pair");
      ChainShape::Link link;
      link.node = node;
      for (int ai : out[node]) {
        const Arc& a = net.arcs[ai];
        arc_seen[ai] = true;
        if (a.prob.pol == Polarity::direct) {
          link.direct_arc = ai;
        } else if (a.prob.pol == Polarity::complement) {
          if (a.dst != net.start || a.emit != kNoEmit)
            throw Error("closed_form_counts: fallback arc does not return silently to start");
          link.comp_arc = ai;
        } else {
          throw Error("closed_form_counts: fixed-probability arc inside a chain");
        }
      }
      if (link.direct_arc < 0 || link.comp_arc < 0 ||
          net.arcs[link.direct_arc].prob.param != net.arcs[link.comp_arc].prob.param)
        throw Error("closed_form_counts: chain node arcs not tied to one parameter");
      link.lambda = net.arc_prob(net.arcs[link.direct_arc]);
      br.links.push_back(link);
      const Arc& d = net.arcs[link.direct_arc];
      if (d.dst == net.end) {
        note_symbol(d.emit);
        br.symbol = d.emit;
        break;
      }
      if (d.emit != kNoEmit)
        throw Error("closed_form_counts: emission before the end of the chain");
      node = d.dst;
    }
    shape.branches.push_back(std::move(br));
  }

  for (int s = 0; s < net.num_states; ++s)
    if (!node_seen[s]) throw Error("closed_form_counts: state outside any chain");
  for (size_t i = 0; i < net.arcs.size(); ++i)
    if (!arc_seen[i]) throw Error("closed_form_counts: arc outside any chain");
  if (shape.branches.empty()) throw Error("closed_form_counts: no branches out of start");
  return shape;
}

}  // namespace

ArcCounts closed_form_counts(const HmmNetwork& net, hmm::SymbolId observed) {
  const ChainShape shape = recognize_chain(net);

  // Per-attempt success probability over all branches.
  double s = 0.0;
  double p_obs = 0.0;
  for (const auto& br : shape.branches) {
    double full = 1.0;
    for (const auto& l : br.links) full *= l.lambda;
    s += br.beta * full;
    if (br.symbol == observed) p_obs = br.beta * full;
  }
  if (!(p_obs > 0.0))
    throw Error("closed_form_counts: observation " + std::to_string(observed) +
                " has zero probability");

  ArcCounts out;
  out.arc.assign(net.arcs.size(), 0.0);
  out.visits.assign(net.num_states, 0.0);
  out.log_prob = std::log(p_obs) - std::log(s);
  out.visits[net.start] = 1.0 / s;
  out.visits[net.end] = 1.0;

  for (const auto& br : shape.branches) {
    const int k = static_cast<int>(br.links.size());
    const double hit = br.symbol == observed ? 1.0 : 0.0;
    // prefix[j] = product of the first j lambdas, tail[j] = product from j on.
    std::vector<double> prefix(k + 1, 1.0), tail(k + 1, 1.0);
    for (int j = 0; j < k; ++j) prefix[j + 1] = prefix[j] * br.links[j].lambda;
    for (int j = k - 1; j >= 0; --j) tail[j] = tail[j + 1] * br.links[j].lambda;

    out.arc[br.branch_arc] = br.beta * (1.0 - prefix[k]) / s + hit;
    for (int j = 0; j < k; ++j) {
      const auto& l = br.links[j];
      out.arc[l.direct_arc] = br.beta * prefix[j + 1] * (1.0 - tail[j + 1]) / s + hit;
      out.arc[l.comp_arc] = br.beta * prefix[j] * (1.0 - l.lambda) / s;
      out.visits[l.node] = br.beta * prefix[j] * (1.0 - tail[j]) / s + hit;
    }
  }
  return out;
}

namespace {

std::vector<double> jittered_unit_weights(int g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::vector<double> w(g);
  for (auto& v : w) v = jitter(rng);
  return w;
}

}  // namespace

std::pair<MaxentModel, HmmTrainReport> train_maxent_via_hmm(const Dataset& data,
                                                            const HmmTrainOptions& opts,
                                                            const MaxentModel* reference) {
  validate_dataset(data);
  if (data.events.empty()) throw Error("train_maxent_via_hmm: empty dataset");
  const int g_orig = data.num_features;
  {
    const CountVector obs = observed_counts(data);
    std::vector<FeatureId> dead;
    for (int i = 0; i < g_orig; ++i)
      if (obs[i] <= 0.0) dead.push_back(i);
    if (!dead.empty()) throw UnobservedFeatureError(dead);
  }

  MaxentModel init;
  init.weights = jittered_unit_weights(g_orig, opts.base.seed);

  const GroupPartition part = partition_exclusive(data);
  GroupedModel gm = complete_groups(init, data, part);
  gm.model = to_subunit(gm.model, gm.partition);

  auto params = std::make_shared<std::vector<double>>(gm.model.weights);
  const GroupIndex gi(gm.partition, gm.data.num_features);

  hmm::FbOptions fb;
  fb.max_iters = opts.base.max_iters;
  fb.ll_delta_tol = 0.0;  // run to the constraint residual below
  fb.record_trace = opts.base.record_trace;
  fb.stable_max = 0.9;
  for (const auto& grp : gm.partition.groups)
    fb.rescale_groups.emplace_back(grp.members.begin(), grp.members.end());

  if (opts.use_closed_form)
    fb.counts_fn = [](const hmm::TrainingInstance& inst, hmm::ParamCounts& pc, double& ll) {
      ArcCounts ac = closed_form_counts(inst.net, inst.observe);
      hmm::accumulate_param_counts(inst.net, ac, pc);
      ll += ac.log_prob;
      return true;
    };

  const CountVector obs_orig = observed_counts(data);
  const Dataset& gdata = gm.data;
  // The residual is over the original features only; complements are
  // bookkeeping and have no constraint of their own. Checked every few
  // updates to keep the stop test off the iteration's critical path.
  int stop_calls = 0;
  double last_residual = 1e300;
  auto residual_of = [&](const std::vector<double>& table) {
    MaxentModel cur;
    cur.weights = table;
    const CountVector exp_all = expected_counts(cur, gdata);
    CountVector exp_orig(exp_all.begin(), exp_all.begin() + g_orig);
    return max_relative_residual(exp_orig, obs_orig);
  };
  fb.stop = [&](const std::vector<double>& table) {
    if (++stop_calls % 4 != 0) return false;
    last_residual = residual_of(table);
    return last_residual <= opts.base.tol;
  };

  auto builder = [&](int iteration) {
    const int rot = opts.rotate ? iteration : 0;
    return build_training_network(gdata, gi, rot, params).segments;
  };

  hmm::FbResult fbres = hmm::train_fb(builder, params, fb, opts.rotate);

  MaxentModel grouped = gm.model;
  grouped.weights = fbres.params;
  StripResult stripped = strip_complements(grouped, gm.data, gm.partition);

  HmmTrainReport rep;
  rep.iterations = fbres.iterations;
  rep.ll_trace = std::move(fbres.ll_trace);
  rep.final_ll = rep.ll_trace.empty() ? log_likelihood(stripped.model, data)
                                      : rep.ll_trace.back();
  rep.final_residual = residual_of(fbres.params);
  rep.n_groups = gi.n_groups;
  rep.n_complements = static_cast<int>(gm.partition.complement_ids.size());
  rep.max_tv_vs_reference = std::numeric_limits<double>::quiet_NaN();
  if (reference) {
    double mx = 0.0;
    for (const auto& ev : data.events)
      mx = std::max(mx, total_variation(evaluate(stripped.model, ev), evaluate(*reference, ev)));
    rep.max_tv_vs_reference = mx;
  }
  return {std::move(stripped.model), std::move(rep)};
}

}  // namespace maxhmm::red
