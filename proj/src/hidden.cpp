#include "maxhmm/hidden.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "maxhmm/reduction.hpp"

namespace maxhmm::hv {

using hmm::Arc;
using hmm::ArcCounts;
using hmm::HmmNetwork;
using hmm::kNoEmit;
using hmm::ParamRef;
using hmm::Polarity;

HiddenEventBlock augment_block(const EventBlock& plain, int n_hidden, int plain_features) {
  if (n_hidden < 1) throw Error("augment_block: need at least one hidden value");
  HiddenEventBlock hb;
  hb.event_id = plain.event_id;
  hb.true_label = plain.true_label;
  std::set<FeatureId> fired;
  for (const auto& c : plain.candidates) fired.insert(c.active.begin(), c.active.end());
  for (int z = 0; z < n_hidden; ++z) {
    Candidate sel;
    sel.label = "z" + std::to_string(z);
    for (FeatureId j : fired) sel.active.push_back(z * plain_features + j);
    hb.selector.push_back(std::move(sel));
    hb.outputs.push_back(plain.candidates);
  }
  return hb;
}

HiddenDataset augment_dataset(const Dataset& plain, int n_hidden) {
  validate_dataset(plain);
  if (n_hidden < 1) throw Error("augment_dataset: need at least one hidden value");
  HiddenDataset hd;
  hd.selector_features = n_hidden * plain.num_features;
  hd.emitter_features = plain.num_features;
  for (int z = 0; z < n_hidden; ++z) hd.hidden_values.push_back("z" + std::to_string(z));
  for (const auto& ev : plain.events)
    hd.events.push_back(augment_block(ev, n_hidden, plain.num_features));
  return hd;
}

std::vector<std::string> output_labels(const HiddenEventBlock& block) {
  if (block.outputs.empty() || block.outputs[0].empty())
    throw Error("event " + block.event_id + ": no output candidates");
  std::vector<std::string> labels;
  for (const auto& c : block.outputs[0]) labels.push_back(c.label);
  return labels;
}

int output_symbol(const HiddenEventBlock& block, const std::string& label) {
  const auto labels = output_labels(block);
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

void validate_hidden(const HiddenDataset& data) {
  const int k = static_cast<int>(data.hidden_values.size());
  if (k < 1) throw Error("hidden dataset without hidden values");
  for (const auto& ev : data.events) {
    if (static_cast<int>(ev.selector.size()) != k || static_cast<int>(ev.outputs.size()) != k)
      throw Error("event " + ev.event_id + ": stages do not cover every hidden value");
    for (int z = 0; z < k; ++z) {
      if (ev.selector[z].label != data.hidden_values[z])
        throw Error("event " + ev.event_id + ": selector candidate order mismatch");
      for (size_t i = 0; i < ev.selector[z].active.size(); ++i) {
        const FeatureId f = ev.selector[z].active[i];
        if (f < 0 || f >= data.selector_features)
          throw Error("event " + ev.event_id + ": selector feature " + std::to_string(f) +
                      " out of range");
        if (i > 0 && ev.selector[z].active[i - 1] >= f)
          throw Error("event " + ev.event_id + ": selector features not sorted");
      }
      if (ev.outputs[z].size() != ev.outputs[0].size())
        throw Error("event " + ev.event_id + ": output candidate count differs across values");
      for (size_t c = 0; c < ev.outputs[z].size(); ++c) {
        if (ev.outputs[z][c].label != ev.outputs[0][c].label)
          throw Error("event " + ev.event_id + ": output labels differ across hidden values");
        for (size_t i = 0; i < ev.outputs[z][c].active.size(); ++i) {
          const FeatureId f = ev.outputs[z][c].active[i];
          if (f < 0 || f >= data.emitter_features)
            throw Error("event " + ev.event_id + ": emitter feature " + std::to_string(f) +
                        " out of range");
          if (i > 0 && ev.outputs[z][c].active[i - 1] >= f)
            throw Error("event " + ev.event_id + ": emitter features not sorted");
        }
      }
    }
    if (output_symbol(ev, ev.true_label) < 0)
      throw Error("event " + ev.event_id + ": true label " + ev.true_label +
                  " not among the outputs");
  }
}

namespace {

void check_model_for(const HiddenMaxentModel& model, const HiddenEventBlock& block) {
  const int k = model.n_hidden();
  if (static_cast<int>(block.selector.size()) != k ||
      static_cast<int>(block.outputs.size()) != k)
    throw Error("event " + block.event_id + ": block does not match the model's hidden values");
  if (!model.deterministic() && static_cast<int>(model.emitters.size()) != k)
    throw Error("model is missing emitters");
}

// Selector distribution over hidden values for one block.
std::vector<double> selector_probs(const HiddenMaxentModel& model, const HiddenEventBlock& block) {
  EventBlock sel;
  sel.event_id = block.event_id;
  sel.candidates = block.selector;
  Distribution d = evaluate(model.selector, sel);
  std::vector<double> out;
  for (const auto& v : model.hidden_values) out.push_back(d.at(v));
  return out;
}

// Per hidden value, the emitter's distribution over output labels.
std::vector<Distribution> emitter_dists(const HiddenMaxentModel& model,
                                        const HiddenEventBlock& block) {
  std::vector<Distribution> out;
  const auto labels = output_labels(block);
  for (int z = 0; z < model.n_hidden(); ++z) {
    if (model.deterministic()) {
      Distribution d;
      for (const auto& l : labels) d[l] = l == model.fixed_outputs[z] ? 1.0 : 0.0;
      out.push_back(std::move(d));
    } else {
      EventBlock em;
      em.event_id = block.event_id;
      em.candidates = block.outputs[z];
      out.push_back(evaluate(model.emitters[z], em));
    }
  }
  return out;
}

}  // namespace

Distribution hv_evaluate(const HiddenMaxentModel& model, const HiddenEventBlock& block) {
  check_model_for(model, block);
  const auto sel = selector_probs(model, block);
  const auto em = emitter_dists(model, block);
  Distribution out;
  for (const auto& l : output_labels(block)) out[l] = 0.0;
  for (int z = 0; z < model.n_hidden(); ++z)
    for (const auto& [l, p] : em[z]) out[l] += sel[z] * p;
  return out;
}

Distribution hv_posterior(const HiddenMaxentModel& model, const HiddenEventBlock& block,
                          const std::string& observed) {
  check_model_for(model, block);
  const auto sel = selector_probs(model, block);
  const auto em = emitter_dists(model, block);
  Distribution out;
  double total = 0.0;
  for (int z = 0; z < model.n_hidden(); ++z) {
    auto it = em[z].find(observed);
    if (it == em[z].end())
      throw Error("event " + block.event_id + ": label " + observed + " not among the outputs");
    const double joint = sel[z] * it->second;
    out[model.hidden_values[z]] = joint;
    total += joint;
  }
  if (!(total > 0.0)) throw Error("hv_posterior: observation " + observed + " has zero marginal");
  for (auto& [z, p] : out) p /= total;
  return out;
}

HvPrediction hv_predict(const HiddenMaxentModel& model, const HiddenEventBlock& block) {
  HvPrediction out;
  out.marginal = hv_evaluate(model, block);
  double best = -1.0;
  for (const auto& [l, p] : out.marginal) {
    if (p > best) {
      best = p;
      out.label = l;
    }
    if (p > 0.0) out.hidden_by_label[l] = hv_posterior(model, block, l);
  }
  return out;
}

std::vector<double> GroupedHidden::joint_table() const {
  std::vector<double> t(selector.weights);
  for (const auto& em : emitters) t.insert(t.end(), em.weights.begin(), em.weights.end());
  return t;
}

std::vector<std::vector<int>> GroupedHidden::rescale_groups() const {
  std::vector<std::vector<int>> out;
  for (const auto& grp : sel_part.groups) out.emplace_back(grp.members.begin(), grp.members.end());
  for (size_t z = 0; z < em_part.size(); ++z)
    for (const auto& grp : em_part[z].groups) {
      std::vector<int> ids;
      for (FeatureId f : grp.members) ids.push_back(em_offset[z] + f);
      out.push_back(std::move(ids));
    }
  return out;
}

GroupedHidden group_hidden(const HiddenMaxentModel& init, const HiddenDataset& data) {
  validate_hidden(data);
  const int k = static_cast<int>(data.hidden_values.size());
  if (init.n_hidden() != k) throw Error("group_hidden: hidden value count mismatch");

  // Stage datasets mirror the blocks; the selector gets a placeholder truth
  // since grouping only reads the candidate structure.
  Dataset sel_ds;
  sel_ds.num_features = data.selector_features;
  std::vector<Dataset> em_ds(init.deterministic() ? 0 : k);
  for (auto& d : em_ds) d.num_features = data.emitter_features;
  for (const auto& ev : data.events) {
    EventBlock sb;
    sb.event_id = ev.event_id;
    sb.candidates = ev.selector;
    sb.true_label = ev.selector[0].label;
    sel_ds.events.push_back(std::move(sb));
    for (size_t z = 0; z < em_ds.size(); ++z) {
      EventBlock eb;
      eb.event_id = ev.event_id;
      eb.candidates = ev.outputs[z];
      eb.true_label = ev.true_label;
      em_ds[z].events.push_back(std::move(eb));
    }
  }

  GroupedHidden gh;
  gh.fixed_outputs = init.fixed_outputs;
  GroupedModel sel_gm = complete_groups(init.selector, sel_ds, partition_exclusive(sel_ds));
  sel_gm.model = to_subunit(sel_gm.model, sel_gm.partition);
  gh.selector = sel_gm.model;
  gh.sel_part = sel_gm.partition;
  gh.sel_size = gh.selector.num_features();

  std::vector<GroupedModel> em_gm;
  for (size_t z = 0; z < em_ds.size(); ++z) {
    GroupedModel gm = complete_groups(init.emitters[z], em_ds[z], partition_exclusive(em_ds[z]));
    gm.model = to_subunit(gm.model, gm.partition);
    em_gm.push_back(std::move(gm));
  }

  int offset = gh.sel_size;
  for (auto& gm : em_gm) {
    gh.em_offset.push_back(offset);
    offset += gm.model.num_features();
    gh.emitters.push_back(gm.model);
    gh.em_part.push_back(gm.partition);
  }
  gh.table_size = offset;

  gh.data.hidden_values = data.hidden_values;
  gh.data.selector_features = sel_gm.data.num_features;
  gh.data.emitter_features = em_gm.empty() ? data.emitter_features : em_gm[0].data.num_features;
  for (size_t e = 0; e < data.events.size(); ++e) {
    HiddenEventBlock hb;
    hb.event_id = data.events[e].event_id;
    hb.true_label = data.events[e].true_label;
    hb.selector = sel_gm.data.events[e].candidates;
    if (em_gm.empty()) {
      hb.outputs = data.events[e].outputs;
    } else {
      for (int z = 0; z < k; ++z) hb.outputs.push_back(em_gm[z].data.events[e].candidates);
    }
    gh.data.events.push_back(std::move(hb));
  }
  return gh;
}

HmmNetwork build_hidden_network(const GroupedHidden& gh, int event_index, int rotation,
                                std::shared_ptr<std::vector<double>> params) {
  if (event_index < 0 || event_index >= static_cast<int>(gh.data.events.size()))
    throw Error("build_hidden_network: event index out of range");
  if (!params) throw Error("build_hidden_network: no parameter table");
  const HiddenEventBlock& ev = gh.data.events[event_index];
  const int k = static_cast<int>(gh.data.hidden_values.size());
  const bool det = !gh.fixed_outputs.empty();
  const auto labels = output_labels(ev);

  const red::GroupIndex sel_gi(gh.sel_part, gh.data.selector_features);
  EventBlock sel_block;
  sel_block.event_id = ev.event_id;
  sel_block.candidates = ev.selector;
  const red::ChainLayout sel_lay = red::make_layout(sel_gi, sel_block, rotation);

  std::vector<red::ChainLayout> em_lay;
  if (!det)
    for (int z = 0; z < k; ++z) {
      const red::GroupIndex em_gi(gh.em_part[z], gh.data.emitter_features);
      EventBlock em_block;
      em_block.event_id = ev.event_id;
      em_block.candidates = ev.outputs[z];
      em_lay.push_back(red::make_layout(em_gi, em_block, rotation));
    }

  HmmNetwork net;
  net.params = std::move(params);
  net.start = 0;
  int next = 1;
  std::vector<int> sel_entry(k), cloud(k);
  for (int z = 0; z < k; ++z) {
    sel_entry[z] = next;
    next += static_cast<int>(sel_lay.positions[z].size());
    cloud[z] = next++;
  }
  std::vector<std::vector<int>> em_entry(k);
  if (!det)
    for (int z = 0; z < k; ++z)
      for (const auto& chain : em_lay[z].positions) {
        em_entry[z].push_back(next);
        next += static_cast<int>(chain.size());
      }
  net.end = next;
  net.num_states = next + 1;

  auto check_subunit = [&](int table_id) {
    if (!((*net.params)[table_id] < 1.0))
      throw Error("build_hidden_network: parameter " + std::to_string(table_id) +
                  " is not below 1");
  };

  for (int z = 0; z < k; ++z) {
    const auto& chain = sel_lay.positions[z];
    if (chain.empty()) {
      net.arcs.push_back({net.start, cloud[z], ParamRef::fixed(sel_lay.branch_prob), kNoEmit});
    } else {
      net.arcs.push_back({net.start, sel_entry[z], ParamRef::fixed(sel_lay.branch_prob), kNoEmit});
      for (size_t j = 0; j < chain.size(); ++j) {
        const int node = sel_entry[z] + static_cast<int>(j);
        const int pid = chain[j].second;
        check_subunit(pid);
        const bool last = j + 1 == chain.size();
        net.arcs.push_back({node, last ? cloud[z] : node + 1, ParamRef::direct(pid), kNoEmit});
        net.arcs.push_back({node, net.start, ParamRef::complement(pid), kNoEmit});
      }
    }
  }

  for (int z = 0; z < k; ++z) {
    if (det) {
      const int sym = output_symbol(ev, gh.fixed_outputs[z]);
      if (sym < 0)
        throw Error("build_hidden_network: fixed output " + gh.fixed_outputs[z] +
                    " not among the event's outputs");
      net.arcs.push_back({cloud[z], net.end, ParamRef::fixed(1.0), sym});
      continue;
    }
    for (size_t c = 0; c < em_lay[z].positions.size(); ++c) {
      const auto& chain = em_lay[z].positions[c];
      const auto sym = static_cast<hmm::SymbolId>(c);
      if (chain.empty()) {
        net.arcs.push_back({cloud[z], net.end, ParamRef::fixed(em_lay[z].branch_prob), sym});
        continue;
      }
      net.arcs.push_back(
          {cloud[z], em_entry[z][c], ParamRef::fixed(em_lay[z].branch_prob), kNoEmit});
      for (size_t j = 0; j < chain.size(); ++j) {
        const int node = em_entry[z][c] + static_cast<int>(j);
        const int pid = gh.em_offset[z] + chain[j].second;
        check_subunit(pid);
        const bool last = j + 1 == chain.size();
        net.arcs.push_back(
            {node, last ? net.end : node + 1, ParamRef::direct(pid), last ? sym : kNoEmit});
        net.arcs.push_back({node, cloud[z], ParamRef::complement(pid), kNoEmit});
      }
    }
  }
  return net;
}

namespace {

// The two-tier restart structure read back out of a network: blocks of
// chains, each chain ending in an emission or in a child block's entry.
struct Cascade {
  struct Link {
    int node = -1, direct_arc = -1, comp_arc = -1;
    double lambda = 0.0;
  };
  struct Branch {
    int branch_arc = -1;
    double beta = 0.0;
    std::vector<Link> links;
    hmm::SymbolId symbol = kNoEmit;  // leaf emission
    int child = -1;                  // or index of the child block
  };
  struct Block {
    int anchor = -1;
    std::vector<Branch> branches;
  };
  std::vector<Block> blocks;  // blocks[0] anchored at start
};

Cascade recognize_cascade(const HmmNetwork& net) {
  std::vector<std::vector<int>> out(net.num_states);
  for (size_t i = 0; i < net.arcs.size(); ++i) out[net.arcs[i].src].push_back(static_cast<int>(i));

  auto is_anchor = [&](int s) {
    if (s == net.end || out[s].empty()) return false;
    for (int ai : out[s])
      if (net.arcs[ai].prob.pol != Polarity::fixed) return false;
    return true;
  };

  Cascade cas;
  std::vector<int> block_of(net.num_states, -1);
  std::vector<bool> arc_seen(net.arcs.size(), false);
  std::vector<bool> node_seen(net.num_states, false);
  node_seen[net.end] = true;

  // Breadth-first over anchors, starting at the network start.
  std::vector<int> todo{net.start};
  block_of[net.start] = 0;
  cas.blocks.push_back({net.start, {}});
  while (!todo.empty()) {
    const int anchor = todo.back();
    todo.pop_back();
    const int bi = block_of[anchor];
    node_seen[anchor] = true;
    for (int ai : out[anchor]) {
      const Arc& b = net.arcs[ai];
      if (b.prob.pol != Polarity::fixed)
        throw Error("cascade_counts: tied-probability arc out of a cloud entry");
      arc_seen[ai] = true;
      Cascade::Branch br;
      br.branch_arc = ai;
      br.beta = b.prob.value;
      int node = b.dst;
      if (b.emit != kNoEmit) {
        if (b.dst != net.end) throw Error("cascade_counts: emission not entering end");
        br.symbol = b.emit;
        cas.blocks[bi].branches.push_back(std::move(br));
        continue;
      }
      // Silent branch arc: walk the chain until an emission or a new anchor.
      bool open = true;
      while (open) {
        if (node == net.end) throw Error("cascade_counts: silent path into end");
        if (is_anchor(node)) {
          if (block_of[node] < 0) {
            block_of[node] = static_cast<int>(cas.blocks.size());
            cas.blocks.push_back({node, {}});
            todo.push_back(node);
          } else {
            throw Error("cascade_counts: cloud entered from two places");
          }
          br.child = block_of[node];
          break;
        }
        if (node_seen[node]) throw Error("cascade_counts: chain node visited twice");
        node_seen[node] = true;
        if (out[node].size() != 2)
          throw Error("cascade_counts: chain node without direct/fallback arc pair");
        Cascade::Link link;
        link.node = node;
        for (int ci : out[node]) {
          const Arc& a = net.arcs[ci];
          arc_seen[ci] = true;
          if (a.prob.pol == Polarity::direct) {
            link.direct_arc = ci;
          } else if (a.prob.pol == Polarity::complement) {
            if (a.dst != anchor || a.emit != kNoEmit)
              throw Error("cascade_counts: fallback arc does not return to its cloud entry");
            link.comp_arc = ci;
          } else {
            throw Error("cascade_counts: fixed arc inside a chain");
          }
        }
        if (link.direct_arc < 0 || link.comp_arc < 0 ||
            net.arcs[link.direct_arc].prob.param != net.arcs[link.comp_arc].prob.param)
          throw Error("cascade_counts: chain node arcs not tied to one parameter");
        link.lambda = net.arc_prob(net.arcs[link.direct_arc]);
        br.links.push_back(link);
        const Arc& d = net.arcs[link.direct_arc];
        if (d.emit != kNoEmit) {
          if (d.dst != net.end) throw Error("cascade_counts: emission not entering end");
          br.symbol = d.emit;
          open = false;
        } else {
          node = d.dst;
        }
      }
      cas.blocks[bi].branches.push_back(std::move(br));
    }
  }
  for (int s = 0; s < net.num_states; ++s)
    if (!node_seen[s]) throw Error("cascade_counts: state outside the cascade");
  for (size_t i = 0; i < net.arcs.size(); ++i)
    if (!arc_seen[i]) throw Error("cascade_counts: arc outside the cascade");
  return cas;
}

}  // namespace

ArcCounts cascade_counts(const HmmNetwork& net, hmm::SymbolId observed) {
  const Cascade cas = recognize_cascade(net);
  const int nb = static_cast<int>(cas.blocks.size());

  // Per-branch chain product and per-block total success mass.
  std::vector<std::vector<double>> full(nb);
  std::vector<double> s(nb, 0.0);
  for (int b = 0; b < nb; ++b)
    for (const auto& br : cas.blocks[b].branches) {
      double f = 1.0;
      for (const auto& l : br.links) f *= l.lambda;
      full[b].push_back(f);
      s[b] += br.beta * f;
    }

  // Upward pass: P(emit observed | committed into this block), children first.
  // Blocks are discovered parents-first, so a reverse sweep sees children
  // before their parents.
  std::vector<double> u(nb, 0.0);
  for (int b = nb - 1; b >= 0; --b) {
    if (!(s[b] > 0.0)) throw Error("cascade_counts: cloud with zero success mass");
    double acc = 0.0;
    const auto& blk = cas.blocks[b];
    for (size_t i = 0; i < blk.branches.size(); ++i) {
      const auto& br = blk.branches[i];
      const double commit = br.beta * full[b][i] / s[b];
      acc += commit * (br.child >= 0 ? u[br.child] : (br.symbol == observed ? 1.0 : 0.0));
    }
    u[b] = acc;
  }
  if (!(u[0] > 0.0))
    throw Error("cascade_counts: observation " + std::to_string(observed) +
                " has zero probability");

  ArcCounts out;
  out.arc.assign(net.arcs.size(), 0.0);
  out.visits.assign(net.num_states, 0.0);
  out.log_prob = std::log(u[0]);
  out.visits[net.end] = 1.0;

  // Downward pass: entry mass q per block, split into commit posteriors.
  std::vector<double> q(nb, 0.0);
  q[0] = 1.0;
  for (int b = 0; b < nb; ++b) {
    const auto& blk = cas.blocks[b];
    out.visits[blk.anchor] += q[b] / s[b];
    for (size_t i = 0; i < blk.branches.size(); ++i) {
      const auto& br = blk.branches[i];
      const double reach = br.child >= 0 ? u[br.child] : (br.symbol == observed ? 1.0 : 0.0);
      const double commit = q[b] * (br.beta * full[b][i] / s[b]) * reach / u[b];
      if (br.child >= 0) q[br.child] = commit;

      const int k = static_cast<int>(br.links.size());
      std::vector<double> prefix(k + 1, 1.0), tail(k + 1, 1.0);
      for (int j = 0; j < k; ++j) prefix[j + 1] = prefix[j] * br.links[j].lambda;
      for (int j = k - 1; j >= 0; --j) tail[j] = tail[j + 1] * br.links[j].lambda;

      out.arc[br.branch_arc] = q[b] * br.beta * (1.0 - prefix[k]) / s[b] + commit;
      for (int j = 0; j < k; ++j) {
        const auto& l = br.links[j];
        out.arc[l.direct_arc] = q[b] * br.beta * prefix[j + 1] * (1.0 - tail[j + 1]) / s[b] + commit;
        out.arc[l.comp_arc] = q[b] * br.beta * prefix[j] * (1.0 - l.lambda) / s[b];
        out.visits[l.node] = q[b] * br.beta * prefix[j] * (1.0 - tail[j]) / s[b] + commit;
      }
    }
  }
  return out;
}

HiddenMaxentModel default_hv_init(const HiddenDataset& data, std::uint64_t seed) {
  HiddenMaxentModel m;
  m.hidden_values = data.hidden_values;
  m.selector = MaxentModel::uniform(data.selector_features);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  for (size_t z = 0; z < data.hidden_values.size(); ++z) {
    MaxentModel em = MaxentModel::uniform(data.emitter_features);
    for (auto& w : em.weights) w = jitter(rng);
    m.emitters.push_back(std::move(em));
  }
  return m;
}

namespace {

// Trainers need every emitter feature to fire on some true output and every
// selector feature to fire somewhere, else its count target is zero.
void check_trainable(const HiddenDataset& data, bool deterministic) {
  std::vector<char> sel_seen(data.selector_features, 0);
  std::vector<char> em_seen(data.emitter_features, 0);
  for (const auto& ev : data.events) {
    for (const auto& c : ev.selector)
      for (FeatureId f : c.active) sel_seen[f] = 1;
    for (const auto& outs : ev.outputs)
      for (const auto& c : outs)
        if (c.label == ev.true_label)
          for (FeatureId f : c.active) em_seen[f] = 1;
  }
  std::vector<FeatureId> dead;
  for (FeatureId f = 0; f < data.selector_features; ++f)
    if (!sel_seen[f]) dead.push_back(f);
  if (!dead.empty())
    throw Error("hidden training: selector features never active: " + std::to_string(dead[0]) +
                (dead.size() > 1 ? " and " + std::to_string(dead.size() - 1) + " more" : ""));
  if (!deterministic) {
    dead.clear();
    for (FeatureId f = 0; f < data.emitter_features; ++f)
      if (!em_seen[f]) dead.push_back(f);
    if (!dead.empty()) throw UnobservedFeatureError(dead);
  }
}

double mixture_ll(const HiddenMaxentModel& model, const HiddenDataset& data) {
  double ll = 0.0;
  for (const auto& ev : data.events) ll += std::log(hv_evaluate(model, ev).at(ev.true_label));
  return ll;
}

}  // namespace

std::pair<HiddenMaxentModel, HvTrainReport> train_hv_fb(const HiddenDataset& data,
                                                        const HvTrainOptions& opts,
                                                        const HiddenMaxentModel* init) {
  validate_hidden(data);
  if (data.events.empty()) throw Error("train_hv_fb: empty dataset");
  HiddenMaxentModel start = init ? *init : default_hv_init(data, opts.base.seed);
  check_trainable(data, start.deterministic());

  GroupedHidden gh = group_hidden(start, data);
  auto params = std::make_shared<std::vector<double>>(gh.joint_table());

  std::vector<hmm::SymbolId> observe;
  for (const auto& ev : gh.data.events)
    observe.push_back(output_symbol(ev, ev.true_label));

  hmm::FbOptions fb;
  fb.max_iters = opts.base.max_iters;
  fb.ll_delta_tol = opts.base.tol;
  fb.record_trace = opts.base.record_trace;
  fb.rescale_groups = gh.rescale_groups();
  fb.stable_max = 0.9;
  if (opts.use_closed_form)
    fb.counts_fn = [](const hmm::TrainingInstance& inst, hmm::ParamCounts& pc, double& ll) {
      ArcCounts ac = cascade_counts(inst.net, inst.observe);
      hmm::accumulate_param_counts(inst.net, ac, pc);
      ll += ac.log_prob;
      return true;
    };

  auto builder = [&](int iteration) {
    const int rot = opts.rotate ? iteration : 0;
    std::vector<hmm::TrainingInstance> segs;
    segs.reserve(gh.data.events.size());
    for (size_t e = 0; e < gh.data.events.size(); ++e)
      segs.push_back({build_hidden_network(gh, static_cast<int>(e), rot, params), observe[e]});
    return segs;
  };

  hmm::FbResult fbres = hmm::train_fb(builder, params, fb, opts.rotate);

  HiddenMaxentModel out;
  out.hidden_values = data.hidden_values;
  out.fixed_outputs = gh.fixed_outputs;
  {
    MaxentModel sel = gh.selector;
    sel.weights.assign(fbres.params.begin(), fbres.params.begin() + gh.sel_size);
    Dataset sel_ds;
    sel_ds.num_features = gh.data.selector_features;
    for (const auto& ev : gh.data.events) {
      EventBlock b;
      b.event_id = ev.event_id;
      b.candidates = ev.selector;
      b.true_label = ev.selector[0].label;
      sel_ds.events.push_back(std::move(b));
    }
    out.selector = strip_complements(sel, sel_ds, gh.sel_part).model;
  }
  for (size_t z = 0; z < gh.emitters.size(); ++z) {
    MaxentModel em = gh.emitters[z];
    const int begin = gh.em_offset[z];
    em.weights.assign(fbres.params.begin() + begin,
                      fbres.params.begin() + begin + em.num_features());
    Dataset em_ds;
    em_ds.num_features = gh.data.emitter_features;
    for (const auto& ev : gh.data.events) {
      EventBlock b;
      b.event_id = ev.event_id;
      b.candidates = ev.outputs[z];
      b.true_label = ev.true_label;
      em_ds.events.push_back(std::move(b));
    }
    out.emitters.push_back(strip_complements(em, em_ds, gh.em_part[z]).model);
  }

  HvTrainReport rep;
  rep.iterations = fbres.iterations;
  rep.ll_trace = std::move(fbres.ll_trace);
  rep.final_ll = rep.ll_trace.empty() ? mixture_ll(out, data) : rep.ll_trace.back();
  return {std::move(out), std::move(rep)};
}

std::pair<HiddenMaxentModel, HvTrainReport> train_hv_em_gis(const HiddenDataset& data,
                                                            const HvTrainOptions& opts,
                                                            const HiddenMaxentModel* init) {
  validate_hidden(data);
  if (data.events.empty()) throw Error("train_hv_em_gis: empty dataset");
  HiddenMaxentModel model = init ? *init : default_hv_init(data, opts.base.seed);
  check_trainable(data, model.deterministic());
  const int k = model.n_hidden();
  const int n = static_cast<int>(data.events.size());

  // Replicated stage datasets, built once; only the event weights move.
  Dataset sel_ds;
  sel_ds.num_features = data.selector_features;
  for (const auto& ev : data.events)
    for (int z = 0; z < k; ++z) {
      EventBlock b;
      b.event_id = ev.event_id;
      b.candidates = ev.selector;
      b.true_label = data.hidden_values[z];
      sel_ds.events.push_back(std::move(b));
    }
  std::vector<Dataset> em_ds(model.deterministic() ? 0 : k);
  for (int z = 0; z < static_cast<int>(em_ds.size()); ++z) {
    em_ds[z].num_features = data.emitter_features;
    for (const auto& ev : data.events) {
      EventBlock b;
      b.event_id = ev.event_id;
      b.candidates = ev.outputs[z];
      b.true_label = ev.true_label;
      em_ds[z].events.push_back(std::move(b));
    }
  }

  TrainOptions inner;
  inner.max_iters = std::max(1, opts.em_inner_iters);
  inner.tol = 1e-13;
  inner.record_trace = false;

  HvTrainReport rep;
  std::vector<double> sel_w(static_cast<size_t>(n) * k, 0.0);
  std::vector<std::vector<double>> em_w(em_ds.size(), std::vector<double>(n, 0.0));
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.base.max_iters; ++iter) {
    double ll = 0.0;
    for (int e = 0; e < n; ++e) {
      const auto& ev = data.events[e];
      const auto sel = selector_probs(model, ev);
      const auto em = emitter_dists(model, ev);
      double marg = 0.0;
      std::vector<double> joint(k);
      for (int z = 0; z < k; ++z) {
        joint[z] = sel[z] * em[z].at(ev.true_label);
        marg += joint[z];
      }
      if (!(marg > 0.0))
        throw Error("train_hv_em_gis: event " + ev.event_id + " has zero marginal");
      ll += std::log(marg);
      for (int z = 0; z < k; ++z) {
        const double r = std::max(joint[z] / marg, 1e-300);
        sel_w[static_cast<size_t>(e) * k + z] = r;
        if (!em_w.empty()) em_w[z][e] = r;
      }
    }
    if (opts.base.record_trace) rep.ll_trace.push_back(ll);
    if (ll - prev_ll <= opts.base.tol * std::max(1.0, std::fabs(ll))) break;
    prev_ll = ll;

    model.selector = train_gis(model.selector, sel_ds, inner, &sel_w).model;
    for (size_t z = 0; z < em_ds.size(); ++z)
      model.emitters[z] = train_gis(model.emitters[z], em_ds[z], inner, &em_w[z]).model;
    ++rep.iterations;
  }
  rep.final_ll = mixture_ll(model, data);
  if (opts.base.record_trace) rep.ll_trace.push_back(rep.final_ll);
  return {std::move(model), rep};
}

}  // namespace maxhmm::hv
