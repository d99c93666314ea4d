#include "maxhmm/seq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "maxhmm/reduction.hpp"

namespace maxhmm::seq {

const MaxentModel& MemmModel::model_for(const std::string& state) const {
  auto it = per_state.find(state);
  if (it == per_state.end()) throw Error("memm: no model for source state '" + state + "'");
  return it->second;
}

std::pair<MemmModel, MemmTrainReport> train_memm(const std::vector<SeqEventBlock>& blocks,
                                                 const TrainOptions& opts) {
  if (blocks.empty()) throw Error("train_memm: no transition blocks");

  int nf = 0;
  for (const auto& b : blocks)
    for (const auto& c : b.candidates)
      for (FeatureId f : c.active) nf = std::max(nf, f + 1);

  std::map<std::string, std::vector<EventBlock>> by_src;
  for (const auto& b : blocks) {
    EventBlock ev;
    ev.event_id = b.sequence_id + ":" + std::to_string(b.position);
    ev.true_label = b.gold_next;
    ev.candidates = b.candidates;
    by_src[b.src_state].push_back(std::move(ev));
  }

  MemmModel mm;
  mm.num_features = nf;
  MemmTrainReport rep;
  for (auto& [state, events] : by_src) {
    Dataset ds;
    ds.events = std::move(events);
    ds.num_features = nf;
    validate_dataset(ds);

    // Features never firing on this state's gold transitions have no finite
    // multiplicative fixed point; drop them here, which pins them at weight 1.
    PruneResult pr = prune_unobserved(ds);
    GisResult res = train_gis(MaxentModel::uniform(pr.data.num_features), pr.data, opts);

    mm.states.push_back(state);
    rep.residuals[state] = res.final_residual;
    rep.iterations[state] = res.iterations;
    rep.ll_traces[state] = std::move(res.ll_trace);
    mm.per_state.emplace(state, std::move(res.model));
    mm.kept.emplace(state, std::move(pr.kept));
  }
  return {std::move(mm), std::move(rep)};
}

Distribution memm_transition(const MemmModel& model, const SeqEventBlock& block) {
  const MaxentModel& m = model.model_for(block.src_state);
  const std::vector<FeatureId>& kept = model.kept.at(block.src_state);
  std::vector<FeatureId> remap(static_cast<size_t>(model.num_features), -1);
  for (size_t i = 0; i < kept.size(); ++i) remap[static_cast<size_t>(kept[i])] = (FeatureId)i;

  EventBlock local;
  local.event_id = block.sequence_id;
  local.candidates.reserve(block.candidates.size());
  for (const auto& c : block.candidates) {
    Candidate lc;
    lc.label = c.label;
    for (FeatureId f : c.active) {
      if (f < 0 || f >= model.num_features)
        throw Error("memm_transition: feature id out of range");
      // Pruned features sit at weight 1 and drop out of the product.
      if (remap[static_cast<size_t>(f)] >= 0) lc.active.push_back(remap[static_cast<size_t>(f)]);
    }
    local.candidates.push_back(std::move(lc));
  }
  if (local.candidates.empty()) throw Error("memm_transition: block has no candidates");
  local.true_label = local.candidates.front().label;
  return evaluate(m, local);
}

DecodeResult memm_sequence_posterior(const MemmModel& model,
                                     const std::vector<SeqEventBlock>& sequence,
                                     const std::map<std::string, double>* initial) {
  if (sequence.empty()) throw Error("memm decode: empty sequence");

  // One sub-map per position; several blocks may share a position as long as
  // their source states differ (one per state the decoder could be in).
  std::map<int, std::map<std::string, const SeqEventBlock*>> by_pos;
  int horizon = 0;
  for (const auto& b : sequence) {
    if (b.position < 1) throw Error("memm decode: positions are 1-based");
    auto [it, fresh] = by_pos[b.position].emplace(b.src_state, &b);
    (void)it;
    if (!fresh)
      throw Error("memm decode: duplicate block for state '" + b.src_state + "' at position " +
                  std::to_string(b.position));
    horizon = std::max(horizon, b.position);
  }
  for (int t = 1; t <= horizon; ++t)
    if (!by_pos.count(t)) throw Error("memm decode: missing position " + std::to_string(t));

  struct Cell {
    double best = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    int back_pos = -1;
    std::string back_state;
  };
  std::map<std::string, Cell> layer;
  for (const auto& [state, blk] : by_pos[1]) {
    (void)blk;
    double pi;
    if (initial) {
      auto it = initial->find(state);
      pi = it == initial->end() ? 0.0 : it->second;
    } else {
      pi = 1.0 / static_cast<double>(by_pos[1].size());
    }
    if (pi < 0.0) throw Error("memm decode: negative initial probability");
    if (pi == 0.0) continue;
    layer[state] = Cell{std::log(pi), pi, -1, ""};
  }
  if (layer.empty()) throw Error("memm decode: initial distribution covers no starting state");

  std::vector<std::map<std::string, Cell>> trellis;
  trellis.push_back(layer);
  for (int t = 1; t <= horizon; ++t) {
    std::map<std::string, Cell> next;
    for (const auto& [state, blk] : by_pos[t]) {
      auto prev = trellis.back().find(state);
      if (prev == trellis.back().end()) continue;  // unreachable source, no mass
      Distribution dist = memm_transition(model, *blk);
      for (const auto& [label, p] : dist) {
        if (p <= 0.0) continue;
        double lb = prev->second.best + std::log(p);
        Cell& cell = next[label];
        cell.sum += prev->second.sum * p;
        if (lb > cell.best) {
          cell.best = lb;
          cell.back_pos = t - 1;
          cell.back_state = state;
        }
      }
    }
    if (next.empty()) throw Error("memm decode: no path survives position " + std::to_string(t));
    trellis.push_back(std::move(next));
  }

  DecodeResult out;
  const auto& last = trellis.back();
  auto best = last.begin();
  for (auto it = std::next(last.begin()); it != last.end(); ++it)
    if (it->second.best > best->second.best) best = it;
  out.log_prob = best->second.best;
  for (const auto& [label, cell] : last) out.total_mass += cell.sum;

  out.path.assign(static_cast<size_t>(horizon) + 1, "");
  out.path[static_cast<size_t>(horizon)] = best->first;
  std::string cur = best->first;
  for (int t = horizon; t >= 1; --t) {
    cur = trellis[static_cast<size_t>(t)].at(cur).back_state;
    out.path[static_cast<size_t>(t) - 1] = cur;
  }
  return out;
}

TransitionComponent make_component(const std::string& src, const MaxentModel& model,
                                   const EventBlock& block) {
  if (block.candidates.empty()) throw Error("make_component: block has no candidates");
  EventBlock b = block;
  if (b.event_id.empty()) b.event_id = src;
  if (b.true_index() < 0) b.true_label = b.candidates.front().label;

  Dataset ds;
  ds.num_features = model.num_features();
  ds.events.push_back(std::move(b));
  validate_dataset(ds);

  GroupPartition part = partition_exclusive(ds);
  GroupedModel gm = complete_groups(model, ds, part);
  MaxentModel sub = to_subunit(gm.model, gm.partition);

  TransitionComponent tc;
  tc.src = src;
  tc.model = std::move(sub);
  tc.part = std::move(gm.partition);
  tc.block = gm.data.events[0];
  return tc;
}

namespace {

// Shared cloud assembly. The cloud hangs off `anchor`; advancing out of
// candidate k leaves toward terminal_dst[k], emitting terminal_emit[k]
// (kNoEmit for silent). Failure arcs go to fail_target. Chain parameters sit
// at table offset `off` plus the grouped feature id. Returns per-candidate
// route arc indices (branch arc, then every advancing arc).
std::vector<std::vector<int>> emit_cloud(hmm::HmmNetwork& net, int& next_state,
                                         const TransitionComponent& tc, int off,
                                         hmm::StateId anchor, hmm::StateId fail_target,
                                         const std::vector<hmm::StateId>& terminal_dst,
                                         const std::vector<hmm::SymbolId>& terminal_emit) {
  red::GroupIndex gi(tc.part, tc.model.num_features());
  red::ChainLayout layout = red::make_layout(gi, tc.block, 0);

  const size_t n_cand = tc.block.candidates.size();
  std::vector<std::vector<int>> routes(n_cand);
  for (size_t k = 0; k < n_cand; ++k) {
    const auto& chain = layout.positions[k];
    if (chain.empty()) {
      routes[k].push_back(static_cast<int>(net.arcs.size()));
      net.arcs.push_back({anchor, terminal_dst[k], hmm::ParamRef::fixed(layout.branch_prob),
                          terminal_emit[k]});
      continue;
    }
    std::vector<hmm::StateId> nodes(chain.size());
    for (size_t j = 0; j < chain.size(); ++j) nodes[j] = next_state++;

    routes[k].push_back(static_cast<int>(net.arcs.size()));
    net.arcs.push_back({anchor, nodes[0], hmm::ParamRef::fixed(layout.branch_prob), hmm::kNoEmit});
    for (size_t j = 0; j < chain.size(); ++j) {
      int pid = off + chain[j].second;
      bool last = j + 1 == chain.size();
      hmm::StateId adv_dst = last ? terminal_dst[k] : nodes[j + 1];
      hmm::SymbolId sym = last ? terminal_emit[k] : hmm::kNoEmit;
      routes[k].push_back(static_cast<int>(net.arcs.size()));
      net.arcs.push_back({nodes[j], adv_dst, hmm::ParamRef::direct(pid), sym});
      net.arcs.push_back({nodes[j], fail_target, hmm::ParamRef::complement(pid), hmm::kNoEmit});
    }
  }
  return routes;
}

}  // namespace

SeqNetBuild build_sequence_network(const SeqNetSpec& spec) {
  if (spec.horizon < 1) throw Error("build_sequence_network: horizon must be at least 1");
  if (static_cast<int>(spec.components.size()) != spec.horizon)
    throw Error("build_sequence_network: need one component map per position");
  if (spec.states.empty()) throw Error("build_sequence_network: no states");
  auto state_index = [&](const std::string& s) {
    auto it = std::find(spec.states.begin(), spec.states.end(), s);
    if (it == spec.states.end())
      throw Error("build_sequence_network: unknown state '" + s + "'");
    return static_cast<int>(it - spec.states.begin());
  };
  state_index(spec.initial_state);

  SeqNetBuild out;
  out.params = std::make_shared<std::vector<double>>();
  out.net.params = out.params;
  out.net.start = 0;
  out.net.end = 1;
  int next_state = 2;

  out.anchors[{0, spec.initial_state}] = out.net.start;
  std::set<std::string> frontier = {spec.initial_state};

  for (int t = 0; t < spec.horizon; ++t) {
    std::set<std::string> next_frontier;
    for (const std::string& src : frontier) {
      auto cit = spec.components[t].find(src);
      if (cit == spec.components[t].end())
        throw Error("build_sequence_network: no component for state '" + src + "' at position " +
                    std::to_string(t + 1));
      const TransitionComponent& tc = cit->second;

      int off = static_cast<int>(out.params->size());
      for (double w : tc.model.weights) {
        if (!(w > 0.0 && w < 1.0))
          throw Error("build_sequence_network: component weights must lie in (0, 1)");
        out.params->push_back(w);
      }

      hmm::StateId anchor = out.anchors.at({t, src});
      hmm::StateId fail = spec.kind == SeqNetKind::crf ? out.net.start : anchor;

      std::vector<hmm::StateId> terminal_dst;
      std::vector<hmm::SymbolId> terminal_emit;
      for (const auto& cand : tc.block.candidates) {
        int ni = state_index(cand.label);
        auto key = std::make_pair(t + 1, cand.label);
        auto [it, fresh] = out.anchors.emplace(key, next_state);
        if (fresh) ++next_state;
        terminal_dst.push_back(it->second);
        switch (spec.kind) {
          case SeqNetKind::memm:
            terminal_emit.push_back(ni);
            break;
          case SeqNetKind::maxent_hmm: {
            auto eit = spec.emit.find({src, cand.label});
            if (eit == spec.emit.end())
              throw Error("build_sequence_network: no emission symbol for " + src + " -> " +
                          cand.label);
            terminal_emit.push_back(eit->second);
            break;
          }
          case SeqNetKind::crf:
            terminal_emit.push_back(hmm::kNoEmit);
            break;
        }
        next_frontier.insert(cand.label);
      }

      auto routes = emit_cloud(out.net, next_state, tc, off, anchor, fail, terminal_dst,
                               terminal_emit);
      for (size_t k = 0; k < routes.size(); ++k)
        out.routes[{t, src, tc.block.candidates[k].label}] = std::move(routes[k]);
    }
    frontier = std::move(next_frontier);
  }

  for (const std::string& s : frontier)
    out.net.arcs.push_back({out.anchors.at({spec.horizon, s}), out.net.end,
                            hmm::ParamRef::fixed(1.0), hmm::kNoEmit});

  out.net.num_states = next_state;
  return out;
}

}  // namespace maxhmm::seq
