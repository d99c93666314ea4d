#include <cmath>
#include <memory>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "maxhmm/reduction.hpp"
#include "oracle.hpp"

using namespace maxhmm;

namespace {

hmm::HmmNetwork event_net(const EventBlock& block, const GroupPartition& part,
                          const std::vector<double>& weights, int rotation = 0) {
  auto params = std::make_shared<std::vector<double>>(weights);
  red::GroupIndex gi(part, static_cast<int>(weights.size()));
  return red::build_event_network(block, red::make_layout(gi, block, rotation), params);
}

Dataset three_one_dataset() {
  Dataset d;
  d.num_features = 2;
  for (int e = 0; e < 4; ++e) {
    EventBlock b;
    b.event_id = "e" + std::to_string(e);
    b.true_label = e < 3 ? "L" : "M";
    b.candidates.push_back({"L", {0}});
    b.candidates.push_back({"M", {1}});
    d.events.push_back(b);
  }
  return d;
}

}  // namespace

TEST_CASE("fixture reduction has two three-step chains") {
  Dataset d = fix::two_chain_dataset();
  GroupPartition part = partition_exclusive(d);
  hmm::HmmNetwork net = event_net(d.events[0], part, fix::two_chain_model().weights);

  // start, end, and three chain states per candidate
  CHECK(net.num_states == 8);
  int branch = 0, direct = 0, comp = 0, emitting = 0;
  for (const auto& a : net.arcs) {
    if (a.prob.pol == hmm::Polarity::fixed) {
      ++branch;
      CHECK(a.prob.value == doctest::Approx(0.5));
    }
    if (a.prob.pol == hmm::Polarity::direct) ++direct;
    if (a.prob.pol == hmm::Polarity::complement) {
      ++comp;
      CHECK(a.dst == net.start);
    }
    if (a.emit != hmm::kNoEmit) ++emitting;
  }
  CHECK(branch == 2);
  CHECK(direct == 6);
  CHECK(comp == 6);
  CHECK(emitting == 2);

  std::map<hmm::SymbolId, double> dist = hmm::output_distribution(net);
  Distribution ref = evaluate(fix::two_chain_model(), d.events[0]);
  CHECK(dist.at(0) == doctest::Approx(ref.at("L")).epsilon(1e-12));
  CHECK(dist.at(1) == doctest::Approx(ref.at("M")).epsilon(1e-12));
}

TEST_CASE("reduction matches evaluation on seeded instances") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    fix::SubunitInstance inst = fix::rand_subunit(seed, 2 + seed % 3, 7, 4);
    for (const auto& ev : inst.data.events) {
      hmm::HmmNetwork net = event_net(ev, inst.part, inst.model.weights);
      REQUIRE(hmm::validate(net).empty());
      std::map<hmm::SymbolId, double> dist = hmm::output_distribution(net);
      Distribution ref = evaluate(inst.model, ev);
      for (size_t c = 0; c < ev.candidates.size(); ++c)
        CHECK(dist.at(static_cast<int>(c)) ==
              doctest::Approx(ref.at(ev.candidates[c].label)).epsilon(1e-10));
    }
  }
}

TEST_CASE("a candidate with no active features becomes one fixed emitting arc") {
  Dataset d;
  d.num_features = 1;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {0}});
  b.candidates.push_back({"M", {}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  hmm::HmmNetwork net = event_net(b, part, {0.5});

  bool found = false;
  for (const auto& a : net.arcs) {
    if (a.src == net.start && a.dst == net.end) {
      found = true;
      CHECK(a.emit == 1);
      CHECK(a.prob.pol == hmm::Polarity::fixed);
      CHECK(a.prob.value == doctest::Approx(0.5));
    }
  }
  CHECK(found);

  // P(L) = 0.5 * 0.5 retried vs 0.5 immediate: products 0.5 vs 1 -> 1/3, 2/3.
  std::map<hmm::SymbolId, double> dist = hmm::output_distribution(net);
  CHECK(dist.at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(dist.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("rotation permutes chain order but not the distribution") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    fix::SubunitInstance inst = fix::rand_subunit(seed, 3, 7, 4);
    red::GroupIndex gi(inst.part, inst.model.num_features());
    const auto& ev = inst.data.events[0];
    std::map<hmm::SymbolId, double> base =
        hmm::output_distribution(event_net(ev, inst.part, inst.model.weights, 0));
    for (int rot = 1; rot < gi.n_groups; ++rot) {
      std::map<hmm::SymbolId, double> rotated =
          hmm::output_distribution(event_net(ev, inst.part, inst.model.weights, rot));
      for (const auto& [sym, p] : base)
        CHECK(rotated.at(sym) == doctest::Approx(p).epsilon(1e-12));
    }
  }
}

TEST_CASE("rotation cycles the group order with period n_groups") {
  Dataset d = fix::two_chain_dataset();
  red::GroupIndex gi(partition_exclusive(d), 6);
  REQUIRE(gi.n_groups == 3);
  red::ChainLayout rot0 = red::make_layout(gi, d.events[0], 0);
  red::ChainLayout rot3 = red::make_layout(gi, d.events[0], 3);
  CHECK(rot0.positions == rot3.positions);
  red::ChainLayout rot1 = red::make_layout(gi, d.events[0], 1);
  CHECK(rot0.positions != rot1.positions);

  // Same features, different order.
  std::set<FeatureId> f0, f1;
  for (const auto& [g, f] : rot0.positions[0]) f0.insert(f);
  for (const auto& [g, f] : rot1.positions[0]) f1.insert(f);
  CHECK(f0 == f1);
}

TEST_CASE("training segments share one table and mirror the event networks") {
  Dataset d = three_one_dataset();
  GroupPartition part = partition_exclusive(d);
  red::GroupIndex gi(part, 2);
  auto params = std::make_shared<std::vector<double>>(std::vector<double>{0.6, 0.6});
  red::SegmentedNetwork sn = red::build_training_network(d, gi, 0, params);

  REQUIRE(sn.segments.size() == 4);
  CHECK(sn.params == params);
  for (size_t e = 0; e < sn.segments.size(); ++e) {
    CHECK(sn.segments[e].net.params == params);
    CHECK(sn.segments[e].observe == d.events[e].true_index());
    std::map<hmm::SymbolId, double> seg = hmm::output_distribution(sn.segments[e].net);
    std::map<hmm::SymbolId, double> ref =
        hmm::output_distribution(event_net(d.events[e], part, *params));
    for (const auto& [sym, p] : ref) CHECK(seg.at(sym) == doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("closed-form counts equal the generic engine") {
  Dataset d = fix::two_chain_dataset();
  GroupPartition part = partition_exclusive(d);
  for (int obs = 0; obs < 2; ++obs) {
    hmm::HmmNetwork net = event_net(d.events[0], part, fix::two_chain_model().weights);
    hmm::ArcCounts a = red::closed_form_counts(net, obs);
    hmm::ArcCounts b = hmm::expected_counts(net, obs);
    CHECK(fix::max_abs_diff(a.arc, b.arc) < 1e-10);
    CHECK(fix::max_abs_diff(a.visits, b.visits) < 1e-10);
    CHECK(a.log_prob == doctest::Approx(b.log_prob).epsilon(1e-12));
  }

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    fix::SubunitInstance inst = fix::rand_subunit(seed, 2 + seed % 4, 8, 3);
    for (const auto& ev : inst.data.events) {
      hmm::HmmNetwork net = event_net(ev, inst.part, inst.model.weights);
      for (size_t c = 0; c < ev.candidates.size(); ++c) {
        hmm::ArcCounts a = red::closed_form_counts(net, static_cast<int>(c));
        hmm::ArcCounts b = hmm::expected_counts(net, static_cast<int>(c));
        CHECK(fix::max_abs_diff(a.arc, b.arc) < 1e-10);
        CHECK(fix::max_abs_diff(a.visits, b.visits) < 1e-10);
      }
    }
  }
}

TEST_CASE("closed form handles the near-deterministic limit") {
  Dataset d;
  d.num_features = 2;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {0, 1}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  hmm::HmmNetwork net = event_net(b, part, {1.0 - 1e-9, 1.0 - 1e-9});
  hmm::ArcCounts a = red::closed_form_counts(net, 0);
  hmm::ArcCounts g = hmm::expected_counts(net, 0);
  CHECK(fix::max_abs_diff(a.arc, g.arc) < 1e-10);
  for (size_t i = 0; i < net.arcs.size(); ++i)
    if (net.arcs[i].prob.pol != hmm::Polarity::complement)
      CHECK(a.arc[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("half-weight single chain visits start twice") {
  Dataset d;
  d.num_features = 1;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {0}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  hmm::HmmNetwork net = event_net(b, part, {0.5});
  hmm::ArcCounts c = red::closed_form_counts(net, 0);
  CHECK(c.visits[static_cast<size_t>(net.start)] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("closed form rejects foreign topologies") {
  hmm::HmmNetwork net;
  net.num_states = 3;
  net.start = 0;
  net.end = 2;
  net.params = std::make_shared<std::vector<double>>();
  net.arcs.push_back({0, 1, hmm::ParamRef::fixed(0.5), hmm::kNoEmit});
  net.arcs.push_back({0, 2, hmm::ParamRef::fixed(0.5), 0});
  net.arcs.push_back({1, 0, hmm::ParamRef::fixed(0.3), hmm::kNoEmit});
  net.arcs.push_back({1, 2, hmm::ParamRef::fixed(0.7), 1});
  CHECK_THROWS_AS(red::closed_form_counts(net, 0), Error);
}

TEST_CASE("forward-backward training reaches the three-to-one optimum") {
  Dataset d = three_one_dataset();
  red::HmmTrainOptions opts;
  opts.base.tol = 1e-6;
  opts.base.max_iters = 20000;
  auto [model, report] = red::train_maxent_via_hmm(d, opts);
  Distribution dist = evaluate(model, d.events[0]);
  CHECK(dist.at("L") == doctest::Approx(0.75).epsilon(1e-3));
  CHECK(dist.at("M") == doctest::Approx(0.25).epsilon(1e-3));
  CHECK(report.final_residual <= 1e-6);
  CHECK(report.n_groups >= 1);
}

TEST_CASE("both trainers land on the same distributions") {
  Dataset d = fix::rand_dataset(11, 3, 5, 40, 0.5);
  TrainOptions gopts;
  gopts.tol = 1e-5;
  gopts.max_iters = 50000;
  GisResult gis = train_gis(MaxentModel::uniform(5), d, gopts);
  REQUIRE(gis.final_residual <= 1e-5);

  red::HmmTrainOptions hopts;
  hopts.base = gopts;
  auto [viahmm, report] = red::train_maxent_via_hmm(d, hopts, &gis.model);
  REQUIRE(report.final_residual <= 1e-5);
  CHECK(report.max_tv_vs_reference < 1e-3);

  // The generic engine must reproduce the closed-form run.
  red::HmmTrainOptions generic = hopts;
  generic.use_closed_form = false;
  auto [viahmm2, report2] = red::train_maxent_via_hmm(d, generic, &gis.model);
  CHECK(report2.max_tv_vs_reference < 1e-3);
  for (const auto& ev : d.events) {
    Distribution a = evaluate(viahmm, ev);
    Distribution b = evaluate(viahmm2, ev);
    CHECK(total_variation(a, b) < 1e-6);
  }
}

TEST_CASE("likelihood is monotone under forward-backward") {
  Dataset d = fix::rand_dataset(17, 2, 6, 30, 0.5);
  red::HmmTrainOptions opts;
  opts.base.tol = 1e-4;
  opts.base.max_iters = 5000;
  auto [model, report] = red::train_maxent_via_hmm(d, opts);
  REQUIRE(report.ll_trace.size() >= 2);
  for (size_t i = 1; i < report.ll_trace.size(); ++i)
    CHECK(report.ll_trace[i] >= report.ll_trace[i - 1] - 1e-9);
}
