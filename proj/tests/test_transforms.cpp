#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/transforms.hpp"

using namespace maxhmm;

namespace {

double worst_tv(const MaxentModel& a, const MaxentModel& b, const Dataset& da,
                const Dataset& db) {
  double worst = 0.0;
  for (size_t e = 0; e < da.events.size(); ++e)
    worst = std::max(worst, total_variation(evaluate(a, da.events[e]), evaluate(b, db.events[e])));
  return worst;
}

}  // namespace

TEST_CASE("exclusive partition from co-activation") {
  // Features 0 and 1 never fire together; 2 fires alongside both.
  Dataset d;
  d.num_features = 3;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {0, 2}});
  b.candidates.push_back({"M", {1, 2}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  REQUIRE(part.groups.size() == 2);
  CHECK(part.groups[0].members == std::vector<FeatureId>{0, 1});
  CHECK(part.groups[1].members == std::vector<FeatureId>{2});
  std::string why;
  CHECK(partition_valid(d, part, &why));
}

TEST_CASE("fully co-active features fall back to singletons") {
  Dataset d;
  d.num_features = 3;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {0, 1, 2}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  CHECK(part.groups.size() == 3);
  for (const auto& grp : part.groups) CHECK(grp.members.size() == 1);
}

TEST_CASE("empty feature set gives an empty partition") {
  Dataset d;
  d.num_features = 0;
  EventBlock b;
  b.true_label = "L";
  b.candidates.push_back({"L", {}});
  d.events.push_back(b);
  CHECK(partition_exclusive(d).groups.empty());
}

TEST_CASE("completing groups adds weight-1 complements and keeps distributions") {
  // Set {0} fires on candidate A but not B: completion materializes a new
  // feature into B at weight 1.
  Dataset d;
  d.num_features = 1;
  EventBlock b;
  b.true_label = "A";
  b.candidates.push_back({"A", {0}});
  b.candidates.push_back({"B", {}});
  d.events.push_back(b);
  MaxentModel m = fix::rand_model(4, 1);
  GroupedModel gm = complete_groups(m, d, partition_exclusive(d));
  REQUIRE(gm.model.num_features() == 2);
  CHECK(gm.model.weights[1] == 1.0);
  CHECK(gm.data.events[0].candidates[1].active == std::vector<FeatureId>{1});
  CHECK(gm.partition.complement_ids == std::vector<FeatureId>{1});
  CHECK(gm.partition.groups[0].kind == GroupKind::exact);
  CHECK(worst_tv(m, gm.model, d, gm.data) < 1e-15);
}

TEST_CASE("already exact sets stay untouched") {
  Dataset d;
  d.num_features = 2;
  EventBlock b;
  b.true_label = "A";
  b.candidates.push_back({"A", {0}});
  b.candidates.push_back({"B", {1}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);
  REQUIRE(part.groups.size() == 1);  // 0 and 1 never co-fire
  GroupedModel gm = complete_groups(fix::rand_model(6, 2), d, part);
  CHECK(gm.model.num_features() == 2);
  CHECK(gm.partition.complement_ids.empty());
}

TEST_CASE("two-chain fixture with singleton sets gains six complements") {
  Dataset d = fix::two_chain_dataset();
  // Force the worst-case partition: six singleton sets.
  GroupPartition part;
  for (FeatureId f = 0; f < 6; ++f) {
    Group grp;
    grp.members = {f};
    part.groups.push_back(grp);
  }
  GroupedModel gm = complete_groups(fix::two_chain_model(), d, part);
  CHECK(gm.model.num_features() == 12);
  CHECK(gm.partition.complement_ids.size() == 6);
  Distribution p = evaluate(gm.model, gm.data.events[0]);
  CHECK(p.at("L") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p.at("M") == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("scaling an exact group preserves the distribution") {
  Dataset d = fix::two_chain_dataset();
  MaxentModel m = fix::two_chain_model();
  GroupPartition part = partition_exclusive(d);
  REQUIRE(part.groups[0].kind == GroupKind::exact);

  MaxentModel same = scale_group(m, part.groups[0], 1.0);
  CHECK(fix::max_abs_diff(same.weights, m.weights) == 0.0);

  // Features 0 (in L's product) and 3 (in M's) form one exact group; doubling
  // both doubles the two products to 0.25 and 0.125, same conditional.
  Group g01;
  g01.members = {0, 3};
  g01.kind = GroupKind::exact;
  MaxentModel scaled = scale_group(m, g01, 2.0);
  CHECK(scaled.weights[0] == 1.0);
  CHECK(scaled.weights[3] == 1.0);
  Distribution p = evaluate(scaled, d.events[0]);
  CHECK(p.at("L") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  MaxentModel back = scale_group(scale_group(m, g01, 1.7), g01, 1.0 / 1.7);
  CHECK(fix::max_abs_diff(back.weights, m.weights) < 1e-15);

  CHECK_THROWS_AS(scale_group(m, g01, 0.0), Error);
}

TEST_CASE("pushing below one rescales by the group maximum") {
  Dataset d;
  d.num_features = 2;
  EventBlock b;
  b.true_label = "A";
  b.candidates.push_back({"A", {0}});
  b.candidates.push_back({"B", {1}});
  d.events.push_back(b);
  MaxentModel m;
  m.weights = {2.0, 4.0};
  GroupPartition part = partition_exclusive(d);
  part.groups[0].kind = GroupKind::exact;
  MaxentModel sub = to_subunit(m, part);
  CHECK(sub.weights[1] == doctest::Approx(1.0 / (1.0 + kSubunitMargin)).epsilon(1e-15));
  CHECK(sub.weights[0] == doctest::Approx(0.5 / (1.0 + kSubunitMargin)).epsilon(1e-15));
  CHECK(sub.weights[0] < 1.0);
  CHECK(sub.weights[1] < 1.0);
  CHECK(worst_tv(m, sub, d, d) < 1e-12);
}

TEST_CASE("subunit requires exact groups") {
  Dataset d;
  d.num_features = 1;
  EventBlock b;
  b.true_label = "A";
  b.candidates.push_back({"A", {0}});
  b.candidates.push_back({"B", {}});
  d.events.push_back(b);
  GroupPartition part = partition_exclusive(d);  // {0} is exclusive, not exact
  MaxentModel m = fix::rand_model(8, 1);
  CHECK_THROWS_AS(to_subunit(m, part), Error);
}

TEST_CASE("complete, subunit, strip round-trip on the fixture") {
  Dataset d = fix::two_chain_dataset();
  MaxentModel m = fix::two_chain_model();
  GroupPartition part = partition_exclusive(d);
  GroupedModel gm = complete_groups(m, d, part);
  MaxentModel sub = to_subunit(gm.model, gm.partition);
  for (double w : sub.weights) CHECK(w < 1.0);

  StripResult sr = strip_complements(sub, gm.data, gm.partition);
  CHECK(sr.model.num_features() == 6);
  Distribution p = evaluate(sr.model, sr.data.events[0]);
  CHECK(p.at("L") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p.at("M") == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("stripping without complements is the identity") {
  Dataset d = fix::two_chain_dataset();
  MaxentModel m = fix::two_chain_model();
  GroupPartition part = partition_exclusive(d);
  StripResult sr = strip_complements(m, d, part);
  CHECK(fix::max_abs_diff(sr.model.weights, m.weights) == 0.0);
  CHECK(sr.data.events[0].candidates[0].active == d.events[0].candidates[0].active);
}

TEST_CASE("transform chain preserves distributions on seeded instances") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    Dataset d = fix::rand_dataset(seed, 2 + seed % 3, 8, 12);
    MaxentModel m = fix::rand_model(seed + 900, 8, 1.5);
    GroupPartition part = partition_exclusive(d);
    std::string why;
    REQUIRE_MESSAGE(partition_valid(d, part, &why), why);

    GroupedModel gm = complete_groups(m, d, part);
    MaxentModel sub = to_subunit(gm.model, gm.partition);
    StripResult sr = strip_complements(sub, gm.data, gm.partition);

    for (size_t e = 0; e < d.events.size(); ++e) {
      Distribution orig = evaluate(m, d.events[e]);
      CHECK(total_variation(orig, evaluate(gm.model, gm.data.events[e])) < 1e-12);
      CHECK(total_variation(orig, evaluate(sub, gm.data.events[e])) < 1e-12);
      CHECK(total_variation(orig, evaluate(sr.model, sr.data.events[e])) < 1e-12);
    }
    for (double w : sub.weights) CHECK(w < 1.0);
  }
}

TEST_CASE("completion preserves the largest active set when sets are exact") {
  Dataset d = fix::two_chain_dataset();
  GroupPartition part = partition_exclusive(d);
  int before = max_active_count(d);
  GroupedModel gm = complete_groups(fix::two_chain_model(), d, part);
  int non_exact = static_cast<int>(gm.partition.complement_ids.size());
  CHECK(max_active_count(gm.data) <= before + non_exact);
  if (non_exact == 0) CHECK(max_active_count(gm.data) == before);
}
