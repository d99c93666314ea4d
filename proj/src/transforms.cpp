#include "maxhmm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace maxhmm {

int GroupPartition::group_of(FeatureId f) const {
  for (size_t g = 0; g < groups.size(); ++g)
    if (std::binary_search(groups[g].members.begin(), groups[g].members.end(), f))
      return static_cast<int>(g);
  return -1;
}

bool GroupPartition::is_complement(FeatureId f) const {
  return std::binary_search(complement_ids.begin(), complement_ids.end(), f);
}

namespace {

// How many members of each group a candidate activates.
std::vector<int> group_hits(const GroupPartition& part, const std::vector<FeatureId>& active,
                            const std::vector<int>& owner) {
  std::vector<int> hits(part.groups.size(), 0);
  for (FeatureId f : active)
    if (f >= 0 && f < static_cast<FeatureId>(owner.size()) && owner[f] >= 0) ++hits[owner[f]];
  return hits;
}

std::vector<int> owner_table(const GroupPartition& part, int g) {
  std::vector<int> owner(g, -1);
  for (size_t s = 0; s < part.groups.size(); ++s)
    for (FeatureId f : part.groups[s].members) {
      if (f < 0 || f >= g) return {};
      owner[f] = static_cast<int>(s);
    }
  return owner;
}

}  // namespace

GroupPartition partition_exclusive(const Dataset& data) {
  validate_dataset(data);
  const int g = data.num_features;

  // Pairwise co-activation from the candidates.
  std::vector<std::set<FeatureId>> coactive(g);
  for (const auto& ev : data.events)
    for (const auto& c : ev.candidates)
      for (size_t i = 0; i < c.active.size(); ++i)
        for (size_t j = i + 1; j < c.active.size(); ++j) {
          coactive[c.active[i]].insert(c.active[j]);
          coactive[c.active[j]].insert(c.active[i]);
        }

  GroupPartition part;
  for (FeatureId f = 0; f < g; ++f) {
    bool placed = false;
    for (auto& grp : part.groups) {
      bool clash = false;
      for (FeatureId m : grp.members)
        if (coactive[f].count(m)) {
          clash = true;
          break;
        }
      if (!clash) {
        grp.members.push_back(f);
        placed = true;
        break;
      }
    }
    if (!placed) part.groups.push_back(Group{{f}, GroupKind::exclusive});
  }

  // Classify each set as exact when every candidate hits it exactly once,
  // then re-verify exclusivity independently of the construction above.
  const std::vector<int> owner = owner_table(part, g);
  std::vector<bool> exact(part.groups.size(), true);
  for (const auto& ev : data.events)
    for (const auto& c : ev.candidates) {
      std::vector<int> hits = group_hits(part, c.active, owner);
      for (size_t s = 0; s < hits.size(); ++s) {
        if (hits[s] > 1)
          throw Error("partition_exclusive: set " + std::to_string(s) +
                      " not exclusive at event " + ev.event_id);
        if (hits[s] == 0) exact[s] = false;
      }
    }
  for (size_t s = 0; s < part.groups.size(); ++s)
    part.groups[s].kind = exact[s] ? GroupKind::exact : GroupKind::exclusive;
  return part;
}

bool partition_valid(const Dataset& data, const GroupPartition& part, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  std::vector<int> seen(data.num_features, 0);
  for (const auto& grp : part.groups) {
    if (grp.members.empty()) return fail("empty group");
    if (!std::is_sorted(grp.members.begin(), grp.members.end())) return fail("unsorted group");
    for (FeatureId f : grp.members) {
      if (f < 0 || f >= data.num_features)
        return fail("feature " + std::to_string(f) + " outside the model");
      if (seen[f]++) return fail("feature " + std::to_string(f) + " in two groups");
    }
  }
  for (int f = 0; f < data.num_features; ++f)
    if (!seen[f]) return fail("feature " + std::to_string(f) + " in no group");

  const std::vector<int> owner = owner_table(part, data.num_features);
  for (const auto& ev : data.events)
    for (const auto& c : ev.candidates) {
      std::vector<int> hits = group_hits(part, c.active, owner);
      for (size_t s = 0; s < hits.size(); ++s) {
        if (hits[s] > 1)
          return fail("set " + std::to_string(s) + " hit twice by candidate " + c.label +
                      " of event " + ev.event_id);
        if (hits[s] == 0 && part.groups[s].kind == GroupKind::exact)
          return fail("exact group " + std::to_string(s) + " missed by candidate " + c.label +
                      " of event " + ev.event_id);
      }
    }
  return true;
}

GroupedModel complete_groups(const MaxentModel& model, const Dataset& data,
                             const GroupPartition& part) {
  std::string why;
  if (!partition_valid(data, part, &why)) throw Error("complete_groups: " + why);
  if (model.num_features() != data.num_features)
    throw Error("complete_groups: model/data feature count mismatch");

  GroupedModel out;
  out.model = model;
  out.data = data;
  out.partition = part;

  const std::vector<int> owner = owner_table(part, data.num_features);
  FeatureId next_id = static_cast<FeatureId>(data.num_features);
  int added = 0;
  for (size_t s = 0; s < part.groups.size(); ++s) {
    // Find the candidates this set misses.
    std::vector<std::pair<size_t, size_t>> missing;
    for (size_t e = 0; e < data.events.size(); ++e)
      for (size_t c = 0; c < data.events[e].candidates.size(); ++c) {
        std::vector<int> hits = group_hits(part, data.events[e].candidates[c].active, owner);
        if (hits[s] == 0) missing.emplace_back(e, c);
      }
    if (missing.empty()) {
      out.partition.groups[s].kind = GroupKind::exact;
      continue;
    }
    const FeatureId comp = next_id++;
    out.model.weights.push_back(1.0);
    out.model.names[comp] = "__comp" + std::to_string(added++);
    out.partition.groups[s].members.push_back(comp);
    out.partition.groups[s].kind = GroupKind::exact;
    out.partition.complement_ids.push_back(comp);
    // New ids grow monotonically, so push_back keeps the lists sorted.
    for (auto [e, c] : missing) out.data.events[e].candidates[c].active.push_back(comp);
  }
  out.data.num_features = static_cast<int>(out.model.weights.size());

  if (!partition_valid(out.data, out.partition, &why))
    throw Error("complete_groups left an invalid partition: " + why);
  return out;
}

MaxentModel scale_group(const MaxentModel& model, const Group& group, double alpha) {
  if (!(alpha > 0.0)) throw Error("scale_group: alpha must be positive");
  MaxentModel out = model;
  for (FeatureId f : group.members) {
    if (f < 0 || f >= out.num_features())
      throw Error("scale_group: feature " + std::to_string(f) + " outside the model");
    out.weights[f] *= alpha;
  }
  return out;
}

MaxentModel to_subunit(const MaxentModel& model, const GroupPartition& part, double margin) {
  MaxentModel out = model;
  for (const auto& grp : part.groups) {
    if (grp.kind != GroupKind::exact)
      throw Error("to_subunit: all groups must be exact; run complete_groups first");
    double mx = 0.0;
    for (FeatureId f : grp.members) mx = std::max(mx, out.weights[f]);
    if (!(mx > 0.0)) throw Error("to_subunit: group has no positive weight");
    const double alpha = 1.0 / ((1.0 + margin) * mx);
    for (FeatureId f : grp.members) out.weights[f] *= alpha;
  }
  return out;
}

StripResult strip_complements(const MaxentModel& model, const Dataset& data,
                              const GroupPartition& part) {
  std::string why;
  if (!partition_valid(data, part, &why)) throw Error("strip_complements: " + why);

  MaxentModel scaled = model;
  for (const auto& grp : part.groups) {
    FeatureId comp = -1;
    for (FeatureId f : grp.members)
      if (part.is_complement(f)) {
        if (comp >= 0)
          throw Error("strip_complements: group has two complement features");
        comp = f;
      }
    if (comp < 0) continue;
    const double w = scaled.weights[comp];
    if (!(w > 0.0)) throw Error("strip_complements: complement weight not positive");
    for (FeatureId f : grp.members) scaled.weights[f] /= w;
  }

  StripResult out;
  out.remap.assign(model.num_features(), -1);
  for (FeatureId f = 0; f < model.num_features(); ++f)
    if (!part.is_complement(f)) {
      out.remap[f] = static_cast<FeatureId>(out.kept.size());
      out.kept.push_back(f);
    }

  out.model.weights.reserve(out.kept.size());
  for (FeatureId f : out.kept) {
    out.model.weights.push_back(scaled.weights[f]);
    auto it = model.names.find(f);
    if (it != model.names.end()) out.model.names[out.remap[f]] = it->second;
  }

  out.data.num_features = static_cast<int>(out.kept.size());
  out.data.events = data.events;
  for (auto& ev : out.data.events)
    for (auto& c : ev.candidates) {
      std::vector<FeatureId> keep;
      keep.reserve(c.active.size());
      for (FeatureId f : c.active)
        if (out.remap[f] >= 0) keep.push_back(out.remap[f]);
      c.active = std::move(keep);
    }

  for (const auto& grp : part.groups) {
    Group ng;
    ng.kind = grp.kind;
    bool dropped = false;
    for (FeatureId f : grp.members) {
      if (out.remap[f] >= 0)
        ng.members.push_back(out.remap[f]);
      else
        dropped = true;
    }
    if (ng.members.empty()) continue;
    // A group that lost its complement is only exclusive on the original data.
    if (dropped) ng.kind = GroupKind::exclusive;
    out.partition.groups.push_back(ng);
  }
  return out;
}

}  // namespace maxhmm
