#pragma once

#include "maxhmm/types.hpp"

namespace maxhmm {

// A group is exact when every candidate of every event activates exactly one
// member; exclusive only promises at most one.
enum class GroupKind { exact, exclusive };

struct Group {
  std::vector<FeatureId> members;  // sorted ascending
  GroupKind kind = GroupKind::exclusive;
};

struct GroupPartition {
  std::vector<Group> groups;
  // Complement features appended by complete_groups, sorted ascending. Each
  // belongs to exactly one group and fires exactly when no original member of
  // that group does.
  std::vector<FeatureId> complement_ids;

  int group_of(FeatureId f) const;  // -1 when absent
  bool is_complement(FeatureId f) const;
};

// Greedy first-fit partition of [0, num_features) into exclusive sets based
// on observed co-activation. A verification pass re-checks exclusivity on the
// way out.
GroupPartition partition_exclusive(const Dataset& data);

// Checks that the partition covers every feature exactly once and that each
// group's kind is consistent with the data. Returns false and fills `why` on
// the first violation.
bool partition_valid(const Dataset& data, const GroupPartition& part, std::string* why);

struct GroupedModel {
  MaxentModel model;
  Dataset data;
  GroupPartition partition;  // every group exact after completion
};

// Turns every exclusive set into an exact group by appending one weight-1
// complement feature per deficient set and materializing its activations into
// the candidates. Candidate distributions are unchanged.
GroupedModel complete_groups(const MaxentModel& model, const Dataset& data,
                             const GroupPartition& part);

// Multiplies every member of the group by alpha (> 0). For exact groups the
// candidate distributions are unchanged: each candidate picks up the same
// factor, which cancels in the normalizer.
MaxentModel scale_group(const MaxentModel& model, const Group& group, double alpha);

inline constexpr double kSubunitMargin = 1e-6;

// Rescales each exact group so its largest weight becomes 1/(1+margin),
// leaving every weight strictly below one. Requires all groups exact.
MaxentModel to_subunit(const MaxentModel& model, const GroupPartition& part,
                       double margin = kSubunitMargin);

struct StripResult {
  MaxentModel model;
  Dataset data;
  GroupPartition partition;
  std::vector<FeatureId> remap;  // old id -> new id, -1 for removed complements
  std::vector<FeatureId> kept;
};

// Inverse of complete_groups: rescales each group so its complement feature
// lands on weight 1, then deletes the complements and renumbers. Candidate
// distributions are unchanged.
StripResult strip_complements(const MaxentModel& model, const Dataset& data,
                              const GroupPartition& part);

}  // namespace maxhmm
