#include "maxhmm/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace maxhmm {

namespace {
std::string join_ids(const std::vector<FeatureId>& ids) {
  std::ostringstream os;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) os << ' ';
    os << ids[i];
  }
  return os.str();
}
}  // namespace

UnobservedFeatureError::UnobservedFeatureError(std::vector<FeatureId> ids)
    : Error("features never active on a true candidate: " + join_ids(ids)), ids_(std::move(ids)) {}

int EventBlock::true_index() const {
  for (size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].label == true_label) return static_cast<int>(i);
  return -1;
}

MaxentModel MaxentModel::uniform(int g) {
  MaxentModel m;
  m.weights.assign(g, 1.0);
  return m;
}

double total_variation(const Distribution& a, const Distribution& b) {
  double sum = 0.0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    sum += std::fabs(v - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : b)
    if (!a.count(k)) sum += std::fabs(v);
  return 0.5 * sum;
}

void validate_dataset(const Dataset& data) {
  if (data.num_features < 0) throw Error("negative feature count");
  for (const auto& ev : data.events) {
    if (ev.candidates.empty()) throw Error("event " + ev.event_id + ": no candidates");
    std::set<std::string> labels;
    for (const auto& c : ev.candidates) {
      if (!labels.insert(c.label).second)
        throw Error("event " + ev.event_id + ": duplicate candidate label " + c.label);
      for (size_t i = 0; i < c.active.size(); ++i) {
        FeatureId f = c.active[i];
        if (f < 0 || f >= data.num_features)
          throw Error("event " + ev.event_id + ": feature id " + std::to_string(f) +
                      " outside [0, " + std::to_string(data.num_features) + ")");
        if (i > 0 && c.active[i - 1] >= f)
          throw Error("event " + ev.event_id + ": feature ids of candidate " + c.label +
                      " not sorted strictly ascending");
      }
    }
    if (ev.true_index() < 0)
      throw Error("event " + ev.event_id + ": true label " + ev.true_label +
                  " is not among the candidates");
  }
}

}  // namespace maxhmm
