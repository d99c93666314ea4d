#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace maxhmm {

using FeatureId = std::int32_t;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Thrown when training is asked to fit features that never fire on any true
// candidate; their constraint target is zero and the multiplicative update
// has no finite fixed point for them.
class UnobservedFeatureError : public Error {
public:
  explicit UnobservedFeatureError(std::vector<FeatureId> ids);
  const std::vector<FeatureId>& features() const { return ids_; }

private:
  std::vector<FeatureId> ids_;
};

// One possible outcome of an event: a label plus the binary features that
// fire for it. Feature ids are kept sorted ascending.
struct Candidate {
  std::string label;
  std::vector<FeatureId> active;
};

struct EventBlock {
  std::string event_id;
  std::string true_label;
  std::vector<Candidate> candidates;

  int true_index() const;  // index of true_label among candidates, -1 if absent
};

struct Dataset {
  std::vector<EventBlock> events;
  int num_features = 0;
};

// Multiplicative-weight conditional model: each candidate scores the product
// of weights of its active features, normalized over the event's candidates.
struct MaxentModel {
  std::vector<double> weights;
  std::map<FeatureId, std::string> names;

  int num_features() const { return static_cast<int>(weights.size()); }
  static MaxentModel uniform(int g);
};

using Distribution = std::map<std::string, double>;
using CountVector = std::vector<double>;

struct TrainOptions {
  int max_iters = 1000;
  double tol = 1e-6;     // max relative constraint residual at convergence
  std::uint64_t seed = 1;
  bool record_trace = true;
};

double total_variation(const Distribution& a, const Distribution& b);

// Structural checks shared by every consumer of a Dataset: candidate lists
// non-empty, labels unique within an event, true label present, feature ids
// sorted, unique and inside [0, num_features).
void validate_dataset(const Dataset& data);

}  // namespace maxhmm
