// Timing comparison for the hot count kernels: the chunked parallel
// expectation pass against its serial reference, and the closed-form chain
// counts against the generic linear-solve engine. Reports timings and the
// worst disagreement; no pass/fail, this is a measurement tool.

#include <chrono>
#include <cstdio>
#include <memory>
#include <vector>

#include "CLI11.hpp"
#include "maxhmm/hmm.hpp"
#include "maxhmm/io.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/parallel.hpp"
#include "maxhmm/reduction.hpp"
#include "maxhmm/transforms.hpp"

using namespace maxhmm;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

void bench_expectations(int events, int reps) {
  io::SynthSpec spec;
  spec.kind = "plain";
  spec.seed = 7;
  spec.n_events = events;
  spec.templates = 5;
  spec.attrs = 8;
  spec.outputs = 5;
  Dataset d = io::synth_generate(spec).data;
  MaxentModel m = MaxentModel::uniform(d.num_features);
  for (size_t i = 0; i < m.weights.size(); ++i) m.weights[i] = 0.5 + 0.001 * (i % 37);

  CountVector par, ser;
  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) par = expected_counts(m, d);
  double par_ms = ms_since(t0) / reps;
  t0 = Clock::now();
  for (int r = 0; r < reps; ++r) ser = expected_counts_serial(m, d);
  double ser_ms = ms_since(t0) / reps;

  std::printf("expectation pass   %d events x %d features, %d reps\n", events, d.num_features,
              reps);
  std::printf("  chunked parallel %8.2f ms/pass  (%d threads)\n", par_ms, par::threads());
  std::printf("  serial reference %8.2f ms/pass  speedup %.2fx  max diff %.2e\n", ser_ms,
              ser_ms / par_ms, max_abs(par, ser));
}

void bench_chain_counts(int events, int reps) {
  io::SynthSpec spec;
  spec.kind = "plain";
  spec.seed = 11;
  spec.n_events = events;
  Dataset base = io::synth_generate(spec).data;
  PruneResult pr = prune_unobserved(base);

  // The same grouped sub-unit segments the trainer iterates over.
  GroupPartition part = partition_exclusive(pr.data);
  GroupedModel gm = complete_groups(MaxentModel::uniform(pr.data.num_features), pr.data, part);
  MaxentModel sub = to_subunit(gm.model, gm.partition);
  red::GroupIndex gi(gm.partition, static_cast<int>(sub.weights.size()));
  auto params = std::make_shared<std::vector<double>>(sub.weights);
  red::SegmentedNetwork seg = red::build_training_network(gm.data, gi, 0, params);

  double worst = 0.0;
  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    for (const auto& inst : seg.segments) red::closed_form_counts(inst.net, inst.observe);
  double closed_ms = ms_since(t0) / reps;
  t0 = Clock::now();
  for (int r = 0; r < reps; ++r)
    for (const auto& inst : seg.segments) hmm::expected_counts(inst.net, inst.observe);
  double engine_ms = ms_since(t0) / reps;
  for (const auto& inst : seg.segments) {
    hmm::ArcCounts a = red::closed_form_counts(inst.net, inst.observe);
    hmm::ArcCounts b = hmm::expected_counts(inst.net, inst.observe);
    worst = std::max(worst, max_abs(a.arc, b.arc));
  }

  std::printf("chain counts       %zu segments, %d reps\n", seg.segments.size(), reps);
  std::printf("  closed form      %8.2f ms/sweep\n", closed_ms);
  std::printf("  generic engine   %8.2f ms/sweep  ratio %.1fx  max diff %.2e\n", engine_ms,
              engine_ms / closed_ms, worst);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"count-kernel timings"};
  int events = 20000;
  int chain_events = 1500;
  int reps = 20;
  app.add_option("--events", events, "events for the expectation pass");
  app.add_option("--chain-events", chain_events, "events for the chain-count sweep");
  app.add_option("--reps", reps, "repetitions per measurement");
  CLI11_PARSE(app, argc, argv);

  bench_expectations(events, reps);
  bench_chain_counts(chain_events, reps);
  return 0;
}
