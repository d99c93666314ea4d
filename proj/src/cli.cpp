#include "maxhmm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "maxhmm/hidden.hpp"
#include "maxhmm/io.hpp"
#include "maxhmm/maxent.hpp"
#include "maxhmm/reduction.hpp"
#include "maxhmm/seq.hpp"
#include "maxhmm/transforms.hpp"

namespace maxhmm::cli {

namespace {

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

MaxentModel pad_model(const MaxentModel& m, int g) {
  if (m.num_features() >= g) return m;
  MaxentModel out = m;
  out.weights.resize(static_cast<size_t>(g), 1.0);  // absent features drop out of products
  return out;
}

// Lift a model trained on the pruned feature space back onto the full one;
// pruned features never fired on a true candidate, so weight 1 leaves every
// conditional unchanged.
MaxentModel restore_full(const MaxentModel& pruned, const std::vector<FeatureId>& kept,
                         int full_g) {
  MaxentModel full;
  full.weights.assign(static_cast<size_t>(full_g), 1.0);
  for (size_t j = 0; j < kept.size(); ++j) {
    full.weights[static_cast<size_t>(kept[j])] = pruned.weights[j];
    auto it = pruned.names.find(static_cast<FeatureId>(j));
    if (it != pruned.names.end()) full.names[kept[j]] = it->second;
  }
  return full;
}

int plain_space_of(const hv::HiddenMaxentModel& h) {
  const int k = h.n_hidden();
  if (k < 1) throw Error("hidden model has no hidden values");
  if (h.selector.num_features() % k != 0)
    throw Error("hidden model selector size is not a multiple of the value count");
  const int pg = h.selector.num_features() / k;
  if (!h.deterministic())
    for (const auto& em : h.emitters)
      if (em.num_features() != pg)
        throw Error("hidden model emitter size disagrees with the selector");
  return pg;
}

Distribution model_dist(const io::ModelFile& mf, const EventBlock& block, int data_g) {
  if (mf.kind == io::ModelKind::plain)
    return evaluate(pad_model(mf.plain, data_g), block);
  if (mf.kind == io::ModelKind::hidden) {
    const int pg = plain_space_of(mf.hidden);
    for (const auto& c : block.candidates)
      for (FeatureId f : c.active)
        if (f >= pg)
          throw Error("event " + block.event_id + " uses features beyond the hidden model");
    return hv::hv_evaluate(mf.hidden, hv::augment_block(block, mf.hidden.n_hidden(), pg));
  }
  throw Error("memm models apply to sequence data; use memm-decode");
}

void print_trace(std::ostream& out, const std::vector<double>& trace) {
  for (double v : trace) out << "ll " << num(v) << '\n';
}

// Residual over the features with positive observed count; features the data
// never observes carry no constraint.
std::pair<double, int> residual_of(const MaxentModel& model, const Dataset& data) {
  const int n = std::max(model.num_features(), data.num_features);
  Dataset d2 = data;
  d2.num_features = n;
  const CountVector obs = observed_counts(d2);
  const CountVector exp = expected_counts(pad_model(model, n), d2);
  double r = 0.0;
  int live = 0;
  for (int f = 0; f < n; ++f) {
    if (obs[static_cast<size_t>(f)] <= 0.0) continue;
    ++live;
    r = std::max(r, std::fabs(exp[static_cast<size_t>(f)] - obs[static_cast<size_t>(f)]) /
                        obs[static_cast<size_t>(f)]);
  }
  return {r, live};
}

GroupPartition partition_with_named_complements(const MaxentModel& model, const Dataset& data) {
  GroupPartition part = partition_exclusive(data);
  for (const auto& [f, name] : model.names)
    if (name.rfind("__comp", 0) == 0) part.complement_ids.push_back(f);
  std::sort(part.complement_ids.begin(), part.complement_ids.end());
  return part;
}

int cmd_train(const std::string& method, const std::string& data_path, const std::string& out_path,
              int iters, double tol, std::uint64_t seed, bool rotate, std::ostream& out) {
  Dataset full = io::parse_events(data_path);
  if (full.events.empty()) throw Error("train: no events in " + data_path);
  PruneResult pr = prune_unobserved(full);

  TrainOptions topts;
  topts.max_iters = iters;
  topts.tol = tol;
  topts.seed = seed;

  MaxentModel trained;
  if (method == "gis") {
    GisResult res = train_gis(MaxentModel::uniform(pr.data.num_features), pr.data, topts);
    print_trace(out, res.ll_trace);
    out << "iterations " << res.iterations << '\n';
    out << "final_residual " << sci(res.final_residual) << '\n';
    trained = std::move(res.model);
  } else {
    red::HmmTrainOptions hopts;
    hopts.base = topts;
    hopts.rotate = rotate;
    auto [model, rep] = red::train_maxent_via_hmm(pr.data, hopts);
    print_trace(out, rep.ll_trace);
    out << "iterations " << rep.iterations << '\n';
    out << "final_residual " << sci(rep.final_residual) << '\n';
    trained = std::move(model);
  }
  out << "pruned " << (full.num_features - static_cast<int>(pr.kept.size())) << '\n';

  io::ModelFile mf;
  mf.kind = io::ModelKind::plain;
  mf.plain = restore_full(trained, pr.kept, full.num_features);
  io::write_model(mf, out_path);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& report, std::ostream& out) {
  io::ModelFile mf = io::parse_model(model_path);
  Dataset data = io::parse_events(data_path);
  if (data.events.empty()) throw Error("eval: no events in " + data_path);

  double ll = 0.0;
  int correct = 0;
  for (const auto& ev : data.events) {
    Distribution d = model_dist(mf, ev, data.num_features);
    ll += std::log(d.at(ev.true_label));
    auto best = d.begin();
    for (auto it = std::next(d.begin()); it != d.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->first == ev.true_label) ++correct;
  }
  if (report == "ll" || report == "both") out << "ll " << num(ll) << '\n';
  if (report == "acc" || report == "both")
    out << "acc " << num(static_cast<double>(correct) / static_cast<double>(data.events.size()))
        << '\n';
  return 0;
}

int cmd_check(const std::string& model_path, const std::string& data_path, std::ostream& out) {
  io::ModelFile mf = io::parse_model(model_path);
  if (mf.kind != io::ModelKind::plain) throw Error("check: plain models only");
  Dataset data = io::parse_events(data_path);
  if (data.events.empty()) throw Error("check: no events in " + data_path);
  auto [r, live] = residual_of(mf.plain, data);
  out << "residual " << sci(r) << '\n';
  out << "live_features " << live << '\n';
  return 0;
}

int cmd_transform(const std::string& model_path, const std::string& data_path,
                  const std::string& op, const std::string& out_path,
                  const std::string& out_data_path, std::ostream& out) {
  io::ModelFile mf = io::parse_model(model_path);
  if (mf.kind != io::ModelKind::plain) throw Error("transform: plain models only");
  Dataset data = io::parse_events(data_path);
  if (data.num_features > mf.plain.num_features())
    throw Error("transform: data uses feature ids beyond the model");
  data.num_features = mf.plain.num_features();

  io::ModelFile result;
  result.kind = io::ModelKind::plain;
  Dataset result_data = data;

  if (op == "group") {
    GroupPartition part = partition_exclusive(data);
    GroupedModel gm = complete_groups(mf.plain, data, part);
    out << "groups " << gm.partition.groups.size() << '\n';
    out << "complements " << gm.partition.complement_ids.size() << '\n';
    result.plain = std::move(gm.model);
    result_data = std::move(gm.data);
  } else if (op == "subunit") {
    GroupPartition part = partition_with_named_complements(mf.plain, data);
    MaxentModel scaled = to_subunit(mf.plain, part);
    out << "max_weight " << num(*std::max_element(scaled.weights.begin(), scaled.weights.end()))
        << '\n';
    result.plain = std::move(scaled);
  } else {
    GroupPartition part = partition_with_named_complements(mf.plain, data);
    StripResult sr = strip_complements(mf.plain, data, part);
    out << "removed " << (mf.plain.num_features() - static_cast<int>(sr.kept.size())) << '\n';
    result.plain = std::move(sr.model);
    result_data = std::move(sr.data);
  }

  io::write_model(result, out_path);
  if (!out_data_path.empty()) io::write_events(result_data, out_data_path);
  return 0;
}

int cmd_compare(const std::vector<std::string>& model_paths, const std::string& data_path,
                std::ostream& out) {
  io::ModelFile a = io::parse_model(model_paths[0]);
  io::ModelFile b = io::parse_model(model_paths[1]);
  Dataset data = io::parse_events(data_path);
  if (data.events.empty()) throw Error("compare: no events in " + data_path);
  double worst = 0.0;
  for (const auto& ev : data.events)
    worst = std::max(worst, total_variation(model_dist(a, ev, data.num_features),
                                            model_dist(b, ev, data.num_features)));
  out << "max_tv " << sci(worst) << '\n';
  return 0;
}

int cmd_hv_train(const std::string& data_path, int n_hidden, const std::string& method,
                 const std::string& out_path, int iters, double tol, std::uint64_t seed,
                 bool rotate, std::ostream& out) {
  Dataset full = io::parse_events(data_path);
  if (full.events.empty()) throw Error("hv-train: no events in " + data_path);
  PruneResult pr = prune_unobserved(full);
  hv::HiddenDataset hd = hv::augment_dataset(pr.data, n_hidden);

  hv::HvTrainOptions opts;
  opts.base.max_iters = iters;
  opts.base.tol = tol;
  opts.base.seed = seed;
  opts.rotate = rotate;

  auto [model, rep] = method == "fb" ? hv::train_hv_fb(hd, opts) : hv::train_hv_em_gis(hd, opts);
  print_trace(out, rep.ll_trace);
  out << "iterations " << rep.iterations << '\n';
  out << "final_ll " << num(rep.final_ll) << '\n';

  // Back onto the unpruned space: selector block z occupies [z*G, (z+1)*G).
  const int gp = pr.data.num_features;
  const int G = full.num_features;
  hv::HiddenMaxentModel full_model;
  full_model.hidden_values = model.hidden_values;
  full_model.fixed_outputs = model.fixed_outputs;
  full_model.selector.weights.assign(static_cast<size_t>(n_hidden) * G, 1.0);
  for (int z = 0; z < n_hidden; ++z)
    for (int j = 0; j < gp; ++j)
      full_model.selector.weights[static_cast<size_t>(z) * G + pr.kept[static_cast<size_t>(j)]] =
          model.selector.weights[static_cast<size_t>(z) * gp + j];
  if (!model.deterministic())
    for (const auto& em : model.emitters)
      full_model.emitters.push_back(restore_full(em, pr.kept, G));

  io::ModelFile mf;
  mf.kind = io::ModelKind::hidden;
  mf.hidden = std::move(full_model);
  io::write_model(mf, out_path);
  return 0;
}

int cmd_synth(const io::SynthSpec& spec, const std::string& out_path,
              const std::string& truth_path, std::ostream& out) {
  io::SynthResult r = io::synth_generate(spec);
  io::write_events(r.data, out_path);
  io::write_model(r.truth, truth_path);
  out << "events " << r.data.events.size() << '\n';
  out << "features " << r.data.num_features << '\n';
  return 0;
}

int cmd_memm_train(const std::string& data_path, const std::string& out_path, int iters,
                   double tol, std::ostream& out) {
  auto seqs = io::parse_seqs(data_path);
  std::vector<seq::SeqEventBlock> blocks;
  for (auto& s : seqs)
    for (auto& b : s) blocks.push_back(std::move(b));
  TrainOptions topts;
  topts.max_iters = iters;
  topts.tol = tol;
  auto [model, rep] = seq::train_memm(blocks, topts);

  out << "states " << model.states.size() << '\n';
  double worst = 0.0;
  for (const auto& s : model.states) {
    out << "residual_" << s << ' ' << sci(rep.residuals.at(s)) << '\n';
    worst = std::max(worst, rep.residuals.at(s));
  }
  out << "max_residual " << sci(worst) << '\n';

  io::ModelFile mf;
  mf.kind = io::ModelKind::memm;
  mf.memm = std::move(model);
  io::write_model(mf, out_path);
  return 0;
}

int cmd_memm_decode(const std::string& model_path, const std::string& data_path,
                    std::ostream& out) {
  io::ModelFile mf = io::parse_model(model_path);
  if (mf.kind != io::ModelKind::memm) throw Error("memm-decode: model is not a memm");
  auto seqs = io::parse_seqs(data_path);
  if (seqs.empty()) throw Error("memm-decode: no sequences in " + data_path);
  for (const auto& s : seqs) {
    seq::DecodeResult r = seq::memm_sequence_posterior(mf.memm, s);
    out << "seq " << s.front().sequence_id << '\n';
    out << "path";
    for (const auto& st : r.path) out << ' ' << st;
    out << '\n';
    out << "log_prob " << num(r.log_prob) << '\n';
    out << "total_mass " << num(r.total_mass) << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"maxent models, their tied-parameter HMM reductions, and sequence extensions"};
  app.require_subcommand(1);

  std::string data_path, model_path, out_path, truth_path, out_data_path;
  std::string method = "gis", report = "both", op, gen = "plain";
  std::vector<std::string> model_paths;
  int iters = 1000, n_hidden = 2;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  bool rotate = true;
  io::SynthSpec sspec;

  auto* train = app.add_subcommand("train", "fit a maxent model by scaling or forward-backward");
  train->add_option("--method", method)->check(CLI::IsMember({"gis", "fb"}))->required();
  train->add_option("--data", data_path)->required();
  train->add_option("--out", out_path)->required();
  train->add_option("--iters", iters);
  train->add_option("--tol", tol);
  train->add_option("--seed", seed);
  train->add_flag("--rotate,!--no-rotate", rotate);

  auto* eval = app.add_subcommand("eval", "log-likelihood and accuracy of a model on events");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data_path)->required();
  eval->add_option("--report", report)->check(CLI::IsMember({"ll", "acc", "both"}));

  auto* check = app.add_subcommand("check", "max relative constraint residual of a model");
  check->add_option("--model", model_path)->required();
  check->add_option("--data", data_path)->required();

  auto* transform = app.add_subcommand("transform", "group, subunit or strip a model");
  transform->add_option("--model", model_path)->required();
  transform->add_option("--data", data_path)->required();
  transform->add_option("--op", op)->check(CLI::IsMember({"group", "subunit", "strip"}))
      ->required();
  transform->add_option("--out", out_path)->required();
  transform->add_option("--out-data", out_data_path);

  auto* compare = app.add_subcommand("compare", "max total variation between two models");
  compare->add_option("--model", model_paths)->required()->expected(2);
  compare->add_option("--data", data_path)->required();

  auto* hv_train = app.add_subcommand("hv-train", "fit a hidden-variable maxent model");
  hv_train->add_option("--data", data_path)->required();
  hv_train->add_option("--hidden", n_hidden)->required()->check(CLI::Range(2, 64));
  hv_train->add_option("--method", method)->check(CLI::IsMember({"fb", "em"}))->required();
  hv_train->add_option("--out", out_path)->required();
  hv_train->add_option("--iters", iters);
  hv_train->add_option("--tol", tol);
  hv_train->add_option("--seed", seed);
  hv_train->add_flag("--rotate,!--no-rotate", rotate);

  auto* synth = app.add_subcommand("synth", "generate seeded synthetic events plus their truth");
  synth->add_option("--gen", gen)->check(CLI::IsMember({"plain", "hv"}))->required();
  synth->add_option("--seed", sspec.seed);
  synth->add_option("--events", sspec.n_events)->required();
  synth->add_option("--out", out_path)->required();
  synth->add_option("--truth", truth_path)->required();
  synth->add_option("--templates", sspec.templates);
  synth->add_option("--attrs", sspec.attrs);
  synth->add_option("--outputs", sspec.outputs);
  synth->add_option("--hidden", sspec.n_hidden);
  synth->add_option("--sep", sspec.min_separation);

  auto* memm_train = app.add_subcommand("memm-train", "fit per-state transition models");
  memm_train->add_option("--data", data_path)->required();
  memm_train->add_option("--out", out_path)->required();
  memm_train->add_option("--iters", iters);
  memm_train->add_option("--tol", tol);

  auto* memm_decode = app.add_subcommand("memm-decode", "best state sequence per input sequence");
  memm_decode->add_option("--model", model_path)->required();
  memm_decode->add_option("--data", data_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(method, data_path, out_path, iters, tol, seed, rotate, out);
    if (*eval) return cmd_eval(model_path, data_path, report, out);
    if (*check) return cmd_check(model_path, data_path, out);
    if (*transform)
      return cmd_transform(model_path, data_path, op, out_path, out_data_path, out);
    if (*compare) return cmd_compare(model_paths, data_path, out);
    if (*hv_train)
      return cmd_hv_train(data_path, n_hidden, method, out_path, iters, tol, seed, rotate, out);
    if (*synth) {
      sspec.kind = gen;
      return cmd_synth(sspec, out_path, truth_path, out);
    }
    if (*memm_train) return cmd_memm_train(data_path, out_path, iters, tol, out);
    if (*memm_decode) return cmd_memm_decode(model_path, data_path, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << "error: no subcommand\n";
  return 1;
}

}  // namespace maxhmm::cli
