#include "maxhmm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

namespace maxhmm::io {

namespace {

struct Line {
  int number = 0;
  std::vector<std::string> tok;
};

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw Error(origin + ":" + std::to_string(line) + ": " + msg);
}

// Comment and blank lines drop out here; everything downstream works on
// tokenized logical lines.
std::vector<Line> logical_lines(const std::string& text) {
  std::vector<Line> out;
  std::istringstream in(text);
  std::string raw;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    std::istringstream ls(raw);
    Line l;
    l.number = n;
    std::string t;
    while (ls >> t) l.tok.push_back(t);
    if (l.tok.empty() || l.tok[0][0] == '#') continue;
    out.push_back(std::move(l));
  }
  return out;
}

int parse_int(const std::string& origin, int line, const std::string& s, const char* what) {
  size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    fail(origin, line, std::string("bad ") + what + " '" + s + "'");
  }
  if (pos != s.size() || v < -1 || v > 1000000000)
    fail(origin, line, std::string("bad ") + what + " '" + s + "'");
  return static_cast<int>(v);
}

double parse_double(const std::string& origin, int line, const std::string& s, const char* what) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    fail(origin, line, std::string("bad ") + what + " '" + s + "'");
  }
  if (pos != s.size() || !std::isfinite(v))
    fail(origin, line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

std::string fmt_weight(double w) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", w);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("short write to '" + path + "'");
}

std::vector<FeatureId> parse_active(const std::string& origin, const Line& l, size_t from) {
  std::vector<FeatureId> ids;
  for (size_t i = from; i < l.tok.size(); ++i) {
    int f = parse_int(origin, l.number, l.tok[i], "feature id");
    if (f < 0) fail(origin, l.number, "negative feature id");
    ids.push_back(f);
  }
  std::sort(ids.begin(), ids.end());
  for (size_t i = 1; i < ids.size(); ++i)
    if (ids[i] == ids[i - 1])
      fail(origin, l.number, "duplicate feature id " + std::to_string(ids[i]));
  return ids;
}

}  // namespace

// ---- events -------------------------------------------------------------

Dataset parse_events_text(const std::string& text, const std::string& origin) {
  Dataset ds;
  const std::vector<Line> lines = logical_lines(text);
  if (lines.empty())
    std::cerr << "warning: " << origin << ": empty events file\n";

  bool open = false;
  EventBlock cur;
  int open_line = 0;
  for (const Line& l : lines) {
    const std::string& kw = l.tok[0];
    if (kw == "EVENT") {
      if (open) fail(origin, l.number, "EVENT before previous block's END");
      if (l.tok.size() != 3) fail(origin, l.number, "EVENT needs <id> <true_label>");
      cur = EventBlock{};
      cur.event_id = l.tok[1];
      cur.true_label = l.tok[2];
      open = true;
      open_line = l.number;
    } else if (kw == "CAND") {
      if (!open) fail(origin, l.number, "CAND outside an EVENT block");
      if (l.tok.size() < 2) fail(origin, l.number, "CAND needs <label> [<feat_id>...]");
      Candidate c;
      c.label = l.tok[1];
      for (const auto& prev : cur.candidates)
        if (prev.label == c.label) fail(origin, l.number, "duplicate candidate label " + c.label);
      c.active = parse_active(origin, l, 2);
      cur.candidates.push_back(std::move(c));
    } else if (kw == "END") {
      if (!open) fail(origin, l.number, "END without EVENT");
      if (cur.candidates.empty()) fail(origin, l.number, "event with no candidates");
      if (cur.true_index() < 0)
        fail(origin, open_line, "true label '" + cur.true_label + "' not among candidates");
      ds.events.push_back(std::move(cur));
      open = false;
    } else {
      fail(origin, l.number, "unknown keyword '" + kw + "'");
    }
  }
  if (open) fail(origin, open_line, "EVENT block never closed");

  for (const auto& ev : ds.events)
    for (const auto& c : ev.candidates)
      for (FeatureId f : c.active) ds.num_features = std::max(ds.num_features, f + 1);
  validate_dataset(ds);
  return ds;
}

Dataset parse_events(const std::string& path) { return parse_events_text(read_file(path), path); }

std::string serialize_events(const Dataset& data) {
  std::ostringstream out;
  for (const auto& ev : data.events) {
    out << "EVENT " << ev.event_id << ' ' << ev.true_label << '\n';
    for (const auto& c : ev.candidates) {
      out << "CAND " << c.label;
      for (FeatureId f : c.active) out << ' ' << f;
      out << '\n';
    }
    out << "END\n";
  }
  return out.str();
}

void write_events(const Dataset& data, const std::string& path) {
  write_file(path, serialize_events(data));
}

// ---- models -------------------------------------------------------------

namespace {

// One MAXENT block starting at lines[i]; leaves i on the first line after it.
MaxentModel parse_maxent_block(const std::string& origin, const std::vector<Line>& lines,
                               size_t& i) {
  if (i >= lines.size() || lines[i].tok[0] != "MAXENT")
    fail(origin, i < lines.size() ? lines[i].number : 0, "expected MAXENT header");
  if (lines[i].tok.size() != 2) fail(origin, lines[i].number, "MAXENT needs <g>");
  int g = parse_int(origin, lines[i].number, lines[i].tok[1], "feature count");
  if (g < 0) fail(origin, lines[i].number, "negative feature count");
  ++i;

  MaxentModel m;
  m.weights.assign(static_cast<size_t>(g), 0.0);
  std::vector<bool> seen(static_cast<size_t>(g), false);
  while (i < lines.size() && (lines[i].tok[0] == "W" || lines[i].tok[0] == "NAME")) {
    const Line& l = lines[i];
    if (l.tok[0] == "W") {
      if (l.tok.size() != 3) fail(origin, l.number, "W needs <feat_id> <weight>");
      int f = parse_int(origin, l.number, l.tok[1], "feature id");
      if (f < 0 || f >= g) fail(origin, l.number, "feature id out of range");
      if (seen[static_cast<size_t>(f)])
        fail(origin, l.number, "duplicate weight for feature " + std::to_string(f));
      double w = parse_double(origin, l.number, l.tok[2], "weight");
      if (w <= 0.0) fail(origin, l.number, "weight must be positive");
      m.weights[static_cast<size_t>(f)] = w;
      seen[static_cast<size_t>(f)] = true;
    } else {
      if (l.tok.size() < 3) fail(origin, l.number, "NAME needs <feat_id> <string>");
      int f = parse_int(origin, l.number, l.tok[1], "feature id");
      if (f < 0 || f >= g) fail(origin, l.number, "feature id out of range");
      std::string name = l.tok[2];
      for (size_t t = 3; t < l.tok.size(); ++t) name += " " + l.tok[t];
      m.names[f] = std::move(name);
    }
    ++i;
  }
  for (int f = 0; f < g; ++f)
    if (!seen[static_cast<size_t>(f)])
      fail(origin, i > 0 ? lines[i - 1].number : 0,
           "missing weight for feature " + std::to_string(f));
  return m;
}

void serialize_maxent_block(std::ostringstream& out, const MaxentModel& m) {
  out << "MAXENT " << m.num_features() << '\n';
  for (int f = 0; f < m.num_features(); ++f)
    out << "W " << f << ' ' << fmt_weight(m.weights[static_cast<size_t>(f)]) << '\n';
  for (const auto& [f, name] : m.names) out << "NAME " << f << ' ' << name << '\n';
}

}  // namespace

ModelFile parse_model_text(const std::string& text, const std::string& origin) {
  const std::vector<Line> lines = logical_lines(text);
  if (lines.empty()) throw Error(origin + ": empty model file");
  size_t i = 0;
  ModelFile mf;

  const std::string& head = lines[0].tok[0];
  if (head == "MAXENT") {
    mf.kind = ModelKind::plain;
    mf.plain = parse_maxent_block(origin, lines, i);
  } else if (head == "HIDDEN") {
    mf.kind = ModelKind::hidden;
    if (lines[0].tok.size() != 2) fail(origin, lines[0].number, "HIDDEN needs <k>");
    int k = parse_int(origin, lines[0].number, lines[0].tok[1], "hidden count");
    if (k < 1) fail(origin, lines[0].number, "hidden count must be at least 1");
    ++i;
    for (int z = 0; z < k; ++z, ++i) {
      if (i >= lines.size() || lines[i].tok[0] != "HVALUE" || lines[i].tok.size() != 2)
        fail(origin, i < lines.size() ? lines[i].number : lines[0].number,
             "expected HVALUE <name>");
      mf.hidden.hidden_values.push_back(lines[i].tok[1]);
    }
    if (i < lines.size() && lines[i].tok[0] == "FIXED") {
      if (static_cast<int>(lines[i].tok.size()) != k + 1)
        fail(origin, lines[i].number, "FIXED needs one label per hidden value");
      for (int z = 0; z < k; ++z)
        mf.hidden.fixed_outputs.push_back(lines[i].tok[static_cast<size_t>(z) + 1]);
      ++i;
    }
    if (i >= lines.size() || lines[i].tok[0] != "SELECTOR")
      fail(origin, i < lines.size() ? lines[i].number : lines[0].number, "expected SELECTOR");
    ++i;
    mf.hidden.selector = parse_maxent_block(origin, lines, i);
    if (mf.hidden.fixed_outputs.empty()) {
      for (int z = 0; z < k; ++z) {
        if (i >= lines.size() || lines[i].tok[0] != "EMITTER" || lines[i].tok.size() != 2 ||
            parse_int(origin, lines[i].number, lines[i].tok[1], "emitter index") != z)
          fail(origin, i < lines.size() ? lines[i].number : lines[0].number,
               "expected EMITTER " + std::to_string(z));
        ++i;
        mf.hidden.emitters.push_back(parse_maxent_block(origin, lines, i));
      }
    }
  } else if (head == "MEMM") {
    mf.kind = ModelKind::memm;
    if (lines[0].tok.size() != 3) fail(origin, lines[0].number, "MEMM needs <n_states> <g>");
    int n = parse_int(origin, lines[0].number, lines[0].tok[1], "state count");
    int g = parse_int(origin, lines[0].number, lines[0].tok[2], "feature count");
    if (n < 1 || g < 0) fail(origin, lines[0].number, "bad MEMM header");
    ++i;
    mf.memm.num_features = g;
    for (int s = 0; s < n; ++s) {
      if (i >= lines.size() || lines[i].tok[0] != "STATE" || lines[i].tok.size() != 2)
        fail(origin, i < lines.size() ? lines[i].number : lines[0].number,
             "expected STATE <name>");
      std::string name = lines[i].tok[1];
      if (mf.memm.per_state.count(name)) fail(origin, lines[i].number, "duplicate state " + name);
      ++i;
      MaxentModel m = parse_maxent_block(origin, lines, i);
      if (m.num_features() != g)
        fail(origin, lines[i - 1].number, "state block size disagrees with MEMM header");
      std::vector<FeatureId> identity(static_cast<size_t>(g));
      for (int f = 0; f < g; ++f) identity[static_cast<size_t>(f)] = f;
      mf.memm.states.push_back(name);
      mf.memm.per_state.emplace(name, std::move(m));
      mf.memm.kept.emplace(name, std::move(identity));
    }
  } else {
    fail(origin, lines[0].number, "unknown model header '" + head + "'");
  }
  if (i != lines.size()) fail(origin, lines[i].number, "trailing content in model file");
  return mf;
}

ModelFile parse_model(const std::string& path) {
  return parse_model_text(read_file(path), path);
}

std::string serialize_model(const ModelFile& m) {
  std::ostringstream out;
  switch (m.kind) {
    case ModelKind::plain:
      serialize_maxent_block(out, m.plain);
      break;
    case ModelKind::hidden: {
      const auto& h = m.hidden;
      out << "HIDDEN " << h.hidden_values.size() << '\n';
      for (const auto& v : h.hidden_values) out << "HVALUE " << v << '\n';
      if (h.deterministic()) {
        out << "FIXED";
        for (const auto& x : h.fixed_outputs) out << ' ' << x;
        out << '\n';
      }
      out << "SELECTOR\n";
      serialize_maxent_block(out, h.selector);
      if (!h.deterministic()) {
        for (size_t z = 0; z < h.emitters.size(); ++z) {
          out << "EMITTER " << z << '\n';
          serialize_maxent_block(out, h.emitters[z]);
        }
      }
      break;
    }
    case ModelKind::memm: {
      out << "MEMM " << m.memm.states.size() << ' ' << m.memm.num_features << '\n';
      for (const auto& s : m.memm.states) {
        out << "STATE " << s << '\n';
        // Expand the per-state model back onto the shared space; features the
        // state never saw sit at weight 1 and drop out of its products.
        const MaxentModel& local = m.memm.per_state.at(s);
        const std::vector<FeatureId>& kept = m.memm.kept.at(s);
        MaxentModel full;
        full.weights.assign(static_cast<size_t>(m.memm.num_features), 1.0);
        for (size_t j = 0; j < kept.size(); ++j) {
          full.weights[static_cast<size_t>(kept[j])] = local.weights[j];
          auto it = local.names.find(static_cast<FeatureId>(j));
          if (it != local.names.end()) full.names[kept[j]] = it->second;
        }
        serialize_maxent_block(out, full);
      }
      break;
    }
  }
  return out.str();
}

void write_model(const ModelFile& m, const std::string& path) {
  write_file(path, serialize_model(m));
}

// ---- sequences ----------------------------------------------------------

std::vector<std::vector<seq::SeqEventBlock>> parse_seqs_text(const std::string& text,
                                                             const std::string& origin) {
  std::vector<std::vector<seq::SeqEventBlock>> seqs;
  const std::vector<Line> lines = logical_lines(text);

  bool in_seq = false;
  std::string seq_id;
  int seq_line = 0;
  std::vector<seq::SeqEventBlock> steps;
  bool step_open = false;
  seq::SeqEventBlock cur;
  int step_line = 0;

  auto close_step = [&]() {
    if (!step_open) return;
    if (cur.candidates.empty()) fail(origin, step_line, "STEP with no candidates");
    bool gold_found = false;
    for (const auto& c : cur.candidates) gold_found = gold_found || c.label == cur.gold_next;
    if (!gold_found)
      fail(origin, step_line, "gold next state '" + cur.gold_next + "' not among candidates");
    steps.push_back(std::move(cur));
    cur = seq::SeqEventBlock{};
    step_open = false;
  };

  for (const Line& l : lines) {
    const std::string& kw = l.tok[0];
    if (kw == "SEQ") {
      if (in_seq) fail(origin, l.number, "SEQ before previous ENDSEQ");
      if (l.tok.size() != 2) fail(origin, l.number, "SEQ needs <id>");
      in_seq = true;
      seq_id = l.tok[1];
      seq_line = l.number;
      steps.clear();
    } else if (kw == "STEP") {
      if (!in_seq) fail(origin, l.number, "STEP outside a SEQ block");
      close_step();
      if (l.tok.size() != 5) fail(origin, l.number, "STEP needs <pos> <src> <obs> <gold>");
      cur.sequence_id = seq_id;
      cur.position = parse_int(origin, l.number, l.tok[1], "position");
      cur.src_state = l.tok[2];
      cur.obs = l.tok[3];
      cur.gold_next = l.tok[4];
      if (cur.position < 1) fail(origin, l.number, "positions are 1-based");
      step_open = true;
      step_line = l.number;
    } else if (kw == "CAND") {
      if (!step_open) fail(origin, l.number, "CAND outside a STEP");
      if (l.tok.size() < 2) fail(origin, l.number, "CAND needs <next_state> [<feat_id>...]");
      Candidate c;
      c.label = l.tok[1];
      for (const auto& prev : cur.candidates)
        if (prev.label == c.label) fail(origin, l.number, "duplicate next state " + c.label);
      c.active = parse_active(origin, l, 2);
      cur.candidates.push_back(std::move(c));
    } else if (kw == "ENDSEQ") {
      if (!in_seq) fail(origin, l.number, "ENDSEQ without SEQ");
      close_step();
      if (steps.empty()) fail(origin, seq_line, "sequence with no steps");
      int prev_pos = 0;
      std::set<std::pair<int, std::string>> seen;
      for (const auto& s : steps) {
        if (s.position != prev_pos && s.position != prev_pos + 1)
          fail(origin, seq_line, "positions must be consecutive from 1");
        if (!seen.emplace(s.position, s.src_state).second)
          fail(origin, seq_line, "duplicate source state '" + s.src_state + "' at position " +
                                     std::to_string(s.position));
        prev_pos = s.position;
      }
      seqs.push_back(std::move(steps));
      steps.clear();
      in_seq = false;
    } else {
      fail(origin, l.number, "unknown keyword '" + kw + "'");
    }
  }
  if (in_seq) fail(origin, seq_line, "SEQ block never closed");
  return seqs;
}

std::vector<std::vector<seq::SeqEventBlock>> parse_seqs(const std::string& path) {
  return parse_seqs_text(read_file(path), path);
}

std::string serialize_seqs(const std::vector<std::vector<seq::SeqEventBlock>>& seqs) {
  std::ostringstream out;
  for (const auto& s : seqs) {
    out << "SEQ " << (s.empty() ? std::string("empty") : s.front().sequence_id) << '\n';
    for (const auto& b : s) {
      out << "STEP " << b.position << ' ' << b.src_state << ' ' << b.obs << ' ' << b.gold_next
          << '\n';
      for (const auto& c : b.candidates) {
        out << "CAND " << c.label;
        for (FeatureId f : c.active) out << ' ' << f;
        out << '\n';
      }
    }
    out << "ENDSEQ\n";
  }
  return out.str();
}

void write_seqs(const std::vector<std::vector<seq::SeqEventBlock>>& seqs,
                const std::string& path) {
  write_file(path, serialize_seqs(seqs));
}

// ---- synthesis ----------------------------------------------------------

namespace {

std::string sample_label(const Distribution& d, double u) {
  double acc = 0.0;
  for (const auto& [label, p] : d) {
    acc += p;
    if (u <= acc) return label;
  }
  return d.rbegin()->first;  // u landed in rounding slack past the last bin
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  if (spec.kind != "plain" && spec.kind != "hv")
    throw Error("synth: kind must be plain or hv");
  if (spec.templates < 1 || spec.attrs < 1 || spec.outputs < 2 || spec.n_events < 0)
    throw Error("synth: sizes must satisfy templates>=1 attrs>=1 outputs>=2 events>=0");
  if (spec.kind == "hv" && spec.n_hidden < 2) throw Error("synth: hv needs n_hidden >= 2");

  const int T = spec.templates, A = spec.attrs, C = spec.outputs;
  const int g = T * A * C;

  std::mt19937_64 rng(spec.seed);
  auto uni = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto draw_attrs = [&rng, A, T]() {
    std::vector<int> a(static_cast<size_t>(T));
    std::uniform_int_distribution<int> d(0, A - 1);
    for (auto& v : a) v = d(rng);
    return a;
  };
  auto make_block = [&](int e, const std::vector<int>& a) {
    EventBlock b;
    b.event_id = "e" + std::to_string(e);
    for (int c = 0; c < C; ++c) {
      Candidate cand;
      cand.label = "o" + std::to_string(c);
      for (int t = 0; t < T; ++t)
        cand.active.push_back((t * A + a[static_cast<size_t>(t)]) * C + c);
      b.candidates.push_back(std::move(cand));
    }
    return b;
  };
  auto random_model = [&](int size, double spread) {
    MaxentModel m;
    m.weights.reserve(static_cast<size_t>(size));
    for (int f = 0; f < size; ++f) m.weights.push_back(std::exp(uni(-spread, spread)));
    return m;
  };

  SynthResult out;
  out.data.num_features = g;

  if (spec.kind == "plain") {
    out.truth.kind = ModelKind::plain;
    out.truth.plain = random_model(g, 1.2);
    for (int e = 0; e < spec.n_events; ++e) {
      EventBlock b = make_block(e, draw_attrs());
      b.true_label = sample_label(evaluate(out.truth.plain, b), uni(0.0, 1.0));
      out.data.events.push_back(std::move(b));
    }
    return out;
  }

  const int K = spec.n_hidden;
  out.truth.kind = ModelKind::hidden;
  auto& h = out.truth.hidden;
  for (int z = 0; z < K; ++z) h.hidden_values.push_back("z" + std::to_string(z));
  h.selector = random_model(K * g, 1.0);

  // Probe histories come from their own generator so widening the emitter
  // spread does not disturb the event stream of the final data.
  std::mt19937_64 probe_rng(spec.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<EventBlock> probes;
  {
    std::uniform_int_distribution<int> d(0, A - 1);
    for (int e = 0; e < 64; ++e) {
      std::vector<int> a(static_cast<size_t>(T));
      for (auto& v : a) v = d(probe_rng);
      probes.push_back(make_block(e, a));
    }
  }

  double spread = 1.0;
  double sep = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    h.emitters.clear();
    for (int z = 0; z < K; ++z) h.emitters.push_back(random_model(g, spread));
    sep = 0.0;
    int pairs = 0;
    for (const auto& b : probes) {
      std::vector<Distribution> dists;
      for (int z = 0; z < K; ++z) dists.push_back(evaluate(h.emitters[static_cast<size_t>(z)], b));
      for (int z1 = 0; z1 < K; ++z1)
        for (int z2 = 0; z2 < K; ++z2) {
          if (z1 == z2) continue;
          double kl = 0.0;
          for (const auto& [label, p] : dists[static_cast<size_t>(z1)])
            kl += p * std::log(p / dists[static_cast<size_t>(z2)].at(label));
          sep += kl;
          ++pairs;
        }
    }
    sep /= static_cast<double>(std::max(1, pairs));
    if (sep >= spec.min_separation) break;
    spread *= 1.4;
  }
  if (sep < spec.min_separation)
    throw Error("synth: could not reach the requested emitter separation");

  for (int e = 0; e < spec.n_events; ++e) {
    EventBlock b = make_block(e, draw_attrs());
    hv::HiddenEventBlock aug = hv::augment_block(b, K, g);
    EventBlock selblk;
    selblk.event_id = b.event_id;
    selblk.candidates = aug.selector;
    selblk.true_label = aug.selector.front().label;
    std::string zname = sample_label(evaluate(h.selector, selblk), uni(0.0, 1.0));
    int z = static_cast<int>(std::find(h.hidden_values.begin(), h.hidden_values.end(), zname) -
                             h.hidden_values.begin());
    b.true_label = sample_label(evaluate(h.emitters[static_cast<size_t>(z)], b), uni(0.0, 1.0));
    out.data.events.push_back(std::move(b));
  }
  return out;
}

}  // namespace maxhmm::io
