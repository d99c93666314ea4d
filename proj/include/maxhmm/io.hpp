#pragma once

#include <string>
#include <vector>

#include "maxhmm/hidden.hpp"
#include "maxhmm/seq.hpp"
#include "maxhmm/types.hpp"

namespace maxhmm::io {

// ---- events files -------------------------------------------------------
// Line-oriented text: `#` comments, blank lines ignored, blocks of
//   EVENT <id> <true_label>
//   CAND <label> <feat_id>...
//   END
// Feature ids canonicalize to sorted order on parse; num_features is the
// smallest bound covering every id. Diagnostics name the file and line.

Dataset parse_events_text(const std::string& text, const std::string& origin);
Dataset parse_events(const std::string& path);
std::string serialize_events(const Dataset& data);
void write_events(const Dataset& data, const std::string& path);

// ---- model files --------------------------------------------------------
// Plain:   MAXENT <g> header, then `W <feat_id> <weight>` per feature
//          (weights at 17 significant digits so doubles round-trip) and
//          optional `NAME <feat_id> <string>` lines.
// Hidden:  HIDDEN <k> header, k `HVALUE <name>` lines, optional
//          `FIXED <label_0> ... <label_{k-1}>` for deterministic emitters,
//          a SELECTOR section and (unless FIXED) one `EMITTER <z>` section
//          per value, each holding a plain block.
// Memm:    MEMM <n_states> <g> header, then per state `STATE <name>`
//          followed by a plain block over the full shared feature space
//          (features the state never observed sit at weight 1).

enum class ModelKind { plain, hidden, memm };

struct ModelFile {
  ModelKind kind = ModelKind::plain;
  MaxentModel plain;
  hv::HiddenMaxentModel hidden;
  seq::MemmModel memm;
};

ModelFile parse_model_text(const std::string& text, const std::string& origin);
ModelFile parse_model(const std::string& path);
std::string serialize_model(const ModelFile& m);
void write_model(const ModelFile& m, const std::string& path);

// ---- sequence files -----------------------------------------------------
// Blocks of
//   SEQ <id>
//   STEP <pos> <src_state> <obs_id> <gold_next>
//   CAND <next_state> <feat_id>...
//   ENDSEQ
// Positions are 1-based and consecutive; a position may repeat with distinct
// source states (one block per state the decoder could be in).

std::vector<std::vector<seq::SeqEventBlock>> parse_seqs_text(const std::string& text,
                                                             const std::string& origin);
std::vector<std::vector<seq::SeqEventBlock>> parse_seqs(const std::string& path);
std::string serialize_seqs(const std::vector<std::vector<seq::SeqEventBlock>>& seqs);
void write_seqs(const std::vector<std::vector<seq::SeqEventBlock>>& seqs,
                const std::string& path);

// ---- synthetic data -----------------------------------------------------
// plain: histories are one attribute draw per template; feature
// (template t, attribute a, output c) has id (t * attrs + a) * outputs + c,
// so each candidate activates exactly `templates` features and the per-
// template feature sets form exact groups. Labels are drawn from a random
// truth model.
// hv: same histories, but labels come from a two-stage truth (selector over
// n_hidden values in the canonically augmented space, one emitter per
// value); emitter weights are resampled with widening spread until the mean
// KL between emitter conditionals reaches min_separation nats.

struct SynthSpec {
  std::string kind = "plain";  // plain | hv
  std::uint64_t seed = 1;
  int n_events = 0;
  int templates = 3;
  int attrs = 4;
  int outputs = 3;
  int n_hidden = 2;           // hv only
  double min_separation = 1.0;  // hv only, nats
};

struct SynthResult {
  Dataset data;
  ModelFile truth;
};

SynthResult synth_generate(const SynthSpec& spec);

}  // namespace maxhmm::io
