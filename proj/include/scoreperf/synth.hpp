#pragma once

// Synthetic piece and corpus generation: random scores, deterministic
// rendering to performances, construction of ground-truth alignment records
// directly from augmentation change logs (no aligner in the loop), and the
// serialized training-corpus format.

#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/abc.hpp"
#include "scoreperf/augment.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/score_ir.hpp"
#include "scoreperf/tokenizer.hpp"

namespace scoreperf::synth {

using perf_ir::PerfNote;
using score_ir::ScoreIR;
using score_ir::UnfoldedScore;
using tokenizer::AlignRecord;
using tokenizer::Op;
using tokenizer::ScoreRef;
using tokenizer::TimeSigEvent;
using tokenizer::TriStep;

struct PieceConfig {
  int min_bars = 2;
  int max_bars = 4;
  int min_notes_per_bar = 2;
  int max_notes_per_bar = 5;
  double min_sec_per_quarter = 0.4;
  double max_sec_per_quarter = 0.6;
  int min_velocity = 40;
  int max_velocity = 100;
  double onset_jitter_s = 0.0;  // uniform +- jitter applied per note
  augment::PerfRates mistake_rates{0.0, 0.0, 0.0};
};

// Time signatures kept short enough that every 16th-grid position fits the
// 32-step bar grid.
inline const std::vector<std::pair<int, int>>& synth_timesigs() {
  static const std::vector<std::pair<int, int>> sigs = {{2, 4}, {3, 4}, {4, 4}, {6, 8}, {3, 8}};
  return sigs;
}

// Random piano-range score on a 16th-note grid; chords occasionally.
inline ScoreIR random_score(Rng& rng, const PieceConfig& cfg = {}) {
  ScoreIR s;
  s.bar_count = static_cast<int>(rng.range(cfg.min_bars, cfg.max_bars));
  auto [num, den] = synth_timesigs()[static_cast<std::size_t>(
      rng.below(synth_timesigs().size()))];
  s.time_sigs.push_back({0, num, den});
  long long blen = score_ir::bar_len_ticks(num, den);
  const int grid = 80;  // 16th notes
  for (int b = 0; b < s.bar_count; ++b) {
    int n_notes = static_cast<int>(rng.range(cfg.min_notes_per_bar, cfg.max_notes_per_bar));
    int slots = static_cast<int>(blen / grid);
    for (int k = 0; k < n_notes; ++k) {
      int slot = static_cast<int>(rng.below(static_cast<std::uint64_t>(slots)));
      int pos = slot * grid;
      int dur = grid * static_cast<int>(rng.range(1, 4));
      dur = static_cast<int>(std::min<long long>(dur, blen - pos));
      int pitch = static_cast<int>(rng.range(48, 84));
      s.notes.push_back({b, pos, dur, pitch, 1});
    }
  }
  std::sort(s.notes.begin(), s.notes.end(), [](const auto& a, const auto& b) {
    return std::tie(a.bar_index, a.pos_ticks, a.pitch) < std::tie(b.bar_index, b.pos_ticks, b.pitch);
  });
  // Drop exact duplicates (same bar/pos/pitch) so note identities stay unambiguous.
  s.notes.erase(std::unique(s.notes.begin(), s.notes.end(),
                            [](const auto& a, const auto& b) {
                              return a.bar_index == b.bar_index && a.pos_ticks == b.pos_ticks &&
                                     a.pitch == b.pitch;
                            }),
                s.notes.end());
  return s;
}

struct Rendered {
  std::vector<PerfNote> perf;          // sorted by (onset, pitch)
  std::vector<int> perf_index_of_note; // unfolded note index -> perf index
  double sec_per_quarter = 0.5;
  double seconds = 0.0;                // segment length (last offset + pad)
};

// Render an unfolded score verbatim at a fixed tempo, optionally with onset
// jitter and randomized velocities.
inline Rendered render_performance(const UnfoldedScore& unfolded, Rng& rng,
                                   const PieceConfig& cfg = {}) {
  Rendered out;
  out.sec_per_quarter = rng.uniform(cfg.min_sec_per_quarter, cfg.max_sec_per_quarter);
  const double spt = out.sec_per_quarter / score_ir::kTicksPerQuarter;  // seconds per tick

  // Linear bar start ticks from the unfolded time signature changes.
  std::vector<long long> starts(unfolded.bars.size() + 1, 0);
  {
    std::size_t sig_i = 0;
    int num = 4, den = 4;
    for (std::size_t b = 0; b < unfolded.bars.size(); ++b) {
      while (sig_i < unfolded.time_sigs.size() &&
             unfolded.time_sigs[sig_i].bar_index <= static_cast<int>(b)) {
        num = unfolded.time_sigs[sig_i].num;
        den = unfolded.time_sigs[sig_i].den;
        ++sig_i;
      }
      starts[b + 1] = starts[b] + score_ir::bar_len_ticks(num, den);
    }
  }

  struct Tagged {
    PerfNote note;
    int unfolded_index;
  };
  std::vector<Tagged> tagged;
  for (std::size_t i = 0; i < unfolded.notes.size(); ++i) {
    const auto& n = unfolded.notes[i];
    PerfNote p;
    p.onset_s = (starts[static_cast<std::size_t>(n.linear_bar)] + n.pos_ticks) * spt;
    if (cfg.onset_jitter_s > 0.0)
      p.onset_s = std::max(0.0, p.onset_s + rng.uniform(-cfg.onset_jitter_s, cfg.onset_jitter_s));
    p.dur_s = std::max(0.05, n.dur_ticks * spt);
    p.pitch = n.pitch;
    p.velocity = static_cast<int>(rng.range(cfg.min_velocity, cfg.max_velocity));
    tagged.push_back({p, static_cast<int>(i)});
  }
  std::stable_sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) {
    return perf_ir::perf_note_order(a.note, b.note);
  });
  out.perf_index_of_note.assign(unfolded.notes.size(), -1);
  for (std::size_t i = 0; i < tagged.size(); ++i) {
    out.perf.push_back(tagged[i].note);
    out.perf_index_of_note[static_cast<std::size_t>(tagged[i].unfolded_index)] =
        static_cast<int>(i);
  }
  for (const auto& p : out.perf) out.seconds = std::max(out.seconds, p.onset_s + p.dur_s);
  out.seconds += 0.25;
  return out;
}

inline ScoreRef score_ref_at(const UnfoldedScore& u, int index) {
  const auto& n = u.notes[static_cast<std::size_t>(index)];
  ScoreRef ref;
  ref.index = index;
  ref.linear_bar = n.linear_bar;
  ref.source_bar = n.source_bar;
  ref.pass_number = n.pass_number;
  ref.pos_ticks = n.pos_ticks;
  ref.dur_ticks = n.dur_ticks;
  ref.pitch = n.pitch;
  return ref;
}

inline std::vector<TimeSigEvent> timesig_events(const UnfoldedScore& u) {
  std::vector<TimeSigEvent> out;
  for (const auto& ts : u.time_sigs) out.push_back({ts.bar_index, ts.num, ts.den});
  return out;
}

// Identity ground truth: every unfolded note matched to its rendered note.
inline std::vector<AlignRecord> identity_truth(const UnfoldedScore& u, const Rendered& rendered) {
  struct Item {
    double onset;
    int perf_index;
    int note_index;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < u.notes.size(); ++i) {
    int pi = rendered.perf_index_of_note[i];
    items.push_back({rendered.perf[static_cast<std::size_t>(pi)].onset_s, pi, static_cast<int>(i)});
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(a.onset, a.perf_index) < std::tie(b.onset, b.perf_index);
  });
  std::vector<AlignRecord> records;
  for (const auto& it : items) {
    AlignRecord r;
    r.op = Op::Match;
    r.perf = rendered.perf[static_cast<std::size_t>(it.perf_index)];
    r.perf_index = it.perf_index;
    r.score = score_ref_at(u, it.note_index);
    r.repeat_flag = r.score->pass_number > 1;
    records.push_back(r);
  }
  return records;
}

// Ground truth for a performance-modulated rendering: untouched notes stay
// Match, deletions become Delete, insertions become Insert, pitch shifts
// become Insert + Delete. Record order follows the modulated performance;
// Delete records sit at the position their score note would have occupied.
inline std::vector<AlignRecord> truth_from_perf_log(const UnfoldedScore& u,
                                                    const Rendered& rendered,
                                                    const std::vector<PerfNote>& modulated,
                                                    const augment::PerfChangeLog& log) {
  struct Item {
    double sort_onset;
    int tie;  // stable secondary key
    AlignRecord record;
  };
  std::vector<Item> items;
  int tie = 0;

  std::vector<int> shift_new_pitch(rendered.perf.size(), -1);
  std::vector<bool> deleted(rendered.perf.size(), false);
  for (const auto& e : log.edits) {
    if (e.kind == augment::PerfEdit::Kind::Delete) deleted[static_cast<std::size_t>(e.orig_index)] = true;
    if (e.kind == augment::PerfEdit::Kind::Shift)
      shift_new_pitch[static_cast<std::size_t>(e.orig_index)] = e.new_pitch;
  }

  for (std::size_t note_i = 0; note_i < u.notes.size(); ++note_i) {
    int orig_pi = rendered.perf_index_of_note[note_i];
    double orig_onset = rendered.perf[static_cast<std::size_t>(orig_pi)].onset_s;
    ScoreRef ref = score_ref_at(u, static_cast<int>(note_i));
    if (deleted[static_cast<std::size_t>(orig_pi)]) {
      AlignRecord r;
      r.op = Op::Delete;
      r.score = ref;
      r.repeat_flag = ref.pass_number > 1;
      items.push_back({orig_onset, tie++, r});
      continue;
    }
    int new_pi = log.note_map[static_cast<std::size_t>(orig_pi)];
    const PerfNote& pn = modulated[static_cast<std::size_t>(new_pi)];
    int shifted = shift_new_pitch[static_cast<std::size_t>(orig_pi)];
    if (shifted >= 0 && shifted != ref.pitch) {
      AlignRecord ins;
      ins.op = Op::Insert;
      ins.perf = pn;
      ins.perf_index = new_pi;
      items.push_back({pn.onset_s, tie++, ins});
      AlignRecord del;
      del.op = Op::Delete;
      del.score = ref;
      del.repeat_flag = ref.pass_number > 1;
      items.push_back({pn.onset_s, tie++, del});
    } else {
      AlignRecord m;
      m.op = Op::Match;
      m.perf = pn;
      m.perf_index = new_pi;
      m.score = ref;
      m.repeat_flag = ref.pass_number > 1;
      items.push_back({pn.onset_s, tie++, m});
    }
  }
  for (const auto& e : log.edits) {
    if (e.kind != augment::PerfEdit::Kind::Insert) continue;
    AlignRecord r;
    r.op = Op::Insert;
    r.perf = modulated[static_cast<std::size_t>(e.new_index)];
    r.perf_index = e.new_index;
    items.push_back({r.perf->onset_s, tie++, r});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return a.sort_onset < b.sort_onset;
  });
  std::vector<AlignRecord> records;
  for (auto& it : items) records.push_back(std::move(it.record));
  return records;
}

// Ground truth for a score-modulated score against the original rendering:
// score deletions make the performed note an Insert; pitch shifts make an
// Insert (performed pitch) plus a Delete (new score pitch).
inline std::vector<AlignRecord> truth_from_score_log(const UnfoldedScore& original_unfolded,
                                                     const UnfoldedScore& modulated_unfolded,
                                                     const Rendered& rendered,
                                                     const augment::ScoreChangeLog& log) {
  // Unfolded indices coincide with ScoreIR note indices when there are no
  // repeats; that is the supported regime here.
  if (original_unfolded.bars.size() != modulated_unfolded.bars.size())
    throw ValidationError("score modulation truth requires repeat-free scores");
  struct Item {
    double sort_onset;
    int tie;
    AlignRecord record;
  };
  std::vector<Item> items;
  int tie = 0;

  std::vector<int> shift_to(original_unfolded.notes.size(), -1);
  std::vector<bool> removed(original_unfolded.notes.size(), false);
  for (const auto& e : log.edits) {
    if (e.kind == augment::ScoreEdit::Kind::Delete)
      removed[static_cast<std::size_t>(e.orig_index)] = true;
    else
      shift_to[static_cast<std::size_t>(e.orig_index)] = e.new_index;
  }

  for (std::size_t i = 0; i < original_unfolded.notes.size(); ++i) {
    int pi = rendered.perf_index_of_note[i];
    const PerfNote& pn = rendered.perf[static_cast<std::size_t>(pi)];
    if (removed[i]) {
      AlignRecord r;
      r.op = Op::Insert;
      r.perf = pn;
      r.perf_index = pi;
      items.push_back({pn.onset_s, tie++, r});
      continue;
    }
    int new_index = log.note_map[i];
    ScoreRef ref = score_ref_at(modulated_unfolded, new_index);
    if (shift_to[i] >= 0 && ref.pitch != pn.pitch) {
      AlignRecord ins;
      ins.op = Op::Insert;
      ins.perf = pn;
      ins.perf_index = pi;
      items.push_back({pn.onset_s, tie++, ins});
      AlignRecord del;
      del.op = Op::Delete;
      del.score = ref;
      del.repeat_flag = ref.pass_number > 1;
      items.push_back({pn.onset_s, tie++, del});
    } else {
      AlignRecord m;
      m.op = Op::Match;
      m.perf = pn;
      m.perf_index = pi;
      m.score = ref;
      m.repeat_flag = ref.pass_number > 1;
      items.push_back({pn.onset_s, tie++, m});
    }
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.sort_onset < b.sort_onset; });
  std::vector<AlignRecord> records;
  for (auto& it : items) records.push_back(std::move(it.record));
  return records;
}

// Ground truth for a simulated-repeat splice: every spliced performance note
// matches its unfolded score note; pass-2 duplicates carry the repeat flag.
inline std::vector<AlignRecord> truth_from_repeat(const UnfoldedScore& unfolded_new,
                                                  const std::vector<PerfNote>& spliced,
                                                  const Rendered& original_rendered,
                                                  const augment::RepeatProvenance& prov) {
  // Occurrence map: original note index (== pass-1 unfolded order of the
  // repeat-free score) -> unfolded indices of pass 1 and pass 2.
  std::vector<int> first_occ, second_occ;
  std::vector<std::vector<int>> notes_by_source;  // source bar -> original note order
  {
    int max_bar = 0;
    for (const auto& n : unfolded_new.notes) max_bar = std::max(max_bar, n.source_bar);
    notes_by_source.resize(static_cast<std::size_t>(max_bar) + 1);
  }
  // Original note indices in (source bar, in-bar order): reconstruct by
  // counting pass-1 occurrences.
  std::size_t original_count = original_rendered.perf_index_of_note.size();
  first_occ.assign(original_count, -1);
  second_occ.assign(original_count, -1);
  {
    // Walk unfolded notes; for each (source bar, k-th note of that bar) find
    // the original index by walking pass-1 positions in order.
    std::vector<int> per_bar_base;  // source bar -> original index of its first note
    std::vector<int> per_bar_count;
    int max_bar = 0;
    for (const auto& n : unfolded_new.notes) max_bar = std::max(max_bar, n.source_bar);
    per_bar_base.assign(static_cast<std::size_t>(max_bar) + 1, -1);
    per_bar_count.assign(static_cast<std::size_t>(max_bar) + 1, 0);
    // Original order is (bar, pos, pitch): pass-1 traversal reproduces it.
    int running = 0;
    for (std::size_t i = 0; i < unfolded_new.notes.size(); ++i) {
      const auto& n = unfolded_new.notes[i];
      if (n.pass_number == 1) {
        if (per_bar_base[static_cast<std::size_t>(n.source_bar)] < 0)
          per_bar_base[static_cast<std::size_t>(n.source_bar)] = running;
        ++running;
      }
    }
    // Second walk: assign occurrences.
    std::vector<int> seen(per_bar_count.size(), 0);
    int prev_linear = -1;
    for (std::size_t i = 0; i < unfolded_new.notes.size(); ++i) {
      const auto& n = unfolded_new.notes[i];
      if (n.linear_bar != prev_linear) {
        seen[static_cast<std::size_t>(n.source_bar)] = 0;
        prev_linear = n.linear_bar;
      }
      int orig = per_bar_base[static_cast<std::size_t>(n.source_bar)] +
                 seen[static_cast<std::size_t>(n.source_bar)]++;
      if (n.pass_number == 1)
        first_occ[static_cast<std::size_t>(orig)] = static_cast<int>(i);
      else
        second_occ[static_cast<std::size_t>(orig)] = static_cast<int>(i);
    }
  }

  struct Item {
    double onset;
    int tie;
    AlignRecord record;
  };
  std::vector<Item> items;
  int tie = 0;
  auto add_match = [&](int perf_index, int unfolded_index) {
    AlignRecord r;
    r.op = Op::Match;
    r.perf = spliced[static_cast<std::size_t>(perf_index)];
    r.perf_index = perf_index;
    r.score = score_ref_at(unfolded_new, unfolded_index);
    r.repeat_flag = r.score->pass_number > 1;
    items.push_back({r.perf->onset_s, tie++, r});
  };

  for (std::size_t orig_pi = 0; orig_pi < prov.note_map.size(); ++orig_pi) {
    int note_index = -1;  // original note index that rendered to orig_pi
    for (std::size_t ni = 0; ni < original_rendered.perf_index_of_note.size(); ++ni)
      if (original_rendered.perf_index_of_note[ni] == static_cast<int>(orig_pi)) {
        note_index = static_cast<int>(ni);
        break;
      }
    if (note_index < 0) continue;
    add_match(prov.note_map[orig_pi], first_occ[static_cast<std::size_t>(note_index)]);
    if (prov.duplicate_map[orig_pi] >= 0)
      add_match(prov.duplicate_map[orig_pi], second_occ[static_cast<std::size_t>(note_index)]);
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.onset < b.onset; });
  std::vector<AlignRecord> records;
  for (auto& it : items) records.push_back(std::move(it.record));
  return records;
}

// ---------------------------------------------------------------------------
// Training corpus

struct Sample {
  std::vector<std::string> patches;  // header + one patch per bar
  std::vector<PerfNote> perf;
  double seconds = 0.0;
  std::vector<TriStep> steps;  // BOS .. EOS
};

struct SynthPiece {
  ScoreIR score;
  UnfoldedScore unfolded;
  Rendered rendered;
  std::vector<PerfNote> perf;           // final (possibly modulated)
  std::vector<AlignRecord> truth;
  augment::PerfChangeLog perf_log;      // empty edits when rates are zero
};

inline SynthPiece make_piece(std::uint64_t seed, const PieceConfig& cfg = {}) {
  Rng rng(seed);
  SynthPiece piece;
  piece.score = random_score(rng, cfg);
  piece.unfolded = score_ir::unfold_repeats(piece.score);
  piece.rendered = render_performance(piece.unfolded, rng, cfg);
  const auto& rates = cfg.mistake_rates;
  if (rates.insert > 0.0 || rates.del > 0.0 || rates.shift > 0.0) {
    auto modulated = augment::modulate_performance(piece.rendered.perf, rates, rng.u64());
    piece.perf = modulated.perf;
    piece.perf_log = modulated.log;
    piece.truth = truth_from_perf_log(piece.unfolded, piece.rendered, piece.perf, modulated.log);
  } else {
    piece.perf = piece.rendered.perf;
    piece.truth = identity_truth(piece.unfolded, piece.rendered);
  }
  return piece;
}

inline Sample make_sample(std::uint64_t seed, const PieceConfig& cfg = {}) {
  SynthPiece piece = make_piece(seed, cfg);
  Sample s;
  s.perf = piece.perf;
  s.seconds = 0.0;
  for (const auto& n : s.perf) s.seconds = std::max(s.seconds, n.onset_s + n.dur_s);
  s.seconds += 0.25;
  s.steps = tokenizer::encode(piece.truth, timesig_events(piece.unfolded));
  s.patches = score_ir::to_abc_interleaved(
                  piece.score, std::min(piece.score.bar_count, score_ir::kMaxWindowBars))
                  .patches;
  return s;
}

inline nlohmann::json to_json(const Sample& s) {
  nlohmann::json j;
  j["patches"] = s.patches;
  j["seconds"] = s.seconds;
  j["perf"] = nlohmann::json::array();
  for (const auto& n : s.perf)
    j["perf"].push_back({{"onset_s", n.onset_s}, {"dur_s", n.dur_s}, {"pitch", n.pitch},
                         {"velocity", n.velocity}});
  j["steps"] = nlohmann::json::array();
  for (const auto& st : s.steps) {
    nlohmann::json row = nlohmann::json::array();
    for (int f = 0; f < tokenizer::kFieldCount; ++f)
      row.push_back(static_cast<int>(st.id[static_cast<std::size_t>(f)]));
    j["steps"].push_back(row);
  }
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  try {
    for (const auto& p : j.at("patches")) s.patches.push_back(p.get<std::string>());
    s.seconds = j.at("seconds").get<double>();
    for (const auto& n : j.at("perf"))
      s.perf.push_back({n.at("onset_s").get<double>(), n.at("dur_s").get<double>(),
                        n.at("pitch").get<int>(), n.at("velocity").get<int>()});
    for (const auto& row : j.at("steps")) {
      TriStep st;
      if (row.size() != tokenizer::kFieldCount)
        throw ParseError("corpus step has wrong field count");
      for (int f = 0; f < tokenizer::kFieldCount; ++f)
        st.id[static_cast<std::size_t>(f)] =
            static_cast<std::uint8_t>(row.at(static_cast<std::size_t>(f)).get<int>());
      s.steps.push_back(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corpus sample JSON: ") + e.what());
  }
  return s;
}

inline nlohmann::json corpus_to_json(const std::vector<Sample>& samples, std::uint64_t seed) {
  nlohmann::json j;
  j["meta"] = {{"format", "scoreperf-corpus"}, {"version", 1}, {"seed", seed},
               {"count", samples.size()}};
  j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) j["samples"].push_back(to_json(s));
  return j;
}

inline std::vector<Sample> corpus_from_json(const nlohmann::json& j) {
  std::vector<Sample> out;
  try {
    for (const auto& s : j.at("samples")) out.push_back(sample_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corpus JSON: ") + e.what());
  }
  return out;
}

// Per-sample seeds derived by splitmix so worker order cannot matter.
inline std::uint64_t sample_seed(std::uint64_t corpus_seed, std::uint64_t index) {
  std::uint64_t z = corpus_seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<Sample> build_corpus(int count, std::uint64_t seed, const PieceConfig& cfg = {}) {
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    samples.push_back(make_sample(sample_seed(seed, static_cast<std::uint64_t>(i)), cfg));
  return samples;
}

}  // namespace scoreperf::synth
