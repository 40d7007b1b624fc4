#pragma once

// Seeded, reproducible corpus augmentation: score modulation (pitch shift or
// deletion), symbolic performance mistake injection, and repeat simulation
// with performance splicing. Every function is a pure function of
// (input, seed); the change logs are sufficient to reconstruct ground-truth
// alignment labels without re-running the aligner.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/aligner.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/score_ir.hpp"

namespace scoreperf::augment {

using perf_ir::PerfNote;
using score_ir::ScoreIR;
using score_ir::ScoreNote;
using tokenizer::AlignRecord;
using tokenizer::Op;

// ---------------------------------------------------------------------------
// Score modulation

struct ScoreEdit {
  enum class Kind { Shift, Delete };
  Kind kind = Kind::Shift;
  int orig_index = -1;  // into the input score's note list
  ScoreNote original;
  int new_pitch = 0;    // Shift only (may equal the original at clamp edges)
  int new_index = -1;   // into the output score's note list (-1 for Delete)
};

struct ScoreChangeLog {
  std::uint64_t seed = 0;
  double ratio = 0.0;
  std::vector<ScoreEdit> edits;
  std::vector<int> note_map;  // orig note index -> new note index (-1 = deleted)
};

struct ModulatedScore {
  ScoreIR score;
  ScoreChangeLog log;
};

// Alter floor(ratio*N) notes, selected uniformly without replacement; each is
// independently pitch-shifted by a nonzero integer in [-5,5] (clamped to the
// piano range) with probability 1/2, else deleted.
inline ModulatedScore modulate_score(const ScoreIR& score, double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ValidationError("modulation ratio must be in [0,1]");
  Rng rng(seed);
  const int n = static_cast<int>(score.notes.size());
  const int k = static_cast<int>(ratio * n);

  std::vector<int> chosen = rng.sample_indices(n, k);
  std::sort(chosen.begin(), chosen.end());

  ModulatedScore out;
  out.log.seed = seed;
  out.log.ratio = ratio;
  out.score = score;
  out.score.notes.clear();

  std::vector<ScoreEdit> edit_at(static_cast<std::size_t>(n));
  std::vector<bool> edited(static_cast<std::size_t>(n), false);
  for (int idx : chosen) {
    ScoreEdit e;
    e.orig_index = idx;
    e.original = score.notes[static_cast<std::size_t>(idx)];
    if (rng.chance(0.5)) {
      e.kind = ScoreEdit::Kind::Shift;
      long long shift = rng.range(1, 10);  // 1..10 -> {-5..-1, 1..5}
      if (shift > 5) shift -= 11;
      e.new_pitch = clamp_int(e.original.pitch + shift, score_ir::kPitchMin, score_ir::kPitchMax);
    } else {
      e.kind = ScoreEdit::Kind::Delete;
    }
    edit_at[static_cast<std::size_t>(idx)] = e;
    edited[static_cast<std::size_t>(idx)] = true;
  }

  // Build the new note list with provenance, then sort.
  struct Tagged {
    ScoreNote note;
    int orig_index;
  };
  std::vector<Tagged> tagged;
  for (int i = 0; i < n; ++i) {
    if (edited[static_cast<std::size_t>(i)] &&
        edit_at[static_cast<std::size_t>(i)].kind == ScoreEdit::Kind::Delete)
      continue;
    ScoreNote note = score.notes[static_cast<std::size_t>(i)];
    if (edited[static_cast<std::size_t>(i)])
      note.pitch = edit_at[static_cast<std::size_t>(i)].new_pitch;
    tagged.push_back({note, i});
  }
  std::stable_sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) {
    return std::tie(a.note.bar_index, a.note.pos_ticks, a.note.pitch, a.note.voice) <
           std::tie(b.note.bar_index, b.note.pos_ticks, b.note.pitch, b.note.voice);
  });

  out.log.note_map.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < tagged.size(); ++i) {
    out.score.notes.push_back(tagged[i].note);
    out.log.note_map[static_cast<std::size_t>(tagged[i].orig_index)] = static_cast<int>(i);
  }
  for (int idx : chosen) {
    ScoreEdit e = edit_at[static_cast<std::size_t>(idx)];
    e.new_index = out.log.note_map[static_cast<std::size_t>(idx)];
    out.log.edits.push_back(e);
  }
  return out;
}

inline nlohmann::json to_json(const ScoreChangeLog& log) {
  nlohmann::json j;
  j["seed"] = log.seed;
  j["ratio"] = log.ratio;
  j["edits"] = nlohmann::json::array();
  for (const auto& e : log.edits) {
    nlohmann::json je = {{"kind", e.kind == ScoreEdit::Kind::Shift ? "shift" : "delete"},
                         {"orig_index", e.orig_index},
                         {"bar", e.original.bar_index},
                         {"pos", e.original.pos_ticks},
                         {"pitch", e.original.pitch},
                         {"new_index", e.new_index}};
    if (e.kind == ScoreEdit::Kind::Shift) je["new_pitch"] = e.new_pitch;
    j["edits"].push_back(je);
  }
  j["note_map"] = log.note_map;
  return j;
}

// ---------------------------------------------------------------------------
// Performance modulation

struct PerfRates {
  double insert = 0.05;
  double del = 0.05;
  double shift = 0.05;
};

struct PerfEdit {
  enum class Kind { Insert, Delete, Shift };
  Kind kind = Kind::Insert;
  int orig_index = -1;   // Delete/Shift; for Insert, the copied source note
  int new_index = -1;    // index in the output list (-1 for Delete)
  int old_pitch = 0;
  int new_pitch = 0;
  PerfNote note;         // the resulting note (Insert/Shift) or the removed one
};

struct PerfChangeLog {
  std::uint64_t seed = 0;
  PerfRates rates;
  std::vector<PerfEdit> edits;
  std::vector<int> note_map;  // orig index -> new index (-1 = deleted)
};

struct ModulatedPerf {
  std::vector<PerfNote> perf;
  PerfChangeLog log;
};

// Symbolic mistake injection: floor(rate*N) deletions (uniform), insertions
// duplicating a random note at +-1 or +-2 semitones with 30-80 ms onset
// jitter, and pitch shifts of +-1..5 semitones. Deletion and shift targets
// are disjoint.
inline ModulatedPerf modulate_performance(const std::vector<PerfNote>& perf, PerfRates rates,
                                          std::uint64_t seed) {
  for (double r : {rates.insert, rates.del, rates.shift})
    if (r < 0.0 || r > 0.3) throw ValidationError("performance modulation rates must be in [0,0.3]");
  Rng rng(seed);
  const int n = static_cast<int>(perf.size());
  const int n_del = static_cast<int>(rates.del * n);
  const int n_shift = static_cast<int>(rates.shift * n);
  const int n_ins = static_cast<int>(rates.insert * n);

  std::vector<int> order = rng.sample_indices(n, n);  // one permutation, consumed in chunks
  std::vector<int> deletes(order.begin(), order.begin() + n_del);
  std::vector<int> shifts(order.begin() + n_del,
                          order.begin() + std::min(n, n_del + n_shift));
  std::sort(deletes.begin(), deletes.end());
  std::sort(shifts.begin(), shifts.end());

  struct Tagged {
    PerfNote note;
    int orig_index;       // -1 for inserted notes
    int insert_slot = -1; // order within the edits list, for log back-refs
  };
  std::vector<Tagged> tagged;
  std::vector<bool> is_deleted(static_cast<std::size_t>(std::max(n, 1)), false);
  for (int i : deletes) is_deleted[static_cast<std::size_t>(i)] = true;

  std::vector<PerfEdit> edits;
  for (int i : deletes) {
    PerfEdit e;
    e.kind = PerfEdit::Kind::Delete;
    e.orig_index = i;
    e.note = perf[static_cast<std::size_t>(i)];
    e.old_pitch = e.new_pitch = e.note.pitch;
    edits.push_back(e);
  }

  std::vector<int> shifted_pitch(static_cast<std::size_t>(std::max(n, 1)), -1);
  for (int i : shifts) {
    long long d = rng.range(1, 10);
    if (d > 5) d -= 11;
    int np = clamp_int(perf[static_cast<std::size_t>(i)].pitch + d, perf_ir::kPitchMin,
                       perf_ir::kPitchMax);
    shifted_pitch[static_cast<std::size_t>(i)] = np;
    PerfEdit e;
    e.kind = PerfEdit::Kind::Shift;
    e.orig_index = i;
    e.old_pitch = perf[static_cast<std::size_t>(i)].pitch;
    e.new_pitch = np;
    e.note = perf[static_cast<std::size_t>(i)];
    e.note.pitch = np;
    edits.push_back(e);
  }

  for (int i = 0; i < n; ++i) {
    if (is_deleted[static_cast<std::size_t>(i)]) continue;
    PerfNote note = perf[static_cast<std::size_t>(i)];
    if (shifted_pitch[static_cast<std::size_t>(i)] >= 0)
      note.pitch = shifted_pitch[static_cast<std::size_t>(i)];
    tagged.push_back({note, i});
  }

  for (int k = 0; k < n_ins && n > 0; ++k) {
    int src = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    PerfNote note = perf[static_cast<std::size_t>(src)];
    long long d = rng.range(1, 4);  // 1..4 -> {-2,-1,1,2}
    if (d > 2) d -= 5;
    note.pitch = clamp_int(note.pitch + d, perf_ir::kPitchMin, perf_ir::kPitchMax);
    double jitter = rng.uniform(0.030, 0.080);
    if (rng.chance(0.5)) jitter = -jitter;
    note.onset_s = std::max(0.0, note.onset_s + jitter);
    PerfEdit e;
    e.kind = PerfEdit::Kind::Insert;
    e.orig_index = src;
    e.old_pitch = perf[static_cast<std::size_t>(src)].pitch;
    e.new_pitch = note.pitch;
    e.note = note;
    edits.push_back(e);
    tagged.push_back({note, -1, static_cast<int>(edits.size()) - 1});
  }

  std::stable_sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) {
    return perf_ir::perf_note_order(a.note, b.note);
  });

  ModulatedPerf out;
  out.log.seed = seed;
  out.log.rates = rates;
  out.log.note_map.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < tagged.size(); ++i) {
    out.perf.push_back(tagged[i].note);
    if (tagged[i].orig_index >= 0)
      out.log.note_map[static_cast<std::size_t>(tagged[i].orig_index)] = static_cast<int>(i);
    else
      edits[static_cast<std::size_t>(tagged[i].insert_slot)].new_index = static_cast<int>(i);
  }
  for (auto& e : edits)
    if (e.kind == PerfEdit::Kind::Shift)
      e.new_index = out.log.note_map[static_cast<std::size_t>(e.orig_index)];
  out.log.edits = std::move(edits);
  return out;
}

inline nlohmann::json to_json(const PerfChangeLog& log) {
  nlohmann::json j;
  j["seed"] = log.seed;
  j["rates"] = {{"insert", log.rates.insert}, {"delete", log.rates.del}, {"shift", log.rates.shift}};
  j["edits"] = nlohmann::json::array();
  for (const auto& e : log.edits) {
    const char* kind = e.kind == PerfEdit::Kind::Insert ? "insert"
                       : e.kind == PerfEdit::Kind::Delete ? "delete"
                                                          : "shift";
    j["edits"].push_back({{"kind", kind},
                          {"orig_index", e.orig_index},
                          {"new_index", e.new_index},
                          {"old_pitch", e.old_pitch},
                          {"new_pitch", e.new_pitch},
                          {"onset_s", e.note.onset_s}});
  }
  j["note_map"] = log.note_map;
  return j;
}

// ---------------------------------------------------------------------------
// Repeat simulation

struct RepeatProvenance {
  bool applied = false;
  std::string skip_reason;     // when !applied
  int span_start = 0;          // source bars [span_start, span_start+span_len)
  int span_len = 0;
  double first_pass_start = 0.0;
  double second_pass_start = 0.0;
  double shift_s = 0.0;              // time shift applied to the duplicate + tail
  std::vector<int> duplicated_perf;  // original perf indices that were duplicated
  std::vector<int> note_map;         // original perf index -> index in the new list
  std::vector<int> duplicate_map;    // original perf index -> index of its pass-2 copy (-1)
};

struct SimulatedRepeat {
  ScoreIR score;
  std::vector<PerfNote> perf;
  RepeatProvenance provenance;
};

// With the given probability, wrap a random 1-8 bar span in repeat marks and
// splice a second pass into the performance: the aligned notes of the span
// are duplicated, shifted so the second pass starts one mean inter-onset
// interval after the first pass's last offset; everything after the span
// shifts by the same amount. Scores that already contain repeats pass through
// unchanged. The alignment of the original pair is required to locate the
// performed segment.
inline SimulatedRepeat simulate_repeats(const ScoreIR& score, const std::vector<PerfNote>& perf,
                                        const std::vector<AlignRecord>* alignment, double prob,
                                        std::uint64_t seed) {
  if (prob < 0.0 || prob > 1.0) throw ValidationError("probability must be in [0,1]");
  SimulatedRepeat out;
  out.score = score;
  out.perf = perf;
  if (!score.repeats.empty()) {
    out.provenance.skip_reason = "score already has repeats";
    return out;
  }
  Rng rng(seed);
  if (!rng.chance(prob)) {
    out.provenance.skip_reason = "not selected";
    return out;
  }
  if (!alignment || alignment->empty())
    throw ValidationError("repeat simulation requires an alignment of the score to the performance");
  if (score.bar_count < 1) {
    out.provenance.skip_reason = "empty score";
    return out;
  }

  int span_len = static_cast<int>(rng.range(1, std::min(8, score.bar_count)));
  int span_start = static_cast<int>(rng.range(0, score.bar_count - span_len));

  // Performance notes matched into the span.
  std::vector<int> seg;
  for (const auto& r : *alignment)
    if (r.op == Op::Match && r.score && r.score->source_bar >= span_start &&
        r.score->source_bar < span_start + span_len && r.perf_index >= 0)
      seg.push_back(r.perf_index);
  std::sort(seg.begin(), seg.end());
  if (seg.empty()) {
    out.provenance.skip_reason = "selected span has no matched notes";
    return out;
  }

  double t_start = perf[static_cast<std::size_t>(seg.front())].onset_s;
  double t_end = 0.0;
  for (int i : seg) {
    const auto& n = perf[static_cast<std::size_t>(i)];
    t_start = std::min(t_start, n.onset_s);
    t_end = std::max(t_end, n.onset_s + n.dur_s);
  }
  // Mean inter-onset interval over distinct onsets in the segment.
  std::vector<double> onsets;
  for (int i : seg) onsets.push_back(perf[static_cast<std::size_t>(i)].onset_s);
  std::sort(onsets.begin(), onsets.end());
  onsets.erase(std::unique(onsets.begin(), onsets.end()), onsets.end());
  double mean_ioi = 0.5;
  if (onsets.size() >= 2) mean_ioi = (onsets.back() - onsets.front()) / (onsets.size() - 1.0);
  double shift = (t_end - t_start) + mean_ioi;

  out.score.repeats.push_back({score_ir::RepeatKind::Forward, span_start, 0});
  out.score.repeats.push_back({score_ir::RepeatKind::Backward, span_start + span_len - 1, 0});

  // Which original notes move: matched after the span, or unmatched starting
  // after the segment's end.
  std::vector<int> matched_bar(perf.size(), -1);
  for (const auto& r : *alignment)
    if (r.op == Op::Match && r.score && r.perf_index >= 0)
      matched_bar[static_cast<std::size_t>(r.perf_index)] = r.score->source_bar;
  auto moves = [&](std::size_t i) {
    if (matched_bar[i] >= 0) return matched_bar[i] >= span_start + span_len;
    return perf[i].onset_s > t_end;
  };

  struct Tagged {
    PerfNote note;
    int orig_index;    // -1 for pass-2 copies
    int copy_of = -1;  // original index for pass-2 copies
  };
  std::vector<Tagged> tagged;
  for (std::size_t i = 0; i < perf.size(); ++i) {
    PerfNote n = perf[i];
    if (moves(i)) n.onset_s += shift;
    tagged.push_back({n, static_cast<int>(i)});
  }
  for (int i : seg) {
    PerfNote n = perf[static_cast<std::size_t>(i)];
    n.onset_s += shift;
    tagged.push_back({n, -1, i});
  }
  std::stable_sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) {
    return perf_ir::perf_note_order(a.note, b.note);
  });

  out.perf.clear();
  out.provenance.applied = true;
  out.provenance.span_start = span_start;
  out.provenance.span_len = span_len;
  out.provenance.first_pass_start = t_start;
  out.provenance.second_pass_start = t_start + shift;
  out.provenance.shift_s = shift;
  out.provenance.duplicated_perf = seg;
  out.provenance.note_map.assign(perf.size(), -1);
  out.provenance.duplicate_map.assign(perf.size(), -1);
  for (std::size_t i = 0; i < tagged.size(); ++i) {
    out.perf.push_back(tagged[i].note);
    if (tagged[i].orig_index >= 0)
      out.provenance.note_map[static_cast<std::size_t>(tagged[i].orig_index)] =
          static_cast<int>(i);
    else
      out.provenance.duplicate_map[static_cast<std::size_t>(tagged[i].copy_of)] =
          static_cast<int>(i);
  }
  return out;
}

inline nlohmann::json to_json(const RepeatProvenance& p) {
  nlohmann::json j;
  j["applied"] = p.applied;
  if (!p.applied) {
    j["skip_reason"] = p.skip_reason;
    return j;
  }
  j["span_start"] = p.span_start;
  j["span_len"] = p.span_len;
  j["first_pass_start"] = p.first_pass_start;
  j["second_pass_start"] = p.second_pass_start;
  j["shift_s"] = p.shift_s;
  j["duplicated_perf"] = p.duplicated_perf;
  j["note_map"] = p.note_map;
  j["duplicate_map"] = p.duplicate_map;
  return j;
}

}  // namespace scoreperf::augment
