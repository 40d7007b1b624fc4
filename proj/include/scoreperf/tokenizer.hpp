#pragma once

// Tri-stream compound tokenization. Each decoding step carries three parallel
// channels (performance fields, score fields, alignment fields) plus a global
// BOS/EOS marker. Exclusive tokens (T.Reset, the per-channel skips, TimeSig)
// silence the other multi-class fields of their channel; BOS/EOS silence all
// channels.
//
// Field id layout: multi-class fields reserve id 0 for silence and map values
// to 1..K. Micro fields have no silence id (value+5, inactive steps hold the
// zero-offset id 5). Flag fields are 0=inactive / 1=active.
//
// Resolved vocabulary sizes, asserted in check_vocab():
//   perf:  T 34 (silence + 0..31 + reserved boundary 32), T.Micro 11,
//          Reset 2, Velocity 33 (silence + 1..32), Duration 49, Pitch 89, Skip 2
//   score: TimeSig 13 (silence + 12 signatures), Bar 51, Pos 33, Pos.Micro 11,
//          Duration 49, Pitch 89, Skip 2
//   align: Op 4 (silence + Match/Insert/Delete), Repeat 2, Skip 2
//   global marker: 3 (none/BOS/EOS)

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/perf_ir.hpp"

namespace scoreperf::tokenizer {

using perf_ir::PerfNote;

// ---------------------------------------------------------------------------
// Timing constants (seconds / ticks)

constexpr double kTGrid = 0.0625;        // 62.5 ms onset grid
constexpr double kTMicroGrid = 0.00625;  // 6.25 ms adjustment
constexpr double kResetPeriod = 2.0;     // T resets every 2 s
constexpr int kTMax = 31;                // produced T values: 0..31 (32 reserved)
constexpr int kMicroRange = 5;           // micro values in [-5, 5]

constexpr int kPosGrid = 40;       // ticks: one 32nd note
constexpr int kPosMicroGrid = 4;   // ticks
constexpr int kPosMax = 31;

constexpr int kDurIndexMax = 47;   // duration grid indices 0..47

// ---------------------------------------------------------------------------
// Field catalogue

enum class Field : int {
  PerfT = 0,
  PerfTMicro,
  PerfReset,
  PerfVel,
  PerfDur,
  PerfPitch,
  PerfSkip,
  ScoreTimeSig,
  ScoreBar,
  ScorePos,
  ScorePosMicro,
  ScoreDur,
  ScorePitch,
  ScoreSkip,
  AlignOp,
  AlignRepeat,
  AlignSkip,
  Global,
  kCount
};

constexpr int kFieldCount = static_cast<int>(Field::kCount);

struct FieldInfo {
  const char* name;
  int size;         // total id count
  int silence_id;   // -1 when the field has no silence id
  bool exclusive;   // active value silences its channel
};

inline const std::array<FieldInfo, kFieldCount>& fields() {
  static const std::array<FieldInfo, kFieldCount> table = {{
      {"perf.t", 34, 0, false},
      {"perf.t_micro", 11, -1, false},
      {"perf.reset", 2, -1, true},
      {"perf.vel", 33, 0, false},
      {"perf.dur", 49, 0, false},
      {"perf.pitch", 89, 0, false},
      {"perf.skip", 2, -1, true},
      {"score.timesig", 13, 0, true},
      {"score.bar", 51, 0, false},
      {"score.pos", 33, 0, false},
      {"score.pos_micro", 11, -1, false},
      {"score.dur", 49, 0, false},
      {"score.pitch", 89, 0, false},
      {"score.skip", 2, -1, true},
      {"align.op", 4, 0, false},
      {"align.repeat", 2, -1, false},
      {"align.skip", 2, -1, true},
      {"global", 3, -1, false},
  }};
  return table;
}

inline const FieldInfo& field_info(Field f) { return fields()[static_cast<std::size_t>(f)]; }

// The twelve supported time signatures.
inline const std::array<std::pair<int, int>, 12>& timesig_table() {
  static const std::array<std::pair<int, int>, 12> table = {{{1, 4},
                                                             {2, 4},
                                                             {3, 4},
                                                             {4, 4},
                                                             {5, 4},
                                                             {6, 4},
                                                             {2, 2},
                                                             {3, 2},
                                                             {3, 8},
                                                             {6, 8},
                                                             {9, 8},
                                                             {12, 8}}};
  return table;
}

inline int timesig_id(int num, int den) {
  const auto& t = timesig_table();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].first == num && t[i].second == den) return static_cast<int>(i) + 1;
  throw ValidationError("time signature " + std::to_string(num) + "/" + std::to_string(den) +
                        " is outside the supported vocabulary");
}

// Sanity check of the resolved vocabulary; call once at startup.
inline void check_vocab() {
  static_assert(kFieldCount == 18);
  const auto& f = fields();
  auto expect = [&](Field fl, int size) {
    if (f[static_cast<std::size_t>(fl)].size != size)
      throw InternalError(std::string("vocab size mismatch for ") +
                          f[static_cast<std::size_t>(fl)].name);
  };
  expect(Field::PerfT, 1 + 33);        // silence + values 0..32 (32 reserved)
  expect(Field::PerfTMicro, 11);
  expect(Field::PerfReset, 2);
  expect(Field::PerfVel, 1 + 32);      // silence + bins 1..32
  expect(Field::PerfDur, 1 + 48);
  expect(Field::PerfPitch, 1 + 88);
  expect(Field::PerfSkip, 2);
  expect(Field::ScoreTimeSig, 1 + 12);
  expect(Field::ScoreBar, 1 + 50);
  expect(Field::ScorePos, 1 + 32);
  expect(Field::ScorePosMicro, 11);
  expect(Field::ScoreDur, 1 + 48);
  expect(Field::ScorePitch, 1 + 88);
  expect(Field::ScoreSkip, 2);
  expect(Field::AlignOp, 4);
  expect(Field::AlignRepeat, 2);
  expect(Field::AlignSkip, 2);
  expect(Field::Global, 3);
  if (timesig_table().size() != 12) throw InternalError("time signature table size");
}

// ---------------------------------------------------------------------------
// Quantizers

struct OnsetTokens {
  int resets = 0;  // T.Reset steps to emit before this event
  int t = 0;       // 0..31
  int micro = 0;   // -5..5
};

// Quantize an onset relative to the running 2 s window origin. Emits one
// reset per full window crossed; if rounding would land on the reserved
// boundary value 32, one extra reset is emitted and the (negative) residual
// is folded into the micro token, keeping the error within 3.125 ms. Onsets
// slightly before the origin (the ordered-onset successor of an early-reset
// overflow) fold into the micro token the same way.
inline OnsetTokens quantize_onset(double t, double window_origin) {
  OnsetTokens out;
  if (t < window_origin) {
    if (t < window_origin - (kMicroRange + 0.5) * kTMicroGrid)
      throw ValidationError("onset before window origin");
    out.micro = clamp_int(iround((t - window_origin) / kTMicroGrid), -kMicroRange, kMicroRange);
    return out;
  }
  out.resets = static_cast<int>(std::floor((t - window_origin) / kResetPeriod));
  double origin = window_origin + out.resets * kResetPeriod;
  long long tt = iround((t - origin) / kTGrid);
  if (tt > kTMax) {
    ++out.resets;
    origin += kResetPeriod;
    tt = iround((t - origin) / kTGrid);
    if (tt < 0) tt = 0;
  }
  out.t = static_cast<int>(tt);
  double residual = t - origin - out.t * kTGrid;
  out.micro = clamp_int(iround(residual / kTMicroGrid), -kMicroRange, kMicroRange);
  return out;
}

inline double dequantize_onset(int resets_so_far, int t, int micro, double window_origin) {
  return window_origin + resets_so_far * kResetPeriod + t * kTGrid + micro * kTMicroGrid;
}

// MIDI velocity -> 4-unit bins 1..32; bin midpoint on the way back.
inline int quantize_velocity(int v) {
  if (v < 1 || v > 127) throw ValidationError("velocity outside [1,127]");
  return (v + 3) / 4;
}

inline int dequantize_velocity(int tok) { return 4 * tok - 2; }

// Performance duration: three-tier grid, indices 0..47.
//   [0,16]   31.25 ms steps   (0 .. 0.5 s)
//   (16,32]  62.5 ms steps    (0.5625 .. 1.5 s)
//   (32,47]  125 ms steps     (1.625 .. 3.375 s)
// Values above the top grid point clamp to 47.
inline int quantize_duration_perf(double d) {
  if (d <= 0.0) throw ValidationError("duration must be positive");
  if (d <= 0.5) return clamp_int(iround(d / 0.03125), 0, 16);
  if (d <= 1.5) return 16 + clamp_int(iround((d - 0.5) / 0.0625), 0, 16);
  return 32 + clamp_int(iround((d - 1.5) / 0.125), 0, 15);
}

inline double dequantize_duration_perf(int tok) {
  if (tok <= 16) return tok * 0.03125;
  if (tok <= 32) return 0.5 + (tok - 16) * 0.0625;
  return 1.5 + (tok - 32) * 0.125;
}

// Score duration: same tier shape with 40/80/160-tick steps.
inline int quantize_duration_score(int ticks) {
  if (ticks <= 0) throw ValidationError("duration must be positive");
  if (ticks <= 640) return clamp_int(iround(ticks / 40.0), 0, 16);
  if (ticks <= 1920) return 16 + clamp_int(iround((ticks - 640) / 80.0), 0, 16);
  return 32 + clamp_int(iround((ticks - 1920) / 160.0), 0, 15);
}

inline int dequantize_duration_score(int tok) {
  if (tok <= 16) return tok * 40;
  if (tok <= 32) return 640 + (tok - 16) * 80;
  return 1920 + (tok - 32) * 160;
}

struct PosTokens {
  int pos = 0;    // 0..31
  int micro = 0;  // -5..5
};

inline PosTokens quantize_score_position(int pos_ticks, int bar_index = -1) {
  if (pos_ticks < 0) throw ValidationError("negative score position");
  long long p = iround(pos_ticks / static_cast<double>(kPosGrid));
  if (p > kPosMax) {
    std::string where = bar_index >= 0 ? "bar " + std::to_string(bar_index) : std::string();
    throw ValidationError("score position " + std::to_string(pos_ticks) +
                              " overflows the 32-step bar grid",
                          where);
  }
  PosTokens out;
  out.pos = static_cast<int>(p);
  out.micro = clamp_int(iround((pos_ticks - kPosGrid * out.pos) / static_cast<double>(kPosMicroGrid)),
                        -kMicroRange, kMicroRange);
  return out;
}

inline int dequantize_score_position(int pos, int micro) {
  return kPosGrid * pos + kPosMicroGrid * micro;
}

// ---------------------------------------------------------------------------
// Steps and records

enum class Op : int { Match = 1, Insert = 2, Delete = 3 };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Match: return "Match";
    case Op::Insert: return "Insert";
    case Op::Delete: return "Delete";
  }
  return "?";
}

inline Op op_from_name(const std::string& s) {
  if (s == "Match") return Op::Match;
  if (s == "Insert") return Op::Insert;
  if (s == "Delete") return Op::Delete;
  throw ParseError("unknown alignment op '" + s + "'");
}

// A score-side note reference carried by alignment records.
struct ScoreRef {
  int index = -1;       // position in the unfolded note list (or -1)
  int linear_bar = 0;   // window-relative for tokenization (0..49)
  int source_bar = 0;
  int pass_number = 1;
  int pos_ticks = 0;
  int dur_ticks = 0;
  int pitch = 0;

  friend bool operator==(const ScoreRef&, const ScoreRef&) = default;
};

struct AlignRecord {
  Op op = Op::Match;
  std::optional<PerfNote> perf;   // Match/Insert
  int perf_index = -1;
  std::optional<ScoreRef> score;  // Match/Delete
  bool repeat_flag = false;       // true iff score side's pass_number > 1

  friend bool operator==(const AlignRecord&, const AlignRecord&) = default;
};

inline void validate_record(const AlignRecord& r, std::size_t index) {
  auto bad = [&](const std::string& msg) {
    throw ValidationError("alignment record " + std::to_string(index) + ": " + msg);
  };
  switch (r.op) {
    case Op::Match:
      if (!r.perf || !r.score) bad("Match requires both notes");
      break;
    case Op::Insert:
      if (!r.perf || r.score) bad("Insert carries a performance note only");
      break;
    case Op::Delete:
      if (r.perf || !r.score) bad("Delete carries a score note only");
      break;
  }
  bool expect_repeat = r.score && r.score->pass_number > 1;
  if (r.repeat_flag != expect_repeat) bad("repeat flag inconsistent with pass number");
}

// One compound decoding step: raw field ids.
struct TriStep {
  std::array<std::uint8_t, kFieldCount> id{};

  std::uint8_t& operator[](Field f) { return id[static_cast<std::size_t>(f)]; }
  std::uint8_t operator[](Field f) const { return id[static_cast<std::size_t>(f)]; }

  friend bool operator==(const TriStep&, const TriStep&) = default;
};

// All-silence step (micro fields at their zero offset).
inline TriStep silent_step() {
  TriStep s;
  s[Field::PerfTMicro] = kMicroRange;       // value 0
  s[Field::ScorePosMicro] = kMicroRange;
  return s;
}

inline TriStep bos_step() {
  TriStep s = silent_step();
  s[Field::Global] = 1;
  return s;
}

inline TriStep eos_step() {
  TriStep s = silent_step();
  s[Field::Global] = 2;
  return s;
}

enum class StepKind { Bos, Eos, Reset, TimeSig, Match, Insert, Delete };

// Structured decode failure: carries the offending step index.
class DecodeError : public Error {
 public:
  DecodeError(std::size_t step_index, std::string message)
      : Error(ErrorKind::Validation, std::move(message), "step " + std::to_string(step_index)),
        step_index_(step_index) {}
  std::size_t step_index() const { return step_index_; }

 private:
  std::size_t step_index_;
};

namespace detail {

inline bool perf_channel_silent(const TriStep& s) {
  return s[Field::PerfT] == 0 && s[Field::PerfVel] == 0 && s[Field::PerfDur] == 0 &&
         s[Field::PerfPitch] == 0 && s[Field::PerfTMicro] == kMicroRange;
}

inline bool score_channel_silent(const TriStep& s) {
  return s[Field::ScoreTimeSig] == 0 && s[Field::ScoreBar] == 0 && s[Field::ScorePos] == 0 &&
         s[Field::ScoreDur] == 0 && s[Field::ScorePitch] == 0 &&
         s[Field::ScorePosMicro] == kMicroRange;
}

inline bool align_channel_silent(const TriStep& s) {
  return s[Field::AlignOp] == 0 && s[Field::AlignRepeat] == 0;
}

}  // namespace detail

// Classify a step and enforce the exclusive/silence invariants. Throws
// DecodeError on any malformed combination.
inline StepKind classify_step(const TriStep& s, std::size_t index) {
  auto require = [&](bool cond, const char* msg) {
    if (!cond) throw DecodeError(index, msg);
  };
  for (int f = 0; f < kFieldCount; ++f)
    require(s.id[static_cast<std::size_t>(f)] < fields()[static_cast<std::size_t>(f)].size,
            "field id out of range");

  if (s[Field::Global] != 0) {
    require(detail::perf_channel_silent(s) && s[Field::PerfReset] == 0 && s[Field::PerfSkip] == 0,
            "BOS/EOS must silence the performance channel");
    require(detail::score_channel_silent(s) && s[Field::ScoreSkip] == 0,
            "BOS/EOS must silence the score channel");
    require(detail::align_channel_silent(s) && s[Field::AlignSkip] == 0,
            "BOS/EOS must silence the alignment channel");
    return s[Field::Global] == 1 ? StepKind::Bos : StepKind::Eos;
  }
  if (s[Field::PerfReset] != 0) {
    require(detail::perf_channel_silent(s) && s[Field::PerfSkip] == 0,
            "T.Reset must silence the other performance fields");
    require(detail::score_channel_silent(s) && s[Field::ScoreSkip] == 0,
            "T.Reset step must leave the score channel silent");
    require(detail::align_channel_silent(s) && s[Field::AlignSkip] == 0,
            "T.Reset step must leave the alignment channel silent");
    return StepKind::Reset;
  }
  if (s[Field::ScoreTimeSig] != 0) {
    require(s[Field::ScoreBar] == 0 && s[Field::ScorePos] == 0 && s[Field::ScoreDur] == 0 &&
                s[Field::ScorePitch] == 0 && s[Field::ScorePosMicro] == kMicroRange &&
                s[Field::ScoreSkip] == 0,
            "TimeSig must silence the other score fields");
    require(detail::perf_channel_silent(s) && s[Field::PerfSkip] == 0,
            "TimeSig step must leave the performance channel silent");
    require(detail::align_channel_silent(s) && s[Field::AlignSkip] == 0,
            "TimeSig step must leave the alignment channel silent");
    return StepKind::TimeSig;
  }

  require(s[Field::AlignOp] != 0, "step carries no operation");
  require(s[Field::AlignSkip] == 0, "alignment skip is reserved");
  Op op = static_cast<Op>(s[Field::AlignOp]);
  bool perf_active = s[Field::PerfSkip] == 0;
  bool score_active = s[Field::ScoreSkip] == 0;
  if (op == Op::Match) {
    require(perf_active, "Match step with performance channel skipped");
    require(score_active, "Match step with score channel skipped");
  } else if (op == Op::Insert) {
    require(perf_active, "Insert step with performance channel skipped");
    require(!score_active, "Insert step must skip the score channel");
  } else {
    require(!perf_active, "Delete step must skip the performance channel");
    require(score_active, "Delete step with score channel skipped");
  }
  if (perf_active) {
    require(s[Field::PerfT] != 0 && s[Field::PerfVel] != 0 && s[Field::PerfDur] != 0 &&
                s[Field::PerfPitch] != 0,
            "active performance channel has silenced fields");
    require(s[Field::PerfT] != 33, "reserved T boundary id in active step");
  } else {
    require(detail::perf_channel_silent(s), "skipped performance channel must be silent");
  }
  if (score_active) {
    require(s[Field::ScoreBar] != 0 && s[Field::ScorePos] != 0 && s[Field::ScoreDur] != 0 &&
                s[Field::ScorePitch] != 0,
            "active score channel has silenced fields");
  } else {
    require(detail::score_channel_silent(s), "skipped score channel must be silent");
  }
  if (!score_active)
    require(s[Field::AlignRepeat] == 0, "repeat flag without a score-side note");
  switch (op) {
    case Op::Match: return StepKind::Match;
    case Op::Insert: return StepKind::Insert;
    case Op::Delete: return StepKind::Delete;
  }
  throw DecodeError(index, "unreachable");
}

inline bool step_is_valid(const TriStep& s) {
  try {
    classify_step(s, 0);
    return true;
  } catch (const DecodeError&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Encode

struct TimeSigEvent {
  int linear_bar = 0;  // window-relative
  int num = 4;
  int den = 4;
};

// Encode an aligned record sequence. Records must be ordered by performance
// onset for Match/Insert, with Delete records interleaved at the position
// they occupy in the aligned sequence. T.Reset steps are interleaved as
// exclusive performance steps; time-signature changes as exclusive score
// steps emitted before the first record whose score-side bar reaches them.
inline std::vector<TriStep> encode(const std::vector<AlignRecord>& records,
                                   const std::vector<TimeSigEvent>& timesig_events = {},
                                   double window_origin = 0.0) {
  std::vector<TriStep> steps;
  steps.push_back(bos_step());

  double origin = window_origin;
  double last_onset = window_origin;
  std::size_t next_sig = 0;

  auto emit_sigs_up_to = [&](int linear_bar) {
    while (next_sig < timesig_events.size() &&
           (linear_bar < 0 || timesig_events[next_sig].linear_bar <= linear_bar)) {
      TriStep s = silent_step();
      s[Field::ScoreTimeSig] = static_cast<std::uint8_t>(
          timesig_id(timesig_events[next_sig].num, timesig_events[next_sig].den));
      steps.push_back(s);
      ++next_sig;
    }
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const AlignRecord& r = records[i];
    validate_record(r, i);

    if (r.score) emit_sigs_up_to(r.score->linear_bar);

    TriStep s = silent_step();
    s[Field::AlignOp] = static_cast<std::uint8_t>(static_cast<int>(r.op));
    s[Field::AlignRepeat] = r.repeat_flag ? 1 : 0;

    if (r.perf) {
      if (r.perf->onset_s < last_onset - 1e-9)
        throw ValidationError("records not ordered by performance onset at record " +
                              std::to_string(i));
      last_onset = std::max(last_onset, r.perf->onset_s);
      OnsetTokens ot = quantize_onset(r.perf->onset_s, origin);
      for (int k = 0; k < ot.resets; ++k) {
        TriStep reset = silent_step();
        reset[Field::PerfReset] = 1;
        steps.push_back(reset);
      }
      origin += ot.resets * kResetPeriod;
      s[Field::PerfT] = static_cast<std::uint8_t>(1 + ot.t);
      s[Field::PerfTMicro] = static_cast<std::uint8_t>(ot.micro + kMicroRange);
      s[Field::PerfVel] = static_cast<std::uint8_t>(quantize_velocity(r.perf->velocity));
      s[Field::PerfDur] = static_cast<std::uint8_t>(1 + quantize_duration_perf(r.perf->dur_s));
      if (r.perf->pitch < perf_ir::kPitchMin || r.perf->pitch > perf_ir::kPitchMax)
        throw ValidationError("performance pitch outside [21,108] at record " + std::to_string(i));
      s[Field::PerfPitch] = static_cast<std::uint8_t>(r.perf->pitch - perf_ir::kPitchMin + 1);
    } else {
      s[Field::PerfSkip] = 1;
    }

    if (r.score) {
      const ScoreRef& n = *r.score;
      if (n.linear_bar < 0 || n.linear_bar > 49)
        throw ValidationError("score bar " + std::to_string(n.linear_bar) +
                              " outside the 50-bar window at record " + std::to_string(i));
      PosTokens pt = quantize_score_position(n.pos_ticks, n.linear_bar);
      s[Field::ScoreBar] = static_cast<std::uint8_t>(1 + n.linear_bar);
      s[Field::ScorePos] = static_cast<std::uint8_t>(1 + pt.pos);
      s[Field::ScorePosMicro] = static_cast<std::uint8_t>(pt.micro + kMicroRange);
      s[Field::ScoreDur] = static_cast<std::uint8_t>(1 + quantize_duration_score(n.dur_ticks));
      if (n.pitch < perf_ir::kPitchMin || n.pitch > perf_ir::kPitchMax)
        throw ValidationError("score pitch outside [21,108] at record " + std::to_string(i));
      s[Field::ScorePitch] = static_cast<std::uint8_t>(n.pitch - perf_ir::kPitchMin + 1);
    } else {
      s[Field::ScoreSkip] = 1;
    }

    steps.push_back(s);
  }
  emit_sigs_up_to(-1 /* flush */);
  steps.push_back(eos_step());
  return steps;
}

// ---------------------------------------------------------------------------
// Decode

struct Decoded {
  std::vector<PerfNote> perf_notes;
  std::vector<ScoreRef> score_refs;
  std::vector<AlignRecord> records;
  std::vector<TimeSigEvent> timesigs;  // linear_bar = bar of the following score event
};

// Inverse of encode up to quantization. Velocities and durations come back as
// bin midpoints / grid points; onsets from reset count + T + micro.
inline Decoded decode(const std::vector<TriStep>& steps, double window_origin = 0.0) {
  Decoded out;
  if (steps.empty() || classify_step(steps[0], 0) != StepKind::Bos)
    throw DecodeError(0, "sequence must begin with BOS");

  double origin = window_origin;
  int pending_num = 0, pending_den = 0;  // nonzero when a TimeSig step awaits its bar
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const TriStep& s = steps[i];
    StepKind kind = classify_step(s, i);
    if (kind == StepKind::Bos) throw DecodeError(i, "BOS in mid-sequence");
    if (kind == StepKind::Eos) break;  // trailing steps ignored
    if (kind == StepKind::Reset) {
      origin += kResetPeriod;
      continue;
    }
    if (kind == StepKind::TimeSig) {
      auto [num, den] = timesig_table()[static_cast<std::size_t>(s[Field::ScoreTimeSig] - 1)];
      pending_num = num;
      pending_den = den;
      continue;
    }

    AlignRecord r;
    r.op = static_cast<Op>(s[Field::AlignOp]);
    r.repeat_flag = s[Field::AlignRepeat] != 0;
    if (s[Field::PerfSkip] == 0) {
      PerfNote n;
      n.onset_s = dequantize_onset(0, s[Field::PerfT] - 1, s[Field::PerfTMicro] - kMicroRange,
                                   origin);
      n.velocity = dequantize_velocity(s[Field::PerfVel]);
      double d = dequantize_duration_perf(s[Field::PerfDur] - 1);
      n.dur_s = d > 0.0 ? d : 0.5 * 0.03125;  // keep dur_s positive for grid-0 bins
      n.pitch = perf_ir::kPitchMin + s[Field::PerfPitch] - 1;
      r.perf_index = static_cast<int>(out.perf_notes.size());
      out.perf_notes.push_back(n);
      r.perf = n;
    }
    if (s[Field::ScoreSkip] == 0) {
      ScoreRef n;
      n.linear_bar = s[Field::ScoreBar] - 1;
      n.source_bar = n.linear_bar;
      n.pos_ticks = dequantize_score_position(s[Field::ScorePos] - 1,
                                              s[Field::ScorePosMicro] - kMicroRange);
      n.dur_ticks = dequantize_duration_score(s[Field::ScoreDur] - 1);
      n.pitch = perf_ir::kPitchMin + s[Field::ScorePitch] - 1;
      n.pass_number = r.repeat_flag ? 2 : 1;  // binary flag: pass beyond 2 is not recoverable
      n.index = static_cast<int>(out.score_refs.size());
      if (pending_num != 0) {
        out.timesigs.push_back({n.linear_bar, pending_num, pending_den});
        pending_num = pending_den = 0;
      }
      out.score_refs.push_back(n);
      r.score = n;
    }
    out.records.push_back(r);
  }
  if (pending_num != 0) out.timesigs.push_back({-1, pending_num, pending_den});
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: flat binary (fixed-width field ids) and readable JSON.

constexpr char kBinaryMagic[4] = {'T', 'R', 'T', 'K'};
constexpr std::uint32_t kBinaryVersion = 1;

inline std::string to_bytes(const std::vector<TriStep>& steps) {
  std::string out;
  out.append(kBinaryMagic, 4);
  auto push_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  push_u32(kBinaryVersion);
  push_u32(static_cast<std::uint32_t>(steps.size()));
  for (const auto& s : steps)
    for (int f = 0; f < kFieldCount; ++f)
      out.push_back(static_cast<char>(s.id[static_cast<std::size_t>(f)]));
  return out;
}

inline std::vector<TriStep> from_bytes(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, kBinaryMagic, 4) != 0)
    throw ParseError("token stream: bad magic");
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[at + i])) << (8 * i);
    return v;
  };
  if (u32(4) != kBinaryVersion) throw ParseError("token stream: unsupported version");
  std::uint32_t count = u32(8);
  if (bytes.size() != 12 + static_cast<std::size_t>(count) * kFieldCount)
    throw ParseError("token stream: truncated payload");
  std::vector<TriStep> steps(count);
  std::size_t at = 12;
  for (auto& s : steps)
    for (int f = 0; f < kFieldCount; ++f) {
      std::uint8_t id = static_cast<std::uint8_t>(bytes[at++]);
      if (id >= fields()[static_cast<std::size_t>(f)].size)
        throw ParseError("token stream: field id out of range");
      s.id[static_cast<std::size_t>(f)] = id;
    }
  return steps;
}

// Readable JSON mirroring the three channel rows.
inline nlohmann::json step_to_json(const TriStep& s) {
  nlohmann::json j;
  if (s[Field::Global] != 0) {
    j["global"] = s[Field::Global] == 1 ? "BOS" : "EOS";
    return j;
  }
  nlohmann::json perf, score, align;
  perf["reset"] = s[Field::PerfReset] != 0;
  perf["skip"] = s[Field::PerfSkip] != 0;
  if (s[Field::PerfT] != 0) {
    perf["t"] = s[Field::PerfT] - 1;
    perf["t_micro"] = s[Field::PerfTMicro] - kMicroRange;
    perf["vel"] = static_cast<int>(s[Field::PerfVel]);
    perf["dur"] = s[Field::PerfDur] - 1;
    perf["pitch"] = perf_ir::kPitchMin + s[Field::PerfPitch] - 1;
  }
  score["skip"] = s[Field::ScoreSkip] != 0;
  if (s[Field::ScoreTimeSig] != 0) {
    auto [num, den] = timesig_table()[static_cast<std::size_t>(s[Field::ScoreTimeSig] - 1)];
    score["timesig"] = std::to_string(num) + "/" + std::to_string(den);
  }
  if (s[Field::ScoreBar] != 0) {
    score["bar"] = s[Field::ScoreBar] - 1;
    score["pos"] = s[Field::ScorePos] - 1;
    score["pos_micro"] = s[Field::ScorePosMicro] - kMicroRange;
    score["dur"] = s[Field::ScoreDur] - 1;
    score["pitch"] = perf_ir::kPitchMin + s[Field::ScorePitch] - 1;
  }
  if (s[Field::AlignOp] != 0) align["op"] = op_name(static_cast<Op>(s[Field::AlignOp]));
  align["repeat"] = s[Field::AlignRepeat] != 0;
  align["skip"] = s[Field::AlignSkip] != 0;
  j["perf"] = perf;
  j["score"] = score;
  j["align"] = align;
  return j;
}

inline nlohmann::json to_json(const std::vector<TriStep>& steps) {
  nlohmann::json j;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : steps) j["steps"].push_back(step_to_json(s));
  return j;
}

inline TriStep step_from_json(const nlohmann::json& j) {
  TriStep s = silent_step();
  try {
    if (j.contains("global")) {
      std::string g = j.at("global").get<std::string>();
      s[Field::Global] = g == "BOS" ? 1 : 2;
      return s;
    }
    const auto& perf = j.at("perf");
    const auto& score = j.at("score");
    const auto& align = j.at("align");
    if (perf.value("reset", false)) s[Field::PerfReset] = 1;
    if (perf.value("skip", false)) s[Field::PerfSkip] = 1;
    if (perf.contains("t")) {
      s[Field::PerfT] = static_cast<std::uint8_t>(perf.at("t").get<int>() + 1);
      s[Field::PerfTMicro] = static_cast<std::uint8_t>(perf.at("t_micro").get<int>() + kMicroRange);
      s[Field::PerfVel] = static_cast<std::uint8_t>(perf.at("vel").get<int>());
      s[Field::PerfDur] = static_cast<std::uint8_t>(perf.at("dur").get<int>() + 1);
      s[Field::PerfPitch] =
          static_cast<std::uint8_t>(perf.at("pitch").get<int>() - perf_ir::kPitchMin + 1);
    }
    if (score.value("skip", false)) s[Field::ScoreSkip] = 1;
    if (score.contains("timesig")) {
      std::string sig = score.at("timesig").get<std::string>();
      auto slash = sig.find('/');
      if (slash == std::string::npos) throw ParseError("bad timesig '" + sig + "'");
      s[Field::ScoreTimeSig] = static_cast<std::uint8_t>(
          timesig_id(std::stoi(sig.substr(0, slash)), std::stoi(sig.substr(slash + 1))));
    }
    if (score.contains("bar")) {
      s[Field::ScoreBar] = static_cast<std::uint8_t>(score.at("bar").get<int>() + 1);
      s[Field::ScorePos] = static_cast<std::uint8_t>(score.at("pos").get<int>() + 1);
      s[Field::ScorePosMicro] =
          static_cast<std::uint8_t>(score.at("pos_micro").get<int>() + kMicroRange);
      s[Field::ScoreDur] = static_cast<std::uint8_t>(score.at("dur").get<int>() + 1);
      s[Field::ScorePitch] =
          static_cast<std::uint8_t>(score.at("pitch").get<int>() - perf_ir::kPitchMin + 1);
    }
    if (align.contains("op")) {
      s[Field::AlignOp] =
          static_cast<std::uint8_t>(static_cast<int>(op_from_name(align.at("op").get<std::string>())));
    }
    if (align.value("repeat", false)) s[Field::AlignRepeat] = 1;
    if (align.value("skip", false)) s[Field::AlignSkip] = 1;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("token step JSON: ") + e.what());
  }
  return s;
}

inline std::vector<TriStep> steps_from_json(const nlohmann::json& j) {
  std::vector<TriStep> steps;
  try {
    for (const auto& s : j.at("steps")) steps.push_back(step_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("token stream JSON: ") + e.what());
  }
  return steps;
}

}  // namespace scoreperf::tokenizer
