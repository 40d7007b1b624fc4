#pragma once

// Shared test utilities: a MusicXML renderer for round-trip checks, an SMF
// byte builder, and random generators for property tests. Test-only code;
// the renderer is intentionally independent of the ABC renderer.

#include <cstdint>
#include <string>
#include <vector>

#include "scoreperf/scoreperf.hpp"

namespace testutil {

using scoreperf::Rng;
using scoreperf::perf_ir::PerfNote;
using scoreperf::score_ir::RepeatKind;
using scoreperf::score_ir::ScoreIR;
using scoreperf::score_ir::ScoreNote;
using scoreperf::tokenizer::AlignRecord;
using scoreperf::tokenizer::Op;
using scoreperf::tokenizer::ScoreRef;
using scoreperf::tokenizer::TimeSigEvent;

// ---------------------------------------------------------------------------
// MusicXML rendering (subset used by the round-trip property)

inline void append_pitch_xml(std::string& out, int midi) {
  static const char* steps[12] = {"C", "C", "D", "D", "E", "F", "F", "G", "G", "A", "A", "B"};
  static const int alters[12] = {0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0};
  int octave = midi / 12 - 1;
  int pc = midi % 12;
  out += "<pitch><step>";
  out += steps[pc];
  out += "</step>";
  if (alters[pc]) out += "<alter>1</alter>";
  out += "<octave>" + std::to_string(octave) + "</octave></pitch>";
}

// Renders one part. Voices are emitted sequentially with <backup> between
// them; gaps become rests; notes sharing (voice, pos) become chords.
inline std::string render_musicxml(const ScoreIR& score) {
  using scoreperf::score_ir::sig_for_bar;
  std::string x = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<score-partwise version=\"3.1\">";
  x += "<part-list><score-part id=\"P1\"><part-name>Piano</part-name></score-part></part-list>";
  x += "<part id=\"P1\">";
  for (int b = 0; b < score.bar_count; ++b) {
    x += "<measure number=\"" + std::to_string(b + 1) + "\">";
    bool sig_change = false;
    for (const auto& ts : score.time_sigs)
      if (ts.bar_index == b) sig_change = true;
    if (b == 0 || sig_change) {
      auto sig = sig_for_bar(score, b);
      x += "<attributes>";
      if (b == 0) {
        x += "<divisions>320</divisions>";
        x += "<key><fifths>" + std::to_string(score.initial_key_fifths) + "</fifths></key>";
      }
      x += "<time><beats>" + std::to_string(sig.num) + "</beats><beat-type>" +
           std::to_string(sig.den) + "</beat-type></time></attributes>";
    }
    for (const auto& r : score.repeats) {
      if (r.bar_index != b) continue;
      if (r.kind == RepeatKind::Forward)
        x += "<barline location=\"left\"><repeat direction=\"forward\"/></barline>";
      if (r.kind == RepeatKind::VoltaStart)
        x += "<barline location=\"left\"><ending number=\"" + std::to_string(r.volta) +
             "\" type=\"start\"/></barline>";
    }

    std::vector<int> voices;
    for (const auto& n : score.notes)
      if (n.bar_index == b && std::find(voices.begin(), voices.end(), n.voice) == voices.end())
        voices.push_back(n.voice);
    std::sort(voices.begin(), voices.end());
    long long cursor_end = 0;
    for (std::size_t vi = 0; vi < voices.size(); ++vi) {
      if (vi > 0 && cursor_end > 0)
        x += "<backup><duration>" + std::to_string(cursor_end) + "</duration></backup>";
      long long cursor = 0;
      std::vector<const ScoreNote*> vn;
      for (const auto& n : score.notes)
        if (n.bar_index == b && n.voice == voices[vi]) vn.push_back(&n);
      std::size_t i = 0;
      while (i < vn.size()) {
        std::size_t j = i;
        while (j < vn.size() && vn[j]->pos_ticks == vn[i]->pos_ticks) ++j;
        if (vn[i]->pos_ticks > cursor) {
          x += "<note><rest/><duration>" + std::to_string(vn[i]->pos_ticks - cursor) +
               "</duration><voice>" + std::to_string(voices[vi]) + "</voice></note>";
          cursor = vn[i]->pos_ticks;
        }
        for (std::size_t k = i; k < j; ++k) {
          x += "<note>";
          if (k > i) x += "<chord/>";
          append_pitch_xml(x, vn[k]->pitch);
          x += "<duration>" + std::to_string(vn[k]->dur_ticks) + "</duration>";
          x += "<voice>" + std::to_string(voices[vi]) + "</voice>";
          x += "</note>";
        }
        cursor += vn[i]->dur_ticks;  // first note of the group advances
        i = j;
      }
      cursor_end = std::max(cursor_end, cursor);
    }
    for (const auto& r : score.repeats) {
      if (r.bar_index != b) continue;
      if (r.kind == RepeatKind::Backward)
        x += "<barline location=\"right\"><repeat direction=\"backward\"/></barline>";
      if (r.kind == RepeatKind::VoltaEnd)
        x += "<barline location=\"right\"><ending number=\"" + std::to_string(r.volta) +
             "\" type=\"stop\"/></barline>";
    }
    x += "</measure>";
  }
  x += "</part></score-partwise>";
  return x;
}

// Random well-formed ScoreIR for the parse(render(.)) == . property: per
// voice sequential (no overlap), chords share durations, everything on the
// 320-tick grid.
inline ScoreIR random_roundtrip_score(Rng& rng) {
  ScoreIR s;
  s.bar_count = static_cast<int>(rng.range(1, 4));
  static const std::vector<std::pair<int, int>> sigs = {{4, 4}, {3, 4}, {2, 4}, {6, 8}};
  auto [num, den] = sigs[static_cast<std::size_t>(rng.below(sigs.size()))];
  s.time_sigs.push_back({0, num, den});
  s.initial_key_fifths = static_cast<int>(rng.range(-3, 3));
  long long blen = scoreperf::score_ir::bar_len_ticks(num, den);
  for (int b = 0; b < s.bar_count; ++b) {
    int n_voices = static_cast<int>(rng.range(1, 2));
    for (int v = 1; v <= n_voices; ++v) {
      long long cursor = rng.chance(0.3) ? 80 : 0;
      while (cursor < blen) {
        long long dur = 80 * rng.range(1, 4);
        dur = std::min(dur, blen - cursor);
        if (rng.chance(0.2)) {  // rest
          cursor += dur;
          continue;
        }
        int n_chord = rng.chance(0.25) ? 2 : 1;
        int base = static_cast<int>(rng.range(40, 80));
        for (int c = 0; c < n_chord; ++c)
          s.notes.push_back({b, static_cast<int>(cursor), static_cast<int>(dur),
                             base + c * static_cast<int>(rng.range(3, 7)), v});
        cursor += dur;
      }
    }
  }
  std::sort(s.notes.begin(), s.notes.end(), [](const ScoreNote& a, const ScoreNote& b) {
    return std::tie(a.bar_index, a.pos_ticks, a.pitch, a.voice, a.dur_ticks) <
           std::tie(b.bar_index, b.pos_ticks, b.pitch, b.voice, b.dur_ticks);
  });
  return s;
}

// ---------------------------------------------------------------------------
// SMF byte builder

class SmfBuilder {
 public:
  explicit SmfBuilder(int tpq = 480) : tpq_(tpq) {}

  SmfBuilder& tempo(long long at_tick, int us_per_quarter) {
    delta(at_tick);
    track_.push_back(0xFF);
    track_.push_back(0x51);
    track_.push_back(0x03);
    track_.push_back(static_cast<std::uint8_t>((us_per_quarter >> 16) & 0xFF));
    track_.push_back(static_cast<std::uint8_t>((us_per_quarter >> 8) & 0xFF));
    track_.push_back(static_cast<std::uint8_t>(us_per_quarter & 0xFF));
    return *this;
  }

  SmfBuilder& note_on(long long at_tick, int pitch, int velocity, int channel = 0) {
    delta(at_tick);
    track_.push_back(static_cast<std::uint8_t>(0x90 | channel));
    track_.push_back(static_cast<std::uint8_t>(pitch));
    track_.push_back(static_cast<std::uint8_t>(velocity));
    return *this;
  }

  SmfBuilder& note_off(long long at_tick, int pitch, int channel = 0) {
    delta(at_tick);
    track_.push_back(static_cast<std::uint8_t>(0x80 | channel));
    track_.push_back(static_cast<std::uint8_t>(pitch));
    track_.push_back(64);
    return *this;
  }

  // note-on with velocity 0 acting as note-off
  SmfBuilder& note_off_v0(long long at_tick, int pitch, int channel = 0) {
    delta(at_tick);
    track_.push_back(static_cast<std::uint8_t>(0x90 | channel));
    track_.push_back(static_cast<std::uint8_t>(pitch));
    track_.push_back(0);
    return *this;
  }

  std::vector<std::uint8_t> build() {
    std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1};
    out.push_back(static_cast<std::uint8_t>((tpq_ >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(tpq_ & 0xFF));
    std::vector<std::uint8_t> track = track_;
    track.push_back(0x00);  // delta for end-of-track
    track.push_back(0xFF);
    track.push_back(0x2F);
    track.push_back(0x00);
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    std::uint32_t len = static_cast<std::uint32_t>(track.size());
    out.push_back(static_cast<std::uint8_t>((len >> 24) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((len >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((len >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(len & 0xFF));
    out.insert(out.end(), track.begin(), track.end());
    return out;
  }

 private:
  void delta(long long at_tick) {
    long long d = at_tick - last_tick_;
    if (d < 0) throw std::runtime_error("SmfBuilder: events must be tick-ordered");
    last_tick_ = at_tick;
    // variable-length quantity
    std::uint8_t buf[4];
    int n = 0;
    do {
      buf[n++] = static_cast<std::uint8_t>(d & 0x7F);
      d >>= 7;
    } while (d > 0 && n < 4);
    for (int i = n - 1; i >= 0; --i)
      track_.push_back(static_cast<std::uint8_t>(buf[i] | (i > 0 ? 0x80 : 0x00)));
  }

  int tpq_;
  long long last_tick_ = 0;
  std::vector<std::uint8_t> track_;
};

// ---------------------------------------------------------------------------
// Random valid AlignRecord sequences (tokenizer round-trip property)

struct RandomRecords {
  std::vector<AlignRecord> records;
  std::vector<TimeSigEvent> timesigs;
};

// Durations stay within the representable grids so the round-trip tolerance
// is meaningful (clamping is covered by dedicated tests).
inline RandomRecords random_records(Rng& rng, int count, double max_seconds = 60.0) {
  RandomRecords out;
  double onset = 0.0;
  int bar = 0;
  int pos = 0;
  int perf_index = 0, score_index = 0;
  out.timesigs.push_back({0, 4, 4});
  for (int i = 0; i < count; ++i) {
    double advance = rng.uniform(0.0, max_seconds / std::max(1, count) * 2.0);
    onset += advance;
    if (rng.chance(0.1) && bar < 49) {
      ++bar;
      pos = 0;
      if (rng.chance(0.15)) out.timesigs.push_back({bar, 3, 4});
    }
    pos = static_cast<int>(rng.below(1260));
    AlignRecord r;
    double roll = rng.real01();
    r.op = roll < 0.70 ? Op::Match : (roll < 0.85 ? Op::Insert : Op::Delete);
    if (r.op != Op::Delete) {
      PerfNote n;
      n.onset_s = onset;
      n.dur_s = rng.uniform(0.01, 3.4);
      n.pitch = static_cast<int>(rng.range(21, 108));
      n.velocity = static_cast<int>(rng.range(1, 127));
      r.perf = n;
      r.perf_index = perf_index++;
    }
    if (r.op != Op::Insert) {
      ScoreRef ref;
      ref.index = score_index++;
      ref.linear_bar = bar;
      ref.source_bar = bar;
      ref.pass_number = rng.chance(0.2) ? 2 : 1;
      ref.pos_ticks = pos;
      ref.dur_ticks = static_cast<int>(rng.range(1, 4390));
      ref.pitch = r.perf ? r.perf->pitch : static_cast<int>(rng.range(21, 108));
      r.score = ref;
      r.repeat_flag = ref.pass_number > 1;
    }
    out.records.push_back(r);
  }
  return out;
}

}  // namespace testutil
