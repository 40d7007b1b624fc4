#pragma once

// Bar-patched ABC rendering of a ScoreIR. One fixed-width text patch per bar
// plus a header patch with the initial meter/key. The grammar is this repo's
// own documented ABC subset (docs/FORMATS.md); the target is information
// preservation, not byte compatibility with any external ABC dialect.

#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/score_ir.hpp"

namespace scoreperf::score_ir {

constexpr int kPatchLen = 64;
constexpr char kPadChar = '`';  // reserved: never produced by the grammar
constexpr int kMaxWindowBars = 50;

struct LossinessEntry {
  int bar_index = 0;     // -1 for the header patch
  int rendered_len = 0;  // length before truncation to kPatchLen
};

struct AbcResult {
  std::vector<std::string> patches;  // each exactly kPatchLen bytes
  std::vector<LossinessEntry> lossiness;
};

namespace abc_detail {

inline std::string duration_suffix(int ticks) {
  // Duration as a rational multiple of a quarter note (header L:1/4).
  int num = ticks, den = kTicksPerQuarter;
  int g = std::gcd(num, den);
  num /= g;
  den /= g;
  if (num == 1 && den == 1) return "";
  if (den == 1) return std::to_string(num);
  if (num == 1) return "/" + std::to_string(den);
  return std::to_string(num) + "/" + std::to_string(den);
}

inline std::string pitch_name(int midi) {
  static const char* names[12] = {"C", "^C", "D", "^D", "E", "F", "^F", "G", "^G", "A", "^A", "B"};
  int octave = midi / 12 - 1;
  std::string base = names[midi % 12];
  std::string out;
  if (octave >= 5) {
    for (char c : base) out.push_back((c >= 'A' && c <= 'G') ? static_cast<char>(c - 'A' + 'a') : c);
    for (int i = 0; i < octave - 5; ++i) out.push_back('\'');
  } else {
    out = base;
    for (int i = 0; i < 4 - octave; ++i) out.push_back(',');
  }
  return out;
}

inline std::string key_name(int fifths) {
  static const char* names[15] = {"Cb", "Gb", "Db", "Ab", "Eb", "Bb", "F", "C",
                                  "G",  "D",  "A",  "E",  "B",  "F#", "C#"};
  if (fifths < -7 || fifths > 7) return "C";
  return names[fifths + 7];
}

// Render one voice of one bar: onset groups separated by z rests.
inline std::string render_voice(const std::vector<const ScoreNote*>& notes) {
  std::string out;
  int cursor = 0;
  std::size_t i = 0;
  bool first = true;
  while (i < notes.size()) {
    std::size_t j = i;
    while (j < notes.size() && notes[j]->pos_ticks == notes[i]->pos_ticks) ++j;
    int onset = notes[i]->pos_ticks;
    if (onset > cursor) {
      if (!first) out.push_back(' ');
      out += "z" + duration_suffix(onset - cursor);
      first = false;
    }
    // Overlapping voice content (onset < cursor) renders in sequence; the
    // positional gap is clipped, which the grammar accepts as lossy.
    if (!first) out.push_back(' ');
    first = false;
    int min_dur = notes[i]->dur_ticks;
    bool equal_durs = true;
    for (std::size_t k = i; k < j; ++k) {
      min_dur = std::min(min_dur, notes[k]->dur_ticks);
      if (notes[k]->dur_ticks != notes[i]->dur_ticks) equal_durs = false;
    }
    if (j - i == 1) {
      out += pitch_name(notes[i]->pitch) + duration_suffix(notes[i]->dur_ticks);
    } else {
      out.push_back('[');
      for (std::size_t k = i; k < j; ++k) {
        out += pitch_name(notes[k]->pitch);
        if (!equal_durs) out += duration_suffix(notes[k]->dur_ticks);
      }
      out.push_back(']');
      if (equal_durs) out += duration_suffix(notes[i]->dur_ticks);
    }
    cursor = std::max(cursor, onset + min_dur);
    i = j;
  }
  return out;
}

}  // namespace abc_detail

// Render the first max_bars bars (window the score with slice_bars first for
// other ranges). Patch 0 is the header.
inline AbcResult to_abc_interleaved(const ScoreIR& score, int max_bars) {
  if (max_bars < 0 || max_bars > kMaxWindowBars)
    throw ValidationError("max_bars must be in [0," + std::to_string(kMaxWindowBars) + "]");
  AbcResult result;

  auto push_patch = [&](std::string text, int bar_index) {
    if (static_cast<int>(text.size()) > kPatchLen) {
      result.lossiness.push_back({bar_index, static_cast<int>(text.size())});
      text.resize(kPatchLen);
    } else {
      text.append(static_cast<std::size_t>(kPatchLen) - text.size(), kPadChar);
    }
    result.patches.push_back(std::move(text));
  };

  TimeSig initial = score.bar_count > 0 ? sig_for_bar(score, 0) : TimeSig{0, 4, 4};
  push_patch("M:" + std::to_string(initial.num) + "/" + std::to_string(initial.den) +
                 " K:" + abc_detail::key_name(score.initial_key_fifths) + " L:1/4",
             -1);

  int bars = std::min(score.bar_count, max_bars);
  std::vector<std::vector<const ScoreNote*>> by_bar(static_cast<std::size_t>(bars));
  for (const auto& n : score.notes)
    if (n.bar_index < bars) by_bar[static_cast<std::size_t>(n.bar_index)].push_back(&n);

  for (int b = 0; b < bars; ++b) {
    std::vector<std::string> parts;
    for (const auto& r : score.repeats) {
      if (r.bar_index != b) continue;
      if (r.kind == RepeatKind::Forward) parts.push_back("|:");
      if (r.kind == RepeatKind::VoltaStart) parts.push_back("[" + std::to_string(r.volta));
    }
    if (b > 0) {
      for (const auto& ts : score.time_sigs)
        if (ts.bar_index == b)
          parts.push_back("M:" + std::to_string(ts.num) + "/" + std::to_string(ts.den));
    }
    for (const auto& a : score.annotations)
      if (a.bar_index == b && !a.text.empty()) parts.push_back(a.text);

    // Voices in ascending id, joined with '&'.
    std::vector<int> voices;
    for (const ScoreNote* n : by_bar[static_cast<std::size_t>(b)])
      if (std::find(voices.begin(), voices.end(), n->voice) == voices.end())
        voices.push_back(n->voice);
    std::sort(voices.begin(), voices.end());
    std::string body;
    for (std::size_t vi = 0; vi < voices.size(); ++vi) {
      std::vector<const ScoreNote*> vn;
      for (const ScoreNote* n : by_bar[static_cast<std::size_t>(b)])
        if (n->voice == voices[vi]) vn.push_back(n);
      if (vi) body += " & ";
      body += abc_detail::render_voice(vn);
    }
    if (!body.empty()) parts.push_back(body);

    bool backward = false;
    for (const auto& r : score.repeats)
      if (r.bar_index == b && r.kind == RepeatKind::Backward) backward = true;
    parts.push_back(backward ? ":|" : "|");

    std::string text;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) text.push_back(' ');
      text += parts[i];
    }
    push_patch(std::move(text), b);
  }
  return result;
}

inline nlohmann::json to_json(const AbcResult& r) {
  nlohmann::json j;
  j["patches"] = r.patches;
  j["lossiness"] = nlohmann::json::array();
  for (const auto& e : r.lossiness)
    j["lossiness"].push_back({{"bar", e.bar_index}, {"rendered_len", e.rendered_len}});
  return j;
}

inline AbcResult abc_from_json(const nlohmann::json& j) {
  AbcResult r;
  try {
    for (const auto& p : j.at("patches")) r.patches.push_back(p.get<std::string>());
    if (j.contains("lossiness"))
      for (const auto& e : j.at("lossiness"))
        r.lossiness.push_back({e.at("bar").get<int>(), e.at("rendered_len").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ABC patches JSON: ") + e.what());
  }
  for (const auto& p : r.patches)
    if (p.size() != kPatchLen) throw ValidationError("bar patch is not exactly 64 bytes");
  return r;
}

}  // namespace scoreperf::score_ir
