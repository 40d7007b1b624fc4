#pragma once

// Score intermediate representation: a MusicXML subset parsed into bar/tick
// structures, repeat unfolding with pass provenance, and JSON serialization.
//
// Tick base: 320 ticks per quarter note, so a 32nd note is 40 ticks and the
// 4-tick micro step used by the tokenizer is exact.

#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/xml.hpp"

namespace scoreperf::score_ir {

constexpr int kTicksPerQuarter = 320;
constexpr int kPitchMin = 21;   // A0
constexpr int kPitchMax = 108;  // C8

struct ScoreNote {
  int bar_index = 0;  // 0-based
  int pos_ticks = 0;  // from bar start
  int dur_ticks = 0;  // > 0
  int pitch = 0;      // MIDI, piano range
  int voice = 1;

  friend bool operator==(const ScoreNote&, const ScoreNote&) = default;
};

struct TimeSig {
  int bar_index = 0;
  int num = 4;
  int den = 4;

  friend bool operator==(const TimeSig&, const TimeSig&) = default;
};

enum class RepeatKind { Forward, Backward, VoltaStart, VoltaEnd };

inline const char* repeat_kind_name(RepeatKind k) {
  switch (k) {
    case RepeatKind::Forward: return "forward";
    case RepeatKind::Backward: return "backward";
    case RepeatKind::VoltaStart: return "volta_start";
    case RepeatKind::VoltaEnd: return "volta_end";
  }
  return "?";
}

struct RepeatMark {
  RepeatKind kind = RepeatKind::Forward;
  int bar_index = 0;
  int volta = 0;  // 1 or 2 for volta marks, 0 otherwise

  friend bool operator==(const RepeatMark&, const RepeatMark&) = default;
};

// Opaque per-bar text carried through to the ABC rendering (dynamics, pedal,
// key changes). No semantics attached.
struct BarAnnotation {
  int bar_index = 0;
  std::string text;

  friend bool operator==(const BarAnnotation&, const BarAnnotation&) = default;
};

struct ScoreIR {
  int bar_count = 0;
  std::vector<TimeSig> time_sigs;  // changes only; always has a bar-0 entry when bar_count > 0
  std::vector<ScoreNote> notes;    // sorted by (bar, pos, pitch, voice); chords pitch-ascending
  std::vector<RepeatMark> repeats;
  std::vector<BarAnnotation> annotations;
  int initial_key_fifths = 0;  // for the ABC header only

  friend bool operator==(const ScoreIR&, const ScoreIR&) = default;
};

inline long long bar_len_ticks(int num, int den) {
  long long t = 4LL * kTicksPerQuarter * num / den;
  if (4LL * kTicksPerQuarter * num % den != 0)
    throw ValidationError("time signature " + std::to_string(num) + "/" + std::to_string(den) +
                          " does not map to integer ticks");
  return t;
}

inline TimeSig sig_for_bar(const ScoreIR& s, int bar) {
  TimeSig cur{0, 4, 4};
  for (const auto& ts : s.time_sigs) {
    if (ts.bar_index > bar) break;
    cur = ts;
  }
  cur.bar_index = bar;
  return cur;
}

inline long long bar_len_ticks(const ScoreIR& s, int bar) {
  TimeSig ts = sig_for_bar(s, bar);
  return bar_len_ticks(ts.num, ts.den);
}

// Tick offset of the start of each bar, plus one trailing entry with the
// total length.
inline std::vector<long long> bar_start_ticks(const ScoreIR& s) {
  std::vector<long long> out(static_cast<std::size_t>(s.bar_count) + 1, 0);
  for (int b = 0; b < s.bar_count; ++b)
    out[static_cast<std::size_t>(b) + 1] = out[static_cast<std::size_t>(b)] + bar_len_ticks(s, b);
  return out;
}

struct ParseResult {
  ScoreIR score;
  std::vector<Warning> warnings;
};

namespace detail {

inline int pitch_to_midi(const xml::Node& pitch, int line) {
  static const std::map<std::string, int> steps = {{"C", 0}, {"D", 2}, {"E", 4}, {"F", 5},
                                                   {"G", 7}, {"A", 9}, {"B", 11}};
  const xml::Node* step = pitch.child("step");
  const xml::Node* octave = pitch.child("octave");
  if (!step || !octave)
    throw ParseError("note pitch missing step/octave", "line " + std::to_string(line));
  auto it = steps.find(xml::trimmed(step->text));
  if (it == steps.end())
    throw ParseError("bad pitch step '" + step->text + "'", "line " + std::to_string(line));
  int alter = 0;
  if (const xml::Node* a = pitch.child("alter")) alter = xml::int_text(*a);
  return (xml::int_text(*octave) + 1) * 12 + it->second + alter;
}

struct PendingTie {
  std::size_t note_index;  // into ScoreIR::notes
};

}  // namespace detail

// Parse an uncompressed score-partwise MusicXML document.
//
// Supported: multiple parts merged on one bar timeline, divisions rescaling
// (exact rational only), chords, rests, ties, backup/forward, time
// signatures, repeat barlines and first/second endings, dynamics and pedal
// as opaque annotations. Grace notes, unsupported tuplet durations and
// out-of-range pitches are skipped with a note-level warning.
inline ParseResult parse_musicxml(std::string_view document) {
  ParseResult result;
  ScoreIR& score = result.score;
  xml::Node root = xml::parse(document);
  if (root.name == "score-timewise")
    throw ParseError("score-timewise documents are not supported; export score-partwise");
  if (root.name != "score-partwise")
    throw ParseError("expected a score-partwise MusicXML document, got <" + root.name + ">");

  auto warn = [&](std::string msg, std::string loc) {
    result.warnings.push_back({std::move(msg), std::move(loc)});
  };

  std::map<int, TimeSig> sig_by_bar;
  std::set<std::pair<RepeatKind, int>> seen_marks;
  std::map<int, std::string> annotation_by_bar;
  bool first_part = true;
  int initial_fifths = 0;
  bool have_initial_key = false;

  for (const xml::Node* part : root.all("part")) {
    long long divisions = 0;  // ticks per quarter in the document's own units
    // Open ties keyed by (voice, pitch).
    std::map<std::pair<int, int>, detail::PendingTie> open_ties;
    int bar_index = -1;
    auto measures = part->all("measure");
    score.bar_count = std::max(score.bar_count, static_cast<int>(measures.size()));

    for (const xml::Node* measure : measures) {
      ++bar_index;
      std::string bar_loc = "measure " + std::to_string(bar_index + 1);
      long long cursor_div = 0;     // position within the bar, in document divisions
      long long prev_onset_div = 0; // onset of the previous real note, for <chord/>
      bool bar_has_sig = false;

      auto to_ticks = [&](long long div_value, const char* what,
                          int line) -> std::optional<long long> {
        if (divisions <= 0) {
          warn("note before <divisions>; skipped", bar_loc + ", line " + std::to_string(line));
          return std::nullopt;
        }
        long long scaled = div_value * kTicksPerQuarter;
        if (scaled % divisions != 0) {
          warn(std::string(what) + " not representable on the 320-ticks-per-quarter grid; skipped",
               bar_loc + ", line " + std::to_string(line));
          return std::nullopt;
        }
        return scaled / divisions;
      };

      for (const xml::Node& el : measure->children) {
        if (el.name == "attributes") {
          if (const xml::Node* d = el.child("divisions")) {
            long long nd = xml::int_text(*d);
            if (nd <= 0) throw ParseError("divisions must be positive", "line " + std::to_string(d->line));
            if (divisions > 0 && cursor_div > 0) {
              // Rescale the in-bar cursor to the new division unit.
              if ((cursor_div * nd) % divisions != 0)
                throw ParseError("divisions change not exactly representable",
                                 "line " + std::to_string(d->line));
              cursor_div = cursor_div * nd / divisions;
            }
            divisions = nd;
          }
          if (const xml::Node* t = el.child("time")) {
            const xml::Node* beats = t->child("beats");
            const xml::Node* beat_type = t->child("beat-type");
            if (beats && beat_type) {
              if (bar_has_sig)
                warn("second time signature in one bar; keeping the last", bar_loc);
              bar_has_sig = true;
              if (first_part)
                sig_by_bar[bar_index] = {bar_index, xml::int_text(*beats), xml::int_text(*beat_type)};
            }
          }
          if (const xml::Node* k = el.child("key")) {
            if (const xml::Node* f = k->child("fifths")) {
              int fifths = xml::int_text(*f);
              if (!have_initial_key && bar_index == 0) {
                initial_fifths = fifths;
                have_initial_key = true;
              }
              // key changes after bar 0 are not carried (opaque-key policy)
            }
          }
        } else if (el.name == "note") {
          bool is_chord = el.child("chord") != nullptr;
          bool is_rest = el.child("rest") != nullptr;
          bool is_grace = el.child("grace") != nullptr;
          const xml::Node* dur_el = el.child("duration");
          std::string loc = bar_loc + ", line " + std::to_string(el.line);

          if (is_grace) {
            warn("grace note unsupported; skipped", loc);
            continue;  // grace notes carry no duration
          }
          if (!dur_el) {
            warn("note without duration; skipped", loc);
            continue;
          }
          long long dur_div = xml::int_text(*dur_el);
          long long onset_div = is_chord ? prev_onset_div : cursor_div;
          if (!is_chord) {
            prev_onset_div = cursor_div;
            cursor_div += dur_div;
          }
          if (is_rest) continue;

          auto pos_ticks = to_ticks(onset_div, "note position", el.line);
          auto dur_ticks = to_ticks(dur_div, "note duration", el.line);
          if (!pos_ticks || !dur_ticks) continue;
          if (*dur_ticks <= 0) {
            warn("non-positive note duration; skipped", loc);
            continue;
          }

          const xml::Node* pitch_el = el.child("pitch");
          if (!pitch_el) {
            warn("unpitched note unsupported; skipped", loc);
            continue;
          }
          int midi = detail::pitch_to_midi(*pitch_el, el.line);
          if (midi < kPitchMin || midi > kPitchMax) {
            warn("pitch " + std::to_string(midi) + " outside piano range [21,108]; rejected", loc);
            continue;
          }
          int voice = 1;
          if (const xml::Node* v = el.child("voice")) voice = xml::int_text(*v);

          TimeSig active{0, 4, 4};
          for (const auto& [sb, sv] : sig_by_bar) {
            if (sb > bar_index) break;
            active = sv;
          }
          long long blen = bar_len_ticks(active.num, active.den);
          if (*pos_ticks < 0 || *pos_ticks >= blen) {
            warn("note position outside its bar; skipped", loc);
            continue;
          }

          bool tie_start = false, tie_stop = false;
          for (const xml::Node& t : el.children) {
            if (t.name == "tie") {
              if (const std::string* ty = t.attr("type")) {
                if (*ty == "start") tie_start = true;
                if (*ty == "stop") tie_stop = true;
              }
            }
          }

          auto key = std::make_pair(voice, midi);
          if (tie_stop) {
            auto it = open_ties.find(key);
            if (it != open_ties.end()) {
              score.notes[it->second.note_index].dur_ticks += static_cast<int>(*dur_ticks);
              if (tie_start) {
                // chained tie: keep the same origin open
              } else {
                open_ties.erase(it);
              }
              continue;
            }
            warn("tie stop without a matching start; treated as a plain note", loc);
          }
          ScoreNote n{bar_index, static_cast<int>(*pos_ticks), static_cast<int>(*dur_ticks), midi,
                      voice};
          score.notes.push_back(n);
          if (tie_start) open_ties[key] = {score.notes.size() - 1};
        } else if (el.name == "backup") {
          if (const xml::Node* d = el.child("duration")) cursor_div -= xml::int_text(*d);
        } else if (el.name == "forward") {
          if (const xml::Node* d = el.child("duration")) cursor_div += xml::int_text(*d);
        } else if (el.name == "direction") {
          if (!first_part) continue;
          for (const xml::Node& dt : el.children) {
            if (dt.name != "direction-type") continue;
            for (const xml::Node& item : dt.children) {
              if (item.name == "dynamics" && !item.children.empty()) {
                annotation_by_bar[bar_index] += "!" + item.children.front().name + "!";
              } else if (item.name == "pedal") {
                const std::string* ty = item.attr("type");
                annotation_by_bar[bar_index] +=
                    (ty && *ty == "stop") ? "!ped-up!" : "!ped!";
              }
            }
          }
        } else if (el.name == "barline") {
          if (!first_part) continue;
          for (const xml::Node& b : el.children) {
            if (b.name == "repeat") {
              const std::string* dir = b.attr("direction");
              if (!dir) continue;
              RepeatKind kind;
              if (*dir == "forward") kind = RepeatKind::Forward;
              else if (*dir == "backward") kind = RepeatKind::Backward;
              else {
                warn("repeat direction '" + *dir + "' unsupported; ignored", bar_loc);
                continue;
              }
              if (seen_marks.insert({kind, bar_index}).second)
                score.repeats.push_back({kind, bar_index, 0});
            } else if (b.name == "ending") {
              const std::string* num = b.attr("number");
              const std::string* type = b.attr("type");
              if (!num || !type) continue;
              int volta = 0;
              try {
                volta = std::stoi(*num);
              } catch (...) {
                volta = 0;
              }
              if (volta != 1 && volta != 2) {
                warn("ending number '" + *num + "' unsupported (only 1 and 2); ignored", bar_loc);
                continue;
              }
              RepeatKind kind = (*type == "start") ? RepeatKind::VoltaStart : RepeatKind::VoltaEnd;
              if (seen_marks.insert({kind, bar_index}).second)
                score.repeats.push_back({kind, bar_index, volta});
            }
          }
        }
        // Everything else (print, sound, harmony, ...) is ignored.
      }
    }

    if (!open_ties.empty())
      warn(std::to_string(open_ties.size()) + " tie(s) left open at end of part", "part end");
    first_part = false;
  }

  for (auto& [bar, sig] : sig_by_bar) score.time_sigs.push_back(sig);
  if (score.bar_count > 0 && (score.time_sigs.empty() || score.time_sigs.front().bar_index != 0))
    score.time_sigs.insert(score.time_sigs.begin(), TimeSig{0, 4, 4});
  score.initial_key_fifths = have_initial_key ? initial_fifths : 0;
  for (auto& [bar, text] : annotation_by_bar)
    score.annotations.push_back({bar, text});

  std::sort(score.notes.begin(), score.notes.end(), [](const ScoreNote& a, const ScoreNote& b) {
    return std::tie(a.bar_index, a.pos_ticks, a.pitch, a.voice, a.dur_ticks) <
           std::tie(b.bar_index, b.pos_ticks, b.pitch, b.voice, b.dur_ticks);
  });
  std::sort(score.repeats.begin(), score.repeats.end(),
            [](const RepeatMark& a, const RepeatMark& b) {
              return std::tie(a.bar_index, a.kind) < std::tie(b.bar_index, b.kind);
            });
  return result;
}

// ---------------------------------------------------------------------------
// Repeat unfolding

struct LinearBar {
  int linear_index = 0;
  int source_index = 0;
  int pass_number = 1;  // occurrence count of source_index in the linear sequence

  friend bool operator==(const LinearBar&, const LinearBar&) = default;
};

struct UnfoldedNote {
  int linear_bar = 0;
  int source_bar = 0;
  int pass_number = 1;
  int pos_ticks = 0;
  int dur_ticks = 0;
  int pitch = 0;
  int voice = 1;

  friend bool operator==(const UnfoldedNote&, const UnfoldedNote&) = default;
};

struct UnfoldedScore {
  std::vector<LinearBar> bars;
  std::vector<UnfoldedNote> notes;  // grouped by linear bar, (pos, pitch, voice) within a bar
  std::vector<TimeSig> time_sigs;   // changes along the LINEAR sequence (bar_index is linear)

  friend bool operator==(const UnfoldedScore&, const UnfoldedScore&) = default;
};

inline long long linear_bar_len_ticks(const UnfoldedScore& u, const ScoreIR& src, int linear_bar) {
  return bar_len_ticks(src, u.bars[static_cast<std::size_t>(linear_bar)].source_index);
}

// Follow forward/backward repeat marks with first/second endings. A backward
// mark with no preceding forward mark repeats from bar 0. One level of
// nesting only; volta numbers 1 and 2 only.
inline UnfoldedScore unfold_repeats(const ScoreIR& score) {
  const int B = score.bar_count;
  std::vector<bool> fwd(static_cast<std::size_t>(B), false), bwd(static_cast<std::size_t>(B), false);
  std::vector<int> volta_start(static_cast<std::size_t>(B), 0), volta_end(static_cast<std::size_t>(B), 0);
  for (const auto& m : score.repeats) {
    if (m.bar_index < 0 || m.bar_index >= B)
      throw ValidationError("repeat mark at bar " + std::to_string(m.bar_index) +
                            " outside the score");
    switch (m.kind) {
      case RepeatKind::Forward: fwd[static_cast<std::size_t>(m.bar_index)] = true; break;
      case RepeatKind::Backward: bwd[static_cast<std::size_t>(m.bar_index)] = true; break;
      case RepeatKind::VoltaStart:
        if (m.volta != 1 && m.volta != 2) throw ValidationError("volta number must be 1 or 2");
        volta_start[static_cast<std::size_t>(m.bar_index)] = m.volta;
        break;
      case RepeatKind::VoltaEnd:
        if (m.volta != 1 && m.volta != 2) throw ValidationError("volta number must be 1 or 2");
        volta_end[static_cast<std::size_t>(m.bar_index)] = m.volta;
        break;
    }
  }

  // Nesting check: an explicit forward while another explicit section is open.
  int depth = 0;
  for (int b = 0; b < B; ++b) {
    if (fwd[static_cast<std::size_t>(b)]) {
      if (++depth > 1)
        throw ValidationError("nested repeats are unsupported", "bar " + std::to_string(b));
    }
    if (bwd[static_cast<std::size_t>(b)] && depth > 0) --depth;
  }

  // Volta regions: start/end pairs with matching numbers.
  struct VoltaRegion {
    int number;
    int first;
    int last;
  };
  std::vector<VoltaRegion> regions;
  {
    int open_number = 0, open_bar = -1;
    for (int b = 0; b < B; ++b) {
      if (volta_start[static_cast<std::size_t>(b)]) {
        if (open_number != 0)
          throw ValidationError("overlapping volta sections", "bar " + std::to_string(b));
        open_number = volta_start[static_cast<std::size_t>(b)];
        open_bar = b;
      }
      if (volta_end[static_cast<std::size_t>(b)]) {
        if (open_number == 0 || volta_end[static_cast<std::size_t>(b)] != open_number)
          throw ValidationError("volta end without matching start", "bar " + std::to_string(b));
        regions.push_back({open_number, open_bar, b});
        open_number = 0;
      }
    }
    if (open_number != 0) throw ValidationError("volta section left open");
  }
  auto region_at = [&](int bar) -> const VoltaRegion* {
    for (const auto& r : regions)
      if (bar >= r.first && bar <= r.last) return &r;
    return nullptr;
  };

  UnfoldedScore out;
  std::vector<int> occurrences(static_cast<std::size_t>(B), 0);
  std::vector<bool> taken(static_cast<std::size_t>(B), false);  // backward marks already jumped
  int b = 0, anchor = 0, section_pass = 1;
  bool just_jumped = false;  // re-entering the anchor bar must not reset the pass
  long long guard = 0;
  while (b < B) {
    if (++guard > 4LL * B + 16)
      throw ValidationError("repeat structure does not terminate (unreachable anchor or cycle)");
    if (const VoltaRegion* r = region_at(b)) {
      if (r->number != section_pass) {
        b = r->last + 1;
        continue;
      }
    }
    if (fwd[static_cast<std::size_t>(b)]) {
      anchor = b;
      if (!just_jumped) section_pass = 1;
    }
    just_jumped = false;
    int pass = ++occurrences[static_cast<std::size_t>(b)];
    out.bars.push_back({static_cast<int>(out.bars.size()), b, pass});
    if (bwd[static_cast<std::size_t>(b)]) {
      if (!taken[static_cast<std::size_t>(b)]) {
        taken[static_cast<std::size_t>(b)] = true;
        if (anchor > b)
          throw ValidationError("backward repeat with no reachable forward anchor",
                                "bar " + std::to_string(b));
        section_pass = 2;
        b = anchor;
        just_jumped = true;
        continue;
      }
      section_pass = 1;
    }
    if (const VoltaRegion* r = region_at(b); r && r->last == b && r->number == 2) section_pass = 1;
    ++b;
  }

  // Notes per linear bar, byte-identical to the source bar apart from indices.
  std::vector<std::vector<const ScoreNote*>> by_bar(static_cast<std::size_t>(B));
  for (const auto& n : score.notes) by_bar[static_cast<std::size_t>(n.bar_index)].push_back(&n);
  for (const auto& lb : out.bars) {
    for (const ScoreNote* n : by_bar[static_cast<std::size_t>(lb.source_index)]) {
      out.notes.push_back({lb.linear_index, lb.source_index, lb.pass_number, n->pos_ticks,
                           n->dur_ticks, n->pitch, n->voice});
    }
  }

  // Time signature changes along the linear sequence.
  int prev_num = 0, prev_den = 0;
  for (const auto& lb : out.bars) {
    TimeSig s = sig_for_bar(score, lb.source_index);
    if (s.num != prev_num || s.den != prev_den) {
      out.time_sigs.push_back({lb.linear_index, s.num, s.den});
      prev_num = s.num;
      prev_den = s.den;
    }
  }
  return out;
}

// Contiguous source-bar slice with indices rebased to 0. Repeat marks whose
// bar falls outside the slice are dropped.
inline ScoreIR slice_bars(const ScoreIR& s, int first, int count) {
  if (first < 0 || count < 0 || first + count > s.bar_count)
    throw ValidationError("bar slice out of range");
  ScoreIR out;
  out.bar_count = count;
  if (count == 0) return out;
  TimeSig initial = sig_for_bar(s, first);
  initial.bar_index = 0;
  out.time_sigs.push_back(initial);
  for (const auto& ts : s.time_sigs)
    if (ts.bar_index > first && ts.bar_index < first + count)
      out.time_sigs.push_back({ts.bar_index - first, ts.num, ts.den});
  for (const auto& n : s.notes)
    if (n.bar_index >= first && n.bar_index < first + count) {
      ScoreNote c = n;
      c.bar_index -= first;
      out.notes.push_back(c);
    }
  for (const auto& r : s.repeats)
    if (r.bar_index >= first && r.bar_index < first + count) {
      RepeatMark c = r;
      c.bar_index -= first;
      out.repeats.push_back(c);
    }
  for (const auto& a : s.annotations)
    if (a.bar_index >= first && a.bar_index < first + count)
      out.annotations.push_back({a.bar_index - first, a.text});
  return out;
}

// ---------------------------------------------------------------------------
// JSON forms (schemas in docs/FORMATS.md)

inline nlohmann::json to_json(const ScoreIR& s) {
  nlohmann::json j;
  j["bar_count"] = s.bar_count;
  j["time_sigs"] = nlohmann::json::array();
  for (const auto& ts : s.time_sigs)
    j["time_sigs"].push_back({{"bar", ts.bar_index}, {"num", ts.num}, {"den", ts.den}});
  j["notes"] = nlohmann::json::array();
  for (const auto& n : s.notes)
    j["notes"].push_back({{"bar", n.bar_index},
                          {"pos", n.pos_ticks},
                          {"dur", n.dur_ticks},
                          {"pitch", n.pitch},
                          {"voice", n.voice}});
  j["repeats"] = nlohmann::json::array();
  for (const auto& r : s.repeats) {
    nlohmann::json m = {{"kind", repeat_kind_name(r.kind)}, {"bar", r.bar_index}};
    if (r.volta) m["volta"] = r.volta;
    j["repeats"].push_back(m);
  }
  j["annotations"] = nlohmann::json::array();
  for (const auto& a : s.annotations)
    j["annotations"].push_back({{"bar", a.bar_index}, {"text", a.text}});
  j["initial_key_fifths"] = s.initial_key_fifths;
  return j;
}

inline ScoreIR score_from_json(const nlohmann::json& j) {
  ScoreIR s;
  try {
    s.bar_count = j.at("bar_count").get<int>();
    for (const auto& ts : j.at("time_sigs"))
      s.time_sigs.push_back({ts.at("bar").get<int>(), ts.at("num").get<int>(), ts.at("den").get<int>()});
    for (const auto& n : j.at("notes"))
      s.notes.push_back({n.at("bar").get<int>(), n.at("pos").get<int>(), n.at("dur").get<int>(),
                         n.at("pitch").get<int>(), n.value("voice", 1)});
    for (const auto& r : j.at("repeats")) {
      std::string kind = r.at("kind").get<std::string>();
      RepeatMark m;
      m.bar_index = r.at("bar").get<int>();
      m.volta = r.value("volta", 0);
      if (kind == "forward") m.kind = RepeatKind::Forward;
      else if (kind == "backward") m.kind = RepeatKind::Backward;
      else if (kind == "volta_start") m.kind = RepeatKind::VoltaStart;
      else if (kind == "volta_end") m.kind = RepeatKind::VoltaEnd;
      else throw ParseError("unknown repeat kind '" + kind + "'");
      s.repeats.push_back(m);
    }
    if (j.contains("annotations"))
      for (const auto& a : j.at("annotations"))
        s.annotations.push_back({a.at("bar").get<int>(), a.at("text").get<std::string>()});
    s.initial_key_fifths = j.value("initial_key_fifths", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("score IR JSON: ") + e.what());
  }
  return s;
}

inline nlohmann::json to_json(const UnfoldedScore& u) {
  nlohmann::json j;
  j["bars"] = nlohmann::json::array();
  for (const auto& b : u.bars)
    j["bars"].push_back({{"linear", b.linear_index}, {"source", b.source_index}, {"pass", b.pass_number}});
  j["notes"] = nlohmann::json::array();
  for (const auto& n : u.notes)
    j["notes"].push_back({{"linear_bar", n.linear_bar},
                          {"source_bar", n.source_bar},
                          {"pass", n.pass_number},
                          {"pos", n.pos_ticks},
                          {"dur", n.dur_ticks},
                          {"pitch", n.pitch},
                          {"voice", n.voice}});
  j["time_sigs"] = nlohmann::json::array();
  for (const auto& ts : u.time_sigs)
    j["time_sigs"].push_back({{"bar", ts.bar_index}, {"num", ts.num}, {"den", ts.den}});
  return j;
}

inline UnfoldedScore unfolded_from_json(const nlohmann::json& j) {
  UnfoldedScore u;
  try {
    for (const auto& b : j.at("bars"))
      u.bars.push_back({b.at("linear").get<int>(), b.at("source").get<int>(), b.at("pass").get<int>()});
    for (const auto& n : j.at("notes"))
      u.notes.push_back({n.at("linear_bar").get<int>(), n.at("source_bar").get<int>(),
                         n.at("pass").get<int>(), n.at("pos").get<int>(), n.at("dur").get<int>(),
                         n.at("pitch").get<int>(), n.value("voice", 1)});
    for (const auto& ts : j.at("time_sigs"))
      u.time_sigs.push_back({ts.at("bar").get<int>(), ts.at("num").get<int>(), ts.at("den").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("unfolded score JSON: ") + e.what());
  }
  return u;
}

}  // namespace scoreperf::score_ir
