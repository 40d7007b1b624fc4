#pragma once

// Performance note ingestion: Standard MIDI Files (format 0/1) and a
// JSON-lines note list, both normalized to seconds-domain PerfNote lists.

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/common.hpp"

namespace scoreperf::perf_ir {

constexpr int kPitchMin = 21;
constexpr int kPitchMax = 108;

struct PerfNote {
  double onset_s = 0.0;
  double dur_s = 0.0;
  int pitch = 0;
  int velocity = 0;

  friend bool operator==(const PerfNote&, const PerfNote&) = default;
};

inline bool perf_note_order(const PerfNote& a, const PerfNote& b) {
  return std::tie(a.onset_s, a.pitch, a.dur_s, a.velocity) <
         std::tie(b.onset_s, b.pitch, b.dur_s, b.velocity);
}

struct TempoEvent {
  long long tick = 0;
  int us_per_quarter = 500000;
};

// Tick-to-seconds map. Always anchored at tick 0 (120 bpm default).
class TempoMap {
 public:
  explicit TempoMap(std::vector<TempoEvent> events = {}) {
    for (const auto& e : events) {
      if (!events_.empty() && e.tick == events_.back().tick) {
        events_.back() = e;  // same-tick updates: last wins
      } else {
        events_.push_back(e);
      }
    }
    if (events_.empty() || events_.front().tick != 0)
      events_.insert(events_.begin(), TempoEvent{0, 500000});
  }

  const std::vector<TempoEvent>& events() const { return events_; }

  double seconds_at(long long tick, int ticks_per_quarter) const {
    double seconds = 0.0;
    for (std::size_t i = 0; i < events_.size(); ++i) {
      long long seg_start = events_[i].tick;
      long long seg_end = (i + 1 < events_.size()) ? events_[i + 1].tick : tick;
      if (tick <= seg_start) break;
      long long span = std::min(tick, seg_end) - seg_start;
      seconds += static_cast<double>(span) * events_[i].us_per_quarter /
                 (1e6 * ticks_per_quarter);
      if (tick <= seg_end) break;
    }
    return seconds;
  }

 private:
  std::vector<TempoEvent> events_;
};

struct SmfResult {
  std::vector<PerfNote> notes;  // sorted by (onset_s, pitch)
  std::vector<Warning> warnings;
  TempoMap tempo;
  int ticks_per_quarter = 480;
  // Accounting: notes.size() == matched_pairs + force_closed - dropped.
  int matched_pairs = 0;
  int force_closed = 0;
  int dropped = 0;
};

namespace smf_detail {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::size_t base) : data_(data), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  bool eof() const { return pos_ >= data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::uint8_t u8() {
    if (eof()) fail("unexpected end of track data");
    return data_[pos_++];
  }

  std::uint8_t peek() const {
    if (eof()) fail("unexpected end of track data");
    return data_[pos_];
  }

  std::uint32_t vlq() {
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      value = (value << 7) | (b & 0x7F);
      if (!(b & 0x80)) return value;
    }
    fail("variable-length quantity longer than 4 bytes");
  }

  void skip(std::size_t n) {
    if (remaining() < n) fail("unexpected end of track data");
    pos_ += n;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("SMF: " + msg, "byte offset " + std::to_string(offset()));
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

struct RawEvent {
  long long tick;
  int track;
  long long order;  // global parse order, for stable merging
  std::uint8_t status;
  std::uint8_t pitch;
  std::uint8_t velocity;
};

}  // namespace smf_detail

// Parse an SMF format 0/1 file. Note-on/note-off pairs are matched FIFO per
// (channel, pitch); a note-on with velocity 0 counts as note-off. Notes left
// open at the end of the data are closed at the last event time with a
// warning. Sustain pedal is ignored.
inline SmfResult parse_smf(std::span<const std::uint8_t> data) {
  SmfResult result;
  auto fail = [&](const std::string& msg, std::size_t offset) -> void {
    throw ParseError("SMF: " + msg, "byte offset " + std::to_string(offset));
  };
  auto rd_u16 = [&](std::size_t at) -> std::uint32_t {
    if (at + 2 > data.size()) fail("truncated header", at);
    return (static_cast<std::uint32_t>(data[at]) << 8) | data[at + 1];
  };
  auto rd_u32 = [&](std::size_t at) -> std::uint32_t {
    if (at + 4 > data.size()) fail("truncated chunk length", at);
    return (static_cast<std::uint32_t>(data[at]) << 24) | (static_cast<std::uint32_t>(data[at + 1]) << 16) |
           (static_cast<std::uint32_t>(data[at + 2]) << 8) | data[at + 3];
  };

  if (data.size() < 14 || data[0] != 'M' || data[1] != 'T' || data[2] != 'h' || data[3] != 'd')
    fail("missing MThd header", 0);
  if (rd_u32(4) != 6) fail("unexpected MThd length", 4);
  std::uint32_t format = rd_u16(8);
  std::uint32_t declared_tracks = rd_u16(10);
  std::uint32_t division = rd_u16(12);
  if (format > 1) fail("only SMF format 0 and 1 are supported", 8);
  if (division & 0x8000) fail("SMPTE time division is not supported", 12);
  if (division == 0) fail("zero ticks per quarter", 12);
  result.ticks_per_quarter = static_cast<int>(division);

  std::vector<smf_detail::RawEvent> events;
  std::vector<TempoEvent> tempo_events;
  long long order = 0;
  std::size_t at = 14;
  int track_index = 0;
  while (at < data.size()) {
    if (at + 8 > data.size()) fail("truncated chunk header", at);
    bool is_track = data[at] == 'M' && data[at + 1] == 'T' && data[at + 2] == 'r' && data[at + 3] == 'k';
    std::uint32_t length = rd_u32(at + 4);
    if (at + 8 + length > data.size()) fail("chunk extends past end of file", at);
    if (!is_track) {  // alien chunk: skip per the SMF spec
      at += 8 + length;
      continue;
    }
    smf_detail::ByteReader rd(data.subspan(at + 8, length), at + 8);
    long long tick = 0;
    std::uint8_t running = 0;
    while (!rd.eof()) {
      tick += rd.vlq();
      std::uint8_t status = rd.peek();
      if (status & 0x80) {
        rd.u8();
        if (status < 0xF0) running = status;
      } else {
        if (!(running & 0x80)) rd.fail("data byte without running status");
        status = running;
      }
      if (status == 0xFF) {
        std::uint8_t type = rd.u8();
        std::uint32_t len = rd.vlq();
        if (type == 0x51) {
          if (len != 3) rd.fail("bad tempo meta length");
          int uspq = (rd.u8() << 16);
          uspq |= (rd.u8() << 8);
          uspq |= rd.u8();
          tempo_events.push_back({tick, uspq});
        } else {
          rd.skip(len);
        }
      } else if (status == 0xF0 || status == 0xF7) {
        std::uint32_t len = rd.vlq();
        rd.skip(len);
      } else {
        std::uint8_t hi = status & 0xF0;
        switch (hi) {
          case 0x80:
          case 0x90:
          case 0xA0:
          case 0xB0:
          case 0xE0: {
            std::uint8_t d1 = rd.u8();
            std::uint8_t d2 = rd.u8();
            if (hi == 0x80 || hi == 0x90)
              events.push_back({tick, track_index, order++, status, d1, d2});
            break;
          }
          case 0xC0:
          case 0xD0:
            rd.u8();
            break;
          default:
            rd.fail("unknown status byte");
        }
      }
    }
    at += 8 + length;
    ++track_index;
  }
  if (declared_tracks != static_cast<std::uint32_t>(track_index))
    result.warnings.push_back({"MThd declares " + std::to_string(declared_tracks) +
                                   " tracks but file has " + std::to_string(track_index),
                               "header"});

  std::sort(tempo_events.begin(), tempo_events.end(),
            [](const TempoEvent& a, const TempoEvent& b) { return a.tick < b.tick; });
  result.tempo = TempoMap(tempo_events);

  std::stable_sort(events.begin(), events.end(),
                   [](const smf_detail::RawEvent& a, const smf_detail::RawEvent& b) {
                     return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
                   });

  const int tpq = result.ticks_per_quarter;
  auto to_seconds = [&](long long tick) { return result.tempo.seconds_at(tick, tpq); };

  struct OpenNote {
    long long tick;
    int velocity;
  };
  std::map<std::pair<int, int>, std::deque<OpenNote>> open;  // (channel, pitch) -> FIFO
  long long last_tick = 0;

  auto emit = [&](int pitch, long long on_tick, long long off_tick, int velocity) {
    if (pitch < kPitchMin || pitch > kPitchMax) {
      ++result.dropped;
      result.warnings.push_back({"pitch " + std::to_string(pitch) + " outside [21,108]; dropped",
                                 "tick " + std::to_string(on_tick)});
      return;
    }
    double onset = to_seconds(on_tick);
    double dur = to_seconds(off_tick) - onset;
    if (dur <= 0.0) {
      result.warnings.push_back({"zero-length note clamped to 1 ms", "tick " + std::to_string(on_tick)});
      dur = 0.001;
    }
    result.notes.push_back({onset, dur, pitch, velocity});
  };

  for (const auto& e : events) {
    last_tick = std::max(last_tick, e.tick);
    int channel = e.status & 0x0F;
    bool is_on = (e.status & 0xF0) == 0x90 && e.velocity > 0;
    auto key = std::make_pair(channel, static_cast<int>(e.pitch));
    if (is_on) {
      open[key].push_back({e.tick, e.velocity});
    } else {
      auto it = open.find(key);
      if (it == open.end() || it->second.empty()) continue;  // stray note-off
      OpenNote on = it->second.front();
      it->second.pop_front();
      ++result.matched_pairs;
      emit(e.pitch, on.tick, e.tick, on.velocity);
    }
  }
  for (auto& [key, queue] : open) {
    for (const auto& on : queue) {
      ++result.force_closed;
      result.warnings.push_back({"note-on without note-off; closed at last event time",
                                 "pitch " + std::to_string(key.second) + ", tick " +
                                     std::to_string(on.tick)});
      emit(key.second, on.tick, last_tick, on.velocity);
    }
  }

  std::sort(result.notes.begin(), result.notes.end(), perf_note_order);
  return result;
}

// ---------------------------------------------------------------------------
// JSON-lines note format: one object per line with exactly the fields
// onset_s, dur_s, pitch, velocity.

inline std::vector<PerfNote> load_notes_jsonl(std::string_view text) {
  std::vector<PerfNote> notes;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos
                                                                           : end - pos);
    pos = (end == std::string_view::npos) ? text.size() + 1 : end + 1;
    ++line_no;
    std::string trimmed(line);
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
    if (!trimmed.empty()) trimmed.erase(trimmed.find_last_not_of(" \t\r") + 1);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    nlohmann::json j = nlohmann::json::parse(trimmed, nullptr, false);
    std::string loc = "line " + std::to_string(line_no);
    if (j.is_discarded()) throw ParseError("notes JSONL: malformed JSON", loc);
    PerfNote n;
    try {
      n.onset_s = j.at("onset_s").get<double>();
      n.dur_s = j.at("dur_s").get<double>();
      n.pitch = j.at("pitch").get<int>();
      n.velocity = j.at("velocity").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("notes JSONL: ") + e.what(), loc);
    }
    if (!std::isfinite(n.onset_s) || n.onset_s < 0.0)
      throw ValidationError("onset_s must be finite and >= 0", loc);
    if (!std::isfinite(n.dur_s) || n.dur_s <= 0.0)
      throw ValidationError("dur_s must be positive", loc);
    if (n.pitch < kPitchMin || n.pitch > kPitchMax)
      throw ValidationError("pitch outside [21,108]", loc);
    if (n.velocity < 1 || n.velocity > 127)
      throw ValidationError("velocity outside [1,127]", loc);
    notes.push_back(n);
  }
  std::sort(notes.begin(), notes.end(), perf_note_order);
  return notes;
}

// Canonical serialization: sorted order, shortest round-trip floats. Feeding
// the output back through load_notes_jsonl + to_jsonl is byte-stable.
inline std::string to_jsonl(const std::vector<PerfNote>& notes) {
  std::vector<PerfNote> sorted = notes;
  std::sort(sorted.begin(), sorted.end(), perf_note_order);
  std::string out;
  for (const auto& n : sorted) {
    out += "{\"onset_s\":" + format_double(n.onset_s) + ",\"dur_s\":" + format_double(n.dur_s) +
           ",\"pitch\":" + std::to_string(n.pitch) +
           ",\"velocity\":" + std::to_string(n.velocity) + "}\n";
  }
  return out;
}

}  // namespace scoreperf::perf_ir
