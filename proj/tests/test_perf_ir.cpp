#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "scoreperf/perf_ir.hpp"

using namespace scoreperf;
using namespace scoreperf::perf_ir;
using testutil::SmfBuilder;

TEST_CASE("one note at 120 bpm", "[perf_ir]") {
  auto bytes = SmfBuilder(480).note_on(0, 60, 64).note_off(480, 60).build();
  auto result = parse_smf(bytes);
  REQUIRE(result.notes.size() == 1);
  CHECK(result.notes[0].onset_s == Catch::Approx(0.0));
  CHECK(result.notes[0].dur_s == Catch::Approx(0.5));
  CHECK(result.notes[0].pitch == 60);
  CHECK(result.notes[0].velocity == 64);
}

TEST_CASE("empty track parses to no notes", "[perf_ir]") {
  auto bytes = SmfBuilder(480).build();
  CHECK(parse_smf(bytes).notes.empty());
}

TEST_CASE("note-on velocity 0 equals explicit note-off", "[perf_ir]") {
  auto with_off = SmfBuilder(480).note_on(0, 72, 80).note_off(240, 72).build();
  auto with_v0 = SmfBuilder(480).note_on(0, 72, 80).note_off_v0(240, 72).build();
  CHECK(parse_smf(with_off).notes == parse_smf(with_v0).notes);
}

TEST_CASE("tempo changes shift later onsets", "[perf_ir]") {
  // 480 tpq; tempo doubles speed at tick 480: first beat 0.5 s, second 0.25 s.
  auto bytes = SmfBuilder(480)
                   .tempo(0, 500000)
                   .note_on(0, 60, 64)
                   .note_off(480, 60)
                   .tempo(480, 250000)
                   .note_on(480, 62, 64)
                   .note_off(960, 62)
                   .build();
  auto result = parse_smf(bytes);
  REQUIRE(result.notes.size() == 2);
  CHECK(result.notes[1].onset_s == Catch::Approx(0.5));
  CHECK(result.notes[1].dur_s == Catch::Approx(0.25));
}

TEST_CASE("truncated chunk fails with a byte offset", "[perf_ir]") {
  auto bytes = SmfBuilder(480).note_on(0, 60, 64).note_off(480, 60).build();
  bytes.resize(bytes.size() - 6);
  try {
    parse_smf(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.location().find("byte offset") != std::string::npos);
  }
}

TEST_CASE("unmatched note-on closes at the last event with a warning", "[perf_ir]") {
  auto bytes = SmfBuilder(480)
                   .note_on(0, 60, 64)
                   .note_on(240, 64, 70)
                   .note_off(960, 64)
                   .build();
  auto result = parse_smf(bytes);
  REQUIRE(result.notes.size() == 2);
  bool warned = false;
  for (const auto& w : result.warnings)
    if (w.message.find("without note-off") != std::string::npos) warned = true;
  CHECK(warned);
  // pitch 60 closed at the last event tick (960 -> 1.0 s)
  CHECK(result.notes[0].dur_s == Catch::Approx(1.0));
}

TEST_CASE("overlapping same-pitch notes pair FIFO", "[perf_ir]") {
  auto bytes = SmfBuilder(480)
                   .note_on(0, 60, 50)
                   .note_on(240, 60, 90)
                   .note_off(480, 60)
                   .note_off(960, 60)
                   .build();
  auto result = parse_smf(bytes);
  REQUIRE(result.notes.size() == 2);
  // first on pairs with first off
  CHECK(result.notes[0].velocity == 50);
  CHECK(result.notes[0].dur_s == Catch::Approx(0.5));
  CHECK(result.notes[1].velocity == 90);
  CHECK(result.notes[1].dur_s == Catch::Approx(0.75));
}

TEST_CASE("out-of-range pitches are dropped with a warning", "[perf_ir]") {
  auto bytes = SmfBuilder(480).note_on(0, 5, 64).note_off(480, 5).build();
  auto result = parse_smf(bytes);
  CHECK(result.notes.empty());
  REQUIRE_FALSE(result.warnings.empty());
}

// ---------------------------------------------------------------------------
// JSON-lines

TEST_CASE("single JSONL record", "[perf_ir]") {
  auto notes = load_notes_jsonl(R"({"onset_s":0.0,"dur_s":0.5,"pitch":60,"velocity":64})");
  REQUIRE(notes.size() == 1);
  CHECK(notes[0] == PerfNote{0.0, 0.5, 60, 64});
}

TEST_CASE("out-of-order lines come back sorted", "[perf_ir]") {
  std::string text = R"({"onset_s":1.0,"dur_s":0.5,"pitch":60,"velocity":64}
{"onset_s":0.5,"dur_s":0.5,"pitch":72,"velocity":64}
)";
  auto notes = load_notes_jsonl(text);
  REQUIRE(notes.size() == 2);
  CHECK(notes[0].onset_s == 0.5);
  CHECK(notes[1].onset_s == 1.0);
}

TEST_CASE("velocity 0 is rejected with a line number", "[perf_ir]") {
  std::string text = R"({"onset_s":0.0,"dur_s":0.5,"pitch":60,"velocity":64}
{"onset_s":1.0,"dur_s":0.5,"pitch":60,"velocity":0}
)";
  try {
    load_notes_jsonl(text);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.location() == "line 2");
  }
}

TEST_CASE("negative duration is rejected", "[perf_ir]") {
  CHECK_THROWS_AS(load_notes_jsonl(R"({"onset_s":0.0,"dur_s":-0.5,"pitch":60,"velocity":64})"),
                  ValidationError);
}

TEST_CASE("JSONL serialization round-trips bit-exactly", "[perf_ir]") {
  Rng rng(31);
  std::vector<PerfNote> notes;
  for (int i = 0; i < 50; ++i)
    notes.push_back({rng.uniform(0.0, 60.0), rng.uniform(0.001, 3.0),
                     static_cast<int>(rng.range(21, 108)), static_cast<int>(rng.range(1, 127))});
  std::string first = to_jsonl(notes);
  std::string second = to_jsonl(load_notes_jsonl(first));
  CHECK(first == second);
}

TEST_CASE("note accounting: matched pairs plus force-closed, minus dropped", "[perf_ir]") {
  auto bytes = SmfBuilder(480)
                   .note_on(0, 60, 64)
                   .note_on(120, 5, 50)   // out of range: dropped
                   .note_off(240, 5)
                   .note_off(480, 60)
                   .note_on(600, 64, 70)  // never closed
                   .build();
  auto result = parse_smf(bytes);
  CHECK(result.matched_pairs == 2);
  CHECK(result.force_closed == 1);
  CHECK(result.dropped == 1);
  CHECK(static_cast<int>(result.notes.size()) ==
        result.matched_pairs + result.force_closed - result.dropped);
}

TEST_CASE("smf parsing is deterministic", "[perf_ir]") {
  auto bytes = SmfBuilder(960)
                   .tempo(0, 420000)
                   .note_on(0, 60, 64)
                   .note_on(10, 64, 60)
                   .note_off(500, 60)
                   .note_off(700, 64)
                   .build();
  auto a = parse_smf(bytes);
  auto b = parse_smf(bytes);
  CHECK(a.notes == b.notes);
  CHECK(to_jsonl(a.notes) == to_jsonl(b.notes));
}
