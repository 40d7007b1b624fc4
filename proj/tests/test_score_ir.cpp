#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "scoreperf/abc.hpp"
#include "scoreperf/score_ir.hpp"

using namespace scoreperf;
using namespace scoreperf::score_ir;

namespace {

const char* kSingleBar = R"(<?xml version="1.0"?>
<score-partwise>
  <part-list><score-part id="P1"/></part-list>
  <part id="P1">
    <measure number="1">
      <attributes>
        <divisions>4</divisions>
        <time><beats>4</beats><beat-type>4</beat-type></time>
      </attributes>
      <note><pitch><step>C</step><octave>4</octave></pitch><duration>4</duration><voice>1</voice></note>
    </measure>
  </part>
</score-partwise>)";

}  // namespace

TEST_CASE("single 4/4 bar with one quarter C4", "[score_ir]") {
  auto result = parse_musicxml(kSingleBar);
  REQUIRE(result.warnings.empty());
  const ScoreIR& s = result.score;
  REQUIRE(s.bar_count == 1);
  REQUIRE(s.notes.size() == 1);
  CHECK(s.notes[0].bar_index == 0);
  CHECK(s.notes[0].pos_ticks == 0);
  CHECK(s.notes[0].dur_ticks == 320);
  CHECK(s.notes[0].pitch == 60);
  REQUIRE(s.time_sigs.size() == 1);
  CHECK(s.time_sigs[0] == TimeSig{0, 4, 4});
}

TEST_CASE("empty part list", "[score_ir]") {
  auto result = parse_musicxml(
      "<score-partwise><part-list/></score-partwise>");
  CHECK(result.score.bar_count == 0);
  CHECK(result.score.notes.empty());
}

TEST_CASE("tied half notes across a barline merge", "[score_ir]") {
  std::string xml = R"(<?xml version="1.0"?>
<score-partwise><part-list><score-part id="P1"/></part-list><part id="P1">
  <measure number="1">
    <attributes><divisions>2</divisions><time><beats>2</beats><beat-type>4</beat-type></time></attributes>
    <note><pitch><step>G</step><octave>4</octave></pitch><duration>4</duration><voice>1</voice>
      <tie type="start"/></note>
  </measure>
  <measure number="2">
    <note><pitch><step>G</step><octave>4</octave></pitch><duration>4</duration><voice>1</voice>
      <tie type="stop"/></note>
  </measure>
</part></score-partwise>)";
  auto result = parse_musicxml(xml);
  REQUIRE(result.score.notes.size() == 1);
  CHECK(result.score.notes[0].dur_ticks == 1280);
  CHECK(result.score.notes[0].bar_index == 0);
}

TEST_CASE("malformed XML reports the line", "[score_ir]") {
  try {
    parse_musicxml("<score-partwise>\n<part-list>\n<oops></mismatch>\n</score-partwise>");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.location().find("line") != std::string::npos);
  }
}

TEST_CASE("grace notes and out-of-range pitches are skipped with warnings", "[score_ir]") {
  std::string xml = R"(<score-partwise><part-list/><part id="P1">
  <measure number="1">
    <attributes><divisions>1</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>
    <note><grace/><pitch><step>C</step><octave>4</octave></pitch><voice>1</voice></note>
    <note><pitch><step>C</step><octave>0</octave></pitch><duration>1</duration><voice>1</voice></note>
    <note><pitch><step>C</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
  </measure></part></score-partwise>)";
  auto result = parse_musicxml(xml);
  REQUIRE(result.score.notes.size() == 1);
  CHECK(result.score.notes[0].pitch == 60);
  REQUIRE(result.warnings.size() == 2);
  CHECK(result.warnings[0].message.find("grace") != std::string::npos);
  CHECK(result.warnings[1].message.find("outside piano range") != std::string::npos);
}

TEST_CASE("non-representable tuplet durations are skipped per note", "[score_ir]") {
  // divisions=3: a triplet-eighth duration (1 division) maps to 320/3 ticks.
  std::string xml = R"(<score-partwise><part-list/><part id="P1">
  <measure number="1">
    <attributes><divisions>3</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>
    <note><pitch><step>D</step><octave>4</octave></pitch><duration>3</duration><voice>1</voice></note>
    <note><pitch><step>C</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
  </measure></part></score-partwise>)";
  auto result = parse_musicxml(xml);
  REQUIRE(result.score.notes.size() == 1);
  CHECK(result.score.notes[0].pitch == 62);
  CHECK(result.warnings.size() >= 1);
}

TEST_CASE("chords group by shared onset, pitch ascending", "[score_ir]") {
  std::string xml = R"(<score-partwise><part-list/><part id="P1">
  <measure number="1">
    <attributes><divisions>1</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>
    <note><pitch><step>E</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
    <note><chord/><pitch><step>C</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
    <note><chord/><pitch><step>G</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
    <note><pitch><step>A</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
  </measure></part></score-partwise>)";
  auto result = parse_musicxml(xml);
  REQUIRE(result.score.notes.size() == 4);
  CHECK(result.score.notes[0].pitch == 60);
  CHECK(result.score.notes[1].pitch == 64);
  CHECK(result.score.notes[2].pitch == 67);
  CHECK(result.score.notes[0].pos_ticks == 0);
  CHECK(result.score.notes[2].pos_ticks == 0);
  CHECK(result.score.notes[3].pos_ticks == 320);
}

// ---------------------------------------------------------------------------
// unfold_repeats

TEST_CASE("plain repeat around the last bar", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 2;
  s.time_sigs.push_back({0, 4, 4});
  s.notes.push_back({1, 0, 320, 60, 1});
  s.repeats = {{RepeatKind::Forward, 1, 0}, {RepeatKind::Backward, 1, 0}};
  auto u = unfold_repeats(s);
  REQUIRE(u.bars.size() == 3);
  CHECK(u.bars[0].source_index == 0);
  CHECK(u.bars[1].source_index == 1);
  CHECK(u.bars[2].source_index == 1);
  CHECK(u.bars[1].pass_number == 1);
  CHECK(u.bars[2].pass_number == 2);
  REQUIRE(u.notes.size() == 2);
  CHECK(u.notes[0].linear_bar == 1);
  CHECK(u.notes[1].linear_bar == 2);
  CHECK(u.notes[1].pass_number == 2);
  // pass-2 notes are identical copies apart from bar/pass indices
  CHECK(u.notes[0].pos_ticks == u.notes[1].pos_ticks);
  CHECK(u.notes[0].pitch == u.notes[1].pitch);
}

TEST_CASE("no repeat marks unfold to the identity", "[score_ir]") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreIR s = testutil::random_roundtrip_score(rng);
    auto u = unfold_repeats(s);
    REQUIRE(static_cast<int>(u.bars.size()) == s.bar_count);
    for (int b = 0; b < s.bar_count; ++b) {
      CHECK(u.bars[static_cast<std::size_t>(b)].source_index == b);
      CHECK(u.bars[static_cast<std::size_t>(b)].pass_number == 1);
    }
    CHECK(u.notes.size() == s.notes.size());
  }
}

TEST_CASE("volta 1/2 unfolding", "[score_ir]") {
  // bars [A B C D], forward at B, volta1 = C with backward, volta2 = D
  ScoreIR s;
  s.bar_count = 4;
  s.time_sigs.push_back({0, 4, 4});
  s.repeats = {{RepeatKind::Forward, 1, 0},
               {RepeatKind::VoltaStart, 2, 1},
               {RepeatKind::VoltaEnd, 2, 1},
               {RepeatKind::Backward, 2, 0},
               {RepeatKind::VoltaStart, 3, 2},
               {RepeatKind::VoltaEnd, 3, 2}};
  auto u = unfold_repeats(s);
  std::vector<int> sources, passes;
  for (const auto& b : u.bars) {
    sources.push_back(b.source_index);
    passes.push_back(b.pass_number);
  }
  CHECK(sources == std::vector<int>{0, 1, 2, 1, 3});
  CHECK(passes == std::vector<int>{1, 1, 1, 2, 1});
}

TEST_CASE("nested repeats are rejected", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 4;
  s.time_sigs.push_back({0, 4, 4});
  s.repeats = {{RepeatKind::Forward, 0, 0},
               {RepeatKind::Forward, 1, 0},
               {RepeatKind::Backward, 2, 0},
               {RepeatKind::Backward, 3, 0}};
  CHECK_THROWS_AS(unfold_repeats(s), ValidationError);
}

TEST_CASE("backward with no forward repeats from bar 0", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 2;
  s.time_sigs.push_back({0, 4, 4});
  s.repeats = {{RepeatKind::Backward, 1, 0}};
  auto u = unfold_repeats(s);
  std::vector<int> sources;
  for (const auto& b : u.bars) sources.push_back(b.source_index);
  CHECK(sources == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("note conservation under unfolding", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 3;
  s.time_sigs.push_back({0, 4, 4});
  s.notes = {{0, 0, 320, 60, 1}, {1, 0, 320, 62, 1}, {1, 320, 320, 64, 1}, {2, 0, 320, 65, 1}};
  s.repeats = {{RepeatKind::Forward, 1, 0}, {RepeatKind::Backward, 1, 0}};
  auto u = unfold_repeats(s);
  std::size_t expected = 0;
  for (const auto& lb : u.bars)
    for (const auto& n : s.notes)
      if (n.bar_index == lb.source_index) ++expected;
  CHECK(u.notes.size() == expected);
}

TEST_CASE("musicxml round trip on renderer-generated scores", "[score_ir]") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreIR s = testutil::random_roundtrip_score(rng);
    auto result = parse_musicxml(testutil::render_musicxml(s));
    INFO("trial " << trial);
    REQUIRE(result.warnings.empty());
    CHECK(result.score == s);
  }
}

// ---------------------------------------------------------------------------
// ABC bar patches

TEST_CASE("quarter notes render without duration suffixes", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 1;
  s.time_sigs.push_back({0, 4, 4});
  s.notes = {{0, 0, 320, 60, 1}, {0, 320, 320, 62, 1}, {0, 640, 320, 64, 1}, {0, 960, 320, 65, 1}};
  auto abc = to_abc_interleaved(s, 50);
  REQUIRE(abc.patches.size() == 2);  // header + 1 bar
  std::string bar = abc.patches[1];
  std::string expected = "C D E F |";
  CHECK(bar.substr(0, expected.size()) == expected);
  for (std::size_t i = expected.size(); i < bar.size(); ++i) CHECK(bar[i] == kPadChar);
  CHECK(abc.patches[0].substr(0, 15) == "M:4/4 K:C L:1/4");
}

TEST_CASE("repeat glyphs open and close bars", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 2;
  s.time_sigs.push_back({0, 4, 4});
  s.notes = {{0, 0, 1280, 60, 1}, {1, 0, 1280, 64, 1}};
  s.repeats = {{RepeatKind::Forward, 0, 0}, {RepeatKind::Backward, 1, 0}};
  auto abc = to_abc_interleaved(s, 50);
  CHECK(abc.patches[1].substr(0, 2) == "|:");
  CHECK(abc.patches[2].find(":|") != std::string::npos);
}

TEST_CASE("over-long bars truncate with a lossiness entry", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 1;
  s.time_sigs.push_back({0, 4, 4});
  for (int i = 0; i < 16; ++i)
    s.notes.push_back({0, i * 80, 80, 21 + i, 1});  // low pitches need comma octaves
  auto abc = to_abc_interleaved(s, 50);
  REQUIRE(abc.patches.size() == 2);
  CHECK(abc.patches[1].size() == kPatchLen);
  REQUIRE(abc.lossiness.size() == 1);
  CHECK(abc.lossiness[0].bar_index == 0);
  CHECK(abc.lossiness[0].rendered_len > kPatchLen);
}

TEST_CASE("every patch is exactly 64 bytes", "[score_ir]") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreIR s = testutil::random_roundtrip_score(rng);
    auto abc = to_abc_interleaved(s, 50);
    REQUIRE(abc.patches.size() == static_cast<std::size_t>(s.bar_count) + 1);
    for (const auto& p : abc.patches) CHECK(p.size() == kPatchLen);
  }
}

TEST_CASE("rests encode positions and time signatures change inline", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 2;
  s.time_sigs = {{0, 4, 4}, {1, 3, 4}};
  s.notes = {{0, 640, 320, 60, 1}, {1, 0, 960, 62, 1}};
  auto abc = to_abc_interleaved(s, 50);
  CHECK(abc.patches[1].substr(0, 8) == "z2 C |" + std::string(2, kPadChar));
  CHECK(abc.patches[2].substr(0, 5) == "M:3/4");
  CHECK(abc.patches[2].find("D3") != std::string::npos);
}

TEST_CASE("slice_bars rebases indices", "[score_ir]") {
  ScoreIR s;
  s.bar_count = 4;
  s.time_sigs = {{0, 4, 4}, {2, 3, 4}};
  s.notes = {{0, 0, 320, 60, 1}, {2, 0, 320, 64, 1}, {3, 0, 320, 65, 1}};
  auto sliced = slice_bars(s, 2, 2);
  CHECK(sliced.bar_count == 2);
  REQUIRE(sliced.time_sigs.size() == 1);
  CHECK(sliced.time_sigs[0] == TimeSig{0, 3, 4});
  REQUIRE(sliced.notes.size() == 2);
  CHECK(sliced.notes[0].bar_index == 0);
  CHECK(sliced.notes[1].bar_index == 1);
}

TEST_CASE("score IR JSON round trip", "[score_ir]") {
  Rng rng(9);
  ScoreIR s = testutil::random_roundtrip_score(rng);
  s.repeats = {{RepeatKind::Forward, 0, 0}, {RepeatKind::Backward, 0, 0}};
  s.annotations = {{0, "!f!"}};
  CHECK(score_from_json(to_json(s)) == s);
  auto u = unfold_repeats(s);
  CHECK(unfolded_from_json(to_json(u)) == u);
}
