#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "scoreperf/tokenizer.hpp"

using namespace scoreperf;
using namespace scoreperf::tokenizer;

TEST_CASE("resolved vocabulary sizes", "[tokenizer]") {
  CHECK_NOTHROW(check_vocab());
  CHECK(field_info(Field::PerfT).size == 34);
  CHECK(field_info(Field::PerfTMicro).size == 11);
  CHECK(field_info(Field::PerfDur).size == 49);
  CHECK(field_info(Field::PerfPitch).size == 89);
  CHECK(field_info(Field::ScoreBar).size == 51);
  CHECK(field_info(Field::ScorePos).size == 33);
  CHECK(field_info(Field::AlignOp).size == 4);
}

TEST_CASE("onset quantizer examples", "[tokenizer]") {
  auto q = [](double t, double origin) { return quantize_onset(t, origin); };
  {
    auto o = q(0.0, 0.0);
    CHECK(o.resets == 0);
    CHECK(o.t == 0);
    CHECK(o.micro == 0);
  }
  {
    auto o = q(1.0, 0.0);
    CHECK(o.resets == 0);
    CHECK(o.t == 16);
    CHECK(o.micro == 0);
  }
  {
    auto o = q(0.1, 0.0);
    CHECK(o.resets == 0);
    CHECK(o.t == 2);
    CHECK(o.micro == -4);
  }
  {
    auto o = q(2.3, 0.0);
    CHECK(o.resets == 1);
    CHECK(o.t == 5);
    CHECK(o.micro == -2);
  }
}

TEST_CASE("onset quantizer never produces the reserved boundary", "[tokenizer]") {
  Rng rng(2);
  for (int i = 0; i < 5000; ++i) {
    double t = rng.uniform(0.0, 10.0);
    auto o = quantize_onset(t, 0.0);
    CHECK(o.t <= 31);
    double recon = dequantize_onset(o.resets, o.t, o.micro, 0.0);
    CHECK(std::abs(recon - t) <= 0.003125 + 1e-12);
  }
}

TEST_CASE("velocity quantizer examples", "[tokenizer]") {
  CHECK(quantize_velocity(64) == 16);
  CHECK(quantize_velocity(1) == 1);
  CHECK(quantize_velocity(127) == 32);
  for (int v = 1; v <= 127; ++v)
    CHECK(std::abs(dequantize_velocity(quantize_velocity(v)) - v) <= 2);
}

TEST_CASE("performance duration examples and tiers", "[tokenizer]") {
  CHECK(quantize_duration_perf(0.03125) == 1);
  CHECK(quantize_duration_perf(0.5) == 16);
  CHECK(quantize_duration_perf(10.0) == 47);
  CHECK(dequantize_duration_perf(16) == Catch::Approx(0.5));
  CHECK(dequantize_duration_perf(17) == Catch::Approx(0.5625));
  CHECK(dequantize_duration_perf(47) == Catch::Approx(3.375));
}

TEST_CASE("score duration examples", "[tokenizer]") {
  CHECK(quantize_duration_score(40) == 1);
  CHECK(quantize_duration_score(320) == 8);
  CHECK(quantize_duration_score(5000) == 47);
  CHECK(dequantize_duration_score(47) == 4320);
}

TEST_CASE("score position examples", "[tokenizer]") {
  {
    auto p = quantize_score_position(320);
    CHECK(p.pos == 8);
    CHECK(p.micro == 0);
  }
  {
    auto p = quantize_score_position(0);
    CHECK(p.pos == 0);
    CHECK(p.micro == 0);
  }
  {
    auto p = quantize_score_position(58);  // half-away-from-zero rounding
    CHECK(p.pos == 1);
    CHECK(p.micro == 5);
  }
  CHECK_THROWS_AS(quantize_score_position(1270, 3), ValidationError);
}

TEST_CASE("encode: a single Match around BOS/EOS", "[tokenizer]") {
  AlignRecord r;
  r.op = Op::Match;
  r.perf = perf_ir::PerfNote{0.0, 0.5, 60, 64};
  r.perf_index = 0;
  ScoreRef ref;
  ref.index = 0;
  ref.linear_bar = 0;
  ref.pos_ticks = 0;
  ref.dur_ticks = 320;
  ref.pitch = 60;
  r.score = ref;
  auto steps = encode({r});
  REQUIRE(steps.size() == 3);
  CHECK(steps[0] == bos_step());
  CHECK(steps[2] == eos_step());
  const TriStep& s = steps[1];
  CHECK(static_cast<int>(s[Field::PerfT]) == 1);       // T = 0
  CHECK(static_cast<int>(s[Field::PerfPitch]) == 40);  // 60 - 21 + 1
  CHECK(static_cast<int>(s[Field::ScoreBar]) == 1);
  CHECK(static_cast<int>(s[Field::ScorePitch]) == 40);
  CHECK(s[Field::AlignOp] == static_cast<int>(Op::Match));
  CHECK(classify_step(s, 1) == StepKind::Match);
}

TEST_CASE("Insert skips the score channel, Delete the performance channel", "[tokenizer]") {
  AlignRecord ins;
  ins.op = Op::Insert;
  ins.perf = perf_ir::PerfNote{0.1, 0.2, 61, 80};
  ins.perf_index = 0;
  AlignRecord del;
  del.op = Op::Delete;
  ScoreRef ref;
  ref.index = 0;
  ref.linear_bar = 2;
  ref.pos_ticks = 80;
  ref.dur_ticks = 160;
  ref.pitch = 72;
  del.score = ref;
  auto steps = encode({ins, del});
  REQUIRE(steps.size() == 4);
  CHECK(steps[1][Field::ScoreSkip] == 1);
  CHECK(steps[1][Field::ScorePitch] == 0);
  CHECK(classify_step(steps[1], 1) == StepKind::Insert);
  CHECK(steps[2][Field::PerfSkip] == 1);
  CHECK(steps[2][Field::PerfPitch] == 0);
  CHECK(classify_step(steps[2], 2) == StepKind::Delete);
}

TEST_CASE("decode of [BOS, EOS] is empty", "[tokenizer]") {
  auto decoded = decode({bos_step(), eos_step()});
  CHECK(decoded.perf_notes.empty());
  CHECK(decoded.score_refs.empty());
  CHECK(decoded.records.empty());
}

TEST_CASE("malformed steps raise DecodeError with the step index", "[tokenizer]") {
  // Match step with the performance channel skipped.
  TriStep bad = silent_step();
  bad[Field::AlignOp] = static_cast<int>(Op::Match);
  bad[Field::PerfSkip] = 1;
  bad[Field::ScoreBar] = 1;
  bad[Field::ScorePos] = 1;
  bad[Field::ScoreDur] = 1;
  bad[Field::ScorePitch] = 1;
  try {
    decode({bos_step(), bad, eos_step()});
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(e.step_index() == 1);
  }
  // Missing BOS.
  CHECK_THROWS_AS(decode({eos_step()}), DecodeError);
}

TEST_CASE("repeat flag without a score side is rejected", "[tokenizer]") {
  TriStep bad = silent_step();
  bad[Field::AlignOp] = static_cast<int>(Op::Insert);
  bad[Field::AlignRepeat] = 1;
  bad[Field::ScoreSkip] = 1;
  bad[Field::PerfT] = 1;
  bad[Field::PerfVel] = 10;
  bad[Field::PerfDur] = 5;
  bad[Field::PerfPitch] = 40;
  CHECK_FALSE(step_is_valid(bad));
}

TEST_CASE("encode rejects malformed records and out-of-window bars", "[tokenizer]") {
  AlignRecord no_score;
  no_score.op = Op::Match;
  no_score.perf = perf_ir::PerfNote{0.0, 0.5, 60, 64};
  no_score.perf_index = 0;
  CHECK_THROWS_AS(encode({no_score}), ValidationError);

  AlignRecord bad_flag;
  bad_flag.op = Op::Insert;
  bad_flag.perf = perf_ir::PerfNote{0.0, 0.5, 60, 64};
  bad_flag.perf_index = 0;
  bad_flag.repeat_flag = true;  // no score side
  CHECK_THROWS_AS(encode({bad_flag}), ValidationError);

  AlignRecord far_bar;
  far_bar.op = Op::Delete;
  ScoreRef ref;
  ref.index = 0;
  ref.linear_bar = 50;  // outside the 0..49 window
  ref.pos_ticks = 0;
  ref.dur_ticks = 320;
  ref.pitch = 60;
  far_bar.score = ref;
  CHECK_THROWS_AS(encode({far_bar}), ValidationError);

  AlignRecord unordered_a, unordered_b;
  unordered_a.op = Op::Insert;
  unordered_a.perf = perf_ir::PerfNote{1.0, 0.5, 60, 64};
  unordered_a.perf_index = 0;
  unordered_b.op = Op::Insert;
  unordered_b.perf = perf_ir::PerfNote{0.2, 0.5, 62, 64};
  unordered_b.perf_index = 1;
  CHECK_THROWS_AS(encode({unordered_a, unordered_b}), ValidationError);
}

TEST_CASE("round trip preserves ops, pitches and repeat flags", "[tokenizer]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto rr = testutil::random_records(rng, static_cast<int>(rng.range(1, 40)));
    auto steps = encode(rr.records, rr.timesigs);
    auto decoded = decode(steps);
    REQUIRE(decoded.records.size() == rr.records.size());
    for (std::size_t i = 0; i < rr.records.size(); ++i) {
      const auto& want = rr.records[i];
      const auto& got = decoded.records[i];
      CHECK(got.op == want.op);
      CHECK(got.repeat_flag == want.repeat_flag);
      if (want.perf) {
        REQUIRE(got.perf.has_value());
        CHECK(got.perf->pitch == want.perf->pitch);
        CHECK(std::abs(got.perf->onset_s - want.perf->onset_s) <= 0.003125 + 1e-12);
        CHECK(std::abs(got.perf->velocity - want.perf->velocity) <= 2);
      }
      if (want.score) {
        REQUIRE(got.score.has_value());
        CHECK(got.score->pitch == want.score->pitch);
        CHECK(got.score->linear_bar == want.score->linear_bar);
      }
    }
  }
}

TEST_CASE("exclusive invariant holds on every encoded step", "[tokenizer]") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    auto rr = testutil::random_records(rng, 25);
    auto steps = encode(rr.records, rr.timesigs);
    for (std::size_t i = 0; i < steps.size(); ++i)
      CHECK_NOTHROW(classify_step(steps[i], i));
  }
}

TEST_CASE("reconstructed onsets are non-decreasing", "[tokenizer]") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto rr = testutil::random_records(rng, 30);
    auto decoded = decode(encode(rr.records, rr.timesigs));
    double prev = -1.0;
    for (const auto& n : decoded.perf_notes) {
      CHECK(n.onset_s >= prev - 1e-12);
      prev = n.onset_s;
    }
  }
}

TEST_CASE("sequence length is records + resets + timesigs + 2", "[tokenizer]") {
  Rng rng(19);
  auto rr = testutil::random_records(rng, 40);
  auto steps = encode(rr.records, rr.timesigs);
  std::size_t resets = 0, sigs = 0;
  for (std::size_t i = 1; i + 1 < steps.size(); ++i) {
    auto kind = classify_step(steps[i], i);
    if (kind == StepKind::Reset) ++resets;
    if (kind == StepKind::TimeSig) ++sigs;
  }
  CHECK(steps.size() == rr.records.size() + resets + sigs + 2);
  CHECK(sigs == rr.timesigs.size());
}

TEST_CASE("binary serialization round trip", "[tokenizer]") {
  Rng rng(23);
  auto rr = testutil::random_records(rng, 30);
  auto steps = encode(rr.records, rr.timesigs);
  auto bytes = to_bytes(steps);
  CHECK(from_bytes(bytes) == steps);
  // corrupting a field id out of range is caught
  std::string corrupt = bytes;
  corrupt[12] = char(200);
  CHECK_THROWS_AS(from_bytes(corrupt), ParseError);
  CHECK_THROWS_AS(from_bytes(bytes.substr(0, bytes.size() - 1)), ParseError);
}

TEST_CASE("JSON serialization round trip", "[tokenizer]") {
  Rng rng(29);
  auto rr = testutil::random_records(rng, 20);
  auto steps = encode(rr.records, rr.timesigs);
  CHECK(steps_from_json(to_json(steps)) == steps);
}

TEST_CASE("timesig steps are exclusive score steps", "[tokenizer]") {
  auto rr = testutil::random_records(*std::make_unique<Rng>(31), 5);
  std::vector<TimeSigEvent> sigs = {{0, 6, 8}};
  auto steps = encode(rr.records, sigs);
  bool found = false;
  for (std::size_t i = 1; i + 1 < steps.size(); ++i) {
    if (classify_step(steps[i], i) == StepKind::TimeSig) {
      found = true;
      CHECK(steps[i][Field::ScoreTimeSig] == timesig_id(6, 8));
      CHECK(steps[i][Field::PerfT] == 0);
      CHECK(steps[i][Field::AlignOp] == 0);
    }
  }
  CHECK(found);
}
