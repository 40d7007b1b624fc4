#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "scoreperf/analysis.hpp"
#include "scoreperf/synth.hpp"

using namespace scoreperf;
using namespace scoreperf::analysis;
using scoreperf::tokenizer::AlignRecord;
using scoreperf::tokenizer::Op;
using scoreperf::tokenizer::ScoreRef;

namespace {

AlignRecord match_rec(int perf_index, int score_index, int pitch, double onset) {
  AlignRecord r;
  r.op = Op::Match;
  r.perf = PerfNote{onset, 0.25, pitch, 64};
  r.perf_index = perf_index;
  ScoreRef ref;
  ref.index = score_index;
  ref.linear_bar = score_index / 4;
  ref.pos_ticks = (score_index % 4) * 320;
  ref.dur_ticks = 320;
  ref.pitch = pitch;
  r.score = ref;
  return r;
}

AlignRecord insert_rec(int perf_index, int pitch, double onset) {
  AlignRecord r;
  r.op = Op::Insert;
  r.perf = PerfNote{onset, 0.25, pitch, 64};
  r.perf_index = perf_index;
  return r;
}

AlignRecord delete_rec(int score_index, int pitch) {
  AlignRecord r;
  r.op = Op::Delete;
  ScoreRef ref;
  ref.index = score_index;
  ref.linear_bar = score_index / 4;
  ref.pos_ticks = (score_index % 4) * 320;
  ref.dur_ticks = 320;
  ref.pitch = pitch;
  r.score = ref;
  return r;
}

}  // namespace

TEST_CASE("derive_mistakes partitions records", "[analysis]") {
  std::vector<AlignRecord> all_match = {match_rec(0, 0, 60, 0.0), match_rec(1, 1, 62, 0.5)};
  auto clean = derive_mistakes(all_match);
  CHECK(clean.correct.size() == 2);
  CHECK(clean.extra.empty());
  CHECK(clean.missed.empty());

  auto one_extra = derive_mistakes({insert_rec(0, 61, 0.2)});
  CHECK(one_extra.extra.size() == 1);

  // mixed fixture: 3 correct, 1 extra, 2 missed
  std::vector<AlignRecord> mixed = {match_rec(0, 0, 60, 0.0),  insert_rec(1, 61, 0.2),
                                    match_rec(2, 1, 62, 0.5),  delete_rec(2, 64),
                                    match_rec(3, 3, 65, 1.0),  delete_rec(4, 67)};
  auto report = derive_mistakes(mixed);
  CHECK(report.correct.size() == 3);
  CHECK(report.extra.size() == 1);
  CHECK(report.missed.size() == 2);
}

TEST_CASE("f_align is exactly 1 on identical records", "[analysis]") {
  Rng rng(3);
  auto rr = testutil::random_records(rng, 25);
  auto m = f_align(rr.records, rr.records);
  CHECK(m.f1 == 1.0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.tp == static_cast<long long>(rr.records.size()));
}

TEST_CASE("f_align hand fixture: one Match flipped to Insert+Delete", "[analysis]") {
  // truth: 8 Match + 1 Insert + 1 Delete = 10 records
  std::vector<AlignRecord> truth;
  for (int i = 0; i < 8; ++i) truth.push_back(match_rec(i, i, 60 + i, 0.25 * i));
  truth.push_back(insert_rec(8, 80, 2.0));
  truth.push_back(delete_rec(8, 81));
  // pred: Match #5 flipped
  std::vector<AlignRecord> pred;
  for (int i = 0; i < 8; ++i) {
    if (i == 5) {
      pred.push_back(insert_rec(5, 65, 1.25));
      pred.push_back(delete_rec(5, 65));
    } else {
      pred.push_back(match_rec(i, i, 60 + i, 0.25 * i));
    }
  }
  pred.push_back(insert_rec(8, 80, 2.0));
  pred.push_back(delete_rec(8, 81));

  auto m = f_align(pred, truth);
  CHECK(m.tp == 9);
  CHECK(m.fp == 2);
  CHECK(m.fn == 1);
  // P = 9/11, R = 9/10, F = 6/7
  CHECK(m.f1 == Catch::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(m.accuracy == Catch::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("f_align of empty predictions against nonempty truth is 0", "[analysis]") {
  std::vector<AlignRecord> truth = {match_rec(0, 0, 60, 0.0)};
  auto m = f_align({}, truth);
  CHECK(m.f1 == 0.0);
  CHECK(m.fn == 1);
}

TEST_CASE("f_align rejects mismatched universes", "[analysis]") {
  auto a = match_rec(0, 0, 60, 0.0);
  auto b = match_rec(0, 0, 60, 4.0);  // same perf index, different onset
  CHECK_THROWS_AS(f_align({a}, {b}), ValidationError);
  auto c = match_rec(0, 0, 60, 0.0);
  c.score->pos_ticks += 40;  // same score index, different position
  CHECK_THROWS_AS(f_align({a}, {c}), ValidationError);
}

TEST_CASE("f_align distinguishes repeat passes", "[analysis]") {
  // Same source note, different unfolded indices (pass 1 vs pass 2).
  auto a = match_rec(0, 4, 60, 0.0);
  auto b = match_rec(0, 9, 60, 0.0);
  b.score->pass_number = 2;
  b.repeat_flag = true;
  auto m = f_align({a}, {b});
  CHECK(m.tp == 0);
  CHECK(m.f1 == 0.0);
}

// ---------------------------------------------------------------------------
// transcription metrics

TEST_CASE("identical transcription scores perfectly", "[analysis]") {
  std::vector<PerfNote> notes = {{0.0, 0.5, 60, 64}, {1.0, 0.5, 64, 80}, {2.0, 0.5, 67, 96}};
  auto t = transcription_f1(notes, notes);
  CHECK(t.onset.f1 == 1.0);
  CHECK(t.off_vel.f1 == 1.0);
  CHECK(t.mae_vel == 0.0);
}

TEST_CASE("a +60 ms shift breaks onset matching", "[analysis]") {
  std::vector<PerfNote> ref = {{0.0, 0.5, 60, 64}};
  std::vector<PerfNote> est = {{0.060, 0.5, 60, 64}};
  auto t = transcription_f1(est, ref);
  CHECK(t.onset.f1 == 0.0);
  // +40 ms stays inside the tolerance
  est[0].onset_s = 0.040;
  CHECK(transcription_f1(est, ref).onset.f1 == 1.0);
}

TEST_CASE("three-note fixture with one wrong velocity", "[analysis]") {
  // Hand computation: refs min-max scale to (0, 1/2, 1); the least-squares
  // affine fit of est velocities (64, 40, 96) has slope 3/296 and intercept
  // -13/74, fitting (35/74, 17/74, 59/74): every pair misses by > 0.1, so
  // F_off-vel collapses to 0 while onsets all match; MAE_vel = 40/3.
  std::vector<PerfNote> ref = {{0.0, 0.5, 60, 64}, {1.0, 0.5, 64, 80}, {2.0, 0.5, 67, 96}};
  std::vector<PerfNote> est = ref;
  est[1].velocity = 40;
  auto t = transcription_f1(est, ref);
  CHECK(t.onset.f1 == 1.0);
  CHECK(t.off_vel.f1 == 0.0);
  CHECK(t.mae_vel == Catch::Approx(40.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("offset tolerance is max(50 ms, 20% of ref duration)", "[analysis]") {
  std::vector<PerfNote> ref = {{0.0, 2.0, 60, 64}};
  std::vector<PerfNote> est = {{0.0, 2.35, 60, 64}};  // offset error 350 ms < 400 ms
  auto t = transcription_f1(est, ref);
  CHECK(t.off_vel.f1 == 1.0);
  est[0].dur_s = 2.45;  // 450 ms > 400 ms
  CHECK(transcription_f1(est, ref).off_vel.f1 == 0.0);
}

TEST_CASE("empty est and ref count as perfect", "[analysis]") {
  auto t = transcription_f1({}, {});
  CHECK(t.onset.f1 == 1.0);
  CHECK(t.off_vel.f1 == 1.0);
  CHECK(t.mae_vel == 0.0);
}

TEST_CASE("onset matching is a maximum matching, not greedy", "[analysis]") {
  // est0 can match ref0 or ref1; est1 only ref0. Greedy left-to-right would
  // pair est0-ref0 and strand est1; the maximum matching pairs both.
  std::vector<PerfNote> ref = {{0.00, 0.5, 60, 64}, {0.04, 0.5, 60, 64}};
  std::vector<PerfNote> est = {{0.02, 0.5, 60, 64}, {-0.01, 0.5, 60, 64}};
  auto t = transcription_f1(est, ref);
  CHECK(t.onset.tp == 2);
  CHECK(t.onset.f1 == 1.0);
}

// ---------------------------------------------------------------------------
// mistake metrics

TEST_CASE("identical mistake reports score 1 everywhere", "[analysis]") {
  synth::PieceConfig pc;
  pc.mistake_rates = {0.1, 0.1, 0.1};
  auto piece = synth::make_piece(77, pc);
  auto report = derive_mistakes(piece.truth);
  auto m = mistake_metrics(report, report);
  CHECK(m.correct.f1 == 1.0);
  CHECK(m.extra.f1 == 1.0);
  CHECK(m.missed.f1 == 1.0);
  CHECK(m.correct.accuracy == 1.0);
}

TEST_CASE("missing one extra note: hand-computed F and Acc", "[analysis]") {
  MistakeReport truth;
  truth.extra = {{0.0, 0.2, 61, 64}, {1.0, 0.2, 66, 64}};
  MistakeReport pred;
  pred.extra = {{0.0, 0.2, 61, 64}};
  auto m = mistake_metrics(pred, truth);
  CHECK(m.extra.tp == 1);
  CHECK(m.extra.fp == 0);
  CHECK(m.extra.fn == 1);
  CHECK(m.extra.f1 == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.extra.accuracy == Catch::Approx(0.5).epsilon(1e-12));
  // empty classes on both sides stay perfect
  CHECK(m.correct.f1 == 1.0);
  CHECK(m.missed.f1 == 1.0);
}

TEST_CASE("score-side matching keys on (bar, pos, pitch, pass)", "[analysis]") {
  MistakeReport truth, pred;
  ScoreRef a;
  a.linear_bar = 2;
  a.pos_ticks = 320;
  a.pitch = 60;
  a.pass_number = 1;
  ScoreRef b = a;
  b.pass_number = 2;
  truth.missed = {a};
  pred.missed = {b};
  auto m = mistake_metrics(pred, truth);
  CHECK(m.missed.tp == 0);
  CHECK(m.missed.f1 == 0.0);
}

TEST_CASE("metrics are permutation invariant", "[analysis]") {
  Rng rng(12);
  auto rr = testutil::random_records(rng, 30);
  auto shuffled = rr.records;
  rng.shuffle(shuffled);
  auto a = f_align(rr.records, rr.records);
  auto b = f_align(shuffled, rr.records);
  CHECK(a.tp == b.tp);
  CHECK(a.f1 == b.f1);

  std::vector<PerfNote> est, ref;
  for (const auto& r : rr.records)
    if (r.perf) {
      est.push_back(*r.perf);
      ref.push_back(*r.perf);
    }
  auto t1 = transcription_f1(est, ref);
  rng.shuffle(est);
  auto t2 = transcription_f1(est, ref);
  CHECK(t1.onset.f1 == t2.onset.f1);
  CHECK(t1.off_vel.f1 == t2.off_vel.f1);
  CHECK(t1.mae_vel == Catch::Approx(t2.mae_vel).epsilon(1e-12));
}

TEST_CASE("F_on is symmetric under est/ref swap", "[analysis]") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<PerfNote> a, b;
    for (int i = 0; i < 20; ++i) {
      PerfNote n{rng.uniform(0.0, 10.0), rng.uniform(0.05, 1.0),
                 static_cast<int>(rng.range(40, 80)), static_cast<int>(rng.range(1, 127))};
      a.push_back(n);
      if (!rng.chance(0.2)) {
        n.onset_s += rng.uniform(-0.08, 0.08);
        b.push_back(n);
      }
    }
    std::sort(a.begin(), a.end(), perf_ir::perf_note_order);
    std::sort(b.begin(), b.end(), perf_ir::perf_note_order);
    auto fwd = transcription_f1(a, b);
    auto rev = transcription_f1(b, a);
    CHECK(fwd.onset.tp == rev.onset.tp);
    CHECK(fwd.onset.f1 == rev.onset.f1);
  }
}

TEST_CASE("metric results are bit-identical across runs", "[analysis]") {
  Rng rng(99);
  auto rr = testutil::random_records(rng, 40);
  std::vector<PerfNote> est, ref;
  for (const auto& r : rr.records)
    if (r.perf) {
      PerfNote n = *r.perf;
      ref.push_back(n);
      n.onset_s += 0.01;
      n.velocity = std::max(1, n.velocity - 3);
      est.push_back(n);
    }
  auto t1 = transcription_f1(est, ref);
  auto t2 = transcription_f1(est, ref);
  CHECK(t1.onset.f1 == t2.onset.f1);
  CHECK(t1.off_vel.f1 == t2.off_vel.f1);
  CHECK(t1.mae_vel == t2.mae_vel);
}
