#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "scoreperf/augment.hpp"
#include "scoreperf/synth.hpp"

using namespace scoreperf;
using namespace scoreperf::augment;
using scoreperf::tokenizer::Op;

TEST_CASE("score modulation: ratio 0 is the identity", "[augment]") {
  auto piece = synth::make_piece(1);
  auto out = modulate_score(piece.score, 0.0, 7);
  CHECK(out.score == piece.score);
  CHECK(out.log.edits.empty());
}

TEST_CASE("score modulation edits exactly floor(ratio*N) notes", "[augment]") {
  synth::PieceConfig pc;
  pc.min_bars = 8;
  pc.max_bars = 8;
  pc.min_notes_per_bar = 13;
  pc.max_notes_per_bar = 16;
  Rng rng(5);
  auto score = synth::random_score(rng, pc);
  const int n = static_cast<int>(score.notes.size());
  auto out = modulate_score(score, 0.1, 99);
  CHECK(static_cast<int>(out.log.edits.size()) == n / 10);
  // deletes shrink the note list; shifts keep it
  int deletes = 0;
  for (const auto& e : out.log.edits)
    if (e.kind == ScoreEdit::Kind::Delete) ++deletes;
  CHECK(static_cast<int>(out.score.notes.size()) == n - deletes);
  // note_map is consistent
  for (const auto& e : out.log.edits) {
    if (e.kind == ScoreEdit::Kind::Delete) {
      CHECK(out.log.note_map[static_cast<std::size_t>(e.orig_index)] == -1);
    } else {
      int ni = out.log.note_map[static_cast<std::size_t>(e.orig_index)];
      REQUIRE(ni >= 0);
      CHECK(out.score.notes[static_cast<std::size_t>(ni)].pitch == e.new_pitch);
    }
  }
}

TEST_CASE("score modulation is deterministic per seed", "[augment]") {
  auto piece = synth::make_piece(2);
  auto a = modulate_score(piece.score, 0.2, 1234);
  auto b = modulate_score(piece.score, 0.2, 1234);
  auto c = modulate_score(piece.score, 0.2, 1235);
  CHECK(a.score == b.score);
  CHECK(to_json(a.log).dump() == to_json(b.log).dump());
  CHECK_FALSE(a.score == c.score);
}

TEST_CASE("pitch shifts are nonzero and stay in range", "[augment]") {
  synth::PieceConfig pc;
  pc.min_bars = 6;
  pc.max_bars = 6;
  pc.min_notes_per_bar = 10;
  pc.max_notes_per_bar = 14;
  Rng rng(6);
  auto score = synth::random_score(rng, pc);
  auto out = modulate_score(score, 0.5, 4);
  for (const auto& e : out.log.edits) {
    if (e.kind != ScoreEdit::Kind::Shift) continue;
    CHECK(e.new_pitch >= 21);
    CHECK(e.new_pitch <= 108);
    int delta = e.new_pitch - e.original.pitch;
    CHECK(std::abs(delta) <= 5);
    // mid-range pitches cannot clamp to a zero shift
    if (e.original.pitch >= 26 && e.original.pitch <= 103) CHECK(delta != 0);
  }
}

TEST_CASE("performance modulation: zero rates are the identity", "[augment]") {
  auto piece = synth::make_piece(3);
  auto out = modulate_performance(piece.perf, {0.0, 0.0, 0.0}, 5);
  CHECK(out.perf == piece.perf);
  CHECK(out.log.edits.empty());
}

TEST_CASE("insertion counts follow floor(rate*N)", "[augment]") {
  std::vector<PerfNote> perf;
  Rng rng(8);
  for (int i = 0; i < 200; ++i)
    perf.push_back({0.1 * i, 0.2, static_cast<int>(rng.range(40, 80)),
                    static_cast<int>(rng.range(20, 100))});
  auto out = modulate_performance(perf, {0.05, 0.0, 0.0}, 9);
  CHECK(out.perf.size() == 210);
  int inserts = 0;
  for (const auto& e : out.log.edits)
    if (e.kind == PerfEdit::Kind::Insert) ++inserts;
  CHECK(inserts == 10);
  // inserted pitch offsets are +-1 or +-2 semitones before clamping
  for (const auto& e : out.log.edits) {
    if (e.kind != PerfEdit::Kind::Insert) continue;
    CHECK(std::abs(e.new_pitch - e.old_pitch) <= 2);
  }
}

TEST_CASE("performance modulation rejects rates above 0.3", "[augment]") {
  auto piece = synth::make_piece(4);
  CHECK_THROWS_AS(modulate_performance(piece.perf, {0.5, 0.0, 0.0}, 1), ValidationError);
}

TEST_CASE("performance modulation is deterministic and well-mapped", "[augment]") {
  auto piece = synth::make_piece(10);
  PerfRates rates{0.1, 0.1, 0.1};
  auto a = modulate_performance(piece.perf, rates, 77);
  auto b = modulate_performance(piece.perf, rates, 77);
  CHECK(a.perf == b.perf);
  // every surviving original maps to its note in the output
  for (std::size_t i = 0; i < piece.perf.size(); ++i) {
    int ni = a.log.note_map[i];
    if (ni < 0) continue;
    const auto& out_note = a.perf[static_cast<std::size_t>(ni)];
    CHECK(out_note.onset_s == piece.perf[i].onset_s);
    CHECK(out_note.velocity == piece.perf[i].velocity);
  }
}

// ---------------------------------------------------------------------------
// repeat simulation

TEST_CASE("repeat simulation: probability 0 is the identity", "[augment]") {
  auto piece = synth::make_piece(11);
  auto out = simulate_repeats(piece.score, piece.perf, &piece.truth, 0.0, 5);
  CHECK_FALSE(out.provenance.applied);
  CHECK(out.score == piece.score);
  CHECK(out.perf == piece.perf);
}

TEST_CASE("repeat simulation requires an alignment", "[augment]") {
  auto piece = synth::make_piece(12);
  CHECK_THROWS_AS(simulate_repeats(piece.score, piece.perf, nullptr, 1.0, 5), ValidationError);
}

TEST_CASE("scores that already repeat pass through", "[augment]") {
  auto piece = synth::make_piece(13);
  auto score = piece.score;
  score.repeats = {{score_ir::RepeatKind::Forward, 0, 0}, {score_ir::RepeatKind::Backward, 0, 0}};
  auto out = simulate_repeats(score, piece.perf, &piece.truth, 1.0, 5);
  CHECK_FALSE(out.provenance.applied);
  CHECK(out.provenance.skip_reason == "score already has repeats");
}

TEST_CASE("splice grows the performance by the span's matched notes", "[augment]") {
  auto piece = synth::make_piece(14);
  auto out = simulate_repeats(piece.score, piece.perf, &piece.truth, 1.0, 21);
  REQUIRE(out.provenance.applied);
  CHECK(out.perf.size() == piece.perf.size() + out.provenance.duplicated_perf.size());
  CHECK(out.provenance.second_pass_start > out.provenance.first_pass_start);
  // new score has exactly one forward/backward pair
  int fwd = 0, bwd = 0;
  for (const auto& m : out.score.repeats) {
    fwd += m.kind == score_ir::RepeatKind::Forward;
    bwd += m.kind == score_ir::RepeatKind::Backward;
  }
  CHECK(fwd == 1);
  CHECK(bwd == 1);
}

TEST_CASE("unfolding the simulated score matches the spliced performance", "[augment]") {
  int applied = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto piece = synth::make_piece(300 + seed);
    auto out = simulate_repeats(piece.score, piece.perf, &piece.truth, 1.0, seed);
    if (!out.provenance.applied) continue;
    ++applied;
    auto unfolded = score_ir::unfold_repeats(out.score);
    auto truth = synth::truth_from_repeat(unfolded, out.perf, piece.rendered, out.provenance);
    REQUIRE(truth.size() == out.perf.size());
    // aligned order must be consistent: all Match, duplicates flagged
    auto records = aligner::align_notes(unfolded, out.perf);
    auto m = analysis::f_align(records, truth);
    INFO("seed " << seed);
    CHECK(m.f1 == 1.0);
  }
  CHECK(applied >= 10);
}

TEST_CASE("ground-truth consistency: aligner agrees with the change log", "[augment]") {
  // Aligner output on (score, modulated perf) reproduces the log's implied
  // ops on >= 95% of edited notes at the default rates.
  long long agree = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    synth::PieceConfig pc;
    pc.min_bars = 8;
    pc.max_bars = 10;
    pc.min_notes_per_bar = 5;
    pc.max_notes_per_bar = 8;
    auto piece = synth::make_piece(1000 + seed, pc);
    auto modulated = modulate_performance(piece.rendered.perf, {0.05, 0.05, 0.05}, seed * 3 + 1);
    auto truth = synth::truth_from_perf_log(piece.unfolded, piece.rendered, modulated.perf,
                                            modulated.log);
    auto pred = aligner::align_notes(piece.unfolded, modulated.perf);
    // collect edited note identities from the log
    for (const auto& e : modulated.log.edits) {
      ++total;
      bool found = false;
      switch (e.kind) {
        case PerfEdit::Kind::Insert:
          for (const auto& r : pred)
            if (r.op == Op::Insert && r.perf_index == e.new_index) found = true;
          break;
        case PerfEdit::Kind::Delete:
          for (const auto& r : truth)
            if (r.op == Op::Delete && r.score) {
              // the deleted perf note's score note must be Delete in pred
              for (const auto& p : pred)
                if (p.op == Op::Delete && p.score && p.score->index == r.score->index)
                  found = true;
            }
          break;
        case PerfEdit::Kind::Shift:
          for (const auto& r : pred)
            if (r.op == Op::Insert && r.perf_index == e.new_index) found = true;
          break;
      }
      agree += found ? 1 : 0;
    }
  }
  INFO("agree " << agree << " / " << total);
  CHECK(total > 50);
  CHECK(static_cast<double>(agree) >= 0.95 * static_cast<double>(total));
}
