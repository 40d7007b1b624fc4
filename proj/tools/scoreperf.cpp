// scoreperf: batch CLI for the score/performance analysis toolkit.
//
// Exit codes: 0 ok, 2 parse error, 3 validation error, 4 internal error.
// With --json-errors, failures also print a machine-readable JSON object on
// stderr. Every file output carries a meta header recording the command,
// arguments and seed, so runs are reproducible from their outputs.

#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scoreperf/scoreperf.hpp"

namespace sp = scoreperf;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool quiet = false;
  bool json_errors = false;
  std::vector<std::string> argv;
};

GlobalOpts g_opts;

json meta_block(const std::string& command) {
  json m;
  m["tool"] = "scoreperf";
  m["command"] = command;
  m["seed"] = g_opts.seed;
  m["args"] = g_opts.argv;
  return m;
}

void say(const std::string& line) {
  if (!g_opts.quiet) std::cout << line << "\n";
}

void write_json(const std::string& path, json j, const std::string& command) {
  j["meta"] = meta_block(command);
  sp::write_file(path, j.dump(2) + "\n");
}

std::vector<sp::perf_ir::PerfNote> load_perf(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".mid") {
    auto bytes = sp::read_file_bytes(path);
    auto result = sp::perf_ir::parse_smf(bytes);
    for (const auto& w : result.warnings)
      if (!g_opts.quiet) std::cerr << "warning: " << w.message << " (" << w.location << ")\n";
    return result.notes;
  }
  return sp::perf_ir::load_notes_jsonl(sp::read_file(path));
}

sp::score_ir::UnfoldedScore load_unfolded(const std::string& path) {
  json j = json::parse(sp::read_file(path), nullptr, false);
  if (j.is_discarded()) throw sp::ParseError("malformed JSON", path);
  if (j.contains("bars")) return sp::score_ir::unfolded_from_json(j);
  // A plain score IR: unfold it on the fly.
  return sp::score_ir::unfold_repeats(sp::score_ir::score_from_json(j));
}

sp::score_ir::ScoreIR load_score_ir(const std::string& path) {
  json j = json::parse(sp::read_file(path), nullptr, false);
  if (j.is_discarded()) throw sp::ParseError("malformed JSON", path);
  return sp::score_ir::score_from_json(j);
}

std::vector<sp::tokenizer::TriStep> load_steps(const std::string& path) {
  std::string data = sp::read_file(path);
  if (data.size() >= 4 && data.compare(0, 4, sp::tokenizer::kBinaryMagic, 4) == 0)
    return sp::tokenizer::from_bytes(data);
  json j = json::parse(data, nullptr, false);
  if (j.is_discarded()) throw sp::ParseError("malformed token stream", path);
  return sp::tokenizer::steps_from_json(j);
}

// Alignment records with payloads resolved when universes are provided.
std::vector<sp::tokenizer::AlignRecord> load_match(const std::string& path,
                                                   const std::string& score_path,
                                                   const std::string& perf_path) {
  auto records = sp::aligner::parse_match_tsv(sp::read_file(path));
  if (!score_path.empty() && !perf_path.empty()) {
    auto unfolded = load_unfolded(score_path);
    auto perf = load_perf(perf_path);
    sp::aligner::resolve_records(records, unfolded, perf);
  }
  return records;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_opts.argv.push_back(argv[i]);

  CLI::App app{"score/performance analysis toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file (flags override its values)");
  app.add_option("--seed", g_opts.seed, "global random seed")->capture_default_str();
  app.add_flag("--quiet", g_opts.quiet, "suppress progress output");
  app.add_flag("--json-errors", g_opts.json_errors, "machine-readable errors on stderr");

  // ---- score ------------------------------------------------------------
  auto* score = app.add_subcommand("score", "score parsing and unfolding");
  score->require_subcommand(1);

  std::string sc_in, sc_out, sc_abc;
  int sc_max_bars = 50;
  auto* convert = score->add_subcommand("convert", "parse MusicXML into score IR + ABC patches");
  convert->add_option("input", sc_in, "MusicXML file")->required();
  convert->add_option("--out", sc_out, "score IR JSON output");
  convert->add_option("--abc", sc_abc, "bar patch JSON output");
  convert->add_option("--max-bars", sc_max_bars, "bars per patch window")->capture_default_str();

  std::string su_in, su_out;
  auto* unfold = score->add_subcommand("unfold", "unfold repeats with provenance");
  unfold->add_option("input", su_in, "score IR JSON")->required();
  unfold->add_option("--out", su_out, "unfolded score JSON output");

  // ---- perf ---------------------------------------------------------------
  auto* perf = app.add_subcommand("perf", "performance ingestion");
  perf->require_subcommand(1);
  std::string pi_in, pi_out;
  auto* pimport = perf->add_subcommand("import", "normalize a .mid or notes .jsonl file");
  pimport->add_option("input", pi_in, "input file")->required();
  pimport->add_option("--out", pi_out, "notes JSONL output");

  // ---- align --------------------------------------------------------------
  std::string al_score, al_perf, al_out;
  double al_gap = 1.0;
  auto* align = app.add_subcommand("align", "DP note alignment -> match TSV");
  align->add_option("score", al_score, "unfolded score JSON (or score IR)")->required();
  align->add_option("perf", al_perf, "performance (.mid or .jsonl)")->required();
  align->add_option("--out", al_out, "match TSV output");
  align->add_option("--gap", al_gap, "gap penalty")->capture_default_str();

  // ---- tokenize / detokenize -----------------------------------------------
  std::string tk_match, tk_score, tk_perf, tk_out;
  int tk_bar_origin = 0;
  auto* tokenize = app.add_subcommand("tokenize", "match TSV -> tri-stream tokens");
  tokenize->add_option("match", tk_match, "match TSV")->required();
  tokenize->add_option("--score", tk_score, "unfolded score JSON")->required();
  tokenize->add_option("--perf", tk_perf, "performance file")->required();
  tokenize->add_option("--out", tk_out, "output .bin or .json")->required();
  tokenize->add_option("--bar-origin", tk_bar_origin, "linear bar mapped to token bar 0")
      ->capture_default_str();

  std::string dt_in, dt_out;
  auto* detokenize = app.add_subcommand("detokenize", "tri-stream tokens -> notes + records");
  detokenize->add_option("input", dt_in, "steps .bin or .json")->required();
  detokenize->add_option("--out", dt_out, "decoded JSON output");

  // ---- mistakes -------------------------------------------------------------
  std::string mk_match, mk_score, mk_perf, mk_out;
  auto* mistakes = app.add_subcommand("mistakes", "derive a mistake report from a match TSV");
  mistakes->add_option("match", mk_match, "match TSV")->required();
  mistakes->add_option("--score", mk_score, "unfolded score JSON (for payloads)");
  mistakes->add_option("--perf", mk_perf, "performance file (for payloads)");
  mistakes->add_option("--out", mk_out, "report JSON output");

  // ---- eval -----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "metric reports");
  eval->require_subcommand(1);
  std::string ev_pred, ev_truth, ev_out;
  auto* ev_align = eval->add_subcommand("align", "alignment F-measure");
  ev_align->add_option("pred", ev_pred, "predicted match TSV")->required();
  ev_align->add_option("truth", ev_truth, "ground-truth match TSV")->required();
  ev_align->add_option("--out", ev_out, "report JSON output");

  std::string et_est, et_ref, et_out;
  auto* ev_trans = eval->add_subcommand("transcription", "onset / offset-velocity F, velocity MAE");
  ev_trans->add_option("est", et_est, "estimated notes (.jsonl or .mid)")->required();
  ev_trans->add_option("ref", et_ref, "reference notes (.jsonl or .mid)")->required();
  ev_trans->add_option("--out", et_out, "report JSON output");

  std::string em_pred, em_truth, em_out, em_score, em_perf, em_tscore, em_tperf;
  auto* ev_mist = eval->add_subcommand("mistakes", "per-class mistake metrics");
  ev_mist->add_option("pred", em_pred, "predicted match TSV")->required();
  ev_mist->add_option("truth", em_truth, "ground-truth match TSV")->required();
  ev_mist->add_option("--score", em_score, "unfolded score for the predicted records");
  ev_mist->add_option("--perf", em_perf, "performance for the predicted records");
  ev_mist->add_option("--truth-score", em_tscore, "unfolded score for the truth records");
  ev_mist->add_option("--truth-perf", em_tperf, "performance for the truth records");
  ev_mist->add_option("--out", em_out, "report JSON output");

  // ---- augment ----------------------------------------------------------------
  auto* augment = app.add_subcommand("augment", "seeded corpus augmentation");
  augment->require_subcommand(1);

  std::string ag_in, ag_out, ag_log;
  double ag_ratio = 0.10;
  auto* ag_score = augment->add_subcommand("score", "pitch-shift or delete a fraction of notes");
  ag_score->add_option("input", ag_in, "score IR JSON")->required();
  ag_score->add_option("--ratio", ag_ratio, "fraction of notes edited")->capture_default_str();
  ag_score->add_option("--out", ag_out, "modulated score IR JSON")->required();
  ag_score->add_option("--log", ag_log, "change log JSON");

  std::string ap_in, ap_out, ap_log;
  double ap_ins = 0.05, ap_del = 0.05, ap_shift = 0.05;
  auto* ag_perf = augment->add_subcommand("perf", "inject symbolic performance mistakes");
  ag_perf->add_option("input", ap_in, "performance file")->required();
  ag_perf->add_option("--insert-rate", ap_ins, "")->capture_default_str();
  ag_perf->add_option("--delete-rate", ap_del, "")->capture_default_str();
  ag_perf->add_option("--shift-rate", ap_shift, "")->capture_default_str();
  ag_perf->add_option("--out", ap_out, "modulated notes JSONL")->required();
  ag_perf->add_option("--log", ap_log, "change log JSON");

  std::string ar_score, ar_perf, ar_match, ar_out_score, ar_out_perf, ar_log;
  double ar_prob = 0.20;
  auto* ag_rep = augment->add_subcommand("repeats", "wrap a bar span in repeats, splice the performance");
  ag_rep->add_option("score", ar_score, "score IR JSON (repeat-free)")->required();
  ag_rep->add_option("perf", ar_perf, "performance file")->required();
  ag_rep->add_option("--match", ar_match, "alignment TSV of score vs perf")->required();
  ag_rep->add_option("--prob", ar_prob, "application probability")->capture_default_str();
  ag_rep->add_option("--out-score", ar_out_score, "output score IR JSON")->required();
  ag_rep->add_option("--out-perf", ar_out_perf, "output notes JSONL")->required();
  ag_rep->add_option("--log", ar_log, "provenance JSON");

  // ---- synth ---------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "synthetic data");
  synth_cmd->require_subcommand(1);
  std::string sy_out;
  int sy_n = 50, sy_workers = 1, sy_min_bars = 2, sy_max_bars = 4;
  double sy_ins = 0.05, sy_del = 0.05, sy_shift = 0.05;
  auto* sy_corpus = synth_cmd->add_subcommand("corpus", "end-to-end synthetic training corpus");
  sy_corpus->add_option("--n", sy_n, "sample count")->capture_default_str();
  sy_corpus->add_option("--out", sy_out, "corpus JSON output")->required();
  sy_corpus->add_option("--workers", sy_workers, "parallel workers")->capture_default_str();
  sy_corpus->add_option("--min-bars", sy_min_bars, "")->capture_default_str();
  sy_corpus->add_option("--max-bars", sy_max_bars, "")->capture_default_str();
  sy_corpus->add_option("--insert-rate", sy_ins, "")->capture_default_str();
  sy_corpus->add_option("--delete-rate", sy_del, "")->capture_default_str();
  sy_corpus->add_option("--shift-rate", sy_shift, "")->capture_default_str();

  // ---- toy -----------------------------------------------------------------
  auto* toy = app.add_subcommand("toy", "desk-scale decoder drivers");
  toy->require_subcommand(1);

  std::string tt_corpus, tt_ckpt, tt_log, tt_resume;
  int tt_steps = 3000, tt_warmup = 100, tt_batch = 8, tt_dmodel = 48, tt_blocks = 2, tt_heads = 4;
  double tt_peak = 3e-3, tt_start = 3e-4, tt_final = 1e-5;
  bool tt_concat = false, tt_no_early_stop = false;
  auto* toy_train = toy->add_subcommand("train", "teacher-forced training on a corpus");
  toy_train->add_option("--corpus", tt_corpus, "corpus JSON")->required();
  toy_train->add_option("--ckpt", tt_ckpt, "checkpoint output")->required();
  toy_train->add_option("--log", tt_log, "loss log CSV output");
  toy_train->add_option("--resume", tt_resume, "checkpoint to resume from");
  toy_train->add_option("--steps", tt_steps, "")->capture_default_str();
  toy_train->add_option("--warmup", tt_warmup, "")->capture_default_str();
  toy_train->add_option("--batch", tt_batch, "")->capture_default_str();
  toy_train->add_option("--peak-lr", tt_peak, "")->capture_default_str();
  toy_train->add_option("--start-lr", tt_start, "")->capture_default_str();
  toy_train->add_option("--final-lr", tt_final, "")->capture_default_str();
  toy_train->add_option("--d-model", tt_dmodel, "")->capture_default_str();
  toy_train->add_option("--blocks", tt_blocks, "")->capture_default_str();
  toy_train->add_option("--heads", tt_heads, "")->capture_default_str();
  toy_train->add_flag("--concat-memory", tt_concat, "ablation: concatenated-memory cross-attention");
  toy_train->add_flag("--no-early-stop", tt_no_early_stop, "run every step");

  std::uint64_t tg_seed = 7;
  auto* toy_grad = toy->add_subcommand("gradcheck", "finite-difference gradient check");
  toy_grad->add_option("--probe-seed", tg_seed, "")->capture_default_str();

  std::string ti_corpus, ti_ckpt, ti_out;
  int ti_index = 0;
  bool ti_eval = false;
  auto* toy_infer = toy->add_subcommand("infer", "greedy decode one corpus sample");
  toy_infer->add_option("--corpus", ti_corpus, "corpus JSON")->required();
  toy_infer->add_option("--ckpt", ti_ckpt, "checkpoint")->required();
  toy_infer->add_option("--index", ti_index, "sample index")->capture_default_str();
  toy_infer->add_option("--out", ti_out, "decoded steps JSON output");
  toy_infer->add_flag("--eval", ti_eval, "compare against the sample's target steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 2;
  }

  try {
    sp::tokenizer::check_vocab();

    if (convert->parsed()) {
      auto result = sp::score_ir::parse_musicxml(sp::read_file(sc_in));
      for (const auto& w : result.warnings)
        if (!g_opts.quiet) std::cerr << "warning: " << w.message << " (" << w.location << ")\n";
      if (!sc_out.empty()) {
        json j = sp::score_ir::to_json(result.score);
        j["warnings"] = json::array();
        for (const auto& w : result.warnings)
          j["warnings"].push_back({{"message", w.message}, {"location", w.location}});
        write_json(sc_out, j, "score convert");
      }
      if (!sc_abc.empty()) {
        auto abc = sp::score_ir::to_abc_interleaved(
            sp::score_ir::slice_bars(result.score, 0,
                                     std::min(result.score.bar_count, sc_max_bars)),
            sc_max_bars);
        for (const auto& p : abc.patches)
          if (p.size() != sp::score_ir::kPatchLen)
            throw sp::InternalError("patch width validation failed");
        write_json(sc_abc, sp::score_ir::to_json(abc), "score convert");
      }
      say("parsed " + std::to_string(result.score.notes.size()) + " notes in " +
          std::to_string(result.score.bar_count) + " bars, " +
          std::to_string(result.warnings.size()) + " warning(s)");
    } else if (unfold->parsed()) {
      auto unfolded = sp::score_ir::unfold_repeats(load_score_ir(su_in));
      if (!su_out.empty()) write_json(su_out, sp::score_ir::to_json(unfolded), "score unfold");
      say("unfolded to " + std::to_string(unfolded.bars.size()) + " linear bars, " +
          std::to_string(unfolded.notes.size()) + " notes");
    } else if (pimport->parsed()) {
      auto notes = load_perf(pi_in);
      if (!pi_out.empty()) {
        std::string body = sp::perf_ir::to_jsonl(notes);
        sp::write_file(pi_out, "# meta " + meta_block("perf import").dump() + "\n" + body);
      }
      say("imported " + std::to_string(notes.size()) + " notes");
    } else if (align->parsed()) {
      auto unfolded = load_unfolded(al_score);
      auto notes = load_perf(al_perf);
      sp::aligner::AlignParams params;
      params.gap_penalty = al_gap;
      auto records = sp::aligner::align_notes(unfolded, notes, params);
      // Conservation: every note on each side appears exactly once.
      std::size_t n_match = 0, n_ins = 0, n_del = 0;
      for (const auto& r : records) {
        if (r.op == sp::tokenizer::Op::Match) ++n_match;
        if (r.op == sp::tokenizer::Op::Insert) ++n_ins;
        if (r.op == sp::tokenizer::Op::Delete) ++n_del;
      }
      if (n_match + n_ins != notes.size() || n_match + n_del != unfolded.notes.size())
        throw sp::InternalError("alignment conservation check failed");
      if (!al_out.empty())
        sp::write_file(al_out, sp::aligner::to_match_tsv(records,
                                                         "meta " + meta_block("align").dump()));
      say("aligned: " + std::to_string(n_match) + " match, " + std::to_string(n_ins) +
          " insert, " + std::to_string(n_del) + " delete");
    } else if (tokenize->parsed()) {
      auto unfolded = load_unfolded(tk_score);
      auto notes = load_perf(tk_perf);
      auto records = sp::aligner::parse_match_tsv(sp::read_file(tk_match));
      sp::aligner::resolve_records(records, unfolded, notes);
      for (auto& r : records)
        if (r.score) r.score->linear_bar -= tk_bar_origin;
      std::vector<sp::tokenizer::TimeSigEvent> sigs;
      for (const auto& ts : unfolded.time_sigs)
        if (ts.bar_index >= tk_bar_origin)
          sigs.push_back({ts.bar_index - tk_bar_origin, ts.num, ts.den});
      auto steps = sp::tokenizer::encode(records, sigs);
      if (tk_out.size() >= 5 && tk_out.substr(tk_out.size() - 5) == ".json")
        write_json(tk_out, sp::tokenizer::to_json(steps), "tokenize");
      else
        sp::write_file(tk_out, sp::tokenizer::to_bytes(steps));
      say("encoded " + std::to_string(records.size()) + " records into " +
          std::to_string(steps.size()) + " steps");
    } else if (detokenize->parsed()) {
      auto steps = load_steps(dt_in);
      auto decoded = sp::tokenizer::decode(steps);
      json j;
      j["perf_notes"] = json::array();
      for (const auto& n : decoded.perf_notes)
        j["perf_notes"].push_back({{"onset_s", n.onset_s}, {"dur_s", n.dur_s},
                                   {"pitch", n.pitch}, {"velocity", n.velocity}});
      j["score_refs"] = json::array();
      for (const auto& n : decoded.score_refs)
        j["score_refs"].push_back({{"bar", n.linear_bar}, {"pos", n.pos_ticks},
                                   {"dur", n.dur_ticks}, {"pitch", n.pitch},
                                   {"pass", n.pass_number}});
      j["records"] = json::array();
      for (const auto& r : decoded.records)
        j["records"].push_back({{"op", sp::tokenizer::op_name(r.op)},
                                {"perf_index", r.perf ? r.perf_index : -1},
                                {"score_index", r.score ? r.score->index : -1},
                                {"repeat", r.repeat_flag}});
      j["timesigs"] = json::array();
      for (const auto& ts : decoded.timesigs)
        j["timesigs"].push_back({{"bar", ts.linear_bar}, {"num", ts.num}, {"den", ts.den}});
      if (!dt_out.empty()) write_json(dt_out, j, "detokenize");
      say("decoded " + std::to_string(decoded.records.size()) + " records");
    } else if (mistakes->parsed()) {
      auto records = load_match(mk_match, mk_score, mk_perf);
      auto report = sp::analysis::derive_mistakes(records);
      if (!mk_out.empty()) write_json(mk_out, sp::analysis::to_json(report), "mistakes");
      say("correct " + std::to_string(report.correct.size()) + ", extra " +
          std::to_string(report.extra.size()) + ", missed " +
          std::to_string(report.missed.size()));
    } else if (ev_align->parsed()) {
      auto pred = sp::aligner::parse_match_tsv(sp::read_file(ev_pred));
      auto truth = sp::aligner::parse_match_tsv(sp::read_file(ev_truth));
      auto m = sp::analysis::f_align(pred, truth);
      if (!ev_out.empty()) write_json(ev_out, {{"f_align", sp::analysis::to_json(m)}}, "eval align");
      say("F_align = " + sp::format_double(m.f1));
    } else if (ev_trans->parsed()) {
      auto est = load_perf(et_est);
      auto ref = load_perf(et_ref);
      auto t = sp::analysis::transcription_f1(est, ref);
      if (!et_out.empty()) write_json(et_out, sp::analysis::to_json(t), "eval transcription");
      say("F_on = " + sp::format_double(t.onset.f1) +
          ", F_off_vel = " + sp::format_double(t.off_vel.f1) +
          ", MAE_vel = " + sp::format_double(t.mae_vel));
    } else if (ev_mist->parsed()) {
      auto pred = sp::analysis::derive_mistakes(load_match(em_pred, em_score, em_perf));
      auto truth = sp::analysis::derive_mistakes(
          load_match(em_truth, em_tscore.empty() ? em_score : em_tscore,
                     em_tperf.empty() ? em_perf : em_tperf));
      auto m = sp::analysis::mistake_metrics(pred, truth);
      if (!em_out.empty()) write_json(em_out, sp::analysis::to_json(m), "eval mistakes");
      say("F_correct = " + sp::format_double(m.correct.f1) +
          ", F_extra = " + sp::format_double(m.extra.f1) +
          ", F_missed = " + sp::format_double(m.missed.f1));
    } else if (ag_score->parsed()) {
      auto modulated = sp::augment::modulate_score(load_score_ir(ag_in), ag_ratio, g_opts.seed);
      write_json(ag_out, sp::score_ir::to_json(modulated.score), "augment score");
      if (!ag_log.empty()) write_json(ag_log, sp::augment::to_json(modulated.log), "augment score");
      say(std::to_string(modulated.log.edits.size()) + " edit(s)");
    } else if (ag_perf->parsed()) {
      auto modulated = sp::augment::modulate_performance(
          load_perf(ap_in), {ap_ins, ap_del, ap_shift}, g_opts.seed);
      sp::write_file(ap_out, "# meta " + meta_block("augment perf").dump() + "\n" +
                                 sp::perf_ir::to_jsonl(modulated.perf));
      if (!ap_log.empty()) write_json(ap_log, sp::augment::to_json(modulated.log), "augment perf");
      say(std::to_string(modulated.log.edits.size()) + " edit(s)");
    } else if (ag_rep->parsed()) {
      auto score = load_score_ir(ar_score);
      auto notes = load_perf(ar_perf);
      auto records = sp::aligner::parse_match_tsv(sp::read_file(ar_match));
      auto unfolded = sp::score_ir::unfold_repeats(score);
      sp::aligner::resolve_records(records, unfolded, notes);
      auto sim = sp::augment::simulate_repeats(score, notes, &records, ar_prob, g_opts.seed);
      write_json(ar_out_score, sp::score_ir::to_json(sim.score), "augment repeats");
      sp::write_file(ar_out_perf, "# meta " + meta_block("augment repeats").dump() + "\n" +
                                      sp::perf_ir::to_jsonl(sim.perf));
      if (!ar_log.empty())
        write_json(ar_log, sp::augment::to_json(sim.provenance), "augment repeats");
      say(sim.provenance.applied ? "repeat applied at bar " +
                                       std::to_string(sim.provenance.span_start)
                                 : "not applied: " + sim.provenance.skip_reason);
    } else if (sy_corpus->parsed()) {
      sp::synth::PieceConfig pc;
      pc.min_bars = sy_min_bars;
      pc.max_bars = sy_max_bars;
      pc.mistake_rates = {sy_ins, sy_del, sy_shift};
      std::vector<sp::synth::Sample> samples(static_cast<std::size_t>(sy_n));
      int workers = std::max(1, sy_workers);
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (;;) {
            int i = next.fetch_add(1);
            if (i >= sy_n) return;
            samples[static_cast<std::size_t>(i)] = sp::synth::make_sample(
                sp::synth::sample_seed(g_opts.seed, static_cast<std::uint64_t>(i)), pc);
          }
        });
      for (auto& t : pool) t.join();
      json j = sp::synth::corpus_to_json(samples, g_opts.seed);
      write_json(sy_out, j, "synth corpus");
      say("wrote " + std::to_string(sy_n) + " samples");
    } else if (toy_train->parsed()) {
      auto corpus = sp::synth::corpus_from_json(
          json::parse(sp::read_file(tt_corpus)));
      sp::neural::DecoderConfig cfg;
      cfg.d_model = tt_dmodel;
      cfg.n_blocks = tt_blocks;
      cfg.n_heads = tt_heads;
      cfg.ffn_hidden = 2 * tt_dmodel;
      cfg.concat_memory = tt_concat;
      sp::neural::ParamStore<float> params;
      sp::neural::AdamState<float> opt;
      int start_step = 0;
      if (!tt_resume.empty()) {
        auto loaded = sp::neural::load_checkpoint<float>(sp::read_file(tt_resume));
        cfg = loaded.config;
        params = std::move(loaded.params);
        opt = std::move(loaded.opt);
        start_step = static_cast<int>(opt.step);
      } else {
        params = sp::neural::init_params<float>(cfg, g_opts.seed == 0 ? 11 : g_opts.seed);
        opt.init(params);
      }
      sp::neural::TrainConfig tc;
      tc.schedule = {tt_start, tt_peak, tt_final, tt_warmup, tt_steps};
      tc.batch_size = tt_batch;
      tc.early_stop = !tt_no_early_stop;
      tc.seed = g_opts.seed;
      try {
        auto result = sp::neural::train(params, opt, cfg, tc, corpus, start_step);
        sp::write_file(tt_ckpt, sp::neural::save_checkpoint(params, cfg, &opt));
        if (!tt_log.empty()) sp::write_file(tt_log, sp::neural::loss_log_csv(result.log));
        say("trained " + std::to_string(result.steps_run) + " steps, min field accuracy " +
            sp::format_double(result.final_accuracy.min_field_accuracy()));
      } catch (const sp::InternalError&) {
        // divergence: train() restores the last finite parameters
        sp::write_file(tt_ckpt, sp::neural::save_checkpoint(params, cfg, &opt));
        throw;
      }
    } else if (toy_grad->parsed()) {
      sp::neural::DecoderConfig cfg;
      cfg.d_model = 12;
      cfg.n_blocks = 1;
      cfg.n_heads = 2;
      cfg.ffn_hidden = 16;
      auto params = sp::neural::init_params<double>(cfg, 5);
      sp::synth::PieceConfig pc;
      pc.min_bars = 1;
      pc.max_bars = 1;
      pc.min_notes_per_bar = 2;
      pc.max_notes_per_bar = 3;
      auto sample = sp::synth::make_sample(3, pc);
      sp::neural::GradCheckSample gs;
      gs.steps = sample.steps;
      gs.patches = sample.patches;
      gs.audio = sp::neural::render_audio_features<double>(sample.perf, sample.seconds, cfg.d_model);
      auto res = sp::neural::grad_check(params, cfg, gs, 200, 1e-4, tg_seed);
      say("max relative error " + sp::format_double(res.max_rel_error) + " over " +
          std::to_string(res.probes) + " probes (worst: " + res.worst_param + ")");
      if (res.max_rel_error >= 1e-3)
        throw sp::InternalError("gradient check failed: " + res.worst_param);
    } else if (toy_infer->parsed()) {
      auto corpus = sp::synth::corpus_from_json(json::parse(sp::read_file(ti_corpus)));
      if (ti_index < 0 || ti_index >= static_cast<int>(corpus.size()))
        throw sp::ValidationError("sample index out of range");
      auto loaded = sp::neural::load_checkpoint<float>(sp::read_file(ti_ckpt));
      const auto& s = corpus[static_cast<std::size_t>(ti_index)];
      auto audio = sp::neural::render_audio_features<float>(s.perf, s.seconds,
                                                            loaded.config.d_model);
      auto decoded = sp::neural::greedy_decode(loaded.params, loaded.config, audio, s.patches,
                                               loaded.config.max_seq);
      json j = sp::tokenizer::to_json(decoded);
      if (ti_eval) {
        j["eval"] = {{"exact_match", decoded == s.steps},
                     {"decoded_steps", decoded.size()},
                     {"target_steps", s.steps.size()}};
        say(std::string("exact match: ") + (decoded == s.steps ? "yes" : "no"));
      }
      if (!ti_out.empty()) write_json(ti_out, j, "toy infer");
    }
    return 0;
  } catch (const sp::Error& e) {
    json err = {{"error", {{"class", e.kind() == sp::ErrorKind::Parse ? "parse"
                            : e.kind() == sp::ErrorKind::Validation ? "validation"
                                                                    : "internal"},
                           {"message", e.message()},
                           {"location", e.location()}}}};
    if (g_opts.json_errors) std::cerr << err.dump() << "\n";
    else std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case sp::ErrorKind::Parse: return 2;
      case sp::ErrorKind::Validation: return 3;
      case sp::ErrorKind::Internal: return 4;
    }
    return 4;
  } catch (const nlohmann::json::exception& e) {
    if (g_opts.json_errors)
      std::cerr << json{{"error", {{"class", "parse"}, {"message", e.what()}}}}.dump() << "\n";
    else std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    if (g_opts.json_errors)
      std::cerr << json{{"error", {{"class", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    else std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
