#pragma once

// Note-level score/performance alignment. Global edit alignment (Match on
// equal pitch, Insert/Delete with gap penalty) minimized by dynamic
// programming over a tempo-invariant cost model, plus an exhaustive oracle
// for small instances.
//
// Cost model. A performance onset is compared against the score note's
// position mapped through a piecewise-linear score-tick -> seconds map fitted
// to the current matches (two fit-and-realign iterations after the initial
// linear map). Deviations are normalized by the local mapped inter-onset
// interval, floored at 50 ms. Match costs are snapped to a 2^-20 grid so that
// every path cost is an exact dyadic sum: cost comparison and therefore
// tie-breaking are deterministic and identical between the DP and the oracle.
//
// Tie-breaking among equal-cost alignments: prefer Match over Insert over
// Delete at each step, walking from the front; this also prefers the earlier
// score note.

#include <string>
#include <vector>

#include "scoreperf/common.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/score_ir.hpp"
#include "scoreperf/tokenizer.hpp"

namespace scoreperf::aligner {

using perf_ir::PerfNote;
using score_ir::ScoreIR;
using score_ir::UnfoldedScore;
using tokenizer::AlignRecord;
using tokenizer::Op;
using tokenizer::ScoreRef;

struct AlignParams {
  double gap_penalty = 1.0;
  int refit_iterations = 2;     // fixed, no convergence loop
  double ioi_floor_s = 0.05;    // normalization floor
  double fallback_sec_per_quarter = 0.5;  // used when the inputs are degenerate
};

constexpr std::size_t kBruteForceLimit = 12;  // |score| + |perf|

namespace detail {

constexpr double kCostGrid = 1048576.0;  // 2^20
constexpr double kCostCap = 1e6;

inline double snap_cost(double c) {
  if (c > kCostCap) c = kCostCap;
  return iround(c * kCostGrid) / kCostGrid;
}

// Piecewise-linear monotone map from score ticks to seconds.
class TimeMap {
 public:
  // Anchors must be sorted by tick; enforce strictly increasing both ways.
  static TimeMap from_anchors(std::vector<std::pair<double, double>> anchors,
                              double fallback_rate) {
    TimeMap m;
    m.rate_ = fallback_rate;
    for (const auto& [tick, sec] : anchors) {
      if (!m.pts_.empty()) {
        if (tick <= m.pts_.back().first + 1e-9) continue;
        if (sec <= m.pts_.back().second + 1e-9) continue;
      }
      m.pts_.push_back({tick, sec});
    }
    if (m.pts_.size() >= 2) {
      const auto& a = m.pts_.front();
      const auto& b = m.pts_.back();
      m.rate_ = (b.second - a.second) / (b.first - a.first);
    }
    return m;
  }

  static TimeMap linear(double rate, double tick0 = 0.0, double sec0 = 0.0) {
    TimeMap m;
    m.rate_ = rate;
    m.pts_.push_back({tick0, sec0});
    return m;
  }

  double operator()(double tick) const {
    if (pts_.empty()) return tick * rate_;
    if (pts_.size() == 1 || tick <= pts_.front().first)
      return pts_.front().second + (tick - pts_.front().first) * rate_;
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      if (tick <= pts_[i].first) {
        const auto& a = pts_[i - 1];
        const auto& b = pts_[i];
        double f = (tick - a.first) / (b.first - a.first);
        return a.second + f * (b.second - a.second);
      }
    }
    return pts_.back().second + (tick - pts_.back().first) * rate_;
  }

 private:
  std::vector<std::pair<double, double>> pts_;
  double rate_ = 0.5 / score_ir::kTicksPerQuarter;
};

struct ScoreEvent {
  ScoreRef ref;
  long long tick = 0;  // global tick in the linear sequence
};

struct CostModel {
  std::vector<ScoreEvent> score;
  std::vector<PerfNote> perf;
  TimeMap map;
  std::vector<double> mapped;  // mapped onset per score note
  std::vector<double> ioi;     // local normalization per score note
  double gap;

  void refresh(const AlignParams& params) {
    mapped.resize(score.size());
    for (std::size_t i = 0; i < score.size(); ++i)
      mapped[i] = map(static_cast<double>(score[i].tick));
    ioi.assign(score.size(), params.ioi_floor_s);
    // Local IOI: gap to the nearest distinct mapped onset (next preferred,
    // else previous), floored.
    for (std::size_t i = 0; i < score.size(); ++i) {
      double next = -1.0, prev = -1.0;
      for (std::size_t j = i + 1; j < score.size(); ++j)
        if (score[j].tick != score[i].tick) {
          next = mapped[j] - mapped[i];
          break;
        }
      for (std::size_t j = i; j-- > 0;)
        if (score[j].tick != score[i].tick) {
          prev = mapped[i] - mapped[j];
          break;
        }
      double local = next >= 0.0 ? next : prev;
      if (local > params.ioi_floor_s) ioi[i] = local;
    }
  }

  double match_cost(std::size_t si, std::size_t pi) const {
    double dev = std::abs(perf[pi].onset_s - mapped[si]) / ioi[si];
    return snap_cost(dev);
  }

  bool pitch_equal(std::size_t si, std::size_t pi) const {
    return score[si].ref.pitch == perf[pi].pitch;
  }
};

inline std::vector<ScoreEvent> score_events(const UnfoldedScore& score) {
  // Linear-bar start ticks from the unfolded time-signature changes.
  std::vector<long long> starts(score.bars.size() + 1, 0);
  std::size_t sig_i = 0;
  int num = 4, den = 4;
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    while (sig_i < score.time_sigs.size() &&
           score.time_sigs[sig_i].bar_index <= static_cast<int>(b)) {
      num = score.time_sigs[sig_i].num;
      den = score.time_sigs[sig_i].den;
      ++sig_i;
    }
    starts[b + 1] = starts[b] + score_ir::bar_len_ticks(num, den);
  }
  std::vector<ScoreEvent> out;
  out.reserve(score.notes.size());
  for (std::size_t i = 0; i < score.notes.size(); ++i) {
    const auto& n = score.notes[i];
    ScoreRef ref;
    ref.index = static_cast<int>(i);
    ref.linear_bar = n.linear_bar;
    ref.source_bar = n.source_bar;
    ref.pass_number = n.pass_number;
    ref.pos_ticks = n.pos_ticks;
    ref.dur_ticks = n.dur_ticks;
    ref.pitch = n.pitch;
    out.push_back({ref, starts[static_cast<std::size_t>(n.linear_bar)] + n.pos_ticks});
  }
  return out;
}

inline CostModel initial_model(std::vector<ScoreEvent> score, std::vector<PerfNote> perf,
                               const AlignParams& params) {
  CostModel m{std::move(score), std::move(perf), TimeMap(), {}, {}, params.gap_penalty};
  double rate = params.fallback_sec_per_quarter / score_ir::kTicksPerQuarter;
  if (m.score.size() >= 2 && m.perf.size() >= 2) {
    double tick_span = static_cast<double>(m.score.back().tick - m.score.front().tick);
    double sec_span = m.perf.back().onset_s - m.perf.front().onset_s;
    if (tick_span > 0 && sec_span > 0) {
      m.map = TimeMap::from_anchors({{static_cast<double>(m.score.front().tick), m.perf.front().onset_s},
                                     {static_cast<double>(m.score.back().tick), m.perf.back().onset_s}},
                                    sec_span / tick_span);
    } else {
      m.map = TimeMap::linear(rate);
    }
  } else {
    m.map = TimeMap::linear(rate);
  }
  m.refresh(params);
  return m;
}

inline void refit(CostModel& m, const std::vector<AlignRecord>& records,
                  const AlignParams& params) {
  std::vector<std::pair<double, double>> anchors;
  for (const auto& r : records)
    if (r.op == Op::Match)
      anchors.push_back({static_cast<double>(m.score[static_cast<std::size_t>(r.score->index)].tick),
                         r.perf->onset_s});
  // anchors follow score order; enforced monotone inside from_anchors
  std::sort(anchors.begin(), anchors.end());
  if (!anchors.empty())
    m.map = TimeMap::from_anchors(std::move(anchors), params.fallback_sec_per_quarter /
                                                          score_ir::kTicksPerQuarter);
  m.refresh(params);
}

inline AlignRecord make_match(const CostModel& m, std::size_t si, std::size_t pi) {
  AlignRecord r;
  r.op = Op::Match;
  r.perf = m.perf[pi];
  r.perf_index = static_cast<int>(pi);
  r.score = m.score[si].ref;
  r.repeat_flag = m.score[si].ref.pass_number > 1;
  return r;
}

inline AlignRecord make_insert(const CostModel& m, std::size_t pi) {
  AlignRecord r;
  r.op = Op::Insert;
  r.perf = m.perf[pi];
  r.perf_index = static_cast<int>(pi);
  return r;
}

inline AlignRecord make_delete(const CostModel& m, std::size_t si) {
  AlignRecord r;
  r.op = Op::Delete;
  r.score = m.score[si].ref;
  r.repeat_flag = m.score[si].ref.pass_number > 1;
  return r;
}

// One DP solve under a fixed cost model. Suffix costs + greedy forward walk
// give the lexicographically preferred optimal op sequence.
inline std::vector<AlignRecord> solve_dp(const CostModel& m) {
  const std::size_t N = m.score.size(), M = m.perf.size();
  std::vector<double> D((N + 1) * (M + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return D[i * (M + 1) + j]; };
  for (std::size_t j = M; j-- > 0;) at(N, j) = m.gap + at(N, j + 1);
  for (std::size_t i = N; i-- > 0;) at(i, M) = m.gap + at(i + 1, M);
  for (std::size_t i = N; i-- > 0;) {
    for (std::size_t j = M; j-- > 0;) {
      double best = m.gap + at(i, j + 1);                    // Insert perf j
      double del = m.gap + at(i + 1, j);                     // Delete score i
      if (del < best) best = del;
      if (m.pitch_equal(i, j)) {
        double mc = m.match_cost(i, j) + at(i + 1, j + 1);   // Match
        if (mc < best) best = mc;
      }
      at(i, j) = best;
    }
  }
  std::vector<AlignRecord> out;
  out.reserve(N + M);
  std::size_t i = 0, j = 0;
  while (i < N || j < M) {
    double want = at(i, j);
    if (i < N && j < M && m.pitch_equal(i, j) &&
        m.match_cost(i, j) + at(i + 1, j + 1) == want) {
      out.push_back(make_match(m, i, j));
      ++i;
      ++j;
    } else if (j < M && m.gap + at(i, j + 1) == want) {
      out.push_back(make_insert(m, j));
      ++j;
    } else {
      out.push_back(make_delete(m, i));
      ++i;
    }
  }
  return out;
}

// Exhaustive minimum over all monotone alignments; op sequences compared
// lexicographically (Match < Insert < Delete) among equal costs.
inline std::vector<AlignRecord> solve_bruteforce(const CostModel& m) {
  const std::size_t N = m.score.size(), M = m.perf.size();
  struct Best {
    double cost = 0.0;
    std::vector<int> ops;
    bool set = false;
  } best;
  std::vector<int> ops;  // 0 Match, 1 Insert, 2 Delete
  ops.reserve(N + M);

  auto consider = [&](double cost) {
    if (!best.set || cost < best.cost || (cost == best.cost && ops < best.ops)) {
      best.set = true;
      best.cost = cost;
      best.ops = ops;
    }
  };

  // Depth-first over the alignment lattice; cost accumulated front-to-back.
  auto rec = [&](auto&& self, std::size_t i, std::size_t j, double cost) -> void {
    if (i == N && j == M) {
      consider(cost);
      return;
    }
    if (i < N && j < M && m.pitch_equal(i, j)) {
      ops.push_back(0);
      self(self, i + 1, j + 1, cost + m.match_cost(i, j));
      ops.pop_back();
    }
    if (j < M) {
      ops.push_back(1);
      self(self, i, j + 1, cost + m.gap);
      ops.pop_back();
    }
    if (i < N) {
      ops.push_back(2);
      self(self, i + 1, j, cost + m.gap);
      ops.pop_back();
    }
  };
  rec(rec, 0, 0, 0.0);

  std::vector<AlignRecord> out;
  std::size_t i = 0, j = 0;
  for (int op : best.ops) {
    if (op == 0) out.push_back(make_match(m, i++, j++));
    else if (op == 1) out.push_back(make_insert(m, j++));
    else out.push_back(make_delete(m, i++));
  }
  return out;
}

template <typename Solver>
inline std::vector<AlignRecord> align_iterated(const UnfoldedScore& score,
                                               const std::vector<PerfNote>& perf,
                                               const AlignParams& params, Solver&& solve) {
  CostModel m = initial_model(score_events(score), perf, params);
  std::vector<AlignRecord> records = solve(m);
  for (int it = 0; it < params.refit_iterations; ++it) {
    refit(m, records, params);
    records = solve(m);
  }
  return records;
}

}  // namespace detail

inline double alignment_cost(const UnfoldedScore& score, const std::vector<PerfNote>& perf,
                             const std::vector<AlignRecord>& records,
                             const AlignParams& params = {}) {
  // Cost of a given record sequence under the model fitted to it (diagnostic).
  detail::CostModel m = detail::initial_model(detail::score_events(score), perf, params);
  detail::refit(m, records, params);
  double total = 0.0;
  for (const auto& r : records) {
    if (r.op == Op::Match)
      total += m.match_cost(static_cast<std::size_t>(r.score->index),
                            static_cast<std::size_t>(r.perf_index));
    else
      total += params.gap_penalty;
  }
  return total;
}

// Global DP alignment. Inputs must be sorted: score by (linear bar, pos,
// pitch), perf by (onset, pitch). Every note of both sides appears in the
// output exactly once, in aligned order.
inline std::vector<AlignRecord> align_notes(const UnfoldedScore& score,
                                            const std::vector<PerfNote>& perf,
                                            const AlignParams& params = {}) {
  return detail::align_iterated(score, perf, params,
                                [](const detail::CostModel& m) { return detail::solve_dp(m); });
}

// Exhaustive oracle, same cost model and iteration protocol. Refuses
// instances above kBruteForceLimit total notes.
inline std::vector<AlignRecord> align_bruteforce(const UnfoldedScore& score,
                                                 const std::vector<PerfNote>& perf,
                                                 const AlignParams& params = {}) {
  if (score.notes.size() + perf.size() > kBruteForceLimit)
    throw ValidationError("brute-force aligner limited to " + std::to_string(kBruteForceLimit) +
                          " total notes");
  return detail::align_iterated(score, perf, params, [](const detail::CostModel& m) {
    return detail::solve_bruteforce(m);
  });
}

// ---------------------------------------------------------------------------
// Score window selection

struct BarRange {
  int first = 0;
  int count = 0;
};

// Pick a contiguous source-bar window (at most 50 bars) covering a performed
// segment. With a prior alignment, the window is the matched-bar span plus
// two bars each side; otherwise a proportional heuristic at an assumed 0.5 s
// per quarter locates the passage.
inline BarRange select_score_window(const ScoreIR& score, double t0, double t1,
                                    const std::vector<AlignRecord>* prior = nullptr,
                                    const AlignParams& params = {}) {
  constexpr int kMaxBars = score_ir::kMaxWindowBars;
  if (t1 < t0) throw ValidationError("empty performance segment");
  if (score.bar_count <= kMaxBars) return {0, score.bar_count};

  auto clamp_window = [&](int lo, int hi) -> BarRange {  // inclusive bar span
    lo = std::max(lo, 0);
    hi = std::min(hi, score.bar_count - 1);
    if (hi - lo + 1 > kMaxBars) {
      int center = (lo + hi) / 2;
      lo = center - kMaxBars / 2;
      hi = lo + kMaxBars - 1;
      if (lo < 0) {
        lo = 0;
        hi = kMaxBars - 1;
      }
      if (hi > score.bar_count - 1) {
        hi = score.bar_count - 1;
        lo = hi - kMaxBars + 1;
      }
    }
    return {lo, hi - lo + 1};
  };

  if (prior && !prior->empty()) {
    int lo = score.bar_count, hi = -1;
    for (const auto& r : *prior)
      if (r.op == Op::Match && r.score) {
        lo = std::min(lo, r.score->source_bar);
        hi = std::max(hi, r.score->source_bar);
      }
    if (hi >= 0) return clamp_window(lo - 2, hi + 2);
  }

  // Proportional heuristic: map seconds to score ticks at the fallback rate.
  std::vector<long long> starts = score_ir::bar_start_ticks(score);
  double rate = params.fallback_sec_per_quarter / score_ir::kTicksPerQuarter;  // s per tick
  auto bar_at = [&](double seconds) {
    long long tick = static_cast<long long>(seconds / rate);
    int b = 0;
    while (b + 1 < score.bar_count && starts[static_cast<std::size_t>(b) + 1] <= tick) ++b;
    return b;
  };
  return clamp_window(bar_at(t0), bar_at(t1));
}

// ---------------------------------------------------------------------------
// Match TSV (the interchange format for analysis and the CLI)

inline std::string to_match_tsv(const std::vector<AlignRecord>& records,
                                const std::string& meta_comment = {}) {
  std::string out;
  if (!meta_comment.empty()) out += "# " + meta_comment + "\n";
  out += "# perf_index\tscore_linear_index\top\trepeat_flag\tperf_onset_s\tscore_bar\tscore_pos_ticks\n";
  for (const auto& r : records) {
    out += std::to_string(r.perf ? r.perf_index : -1);
    out += '\t';
    out += std::to_string(r.score ? r.score->index : -1);
    out += '\t';
    out += tokenizer::op_name(r.op);
    out += '\t';
    out += r.repeat_flag ? '1' : '0';
    out += '\t';
    out += r.perf ? format_double(r.perf->onset_s) : "-1";
    out += '\t';
    out += std::to_string(r.score ? r.score->linear_bar : -1);
    out += '\t';
    out += std::to_string(r.score ? r.score->pos_ticks : -1);
    out += '\n';
  }
  return out;
}

// Parse a match TSV. Fields beyond the indices are restored from the file;
// full note payloads can be resolved against the unfolded score / perf lists.
inline std::vector<AlignRecord> parse_match_tsv(std::string_view text) {
  std::vector<AlignRecord> records;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t p = 0;
    while (true) {
      std::size_t tab = line.find('\t', p);
      cols.push_back(line.substr(p, tab == std::string::npos ? std::string::npos : tab - p));
      if (tab == std::string::npos) break;
      p = tab + 1;
    }
    std::string loc = "line " + std::to_string(line_no);
    if (cols.size() != 7) throw ParseError("match TSV: expected 7 columns", loc);
    try {
      AlignRecord r;
      int perf_index = std::stoi(cols[0]);
      int score_index = std::stoi(cols[1]);
      r.op = tokenizer::op_from_name(cols[2]);
      r.repeat_flag = cols[3] == "1";
      if (perf_index >= 0) {
        PerfNote n;
        n.onset_s = std::stod(cols[4]);
        r.perf = n;
        r.perf_index = perf_index;
      }
      if (score_index >= 0) {
        ScoreRef ref;
        ref.index = score_index;
        ref.linear_bar = std::stoi(cols[5]);
        ref.source_bar = ref.linear_bar;
        ref.pos_ticks = std::stoi(cols[6]);
        ref.pass_number = r.repeat_flag ? 2 : 1;
        r.score = ref;
      }
      records.push_back(r);
    } catch (const Error&) {
      throw;
    } catch (...) {
      throw ParseError("match TSV: malformed row", loc);
    }
  }
  return records;
}

// Fill record payloads from the referenced note universes.
inline void resolve_records(std::vector<AlignRecord>& records, const UnfoldedScore& score,
                            const std::vector<PerfNote>& perf) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    AlignRecord& r = records[i];
    if (r.perf) {
      if (r.perf_index < 0 || r.perf_index >= static_cast<int>(perf.size()))
        throw ValidationError("match record " + std::to_string(i) +
                              " references a missing performance note");
      r.perf = perf[static_cast<std::size_t>(r.perf_index)];
    }
    if (r.score) {
      int idx = r.score->index;
      if (idx < 0 || idx >= static_cast<int>(score.notes.size()))
        throw ValidationError("match record " + std::to_string(i) +
                              " references a missing score note");
      const auto& n = score.notes[static_cast<std::size_t>(idx)];
      ScoreRef ref;
      ref.index = idx;
      ref.linear_bar = n.linear_bar;
      ref.source_bar = n.source_bar;
      ref.pass_number = n.pass_number;
      ref.pos_ticks = n.pos_ticks;
      ref.dur_ticks = n.dur_ticks;
      ref.pitch = n.pitch;
      r.score = ref;
      r.repeat_flag = n.pass_number > 1;
    }
  }
}

}  // namespace scoreperf::aligner
