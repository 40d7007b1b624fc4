#pragma once

// Mistake detection derivation and evaluation metrics: alignment F-measure,
// transcription F-measures (onset / onset+offset+velocity) with velocity MAE,
// and per-class mistake metrics. No RNG anywhere; results are reproducible
// bit-exactly.

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/tokenizer.hpp"

namespace scoreperf::analysis {

using perf_ir::PerfNote;
using tokenizer::AlignRecord;
using tokenizer::Op;
using tokenizer::ScoreRef;

constexpr double kOnsetTolerance = 0.050;  // +-50 ms

struct MetricResult {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
  double accuracy = 1.0;  // TP / (TP + FP + FN)

  static MetricResult from_counts(long long tp, long long fp, long long fn) {
    MetricResult m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    // Empty-vs-empty convention: perfect scores.
    m.precision = (tp + fp) == 0 ? (fn == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / (tp + fp);
    m.recall = (tp + fn) == 0 ? (fp == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / (tp + fn);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.accuracy = (tp + fp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp + fn);
    return m;
  }
};

inline nlohmann::json to_json(const MetricResult& m) {
  return {{"tp", m.tp},       {"fp", m.fp},           {"fn", m.fn},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"accuracy", m.accuracy}};
}

// ---------------------------------------------------------------------------
// Mistake derivation

struct MatchedPair {
  PerfNote perf;
  ScoreRef score;
};

struct MistakeReport {
  std::vector<MatchedPair> correct;  // Match
  std::vector<PerfNote> extra;       // Insert
  std::vector<ScoreRef> missed;      // Delete
};

inline MistakeReport derive_mistakes(const std::vector<AlignRecord>& records) {
  MistakeReport report;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AlignRecord& r = records[i];
    tokenizer::validate_record(r, i);
    switch (r.op) {
      case Op::Match: report.correct.push_back({*r.perf, *r.score}); break;
      case Op::Insert: report.extra.push_back(*r.perf); break;
      case Op::Delete: report.missed.push_back(*r.score); break;
    }
  }
  return report;
}

inline nlohmann::json to_json(const MistakeReport& r) {
  nlohmann::json j;
  j["counts"] = {{"correct", r.correct.size()}, {"extra", r.extra.size()}, {"missed", r.missed.size()}};
  j["correct"] = nlohmann::json::array();
  for (const auto& p : r.correct)
    j["correct"].push_back({{"perf_onset_s", p.perf.onset_s},
                            {"pitch", p.perf.pitch},
                            {"score_bar", p.score.linear_bar},
                            {"score_pos", p.score.pos_ticks},
                            {"pass", p.score.pass_number}});
  j["extra"] = nlohmann::json::array();
  for (const auto& n : r.extra)
    j["extra"].push_back({{"onset_s", n.onset_s}, {"dur_s", n.dur_s}, {"pitch", n.pitch},
                          {"velocity", n.velocity}});
  j["missed"] = nlohmann::json::array();
  for (const auto& n : r.missed)
    j["missed"].push_back({{"bar", n.linear_bar}, {"pos", n.pos_ticks}, {"pitch", n.pitch},
                           {"pass", n.pass_number}});
  return j;
}

// ---------------------------------------------------------------------------
// F_align: alignment decisions as a set comparison. A predicted record is a
// true positive when truth contains a record with the same op and the same
// note identities (indices into the shared universes; repeat passes are
// distinct because unfolded score indices are distinct).

inline MetricResult f_align(const std::vector<AlignRecord>& pred,
                            const std::vector<AlignRecord>& truth) {
  using Key = std::tuple<int, int, int, bool>;
  auto key_of = [](const AlignRecord& r) -> Key {
    return {static_cast<int>(r.op), r.perf ? r.perf_index : -1, r.score ? r.score->index : -1,
            r.repeat_flag};
  };
  auto validate = [](const std::vector<AlignRecord>& rs, const char* which) {
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const auto& r = rs[i];
      if (r.perf && r.perf_index < 0)
        throw ValidationError(std::string(which) + " record " + std::to_string(i) +
                              " has a performance note without an index");
      if (r.score && r.score->index < 0)
        throw ValidationError(std::string(which) + " record " + std::to_string(i) +
                              " has a score note without an index");
    }
  };
  validate(pred, "predicted");
  validate(truth, "truth");

  // Universe consistency: the same index must mean the same note on both sides.
  {
    std::map<int, double> perf_onset;
    std::map<int, std::pair<int, int>> score_pos;
    auto absorb = [&](const std::vector<AlignRecord>& rs) {
      for (const auto& r : rs) {
        if (r.perf) {
          auto [it, fresh] = perf_onset.emplace(r.perf_index, r.perf->onset_s);
          if (!fresh && std::abs(it->second - r.perf->onset_s) > 1e-9)
            throw ValidationError("record lists reference different performance universes");
        }
        if (r.score) {
          auto [it, fresh] = score_pos.emplace(r.score->index,
                                               std::make_pair(r.score->linear_bar,
                                                              r.score->pos_ticks));
          if (!fresh && it->second != std::make_pair(r.score->linear_bar, r.score->pos_ticks))
            throw ValidationError("record lists reference different score universes");
        }
      }
    };
    absorb(pred);
    absorb(truth);
  }

  std::multiset<Key> truth_keys;
  for (const auto& r : truth) truth_keys.insert(key_of(r));
  long long tp = 0, fp = 0;
  for (const auto& r : pred) {
    auto it = truth_keys.find(key_of(r));
    if (it != truth_keys.end()) {
      truth_keys.erase(it);
      ++tp;
    } else {
      ++fp;
    }
  }
  long long fn = static_cast<long long>(truth_keys.size());
  return MetricResult::from_counts(tp, fp, fn);
}

// ---------------------------------------------------------------------------
// Bipartite maximum matching (Kuhn's augmenting paths). Deterministic for a
// fixed adjacency order.

namespace detail {

class BipartiteMatcher {
 public:
  BipartiteMatcher(std::size_t left, std::size_t right)
      : adj_(left), match_left_(left, -1), match_right_(right, -1) {}

  void add_edge(std::size_t l, std::size_t r) { adj_[l].push_back(static_cast<int>(r)); }

  int solve() {
    int matched = 0;
    for (std::size_t l = 0; l < adj_.size(); ++l) {
      std::vector<bool> visited(match_right_.size(), false);
      if (try_augment(static_cast<int>(l), visited)) ++matched;
    }
    return matched;
  }

  const std::vector<int>& left_matches() const { return match_left_; }

 private:
  bool try_augment(int l, std::vector<bool>& visited) {
    for (int r : adj_[static_cast<std::size_t>(l)]) {
      if (visited[static_cast<std::size_t>(r)]) continue;
      visited[static_cast<std::size_t>(r)] = true;
      if (match_right_[static_cast<std::size_t>(r)] < 0 ||
          try_augment(match_right_[static_cast<std::size_t>(r)], visited)) {
        match_left_[static_cast<std::size_t>(l)] = r;
        match_right_[static_cast<std::size_t>(r)] = l;
        return true;
      }
    }
    return false;
  }

  std::vector<std::vector<int>> adj_;
  std::vector<int> match_left_;
  std::vector<int> match_right_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Transcription metrics

struct TranscriptionResult {
  MetricResult onset;       // F_on
  MetricResult off_vel;     // F_off-vel
  double mae_vel = 0.0;     // raw 0-127 units over onset-matched pairs
};

inline nlohmann::json to_json(const TranscriptionResult& t) {
  return {{"f_on", to_json(t.onset)}, {"f_off_vel", to_json(t.off_vel)}, {"mae_vel", t.mae_vel}};
}

// Note-level transcription evaluation.
//   F_on: maximum bipartite matching under |d onset| <= 50 ms and equal pitch.
//   F_off-vel: additionally offset within max(50 ms, 20% of ref duration) and
//     a velocity criterion: reference velocities min-max scaled to [0,1]
//     (range floored at 1 raw unit), a least-squares affine fit maps matched
//     estimate velocities onto that scale, and a pair passes when
//     |fitted - ref| <= 0.1. Pairs failing velocity are dropped from the
//     offset matching rather than re-matched.
//   MAE_vel: mean |v_est - v_ref| over the onset-matched pairs.
inline TranscriptionResult transcription_f1(const std::vector<PerfNote>& est,
                                            const std::vector<PerfNote>& ref) {
  for (const auto& n : est)
    if (n.velocity < 1 || n.velocity > 127)
      throw ValidationError("estimate velocity outside [1,127]");
  for (const auto& n : ref)
    if (n.velocity < 1 || n.velocity > 127)
      throw ValidationError("reference velocity outside [1,127]");

  TranscriptionResult out;
  const std::size_t E = est.size(), R = ref.size();

  auto onset_ok = [&](std::size_t e, std::size_t r) {
    return est[e].pitch == ref[r].pitch &&
           std::abs(est[e].onset_s - ref[r].onset_s) <= kOnsetTolerance;
  };
  auto offset_ok = [&](std::size_t e, std::size_t r) {
    double tol = std::max(kOnsetTolerance, 0.2 * ref[r].dur_s);
    double est_off = est[e].onset_s + est[e].dur_s;
    double ref_off = ref[r].onset_s + ref[r].dur_s;
    return std::abs(est_off - ref_off) <= tol;
  };

  // Onset matching.
  detail::BipartiteMatcher onset_matcher(E, R);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t r = 0; r < R; ++r)
      if (onset_ok(e, r)) onset_matcher.add_edge(e, r);
  long long on_tp = onset_matcher.solve();
  out.onset = MetricResult::from_counts(on_tp, static_cast<long long>(E) - on_tp,
                                        static_cast<long long>(R) - on_tp);

  // Velocity MAE over the onset-matched pairs.
  double mae_sum = 0.0;
  long long mae_n = 0;
  for (std::size_t e = 0; e < E; ++e) {
    int r = onset_matcher.left_matches()[e];
    if (r < 0) continue;
    mae_sum += std::abs(static_cast<double>(est[e].velocity) -
                        ref[static_cast<std::size_t>(r)].velocity);
    ++mae_n;
  }
  out.mae_vel = mae_n > 0 ? mae_sum / static_cast<double>(mae_n) : 0.0;

  // Onset+offset matching, then the velocity filter on the matched pairs.
  detail::BipartiteMatcher off_matcher(E, R);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t r = 0; r < R; ++r)
      if (onset_ok(e, r) && offset_ok(e, r)) off_matcher.add_edge(e, r);
  off_matcher.solve();

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t e = 0; e < E; ++e)
    if (off_matcher.left_matches()[e] >= 0)
      pairs.push_back({e, static_cast<std::size_t>(off_matcher.left_matches()[e])});

  long long ov_tp = 0;
  if (!pairs.empty()) {
    double ref_min = 127.0, ref_max = 1.0;
    for (const auto& n : ref) {
      ref_min = std::min(ref_min, static_cast<double>(n.velocity));
      ref_max = std::max(ref_max, static_cast<double>(n.velocity));
    }
    double range = std::max(1.0, ref_max - ref_min);
    auto scaled = [&](int v) { return (v - ref_min) / range; };

    // Least-squares affine fit of matched estimate velocities onto the scaled
    // reference velocities. Degenerate spread -> slope 0, intercept = mean.
    double mean_e = 0.0, mean_r = 0.0;
    for (const auto& [e, r] : pairs) {
      mean_e += est[e].velocity;
      mean_r += scaled(ref[r].velocity);
    }
    mean_e /= static_cast<double>(pairs.size());
    mean_r /= static_cast<double>(pairs.size());
    double cov = 0.0, var = 0.0;
    for (const auto& [e, r] : pairs) {
      cov += (est[e].velocity - mean_e) * (scaled(ref[r].velocity) - mean_r);
      var += (est[e].velocity - mean_e) * (est[e].velocity - mean_e);
    }
    double slope = var > 0.0 ? cov / var : 0.0;
    double intercept = mean_r - slope * mean_e;
    for (const auto& [e, r] : pairs) {
      double fitted = slope * est[e].velocity + intercept;
      if (std::abs(fitted - scaled(ref[r].velocity)) <= 0.1) ++ov_tp;
    }
  }
  out.off_vel = MetricResult::from_counts(ov_tp, static_cast<long long>(E) - ov_tp,
                                          static_cast<long long>(R) - ov_tp);
  return out;
}

// ---------------------------------------------------------------------------
// Mistake-detection metrics. Perf-side classes (correct, extra) match by
// equal pitch and onset within 50 ms (maximum bipartite); the score-side
// class (missed) matches by exact (bar, pos, pitch, pass).

struct MistakeMetrics {
  MetricResult correct;
  MetricResult extra;
  MetricResult missed;
};

inline nlohmann::json to_json(const MistakeMetrics& m) {
  return {{"correct", to_json(m.correct)}, {"extra", to_json(m.extra)}, {"missed", to_json(m.missed)}};
}

namespace detail {

inline MetricResult match_perf_side(const std::vector<PerfNote>& pred,
                                    const std::vector<PerfNote>& truth) {
  BipartiteMatcher matcher(pred.size(), truth.size());
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t t = 0; t < truth.size(); ++t)
      if (pred[p].pitch == truth[t].pitch &&
          std::abs(pred[p].onset_s - truth[t].onset_s) <= kOnsetTolerance)
        matcher.add_edge(p, t);
  long long tp = matcher.solve();
  return MetricResult::from_counts(tp, static_cast<long long>(pred.size()) - tp,
                                   static_cast<long long>(truth.size()) - tp);
}

inline MetricResult match_score_side(const std::vector<ScoreRef>& pred,
                                     const std::vector<ScoreRef>& truth) {
  using Key = std::tuple<int, int, int, int>;
  std::multiset<Key> keys;
  for (const auto& n : truth) keys.insert({n.linear_bar, n.pos_ticks, n.pitch, n.pass_number});
  long long tp = 0;
  for (const auto& n : pred) {
    Key k{n.linear_bar, n.pos_ticks, n.pitch, n.pass_number};
    auto it = keys.find(k);
    if (it != keys.end()) {
      keys.erase(it);
      ++tp;
    }
  }
  return MetricResult::from_counts(tp, static_cast<long long>(pred.size()) - tp,
                                   static_cast<long long>(keys.size()));
}

}  // namespace detail

inline MistakeMetrics mistake_metrics(const MistakeReport& pred, const MistakeReport& truth) {
  MistakeMetrics out;
  std::vector<PerfNote> pred_correct, truth_correct;
  for (const auto& p : pred.correct) pred_correct.push_back(p.perf);
  for (const auto& p : truth.correct) truth_correct.push_back(p.perf);
  out.correct = detail::match_perf_side(pred_correct, truth_correct);
  out.extra = detail::match_perf_side(pred.extra, truth.extra);
  out.missed = detail::match_score_side(pred.missed, truth.missed);
  return out;
}

}  // namespace scoreperf::analysis
