#pragma once

// Desk-scale tri-stream decoder. Each block: pre-norm causal self-attention,
// cross-attention over audio frames, cross-attention over score bar vectors
// (or a single cross-attention over the concatenated memories when the
// ablation flag is set), then a gated FFN: down(silu(gate x) * (up x)).
// The final hidden state splits into three streams; each channel's per-field
// softmax heads read their channel's stream slice. Same-named fields in the
// performance and score channels use separate embedding tables.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "scoreperf/common.hpp"
#include "scoreperf/neural/tensor.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/tokenizer.hpp"

namespace scoreperf::neural {

using tokenizer::Field;
using tokenizer::kFieldCount;
using tokenizer::TriStep;

struct DecoderConfig {
  int d_model = 48;
  int n_blocks = 2;
  int n_heads = 4;
  int ffn_hidden = 96;
  int char_dim = 4;          // per-character embedding in the score patch encoder
  int max_seq = 256;
  int max_audio_frames = 1024;
  int max_score_bars = 56;   // header + up to 50 bars, some slack
  bool concat_memory = false;  // ablation: one cross-attention over [audio; score]

  void validate() const {
    if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
    if (d_model < 3) throw ValidationError("d_model too small for three streams");
  }

  // Stream widths: floor(d/3), floor(d/3), remainder.
  std::array<int, 3> stream_widths() const {
    int w = d_model / 3;
    return {w, w, d_model - 2 * w};
  }
};

inline nlohmann::json to_json(const DecoderConfig& c) {
  return {{"d_model", c.d_model},       {"n_blocks", c.n_blocks},
          {"n_heads", c.n_heads},       {"ffn_hidden", c.ffn_hidden},
          {"char_dim", c.char_dim},     {"max_seq", c.max_seq},
          {"max_audio_frames", c.max_audio_frames}, {"max_score_bars", c.max_score_bars},
          {"concat_memory", c.concat_memory}};
}

inline DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.char_dim = j.value("char_dim", c.char_dim);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.max_audio_frames = j.value("max_audio_frames", c.max_audio_frames);
  c.max_score_bars = j.value("max_score_bars", c.max_score_bars);
  c.concat_memory = j.value("concat_memory", c.concat_memory);
  return c;
}

// Character vocabulary for bar patches: printable ASCII 32..126 plus unknown.
constexpr int kCharVocab = 96;  // id 0 = unknown

inline int char_id(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  if (u >= 32 && u <= 126) return u - 32 + 1;
  return 0;
}

// Which stream feeds each field's head: perf fields -> 0, score fields -> 1,
// align fields and the global marker -> 2.
inline int stream_of_field(Field f) {
  int i = static_cast<int>(f);
  if (i <= static_cast<int>(Field::PerfSkip)) return 0;
  if (i <= static_cast<int>(Field::ScoreSkip)) return 1;
  return 2;
}

// ---------------------------------------------------------------------------
// Parameter construction

template <class S>
ParamStore<S> init_params(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  tokenizer::check_vocab();
  ParamStore<S> p;
  Rng rng(seed);
  auto fill_normal = [&](Mat<S>& m, double stddev) {
    for (auto& x : m.v) x = static_cast<S>(rng.normal() * stddev);
  };
  auto dense = [&](const std::string& name, int rows, int cols, double stddev) {
    fill_normal(p.add(name, rows, cols), stddev);
  };
  auto zeros = [&](const std::string& name, int rows, int cols) { p.add(name, rows, cols); };
  auto ones = [&](const std::string& name, int cols) {
    Mat<S>& m = p.add(name, 1, cols);
    std::fill(m.v.begin(), m.v.end(), S(1));
  };

  const int d = cfg.d_model;
  const double emb_std = 0.02;
  const double w_std = 0.02;

  for (int f = 0; f < kFieldCount; ++f)
    dense(std::string("emb.") + tokenizer::fields()[static_cast<std::size_t>(f)].name,
          tokenizer::fields()[static_cast<std::size_t>(f)].size, d, emb_std);
  dense("pos.seq", cfg.max_seq, d, emb_std);
  dense("pos.audio", cfg.max_audio_frames, d, emb_std);
  dense("pos.score", cfg.max_score_bars, d, emb_std);
  dense("patch.char_emb", kCharVocab, cfg.char_dim, emb_std);
  dense("patch.proj.w", 64 * cfg.char_dim, d, w_std);
  zeros("patch.proj.b", 1, d);

  auto attn_block = [&](const std::string& prefix) {
    dense(prefix + ".wq", d, d, w_std);
    dense(prefix + ".wk", d, d, w_std);
    dense(prefix + ".wv", d, d, w_std);
    dense(prefix + ".wo", d, d, w_std);
  };
  for (int b = 0; b < cfg.n_blocks; ++b) {
    std::string blk = "blk" + std::to_string(b);
    ones(blk + ".ln1.g", d);
    zeros(blk + ".ln1.b", 1, d);
    attn_block(blk + ".self");
    ones(blk + ".ln2.g", d);
    zeros(blk + ".ln2.b", 1, d);
    if (cfg.concat_memory) {
      attn_block(blk + ".xmem");
    } else {
      attn_block(blk + ".xaudio");
      ones(blk + ".ln3.g", d);
      zeros(blk + ".ln3.b", 1, d);
      attn_block(blk + ".xscore");
    }
    ones(blk + ".ln4.g", d);
    zeros(blk + ".ln4.b", 1, d);
    dense(blk + ".ffn.gate.w", d, cfg.ffn_hidden, w_std);
    zeros(blk + ".ffn.gate.b", 1, cfg.ffn_hidden);
    dense(blk + ".ffn.up.w", d, cfg.ffn_hidden, w_std);
    zeros(blk + ".ffn.up.b", 1, cfg.ffn_hidden);
    dense(blk + ".ffn.down.w", cfg.ffn_hidden, d, w_std);
    zeros(blk + ".ffn.down.b", 1, d);
  }
  ones("final_ln.g", d);
  zeros("final_ln.b", 1, d);

  auto widths = cfg.stream_widths();
  for (int f = 0; f < kFieldCount; ++f) {
    const auto& info = tokenizer::fields()[static_cast<std::size_t>(f)];
    int sw = widths[static_cast<std::size_t>(stream_of_field(static_cast<Field>(f)))];
    dense(std::string("head.") + info.name + ".w", sw, info.size, w_std);
    zeros(std::string("head.") + info.name + ".b", 1, info.size);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic audio features: 88-bin key activity per 1/12 s frame (velocity
// scaled to [0,1] while the note sounds), projected to d_model by a fixed
// seeded random matrix. A stand-in for a frozen audio encoder.

constexpr double kAudioFrameRate = 12.0;
constexpr std::uint64_t kAudioProjSeed = 0xA0D10FEA7ULL;

template <class S>
Mat<S> render_audio_features(const std::vector<perf_ir::PerfNote>& perf, double seconds,
                             int d_model, std::uint64_t seed = kAudioProjSeed) {
  for (const auto& n : perf)
    if (n.onset_s < 0.0 || n.onset_s + n.dur_s > seconds + 1e-9)
      throw ValidationError("performance note outside [0, seconds]");
  int frames = std::max(1, static_cast<int>(std::ceil(kAudioFrameRate * seconds)));
  Mat<double> activity(frames, 88);
  for (const auto& n : perf) {
    int f0 = static_cast<int>(std::floor(n.onset_s * kAudioFrameRate));
    int f1 = static_cast<int>(std::ceil((n.onset_s + n.dur_s) * kAudioFrameRate));
    for (int f = std::max(0, f0); f < std::min(frames, f1); ++f) {
      // Frame [f/12,(f+1)/12) must genuinely overlap the sounding interval.
      double fs = f / kAudioFrameRate, fe = (f + 1) / kAudioFrameRate;
      if (fe <= n.onset_s || fs >= n.onset_s + n.dur_s) continue;
      int bin = n.pitch - perf_ir::kPitchMin;
      if (bin < 0 || bin >= 88) continue;
      activity.at(f, bin) = std::max(activity.at(f, bin), n.velocity / 127.0);
    }
  }
  // Fixed projection, regenerated from the seed (not a trainable parameter).
  Rng rng(seed);
  Mat<double> proj(88, d_model);
  double scale = 1.0 / std::sqrt(88.0);
  for (auto& x : proj.v) x = rng.normal() * scale;
  Mat<S> out(frames, d_model);
  for (int f = 0; f < frames; ++f)
    for (int j = 0; j < d_model; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 88; ++k) acc += activity.at(f, k) * proj.at(k, j);
      out.at(f, j) = static_cast<S>(acc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

template <class S>
struct Forward {
  typename Graph<S>::Ref hidden;                       // [L x d]
  std::array<typename Graph<S>::Ref, kFieldCount> logits;  // per field [L x vocab]
};

// Score patches -> one vector per patch: 64 char embeddings stacked and
// linearly projected to d_model.
template <class S>
typename Graph<S>::Ref embed_score_patches(Graph<S>& g, ParamStore<S>& params,
                                           const std::vector<std::string>& patches,
                                           const DecoderConfig& cfg) {
  if (patches.empty()) throw ValidationError("no score patches");
  if (static_cast<int>(patches.size()) > cfg.max_score_bars)
    throw ValidationError("too many score patches");
  std::vector<int> ids;
  ids.reserve(patches.size() * 64);
  for (const auto& p : patches) {
    if (p.size() != 64) throw ValidationError("bar patch is not exactly 64 chars");
    for (char c : p) ids.push_back(char_id(c));
  }
  auto chars = g.gather_rows(g.leaf(params, "patch.char_emb"), std::move(ids));
  auto rows = g.reshape(chars, static_cast<int>(patches.size()), 64 * cfg.char_dim);
  auto projected = g.matmul(rows, g.leaf(params, "patch.proj.w"));
  return g.add_rowvec(projected, g.leaf(params, "patch.proj.b"));
}

namespace detail {

template <class S>
typename Graph<S>::Ref attention(Graph<S>& g, ParamStore<S>& params, const std::string& prefix,
                                 typename Graph<S>::Ref x, typename Graph<S>::Ref memory,
                                 int n_heads, bool causal) {
  using Ref = typename Graph<S>::Ref;
  const int d = g.value(x).cols;
  const int dh = d / n_heads;
  Ref q = g.matmul(x, g.leaf(params, prefix + ".wq"));
  Ref k = g.matmul(memory, g.leaf(params, prefix + ".wk"));
  Ref v = g.matmul(memory, g.leaf(params, prefix + ".wv"));
  std::vector<Ref> heads;
  S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int h = 0; h < n_heads; ++h) {
    Ref qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Ref kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Ref vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Ref scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    Ref probs = g.softmax_rows(scores, causal);
    heads.push_back(g.matmul(probs, vh));
  }
  return g.matmul(g.concat_cols(heads), g.leaf(params, prefix + ".wo"));
}

template <class S>
typename Graph<S>::Ref layernorm_named(Graph<S>& g, ParamStore<S>& params,
                                       const std::string& prefix, typename Graph<S>::Ref x) {
  return g.layernorm(x, g.leaf(params, prefix + ".g"), g.leaf(params, prefix + ".b"));
}

template <class S>
typename Graph<S>::Ref gated_ffn(Graph<S>& g, ParamStore<S>& params, const std::string& blk,
                                 typename Graph<S>::Ref x) {
  using Ref = typename Graph<S>::Ref;
  Ref gate = g.add_rowvec(g.matmul(x, g.leaf(params, blk + ".ffn.gate.w")),
                          g.leaf(params, blk + ".ffn.gate.b"));
  Ref up = g.add_rowvec(g.matmul(x, g.leaf(params, blk + ".ffn.up.w")),
                        g.leaf(params, blk + ".ffn.up.b"));
  Ref mixed = g.mul(g.silu(gate), up);
  return g.add_rowvec(g.matmul(mixed, g.leaf(params, blk + ".ffn.down.w")),
                      g.leaf(params, blk + ".ffn.down.b"));
}

inline std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

}  // namespace detail

// Decoder forward over an input step prefix. `audio` is a constant features
// matrix [frames x d]; `score_mem` a graph ref [bars x d] (so gradients reach
// the patch encoder). Returns per-field logits for every position.
template <class S>
Forward<S> decoder_forward(Graph<S>& g, ParamStore<S>& params, const DecoderConfig& cfg,
                           const std::vector<TriStep>& steps_in,
                           typename Graph<S>::Ref audio, typename Graph<S>::Ref score_mem) {
  using Ref = typename Graph<S>::Ref;
  cfg.validate();
  const int L = static_cast<int>(steps_in.size());
  if (L == 0) throw ValidationError("empty input prefix");
  if (L > cfg.max_seq) throw ValidationError("input prefix longer than max_seq");
  if (g.value(audio).rows > cfg.max_audio_frames)
    throw ValidationError("audio memory longer than max_audio_frames");
  if (g.value(score_mem).rows > cfg.max_score_bars)
    throw ValidationError("score memory longer than max_score_bars");

  // Input embedding: sum of every field's embedding plus learned positions.
  std::vector<Ref> embs;
  for (int f = 0; f < kFieldCount; ++f) {
    std::vector<int> ids(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i)
      ids[static_cast<std::size_t>(i)] =
          steps_in[static_cast<std::size_t>(i)].id[static_cast<std::size_t>(f)];
    embs.push_back(g.gather_rows(
        g.leaf(params, std::string("emb.") + tokenizer::fields()[static_cast<std::size_t>(f)].name),
        std::move(ids)));
  }
  embs.push_back(g.gather_rows(g.leaf(params, "pos.seq"), detail::iota_ids(L)));
  Ref x = g.sum_list(embs);

  // Memories with their own learned positions.
  Ref audio_mem = g.add(audio, g.gather_rows(g.leaf(params, "pos.audio"),
                                             detail::iota_ids(g.value(audio).rows)));
  Ref score_pos = g.gather_rows(g.leaf(params, "pos.score"),
                                detail::iota_ids(g.value(score_mem).rows));
  Ref score_with_pos = g.add(score_mem, score_pos);

  for (int b = 0; b < cfg.n_blocks; ++b) {
    std::string blk = "blk" + std::to_string(b);
    Ref normed = detail::layernorm_named(g, params, blk + ".ln1", x);
    x = g.add(x, detail::attention(g, params, blk + ".self", normed, normed, cfg.n_heads,
                                   /*causal=*/true));
    if (cfg.concat_memory) {
      Ref memory = g.concat_rows({audio_mem, score_with_pos});
      x = g.add(x, detail::attention(g, params, blk + ".xmem",
                                     detail::layernorm_named(g, params, blk + ".ln2", x), memory,
                                     cfg.n_heads, false));
    } else {
      x = g.add(x, detail::attention(g, params, blk + ".xaudio",
                                     detail::layernorm_named(g, params, blk + ".ln2", x),
                                     audio_mem, cfg.n_heads, false));
      x = g.add(x, detail::attention(g, params, blk + ".xscore",
                                     detail::layernorm_named(g, params, blk + ".ln3", x),
                                     score_with_pos, cfg.n_heads, false));
    }
    x = g.add(x, detail::gated_ffn(g, params, blk,
                                   detail::layernorm_named(g, params, blk + ".ln4", x)));
  }
  x = detail::layernorm_named(g, params, "final_ln", x);

  Forward<S> out;
  out.hidden = x;
  auto widths = cfg.stream_widths();
  std::array<Ref, 3> streams = {
      g.slice_cols(x, 0, widths[0]),
      g.slice_cols(x, widths[0], widths[0] + widths[1]),
      g.slice_cols(x, widths[0] + widths[1], cfg.d_model),
  };
  for (int f = 0; f < kFieldCount; ++f) {
    const auto& info = tokenizer::fields()[static_cast<std::size_t>(f)];
    Ref stream = streams[static_cast<std::size_t>(stream_of_field(static_cast<Field>(f)))];
    out.logits[static_cast<std::size_t>(f)] =
        g.add_rowvec(g.matmul(stream, g.leaf(params, std::string("head.") + info.name + ".w")),
                     g.leaf(params, std::string("head.") + info.name + ".b"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervision: per field and target step, the target id and loss weight.
// Fields silenced by an exclusive token train toward their silence id; the
// micro fields (no silence id) are masked out at steps where their channel
// carries no note.

inline bool perf_channel_has_note(const TriStep& s) { return s[Field::PerfT] != 0; }
inline bool score_channel_has_note(const TriStep& s) { return s[Field::ScoreBar] != 0; }

inline std::pair<int, double> supervision(const TriStep& target, Field f) {
  int id = target[f];
  if (f == Field::PerfTMicro) return {id, perf_channel_has_note(target) ? 1.0 : 0.0};
  if (f == Field::ScorePosMicro) return {id, score_channel_has_note(target) ? 1.0 : 0.0};
  return {id, 1.0};
}

template <class S>
struct LossResult {
  typename Graph<S>::Ref total;   // [1 x 1] sum over fields and positions
  double weight_total = 0.0;      // number of supervised field predictions
};

// Sum of per-field cross entropies against the target steps. `targets[i]`
// supervises position i of the logits (the caller shifts inputs/targets).
template <class S>
LossResult<S> decoder_loss(Graph<S>& g, const Forward<S>& fwd,
                           const std::vector<TriStep>& targets) {
  const int L = g.value(fwd.logits[0]).rows;
  if (static_cast<int>(targets.size()) != L)
    throw ValidationError("target length does not match logits");
  for (std::size_t i = 0; i < targets.size(); ++i) tokenizer::classify_step(targets[i], i);

  LossResult<S> out;
  std::vector<typename Graph<S>::Ref> parts;
  for (int f = 0; f < kFieldCount; ++f) {
    std::vector<int> tgt(static_cast<std::size_t>(L));
    std::vector<S> w(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
      auto [id, weight] = supervision(targets[static_cast<std::size_t>(i)], static_cast<Field>(f));
      tgt[static_cast<std::size_t>(i)] = id;
      w[static_cast<std::size_t>(i)] = static_cast<S>(weight);
      out.weight_total += weight;
    }
    parts.push_back(g.ce_rows(fwd.logits[static_cast<std::size_t>(f)], std::move(tgt), std::move(w)));
  }
  out.total = g.add_scalars(parts);
  return out;
}

// Per-field argmax accuracy over the supervised positions.
struct FieldAccuracy {
  std::array<long long, kFieldCount> correct{};
  std::array<long long, kFieldCount> total{};

  double field_accuracy(int f) const {
    return total[static_cast<std::size_t>(f)] == 0
               ? 1.0
               : static_cast<double>(correct[static_cast<std::size_t>(f)]) /
                     static_cast<double>(total[static_cast<std::size_t>(f)]);
  }

  double min_field_accuracy() const {
    double m = 1.0;
    for (int f = 0; f < kFieldCount; ++f) m = std::min(m, field_accuracy(f));
    return m;
  }

  double overall() const {
    long long c = 0, t = 0;
    for (int f = 0; f < kFieldCount; ++f) {
      c += correct[static_cast<std::size_t>(f)];
      t += total[static_cast<std::size_t>(f)];
    }
    return t == 0 ? 1.0 : static_cast<double>(c) / static_cast<double>(t);
  }

  void merge(const FieldAccuracy& other) {
    for (int f = 0; f < kFieldCount; ++f) {
      correct[static_cast<std::size_t>(f)] += other.correct[static_cast<std::size_t>(f)];
      total[static_cast<std::size_t>(f)] += other.total[static_cast<std::size_t>(f)];
    }
  }
};

template <class S>
FieldAccuracy token_accuracy(const Graph<S>& g, const Forward<S>& fwd,
                             const std::vector<TriStep>& targets) {
  FieldAccuracy acc;
  const int L = static_cast<int>(targets.size());
  for (int f = 0; f < kFieldCount; ++f) {
    const Mat<S>& logits = g.value(fwd.logits[static_cast<std::size_t>(f)]);
    for (int i = 0; i < L; ++i) {
      auto [id, weight] = supervision(targets[static_cast<std::size_t>(i)], static_cast<Field>(f));
      if (weight == 0.0) continue;
      int best = 0;
      for (int j = 1; j < logits.cols; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      acc.total[static_cast<std::size_t>(f)]++;
      if (best == id) acc.correct[static_cast<std::size_t>(f)]++;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Greedy decoding with exclusive-token repair: argmax per field; when an
// exclusive field wins its head, the other multi-class fields of its channel
// are forced to silence. Stops at EOS or max_steps.

template <class S>
std::vector<TriStep> greedy_decode(ParamStore<S>& params, const DecoderConfig& cfg,
                                   const Mat<S>& audio_features,
                                   const std::vector<std::string>& patches, int max_steps) {
  std::vector<TriStep> steps;
  steps.push_back(tokenizer::bos_step());
  for (int iter = 0; iter < max_steps; ++iter) {
    Graph<S> g;
    auto audio = g.constant(audio_features);
    auto score_mem = embed_score_patches(g, params, patches, cfg);
    Forward<S> fwd = decoder_forward(g, params, cfg, steps, audio, score_mem);
    const int last = static_cast<int>(steps.size()) - 1;

    std::array<int, kFieldCount> pick{};
    for (int f = 0; f < kFieldCount; ++f) {
      const Mat<S>& logits = g.value(fwd.logits[static_cast<std::size_t>(f)]);
      int best = 0;
      for (int j = 1; j < logits.cols; ++j)
        if (logits.at(last, j) > logits.at(last, best)) best = j;
      pick[static_cast<std::size_t>(f)] = best;
    }

    if (pick[static_cast<std::size_t>(Field::Global)] == 2) {
      steps.push_back(tokenizer::eos_step());
      break;
    }

    TriStep s = tokenizer::silent_step();
    auto set_all = [&](std::initializer_list<Field> fs) {
      for (Field f : fs) s[f] = static_cast<std::uint8_t>(pick[static_cast<std::size_t>(f)]);
    };
    // Performance channel: T.Reset wins over skip, either one silences it.
    if (pick[static_cast<std::size_t>(Field::PerfReset)] == 1) {
      s[Field::PerfReset] = 1;
    } else if (pick[static_cast<std::size_t>(Field::PerfSkip)] == 1) {
      s[Field::PerfSkip] = 1;
    } else {
      set_all({Field::PerfT, Field::PerfTMicro, Field::PerfVel, Field::PerfDur, Field::PerfPitch});
      // The micro head is unsupervised when the channel carries no onset;
      // canonicalize it, as encode does.
      if (s[Field::PerfT] == 0) s[Field::PerfTMicro] = tokenizer::kMicroRange;
    }
    // Score channel: TimeSig wins over skip.
    if (pick[static_cast<std::size_t>(Field::ScoreTimeSig)] != 0) {
      s[Field::ScoreTimeSig] =
          static_cast<std::uint8_t>(pick[static_cast<std::size_t>(Field::ScoreTimeSig)]);
    } else if (pick[static_cast<std::size_t>(Field::ScoreSkip)] == 1) {
      s[Field::ScoreSkip] = 1;
    } else {
      set_all({Field::ScoreBar, Field::ScorePos, Field::ScorePosMicro, Field::ScoreDur,
               Field::ScorePitch});
      if (s[Field::ScoreBar] == 0) s[Field::ScorePosMicro] = tokenizer::kMicroRange;
    }
    // Alignment channel: its skip is reserved; op and repeat decode as-is.
    set_all({Field::AlignOp, Field::AlignRepeat});

    steps.push_back(s);
    if (static_cast<int>(steps.size()) >= cfg.max_seq) break;
  }
  return steps;
}

// Weak form of the invariant used by the repair tests: an active exclusive
// token forces every other multi-class field of its channel to silence.
inline bool exclusive_invariant_ok(const TriStep& s) {
  bool perf_silent = tokenizer::detail::perf_channel_silent(s);
  bool score_silent = tokenizer::detail::score_channel_silent(s);
  bool align_silent = tokenizer::detail::align_channel_silent(s);
  if (s[Field::Global] != 0 && !(perf_silent && score_silent && align_silent)) return false;
  if ((s[Field::PerfReset] != 0 || s[Field::PerfSkip] != 0) && !perf_silent) return false;
  if (s[Field::ScoreSkip] != 0 && !score_silent) return false;
  if (s[Field::ScoreTimeSig] != 0) {
    TriStep t = s;
    t[Field::ScoreTimeSig] = 0;
    if (!tokenizer::detail::score_channel_silent(t)) return false;
  }
  if (s[Field::AlignSkip] != 0 && !align_silent) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Gradient check: central finite differences against the tape, on randomly
// probed parameter coordinates.

struct GradCheckSample {
  std::vector<TriStep> steps;          // full sequence BOS..EOS
  std::vector<std::string> patches;
  Mat<double> audio;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int probes = 0;
};

inline GradCheckResult grad_check(ParamStore<double>& params, const DecoderConfig& cfg,
                                  const GradCheckSample& sample, int min_probes = 200,
                                  double epsilon = 1e-4, std::uint64_t seed = 7) {
  std::vector<TriStep> input(sample.steps.begin(), sample.steps.end() - 1);
  std::vector<TriStep> targets(sample.steps.begin() + 1, sample.steps.end());

  auto eval = [&]() -> double {
    Graph<double> g;
    auto audio = g.constant(sample.audio);
    auto score_mem = embed_score_patches(g, params, sample.patches, cfg);
    Forward<double> fwd = decoder_forward(g, params, cfg, input, audio, score_mem);
    LossResult<double> loss = decoder_loss(g, fwd, targets);
    return g.value(loss.total).at(0, 0);
  };

  params.zero_grad();
  {
    Graph<double> g;
    auto audio = g.constant(sample.audio);
    auto score_mem = embed_score_patches(g, params, sample.patches, cfg);
    Forward<double> fwd = decoder_forward(g, params, cfg, input, audio, score_mem);
    LossResult<double> loss = decoder_loss(g, fwd, targets);
    g.backward(loss.total);
  }

  // Probe uniformly across parameter tensors: every tensor gets at least one
  // probe, the rest are random coordinates.
  Rng rng(seed);
  std::vector<std::pair<std::string, std::size_t>> probes;
  for (const auto& [name, m] : params.value)
    probes.push_back({name, rng.below(m.size())});
  while (static_cast<int>(probes.size()) < min_probes) {
    // pick tensor weighted by element count
    std::size_t total = params.count();
    std::size_t flat = rng.below(total);
    for (const auto& [name, m] : params.value) {
      if (flat < m.size()) {
        probes.push_back({name, flat});
        break;
      }
      flat -= m.size();
    }
  }

  GradCheckResult result;
  result.probes = static_cast<int>(probes.size());
  for (const auto& [name, idx] : probes) {
    double saved = params.at(name).v[idx];
    params.at(name).v[idx] = saved + epsilon;
    double up = eval();
    params.at(name).v[idx] = saved - epsilon;
    double down = eval();
    params.at(name).v[idx] = saved;
    double fd = (up - down) / (2.0 * epsilon);
    double an = params.grad.at(name).v[idx];
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = name + "[" + std::to_string(idx) + "]";
    }
  }
  return result;
}

}  // namespace scoreperf::neural
