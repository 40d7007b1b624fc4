#pragma once

// Teacher-forced training with AdamW (decoupled weight decay) under a
// warmup + cosine learning-rate schedule, deterministic for a fixed seed on
// one thread. Checkpoints: magic, JSON config block, named parameter blobs as
// little-endian f32 (optimizer state rides along as opt.* blobs so a resumed
// run continues bit-identically).

#include <cstring>
#include <string>
#include <vector>

#include "json.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/neural/decoder.hpp"
#include "scoreperf/neural/tensor.hpp"
#include "scoreperf/synth.hpp"

namespace scoreperf::neural {

struct Schedule {
  double warmup_start_lr = 1e-3;
  double peak_lr = 1e-2;
  double final_lr = 1e-5;
  int warmup_steps = 100;
  int total_steps = 3000;

  double lr_at(int step) const {  // 1-based
    if (step <= warmup_steps && warmup_steps > 0)
      return warmup_start_lr +
             (peak_lr - warmup_start_lr) * static_cast<double>(step) / warmup_steps;
    if (total_steps <= warmup_steps) return peak_lr;
    double t = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
    t = std::min(1.0, std::max(0.0, t));
    return final_lr + 0.5 * (peak_lr - final_lr) *
                          (1.0 + std::cos(3.14159265358979323846 * t));
  }
};

struct TrainConfig {
  Schedule schedule;
  int batch_size = 8;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  int eval_every = 100;            // token-accuracy evaluation cadence
  double stop_at_accuracy = 1.0;   // early stop when min field accuracy reaches this
  bool early_stop = true;
};

template <class S>
struct AdamState {
  std::map<std::string, Mat<S>> m;
  std::map<std::string, Mat<S>> v;
  long long step = 0;

  void init(const ParamStore<S>& params) {
    for (const auto& [name, mat] : params.value) {
      m.emplace(name, Mat<S>(mat.rows, mat.cols));
      v.emplace(name, Mat<S>(mat.rows, mat.cols));
    }
    step = 0;
  }
};

template <class S>
void adamw_step(ParamStore<S>& params, AdamState<S>& state, const TrainConfig& cfg, double lr) {
  ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, value] : params.value) {
    Mat<S>& g = params.grad.at(name);
    Mat<S>& m = state.m.at(name);
    Mat<S>& v = state.v.at(name);
    for (std::size_t i = 0; i < value.v.size(); ++i) {
      double gi = static_cast<double>(g.v[i]);
      double mi = b1 * static_cast<double>(m.v[i]) + (1.0 - b1) * gi;
      double vi = b2 * static_cast<double>(v.v[i]) + (1.0 - b2) * gi * gi;
      m.v[i] = static_cast<S>(mi);
      v.v[i] = static_cast<S>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      double decayed = static_cast<double>(value.v[i]) * cfg.weight_decay;
      value.v[i] = static_cast<S>(static_cast<double>(value.v[i]) - lr * (update + decayed));
    }
  }
}

struct LossLogEntry {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;       // mean per supervised token, averaged over the batch
  double accuracy = -1.0;  // min field accuracy when evaluated, else -1
};

inline std::string loss_log_csv(const std::vector<LossLogEntry>& log) {
  std::string out = "step,lr,loss,min_field_accuracy\n";
  for (const auto& e : log) {
    out += std::to_string(e.step) + "," + format_double(e.lr) + "," + format_double(e.loss) + ",";
    out += e.accuracy >= 0.0 ? format_double(e.accuracy) : std::string("");
    out += "\n";
  }
  return out;
}

template <class S>
struct TrainResult {
  std::vector<LossLogEntry> log;
  FieldAccuracy final_accuracy;
  int steps_run = 0;
  bool reached_target = false;
};

// Pre-rendered inputs for one sample.
template <class S>
struct PreparedSample {
  std::vector<TriStep> input;    // steps[0..n-2]
  std::vector<TriStep> targets;  // steps[1..n-1]
  std::vector<std::string> patches;
  Mat<S> audio;
};

template <class S>
PreparedSample<S> prepare_sample(const synth::Sample& s, const DecoderConfig& cfg) {
  if (s.steps.size() < 2) throw ValidationError("sample has fewer than 2 steps");
  if (static_cast<int>(s.steps.size()) > cfg.max_seq)
    throw ValidationError("sample longer than max_seq");
  PreparedSample<S> out;
  out.input.assign(s.steps.begin(), s.steps.end() - 1);
  out.targets.assign(s.steps.begin() + 1, s.steps.end());
  out.patches = s.patches;
  out.audio = render_audio_features<S>(s.perf, s.seconds, cfg.d_model);
  return out;
}

template <class S>
FieldAccuracy evaluate_accuracy(ParamStore<S>& params, const DecoderConfig& cfg,
                                const std::vector<PreparedSample<S>>& samples) {
  FieldAccuracy acc;
  for (const auto& s : samples) {
    Graph<S> g;
    auto audio = g.constant(s.audio);
    auto score_mem = embed_score_patches(g, params, s.patches, cfg);
    Forward<S> fwd = decoder_forward(g, params, cfg, s.input, audio, score_mem);
    acc.merge(token_accuracy(g, fwd, s.targets));
  }
  return acc;
}

// Teacher-forced optimization. Batches are taken round-robin over the corpus
// (deterministic); gradients accumulate sequentially in sample order. Aborts
// on non-finite loss, keeping the last finite parameters. `until_step` caps
// this invocation without changing the schedule, so an interrupted run
// resumed from its checkpoint retraces the uninterrupted trajectory.
template <class S>
TrainResult<S> train(ParamStore<S>& params, AdamState<S>& opt, const DecoderConfig& cfg,
                     const TrainConfig& tcfg, const std::vector<synth::Sample>& corpus,
                     int start_step = 0, int until_step = -1) {
  if (corpus.empty()) throw ValidationError("empty corpus");
  std::vector<PreparedSample<S>> prepared;
  prepared.reserve(corpus.size());
  for (const auto& s : corpus) prepared.push_back(prepare_sample<S>(s, cfg));

  TrainResult<S> result;
  ParamStore<S> last_good = params;
  long long cursor = static_cast<long long>(start_step) * tcfg.batch_size;
  int last = tcfg.schedule.total_steps;
  if (until_step >= 0) last = std::min(last, until_step);

  for (int step = start_step + 1; step <= last; ++step) {
    params.zero_grad();
    double batch_loss = 0.0;
    for (int k = 0; k < tcfg.batch_size; ++k) {
      const PreparedSample<S>& s =
          prepared[static_cast<std::size_t>(cursor++ % static_cast<long long>(prepared.size()))];
      Graph<S> g;
      auto audio = g.constant(s.audio);
      auto score_mem = embed_score_patches(g, params, s.patches, cfg);
      Forward<S> fwd = decoder_forward(g, params, cfg, s.input, audio, score_mem);
      LossResult<S> loss = decoder_loss(g, fwd, s.targets);
      // Mean per supervised token, then averaged over the batch.
      double denom = loss.weight_total * tcfg.batch_size;
      auto scaled = g.scale(loss.total, static_cast<S>(1.0 / denom));
      g.backward(scaled);
      batch_loss += static_cast<double>(g.value(scaled).at(0, 0));
    }
    if (!std::isfinite(batch_loss)) {
      params = last_good;
      throw InternalError("training diverged (non-finite loss) at step " + std::to_string(step) +
                          "; last good parameters retained");
    }
    last_good = params;
    double lr = tcfg.schedule.lr_at(step);
    adamw_step(params, opt, tcfg, lr);

    LossLogEntry entry{step, lr, batch_loss, -1.0};
    if (tcfg.eval_every > 0 && (step % tcfg.eval_every == 0 || step == last)) {
      FieldAccuracy acc = evaluate_accuracy(params, cfg, prepared);
      entry.accuracy = acc.min_field_accuracy();
      result.final_accuracy = acc;
      result.log.push_back(entry);
      result.steps_run = step;
      if (tcfg.early_stop && entry.accuracy >= tcfg.stop_at_accuracy) {
        result.reached_target = true;
        return result;
      }
    } else {
      result.log.push_back(entry);
      result.steps_run = step;
    }
  }
  result.final_accuracy = evaluate_accuracy(params, cfg, prepared);
  result.reached_target = result.final_accuracy.min_field_accuracy() >= tcfg.stop_at_accuracy;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void push_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void push_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void push_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  push_u32(out, bits);
}

class CkptReader {
 public:
  explicit CkptReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t lo = u32(), hi = u32();
    return lo | (hi << 32);
  }

  float f32() {
    std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  bool eof() const { return pos_ >= data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw ParseError("checkpoint: truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

template <class S>
std::string save_checkpoint(const ParamStore<S>& params, const DecoderConfig& cfg,
                            const AdamState<S>* opt = nullptr) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  ckpt_detail::push_u32(out, kCheckpointVersion);
  std::string cfg_json = to_json(cfg).dump();
  ckpt_detail::push_u32(out, static_cast<std::uint32_t>(cfg_json.size()));
  out += cfg_json;

  auto blob = [&](const std::string& name, const Mat<S>& m) {
    ckpt_detail::push_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    ckpt_detail::push_u32(out, static_cast<std::uint32_t>(m.rows));
    ckpt_detail::push_u32(out, static_cast<std::uint32_t>(m.cols));
    for (S x : m.v) ckpt_detail::push_f32(out, static_cast<float>(x));
  };

  std::uint32_t n_blobs = static_cast<std::uint32_t>(params.value.size());
  if (opt) n_blobs += static_cast<std::uint32_t>(opt->m.size() + opt->v.size());
  ckpt_detail::push_u32(out, n_blobs);
  for (const auto& [name, m] : params.value) blob(name, m);
  if (opt) {
    for (const auto& [name, m] : opt->m) blob("opt.m." + name, m);
    for (const auto& [name, m] : opt->v) blob("opt.v." + name, m);
  }
  ckpt_detail::push_u64(out, opt ? static_cast<std::uint64_t>(opt->step) : 0);
  return out;
}

template <class S>
struct LoadedCheckpoint {
  ParamStore<S> params;
  DecoderConfig config;
  AdamState<S> opt;
  bool has_opt = false;
};

template <class S>
LoadedCheckpoint<S> load_checkpoint(std::string_view data) {
  if (data.size() < 8 || data.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw ParseError("checkpoint: bad magic");
  ckpt_detail::CkptReader rd(data.substr(4));
  if (rd.u32() != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
  std::uint32_t cfg_len = rd.u32();
  nlohmann::json cfg_json = nlohmann::json::parse(rd.bytes(cfg_len), nullptr, false);
  if (cfg_json.is_discarded()) throw ParseError("checkpoint: bad config block");

  LoadedCheckpoint<S> out;
  out.config = decoder_config_from_json(cfg_json);
  std::uint32_t n_blobs = rd.u32();
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    std::uint32_t name_len = rd.u32();
    std::string name = rd.bytes(name_len);
    std::uint32_t rows = rd.u32(), cols = rd.u32();
    Mat<S> m(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& x : m.v) x = static_cast<S>(rd.f32());
    if (name.rfind("opt.m.", 0) == 0) {
      out.opt.m.emplace(name.substr(6), std::move(m));
      out.has_opt = true;
    } else if (name.rfind("opt.v.", 0) == 0) {
      out.opt.v.emplace(name.substr(6), std::move(m));
      out.has_opt = true;
    } else {
      out.params.add(name, static_cast<int>(rows), static_cast<int>(cols)).v = std::move(m.v);
    }
  }
  out.opt.step = static_cast<long long>(rd.u64());
  if (!out.has_opt) out.opt.init(out.params);
  return out;
}

}  // namespace scoreperf::neural
