// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training and sampling around the AR transformer + flow head pair:
// AdamW with decoupled weight decay, global-norm gradient clipping, linear
// warmup into a cosine learning-rate schedule, classifier-free guidance in
// velocity space, and Euler integration of the learned velocity field.
//
// All stochasticity is drawn from substreams keyed by (seed, step, purpose),
// which makes a resumed run replay the original trajectory bit-for-bit.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scaleflow/ar_model.hpp"
#include "scaleflow/codec.hpp"
#include "scaleflow/dataset.hpp"
#include "scaleflow/flow_model.hpp"
#include "scaleflow/pyramid.hpp"
#include "scaleflow/random.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

struct CodecSpec {
  std::string kind = "patch_identity";  // patch_identity | patch_ortho | patch_learned
  int64_t patch = 4;
  int64_t channels = 48;  // used by patch_learned only
  uint64_t seed = 0;
  int64_t fit_steps = 200;
  double fit_lr = 0.05;

  int64_t latent_channels() const { return kind == "patch_learned" ? channels : 3 * patch * patch; }

  void validate() const {
    require(kind == "patch_identity" || kind == "patch_ortho" || kind == "patch_learned",
            "codec: unknown kind '" + kind + "'");
    require(patch >= 1 && (patch & (patch - 1)) == 0, "codec: patch size must be a power of two");
    require(channels >= 1, "codec: channels must be positive");
  }
};

template <typename T>
std::shared_ptr<PatchCodec<T>> make_codec(const CodecSpec& spec) {
  spec.validate();
  if (spec.kind == "patch_identity") return std::make_shared<PatchCodec<T>>(PatchCodec<T>::identity(spec.patch));
  if (spec.kind == "patch_ortho") return std::make_shared<PatchCodec<T>>(PatchCodec<T>::orthonormal(spec.patch, spec.seed));
  return std::make_shared<PatchCodec<T>>(PatchCodec<T>::learned(spec.patch, spec.channels, spec.seed));
}

struct GenModelSpec {
  CodecSpec codec;
  std::vector<int64_t> scales = {1, 2, 4};
  PyramidFilter filter = PyramidFilter::avg_nearest;
  PyramidMode pyramid_mode = PyramidMode::latent;
  ARConfig ar;
  FlowConfig flow;

  // Derived fields (latent channel counts, semantics width) are stitched
  // together here so the pieces cannot drift apart.
  void finalize() {
    ar.latent_channels = codec.latent_channels();
    flow.latent_channels = codec.latent_channels();
    flow.sem_width = ar.width;
  }

  void validate() const {
    codec.validate();
    ar.validate();
    flow.validate();
    ScaleSchedule::square(scales);
  }
};

template <typename T>
struct GenModel {
  GenModelSpec spec;
  ScaleSchedule schedule;
  std::shared_ptr<PatchCodec<T>> codec;
  ARTransformer<T> ar;
  FlowModel<T> flow;
  Tensor<T> norm_mean, norm_std;  // [c,1,1], latent standardization
  std::shared_ptr<Tape<T>> tape;

  static GenModel build(GenModelSpec spec, uint64_t seed) {
    spec.finalize();
    spec.validate();
    GenModel m;
    m.spec = spec;
    m.schedule = ScaleSchedule::square(spec.scales);
    m.codec = make_codec<T>(spec.codec);
    m.tape = std::make_shared<Tape<T>>();
    Rng rng_ar = Rng::stream(seed, 1, 17);
    Rng rng_flow = Rng::stream(seed, 2, 17);
    m.ar = ARTransformer<T>(spec.ar, m.schedule, *m.tape, rng_ar);
    m.flow = FlowModel<T>(spec.flow, *m.tape, rng_flow);
    const int64_t c = spec.codec.latent_channels();
    m.norm_mean = Tensor<T>::zeros({c, 1, 1});
    m.norm_std = Tensor<T>::ones({c, 1, 1});
    return m;
  }

  std::vector<std::pair<std::string, Tensor<T>>> params() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    ar.collect_params("ar", out);
    flow.collect_params("flow", out);
    return out;
  }

  // Per-channel standardization of latents; statistics come from the
  // training set and live in the checkpoint.
  Tensor<T> normalize(const Tensor<T>& latent) const {
    Tensor<T> centered = sub(latent, norm_mean);
    Tensor<T> inv = norm_std.detach();
    for (auto& v : inv.vals()) v = T(1) / v;
    return mul(centered, inv);
  }

  Tensor<T> denormalize(const Tensor<T>& latent) const { return add(mul(latent, norm_std), norm_mean); }

  // Standardized ground-truth pyramid for a batch of images.
  LatentPyramid<T> pyramid_for(const Tensor<T>& images) const {
    LatentPyramid<T> pyr = build_pyramid_from_image(images, *codec, schedule, spec.pyramid_mode, spec.filter);
    for (auto& s : pyr.scales) s = normalize(s);
    return pyr;
  }
};

template <typename T>
void fit_latent_stats(GenModel<T>& model, const Tensor<T>& images) {
  require(images.dim() == 4, "fit_latent_stats: images must be [N,3,H,W]");
  NoGradGuard<T> ng(*model.tape);
  const int64_t n = images.size(0);
  const int64_t c = model.codec->latent_channels();
  std::vector<double> sum(static_cast<size_t>(c), 0.0), sq(static_cast<size_t>(c), 0.0);
  int64_t count = 0;
  const int64_t chunk = 32;
  for (int64_t at = 0; at < n; at += chunk) {
    const int64_t len = std::min(chunk, n - at);
    Tensor<T> lat = model.codec->encode(narrow(images, 0, at, len));
    const int64_t hw = lat.size(2) * lat.size(3);
    for (int64_t b = 0; b < len; ++b) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = lat.vals().data() + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sum[static_cast<size_t>(ch)] += static_cast<double>(p[i]);
          sq[static_cast<size_t>(ch)] += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        }
      }
    }
    count += len * hw;
  }
  for (int64_t ch = 0; ch < c; ++ch) {
    const double mean = sum[static_cast<size_t>(ch)] / static_cast<double>(count);
    double var = sq[static_cast<size_t>(ch)] / static_cast<double>(count) - mean * mean;
    if (var < 0) var = 0;
    double sd = std::sqrt(var);
    if (sd < 1e-3) sd = 1e-3;  // dead channels
    model.norm_mean.vals()[static_cast<size_t>(ch)] = static_cast<T>(mean);
    model.norm_std.vals()[static_cast<size_t>(ch)] = static_cast<T>(sd);
  }
}

// ---------------------------------------------------------------------------
// Optimization

struct TrainConfig {
  double peak_lr = 2e-4;
  double min_lr = 1e-5;
  int64_t warmup_steps = 100;
  int64_t total_steps = 2000;
  int64_t batch_size = 64;
  double label_dropout = 0.1;
  double grad_clip_norm = 1.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  LossReduction reduction = LossReduction::sum_scales;

  void collect_errors(std::vector<std::string>& errors) const {
    if (!(min_lr <= peak_lr)) errors.push_back("train: min_lr must not exceed peak_lr");
    if (!(label_dropout >= 0.0 && label_dropout < 1.0)) errors.push_back("train: label_dropout must be in [0,1)");
    if (!(batch_size >= 1 && total_steps >= 1)) errors.push_back("train: batch/steps must be positive");
    if (!(warmup_steps >= 0 && warmup_steps < total_steps)) errors.push_back("train: warmup must be shorter than the run");
    if (!(grad_clip_norm > 0.0)) errors.push_back("train: grad_clip_norm must be positive");
  }

  void validate() const {
    std::vector<std::string> errors;
    collect_errors(errors);
    if (!errors.empty()) throw ShapeError(errors.front());
  }
};

// Linear warmup from zero, cosine decay to min_lr at the final step.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const int64_t last = cfg.total_steps - 1;
  if (step >= last) return cfg.min_lr;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(last - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Adaptive moments with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  void init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
    steps_ = 0;
  }

  int64_t steps() const { return steps_; }
  std::vector<std::vector<T>>& moment1() { return m_; }
  std::vector<std::vector<T>>& moment2() { return v_; }
  void set_steps(int64_t s) { steps_ = s; }

  // Returns the pre-clip global gradient norm.
  double step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr, const TrainConfig& cfg) {
    require(m_.size() == params.size(), "AdamW: not initialized for this parameter set");
    double norm_sq = 0;
    for (auto& [name, p] : params) {
      for (T g : p.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(norm_sq);
    const double scale = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second;
      auto& vals = p.vals();
      auto& grads = p.grad();
      if (grads.empty()) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < vals.size(); ++j) {
        const double g = static_cast<double>(grads[j]) * scale;
        const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * g;
        const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps);
        vals[j] = static_cast<T>(static_cast<double>(vals[j]) -
                                 lr * (update + cfg.weight_decay * static_cast<double>(vals[j])));
      }
    }
    return norm;
  }

 private:
  std::vector<std::vector<T>> m_, v_;
  int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Trainer

struct StepStats {
  int64_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

template <typename T>
class Trainer {
 public:
  Trainer(GenModel<T>& model, const Dataset<T>& data, const TrainConfig& cfg)
      : model_(model), data_(data), cfg_(cfg), params_(model.params()) {
    cfg.validate();
    require(data.count() >= 1, "trainer: empty dataset");
    require(data.spec.classes <= model.spec.ar.num_classes,
            "trainer: dataset has " + std::to_string(data.spec.classes) + " classes, model supports " +
                std::to_string(model.spec.ar.num_classes));
    // standardization statistics always come from the training set; a
    // checkpoint load afterwards overwrites them, which keeps resume exact
    fit_latent_stats(model_, data_.images);
    opt_.init(params_);
  }

  GenModel<T>& model() { return model_; }
  AdamW<T>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t step_index() const { return step_; }
  void set_step_index(int64_t s) { step_ = s; }

  StepStats train_step() {
    require(step_ < cfg_.total_steps, "trainer: run is already complete");
    Tape<T>& tape = *model_.tape;
    tape.set_enabled(true);
    tape.clear();

    // batch selection, label dropout and flow noise each use their own stream
    Rng pick = Rng::stream(cfg_.seed, static_cast<uint64_t>(step_), 1);
    Rng drop = Rng::stream(cfg_.seed, static_cast<uint64_t>(step_), 2);
    Rng noise = Rng::stream(cfg_.seed, static_cast<uint64_t>(step_), 3);

    std::vector<Tensor<T>> picks;
    std::vector<int64_t> ids;
    for (int64_t b = 0; b < cfg_.batch_size; ++b) {
      const int64_t i = pick.below(data_.count());
      picks.push_back(narrow(data_.images, 0, i, 1));
      int64_t id = data_.labels[static_cast<size_t>(i)];
      if (cfg_.label_dropout > 0 && drop.uniform() < cfg_.label_dropout) id = model_.ar.null_class();
      ids.push_back(id);
    }
    Tensor<T> images = concat(picks, 0);

    LatentPyramid<T> pyr = model_.pyramid_for(images);
    SemanticsSet<T> sem = model_.ar.training_forward(ids, pyr);
    Tensor<T> loss = model_.flow.fm_loss(pyr, sem, noise, cfg_.reduction);

    const double lr = lr_at(step_, cfg_);
    if (!loss.all_finite()) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " (lr=" + std::to_string(lr) +
                         ", last_grad_norm=" + std::to_string(last_grad_norm_) + ")");
    }

    for (auto& [name, p] : params_) p.zero_grad();
    tape.backward(loss);
    tape.clear();

    const double gnorm = opt_.step(params_, lr, cfg_);
    if (!std::isfinite(gnorm)) {
      throw NumericError("non-finite gradient norm at step " + std::to_string(step_) + " (lr=" + std::to_string(lr) +
                         ", loss=" + std::to_string(static_cast<double>(loss.item())) + ")");
    }
    last_grad_norm_ = gnorm;

    StepStats stats{step_, static_cast<double>(loss.item()), lr, gnorm};
    ++step_;
    return stats;
  }

 private:
  GenModel<T>& model_;
  const Dataset<T>& data_;
  TrainConfig cfg_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamW<T> opt_;
  int64_t step_ = 0;
  double last_grad_norm_ = 0;
};

// ---------------------------------------------------------------------------
// Sampling

struct SampleConfig {
  int64_t euler_steps = 25;
  double cfg_scale = 1.0;
  uint64_t seed = 0;

  void validate() const {
    require(euler_steps >= 1, "sample: euler_steps must be >= 1");
    require(cfg_scale >= 0.0, "sample: cfg_scale must be >= 0");
  }
};

namespace detail {

inline uint64_t image_stream_seed(uint64_t seed, int64_t image_index) {
  return splitmix64(seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(image_index + 1));
}

}  // namespace detail

// Generates latents for a batch of class ids, scale by scale: semantics from
// the cached AR transformer (conditional and, when guidance is active, null
// class), then Euler integration of the guided velocity from Gaussian noise.
// Noise is keyed per (seed, image index, scale) so results do not depend on
// batch grouping. Returns the standardized finest-scale latent [B,c,h,w].
template <typename T>
Tensor<T> sample_latent_batch(const GenModel<T>& model, const std::vector<int64_t>& class_ids,
                              const SampleConfig& cfg, int64_t first_image_index = 0) {
  cfg.validate();
  NoGradGuard<T> ng(*model.tape);
  const int64_t b = static_cast<int64_t>(class_ids.size());
  const int64_t c = model.codec->latent_channels();
  const ScaleSchedule& sched = model.schedule;
  const bool guided = cfg.cfg_scale != 1.0;

  KVCache<T> cache_c = model.ar.make_cache();
  KVCache<T> cache_n = model.ar.make_cache();
  std::vector<int64_t> null_ids(static_cast<size_t>(b), model.ar.null_class());

  Tensor<T> prev;
  for (int64_t i = 0; i < sched.num_scales(); ++i) {
    Tensor<T> sem_c = i == 0 ? model.ar.prefill_class(class_ids, cache_c) : model.ar.prefill_scale(prev, cache_c);
    Tensor<T> sem_n;
    if (guided) {
      sem_n = i == 0 ? model.ar.prefill_class(null_ids, cache_n) : model.ar.prefill_scale(prev, cache_n);
    }

    const auto [h, w] = sched.sizes[static_cast<size_t>(i)];
    Tensor<T> x({b, c, h, w});
    for (int64_t j = 0; j < b; ++j) {
      Rng rng = Rng::stream(detail::image_stream_seed(cfg.seed, first_image_index + j), static_cast<uint64_t>(i), 11);
      T* p = x.vals().data() + j * c * h * w;
      for (int64_t e = 0; e < c * h * w; ++e) p[e] = static_cast<T>(rng.normal());
    }

    if (model.spec.flow.target == TargetMode::flow_velocity) {
      const double dt = 1.0 / static_cast<double>(cfg.euler_steps);
      for (int64_t k = 0; k < cfg.euler_steps; ++k) {
        const std::vector<double> t(static_cast<size_t>(b), static_cast<double>(k) * dt);
        Tensor<T> v = model.flow.fm_forward(x, sem_c, t);
        if (guided) {
          Tensor<T> v_n = model.flow.fm_forward(x, sem_n, t);
          v = add(v_n, scale(sub(v, v_n), static_cast<T>(cfg.cfg_scale)));
        }
        x = add(x, scale(v, static_cast<T>(dt)));
      }
    } else {
      // deterministic epsilon-prediction sampling on an interior grid; the
      // endpoint itself is excluded because the signal level vanishes there
      const int64_t K = cfg.euler_steps;
      for (int64_t k = 0; k < K; ++k) {
        const double t_cur = (static_cast<double>(K - k) - 0.5) / static_cast<double>(K);
        const double t_next = k + 1 < K ? (static_cast<double>(K - k) - 1.5) / static_cast<double>(K) : 0.0;
        const std::vector<double> t(static_cast<size_t>(b), t_cur);
        Tensor<T> eps = model.flow.fm_forward(x, sem_c, t);
        if (guided) {
          Tensor<T> eps_n = model.flow.fm_forward(x, sem_n, t);
          eps = add(eps_n, scale(sub(eps, eps_n), static_cast<T>(cfg.cfg_scale)));
        }
        const double ab = cosine_alpha_bar(t_cur);
        const double ab_next = cosine_alpha_bar(t_next);
        // x0 = (x - sqrt(1-ab) eps) / sqrt(ab); x' = sqrt(ab') x0 + sqrt(1-ab') eps
        Tensor<T> x0 = scale(sub(x, scale(eps, static_cast<T>(std::sqrt(1.0 - ab)))),
                             static_cast<T>(1.0 / std::sqrt(ab)));
        x = add(scale(x0, static_cast<T>(std::sqrt(ab_next))), scale(eps, static_cast<T>(std::sqrt(1.0 - ab_next))));
      }
    }
    prev = x;
  }
  return prev;
}

// Single image [3,H,W] for one class id.
template <typename T>
Tensor<T> sample(const GenModel<T>& model, int64_t class_id, const SampleConfig& cfg, int64_t image_index = 0) {
  NoGradGuard<T> ng(*model.tape);
  Tensor<T> latent = sample_latent_batch(model, {class_id}, cfg, image_index);
  Tensor<T> image = model.codec->decode(model.denormalize(latent));
  return reshape(image, {image.size(1), image.size(2), image.size(3)});
}

}  // namespace scaleflow
