// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Scale-wise flow matching head. One parameter set serves every scale: the
// model runs over the h*w tokens of a scale with bidirectional attention and
// predicts the velocity that moves noise toward the target token map, guided
// by the autoregressive semantics. The default conditioning is spatially
// adaptive layer normalization (per-position scale/shift/gate derived from
// the semantics plus the time embedding); the alternative injection schemes,
// per-token granularity and the epsilon-prediction target are selectable for
// ablation runs.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scaleflow/codec.hpp"
#include "scaleflow/nn.hpp"
#include "scaleflow/pyramid.hpp"
#include "scaleflow/random.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

enum class Injection { spatial_adaln, adaln, addition, cross_attention, seq_concat, channel_concat };
enum class TargetMode { flow_velocity, diffusion_epsilon };
enum class Granularity { per_scale, per_token };
enum class LossReduction { sum_scales, mean_scales };

inline Injection injection_from(const std::string& s) {
  if (s == "spatial_adaln") return Injection::spatial_adaln;
  if (s == "adaln") return Injection::adaln;
  if (s == "addition") return Injection::addition;
  if (s == "cross_attention") return Injection::cross_attention;
  if (s == "seq_concat") return Injection::seq_concat;
  if (s == "channel_concat") return Injection::channel_concat;
  throw ConfigError("unknown injection mode '" + s + "'");
}

inline std::string injection_str(Injection m) {
  switch (m) {
    case Injection::spatial_adaln: return "spatial_adaln";
    case Injection::adaln: return "adaln";
    case Injection::addition: return "addition";
    case Injection::cross_attention: return "cross_attention";
    case Injection::seq_concat: return "seq_concat";
    case Injection::channel_concat: return "channel_concat";
  }
  return "?";
}

inline TargetMode target_mode_from(const std::string& s) {
  if (s == "flow_velocity") return TargetMode::flow_velocity;
  if (s == "diffusion_epsilon") return TargetMode::diffusion_epsilon;
  throw ConfigError("unknown target mode '" + s + "'");
}

inline std::string target_mode_str(TargetMode m) {
  return m == TargetMode::flow_velocity ? "flow_velocity" : "diffusion_epsilon";
}

inline Granularity granularity_from(const std::string& s) {
  if (s == "per_scale") return Granularity::per_scale;
  if (s == "per_token") return Granularity::per_token;
  throw ConfigError("unknown granularity '" + s + "'");
}

inline std::string granularity_str(Granularity g) { return g == Granularity::per_scale ? "per_scale" : "per_token"; }

struct FlowConfig {
  int64_t depth = 2;
  int64_t width = 128;
  int64_t heads = 4;
  double mlp_ratio = 4.0;
  Injection injection = Injection::spatial_adaln;
  TargetMode target = TargetMode::flow_velocity;
  Granularity granularity = Granularity::per_scale;
  int64_t latent_channels = 48;
  int64_t sem_width = 128;

  void validate() const {
    require(depth >= 1 && width >= 1 && heads >= 1, "flow config: depth/width/heads must be positive");
    require(width % heads == 0,
            "flow config: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
};

// Straight-path interpolant between noise and data.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& s_i, const Tensor<T>& noise0, double t) {
  require(s_i.shape() == noise0.shape(),
          "interpolate: shapes " + shape_str(s_i.shape()) + " and " + shape_str(noise0.shape()) + " differ");
  require(t >= 0.0 && t <= 1.0, "interpolate: t=" + std::to_string(t) + " outside [0,1]");
  return add(scale(s_i, static_cast<T>(t)), scale(noise0, static_cast<T>(1.0 - t)));
}

// Constant velocity of the straight path; independent of t.
template <typename T>
Tensor<T> velocity_target(const Tensor<T>& s_i, const Tensor<T>& noise0) {
  require(s_i.shape() == noise0.shape(),
          "velocity_target: shapes " + shape_str(s_i.shape()) + " and " + shape_str(noise0.shape()) + " differ");
  return sub(s_i, noise0);
}

// Cosine signal level for the epsilon-prediction variant; exact at the
// endpoints so t=1 noising is pure noise.
inline double cosine_alpha_bar(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  const double c = std::cos(1.5707963267948966 * t);
  return c * c;
}

template <typename T>
class FlowModel {
 public:
  FlowModel() = default;

  FlowModel(const FlowConfig& cfg, Tape<T>& tape, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int64_t w = cfg.width;
    const int64_t in_ch = cfg.injection == Injection::channel_concat ? cfg.latent_channels + cfg.sem_width
                                                                     : cfg.latent_channels;
    in_proj_ = Linear<T>(in_ch, w, tape, rng);
    sem_proj_ = Linear<T>(cfg.sem_width, w, tape, rng);
    t_fc1_ = Linear<T>(w, w, tape, rng);
    t_fc2_ = Linear<T>(w, w, tape, rng);
    const int64_t hidden = static_cast<int64_t>(cfg.mlp_ratio * static_cast<double>(w));
    const bool adaln = uses_adaln();
    for (int64_t d = 0; d < cfg.depth; ++d) {
      Layer layer;
      layer.attn = MultiHeadAttention<T>(w, cfg.heads, tape, rng);
      layer.mlp = Mlp<T>(w, hidden, tape, rng);
      if (adaln) {
        layer.mod = Linear<T>(w, 6 * w, tape, rng, 0.02, /*zero_init=*/true);
      } else {
        layer.ln1 = LayerNormAffine<T>(w, tape);
        layer.ln2 = LayerNormAffine<T>(w, tape);
        if (cfg.injection == Injection::cross_attention) {
          layer.ln_x = LayerNormAffine<T>(w, tape);
          layer.cross = MultiHeadAttention<T>(w, cfg.heads, tape, rng);
        }
      }
      layers_.push_back(std::move(layer));
    }
    if (!adaln) final_ln_ = LayerNormAffine<T>(w, tape);
    out_proj_ = Linear<T>(w, cfg.latent_channels, tape, rng, 0.02, /*zero_init=*/true);
  }

  const FlowConfig& config() const { return cfg_; }

  // Switches structural modes that share the same parameter set. Only valid
  // between modes with identical parameter shapes (spatial_adaln <-> adaln,
  // per_scale <-> per_token, flow <-> diffusion).
  void set_injection(Injection m) {
    require(uses_adaln() == (m == Injection::spatial_adaln || m == Injection::adaln),
            "set_injection: incompatible parameterization");
    cfg_.injection = m;
  }
  void set_granularity(Granularity g) { cfg_.granularity = g; }
  void set_target(TargetMode m) { cfg_.target = m; }

  // Velocity (or epsilon) prediction over the tokens of one scale.
  // x_tokens: [B, L, c], semantics: [B, L, sem_width], t: one value per batch
  // row. Attention is bidirectional within the scale; per_token granularity
  // restricts it to each token itself.
  Tensor<T> forward_tokens(const Tensor<T>& x_tokens, const Tensor<T>& semantics,
                           const std::vector<double>& t) const {
    require(x_tokens.dim() == 3 && semantics.dim() == 3,
            "fm_forward: expected [B,L,c] tokens, got " + shape_str(x_tokens.shape()) + " and " +
                shape_str(semantics.shape()));
    require(x_tokens.size(0) == semantics.size(0) && x_tokens.size(1) == semantics.size(1),
            "fm_forward: token grid " + shape_str(x_tokens.shape()) + " and semantics " +
                shape_str(semantics.shape()) + " do not align");
    require(x_tokens.size(2) == cfg_.latent_channels && semantics.size(2) == cfg_.sem_width,
            "fm_forward: channel mismatch for " + shape_str(x_tokens.shape()) + " / " + shape_str(semantics.shape()));
    const int64_t b = x_tokens.size(0), l = x_tokens.size(1);
    require(static_cast<int64_t>(t.size()) == b, "fm_forward: need one time value per batch row");

    Tensor<T> t_emb = time_embedding(t);                      // [B,1,W]
    Tensor<T> cond = add(sem_proj_.forward(semantics), t_emb);  // [B,L,W]

    Tensor<T> x;
    switch (cfg_.injection) {
      case Injection::channel_concat:
        x = add(in_proj_.forward(concat<T>({x_tokens, semantics}, 2)), t_emb);
        break;
      case Injection::addition:
        x = add(in_proj_.forward(x_tokens), cond);
        break;
      default:
        x = add(in_proj_.forward(x_tokens), t_emb);
        break;
    }

    Tensor<T> mod_source = cond;
    if (cfg_.injection == Injection::adaln) mod_source = mean_dim(cond, 1);  // spatially averaged semantics

    const bool seq_cat = cfg_.injection == Injection::seq_concat;
    if (seq_cat) x = concat<T>({x, cond}, 1);  // [B, 2L, W]

    AttnMask self_mask;
    const AttnMask* mask = nullptr;
    if (cfg_.granularity == Granularity::per_token) {
      self_mask = AttnMask::identity(x.size(1));
      mask = &self_mask;
    }
    last_attn_seq_len_ = x.size(1);

    for (const auto& layer : layers_) {
      if (uses_adaln()) {
        Tensor<T> mod = layer.mod.forward(gelu(mod_source));  // [B, L or 1, 6W]
        const int64_t w = cfg_.width;
        Tensor<T> g1 = narrow(mod, 2, 0 * w, w), b1 = narrow(mod, 2, 1 * w, w), a1 = narrow(mod, 2, 2 * w, w);
        Tensor<T> g2 = narrow(mod, 2, 3 * w, w), b2 = narrow(mod, 2, 4 * w, w), a2 = narrow(mod, 2, 5 * w, w);
        // scale acts as (1 + g) so the zero-initialized state is plain LN
        Tensor<T> h = add(mul(layernorm(x), add_scalar(g1, T(1))), b1);
        x = add(x, mul(layer.attn.forward(h, mask), a1));
        Tensor<T> h2 = add(mul(layernorm(x), add_scalar(g2, T(1))), b2);
        x = add(x, mul(layer.mlp.forward(h2), a2));
      } else {
        x = add(x, layer.attn.forward(layer.ln1.forward(x), mask));
        if (cfg_.injection == Injection::cross_attention) {
          x = add(x, layer.cross.forward(layer.ln_x.forward(x), cond, nullptr));
        }
        x = add(x, layer.mlp.forward(layer.ln2.forward(x)));
      }
    }

    if (seq_cat) x = narrow(x, 1, 0, l);
    Tensor<T> y = uses_adaln() ? layernorm(x) : final_ln_.forward(x);
    return out_proj_.forward(y);
  }

  // Spatial wrapper: F_t and the prediction as [B,c,h,w] (or [c,h,w]) maps,
  // semantics as [B, h*w, sem_width] tokens.
  Tensor<T> fm_forward(const Tensor<T>& f_t, const Tensor<T>& semantics, const std::vector<double>& t) const {
    const bool batched = f_t.dim() == 4;
    require(batched || f_t.dim() == 3, "fm_forward: F_t must be [c,h,w] or [B,c,h,w]");
    Tensor<T> map = batched ? f_t : reshape(f_t, {1, f_t.size(0), f_t.size(1), f_t.size(2)});
    const int64_t h = map.size(2), w = map.size(3);
    require(semantics.dim() == 3 && semantics.size(1) == h * w,
            "fm_forward: semantics " + shape_str(semantics.shape()) + " does not cover an " + std::to_string(h) + "x" +
                std::to_string(w) + " grid");
    Tensor<T> pred = forward_tokens(detail::map_to_tokens(map), semantics, t);
    Tensor<T> out = detail::tokens_to_map(pred, h, w);
    return batched ? out : reshape(out, {out.size(1), out.size(2), out.size(3)});
  }

  // predictor(scale_index, x_t_tokens, semantics_tokens, t) -> prediction.
  using Predictor = std::function<Tensor<T>(int64_t, const Tensor<T>&, const Tensor<T>&, const std::vector<double>&)>;

  // Training objective for one batch: per scale, fresh (t, noise) pairs, the
  // squared error against the scale's target, averaged over elements; scales
  // are then summed (or averaged). The predictor seam lets diagnostics swap
  // in reference predictors against the same draws.
  Tensor<T> fm_loss_with(const LatentPyramid<T>& pyramid, const SemanticsSet<T>& semantics, Rng& rng,
                         LossReduction reduction, const Predictor& predict) const {
    require(pyramid.scales.size() == semantics.per_scale.size(),
            "fm_loss: pyramid and semantics scale counts differ");
    Tensor<T> total;
    const int64_t n = static_cast<int64_t>(pyramid.scales.size());
    for (int64_t i = 0; i < n; ++i) {
      const Tensor<T>& s_map = pyramid.scales[static_cast<size_t>(i)];
      require(s_map.dim() == 4, "fm_loss: pyramid scales must be [B,c,h,w]");
      const int64_t b = s_map.size(0);
      Tensor<T> s = detail::map_to_tokens(s_map);  // [B,L,c]
      std::vector<double> t(static_cast<size_t>(b));
      for (auto& tv : t) tv = rng.uniform();
      Tensor<T> noise(s.shape());
      rng.fill_normal(noise.vals());

      Tensor<T> t_col({b, 1, 1});
      Tensor<T> one_minus_t({b, 1, 1});
      for (int64_t r = 0; r < b; ++r) {
        t_col.vals()[static_cast<size_t>(r)] = static_cast<T>(t[static_cast<size_t>(r)]);
        one_minus_t.vals()[static_cast<size_t>(r)] = static_cast<T>(1.0 - t[static_cast<size_t>(r)]);
      }

      Tensor<T> x_t, target;
      if (cfg_.target == TargetMode::flow_velocity) {
        x_t = add(mul(s, t_col), mul(noise, one_minus_t));
        target = sub(s, noise);
      } else {
        Tensor<T> sqrt_ab({b, 1, 1}), sqrt_1mab({b, 1, 1});
        for (int64_t r = 0; r < b; ++r) {
          const double ab = cosine_alpha_bar(t[static_cast<size_t>(r)]);
          sqrt_ab.vals()[static_cast<size_t>(r)] = static_cast<T>(std::sqrt(ab));
          sqrt_1mab.vals()[static_cast<size_t>(r)] = static_cast<T>(std::sqrt(1.0 - ab));
        }
        x_t = add(mul(s, sqrt_ab), mul(noise, sqrt_1mab));
        target = noise;
      }

      Tensor<T> pred = predict(i, x_t, semantics.per_scale[static_cast<size_t>(i)], t);
      Tensor<T> term = mse(pred, target);
      total = (i == 0) ? term : add(total, term);
    }
    if (reduction == LossReduction::mean_scales) total = scale(total, T(1) / static_cast<T>(n));
    return total;
  }

  Tensor<T> fm_loss(const LatentPyramid<T>& pyramid, const SemanticsSet<T>& semantics, Rng& rng,
                    LossReduction reduction = LossReduction::sum_scales) const {
    return fm_loss_with(pyramid, semantics, rng, reduction,
                        [this](int64_t, const Tensor<T>& x_t, const Tensor<T>& sem, const std::vector<double>& t) {
                          return forward_tokens(x_t, sem, t);
              });
  }

  int64_t last_attention_seq_len() const { return last_attn_seq_len_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    in_proj_.collect(prefix + ".in_proj", out);
    sem_proj_.collect(prefix + ".sem_proj", out);
    t_fc1_.collect(prefix + ".t_fc1", out);
    t_fc2_.collect(prefix + ".t_fc2", out);
    for (size_t d = 0; d < layers_.size(); ++d) {
      const std::string lp = prefix + ".layers." + std::to_string(d);
      layers_[d].attn.collect(lp + ".attn", out);
      layers_[d].mlp.collect(lp + ".mlp", out);
      if (uses_adaln()) {
        layers_[d].mod.collect(lp + ".mod", out);
      } else {
        layers_[d].ln1.collect(lp + ".ln1", out);
        layers_[d].ln2.collect(lp + ".ln2", out);
        if (cfg_.injection == Injection::cross_attention) {
          layers_[d].ln_x.collect(lp + ".ln_x", out);
          layers_[d].cross.collect(lp + ".cross", out);
        }
      }
    }
    if (!uses_adaln()) final_ln_.collect(prefix + ".final_ln", out);
    out_proj_.collect(prefix + ".out_proj", out);
  }

 private:
  bool uses_adaln() const { return cfg_.injection == Injection::spatial_adaln || cfg_.injection == Injection::adaln; }

  Tensor<T> time_embedding(const std::vector<double>& t) const {
    const int64_t b = static_cast<int64_t>(t.size());
    Tensor<T> feats({b, cfg_.width});
    for (int64_t r = 0; r < b; ++r) {
      auto row = sinusoidal_features<T>(t[static_cast<size_t>(r)], cfg_.width);
      std::copy(row.begin(), row.end(), feats.vals().begin() + r * cfg_.width);
    }
    Tensor<T> e = t_fc2_.forward(gelu(t_fc1_.forward(feats)));  // [B,W]
    return reshape(e, {b, 1, cfg_.width});
  }

  struct Layer {
    MultiHeadAttention<T> attn;
    Mlp<T> mlp;
    Linear<T> mod;            // adaLN modes
    LayerNormAffine<T> ln1, ln2, ln_x;  // plain modes
    MultiHeadAttention<T> cross;        // cross_attention mode
  };

  FlowConfig cfg_;
  Linear<T> in_proj_, sem_proj_, t_fc1_, t_fc2_, out_proj_;
  std::vector<Layer> layers_;
  LayerNormAffine<T> final_ln_;
  mutable int64_t last_attn_seq_len_ = 0;
};

}  // namespace scaleflow
