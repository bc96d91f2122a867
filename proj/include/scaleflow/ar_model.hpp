// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Scale-wise autoregressive transformer. One teacher-forced pass consumes the
// class token followed by each upsampled previous scale and emits semantics
// for every scale; a block-causal mask keeps scale i blind to scales > i.
// Inference runs the same blocks incrementally through a KV cache.
//
// Token blocks (0-based): block 0 is the class token; block b >= 1 holds the
// tokens of up(scale b-1) at the size of scale b. The output positions of
// block b are projected to the semantics of scale b, so semantics and target
// token maps always share a spatial shape.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scaleflow/nn.hpp"
#include "scaleflow/pyramid.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

struct ARConfig {
  int64_t depth = 4;
  int64_t width = 128;
  int64_t heads = 4;
  double mlp_ratio = 4.0;
  int64_t num_classes = 4;
  int64_t latent_channels = 48;

  void validate() const {
    require(depth >= 1 && width >= 1 && heads >= 1, "ar config: depth/width/heads must be positive");
    require(width % heads == 0,
            "ar config: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    require(num_classes >= 1, "ar config: num_classes must be positive");
  }
};

// Per-layer accumulated attention keys/values for incremental inference.
// Single-consumer; one generation stream per cache.
template <typename T>
struct KVCache {
  std::vector<Tensor<T>> k, v;  // per layer, [B, H, filled, dh]
  int64_t filled = 0;
  int64_t next_block = 0;

  explicit KVCache(int64_t depth) : k(static_cast<size_t>(depth)), v(static_cast<size_t>(depth)) {}
};

inline AttnMask build_block_causal_mask(const ScaleSchedule& schedule) {
  const int64_t n = schedule.ar_input_tokens();
  std::vector<int64_t> block_of(static_cast<size_t>(n));
  int64_t at = 0;
  block_of[static_cast<size_t>(at++)] = 0;
  for (int64_t b = 1; b < schedule.num_scales(); ++b) {
    for (int64_t t = 0; t < schedule.tokens(b); ++t) block_of[static_cast<size_t>(at++)] = b;
  }
  AttnMask mask(n, n, false);
  for (int64_t q = 0; q < n; ++q) {
    for (int64_t k = 0; k < n; ++k) mask.set(q, k, block_of[static_cast<size_t>(k)] <= block_of[static_cast<size_t>(q)]);
  }
  return mask;
}

template <typename T>
class ARTransformer {
 public:
  ARTransformer() = default;

  ARTransformer(const ARConfig& cfg, const ScaleSchedule& schedule, Tape<T>& tape, Rng& rng)
      : cfg_(cfg), schedule_(schedule), mask_(build_block_causal_mask(schedule)) {
    cfg.validate();
    const int64_t w = cfg.width;
    class_embed_ = Tensor<T>::randn({cfg.num_classes + 1, w}, rng, 0.02);  // last row = null class
    class_embed_.set_requires_grad(tape);
    in_proj_ = Linear<T>(cfg.latent_channels, w, tape, rng);
    scale_embed_ = Tensor<T>::randn({schedule.num_scales(), w}, rng, 0.02);
    scale_embed_.set_requires_grad(tape);
    pos_.push_back(Tensor<T>::randn({1, w}, rng, 0.02));
    for (int64_t b = 1; b < schedule.num_scales(); ++b) {
      pos_.push_back(Tensor<T>::randn({schedule.tokens(b), w}, rng, 0.02));
    }
    for (auto& p : pos_) p.set_requires_grad(tape);
    const int64_t hidden = static_cast<int64_t>(cfg.mlp_ratio * static_cast<double>(w));
    for (int64_t d = 0; d < cfg.depth; ++d) {
      layers_.push_back(Layer{LayerNormAffine<T>(w, tape), MultiHeadAttention<T>(w, cfg.heads, tape, rng),
                              LayerNormAffine<T>(w, tape), Mlp<T>(w, hidden, tape, rng)});
    }
    final_ln_ = LayerNormAffine<T>(w, tape);
    head_ = Linear<T>(w, w, tape, rng);
  }

  const ARConfig& config() const { return cfg_; }
  const ScaleSchedule& schedule() const { return schedule_; }
  const AttnMask& mask() const { return mask_; }
  int64_t null_class() const { return cfg_.num_classes; }

  // Teacher-forced pass over ground-truth scales. pyramid scales are
  // [B, c, h_i, w_i]; returns semantics [B, tokens(i), W] per scale.
  SemanticsSet<T> training_forward(const std::vector<int64_t>& class_ids, const LatentPyramid<T>& pyramid) const {
    require(static_cast<int64_t>(pyramid.scales.size()) == schedule_.num_scales(),
            "training_forward: pyramid has " + std::to_string(pyramid.scales.size()) + " scales, schedule " +
                schedule_.str());
    for (int64_t i = 0; i < schedule_.num_scales(); ++i) {
      const auto& s = pyramid.scales[static_cast<size_t>(i)];
      require(s.size(-2) == schedule_.sizes[static_cast<size_t>(i)].first &&
                  s.size(-1) == schedule_.sizes[static_cast<size_t>(i)].second,
              "training_forward: scale " + std::to_string(i) + " shape " + shape_str(s.shape()) +
                  " does not match schedule " + schedule_.str());
    }

    std::vector<Tensor<T>> blocks;
    blocks.push_back(embed_class(class_ids));
    for (int64_t b = 1; b < schedule_.num_scales(); ++b) {
      blocks.push_back(embed_scale_block(b, pyramid.scales[static_cast<size_t>(b - 1)]));
    }
    Tensor<T> x = concat(blocks, 1);  // [B, L, W]
    for (const auto& layer : layers_) {
      x = add(x, layer.attn.forward(layer.ln1.forward(x), &mask_));
      x = add(x, layer.mlp.forward(layer.ln2.forward(x)));
    }
    x = head_.forward(final_ln_.forward(x));

    SemanticsSet<T> out;
    int64_t at = 0;
    for (int64_t b = 0; b < schedule_.num_scales(); ++b) {
      const int64_t len = b == 0 ? 1 : schedule_.tokens(b);
      Tensor<T> sem = narrow(x, 1, at, len);
      at += len;
      if (b == 0 && schedule_.tokens(0) != 1) sem = tile_tokens(sem, schedule_.tokens(0));
      out.per_scale.push_back(std::move(sem));
    }
    return out;
  }

  KVCache<T> make_cache() const { return KVCache<T>(cfg_.depth); }

  // First inference step: class token only; yields semantics for scale 0.
  Tensor<T> prefill_class(const std::vector<int64_t>& class_ids, KVCache<T>& cache) const {
    require(cache.next_block == 0 && cache.filled == 0,
            "prefill_class: cache already holds " + std::to_string(cache.filled) + " tokens");
    Tensor<T> sem = run_cached(embed_class(class_ids), cache);
    cache.next_block = 1;
    if (schedule_.tokens(0) != 1) sem = tile_tokens(sem, schedule_.tokens(0));
    return sem;
  }

  // Step i (1-based block index): consumes the previous scale's token map and
  // yields semantics for scale i.
  Tensor<T> prefill_scale(const Tensor<T>& prev_scale, KVCache<T>& cache) const {
    const int64_t b = cache.next_block;
    require(b >= 1 && b < schedule_.num_scales(), "prefill_scale: no further scales to generate");
    int64_t expected = 1;
    for (int64_t j = 1; j < b; ++j) expected += schedule_.tokens(j);
    require(cache.filled == expected, "prefill_scale: cache holds " + std::to_string(cache.filled) +
                                          " tokens, expected " + std::to_string(expected) + " before block " +
                                          std::to_string(b));
    const auto [ph, pw] = schedule_.sizes[static_cast<size_t>(b - 1)];
    require(prev_scale.size(-2) == ph && prev_scale.size(-1) == pw,
            "prefill_scale: previous scale " + shape_str(prev_scale.shape()) + " does not match schedule size " +
                std::to_string(ph) + "x" + std::to_string(pw));
    Tensor<T> sem = run_cached(embed_scale_block(b, prev_scale), cache);
    cache.next_block = b + 1;
    return sem;
  }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    out.emplace_back(prefix + ".class_embed", class_embed_);
    out.emplace_back(prefix + ".scale_embed", scale_embed_);
    for (size_t b = 0; b < pos_.size(); ++b) out.emplace_back(prefix + ".pos." + std::to_string(b), pos_[b]);
    in_proj_.collect(prefix + ".in_proj", out);
    for (size_t d = 0; d < layers_.size(); ++d) {
      const std::string lp = prefix + ".layers." + std::to_string(d);
      layers_[d].ln1.collect(lp + ".ln1", out);
      layers_[d].attn.collect(lp + ".attn", out);
      layers_[d].ln2.collect(lp + ".ln2", out);
      layers_[d].mlp.collect(lp + ".mlp", out);
    }
    final_ln_.collect(prefix + ".final_ln", out);
    head_.collect(prefix + ".head", out);
  }

  Tensor<T>& class_embedding() { return class_embed_; }

 private:
  struct Layer {
    LayerNormAffine<T> ln1;
    MultiHeadAttention<T> attn;
    LayerNormAffine<T> ln2;
    Mlp<T> mlp;
  };

  Tensor<T> embed_class(const std::vector<int64_t>& class_ids) const {
    for (int64_t id : class_ids) {
      require(id >= 0 && id <= cfg_.num_classes,
              "class id " + std::to_string(id) + " out of range [0," + std::to_string(cfg_.num_classes) + "]");
    }
    const int64_t b = static_cast<int64_t>(class_ids.size());
    Tensor<T> tok = reshape(embedding(class_embed_, class_ids), {b, 1, cfg_.width});
    tok = add(tok, pos_[0]);
    return add(tok, narrow(scale_embed_, 0, 0, 1));
  }

  // Block b >= 1: upsample scale b-1 to the size of scale b, project to model
  // width, add the block's grid and scale-index embeddings.
  Tensor<T> embed_scale_block(int64_t b, const Tensor<T>& prev_scale) const {
    Tensor<T> grown = up(prev_scale, schedule_.ratio(b));
    Tensor<T> tokens = detail::map_to_tokens(grown.dim() == 3 ? reshape(grown, unsqueeze(grown.shape())) : grown);
    Tensor<T> x = in_proj_.forward(tokens);
    x = add(x, pos_[static_cast<size_t>(b)]);
    return add(x, narrow(scale_embed_, 0, b, 1));
  }

  // Shared incremental trunk: appends this block's keys/values and returns the
  // head output for the new tokens. New tokens may attend to everything
  // cached plus their own block, which is exactly the block-causal rule.
  Tensor<T> run_cached(Tensor<T> x, KVCache<T>& cache) const {
    const int64_t added = x.size(1);
    for (size_t d = 0; d < layers_.size(); ++d) {
      const auto& layer = layers_[d];
      x = add(x, layer.attn.forward_cached(layer.ln1.forward(x), cache.k[d], cache.v[d]));
      x = add(x, layer.mlp.forward(layer.ln2.forward(x)));
    }
    cache.filled += added;
    return head_.forward(final_ln_.forward(x));
  }

  static Tensor<T> tile_tokens(const Tensor<T>& x, int64_t n) {
    std::vector<Tensor<T>> copies(static_cast<size_t>(n), x);
    return concat(copies, 1);
  }

  static Shape unsqueeze(const Shape& s) {
    Shape out{1};
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  ARConfig cfg_;
  ScaleSchedule schedule_;
  AttnMask mask_;

  Tensor<T> class_embed_;
  Tensor<T> scale_embed_;
  std::vector<Tensor<T>> pos_;
  Linear<T> in_proj_;
  std::vector<Layer> layers_;
  LayerNormAffine<T> final_ln_;
  Linear<T> head_;
};

}  // namespace scaleflow
