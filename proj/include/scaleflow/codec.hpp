// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Continuous latent codec interface plus a linear patch codec, so the whole
// pipeline runs without any pretrained autoencoder. The codec is a frozen
// component from the generator's point of view; swapping codecs must not
// touch any other module.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "scaleflow/nn.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

// image [3,H,W] (or [B,3,H,W]) <-> latent [c,h,w] (or [B,c,h,w]),
// h = H / spatial_ratio. spatial_ratio is a positive power of two.
template <typename T>
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual Tensor<T> encode(const Tensor<T>& image) const = 0;
  virtual Tensor<T> decode(const Tensor<T>& latent) const = 0;
  virtual int64_t latent_channels() const = 0;
  virtual int64_t spatial_ratio() const = 0;
  virtual std::string kind() const = 0;
};

namespace detail {

// [B,3,H,W] -> [B, h*w, 3*p*p]; pure data movement expressed through the
// differentiable shape ops so learned codec training can run through it.
template <typename T>
Tensor<T> image_to_patches(const Tensor<T>& img, int64_t p) {
  const int64_t b = img.size(0), c = img.size(1), hh = img.size(2), ww = img.size(3);
  const int64_t h = hh / p, w = ww / p;
  Tensor<T> x = reshape(img, {b, c, h, p, w, p});
  x = transpose(x, 1, 2);  // [b,h,c,p,w,p]
  x = transpose(x, 3, 4);  // [b,h,c,w,p,p]
  x = transpose(x, 2, 3);  // [b,h,w,c,p,p]
  return reshape(x, {b, h * w, c * p * p});
}

// inverse of image_to_patches
template <typename T>
Tensor<T> patches_to_image(const Tensor<T>& patches, int64_t b, int64_t c, int64_t h, int64_t w, int64_t p) {
  Tensor<T> x = reshape(patches, {b, h, w, c, p, p});
  x = transpose(x, 2, 3);  // [b,h,c,w,p,p]
  x = transpose(x, 3, 4);  // [b,h,c,p,w,p]
  x = transpose(x, 1, 2);  // [b,c,h,p,w,p]
  return reshape(x, {b, c, h * p, w * p});
}

// token grid [B, h*w, c] -> [B, c, h, w]
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tok, int64_t h, int64_t w) {
  const int64_t b = tok.size(0), c = tok.size(2);
  Tensor<T> x = reshape(tok, {b, h, w, c});
  x = transpose(x, 2, 3);  // [b,h,c,w]
  x = transpose(x, 1, 2);  // [b,c,h,w]
  return x;
}

// [B, c, h, w] -> [B, h*w, c]
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
  const int64_t b = map.size(0), h = map.size(2), w = map.size(3);
  Tensor<T> x = transpose(map, 1, 2);  // [b,h,c,w]
  x = transpose(x, 2, 3);              // [b,h,w,c]
  return reshape(x, {b, h * w, map.size(1)});
}

}  // namespace detail

// Linear per-patch codec: each p x p patch maps through a single matrix.
// The fixed orthonormal variant satisfies decode(encode(x)) == x up to float
// tolerance; the learned variant (any channel count) is trained outside by
// reconstruction error.
template <typename T>
class PatchCodec : public LatentCodec<T> {
 public:
  // c == 3*p*p, E == D == I: packs pixels losslessly.
  static PatchCodec identity(int64_t p) {
    PatchCodec codec(p, 3 * p * p, "patch_identity");
    const int64_t d = 3 * p * p;
    for (int64_t i = 0; i < d; ++i) codec.enc_.at_ref({i, i}) = T(1);
    codec.dec_ = codec.enc_.detach();
    return codec;
  }

  // c == 3*p*p, E a random orthogonal matrix, D = E^T.
  static PatchCodec orthonormal(int64_t p, uint64_t seed) {
    const int64_t d = 3 * p * p;
    PatchCodec codec(p, d, "patch_ortho");
    Rng rng(seed);
    // modified Gram-Schmidt over random columns
    std::vector<std::vector<double>> q(static_cast<size_t>(d), std::vector<double>(static_cast<size_t>(d)));
    for (auto& col : q) {
      for (auto& x : col) x = rng.normal();
    }
    for (int64_t j = 0; j < d; ++j) {
      auto& cj = q[static_cast<size_t>(j)];
      for (int64_t i = 0; i < j; ++i) {
        const auto& ci = q[static_cast<size_t>(i)];
        double dot = 0;
        for (int64_t r = 0; r < d; ++r) dot += cj[static_cast<size_t>(r)] * ci[static_cast<size_t>(r)];
        for (int64_t r = 0; r < d; ++r) cj[static_cast<size_t>(r)] -= dot * ci[static_cast<size_t>(r)];
      }
      double norm = 0;
      for (double x : cj) norm += x * x;
      norm = std::sqrt(norm);
      for (auto& x : cj) x /= norm;
    }
    for (int64_t r = 0; r < d; ++r) {
      for (int64_t j = 0; j < d; ++j) {
        codec.enc_.at_ref({r, j}) = static_cast<T>(q[static_cast<size_t>(j)][static_cast<size_t>(r)]);
        codec.dec_.at_ref({j, r}) = static_cast<T>(q[static_cast<size_t>(j)][static_cast<size_t>(r)]);
      }
    }
    return codec;
  }

  // Arbitrary channel count; starts as a random projection, intended to be
  // fitted with train_patch_codec.
  static PatchCodec learned(int64_t p, int64_t channels, uint64_t seed) {
    PatchCodec codec(p, channels, "patch_learned");
    Rng rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(3 * p * p));
    rng.fill_normal(codec.enc_.vals(), 0.0, sd);
    rng.fill_normal(codec.dec_.vals(), 0.0, sd);
    return codec;
  }

  Tensor<T> encode(const Tensor<T>& image) const override {
    const bool batched = image.dim() == 4;
    require(batched || image.dim() == 3, "encode: image must be [3,H,W] or [B,3,H,W], got " + shape_str(image.shape()));
    Tensor<T> img = batched ? image : reshape(image, prepend_batch(image.shape()));
    require(img.size(1) == 3, "encode: expected 3 image channels, got " + shape_str(image.shape()));
    const int64_t hh = img.size(2), ww = img.size(3);
    require(hh % p_ == 0 && ww % p_ == 0, "encode: image size " + std::to_string(hh) + "x" + std::to_string(ww) +
                                              " not divisible by patch size " + std::to_string(p_));
    Tensor<T> patches = detail::image_to_patches(img, p_);
    Tensor<T> tokens = matmul(patches, enc_);  // [B, h*w, c]
    Tensor<T> out = detail::tokens_to_map(tokens, hh / p_, ww / p_);
    return batched ? out : reshape(out, drop_batch(out.shape()));
  }

  Tensor<T> decode(const Tensor<T>& latent) const override {
    const bool batched = latent.dim() == 4;
    require(batched || latent.dim() == 3, "decode: latent must be [c,h,w] or [B,c,h,w], got " + shape_str(latent.shape()));
    Tensor<T> lat = batched ? latent : reshape(latent, prepend_batch(latent.shape()));
    require(lat.size(1) == channels_, "decode: expected " + std::to_string(channels_) + " latent channels, got " +
                                          shape_str(latent.shape()));
    const int64_t b = lat.size(0), h = lat.size(2), w = lat.size(3);
    Tensor<T> tokens = detail::map_to_tokens(lat);       // [B, h*w, c]
    Tensor<T> patches = matmul(tokens, dec_);            // [B, h*w, 3*p*p]
    Tensor<T> out = detail::patches_to_image(patches, b, 3, h, w, p_);
    return batched ? out : reshape(out, drop_batch(out.shape()));
  }

  int64_t latent_channels() const override { return channels_; }
  int64_t spatial_ratio() const override { return p_; }
  std::string kind() const override { return kind_; }

  Tensor<T>& encoder_weight() { return enc_; }
  Tensor<T>& decoder_weight() { return dec_; }
  const Tensor<T>& encoder_weight() const { return enc_; }
  const Tensor<T>& decoder_weight() const { return dec_; }

 private:
  PatchCodec(int64_t p, int64_t channels, std::string kind)
      : p_(p), channels_(channels), kind_(std::move(kind)), enc_({3 * p * p, channels}), dec_({channels, 3 * p * p}) {}

  static Shape prepend_batch(const Shape& s) {
    Shape out{1};
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }
  static Shape drop_batch(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

  int64_t p_;
  int64_t channels_;
  std::string kind_;
  Tensor<T> enc_;  // [3*p*p, c]
  Tensor<T> dec_;  // [c, 3*p*p]
};

// Fits the learned patch codec by reconstruction MSE with plain gradient
// descent + momentum. Weights are copied in and out so the codec itself stays
// tape-free.
template <typename T>
double train_patch_codec(PatchCodec<T>& codec, const Tensor<T>& images, int64_t steps, double lr, uint64_t seed) {
  require(images.dim() == 4, "train_patch_codec: images must be [N,3,H,W]");
  Tape<T> tape;
  Tensor<T> enc = codec.encoder_weight().detach();
  Tensor<T> dec = codec.decoder_weight().detach();
  enc.set_requires_grad(tape);
  dec.set_requires_grad(tape);
  std::vector<T> menc(enc.vals().size(), T(0)), mdec(dec.vals().size(), T(0));
  const int64_t n = images.size(0);
  const int64_t batch = std::min<int64_t>(n, 16);
  double last = 0;
  for (int64_t step = 0; step < steps; ++step) {
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(step), 91);
    std::vector<Tensor<T>> picks;
    for (int64_t i = 0; i < batch; ++i) picks.push_back(narrow(images, 0, rng.below(n), 1));
    Tensor<T> x = concat(picks, 0);
    Tensor<T> patches = detail::image_to_patches(x, codec.spatial_ratio());
    Tensor<T> recon = matmul(matmul(patches, enc), dec);
    Tensor<T> loss = mse(recon, patches);
    enc.zero_grad();
    dec.zero_grad();
    tape.backward(loss);
    tape.clear();
    last = static_cast<double>(loss.item());
    const double mom = 0.9;
    for (size_t i = 0; i < enc.vals().size(); ++i) {
      menc[i] = static_cast<T>(mom * menc[i] + enc.grad()[i]);
      enc.vals()[i] -= static_cast<T>(lr * menc[i]);
    }
    for (size_t i = 0; i < dec.vals().size(); ++i) {
      mdec[i] = static_cast<T>(mom * mdec[i] + dec.grad()[i]);
      dec.vals()[i] -= static_cast<T>(lr * mdec[i]);
    }
  }
  codec.encoder_weight().vals() = enc.vals();
  codec.decoder_weight().vals() = dec.vals();
  return last;
}

}  // namespace scaleflow
