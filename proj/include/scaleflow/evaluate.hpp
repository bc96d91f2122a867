// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale evaluation: held-out flow loss, energy distance between
// generated and real pixel-statistic vectors (per class), and class
// consistency against the dataset's ground-truth hue rule.

#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "scaleflow/dataset.hpp"
#include "scaleflow/engine.hpp"

namespace scaleflow {

// Pixel-statistic feature vector: per-channel mean and spread, saturation /
// value means, foreground fraction, and the dominant hue direction.
template <typename T>
std::vector<double> image_features(const Tensor<T>& img) {
  const int64_t h = img.size(1), w = img.size(2);
  const double n = static_cast<double>(h * w);
  std::vector<double> mean(3, 0), sq(3, 0);
  double sat = 0, val = 0, fg = 0, hx = 0, hy = 0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double rgb[3];
      for (int64_t c = 0; c < 3; ++c) {
        double v = static_cast<double>(img.at({c, y, x}));
        v = std::min(1.0, std::max(0.0, v));
        rgb[c] = v;
        mean[static_cast<size_t>(c)] += v;
        sq[static_cast<size_t>(c)] += v * v;
      }
      double hh, ss, vv;
      rgb_to_hsv(rgb[0], rgb[1], rgb[2], hh, ss, vv);
      sat += ss;
      val += vv;
      if (ss > 0.25 && vv > 0.2) {
        fg += 1.0;
        const double rad = hh * 3.14159265358979323846 / 180.0;
        hx += ss * std::cos(rad);
        hy += ss * std::sin(rad);
      }
    }
  }
  std::vector<double> f;
  for (int64_t c = 0; c < 3; ++c) {
    const double m = mean[static_cast<size_t>(c)] / n;
    f.push_back(m);
    f.push_back(std::sqrt(std::max(0.0, sq[static_cast<size_t>(c)] / n - m * m)));
  }
  f.push_back(sat / n);
  f.push_back(val / n);
  f.push_back(fg / n);
  const double hn = std::sqrt(hx * hx + hy * hy);
  f.push_back(hn > 0 ? hx / hn : 0.0);
  f.push_back(hn > 0 ? hy / hn : 0.0);
  return f;
}

// Energy distance between two samples of feature vectors:
// D^2 = 2 E|X-Y| - E|X-X'| - E|Y-Y'|. Within-sample means use the unbiased
// off-diagonal (U-statistic) form so identical distributions sit at zero in
// expectation. Returns D.
inline double energy_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  require(a.size() >= 2 && b.size() >= 2, "energy_distance: need at least two vectors per sample");
  auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  };
  double ab = 0, aa = 0, bb = 0;
  for (const auto& x : a) {
    for (const auto& y : b) ab += dist(x, y);
  }
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = i + 1; j < a.size(); ++j) aa += dist(a[i], a[j]);
  }
  for (size_t i = 0; i < b.size(); ++i) {
    for (size_t j = i + 1; j < b.size(); ++j) bb += dist(b[i], b[j]);
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double d2 = 2.0 * ab / (na * nb) - 2.0 * aa / (na * (na - 1.0)) - 2.0 * bb / (nb * (nb - 1.0));
  return std::sqrt(std::max(0.0, d2));
}

struct EvalOptions {
  int64_t gen_per_class = 16;
  SampleConfig sample;
  int64_t loss_batch_size = 16;
  int64_t loss_batches = 4;
  uint64_t seed = 1;
};

struct EvalReport {
  double heldout_loss = 0;
  double energy_distance_gen = 0;
  double energy_distance_baseline = 0;
  double class_consistency = 0;
  int64_t generated = 0;

  std::string str() const {
    std::ostringstream os;
    os << "heldout_loss=" << heldout_loss << " energy_distance=" << energy_distance_gen
       << " baseline_energy_distance=" << energy_distance_baseline << " class_consistency=" << class_consistency
       << " generated=" << generated;
    return os.str();
  }
};

// Baseline: split the real set per class into halves and measure the energy
// distance between them (what "indistinguishable" looks like at this sample
// size).
template <typename T>
double real_vs_real_energy(const Dataset<T>& data) {
  std::vector<double> per_class;
  for (int64_t k = 0; k < data.spec.classes; ++k) {
    std::vector<std::vector<double>> half_a, half_b;
    int64_t seen = 0;
    for (int64_t i = 0; i < data.count(); ++i) {
      if (data.labels[static_cast<size_t>(i)] != k) continue;
      auto f = image_features(data.image(i));
      if (seen % 2 == 0) half_a.push_back(std::move(f));
      else half_b.push_back(std::move(f));
      ++seen;
    }
    if (half_a.size() >= 2 && half_b.size() >= 2) per_class.push_back(energy_distance(half_a, half_b));
  }
  require(!per_class.empty(), "real_vs_real_energy: not enough images per class");
  double s = 0;
  for (double d : per_class) s += d;
  return s / static_cast<double>(per_class.size());
}

template <typename T>
EvalReport evaluate_model(const GenModel<T>& model, const Dataset<T>& heldout, const EvalOptions& opts) {
  EvalReport report;
  NoGradGuard<T> ng(*model.tape);

  // (a) held-out loss with fixed draws
  {
    double total = 0;
    int64_t batches = 0;
    for (int64_t b = 0; b < opts.loss_batches; ++b) {
      const int64_t at = (b * opts.loss_batch_size) % heldout.count();
      const int64_t len = std::min(opts.loss_batch_size, heldout.count() - at);
      if (len < 1) break;
      Tensor<T> images = narrow(heldout.images, 0, at, len);
      std::vector<int64_t> ids(heldout.labels.begin() + at, heldout.labels.begin() + at + len);
      LatentPyramid<T> pyr = model.pyramid_for(images);
      SemanticsSet<T> sem = model.ar.training_forward(ids, pyr);
      Rng noise = Rng::stream(opts.seed, static_cast<uint64_t>(b), 21);
      total += static_cast<double>(model.flow.fm_loss(pyr, sem, noise).item());
      ++batches;
    }
    report.heldout_loss = batches > 0 ? total / static_cast<double>(batches) : 0.0;
  }

  // (b) + (c): generate per class, compare statistics, check the hue rule
  {
    std::vector<double> per_class_ed;
    int64_t correct = 0, total_gen = 0;
    for (int64_t k = 0; k < heldout.spec.classes; ++k) {
      std::vector<int64_t> ids(static_cast<size_t>(opts.gen_per_class), k);
      SampleConfig scfg = opts.sample;
      scfg.seed = splitmix64(opts.sample.seed + static_cast<uint64_t>(k) * 0x632be59bd9b4e019ull);
      Tensor<T> latents = sample_latent_batch(model, ids, scfg);
      Tensor<T> images = model.codec->decode(model.denormalize(latents));

      std::vector<std::vector<double>> gen_f, real_f;
      for (int64_t j = 0; j < opts.gen_per_class; ++j) {
        Tensor<T> one = reshape(narrow(images, 0, j, 1), {3, images.size(2), images.size(3)});
        gen_f.push_back(image_features(one));
        if (classify_by_hue(one, heldout.rules) == k) ++correct;
        ++total_gen;
      }
      for (int64_t i = 0; i < heldout.count(); ++i) {
        if (heldout.labels[static_cast<size_t>(i)] == k) real_f.push_back(image_features(heldout.image(i)));
      }
      if (!real_f.empty()) per_class_ed.push_back(energy_distance(gen_f, real_f));
    }
    double s = 0;
    for (double d : per_class_ed) s += d;
    report.energy_distance_gen = per_class_ed.empty() ? 0.0 : s / static_cast<double>(per_class_ed.size());
    report.class_consistency = total_gen > 0 ? static_cast<double>(correct) / static_cast<double>(total_gen) : 0.0;
    report.generated = total_gen;
  }

  report.energy_distance_baseline = real_vs_real_energy(heldout);
  return report;
}

}  // namespace scaleflow
