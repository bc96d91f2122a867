// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Ablation driver: trains one model per value of a single config axis under
// an identical fixed budget and seed, evaluates each, and emits a ranked
// table. A programmatic diff of the resolved configurations guarantees that
// nothing but the named axis varied.

#pragma once

#include <algorithm>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "scaleflow/config.hpp"
#include "scaleflow/evaluate.hpp"

namespace scaleflow {

struct AblationRow {
  std::string value;
  EvalReport report;
  std::string resolved_config;
};

struct AblationResult {
  std::string axis;
  std::vector<AblationRow> rows;  // ranked, best first
  std::vector<std::string> notes;

  std::string table_text() const {
    std::ostringstream os;
    os << "axis: " << axis << "\n";
    os << "rank  value                 energy_distance  class_consistency  heldout_loss\n";
    for (size_t i = 0; i < rows.size(); ++i) {
      std::ostringstream val;
      val << rows[i].value;
      std::string v = val.str();
      v.resize(20, ' ');
      os << (i + 1) << "     " << v << "  " << rows[i].report.energy_distance_gen << "  "
         << rows[i].report.class_consistency << "  " << rows[i].report.heldout_loss << "\n";
    }
    for (const auto& n : notes) os << "note: " << n << "\n";
    return os.str();
  }
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> axis_values(const std::string& axis) {
  if (axis == "injection") {
    return {{"flow.injection", "spatial_adaln"}, {"flow.injection", "adaln"},         {"flow.injection", "addition"},
            {"flow.injection", "cross_attention"}, {"flow.injection", "seq_concat"}, {"flow.injection", "channel_concat"}};
  }
  if (axis == "granularity") return {{"flow.granularity", "per_scale"}, {"flow.granularity", "per_token"}};
  if (axis == "target") return {{"flow.target", "flow_velocity"}, {"flow.target", "diffusion_epsilon"}};
  if (axis == "schedule") return {{"scales", "1,2,4,8,16"}, {"scales", "1,4,8,16"}, {"scales", "1,4,16"}};
  if (axis == "pyramid_mode") return {{"pyramid.mode", "latent"}, {"pyramid.mode", "image"}};
  throw ConfigError("unknown ablation axis '" + axis +
                    "' (injection|granularity|target|schedule|pyramid_mode)");
}

inline std::map<std::string, std::string> config_map(const std::string& resolved) {
  std::vector<std::pair<std::string, std::string>> kv;
  parse_config_lines(resolved, ".", kv, 0);
  return {kv.begin(), kv.end()};
}

}  // namespace detail

// Asserts that resolved configs differ only in the axis key (and keys it
// legitimately derives, none today).
inline void assert_single_axis_diff(const std::vector<AblationRow>& rows, const std::string& axis_key) {
  if (rows.size() < 2) return;
  auto base = detail::config_map(rows[0].resolved_config);
  for (size_t i = 1; i < rows.size(); ++i) {
    auto other = detail::config_map(rows[i].resolved_config);
    require(base.size() == other.size(), "ablation: config key sets differ between runs");
    for (const auto& [k, v] : base) {
      auto it = other.find(k);
      require(it != other.end(), "ablation: key '" + k + "' missing from a run");
      if (k == axis_key) continue;
      require(it->second == v, "ablation: run differs on non-axis key '" + k + "' ('" + v + "' vs '" +
                                   it->second + "')");
    }
  }
}

template <typename T>
AblationResult run_ablation(RunConfig base, const std::string& axis, int64_t budget_steps,
                            const std::function<void(const std::string&)>& progress = nullptr, int64_t jobs = 1) {
  require(budget_steps >= 2, "ablation: budget must be at least 2 steps");
  const auto values = detail::axis_values(axis);
  const std::string axis_key = values.front().first;

  // the schedule axis reproduces the published scale rows, which need a
  // 16x16 finest latent: 64px images at patch 4
  if (axis == "schedule") {
    base.synth.size = 64;
    base.model.scales = {1, 2, 4, 8, 16};
  }
  base.train.total_steps = budget_steps;
  base.train.warmup_steps = std::max<int64_t>(1, budget_steps / 10);

  AblationResult result;
  result.axis = axis;
  result.rows.resize(values.size());

  auto run_one = [&](size_t idx) {
    RunConfig cfg = base;
    std::vector<std::string> errors;
    cfg.apply(values[idx].first, values[idx].second, errors);
    require(errors.empty(), "ablation: bad axis value " + values[idx].second);
    cfg.finalize_with_data(cfg.synth.classes, cfg.synth.count);
    errors.clear();
    cfg.validate(errors);
    if (!errors.empty()) throw ConfigError("ablation run '" + values[idx].second + "': " + errors.front());

    if (progress) progress(axis + " = " + values[idx].second + " (training " + std::to_string(budget_steps) + " steps)");

    Dataset<T> data = synthesize<T>(cfg.synth);
    auto model = GenModel<T>::build(cfg.model, cfg.seed);
    if (cfg.model.codec.kind == "patch_learned") {
      train_patch_codec(*model.codec, data.images, cfg.model.codec.fit_steps, cfg.model.codec.fit_lr,
                        cfg.model.codec.seed);
    }
    Trainer<T> trainer(model, data, cfg.train);
    for (int64_t s = 0; s < cfg.train.total_steps; ++s) trainer.train_step();

    SyntheticSpec eval_spec = cfg.synth;
    eval_spec.seed = cfg.synth.seed + 1000;
    eval_spec.count = std::min<int64_t>(cfg.synth.count, 64);
    Dataset<T> heldout = synthesize<T>(eval_spec);
    EvalOptions opts;
    opts.gen_per_class = 8;
    opts.sample.euler_steps = 8;
    opts.sample.seed = cfg.seed + 7;
    auto report = evaluate_model(model, heldout, opts);

    result.rows[idx] = AblationRow{values[idx].second, report, cfg.resolved_text()};
  };

  if (jobs <= 1) {
    for (size_t i = 0; i < values.size(); ++i) run_one(i);
  } else {
    // independent model instances may run concurrently
    size_t next = 0;
    std::vector<std::thread> workers;
    std::mutex m;
    for (int64_t j = 0; j < std::min<int64_t>(jobs, static_cast<int64_t>(values.size())); ++j) {
      workers.emplace_back([&] {
        for (;;) {
          size_t idx;
          {
            std::lock_guard<std::mutex> lk(m);
            if (next >= values.size()) return;
            idx = next++;
          }
          run_one(idx);
        }
      });
    }
    for (auto& w : workers) w.join();
  }

  assert_single_axis_diff(result.rows, axis_key);
  std::stable_sort(result.rows.begin(), result.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     return a.report.energy_distance_gen < b.report.energy_distance_gen;
                   });

  // qualitative direction checks, reported but not gated
  auto find_row = [&](const std::string& v) -> const AblationRow* {
    for (const auto& r : result.rows) {
      if (r.value == v) return &r;
    }
    return nullptr;
  };
  if (axis == "pyramid_mode") {
    const auto* lat = find_row("latent");
    const auto* img = find_row("image");
    if (lat && img) {
      result.notes.push_back(std::string("latent beats image: ") +
                             (lat->report.energy_distance_gen < img->report.energy_distance_gen ? "yes" : "no"));
    }
  }
  if (axis == "granularity") {
    const auto* ps = find_row("per_scale");
    const auto* pt = find_row("per_token");
    if (ps && pt) {
      result.notes.push_back(std::string("per_scale beats per_token: ") +
                             (ps->report.energy_distance_gen < pt->report.energy_distance_gen ? "yes" : "no"));
    }
  }
  return result;
}

}  // namespace scaleflow
