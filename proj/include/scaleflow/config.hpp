// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run configuration: `key = value` lines, `#` comments, and an
// `include <path>` directive (relative to the including file). Later keys win.
// Unknown keys are hard errors, and validation reports every problem at once.

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scaleflow/engine.hpp"

namespace scaleflow {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline void parse_config_lines(const std::string& text, const std::string& base_dir,
                               std::vector<std::pair<std::string, std::string>>& out, int depth) {
  if (depth > 8) throw ConfigError("config: include depth exceeds 8 (cycle?)");
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      std::filesystem::path inc = trim(line.substr(8));
      if (inc.is_relative()) inc = std::filesystem::path(base_dir) / inc;
      std::ifstream f(inc);
      if (!f) throw IoError("config include not found: " + inc.string());
      std::stringstream ss;
      ss << f.rdbuf();
      parse_config_lines(ss.str(), inc.parent_path().string(), out, depth + 1);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key = value, got '" + line + "'");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

}  // namespace detail

struct RunConfig {
  std::string precision = "float32";  // float32 | float64
  int64_t threads = 0;                // 0 = hardware concurrency
  std::string out_dir = "out";
  uint64_t seed = 0;

  std::string data_path;  // dataset directory; empty means synthesize
  SyntheticSpec synth;

  GenModelSpec model;
  TrainConfig train;
  SampleConfig sample;
  int64_t log_every = 50;
  int64_t ckpt_every = 500;

  // epoch-style inputs, resolved against the dataset size
  double total_epochs = -1;
  double warmup_epochs = -1;
  bool steps_set_explicitly = false;
  bool warmup_set_explicitly = false;

  static RunConfig defaults() {
    RunConfig c;
    c.model.ar.depth = 4;
    c.model.ar.width = 128;
    c.model.ar.heads = 4;
    c.model.flow.depth = 2;
    c.model.flow.width = 128;
    c.model.flow.heads = 4;
    c.train.batch_size = 64;
    c.train.total_steps = 2000;
    c.train.warmup_steps = 100;
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), std::filesystem::path(path).parent_path().string());
  }

  static RunConfig from_text(const std::string& text, const std::string& base_dir = ".") {
    std::vector<std::pair<std::string, std::string>> kv;
    detail::parse_config_lines(text, base_dir, kv, 0);
    RunConfig cfg = defaults();
    std::vector<std::string> errors;
    for (const auto& [key, value] : kv) cfg.apply(key, value, errors);
    if (!errors.empty()) {
      std::string joined = "invalid configuration:";
      for (const auto& e : errors) joined += "\n  - " + e;
      throw ConfigError(joined);
    }
    return cfg;
  }

  void apply(const std::string& key, const std::string& value, std::vector<std::string>& errors) {
    auto as_int = [&](int64_t& slot) {
      try {
        slot = std::stoll(value);
      } catch (...) {
        errors.push_back(key + ": '" + value + "' is not an integer");
      }
    };
    auto as_u64 = [&](uint64_t& slot) {
      try {
        slot = std::stoull(value);
      } catch (...) {
        errors.push_back(key + ": '" + value + "' is not a non-negative integer");
      }
    };
    auto as_double = [&](double& slot) {
      try {
        slot = std::stod(value);
      } catch (...) {
        errors.push_back(key + ": '" + value + "' is not a number");
      }
    };

    try {
      if (key == "precision") {
        if (value != "float32" && value != "float64") errors.push_back("precision: must be float32 or float64");
        else precision = value;
      } else if (key == "threads") as_int(threads);
      else if (key == "out_dir") out_dir = value;
      else if (key == "seed") { as_u64(seed); train.seed = seed; }
      else if (key == "data.path") data_path = value;
      else if (key == "data.classes") as_int(synth.classes);
      else if (key == "data.count") as_int(synth.count);
      else if (key == "data.size") as_int(synth.size);
      else if (key == "data.seed") as_u64(synth.seed);
      else if (key == "codec.kind") model.codec.kind = value;
      else if (key == "codec.patch") as_int(model.codec.patch);
      else if (key == "codec.channels") as_int(model.codec.channels);
      else if (key == "codec.seed") as_u64(model.codec.seed);
      else if (key == "codec.fit_steps") as_int(model.codec.fit_steps);
      else if (key == "codec.fit_lr") as_double(model.codec.fit_lr);
      else if (key == "scales") {
        model.scales = detail::parse_int_list(value);
        if (model.scales.empty()) errors.push_back("scales: empty list");
      } else if (key == "pyramid.mode") model.pyramid_mode = pyramid_mode_from(value);
      else if (key == "pyramid.filter") model.filter = pyramid_filter_from(value);
      else if (key == "ar.preset") apply_ar_preset(value, errors);
      else if (key == "ar.depth") as_int(model.ar.depth);
      else if (key == "ar.width") as_int(model.ar.width);
      else if (key == "ar.heads") as_int(model.ar.heads);
      else if (key == "ar.mlp_ratio") as_double(model.ar.mlp_ratio);
      else if (key == "flow.preset") apply_flow_preset(value, errors);
      else if (key == "flow.depth") as_int(model.flow.depth);
      else if (key == "flow.width") as_int(model.flow.width);
      else if (key == "flow.heads") as_int(model.flow.heads);
      else if (key == "flow.mlp_ratio") as_double(model.flow.mlp_ratio);
      else if (key == "flow.injection") model.flow.injection = injection_from(value);
      else if (key == "flow.target") model.flow.target = target_mode_from(value);
      else if (key == "flow.granularity") model.flow.granularity = granularity_from(value);
      else if (key == "flow.reduction") {
        if (value == "sum") train.reduction = LossReduction::sum_scales;
        else if (value == "mean") train.reduction = LossReduction::mean_scales;
        else errors.push_back("flow.reduction: must be sum or mean");
      } else if (key == "train.total_steps") { as_int(train.total_steps); steps_set_explicitly = true; }
      else if (key == "train.total_epochs") as_double(total_epochs);
      else if (key == "train.warmup_steps") { as_int(train.warmup_steps); warmup_set_explicitly = true; }
      else if (key == "train.warmup_epochs") as_double(warmup_epochs);
      else if (key == "train.batch") as_int(train.batch_size);
      else if (key == "train.peak_lr") as_double(train.peak_lr);
      else if (key == "train.min_lr") as_double(train.min_lr);
      else if (key == "train.label_dropout") as_double(train.label_dropout);
      else if (key == "train.grad_clip") as_double(train.grad_clip_norm);
      else if (key == "train.weight_decay") as_double(train.weight_decay);
      else if (key == "train.beta1") as_double(train.beta1);
      else if (key == "train.beta2") as_double(train.beta2);
      else if (key == "train.log_every") as_int(log_every);
      else if (key == "train.ckpt_every") as_int(ckpt_every);
      else if (key == "sample.steps") as_int(sample.euler_steps);
      else if (key == "sample.cfg") as_double(sample.cfg_scale);
      else errors.push_back("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      errors.push_back(key + ": " + e.what());
    } catch (const std::exception& e) {
      errors.push_back(key + ": invalid value '" + value + "'");
    }
  }

  // Depth/width presets for the AR transformer and flow head; desk runs use
  // tiny, the larger rows mirror the published model family.
  void apply_ar_preset(const std::string& name, std::vector<std::string>& errors) {
    if (name == "tiny") { model.ar.depth = 4; model.ar.width = 128; model.ar.heads = 4; }
    else if (name == "S") { model.ar.depth = 12; model.ar.width = 768; model.ar.heads = 12; }
    else if (name == "B") { model.ar.depth = 16; model.ar.width = 768; model.ar.heads = 12; }
    else if (name == "L") { model.ar.depth = 16; model.ar.width = 1024; model.ar.heads = 16; }
    else if (name == "H") { model.ar.depth = 30; model.ar.width = 1536; model.ar.heads = 24; }
    else errors.push_back("ar.preset: unknown preset '" + name + "' (tiny|S|B|L|H)");
  }

  void apply_flow_preset(const std::string& name, std::vector<std::string>& errors) {
    if (name == "tiny") { model.flow.depth = 2; model.flow.width = 128; model.flow.heads = 4; }
    else if (name == "S") { model.flow.depth = 2; model.flow.width = 1024; model.flow.heads = 16; }
    else if (name == "B") { model.flow.depth = 6; model.flow.width = 1024; model.flow.heads = 16; }
    else if (name == "L") { model.flow.depth = 12; model.flow.width = 1024; model.flow.heads = 16; }
    else if (name == "H") { model.flow.depth = 18; model.flow.width = 1536; model.flow.heads = 24; }
    else errors.push_back("flow.preset: unknown preset '" + name + "' (tiny|S|B|L|H)");
  }

  // Epoch-style durations need the dataset size; classes flow into the model.
  void finalize_with_data(int64_t classes, int64_t dataset_count) {
    model.ar.num_classes = classes;
    const int64_t steps_per_epoch = std::max<int64_t>(1, (dataset_count + train.batch_size - 1) / train.batch_size);
    if (total_epochs >= 0) {
      if (steps_set_explicitly) throw ConfigError("set train.total_steps or train.total_epochs, not both");
      train.total_steps = std::max<int64_t>(1, static_cast<int64_t>(total_epochs * static_cast<double>(steps_per_epoch)));
    }
    if (warmup_epochs >= 0) {
      if (warmup_set_explicitly) throw ConfigError("set train.warmup_steps or train.warmup_epochs, not both");
      train.warmup_steps = static_cast<int64_t>(warmup_epochs * static_cast<double>(steps_per_epoch));
    }
    if (train.warmup_steps >= train.total_steps) train.warmup_steps = train.total_steps / 10;
    model.finalize();
  }

  void validate(std::vector<std::string>& errors) const {
    auto check = [&](const std::function<void()>& fn) {
      try {
        fn();
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    };
    check([&] { model.codec.validate(); });
    check([&] { model.ar.validate(); });
    check([&] { model.flow.validate(); });
    check([&] { ScaleSchedule::square(model.scales); });
    train.collect_errors(errors);
    check([&] { sample.validate(); });
    check([&] { synth.validate(); });
    if (!data_path.empty() && !std::filesystem::exists(data_path + "/manifest.txt")) {
      errors.push_back("data.path: no manifest.txt under " + data_path);
    }
    // the schedule must match what the codec extracts from the images
    if (data_path.empty()) {
      const int64_t finest = synth.size / model.codec.patch;
      if (!model.scales.empty() && model.scales.back() != finest) {
        errors.push_back("scales: finest scale " + std::to_string(model.scales.back()) + " does not match " +
                         std::to_string(finest) + " (= data.size " + std::to_string(synth.size) + " / codec.patch " +
                         std::to_string(model.codec.patch) + ")");
      }
    }
  }

  // Canonical serialization of the effective configuration; stored with every
  // run and inside checkpoints, and what ablation runs are diffed on.
  std::string resolved_text() const {
    std::ostringstream os;
    os << "precision = " << precision << "\n";
    os << "threads = " << threads << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "seed = " << seed << "\n";
    if (!data_path.empty()) os << "data.path = " << data_path << "\n";
    os << "data.classes = " << synth.classes << "\n";
    os << "data.count = " << synth.count << "\n";
    os << "data.size = " << synth.size << "\n";
    os << "data.seed = " << synth.seed << "\n";
    os << "codec.kind = " << model.codec.kind << "\n";
    os << "codec.patch = " << model.codec.patch << "\n";
    if (model.codec.kind == "patch_learned") {
      os << "codec.channels = " << model.codec.channels << "\n";
      os << "codec.fit_steps = " << model.codec.fit_steps << "\n";
      os << "codec.fit_lr = " << model.codec.fit_lr << "\n";
    }
    os << "codec.seed = " << model.codec.seed << "\n";
    os << "scales = ";
    for (size_t i = 0; i < model.scales.size(); ++i) os << (i ? "," : "") << model.scales[i];
    os << "\n";
    os << "pyramid.mode = " << (model.pyramid_mode == PyramidMode::latent ? "latent" : "image") << "\n";
    os << "pyramid.filter = " << (model.filter == PyramidFilter::avg_nearest ? "avg_nearest" : "bilinear") << "\n";
    os << "ar.depth = " << model.ar.depth << "\n";
    os << "ar.width = " << model.ar.width << "\n";
    os << "ar.heads = " << model.ar.heads << "\n";
    os << "ar.mlp_ratio = " << model.ar.mlp_ratio << "\n";
    os << "flow.depth = " << model.flow.depth << "\n";
    os << "flow.width = " << model.flow.width << "\n";
    os << "flow.heads = " << model.flow.heads << "\n";
    os << "flow.mlp_ratio = " << model.flow.mlp_ratio << "\n";
    os << "flow.injection = " << injection_str(model.flow.injection) << "\n";
    os << "flow.target = " << target_mode_str(model.flow.target) << "\n";
    os << "flow.granularity = " << granularity_str(model.flow.granularity) << "\n";
    os << "flow.reduction = " << (train.reduction == LossReduction::sum_scales ? "sum" : "mean") << "\n";
    os << "train.total_steps = " << train.total_steps << "\n";
    os << "train.warmup_steps = " << train.warmup_steps << "\n";
    os << "train.batch = " << train.batch_size << "\n";
    os << "train.peak_lr = " << train.peak_lr << "\n";
    os << "train.min_lr = " << train.min_lr << "\n";
    os << "train.label_dropout = " << train.label_dropout << "\n";
    os << "train.grad_clip = " << train.grad_clip_norm << "\n";
    os << "train.weight_decay = " << train.weight_decay << "\n";
    os << "train.beta1 = " << train.beta1 << "\n";
    os << "train.beta2 = " << train.beta2 << "\n";
    os << "train.log_every = " << log_every << "\n";
    os << "train.ckpt_every = " << ckpt_every << "\n";
    os << "sample.steps = " << sample.euler_steps << "\n";
    os << "sample.cfg = " << sample.cfg_scale << "\n";
    return os.str();
  }
};

}  // namespace scaleflow
