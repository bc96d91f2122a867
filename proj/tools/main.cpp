// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset synthesis, training, sampling to PPM files,
// evaluation, and the ablation matrix driver.
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "scaleflow/scaleflow.hpp"

namespace fs = std::filesystem;
using namespace scaleflow;

namespace {

struct SynthArgs {
  int64_t classes = 4, count = 128, size = 16;
  uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::string resume;
};

struct SampleArgs {
  std::string checkpoint;
  int64_t class_id = 0;
  int64_t n = 1;
  double cfg = 1.0;
  int64_t steps = 25;
  uint64_t seed = 0;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  int64_t per_class = 16;
  int64_t steps = 25;
  double cfg = 1.0;
  uint64_t seed = 1;
};

struct AblateArgs {
  std::string axis;
  int64_t budget = 40;
  std::string config;
  std::string out;
  int64_t jobs = 1;
};

int run_synth(const SynthArgs& args) {
  SyntheticSpec spec;
  spec.classes = args.classes;
  spec.count = args.count;
  spec.size = args.size;
  spec.seed = args.seed;
  spec.validate();
  auto ds = synthesize<float>(spec);
  write_dataset(ds, args.out);
  std::cout << "wrote " << ds.count() << " images (" << spec.classes << " classes, " << spec.size << "x" << spec.size
            << ") to " << args.out << "\n";
  std::cout << "digest " << std::hex << std::setw(16) << std::setfill('0') << dataset_digest(ds) << "\n";
  return 0;
}

Dataset<float> dataset_for(RunConfig& cfg) {
  if (!cfg.data_path.empty()) {
    Dataset<float> ds = load_dataset<float>(cfg.data_path);
    cfg.synth = ds.spec;  // the resolved config records the actual data spec
    return ds;
  }
  return synthesize<float>(cfg.synth);
}

void validate_or_die(RunConfig& cfg) {
  std::vector<std::string> errors;
  cfg.validate(errors);
  if (!errors.empty()) {
    std::string joined = "invalid configuration:";
    for (const auto& e : errors) joined += "\n  - " + e;
    throw ConfigError(joined);
  }
}

GenModel<float> build_model(const RunConfig& cfg, const Dataset<float>& data) {
  auto model = GenModel<float>::build(cfg.model, cfg.seed);
  if (cfg.model.codec.kind == "patch_learned") {
    std::cout << "fitting learned patch codec (" << cfg.model.codec.fit_steps << " steps)\n";
    train_patch_codec(*model.codec, data.images, cfg.model.codec.fit_steps, cfg.model.codec.fit_lr,
                      cfg.model.codec.seed);
  }
  return model;
}

int run_train(const TrainArgs& args) {
  std::string config_path = args.config;
  if (const char* env = std::getenv("SCALEFLOW_CONFIG")) config_path = env;  // env overrides config path only
  if (config_path.empty()) throw ConfigError("train: no config given (use --config or SCALEFLOW_CONFIG)");

  RunConfig cfg = RunConfig::from_file(config_path);
  Dataset<float> data = dataset_for(cfg);
  cfg.finalize_with_data(data.spec.classes, data.count());
  validate_or_die(cfg);
  if (cfg.precision != "float32") {
    throw ConfigError("train: only float32 training is wired into the CLI; float64 runs are for tests");
  }
  ThreadPool::instance().set_threads(static_cast<int>(cfg.threads));

  auto model = build_model(cfg, data);
  Trainer<float> trainer(model, data, cfg.train);

  const std::string resolved = cfg.resolved_text();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream rf(cfg.out_dir + "/config.resolved");
    rf << resolved;
  }

  if (!args.resume.empty()) {
    CheckpointInfo info = read_checkpoint_info(args.resume);
    if (info.config_text != resolved) {
      throw ConfigError("resume: checkpoint configuration differs from the current one; refusing to mix runs");
    }
    const int64_t step = load_checkpoint(args.resume, model, &trainer.optimizer());
    trainer.set_step_index(step);
    std::cout << "resumed from " << args.resume << " at step " << step << "\n";
  }

  std::ofstream metrics(cfg.out_dir + "/metrics.log", args.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot open metrics log in " + cfg.out_dir);

  while (trainer.step_index() < cfg.train.total_steps) {
    StepStats stats = trainer.train_step();
    const bool log = stats.step % cfg.log_every == 0 || stats.step + 1 == cfg.train.total_steps;
    if (log) {
      metrics << "step=" << stats.step << " loss=" << std::setprecision(8) << stats.loss << " lr=" << stats.lr
              << " grad_norm=" << stats.grad_norm << "\n";
      metrics.flush();
      std::cout << "step " << stats.step << "/" << cfg.train.total_steps << " loss " << stats.loss << " lr " << stats.lr
                << " grad_norm " << stats.grad_norm << "\n";
    }
    const bool at_ckpt = cfg.ckpt_every > 0 && trainer.step_index() % cfg.ckpt_every == 0 &&
                         trainer.step_index() < cfg.train.total_steps;
    if (at_ckpt) {
      save_checkpoint(cfg.out_dir + "/ckpt_step" + std::to_string(trainer.step_index()) + ".sfck", model,
                      &trainer.optimizer(), trainer.step_index(), resolved);
    }
  }
  save_checkpoint(cfg.out_dir + "/ckpt_final.sfck", model, &trainer.optimizer(), trainer.step_index(), resolved);
  std::cout << "done; final checkpoint at " << cfg.out_dir << "/ckpt_final.sfck\n";
  return 0;
}

GenModel<float> model_from_checkpoint(const std::string& path, RunConfig& cfg_out) {
  CheckpointInfo info = read_checkpoint_info(path);
  if (info.scalar_width != 4) {
    throw ConfigError(path + ": checkpoint precision is not float32; this build loads float32 only");
  }
  cfg_out = RunConfig::from_text(info.config_text);
  cfg_out.finalize_with_data(cfg_out.synth.classes, cfg_out.synth.count);
  ThreadPool::instance().set_threads(static_cast<int>(cfg_out.threads));
  auto model = GenModel<float>::build(cfg_out.model, cfg_out.seed);
  load_checkpoint<float>(path, model, nullptr);
  return model;
}

int run_sample(const SampleArgs& args) {
  RunConfig cfg;
  auto model = model_from_checkpoint(args.checkpoint, cfg);
  require(args.class_id >= 0 && args.class_id < cfg.synth.classes,
          "sample: class " + std::to_string(args.class_id) + " out of range [0," + std::to_string(cfg.synth.classes) +
              ")");
  SampleConfig scfg;
  scfg.euler_steps = args.steps;
  scfg.cfg_scale = args.cfg;
  scfg.seed = args.seed;
  scfg.validate();

  fs::create_directories(args.out);
  {
    std::ofstream rf(args.out + "/config.resolved");
    rf << cfg.resolved_text();
  }
  std::vector<int64_t> ids(static_cast<size_t>(args.n), args.class_id);
  Tensor<float> latents = sample_latent_batch(model, ids, scfg);
  Tensor<float> images = model.codec->decode(model.denormalize(latents));

  std::vector<Tensor<float>> singles;
  for (int64_t j = 0; j < args.n; ++j) {
    Tensor<float> one = reshape(narrow(images, 0, j, 1), {3, images.size(2), images.size(3)});
    one.check_finite("sampled image");
    std::ostringstream name;
    name << args.out << "/sample_c" << args.class_id << "_" << std::setw(4) << std::setfill('0') << j << ".ppm";
    write_ppm(name.str(), one);
    singles.push_back(one);
  }
  write_ppm(args.out + "/sheet_c" + std::to_string(args.class_id) + ".ppm", contact_sheet(singles, 8));
  std::cout << "wrote " << args.n << " images and 1 sheet to " << args.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& args) {
  RunConfig cfg;
  auto model = model_from_checkpoint(args.checkpoint, cfg);
  Dataset<float> heldout;
  if (!args.data.empty()) {
    heldout = load_dataset<float>(args.data);
  } else {
    SyntheticSpec spec = cfg.synth;
    spec.seed = cfg.synth.seed + 1000;  // held-out draw, same distribution
    heldout = synthesize<float>(spec);
  }
  EvalOptions opts;
  opts.gen_per_class = args.per_class;
  opts.sample.euler_steps = args.steps;
  opts.sample.cfg_scale = args.cfg;
  opts.sample.seed = args.seed;
  opts.seed = args.seed;
  auto report = evaluate_model(model, heldout, opts);
  std::cout << report.str() << "\n";
  return 0;
}

int run_ablate_cmd(const AblateArgs& args) {
  RunConfig base = args.config.empty() ? RunConfig::defaults() : RunConfig::from_file(args.config);
  if (args.config.empty()) {
    // micro-budget desk defaults
    base.synth.classes = 4;
    base.synth.count = 64;
    base.synth.size = 16;
    base.model.scales = {1, 2, 4};
    base.model.ar.depth = 2;
    base.model.ar.width = 64;
    base.model.ar.heads = 2;
    base.model.flow.depth = 2;
    base.model.flow.width = 64;
    base.model.flow.heads = 2;
    base.train.batch_size = 8;
    base.train.peak_lr = 1e-3;
  }
  ThreadPool::instance().set_threads(static_cast<int>(base.threads));
  auto result = run_ablation<float>(
      base, args.axis, args.budget, [](const std::string& msg) { std::cout << msg << "\n"; }, args.jobs);
  const std::string table = result.table_text();
  std::cout << table;
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    std::ofstream rf(args.out + "/report.txt");
    rf << table;
    for (const auto& row : result.rows) {
      std::ofstream cf(args.out + "/run_" + row.value + ".config");
      cf << row.resolved_config;
    }
    std::cout << "report written to " << args.out << "/report.txt\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scale-wise autoregressive image generation with flow matching"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic shape dataset");
  synth->add_option("--classes", synth_args.classes, "number of classes");
  synth->add_option("--count", synth_args.count, "total image count");
  synth->add_option("--size", synth_args.size, "image side length");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--out", synth_args.out, "output directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", train_args.config, "config file (SCALEFLOW_CONFIG overrides)");
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "sample images from a checkpoint");
  sample->add_option("--checkpoint", sample_args.checkpoint, "checkpoint file")->required();
  sample->add_option("--class", sample_args.class_id, "class id");
  sample->add_option("--n", sample_args.n, "number of images");
  sample->add_option("--cfg", sample_args.cfg, "guidance scale");
  sample->add_option("--steps", sample_args.steps, "euler steps per scale");
  sample->add_option("--seed", sample_args.seed, "sampling seed");
  sample->add_option("--out", sample_args.out, "output directory")->required();

  EvalArgs eval_args;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  evalc->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  evalc->add_option("--data", eval_args.data, "held-out dataset directory (default: fresh synthetic draw)");
  evalc->add_option("--per-class", eval_args.per_class, "generated images per class");
  evalc->add_option("--steps", eval_args.steps, "euler steps per scale");
  evalc->add_option("--cfg", eval_args.cfg, "guidance scale");
  evalc->add_option("--seed", eval_args.seed, "evaluation seed");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "train and rank every value of one config axis");
  ablate->add_option("--axis", ablate_args.axis, "injection|granularity|target|schedule|pyramid_mode")->required();
  ablate->add_option("--budget", ablate_args.budget, "training steps per run");
  ablate->add_option("--config", ablate_args.config, "base config file");
  ablate->add_option("--out", ablate_args.out, "report directory");
  ablate->add_option("--jobs", ablate_args.jobs, "parallel runs (independent models)");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (sample->parsed()) return run_sample(sample_args);
    if (evalc->parsed()) return run_eval(eval_args);
    if (ablate->parsed()) return run_ablate_cmd(ablate_args);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "numeric failure (contract): " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
