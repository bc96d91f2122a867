// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the command-line interface, run against the built
// binary (path injected by the build as SCALEFLOW_CLI_PATH).

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef SCALEFLOW_CLI_PATH
#define SCALEFLOW_CLI_PATH "scaleflow"
#endif

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args, const std::string& workdir) {
  const std::string log = workdir + "/cmd_out.txt";
  const std::string cmd = "cd " + workdir + " && " + std::string(SCALEFLOW_CLI_PATH) + " " + args + " > " + log +
                          " 2>&1";
  const int ret = std::system(cmd.c_str());
  CmdResult res;
  res.exit_code = WEXITSTATUS(ret);
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  res.output = ss.str();
  return res;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = (fs::temp_directory_path() / ("sf_cli_" + name)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

const char* kTinyTrainCfg = R"(
seed = 1
out_dir = run
data.classes = 4
data.count = 32
data.size = 16
data.seed = 5
codec.kind = patch_identity
codec.patch = 4
scales = 1,2,4
ar.depth = 2
ar.width = 64
ar.heads = 2
flow.depth = 1
flow.width = 64
flow.heads = 2
train.total_steps = 10
train.warmup_steps = 2
train.batch = 4
train.peak_lr = 1e-3
train.log_every = 5
train.ckpt_every = 5
)";

}  // namespace

TEST_CASE("synth writes a balanced deterministic dataset") {
  const std::string dir = fresh_dir("synth");
  auto res = run_cli("synth --classes 4 --count 128 --size 16 --seed 3 --out ds", dir);
  REQUIRE(res.exit_code == 0);

  int64_t per_class[4] = {0, 0, 0, 0};
  for (const auto& entry : fs::directory_iterator(dir + "/ds")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("img_", 0) != 0) continue;
    const char c = name[name.size() - 5];  // ..._cK.ppm
    per_class[c - '0']++;
  }
  for (int64_t n : per_class) REQUIRE(n == 32);

  const std::string manifest = slurp(dir + "/ds/manifest.txt");
  REQUIRE(manifest.find("classes=4") != std::string::npos);
  REQUIRE(manifest.find("digest=") != std::string::npos);

  auto res2 = run_cli("synth --classes 4 --count 128 --size 16 --seed 3 --out ds2", dir);
  REQUIRE(res2.exit_code == 0);
  REQUIRE(slurp(dir + "/ds2/manifest.txt") == manifest);
}

TEST_CASE("train smoke run writes checkpoints, metrics, and resolved config") {
  const std::string dir = fresh_dir("train");
  write_file(dir + "/train.cfg", kTinyTrainCfg);
  auto res = run_cli("train --config train.cfg", dir);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  REQUIRE(fs::exists(dir + "/run/ckpt_final.sfck"));
  REQUIRE(fs::exists(dir + "/run/ckpt_step5.sfck"));
  REQUIRE(fs::exists(dir + "/run/config.resolved"));

  // frozen metrics format: step=<n> loss=<x> lr=<x> grad_norm=<x>
  std::ifstream metrics(dir + "/run/metrics.log");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    CAPTURE(line);
    REQUIRE(line.rfind("step=", 0) == 0);
    REQUIRE(line.find(" loss=") != std::string::npos);
    REQUIRE(line.find(" lr=") != std::string::npos);
    REQUIRE(line.find(" grad_norm=") != std::string::npos);
    ++lines;
  }
  REQUIRE(lines >= 2);
}

TEST_CASE("environment variable overrides the config path") {
  const std::string dir = fresh_dir("envcfg");
  write_file(dir + "/real.cfg", std::string(kTinyTrainCfg) + "train.total_steps = 2\ntrain.warmup_steps = 1\n");
  const std::string cmd = "cd " + dir + " && SCALEFLOW_CONFIG=real.cfg " + std::string(SCALEFLOW_CLI_PATH) +
                          " train --config does_not_exist.cfg > out.txt 2>&1";
  const int ret = std::system(cmd.c_str());
  REQUIRE(WEXITSTATUS(ret) == 0);
}

TEST_CASE("resume reproduces the straight run checkpoint byte for byte") {
  // identical configs in two working directories so the checkpoints can be
  // compared as whole files
  const std::string dir_a = fresh_dir("resumeA");
  const std::string dir_b = fresh_dir("resumeB");
  write_file(dir_a + "/t.cfg", kTinyTrainCfg);
  write_file(dir_b + "/t.cfg", kTinyTrainCfg);

  REQUIRE(run_cli("train --config t.cfg", dir_a).exit_code == 0);  // straight 10 steps
  REQUIRE(run_cli("train --config t.cfg", dir_b).exit_code == 0);
  // replay the second half from the mid checkpoint; overwrites ckpt_final
  auto res = run_cli("train --config t.cfg --resume run/ckpt_step5.sfck", dir_b);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  REQUIRE(slurp(dir_a + "/run/ckpt_final.sfck") == slurp(dir_b + "/run/ckpt_final.sfck"));

  // a different resolved config must be refused
  write_file(dir_b + "/other.cfg", std::string(kTinyTrainCfg) + "out_dir = elsewhere\n");
  auto refuse = run_cli("train --config other.cfg --resume run/ckpt_step5.sfck", dir_b);
  REQUIRE(refuse.exit_code == 2);
}

TEST_CASE("sampling is deterministic and writes the contact sheet") {
  const std::string dir = fresh_dir("sample");
  write_file(dir + "/train.cfg", kTinyTrainCfg);
  REQUIRE(run_cli("train --config train.cfg", dir).exit_code == 0);

  auto s1 = run_cli("sample --checkpoint run/ckpt_final.sfck --class 1 --n 16 --steps 4 --seed 11 --out s1", dir);
  REQUIRE(s1.exit_code == 0);
  auto s2 = run_cli("sample --checkpoint run/ckpt_final.sfck --class 1 --n 16 --steps 4 --seed 11 --out s2", dir);
  REQUIRE(s2.exit_code == 0);

  int files = 0;
  for (const auto& entry : fs::directory_iterator(dir + "/s1")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("sample_", 0) == 0) ++files;
  }
  REQUIRE(files == 16);
  REQUIRE(fs::exists(dir + "/s1/sheet_c1.ppm"));
  for (int j = 0; j < 16; ++j) {
    char name[64];
    std::snprintf(name, sizeof(name), "sample_c1_%04d.ppm", j);
    REQUIRE(slurp(dir + "/s1/" + name) == slurp(dir + "/s2/" + name));
  }

  auto s3 = run_cli("sample --checkpoint run/ckpt_final.sfck --class 1 --n 2 --steps 64 --seed 11 --out s3", dir);
  REQUIRE(s3.exit_code == 0);
  REQUIRE(slurp(dir + "/s1/sample_c1_0000.ppm") != slurp(dir + "/s3/sample_c1_0000.ppm"));
}

TEST_CASE("invalid schedule is rejected with the offending sizes named") {
  const std::string dir = fresh_dir("badsched");
  std::string cfg = kTinyTrainCfg;
  cfg += "scales = 1,3,4\n";
  write_file(dir + "/bad.cfg", cfg);
  auto res = run_cli("train --config bad.cfg", dir);
  REQUIRE(res.exit_code == 2);
  REQUIRE(res.output.find("3") != std::string::npos);
  REQUIRE(res.output.find("4") != std::string::npos);

  std::string cfg2 = kTinyTrainCfg;
  cfg2 += "scales = 1,2\n";  // finest 2 != 16/4
  write_file(dir + "/bad2.cfg", cfg2);
  auto res2 = run_cli("train --config bad2.cfg", dir);
  REQUIRE(res2.exit_code == 2);
  REQUIRE(res2.output.find("finest scale 2") != std::string::npos);
}

TEST_CASE("config include directive and unknown keys") {
  const std::string dir = fresh_dir("include");
  write_file(dir + "/base.cfg", kTinyTrainCfg);
  write_file(dir + "/main.cfg", "include base.cfg\ntrain.total_steps = 3\ntrain.warmup_steps = 1\n");
  auto res = run_cli("train --config main.cfg", dir);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);

  write_file(dir + "/unknown.cfg", std::string(kTinyTrainCfg) + "no.such.key = 1\nanother_bad = x\n");
  auto res2 = run_cli("train --config unknown.cfg", dir);
  REQUIRE(res2.exit_code == 2);
  // all failures listed before exit
  REQUIRE(res2.output.find("no.such.key") != std::string::npos);
  REQUIRE(res2.output.find("another_bad") != std::string::npos);
}

TEST_CASE("eval prints a metric report") {
  const std::string dir = fresh_dir("eval");
  write_file(dir + "/train.cfg", kTinyTrainCfg);
  REQUIRE(run_cli("train --config train.cfg", dir).exit_code == 0);
  auto res = run_cli("eval --checkpoint run/ckpt_final.sfck --per-class 4 --steps 4", dir);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  REQUIRE(res.output.find("heldout_loss=") != std::string::npos);
  REQUIRE(res.output.find("energy_distance=") != std::string::npos);
  REQUIRE(res.output.find("class_consistency=") != std::string::npos);
}

TEST_CASE("ablation report has one row per axis value") {
  const std::string dir = fresh_dir("ablate");
  auto res = run_cli("ablate --axis pyramid_mode --budget 4 --out rep", dir);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  const std::string report = slurp(dir + "/rep/report.txt");
  REQUIRE(report.find("latent") != std::string::npos);
  REQUIRE(report.find("image") != std::string::npos);
  REQUIRE(fs::exists(dir + "/rep/run_latent.config"));
  REQUIRE(fs::exists(dir + "/rep/run_image.config"));

  // provenance configs differ only on the axis key
  const std::string a = slurp(dir + "/rep/run_latent.config");
  const std::string b = slurp(dir + "/rep/run_image.config");
  REQUIRE(a != b);
  REQUIRE(a.find("pyramid.mode = latent") != std::string::npos);
  REQUIRE(b.find("pyramid.mode = image") != std::string::npos);
}

TEST_CASE("unknown ablation axis exits with a config error") {
  const std::string dir = fresh_dir("badaxis");
  auto res = run_cli("ablate --axis bogus --budget 2", dir);
  REQUIRE(res.exit_code == 2);
}
