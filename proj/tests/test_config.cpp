// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "scaleflow/config.hpp"

using namespace scaleflow;

TEST_CASE("presets set the depth/width family") {
  auto cfg = RunConfig::from_text("ar.preset = S\nflow.preset = S\n");
  REQUIRE(cfg.model.ar.depth == 12);
  REQUIRE(cfg.model.ar.width == 768);
  REQUIRE(cfg.model.flow.depth == 2);
  REQUIRE(cfg.model.flow.width == 1024);

  auto h = RunConfig::from_text("ar.preset = H\nflow.preset = H\n");
  REQUIRE(h.model.ar.depth == 30);
  REQUIRE(h.model.ar.width == 1536);
  REQUIRE(h.model.flow.depth == 18);

  // explicit keys after a preset override it
  auto mixed = RunConfig::from_text("ar.preset = tiny\nar.depth = 6\n");
  REQUIRE(mixed.model.ar.depth == 6);
  REQUIRE(mixed.model.ar.width == 128);
}

TEST_CASE("epoch durations resolve against the dataset size") {
  auto cfg = RunConfig::from_text("train.total_epochs = 4\ntrain.warmup_epochs = 1\ntrain.batch = 8\n");
  cfg.finalize_with_data(4, 64);  // 8 steps per epoch
  REQUIRE(cfg.train.total_steps == 32);
  REQUIRE(cfg.train.warmup_steps == 8);

  auto both = RunConfig::from_text("train.total_epochs = 4\ntrain.total_steps = 100\n");
  REQUIRE_THROWS_AS(both.finalize_with_data(4, 64), ConfigError);
}

TEST_CASE("resolved text is a fixed point of the parser") {
  auto cfg = RunConfig::from_text("seed = 9\nscales = 1,4,16\nflow.injection = cross_attention\ntrain.batch = 12\n");
  cfg.finalize_with_data(4, 128);
  const std::string text = cfg.resolved_text();
  auto back = RunConfig::from_text(text);
  back.finalize_with_data(4, 128);
  REQUIRE(back.resolved_text() == text);
}

TEST_CASE("all validation failures are collected") {
  auto cfg = RunConfig::from_text("scales = 1,2,4\n");
  cfg.synth.size = 16;
  cfg.model.codec.patch = 4;
  cfg.train.peak_lr = 1e-4;
  cfg.train.min_lr = 1.0;          // min above peak
  cfg.train.label_dropout = 1.5;   // out of range
  cfg.model.scales = {1, 2, 8};    // finest mismatch (16/4 = 4)
  std::vector<std::string> errors;
  cfg.validate(errors);
  REQUIRE(errors.size() >= 3);
}

TEST_CASE("unknown keys and malformed values are reported together") {
  try {
    RunConfig::from_text("nonsense = 1\ntrain.batch = soup\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("nonsense") != std::string::npos);
    REQUIRE(msg.find("soup") != std::string::npos);
  }
}

TEST_CASE("enum keys reject junk") {
  REQUIRE_THROWS_AS(RunConfig::from_text("flow.injection = telepathy\n"), ConfigError);
  REQUIRE_THROWS_AS(RunConfig::from_text("pyramid.mode = upside_down\n"), ConfigError);
  REQUIRE_THROWS_AS(RunConfig::from_text("precision = float16\n"), ConfigError);
}
