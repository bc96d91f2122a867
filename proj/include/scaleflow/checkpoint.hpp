// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file chunked checkpoint. Layout (all integers little-endian):
//
//   magic   "SFCK" (4 bytes)
//   u32     format version (currently 1)
//   u8      scalar width in bytes (4 = float32, 8 = float64)
//   u64     FNV-1a digest of the "config" chunk payload
//   u64     training step counter
//   u32     chunk count
//   chunks, each:
//     u32   name length, then name bytes
//     u8    kind: 0 = tensor, 1 = raw bytes
//     tensor: u32 rank, i64 extents[rank], raw scalar data (row-major)
//     raw:    u64 byte length, bytes
//
// The "config" chunk holds the resolved run configuration; a loader first
// reads it to rebuild the architecture, then fills parameters by name.
// Loading back on the same platform reproduces forward outputs bit-exactly.

#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scaleflow/engine.hpp"

namespace scaleflow {

namespace detail {

template <typename I>
void write_int(std::ostream& os, I v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

template <typename I>
I read_int(std::istream& is) {
  I v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(I));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

inline void write_name(std::ostream& os, const std::string& name) {
  write_int<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

inline std::string read_name(std::istream& is) {
  const uint32_t len = read_int<uint32_t>(is);
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw IoError("checkpoint: truncated name");
  return name;
}

template <typename T>
void write_tensor_chunk(std::ostream& os, const std::string& name, const Shape& shape, const std::vector<T>& data) {
  write_name(os, name);
  write_int<uint8_t>(os, 0);
  write_int<uint32_t>(os, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) write_int<int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
}

inline void write_raw_chunk(std::ostream& os, const std::string& name, const std::string& payload) {
  write_name(os, name);
  write_int<uint8_t>(os, 1);
  write_int<uint64_t>(os, payload.size());
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  uint32_t version = 0;
  int scalar_width = 0;
  uint64_t config_digest = 0;
  uint64_t step = 0;
  std::string config_text;
};

template <typename T>
void save_checkpoint(const std::string& path, const GenModel<T>& model, const AdamW<T>* opt, int64_t step,
                     const std::string& config_text) {
  auto params = model.params();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");

  uint32_t chunks = 1 /*config*/ + 2 /*norm*/ + 2 /*codec*/ + static_cast<uint32_t>(params.size());
  if (opt) chunks += 2 * static_cast<uint32_t>(params.size());

  os.write("SFCK", 4);
  detail::write_int<uint32_t>(os, kCheckpointVersion);
  detail::write_int<uint8_t>(os, sizeof(T));
  detail::write_int<uint64_t>(os, fnv1a(config_text));
  detail::write_int<uint64_t>(os, static_cast<uint64_t>(step));
  detail::write_int<uint32_t>(os, chunks);

  detail::write_raw_chunk(os, "config", config_text);
  detail::write_tensor_chunk(os, "norm.mean", model.norm_mean.shape(), model.norm_mean.vals());
  detail::write_tensor_chunk(os, "norm.std", model.norm_std.shape(), model.norm_std.vals());
  detail::write_tensor_chunk(os, "codec.enc", model.codec->encoder_weight().shape(), model.codec->encoder_weight().vals());
  detail::write_tensor_chunk(os, "codec.dec", model.codec->decoder_weight().shape(), model.codec->decoder_weight().vals());
  for (const auto& [name, p] : params) detail::write_tensor_chunk(os, "param." + name, p.shape(), p.vals());
  if (opt) {
    auto& m = const_cast<AdamW<T>*>(opt)->moment1();
    auto& v = const_cast<AdamW<T>*>(opt)->moment2();
    require(m.size() == params.size(), "save_checkpoint: optimizer does not match parameter set");
    for (size_t i = 0; i < params.size(); ++i) {
      const Shape flat{static_cast<int64_t>(m[i].size())};
      detail::write_tensor_chunk(os, "opt.m." + params[i].first, flat, m[i]);
      detail::write_tensor_chunk(os, "opt.v." + params[i].first, flat, v[i]);
    }
  }
  if (!os) throw IoError("short write to " + path);
}

// Header + config text only; used to rebuild the architecture before loading.
inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SFCK", 4) != 0) throw IoError(path + ": not a checkpoint file");
  CheckpointInfo info;
  info.version = detail::read_int<uint32_t>(is);
  if (info.version != kCheckpointVersion) {
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(info.version));
  }
  info.scalar_width = detail::read_int<uint8_t>(is);
  info.config_digest = detail::read_int<uint64_t>(is);
  info.step = detail::read_int<uint64_t>(is);
  const uint32_t chunks = detail::read_int<uint32_t>(is);
  for (uint32_t i = 0; i < chunks; ++i) {
    const std::string name = detail::read_name(is);
    const uint8_t kind = detail::read_int<uint8_t>(is);
    if (kind == 1) {
      const uint64_t len = detail::read_int<uint64_t>(is);
      std::string payload(len, '\0');
      is.read(payload.data(), static_cast<std::streamsize>(len));
      if (!is) throw IoError(path + ": truncated raw chunk");
      if (name == "config") {
        info.config_text = payload;
        if (fnv1a(payload) != info.config_digest) throw IoError(path + ": config digest mismatch");
        return info;
      }
    } else {
      const uint32_t rank = detail::read_int<uint32_t>(is);
      int64_t numel = 1;
      for (uint32_t d = 0; d < rank; ++d) numel *= detail::read_int<int64_t>(is);
      is.seekg(numel * info.scalar_width, std::ios::cur);
      if (!is) throw IoError(path + ": truncated tensor chunk");
    }
  }
  throw IoError(path + ": no config chunk");
}

// Fills model (and optionally optimizer) state in place; the model must have
// been built with the architecture recorded in the checkpoint's config.
// Returns the stored step counter.
template <typename T>
int64_t load_checkpoint(const std::string& path, GenModel<T>& model, AdamW<T>* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SFCK", 4) != 0) throw IoError(path + ": not a checkpoint file");
  const uint32_t version = detail::read_int<uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError(path + ": unsupported checkpoint version");
  const int width = detail::read_int<uint8_t>(is);
  if (width != static_cast<int>(sizeof(T))) {
    throw IoError(path + ": checkpoint scalar width " + std::to_string(width) + " does not match build (" +
                  std::to_string(sizeof(T)) + "); set the matching precision");
  }
  detail::read_int<uint64_t>(is);  // digest, verified against config below
  const uint64_t step = detail::read_int<uint64_t>(is);
  const uint32_t chunks = detail::read_int<uint32_t>(is);

  auto params = model.params();
  std::map<std::string, Tensor<T>*> slots;
  for (auto& [name, p] : params) slots["param." + name] = &p;
  slots["norm.mean"] = &model.norm_mean;
  slots["norm.std"] = &model.norm_std;
  slots["codec.enc"] = &model.codec->encoder_weight();
  slots["codec.dec"] = &model.codec->decoder_weight();

  std::map<std::string, std::vector<T>*> opt_slots;
  if (opt) {
    if (opt->moment1().size() != params.size()) opt->init(params);
    for (size_t i = 0; i < params.size(); ++i) {
      opt_slots["opt.m." + params[i].first] = &opt->moment1()[i];
      opt_slots["opt.v." + params[i].first] = &opt->moment2()[i];
    }
  }

  size_t filled = 0;
  for (uint32_t i = 0; i < chunks; ++i) {
    const std::string name = detail::read_name(is);
    const uint8_t kind = detail::read_int<uint8_t>(is);
    if (kind == 1) {
      const uint64_t len = detail::read_int<uint64_t>(is);
      is.seekg(static_cast<std::streamoff>(len), std::ios::cur);
      continue;
    }
    const uint32_t rank = detail::read_int<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = detail::read_int<int64_t>(is);
    const int64_t numel = shape_numel(shape);

    auto it = slots.find(name);
    if (it != slots.end()) {
      if (it->second->shape() != shape) {
        throw IoError(path + ": tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(it->second->shape()));
      }
      is.read(reinterpret_cast<char*>(it->second->vals().data()),
              static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(T))));
      ++filled;
    } else if (auto oit = opt_slots.find(name); oit != opt_slots.end()) {
      require(static_cast<int64_t>(oit->second->size()) == numel, path + ": optimizer chunk size mismatch for " + name);
      is.read(reinterpret_cast<char*>(oit->second->data()),
              static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(T))));
    } else {
      is.seekg(numel * static_cast<int64_t>(sizeof(T)), std::ios::cur);
    }
    if (!is) throw IoError(path + ": truncated tensor data");
  }
  if (filled != slots.size()) {
    throw IoError(path + ": checkpoint is missing " + std::to_string(slots.size() - filled) + " model tensors");
  }
  if (opt) opt->set_steps(static_cast<int64_t>(step));
  return static_cast<int64_t>(step);
}

}  // namespace scaleflow
