/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_CHECKPOINT_HPP_
#define PXCNN_CHECKPOINT_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pxcnn/error.hpp"
#include "pxcnn/model.hpp"

namespace pxcnn {

// Checkpoint layout (all integers unsigned 64-bit little-endian):
//   "PXCNN1"                       6-byte magic
//   u64 n, n bytes                 ModelConfig as canonical JSON (sorted keys, no spaces)
//   u64 count                      number of parameter tensors
//   per tensor: u64 rank, rank x u64 dims, product(dims) x f64 (IEEE-754, little-endian)
// Tensors appear in Model::parameters() order.

inline constexpr std::array<char, 6> kCheckpointMagic = {'P', 'X', 'C', 'N', 'N', '1'};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  const std::uint64_t le = to_little_endian(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof le);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

[[noreturn]] inline void fail_checkpoint(const std::string& what) { fail(ErrorKind::checkpoint, "checkpoint: " + what); }

inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t le = 0;
  if (!in.read(reinterpret_cast<char*>(&le), sizeof le)) fail_checkpoint("truncated file");
  return to_little_endian(le);
}

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

inline void save_checkpoint(const Model& model, std::ostream& out) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  const std::string config = nlohmann::json(model.config).dump();
  detail::put_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto params = model.parameters();
  detail::put_u64(out, params.size());
  for (const Tensor* t : params) {
    detail::put_u64(out, t->rank());
    for (std::size_t d : t->shape()) detail::put_u64(out, d);
    for (double v : t->values()) detail::put_f64(out, v);
  }
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::checkpoint, "cannot open " + path.string() + " for writing");
  save_checkpoint(model, out);
  if (!out) fail(ErrorKind::checkpoint, "failed writing " + path.string());
}

/// Reads a checkpoint and rebuilds the model it describes. Tensor shapes must
/// match what the embedded ModelConfig implies.
inline Model load_checkpoint(std::istream& in) {
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) detail::fail_checkpoint("bad magic");
  const std::uint64_t config_len = detail::get_u64(in);
  if (config_len > (1u << 20)) detail::fail_checkpoint("implausible config length");
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len))) detail::fail_checkpoint("truncated config");
  ModelConfig config;
  try {
    config = nlohmann::json::parse(config_text).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    detail::fail_checkpoint(std::string("malformed config: ") + e.what());
  }
  Model model;
  try {
    Rng rng(0);
    model = build_model(config, rng);
  } catch (const Error& e) {
    detail::fail_checkpoint(std::string("invalid config: ") + e.what());
  }
  const auto params = model.parameters();
  if (detail::get_u64(in) != params.size()) detail::fail_checkpoint("parameter tensor count mismatch");
  for (Tensor* t : params) {
    const std::uint64_t rank = detail::get_u64(in);
    if (rank != t->rank()) detail::fail_checkpoint("tensor rank mismatch");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(in);
    if (shape != t->shape()) {
      detail::fail_checkpoint("tensor shape " + shape_string(shape) + " does not match " + shape_string(t->shape()));
    }
    std::vector<double> data(t->size());
    for (double& v : data) v = detail::get_f64(in);
    try {
      *t = Tensor(std::move(shape), std::move(data));
    } catch (const Error& e) {
      detail::fail_checkpoint(e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) detail::fail_checkpoint("trailing bytes");
  return model;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::checkpoint, "cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace pxcnn

#endif  // PXCNN_CHECKPOINT_HPP_
