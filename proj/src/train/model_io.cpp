// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

// Layout, all integers and doubles little-endian:
//   "MITA" | u32 version
//   u64 input_vocab, classes, seq_len, dim, layers, heads
//   u32 mechanism | u64 m, k, s | u8 shared, routed
//   u32 task kind | u64 task seq_len, vocab, query_slots, seed
//   u64 parameter count | f64 tensors in BlockParams::for_each order, row-major

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "mita/train.h"

namespace mita {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'I', 'T', 'A'};

template <typename T>
void put(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw std::runtime_error("load_model: truncated file");
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{bytes[i]} << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void save_model(std::ostream& out, const ModelFile& model) {
  const ModelDims& d = model.params.dims;
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kParamsFormatVersion);
  for (std::size_t x : {d.input_vocab, d.classes, d.seq_len, d.dim, d.layers, d.heads}) {
    put<std::uint64_t>(out, x);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.attn.mech));
  put<std::uint64_t>(out, model.attn.cfg.m);
  put<std::uint64_t>(out, model.attn.cfg.k);
  put<std::uint64_t>(out, model.attn.cfg.s);
  put<std::uint8_t>(out, model.attn.cfg.shared_expert ? 1 : 0);
  put<std::uint8_t>(out, model.attn.cfg.routed_experts ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.task.kind));
  put<std::uint64_t>(out, model.task.seq_len);
  put<std::uint64_t>(out, model.task.vocab);
  put<std::uint64_t>(out, model.task.query_slots);
  put<std::uint64_t>(out, model.task.seed);
  put<std::uint64_t>(out, model.params.parameter_count());
  model.params.for_each([&](const std::string&, const Mat& t, bool) {
    for (double x : t.data()) put<double>(out, x);
  });
  if (!out) throw std::runtime_error("save_model: write failed");
}

ModelFile load_model(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("load_model: not a MITA params file");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kParamsFormatVersion) {
    throw std::runtime_error("load_model: unsupported format version " + std::to_string(version));
  }
  ModelDims dims;
  dims.input_vocab = get<std::uint64_t>(in);
  dims.classes = get<std::uint64_t>(in);
  dims.seq_len = get<std::uint64_t>(in);
  dims.dim = get<std::uint64_t>(in);
  dims.layers = get<std::uint64_t>(in);
  dims.heads = get<std::uint64_t>(in);
  dims.validate();

  ModelFile model;
  const auto mech = get<std::uint32_t>(in);
  if (mech > static_cast<std::uint32_t>(Mechanism::kRouteOnly)) {
    throw std::runtime_error("load_model: unknown mechanism id " + std::to_string(mech));
  }
  model.attn.mech = static_cast<Mechanism>(mech);
  model.attn.cfg.m = get<std::uint64_t>(in);
  model.attn.cfg.k = get<std::uint64_t>(in);
  model.attn.cfg.s = get<std::uint64_t>(in);
  model.attn.cfg.shared_expert = get<std::uint8_t>(in) != 0;
  model.attn.cfg.routed_experts = get<std::uint8_t>(in) != 0;
  const auto kind = get<std::uint32_t>(in);
  if (kind > static_cast<std::uint32_t>(TaskKind::kCopy)) {
    throw std::runtime_error("load_model: unknown task id " + std::to_string(kind));
  }
  model.task.kind = static_cast<TaskKind>(kind);
  model.task.seq_len = get<std::uint64_t>(in);
  model.task.vocab = get<std::uint64_t>(in);
  model.task.query_slots = get<std::uint64_t>(in);
  model.task.seed = get<std::uint64_t>(in);

  model.params = zeros_like(init_params(dims, 0));
  const auto count = get<std::uint64_t>(in);
  if (count != model.params.parameter_count()) {
    throw std::runtime_error("load_model: parameter count " + std::to_string(count) +
                             " does not match dims (" +
                             std::to_string(model.params.parameter_count()) + ")");
  }
  model.params.for_each([&](const std::string&, Mat& t, bool) {
    for (double& x : t.data()) x = get<double>(in);
  });
  if (!model.params.all_finite()) throw std::runtime_error("load_model: non-finite parameter");
  return model;
}

void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  save_model(out, model);
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  return load_model(in);
}

}  // namespace mita
