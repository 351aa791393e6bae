// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace adaptlab {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'D', 'L', 'B', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw Error("checkpoint: truncated file " + path.string());
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto len = get_le<std::uint32_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw Error("checkpoint: truncated string in " + path.string());
  return s;
}

}  // namespace

const std::string& Checkpoint::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw Error("checkpoint: missing metadata key '" + key + "'");
}

bool Checkpoint::has_meta(const std::string& key) const {
  for (const auto& kv : meta) {
    if (kv.first == key) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.meta.size()));
  for (const auto& [k, v] : checkpoint.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_string(out, name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("checkpoint: bad magic in " + path.string());
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != Checkpoint::kFormatVersion) {
    throw Error("checkpoint: unsupported format version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ckpt;
  const auto n_meta = get_le<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(in, path);
    std::string v = get_string(in, path);
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto n_tensors = get_le<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = get_string(in, path);
    const auto rank = get_le<std::uint32_t>(in, path);
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in, path));
    std::vector<double> data(ad::numel(shape));
    for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
    ckpt.tensors.emplace_back(std::move(name), ad::Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

std::uint64_t hash_tensors(const ad::NamedTensors& tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, tensor] : tensors) {
    mix(name.data(), name.size());
    const auto data = tensor.data();
    mix(data.data(), data.size() * sizeof(double));
  }
  return h;
}

}  // namespace adaptlab
