#pragma once

#include "hpgan/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

/// Versioned little-endian checkpoint: header {magic "HPG1", version, config digest, seed,
/// config text, named counters}, then named tensors {name, dtype, shape, raw data}.
namespace hpgan::ckpt {

inline constexpr char kMagic[4] = {'H', 'P', 'G', '1'};
inline constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  std::variant<Tensor<float>, Tensor<double>> tensor;
};

struct Checkpoint {
  std::uint64_t digest = 0;
  std::uint64_t seed = 0;
  std::string config;
  std::vector<std::pair<std::string, std::int64_t>> counters;
  std::vector<NamedTensor> tensors;

  std::int64_t counter(const std::string& name) const;
  const NamedTensor& find(const std::string& name) const;

  template <typename Scalar>
  void add(std::string name, const Tensor<Scalar>& t) {
    tensors.push_back({std::move(name), t});
  }

  /// Copies a stored tensor into `dst`; the name, dtype and shape must match.
  template <typename Scalar>
  void restore(const std::string& name, Tensor<Scalar>& dst) const;
};

void save(const std::string& path, const Checkpoint& ckpt);
Checkpoint load(const std::string& path);

std::string to_bytes(const Checkpoint& ckpt);
Checkpoint from_bytes(const std::string& bytes);

}  // namespace hpgan::ckpt
