#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdat {

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int s : shape) {
    if (s <= 0) throw std::invalid_argument("tensor shape entries must be positive");
    n *= s;
  }
  return n;
}

// Dense row-major tensor of 64-bit reals. All entries are required to be
// finite; callers that may produce NaN/Inf go through require_finite.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> shape_in, std::vector<double> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int> shape_in) {
    const auto n = shape_numel(shape_in);
    return Tensor(std::move(shape_in), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  // 2-D accessors; a 1-D tensor is treated as a single row.
  int rows() const {
    if (shape.size() == 2) return shape[0];
    if (shape.size() == 1) return 1;
    throw std::logic_error("tensor is not 2-D");
  }
  int cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    throw std::logic_error("tensor is not 2-D");
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  void require_finite(const std::string& what) const {
    for (double v : data)
      if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + what);
  }
};

// FNV-1a over the IEEE-754 byte representation. Used for parameter checksums
// in reports and scope-isolation assertions.
inline std::uint64_t checksum64(std::span<const double> values) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

}  // namespace sdat
