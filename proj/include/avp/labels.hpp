// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace avp {

/// Dense 0/1 matrix, segments x classes.
struct BinaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> v;

  BinaryMatrix() = default;
  BinaryMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0) {}

  std::uint8_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  void set(std::size_t r, std::size_t c, std::uint8_t val) { v[r * cols + c] = val; }

  bool operator==(const BinaryMatrix& o) const = default;
};

/// Elementwise AND, the audio-visual stream of a pair of modality matrices.
inline BinaryMatrix and_matrices(const BinaryMatrix& a, const BinaryMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("and_matrices: shape mismatch");
  }
  BinaryMatrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = (a.v[i] && b.v[i]) ? 1 : 0;
  return out;
}

/// Per-video segment labels for both modalities.
struct VideoLabels {
  BinaryMatrix audio;
  BinaryMatrix visual;
};

}  // namespace avp
