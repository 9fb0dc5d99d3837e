// SPDX-License-Identifier: Apache-2.0
//
// Segment-level label sets rendered as canonical sentences, embedded with a
// frozen seeded prototype table (stand-in for a pretrained text encoder),
// and fused into the modality features through a two-layer MLP with a
// LayerNorm and an output projection.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avp/tensor.hpp"

namespace avp::text {

enum class Modality : std::uint8_t { Audio, Visual };

struct TextDescription {
  Modality modality;
  std::string sentence;
  std::vector<std::size_t> classes;  // ascending, as named in the sentence
};

/// Canonical sentence for a segment-level binary label vector.
TextDescription render_text(const std::vector<std::uint8_t>& label,
                            const std::vector<std::string>& class_names, Modality modality);

/// Deterministic sentence embeddings: one seeded unit prototype per class
/// plus one per modality for the "nothing here" sentences; an embedding is
/// the L2-normalized sum of the prototypes named by the description.
class TextEmbedder {
 public:
  TextEmbedder(std::size_t classes, std::size_t dim, std::uint64_t seed);

  std::vector<double> embed(const TextDescription& t) const;
  const std::vector<double>& prototype(std::size_t cls) const { return prototypes_[cls]; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> prototypes_;
  std::vector<double> none_audio_;
  std::vector<double> none_visual_;
};

struct FusionParams {
  Tensor w1, b1;          // 2d x m, m
  Tensor w2, b2;          // m x d, d
  Tensor ln_gain, ln_bias;
  Tensor proj_w, proj_b;  // d x d, d
};

FusionParams init_fusion_params(std::size_t dim, std::size_t hidden, std::mt19937_64& eng);

/// Project(LayerNorm(W2 ReLU(W1 (f || e) + b1) + b2)); shape-preserving.
Tensor fuse(const Tensor& features, const Tensor& text_embed, const FusionParams& params);

}  // namespace avp::text
