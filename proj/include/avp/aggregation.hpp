// SPDX-License-Identifier: Apache-2.0
//
// Hybrid attention aggregation: each modality keeps a residual stream and
// adds scaled dot-product self-attention over its own segments plus
// cross-attention into the other modality.

#pragma once

#include <random>
#include <utility>

#include "avp/tensor.hpp"

namespace avp::attn {

struct ModalityAttnParams {
  Tensor self_q, self_k, self_v;
  Tensor cross_q, cross_k, cross_v;
};

struct HybridAttnParams {
  ModalityAttnParams audio;
  ModalityAttnParams visual;
};

HybridAttnParams init_hybrid_attn(std::size_t dim, std::mt19937_64& eng);

/// out_a = f_a + SelfAttn(f_a) + CrossAttn(q = f_a, kv = f_v), and
/// symmetrically for visual. Softmax runs over segments with 1/sqrt(d).
std::pair<Tensor, Tensor> hybrid_attend(const Tensor& audio, const Tensor& visual,
                                        const HybridAttnParams& params);

}  // namespace avp::attn
