// SPDX-License-Identifier: Apache-2.0
//
// Segment classification and attentive multiple-instance pooling. Class-aware
// temporal attention pools each modality's segment probabilities into P_a and
// P_v; a per-class softmax over the two modalities combines them into the
// joint video-level prediction P. Every pooled value is a convex combination
// of segment probabilities.

#pragma once

#include <random>

#include "avp/tensor.hpp"

namespace avp::mmil {

struct MmilParams {
  Tensor cls_w_a, cls_b_a;  // d x C, C
  Tensor cls_w_v, cls_b_v;
  Tensor tattn_w, tattn_b;  // temporal attention projection, shared
  Tensor mattn_w, mattn_b;  // modality attention projection, shared
};

MmilParams init_mmil(std::size_t dim, std::size_t classes, std::mt19937_64& eng);

struct SegmentProbs {
  Tensor audio;   // b x T x C, in (0,1)
  Tensor visual;
};

struct VideoPreds {
  Tensor audio;   // b x C
  Tensor visual;
  Tensor joint;
};

SegmentProbs classify_segments(const Tensor& audio, const Tensor& visual, const MmilParams& p);

VideoPreds mmil_pool(const SegmentProbs& probs, const Tensor& audio_feat,
                     const Tensor& visual_feat, const MmilParams& p);

}  // namespace avp::mmil
