// SPDX-License-Identifier: Apache-2.0

#include "avp/mmil_head.hpp"

#include <cmath>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp::mmil {
namespace {

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& eng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
  return Tensor::uniform({in, out}, eng, -lim, lim, true);
}

}  // namespace

MmilParams init_mmil(std::size_t dim, std::size_t classes, std::mt19937_64& eng) {
  MmilParams p;
  p.cls_w_a = xavier(dim, classes, eng);
  p.cls_b_a = Tensor::zeros({classes}, true);
  p.cls_w_v = xavier(dim, classes, eng);
  p.cls_b_v = Tensor::zeros({classes}, true);
  p.tattn_w = xavier(dim, classes, eng);
  p.tattn_b = Tensor::zeros({classes}, true);
  p.mattn_w = xavier(dim, classes, eng);
  p.mattn_b = Tensor::zeros({classes}, true);
  return p;
}

SegmentProbs classify_segments(const Tensor& audio, const Tensor& visual, const MmilParams& p) {
  if (audio.rank() != 3 || visual.rank() != 3) {
    throw std::invalid_argument("classify_segments: expects batch x T x d features");
  }
  return {sigmoid(linear(audio, p.cls_w_a, p.cls_b_a)),
          sigmoid(linear(visual, p.cls_w_v, p.cls_b_v))};
}

VideoPreds mmil_pool(const SegmentProbs& probs, const Tensor& audio_feat,
                     const Tensor& visual_feat, const MmilParams& p) {
  // Temporal attention: per-class softmax over segments, per modality.
  Tensor wt_a = softmax(linear(audio_feat, p.tattn_w, p.tattn_b), 1);
  Tensor wt_v = softmax(linear(visual_feat, p.tattn_w, p.tattn_b), 1);
  Tensor pa = sum_axis(mul(wt_a, probs.audio), 1);   // b x C
  Tensor pv = sum_axis(mul(wt_v, probs.visual), 1);

  // Modality attention: per-class softmax over {audio, visual}, logits from
  // the mean-pooled modality features.
  Tensor la = mean_axis(linear(audio_feat, p.mattn_w, p.mattn_b), 1);  // b x C
  Tensor lv = mean_axis(linear(visual_feat, p.mattn_w, p.mattn_b), 1);
  Tensor wm = softmax(stack({la, lv}, 1), 1);  // b x 2 x C
  Tensor wa = index_axis(wm, 1, 0);
  Tensor wv = index_axis(wm, 1, 1);
  Tensor joint = add(mul(wa, pa), mul(wv, pv));
  return {pa, pv, joint};
}

}  // namespace avp::mmil
