// SPDX-License-Identifier: Apache-2.0

#include "avp/aggregation.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "avp/rng.hpp"

namespace avp::attn {
namespace {

Tensor xavier(std::size_t dim, std::mt19937_64& eng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(2 * dim));
  return Tensor::uniform({dim, dim}, eng, -lim, lim, true);
}

// softmax(q k^T / sqrt(d)) v for one batch item.
Tensor attend(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq, const Tensor& wk,
              const Tensor& wv) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q_in.extent(1)));
  Tensor q = matmul(q_in, wq);
  Tensor k = matmul(kv_in, wk);
  Tensor v = matmul(kv_in, wv);
  Tensor scores = scale(matmul(q, transpose2d(k)), inv_sqrt_d);
  return matmul(softmax(scores, 1), v);
}

}  // namespace

HybridAttnParams init_hybrid_attn(std::size_t dim, std::mt19937_64& eng) {
  auto modality = [&] {
    ModalityAttnParams p;
    p.self_q = xavier(dim, eng);
    p.self_k = xavier(dim, eng);
    p.self_v = xavier(dim, eng);
    p.cross_q = xavier(dim, eng);
    p.cross_k = xavier(dim, eng);
    p.cross_v = xavier(dim, eng);
    return p;
  };
  return {modality(), modality()};
}

std::pair<Tensor, Tensor> hybrid_attend(const Tensor& audio, const Tensor& visual,
                                        const HybridAttnParams& params) {
  if (audio.shape() != visual.shape() || audio.rank() != 3) {
    throw std::invalid_argument("hybrid_attend: expects matching batch x T x d streams, got " +
                                shape_str(audio.shape()) + " and " + shape_str(visual.shape()));
  }
  const std::size_t batch = audio.extent(0);
  std::vector<Tensor> out_a, out_v;
  out_a.reserve(batch);
  out_v.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor fa = index_axis(audio, 0, b);
    Tensor fv = index_axis(visual, 0, b);
    const ModalityAttnParams& pa = params.audio;
    const ModalityAttnParams& pv = params.visual;
    Tensor a = add(fa, add(attend(fa, fa, pa.self_q, pa.self_k, pa.self_v),
                           attend(fa, fv, pa.cross_q, pa.cross_k, pa.cross_v)));
    Tensor v = add(fv, add(attend(fv, fv, pv.self_q, pv.self_k, pv.self_v),
                           attend(fv, fa, pv.cross_q, pv.cross_k, pv.cross_v)));
    out_a.push_back(a);
    out_v.push_back(v);
  }
  return {stack(out_a, 0), stack(out_v, 0)};
}

}  // namespace avp::attn
