// SPDX-License-Identifier: Apache-2.0

#include "avp/temporal_graph.hpp"

#include <cmath>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp::graph {
namespace {

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& eng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
  return Tensor::uniform({in, out}, eng, -lim, lim, true);
}

}  // namespace

Tensor TemporalGraph::mask() const {
  std::vector<double> m(adjacency.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = adjacency[i] ? 1.0 : 0.0;
  return Tensor::from_data({segments, segments}, std::move(m));
}

TemporalGraph build_graph(std::size_t segments, std::size_t hops) {
  if (segments == 0) {
    throw std::invalid_argument("build_graph: need at least one segment");
  }
  TemporalGraph g;
  g.segments = segments;
  g.hops = hops;
  g.adjacency.assign(segments * segments, 0);
  g.neighbors.resize(segments);
  for (std::size_t i = 0; i < segments; ++i) {
    for (std::size_t j = 0; j < segments; ++j) {
      const std::size_t dist = i > j ? i - j : j - i;
      if (dist <= hops) {
        g.adjacency[i * segments + j] = 1;
        g.neighbors[i].push_back(j);
      }
    }
  }
  return g;
}

GatLayerParams init_gat_layer(std::size_t dim, std::size_t heads, double dropout_rate,
                              std::mt19937_64& eng) {
  if (heads == 0) throw std::invalid_argument("init_gat_layer: need at least one head");
  GatLayerParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    p.head_w.push_back(xavier(dim, dim, eng));
    p.head_a.push_back(xavier(2 * dim, 1, eng));
  }
  p.bn_gain = Tensor::ones({dim}, true);
  p.bn_bias = Tensor::zeros({dim}, true);
  p.bn_state = BatchNormState(dim);
  p.dropout_rate = dropout_rate;
  return p;
}

Tensor gat_layer(const Tensor& nodes, const TemporalGraph& g, GatLayerParams& params, Mode mode,
                 std::mt19937_64& eng, const GatLayerConfig& cfg,
                 std::vector<Tensor>* attention_out) {
  if (nodes.rank() != 3) {
    throw std::invalid_argument("gat_layer: nodes must be batch x T x d, got " +
                                shape_str(nodes.shape()));
  }
  const std::size_t batch = nodes.extent(0), t_len = nodes.extent(1), dim = nodes.extent(2);
  if (t_len != g.segments) {
    throw std::invalid_argument("gat_layer: graph has " + std::to_string(g.segments) +
                                " segments but nodes carry " + std::to_string(t_len));
  }
  const std::size_t heads = params.head_w.size();
  const Tensor adj = g.mask();
  const Tensor ones_row = Tensor::ones({1, t_len});
  const Tensor ones_col = Tensor::ones({t_len, 1});

  if (attention_out) attention_out->clear();

  // Per head: s = X W; logit_ij = leaky(a_src . s_i + a_dst . s_j) on edges;
  // alpha = masked row softmax; message = alpha s.
  std::vector<Tensor> head_sum(batch);  // per batch item, running sum over heads
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor s = linear(nodes, params.head_w[h], Tensor::zeros({dim}));
    Tensor a_src = slice_axis(params.head_a[h], 0, 0, dim);    // d x 1
    Tensor a_dst = slice_axis(params.head_a[h], 0, dim, dim);  // d x 1
    std::vector<Tensor> attn_items;
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor s_b = index_axis(s, 0, b);  // T x d
      Tensor u = matmul(s_b, a_src);
      Tensor v = matmul(s_b, a_dst);
      Tensor logits = add(matmul(u, ones_row), matmul(ones_col, transpose2d(v)));
      logits = leaky_relu(logits, cfg.leaky_slope);
      Tensor alpha = softmax_masked(logits, adj, 1);
      if (attention_out) attn_items.push_back(alpha);
      Tensor msg = matmul(alpha, s_b);
      msg = dropout(msg, params.dropout_rate, mode, eng);
      head_sum[b] = head_sum[b].defined() ? add(head_sum[b], msg) : msg;
    }
    if (attention_out) attention_out->push_back(stack(attn_items, 0));
  }

  std::vector<Tensor> items;
  items.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) items.push_back(head_sum[b]);
  Tensor agg = scale(stack(items, 0), 1.0 / static_cast<double>(heads));
  if (cfg.elu_activation) agg = elu(agg);
  if (cfg.residual) agg = add(agg, nodes);
  if (cfg.batch_norm) {
    Tensor flat = reshape(agg, {batch * t_len, dim});
    flat = batch_norm_1d(flat, params.bn_gain, params.bn_bias, params.bn_state, mode);
    agg = reshape(flat, {batch, t_len, dim});
  }
  return agg;
}

GlobalFusionParams init_global_fusion(std::size_t dim, std::size_t hidden, std::mt19937_64& eng) {
  GlobalFusionParams p;
  p.w1 = xavier(2 * dim, hidden, eng);
  p.b1 = Tensor::zeros({hidden}, true);
  p.w2 = xavier(hidden, dim, eng);
  p.b2 = Tensor::zeros({dim}, true);
  return p;
}

Tensor global_fuse(const Tensor& nodes, const GlobalFusionParams& params) {
  if (nodes.rank() != 3) {
    throw std::invalid_argument("global_fuse: nodes must be batch x T x d, got " +
                                shape_str(nodes.shape()));
  }
  const std::size_t t_len = nodes.extent(1);
  Tensor g = mean_axis(nodes, 1);  // b x d
  std::vector<Tensor> copies(t_len, g);
  Tensor g3 = stack(copies, 1);  // b x T x d
  Tensor cat = concat_lastdim(nodes, g3);
  Tensor h = relu(linear(cat, params.w1, params.b1));
  // residual: nodes keep their local signal, the MLP contributes context
  return add(nodes, linear(h, params.w2, params.b2));
}

StreamParams init_stream(std::size_t dim, std::size_t hops, std::size_t heads,
                         std::size_t num_layers, double dropout_rate, std::mt19937_64& eng) {
  StreamParams p;
  p.hops = hops;
  for (std::size_t l = 0; l < num_layers; ++l) {
    p.layers.push_back(init_gat_layer(dim, heads, dropout_rate, eng));
  }
  p.global = init_global_fusion(dim, dim, eng);
  return p;
}

Tensor propagate_stream(const Tensor& nodes, StreamParams& params, Mode mode,
                        std::mt19937_64& eng, const GatLayerConfig& cfg) {
  const TemporalGraph g = build_graph(nodes.extent(1), params.hops);
  Tensor x = nodes;
  for (GatLayerParams& layer : params.layers) {
    x = gat_layer(x, g, layer, mode, eng, cfg);
  }
  return global_fuse(x, params.global);
}

std::pair<Tensor, Tensor> mtg_block(const Tensor& audio, const Tensor& visual,
                                    StreamParams& audio_params, StreamParams& visual_params,
                                    Mode mode, std::mt19937_64& eng, const GatLayerConfig& cfg) {
  if (audio.shape() != visual.shape()) {
    throw std::invalid_argument("mtg_block: stream shapes disagree, " + shape_str(audio.shape()) +
                                " vs " + shape_str(visual.shape()));
  }
  Tensor a = propagate_stream(audio, audio_params, mode, eng, cfg);
  Tensor v = propagate_stream(visual, visual_params, mode, eng, cfg);
  return {a, v};
}

}  // namespace avp::graph
