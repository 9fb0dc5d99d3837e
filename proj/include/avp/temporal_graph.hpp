// SPDX-License-Identifier: Apache-2.0
//
// Per-modality temporal graphs over the T segments of a video. Segments
// within hop distance K are connected bidirectionally (plus self-loops) and
// features propagate through multi-head residual GAT layers. A global
// mean-pooled video vector is then fused back into every node.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "avp/tensor.hpp"

namespace avp::graph {

struct TemporalGraph {
  std::size_t segments = 0;
  std::size_t hops = 0;
  std::vector<std::uint8_t> adjacency;               // T x T, row-major
  std::vector<std::vector<std::size_t>> neighbors;   // ascending per node

  bool connected(std::size_t i, std::size_t j) const { return adjacency[i * segments + j] != 0; }
  /// Adjacency as a constant 0/1 tensor, the softmax mask for one video.
  Tensor mask() const;
};

/// Banded symmetric adjacency with self-loops: edge iff |i - j| <= K.
TemporalGraph build_graph(std::size_t segments, std::size_t hops);

struct GatLayerParams {
  std::vector<Tensor> head_w;  // H tensors, d x d
  std::vector<Tensor> head_a;  // H tensors, 2d x 1 (split into source/target halves)
  Tensor bn_gain, bn_bias;
  BatchNormState bn_state{0};
  double dropout_rate = 0.1;
};

struct GatLayerConfig {
  bool residual = true;
  bool batch_norm = true;
  bool elu_activation = true;  // false: identity, for ablation and oracles
  double leaky_slope = 0.2;
};

GatLayerParams init_gat_layer(std::size_t dim, std::size_t heads, double dropout_rate,
                              std::mt19937_64& eng);

/// One multi-head GAT layer over nodes (b x T x d). Per head, attention
/// logits over the graph neighborhood pass through LeakyReLU and a masked
/// softmax; messages are averaged over heads, activated, residual-added and
/// batch-normalized over the flattened (b T) node axis. Dropout hits the
/// attention-weighted messages in train mode.
/// `attention_out`, when given, receives one b x T x T tensor per head.
Tensor gat_layer(const Tensor& nodes, const TemporalGraph& g, GatLayerParams& params, Mode mode,
                 std::mt19937_64& eng, const GatLayerConfig& cfg = {},
                 std::vector<Tensor>* attention_out = nullptr);

struct GlobalFusionParams {
  Tensor w1, b1;  // 2d x h, h
  Tensor w2, b2;  // h x d, d
};

GlobalFusionParams init_global_fusion(std::size_t dim, std::size_t hidden, std::mt19937_64& eng);

/// Concatenates each node with the mean-pooled video vector and maps the
/// pair back to d through a two-layer MLP.
Tensor global_fuse(const Tensor& nodes, const GlobalFusionParams& params);

struct StreamParams {
  std::size_t hops = 4;
  std::vector<GatLayerParams> layers;
  GlobalFusionParams global;
};

StreamParams init_stream(std::size_t dim, std::size_t hops, std::size_t heads,
                         std::size_t num_layers, double dropout_rate, std::mt19937_64& eng);

/// Stacked GAT layers followed by global fusion for one modality stream.
Tensor propagate_stream(const Tensor& nodes, StreamParams& params, Mode mode,
                        std::mt19937_64& eng, const GatLayerConfig& cfg = {});

/// Both modality streams with independent graphs and parameters.
std::pair<Tensor, Tensor> mtg_block(const Tensor& audio, const Tensor& visual,
                                    StreamParams& audio_params, StreamParams& visual_params,
                                    Mode mode, std::mt19937_64& eng,
                                    const GatLayerConfig& cfg = {});

}  // namespace avp::graph
