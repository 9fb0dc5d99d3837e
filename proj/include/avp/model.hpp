// SPDX-License-Identifier: Apache-2.0
//
// Full parsing model: text-enhanced fusion -> hybrid attention -> temporal
// graph propagation -> segment classification -> MMIL pooling. The two
// enhancement stages can be switched off independently for ablations.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "avp/aggregation.hpp"
#include "avp/dataset.hpp"
#include "avp/labels.hpp"
#include "avp/mmil_head.hpp"
#include "avp/temporal_graph.hpp"
#include "avp/tensor.hpp"
#include "avp/text_semantics.hpp"

namespace avp::model {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t hidden = 0;  // fusion MLP width; 0 means dim
  std::size_t heads = 4;
  std::size_t gat_layers = 1;
  std::size_t k_audio = 4;
  std::size_t k_visual = 4;
  double dropout = 0.1;
  double threshold = 0.5;
  std::uint64_t text_seed = 17;

  std::size_t fusion_hidden() const { return hidden ? hidden : dim; }

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct AblationFlags {
  bool no_te = false;
  bool no_mtg = false;

  nlohmann::ordered_json to_json() const;
  static AblationFlags from_json(const nlohmann::json& j);
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<std::string> class_names;
  text::TextEmbedder embedder;
  text::FusionParams fuse_audio, fuse_visual;
  attn::HybridAttnParams agg;
  graph::StreamParams mtg_audio, mtg_visual;
  mmil::MmilParams head;

  ModelParams(const ModelConfig& config, const data::DatasetManifest& manifest,
              std::uint64_t seed);

  /// Learnable tensors in a fixed, checkpoint-stable order.
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  /// Non-learnable state (batch-norm running statistics).
  std::vector<std::pair<std::string, std::vector<double>*>> named_state();
  void round_state_to_f32();
};

struct Batch {
  Tensor audio, visual;  // b x T x d
  Tensor weak;           // b x C
  Tensor text_audio, text_visual;  // defined only when text enhancement is on
  std::vector<std::size_t> indices;
};

Batch make_batch(const data::Dataset& ds, const std::vector<std::size_t>& indices,
                 const ModelParams& params, bool with_text);

struct ForwardOut {
  mmil::SegmentProbs probs;
  mmil::VideoPreds preds;
};

ForwardOut forward(ModelParams& params, const Batch& batch, const AblationFlags& flags, Mode mode,
                   std::mt19937_64& eng);

/// Sum of the mean binary cross-entropies of P_a, P_v and P against the weak
/// video labels, probabilities clamped to [1e-7, 1 - 1e-7].
Tensor weak_bce_loss(const mmil::VideoPreds& preds, const Tensor& weak);

/// Eval-mode predictions for a whole dataset, thresholded at cfg.threshold.
std::vector<VideoLabels> predict_labels(ModelParams& params, const data::Dataset& ds,
                                        const AblationFlags& flags, std::size_t batch_size = 32);

/// Segment probabilities for a whole dataset (eval mode), per video.
std::vector<std::pair<Tensor, Tensor>> predict_probs(ModelParams& params, const data::Dataset& ds,
                                                     const AblationFlags& flags,
                                                     std::size_t batch_size = 32);

/// Ground-truth labels of a dataset in evaluate() form.
std::vector<VideoLabels> gt_labels(const data::Dataset& ds);

}  // namespace avp::model
