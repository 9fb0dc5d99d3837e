// SPDX-License-Identifier: Apache-2.0
//
// Synthetic weakly-labeled dataset. Every video carries 1-3 events; an event
// has a class, a modality pattern (audio-only, visual-only, or both with
// independently drawn intervals) and a contiguous segment span. Features are
// sums of per-class prototype vectors plus Gaussian noise, and segment-level
// pseudo labels are the ground truth with independent bit flips.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "avp/labels.hpp"
#include "avp/tensor.hpp"

namespace avp::data {

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::size_t segments = 10;
  std::size_t dim = 64;
  std::size_t videos = 500;
  double feature_noise = 0.1;
  double flip_rate = 0.1;
  std::uint64_t seed = 1;

  std::size_t num_classes() const { return class_names.size(); }
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

/// Placeholder class names Class0..ClassN-1 unless the caller supplies a list.
std::vector<std::string> default_class_names(std::size_t count);

struct VideoSample {
  Tensor audio;            // T x d, values on the f32 grid
  Tensor visual;
  BinaryMatrix gt_audio;   // T x C
  BinaryMatrix gt_visual;
  BinaryMatrix pseudo_audio;
  BinaryMatrix pseudo_visual;
  std::vector<std::uint8_t> weak;  // C; OR over segments and modalities
};

/// Orthonormal per-class feature prototypes (audio, visual), f32-gridded.
std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> feature_prototypes(
    const DatasetManifest& m);

std::vector<VideoSample> generate_dataset(const DatasetManifest& m);

void save_dataset(const DatasetManifest& m, const std::vector<VideoSample>& samples,
                  const std::string& prefix);

struct Dataset {
  DatasetManifest manifest;
  std::vector<VideoSample> samples;
};

Dataset load_dataset(const std::string& prefix);

}  // namespace avp::data
