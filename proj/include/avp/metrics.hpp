// SPDX-License-Identifier: Apache-2.0
//
// Segment- and event-level F1 for audio, visual and audio-visual streams,
// with Type@AV (mean of the three) and Event@AV (all of a video's events
// pooled across modalities). Event matching is one-to-one at IoU >= 0.5,
// greedy by descending IoU with deterministic tie-breaks; IoU comparisons
// use exact integer arithmetic. Per-video scores are averaged over videos
// and a video with empty prediction and empty ground truth scores 1.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avp/labels.hpp"

namespace avp::metrics {

struct EventInstance {
  std::size_t cls = 0;
  char modality = 'a';
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
};

/// Maximal contiguous positive runs, per class, in (class, start) order.
std::vector<EventInstance> extract_events(const BinaryMatrix& m, char modality);

struct F1Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

F1Counts segment_counts(const BinaryMatrix& pred, const BinaryMatrix& gt);
double segment_f1(const BinaryMatrix& pred, const BinaryMatrix& gt);

F1Counts event_counts(const std::vector<EventInstance>& pred,
                      const std::vector<EventInstance>& gt);
double event_f1(const std::vector<EventInstance>& pred, const std::vector<EventInstance>& gt);

struct EvalLevel {
  double a = 0, v = 0, av = 0, type_av = 0, event_av = 0;
};

struct EvalReport {
  EvalLevel segment;
  EvalLevel event;
  nlohmann::ordered_json to_json() const;
};

/// Full protocol over matched prediction/ground-truth video lists. `jobs`
/// parallelizes the per-video scoring; the reduction order is fixed.
EvalReport evaluate(const std::vector<VideoLabels>& preds, const std::vector<VideoLabels>& gts,
                    std::size_t jobs = 1);

}  // namespace avp::metrics
