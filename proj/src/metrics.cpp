// SPDX-License-Identifier: Apache-2.0

#include "avp/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>

namespace avp::metrics {
namespace {

struct CandidatePair {
  std::size_t gt_idx, pred_idx;
  std::size_t inter, uni;  // IoU = inter / uni, kept exact
};

std::size_t span_len(std::size_t a0, std::size_t a1) { return a1 - a0 + 1; }

// Scores for a single video, Type@AV excluded (it is derived after averaging).
struct VideoScores {
  double seg_a, seg_v, seg_av, seg_event_av;
  double ev_a, ev_v, ev_av, ev_event_av;
};

VideoScores score_video(const VideoLabels& pred, const VideoLabels& gt) {
  const BinaryMatrix pred_av = and_matrices(pred.audio, pred.visual);
  const BinaryMatrix gt_av = and_matrices(gt.audio, gt.visual);

  VideoScores s{};
  s.seg_a = segment_f1(pred.audio, gt.audio);
  s.seg_v = segment_f1(pred.visual, gt.visual);
  s.seg_av = segment_f1(pred_av, gt_av);

  // Event@AV at segment level: cell counts pooled over both modalities.
  const F1Counts pooled_a = segment_counts(pred.audio, gt.audio);
  const F1Counts pooled_v = segment_counts(pred.visual, gt.visual);
  const F1Counts pooled{pooled_a.tp + pooled_v.tp, pooled_a.fp + pooled_v.fp,
                        pooled_a.fn + pooled_v.fn};
  s.seg_event_av = pooled.f1();

  const auto pe_a = extract_events(pred.audio, 'a');
  const auto ge_a = extract_events(gt.audio, 'a');
  const auto pe_v = extract_events(pred.visual, 'v');
  const auto ge_v = extract_events(gt.visual, 'v');
  s.ev_a = event_f1(pe_a, ge_a);
  s.ev_v = event_f1(pe_v, ge_v);
  s.ev_av = event_f1(extract_events(pred_av, 'b'), extract_events(gt_av, 'b'));

  // Event@AV at event level: both modality lists pooled, tags must match.
  std::vector<EventInstance> pe = pe_a, ge = ge_a;
  pe.insert(pe.end(), pe_v.begin(), pe_v.end());
  ge.insert(ge.end(), ge_v.begin(), ge_v.end());
  s.ev_event_av = event_f1(pe, ge);
  return s;
}

}  // namespace

std::vector<EventInstance> extract_events(const BinaryMatrix& m, char modality) {
  std::vector<EventInstance> events;
  for (std::size_t c = 0; c < m.cols; ++c) {
    std::size_t t = 0;
    while (t < m.rows) {
      if (!m.at(t, c)) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end + 1 < m.rows && m.at(end + 1, c)) ++end;
      events.push_back({c, modality, t, end});
      t = end + 1;
    }
  }
  return events;
}

F1Counts segment_counts(const BinaryMatrix& pred, const BinaryMatrix& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols) {
    throw std::invalid_argument("segment_counts: shape mismatch");
  }
  F1Counts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && gt.v[i]) {
      ++c.tp;
    } else if (pred.v[i]) {
      ++c.fp;
    } else if (gt.v[i]) {
      ++c.fn;
    }
  }
  return c;
}

double segment_f1(const BinaryMatrix& pred, const BinaryMatrix& gt) {
  return segment_counts(pred, gt).f1();
}

F1Counts event_counts(const std::vector<EventInstance>& pred,
                      const std::vector<EventInstance>& gt) {
  std::vector<CandidatePair> pairs;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (gt[g].cls != pred[p].cls || gt[g].modality != pred[p].modality) continue;
      const std::size_t lo = std::max(gt[g].start, pred[p].start);
      const std::size_t hi = std::min(gt[g].end, pred[p].end);
      const std::size_t inter = hi >= lo ? span_len(lo, hi) : 0;
      const std::size_t uni = span_len(gt[g].start, gt[g].end) +
                              span_len(pred[p].start, pred[p].end) - inter;
      if (2 * inter >= uni) pairs.push_back({g, p, inter, uni});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const CandidatePair& x, const CandidatePair& y) {
    // descending IoU (exact), then earlier gt start, then earlier pred start
    const std::size_t lhs = x.inter * y.uni, rhs = y.inter * x.uni;
    if (lhs != rhs) return lhs > rhs;
    if (gt[x.gt_idx].start != gt[y.gt_idx].start) return gt[x.gt_idx].start < gt[y.gt_idx].start;
    if (pred[x.pred_idx].start != pred[y.pred_idx].start) {
      return pred[x.pred_idx].start < pred[y.pred_idx].start;
    }
    if (gt[x.gt_idx].cls != gt[y.gt_idx].cls) return gt[x.gt_idx].cls < gt[y.gt_idx].cls;
    return gt[x.gt_idx].modality < gt[y.gt_idx].modality;
  });

  std::vector<char> gt_used(gt.size(), 0), pred_used(pred.size(), 0);
  std::size_t matches = 0;
  for (const CandidatePair& p : pairs) {
    if (gt_used[p.gt_idx] || pred_used[p.pred_idx]) continue;
    gt_used[p.gt_idx] = pred_used[p.pred_idx] = 1;
    ++matches;
  }
  return {matches, pred.size() - matches, gt.size() - matches};
}

double event_f1(const std::vector<EventInstance>& pred, const std::vector<EventInstance>& gt) {
  return event_counts(pred, gt).f1();
}

nlohmann::ordered_json EvalReport::to_json() const {
  auto level = [](const EvalLevel& l) {
    nlohmann::ordered_json j;
    j["A"] = l.a;
    j["V"] = l.v;
    j["AV"] = l.av;
    j["Type@AV"] = l.type_av;
    j["Event@AV"] = l.event_av;
    return j;
  };
  nlohmann::ordered_json j;
  j["segment"] = level(segment);
  j["event"] = level(event);
  return j;
}

EvalReport evaluate(const std::vector<VideoLabels>& preds, const std::vector<VideoLabels>& gts,
                    std::size_t jobs) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("evaluate: prediction/ground-truth video counts disagree (" +
                                std::to_string(preds.size()) + " vs " +
                                std::to_string(gts.size()) + ")");
  }
  if (preds.empty()) throw std::invalid_argument("evaluate: no videos");

  std::vector<VideoScores> scores(preds.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < preds.size(); ++i) scores[i] = score_video(preds[i], gts[i]);
  } else {
    const std::size_t workers = std::min<std::size_t>(jobs, preds.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < preds.size(); i += workers) {
          scores[i] = score_video(preds[i], gts[i]);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  // Fixed-order reduction keeps the result independent of `jobs`.
  VideoScores acc{};
  for (const VideoScores& s : scores) {
    acc.seg_a += s.seg_a;
    acc.seg_v += s.seg_v;
    acc.seg_av += s.seg_av;
    acc.seg_event_av += s.seg_event_av;
    acc.ev_a += s.ev_a;
    acc.ev_v += s.ev_v;
    acc.ev_av += s.ev_av;
    acc.ev_event_av += s.ev_event_av;
  }
  const double n = static_cast<double>(preds.size());
  EvalReport report;
  report.segment.a = acc.seg_a / n;
  report.segment.v = acc.seg_v / n;
  report.segment.av = acc.seg_av / n;
  report.segment.event_av = acc.seg_event_av / n;
  report.segment.type_av = (report.segment.a + report.segment.v + report.segment.av) / 3.0;
  report.event.a = acc.ev_a / n;
  report.event.v = acc.ev_v / n;
  report.event.av = acc.ev_av / n;
  report.event.event_av = acc.ev_event_av / n;
  report.event.type_av = (report.event.a + report.event.v + report.event.av) / 3.0;
  return report;
}

}  // namespace avp::metrics
