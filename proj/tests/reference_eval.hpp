// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference evaluator, written independently of the library
// implementation: state-machine run extraction and a quadratic matcher that
// re-ranks the remaining candidate pairs on every pick. Test code only.

#pragma once

#include <algorithm>
#include <vector>

#include "avp/labels.hpp"
#include "avp/metrics.hpp"

namespace refeval {

struct RefEvent {
  std::size_t cls;
  char mod;
  std::size_t lo, hi;
};

inline std::vector<RefEvent> ref_events(const avp::BinaryMatrix& m, char mod) {
  std::vector<RefEvent> out;
  for (std::size_t c = 0; c < m.cols; ++c) {
    bool inside = false;
    std::size_t start = 0;
    for (std::size_t t = 0; t < m.rows; ++t) {
      const bool on = m.at(t, c) != 0;
      if (on && !inside) {
        inside = true;
        start = t;
      }
      if (!on && inside) {
        inside = false;
        out.push_back({c, mod, start, t - 1});
      }
    }
    if (inside) out.push_back({c, mod, start, m.rows - 1});
  }
  return out;
}

inline double ref_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

inline double ref_segment_f1(const avp::BinaryMatrix& pred, const avp::BinaryMatrix& gt) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t t = 0; t < pred.rows; ++t) {
    for (std::size_t c = 0; c < pred.cols; ++c) {
      const bool p = pred.at(t, c), g = gt.at(t, c);
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  }
  return ref_f1(tp, fp, fn);
}

inline double ref_event_f1(std::vector<RefEvent> pred, std::vector<RefEvent> gt) {
  std::vector<char> pu(pred.size(), 0), gu(gt.size(), 0);
  std::size_t matches = 0;
  while (true) {
    long best_g = -1, best_p = -1;
    std::size_t bi = 0, bu = 1;  // best IoU so far as the exact fraction bi/bu
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gu[g]) continue;
      for (std::size_t p = 0; p < pred.size(); ++p) {
        if (pu[p]) continue;
        if (gt[g].cls != pred[p].cls || gt[g].mod != pred[p].mod) continue;
        const std::size_t lo = std::max(gt[g].lo, pred[p].lo);
        const std::size_t hi = std::min(gt[g].hi, pred[p].hi);
        const std::size_t inter = hi >= lo ? hi - lo + 1 : 0;
        const std::size_t uni =
            (gt[g].hi - gt[g].lo + 1) + (pred[p].hi - pred[p].lo + 1) - inter;
        if (2 * inter < uni) continue;
        bool better;
        if (best_g < 0) {
          better = true;
        } else if (inter * bu != bi * uni) {
          better = inter * bu > bi * uni;
        } else {
          const auto& bg = gt[static_cast<std::size_t>(best_g)];
          const auto& bp = pred[static_cast<std::size_t>(best_p)];
          if (gt[g].lo != bg.lo) {
            better = gt[g].lo < bg.lo;
          } else if (pred[p].lo != bp.lo) {
            better = pred[p].lo < bp.lo;
          } else if (gt[g].cls != bg.cls) {
            better = gt[g].cls < bg.cls;
          } else {
            better = gt[g].mod < bg.mod;
          }
        }
        if (better) {
          best_g = static_cast<long>(g);
          best_p = static_cast<long>(p);
          bi = inter;
          bu = uni;
        }
      }
    }
    if (best_g < 0) break;
    gu[static_cast<std::size_t>(best_g)] = 1;
    pu[static_cast<std::size_t>(best_p)] = 1;
    ++matches;
  }
  return ref_f1(matches, pred.size() - matches, gt.size() - matches);
}

inline avp::metrics::EvalReport ref_evaluate(const std::vector<avp::VideoLabels>& preds,
                                             const std::vector<avp::VideoLabels>& gts) {
  double seg[4] = {0, 0, 0, 0};
  double ev[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const avp::BinaryMatrix pav = avp::and_matrices(preds[i].audio, preds[i].visual);
    const avp::BinaryMatrix gav = avp::and_matrices(gts[i].audio, gts[i].visual);
    seg[0] += ref_segment_f1(preds[i].audio, gts[i].audio);
    seg[1] += ref_segment_f1(preds[i].visual, gts[i].visual);
    seg[2] += ref_segment_f1(pav, gav);
    {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t t = 0; t < pav.rows; ++t) {
        for (std::size_t c = 0; c < pav.cols; ++c) {
          const bool p1 = preds[i].audio.at(t, c), g1 = gts[i].audio.at(t, c);
          const bool p2 = preds[i].visual.at(t, c), g2 = gts[i].visual.at(t, c);
          tp += (p1 && g1) + (p2 && g2);
          fp += (p1 && !g1) + (p2 && !g2);
          fn += (!p1 && g1) + (!p2 && g2);
        }
      }
      seg[3] += ref_f1(tp, fp, fn);
    }
    ev[0] += ref_event_f1(ref_events(preds[i].audio, 'a'), ref_events(gts[i].audio, 'a'));
    ev[1] += ref_event_f1(ref_events(preds[i].visual, 'v'), ref_events(gts[i].visual, 'v'));
    ev[2] += ref_event_f1(ref_events(pav, 'b'), ref_events(gav, 'b'));
    auto pe = ref_events(preds[i].audio, 'a');
    auto pv = ref_events(preds[i].visual, 'v');
    pe.insert(pe.end(), pv.begin(), pv.end());
    auto ge = ref_events(gts[i].audio, 'a');
    auto gv = ref_events(gts[i].visual, 'v');
    ge.insert(ge.end(), gv.begin(), gv.end());
    ev[3] += ref_event_f1(pe, ge);
  }
  const double n = static_cast<double>(preds.size());
  avp::metrics::EvalReport r;
  r.segment.a = seg[0] / n;
  r.segment.v = seg[1] / n;
  r.segment.av = seg[2] / n;
  r.segment.event_av = seg[3] / n;
  r.segment.type_av = (r.segment.a + r.segment.v + r.segment.av) / 3.0;
  r.event.a = ev[0] / n;
  r.event.v = ev[1] / n;
  r.event.av = ev[2] / n;
  r.event.event_av = ev[3] / n;
  r.event.type_av = (r.event.a + r.event.v + r.event.av) / 3.0;
  return r;
}

}  // namespace refeval
