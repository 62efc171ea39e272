#pragma once

// Per-class average precision (all-point interpolation), mAP, and an
// oracle-ranked AP that orders detections by their overlap with the
// ground truth they matched instead of by confidence.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqdiou/detection.hpp"
#include "seqdiou/frame_nms.hpp"
#include "seqdiou/geometry.hpp"

namespace seqdiou {

enum class MatchLabel { true_positive, false_positive, ignored };

struct Match {
  MatchLabel label = MatchLabel::false_positive;
  std::size_t gt_index = static_cast<std::size_t>(-1);
  double iou = 0.0;  // overlap with the claimed ground truth, 0 when none
};

/// Greedy one-to-one matching in confidence order. Each detection claims the
/// highest-IoU unclaimed same-class ground truth with IoU >= threshold.
/// Detections that only reach an `ignore` ground truth are labelled ignored.
/// Results are in input order.
inline std::vector<Match> match_frame(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruthObject>& gts,
                                      double iou_threshold = 0.5) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });

  std::vector<Match> out(dets.size());
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t i : order) {
    std::size_t best = static_cast<std::size_t>(-1);
    double best_iou = iou_threshold;
    bool hits_ignored = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != dets[i].class_id) continue;
      const double o = iou(dets[i].box, gts[g].box);
      if (o < iou_threshold) continue;
      if (gts[g].ignore) {
        hits_ignored = true;
        continue;
      }
      if (claimed[g]) continue;
      if (best == static_cast<std::size_t>(-1) || o > best_iou) {
        best = g;
        best_iou = o;
      }
    }
    if (best != static_cast<std::size_t>(-1)) {
      claimed[best] = true;
      out[i] = {MatchLabel::true_positive, best, best_iou};
    } else if (hits_ignored) {
      out[i].label = MatchLabel::ignored;
    }
  }
  return out;
}

inline std::vector<Match> match_frame(const Frame& dets, const GroundTruthFrame& gts,
                                      double iou_threshold = 0.5) {
  return match_frame(dets.detections, gts.objects, iou_threshold);
}

/// One detection on a class ranking. Higher `score` ranks first, then
/// higher `tiebreak`, then earlier insertion.
struct RankedDetection {
  double score = 0.0;
  bool true_positive = false;
  double tiebreak = 0.0;
};

inline std::vector<RankedDetection> rank(std::vector<RankedDetection> dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tiebreak > b.tiebreak;
  });
  return dets;
}

/// Area under the monotone precision envelope over recall.
/// 0 when there is no ground truth.
inline double average_precision(const std::vector<RankedDetection>& dets, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const auto ranked = rank(dets);
  const std::size_t n = ranked.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (ranked[k].true_positive) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (recall[k] != prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

struct ClassAp {
  int class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_dets = 0;
  std::size_t true_positives = 0;
  double ap = 0.0;
};

/// Mean over classes with at least one ground truth.
inline double mean_ap(const std::vector<ClassAp>& classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (c.num_gt == 0) continue;
    sum += c.ap;
    ++n;
  }
  if (n == 0) throw std::domain_error("mean_ap: no class has ground truth");
  return sum / static_cast<double>(n);
}

struct EvalOptions {
  double iou_threshold = 0.5;
  bool oracle_sorted = false;
};

struct EvalReport {
  std::vector<ClassAp> classes;  // ascending class_id
  double map = 0.0;
};

namespace detail {

struct ClassPool {
  std::size_t num_gt = 0;
  std::vector<RankedDetection> dets;
};

inline std::map<int, ClassPool> collect(const std::vector<VideoDetections>& dets,
                                        const std::vector<VideoGroundTruth>& gts,
                                        const EvalOptions& opt) {
  std::map<std::string, std::map<std::int64_t, const GroundTruthFrame*>> gt_index;
  std::map<int, ClassPool> pools;
  for (const auto& v : gts) {
    for (const auto& f : v.frames) {
      gt_index[v.video_id][f.frame_idx] = &f;
      for (const auto& g : f.objects) {
        auto& pool = pools[g.class_id];
        if (!g.ignore) ++pool.num_gt;
      }
    }
  }
  static const GroundTruthFrame empty{};
  for (const auto& v : dets) {
    auto vit = gt_index.find(v.video_id);
    for (const auto& f : v.frames) {
      const GroundTruthFrame* gf = &empty;
      if (vit != gt_index.end()) {
        if (auto fit = vit->second.find(f.frame_idx); fit != vit->second.end()) gf = fit->second;
      }
      const auto matches = match_frame(f.detections, gf->objects, opt.iou_threshold);
      for (std::size_t i = 0; i < matches.size(); ++i) {
        if (matches[i].label == MatchLabel::ignored) continue;
        const auto& d = f.detections[i];
        const bool tp = matches[i].label == MatchLabel::true_positive;
        RankedDetection r{d.confidence, tp, 0.0};
        if (opt.oracle_sorted) r = {tp ? matches[i].iou : -1.0, tp, d.confidence};
        pools[d.class_id].dets.push_back(r);
      }
    }
  }
  return pools;
}

}  // namespace detail

/// Per-class AP and mAP of detections against ground truth, paired by
/// (video_id, frame_idx). With `oracle_sorted`, detections are ranked by
/// the IoU with the ground truth they matched (false positives last),
/// confidence breaking ties.
inline EvalReport evaluate(const std::vector<VideoDetections>& dets,
                           const std::vector<VideoGroundTruth>& gts, const EvalOptions& opt = {}) {
  EvalReport rep;
  for (auto& [cls, pool] : detail::collect(dets, gts, opt)) {
    ClassAp c;
    c.class_id = cls;
    c.num_gt = pool.num_gt;
    c.num_dets = pool.dets.size();
    for (const auto& d : pool.dets) c.true_positives += d.true_positive ? 1 : 0;
    c.ap = average_precision(pool.dets, pool.num_gt);
    rep.classes.push_back(c);
  }
  rep.map = mean_ap(rep.classes);
  return rep;
}

/// mAP with the oracle overlap ranking.
inline double oracle_sorted_ap(const std::vector<VideoDetections>& dets,
                               const std::vector<VideoGroundTruth>& gts, double iou_threshold = 0.5) {
  return evaluate(dets, gts, {iou_threshold, true}).map;
}

}  // namespace seqdiou
