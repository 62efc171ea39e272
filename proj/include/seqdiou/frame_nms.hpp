#pragma once

// Single-frame greedy suppression (classic NMS and DIoU-NMS).

#include <algorithm>
#include <numeric>
#include <vector>

#include "seqdiou/detection.hpp"
#include "seqdiou/geometry.hpp"

namespace seqdiou {

/// Strict "ranks before" order used wherever detections compete on
/// confidence: higher confidence first, then lower (box, class_id).
inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.box != b.box) return a.box < b.box;
  return a.class_id < b.class_id;
}

struct NmsOptions {
  Overlap overlap{OverlapMetric::iou, 1.0};
  double threshold = 0.5;
  bool per_class = true;
};

/// Indices of the detections that survive greedy suppression, in input order.
inline std::vector<std::size_t> nms_keep(const std::vector<Detection>& dets,
                                         const NmsOptions& opt) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(dets[a], dets[b]);
  });

  std::vector<bool> removed(dets.size(), false);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (removed[j]) continue;
      if (opt.per_class && dets[j].class_id != dets[i].class_id) continue;
      if (opt.overlap(dets[i].box, dets[j].box) >= opt.threshold) removed[j] = true;
    }
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline Frame nms(const Frame& frame, const NmsOptions& opt) {
  Frame out{frame.frame_idx, {}};
  for (std::size_t i : nms_keep(frame.detections, opt)) out.detections.push_back(frame.detections[i]);
  return out;
}

inline VideoDetections nms(const VideoDetections& video, const NmsOptions& opt) {
  VideoDetections out{video.video_id, {}};
  out.frames.reserve(video.frames.size());
  for (const auto& f : video.frames) out.frames.push_back(nms(f, opt));
  return out;
}

}  // namespace seqdiou
