#pragma once

// Sequence post-processing: cross-frame links, maximum-score path
// extraction, average rescoring and in-path suppression.
//
// Frames are linked by position in VideoDetections::frames (entry t with
// entry t+1); frame_idx values are only carried through.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "seqdiou/detection.hpp"
#include "seqdiou/geometry.hpp"

namespace seqdiou {

/// Same-class links between consecutive frames whose overlap meets the
/// linking threshold. `links[t]` holds pairs (i, j) with i in frame t and
/// j in frame t+1.
struct LinkGraph {
  std::vector<std::vector<Box>> boxes;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> links;

  std::size_t num_frames() const { return boxes.size(); }
  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& l : links) n += l.size();
    return n;
  }
};

/// Per-frame, per-detection values (confidences or active flags).
template <typename T>
using FrameTable = std::vector<std::vector<T>>;

/// A contiguous linked path. `first_frame` is a position in the frames list.
struct Tubelet {
  int class_id = 0;
  std::size_t first_frame = 0;
  std::vector<std::size_t> members;      // detection index per frame
  std::vector<double> confidences;       // original member confidences
  double score = 0.0;                    // sum of original confidences
  double rescored = 0.0;                 // mean of original confidences

  std::size_t last_frame() const { return first_frame + members.size() - 1; }
  std::size_t length() const { return members.size(); }
};

inline LinkGraph build_links(const VideoDetections& video, const Overlap& overlap,
                             double threshold) {
  LinkGraph g;
  const std::size_t T = video.frames.size();
  g.boxes.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (const auto& d : video.frames[t].detections) g.boxes[t].push_back(d.box);
  }
  g.links.resize(T > 0 ? T - 1 : 0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const auto& cur = video.frames[t].detections;
    const auto& nxt = video.frames[t + 1].detections;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      for (std::size_t j = 0; j < nxt.size(); ++j) {
        if (cur[i].class_id != nxt[j].class_id) continue;
        if (overlap(cur[i].box, nxt[j].box) >= threshold) g.links[t].emplace_back(i, j);
      }
    }
  }
  return g;
}

inline FrameTable<double> confidence_table(const VideoDetections& video) {
  FrameTable<double> c(video.frames.size());
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    for (const auto& d : video.frames[t].detections) c[t].push_back(d.confidence);
  }
  return c;
}

namespace detail {

// Deterministic order between two nodes of one frame: lower box, then index.
inline bool node_before(const LinkGraph& g, std::size_t t, std::size_t a, std::size_t b) {
  const Box& ba = g.boxes[t][a];
  const Box& bb = g.boxes[t][b];
  if (ba != bb) return ba < bb;
  return a < b;
}

inline bool is_active(const FrameTable<char>* active, std::size_t t, std::size_t i) {
  return active == nullptr || (*active)[t][i] != 0;
}

}  // namespace detail

/// Highest-scoring contiguous linked path, maximising the sum of member
/// confidences over every start and end frame. Forward dynamic programming:
///   best[t][i] = c[t][i] + max(0, max over linked active predecessors best[t-1][j]).
/// Only nodes flagged in `active` (all, when null) take part. Ties prefer the
/// earlier end frame, then the lower (box, index) node at each step.
inline std::optional<Tubelet> find_max_path(const LinkGraph& g, const FrameTable<double>& conf,
                                            const FrameTable<char>* active = nullptr) {
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  const std::size_t T = g.num_frames();
  FrameTable<double> best(T);
  FrameTable<std::size_t> prev(T);
  std::optional<std::pair<std::size_t, std::size_t>> arg;

  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t n = g.boxes[t].size();
    best[t].assign(n, 0.0);
    prev[t].assign(n, none);
    if (t > 0) {
      for (auto [j, i] : g.links[t - 1]) {
        if (!detail::is_active(active, t - 1, j) || !detail::is_active(active, t, i)) continue;
        const double b = best[t - 1][j];
        if (!(b > 0.0)) continue;
        const std::size_t p = prev[t][i];
        if (p == none || b > best[t - 1][p] ||
            (b == best[t - 1][p] && detail::node_before(g, t - 1, j, p))) {
          prev[t][i] = j;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!detail::is_active(active, t, i)) continue;
      const std::size_t p = prev[t][i];
      best[t][i] = p == none ? conf[t][i] : conf[t][i] + best[t - 1][p];
      if (!arg || best[t][i] > best[arg->first][arg->second] ||
          (best[t][i] == best[arg->first][arg->second] && t == arg->first &&
           detail::node_before(g, t, i, arg->second))) {
        arg.emplace(t, i);
      }
    }
  }
  if (!arg) return std::nullopt;

  Tubelet tub;
  tub.score = best[arg->first][arg->second];
  std::vector<std::size_t> rev;
  std::size_t t = arg->first;
  std::size_t i = arg->second;
  while (true) {
    rev.push_back(i);
    if (prev[t][i] == none) break;
    i = prev[t][i];
    --t;
  }
  tub.first_frame = t;
  tub.members.assign(rev.rbegin(), rev.rend());
  for (std::size_t k = 0; k < tub.members.size(); ++k) {
    tub.confidences.push_back(conf[tub.first_frame + k][tub.members[k]]);
  }
  tub.rescored = tub.score / static_cast<double>(tub.members.size());
  return tub;
}

class PathEnumerationLimit : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Exhaustive search over all contiguous linked paths; test oracle for
/// find_max_path. Throws PathEnumerationLimit past `max_paths` paths.
inline std::optional<Tubelet> brute_force_max_path(const LinkGraph& g,
                                                   const FrameTable<double>& conf,
                                                   const FrameTable<char>* active = nullptr,
                                                   std::size_t max_paths = 1'000'000) {
  const std::size_t T = g.num_frames();
  std::vector<std::vector<std::vector<std::size_t>>> succ(T);
  for (std::size_t t = 0; t < T; ++t) succ[t].resize(g.boxes[t].size());
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (auto [i, j] : g.links[t]) succ[t][i].push_back(j);
  }

  std::optional<Tubelet> best;
  std::size_t visited = 0;
  std::vector<std::size_t> path;
  // Paths are summed left to right from the start frame.
  auto visit = [&](auto&& self, std::size_t t0, std::size_t t, std::size_t i,
                   double sum) -> void {
    if (++visited > max_paths) throw PathEnumerationLimit("path enumeration bound exceeded");
    path.push_back(i);
    if (!best || sum > best->score) {
      Tubelet tub;
      tub.first_frame = t0;
      tub.members = path;
      tub.score = sum;
      for (std::size_t k = 0; k < path.size(); ++k) tub.confidences.push_back(conf[t0 + k][path[k]]);
      tub.rescored = sum / static_cast<double>(path.size());
      best = std::move(tub);
    }
    if (t + 1 < T) {
      for (std::size_t j : succ[t][i]) {
        if (detail::is_active(active, t + 1, j)) self(self, t0, t + 1, j, sum + conf[t + 1][j]);
      }
    }
    path.pop_back();
  };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < g.boxes[t].size(); ++i) {
      if (detail::is_active(active, t, i)) visit(visit, t, t, i, conf[t][i]);
    }
  }
  return best;
}

/// Replaces every member confidence by the mean of the originals.
inline Tubelet rescore_path(Tubelet tub) {
  if (tub.confidences.empty()) throw std::invalid_argument("rescore_path: empty path");
  double sum = 0.0;
  for (double c : tub.confidences) sum += c;
  tub.score = sum;
  tub.rescored = sum / static_cast<double>(tub.confidences.size());
  return tub;
}

namespace detail {

// Deactivates same-class non-member detections whose overlap with the
// path's box in their frame meets the threshold.
inline void suppress_in_place(const VideoDetections& video, const Tubelet& tub,
                              const Overlap& overlap, double threshold,
                              FrameTable<char>& active) {
  for (std::size_t k = 0; k < tub.members.size(); ++k) {
    const std::size_t t = tub.first_frame + k;
    const auto& dets = video.frames[t].detections;
    const Detection& keep = dets[tub.members[k]];
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (j == tub.members[k] || !active[t][j]) continue;
      if (dets[j].class_id != keep.class_id) continue;
      if (overlap(keep.box, dets[j].box) >= threshold) active[t][j] = 0;
    }
  }
}

inline FrameTable<char> all_active(const VideoDetections& video) {
  FrameTable<char> a(video.frames.size());
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    a[t].assign(video.frames[t].detections.size(), 1);
  }
  return a;
}

}  // namespace detail

/// Removes, within the path's frames, every same-class detection other
/// than the path member whose overlap with the member is >= threshold.
inline VideoDetections suppress_with_path(const VideoDetections& video, const Tubelet& tub,
                                          const Overlap& overlap, double threshold) {
  if (tub.first_frame + tub.members.size() > video.frames.size()) {
    throw std::out_of_range("suppress_with_path: tubelet exceeds video");
  }
  auto active = detail::all_active(video);
  detail::suppress_in_place(video, tub, overlap, threshold, active);
  VideoDetections out{video.video_id, {}};
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    Frame f{video.frames[t].frame_idx, {}};
    for (std::size_t j = 0; j < video.frames[t].detections.size(); ++j) {
      if (active[t][j]) f.detections.push_back(video.frames[t].detections[j]);
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

struct SeqNmsOptions {
  Overlap overlap{OverlapMetric::diou, 1.0};
  double link_threshold = 0.6;
  double suppress_threshold = 0.5;
};

struct SeqNmsResult {
  VideoDetections video;          // surviving detections, rescored, input order
  std::vector<Tubelet> tubelets;  // by class, then extraction order
};

/// Per class: link, then repeatedly take the maximum path, rescore it with
/// its mean confidence, suppress overlapping same-frame boxes and retire the
/// path, until no detection of the class is left.
inline SeqNmsResult sequence_nms(const VideoDetections& video, const SeqNmsOptions& opt) {
  const LinkGraph graph = build_links(video, opt.overlap, opt.link_threshold);
  const FrameTable<double> conf = confidence_table(video);

  std::set<int> classes;
  for (const auto& f : video.frames) {
    for (const auto& d : f.detections) classes.insert(d.class_id);
  }

  FrameTable<double> rescored(video.frames.size());
  FrameTable<char> kept(video.frames.size());
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    rescored[t].assign(video.frames[t].detections.size(), 0.0);
    kept[t].assign(video.frames[t].detections.size(), 0);
  }

  SeqNmsResult result;
  for (int cls : classes) {
    FrameTable<char> active(video.frames.size());
    for (std::size_t t = 0; t < video.frames.size(); ++t) {
      for (const auto& d : video.frames[t].detections) active[t].push_back(d.class_id == cls);
    }
    while (auto path = find_max_path(graph, conf, &active)) {
      Tubelet tub = rescore_path(std::move(*path));
      tub.class_id = cls;
      detail::suppress_in_place(video, tub, opt.overlap, opt.suppress_threshold, active);
      for (std::size_t k = 0; k < tub.members.size(); ++k) {
        const std::size_t t = tub.first_frame + k;
        active[t][tub.members[k]] = 0;
        kept[t][tub.members[k]] = 1;
        rescored[t][tub.members[k]] = tub.rescored;
      }
      result.tubelets.push_back(std::move(tub));
    }
  }

  result.video.video_id = video.video_id;
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    Frame f{video.frames[t].frame_idx, {}};
    for (std::size_t j = 0; j < video.frames[t].detections.size(); ++j) {
      if (!kept[t][j]) continue;
      Detection d = video.frames[t].detections[j];
      d.confidence = rescored[t][j];
      f.detections.push_back(d);
    }
    result.video.frames.push_back(std::move(f));
  }
  return result;
}

/// Sequence DIoU NMS: DIoU for both linking and suppression.
/// `center_weight` = 0 collapses DIoU to IoU (cross-check hook).
inline SeqNmsResult seq_diou_nms(const VideoDetections& video, double tau1 = 0.6,
                                 double tau2 = 0.5, double center_weight = 1.0) {
  return sequence_nms(video, {{OverlapMetric::diou, center_weight}, tau1, tau2});
}

/// Seq-NMS baseline: IoU for both linking and suppression.
inline SeqNmsResult seq_nms(const VideoDetections& video, double tau1 = 0.6, double tau2 = 0.5) {
  return sequence_nms(video, {{OverlapMetric::iou, 1.0}, tau1, tau2});
}

}  // namespace seqdiou
