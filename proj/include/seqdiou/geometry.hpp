#pragma once

// Axis-aligned box arithmetic: IoU, center distance, enclosing diagonal, DIoU.

#include <algorithm>
#include <cmath>
#include <compare>
#include <stdexcept>
#include <string>

namespace seqdiou {

/// Corner-format box in continuous pixel coordinates. Valid when
/// x1 <= x2, y1 <= y2 and every coordinate is finite. Zero-area boxes are valid.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  friend bool operator==(const Box&, const Box&) = default;
  friend auto operator<=>(const Box&, const Box&) = default;
};

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline bool is_valid(const Box& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x1 <= b.x2 && b.y1 <= b.y2;
}

inline double width(const Box& b) { return b.x2 - b.x1; }
inline double height(const Box& b) { return b.y2 - b.y1; }
inline double area(const Box& b) { return width(b) * height(b); }

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline double center_distance_sq(const Box& a, const Box& b) {
  const double dx = (a.x1 + a.x2) - (b.x1 + b.x2);
  const double dy = (a.y1 + a.y2) - (b.y1 + b.y2);
  return (dx * dx + dy * dy) / 4.0;
}

/// Squared diagonal of the smallest box enclosing both inputs.
/// Throws GeometryError when the enclosure collapses to a point.
inline double enclosing_diagonal_sq(const Box& a, const Box& b) {
  const double w = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double h = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double c2 = w * w + h * h;
  if (!(c2 > 0.0)) {
    throw GeometryError("enclosing box of two coincident points has zero diagonal");
  }
  return c2;
}

/// IoU minus the squared center distance normalised by the squared enclosing
/// diagonal. `center_weight` scales the distance term; 0 reduces DIoU to IoU
/// exactly (used to cross-check DIoU-based pipelines against IoU-based ones).
inline double diou(const Box& a, const Box& b, double center_weight = 1.0) {
  const double overlap = iou(a, b);
  if (center_weight == 0.0) return overlap;
  return overlap - center_weight * center_distance_sq(a, b) / enclosing_diagonal_sq(a, b);
}

enum class OverlapMetric { iou, diou };

/// Metric selection plus the DIoU distance weight (1 for plain DIoU).
struct Overlap {
  OverlapMetric metric = OverlapMetric::diou;
  double center_weight = 1.0;

  double operator()(const Box& a, const Box& b) const {
    return metric == OverlapMetric::iou ? iou(a, b) : diou(a, b, center_weight);
  }
};

inline std::string to_string(OverlapMetric m) {
  return m == OverlapMetric::iou ? "iou" : "diou";
}

}  // namespace seqdiou
