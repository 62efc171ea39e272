#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "seqdiou/frame_nms.hpp"
#include "seqdiou/random.hpp"

using namespace seqdiou;

namespace {

// Reference: repeatedly take the best remaining detection by the same
// strict order and discard what it overlaps.
std::vector<std::size_t> naive_nms(const std::vector<Detection>& dets, const NmsOptions& opt) {
  std::vector<std::size_t> left(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) left[i] = i;
  std::vector<std::size_t> keep;
  while (!left.empty()) {
    auto it = std::min_element(left.begin(), left.end(), [&](std::size_t a, std::size_t b) {
      if (ranks_before(dets[a], dets[b])) return true;
      if (ranks_before(dets[b], dets[a])) return false;
      return a < b;
    });
    const std::size_t top = *it;
    keep.push_back(top);
    std::vector<std::size_t> rest;
    for (std::size_t j : left) {
      if (j == top) continue;
      const bool same = !opt.per_class || dets[j].class_id == dets[top].class_id;
      if (same && opt.overlap(dets[top].box, dets[j].box) >= opt.threshold) continue;
      rest.push_back(j);
    }
    left = rest;
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

std::vector<Detection> random_frame(Rng& rng, std::size_t n) {
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
    Detection d;
    d.box = {x, y, x + rng.uniform(5, 40), y + rng.uniform(5, 40)};
    d.class_id = static_cast<int>(rng.below(2));
    // Coarse grid so ties actually happen.
    d.confidence = static_cast<double>(1 + rng.below(8)) / 8.0;
    dets.push_back(d);
  }
  return dets;
}

}  // namespace

TEST(FrameNms, Empty) { EXPECT_TRUE(nms_keep({}, {}).empty()); }

TEST(FrameNms, SuppressesLowerOverlapping) {
  const std::vector<Detection> dets = {
      {{0, 0, 10, 10}, 0, 0.6, {}},
      {{1, 0, 11, 10}, 0, 0.9, {}},
      {{50, 50, 60, 60}, 0, 0.3, {}},
  };
  EXPECT_EQ(nms_keep(dets, {}), (std::vector<std::size_t>{1, 2}));
}

TEST(FrameNms, PerClassAndAgnostic) {
  const std::vector<Detection> dets = {
      {{0, 0, 10, 10}, 0, 0.9, {}},
      {{0, 0, 10, 10}, 1, 0.8, {}},
  };
  EXPECT_EQ(nms_keep(dets, {}).size(), 2u);
  NmsOptions agnostic;
  agnostic.per_class = false;
  EXPECT_EQ(nms_keep(dets, agnostic), (std::vector<std::size_t>{0}));
}

TEST(FrameNms, ThresholdIsInclusive) {
  // IoU of these two is exactly 0.5.
  const std::vector<Detection> dets = {
      {{0, 0, 3, 1}, 0, 0.9, {}},
      {{1, 0, 4, 1}, 0, 0.8, {}},
  };
  ASSERT_EQ(iou(dets[0].box, dets[1].box), 0.5);
  EXPECT_EQ(nms_keep(dets, {}), (std::vector<std::size_t>{0}));
}

TEST(FrameNms, IdenticalDuplicate) {
  const std::vector<Detection> dets = {
      {{0, 0, 10, 10}, 0, 0.8, {}},
      {{0, 0, 10, 10}, 0, 0.9, {}},
  };
  EXPECT_EQ(nms_keep(dets, {}), (std::vector<std::size_t>{1}));
}

TEST(FrameNms, ChainKeepsEnds) {
  // A overlaps B, B overlaps C, A and C stay below the threshold.
  const std::vector<Detection> dets = {
      {{0, 0, 10, 10}, 0, 0.9, {}},
      {{3, 0, 13, 10}, 0, 0.8, {}},
      {{6, 0, 16, 10}, 0, 0.7, {}},
  };
  ASSERT_GE(iou(dets[0].box, dets[1].box), 0.5);
  ASSERT_GE(iou(dets[1].box, dets[2].box), 0.5);
  ASSERT_LT(iou(dets[0].box, dets[2].box), 0.5);
  EXPECT_EQ(nms_keep(dets, {}), (std::vector<std::size_t>{0, 2}));
}

TEST(FrameNms, TieBreakPrefersLowerBox) {
  const std::vector<Detection> dets = {
      {{1, 0, 11, 10}, 0, 0.5, {}},
      {{0, 0, 10, 10}, 0, 0.5, {}},
  };
  EXPECT_EQ(nms_keep(dets, {}), (std::vector<std::size_t>{1}));
}

TEST(FrameNms, DiouKeepsDistantCenters) {
  // Nested boxes with shifted centres: IoU suppresses, DIoU does not.
  const std::vector<Detection> dets = {
      {{0, 0, 20, 10}, 0, 0.9, {}},
      {{8, 0, 20, 10}, 0, 0.8, {}},
  };
  NmsOptions opt;
  opt.threshold = 0.58;
  EXPECT_EQ(nms_keep(dets, opt).size(), 1u);
  opt.overlap = {OverlapMetric::diou, 1.0};
  EXPECT_EQ(nms_keep(dets, opt).size(), 2u);
}

TEST(FrameNmsProperty, MatchesNaiveReference) {
  Rng rng(5);
  for (int k = 0; k < 500; ++k) {
    const auto dets = random_frame(rng, 1 + rng.below(12));
    for (auto metric : {OverlapMetric::iou, OverlapMetric::diou}) {
      for (bool per_class : {true, false}) {
        NmsOptions opt{{metric, 1.0}, rng.uniform(0.2, 0.8), per_class};
        EXPECT_EQ(nms_keep(dets, opt), naive_nms(dets, opt));
      }
    }
  }
}

TEST(FrameNmsProperty, KeptSetIsPairwiseSeparatedAndIdempotent) {
  Rng rng(9);
  for (int k = 0; k < 300; ++k) {
    const auto dets = random_frame(rng, 1 + rng.below(15));
    const NmsOptions opt;
    const auto keep = nms_keep(dets, opt);
    for (std::size_t a = 0; a < keep.size(); ++a) {
      for (std::size_t b = a + 1; b < keep.size(); ++b) {
        const auto& da = dets[keep[a]];
        const auto& db = dets[keep[b]];
        if (da.class_id == db.class_id) EXPECT_LT(iou(da.box, db.box), opt.threshold);
      }
    }
    std::vector<Detection> kept;
    for (auto i : keep) kept.push_back(dets[i]);
    EXPECT_EQ(nms_keep(kept, opt).size(), kept.size());
  }
}

TEST(FrameNms, VideoOverloadKeepsFrameIndices) {
  VideoDetections v{"v", {{3, {{{0, 0, 10, 10}, 0, 0.9, {}}, {{0, 0, 10, 10}, 0, 0.1, {}}}}, {7, {}}}};
  const auto out = nms(v, {});
  ASSERT_EQ(out.frames.size(), 2u);
  EXPECT_EQ(out.frames[0].frame_idx, 3);
  EXPECT_EQ(out.frames[0].detections.size(), 1u);
  EXPECT_EQ(out.frames[1].frame_idx, 7);
}
