#include <gtest/gtest.h>

#include <vector>

#include "seqdiou/frame_nms.hpp"
#include "seqdiou/random.hpp"
#include "seqdiou/synth.hpp"
#include "seqdiou/tubelet.hpp"

using namespace seqdiou;

namespace {

Detection det(Box b, double c, int cls = 0) { return {b, cls, c, {}}; }

// Random layered graph with distinct boxes per frame.
LinkGraph random_graph(Rng& rng, std::size_t frames, std::size_t max_boxes, double density) {
  LinkGraph g;
  g.boxes.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t n = rng.below(max_boxes + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 100);
      g.boxes[t].push_back({x, 0, x + 10, 10});
    }
  }
  g.links.resize(frames > 0 ? frames - 1 : 0);
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (std::size_t i = 0; i < g.boxes[t].size(); ++i) {
      for (std::size_t j = 0; j < g.boxes[t + 1].size(); ++j) {
        if (rng.bernoulli(density)) g.links[t].emplace_back(i, j);
      }
    }
  }
  return g;
}

FrameTable<double> random_conf(Rng& rng, const LinkGraph& g) {
  FrameTable<double> c(g.num_frames());
  for (std::size_t t = 0; t < g.num_frames(); ++t) {
    for (std::size_t i = 0; i < g.boxes[t].size(); ++i) c[t].push_back(rng.uniform());
  }
  return c;
}

}  // namespace

TEST(Links, SameClassConsecutiveAboveThreshold) {
  VideoDetections v{"v",
                    {{0, {det({0, 0, 10, 10}, 0.9), det({0, 0, 10, 10}, 0.9, 1), det({50, 50, 60, 60}, 0.5)}},
                     {1, {det({1, 0, 11, 10}, 0.8), det({80, 80, 90, 90}, 0.4)}},
                     {2, {det({1, 0, 11, 10}, 0.7)}}}};
  const auto g = build_links(v, {OverlapMetric::iou, 1.0}, 0.6);
  ASSERT_EQ(g.links.size(), 2u);
  EXPECT_EQ(g.links[0], (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}}));
  EXPECT_EQ(g.links[1], (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}}));
  for (std::size_t t = 0; t < g.links.size(); ++t) {
    for (auto [i, j] : g.links[t]) {
      EXPECT_GE(iou(g.boxes[t][i], g.boxes[t + 1][j]), 0.6);
    }
  }
}

TEST(Links, EmptyAndSingleFrame) {
  EXPECT_EQ(build_links({"v", {}}, {}, 0.6).num_edges(), 0u);
  VideoDetections one{"v", {{0, {det({0, 0, 1, 1}, 0.5)}}}};
  const auto g = build_links(one, {}, 0.6);
  EXPECT_EQ(g.num_frames(), 1u);
  EXPECT_TRUE(g.links.empty());
}

TEST(MaxPath, Diamond) {
  // A -> {B, C} -> D; the heavier branch wins.
  LinkGraph g;
  g.boxes = {{{0, 0, 1, 1}}, {{0, 0, 1, 1}, {2, 0, 3, 1}}, {{0, 0, 1, 1}}};
  g.links = {{{0, 0}, {0, 1}}, {{0, 0}, {1, 0}}};
  const FrameTable<double> conf = {{0.9}, {0.5, 0.8}, {0.5}};
  const auto p = find_max_path(g, conf);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->first_frame, 0u);
  EXPECT_EQ(p->members, (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_NEAR(p->score, 2.2, 1e-12);
  EXPECT_NEAR(p->rescored, 2.2 / 3, 1e-12);
}

TEST(MaxPath, SingleFrameIsArgmax) {
  LinkGraph g;
  g.boxes = {{{0, 0, 1, 1}, {2, 2, 3, 3}, {4, 4, 5, 5}}};
  const FrameTable<double> conf = {{0.2, 0.7, 0.4}};
  const auto p = find_max_path(g, conf);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->members, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p->score, 0.7);
}

TEST(MaxPath, EmptyGraph) {
  LinkGraph g;
  g.boxes = {{}, {}};
  g.links = {{}};
  EXPECT_FALSE(find_max_path(g, {{}, {}}));
  EXPECT_FALSE(brute_force_max_path(g, {{}, {}}));
}

TEST(MaxPath, RespectsActiveMask) {
  LinkGraph g;
  g.boxes = {{{0, 0, 1, 1}}, {{0, 0, 1, 1}, {2, 0, 3, 1}}, {{0, 0, 1, 1}}};
  g.links = {{{0, 0}, {0, 1}}, {{0, 0}, {1, 0}}};
  const FrameTable<double> conf = {{0.9}, {0.5, 0.8}, {0.5}};
  const FrameTable<char> active = {{1}, {1, 0}, {1}};
  const auto p = find_max_path(g, conf, &active);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->members, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_NEAR(p->score, 1.9, 1e-12);
}

TEST(MaxPath, TieBreakPrefersEarlierEndFrame) {
  LinkGraph g;
  g.boxes = {{{0, 0, 1, 1}}, {{5, 5, 6, 6}}};
  g.links = {{}};
  const FrameTable<double> conf = {{0.5}, {0.5}};
  const auto p = find_max_path(g, conf);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->first_frame, 0u);
}

TEST(MaxPathProperty, MatchesBruteForce) {
  Rng rng(2024);
  for (int seed = 0; seed < 1500; ++seed) {
    const auto g = random_graph(rng, 1 + rng.below(6), 4, rng.uniform(0.2, 0.9));
    const auto conf = random_conf(rng, g);
    FrameTable<char> active(g.num_frames());
    for (std::size_t t = 0; t < g.num_frames(); ++t) {
      for (std::size_t i = 0; i < g.boxes[t].size(); ++i) active[t].push_back(rng.bernoulli(0.8));
    }
    const std::vector<const FrameTable<char>*> masks = {nullptr, &active};
    for (const auto* mask : masks) {
      const auto dp = find_max_path(g, conf, mask);
      const auto bf = brute_force_max_path(g, conf, mask);
      ASSERT_EQ(dp.has_value(), bf.has_value());
      if (!dp) continue;
      EXPECT_EQ(dp->score, bf->score);
      EXPECT_EQ(dp->first_frame, bf->first_frame);
      EXPECT_EQ(dp->members, bf->members);
    }
  }
}

TEST(MaxPath, BruteForceBound) {
  LinkGraph g;
  g.boxes.assign(12, std::vector<Box>(4, Box{0, 0, 1, 1}));
  g.links.resize(11);
  for (auto& l : g.links) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) l.emplace_back(i, j);
    }
  }
  FrameTable<double> conf(12, std::vector<double>(4, 0.5));
  EXPECT_THROW(brute_force_max_path(g, conf, nullptr, 1000), PathEnumerationLimit);
}

TEST(Rescore, MeanOfMembers) {
  Tubelet t;
  t.members = {0, 0, 0, 0};
  t.confidences = {0.9, 0.7, 0.8, 0.6};
  const auto r = rescore_path(t);
  EXPECT_NEAR(r.rescored, 0.75, 1e-12);
  EXPECT_NEAR(r.score, 3.0, 1e-12);
  EXPECT_THROW(rescore_path(Tubelet{}), std::invalid_argument);
}

TEST(Suppress, IdenticalDuplicateRemoved) {
  VideoDetections v{"v", {{0, {det({0, 0, 10, 10}, 0.9), det({0, 0, 10, 10}, 0.6), det({40, 40, 50, 50}, 0.3)}}}};
  Tubelet t;
  t.members = {0};
  t.confidences = {0.9};
  const auto out = suppress_with_path(v, t, {}, 0.5);
  ASSERT_EQ(out.frames[0].detections.size(), 2u);
  EXPECT_EQ(out.frames[0].detections[0].confidence, 0.9);
  EXPECT_EQ(out.frames[0].detections[1].confidence, 0.3);
}

TEST(Suppress, OtherClassUntouched) {
  VideoDetections v{"v", {{0, {det({0, 0, 10, 10}, 0.9), det({0, 0, 10, 10}, 0.6, 1)}}}};
  Tubelet t;
  t.members = {0};
  t.confidences = {0.9};
  EXPECT_EQ(suppress_with_path(v, t, {}, 0.5).frames[0].detections.size(), 2u);
}

TEST(SeqNms, LinkedDuplicatesCollapseToOneTubelet) {
  VideoDetections v{"v",
                    {{0, {det({0, 0, 10, 10}, 0.9), det({0, 0, 10, 10.5}, 0.5)}},
                     {1, {det({0.5, 0, 10.5, 10}, 0.3), det({0.5, 0, 10.5, 10}, 0.2)}},
                     {2, {det({1, 0, 11, 10}, 0.6)}}}};
  const auto r = seq_diou_nms(v);
  ASSERT_EQ(r.tubelets.size(), 1u);
  EXPECT_EQ(r.tubelets[0].members.size(), 3u);
  for (const auto& f : r.video.frames) {
    ASSERT_EQ(f.detections.size(), 1u);
    EXPECT_NEAR(f.detections[0].confidence, 0.6, 1e-12);
  }
}

TEST(SeqNms, SingleFrameEqualsDiouNms) {
  Rng rng(17);
  for (int k = 0; k < 200; ++k) {
    Frame f{0, {}};
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      f.detections.push_back(det({x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)}, rng.uniform(),
                                 static_cast<int>(rng.below(2))));
    }
    const VideoDetections v{"v", {f}};
    const auto seq = seq_diou_nms(v, 0.6, 0.5);
    const auto ref = nms(f, {{OverlapMetric::diou, 1.0}, 0.5, true});
    EXPECT_EQ(seq.video.frames[0], ref);
  }
}

TEST(SeqNms, EverySurvivorInExactlyOneTubelet) {
  SynthSpec spec;
  spec.num_frames = 8;
  spec.objects = {{0, {100, 100, 200, 200}, 5, 0}, {0, {130, 110, 230, 210}, -3, 1}, {1, {600, 600, 700, 680}, 0, -4}};
  spec.noise = {3, 0.1, 0.8, 3, 0.8, 1.0, 0.1};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto data = generate(seed, spec);
    const auto& v = data.detections.at(0);
    std::size_t total = 0;
    for (const auto& f : v.frames) total += f.detections.size();
    const auto r = seq_diou_nms(v);
    EXPECT_LE(r.tubelets.size(), total);
    std::size_t members = 0, survivors = 0;
    for (const auto& t : r.tubelets) members += t.members.size();
    for (const auto& f : r.video.frames) survivors += f.detections.size();
    EXPECT_EQ(members, survivors);
    // Rescored values are the tubelet means.
    for (const auto& t : r.tubelets) {
      double s = 0;
      for (double c : t.confidences) s += c;
      EXPECT_NEAR(t.rescored, s / t.confidences.size(), 1e-12);
    }
  }
}

TEST(SeqNms, ZeroCenterWeightEqualsIouVariant) {
  SynthSpec spec;
  spec.num_frames = 6;
  spec.objects = {{0, {100, 100, 180, 180}, 4, 2}, {0, {150, 120, 230, 200}, -4, 0}};
  spec.noise = {4, 0.1, 0.8, 2, 0.8, 1.0, 0.1};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = generate(seed, spec).detections.at(0);
    EXPECT_EQ(seq_diou_nms(v, 0.6, 0.5, 0.0).video, seq_nms(v, 0.6, 0.5).video);
  }
}
