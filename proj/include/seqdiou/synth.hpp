#pragma once

// Deterministic synthetic videos: exact linearly moving ground-truth boxes
// plus corrupted detections (jitter, duplicates, false positives, misses).
//
// Spec file (JSON):
//   {
//     "num_frames": 20,
//     "num_videos": 1,                 optional, default 1
//     "video_id": "synth",             optional prefix, default "synth"
//     "objects": [{"class_id": 0, "box": [x1,y1,x2,y2], "velocity": [vx,vy]}],
//     "noise": {                       optional, every field defaults to 0
//       "coord_sigma": 0,              per-coordinate Gaussian jitter (pixels)
//       "conf_sigma": 0,               Gaussian confidence jitter
//       "base_confidence": 1.0,        mean confidence of a true detection
//       "duplicates": 0,               extra detections per object and frame
//       "duplicate_decay": 0.8,        duplicate k has confidence * decay^k
//       "false_positive_rate": 0,      expected false positives per frame
//       "miss_rate": 0                 probability an object is undetected in a frame
//     }
//   }
//
// Per video, per frame, draws happen in this order (all from one Rng):
//   for each object: miss draw; then for the primary and each duplicate:
//     4 coordinate normals, 1 confidence normal;
//   then the false-positive count draw, then per false positive:
//     class draw, width, height, x1, y1, confidence uniforms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqdiou/detection.hpp"
#include "seqdiou/geometry.hpp"
#include "seqdiou/random.hpp"

namespace seqdiou {

inline constexpr double kCanvasWidth = 1000.0;
inline constexpr double kCanvasHeight = 1000.0;

struct SynthObject {
  int class_id = 0;
  Box start;
  double vx = 0.0;
  double vy = 0.0;
};

struct SynthNoise {
  double coord_sigma = 0.0;
  double conf_sigma = 0.0;
  double base_confidence = 1.0;
  int duplicates = 0;
  double duplicate_decay = 0.8;
  double false_positive_rate = 0.0;
  double miss_rate = 0.0;
};

struct SynthSpec {
  int num_frames = 1;
  int num_videos = 1;
  std::string video_id = "synth";
  std::vector<SynthObject> objects;
  SynthNoise noise;
};

struct SynthData {
  std::vector<VideoGroundTruth> ground_truth;
  std::vector<VideoDetections> detections;
};

class SynthSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& what) { throw SynthSpecError("synth spec: " + what); };
  if (spec.num_frames < 1) fail("num_frames must be >= 1");
  if (spec.num_videos < 1) fail("num_videos must be >= 1");
  for (const auto& o : spec.objects) {
    if (!is_valid(o.start)) fail("object box must satisfy x1 <= x2, y1 <= y2");
    if (!std::isfinite(o.vx) || !std::isfinite(o.vy)) fail("velocity must be finite");
    if (o.class_id < 0) fail("class_id must be non-negative");
  }
  const auto& n = spec.noise;
  if (!(n.coord_sigma >= 0.0) || !(n.conf_sigma >= 0.0)) fail("sigmas must be non-negative");
  if (!(n.base_confidence >= 0.0 && n.base_confidence <= 1.0)) fail("base_confidence must be in [0,1]");
  if (n.duplicates < 0 || n.duplicates > 100) fail("duplicates must be in [0,100]");
  if (!(n.duplicate_decay >= 0.0 && n.duplicate_decay <= 1.0)) fail("duplicate_decay must be in [0,1]");
  if (!(n.false_positive_rate >= 0.0 && n.false_positive_rate <= 100.0)) {
    fail("false_positive_rate must be in [0,100]");
  }
  if (!(n.miss_rate >= 0.0 && n.miss_rate <= 1.0)) fail("miss_rate must be in [0,1]");
}

inline SynthSpec parse_synth_spec(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SynthSpecError(std::string("synth spec: malformed JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    spec.num_frames = j.at("num_frames").get<int>();
    spec.num_videos = j.value("num_videos", 1);
    spec.video_id = j.value("video_id", std::string("synth"));
    for (const auto& o : j.at("objects")) {
      SynthObject obj;
      obj.class_id = o.at("class_id").get<int>();
      const auto& b = o.at("box");
      if (!b.is_array() || b.size() != 4) throw SynthSpecError("synth spec: box must have 4 numbers");
      obj.start = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      if (auto v = o.find("velocity"); v != o.end()) {
        if (!v->is_array() || v->size() != 2) throw SynthSpecError("synth spec: velocity must have 2 numbers");
        obj.vx = (*v)[0].get<double>();
        obj.vy = (*v)[1].get<double>();
      }
      spec.objects.push_back(obj);
    }
    if (auto n = j.find("noise"); n != j.end()) {
      spec.noise.coord_sigma = n->value("coord_sigma", 0.0);
      spec.noise.conf_sigma = n->value("conf_sigma", 0.0);
      spec.noise.base_confidence = n->value("base_confidence", 1.0);
      spec.noise.duplicates = n->value("duplicates", 0);
      spec.noise.duplicate_decay = n->value("duplicate_decay", 0.8);
      spec.noise.false_positive_rate = n->value("false_positive_rate", 0.0);
      spec.noise.miss_rate = n->value("miss_rate", 0.0);
    }
  } catch (const json::exception& e) {
    throw SynthSpecError(std::string("synth spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

namespace detail {

inline Box clamp_to_canvas(Box b) {
  b.x1 = std::clamp(b.x1, 0.0, kCanvasWidth);
  b.x2 = std::clamp(b.x2, 0.0, kCanvasWidth);
  b.y1 = std::clamp(b.y1, 0.0, kCanvasHeight);
  b.y2 = std::clamp(b.y2, 0.0, kCanvasHeight);
  return b;
}

inline Box jitter(const Box& b, double sigma, Rng& rng) {
  Box j{b.x1 + sigma * rng.normal(), b.y1 + sigma * rng.normal(), b.x2 + sigma * rng.normal(),
        b.y2 + sigma * rng.normal()};
  if (j.x1 > j.x2) std::swap(j.x1, j.x2);
  if (j.y1 > j.y2) std::swap(j.y1, j.y2);
  return clamp_to_canvas(j);
}

inline std::string video_name(const SynthSpec& spec, int v) {
  if (spec.num_videos == 1) return spec.video_id;
  std::ostringstream os;
  os << spec.video_id << '_' << std::setw(4) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

/// Ground-truth box of an object at frame t.
inline Box object_box_at(const SynthObject& o, int t) {
  const double dx = o.vx * t;
  const double dy = o.vy * t;
  return detail::clamp_to_canvas({o.start.x1 + dx, o.start.y1 + dy, o.start.x2 + dx, o.start.y2 + dy});
}

inline SynthData generate(std::uint64_t seed, const SynthSpec& spec) {
  validate(spec);
  Rng rng(seed);
  const auto& nz = spec.noise;
  SynthData out;
  for (int v = 0; v < spec.num_videos; ++v) {
    VideoGroundTruth gt{detail::video_name(spec, v), {}};
    VideoDetections dets{gt.video_id, {}};
    for (int t = 0; t < spec.num_frames; ++t) {
      GroundTruthFrame gf{t, {}};
      Frame df{t, {}};
      for (const auto& o : spec.objects) {
        const Box box = object_box_at(o, t);
        gf.objects.push_back({box, o.class_id, false});
        const bool missed = rng.bernoulli(nz.miss_rate);
        double primary = 0.0;
        for (int k = 0; k <= nz.duplicates; ++k) {
          const Box b = detail::jitter(box, nz.coord_sigma, rng);
          const double z = rng.normal();
          double conf = k == 0 ? nz.base_confidence : primary * std::pow(nz.duplicate_decay, k);
          conf = std::clamp(conf + nz.conf_sigma * z, 0.0, 1.0);
          if (k == 0) primary = conf;
          if (!missed) df.detections.push_back({b, o.class_id, conf, std::nullopt});
        }
      }
      const double whole = std::floor(nz.false_positive_rate);
      const int fp_count = static_cast<int>(whole) + (rng.bernoulli(nz.false_positive_rate - whole) ? 1 : 0);
      for (int k = 0; k < fp_count; ++k) {
        const int cls = spec.objects.empty()
                            ? 0
                            : spec.objects[rng.below(spec.objects.size())].class_id;
        const double w = rng.uniform(20.0, 200.0);
        const double h = rng.uniform(20.0, 200.0);
        const double x1 = rng.uniform(0.0, kCanvasWidth - w);
        const double y1 = rng.uniform(0.0, kCanvasHeight - h);
        const double conf = rng.uniform(0.0, nz.base_confidence);
        df.detections.push_back({{x1, y1, x1 + w, y1 + h}, cls, conf, std::nullopt});
      }
      gt.frames.push_back(std::move(gf));
      dets.frames.push_back(std::move(df));
    }
    out.ground_truth.push_back(std::move(gt));
    out.detections.push_back(std::move(dets));
  }
  return out;
}

/// Two same-class objects on parallel horizontal tracks moving in opposite
/// directions. At the crossing frame their centers are offset vertically so
/// that IoU >= threshold > DIoU; every other pair of boxes from different
/// objects stays below the threshold under both metrics, and each object's
/// consecutive boxes link under both metrics.
struct CrossingScenario {
  SynthData data;
  std::size_t crossing_frame = 0;  // position in frames
  double crossing_iou = 0.0;
  double crossing_diou = 0.0;
};

inline CrossingScenario crossing_scenario(std::uint64_t seed, double threshold = 0.6) {
  Rng rng(seed);
  const double side = rng.uniform(80.0, 120.0);
  // Target IoU slightly above the threshold; for equal squares offset by dy
  // vertically, IoU = (side - dy) / (side + dy).
  const double target = threshold + rng.uniform(0.002, 0.010);
  const double dy = side * (1.0 - target) / (1.0 + target);
  const double speed = side * rng.uniform(0.05, 0.10);
  const int frames = 9 + static_cast<int>(rng.below(7));
  const int cross = frames / 2;

  const double cx = 500.0;
  const double cy = 500.0 - dy / 2.0;
  SynthSpec spec;
  spec.num_frames = frames;
  spec.video_id = "crossing";
  const Box first{cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0};
  const Box second{first.x1, first.y1 + dy, first.x2, first.y2 + dy};
  spec.objects.push_back({0, {first.x1 - speed * cross, first.y1, first.x2 - speed * cross, first.y2},
                          speed, 0.0});
  spec.objects.push_back({0, {second.x1 + speed * cross, second.y1, second.x2 + speed * cross, second.y2},
                          -speed, 0.0});

  CrossingScenario sc;
  sc.crossing_frame = static_cast<std::size_t>(cross);
  sc.data = generate(seed, spec);
  // Replace the noiseless confidences with seeded ones in [0.5, 1).
  for (auto& f : sc.data.detections.front().frames) {
    for (auto& d : f.detections) d.confidence = rng.uniform(0.5, 1.0);
  }

  const auto& gtf = sc.data.ground_truth.front().frames;
  const Box a = gtf[cross].objects[0].box;
  const Box b = gtf[cross].objects[1].box;
  sc.crossing_iou = iou(a, b);
  sc.crossing_diou = diou(a, b);
  if (!(sc.crossing_iou >= threshold && sc.crossing_diou < threshold)) {
    throw std::logic_error("crossing_scenario: crossing frame does not separate IoU from DIoU");
  }
  for (std::size_t t = 0; t + 1 < gtf.size(); ++t) {
    for (int o = 0; o < 2; ++o) {
      const Box& cur = gtf[t].objects[o].box;
      if (diou(cur, gtf[t + 1].objects[o].box) < threshold) {
        throw std::logic_error("crossing_scenario: object track does not link");
      }
      if (iou(cur, gtf[t + 1].objects[1 - o].box) >= threshold) {
        throw std::logic_error("crossing_scenario: tracks cross-link between frames");
      }
    }
    if (t != sc.crossing_frame && iou(gtf[t].objects[0].box, gtf[t].objects[1].box) >= threshold) {
      throw std::logic_error("crossing_scenario: overlap above threshold outside the crossing frame");
    }
  }
  return sc;
}

}  // namespace seqdiou
