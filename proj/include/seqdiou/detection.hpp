#pragma once

// Per-video detection data model and its JSONL serialization.
//
// One JSON object per line, one line per (video_id, frame_idx):
//   {"video_id": str, "frame_idx": int,
//    "detections": [{"box": [x1,y1,x2,y2], "class_id": int,
//                    "confidence": float, "objectness": float (optional)}]}
//
// Ground-truth files use the same line shape; entries carry "box",
// "class_id" and an optional boolean "ignore".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqdiou/geometry.hpp"

namespace seqdiou {

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;
  std::optional<double> objectness;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Frame {
  std::int64_t frame_idx = 0;
  std::vector<Detection> detections;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct VideoDetections {
  std::string video_id;
  std::vector<Frame> frames;  // strictly ascending frame_idx

  friend bool operator==(const VideoDetections&, const VideoDetections&) = default;
};

struct GroundTruthObject {
  Box box;
  int class_id = 0;
  bool ignore = false;

  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

struct GroundTruthFrame {
  std::int64_t frame_idx = 0;
  std::vector<GroundTruthObject> objects;

  friend bool operator==(const GroundTruthFrame&, const GroundTruthFrame&) = default;
};

struct VideoGroundTruth {
  std::string video_id;
  std::vector<GroundTruthFrame> frames;

  friend bool operator==(const VideoGroundTruth&, const VideoGroundTruth&) = default;
};

/// Malformed input. `line()` is 1-based; 0 when the error is not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data-model invariant. `field()` names it.
class ValidationError : public ParseError {
 public:
  ValidationError(std::size_t line, std::string field, const std::string& what)
      : ParseError(line, field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(line, key, "missing field");
  return *it;
}

inline double read_number(const json& v, const char* field, std::size_t line) {
  if (!v.is_number()) throw ValidationError(line, field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ValidationError(line, field, "not finite");
  return x;
}

inline double read_unit(const json& v, const char* field, std::size_t line) {
  const double x = read_number(v, field, line);
  if (x < 0.0 || x > 1.0) {
    std::ostringstream os;
    os.precision(17);
    os << "out of range [0,1]: " << x;
    throw ValidationError(line, field, os.str());
  }
  return x;
}

inline std::int64_t read_integer(const json& v, const char* field, std::size_t line) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (std::isfinite(x) && std::floor(x) == x && std::abs(x) < 9.0e15) {
      return static_cast<std::int64_t>(x);
    }
  }
  throw ValidationError(line, field, "expected an integer");
}

inline Box read_box(const json& v, std::size_t line) {
  if (!v.is_array() || v.size() != 4) {
    throw ValidationError(line, "box", "expected [x1, y1, x2, y2]");
  }
  Box b{read_number(v[0], "box", line), read_number(v[1], "box", line),
        read_number(v[2], "box", line), read_number(v[3], "box", line)};
  if (!(b.x1 <= b.x2 && b.y1 <= b.y2)) {
    throw ValidationError(line, "box", "requires x1 <= x2 and y1 <= y2");
  }
  return b;
}

inline int read_class(const json& v, std::size_t line) {
  const auto c = read_integer(v, "class_id", line);
  if (c < 0 || c > 1'000'000) throw ValidationError(line, "class_id", "out of range");
  return static_cast<int>(c);
}

using ordered_json = nlohmann::ordered_json;

inline ordered_json box_json(const Box& b) {
  return ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

// Parses the common line envelope and hands each entry to `entry`.
// Groups frames per video, sorted by video_id then frame_idx.
template <typename FrameT, typename EntryFn>
std::map<std::string, std::map<std::int64_t, FrameT>> parse_lines(std::istream& in,
                                                                   EntryFn entry) {
  std::map<std::string, std::map<std::int64_t, FrameT>> videos;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) throw ParseError(line, "expected a JSON object");
    const auto& vid = require(rec, "video_id", line);
    if (!vid.is_string()) throw ValidationError(line, "video_id", "expected a string");
    const auto idx = read_integer(require(rec, "frame_idx", line), "frame_idx", line);
    if (idx < 0) throw ValidationError(line, "frame_idx", "must be non-negative");
    const auto& dets = require(rec, "detections", line);
    if (!dets.is_array()) throw ValidationError(line, "detections", "expected an array");

    FrameT frame;
    frame.frame_idx = idx;
    for (const auto& d : dets) {
      if (!d.is_object()) throw ValidationError(line, "detections", "expected objects");
      entry(frame, d, line);
    }
    auto& frames = videos[vid.get<std::string>()];
    if (!frames.emplace(idx, std::move(frame)).second) {
      throw ValidationError(line, "frame_idx",
                            "duplicate frame " + std::to_string(idx) + " in video '" +
                                vid.get<std::string>() + "'");
    }
  }
  if (in.bad()) throw ParseError(0, "read failure");
  return videos;
}

}  // namespace detail

inline std::vector<VideoDetections> parse_detections(std::istream& in) {
  auto grouped = detail::parse_lines<Frame>(
      in, [](Frame& f, const detail::json& d, std::size_t line) {
        Detection det;
        det.box = detail::read_box(detail::require(d, "box", line), line);
        det.class_id = detail::read_class(detail::require(d, "class_id", line), line);
        det.confidence = detail::read_unit(detail::require(d, "confidence", line),
                                           "confidence", line);
        if (auto it = d.find("objectness"); it != d.end() && !it->is_null()) {
          det.objectness = detail::read_unit(*it, "objectness", line);
        }
        f.detections.push_back(det);
      });
  std::vector<VideoDetections> out;
  for (auto& [id, frames] : grouped) {
    VideoDetections v{id, {}};
    for (auto& [idx, f] : frames) v.frames.push_back(std::move(f));
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<VideoDetections> parse_detections(const std::string& text) {
  std::istringstream in(text);
  return parse_detections(in);
}

inline std::vector<VideoGroundTruth> parse_ground_truth(std::istream& in) {
  auto grouped = detail::parse_lines<GroundTruthFrame>(
      in, [](GroundTruthFrame& f, const detail::json& d, std::size_t line) {
        GroundTruthObject obj;
        obj.box = detail::read_box(detail::require(d, "box", line), line);
        obj.class_id = detail::read_class(detail::require(d, "class_id", line), line);
        if (auto it = d.find("ignore"); it != d.end() && !it->is_null()) {
          if (!it->is_boolean()) throw ValidationError(line, "ignore", "expected a boolean");
          obj.ignore = it->get<bool>();
        }
        f.objects.push_back(obj);
      });
  std::vector<VideoGroundTruth> out;
  for (auto& [id, frames] : grouped) {
    VideoGroundTruth v{id, {}};
    for (auto& [idx, f] : frames) v.frames.push_back(std::move(f));
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<VideoGroundTruth> parse_ground_truth(const std::string& text) {
  std::istringstream in(text);
  return parse_ground_truth(in);
}

namespace detail {

template <typename VideoT, typename FrameFn>
void write_lines(std::ostream& out, const std::vector<VideoT>& videos, FrameFn frame_entries) {
  std::vector<const VideoT*> order;
  for (const auto& v : videos) order.push_back(&v);
  std::stable_sort(order.begin(), order.end(),
                   [](const VideoT* a, const VideoT* b) { return a->video_id < b->video_id; });
  for (const VideoT* v : order) {
    std::vector<const typename decltype(v->frames)::value_type*> frames;
    for (const auto& f : v->frames) frames.push_back(&f);
    std::stable_sort(frames.begin(), frames.end(),
                     [](auto* a, auto* b) { return a->frame_idx < b->frame_idx; });
    for (const auto* f : frames) {
      ordered_json rec = ordered_json::object();
      rec["video_id"] = v->video_id;
      rec["frame_idx"] = f->frame_idx;
      rec["detections"] = frame_entries(*f);
      out << rec.dump() << '\n';
    }
  }
}

}  // namespace detail

/// Writes videos sorted by video_id, then frame_idx. Doubles are printed in
/// shortest round-trip form, so parse(write(x)) == x.
inline void write_detections(std::ostream& out, const std::vector<VideoDetections>& videos) {
  detail::write_lines(out, videos, [](const Frame& f) {
    auto arr = detail::ordered_json::array();
    for (const auto& d : f.detections) {
      detail::ordered_json e = detail::ordered_json::object();
      e["box"] = detail::box_json(d.box);
      e["class_id"] = d.class_id;
      e["confidence"] = d.confidence;
      if (d.objectness) e["objectness"] = *d.objectness;
      arr.push_back(std::move(e));
    }
    return arr;
  });
}

inline std::string write_detections(const std::vector<VideoDetections>& videos) {
  std::ostringstream os;
  write_detections(os, videos);
  return os.str();
}

inline void write_ground_truth(std::ostream& out, const std::vector<VideoGroundTruth>& videos) {
  detail::write_lines(out, videos, [](const GroundTruthFrame& f) {
    auto arr = detail::ordered_json::array();
    for (const auto& g : f.objects) {
      detail::ordered_json e = detail::ordered_json::object();
      e["box"] = detail::box_json(g.box);
      e["class_id"] = g.class_id;
      if (g.ignore) e["ignore"] = true;
      arr.push_back(std::move(e));
    }
    return arr;
  });
}

inline std::string write_ground_truth(const std::vector<VideoGroundTruth>& videos) {
  std::ostringstream os;
  write_ground_truth(os, videos);
  return os.str();
}

/// Checks the in-memory invariants that parsing guarantees.
inline void validate(const VideoDetections& v) {
  for (std::size_t f = 0; f < v.frames.size(); ++f) {
    if (f > 0 && v.frames[f].frame_idx <= v.frames[f - 1].frame_idx) {
      throw ValidationError(0, "frame_idx", "frames not strictly ascending in '" + v.video_id + "'");
    }
    for (const auto& d : v.frames[f].detections) {
      if (!is_valid(d.box)) throw ValidationError(0, "box", "invalid box");
      if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
        throw ValidationError(0, "confidence", "out of range [0,1]");
      }
      if (d.objectness && !(*d.objectness >= 0.0 && *d.objectness <= 1.0)) {
        throw ValidationError(0, "objectness", "out of range [0,1]");
      }
      if (d.class_id < 0) throw ValidationError(0, "class_id", "negative");
    }
  }
}

}  // namespace seqdiou
