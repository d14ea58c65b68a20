#include "tsnet/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tsnet/errors.hpp"

namespace tsnet {
namespace {

using nlohmann::json;

constexpr int kFacePoints = 68;
constexpr int kBodyCorePoints = 25;
constexpr int kBodyFacePoints = 70;
constexpr int kHandPoints = 21;
constexpr int kBodyFaceOffset = kBodyCorePoints;
constexpr int kLeftHandOffset = kBodyFaceOffset + kBodyFacePoints;
constexpr int kRightHandOffset = kLeftHandOffset + kHandPoints;
constexpr int kBodyPoints = kRightHandOffset + kHandPoints;

void add_chain(std::vector<Segment>& out, int first, int last, int offset, int channel,
               bool closed) {
  for (int i = first; i < last; ++i) out.push_back({offset + i, offset + i + 1, channel});
  if (closed) out.push_back({offset + last, offset + first, channel});
}

void add_face68(std::vector<Segment>& out, int offset, int channel) {
  add_chain(out, 0, 16, offset, channel, false);   // jaw
  add_chain(out, 17, 21, offset, channel, false);  // right brow
  add_chain(out, 22, 26, offset, channel, false);  // left brow
  add_chain(out, 27, 30, offset, channel, false);  // nose bridge
  add_chain(out, 31, 35, offset, channel, false);  // lower nose
  add_chain(out, 36, 41, offset, channel, true);   // right eye
  add_chain(out, 42, 47, offset, channel, true);   // left eye
  add_chain(out, 48, 59, offset, channel, true);   // outer lip
  add_chain(out, 60, 67, offset, channel, true);   // inner lip
}

void add_hand(std::vector<Segment>& out, int offset, int channel) {
  for (int finger = 0; finger < 5; ++finger) {
    const int base = 1 + 4 * finger;
    out.push_back({offset, offset + base, channel});
    add_chain(out, base, base + 3, offset, channel, false);
  }
}

SchemaTopology make_face_topology() {
  SchemaTopology t;
  add_face68(t.segments, 0, 0);
  t.point_channel.assign(kFacePoints, 0);
  t.channels = 1;
  return t;
}

// Channels: 0 torso+head, 1 right arm, 2 left arm, 3 right leg, 4 left leg, 5 face,
// 6 left hand, 7 right hand.
SchemaTopology make_body_topology() {
  SchemaTopology t;
  auto& s = t.segments;
  for (auto [a, b] : std::initializer_list<std::pair<int, int>>{
           {1, 0}, {1, 8}, {1, 2}, {1, 5}, {8, 9}, {8, 12}, {0, 15}, {15, 17}, {0, 16}, {16, 18}}) {
    s.push_back({a, b, 0});
  }
  s.push_back({2, 3, 1});
  s.push_back({3, 4, 1});
  s.push_back({5, 6, 2});
  s.push_back({6, 7, 2});
  for (auto [a, b] :
       std::initializer_list<std::pair<int, int>>{{9, 10}, {10, 11}, {11, 22}, {22, 23}, {11, 24}}) {
    s.push_back({a, b, 3});
  }
  for (auto [a, b] :
       std::initializer_list<std::pair<int, int>>{{12, 13}, {13, 14}, {14, 19}, {19, 20}, {14, 21}}) {
    s.push_back({a, b, 4});
  }
  add_face68(s, kBodyFaceOffset, 5);
  add_hand(s, kLeftHandOffset, 6);
  add_hand(s, kRightHandOffset, 7);

  t.point_channel.assign(kBodyPoints, 0);
  for (int i : {2, 3, 4}) t.point_channel[i] = 1;
  for (int i : {5, 6, 7}) t.point_channel[i] = 2;
  for (int i : {9, 10, 11, 22, 23, 24}) t.point_channel[i] = 3;
  for (int i : {12, 13, 14, 19, 20, 21}) t.point_channel[i] = 4;
  for (int i = 0; i < kBodyFacePoints; ++i) t.point_channel[kBodyFaceOffset + i] = 5;
  for (int i = 0; i < kHandPoints; ++i) {
    t.point_channel[kLeftHandOffset + i] = 6;
    t.point_channel[kRightHandOffset + i] = 7;
  }
  t.channels = 8;
  return t;
}

void apply_swaps(std::vector<int>& table, int offset,
                 std::initializer_list<std::pair<int, int>> pairs) {
  for (auto [a, b] : pairs) {
    table[offset + a] = offset + b;
    table[offset + b] = offset + a;
  }
}

void add_face68_mirror(std::vector<int>& table, int offset) {
  for (int i = 0; i < 8; ++i) {
    table[offset + i] = offset + 16 - i;
    table[offset + 16 - i] = offset + i;
  }
  apply_swaps(table, offset,
              {{17, 26}, {18, 25}, {19, 24}, {20, 23}, {21, 22},              // brows
               {31, 35}, {32, 34},                                           // nostrils
               {36, 45}, {37, 44}, {38, 43}, {39, 42}, {40, 47}, {41, 46},  // eyes
               {48, 54}, {49, 53}, {50, 52}, {55, 59}, {56, 58},            // outer lip
               {60, 64}, {61, 63}, {65, 67}});                              // inner lip
}

std::vector<int> make_face_mirror() {
  std::vector<int> table(kFacePoints);
  std::iota(table.begin(), table.end(), 0);
  add_face68_mirror(table, 0);
  return table;
}

std::vector<int> make_body_mirror() {
  std::vector<int> table(kBodyPoints);
  std::iota(table.begin(), table.end(), 0);
  apply_swaps(table, 0,
              {{2, 5}, {3, 6}, {4, 7}, {9, 12}, {10, 13}, {11, 14}, {15, 16}, {17, 18},
               {19, 22}, {20, 23}, {21, 24}});
  add_face68_mirror(table, kBodyFaceOffset);
  apply_swaps(table, kBodyFaceOffset, {{68, 69}});
  for (int i = 0; i < kHandPoints; ++i) {
    table[kLeftHandOffset + i] = kRightHandOffset + i;
    table[kRightHandOffset + i] = kLeftHandOffset + i;
  }
  return table;
}

}  // namespace

std::string_view to_string(Schema schema) {
  switch (schema) {
    case Schema::kFace68:
      return "face68";
    case Schema::kBody:
      return "body";
  }
  return "unknown";
}

Schema schema_from_string(std::string_view name) {
  if (name == "face68" || name == "face") return Schema::kFace68;
  if (name == "body" || name == "body-pose-with-face-hands") return Schema::kBody;
  throw ConfigError("unknown keypoint schema '" + std::string(name) + "'");
}

std::size_t schema_point_count(Schema schema) {
  return schema == Schema::kFace68 ? kFacePoints : kBodyPoints;
}

BoundingBox BoundingBox::downsample(int factor, int cells_w, int cells_h) const {
  auto cell = [factor](double v, int limit) {
    const double c = std::floor((v + 0.5) / factor);
    return std::clamp(c, 0.0, static_cast<double>(limit - 1));
  };
  return {cell(x_min, cells_w), cell(y_min, cells_h), cell(x_max, cells_w), cell(y_max, cells_h)};
}

std::size_t KeypointSet::visible_count() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), true));
}

void KeypointSet::validate() const {
  const auto expected = schema_point_count(schema);
  if (points.size() != expected || visible.size() != expected) {
    std::ostringstream msg;
    msg << "keypoint set for schema " << to_string(schema) << " has " << points.size()
        << " points / " << visible.size() << " flags, expected " << expected;
    throw DatasetError(msg.str());
  }
}

void KeypointSet::clamp_to(int width, int height) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!visible[i]) continue;
    points[i].x = std::clamp(points[i].x, 0.0, static_cast<double>(width - 1));
    points[i].y = std::clamp(points[i].y, 0.0, static_cast<double>(height - 1));
  }
}

BoundingBox KeypointSet::bbox() const {
  bool any = false;
  BoundingBox box;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!visible[i]) continue;
    const auto& p = points[i];
    if (!any) {
      box = {p.x, p.y, p.x, p.y};
      any = true;
      continue;
    }
    box.x_min = std::min(box.x_min, p.x);
    box.y_min = std::min(box.y_min, p.y);
    box.x_max = std::max(box.x_max, p.x);
    box.y_max = std::max(box.y_max, p.y);
  }
  if (!any) throw EmptyMaskError("keypoint set has no visible point");
  return box;
}

const SchemaTopology& topology(Schema schema) {
  static const SchemaTopology face = make_face_topology();
  static const SchemaTopology body = make_body_topology();
  return schema == Schema::kFace68 ? face : body;
}

std::span<const int> mirror_table(Schema schema) {
  static const std::vector<int> face = make_face_mirror();
  static const std::vector<int> body = make_body_mirror();
  return schema == Schema::kFace68 ? std::span<const int>(face) : std::span<const int>(body);
}

std::pair<int, int> face_point_range(Schema schema) {
  if (schema == Schema::kFace68) return {0, kFacePoints};
  return {kBodyFaceOffset, kBodyFaceOffset + kBodyFacePoints};
}

double quantize_coordinate(double v) { return std::round(v * 256.0) / 256.0; }

KeypointSet parse_keypoints_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed keypoint json: ") + e.what());
  }
  KeypointSet kps;
  kps.schema = schema_from_string(doc.at("schema").get<std::string>());
  const auto& pts = doc.at("points");
  kps.points.reserve(pts.size());
  kps.visible.reserve(pts.size());
  for (const auto& p : pts) {
    if (p.is_null()) {
      kps.points.push_back({0.0, 0.0});
      kps.visible.push_back(false);
      continue;
    }
    kps.points.push_back(
        {quantize_coordinate(p.at(0).get<double>()), quantize_coordinate(p.at(1).get<double>())});
    kps.visible.push_back(true);
  }
  if (doc.contains("visibility")) {
    const auto& vis = doc.at("visibility");
    if (vis.size() != kps.points.size()) throw DatasetError("visibility length mismatch");
    for (std::size_t i = 0; i < vis.size(); ++i) {
      kps.visible[i] = kps.visible[i] && vis[i].get<bool>();
    }
  }
  kps.validate();
  return kps;
}

KeypointSet read_keypoints_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open keypoint file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_keypoints_json(buf.str());
}

std::string keypoints_to_json(const KeypointSet& kps) {
  json doc;
  doc["schema"] = std::string(to_string(kps.schema));
  json pts = json::array();
  json vis = json::array();
  for (std::size_t i = 0; i < kps.points.size(); ++i) {
    pts.push_back({kps.points[i].x, kps.points[i].y});
    vis.push_back(static_cast<bool>(kps.visible[i]));
  }
  doc["points"] = std::move(pts);
  doc["visibility"] = std::move(vis);
  return doc.dump();
}

void write_keypoints_json(const std::filesystem::path& path, const KeypointSet& kps) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write keypoint file " + path.string());
  out << keypoints_to_json(kps) << '\n';
}

}  // namespace tsnet
