#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsnet {

enum class Schema {
  kFace68,  // dlib 68-landmark layout
  kBody,    // OpenPose BODY_25 + 70 face + 2x21 hand points
};

std::string_view to_string(Schema schema);
Schema schema_from_string(std::string_view name);

/// Number of points a keypoint set of this schema carries.
std::size_t schema_point_count(Schema schema);

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Axis-aligned box in pixel units (inclusive extents).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  Point2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }

  /// Cell-index box on a grid `factor` times coarser, limited to `cells_w` x `cells_h`.
  /// Rounds outward: every cell that intersects the original box is inside the result.
  BoundingBox downsample(int factor, int cells_w, int cells_h) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// One frame's keypoints. Coordinates are pixel units with (0, 0) at the top-left pixel center.
struct KeypointSet {
  Schema schema = Schema::kFace68;
  std::vector<Point2> points;
  std::vector<bool> visible;

  std::size_t visible_count() const;

  /// Throws DatasetError when the point count does not match the schema.
  void validate() const;

  /// Drops points outside [0, width) x [0, height) by clamping them to the border.
  void clamp_to(int width, int height);

  /// Axis-aligned min/max over visible points. Throws EmptyMaskError when none is visible.
  BoundingBox bbox() const;

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

/// A pair of point indices joined by a raster segment, tagged with its output channel.
struct Segment {
  int a = 0;
  int b = 0;
  int channel = 0;
};

/// Skeleton topology of a schema (fixed per schema).
struct SchemaTopology {
  std::vector<Segment> segments;
  /// Output channel of every point; isolated visible points are drawn as dots there.
  std::vector<int> point_channel;
  int channels = 1;
};

const SchemaTopology& topology(Schema schema);

/// Index permutation that swaps left/right landmarks under a horizontal flip.
std::span<const int> mirror_table(Schema schema);

/// Index range of the face landmarks inside a schema (the whole set for face68).
std::pair<int, int> face_point_range(Schema schema);

/// Keypoints are stored on a 1/256 px lattice so that mirroring is exactly invertible.
double quantize_coordinate(double v);

/// Reads one keypoint sidecar: {"schema": "...", "points": [[x, y], ...], "visibility": [...]}.
/// `visibility` is optional (defaults to all visible); a point given as null is invisible.
KeypointSet read_keypoints_json(const std::filesystem::path& path);
KeypointSet parse_keypoints_json(std::string_view text);
std::string keypoints_to_json(const KeypointSet& kps);
void write_keypoints_json(const std::filesystem::path& path, const KeypointSet& kps);

}  // namespace tsnet
