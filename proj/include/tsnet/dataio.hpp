#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tsnet/keypoints.hpp"

namespace tsnet::dataio {

/// How keypoints become a mask image.
struct RasterStyle {
  /// Segment half-width in pixels at 256x256; scaled with min(H, W) / 256, never below 1 px.
  double radius_at_256 = 3.0;
  /// One channel per limb group (body) when true; always a single channel for face68.
  bool multi_channel = true;

  double radius_for(int height, int width) const;
};

int mask_channels(Schema schema, const RasterStyle& style);

struct MaskFrame {
  torch::Tensor raster;  // [channels, H, W], float32 in [0, 1]
  KeypointSet keypoints;
  BoundingBox bbox;
};

/// Draws the schema skeleton of `kps` with anti-aliased segments of the style's radius.
/// Every visible point is also drawn as a dot. Throws EmptyMaskError with no visible point.
MaskFrame rasterize_mask(const KeypointSet& kps, int height, int width, const RasterStyle& style);

/// Robust per-clip placement statistics (median bbox center and height over frames).
struct GeometryRef {
  Point2 center;
  double height = 0.0;
};

GeometryRef reference_geometry(const KeypointSet& kps);
GeometryRef reference_geometry(std::span<const KeypointSet> frames);

/// Similarity transform taking the driving reference onto the subject reference
/// (uniform scale + translation). Throws NormalizationError on a zero-height reference.
KeypointSet normalize_driving_mask(const KeypointSet& driving, const GeometryRef& subject_ref,
                                   const GeometryRef& driving_ref);

/// Single-frame form: the driving frame's own bbox is the driving reference.
KeypointSet normalize_driving_mask(const KeypointSet& driving, const KeypointSet& subject_ref);

struct VideoClip {
  std::string clip_id;
  std::string subject_id;
  std::vector<torch::Tensor> frames;  // [3, H, W], float32 in [0, 1]
  /// Empty entries mark frames whose keypoints were missing or fully invisible.
  std::vector<std::optional<MaskFrame>> masks;

  std::size_t size() const { return masks.size(); }
  int height() const;
  int width() const;
  std::vector<std::size_t> usable_indices() const;
  std::vector<KeypointSet> usable_keypoints() const;
};

/// Loads `<dir>/frames/%06d.png` and `<dir>/keypoints/%06d.json`. Frames are resized to
/// `size` (H, W) when given; keypoints are scaled along.
VideoClip load_clip(const std::filesystem::path& dir, const RasterStyle& style,
                    std::optional<std::pair<int, int>> size = std::nullopt,
                    std::string clip_id = {}, std::string subject_id = {});

void save_clip(const std::filesystem::path& dir, const VideoClip& clip);

/// An immutable collection of fully-annotated clips. Construction drops frames without
/// keypoints and clips shorter than `min_frames`.
class Dataset {
 public:
  Dataset(Schema schema, RasterStyle style, std::vector<VideoClip> clips, std::size_t min_frames);

  Schema schema() const { return schema_; }
  const RasterStyle& style() const { return style_; }
  const std::vector<VideoClip>& clips() const { return clips_; }
  std::size_t size() const { return clips_.size(); }
  bool empty() const { return clips_.empty(); }
  const GeometryRef& reference(std::size_t clip) const { return references_.at(clip); }

 private:
  Schema schema_;
  RasterStyle style_;
  std::vector<VideoClip> clips_;
  std::vector<GeometryRef> references_;
};

struct Manifest {
  struct Entry {
    std::string clip_id;
    std::string subject_id;
  };
  Schema schema = Schema::kFace68;
  std::vector<Entry> clips;
};

/// `<root>/manifest.json`: {"schema": "face68", "clips": [{"clip_id": .., "subject_id": ..}]}.
Manifest read_manifest(const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& root, const Manifest& manifest);

Dataset load_dataset(const std::filesystem::path& root, std::optional<Schema> schema,
                     const RasterStyle& style, std::optional<std::pair<int, int>> size,
                     std::size_t min_frames);

struct TrainingSample {
  std::size_t clip_index = 0;
  std::string subject_id;
  std::vector<std::size_t> subject_indices;
  std::size_t driving_index = 0;

  std::vector<torch::Tensor> subject_frames;
  std::vector<MaskFrame> subject_masks;
  MaskFrame driving_mask;
  torch::Tensor target_frame;
  /// Mask the discriminator pairs with the real frame. Equals driving_mask except in
  /// cross-identity samples, where driving_mask is normalized onto the subject.
  MaskFrame target_mask;
};

/// Draws K subject frames and one disjoint driving frame from each listed clip.
/// Clips with fewer than K + 1 frames are skipped with a warning.
std::vector<TrainingSample> sample_training_batch(const Dataset& dataset, int K,
                                                  std::span<const std::size_t> clip_indices,
                                                  std::uint64_t seed);

/// Same, with `batch_size` clips drawn uniformly (with replacement) under `seed`.
std::vector<TrainingSample> sample_training_batch(const Dataset& dataset, int K,
                                                  std::size_t batch_size, std::uint64_t seed);

/// Subject frames from one clip and a driving mask from a clip of a different subject,
/// normalized onto the subject's geometry. target_frame is the driving clip's real frame.
std::vector<TrainingSample> sample_cross_identity_batch(const Dataset& dataset, int K,
                                                        std::size_t batch_size,
                                                        std::uint64_t seed);

struct AugmentParams {
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

struct AugmentStrength {
  double flip_probability = 0.5;
  double brightness = 0.1;
  double contrast = 0.1;
  double saturation = 0.1;
};

AugmentParams sample_augment(const AugmentStrength& strength, std::uint64_t seed);

/// Horizontal flip applies to frame and keypoints (with left/right index swap); colour
/// jitter touches the frame only. The mask is re-rasterized from the moved keypoints.
std::pair<torch::Tensor, MaskFrame> augment(const torch::Tensor& frame, const MaskFrame& mask,
                                            const AugmentParams& params, const RasterStyle& style);

KeypointSet flip_keypoints(const KeypointSet& kps, int width);
torch::Tensor jitter_colour(const torch::Tensor& frame, const AugmentParams& params);

/// Applies one parameter set to every frame and mask of a sample.
TrainingSample augment_sample(const TrainingSample& sample, const AugmentParams& params,
                              const RasterStyle& style);

torch::Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const torch::Tensor& image);

/// splitmix64; derives independent per-call seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace tsnet::dataio
