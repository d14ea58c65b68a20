#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "tsnet/keypoints.hpp"

// Correspondence and warping core of the transformation branch.
//
// Feature maps are [C, H, W] tensors. Spatial positions are flattened row-major, so
// position p = i * W + j. Coordinates live in the normalized square [-1, 1]^2 with
// align-corners semantics: -1 and +1 are the centers of the border pixels.
namespace tsnet::geometry {

constexpr double kCosineEpsilon = 1e-8;

/// Per-position (u, v) sampling coordinates, stored as [H, W, 2] with u horizontal.
struct SamplingGrid {
  torch::Tensor coords;

  int64_t height() const { return coords.size(0); }
  int64_t width() const { return coords.size(1); }
  /// [H*W, 2] view in position order.
  torch::Tensor flat() const { return coords.reshape({-1, 2}); }
};

/// Affinities between subject positions (rows) and driving positions (columns).
struct SimilarityMatrix {
  torch::Tensor values;  // [P, Q]; entries outside `valid` are 0 and never used
  torch::Tensor valid;   // [P, Q] bool
  /// Number of affinity entries that were actually evaluated.
  int64_t computed_entries = 0;
  /// True when a degenerate box partition forced the full computation.
  bool fell_back = false;
};

struct GridConfig {
  double tau = 100.0;

  void validate() const;
};

SamplingGrid regular_grid(int64_t height, int64_t width,
                          torch::TensorOptions options = torch::kFloat32);

/// S[p][q] = <a_p, b_q> / (|a_p| |b_q| + eps) for all pairs.
SimilarityMatrix cosine_similarity(const torch::Tensor& subject, const torch::Tensor& driving);

/// Evaluates only inside<->inside and outside<->outside pairs of the two boxes, which are
/// given in feature-cell units (see BoundingBox::downsample). Falls back to the full
/// matrix, with a warning, when a partition would leave some subject row without a
/// candidate.
SimilarityMatrix mask_aware_similarity(const torch::Tensor& subject, const torch::Tensor& driving,
                                       const BoundingBox& subject_box,
                                       const BoundingBox& driving_box);

/// [H*W] bool mask of positions inside a cell-unit box.
torch::Tensor inside_mask(const BoundingBox& box, int64_t height, int64_t width);

/// G'[p] = sum_q softmax_q(tau * S[p][q]) G[q], softmax over valid entries only.
SamplingGrid weighted_grid(const SimilarityMatrix& similarity, const SamplingGrid& grid,
                           const GridConfig& config);

/// Bilinear sampling of a [C, H, W] map at grid coordinates -> [C, Hg, Wg].
/// Out-of-range coordinates are clamped to the border.
torch::Tensor warp_features(const torch::Tensor& features, const SamplingGrid& grid);

/// Upsamples a feature-resolution grid to the image resolution (bilinear, in normalized
/// coordinates) and samples the image with it. The image must be exactly 8x the grid.
torch::Tensor warp_image_patchwise(const torch::Tensor& image, const SamplingGrid& grid);

/// Grid of an exact resolution obtained by bilinearly upsampling `grid`.
SamplingGrid upsample_grid(const SamplingGrid& grid, int64_t height, int64_t width);

constexpr int kFeatureStride = 8;

}  // namespace tsnet::geometry
