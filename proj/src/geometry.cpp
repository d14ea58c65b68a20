#include "tsnet/geometry.hpp"

#include <limits>
#include <sstream>

#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"

namespace tsnet::geometry {
namespace {

namespace idx = torch::indexing;

// Row-major [C, H, W] -> [H*W, C].
torch::Tensor positions(const torch::Tensor& map) {
  return map.reshape({map.size(0), -1}).t().contiguous();
}

// Entry (p, q) is the channel sum of a[p] * b[q]. Every entry goes through the same
// elementwise-product-then-reduce path regardless of which rows are requested, so a
// sub-block equals the corresponding entries of the full matrix bit for bit.
torch::Tensor pairwise_dot(const torch::Tensor& a, const torch::Tensor& b) {
  const int64_t rows = a.size(0);
  if (rows == 0 || b.size(0) == 0) return torch::zeros({rows, b.size(0)}, a.options());
  const int64_t per_row = std::max<int64_t>(1, b.size(0) * a.size(1));
  const int64_t chunk = std::max<int64_t>(1, (int64_t{1} << 22) / per_row);
  if (chunk >= rows) return (a.unsqueeze(1) * b.unsqueeze(0)).sum(-1);
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < rows; start += chunk) {
    auto slice = a.index({idx::Slice(start, std::min(rows, start + chunk))});
    parts.push_back((slice.unsqueeze(1) * b.unsqueeze(0)).sum(-1));
  }
  return torch::cat(parts, 0);
}

torch::Tensor cosine_block(const torch::Tensor& a, const torch::Tensor& a_norm,
                           const torch::Tensor& b, const torch::Tensor& b_norm) {
  return pairwise_dot(a, b) / (a_norm.unsqueeze(1) * b_norm.unsqueeze(0) + kCosineEpsilon);
}

void check_pair(const torch::Tensor& subject, const torch::Tensor& driving) {
  if (subject.dim() != 3 || driving.dim() != 3) {
    throw ShapeError("similarity expects [C, H, W] feature maps");
  }
  if (subject.sizes() != driving.sizes()) {
    std::ostringstream msg;
    msg << "feature maps differ in shape: " << subject.sizes() << " vs " << driving.sizes();
    throw ShapeError(msg.str());
  }
}

double snap_tolerance(torch::ScalarType type) {
  return type == torch::kFloat64 ? 1e-9 : 1e-4;
}

// Pixel coordinate from a normalized one. Values within rounding noise of an integer are
// moved onto it (forward only; the gradient is untouched) so that grids landing on pixel
// centers reproduce those pixels exactly.
torch::Tensor to_pixel(const torch::Tensor& u, int64_t size) {
  auto x = ((u + 1.0) * 0.5 * static_cast<double>(size - 1)).clamp(0.0, static_cast<double>(size - 1));
  auto delta = (x.round() - x).detach();
  delta = torch::where(delta.abs() < snap_tolerance(x.scalar_type()), delta, torch::zeros_like(delta));
  return x + delta;
}

}  // namespace

void GridConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("grid temperature tau must be positive");
}

SamplingGrid regular_grid(int64_t height, int64_t width, torch::TensorOptions options) {
  if (height < 1 || width < 1) throw ShapeError("regular grid needs positive dimensions");
  auto axis = [&](int64_t n) {
    if (n == 1) return torch::zeros({1}, options);
    return torch::arange(n, options) * (2.0 / static_cast<double>(n - 1)) - 1.0;
  };
  auto us = axis(width);
  auto vs = axis(height);
  auto coords = torch::stack({us.unsqueeze(0).expand({height, width}),
                              vs.unsqueeze(1).expand({height, width})},
                             -1);
  return {coords.contiguous()};
}

SimilarityMatrix cosine_similarity(const torch::Tensor& subject, const torch::Tensor& driving) {
  check_pair(subject, driving);
  auto a = positions(subject);
  auto b = positions(driving);
  SimilarityMatrix s;
  s.values = cosine_block(a, a.norm(2, 1), b, b.norm(2, 1));
  s.valid = torch::ones({a.size(0), b.size(0)}, torch::TensorOptions().dtype(torch::kBool));
  s.computed_entries = a.size(0) * b.size(0);
  return s;
}

torch::Tensor inside_mask(const BoundingBox& box, int64_t height, int64_t width) {
  auto cols = torch::arange(width, torch::kFloat64).unsqueeze(0).expand({height, width});
  auto rows = torch::arange(height, torch::kFloat64).unsqueeze(1).expand({height, width});
  auto inside = (cols >= box.x_min) & (cols <= box.x_max) & (rows >= box.y_min) & (rows <= box.y_max);
  return inside.reshape({-1});
}

SimilarityMatrix mask_aware_similarity(const torch::Tensor& subject, const torch::Tensor& driving,
                                       const BoundingBox& subject_box,
                                       const BoundingBox& driving_box) {
  check_pair(subject, driving);
  const int64_t h = subject.size(1);
  const int64_t w = subject.size(2);
  auto in_s = inside_mask(subject_box, h, w);
  auto in_d = inside_mask(driving_box, h, w);
  const int64_t n_in_s = in_s.sum().item<int64_t>();
  const int64_t n_in_d = in_d.sum().item<int64_t>();
  const int64_t n_out_s = h * w - n_in_s;
  const int64_t n_out_d = h * w - n_in_d;

  if (n_in_s == 0 || n_in_d == 0 || (n_out_s > 0 && n_out_d == 0)) {
    log::warning("mask-aware similarity: degenerate box partition, using full similarity");
    auto full = geometry::cosine_similarity(subject, driving);
    full.fell_back = true;
    return full;
  }

  auto a = positions(subject);
  auto b = positions(driving);
  auto a_norm = a.norm(2, 1);
  auto b_norm = b.norm(2, 1);

  SimilarityMatrix s;
  s.values = torch::zeros({h * w, h * w}, subject.options());
  auto fill = [&](const torch::Tensor& rows_sel, const torch::Tensor& cols_sel) {
    auto rows = rows_sel.nonzero().reshape({-1});
    auto cols = cols_sel.nonzero().reshape({-1});
    if (rows.numel() == 0 || cols.numel() == 0) return;
    auto block = cosine_block(a.index_select(0, rows), a_norm.index_select(0, rows),
                              b.index_select(0, cols), b_norm.index_select(0, cols));
    s.values = s.values.index_put({rows.unsqueeze(1), cols.unsqueeze(0)}, block);
    s.computed_entries += rows.numel() * cols.numel();
  };
  fill(in_s, in_d);
  fill(in_s.logical_not(), in_d.logical_not());
  s.valid = in_s.unsqueeze(1) == in_d.unsqueeze(0);
  return s;
}

SamplingGrid weighted_grid(const SimilarityMatrix& similarity, const SamplingGrid& grid,
                           const GridConfig& config) {
  config.validate();
  const auto& values = similarity.values;
  auto g = grid.flat().to(values.scalar_type());
  if (values.dim() != 2 || values.size(1) != g.size(0)) {
    throw ShapeError("similarity columns must match the number of grid positions");
  }
  // Rows belong to the subject map, which shares the grid's spatial size.
  if (values.size(0) != grid.height() * grid.width()) {
    throw ShapeError("similarity rows must match the number of grid positions");
  }
  if (similarity.valid.sizes() != values.sizes()) throw ShapeError("validity mask shape mismatch");
  if (!similarity.valid.any(1).all().item<bool>()) {
    throw ShapeError("similarity row without any valid entry");
  }

  auto logits = (values * config.tau)
                    .masked_fill(similarity.valid.logical_not(),
                                 -std::numeric_limits<double>::infinity());
  auto shifted = logits - std::get<0>(logits.max(1, true)).detach();
  auto weights = shifted.exp();
  weights = weights / weights.sum(1, true);
  auto out = weights.matmul(g);
  out = torch::max(torch::min(out, std::get<0>(g.max(0, true))), std::get<0>(g.min(0, true)));
  return {out.reshape({grid.height(), grid.width(), 2})};
}

torch::Tensor warp_features(const torch::Tensor& features, const SamplingGrid& grid) {
  if (features.dim() != 3) throw ShapeError("warp_features expects a [C, H, W] map");
  const int64_t c = features.size(0);
  const int64_t h = features.size(1);
  const int64_t w = features.size(2);
  auto coords = grid.coords.to(features.scalar_type());
  const int64_t gh = coords.size(0);
  const int64_t gw = coords.size(1);

  auto x = to_pixel(coords.select(2, 0), w);
  auto y = to_pixel(coords.select(2, 1), h);
  auto x0 = x.detach().floor().clamp(0.0, static_cast<double>(std::max<int64_t>(w - 2, 0)));
  auto y0 = y.detach().floor().clamp(0.0, static_cast<double>(std::max<int64_t>(h - 2, 0)));
  auto wx = (x - x0).reshape({1, -1});
  auto wy = (y - y0).reshape({1, -1});
  auto ix0 = x0.to(torch::kLong);
  auto iy0 = y0.to(torch::kLong);
  auto ix1 = (ix0 + 1).clamp_max(w - 1);
  auto iy1 = (iy0 + 1).clamp_max(h - 1);

  auto flat = features.reshape({c, h * w});
  auto gather = [&](const torch::Tensor& iy, const torch::Tensor& ix) {
    return flat.index_select(1, (iy * w + ix).reshape({-1}));
  };
  auto out = gather(iy0, ix0) * ((1.0 - wx) * (1.0 - wy)) + gather(iy0, ix1) * (wx * (1.0 - wy)) +
             gather(iy1, ix0) * ((1.0 - wx) * wy) + gather(iy1, ix1) * (wx * wy);
  return out.reshape({c, gh, gw});
}

SamplingGrid upsample_grid(const SamplingGrid& grid, int64_t height, int64_t width) {
  auto as_map = grid.coords.permute({2, 0, 1});
  auto target = regular_grid(height, width, grid.coords.options());
  return {warp_features(as_map, target).permute({1, 2, 0})};
}

torch::Tensor warp_image_patchwise(const torch::Tensor& image, const SamplingGrid& grid) {
  if (image.dim() != 3) throw ShapeError("warp_image_patchwise expects a [C, H, W] image");
  if (image.size(1) != kFeatureStride * grid.height() || image.size(2) != kFeatureStride * grid.width()) {
    std::ostringstream msg;
    msg << "image " << image.sizes() << " is not " << kFeatureStride << "x the grid "
        << grid.height() << "x" << grid.width();
    throw ShapeError(msg.str());
  }
  return warp_features(image, upsample_grid(grid, image.size(1), image.size(2)));
}

}  // namespace tsnet::geometry
