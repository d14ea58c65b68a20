#include "tsnet/networks.hpp"

#include <sstream>

#include "tsnet/errors.hpp"

namespace tsnet::nets {
namespace {

namespace nn = torch::nn;

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding, bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true));
}

torch::Tensor with_coordinates(const torch::Tensor& x) {
  const auto n = x.size(0);
  const auto h = x.size(2);
  const auto w = x.size(3);
  auto grid = geometry::regular_grid(h, w, x.options()).coords.permute({2, 0, 1});
  return torch::cat({x, grid.unsqueeze(0).expand({n, 2, h, w})}, 1);
}

}  // namespace

std::string to_string(BranchMode mode) {
  switch (mode) {
    case BranchMode::kDual:
      return "dual";
    case BranchMode::kTransformOnly:
      return "transform_only";
    case BranchMode::kSynthOnly:
      return "synth_only";
  }
  return "dual";
}

std::string to_string(CombineMode mode) {
  return mode == CombineMode::kConcat ? "concat" : "matting";
}

BranchMode branch_mode_from_string(const std::string& name) {
  if (name == "dual") return BranchMode::kDual;
  if (name == "transform_only" || name == "t-net") return BranchMode::kTransformOnly;
  if (name == "synth_only" || name == "s-net") return BranchMode::kSynthOnly;
  throw ConfigError("unknown branch mode '" + name + "'");
}

CombineMode combine_mode_from_string(const std::string& name) {
  if (name == "concat") return CombineMode::kConcat;
  if (name == "matting") return CombineMode::kMatting;
  throw ConfigError("unknown combine mode '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (base_channels < 8 || base_channels % 8 != 0) {
    throw ConfigError("base_channels must be a positive multiple of 8");
  }
  if (image_height <= 0 || image_width <= 0 || image_height % geometry::kFeatureStride != 0 ||
      image_width % geometry::kFeatureStride != 0) {
    std::ostringstream msg;
    msg << "image size " << image_height << "x" << image_width << " is not divisible by "
        << geometry::kFeatureStride;
    throw ConfigError(msg.str());
  }
  if (mask_channels < 1) throw ConfigError("mask_channels must be positive");
  if (encoder_residual_blocks < 0 || decoder_residual_blocks < 0) {
    throw ConfigError("residual block counts must be non-negative");
  }
  grid.validate();
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1 || stride2_layers < 1 || input_channels < 1) {
    throw ConfigError("invalid discriminator configuration");
  }
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  return {{"K", cfg.K},
          {"base_channels", cfg.base_channels},
          {"branch_mode", to_string(cfg.branch_mode)},
          {"combine_mode", to_string(cfg.combine_mode)},
          {"use_coord_conv", cfg.use_coord_conv},
          {"image_height", cfg.image_height},
          {"image_width", cfg.image_width},
          {"mask_channels", cfg.mask_channels},
          {"encoder_residual_blocks", cfg.encoder_residual_blocks},
          {"decoder_residual_blocks", cfg.decoder_residual_blocks},
          {"tau", cfg.grid.tau}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& doc) {
  GeneratorConfig cfg;
  cfg.K = doc.value("K", cfg.K);
  cfg.base_channels = doc.value("base_channels", cfg.base_channels);
  cfg.branch_mode = branch_mode_from_string(doc.value("branch_mode", to_string(cfg.branch_mode)));
  cfg.combine_mode = combine_mode_from_string(doc.value("combine_mode", to_string(cfg.combine_mode)));
  cfg.use_coord_conv = doc.value("use_coord_conv", cfg.use_coord_conv);
  cfg.image_height = doc.value("image_height", cfg.image_height);
  cfg.image_width = doc.value("image_width", cfg.image_width);
  cfg.mask_channels = doc.value("mask_channels", cfg.mask_channels);
  cfg.encoder_residual_blocks = doc.value("encoder_residual_blocks", cfg.encoder_residual_blocks);
  cfg.decoder_residual_blocks = doc.value("decoder_residual_blocks", cfg.decoder_residual_blocks);
  cfg.grid.tau = doc.value("tau", cfg.grid.tau);
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const DiscriminatorConfig& cfg) {
  return {{"base_channels", cfg.base_channels},
          {"stride2_layers", cfg.stride2_layers},
          {"input_channels", cfg.input_channels}};
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& doc) {
  DiscriminatorConfig cfg;
  cfg.base_channels = doc.value("base_channels", cfg.base_channels);
  cfg.stride2_layers = doc.value("stride2_layers", cfg.stride2_layers);
  cfg.input_channels = doc.value("input_channels", cfg.input_channels);
  cfg.validate();
  return cfg;
}

ConvBlockImpl::ConvBlockImpl(int in, int out, int kernel, int stride) {
  conv = register_module("conv", nets::conv(in, out, kernel, stride, kernel / 2));
  norm = register_module("norm", instance_norm(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(norm(conv(x)));
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1 = register_module("conv1", conv(channels, channels, 3, 1, 1));
  norm1 = register_module("norm1", instance_norm(channels));
  conv2 = register_module("conv2", conv(channels, channels, 3, 1, 1));
  norm2 = register_module("norm2", instance_norm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1(conv1(x)));
  return x + norm2(conv2(y));
}

EncoderImpl::EncoderImpl(int in_channels, int base_channels, int residual_blocks, bool coord_conv_)
    : coord_conv(coord_conv_) {
  nn::Sequential seq;
  int in = in_channels + (coord_conv ? 2 : 0);
  for (int stage = 0; stage < 3; ++stage) {
    const int out = base_channels << stage;
    seq->push_back(ConvBlock(in, out, 3, 2));
    in = out;
  }
  for (int i = 0; i < residual_blocks; ++i) seq->push_back(ResidualBlock(in));
  body = register_module("body", seq);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  if (x.size(2) % geometry::kFeatureStride != 0 || x.size(3) % geometry::kFeatureStride != 0) {
    throw ShapeError("encoder input size must be divisible by 8");
  }
  return body->forward(coord_conv ? with_coordinates(x) : x);
}

FusionImpl::FusionImpl(int channels, int out_channels) {
  block = register_module("block", ResidualBlock(2 * channels));
  project = register_module("project", conv(2 * channels, out_channels, 1, 1, 0));
}

torch::Tensor FusionImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("fusion inputs differ in shape");
  return project(block(torch::cat({a, b}, 1)));
}

DecoderImpl::DecoderImpl(int in_channels, int channels, int residual_blocks) {
  nn::Sequential seq;
  seq->push_back(ConvBlock(in_channels, channels, 3, 1));
  for (int i = 0; i < residual_blocks; ++i) seq->push_back(ResidualBlock(channels));
  int in = channels;
  for (int stage = 0; stage < 3; ++stage) {
    seq->push_back(nn::Upsample(
        nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    if (stage < 2) {
      seq->push_back(ConvBlock(in, in / 2, 3, 1));
      in /= 2;
    } else {
      seq->push_back(conv(in, 3, 3, 1, 1));
    }
  }
  body = register_module("body", seq);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& x) {
  return (torch::tanh(body->forward(x)) + 1.0) * 0.5;
}

torch::Tensor matting_blend(const torch::Tensor& transformed, const torch::Tensor& synthesized,
                            const torch::Tensor& alpha) {
  return alpha * transformed + (1.0 - alpha) * synthesized;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : cfg(config) {
  cfg.validate();
  const int c = cfg.feature_channels();
  image_encoder = register_module(
      "image_encoder",
      Encoder(3 + cfg.mask_channels, cfg.base_channels, cfg.encoder_residual_blocks, cfg.use_coord_conv));
  mask_encoder = register_module(
      "mask_encoder", Encoder(cfg.mask_channels, cfg.base_channels, 0, cfg.use_coord_conv));
  fusion = register_module("fusion", Fusion(c, c));
  attention = register_module("attention", Fusion(c, 1));
  decoder = register_module("decoder", Decoder(2 * c, c, cfg.decoder_residual_blocks));
}

torch::Tensor GeneratorImpl::encode_image(const torch::Tensor& frames, const torch::Tensor& masks) {
  return image_encoder(torch::cat({frames, masks}, 1));
}

torch::Tensor GeneratorImpl::encode_mask(const torch::Tensor& masks) { return mask_encoder(masks); }

torch::Tensor GeneratorImpl::fuse(const torch::Tensor& subject_features,
                                  const torch::Tensor& driving_features) {
  return fusion(subject_features, driving_features);
}

torch::Tensor GeneratorImpl::decoder_input(const torch::Tensor& transformed,
                                           const torch::Tensor& synthesized, torch::Tensor* alpha_out) {
  // Single-branch variants duplicate their feature so one decoder serves every mode.
  switch (cfg.branch_mode) {
    case BranchMode::kTransformOnly:
      return torch::cat({transformed, transformed}, 1);
    case BranchMode::kSynthOnly:
      return torch::cat({synthesized, synthesized}, 1);
    case BranchMode::kDual:
      break;
  }
  if (transformed.sizes() != synthesized.sizes()) throw ShapeError("branch features differ in shape");
  if (cfg.combine_mode == CombineMode::kConcat) return torch::cat({transformed, synthesized}, 1);
  auto alpha = torch::sigmoid(attention(transformed, synthesized));
  if (alpha_out) *alpha_out = alpha;
  auto blended = matting_blend(transformed, synthesized, alpha);
  return torch::cat({blended, blended}, 1);
}

torch::Tensor GeneratorImpl::combine_and_decode(const torch::Tensor& transformed,
                                                const torch::Tensor& synthesized,
                                                torch::Tensor* alpha_out) {
  return decoder(decoder_input(transformed, synthesized, alpha_out));
}

GeneratorOutput GeneratorImpl::forward(const GeneratorInput& input) {
  const auto& frames = input.subject_frames;
  if (frames.dim() != 5 || input.subject_masks.dim() != 5 || input.driving_mask.dim() != 4) {
    throw ShapeError("generator expects [B, K, C, H, W] subject tensors and a [B, C, H, W] mask");
  }
  const int64_t batch = frames.size(0);
  const int64_t k_count = frames.size(1);
  const int64_t h = frames.size(3);
  const int64_t w = frames.size(4);
  if (h != cfg.image_height || w != cfg.image_width) {
    std::ostringstream msg;
    msg << "generator configured for " << cfg.image_height << "x" << cfg.image_width << ", got " << h
        << "x" << w;
    throw ShapeError(msg.str());
  }
  if (static_cast<int64_t>(input.subject_boxes.size()) != batch ||
      static_cast<int64_t>(input.driving_boxes.size()) != batch) {
    throw ShapeError("one box list per batch element is required");
  }

  auto flat_frames = frames.reshape({batch * k_count, 3, h, w});
  auto flat_masks = input.subject_masks.reshape({batch * k_count, -1, h, w});
  auto e = encode_image(flat_frames, flat_masks);  // [B*K, C, h/8, w/8]
  auto f = encode_mask(input.driving_mask);        // [B, C, h/8, w/8]
  const int64_t c = e.size(1);
  const int64_t hf = e.size(2);
  const int64_t wf = e.size(3);

  GeneratorOutput out;
  if (cfg.branch_mode != BranchMode::kSynthOnly) {
    const auto regular = geometry::regular_grid(hf, wf, e.options());
    std::vector<torch::Tensor> warped_features, warped_frames, grids;
    for (int64_t b = 0; b < batch; ++b) {
      const auto driving_box =
          input.driving_boxes[b].downsample(geometry::kFeatureStride, static_cast<int>(wf), static_cast<int>(hf));
      for (int64_t k = 0; k < k_count; ++k) {
        const auto subject_box = input.subject_boxes[b].at(k).downsample(
            geometry::kFeatureStride, static_cast<int>(wf), static_cast<int>(hf));
        auto ek = e[b * k_count + k];
        auto sim = geometry::mask_aware_similarity(ek, f[b], subject_box, driving_box);
        out.computed_entries += sim.computed_entries;
        out.full_entries += sim.values.numel();
        auto grid = geometry::weighted_grid(sim, regular, cfg.grid);
        warped_features.push_back(geometry::warp_features(ek, grid));
        warped_frames.push_back(geometry::warp_image_patchwise(frames[b][k], grid));
        grids.push_back(grid.coords);
      }
    }
    out.warped_features = torch::stack(warped_features).reshape({batch, k_count, c, hf, wf}).mean(1);
    out.warped_frames = torch::stack(warped_frames).reshape({batch, k_count, 3, h, w});
    out.grids = torch::stack(grids).reshape({batch, k_count, hf, wf, 2});
  }
  if (cfg.branch_mode != BranchMode::kTransformOnly) {
    auto f_rep = f.repeat_interleave(k_count, 0);
    out.synth_features = fuse(e, f_rep).reshape({batch, k_count, c, hf, wf}).mean(1);
  }
  out.frame = combine_and_decode(out.warped_features, out.synth_features, &out.alpha);
  return out;
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : cfg(config) {
  cfg.validate();
  int in = cfg.input_channels;
  int out = cfg.base_channels;
  for (int i = 0; i <= cfg.stride2_layers; ++i) {
    const int stride = i < cfg.stride2_layers ? 2 : 1;
    nn::Sequential layer;
    layer->push_back(conv(in, out, 4, stride, 1));
    if (i > 0) layer->push_back(instance_norm(out));
    layer->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    layers.push_back(register_module("layer" + std::to_string(i), layer));
    in = out;
    out = std::min(out * 2, cfg.base_channels * 8);
  }
  head = register_module("head", conv(in, 1, 4, 1, 1));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& frame, const torch::Tensor& mask) {
  DiscriminatorOutput out;
  auto x = torch::cat({frame, mask}, 1);
  if (x.size(1) != cfg.input_channels) {
    throw ShapeError("discriminator expects " + std::to_string(cfg.input_channels) + " input channels");
  }
  for (auto& layer : layers) {
    x = layer->forward(x);
    out.features.push_back(x);
  }
  out.scores = head(x);
  return out;
}

torch::Tensor crop_boxes(const torch::Tensor& images, const std::vector<BoundingBox>& boxes, int size,
                         double margin) {
  if (images.dim() != 4 || images.size(0) != static_cast<int64_t>(boxes.size())) {
    throw ShapeError("crop_boxes expects one box per image");
  }
  const double h = static_cast<double>(images.size(2));
  const double w = static_cast<double>(images.size(3));
  std::vector<torch::Tensor> crops;
  auto unit = geometry::regular_grid(size, size, images.options()).coords;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& box = boxes[i];
    const auto center = box.center();
    const double side = std::max({box.width(), box.height(), 8.0}) * margin;
    // Pixel -> normalized: u = 2x / (W - 1) - 1.
    const double cu = 2.0 * center.x / (w - 1.0) - 1.0;
    const double cv = 2.0 * center.y / (h - 1.0) - 1.0;
    const double su = side / (w - 1.0);
    const double sv = side / (h - 1.0);
    auto coords = torch::stack({unit.select(2, 0) * su + cu, unit.select(2, 1) * sv + cv}, -1);
    crops.push_back(geometry::warp_features(images[static_cast<int64_t>(i)], {coords}));
  }
  return torch::stack(crops);
}

BoundingBox face_box(const KeypointSet& kps) {
  const auto [first, last] = face_point_range(kps.schema);
  KeypointSet face;
  face.schema = kps.schema;
  face.points = kps.points;
  face.visible.assign(kps.visible.size(), false);
  bool any = false;
  for (int i = first; i < last; ++i) {
    face.visible[i] = kps.visible[i];
    any = any || kps.visible[i];
  }
  return any ? face.bbox() : kps.bbox();
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

GeneratorInput make_generator_input(const std::vector<std::vector<torch::Tensor>>& subject_frames,
                                    const std::vector<std::vector<torch::Tensor>>& subject_masks,
                                    const std::vector<std::vector<BoundingBox>>& subject_boxes,
                                    const std::vector<torch::Tensor>& driving_masks,
                                    const std::vector<BoundingBox>& driving_boxes) {
  GeneratorInput in;
  std::vector<torch::Tensor> frames, masks;
  for (std::size_t b = 0; b < subject_frames.size(); ++b) {
    frames.push_back(torch::stack(subject_frames[b]));
    masks.push_back(torch::stack(subject_masks[b]));
  }
  in.subject_frames = torch::stack(frames);
  in.subject_masks = torch::stack(masks);
  in.subject_boxes = subject_boxes;
  in.driving_mask = torch::stack(driving_masks);
  in.driving_boxes = driving_boxes;
  return in;
}

}  // namespace tsnet::nets
