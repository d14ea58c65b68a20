#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "tsnet/geometry.hpp"
#include "tsnet/keypoints.hpp"

namespace tsnet::nets {

enum class BranchMode { kDual, kTransformOnly, kSynthOnly };
enum class CombineMode { kConcat, kMatting };

std::string to_string(BranchMode mode);
std::string to_string(CombineMode mode);
BranchMode branch_mode_from_string(const std::string& name);
CombineMode combine_mode_from_string(const std::string& name);

struct GeneratorConfig {
  int K = 3;
  int base_channels = 64;
  BranchMode branch_mode = BranchMode::kDual;
  CombineMode combine_mode = CombineMode::kConcat;
  bool use_coord_conv = true;
  int image_height = 256;
  int image_width = 256;
  int mask_channels = 1;
  int encoder_residual_blocks = 9;
  int decoder_residual_blocks = 4;
  geometry::GridConfig grid;

  int feature_channels() const { return 4 * base_channels; }
  void validate() const;
};

struct DiscriminatorConfig {
  int base_channels = 64;
  /// Stride-2 layers; 3 gives the 70x70 receptive field and exposes 4 feature sets.
  int stride2_layers = 3;
  int input_channels = 4;

  int feature_layers() const { return stride2_layers + 1; }
  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& doc);

/// conv -> instance norm -> ReLU
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int in, int out, int kernel, int stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(ConvBlock);

struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Three stride-2 stages (base, 2*base, 4*base channels) followed by residual blocks.
/// Used with residual blocks for frames+masks and without for driving masks.
struct EncoderImpl : torch::nn::Module {
  EncoderImpl(int in_channels, int base_channels, int residual_blocks, bool coord_conv);
  torch::Tensor forward(const torch::Tensor& x);

  bool coord_conv;
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Encoder);

/// One residual block over the concatenated pair, then a 1x1 projection.
struct FusionImpl : torch::nn::Module {
  FusionImpl(int channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

  ResidualBlock block{nullptr};
  torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(Fusion);

/// 3x3 reduction, residual blocks, then three nearest-upsample + conv stages ending in RGB
/// through a tanh rescaled to [0, 1].
struct DecoderImpl : torch::nn::Module {
  DecoderImpl(int in_channels, int channels, int residual_blocks);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Decoder);

/// Matting blend in feature space: alpha * transformed + (1 - alpha) * synthesized.
torch::Tensor matting_blend(const torch::Tensor& transformed, const torch::Tensor& synthesized,
                            const torch::Tensor& alpha);

struct GeneratorInput {
  torch::Tensor subject_frames;  // [B, K, 3, H, W]
  torch::Tensor subject_masks;   // [B, K, Cm, H, W]
  std::vector<std::vector<BoundingBox>> subject_boxes;  // [B][K], pixel units
  torch::Tensor driving_mask;    // [B, Cm, H, W]
  std::vector<BoundingBox> driving_boxes;               // [B], pixel units
};

struct GeneratorOutput {
  torch::Tensor frame;            // [B, 3, H, W] in [0, 1]
  torch::Tensor warped_frames;    // [B, K, 3, H, W]; undefined without a transformation branch
  torch::Tensor grids;            // [B, K, H/8, W/8, 2]; undefined without a transformation branch
  torch::Tensor warped_features;  // [B, C, H/8, W/8] (mean over K)
  torch::Tensor synth_features;   // [B, C, H/8, W/8] (mean over K)
  torch::Tensor alpha;            // [B, 1, H/8, W/8] in matting mode
  int64_t computed_entries = 0;
  int64_t full_entries = 0;
};

struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(const GeneratorConfig& cfg);

  /// Subject embeddings e_k for [N, 3, H, W] frames and [N, Cm, H, W] masks.
  torch::Tensor encode_image(const torch::Tensor& frames, const torch::Tensor& masks);
  /// Driving embedding f for [N, Cm, H, W] masks.
  torch::Tensor encode_mask(const torch::Tensor& masks);
  torch::Tensor fuse(const torch::Tensor& subject_features, const torch::Tensor& driving_features);
  /// Decoder input for the configured branch and combine modes, then the decoded frame.
  torch::Tensor combine_and_decode(const torch::Tensor& transformed, const torch::Tensor& synthesized,
                                   torch::Tensor* alpha_out = nullptr);
  torch::Tensor decoder_input(const torch::Tensor& transformed, const torch::Tensor& synthesized,
                              torch::Tensor* alpha_out = nullptr);

  GeneratorOutput forward(const GeneratorInput& input);

  const GeneratorConfig& config() const { return cfg; }

  GeneratorConfig cfg;
  Encoder image_encoder{nullptr};
  Encoder mask_encoder{nullptr};
  Fusion fusion{nullptr};
  Fusion attention{nullptr};
  Decoder decoder{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
  torch::Tensor scores;                // [B, 1, h, w] patch scores
  std::vector<torch::Tensor> features; // intermediate activations, one per hidden layer
};

/// 70x70 PatchGAN conditioned on a mask by channel concatenation.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);

  DiscriminatorOutput forward(const torch::Tensor& frame, const torch::Tensor& mask);

  DiscriminatorConfig cfg;
  std::vector<torch::nn::Sequential> layers;
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Discriminator);

/// Square crop around each box (pixel units), resampled to size x size with the bilinear
/// warp so that gradients reach the frame.
torch::Tensor crop_boxes(const torch::Tensor& images, const std::vector<BoundingBox>& boxes, int size,
                         double margin = 1.3);

/// Bounding box of the face landmarks of a keypoint set (falls back to the full bbox).
BoundingBox face_box(const KeypointSet& kps);

int64_t parameter_count(const torch::nn::Module& module);

/// Builds batched generator inputs from per-sample tensors.
GeneratorInput make_generator_input(const std::vector<std::vector<torch::Tensor>>& subject_frames,
                                    const std::vector<std::vector<torch::Tensor>>& subject_masks,
                                    const std::vector<std::vector<BoundingBox>>& subject_boxes,
                                    const std::vector<torch::Tensor>& driving_masks,
                                    const std::vector<BoundingBox>& driving_boxes);

}  // namespace tsnet::nets
