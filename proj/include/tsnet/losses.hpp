#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tsnet/networks.hpp"

namespace tsnet::losses {

struct LossWeights {
  double alpha = 10.0;   // perceptual
  double beta = 10.0;    // feature matching
  double lambda = 10.0;  // transformation
  double gdl = 0.0;      // gradient difference; 0 disables

  void validate() const;
};

/// Frozen multi-layer image features. Gradients reach the input, never the weights.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<torch::Tensor> extract(const torch::Tensor& images) const = 0;
  /// "pretrained", "random(seed=...)" or a test label; echoed into reports.
  virtual std::string provenance() const = 0;
};

/// VGG-19 topology up to relu5_1, reading relu1_1 .. relu5_1. `width_divisor` shrinks
/// every layer for desk-scale runs; only divisor 1 can load ImageNet weights.
class VggExtractor final : public FeatureExtractor {
 public:
  VggExtractor(std::uint64_t seed, int width_divisor = 1);

  /// Loads an archive whose keys match the conv layers ("conv1_1.weight", ...).
  void load_weights(const std::filesystem::path& path);

  std::vector<torch::Tensor> extract(const torch::Tensor& images) const override;
  std::string provenance() const override { return provenance_; }

  torch::nn::Module& module() { return *net_; }

 private:
  std::shared_ptr<torch::nn::Module> net_;
  std::vector<std::pair<std::string, torch::nn::Conv2d>> convs_;
  std::vector<int> taps_;  // index into convs_ after which a feature is read
  std::vector<int> pools_; // index into convs_ after which 2x2 max pooling follows
  std::string provenance_;
};

enum class Role { kGenerator, kDiscriminator };

torch::Tensor lsgan_discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_scores);

/// Least-squares adversarial loss with targets 1 (real) and 0 (fake), both conditioned on z.
torch::Tensor adversarial_loss(nets::Discriminator& d, const torch::Tensor& fake, const torch::Tensor& real,
                               const torch::Tensor& mask, Role role);

/// sum_i mean |F_i(fake) - F_i(real)|
torch::Tensor perceptual_loss(const FeatureExtractor& extractor, const torch::Tensor& fake,
                              const torch::Tensor& real);

/// sum_i mean |D_i(fake) - D_i(real)|; the real activations are treated as constants.
torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& fake_features,
                                    const std::vector<torch::Tensor>& real_features);
torch::Tensor feature_matching_loss(nets::Discriminator& d, const torch::Tensor& fake,
                                    const torch::Tensor& real, const torch::Tensor& mask);

/// sum over subject frames of the per-element mean |warped_k - target|.
torch::Tensor transformation_loss(const std::vector<torch::Tensor>& warped, const torch::Tensor& target);
/// Batched form: warped [B, K, C, H, W], target [B, C, H, W].
torch::Tensor transformation_loss(const torch::Tensor& warped, const torch::Tensor& target);

/// mean | |dx fake| - |dx real| | + mean | |dy fake| - |dy real| | with forward differences.
torch::Tensor gradient_difference_loss(const torch::Tensor& fake, const torch::Tensor& real);

/// Generator loss components; undefined tensors count as absent (zero).
struct LossParts {
  torch::Tensor gan;
  torch::Tensor vgg;
  torch::Tensor fm;
  torch::Tensor tra;
  torch::Tensor gdl;
  torch::Tensor face_gan;
  torch::Tensor face_fm;
};

/// gan + alpha vgg + beta fm + lambda tra (+ gdl weight * gdl). The face discriminator's
/// terms join the global ones with the same weights. With `adversarial_only` every term
/// except the adversarial ones is dropped. Throws NonFiniteLossError naming the bad part.
torch::Tensor total_generator_loss(const LossParts& parts, const LossWeights& weights,
                                   bool adversarial_only = false);

double value_or_zero(const torch::Tensor& t);

}  // namespace tsnet::losses
