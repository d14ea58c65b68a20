#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "tsnet/dataio.hpp"
#include "tsnet/losses.hpp"
#include "tsnet/networks.hpp"

namespace tsnet::train {

/// Every field defaults to the published training recipe where one exists.
struct TrainConfig {
  std::size_t batch_size = 20;
  int epochs = 600;
  double lr = 2e-4;
  int lr_constant_epochs = 275;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int K = 3;
  losses::LossWeights weights;
  nets::BranchMode branch_mode = nets::BranchMode::kDual;
  nets::CombineMode combine_mode = nets::CombineMode::kConcat;
  bool cross_identity = false;
  std::uint64_t seed = 0;
  int image_height = 256;
  int image_width = 256;
  /// In epochs; 0 disables periodic checkpoints (the final one is always written).
  int checkpoint_interval = 50;
  /// 0 means one pass over the clips: ceil(clips / batch_size).
  int steps_per_epoch = 0;

  int base_channels = 64;
  int encoder_residual_blocks = 9;
  int decoder_residual_blocks = 4;
  bool use_coord_conv = true;
  double tau = 100.0;
  int d_base_channels = 64;
  int d_stride2_layers = 3;
  bool face_discriminator = false;
  int face_crop_size = 64;

  std::uint64_t extractor_seed = 0;
  int extractor_width_divisor = 1;
  std::string extractor_weights;

  bool augment = true;
  dataio::AugmentStrength augment_strength;

  Schema schema = Schema::kFace68;
  double raster_radius = 3.0;
  bool multi_channel_masks = true;

  void validate() const;
  nets::GeneratorConfig generator_config() const;
  nets::DiscriminatorConfig discriminator_config() const;
  dataio::RasterStyle raster_style() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Reads a flat key/value object; keys not named in TrainConfig are rejected.
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Constant for epochs < lr_constant_epochs, then linear decay reaching 0 at `epochs`.
/// Defined on [0, epochs]; throws ConfigError outside.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct StepMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double d_loss = 0.0;
  double face_d_loss = 0.0;
  double gan = 0.0;
  double vgg = 0.0;
  double fm = 0.0;
  double tra = 0.0;
  double gdl = 0.0;
  double face_gan = 0.0;
  double face_fm = 0.0;
  double total = 0.0;
  /// Mean squared error of the generated frames against their targets (self mode).
  double l2 = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& doc);

/// Recombines logged components with the configured weights.
double recombine_total(const StepMetrics& m, const TrainConfig& cfg);

struct TrainState {
  nets::Generator generator{nullptr};
  nets::Discriminator discriminator{nullptr};
  nets::Discriminator face_discriminator{nullptr};
  std::unique_ptr<torch::optim::Adam> g_optimizer;
  std::unique_ptr<torch::optim::Adam> d_optimizer;
  std::int64_t step = 0;
  std::vector<StepMetrics> history;
};

/// Which halves of a training step to run; the scheduled loop always runs both.
enum class StepPart { kBoth, kDiscriminatorOnly, kGeneratorOnly };

constexpr const char* kCheckpointVersion = "tsnet-checkpoint/1";

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::shared_ptr<const dataio::Dataset> dataset);

  const TrainConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const losses::FeatureExtractor& extractor() const { return *extractor_; }

  int steps_per_epoch() const;
  std::int64_t total_steps() const { return static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch(); }

  /// The batch the schedule assigns to a global step (deterministic in seed and step).
  std::vector<dataio::TrainingSample> batch_for_step(std::int64_t step) const;

  /// One discriminator update followed by one generator update.
  StepMetrics train_step(const std::vector<dataio::TrainingSample>& batch, double lr,
                         StepPart part = StepPart::kBoth);

  /// Runs the scheduled step `state().step` and advances the counter.
  StepMetrics run_next_step();

  /// Runs up to `count` scheduled steps (bounded by total_steps()).
  std::vector<StepMetrics> run_steps(std::int64_t count);

  /// Full schedule from the current step. Writes metrics.jsonl, periodic checkpoints and
  /// final.pt under `out_dir`. Returns the final checkpoint path.
  std::filesystem::path train(const std::filesystem::path& out_dir);

  /// Atomic (temp file + rename).
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  /// Generator-side inputs of a batch.
  static nets::GeneratorInput generator_input(const std::vector<dataio::TrainingSample>& batch);

 private:
  void set_discriminators_trainable(bool trainable);

  TrainConfig cfg_;
  std::shared_ptr<const dataio::Dataset> dataset_;
  std::unique_ptr<losses::VggExtractor> extractor_;
  TrainState state_;
  mutable std::filesystem::path last_checkpoint_;
};

/// Reads the generator (and its configuration) from a trainer checkpoint.
nets::Generator load_generator(const std::filesystem::path& checkpoint);
TrainConfig load_checkpoint_config(const std::filesystem::path& checkpoint);

}  // namespace tsnet::train
