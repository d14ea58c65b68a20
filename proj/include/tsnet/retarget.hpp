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

namespace tsnet::retarget {

/// The K appearance frames of a job, chosen once and shared by every driving frame.
struct SubjectContext {
  std::vector<std::size_t> indices;
  std::vector<torch::Tensor> frames;
  std::vector<dataio::MaskFrame> masks;
};

/// Draws K distinct usable frames of `clip` under `seed`.
SubjectContext select_subject_frames(const dataio::VideoClip& clip, int K, std::uint64_t seed);

class FrameSynthesizer {
 public:
  virtual ~FrameSynthesizer() = default;
  /// One [3, H, W] frame for one driving mask. `driving_index` is the frame's position in
  /// the driving clip; real generators ignore it.
  virtual torch::Tensor synthesize(const SubjectContext& subject, const dataio::MaskFrame& driving,
                                   std::size_t driving_index) = 0;
};

class GeneratorSynthesizer final : public FrameSynthesizer {
 public:
  explicit GeneratorSynthesizer(nets::Generator generator);
  static std::unique_ptr<GeneratorSynthesizer> from_checkpoint(const std::filesystem::path& checkpoint);

  torch::Tensor synthesize(const SubjectContext& subject, const dataio::MaskFrame& driving,
                           std::size_t driving_index) override;

  const nets::GeneratorConfig& config() const { return generator_->config(); }

 private:
  nets::Generator generator_;
};

struct RetargetJob {
  dataio::VideoClip subject;
  /// Only the masks are read; the frames may be absent or arbitrary.
  dataio::VideoClip driving;
  int K = 3;
  std::uint64_t seed = 0;
  bool normalize = true;
  dataio::RasterStyle style;
};

struct RetargetResult {
  std::vector<std::size_t> subject_indices;
  std::vector<std::size_t> driving_indices;  // driving frames that produced an output
  std::vector<torch::Tensor> frames;
  std::vector<dataio::MaskFrame> driving_masks;  // as fed to the synthesizer
  std::size_t skipped = 0;
};

/// Generates one frame per annotated driving frame; unannotated frames are skipped and logged.
RetargetResult retarget(const RetargetJob& job, FrameSynthesizer& synthesizer);

/// Per frame: ||a - b||^2 / element count.
std::vector<double> l2_per_frame(const std::vector<torch::Tensor>& generated,
                                 const std::vector<torch::Tensor>& truth);
double l2_metric(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& truth);

/// LPIPS-style distance: channel-normalized features, squared differences weighted per
/// channel, spatial mean, summed over layers. Without calibration weights every channel
/// weighs 1 and the metric is reported as a proxy.
class PerceptualMetric {
 public:
  explicit PerceptualMetric(std::shared_ptr<const losses::FeatureExtractor> extractor,
                            std::vector<torch::Tensor> channel_weights = {});

  double distance(const torch::Tensor& a, const torch::Tensor& b) const;
  std::vector<double> per_frame(const std::vector<torch::Tensor>& generated,
                                const std::vector<torch::Tensor>& truth) const;
  double mean(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& truth) const;

  bool calibrated() const { return !weights_.empty(); }
  std::string provenance() const;

 private:
  std::shared_ptr<const losses::FeatureExtractor> extractor_;
  std::vector<torch::Tensor> weights_;
};

struct VideoReport {
  std::string video_id;
  std::string subject_clip;
  std::string driving_clip;
  std::vector<std::size_t> subject_indices;
  std::vector<std::size_t> driving_indices;
  std::size_t skipped = 0;
  /// Empty when there is no ground truth (cross-identity).
  std::vector<double> l2;
  std::vector<double> perceptual;

  // Images for strips and frame dumps; not serialized.
  torch::Tensor subject_frame;
  std::vector<torch::Tensor> generated;
  std::vector<torch::Tensor> driving_masks;

  std::optional<double> mean_l2() const;
  std::optional<double> mean_perceptual() const;
};

struct EvalReport {
  std::string mode;
  nlohmann::json config = nlohmann::json::object();
  std::string metric_provenance;
  bool metric_calibrated = false;
  std::vector<VideoReport> videos;

  std::size_t frame_count() const;
  /// Means over every scored frame of every video.
  std::optional<double> mean_l2() const;
  std::optional<double> mean_perceptual() const;
};

nlohmann::json to_json(const EvalReport& report);

struct EvalOptions {
  int K = 3;
  std::uint64_t seed = 0;
  dataio::RasterStyle style;
};

/// Each clip is split in two: the first half supplies appearance, the second half supplies
/// driving masks and ground truth.
EvalReport self_reconstruction_eval(const dataio::Dataset& dataset, FrameSynthesizer& synthesizer,
                                    const PerceptualMetric& metric, const EvalOptions& options);

/// Every clip is driven by the next clip (cyclically) of a different subject, with
/// normalization. No ground truth exists, so only frames are produced.
EvalReport cross_identity_eval(const dataio::Dataset& dataset, FrameSynthesizer& synthesizer,
                               const PerceptualMetric& metric, const EvalOptions& options);

/// report.json, per_frame.csv, frames/%06d.png and strips/%06d.png (subject | mask |
/// generated). Frames are numbered consecutively across videos; the CSV maps them back.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

/// Colour rendering of a [Cm, H, W] mask raster as [3, H, W].
torch::Tensor render_mask(const torch::Tensor& raster);

/// [3, H, 3W]: subject | rendered mask | generated.
torch::Tensor make_strip(const torch::Tensor& subject, const torch::Tensor& mask_raster,
                         const torch::Tensor& generated);

}  // namespace tsnet::retarget
