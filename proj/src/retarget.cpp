#include "tsnet/retarget.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"
#include "tsnet/trainer.hpp"

namespace tsnet::retarget {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

dataio::VideoClip subclip(const dataio::VideoClip& clip, std::span<const std::size_t> indices,
                          const std::string& suffix) {
  dataio::VideoClip out;
  out.clip_id = clip.clip_id + suffix;
  out.subject_id = clip.subject_id;
  for (auto i : indices) {
    out.frames.push_back(clip.frames[i]);
    out.masks.push_back(clip.masks[i]);
  }
  return out;
}

void check_pair(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& truth) {
  if (generated.size() != truth.size()) {
    throw ShapeError("metric inputs differ in length: " + std::to_string(generated.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (generated[i].sizes() != truth[i].sizes()) throw ShapeError("metric frames differ in shape");
  }
}

VideoReport run_video(const std::string& id, const RetargetJob& job, const RetargetResult& result) {
  VideoReport v;
  v.video_id = id;
  v.subject_clip = job.subject.clip_id;
  v.driving_clip = job.driving.clip_id;
  v.subject_indices = result.subject_indices;
  v.driving_indices = result.driving_indices;
  v.skipped = result.skipped;
  v.subject_frame = job.subject.frames[result.subject_indices.front()];
  v.generated = result.frames;
  for (const auto& m : result.driving_masks) v.driving_masks.push_back(m.raster);
  return v;
}

json eval_config(const EvalOptions& options) {
  return {{"K", options.K},
          {"seed", options.seed},
          {"raster_radius", options.style.radius_at_256},
          {"multi_channel_masks", options.style.multi_channel}};
}

}  // namespace

SubjectContext select_subject_frames(const dataio::VideoClip& clip, int K, std::uint64_t seed) {
  const auto usable = clip.usable_indices();
  if (K < 1) throw ConfigError("K must be at least 1");
  if (usable.size() < static_cast<std::size_t>(K)) {
    throw DatasetError("subject clip '" + clip.clip_id + "' has " + std::to_string(usable.size()) +
                       " annotated frames, fewer than K = " + std::to_string(K));
  }
  std::mt19937_64 rng(dataio::mix_seed(seed, 0));
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(K); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  SubjectContext ctx;
  for (int k = 0; k < K; ++k) {
    const auto idx = usable[order[k]];
    ctx.indices.push_back(idx);
    ctx.frames.push_back(clip.frames[idx]);
    ctx.masks.push_back(*clip.masks[idx]);
  }
  return ctx;
}

GeneratorSynthesizer::GeneratorSynthesizer(nets::Generator generator) : generator_(std::move(generator)) {
  generator_->eval();
}

std::unique_ptr<GeneratorSynthesizer> GeneratorSynthesizer::from_checkpoint(const fs::path& checkpoint) {
  return std::make_unique<GeneratorSynthesizer>(train::load_generator(checkpoint));
}

torch::Tensor GeneratorSynthesizer::synthesize(const SubjectContext& subject, const dataio::MaskFrame& driving,
                                               std::size_t) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> masks;
  std::vector<BoundingBox> boxes;
  for (const auto& m : subject.masks) {
    masks.push_back(m.raster);
    boxes.push_back(m.bbox);
  }
  const auto input = nets::make_generator_input({subject.frames}, {masks}, {boxes}, {driving.raster}, {driving.bbox});
  return generator_->forward(input).frame[0];
}

RetargetResult retarget(const RetargetJob& job, FrameSynthesizer& synthesizer) {
  const auto& subject = job.subject;
  if (subject.frames.empty()) throw DatasetError("subject clip '" + subject.clip_id + "' has no frames");
  const auto subject_kps = subject.usable_keypoints();
  const auto driving_kps = job.driving.usable_keypoints();
  if (!subject_kps.empty() && !driving_kps.empty() && subject_kps.front().schema != driving_kps.front().schema) {
    throw ConfigError("subject and driving clips use different keypoint schemas");
  }
  const int height = subject.height();
  const int width = subject.width();

  RetargetResult result;
  const auto ctx = select_subject_frames(subject, job.K, job.seed);
  result.subject_indices = ctx.indices;

  std::optional<dataio::GeometryRef> subject_ref, driving_ref;
  if (job.normalize && !driving_kps.empty()) {
    subject_ref = dataio::reference_geometry(subject_kps);
    driving_ref = dataio::reference_geometry(driving_kps);
  }

  for (std::size_t i = 0; i < job.driving.masks.size(); ++i) {
    const auto& source = job.driving.masks[i];
    if (!source) {
      log::warning("driving frame " + std::to_string(i) + " of '" + job.driving.clip_id +
                   "' has no keypoints; skipped");
      ++result.skipped;
      continue;
    }
    auto kps = source->keypoints;
    if (subject_ref) kps = dataio::normalize_driving_mask(kps, *subject_ref, *driving_ref);
    kps.clamp_to(width, height);
    auto mask = dataio::rasterize_mask(kps, height, width, job.style);
    result.frames.push_back(synthesizer.synthesize(ctx, mask, i));
    result.driving_indices.push_back(i);
    result.driving_masks.push_back(std::move(mask));
  }
  return result;
}

std::vector<double> l2_per_frame(const std::vector<torch::Tensor>& generated,
                                 const std::vector<torch::Tensor>& truth) {
  check_pair(generated, truth);
  std::vector<double> out;
  out.reserve(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto diff = generated[i].to(torch::kFloat64) - truth[i].to(torch::kFloat64);
    out.push_back(diff.pow(2).sum().item<double>() / static_cast<double>(diff.numel()));
  }
  return out;
}

double l2_metric(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& truth) {
  const auto values = l2_per_frame(generated, truth);
  if (values.empty()) throw ShapeError("l2_metric needs at least one frame");
  return *mean_of(values);
}

PerceptualMetric::PerceptualMetric(std::shared_ptr<const losses::FeatureExtractor> extractor,
                                   std::vector<torch::Tensor> channel_weights)
    : extractor_(std::move(extractor)), weights_(std::move(channel_weights)) {
  if (!extractor_) throw ConfigError("perceptual metric needs a feature extractor");
  for (auto& w : weights_) {
    if ((w < 0).any().item<bool>()) throw ConfigError("perceptual calibration weights must be non-negative");
  }
}

double PerceptualMetric::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  if (a.sizes() != b.sizes()) throw ShapeError("perceptual metric frames differ in shape");
  torch::NoGradGuard no_grad;
  const auto fa = extractor_->extract(a.unsqueeze(0));
  const auto fb = extractor_->extract(b.unsqueeze(0));
  if (!weights_.empty() && weights_.size() != fa.size()) {
    throw ConfigError("perceptual calibration has " + std::to_string(weights_.size()) + " layers, extractor " +
                      std::to_string(fa.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    auto unit = [](const torch::Tensor& f) {
      return f / (f.pow(2).sum(1, true).sqrt() + 1e-10);
    };
    auto d = (unit(fa[i]) - unit(fb[i])).pow(2);
    if (!weights_.empty()) d = d * weights_[i].view({1, -1, 1, 1});
    total += d.sum(1).mean().item<double>();
  }
  return total;
}

std::vector<double> PerceptualMetric::per_frame(const std::vector<torch::Tensor>& generated,
                                                const std::vector<torch::Tensor>& truth) const {
  check_pair(generated, truth);
  std::vector<double> out;
  for (std::size_t i = 0; i < generated.size(); ++i) out.push_back(distance(generated[i], truth[i]));
  return out;
}

double PerceptualMetric::mean(const std::vector<torch::Tensor>& generated,
                              const std::vector<torch::Tensor>& truth) const {
  const auto values = per_frame(generated, truth);
  if (values.empty()) throw ShapeError("perceptual metric needs at least one frame");
  return *mean_of(values);
}

std::string PerceptualMetric::provenance() const {
  return (calibrated() ? "calibrated:" : "proxy:") + extractor_->provenance();
}

std::optional<double> VideoReport::mean_l2() const { return mean_of(l2); }
std::optional<double> VideoReport::mean_perceptual() const { return mean_of(perceptual); }

std::size_t EvalReport::frame_count() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.driving_indices.size();
  return n;
}

std::optional<double> EvalReport::mean_l2() const {
  std::vector<double> all;
  for (const auto& v : videos) all.insert(all.end(), v.l2.begin(), v.l2.end());
  return mean_of(all);
}

std::optional<double> EvalReport::mean_perceptual() const {
  std::vector<double> all;
  for (const auto& v : videos) all.insert(all.end(), v.perceptual.begin(), v.perceptual.end());
  return mean_of(all);
}

json to_json(const EvalReport& report) {
  json videos = json::array();
  for (const auto& v : report.videos) {
    videos.push_back({{"video_id", v.video_id},
                      {"subject_clip", v.subject_clip},
                      {"driving_clip", v.driving_clip},
                      {"subject_indices", v.subject_indices},
                      {"driving_indices", v.driving_indices},
                      {"skipped", v.skipped},
                      {"frames", v.driving_indices.size()},
                      {"mean_l2", optional_json(v.mean_l2())},
                      {"mean_perceptual", optional_json(v.mean_perceptual())}});
  }
  return {{"mode", report.mode},
          {"config", report.config},
          {"metric_provenance", report.metric_provenance},
          {"metric_calibrated", report.metric_calibrated},
          {"video_count", report.videos.size()},
          {"frame_count", report.frame_count()},
          {"mean_l2", optional_json(report.mean_l2())},
          {"mean_perceptual", optional_json(report.mean_perceptual())},
          {"videos", videos}};
}

EvalReport self_reconstruction_eval(const dataio::Dataset& dataset, FrameSynthesizer& synthesizer,
                                    const PerceptualMetric& metric, const EvalOptions& options) {
  EvalReport report;
  report.mode = "self";
  report.config = eval_config(options);
  report.metric_provenance = metric.provenance();
  report.metric_calibrated = metric.calibrated();
  for (std::size_t c = 0; c < dataset.size(); ++c) {
    const auto& clip = dataset.clips()[c];
    const auto usable = clip.usable_indices();
    const std::size_t half = usable.size() / 2;
    if (half < static_cast<std::size_t>(options.K) || usable.size() - half < 1) {
      log::warning("clip '" + clip.clip_id + "' is too short to split for K = " + std::to_string(options.K) +
                   "; skipped");
      continue;
    }
    const std::span<const std::size_t> all(usable);
    RetargetJob job;
    job.subject = subclip(clip, all.first(half), "#source");
    job.driving = subclip(clip, all.subspan(half), "#driving");
    job.K = options.K;
    job.seed = dataio::mix_seed(options.seed, c);
    job.normalize = false;
    job.style = options.style;
    const auto result = retarget(job, synthesizer);

    std::vector<torch::Tensor> truth;
    for (auto i : result.driving_indices) truth.push_back(job.driving.frames[i]);
    auto v = run_video(clip.clip_id, job, result);
    v.l2 = l2_per_frame(result.frames, truth);
    v.perceptual = metric.per_frame(result.frames, truth);
    report.videos.push_back(std::move(v));
  }
  return report;
}

EvalReport cross_identity_eval(const dataio::Dataset& dataset, FrameSynthesizer& synthesizer,
                               const PerceptualMetric& metric, const EvalOptions& options) {
  EvalReport report;
  report.mode = "cross";
  report.config = eval_config(options);
  report.metric_provenance = metric.provenance();
  report.metric_calibrated = metric.calibrated();
  const auto n = dataset.size();
  for (std::size_t a = 0; a < n; ++a) {
    const auto& subject = dataset.clips()[a];
    std::optional<std::size_t> partner;
    for (std::size_t step = 1; step < n && !partner; ++step) {
      const auto b = (a + step) % n;
      if (dataset.clips()[b].subject_id != subject.subject_id) partner = b;
    }
    if (!partner) {
      log::warning("no clip of another subject drives '" + subject.clip_id + "'; skipped");
      continue;
    }
    const auto& driving = dataset.clips()[*partner];
    RetargetJob job;
    job.subject = subject;
    job.driving = driving;
    job.K = options.K;
    job.seed = dataio::mix_seed(options.seed, a);
    job.normalize = true;
    job.style = options.style;
    const auto result = retarget(job, synthesizer);
    report.videos.push_back(run_video(subject.clip_id + "<-" + driving.clip_id, job, result));
  }
  return report;
}

torch::Tensor render_mask(const torch::Tensor& raster) {
  static const float palette[][3] = {{1.0f, 1.0f, 1.0f}, {1.0f, 0.3f, 0.3f}, {0.3f, 1.0f, 0.3f},
                                     {0.3f, 0.5f, 1.0f}, {1.0f, 1.0f, 0.3f}, {1.0f, 0.4f, 1.0f},
                                     {0.3f, 1.0f, 1.0f}, {1.0f, 0.6f, 0.2f}};
  const int64_t channels = raster.size(0);
  auto out = torch::zeros({3, raster.size(1), raster.size(2)}, torch::kFloat32);
  for (int64_t c = 0; c < channels; ++c) {
    const auto& colour = palette[c % 8];
    const auto colour_t = torch::tensor({colour[0], colour[1], colour[2]}).view({3, 1, 1});
    out = torch::maximum(out, raster[c].to(torch::kFloat32).unsqueeze(0) * colour_t);
  }
  return out;
}

torch::Tensor make_strip(const torch::Tensor& subject, const torch::Tensor& mask_raster,
                         const torch::Tensor& generated) {
  if (subject.sizes() != generated.sizes() || mask_raster.size(1) != subject.size(1) ||
      mask_raster.size(2) != subject.size(2)) {
    throw ShapeError("strip panels differ in size");
  }
  return torch::cat({subject.to(torch::kFloat32), render_mask(mask_raster), generated.to(torch::kFloat32)}, 2);
}

void emit_report(const EvalReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "report.json", std::ios::binary);
    out << to_json(report).dump(2) << '\n';
    if (!out) throw Error("cannot write " + (out_dir / "report.json").string());
  }
  std::ofstream csv(out_dir / "per_frame.csv", std::ios::binary);
  csv << "output_index,video_id,driving_index,l2,perceptual\n";
  bool any_frames = false;
  for (const auto& v : report.videos) any_frames = any_frames || !v.generated.empty();
  if (any_frames) {
    fs::create_directories(out_dir / "frames");
    fs::create_directories(out_dir / "strips");
  }
  std::size_t index = 0;
  for (const auto& v : report.videos) {
    for (std::size_t i = 0; i < v.driving_indices.size(); ++i, ++index) {
      csv << index << ',' << v.video_id << ',' << v.driving_indices[i] << ','
          << (i < v.l2.size() ? format_double(v.l2[i]) : "") << ','
          << (i < v.perceptual.size() ? format_double(v.perceptual[i]) : "") << '\n';
      if (i >= v.generated.size()) continue;
      char name[32];
      std::snprintf(name, sizeof(name), "%06zu.png", index);
      dataio::save_image(out_dir / "frames" / name, v.generated[i]);
      if (v.subject_frame.defined() && i < v.driving_masks.size()) {
        dataio::save_image(out_dir / "strips" / name, make_strip(v.subject_frame, v.driving_masks[i], v.generated[i]));
      }
    }
  }
  if (!csv) throw Error("cannot write " + (out_dir / "per_frame.csv").string());
}

}  // namespace tsnet::retarget
