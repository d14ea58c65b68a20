#include "tsnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"

namespace tsnet::dataio {
namespace {

namespace fs = std::filesystem;

double segment_distance(double px, double py, const Point2& a, const Point2& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - a.x) * dx + (py - a.y) * dy) / len2, 0.0, 1.0);
  const double ex = px - (a.x + t * dx);
  const double ey = py - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

void draw_segment(std::span<float> plane, int height, int width, const Point2& a,
                  const Point2& b, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius)));
  const double ramp = std::min(1.0, radius);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = segment_distance(x, y, a, b);
      const double v = std::clamp((radius - d) / ramp, 0.0, 1.0);
      float& dst = plane[static_cast<std::size_t>(y) * width + x];
      dst = std::max(dst, static_cast<float>(v));
    }
  }
}

template <typename T>
T median(std::vector<T> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MaskFrame rerasterize(const MaskFrame& mask, const KeypointSet& kps, const RasterStyle& style) {
  return rasterize_mask(kps, static_cast<int>(mask.raster.size(1)),
                        static_cast<int>(mask.raster.size(2)), style);
}

TrainingSample materialize(const Dataset& dataset, std::size_t clip_index,
                           std::vector<std::size_t> subject, std::size_t driving) {
  const auto& clip = dataset.clips()[clip_index];
  TrainingSample s;
  s.clip_index = clip_index;
  s.subject_id = clip.subject_id;
  s.subject_indices = std::move(subject);
  s.driving_index = driving;
  for (auto idx : s.subject_indices) {
    s.subject_frames.push_back(clip.frames[idx]);
    s.subject_masks.push_back(*clip.masks[idx]);
  }
  s.driving_mask = *clip.masks[driving];
  s.target_frame = clip.frames[driving];
  s.target_mask = s.driving_mask;
  return s;
}

// First k entries of a uniformly random permutation of [0, n).
std::vector<std::size_t> draw_distinct(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

double RasterStyle::radius_for(int height, int width) const {
  return std::max(1.0, radius_at_256 * std::min(height, width) / 256.0);
}

int mask_channels(Schema schema, const RasterStyle& style) {
  return style.multi_channel ? topology(schema).channels : 1;
}

MaskFrame rasterize_mask(const KeypointSet& kps, int height, int width, const RasterStyle& style) {
  kps.validate();
  if (height <= 0 || width <= 0) throw ShapeError("raster size must be positive");
  if (kps.visible_count() == 0) throw EmptyMaskError("cannot rasterize a mask without visible keypoints");

  const auto& topo = topology(kps.schema);
  const int channels = mask_channels(kps.schema, style);
  const double radius = style.radius_for(height, width);
  const std::size_t plane_size = static_cast<std::size_t>(height) * width;
  std::vector<float> buffer(plane_size * channels, 0.0f);

  auto plane_of = [&](int channel) {
    return style.multi_channel ? static_cast<std::size_t>(channel) : std::size_t{0};
  };
  auto draw = [&](std::size_t plane, const Point2& a, const Point2& b) {
    draw_segment(std::span<float>(buffer).subspan(plane * plane_size, plane_size), height, width,
                 a, b, radius);
  };

  for (const auto& seg : topo.segments) {
    if (!kps.visible[seg.a] || !kps.visible[seg.b]) continue;
    draw(plane_of(seg.channel), kps.points[seg.a], kps.points[seg.b]);
  }
  for (std::size_t i = 0; i < kps.points.size(); ++i) {
    if (!kps.visible[i]) continue;
    draw(plane_of(topo.point_channel[i]), kps.points[i], kps.points[i]);
  }

  MaskFrame mask;
  mask.raster = torch::from_blob(buffer.data(), {channels, height, width}, torch::kFloat32).clone();
  mask.keypoints = kps;
  mask.bbox = kps.bbox();
  return mask;
}

GeometryRef reference_geometry(const KeypointSet& kps) {
  const auto box = kps.bbox();
  return {box.center(), box.height()};
}

GeometryRef reference_geometry(std::span<const KeypointSet> frames) {
  std::vector<double> cx, cy, h;
  for (const auto& kps : frames) {
    if (kps.visible_count() == 0) continue;
    const auto box = kps.bbox();
    cx.push_back(box.center().x);
    cy.push_back(box.center().y);
    h.push_back(box.height());
  }
  if (h.empty()) throw NormalizationError("no frame with visible keypoints to build a reference");
  return {{median(cx), median(cy)}, median(h)};
}

KeypointSet normalize_driving_mask(const KeypointSet& driving, const GeometryRef& subject_ref,
                                   const GeometryRef& driving_ref) {
  if (!(subject_ref.height > 0.0)) {
    throw NormalizationError("subject reference bounding box has zero height");
  }
  if (!(driving_ref.height > 0.0)) {
    throw NormalizationError("driving reference bounding box has zero height");
  }
  const double scale = subject_ref.height / driving_ref.height;
  const double tx = subject_ref.center.x - driving_ref.center.x * scale;
  const double ty = subject_ref.center.y - driving_ref.center.y * scale;
  KeypointSet out = driving;
  for (auto& p : out.points) {
    p.x = p.x * scale + tx;
    p.y = p.y * scale + ty;
  }
  return out;
}

KeypointSet normalize_driving_mask(const KeypointSet& driving, const KeypointSet& subject_ref) {
  if (driving.schema != subject_ref.schema) {
    throw NormalizationError("driving and subject keypoints use different schemas");
  }
  const auto subject_box = subject_ref.bbox();
  if (subject_box.height() <= 0.0) {
    throw NormalizationError("subject reference bounding box has zero height");
  }
  return normalize_driving_mask(driving, reference_geometry(subject_ref),
                                reference_geometry(driving));
}

int VideoClip::height() const {
  if (!frames.empty()) return static_cast<int>(frames.front().size(1));
  for (const auto& m : masks)
    if (m) return static_cast<int>(m->raster.size(1));
  return 0;
}

int VideoClip::width() const {
  if (!frames.empty()) return static_cast<int>(frames.front().size(2));
  for (const auto& m : masks)
    if (m) return static_cast<int>(m->raster.size(2));
  return 0;
}

std::vector<std::size_t> VideoClip::usable_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masks.size(); ++i)
    if (masks[i]) out.push_back(i);
  return out;
}

std::vector<KeypointSet> VideoClip::usable_keypoints() const {
  std::vector<KeypointSet> out;
  for (const auto& m : masks)
    if (m) out.push_back(m->keypoints);
  return out;
}

torch::Tensor load_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).contiguous().clone();
}

void save_image(const fs::path& path, const torch::Tensor& image) {
  auto img = image.detach().to(torch::kCPU, torch::kFloat32);
  if (img.dim() != 3) throw ShapeError("save_image expects [C, H, W]");
  if (img.size(0) == 1) img = img.repeat({3, 1, 1});
  if (img.size(0) != 3) throw ShapeError("save_image expects 1 or 3 channels");
  auto u8 = img.clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw DatasetError("cannot write image " + path.string());
}

VideoClip load_clip(const fs::path& dir, const RasterStyle& style,
                    std::optional<std::pair<int, int>> size, std::string clip_id,
                    std::string subject_id) {
  const fs::path frame_dir = dir / "frames";
  const fs::path kp_dir = dir / "keypoints";
  if (!fs::is_directory(frame_dir)) throw DatasetError("missing frames directory " + frame_dir.string());
  std::vector<fs::path> frame_files;
  for (const auto& entry : fs::directory_iterator(frame_dir)) {
    if (entry.path().extension() == ".png") frame_files.push_back(entry.path());
  }
  std::sort(frame_files.begin(), frame_files.end());

  VideoClip clip;
  clip.clip_id = clip_id.empty() ? dir.filename().string() : std::move(clip_id);
  clip.subject_id = subject_id.empty() ? clip.clip_id : std::move(subject_id);
  for (const auto& file : frame_files) {
    auto frame = load_image(file);
    const int src_h = static_cast<int>(frame.size(1));
    const int src_w = static_cast<int>(frame.size(2));
    int h = src_h;
    int w = src_w;
    if (size && (size->first != src_h || size->second != src_w)) {
      h = size->first;
      w = size->second;
      frame = torch::nn::functional::interpolate(
                  frame.unsqueeze(0), torch::nn::functional::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{h, w})
                                          .mode(torch::kArea))
                  .squeeze(0);
    }
    if (!clip.frames.empty() && (clip.frames.front().size(1) != h || clip.frames.front().size(2) != w)) {
      throw DatasetError("frames of clip " + clip.clip_id + " differ in size");
    }
    clip.frames.push_back(frame);

    const fs::path kp_file = kp_dir / (file.stem().string() + ".json");
    if (!fs::exists(kp_file)) {
      log::warning("clip " + clip.clip_id + ": no keypoints for frame " + file.filename().string());
      clip.masks.emplace_back(std::nullopt);
      continue;
    }
    auto kps = read_keypoints_json(kp_file);
    if (h != src_h || w != src_w) {
      const double sx = static_cast<double>(w) / src_w;
      const double sy = static_cast<double>(h) / src_h;
      for (auto& p : kps.points) {
        p.x = quantize_coordinate((p.x + 0.5) * sx - 0.5);
        p.y = quantize_coordinate((p.y + 0.5) * sy - 0.5);
      }
    }
    kps.clamp_to(w, h);
    if (kps.visible_count() == 0) {
      log::warning("clip " + clip.clip_id + ": frame " + file.filename().string() +
                   " has no visible keypoints");
      clip.masks.emplace_back(std::nullopt);
      continue;
    }
    clip.masks.emplace_back(rasterize_mask(kps, h, w, style));
  }
  return clip;
}

void save_clip(const fs::path& dir, const VideoClip& clip) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "keypoints");
  char name[32];
  for (std::size_t i = 0; i < clip.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06zu", i);
    if (i < clip.frames.size()) save_image(dir / "frames" / (std::string(name) + ".png"), clip.frames[i]);
    if (clip.masks[i]) {
      write_keypoints_json(dir / "keypoints" / (std::string(name) + ".json"), clip.masks[i]->keypoints);
    }
  }
}

Dataset::Dataset(Schema schema, RasterStyle style, std::vector<VideoClip> clips,
                 std::size_t min_frames)
    : schema_(schema), style_(style) {
  for (auto& clip : clips) {
    VideoClip kept;
    kept.clip_id = clip.clip_id;
    kept.subject_id = clip.subject_id;
    for (std::size_t i = 0; i < clip.size(); ++i) {
      if (!clip.masks[i]) continue;
      if (clip.masks[i]->keypoints.schema != schema) {
        throw DatasetError("clip " + clip.clip_id + " uses schema " +
                           std::string(to_string(clip.masks[i]->keypoints.schema)));
      }
      kept.frames.push_back(clip.frames.at(i));
      kept.masks.push_back(clip.masks[i]);
    }
    if (kept.size() < min_frames) {
      log::warning("dropping clip " + clip.clip_id + " with " + std::to_string(kept.size()) +
                   " usable frames (need " + std::to_string(min_frames) + ")");
      continue;
    }
    if (!clips_.empty() && (kept.height() != clips_.front().height() ||
                            kept.width() != clips_.front().width())) {
      throw DatasetError("clip " + clip.clip_id + " has a different frame size");
    }
    const auto kps = kept.usable_keypoints();
    references_.push_back(reference_geometry(kps));
    clips_.push_back(std::move(kept));
  }
}

Manifest read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DatasetError("cannot open manifest " + (root / "manifest.json").string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  Manifest m;
  m.schema = schema_from_string(doc.value("schema", std::string("face68")));
  for (const auto& c : doc.at("clips")) {
    Manifest::Entry e;
    e.clip_id = c.at("clip_id").get<std::string>();
    e.subject_id = c.value("subject_id", e.clip_id);
    m.clips.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& root, const Manifest& manifest) {
  nlohmann::json doc;
  doc["schema"] = std::string(to_string(manifest.schema));
  doc["clips"] = nlohmann::json::array();
  for (const auto& e : manifest.clips) {
    doc["clips"].push_back({{"clip_id", e.clip_id}, {"subject_id", e.subject_id}});
  }
  fs::create_directories(root);
  std::ofstream out(root / "manifest.json");
  out << doc.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& root, std::optional<Schema> schema, const RasterStyle& style,
                     std::optional<std::pair<int, int>> size, std::size_t min_frames) {
  const auto manifest = read_manifest(root);
  const Schema effective = schema.value_or(manifest.schema);
  if (effective != manifest.schema) {
    throw DatasetError("requested schema " + std::string(to_string(effective)) +
                       " but manifest declares " + std::string(to_string(manifest.schema)));
  }
  std::vector<VideoClip> clips;
  for (const auto& e : manifest.clips) {
    clips.push_back(load_clip(root / e.clip_id, style, size, e.clip_id, e.subject_id));
  }
  return Dataset(effective, style, std::move(clips), min_frames);
}

std::vector<TrainingSample> sample_training_batch(const Dataset& dataset, int K,
                                                  std::span<const std::size_t> clip_indices,
                                                  std::uint64_t seed) {
  if (dataset.empty()) throw DatasetError("cannot sample from an empty dataset");
  if (K < 1) throw ConfigError("K must be at least 1");
  std::vector<TrainingSample> batch;
  batch.reserve(clip_indices.size());
  for (std::size_t slot = 0; slot < clip_indices.size(); ++slot) {
    const auto ci = clip_indices[slot];
    const auto& clip = dataset.clips().at(ci);
    const auto needed = static_cast<std::size_t>(K) + 1;
    if (clip.size() < needed) {
      log::warning("clip " + clip.clip_id + " is shorter than K + 1 frames; skipped");
      continue;
    }
    std::mt19937_64 rng(mix_seed(seed, slot));
    auto picks = draw_distinct(clip.size(), needed, rng);
    const auto driving = picks.back();
    picks.pop_back();
    batch.push_back(materialize(dataset, ci, std::move(picks), driving));
  }
  return batch;
}

std::vector<TrainingSample> sample_training_batch(const Dataset& dataset, int K,
                                                  std::size_t batch_size, std::uint64_t seed) {
  if (dataset.empty()) throw DatasetError("cannot sample from an empty dataset");
  std::mt19937_64 rng(mix_seed(seed, 0xC11Full));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<std::size_t> clips(batch_size);
  for (auto& c : clips) c = pick(rng);
  return sample_training_batch(dataset, K, clips, seed);
}

std::vector<TrainingSample> sample_cross_identity_batch(const Dataset& dataset, int K,
                                                        std::size_t batch_size,
                                                        std::uint64_t seed) {
  if (dataset.empty()) throw DatasetError("cannot sample from an empty dataset");
  std::vector<TrainingSample> batch;
  for (std::size_t slot = 0; slot < batch_size; ++slot) {
    std::mt19937_64 rng(mix_seed(seed, slot));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < dataset.size(); ++a) {
      if (dataset.clips()[a].size() < static_cast<std::size_t>(K)) continue;
      for (std::size_t b = 0; b < dataset.size(); ++b) {
        if (dataset.clips()[a].subject_id != dataset.clips()[b].subject_id) pairs.emplace_back(a, b);
      }
    }
    if (pairs.empty()) {
      throw DatasetError("cross-identity sampling needs clips from at least two subjects");
    }
    std::uniform_int_distribution<std::size_t> pick_pair(0, pairs.size() - 1);
    const auto [a, b] = pairs[pick_pair(rng)];
    const auto& subject_clip = dataset.clips()[a];
    const auto& driving_clip = dataset.clips()[b];
    auto subject = draw_distinct(subject_clip.size(), static_cast<std::size_t>(K), rng);
    std::uniform_int_distribution<std::size_t> pick_frame(0, driving_clip.size() - 1);
    const auto d = pick_frame(rng);

    TrainingSample s;
    s.clip_index = a;
    s.subject_id = subject_clip.subject_id;
    s.subject_indices = subject;
    s.driving_index = d;
    for (auto idx : subject) {
      s.subject_frames.push_back(subject_clip.frames[idx]);
      s.subject_masks.push_back(*subject_clip.masks[idx]);
    }
    const auto& raw = *driving_clip.masks[d];
    auto moved = normalize_driving_mask(raw.keypoints, dataset.reference(a), dataset.reference(b));
    moved.clamp_to(subject_clip.width(), subject_clip.height());
    s.driving_mask = rasterize_mask(moved, subject_clip.height(), subject_clip.width(), dataset.style());
    s.target_frame = driving_clip.frames[d];
    s.target_mask = raw;
    batch.push_back(std::move(s));
  }
  return batch;
}

AugmentParams sample_augment(const AugmentStrength& strength, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto factor = [&](double s) { return s > 0.0 ? 1.0 + s * (2.0 * unit(rng) - 1.0) : 1.0; };
  AugmentParams p;
  p.flip = unit(rng) < strength.flip_probability;
  p.brightness = factor(strength.brightness);
  p.contrast = factor(strength.contrast);
  p.saturation = factor(strength.saturation);
  return p;
}

KeypointSet flip_keypoints(const KeypointSet& kps, int width) {
  const auto table = mirror_table(kps.schema);
  KeypointSet out = kps;
  const double edge = static_cast<double>(width - 1);
  for (std::size_t i = 0; i < kps.points.size(); ++i) {
    const auto src = static_cast<std::size_t>(table[i]);
    out.points[i] = {edge - kps.points[src].x, kps.points[src].y};
    out.visible[i] = kps.visible[src];
  }
  return out;
}

torch::Tensor jitter_colour(const torch::Tensor& frame, const AugmentParams& params) {
  if (params.brightness == 1.0 && params.contrast == 1.0 && params.saturation == 1.0) return frame;
  auto out = frame;
  if (params.brightness != 1.0) out = out * params.brightness;
  if (params.contrast != 1.0) {
    const auto mean = out.mean();
    out = (out - mean) * params.contrast + mean;
  }
  if (params.saturation != 1.0) {
    const auto gray = (0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]).unsqueeze(0);
    out = (out - gray) * params.saturation + gray;
  }
  return out.clamp(0.0, 1.0);
}

std::pair<torch::Tensor, MaskFrame> augment(const torch::Tensor& frame, const MaskFrame& mask,
                                            const AugmentParams& params, const RasterStyle& style) {
  torch::Tensor out_frame = jitter_colour(frame, params);
  if (!params.flip) return {out_frame, mask};
  out_frame = out_frame.flip({2});
  const int width = static_cast<int>(mask.raster.size(2));
  return {out_frame, rerasterize(mask, flip_keypoints(mask.keypoints, width), style)};
}

TrainingSample augment_sample(const TrainingSample& sample, const AugmentParams& params,
                              const RasterStyle& style) {
  TrainingSample out = sample;
  for (std::size_t k = 0; k < sample.subject_frames.size(); ++k) {
    std::tie(out.subject_frames[k], out.subject_masks[k]) =
        augment(sample.subject_frames[k], sample.subject_masks[k], params, style);
  }
  std::tie(out.target_frame, out.target_mask) =
      augment(sample.target_frame, sample.target_mask, params, style);
  if (params.flip) {
    const int width = static_cast<int>(sample.driving_mask.raster.size(2));
    out.driving_mask = rerasterize(sample.driving_mask,
                                   flip_keypoints(sample.driving_mask.keypoints, width), style);
  } else {
    out.driving_mask = sample.driving_mask;
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace tsnet::dataio
