#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <unistd.h>

#include "tsnet/dataio.hpp"
#include "tsnet/toy.hpp"
#include "tsnet/trainer.hpp"

namespace support {

namespace fs = std::filesystem;

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("tsnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::shared_ptr<tsnet::dataio::Dataset> toy_dataset(int subjects, int frames, int size,
                                                           tsnet::Schema schema = tsnet::Schema::kFace68,
                                                           std::size_t min_frames = 1,
                                                           std::uint64_t seed = 7) {
  tsnet::toy::ToyOptions o;
  o.schema = schema;
  o.height = o.width = size;
  o.frames = frames;
  tsnet::dataio::RasterStyle style;
  std::vector<tsnet::dataio::VideoClip> clips;
  for (int s = 0; s < subjects; ++s) {
    clips.push_back(tsnet::toy::make_toy_clip(o, s, seed + s, style, "c" + std::to_string(s)));
  }
  return std::make_shared<tsnet::dataio::Dataset>(schema, style, std::move(clips), min_frames);
}

/// Small enough to run a training step in well under a second.
inline tsnet::train::TrainConfig tiny_config(int size = 32) {
  tsnet::train::TrainConfig c;
  c.batch_size = 2;
  c.epochs = 2;
  c.lr_constant_epochs = 1;
  c.K = 2;
  c.image_height = c.image_width = size;
  c.base_channels = 8;
  c.encoder_residual_blocks = 1;
  c.decoder_residual_blocks = 1;
  c.d_base_channels = 8;
  c.d_stride2_layers = 2;
  c.extractor_width_divisor = 16;
  c.augment = false;
  c.steps_per_epoch = 2;
  c.checkpoint_interval = 0;
  return c;
}

inline tsnet::KeypointSet random_face(std::mt19937_64& rng, double width, double height) {
  std::uniform_real_distribution<double> ux(0.0, width - 1), uy(0.0, height - 1);
  tsnet::KeypointSet k;
  k.schema = tsnet::Schema::kFace68;
  for (int i = 0; i < 68; ++i) k.points.push_back({ux(rng), uy(rng)});
  k.visible.assign(68, true);
  return k;
}

}  // namespace support
