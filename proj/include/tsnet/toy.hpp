#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tsnet/dataio.hpp"

// Synthetic talking heads and stick figures for tests and demos. Each subject has its own
// colours and proportions; each clip has its own motion.
namespace tsnet::toy {

struct ToyOptions {
  Schema schema = Schema::kFace68;
  int height = 64;
  int width = 64;
  int frames = 16;
  /// Every n-th frame (n > 0) loses its keypoints, as if the detector had failed.
  int drop_every = 0;
};

/// Keypoints of subject `subject` at time `t` of a clip whose motion comes from `motion_seed`.
KeypointSet toy_keypoints(const ToyOptions& options, int subject, std::uint64_t motion_seed, int t);

/// Renders the keypoints with the subject's appearance. [3, H, W] in [0, 1].
torch::Tensor render_toy_frame(const ToyOptions& options, int subject, const KeypointSet& kps);

dataio::VideoClip make_toy_clip(const ToyOptions& options, int subject, std::uint64_t motion_seed,
                                const dataio::RasterStyle& style, std::string clip_id = {});

/// Writes `subjects * clips_per_subject` clips and a manifest under `root`.
void write_toy_dataset(const std::filesystem::path& root, const ToyOptions& options, int subjects,
                       int clips_per_subject, std::uint64_t seed);

}  // namespace tsnet::toy
