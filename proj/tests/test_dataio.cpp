#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "tsnet/dataio.hpp"
#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"

using namespace tsnet;
using namespace tsnet::dataio;

namespace {

// Standard 68-landmark left/right correspondences, written out independently of the library.
std::vector<int> face_mirror_oracle() {
  std::vector<int> m(68);
  for (int i = 0; i < 68; ++i) m[i] = i;
  auto pair = [&](int a, int b) {
    m[a] = b;
    m[b] = a;
  };
  for (int i = 0; i < 8; ++i) pair(i, 16 - i);
  for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);
  pair(31, 35);
  pair(32, 34);
  pair(36, 45);
  pair(37, 44);
  pair(38, 43);
  pair(39, 42);
  pair(40, 47);
  pair(41, 46);
  pair(48, 54);
  pair(49, 53);
  pair(50, 52);
  pair(55, 59);
  pair(56, 58);
  pair(60, 64);
  pair(61, 63);
  pair(65, 67);
  return m;
}

KeypointSet toy_face(int size, int t = 0) {
  toy::ToyOptions o;
  o.height = o.width = size;
  return toy::toy_keypoints(o, 0, 3, t);
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("raster stays within the dilation radius of the skeleton") {
  const auto kps = toy_face(256);
  const RasterStyle style;
  const auto mask = rasterize_mask(kps, 256, 256, style);
  REQUIRE(mask.raster.sizes() == torch::IntArrayRef({1, 256, 256}));
  const auto r = style.radius_for(256, 256);
  CHECK(r == 3.0);
  auto a = mask.raster.accessor<float, 3>();
  int64_t nonzero = 0;
  double worst = 0;
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) {
      if (a[0][y][x] <= 0.0f) continue;
      ++nonzero;
      double d = std::numeric_limits<double>::infinity();
      for (const auto& s : topology(Schema::kFace68).segments) {
        d = std::min(d, oracle::segment_distance(x, y, kps.points[s.a], kps.points[s.b]));
      }
      for (const auto& p : kps.points) d = std::min(d, std::hypot(x - p.x, y - p.y));
      worst = std::max(worst, d);
    }
  }
  CHECK(nonzero > 0);
  CHECK(worst <= r);
  CHECK(mask.raster.max().item<float>() <= 1.0f);
  CHECK(mask.raster.min().item<float>() >= 0.0f);
}

TEST_CASE("rasterization is deterministic and bbox matches visible points") {
  const auto kps = toy_face(64, 4);
  const auto a = rasterize_mask(kps, 64, 64, {});
  const auto b = rasterize_mask(kps, 64, 64, {});
  CHECK(torch::equal(a.raster, b.raster));
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const auto& p : kps.points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  CHECK(a.bbox == BoundingBox{x0, y0, x1, y1});
}

TEST_CASE("a single visible point gives one dot and a degenerate box") {
  auto kps = toy_face(64);
  kps.visible.assign(68, false);
  kps.visible[30] = true;
  const auto mask = rasterize_mask(kps, 64, 64, {});
  const auto p = kps.points[30];
  CHECK(mask.bbox.x_min == mask.bbox.x_max);
  CHECK(mask.bbox.y_min == mask.bbox.y_max);
  CHECK(mask.bbox.x_min == p.x);
  auto a = mask.raster.accessor<float, 3>();
  const double r = RasterStyle{}.radius_for(64, 64);
  int64_t nonzero = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (a[0][y][x] > 0) {
        ++nonzero;
        CHECK(std::hypot(x - p.x, y - p.y) <= r);
      }
  CHECK(nonzero > 0);

  kps.visible[30] = false;
  CHECK_THROWS_AS(rasterize_mask(kps, 64, 64, {}), EmptyMaskError);
}

TEST_CASE("body masks use one channel per limb group") {
  toy::ToyOptions o;
  o.schema = Schema::kBody;
  o.height = o.width = 64;
  const auto kps = toy::toy_keypoints(o, 1, 2, 0);
  const auto multi = rasterize_mask(kps, 64, 64, {});
  CHECK(multi.raster.size(0) == topology(Schema::kBody).channels);
  for (int c = 0; c < multi.raster.size(0); ++c) CHECK(multi.raster[c].sum().item<float>() > 0);
  RasterStyle single;
  single.multi_channel = false;
  CHECK(rasterize_mask(kps, 64, 64, single).raster.size(0) == 1);
}

TEST_CASE("normalization: identity, exact inverse and equivariance") {
  const auto ref = toy_face(128, 2);
  const auto same = normalize_driving_mask(ref, ref);
  for (std::size_t i = 0; i < ref.points.size(); ++i) {
    CHECK(same.points[i].x == doctest::Approx(ref.points[i].x).epsilon(1e-12));
    CHECK(same.points[i].y == doctest::Approx(ref.points[i].y).epsilon(1e-12));
  }

  auto transformed = [](const KeypointSet& k, double s, double tx, double ty) {
    auto out = k;
    for (auto& p : out.points) p = {p.x * s + tx, p.y * s + ty};
    return out;
  };
  const auto scaled = transformed(ref, 2.0, 13.0, -7.5);
  const auto recovered = normalize_driving_mask(scaled, ref);
  for (std::size_t i = 0; i < ref.points.size(); ++i) {
    CHECK(std::abs(recovered.points[i].x - ref.points[i].x) < 1e-6);
    CHECK(std::abs(recovered.points[i].y - ref.points[i].y) < 1e-6);
  }

  // Two driving frames moved by the same transform normalize to the same result.
  const auto driving = toy_face(128, 9);
  const auto a = normalize_driving_mask(driving, ref);
  const auto b = normalize_driving_mask(transformed(driving, 0.7, 20.0, 3.0), ref);
  for (std::size_t i = 0; i < ref.points.size(); ++i) {
    CHECK(std::abs(a.points[i].x - b.points[i].x) < 1e-9);
    CHECK(std::abs(a.points[i].y - b.points[i].y) < 1e-9);
  }

  // Per-clip references: composition of the explicit scale/translation.
  const GeometryRef subject_ref{{40.0, 50.0}, 30.0};
  const GeometryRef driving_ref{{10.0, 20.0}, 60.0};
  const auto moved = normalize_driving_mask(driving, subject_ref, driving_ref);
  for (std::size_t i = 0; i < driving.points.size(); ++i) {
    CHECK(moved.points[i].x == doctest::Approx(40.0 + (driving.points[i].x - 10.0) * 0.5));
    CHECK(moved.points[i].y == doctest::Approx(50.0 + (driving.points[i].y - 20.0) * 0.5));
  }

  auto flat = ref;
  for (auto& p : flat.points) p.y = 5.0;
  CHECK_THROWS_AS(normalize_driving_mask(driving, flat), NormalizationError);
  CHECK_THROWS_AS(normalize_driving_mask(driving, GeometryRef{{0, 0}, 0.0}, driving_ref), NormalizationError);
}

TEST_CASE("reference geometry takes medians over frames") {
  std::vector<KeypointSet> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(toy_face(64, t));
  std::vector<double> heights;
  for (const auto& f : frames) heights.push_back(f.bbox().height());
  std::sort(heights.begin(), heights.end());
  CHECK(reference_geometry(frames).height == heights[2]);
}

TEST_CASE("sampling: clip of length K+1, determinism, disjointness") {
  auto ds = support::toy_dataset(2, 4, 32);
  const std::vector<std::size_t> clips{0, 1};
  const auto batch = sample_training_batch(*ds, 3, clips, 11);
  REQUIRE(batch.size() == 2);
  for (const auto& s : batch) {
    std::set<std::size_t> subject(s.subject_indices.begin(), s.subject_indices.end());
    CHECK(subject.size() == 3);
    CHECK(subject.count(s.driving_index) == 0);
    std::size_t expected_driving = 0;
    while (subject.count(expected_driving)) ++expected_driving;
    CHECK(s.driving_index == expected_driving);
    CHECK(s.subject_id == ds->clips()[s.clip_index].subject_id);
    CHECK(torch::equal(s.target_frame, ds->clips()[s.clip_index].frames[s.driving_index]));
    CHECK(torch::equal(s.target_mask.raster,
                       rasterize_mask(s.driving_mask.keypoints, 32, 32, ds->style()).raster));
  }
  const auto again = sample_training_batch(*ds, 3, clips, 11);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].subject_indices == again[i].subject_indices);
    CHECK(batch[i].driving_index == again[i].driving_index);
  }
  const auto random_clips = sample_training_batch(*ds, 2, std::size_t{5}, 3);
  CHECK(random_clips.size() == 5);
}

TEST_CASE("subject selection frequency is uniform within three binomial sigmas") {
  auto ds = support::toy_dataset(1, 30, 16);
  const std::vector<std::size_t> clip{0};
  std::vector<int> counts(30, 0);
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    const auto batch = sample_training_batch(*ds, 3, clip, static_cast<std::uint64_t>(i));
    for (auto idx : batch.front().subject_indices) ++counts[idx];
  }
  const double p = 3.0 / 30.0;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - mean) <= 3 * sigma);
}

TEST_CASE("short clips are skipped with a warning and empty datasets rejected") {
  auto ds = support::toy_dataset(2, 3, 16);
  const auto before = log::warning_count();
  const std::vector<std::size_t> clips{0, 1};
  CHECK(sample_training_batch(*ds, 3, clips, 0).empty());
  CHECK(log::warning_count() == before + 2);

  Dataset empty(Schema::kFace68, {}, {}, 1);
  CHECK_THROWS_AS(sample_training_batch(empty, 1, std::size_t{1}, 0), DatasetError);
  CHECK_THROWS_AS(sample_cross_identity_batch(empty, 1, 1, 0), DatasetError);

  // Construction drops clips shorter than the minimum length.
  auto kept = support::toy_dataset(2, 3, 16, Schema::kFace68, 4);
  CHECK(kept->empty());
}

TEST_CASE("cross-identity samples pair different subjects with normalized masks") {
  auto ds = support::toy_dataset(3, 5, 32);
  const auto batch = sample_cross_identity_batch(*ds, 2, 6, 5);
  REQUIRE(batch.size() == 6);
  for (const auto& s : batch) {
    const auto& subject = ds->clips()[s.clip_index];
    CHECK(s.subject_id == subject.subject_id);
    CHECK(s.subject_frames.size() == 2);
    CHECK(s.driving_mask.raster.sizes() == s.target_mask.raster.sizes());
    bool from_subject = false;
    for (const auto& f : subject.frames) from_subject = from_subject || torch::equal(f, s.target_frame);
    CHECK_FALSE(from_subject);
  }
  auto single = support::toy_dataset(1, 5, 32);
  CHECK_THROWS_AS(sample_cross_identity_batch(*single, 2, 1, 0), DatasetError);
}

TEST_CASE("flip is an exact involution and follows the mirror table") {
  const int size = 48;
  toy::ToyOptions o;
  o.height = o.width = size;
  const auto kps = toy::toy_keypoints(o, 1, 5, 3);
  const auto frame = toy::render_toy_frame(o, 1, kps);
  const auto mask = rasterize_mask(kps, size, size, {});
  AugmentParams flip;
  flip.flip = true;
  const auto [f1, m1] = augment(frame, mask, flip, {});
  const auto [f2, m2] = augment(f1, m1, flip, {});
  CHECK(torch::equal(f2, frame));
  CHECK(m2.keypoints == kps);
  CHECK(torch::equal(m2.raster, mask.raster));
  CHECK(torch::equal(f1, frame.flip({2})));

  const auto table = face_mirror_oracle();
  const auto flipped = flip_keypoints(kps, size);
  for (int i = 0; i < 68; ++i) {
    CHECK(flipped.points[i].x == (size - 1) - kps.points[table[i]].x);
    CHECK(flipped.points[i].y == kps.points[table[i]].y);
  }
  CHECK(flipped.points[0].x == (size - 1) - kps.points[16].x);
}

TEST_CASE("colour jitter: zero strength is the identity, jitter leaves the mask alone") {
  auto ds = support::toy_dataset(1, 2, 32);
  const auto& frame = ds->clips()[0].frames[0];
  const auto& mask = *ds->clips()[0].masks[0];
  const auto params = sample_augment({0.0, 0.0, 0.0, 0.0}, 9);
  CHECK_FALSE(params.flip);
  const auto [f, m] = augment(frame, mask, params, ds->style());
  CHECK(torch::equal(f, frame));
  CHECK(torch::equal(m.raster, mask.raster));

  AugmentParams strong;
  strong.brightness = 1.1;
  strong.contrast = 0.9;
  strong.saturation = 1.2;
  const auto [fj, mj] = augment(frame, mask, strong, ds->style());
  CHECK_FALSE(torch::equal(fj, frame));
  CHECK(torch::equal(mj.raster, mask.raster));
  CHECK(fj.min().item<float>() >= 0.0f);
  CHECK(fj.max().item<float>() <= 1.0f);
}

TEST_CASE("augment_sample applies one parameter set everywhere") {
  auto ds = support::toy_dataset(1, 6, 32);
  const std::vector<std::size_t> clip{0};
  const auto s = sample_training_batch(*ds, 3, clip, 1).front();
  AugmentParams flip;
  flip.flip = true;
  const auto a = augment_sample(s, flip, ds->style());
  for (std::size_t k = 0; k < s.subject_frames.size(); ++k) {
    CHECK(torch::equal(a.subject_frames[k], s.subject_frames[k].flip({2})));
  }
  CHECK(torch::equal(a.target_frame, s.target_frame.flip({2})));
  CHECK(torch::equal(a.target_mask.raster, rasterize_mask(a.driving_mask.keypoints, 32, 32, ds->style()).raster));
}

TEST_CASE("clip save/load round trip, missing keypoints and manifests") {
  support::TempDir dir("dataio");
  toy::ToyOptions o;
  o.height = o.width = 32;
  o.frames = 5;
  o.drop_every = 3;
  const auto clip = toy::make_toy_clip(o, 2, 4, {}, "clipA");
  CHECK_FALSE(clip.masks[2].has_value());
  save_clip(dir / "clipA", clip);

  const auto before = log::warning_count();
  const auto back = load_clip(dir / "clipA", {}, std::nullopt, "clipA", "s2");
  CHECK(log::warning_count() == before + 1);
  REQUIRE(back.size() == 5);
  CHECK_FALSE(back.masks[2].has_value());
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(torch::equal(back.frames[i], clip.frames[i]));
    if (clip.masks[i]) {
      CHECK(back.masks[i]->keypoints == clip.masks[i]->keypoints);
      CHECK(torch::equal(back.masks[i]->raster, clip.masks[i]->raster));
    }
  }
  CHECK(back.usable_indices() == std::vector<std::size_t>{0, 1, 3, 4});

  const auto resized = load_clip(dir / "clipA", {}, std::pair{16, 16});
  CHECK(resized.height() == 16);
  CHECK(resized.masks[0]->keypoints.points[0].x ==
        doctest::Approx((clip.masks[0]->keypoints.points[0].x + 0.5) * 0.5 - 0.5).epsilon(0.01));

  Manifest m;
  m.clips.push_back({"clipA", "s2"});
  write_manifest(dir.path(), m);
  const auto ds = load_dataset(dir.path(), std::nullopt, {}, std::nullopt, 2);
  REQUIRE(ds.size() == 1);
  CHECK(ds.clips()[0].size() == 4);
  CHECK(ds.clips()[0].subject_id == "s2");
  CHECK_THROWS_AS(load_dataset(dir.path(), Schema::kBody, {}, std::nullopt, 1), DatasetError);
  CHECK_THROWS_AS(load_clip(dir / "nothing", {}), DatasetError);
}

TEST_CASE("image io round trips 8-bit content") {
  support::TempDir dir("img");
  auto img = (torch::randint(0, 256, {3, 7, 9}) / 255.0).to(torch::kFloat32);
  save_image(dir / "x.png", img);
  CHECK((load_image(dir / "x.png") - img).abs().max().item<float>() < 1e-6f);
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(5, 9) == mix_seed(5, 9));
}

}  // TEST_SUITE
