#include "doctest_torch.hpp"

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"
#include "tsnet/retarget.hpp"

using namespace tsnet;
using namespace tsnet::retarget;

namespace {

/// Returns the ground-truth frame of the driving half of a single unbroken clip.
class PerfectStub final : public FrameSynthesizer {
 public:
  PerfectStub(const dataio::VideoClip& clip) : clip_(clip) {}
  torch::Tensor synthesize(const SubjectContext&, const dataio::MaskFrame&, std::size_t i) override {
    return clip_.frames[clip_.size() / 2 + i];
  }

 private:
  const dataio::VideoClip& clip_;
};

/// Deterministic function of the subject frames and the mask only.
class MaskStub final : public FrameSynthesizer {
 public:
  torch::Tensor synthesize(const SubjectContext& s, const dataio::MaskFrame& m, std::size_t) override {
    auto out = s.frames.front() * 0.5;
    for (std::size_t k = 1; k < s.frames.size(); ++k) out = out + s.frames[k] * 0.1;
    return (out + m.raster.sum(0, true) * 0.25).clamp(0, 1);
  }
};

class IdentityExtractor final : public losses::FeatureExtractor {
 public:
  std::vector<torch::Tensor> extract(const torch::Tensor& images) const override { return {images}; }
  std::string provenance() const override { return "identity"; }
};

nets::Generator tiny_generator(int size, int K) {
  nets::GeneratorConfig g;
  g.K = K;
  g.base_channels = 8;
  g.image_height = g.image_width = size;
  g.encoder_residual_blocks = 1;
  g.decoder_residual_blocks = 1;
  torch::manual_seed(11);
  return nets::Generator(g);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::shared_ptr<const losses::FeatureExtractor> vgg() {
  return std::make_shared<losses::VggExtractor>(3, 16);
}

}  // namespace

TEST_SUITE("retarget") {

TEST_CASE("subject frames are distinct, usable and seeded") {
  toy::ToyOptions o;
  o.height = o.width = 32;
  o.frames = 10;
  o.drop_every = 2;
  const auto clip = toy::make_toy_clip(o, 0, 1, {}, "c");
  const auto a = select_subject_frames(clip, 3, 5);
  const auto b = select_subject_frames(clip, 3, 5);
  CHECK(a.indices == b.indices);
  std::set<std::size_t> distinct(a.indices.begin(), a.indices.end());
  CHECK(distinct.size() == 3);
  for (auto i : a.indices) CHECK(clip.masks[i].has_value());
  CHECK_THROWS_AS(select_subject_frames(clip, 6, 0), DatasetError);
}

TEST_CASE("a driving clip of length one gives one frame") {
  auto ds = support::toy_dataset(2, 4, 32);
  RetargetJob job;
  job.subject = ds->clips()[0];
  job.driving = ds->clips()[1];
  job.driving.frames.resize(1);
  job.driving.masks.resize(1);
  job.K = 2;
  MaskStub stub;
  const auto r = retarget::retarget(job, stub);
  CHECK(r.frames.size() == 1);
  CHECK(r.driving_indices == std::vector<std::size_t>{0});
  CHECK(r.frames[0].sizes() == torch::IntArrayRef({3, 32, 32}));
}

TEST_CASE("frames without keypoints are skipped and logged") {
  toy::ToyOptions o;
  o.height = o.width = 32;
  o.frames = 7;
  o.drop_every = 3;
  const auto subject = toy::make_toy_clip(o, 0, 1, {}, "s");
  const auto driving = toy::make_toy_clip(o, 1, 2, {}, "d");
  RetargetJob job{subject, driving, 2, 0, true, {}};
  MaskStub stub;
  const auto before = log::warning_count();
  const auto r = retarget::retarget(job, stub);
  CHECK(r.skipped == 2);
  CHECK(log::warning_count() == before + 2);
  CHECK(r.driving_indices == driving.usable_indices());
  CHECK(r.frames.size() == driving.usable_indices().size());
}

TEST_CASE("schema mismatch is rejected") {
  auto face = support::toy_dataset(1, 4, 64);
  auto body = support::toy_dataset(1, 4, 64, Schema::kBody);
  RetargetJob job{face->clips()[0], body->clips()[0], 2, 0, true, {}};
  MaskStub stub;
  CHECK_THROWS_AS(retarget::retarget(job, stub), ConfigError);
}

TEST_CASE("the generator runs the same job bit-identically twice") {
  auto ds = support::toy_dataset(2, 5, 32);
  GeneratorSynthesizer synth(tiny_generator(32, 2));
  RetargetJob job{ds->clips()[0], ds->clips()[1], 2, 9, true, ds->style()};
  const auto a = retarget::retarget(job, synth);
  const auto b = retarget::retarget(job, synth);
  REQUIRE(a.frames.size() == 5);
  CHECK(a.subject_indices == b.subject_indices);
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(torch::equal(a.frames[i], b.frames[i]));
}

TEST_CASE("driving RGB is never read") {
  auto ds = support::toy_dataset(2, 5, 32);
  GeneratorSynthesizer synth(tiny_generator(32, 2));
  RetargetJob job{ds->clips()[0], ds->clips()[1], 2, 1, true, ds->style()};
  const auto a = retarget::retarget(job, synth);
  for (auto& f : job.driving.frames) f = torch::rand_like(f);
  const auto b = retarget::retarget(job, synth);
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(torch::equal(a.frames[i], b.frames[i]));
}

TEST_CASE("l2 metric examples and loop oracle") {
  const auto x = torch::rand({3, 4, 4});
  CHECK(l2_metric({x, x}, {x, x}) == 0.0);
  const auto base = torch::full({3, 4, 4}, 0.5, torch::kFloat64);
  CHECK(l2_metric({base + 0.1}, {base}) == doctest::Approx(0.01).epsilon(1e-12));

  const std::vector<torch::Tensor> g{torch::rand({3, 4, 4}), torch::rand({3, 4, 4})};
  const std::vector<torch::Tensor> t{torch::rand({3, 4, 4}), torch::rand({3, 4, 4})};
  double oracle = 0;
  for (int f = 0; f < 2; ++f) {
    const auto gd = g[f].to(torch::kFloat64);
    const auto td = t[f].to(torch::kFloat64);
    auto a = gd.accessor<double, 3>();
    auto b = td.accessor<double, 3>();
    double s = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x2 = 0; x2 < 4; ++x2) s += (a[c][y][x2] - b[c][y][x2]) * (a[c][y][x2] - b[c][y][x2]);
    oracle += s / 48.0;
  }
  CHECK(std::abs(l2_metric(g, t) - oracle / 2) < 1e-12);
  CHECK_THROWS_AS(l2_metric(g, {t[0]}), ShapeError);
  CHECK_THROWS_AS(l2_metric({torch::rand({3, 4, 5})}, {t[0]}), ShapeError);
}

TEST_CASE("perceptual metric is zero on identical inputs and non-negative") {
  const PerceptualMetric metric(vgg());
  CHECK_FALSE(metric.calibrated());
  CHECK(metric.provenance().rfind("proxy:", 0) == 0);
  const auto x = torch::rand({3, 32, 32});
  CHECK(metric.distance(x, x) == 0.0);
  for (int i = 0; i < 100; ++i) CHECK(metric.distance(torch::rand({3, 32, 32}), torch::rand({3, 32, 32})) >= 0.0);

  const PerceptualMetric weighted(std::make_shared<IdentityExtractor>(), {torch::tensor({1.0, 0.0, 0.0})});
  CHECK(weighted.calibrated());
  CHECK(weighted.provenance() == "calibrated:identity");
  const auto a = torch::rand({3, 4, 4}) + 0.1;
  const auto b = torch::rand({3, 4, 4}) + 0.1;
  // Features are unit-normalized over channels, so positive rescaling is invisible.
  CHECK(weighted.distance(a, a * 3) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(weighted.distance(a, b) > 0.0);
  const PerceptualMetric silent(std::make_shared<IdentityExtractor>(), {torch::zeros({3})});
  CHECK(silent.distance(a, b) == 0.0);
}

TEST_CASE("perfect stub scores zero in self-reconstruction") {
  auto ds = support::toy_dataset(1, 8, 32);
  PerfectStub stub(ds->clips()[0]);
  const PerceptualMetric metric(vgg());
  const auto report = self_reconstruction_eval(*ds, stub, metric, {2, 0, ds->style()});
  REQUIRE(report.videos.size() == 1);
  const auto& v = report.videos[0];
  CHECK(v.driving_indices.size() == 4);
  for (auto s : v.subject_indices) CHECK(s < 4);
  CHECK(*report.mean_l2() == 0.0);
  CHECK(*report.mean_perceptual() == 0.0);
  CHECK(report.metric_provenance.rfind("proxy:", 0) == 0);
}

TEST_CASE("report means weight videos by frame count") {
  auto ds = support::toy_dataset(3, 6, 32);
  MaskStub stub;
  const PerceptualMetric metric(vgg());
  std::vector<dataio::VideoClip> clips = ds->clips();
  clips[1] = toy::make_toy_clip({Schema::kFace68, 32, 32, 10, 0}, 1, 8, {}, "long");
  dataio::Dataset mixed(Schema::kFace68, ds->style(), clips, 1);
  const auto report = self_reconstruction_eval(mixed, stub, metric, {2, 4, ds->style()});
  REQUIRE(report.videos.size() == 3);
  double sum_l2 = 0, sum_p = 0;
  std::size_t n = 0;
  for (const auto& v : report.videos) {
    CHECK(v.l2.size() == v.driving_indices.size());
    sum_l2 += *v.mean_l2() * v.l2.size();
    sum_p += *v.mean_perceptual() * v.perceptual.size();
    n += v.l2.size();
  }
  CHECK(n == 3 + 5 + 3);
  CHECK(report.frame_count() == n);
  CHECK(*report.mean_l2() == doctest::Approx(sum_l2 / n).epsilon(1e-12));
  CHECK(*report.mean_perceptual() == doctest::Approx(sum_p / n).epsilon(1e-12));
}

TEST_CASE("clips too short to split are skipped") {
  auto ds = support::toy_dataset(1, 3, 32);
  MaskStub stub;
  const PerceptualMetric metric(vgg());
  const auto report = self_reconstruction_eval(*ds, stub, metric, {2, 0, ds->style()});
  CHECK(report.videos.empty());
  CHECK_FALSE(report.mean_l2().has_value());
}

TEST_CASE("cross-identity evaluation pairs different subjects without metrics") {
  auto ds = support::toy_dataset(3, 5, 32);
  MaskStub stub;
  const PerceptualMetric metric(vgg());
  const auto report = cross_identity_eval(*ds, stub, metric, {2, 0, ds->style()});
  REQUIRE(report.videos.size() == 3);
  for (const auto& v : report.videos) {
    CHECK(v.subject_clip != v.driving_clip);
    CHECK(v.l2.empty());
    CHECK(v.generated.size() == 5);
  }
  CHECK(report.mode == "cross");
  CHECK(to_json(report)["mean_l2"].is_null());
}

TEST_CASE("empty report is valid json and emission is deterministic") {
  support::TempDir dir("emit");
  EvalReport empty;
  empty.mode = "self";
  emit_report(empty, dir / "empty");
  const auto doc = nlohmann::json::parse(slurp(dir / "empty" / "report.json"));
  CHECK(doc["video_count"] == 0);
  CHECK(doc["videos"].empty());

  auto ds = support::toy_dataset(2, 6, 32);
  MaskStub stub;
  const PerceptualMetric metric(vgg());
  const auto report = self_reconstruction_eval(*ds, stub, metric, {2, 0, ds->style()});
  emit_report(report, dir / "a");
  emit_report(report, dir / "b");
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  CHECK(slurp(dir / "a" / "per_frame.csv") == slurp(dir / "b" / "per_frame.csv"));
  CHECK(std::filesystem::exists(dir / "a" / "frames" / "000005.png"));
  CHECK_FALSE(std::filesystem::exists(dir / "a" / "frames" / "000006.png"));

  const auto strip = dataio::load_image(dir / "a" / "strips" / "000000.png");
  CHECK(strip.size(1) == 32);
  CHECK(strip.size(2) == 3 * 32);

  std::ifstream csv(dir / "a" / "per_frame.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "output_index,video_id,driving_index,l2,perceptual");
}

TEST_CASE("strip layout and mask rendering") {
  const auto s = torch::rand({3, 8, 10});
  const auto g = torch::rand({3, 8, 10});
  const auto mask = torch::zeros({2, 8, 10});
  const auto strip = make_strip(s, mask, g);
  CHECK(strip.sizes() == torch::IntArrayRef({3, 8, 30}));
  CHECK(torch::equal(strip.narrow(2, 0, 10), s));
  CHECK(torch::equal(strip.narrow(2, 20, 10), g));
  CHECK(render_mask(mask).abs().sum().item<double>() == 0.0);
  auto on = mask.clone();
  on[1][3][4] = 1.0;
  CHECK(render_mask(on).sum().item<double>() > 0.0);
}

TEST_CASE("synthesizer loads from a checkpoint") {
  auto ds = support::toy_dataset(2, 4, 32);
  train::Trainer t(support::tiny_config(), ds);
  support::TempDir dir("synth");
  t.save_checkpoint(dir / "c.pt");
  auto synth = GeneratorSynthesizer::from_checkpoint(dir / "c.pt");
  CHECK(synth->config().K == 2);
  RetargetJob job{ds->clips()[0], ds->clips()[1], 3, 0, true, ds->style()};
  const auto r = retarget::retarget(job, *synth);
  CHECK(r.frames.size() == 4);
  CHECK(r.subject_indices.size() == 3);
}

}  // TEST_SUITE
