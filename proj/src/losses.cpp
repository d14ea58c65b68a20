#include "tsnet/losses.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "tsnet/errors.hpp"

namespace tsnet::losses {
namespace {

namespace nn = torch::nn;

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": inputs differ in shape");
}

void require_finite(const torch::Tensor& t, const char* name) {
  if (!t.defined()) return;
  if (!std::isfinite(t.item<double>())) {
    throw NonFiniteLossError(std::string("loss term '") + name + "' is not finite");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || lambda < 0 || gdl < 0) throw ConfigError("loss weights must be non-negative");
}

VggExtractor::VggExtractor(std::uint64_t seed, int width_divisor)
    : net_(std::make_shared<nn::Module>()) {
  if (width_divisor < 1) throw ConfigError("width_divisor must be >= 1");
  // (name, in, out) for VGG-19 conv layers up to conv5_1.
  const std::vector<std::tuple<std::string, int, int>> layout = {
      {"conv1_1", 3, 64},    {"conv1_2", 64, 64},   {"conv2_1", 64, 128},  {"conv2_2", 128, 128},
      {"conv3_1", 128, 256}, {"conv3_2", 256, 256}, {"conv3_3", 256, 256}, {"conv3_4", 256, 256},
      {"conv4_1", 256, 512}, {"conv4_2", 512, 512}, {"conv4_3", 512, 512}, {"conv4_4", 512, 512},
      {"conv5_1", 512, 512}};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (const auto& [name, in, out] : layout) {
    const int cin = in == 3 ? 3 : in / width_divisor;
    const int cout = out / width_divisor;
    auto conv = nn::Conv2d(nn::Conv2dOptions(cin, cout, 3).padding(1));
    const double std = std::sqrt(2.0 / (cin * 9.0));
    conv->weight.copy_(torch::randn(conv->weight.sizes(), gen, torch::kFloat32) * std);
    conv->bias.zero_();
    net_->register_module(name, conv);
    convs_.emplace_back(name, conv);
  }
  taps_ = {0, 2, 4, 8, 12};
  pools_ = {1, 3, 7, 11};
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  provenance_ = "random(seed=" + std::to_string(seed) + ",width/" + std::to_string(width_divisor) + ")";
}

void VggExtractor::load_weights(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::NoGradGuard no_grad;
  for (auto& [name, conv] : convs_) {
    torch::Tensor w, b;
    archive.read(name + ".weight", w);
    archive.read(name + ".bias", b);
    if (w.sizes() != conv->weight.sizes()) {
      throw ConfigError("extractor weight " + name + " has an unexpected shape");
    }
    conv->weight.copy_(w);
    conv->bias.copy_(b);
  }
  provenance_ = "pretrained(" + path.filename().string() + ")";
}

std::vector<torch::Tensor> VggExtractor::extract(const torch::Tensor& images) const {
  static const auto mean = torch::tensor({0.485, 0.456, 0.406}, torch::kFloat32).view({1, 3, 1, 1});
  static const auto stddev = torch::tensor({0.229, 0.224, 0.225}, torch::kFloat32).view({1, 3, 1, 1});
  auto x = (images - mean.to(images.dtype())) / stddev.to(images.dtype());
  std::vector<torch::Tensor> out;
  std::size_t next_tap = 0;
  std::size_t next_pool = 0;
  for (int i = 0; i < static_cast<int>(convs_.size()); ++i) {
    x = torch::relu(torch::conv2d(x, convs_[i].second->weight, convs_[i].second->bias, 1, 1));
    if (next_tap < taps_.size() && taps_[next_tap] == i) {
      out.push_back(x);
      ++next_tap;
    }
    if (next_pool < pools_.size() && pools_[next_pool] == i) {
      x = torch::max_pool2d(x, 2);
      ++next_pool;
    }
  }
  return out;
}

torch::Tensor lsgan_discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return 0.5 * (real_scores - 1.0).pow(2).mean() + 0.5 * fake_scores.pow(2).mean();
}

torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_scores) {
  return 0.5 * (fake_scores - 1.0).pow(2).mean();
}

torch::Tensor adversarial_loss(nets::Discriminator& d, const torch::Tensor& fake, const torch::Tensor& real,
                               const torch::Tensor& mask, Role role) {
  if (role == Role::kGenerator) return lsgan_generator_loss(d->forward(fake, mask).scores);
  return lsgan_discriminator_loss(d->forward(real, mask).scores, d->forward(fake, mask).scores);
}

torch::Tensor perceptual_loss(const FeatureExtractor& extractor, const torch::Tensor& fake,
                              const torch::Tensor& real) {
  check_same(fake, real, "perceptual_loss");
  const auto a = extractor.extract(fake);
  const auto b = extractor.extract(real);
  auto total = torch::zeros({}, fake.options());
  for (std::size_t i = 0; i < a.size(); ++i) total = total + (a[i] - b[i].detach()).abs().mean();
  return total;
}

torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& fake_features,
                                    const std::vector<torch::Tensor>& real_features) {
  if (fake_features.size() != real_features.size()) {
    throw ShapeError("feature_matching_loss: layer counts differ");
  }
  if (fake_features.empty()) throw ShapeError("feature_matching_loss: no layers");
  auto total = torch::zeros({}, fake_features.front().options());
  for (std::size_t i = 0; i < fake_features.size(); ++i) {
    check_same(fake_features[i], real_features[i], "feature_matching_loss");
    total = total + (fake_features[i] - real_features[i].detach()).abs().mean();
  }
  return total;
}

torch::Tensor feature_matching_loss(nets::Discriminator& d, const torch::Tensor& fake,
                                    const torch::Tensor& real, const torch::Tensor& mask) {
  const auto fake_out = d->forward(fake, mask);
  std::vector<torch::Tensor> real_features;
  {
    torch::NoGradGuard no_grad;
    real_features = d->forward(real, mask).features;
  }
  return feature_matching_loss(fake_out.features, real_features);
}

torch::Tensor transformation_loss(const std::vector<torch::Tensor>& warped, const torch::Tensor& target) {
  if (warped.empty()) throw ShapeError("transformation_loss needs at least one warped frame");
  auto total = torch::zeros({}, target.options());
  for (const auto& w : warped) {
    check_same(w, target, "transformation_loss");
    total = total + (w - target).abs().mean();
  }
  return total;
}

torch::Tensor transformation_loss(const torch::Tensor& warped, const torch::Tensor& target) {
  if (!warped.defined() || warped.dim() != 5 || warped.size(1) == 0) {
    throw ShapeError("transformation_loss expects [B, K, C, H, W] warped frames");
  }
  std::vector<torch::Tensor> frames;
  for (int64_t k = 0; k < warped.size(1); ++k) frames.push_back(warped.select(1, k));
  return transformation_loss(frames, target);
}

torch::Tensor gradient_difference_loss(const torch::Tensor& fake, const torch::Tensor& real) {
  check_same(fake, real, "gradient_difference_loss");
  namespace idx = torch::indexing;
  auto dx = [](const torch::Tensor& t) {
    return (t.index({"...", idx::Slice(1, idx::None)}) - t.index({"...", idx::Slice(idx::None, -1)})).abs();
  };
  auto dy = [](const torch::Tensor& t) {
    return (t.index({"...", idx::Slice(1, idx::None), idx::Slice()}) -
            t.index({"...", idx::Slice(idx::None, -1), idx::Slice()}))
        .abs();
  };
  auto total = torch::zeros({}, fake.options());
  if (fake.size(-1) > 1) total = total + (dx(fake) - dx(real)).abs().mean();
  if (fake.size(-2) > 1) total = total + (dy(fake) - dy(real)).abs().mean();
  return total;
}

torch::Tensor total_generator_loss(const LossParts& parts, const LossWeights& weights, bool adversarial_only) {
  weights.validate();
  require_finite(parts.gan, "gan");
  require_finite(parts.vgg, "vgg");
  require_finite(parts.fm, "fm");
  require_finite(parts.tra, "tra");
  require_finite(parts.gdl, "gdl");
  require_finite(parts.face_gan, "face_gan");
  require_finite(parts.face_fm, "face_fm");

  torch::Tensor total;
  auto add = [&](const torch::Tensor& term, double weight) {
    if (!term.defined() || weight == 0.0) return;
    auto scaled = weight == 1.0 ? term : term * weight;
    total = total.defined() ? total + scaled : scaled;
  };
  add(parts.gan, 1.0);
  add(parts.face_gan, 1.0);
  if (!adversarial_only) {
    add(parts.vgg, weights.alpha);
    add(parts.fm, weights.beta);
    add(parts.face_fm, weights.beta);
    add(parts.tra, weights.lambda);
    add(parts.gdl, weights.gdl);
  }
  if (!total.defined()) total = torch::zeros({});
  return total;
}

double value_or_zero(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

}  // namespace tsnet::losses
