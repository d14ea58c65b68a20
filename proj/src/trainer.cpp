#include "tsnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"

namespace tsnet::train {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kSampleStream = 0x5A4D11ull;
constexpr std::uint64_t kAugmentStream = 0xA06ull;
constexpr std::uint64_t kOrderStream = 0x0DE5ull;

std::vector<torch::Tensor> all_parameters(const std::vector<torch::nn::Module*>& modules) {
  std::vector<torch::Tensor> params;
  for (auto* m : modules) {
    if (!m) continue;
    for (auto& p : m->parameters()) params.push_back(p);
  }
  return params;
}

torch::Tensor stack_rasters(const std::vector<dataio::MaskFrame>& masks) {
  std::vector<torch::Tensor> rasters;
  rasters.reserve(masks.size());
  for (const auto& m : masks) rasters.push_back(m.raster);
  return torch::stack(rasters);
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

void write_string(torch::serialize::OutputArchive& archive, const std::string& key, const std::string& value) {
  archive.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
  c10::IValue value;
  archive.read(key, value);
  return value.toStringRef();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (lr_constant_epochs < 0 || lr_constant_epochs > epochs) {
    throw ConfigError("lr_constant_epochs must lie in [0, epochs]");
  }
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (checkpoint_interval < 0 || steps_per_epoch < 0) throw ConfigError("intervals must be non-negative");
  if (face_discriminator && schema != Schema::kBody) {
    throw ConfigError("the face discriminator needs body keypoints with a face block");
  }
  weights.validate();
  generator_config().validate();
  discriminator_config().validate();
}

nets::GeneratorConfig TrainConfig::generator_config() const {
  nets::GeneratorConfig g;
  g.K = K;
  g.base_channels = base_channels;
  g.branch_mode = branch_mode;
  g.combine_mode = combine_mode;
  g.use_coord_conv = use_coord_conv;
  g.image_height = image_height;
  g.image_width = image_width;
  g.mask_channels = dataio::mask_channels(schema, raster_style());
  g.encoder_residual_blocks = encoder_residual_blocks;
  g.decoder_residual_blocks = decoder_residual_blocks;
  g.grid.tau = tau;
  return g;
}

nets::DiscriminatorConfig TrainConfig::discriminator_config() const {
  nets::DiscriminatorConfig d;
  d.base_channels = d_base_channels;
  d.stride2_layers = d_stride2_layers;
  d.input_channels = 3 + dataio::mask_channels(schema, raster_style());
  return d;
}

dataio::RasterStyle TrainConfig::raster_style() const {
  dataio::RasterStyle s;
  s.radius_at_256 = raster_radius;
  s.multi_channel = multi_channel_masks;
  return s;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_constant_epochs", c.lr_constant_epochs},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"K", c.K},
          {"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"lambda", c.weights.lambda},
          {"gdl_weight", c.weights.gdl},
          {"branch_mode", nets::to_string(c.branch_mode)},
          {"combine_mode", nets::to_string(c.combine_mode)},
          {"cross_identity", c.cross_identity},
          {"seed", c.seed},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"checkpoint_interval", c.checkpoint_interval},
          {"steps_per_epoch", c.steps_per_epoch},
          {"base_channels", c.base_channels},
          {"encoder_residual_blocks", c.encoder_residual_blocks},
          {"decoder_residual_blocks", c.decoder_residual_blocks},
          {"use_coord_conv", c.use_coord_conv},
          {"tau", c.tau},
          {"d_base_channels", c.d_base_channels},
          {"d_stride2_layers", c.d_stride2_layers},
          {"face_discriminator", c.face_discriminator},
          {"face_crop_size", c.face_crop_size},
          {"extractor_seed", c.extractor_seed},
          {"extractor_width_divisor", c.extractor_width_divisor},
          {"extractor_weights", c.extractor_weights},
          {"augment", c.augment},
          {"flip_probability", c.augment_strength.flip_probability},
          {"brightness", c.augment_strength.brightness},
          {"contrast", c.augment_strength.contrast},
          {"saturation", c.augment_strength.saturation},
          {"schema", std::string(to_string(c.schema))},
          {"raster_radius", c.raster_radius},
          {"multi_channel_masks", c.multi_channel_masks}};
}

TrainConfig train_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("train config must be a flat key/value object");
  json merged = to_json(TrainConfig{});
  for (const auto& [key, value] : doc.items()) {
    if (!merged.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
    merged[key] = value;
  }
  TrainConfig c;
  try {
    c.batch_size = merged.at("batch_size").get<std::size_t>();
    c.epochs = merged.at("epochs").get<int>();
    c.lr = merged.at("lr").get<double>();
    c.lr_constant_epochs = merged.at("lr_constant_epochs").get<int>();
    c.adam_beta1 = merged.at("adam_beta1").get<double>();
    c.adam_beta2 = merged.at("adam_beta2").get<double>();
    c.K = merged.at("K").get<int>();
    c.weights.alpha = merged.at("alpha").get<double>();
    c.weights.beta = merged.at("beta").get<double>();
    c.weights.lambda = merged.at("lambda").get<double>();
    c.weights.gdl = merged.at("gdl_weight").get<double>();
    c.branch_mode = nets::branch_mode_from_string(merged.at("branch_mode").get<std::string>());
    c.combine_mode = nets::combine_mode_from_string(merged.at("combine_mode").get<std::string>());
    c.cross_identity = merged.at("cross_identity").get<bool>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.image_height = merged.at("image_height").get<int>();
    c.image_width = merged.at("image_width").get<int>();
    c.checkpoint_interval = merged.at("checkpoint_interval").get<int>();
    c.steps_per_epoch = merged.at("steps_per_epoch").get<int>();
    c.base_channels = merged.at("base_channels").get<int>();
    c.encoder_residual_blocks = merged.at("encoder_residual_blocks").get<int>();
    c.decoder_residual_blocks = merged.at("decoder_residual_blocks").get<int>();
    c.use_coord_conv = merged.at("use_coord_conv").get<bool>();
    c.tau = merged.at("tau").get<double>();
    c.d_base_channels = merged.at("d_base_channels").get<int>();
    c.d_stride2_layers = merged.at("d_stride2_layers").get<int>();
    c.face_discriminator = merged.at("face_discriminator").get<bool>();
    c.face_crop_size = merged.at("face_crop_size").get<int>();
    c.extractor_seed = merged.at("extractor_seed").get<std::uint64_t>();
    c.extractor_width_divisor = merged.at("extractor_width_divisor").get<int>();
    c.extractor_weights = merged.at("extractor_weights").get<std::string>();
    c.augment = merged.at("augment").get<bool>();
    c.augment_strength.flip_probability = merged.at("flip_probability").get<double>();
    c.augment_strength.brightness = merged.at("brightness").get<double>();
    c.augment_strength.contrast = merged.at("contrast").get<double>();
    c.augment_strength.saturation = merged.at("saturation").get<double>();
    c.schema = schema_from_string(merged.at("schema").get<std::string>());
    c.raster_radius = merged.at("raster_radius").get<double>();
    c.multi_channel_masks = merged.at("multi_channel_masks").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(doc);
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  }
  if (epoch < cfg.lr_constant_epochs) return cfg.lr;
  if (cfg.epochs == cfg.lr_constant_epochs) return 0.0;
  return cfg.lr * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.lr_constant_epochs);
}

json to_json(const StepMetrics& m) {
  return {{"step", m.step},   {"epoch", m.epoch}, {"lr", m.lr},   {"d_loss", m.d_loss},
          {"face_d_loss", m.face_d_loss},         {"gan", m.gan}, {"vgg", m.vgg},
          {"fm", m.fm},       {"tra", m.tra},     {"gdl", m.gdl}, {"face_gan", m.face_gan},
          {"face_fm", m.face_fm},                 {"total", m.total}, {"l2", m.l2}};
}

StepMetrics step_metrics_from_json(const json& d) {
  StepMetrics m;
  m.step = d.at("step").get<std::int64_t>();
  m.epoch = d.at("epoch").get<int>();
  m.lr = d.at("lr").get<double>();
  m.d_loss = d.at("d_loss").get<double>();
  m.face_d_loss = d.at("face_d_loss").get<double>();
  m.gan = d.at("gan").get<double>();
  m.vgg = d.at("vgg").get<double>();
  m.fm = d.at("fm").get<double>();
  m.tra = d.at("tra").get<double>();
  m.gdl = d.at("gdl").get<double>();
  m.face_gan = d.at("face_gan").get<double>();
  m.face_fm = d.at("face_fm").get<double>();
  m.total = d.at("total").get<double>();
  m.l2 = d.at("l2").get<double>();
  return m;
}

double recombine_total(const StepMetrics& m, const TrainConfig& cfg) {
  double total = m.gan + m.face_gan;
  if (!cfg.cross_identity) {
    total += cfg.weights.alpha * m.vgg + cfg.weights.beta * (m.fm + m.face_fm) +
             cfg.weights.lambda * m.tra + cfg.weights.gdl * m.gdl;
  }
  return total;
}

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<const dataio::Dataset> dataset)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)) {
  cfg_.validate();
  if (!dataset_ || dataset_->empty()) throw DatasetError("training needs a non-empty dataset");
  if (dataset_->schema() != cfg_.schema) throw ConfigError("dataset schema differs from the config schema");
  if (dataset_->clips().front().height() != cfg_.image_height ||
      dataset_->clips().front().width() != cfg_.image_width) {
    throw ConfigError("dataset frame size differs from the configured image size");
  }

  torch::manual_seed(cfg_.seed);
  state_.generator = nets::Generator(cfg_.generator_config());
  state_.discriminator = nets::Discriminator(cfg_.discriminator_config());
  std::vector<torch::nn::Module*> d_modules{state_.discriminator.ptr().get()};
  if (cfg_.face_discriminator) {
    state_.face_discriminator = nets::Discriminator(cfg_.discriminator_config());
    d_modules.push_back(state_.face_discriminator.ptr().get());
  }
  const auto betas = std::make_tuple(cfg_.adam_beta1, cfg_.adam_beta2);
  state_.g_optimizer = std::make_unique<torch::optim::Adam>(
      state_.generator->parameters(), torch::optim::AdamOptions(cfg_.lr).betas(betas));
  state_.d_optimizer = std::make_unique<torch::optim::Adam>(
      all_parameters(d_modules), torch::optim::AdamOptions(cfg_.lr).betas(betas));

  extractor_ = std::make_unique<losses::VggExtractor>(cfg_.extractor_seed, cfg_.extractor_width_divisor);
  if (!cfg_.extractor_weights.empty()) extractor_->load_weights(cfg_.extractor_weights);
}

int Trainer::steps_per_epoch() const {
  if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
  return static_cast<int>((dataset_->size() + cfg_.batch_size - 1) / cfg_.batch_size);
}

std::vector<dataio::TrainingSample> Trainer::batch_for_step(std::int64_t step) const {
  const auto spe = steps_per_epoch();
  const auto epoch = static_cast<std::uint64_t>(step / spe);
  const auto within = static_cast<std::size_t>(step % spe);
  const std::uint64_t sample_seed = dataio::mix_seed(cfg_.seed ^ kSampleStream, static_cast<std::uint64_t>(step));

  std::vector<dataio::TrainingSample> batch;
  if (cfg_.cross_identity) {
    batch = dataio::sample_cross_identity_batch(*dataset_, cfg_.K, cfg_.batch_size, sample_seed);
  } else {
    // Each epoch visits the clips in a fresh permutation; batches take consecutive slots.
    std::vector<std::size_t> order(dataset_->size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(dataio::mix_seed(cfg_.seed ^ kOrderStream, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> clips(cfg_.batch_size);
    for (std::size_t i = 0; i < clips.size(); ++i) clips[i] = order[(within * cfg_.batch_size + i) % order.size()];
    batch = dataio::sample_training_batch(*dataset_, cfg_.K, clips, sample_seed);
  }
  if (cfg_.augment) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto params = dataio::sample_augment(
          cfg_.augment_strength, dataio::mix_seed(sample_seed ^ kAugmentStream, i));
      batch[i] = dataio::augment_sample(batch[i], params, dataset_->style());
    }
  }
  if (batch.empty()) throw DatasetError("no usable clip for step " + std::to_string(step));
  return batch;
}

nets::GeneratorInput Trainer::generator_input(const std::vector<dataio::TrainingSample>& batch) {
  std::vector<std::vector<torch::Tensor>> frames, masks;
  std::vector<std::vector<BoundingBox>> boxes;
  std::vector<torch::Tensor> driving;
  std::vector<BoundingBox> driving_boxes;
  for (const auto& s : batch) {
    frames.push_back(s.subject_frames);
    std::vector<torch::Tensor> m;
    std::vector<BoundingBox> b;
    for (const auto& mask : s.subject_masks) {
      m.push_back(mask.raster);
      b.push_back(mask.bbox);
    }
    masks.push_back(std::move(m));
    boxes.push_back(std::move(b));
    driving.push_back(s.driving_mask.raster);
    driving_boxes.push_back(s.driving_mask.bbox);
  }
  return nets::make_generator_input(frames, masks, boxes, driving, driving_boxes);
}

void Trainer::set_discriminators_trainable(bool trainable) {
  for (auto& p : state_.discriminator->parameters()) p.set_requires_grad(trainable);
  if (state_.face_discriminator) {
    for (auto& p : state_.face_discriminator->parameters()) p.set_requires_grad(trainable);
  }
}

StepMetrics Trainer::train_step(const std::vector<dataio::TrainingSample>& batch, double lr, StepPart part) {
  if (batch.empty()) throw DatasetError("empty training batch");
  set_lr(*state_.g_optimizer, lr);
  set_lr(*state_.d_optimizer, lr);
  state_.generator->train();
  state_.discriminator->train();

  const auto input = generator_input(batch);
  std::vector<torch::Tensor> targets;
  std::vector<dataio::MaskFrame> target_masks, driving_masks;
  for (const auto& s : batch) {
    targets.push_back(s.target_frame);
    target_masks.push_back(s.target_mask);
    driving_masks.push_back(s.driving_mask);
  }
  const auto target = torch::stack(targets);
  const auto target_mask = stack_rasters(target_masks);
  const auto& driving_mask = input.driving_mask;

  std::vector<BoundingBox> real_faces, fake_faces;
  if (state_.face_discriminator) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      real_faces.push_back(nets::face_box(target_masks[i].keypoints));
      fake_faces.push_back(nets::face_box(driving_masks[i].keypoints));
    }
  }

  auto out = state_.generator->forward(input);
  StepMetrics m;
  m.step = state_.step;
  m.lr = lr;

  // Discriminator update on detached fakes.
  set_discriminators_trainable(true);
  if (part != StepPart::kGeneratorOnly) {
    state_.d_optimizer->zero_grad();
    const auto fake_detached = out.frame.detach();
    auto d_loss = losses::lsgan_discriminator_loss(state_.discriminator->forward(target, target_mask).scores,
                                                   state_.discriminator->forward(fake_detached, driving_mask).scores);
    torch::Tensor face_d_loss;
    if (state_.face_discriminator) {
      const int s = cfg_.face_crop_size;
      face_d_loss = losses::lsgan_discriminator_loss(
          state_.face_discriminator->forward(nets::crop_boxes(target, real_faces, s),
                                             nets::crop_boxes(target_mask, real_faces, s))
              .scores,
          state_.face_discriminator->forward(nets::crop_boxes(fake_detached, fake_faces, s),
                                             nets::crop_boxes(driving_mask, fake_faces, s))
              .scores);
    }
    auto d_total = face_d_loss.defined() ? d_loss + face_d_loss : d_loss;
    if (!std::isfinite(d_total.item<double>())) {
      throw NonFiniteLossError("discriminator loss is not finite", last_checkpoint_.string());
    }
    d_total.backward();
    state_.d_optimizer->step();
    m.d_loss = d_loss.item<double>();
    m.face_d_loss = losses::value_or_zero(face_d_loss);
  }
  if (part == StepPart::kDiscriminatorOnly) return m;

  // Generator update against the refreshed, frozen discriminators.
  set_discriminators_trainable(false);
  state_.g_optimizer->zero_grad();
  losses::LossParts parts;
  const auto fake_out = state_.discriminator->forward(out.frame, driving_mask);
  parts.gan = losses::lsgan_generator_loss(fake_out.scores);
  if (state_.face_discriminator) {
    const int s = cfg_.face_crop_size;
    const auto fake_face = state_.face_discriminator->forward(nets::crop_boxes(out.frame, fake_faces, s),
                                                              nets::crop_boxes(driving_mask, fake_faces, s));
    parts.face_gan = losses::lsgan_generator_loss(fake_face.scores);
    if (!cfg_.cross_identity) {
      torch::NoGradGuard no_grad;
      const auto real_face = state_.face_discriminator->forward(nets::crop_boxes(target, real_faces, s),
                                                                nets::crop_boxes(target_mask, real_faces, s));
      parts.face_fm = losses::feature_matching_loss(fake_face.features, real_face.features);
    }
  }
  if (!cfg_.cross_identity) {
    std::vector<torch::Tensor> real_features;
    {
      torch::NoGradGuard no_grad;
      real_features = state_.discriminator->forward(target, target_mask).features;
    }
    parts.fm = losses::feature_matching_loss(fake_out.features, real_features);
    parts.vgg = losses::perceptual_loss(*extractor_, out.frame, target);
    if (out.warped_frames.defined()) parts.tra = losses::transformation_loss(out.warped_frames, target);
    if (cfg_.weights.gdl > 0.0) parts.gdl = losses::gradient_difference_loss(out.frame, target);
  }
  torch::Tensor total;
  try {
    total = losses::total_generator_loss(parts, cfg_.weights, cfg_.cross_identity);
  } catch (const NonFiniteLossError& e) {
    set_discriminators_trainable(true);
    throw NonFiniteLossError(e.what(), last_checkpoint_.string());
  }
  total.backward();
  state_.g_optimizer->step();
  set_discriminators_trainable(true);

  m.gan = losses::value_or_zero(parts.gan);
  m.vgg = losses::value_or_zero(parts.vgg);
  m.fm = losses::value_or_zero(parts.fm);
  m.tra = losses::value_or_zero(parts.tra);
  m.gdl = losses::value_or_zero(parts.gdl);
  m.face_gan = losses::value_or_zero(parts.face_gan);
  m.face_fm = losses::value_or_zero(parts.face_fm);
  m.total = total.item<double>();
  m.l2 = (out.frame.detach() - target).pow(2).mean().item<double>();
  return m;
}

StepMetrics Trainer::run_next_step() {
  const auto spe = steps_per_epoch();
  const int epoch = static_cast<int>(state_.step / spe);
  const double lr = lr_schedule(std::min(epoch, cfg_.epochs), cfg_);
  auto m = train_step(batch_for_step(state_.step), lr);
  m.epoch = epoch;
  state_.history.push_back(m);
  ++state_.step;
  return m;
}

std::vector<StepMetrics> Trainer::run_steps(std::int64_t count) {
  std::vector<StepMetrics> out;
  for (std::int64_t i = 0; i < count && state_.step < total_steps(); ++i) out.push_back(run_next_step());
  return out;
}

fs::path Trainer::train(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::app);
  if (!metrics) throw Error("cannot open metrics log in " + out_dir.string());
  const auto spe = steps_per_epoch();
  if (state_.step == 0) {
    save_checkpoint(out_dir / "init.pt");
    if (total_steps() == 0) return out_dir / "init.pt";
  }
  while (state_.step < total_steps()) {
    const auto m = run_next_step();
    metrics << to_json(m).dump() << '\n';
    metrics.flush();
    if (!metrics) throw Error("failed writing metrics log (disk full?)");
    const bool epoch_end = state_.step % spe == 0;
    const int finished_epochs = static_cast<int>(state_.step / spe);
    if (epoch_end && cfg_.checkpoint_interval > 0 && finished_epochs % cfg_.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%04d.pt", finished_epochs);
      save_checkpoint(out_dir / name);
      log::info("epoch " + std::to_string(finished_epochs) + ": total " + std::to_string(m.total));
    }
  }
  const auto final_path = out_dir / "final.pt";
  save_checkpoint(final_path);
  return final_path;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  torch::serialize::OutputArchive archive;
  write_string(archive, "version", kCheckpointVersion);
  write_string(archive, "train_config", to_json(cfg_).dump());
  write_string(archive, "generator_config", nets::to_json(cfg_.generator_config()).dump());
  write_string(archive, "discriminator_config", nets::to_json(cfg_.discriminator_config()).dump());
  archive.write("step", c10::IValue(static_cast<int64_t>(state_.step)));

  torch::serialize::OutputArchive g, d, g_opt, d_opt;
  state_.generator->save(g);
  state_.discriminator->save(d);
  state_.g_optimizer->save(g_opt);
  state_.d_optimizer->save(d_opt);
  archive.write("generator", g);
  archive.write("discriminator", d);
  archive.write("g_optimizer", g_opt);
  archive.write("d_optimizer", d_opt);
  if (state_.face_discriminator) {
    torch::serialize::OutputArchive fd;
    state_.face_discriminator->save(fd);
    archive.write("face_discriminator", fd);
  }

  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw Error("cannot write checkpoint " + tmp.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
  last_checkpoint_ = path;
}

void Trainer::load_checkpoint(const fs::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw Error("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  if (read_string(archive, "version") != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version in " + path.string());
  }
  const auto saved = train_config_from_json(json::parse(read_string(archive, "train_config")));
  if (nets::to_json(saved.generator_config()) != nets::to_json(cfg_.generator_config())) {
    throw ConfigError("checkpoint generator configuration differs from the trainer's");
  }
  c10::IValue step;
  archive.read("step", step);
  torch::serialize::InputArchive g, d, g_opt, d_opt;
  archive.read("generator", g);
  archive.read("discriminator", d);
  archive.read("g_optimizer", g_opt);
  archive.read("d_optimizer", d_opt);
  state_.generator->load(g);
  state_.discriminator->load(d);
  if (state_.face_discriminator) {
    torch::serialize::InputArchive fd;
    archive.read("face_discriminator", fd);
    state_.face_discriminator->load(fd);
  }
  state_.g_optimizer->load(g_opt);
  state_.d_optimizer->load(d_opt);
  state_.step = step.toInt();
  last_checkpoint_ = path;
}

TrainConfig load_checkpoint_config(const fs::path& checkpoint) {
  torch::serialize::InputArchive archive;
  archive.load_from(checkpoint.string());
  if (read_string(archive, "version") != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version in " + checkpoint.string());
  }
  return train_config_from_json(json::parse(read_string(archive, "train_config")));
}

nets::Generator load_generator(const fs::path& checkpoint) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(checkpoint.string());
  } catch (const c10::Error& e) {
    throw Error("cannot read checkpoint " + checkpoint.string() + ": " + e.what_without_backtrace());
  }
  if (read_string(archive, "version") != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version in " + checkpoint.string());
  }
  const auto cfg = nets::generator_config_from_json(json::parse(read_string(archive, "generator_config")));
  nets::Generator generator(cfg);
  torch::serialize::InputArchive g;
  archive.read("generator", g);
  generator->load(g);
  generator->eval();
  return generator;
}

}  // namespace tsnet::train
