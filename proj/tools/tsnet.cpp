#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsnet/dataio.hpp"
#include "tsnet/errors.hpp"
#include "tsnet/log.hpp"
#include "tsnet/retarget.hpp"
#include "tsnet/toy.hpp"
#include "tsnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace tsnet;

namespace {

retarget::PerceptualMetric metric_for(const train::TrainConfig& cfg) {
  auto extractor = std::make_shared<losses::VggExtractor>(cfg.extractor_seed, cfg.extractor_width_divisor);
  if (!cfg.extractor_weights.empty()) extractor->load_weights(cfg.extractor_weights);
  return retarget::PerceptualMetric(extractor);
}

int run_train(const fs::path& config_path, const fs::path& data_root, const fs::path& out,
              const std::optional<fs::path>& resume) {
  const auto cfg = train::load_train_config(config_path);
  auto dataset = std::make_shared<dataio::Dataset>(
      dataio::load_dataset(data_root, cfg.schema, cfg.raster_style(),
                           std::pair{cfg.image_height, cfg.image_width}, static_cast<std::size_t>(cfg.K) + 1));
  log::info("loaded " + std::to_string(dataset->size()) + " clips from " + data_root.string());
  train::Trainer trainer(cfg, dataset);
  if (resume) trainer.load_checkpoint(*resume);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << train::to_json(cfg).dump(2) << '\n';
  const auto final_path = trainer.train(out);
  std::cout << final_path.string() << '\n';
  return 0;
}

int run_retarget(const fs::path& checkpoint, const fs::path& subject_dir, const fs::path& driving_dir,
                 const fs::path& out, std::optional<int> k, std::uint64_t seed, bool normalize) {
  const auto cfg = train::load_checkpoint_config(checkpoint);
  auto synthesizer = retarget::GeneratorSynthesizer::from_checkpoint(checkpoint);
  const std::pair size{cfg.image_height, cfg.image_width};

  retarget::RetargetJob job;
  job.subject = dataio::load_clip(subject_dir, cfg.raster_style(), size, subject_dir.filename().string());
  job.driving = dataio::load_clip(driving_dir, cfg.raster_style(), std::nullopt, driving_dir.filename().string());
  job.K = k.value_or(cfg.K);
  job.seed = seed;
  job.normalize = normalize;
  job.style = cfg.raster_style();
  const auto result = retarget::retarget(job, *synthesizer);

  retarget::EvalReport report;
  report.mode = "retarget";
  report.config = {{"K", job.K}, {"seed", seed}, {"normalize", normalize}, {"checkpoint", checkpoint.string()}};
  retarget::VideoReport v;
  v.video_id = job.subject.clip_id + "<-" + job.driving.clip_id;
  v.subject_clip = job.subject.clip_id;
  v.driving_clip = job.driving.clip_id;
  v.subject_indices = result.subject_indices;
  v.driving_indices = result.driving_indices;
  v.skipped = result.skipped;
  v.subject_frame = job.subject.frames[result.subject_indices.front()];
  v.generated = result.frames;
  for (const auto& m : result.driving_masks) v.driving_masks.push_back(m.raster);
  report.videos.push_back(std::move(v));
  retarget::emit_report(report, out);
  std::cout << result.frames.size() << " frames written to " << out.string() << '\n';
  return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& data_root, const std::string& mode, const fs::path& out,
             std::optional<int> k, std::uint64_t seed) {
  const auto cfg = train::load_checkpoint_config(checkpoint);
  auto synthesizer = retarget::GeneratorSynthesizer::from_checkpoint(checkpoint);
  retarget::EvalOptions options;
  options.K = k.value_or(cfg.K);
  options.seed = seed;
  options.style = cfg.raster_style();
  const auto dataset = dataio::load_dataset(data_root, cfg.schema, cfg.raster_style(),
                                            std::pair{cfg.image_height, cfg.image_width}, 1);
  const auto metric = metric_for(cfg);
  auto report = mode == "self" ? retarget::self_reconstruction_eval(dataset, *synthesizer, metric, options)
                               : retarget::cross_identity_eval(dataset, *synthesizer, metric, options);
  report.config["checkpoint"] = checkpoint.string();
  retarget::emit_report(report, out);
  const auto l2 = report.mean_l2();
  const auto lp = report.mean_perceptual();
  std::cout << report.videos.size() << " videos, " << report.frame_count() << " frames";
  if (l2) std::cout << ", mean L2 " << *l2;
  if (lp) std::cout << ", mean perceptual " << *lp << " (" << report.metric_provenance << ")";
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TS-Net video motion retargeting"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Errors only");

  auto* train_cmd = app.add_subcommand("train", "Train a generator on a dataset directory");
  fs::path config, data_root, out;
  std::optional<fs::path> resume;
  train_cmd->add_option("--config", config, "Training config (flat JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data-root", data_root, "Dataset root with manifest.json")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* retarget_cmd = app.add_subcommand("retarget", "Drive a subject clip with another clip's keypoints");
  fs::path checkpoint, subject, driving;
  std::optional<int> k;
  std::uint64_t seed = 0;
  bool no_normalize = false;
  retarget_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  retarget_cmd->add_option("--subject", subject, "Subject clip directory")->required();
  retarget_cmd->add_option("--driving", driving, "Driving clip directory")->required();
  retarget_cmd->add_option("--out", out)->required();
  retarget_cmd->add_option("--k", k, "Subject frames (default: training K)")->check(CLI::PositiveNumber);
  retarget_cmd->add_option("--seed", seed);
  retarget_cmd->add_flag("--no-normalize", no_normalize, "Use driving keypoints as they are");

  auto* eval_cmd = app.add_subcommand("eval", "Self-reconstruction or cross-identity evaluation");
  std::string mode = "self";
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data-root", data_root)->required();
  eval_cmd->add_option("--mode", mode)->check(CLI::IsMember({"self", "cross"}));
  eval_cmd->add_option("--out", out)->required();
  eval_cmd->add_option("--k", k)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", seed);

  auto* toy_cmd = app.add_subcommand("make-toy", "Write a synthetic dataset");
  toy::ToyOptions toy_options;
  std::string schema = "face68";
  int subjects = 2;
  int clips_per_subject = 1;
  int size = 64;
  toy_cmd->add_option("--out", out)->required();
  toy_cmd->add_option("--schema", schema)->check(CLI::IsMember({"face68", "body"}));
  toy_cmd->add_option("--subjects", subjects)->check(CLI::PositiveNumber);
  toy_cmd->add_option("--clips-per-subject", clips_per_subject)->check(CLI::PositiveNumber);
  toy_cmd->add_option("--frames", toy_options.frames)->check(CLI::PositiveNumber);
  toy_cmd->add_option("--size", size, "Frame height and width")->check(CLI::Range(8, 1024));
  toy_cmd->add_option("--drop-every", toy_options.drop_every, "Drop keypoints of every n-th frame");
  toy_cmd->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);
  if (verbose) log::set_level(log::Level::kDebug);
  if (quiet) log::set_level(log::Level::kError);

  try {
    if (train_cmd->parsed()) return run_train(config, data_root, out, resume);
    if (retarget_cmd->parsed()) return run_retarget(checkpoint, subject, driving, out, k, seed, !no_normalize);
    if (eval_cmd->parsed()) return run_eval(checkpoint, data_root, mode, out, k, seed);
    if (toy_cmd->parsed()) {
      toy_options.schema = schema_from_string(schema);
      toy_options.height = toy_options.width = size;
      toy::write_toy_dataset(out, toy_options, subjects, clips_per_subject, seed);
      std::cout << subjects * clips_per_subject << " clips written to " << out.string() << '\n';
      return 0;
    }
  } catch (const NonFiniteLossError& e) {
    log::error(std::string(e.what()) + "; last good checkpoint: " + e.last_good_checkpoint());
    return 3;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
