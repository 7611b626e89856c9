// dualswin command-line entry point: synth, stats, train, eval, predict, audit.

#include <CLI11.hpp>
#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dualswin/config.hpp"
#include "dualswin/error.hpp"
#include "dualswin/inference.hpp"
#include "dualswin/metrics.hpp"
#include "dualswin/network.hpp"
#include "dualswin/raster_io.hpp"
#include "dualswin/rng.hpp"
#include "dualswin/tile_io.hpp"
#include "dualswin/trainer.hpp"

namespace fs = std::filesystem;
using namespace dualswin;

namespace {

RasterFormat format_from_name(const std::string& name) {
  if (name == "geotiff") {
    if (!geotiff_supported()) fail(ErrorKind::ConfigError, "this build has no GeoTIFF support");
    return RasterFormat::GeoTiff;
  }
  return RasterFormat::Raw;
}

std::vector<RawTile> load_dir(const fs::path& dir, MaskSource source) {
  std::vector<RawTile> tiles;
  for (const auto& p : list_tiles(dir)) {
    tiles.push_back(load_tile(p, source));
    validate_tile(tiles.back());
  }
  if (tiles.empty()) fail(ErrorKind::EmptyDataset, "no tiles in " + dir.string());
  return tiles;
}

int cmd_synth(int n, int size, std::uint64_t seed, double fg, const std::string& format, const fs::path& out) {
  const auto fmt = format_from_name(format);
  fs::create_directories(out);
  for (int i = 0; i < n; ++i) {
    SynthParams p;
    p.size = size;
    p.foreground_fraction_target = fg;
    p.seed = derive_seed(seed, "synth", static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "tile_%04d", i);
    auto tile = generate_synthetic_tile(p, name);
    save_tile(out / (std::string(name) + raster_extension(fmt)), tile);
  }
  std::cout << "wrote " << n << " tiles to " << out.string() << "\n";
  return 0;
}

int cmd_stats(const fs::path& data, const std::string& mask_source, const fs::path& out) {
  const auto tiles = load_dir(data, parse_mask_source(mask_source));
  const auto stats = compute_norm_stats(tiles);
  save_norm_stats(out, stats);
  std::vector<torch::Tensor> masks;
  for (const auto& t : tiles)
    if (t.mask) masks.push_back(*t.mask);
  std::cout << "stats for " << tiles.size() << " tiles written to " << out.string() << "\n";
  if (masks.size() == tiles.size()) std::printf("w_plus %.6f\n", compute_class_weight(masks));
  return 0;
}

int cmd_train(const fs::path& config_path, int fold, const std::string& data_override,
              const std::string& out_override) {
  auto cfg = load_config(config_path);
  apply_env_overrides(cfg);
  if (!data_override.empty()) cfg.data.root = data_override;
  if (!out_override.empty()) cfg.data.output_root = out_override;
  torch::set_num_threads(1);

  const auto tiles = load_dir(cfg.data.root, cfg.data.mask_source);
  const fs::path out = cfg.data.output_root;
  fs::create_directories(out);
  std::ofstream(out / "config.yaml", std::ios::binary) << serialize_config(cfg);

  auto progress = [](const EpochLog& e) {
    std::printf("epoch %3d  lr %.3e  loss %.5f  miou instant %.4f  ema %.4f  -> %s\n", e.epoch, e.lr, e.train_loss,
                e.val_miou_instant, e.val_miou_ema, to_string(e.selected).c_str());
    std::fflush(stdout);
  };
  auto init = [&](DualSwinNet& model) { load_pretrained_encoders(model, cfg.pretrained); };
  const auto cv = run_cv(tiles, cfg.model, cfg.train, out, fold, progress, init);
  std::cout << cv.report;
  return 0;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& mask_source,
             const std::string& mode_name, const std::string& out) {
  const auto mode = parse_aggregation_mode(mode_name);
  const auto source = parse_mask_source(mask_source);
  std::vector<ConfusionCounts> counts;
  for (const auto& gt_path : list_tiles(gt_dir)) {
    const auto tile = load_tile(gt_path, source);
    if (!tile.mask) fail(ErrorKind::IoError, "no ground-truth mask for " + gt_path.string());
    fs::path pred_path;
    for (const char* ext : {".mmt", ".tif", ".tiff"}) {
      auto candidate = pred_dir / (gt_path.stem().string() + ext);
      if (fs::exists(candidate)) pred_path = candidate;
    }
    if (pred_path.empty()) fail(ErrorKind::IoError, "no prediction for " + gt_path.stem().string());
    auto pred = read_raster(pred_path);
    if (pred.size(0) != 1) fail(ErrorKind::BandCountMismatch, "prediction must be single band");
    counts.push_back(accumulate({}, pred[0], *tile.mask));
  }
  const auto report = metrics_report(aggregate_metrics(counts, mode), mode);
  std::cout << report;
  if (!out.empty()) std::ofstream(out, std::ios::binary) << report;
  return 0;
}

int cmd_predict(const std::vector<std::string>& checkpoints, const std::string& tta, double tau,
                const std::string& stats_path, const fs::path& data, const fs::path& out,
                const std::string& mask_source, const std::string& format) {
  torch::set_num_threads(1);
  std::vector<DualSwinNet> models;
  std::optional<NormStats> stats;
  for (const auto& c : checkpoints) {
    auto ck = load_checkpoint(c);
    models.push_back(ck.model);
    if (!stats) stats = ck.stats;
  }
  if (!stats_path.empty()) stats = load_norm_stats(stats_path);
  if (!stats) fail(ErrorKind::StatsMissing, "no --stats given and the checkpoint carries none");

  PredictOptions opt;
  opt.policy = TtaPolicy::preset(tta);
  opt.tau = tau;
  opt.mask_source = parse_mask_source(mask_source);
  if (!format.empty()) opt.format = format_from_name(format);
  const auto summary = predict_dataset(models, data, *stats, opt, out);
  std::cout << "wrote " << summary.written.size() << " masks to " << out.string() << " (tta " << opt.policy.name
            << ", " << models.size() * opt.policy.views.size() << " maps per tile)\n";
  if (summary.metrics) std::cout << metrics_report(*summary.metrics, opt.metrics_mode);
  return 0;
}

int cmd_audit(const std::string& config_path, const std::string& preset) {
  ModelConfig m;
  if (!config_path.empty()) {
    m = load_config(config_path).model;
  } else if (preset == "full") {
    m = ModelConfig::full();
  } else if (preset != "desk") {
    fail(ErrorKind::ConfigError, "preset must be desk or full");
  }
  DualSwinNet model(m);
  std::cout << parameter_audit(model).to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-encoder shifted-window segmentation for multimodal landslide tiles"};
  app.require_subcommand(1);

  int synth_n = 8, synth_size = 64;
  std::uint64_t synth_seed = 0;
  double synth_fg = 0.35;
  std::string synth_format = "raw", synth_out;
  auto* synth = app.add_subcommand("synth", "Write deterministic synthetic 7-band tiles with masks");
  synth->add_option("--n", synth_n, "Number of tiles")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Tile side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Root seed");
  synth->add_option("--fg", synth_fg, "Target mean foreground fraction");
  synth->add_option("--format", synth_format, "raw or geotiff")->check(CLI::IsMember({"raw", "geotiff"}));
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string stats_data, stats_out, stats_mask = "sibling";
  auto* stats = app.add_subcommand("stats", "Compute per-channel normalization statistics");
  stats->add_option("--data", stats_data, "Tile directory")->required();
  stats->add_option("--mask-source", stats_mask, "sibling or band8");
  stats->add_option("--out", stats_out, "Output stats file")->required();

  std::string train_config, train_data, train_out;
  int train_fold = -1;
  auto* train = app.add_subcommand("train", "Cross-validated training (all folds or one)");
  train->add_option("--config", train_config, "Experiment YAML")->required();
  train->add_option("--fold", train_fold, "Train only this fold");
  train->add_option("--data", train_data, "Override data.root");
  train->add_option("--out", train_out, "Override data.output_root");

  std::string eval_pred, eval_gt, eval_mode = "global", eval_out, eval_mask = "sibling";
  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  eval->add_option("--pred", eval_pred, "Directory of predicted masks")->required();
  eval->add_option("--gt", eval_gt, "Tile directory with ground-truth masks")->required();
  eval->add_option("--mode", eval_mode, "global or per_tile");
  eval->add_option("--mask-source", eval_mask, "sibling or band8");
  eval->add_option("--out", eval_out, "Also write the report here");

  std::vector<std::string> pred_ckpts;
  std::string pred_tta = "4view", pred_stats, pred_data, pred_out, pred_mask = "sibling", pred_format;
  double pred_tau = 0.51;
  auto* predict = app.add_subcommand("predict", "Ensemble + TTA inference over a tile directory");
  predict->add_option("--checkpoints", pred_ckpts, "Checkpoint directories")->required();
  predict->add_option("--tta", pred_tta, "none, 2view, 4view or 8view")
      ->check(CLI::IsMember({"none", "2view", "4view", "8view"}));
  predict->add_option("--tau", pred_tau, "Binarization threshold");
  predict->add_option("--stats", pred_stats, "NormStats file (default: from the first checkpoint)");
  predict->add_option("--data", pred_data, "Tile directory")->required();
  predict->add_option("--out", pred_out, "Output directory")->required();
  predict->add_option("--mask-source", pred_mask, "sibling or band8");
  predict->add_option("--format", pred_format, "raw or geotiff (default: as input)");

  std::string audit_config, audit_preset = "desk";
  auto* audit = app.add_subcommand("audit", "Print per-component parameter counts");
  audit->add_option("--config", audit_config, "Experiment YAML");
  audit->add_option("--preset", audit_preset, "desk or full when no config is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(synth_n, synth_size, synth_seed, synth_fg, synth_format, synth_out);
    if (*stats) return cmd_stats(stats_data, stats_mask, stats_out);
    if (*train) return cmd_train(train_config, train_fold, train_data, train_out);
    if (*eval) return cmd_eval(eval_pred, eval_gt, eval_mask, eval_mode, eval_out);
    if (*predict)
      return cmd_predict(pred_ckpts, pred_tta, pred_tau, pred_stats, pred_data, pred_out, pred_mask, pred_format);
    if (*audit) return cmd_audit(audit_config, audit_preset);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
