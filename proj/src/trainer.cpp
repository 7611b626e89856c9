#include "dualswin/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dualswin/config.hpp"
#include "dualswin/error.hpp"
#include "dualswin/rng.hpp"

namespace dualswin {

std::string to_string(Precision p) { return p == Precision::Fp16 ? "fp16" : "fp32"; }

Precision parse_precision(const std::string& name) {
  if (name == "fp32") return Precision::Fp32;
  if (name == "fp16") return Precision::Fp16;
  fail(ErrorKind::ConfigError, "unknown precision '" + name + "' (expected fp32|fp16)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorKind::ConfigError, "lr must be positive");
  if (weight_decay < 0.0) fail(ErrorKind::ConfigError, "weight_decay must be nonnegative");
  if (epochs < 1 || batch < 1) fail(ErrorKind::ConfigError, "epochs and batch must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) fail(ErrorKind::ConfigError, "warmup_epochs must be < epochs");
  if (!(ema_gamma > 0.0 && ema_gamma < 1.0)) fail(ErrorKind::ConfigError, "ema_gamma must lie in (0, 1)");
  if (folds < 2) fail(ErrorKind::ConfigError, "folds must be at least 2");
  if (!(val_threshold > 0.0 && val_threshold < 1.0)) fail(ErrorKind::BadThreshold, "val_threshold must lie in (0, 1)");
  loss.validate();
  augment.validate();
}

double lr_at_step(std::int64_t t, const TrainConfig& cfg, std::int64_t steps_per_epoch) {
  const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  if (t < warm) return cfg.lr * static_cast<double>(t + 1) / static_cast<double>(warm);
  if (t >= total) return 0.0;
  const double progress = static_cast<double>(t - warm) / static_cast<double>(total - warm);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TensorMap named_parameters(const torch::nn::Module& module) {
  TensorMap out;
  for (const auto& item : module.named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

EmaState ema_init(const torch::nn::Module& model, double gamma) {
  EmaState s;
  s.gamma = gamma;
  for (auto& [name, t] : named_parameters(model)) s.shadow.emplace_back(name, t.detach().clone());
  return s;
}

void ema_update(EmaState& state, const TensorMap& params) {
  if (params.size() != state.shadow.size()) fail(ErrorKind::ShapeMismatch, "EMA parameter count changed");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& shadow = state.shadow[i].second;
    const auto& p = params[i].second;
    if (shadow.sizes() != p.sizes()) fail(ErrorKind::ShapeMismatch, "EMA shape mismatch at " + params[i].first);
    shadow.mul_(state.gamma).add_(p.detach(), 1.0 - state.gamma);
  }
  ++state.steps;
}

std::string to_string(WeightSource s) { return s == WeightSource::Instant ? "instant" : "ema"; }

WeightSource select_checkpoint(double instant_miou, double ema_miou) {
  return instant_miou > ema_miou ? WeightSource::Instant : WeightSource::Ema;
}

Sample make_sample(const RawTile& tile) {
  validate_tile(tile);
  if (!tile.mask) fail(ErrorKind::ShapeMismatch, "training tile " + tile.tile_id + " has no mask");
  return {prepare_stage1(tile), tile.mask->to(torch::kFloat32), tile.tile_id};
}

std::vector<Sample> make_samples(const std::vector<RawTile>& tiles) {
  std::vector<Sample> out;
  out.reserve(tiles.size());
  for (const auto& t : tiles) out.push_back(make_sample(t));
  return out;
}

ModalPair stack_pairs(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                      const NormStats& stats) {
  std::vector<torch::Tensor> rgb, aux;
  for (auto i : indices) {
    auto p = standardize(samples[i].pair, stats);
    rgb.push_back(p.rgb);
    aux.push_back(p.aux);
  }
  return {torch::stack(rgb), torch::stack(aux), true};
}

std::vector<ConfusionCounts> evaluate_counts(DualSwinNet& model, const std::vector<Sample>& samples,
                                             const NormStats& stats, double threshold, int batch) {
  std::vector<ConfusionCounts> counts;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch); ++i) idx.push_back(i);
    auto probs = predict_prob(model, stack_pairs(samples, idx, stats));
    auto masks = (probs >= threshold).to(torch::kFloat32);
    for (std::size_t k = 0; k < idx.size(); ++k)
      counts.push_back(accumulate({}, masks[k][0], samples[idx[k]].mask));
  }
  return counts;
}

SegMetrics evaluate(DualSwinNet& model, const std::vector<Sample>& samples, const NormStats& stats,
                    double threshold, AggregationMode mode, int batch) {
  return aggregate_metrics(evaluate_counts(model, samples, stats, threshold, batch), mode);
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,val_miou_instant,val_miou_ema,selected\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.6f,%.6f,%s\n", e.epoch, e.lr, e.train_loss, e.val_miou_instant,
                  e.val_miou_ema, to_string(e.selected).c_str());
    out << buf;
  }
  return out.str();
}

namespace {

/// Live state with parameters replaced by the EMA shadow.
TensorMap ema_snapshot(const torch::nn::Module& model, const EmaState& ema) {
  TensorMap state = clone_state(model);
  for (std::size_t i = 0; i < ema.shadow.size(); ++i) state[i].second = ema.shadow[i].second.clone();
  return state;
}

torch::Tensor total_loss(const NetworkOutput& out, const torch::Tensor& y, const LossConfig& cfg) {
  auto loss = compute_loss(out.logits, y, cfg);
  if (out.aux_logits.empty()) return loss;
  for (const auto& a : out.aux_logits) loss = loss + compute_loss(a, y, cfg);
  return loss / static_cast<double>(1 + out.aux_logits.size());
}

}  // namespace

FoldResult train_fold(DualSwinNet& model, const FoldData& data, const TrainConfig& cfg, int fold,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) fail(ErrorKind::EmptyDataset, "fold has no training tiles");
  if (data.val.empty()) fail(ErrorKind::EmptyDataset, "fold has no validation tiles");
  if (cfg.precision == Precision::Fp16)
    std::cerr << "warning: fp16 requested but training runs on CPU; using fp32\n";

  FoldResult result;
  result.fold = fold;
  result.stats = data.stats;

  LossConfig loss_cfg = cfg.loss;
  if (loss_cfg.w_plus_auto) {
    std::vector<torch::Tensor> masks;
    for (const auto& s : data.train) masks.push_back(s.mask);
    loss_cfg.w_plus = compute_class_weight(masks);
  }
  result.w_plus = loss_cfg.w_plus;

  torch::optim::AdamW optimizer(model->parameters(),
                                torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  EmaState ema = ema_init(*model, cfg.ema_gamma);
  DualSwinNet shadow_model(model->config());

  const std::size_t n = data.train.size();
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + cfg.batch - 1) / cfg.batch);
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model->train();
    Rng order_rng(derive_seed(cfg.seed, "shuffle", (static_cast<std::uint64_t>(fold) << 32) | epoch));
    Rng aug_rng(derive_seed(cfg.seed, "augment", (static_cast<std::uint64_t>(fold) << 32) | epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr_at_step(step, cfg, steps_per_epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      std::vector<torch::Tensor> rgb, aux, masks;
      for (std::size_t k = start; k < std::min(n, start + cfg.batch); ++k) {
        const auto& s = data.train[order[k]];
        auto g = apply_geometric(s.pair, s.mask, cfg.augment, aug_rng);
        g.pair.rgb = apply_photometric(g.pair.rgb, cfg.augment, aug_rng);
        auto p = standardize(g.pair, data.stats);
        rgb.push_back(p.rgb);
        aux.push_back(p.aux);
        masks.push_back(g.mask);
      }
      ModalPair batch{torch::stack(rgb), torch::stack(aux), true};
      auto y = torch::stack(masks).unsqueeze(1);

      const double lr = lr_at_step(step, cfg, steps_per_epoch);
      for (auto& group : optimizer.param_groups())
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

      optimizer.zero_grad();
      auto loss = total_loss(model->forward_outputs(batch), y, loss_cfg);
      loss.backward();
      optimizer.step();
      ema_update(ema, named_parameters(*model));

      const double v = loss.item<double>();
      result.step_losses.push_back(v);
      loss_sum += v;
      ++step;
    }
    entry.train_loss = loss_sum / static_cast<double>(steps_per_epoch);

    entry.val_miou_instant = evaluate(model, data.val, data.stats, cfg.val_threshold, cfg.metrics_mode).miou;
    auto ema_state = ema_snapshot(*model, ema);
    load_state(*shadow_model, ema_state);
    entry.val_miou_ema = evaluate(shadow_model, data.val, data.stats, cfg.val_threshold, cfg.metrics_mode).miou;
    entry.selected = select_checkpoint(entry.val_miou_instant, entry.val_miou_ema);

    const double best_now = entry.selected == WeightSource::Ema ? entry.val_miou_ema : entry.val_miou_instant;
    if (best_now > result.best_miou) {
      result.best_miou = best_now;
      result.best_epoch = epoch;
      result.best_source = entry.selected;
      result.best_state = entry.selected == WeightSource::Ema ? std::move(ema_state) : clone_state(*model);
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::string cv_report(const std::vector<double>& fold_mious, const std::vector<WeightSource>& sources,
                      const std::vector<int>& epochs) {
  std::ostringstream out;
  char buf[128];
  out << "fold  val_miou  source   epoch\n";
  for (std::size_t k = 0; k < fold_mious.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%-4zu  %.6f  %-7s  %d\n", k, fold_mious[k],
                  k < sources.size() ? to_string(sources[k]).c_str() : "-", k < epochs.size() ? epochs[k] : -1);
    out << buf;
  }
  const auto [mean, sd] = mean_std(fold_mious);
  std::snprintf(buf, sizeof buf, "cv_miou %.6f +- %.6f\n", mean, sd);
  out << buf;
  return out.str();
}

CvResult run_cv(const std::vector<RawTile>& tiles, const ModelConfig& model_cfg, const TrainConfig& cfg,
                const std::filesystem::path& out_dir, int only_fold, const EpochCallback& on_epoch,
                const std::function<void(DualSwinNet&)>& on_model) {
  cfg.validate();
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    ids.push_back(tiles[i].tile_id);
    by_id[tiles[i].tile_id] = i;
  }
  if (by_id.size() != tiles.size()) fail(ErrorKind::ConfigError, "tile ids must be unique");
  const auto split = make_folds(ids, cfg.folds, cfg.seed);
  if (only_fold >= cfg.folds) fail(ErrorKind::ConfigError, "fold index out of range");

  CvResult cv;
  std::vector<double> scores;
  std::vector<WeightSource> sources;
  std::vector<int> epochs;
  for (int k = 0; k < cfg.folds; ++k) {
    if (only_fold >= 0 && k != only_fold) continue;
    std::vector<RawTile> train_tiles, val_tiles;
    for (const auto& id : split.complement(k)) train_tiles.push_back(tiles[by_id.at(id)]);
    for (const auto& id : split.fold_members(k)) val_tiles.push_back(tiles[by_id.at(id)]);

    FoldData data;
    data.train = make_samples(train_tiles);
    data.val = make_samples(val_tiles);
    data.stats = compute_norm_stats(train_tiles);

    torch::manual_seed(derive_seed(cfg.seed, "init", static_cast<std::uint64_t>(k)));
    DualSwinNet model(model_cfg);
    if (on_model) on_model(model);
    auto result = train_fold(model, data, cfg, k, on_epoch);

    if (!out_dir.empty()) {
      const auto fold_dir = out_dir / ("fold_" + std::to_string(k));
      std::filesystem::create_directories(fold_dir);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", result.best_miou);
      save_checkpoint(fold_dir / "checkpoint", model_cfg, result.best_state, result.stats,
                      {{"fold", std::to_string(k)},
                       {"epoch", std::to_string(result.best_epoch)},
                       {"source", to_string(result.best_source)},
                       {"val_miou", buf}});
      std::ofstream(fold_dir / "train_log.csv", std::ios::binary) << epoch_log_csv(result.log);
      std::ofstream(fold_dir / "val_tiles.txt", std::ios::binary) << [&] {
        std::string s;
        for (const auto& id : split.fold_members(k)) s += id + "\n";
        return s;
      }();
    }
    scores.push_back(result.best_miou);
    sources.push_back(result.best_source);
    epochs.push_back(result.best_epoch);
    cv.folds.push_back(std::move(result));
  }
  std::tie(cv.mean, cv.std) = mean_std(scores);
  cv.report = cv_report(scores, sources, epochs);
  if (!out_dir.empty()) std::ofstream(out_dir / "cv_report.txt", std::ios::binary) << cv.report;
  return cv;
}

}  // namespace dualswin
