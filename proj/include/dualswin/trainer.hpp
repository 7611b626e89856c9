#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dualswin/augment.hpp"
#include "dualswin/checkpoint.hpp"
#include "dualswin/losses.hpp"
#include "dualswin/metrics.hpp"
#include "dualswin/network.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin {

enum class Precision { Fp32, Fp16 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  int epochs = 50;
  int batch = 16;
  int warmup_epochs = 3;
  double ema_gamma = 0.995;
  int folds = 5;
  std::uint64_t seed = 0;
  /// Fp16 needs an accelerator; CPU runs fall back to Fp32 with a warning.
  Precision precision = Precision::Fp32;
  /// Threshold for the per-epoch validation masks.
  double val_threshold = 0.5;
  AggregationMode metrics_mode = AggregationMode::Global;
  LossConfig loss;
  AugmentPolicy augment;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup over warmup_epochs * steps_per_epoch steps, then cosine decay
/// to 0 at epochs * steps_per_epoch.
double lr_at_step(std::int64_t t, const TrainConfig& cfg, std::int64_t steps_per_epoch);

/// Shadow copy of the trainable parameters. Buffers are not averaged; EMA
/// evaluation uses the live model's buffers.
struct EmaState {
  TensorMap shadow;
  double gamma = 0.995;
  std::int64_t steps = 0;
};

EmaState ema_init(const torch::nn::Module& model, double gamma);
/// shadow <- gamma * shadow + (1 - gamma) * params. Throws ShapeMismatch.
void ema_update(EmaState& state, const TensorMap& params);
TensorMap named_parameters(const torch::nn::Module& module);

enum class WeightSource { Instant, Ema };

std::string to_string(WeightSource s);

/// argmax of the two scores; ties go to EMA.
WeightSource select_checkpoint(double instant_miou, double ema_miou);

/// A stage-1 scaled tile with its mask.
struct Sample {
  ModalPair pair;  // C x H x W, stage 1 only
  torch::Tensor mask;
  std::string id;
};

Sample make_sample(const RawTile& tile);
std::vector<Sample> make_samples(const std::vector<RawTile>& tiles);

/// Stage-2 standardizes the listed samples and stacks them into one batch.
ModalPair stack_pairs(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                      const NormStats& stats);

/// Thresholded predictions of `model` over all samples (eval mode).
std::vector<ConfusionCounts> evaluate_counts(DualSwinNet& model, const std::vector<Sample>& samples,
                                             const NormStats& stats, double threshold, int batch = 8);
SegMetrics evaluate(DualSwinNet& model, const std::vector<Sample>& samples, const NormStats& stats,
                    double threshold, AggregationMode mode = AggregationMode::Global, int batch = 8);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_miou_instant = 0;
  double val_miou_ema = 0;
  WeightSource selected = WeightSource::Ema;
};

/// CSV with header epoch,lr,train_loss,val_miou_instant,val_miou_ema,selected.
std::string epoch_log_csv(const std::vector<EpochLog>& log);

struct FoldData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  NormStats stats;
};

struct FoldResult {
  int fold = 0;
  TensorMap best_state;
  WeightSource best_source = WeightSource::Ema;
  int best_epoch = -1;
  double best_miou = -1.0;
  double w_plus = 1.0;
  NormStats stats;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
};

/// Per-epoch hook, e.g. for progress output.
using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `model` in place and returns the best (epoch, source) snapshot.
/// The model is left holding its final instantaneous weights.
FoldResult train_fold(DualSwinNet& model, const FoldData& data, const TrainConfig& cfg, int fold = 0,
                      const EpochCallback& on_epoch = {});

struct CvResult {
  std::vector<FoldResult> folds;
  double mean = 0;
  double std = 0;
  std::string report;
};

/// Population mean and std.
std::pair<double, double> mean_std(const std::vector<double>& values);
/// Plain-text table: one row per fold, then `cv_miou <mean> +- <std>`.
std::string cv_report(const std::vector<double>& fold_mious, const std::vector<WeightSource>& sources,
                      const std::vector<int>& epochs);

/// k-fold driver: folds from make_folds(cfg.folds, cfg.seed); NormStats from
/// each fold's training tiles. When `out_dir` is set, writes
/// fold_<k>/{checkpoint, train_log.csv} and cv_report.txt there.
/// `only_fold` >= 0 trains a single fold. `on_model` runs on each freshly
/// built model, e.g. to load pretrained encoders.
CvResult run_cv(const std::vector<RawTile>& tiles, const ModelConfig& model_cfg, const TrainConfig& cfg,
                const std::filesystem::path& out_dir = {}, int only_fold = -1, const EpochCallback& on_epoch = {},
                const std::function<void(DualSwinNet&)>& on_model = {});

}  // namespace dualswin
