#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dualswin/metrics.hpp"
#include "dualswin/network.hpp"
#include "dualswin/raster_io.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin {

/// The eight symmetries of the square, acting on the last two dims.
enum class View { Identity, HFlip, VFlip, Rot90, Rot180, Rot270, Transpose, AntiTranspose };

std::string to_string(View v);
View parse_view(const std::string& name);

torch::Tensor apply_view(const torch::Tensor& x, View v);
torch::Tensor invert_view(const torch::Tensor& x, View v);
ModalPair apply_view(const ModalPair& pair, View v);

struct TtaPolicy {
  std::string name = "none";
  std::vector<View> views = {View::Identity};

  /// none = {identity}; 2view = {identity, hflip, vflip};
  /// 4view = {identity, hflip, vflip, rot90}; 8view = all eight.
  static TtaPolicy preset(const std::string& name);
  bool operator==(const TtaPolicy&) const = default;
};

/// Maps a normalized pair to a probability map (same spatial size).
using Predictor = std::function<torch::Tensor(const ModalPair&)>;

struct ProbabilityMap {
  torch::Tensor probs;  // float32, same leading shape as the predictor output
  std::vector<std::pair<std::string, std::string>> provenance;  // (model id, view)
};

/// Mean over every (model, view) of v^-1(model(v(pair))). Accumulated in
/// double, models outer and views inner.
ProbabilityMap tta_predict(const std::vector<Predictor>& models, const std::vector<std::string>& model_ids,
                           const ModalPair& pair, const TtaPolicy& policy);
ProbabilityMap tta_predict(std::vector<DualSwinNet>& models, const ModalPair& pair, const TtaPolicy& policy);

/// 1 where prob >= tau. Throws BadThreshold unless 0 < tau < 1.
torch::Tensor binarize(const torch::Tensor& probs, double tau);

struct PredictOptions {
  TtaPolicy policy;
  double tau = 0.51;
  std::optional<RasterFormat> format;  // default: same as the input tile
  MaskSource mask_source = MaskSource::Sibling;
  AggregationMode metrics_mode = AggregationMode::Global;
};

struct PredictSummary {
  std::vector<std::filesystem::path> written;
  std::optional<SegMetrics> metrics;  // when every tile has a mask
};

/// Predicts every tile under `tile_dir`, writing one uint8 mask per tile to
/// `out_dir` (same stem) and metrics.txt when ground truth exists.
PredictSummary predict_dataset(std::vector<DualSwinNet>& models, const std::filesystem::path& tile_dir,
                               const NormStats& stats, const PredictOptions& options,
                               const std::filesystem::path& out_dir);

}  // namespace dualswin
