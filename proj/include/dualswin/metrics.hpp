#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dualswin {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts merge(const ConfusionCounts& other) const;
  bool operator==(const ConfusionCounts&) const = default;
};

/// Adds pixelwise counts of `pred` against `gt` (equal shapes, values {0, 1}).
/// Throws ShapeMismatch / NonBinaryInput.
ConfusionCounts accumulate(const ConfusionCounts& counts, const torch::Tensor& pred, const torch::Tensor& gt);

struct SegMetrics {
  double iou_fg = 0, iou_bg = 0, miou = 0, f1 = 0, precision = 0, recall = 0;
};

/// Ratios with a zero denominator score 1.0 (the class is absent from both
/// prediction and ground truth). Throws EmptyCounts.
SegMetrics compute_metrics(const ConfusionCounts& counts);

enum class AggregationMode { Global, PerTile };

std::string to_string(AggregationMode mode);
AggregationMode parse_aggregation_mode(const std::string& name);

/// Global mode merges all counts first; per-tile mode averages each metric
/// over tiles.
SegMetrics aggregate_metrics(const std::vector<ConfusionCounts>& per_tile, AggregationMode mode);

/// `key value` lines: mode, then iou_fg, iou_bg, miou, f1, precision, recall.
std::string metrics_report(const SegMetrics& m, AggregationMode mode);
void write_metrics_report(const std::filesystem::path& path, const SegMetrics& m, AggregationMode mode);

}  // namespace dualswin
