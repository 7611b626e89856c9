#include "dualswin/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dualswin/error.hpp"

namespace dualswin {

ConfusionCounts ConfusionCounts::merge(const ConfusionCounts& o) const {
  return {tp + o.tp, fp + o.fp, fn + o.fn, tn + o.tn};
}

ConfusionCounts accumulate(const ConfusionCounts& counts, const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) fail(ErrorKind::ShapeMismatch, "prediction and ground truth differ in shape");
  auto p = pred.to(torch::kFloat64);
  auto g = gt.to(torch::kFloat64);
  auto binary = [](const torch::Tensor& t) { return ((t == 0) | (t == 1)).all().item<bool>(); };
  if (!binary(p) || !binary(g)) fail(ErrorKind::NonBinaryInput, "masks must contain only 0 and 1");
  auto pb = p.to(torch::kBool), gb = g.to(torch::kBool);
  ConfusionCounts c;
  c.tp = (pb & gb).sum().item<std::int64_t>();
  c.fp = (pb & ~gb).sum().item<std::int64_t>();
  c.fn = (~pb & gb).sum().item<std::int64_t>();
  c.tn = (~pb & ~gb).sum().item<std::int64_t>();
  return counts.merge(c);
}

namespace {
double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

SegMetrics compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) fail(ErrorKind::EmptyCounts, "no pixels accumulated");
  SegMetrics m;
  m.iou_fg = ratio(c.tp, c.tp + c.fp + c.fn);
  m.iou_bg = ratio(c.tn, c.tn + c.fp + c.fn);
  m.miou = (m.iou_fg + m.iou_bg) / 2.0;
  // A zero denominator with foreground present on the other side scores 0.
  const bool fg_absent = c.tp + c.fp + c.fn == 0;
  m.precision = c.tp + c.fp == 0 ? (fg_absent ? 1.0 : 0.0) : ratio(c.tp, c.tp + c.fp);
  m.recall = c.tp + c.fn == 0 ? (fg_absent ? 1.0 : 0.0) : ratio(c.tp, c.tp + c.fn);
  // 2PR / (P + R) written over counts so the 0/0 rule stays consistent.
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

std::string to_string(AggregationMode mode) { return mode == AggregationMode::PerTile ? "per_tile" : "global"; }

AggregationMode parse_aggregation_mode(const std::string& name) {
  if (name == "global") return AggregationMode::Global;
  if (name == "per_tile") return AggregationMode::PerTile;
  fail(ErrorKind::ConfigError, "unknown metrics mode '" + name + "' (expected global|per_tile)");
}

SegMetrics aggregate_metrics(const std::vector<ConfusionCounts>& per_tile, AggregationMode mode) {
  if (per_tile.empty()) fail(ErrorKind::EmptyCounts, "no tiles to aggregate");
  if (mode == AggregationMode::Global) {
    ConfusionCounts all;
    for (const auto& c : per_tile) all = all.merge(c);
    return compute_metrics(all);
  }
  SegMetrics mean;
  for (const auto& c : per_tile) {
    auto m = compute_metrics(c);
    mean.iou_fg += m.iou_fg;
    mean.iou_bg += m.iou_bg;
    mean.miou += m.miou;
    mean.f1 += m.f1;
    mean.precision += m.precision;
    mean.recall += m.recall;
  }
  const double n = static_cast<double>(per_tile.size());
  for (double* v : {&mean.iou_fg, &mean.iou_bg, &mean.miou, &mean.f1, &mean.precision, &mean.recall}) *v /= n;
  return mean;
}

std::string metrics_report(const SegMetrics& m, AggregationMode mode) {
  std::ostringstream out;
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << key << ' ' << buf << '\n';
  };
  out << "mode " << to_string(mode) << '\n';
  line("iou_fg", m.iou_fg);
  line("iou_bg", m.iou_bg);
  line("miou", m.miou);
  line("f1", m.f1);
  line("precision", m.precision);
  line("recall", m.recall);
  return out.str();
}

void write_metrics_report(const std::filesystem::path& path, const SegMetrics& m, AggregationMode mode) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << metrics_report(m, mode);
}

}  // namespace dualswin
