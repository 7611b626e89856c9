#include "dualswin/inference.hpp"

#include <array>

#include "dualswin/error.hpp"

namespace dualswin {

namespace {
constexpr std::array<std::pair<View, const char*>, 8> kViews = {{
    {View::Identity, "identity"},
    {View::HFlip, "hflip"},
    {View::VFlip, "vflip"},
    {View::Rot90, "rot90"},
    {View::Rot180, "rot180"},
    {View::Rot270, "rot270"},
    {View::Transpose, "transpose"},
    {View::AntiTranspose, "anti_transpose"},
}};

View inverse(View v) {
  switch (v) {
    case View::Rot90:
      return View::Rot270;
    case View::Rot270:
      return View::Rot90;
    default:
      return v;  // the rest are involutions
  }
}
}  // namespace

std::string to_string(View v) {
  for (const auto& [k, n] : kViews)
    if (k == v) return n;
  return "?";
}

View parse_view(const std::string& name) {
  for (const auto& [k, n] : kViews)
    if (name == n) return k;
  fail(ErrorKind::ConfigError, "unknown TTA view '" + name + "'");
}

torch::Tensor apply_view(const torch::Tensor& x, View v) {
  switch (v) {
    case View::Identity:
      return x;
    case View::HFlip:
      return torch::flip(x, {-1});
    case View::VFlip:
      return torch::flip(x, {-2});
    case View::Rot90:
      return torch::rot90(x, 1, {-2, -1});
    case View::Rot180:
      return torch::rot90(x, 2, {-2, -1});
    case View::Rot270:
      return torch::rot90(x, 3, {-2, -1});
    case View::Transpose:
      return x.transpose(-2, -1).contiguous();
    case View::AntiTranspose:
      return torch::flip(x.transpose(-2, -1), {-2, -1});
  }
  return x;
}

torch::Tensor invert_view(const torch::Tensor& x, View v) { return apply_view(x, inverse(v)); }

ModalPair apply_view(const ModalPair& pair, View v) {
  return {apply_view(pair.rgb, v), apply_view(pair.aux, v), pair.normalized};
}

TtaPolicy TtaPolicy::preset(const std::string& name) {
  TtaPolicy p;
  p.name = name;
  if (name == "none") {
    p.views = {View::Identity};
  } else if (name == "2view") {
    p.views = {View::Identity, View::HFlip, View::VFlip};
  } else if (name == "4view") {
    p.views = {View::Identity, View::HFlip, View::VFlip, View::Rot90};
  } else if (name == "8view") {
    p.views.clear();
    for (const auto& [v, n] : kViews) p.views.push_back(v);
  } else {
    fail(ErrorKind::ConfigError, "unknown TTA preset '" + name + "' (expected none|2view|4view|8view)");
  }
  return p;
}

ProbabilityMap tta_predict(const std::vector<Predictor>& models, const std::vector<std::string>& model_ids,
                           const ModalPair& pair, const TtaPolicy& policy) {
  if (models.empty() || policy.views.empty()) fail(ErrorKind::ConfigError, "TTA needs at least one model and view");
  ProbabilityMap out;
  torch::Tensor sum;
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (View v : policy.views) {
      auto p = invert_view(models[m](apply_view(pair, v)), v).to(torch::kFloat64);
      sum = sum.defined() ? sum + p : p;
      out.provenance.emplace_back(m < model_ids.size() ? model_ids[m] : std::to_string(m), to_string(v));
    }
  }
  out.probs = (sum / static_cast<double>(out.provenance.size())).to(torch::kFloat32);
  return out;
}

ProbabilityMap tta_predict(std::vector<DualSwinNet>& models, const ModalPair& pair, const TtaPolicy& policy) {
  std::vector<Predictor> fns;
  std::vector<std::string> ids;
  for (std::size_t m = 0; m < models.size(); ++m) {
    auto model = models[m];
    fns.emplace_back([model](const ModalPair& p) mutable { return predict_prob(model, p); });
    ids.push_back("model" + std::to_string(m));
  }
  return tta_predict(fns, ids, pair, policy);
}

torch::Tensor binarize(const torch::Tensor& probs, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) fail(ErrorKind::BadThreshold, "tau must lie in (0, 1)");
  return (probs >= tau).to(torch::kUInt8);
}

PredictSummary predict_dataset(std::vector<DualSwinNet>& models, const std::filesystem::path& tile_dir,
                               const NormStats& stats, const PredictOptions& options,
                               const std::filesystem::path& out_dir) {
  if (models.empty()) fail(ErrorKind::ConfigError, "no models to predict with");
  const auto paths = list_tiles(tile_dir);
  if (paths.empty()) fail(ErrorKind::EmptyDataset, "no tiles in " + tile_dir.string());
  std::filesystem::create_directories(out_dir);

  PredictSummary summary;
  std::vector<ConfusionCounts> counts;
  bool all_masks = true;
  for (const auto& path : paths) {
    auto tile = load_tile(path, options.mask_source);
    validate_tile(tile);
    auto pair = standardize(prepare_stage1(tile), stats);
    pair.rgb = pair.rgb.unsqueeze(0);
    pair.aux = pair.aux.unsqueeze(0);
    auto probs = tta_predict(models, pair, options.policy).probs.squeeze(0).squeeze(0);
    auto mask = binarize(probs, options.tau);

    const auto format = options.format.value_or(raster_format_for(path));
    auto out_path = out_dir / (path.stem().string() + raster_extension(format));
    write_mask_raster(out_path, mask);
    summary.written.push_back(out_path);

    if (tile.mask) {
      counts.push_back(accumulate({}, mask, *tile.mask));
    } else {
      all_masks = false;
    }
  }
  if (all_masks) {
    summary.metrics = aggregate_metrics(counts, options.metrics_mode);
    write_metrics_report(out_dir / "metrics.txt", *summary.metrics, options.metrics_mode);
  }
  return summary;
}

}  // namespace dualswin
