#include "dualswin/tile_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dualswin/error.hpp"
#include "dualswin/raster_io.hpp"
#include "dualswin/rng.hpp"

namespace fs = std::filesystem;

namespace dualswin {

void validate_tile(const RawTile& tile) {
  const auto& b = tile.bands;
  if (!b.defined() || b.dim() != 3) fail(ErrorKind::ShapeMismatch, "tile bands must be C x H x W");
  if (b.size(0) != kBandCount)
    fail(ErrorKind::BandCountMismatch, "expected 7 bands, found " + std::to_string(b.size(0)));
  if (b.size(1) != b.size(2)) fail(ErrorKind::ShapeMismatch, "tiles must be square");
  if (!torch::isfinite(b).all().item<bool>()) fail(ErrorKind::NonFiniteData, "non-finite band value");
  if (tile.mask) {
    const auto& m = *tile.mask;
    if (m.dim() != 2 || m.size(0) != b.size(1) || m.size(1) != b.size(2))
      fail(ErrorKind::ShapeMismatch, "mask shape differs from band shape");
    if (!((m == 0) | (m == 1)).all().item<bool>()) fail(ErrorKind::NonBinaryInput, "mask values must be 0/1");
  }
}

MaskSource parse_mask_source(const std::string& name) {
  if (name == "sibling") return MaskSource::Sibling;
  if (name == "band8") return MaskSource::Band8;
  fail(ErrorKind::ConfigError, "unknown mask_source '" + name + "' (expected sibling|band8)");
}

std::string to_string(MaskSource source) { return source == MaskSource::Band8 ? "band8" : "sibling"; }

fs::path sibling_mask_path(const fs::path& tile_path) {
  auto p = tile_path;
  p.replace_extension();
  return fs::path(p.string() + ".mask" + tile_path.extension().string());
}

std::vector<fs::path> list_tiles(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) fail(ErrorKind::IoError, "not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    const auto ext = p.extension().string();
    if (ext != ".mmt" && ext != ".tif" && ext != ".tiff") continue;
    if (p.stem().extension() == ".mask") continue;
    out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RawTile load_tile(const fs::path& path, MaskSource mask_source) {
  RawTile tile;
  tile.tile_id = path.stem().string();
  auto raster = read_raster(path);
  if (mask_source == MaskSource::Band8 && raster.size(0) == kBandCount + 1) {
    tile.bands = raster.slice(0, 0, kBandCount).contiguous();
    tile.mask = raster[kBandCount].contiguous();
  } else {
    tile.bands = raster;
    const auto mask_path = sibling_mask_path(path);
    if (mask_source == MaskSource::Sibling && fs::exists(mask_path)) {
      auto m = read_raster(mask_path);
      if (m.size(0) != 1) fail(ErrorKind::ShapeMismatch, "mask file must have a single band");
      tile.mask = m[0].contiguous();
    }
  }
  validate_tile(tile);
  return tile;
}

void save_tile(const fs::path& path, const RawTile& tile, MaskSource mask_source) {
  validate_tile(tile);
  if (mask_source == MaskSource::Band8 && tile.mask) {
    write_raster(path, torch::cat({tile.bands, tile.mask->unsqueeze(0)}, 0));
    return;
  }
  write_raster(path, tile.bands);
  if (tile.mask) write_mask_raster(sibling_mask_path(path), *tile.mask);
}

ModalPair split_modalities(const RawTile& tile) {
  validate_tile(tile);
  ModalPair pair;
  pair.rgb = tile.bands.slice(0, 4, 7).clone();
  pair.aux = tile.bands.slice(0, 0, 4).clone();
  return pair;
}

double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

torch::Tensor percentile_scale(const torch::Tensor& channel) {
  auto values = channel.to(torch::kFloat64).contiguous();
  std::vector<double> sorted(values.data_ptr<double>(), values.data_ptr<double>() + values.numel());
  std::sort(sorted.begin(), sorted.end());
  const double p1 = percentile(sorted, 1.0);
  const double p99 = percentile(sorted, 99.0);
  if (!(p99 > p1)) return torch::zeros_like(channel, torch::kFloat32);
  return ((values.clamp(p1, p99) - p1) / (p99 - p1)).to(torch::kFloat32);
}

torch::Tensor percentile_scale_channels(const torch::Tensor& chw) {
  std::vector<torch::Tensor> planes;
  planes.reserve(chw.size(0));
  for (std::int64_t c = 0; c < chw.size(0); ++c) planes.push_back(percentile_scale(chw[c]));
  return torch::stack(planes);
}

ChannelMoments::ChannelMoments(int channels) : sum_(channels, 0.0), sumsq_(channels, 0.0) {}

void ChannelMoments::add(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != static_cast<std::int64_t>(sum_.size()))
    fail(ErrorKind::ShapeMismatch, "channel count differs from accumulator");
  auto d = chw.to(torch::kFloat64).reshape({chw.size(0), -1});
  auto s = d.sum(1);
  auto ss = (d * d).sum(1);
  for (std::size_t c = 0; c < sum_.size(); ++c) {
    sum_[c] += s[c].item<double>();
    sumsq_[c] += ss[c].item<double>();
  }
  count_ += d.size(1);
}

ChannelMoments& ChannelMoments::merge(const ChannelMoments& other) {
  if (other.sum_.size() != sum_.size()) fail(ErrorKind::ShapeMismatch, "channel count differs");
  for (std::size_t c = 0; c < sum_.size(); ++c) {
    sum_[c] += other.sum_[c];
    sumsq_[c] += other.sumsq_[c];
  }
  count_ += other.count_;
  return *this;
}

NormStats ChannelMoments::finalize(double epsilon) const {
  if (count_ == 0) fail(ErrorKind::EmptyDataset, "no pixels accumulated");
  NormStats stats;
  stats.epsilon = epsilon;
  const auto n = static_cast<double>(count_);
  for (std::size_t c = 0; c < sum_.size(); ++c) {
    const double mean = sum_[c] / n;
    const double var = std::max(0.0, sumsq_[c] / n - mean * mean);
    stats.mean.push_back(mean);
    stats.std.push_back(std::sqrt(var));
  }
  return stats;
}

NormStats compute_norm_stats(std::span<const RawTile> tiles, double epsilon) {
  if (tiles.empty()) fail(ErrorKind::EmptyDataset, "no training tiles for statistics");
  ChannelMoments moments;
  for (const auto& tile : tiles) {
    validate_tile(tile);
    moments.add(percentile_scale_channels(tile.bands));
  }
  return moments.finalize(epsilon);
}

void save_norm_stats(const fs::path& path, const NormStats& stats) {
  if (!stats.complete()) fail(ErrorKind::StatsMissing, "incomplete statistics");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  char line[128];
  for (int c = 0; c < kBandCount; ++c) {
    std::snprintf(line, sizeof line, "%d %.17g %.17g\n", c, stats.mean[c], stats.std[c]);
    out << line;
  }
  std::snprintf(line, sizeof line, "epsilon %.17g\n", stats.epsilon);
  out << line;
}

NormStats load_norm_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::StatsMissing, "cannot read statistics file " + path.string());
  NormStats stats;
  stats.mean.assign(kBandCount, std::nan(""));
  stats.std.assign(kBandCount, std::nan(""));
  std::vector<bool> seen(kBandCount, false);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "epsilon") {
      ls >> stats.epsilon;
      continue;
    }
    const int c = std::stoi(key);
    if (c < 0 || c >= kBandCount) fail(ErrorKind::StatsMissing, "bad channel index in " + path.string());
    std::string m, s;
    ls >> m >> s;
    stats.mean[c] = std::strtod(m.c_str(), nullptr);
    stats.std[c] = std::strtod(s.c_str(), nullptr);
    seen[c] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    fail(ErrorKind::StatsMissing, "statistics file lacks some channels: " + path.string());
  return stats;
}

namespace {

torch::Tensor standardize_block(const torch::Tensor& x, const NormStats& stats, int first_band) {
  const auto c = x.size(-3);
  std::vector<double> mean(stats.mean.begin() + first_band, stats.mean.begin() + first_band + c);
  std::vector<double> denom;
  for (std::int64_t i = 0; i < c; ++i) denom.push_back(stats.std[first_band + i] + stats.epsilon);
  auto shape = std::vector<std::int64_t>(x.dim(), 1);
  shape[x.dim() - 3] = c;
  auto m = torch::tensor(mean, torch::kFloat64).reshape(shape);
  auto d = torch::tensor(denom, torch::kFloat64).reshape(shape);
  return ((x.to(torch::kFloat64) - m) / d).to(x.scalar_type());
}

}  // namespace

ModalPair standardize(const ModalPair& pair, const NormStats& stats) {
  if (!stats.complete()) fail(ErrorKind::StatsMissing, "statistics missing for some channels");
  if (pair.rgb.size(-3) != kRgbChannels || pair.aux.size(-3) != kAuxChannels)
    fail(ErrorKind::ShapeMismatch, "modal pair must be 3 + 4 channels");
  ModalPair out;
  out.rgb = standardize_block(pair.rgb, stats, 4);
  out.aux = standardize_block(pair.aux, stats, 0);
  out.normalized = true;
  return out;
}

ModalPair prepare_stage1(const RawTile& tile) {
  RawTile scaled = tile;
  scaled.bands = percentile_scale_channels(tile.bands);
  return split_modalities(scaled);
}

double compute_class_weight(std::span<const torch::Tensor> masks) {
  std::int64_t pos = 0, total = 0;
  for (const auto& m : masks) {
    pos += (m > 0.5).sum().item<std::int64_t>();
    total += m.numel();
  }
  if (pos == 0) fail(ErrorKind::NoForeground, "no foreground pixels in the training masks");
  return static_cast<double>(total - pos) / static_cast<double>(pos);
}

std::vector<std::string> FoldSplit::fold_members(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldSplit::complement(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f != fold) out.push_back(id);
  return out;
}

FoldSplit make_folds(std::span<const std::string> tile_ids, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::ConfigError, "fold count must be at least 2");
  if (static_cast<int>(tile_ids.size()) < k)
    fail(ErrorKind::TooFewTiles, std::to_string(tile_ids.size()) + " tiles for " + std::to_string(k) + " folds");
  std::vector<std::string> ids(tile_ids.begin(), tile_ids.end());
  // Sort first so the split depends on the id set, not on the caller's order.
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, "folds"));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  FoldSplit split;
  split.fold_count = k;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!split.assignment.emplace(ids[i], static_cast<int>(i % k)).second)
      fail(ErrorKind::ConfigError, "duplicate tile id " + ids[i]);
  }
  return split;
}

torch::Tensor gradient_magnitude(const torch::Tensor& hw) {
  auto z = hw.to(torch::kFloat64);
  const auto n0 = z.size(0), n1 = z.size(1);
  auto gy = torch::empty_like(z);
  auto gx = torch::empty_like(z);
  using torch::indexing::Slice;
  gy.index_put_({Slice(1, n0 - 1)}, (z.index({Slice(2, n0)}) - z.index({Slice(0, n0 - 2)})) / 2.0);
  gy.index_put_({0}, z[1] - z[0]);
  gy.index_put_({n0 - 1}, z[n0 - 1] - z[n0 - 2]);
  gx.index_put_({Slice(), Slice(1, n1 - 1)},
                (z.index({Slice(), Slice(2, n1)}) - z.index({Slice(), Slice(0, n1 - 2)})) / 2.0);
  gx.index_put_({Slice(), 0}, z.index({Slice(), 1}) - z.index({Slice(), 0}));
  gx.index_put_({Slice(), n1 - 1}, z.index({Slice(), n1 - 1}) - z.index({Slice(), n1 - 2}));
  return torch::sqrt(gx * gx + gy * gy);
}

}  // namespace dualswin
