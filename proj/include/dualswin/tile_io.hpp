#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dualswin {

inline constexpr int kBandCount = 7;
inline constexpr int kRgbChannels = 3;
inline constexpr int kAuxChannels = 4;

/// One co-registered 7-band sample. Band order (0-based tensor index):
///   0 thermal inertia, 1 slope, 2 DEM, 3 grayscale context, 4..6 red/green/blue.
struct RawTile {
  torch::Tensor bands;                // float32, 7 x H x W, H == W
  std::optional<torch::Tensor> mask;  // float32, H x W, values in {0, 1}
  std::string tile_id;

  std::int64_t size() const { return bands.size(-1); }
};

/// Throws BandCountMismatch / ShapeMismatch / NonFiniteData.
void validate_tile(const RawTile& tile);

/// The dual-encoder input. Tensors are C x H x W for one tile or B x C x H x W
/// for a batch; `normalized` is set once stage-2 standardization has run.
struct ModalPair {
  torch::Tensor rgb;  // 3 channels: red, green, blue
  torch::Tensor aux;  // 4 channels: thermal, slope, DEM, grayscale
  bool normalized = false;
};

enum class MaskSource { Sibling, Band8 };

MaskSource parse_mask_source(const std::string& name);
std::string to_string(MaskSource source);

/// `tile_0001.mmt` -> `tile_0001.mask.mmt`.
std::filesystem::path sibling_mask_path(const std::filesystem::path& tile_path);
/// Tile files in a directory (mask siblings excluded), sorted by name.
std::vector<std::filesystem::path> list_tiles(const std::filesystem::path& dir);

RawTile load_tile(const std::filesystem::path& path, MaskSource mask_source = MaskSource::Sibling);
void save_tile(const std::filesystem::path& path, const RawTile& tile,
               MaskSource mask_source = MaskSource::Sibling);

/// Bands 5-7 become `rgb`, bands 1-4 become `aux`; no scaling is applied.
ModalPair split_modalities(const RawTile& tile);

/// Percentile of a sample with linear interpolation between order statistics
/// (rank = q/100 * (n-1)), q in [0, 100].
double percentile(std::span<const double> sorted_values, double q);

/// Stage 1: clip to this channel's own [P1, P99] and map P1 -> 0, P99 -> 1.
/// A constant channel (P1 == P99) maps to all zeros.
torch::Tensor percentile_scale(const torch::Tensor& channel);
/// Stage 1 applied independently to every channel of a C x H x W tensor.
torch::Tensor percentile_scale_channels(const torch::Tensor& chw);

/// Per-channel dataset statistics used by stage 2.
struct NormStats {
  std::vector<double> mean;  // kBandCount entries, band order
  std::vector<double> std;
  double epsilon = 1e-6;

  bool complete() const { return mean.size() == kBandCount && std.size() == kBandCount; }
  bool operator==(const NormStats&) const = default;
};

/// Mergeable (count, sum, sum of squares) accumulator so dataset scans can be
/// sharded and combined in any order.
class ChannelMoments {
 public:
  explicit ChannelMoments(int channels = kBandCount);
  void add(const torch::Tensor& chw);
  ChannelMoments& merge(const ChannelMoments& other);
  std::int64_t count() const { return count_; }
  NormStats finalize(double epsilon = 1e-6) const;

 private:
  std::int64_t count_ = 0;
  std::vector<double> sum_;
  std::vector<double> sumsq_;
};

/// Population mean/std per channel over all pixels of all tiles after stage 1.
/// Throws EmptyDataset.
NormStats compute_norm_stats(std::span<const RawTile> tiles, double epsilon = 1e-6);

/// Text format: one line per channel `c mean std` (c = 0..6, band order) and an
/// `epsilon e` line; values use 17 significant digits so reload is bit exact.
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

/// Stage 2: x' = (x - mean_c) / (std_c + epsilon) per channel. Throws StatsMissing.
ModalPair standardize(const ModalPair& pair, const NormStats& stats);

/// Stage 1 on every band followed by the modality split.
ModalPair prepare_stage1(const RawTile& tile);

/// w+ = N_neg / N_pos over all pixels of all masks. Throws NoForeground.
double compute_class_weight(std::span<const torch::Tensor> masks);

struct FoldSplit {
  int fold_count = 0;
  std::map<std::string, int> assignment;

  std::vector<std::string> fold_members(int fold) const;
  std::vector<std::string> complement(int fold) const;
};

/// Seeded shuffle then round-robin assignment. Throws TooFewTiles.
FoldSplit make_folds(std::span<const std::string> tile_ids, int k, std::uint64_t seed);

struct SynthParams {
  int size = 64;
  std::array<double, 2> scarp_slope_deg = {25.0, 40.0};
  std::array<double, 2> fan_slope_deg = {2.0, 8.0};
  double landslide_probability = 0.8;
  double foreground_fraction_target = 0.35;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
};

void validate_synth_params(const SynthParams& params);

/// Deterministic synthetic 7-band tile with a mask. See synth.cpp for the
/// band formulas; they are stand-ins chosen for a learnable slope signature,
/// not a physical model of any instrument.
RawTile generate_synthetic_tile(const SynthParams& params, std::string tile_id = {});

/// Central-difference gradient magnitude (one-sided at the borders), computed
/// in double precision.
torch::Tensor gradient_magnitude(const torch::Tensor& hw);

}  // namespace dualswin
