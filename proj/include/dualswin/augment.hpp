#pragma once

#include <torch/torch.h>

#include <array>

#include "dualswin/rng.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin {

/// Online augmentation settings. Defaults are the training pipeline values.
struct AugmentPolicy {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rot90 = 0.5;
  double p_affine = 0.5;
  double affine_shift = 0.05;                    // +- fraction of the tile side
  std::array<double, 2> affine_scale = {0.9, 1.1};
  double affine_rot_deg = 20.0;                  // +- degrees
  double p_blur = 0.15;
  std::array<int, 2> blur_kernel = {3, 7};       // odd sizes, inclusive
  double p_brightness_contrast = 0.3;
  double bc_limit = 0.2;                         // +- brightness and +- contrast

  static AugmentPolicy disabled();
  void validate() const;
  bool operator==(const AugmentPolicy&) const = default;
};

/// One sampled geometric composition: flips, then a quarter-turn rotation,
/// then an optional affine warp about the tile center.
struct GeometricTransform {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3
  bool affine = false;
  double shift_x = 0.0, shift_y = 0.0;  // pixels
  double scale = 1.0;
  double angle_deg = 0.0;

  /// Maps an output pixel center (row, col) to the source coordinate it reads
  /// from in the input tile of side `size`. Used for testing joint
  /// consistency; the tensor path implements the same map.
  std::array<double, 2> source_of(double row, double col, std::int64_t size) const;
};

GeometricTransform sample_geometric(const AugmentPolicy& policy, std::int64_t size, Rng& rng);

/// Applies `t` to a C x H x W (or B x C x H x W) tensor. Bilinear resampling
/// for images, nearest for masks; out-of-bounds pixels become 0.
torch::Tensor warp(const torch::Tensor& x, const GeometricTransform& t, bool nearest);

struct GeometricResult {
  ModalPair pair;
  torch::Tensor mask;
};

/// One transform, applied identically to all 7 channels and the mask.
GeometricResult apply_geometric(const ModalPair& pair, const torch::Tensor& mask, const AugmentPolicy& policy,
                                Rng& rng);
GeometricResult apply_geometric(const ModalPair& pair, const torch::Tensor& mask, const GeometricTransform& t);

/// Gaussian blur with an odd kernel; sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8.
/// Borders use reflect-101 padding so constant images are fixed points.
torch::Tensor gaussian_blur(const torch::Tensor& rgb, int kernel);
double blur_sigma(int kernel);

/// x' = (x - mean_c) * (1 + contrast) + mean_c + brightness, per channel.
torch::Tensor adjust_brightness_contrast(const torch::Tensor& rgb, double brightness, double contrast);

/// RGB-only photometric jitter. Takes only the RGB tensor, so auxiliary
/// channels can never be touched.
torch::Tensor apply_photometric(const torch::Tensor& rgb, const AugmentPolicy& policy, Rng& rng);

}  // namespace dualswin
