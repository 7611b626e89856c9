#include "dualswin/augment.hpp"

#include <cmath>
#include <numbers>

#include "dualswin/error.hpp"

namespace F = torch::nn::functional;

namespace dualswin {

AugmentPolicy AugmentPolicy::disabled() {
  AugmentPolicy p;
  p.p_hflip = p.p_vflip = p.p_rot90 = p.p_affine = 0.0;
  p.p_blur = p.p_brightness_contrast = 0.0;
  return p;
}

void AugmentPolicy::validate() const {
  for (double p : {p_hflip, p_vflip, p_rot90, p_affine, p_blur, p_brightness_contrast})
    if (p < 0.0 || p > 1.0) fail(ErrorKind::ConfigError, "augmentation probabilities must lie in [0, 1]");
  if (!(affine_scale[0] > 0.0 && affine_scale[0] <= affine_scale[1]))
    fail(ErrorKind::ConfigError, "affine scale interval must be positive and ordered");
  if (blur_kernel[0] < 1 || blur_kernel[0] % 2 == 0 || blur_kernel[1] % 2 == 0 || blur_kernel[0] > blur_kernel[1])
    fail(ErrorKind::ConfigError, "blur kernel range must be odd sizes lo <= hi");
}

std::array<double, 2> GeometricTransform::source_of(double row, double col, std::int64_t size) const {
  const double n1 = static_cast<double>(size - 1);
  double r = row, c = col;
  if (affine) {
    const double center = n1 / 2.0;
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double dx = c - center - shift_x, dy = r - center - shift_y;
    // Inverse of dst = center + scale * R(th) * (src - center) + shift.
    c = center + (std::cos(th) * dx + std::sin(th) * dy) / scale;
    r = center + (-std::sin(th) * dx + std::cos(th) * dy) / scale;
  }
  for (int k = 0; k < quarter_turns; ++k) {
    // torch::rot90 (one counter-clockwise turn): out[i][j] = in[j][n-1-i].
    const double nr = c, nc = n1 - r;
    r = nr;
    c = nc;
  }
  if (vflip) r = n1 - r;
  if (hflip) c = n1 - c;
  return {r, c};
}

GeometricTransform sample_geometric(const AugmentPolicy& policy, std::int64_t size, Rng& rng) {
  GeometricTransform t;
  t.hflip = rng.bernoulli(policy.p_hflip);
  t.vflip = rng.bernoulli(policy.p_vflip);
  if (rng.bernoulli(policy.p_rot90)) t.quarter_turns = 1 + static_cast<int>(rng.below(3));
  if (rng.bernoulli(policy.p_affine)) {
    t.affine = true;
    const double side = static_cast<double>(size);
    t.shift_x = rng.uniform(-policy.affine_shift, policy.affine_shift) * side;
    t.shift_y = rng.uniform(-policy.affine_shift, policy.affine_shift) * side;
    t.scale = rng.uniform(policy.affine_scale[0], policy.affine_scale[1]);
    t.angle_deg = rng.uniform(-policy.affine_rot_deg, policy.affine_rot_deg);
  }
  return t;
}

torch::Tensor warp(const torch::Tensor& x, const GeometricTransform& t, bool nearest) {
  const bool batched = x.dim() == 4;
  auto y = batched ? x : x.unsqueeze(0);
  if (y.size(-1) != y.size(-2)) fail(ErrorKind::ShapeMismatch, "geometric transforms expect square tiles");
  if (t.hflip) y = torch::flip(y, {-1});
  if (t.vflip) y = torch::flip(y, {-2});
  if (t.quarter_turns % 4 != 0) y = torch::rot90(y, t.quarter_turns, {-2, -1});
  if (t.affine) {
    const auto n = y.size(-1);
    GeometricTransform only_affine = t;
    only_affine.hflip = only_affine.vflip = false;
    only_affine.quarter_turns = 0;
    auto grid = torch::empty({1, n, n, 2}, torch::kFloat64);
    auto g = grid.accessor<double, 4>();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const auto [sr, sc] = only_affine.source_of(static_cast<double>(i), static_cast<double>(j), n);
        // align_corners=false: pixel p has normalized coordinate (2p + 1) / n - 1.
        g[0][i][j][0] = (2.0 * sc + 1.0) / static_cast<double>(n) - 1.0;
        g[0][i][j][1] = (2.0 * sr + 1.0) / static_cast<double>(n) - 1.0;
      }
    const auto dtype = y.scalar_type();
    auto yd = y.to(torch::kFloat64);
    auto opts = F::GridSampleFuncOptions().padding_mode(torch::kZeros).align_corners(false);
    if (nearest) {
      opts.mode(torch::kNearest);
    } else {
      opts.mode(torch::kBilinear);
    }
    y = F::grid_sample(yd, grid.expand({yd.size(0), n, n, 2}), opts).to(dtype);
  }
  return batched ? y.contiguous() : y.squeeze(0).contiguous();
}

GeometricResult apply_geometric(const ModalPair& pair, const torch::Tensor& mask, const GeometricTransform& t) {
  if (pair.rgb.sizes().slice(pair.rgb.dim() - 2) != pair.aux.sizes().slice(pair.aux.dim() - 2) ||
      pair.rgb.size(-1) != mask.size(-1) || pair.rgb.size(-2) != mask.size(-2))
    fail(ErrorKind::ShapeMismatch, "rgb, aux and mask must share spatial dims");
  GeometricResult out;
  out.pair.normalized = pair.normalized;
  out.pair.rgb = warp(pair.rgb, t, false);
  out.pair.aux = warp(pair.aux, t, false);
  out.mask = warp(mask.unsqueeze(0), t, true).squeeze(0);
  return out;
}

GeometricResult apply_geometric(const ModalPair& pair, const torch::Tensor& mask, const AugmentPolicy& policy,
                                Rng& rng) {
  return apply_geometric(pair, mask, sample_geometric(policy, mask.size(-1), rng));
}

double blur_sigma(int kernel) { return 0.3 * ((kernel - 1) / 2.0 - 1.0) + 0.8; }

torch::Tensor gaussian_blur(const torch::Tensor& rgb, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) fail(ErrorKind::ConfigError, "blur kernel must be odd");
  if (kernel == 1) return rgb.clone();
  const double sigma = blur_sigma(kernel);
  const int half = kernel / 2;
  auto taps = torch::empty({kernel}, torch::kFloat64);
  for (int i = 0; i < kernel; ++i) taps[i] = std::exp(-0.5 * ((i - half) * (i - half)) / (sigma * sigma));
  taps = taps / taps.sum();

  const bool batched = rgb.dim() == 4;
  auto x = (batched ? rgb : rgb.unsqueeze(0)).to(torch::kFloat64);
  const auto c = x.size(1);
  x = F::pad(x, F::PadFuncOptions({half, half, half, half}).mode(torch::kReflect));
  auto kh = taps.view({1, 1, 1, kernel}).expand({c, 1, 1, kernel}).contiguous();
  auto kv = taps.view({1, 1, kernel, 1}).expand({c, 1, kernel, 1}).contiguous();
  x = F::conv2d(x, kh, F::Conv2dFuncOptions().groups(c));
  x = F::conv2d(x, kv, F::Conv2dFuncOptions().groups(c));
  x = x.to(rgb.scalar_type());
  return batched ? x : x.squeeze(0);
}

torch::Tensor adjust_brightness_contrast(const torch::Tensor& rgb, double brightness, double contrast) {
  auto mean = rgb.mean({-2, -1}, /*keepdim=*/true);
  return (rgb - mean) * (1.0 + contrast) + mean + brightness;
}

torch::Tensor apply_photometric(const torch::Tensor& rgb, const AugmentPolicy& policy, Rng& rng) {
  auto out = rgb;
  if (rng.bernoulli(policy.p_blur)) {
    const int choices = (policy.blur_kernel[1] - policy.blur_kernel[0]) / 2 + 1;
    const int k = policy.blur_kernel[0] + 2 * static_cast<int>(rng.below(choices));
    out = gaussian_blur(out, k);
  }
  if (rng.bernoulli(policy.p_brightness_contrast)) {
    const double b = rng.uniform(-policy.bc_limit, policy.bc_limit);
    const double c = rng.uniform(-policy.bc_limit, policy.bc_limit);
    out = adjust_brightness_contrast(out, b, c);
  }
  return out;
}

}  // namespace dualswin
