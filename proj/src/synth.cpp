// Synthetic 7-band tiles. None of these formulas model a real instrument; they
// produce the qualitative signature a landslide leaves in the bands: a steep
// source scarp directly upslope of a gently inclined depositional fan, with
// the deposit also visible in the thermal and grayscale bands.
//
// Units: DEM is expressed in pixel-spacing units, so the slope band (gradient
// magnitude per pixel) equals tan(surface angle).
//
//   base DEM   sum of 4 octaves x 2 random plane waves; octave o has
//              frequency 1.5 * 2^o cycles per tile and gradient amplitude
//              0.10 * 0.7^o, plus a random regional tilt of at most 0.05.
//   landslide  elliptical footprint (aspect 1.2..1.8, slightly wavy rim)
//              whose area is fitted by bisection so that its in-tile fraction
//              equals target / landslide_probability (clamped to [0.02, 0.85]).
//              The upslope 30% of the ellipse is the scarp (ramp rising at
//              tan(scarp angle)); the rest is the fan (plane descending at
//              tan(fan angle) along the flow direction). Both are blended into
//              the base DEM with a smoothstep rim weight of width 0.15.
//   slope      gradient_magnitude(DEM as float32).
//   thermal    0.5 + 0.8 tanh(2 slope) + 0.35 deposit - 0.02 DEM, box-blurred
//              5x5, plus 0.04 noise.
//   grayscale  Lambertian hillshade (light from the north-west) + 0.15 deposit
//              + 0.03 noise.
//   RGB        DEM averaged over 8x8 blocks, nearest-upsampled and mapped to a
//              reddish ramp, plus 0.01 noise per channel.
// All noise amplitudes are multiplied by noise_scale.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dualswin/error.hpp"
#include "dualswin/rng.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin {
namespace {

constexpr double kPi = std::numbers::pi;

struct Grid {
  int n;
  std::vector<double> v;
  explicit Grid(int size, double fill = 0.0) : n(size), v(static_cast<std::size_t>(size) * size, fill) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * n + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * n + x]; }
};

Grid box_blur(const Grid& g, int radius) {
  Grid out(g.n);
  for (int y = 0; y < g.n; ++y)
    for (int x = 0; x < g.n; ++x) {
      double s = 0.0;
      int cnt = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= g.n || xx >= g.n) continue;
          s += g.at(yy, xx);
          ++cnt;
        }
      out.at(y, x) = s / cnt;
    }
  return out;
}

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Landslide {
  double cy, cx;      // center (pixels)
  double theta;       // flow (downslope) direction
  double aspect;      // along / across
  double wiggle_amp, wiggle_phase;
  double scarp_tan, fan_tan;

  // Elliptical radius of pixel (y, x) for semi-axis `along`; <= 1 inside.
  double radius(double y, double x, double along) const {
    const double dy = y - cy, dx = x - cx;
    const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / along;
    const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / (along / aspect);
    const double phi = std::atan2(v, u);
    const double rim = 1.0 + wiggle_amp * std::sin(3.0 * phi + wiggle_phase);
    return std::sqrt(u * u + v * v) / rim;
  }

  double footprint_fraction(int n, double along) const {
    int inside = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (radius(y, x, along) <= 1.0) ++inside;
    return static_cast<double>(inside) / (static_cast<double>(n) * n);
  }
};

}  // namespace

void validate_synth_params(const SynthParams& p) {
  if (p.size < 8) fail(ErrorKind::ConfigError, "synthetic tile size must be at least 8");
  if (!(p.scarp_slope_deg[0] <= p.scarp_slope_deg[1]) || !(p.fan_slope_deg[0] <= p.fan_slope_deg[1]))
    fail(ErrorKind::ConfigError, "slope ranges must be non-empty intervals");
  if (p.landslide_probability < 0.0 || p.landslide_probability > 1.0)
    fail(ErrorKind::ConfigError, "landslide_probability must lie in [0, 1]");
  if (!(p.foreground_fraction_target > 0.0 && p.foreground_fraction_target < 0.9))
    fail(ErrorKind::ConfigError, "foreground_fraction_target must lie in (0, 0.9)");
  if (p.noise_scale < 0.0) fail(ErrorKind::ConfigError, "noise_scale must be non-negative");
}

RawTile generate_synthetic_tile(const SynthParams& params, std::string tile_id) {
  validate_synth_params(params);
  const int n = params.size;
  Rng rng(derive_seed(params.seed, "synth-tile"));

  // Base terrain.
  Grid dem(n);
  const double tilt_y = rng.uniform(-0.05, 0.05), tilt_x = rng.uniform(-0.05, 0.05);
  for (int o = 0; o < 4; ++o) {
    const double freq = 1.5 * std::pow(2.0, o);
    const double grad = 0.10 * std::pow(0.7, o);
    const double amp = grad * n / (2.0 * kPi * freq);
    for (int w = 0; w < 2; ++w) {
      const double dir = rng.uniform(0.0, 2.0 * kPi);
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      const double ky = 2.0 * kPi * freq * std::sin(dir) / n, kx = 2.0 * kPi * freq * std::cos(dir) / n;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) dem.at(y, x) += amp * std::cos(ky * y + kx * x + phase);
    }
  }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) dem.at(y, x) += tilt_y * y + tilt_x * x;

  Grid mask(n), deposit(n);
  const bool has_landslide = rng.bernoulli(params.landslide_probability);
  // Landslide geometry is always sampled so the RNG stream stays aligned.
  Landslide ls{};
  ls.cy = rng.uniform(0.3, 0.7) * n;
  ls.cx = rng.uniform(0.3, 0.7) * n;
  ls.theta = rng.uniform(0.0, 2.0 * kPi);
  ls.aspect = rng.uniform(1.2, 1.8);
  ls.wiggle_amp = rng.uniform(0.0, 0.08);
  ls.wiggle_phase = rng.uniform(0.0, 2.0 * kPi);
  ls.scarp_tan = std::tan(rng.uniform(params.scarp_slope_deg[0], params.scarp_slope_deg[1]) * kPi / 180.0);
  ls.fan_tan = std::tan(rng.uniform(params.fan_slope_deg[0], params.fan_slope_deg[1]) * kPi / 180.0);
  const double jitter = rng.uniform(0.85, 1.15);

  if (has_landslide) {
    const double target = std::clamp(
        params.foreground_fraction_target / std::max(params.landslide_probability, 1e-9) * jitter, 0.02, 0.85);
    double lo = 1.0, hi = 4.0 * n;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (ls.footprint_fraction(n, mid) < target ? lo : hi) = mid;
    }
    const double along = 0.5 * (lo + hi);
    const double ct = std::cos(ls.theta), st = std::sin(ls.theta);
    const double scarp_edge = -1.0 + 0.3 * 2.0;  // u coordinate where scarp meets fan
    const double base_level = dem.at(std::clamp(static_cast<int>(ls.cy), 0, n - 1),
                                     std::clamp(static_cast<int>(ls.cx), 0, n - 1));
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double r = ls.radius(y, x, along);
        if (r > 1.0) continue;
        mask.at(y, x) = 1.0;
        const double u = ((x - ls.cx) * ct + (y - ls.cy) * st) / along;
        const double t = (u - scarp_edge) * along;  // signed distance downslope of the scarp foot
        const double fan_z = base_level - ls.fan_tan * t;
        const double target_z = t >= 0.0 ? fan_z : base_level - ls.scarp_tan * t;
        const double w = smoothstep((1.0 - r) / 0.15);
        dem.at(y, x) = (1.0 - w) * dem.at(y, x) + w * target_z;
        if (t >= 0.0) deposit.at(y, x) = w;
      }
  }

  // Slope from the float32 DEM, so the emitted bands are mutually consistent.
  auto dem_t = torch::from_blob(dem.v.data(), {n, n}, torch::kFloat64).to(torch::kFloat32);
  auto slope_t = gradient_magnitude(dem_t);
  Grid slope(n);
  std::copy_n(slope_t.contiguous().data_ptr<double>(), slope.v.size(), slope.v.begin());
  auto dem_f = dem_t.to(torch::kFloat64).contiguous();
  std::copy_n(dem_f.data_ptr<double>(), dem.v.size(), dem.v.begin());

  const double ns = params.noise_scale;
  Grid thermal(n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      thermal.at(y, x) = 0.5 + 0.8 * std::tanh(2.0 * slope.at(y, x)) + 0.35 * deposit.at(y, x) - 0.02 * dem.at(y, x);
  thermal = box_blur(thermal, 2);
  for (double& v : thermal.v) v += 0.04 * ns * rng.normal();

  Grid gray(n);
  const double ly = -std::sqrt(0.5), lx = -std::sqrt(0.5), lz = 1.0;
  const double lnorm = std::sqrt(ly * ly + lx * lx + lz * lz);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, n - 1);
      const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, n - 1);
      const double gy = (dem.at(y1, x) - dem.at(y0, x)) / (y1 - y0);
      const double gx = (dem.at(y, x1) - dem.at(y, x0)) / (x1 - x0);
      const double shade = (-gx * lx - gy * ly + lz) / (std::sqrt(gx * gx + gy * gy + 1.0) * lnorm);
      gray.at(y, x) = 0.3 + 0.6 * shade + 0.15 * deposit.at(y, x) + 0.03 * ns * rng.normal();
    }

  Grid coarse(n);
  constexpr int kBlock = 8;
  double zmin = *std::min_element(dem.v.begin(), dem.v.end());
  double zmax = *std::max_element(dem.v.begin(), dem.v.end());
  const double zspan = std::max(zmax - zmin, 1e-9);
  for (int by = 0; by < n; by += kBlock)
    for (int bx = 0; bx < n; bx += kBlock) {
      double s = 0.0;
      int cnt = 0;
      for (int y = by; y < std::min(by + kBlock, n); ++y)
        for (int x = bx; x < std::min(bx + kBlock, n); ++x) {
          s += dem.at(y, x);
          ++cnt;
        }
      const double h = (s / cnt - zmin) / zspan;
      for (int y = by; y < std::min(by + kBlock, n); ++y)
        for (int x = bx; x < std::min(bx + kBlock, n); ++x) coarse.at(y, x) = h;
    }
  const double base_rgb[3] = {0.55, 0.35, 0.25}, ramp_rgb[3] = {0.25, 0.20, 0.15};
  std::vector<Grid> rgb;
  for (int c = 0; c < 3; ++c) {
    Grid band(n);
    for (std::size_t i = 0; i < band.v.size(); ++i)
      band.v[i] = base_rgb[c] + ramp_rgb[c] * coarse.v[i] + 0.01 * ns * rng.normal();
    rgb.push_back(std::move(band));
  }

  auto to_tensor = [n](const Grid& g) {
    return torch::from_blob(const_cast<double*>(g.v.data()), {n, n}, torch::kFloat64).to(torch::kFloat32);
  };
  RawTile tile;
  tile.bands = torch::stack({to_tensor(thermal), slope_t.to(torch::kFloat32), dem_t, to_tensor(gray),
                             to_tensor(rgb[0]), to_tensor(rgb[1]), to_tensor(rgb[2])})
                   .contiguous();
  tile.mask = to_tensor(mask).contiguous();
  tile.tile_id = std::move(tile_id);
  return tile;
}

}  // namespace dualswin
