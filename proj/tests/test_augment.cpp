#include <set>

#include "dualswin/augment.hpp"
#include "support.hpp"

using namespace dualswin;

namespace {

ModalPair random_stage1_pair(std::int64_t n) {
  ModalPair p;
  p.rgb = torch::rand({3, n, n});
  p.aux = torch::rand({4, n, n});
  return p;
}

AugmentPolicy geometric_only() {
  auto p = AugmentPolicy::disabled();
  p.p_hflip = p.p_vflip = p.p_rot90 = p.p_affine = 0.5;
  return p;
}

}  // namespace

TEST(Augment, DisabledPolicyIsIdentity) {
  torch::manual_seed(0);
  const auto pair = random_stage1_pair(16);
  const auto mask = dualswin::testing::random_binary({16, 16});
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto out = apply_geometric(pair, mask, AugmentPolicy::disabled(), rng);
    EXPECT_TRUE(torch::equal(out.pair.rgb, pair.rgb));
    EXPECT_TRUE(torch::equal(out.pair.aux, pair.aux));
    EXPECT_TRUE(torch::equal(out.mask, mask));
    EXPECT_TRUE(torch::equal(apply_photometric(pair.rgb, AugmentPolicy::disabled(), rng), pair.rgb));
  }
}

TEST(Augment, HflipTwiceRestoresInput) {
  torch::manual_seed(1);
  const auto pair = random_stage1_pair(12);
  const auto mask = dualswin::testing::random_binary({12, 12});
  GeometricTransform t;
  t.hflip = true;
  const auto once = apply_geometric(pair, mask, t);
  const auto twice = apply_geometric(once.pair, once.mask, t);
  EXPECT_FALSE(torch::equal(once.pair.rgb, pair.rgb));
  EXPECT_TRUE(torch::equal(twice.pair.rgb, pair.rgb));
  EXPECT_TRUE(torch::equal(twice.pair.aux, pair.aux));
  EXPECT_TRUE(torch::equal(twice.mask, mask));
}

TEST(Augment, HflipMovesSinglePixel) {
  const std::int64_t n = 128, r = 17, c = 40;
  auto mask = torch::zeros({n, n});
  mask[r][c] = 1;
  ModalPair pair;
  pair.rgb = torch::zeros({3, n, n});
  pair.aux = torch::zeros({4, n, n});
  GeometricTransform t;
  t.hflip = true;
  const auto out = apply_geometric(pair, mask, t);
  EXPECT_EQ(out.mask.sum().item<float>(), 1.0f);
  EXPECT_EQ(out.mask[r][n - 1 - c].item<float>(), 1.0f);
}

// Every sampled transform, checked against source_of on a coordinate grid:
// bilinear sampling reproduces a linear ramp exactly wherever all four taps
// are in bounds, and the mask picks the nearest source pixel.
TEST(Augment, JointConsistencyAgainstCoordinateGrid) {
  const std::int64_t n = 32;
  auto rows = torch::arange(n, torch::kFloat32).view({n, 1}).expand({n, n});
  auto cols = torch::arange(n, torch::kFloat32).view({1, n}).expand({n, n});
  torch::manual_seed(2);
  const auto mask = dualswin::testing::random_binary({n, n});
  ModalPair pair;
  pair.rgb = torch::stack({rows, cols, rows + cols});
  pair.aux = torch::stack({rows, cols, rows + cols, rows - cols});

  Rng rng(7);
  int affine_seen = 0, rot_seen = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto t = sample_geometric(geometric_only(), n, rng);
    affine_seen += t.affine;
    rot_seen += t.quarter_turns != 0;
    const auto out = apply_geometric(pair, mask, t);
    auto rgb = out.pair.rgb.accessor<float, 3>();
    auto aux = out.pair.aux.accessor<float, 3>();
    auto m_in = mask.accessor<float, 2>();
    auto m_out = out.mask.accessor<float, 2>();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const auto [sr, sc] = t.source_of(static_cast<double>(i), static_cast<double>(j), n);
        if (sr >= 0 && sr <= n - 1 && sc >= 0 && sc <= n - 1) {
          ASSERT_NEAR(rgb[0][i][j], sr, 1e-3) << "trial " << trial;
          ASSERT_NEAR(rgb[1][i][j], sc, 1e-3);
          ASSERT_EQ(rgb[0][i][j], aux[0][i][j]);
          ASSERT_EQ(rgb[1][i][j], aux[1][i][j]);
          ASSERT_EQ(rgb[2][i][j], aux[2][i][j]);
          ASSERT_NEAR(aux[3][i][j], sr - sc, 2e-3);
        }
        const double fr = sr - std::floor(sr), fc = sc - std::floor(sc);
        const bool ambiguous = std::abs(fr - 0.5) < 1e-3 || std::abs(fc - 0.5) < 1e-3;
        const auto nr = static_cast<std::int64_t>(std::llround(sr));
        const auto nc = static_cast<std::int64_t>(std::llround(sc));
        if (!ambiguous && nr >= 0 && nr < n && nc >= 0 && nc < n) ASSERT_EQ(m_out[i][j], m_in[nr][nc]);
        if (sr < -1 || sr > n || sc < -1 || sc > n) {
          ASSERT_EQ(m_out[i][j], 0.0f);
          ASSERT_EQ(rgb[0][i][j], 0.0f);
        }
      }
  }
  EXPECT_GT(affine_seen, 0);
  EXPECT_GT(rot_seen, 0);
}

TEST(Augment, MaskStaysBinaryAndPipelineIsDeterministic) {
  torch::manual_seed(3);
  const auto pair = random_stage1_pair(32);
  const auto mask = dualswin::testing::random_binary({32, 32});
  const AugmentPolicy policy;  // training defaults
  Rng a(99), b(99);
  for (int i = 0; i < 30; ++i) {
    const auto ga = apply_geometric(pair, mask, policy, a);
    const auto gb = apply_geometric(pair, mask, policy, b);
    EXPECT_TRUE(((ga.mask == 0) | (ga.mask == 1)).all().item<bool>());
    EXPECT_TRUE(torch::equal(ga.pair.rgb, gb.pair.rgb));
    EXPECT_TRUE(torch::equal(ga.mask, gb.mask));
    EXPECT_TRUE(torch::equal(apply_photometric(ga.pair.rgb, policy, a), apply_photometric(gb.pair.rgb, policy, b)));
  }
}

TEST(Augment, BlurFixesConstantImages) {
  const auto img = torch::full({3, 16, 16}, 0.37f);
  for (int k : {3, 5, 7}) EXPECT_LT((gaussian_blur(img, k) - img).abs().max().item<float>(), 1e-6f);
  EXPECT_DOUBLE_EQ(blur_sigma(3), 0.8);
  EXPECT_DOUBLE_EQ(blur_sigma(7), 0.3 * 2 + 0.8);
  EXPECT_ERROR_KIND(gaussian_blur(img, 4), ErrorKind::ConfigError);
}

TEST(Augment, BlurPreservesMassOnImpulse) {
  auto img = torch::zeros({1, 15, 15}, torch::kFloat64);
  img[0][7][7] = 1.0;
  const auto out = gaussian_blur(img, 5);
  EXPECT_NEAR(out.sum().item<double>(), 1.0, 1e-12);
  EXPECT_NEAR(out[0][7][6].item<double>(), out[0][6][7].item<double>(), 1e-15);
  EXPECT_GT(out[0][7][7].item<double>(), out[0][7][8].item<double>());
}

TEST(Augment, BrightnessShiftIsAdditive) {
  const auto img = torch::full({3, 4, 4}, 0.5);
  const auto out = adjust_brightness_contrast(img, 0.2, 0.0);
  EXPECT_LT((out - 0.7).abs().max().item<double>(), 1e-12);
  // Contrast scales deviations about the channel mean.
  auto ramp = torch::arange(16, torch::kFloat64).view({1, 4, 4});
  const auto c = adjust_brightness_contrast(ramp, 0.0, 0.2);
  EXPECT_NEAR(c.mean().item<double>(), ramp.mean().item<double>(), 1e-12);
  EXPECT_NEAR((c - c.mean()).abs().sum().item<double>(), 1.2 * (ramp - ramp.mean()).abs().sum().item<double>(), 1e-9);
}

TEST(Augment, PhotometricNeverTouchesAux) {
  torch::manual_seed(4);
  auto pair = random_stage1_pair(16);
  const auto aux_before = pair.aux.clone();
  AugmentPolicy p;
  p.p_blur = p.p_brightness_contrast = 1.0;
  Rng rng(5);
  pair.rgb = apply_photometric(pair.rgb, p, rng);
  EXPECT_TRUE(torch::equal(pair.aux, aux_before));
}

TEST(Augment, PolicyValidation) {
  AugmentPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.p_hflip = 1.5;
  EXPECT_ERROR_KIND(p.validate(), ErrorKind::ConfigError);
  p = AugmentPolicy{};
  p.affine_scale = {0.0, 1.1};
  EXPECT_ERROR_KIND(p.validate(), ErrorKind::ConfigError);
}

TEST(Augment, SamplerUsesAllQuarterTurns) {
  AugmentPolicy p = AugmentPolicy::disabled();
  p.p_rot90 = 1.0;
  Rng rng(11);
  std::set<int> turns;
  for (int i = 0; i < 100; ++i) turns.insert(sample_geometric(p, 32, rng).quarter_turns);
  EXPECT_EQ(turns, (std::set<int>{1, 2, 3}));
}
