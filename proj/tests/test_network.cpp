#include "dualswin/checkpoint.hpp"
#include "dualswin/losses.hpp"
#include "dualswin/network.hpp"
#include "support.hpp"

using namespace dualswin;
using dualswin::testing::micro_config;
using dualswin::testing::random_pair;

TEST(Network, DeskConfigShapeContract) {
  torch::manual_seed(0);
  DualSwinNet net(ModelConfig::desk());
  torch::NoGradGuard ng;
  EXPECT_EQ(net->forward(random_pair(2, 128)).sizes(), torch::IntArrayRef({2, 1, 128, 128}));
}

TEST(Network, OutputMatchesInputForSupportedSizes) {
  for (int size : {32, 64, 128}) {
    DualSwinNet net(micro_config(size));
    net->eval();  // the 32 px input reaches a 1 x 1 map at the deepest level
    torch::NoGradGuard ng;
    EXPECT_EQ(net->forward(random_pair(1, size)).sizes(), torch::IntArrayRef({1, 1, size, size}));
    EXPECT_ERROR_KIND(net->forward(random_pair(1, size == 32 ? 64 : 32)), ErrorKind::ShapeMismatch);
  }
  auto bad = micro_config(48);
  EXPECT_ERROR_KIND(bad.validate(), ErrorKind::ConfigError);
}

TEST(Network, AuxChannelsAreConsumed) {
  torch::manual_seed(1);
  auto cfg = micro_config(32);
  DualSwinNet on(cfg);
  cfg.aux_channel_mask = {false, false, false, false};
  DualSwinNet off(cfg);
  load_state(*off, named_state(*on));
  on->eval();
  off->eval();
  torch::NoGradGuard ng;
  const auto pair = random_pair(1, 32);
  EXPECT_FALSE(torch::equal(on->forward(pair), off->forward(pair)));
}

TEST(Network, ZeroAuxActsOnlyThroughAuxStream) {
  torch::manual_seed(2);
  DualSwinNet net(micro_config(32));
  net->eval();
  torch::NoGradGuard ng;
  auto pair = random_pair(1, 32);
  auto zeroed = pair;
  zeroed.aux = torch::zeros_like(pair.aux);
  const auto [rgb_a, aux_a] = net->encode(pair);
  const auto [rgb_b, aux_b] = net->encode(zeroed);
  for (int l = 0; l < 4; ++l) EXPECT_TRUE(torch::equal(rgb_a.levels[l], rgb_b.levels[l]));
  // Swapping in the aux pyramid of the zeroed input reproduces its logits.
  EXPECT_TRUE(torch::equal(net->forward_from_pyramids(rgb_a, aux_b).logits, net->forward(zeroed)));
  EXPECT_FALSE(torch::equal(net->forward(pair), net->forward(zeroed)));
}

TEST(PredictProb, SigmoidValuesAndDeterminism) {
  torch::manual_seed(3);
  DualSwinNet net(micro_config(32));
  const auto pair = random_pair(2, 32);
  net->train();
  const auto a = predict_prob(net, pair), b = predict_prob(net, pair);
  EXPECT_TRUE(net->is_training());
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_GE(a.min().item<float>(), 0.0f);
  EXPECT_LE(a.max().item<float>(), 1.0f);

  auto& cls = net->head->classifier;
  torch::NoGradGuard ng;
  cls->weight.zero_();
  cls->bias.fill_(0.0f);
  EXPECT_TRUE((predict_prob(net, pair) == 0.5f).all().item<bool>());
  cls->bias.fill_(20.0f);
  EXPECT_LT((predict_prob(net, pair) - 1.0f).abs().max().item<float>(), 1e-8f);
  cls->bias.fill_(-20.0f);
  EXPECT_LT(predict_prob(net, pair).max().item<float>(), 1e-8f);
}

TEST(ParameterAudit, FullConfigMatchesReportedSizes) {
  DualSwinNet net(ModelConfig::full());
  const auto audit = parameter_audit(net);
  auto near = [](std::int64_t n, double target) { return std::abs(static_cast<double>(n) - target) <= 0.05 * target; };
  EXPECT_TRUE(near(audit.groups.at("encoder_rgb"), 49e6)) << audit.to_text();
  EXPECT_TRUE(near(audit.groups.at("encoder_aux"), 49e6));
  EXPECT_TRUE(near(audit.groups.at("fusion"), 1.6e6));
  EXPECT_TRUE(near(audit.views.at("decoder_total"), 13.9e6));
  EXPECT_TRUE(near(audit.total, 113e6));
  std::int64_t sum = 0;
  for (const auto& [name, n] : audit.groups) sum += n;
  EXPECT_EQ(sum, audit.total);
  EXPECT_EQ(audit.total, count_parameters(*net));
}

TEST(ParameterAudit, DeskGroupsPartitionTotal) {
  for (auto cfg : {ModelConfig::desk(), micro_config(32)}) {
    cfg.decoder = DecoderKind::Hybrid;
    cfg.deep_supervision = true;
    DualSwinNet net(cfg);
    const auto audit = parameter_audit(net);
    std::int64_t sum = 0;
    for (const auto& [name, n] : audit.groups) sum += n;
    EXPECT_EQ(sum, audit.total);
    EXPECT_EQ(audit.total, count_parameters(*net));
    EXPECT_NE(audit.to_text().find("total"), std::string::npos);
  }
}

// Composite loss against central differences on twenty random parameter
// entries, double precision, train mode with head dropout off.
TEST(NetworkGradient, MicroModelMatchesFiniteDifferences) {
  torch::manual_seed(4);
  auto cfg = micro_config(32);
  cfg.head_dropout = 0.0;
  DualSwinNet net(cfg);
  net->to(torch::kFloat64);
  net->train();
  const auto pair = random_pair(2, 32, torch::kFloat64);
  const auto y = dualswin::testing::random_binary({2, 1, 32, 32}, 0.35).to(torch::kFloat64);
  LossConfig lc;
  lc.w_plus = 1.86;
  auto loss = [&] { return composite_loss(net->forward(pair), y, lc); };

  auto params = net->parameters();
  std::mt19937 gen(4);
  std::vector<std::pair<torch::Tensor, std::int64_t>> probes;
  while (probes.size() < 20) {
    auto& p = params[gen() % params.size()];
    probes.emplace_back(p, static_cast<std::int64_t>(gen() % p.numel()));
  }
  const auto r = dualswin::testing::check_gradients(loss, probes);
  EXPECT_EQ(r.checked, 20);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(ModelConfig, PresetsAndValidation) {
  const auto full = ModelConfig::full();
  EXPECT_EQ(full.encoder.base_dim, 96);
  EXPECT_EQ(full.encoder.depths, (std::array<int, 4>{2, 2, 18, 2}));
  EXPECT_EQ(full.encoder.window, 8);
  EXPECT_EQ(full.decoder_width, 256);
  EXPECT_EQ(full.out_size, 128);
  EXPECT_FALSE(full.deep_supervision);
  EXPECT_EQ(full.rgb_encoder().in_channels, 3);
  EXPECT_EQ(full.aux_encoder().in_channels, 4);
  const auto desk = ModelConfig::desk();
  EXPECT_EQ(desk.encoder.base_dim, 32);
  EXPECT_EQ(desk.decoder_width, 64);
}
