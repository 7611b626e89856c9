// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Optional argument: a criterion number to run on its own.

#include <torch/torch.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dualswin/checkpoint.hpp"
#include "dualswin/config.hpp"
#include "dualswin/decoder.hpp"
#include "dualswin/encoder.hpp"
#include "dualswin/error.hpp"
#include "dualswin/inference.hpp"
#include "dualswin/losses.hpp"
#include "dualswin/metrics.hpp"
#include "dualswin/network.hpp"
#include "dualswin/tile_io.hpp"
#include "dualswin/trainer.hpp"

using namespace dualswin;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<RawTile> synth_tiles(int n, int size, std::uint64_t base_seed) {
  std::vector<RawTile> tiles;
  for (int i = 0; i < n; ++i) {
    SynthParams p;
    p.size = size;
    p.seed = base_seed + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof id, "tile_%03d", i);
    tiles.push_back(generate_synthetic_tile(p, id));
  }
  return tiles;
}

ModelConfig micro(int out_size, int base_dim = 16, int width = 16) {
  ModelConfig m;
  m.encoder.base_dim = base_dim;
  m.encoder.depths = {1, 1, 1, 1};
  m.encoder.heads = {1, 2, 4, 8};
  m.encoder.window = 4;
  m.encoder.cpb_hidden = 16;
  m.decoder_width = width;
  m.out_size = out_size;
  return m;
}

ModalPair random_pair(std::int64_t b, std::int64_t size, torch::Dtype dtype = torch::kFloat32) {
  return {torch::randn({b, 3, size, size}, torch::dtype(dtype)), torch::randn({b, 4, size, size}, torch::dtype(dtype)),
          true};
}

double rel_err(double a, double n) {
  const double s = std::max(std::abs(a), std::abs(n));
  return s > 1e-7 ? std::abs(a - n) / s : std::abs(a - n);
}

/// Worst relative error between autograd and central differences
/// (fourth-order stencil when `five_point`).
double grad_check(const std::function<torch::Tensor()>& loss,
                  const std::vector<std::pair<torch::Tensor, std::int64_t>>& probes, double h = 1e-6,
                  bool five_point = false) {
  for (auto& [t, i] : probes)
    if (t.grad().defined()) t.mutable_grad().zero_();
  loss().backward();
  double worst = 0;
  for (auto& [t, i] : probes) {
    const double analytic = t.grad().reshape(-1)[i].item<double>();
    torch::NoGradGuard ng;
    auto flat = t.view(-1);
    const double orig = flat[i].item<double>();
    auto at = [&](double offset) {
      flat[i].fill_(orig + offset);
      return loss().item<double>();
    };
    const double numeric = five_point ? (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
                                      : (at(h) - at(-h)) / (2 * h);
    flat[i].fill_(orig);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

Outcome shape_contract() {
  int checked = 0;
  for (auto base : {EncoderConfig::desk(3), EncoderConfig::full(3), EncoderConfig::desk(4), EncoderConfig::full(4)}) {
    SwinEncoder enc(base);
    enc->eval();
    torch::NoGradGuard ng;
    for (int h : {32, 64, 128}) {
      const auto p = enc->forward(torch::randn({1, base.in_channels, h, h}));
      for (int l = 0; l < 4; ++l) {
        const std::int64_t stride = 4 << l, ch = static_cast<std::int64_t>(base.base_dim) << l;
        if (p.levels[l].sizes() != torch::IntArrayRef({1, ch, h / stride, h / stride}))
          return {false, "level " + std::to_string(l) + " wrong at H=" + std::to_string(h)};
      }
      ++checked;
    }
  }
  SwinEncoder full(EncoderConfig::full(3));
  full->eval();
  torch::NoGradGuard ng;
  const auto p = full->forward(torch::randn({1, 3, 128, 128}));
  const std::vector<std::int64_t> ch{96, 192, 384, 768}, side{32, 16, 8, 4};
  for (int l = 0; l < 4; ++l)
    if (p.levels[l].size(1) != ch[l] || p.levels[l].size(2) != side[l]) return {false, "full config pyramid"};
  return {true, std::to_string(checked) + " (config, H) cases; full = {96,192,384,768} x {32,16,8,4}"};
}

Outcome warm_init() {
  PatchEmbed pe(3, 96, 4);
  const auto rgb = pe->kernel();
  const auto aux = warm_init_aux_patch_embed(rgb);
  const auto mean = (rgb.weight.select(1, 0) + rgb.weight.select(1, 1) + rgb.weight.select(1, 2)) / 3;
  const double err = (aux.weight.select(1, 3) - mean).abs().max().item<double>();
  const bool copies = torch::equal(aux.weight.narrow(1, 0, 3), rgb.weight) && torch::equal(aux.bias, rgb.bias);
  return {err == 0.0 && copies && aux.weight.size(1) == 4, fmt("4th slice max abs error %.1e", err)};
}

Outcome parameter_audit_check() {
  DualSwinNet net(ModelConfig::full());
  const auto a = parameter_audit(net);
  auto within = [](std::int64_t n, double t) { return std::abs(n - t) <= 0.05 * t; };
  const bool ok = within(a.groups.at("encoder_rgb"), 49e6) && within(a.groups.at("encoder_aux"), 49e6) &&
                  within(a.groups.at("fusion"), 1.6e6) && within(a.views.at("decoder_total"), 13.9e6) &&
                  within(a.total, 113e6);
  return {ok, fmt("rgb %.2fM aux %.2fM fusion %.3fM decoder %.2fM", a.groups.at("encoder_rgb") / 1e6,
                  a.groups.at("encoder_aux") / 1e6, a.groups.at("fusion") / 1e6, a.views.at("decoder_total") / 1e6) +
                  fmt(" total %.2fM", a.total / 1e6)};
}

Outcome unetpp_graph_check() {
  const auto g = unetpp_graph(4);
  if (g.size() != 6) return {false, "node count " + std::to_string(g.size())};
  std::set<std::pair<int, int>> done{{0, 0}, {1, 0}, {2, 0}, {3, 0}};
  for (const auto& n : g) {
    std::vector<std::pair<int, int>> expect;
    for (int k = 0; k < n.j; ++k) expect.push_back({n.i, k});
    expect.push_back({n.i + 1, n.j - 1});
    if (n.inputs != expect) return {false, "inputs of node " + std::to_string(n.i) + "," + std::to_string(n.j)};
    for (const auto& in : n.inputs)
      if (!done.count(in)) return {false, "not topological"};
    done.insert({n.i, n.j});
  }
  const auto& last = g.back();
  const bool ok = last.i == 0 && last.j == 3 && last.arity() == 4;
  UnetPP net(8);
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> pyr;
  for (int l = 0; l < 4; ++l) pyr.push_back(torch::randn({1, 8, 16 >> l, 16 >> l}));
  const auto nodes = net->forward_nodes(pyr);
  return {ok && nodes.size() == 10, "6 dense nodes, x03 arity " + std::to_string(last.arity())};
}

Outcome loss_analytics() {
  auto s = [](double v) { return torch::full({1}, v, torch::kFloat64); };
  const double bce = bce_weighted(s(0), s(1), 1.86).item<double>();
  const double bce_err = std::abs(bce - 1.86 * std::log(2.0));
  auto y = torch::zeros({4, 4}, torch::kFloat64);
  y.narrow(0, 0, 2).fill_(1);
  const double perfect = soft_dice(y, y, 1e-7).item<double>();
  const auto zero = torch::zeros({4, 4}, torch::kFloat64);
  const double empty = soft_dice(zero, zero, 1e-7).item<double>();
  torch::manual_seed(11);
  const auto z = torch::randn({2, 1, 8, 8}, torch::kFloat64);
  const auto yy = (torch::rand({2, 1, 8, 8}) < 0.4).to(torch::kFloat64);
  LossConfig cfg;
  cfg.w_plus = 1.86;
  const double mix = 0.5 * bce_weighted(z, yy, 1.86).item<double>() +
                     0.5 * soft_dice(torch::sigmoid(z), yy, cfg.dice_eps).item<double>();
  const bool exact_mix = composite_loss(z, yy, cfg).item<double>() == mix;
  return {bce_err <= 1e-9 && perfect <= 1e-6 && empty == 1.0 && exact_mix,
          fmt("bce err %.1e, perfect dice %.1e, empty dice %.17g", bce_err, perfect, empty) +
              (exact_mix ? ", composite exact" : ", composite inexact")};
}

Outcome gradient_suite() {
  torch::manual_seed(12);
  double worst_loss = 0;
  const auto z = (torch::randn({8, 8}, torch::kFloat64) * 2).requires_grad_(true);
  const auto y = (torch::rand({8, 8}) < 0.4).to(torch::kFloat64);
  std::vector<std::pair<torch::Tensor, std::int64_t>> all;
  for (std::int64_t i = 0; i < 64; ++i) all.emplace_back(z, i);
  for (auto kind : {LossKind::Bce, LossKind::BceWeighted, LossKind::Dice, LossKind::BceDice, LossKind::Composite,
                    LossKind::Focal, LossKind::FocalDice, LossKind::SoftIou, LossKind::BceSoftIou, LossKind::Tversky}) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.w_plus = 1.86;
    worst_loss = std::max(worst_loss, grad_check([&] { return compute_loss(z, y, cfg); }, all, 1e-3, true));
  }

  auto cfg = micro(32, 8, 8);
  cfg.head_dropout = 0.0;
  DualSwinNet net(cfg);
  net->to(torch::kFloat64);
  net->train();
  const auto pair = random_pair(2, 32, torch::kFloat64);
  const auto yy = (torch::rand({2, 1, 32, 32}) < 0.35).to(torch::kFloat64);
  LossConfig lc;
  lc.w_plus = 1.86;
  auto params = net->parameters();
  std::mt19937 gen(12);
  std::vector<std::pair<torch::Tensor, std::int64_t>> probes;
  while (probes.size() < 20) {
    auto& p = params[gen() % params.size()];
    probes.emplace_back(p, static_cast<std::int64_t>(gen() % p.numel()));
  }
  const double worst_net = grad_check([&] { return composite_loss(net->forward(pair), yy, lc); }, probes);
  return {worst_loss < 1e-6 && worst_net < 1e-4,
          fmt("10 losses max rel %.1e; end-to-end max rel %.1e over 20 params", worst_loss, worst_net)};
}

Outcome metrics_oracle() {
  torch::manual_seed(13);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto pred = (torch::rand({16, 16}) < 0.5).to(torch::kFloat32);
    const auto gt = (torch::rand({16, 16}) < (trial % 5) / 4.0).to(torch::kFloat32);
    ConfusionCounts o;
    auto pa = pred.accessor<float, 2>();
    auto ga = gt.accessor<float, 2>();
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        const bool p = pa[i][j] > 0.5f, g = ga[i][j] > 0.5f;
        (p && g ? o.tp : p ? o.fp : g ? o.fn : o.tn)++;
      }
    const auto c = accumulate({}, pred, gt);
    if (!(c == o)) return {false, "count mismatch at trial " + std::to_string(trial)};
    const auto m = compute_metrics(c);
    auto ratio = [](std::int64_t n, std::int64_t d, bool absent) {
      return d == 0 ? (absent ? 1.0 : 0.0) : static_cast<double>(n) / static_cast<double>(d);
    };
    const bool fg_absent = o.tp + o.fp + o.fn == 0, bg_absent = o.tn + o.fp + o.fn == 0;
    if (m.iou_fg != ratio(o.tp, o.tp + o.fp + o.fn, fg_absent) ||
        m.iou_bg != ratio(o.tn, o.tn + o.fp + o.fn, bg_absent) || m.miou != (m.iou_fg + m.iou_bg) / 2)
      return {false, "metric mismatch at trial " + std::to_string(trial)};
  }
  const auto two = compute_metrics(accumulate({}, torch::tensor({1.0f, 0.0f, 0.0f, 0.0f}).view({2, 2}),
                                              torch::tensor({1.0f, 1.0f, 0.0f, 0.0f}).view({2, 2})));
  return {std::abs(two.miou - 7.0 / 12.0) < 1e-15, fmt("10000 pairs exact; 2x2 example mIoU %.17g", two.miou)};
}

Outcome ema_closed_form() {
  EmaState s;
  s.gamma = 0.995;
  s.shadow.emplace_back("w", torch::zeros({1}, torch::kFloat64));
  const double c = 3.0;
  for (int k = 0; k < 200; ++k) ema_update(s, {{"w", torch::full({1}, c, torch::kFloat64)}});
  const double got = s.shadow[0].second.item<double>();
  const double expect = c * (1 - std::pow(0.995, 200));
  return {std::abs(got - expect) <= 1e-10 && std::abs(got / c - 0.6330) < 5e-5,
          fmt("shadow/c = %.6f, error %.1e", got / c, std::abs(got - expect))};
}

Outcome schedule_contract() {
  TrainConfig cfg;
  const std::int64_t spe = 10, warm = 3 * spe, total = 50 * spe;  // even cosine span
  const double junction = std::abs(lr_at_step(warm - 1, cfg, spe) - lr_at_step(warm, cfg, spe));
  const double mid = lr_at_step(warm + (total - warm) / 2, cfg, spe);
  const double end = lr_at_step(total, cfg, spe);
  const bool ok = junction == 0.0 && std::abs(mid - cfg.lr / 2) < 1e-15 && end == 0.0;
  return {ok, fmt("junction jump %.1e, midpoint %.3e (base/2 %.3e), terminus %.1e", junction, mid, cfg.lr / 2, end)};
}

Outcome tta_exactness() {
  torch::manual_seed(14);
  const auto x = torch::randn({2, 7, 16, 16});
  for (View v : TtaPolicy::preset("8view").views)
    if (!torch::equal(invert_view(apply_view(x, v), v), x)) return {false, "view " + to_string(v) + " not inverted"};
  DualSwinNet net(micro(32, 8, 8));
  net->eval();
  const auto pair = random_pair(1, 32);
  std::vector<DualSwinNet> five(5, net);
  const bool same = torch::equal(tta_predict(five, pair, TtaPolicy::preset("none")).probs, predict_prob(net, pair));
  const auto prov = tta_predict(five, pair, TtaPolicy::preset("4view")).provenance.size();
  return {same && prov == 20, std::string("8 views bit-exact; 5-copy ensemble ") + (same ? "equal" : "differs") +
                                  "; provenance " + std::to_string(prov)};
}

Outcome learning_sanity() {
  // Overfit: augmentation off, train tiles double as the validation set.
  const auto train8 = synth_tiles(8, 64, 500);
  FoldData fd;
  fd.train = make_samples(train8);
  fd.val = fd.train;
  fd.stats = compute_norm_stats(train8);
  TrainConfig over;
  over.lr = 2e-3;
  over.epochs = 200;
  over.warmup_epochs = 5;
  over.batch = 4;
  over.seed = 1;
  over.augment = AugmentPolicy::disabled();
  torch::manual_seed(1);
  DualSwinNet net(micro(64));
  int reached = -1;
  const auto fit = train_fold(net, fd, over, 0, [&](const EpochLog& e) {
    if (reached < 0 && std::max(e.val_miou_instant, e.val_miou_ema) >= 0.95) reached = e.epoch;
  });

  // 2-fold CV on 32 tiles: composite against unweighted BCE over the same
  // three seeds (split, init, shuffle and augmentation all follow the seed).
  const auto tiles32 = synth_tiles(32, 64, 900);
  double composite = 0, bce = 0, worst_composite = 1;
  for (std::uint64_t seed : {2, 3, 4}) {
    TrainConfig cv;
    cv.lr = 2e-3;
    cv.epochs = 40;
    cv.warmup_epochs = 2;
    cv.batch = 4;
    cv.folds = 2;
    cv.seed = seed;
    const double c = run_cv(tiles32, micro(64), cv).mean;
    cv.loss.kind = LossKind::Bce;
    const double b = run_cv(tiles32, micro(64), cv).mean;
    std::printf("  seed %llu: composite %.4f bce %.4f\n", static_cast<unsigned long long>(seed), c, b);
    composite += c / 3;
    bce += b / 3;
    worst_composite = std::min(worst_composite, c);
  }

  const bool ok = reached >= 0 && worst_composite >= 0.70 && composite > bce;
  return {ok, fmt("overfit best %.4f (first >= 0.95 at epoch %g); 3-seed CV composite %.4f vs bce %.4f",
                  fit.best_miou, reached, composite, bce)};
}

Outcome determinism() {
  const auto tiles = synth_tiles(8, 64, 300);
  const auto root = fs::temp_directory_path() / ("dualswin_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch = 4;
  cfg.folds = 2;
  cfg.seed = 5;
  fs::create_directories(root / "tiles");
  for (const auto& t : tiles) save_tile(root / "tiles" / (t.tile_id + ".mmt"), t);

  bool same = true;
  std::vector<std::string> first;
  for (const char* run : {"a", "b"}) {
    const auto out = root / run;
    run_cv(tiles, micro(64), cfg, out);
    std::vector<DualSwinNet> models;
    std::optional<NormStats> stats;
    for (int k = 0; k < 2; ++k) {
      auto ck = load_checkpoint(out / ("fold_" + std::to_string(k)) / "checkpoint");
      models.push_back(ck.model);
      stats = ck.stats;
    }
    PredictOptions opt;
    opt.policy = TtaPolicy::preset("4view");
    const auto summary = predict_dataset(models, root / "tiles", *stats, opt, out / "pred");
    std::vector<std::string> files{slurp(out / "fold_0" / "train_log.csv"), slurp(out / "fold_1" / "train_log.csv"),
                                   slurp(out / "cv_report.txt")};
    for (const auto& p : summary.written) files.push_back(slurp(p));
    if (first.empty()) {
      first = files;
    } else {
      same = files == first;
    }
  }
  const auto n = first.size();
  fs::remove_all(root);
  return {same, std::to_string(n) + " files (logs, report, masks) " + (same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"shape contract", shape_contract},
      {"warm-init exactness", warm_init},
      {"parameter audit", parameter_audit_check},
      {"UNet++ graph audit", unetpp_graph_check},
      {"loss analytics", loss_analytics},
      {"gradient suite", gradient_suite},
      {"metrics oracle", metrics_oracle},
      {"EMA closed form", ema_closed_form},
      {"schedule contract", schedule_contract},
      {"TTA exactness", tta_exactness},
      {"desk-scale learning sanity", learning_sanity},
      {"determinism", determinism},
  };
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only > 0 && static_cast<int>(i) + 1 != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%2zu] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
