#pragma once

#include <gtest/gtest.h>
#include <unistd.h>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dualswin/error.hpp"
#include "dualswin/network.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin::testing {

#define EXPECT_ERROR_KIND(stmt, expected_kind)                                   \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << ::dualswin::error_name(expected_kind);     \
    } catch (const ::dualswin::Error& e) {                                       \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                            \
    }                                                                            \
  } while (0)

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dualswin_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// |a - n| / max(|a|, |n|), falling back to |a - n| when both are tiny.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale > floor ? diff / scale : diff;
}

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
  std::string worst;
};

/// Central differences of `loss()` against the accumulated .grad of each
/// probed element. `probes` are (tensor, flat index) pairs; tensors must be
/// double leaves that require grad. `five_point` uses the fourth-order
/// stencil, which allows a larger h for smooth losses.
inline GradCheckResult check_gradients(const std::function<torch::Tensor()>& loss,
                                       const std::vector<std::pair<torch::Tensor, std::int64_t>>& probes,
                                       double h = 1e-6, bool five_point = false) {
  for (const auto& [t, i] : probes) {
    (void)i;
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  loss().backward();
  GradCheckResult out;
  for (const auto& [t, i] : probes) {
    const double analytic = t.grad().reshape(-1)[i].item<double>();
    double numeric = 0;
    {
      torch::NoGradGuard ng;
      auto flat = t.view(-1);
      const double orig = flat[i].item<double>();
      auto at = [&](double offset) {
        flat[i].fill_(orig + offset);
        return loss().item<double>();
      };
      numeric = five_point ? (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
                           : (at(h) - at(-h)) / (2 * h);
      flat[i].fill_(orig);
    }
    const double rel = relative_error(analytic, numeric);
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = "index " + std::to_string(i) + ": analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
    ++out.checked;
  }
  return out;
}

/// Every element of `x` as a probe.
inline std::vector<std::pair<torch::Tensor, std::int64_t>> all_elements(const torch::Tensor& x) {
  std::vector<std::pair<torch::Tensor, std::int64_t>> probes;
  for (std::int64_t i = 0; i < x.numel(); ++i) probes.emplace_back(x, i);
  return probes;
}

/// Tiny model used by the gradient and learning tests.
inline ModelConfig micro_config(int out_size = 32, int base_dim = 8, int width = 8) {
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

inline ModalPair random_pair(std::int64_t batch, std::int64_t size, torch::Dtype dtype = torch::kFloat32) {
  ModalPair p;
  p.rgb = torch::randn({batch, 3, size, size}, torch::dtype(dtype));
  p.aux = torch::randn({batch, 4, size, size}, torch::dtype(dtype));
  p.normalized = true;
  return p;
}

inline torch::Tensor random_binary(std::vector<std::int64_t> shape, double p = 0.5) {
  return (torch::rand(shape) < p).to(torch::kFloat32);
}

/// `n` synthetic tiles with ids synth_000.., seeds base_seed + i.
inline std::vector<RawTile> synth_tiles(int n, int size = 64, std::uint64_t base_seed = 100) {
  std::vector<RawTile> tiles;
  for (int i = 0; i < n; ++i) {
    SynthParams p;
    p.size = size;
    p.seed = base_seed + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03d", i);
    tiles.push_back(generate_synthetic_tile(p, id));
  }
  return tiles;
}

}  // namespace dualswin::testing
