#include "dualswin/checkpoint.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dualswin/error.hpp"
#include "dualswin/raster_io.hpp"

namespace fs = std::filesystem;

namespace dualswin {

namespace {
constexpr const char* kFormat = "dualswin-tensors-v1";
constexpr std::int64_t kHeaderBytes = 16;
}  // namespace

void save_tensor_map(const fs::path& dir, const TensorMap& tensors) {
  fs::create_directories(dir);
  std::ofstream blob(dir / "tensors.bin", std::ios::binary);
  if (!blob) fail(ErrorKind::IoError, "cannot write " + (dir / "tensors.bin").string());
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    auto flat = tensor.detach().to(torch::kCPU).to(torch::kFloat32).reshape({1, 1, -1});
    write_mmt1(blob, flat);
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", tensor.sizes().vec()}, {"offset", offset}, {"numel", tensor.numel()}});
    offset += kHeaderBytes + tensor.numel() * 4;
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << "\n";
}

TensorMap load_tensor_map(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) fail(ErrorKind::CheckpointLoadError, "missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CheckpointLoadError, std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kFormat) fail(ErrorKind::CheckpointLoadError, "unknown checkpoint format");
  std::ifstream blob(dir / "tensors.bin", std::ios::binary);
  if (!blob) fail(ErrorKind::CheckpointLoadError, "missing tensors.bin in " + dir.string());
  TensorMap out;
  for (const auto& entry : manifest["tensors"]) {
    blob.seekg(entry["offset"].get<std::int64_t>());
    torch::Tensor t;
    try {
      t = read_mmt1(blob);
    } catch (const Error& e) {
      fail(ErrorKind::CheckpointLoadError, e.what());
    }
    auto shape = entry["shape"].get<std::vector<std::int64_t>>();
    out.emplace_back(entry["name"].get<std::string>(), t.reshape(shape));
  }
  return out;
}

TensorMap named_state(const torch::nn::Module& module) {
  TensorMap out;
  for (const auto& p : module.named_parameters()) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers()) out.emplace_back(b.key(), b.value());
  return out;
}

TensorMap clone_state(const torch::nn::Module& module) {
  TensorMap out = named_state(module);
  for (auto& [name, t] : out) t = t.detach().clone();
  return out;
}

void load_state(torch::nn::Module& module, const TensorMap& tensors) {
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  torch::NoGradGuard no_grad;
  for (auto& [name, dst] : named_state(module)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::CheckpointLoadError, "checkpoint lacks tensor " + name);
    if (it->second->sizes() != dst.sizes()) {
      std::ostringstream msg;
      msg << "shape clash for " << name << ": " << it->second->sizes() << " vs " << dst.sizes();
      fail(ErrorKind::CheckpointLoadError, msg.str());
    }
    dst.copy_(it->second->to(dst.dtype()));
  }
}

}  // namespace dualswin
