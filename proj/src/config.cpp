#include "dualswin/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dualswin/checkpoint.hpp"
#include "dualswin/error.hpp"

namespace dualswin {

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) fail(ErrorKind::ConfigError, where + " must be a mapping");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key)) fail(ErrorKind::ConfigError, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorKind::ConfigError, "bad value for " + where + "." + key);
  }
}

template <typename T, std::size_t N>
void read_array(const YAML::Node& node, const char* key, std::array<T, N>& out, const std::string& where) {
  if (!node[key]) return;
  const auto seq = node[key];
  if (!seq.IsSequence() || seq.size() != N)
    fail(ErrorKind::ConfigError, where + "." + key + " must be a list of " + std::to_string(N) + " values");
  try {
    for (std::size_t i = 0; i < N; ++i) out[i] = seq[i].as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorKind::ConfigError, "bad value in " + where + "." + key);
  }
}

std::string read_string(const YAML::Node& node, const char* key, const std::string& fallback,
                        const std::string& where) {
  std::string s = fallback;
  read(node, key, s, where);
  return s;
}

void parse_encoder(const YAML::Node& n, EncoderConfig& e) {
  const std::string w = "model.encoder";
  check_keys(n, w, {"base_dim", "depths", "heads", "window", "patch_stride", "mlp_ratio", "cpb_hidden", "auto_shrink"});
  read(n, "base_dim", e.base_dim, w);
  read_array(n, "depths", e.depths, w);
  read_array(n, "heads", e.heads, w);
  read(n, "window", e.window, w);
  read(n, "patch_stride", e.patch_stride, w);
  read(n, "mlp_ratio", e.mlp_ratio, w);
  read(n, "cpb_hidden", e.cpb_hidden, w);
  read(n, "auto_shrink", e.auto_shrink, w);
}

ModelConfig parse_model(const YAML::Node& n) {
  const std::string w = "model";
  check_keys(n, w, {"preset", "encoder", "fusion", "decoder", "decoder_width", "out_size", "head_dropout",
                    "deep_supervision", "se_reduction", "aux_channel_mask"});
  const auto preset = read_string(n, "preset", "desk", w);
  ModelConfig m;
  if (preset == "full") {
    m = ModelConfig::full();
  } else if (preset != "desk") {
    fail(ErrorKind::ConfigError, "model.preset must be desk or full");
  }
  if (n["encoder"]) parse_encoder(n["encoder"], m.encoder);
  m.fusion_mode = parse_fusion_mode(read_string(n, "fusion", to_string(m.fusion_mode), w));
  m.decoder = parse_decoder_kind(read_string(n, "decoder", to_string(m.decoder), w));
  read(n, "decoder_width", m.decoder_width, w);
  read(n, "out_size", m.out_size, w);
  read(n, "head_dropout", m.head_dropout, w);
  read(n, "deep_supervision", m.deep_supervision, w);
  read(n, "se_reduction", m.se_reduction, w);
  read_array(n, "aux_channel_mask", m.aux_channel_mask, w);
  m.validate();
  return m;
}

LossConfig parse_loss(const YAML::Node& n) {
  const std::string w = "train.loss";
  check_keys(n, w, {"kind", "w_plus", "dice_eps", "focal_gamma", "tversky_alpha"});
  LossConfig l;
  l.kind = parse_loss_kind(read_string(n, "kind", to_string(l.kind), w));
  if (n["w_plus"]) {
    const auto s = n["w_plus"].as<std::string>();
    if (s == "auto") {
      l.w_plus_auto = true;
    } else {
      l.w_plus_auto = false;
      read(n, "w_plus", l.w_plus, w);
    }
  }
  read(n, "dice_eps", l.dice_eps, w);
  read(n, "focal_gamma", l.focal_gamma, w);
  read(n, "tversky_alpha", l.tversky_alpha, w);
  return l;
}

AugmentPolicy parse_augment(const YAML::Node& n) {
  const std::string w = "augment";
  check_keys(n, w, {"p_hflip", "p_vflip", "p_rot90", "p_affine", "affine_shift", "affine_scale", "affine_rot_deg",
                    "p_blur", "blur_kernel", "p_brightness_contrast", "bc_limit"});
  AugmentPolicy a;
  read(n, "p_hflip", a.p_hflip, w);
  read(n, "p_vflip", a.p_vflip, w);
  read(n, "p_rot90", a.p_rot90, w);
  read(n, "p_affine", a.p_affine, w);
  read(n, "affine_shift", a.affine_shift, w);
  read_array(n, "affine_scale", a.affine_scale, w);
  read(n, "affine_rot_deg", a.affine_rot_deg, w);
  read(n, "p_blur", a.p_blur, w);
  read_array(n, "blur_kernel", a.blur_kernel, w);
  read(n, "p_brightness_contrast", a.p_brightness_contrast, w);
  read(n, "bc_limit", a.bc_limit, w);
  a.validate();
  return a;
}

TrainConfig parse_train(const YAML::Node& n) {
  const std::string w = "train";
  check_keys(n, w, {"lr", "weight_decay", "epochs", "batch", "warmup_epochs", "ema_gamma", "folds", "precision",
                    "val_threshold", "metrics_mode", "loss"});
  TrainConfig t;
  read(n, "lr", t.lr, w);
  read(n, "weight_decay", t.weight_decay, w);
  read(n, "epochs", t.epochs, w);
  read(n, "batch", t.batch, w);
  read(n, "warmup_epochs", t.warmup_epochs, w);
  read(n, "ema_gamma", t.ema_gamma, w);
  read(n, "folds", t.folds, w);
  t.precision = parse_precision(read_string(n, "precision", to_string(t.precision), w));
  read(n, "val_threshold", t.val_threshold, w);
  t.metrics_mode = parse_aggregation_mode(read_string(n, "metrics_mode", to_string(t.metrics_mode), w));
  if (n["loss"]) t.loss = parse_loss(n["loss"]);
  return t;
}

RasterFormat parse_format(const std::string& s) {
  if (s == "raw") return RasterFormat::Raw;
  if (s == "geotiff") return RasterFormat::GeoTiff;
  fail(ErrorKind::ConfigError, "data.format must be raw or geotiff");
}

std::string format_name(RasterFormat f) { return f == RasterFormat::GeoTiff ? "geotiff" : "raw"; }

YAML::Node parse_document(const std::string& yaml) {
  try {
    auto doc = YAML::Load(yaml);
    if (doc.IsNull()) return YAML::Node(YAML::NodeType::Map);
    return doc;
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::ConfigError, std::string("YAML syntax: ") + e.what());
  }
}

void emit_model(YAML::Emitter& out, const ModelConfig& m) {
  out << YAML::BeginMap;
  out << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "base_dim" << YAML::Value << m.encoder.base_dim;
  out << YAML::Key << "depths" << YAML::Value << YAML::Flow << std::vector<int>(m.encoder.depths.begin(), m.encoder.depths.end());
  out << YAML::Key << "heads" << YAML::Value << YAML::Flow << std::vector<int>(m.encoder.heads.begin(), m.encoder.heads.end());
  out << YAML::Key << "window" << YAML::Value << m.encoder.window;
  out << YAML::Key << "patch_stride" << YAML::Value << m.encoder.patch_stride;
  out << YAML::Key << "mlp_ratio" << YAML::Value << m.encoder.mlp_ratio;
  out << YAML::Key << "cpb_hidden" << YAML::Value << m.encoder.cpb_hidden;
  out << YAML::Key << "auto_shrink" << YAML::Value << m.encoder.auto_shrink;
  out << YAML::EndMap;
  out << YAML::Key << "fusion" << YAML::Value << to_string(m.fusion_mode);
  out << YAML::Key << "decoder" << YAML::Value << to_string(m.decoder);
  out << YAML::Key << "decoder_width" << YAML::Value << m.decoder_width;
  out << YAML::Key << "out_size" << YAML::Value << m.out_size;
  out << YAML::Key << "head_dropout" << YAML::Value << m.head_dropout;
  out << YAML::Key << "deep_supervision" << YAML::Value << m.deep_supervision;
  out << YAML::Key << "se_reduction" << YAML::Value << m.se_reduction;
  out << YAML::Key << "aux_channel_mask" << YAML::Value << YAML::Flow
      << std::vector<bool>(m.aux_channel_mask.begin(), m.aux_channel_mask.end());
  out << YAML::EndMap;
}

}  // namespace

ModelConfig parse_model_config(const std::string& yaml) { return parse_model(parse_document(yaml)); }

std::string serialize_model_config(const ModelConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  emit_model(out, cfg);
  return std::string(out.c_str()) + "\n";
}

ExperimentConfig parse_config(const std::string& yaml) {
  const auto doc = parse_document(yaml);
  check_keys(doc, "config", {"seed", "data", "model", "pretrained", "train", "augment", "inference"});
  ExperimentConfig c;
  read(doc, "seed", c.seed, "config");
  if (const auto d = doc["data"]) {
    check_keys(d, "data", {"root", "output_root", "format", "mask_source"});
    read(d, "root", c.data.root, "data");
    read(d, "output_root", c.data.output_root, "data");
    c.data.format = parse_format(read_string(d, "format", format_name(c.data.format), "data"));
    c.data.mask_source = parse_mask_source(read_string(d, "mask_source", to_string(c.data.mask_source), "data"));
  }
  if (doc["model"]) c.model = parse_model(doc["model"]);
  if (const auto p = doc["pretrained"]) {
    check_keys(p, "pretrained", {"rgb", "aux", "mapping"});
    read(p, "rgb", c.pretrained.rgb, "pretrained");
    read(p, "aux", c.pretrained.aux, "pretrained");
    read(p, "mapping", c.pretrained.mapping, "pretrained");
  }
  if (doc["train"]) c.train = parse_train(doc["train"]);
  if (doc["augment"]) c.train.augment = parse_augment(doc["augment"]);
  if (const auto i = doc["inference"]) {
    check_keys(i, "inference", {"tta", "tau"});
    c.inference.tta = TtaPolicy::preset(read_string(i, "tta", c.inference.tta.name, "inference"));
    read(i, "tau", c.inference.tau, "inference");
    if (!(c.inference.tau > 0.0 && c.inference.tau < 1.0)) fail(ErrorKind::BadThreshold, "inference.tau must lie in (0, 1)");
  }
  c.train.seed = c.seed;
  c.train.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "root" << YAML::Value << c.data.root;
  out << YAML::Key << "output_root" << YAML::Value << c.data.output_root;
  out << YAML::Key << "format" << YAML::Value << format_name(c.data.format);
  out << YAML::Key << "mask_source" << YAML::Value << to_string(c.data.mask_source);
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value;
  emit_model(out, c.model);

  out << YAML::Key << "pretrained" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "rgb" << YAML::Value << c.pretrained.rgb;
  out << YAML::Key << "aux" << YAML::Value << c.pretrained.aux;
  out << YAML::Key << "mapping" << YAML::Value << c.pretrained.mapping;
  out << YAML::EndMap;

  const auto& t = c.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lr" << YAML::Value << t.lr;
  out << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  out << YAML::Key << "epochs" << YAML::Value << t.epochs;
  out << YAML::Key << "batch" << YAML::Value << t.batch;
  out << YAML::Key << "warmup_epochs" << YAML::Value << t.warmup_epochs;
  out << YAML::Key << "ema_gamma" << YAML::Value << t.ema_gamma;
  out << YAML::Key << "folds" << YAML::Value << t.folds;
  out << YAML::Key << "precision" << YAML::Value << to_string(t.precision);
  out << YAML::Key << "val_threshold" << YAML::Value << t.val_threshold;
  out << YAML::Key << "metrics_mode" << YAML::Value << to_string(t.metrics_mode);
  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << to_string(t.loss.kind);
  if (t.loss.w_plus_auto) {
    out << YAML::Key << "w_plus" << YAML::Value << "auto";
  } else {
    out << YAML::Key << "w_plus" << YAML::Value << t.loss.w_plus;
  }
  out << YAML::Key << "dice_eps" << YAML::Value << t.loss.dice_eps;
  out << YAML::Key << "focal_gamma" << YAML::Value << t.loss.focal_gamma;
  out << YAML::Key << "tversky_alpha" << YAML::Value << t.loss.tversky_alpha;
  out << YAML::EndMap;
  out << YAML::EndMap;

  const auto& a = t.augment;
  out << YAML::Key << "augment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "p_hflip" << YAML::Value << a.p_hflip;
  out << YAML::Key << "p_vflip" << YAML::Value << a.p_vflip;
  out << YAML::Key << "p_rot90" << YAML::Value << a.p_rot90;
  out << YAML::Key << "p_affine" << YAML::Value << a.p_affine;
  out << YAML::Key << "affine_shift" << YAML::Value << a.affine_shift;
  out << YAML::Key << "affine_scale" << YAML::Value << YAML::Flow
      << std::vector<double>(a.affine_scale.begin(), a.affine_scale.end());
  out << YAML::Key << "affine_rot_deg" << YAML::Value << a.affine_rot_deg;
  out << YAML::Key << "p_blur" << YAML::Value << a.p_blur;
  out << YAML::Key << "blur_kernel" << YAML::Value << YAML::Flow
      << std::vector<int>(a.blur_kernel.begin(), a.blur_kernel.end());
  out << YAML::Key << "p_brightness_contrast" << YAML::Value << a.p_brightness_contrast;
  out << YAML::Key << "bc_limit" << YAML::Value << a.bc_limit;
  out << YAML::EndMap;

  out << YAML::Key << "inference" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "tta" << YAML::Value << c.inference.tta.name;
  out << YAML::Key << "tau" << YAML::Value << c.inference.tau;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* v = std::getenv("DUALSWIN_DATA_ROOT"); v && *v) cfg.data.root = v;
  if (const char* v = std::getenv("DUALSWIN_OUTPUT_ROOT"); v && *v) cfg.data.output_root = v;
}

void load_pretrained_encoders(DualSwinNet& model, const PretrainedConfig& pretrained) {
  const auto mapping = pretrained.mapping.empty() ? NameMapping::identity() : NameMapping::load(pretrained.mapping);
  if (!pretrained.rgb.empty()) load_pretrained(model->encoder_rgb, pretrained.rgb, mapping);
  if (!pretrained.aux.empty()) load_pretrained(model->encoder_aux, pretrained.aux, mapping);
}

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const TensorMap& state,
                     const std::optional<NormStats>& stats, const std::map<std::string, std::string>& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "model.yaml", std::ios::binary) << serialize_model_config(cfg);
  save_tensor_map(dir, state);
  if (stats) save_norm_stats(dir / "stats.txt", *stats);
  if (!meta.empty()) {
    std::ofstream out(dir / "meta.txt", std::ios::binary);
    for (const auto& [k, v] : meta) out << k << ' ' << v << '\n';
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  LoadedCheckpoint ck;
  std::ifstream in(dir / "model.yaml");
  if (!in) fail(ErrorKind::CheckpointLoadError, "missing model.yaml in " + dir.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    ck.config = parse_model_config(ss.str());
  } catch (const Error& e) {
    fail(ErrorKind::CheckpointLoadError, std::string("bad model.yaml: ") + e.what());
  }
  ck.model = DualSwinNet(ck.config);
  load_state(*ck.model, load_tensor_map(dir));
  ck.model->eval();
  if (std::filesystem::exists(dir / "stats.txt")) ck.stats = load_norm_stats(dir / "stats.txt");
  if (std::ifstream meta(dir / "meta.txt"); meta) {
    std::string k, v;
    while (meta >> k >> v) ck.meta[k] = v;
  }
  return ck;
}

}  // namespace dualswin
