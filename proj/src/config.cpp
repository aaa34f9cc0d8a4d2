#include "comodal/config.hpp"

#include "comodal/dataset_io.hpp"
#include "comodal/errors.hpp"

#include <functional>
#include <limits>
#include <sstream>
#include <vector>

namespace comodal {

namespace {

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
T checked_int(const std::string& text, const std::string& key) {
  const long long v = parse_int(text, key);
  if (v < static_cast<long long>(std::numeric_limits<T>::min()) ||
      v > static_cast<long long>(std::numeric_limits<T>::max())) {
    throw ConfigError("'" + key + "': out of range: " + text);
  }
  return static_cast<T>(v);
}

const char* bool_text(bool v) { return v ? "true" : "false"; }

#define COMODAL_INT(name, type)                                                              \
  Field {                                                                                    \
    #name, [](TrainConfig& c, const std::string& v) { c.name = checked_int<type>(v, #name); }, \
        [](const TrainConfig& c) { return std::to_string(c.name); }                          \
  }
#define COMODAL_REAL(name)                                                                   \
  Field {                                                                                    \
    #name, [](TrainConfig& c, const std::string& v) { c.name = parse_double(v, #name); },     \
        [](const TrainConfig& c) { return format_double(c.name); }                           \
  }
#define COMODAL_BOOL(name)                                                                   \
  Field {                                                                                    \
    #name, [](TrainConfig& c, const std::string& v) { c.name = parse_bool(v, #name); },       \
        [](const TrainConfig& c) { return std::string(bool_text(c.name)); }                  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed",
            [](TrainConfig& c, const std::string& v) {
              const long long s = parse_int(v, "seed");
              if (s < 0) throw ConfigError("'seed': must be non-negative");
              c.seed = static_cast<std::uint64_t>(s);
            },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      COMODAL_INT(iterations, long),
      COMODAL_INT(batch_size, int),
      COMODAL_REAL(base_lr),
      COMODAL_REAL(poly_power),
      COMODAL_REAL(lambda_2d_t),
      COMODAL_REAL(lambda_2d_m),
      COMODAL_REAL(lambda_3d_m),
      COMODAL_REAL(ema_decay),
      COMODAL_INT(hidden_2d, int),
      COMODAL_INT(hidden_3d, int),
      COMODAL_BOOL(use_hybrid_pl),
      COMODAL_BOOL(use_icd),
      COMODAL_BOOL(use_icg),
      COMODAL_BOOL(use_teacher_labels),
      COMODAL_BOOL(use_2d_labels_in_icg),
      Field{"icd_variant",
            [](TrainConfig& c, const std::string& v) { c.icd_variant = parse_icd_variant(v); },
            [](const TrainConfig& c) { return std::string(to_string(c.icd_variant)); }},
      Field{"icd_pixel_select",
            [](TrainConfig& c, const std::string& v) { c.icd_pixel_select = parse_pixel_select(v); },
            [](const TrainConfig& c) { return std::string(to_string(c.icd_pixel_select)); }},
      Field{"mask_kind",
            [](TrainConfig& c, const std::string& v) { c.mask_kind = parse_mask_kind(v); },
            [](const TrainConfig& c) { return std::string(to_string(c.mask_kind)); }},
      Field{"mask_area_lo",
            [](TrainConfig& c, const std::string& v) { c.mask_area.lo = parse_double(v, "mask_area_lo"); },
            [](const TrainConfig& c) { return format_double(c.mask_area.lo); }},
      Field{"mask_area_hi",
            [](TrainConfig& c, const std::string& v) { c.mask_area.hi = parse_double(v, "mask_area_hi"); },
            [](const TrainConfig& c) { return format_double(c.mask_area.hi); }},
      COMODAL_BOOL(pl_round),
      COMODAL_REAL(pl_weight),
      COMODAL_REAL(prototype_decay),
      COMODAL_INT(max_points_per_scene, int),
      COMODAL_INT(source_pixels_per_image, int),
      COMODAL_INT(pretrain_iterations, long),
      COMODAL_INT(pretrain_batch_size, int),
      COMODAL_REAL(pretrain_lr),
      COMODAL_INT(qualitative_scenes, int),
      COMODAL_INT(data_n_rays, int),
      COMODAL_INT(data_source_train, int),
      COMODAL_INT(data_source_val, int),
      COMODAL_INT(data_target_train, int),
      COMODAL_INT(data_target_val, int),
      COMODAL_REAL(data_target_hue),
      COMODAL_REAL(data_target_brightness),
      COMODAL_REAL(data_noise),
  };
  return table;
}

#undef COMODAL_INT
#undef COMODAL_REAL
#undef COMODAL_BOOL

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (use_icg && batch_size < 2) throw ConfigError("use_icg needs batch_size >= 2");
  if (use_icg && !use_teacher_labels && !use_2d_labels_in_icg) {
    throw ConfigError("use_icg needs use_teacher_labels or use_2d_labels_in_icg");
  }
  if (!(base_lr > 0.0) || !(pretrain_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (poly_power < 0.0) throw ConfigError("poly_power must be non-negative");
  if (lambda_2d_t < 0.0 || lambda_2d_m < 0.0 || lambda_3d_m < 0.0 || pl_weight < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in (0, 1)");
  if (!(prototype_decay >= 0.0 && prototype_decay < 1.0)) {
    throw ConfigError("prototype_decay must lie in [0, 1)");
  }
  if (hidden_2d < 1 || hidden_3d < 1) throw ConfigError("hidden sizes must be positive");
  if (!(mask_area.lo > 0.0 && mask_area.lo <= mask_area.hi && mask_area.hi < 1.0)) {
    throw ConfigError("mask area range must satisfy 0 < lo <= hi < 1");
  }
  if (max_points_per_scene < 0 || source_pixels_per_image < 0) {
    throw ConfigError("subsampling caps must be non-negative");
  }
  if (pretrain_iterations < 0 || pretrain_batch_size < 1) {
    throw ConfigError("pretrain_iterations >= 0 and pretrain_batch_size >= 1 required");
  }
  if (qualitative_scenes < 0) throw ConfigError("qualitative_scenes must be non-negative");
  scene_config().validate();
}

std::string TrainConfig::echo() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::hash() const { return fnv1a(echo()); }

SceneGenConfig TrainConfig::scene_config() const {
  SceneGenConfig cfg = SceneGenConfig::defaults();
  cfg.n_rays = data_n_rays;
  cfg.source_train = data_source_train;
  cfg.source_val = data_source_val;
  cfg.target_train = data_target_train;
  cfg.target_val = data_target_val;
  cfg.target_palette = {data_target_hue, data_target_brightness};
  cfg.noise_amplitude = data_noise;
  return cfg;
}

TrainConfig parse_config(const std::string& text, const std::string& origin) {
  const auto kv = KeyValueFile::parse(text, origin);
  TrainConfig cfg;
  for (const auto& [key, value] : kv.values()) {
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path);
  }
  return parse_config(text, path);
}

const char* to_string(PixelSelect v) {
  switch (v) {
    case PixelSelect::projection: return "projection";
    case PixelSelect::random: return "random";
    case PixelSelect::all: return "all";
  }
  return "?";
}

const char* to_string(IcdVariant v) {
  switch (v) {
    case IcdVariant::both: return "both";
    case IcdVariant::mix_only: return "mix_only";
    case IcdVariant::prototype_only: return "prototype_only";
  }
  return "?";
}

const char* to_string(MaskKind v) { return v == MaskKind::region ? "region" : "class"; }

PixelSelect parse_pixel_select(const std::string& text) {
  if (text == "projection") return PixelSelect::projection;
  if (text == "random") return PixelSelect::random;
  if (text == "all") return PixelSelect::all;
  throw ConfigError("icd_pixel_select must be projection, random or all, got '" + text + "'");
}

IcdVariant parse_icd_variant(const std::string& text) {
  if (text == "both") return IcdVariant::both;
  if (text == "mix_only") return IcdVariant::mix_only;
  if (text == "prototype_only") return IcdVariant::prototype_only;
  throw ConfigError("icd_variant must be both, mix_only or prototype_only, got '" + text + "'");
}

MaskKind parse_mask_kind(const std::string& text) {
  if (text == "region") return MaskKind::region;
  if (text == "class") return MaskKind::class_level;
  throw ConfigError("mask_kind must be region or class, got '" + text + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace comodal
