#pragma once

#include "comodal/key_value.hpp"
#include "comodal/mixing.hpp"
#include "comodal/scene_synth.hpp"

#include <cstdint>
#include <string>

namespace comodal {

/// Which pixels of the pasted source region are aligned to prototypes.
enum class PixelSelect { projection, random, all };

/// ICD composition: mixed images with both alignments, mixed images with
/// only the target-pixel alignment, or whole source images aligned to
/// prototypes.
enum class IcdVariant { both, mix_only, prototype_only };

struct TrainConfig {
  std::uint64_t seed = 0;
  long iterations = 3000;
  int batch_size = 4;
  double base_lr = 0.001;
  double poly_power = 0.9;
  double lambda_2d_t = 0.1;
  double lambda_2d_m = 0.1;
  double lambda_3d_m = 1.0;
  double ema_decay = 0.99;
  int hidden_2d = 64;
  int hidden_3d = 64;

  bool use_hybrid_pl = true;
  bool use_icd = true;
  bool use_icg = true;
  bool use_teacher_labels = true;
  bool use_2d_labels_in_icg = true;
  IcdVariant icd_variant = IcdVariant::both;
  PixelSelect icd_pixel_select = PixelSelect::projection;
  MaskKind mask_kind = MaskKind::region;
  AreaRange mask_area{};
  bool pl_round = false;
  double pl_weight = 1.0;
  /// Exponential smoothing of class prototypes across iterations; 0 uses
  /// the current batch only.
  double prototype_decay = 0.0;

  /// Per-iteration subsampling caps (0 disables the cap).
  int max_points_per_scene = 1024;
  int source_pixels_per_image = 1024;

  long pretrain_iterations = 1500;
  int pretrain_batch_size = 4;
  double pretrain_lr = 0.001;

  int qualitative_scenes = 4;

  /// Synthetic benchmark parameters used by gen-data.
  int data_n_rays = 4096;
  int data_source_train = 200;
  int data_source_val = 50;
  int data_target_train = 200;
  int data_target_val = 50;
  double data_target_hue = 40.0;
  double data_target_brightness = -0.05;
  double data_noise = 0.04;

  /// Throws ConfigError on any inconsistency, e.g. ICG with batch size 1.
  void validate() const;

  /// Applies one `key = value` assignment. Throws ConfigError on unknown
  /// keys or malformed values.
  void set(const std::string& key, const std::string& value);

  /// Canonical `key = value` listing of every field, in a fixed order.
  std::string echo() const;
  /// FNV-1a hash of `echo()`.
  std::uint64_t hash() const;

  /// Scene generator config implied by the data_* fields.
  SceneGenConfig scene_config() const;
};

/// Defaults overridden by the file's keys. Unknown keys are rejected.
TrainConfig parse_config(const std::string& text, const std::string& origin = "<config>");
TrainConfig load_config(const std::string& path);

const char* to_string(PixelSelect v);
const char* to_string(IcdVariant v);
const char* to_string(MaskKind v);
PixelSelect parse_pixel_select(const std::string& text);
IcdVariant parse_icd_variant(const std::string& text);
MaskKind parse_mask_kind(const std::string& text);

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace comodal
