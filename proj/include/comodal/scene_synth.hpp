#pragma once

#include "comodal/geometry.hpp"
#include "comodal/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace comodal {

enum class PrimitiveKind { ground_strip, box, cylinder };
enum class Domain { source, target };

/// Placement rule used when a class is instantiated in a world. Ground roles
/// produce strips that tile the ground plane in lateral bands (road in the
/// middle, then sidewalk, then terrain out to the horizon).
enum class ClassRole { road, sidewalk, terrain, vehicle, building, tree, pole, clutter };

/// Axis-aligned primitive in the camera frame. `extent` holds half sizes; for
/// cylinders it is (radius, half height, radius) around a vertical axis.
/// Ground strips are thin slabs whose top face is the ground plane.
struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::box;
  int class_id = 0;
  Vec3 center = Vec3::Zero();
  Vec3 extent = Vec3::Ones();
  Vec3 albedo = Vec3::Constant(0.5);
  bool operator==(const ScenePrimitive&) const = default;
};

struct ClassSpec {
  std::string name;
  /// One or more placement rules; a class may cover ground bands and objects.
  std::vector<ClassRole> roles{ClassRole::clutter};
  Vec3 albedo = Vec3::Constant(0.5);
  /// Object count range per world (ignored by ground roles, which follow the band layout).
  int min_count = 1;
  int max_count = 1;
  /// Half-extent ranges (meters). For ground roles only x is used, as the band width.
  Vec3 size_lo = Vec3::Constant(0.5);
  Vec3 size_hi = Vec3::Constant(1.0);
  /// Height of a ground band's surface above the road plane (meters).
  double ground_rise = 0.0;
};

/// Appearance transform of a domain: rotation of RGB about the gray axis
/// followed by an additive brightness shift, clamped to [0,1].
struct Palette {
  double hue_degrees = 0.0;
  double brightness = 0.0;
  Vec3 apply(const Vec3& albedo) const;
};

struct SceneGenConfig {
  std::vector<ClassSpec> classes;
  /// Class given to pixels whose ray misses every primitive.
  int background_class = 0;
  Vec3 background_albedo = Vec3::Constant(0.8);
  double camera_height = 1.7;
  double max_depth = 40.0;
  double albedo_jitter = 0.08;
  double noise_amplitude = 0.04;
  Palette source_palette{};
  Palette target_palette{};
  CameraIntrinsics camera{};
  int n_rays = 4096;
  int source_train = 200;
  int source_val = 50;
  int target_train = 200;
  int target_val = 50;

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::vector<std::string> class_names() const {
    std::vector<std::string> out;
    for (const auto& c : classes) out.push_back(c.name);
    return out;
  }
  const Palette& palette(Domain d) const {
    return d == Domain::source ? source_palette : target_palette;
  }
  /// Throws ConfigError on fewer than two classes, non-positive extents,
  /// empty count ranges or a bad camera.
  void validate() const;

  /// Six-class driving-like benchmark: road, sidewalk, vegetation, car,
  /// building, other.
  static SceneGenConfig defaults();
};

/// Deterministic world for a seed; every class of the config appears at
/// least once.
std::vector<ScenePrimitive> generate_world(std::uint64_t seed, const SceneGenConfig& config);

struct RayHit {
  double t = 0.0;
  int primitive = -1;
};

/// Nearest intersection with positive parameter along origin + t * dir.
std::optional<RayHit> cast_ray(const std::vector<ScenePrimitive>& world, const Vec3& origin,
                               const Vec3& dir);

struct Render {
  Image image;
  LabelMap labels;
};

/// Ray casts one ray per pixel center. Label maps are independent of the
/// domain; colors go through the domain palette plus uniform noise of
/// amplitude `config.noise_amplitude`.
Render render_image(const std::vector<ScenePrimitive>& world, const CameraIntrinsics& camera,
                    Domain domain, std::uint64_t seed, const SceneGenConfig& config);

struct LidarScan {
  Matrix points;  // N x 3, camera frame
  std::vector<int> labels;
  std::vector<PixelIndex> pixel_of_point;
  int num_points() const { return static_cast<int>(points.rows()); }
};

/// Casts `n_rays` rays in a regular azimuth/elevation fan spanning the camera
/// field of view, with a seed-dependent sub-step phase. Keeps first hits that
/// project inside the image.
LidarScan sample_lidar(const std::vector<ScenePrimitive>& world, const CameraIntrinsics& camera,
                       int n_rays, std::uint64_t seed);

struct SourceSample {
  Image image;
  LabelMap labels;
};

struct GroundTruth {
  std::vector<int> point_labels;
  LabelMap pixel_labels;
};

/// Token required to read target ground truth. Only `EvalAccess`
/// (comodal/eval_access.hpp) can create one, which keeps training code from
/// touching labels it must not see.
class GroundTruthKey {
  GroundTruthKey() = default;
  friend struct EvalAccess;
};

class TargetScene {
 public:
  TargetScene() = default;
  TargetScene(Image image, Matrix points, std::vector<PixelIndex> pixel_of_point,
              GroundTruth truth);

  const Image& image() const { return image_; }
  const Matrix& points() const { return points_; }
  const std::vector<PixelIndex>& pixel_of_point() const { return pixel_of_point_; }
  int num_points() const { return static_cast<int>(points_.rows()); }
  int height() const { return image_.height; }
  int width() const { return image_.width; }

  const GroundTruth& ground_truth(GroundTruthKey) const { return truth_; }

 private:
  Image image_;
  Matrix points_;
  std::vector<PixelIndex> pixel_of_point_;
  GroundTruth truth_;
};

/// Rounds every channel to the nearest multiple of 1/255 so that in-memory
/// images match their 8-bit on-disk form.
void quantize_image(Image& image);

enum class SplitId : int { source_train = 0, source_val = 1, target_train = 2, target_val = 3 };
const char* split_name(SplitId split);

SourceSample make_source_sample(const SceneGenConfig& config, std::uint64_t seed, SplitId split,
                                int index);

/// Target scene with float32-rounded points. Points whose hit class differs
/// from the rendered label at their pixel (object boundaries) are dropped so
/// point and pixel ground truth agree exactly.
TargetScene make_target_scene(const SceneGenConfig& config, std::uint64_t seed, SplitId split,
                              int index);

struct Dataset {
  SceneGenConfig config;
  std::uint64_t seed = 0;
  std::vector<SourceSample> source_train;
  std::vector<SourceSample> source_val;
  std::vector<TargetScene> target_train;
  std::vector<TargetScene> target_val;

  int num_classes() const { return config.num_classes(); }
};

Dataset generate_dataset(const SceneGenConfig& config, std::uint64_t seed);

}  // namespace comodal
