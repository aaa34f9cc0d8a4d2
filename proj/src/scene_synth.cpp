#include "comodal/scene_synth.hpp"

#include "comodal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace comodal {

namespace {

constexpr std::uint64_t kWorldStream = 0x77;
constexpr std::uint64_t kNoiseStream = 0x6e;
constexpr std::uint64_t kLidarStream = 0x6c;
constexpr std::uint64_t kSceneSeedStream = 0x5e;

// Ground slabs are this thick (half thickness, meters) below the ground plane.
constexpr double kSlabHalfThickness = 0.05;
// Outermost ground band reaches this far laterally.
constexpr double kLateralReach = 80.0;
// Gap between the sidewalk's outer edge and the nearest building face.
constexpr double kBuildingSetback = 3.0;

bool is_ground_role(ClassRole r) {
  return r == ClassRole::road || r == ClassRole::sidewalk || r == ClassRole::terrain;
}

Vec3 clamp01(const Vec3& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

Vec3 jittered(Rng& rng, const Vec3& base, double amount) {
  Vec3 out;
  for (int k = 0; k < 3; ++k) out[k] = base[k] + uniform(rng, -amount, amount);
  return clamp01(out);
}

Vec3 sample_size(Rng& rng, const ClassSpec& spec) {
  Vec3 out;
  for (int k = 0; k < 3; ++k) out[k] = uniform(rng, spec.size_lo[k], spec.size_hi[k]);
  return out;
}

std::optional<double> intersect_box(const ScenePrimitive& p, const Vec3& o, const Vec3& d) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = p.center[a] - p.extent[a];
    const double hi = p.center[a] + p.extent[a];
    if (d[a] == 0.0) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  // Primitives that contain the origin are ignored.
  if (t_near > t_far || !(t_near > 0.0)) return std::nullopt;
  return t_near;
}

std::optional<double> intersect_cylinder(const ScenePrimitive& p, const Vec3& o, const Vec3& d) {
  const double r = p.extent.x();
  const double y_lo = p.center.y() - p.extent.y();
  const double y_hi = p.center.y() + p.extent.y();
  double best = std::numeric_limits<double>::infinity();
  const double ox = o.x() - p.center.x();
  const double oz = o.z() - p.center.z();
  const double a = d.x() * d.x() + d.z() * d.z();
  if (a > 0.0) {
    const double b = 2.0 * (ox * d.x() + oz * d.z());
    const double c = ox * ox + oz * oz - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t > 0.0) {
          const double y = o.y() + t * d.y();
          if (y >= y_lo && y <= y_hi) best = std::min(best, t);
        }
      }
    }
  }
  if (d.y() != 0.0) {
    for (double y_cap : {y_lo, y_hi}) {
      const double t = (y_cap - o.y()) / d.y();
      if (t > 0.0) {
        const double x = ox + t * d.x();
        const double z = oz + t * d.z();
        if (x * x + z * z <= r * r) best = std::min(best, t);
      }
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

}  // namespace

Vec3 Palette::apply(const Vec3& albedo) const {
  const double theta = hue_degrees * std::numbers::pi / 180.0;
  const Vec3 axis = Vec3::Ones().normalized();
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const Vec3 rotated = albedo * c + axis.cross(albedo) * s + axis * axis.dot(albedo) * (1.0 - c);
  return clamp01(rotated + Vec3::Constant(brightness));
}

void SceneGenConfig::validate() const {
  if (classes.size() < 2) throw ConfigError("scene config needs at least 2 classes");
  if (background_class < 0 || background_class >= num_classes()) {
    throw ConfigError("background_class out of range");
  }
  for (const auto& spec : classes) {
    if (spec.roles.empty()) throw ConfigError("class '" + spec.name + "' has no placement role");
    if (spec.min_count < 1 || spec.max_count < spec.min_count) {
      throw ConfigError("class '" + spec.name + "' needs 1 <= min_count <= max_count");
    }
    for (int k = 0; k < 3; ++k) {
      if (!(spec.size_lo[k] > 0.0) || spec.size_hi[k] < spec.size_lo[k]) {
        throw ConfigError("class '" + spec.name + "' has non-positive or inverted extents");
      }
    }
    if (spec.ground_rise < 0.0 || spec.ground_rise >= camera_height) {
      throw ConfigError("class '" + spec.name + "' ground_rise must lie in [0, camera_height)");
    }
  }
  if (!(camera_height > 0.0) || !(max_depth > 1.0)) {
    throw ConfigError("camera_height and max_depth must be positive");
  }
  if (albedo_jitter < 0.0 || noise_amplitude < 0.0) {
    throw ConfigError("albedo_jitter and noise_amplitude must be non-negative");
  }
  if (n_rays <= 0) throw ConfigError("n_rays must be positive");
  if (source_train < 1 || target_train < 1 || source_val < 0 || target_val < 0) {
    throw ConfigError("split sizes must be positive");
  }
  camera.validate();
}

SceneGenConfig SceneGenConfig::defaults() {
  SceneGenConfig cfg;
  auto cls = [](std::string name, std::vector<ClassRole> roles, Vec3 albedo, int lo, int hi,
                Vec3 size_lo, Vec3 size_hi) {
    ClassSpec s;
    s.name = std::move(name);
    s.roles = std::move(roles);
    s.albedo = albedo;
    s.min_count = lo;
    s.max_count = hi;
    s.size_lo = size_lo;
    s.size_hi = size_hi;
    return s;
  };
  cfg.classes = {
      cls("road", {ClassRole::road}, {0.30, 0.30, 0.33}, 1, 1, {2.5, 1, 1}, {4.5, 1, 1}),
      cls("sidewalk", {ClassRole::sidewalk}, {0.66, 0.60, 0.50}, 1, 1, {1.5, 1, 1},
          {3.5, 1, 1}),
      cls("vegetation", {ClassRole::terrain, ClassRole::tree}, {0.28, 0.56, 0.20}, 2, 5,
          {0.4, 1.5, 0.4}, {0.9, 3.5, 0.9}),
      cls("car", {ClassRole::vehicle}, {0.72, 0.16, 0.16}, 1, 4, {0.8, 0.7, 1.8},
          {1.0, 0.85, 2.4}),
      cls("building", {ClassRole::building}, {0.52, 0.36, 0.50}, 2, 4, {2.0, 3.0, 3.0},
          {5.0, 8.0, 8.0}),
      cls("other", {ClassRole::pole}, {0.88, 0.80, 0.22}, 1, 3, {0.25, 2.0, 0.25},
          {0.40, 3.0, 0.40}),
  };
  // Curbs: the sidewalk and the verge stand above the road.
  cfg.classes[1].ground_rise = 0.3;
  cfg.classes[2].ground_rise = 0.7;
  cfg.background_class = 5;
  cfg.background_albedo = {0.55, 0.72, 0.92};
  cfg.source_palette = {0.0, 0.0};
  cfg.target_palette = {40.0, -0.05};
  return cfg;
}

std::vector<ScenePrimitive> generate_world(std::uint64_t seed, const SceneGenConfig& config) {
  config.validate();
  Rng rng = make_rng(seed, kWorldStream);
  std::vector<ScenePrimitive> world;
  const double ground_y = config.camera_height;
  const double depth = config.max_depth;

  // Ground bands, innermost first: road, then sidewalk, then terrain.
  struct Band {
    int class_id;
    const ClassSpec* spec;
    int order;
  };
  std::vector<Band> bands;
  for (int c = 0; c < config.num_classes(); ++c) {
    const auto& spec = config.classes[c];
    for (ClassRole r : spec.roles) {
      if (is_ground_role(r)) bands.push_back({c, &spec, static_cast<int>(r)});
    }
  }
  std::stable_sort(bands.begin(), bands.end(),
                   [](const Band& a, const Band& b) { return a.order < b.order; });

  // A raised band is a solid block down to the slab bottom, so its curb face is closed.
  auto add_strip = [&](int class_id, double rise, const Vec3& albedo, double x0, double x1) {
    ScenePrimitive p;
    p.kind = PrimitiveKind::ground_strip;
    p.class_id = class_id;
    const double half_y = kSlabHalfThickness + 0.5 * rise;
    p.center = {0.5 * (x0 + x1), ground_y + 2.0 * kSlabHalfThickness - half_y, 0.5 * depth};
    p.extent = {0.5 * (x1 - x0), half_y, 0.5 * depth};
    p.albedo = albedo;
    world.push_back(p);
  };

  // Lateral band edges: edges[k] is the (left, right) outer edge after band k.
  double left = 0.0;
  double right = 0.0;
  std::vector<std::pair<double, double>> edges;
  const double offset = bands.empty() ? 0.0 : uniform(rng, -1.5, 1.5);
  for (std::size_t k = 0; k < bands.size(); ++k) {
    const Band& band = bands[k];
    const Vec3 albedo = jittered(rng, band.spec->albedo, config.albedo_jitter);
    const bool last = k + 1 == bands.size();
    const double width = uniform(rng, band.spec->size_lo.x(), band.spec->size_hi.x());
    if (k == 0) {
      const double half = last ? kLateralReach : width;
      left = offset - half;
      right = offset + half;
      add_strip(band.class_id, band.spec->ground_rise, albedo, left, right);
    } else {
      const double new_left = last ? -kLateralReach : left - width;
      const double new_right = last ? kLateralReach : right + width;
      add_strip(band.class_id, band.spec->ground_rise, albedo, new_left, left);
      add_strip(band.class_id, band.spec->ground_rise, albedo, right, new_right);
      left = new_left;
      right = new_right;
    }
    edges.emplace_back(left, right);
  }
  auto band_edge = [&](std::size_t k) -> std::pair<double, double> {
    if (edges.empty()) return {-4.0, 4.0};
    return edges[std::min(k, edges.size() - 1)];
  };
  // Objects sit on the ground between lateral bounds [lo, hi] on a random side.
  auto side_x = [&](double inner, double outer_gap, double half_width) {
    const double gap = uniform(rng, 0.0, outer_gap);
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    return side > 0 ? inner + gap + half_width : -inner - gap - half_width;
  };

  for (int c = 0; c < config.num_classes(); ++c) {
    const auto& spec = config.classes[c];
    for (ClassRole role : spec.roles) {
      if (is_ground_role(role)) continue;
      const int count = spec.min_count + uniform_index(rng, spec.max_count - spec.min_count + 1);
      for (int n = 0; n < count; ++n) {
        ScenePrimitive p;
        p.class_id = c;
        p.albedo = jittered(rng, spec.albedo, config.albedo_jitter);
        const Vec3 size = sample_size(rng, spec);
        p.extent = size;
        p.kind = (role == ClassRole::tree || role == ClassRole::pole) ? PrimitiveKind::cylinder
                                                                        : PrimitiveKind::box;
        if (p.kind == PrimitiveKind::cylinder) p.extent.z() = p.extent.x();
        const auto [road_l, road_r] = band_edge(0);
        const auto [walk_l, walk_r] = band_edge(1);
        const double walk_inner = 0.5 * (walk_r - walk_l);
        double x = 0.0;
        double z = 0.0;
        switch (role) {
          case ClassRole::vehicle: {
            const double lo = road_l + size.x();
            const double hi = road_r - size.x();
            x = lo < hi ? uniform(rng, lo, hi) : 0.5 * (road_l + road_r);
            z = uniform(rng, 5.0, 0.8 * depth);
            break;
          }
          case ClassRole::building:
            // Set back from the verge, behind the street trees.
            x = side_x(walk_inner + kBuildingSetback, 4.0, size.x()) + 0.5 * (walk_l + walk_r);
            z = uniform(rng, 8.0, depth);
            break;
          case ClassRole::tree:
            x = side_x(walk_inner, 1.0, size.x()) + 0.5 * (walk_l + walk_r);
            z = uniform(rng, 4.0, 0.9 * depth);
            break;
          case ClassRole::pole: {
            const double road_half = 0.5 * (road_r - road_l);
            x = side_x(road_half, std::max(0.1, walk_inner - road_half), size.x()) +
                0.5 * (road_l + road_r);
            z = uniform(rng, 4.0, 0.8 * depth);
            break;
          }
          default:
            x = uniform(rng, -10.0, 10.0);
            z = uniform(rng, 4.0, 0.75 * depth);
            break;
        }
        p.center = {x, ground_y - size.y(), z};
        world.push_back(p);
      }
    }
  }
  return world;
}

std::optional<RayHit> cast_ray(const std::vector<ScenePrimitive>& world, const Vec3& origin,
                               const Vec3& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < world.size(); ++i) {
    const auto& p = world[i];
    const auto t = p.kind == PrimitiveKind::cylinder ? intersect_cylinder(p, origin, dir)
                                                     : intersect_box(p, origin, dir);
    if (t && (!best || *t < best->t)) best = RayHit{*t, static_cast<int>(i)};
  }
  return best;
}

Render render_image(const std::vector<ScenePrimitive>& world, const CameraIntrinsics& camera,
                    Domain domain, std::uint64_t seed, const SceneGenConfig& config) {
  if (world.empty()) throw ContractError("render_image: empty world");
  Render out{Image(camera.height, camera.width, 3), LabelMap(camera.height, camera.width, 1)};
  const Palette& palette = config.palette(domain);
  const Vec3 background = palette.apply(config.background_albedo);
  std::vector<Vec3> colors(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) colors[i] = palette.apply(world[i].albedo);
  Rng rng = make_rng(seed, kNoiseStream, static_cast<std::uint64_t>(domain));
  const double amp = config.noise_amplitude;
  for (int r = 0; r < camera.height; ++r) {
    for (int c = 0; c < camera.width; ++c) {
      const Vec3 dir{(c - camera.cx) / camera.focal, (r - camera.cy) / camera.focal, 1.0};
      const auto hit = cast_ray(world, Vec3::Zero(), dir);
      const Vec3& color = hit ? colors[hit->primitive] : background;
      out.labels.at(r, c) = hit ? world[hit->primitive].class_id : config.background_class;
      for (int k = 0; k < 3; ++k) {
        const double noise = amp > 0.0 ? uniform(rng, -amp, amp) : 0.0;
        out.image.at(r, c, k) = std::clamp(color[k] + noise, 0.0, 1.0);
      }
    }
  }
  return out;
}

LidarScan sample_lidar(const std::vector<ScenePrimitive>& world, const CameraIntrinsics& camera,
                       int n_rays, std::uint64_t seed) {
  if (n_rays <= 0) throw ConfigError("sample_lidar: n_rays must be positive");
  Rng rng = make_rng(seed, kLidarStream);
  const double az_half = std::atan(0.5 * camera.width / camera.focal);
  const double el_half = std::atan(0.5 * camera.height / camera.focal);
  const int n_el = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_rays)))));
  const int n_az = (n_rays + n_el - 1) / n_el;
  const double az_step = 2.0 * az_half / n_az;
  const double el_step = 2.0 * el_half / n_el;
  const double az_phase = uniform(rng, 0.0, 1.0);
  const double el_phase = uniform(rng, 0.0, 1.0);

  std::vector<Vec3> pts;
  LidarScan scan;
  for (int k = 0; k < n_rays; ++k) {
    const double el = el_half - (k / n_az + el_phase) * el_step;
    const double az = -az_half + (k % n_az + az_phase) * az_step;
    const Vec3 dir{std::cos(el) * std::sin(az), -std::sin(el), std::cos(el) * std::cos(az)};
    const auto hit = cast_ray(world, Vec3::Zero(), dir);
    if (!hit) continue;
    const Vec3 point = hit->t * dir;
    const auto pixel = project_point(point, camera);
    if (!pixel) continue;
    pts.push_back(point);
    scan.labels.push_back(world[hit->primitive].class_id);
    scan.pixel_of_point.push_back(*pixel);
  }
  if (pts.empty()) {
    throw GenerationError("scene with seed " + std::to_string(seed) +
                          " produced no LiDAR returns inside the camera view");
  }
  scan.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) scan.points.row(static_cast<Eigen::Index>(i)) = pts[i];
  return scan;
}

TargetScene::TargetScene(Image image, Matrix points, std::vector<PixelIndex> pixel_of_point,
                         GroundTruth truth)
    : image_(std::move(image)),
      points_(std::move(points)),
      pixel_of_point_(std::move(pixel_of_point)),
      truth_(std::move(truth)) {
  if (points_.cols() != 3 || points_.rows() == 0) {
    throw ContractError("target scene needs a non-empty N x 3 point cloud");
  }
  if (pixel_of_point_.size() != static_cast<std::size_t>(points_.rows()) ||
      truth_.point_labels.size() != pixel_of_point_.size()) {
    throw ContractError("target scene point, pixel and label counts differ");
  }
  for (const auto& p : pixel_of_point_) {
    if (p.row < 0 || p.row >= image_.height || p.col < 0 || p.col >= image_.width) {
      throw IndexError("target scene pixel_of_point out of bounds");
    }
  }
}

void quantize_image(Image& image) {
  for (double& v : image.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

const char* split_name(SplitId split) {
  switch (split) {
    case SplitId::source_train: return "source_train";
    case SplitId::source_val: return "source_val";
    case SplitId::target_train: return "target_train";
    case SplitId::target_val: return "target_val";
  }
  return "unknown";
}

namespace {

std::uint64_t scene_seed(std::uint64_t seed, SplitId split, int index) {
  Rng rng = make_rng(seed, kSceneSeedStream + static_cast<std::uint64_t>(split),
                     static_cast<std::uint64_t>(index));
  return rng();
}

}  // namespace

SourceSample make_source_sample(const SceneGenConfig& config, std::uint64_t seed, SplitId split,
                                int index) {
  const std::uint64_t s = scene_seed(seed, split, index);
  const auto world = generate_world(s, config);
  Render render = render_image(world, config.camera, Domain::source, s, config);
  quantize_image(render.image);
  return {std::move(render.image), std::move(render.labels)};
}

TargetScene make_target_scene(const SceneGenConfig& config, std::uint64_t seed, SplitId split,
                              int index) {
  const std::uint64_t s = scene_seed(seed, split, index);
  const auto world = generate_world(s, config);
  Render render = render_image(world, config.camera, Domain::target, s, config);
  quantize_image(render.image);
  const LidarScan scan = sample_lidar(world, config.camera, config.n_rays, s);

  std::vector<Vec3> kept;
  std::vector<PixelIndex> pixels;
  std::vector<int> labels;
  for (int i = 0; i < scan.num_points(); ++i) {
    // Store what the on-disk float32 format can represent exactly.
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[k] = static_cast<double>(static_cast<float>(scan.points(i, k)));
    const auto pixel = project_point(p, config.camera);
    if (!pixel) continue;
    if (render.labels.at(pixel->row, pixel->col) != scan.labels[i]) continue;
    kept.push_back(p);
    pixels.push_back(*pixel);
    labels.push_back(scan.labels[i]);
  }
  if (kept.empty()) {
    throw GenerationError(std::string("scene ") + split_name(split) + "/" +
                          std::to_string(index) + " has no consistent LiDAR points");
  }
  Matrix points(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t i = 0; i < kept.size(); ++i) points.row(static_cast<Eigen::Index>(i)) = kept[i];
  return TargetScene(std::move(render.image), std::move(points), std::move(pixels),
                     GroundTruth{std::move(labels), std::move(render.labels)});
}

Dataset generate_dataset(const SceneGenConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  for (int i = 0; i < config.source_train; ++i)
    ds.source_train.push_back(make_source_sample(config, seed, SplitId::source_train, i));
  for (int i = 0; i < config.source_val; ++i)
    ds.source_val.push_back(make_source_sample(config, seed, SplitId::source_val, i));
  for (int i = 0; i < config.target_train; ++i)
    ds.target_train.push_back(make_target_scene(config, seed, SplitId::target_train, i));
  for (int i = 0; i < config.target_val; ++i)
    ds.target_val.push_back(make_target_scene(config, seed, SplitId::target_val, i));
  return ds;
}

}  // namespace comodal
