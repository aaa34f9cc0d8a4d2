#include "comodal/dataset_io.hpp"

#include "comodal/errors.hpp"
#include "comodal/eval_access.hpp"
#include "comodal/key_value.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace comodal {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string encode_ppm(const Image& image) {
  if (image.channels != 3) throw ContractError("encode_ppm: image must have 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (double v : image.data) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

Image decode_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P6" || width <= 0 || height <= 0 || maxval != 255) {
    throw IoError("not a 8-bit binary PPM");
  }
  in.get();  // single whitespace after the header
  const auto offset = static_cast<std::size_t>(in.tellg());
  const std::size_t n = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() < offset + n) throw IoError("truncated PPM data");
  Image img(height, width, 3);
  for (std::size_t i = 0; i < n; ++i) {
    img.data[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  }
  return img;
}

void write_ppm(const fs::path& path, const Image& image) { write_file(path, encode_ppm(image)); }
Image read_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > in.size()) throw IoError("truncated file " + path.string());
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string encode_labels(const LabelMap& labels) {
  std::string out;
  out.reserve(labels.data.size());
  for (int v : labels.data) out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
  return out;
}

LabelMap decode_labels(const std::string& bytes, int height, int width, const fs::path& path) {
  if (bytes.size() != static_cast<std::size_t>(height) * width) {
    throw IoError("label file has wrong size: " + path.string());
  }
  LabelMap out(height, width, 1);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.data[i] = static_cast<std::uint8_t>(bytes[i]);
  return out;
}

std::string encode_points(const TargetScene& scene) {
  const auto& gt = scene.ground_truth(EvalAccess::key());
  const int n = scene.num_points();
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) put<float>(out, static_cast<float>(scene.points()(i, k)));
  for (const auto& p : scene.pixel_of_point()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.row));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.col));
  }
  for (int v : gt.point_labels) put<std::uint8_t>(out, static_cast<std::uint8_t>(v));
  return out;
}

fs::path scene_path(const fs::path& dir, SplitId split, int index, const char* ext) {
  return dir / "scenes" / split_name(split) / (std::to_string(index) + ext);
}

std::string manifest_text(const Dataset& ds) {
  const SceneGenConfig& c = ds.config;
  std::ostringstream m;
  m << "# synthetic image/LiDAR dataset\n";
  m << "seed = " << ds.seed << "\n";
  m << "classes = " << c.num_classes() << "\n";
  m << "class_names = ";
  for (int i = 0; i < c.num_classes(); ++i) m << (i ? "," : "") << c.classes[i].name;
  m << "\n";
  m << "background_class = " << c.background_class << "\n";
  m << "height = " << c.camera.height << "\n";
  m << "width = " << c.camera.width << "\n";
  m << "focal = " << format_double(c.camera.focal) << "\n";
  m << "cx = " << format_double(c.camera.cx) << "\n";
  m << "cy = " << format_double(c.camera.cy) << "\n";
  m << "n_rays = " << c.n_rays << "\n";
  m << "source_train = " << ds.source_train.size() << "\n";
  m << "source_val = " << ds.source_val.size() << "\n";
  m << "target_train = " << ds.target_train.size() << "\n";
  m << "target_val = " << ds.target_val.size() << "\n";
  m << "camera_height = " << format_double(c.camera_height) << "\n";
  m << "max_depth = " << format_double(c.max_depth) << "\n";
  m << "albedo_jitter = " << format_double(c.albedo_jitter) << "\n";
  m << "noise_amplitude = " << format_double(c.noise_amplitude) << "\n";
  m << "source_hue = " << format_double(c.source_palette.hue_degrees) << "\n";
  m << "source_brightness = " << format_double(c.source_palette.brightness) << "\n";
  m << "target_hue = " << format_double(c.target_palette.hue_degrees) << "\n";
  m << "target_brightness = " << format_double(c.target_palette.brightness) << "\n";
  return m.str();
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
  write_file(dir / "manifest.txt", manifest_text(ds));
  auto write_source = [&](SplitId split, const std::vector<SourceSample>& samples) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int idx = static_cast<int>(i);
      write_ppm(scene_path(dir, split, idx, ".img"), samples[i].image);
      write_file(scene_path(dir, split, idx, ".labels"), encode_labels(samples[i].labels));
    }
  };
  auto write_target = [&](SplitId split, const std::vector<TargetScene>& scenes) {
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const int idx = static_cast<int>(i);
      const auto& gt = scenes[i].ground_truth(EvalAccess::key());
      write_ppm(scene_path(dir, split, idx, ".img"), scenes[i].image());
      write_file(scene_path(dir, split, idx, ".labels"), encode_labels(gt.pixel_labels));
      write_file(scene_path(dir, split, idx, ".points"), encode_points(scenes[i]));
    }
  };
  write_source(SplitId::source_train, ds.source_train);
  write_source(SplitId::source_val, ds.source_val);
  write_target(SplitId::target_train, ds.target_train);
  write_target(SplitId::target_val, ds.target_val);
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path)) throw IoError("missing dataset manifest " + manifest_path.string());
  const auto kv = KeyValueFile::parse(read_file(manifest_path), manifest_path.string());

  Dataset ds;
  ds.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  SceneGenConfig cfg = SceneGenConfig::defaults();
  const int num_classes = static_cast<int>(kv.get_int("classes"));
  std::vector<std::string> names;
  {
    std::stringstream ss(kv.get("class_names"));
    std::string name;
    while (std::getline(ss, name, ',')) names.push_back(name);
  }
  if (static_cast<int>(names.size()) != num_classes || num_classes < 2) {
    throw IoError("manifest class_names does not match classes");
  }
  if (num_classes != cfg.num_classes()) cfg.classes.resize(num_classes);
  for (int i = 0; i < num_classes; ++i) cfg.classes[i].name = names[i];
  cfg.background_class = static_cast<int>(kv.get_int("background_class"));
  cfg.camera.height = static_cast<int>(kv.get_int("height"));
  cfg.camera.width = static_cast<int>(kv.get_int("width"));
  cfg.camera.focal = kv.get_double("focal");
  cfg.camera.cx = kv.get_double("cx");
  cfg.camera.cy = kv.get_double("cy");
  cfg.n_rays = static_cast<int>(kv.get_int("n_rays"));
  cfg.source_train = static_cast<int>(kv.get_int("source_train"));
  cfg.source_val = static_cast<int>(kv.get_int("source_val"));
  cfg.target_train = static_cast<int>(kv.get_int("target_train"));
  cfg.target_val = static_cast<int>(kv.get_int("target_val"));
  cfg.camera_height = kv.get_double("camera_height");
  cfg.max_depth = kv.get_double("max_depth");
  cfg.albedo_jitter = kv.get_double("albedo_jitter");
  cfg.noise_amplitude = kv.get_double("noise_amplitude");
  cfg.source_palette = {kv.get_double("source_hue"), kv.get_double("source_brightness")};
  cfg.target_palette = {kv.get_double("target_hue"), kv.get_double("target_brightness")};
  ds.config = cfg;
  const int h = cfg.camera.height;
  const int w = cfg.camera.width;

  auto read_source = [&](SplitId split, int count, std::vector<SourceSample>& out) {
    for (int i = 0; i < count; ++i) {
      SourceSample s;
      s.image = read_ppm(scene_path(dir, split, i, ".img"));
      const auto lp = scene_path(dir, split, i, ".labels");
      s.labels = decode_labels(read_file(lp), h, w, lp);
      if (s.image.height != h || s.image.width != w) throw IoError("image size mismatch in " + lp.string());
      out.push_back(std::move(s));
    }
  };
  auto read_target = [&](SplitId split, int count, std::vector<TargetScene>& out) {
    for (int i = 0; i < count; ++i) {
      Image image = read_ppm(scene_path(dir, split, i, ".img"));
      const auto lp = scene_path(dir, split, i, ".labels");
      LabelMap pixel_labels = decode_labels(read_file(lp), h, w, lp);
      const auto pp = scene_path(dir, split, i, ".points");
      const std::string bytes = read_file(pp);
      std::size_t pos = 0;
      const auto n = take<std::uint32_t>(bytes, pos, pp);
      if (bytes.size() != 4 + static_cast<std::size_t>(n) * (12 + 4 + 1)) {
        throw IoError("points file has wrong size: " + pp.string());
      }
      Matrix points(n, 3);
      for (std::uint32_t p = 0; p < n; ++p)
        for (int k = 0; k < 3; ++k) points(p, k) = take<float>(bytes, pos, pp);
      std::vector<PixelIndex> pixels(n);
      for (auto& px : pixels) {
        px.row = take<std::uint16_t>(bytes, pos, pp);
        px.col = take<std::uint16_t>(bytes, pos, pp);
      }
      std::vector<int> labels(n);
      for (auto& l : labels) l = take<std::uint8_t>(bytes, pos, pp);
      out.emplace_back(std::move(image), std::move(points), std::move(pixels),
                       GroundTruth{std::move(labels), std::move(pixel_labels)});
    }
  };
  read_source(SplitId::source_train, cfg.source_train, ds.source_train);
  read_source(SplitId::source_val, cfg.source_val, ds.source_val);
  read_target(SplitId::target_train, cfg.target_train, ds.target_train);
  read_target(SplitId::target_val, cfg.target_val, ds.target_val);
  return ds;
}

}  // namespace comodal
