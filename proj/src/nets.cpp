#include "comodal/nets.hpp"

#include "comodal/dataset_io.hpp"
#include "comodal/errors.hpp"
#include "comodal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace comodal {

const char* NetParams::tensor_name(int i) {
  static constexpr const char* kNames[kTensors] = {"w1",    "b1",    "w2",    "b2",
                                                   "w_cls", "b_cls", "w_mim", "b_mim"};
  return kNames[i];
}

NetShape NetParams::shape() const {
  return {static_cast<int>(w1.rows()), static_cast<int>(w1.cols()),
          static_cast<int>(w_cls.cols())};
}

bool NetParams::same_shape(const NetParams& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  for (int i = 0; i < kTensors; ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
  }
  return true;
}

NetParams NetParams::zeros_like() const {
  NetParams out = *this;
  for (Matrix* t : out.tensors()) t->setZero();
  return out;
}

std::uint64_t NetParams::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const Matrix* t : tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
    const std::size_t n = static_cast<std::size_t>(t->size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

bool NetParams::operator==(const NetParams& other) const {
  if (kind != other.kind || !same_shape(other)) return false;
  const auto a = tensors();
  const auto b = other.tensors();
  for (int i = 0; i < kTensors; ++i) {
    if (*a[i] != *b[i]) return false;
  }
  return true;
}

NetParams init_net(NetKind kind, NetShape shape, Rng& rng) {
  if (shape.inputs <= 0 || shape.hidden <= 0 || shape.classes <= 0) {
    throw ConfigError("network shape must be positive");
  }
  auto glorot = [&](int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -limit, limit);
    return w;
  };
  NetParams p;
  p.kind = kind;
  p.w1 = glorot(shape.inputs, shape.hidden);
  p.b1 = Matrix::Zero(1, shape.hidden);
  p.w2 = glorot(shape.hidden, shape.hidden);
  p.b2 = Matrix::Zero(1, shape.hidden);
  p.w_cls = glorot(shape.hidden, shape.classes);
  p.b_cls = Matrix::Zero(1, shape.classes);
  p.w_mim = glorot(shape.hidden, shape.classes);
  p.b_mim = Matrix::Zero(1, shape.classes);
  return p;
}

namespace {

void write_patch(const Image& image, int r, int c, double* dst) {
  int k = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    const int rr = std::clamp(r + dr, 0, image.height - 1);
    for (int dc = -1; dc <= 1; ++dc) {
      const int cc = std::clamp(c + dc, 0, image.width - 1);
      const double* src = &image.data[image.index(rr, cc)];
      for (int ch = 0; ch < 3; ++ch) dst[k++] = src[ch];
    }
  }
}

}  // namespace

Matrix features_2d(const Image& image) {
  if (image.channels != 3) throw ContractError("features_2d: image must have 3 channels");
  Matrix out(static_cast<Eigen::Index>(image.pixels()), kImageFeatures);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) write_patch(image, r, c, out.row(r * image.width + c).data());
  return out;
}

Matrix features_2d_at(const Image& image, std::span<const PixelIndex> pixels) {
  if (image.channels != 3) throw ContractError("features_2d_at: image must have 3 channels");
  Matrix out(static_cast<Eigen::Index>(pixels.size()), kImageFeatures);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto& p = pixels[i];
    if (p.row < 0 || p.row >= image.height || p.col < 0 || p.col >= image.width) {
      throw IndexError("features_2d_at: pixel " + std::to_string(i) + " out of bounds");
    }
    write_patch(image, p.row, p.col, out.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

Matrix features_3d(const Matrix& points) {
  if (points.cols() != 3) throw ContractError("features_3d: points must be N x 3");
  Matrix out(points.rows(), kPointFeatures);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double x = points(i, 0);
    const double y = points(i, 1);
    const double z = points(i, 2);
    const double range = std::sqrt(x * x + y * y + z * z);
    if (!(range > 0.0)) throw NumericError("features_3d: point " + std::to_string(i) + " has zero range");
    out.row(i) << x, y, z, range, x / range, y / range, z / range;
  }
  return out;
}

ForwardResult forward(const NetParams& p, const Matrix& features) {
  if (features.cols() != p.w1.rows()) {
    throw ContractError("forward: expected " + std::to_string(p.w1.rows()) + " features, got " +
                        std::to_string(features.cols()));
  }
  ForwardResult out;
  out.cache.input = features;
  Matrix& h1 = out.cache.hidden1;
  h1.noalias() = features * p.w1;
  h1.rowwise() += p.b1.row(0);
  h1 = h1.cwiseMax(0.0);
  Matrix& h2 = out.cache.hidden2;
  h2.noalias() = h1 * p.w2;
  h2.rowwise() += p.b2.row(0);
  h2 = h2.cwiseMax(0.0);
  out.logits_cls.noalias() = h2 * p.w_cls;
  out.logits_cls.rowwise() += p.b_cls.row(0);
  out.logits_mim.noalias() = h2 * p.w_mim;
  out.logits_mim.rowwise() += p.b_mim.row(0);
  if (!out.logits_cls.allFinite() || !out.logits_mim.allFinite()) {
    throw NumericError("forward: non-finite network output");
  }
  return out;
}

BackwardResult backward(const NetParams& p, const ForwardCache& cache, const Matrix& grad_cls,
                        const Matrix& grad_mim) {
  const auto m = cache.input.rows();
  const auto classes = p.w_cls.cols();
  auto check = [&](const Matrix& g, const char* name) {
    if (g.rows() == 0) return false;
    if (g.rows() != m || g.cols() != classes) {
      throw ContractError(std::string("backward: ") + name + " gradient has shape " +
                          std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                          ", expected " + std::to_string(m) + "x" + std::to_string(classes));
    }
    return true;
  };
  const bool has_cls = check(grad_cls, "cls");
  const bool has_mim = check(grad_mim, "mim");

  BackwardResult out{p.zeros_like(), Matrix::Zero(m, p.w1.rows())};
  NetParams& g = out.grads;
  Matrix g_h2 = Matrix::Zero(m, p.w2.cols());
  if (has_cls) {
    g.w_cls.noalias() = cache.hidden2.transpose() * grad_cls;
    g.b_cls = grad_cls.colwise().sum();
    g_h2.noalias() += grad_cls * p.w_cls.transpose();
  }
  if (has_mim) {
    g.w_mim.noalias() = cache.hidden2.transpose() * grad_mim;
    g.b_mim = grad_mim.colwise().sum();
    g_h2.noalias() += grad_mim * p.w_mim.transpose();
  }
  if (!has_cls && !has_mim) return out;
  // Rectifier: pass gradient only where the activation is strictly positive.
  g_h2 = (cache.hidden2.array() > 0.0).select(g_h2, 0.0);
  g.w2.noalias() = cache.hidden1.transpose() * g_h2;
  g.b2 = g_h2.colwise().sum();
  Matrix g_h1 = g_h2 * p.w2.transpose();
  g_h1 = (cache.hidden1.array() > 0.0).select(g_h1, 0.0);
  g.w1.noalias() = cache.input.transpose() * g_h1;
  g.b1 = g_h1.colwise().sum();
  out.input_grad.noalias() = g_h1 * p.w1.transpose();
  return out;
}

void ema_update(TeacherState& teacher, const NetParams& student) {
  if (!teacher.params.same_shape(student)) throw ContractError("ema_update: shape mismatch");
  const double d = teacher.decay;
  auto t = teacher.params.tensors();
  const auto s = student.tensors();
  for (int i = 0; i < NetParams::kTensors; ++i) *t[i] = d * *t[i] + (1.0 - d) * *s[i];
}

void round_to_float(NetParams& params) {
  for (Matrix* t : params.tensors()) *t = t->cast<float>().cast<double>();
}

std::string encode_snapshot(const NetParams& params, std::uint64_t config_hash) {
  std::ostringstream head;
  head << "comodal-snapshot 1\n";
  head << "kind " << (params.kind == NetKind::image ? "image" : "point") << "\n";
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
  head << "config_hash " << hash << "\n";
  const auto ts = params.tensors();
  for (int i = 0; i < NetParams::kTensors; ++i) {
    head << "tensor " << NetParams::tensor_name(i) << " " << ts[i]->rows() << " " << ts[i]->cols()
         << "\n";
  }
  head << "end\n";
  std::string out = head.str();
  for (const Matrix* t : ts) {
    for (Eigen::Index k = 0; k < t->size(); ++k) {
      const float v = static_cast<float>(t->data()[k]);
      char buf[4];
      std::memcpy(buf, &v, 4);
      out.append(buf, 4);
    }
  }
  return out;
}

NetParams decode_snapshot(const std::string& bytes, std::uint64_t* config_hash) {
  const auto end = bytes.find("end\n");
  if (bytes.rfind("comodal-snapshot 1\n", 0) != 0 || end == std::string::npos) {
    throw IoError("not a parameter snapshot");
  }
  std::istringstream head(bytes.substr(0, end));
  std::string word;
  std::string line;
  std::getline(head, line);
  NetParams p;
  auto ts = p.tensors();
  int seen = 0;
  while (head >> word) {
    if (word == "kind") {
      head >> word;
      if (word != "image" && word != "point") throw IoError("snapshot: bad kind " + word);
      p.kind = word == "image" ? NetKind::image : NetKind::point;
    } else if (word == "config_hash") {
      head >> word;
      if (config_hash) *config_hash = std::stoull(word, nullptr, 16);
    } else if (word == "tensor") {
      std::string name;
      long rows = 0;
      long cols = 0;
      head >> name >> rows >> cols;
      if (seen >= NetParams::kTensors || name != NetParams::tensor_name(seen) || rows <= 0 ||
          cols <= 0) {
        throw IoError("snapshot: unexpected tensor entry " + name);
      }
      ts[seen++]->resize(rows, cols);
    } else {
      throw IoError("snapshot: unknown header field " + word);
    }
  }
  if (seen != NetParams::kTensors) throw IoError("snapshot: missing tensors");
  std::size_t pos = end + 4;
  for (Matrix* t : ts) {
    const std::size_t n = static_cast<std::size_t>(t->size());
    if (pos + 4 * n > bytes.size()) throw IoError("snapshot: truncated data");
    for (std::size_t k = 0; k < n; ++k) {
      float v;
      std::memcpy(&v, bytes.data() + pos + 4 * k, 4);
      t->data()[k] = v;
    }
    pos += 4 * n;
  }
  if (pos != bytes.size()) throw IoError("snapshot: trailing bytes");
  if (p.b1.cols() != p.w1.cols() || p.w2.rows() != p.w1.cols() || p.w_cls.rows() != p.w2.cols() ||
      p.w_mim.cols() != p.w_cls.cols()) {
    throw IoError("snapshot: inconsistent tensor shapes");
  }
  return p;
}

void save_snapshot(const std::filesystem::path& path, const NetParams& params,
                   std::uint64_t config_hash) {
  write_file(path, encode_snapshot(params, config_hash));
}

NetParams load_snapshot(const std::filesystem::path& path, std::uint64_t* config_hash) {
  return decode_snapshot(read_file(path), config_hash);
}

}  // namespace comodal
