// Acceptance driver: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include "comodal/errors.hpp"
#include "comodal/eval.hpp"
#include "comodal/eval_access.hpp"
#include "comodal/dataset_io.hpp"
#include "comodal/geometry.hpp"
#include "comodal/losses.hpp"
#include "comodal/mixing.hpp"
#include "comodal/optim.hpp"
#include "comodal/pseudo.hpp"
#include "comodal/trainer.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

using namespace comodal;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kOracleTol = 1e-12;
constexpr double kEmaTol = 1e-9;
constexpr double kIdentityTol = 1e-9;
constexpr double kSuiteSeconds = 10.0;
constexpr double kRunCpuSeconds = 600.0;
constexpr double kFullOverBasic = 0.02;
constexpr double kFullOverInit = 0.20;

int failures = 0;

void report(int id, bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient suite.

double gradient_suite(int& checks) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng = make_rng(seed, 1001);
    const int m = 7, c = 5;
    Matrix x = testing::random_matrix(rng, m, c, 3.0);
    Matrix y = testing::random_matrix(rng, m, c, 3.0);
    std::vector<int> labels(m);
    for (auto& l : labels) l = uniform_index(rng, c);
    std::vector<std::uint8_t> valid(m);
    for (auto& v : valid) v = uniform_index(rng, 3) != 0;
    valid[0] = 1;

    const LossReport ce = cross_entropy(x, labels);
    worst = std::max(worst, testing::max_fd_error(x, ce.grad, [&] { return cross_entropy(x, labels).value; }));
    const LossReport kl = kl_pointwise(x, y, false);
    worst = std::max(worst, testing::max_fd_error(x, kl.grad, [&] { return kl_pointwise(x, y).value; }));
    worst = std::max(worst, testing::max_fd_error(y, kl.grad_q, [&] { return kl_pointwise(x, y).value; }));
    const LossReport lt = loss_2d_t(x, y);
    worst = std::max(worst, testing::max_fd_error(x, lt.grad, [&] { return loss_2d_t(x, y).value; }));
    const LossReport lm = loss_2d_m(x, y, valid);
    worst = std::max(worst, testing::max_fd_error(x, lm.grad, [&] { return loss_2d_m(x, y, valid).value; }));
    checks += 5;

    for (NetKind kind : {NetKind::image, NetKind::point}) {
      const int in = kind == NetKind::image ? kImageFeatures : kPointFeatures;
      NetParams p = init_net(kind, {in, 6, c}, rng);
      for (Matrix* t : p.tensors()) *t += testing::random_matrix(rng, t->rows(), t->cols(), 0.3);
      const Matrix feats = testing::random_matrix(rng, 6, in);
      std::vector<int> l(6);
      for (auto& v : l) v = uniform_index(rng, c);
      const Matrix target = testing::random_matrix(rng, 6, c);
      // Cross-entropy on the classifier head plus KL on the mimicry head.
      auto objective = [&] {
        const ForwardResult f = forward(p, feats);
        return cross_entropy(f.logits_cls, l).value + kl_pointwise(f.logits_mim, target).value;
      };
      const ForwardResult f = forward(p, feats);
      const BackwardResult b = backward(p, f.cache, cross_entropy(f.logits_cls, l).grad,
                                        kl_pointwise(f.logits_mim, target).grad);
      auto params = p.tensors();
      const auto grads = b.grads.tensors();
      for (int k = 0; k < NetParams::kTensors; ++k) {
        worst = std::max(worst, testing::max_fd_error(*params[k], *grads[k], objective));
        ++checks;
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// 2. Brute-force oracle suite.

double oracle_suite(int& checks) {
  double worst = 0.0;
  auto note = [&](double err) {
    worst = std::max(worst, err);
    ++checks;
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 2002);

    // Prototypes: per-class mean of logit rows.
    const int n = 60, c = 6;
    const Matrix logits = testing::random_matrix(rng, n, c, 4.0);
    std::vector<int> labels(n);
    for (auto& l : labels) l = uniform_index(rng, c);
    const ClassPrototypes protos = class_prototypes(logits, labels);
    for (int k = 0; k < c; ++k) {
      std::vector<double> sum(c, 0.0);
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (labels[i] == k) {
          ++count;
          for (int j = 0; j < c; ++j) sum[j] += logits(i, j);
        }
      if (count != protos.support[k]) note(1.0);
      for (int j = 0; j < c && count; ++j) note(std::abs(protos.values(k, j) - sum[j] / count));
    }

    // Hybrid fusion: larger confidence wins, ties to the online model.
    const auto online = argmax_labels(testing::random_matrix(rng, n, c, 3.0));
    const auto pre = argmax_labels(testing::random_matrix(rng, n, c, 3.0), Provenance::pretrained);
    const auto fused = hybrid_fuse(online, pre);
    for (int i = 0; i < n; ++i) {
      const bool take_online = online.confidence[i] >= pre.confidence[i];
      note(fused.labels[i] == (take_online ? online.labels[i] : pre.labels[i]) ? 0.0 : 1.0);
    }

    // Gather/scatter: elementwise loop and adjointness.
    const int h = 9, w = 11, k = 4, pts = 50;
    PixelMap map(h, w, k);
    for (auto& v : map.data) v = uniform(rng, -1, 1);
    std::vector<PixelIndex> pix;
    for (int i = 0; i < pts; ++i) pix.push_back({uniform_index(rng, h), uniform_index(rng, w)});
    const Matrix g = sample_at_points(map, pix);
    for (int i = 0; i < pts; ++i)
      for (int j = 0; j < k; ++j) note(std::abs(g(i, j) - map.at(pix[i].row, pix[i].col, j)));
    const Matrix v = testing::random_matrix(rng, pts, k);
    const PixelMap s = scatter_gradient(v, pix, h, w);
    PixelMap loop(h, w, k, 0.0);
    for (int i = 0; i < pts; ++i)
      for (int j = 0; j < k; ++j) loop.at(pix[i].row, pix[i].col, j) += v(i, j);
    for (std::size_t i = 0; i < s.data.size(); ++i) note(std::abs(s.data[i] - loop.data[i]));
    double lhs = (g.array() * v.array()).sum(), rhs = 0.0;
    for (std::size_t i = 0; i < map.data.size(); ++i) rhs += map.data[i] * s.data[i];
    note(std::abs(lhs - rhs));

    // Confusion matrix accumulation.
    std::vector<int> gt(200), pred(200);
    for (auto& l : gt) l = uniform_index(rng, c);
    for (auto& l : pred) l = uniform_index(rng, c);
    ConfusionMatrix cm(c);
    cm.accumulate(gt, pred);
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) {
        std::int64_t cnt = 0;
        for (int i = 0; i < 200; ++i) cnt += gt[i] == a && pred[i] == b;
        note(cm.at(a, b) == cnt ? 0.0 : 1.0);
      }

    // CutMix composition.
    SceneGenConfig cfg = SceneGenConfig::defaults();
    cfg.n_rays = 400;
    const SourceSample src = make_source_sample(cfg, seed, SplitId::source_train, 0);
    const TargetScene tgt = make_target_scene(cfg, seed, SplitId::target_train, 0);
    const MixMask mask = make_region_mask(src.image.height, src.image.width, seed, {0.2, 0.5});
    const MixedImageSample mixed = cutmix_images(src, tgt, mask);
    for (int r = 0; r < src.image.height; ++r)
      for (int cc = 0; cc < src.image.width; ++cc)
        for (int ch = 0; ch < 3; ++ch) {
          const double expect = mask.mask.at(r, cc) ? src.image.at(r, cc, ch) : tgt.image().at(r, cc, ch);
          note(std::abs(mixed.image.at(r, cc, ch) - expect));
        }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// 3. EMA law.

double ema_law() {
  Rng rng = make_rng(3003);
  const NetParams student = init_net(NetKind::point, {kPointFeatures, 64, 6}, rng);
  TeacherState teacher{init_net(NetKind::point, {kPointFeatures, 64, 6}, rng), 0.99};
  const NetParams start = teacher.params;
  for (int k = 0; k < 50; ++k) ema_update(teacher, student);
  const double factor = std::pow(0.99, 50);
  double worst = 0.0;
  const auto t = teacher.params.tensors();
  const auto s = student.tensors();
  const auto t0 = start.tensors();
  for (int k = 0; k < NetParams::kTensors; ++k)
    for (Eigen::Index i = 0; i < t[k]->size(); ++i) {
      const double gap = std::abs(t[k]->data()[i] - s[k]->data()[i]);
      worst = std::max(worst, std::abs(gap - factor * std::abs(t0[k]->data()[i] - s[k]->data()[i])));
    }
  return worst;
}

// ---------------------------------------------------------------------------
// 4. Degenerate configurations.

struct IdentityResult {
  double loss_gap = 0.0;
  double param_gap = 0.0;
  double mask_gap = 0.0;
};

IdentityResult degenerate_identities(const Dataset& data) {
  IdentityResult out;
  TrainConfig c;
  c.iterations = 25;
  c.lambda_2d_t = c.lambda_2d_m = c.lambda_3d_m = 0.0;
  c.use_icd = c.use_icg = c.use_hybrid_pl = false;
  const TrainResult run = train_comodal(data.source_train, data.target_train, data.num_classes(), nullptr, c);

  // Reference loop: source cross-entropy for the 2D network, online
  // pseudo-label cross-entropy for the 3D network, nothing else.
  InitialNets nets = initial_networks(c, data.num_classes());
  AdamState a2 = AdamState::for_params(nets.net2d);
  AdamState a3 = AdamState::for_params(nets.net3d);
  for (long it = 0; it < c.iterations; ++it) {
    const auto d = draw_iteration(c, it, data.source_train, data.target_train);
    std::vector<Matrix> xs, xt, xp;
    std::vector<int> ls;
    for (int b = 0; b < c.batch_size; ++b) {
      const auto& src = data.source_train[d.source_ids[b]];
      xs.push_back(features_2d_at(src.image, d.source_pixels[b]));
      const auto l = sample_labels(src.labels, d.source_pixels[b]);
      ls.insert(ls.end(), l.begin(), l.end());
      const auto& scene = data.target_train[d.target_ids[b]];
      std::vector<PixelIndex> pix;
      Matrix pts(static_cast<Eigen::Index>(d.target_points[b].size()), 3);
      for (std::size_t i = 0; i < d.target_points[b].size(); ++i) {
        pix.push_back(scene.pixel_of_point()[d.target_points[b][i]]);
        pts.row(static_cast<Eigen::Index>(i)) = scene.points().row(d.target_points[b][i]);
      }
      xt.push_back(features_2d_at(scene.image(), pix));
      xp.push_back(features_3d(pts));
    }
    auto stack = [](const std::vector<Matrix>& parts) {
      Eigen::Index rows = 0;
      for (const auto& p : parts) rows += p.rows();
      Matrix m(rows, parts.front().cols());
      Eigen::Index at = 0;
      for (const auto& p : parts) {
        m.middleRows(at, p.rows()) = p;
        at += p.rows();
      }
      return m;
    };
    const auto online = argmax_labels(forward(nets.net2d, stack(xt)).logits_cls);
    const ForwardResult f2 = forward(nets.net2d, stack(xs));
    const LossReport ce2 = cross_entropy(f2.logits_cls, ls);
    const ForwardResult f3 = forward(nets.net3d, stack(xp));
    const LossReport ce3 = cross_entropy(f3.logits_cls, online.labels);
    const auto& row = run.log[static_cast<std::size_t>(it)];
    out.loss_gap = std::max({out.loss_gap, std::abs(row.total_2d - ce2.value) / std::max(1.0, ce2.value),
                             std::abs(row.total_3d - ce3.value) / std::max(1.0, ce3.value)});
    const double lr = poly_lr(it, c.iterations, c.base_lr, c.poly_power);
    adam_step(nets.net2d, backward(nets.net2d, f2.cache, ce2.grad, Matrix()).grads, a2, lr);
    adam_step(nets.net3d, backward(nets.net3d, f3.cache, ce3.grad, Matrix()).grads, a3, lr);
  }
  round_to_float(nets.net2d);
  round_to_float(nets.net3d);
  auto gap = [](const NetParams& a, const NetParams& b) {
    double worst = 0.0;
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    for (int k = 0; k < NetParams::kTensors; ++k)
      worst = std::max(worst, max_abs(*ta[k] - *tb[k]) / std::max(1.0, max_abs(*tb[k])));
    return worst;
  };
  out.param_gap = std::max(gap(run.net2d, nets.net2d), gap(run.net3d, nets.net3d));

  // An all-zero mask leaves the target image, so mixed-image distillation
  // must equal target distillation on the same scene.
  Rng rng = make_rng(4004);
  const NetParams n2 = init_net(NetKind::image, {kImageFeatures, 64, data.num_classes()}, rng);
  const NetParams n3 = init_net(NetKind::point, {kPointFeatures, 64, data.num_classes()}, rng);
  for (std::size_t s = 0; s < 5 && s < data.target_train.size(); ++s) {
    const auto& scene = data.target_train[s];
    const auto& src = data.source_train[s % data.source_train.size()];
    const MixMask zeros{Grid<std::uint8_t>(scene.height(), scene.width(), 1, 0), MaskKind::region};
    const MixedImageSample mixed = cutmix_images(src, scene, zeros);
    const Matrix l3 = forward(n3, features_3d(scene.points())).logits_cls;
    const Matrix mim_t = forward(n2, features_2d_at(scene.image(), scene.pixel_of_point())).logits_mim;
    const Matrix mim_m = forward(n2, features_2d_at(mixed.image, scene.pixel_of_point())).logits_mim;
    const AlignmentTargets t = assemble_alignment_targets(class_prototypes(l3, argmax_labels(l3)), l3, mixed);
    out.mask_gap = std::max(out.mask_gap, std::abs(loss_2d_m(mim_m, t.targets, t.valid).value -
                                                   loss_2d_t(mim_t, l3).value));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 5-9. Training experiments on the default benchmark.

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt(x, 3);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int num_seeds = 5;
  long iterations = 0;
  int jobs = 1;
  std::string work;
  app.add_option("--seeds", num_seeds, "Number of seeds for the training criteria")->check(CLI::PositiveNumber);
  app.add_option("--iterations", iterations, "Override training iterations (0 keeps the default)");
  app.add_option("--jobs", jobs, "Concurrent training runs")->check(CLI::PositiveNumber);
  app.add_option("--work", work, "Directory for run artifacts (default: a temporary directory)");
  CLI11_PARSE(app, argc, argv);

  try {
    {
      const auto t0 = std::chrono::steady_clock::now();
      int checks = 0;
      const double err = gradient_suite(checks);
      const double secs = seconds_since(t0);
      report(1, err <= kGradTol && secs < kSuiteSeconds, "finite-difference gradients",
             "max relative error " + fmt(err) + " <= " + fmt(kGradTol) + " over " + std::to_string(checks) +
                 " checks and 4 seeds, " + fmt(secs, 3) + " s < " + fmt(kSuiteSeconds) + " s");
    }
    {
      const auto t0 = std::chrono::steady_clock::now();
      int checks = 0;
      const double err = oracle_suite(checks);
      const double secs = seconds_since(t0);
      report(2, err <= kOracleTol && secs < kSuiteSeconds, "brute-force oracles",
             "max deviation " + fmt(err) + " <= " + fmt(kOracleTol) + " over " + std::to_string(checks) +
                 " comparisons, " + fmt(secs, 3) + " s < " + fmt(kSuiteSeconds) + " s");
    }
    {
      const double err = ema_law();
      report(3, err <= kEmaTol, "EMA contraction", "max |gap - 0.99^50 gap0| = " + fmt(err) + " <= " + fmt(kEmaTol));
    }

    TrainConfig base;
    if (iterations > 0) base.iterations = iterations;
    const fs::path root = work.empty() ? fs::temp_directory_path() / "comodal_acceptance" : fs::path(work);
    fs::remove_all(root);
    fs::create_directories(root);

    std::mutex mu;
    std::map<std::uint64_t, Dataset> datasets;
    const DatasetProvider provider = [&](std::uint64_t seed) -> const Dataset& {
      std::lock_guard lock(mu);
      auto it = datasets.find(seed);
      if (it == datasets.end()) it = datasets.emplace(seed, generate_dataset(base.scene_config(), seed)).first;
      return it->second;
    };

    {
      const IdentityResult r = degenerate_identities(provider(0));
      // Final parameters are stored as float32, so they can differ by one
      // float rounding step even when the double trajectories agree.
      const bool ok = r.loss_gap <= kIdentityTol && r.param_gap <= 2e-7 && r.mask_gap <= kIdentityTol;
      report(4, ok, "degenerate configurations",
             "per-iteration loss gap " + fmt(r.loss_gap) + " <= " + fmt(kIdentityTol) + ", final parameter gap " +
                 fmt(r.param_gap) + " <= 2e-07 (float32 storage), zero-mask distillation gap " + fmt(r.mask_gap) +
                 " <= " + fmt(kIdentityTol));
    }

    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < num_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    std::vector<AblationCell> cells = ablation_grid("table2", base);
    for (auto& cell : ablation_grid("pixels", base))
      if (cell.row == "all") cells.push_back(cell);
    std::cout << "running " << cells.size() * seeds.size() << " training runs of " << base.iterations
              << " iterations" << std::endl;
    const auto results = run_ablation_matrix(cells, seeds, provider, jobs, root);
    std::cout << ablation_csv(results) << std::flush;

    std::map<std::string, std::vector<double>> m3;
    double slowest = 0.0;
    bool all_ok = true;
    for (const auto& r : results) {
      if (!r.ok) {
        std::cout << "run " << r.grid << "/" << r.row << " seed " << r.seed << " failed: " << r.error << "\n";
        all_ok = false;
        continue;
      }
      m3[r.grid + "/" + r.row].push_back(r.miou_3d);
      slowest = std::max(slowest, r.seconds);
    }
    const auto& online = m3["table2/online_pl"];
    const auto& basic = m3["table2/basic"];
    const auto& icd = m3["table2/basic+icd"];
    const auto& full = m3["table2/basic+icd+icg"];
    const auto& all_px = m3["pixels/all"];
    const bool complete = all_ok && full.size() == seeds.size();

    {
      int ordered = 0;
      for (std::size_t s = 0; complete && s < seeds.size(); ++s) ordered += basic[s] < icd[s] && icd[s] < full[s];
      const bool means = mean(basic) < mean(icd) && mean(icd) < mean(full);
      const bool margin = mean(full) - mean(basic) >= kFullOverBasic;
      const bool votes = ordered * 5 >= 4 * static_cast<int>(seeds.size());
      const bool ok = complete && means && margin && votes && slowest < kRunCpuSeconds;
      report(5, ok, "component ablation trend",
             "mean 3D mIoU basic " + fmt(mean(basic)) + " < +ICD " + fmt(mean(icd)) + " < +ICD+ICG " +
                 fmt(mean(full)) + (means ? " holds" : " violated") + "; full ordering in " +
                 std::to_string(ordered) + "/" + std::to_string(seeds.size()) + " seeds (need >= 4/5); full - basic = " +
                 fmt(mean(full) - mean(basic)) + " (need >= " + fmt(kFullOverBasic) + "); slowest run " +
                 fmt(slowest, 4) + " s (limit " + fmt(kRunCpuSeconds) + " s); per seed basic [" + join(basic) +
                 "] icd [" + join(icd) + "] full [" + join(full) + "]");
    }
    {
      const double gain = mean(basic) - mean(online);
      report(6, complete && gain > 0.0, "hybrid pseudo-labels",
             "mean 3D mIoU hybrid " + fmt(mean(basic)) + " vs online-only " + fmt(mean(online)) + ", improvement " +
                 fmt(gain) + " (need > 0); online-only per seed [" + join(online) + "]");
    }
    {
      report(7, complete && mean(icd) >= mean(all_px), "projected source pixels",
             "mean 3D mIoU projection " + fmt(mean(icd)) + " vs all pixels " + fmt(mean(all_px)) +
                 " (need projection >= all); all per seed [" + join(all_px) + "]");
    }
    {
      // Re-run the full method for the first seed and compare artifacts byte for byte.
      const auto& cell = cells[3];
      TrainConfig cfg = cell.config;
      cfg.seed = seeds.front();
      const Dataset& data = provider(cfg.seed);
      const NetParams pre = pretrain_2d(data.source_train, data.num_classes(), cfg);
      const fs::path first = root / "cells" / (cell.grid + "_" + cell.row + "_seed" + std::to_string(cfg.seed));
      const fs::path second = root / "determinism";
      run_training(data, &pre, cfg, second);
      bool same = true;
      for (const char* f : {"train_log.csv", "eval_report.csv"}) {
        const bool equal = fs::exists(first / f) && read_file(first / f) == read_file(second / f);
        same = same && equal;
      }
      report(8, same, "determinism",
             std::string("train_log.csv and eval_report.csv ") + (same ? "byte-identical" : "differ") +
                 " across two runs of seed " + std::to_string(cfg.seed));
    }
    {
      std::vector<double> init;
      for (auto seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        const Dataset& data = provider(seed);
        const NetParams net3d = initial_networks(cfg, data.num_classes()).net3d;
        init.push_back(miou(evaluate_3d(net3d, data.target_val)).mean);
      }
      const double gain = mean(full) - mean(init);
      report(9, complete && gain >= kFullOverInit, "learning signal over initialization",
             "mean 3D mIoU full " + fmt(mean(full)) + " vs initialization-only " + fmt(mean(init)) + ", gain " +
                 fmt(gain) + " (need >= " + fmt(kFullOverInit) + "); init per seed [" + join(init) + "]");
    }
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance driver aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
