#include "comodal/trainer.hpp"

#include "comodal/dataset_io.hpp"
#include "comodal/errors.hpp"
#include "comodal/eval_access.hpp"
#include "comodal/losses.hpp"
#include "comodal/optim.hpp"
#include "comodal/pseudo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace comodal {

namespace fs = std::filesystem;

namespace {

enum Stream : std::uint64_t {
  kSourceBatch = 101,
  kTargetBatch,
  kSourcePixels,
  kTargetPoints,
  kMasks,
  kPairs,
  kSelect,
  kInit2d = 201,
  kInit3d,
  kPretrainInit,
  kPretrainBatch,
  kPretrainPixels,
};

std::vector<int> pick_batch(int n, int count, Rng& rng) {
  std::vector<int> out;
  if (count <= n) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < count; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
      out.push_back(pool[i]);
    }
  } else {
    for (int i = 0; i < count; ++i) out.push_back(uniform_index(rng, n));
  }
  return out;
}

std::vector<PixelIndex> pixels_from_ids(const std::vector<int>& ids, int width) {
  std::vector<PixelIndex> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back({id / width, id % width});
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Matrix vstack(const std::vector<Matrix>& blocks, Eigen::Index cols) {
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    if (b.rows() == 0) continue;
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

/// Row offsets of consecutive blocks.
struct Layout {
  std::vector<Eigen::Index> offset;
  std::vector<Eigen::Index> rows;
  Eigen::Index total = 0;

  int add(Eigen::Index n) {
    offset.push_back(total);
    rows.push_back(n);
    total += n;
    return static_cast<int>(offset.size()) - 1;
  }
};

/// The sampling function applied to per-unique-pixel rows.
Matrix gather(const Matrix& unique_rows, const std::vector<PixelIndex>& unique,
              const std::vector<PixelIndex>& pix, int h, int w) {
  return sample_at_points(rows_to_map(unique_rows, unique, h, w), pix);
}

/// Adjoint of `gather`.
Matrix scatter(const Matrix& point_grads, const std::vector<PixelIndex>& pix,
               const std::vector<PixelIndex>& unique, int h, int w) {
  return map_to_rows(scatter_gradient(point_grads, pix, h, w), unique);
}

std::vector<int> concat(const std::vector<std::vector<int>>& parts) {
  std::vector<int> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

std::vector<int> sample_subset(int n, int count, Rng& rng) {
  if (n < 0) throw ContractError("sample_subset: negative population");
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  if (count <= 0 || count >= n) return pool;
  for (int i = 0; i < count; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

IterationDraw draw_iteration(const TrainConfig& config, long iter,
                             std::span<const SourceSample> source,
                             std::span<const TargetScene> target) {
  if (source.empty() || target.empty()) throw IoError("training needs source and target scenes");
  const int b = config.batch_size;
  const auto it = static_cast<std::uint64_t>(iter);
  IterationDraw d;
  Rng rs = make_rng(config.seed, kSourceBatch, it);
  Rng rt = make_rng(config.seed, kTargetBatch, it);
  d.source_ids = pick_batch(static_cast<int>(source.size()), b, rs);
  d.target_ids = pick_batch(static_cast<int>(target.size()), b, rt);

  Rng rp = make_rng(config.seed, kSourcePixels, it);
  Rng rq = make_rng(config.seed, kTargetPoints, it);
  for (int k = 0; k < b; ++k) {
    const auto& img = source[d.source_ids[k]].image;
    d.source_pixels.push_back(
        pixels_from_ids(sample_subset(img.pixels(), config.source_pixels_per_image, rp), img.width));
    d.target_points.push_back(
        sample_subset(target[d.target_ids[k]].num_points(), config.max_points_per_scene, rq));
  }

  if (config.use_icd) {
    Rng rm = make_rng(config.seed, kMasks, it);
    Rng rsel = make_rng(config.seed, kSelect, it);
    for (int k = 0; k < b; ++k) {
      const auto& src = source[d.source_ids[k]];
      const int h = src.image.height;
      const int w = src.image.width;
      if (config.icd_variant == IcdVariant::prototype_only) {
        d.masks.push_back({Grid<std::uint8_t>(h, w, 1, 1), MaskKind::region});
      } else if (config.mask_kind == MaskKind::region) {
        d.masks.push_back(make_region_mask(h, w, rm(), config.mask_area));
      } else {
        d.masks.push_back(make_class_mask(src.labels, choose_mix_classes(src.labels, rm)));
      }
      d.select_seeds.push_back(rsel());
    }
  }
  if (config.use_icg) {
    Rng rpair = make_rng(config.seed, kPairs, it);
    d.partners = pair_batch(b, rpair);
  }
  return d;
}

NetParams pretrain_2d(std::span<const SourceSample> source, int classes, const TrainConfig& config,
                      std::vector<double>* losses) {
  config.validate();
  if (source.empty()) throw IoError("pretrain_2d: no labeled source images");
  Rng init = make_rng(config.seed, kPretrainInit);
  NetParams net = init_net(NetKind::image, {kImageFeatures, config.hidden_2d, classes}, init);
  AdamState adam = AdamState::for_params(net);
  const int n = static_cast<int>(source.size());
  for (long it = 0; it < config.pretrain_iterations; ++it) {
    const auto u = static_cast<std::uint64_t>(it);
    Rng rb = make_rng(config.seed, kPretrainBatch, u);
    Rng rp = make_rng(config.seed, kPretrainPixels, u);
    std::vector<Matrix> feats;
    std::vector<int> labels;
    for (int id : pick_batch(n, config.pretrain_batch_size, rb)) {
      const auto& s = source[id];
      const auto pix = pixels_from_ids(
          sample_subset(s.image.pixels(), config.source_pixels_per_image, rp), s.image.width);
      feats.push_back(features_2d_at(s.image, pix));
      const auto l = sample_labels(s.labels, pix);
      labels.insert(labels.end(), l.begin(), l.end());
    }
    const ForwardResult fw = forward(net, vstack(feats, kImageFeatures));
    const LossReport ce = cross_entropy(fw.logits_cls, labels, {}, "loss_2d_s");
    if (losses) losses->push_back(ce.value);
    const BackwardResult bw = backward(net, fw.cache, ce.grad, Matrix());
    adam_step(net, bw.grads,
              adam, poly_lr(it, config.pretrain_iterations, config.pretrain_lr, config.poly_power));
  }
  round_to_float(net);
  return net;
}

InitialNets initial_networks(const TrainConfig& config, int classes) {
  Rng init2 = make_rng(config.seed, kInit2d);
  Rng init3 = make_rng(config.seed, kInit3d);
  return {init_net(NetKind::image, {kImageFeatures, config.hidden_2d, classes}, init2),
          init_net(NetKind::point, {kPointFeatures, config.hidden_3d, classes}, init3)};
}

TrainResult train_comodal(std::span<const SourceSample> source, std::span<const TargetScene> target,
                          int classes, const NetParams* pretrained, const TrainConfig& config,
                          const FixedPseudoLabels* fixed_labels) {
  config.validate();
  if (config.use_hybrid_pl && !pretrained) {
    throw ConfigError("use_hybrid_pl needs a pretrained 2D snapshot");
  }
  if (pretrained && pretrained->shape() != NetShape{kImageFeatures, pretrained->shape().hidden, classes}) {
    throw ConfigError("pretrained 2D snapshot does not match the class count");
  }
  if (config.pl_round) {
    if (!fixed_labels) throw ConfigError("pl_round needs fixed pseudo-labels");
    if (fixed_labels->per_scene.size() != target.size()) {
      throw ConfigError("fixed pseudo-labels do not cover the target split");
    }
    for (std::size_t s = 0; s < target.size(); ++s) {
      if (static_cast<int>(fixed_labels->per_scene[s].size()) != target[s].num_points()) {
        throw ConfigError("fixed pseudo-labels do not match scene " + std::to_string(s));
      }
    }
  }
  if (source.empty() || target.empty()) throw IoError("training needs source and target scenes");

  const int batch = config.batch_size;
  TrainResult res;
  InitialNets init = initial_networks(config, classes);
  res.net2d = std::move(init.net2d);
  res.net3d = std::move(init.net3d);
  res.teacher = TeacherState{res.net3d, config.ema_decay};
  AdamState adam2 = AdamState::for_params(res.net2d);
  AdamState adam3 = AdamState::for_params(res.net3d);
  const std::uint64_t pretrained_hash = pretrained ? pretrained->hash() : 0;

  const long epoch_len =
      std::max<long>(1, (static_cast<long>(target.size()) + batch - 1) / batch);
  FusionRow fusion_acc;
  long fusion_online = 0;
  long fusion_pretrained = 0;

  PrototypeSmoother smoother(config.prototype_decay);
  for (long it = 0; it < config.iterations; ++it) {
    const double lr = poly_lr(it, config.iterations, config.base_lr, config.poly_power);
    const IterationDraw d = draw_iteration(config, it, source, target);

    // Target points of this iteration.
    std::vector<Matrix> tpoints(batch);
    std::vector<std::vector<PixelIndex>> tpix(batch), tuniq(batch);
    Layout points;
    for (int b = 0; b < batch; ++b) {
      const TargetScene& scene = target[d.target_ids[b]];
      tpoints[b] = select_rows(scene.points(), d.target_points[b]);
      for (int id : d.target_points[b]) tpix[b].push_back(scene.pixel_of_point()[id]);
      tuniq[b] = unique_pixels(tpix[b]);
      points.add(tpoints[b].rows());
    }

    // Mixed images: per slot, the pixels whose mimicry output is aligned.
    std::vector<MixedImageSample> mixed(config.use_icd ? batch : 0);
    std::vector<std::vector<PixelIndex>> mpix(mixed.size()), muniq(mixed.size());
    std::vector<std::vector<int>> mpoint(mixed.size());  // target point row, or -1 for a source pixel
    std::vector<std::vector<int>> msrc_label(mixed.size());
    for (std::size_t b = 0; b < mixed.size(); ++b) {
      const SourceSample& src = source[d.source_ids[b]];
      const TargetScene& scene = target[d.target_ids[b]];
      mixed[b] = cutmix_images(src, scene, d.masks[b], tpix[b]);
      const bool keep_source_points = config.icd_pixel_select == PixelSelect::projection &&
                                      config.icd_variant != IcdVariant::mix_only;
      int projected_in_mask = 0;
      for (std::size_t i = 0; i < tpix[b].size(); ++i) {
        const bool in_mask = mixed[b].mask_at_points[i] == 1;
        projected_in_mask += in_mask ? 1 : 0;
        if (in_mask && !keep_source_points) continue;
        mpix[b].push_back(tpix[b][i]);
        mpoint[b].push_back(in_mask ? -1 : static_cast<int>(i));
        msrc_label[b].push_back(mixed[b].source_labels_at_points[i]);
      }
      if (config.icd_variant != IcdVariant::mix_only &&
          config.icd_pixel_select != PixelSelect::projection) {
        std::vector<int> region;
        const auto& m = d.masks[b].mask;
        for (int p = 0; p < m.pixels(); ++p)
          if (m.data[p] == 1) region.push_back(p);
        std::vector<int> chosen;
        if (config.icd_pixel_select == PixelSelect::all) {
          chosen = region;
        } else {
          Rng rsel = make_rng(d.select_seeds[b], kSelect);
          for (int k : sample_subset(static_cast<int>(region.size()), projected_in_mask, rsel)) {
            chosen.push_back(region[k]);
          }
          if (projected_in_mask == 0) chosen.clear();
        }
        for (const auto& px : pixels_from_ids(chosen, m.width)) {
          mpix[b].push_back(px);
          mpoint[b].push_back(-1);
          msrc_label[b].push_back(src.labels.at(px.row, px.col));
        }
      }
      muniq[b] = unique_pixels(mpix[b]);
    }

    // One 2D forward over source pixels, target pixels and mixed pixels.
    std::vector<Matrix> feats2;
    Layout rows2;
    std::vector<int> source_labels;
    std::vector<int> src_block(batch), tgt_block(batch), mix_block(mixed.size());
    for (int b = 0; b < batch; ++b) {
      const SourceSample& src = source[d.source_ids[b]];
      feats2.push_back(features_2d_at(src.image, d.source_pixels[b]));
      src_block[b] = rows2.add(feats2.back().rows());
      const auto l = sample_labels(src.labels, d.source_pixels[b]);
      source_labels.insert(source_labels.end(), l.begin(), l.end());
    }
    for (int b = 0; b < batch; ++b) {
      feats2.push_back(features_2d_at(target[d.target_ids[b]].image(), tuniq[b]));
      tgt_block[b] = rows2.add(feats2.back().rows());
    }
    for (std::size_t b = 0; b < mixed.size(); ++b) {
      feats2.push_back(features_2d_at(mixed[b].image, muniq[b]));
      mix_block[b] = rows2.add(feats2.back().rows());
    }
    const Matrix x2 = vstack(feats2, kImageFeatures);
    const ForwardResult f2 = forward(res.net2d, x2);

    // 3D forward over target points followed by mixed clouds.
    std::vector<Matrix> feats3;
    for (int b = 0; b < batch; ++b) feats3.push_back(features_3d(tpoints[b]));
    Layout rows3 = points;
    std::vector<int> cloud_block;
    if (config.use_icg) {
      for (int b = 0; b < batch; ++b) {
        const int j = d.partners[b];
        Matrix cloud(tpoints[b].rows() + tpoints[j].rows(), 3);
        cloud << tpoints[b], tpoints[j];
        feats3.push_back(features_3d(cloud));
        cloud_block.push_back(rows3.add(cloud.rows()));
      }
    }
    const ForwardResult f3 = forward(res.net3d, vstack(feats3, kPointFeatures));
    const Matrix logits3 = f3.logits_cls.topRows(points.total);

    // 2D outputs at the target points.
    const int C = classes;
    Matrix cls2_pts(points.total, C), mim2_pts(points.total, C), pre_pts(points.total, C);
    for (int b = 0; b < batch; ++b) {
      const TargetScene& scene = target[d.target_ids[b]];
      const auto o = rows2.offset[tgt_block[b]];
      const auto n = rows2.rows[tgt_block[b]];
      const int h = scene.height();
      const int w = scene.width();
      cls2_pts.middleRows(points.offset[b], points.rows[b]) =
          gather(f2.logits_cls.middleRows(o, n), tuniq[b], tpix[b], h, w);
      mim2_pts.middleRows(points.offset[b], points.rows[b]) =
          gather(f2.logits_mim.middleRows(o, n), tuniq[b], tpix[b], h, w);
      if (config.use_hybrid_pl) {
        const Matrix pre = forward(*pretrained, x2.middleRows(o, n)).logits_cls;
        pre_pts.middleRows(points.offset[b], points.rows[b]) = gather(pre, tuniq[b], tpix[b], h, w);
      }
    }

    // Pseudo-labels (hybrid or online-only).
    const PointPseudoLabels online = argmax_labels(cls2_pts, Provenance::online);
    const PointPseudoLabels hybrid =
        config.use_hybrid_pl ? hybrid_fuse(online, argmax_labels(pre_pts, Provenance::pretrained))
                             : online;

    LogRow row;
    row.iteration = it;
    row.lr = lr;
    row.online_fraction = hybrid.fraction(Provenance::online);

    const LossReport l2s = cross_entropy(f2.logits_cls.topRows(rows2.offset[tgt_block[0]]),
                                         source_labels, {}, "loss_2d_s");
    const LossReport l2t = loss_2d_t(mim2_pts, logits3);
    const LossReport l3t = loss_3d_t(logits3, hybrid);

    // Inter-modal cross-domain distillation on mixed images.
    std::optional<LossReport> l2m;
    std::vector<Matrix> mim_mixed_pts(mixed.size());
    if (config.use_icd) {
      const ClassPrototypes protos = config.prototype_decay > 0.0
                                         ? smoother.update(class_prototypes(logits3, hybrid))
                                         : class_prototypes(logits3, hybrid);
      std::vector<Matrix> tgts;
      std::vector<std::uint8_t> valid;
      for (std::size_t b = 0; b < mixed.size(); ++b) {
        const SourceSample& src = source[d.source_ids[b]];
        const auto o = rows2.offset[mix_block[b]];
        const auto n = rows2.rows[mix_block[b]];
        mim_mixed_pts[b] = gather(f2.logits_mim.middleRows(o, n), muniq[b], mpix[b],
                                  src.image.height, src.image.width);
        const AlignmentTargets proto = prototype_targets(protos, msrc_label[b]);
        Matrix t(static_cast<Eigen::Index>(mpix[b].size()), C);
        for (std::size_t r = 0; r < mpix[b].size(); ++r) {
          const int p = mpoint[b][r];
          const auto ri = static_cast<Eigen::Index>(r);
          if (p >= 0) {
            t.row(ri) = logits3.row(points.offset[b] + p);
            valid.push_back(1);
          } else {
            t.row(ri) = proto.targets.row(ri);
            valid.push_back(proto.valid[r]);
          }
        }
        tgts.push_back(std::move(t));
      }
      l2m = loss_2d_m(vstack(mim_mixed_pts, C), vstack(tgts, C), valid);
    }

    // Intra-domain cross-modal guidance on mixed point clouds.
    std::optional<LossReport> l3m;
    if (config.use_icg) {
      const Matrix teacher_logits = forward(res.teacher.params, vstack(
          std::vector<Matrix>(feats3.begin(), feats3.begin() + batch), kPointFeatures)).logits_cls;
      const PointPseudoLabels teacher = argmax_labels(teacher_logits, Provenance::teacher);
      auto slot_labels = [&](const PointPseudoLabels& pl, int b) {
        const auto o = points.offset[b];
        return std::vector<int>(pl.labels.begin() + o, pl.labels.begin() + o + points.rows[b]);
      };
      std::vector<std::vector<int>> labels;
      for (int b = 0; b < batch; ++b) {
        const int j = d.partners[b];
        const auto li = config.use_2d_labels_in_icg ? slot_labels(hybrid, b) : slot_labels(teacher, b);
        const auto lj = config.use_teacher_labels ? slot_labels(teacher, j) : slot_labels(hybrid, j);
        labels.push_back(mix_pointclouds(tpoints[b], li, tpoints[j], lj).labels);
      }
      const auto o = rows3.offset[cloud_block.front()];
      l3m = cross_entropy(f3.logits_cls.bottomRows(rows3.total - o), concat(labels), {}, "loss_3d_m");
    }

    // Self-training on frozen labels.
    std::optional<LossReport> lpl2, lpl3;
    if (config.pl_round) {
      std::vector<int> fixed;
      for (int b = 0; b < batch; ++b) {
        const auto& all = fixed_labels->per_scene[d.target_ids[b]];
        for (int id : d.target_points[b]) fixed.push_back(all[id]);
      }
      lpl2 = cross_entropy(cls2_pts, fixed, {}, "loss_pl_2d");
      lpl3 = cross_entropy(logits3, fixed, {}, "loss_pl_3d");
    }

    const WeightedTotal t2 = total_2d(l2s, l2t, l2m, config.lambda_2d_t, config.lambda_2d_m);
    const WeightedTotal t3 = total_3d(l3t, l3m, config.lambda_3d_m);
    row.loss_2d_s = l2s.value;
    row.loss_2d_t = l2t.value;
    row.loss_2d_m = l2m ? l2m->value : 0.0;
    row.count_2d_m = l2m ? l2m->count : 0;
    row.loss_3d_t = l3t.value;
    row.loss_3d_m = l3m ? l3m->value : 0.0;
    row.count_3d_m = l3m ? l3m->count : 0;
    row.loss_pl_2d = lpl2 ? lpl2->value : 0.0;
    row.loss_pl_3d = lpl3 ? lpl3->value : 0.0;
    row.total_2d = t2.value + config.pl_weight * row.loss_pl_2d;
    row.total_3d = t3.value + config.pl_weight * row.loss_pl_3d;

    // Upstream gradients for the 2D rows.
    Matrix g2_cls = Matrix::Zero(rows2.total, C);
    Matrix g2_mim = Matrix::Zero(rows2.total, C);
    g2_cls.topRows(rows2.offset[tgt_block[0]]) = t2.terms[0].grad;
    const Matrix& g_l2t = t2.terms[1].grad;
    for (int b = 0; b < batch; ++b) {
      const TargetScene& scene = target[d.target_ids[b]];
      const auto o = rows2.offset[tgt_block[b]];
      const auto n = rows2.rows[tgt_block[b]];
      g2_mim.middleRows(o, n) = scatter(g_l2t.middleRows(points.offset[b], points.rows[b]), tpix[b],
                                        tuniq[b], scene.height(), scene.width());
      if (lpl2) {
        g2_cls.middleRows(o, n) =
            scatter(config.pl_weight * lpl2->grad.middleRows(points.offset[b], points.rows[b]),
                    tpix[b], tuniq[b], scene.height(), scene.width());
      }
    }
    if (l2m) {
      const Matrix& g = t2.terms[2].grad;
      Eigen::Index at = 0;
      for (std::size_t b = 0; b < mixed.size(); ++b) {
        const auto n = static_cast<Eigen::Index>(mpix[b].size());
        const auto& img = source[d.source_ids[b]].image;
        g2_mim.middleRows(rows2.offset[mix_block[b]], rows2.rows[mix_block[b]]) =
            scatter(g.middleRows(at, n), mpix[b], muniq[b], img.height, img.width);
        at += n;
      }
    }

    // Upstream gradients for the 3D rows.
    Matrix g3 = Matrix::Zero(rows3.total, C);
    g3.topRows(points.total) = t3.terms[0].grad;
    if (lpl3) g3.topRows(points.total) += config.pl_weight * lpl3->grad;
    if (l3m) {
      const auto o = rows3.offset[cloud_block.front()];
      g3.bottomRows(rows3.total - o) = t3.terms[1].grad;
    }

    const std::uint64_t teacher_hash = res.teacher.params.hash();
    const BackwardResult b2 = backward(res.net2d, f2.cache, g2_cls, g2_mim);
    const BackwardResult b3 = backward(res.net3d, f3.cache, g3, Matrix());
    try {
      adam_step(res.net2d, b2.grads, adam2, lr);
      adam_step(res.net3d, b3.grads, adam3, lr);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    if (res.teacher.params.hash() != teacher_hash) {
      throw ContractError("teacher parameters changed outside the EMA update");
    }
    ema_update(res.teacher, res.net3d);

    for (const auto p : hybrid.provenance) {
      (p == Provenance::pretrained ? fusion_pretrained : fusion_online) += 1;
    }
    if ((it + 1) % epoch_len == 0 || it + 1 == config.iterations) {
      fusion_acc.epoch = static_cast<int>(it / epoch_len);
      fusion_acc.points = fusion_online + fusion_pretrained;
      const double total = std::max<double>(1.0, static_cast<double>(fusion_acc.points));
      fusion_acc.online_fraction = static_cast<double>(fusion_online) / total;
      fusion_acc.pretrained_fraction = static_cast<double>(fusion_pretrained) / total;
      res.fusion.push_back(fusion_acc);
      fusion_online = fusion_pretrained = 0;
    }
    res.log.push_back(row);
  }

  if (pretrained && pretrained->hash() != pretrained_hash) {
    throw ContractError("pretrained 2D parameters changed during training");
  }
  round_to_float(res.net2d);
  round_to_float(res.net3d);
  round_to_float(res.teacher.params);
  return res;
}

FixedPseudoLabels ensemble_pseudo_labels(const NetParams& net2d, const NetParams& net3d,
                                         std::span<const TargetScene> scenes) {
  FixedPseudoLabels out;
  for (const auto& scene : scenes) {
    const ScenePredictions p = predict_scene(net2d, net3d, scene);
    out.per_scene.push_back(ensemble_labels(p.logits_2d, p.logits_3d));
  }
  return out;
}

std::string train_log_csv(const std::vector<LogRow>& log) {
  std::string out =
      "iteration,lr,loss_2d_s,loss_2d_t,loss_2d_m,loss_3d_t,loss_3d_m,loss_pl_2d,loss_pl_3d,"
      "count_2d_m,count_3d_m,total_2d,total_3d,online_fraction\n";
  for (const auto& r : log) {
    out += std::to_string(r.iteration) + "," + format_double(r.lr) + "," + format_double(r.loss_2d_s) +
           "," + format_double(r.loss_2d_t) + "," + format_double(r.loss_2d_m) + "," +
           format_double(r.loss_3d_t) + "," + format_double(r.loss_3d_m) + "," +
           format_double(r.loss_pl_2d) + "," + format_double(r.loss_pl_3d) + "," +
           std::to_string(r.count_2d_m) + "," + std::to_string(r.count_3d_m) + "," +
           format_double(r.total_2d) + "," + format_double(r.total_3d) + "," +
           format_double(r.online_fraction) + "\n";
  }
  return out;
}

std::string fusion_stats_csv(const std::vector<FusionRow>& rows) {
  std::string out = "epoch,points,online_fraction,pretrained_fraction\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.points) + "," +
           format_double(r.online_fraction) + "," + format_double(r.pretrained_fraction) + "\n";
  }
  return out;
}

namespace {

std::string scene_name(SplitId split, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d", split_name(split), index);
  return buf;
}

void write_qualitative(const Dataset& data, const TrainResult& res, int count, const fs::path& dir) {
  fs::create_directories(dir);
  const auto palette = class_palette(data.num_classes());
  const int n = std::min<int>(count, static_cast<int>(data.target_val.size()));
  for (int i = 0; i < n; ++i) {
    const TargetScene& scene = data.target_val[i];
    const auto p = predict_scene(res.net2d, res.net3d, scene);
    const auto pred = argmax_labels(p.logits_3d).labels;
    const auto& gt = scene.ground_truth(EvalAccess::key()).point_labels;
    const std::string name = scene_name(SplitId::target_val, i);
    write_ppm(dir / (name + ".ppm"), render_point_labels(pred, scene.pixel_of_point(), scene.height(),
                                                          scene.width(), palette));
    write_ppm(dir / (name + "_gt.ppm"), render_point_labels(gt, scene.pixel_of_point(), scene.height(),
                                                             scene.width(), palette));
    write_ppm(dir / (name + "_image.ppm"), scene.image());
  }
}

}  // namespace

RunArtifacts run_training(const Dataset& data, const NetParams* pretrained, const TrainConfig& config,
                          const std::optional<fs::path>& out, const FixedPseudoLabels* fixed_labels) {
  RunArtifacts art;
  art.config = config;
  art.result = train_comodal(data.source_train, data.target_train, data.num_classes(), pretrained,
                             config, fixed_labels);
  if (data.target_val.empty()) throw IoError("dataset has no target validation scenes");
  art.report = evaluate_triads(art.result.net2d, art.result.net3d, &art.result.teacher.params,
                               data.target_val);
  art.eval_csv = eval_report_csv(art.report, data.config.class_names());
  art.log_csv = train_log_csv(art.result.log);
  if (out) {
    fs::create_directories(*out);
    const std::uint64_t h = config.hash();
    write_file(*out / "config.txt", config.echo());
    save_snapshot(*out / "net2d.snap", art.result.net2d, h);
    save_snapshot(*out / "net3d.snap", art.result.net3d, h);
    save_snapshot(*out / "teacher.snap", art.result.teacher.params, h);
    write_file(*out / "train_log.csv", art.log_csv);
    write_file(*out / "fusion_stats.csv", fusion_stats_csv(art.result.fusion));
    write_file(*out / "eval_report.csv", art.eval_csv);
    if (fixed_labels) write_fixed_labels(*out / "pseudo_labels.txt", *fixed_labels);
    write_qualitative(data, art.result, config.qualitative_scenes, *out / "qualitative");
  }
  return art;
}

RunArtifacts self_train_pl(const Dataset& data, const fs::path& previous_run,
                           const NetParams* pretrained, const TrainConfig& config,
                           const std::optional<fs::path>& out) {
  for (const char* f : {"net2d.snap", "net3d.snap"}) {
    if (!fs::exists(previous_run / f)) {
      throw IoError("previous run is missing " + (previous_run / f).string());
    }
  }
  const NetParams net2d = load_snapshot(previous_run / "net2d.snap");
  const NetParams net3d = load_snapshot(previous_run / "net3d.snap");
  const FixedPseudoLabels labels = ensemble_pseudo_labels(net2d, net3d, data.target_train);
  TrainConfig cfg = config;
  cfg.pl_round = true;
  return run_training(data, pretrained, cfg, out, &labels);
}

std::string evaluate_run(const Dataset& data, const fs::path& run_dir) {
  for (const char* f : {"config.txt", "net2d.snap", "net3d.snap"}) {
    if (!fs::exists(run_dir / f)) throw IoError("run directory is missing " + (run_dir / f).string());
  }
  const TrainConfig config = load_config((run_dir / "config.txt").string());
  std::uint64_t h2 = 0;
  std::uint64_t h3 = 0;
  const NetParams net2d = load_snapshot(run_dir / "net2d.snap", &h2);
  const NetParams net3d = load_snapshot(run_dir / "net3d.snap", &h3);
  if (h2 != config.hash() || h3 != config.hash()) {
    throw IoError("snapshot config hash does not match " + (run_dir / "config.txt").string());
  }
  std::optional<NetParams> teacher;
  if (fs::exists(run_dir / "teacher.snap")) teacher = load_snapshot(run_dir / "teacher.snap");
  const TriadReport report =
      evaluate_triads(net2d, net3d, teacher ? &*teacher : nullptr, data.target_val);
  return eval_report_csv(report, data.config.class_names());
}

void write_fixed_labels(const fs::path& path, const FixedPseudoLabels& labels) {
  std::string out = std::to_string(labels.per_scene.size()) + "\n";
  for (const auto& scene : labels.per_scene) {
    out += std::to_string(scene.size());
    for (int l : scene) out += " " + std::to_string(l);
    out += "\n";
  }
  write_file(path, out);
}

FixedPseudoLabels read_fixed_labels(const fs::path& path) {
  std::istringstream in(read_file(path));
  FixedPseudoLabels out;
  std::size_t scenes = 0;
  if (!(in >> scenes)) throw IoError("malformed pseudo-label file " + path.string());
  out.per_scene.resize(scenes);
  for (auto& scene : out.per_scene) {
    std::size_t n = 0;
    if (!(in >> n)) throw IoError("malformed pseudo-label file " + path.string());
    scene.resize(n);
    for (auto& l : scene)
      if (!(in >> l)) throw IoError("malformed pseudo-label file " + path.string());
  }
  return out;
}

std::vector<AblationCell> ablation_grid(const std::string& name, const TrainConfig& base) {
  auto cell = [&](const char* grid, const char* row, auto&& edit) {
    TrainConfig c = base;
    c.pl_round = false;
    edit(c);
    return AblationCell{grid, row, c};
  };
  auto basic = [](TrainConfig& c) {
    c.use_hybrid_pl = true;
    c.use_icd = false;
    c.use_icg = false;
    c.icd_variant = IcdVariant::both;
    c.icd_pixel_select = PixelSelect::projection;
    c.use_teacher_labels = true;
    c.use_2d_labels_in_icg = true;
  };
  std::vector<AblationCell> out;
  const bool all = name == "all";
  if (all || name == "table2") {
    out.push_back(cell("table2", "online_pl", [&](TrainConfig& c) { basic(c); c.use_hybrid_pl = false; }));
    out.push_back(cell("table2", "basic", [&](TrainConfig& c) { basic(c); }));
    out.push_back(cell("table2", "basic+icd", [&](TrainConfig& c) { basic(c); c.use_icd = true; }));
    out.push_back(cell("table2", "basic+icd+icg", [&](TrainConfig& c) {
      basic(c);
      c.use_icd = true;
      c.use_icg = true;
    }));
  }
  if (all || name == "table3") {
    for (auto v : {IcdVariant::mix_only, IcdVariant::prototype_only, IcdVariant::both}) {
      out.push_back(cell("table3", to_string(v), [&](TrainConfig& c) {
        basic(c);
        c.use_icd = true;
        c.icd_variant = v;
      }));
    }
  }
  if (all || name == "table5") {
    const std::pair<const char*, std::pair<bool, bool>> rows[] = {
        {"2d_labels_only", {true, false}}, {"teacher_only", {false, true}}, {"both", {true, true}}};
    for (const auto& [label, flags] : rows) {
      out.push_back(cell("table5", label, [&](TrainConfig& c) {
        basic(c);
        c.use_icd = true;
        c.use_icg = true;
        c.use_2d_labels_in_icg = flags.first;
        c.use_teacher_labels = flags.second;
      }));
    }
  }
  if (all || name == "pixels") {
    for (auto v : {PixelSelect::all, PixelSelect::random, PixelSelect::projection}) {
      out.push_back(cell("pixels", to_string(v), [&](TrainConfig& c) {
        basic(c);
        c.use_icd = true;
        c.icd_pixel_select = v;
      }));
    }
  }
  if (all || name == "masks") {
    for (auto v : {MaskKind::class_level, MaskKind::region}) {
      out.push_back(cell("masks", to_string(v), [&](TrainConfig& c) {
        basic(c);
        c.use_icd = true;
        c.use_icg = true;
        c.mask_kind = v;
      }));
    }
  }
  if (out.empty()) {
    throw ConfigError("unknown ablation grid '" + name +
                      "' (expected table2, table3, table5, pixels, masks or all)");
  }
  return out;
}

std::vector<CellResult> run_ablation_matrix(const std::vector<AblationCell>& cells,
                                            const std::vector<std::uint64_t>& seeds,
                                            const DatasetProvider& data, int jobs,
                                            const std::optional<fs::path>& out) {
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");

  // Pretrained networks, one per seed, shared by every cell of that seed.
  std::map<std::uint64_t, NetParams> pretrained;
  std::map<std::uint64_t, std::string> pretrain_error;
  const bool need_pretrained =
      std::any_of(cells.begin(), cells.end(), [](const auto& c) { return c.config.use_hybrid_pl; });
  if (need_pretrained && !cells.empty()) {
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t k; (k = next++) < seeds.size();) {
        TrainConfig cfg = cells.front().config;
        cfg.seed = seeds[k];
        try {
          const Dataset& ds = data(seeds[k]);
          NetParams net = pretrain_2d(ds.source_train, ds.num_classes(), cfg);
          std::lock_guard lock(mu);
          pretrained.emplace(seeds[k], std::move(net));
        } catch (const std::exception& e) {
          std::lock_guard lock(mu);
          pretrain_error[seeds[k]] = e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < jobs; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
  }

  std::vector<CellResult> results(cells.size() * seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next++) < results.size();) {
      const AblationCell& cell = cells[k / seeds.size()];
      const std::uint64_t seed = seeds[k % seeds.size()];
      CellResult& r = results[k];
      r.grid = cell.grid;
      r.row = cell.row;
      r.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        if (pretrain_error.count(seed)) throw IoError("pretraining failed: " + pretrain_error.at(seed));
        TrainConfig cfg = cell.config;
        cfg.seed = seed;
        const NetParams* pre = cfg.use_hybrid_pl ? &pretrained.at(seed) : nullptr;
        std::optional<fs::path> dir;
        if (out) dir = *out / "cells" / (cell.grid + "_" + cell.row + "_seed" + std::to_string(seed));
        const RunArtifacts art = run_training(data(seed), pre, cfg, dir);
        r.miou_2d = miou(art.report.cm_2d).mean;
        r.miou_3d = miou(art.report.cm_3d).mean;
        r.miou_avg = miou(art.report.cm_avg).mean;
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return results;
}

std::string ablation_csv(const std::vector<CellResult>& results) {
  std::string out = "grid,row,seed,status,miou_2d,miou_3d,miou_avg\n";
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const CellResult*>> groups;
  for (const auto& r : results) {
    std::string status = r.ok ? "ok" : "failed: " + r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out += r.grid + "," + r.row + "," + std::to_string(r.seed) + "," + status + "," +
           (r.ok ? format_double(r.miou_2d) + "," + format_double(r.miou_3d) + "," + format_double(r.miou_avg)
                 : std::string("nan,nan,nan")) +
           "\n";
    const auto key = std::make_pair(r.grid, r.row);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  for (const auto& key : order) {
    double s2 = 0, s3 = 0, sa = 0;
    int n = 0;
    for (const auto* r : groups[key]) {
      if (!r->ok) continue;
      s2 += r->miou_2d;
      s3 += r->miou_3d;
      sa += r->miou_avg;
      ++n;
    }
    out += key.first + "," + key.second + ",mean," + std::to_string(n) + "_ok," +
           (n ? format_double(s2 / n) + "," + format_double(s3 / n) + "," + format_double(sa / n)
              : std::string("nan,nan,nan")) +
           "\n";
  }
  return out;
}

}  // namespace comodal
