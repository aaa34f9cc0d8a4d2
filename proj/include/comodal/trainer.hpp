#pragma once

#include "comodal/config.hpp"
#include "comodal/eval.hpp"
#include "comodal/mixing.hpp"
#include "comodal/nets.hpp"
#include "comodal/scene_synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace comodal {

/// Random choices of one training iteration. Each kind of choice comes from
/// its own stream, so toggling a loss term never changes which scenes,
/// pixels or points the other terms see.
struct IterationDraw {
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  /// Per source slot, the supervised pixels (sorted).
  std::vector<std::vector<PixelIndex>> source_pixels;
  /// Per target slot, indices of the points used this iteration (sorted).
  std::vector<std::vector<int>> target_points;
  /// Per slot, the CutMix mask pasted from source slot b onto target slot b.
  std::vector<MixMask> masks;
  /// Per slot, partner slot for point cloud mixing (empty unless ICG is on).
  std::vector<int> partners;
  /// Per slot, seed for the `random` source-pixel selection.
  std::vector<std::uint64_t> select_seeds;
};

/// Deterministic draw for iteration `iter` of a run with `config.seed`.
IterationDraw draw_iteration(const TrainConfig& config, long iter,
                             std::span<const SourceSample> source,
                             std::span<const TargetScene> target);

/// `count` distinct values from [0, n), sorted; all of them when count is 0
/// or at least n.
std::vector<int> sample_subset(int n, int count, Rng& rng);

/// Trains a fresh 2D network on labeled source images with cross-entropy
/// only. The result is rounded to float32 so it equals its snapshot.
/// Throws IoError when `source` is empty.
NetParams pretrain_2d(std::span<const SourceSample> source, int classes, const TrainConfig& config,
                      std::vector<double>* losses = nullptr);

struct InitialNets {
  NetParams net2d;
  NetParams net3d;
};

/// Starting weights of `train_comodal` for `config.seed`.
InitialNets initial_networks(const TrainConfig& config, int classes);

struct LogRow {
  long iteration = 0;
  double lr = 0.0;
  double loss_2d_s = 0.0;
  double loss_2d_t = 0.0;
  double loss_2d_m = 0.0;
  double loss_3d_t = 0.0;
  double loss_3d_m = 0.0;
  double loss_pl_2d = 0.0;
  double loss_pl_3d = 0.0;
  int count_2d_m = 0;
  int count_3d_m = 0;
  double total_2d = 0.0;
  double total_3d = 0.0;
  /// Share of pseudo-labels that came from the online 2D network.
  double online_fraction = 0.0;
};

struct FusionRow {
  int epoch = 0;
  long points = 0;
  double online_fraction = 0.0;
  double pretrained_fraction = 0.0;
};

/// Frozen per-point labels for every target training scene.
struct FixedPseudoLabels {
  std::vector<std::vector<int>> per_scene;
};

struct TrainResult {
  NetParams net2d;
  NetParams net3d;
  TeacherState teacher;
  std::vector<LogRow> log;
  std::vector<FusionRow> fusion;
};

/// Joint training of the 2D and 3D networks on labeled source images and
/// unlabeled target scenes. `pretrained` is required when hybrid
/// pseudo-labels are on; `fixed_labels` adds the self-training term.
/// Final parameters are rounded to float32. Throws ConfigError before any
/// work when the configuration is inconsistent.
TrainResult train_comodal(std::span<const SourceSample> source, std::span<const TargetScene> target,
                          int classes, const NetParams* pretrained, const TrainConfig& config,
                          const FixedPseudoLabels* fixed_labels = nullptr);

/// Argmax of the mean of sampled-2D and 3D softmax outputs, per point of
/// every scene.
FixedPseudoLabels ensemble_pseudo_labels(const NetParams& net2d, const NetParams& net3d,
                                         std::span<const TargetScene> scenes);

std::string train_log_csv(const std::vector<LogRow>& log);
std::string fusion_stats_csv(const std::vector<FusionRow>& rows);

struct RunArtifacts {
  TrainConfig config;
  TrainResult result;
  TriadReport report;
  std::string eval_csv;
  std::string log_csv;
};

/// Trains, evaluates on the target validation split and, when `out` is set,
/// writes config echo, snapshots, logs, eval report and qualitative images
/// under it.
RunArtifacts run_training(const Dataset& data, const NetParams* pretrained, const TrainConfig& config,
                          const std::optional<std::filesystem::path>& out,
                          const FixedPseudoLabels* fixed_labels = nullptr);

/// Reads a previous run directory, labels the target training split with its
/// ensemble and retrains from scratch with those labels. Throws IoError
/// when the previous run's snapshots are missing.
RunArtifacts self_train_pl(const Dataset& data, const std::filesystem::path& previous_run,
                           const NetParams* pretrained, const TrainConfig& config,
                           const std::optional<std::filesystem::path>& out);

/// Re-evaluates the snapshots stored in a run directory.
std::string evaluate_run(const Dataset& data, const std::filesystem::path& run_dir);

void write_fixed_labels(const std::filesystem::path& path, const FixedPseudoLabels& labels);
FixedPseudoLabels read_fixed_labels(const std::filesystem::path& path);

struct AblationCell {
  std::string grid;
  std::string row;
  TrainConfig config;
};

/// Grids: table2, table3, table5, pixels, masks, or all (their union).
/// Throws ConfigError on an unknown name.
std::vector<AblationCell> ablation_grid(const std::string& name, const TrainConfig& base);

struct CellResult {
  std::string grid;
  std::string row;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double miou_2d = 0.0;
  double miou_3d = 0.0;
  double miou_avg = 0.0;
  double seconds = 0.0;
};

using DatasetProvider = std::function<const Dataset&(std::uint64_t seed)>;

/// Runs every cell for every seed (cell configs get that seed). Pretrained
/// networks are computed once per seed and shared. Failed cells are recorded
/// and the matrix continues. Up to `jobs` cells run concurrently; results
/// come back in (cell, seed) order regardless.
std::vector<CellResult> run_ablation_matrix(const std::vector<AblationCell>& cells,
                                            const std::vector<std::uint64_t>& seeds,
                                            const DatasetProvider& data, int jobs,
                                            const std::optional<std::filesystem::path>& out);

/// One line per (cell, seed), then one mean line per cell.
std::string ablation_csv(const std::vector<CellResult>& results);

}  // namespace comodal
