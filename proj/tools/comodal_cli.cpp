#include "comodal/config.hpp"
#include "comodal/dataset_io.hpp"
#include "comodal/errors.hpp"
#include "comodal/eval.hpp"
#include "comodal/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace comodal;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string mask_kind;
  std::string pixel_select;
  std::string area_range;
  std::vector<std::string> sets;
  std::string pretrained;
  std::string run;
  std::string grid = "table2";
  std::string seeds = "0";
};

/// Prints a single-line error and returns the exit code for it.
int fail(const char* kind, const std::string& message, int code) {
  std::string line = message;
  for (char& c : line)
    if (c == '\n') c = ' ';
  std::cerr << "error: " << kind << ": " << line << "\n";
  return code;
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig c = o.config.empty() ? TrainConfig{} : load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.mask_kind.empty()) c.mask_kind = parse_mask_kind(o.mask_kind);
  if (!o.pixel_select.empty()) c.icd_pixel_select = parse_pixel_select(o.pixel_select);
  if (!o.area_range.empty()) {
    const auto comma = o.area_range.find(',');
    if (comma == std::string::npos) throw ConfigError("--area-range expects lo,hi");
    c.mask_area.lo = parse_double(o.area_range.substr(0, comma), "--area-range lo");
    c.mask_area.hi = parse_double(o.area_range.substr(comma + 1), "--area-range hi");
  }
  c.validate();
  return c;
}

Dataset load_data(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  return read_dataset(o.data);
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

/// The pretrained 2D network: loaded from --pretrained, or trained here and
/// saved next to the run when the configuration needs one.
std::optional<NetParams> pretrained_for(const Options& o, const TrainConfig& c, const Dataset& data,
                                        const std::optional<fs::path>& out) {
  if (!o.pretrained.empty()) return load_snapshot(o.pretrained);
  if (!c.use_hybrid_pl) return std::nullopt;
  NetParams net = pretrain_2d(data.source_train, data.num_classes(), c);
  if (out) {
    fs::create_directories(*out);
    save_snapshot(*out / "pretrained.snap", net, c.hash());
  }
  return net;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const long long v = parse_int(item, "--seeds");
    if (v < 0) throw ConfigError("--seeds: negative seed");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

void print_summary(const RunArtifacts& art) {
  std::cout << "miou_2d=" << format_double(miou(art.report.cm_2d).mean)
            << " miou_3d=" << format_double(miou(art.report.cm_3d).mean)
            << " miou_avg=" << format_double(miou(art.report.cm_avg).mean) << "\n";
}

int cmd_gen_data(const Options& o) {
  const TrainConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  write_dataset(generate_dataset(c.scene_config(), c.seed), out);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  const TrainConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  const Dataset data = load_data(o);
  const NetParams net = pretrain_2d(data.source_train, data.num_classes(), c);
  fs::create_directories(out);
  save_snapshot(out / "pretrained.snap", net, c.hash());
  write_file(out / "config.txt", c.echo());
  const ConfusionMatrix cm = evaluate_2d_pixels(net, data.source_val);
  std::cout << "source_val_miou=" << format_double(miou(cm).mean) << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const TrainConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  const Dataset data = load_data(o);
  const auto pre = pretrained_for(o, c, data, out);
  print_summary(run_training(data, pre ? &*pre : nullptr, c, out));
  return 0;
}

int cmd_pl_round(const Options& o) {
  const TrainConfig c = resolve_config(o);
  const fs::path out = require_out(o);
  if (o.run.empty()) throw ConfigError("--run is required");
  const Dataset data = load_data(o);
  const auto pre = pretrained_for(o, c, data, out);
  print_summary(self_train_pl(data, o.run, pre ? &*pre : nullptr, c, out));
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.run.empty()) throw ConfigError("--run is required");
  const Dataset data = load_data(o);
  const std::string csv = evaluate_run(data, o.run);
  if (!o.out.empty()) write_file(o.out, csv);
  std::cout << csv;
  return 0;
}

int cmd_ablate(const Options& o) {
  const TrainConfig base = resolve_config(o);
  const auto seeds = parse_seeds(o.seeds);
  const auto cells = ablation_grid(o.grid, base);
  std::optional<fs::path> out;
  if (!o.out.empty()) out = fs::path(o.out);

  std::optional<Dataset> fixed;
  if (!o.data.empty()) fixed = read_dataset(o.data);
  std::mutex mu;
  std::map<std::uint64_t, Dataset> generated;
  const DatasetProvider provider = [&](std::uint64_t seed) -> const Dataset& {
    if (fixed) return *fixed;
    std::lock_guard lock(mu);
    auto it = generated.find(seed);
    if (it == generated.end()) it = generated.emplace(seed, generate_dataset(base.scene_config(), seed)).first;
    return it->second;
  };
  const auto results = run_ablation_matrix(cells, seeds, provider, o.jobs, out);
  const std::string csv = ablation_csv(results);
  if (out) {
    fs::create_directories(*out);
    write_file(*out / "ablation.csv", csv);
  }
  std::cout << csv;
  for (const auto& r : results)
    if (!r.ok) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal domain adaptation on synthetic image and LiDAR scenes"};
  app.require_subcommand(1, 1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file (key = value lines)");
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--set", o.sets, "Config override key=value (repeatable)");
    sub->add_option("--mask-kind", o.mask_kind, "Mixing mask kind")->check(CLI::IsMember({"region", "class"}));
    sub->add_option("--icd-pixel-select", o.pixel_select, "Source pixels aligned to prototypes")
        ->check(CLI::IsMember({"projection", "random", "all"}));
    sub->add_option("--area-range", o.area_range, "Region mask area fraction range lo,hi");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  common(gen);
  gen->add_option("--out", o.out, "Dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Train the source-only 2D network");
  common(pre);
  pre->add_option("--data", o.data, "Dataset directory")->required();
  pre->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Joint 2D/3D adaptation run");
  common(train);
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--pretrained", o.pretrained, "Pretrained 2D snapshot");

  auto* pl = app.add_subcommand("pl-round", "Self-training round on a previous run's labels");
  common(pl);
  pl->add_option("--data", o.data, "Dataset directory")->required();
  pl->add_option("--run", o.run, "Previous run directory")->required();
  pl->add_option("--out", o.out, "Run directory")->required();
  pl->add_option("--pretrained", o.pretrained, "Pretrained 2D snapshot");

  auto* ev = app.add_subcommand("eval", "Re-evaluate a run directory");
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--run", o.run, "Run directory")->required();
  ev->add_option("--out", o.out, "Write the report to this file");

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid over seeds");
  common(ab);
  ab->add_option("--data", o.data, "Dataset directory (default: generate one per seed)");
  ab->add_option("--out", o.out, "Output directory");
  ab->add_option("--grid", o.grid, "table2, table3, table5, pixels, masks or all");
  ab->add_option("--seeds", o.seeds, "Comma-separated seeds");
  ab->add_option("--jobs", o.jobs, "Concurrent cells")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (pre->parsed()) return cmd_pretrain(o);
    if (train->parsed()) return cmd_train(o);
    if (pl->parsed()) return cmd_pl_round(o);
    if (ev->parsed()) return cmd_eval(o);
    return cmd_ablate(o);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 3);
  }
}
