// wcseg: phantom generation, cross-validated training, segmentation and evaluation.
//
// Settings resolve as: scale preset < --config file < explicit flags. Exit codes: 0 success,
// 2 invalid input or configuration, 3 runtime failure.

#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wcseg/cli/commands.hpp"

namespace {

using namespace wcseg;
using namespace wcseg::cli;
using Json = nlohmann::json;

struct Common {
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scale, timing;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON file with command settings")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global RNG seed (default 0)");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--scale", c.scale, "preset: desk (default) or full");
  cmd->add_option("--timing", c.timing, "on (default) or off; off writes 0 for wall-clock fields");
}

/// The config file; every top-level key must be one the command understands.
Json load_config(const Common& c, const std::set<std::string>& allowed) {
  if (c.config_path.empty()) return Json::object();
  Json j;
  try {
    j = Json::parse(wcseg::detail::read_file(c.config_path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("config '" + c.config_path + "': " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config '" + c.config_path + "': expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (key != "seed" && key != "scale" && key != "timing" && !allowed.count(key))
      throw ValidationError("config '" + c.config_path + "': unknown key '" + key + "'");
  return j;
}

template <typename T>
T pick(const std::optional<T>& flag, const Json& cfg, const char* key, T fallback) {
  if (flag) return *flag;
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return fallback;
}

std::uint64_t resolve_seed(const Common& c, const Json& cfg) { return pick<std::uint64_t>(c.seed, cfg, "seed", 0); }

Scale resolve_scale(const Common& c, const Json& cfg) {
  return parse_scale(pick<std::string>(c.scale, cfg, "scale", "desk"));
}

bool resolve_timing(const Common& c, const Json& cfg) {
  const auto t = pick<std::string>(c.timing, cfg, "timing", "on");
  if (t != "on" && t != "off") throw ValidationError("--timing must be on or off");
  return t == "on";
}

template <typename T, std::size_t N>
std::array<T, N> to_array(const std::vector<T>& v, const char* what) {
  if (v.size() != N) throw ValidationError(std::string(what) + ": expected " + std::to_string(N) + " values");
  std::array<T, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

// ---- per-command flag sets ----

struct PhantomFlags {
  std::optional<std::size_t> count, degrade;
  std::vector<std::size_t> dims;
  std::vector<double> voxel;
  std::optional<double> snr;
  bool no_confounders = false, coil_repeat = false;
};

struct TrainFlags {
  std::optional<std::string> manifest, variant, schedule;
  std::optional<std::size_t> k, epochs, batch_size, augment_copies;
  std::optional<int> base_channels, input_size;
  std::optional<double> lr, dropout, noise;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--manifest", f.manifest, "dataset manifest");
  cmd->add_option("--k", f.k, "number of folds (default 5)");
  cmd->add_option("--variant", f.variant, "U-Net, U-Net_AL (default), Tr_U-Net or Tr_U-Net_AL");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--schedule", f.schedule, "constant or exponential");
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--augment-copies", f.augment_copies, "augmented copies added per training slice");
  cmd->add_option("--base-channels", f.base_channels);
  cmd->add_option("--input-size", f.input_size, "network input extent (power of two)");
  cmd->add_option("--dropout", f.dropout);
  cmd->add_option("--noise", f.noise, "input Gaussian-noise level");
}

CrossvalOptions resolve_crossval(const Common& c, const TrainFlags& f, const Json& cfg) {
  CrossvalOptions o;
  o.scale = resolve_scale(c, cfg);
  o.seed = resolve_seed(c, cfg);
  o.manifest = pick<std::string>(f.manifest, cfg, "manifest", "");
  if (o.manifest.empty()) throw ValidationError("a --manifest is required");
  o.k = pick<std::size_t>(f.k, cfg, "k", 5);
  o.model = scale_model(o.scale, pick<std::string>(std::nullopt, cfg, "variant", "U-Net_AL"));
  o.train = scale_train(o.scale);
  if (cfg.contains("model")) o.model = model_config_from_json(cfg.at("model"), o.model);
  if (cfg.contains("train")) o.train = train_config_from_json(cfg.at("train"), o.train);
  if (f.variant) {
    const auto v = config_for_variant(*f.variant);
    o.model.depth = v.depth;
    o.model.attention = v.attention;
  }
  if (f.base_channels) o.model.base_channels = *f.base_channels;
  if (f.input_size) o.model.input_size = *f.input_size;
  if (f.dropout) o.model.dropout_p = *f.dropout;
  if (f.noise) o.model.noise_level = *f.noise;
  if (f.epochs) o.train.epochs = *f.epochs;
  if (f.lr) o.train.lr.learning_rate = *f.lr;
  if (f.schedule) o.train.lr.schedule = parse_schedule(*f.schedule);
  if (f.batch_size) o.train.batch_size = *f.batch_size;
  if (f.augment_copies) o.train.augment_copies = *f.augment_copies;
  if (c.timing || cfg.contains("timing")) o.train.record_timing = resolve_timing(c, cfg);
  o.threads = thread_cap();
  o.model.validate();
  o.train.validate();
  return o;
}

void print_report_line(const MetricsReport& r) {
  const auto pct = [](const Computed<double>& v) { return v.value ? *v.value : std::nan(""); };
  std::printf("volumes=%zu mean_dsc3d=%.4f mean_dsc2d=%.4f precision=%.4f mean_delta_v_pct=%.3f\n",
              r.volumes.size(), r.mean_dsc3d, r.mean_dsc2d, pct(r.precision), pct(r.mean_delta_v));
}

int run(int argc, char** argv) {
  CLI::App app{"wcseg: wrist-cartilage segmentation toolkit"};
  app.require_subcommand(1);

  Common pc, cc, gc, sc, ec;
  PhantomFlags pf;
  auto* phantom = app.add_subcommand("phantom", "generate synthetic phantom scans and a manifest");
  add_common(phantom, pc);
  phantom->add_option("--count", pf.count, "number of subjects (default 20)");
  phantom->add_option("--dims", pf.dims, "slices,rows,cols (default 16,64,64)")->delimiter(',')->expected(3);
  phantom->add_option("--voxel", pf.voxel, "voxel size mm (default 0.5,0.37,0.37)")->delimiter(',')->expected(3);
  phantom->add_option("--snr", pf.snr, "cartilage intensity over noise sigma (default 4)");
  phantom->add_flag("--no-confounders", pf.no_confounders, "omit skin and vessel structures");
  phantom->add_flag("--coil-repeat", pf.coil_repeat, "add a coil-B rescan per subject");
  phantom->add_option("--degrade", pf.degrade, "add an in-plane degraded copy by this factor");

  TrainFlags cf, gf;
  auto* cv = app.add_subcommand("crossval", "subject-grouped k-fold training and held-out evaluation");
  add_common(cv, cc);
  add_train_flags(cv, cf);

  std::optional<std::vector<double>> lrs, noises, dropouts;
  std::optional<std::size_t> max_folds;
  auto* grid = app.add_subcommand("gridsearch", "rank (lr, noise, dropout) combinations by held-out 3D DSC");
  add_common(grid, gc);
  add_train_flags(grid, gf);
  grid->add_option("--lrs", lrs, "learning rates")->delimiter(',');
  grid->add_option("--noises", noises, "noise levels")->delimiter(',');
  grid->add_option("--dropouts", dropouts, "dropout rates")->delimiter(',');
  grid->add_option("--max-folds", max_folds, "folds evaluated per point (default 1, 0 = all)");

  std::optional<std::string> checkpoint, volume, seg_manifest;
  auto* seg = app.add_subcommand("segment", "predict masks with a trained checkpoint");
  add_common(seg, sc);
  seg->add_option("--checkpoint", checkpoint, "model checkpoint (.wcsm)");
  seg->add_option("--volume", volume, "image volume (.wcsv)");
  seg->add_option("--manifest", seg_manifest, "manifest of image volumes");

  std::optional<std::string> pred, gt;
  auto* ev = app.add_subcommand("evaluate", "metrics and agreement statistics for predicted masks");
  add_common(ev, ec);
  ev->add_option("--pred", pred, "prediction manifest");
  ev->add_option("--gt", gt, "reference manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*phantom) {
    const auto cfg = load_config(pc, {"count", "dims", "voxel_size_mm", "snr", "confounders", "coil_repeat",
                                      "degrade"});
    resolve_scale(pc, cfg);  // phantoms are scale-independent; still reject bad values
    resolve_timing(pc, cfg);
    PhantomOptions o;
    o.seed = resolve_seed(pc, cfg);
    o.count = pick(pf.count, cfg, "count", o.count);
    o.degrade = pick(pf.degrade, cfg, "degrade", o.degrade);
    if (!pf.dims.empty()) o.dims = to_array<std::size_t, 3>(pf.dims, "--dims");
    else if (cfg.contains("dims")) o.dims = to_array<std::size_t, 3>(cfg.at("dims").get<std::vector<std::size_t>>(), "dims");
    if (!pf.voxel.empty()) o.voxel_size_mm = to_array<double, 3>(pf.voxel, "--voxel");
    else if (cfg.contains("voxel_size_mm"))
      o.voxel_size_mm = to_array<double, 3>(cfg.at("voxel_size_mm").get<std::vector<double>>(), "voxel_size_mm");
    o.phantom.snr = pick(pf.snr, cfg, "snr", o.phantom.snr);
    o.phantom.confounders = pf.no_confounders ? false : cfg.value("confounders", true);
    o.coil_repeat = pf.coil_repeat || cfg.value("coil_repeat", false);
    const auto manifest = cmd_phantom(o, pc.out);
    std::printf("wrote %zu scans (%zu subjects) to %s\n", manifest.size(), o.count, pc.out.c_str());
    return 0;
  }

  if (*cv) {
    const auto cfg = load_config(cc, {"manifest", "k", "variant", "model", "train"});
    const auto o = resolve_crossval(cc, cf, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = cmd_crossval(o, cc.out);
    for (const auto& f : res.folds)
      std::printf("fold %zu: %s, %zu test volumes\n", f.fold, f.failed ? ("FAILED: " + f.diagnostic).c_str() : "ok",
                  f.test_entries.size());
    std::printf("pooled: ");
    print_report_line(res.pooled);
    if (o.train.record_timing) std::printf("runtime_s=%.1f\n", cli::detail::seconds_since(t0));
    return 0;
  }

  if (*grid) {
    const auto cfg = load_config(gc, {"manifest", "k", "variant", "model", "train", "learning_rates", "noise_levels",
                                      "dropouts", "max_folds"});
    GridOptions o;
    o.base = resolve_crossval(gc, gf, cfg);
    o.learning_rates = pick(lrs, cfg, "learning_rates", o.learning_rates);
    o.noise_levels = pick(noises, cfg, "noise_levels", o.noise_levels);
    o.dropouts = pick(dropouts, cfg, "dropouts", o.dropouts);
    o.max_folds = pick(max_folds, cfg, "max_folds", o.max_folds);
    const auto results = cmd_gridsearch(o, gc.out);
    for (std::size_t i = 0; i < results.size(); ++i)
      std::printf("%zu. %s mean_dsc3d=%.4f sd=%.4f\n", i + 1, results[i].point.label.c_str(), results[i].mean_dsc3d,
                  results[i].sd_dsc3d);
    return 0;
  }

  if (*seg) {
    const auto cfg = load_config(sc, {"checkpoint", "volume", "manifest"});
    SegmentOptions o;
    o.checkpoint = pick<std::string>(checkpoint, cfg, "checkpoint", "");
    o.volume = pick<std::string>(volume, cfg, "volume", "");
    o.manifest = pick<std::string>(seg_manifest, cfg, "manifest", "");
    o.record_timing = resolve_timing(sc, cfg);
    if (o.checkpoint.empty()) throw ValidationError("a --checkpoint is required");
    for (const auto& t : cmd_segment(o, sc.out))
      std::printf("timing: %s slices=%zu seconds_per_volume=%.3f\n", t.volume.c_str(), t.slices, t.seconds);
    return 0;
  }

  if (*ev) {
    const auto cfg = load_config(ec, {"pred", "gt"});
    EvaluateOptions o;
    o.pred_manifest = pick<std::string>(pred, cfg, "pred", "");
    o.gt_manifest = pick<std::string>(gt, cfg, "gt", "");
    if (o.pred_manifest.empty() || o.gt_manifest.empty()) throw ValidationError("--pred and --gt are required");
    print_report_line(cmd_evaluate(o, ec.out));
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const wcseg::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: configuration: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
