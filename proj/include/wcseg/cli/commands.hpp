#pragma once

// Command implementations behind the `wcseg` executable. Every command writes run_config.json (its
// fully resolved parameters, minus the output directory) next to its outputs, and output bytes depend
// only on inputs and seed; wall-clock fields are written as 0 when timing is off.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wcseg/data/phantom.hpp"
#include "wcseg/data/resolution.hpp"
#include "wcseg/data/volume_io.hpp"
#include "wcseg/nn/checkpoint.hpp"
#include "wcseg/train/crossval.hpp"

namespace wcseg::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum class Scale { Desk, Full };

inline Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::Desk;
  if (s == "full") return Scale::Full;
  throw ValidationError("unknown scale '" + s + "' (expected desk|full)");
}
inline std::string scale_name(Scale s) { return s == Scale::Desk ? "desk" : "full"; }

/// Desk: base 8, 64x64 inputs, batch 4, one augmented copy per slice, 10 epochs.
/// Full: base 64, 256x256 inputs, batch 32, x10 augmentation, decaying rate restarted every 20 epochs.
inline ModelConfig scale_model(Scale s, const std::string& variant = "U-Net_AL") {
  return s == Scale::Desk ? config_for_variant(variant, 8, 64) : config_for_variant(variant, 64, 256);
}

inline TrainConfig scale_train(Scale s) {
  TrainConfig t;
  if (s == Scale::Full) {
    t.batch_size = 32;
    t.epochs = 100;
    t.augment_copies = 9;
    t.lr = {5e-3, Schedule::Exponential, 0.9, 20};
  }
  return t;
}

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) { wcseg::detail::write_file(p.string(), s); }

inline void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

inline void write_run_config(const fs::path& out, const std::string& command, Json params) {
  Json j;
  j["command"] = command;
  for (auto& [k, v] : params.items()) j[k] = v;
  write_json(out / "run_config.json", j);
}

inline std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---- phantom ----

struct PhantomOptions {
  std::size_t count = 20;
  std::array<std::size_t, 3> dims{16, 64, 64};
  std::array<double, 3> voxel_size_mm{0.5, 0.37, 0.37};
  PhantomConfig phantom;
  bool coil_repeat = false;  // adds a coil-B rescan (same anatomy, fresh noise) per subject
  std::size_t degrade = 0;   // > 1 adds an in-plane degraded copy per subject
  std::uint64_t seed = 0;    // phantom i uses seed + i
};

inline Json to_json(const PhantomOptions& o) {
  return {{"count", o.count},
          {"dims", o.dims},
          {"voxel_size_mm", o.voxel_size_mm},
          {"snr", o.phantom.snr},
          {"confounders", o.phantom.confounders},
          {"coil_repeat", o.coil_repeat},
          {"degrade", o.degrade},
          {"seed", o.seed}};
}

/// Writes volumes/ and manifest.json (relative paths) under `out`; returns the manifest.
inline std::vector<ManifestEntry> cmd_phantom(const PhantomOptions& o, const fs::path& out) {
  validate_phantom_dims(o.dims);
  o.phantom.validate();
  if (o.degrade == 1) throw ValidationError("phantom: degrade factor must be 0 (off) or >= 2");
  if (o.degrade > 1 && (o.dims[1] % o.degrade || o.dims[2] % o.degrade))
    throw ValidationError("phantom: in-plane dims must be divisible by the degrade factor");
  fs::create_directories(out / "volumes");
  std::vector<ManifestEntry> manifest;
  auto emit = [&](const Volume& img, const MaskVolume& mask, const ScanMeta& meta, const std::string& tag) {
    const auto stem = "volumes/" + meta.subject_id + "_" + tag;
    save_volume(img, (out / (stem + "_image.wcsv")).string());
    save_volume(mask, (out / (stem + "_mask.wcsv")).string());
    manifest.push_back({stem + "_image.wcsv", stem + "_mask.wcsv", meta});
  };
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::uint64_t s = o.seed + i;
    auto ph = generate_phantom(s, o.dims, o.voxel_size_mm, o.phantom);
    emit(ph.image, ph.mask, ph.meta, "A");
    if (o.coil_repeat) {
      auto cfg = o.phantom;
      cfg.noise_salt = 1;
      auto rescan = generate_phantom(s, o.dims, o.voxel_size_mm, cfg);
      rescan.meta.coil = "B";
      emit(rescan.image, rescan.mask, rescan.meta, "B");
    }
    if (o.degrade > 1) {
      const auto [img, mask] = degrade_resolution(ph.image, ph.mask, o.degrade);
      auto meta = ph.meta;
      meta.session += "_x" + std::to_string(o.degrade);
      emit(img, mask, meta, "A_x" + std::to_string(o.degrade));
    }
  }
  write_manifest((out / "manifest.json").string(), manifest);
  detail::write_run_config(out, "phantom", to_json(o));
  return manifest;
}

// ---- crossval ----

struct CrossvalOptions {
  std::string manifest;
  std::size_t k = 5;
  ModelConfig model = scale_model(Scale::Desk);
  TrainConfig train = scale_train(Scale::Desk);
  Scale scale = Scale::Desk;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // not recorded: results do not depend on it
};

inline Json to_json(const CrossvalOptions& o) {
  return {{"manifest", o.manifest}, {"k", o.k},           {"scale", scale_name(o.scale)}, {"seed", o.seed},
          {"model", to_json(o.model)}, {"train", to_json(o.train)}};
}

inline std::string folds_csv(const CrossvalResult& r) {
  std::string s = "fold,failed,test_volumes,mean_dsc3d,best_epoch,diagnostic\n";
  char buf[256];
  for (const auto& f : r.folds) {
    double mean = 0;
    for (const auto& it : f.items) mean += dsc_3d(it.pred, it.gt);
    const bool scored = !f.failed && !f.items.empty();
    std::snprintf(buf, sizeof buf, "%zu,%d,%zu,%s,%zu,", f.fold, f.failed ? 1 : 0, f.test_entries.size(),
                  scored ? wcseg::detail::num(mean / static_cast<double>(f.items.size())).c_str() : "",
                  f.history.best_epoch);
    std::string diag = f.diagnostic;
    for (auto& ch : diag)
      if (ch == ',' || ch == '\n') ch = ';';
    s += buf + diag + "\n";
  }
  return s;
}

/// fold_<i>/ holds checkpoint.wcsm, history.csv, fold.json and the fold's held-out report;
/// pooled/ holds the report over every non-failed fold; folds.csv summarizes.
inline CrossvalResult cmd_crossval(const CrossvalOptions& o, const fs::path& out) {
  o.model.validate();
  o.train.validate();
  const auto manifest = read_manifest(o.manifest);
  const auto ds = load_dataset(manifest);
  auto res = crossval(ds, o.k, o.model, o.train, o.seed, o.threads);
  fs::create_directories(out);
  for (auto& f : res.folds) {
    const auto dir = out / ("fold_" + std::to_string(f.fold));
    fs::create_directories(dir);
    auto names = [&](const std::vector<std::size_t>& idx) {
      Json a = Json::array();
      for (auto i : idx) a.push_back(volume_id(ds, i));
      return a;
    };
    Json info{{"fold", f.fold},
              {"failed", f.failed},
              {"diagnostic", f.diagnostic},
              {"fit", names(f.fit_entries)},
              {"validation", names(f.val_entries)},
              {"test", names(f.test_entries)},
              {"best_epoch", f.history.best_epoch},
              {"steps", f.history.steps},
              {"skipped_steps", f.history.skipped_steps}};
    detail::write_json(dir / "fold.json", info);
    detail::write_text(dir / "history.csv", f.history.to_csv());
    if (f.failed) continue;
    save_checkpoint(*f.model, (dir / "checkpoint.wcsm").string());
    if (!f.items.empty()) write_report(evaluate(f.items), dir / "report");
  }
  if (!res.pooled.volumes.empty()) write_report(res.pooled, out / "pooled");
  detail::write_text(out / "folds.csv", folds_csv(res));
  detail::write_run_config(out, "crossval", to_json(o));
  return res;
}

// ---- grid search ----

struct GridOptions {
  CrossvalOptions base;
  std::vector<double> learning_rates{1e-3, 3e-3};
  std::vector<double> noise_levels{0.35};
  std::vector<double> dropouts{0.0, 0.2};
  std::size_t max_folds = 1;  // 0 = all
};

inline Json to_json(const GridOptions& o) {
  auto j = to_json(o.base);
  j["learning_rates"] = o.learning_rates;
  j["noise_levels"] = o.noise_levels;
  j["dropouts"] = o.dropouts;
  j["max_folds"] = o.max_folds;
  return j;
}

inline std::string grid_csv(const std::vector<GridResult>& results) {
  std::string s = "rank,label,learning_rate,noise_level,dropout,mean_dsc3d,sd_dsc3d,volumes,failed_folds\n";
  char buf[256];
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::snprintf(buf, sizeof buf, "%zu,\"%s\",%.10g,%.10g,%.10g,%s,%s,%zu,%zu\n", i + 1, r.point.label.c_str(),
                  r.point.train.lr.learning_rate, r.point.model.noise_level, r.point.model.dropout_p,
                  wcseg::detail::num(r.mean_dsc3d).c_str(), wcseg::detail::num(r.sd_dsc3d).c_str(), r.dsc3d.size(),
                  r.failed_folds);
    s += buf;
  }
  return s;
}

inline std::vector<GridResult> cmd_gridsearch(const GridOptions& o, const fs::path& out) {
  const auto ds = load_dataset(read_manifest(o.base.manifest));
  const auto grid = expand_grid(o.base.model, o.base.train, o.learning_rates, o.noise_levels, o.dropouts);
  std::mt19937_64 split_rng(wcseg::detail::mix_seed(o.base.seed, 7));
  const auto splits = group_kfold(ds, o.base.k, split_rng);
  auto results = grid_search(grid, ds, splits, o.base.seed, o.max_folds, o.base.threads);
  fs::create_directories(out);
  detail::write_text(out / "grid.csv", grid_csv(results));
  detail::write_run_config(out, "gridsearch", to_json(o));
  return results;
}

// ---- segment ----

struct SegmentOptions {
  std::string checkpoint;
  std::string volume;    // a single image file, or
  std::string manifest;  // every image of a manifest
  bool record_timing = true;
};

inline Json to_json(const SegmentOptions& o) {
  return {{"checkpoint", o.checkpoint}, {"volume", o.volume}, {"manifest", o.manifest},
          {"record_timing", o.record_timing}};
}

struct SegmentTiming {
  std::string volume;
  std::size_t slices;
  double seconds;
};

/// Writes <stem>_pred.wcsv per input, timing.csv (seconds per volume) and, in manifest mode,
/// pred_manifest.json carrying the input metadata.
inline std::vector<SegmentTiming> cmd_segment(const SegmentOptions& o, const fs::path& out) {
  if (o.volume.empty() == o.manifest.empty())
    throw ValidationError("segment: give exactly one of a volume or a manifest");
  auto model = load_checkpoint<float>(o.checkpoint);
  std::vector<ManifestEntry> inputs;
  if (!o.volume.empty())
    inputs.push_back({o.volume, "", ScanMeta{"volume"}});
  else
    inputs = read_manifest(o.manifest);
  fs::create_directories(out);
  std::vector<SegmentTiming> timings;
  std::vector<ManifestEntry> preds;
  std::map<std::string, int> used;
  for (const auto& in : inputs) {
    if (in.image_path.empty()) throw ValidationError("segment: manifest entry without image_path");
    const auto image = load_volume(in.image_path);
    const auto t0 = std::chrono::steady_clock::now();
    const auto mask = predict_volume(model, image);
    const double secs = o.record_timing ? detail::seconds_since(t0) : 0.0;
    std::string stem = fs::path(in.image_path).stem().string();
    if (const int n = used[stem]++; n > 0) stem += "_" + std::to_string(n);
    const auto name = stem + "_pred.wcsv";
    save_volume(mask, (out / name).string());
    timings.push_back({in.image_path, image.dims[0], secs});
    preds.push_back({"", name, in.meta});
  }
  std::string csv = "volume,slices,seconds\n";
  char buf[64];
  for (const auto& t : timings) {
    std::snprintf(buf, sizeof buf, ",%zu,%.6f\n", t.slices, t.seconds);
    csv += detail::relative_to(t.volume, out) + buf;
  }
  detail::write_text(out / "timing.csv", csv);
  if (!o.manifest.empty()) write_manifest((out / "pred_manifest.json").string(), preds);
  detail::write_run_config(out, "segment", to_json(o));
  return timings;
}

// ---- evaluate ----

struct EvaluateOptions {
  std::string pred_manifest;
  std::string gt_manifest;
};

inline Json to_json(const EvaluateOptions& o) { return {{"pred", o.pred_manifest}, {"gt", o.gt_manifest}}; }

/// Pairs predictions with references by scan key (subject, hand, coil, field, session).
inline std::vector<EvalItem> pair_by_scan(const std::vector<ManifestEntry>& pred,
                                          const std::vector<ManifestEntry>& gt) {
  std::map<std::string, const ManifestEntry*> by_key;
  for (const auto& p : pred)
    if (!by_key.emplace(p.meta.scan_key(), &p).second)
      throw ValidationError("evaluate: duplicate prediction for scan " + p.meta.scan_key());
  std::vector<EvalItem> items;
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto key = gt[i].meta.scan_key();
    if (seen[key]++) throw ValidationError("evaluate: duplicate reference for scan " + key);
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ValidationError("evaluate: no prediction for scan " + key);
    char id[16];
    std::snprintf(id, sizeof id, "%03zu_", i);
    items.push_back({id + gt[i].meta.subject_id, gt[i].meta, load_mask(it->second->mask_path),
                     load_mask(gt[i].mask_path), -1});
    by_key.erase(it);
  }
  if (!by_key.empty()) throw ValidationError("evaluate: no reference for scan " + by_key.begin()->first);
  return items;
}

inline MetricsReport cmd_evaluate(const EvaluateOptions& o, const fs::path& out) {
  const auto items = pair_by_scan(read_manifest(o.pred_manifest), read_manifest(o.gt_manifest));
  if (items.empty()) throw ValidationError("evaluate: nothing to evaluate");
  auto report = evaluate(items);
  write_report(report, out);
  detail::write_run_config(out, "evaluate", to_json(o));
  return report;
}

}  // namespace wcseg::cli
