#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wcseg/data/kfold.hpp"
#include "wcseg/eval/report.hpp"
#include "wcseg/train/trainer.hpp"

namespace wcseg {

/// Stable identifier for dataset entry `i`.
inline std::string volume_id(const Dataset& ds, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu_", i);
  return buf + ds[i].meta.subject_id;
}

/// Worker cap: WCSEG_THREADS if set (>= 1), otherwise the hardware concurrency.
inline std::size_t thread_cap() {
  if (const char* env = std::getenv("WCSEG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ValidationError("WCSEG_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, Job&& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct FoldOutcome {
  std::size_t fold = 0;
  bool failed = false;
  std::string diagnostic;
  TrainHistory history;
  std::optional<Model<float>> model;
  std::vector<std::size_t> fit_entries, val_entries, test_entries;
  std::vector<EvalItem> items;  // held-out predictions
};

/// Trains on the split's training subjects (minus the validation tail) and predicts its test entries.
/// Divergence marks the fold failed; leakage aborts.
inline FoldOutcome run_fold(const Dataset& ds, const FoldSplit& split, const ModelConfig& model_cfg,
                            TrainConfig train_cfg, std::uint64_t seed) {
  const auto ids = subject_ids(ds);
  check_no_leakage(split, ids);
  FoldOutcome out;
  out.fold = split.fold;
  out.test_entries = split.test;
  std::tie(out.fit_entries, out.val_entries) = split_validation(split.train, ids, train_cfg.validation_fraction);
  if (out.fit_entries.empty()) throw ValidationError("fold " + std::to_string(split.fold) + ": no training entries");
  const auto size = static_cast<std::size_t>(model_cfg.input_size);
  std::mt19937_64 init_rng(detail::mix_seed(seed, 1000 + split.fold));
  train_cfg.seed = detail::mix_seed(seed, 2000 + split.fold);
  try {
    auto result = train(build_model<float>(model_cfg, init_rng), prepare_samples(ds, out.fit_entries, size),
                        prepare_samples(ds, out.val_entries, size), train_cfg);
    out.history = std::move(result.history);
    out.model.emplace(std::move(result.model));
  } catch (const DivergenceError& e) {
    out.failed = true;
    out.diagnostic = e.what();
    return out;
  }
  for (auto i : split.test)
    out.items.push_back({volume_id(ds, i), ds[i].meta, predict_volume(*out.model, ds[i].image), ds[i].mask,
                         static_cast<int>(split.fold)});
  return out;
}

struct CrossvalResult {
  std::vector<FoldSplit> splits;
  std::vector<FoldOutcome> folds;
  MetricsReport pooled;  // over every non-failed fold's test volumes
};

inline CrossvalResult crossval(const Dataset& ds, std::size_t k, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg, std::uint64_t seed, std::size_t threads = 1) {
  model_cfg.validate();
  train_cfg.validate();
  CrossvalResult res;
  std::mt19937_64 split_rng(detail::mix_seed(seed, 7));
  res.splits = group_kfold(ds, k, split_rng);
  res.folds.resize(k);
  parallel_for(k, threads,
               [&](std::size_t f) { res.folds[f] = run_fold(ds, res.splits[f], model_cfg, train_cfg, seed); });
  std::vector<EvalItem> items;
  for (const auto& f : res.folds) items.insert(items.end(), f.items.begin(), f.items.end());
  std::sort(items.begin(), items.end(), [](const EvalItem& a, const EvalItem& b) { return a.volume_id < b.volume_id; });
  res.pooled = evaluate(items);
  return res;
}

// ---- grid search ----

struct GridPoint {
  ModelConfig model;
  TrainConfig train;
  std::string label;
};

struct GridResult {
  GridPoint point;
  double mean_dsc3d = 0;
  double sd_dsc3d = 0;  // NaN with fewer than two test volumes
  std::vector<double> dsc3d;  // per held-out volume
  std::size_t failed_folds = 0;
};

inline std::string grid_label(const ModelConfig& m, const TrainConfig& t) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "lr=%g,noise=%g,dropout=%g,epochs=%zu", t.lr.learning_rate, m.noise_level,
                m.dropout_p, t.epochs);
  return buf;
}

/// Cartesian product over learning rate, input noise and dropout.
inline std::vector<GridPoint> expand_grid(const ModelConfig& model, const TrainConfig& train,
                                          const std::vector<double>& learning_rates,
                                          const std::vector<double>& noise_levels,
                                          const std::vector<double>& dropouts) {
  std::vector<GridPoint> out;
  for (double lr : learning_rates)
    for (double nz : noise_levels)
      for (double dp : dropouts) {
        GridPoint p{model, train, ""};
        p.train.lr.learning_rate = lr;
        p.model.noise_level = nz;
        p.model.dropout_p = dp;
        p.model.validate();
        p.train.validate();
        p.label = grid_label(p.model, p.train);
        out.push_back(std::move(p));
      }
  return out;
}

/// Every point is trained on the same splits with the same seeds, then ranked by mean held-out 3D DSC
/// (stable: ties keep grid order). `max_folds` limits how many splits are used (0 = all).
inline std::vector<GridResult> grid_search(const std::vector<GridPoint>& grid, const Dataset& ds,
                                           const std::vector<FoldSplit>& splits, std::uint64_t seed,
                                           std::size_t max_folds = 0, std::size_t threads = 1) {
  if (grid.empty()) throw ValidationError("grid_search: empty grid");
  const std::size_t nf = max_folds == 0 ? splits.size() : std::min(max_folds, splits.size());
  if (nf == 0) throw ValidationError("grid_search: no folds");
  std::vector<GridResult> results(grid.size());
  std::vector<FoldOutcome> runs(grid.size() * nf);
  parallel_for(runs.size(), threads, [&](std::size_t job) {
    const auto& p = grid[job / nf];
    runs[job] = run_fold(ds, splits[job % nf], p.model, p.train, seed);
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    auto& r = results[g];
    r.point = grid[g];
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& run = runs[g * nf + f];
      if (run.failed) {
        ++r.failed_folds;
        for (std::size_t i = 0; i < run.test_entries.size(); ++i) r.dsc3d.push_back(0.0);
        continue;
      }
      for (const auto& it : run.items) r.dsc3d.push_back(dsc_3d(it.pred, it.gt));
    }
    r.mean_dsc3d = mean_of(r.dsc3d);
    r.sd_dsc3d = r.dsc3d.size() >= 2 ? sample_sd(r.dsc3d) : std::numeric_limits<double>::quiet_NaN();
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const GridResult& a, const GridResult& b) { return a.mean_dsc3d > b.mean_dsc3d; });
  return results;
}

}  // namespace wcseg
