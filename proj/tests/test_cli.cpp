#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sys/wait.h>

#include "wcseg/cli/commands.hpp"

using namespace wcseg;
using namespace wcseg::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("wcseg_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Relative path -> bytes for every regular file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = wcseg::detail::read_file(e.path().string());
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(WCSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

CrossvalOptions tiny_crossval(const std::string& manifest, std::size_t k) {
  CrossvalOptions o;
  o.manifest = manifest;
  o.k = k;
  o.model = config_for_variant("U-Net_AL", 4, 32);
  o.train.epochs = 1;
  o.train.augment_copies = 0;
  o.train.batch_size = 8;
  o.train.record_timing = false;
  o.seed = 5;
  return o;
}

PhantomOptions small_phantoms(std::size_t count) {
  PhantomOptions o;
  o.count = count;
  o.dims = {16, 32, 32};
  o.seed = 40;
  return o;
}

}  // namespace

TEST(CmdPhantom, RerunIsByteIdentical) {
  const auto a = scratch("ph_a"), b = scratch("ph_b");
  auto o = small_phantoms(4);
  o.coil_repeat = true;
  o.degrade = 2;
  cmd_phantom(o, a);
  cmd_phantom(o, b);
  const auto sa = snapshot(a), sb = snapshot(b);
  EXPECT_EQ(sa.size(), 4u * 3u * 2u + 2u);  // image+mask per scan, manifest, run config
  EXPECT_EQ(sa, sb);
}

TEST(CmdPhantom, ManifestIsRelativeAndLoadable) {
  const auto dir = scratch("ph_rel");
  auto o = small_phantoms(3);
  o.coil_repeat = true;
  const auto m = cmd_phantom(o, dir);
  ASSERT_EQ(m.size(), 6u);
  for (const auto& e : m) EXPECT_FALSE(fs::path(e.image_path).is_absolute());
  const auto moved = scratch("ph_moved");
  fs::copy(dir, moved, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const auto ds = load_dataset(read_manifest((moved / "manifest.json").string()));
  EXPECT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds[1].meta.coil, "B");
  EXPECT_EQ(ds[0].mask, ds[1].mask);     // same anatomy
  EXPECT_NE(ds[0].image, ds[1].image);  // fresh noise
}

TEST(CmdPhantom, CountZeroGivesEmptyManifest) {
  const auto dir = scratch("ph_empty");
  EXPECT_TRUE(cmd_phantom(small_phantoms(0), dir).empty());
  EXPECT_EQ(wcseg::detail::read_file((dir / "manifest.json").string()), "[]\n");
  EXPECT_TRUE(fs::exists(dir / "run_config.json"));
}

TEST(CmdPhantom, RejectsTinyDimsAndBadDegrade) {
  auto o = small_phantoms(1);
  o.dims = {8, 32, 32};
  EXPECT_THROW(cmd_phantom(o, scratch("ph_bad")), ValidationError);
  o.dims = {16, 30, 30};
  o.degrade = 4;
  EXPECT_THROW(cmd_phantom(o, scratch("ph_bad")), ValidationError);
}

TEST(CmdCrossval, SingleScanSubjectsGiveOneSubjectPerFold) {
  const auto dir = scratch("cv_single");
  cmd_phantom(small_phantoms(5), dir / "data");
  const auto res = cmd_crossval(tiny_crossval((dir / "data" / "manifest.json").string(), 5), dir / "cv");
  for (std::size_t f = 0; f < 5; ++f) {
    const auto fold = dir / "cv" / ("fold_" + std::to_string(f));
    EXPECT_TRUE(fs::exists(fold / "checkpoint.wcsm"));
    EXPECT_TRUE(fs::exists(fold / "history.csv"));
    const auto rows = wcseg::detail::read_file((fold / "report" / "volumes.csv").string());
    EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 2);  // header + one subject
  }
  const auto pooled = wcseg::detail::read_file((dir / "cv" / "pooled" / "volumes.csv").string());
  EXPECT_EQ(std::count(pooled.begin(), pooled.end(), '\n'), 6);
  EXPECT_EQ(res.pooled.volumes.size(), 5u);
  EXPECT_FALSE(std::isnan(res.pooled.mean_dsc3d));
}

TEST(CmdCrossval, RerunIsByteIdentical) {
  const auto dir = scratch("cv_det");
  auto p = small_phantoms(4);
  p.coil_repeat = true;
  cmd_phantom(p, dir / "data");
  auto o = tiny_crossval((dir / "data" / "manifest.json").string(), 2);
  o.train.augment_copies = 1;
  cmd_crossval(o, dir / "a");
  o.threads = 2;
  cmd_crossval(o, dir / "b");
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
}

TEST(CmdCrossval, DivergingFoldsAreMarkedFailed) {
  const auto dir = scratch("cv_fail");
  cmd_phantom(small_phantoms(4), dir / "data");
  auto o = tiny_crossval((dir / "data" / "manifest.json").string(), 2);
  o.train.lr.learning_rate = 1e30;  // the first update overflows the next forward pass
  o.train.epochs = 2;
  const auto res = cmd_crossval(o, dir / "cv");
  for (const auto& f : res.folds) {
    EXPECT_TRUE(f.failed);
    EXPECT_NE(f.diagnostic.find("non-finite loss"), std::string::npos);
    const auto fold = dir / "cv" / ("fold_" + std::to_string(f.fold));
    EXPECT_FALSE(fs::exists(fold / "checkpoint.wcsm"));
    const auto info = nlohmann::json::parse(wcseg::detail::read_file((fold / "fold.json").string()));
    EXPECT_EQ(info["failed"], true);
  }
  EXPECT_TRUE(res.pooled.volumes.empty());
  EXPECT_FALSE(fs::exists(dir / "cv" / "pooled"));
  const auto csv = wcseg::detail::read_file((dir / "cv" / "folds.csv").string());
  EXPECT_NE(csv.find("0,1,2,,0,non-finite loss"), std::string::npos) << csv;
}

TEST(CmdCrossval, NonFiniteInputAborts) {
  const auto dir = scratch("cv_nan");
  const auto m = cmd_phantom(small_phantoms(4), dir / "data");
  auto poisoned = load_volume((dir / "data" / m[0].image_path).string());
  poisoned.values[100] = std::nanf("");
  save_volume(poisoned, (dir / "data" / m[0].image_path).string());
  EXPECT_THROW(cmd_crossval(tiny_crossval((dir / "data" / "manifest.json").string(), 2), dir / "cv"),
               DegenerateDataError);
}

TEST(CmdSegment, KeepsDimsAndIsRepeatable) {
  const auto dir = scratch("seg");
  std::mt19937_64 rng(2);
  auto model = build_model<float>(scale_model(Scale::Desk), rng);
  save_checkpoint(model, (dir / "model.wcsm").string());
  auto ph = generate_phantom(9, {88, 48, 40});
  save_volume(ph.image, (dir / "scan.wcsv").string());
  SegmentOptions o{(dir / "model.wcsm").string(), (dir / "scan.wcsv").string(), "", true};
  const auto t = cmd_segment(o, dir / "a");
  cmd_segment(o, dir / "b");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].slices, 88u);
  EXPECT_LT(t[0].seconds, 60.0);
  const auto a = load_mask((dir / "a" / "scan_pred.wcsv").string());
  EXPECT_EQ(a.dims, ph.image.dims);
  EXPECT_EQ(a, load_mask((dir / "b" / "scan_pred.wcsv").string()));
  const auto timing = wcseg::detail::read_file((dir / "a" / "timing.csv").string());
  EXPECT_EQ(timing.rfind("volume,slices,seconds\n", 0), 0u);
}

TEST(CmdSegment, RejectsIncompatibleCheckpoint) {
  const auto dir = scratch("seg_bad");
  wcseg::detail::write_file((dir / "model.wcsm").string(), "WCSM1 truncated");
  save_volume(generate_phantom(1, {16, 32, 32}).image, (dir / "scan.wcsv").string());
  EXPECT_THROW(cmd_segment({(dir / "model.wcsm").string(), (dir / "scan.wcsv").string(), "", false}, dir / "o"),
               FormatError);
  EXPECT_THROW(cmd_segment({(dir / "model.wcsm").string(), "", "", false}, dir / "o"), ValidationError);
}

TEST(CmdEvaluate, SelfEvaluationIsPerfect) {
  const auto dir = scratch("ev_self");
  auto p = small_phantoms(4);
  p.coil_repeat = true;
  p.degrade = 2;
  cmd_phantom(p, dir);
  const auto manifest = (dir / "manifest.json").string();
  const auto r = cmd_evaluate({manifest, manifest}, dir / "ev");
  EXPECT_EQ(r.volumes.size(), 12u);
  for (const auto& v : r.volumes) {
    EXPECT_EQ(v.dsc3d, 1.0);
    EXPECT_EQ(*v.delta_v, 0.0);
  }
  ASSERT_TRUE(r.bland_altman_volume.value);
  EXPECT_EQ(r.bland_altman_volume.value->bias, 0.0);
  EXPECT_EQ(r.repeatability.size(), 4u);
  EXPECT_EQ(r.resolution.size(), 4u);
  for (const char* f : {"slices.csv", "volumes.csv", "repeatability.csv", "resolution.csv", "summary.json",
                        "correlation.csv", "bland_altman.csv", "run_config.json"})
    EXPECT_TRUE(fs::exists(dir / "ev" / f)) << f;
}

TEST(CmdEvaluate, SinglePairReportsNonComputableStats) {
  const auto dir = scratch("ev_one");
  cmd_phantom(small_phantoms(1), dir);
  const auto manifest = (dir / "manifest.json").string();
  const auto r = cmd_evaluate({manifest, manifest}, dir / "ev");
  EXPECT_FALSE(r.pearson_volume.value);
  EXPECT_FALSE(r.pearson_volume.reason.empty());
  const auto summary = nlohmann::json::parse(wcseg::detail::read_file((dir / "ev" / "summary.json").string()));
  EXPECT_EQ(summary["pearson_volume"]["computable"], false);
}

TEST(CmdEvaluate, UnmatchedScanIdsAreRejected) {
  const auto dir = scratch("ev_unmatched");
  auto m = cmd_phantom(small_phantoms(2), dir);
  write_manifest((dir / "one.json").string(), {m[0]});
  const auto all = (dir / "manifest.json").string(), one = (dir / "one.json").string();
  EXPECT_THROW(cmd_evaluate({one, all}, dir / "ev"), ValidationError);
  EXPECT_THROW(cmd_evaluate({all, one}, dir / "ev"), ValidationError);
}

TEST(CmdGridsearch, EmitsFullRanking) {
  const auto dir = scratch("grid");
  cmd_phantom(small_phantoms(4), dir / "data");
  GridOptions o;
  o.base = tiny_crossval((dir / "data" / "manifest.json").string(), 2);
  o.learning_rates = {1e-3, 5e-3};
  o.dropouts = {0.0, 0.2};
  const auto res = cmd_gridsearch(o, dir / "out");
  ASSERT_EQ(res.size(), 4u);
  for (std::size_t i = 1; i < res.size(); ++i) EXPECT_GE(res[i - 1].mean_dsc3d, res[i].mean_dsc3d);
  const auto csv = wcseg::detail::read_file((dir / "out" / "grid.csv").string());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Scale, PresetsMatchDocumentedValues) {
  const auto dm = scale_model(Scale::Desk), pm = scale_model(Scale::Full, "Tr_U-Net");
  EXPECT_EQ(dm.base_channels, 8);
  EXPECT_EQ(dm.input_size, 64);
  EXPECT_TRUE(dm.attention);
  EXPECT_EQ(pm.base_channels, 64);
  EXPECT_EQ(pm.input_size, 256);
  EXPECT_EQ(pm.depth, 3);
  const auto pt = scale_train(Scale::Full);
  EXPECT_EQ(pt.batch_size, 32u);
  EXPECT_EQ(pt.augment_copies, 9u);
  EXPECT_EQ(pt.lr.restart_period, 20u);
  EXPECT_EQ(scale_train(Scale::Desk).batch_size, 4u);
  EXPECT_THROW(parse_scale("huge"), ValidationError);
}

// ---- the executable ----

TEST(Executable, ExitCodes) {
  const auto dir = scratch("exe");
  const auto out = (dir / "ph").string();
  EXPECT_EQ(run_cli("phantom --count 1 --dims 16,32,32 --out " + out), 0);
  EXPECT_EQ(run_cli("phantom --count 1 --dims 8,32,32 --out " + (dir / "bad").string()), 2);
  EXPECT_EQ(run_cli("phantom --no-such-flag --out " + out), 2);
  EXPECT_EQ(run_cli("phantom --count 1 --scale galactic --out " + out), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  wcseg::detail::write_file((dir / "junk.wcsm").string(), "junk");
  EXPECT_EQ(run_cli("segment --checkpoint " + (dir / "junk.wcsm").string() + " --volume " +
                    (dir / "ph" / "volumes" / "phantom-0_A_image.wcsv").string() + " --out " + (dir / "seg").string()),
            3);
  EXPECT_EQ(run_cli("evaluate --pred " + out + "/manifest.json --gt " + out + "/missing.json --out " +
                    (dir / "ev").string()),
            3);
}

TEST(Executable, ConfigFileLayersUnderFlags) {
  const auto dir = scratch("exe_cfg");
  wcseg::detail::write_file((dir / "cfg.json").string(), R"({"count": 2, "dims": [16, 32, 32], "seed": 7})");
  ASSERT_EQ(run_cli("phantom --config " + (dir / "cfg.json").string() + " --out " + (dir / "a").string()), 0);
  EXPECT_EQ(read_manifest((dir / "a" / "manifest.json").string()).size(), 2u);
  const auto rc = nlohmann::json::parse(wcseg::detail::read_file((dir / "a" / "run_config.json").string()));
  EXPECT_EQ(rc["seed"], 7);
  EXPECT_EQ(rc["command"], "phantom");
  ASSERT_EQ(run_cli("phantom --config " + (dir / "cfg.json").string() + " --count 3 --out " + (dir / "b").string()),
            0);
  EXPECT_EQ(read_manifest((dir / "b" / "manifest.json").string()).size(), 3u);
  wcseg::detail::write_file((dir / "typo.json").string(), R"({"cuont": 2})");
  EXPECT_EQ(run_cli("phantom --config " + (dir / "typo.json").string() + " --out " + (dir / "c").string()), 2);
  wcseg::detail::write_file((dir / "train.json").string(), R"({"train": {"epochs": "many"}})");
  EXPECT_EQ(run_cli("crossval --manifest " + (dir / "a" / "manifest.json").string() + " --config " +
                    (dir / "train.json").string() + " --out " + (dir / "d").string()),
            2);
}
