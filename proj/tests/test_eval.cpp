#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>
#include <unistd.h>

#include "wcseg/detail/byteio.hpp"
#include "wcseg/eval/metrics.hpp"
#include "wcseg/eval/report.hpp"
#include "wcseg/eval/stats.hpp"

using namespace wcseg;

namespace {

MaskVolume random_mask(std::array<std::size_t, 3> dims, std::mt19937& rng, double p) {
  MaskVolume m(dims, {0.5, 0.37, 0.37});
  std::bernoulli_distribution b(p);
  for (auto& v : m.values) v = b(rng);
  return m;
}

Mask2D mask_from(std::size_t h, std::size_t w, std::initializer_list<std::size_t> on) {
  Mask2D m(h, w);
  for (auto i : on) m.values[i] = 1;
  return m;
}

// Brute-force voxel counting over (z, y, x) coordinates.
struct Oracle {
  long inter = 0, pred = 0, gt = 0;
  explicit Oracle(const MaskVolume& p, const MaskVolume& g) {
    for (std::size_t z = 0; z < g.dims[0]; ++z)
      for (std::size_t y = 0; y < g.dims[1]; ++y)
        for (std::size_t x = 0; x < g.dims[2]; ++x) {
          const bool a = p.at(z, y, x) == 1, b = g.at(z, y, x) == 1;
          inter += a && b;
          pred += a;
          gt += b;
        }
  }
  double dice() const { return pred + gt == 0 ? 1.0 : 2.0 * inter / double(pred + gt); }
};

}  // namespace

// ---------------------------------------------------------------- overlap metrics

TEST(Dsc, Examples) {
  const auto a = mask_from(3, 3, {0, 1, 2, 3});
  EXPECT_DOUBLE_EQ(dsc_2d(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dsc_2d(a, mask_from(3, 3, {5, 6})), 0.0);
  // |Y| = 4, |Ŷ| = 6, overlap 3
  EXPECT_DOUBLE_EQ(dsc_2d(mask_from(3, 3, {0, 1, 2, 4, 5, 6}), mask_from(3, 3, {0, 1, 2, 8})), 0.6);
  EXPECT_DOUBLE_EQ(dsc_2d(Mask2D(3, 3), Mask2D(3, 3)), 1.0);
  EXPECT_DOUBLE_EQ(dsc_2d(mask_from(3, 3, {4}), Mask2D(3, 3)), 0.0);
  EXPECT_THROW(dsc_2d(Mask2D(3, 3), Mask2D(3, 4)), ValidationError);
}

TEST(Dsc, VolumeHalfMatching) {
  MaskVolume p({2, 4, 4}, {1, 1, 1}), g({2, 4, 4}, {1, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) {
    p.at(0, 0, i) = g.at(0, 0, i) = 1;  // slice 0 matches
    p.at(1, 0, i) = 1;                   // slice 1 disjoint
    g.at(1, 3, i) = 1;
  }
  EXPECT_DOUBLE_EQ(dsc_3d(p, g), 0.5);
  EXPECT_DOUBLE_EQ(dsc_3d(g, g), 1.0);
  EXPECT_THROW(dsc_3d(p, MaskVolume({2, 4, 5}, {1, 1, 1})), ValidationError);
}

TEST(Dsc, RandomMasksMatchCountingOracle) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::array<std::size_t, 3> dims{1 + rng() % 32, 1 + rng() % 32, 1 + rng() % 32};
    const double pp = std::uniform_real_distribution<double>(0, 0.6)(rng);
    auto p = random_mask(dims, rng, pp), g = random_mask(dims, rng, pp);
    const Oracle o(p, g);
    const double d = dsc_3d(p, g);
    ASSERT_EQ(d, o.dice());
    ASSERT_EQ(d, dsc_3d(g, p));
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, 1.0);
    const auto c = confusion(p, g);
    ASSERT_EQ(static_cast<long>(c.tp), o.inter);
    ASSERT_EQ(c.total(), p.size());
    if (o.pred > 0) {
      std::vector<ConfusionCounts> one{c};
      ASSERT_EQ(precision_overall(std::span<const ConfusionCounts>(one)), double(o.inter) / double(o.pred));
    }
    ASSERT_EQ(cartilage_volume(p), static_cast<double>(o.pred) * (0.5 * 0.37 * 0.37));
    for (std::size_t z = 0; z < dims[0]; ++z) {
      const auto ps = p.slice(z), gs = g.slice(z);
      ASSERT_EQ(dsc_2d(ps, gs), dsc_2d(gs, ps));
    }
  }
}

TEST(Dsc, IdenticalIffOne) {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_mask({4, 8, 8}, rng, 0.2);
    auto p = g;
    EXPECT_EQ(dsc_3d(p, g), 1.0);
    p.values[rng() % p.size()] ^= 1;
    EXPECT_LT(dsc_3d(p, g), 1.0);
  }
}

TEST(Precision, PooledExamples) {
  std::vector<ConfusionCounts> c{{3, 1, 0, 10}};
  EXPECT_DOUBLE_EQ(precision_overall(std::span<const ConfusionCounts>(c)), 0.75);
  std::vector<ConfusionCounts> perfect{{5, 0, 0, 1}, {2, 0, 0, 9}};
  EXPECT_DOUBLE_EQ(precision_overall(std::span<const ConfusionCounts>(perfect)), 1.0);
  std::vector<ConfusionCounts> none{{0, 0, 4, 9}};
  EXPECT_THROW(precision_overall(std::span<const ConfusionCounts>(none)), DegenerateDataError);
}

TEST(Precision, PooledDiffersFromPerImageMean) {
  // large image: 90 TP, 10 FP -> 0.9; small image: 1 TP, 1 FP -> 0.5
  std::vector<ConfusionCounts> c{{90, 10, 0, 900}, {1, 1, 0, 2}};
  const double pooled = precision_overall(std::span<const ConfusionCounts>(c));
  EXPECT_DOUBLE_EQ(pooled, 91.0 / 102.0);
  EXPECT_NE(pooled, (0.9 + 0.5) / 2);
}

// ---------------------------------------------------------------- volumes and zones

TEST(Volume, CartilageVolume) {
  MaskVolume m({10, 10, 10}, {0.5, 0.37, 0.37});
  EXPECT_EQ(cartilage_volume(m), 0.0);
  std::fill(m.values.begin(), m.values.end(), 1);
  EXPECT_NEAR(cartilage_volume(m), 68.45, 1e-9);
  m.voxel_size_mm[1] = 0;
  EXPECT_THROW(cartilage_volume(m), ValidationError);
}

TEST(Volume, VolumeError) {
  EXPECT_DOUBLE_EQ(volume_error(200, 170), 15.0);
  EXPECT_DOUBLE_EQ(volume_error(5, 5), 0.0);
  EXPECT_NEAR(volume_error(2522, 2582), 2.379, 5e-4);
  EXPECT_DOUBLE_EQ(volume_error(2000, 1700), volume_error(200, 170));
  EXPECT_THROW(volume_error(0, 3), DegenerateDataError);
}

TEST(Volume, Repeatability) {
  EXPECT_DOUBLE_EQ(repeatability_pair(2000, 1800), 10.0);
  EXPECT_DOUBLE_EQ(repeatability_pair(1800, 2000), 10.0);
  EXPECT_DOUBLE_EQ(repeatability_pair(7, 7), 0.0);
  EXPECT_THROW(repeatability_pair(0, 0), DegenerateDataError);
}

TEST(Volume, PublishedManualRepeatabilityMean) {
  const std::vector<double> rows{13.9, 11.8, 8.6, 1.9, 28.2, 8.4, 16.5};
  // published to one decimal: 12.7; exact mean of the rounded rows is 12.757
  EXPECT_NEAR(mean_of(rows), 12.7, 0.1);
}

TEST(Zones, Binning) {
  EXPECT_EQ(zone_of(0, 10), 0u);
  EXPECT_EQ(zone_of(10, 10), 3u);
  std::vector<SliceScore> vol{{1.0, 0}, {0.5, 2}, {0.7, 5}, {0.9, 10}};
  EXPECT_EQ(zone_assignments(vol), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(zone_of(1, 3), 1u);  // exactly one third
  EXPECT_EQ(zone_of(2, 3), 2u);  // exactly two thirds
  EXPECT_THROW(zone_of(0, 0), DegenerateDataError);
}

TEST(Zones, TablePoolsVolumes) {
  std::vector<std::vector<SliceScore>> vols{{{1.0, 0}, {0.4, 1}, {0.8, 4}}, {{0.0, 0}, {0.6, 20}, {0.2, 6}}};
  const auto t = zone_analysis(vols);
  EXPECT_EQ(t[0].count, 2u);
  EXPECT_DOUBLE_EQ(t[0].mean, 0.5);
  EXPECT_NEAR(t[0].sd, std::sqrt(0.5), 1e-12);
  EXPECT_EQ(t[1].count, 2u);  // 1/4 and 6/20
  EXPECT_DOUBLE_EQ(t[1].mean, 0.3);
  EXPECT_EQ(t[2].count, 0u);
  EXPECT_TRUE(std::isnan(t[2].mean));
  EXPECT_EQ(t[3].count, 2u);
  EXPECT_THROW(zone_analysis({{{1.0, 0}, {1.0, 0}}}), DegenerateDataError);
}

// ---------------------------------------------------------------- statistics
// Reference values computed once with scipy.stats 1.15 / numpy 2.2.

TEST(Pearson, PerfectCorrelation) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y2{2, 4, 6, 8, 10}, yn{6, 5, 4, 3, 2};
  EXPECT_DOUBLE_EQ(pearson(x, y2).r, 1.0);
  EXPECT_DOUBLE_EQ(pearson(x, yn).r, -1.0);
  EXPECT_EQ(pearson(x, y2).p, 0.0);
}

TEST(Pearson, MatchesReference) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 1, 4, 3};
  const auto r = pearson(x, y);
  EXPECT_NEAR(r.r, 0.6, 1e-12);
  EXPECT_NEAR(r.p, 0.4, 1e-6);
  EXPECT_NEAR(r.ci_low, -0.8529325646947181, 1e-6);
  EXPECT_NEAR(r.ci_high, 0.9901277107996944, 1e-6);
  const std::vector<double> a{1.2, 2.5, 3.1, 4.8, 5.0, 6.7, 7.1, 8.9}, b{2.0, 2.9, 2.7, 5.5, 4.1, 7.9, 6.6, 9.4};
  const auto s = pearson(a, b);
  EXPECT_NEAR(s.r, 0.9612759337426623, 1e-9);
  EXPECT_NEAR(s.p, 0.0001409884203353625, 1e-9);
  EXPECT_NEAR(s.ci_low, 0.795384921754203, 1e-6);
  EXPECT_NEAR(s.ci_high, 0.99318208746403, 1e-6);
}

TEST(Pearson, AffineInvariance) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(10), y(10), xs(10);
    for (int i = 0; i < 10; ++i) x[i] = n(rng), y[i] = x[i] + n(rng), xs[i] = 3.5 * x[i] - 7;
    EXPECT_NEAR(pearson(x, y).r, pearson(xs, y).r, 1e-12);
    EXPECT_GE(pearson(x, y).ci_high, pearson(x, y).r);
  }
}

TEST(Pearson, RejectsDegenerate) {
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), DegenerateDataError);
  EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateDataError);
}

TEST(BlandAltman, Examples) {
  const std::vector<double> a{100, 200, 300};
  const auto z = bland_altman(a, a);
  EXPECT_EQ(z.bias, 0.0);
  EXPECT_EQ(z.lower, 0.0);
  EXPECT_EQ(z.upper, 0.0);
  const auto r = bland_altman(a, std::vector<double>{110, 190, 305});
  EXPECT_NEAR(r.bias, 1.6666666666666667, 1e-9);
  EXPECT_NEAR(r.sd, 10.408329997330663, 1e-9);
  EXPECT_NEAR(r.lower, -18.73366012810143, 1e-6);
  EXPECT_NEAR(r.upper, 22.066993461434766, 1e-6);
  EXPECT_NEAR(r.upper - r.bias, r.bias - r.lower, 1e-12);
  const auto s = bland_altman(a, std::vector<double>{117, 197, 312});
  EXPECT_NEAR(s.bias - r.bias, 7.0, 1e-12);
  EXPECT_NEAR(s.upper - s.lower, r.upper - r.lower, 1e-9);
  EXPECT_THROW(bland_altman(std::vector<double>{1}, std::vector<double>{2}), DegenerateDataError);
}

TEST(Anova, Examples) {
  const auto same = one_way_anova({{1, 2, 3}, {1, 2, 3}});
  EXPECT_EQ(same.f, 0.0);
  EXPECT_NEAR(same.p, 1.0, 1e-12);
  const auto r = one_way_anova({{1, 2}, {3, 4}});
  EXPECT_NEAR(r.f, 8.0, 1e-10);
  EXPECT_EQ(r.df_between, 1u);
  EXPECT_EQ(r.df_within, 2u);
  EXPECT_NEAR(r.p, 0.10557280900008414, 1e-6);
  const auto t = one_way_anova({{0.81, 0.79, 0.85, 0.83, 0.80}, {0.78, 0.82, 0.80, 0.84, 0.79}, {0.60, 0.58, 0.65, 0.62, 0.61}});
  EXPECT_NEAR(t.f, 108.40437158469958, 1e-6);
  EXPECT_NEAR(t.p, 2.0809027440278875e-08, 1e-12);
  EXPECT_THROW(one_way_anova({{0, 0, 0}, {1, 1, 1}}), DegenerateDataError);
  EXPECT_THROW(one_way_anova({{1, 2}}), ValidationError);
}

TEST(Posthoc, Examples) {
  const std::vector<std::vector<double>> same{{1, 2, 3}, {1, 2, 3}};
  EXPECT_DOUBLE_EQ(posthoc_pairwise(same)[0].adjusted, 1.0);
  const std::vector<std::vector<double>> g{
      {0.81, 0.79, 0.85, 0.83, 0.80}, {0.78, 0.82, 0.80, 0.84, 0.79}, {0.60, 0.58, 0.65, 0.62, 0.61}};
  const auto p = posthoc_pairwise(g);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_NEAR(p[0].raw, 0.5299097775625461, 1e-6);
  EXPECT_NEAR(p[1].raw, 1.2900631139002163e-06, 1e-9);
  EXPECT_NEAR(p[2].raw, 1.8916811299587804e-06, 1e-9);
  // far-separated group: its two comparisons are more significant than the close pair
  EXPECT_LT(p[1].adjusted, p[0].adjusted);
  EXPECT_LT(p[2].adjusted, p[0].adjusted);
  EXPECT_NEAR(p[1].adjusted, 3 * 1.2900631139002163e-06, 1e-9);
  // step-down running maximum: max(3 p(1), 2 p(2))
  EXPECT_NEAR(p[2].adjusted, std::max(3 * 1.2900631139002163e-06, 2 * 1.8916811299587804e-06), 1e-9);
}

TEST(Posthoc, HolmMonotonicity) {
  std::mt19937 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng() % 4;
    std::vector<std::vector<double>> groups(k);
    for (auto& g : groups) {
      const double shift = n(rng);
      g.resize(3 + rng() % 6);
      for (auto& v : g) v = shift + n(rng);
    }
    const auto p = posthoc_pairwise(groups);
    std::vector<std::pair<double, double>> sorted;
    for (const auto& e : p) {
      ASSERT_GE(e.adjusted, e.raw);
      ASSERT_LE(e.adjusted, 1.0);
      sorted.push_back({e.raw, e.adjusted});
    }
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) ASSERT_GE(sorted[i].second, sorted[i - 1].second);
  }
}

TEST(Boxplot, Examples) {
  const auto a = boxplot_stats(std::vector<double>{1, 2, 3, 4, 5});
  EXPECT_EQ(a.q1, 2.0);
  EXPECT_EQ(a.median, 3.0);
  EXPECT_EQ(a.q3, 4.0);
  EXPECT_EQ(a.iqr, 2.0);
  EXPECT_TRUE(a.outliers.empty());
  const auto b = boxplot_stats(std::vector<double>{1, 2, 3, 4, 100});
  EXPECT_EQ(b.upper_fence, 7.0);
  EXPECT_EQ(b.outliers, std::vector<double>{100});
  EXPECT_EQ(b.whisker_high, 4.0);
  const auto c = boxplot_stats(std::vector<double>{3.5, -1, 2, 8, 8, 0.25, 7});
  EXPECT_NEAR(c.q1, 1.125, 1e-12);
  EXPECT_NEAR(c.median, 3.5, 1e-12);
  EXPECT_NEAR(c.q3, 7.5, 1e-12);
  const auto d = boxplot_stats(std::vector<double>{4.2});
  EXPECT_EQ(d.q1, 4.2);
  EXPECT_EQ(d.q3, 4.2);
  EXPECT_EQ(d.iqr, 0.0);
  EXPECT_THROW(boxplot_stats(std::vector<double>{}), DegenerateDataError);
}

// ---------------------------------------------------------------- report

namespace {

EvalItem item(const std::string& id, const std::string& subject, const std::string& coil, double dx,
              const MaskVolume& gt, const MaskVolume& pred) {
  EvalItem it{id, ScanMeta{subject, "right", coil, 1.5, "s1"}, pred, gt};
  it.gt.voxel_size_mm[2] = it.pred.voxel_size_mm[2] = dx;
  return it;
}

}  // namespace

TEST(Report, SelfEvaluationIsPerfect) {
  std::mt19937 rng(5);
  std::vector<EvalItem> items;
  for (int i = 0; i < 4; ++i) {
    auto g = random_mask({5, 8, 8}, rng, 0.1);
    items.push_back(item("v" + std::to_string(i), "s" + std::to_string(i), "A", 0.37, g, g));
  }
  const auto r = evaluate(items);
  EXPECT_EQ(r.volumes.size(), 4u);
  EXPECT_EQ(r.slices.size(), 20u);
  for (const auto& v : r.volumes) {
    EXPECT_EQ(v.dsc3d, 1.0);
    EXPECT_EQ(*v.delta_v, 0.0);
  }
  for (const auto& s : r.slices) EXPECT_EQ(s.dsc2d, 1.0);
  EXPECT_EQ(r.bland_altman_volume.value->bias, 0.0);
  EXPECT_EQ(*r.precision.value, 1.0);
  EXPECT_NEAR(r.pearson_volume.value->r, 1.0, 1e-12);
}

TEST(Report, SinglePairMarksStatsNotComputable) {
  std::mt19937 rng(6);
  auto g = random_mask({3, 6, 6}, rng, 0.3);
  const auto r = evaluate({item("only", "s", "A", 0.37, g, g)});
  EXPECT_FALSE(r.pearson_volume.value.has_value());
  EXPECT_FALSE(r.bland_altman_volume.value.has_value());
  EXPECT_FALSE(r.pearson_volume.reason.empty());
  const auto j = summary_json(r);
  EXPECT_EQ(j["pearson_volume"]["computable"], false);
  EXPECT_EQ(j["mean_dsc3d"], 1.0);
}

TEST(Report, MetadataDrivenPairing) {
  std::mt19937 rng(7);
  auto g = random_mask({4, 8, 8}, rng, 0.3);
  auto p = random_mask({4, 8, 8}, rng, 0.3);
  std::vector<EvalItem> items{item("a", "s1", "A", 0.37, g, p), item("b", "s1", "B", 0.37, g, g),
                              item("c", "s1", "A", 0.74, g, p), item("d", "s2", "A", 0.37, g, g)};
  const auto r = evaluate(items);
  ASSERT_EQ(r.repeatability.size(), 1u);  // a/b: coil differs
  EXPECT_EQ(r.repeatability[0].label_a, "A");
  EXPECT_EQ(r.repeatability[0].label_b, "B");
  ASSERT_EQ(r.resolution.size(), 1u);  // a/c: voxel size differs
  EXPECT_EQ(r.resolution[0].id_a, "a");
  EXPECT_EQ(r.resolution[0].id_b, "c");
  EXPECT_NEAR(*r.resolution[0].gt_change_pct, 100.0, 1e-9);  // doubled dx doubles the volume
}

TEST(Report, ZoneColumnAndFiles) {
  MaskVolume g({3, 4, 4}, {0.5, 0.37, 0.37});
  g.at(1, 0, 0) = 1;
  g.at(2, 0, 0) = g.at(2, 0, 1) = g.at(2, 0, 2) = 1;
  auto r = evaluate({item("v", "s", "A", 0.37, g, g)});
  EXPECT_EQ(r.slices[0].zone, 1);
  EXPECT_EQ(r.slices[1].zone, 2);
  EXPECT_EQ(r.slices[2].zone, 4);
  const auto dir = std::filesystem::temp_directory_path() / ("wcseg_report_" + std::to_string(::getpid()));
  write_report(r, dir);
  for (const char* f : {"slices.csv", "volumes.csv", "repeatability.csv", "resolution.csv", "correlation.csv",
                        "bland_altman.csv", "summary.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto j = nlohmann::json::parse(detail::read_file((dir / "summary.json").string()));
  EXPECT_EQ(j["zones"][3]["slices"], 1);
  EXPECT_TRUE(j["zones"][2]["mean_dsc2d"].is_null());
  std::filesystem::remove_all(dir);
}

TEST(Report, EmptyReferenceVolumeIsSkippedForZones) {
  MaskVolume g({2, 4, 4}, {0.5, 0.37, 0.37});
  const auto r = evaluate({item("e", "s", "A", 0.37, g, g)});
  EXPECT_EQ(r.zone_skipped, std::vector<std::string>{"e"});
  EXPECT_FALSE(r.volumes[0].delta_v.has_value());
  EXPECT_FALSE(r.precision.value.has_value());
}
