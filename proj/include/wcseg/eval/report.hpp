#pragma once

// Evaluation of predicted against reference masks and the CSV/JSON emitters for its results.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wcseg/detail/byteio.hpp"
#include "wcseg/eval/metrics.hpp"
#include "wcseg/eval/stats.hpp"

namespace wcseg {

struct EvalItem {
  std::string volume_id;
  ScanMeta meta;
  MaskVolume pred;
  MaskVolume gt;
  int fold = -1;  // -1 outside cross-validation
};

struct SliceRow {
  std::string volume_id;
  std::size_t slice;
  int zone;  // 1..4, or 0 when the volume has no reference cartilage
  double dsc2d;
  std::uint64_t gt_pixels, pred_pixels;
};

struct VolumeRow {
  std::string volume_id;
  ScanMeta meta;
  int fold;
  std::array<double, 3> voxel_size_mm;
  ConfusionCounts counts;
  double dsc3d, v_gt, v_pred;
  std::optional<double> delta_v;  // undefined for an empty reference
};

/// Pairs of scans of one subject and hand that differ in a single acquisition attribute.
struct PairRow {
  std::string subject_id, hand;
  std::string id_a, id_b;
  std::string label_a, label_b;  // coil tags or voxel sizes
  double v_gt_a, v_gt_b, v_pred_a, v_pred_b;
  std::optional<double> gt_diff_pct, pred_diff_pct;      // relative to the larger of the pair
  std::optional<double> gt_change_pct, pred_change_pct;  // signed (b - a) / a
};

template <typename T>
struct Computed {
  std::optional<T> value;
  std::string reason;  // why value is absent
};

template <typename F>
auto try_compute(F&& f) -> Computed<decltype(f())> {
  try {
    return {f(), ""};
  } catch (const DegenerateDataError& e) {
    return {std::nullopt, e.what()};
  } catch (const ValidationError& e) {
    return {std::nullopt, e.what()};
  }
}

struct MetricsReport {
  std::vector<SliceRow> slices;
  std::vector<VolumeRow> volumes;
  ZoneTable zones{};
  std::vector<std::string> zone_skipped;  // volumes without reference cartilage
  double mean_dsc2d = 0;
  Computed<double> sd_dsc3d, mean_delta_v, sd_delta_v, precision;
  double mean_dsc3d = 0;
  Computed<PearsonResult> pearson_volume;
  Computed<BlandAltmanResult> bland_altman_volume;
  Computed<AnovaResult> anova_zones;
  Computed<std::vector<PairwiseP>> posthoc_zones;
  std::vector<std::size_t> anova_zone_ids;  // zones (1..4) entering the ANOVA
  Computed<BoxplotStats> box_dsc3d, box_delta_v;
  std::vector<PairRow> repeatability, resolution;
  Computed<double> repeatability_mean_gt, repeatability_mean_pred;
};

namespace detail {

inline std::string voxel_label(const std::array<double, 3>& v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%gx%gx%g", v[2], v[1], v[0]);
  return buf;
}

inline std::optional<double> maybe(auto&& f) {
  try {
    return f();
  } catch (const DegenerateDataError&) {
    return std::nullopt;
  }
}

inline PairRow make_pair_row(const VolumeRow& a, const VolumeRow& b, std::string la, std::string lb) {
  PairRow r{a.meta.subject_id, a.meta.hand, a.volume_id, b.volume_id, std::move(la), std::move(lb),
            a.v_gt, b.v_gt, a.v_pred, b.v_pred, {}, {}, {}, {}};
  r.gt_diff_pct = maybe([&] { return repeatability_pair(a.v_gt, b.v_gt); });
  r.pred_diff_pct = maybe([&] { return repeatability_pair(a.v_pred, b.v_pred); });
  if (a.v_gt > 0) r.gt_change_pct = (b.v_gt - a.v_gt) / a.v_gt * 100;
  if (a.v_pred > 0) r.pred_change_pct = (b.v_pred - a.v_pred) / a.v_pred * 100;
  return r;
}

}  // namespace detail

inline MetricsReport evaluate(const std::vector<EvalItem>& items) {
  MetricsReport rep;
  std::vector<std::vector<SliceScore>> zone_input;
  std::vector<ConfusionCounts> counts;
  std::array<std::vector<double>, kZoneCount> zone_groups;
  double dsc2d_sum = 0;
  for (const auto& it : items) {
    if (it.pred.dims != it.gt.dims) throw ValidationError("evaluate: '" + it.volume_id + "' dims differ");
    const std::size_t d = it.gt.dims[0];
    std::vector<SliceScore> scores;
    std::vector<std::uint64_t> pred_px;
    for (std::size_t z = 0; z < d; ++z) {
      const auto p = it.pred.slice(z), g = it.gt.slice(z);
      const auto c = confusion(p, g);
      scores.push_back({dsc(c), c.actual()});
      pred_px.push_back(c.predicted());
    }
    std::vector<std::size_t> zones(d, 0);
    bool binned = false;
    try {
      zones = zone_assignments(scores);
      binned = true;
      zone_input.push_back(scores);
    } catch (const DegenerateDataError&) {
      rep.zone_skipped.push_back(it.volume_id);
    }
    for (std::size_t z = 0; z < d; ++z) {
      rep.slices.push_back({it.volume_id, z, binned ? static_cast<int>(zones[z]) + 1 : 0, scores[z].dsc2d,
                            scores[z].gt_count, pred_px[z]});
      dsc2d_sum += scores[z].dsc2d;
      if (binned) zone_groups[zones[z]].push_back(scores[z].dsc2d);
    }
    const auto c = confusion(it.pred, it.gt);
    counts.push_back(c);
    VolumeRow row{it.volume_id, it.meta, it.fold, it.gt.voxel_size_mm, c, dsc(c),
                  cartilage_volume(it.gt), cartilage_volume(it.pred), std::nullopt};
    if (row.v_gt > 0) row.delta_v = volume_error(row.v_gt, row.v_pred);
    rep.volumes.push_back(std::move(row));
  }
  if (!zone_input.empty()) rep.zones = zone_analysis(zone_input);
  if (!rep.slices.empty()) rep.mean_dsc2d = dsc2d_sum / static_cast<double>(rep.slices.size());

  std::vector<double> d3, dv, vg, vp;
  for (const auto& v : rep.volumes) {
    d3.push_back(v.dsc3d);
    vg.push_back(v.v_gt);
    vp.push_back(v.v_pred);
    if (v.delta_v) dv.push_back(*v.delta_v);
  }
  if (!d3.empty()) rep.mean_dsc3d = mean_of(d3);
  rep.sd_dsc3d = try_compute([&] { return sample_sd(d3); });
  rep.mean_delta_v = try_compute([&] { return mean_of(dv); });
  rep.sd_delta_v = try_compute([&] { return sample_sd(dv); });
  rep.precision = try_compute([&] { return precision_overall(std::span<const ConfusionCounts>(counts)); });
  rep.pearson_volume = try_compute([&] { return pearson(vg, vp); });
  rep.bland_altman_volume = try_compute([&] { return bland_altman(vg, vp); });
  rep.box_dsc3d = try_compute([&] { return boxplot_stats(d3); });
  rep.box_delta_v = try_compute([&] { return boxplot_stats(dv); });

  std::vector<std::vector<double>> groups;
  for (std::size_t z = 0; z < kZoneCount; ++z)
    if (zone_groups[z].size() >= 2) {
      groups.push_back(zone_groups[z]);
      rep.anova_zone_ids.push_back(z + 1);
    }
  rep.anova_zones = try_compute([&] { return one_way_anova(groups); });
  rep.posthoc_zones = try_compute([&] { return posthoc_pairwise(groups); });

  // Pairs are keyed on metadata only.
  std::map<std::pair<std::string, std::string>, std::vector<const VolumeRow*>> by_subject_hand;
  for (const auto& v : rep.volumes) by_subject_hand[{v.meta.subject_id, v.meta.hand}].push_back(&v);
  for (const auto& [key, rows] : by_subject_hand)
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        const auto &a = *rows[i], &b = *rows[j];
        const bool same_voxel = a.voxel_size_mm == b.voxel_size_mm;
        if (a.meta.coil != b.meta.coil && same_voxel)
          rep.repeatability.push_back(detail::make_pair_row(a, b, a.meta.coil, b.meta.coil));
        if (a.meta.coil == b.meta.coil && !same_voxel)
          rep.resolution.push_back(detail::make_pair_row(a, b, detail::voxel_label(a.voxel_size_mm),
                                                         detail::voxel_label(b.voxel_size_mm)));
      }
  std::vector<double> rg, rp;
  for (const auto& r : rep.repeatability) {
    if (r.gt_diff_pct) rg.push_back(*r.gt_diff_pct);
    if (r.pred_diff_pct) rp.push_back(*r.pred_diff_pct);
  }
  rep.repeatability_mean_gt = try_compute([&] { return mean_of(rg); });
  rep.repeatability_mean_pred = try_compute([&] { return mean_of(rp); });
  return rep;
}

// ---- emitters ----

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : ""; }

inline nlohmann::ordered_json jnum(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

template <typename T, typename F>
nlohmann::ordered_json computed_json(const Computed<T>& c, F&& to_json) {
  if (c.value) return to_json(*c.value);
  return {{"computable", false}, {"reason", c.reason}};
}

}  // namespace detail

inline std::string slices_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "volume_id,slice,zone,dsc2d,gt_pixels,pred_pixels\n";
  for (const auto& s : r.slices)
    os << s.volume_id << ',' << s.slice << ',' << s.zone << ',' << detail::num(s.dsc2d) << ',' << s.gt_pixels << ','
       << s.pred_pixels << '\n';
  return os.str();
}

inline std::string volumes_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "volume_id,subject_id,hand,coil,field_T,session,fold,voxel_size_mm,tp,fp,fn,dsc3d,v_gt_mm3,v_pred_mm3,"
        "delta_v_pct\n";
  for (const auto& v : r.volumes)
    os << v.volume_id << ',' << v.meta.subject_id << ',' << v.meta.hand << ',' << v.meta.coil << ','
       << detail::num(v.meta.field_T) << ',' << v.meta.session << ',' << v.fold << ','
       << detail::voxel_label(v.voxel_size_mm) << ',' << v.counts.tp << ',' << v.counts.fp << ',' << v.counts.fn
       << ',' << detail::num(v.dsc3d) << ',' << detail::num(v.v_gt) << ',' << detail::num(v.v_pred) << ','
       << detail::num(v.delta_v) << '\n';
  return os.str();
}

inline std::string pairs_csv(const std::vector<PairRow>& rows) {
  std::ostringstream os;
  os << "subject_id,hand,volume_a,volume_b,label_a,label_b,v_gt_a,v_gt_b,v_pred_a,v_pred_b,gt_diff_pct,"
        "pred_diff_pct,gt_change_pct,pred_change_pct\n";
  for (const auto& p : rows)
    os << p.subject_id << ',' << p.hand << ',' << p.id_a << ',' << p.id_b << ',' << p.label_a << ',' << p.label_b
       << ',' << detail::num(p.v_gt_a) << ',' << detail::num(p.v_gt_b) << ',' << detail::num(p.v_pred_a) << ','
       << detail::num(p.v_pred_b) << ',' << detail::num(p.gt_diff_pct) << ',' << detail::num(p.pred_diff_pct)
       << ',' << detail::num(p.gt_change_pct) << ',' << detail::num(p.pred_change_pct) << '\n';
  return os.str();
}

/// Plot data: one (x, y) row per volume for the correlation figure.
inline std::string correlation_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "volume_id,x_v_gt_mm3,y_v_pred_mm3\n";
  for (const auto& v : r.volumes) os << v.volume_id << ',' << detail::num(v.v_gt) << ',' << detail::num(v.v_pred) << '\n';
  return os.str();
}

/// Plot data: pair mean against difference (pred - reference).
inline std::string bland_altman_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "volume_id,x_mean_mm3,y_diff_mm3\n";
  for (const auto& v : r.volumes)
    os << v.volume_id << ',' << detail::num((v.v_gt + v.v_pred) / 2) << ',' << detail::num(v.v_pred - v.v_gt) << '\n';
  return os.str();
}

inline nlohmann::ordered_json summary_json(const MetricsReport& r) {
  using J = nlohmann::ordered_json;
  using detail::jnum;
  auto opt = [](const Computed<double>& c) { return detail::computed_json(c, [](double v) { return jnum(v); }); };
  J j;
  j["volumes"] = r.volumes.size();
  j["slices"] = r.slices.size();
  j["mean_dsc2d"] = jnum(r.mean_dsc2d);
  j["mean_dsc3d"] = jnum(r.mean_dsc3d);
  j["sd_dsc3d"] = opt(r.sd_dsc3d);
  j["precision_pooled"] = opt(r.precision);
  j["mean_delta_v_pct"] = opt(r.mean_delta_v);
  j["sd_delta_v_pct"] = opt(r.sd_delta_v);
  J zones = J::array();
  for (std::size_t b = 0; b < kZoneCount; ++b)
    zones.push_back({{"zone", b + 1}, {"mean_dsc2d", jnum(r.zones[b].mean)}, {"sd_dsc2d", jnum(r.zones[b].sd)},
                     {"slices", r.zones[b].count}});
  j["zones"] = zones;
  j["zone_skipped_volumes"] = r.zone_skipped;
  j["pearson_volume"] = detail::computed_json(r.pearson_volume, [](const PearsonResult& p) {
    return J{{"r", jnum(p.r)}, {"p", jnum(p.p)}, {"ci95_low", jnum(p.ci_low)}, {"ci95_high", jnum(p.ci_high)},
             {"n", p.n}};
  });
  j["bland_altman_volume"] = detail::computed_json(r.bland_altman_volume, [](const BlandAltmanResult& b) {
    return J{{"orientation", "pred - gt"}, {"bias", jnum(b.bias)}, {"lower", jnum(b.lower)},
             {"upper", jnum(b.upper)}, {"sd", jnum(b.sd)}, {"n", b.n}};
  });
  j["anova_dsc2d_by_zone"] = detail::computed_json(r.anova_zones, [&](const AnovaResult& a) {
    return J{{"zones", r.anova_zone_ids}, {"F", jnum(a.f)}, {"df_between", a.df_between},
             {"df_within", a.df_within}, {"p", jnum(a.p)}};
  });
  j["posthoc_dsc2d_by_zone"] = detail::computed_json(r.posthoc_zones, [&](const std::vector<PairwiseP>& ps) {
    J arr = J::array();
    for (const auto& p : ps)
      arr.push_back({{"zone_a", r.anova_zone_ids[p.a]}, {"zone_b", r.anova_zone_ids[p.b]},
                     {"p_raw", jnum(p.raw)}, {"p_holm", jnum(p.adjusted)}});
    return J{{"test", "welch_t"}, {"adjustment", "holm"}, {"pairs", arr}};
  });
  auto box = [](const BoxplotStats& b) {
    J out{{"q1", jnum(b.q1)},           {"median", jnum(b.median)},
          {"q3", jnum(b.q3)},           {"iqr", jnum(b.iqr)},
          {"lower_fence", jnum(b.lower_fence)}, {"upper_fence", jnum(b.upper_fence)},
          {"whisker_low", jnum(b.whisker_low)}, {"whisker_high", jnum(b.whisker_high)}};
    J outl = J::array();
    for (double v : b.outliers) outl.push_back(jnum(v));
    out["outliers"] = outl;
    return out;
  };
  j["boxplot_dsc3d"] = detail::computed_json(r.box_dsc3d, box);
  j["boxplot_delta_v_pct"] = detail::computed_json(r.box_delta_v, box);
  j["repeatability_pairs"] = r.repeatability.size();
  j["repeatability_mean_gt_pct"] = opt(r.repeatability_mean_gt);
  j["repeatability_mean_pred_pct"] = opt(r.repeatability_mean_pred);
  j["resolution_pairs"] = r.resolution.size();
  return j;
}

/// Writes slices.csv, volumes.csv, repeatability.csv, resolution.csv, correlation.csv,
/// bland_altman.csv and summary.json into `dir`.
inline void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) { detail::write_file((dir / name).string(), text); };
  put("slices.csv", slices_csv(r));
  put("volumes.csv", volumes_csv(r));
  put("repeatability.csv", pairs_csv(r.repeatability));
  put("resolution.csv", pairs_csv(r.resolution));
  put("correlation.csv", correlation_csv(r));
  put("bland_altman.csv", bland_altman_csv(r));
  put("summary.json", summary_json(r).dump(2) + "\n");
}

}  // namespace wcseg
