#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wcseg/data/volume.hpp"

namespace wcseg {

/// Entry indices into the dataset the split was built from.
struct FoldSplit {
  std::size_t fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline std::vector<std::string> subject_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.size());
  for (const auto& e : ds.entries()) ids.push_back(e.meta.subject_id);
  return ids;
}

/// Throws LeakageError if any subject appears on both sides of the split.
inline void check_no_leakage(const FoldSplit& split, const std::vector<std::string>& subject_of_entry) {
  std::set<std::string> train;
  for (auto i : split.train) train.insert(subject_of_entry.at(i));
  for (auto i : split.test)
    if (train.count(subject_of_entry.at(i)))
      throw LeakageError("fold " + std::to_string(split.fold) + ": subject '" + subject_of_entry[i] +
                         "' in both train and test sets");
}

/// Subject-grouped k-fold. Subjects are shuffled, ordered by scan count (stable, descending), then each
/// goes to the fold holding the fewest subjects; ties prefer fewer scans, then the lower fold index.
/// Per-fold subject counts therefore differ by at most one.
template <typename Rng>
std::vector<FoldSplit> group_kfold(const std::vector<std::string>& subject_of_entry, std::size_t k, Rng& rng) {
  if (k < 2) throw ValidationError("group_kfold: k must be >= 2");
  std::map<std::string, std::vector<std::size_t>> scans;
  std::vector<std::string> order;  // first-appearance order keeps the shuffle independent of map ordering
  for (std::size_t i = 0; i < subject_of_entry.size(); ++i) {
    const auto& s = subject_of_entry[i];
    if (s.empty()) throw ValidationError("group_kfold: empty subject id");
    auto& v = scans[s];
    if (v.empty()) order.push_back(s);
    v.push_back(i);
  }
  if (order.size() < k)
    throw ValidationError("group_kfold: " + std::to_string(order.size()) + " subjects for " + std::to_string(k) +
                          " folds");
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return scans[a].size() > scans[b].size(); });

  std::vector<std::size_t> n_subjects(k, 0), n_scans(k, 0);
  std::vector<std::size_t> fold_of_entry(subject_of_entry.size());
  for (const auto& s : order) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < k; ++f)
      if (n_subjects[f] < n_subjects[best] || (n_subjects[f] == n_subjects[best] && n_scans[f] < n_scans[best]))
        best = f;
    ++n_subjects[best];
    n_scans[best] += scans[s].size();
    for (auto i : scans[s]) fold_of_entry[i] = best;
  }

  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) folds[f].fold = f;
  for (std::size_t i = 0; i < subject_of_entry.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (fold_of_entry[i] == f ? folds[f].test : folds[f].train).push_back(i);
  for (const auto& f : folds) check_no_leakage(f, subject_of_entry);
  return folds;
}

template <typename Rng>
std::vector<FoldSplit> group_kfold(const Dataset& ds, std::size_t k, Rng& rng) {
  return group_kfold(subject_ids(ds), k, rng);
}

/// Holds out the last `fraction` of the training subjects (in order of first appearance) for validation.
/// At least one subject is held out when two or more are available; none otherwise.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const std::vector<std::size_t>& train, const std::vector<std::string>& subject_of_entry, double fraction) {
  if (fraction < 0 || fraction >= 1) throw ValidationError("split_validation: fraction must lie in [0,1)");
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (auto i : train)
    if (seen.insert(subject_of_entry.at(i)).second) order.push_back(subject_of_entry[i]);
  std::size_t n_val = 0;
  if (fraction > 0 && order.size() >= 2)
    n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(order.size()))),
                                    1, order.size() - 1);
  const std::set<std::string> held(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (auto i : train) (held.count(subject_of_entry[i]) ? out.second : out.first).push_back(i);
  return out;
}

}  // namespace wcseg
