#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/detection.hpp"
#include "prism/errors.hpp"
#include "prism/numerics.hpp"

namespace prism {

// Fraction of OOD scores at or above the threshold that keeps tpr of the ID
// scores (same rule as calibrate_threshold).
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                         double tpr = 0.95) {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidArgument("fpr_at_tpr needs both score sets");
  const double tau = calibrate_threshold(id_scores, tpr);
  const auto hits = std::count_if(ood_scores.begin(), ood_scores.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(hits) / static_cast<double>(ood_scores.size());
}

// Mann-Whitney form: (#{id > ood} + 0.5 #{id == ood}) / (n_id n_ood), from the
// rank sum of the ID scores with average ranks for ties.
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidArgument("auroc needs both score sets");
  std::vector<std::pair<double, bool>> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.emplace_back(s, true);
  for (double s : ood_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Twice the rank sum keeps everything integral until the final division.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double twice_avg_rank = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) twice_rank_sum += twice_avg_rank;
    i = j;
  }
  const double n_id = static_cast<double>(id_scores.size());
  const double n_ood = static_cast<double>(ood_scores.size());
  const double twice_u = twice_rank_sum - n_id * (n_id + 1.0);
  return (0.5 * twice_u) / (n_id * n_ood);
}

inline double id_accuracy(std::span<const std::size_t> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
  if (predictions.empty()) throw InvalidArgument("id_accuracy of empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0 && predictions[i] == static_cast<std::size_t>(labels[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
};

// Bins are [lo, hi) except the last, which is closed. Without an explicit
// range the data's [min, max] is used (widened by 0.5 each way when the data
// is constant, [0, 1] when empty). Scores outside an explicit range are
// dropped.
inline std::vector<HistogramBin> histogram(std::span<const double> scores, std::size_t n_bins,
                                           std::optional<std::pair<double, double>> range = std::nullopt) {
  if (n_bins < 1) throw InvalidArgument("histogram needs at least one bin");
  double lo = 0.0, hi = 1.0;
  if (range) {
    std::tie(lo, hi) = *range;
    if (!(lo < hi)) throw InvalidArgument("histogram range needs lo < hi");
  } else if (!scores.empty()) {
    const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
    lo = *mn;
    hi = *mx;
    if (lo == hi) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lower = lo + width * static_cast<double>(b);
    bins[b].upper = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double s : scores) {
    if (!(s >= lo && s <= hi)) continue;
    auto b = static_cast<std::size_t>((s - lo) / width);
    b = std::min(b, n_bins - 1);
    // Correct for rounding in the division against the stored edges.
    while (b > 0 && s < bins[b].lower) --b;
    while (b + 1 < n_bins && s >= bins[b + 1].lower) ++b;
    ++bins[b].count;
  }
  return bins;
}

struct OodResult {
  std::string name;
  double fpr_at_tpr = 0.0;
  double auroc = 0.0;
};

struct EvalReport {
  std::vector<OodResult> entries;
  std::optional<double> id_accuracy;
  double tpr_level = 0.95;
  std::vector<HistogramBin> id_histogram;

  double mean_fpr() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.fpr_at_tpr;
    return entries.empty() ? 0.0 : s / static_cast<double>(entries.size());
  }
  double mean_auroc() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.auroc;
    return entries.empty() ? 0.0 : s / static_cast<double>(entries.size());
  }
};

inline OodResult evaluate_ood(std::string name, std::span<const double> id_scores,
                              std::span<const double> ood_scores, double tpr) {
  return {std::move(name), fpr_at_tpr(id_scores, ood_scores, tpr), auroc(id_scores, ood_scores)};
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Table layout: "dataset,fpr_at_95,auroc" rows, then a single summary line.
inline std::string report_csv(const EvalReport& r) {
  std::string out = "dataset,fpr_at_95,auroc\n";
  for (const auto& e : r.entries) out += e.name + "," + format_metric(e.fpr_at_tpr) + "," + format_metric(e.auroc) + "\n";
  out += "# summary tpr=" + format_metric(r.tpr_level) + " mean_fpr=" + format_metric(r.mean_fpr()) +
         " mean_auroc=" + format_metric(r.mean_auroc()) +
         " id_accuracy=" + (r.id_accuracy ? format_metric(*r.id_accuracy) : std::string("na")) + "\n";
  return out;
}

inline std::string histogram_csv(std::span<const HistogramBin> bins) {
  std::string out = "bin_lower,bin_upper,count\n";
  for (const auto& b : bins)
    out += format_metric(b.lower) + "," + format_metric(b.upper) + "," + std::to_string(b.count) + "\n";
  return out;
}

}  // namespace prism
