#pragma once

// kNN OOD scoring on l2-normalized penultimate features:
//   s(x) = -|| u(x) - u_(k) ||_2
// where u_(k) is the k-th nearest normalized training embedding. A sample is
// declared ID when s >= tau.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/errors.hpp"
#include "prism/numerics.hpp"

namespace prism {

inline constexpr double kFeatureNormFloor = 1e-12;
inline constexpr std::size_t kDefaultK = 10;

inline Vector l2_normalized(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n >= kFeatureNormFloor)) throw DegenerateInputError("feature vector has zero norm");
  Vector u(v.begin(), v.end());
  for (double& x : u) x /= n;
  return u;
}

class KnnIndex {
 public:
  explicit KnnIndex(std::span<const Vector> features) {
    if (features.empty()) throw InvalidArgument("knn index needs at least one feature");
    dim_ = features.front().size();
    if (dim_ == 0) throw DimensionError("knn features must be non-empty");
    rows_ = Matrix(features.size(), dim_);
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].size() != dim_) throw DimensionError("knn features have unequal lengths");
      const auto u = l2_normalized(features[i]);
      std::copy(u.begin(), u.end(), rows_.row(i).begin());
    }
  }

  std::size_t size() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return dim_; }
  const Matrix& embeddings() const noexcept { return rows_; }

 private:
  Matrix rows_;
  std::size_t dim_ = 0;
};

inline KnnIndex build_index(std::span<const Vector> features) { return KnnIndex(features); }

// Exact brute force. Squared distances are ranked with ties going to the
// lower training index; the square root is taken once at the end.
inline double knn_score(const KnnIndex& index, std::span<const double> h, std::size_t k) {
  if (k < 1 || k > index.size())
    throw InvalidArgument("k = " + std::to_string(k) + " outside [1, " + std::to_string(index.size()) + "]");
  if (h.size() != index.dim()) throw DimensionError("test feature length does not match index");
  const auto u = l2_normalized(h);
  std::vector<std::pair<double, std::size_t>> dist(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto r = index.embeddings().row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double diff = u[j] - r[j];
      s += diff * diff;
    }
    dist[i] = {s, i};
  }
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
  return -std::sqrt(dist[k - 1].first);
}

// Rank of the retained ID sample: ceil(tpr * n), guarded against products
// like 0.95 * 20 landing a hair above an integer.
inline std::size_t retained_count(std::size_t n, double tpr) {
  const double want = tpr * static_cast<double>(n);
  auto c = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
  return std::clamp<std::size_t>(c, 1, n);
}

// tau = the ceil(tpr * n)-th largest ID score, so at least that many ID
// scores satisfy s >= tau.
inline double calibrate_threshold(std::span<const double> id_scores, double tpr) {
  if (id_scores.empty()) throw InvalidArgument("calibrate_threshold needs ID scores");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw InvalidArgument("tpr must lie in (0, 1]");
  Vector s(id_scores.begin(), id_scores.end());
  const std::size_t r = retained_count(s.size(), tpr);
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(r - 1), s.end(), std::greater<>());
  return s[r - 1];
}

enum class Decision { id, ood };

inline Decision detect(double score, double tau) { return score >= tau ? Decision::id : Decision::ood; }

struct Detector {
  KnnIndex index;
  std::size_t k = kDefaultK;
  double tau = 0.0;

  double score(std::span<const double> h) const { return knn_score(index, h, k); }
  Decision operator()(std::span<const double> h) const { return detect(score(h), tau); }
};

}  // namespace prism
