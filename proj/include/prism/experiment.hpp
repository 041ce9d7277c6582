#pragma once

// One end-to-end run: train on the ID split, index the training embeddings,
// score ID and OOD test samples with kNN, and compute the report metrics.

#include <cstddef>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/detection.hpp"
#include "prism/metrics.hpp"
#include "prism/model.hpp"
#include "prism/training.hpp"

namespace prism {

struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
  std::size_t k = kDefaultK;
  double tpr = 0.95;
};

inline std::vector<Vector> embeddings(const PrismModel& model, const Dataset& ds) {
  std::vector<Vector> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(encode(model, ds.sample(i)));
  return out;
}

inline std::vector<std::size_t> predictions(const PrismModel& model, const Dataset& ds) {
  std::vector<std::size_t> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(argmax(forward(model, ds.sample(i)).f_hat));
  return out;
}

inline Vector knn_scores(const PrismModel& model, const KnnIndex& index, const Dataset& ds, std::size_t k) {
  Vector out;
  out.reserve(ds.size());
  for (const auto& h : embeddings(model, ds)) out.push_back(knn_score(index, h, k));
  return out;
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct ExperimentResult {
  FitResult fit;
  double id_accuracy = 0.0;
  OodResult ood;
  Vector id_scores;
  Vector ood_scores;
  Vector id_reg;
  Vector ood_reg;
};

inline ExperimentResult evaluate_model(FitResult fitted, const SyntheticSplits& data, std::size_t k, double tpr,
                                       const Inversion& inversion) {
  ExperimentResult r;
  r.fit = std::move(fitted);
  const auto& model = r.fit.model;
  const auto index = build_index(embeddings(model, data.train));
  r.id_scores = knn_scores(model, index, data.test_id, k);
  r.ood_scores = knn_scores(model, index, data.test_ood, k);
  r.id_accuracy = id_accuracy(predictions(model, data.test_id), data.test_id.y);
  r.ood = evaluate_ood("synthetic_ood", r.id_scores, r.ood_scores, tpr);
  r.id_reg = sample_reg_terms(model, data.test_id, inversion);
  r.ood_reg = sample_reg_terms(model, data.test_ood, inversion);
  return r;
}

inline ExperimentResult run_experiment(const SyntheticSplits& data, const ExperimentConfig& cfg) {
  return evaluate_model(fit(data.train, cfg.train), data, cfg.k, cfg.tpr, cfg.train.inversion);
}

}  // namespace prism
