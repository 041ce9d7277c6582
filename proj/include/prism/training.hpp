#pragma once

// Criterion L_CE + lambda * L_reg, its hand-written reverse pass, the per-group
// optimizers, the fit loop, and a finite-difference gradient checker.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/errors.hpp"
#include "prism/model.hpp"
#include "prism/numerics.hpp"
#include "prism/rng.hpp"
#include "prism/subspace.hpp"

namespace prism {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double lambda = 0.05;
  std::size_t pseudo_labels = 3;  // M
  std::size_t classes = 4;        // K
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embed = 32;         // L
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr_theta = 0.05;
  double lr_B = 0.01;
  double momentum = 0.9;
  double weight_decay_theta = 1e-4;
  double weight_decay_B = 1e-6;
  OptimizerKind optimizer_B = OptimizerKind::adam;
  Inversion inversion = Inversion::neumann(16);
  std::uint64_t seed = 7;
  InitVariant init_variant = InitVariant::identity_B_uniform_d;
  bool freeze_B_in_reg = false;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw InvalidArgument("lambda must be >= 0");
  if (c.pseudo_labels < 1) throw InvalidArgument("M must be >= 1");
  if (c.classes < 2) throw InvalidArgument("K must be >= 2");
  if (c.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (c.lr_theta < 0.0 || c.lr_B < 0.0) throw InvalidArgument("learning rates must be >= 0");
}

inline ModelDims model_dims(const TrainConfig& c, std::size_t input_dim) {
  ModelDims d;
  d.input = input_dim;
  d.hidden = c.hidden;
  d.embed = c.embed;
  d.pseudo_labels = c.pseudo_labels;
  d.classes = c.classes;
  return d;
}

inline constexpr double kProbFloor = 1e-12;

struct Batch {
  std::vector<Vector> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  for (auto i : indices) {
    const auto r = ds.sample(i);
    b.x.emplace_back(r.begin(), r.end());
    b.y.push_back(ds.y[i]);
  }
  return b;
}

inline Batch whole(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(ds, idx);
}

// Mean of -log(max(f̂_y, 1e-12)).
inline double ce_loss(std::span<const Vector> f_hat, std::span<const int> labels) {
  if (f_hat.empty()) throw InvalidArgument("ce_loss of empty batch");
  if (f_hat.size() != labels.size()) throw DimensionError("ce_loss batch lengths differ");
  double s = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= f_hat[n].size())
      throw InvalidArgument("label " + std::to_string(labels[n]) + " out of range");
    s -= std::log(std::max(f_hat[n][static_cast<std::size_t>(labels[n])], kProbFloor));
  }
  return s / static_cast<double>(labels.size());
}

struct LossValue {
  double total = 0.0;
  double ce = 0.0;
  double reg = 0.0;
  std::size_t correct = 0;  // argmax(f̂) == y within the batch
};

inline SubspaceBasis basis_of(const PrismModel& model, const Inversion& inversion) {
  const auto b = confusion_matrices(model);
  return build_basis(b, inversion);
}

// Evaluates the criterion on a batch and, when grad is given, writes dL/dθ
// for every parameter into it (same layout as model.params). basis_source
// selects whose confusion logits build W; gradients through W flow into the
// model's own logits only when basis_source is null and freeze_B_in_reg is
// off.
inline LossValue evaluate(const PrismModel& model, const Batch& batch, const TrainConfig& cfg,
                          Params* grad = nullptr, const PrismModel* basis_source = nullptr) {
  if (batch.size() == 0) throw InvalidArgument("empty batch");
  const auto& dims = model.dims;
  const std::size_t k = dims.classes;
  const std::size_t m_count = dims.pseudo_labels;
  const std::size_t mk = dims.mk();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  const auto b_list = confusion_matrices(model);
  const auto basis = basis_source ? basis_of(*basis_source, cfg.inversion) : build_basis(b_list, cfg.inversion);
  const bool reg_into_b = !basis_source && !cfg.freeze_B_in_reg;
  const auto& params = model.params;

  Vector d_shared;
  if (!model.instance_mixture()) d_shared = softmax(params.mixture_logits);

  if (grad) *grad = zeros_like(params);
  std::vector<Matrix> grad_b(m_count, Matrix(k, k));
  Matrix grad_w(mk, k);
  Vector grad_d_shared(m_count, 0.0);

  LossValue out;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const int label = batch.y[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw InvalidArgument("label " + std::to_string(label) + " out of range");
    const auto y = static_cast<std::size_t>(label);

    EncoderTrace trace;
    const Vector h = encode(model, batch.x[n], grad ? &trace : nullptr);
    const Vector p = pseudo_label_probs(project(model, h), m_count, k);
    const Vector d = model.instance_mixture() ? mixture_weights(model, h) : d_shared;

    std::vector<Vector> bp(m_count);
    Vector f(k, 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
      bp[m] = matvec(b_list[m], std::span(p).subspan(m * k, k));
      for (std::size_t i = 0; i < k; ++i) f[i] += d[m] * bp[m][i];
    }
    out.ce -= std::log(std::max(f[y], kProbFloor));
    if (argmax(f) == y) ++out.correct;

    const double pn = norm2(p);
    if (!(pn >= kNormFloor)) throw DegenerateInputError("pseudo-label vector has zero norm");
    const Vector r = null_projection(basis, p);
    const double rn = norm2(r);
    out.reg += rn / pn;

    if (!grad) continue;
    Params& g = *grad;

    // Cross-entropy through f = Σ d_m B_m p_m.
    Vector g_f(k, 0.0);
    if (f[y] > kProbFloor) g_f[y] = -inv_n / f[y];
    Vector g_p(mk, 0.0);
    Vector g_d(m_count, 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
      g_d[m] = dot(bp[m], g_f);
      const auto pm = std::span(p).subspan(m * k, k);
      for (std::size_t i = 0; i < k; ++i) {
        if (g_f[i] == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) grad_b[m](i, j) += d[m] * g_f[i] * pm[j];
      }
      const auto bt = matvec_t(b_list[m], g_f);
      for (std::size_t j = 0; j < k; ++j) g_p[m * k + j] += d[m] * bt[j];
    }

    // Regularizer ||r|| / ||p|| with r = p - W c. For fixed W the gradient in
    // p is r/(|r||p|) - |r| p/|p|^3; in W it is -r cᵀ / (|r||p|), the
    // envelope of the least-squares fit.
    if (cfg.lambda > 0.0 && rn > 0.0) {
      const double coef = cfg.lambda * inv_n;
      const double a = coef / (rn * pn);
      const double b = coef * rn / (pn * pn * pn);
      for (std::size_t i = 0; i < mk; ++i) g_p[i] += a * r[i] - b * p[i];
      if (reg_into_b) {
        const auto c = range_coefficients(basis, p);
        for (std::size_t i = 0; i < mk; ++i)
          for (std::size_t j = 0; j < k; ++j) grad_w(i, j) -= a * r[i] * c[j];
      }
    }

    // Blockwise softmax, then the projection head.
    Vector g_t(mk);
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto gm = softmax_backward(std::span(p).subspan(m * k, k), std::span(g_p).subspan(m * k, k));
      std::copy(gm.begin(), gm.end(), g_t.begin() + static_cast<std::ptrdiff_t>(m * k));
    }
    for (std::size_t i = 0; i < mk; ++i) {
      g.head_b[i] += g_t[i];
      auto row = g.head_w.row(i);
      for (std::size_t j = 0; j < h.size(); ++j) row[j] += g_t[i] * h[j];
    }
    Vector g_h = matvec_t(params.head_w, g_t);

    if (model.instance_mixture()) {
      const auto g_phi = softmax_backward(d, g_d);
      for (std::size_t m = 0; m < m_count; ++m) {
        g.mixture_b[m] += g_phi[m];
        auto row = g.mixture_w.row(m);
        for (std::size_t j = 0; j < h.size(); ++j) row[j] += g_phi[m] * h[j];
      }
      const auto back = matvec_t(params.mixture_w, g_phi);
      for (std::size_t j = 0; j < h.size(); ++j) g_h[j] += back[j];
    } else {
      for (std::size_t m = 0; m < m_count; ++m) grad_d_shared[m] += g_d[m];
    }

    // Encoder, last layer first. Hidden layers are ReLU, the last is linear.
    Vector g_a = std::move(g_h);
    for (std::size_t l = params.enc_w.size(); l-- > 0;) {
      const bool last = l + 1 == params.enc_w.size();
      Vector g_z = g_a;
      if (!last)
        for (std::size_t i = 0; i < g_z.size(); ++i)
          if (!(trace.preact[l][i] > 0.0)) g_z[i] = 0.0;
      const auto& in = trace.inputs[l];
      for (std::size_t i = 0; i < g_z.size(); ++i) {
        if (g_z[i] == 0.0) continue;
        g.enc_b[l][i] += g_z[i];
        auto row = g.enc_w[l].row(i);
        for (std::size_t j = 0; j < in.size(); ++j) row[j] += g_z[i] * in[j];
      }
      if (l > 0) g_a = matvec_t(params.enc_w[l], g_z);
    }
  }
  out.ce *= inv_n;
  out.reg *= inv_n;
  out.total = out.ce + cfg.lambda * out.reg;

  if (grad) {
    Params& g = *grad;
    if (!model.instance_mixture()) g.mixture_logits = softmax_backward(d_shared, grad_d_shared);
    std::vector<Matrix> reg_b;
    if (reg_into_b && cfg.lambda > 0.0) reg_b = basis_backward(b_list, basis, grad_w, cfg.inversion);
    for (std::size_t m = 0; m < m_count; ++m) {
      const Matrix total_b = reg_b.empty() ? grad_b[m] : add(grad_b[m], reg_b[m]);
      g.confusion_logits[m] = column_stochastic_backward(b_list[m], total_b);
    }
    visit_tensors(g, [](ParamGroup group, const std::string& name, std::span<const double> t) {
      if (!all_finite(t))
        throw NumericalInstabilityError("non-finite gradient in group " + std::string(to_string(group)) +
                                        " (" + name + ")");
    });
  }
  return out;
}

inline LossValue total_loss(const PrismModel& model, const Batch& batch, const TrainConfig& cfg) {
  return evaluate(model, batch, cfg);
}

inline Params backward(const PrismModel& model, const Batch& batch, const TrainConfig& cfg) {
  Params g;
  evaluate(model, batch, cfg, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct OptimizerState {
  Params velocity;  // SGD momentum buffers
  Params first;     // Adam moments
  Params second;
  std::size_t adam_steps = 0;
  bool initialized = false;
};

inline bool is_theta(ParamGroup g) { return g == ParamGroup::encoder || g == ParamGroup::head; }

// SGD with momentum (v = mu v + g + wd θ; θ -= lr v) for the network groups;
// SGD or Adam for the confusion and mixture logits. Weight decay enters as an
// L2 gradient term.
inline void step(Params& params, const Params& grads, OptimizerState& state, const TrainConfig& cfg,
                 bool mixture_trainable = true) {
  if (!state.initialized) {
    state.velocity = zeros_like(params);
    state.first = zeros_like(params);
    state.second = zeros_like(params);
    state.initialized = true;
  }
  std::vector<std::span<double>> p_t, v_t, m1_t, m2_t;
  std::vector<std::span<const double>> g_t;
  std::vector<ParamGroup> groups;
  visit_tensors(params, [&](ParamGroup grp, const std::string&, std::span<double> t) {
    p_t.push_back(t);
    groups.push_back(grp);
  });
  visit_tensors(grads, [&](ParamGroup, const std::string&, std::span<const double> t) { g_t.push_back(t); });
  visit_tensors(state.velocity, [&](ParamGroup, const std::string&, std::span<double> t) { v_t.push_back(t); });
  visit_tensors(state.first, [&](ParamGroup, const std::string&, std::span<double> t) { m1_t.push_back(t); });
  visit_tensors(state.second, [&](ParamGroup, const std::string&, std::span<double> t) { m2_t.push_back(t); });
  if (g_t.size() != p_t.size()) throw DimensionError("gradient layout does not match parameters");

  const bool adam = cfg.optimizer_B == OptimizerKind::adam;
  if (adam) ++state.adam_steps;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.adam_steps));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.adam_steps));

  for (std::size_t t = 0; t < p_t.size(); ++t) {
    if (g_t[t].size() != p_t[t].size()) throw DimensionError("gradient tensor shape mismatch");
    const ParamGroup grp = groups[t];
    if (grp == ParamGroup::mixture && !mixture_trainable) continue;
    auto p = p_t[t];
    const auto g = g_t[t];
    if (is_theta(grp) || !adam) {
      const double lr = is_theta(grp) ? cfg.lr_theta : cfg.lr_B;
      const double wd = is_theta(grp) ? cfg.weight_decay_theta : cfg.weight_decay_B;
      auto v = v_t[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i] + wd * p[i];
        p[i] -= lr * v[i];
      }
    } else {
      auto m1 = m1_t[t];
      auto m2 = m2_t[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] + cfg.weight_decay_B * p[i];
        m1[i] = kAdamBeta1 * m1[i] + (1.0 - kAdamBeta1) * gi;
        m2[i] = kAdamBeta2 * m2[i] + (1.0 - kAdamBeta2) * gi * gi;
        p[i] -= cfg.lr_B * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + kAdamEps);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Fit loop

struct EpochRecord {
  double ce = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  // epoch,ce,reg,total,acc with 9 significant digits.
  std::string csv() const {
    auto fmt = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", v);
      return std::string(buf);
    };
    std::string out = "epoch,ce,reg,total,acc\n";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      const auto& r = epochs[e];
      out += std::to_string(e) + "," + fmt(r.ce) + "," + fmt(r.reg) + "," + fmt(r.total) + "," + fmt(r.accuracy) + "\n";
    }
    return out;
  }
};

struct FitResult {
  PrismModel model;
  TrainLog log;
};

// Deterministic for a given (dataset, config): initialization draws from
// seed + 1, epoch permutations from seed + 2, and every reduction runs in
// sample order. The final partial batch of each epoch is kept.
inline FitResult fit(const Dataset& train, const TrainConfig& cfg) {
  validate(cfg);
  if (train.size() == 0) throw InvalidArgument("fit on empty dataset");
  for (int y : train.y)
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.classes)
      throw InvalidArgument("training label " + std::to_string(y) + " outside [0, K)");

  FitResult res{init_model(model_dims(cfg, train.x.cols()), cfg.init_variant, cfg.seed + seed_offset::kInit), {}};
  Rng shuffle_rng(cfg.seed + seed_offset::kShuffle);
  OptimizerState opt;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    EpochRecord rec;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch batch = make_batch(train, std::span(order).subspan(start, end - start));
      Params grad;
      const auto lv = evaluate(res.model, batch, cfg, &grad);
      if (!std::isfinite(lv.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      const double w = static_cast<double>(batch.size());
      rec.ce += lv.ce * w;
      rec.reg += lv.reg * w;
      rec.total += lv.total * w;
      correct += lv.correct;
      step(res.model.params, grad, opt, cfg, res.model.mixture_trainable());
    }
    const double n = static_cast<double>(train.size());
    rec.ce /= n;
    rec.reg /= n;
    rec.total /= n;
    rec.accuracy = static_cast<double>(correct) / n;
    res.log.epochs.push_back(rec);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checking

// Central differences of the full criterion in every coordinate, compared to
// evaluate()'s analytic gradient. Relative error uses max(|a|, |n|, 1e-8) as
// denominator. With freeze_B_in_reg the basis is held at the unperturbed
// logits so both sides see the same stopped path.
inline std::map<ParamGroup, double> grad_check(const PrismModel& model, const Batch& batch,
                                               const TrainConfig& cfg, double eps = 1e-5) {
  if (!(eps > 0.0)) throw InvalidArgument("eps must be > 0");
  Params analytic;
  evaluate(model, batch, cfg, &analytic);
  const PrismModel* frozen = cfg.freeze_B_in_reg ? &model : nullptr;

  std::vector<std::span<const double>> a_t;
  visit_tensors(analytic, [&](ParamGroup, const std::string&, std::span<const double> t) { a_t.push_back(t); });

  std::map<ParamGroup, double> worst;
  PrismModel probe = model;
  std::size_t idx = 0;
  std::vector<std::pair<ParamGroup, std::span<double>>> probe_t;
  visit_tensors(probe.params, [&](ParamGroup g, const std::string&, std::span<double> t) { probe_t.emplace_back(g, t); });
  for (const auto& [group, t] : probe_t) {
    worst.try_emplace(group, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = evaluate(probe, batch, cfg, nullptr, frozen).total;
      t[i] = orig - eps;
      const double down = evaluate(probe, batch, cfg, nullptr, frozen).total;
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = a_t[idx][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst[group] = std::max(worst[group], rel);
    }
    ++idx;
  }
  return worst;
}

// Per-sample ||Proj_null(p(x))|| / ||p(x)|| under the model's current basis.
inline Vector sample_reg_terms(const PrismModel& model, const Dataset& ds, const Inversion& inversion) {
  const auto basis = basis_of(model, inversion);
  Vector out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto fo = forward(model, ds.sample(i));
    out.push_back(reg_term(basis, fo.p));
  }
  return out;
}

}  // namespace prism
