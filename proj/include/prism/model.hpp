#pragma once

// The network: MLP encoder h(x), affine projection head to MK logits,
// blockwise softmax into M pseudo-label distributions, and the d-weighted
// recombination f̂ = Σ_m d_m B_m p_m with column-stochastic B_m.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/errors.hpp"
#include "prism/numerics.hpp"
#include "prism/rng.hpp"

namespace prism {

enum class InitVariant {
  identity_B_uniform_d,   // B_m ≈ I, d = 1/M, both learnable
  identity_B_learnable_d, // B_m ≈ I, d from random logits, learnable
  random_B_learnable_d,   // random B_m and d logits, learnable
  identity_B_fixed_d,     // B_m ≈ I, d = 1/M frozen
  linear_d,               // B_m ≈ I, d(x) = softmax(V h(x) + c)
};

inline constexpr std::string_view to_string(InitVariant v) {
  switch (v) {
    case InitVariant::identity_B_uniform_d: return "identity_B_uniform_d";
    case InitVariant::identity_B_learnable_d: return "identity_B_learnable_d";
    case InitVariant::random_B_learnable_d: return "random_B_learnable_d";
    case InitVariant::identity_B_fixed_d: return "identity_B_fixed_d";
    case InitVariant::linear_d: return "linear_d";
  }
  return "?";
}

inline InitVariant parse_init_variant(std::string_view s) {
  for (auto v : {InitVariant::identity_B_uniform_d, InitVariant::identity_B_learnable_d,
                 InitVariant::random_B_learnable_d, InitVariant::identity_B_fixed_d,
                 InitVariant::linear_d}) {
    if (to_string(v) == s) return v;
  }
  throw ParseError("unknown init variant '" + std::string(s) + "'");
}

struct ModelDims {
  std::size_t input = 0;              // D
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embed = 32;             // L
  std::size_t pseudo_labels = 3;      // M
  std::size_t classes = 2;            // K

  std::size_t mk() const noexcept { return pseudo_labels * classes; }
  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s{input};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(embed);
    return s;
  }
  bool operator==(const ModelDims&) const = default;
};

enum class ParamGroup { encoder, head, confusion, mixture };

inline constexpr std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::head: return "head";
    case ParamGroup::confusion: return "confusion";
    case ParamGroup::mixture: return "mixture";
  }
  return "?";
}

inline constexpr ParamGroup kParamGroups[] = {ParamGroup::encoder, ParamGroup::head,
                                              ParamGroup::confusion, ParamGroup::mixture};

// All trainable tensors. Gradients and optimizer moments reuse this layout.
struct Params {
  std::vector<Matrix> enc_w;  // layer l: out x in
  std::vector<Vector> enc_b;
  Matrix head_w;              // MK x L
  Vector head_b;
  std::vector<Matrix> confusion_logits;  // M tensors KxK
  Vector mixture_logits;                 // M
  Matrix mixture_w;                      // M x L, linear_d only
  Vector mixture_b;                      // M, linear_d only

  bool operator==(const Params&) const = default;
};

// Calls f(group, name, span) for every tensor, in a fixed order. Works for
// const and mutable Params alike.
template <typename P, typename F>
void visit_tensors(P& params, F&& f) {
  for (std::size_t l = 0; l < params.enc_w.size(); ++l) {
    f(ParamGroup::encoder, "encoder." + std::to_string(l) + ".weight", params.enc_w[l].flat());
    f(ParamGroup::encoder, "encoder." + std::to_string(l) + ".bias", std::span(params.enc_b[l]));
  }
  f(ParamGroup::head, std::string("head.weight"), params.head_w.flat());
  f(ParamGroup::head, std::string("head.bias"), std::span(params.head_b));
  for (std::size_t m = 0; m < params.confusion_logits.size(); ++m)
    f(ParamGroup::confusion, "confusion." + std::to_string(m), params.confusion_logits[m].flat());
  f(ParamGroup::mixture, std::string("mixture.logits"), std::span(params.mixture_logits));
  if (!params.mixture_w.empty()) {
    f(ParamGroup::mixture, std::string("mixture.weight"), params.mixture_w.flat());
    f(ParamGroup::mixture, std::string("mixture.bias"), std::span(params.mixture_b));
  }
}

inline Params zeros_like(const Params& p) {
  Params z = p;
  visit_tensors(z, [](ParamGroup, const std::string&, std::span<double> t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  return z;
}

// Diagonal confusion logit at initialization: softmax over a column with +4
// on the diagonal gives B_m close to I (exact I is not reachable).
inline constexpr double kIdentityLogit = 4.0;

struct PrismModel {
  ModelDims dims;
  InitVariant variant = InitVariant::identity_B_uniform_d;
  Params params;

  bool mixture_trainable() const noexcept { return variant != InitVariant::identity_B_fixed_d; }
  bool instance_mixture() const noexcept { return variant == InitVariant::linear_d; }
  bool operator==(const PrismModel&) const = default;
};

inline void validate(const ModelDims& d) {
  if (d.input == 0 || d.embed == 0) throw InvalidArgument("model input and embed dims must be > 0");
  if (d.pseudo_labels < 1) throw InvalidArgument("M must be >= 1");
  if (d.classes < 2) throw InvalidArgument("K must be >= 2");
  for (auto h : d.hidden)
    if (h == 0) throw InvalidArgument("hidden layer sizes must be > 0");
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline PrismModel init_model(const ModelDims& dims, InitVariant variant, std::uint64_t seed) {
  validate(dims);
  Rng rng(seed);
  auto fill_uniform = [&rng](Matrix& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (double& x : w.flat()) x = rng.uniform(-bound, bound);
  };
  PrismModel model;
  model.dims = dims;
  model.variant = variant;
  Params& p = model.params;
  const auto sizes = dims.layer_sizes();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    p.enc_w.emplace_back(sizes[l + 1], sizes[l]);
    fill_uniform(p.enc_w.back());
    p.enc_b.emplace_back(sizes[l + 1], 0.0);
  }
  p.head_w = Matrix(dims.mk(), dims.embed);
  fill_uniform(p.head_w);
  p.head_b.assign(dims.mk(), 0.0);

  const std::size_t k = dims.classes;
  const std::size_t m = dims.pseudo_labels;
  for (std::size_t i = 0; i < m; ++i) {
    Matrix logits(k, k);
    if (variant == InitVariant::random_B_learnable_d) {
      for (double& x : logits.flat()) x = rng.gaussian();
    } else {
      for (std::size_t j = 0; j < k; ++j) logits(j, j) = kIdentityLogit;
    }
    p.confusion_logits.push_back(std::move(logits));
  }
  p.mixture_logits.assign(m, 0.0);
  if (variant == InitVariant::identity_B_learnable_d || variant == InitVariant::random_B_learnable_d) {
    for (double& x : p.mixture_logits) x = rng.gaussian();
  }
  if (variant == InitVariant::linear_d) {
    p.mixture_w = Matrix(m, dims.embed);
    fill_uniform(p.mixture_w);
    p.mixture_b.assign(m, 0.0);
  }
  return model;
}

// Per-layer state kept for the reverse pass.
struct EncoderTrace {
  std::vector<Vector> inputs;  // input to layer l
  std::vector<Vector> preact;  // W_l a + b_l
};

inline Vector encode(const PrismModel& model, std::span<const double> x, EncoderTrace* trace = nullptr) {
  if (x.size() != model.dims.input) {
    throw DimensionError("encode expects input length " + std::to_string(model.dims.input) +
                         ", got " + std::to_string(x.size()));
  }
  const auto& p = model.params;
  Vector a(x.begin(), x.end());
  for (std::size_t l = 0; l < p.enc_w.size(); ++l) {
    Vector z = matvec(p.enc_w[l], a);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += p.enc_b[l][i];
    if (trace) {
      trace->inputs.push_back(a);
      trace->preact.push_back(z);
    }
    const bool last = l + 1 == p.enc_w.size();
    if (!last)
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    a = std::move(z);
  }
  return a;
}

inline Vector project(const PrismModel& model, std::span<const double> h) {
  if (h.size() != model.dims.embed) {
    throw DimensionError("project expects length " + std::to_string(model.dims.embed) + ", got " +
                         std::to_string(h.size()));
  }
  Vector t = matvec(model.params.head_w, h);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += model.params.head_b[i];
  return t;
}

inline Vector pseudo_label_probs(std::span<const double> tilde_h, std::size_t m, std::size_t k) {
  return blockwise_softmax(tilde_h, m, k);
}

inline std::vector<Matrix> confusion_matrices(const PrismModel& model) {
  std::vector<Matrix> out;
  out.reserve(model.params.confusion_logits.size());
  for (const auto& l : model.params.confusion_logits) out.push_back(column_stochastic_from_logits(l));
  return out;
}

// d for one sample. Equal to softmax(mixture_logits) unless the variant makes
// d depend on h.
inline Vector mixture_weights(const PrismModel& model, std::span<const double> h) {
  if (!model.instance_mixture()) return softmax(model.params.mixture_logits);
  Vector logits = matvec(model.params.mixture_w, h);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += model.params.mixture_b[i];
  return softmax(logits);
}

// Σ_m d_m B_m p_m for arbitrary KxK matrices (no simplex requirement).
inline Vector recombine_raw(std::span<const Matrix> b_list, std::span<const double> d,
                            std::span<const double> p) {
  if (b_list.empty()) throw DimensionError("recombine needs at least one block");
  const std::size_t k = b_list.front().rows();
  if (d.size() != b_list.size() || p.size() != b_list.size() * k) {
    throw DimensionError("recombine: |d| = " + std::to_string(d.size()) + ", |p| = " +
                         std::to_string(p.size()) + " for M = " + std::to_string(b_list.size()) +
                         ", K = " + std::to_string(k));
  }
  Vector f(k, 0.0);
  for (std::size_t m = 0; m < b_list.size(); ++m) {
    if (b_list[m].rows() != k || b_list[m].cols() != k) throw DimensionError("B_m must be KxK");
    const auto bp = matvec(b_list[m], p.subspan(m * k, k));
    for (std::size_t i = 0; i < k; ++i) f[i] += d[m] * bp[i];
  }
  return f;
}

// Trained path: B_m column-stochastic, d on the simplex, p blocks on the
// simplex, so the result is a probability vector.
inline Vector recombine(std::span<const Matrix> b_list, std::span<const double> d,
                        std::span<const double> p) {
  return recombine_raw(b_list, d, p);
}

struct ForwardOutput {
  Vector h;
  Vector p;
  Vector f_hat;
};

inline ForwardOutput forward(const PrismModel& model, std::span<const double> x) {
  ForwardOutput out;
  out.h = encode(model, x);
  out.p = pseudo_label_probs(project(model, out.h), model.dims.pseudo_labels, model.dims.classes);
  const auto b = confusion_matrices(model);
  out.f_hat = recombine(b, mixture_weights(model, out.h), out.p);
  return out;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace prism
