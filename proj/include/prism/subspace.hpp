#pragma once

// Pseudo-label subspace: the stacked basis W built from the correction
// matrices B_m, its cached residual projector I - W (WᵀW)⁻¹ Wᵀ, and the
// null-space regularization loss.
//
// Block m of W (rows mK .. mK+K-1) is B_m⁻¹. Pseudo-label vectors generated
// as p_m = A_m f therefore lie in range(W) exactly when B_m = A_m⁻¹.

#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "prism/errors.hpp"
#include "prism/numerics.hpp"

namespace prism {

struct Inversion {
  enum class Kind { neumann, exact };
  Kind kind = Kind::neumann;
  std::size_t order = 16;

  static Inversion neumann(std::size_t order = 16) { return {Kind::neumann, order}; }
  static Inversion exact() { return {Kind::exact, 0}; }

  std::string str() const {
    return kind == Kind::exact ? std::string("exact") : "neumann(" + std::to_string(order) + ")";
  }
};

enum class Reduction { sum, mean };

inline constexpr double kGramRidge = 1e-10;
inline constexpr double kNormFloor = 1e-12;

class SubspaceBasis {
 public:
  std::size_t blocks() const noexcept { return blocks_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t dim() const noexcept { return blocks_ * classes_; }

  const Matrix& basis() const noexcept { return w_; }
  const Matrix& gram_inverse() const noexcept { return gram_inv_; }
  const Matrix& projector_residual() const noexcept { return residual_; }
  // Per-block inverse B_m⁻¹ and whether the Neumann path produced it.
  const std::vector<Matrix>& block_inverses() const noexcept { return inverses_; }
  const std::vector<bool>& used_neumann() const noexcept { return used_neumann_; }
  bool ridged() const noexcept { return ridged_; }

  static SubspaceBasis from_inverses(std::vector<Matrix> inverses, std::vector<bool> used_neumann) {
    if (inverses.empty()) throw InvalidArgument("subspace basis needs at least one block");
    SubspaceBasis s;
    s.blocks_ = inverses.size();
    s.classes_ = inverses.front().rows();
    const std::size_t k = s.classes_;
    for (const auto& c : inverses) {
      if (c.rows() != k || c.cols() != k) throw DimensionError("basis blocks must all be KxK");
    }
    s.w_ = Matrix(s.blocks_ * k, k);
    for (std::size_t m = 0; m < s.blocks_; ++m)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) s.w_(m * k + i, j) = inverses[m](i, j);

    Matrix gram = matmul(transpose(s.w_), s.w_);
    try {
      s.gram_inv_ = exact_inverse(gram);
    } catch (const SingularMatrixError&) {
      std::cerr << "warning: Gram matrix pivot below tolerance, adding ridge " << kGramRidge << "\n";
      for (std::size_t i = 0; i < k; ++i) gram(i, i) += kGramRidge;
      try {
        s.gram_inv_ = exact_inverse(gram);
      } catch (const SingularMatrixError& e) {
        throw DegenerateBasisError(std::string("WᵀW singular: ") + e.what());
      }
      s.ridged_ = true;
    }
    if (s.blocks_ == 1) {
      // W is square and invertible: range(W) is everything, the null space is {0}.
      s.residual_ = Matrix(k, k);
    } else {
      const Matrix hat = matmul(matmul(s.w_, s.gram_inv_), transpose(s.w_));
      s.residual_ = add(Matrix::identity(s.dim()), hat, -1.0);
    }
    s.inverses_ = std::move(inverses);
    s.used_neumann_ = std::move(used_neumann);
    s.used_neumann_.resize(s.blocks_, false);
    return s;
  }

 private:
  SubspaceBasis() = default;

  std::size_t blocks_ = 0;
  std::size_t classes_ = 0;
  Matrix w_;
  Matrix gram_inv_;
  Matrix residual_;
  std::vector<Matrix> inverses_;
  std::vector<bool> used_neumann_;
  bool ridged_ = false;
};

// Inverts one correction matrix by the requested route. The Neumann route
// falls back to exact inversion when the guard ||I - B||_1 < 1 does not hold.
inline Matrix invert_block(const Matrix& b, const Inversion& inv, bool* used_neumann = nullptr) {
  if (inv.kind == Inversion::Kind::neumann && neumann_applicable(b)) {
    if (used_neumann) *used_neumann = true;
    return neumann_inverse(b, inv.order);
  }
  if (used_neumann) *used_neumann = false;
  return exact_inverse(b);
}

// Accepts any invertible KxK matrices. Trained models pass column-stochastic
// B_m; oracle tests pass raw inverses of confusion matrices.
inline SubspaceBasis build_basis(std::span<const Matrix> b_list, const Inversion& inversion) {
  if (b_list.empty()) throw InvalidArgument("build_basis needs M >= 1");
  const std::size_t k = b_list.front().rows();
  std::vector<Matrix> inverses;
  std::vector<bool> used;
  for (const auto& b : b_list) {
    if (!b.square() || b.rows() != k) throw DimensionError("every B_m must be KxK with equal K");
    bool n = false;
    inverses.push_back(invert_block(b, inversion, &n));
    used.push_back(n);
  }
  return SubspaceBasis::from_inverses(std::move(inverses), std::move(used));
}

// (I - W (WᵀW)⁻¹ Wᵀ) p
inline Vector null_projection(const SubspaceBasis& basis, std::span<const double> p) {
  if (p.size() != basis.dim()) {
    throw DimensionError("null_projection expects length " + std::to_string(basis.dim()) +
                         ", got " + std::to_string(p.size()));
  }
  return matvec(basis.projector_residual(), p);
}

// c = (WᵀW)⁻¹ Wᵀ p, the least-squares coordinates of p in range(W).
inline Vector range_coefficients(const SubspaceBasis& basis, std::span<const double> p) {
  if (p.size() != basis.dim()) throw DimensionError("range_coefficients length mismatch");
  return matvec(basis.gram_inverse(), matvec_t(basis.basis(), p));
}

// ||Proj_null(p)|| / ||p||, in [0, 1].
inline double reg_term(const SubspaceBasis& basis, std::span<const double> p) {
  const double pn = norm2(p);
  if (!(pn >= kNormFloor)) throw DegenerateInputError("reg_loss input vector has zero norm");
  const auto r = null_projection(basis, p);
  return norm2(r) / pn;
}

inline double reg_loss(const SubspaceBasis& basis, std::span<const Vector> batch,
                       Reduction reduction = Reduction::mean) {
  if (batch.empty()) throw InvalidArgument("reg_loss of empty batch");
  double s = 0.0;
  for (const auto& p : batch) s += reg_term(basis, p);
  return reduction == Reduction::mean ? s / static_cast<double>(batch.size()) : s;
}

// Reverse pass of one block inversion: given B, the route taken, and
// dL/d(B⁻¹), returns dL/dB.
//   exact:   d(B⁻¹) = -B⁻¹ dB B⁻¹  =>  dL/dB = -B⁻ᵀ G B⁻ᵀ
//   neumann: S_{t+1} = I + E S_t with E = I - B, S_0 = I, unrolled in reverse.
inline Matrix inverse_backward(const Matrix& b, const Matrix& b_inv, bool used_neumann,
                               std::size_t order, const Matrix& grad_inv) {
  const std::size_t k = b.rows();
  if (!used_neumann) {
    const Matrix it = transpose(b_inv);
    Matrix g = matmul(matmul(it, grad_inv), it);
    for (double& x : g.flat()) x = -x;
    return g;
  }
  const Matrix e = add(Matrix::identity(k), b, -1.0);
  std::vector<Matrix> partial;
  partial.reserve(order + 1);
  partial.push_back(Matrix::identity(k));
  for (std::size_t t = 0; t < order; ++t)
    partial.push_back(add(Matrix::identity(k), matmul(e, partial.back())));
  const Matrix et = transpose(e);
  Matrix grad_s = grad_inv;
  Matrix grad_e(k, k);
  for (std::size_t t = order; t-- > 0;) {
    grad_e = add(grad_e, matmul(grad_s, transpose(partial[t])));
    grad_s = matmul(et, grad_s);
  }
  for (double& x : grad_e.flat()) x = -x;
  return grad_e;
}

// Splits dL/dW into per-block dL/d(B_m⁻¹) and pushes each through inverse_backward.
inline std::vector<Matrix> basis_backward(std::span<const Matrix> b_list, const SubspaceBasis& basis,
                                          const Matrix& grad_w, const Inversion& inversion) {
  const std::size_t k = basis.classes();
  std::vector<Matrix> out;
  out.reserve(basis.blocks());
  for (std::size_t m = 0; m < basis.blocks(); ++m) {
    Matrix gm(k, k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) gm(i, j) = grad_w(m * k + i, j);
    out.push_back(inverse_backward(b_list[m], basis.block_inverses()[m], basis.used_neumann()[m],
                                   inversion.order, gm));
  }
  return out;
}

}  // namespace prism
