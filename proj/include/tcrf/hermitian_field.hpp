#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "tcrf/basic_form.hpp"

namespace tcrf {

/// Field of Hermitian n×n matrices H_{jk̄}, standing for the real (1,1)-form
/// i Σ H_{jk̄} dz^j ∧ dz̄^k. Diagonal entries are real arrays; entries above
/// the diagonal are complex arrays; H_{kj̄} = conj(H_{jk̄}).
class HermitianField {
 public:
  HermitianField() = default;
  explicit HermitianField(ModelPtr model) : model_(std::move(model)) {
    const int n = model_->n();
    diag_.assign(n, RealArray(model_->size(), 0.0));
    off_.assign(n * (n - 1) / 2, ComplexArray(model_->size(), cplx{}));
  }
  static HermitianField constant(ModelPtr model, const Eigen::MatrixXcd& A) {
    HermitianField h(std::move(model));
    const int n = h.n();
    if (A.rows() != n || A.cols() != n) throw ContractViolation("constant matrix has wrong size");
    for (int j = 0; j < n; ++j) std::fill(h.diag_[j].begin(), h.diag_[j].end(), A(j, j).real());
    for (int j = 0; j < n; ++j)
      for (int k = j + 1; k < n; ++k) std::fill(h.off(j, k).begin(), h.off(j, k).end(), A(j, k));
    return h;
  }
  static HermitianField scaled_identity(const BasicField& f) {
    HermitianField h(f.model);
    for (int j = 0; j < h.n(); ++j) h.diag_[j] = f.values;
    return h;
  }

  const ModelPtr& model() const { return model_; }
  int n() const { return model_->n(); }
  std::size_t size() const { return model_->size(); }

  RealArray& diag(int j) { return diag_[j]; }
  const RealArray& diag(int j) const { return diag_[j]; }
  /// Entry (j, k) with j < k.
  ComplexArray& off(int j, int k) { return off_[pair_index(j, k)]; }
  const ComplexArray& off(int j, int k) const { return off_[pair_index(j, k)]; }

  cplx entry(int j, int k, std::size_t i) const {
    if (j == k) return diag_[j][i];
    if (j < k) return off_[pair_index(j, k)][i];
    return std::conj(off_[pair_index(k, j)][i]);
  }
  Eigen::MatrixXcd at(std::size_t i) const {
    const int n = this->n();
    Eigen::MatrixXcd A(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) A(j, k) = entry(j, k, i);
    return A;
  }
  /// Stores the Hermitian part of A at point i.
  void set(std::size_t i, const Eigen::MatrixXcd& A) {
    const int n = this->n();
    for (int j = 0; j < n; ++j) {
      diag_[j][i] = A(j, j).real();
      for (int k = j + 1; k < n; ++k) off_[pair_index(j, k)][i] = 0.5 * (A(j, k) + std::conj(A(k, j)));
    }
  }
  /// Grid average (the harmonic part for closed forms on the torus).
  Eigen::MatrixXcd average() const {
    const int n = this->n();
    Eigen::MatrixXcd A(n, n);
    for (int j = 0; j < n; ++j) {
      A(j, j) = mean(diag_[j]);
      for (int k = j + 1; k < n; ++k) {
        cplx s = 0.0;
        for (const auto& v : off(j, k)) s += v;
        A(j, k) = s / static_cast<double>(size());
        A(k, j) = std::conj(A(j, k));
      }
    }
    return A;
  }

  HermitianField& operator+=(const HermitianField& o) {
    for (int j = 0; j < n(); ++j)
      for (std::size_t i = 0; i < size(); ++i) diag_[j][i] += o.diag_[j][i];
    for (std::size_t p = 0; p < off_.size(); ++p)
      for (std::size_t i = 0; i < size(); ++i) off_[p][i] += o.off_[p][i];
    return *this;
  }
  HermitianField& operator-=(const HermitianField& o) {
    HermitianField neg = o;
    neg *= -1.0;
    return *this += neg;
  }
  HermitianField& operator*=(double s) {
    for (auto& d : diag_)
      for (auto& v : d) v *= s;
    for (auto& o : off_)
      for (auto& v : o) v *= s;
    return *this;
  }
  friend HermitianField operator+(HermitianField a, const HermitianField& b) { return a += b; }
  friend HermitianField operator-(HermitianField a, const HermitianField& b) { return a -= b; }
  friend HermitianField operator*(double s, HermitianField a) { return a *= s; }

 private:
  int pair_index(int j, int k) const {
    const int n = this->n();
    return j * n - j * (j + 1) / 2 + (k - j - 1);
  }

  ModelPtr model_;
  std::vector<RealArray> diag_;
  std::vector<ComplexArray> off_;
};

inline double sup_norm(const HermitianField& h) {
  double m = 0.0;
  for (int j = 0; j < h.n(); ++j) {
    m = std::max(m, sup_norm(h.diag(j)));
    for (int k = j + 1; k < h.n(); ++k)
      for (const auto& v : h.off(j, k)) m = std::max(m, std::abs(v));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Pointwise Hermitian linear algebra. Closed forms for n ≤ 2, Eigen's
// self-adjoint solver otherwise.

struct EigenRange {
  double min;
  double max;
};

namespace pointwise {
inline EigenRange range2(double a, double d, cplx c) {
  const double m = 0.5 * (a + d);
  const double r = std::hypot(0.5 * (a - d), std::abs(c));
  return {m - r, m + r};
}

inline EigenRange eigen_range(const HermitianField& h, std::size_t i) {
  switch (h.n()) {
    case 1:
      return {h.diag(0)[i], h.diag(0)[i]};
    case 2:
      return range2(h.diag(0)[i], h.diag(1)[i], h.off(0, 1)[i]);
    default: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h.at(i), Eigen::EigenvaluesOnly);
      return {es.eigenvalues()(0), es.eigenvalues()(h.n() - 1)};
    }
  }
}

inline double det(const HermitianField& h, std::size_t i) {
  switch (h.n()) {
    case 1:
      return h.diag(0)[i];
    case 2:
      return h.diag(0)[i] * h.diag(1)[i] - std::norm(h.off(0, 1)[i]);
    default:
      return h.at(i).determinant().real();
  }
}

/// Smallest eigenvalue and a unit eigenvector for it.
inline std::pair<double, Eigen::VectorXcd> min_eigenpair(const Eigen::MatrixXcd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A);
  return {es.eigenvalues()(0), es.eigenvectors().col(0)};
}
}  // namespace pointwise

inline RealArray min_eigenvalues(const HermitianField& h) {
  RealArray out(h.size());
  parallel_for(h.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = pointwise::eigen_range(h, i).min;
  });
  return out;
}

inline EigenRange eigen_bounds(const HermitianField& h) {
  EigenRange r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto e = pointwise::eigen_range(h, i);
    r.min = std::min(r.min, e.min);
    r.max = std::max(r.max, e.max);
  }
  return r;
}

/// Pointwise log det; throws PositivityLoss at the first point (in index
/// order) whose smallest eigenvalue is not above `threshold`.
inline RealArray log_det(const HermitianField& h, double threshold = 1e-12) {
  RealArray out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto e = pointwise::eigen_range(h, i);
    if (!(e.min > threshold)) throw PositivityLoss(i, e.min);
    out[i] = std::log(pointwise::det(h, i));
  }
  return out;
}

/// Pointwise inverse of a positive field.
inline HermitianField inverse(const HermitianField& h) {
  HermitianField out(h.model());
  const int n = h.n();
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (n == 1) {
      out.diag(0)[i] = 1.0 / h.diag(0)[i];
    } else if (n == 2) {
      const double d = pointwise::det(h, i);
      out.diag(0)[i] = h.diag(1)[i] / d;
      out.diag(1)[i] = h.diag(0)[i] / d;
      out.off(0, 1)[i] = -h.off(0, 1)[i] / d;
    } else {
      out.set(i, h.at(i).inverse());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral operators on real fields

namespace detail {
/// Applies the real even Fourier multiplier `symbol(k)` to a real field.
template <class Symbol>
RealArray real_multiplier(const TransverseModel& model, const ComplexArray& half_in, Symbol&& symbol) {
  const auto& hk = model.spectral().half_k();
  const int dims = model.dims();
  ComplexArray half(half_in.size());
  for (std::size_t m = 0; m < half.size(); ++m) half[m] = half_in[m] * symbol(&hk[m * dims]);
  RealArray out;
  model.spectral().c2r(half, out);
  return out;
}
}  // namespace detail

/// H_{jk̄} = ∂_j∂̄_k ψ, so that i∂_B∂̄_B ψ is represented by H.
inline HermitianField ddbar(const BasicField& psi) {
  const auto& model = *psi.model;
  HermitianField h(psi.model);
  ComplexArray half;
  model.spectral().r2c(psi.values, half);
  const int n = model.n();
  for (int j = 0; j < n; ++j) {
    h.diag(j) = detail::real_multiplier(model, half, [j](const std::int8_t* k) { return ddbar_symbol(k, j, j).real(); });
    for (int l = j + 1; l < n; ++l) {
      const RealArray re =
          detail::real_multiplier(model, half, [j, l](const std::int8_t* k) { return ddbar_symbol(k, j, l).real(); });
      const RealArray im =
          detail::real_multiplier(model, half, [j, l](const std::int8_t* k) { return ddbar_symbol(k, j, l).imag(); });
      auto& o = h.off(j, l);
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = cplx(re[i], im[i]);
    }
  }
  return h;
}

/// Σ_j ∂_j∂̄_j ψ (one quarter of the flat real Laplacian).
inline BasicField complex_laplacian(const BasicField& psi) {
  const auto& model = *psi.model;
  ComplexArray half;
  model.spectral().r2c(psi.values, half);
  const int n = model.n();
  RealArray out = detail::real_multiplier(model, half, [n](const std::int8_t* k) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += ddbar_symbol(k, j, j).real();
    return s;
  });
  return {psi.model, std::move(out)};
}

/// The (1,1)-form i Σ H_{jk̄} dz^j ∧ dz̄^k.
inline BasicForm to_form(const HermitianField& h) {
  BasicForm out(h.model(), 2);
  const int n = h.n();
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      auto& c = out.component(IndexMask{1} << j, IndexMask{1} << k);
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = cplx(0.0, 1.0) * h.entry(j, k, i);
    }
  return out;
}

/// Inverse of to_form for a real (1,1)-form; throws ContractViolation when the
/// form has other bidegrees or is not real beyond `tolerance`.
inline HermitianField from_form(const BasicForm& f, double tolerance = 1e-10) {
  const int n = f.model()->n();
  if (f.degree() != 2) throw ContractViolation("expected a 2-form");
  for (const auto& [key, c] : f.components())
    if (forms::count(key.first) != 1 && sup_norm(c) > tolerance) throw ContractViolation("2-form is not of type (1,1)");
  HermitianField h(f.model());
  auto coeff = [&](int j, int k, std::size_t i) -> cplx {
    const ComplexArray* c = f.find(IndexMask{1} << j, IndexMask{1} << k);
    return c ? cplx(0.0, -1.0) * (*c)[i] : cplx{};
  };
  double defect = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (int j = 0; j < n; ++j)
      for (int k = j; k < n; ++k) {
        const cplx a = coeff(j, k, i), b = std::conj(coeff(k, j, i));
        defect = std::max(defect, std::abs(a - b));
        if (j == k)
          h.diag(j)[i] = a.real();
        else
          h.off(j, k)[i] = 0.5 * (a + b);
      }
  if (defect > tolerance * std::max(1.0, sup_norm(f))) throw ContractViolation("(1,1)-form is not real");
  return h;
}

/// Holonomy average: (γ*H)(x) = Uᵀ H(γx) conj(U).
inline HermitianField project_basic(const HermitianField& h) {
  const auto& model = *h.model();
  const std::size_t G = model.group().size();
  if (G == 1) return h;
  HermitianField out(h.model());
  const int n = h.n();
  for (std::size_t i = 0; i < h.size(); ++i) {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(n, n);
    for (std::size_t g = 0; g < G; ++g) {
      const auto& U = model.group()[g].U;
      acc += U.transpose() * h.at(model.index_map(g)[i]) * U.conjugate();
    }
    out.set(i, acc / static_cast<double>(G));
  }
  return out;
}

inline double basicness_defect(const HermitianField& h) {
  HermitianField d = project_basic(h) - h;
  return sup_norm(d) / std::max(sup_norm(h), 1e-300);
}

/// sup-norm of d_B applied to the form represented by h.
inline double closedness_defect(const HermitianField& h) { return sup_norm(d_B(to_form(h))); }

/// Solves i∂_B∂̄_B ψ = σ for mean-zero real basic ψ. The trace part is
/// inverted spectrally; the full identity is then verified.
inline BasicField solve_ddbar_potential(const HermitianField& sigma, double tolerance = 1e-10) {
  const auto& model = *sigma.model();
  const int n = sigma.n();
  const double scale = std::max(1.0, sup_norm(sigma));
  const Eigen::MatrixXcd harm = sigma.average();
  auto harmonic_vector = [&] {
    std::vector<cplx> v;
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) v.push_back(harm(j, k));
    return v;
  };
  if (harm.cwiseAbs().maxCoeff() > tolerance * scale)
    throw NotExact("form has a nonzero harmonic part", n, harmonic_vector(), harm.cwiseAbs().maxCoeff());
  RealArray trace(sigma.size(), 0.0);
  for (int j = 0; j < n; ++j)
    for (std::size_t i = 0; i < trace.size(); ++i) trace[i] += sigma.diag(j)[i];
  ComplexArray half;
  model.spectral().r2c(trace, half);
  RealArray psi_values = detail::real_multiplier(model, half, [n](const std::int8_t* k) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += ddbar_symbol(k, j, j).real();
    return s == 0.0 ? 0.0 : 1.0 / s;
  });
  BasicField psi(sigma.model(), std::move(psi_values));
  HermitianField check = ddbar(psi) - sigma;
  const double residual = sup_norm(check);
  if (residual > tolerance * scale) throw NotExact("i∂∂̄ potential does not reproduce the form", n, harmonic_vector(), residual);
  return psi;
}

}  // namespace tcrf
