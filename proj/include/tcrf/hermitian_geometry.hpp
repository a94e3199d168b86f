#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tcrf/hermitian_field.hpp"

namespace tcrf {

/// Positive definite basic field g_{jk̄}; the form ω = i g_{jk̄} dz^j ∧ dz̄^k.
class HermitianMetric {
 public:
  static constexpr double positivity_threshold = 1e-12;

  HermitianMetric() = default;
  /// Validates positivity and basicness.
  explicit HermitianMetric(HermitianField g) : g_(std::move(g)) {
    for (std::size_t i = 0; i < g_.size(); ++i) {
      const auto e = pointwise::eigen_range(g_, i);
      if (!(e.min > positivity_threshold)) throw PositivityLoss(i, e.min);
    }
    if (!g_.model()->trivial_holonomy() && basicness_defect(g_) > 1e-12)
      throw ContractViolation("metric is not invariant under the holonomy group");
  }

  static HermitianMetric flat(const ModelPtr& model, const Eigen::MatrixXcd& A) {
    return HermitianMetric(HermitianField::constant(model, A));
  }
  static HermitianMetric flat(const ModelPtr& model) {
    return flat(model, Eigen::MatrixXcd::Identity(model->n(), model->n()));
  }
  /// g = e^f · A.
  static HermitianMetric conformal(const BasicField& f, const Eigen::MatrixXcd& A) {
    HermitianField g = HermitianField::constant(f.model, A);
    const int n = g.n();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = std::exp(f.values[i]);
      for (int j = 0; j < n; ++j) {
        g.diag(j)[i] *= s;
        for (int k = j + 1; k < n; ++k) g.off(j, k)[i] *= s;
      }
    }
    return HermitianMetric(std::move(g));
  }
  static HermitianMetric conformal(const BasicField& f) {
    return conformal(f, Eigen::MatrixXcd::Identity(f.model->n(), f.model->n()));
  }
  /// g = diag(e^{f_1}, ..., e^{f_n}).
  static HermitianMetric diagonal(const std::vector<BasicField>& log_entries) {
    if (log_entries.empty()) throw ContractViolation("diagonal metric needs n entries");
    HermitianField g(log_entries[0].model);
    if (static_cast<int>(log_entries.size()) != g.n()) throw ContractViolation("diagonal metric needs n entries");
    for (int j = 0; j < g.n(); ++j)
      for (std::size_t i = 0; i < g.size(); ++i) g.diag(j)[i] = std::exp(log_entries[j].values[i]);
    return HermitianMetric(std::move(g));
  }

  const HermitianField& field() const { return g_; }
  const ModelPtr& model() const { return g_.model(); }
  int n() const { return g_.n(); }
  RealArray log_det() const { return tcrf::log_det(g_, positivity_threshold); }
  EigenRange eigen_bounds() const { return tcrf::eigen_bounds(g_); }
  BasicForm form() const { return to_form(g_); }

 private:
  HermitianField g_;
};

/// ρ = −i∂_B∂̄_B log det g together with its potential −log det g.
struct ChernRicciForm {
  HermitianField rho;
  BasicField potential;
};

/// Re-projects a scalar after a nonlinear pointwise operation; aborts when
/// the correction exceeds 1e-10.
inline void reproject(BasicField& f) {
  const double correction = project_in_place(*f.model, f.values);
  if (correction > 1e-10) throw BasicnessDefect(correction);
}

inline ChernRicciForm chern_ricci(const HermitianMetric& g) {
  BasicField potential(g.model(), g.log_det());
  potential *= -1.0;
  reproject(potential);
  HermitianField rho = ddbar(potential);
  const double harmonic = rho.average().cwiseAbs().maxCoeff();
  if (harmonic > 1e-12 * std::max(1.0, sup_norm(rho)))
    throw ContractViolation("Chern-Ricci form has a nonzero grid average");
  return {std::move(rho), std::move(potential)};
}

/// Harmonic representative (grid average) of a closed basic real (1,1)-form.
struct BottChernClass {
  Eigen::MatrixXcd matrix;

  Eigen::VectorXd eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  }
};

inline BottChernClass bott_chern_class(const HermitianField& sigma) {
  const double defect = closedness_defect(sigma);
  if (defect > 1e-8) throw NotClosed(defect);
  const Eigen::MatrixXcd avg = sigma.average();
  return {0.5 * (avg + avg.adjoint())};
}

/// On the flat torus model a class contains a positive form iff its harmonic
/// representative is positive definite: averaging a positive representative
/// over translations gives the harmonic one, and conversely the harmonic
/// representative is itself in the class.
inline bool is_positive_class(const BottChernClass& c, double threshold = 1e-12) {
  return c.eigenvalues()(0) > threshold;
}
inline bool is_negative_class(const BottChernClass& c, double threshold = 1e-12) {
  return c.eigenvalues()(c.matrix.rows() - 1) < -threshold;
}
inline bool is_zero_class(const BottChernClass& c, double tolerance = 1e-10) {
  return c.matrix.cwiseAbs().maxCoeff() <= tolerance;
}
inline bool same_class(const BottChernClass& a, const BottChernClass& b, double tolerance = 1e-10) {
  return (a.matrix - b.matrix).cwiseAbs().maxCoeff() <= tolerance;
}

// ---------------------------------------------------------------------------
// Gauduchon gauge

struct GauduchonResult {
  BasicField u;  // ω_G = e^u ω
  BasicField v;  // e^{(n−1)u}, mean one
  double residual = 0.0;  // sup |∂_B∂̄_B(v ω^{n−1})|
  double min_v = 0.0;
  int iterations = 0;
};

struct GauduchonOptions {
  double tolerance = 1e-11;  // target for sup |∂∂̄(vω^{n−1})|
  int max_iterations = 2000;
  /// Optional starting guess for v − 1 (made mean-zero and basic).
  const BasicField* initial = nullptr;
};

/// ω^{n−1} as a form.
inline BasicForm power(const BasicForm& w, int k) {
  BasicForm out = BasicForm::scalar(BasicField::constant(w.model(), 1.0));
  for (int i = 0; i < k; ++i) out = wedge(out, w);
  return out;
}

/// sup-norm of the top coefficient of ∂_B∂̄_B(v ω^{n−1}).
inline double gauduchon_residual(const HermitianMetric& g, const BasicField& v) {
  const int n = g.n();
  BasicForm vw = wedge(BasicForm::scalar(v), power(g.form(), n - 1));
  return sup_norm(del_B(delbar_B(vw)));
}

/// Finds u with ∂_B∂̄_B((e^u ω)^{n−1}) = 0. The equation is linear in
/// v = e^{(n−1)u}: K(v) = Σ_{m,l} ∂_m∂̄_l(C_{ml} v) = 0 with C built from
/// ω^{n−1}. v = 1 + w with mean-zero w minimizes ‖K(v)‖² by conjugate
/// gradients on the normal equations, preconditioned by the squared flat
/// symbol of K at the averaged coefficients.
inline GauduchonResult gauduchon_factor(const HermitianMetric& g, const GauduchonOptions& opt = {}) {
  const ModelPtr& model = g.model();
  const int n = g.n();
  const std::size_t M = model->size();
  GauduchonResult res;
  if (n == 1) {
    res.u = BasicField::zeros(model);
    res.v = BasicField::constant(model, 1.0);
    res.min_v = 1.0;
    return res;
  }
  const auto& spectral = model->spectral();
  const auto& fk = spectral.full_k();
  const int dims = model->dims();
  const IndexMask full = (IndexMask{1} << n) - 1;
  const BasicForm wn = power(g.form(), n - 1);
  // C_{ml} from the (n−1, n−1) coefficient at ([n]∖m, [n]∖l); the sign
  // collects the reordering of dz̄^l and dz^m into dz^{[n]} ∧ dz̄^{[n]}.
  std::vector<ComplexArray> C(n * n);
  std::vector<cplx> Cbar(n * n);
  for (int m = 0; m < n; ++m)
    for (int l = 0; l < n; ++l) {
      const ComplexArray* w = wn.find(full ^ (IndexMask{1} << m), full ^ (IndexMask{1} << l));
      const double sign = (n - 1 + l + m) % 2 ? -1.0 : 1.0;
      C[m * n + l].assign(M, cplx{});
      if (w)
        for (std::size_t i = 0; i < M; ++i) C[m * n + l][i] = sign * (*w)[i];
      cplx s = 0.0;
      for (const auto& x : C[m * n + l]) s += x;
      Cbar[m * n + l] = s / static_cast<double>(M);
    }

  ComplexArray work, acc;
  auto apply_K = [&](const RealArray& v, ComplexArray& out) {
    acc.assign(M, cplx{});
    for (int m = 0; m < n; ++m)
      for (int l = 0; l < n; ++l) {
        work.resize(M);
        const auto& c = C[m * n + l];
        for (std::size_t i = 0; i < M; ++i) work[i] = c[i] * v[i];
        spectral.forward(work);
        for (std::size_t k = 0; k < M; ++k) acc[k] += work[k] * ddbar_symbol(&fk[k * dims], m, l);
      }
    spectral.inverse(acc);
    out = acc;
  };
  // Adjoint for the grid inner product Re Σ conj(a) b.
  ComplexArray yhat;
  auto apply_Kt = [&](const ComplexArray& y, RealArray& out) {
    yhat = y;
    spectral.forward(yhat);
    out.assign(M, 0.0);
    for (int m = 0; m < n; ++m)
      for (int l = 0; l < n; ++l) {
        work.resize(M);
        for (std::size_t k = 0; k < M; ++k) work[k] = yhat[k] * std::conj(ddbar_symbol(&fk[k * dims], m, l));
        spectral.inverse(work);
        const auto& c = C[m * n + l];
        for (std::size_t i = 0; i < M; ++i) out[i] += (std::conj(c[i]) * work[i]).real();
      }
    // inverse() is an unnormalised sum; forward() carries 1/M.
  };
  std::vector<double> precond(M, 0.0);
  for (std::size_t k = 0; k < M; ++k) {
    cplx s = 0.0;
    for (int m = 0; m < n; ++m)
      for (int l = 0; l < n; ++l) s += Cbar[m * n + l] * ddbar_symbol(&fk[k * dims], m, l);
    const double s2 = std::norm(s);
    precond[k] = s2 > 1e-12 ? 1.0 / s2 : 0.0;
  }
  ComplexArray pz;
  auto apply_P = [&](const RealArray& r, RealArray& out) {
    pz.resize(M);
    for (std::size_t i = 0; i < M; ++i) pz[i] = r[i];
    spectral.forward(pz);
    for (std::size_t k = 0; k < M; ++k) pz[k] *= precond[k];
    spectral.inverse(pz);
    out.resize(M);
    for (std::size_t i = 0; i < M; ++i) out[i] = pz[i].real();
    project_in_place(*model, out);
  };
  auto dot = [&](const RealArray& a, const RealArray& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < M; ++i) s += a[i] * b[i];
    return s;
  };

  RealArray w(M, 0.0);
  if (opt.initial) {
    // restrict the guess to the preconditioner's range (mean-zero, resolved modes)
    RealArray raw = opt.initial->values;
    ComplexArray z(M);
    for (std::size_t i = 0; i < M; ++i) z[i] = raw[i];
    spectral.forward(z);
    for (std::size_t k = 0; k < M; ++k)
      if (precond[k] == 0.0) z[k] = 0.0;
    spectral.inverse(z);
    for (std::size_t i = 0; i < M; ++i) w[i] = z[i].real();
    project_in_place(*model, w);
  }
  RealArray v(M), r(M), z(M), p(M), Ap(M);
  ComplexArray Kv, Kp;
  auto current_v = [&] {
    for (std::size_t i = 0; i < M; ++i) v[i] = 1.0 + w[i];
  };
  current_v();
  apply_K(v, Kv);
  apply_Kt(Kv, r);
  for (auto& x : r) x = -x;
  project_in_place(*model, r);
  apply_P(r, z);
  p = z;
  double rz = dot(r, z);
  int it = 0;
  double residual = sup_norm(Kv);
  // Stop at round-off stagnation: no 10% gain over five residual checks.
  double best = residual;
  int stalled = 0;
  for (; it < opt.max_iterations && residual > opt.tolerance && stalled < 5; ++it) {
    apply_K(p, Kp);
    apply_Kt(Kp, Ap);
    project_in_place(*model, Ap);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) break;
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < M; ++i) {
      w[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    apply_P(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < M; ++i) p[i] = z[i] + beta * p[i];
    if (it % 10 == 9) {
      current_v();
      apply_K(v, Kv);
      residual = sup_norm(Kv);
      if (residual < 0.9 * best) {
        best = residual;
        stalled = 0;
      } else {
        ++stalled;
      }
    }
  }
  current_v();
  res.iterations = it;
  res.v = BasicField(model, v);
  res.residual = gauduchon_residual(g, res.v);
  res.min_v = *std::min_element(v.begin(), v.end());
  if (!(res.min_v > 0.0)) throw GaugeFailure("Gauduchon factor is not positive", res.min_v);
  res.u = BasicField::zeros(model);
  for (std::size_t i = 0; i < M; ++i) res.u.values[i] = std::log(v[i]) / (n - 1);
  return res;
}

// ---------------------------------------------------------------------------
// Curvature of the transverse Chern connection

/// i·tr Θ of the Chern connection θ = g⁻¹∂g, Θ = ∂̄θ, returned as the
/// Hermitian field H_{jk̄} = −∂̄_k tr(g⁻¹ ∂_j g). This path uses only first
/// derivatives of g and never forms log det g.
inline HermitianField chern_connection_curvature(const HermitianMetric& metric) {
  const auto& g = metric.field();
  const ModelPtr& model = metric.model();
  const int n = g.n();
  const std::size_t M = model->size();
  const auto& spectral = model->spectral();
  const auto& fk = spectral.full_k();
  const int dims = model->dims();
  for (std::size_t i = 0; i < M; ++i) {
    const auto e = pointwise::eigen_range(g, i);
    if (!(e.min > HermitianMetric::positivity_threshold)) throw PositivityLoss(i, e.min);
  }
  const HermitianField ginv = inverse(g);
  // Spectra of all entries g_{ab}.
  std::vector<ComplexArray> spec(n * n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      auto& s = spec[a * n + b];
      s.resize(M);
      for (std::size_t i = 0; i < M; ++i) s[i] = g.entry(a, b, i);
      spectral.forward(s);
    }
  std::vector<ComplexArray> trace(n, ComplexArray(M, cplx{}));
  ComplexArray deriv;
  for (int j = 0; j < n; ++j)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        detail::dz_derivative(*model, spec[a * n + b], j, false, deriv);
        for (std::size_t i = 0; i < M; ++i) trace[j][i] += ginv.entry(b, a, i) * deriv[i];
      }
  HermitianField h(model);
  for (int j = 0; j < n; ++j) {
    ComplexArray t = trace[j];
    spectral.forward(t);
    for (int k = j; k < n; ++k) {
      detail::dz_derivative(*model, t, k, true, deriv);
      if (k == j) {
        for (std::size_t i = 0; i < M; ++i) h.diag(j)[i] = -deriv[i].real();
      } else {
        for (std::size_t i = 0; i < M; ++i) h.off(j, k)[i] = -deriv[i];
      }
    }
  }
  return project_basic(h);
}

}  // namespace tcrf
