#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tcrf/hermitian_geometry.hpp"

namespace tcrf {

/// T₀ = sup{t ≥ 0 : ω₀ − tβ + i∂∂̄ψ > 0 for some basic ψ}.
struct MaxTimeQuery {
  HermitianMetric omega0;
  HermitianField beta;  // ρ(ω₀) or any closed basic real (1,1)-form
  double t_lo = 0.0;
  double t_hi = 100.0;
  double tolerance = 2.5e-4;  // bisection stops at hi − lo ≤ tolerance·(1 + lo)
};

inline MaxTimeQuery max_time_query(const HermitianMetric& omega0) {
  return {omega0, chern_ricci(omega0).rho};
}

constexpr double infinite_time = std::numeric_limits<double>::infinity();

/// Harmonic-part threshold below which the class is treated as zero.
constexpr double harmonic_floor = 1e-10;

/// Closed form on the torus model: the exact part of β is absorbed into ψ, so
/// T₀ is the first t at which avg(ω₀) − t·[β] stops being positive definite.
/// Averaging shows this is always an upper bound; it is attained whenever
/// ω₀ − avg(ω₀) is itself i∂∂̄-exact.
inline double t0_oracle(const MaxTimeQuery& q) {
  const BottChernClass cls = bott_chern_class(q.beta);
  const Eigen::MatrixXcd A = q.omega0.field().average();
  const Eigen::MatrixXcd A_h = 0.5 * (A + A.adjoint());
  // generalized eigenvalues μ of B relative to A; A − tB > 0 iff tμ < 1
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A_h);
  const Eigen::MatrixXcd isqrt = es.operatorInverseSqrt();
  const Eigen::MatrixXcd C = isqrt * cls.matrix * isqrt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> ms(0.5 * (C + C.adjoint()), Eigen::EigenvaluesOnly);
  const double mu = ms.eigenvalues().maxCoeff();
  if (mu <= harmonic_floor) return infinite_time;
  return 1.0 / mu;
}

// ---------------------------------------------------------------------------
// Feasibility search

struct AscentOptions {
  double eps_pos = 1e-8;
  std::size_t max_iterations = 4000;
  std::size_t stagnation_window = 200;
  double stagnation_tol = 1e-12;
  double tau_initial = 0.05;  // relative to the eigenvalue spread of the start
  double tau_min = 1e-7;
};

enum class ProbeStatus { feasible, infeasible_bound, inconclusive };

struct ProbeResult {
  double t = 0.0;
  ProbeStatus status = ProbeStatus::inconclusive;
  double margin = -infinite_time;  // best min-eigenvalue found
  double upper_bound = infinite_time;  // min eigenvalue of avg(α_t)
  std::size_t iterations = 0;
  BasicField psi;
  bool feasible() const { return status == ProbeStatus::feasible; }
};

namespace detail {

/// Ascent on the soft minimum
///   m_τ(ψ) = −τ log(mean_x Σ_i exp(−λ_i(α_t + i∂∂̄ψ)(x)/τ)),
/// a smooth concave lower approximation of the minimum eigenvalue over the
/// grid, in the band coefficients of ψ.
class MinEigenAscent {
 public:
  MinEigenAscent(const HermitianField& alpha, const AscentOptions& opt)
      : alpha_(alpha), opt_(opt), model_(alpha.model()), spec_(model_->spectral()) {
    const int n = model_->n();
    const auto& band = spec_.band();
    B_ = band.size();
    M_ = model_->size();
    entries_ = n * n;
    sym_.assign(entries_, std::vector<double>(B_));
    precond_.assign(B_, 0.0);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (std::size_t m = 0; m < B_; ++m) {
      const cplx* z = &band.zeta[m * n];
      int e = 0;
      for (int j = 0; j < n; ++j) sym_[e++][m] = -pi2 * std::norm(z[j]);
      for (int j = 0; j < n; ++j)
        for (int k = j + 1; k < n; ++k) {
          const cplx s = -pi2 * z[j] * std::conj(z[k]);
          sym_[e++][m] = s.real();
          sym_[e++][m] = s.imag();
        }
      const double z2 = band.zeta2[m];
      precond_[m] = z2 > 0.0 ? 1.0 / (pi2 * pi2 * z2 * z2) : 0.0;
    }
    H_.assign(entries_, RealArray(M_));
    w_.assign(entries_, RealArray(M_));
    lam_.resize(M_ * n);
    vec_.resize(M_);
  }

  /// Runs the ascent from ψ₀ (band-limited part used). Returns the probe.
  ProbeResult run(const BasicField& psi0) {
    ProbeResult res;
    ComplexArray c;
    {
      ComplexArray half;
      spec_.r2c(psi0.values, half);
      spec_.gather_band(half, c);
    }
    const double scale = std::max(1e-300, alpha_.average().real().trace() / model_->n());
    ComplexArray g;
    value_and_gradient(c, 1.0, g);
    // initial smoothing follows the eigenvalue spread of the start
    double tau = opt_.tau_initial * std::max(scale, spread_);
    double best = -infinite_time, best_window = -infinite_time;
    std::size_t since = 0;
    ComplexArray best_c = c;
    double step = -1.0;
    double f = value_and_gradient(c, tau, g);
    double f_window = f;
    std::size_t window_its = 0;
    best = min_eig_;
    best_c = c;
    std::size_t it = 0;
    for (; it < opt_.max_iterations; ++it) {
      if (best > opt_.eps_pos) break;
      // preconditioned direction d = P g
      ComplexArray d(B_);
      double gPg = 0.0;
      for (std::size_t m = 0; m < B_; ++m) {
        d[m] = precond_[m] * g[m];
        gPg += precond_[m] * std::norm(g[m]);
      }
      if (gPg <= 0.0) break;
      if (step <= 0.0) step = 0.1 * scale / std::sqrt(gPg);
      // Armijo backtracking on m_τ
      ComplexArray trial(B_), g_trial;
      double f_trial = 0.0;
      bool accepted = false;
      for (int bt = 0; bt < 40; ++bt) {
        for (std::size_t m = 0; m < B_; ++m) trial[m] = c[m] + step * d[m];
        f_trial = value_and_gradient(trial, tau, g_trial);
        if (std::isfinite(f_trial) && f_trial >= f + 1e-4 * step * gPg * M_) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        // smoothing limits progress: sharpen
        if (tau <= opt_.tau_min * scale) break;
        tau *= 0.25;
        f = value_and_gradient(c, tau, g);
        step = -1.0;
        continue;
      }
      // Barzilai-Borwein step in the preconditioned metric
      double sPs = 0.0, sy = 0.0;
      for (std::size_t m = 0; m < B_; ++m) {
        if (precond_[m] == 0.0) continue;
        const cplx sm = trial[m] - c[m];
        const cplx ym = g[m] - g_trial[m];
        sPs += std::norm(sm) / precond_[m];
        sy += (std::conj(sm) * ym).real();
      }
      c.swap(trial);
      g.swap(g_trial);
      f = f_trial;
      step = sy > 0.0 ? sPs / sy : 2.0 * step;
      if (min_eig_ > best) {
        best = min_eig_;
        best_c = c;
      }
      // stagnation of the true minimum eigenvalue
      if (best > best_window + opt_.stagnation_tol * std::max(1.0, std::abs(best_window))) {
        best_window = best;
        since = 0;
      } else if (++since >= opt_.stagnation_window) {
        if (tau <= opt_.tau_min * scale) break;
        tau *= 0.25;
        f = value_and_gradient(c, tau, g);
        step = -1.0;
        since = 0;
      }
      // sharpen once the smoothed problem has settled at the current τ
      if (++window_its >= 30) {
        if (f - f_window < 0.01 * tau && tau > opt_.tau_min * scale) {
          tau *= 0.5;
          f = value_and_gradient(c, tau, g);
          step = -1.0;
        }
        f_window = f;
        window_its = 0;
      }
    }
    res.iterations = it;
    res.margin = best;
    ComplexArray half;
    spec_.scatter_band(best_c, nullptr, half);
    RealArray psi;
    spec_.c2r(half, psi);
    project_in_place(*model_, psi);
    res.psi = BasicField(model_, std::move(psi));
    res.status = best > opt_.eps_pos ? ProbeStatus::feasible : ProbeStatus::inconclusive;
    return res;
  }

 private:
  // m_τ at coefficients c and its gradient with respect to c (so that
  // δm_τ = M·Re Σ conj(g)·δc over the full spectrum).
  double value_and_gradient(const ComplexArray& c, double tau, ComplexArray& grad) {
    const int n = model_->n();
    ComplexArray half;
    for (int e = 0; e < entries_; ++e) {
      spec_.scatter_band(c, sym_[e].data(), half);
      spec_.c2r(half, H_[e]);
    }
    // pointwise eigen-decomposition of α_t + i∂∂̄ψ
    double lmin = infinite_time;
    Eigen::MatrixXcd A(n, n);
    std::vector<Eigen::MatrixXcd>& V = vec_;
    for (std::size_t i = 0; i < M_; ++i) {
      int e = n;
      for (int j = 0; j < n; ++j) A(j, j) = alpha_.diag(j)[i] + H_[j][i];
      for (int j = 0; j < n; ++j)
        for (int k = j + 1; k < n; ++k, e += 2) {
          A(j, k) = alpha_.off(j, k)[i] + cplx(H_[e][i], H_[e + 1][i]);
          A(k, j) = std::conj(A(j, k));
        }
      if (n == 1) {
        lam_[i] = A(0, 0).real();
        V[i] = Eigen::MatrixXcd::Identity(1, 1);
      } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A);
        for (int j = 0; j < n; ++j) lam_[i * n + j] = es.eigenvalues()(j);
        V[i] = es.eigenvectors();
      }
      lmin = std::min(lmin, lam_[i * n]);
    }
    min_eig_ = lmin;
    spread_ = *std::max_element(lam_.begin(), lam_.end()) - lmin;
    double Z = 0.0;
    for (std::size_t q = 0; q < M_ * n; ++q) Z += std::exp(-(lam_[q] - lmin) / tau);
    const double value = lmin - tau * std::log(Z / static_cast<double>(M_));
    // W = V diag(e^{−λ/τ}/Z) V^H; the weights w_e pair with the real entries
    for (std::size_t i = 0; i < M_; ++i) {
      Eigen::MatrixXcd W = Eigen::MatrixXcd::Zero(n, n);
      for (int j = 0; j < n; ++j) {
        const double wj = std::exp(-(lam_[i * n + j] - lmin) / tau) / Z;
        W += wj * V[i].col(j) * V[i].col(j).adjoint();
      }
      int e = n;
      for (int j = 0; j < n; ++j) w_[j][i] = W(j, j).real();
      for (int j = 0; j < n; ++j)
        for (int k = j + 1; k < n; ++k, e += 2) {
          w_[e][i] = 2.0 * W(j, k).real();
          w_[e + 1][i] = 2.0 * W(j, k).imag();
        }
    }
    grad.assign(B_, cplx{});
    ComplexArray wb;
    for (int e = 0; e < entries_; ++e) {
      spec_.r2c(w_[e], half);
      spec_.gather_band(half, wb);
      for (std::size_t m = 0; m < B_; ++m) grad[m] += sym_[e][m] * wb[m];
    }
    return value;
  }

  HermitianField alpha_;
  AscentOptions opt_;
  ModelPtr model_;
  const SpectralEngine& spec_;
  std::size_t B_ = 0, M_ = 0;
  int entries_ = 0;
  std::vector<std::vector<double>> sym_;
  std::vector<double> precond_;
  std::vector<RealArray> H_, w_;
  std::vector<double> lam_;
  std::vector<Eigen::MatrixXcd> vec_;
  double min_eig_ = 0.0;
  double spread_ = 0.0;
};

}  // namespace detail

inline HermitianField alpha_at(const MaxTimeQuery& q, double t) { return q.omega0.field() - t * q.beta; }

/// Starting potential flattening the trace: tr(α + i∂∂̄ψ) is made constant.
/// When α − avg(α) is i∂∂̄-exact this already removes the whole
/// non-constant part.
inline BasicField trace_flattening_potential(const HermitianField& alpha) {
  const ModelPtr& model = alpha.model();
  const auto& spec = model->spectral();
  RealArray tr(model->size(), 0.0);
  for (int j = 0; j < alpha.n(); ++j)
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] += alpha.diag(j)[i];
  ComplexArray half;
  spec.r2c(tr, half);
  const auto& hk = spec.half_k();
  const int dims = model->dims();
  const double pi2 = std::numbers::pi * std::numbers::pi;
  for (std::size_t h = 0; h < half.size(); ++h) {
    double z2 = 0.0;
    for (int a = 0; a < dims; ++a) z2 += double(hk[h * dims + a]) * hk[h * dims + a];
    // tr i∂∂̄ has symbol −π²Σ|ζ_j|² = −π²|k|²
    half[h] = z2 > 0.0 ? half[h] / (pi2 * z2) : cplx{};
  }
  RealArray psi;
  spec.c2r(half, psi);
  project_in_place(*model, psi);
  return {model, std::move(psi)};
}

/// Independent check of a certificate: smallest eigenvalue over the grid of
/// α_t + i∂∂̄ψ, evaluated through the Hermitian-field operators.
inline double certificate_margin(const MaxTimeQuery& q, double t, const BasicField& psi) {
  return eigen_bounds(alpha_at(q, t) + ddbar(psi)).min;
}

/// One feasibility probe at time t. Infeasibility is declared outright when
/// avg(α_t) is not positive (averaging any candidate α_t + i∂∂̄ψ over the grid
/// gives avg(α_t), so no ψ exists); otherwise the ascent either produces a
/// certificate or is inconclusive.
inline ProbeResult t0_probe(const MaxTimeQuery& q, double t, const BasicField& start, const AscentOptions& opt = {}) {
  const HermitianField alpha = alpha_at(q, t);
  const Eigen::MatrixXcd avg = alpha.average();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (avg + avg.adjoint()), Eigen::EigenvaluesOnly);
  const double bound = es.eigenvalues()(0);
  ProbeResult res;
  if (bound <= opt.eps_pos) {
    res.t = t;
    res.status = ProbeStatus::infeasible_bound;
    res.upper_bound = bound;
    res.psi = BasicField::zeros(q.omega0.model());
    return res;
  }
  detail::MinEigenAscent ascent(alpha, opt);
  res = ascent.run(start);
  res.t = t;
  res.upper_bound = bound;
  if (res.feasible() && !(certificate_margin(q, t, res.psi) > 0.0)) res.status = ProbeStatus::inconclusive;
  return res;
}

struct T0Result {
  double t0 = 0.0;
  bool capped = false;  // every probe up to t_hi was feasible: T₀ ≥ t_hi
  double t_certificate = 0.0;
  BasicField certificate;
  double certificate_margin = 0.0;
  std::vector<ProbeResult> probes;
  bool monotone = true;  // no feasible probe above an infeasible one
  std::string method = "feasibility";
};

/// Bisection on t with the ascent as the inner oracle, each probe started
/// from the trace-flattening potential. Probes are taken in a fixed order,
/// so the bracket sequence is reproducible; probes already decided (resume)
/// may be passed in `history`. `on_probe` sees the probe list after every
/// newly computed probe.
inline T0Result t0_feasibility(const MaxTimeQuery& q, const AscentOptions& opt = {},
                               const std::vector<ProbeResult>* history = nullptr,
                               const std::function<void(const std::vector<ProbeResult>&)>& on_probe = {}) {
  if (!(q.t_lo < q.t_hi)) throw ContractViolation("t_lo must be below t_hi");
  bott_chern_class(q.beta);  // closedness
  T0Result out;
  std::size_t replay = 0;
  auto probe = [&](double t) {
    ProbeResult r;
    if (history && replay < history->size() && (*history)[replay].t == t) {
      r = (*history)[replay++];
    } else {
      r = t0_probe(q, t, trace_flattening_potential(alpha_at(q, t)), opt);
      out.probes.push_back(r);
      if (on_probe) on_probe(out.probes);
      return r;
    }
    out.probes.push_back(r);
    return r;
  };
  ProbeResult lo_probe = probe(q.t_lo);
  if (!lo_probe.feasible()) {
    out.t0 = q.t_lo;
    return out;
  }
  double lo = q.t_lo;
  ProbeResult best = lo_probe;
  ProbeResult hi_probe = probe(q.t_hi);
  double hi = q.t_hi;
  if (hi_probe.feasible()) {
    out.t0 = q.t_hi;
    out.capped = true;
    best = hi_probe;
  } else {
    while (hi - lo > q.tolerance * (1.0 + lo)) {
      const double mid = 0.5 * (lo + hi);
      ProbeResult r = probe(mid);
      if (r.feasible()) {
        lo = mid;
        best = r;
      } else {
        hi = mid;
      }
    }
    out.t0 = 0.5 * (lo + hi);
  }
  out.t_certificate = best.t;
  out.certificate = best.psi;
  out.certificate_margin = certificate_margin(q, best.t, best.psi);
  double min_infeasible = infinite_time;
  for (const auto& p : out.probes)
    if (!p.feasible()) min_infeasible = std::min(min_infeasible, p.t);
  for (const auto& p : out.probes)
    if (p.feasible() && p.t > min_infeasible) out.monotone = false;
  return out;
}

}  // namespace tcrf
