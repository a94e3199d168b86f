#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tcrf/hermitian_geometry.hpp"

namespace tcrf {

/// Reference family for the potential flow
///   ∂φ/∂t = log((ω̂_t + i∂∂̄φ)ⁿ / Ω),  ω̂_t = ω₀ + tλ,
///   λ = (1/T′) i∂∂̄ f_{T′} − ρ(ω₀),  Ω = e^{f_{T′}/T′} ω₀ⁿ.
/// Ω is stored through log Ω, the log of its density against (i dz∧dz̄)ⁿ
/// with the n! absorbed, so that log(ωⁿ/Ω) = log det g − log Ω.
struct ReferenceData {
  double T_prime = 1.0;
  HermitianMetric omega0;
  BasicField f;            // f_{T′}
  HermitianField lambda;   // λ
  BasicField log_omega;    // log Ω
  bool static_reference = false;  // λ ≡ 0, so ω̂_t ≡ ω₀

  const ModelPtr& model() const { return omega0.model(); }

  HermitianField omega_hat(double t) const {
    if (static_reference) return omega0.field();
    return omega0.field() + t * lambda;
  }
};

struct ReferenceChecks {
  double log_omega_residual = 0.0;   // ‖i∂∂̄ log Ω − λ‖
  double endpoint_residual = 0.0;    // ‖ω̂(T′) − (α_{T′} + i∂∂̄f)‖
  double min_eigenvalue = 0.0;       // min over samples of ω̂_t
};

/// Builds the reference data. Without `f`, f_{T′} = −T′(log det g₀ − c)
/// with c the mean of log det g₀, for which λ = 0, log Ω ≡ c and ω̂_t ≡ ω₀. Positivity of ω̂_t is checked at
/// `samples` equispaced times in [0, T′] (the positive set is an interval,
/// so the endpoints decide it).
inline ReferenceData build_reference(const HermitianMetric& omega0, double T_prime,
                                     const std::optional<BasicField>& f = std::nullopt, int samples = 17,
                                     ReferenceChecks* checks = nullptr) {
  if (!(T_prime > 0.0)) throw ContractViolation("T′ must be positive");
  ReferenceData ref;
  ref.T_prime = T_prime;
  ref.omega0 = omega0;
  const ModelPtr& model = omega0.model();
  const RealArray logdet = omega0.log_det();
  const HermitianField rho0 = chern_ricci(omega0).rho;
  ReferenceChecks local;
  if (!f) {
    const double c = mean(logdet);
    ref.f = BasicField(model, logdet);
    for (auto& v : ref.f.values) v = -T_prime * (v - c);
    ref.lambda = HermitianField(model);
    ref.log_omega = BasicField::constant(model, c);
    ref.static_reference = true;
  } else {
    ref.f = *f;
    if (basicness_defect(ref.f) > 1e-12) throw ContractViolation("f_{T′} is not basic");
    ref.lambda = (1.0 / T_prime) * ddbar(ref.f) - rho0;
    ref.log_omega = BasicField(model, logdet);
    for (std::size_t i = 0; i < logdet.size(); ++i) ref.log_omega.values[i] += ref.f.values[i] / T_prime;
    ref.static_reference = sup_norm(ref.lambda) == 0.0;
  }
  local.log_omega_residual = sup_norm(ddbar(ref.log_omega) - ref.lambda);
  const double scale = std::max(1.0, sup_norm(ref.lambda));
  if (local.log_omega_residual > 1e-10 * scale)
    throw ContractViolation("i∂∂̄ log Ω differs from λ by " + std::to_string(local.log_omega_residual));
  const HermitianField alpha = omega0.field() - T_prime * rho0;
  local.endpoint_residual = sup_norm(ref.omega_hat(T_prime) - (alpha + ddbar(ref.f)));
  const double endpoint_scale =
      sup_norm(omega0.field()) + T_prime * (sup_norm(rho0) + sup_norm(ref.lambda) + sup_norm(ddbar(ref.f)) / T_prime);
  if (local.endpoint_residual > 1e-12 * std::max(1.0, endpoint_scale))
    throw ContractViolation("ω̂(T′) does not match α_{T′} + i∂∂̄f");
  local.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (int s = 0; s < std::max(samples, 2); ++s) {
    const double t = T_prime * s / (std::max(samples, 2) - 1);
    const double e = eigen_bounds(ref.omega_hat(t)).min;
    local.min_eigenvalue = std::min(local.min_eigenvalue, e);
    if (!(e > HermitianMetric::positivity_threshold)) throw InfeasibleHorizon(t, e);
    if (ref.static_reference) break;
  }
  if (checks) *checks = local;
  return ref;
}

/// The scalar equation integrated by FlowIntegrator:
///   ∂φ/∂t = log det(ω̂_t + i∂∂̄φ) − log Ω − κφ + F(x, t).
struct FlowProblem {
  HermitianField omega0;
  HermitianField lambda;
  bool static_reference = true;
  BasicField log_omega;
  double kappa = 0.0;
  /// Optional forcing; adds F(·, t) to the pointwise right-hand side.
  std::function<void(double t, RealArray& rhs)> forcing;

  static FlowProblem from_reference(const ReferenceData& ref) {
    FlowProblem p;
    p.omega0 = ref.omega0.field();
    p.lambda = ref.lambda;
    p.static_reference = ref.static_reference;
    p.log_omega = ref.log_omega;
    return p;
  }
};

enum class StepMethod { rk4, etd_rk4 };

struct FlowSample {
  double t = 0.0;
  double dt = 0.0;
  double min_eig = 0.0;
  double max_eig = 0.0;
  double rho_sup = 0.0;          // ‖ρ(ω_t)‖_∞
  double osc_phi = 0.0;
  double phi_sup = 0.0;
  double osc_dphi = 0.0;         // osc ∂φ/∂t
  double dphi_sup = 0.0;         // ‖∂φ/∂t‖_∞ (the elliptic residual for κ = 1)
  double basic_defect = 0.0;     // relative holonomy defect of g_t
  double volume = 0.0;           // ∫ ωⁿ/n! ∧ χ
  double limit_deviation = 0.0;  // ‖g_t − avg g_t‖_∞
};

/// Evaluation of the right-hand side at one state.
struct RhsInfo {
  bool ok = true;
  std::size_t bad_point = 0;
  double min_eig = 0.0;
  double max_eig = 0.0;
  double min_of_max_inv = 0.0;
  double inv_deviation = 0.0;  // max_x ‖g⁻¹ − Ḡ⁻¹‖₂
  double projection_correction = 0.0;
};

/// Pseudospectral integrator. The state is the vector of dealiased Fourier
/// coefficients of φ (|k_a| ≤ (N−1)/3 on every axis); nonlinear terms are
/// evaluated pointwise on the grid, projected onto basic fields and
/// truncated back to the band.
class FlowIntegrator {
 public:
  static constexpr double positivity_threshold = 1e-10;
  static constexpr double rk4_real_stability = 2.785;

  FlowIntegrator(FlowProblem problem, StepMethod method = StepMethod::rk4)
      : p_(std::move(problem)), method_(method), model_(p_.omega0.model()), spec_(model_->spectral()) {
    const auto& band = spec_.band();
    const int n = model_->n();
    B_ = band.size();
    M_ = model_->size();
    entries_ = n + n * (n - 1);
    sym_.assign(entries_, std::vector<double>(B_));
    for (std::size_t m = 0; m < B_; ++m) {
      const cplx* z = &band.zeta[m * n];
      int e = 0;
      for (int j = 0; j < n; ++j) sym_[e++][m] = -std::numbers::pi * std::numbers::pi * std::norm(z[j]);
      for (int j = 0; j < n; ++j)
        for (int k = j + 1; k < n; ++k) {
          const cplx s = -std::numbers::pi * std::numbers::pi * z[j] * std::conj(z[k]);
          sym_[e++][m] = s.real();
          sym_[e++][m] = s.imag();
        }
    }
    zeta2_max_ = *std::max_element(band.zeta2.begin(), band.zeta2.end());
    H_.assign(entries_, RealArray(M_));
    logdet_.resize(M_);
    r_.resize(M_);
    mineig_.resize(M_);
    maxeig_.resize(M_);
    invdev_.resize(M_);
    u_.assign(B_, cplx{});
    base_avg_ = p_.omega0.average();
    if (!p_.static_reference) lambda_avg_ = p_.lambda.average();
  }

  const FlowProblem& problem() const { return p_; }
  const ModelPtr& model() const { return model_; }
  StepMethod method() const { return method_; }
  double t() const { return t_; }
  const ComplexArray& coefficients() const { return u_; }
  double max_projection_correction() const { return max_correction_; }

  void set_state(double t, const RealArray& phi) {
    t_ = t;
    ComplexArray half;
    spec_.r2c(phi, half);
    spec_.gather_band(half, u_);
  }
  void set_state(double t, const BasicField& phi) { set_state(t, phi.values); }
  void set_coefficients(double t, const ComplexArray& u) {
    t_ = t;
    u_ = u;
  }
  /// Physical φ of the current state.
  BasicField phi() const { return {model_, to_physical(u_)}; }
  /// Replaces the state by the band projection of its own grid values and
  /// returns those values: set_state(t, returned) reproduces the state bit
  /// for bit, which is what a checkpoint stores.
  RealArray canonicalize() {
    RealArray values = to_physical(u_);
    set_state(t_, values);
    return values;
  }

  /// ω_t = ω̂_t + i∂∂̄φ as a field.
  HermitianField metric() const {
    HermitianField g = base_at(t_);
    g += ddbar(phi());
    return g;
  }

  /// Band right-hand side at (t, u). On positivity loss info.ok is false and
  /// `out` is untouched. `shortcut` allows the cached evaluation at states
  /// carrying only a mean mode.
  RhsInfo evaluate(double t, const ComplexArray& u, ComplexArray& out, bool shortcut = true) {
    const bool trivial = shortcut && p_.static_reference && !p_.forcing && only_mean(u);
    if (trivial && cache_valid_) {
      out = cache_out_;
      for (std::size_t m = 0; m < B_; ++m) out[m] -= p_.kappa * u[m];
      return cache_info_;
    }
    RhsInfo info = evaluate_full(t, u, out);
    if (trivial && info.ok) {
      cache_out_ = out;
      for (std::size_t m = 0; m < B_; ++m) cache_out_[m] += p_.kappa * u[m];
      cache_info_ = info;
      cache_valid_ = true;
    }
    return info;
  }

  /// Largest step size for which the explicit part is stable, at the
  /// metric described by `info`.
  double stable_dt(const RhsInfo& info, double c_cfl) const {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double rho;
    if (method_ == StepMethod::rk4)
      rho = pi2 * zeta2_max_ / info.min_eig + p_.kappa;
    else
      rho = pi2 * zeta2_max_ * info.inv_deviation;
    return rho > 0.0 ? c_cfl * rk4_real_stability / rho : std::numeric_limits<double>::infinity();
  }
  /// dt relative to the largest stable step; above 1 is unstable.
  double stability_number(const RhsInfo& info, double dt) const { return dt / stable_dt(info, 1.0); }

  enum class StepStatus { ok, positivity_loss, stage_failure };
  struct StepOutcome {
    StepStatus status = StepStatus::ok;
    RhsInfo info;  // of the failing evaluation when status != ok
  };

  /// One step of size dt from the current state, given the full right-hand
  /// side `rhs1` at the current state.
  StepOutcome advance(double dt, const ComplexArray& rhs1) {
    return method_ == StepMethod::etd_rk4 ? advance_etd(dt, rhs1) : advance_rk4(dt, rhs1);
  }

  /// Averaged metric used by the integrating factor.
  Eigen::MatrixXcd averaged_metric(double t) const {
    if (p_.static_reference) return base_avg_;
    return base_avg_ + t * lambda_avg_;
  }

  /// Full diagnostics at the current state (no shortcut).
  FlowSample sample(double dt) {
    ComplexArray out;
    RhsInfo info = evaluate_full(t_, u_, out);
    if (!info.ok) throw PositivityLoss(info.bad_point, info.min_eig);
    FlowSample s;
    s.t = t_;
    s.dt = dt;
    s.min_eig = info.min_eig;
    s.max_eig = info.max_eig;
    BasicField phi = this->phi();
    s.osc_phi = oscillation(phi);
    s.phi_sup = sup_norm(phi);
    // ∂φ/∂t without dealiasing: r − κφ (r already holds forcing).
    RealArray dphi(M_);
    for (std::size_t i = 0; i < M_; ++i) dphi[i] = r_[i] - p_.kappa * phi.values[i];
    s.osc_dphi = oscillation(dphi);
    s.dphi_sup = sup_norm(dphi);
    BasicField logdet(model_, logdet_);
    s.rho_sup = sup_norm(ddbar(logdet));
    HermitianField g = current_metric_from_scratch();
    s.basic_defect = model_->trivial_holonomy() ? 0.0 : basicness_defect(g);
    double det_sum = 0.0;
    for (std::size_t i = 0; i < M_; ++i) det_sum += std::exp(logdet_[i]);
    s.volume = std::pow(2.0, model_->n()) * model_->leaf_volume() * det_sum / static_cast<double>(M_);
    HermitianField dev = g - HermitianField::constant(model_, g.average());
    s.limit_deviation = sup_norm(dev);
    return s;
  }

  /// Pointwise (undealiased) right-hand side r − κφ at the current state.
  BasicField rhs_physical() {
    ComplexArray out;
    RhsInfo info = evaluate_full(t_, u_, out);
    if (!info.ok) throw PositivityLoss(info.bad_point, info.min_eig);
    BasicField phi = this->phi();
    BasicField r(model_, r_);
    for (std::size_t i = 0; i < M_; ++i) r.values[i] -= p_.kappa * phi.values[i];
    return r;
  }

 private:
  HermitianField base_at(double t) const {
    if (p_.static_reference) return p_.omega0;
    return p_.omega0 + t * p_.lambda;
  }

  RealArray to_physical(const ComplexArray& u) const {
    ComplexArray half;
    spec_.scatter_band(u, nullptr, half);
    RealArray out;
    spec_.c2r(half, out);
    return out;
  }

  bool only_mean(const ComplexArray& u) const {
    const std::size_t mean_index = spec_.band().mean_index;
    for (std::size_t m = 0; m < u.size(); ++m)
      if (m != mean_index && u[m] != cplx{}) return false;
    return true;
  }

  StepOutcome advance_rk4(double h, const ComplexArray& rhs1) {
    const std::size_t B = B_;
    stage_.resize(B);
    for (std::size_t m = 0; m < B; ++m) stage_[m] = u_[m] + 0.5 * h * rhs1[m];
    RhsInfo info = evaluate(t_ + 0.5 * h, stage_, k2_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) stage_[m] = u_[m] + 0.5 * h * k2_[m];
    info = evaluate(t_ + 0.5 * h, stage_, k3_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) stage_[m] = u_[m] + h * k3_[m];
    info = evaluate(t_ + h, stage_, k4_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) u_[m] += (h / 6.0) * (rhs1[m] + 2.0 * (k2_[m] + k3_[m]) + k4_[m]);
    t_ += h;
    return {StepStatus::ok, {}};
  }

  // Cox-Matthews exponential RK4 with the constant-coefficient linear part
  // L = π² Ḡ^{jk̄}-symbol − κ; N(v) = RHS(v) − Lv.
  StepOutcome advance_etd(double h, const ComplexArray& rhs1) {
    const std::size_t B = B_;
    prepare_exponential(h);
    k1_.resize(B);
    for (std::size_t m = 0; m < B; ++m) k1_[m] = rhs1[m] - L_[m] * u_[m];
    // a = E₂u + Q N(u)
    a_.resize(B);
    for (std::size_t m = 0; m < B; ++m) a_[m] = E2_[m] * u_[m] + Q_[m] * k1_[m];
    RhsInfo info = evaluate(t_ + 0.5 * h, a_, k2_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) k2_[m] -= L_[m] * a_[m];
    // b = E₂u + Q N(a)
    stage_.resize(B);
    for (std::size_t m = 0; m < B; ++m) stage_[m] = E2_[m] * u_[m] + Q_[m] * k2_[m];
    info = evaluate(t_ + 0.5 * h, stage_, k3_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) k3_[m] -= L_[m] * stage_[m];
    // c = E₂a + Q (2N(b) − N(u))
    for (std::size_t m = 0; m < B; ++m) stage_[m] = E2_[m] * a_[m] + Q_[m] * (2.0 * k3_[m] - k1_[m]);
    info = evaluate(t_ + h, stage_, k4_);
    if (!info.ok) return {StepStatus::stage_failure, info};
    for (std::size_t m = 0; m < B; ++m) k4_[m] -= L_[m] * stage_[m];
    for (std::size_t m = 0; m < B; ++m)
      u_[m] = E_[m] * u_[m] + F1_[m] * k1_[m] + 2.0 * F2_[m] * (k2_[m] + k3_[m]) + F3_[m] * k4_[m];
    t_ += h;
    return {StepStatus::ok, {}};
  }

  // φ₁, φ₂, φ₃ of z: series below |z| = 1, recurrence from eᶻ above.
  static void phi_functions(double z, double& p1, double& p2, double& p3) {
    if (std::abs(z) < 1.0) {
      p1 = p2 = p3 = 0.0;
      double term = 1.0;  // z^m / m!
      double f1 = 1.0, f2 = 2.0, f3 = 6.0;  // (m+1)!, (m+2)!, (m+3)!
      for (int m = 0; m < 24; ++m) {
        p1 += term / f1;
        p2 += term / f2;
        p3 += term / f3;
        term *= z;
        f1 *= (m + 2);
        f2 *= (m + 3);
        f3 *= (m + 4);
      }
      return;
    }
    const double e = std::exp(z);
    p1 = (e - 1.0) / z;
    p2 = (p1 - 1.0) / z;
    p3 = (p2 - 0.5) / z;
  }

  void prepare_exponential(double h) {
    const auto& band = spec_.band();
    const int n = model_->n();
    const Eigen::MatrixXcd Ginv = averaged_metric(t_).inverse();
    if (!p_.static_reference || h != etd_h_ || L_.empty()) {
      L_.resize(B_);
      E_.resize(B_);
      E2_.resize(B_);
      Q_.resize(B_);
      F1_.resize(B_);
      F2_.resize(B_);
      F3_.resize(B_);
      const double pi2 = std::numbers::pi * std::numbers::pi;
      for (std::size_t m = 0; m < B_; ++m) {
        const cplx* z = &band.zeta[m * n];
        cplx s = 0.0;
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) s += Ginv(k, j) * z[j] * std::conj(z[k]);
        L_[m] = -pi2 * s.real() - p_.kappa;
        const double hz = h * L_[m];
        E_[m] = std::exp(hz);
        E2_[m] = std::exp(0.5 * hz);
        double q1, q2, q3, p1, p2, p3;
        phi_functions(0.5 * hz, q1, q2, q3);
        phi_functions(hz, p1, p2, p3);
        Q_[m] = 0.5 * h * q1;
        F1_[m] = h * (p1 - 3.0 * p2 + 4.0 * p3);
        F2_[m] = h * (p2 - 2.0 * p3);
        F3_[m] = h * (4.0 * p3 - p2);
      }
      etd_h_ = h;
    }
  }

  HermitianField current_metric_from_scratch() const {
    HermitianField g = base_at(t_);
    const int n = model_->n();
    int e = 0;
    for (int j = 0; j < n; ++j, ++e)
      for (std::size_t i = 0; i < M_; ++i) g.diag(j)[i] += H_[e][i];
    for (int j = 0; j < n; ++j)
      for (int k = j + 1; k < n; ++k, e += 2)
        for (std::size_t i = 0; i < M_; ++i) g.off(j, k)[i] += cplx(H_[e][i], H_[e + 1][i]);
    return g;
  }

  RhsInfo evaluate_full(double t, const ComplexArray& u, ComplexArray& out) {
    const int n = model_->n();
    for (int e = 0; e < entries_; ++e) {
      spec_.scatter_band(u, sym_[e].data(), half_);
      spec_.c2r(half_, H_[e]);
    }
    const Eigen::MatrixXcd Gbar = averaged_metric(t);
    const Eigen::MatrixXcd Ginv = Gbar.inverse();
    const bool moving = !p_.static_reference;
    const auto& w0 = p_.omega0;
    const auto& lam = p_.lambda;
    const auto& logomega = p_.log_omega.values;
    parallel_for(M_, [&](std::size_t lo, std::size_t hi) {
      Eigen::MatrixXcd g(n, n), D(n, n);
      for (std::size_t i = lo; i < hi; ++i) {
        if (n == 1) {
          double a = w0.diag(0)[i] + H_[0][i];
          if (moving) a += t * lam.diag(0)[i];
          mineig_[i] = a;
          maxeig_[i] = a;
          invdev_[i] = std::abs(1.0 / a - Ginv(0, 0).real());
          logdet_[i] = a > 0.0 ? std::log(a) : 0.0;
        } else if (n == 2) {
          double a = w0.diag(0)[i] + H_[0][i];
          double d = w0.diag(1)[i] + H_[1][i];
          cplx c = w0.off(0, 1)[i] + cplx(H_[2][i], H_[3][i]);
          if (moving) {
            a += t * lam.diag(0)[i];
            d += t * lam.diag(1)[i];
            c += t * lam.off(0, 1)[i];
          }
          const auto er = pointwise::range2(a, d, c);
          mineig_[i] = er.min;
          maxeig_[i] = er.max;
          const double det = a * d - std::norm(c);
          logdet_[i] = er.min > 0.0 ? std::log(det) : 0.0;
          if (er.min > 0.0) {
            // g⁻¹ − Ḡ⁻¹, Hermitian 2×2: spectral norm |mean| + radius
            const double ia = d / det - Ginv(0, 0).real();
            const double id = a / det - Ginv(1, 1).real();
            const cplx ic = -c / det - Ginv(0, 1);
            const double mid = 0.5 * (ia + id);
            invdev_[i] = std::abs(mid) + std::hypot(0.5 * (ia - id), std::abs(ic));
          } else {
            invdev_[i] = 0.0;
          }
        } else {
          int e = n;
          for (int j = 0; j < n; ++j) g(j, j) = w0.diag(j)[i] + H_[j][i] + (moving ? t * lam.diag(j)[i] : 0.0);
          for (int j = 0; j < n; ++j)
            for (int k = j + 1; k < n; ++k, e += 2) {
              g(j, k) = w0.off(j, k)[i] + cplx(H_[e][i], H_[e + 1][i]) + (moving ? t * lam.off(j, k)[i] : cplx{});
              g(k, j) = std::conj(g(j, k));
            }
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(g, Eigen::EigenvaluesOnly);
          mineig_[i] = es.eigenvalues()(0);
          maxeig_[i] = es.eigenvalues()(n - 1);
          if (mineig_[i] > 0.0) {
            logdet_[i] = es.eigenvalues().array().log().sum();
            D = g.inverse() - Ginv;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> ds(D, Eigen::EigenvaluesOnly);
            invdev_[i] = ds.eigenvalues().cwiseAbs().maxCoeff();
          } else {
            logdet_[i] = 0.0;
            invdev_[i] = 0.0;
          }
        }
        r_[i] = logdet_[i] - logomega[i];
      }
    });
    RhsInfo info;
    info.min_eig = std::numeric_limits<double>::infinity();
    info.max_eig = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < M_; ++i) {
      if (mineig_[i] < info.min_eig) {
        info.min_eig = mineig_[i];
        info.bad_point = i;
      }
      info.max_eig = std::max(info.max_eig, maxeig_[i]);
      info.inv_deviation = std::max(info.inv_deviation, invdev_[i]);
    }
    if (!(info.min_eig > positivity_threshold)) {
      info.ok = false;
      return info;
    }
    if (p_.forcing) p_.forcing(t, r_);
    info.projection_correction = project_in_place(*model_, r_);
    max_correction_ = std::max(max_correction_, info.projection_correction);
    if (info.projection_correction > 1e-10) throw BasicnessDefect(info.projection_correction);
    spec_.r2c(r_, half_);
    spec_.gather_band(half_, out);
    if (p_.kappa != 0.0)
      for (std::size_t m = 0; m < B_; ++m) out[m] -= p_.kappa * u[m];
    return info;
  }

  FlowProblem p_;
  StepMethod method_;
  ModelPtr model_;
  const SpectralEngine& spec_;
  std::size_t B_ = 0, M_ = 0;
  int entries_ = 0;
  std::vector<std::vector<double>> sym_;
  double zeta2_max_ = 0.0;
  Eigen::MatrixXcd base_avg_, lambda_avg_;

  double t_ = 0.0;
  ComplexArray u_;
  std::vector<RealArray> H_;
  RealArray logdet_, r_, mineig_, maxeig_, invdev_;
  ComplexArray half_, stage_, k1_, k2_, k3_, k4_;
  ComplexArray a_;
  std::vector<double> L_, E_, E2_, Q_, F1_, F2_, F3_;
  double etd_h_ = 0.0;
  double max_correction_ = 0.0;

  bool cache_valid_ = false;
  ComplexArray cache_out_;
  RhsInfo cache_info_;
};

// ---------------------------------------------------------------------------
// States, single steps and trajectories

struct FlowState {
  double t = 0.0;
  BasicField phi;
  FlowSample diagnostics;
  std::string halt_reason;  // empty while the flow is running normally
  HermitianField omega;     // ω_t = ω̂_t + i∂∂̄φ
};

/// Dealiased, basic-projected ∂φ/∂t at a state.
inline BasicField ma_rhs(const FlowState& state, const ReferenceData& ref) {
  FlowIntegrator integrator(FlowProblem::from_reference(ref));
  integrator.set_state(state.t, state.phi);
  ComplexArray out;
  RhsInfo info = integrator.evaluate(state.t, integrator.coefficients(), out, false);
  if (!info.ok) throw PositivityLoss(info.bad_point, info.min_eig);
  ComplexArray half;
  ref.model()->spectral().scatter_band(out, nullptr, half);
  RealArray values;
  ref.model()->spectral().c2r(half, values);
  return {ref.model(), std::move(values)};
}

struct Schedule {
  double t_end = 1.0;
  double dt = 0.0;        // fixed step; 0 selects the adaptive step
  double dt_max = 0.05;
  double c_cfl = 0.8;
  std::size_t max_steps = 100000000;
  StepMethod method = StepMethod::rk4;
  std::size_t diag_every = 10;     // 0 = only first and last sample
  std::size_t record_every = 0;    // store φ and ω_t every k steps (0 = never)
  std::size_t checkpoint_every = 0;
  bool stop_when_converged = false;
  double tol_conv = 1e-7;
  double dt_min = 1e-12;
  std::size_t first_step = 0;      // step index of the initial state (resume)
  /// Called at checkpoint steps after the state has been canonicalized, with
  /// the grid values that reproduce it.
  std::function<void(const FlowIntegrator&, std::size_t, const RealArray&)> on_checkpoint;
};

struct Trajectory {
  std::vector<FlowSample> samples;
  std::vector<double> record_times;
  std::vector<BasicField> record_phi;
  std::vector<HermitianField> record_metric;
  FlowState final;
  std::string halt_reason;  // "", "PositivityLoss", "Stalled"
  RhsInfo halt_info;
  std::size_t steps = 0;    // steps taken in this run
  std::size_t last_step = 0;
  double max_projection_correction = 0.0;
  bool converged = false;
  double converged_time = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline bool sample_converged(const FlowSample& s, double tol, bool normalized) {
  if (normalized) return s.dphi_sup < tol;
  return s.rho_sup < tol && s.osc_dphi < tol;
}
}  // namespace detail

/// Integrates from the integrator's current state up to schedule.t_end.
inline Trajectory run(FlowIntegrator& integ, const Schedule& sched) {
  Trajectory traj;
  const bool normalized = integ.problem().kappa != 0.0;
  std::size_t step = sched.first_step;
  auto record = [&] {
    traj.record_times.push_back(integ.t());
    traj.record_phi.push_back(integ.phi());
    traj.record_metric.push_back(integ.metric());
  };
  auto take_sample = [&](double dt) {
    traj.samples.push_back(integ.sample(dt));
    const auto& s = traj.samples.back();
    if (!traj.converged && detail::sample_converged(s, sched.tol_conv, normalized)) {
      traj.converged = true;
      traj.converged_time = s.t;
    }
  };
  take_sample(0.0);
  if (sched.record_every) record();
  ComplexArray rhs1, prev_u;
  double prev_t = integ.t();
  double last_dt = 0.0;
  const double eps_t = 1e-14 * std::max(1.0, std::abs(sched.t_end));
  while (integ.t() < sched.t_end - eps_t && traj.steps < sched.max_steps) {
    if (sched.stop_when_converged && traj.converged) break;
    RhsInfo info1 = integ.evaluate(integ.t(), integ.coefficients(), rhs1);
    if (!info1.ok) {
      // keep the last state at which ω_t was positive
      traj.halt_reason = "PositivityLoss";
      traj.halt_info = info1;
      if (traj.steps > 0) integ.set_coefficients(prev_t, prev_u);
      break;
    }
    prev_t = integ.t();
    prev_u = integ.coefficients();
    const double remaining = sched.t_end - integ.t();
    double dt;
    bool adaptive = sched.dt <= 0.0;
    if (adaptive) {
      dt = std::min({integ.stable_dt(info1, sched.c_cfl), sched.dt_max, remaining});
    } else {
      dt = std::min(sched.dt, remaining);
      if (integ.stability_number(info1, dt) > 1.0)
        throw ContractViolation("fixed dt " + std::to_string(sched.dt) + " exceeds the stability bound " +
                                std::to_string(integ.stable_dt(info1, 1.0)));
    }
    bool halted = false;
    for (;;) {
      auto outcome = integ.advance(dt, rhs1);
      if (outcome.status == FlowIntegrator::StepStatus::ok) break;
      if (!adaptive) {
        traj.halt_reason = "PositivityLoss";
        traj.halt_info = outcome.info;
        halted = true;
        break;
      }
      dt *= 0.5;
      if (dt < sched.dt_min) {
        traj.halt_reason = "Stalled";
        traj.halt_info = outcome.info;
        halted = true;
        break;
      }
    }
    if (halted) break;
    ++step;
    ++traj.steps;
    last_dt = dt;
    if (sched.checkpoint_every && step % sched.checkpoint_every == 0) {
      const RealArray values = integ.canonicalize();
      if (sched.on_checkpoint) sched.on_checkpoint(integ, step, values);
    }
    if (sched.diag_every && step % sched.diag_every == 0) take_sample(dt);
    if (sched.record_every && step % sched.record_every == 0) record();
  }
  if (traj.samples.back().t != integ.t()) {
    try {
      take_sample(last_dt);
    } catch (const PositivityLoss&) {
    }
  }
  traj.last_step = step;
  traj.max_projection_correction = integ.max_projection_correction();
  traj.final.t = integ.t();
  traj.final.phi = integ.phi();
  traj.final.diagnostics = traj.samples.back();
  traj.final.omega = integ.metric();
  traj.final.halt_reason = traj.halt_reason;
  return traj;
}

/// Flow from φ = 0 with the default reference gauge.
inline Trajectory run(const HermitianMetric& omega0, double T_prime, double t_end, Schedule sched = {}) {
  if (t_end > T_prime) throw ContractViolation("t_end exceeds the reference horizon T′");
  ReferenceData ref = build_reference(omega0, T_prime);
  FlowIntegrator integ(FlowProblem::from_reference(ref), sched.method);
  integ.set_state(0.0, BasicField::zeros(omega0.model()));
  sched.t_end = t_end;
  return run(integ, sched);
}

/// One step of size dt from `state`; the halt reason is set instead of
/// throwing when positivity is lost.
inline FlowState step(const FlowState& state, const ReferenceData& ref, double dt,
                      StepMethod method = StepMethod::rk4) {
  FlowIntegrator integ(FlowProblem::from_reference(ref), method);
  integ.set_state(state.t, state.phi);
  ComplexArray rhs1;
  FlowState out = state;
  RhsInfo info = integ.evaluate(state.t, integ.coefficients(), rhs1);
  if (!info.ok) {
    out.halt_reason = "PositivityLoss";
    return out;
  }
  auto outcome = integ.advance(dt, rhs1);
  if (outcome.status != FlowIntegrator::StepStatus::ok) {
    out.halt_reason = "PositivityLoss";
    return out;
  }
  out.t = integ.t();
  out.phi = integ.phi();
  out.omega = integ.metric();
  try {
    out.diagnostics = integ.sample(dt);
  } catch (const PositivityLoss&) {
    out.halt_reason = "PositivityLoss";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Potential recovery

struct RecoveryOptions {
  double C = 100.0;  // tolerance C·dt² + floor
  double floor = 1e-9;
};

/// Integrates dφ/dt = log(ω_tⁿ/Ω) pointwise along a sampled trajectory of
/// metrics (uniform time step dt, first sample at t0) with the trapezoidal
/// rule, then checks ω_t = ω̂_t + i∂∂̄φ at every sample.
inline std::vector<BasicField> recover_potential(const std::vector<HermitianField>& metrics, double dt,
                                                 const ReferenceData& ref, double t0 = 0.0,
                                                 const RecoveryOptions& opt = {}, double* max_residual = nullptr) {
  if (metrics.empty()) return {};
  const ModelPtr& model = ref.model();
  std::vector<BasicField> out;
  out.reserve(metrics.size());
  auto rate = [&](const HermitianField& g) {
    BasicField r(model, log_det(g, 0.0));
    r -= ref.log_omega;
    return r;
  };
  BasicField phi = BasicField::zeros(model);
  BasicField prev = rate(metrics[0]);
  out.push_back(phi);
  for (std::size_t k = 1; k < metrics.size(); ++k) {
    BasicField cur = rate(metrics[k]);
    for (std::size_t i = 0; i < phi.size(); ++i) phi.values[i] += 0.5 * dt * (prev.values[i] + cur.values[i]);
    out.push_back(phi);
    prev = std::move(cur);
  }
  const double tol = opt.C * dt * dt + opt.floor;
  double worst = 0.0;
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    const double t = t0 + dt * static_cast<double>(k);
    HermitianField d = ref.omega_hat(t) + ddbar(out[k]) - metrics[k];
    worst = std::max(worst, sup_norm(d));
  }
  if (max_residual) *max_residual = worst;
  if (worst > tol) throw ReconstructFailure(worst, tol);
  return out;
}

// ---------------------------------------------------------------------------
// Twisted (normalized) flow

struct NormalizedResult {
  Trajectory trajectory;
  BasicField phi_infinity;
  double elliptic_residual = 0.0;  // ‖log det(θ + i∂∂̄φ) − log Ω − φ‖_∞, undealiased
  double contraction_rate = 0.0;   // fitted decay rate of ‖∂φ/∂t‖_∞
};

/// ∂φ/∂t = log det(θ + i∂∂̄φ) − log Ω − φ with log Ω = h + log det θ
/// (θ constant positive). The fixed point solves the twisted elliptic
/// Monge-Ampère equation. Scaling Ω by c shifts the fixed point by −log c.
inline FlowProblem normalized_problem(const ModelPtr& model, const Eigen::MatrixXcd& theta, const BasicField& h) {
  const HermitianMetric th = HermitianMetric::flat(model, theta);
  FlowProblem p;
  p.omega0 = th.field();
  p.lambda = HermitianField(model);
  p.static_reference = true;
  p.log_omega = h;
  const double logdet_theta = std::log(theta.determinant().real());
  for (auto& v : p.log_omega.values) v += logdet_theta;
  p.kappa = 1.0;
  return p;
}

/// Continues a twisted flow from the integrator's current state.
inline NormalizedResult run_normalized(FlowIntegrator& integ, const Schedule& sched) {
  if (integ.problem().kappa == 0.0) throw ContractViolation("run_normalized needs a twisted problem");
  NormalizedResult res;
  res.trajectory = run(integ, sched);
  res.phi_infinity = res.trajectory.final.phi;
  res.elliptic_residual = sup_norm(integ.rhs_physical());
  // least-squares slope of log‖∂φ/∂t‖ over samples above round-off
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (const auto& s : res.trajectory.samples) {
    if (s.dphi_sup < 1e-11 || s.t <= 0.0) continue;
    const double y = std::log(s.dphi_sup);
    sx += s.t;
    sy += y;
    sxx += s.t * s.t;
    sxy += s.t * y;
    ++count;
  }
  if (count >= 2) {
    const double denom = count * sxx - sx * sx;
    if (denom > 0) res.contraction_rate = -(count * sxy - sx * sy) / denom;
  }
  return res;
}

inline NormalizedResult run_normalized(const ModelPtr& model, const Eigen::MatrixXcd& theta, const BasicField& h,
                                       const Schedule& sched) {
  FlowIntegrator integ(normalized_problem(model, theta, h), sched.method);
  integ.set_state(0.0, BasicField::zeros(model));
  return run_normalized(integ, sched);
}

// ---------------------------------------------------------------------------
// Convergence monitoring

struct ConvergenceReport {
  bool converged = false;
  double converged_time = std::numeric_limits<double>::quiet_NaN();
  std::string halt_reason;
  std::vector<double> t, rho_sup, osc_phi, osc_dphi, min_eig, max_eig, limit_deviation, dphi_sup;
  /// ‖ρ‖_∞ is non-increasing after the first sample at which it starts to
  /// decrease (up to a relative slack of 1e-6 and an absolute floor).
  bool rho_monotone_after_transient = true;
};

inline ConvergenceReport convergence_monitor(const Trajectory& traj, double tol_conv = 1e-7, bool normalized = false) {
  ConvergenceReport rep;
  rep.halt_reason = traj.halt_reason;
  for (const auto& s : traj.samples) {
    rep.t.push_back(s.t);
    rep.rho_sup.push_back(s.rho_sup);
    rep.osc_phi.push_back(s.osc_phi);
    rep.osc_dphi.push_back(s.osc_dphi);
    rep.min_eig.push_back(s.min_eig);
    rep.max_eig.push_back(s.max_eig);
    rep.limit_deviation.push_back(s.limit_deviation);
    rep.dphi_sup.push_back(s.dphi_sup);
    if (!rep.converged && traj.halt_reason.empty() && detail::sample_converged(s, tol_conv, normalized)) {
      rep.converged = true;
      rep.converged_time = s.t;
    }
  }
  // A halted run is converged only if it met the criterion before halting.
  if (!traj.halt_reason.empty()) {
    for (const auto& s : traj.samples)
      if (detail::sample_converged(s, tol_conv, normalized)) {
        rep.converged = true;
        rep.converged_time = s.t;
        break;
      }
  }
  std::size_t start = 1;
  while (start < rep.rho_sup.size() && rep.rho_sup[start] > rep.rho_sup[start - 1]) ++start;
  for (std::size_t k = start + 1; k < rep.rho_sup.size(); ++k)
    if (rep.rho_sup[k] > rep.rho_sup[k - 1] * (1 + 1e-6) + 1e-12) rep.rho_monotone_after_transient = false;
  return rep;
}

}  // namespace tcrf
