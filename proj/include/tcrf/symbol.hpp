#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tcrf/hermitian_geometry.hpp"

namespace tcrf {

/// Scalar basic differential operator D(u) of even order r.
///
/// Symbol conventions: a covector is given by an integer lattice vector k,
/// with phase φ(x) = 2π k·x. Its (1,0) components are ξ_j = ∂_jφ = πζ_j and
/// |ξ|² = Σ_j |ξ_j|², a quarter of the Euclidean |dφ|². The principal symbol
/// is σ(x, ξ) = lim s^{−r} e^{−isφ} D_*(e^{isφ} v); with these conventions
/// Δ = Σ_j ∂_j∂̄_j has σ = −|ξ|², and log det(g + i∂∂̄u) linearizes to a
/// symbol −g^{jk̄}ξ_j ξ̄_k.
struct BasicOperator {
  int order = 2;
  std::string name;
  std::function<BasicField(const BasicField&)> apply;
  /// Optional closed-form normalized symbol σ/|ξ|^r at (point, k), for checks.
  std::function<double(std::size_t, const std::vector<int>&)> symbol_oracle;
};

inline BasicOperator laplacian_operator() {
  BasicOperator op;
  op.order = 2;
  op.name = "laplacian";
  op.apply = [](const BasicField& u) { return complex_laplacian(u); };
  op.symbol_oracle = [](std::size_t, const std::vector<int>&) { return -1.0; };
  return op;
}

/// −Δ: not parabolic, used as the negative control.
inline BasicOperator backward_heat_operator() {
  BasicOperator op;
  op.order = 2;
  op.name = "backward_heat";
  op.apply = [](const BasicField& u) {
    BasicField out = complex_laplacian(u);
    out *= -1.0;
    return out;
  };
  op.symbol_oracle = [](std::size_t, const std::vector<int>&) { return 1.0; };
  return op;
}

namespace detail {
inline std::vector<cplx> unit_xi(const std::vector<int>& k) {
  const int n = static_cast<int>(k.size()) / 2;
  std::vector<cplx> z(n);
  double norm2 = 0.0;
  for (int j = 0; j < n; ++j) {
    z[j] = cplx(k[2 * j], -k[2 * j + 1]);
    norm2 += std::norm(z[j]);
  }
  for (auto& v : z) v /= std::sqrt(norm2);
  return z;
}
}  // namespace detail

/// u ↦ log det(g + i∂∂̄u) − log det g; the right-hand side of the potential
/// flow up to terms of order zero.
inline BasicOperator monge_ampere_operator(const HermitianField& g) {
  BasicOperator op;
  op.order = 2;
  op.name = "monge_ampere";
  const RealArray base = log_det(g, 1e-10);
  op.apply = [g, base](const BasicField& u) {
    RealArray v = log_det(g + ddbar(u), 1e-10);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= base[i];
    return BasicField(u.model, std::move(v));
  };
  op.symbol_oracle = [g](std::size_t point, const std::vector<int>& k) {
    const auto z = detail::unit_xi(k);
    const Eigen::MatrixXcd ginv = g.at(point).inverse();
    cplx s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j)
      for (std::size_t l = 0; l < z.size(); ++l) s += ginv(l, j) * z[j] * std::conj(z[l]);
    return -s.real();
  };
  return op;
}

/// Largest defect of D(u) from its holonomy projection over random basic u
/// of sup norm `amplitude`.
inline double operator_basicness_defect(const BasicOperator& D, const ModelPtr& model, std::mt19937_64& rng,
                                        int samples = 3, double amplitude = 0.002) {
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    BasicField u = random_band_limited(model, 2, 1.0, rng);
    u *= amplitude / std::max(sup_norm(u), 1e-300);
    worst = std::max(worst, basicness_defect(D.apply(u)));
  }
  return worst;
}

struct LinearizeOptions {
  double h1 = 1e-4;
  double h2 = 5e-5;
};

/// D_*|w(v) by central differences at h1 and h2, combined by Richardson
/// extrapolation. A failed evaluation halves both steps once.
inline BasicField linearize(const BasicOperator& D, const BasicField& w, const BasicField& v,
                            const LinearizeOptions& opt = {}) {
  auto central = [&](double h) {
    BasicField plus = w, minus = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      plus.values[i] += h * v.values[i];
      minus.values[i] -= h * v.values[i];
    }
    BasicField d = D.apply(plus) - D.apply(minus);
    d *= 1.0 / (2.0 * h);
    return d;
  };
  double h1 = opt.h1, h2 = opt.h2;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      BasicField a = central(h1);
      BasicField b = central(h2);
      const double ratio2 = (h1 / h2) * (h1 / h2);
      for (std::size_t i = 0; i < a.size(); ++i) a.values[i] = (ratio2 * b.values[i] - a.values[i]) / (ratio2 - 1.0);
      return a;
    } catch (const Error& e) {
      if (attempt == 1) throw LinearizeFailure(std::string("operator evaluation failed near w: ") + e.what());
      h1 *= 0.5;
      h2 *= 0.5;
    }
  }
  throw LinearizeFailure("unreachable");
}

struct SymbolOptions {
  int s_max = 4;
  double max_relative_residual = 0.05;
  LinearizeOptions linearize;
};

/// Symbol of D_*|w at every grid point for the lattice covector k, with the
/// fit residual relative to the leading term.
struct SymbolField {
  std::vector<int> k;
  double xi_norm = 0.0;              // |ξ|
  std::vector<cplx> value;           // σ(x, ξ) per grid point
  std::vector<double> relative_residual;
  std::vector<int> s_values;
};

inline SymbolField symbol_field(const BasicOperator& D, const BasicField& w, const std::vector<int>& k,
                                const SymbolOptions& opt = {}) {
  const ModelPtr& model = w.model;
  const int dims = model->dims();
  if (static_cast<int>(k.size()) != dims) throw ContractViolation("covector has the wrong dimension");
  int kmax = 0;
  double k2 = 0.0;
  for (int a : k) {
    kmax = std::max(kmax, std::abs(a));
    k2 += double(a) * a;
  }
  if (kmax == 0) throw ContractViolation("covector must be nonzero");
  SymbolField out;
  out.k = k;
  out.xi_norm = std::numbers::pi * std::sqrt(k2);
  // e^{isφ} is resolved exactly while s|k|∞ stays below the Nyquist index
  const int s_max = std::min(opt.s_max, (model->N() / 2 - 1) / kmax);
  const int r = D.order;
  for (int s = 1; s <= s_max; ++s) out.s_values.push_back(s);
  const std::size_t M = model->size();
  if (s_max < r + 1)
    throw SymbolUnresolved("not enough resolved phases for covector (|k|∞ = " + std::to_string(kmax) + ")",
                           std::numeric_limits<double>::infinity());
  std::vector<double> phase(M);
  for (std::size_t i = 0; i < M; ++i) {
    double p = 0.0;
    for (int a = 0; a < dims; ++a) p += k[a] * model->lattice().coordinate(i, a);
    phase[i] = 2.0 * std::numbers::pi * p;
  }
  // p(s) = e^{−isφ} D_*(e^{isφ}), one row per s
  std::vector<std::vector<cplx>> samples(s_max, std::vector<cplx>(M));
  for (int s = 1; s <= s_max; ++s) {
    BasicField c(model, RealArray(M)), sn(model, RealArray(M));
    for (std::size_t i = 0; i < M; ++i) {
      c.values[i] = std::cos(s * phase[i]);
      sn.values[i] = std::sin(s * phase[i]);
    }
    const BasicField lc = linearize(D, w, c, opt.linearize);
    const BasicField ls = linearize(D, w, sn, opt.linearize);
    for (std::size_t i = 0; i < M; ++i)
      samples[s - 1][i] = std::exp(cplx(0.0, -s * phase[i])) * cplx(lc.values[i], ls.values[i]);
  }
  // least-squares polynomial of degree r in s; the leading coefficient is σ
  Eigen::MatrixXd V(s_max, r + 1);
  for (int s = 1; s <= s_max; ++s)
    for (int d = 0; d <= r; ++d) V(s - 1, d) = std::pow(double(s), d);
  const auto qr = V.colPivHouseholderQr();
  out.value.resize(M);
  out.relative_residual.resize(M);
  Eigen::VectorXcd y(s_max);
  for (std::size_t i = 0; i < M; ++i) {
    for (int s = 0; s < s_max; ++s) y(s) = samples[s][i];
    Eigen::VectorXd cr = qr.solve(y.real()), ci = qr.solve(y.imag());
    const cplx lead(cr(r), ci(r));
    const double res = std::sqrt((V * cr - y.real()).squaredNorm() + (V * ci - y.imag()).squaredNorm());
    // σ(x, sξ) = s^r σ(x, ξ), so the s^r coefficient is σ at the covector of φ
    out.value[i] = lead;
    const double scale = std::abs(lead) * std::pow(double(s_max), r);
    // an imaginary leading part is not expected from a real operator
    out.relative_residual[i] = scale > 0.0 ? (res + std::abs(lead.imag()) * std::pow(double(s_max), r)) / scale : res;
  }
  return out;
}

/// σ(D_*|w)(x, ξ)·v at one grid point.
inline cplx principal_symbol(const BasicOperator& D, const BasicField& w, std::size_t point, const std::vector<int>& k,
                             double v = 1.0, const SymbolOptions& opt = {}) {
  SymbolField f = symbol_field(D, w, k, opt);
  if (f.relative_residual[point] > opt.max_relative_residual)
    throw SymbolUnresolved("symbol fit residual too large", f.relative_residual[point]);
  return f.value[point] * v;
}

/// Normalized symbol σ/|ξ|^r.
inline double normalized_symbol(const BasicOperator& D, const BasicField& w, std::size_t point,
                                const std::vector<int>& k, const SymbolOptions& opt = {}) {
  SymbolField f = symbol_field(D, w, k, opt);
  if (f.relative_residual[point] > opt.max_relative_residual)
    throw SymbolUnresolved("symbol fit residual too large", f.relative_residual[point]);
  return f.value[point].real() / std::pow(f.xi_norm, D.order);
}

struct EllipticityOptions {
  std::size_t covectors = 64;
  std::size_t points = 16;  // evenly spaced grid points, 0 = every point
  std::vector<double> directions = {1.0, -1.0, 0.5, -2.0};
  double mu_min = 1e-6;
  SymbolOptions symbol;
};

struct SymbolSample {
  std::vector<double> xi;  // unit covector in the real coordinates (x1, y1, …)
  std::size_t point = 0;
  double v = 0.0;
  cplx sigma;              // σ(x, ξ)v at the unnormalized lattice covector
  double ratio = 0.0;      // (−1)^{r/2}⟨σv, v⟩ / (|ξ|^r |v|²)
  double relative_residual = 0.0;
};

struct SymbolReport {
  std::string operator_name;
  int order = 2;
  std::vector<SymbolSample> samples;
  double mu = std::numeric_limits<double>::infinity();
  double max_relative_residual = 0.0;
  bool pass = false;
  bool complete = true;  // false if any sample was unresolved
  std::size_t unresolved = 0;
};

/// Lattice covectors ordered by length, then lexicographically, one of each
/// ± pair, restricted to |k|∞ ≤ kmax.
inline std::vector<std::vector<int>> lattice_covectors(int dims, int kmax, std::size_t count) {
  std::vector<std::vector<int>> all;
  std::vector<int> k(dims, -kmax);
  for (;;) {
    // keep k whose first nonzero entry is positive
    int first = 0;
    for (int a : k)
      if (a != 0) {
        first = a;
        break;
      }
    if (first > 0) all.push_back(k);
    int a = dims - 1;
    while (a >= 0 && k[a] == kmax) k[a--] = -kmax;
    if (a < 0) break;
    ++k[a];
  }
  std::stable_sort(all.begin(), all.end(), [](const std::vector<int>& x, const std::vector<int>& y) {
    long nx = 0, ny = 0;
    for (int v : x) nx += long(v) * v;
    for (int v : y) ny += long(v) * v;
    if (nx != ny) return nx < ny;
    return x > y;
  });
  if (all.size() > count) all.resize(count);
  return all;
}

/// Samples (−1)^{r/2}⟨σ(D_*|w)(x, ξ)v, v⟩ / (|ξ|^r |v|²) over covectors,
/// grid points and fiber directions; μ is its minimum.
inline SymbolReport certify_ellipticity(const BasicOperator& D, const BasicField& w,
                                        const EllipticityOptions& opt = {}) {
  const ModelPtr& model = w.model;
  const int dims = model->dims();
  const int r = D.order;
  // covectors must leave room for r + 1 resolved phases
  const int kmax = std::max(1, (model->N() / 2 - 1) / (r + 1));
  const auto covectors = lattice_covectors(dims, kmax, opt.covectors);
  std::vector<std::size_t> points;
  const std::size_t M = model->size();
  if (opt.points == 0 || opt.points >= M) {
    for (std::size_t i = 0; i < M; ++i) points.push_back(i);
  } else {
    for (std::size_t p = 0; p < opt.points; ++p) points.push_back(p * M / opt.points);
  }
  SymbolReport rep;
  rep.operator_name = D.name;
  rep.order = r;
  const double sign = (r / 2) % 2 == 0 ? 1.0 : -1.0;
  for (const auto& k : covectors) {
    double kn = 0.0;
    for (int a : k) kn += double(a) * a;
    kn = std::sqrt(kn);
    std::vector<double> unit(k.begin(), k.end());
    for (auto& u : unit) u /= kn;
    SymbolField f;
    try {
      f = symbol_field(D, w, k, opt.symbol);
    } catch (const SymbolUnresolved&) {
      rep.complete = false;
      ++rep.unresolved;
      continue;
    }
    const double xr = std::pow(f.xi_norm, r);
    for (std::size_t p : points) {
      if (f.relative_residual[p] > opt.symbol.max_relative_residual) {
        rep.complete = false;
        ++rep.unresolved;
        continue;
      }
      rep.max_relative_residual = std::max(rep.max_relative_residual, f.relative_residual[p]);
      for (double v : opt.directions) {
        SymbolSample s;
        s.xi = unit;
        s.point = p;
        s.v = v;
        s.sigma = f.value[p] * v;
        s.ratio = sign * (s.sigma * v).real() / (xr * v * v);
        s.relative_residual = f.relative_residual[p];
        rep.mu = std::min(rep.mu, s.ratio);
        rep.samples.push_back(std::move(s));
      }
    }
  }
  rep.pass = rep.complete && !rep.samples.empty() && rep.mu >= opt.mu_min;
  return rep;
}

}  // namespace tcrf
