#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "tcrf/transverse_model.hpp"

namespace tcrf {

/// Multi-indices are bit masks over {0, ..., n-1}: bit j set means dz^{j+1}
/// (or dz̄^{j+1}) occurs. Components are stored in increasing index order.
using IndexMask = unsigned;

namespace forms {
inline int count(IndexMask m) { return std::popcount(m); }
inline int count_below(IndexMask m, int j) { return std::popcount(m & ((IndexMask{1} << j) - 1)); }
/// Sign of the permutation sorting the concatenation (A, B) of two disjoint
/// increasing index lists; 0 when they overlap.
inline int merge_sign(IndexMask a, IndexMask b) {
  if (a & b) return 0;
  int inversions = 0;
  for (IndexMask rest = b; rest; rest &= rest - 1) {
    const int j = std::countr_zero(rest);
    inversions += std::popcount(a >> (j + 1));
  }
  return inversions % 2 ? -1 : 1;
}
inline std::vector<int> members(IndexMask m) {
  std::vector<int> out;
  for (; m; m &= m - 1) out.push_back(std::countr_zero(m));
  return out;
}
inline std::vector<IndexMask> subsets(int n, int size) {
  std::vector<IndexMask> out;
  for (IndexMask m = 0; m < (IndexMask{1} << n); ++m)
    if (std::popcount(m) == size) out.push_back(m);
  return out;
}
}  // namespace forms

/// Complex differential form on the transverse torus,
/// Σ α_{I,J} dz^I ∧ dz̄^J with |I| + |J| = degree. Forms of pure bidegree
/// (p, q) are the usual case; d_B of a (p, q)-form returns the sum of its
/// (p+1, q) and (p, q+1) parts in one object.
class BasicForm {
 public:
  using Key = std::pair<IndexMask, IndexMask>;

  BasicForm() = default;
  BasicForm(ModelPtr model, int degree) : model_(std::move(model)), degree_(degree) {}

  static BasicForm scalar(const BasicField& f) {
    BasicForm out(f.model, 0);
    auto& c = out.component(0, 0);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = f.values[i];
    return out;
  }
  static BasicForm scalar(ModelPtr model, ComplexArray values) {
    BasicForm out(std::move(model), 0);
    out.comps_[{0, 0}] = std::move(values);
    return out;
  }
  /// Single component f · dz^I ∧ dz̄^J.
  static BasicForm monomial(const BasicField& f, IndexMask I, IndexMask J, cplx scale = 1.0) {
    BasicForm out(f.model, forms::count(I) + forms::count(J));
    auto& c = out.component(I, J);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = scale * f.values[i];
    return out;
  }

  const ModelPtr& model() const { return model_; }
  int degree() const { return degree_; }
  const std::map<Key, ComplexArray>& components() const { return comps_; }

  ComplexArray& component(IndexMask I, IndexMask J) {
    if (forms::count(I) + forms::count(J) != degree_) throw ContractViolation("component degree does not match form");
    auto it = comps_.find({I, J});
    if (it == comps_.end()) it = comps_.emplace(Key{I, J}, ComplexArray(model_->size(), cplx{})).first;
    return it->second;
  }
  const ComplexArray* find(IndexMask I, IndexMask J) const {
    auto it = comps_.find({I, J});
    return it == comps_.end() ? nullptr : &it->second;
  }

  /// (p, q) when every stored component has the same bidegree. Zero forms
  /// without components report (degree, 0).
  bool is_pure() const {
    if (comps_.empty()) return true;
    const int p = forms::count(comps_.begin()->first.first);
    for (const auto& [key, _] : comps_)
      if (forms::count(key.first) != p) return false;
    return true;
  }
  std::pair<int, int> bidegree() const {
    if (!is_pure()) throw ContractViolation("form has mixed bidegree");
    if (comps_.empty()) return {degree_, 0};
    const int p = forms::count(comps_.begin()->first.first);
    return {p, degree_ - p};
  }

  BasicForm& operator+=(const BasicForm& o) {
    if (o.degree_ != degree_) throw ContractViolation("adding forms of different degree");
    for (const auto& [key, c] : o.comps_) {
      auto& mine = component(key.first, key.second);
      for (std::size_t i = 0; i < c.size(); ++i) mine[i] += c[i];
    }
    return *this;
  }
  BasicForm& operator-=(const BasicForm& o) {
    BasicForm neg = o;
    neg *= -1.0;
    return *this += neg;
  }
  BasicForm& operator*=(cplx s) {
    for (auto& [_, c] : comps_)
      for (auto& v : c) v *= s;
    return *this;
  }
  friend BasicForm operator+(BasicForm a, const BasicForm& b) { return a += b; }
  friend BasicForm operator-(BasicForm a, const BasicForm& b) { return a -= b; }
  friend BasicForm operator*(cplx s, BasicForm a) { return a *= s; }

 private:
  ModelPtr model_;
  int degree_ = 0;
  std::map<Key, ComplexArray> comps_;
};

inline double sup_norm(const ComplexArray& c) {
  double m = 0.0;
  for (const auto& v : c) m = std::max(m, std::abs(v));
  return m;
}

inline double sup_norm(const BasicForm& f) {
  double m = 0.0;
  for (const auto& [_, c] : f.components())
    for (const auto& v : c) m = std::max(m, std::abs(v));
  return m;
}

namespace detail {
/// Applies ∂_j (bar = false) or ∂̄_j (bar = true) to a complex grid array.
inline void dz_derivative(const TransverseModel& model, const ComplexArray& spec_in, int j, bool bar,
                          ComplexArray& out) {
  const auto& fk = model.spectral().full_k();
  const int dims = model.dims();
  out.resize(spec_in.size());
  for (std::size_t m = 0; m < spec_in.size(); ++m) out[m] = spec_in[m] * dz_symbol(&fk[m * dims], j, bar);
  model.spectral().inverse(out);
}

inline BasicForm apply_d(const BasicForm& f, bool bar) {
  const auto& model = *f.model();
  const int n = model.n();
  BasicForm out(f.model(), f.degree() + 1);
  if (f.degree() + 1 > 2 * n) return out;
  ComplexArray spec, deriv;
  for (const auto& [key, coeff] : f.components()) {
    const auto [I, J] = key;
    spec = coeff;
    model.spectral().forward(spec);
    for (int j = 0; j < n; ++j) {
      const IndexMask bit = IndexMask{1} << j;
      if ((bar ? J : I) & bit) continue;
      int sign;
      IndexMask I2 = I, J2 = J;
      if (!bar) {
        sign = forms::count_below(I, j) % 2 ? -1 : 1;
        I2 |= bit;
      } else {
        sign = (forms::count(I) + forms::count_below(J, j)) % 2 ? -1 : 1;
        J2 |= bit;
      }
      dz_derivative(model, spec, j, bar, deriv);
      auto& target = out.component(I2, J2);
      for (std::size_t i = 0; i < deriv.size(); ++i) target[i] += static_cast<double>(sign) * deriv[i];
    }
  }
  return out;
}
}  // namespace detail

/// Basic Dolbeault operators with exact spectral derivatives
/// ∂/∂z^j = ½(∂_x − i∂_y), ∂/∂z̄^j = ½(∂_x + i∂_y). A result of degree
/// above 2n is the zero form.
inline BasicForm del_B(const BasicForm& f) { return detail::apply_d(f, false); }
inline BasicForm delbar_B(const BasicForm& f) { return detail::apply_d(f, true); }
inline BasicForm d_B(const BasicForm& f) { return del_B(f) + delbar_B(f); }
inline BasicForm del_B(const BasicField& f) { return del_B(BasicForm::scalar(f)); }
inline BasicForm delbar_B(const BasicField& f) { return delbar_B(BasicForm::scalar(f)); }
inline BasicForm d_B(const BasicField& f) { return d_B(BasicForm::scalar(f)); }

/// Exterior product with pointwise coefficient multiplication.
inline BasicForm wedge(const BasicForm& a, const BasicForm& b) {
  if (a.model() != b.model()) throw ContractViolation("wedge of forms on different models");
  BasicForm out(a.model(), a.degree() + b.degree());
  if (out.degree() > 2 * a.model()->n()) return out;
  for (const auto& [ka, ca] : a.components())
    for (const auto& [kb, cb] : b.components()) {
      const auto [I1, J1] = ka;
      const auto [I2, J2] = kb;
      const int s1 = forms::merge_sign(I1, I2);
      const int s2 = forms::merge_sign(J1, J2);
      if (s1 == 0 || s2 == 0) continue;
      const int swap = (forms::count(J1) * forms::count(I2)) % 2 ? -1 : 1;
      const double sign = s1 * s2 * swap;
      auto& target = out.component(I1 | I2, J1 | J2);
      for (std::size_t i = 0; i < target.size(); ++i) target[i] += sign * ca[i] * cb[i];
    }
  return out;
}

/// ∫ of a top-degree form over (leaf factor) × (transverse torus), with
/// i dz∧dz̄ = 2 dx∧dy. The trapezoidal rule on the periodic grid is
/// spectrally accurate and sums in a fixed order.
inline cplx integrate(const BasicForm& top) {
  const auto& model = *top.model();
  const int n = model.n();
  if (top.degree() != 2 * n) throw ContractViolation("integrate expects a form of bidegree (n, n)");
  const IndexMask full = (IndexMask{1} << n) - 1;
  const ComplexArray* c = top.find(full, full);
  if (!c) return 0.0;
  cplx sum = 0.0;
  for (const auto& v : *c) sum += v;
  sum /= static_cast<double>(c->size());
  // dz^1..dz^n dz̄^1..dz̄^n = (−1)^{n(n−1)/2} Π (dz^j∧dz̄^j) and dz∧dz̄ = −2i dx∧dy.
  cplx factor = (n * (n - 1) / 2) % 2 ? -1.0 : 1.0;
  for (int j = 0; j < n; ++j) factor *= cplx(0.0, -2.0);
  return model.leaf_volume() * factor * sum;
}

/// Both sides of ∫ d_Bα ∧ β ∧ χ = (−1)^{deg α + 1} ∫ α ∧ d_Bβ ∧ χ.
struct IbpReport {
  cplx lhs;
  cplx rhs;
  double residual;  // |lhs − rhs|
  double relative;  // residual / magnitude scale of the integrands
};

inline IbpReport check_integration_by_parts(const BasicForm& alpha, const BasicForm& beta) {
  const int n = alpha.model()->n();
  if (alpha.degree() + beta.degree() != 2 * n - 1)
    throw ContractViolation("integration by parts needs deg α + deg β = 2n − 1");
  const BasicForm da = d_B(alpha);
  const BasicForm db = d_B(beta);
  IbpReport r;
  r.lhs = integrate(wedge(da, beta));
  const double sign = (alpha.degree() + 1) % 2 ? -1.0 : 1.0;
  r.rhs = sign * integrate(wedge(alpha, db));
  r.residual = std::abs(r.lhs - r.rhs);
  double scale = sup_norm(da) * sup_norm(beta) + sup_norm(alpha) * sup_norm(db);
  scale *= alpha.model()->leaf_volume() * std::pow(2.0, n);
  r.relative = scale > 0.0 ? r.residual / scale : r.residual;
  return r;
}

/// Pullback γ*α by the g-th holonomy element: coefficients are composed
/// with γ and transformed by minors of U (dz) and conj(U) (dz̄).
inline BasicForm pullback(const BasicForm& f, std::size_t g) {
  const auto& model = *f.model();
  const auto& U = model.group()[g].U;
  const auto& map = model.index_map(g);
  const int n = model.n();
  BasicForm out(f.model(), f.degree());
  auto minor = [&](IndexMask rows, IndexMask cols, bool conj) -> cplx {
    const auto r = forms::members(rows), c = forms::members(cols);
    if (r.empty()) return 1.0;
    Eigen::MatrixXcd sub(r.size(), c.size());
    for (std::size_t a = 0; a < r.size(); ++a)
      for (std::size_t b = 0; b < c.size(); ++b) sub(a, b) = conj ? std::conj(U(r[a], c[b])) : U(r[a], c[b]);
    return sub.determinant();
  };
  for (const auto& [key, coeff] : f.components()) {
    const auto [I, J] = key;
    for (IndexMask A : forms::subsets(n, forms::count(I)))
      for (IndexMask B : forms::subsets(n, forms::count(J))) {
        const cplx w = minor(I, A, false) * minor(J, B, true);
        if (std::abs(w) < 1e-14) continue;
        auto& target = out.component(A, B);
        for (std::size_t i = 0; i < target.size(); ++i) target[i] += w * coeff[map[i]];
      }
  }
  return out;
}

/// Holonomy average of a form (projection onto basic forms).
inline BasicForm project_basic(const BasicForm& f) {
  const auto& model = *f.model();
  const std::size_t G = model.group().size();
  if (G == 1) return f;
  BasicForm out(f.model(), f.degree());
  for (std::size_t g = 0; g < G; ++g) out += pullback(f, g);
  out *= 1.0 / static_cast<double>(G);
  return out;
}

inline double basicness_defect(const BasicForm& f) {
  BasicForm d = project_basic(f) - f;
  return sup_norm(d) / std::max(sup_norm(f), 1e-300);
}

/// Random basic form of bidegree (p, q) with band-limited real and imaginary
/// parts in every component.
inline BasicForm random_form(const ModelPtr& model, int p, int q, int bandwidth, double amplitude,
                             std::mt19937_64& rng) {
  BasicForm out(model, p + q);
  for (IndexMask I : forms::subsets(model->n(), p))
    for (IndexMask J : forms::subsets(model->n(), q)) {
      const BasicField re = random_band_limited(model, bandwidth, amplitude, rng, false);
      const BasicField im = random_band_limited(model, bandwidth, amplitude, rng, false);
      auto& c = out.component(I, J);
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = cplx(re.values[i], im.values[i]);
    }
  return project_basic(out);
}

}  // namespace tcrf
