#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcrf/core/arrays.hpp"
#include "tcrf/core/errors.hpp"
#include "tcrf/core/spectral.hpp"

namespace tcrf {

/// Rational translation component p/q of a holonomy map.
struct Rational {
  long long num = 0;
  long long den = 1;
};

/// Generator of the holonomy group as written in a model description:
/// γ(x) = R x + b on real coordinates (x^1, y^1, ..., x^n, y^n).
struct HolonomySpec {
  std::vector<int> R;  // 2n×2n, row-major
  std::vector<Rational> b;
};

/// A holonomy group element in grid form.
struct HolonomyMap {
  std::vector<int> R;          // 2n×2n integer, row-major
  std::vector<int> shift;      // b·N mod N
  Eigen::MatrixXcd U;          // complex-linear part: γ(z)^i = Σ_a U(i,a) z^a + b^i
  bool is_identity() const {
    for (std::size_t i = 0; i < shift.size(); ++i)
      if (shift[i] != 0) return false;
    const int d = static_cast<int>(shift.size());
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        if (R[r * d + c] != (r == c ? 1 : 0)) return false;
    return true;
  }
};

class TransverseModel;
using ModelPtr = std::shared_ptr<const TransverseModel>;

/// Flat complex torus C^n / Z^{2n} as transverse space, with a finite holonomy
/// group acting by affine holomorphic isometries and a leaf factor of fixed
/// dimension and total volume (the weight that replaces ∫χ).
///
/// Basic fields are the holonomy-invariant periodic grid fields. The group is
/// the closure of the given generators; every element must map the grid to
/// itself.
class TransverseModel {
 public:
  static ModelPtr create(int n, int N, const std::vector<HolonomySpec>& generators = {}, int leaf_dim = 1,
                         double leaf_volume = 1.0) {
    return ModelPtr(new TransverseModel(n, N, generators, leaf_dim, leaf_volume));
  }

  int n() const { return lat_.n; }
  int N() const { return lat_.N; }
  int dims() const { return lat_.dims; }
  std::size_t size() const { return lat_.size; }
  int leaf_dim() const { return leaf_dim_; }
  double leaf_volume() const { return leaf_volume_; }
  const Lattice& lattice() const { return lat_; }
  const SpectralEngine& spectral() const { return *spectral_; }
  const std::vector<HolonomyMap>& group() const { return group_; }
  /// index_map(g)[p] is the grid index of γ_g(p).
  const std::vector<std::uint32_t>& index_map(std::size_t g) const { return maps_[g]; }
  bool trivial_holonomy() const { return group_.size() == 1; }

  /// Real coordinates of a grid point.
  std::vector<double> coordinates(std::size_t idx) const {
    std::vector<double> x(lat_.dims);
    for (int a = 0; a < lat_.dims; ++a) x[a] = lat_.coordinate(idx, a);
    return x;
  }

 private:
  TransverseModel(int n, int N, const std::vector<HolonomySpec>& generators, int leaf_dim, double leaf_volume)
      : lat_(n, N), leaf_dim_(leaf_dim), leaf_volume_(leaf_volume) {
    if (n < 1) throw ConfigError("complex transverse dimension n must be >= 1", "/n");
    if (N < 8 || N % 2 != 0) throw ConfigError("grid size N must be even and >= 8", "/N");
    if (leaf_dim < 0) throw ConfigError("leaf_dim must be >= 0", "/leaf_dim");
    if (!(leaf_volume > 0.0)) throw ConfigError("leaf_volume must be positive", "/leaf_volume");
    if (lat_.size > (std::size_t{1} << 26)) throw ConfigError("grid too large", "/N");
    spectral_ = std::make_unique<SpectralEngine>(lat_);
    build_group(generators);
    build_maps();
  }

  HolonomyMap from_spec(const HolonomySpec& spec, std::size_t which) const {
    const int d = lat_.dims;
    const std::string where = "/holonomy/" + std::to_string(which);
    if (static_cast<int>(spec.R.size()) != d * d)
      throw ConfigError("holonomy matrix must be " + std::to_string(d) + "x" + std::to_string(d), where + "/U");
    if (static_cast<int>(spec.b.size()) != d)
      throw ConfigError("holonomy translation must have " + std::to_string(d) + " entries", where + "/b");
    // Orthogonality: RᵀR = I.
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) {
        int dot = 0;
        for (int k = 0; k < d; ++k) dot += spec.R[k * d + r] * spec.R[k * d + c];
        if (dot != (r == c ? 1 : 0)) throw ConfigError("holonomy matrix is not orthogonal", where + "/U");
      }
    // Complex linearity: R commutes with the standard complex structure.
    for (int i = 0; i < lat_.n; ++i)
      for (int a = 0; a < lat_.n; ++a) {
        const int xx = spec.R[(2 * i) * d + 2 * a], yx = spec.R[(2 * i + 1) * d + 2 * a];
        const int xy = spec.R[(2 * i) * d + 2 * a + 1], yy = spec.R[(2 * i + 1) * d + 2 * a + 1];
        if (xy != -yx || yy != xx) throw ConfigError("holonomy matrix is not complex-linear", where + "/U");
      }
    HolonomyMap map;
    map.R = spec.R;
    map.shift.resize(d);
    for (int a = 0; a < d; ++a) {
      const Rational q = spec.b[a];
      if (q.den <= 0) throw ConfigError("translation denominator must be positive", where + "/b/" + std::to_string(a));
      const long long scaled = q.num * lat_.N;
      if (scaled % q.den != 0)
        throw ConfigError("holonomy translation is not compatible with grid N = " + std::to_string(lat_.N),
                          where + "/b/" + std::to_string(a));
      long long s = (scaled / q.den) % lat_.N;
      if (s < 0) s += lat_.N;
      map.shift[a] = static_cast<int>(s);
    }
    map.U = complex_part(map.R);
    return map;
  }

  Eigen::MatrixXcd complex_part(const std::vector<int>& R) const {
    const int d = lat_.dims, n = lat_.n;
    Eigen::MatrixXcd U(n, n);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < n; ++a) U(i, a) = cplx(R[(2 * i) * d + 2 * a], R[(2 * i + 1) * d + 2 * a]);
    return U;
  }

  HolonomyMap compose(const HolonomyMap& g1, const HolonomyMap& g2) const {
    // (g1 ∘ g2)(x) = R1 R2 x + R1 q2 + q1
    const int d = lat_.dims;
    HolonomyMap out;
    out.R.assign(d * d, 0);
    out.shift.assign(d, 0);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) {
        int s = 0;
        for (int k = 0; k < d; ++k) s += g1.R[r * d + k] * g2.R[k * d + c];
        out.R[r * d + c] = s;
      }
      long long sh = g1.shift[r];
      for (int k = 0; k < d; ++k) sh += static_cast<long long>(g1.R[r * d + k]) * g2.shift[k];
      sh %= lat_.N;
      if (sh < 0) sh += lat_.N;
      out.shift[r] = static_cast<int>(sh);
    }
    out.U = complex_part(out.R);
    return out;
  }

  static bool same(const HolonomyMap& a, const HolonomyMap& b) { return a.R == b.R && a.shift == b.shift; }

  void build_group(const std::vector<HolonomySpec>& generators) {
    const int d = lat_.dims;
    HolonomyMap id;
    id.R.assign(d * d, 0);
    for (int a = 0; a < d; ++a) id.R[a * d + a] = 1;
    id.shift.assign(d, 0);
    id.U = complex_part(id.R);
    group_.push_back(id);
    std::vector<HolonomyMap> gens;
    for (std::size_t i = 0; i < generators.size(); ++i) gens.push_back(from_spec(generators[i], i));
    // Closure by breadth-first enumeration. Signed-permutation linear parts
    // and rational translations make the group finite.
    constexpr std::size_t max_order = 4096;
    for (std::size_t head = 0; head < group_.size(); ++head) {
      for (const auto& g : gens) {
        HolonomyMap h = compose(g, group_[head]);
        bool seen = false;
        for (const auto& e : group_)
          if (same(e, h)) {
            seen = true;
            break;
          }
        if (!seen) {
          group_.push_back(std::move(h));
          if (group_.size() > max_order) throw ConfigError("holonomy group exceeds 4096 elements", "/holonomy");
        }
      }
    }
  }

  void build_maps() {
    const int d = lat_.dims;
    const int N = lat_.N;
    maps_.resize(group_.size());
    std::vector<int> p(d);
    for (std::size_t g = 0; g < group_.size(); ++g) {
      auto& map = maps_[g];
      map.resize(lat_.size);
      const auto& h = group_[g];
      for (std::size_t idx = 0; idx < lat_.size; ++idx) {
        for (int a = 0; a < d; ++a) p[a] = lat_.axis_index(idx, a);
        std::size_t target = 0;
        for (int r = 0; r < d; ++r) {
          long long v = h.shift[r];
          for (int c = 0; c < d; ++c) v += static_cast<long long>(h.R[r * d + c]) * p[c];
          v %= N;
          if (v < 0) v += N;
          target += static_cast<std::size_t>(v) * lat_.strides[r];
        }
        map[idx] = static_cast<std::uint32_t>(target);
      }
    }
  }

  Lattice lat_;
  int leaf_dim_;
  double leaf_volume_;
  std::unique_ptr<SpectralEngine> spectral_;
  std::vector<HolonomyMap> group_;
  std::vector<std::vector<std::uint32_t>> maps_;
};

namespace detail {
inline Rational parse_rational(const nlohmann::json& j, const std::string& where) {
  if (j.is_number_integer()) return {j.get<long long>(), 1};
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return {std::stoll(s), 1};
      return {std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1))};
    } catch (const std::exception&) {
      throw ConfigError("malformed rational '" + s + "'", where);
    }
  }
  if (j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer())
    return {j[0].get<long long>(), j[1].get<long long>()};
  throw ConfigError("translation entries must be integers, \"p/q\" strings or [p, q] pairs", where);
}
}  // namespace detail

/// Builds a model from its JSON description
/// {"n", "N", "holonomy": [{"U": [[..]], "b": [..]}], "leaf_dim", "leaf_volume"}.
/// Errors carry JSON pointers relative to `base`.
inline ModelPtr model_from_json(const nlohmann::json& j, const std::string& base = "") {
  if (!j.is_object()) throw ConfigError("model block must be an object", base);
  auto require_int = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer())
      throw ConfigError(std::string("missing or non-integer key '") + key + "'", base + "/" + key);
    return j[key].get<int>();
  };
  const int n = require_int("n");
  const int N = require_int("N");
  int leaf_dim = 1;
  if (j.contains("leaf_dim")) leaf_dim = require_int("leaf_dim");
  double leaf_volume = 1.0;
  if (j.contains("leaf_volume")) {
    if (!j["leaf_volume"].is_number()) throw ConfigError("leaf_volume must be a number", base + "/leaf_volume");
    leaf_volume = j["leaf_volume"].get<double>();
  }
  std::vector<HolonomySpec> gens;
  if (j.contains("holonomy")) {
    const auto& hol = j["holonomy"];
    if (!hol.is_array()) throw ConfigError("holonomy must be an array", base + "/holonomy");
    for (std::size_t i = 0; i < hol.size(); ++i) {
      const std::string where = base + "/holonomy/" + std::to_string(i);
      const auto& g = hol[i];
      if (!g.is_object() || !g.contains("U") || !g["U"].is_array())
        throw ConfigError("holonomy entry needs an integer matrix 'U'", where + "/U");
      HolonomySpec spec;
      const auto& U = g["U"];
      const std::size_t d = static_cast<std::size_t>(2 * std::max(n, 0));
      if (U.size() != d) throw ConfigError("holonomy matrix must have 2n rows", where + "/U");
      for (std::size_t r = 0; r < U.size(); ++r) {
        if (!U[r].is_array() || U[r].size() != d)
          throw ConfigError("holonomy matrix must be 2n x 2n", where + "/U/" + std::to_string(r));
        for (std::size_t c = 0; c < d; ++c) {
          if (!U[r][c].is_number_integer())
            throw ConfigError("holonomy matrix entries must be integers",
                              where + "/U/" + std::to_string(r) + "/" + std::to_string(c));
          spec.R.push_back(U[r][c].get<int>());
        }
      }
      if (g.contains("b")) {
        if (!g["b"].is_array()) throw ConfigError("translation must be an array", where + "/b");
        for (std::size_t a = 0; a < g["b"].size(); ++a)
          spec.b.push_back(detail::parse_rational(g["b"][a], where + "/b/" + std::to_string(a)));
      } else {
        spec.b.assign(d, Rational{});
      }
      gens.push_back(std::move(spec));
    }
  }
  try {
    return TransverseModel::create(n, N, gens, leaf_dim, leaf_volume);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), base + e.pointer());
  }
}

// ---------------------------------------------------------------------------
// Basic scalar fields

/// Real scalar grid field on a model; "basic" when holonomy-invariant.
struct BasicField {
  ModelPtr model;
  RealArray values;

  BasicField() = default;
  BasicField(ModelPtr m, RealArray v) : model(std::move(m)), values(std::move(v)) {}

  static BasicField zeros(ModelPtr m) {
    RealArray v(m->size(), 0.0);
    return {std::move(m), std::move(v)};
  }
  static BasicField constant(ModelPtr m, double c) {
    RealArray v(m->size(), c);
    return {std::move(m), std::move(v)};
  }
  /// Samples f(x) with x the real coordinates of each grid point.
  static BasicField sample(ModelPtr m, const std::function<double(std::span<const double>)>& f) {
    RealArray v(m->size());
    std::vector<double> x(m->dims());
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (int a = 0; a < m->dims(); ++a) x[a] = m->lattice().coordinate(i, a);
      v[i] = f(x);
    }
    return {std::move(m), std::move(v)};
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  BasicField& operator+=(const BasicField& o) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  BasicField& operator-=(const BasicField& o) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
  }
  BasicField& operator*=(double s) {
    for (auto& v : values) v *= s;
    return *this;
  }
  friend BasicField operator+(BasicField a, const BasicField& b) { return a += b; }
  friend BasicField operator-(BasicField a, const BasicField& b) { return a -= b; }
  friend BasicField operator*(double s, BasicField a) { return a *= s; }
};

inline double sup_norm(const RealArray& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}
inline double sup_norm(const BasicField& f) { return sup_norm(f.values); }
/// Compensated (Neumaier) mean, exact for constant arrays of power-of-two size.
inline double mean(const RealArray& v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return v.empty() ? 0.0 : (s + c) / static_cast<double>(v.size());
}
inline double mean(const BasicField& f) { return mean(f.values); }
inline double oscillation(const RealArray& v) {
  if (v.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}
inline double oscillation(const BasicField& f) { return oscillation(f.values); }
/// Grid inner product (mean of pointwise products).
inline double inner(const BasicField& a, const BasicField& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s / static_cast<double>(a.size());
}

/// Averages `values` over holonomy pullbacks in place and returns the sup-norm
/// of the correction that was applied.
inline double project_in_place(const TransverseModel& model, RealArray& values) {
  const std::size_t G = model.group().size();
  if (G == 1) return 0.0;
  RealArray avg(values.size());
  const double w = 1.0 / static_cast<double>(G);
  parallel_for(values.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double s = 0.0;
      for (std::size_t g = 0; g < G; ++g) s += values[model.index_map(g)[i]];
      avg[i] = s * w;
    }
  });
  double corr = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) corr = std::max(corr, std::abs(avg[i] - values[i]));
  values.swap(avg);
  return corr;
}

/// Holonomy-group average: the orthogonal projection onto basic fields.
inline BasicField project_basic(BasicField f) {
  project_in_place(*f.model, f.values);
  return f;
}

/// Relative sup-norm distance from the basic subspace.
inline double basicness_defect(const BasicField& f) {
  BasicField p = project_basic(f);
  const double scale = std::max(sup_norm(f), 1e-300);
  p -= f;
  return sup_norm(p) / scale;
}

/// Random real band-limited field: Fourier modes with |k_a| <= bandwidth on
/// every axis (bandwidth is clipped to the dealiasing band), Gaussian
/// coefficients of standard deviation `amplitude`, projected to be basic
/// unless `basic` is false.
inline BasicField random_band_limited(ModelPtr model, int bandwidth, double amplitude, std::mt19937_64& rng,
                                      bool basic = true) {
  const auto& spec = model->spectral();
  const Band& band = spec.band();
  const int dims = model->dims();
  bandwidth = std::min(bandwidth, model->lattice().band);
  std::normal_distribution<double> normal(0.0, amplitude);
  ComplexArray coeffs(band.size(), cplx{});
  std::vector<double> mask(band.size(), 0.0);
  for (std::size_t m = 0; m < band.size(); ++m) {
    bool keep = true;
    for (int a = 0; a < dims; ++a) keep = keep && std::abs(band.k[m * dims + a]) <= bandwidth;
    if (!keep) continue;
    mask[m] = 1.0;
    const double re = normal(rng), im = normal(rng);
    coeffs[m] = cplx(re, im);
  }
  // The k_last = 0 plane of the half spectrum must be Hermitian; a round trip
  // through physical space enforces that, then the mask restores the band.
  ComplexArray half;
  RealArray out;
  spec.scatter_band(coeffs, mask.data(), half);
  spec.c2r(half, out);
  spec.r2c(out, half);
  spec.gather_band(half, coeffs);
  spec.scatter_band(coeffs, mask.data(), half);
  spec.c2r(half, out);
  BasicField f(model, std::move(out));
  return basic ? project_basic(std::move(f)) : f;
}

}  // namespace tcrf
