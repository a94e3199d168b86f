#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "tcrf/core/arrays.hpp"
#include "tcrf/core/errors.hpp"

namespace tcrf {

/// Uniform periodic grid on [0,1)^{2n}. Real axes are ordered
/// (x^1, y^1, ..., x^n, y^n); axis 0 is the slowest in row-major storage.
struct Lattice {
  int n = 0;
  int N = 0;
  int dims = 0;
  std::size_t size = 0;
  std::size_t half_last = 0;  // N/2 + 1, the stored extent of the last axis after r2c
  std::size_t half_size = 0;
  int band = 0;  // dealiasing cutoff: retained modes satisfy |k_a| <= band on every axis
  std::vector<std::size_t> strides;

  Lattice() = default;
  Lattice(int n_, int N_) : n(n_), N(N_), dims(2 * n_) {
    size = 1;
    for (int a = 0; a < dims; ++a) size *= static_cast<std::size_t>(N);
    half_last = static_cast<std::size_t>(N / 2 + 1);
    half_size = size / static_cast<std::size_t>(N) * half_last;
    band = (N - 1) / 3;
    strides.assign(dims, 1);
    for (int a = dims - 2; a >= 0; --a) strides[a] = strides[a + 1] * static_cast<std::size_t>(N);
  }

  int axis_index(std::size_t idx, int axis) const { return static_cast<int>((idx / strides[axis]) % N); }
  int signed_k(int i) const { return i <= N / 2 ? i : i - N; }
  /// Wavenumber used by first-derivative symbols; the Nyquist mode is dropped
  /// so that every derivative identity holds exactly on the grid.
  int deriv_k(int i) const { return i == N / 2 ? 0 : signed_k(i); }
  /// Grid coordinate of a linear index in [0,1)^{2n}.
  double coordinate(std::size_t idx, int axis) const { return static_cast<double>(axis_index(idx, axis)) / N; }
};

/// Retained (dealiased) modes of the real-to-complex half spectrum.
struct Band {
  std::vector<std::uint32_t> pos;  // position in the half spectrum
  std::vector<std::int8_t> k;      // signed wavenumbers, dims per mode
  std::vector<cplx> zeta;          // ζ_j = k_{x_j} - i k_{y_j}, n per mode
  std::vector<double> zeta2;       // |ζ|^2
  std::size_t mean_index = 0;      // the k = 0 mode
  std::size_t size() const { return pos.size(); }
};

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// FFTW plans and wavenumber tables for one lattice. Forward transforms are
/// normalised by 1/size so spectral arrays hold Fourier coefficients; inverse
/// transforms are plain sums. Plans use FFTW_ESTIMATE, so they (and therefore
/// every result) are deterministic.
class SpectralEngine {
 public:
  explicit SpectralEngine(const Lattice& lattice) : lat_(lattice) {
    if (lat_.N > 254) throw ConfigError("grid size N must not exceed 254");
  }
  SpectralEngine(const SpectralEngine&) = delete;
  SpectralEngine& operator=(const SpectralEngine&) = delete;
  ~SpectralEngine() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    for (fftw_plan p : {c2c_fwd_, c2c_bwd_, r2c_, c2r_})
      if (p) fftw_destroy_plan(p);
  }

  const Lattice& lattice() const { return lat_; }

  void forward(ComplexArray& a) const {
    plans();
    fftw_execute_dft(c2c_fwd_, as_fftw(a.data()), as_fftw(a.data()));
    const double scale = 1.0 / static_cast<double>(lat_.size);
    for (auto& v : a) v *= scale;
  }
  void inverse(ComplexArray& a) const {
    plans();
    fftw_execute_dft(c2c_bwd_, as_fftw(a.data()), as_fftw(a.data()));
  }
  /// Real field to half spectrum (input preserved).
  void r2c(const RealArray& in, ComplexArray& half) const {
    plans();
    half.resize(lat_.half_size);
    fftw_execute_dft_r2c(r2c_, const_cast<double*>(in.data()), as_fftw(half.data()));
    const double scale = 1.0 / static_cast<double>(lat_.size);
    for (auto& v : half) v *= scale;
  }
  /// Half spectrum to real field. Destroys `half`.
  void c2r(ComplexArray& half, RealArray& out) const {
    plans();
    out.resize(lat_.size);
    fftw_execute_dft_c2r(c2r_, as_fftw(half.data()), out.data());
  }

  /// Derivative wavenumbers of the full spectrum, `dims` entries per mode.
  const std::vector<std::int8_t>& full_k() const {
    std::call_once(full_once_, [this] {
      full_k_.resize(lat_.size * lat_.dims);
      for (std::size_t idx = 0; idx < lat_.size; ++idx)
        for (int a = 0; a < lat_.dims; ++a)
          full_k_[idx * lat_.dims + a] = static_cast<std::int8_t>(lat_.deriv_k(lat_.axis_index(idx, a)));
    });
    return full_k_;
  }

  /// Derivative wavenumbers of the half spectrum.
  const std::vector<std::int8_t>& half_k() const {
    std::call_once(half_once_, [this] {
      half_k_.resize(lat_.half_size * lat_.dims);
      const std::size_t hl = lat_.half_last;
      for (std::size_t h = 0; h < lat_.half_size; ++h) {
        std::size_t rest = h / hl;
        half_k_[h * lat_.dims + lat_.dims - 1] = static_cast<std::int8_t>(lat_.deriv_k(static_cast<int>(h % hl)));
        for (int a = lat_.dims - 2; a >= 0; --a) {
          half_k_[h * lat_.dims + a] = static_cast<std::int8_t>(lat_.deriv_k(static_cast<int>(rest % lat_.N)));
          rest /= lat_.N;
        }
      }
    });
    return half_k_;
  }

  const Band& band() const {
    std::call_once(band_once_, [this] { build_band(); });
    return band_;
  }

  /// Scatter band coefficients into a zeroed half spectrum, multiplied by a
  /// per-mode real factor (nullptr = 1).
  void scatter_band(const ComplexArray& coeffs, const double* factor, ComplexArray& half) const {
    const Band& b = band();
    half.assign(lat_.half_size, cplx{0.0, 0.0});
    if (factor) {
      for (std::size_t m = 0; m < b.size(); ++m) half[b.pos[m]] = coeffs[m] * factor[m];
    } else {
      for (std::size_t m = 0; m < b.size(); ++m) half[b.pos[m]] = coeffs[m];
    }
  }
  void gather_band(const ComplexArray& half, ComplexArray& coeffs) const {
    const Band& b = band();
    coeffs.resize(b.size());
    for (std::size_t m = 0; m < b.size(); ++m) coeffs[m] = half[b.pos[m]];
  }

 private:
  static fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

  void plans() const {
    std::call_once(plan_once_, [this] {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      std::vector<int> shape(lat_.dims, lat_.N);
      auto* c = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * lat_.size));
      auto* h = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * lat_.half_size));
      auto* r = static_cast<double*>(fftw_malloc(sizeof(double) * lat_.size));
      c2c_fwd_ = fftw_plan_dft(lat_.dims, shape.data(), c, c, FFTW_FORWARD, FFTW_ESTIMATE);
      c2c_bwd_ = fftw_plan_dft(lat_.dims, shape.data(), c, c, FFTW_BACKWARD, FFTW_ESTIMATE);
      r2c_ = fftw_plan_dft_r2c(lat_.dims, shape.data(), r, h, FFTW_ESTIMATE);
      c2r_ = fftw_plan_dft_c2r(lat_.dims, shape.data(), h, r, FFTW_ESTIMATE);
      fftw_free(c);
      fftw_free(h);
      fftw_free(r);
    });
  }

  void build_band() const {
    const auto& hk = half_k();
    const int K = lat_.band;
    for (std::size_t h = 0; h < lat_.half_size; ++h) {
      bool keep = true;
      for (int a = 0; a < lat_.dims && keep; ++a) {
        const int k = hk[h * lat_.dims + a];
        keep = std::abs(k) <= K;
      }
      // Nyquist entries have derivative wavenumber 0 but must be excluded.
      const std::size_t last = h % lat_.half_last;
      if (static_cast<int>(last) == lat_.N / 2) keep = false;
      std::size_t rest = h / lat_.half_last;
      for (int a = lat_.dims - 2; a >= 0 && keep; --a) {
        if (static_cast<int>(rest % lat_.N) == lat_.N / 2) keep = false;
        rest /= lat_.N;
      }
      if (!keep) continue;
      if (h == 0) band_.mean_index = band_.pos.size();
      band_.pos.push_back(static_cast<std::uint32_t>(h));
      double z2 = 0.0;
      for (int a = 0; a < lat_.dims; ++a) band_.k.push_back(hk[h * lat_.dims + a]);
      for (int j = 0; j < lat_.n; ++j) {
        const cplx z(hk[h * lat_.dims + 2 * j], -static_cast<double>(hk[h * lat_.dims + 2 * j + 1]));
        band_.zeta.push_back(z);
        z2 += std::norm(z);
      }
      band_.zeta2.push_back(z2);
    }
  }

  Lattice lat_;
  mutable std::once_flag plan_once_, full_once_, half_once_, band_once_;
  mutable fftw_plan c2c_fwd_ = nullptr, c2c_bwd_ = nullptr, r2c_ = nullptr, c2r_ = nullptr;
  mutable std::vector<std::int8_t> full_k_, half_k_;
  mutable Band band_;
};

/// Symbol of ∂/∂z^j (bar = false) or ∂/∂z̄^j (bar = true) at a mode with
/// derivative wavenumbers `k`: πiζ_j or πiζ̄_j.
inline cplx dz_symbol(const std::int8_t* k, int j, bool bar) {
  const double kx = k[2 * j];
  const double ky = k[2 * j + 1];
  const cplx zeta = bar ? cplx(kx, ky) : cplx(kx, -ky);
  return cplx(0.0, std::numbers::pi) * zeta;
}

/// Symbol of ∂_j∂̄_l: -π² ζ_j conj(ζ_l).
inline cplx ddbar_symbol(const std::int8_t* k, int j, int l) {
  const cplx zj(k[2 * j], -static_cast<double>(k[2 * j + 1]));
  const cplx zl(k[2 * l], -static_cast<double>(k[2 * l + 1]));
  return -std::numbers::pi * std::numbers::pi * zj * std::conj(zl);
}

}  // namespace tcrf
