#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tcrf {

/// Root of the library's exception hierarchy. `kind()` is a stable,
/// machine-readable error class (the CLI writes it into error reports).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message) : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid model or scenario description. `pointer` is a JSON pointer to the
/// offending key when the error comes from a scenario file.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string pointer = {})
      : Error("ConfigError", message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& message) : Error("ContractViolation", message) {}
};

class PositivityLoss : public Error {
 public:
  PositivityLoss(std::size_t point, double eigenvalue)
      : Error("PositivityLoss", "metric lost positivity at grid point " + std::to_string(point) +
                                    " (min eigenvalue " + std::to_string(eigenvalue) + ")"),
        point_(point),
        eigenvalue_(eigenvalue) {}
  std::size_t point() const noexcept { return point_; }
  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  std::size_t point_;
  double eigenvalue_;
};

/// A closed (1,1)-form that is not i∂∂̄-exact. Carries the harmonic
/// (grid-average) matrix, row-major n×n.
class NotExact : public Error {
 public:
  NotExact(const std::string& message, int n, std::vector<std::complex<double>> harmonic, double residual)
      : Error("NotExact", message), n_(n), harmonic_(std::move(harmonic)), residual_(residual) {}
  int n() const noexcept { return n_; }
  const std::vector<std::complex<double>>& harmonic() const noexcept { return harmonic_; }
  double residual() const noexcept { return residual_; }

 private:
  int n_;
  std::vector<std::complex<double>> harmonic_;
  double residual_;
};

class NotClosed : public Error {
 public:
  explicit NotClosed(double defect)
      : Error("NotClosed", "form is not closed (sup |d_B σ| = " + std::to_string(defect) + ")"), defect_(defect) {}
  double defect() const noexcept { return defect_; }

 private:
  double defect_;
};

class GaugeFailure : public Error {
 public:
  GaugeFailure(const std::string& message, double min_value) : Error("GaugeFailure", message), min_value_(min_value) {}
  double min_value() const noexcept { return min_value_; }

 private:
  double min_value_;
};

class InfeasibleHorizon : public Error {
 public:
  InfeasibleHorizon(double t, double min_eigenvalue)
      : Error("InfeasibleHorizon", "reference metric loses positivity at t = " + std::to_string(t)),
        t_(t),
        min_eigenvalue_(min_eigenvalue) {}
  double t() const noexcept { return t_; }
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  double t_;
  double min_eigenvalue_;
};

class LinearizeFailure : public Error {
 public:
  explicit LinearizeFailure(const std::string& message) : Error("LinearizeFailure", message) {}
};

class SymbolUnresolved : public Error {
 public:
  SymbolUnresolved(const std::string& message, double relative_residual)
      : Error("SymbolUnresolved", message), relative_residual_(relative_residual) {}
  double relative_residual() const noexcept { return relative_residual_; }

 private:
  double relative_residual_;
};

class ReconstructFailure : public Error {
 public:
  ReconstructFailure(double residual, double tolerance)
      : Error("ReconstructFailure", "reconstructed potential inconsistent with trajectory (residual " +
                                        std::to_string(residual) + " > " + std::to_string(tolerance) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class BasicnessDefect : public Error {
 public:
  explicit BasicnessDefect(double defect)
      : Error("BasicnessDefect", "holonomy re-projection correction " + std::to_string(defect) + " exceeds 1e-10"),
        defect_(defect) {}
  double defect() const noexcept { return defect_; }

 private:
  double defect_;
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& message) : Error("CheckpointError", message) {}
};

}  // namespace tcrf
