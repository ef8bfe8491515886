#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace kgconn {

using Complex = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr double pi = 3.141592653589793238462643383279502884;

/// Raised for invalid inputs: bad grids, malformed perturbations, schema violations.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Raised when a numerical precondition fails (CFL, conditioning, broken structure).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a Bogoliubov transformation fails the admissibility conditions.
class AdmissibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
    return m.size() ? static_cast<double>(m.cwiseAbs().maxCoeff()) : 0.0;
}

}  // namespace kgconn
