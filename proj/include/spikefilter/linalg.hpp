// Small dense linear-algebra helpers shared by the filters and the network.
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace spikefilter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when a state or membrane potential stops being finite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw std::invalid_argument(message);
    }
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

/// Moore-Penrose pseudo-inverse via a complete orthogonal decomposition.
inline Matrix pseudo_inverse(const Matrix& m) {
    require(m.size() > 0, "pseudo_inverse: empty matrix");
    require(m.cwiseAbs().maxCoeff() > 0.0, "pseudo_inverse: zero matrix");
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(m);
    return cod.pseudoInverse();
}

/// Inverse of a square matrix that must be nonsingular (noise covariances).
inline Matrix checked_inverse(const Matrix& m, const char* what) {
    require(m.rows() == m.cols(), std::string(what) + ": matrix is not square");
    Eigen::FullPivLU<Matrix> lu(m);
    if (!lu.isInvertible()) {
        throw std::invalid_argument(std::string(what) + ": matrix is singular");
    }
    return lu.inverse();
}

/// Returns L with L * L^T == cov for a symmetric positive semidefinite cov.
///
/// Plain Cholesky is used whenever it succeeds, so a diagonal covariance maps
/// to its elementwise square root. Semidefinite inputs (including zero) fall
/// back to a pivoted LDL^T factorisation.
inline Matrix noise_factor(const Matrix& cov) {
    require(cov.rows() == cov.cols(), "noise_factor: covariance is not square");
    if (cov.size() == 0) {
        return cov;
    }
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("noise_factor: covariance is not symmetric");
    }
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) {
        return llt.matrixL();
    }
    Eigen::LDLT<Matrix> ldlt(cov);
    const double scale = 1.0 + cov.cwiseAbs().maxCoeff();
    const Vector d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || d.minCoeff() < -1e-12 * scale) {
        throw std::invalid_argument("noise_factor: covariance is not positive semidefinite");
    }
    const Matrix l = ldlt.matrixL();
    const Matrix scaled = l * d.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return ldlt.transpositionsP().transpose() * scaled;
}

/// Rank of [C; CA; ...; CA^{n-1}].
inline Index observability_rank(const Matrix& A, const Matrix& C) {
    const Index n = A.rows();
    Matrix obs(C.rows() * n, n);
    Matrix block = C;
    for (Index k = 0; k < n; ++k) {
        obs.middleRows(k * C.rows(), C.rows()) = block;
        block = block * A;
    }
    Eigen::FullPivLU<Matrix> lu(obs);
    lu.setThreshold(1e-10);
    return lu.rank();
}

}  // namespace spikefilter
