// Continuous-time Kalman filter and sliding innovation filters, integrated
// with forward Euler. These are the algorithmic baselines and also the gain
// source for the spiking network weights.
#pragma once

#include "spikefilter/linalg.hpp"
#include "spikefilter/system_model.hpp"

#include <string>
#include <vector>

namespace spikefilter {

enum class FilterKind { KF, SIF, MSIF };

inline std::string to_string(FilterKind k) {
    switch (k) {
        case FilterKind::KF: return "KF";
        case FilterKind::SIF: return "SIF";
        case FilterKind::MSIF: return "MSIF";
    }
    return "?";
}

struct FilterState {
    Vector xhat;
    Matrix P;

    Vector sigma() const { return P.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct FilterConfig {
    FilterKind kind = FilterKind::KF;
    double delta = 0.005;  // sliding boundary layer, measurement units
    double dt = 0.01;
};

struct Gain {
    Matrix K;  // n_x x n_z
};

/// Elementwise clamp to [-1, 1].
inline Vector saturate(const Vector& y) { return y.cwiseMax(-1.0).cwiseMin(1.0); }

/// K = P C^T R^-1
inline Gain kf_gain(const Matrix& P, const Matrix& C, const Matrix& R) {
    return {P * C.transpose() * checked_inverse(R, "kf_gain")};
}

/// Right-hand side of the Riccati equation: A P + P A^T + Q - P C^T R^-1 C P.
inline Matrix riccati_rhs(const Matrix& P, const Matrix& A, const Matrix& C, const Matrix& Q, const Matrix& R) {
    const Matrix PCt = P * C.transpose();
    return A * P + P * A.transpose() + Q - PCt * checked_inverse(R, "riccati_rhs") * PCt.transpose();
}

/// Innovation covariance C P C^T + R.
inline Matrix innovation_cov(const Matrix& P, const Matrix& C, const Matrix& R) {
    return C * P * C.transpose() + R;
}

/// K = C^+ diag(sat(|innovation| / delta))
inline Gain sif_gain(const Vector& innovation, const Matrix& C, double delta) {
    require(delta > 0.0, "sif_gain: delta must be positive");
    const Vector s = saturate(innovation.cwiseAbs() / delta);
    return {pseudo_inverse(C) * s.asDiagonal()};
}

/// K = C^+ diag(sat(diag(Pzz) / delta))
inline Gain msif_gain(const Matrix& Pzz, const Matrix& C, double delta) {
    require(delta > 0.0, "msif_gain: delta must be positive");
    require(Pzz.diagonal().minCoeff() >= 0.0, "msif_gain: negative innovation variance");
    const Vector s = saturate(Pzz.diagonal() / delta);
    return {pseudo_inverse(C) * s.asDiagonal()};
}

/// Gain for the configured rule given the current covariance and innovation.
inline Gain filter_gain(FilterKind kind, const Matrix& P, const SystemModel& model, const Vector& innovation,
                        double delta) {
    switch (kind) {
        case FilterKind::KF: return kf_gain(P, model.C, model.R);
        case FilterKind::SIF: return sif_gain(innovation, model.C, delta);
        case FilterKind::MSIF: return msif_gain(innovation_cov(P, model.C, model.R), model.C, delta);
    }
    throw std::invalid_argument("filter_gain: unknown filter kind");
}

/// One Euler step of the estimate and of the covariance. The covariance follows
/// the Riccati equation for every filter kind; only the gain differs.
inline FilterState filter_step(const FilterState& state, const FilterConfig& cfg, const SystemModel& model,
                               const Vector& u, const Vector& z) {
    require(state.xhat.size() == model.n_x() && u.size() == model.n_u() && z.size() == model.n_z(),
            "filter_step: dimension mismatch");
    const Vector innovation = z - model.C * state.xhat;
    const Gain gain = filter_gain(cfg.kind, state.P, model, innovation, cfg.delta);

    FilterState next;
    next.xhat = state.xhat + cfg.dt * (model.A * state.xhat + model.B * u + gain.K * innovation);
    next.P = symmetrize(state.P + cfg.dt * riccati_rhs(state.P, model.A, model.C, model.Q, model.R));
    if (!all_finite(next.xhat) || !all_finite(next.P)) {
        throw DivergenceError("filter_step: non-finite estimate or covariance");
    }
    return next;
}

struct FilterRunResult {
    std::vector<Vector> estimates;    // after each step
    std::vector<Matrix> covariances;  // after each step
    bool diverged = false;
};

/// Steps a filter over a recorded trajectory; stops early on divergence.
inline FilterRunResult run_filter(const SystemModel& model, const FilterConfig& cfg, const FilterState& initial,
                                  const Trajectory& traj) {
    FilterRunResult out;
    out.estimates.reserve(traj.size());
    out.covariances.reserve(traj.size());
    FilterState st = initial;
    try {
        for (std::size_t k = 0; k < traj.size(); ++k) {
            st = filter_step(st, cfg, model, traj.inputs[k], traj.measurements[k]);
            out.estimates.push_back(st.xhat);
            out.covariances.push_back(st.P);
        }
    } catch (const DivergenceError&) {
        out.diverged = true;
    }
    return out;
}

}  // namespace spikefilter
