// Linear time-invariant plant, state-feedback controller and ground-truth
// simulation.
#pragma once

#include "spikefilter/linalg.hpp"
#include "spikefilter/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace spikefilter {

/// x' = A x + B u + w,  z = C x + v,  w ~ N(0, Q),  v ~ N(0, R).
struct SystemModel {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix Q;
    Matrix R;
    Vector x0;

    Index n_x() const { return A.rows(); }
    Index n_u() const { return B.cols(); }
    Index n_z() const { return C.rows(); }

    void validate() const {
        require(A.rows() == A.cols(), "SystemModel: A must be square");
        require(B.rows() == n_x(), "SystemModel: rows(B) must equal n_x");
        require(C.cols() == n_x(), "SystemModel: cols(C) must equal n_x");
        require(Q.rows() == n_x() && Q.cols() == n_x(), "SystemModel: Q must be n_x x n_x");
        require(R.rows() == n_z() && R.cols() == n_z(), "SystemModel: R must be n_z x n_z");
        require(x0.size() == n_x(), "SystemModel: x0 must have n_x entries");
    }
};

struct Controller {
    Matrix Kc;  // n_u x n_x
};

/// Sampled closed-loop run. Entry k holds the input and measurement used on
/// step k and the true state reached at the end of that step.
struct Trajectory {
    double dt = 0.0;
    Vector initial_state;
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> inputs;
    std::vector<Vector> measurements;

    std::size_t size() const { return times.size(); }
};

enum class WorkbenchVariant {
    literal,     // A = [[0,0],[0,1]] as printed; unobservable through C = [1, 0]
    observable,  // A = [[0,1],[0,0]], double integrator
};

/// How process noise enters one forward-Euler step of length dt.
enum class ProcessNoiseScheme {
    per_step,        // x' = x + dt (A x + B u + w),  w ~ N(0, Q)
    euler_maruyama,  // x' = x + dt (A x + B u) + sqrt(dt) L xi,  L L^T = Q
};

inline std::pair<SystemModel, Controller> workbench_model(WorkbenchVariant variant) {
    SystemModel m;
    m.A = Matrix::Zero(2, 2);
    if (variant == WorkbenchVariant::literal) {
        m.A(1, 1) = 1.0;
    } else {
        m.A(0, 1) = 1.0;
    }
    m.B = Matrix::Zero(2, 1);
    m.B(1, 0) = 1.0;
    m.C = Matrix::Zero(1, 2);
    m.C(0, 0) = 1.0;
    m.Q = Matrix::Identity(2, 2) / 1000.0;
    m.R = Matrix::Constant(1, 1, 1.0 / 100.0);
    m.x0 = Vector(2);
    m.x0 << 10.0, 1.0;

    Controller ctrl;
    ctrl.Kc = Matrix(1, 2);
    ctrl.Kc << 1.0, 1.7321;
    return {m, ctrl};
}

inline Index observability_rank(const SystemModel& model) { return observability_rank(model.A, model.C); }

inline Vector control_input(const Controller& ctrl, const Vector& x) {
    require(ctrl.Kc.cols() == x.size(), "control_input: Kc columns must match state size");
    return -ctrl.Kc * x;
}

inline Vector step_truth(const SystemModel& model, const Vector& x, const Vector& u, double dt, Rng& rng,
                         ProcessNoiseScheme scheme = ProcessNoiseScheme::per_step) {
    require(dt > 0.0, "step_truth: dt must be positive");
    require(x.size() == model.n_x() && u.size() == model.n_u(), "step_truth: dimension mismatch");
    const Matrix L = noise_factor(model.Q);
    const Vector xi = rng.normal_vector(model.n_x());
    const Vector drift = model.A * x + model.B * u;
    if (scheme == ProcessNoiseScheme::euler_maruyama) {
        return x + dt * drift + std::sqrt(dt) * (L * xi);
    }
    return x + dt * (drift + L * xi);
}

inline Vector measure(const SystemModel& model, const Vector& x, Rng& rng) {
    const Matrix L = noise_factor(model.R);
    return model.C * x + L * rng.normal_vector(model.n_z());
}

/// Closed-loop simulation of the plant under u = -Kc x for round(horizon/dt)
/// steps. Process and measurement noise come from separate streams.
inline Trajectory simulate_trajectory(const SystemModel& plant, const Controller& ctrl, double dt, double horizon,
                                      Rng& process_rng, Rng& measurement_rng,
                                      ProcessNoiseScheme scheme = ProcessNoiseScheme::per_step) {
    plant.validate();
    require(dt > 0.0 && horizon > 0.0, "simulate_trajectory: dt and horizon must be positive");
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));

    Trajectory traj;
    traj.dt = dt;
    traj.initial_state = plant.x0;
    traj.times.reserve(steps);
    traj.states.reserve(steps);
    traj.inputs.reserve(steps);
    traj.measurements.reserve(steps);

    Vector x = plant.x0;
    for (std::size_t k = 0; k < steps; ++k) {
        const Vector u = control_input(ctrl, x);
        const Vector z = measure(plant, x, measurement_rng);
        x = step_truth(plant, x, u, dt, process_rng, scheme);
        traj.times.push_back(static_cast<double>(k + 1) * dt);
        traj.states.push_back(x);
        traj.inputs.push_back(u);
        traj.measurements.push_back(z);
    }
    return traj;
}

inline std::string to_string(WorkbenchVariant v) { return v == WorkbenchVariant::literal ? "literal" : "observable"; }

inline std::string to_string(ProcessNoiseScheme s) {
    return s == ProcessNoiseScheme::per_step ? "per_step" : "euler_maruyama";
}

}  // namespace spikefilter
