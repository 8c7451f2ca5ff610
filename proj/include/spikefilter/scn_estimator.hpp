// Spike-coding network of leaky integrate-and-fire neurons whose weights are
// computed in closed form from the linear model and the filter gain.
//
// The network keeps its decoded estimate D r close to an implicit target
// trajectory. Membrane potentials are v = D^T (target - D r) and neuron i
// fires when its spike would reduce ||target - D r||, i.e. when v_i > T_i with
// T_i = ||D_i||^2 / 2. Substituting the filter dynamics for the target gives
//
//   v' = -lambda v + F u + Omega_s r + Omega_f s + Omega_k r + F_k z + eta
//   r' = -lambda r + s
//
//   F       = D^T B              Omega_s = D^T (A + lambda I) D
//   Omega_f = -D^T D             Omega_k = -D^T K C D
//   F_k     = D^T K
//
// where K is the Kalman gain or one of the sliding-innovation gains.
#pragma once

#include "spikefilter/classical_filters.hpp"
#include "spikefilter/format.hpp"
#include "spikefilter/linalg.hpp"
#include "spikefilter/rng.hpp"
#include "spikefilter/system_model.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace spikefilter {

struct DecoderMatrix {
    Matrix D;  // n_x x N, column i is the output kernel of neuron i
    std::uint64_t seed = 0;
    double sigma2 = 0.25;

    Index neurons() const { return D.cols(); }
};

enum class GainMode {
    KF,               // K = P C^T R^-1
    MSIF_covariance,  // K = C^+ sat(diag(Pzz) / delta)
    MSIF_innovation,  // K = C^+ sat(|z - C D r| / delta)
};

inline std::string to_string(GainMode m) {
    switch (m) {
        case GainMode::KF: return "KF";
        case GainMode::MSIF_covariance: return "MSIF-cov";
        case GainMode::MSIF_innovation: return "MSIF-innov";
    }
    return "?";
}

enum class SpikeResolution {
    single,     // at most one spike per step: largest threshold excess, lowest index on ties
    all_above,  // every neuron above threshold fires
};

struct NetworkSpec {
    Matrix D;
    Matrix F;        // N x n_u
    Matrix Omega_s;  // N x N
    Matrix Omega_f;  // N x N
    Matrix F_k;      // N x n_z, follows the current gain
    Matrix CD;       // n_z x N, fixed factor of Omega_k
    Vector T;        // thresholds
    double lambda = 0.5;
    GainMode gain_mode = GainMode::KF;
    SpikeResolution resolution = SpikeResolution::single;

    Index neurons() const { return D.cols(); }

    /// Omega_k = -D^T K C D = -F_k (C D). Kept factored; rank n_z.
    Matrix Omega_k() const { return -F_k * CD; }

    void set_gain(const Matrix& K) { F_k = D.transpose() * K; }
};

struct NetworkState {
    Vector v;  // membrane potentials
    Vector r;  // filtered spike trains
    Vector s;  // spikes emitted on the last step (0/1)
    double eta_sigma = 0.0;
};

struct SpikeEvent {
    std::size_t step = 0;
    std::size_t neuron = 0;

    bool operator==(const SpikeEvent&) const = default;
};

struct SpikeRaster {
    std::size_t neurons = 0;
    std::size_t steps = 0;
    double dt = 0.0;
    std::vector<SpikeEvent> events;  // sorted by step

    bool operator==(const SpikeRaster&) const = default;
};

/// Entries drawn i.i.d. from N(0, sigma2). All-zero columns are redrawn.
inline DecoderMatrix build_decoder(Index n_x, Index N, std::uint64_t seed, double sigma2 = 0.25) {
    require(n_x >= 1 && N >= 1, "build_decoder: dimensions must be positive");
    require(sigma2 > 0.0, "build_decoder: variance must be positive");
    Rng rng(seed);
    const double sd = std::sqrt(sigma2);
    DecoderMatrix dec{Matrix(n_x, N), seed, sigma2};
    for (Index j = 0; j < N; ++j) {
        do {
            for (Index i = 0; i < n_x; ++i) {
                dec.D(i, j) = sd * rng.normal();
            }
        } while (dec.D.col(j).squaredNorm() == 0.0);
    }
    return dec;
}

/// T_i = D_i^T D_i / 2
inline Vector thresholds(const Matrix& D) { return 0.5 * D.colwise().squaredNorm().transpose(); }

inline bool fires(double v, double threshold) { return v > threshold; }

/// Gain-independent weights plus the measurement factor. F_k starts at zero;
/// call set_gain() before stepping.
inline NetworkSpec build_weights(const SystemModel& model, const DecoderMatrix& decoder, double lambda,
                                 GainMode mode) {
    const Matrix& D = decoder.D;
    require(D.rows() == model.n_x(), "build_weights: decoder rows must equal n_x");
    require(model.A.rows() == model.n_x() && model.A.cols() == model.n_x(), "build_weights: A must be n_x x n_x");
    require(model.B.rows() == model.n_x(), "build_weights: rows(B) must equal n_x");
    require(model.C.cols() == model.n_x(), "build_weights: cols(C) must equal n_x");

    NetworkSpec spec;
    spec.D = D;
    spec.F = D.transpose() * model.B;
    spec.Omega_s = D.transpose() * (model.A + lambda * Matrix::Identity(model.n_x(), model.n_x())) * D;
    spec.Omega_f = -D.transpose() * D;
    spec.CD = model.C * D;
    spec.F_k = Matrix::Zero(D.cols(), model.n_z());
    spec.T = thresholds(D);
    spec.lambda = lambda;
    spec.gain_mode = mode;
    return spec;
}

inline Vector decode(const Matrix& D, const Vector& r) {
    require(D.cols() == r.size(), "decode: rate vector size must equal neuron count");
    return D * r;
}

inline NetworkState quiescent_state(Index N, double eta_sigma = 0.0) {
    return {Vector::Zero(N), Vector::Zero(N), Vector::Zero(N), eta_sigma};
}

/// Greedy spike code for a static target: fire the neuron with the largest
/// threshold excess until none exceeds its threshold. Leaves D r within the
/// coding tolerance of x and v = D^T (x - D r).
inline NetworkState encode_state(const NetworkSpec& spec, const Vector& x, double eta_sigma = 0.0,
                                 std::size_t max_spikes = 1000000) {
    require(x.size() == spec.D.rows(), "encode_state: target size must equal n_x");
    NetworkState st = quiescent_state(spec.neurons(), eta_sigma);
    st.v = spec.D.transpose() * x;
    for (std::size_t n = 0; n < max_spikes; ++n) {
        Index best = -1;
        double best_excess = 0.0;
        for (Index i = 0; i < st.v.size(); ++i) {
            const double excess = st.v(i) - spec.T(i);
            if (fires(st.v(i), spec.T(i)) && (best < 0 || excess > best_excess)) {
                best = i;
                best_excess = excess;
            }
        }
        if (best < 0) {
            break;
        }
        st.r(best) += 1.0;
        st.v += spec.Omega_f.col(best);
    }
    return st;
}

/// One Euler step. The continuous drive is scaled by dt; spikes are unit
/// impulses applied after the firing decision on the pre-spike potentials.
inline NetworkState step_network(const NetworkState& st, const NetworkSpec& spec, const Vector& u, const Vector& z,
                                 double dt, Rng& rng) {
    require(dt > 0.0, "step_network: dt must be positive");
    require(u.size() == spec.F.cols() && z.size() == spec.F_k.cols(), "step_network: dimension mismatch");
    const Index N = spec.neurons();

    Vector drive = -spec.lambda * st.v + spec.F * u + spec.Omega_s * st.r - spec.F_k * (spec.CD * st.r) +
                   spec.F_k * z;
    NetworkState next;
    next.eta_sigma = st.eta_sigma;
    next.v = st.v + dt * drive;
    if (st.eta_sigma > 0.0) {
        next.v += (st.eta_sigma * std::sqrt(dt)) * rng.normal_vector(N);
    }
    if (!all_finite(next.v)) {
        throw DivergenceError("step_network: non-finite membrane potential");
    }

    next.s = Vector::Zero(N);
    if (spec.resolution == SpikeResolution::single) {
        Index best = -1;
        double best_excess = 0.0;
        for (Index i = 0; i < N; ++i) {
            const double excess = next.v(i) - spec.T(i);
            if (fires(next.v(i), spec.T(i)) && (best < 0 || excess > best_excess)) {
                best = i;
                best_excess = excess;
            }
        }
        if (best >= 0) {
            next.s(best) = 1.0;
        }
    } else {
        for (Index i = 0; i < N; ++i) {
            if (fires(next.v(i), spec.T(i))) {
                next.s(i) = 1.0;
            }
        }
    }
    for (Index i = 0; i < N; ++i) {
        if (next.s(i) != 0.0) {
            next.v += spec.Omega_f.col(i);
        }
    }
    next.r = st.r - dt * spec.lambda * st.r + next.s;
    return next;
}

enum class NetworkInit {
    encode,  // greedy spike code of the initial estimate
    zero,    // v = 0, r = 0
};

inline std::string to_string(NetworkInit i) { return i == NetworkInit::encode ? "encode" : "zero"; }

struct SnnRunConfig {
    double dt = 0.01;
    double delta = 0.005;
    Vector xhat0;
    Matrix P0;
    NetworkInit init = NetworkInit::encode;
    double eta_sigma = 0.0;
};

struct SnnRunResult {
    std::vector<Vector> estimates;    // decoded D r after each step
    std::vector<Matrix> covariances;  // co-integrated P after each step
    SpikeRaster raster;
    bool diverged = false;
};

/// Runs the network over a recorded trajectory. The covariance is integrated
/// alongside with the Riccati equation and the gain-dependent weights are
/// refreshed every step.
inline SnnRunResult run_snn_estimator(const SystemModel& model, NetworkSpec spec, const Trajectory& traj,
                                      const SnnRunConfig& cfg, Rng& noise_rng) {
    model.validate();
    require(cfg.xhat0.size() == model.n_x(), "run_snn_estimator: xhat0 must have n_x entries");
    require(cfg.P0.rows() == model.n_x() && cfg.P0.cols() == model.n_x(), "run_snn_estimator: P0 must be n_x x n_x");

    SnnRunResult out;
    out.raster.neurons = static_cast<std::size_t>(spec.neurons());
    out.raster.steps = traj.size();
    out.raster.dt = cfg.dt;
    out.estimates.reserve(traj.size());
    out.covariances.reserve(traj.size());

    NetworkState st = cfg.init == NetworkInit::encode ? encode_state(spec, cfg.xhat0, cfg.eta_sigma)
                                                      : quiescent_state(spec.neurons(), cfg.eta_sigma);
    Matrix P = cfg.P0;
    try {
        for (std::size_t k = 0; k < traj.size(); ++k) {
            const Vector& u = traj.inputs[k];
            const Vector& z = traj.measurements[k];
            switch (spec.gain_mode) {
                case GainMode::KF: spec.set_gain(kf_gain(P, model.C, model.R).K); break;
                case GainMode::MSIF_covariance:
                    spec.set_gain(msif_gain(innovation_cov(P, model.C, model.R), model.C, cfg.delta).K);
                    break;
                case GainMode::MSIF_innovation:
                    spec.set_gain(sif_gain(z - spec.CD * st.r, model.C, cfg.delta).K);
                    break;
            }
            st = step_network(st, spec, u, z, cfg.dt, noise_rng);
            P = symmetrize(P + cfg.dt * riccati_rhs(P, model.A, model.C, model.Q, model.R));
            if (!all_finite(P)) {
                throw DivergenceError("run_snn_estimator: non-finite covariance");
            }
            for (Index i = 0; i < st.s.size(); ++i) {
                if (st.s(i) != 0.0) {
                    out.raster.events.push_back({k, static_cast<std::size_t>(i)});
                }
            }
            out.estimates.push_back(spec.D * st.r);
            out.covariances.push_back(P);
        }
    } catch (const DivergenceError&) {
        out.diverged = true;
    }
    return out;
}

// Raster text format:
//   # N=<N> steps=<K> dt=<dt>
//   <step_index>,<neuron_index>
inline void write_raster(std::ostream& os, const SpikeRaster& raster) {
    os << "# N=" << raster.neurons << " steps=" << raster.steps << " dt=" << format_double(raster.dt) << '\n';
    for (const auto& e : raster.events) {
        os << e.step << ',' << e.neuron << '\n';
    }
}

inline SpikeRaster read_raster(std::istream& is) {
    SpikeRaster raster;
    std::string line;
    if (!std::getline(is, line) || line.rfind("# N=", 0) != 0) {
        throw std::invalid_argument("read_raster: missing header");
    }
    {
        std::istringstream header(line.substr(2));
        std::string tok;
        while (header >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("read_raster: malformed header field '" + tok + "'");
            }
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "N") {
                raster.neurons = std::stoull(val);
            } else if (key == "steps") {
                raster.steps = std::stoull(val);
            } else if (key == "dt") {
                raster.dt = parse_double(val);
            } else {
                throw std::invalid_argument("read_raster: unknown header field '" + key + "'");
            }
        }
    }
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::invalid_argument("read_raster: malformed line '" + line + "'");
        }
        SpikeEvent e{std::stoull(line.substr(0, comma)), std::stoull(line.substr(comma + 1))};
        if (e.neuron >= raster.neurons || e.step >= raster.steps) {
            throw std::invalid_argument("read_raster: event out of range");
        }
        if (!raster.events.empty() && e.step < raster.events.back().step) {
            throw std::invalid_argument("read_raster: events not sorted by step");
        }
        raster.events.push_back(e);
    }
    return raster;
}

}  // namespace spikefilter
