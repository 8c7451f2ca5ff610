// Monte-Carlo comparison of the classical and spiking estimators on the
// workbench plant: RMSE histories, 3-sigma coverage, spike activity, and the
// neuron-count sweep.
#pragma once

#include "spikefilter/classical_filters.hpp"
#include "spikefilter/linalg.hpp"
#include "spikefilter/rng.hpp"
#include "spikefilter/scn_estimator.hpp"
#include "spikefilter/system_model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace spikefilter {

enum class Estimator { KF, MSIF, SNN_KF, SNN_MSIF };

inline constexpr Estimator kAllEstimators[] = {Estimator::KF, Estimator::MSIF, Estimator::SNN_KF,
                                               Estimator::SNN_MSIF};

inline std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::KF: return "KF";
        case Estimator::MSIF: return "MSIF";
        case Estimator::SNN_KF: return "SNN-KF";
        case Estimator::SNN_MSIF: return "SNN-MSIF";
    }
    return "?";
}

/// Lower-case name used in artifact file names.
inline std::string file_tag(Estimator e) {
    switch (e) {
        case Estimator::KF: return "kf";
        case Estimator::MSIF: return "msif";
        case Estimator::SNN_KF: return "snn_kf";
        case Estimator::SNN_MSIF: return "snn_msif";
    }
    return "unknown";
}

inline bool is_spiking(Estimator e) { return e == Estimator::SNN_KF || e == Estimator::SNN_MSIF; }

enum class UncertaintyMode {
    scale,     // A_ij * (1 + pct)
    additive,  // A_ij + pct
};

enum class GainSource { covariance, innovation };

struct ExperimentConfig {
    std::size_t runs = 100;
    double horizon = 10.0;
    double dt = 0.01;
    std::uint64_t seed = 1;
    std::vector<Estimator> estimators{std::begin(kAllEstimators), std::end(kAllEstimators)};
    Index neurons = 300;
    double lambda = 0.5;
    double delta = 0.005;
    double decoder_variance = 0.25;
    double uncertainty_pct = 0.0;
    UncertaintyMode uncertainty_mode = UncertaintyMode::scale;
    WorkbenchVariant variant = WorkbenchVariant::observable;
    ProcessNoiseScheme process_noise = ProcessNoiseScheme::per_step;
    bool plant_noise = true;
    GainSource gain_source = GainSource::covariance;
    bool multi_spike = false;
    NetworkInit network_init = NetworkInit::encode;
    double eta_sigma = 0.0;
    double p0_scale = 1.0 / 9.0;  // P0 = p0_scale * I
    double convergence_time = 5.0;
    double stability_coverage = 0.9;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::vector<Index> neuron_counts{50, 100, 150, 200, 250, 300, 350, 400, 450};

    void validate() const {
        require(runs >= 1, "runs must be at least 1");
        require(dt > 0.0, "dt must be positive");
        require(horizon >= dt, "horizon must be at least one step");
        require(!estimators.empty(), "estimators must not be empty");
        require(neurons >= 1, "N must be at least 1");
        require(lambda >= 0.0, "lambda must be nonnegative");
        require(delta > 0.0, "delta must be positive");
        require(decoder_variance > 0.0, "decoder_variance must be positive");
        require(uncertainty_pct >= 0.0 && uncertainty_pct < 1.0, "uncertainty_pct must lie in [0, 1)");
        require(eta_sigma >= 0.0, "eta_sigma must be nonnegative");
        require(p0_scale >= 0.0, "p0_scale must be nonnegative");
        require(convergence_time >= 0.0, "convergence_time must be nonnegative");
        require(stability_coverage >= 0.0 && stability_coverage <= 1.0, "stability_coverage must lie in [0, 1]");
        for (Index n : neuron_counts) {
            require(n >= 1, "neuron_counts entries must be at least 1");
        }
    }

    std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Per-step RMSE across runs: sqrt(mean_r e_r(t)^2) per state component.
/// Runs may be truncated by divergence; each step averages the runs that
/// reached it with finite errors.
inline std::vector<Vector> rmse_timeseries(const std::vector<std::vector<Vector>>& errors) {
    require(!errors.empty(), "rmse_timeseries: no runs");
    std::size_t steps = 0;
    Index n = -1;
    for (const auto& run : errors) {
        steps = std::max(steps, run.size());
        if (!run.empty()) {
            n = run.front().size();
        }
    }
    require(steps > 0 && n > 0, "rmse_timeseries: no samples");

    std::vector<Vector> out(steps, Vector::Zero(n));
    for (std::size_t k = 0; k < steps; ++k) {
        Vector sum = Vector::Zero(n);
        std::size_t count = 0;
        for (const auto& run : errors) {
            if (k < run.size() && all_finite(run[k])) {
                sum += run[k].cwiseAbs2();
                ++count;
            }
        }
        out[k] = count == 0 ? Vector::Constant(n, std::numeric_limits<double>::quiet_NaN())
                            : Vector((sum / static_cast<double>(count)).cwiseSqrt());
    }
    return out;
}

/// Time-mean of an RMSE history.
inline Vector avg_rmse(const std::vector<Vector>& series) {
    require(!series.empty(), "avg_rmse: empty series");
    Vector sum = Vector::Zero(series.front().size());
    for (const auto& v : series) {
        sum += v;
    }
    return sum / static_cast<double>(series.size());
}

/// Fraction of steps with |e_i| <= 3 sqrt(P_ii), per state.
inline Vector sigma_coverage(const std::vector<Vector>& errors, const std::vector<Matrix>& covariances) {
    require(errors.size() == covariances.size(), "sigma_coverage: series lengths differ");
    require(!errors.empty(), "sigma_coverage: empty series");
    const Index n = errors.front().size();
    Vector inside = Vector::Zero(n);
    for (std::size_t k = 0; k < errors.size(); ++k) {
        for (Index i = 0; i < n; ++i) {
            const double var = covariances[k](i, i);
            if (var < 0.0) {
                throw std::invalid_argument("sigma_coverage: negative variance in covariance series");
            }
            if (std::abs(errors[k](i)) <= 3.0 * std::sqrt(var)) {
                inside(i) += 1.0;
            }
        }
    }
    return inside / static_cast<double>(errors.size());
}

inline SystemModel inject_uncertainty(const SystemModel& model, double pct,
                                      UncertaintyMode mode = UncertaintyMode::scale) {
    require(pct >= 0.0 && pct < 1.0, "inject_uncertainty: pct must lie in [0, 1)");
    SystemModel out = model;
    if (mode == UncertaintyMode::scale) {
        out.A = model.A * (1.0 + pct);
    } else {
        out.A = model.A.array() + pct;
    }
    return out;
}

struct ActivityStats {
    double overall_pct = 0.0;
    double post_convergence_pct = 0.0;
    std::size_t spikes = 0;
    std::size_t post_spikes = 0;
    std::size_t slots = 0;       // N * steps
    std::size_t post_slots = 0;  // N * post-convergence steps
};

/// First step index whose end time lies beyond convergence_time.
inline std::size_t convergence_step(double convergence_time, double dt) {
    return static_cast<std::size_t>(std::max<long long>(0, std::llround(convergence_time / dt)));
}

/// Spikes as a percentage of N x steps, overall and after convergence_time.
inline ActivityStats spike_activity(const SpikeRaster& raster, double convergence_time = 5.0) {
    ActivityStats st;
    st.slots = raster.neurons * raster.steps;
    const std::size_t first_post = raster.dt > 0.0 ? convergence_step(convergence_time, raster.dt) : 0;
    st.post_slots = raster.neurons * (raster.steps > first_post ? raster.steps - first_post : 0);
    st.spikes = raster.events.size();
    for (const auto& e : raster.events) {
        if (e.step >= first_post) {
            ++st.post_spikes;
        }
    }
    st.overall_pct = st.slots ? 100.0 * static_cast<double>(st.spikes) / static_cast<double>(st.slots) : 0.0;
    st.post_convergence_pct =
        st.post_slots ? 100.0 * static_cast<double>(st.post_spikes) / static_cast<double>(st.post_slots) : 0.0;
    return st;
}

/// Mean |x(t+dt) - x(t)| over the final half of the series, per state.
inline Vector chatter_metric(const std::vector<Vector>& estimates) {
    require(estimates.size() >= 2, "chatter_metric: need at least two samples");
    const std::size_t start = estimates.size() / 2;
    Vector sum = Vector::Zero(estimates.front().size());
    std::size_t count = 0;
    for (std::size_t k = std::max<std::size_t>(start, 1); k < estimates.size(); ++k) {
        sum += (estimates[k] - estimates[k - 1]).cwiseAbs();
        ++count;
    }
    return count ? Vector(sum / static_cast<double>(count)) : sum;
}

/// FNV-1a over the raw bytes of a measurement sequence.
inline std::uint64_t measurement_checksum(const std::vector<Vector>& zs) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& z : zs) {
        for (Index i = 0; i < z.size(); ++i) {
            unsigned char bytes[sizeof(double)];
            const double value = z(i);
            std::memcpy(bytes, &value, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001B3ULL;
            }
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Monte-Carlo harness
// ---------------------------------------------------------------------------

struct EstimatorReport {
    Estimator estimator = Estimator::KF;
    std::vector<Vector> rmse;  // per step
    Vector avg_rmse;
    Vector coverage;  // pooled over runs and steps
    Vector chatter;   // mean over runs
    ActivityStats activity;  // pooled over runs, spiking estimators only
    std::size_t diverged_runs = 0;  // non-finite or outside 3 sigma too often
    std::size_t nonfinite_runs = 0;
    std::vector<bool> run_flags;
    std::vector<std::uint64_t> consumed_checksums;  // per run

    // Run 0 detail for plotting.
    std::vector<Vector> sample_estimates;
    std::vector<Matrix> sample_covariances;
    SpikeRaster sample_raster;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<double> times;
    Trajectory sample_trajectory;
    std::vector<std::uint64_t> measurement_checksums;  // per run
    std::vector<EstimatorReport> estimators;
    std::string rmse_aggregation = "time-mean of per-step cross-run RMSE";

    bool any_divergence() const {
        return std::any_of(estimators.begin(), estimators.end(),
                           [](const EstimatorReport& e) { return e.diverged_runs > 0; });
    }

    const EstimatorReport& at(Estimator e) const {
        for (const auto& rep : estimators) {
            if (rep.estimator == e) {
                return rep;
            }
        }
        throw std::out_of_range("ExperimentReport: estimator " + to_string(e) + " not in report");
    }
};

namespace detail {

struct EstimatorRun {
    std::vector<Vector> errors;
    std::vector<Vector> estimates;
    std::vector<Matrix> covariances;
    SpikeRaster raster;
    bool nonfinite = false;
    std::uint64_t checksum = 0;
};

struct RunResult {
    Trajectory trajectory;
    std::uint64_t checksum = 0;
    std::vector<EstimatorRun> estimators;
};

struct Models {
    SystemModel plant;
    SystemModel filter;
    Controller controller;
};

inline Models make_models(const ExperimentConfig& cfg) {
    auto [nominal, ctrl] = workbench_model(cfg.variant);
    Models m{nominal, inject_uncertainty(nominal, cfg.uncertainty_pct, cfg.uncertainty_mode), ctrl};
    if (!cfg.plant_noise) {
        m.plant.Q.setZero();
        m.plant.R.setZero();
    }
    return m;
}

inline RunResult simulate_run(const ExperimentConfig& cfg, const Models& models, std::size_t run) {
    const std::uint64_t run_seed = cfg.seed ^ static_cast<std::uint64_t>(run);
    Rng process_rng(derive_seed(run_seed, Stream::process));
    Rng measurement_rng(derive_seed(run_seed, Stream::measurement));

    RunResult out;
    out.trajectory = simulate_trajectory(models.plant, models.controller, cfg.dt, cfg.horizon, process_rng,
                                         measurement_rng, cfg.process_noise);
    out.checksum = measurement_checksum(out.trajectory.measurements);

    const Trajectory& traj = out.trajectory;
    const SystemModel& fm = models.filter;
    const Vector xhat0 = models.plant.x0;
    const Matrix P0 = cfg.p0_scale * Matrix::Identity(fm.n_x(), fm.n_x());

    const bool any_spiking = std::any_of(cfg.estimators.begin(), cfg.estimators.end(), is_spiking);
    DecoderMatrix decoder;
    if (any_spiking) {
        decoder = build_decoder(fm.n_x(), cfg.neurons, derive_seed(run_seed, Stream::decoder), cfg.decoder_variance);
    }

    for (Estimator est : cfg.estimators) {
        EstimatorRun er;
        er.checksum = measurement_checksum(traj.measurements);
        if (!is_spiking(est)) {
            FilterConfig fc{est == Estimator::KF ? FilterKind::KF : FilterKind::MSIF, cfg.delta, cfg.dt};
            FilterRunResult fr = run_filter(fm, fc, FilterState{xhat0, P0}, traj);
            er.estimates = std::move(fr.estimates);
            er.covariances = std::move(fr.covariances);
            er.nonfinite = fr.diverged;
        } else {
            GainMode mode = GainMode::KF;
            if (est == Estimator::SNN_MSIF) {
                mode = cfg.gain_source == GainSource::covariance ? GainMode::MSIF_covariance
                                                                 : GainMode::MSIF_innovation;
            }
            NetworkSpec spec = build_weights(fm, decoder, cfg.lambda, mode);
            spec.resolution = cfg.multi_spike ? SpikeResolution::all_above : SpikeResolution::single;
            SnnRunConfig sc{cfg.dt, cfg.delta, xhat0, P0, cfg.network_init, cfg.eta_sigma};
            Rng noise_rng(derive_seed(derive_seed(run_seed, Stream::network_noise), static_cast<std::uint64_t>(est)));
            SnnRunResult sr = run_snn_estimator(fm, std::move(spec), traj, sc, noise_rng);
            er.estimates = std::move(sr.estimates);
            er.covariances = std::move(sr.covariances);
            er.raster = std::move(sr.raster);
            er.nonfinite = sr.diverged;
        }
        er.errors.reserve(er.estimates.size());
        for (std::size_t k = 0; k < er.estimates.size(); ++k) {
            er.errors.push_back(traj.states[k] - er.estimates[k]);
        }
        out.estimators.push_back(std::move(er));
    }
    return out;
}

/// Runs body(i) for i in [0, count) on a pool of worker threads. Results must
/// be written to per-index slots; the first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body body) {
    if (threads == 0) {
        threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        body(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) {
                            error = std::current_exception();
                        }
                    }
                }
            });
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace detail

/// Runs every configured estimator on the same simulated trajectory for each
/// Monte-Carlo run. Run r uses seed (base ^ r); aggregation happens in run
/// order after all runs finish, so the report does not depend on threading.
inline ExperimentReport monte_carlo(const ExperimentConfig& cfg) {
    cfg.validate();
    const detail::Models models = detail::make_models(cfg);

    std::vector<detail::RunResult> runs(cfg.runs);
    detail::parallel_for(cfg.runs, cfg.threads, [&](std::size_t r) {
        runs[r] = detail::simulate_run(cfg, models, r);
    });

    ExperimentReport report;
    report.config = cfg;
    report.times = runs.front().trajectory.times;
    report.sample_trajectory = runs.front().trajectory;
    for (const auto& run : runs) {
        report.measurement_checksums.push_back(run.checksum);
    }

    const std::size_t first_post = convergence_step(cfg.convergence_time, cfg.dt);
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        EstimatorReport rep;
        rep.estimator = cfg.estimators[e];
        const Index n = models.filter.n_x();

        std::vector<std::vector<Vector>> errors;
        errors.reserve(runs.size());
        Vector inside = Vector::Zero(n);
        std::size_t samples = 0;
        Vector chatter_sum = Vector::Zero(n);
        std::size_t chatter_runs = 0;
        for (auto& run : runs) {
            detail::EstimatorRun& er = run.estimators[e];
            rep.consumed_checksums.push_back(er.checksum);

            bool flagged = er.nonfinite;
            if (!er.errors.empty()) {
                const Vector cov = sigma_coverage(er.errors, er.covariances);
                inside += cov * static_cast<double>(er.errors.size());
                samples += er.errors.size();
                flagged = flagged || cov.minCoeff() < cfg.stability_coverage;
            }
            if (er.nonfinite) {
                ++rep.nonfinite_runs;
            }
            if (flagged) {
                ++rep.diverged_runs;
            }
            rep.run_flags.push_back(flagged);

            if (!er.nonfinite && er.estimates.size() >= 2) {
                chatter_sum += chatter_metric(er.estimates);
                ++chatter_runs;
            }
            if (is_spiking(rep.estimator)) {
                const std::size_t completed = er.estimates.size();
                rep.activity.slots += er.raster.neurons * completed;
                rep.activity.post_slots += er.raster.neurons * (completed > first_post ? completed - first_post : 0);
                for (const auto& ev : er.raster.events) {
                    ++rep.activity.spikes;
                    if (ev.step >= first_post) {
                        ++rep.activity.post_spikes;
                    }
                }
            }
            errors.push_back(std::move(er.errors));
        }
        rep.rmse = rmse_timeseries(errors);
        rep.avg_rmse = avg_rmse(rep.rmse);
        rep.coverage = samples ? Vector(inside / static_cast<double>(samples)) : Vector::Zero(n);
        rep.chatter = chatter_runs ? Vector(chatter_sum / static_cast<double>(chatter_runs))
                                   : Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
        if (rep.activity.slots) {
            rep.activity.overall_pct =
                100.0 * static_cast<double>(rep.activity.spikes) / static_cast<double>(rep.activity.slots);
        }
        if (rep.activity.post_slots) {
            rep.activity.post_convergence_pct =
                100.0 * static_cast<double>(rep.activity.post_spikes) / static_cast<double>(rep.activity.post_slots);
        }

        detail::EstimatorRun& first = runs.front().estimators[e];
        rep.sample_estimates = std::move(first.estimates);
        rep.sample_covariances = std::move(first.covariances);
        rep.sample_raster = std::move(first.raster);
        report.estimators.push_back(std::move(rep));
    }
    return report;
}

struct SweepRow {
    Index neurons = 0;
    Estimator estimator = Estimator::SNN_KF;
    Vector avg_rmse;
    double chatter = 0.0;  // mean over state components
    std::size_t diverged_runs = 0;
    std::size_t nonfinite_runs = 0;
    std::size_t runs = 0;
};

/// Rebuilds the spiking estimators at each neuron count and reruns the
/// Monte-Carlo batch.
inline std::vector<SweepRow> neuron_sweep(const ExperimentConfig& cfg, const std::vector<Index>& counts) {
    require(!counts.empty(), "neuron_sweep: no neuron counts given");
    std::vector<SweepRow> rows;
    for (Index n : counts) {
        ExperimentConfig c = cfg;
        c.neurons = n;
        c.estimators = {Estimator::SNN_KF, Estimator::SNN_MSIF};
        const ExperimentReport rep = monte_carlo(c);
        for (const auto& er : rep.estimators) {
            rows.push_back(
                {n, er.estimator, er.avg_rmse, er.chatter.mean(), er.diverged_runs, er.nonfinite_runs, c.runs});
        }
    }
    return rows;
}

}  // namespace spikefilter
