// Subcommand implementations behind the spikefilter CLI. Each returns the
// process exit code: 0 success, 1 usage/config error, 2 completed with
// divergence flags.
#pragma once

#include "spikefilter/experiment.hpp"
#include "spikefilter/io.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace spikefilter {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitDiverged = 2 };

struct CommandOptions {
    std::optional<fs::path> config;
    std::optional<fs::path> out;
    std::optional<std::uint64_t> seed;
};

namespace detail {

inline ExperimentConfig load_config(const CommandOptions& opts) {
    ExperimentConfig cfg = opts.config ? parse_config(*opts.config) : ExperimentConfig{};
    if (opts.seed) {
        cfg.seed = *opts.seed;
    }
    cfg.validate();
    return cfg;
}

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Explicit --out wins; otherwise runs/<config hash>-<UTC timestamp>.
inline fs::path output_dir(const CommandOptions& opts, const ExperimentConfig& cfg) {
    if (opts.out) {
        return *opts.out;
    }
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream name;
    name << std::hex << std::setw(16) << std::setfill('0') << fnv1a(emit_config(cfg)) << std::dec << '-'
         << std::put_time(&utc, "%Y%m%dT%H%M%SZ");
    return fs::path("runs") / name.str();
}

inline void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                           std::vector<std::string> files, double seconds, const nlohmann::json& extra = {}) {
    nlohmann::json j;
    j["tool"] = "spikefilter";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = cfg.seed;
    j["config"] = emit_config(cfg);
    j["files"] = files;
    j["wall_clock_seconds"] = seconds;
    if (extra.is_object()) {
        j.update(extra);
    }
    auto out = open_output(dir / "manifest.json");
    out << j.dump(2) << '\n';
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

inline int cmd_run(const CommandOptions& opts, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    try {
        cfg = detail::load_config(opts);
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << '\n';
        return kExitUsage;
    }
    const fs::path dir = detail::output_dir(opts, cfg);
    try {
        const ExperimentReport report = monte_carlo(cfg);
        auto files = write_report_artifacts(report, dir);
        files.push_back("manifest.json");
        detail::write_manifest(dir, "run", cfg, files, detail::seconds_since(start),
                               {{"rmse_aggregation", report.rmse_aggregation}});

        for (const auto& er : report.estimators) {
            log << to_string(er.estimator) << ": avg RMSE";
            for (Index i = 0; i < er.avg_rmse.size(); ++i) log << ' ' << er.avg_rmse(i);
            log << ", diverged runs " << er.diverged_runs << '/' << cfg.runs << '\n';
        }
        log << "artifacts written to " << dir.string() << '\n';
        return report.any_divergence() ? kExitDiverged : kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

/// counts overrides the config's neuron_counts when given.
inline int cmd_sweep(const CommandOptions& opts, const std::optional<std::vector<Index>>& counts, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    try {
        cfg = detail::load_config(opts);
        if (counts) {
            if (counts->empty()) {
                throw std::invalid_argument("neuron count list is empty");
            }
            cfg.neuron_counts = *counts;
        }
        cfg.validate();
    } catch (const std::exception& e) {
        log << "usage error: " << e.what() << '\n';
        return kExitUsage;
    }
    const fs::path dir = detail::output_dir(opts, cfg);
    try {
        const auto rows = neuron_sweep(cfg, cfg.neuron_counts);
        fs::create_directories(dir);
        write_sweep_csv(rows, dir / "sweep.csv");
        detail::write_manifest(dir, "sweep", cfg, {"sweep.csv", "manifest.json"}, detail::seconds_since(start));
        bool diverged = false;
        for (const auto& row : rows) {
            log << "N=" << row.neurons << ' ' << to_string(row.estimator) << ": avg RMSE";
            for (Index i = 0; i < row.avg_rmse.size(); ++i) log << ' ' << row.avg_rmse(i);
            log << ", chatter " << row.chatter << ", diverged " << row.diverged_runs << '/' << row.runs << '\n';
            diverged = diverged || row.diverged_runs > 0;
        }
        log << "sweep written to " << (dir / "sweep.csv").string() << '\n';
        return diverged ? kExitDiverged : kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

inline int cmd_plotdata(const fs::path& artifacts, const std::optional<fs::path>& out, std::ostream& log) {
    try {
        const fs::path dir = out ? *out : artifacts / "plot";
        const auto files = write_plotdata(artifacts, dir);
        log << files.size() << " plot data files written to " << dir.string() << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace spikefilter
