// Configuration files and artifact emission (CSV tables, rasters, plot data).
#pragma once

#include "spikefilter/experiment.hpp"
#include "spikefilter/format.hpp"
#include "spikefilter/scn_estimator.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikefilter {

namespace fs = std::filesystem;

/// Configuration problem; the message names the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// ---------------------------------------------------------------------------
// Enum <-> text
// ---------------------------------------------------------------------------

inline Estimator parse_estimator(const std::string& s) {
    for (Estimator e : kAllEstimators) {
        if (to_string(e) == s || file_tag(e) == s) {
            return e;
        }
    }
    throw std::invalid_argument("unknown estimator '" + s + "'");
}

inline std::string to_string(UncertaintyMode m) { return m == UncertaintyMode::scale ? "scale" : "additive"; }
inline std::string to_string(GainSource g) { return g == GainSource::covariance ? "covariance" : "innovation"; }

namespace detail {

template <typename Enum, std::size_t K>
Enum parse_choice(const std::string& key, const std::string& text, const std::pair<const char*, Enum> (&choices)[K]) {
    for (const auto& [name, value] : choices) {
        if (text == name) {
            return value;
        }
    }
    std::string allowed;
    for (const auto& c : choices) {
        allowed += (allowed.empty() ? "" : ", ") + std::string(c.first);
    }
    throw ConfigError(key, "invalid value '" + text + "' (expected one of: " + allowed + ")");
}

template <typename T>
T scalar_as(const YAML::Node& node, const std::string& key) {
    if (!node.IsScalar()) {
        throw ConfigError(key, "expected a scalar value");
    }
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(key, "cannot parse value '" + node.Scalar() + "'");
    }
}

inline double finite_double(const YAML::Node& node, const std::string& key) {
    const double v = scalar_as<double>(node, key);
    if (!std::isfinite(v)) {
        throw ConfigError(key, "value must be finite");
    }
    return v;
}

inline long long integer_value(const YAML::Node& node, const std::string& key) {
    return scalar_as<long long>(node, key);
}

}  // namespace detail

/// Keys accepted in a config file. Anything else is rejected.
inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "runs",          "horizon",          "dt",           "seed",          "estimators",
        "N",             "lambda",           "delta",        "decoder_variance", "uncertainty_pct",
        "uncertainty_mode", "variant",       "process_noise", "plant_noise",  "gain_source",
        "multi_spike",   "network_init",     "eta_sigma",    "p0_scale",      "convergence_time",
        "stability_coverage", "threads",     "neuron_counts"};
    return keys;
}

/// Parses YAML text; unspecified keys keep their defaults.
inline ExperimentConfig parse_config_text(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    ExperimentConfig cfg;
    if (root.IsNull()) {
        return cfg;
    }
    if (!root.IsMap()) {
        throw ConfigError("", "config must be a mapping of key: value pairs");
    }

    const auto& keys = config_keys();
    for (const auto& item : root) {
        const std::string key = item.first.as<std::string>();
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError(key, "unknown key");
        }
        const YAML::Node& v = item.second;
        using namespace detail;
        if (key == "runs") {
            const long long n = integer_value(v, key);
            if (n < 1) throw ConfigError(key, "must be at least 1");
            cfg.runs = static_cast<std::size_t>(n);
        } else if (key == "horizon") {
            cfg.horizon = finite_double(v, key);
            if (cfg.horizon <= 0.0) throw ConfigError(key, "must be positive");
        } else if (key == "dt") {
            cfg.dt = finite_double(v, key);
            if (cfg.dt <= 0.0) throw ConfigError(key, "must be positive");
        } else if (key == "seed") {
            cfg.seed = scalar_as<std::uint64_t>(v, key);
        } else if (key == "estimators") {
            if (!v.IsSequence() || v.size() == 0) throw ConfigError(key, "expected a non-empty list");
            cfg.estimators.clear();
            for (const auto& e : v) {
                try {
                    cfg.estimators.push_back(parse_estimator(scalar_as<std::string>(e, key)));
                } catch (const std::invalid_argument& ex) {
                    throw ConfigError(key, ex.what());
                }
            }
        } else if (key == "N") {
            const long long n = integer_value(v, key);
            if (n < 1) throw ConfigError(key, "must be at least 1");
            cfg.neurons = static_cast<Index>(n);
        } else if (key == "lambda") {
            cfg.lambda = finite_double(v, key);
            if (cfg.lambda < 0.0) throw ConfigError(key, "must be nonnegative");
        } else if (key == "delta") {
            cfg.delta = finite_double(v, key);
            if (cfg.delta <= 0.0) throw ConfigError(key, "must be positive");
        } else if (key == "decoder_variance") {
            cfg.decoder_variance = finite_double(v, key);
            if (cfg.decoder_variance <= 0.0) throw ConfigError(key, "must be positive");
        } else if (key == "uncertainty_pct") {
            cfg.uncertainty_pct = finite_double(v, key);
            if (cfg.uncertainty_pct < 0.0 || cfg.uncertainty_pct >= 1.0) throw ConfigError(key, "must lie in [0, 1)");
        } else if (key == "uncertainty_mode") {
            static const std::pair<const char*, UncertaintyMode> choices[] = {{"scale", UncertaintyMode::scale},
                                                                              {"additive", UncertaintyMode::additive}};
            cfg.uncertainty_mode = parse_choice(key, scalar_as<std::string>(v, key), choices);
        } else if (key == "variant") {
            static const std::pair<const char*, WorkbenchVariant> choices[] = {
                {"observable", WorkbenchVariant::observable}, {"literal", WorkbenchVariant::literal}};
            cfg.variant = parse_choice(key, scalar_as<std::string>(v, key), choices);
        } else if (key == "process_noise") {
            static const std::pair<const char*, ProcessNoiseScheme> choices[] = {
                {"per_step", ProcessNoiseScheme::per_step}, {"euler_maruyama", ProcessNoiseScheme::euler_maruyama}};
            cfg.process_noise = parse_choice(key, scalar_as<std::string>(v, key), choices);
        } else if (key == "plant_noise") {
            cfg.plant_noise = scalar_as<bool>(v, key);
        } else if (key == "gain_source") {
            static const std::pair<const char*, GainSource> choices[] = {{"covariance", GainSource::covariance},
                                                                         {"innovation", GainSource::innovation}};
            cfg.gain_source = parse_choice(key, scalar_as<std::string>(v, key), choices);
        } else if (key == "multi_spike") {
            cfg.multi_spike = scalar_as<bool>(v, key);
        } else if (key == "network_init") {
            static const std::pair<const char*, NetworkInit> choices[] = {{"encode", NetworkInit::encode},
                                                                          {"zero", NetworkInit::zero}};
            cfg.network_init = parse_choice(key, scalar_as<std::string>(v, key), choices);
        } else if (key == "eta_sigma") {
            cfg.eta_sigma = finite_double(v, key);
            if (cfg.eta_sigma < 0.0) throw ConfigError(key, "must be nonnegative");
        } else if (key == "p0_scale") {
            cfg.p0_scale = finite_double(v, key);
            if (cfg.p0_scale < 0.0) throw ConfigError(key, "must be nonnegative");
        } else if (key == "convergence_time") {
            cfg.convergence_time = finite_double(v, key);
            if (cfg.convergence_time < 0.0) throw ConfigError(key, "must be nonnegative");
        } else if (key == "stability_coverage") {
            cfg.stability_coverage = finite_double(v, key);
            if (cfg.stability_coverage < 0.0 || cfg.stability_coverage > 1.0)
                throw ConfigError(key, "must lie in [0, 1]");
        } else if (key == "threads") {
            const long long n = integer_value(v, key);
            if (n < 0) throw ConfigError(key, "must be nonnegative");
            cfg.threads = static_cast<std::size_t>(n);
        } else if (key == "neuron_counts") {
            if (!v.IsSequence() || v.size() == 0) throw ConfigError(key, "expected a non-empty list");
            cfg.neuron_counts.clear();
            for (const auto& e : v) {
                const long long n = integer_value(e, key);
                if (n < 1) throw ConfigError(key, "entries must be at least 1");
                cfg.neuron_counts.push_back(static_cast<Index>(n));
            }
        }
    }
    if (cfg.horizon < cfg.dt) {
        throw ConfigError("horizon", "must be at least one time step");
    }
    return cfg;
}

inline ExperimentConfig parse_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot read config file '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// YAML text that parses back to the same configuration.
inline std::string emit_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "runs: " << cfg.runs << '\n';
    os << "horizon: " << format_double(cfg.horizon) << '\n';
    os << "dt: " << format_double(cfg.dt) << '\n';
    os << "seed: " << cfg.seed << '\n';
    os << "estimators: [";
    for (std::size_t i = 0; i < cfg.estimators.size(); ++i) {
        os << (i ? ", " : "") << to_string(cfg.estimators[i]);
    }
    os << "]\n";
    os << "N: " << cfg.neurons << '\n';
    os << "lambda: " << format_double(cfg.lambda) << '\n';
    os << "delta: " << format_double(cfg.delta) << '\n';
    os << "decoder_variance: " << format_double(cfg.decoder_variance) << '\n';
    os << "uncertainty_pct: " << format_double(cfg.uncertainty_pct) << '\n';
    os << "uncertainty_mode: " << to_string(cfg.uncertainty_mode) << '\n';
    os << "variant: " << to_string(cfg.variant) << '\n';
    os << "process_noise: " << to_string(cfg.process_noise) << '\n';
    os << "plant_noise: " << (cfg.plant_noise ? "true" : "false") << '\n';
    os << "gain_source: " << to_string(cfg.gain_source) << '\n';
    os << "multi_spike: " << (cfg.multi_spike ? "true" : "false") << '\n';
    os << "network_init: " << to_string(cfg.network_init) << '\n';
    os << "eta_sigma: " << format_double(cfg.eta_sigma) << '\n';
    os << "p0_scale: " << format_double(cfg.p0_scale) << '\n';
    os << "convergence_time: " << format_double(cfg.convergence_time) << '\n';
    os << "stability_coverage: " << format_double(cfg.stability_coverage) << '\n';
    os << "threads: " << cfg.threads << '\n';
    os << "neuron_counts: [";
    for (std::size_t i = 0; i < cfg.neuron_counts.size(); ++i) {
        os << (i ? ", " : "") << cfg.neuron_counts[i];
    }
    os << "]\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        throw std::out_of_range("CsvTable: no column '" + name + "'");
    }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, sep)) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

inline CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read '" + path.string() + "'");
    }
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("'" + path.string() + "' is empty");
    }
    t.header = split(line, ',');
    while (std::getline(in, line)) {
        if (!line.empty()) {
            t.rows.push_back(split(line, ','));
        }
    }
    return t;
}

namespace detail {

inline std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    return out;
}

inline std::string state_name(Index i) { return "x" + std::to_string(i + 1); }

}  // namespace detail

/// Writes the per-run artifacts of a Monte-Carlo report into dir and returns
/// the file names written.
inline std::vector<std::string> write_report_artifacts(const ExperimentReport& report, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<std::string> files;
    const auto& traj = report.sample_trajectory;
    const Index n = traj.initial_state.size();

    for (const auto& er : report.estimators) {
        const std::string tag = file_tag(er.estimator);
        {
            const std::string name = "rmse_" + tag + ".csv";
            auto out = detail::open_output(dir / name);
            out << 't';
            for (Index i = 0; i < n; ++i) out << ",rmse_" << detail::state_name(i);
            out << '\n';
            for (std::size_t k = 0; k < er.rmse.size(); ++k) {
                out << format_double(report.times[k]);
                for (Index i = 0; i < n; ++i) out << ',' << format_double(er.rmse[k](i));
                out << '\n';
            }
            files.push_back(name);
        }
        {
            const std::string name = "sample_" + tag + ".csv";
            auto out = detail::open_output(dir / name);
            out << 't';
            for (Index i = 0; i < n; ++i) out << ",truth_" << detail::state_name(i);
            for (Index i = 0; i < n; ++i) out << ",est_" << detail::state_name(i);
            for (Index i = 0; i < n; ++i) out << ",sigma_" << detail::state_name(i);
            out << '\n';
            for (std::size_t k = 0; k < er.sample_estimates.size(); ++k) {
                out << format_double(traj.times[k]);
                for (Index i = 0; i < n; ++i) out << ',' << format_double(traj.states[k](i));
                for (Index i = 0; i < n; ++i) out << ',' << format_double(er.sample_estimates[k](i));
                for (Index i = 0; i < n; ++i) {
                    out << ',' << format_double(std::sqrt(std::max(0.0, er.sample_covariances[k](i, i))));
                }
                out << '\n';
            }
            files.push_back(name);
        }
        if (is_spiking(er.estimator)) {
            const std::string name = "raster_" + tag + ".txt";
            auto out = detail::open_output(dir / name);
            write_raster(out, er.sample_raster);
            files.push_back(name);
        }
    }

    {
        auto out = detail::open_output(dir / "avg_rmse.csv");
        out << "estimator,state,value\n";
        for (const auto& er : report.estimators) {
            for (Index i = 0; i < n; ++i) {
                out << to_string(er.estimator) << ',' << detail::state_name(i) << ',' << format_double(er.avg_rmse(i))
                    << '\n';
            }
        }
        files.push_back("avg_rmse.csv");
    }
    {
        auto out = detail::open_output(dir / "coverage.csv");
        out << "estimator,state,value\n";
        for (const auto& er : report.estimators) {
            for (Index i = 0; i < n; ++i) {
                out << to_string(er.estimator) << ',' << detail::state_name(i) << ',' << format_double(er.coverage(i))
                    << '\n';
            }
        }
        files.push_back("coverage.csv");
    }
    {
        auto out = detail::open_output(dir / "activity.csv");
        out << "estimator,overall_pct,post_convergence_pct,spikes\n";
        for (const auto& er : report.estimators) {
            if (!is_spiking(er.estimator)) continue;
            out << to_string(er.estimator) << ',' << format_double(er.activity.overall_pct) << ','
                << format_double(er.activity.post_convergence_pct) << ',' << er.activity.spikes << '\n';
        }
        files.push_back("activity.csv");
    }
    {
        auto out = detail::open_output(dir / "divergence.csv");
        out << "estimator,runs,diverged_runs,nonfinite_runs\n";
        for (const auto& er : report.estimators) {
            out << to_string(er.estimator) << ',' << er.run_flags.size() << ',' << er.diverged_runs << ','
                << er.nonfinite_runs << '\n';
        }
        files.push_back("divergence.csv");
    }
    return files;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const fs::path& path) {
    auto out = detail::open_output(path);
    out << "N,estimator,avg_rmse_x1,avg_rmse_x2,chatter,diverged_runs\n";
    for (const auto& row : rows) {
        out << row.neurons << ',' << to_string(row.estimator);
        for (Index i = 0; i < row.avg_rmse.size(); ++i) out << ',' << format_double(row.avg_rmse(i));
        out << ',' << format_double(row.chatter) << ',' << row.diverged_runs << '\n';
    }
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

/// Converts run artifacts in `in` into whitespace-separated data files in
/// `out`: track_x<i>.dat (t, truth, estimate per estimator),
/// sigma_<tag>_x<i>.dat (t, error, +3 sigma, -3 sigma) and raster_<tag>.dat
/// (t, neuron). Returns the file names written.
inline std::vector<std::string> write_plotdata(const fs::path& in, const fs::path& out) {
    if (!fs::is_directory(in)) {
        throw std::runtime_error("artifact directory '" + in.string() + "' does not exist");
    }
    std::vector<std::pair<Estimator, CsvTable>> samples;
    for (Estimator e : kAllEstimators) {
        const fs::path p = in / ("sample_" + file_tag(e) + ".csv");
        if (fs::exists(p)) {
            samples.emplace_back(e, read_csv(p));
        }
    }
    if (samples.empty()) {
        throw std::runtime_error("no sample_<estimator>.csv artifacts in '" + in.string() + "'");
    }
    fs::create_directories(out);
    std::vector<std::string> files;

    const CsvTable& ref = samples.front().second;
    Index n = 0;
    while (std::find(ref.header.begin(), ref.header.end(), "truth_" + detail::state_name(n)) != ref.header.end()) {
        ++n;
    }

    for (Index i = 0; i < n; ++i) {
        const std::string s = detail::state_name(i);
        const std::string name = "track_" + s + ".dat";
        auto os = detail::open_output(out / name);
        const std::size_t rows = ref.rows.size();
        for (std::size_t k = 0; k < rows; ++k) {
            os << ref.rows[k][ref.column("t")] << ' ' << ref.rows[k][ref.column("truth_" + s)];
            for (const auto& [e, table] : samples) {
                os << ' ' << (k < table.rows.size() ? table.rows[k][table.column("est_" + s)] : std::string("nan"));
            }
            os << '\n';
        }
        files.push_back(name);

        for (const auto& [e, table] : samples) {
            const std::string sname = "sigma_" + file_tag(e) + "_" + s + ".dat";
            auto ss = detail::open_output(out / sname);
            for (const auto& row : table.rows) {
                const double truth = parse_double(row[table.column("truth_" + s)]);
                const double est = parse_double(row[table.column("est_" + s)]);
                const double sigma = parse_double(row[table.column("sigma_" + s)]);
                ss << row[table.column("t")] << ' ' << format_double(truth - est) << ' ' << format_double(3.0 * sigma)
                   << ' ' << format_double(-3.0 * sigma) << '\n';
            }
            files.push_back(sname);
        }
    }

    for (Estimator e : kAllEstimators) {
        const fs::path p = in / ("raster_" + file_tag(e) + ".txt");
        if (!fs::exists(p)) continue;
        std::ifstream rs(p);
        const SpikeRaster raster = read_raster(rs);
        const std::string name = "raster_" + file_tag(e) + ".dat";
        auto os = detail::open_output(out / name);
        for (const auto& ev : raster.events) {
            os << format_double(static_cast<double>(ev.step + 1) * raster.dt) << ' ' << ev.neuron << '\n';
        }
        files.push_back(name);
    }
    return files;
}

}  // namespace spikefilter
