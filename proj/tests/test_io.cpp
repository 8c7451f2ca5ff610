#include "spikefilter/commands.hpp"
#include "spikefilter/io.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

using namespace spikefilter;
using Catch::Approx;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("spikefilter_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

std::string config_error_key(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<no error>";
}

}  // namespace

TEST_CASE("empty config yields the defaults", "[io]") {
    for (const std::string text : {"", "# nothing here\n", "~\n"}) {
        const ExperimentConfig cfg = parse_config_text(text);
        CHECK(cfg.neurons == 300);
        CHECK(cfg.lambda == 0.5);
        CHECK(cfg.delta == 0.005);
        CHECK(cfg.dt == 0.01);
        CHECK(cfg.horizon == 10.0);
        CHECK(cfg.runs == 100);
        CHECK(cfg.decoder_variance == 0.25);
        CHECK(cfg.estimators.size() == 4);
    }
}

TEST_CASE("config errors name the offending key", "[io]") {
    CHECK(config_error_key("runs: 0\n") == "runs");
    CHECK(config_error_key("runs: many\n") == "runs");
    CHECK(config_error_key("dt: -0.1\n") == "dt");
    CHECK(config_error_key("bogus: 3\n") == "bogus");
    CHECK(config_error_key("estimators: [KF, UKF]\n") == "estimators");
    CHECK(config_error_key("uncertainty_pct: 1.5\n") == "uncertainty_pct");
    CHECK(config_error_key("variant: other\n") == "variant");
    CHECK(config_error_key("neuron_counts: []\n") == "neuron_counts");
    CHECK(config_error_key("horizon: 0.001\n") == "horizon");
    try {
        parse_config_text("runs: 0\n");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("runs") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("- a\n- b\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("runs: [1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("/nonexistent/config.yaml"), ConfigError);
}

TEST_CASE("explicit values override defaults", "[io]") {
    const ExperimentConfig cfg = parse_config_text(
        "runs: 7\nN: 50\nestimators: [KF, SNN-MSIF]\nuncertainty_pct: 0.1\nuncertainty_mode: additive\n"
        "variant: literal\nprocess_noise: euler_maruyama\ngain_source: innovation\nmulti_spike: true\n"
        "network_init: zero\nseed: 18446744073709551615\nneuron_counts: [50, 450]\n");
    CHECK(cfg.runs == 7);
    CHECK(cfg.neurons == 50);
    CHECK(cfg.estimators == std::vector<Estimator>{Estimator::KF, Estimator::SNN_MSIF});
    CHECK(cfg.uncertainty_pct == 0.1);
    CHECK(cfg.uncertainty_mode == UncertaintyMode::additive);
    CHECK(cfg.variant == WorkbenchVariant::literal);
    CHECK(cfg.process_noise == ProcessNoiseScheme::euler_maruyama);
    CHECK(cfg.gain_source == GainSource::innovation);
    CHECK(cfg.multi_spike);
    CHECK(cfg.network_init == NetworkInit::zero);
    CHECK(cfg.seed == 18446744073709551615ULL);
    CHECK(cfg.neuron_counts == std::vector<Index>{50, 450});
}

TEST_CASE("emit then parse is the identity", "[io][property]") {
    ExperimentConfig cfg = parse_config_text("delta: 0.005\n");
    CHECK(parse_config_text(emit_config(cfg)).delta == 0.005);

    cfg.delta = 0.1 + 0.2;  // not exactly representable as a short decimal
    cfg.lambda = 1.0 / 3.0;
    cfg.p0_scale = 1.0 / 9.0;
    cfg.estimators = {Estimator::SNN_KF};
    cfg.seed = 987654321987654321ULL;
    cfg.plant_noise = false;
    const ExperimentConfig back = parse_config_text(emit_config(cfg));
    CHECK(back.delta == cfg.delta);
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.p0_scale == cfg.p0_scale);
    CHECK(back.estimators == cfg.estimators);
    CHECK(back.seed == cfg.seed);
    CHECK_FALSE(back.plant_noise);
    CHECK(emit_config(back) == emit_config(cfg));
}

TEST_CASE("decimal formatting round-trips exactly", "[io][property]") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-1e3, 1e3);
    for (int i = 0; i < 10000; ++i) {
        const double x = d(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
        CHECK(parse_double(format_double(x)) == x);
    }
    CHECK(format_double(0.01) == "0.01");
}

TEST_CASE("run artifacts", "[io]") {
    TempDir tmp("artifacts");
    ExperimentConfig cfg;
    cfg.runs = 3;
    cfg.horizon = 2.0;
    cfg.neurons = 60;
    cfg.threads = 1;
    const ExperimentReport rep = monte_carlo(cfg);
    const auto files = write_report_artifacts(rep, tmp.path);
    for (const auto& f : files) CHECK(fs::exists(tmp.path / f));

    const CsvTable rmse = read_csv(tmp.path / "rmse_snn_msif.csv");
    CHECK(rmse.header == std::vector<std::string>{"t", "rmse_x1", "rmse_x2"});
    REQUIRE(rmse.rows.size() == 200);
    const auto& er = rep.at(Estimator::SNN_MSIF);
    for (std::size_t k = 0; k < rmse.rows.size(); ++k) {
        CHECK(parse_double(rmse.rows[k][1]) == er.rmse[k](0));
        CHECK(parse_double(rmse.rows[k][2]) == er.rmse[k](1));
    }

    const CsvTable avg = read_csv(tmp.path / "avg_rmse.csv");
    CHECK(avg.header == std::vector<std::string>{"estimator", "state", "value"});
    CHECK(avg.rows.size() == 8);
    CHECK(avg.rows[0][0] == "KF");
    CHECK(parse_double(avg.rows[0][2]) == rep.at(Estimator::KF).avg_rmse(0));

    const CsvTable cov = read_csv(tmp.path / "coverage.csv");
    CHECK(cov.header == avg.header);

    std::ifstream rs(tmp.path / "raster_snn_kf.txt");
    CHECK(read_raster(rs) == rep.at(Estimator::SNN_KF).sample_raster);
    CHECK_FALSE(fs::exists(tmp.path / "raster_kf.txt"));
}

TEST_CASE("sweep table", "[io]") {
    TempDir tmp("sweep");
    ExperimentConfig cfg;
    cfg.runs = 2;
    cfg.horizon = 1.0;
    cfg.threads = 1;
    const auto rows = neuron_sweep(cfg, {50, 100});
    write_sweep_csv(rows, tmp.path / "sweep.csv");
    const CsvTable t = read_csv(tmp.path / "sweep.csv");
    CHECK(t.header ==
          std::vector<std::string>{"N", "estimator", "avg_rmse_x1", "avg_rmse_x2", "chatter", "diverged_runs"});
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0][0] == "50");
    CHECK(t.rows[0][1] == "SNN-KF");
    CHECK(t.rows[3][1] == "SNN-MSIF");
    CHECK(parse_double(t.rows[2][2]) == rows[2].avg_rmse(0));
}

TEST_CASE("cmd_run exit codes", "[io][cli]") {
    TempDir tmp("cmd_run");
    std::ostringstream log;

    SECTION("bad config exits 1 without artifacts") {
        write_file(tmp.path / "bad.yaml", "runs: 0\n");
        CommandOptions opts{tmp.path / "bad.yaml", tmp.path / "out", std::nullopt};
        CHECK(cmd_run(opts, log) == kExitUsage);
        CHECK_FALSE(fs::exists(tmp.path / "out"));
        CHECK(log.str().find("runs") != std::string::npos);
    }
    SECTION("missing config file exits 1") {
        CommandOptions opts{tmp.path / "missing.yaml", tmp.path / "out", std::nullopt};
        CHECK(cmd_run(opts, log) == kExitUsage);
        CHECK_FALSE(fs::exists(tmp.path / "out"));
    }
    SECTION("small nominal run exits 0 with every file") {
        write_file(tmp.path / "ok.yaml", "runs: 3\nhorizon: 2\nN: 100\nthreads: 1\n");
        CommandOptions opts{tmp.path / "ok.yaml", tmp.path / "out", 11};
        CHECK(cmd_run(opts, log) == kExitOk);
        for (const char* f : {"rmse_kf.csv", "rmse_msif.csv", "rmse_snn_kf.csv", "rmse_snn_msif.csv", "avg_rmse.csv",
                              "coverage.csv", "raster_snn_kf.txt", "raster_snn_msif.txt", "manifest.json"}) {
            CHECK(fs::exists(tmp.path / "out" / f));
        }
        const auto manifest = nlohmann::json::parse(slurp(tmp.path / "out" / "manifest.json"));
        CHECK(manifest["seed"] == 11);
        CHECK(manifest["command"] == "run");
        CHECK(manifest["rmse_aggregation"].is_string());
        for (const auto& f : manifest["files"]) CHECK(fs::exists(tmp.path / "out" / f.get<std::string>()));
    }
    SECTION("flagged runs exit 2 and still write artifacts") {
        // Overwhelming membrane noise pushes the spiking estimates outside 3 sigma.
        write_file(tmp.path / "strict.yaml", "runs: 2\nhorizon: 2\nN: 50\neta_sigma: 50\nthreads: 1\n");
        CommandOptions opts{tmp.path / "strict.yaml", tmp.path / "out", std::nullopt};
        CHECK(cmd_run(opts, log) == kExitDiverged);
        CHECK(fs::exists(tmp.path / "out" / "divergence.csv"));
        CHECK(fs::exists(tmp.path / "out" / "manifest.json"));
    }
}

TEST_CASE("default output directory is named from config hash and time", "[io][cli]") {
    CommandOptions opts;
    const fs::path dir = detail::output_dir(opts, ExperimentConfig{});
    CHECK(dir.parent_path() == "runs");
    const std::string name = dir.filename().string();
    CHECK(name.size() == 16 + 1 + 16);
    CHECK(name[16] == '-');
    CHECK(name.back() == 'Z');

    ExperimentConfig other;
    other.runs = 5;
    CHECK(detail::output_dir(opts, other).filename().string().substr(0, 16) != name.substr(0, 16));
}

TEST_CASE("cmd_sweep", "[io][cli]") {
    TempDir tmp("cmd_sweep");
    std::ostringstream log;
    write_file(tmp.path / "c.yaml", "runs: 2\nhorizon: 1\nthreads: 2\n");

    CommandOptions opts{tmp.path / "c.yaml", tmp.path / "a", std::nullopt};
    CHECK(cmd_sweep(opts, std::vector<Index>{}, log) == kExitUsage);
    CHECK_FALSE(fs::exists(tmp.path / "a"));

    CHECK(cmd_sweep(opts, std::vector<Index>{300}, log) == kExitOk);
    opts.out = tmp.path / "b";
    CHECK(cmd_sweep(opts, std::vector<Index>{300}, log) == kExitOk);
    const std::string a = slurp(tmp.path / "a" / "sweep.csv");
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(tmp.path / "b" / "sweep.csv"));
    CHECK(line_count(tmp.path / "a" / "sweep.csv") == 3);
}

TEST_CASE("repeated runs produce byte-identical CSV artifacts", "[io][property]") {
    TempDir tmp("determinism");
    std::ostringstream log;
    write_file(tmp.path / "serial.yaml", "runs: 4\nhorizon: 2\nN: 80\nthreads: 1\n");
    write_file(tmp.path / "parallel.yaml", "runs: 4\nhorizon: 2\nN: 80\nthreads: 3\n");
    REQUIRE(cmd_run({tmp.path / "serial.yaml", tmp.path / "a", 5}, log) == kExitOk);
    REQUIRE(cmd_run({tmp.path / "parallel.yaml", tmp.path / "b", 5}, log) == kExitOk);
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(tmp.path / "a")) {
        const auto name = entry.path().filename();
        if (name == "manifest.json") continue;
        CHECK(slurp(entry.path()) == slurp(tmp.path / "b" / name));
        ++compared;
    }
    CHECK(compared >= 12);
}

TEST_CASE("plot data", "[io][cli]") {
    TempDir tmp("plotdata");
    std::ostringstream log;

    SECTION("noiseless Kalman tracking overlays truth") {
        write_file(tmp.path / "c.yaml", "runs: 1\nestimators: [KF]\nplant_noise: false\n");
        REQUIRE(cmd_run({tmp.path / "c.yaml", tmp.path / "run", std::nullopt}, log) == kExitOk);
        REQUIRE(cmd_plotdata(tmp.path / "run", std::nullopt, log) == kExitOk);
        for (const char* f : {"track_x1.dat", "track_x2.dat"}) {
            std::ifstream in(tmp.path / "run" / "plot" / f);
            double t, truth, est;
            std::size_t n = 0;
            while (in >> t >> truth >> est) {
                CHECK(std::abs(truth - est) < 1e-6);
                ++n;
            }
            CHECK(n == 1000);
        }
    }
    SECTION("envelopes are symmetric and rasters keep every event") {
        write_file(tmp.path / "c.yaml", "runs: 2\nhorizon: 3\nN: 100\nthreads: 1\n");
        REQUIRE(cmd_run({tmp.path / "c.yaml", tmp.path / "run", std::nullopt}, log) == kExitOk);
        REQUIRE(cmd_plotdata(tmp.path / "run", tmp.path / "plot", log) == kExitOk);
        std::ifstream in(tmp.path / "plot" / "sigma_msif_x2.dat");
        double t, err, up, lo;
        std::size_t n = 0;
        while (in >> t >> err >> up >> lo) {
            CHECK(up == -lo);
            CHECK(up >= 0.0);
            ++n;
        }
        CHECK(n == 300);
        for (const char* tag : {"snn_kf", "snn_msif"}) {
            std::ifstream rs(tmp.path / "run" / (std::string("raster_") + tag + ".txt"));
            const SpikeRaster r = read_raster(rs);
            CHECK(line_count(tmp.path / "plot" / (std::string("raster_") + tag + ".dat")) == r.events.size());
        }
        std::ifstream track(tmp.path / "plot" / "track_x1.dat");
        std::string first;
        std::getline(track, first);
        std::istringstream cols(first);
        std::size_t fields = 0;
        std::string tok;
        while (cols >> tok) ++fields;
        CHECK(fields == 2 + 4);
    }
    SECTION("missing artifacts exit 1") {
        CHECK(cmd_plotdata(tmp.path / "nowhere", std::nullopt, log) == kExitUsage);
        fs::create_directories(tmp.path / "empty");
        CHECK(cmd_plotdata(tmp.path / "empty", std::nullopt, log) == kExitUsage);
    }
}
