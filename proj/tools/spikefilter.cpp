// spikefilter: Monte-Carlo runs, neuron-count sweeps and plot data for the
// classical and spiking estimators.
#include "spikefilter/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace spikefilter;

    CLI::App app{"Classical and spiking-network state estimators on a linear workbench plant"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    CommandOptions opts;
    std::string config;
    std::string out;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "YAML config file (missing keys take defaults)")
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (default: runs/<config hash>-<timestamp>)");
        sub->add_option("--seed", seed, "base RNG seed, overrides the config");
    };

    auto* run = app.add_subcommand("run", "Monte-Carlo comparison of the configured estimators");
    add_common(run);

    auto* sweep = app.add_subcommand("sweep", "Neuron-count sweep of SNN-KF and SNN-MSIF");
    add_common(sweep);
    std::vector<long> counts;
    auto* ns_opt = sweep->add_option("--ns", counts, "neuron counts, e.g. --ns 50,100,150")->delimiter(',');

    auto* plot = app.add_subcommand("plotdata", "Convert run artifacts into whitespace-separated plot data");
    std::string artifacts;
    std::string plot_out;
    plot->add_option("artifacts", artifacts, "directory written by `run`")->required();
    plot->add_option("--out", plot_out, "output directory (default: <artifacts>/plot)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto fill = [&](CLI::App* sub) {
        if (!config.empty()) opts.config = config;
        if (!out.empty()) opts.out = out;
        if (sub->count("--seed")) opts.seed = seed;
    };

    if (run->parsed()) {
        fill(run);
        return cmd_run(opts, std::cout);
    }
    if (sweep->parsed()) {
        fill(sweep);
        std::optional<std::vector<Index>> ns;
        if (ns_opt->count() > 0) {
            ns = std::vector<Index>(counts.begin(), counts.end());
        }
        return cmd_sweep(opts, ns, std::cout);
    }
    std::optional<fs::path> po;
    if (!plot_out.empty()) po = plot_out;
    return cmd_plotdata(artifacts, po, std::cout);
}
