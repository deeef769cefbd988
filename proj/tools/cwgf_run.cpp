#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cwgf/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Particle solver for latent-space inverse problems"};
    app.require_subcommand(1);

    cwgf::CliOptions options;
    std::uint64_t seed = 0;
    std::string sweep_spec;

    CLI::App* run = app.add_subcommand("run", "Run one experiment config");
    run->add_option("config", options.config_path, "Experiment config file")->required();
    run->add_option("out_dir", options.out_dir, "Directory for reports and images")->required();
    CLI::Option* seed_opt = run->add_option("--seed", seed, "Override experiment.seed");
    run->add_flag("--trace", options.trace, "Write per-iteration particle and prompt snapshots");
    run->add_option("--sweep", sweep_spec,
                    "section.key=v1,v2,... runs once per value into subdirectories");

    CLI11_PARSE(app, argc, argv);

    if (*seed_opt)
        options.seed = seed;
    if (!sweep_spec.empty()) {
        const std::size_t eq = sweep_spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == sweep_spec.size()) {
            std::cerr << "config error: --sweep expects section.key=v1,v2,...\n";
            return 2;
        }
        options.sweep_key = sweep_spec.substr(0, eq);
        std::size_t pos = eq + 1;
        while (pos <= sweep_spec.size()) {
            const std::size_t comma = sweep_spec.find(',', pos);
            const std::size_t end = comma == std::string::npos ? sweep_spec.size() : comma;
            if (end == pos) {
                std::cerr << "config error: --sweep has an empty value\n";
                return 2;
            }
            options.sweep_values.push_back(sweep_spec.substr(pos, end - pos));
            if (comma == std::string::npos)
                break;
            pos = comma + 1;
        }
    }

    return cwgf::run_cli(options);
}
