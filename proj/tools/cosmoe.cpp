#include <iostream>
#include <vector>

#include "CLI11.hpp"
#include "cosmoe/cli.hpp"

int main(int argc, char** argv)
{
    cosmoe::CliInvocation inv;
    inv.jobs = cosmoe::default_jobs();

    CLI::App app{"cosmoe: cosine-router mixture-of-experts convergence lab"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    std::vector<CLI::Option*> seed_opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", inv.config_path, "sweep config (JSON)");
        sub->add_flag("--desk", inv.desk, "desk-scale sweep (10 replicates, n <= 46416)");
        seed_opts.push_back(sub->add_option("--seed", seed, "override master_seed"));
    };

    auto* verify = app.add_subcommand("verify", "gradient, PDE and homogeneity self-checks");
    auto* ident = app.add_subcommand("identifiability", "rank test of the expert derivative families");
    seed_opts.push_back(ident->add_option("--seed", seed, "sampling seed"));
    auto* sweep = app.add_subcommand("sweep", "run the convergence sweep and write results.csv");
    add_common(sweep);
    sweep->add_option("--out", inv.out_path, "output file or directory");
    sweep->add_option("--jobs", inv.jobs, "worker threads")->check(CLI::PositiveNumber);
    sweep->add_flag("--timing", inv.timing, "record wall_ms (output is then not reproducible)");
    auto* slopes = app.add_subcommand("slopes", "fit log-log slopes from results.csv");
    slopes->add_option("--input", inv.input_path, "results.csv (default ./results.csv)");
    slopes->add_option("--out", inv.out_path, "output file or directory");
    auto* plot = app.add_subcommand("plot", "render one SVG per setting from results.csv");
    plot->add_option("--input", inv.input_path, "results.csv (default ./results.csv)");
    plot->add_option("--out", inv.out_path, "output directory");
    auto* ratio = app.add_subcommand("diagnose-ratio", "adversarial loss/distance ratio table");
    add_common(ratio);
    (void)verify;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(cosmoe::ExitCode::ConfigError);
    }

    inv.subcommand = app.get_subcommands().front()->get_name();
    for (const CLI::Option* opt : seed_opts)
        if (opt->count() > 0)
            inv.seed = seed;
    return cosmoe::run_command(inv, std::cout, std::cerr);
}
