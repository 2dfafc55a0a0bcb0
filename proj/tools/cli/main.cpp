#include "commands.hpp"
#include "config.hpp"

#include "lsocv/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace lsocv::cli;

namespace {

void add_model_flags(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--input", cfg.input, "CSV with subject_id, y, optional time and covariates");
    cmd->add_option("--term", cfg.terms, "linear:x | smooth:x:knots=10:order=4:q=2 | vc:time:x:knots=5");
    cmd->add_option("--corr", cfg.corr, "ind | cs:rho=0.8 | ar1:rho=0.5 | lag1:rho=0.3 | exp:alpha=..:theta=.. | un");
    cmd->add_option("--lambda", cfg.lambda, "fixed=v[,v...] | optimize | grid=lo:hi:count | zero");
    cmd->add_option("--min-obs", cfg.min_obs, "drop subjects with fewer observations");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalized spline regression for longitudinal data with leave-subject-out CV"};
    app.require_subcommand(1);
    RunConfig cfg;
    std::string config_path;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON file with the same keys as the flags");
        cmd->add_option("--seed", cfg.seed, "master seed");
        cmd->add_option("--threads", cfg.threads, "worker threads (0: all cores)");
        cmd->add_option("--out", cfg.out, "output directory");
    };

    auto* fit = app.add_subcommand("fit", "fit at a given lambda and report criteria");
    auto* tune = app.add_subcommand("tune", "choose lambda by minimizing LsoCV*");
    auto* select = app.add_subcommand("select", "compare working correlations by LsoCV");
    auto* simulate = app.add_subcommand("simulate", "run a Monte Carlo experiment");
    for (auto* cmd : {fit, tune, select}) {
        common(cmd);
        add_model_flags(cmd, cfg);
    }
    for (auto* cmd : {fit, tune}) {
        cmd->add_option("--bootstrap", cfg.bootstrap, "cluster bootstrap replicates for curve bands");
        cmd->add_option("--level", cfg.level, "bootstrap interval level");
    }
    tune->add_option("--trace", cfg.trace, "write the optimizer trace CSV here");
    select->add_option("--criterion", cfg.criterion, "exact | star");
    common(simulate);
    simulate->add_option("--experiment", cfg.experiment, "table1 | efficiency | functions | dataset");
    simulate->add_option("--cell", cfg.cell, "single table cell, e.g. n=100,rho=0.5,truth=CS");
    simulate->add_option("--reps", cfg.reps, "replicates");
    simulate->add_option("--n", cfg.n, "subjects");
    simulate->add_option("--rho", cfg.rho, "true compound-symmetry correlation");
    simulate->add_option("--sigma", cfg.sigma, "noise standard deviation");
    simulate->add_option("--cluster-size", cfg.cluster_size, "observations per subject");
    simulate->add_option("--candidates", cfg.candidates, "design | moment (table1)");
    simulate->add_option("--criterion", cfg.criterion, "exact | star (table1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", {{"code", kExitConfig}, {"kind", "config"}, {"message", e.what()}}}}.dump()
                  << '\n';
        return kExitConfig;
    }

    CLI::App* active = app.get_subcommands().front();
    cfg.command = active->get_name();
    if (!config_path.empty()) {
        std::vector<std::string> given;
        for (const auto* opt : active->get_options())
            if (opt->count() > 0) given.push_back(opt->get_name(false, true).substr(2));
        try {
            merge_config_file(config_path, cfg, given);
        } catch (const lsocv::InvalidArgument& e) {
            std::cerr << nlohmann::json{{"error", {{"code", kExitConfig}, {"kind", "config"}, {"message", e.what()}}}}
                             .dump()
                      << '\n';
            return kExitConfig;
        }
    }
    return run(cfg);
}
