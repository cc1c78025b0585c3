// Command-line driver: world generation, edit/attack pipelines, defense
// sweeps and the theorem suite. Exit codes: 0 ok, 1 runtime failure,
// 2 config error.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "editleak/harness.hpp"

namespace {

using editleak::config_error;
using namespace editleak::harness;

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> trials;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config file")->required();
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--out", opts.out, "override the output directory");
    cmd->add_option("--trials", opts.trials, "override the trial count");
}

ExperimentConfig resolve(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts.config_path);
    if (opts.seed) cfg.world.seed = *opts.seed;
    if (opts.out) cfg.out_dir = *opts.out;
    if (opts.trials) cfg.trials = *opts.trials;
    validate(cfg);
    return cfg;
}

std::vector<double> parse_alphas(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            throw config_error("bad --alphas entry: '" + tok + "'");
        }
    }
    if (out.empty()) throw config_error("--alphas is empty");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"editleak: locate-then-edit updates, their reverse-engineering, "
                 "and the camouflage defense on a synthetic model"};
    app.require_subcommand(1);

    CommonOpts world_opts, run_opts, sweep_opts, verify_opts;
    std::string alphas_csv = "0,1,3,5";

    CLI::App* cmd_world_app = app.add_subcommand("world", "generate a world fixture");
    add_common(cmd_world_app, world_opts);

    CLI::App* cmd_run_app = app.add_subcommand("run", "edit, attack, report metrics");
    add_common(cmd_run_app, run_opts);

    CLI::App* cmd_sweep_app = app.add_subcommand("sweep", "defense alpha sweep");
    add_common(cmd_sweep_app, sweep_opts);
    cmd_sweep_app->add_option("--alphas", alphas_csv, "comma-separated camouflage strengths");

    CLI::App* cmd_verify_app = app.add_subcommand("verify", "run the theorem suite");
    add_common(cmd_verify_app, verify_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_world_app->parsed()) {
            const ExperimentConfig cfg = resolve(world_opts);
            emit_world(cfg);
            std::printf("world written to %s/world.txt\n", cfg.out_dir.c_str());
        } else if (cmd_run_app->parsed()) {
            const ExperimentConfig cfg = resolve(run_opts);
            const RunOutput out = cmd_run(cfg);
            emit_run(cfg, out);
            std::printf("%s n=%zu trials=%zu: recall mean=%.17g std=%.17g -> %s\n",
                        editleak::editors::method_name(cfg.method), cfg.n_edits, cfg.trials,
                        out.summary["metrics"]["recall_at_n"]["mean"].get<double>(),
                        out.summary["metrics"]["recall_at_n"]["std"].get<double>(),
                        cfg.out_dir.c_str());
        } else if (cmd_sweep_app->parsed()) {
            const ExperimentConfig cfg = resolve(sweep_opts);
            const SweepOutput out = cmd_sweep_alpha(cfg, parse_alphas(alphas_csv));
            emit_sweep(cfg, out);
            std::printf("sweep over %zu alphas -> %s\n", out.alphas.size(), cfg.out_dir.c_str());
        } else if (cmd_verify_app->parsed()) {
            const ExperimentConfig cfg = resolve(verify_opts);
            const VerifyOutput out = cmd_verify(cfg);
            emit_verify(cfg, out);
            for (const auto& chk : out.checks)
                std::printf("%-40s %s witness=%.3g tol=%.3g  %s\n", chk.name.c_str(),
                            chk.passed ? "PASS" : "FAIL", chk.witness, chk.tolerance,
                            chk.detail.c_str());
            if (!out.all_passed) return 1;
        }
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
