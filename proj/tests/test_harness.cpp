#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "editleak/harness.hpp"

using namespace editleak;
using namespace editleak::harness;

namespace {

// desk-scale config shrunk for test speed
const char* BASE_CONFIG = R"(
# test experiment
world.d_in = 64
world.d_out = 48
world.vocab = 256
world.n_subjects = 128
world.n_templates = 8
seed = 13
method = MEMIT
n_edits = 8
trials = 2
out_dir = out
)";

ExperimentConfig parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

} // namespace

TEST_CASE("config parsing") {
    SECTION("a full config round-trips into the struct") {
        const ExperimentConfig cfg = parse_string(BASE_CONFIG);
        REQUIRE(cfg.world.d_in == 64);
        REQUIRE(cfg.world.seed == 13);
        REQUIRE(cfg.method == editors::Method::MEMIT);
        REQUIRE(cfg.n_edits == 8);
        REQUIRE(cfg.trials == 2);
        REQUIRE(cfg.cov_mode.kind == CovModeKind::Exact);
    }
    SECTION("unknown keys are rejected with a line number") {
        try {
            parse_string("world.d_in = 64\nbogus_key = 3\n");
            FAIL("expected config_error");
        } catch (const config_error& e) {
            REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
            REQUIRE(std::string(e.what()).find("bogus_key") != std::string::npos);
        }
    }
    SECTION("malformed lines are rejected") {
        REQUIRE_THROWS_AS(parse_string("just some words\n"), config_error);
        REQUIRE_THROWS_AS(parse_string("world.d_in = \n"), config_error);
        REQUIRE_THROWS_AS(parse_string("world.eta = abc\n"), config_error);
    }
    SECTION("ROME demands a single edit") {
        std::string cfg = BASE_CONFIG;
        cfg += "method = ROME\nn_edits = 2\n";
        REQUIRE_THROWS_AS(parse_string(cfg), config_error);
        std::string ok = BASE_CONFIG;
        ok += "method = ROME\nn_edits = 1\n";
        REQUIRE_NOTHROW(parse_string(ok));
    }
    SECTION("covariance modes") {
        std::string est = BASE_CONFIG;
        est += "cov.mode = estimated(100)\n";
        const ExperimentConfig a = parse_string(est);
        REQUIRE(a.cov_mode.kind == CovModeKind::Estimated);
        REQUIRE(a.cov_mode.param == 100);

        std::string shift = BASE_CONFIG;
        shift += "cov.mode = shifted(7)\n";
        const ExperimentConfig b = parse_string(shift);
        REQUIRE(b.cov_mode.kind == CovModeKind::Shifted);
        REQUIRE(b.cov_mode.param == 7);

        std::string bad = BASE_CONFIG;
        bad += "cov.mode = guessed\n";
        REQUIRE_THROWS_AS(parse_string(bad), config_error);
    }
    SECTION("comments and blank lines are ignored") {
        REQUIRE_NOTHROW(parse_string("# nothing here\n\n   \nseed = 4 # trailing\n"));
    }
}

TEST_CASE("cmd_run") {
    ExperimentConfig cfg = parse_string(BASE_CONFIG);
    SECTION("exact covariance recovers every edit") {
        cfg.trials = 1;
        const RunOutput out = cmd_run(cfg);
        REQUIRE(out.trials.size() == 1);
        REQUIRE(out.trials[0].metrics.subject_recall_at_n == 1.0);
        REQUIRE(out.summary["metrics"]["recall_at_n"]["mean"].get<double>() == 1.0);
    }
    SECTION("csv carries the pinned header and one row per trial") {
        const RunOutput out = cmd_run(cfg);
        std::istringstream is(out.csv);
        std::string header;
        std::getline(is, header);
        REQUIRE(header == "trial,seed,method,n,recall_at_n,mean_rank,top1,top5,top20");
        std::size_t rows = 0;
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == cfg.trials);
    }
    SECTION("recall is 1.0 across trials with zero spread") {
        cfg.trials = 5;
        const RunOutput out = cmd_run(cfg);
        REQUIRE(out.summary["metrics"]["recall_at_n"]["mean"].get<double>() == 1.0);
        REQUIRE(out.summary["metrics"]["recall_at_n"]["std"].get<double>() == 0.0);
        // trials see different worlds: their seeds differ
        REQUIRE(out.trials[0].world_seed != out.trials[1].world_seed);
    }
    SECTION("byte-identical reruns") {
        const RunOutput a = cmd_run(cfg);
        const RunOutput b = cmd_run(cfg);
        REQUIRE(a.csv == b.csv);
        REQUIRE(a.summary.dump() == b.summary.dump());
    }
    SECTION("thread cap does not change results") {
        const char* prev = std::getenv("EDITLEAK_THREADS");
        setenv("EDITLEAK_THREADS", "1", 1);
        const RunOutput serial = cmd_run(cfg);
        setenv("EDITLEAK_THREADS", "2", 1);
        const RunOutput threaded = cmd_run(cfg);
        if (prev)
            setenv("EDITLEAK_THREADS", prev, 1);
        else
            unsetenv("EDITLEAK_THREADS");
        REQUIRE(serial.csv == threaded.csv);
        REQUIRE(serial.summary.dump() == threaded.summary.dump());
    }
    SECTION("estimated covariance mode still runs and reports") {
        cfg.cov_mode.kind = CovModeKind::Estimated;
        cfg.cov_mode.param = 100;
        cfg.trials = 1;
        const RunOutput out = cmd_run(cfg);
        REQUIRE(out.trials[0].metrics.subject_recall_at_n >= 0.0);
    }
    SECTION("shifted covariance mode still recovers the edits") {
        cfg.cov_mode.kind = CovModeKind::Shifted;
        cfg.cov_mode.param = 99;
        cfg.trials = 1;
        const RunOutput out = cmd_run(cfg);
        REQUIRE(out.trials[0].metrics.subject_recall_at_n >= 0.5);
    }
}

TEST_CASE("cmd_sweep_alpha") {
    ExperimentConfig cfg = parse_string(BASE_CONFIG);
    cfg.trials = 2;

    SECTION("alpha = 0 matches the undefended run") {
        const SweepOutput sweep = cmd_sweep_alpha(cfg, {0.0});
        const RunOutput run = cmd_run(cfg);
        REQUIRE(sweep.recalls[0] == run.summary["metrics"]["recall_at_n"]["mean"].get<double>());
        std::vector<double> run_ranks;
        for (const auto& tr : run.trials) run_ranks.push_back(tr.mean_rank);
        REQUIRE(sweep.mean_ranks[0] == Catch::Approx(mean_of(run_ranks)));
    }
    SECTION("protection grows with alpha and the edit stays intact") {
        const SweepOutput sweep = cmd_sweep_alpha(cfg, {0.0, 1.0, 3.0, 5.0});
        for (std::size_t i = 0; i + 1 < sweep.alphas.size(); ++i)
            REQUIRE(sweep.mean_ranks[i] <= sweep.mean_ranks[i + 1]);
        for (double residual : sweep.consistency) REQUIRE(residual <= 1e-6);
        REQUIRE(sweep.recalls.front() == 1.0);
        REQUIRE(sweep.recalls.back() <= 0.5);
        std::istringstream is(sweep.csv);
        std::string header;
        std::getline(is, header);
        REQUIRE(header == "alpha,mean_rank,rank_std,recall,consistency_residual");
    }
}

TEST_CASE("cmd_verify runs the full matrix of checks") {
    ExperimentConfig cfg = parse_string(BASE_CONFIG);
    const VerifyOutput out = cmd_verify(cfg);
    REQUIRE(out.all_passed);
    // one result per (check, method) pair where applicable:
    // woodbury x2, subspace x3, noisy-cov x2 scales, defense 3x3, degeneration x3
    REQUIRE(out.checks.size() == 2 + 3 + 2 + 9 + 3);
    for (const auto& chk : out.checks) {
        INFO(chk.name << ": " << chk.detail);
        REQUIRE(chk.passed);
    }
    // a second invocation reproduces the report byte for byte
    const VerifyOutput again = cmd_verify(cfg);
    REQUIRE(out.report.dump() == again.report.dump());
}

TEST_CASE("emitted files are byte-identical across invocations") {
    ExperimentConfig cfg = parse_string(BASE_CONFIG);
    cfg.trials = 2;
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "editleak_test_out";
    fs::remove_all(base);

    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        REQUIRE(f.good());
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };

    cfg.out_dir = (base / "a").string();
    emit_run(cfg, cmd_run(cfg));
    emit_world(cfg);
    cfg.out_dir = (base / "b").string();
    emit_run(cfg, cmd_run(cfg));
    emit_world(cfg);

    REQUIRE(slurp(base / "a" / "run.csv") == slurp(base / "b" / "run.csv"));
    REQUIRE(slurp(base / "a" / "summary.json") == slurp(base / "b" / "summary.json"));
    REQUIRE(slurp(base / "a" / "world.txt") == slurp(base / "b" / "world.txt"));
    fs::remove_all(base);
}
