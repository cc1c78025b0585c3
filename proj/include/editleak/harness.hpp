#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "editleak/camouflage.hpp"
#include "editleak/kster.hpp"
#include "editleak/verify.hpp"

// Experiment driver: seeded end-to-end pipelines (edit -> attack -> metrics),
// alpha sweeps for the defense, and the theorem suite, with CSV/JSON report
// emission. Everything is a deterministic function of the config file.

namespace editleak::harness {

using editors::Covariance;
using editors::Method;
using editors::Projector;
using json = nlohmann::ordered_json;

enum class CovModeKind { Exact, Estimated, Shifted };

struct CovMode {
    CovModeKind kind = CovModeKind::Exact;
    std::uint64_t param = 0; // sample count for Estimated, seed for Shifted
};

struct DefenseConfig {
    bool enabled = false;
    double alpha = 1.0;
    double lambda = 1e-8;
    std::size_t n_decoys = 0; // 0 -> one per edit
};

struct ExperimentConfig {
    worldsim::WorldConfig world;
    Method method = Method::MEMIT;
    std::size_t n_edits = 8;
    std::size_t trials = 5;
    std::string out_dir = "out";
    CovMode cov_mode;
    DefenseConfig defense;

    // preserved-knowledge pools behind C and P
    std::size_t cov_pool = 0;  // 0 -> 8 * d_in
    double cov_scale = 0.38;   // corpus activations are dimmer than subject
                               // keys; this sets the preservation pressure
    std::size_t proj_pool = 0; // 0 -> d_in / 4

    std::size_t generic_template = 0;
    std::size_t n_r = 0; // prompts kept per subject; 0 -> all templates
    double rank_rel_tol = 0.0;
    double epsilon = 1e-9;

    std::size_t cov_pool_size() const { return cov_pool ? cov_pool : 8 * world.d_in; }
    std::size_t proj_pool_size() const { return proj_pool ? proj_pool : world.d_in / 4; }
};

inline void validate(const ExperimentConfig& cfg) {
    worldsim::validate(cfg.world);
    if (cfg.n_edits < 1) throw config_error("n_edits must be >= 1");
    if (cfg.trials < 1) throw config_error("trials must be >= 1");
    if (cfg.method == Method::ROME && cfg.n_edits != 1)
        throw config_error("ROME supports n_edits = 1 only");
    if (cfg.n_edits > cfg.world.n_subjects) throw config_error("n_edits exceeds subject pool");
    if (cfg.cov_mode.kind == CovModeKind::Estimated && cfg.cov_mode.param < 1)
        throw config_error("estimated covariance needs a sample count");
    if (cfg.proj_pool_size() + 16 > cfg.world.d_in && cfg.method == Method::ALPHAEDIT)
        throw config_error("projector pool leaves too little null space");
}

// ---- config file ------------------------------------------------------------
//
// Line-oriented `key = value` pairs with dotted keys, '#' comments and blank
// lines. Unknown keys are errors: experiments must be auditable.

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline CovMode parse_cov_mode(const std::string& v, int line) {
    CovMode m;
    if (v == "exact") {
        m.kind = CovModeKind::Exact;
        return m;
    }
    auto paren = [&](const char* name, CovModeKind kind) -> std::optional<CovMode> {
        const std::string prefix = std::string(name) + "(";
        if (v.rfind(prefix, 0) == 0 && v.back() == ')') {
            CovMode out;
            out.kind = kind;
            const std::string arg = v.substr(prefix.size(), v.size() - prefix.size() - 1);
            try {
                out.param = std::stoull(arg);
            } catch (...) {
                throw config_error("line " + std::to_string(line) + ": bad argument in '" + v + "'");
            }
            return out;
        }
        return std::nullopt;
    };
    if (auto e = paren("estimated", CovModeKind::Estimated)) return *e;
    if (auto s = paren("shifted", CovModeKind::Shifted)) return *s;
    throw config_error("line " + std::to_string(line) + ": unknown cov mode '" + v + "'");
}

} // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig cfg;
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        std::string s = raw;
        const auto hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(line) + ": expected 'key = value'");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("line " + std::to_string(line) + ": empty key or value");

        auto as_u64 = [&]() -> std::uint64_t {
            try {
                return std::stoull(value);
            } catch (...) {
                throw config_error("line " + std::to_string(line) + ": '" + key +
                                   "' expects an integer");
            }
        };
        auto as_double = [&]() -> double {
            try {
                return std::stod(value);
            } catch (...) {
                throw config_error("line " + std::to_string(line) + ": '" + key +
                                   "' expects a number");
            }
        };

        if (key == "world.d_in") cfg.world.d_in = as_u64();
        else if (key == "world.d_out") cfg.world.d_out = as_u64();
        else if (key == "world.vocab") cfg.world.vocab = as_u64();
        else if (key == "world.n_subjects") cfg.world.n_subjects = as_u64();
        else if (key == "world.n_templates") cfg.world.n_templates = as_u64();
        else if (key == "world.eta") cfg.world.eta = as_double();
        else if (key == "world.tau") cfg.world.tau = as_double();
        else if (key == "world.beta") cfg.world.beta = as_double();
        else if (key == "seed") cfg.world.seed = as_u64();
        else if (key == "method") {
            try {
                cfg.method = editors::method_from_string(value);
            } catch (const invalid_input_error&) {
                throw config_error("line " + std::to_string(line) + ": unknown method '" + value + "'");
            }
        } else if (key == "n_edits") cfg.n_edits = as_u64();
        else if (key == "trials") cfg.trials = as_u64();
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "cov.mode") cfg.cov_mode = detail::parse_cov_mode(value, line);
        else if (key == "cov.pool") cfg.cov_pool = as_u64();
        else if (key == "cov.scale") cfg.cov_scale = as_double();
        else if (key == "proj.pool") cfg.proj_pool = as_u64();
        else if (key == "attack.generic_template") cfg.generic_template = as_u64();
        else if (key == "attack.n_r") cfg.n_r = as_u64();
        else if (key == "attack.rank_rel_tol") cfg.rank_rel_tol = as_double();
        else if (key == "attack.epsilon") cfg.epsilon = as_double();
        else if (key == "defense.enabled") {
            if (value == "true") cfg.defense.enabled = true;
            else if (value == "false") cfg.defense.enabled = false;
            else throw config_error("line " + std::to_string(line) + ": defense.enabled expects true/false");
        } else if (key == "defense.alpha") cfg.defense.alpha = as_double();
        else if (key == "defense.lambda") cfg.defense.lambda = as_double();
        else if (key == "defense.decoys") cfg.defense.n_decoys = as_u64();
        else throw config_error("line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    return parse_config(f);
}

// ---- pipeline pieces --------------------------------------------------------

inline Covariance editor_covariance(const worldsim::SyntheticWorld& w,
                                    const ExperimentConfig& cfg) {
    Mat kp = worldsim::sample_key_pool(w, cfg.cov_pool_size(),
                                       Rng(w.cfg.seed).derive(stream::cov_pool));
    if (cfg.cov_scale != 1.0) kp = cfg.cov_scale * kp;
    return editors::covariance_from_keys(kp, editors::default_covariance_ridge(kp));
}

inline Projector editor_projector(const worldsim::SyntheticWorld& w,
                                  const ExperimentConfig& cfg) {
    const Mat kp = worldsim::sample_key_pool(w, cfg.proj_pool_size(),
                                             Rng(w.cfg.seed).derive(stream::proj_pool));
    return editors::nullspace_projector(kp);
}

/// The covariance the *attacker* analyzes with, per cov mode. The estimated
/// mode samples candidate keys and applies a shrinkage ridge of trace/n:
/// with fewer samples than dimensions the raw outer-product estimate spans
/// only the sampled keys and the analysis collapses onto them.
inline Covariance attack_covariance(const worldsim::SyntheticWorld& w,
                                    const ExperimentConfig& cfg, const Covariance& exact,
                                    std::uint64_t trial) {
    switch (cfg.cov_mode.kind) {
        case CovModeKind::Exact:
            return exact;
        case CovModeKind::Estimated: {
            const Mat kp = worldsim::sample_candidate_key_pool(
                w, cfg.cov_mode.param,
                Rng(w.cfg.seed).derive(stream::cov_estimate).derive(trial));
            double trace = 0.0;
            for (std::size_t j = 0; j < kp.cols(); ++j) {
                const Vec col = kp.column(j);
                trace += dot(col, col);
            }
            return editors::covariance_from_keys(kp, trace / static_cast<double>(kp.cols()));
        }
        case CovModeKind::Shifted: {
            Mat kp = worldsim::sample_key_pool(
                w, cfg.cov_pool_size(),
                Rng(cfg.cov_mode.param).derive(stream::cov_pool).derive(trial));
            if (cfg.cov_scale != 1.0) kp = cfg.cov_scale * kp;
            return editors::covariance_from_keys(kp, editors::default_covariance_ridge(kp));
        }
    }
    throw config_error("bad covariance mode");
}

inline kster::AttackConfig attack_config(const worldsim::SyntheticWorld& w,
                                         const ExperimentConfig& cfg) {
    kster::AttackConfig a;
    a.generic_template_id = cfg.generic_template;
    a.rank_rel_tol = cfg.rank_rel_tol;
    a.epsilon = cfg.epsilon;
    a.n_r = cfg.n_r ? cfg.n_r : w.cfg.n_templates;
    a.subject_candidates.resize(w.cfg.n_subjects);
    std::iota(a.subject_candidates.begin(), a.subject_candidates.end(), 0);
    a.prompt_candidates.resize(w.cfg.n_templates);
    std::iota(a.prompt_candidates.begin(), a.prompt_candidates.end(), 0);
    return a;
}

/// Decoys: uniform draws from the non-edited subjects.
inline std::vector<std::size_t> pick_decoys(const worldsim::SyntheticWorld& w,
                                            const std::vector<std::size_t>& edited,
                                            std::size_t count, Rng rng) {
    if (count + edited.size() > w.cfg.n_subjects)
        throw invalid_input_error("pick_decoys: not enough non-edited subjects");
    std::vector<std::size_t> out;
    while (out.size() < count) {
        const std::size_t cand = static_cast<std::size_t>(rng.next_below(w.cfg.n_subjects));
        bool taken = std::find(edited.begin(), edited.end(), cand) != edited.end() ||
                     std::find(out.begin(), out.end(), cand) != out.end();
        if (!taken) out.push_back(cand);
    }
    return out;
}

struct TrialResult {
    std::uint64_t trial = 0;
    std::uint64_t world_seed = 0;
    kster::RecallTable metrics;
    kster::AttackReport report;
    double mean_rank = 0.0;
    double consistency_residual = 0.0; // defended runs only
    double delta_theta = 0.0;
};

/// Full attack report as a JSON document (basis matrix in the text fixture
/// format).
inline json attack_report_json(const kster::AttackReport& rep) {
    json scores = json::array();
    for (const auto& [s, rho] : rep.subject_scores) scores.push_back({{"subject", s}, {"rho", rho}});
    json prompts = json::object();
    for (const auto& [s, ranked] : rep.prompt_rankings) {
        json list = json::array();
        for (const auto& [t, score] : ranked) list.push_back({{"template", t}, {"score", score}});
        prompts[std::to_string(s)] = std::move(list);
    }
    return {{"n_hat", rep.n_hat},
            {"n_used", rep.n_used},
            {"rank_discrepancy", rep.rank_discrepancy},
            {"predicted_subjects", rep.predicted_subjects},
            {"subject_scores", std::move(scores)},
            {"prompt_rankings", std::move(prompts)},
            {"basis", mat_to_string(rep.basis)},
            {"metrics",
             {{"subject_recall_at_n", rep.metrics.subject_recall_at_n},
              {"prompt_top1", rep.metrics.prompt_top1},
              {"prompt_top5", rep.metrics.prompt_top5},
              {"prompt_top20", rep.metrics.prompt_top20},
              {"true_subject_ranks", rep.metrics.true_subject_ranks},
              {"mean_projection_coeff", rep.metrics.mean_projection_coeff}}}};
}

/// One full trial: fresh world, synthesized edit, optional defense, attack,
/// metrics. Pure function of (cfg, trial index, alpha override).
inline TrialResult run_trial(const ExperimentConfig& cfg, std::uint64_t trial,
                             std::optional<double> alpha_override = std::nullopt) {
    TrialResult out;
    out.trial = trial;

    worldsim::WorldConfig wc = cfg.world;
    wc.seed = Rng(cfg.world.seed).derive(stream::trial).derive(trial).next_u64();
    out.world_seed = wc.seed;
    const worldsim::SyntheticWorld w = worldsim::new_world(wc);

    const Covariance c = editor_covariance(w, cfg);
    const bool needs_proj = cfg.method == Method::ALPHAEDIT;
    std::optional<Projector> p;
    if (needs_proj) p = editor_projector(w, cfg);

    worldsim::SynthesizedEdit se = worldsim::synthesize_edit_batch(
        w, cfg.n_edits, cfg.method, &c, p ? &*p : nullptr, trial);

    editors::WeightUpdate analyzed = se.update;
    const double alpha = alpha_override.value_or(cfg.defense.alpha);
    if (cfg.defense.enabled || alpha_override) {
        const std::size_t n_decoys = cfg.defense.n_decoys ? cfg.defense.n_decoys : cfg.n_edits;
        const auto decoys = pick_decoys(w, se.batch.subject_ids, n_decoys,
                                        Rng(wc.seed).derive(stream::decoys));
        const Mat k_decoy =
            camouflage::build_decoy_keys(w, decoys, cfg.generic_template, se.batch.subject_ids);
        const Mat k_tilde = camouflage::aggregate_camouflage_keys(se.batch.k, k_decoy, alpha);
        camouflage::DefenseParams params;
        params.alpha = alpha;
        params.lambda = cfg.defense.lambda;
        params.decoy_subject_ids = decoys;
        analyzed = camouflage::defense_update(cfg.method, se.update, se.batch, k_tilde,
                                              needs_proj ? nullptr : &c, p ? &*p : nullptr, params);
        const Mat lhs = matmul(analyzed.dw, se.batch.k);
        const Mat rhs = matmul(se.update.dw, se.batch.k);
        out.consistency_residual = max_abs(lhs - rhs) / (1.0 + max_abs(rhs));
    }

    const Covariance attack_c = attack_covariance(w, cfg, c, trial);
    const kster::AttackConfig acfg = attack_config(w, cfg);
    out.report = kster::subject_inference(w, analyzed, needs_proj ? nullptr : &attack_c,
                                          p ? &*p : nullptr, acfg);
    out.report.prompt_rankings =
        kster::prompt_recovery(w, analyzed, out.report.predicted_subjects, acfg);
    out.metrics = kster::eval_metrics(out.report, se.batch);
    out.report.metrics = out.metrics;
    out.delta_theta = kster::measure_delta_theta(w, out.report.basis, se.batch.subject_ids,
                                                 acfg.subject_candidates, acfg.generic_template_id,
                                                 needs_proj ? &*p : nullptr);
    // Separability is the hypothesis behind the exact-recovery guarantee;
    // a nonpositive gap on an undefended exact-covariance run means the
    // generated world violates it.
    if (!cfg.defense.enabled && !alpha_override && cfg.cov_mode.kind == CovModeKind::Exact &&
        out.delta_theta <= 0.0)
        throw error("trial " + std::to_string(trial) +
                    ": world is not delta-theta separable (gap " +
                    std::to_string(out.delta_theta) + ")");
    double rank_sum = 0.0;
    for (std::size_t r : out.metrics.true_subject_ranks) rank_sum += static_cast<double>(r);
    out.mean_rank = rank_sum / static_cast<double>(out.metrics.true_subject_ranks.size());
    return out;
}

// ---- parallel trial execution ----------------------------------------------

inline std::size_t thread_budget() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("EDITLEAK_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<std::size_t>(cap) < n) n = static_cast<std::size_t>(cap);
    }
    return n;
}

template <typename Fn>
void parallel_for_index(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min(thread_budget(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

// ---- aggregation and report emission ----------------------------------------

inline double mean_of(const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

namespace detail {

inline std::string num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace detail

struct RunOutput {
    std::vector<TrialResult> trials;
    json summary;
    std::string csv;
};

inline RunOutput cmd_run(const ExperimentConfig& cfg) {
    RunOutput out;
    out.trials.resize(cfg.trials);
    parallel_for_index(cfg.trials,
                       [&](std::size_t t) { out.trials[t] = run_trial(cfg, t); });

    std::ostringstream csv;
    csv << "trial,seed,method,n,recall_at_n,mean_rank,top1,top5,top20\n";
    std::vector<double> recalls, ranks, top1, top5, top20, dthetas;
    for (const TrialResult& tr : out.trials) {
        csv << tr.trial << ',' << tr.world_seed << ',' << editors::method_name(cfg.method) << ','
            << cfg.n_edits << ',' << detail::num(tr.metrics.subject_recall_at_n) << ','
            << detail::num(tr.mean_rank) << ',' << detail::num(tr.metrics.prompt_top1) << ','
            << detail::num(tr.metrics.prompt_top5) << ',' << detail::num(tr.metrics.prompt_top20)
            << '\n';
        recalls.push_back(tr.metrics.subject_recall_at_n);
        ranks.push_back(tr.mean_rank);
        top1.push_back(tr.metrics.prompt_top1);
        top5.push_back(tr.metrics.prompt_top5);
        top20.push_back(tr.metrics.prompt_top20);
        dthetas.push_back(tr.delta_theta);
    }
    out.csv = csv.str();

    json agg;
    auto put = [&](const char* name, const std::vector<double>& xs) {
        agg[name] = {{"mean", mean_of(xs)}, {"std", std_of(xs)}};
    };
    put("recall_at_n", recalls);
    put("mean_rank", ranks);
    put("prompt_top1", top1);
    put("prompt_top5", top5);
    put("prompt_top20", top20);
    put("delta_theta", dthetas);

    out.summary = {{"method", editors::method_name(cfg.method)},
                   {"n_edits", cfg.n_edits},
                   {"trials", cfg.trials},
                   {"seed", cfg.world.seed},
                   {"metrics", agg}};
    return out;
}

struct SweepOutput {
    std::string csv;
    json summary;
    // per alpha: trials' mean ranks, recalls, consistency residuals
    std::vector<double> alphas;
    std::vector<double> mean_ranks;
    std::vector<double> recalls;
    std::vector<double> consistency;
};

inline SweepOutput cmd_sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& alphas) {
    SweepOutput out;
    std::ostringstream csv;
    csv << "alpha,mean_rank,rank_std,recall,consistency_residual\n";
    json rows = json::array();
    for (double alpha : alphas) {
        std::vector<TrialResult> trials(cfg.trials);
        parallel_for_index(cfg.trials, [&](std::size_t t) {
            trials[t] = run_trial(cfg, t, alpha);
        });
        std::vector<double> ranks, recalls;
        double worst_consistency = 0.0;
        for (const TrialResult& tr : trials) {
            ranks.push_back(tr.mean_rank);
            recalls.push_back(tr.metrics.subject_recall_at_n);
            worst_consistency = std::max(worst_consistency, tr.consistency_residual);
        }
        const double mr = mean_of(ranks), rs = std_of(ranks), rc = mean_of(recalls);
        csv << detail::num(alpha) << ',' << detail::num(mr) << ',' << detail::num(rs) << ','
            << detail::num(rc) << ',' << detail::num(worst_consistency) << '\n';
        rows.push_back({{"alpha", alpha},
                        {"mean_rank", mr},
                        {"rank_std", rs},
                        {"recall", rc},
                        {"consistency_residual", worst_consistency}});
        out.alphas.push_back(alpha);
        out.mean_ranks.push_back(mr);
        out.recalls.push_back(rc);
        out.consistency.push_back(worst_consistency);
    }
    out.csv = csv.str();
    out.summary = {{"method", editors::method_name(cfg.method)},
                   {"n_edits", cfg.n_edits},
                   {"trials", cfg.trials},
                   {"seed", cfg.world.seed},
                   {"sweep", rows}};
    return out;
}

struct VerifyOutput {
    std::vector<verify::CheckResult> checks;
    bool all_passed = true;
    json report;
};

/// Runs every check across the editors it applies to, on a deterministic
/// world derived from the config seed.
inline VerifyOutput cmd_verify(const ExperimentConfig& cfg) {
    VerifyOutput out;
    worldsim::WorldConfig wc = cfg.world;
    const worldsim::SyntheticWorld w = worldsim::new_world(wc);
    const Covariance c = editor_covariance(w, cfg);
    const Projector p = editor_projector(w, cfg);
    const Rng root(wc.seed);

    auto batch_for = [&](Method m, std::uint64_t idx) {
        return worldsim::synthesize_edit_batch(w, m == Method::ROME ? 1 : cfg.n_edits, m, &c, &p,
                                               idx);
    };

    const auto se_memit = batch_for(Method::MEMIT, 0);
    const auto se_alpha = batch_for(Method::ALPHAEDIT, 1);
    const auto se_rome = batch_for(Method::ROME, 2);

    out.checks.push_back(verify::check_woodbury_method(se_memit.batch, &c, nullptr, Method::MEMIT));
    out.checks.push_back(
        verify::check_woodbury_method(se_alpha.batch, nullptr, &p, Method::ALPHAEDIT));

    out.checks.push_back(
        verify::check_subspace_recovery(se_rome.batch, &c, nullptr, Method::ROME));
    out.checks.push_back(
        verify::check_subspace_recovery(se_memit.batch, &c, nullptr, Method::MEMIT));
    out.checks.push_back(
        verify::check_subspace_recovery(se_alpha.batch, nullptr, &p, Method::ALPHAEDIT));

    const kster::AttackConfig acfg = attack_config(w, cfg);
    out.checks.push_back(verify::check_noisy_cov_bound(w, se_memit.batch, c, 0.5, acfg,
                                                       root.derive(stream::perturbation)));
    out.checks.push_back(verify::check_noisy_cov_bound(w, se_memit.batch, c, 4.0, acfg,
                                                       root.derive(stream::perturbation).derive(1)));

    auto defense_checks = [&](Method m, const worldsim::SynthesizedEdit& se, double alpha,
                              std::uint64_t salt) {
        camouflage::DefenseParams params;
        params.alpha = alpha;
        params.decoy_subject_ids =
            pick_decoys(w, se.batch.subject_ids, se.batch.size(), root.derive(stream::decoys).derive(salt));
        const Covariance* cc = m == Method::ALPHAEDIT ? nullptr : &c;
        const Projector* pp = m == Method::ALPHAEDIT ? &p : nullptr;
        for (auto& r : verify::check_defense_theorems(w, se.batch, params, cc, pp, m,
                                                      root.derive(stream::alias).derive(salt)))
            out.checks.push_back(std::move(r));
        out.checks.push_back(
            verify::check_degeneration(w, se.batch, params.decoy_subject_ids, cc, pp, m));
    };
    defense_checks(Method::ROME, se_rome, 5.0, 0);
    defense_checks(Method::MEMIT, se_memit, 3.0, 1);
    defense_checks(Method::ALPHAEDIT, se_alpha, 3.0, 2);

    json rows = json::array();
    for (const auto& chk : out.checks) {
        out.all_passed = out.all_passed && chk.passed;
        rows.push_back({{"name", chk.name},
                        {"passed", chk.passed},
                        {"witness", chk.witness},
                        {"tolerance", chk.tolerance},
                        {"detail", chk.detail}});
    }
    out.report = {{"seed", cfg.world.seed},
                  {"n_edits", cfg.n_edits},
                  {"all_passed", out.all_passed},
                  {"checks", rows}};
    return out;
}

// ---- file emission -----------------------------------------------------------

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("cannot write " + path.string());
    f << content;
}

inline void emit_run(const ExperimentConfig& cfg, const RunOutput& run) {
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "run.csv", run.csv);
    write_file(dir / "summary.json", run.summary.dump(2) + "\n");
    if (!run.trials.empty())
        write_file(dir / "attack_report.json",
                   attack_report_json(run.trials.front().report).dump(2) + "\n");
}

inline void emit_sweep(const ExperimentConfig& cfg, const SweepOutput& sweep) {
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "sweep.csv", sweep.csv);
    write_file(dir / "sweep_summary.json", sweep.summary.dump(2) + "\n");
}

inline void emit_verify(const ExperimentConfig& cfg, const VerifyOutput& v) {
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "verify.json", v.report.dump(2) + "\n");
}

inline void emit_world(const ExperimentConfig& cfg) {
    const worldsim::SyntheticWorld w = worldsim::new_world(cfg.world);
    std::ostringstream os;
    worldsim::save_world(os, w);
    write_file(std::filesystem::path(cfg.out_dir) / "world.txt", os.str());
}

} // namespace editleak::harness
