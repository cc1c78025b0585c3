#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "editleak/editors.hpp"
#include "editleak/linalg.hpp"
#include "editleak/mat.hpp"
#include "editleak/worldsim.hpp"

// Two-stage reverse-engineering attack on locate-then-edit weight updates:
// spectral key-space reconstruction ranks candidate subjects, then an
// entropy-reduction discriminator ranks candidate prompt templates. Also
// carries the gray-box divergence baseline and the evaluation metrics.

namespace editleak::kster {

using editors::Covariance;
using editors::EditBatch;
using editors::Method;
using editors::Projector;
using editors::WeightUpdate;
using worldsim::SyntheticWorld;

struct AttackConfig {
    double rank_rel_tol = 0.0; // 0 -> default_rank_tol of dW
    std::size_t generic_template_id = 0;
    std::vector<std::size_t> subject_candidates;
    std::vector<std::size_t> prompt_candidates;
    std::size_t n_r = 5; // prompts retained per subject
    double epsilon = 1e-9;
};

struct RecallTable {
    double subject_recall_at_n = 0.0;
    double prompt_top1 = 0.0;
    double prompt_top5 = 0.0;
    double prompt_top20 = 0.0;
    std::vector<std::size_t> true_subject_ranks; // 1-based, batch order
    double mean_projection_coeff = 0.0;
};

struct AttackReport {
    std::size_t n_hat = 0;  // Rank(dW)
    std::size_t n_used = 0; // min(n_hat, rank of the analyzed matrix M)
    bool rank_discrepancy = false;
    Mat basis; // V_N, d_in x n_used (1 zero column when n_used = 0)
    std::vector<std::pair<std::size_t, double>> subject_scores; // sorted desc, ties by id
    std::vector<std::size_t> predicted_subjects;                // top n_used
    std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> prompt_rankings;
    RecallTable metrics;
};

/// N_hat = Rank(dW): the number of edited facts leaks from the spectrum.
inline std::size_t estimate_edit_count(const WeightUpdate& dw, double rel_tol = 0.0) {
    dw.dw.require_finite("estimate_edit_count");
    if (rel_tol == 0.0) rel_tol = default_rank_tol(dw.dw.rows(), dw.dw.cols());
    return numerical_rank(svd_thin(dw.dw).sigma, rel_tol);
}

/// Top-n right singular vectors of M, where M = dW C for the
/// covariance-weighted editors and M = dW for the null-space editor. The
/// columns span the recovered key space.
inline Mat recover_key_space(const WeightUpdate& dw, const Covariance* c, std::size_t n,
                             double rel_tol = 0.0) {
    if (n == 0) throw invalid_input_error("recover_key_space: n must be >= 1");
    const Mat m = c ? matmul(dw.dw, c->c) : dw.dw;
    if (rel_tol == 0.0) rel_tol = default_rank_tol(m.rows(), m.cols());
    const SvdResult s = svd_thin(m);
    if (numerical_rank(s.sigma, rel_tol) < n)
        throw insufficient_rank_error("recover_key_space: requested more directions than rank");
    Mat v_n(m.cols(), n);
    for (std::size_t i = 0; i < m.cols(); ++i)
        for (std::size_t j = 0; j < n; ++j) v_n(i, j) = s.v(i, j);
    return v_n;
}

/// Projection coefficient rho = ||V_N^T k|| / ||k||, optionally with the
/// candidate key projected by P first (the null-space editor leaks only the
/// projected key space). A candidate annihilated by P scores 0 and sets the
/// degenerate flag.
inline double score_subject(const Mat& v_n, const Vec& k, const Projector* p,
                            bool* degenerate = nullptr) {
    if (degenerate) *degenerate = false;
    if (norm2(k) == 0.0) throw invalid_input_error("score_subject: zero key");
    Vec kk = k;
    if (p) {
        kk = matvec(p->p, k);
        if (norm2(kk) <= 1e-14 * norm2(k)) {
            if (degenerate) *degenerate = true;
            return 0.0;
        }
    }
    const Vec proj = matvec_t(v_n, kk);
    return std::clamp(norm2(proj) / norm2(kk), 0.0, 1.0);
}

namespace detail {

inline void sort_scores(std::vector<std::pair<std::size_t, double>>& scores) {
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
}

} // namespace detail

/// Stage I: rank every candidate subject by its projection onto the
/// recovered key space and keep the top N_hat.
inline AttackReport subject_inference(const SyntheticWorld& world, const WeightUpdate& dw,
                                      const Covariance* c, const Projector* p,
                                      const AttackConfig& cfg) {
    if (cfg.subject_candidates.empty())
        throw invalid_input_error("subject_inference: empty candidate pool");
    AttackReport report;
    const double tol =
        cfg.rank_rel_tol != 0.0 ? cfg.rank_rel_tol : default_rank_tol(dw.dw.rows(), dw.dw.cols());
    report.n_hat = estimate_edit_count(dw, tol);

    const bool use_cov = dw.method != Method::ALPHAEDIT;
    const Projector* score_p = dw.method == Method::ALPHAEDIT ? p : nullptr;
    if (use_cov && !c) throw invalid_input_error("subject_inference: covariance required");
    if (!use_cov && !p) throw invalid_input_error("subject_inference: projector required");

    // Under an inexact covariance the rank of dW*C can fall below Rank(dW);
    // analysis then proceeds with the smaller rank and flags the mismatch.
    const Mat m = use_cov ? matmul(dw.dw, c->c) : dw.dw;
    const std::size_t rank_m = numerical_rank(svd_thin(m).sigma, tol);
    report.n_used = std::min(report.n_hat, rank_m);
    report.rank_discrepancy = rank_m < report.n_hat;

    if (report.n_used == 0) {
        report.basis = Mat::zeros(world.cfg.d_in, 1);
        for (std::size_t s : cfg.subject_candidates) report.subject_scores.emplace_back(s, 0.0);
        detail::sort_scores(report.subject_scores);
        return report;
    }

    report.basis = recover_key_space(dw, use_cov ? c : nullptr, report.n_used, tol);
    report.subject_scores.reserve(cfg.subject_candidates.size());
    for (std::size_t s : cfg.subject_candidates) {
        const Vec k = worldsim::extract_key(world, s, cfg.generic_template_id);
        report.subject_scores.emplace_back(s, score_subject(report.basis, k, score_p));
    }
    detail::sort_scores(report.subject_scores);
    report.predicted_subjects.reserve(report.n_used);
    for (std::size_t i = 0; i < std::min(report.n_used, report.subject_scores.size()); ++i)
        report.predicted_subjects.push_back(report.subject_scores[i].first);
    return report;
}

/// Stage II discriminator: relative entropy reduction
/// (H_pre - H_post) / (H_post + epsilon) for one (subject, template) pair.
inline double prompt_score(const SyntheticWorld& world, const WeightUpdate& dw,
                           std::size_t subject_id, std::size_t template_id, double epsilon = 1e-9) {
    if (epsilon <= 0.0) throw invalid_input_error("prompt_score: epsilon must be > 0");
    const double h_pre =
        worldsim::shannon_entropy(worldsim::next_token_dist(world, nullptr, subject_id, template_id));
    const double h_post =
        worldsim::shannon_entropy(worldsim::next_token_dist(world, &dw, subject_id, template_id));
    return (h_pre - h_post) / (h_post + epsilon);
}

/// Stage II: score every candidate template for each predicted subject and
/// keep the top n_r (ties broken by ascending template id). For a subject
/// that was not actually edited the ranking is still produced but carries
/// no guarantee — the discriminator only separates templates whose entropy
/// the edit moved.
inline std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> prompt_recovery(
    const SyntheticWorld& world, const WeightUpdate& dw,
    const std::vector<std::size_t>& predicted_subjects, const AttackConfig& cfg) {
    if (cfg.prompt_candidates.empty())
        throw invalid_input_error("prompt_recovery: empty prompt pool");
    std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> out;
    for (std::size_t s : predicted_subjects) {
        std::vector<std::pair<std::size_t, double>> scored;
        scored.reserve(cfg.prompt_candidates.size());
        for (std::size_t t : cfg.prompt_candidates)
            scored.emplace_back(t, prompt_score(world, dw, s, t, cfg.epsilon));
        detail::sort_scores(scored);
        if (scored.size() > cfg.n_r) scored.resize(cfg.n_r);
        out.emplace(s, std::move(scored));
    }
    return out;
}

/// Jensen-Shannon divergence in nats; symmetric, bounded by ln 2.
inline double jensen_shannon(const Vec& p, const Vec& q) {
    if (p.size() != q.size()) throw invalid_input_error("jensen_shannon: length mismatch");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    return std::max(js, 0.0);
}

/// Gray-box baseline: per candidate, the JS divergence between pre- and
/// post-edit next-token distributions under the generic template, sorted
/// descending. The top N_hat are the gray-box prediction.
inline std::vector<std::pair<std::size_t, double>> graybox_scores(const SyntheticWorld& world,
                                                                  const WeightUpdate& dw,
                                                                  const AttackConfig& cfg) {
    if (cfg.subject_candidates.empty())
        throw invalid_input_error("graybox_scores: empty candidate pool");
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(cfg.subject_candidates.size());
    for (std::size_t s : cfg.subject_candidates) {
        const Vec p = worldsim::next_token_dist(world, nullptr, s, cfg.generic_template_id);
        const Vec q = worldsim::next_token_dist(world, &dw, s, cfg.generic_template_id);
        out.emplace_back(s, jensen_shannon(p, q));
    }
    detail::sort_scores(out);
    return out;
}

/// Harness-side scoring against ground truth. Every edited subject must be
/// present in the attack's candidate ranking (Assumption: the candidate pool
/// contains the edits).
inline RecallTable eval_metrics(const AttackReport& report, const EditBatch& truth) {
    RecallTable t;
    std::map<std::size_t, std::size_t> rank_of; // subject -> 1-based rank
    std::map<std::size_t, double> score_of;
    for (std::size_t i = 0; i < report.subject_scores.size(); ++i) {
        rank_of[report.subject_scores[i].first] = i + 1;
        score_of[report.subject_scores[i].first] = report.subject_scores[i].second;
    }
    std::size_t hits = 0;
    double rho_sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::size_t s = truth.subject_ids[i];
        const auto it = rank_of.find(s);
        if (it == rank_of.end())
            throw invalid_input_error("eval_metrics: edited subject missing from candidate pool");
        t.true_subject_ranks.push_back(it->second);
        rho_sum += score_of[s];
        if (std::find(report.predicted_subjects.begin(), report.predicted_subjects.end(), s) !=
            report.predicted_subjects.end())
            ++hits;
    }
    t.subject_recall_at_n = static_cast<double>(hits) / static_cast<double>(truth.size());
    t.mean_projection_coeff = rho_sum / static_cast<double>(truth.size());

    auto top_k = [&](std::size_t k) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const auto it = report.prompt_rankings.find(truth.subject_ids[i]);
            if (it == report.prompt_rankings.end()) continue; // unpredicted subject: a miss
            const auto& ranked = it->second;
            for (std::size_t j = 0; j < std::min(k, ranked.size()); ++j)
                if (ranked[j].first == truth.template_ids[i]) {
                    ++ok;
                    break;
                }
        }
        return static_cast<double>(ok) / static_cast<double>(truth.size());
    };
    if (!report.prompt_rankings.empty()) {
        t.prompt_top1 = top_k(1);
        t.prompt_top5 = top_k(5);
        t.prompt_top20 = top_k(20);
    }
    return t;
}

/// Empirical separation gap of Definition-style delta-theta: the margin, in
/// radians, between the worst edited candidate's angle to the subspace and
/// the best non-edited candidate's. Positive means the pools are separable.
/// For the null-space editor pass the projector so keys are projected first.
inline double measure_delta_theta(const SyntheticWorld& world, const Mat& basis,
                                  const std::vector<std::size_t>& edited_subjects,
                                  const std::vector<std::size_t>& candidate_subjects,
                                  std::size_t generic_template_id, const Projector* p = nullptr) {
    double min_rho_edited = 1.0;
    double max_rho_non = 0.0;
    std::vector<bool> is_edited;
    for (std::size_t s : candidate_subjects) {
        const bool edited =
            std::find(edited_subjects.begin(), edited_subjects.end(), s) != edited_subjects.end();
        const Vec k = worldsim::extract_key(world, s, generic_template_id);
        bool degenerate = false;
        const double rho = score_subject(basis, k, p, &degenerate);
        if (degenerate) continue;
        if (edited)
            min_rho_edited = std::min(min_rho_edited, rho);
        else
            max_rho_non = std::max(max_rho_non, rho);
    }
    return std::acos(std::clamp(max_rho_non, 0.0, 1.0)) -
           std::acos(std::clamp(min_rho_edited, 0.0, 1.0));
}

} // namespace editleak::kster
