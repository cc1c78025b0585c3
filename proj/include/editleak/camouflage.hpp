#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "editleak/editors.hpp"
#include "editleak/linalg.hpp"
#include "editleak/mat.hpp"
#include "editleak/worldsim.hpp"

// Subspace camouflage: re-parameterize a weight update so its row space
// points at a decoy-mixed key matrix K~ while acting identically on the true
// keys. Includes the alias-residual constructions showing a defended update
// is consistent with entirely different (K, R) explanations.

namespace editleak::camouflage {

using editors::Covariance;
using editors::EditBatch;
using editors::Method;
using editors::Projector;
using editors::WeightUpdate;
using worldsim::SyntheticWorld;

struct DefenseParams {
    double alpha = 1.0;
    double lambda = 1e-8; // ridge on the inner system before inversion
    std::vector<std::size_t> decoy_subject_ids;
};

/// Keys of the decoy subjects under the given template, one per column.
/// Decoys must be real subjects disjoint from the edited ones.
inline Mat build_decoy_keys(const SyntheticWorld& world,
                            const std::vector<std::size_t>& decoy_ids,
                            std::size_t template_id,
                            const std::vector<std::size_t>& edited_subject_ids) {
    if (decoy_ids.empty()) throw invalid_input_error("build_decoy_keys: no decoys");
    for (std::size_t d : decoy_ids)
        if (std::find(edited_subject_ids.begin(), edited_subject_ids.end(), d) !=
            edited_subject_ids.end())
            throw invalid_input_error("build_decoy_keys: decoy overlaps an edited subject");
    Mat k(world.cfg.d_in, decoy_ids.size());
    for (std::size_t j = 0; j < decoy_ids.size(); ++j)
        k.set_column(j, worldsim::extract_key(world, decoy_ids[j], template_id));
    return k;
}

/// K~ = K + alpha * (||K||_2 / ||K_decoy||_2) * K_decoy, spectral norms.
/// The norm ratio makes alpha scale-free in the decoys.
inline Mat aggregate_camouflage_keys(const Mat& k, const Mat& k_decoy, double alpha) {
    if (alpha < 0.0) throw invalid_input_error("aggregate_camouflage_keys: alpha must be >= 0");
    if (k.rows() != k_decoy.rows() || k.cols() != k_decoy.cols())
        throw invalid_input_error("aggregate_camouflage_keys: shape mismatch");
    if (alpha == 0.0) return k;
    const double decoy_norm = spectral_norm(k_decoy);
    if (decoy_norm == 0.0)
        throw invalid_input_error("aggregate_camouflage_keys: zero decoy matrix");
    return k + (alpha * spectral_norm(k) / decoy_norm) * k_decoy;
}

namespace detail {

/// (G + lambda I)^-1 applied from the right: returns B (G + lambda I)^-1.
inline Mat apply_ridge_inverse_right(const Mat& g, double lambda, const Mat& b) {
    Mat g_reg = g;
    for (std::size_t i = 0; i < g_reg.rows(); ++i) g_reg(i, i) += lambda;
    try {
        return solve_lu_right(g_reg, b);
    } catch (const singular_system_error&) {
        throw camouflage_degenerate_error("camouflage: G + lambda I is singular");
    }
}

} // namespace detail

/// The camouflaged update. Row space moves to col(K~) (col(P K~) for the
/// null-space editor) while dW_def K = dW K is preserved:
///   MEMIT/ROME: dW_def = dW K (K~^T C^-1 K + lambda I)^-1 K~^T C^-1
///   AlphaEdit:  dW_def = dW K (K~^T P K + lambda I)^-1 K~^T P
inline WeightUpdate defense_update(Method method, const WeightUpdate& dw, const EditBatch& batch,
                                   const Mat& k_tilde, const Covariance* c, const Projector* p,
                                   const DefenseParams& params) {
    if (k_tilde.rows() != batch.k.rows() || k_tilde.cols() != batch.k.cols())
        throw invalid_input_error("defense_update: K~ shape mismatch");
    const Mat dwk = matmul(dw.dw, batch.k);
    Mat tail; // K~^T C^-1 or K~^T P
    Mat g;    // tail * K
    if (method == Method::ALPHAEDIT) {
        if (!p) throw invalid_input_error("defense_update: projector required");
        tail = matmul_tn(k_tilde, p->p);
    } else {
        if (!c) throw invalid_input_error("defense_update: covariance required");
        tail = transpose(solve_spd(c->c, k_tilde));
    }
    g = matmul(tail, batch.k);
    const Mat f = detail::apply_ridge_inverse_right(g, params.lambda, dwk);
    return WeightUpdate{matmul(f, tail), method};
}

namespace detail {

struct DefenseGeometry {
    Mat h;       // K^T A K with A = C^-1 or P
    Mat g;       // K~^T A K
    Mat h_tilde; // K~^T A K~
};

inline DefenseGeometry geometry(Method method, const EditBatch& batch, const Mat& k_tilde,
                                const Covariance* c, const Projector* p) {
    DefenseGeometry out;
    if (method == Method::ALPHAEDIT) {
        if (!p) throw invalid_input_error("camouflage: projector required");
        const Mat pk = matmul(p->p, batch.k);
        const Mat pkt = matmul(p->p, k_tilde);
        out.h = matmul_tn(batch.k, pk);
        out.g = matmul_tn(k_tilde, pk);
        out.h_tilde = matmul_tn(k_tilde, pkt);
    } else {
        if (!c) throw invalid_input_error("camouflage: covariance required");
        const Mat ck = solve_spd(c->c, batch.k);
        const Mat ckt = solve_spd(c->c, k_tilde);
        out.h = matmul_tn(batch.k, ck);
        out.g = matmul_tn(k_tilde, ck);
        out.h_tilde = matmul_tn(k_tilde, ckt);
    }
    return out;
}

inline Mat plus_identity(Mat m) {
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0;
    return m;
}

} // namespace detail

/// Residual R' making the *original* editor reproduce the defended update
/// from the camouflaged keys: dW_method(K~, R') = dW_def. An observer of the
/// defended update cannot tell camouflage from an ordinary edit of K~.
///   ROME:            r' = (k~^T C^-1 k~ / k~^T C^-1 k) r
///   MEMIT/AlphaEdit: R' = R (I + H)^-1 H G^-1 (I + H~)
/// with H = K^T A K, G = K~^T A K, H~ = K~^T A K~ and A = C^-1 or P. ROME
/// gets its own scalar form because its update normalizes by k^T C^-1 k
/// rather than through the rank-N correction.
inline Mat equivalent_residual(Method method, const EditBatch& batch, const Mat& k_tilde,
                               const Covariance* c, const Projector* p) {
    const auto geo = detail::geometry(method, batch, k_tilde, c, p);
    if (method == Method::ROME) {
        if (batch.size() != 1) throw invalid_input_error("equivalent_residual: ROME needs N = 1");
        const double g = geo.g(0, 0);
        if (g == 0.0) throw construction_failed_error("equivalent_residual: k~^T C^-1 k = 0");
        return (geo.h_tilde(0, 0) / g) * batch.r;
    }
    try {
        const Mat a = solve_spd(detail::plus_identity(geo.h), geo.h); // (I+H)^-1 H
        const Mat b = solve_lu_right(geo.g, a);                       // ... G^-1 (from the right)
        return matmul(batch.r, matmul(b, detail::plus_identity(geo.h_tilde)));
    } catch (const not_spd_error&) {
        throw construction_failed_error("equivalent_residual: inner system not solvable");
    } catch (const singular_system_error&) {
        throw construction_failed_error("equivalent_residual: inner system not solvable");
    }
}

/// Residual R'' making an *arbitrary* key matrix K' explain the defended
/// update: dW_def(K', K~, R'') = dW_def(K, K~, R). Fails only on a
/// measure-zero set of K'.
///   ROME:            r'' = (k~^T C^-1 k' / k~^T C^-1 k) r
///   MEMIT/AlphaEdit: R'' = R (I+H)^-1 H G^-1 (K~^T A K') (K'^T A K')^-1 (I + K'^T A K')
inline Mat alias_residual(Method method, const EditBatch& batch, const Mat& k_prime,
                          const Mat& k_tilde, const Covariance* c, const Projector* p) {
    if (k_prime.rows() != batch.k.rows() || k_prime.cols() != batch.k.cols())
        throw invalid_input_error("alias_residual: K' shape mismatch");
    const auto geo = detail::geometry(method, batch, k_tilde, c, p);
    Mat g_prime;  // K~^T A K'
    Mat h_prime;  // K'^T A K'
    if (method == Method::ALPHAEDIT) {
        const Mat pkp = matmul(p->p, k_prime);
        g_prime = matmul_tn(k_tilde, pkp);
        h_prime = matmul_tn(k_prime, pkp);
    } else {
        const Mat ckp = solve_spd(c->c, k_prime);
        g_prime = matmul_tn(k_tilde, ckp);
        h_prime = matmul_tn(k_prime, ckp);
    }
    if (method == Method::ROME) {
        if (batch.size() != 1) throw invalid_input_error("alias_residual: ROME needs N = 1");
        const double g = geo.g(0, 0);
        if (g == 0.0) throw construction_failed_error("alias_residual: k~^T C^-1 k = 0");
        return (g_prime(0, 0) / g) * batch.r;
    }
    try {
        const Mat a = solve_spd(detail::plus_identity(geo.h), geo.h);
        const Mat b = solve_lu_right(geo.g, a);                 // R-side factor ... G^-1
        const Mat d = solve_lu_right(h_prime, g_prime);         // (K~^T A K')(K'^T A K')^-1
        const Mat tail = matmul(d, detail::plus_identity(h_prime));
        return matmul(batch.r, matmul(b, tail));
    } catch (const not_spd_error&) {
        throw construction_failed_error("alias_residual: inner system not solvable");
    } catch (const singular_system_error&) {
        throw construction_failed_error("alias_residual: inner system not solvable");
    }
}

} // namespace editleak::camouflage
