#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "editleak/linalg.hpp"
#include "editleak/mat.hpp"

// Closed-form locate-then-edit weight updates: the rank-one editor, its
// batched generalization, and the null-space-projected variant, each in two
// algebraically equivalent forms (direct inverse vs. rank-N correction).

namespace editleak::editors {

enum class Method { ROME, MEMIT, ALPHAEDIT };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::ROME: return "ROME";
        case Method::MEMIT: return "MEMIT";
        case Method::ALPHAEDIT: return "ALPHAEDIT";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "ROME") return Method::ROME;
    if (s == "MEMIT") return Method::MEMIT;
    if (s == "ALPHAEDIT") return Method::ALPHAEDIT;
    throw invalid_input_error("unknown method: " + s);
}

/// One single-time edit event: N knowledge triples with their stacked key
/// matrix K (d_in x N) and residual matrix R (d_out x N). Both must have full
/// column rank; a residual of exactly zero (a no-op edit) is also accepted.
struct EditBatch {
    std::vector<std::size_t> subject_ids;
    std::vector<std::size_t> template_ids;
    std::vector<std::size_t> object_token_ids;
    Mat k;
    Mat r;

    std::size_t size() const { return k.cols(); }
};

inline EditBatch make_edit_batch(std::vector<std::size_t> subject_ids,
                                 std::vector<std::size_t> template_ids,
                                 std::vector<std::size_t> object_token_ids,
                                 Mat k, Mat r) {
    const std::size_t n = k.cols();
    if (n == 0) throw invalid_input_error("edit batch: N must be >= 1");
    if (r.cols() != n || subject_ids.size() != n || template_ids.size() != n ||
        object_token_ids.size() != n)
        throw invalid_input_error("edit batch: inconsistent lengths");
    k.require_finite("edit batch K");
    r.require_finite("edit batch R");
    if (numerical_rank(k) != n)
        throw invalid_input_error("edit batch: key matrix is rank deficient");
    if (max_abs(r) != 0.0 && numerical_rank(r) != n)
        throw invalid_input_error("edit batch: residual matrix is rank deficient");
    return EditBatch{std::move(subject_ids), std::move(template_ids),
                     std::move(object_token_ids), std::move(k), std::move(r)};
}

/// Preservation covariance C = Kp Kp^T (+ ridge). Symmetric positive
/// definite by construction or by explicit check.
struct Covariance {
    Mat c;
};

/// Orthogonal projector P onto the null space of the preserved keys:
/// symmetric and idempotent.
struct Projector {
    Mat p;
};

struct WeightUpdate {
    Mat dw;
    Method method;
};

/// Default ridge when the preserved pool is too small to span d_in. The
/// positive-definiteness assumption has to be restored somehow; trace-scaled
/// 1e-6 keeps the fix negligible against the data part.
inline double default_covariance_ridge(const Mat& kp) {
    if (kp.cols() >= kp.rows()) return 0.0;
    double trace = 0.0;
    for (std::size_t j = 0; j < kp.cols(); ++j) {
        const Vec col = kp.column(j);
        trace += dot(col, col);
    }
    return 1e-6 * trace / static_cast<double>(kp.rows());
}

inline Covariance covariance_from_keys(const Mat& kp, double ridge) {
    kp.require_finite("covariance_from_keys");
    if (ridge < 0.0) throw invalid_input_error("covariance_from_keys: ridge must be >= 0");
    Mat c = matmul_nt(kp, kp);
    for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) += ridge;
    if (!is_spd(c)) throw not_spd_error("covariance_from_keys: result is not positive definite");
    return Covariance{std::move(c)};
}

/// P = I - Q Q^T with Q an orthonormal basis of col(Kp), truncated at the
/// numerical rank of Kp.
inline Projector nullspace_projector(const Mat& kp, double rel_tol = 0.0) {
    kp.require_finite("nullspace_projector");
    if (rel_tol == 0.0) rel_tol = default_rank_tol(kp.rows(), kp.cols());
    std::size_t rank = 0;
    const Mat q = orthonormal_range_basis(kp, rel_tol, &rank);
    Mat p = Mat::identity(kp.rows());
    if (rank > 0) p = p - matmul_nt(q, q);
    return Projector{std::move(p)};
}

// ---- ROME ------------------------------------------------------------------

/// dW = r* (k*^T C^-1) / (k*^T C^-1 k*); satisfies dW k* = r* exactly.
inline WeightUpdate rome_update(const Vec& k_star, const Vec& r_star, const Covariance& c) {
    if (k_star.size() != c.c.rows()) throw invalid_input_error("rome_update: dimension mismatch");
    if (norm2(k_star) == 0.0) throw invalid_input_error("rome_update: zero key");
    const Vec x = solve_spd(c.c, k_star); // C^-1 k*
    const double denom = dot(k_star, x);
    if (denom <= 0.0) throw not_spd_error("rome_update: k^T C^-1 k is not positive");
    Mat dw(r_star.size(), k_star.size());
    for (std::size_t i = 0; i < r_star.size(); ++i)
        for (std::size_t j = 0; j < k_star.size(); ++j)
            dw(i, j) = r_star[i] * x[j] / denom;
    return WeightUpdate{std::move(dw), Method::ROME};
}

// ---- MEMIT -----------------------------------------------------------------

/// dW = R K^T (C + K K^T)^-1, the batched editor in its direct form.
inline WeightUpdate memit_update(const EditBatch& batch, const Covariance& c) {
    if (batch.k.rows() != c.c.rows()) throw invalid_input_error("memit_update: dimension mismatch");
    Mat a = c.c + matmul_nt(batch.k, batch.k);
    Mat x;
    try {
        x = solve_spd(a, batch.k); // (C + K K^T)^-1 K
    } catch (const not_spd_error&) {
        throw not_spd_error("memit_update: C + K K^T is not positive definite");
    }
    return WeightUpdate{matmul_nt(batch.r, x), Method::MEMIT};
}

/// dW = R (I + K^T C^-1 K)^-1 K^T C^-1; the rank-N correction form. Agrees
/// with memit_update to round-off whenever C is positive definite.
inline WeightUpdate memit_update_woodbury(const EditBatch& batch, const Covariance& c) {
    if (batch.k.rows() != c.c.rows())
        throw invalid_input_error("memit_update_woodbury: dimension mismatch");
    const std::size_t n = batch.size();
    const Mat y = solve_spd(c.c, batch.k); // C^-1 K
    Mat s = matmul_tn(batch.k, y);         // K^T C^-1 K
    for (std::size_t i = 0; i < n; ++i) s(i, i) += 1.0;
    Mat t;
    try {
        t = solve_spd(s, transpose(y)); // (I + K^T C^-1 K)^-1 K^T C^-1
    } catch (const not_spd_error&) {
        throw singular_system_error("memit_update_woodbury: inner system is singular");
    }
    return WeightUpdate{matmul(batch.r, t), Method::MEMIT};
}

// ---- AlphaEdit -------------------------------------------------------------

namespace detail {

inline void check_projected_rank(const EditBatch& batch, const Projector& p, const Mat& pk) {
    if (max_abs(pk) == 0.0) return; // fully protected batch degenerates to dW = 0
    (void)p;
    if (numerical_rank(pk) != batch.size())
        throw degenerate_projection_error("alphaedit: rank(P K) < N");
}

} // namespace detail

/// dW = R K^T P (K K^T P + I)^-1, the null-space editor in its direct form.
/// Requires rank(P K) = N unless P K = 0, in which case dW = 0.
inline WeightUpdate alphaedit_update(const EditBatch& batch, const Projector& p) {
    if (batch.k.rows() != p.p.rows()) throw invalid_input_error("alphaedit_update: dimension mismatch");
    const Mat pk = matmul(p.p, batch.k);
    detail::check_projected_rank(batch, p, pk);
    Mat a = matmul_nt(batch.k, batch.k); // K K^T
    a = matmul(a, p.p);                  // K K^T P  (not symmetric in general)
    for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1.0;
    const Mat b = matmul_nt(batch.r, pk); // R K^T P
    return WeightUpdate{solve_lu_right(a, b), Method::ALPHAEDIT};
}

/// dW = R (I + K^T P K)^-1 K^T P; the rank-N correction form, with the inner
/// system symmetric positive definite whenever rank(P K) = N.
inline WeightUpdate alphaedit_update_woodbury(const EditBatch& batch, const Projector& p) {
    if (batch.k.rows() != p.p.rows())
        throw invalid_input_error("alphaedit_update_woodbury: dimension mismatch");
    const std::size_t n = batch.size();
    const Mat pk = matmul(p.p, batch.k);
    detail::check_projected_rank(batch, p, pk);
    Mat s = matmul_tn(batch.k, pk); // K^T P K = (P K)^T (P K)
    for (std::size_t i = 0; i < n; ++i) s(i, i) += 1.0;
    Mat t;
    try {
        t = solve_spd(s, transpose(pk)); // (I + K^T P K)^-1 K^T P
    } catch (const not_spd_error&) {
        throw degenerate_projection_error("alphaedit_update_woodbury: inner system is singular");
    }
    return WeightUpdate{matmul(batch.r, t), Method::ALPHAEDIT};
}

/// Dispatch helper: the covariance drives ROME/MEMIT, the projector drives
/// AlphaEdit. Exactly one of c/p is consulted per method.
inline WeightUpdate compute_update(Method method, const EditBatch& batch,
                                   const Covariance* c, const Projector* p) {
    switch (method) {
        case Method::ROME:
            if (!c) throw invalid_input_error("ROME needs a covariance");
            if (batch.size() != 1) throw invalid_input_error("ROME is single-edit only");
            return rome_update(batch.k.column(0), batch.r.column(0), *c);
        case Method::MEMIT:
            if (!c) throw invalid_input_error("MEMIT needs a covariance");
            return memit_update(batch, *c);
        case Method::ALPHAEDIT:
            if (!p) throw invalid_input_error("AlphaEdit needs a projector");
            return alphaedit_update(batch, *p);
    }
    throw invalid_input_error("compute_update: bad method");
}

} // namespace editleak::editors
