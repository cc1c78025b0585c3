#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "editleak/errors.hpp"
#include "editleak/mat.hpp"

// Factorization kernel. Eigen does the heavy lifting behind the Mat-based
// contract; nothing in the public surface exposes Eigen types.

namespace editleak {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EMat> as_eigen(const Mat& m) {
    return Eigen::Map<const EMat>(m.data().data(),
                                  static_cast<Eigen::Index>(m.rows()),
                                  static_cast<Eigen::Index>(m.cols()));
}

inline Mat from_eigen(const EMat& e) {
    Mat m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
    Eigen::Map<EMat>(m.data().data(), e.rows(), e.cols()) = e;
    return m;
}

} // namespace detail

/// Thin SVD of an m x n matrix: U is m x r, V is n x r, r = min(m, n),
/// with sigma nonincreasing and a deterministic sign convention.
struct SvdResult {
    Mat u;
    Vec sigma;
    Mat v;
};

/// Thin SVD with a reproducible sign convention: in each column of V the
/// entry of largest absolute value is made nonnegative (ties broken by the
/// lowest row index), and the matching U column is flipped with it.
inline SvdResult svd_thin(const Mat& m) {
    m.require_finite("svd_thin");
    Eigen::JacobiSVD<detail::EMat> svd(detail::as_eigen(m),
                                       Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto r = std::min(m.rows(), m.cols());
    SvdResult out;
    out.u = detail::from_eigen(svd.matrixU());
    out.v = detail::from_eigen(svd.matrixV());
    out.sigma.assign(svd.singularValues().data(), svd.singularValues().data() + r);

    for (std::size_t j = 0; j < r; ++j) {
        std::size_t pivot = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < out.v.rows(); ++i) {
            const double a = std::abs(out.v(i, j));
            if (a > best) {
                best = a;
                pivot = i;
            }
        }
        if (out.v(pivot, j) < 0.0) {
            for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, j) = -out.v(i, j);
            for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, j) = -out.u(i, j);
        }
    }
    return out;
}

/// Count of singular values above rel_tol * sigma_max; 0 for a zero spectrum.
/// sigma must be nonincreasing and nonnegative.
inline std::size_t numerical_rank(const Vec& sigma, double rel_tol) {
    if (rel_tol <= 0.0) throw invalid_input_error("numerical_rank: rel_tol must be > 0");
    for (std::size_t i = 0; i + 1 < sigma.size(); ++i)
        if (sigma[i + 1] > sigma[i]) throw invalid_input_error("numerical_rank: sigma not sorted");
    for (double s : sigma)
        if (s < 0.0 || !std::isfinite(s)) throw invalid_input_error("numerical_rank: bad sigma");
    if (sigma.empty() || sigma.front() == 0.0) return 0;
    const double cut = rel_tol * sigma.front();
    std::size_t r = 0;
    while (r < sigma.size() && sigma[r] > cut) ++r;
    return r;
}

/// Default relative tolerance for rank decisions on an m x n matrix.
/// Rank in exact arithmetic is a statement finite precision can only
/// approximate; this threshold (~1e-12 relative at desk dimensions) is the
/// library-wide default, overridable per call.
inline double default_rank_tol(std::size_t rows, std::size_t cols) {
    return static_cast<double>(std::max(rows, cols)) * 2.2e-16 * 1e3;
}

inline std::size_t numerical_rank(const Mat& m, double rel_tol = 0.0) {
    if (rel_tol == 0.0) rel_tol = default_rank_tol(m.rows(), m.cols());
    return numerical_rank(svd_thin(m).sigma, rel_tol);
}

/// Solve A X = B for symmetric positive definite A via Cholesky. A^-1 is
/// never formed; a factorization failure (or detectable asymmetry) means the
/// positive-definiteness assumption on the covariance is violated.
inline Mat solve_spd(const Mat& a, const Mat& b) {
    a.require_finite("solve_spd");
    b.require_finite("solve_spd");
    if (a.rows() != a.cols()) throw invalid_input_error("solve_spd: A must be square");
    if (a.rows() != b.rows()) throw invalid_input_error("solve_spd: shape mismatch");
    const double scale = max_abs(a);
    double asym = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            asym = std::max(asym, std::abs(a(i, j) - a(j, i)));
    if (asym > 1e-8 * scale) throw not_spd_error("solve_spd: matrix is not symmetric");

    Eigen::LLT<Eigen::MatrixXd> llt(detail::as_eigen(a));
    if (llt.info() != Eigen::Success) throw not_spd_error("solve_spd: Cholesky failed");
    Eigen::MatrixXd x = llt.solve(detail::as_eigen(b));
    return detail::from_eigen(x);
}

inline Vec solve_spd(const Mat& a, const Vec& b) {
    return solve_spd(a, Mat::from_column(b)).column(0);
}

/// True iff Cholesky succeeds; used by constructors that must validate SPD.
inline bool is_spd(const Mat& a) {
    if (a.rows() != a.cols()) return false;
    const double scale = max_abs(a);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-8 * scale) return false;
    Eigen::LLT<Eigen::MatrixXd> llt(detail::as_eigen(a));
    return llt.info() == Eigen::Success;
}

/// Solve A X = B for general square A (partial-pivot LU). Internal plumbing
/// for the one editor formula whose system matrix is not symmetric.
inline Mat solve_lu(const Mat& a, const Mat& b) {
    a.require_finite("solve_lu");
    b.require_finite("solve_lu");
    if (a.rows() != a.cols()) throw invalid_input_error("solve_lu: A must be square");
    if (a.rows() != b.rows()) throw invalid_input_error("solve_lu: shape mismatch");
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(detail::as_eigen(a));
    Eigen::MatrixXd x = lu.solve(detail::as_eigen(b));
    Mat out = detail::from_eigen(x);
    if (!out.all_finite()) throw singular_system_error("solve_lu: singular system");
    return out;
}

/// X A = B for general square A, i.e. X = B A^-1.
inline Mat solve_lu_right(const Mat& a, const Mat& b) {
    return transpose(solve_lu(transpose(a), transpose(b)));
}

inline void require_orthonormal_columns(const Mat& u, const char* who) {
    const Mat g = matmul_tn(u, u);
    double err = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
            err = std::max(err, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    if (err > 1e-8) throw invalid_input_error(std::string(who) + ": columns not orthonormal");
}

/// Principal angles between the column spans of u1 and u2 (both orthonormal,
/// same column count). Computed as arccos of the singular values of u1^T u2,
/// clamped to [0,1] against round-off; returned nondecreasing, in [0, pi/2].
inline Vec principal_angles(const Mat& u1, const Mat& u2) {
    if (u1.rows() != u2.rows() || u1.cols() != u2.cols())
        throw invalid_input_error("principal_angles: shape mismatch");
    require_orthonormal_columns(u1, "principal_angles");
    require_orthonormal_columns(u2, "principal_angles");
    const SvdResult s = svd_thin(matmul_tn(u1, u2));
    Vec angles(s.sigma.size());
    for (std::size_t i = 0; i < s.sigma.size(); ++i)
        angles[i] = std::acos(std::clamp(s.sigma[i], 0.0, 1.0));
    std::sort(angles.begin(), angles.end());
    return angles;
}

inline double max_principal_angle(const Mat& u1, const Mat& u2) {
    const Vec a = principal_angles(u1, u2);
    return a.back();
}

/// Largest singular value.
inline double spectral_norm(const Mat& m) {
    m.require_finite("spectral_norm");
    return svd_thin(m).sigma.front();
}

/// Orthonormal basis of col(m), truncated at the numerical rank. Empty
/// optional-like: returns a matrix with zero columns encoded as rank 0 via
/// the second output.
inline Mat orthonormal_range_basis(const Mat& m, double rel_tol, std::size_t* rank_out = nullptr) {
    const SvdResult s = svd_thin(m);
    const std::size_t r = numerical_rank(s.sigma, rel_tol);
    if (rank_out) *rank_out = r;
    if (r == 0) return Mat::zeros(m.rows(), 1);
    return s.u.left_columns(r);
}

/// Haar-ish random orthogonal matrix: QR of a seeded Gaussian with the sign
/// of R's diagonal folded into Q.
inline Mat random_orthogonal(std::size_t n, Rng& rng) {
    const Mat g = Mat::random_normal(n, n, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(detail::as_eigen(g));
    Eigen::MatrixXd q = qr.householderQ() *
                        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                  static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return detail::from_eigen(q);
}

/// Q D Q^T with cond(D) = `cond` log-spaced; an SPD test matrix generator.
inline Mat random_spd_with_cond(std::size_t n, double cond, Rng& rng) {
    Mat q = random_orthogonal(n, rng);
    Mat a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        const double d = std::pow(cond, -t);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) a(j, k) += q(j, i) * d * q(k, i);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = s;
            a(j, i) = s;
        }
    return a;
}

} // namespace editleak
