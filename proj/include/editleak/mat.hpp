#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "editleak/errors.hpp"
#include "editleak/rng.hpp"

namespace editleak {

using Vec = std::vector<double>;

/// Dense real matrix, row-major, 64-bit entries. The workhorse value type:
/// it carries weights, key matrices, covariances, projectors and bases.
class Mat {
public:
    Mat() = default;

    Mat(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
        if (rows == 0 || cols == 0) throw invalid_input_error("Mat: dimensions must be >= 1");
    }

    Mat(std::size_t rows, std::size_t cols, Vec data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) throw invalid_input_error("Mat: dimensions must be >= 1");
        if (data_.size() != rows * cols) throw invalid_input_error("Mat: data length mismatch");
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Mat zeros(std::size_t rows, std::size_t cols) { return Mat(rows, cols); }

    static Mat from_column(const Vec& v) {
        Mat m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
        return m;
    }

    static Mat from_columns(const std::vector<Vec>& cols) {
        if (cols.empty()) throw invalid_input_error("Mat: no columns");
        Mat m(cols.front().size(), cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (cols[j].size() != m.rows_) throw invalid_input_error("Mat: ragged columns");
            for (std::size_t i = 0; i < m.rows_; ++i) m(i, j) = cols[j][i];
        }
        return m;
    }

    static Mat random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
        Mat m(rows, cols);
        for (double& x : m.data_) x = stddev * rng.next_normal();
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const Vec& data() const { return data_; }
    Vec& data() { return data_; }

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void require_finite(const char* who) const {
        if (!all_finite()) throw invalid_input_error(std::string(who) + ": non-finite entry");
    }

    Vec column(std::size_t j) const {
        Vec v(rows_);
        for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
        return v;
    }

    void set_column(std::size_t j, const Vec& v) {
        for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
    }

    Vec row(std::size_t i) const {
        Vec v(cols_);
        for (std::size_t j = 0; j < cols_; ++j) v[j] = (*this)(i, j);
        return v;
    }

    Mat left_columns(std::size_t k) const {
        Mat m(rows_, k);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < k; ++j) m(i, j) = (*this)(i, j);
        return m;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

// ---- arithmetic -----------------------------------------------------------

inline Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// a * b
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw invalid_input_error("matmul: inner dimension mismatch");
    Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

/// a^T * b without forming the transpose.
inline Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) throw invalid_input_error("matmul_tn: dimension mismatch");
    Mat c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
        }
    return c;
}

/// a * b^T without forming the transpose.
inline Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) throw invalid_input_error("matmul_nt: dimension mismatch");
    Mat c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    return c;
}

inline Mat operator+(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw invalid_input_error("Mat+: shape mismatch");
    Mat c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

inline Mat operator-(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw invalid_input_error("Mat-: shape mismatch");
    Mat c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

inline Mat operator*(double s, const Mat& a) {
    Mat c = a;
    for (double& x : c.data()) x *= s;
    return c;
}

inline Vec matvec(const Mat& a, const Vec& x) {
    if (a.cols() != x.size()) throw invalid_input_error("matvec: dimension mismatch");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

/// a^T x
inline Vec matvec_t(const Mat& a, const Vec& x) {
    if (a.rows() != x.size()) throw invalid_input_error("matvec_t: dimension mismatch");
    Vec y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
    }
    return y;
}

// ---- norms and small vector helpers ---------------------------------------

inline double max_abs(const Mat& a) {
    double m = 0.0;
    for (double x : a.data()) m = std::max(m, std::abs(x));
    return m;
}

inline double frobenius_norm(const Mat& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return std::sqrt(s);
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& a, const Vec& b) {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) throw invalid_input_error("cosine: zero vector");
    return dot(a, b) / (na * nb);
}

inline Vec& scale_in_place(Vec& v, double s) {
    for (double& x : v) x *= s;
    return v;
}

inline Vec normalized(Vec v) {
    const double n = norm2(v);
    if (n == 0.0) throw invalid_input_error("normalized: zero vector");
    return scale_in_place(v, 1.0 / n);
}

// ---- text fixture format ---------------------------------------------------
//
// First line "rows cols", then `rows` lines of whitespace-separated decimal
// floats. Values are printed with 17 significant digits so a round trip is
// bit-exact.

inline void write_mat(std::ostream& os, const Mat& m) {
    os << m.rows() << ' ' << m.cols() << '\n';
    char buf[64];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            os << buf << (j + 1 == m.cols() ? "" : " ");
        }
        os << '\n';
    }
}

inline Mat read_mat(std::istream& is) {
    std::size_t rows = 0, cols = 0;
    if (!(is >> rows >> cols)) throw invalid_input_error("read_mat: missing header");
    if (rows == 0 || cols == 0) throw invalid_input_error("read_mat: bad dimensions");
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        if (!(is >> m.data()[i])) throw invalid_input_error("read_mat: truncated data");
    }
    m.require_finite("read_mat");
    return m;
}

inline std::string mat_to_string(const Mat& m) {
    std::ostringstream os;
    write_mat(os, m);
    return os.str();
}

inline Mat mat_from_string(const std::string& s) {
    std::istringstream is(s);
    return read_mat(is);
}

} // namespace editleak
