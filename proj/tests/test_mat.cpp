#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "editleak/mat.hpp"
#include "editleak/rng.hpp"

using namespace editleak;

TEST_CASE("Mat construction and validation") {
    Mat m(2, 3);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    for (double x : m.data()) REQUIRE(x == 0.0);

    REQUIRE_THROWS_AS(Mat(0, 3), invalid_input_error);
    REQUIRE_THROWS_AS(Mat(2, 2, Vec{1.0, 2.0}), invalid_input_error);

    Mat id = Mat::identity(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(id(i, j) == (i == j ? 1.0 : 0.0));

    Mat bad(1, 2, Vec{1.0, std::numeric_limits<double>::quiet_NaN()});
    REQUIRE_FALSE(bad.all_finite());
    REQUIRE_THROWS_AS(bad.require_finite("test"), invalid_input_error);
}

TEST_CASE("matrix arithmetic on hand cases") {
    Mat a(2, 3, Vec{1, 2, 3, 4, 5, 6});
    Mat b(3, 2, Vec{7, 8, 9, 10, 11, 12});
    Mat c = matmul(a, b);
    REQUIRE(c(0, 0) == 58.0);
    REQUIRE(c(0, 1) == 64.0);
    REQUIRE(c(1, 0) == 139.0);
    REQUIRE(c(1, 1) == 154.0);

    Mat at = transpose(a);
    REQUIRE(at.rows() == 3);
    REQUIRE(at(2, 1) == 6.0);

    // the fused forms agree with explicit transposition
    Rng rng(5);
    Mat x = Mat::random_normal(4, 3, rng);
    Mat y = Mat::random_normal(4, 2, rng);
    REQUIRE(max_abs(matmul_tn(x, y) - matmul(transpose(x), y)) == 0.0);
    Mat z = Mat::random_normal(5, 3, rng);
    REQUIRE(max_abs(matmul_nt(x, z) - matmul(x, transpose(z))) == 0.0);

    Vec v{1, 0, -1};
    Vec got = matvec(a, v);
    REQUIRE(got[0] == -2.0);
    REQUIRE(got[1] == -2.0);

    REQUIRE_THROWS_AS(matmul(a, a), invalid_input_error);
}

TEST_CASE("norms and vector helpers") {
    Mat m(2, 2, Vec{3, -4, 0, 1});
    REQUIRE(max_abs(m) == 4.0);
    REQUIRE(frobenius_norm(m) == Catch::Approx(std::sqrt(26.0)));

    Vec u{3, 4};
    REQUIRE(norm2(u) == 5.0);
    REQUIRE(cosine(Vec{1, 0}, Vec{0, 2}) == 0.0);
    REQUIRE(cosine(Vec{1, 1}, Vec{2, 2}) == Catch::Approx(1.0));
    REQUIRE_THROWS_AS(cosine(Vec{0, 0}, Vec{1, 0}), invalid_input_error);

    REQUIRE(normalized(Vec{0, 3})[1] == 1.0);
}

TEST_CASE("text fixture format round-trips bit-exactly") {
    Rng rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t r = 1 + rng.next_below(6);
        const std::size_t c = 1 + rng.next_below(6);
        Mat m = Mat::random_normal(r, c, rng, std::exp(3.0 * rng.next_normal()));
        const std::string text = mat_to_string(m);
        const Mat back = mat_from_string(text);
        REQUIRE(back.rows() == m.rows());
        REQUIRE(back.cols() == m.cols());
        for (std::size_t i = 0; i < m.data().size(); ++i) REQUIRE(back.data()[i] == m.data()[i]);
        // re-serialization is byte-identical
        REQUIRE(mat_to_string(back) == text);
    }
}

TEST_CASE("text fixture format rejects malformed input") {
    std::istringstream empty("");
    REQUIRE_THROWS_AS(read_mat(empty), invalid_input_error);
    std::istringstream truncated("2 2\n1.0 2.0\n3.0");
    REQUIRE_THROWS_AS(read_mat(truncated), invalid_input_error);
    std::istringstream zero_dim("0 2\n");
    REQUIRE_THROWS_AS(read_mat(zero_dim), invalid_input_error);
    std::istringstream nan_entry("1 2\nnan 1.0\n");
    REQUIRE_THROWS_AS(read_mat(nan_entry), invalid_input_error);
}

TEST_CASE("counter rng is deterministic and stream-independent") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    // derived streams do not depend on the parent's consumption
    Rng parent(9);
    Rng child_before = parent.derive(4);
    parent.next_u64();
    parent.next_u64();
    Rng child_after = parent.derive(4);
    for (int i = 0; i < 10; ++i) REQUIRE(child_before.next_u64() == child_after.next_u64());

    // unit draws live in (0, 1]
    Rng u(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.next_unit();
        REQUIRE(x > 0.0);
        REQUIRE(x <= 1.0);
    }

    // normals have roughly the right first two moments
    Rng n(2);
    double sum = 0.0, sq = 0.0;
    const int count = 20000;
    for (int i = 0; i < count; ++i) {
        const double x = n.next_normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / count) < 0.05);
    REQUIRE(std::abs(sq / count - 1.0) < 0.05);

    // sampling without replacement returns distinct in-range values
    Rng s(3);
    auto picks = s.sample_without_replacement(10, 10);
    std::sort(picks.begin(), picks.end());
    for (std::size_t i = 0; i < 10; ++i) REQUIRE(picks[i] == i);
}
