#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "editleak/camouflage.hpp"
#include "editleak/kster.hpp"

using namespace editleak;
using namespace editleak::editors;
using namespace editleak::worldsim;
using namespace editleak::camouflage;

namespace {

WorldConfig small_config(std::uint64_t seed) {
    WorldConfig cfg;
    cfg.d_in = 64;
    cfg.d_out = 48;
    cfg.vocab = 256;
    cfg.n_subjects = 128;
    cfg.n_templates = 8;
    cfg.seed = seed;
    return cfg;
}

Covariance world_cov(const SyntheticWorld& w) {
    Mat kp = 0.38 * sample_key_pool(w, 8 * w.cfg.d_in, Rng(w.cfg.seed).derive(stream::cov_pool));
    return covariance_from_keys(kp, default_covariance_ridge(kp));
}

Projector world_proj(const SyntheticWorld& w) {
    const Mat kp = sample_key_pool(w, w.cfg.d_in / 4, Rng(w.cfg.seed).derive(stream::proj_pool));
    return nullspace_projector(kp);
}

std::vector<std::size_t> pick_decoys(const SyntheticWorld& w,
                                     const std::vector<std::size_t>& edited, std::size_t n,
                                     Rng rng) {
    std::vector<std::size_t> out;
    while (out.size() < n) {
        const std::size_t cand = rng.next_below(w.cfg.n_subjects);
        const bool taken = std::find(edited.begin(), edited.end(), cand) != edited.end() ||
                           std::find(out.begin(), out.end(), cand) != out.end();
        if (!taken) out.push_back(cand);
    }
    return out;
}

double rel_gap(const Mat& a, const Mat& b) { return max_abs(a - b) / (1.0 + max_abs(a)); }

struct Scenario {
    SyntheticWorld world;
    Covariance c;
    Projector p;
    SynthesizedEdit se;
    std::vector<std::size_t> decoys;
    Mat k_decoy;

    const Covariance* cov() const { return se.update.method == Method::ALPHAEDIT ? nullptr : &c; }
    const Projector* proj() const { return se.update.method == Method::ALPHAEDIT ? &p : nullptr; }
};

Scenario make_scenario(Method m, std::uint64_t seed, std::size_t n) {
    const SyntheticWorld w = new_world(small_config(seed));
    Covariance c = world_cov(w);
    Projector p = world_proj(w);
    SynthesizedEdit se = synthesize_edit_batch(w, n, m, &c, &p, 0);
    auto decoys = pick_decoys(w, se.batch.subject_ids, n, Rng(seed).derive(stream::decoys));
    Mat kd = build_decoy_keys(w, decoys, 0, se.batch.subject_ids);
    return Scenario{std::move(w), std::move(c), std::move(p), std::move(se), std::move(decoys),
                    std::move(kd)};
}

} // namespace

TEST_CASE("build_decoy_keys") {
    SECTION("eta = 0: the decoy key is the decoy embedding") {
        WorldConfig cfg = small_config(23);
        cfg.eta = 0.0;
        const SyntheticWorld w = new_world(cfg);
        const Mat kd = build_decoy_keys(w, {7}, 0, {1, 2});
        const Vec e = w.subject_embeddings.column(7);
        for (std::size_t i = 0; i < e.size(); ++i) REQUIRE(kd(i, 0) == Catch::Approx(e[i]).margin(1e-15));
    }
    SECTION("deterministic across calls") {
        const SyntheticWorld w = new_world(small_config(23));
        const Mat a = build_decoy_keys(w, {4, 9, 11}, 2, {1});
        const Mat b = build_decoy_keys(w, {4, 9, 11}, 2, {1});
        REQUIRE(a.data() == b.data());
    }
    SECTION("eight decoys span eight dimensions") {
        const SyntheticWorld w = new_world(small_config(23));
        std::vector<std::size_t> ids{3, 10, 20, 31, 44, 57, 68, 90};
        const Mat kd = build_decoy_keys(w, ids, 0, {0, 1});
        REQUIRE(numerical_rank(kd) == 8);
    }
    SECTION("decoys overlapping the edited set are rejected") {
        const SyntheticWorld w = new_world(small_config(23));
        REQUIRE_THROWS_AS(build_decoy_keys(w, {4, 5}, 0, {5, 9}), invalid_input_error);
    }
}

TEST_CASE("aggregate_camouflage_keys") {
    SECTION("alpha = 0 returns K unchanged") {
        Rng rng(1);
        const Mat k = Mat::random_normal(6, 3, rng);
        const Mat kd = Mat::random_normal(6, 3, rng);
        REQUIRE(max_abs(aggregate_camouflage_keys(k, kd, 0.0) - k) == 0.0);
    }
    SECTION("decoy rescaling cancels out of the norm ratio") {
        Rng rng(2);
        const Mat k = Mat::random_normal(6, 3, rng);
        const Mat kd = Mat::random_normal(6, 3, rng);
        const Mat a = aggregate_camouflage_keys(k, kd, 1.5);
        const Mat b = aggregate_camouflage_keys(k, 7.0 * kd, 1.5);
        REQUIRE(rel_gap(a, b) <= 1e-12);
    }
    SECTION("hand-computed 2x2 fixture") {
        // K = I2, K_decoy = [[0,0],[1,0]]: both have spectral norm 1, so
        // K~ = K + K_decoy at alpha = 1
        const Mat k = Mat::identity(2);
        Mat kd(2, 2, Vec{0, 0, 1, 0});
        const Mat kt = aggregate_camouflage_keys(k, kd, 1.0);
        REQUIRE(kt(0, 0) == Catch::Approx(1.0));
        REQUIRE(kt(0, 1) == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(kt(1, 0) == Catch::Approx(1.0));
        REQUIRE(kt(1, 1) == Catch::Approx(1.0));
    }
    SECTION("zero decoys with positive alpha are rejected") {
        const Mat k = Mat::identity(2);
        REQUIRE_THROWS_AS(aggregate_camouflage_keys(k, Mat::zeros(2, 2), 1.0),
                          invalid_input_error);
        REQUIRE_NOTHROW(aggregate_camouflage_keys(k, Mat::zeros(2, 2), 0.0));
    }
}

TEST_CASE("defense_update consistency and degeneration") {
    for (Method m : {Method::ROME, Method::MEMIT, Method::ALPHAEDIT}) {
        DYNAMIC_SECTION("method " << method_name(m)) {
            const std::size_t n = m == Method::ROME ? 1 : 6;
            Scenario sc = make_scenario(m, 23, n);
            DefenseParams params;
            params.decoy_subject_ids = sc.decoys;

            for (double alpha : {0.0, 1.0, 3.0, 5.0}) {
                params.alpha = alpha;
                const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, alpha);
                const WeightUpdate def = defense_update(m, sc.se.update, sc.se.batch, kt, sc.cov(),
                                                        sc.proj(), params);
                // the defended update acts identically on the true keys
                const Mat lhs = matmul(def.dw, sc.se.batch.k);
                const Mat rhs = matmul(sc.se.update.dw, sc.se.batch.k);
                REQUIRE(max_abs(lhs - rhs) <= 1e-6 * (1.0 + max_abs(rhs)));
            }

            // vanishing alpha restores the original update monotonically
            params.alpha = 1e-6;
            double prev = std::numeric_limits<double>::infinity();
            for (double alpha : {1e-2, 1e-4, 1e-6}) {
                const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, alpha);
                params.alpha = alpha;
                const WeightUpdate def = defense_update(m, sc.se.update, sc.se.batch, kt, sc.cov(),
                                                        sc.proj(), params);
                const double witness = rel_gap(sc.se.update.dw, def.dw);
                REQUIRE(witness <= prev);
                prev = witness;
                if (alpha == 1e-6) REQUIRE(witness <= 1e-4);
            }
        }
    }
}

TEST_CASE("rome defense keeps the exact edit") {
    Scenario sc = make_scenario(Method::ROME, 31, 1);
    DefenseParams params;
    params.alpha = 5.0;
    params.decoy_subject_ids = sc.decoys;
    const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 5.0);
    const WeightUpdate def =
        defense_update(Method::ROME, sc.se.update, sc.se.batch, kt, &sc.c, nullptr, params);
    const Vec k_star = sc.se.batch.k.column(0);
    const Vec a = matvec(def.dw, k_star);
    const Vec b = matvec(sc.se.update.dw, k_star);
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    REQUIRE(err <= 1e-8 * (1.0 + norm2(b)));
}

TEST_CASE("rome defense coincides with the batched matrix form at N = 1") {
    // the scalar form dW k (k~^T C^-1 k)^-1 k~^T C^-1 is the N = 1 case of
    // the matrix formula; both implementations must agree
    Scenario sc = make_scenario(Method::ROME, 41, 1);
    DefenseParams params;
    params.alpha = 3.0;
    params.lambda = 0.0; // exact comparison without the ridge
    params.decoy_subject_ids = sc.decoys;
    const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 3.0);

    const WeightUpdate scalar_form =
        defense_update(Method::ROME, sc.se.update, sc.se.batch, kt, &sc.c, nullptr, params);
    const WeightUpdate matrix_form =
        defense_update(Method::MEMIT, sc.se.update, sc.se.batch, kt, &sc.c, nullptr, params);
    REQUIRE(rel_gap(scalar_form.dw, matrix_form.dw) <= 1e-10);
}

TEST_CASE("defended update misdirects the spectral attack") {
    const SyntheticWorld w = new_world(small_config(23));
    const Covariance c = world_cov(w);
    const SynthesizedEdit se = synthesize_edit_batch(w, 8, Method::MEMIT, &c, nullptr, 0);
    const auto decoys = pick_decoys(w, se.batch.subject_ids, 8, Rng(23).derive(stream::decoys));
    const Mat kd = build_decoy_keys(w, decoys, 0, se.batch.subject_ids);
    DefenseParams params;
    params.alpha = 5.0;
    params.decoy_subject_ids = decoys;
    const Mat kt = aggregate_camouflage_keys(se.batch.k, kd, 5.0);
    const WeightUpdate def =
        defense_update(Method::MEMIT, se.update, se.batch, kt, &c, nullptr, params);

    const Mat v = kster::recover_key_space(def, &c, 8);
    const Mat kt_basis = orthonormal_range_basis(kt, 1e-10);
    const Mat k_basis = orthonormal_range_basis(se.batch.k, 1e-10);
    REQUIRE(max_principal_angle(v, kt_basis) <= 1e-4);
    REQUIRE(max_principal_angle(v, k_basis) >= 0.3);
}

TEST_CASE("equivalent_residual") {
    SECTION("alpha = 0 returns the original residual") {
        for (Method m : {Method::ROME, Method::MEMIT, Method::ALPHAEDIT}) {
            Scenario sc = make_scenario(m, 31, m == Method::ROME ? 1 : 5);
            const Mat rp = equivalent_residual(m, sc.se.batch, sc.se.batch.k, sc.cov(), sc.proj());
            REQUIRE(rel_gap(sc.se.batch.r, rp) <= 1e-8);
        }
    }
    SECTION("rome formula transcription") {
        Scenario sc = make_scenario(Method::ROME, 31, 1);
        const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 3.0);
        // r' = (k~^T C^-1 k~ / k~^T C^-1 k) r
        const Vec ckt = solve_spd(sc.c.c, kt.column(0));
        const double num = dot(kt.column(0), ckt);
        const double den = dot(sc.se.batch.k.column(0), ckt);
        const Mat rp = equivalent_residual(Method::ROME, sc.se.batch, kt, &sc.c, nullptr);
        REQUIRE(rel_gap((num / den) * sc.se.batch.r, rp) <= 1e-10);
    }
    SECTION("feeding (K~, R') to the original editor reproduces the defended update") {
        for (Method m : {Method::ROME, Method::MEMIT, Method::ALPHAEDIT}) {
            const std::uint64_t seed = m == Method::ROME ? 31 : 23;
            const std::size_t n = m == Method::ROME ? 1 : 8;
            Scenario sc = make_scenario(m, seed, n);
            DefenseParams params;
            params.alpha = 3.0;
            params.decoy_subject_ids = sc.decoys;
            const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 3.0);
            const WeightUpdate def = defense_update(m, sc.se.update, sc.se.batch, kt, sc.cov(),
                                                    sc.proj(), params);
            const Mat rp = equivalent_residual(m, sc.se.batch, kt, sc.cov(), sc.proj());
            const EditBatch alias =
                make_edit_batch(sc.se.batch.subject_ids, sc.se.batch.template_ids,
                                sc.se.batch.object_token_ids, kt, rp);
            const WeightUpdate redone = compute_update(m, alias, sc.cov(), sc.proj());
            REQUIRE(rel_gap(def.dw, redone.dw) <= 1e-6);
        }
    }
}

TEST_CASE("alias_residual") {
    SECTION("K' = K is the identity alias") {
        for (Method m : {Method::MEMIT, Method::ALPHAEDIT}) {
            Scenario sc = make_scenario(m, 23, 5);
            const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 2.0);
            const Mat rpp =
                alias_residual(m, sc.se.batch, sc.se.batch.k, kt, sc.cov(), sc.proj());
            REQUIRE(rel_gap(sc.se.batch.r, rpp) <= 1e-8);
        }
    }
    SECTION("a random K' explains the defended update") {
        for (Method m : {Method::ROME, Method::MEMIT, Method::ALPHAEDIT}) {
            const std::uint64_t seed = m == Method::ROME ? 31 : 23;
            const std::size_t n = m == Method::ROME ? 1 : 8;
            Scenario sc = make_scenario(m, seed, n);
            DefenseParams params;
            params.alpha = 3.0;
            params.decoy_subject_ids = sc.decoys;
            const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 3.0);
            const WeightUpdate def = defense_update(m, sc.se.update, sc.se.batch, kt, sc.cov(),
                                                    sc.proj(), params);
            Rng kr(41);
            const double sd = 1.0 / std::sqrt(double(sc.world.cfg.d_in));
            const Mat k_prime = Mat::random_normal(sc.world.cfg.d_in, n, kr, sd);
            const Mat rpp = alias_residual(m, sc.se.batch, k_prime, kt, sc.cov(), sc.proj());
            const EditBatch alias =
                make_edit_batch(sc.se.batch.subject_ids, sc.se.batch.template_ids,
                                sc.se.batch.object_token_ids, k_prime, rpp);
            const WeightUpdate dw_alias = compute_update(m, alias, sc.cov(), sc.proj());
            const WeightUpdate def_alias =
                defense_update(m, dw_alias, alias, kt, sc.cov(), sc.proj(), params);
            REQUIRE(rel_gap(def.dw, def_alias.dw) <= 1e-6);
        }
    }
    SECTION("twenty random aliases all construct") {
        Scenario sc = make_scenario(Method::MEMIT, 23, 6);
        const Mat kt = aggregate_camouflage_keys(sc.se.batch.k, sc.k_decoy, 3.0);
        Rng root(41);
        for (int i = 0; i < 20; ++i) {
            Rng kr = root.derive(i);
            const double sd = 1.0 / std::sqrt(double(sc.world.cfg.d_in));
            const Mat k_prime = Mat::random_normal(sc.world.cfg.d_in, 6, kr, sd);
            REQUIRE_NOTHROW(alias_residual(Method::MEMIT, sc.se.batch, k_prime, kt, &sc.c, nullptr));
        }
    }
}
