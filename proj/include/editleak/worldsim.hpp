#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "editleak/editors.hpp"
#include "editleak/linalg.hpp"
#include "editleak/mat.hpp"
#include "editleak/rng.hpp"

// Seeded synthetic stand-in for a language model. It produces key vectors
// with controllable subject invariance, next-token distributions before and
// after a weight edit, and synthesizes whole edit batches. Everything is a
// pure function of (seed, arguments).

namespace editleak::worldsim {

struct WorldConfig {
    std::size_t d_in = 128;
    std::size_t d_out = 96;
    std::size_t vocab = 512;
    std::size_t n_subjects = 512;
    std::size_t n_templates = 16;
    double eta = 0.05;  // template perturbation scale (dimensionless)
    double tau = 1.0;   // softmax temperature
    double beta = 10.0; // edit strength, multiplier on ||v||
    std::uint64_t seed = 0;
};

inline void validate(const WorldConfig& cfg) {
    if (cfg.d_in < 2 || cfg.d_out < 2 || cfg.vocab < 2 || cfg.n_subjects < 2 ||
        cfg.n_templates < 2)
        throw invalid_input_error("world config: all dimensions must be >= 2");
    if (cfg.eta < 0.0) throw invalid_input_error("world config: eta must be >= 0");
    if (cfg.tau <= 0.0) throw invalid_input_error("world config: tau must be > 0");
    if (cfg.beta < 0.0) throw invalid_input_error("world config: beta must be >= 0");
}

/// One affine template transform: k(s, t) = A_t e_s + b_t.
struct TemplateMap {
    Mat a;
    Vec b;
};

struct SyntheticWorld {
    WorldConfig cfg;
    Mat subject_embeddings; // d_in x n_subjects, unit columns
    std::vector<TemplateMap> template_maps;
    Mat base_weight; // d_out x d_in
    Mat unembedding; // vocab x d_out, unit rows
};

namespace detail {

// Template maps are A_t = I + eta*G_t with G_t a seeded skew-symmetric
// matrix scaled so that ||G_t e|| ~ PERTURB_GAIN for unit e in every
// dimension. Skew-symmetry makes e^T G_t e = 0, so the perturbation is
// orthogonal to the subject direction to first order: within-subject
// cosines concentrate near 1/(1 + (eta*gain)^2) with a very tight spread.
// At eta = 0.05 this puts them near 0.95 with a floor above 0.9 — high
// enough for subject invariance, low enough that the edited template stays
// distinguishable from its neighbors. A raw unit-variance Gaussian G_t
// would bury the subject signal entirely at desk dimensions.
inline constexpr double PERTURB_GAIN = 4.2;

// Base weight entries are N(0, WEIGHT_GAIN^2 / d_in): value vectors get norm
// ~2.6, which keeps pre-edit next-token distributions near-uniform while an
// edit at beta = 10 drives the target token dominant.
inline constexpr double WEIGHT_GAIN = 3.0;

inline constexpr std::size_t MEMORY_BUDGET_BYTES = 1ull << 30;

inline std::size_t world_bytes(const WorldConfig& c) {
    const std::size_t doubles = c.d_in * c.n_subjects +
                                c.n_templates * (c.d_in * c.d_in + c.d_in) +
                                c.d_out * c.d_in + c.vocab * c.d_out;
    return doubles * sizeof(double);
}

// Random skew-symmetric matrix with ||S e|| concentrated around 1 for unit
// e: S = (G - G^T)/sqrt(2) with G entries N(0, 1/n).
inline Mat random_skew(std::size_t n, Rng& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(n));
    const Mat g = Mat::random_normal(n, n, rng, sd);
    Mat s(n, n);
    const double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = (g(i, j) - g(j, i)) * inv_sqrt2;
    return s;
}

} // namespace detail

inline SyntheticWorld new_world(const WorldConfig& cfg) {
    validate(cfg);
    if (detail::world_bytes(cfg) > detail::MEMORY_BUDGET_BYTES)
        throw resource_error("new_world: configuration exceeds the memory budget");

    const Rng root(cfg.seed);
    SyntheticWorld w;
    w.cfg = cfg;

    Rng emb = root.derive(stream::world_embeddings);
    w.subject_embeddings = Mat(cfg.d_in, cfg.n_subjects);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        Vec e(cfg.d_in);
        for (double& x : e) x = emb.next_normal();
        w.subject_embeddings.set_column(s, normalized(std::move(e)));
    }

    Rng tmpl_root = root.derive(stream::world_templates);
    w.template_maps.reserve(cfg.n_templates);
    for (std::size_t t = 0; t < cfg.n_templates; ++t) {
        Rng tr = tmpl_root.derive(t);
        TemplateMap map;
        const Mat s = detail::random_skew(cfg.d_in, tr);
        map.a = Mat::identity(cfg.d_in);
        const double gain = cfg.eta * detail::PERTURB_GAIN;
        for (std::size_t i = 0; i < cfg.d_in; ++i)
            for (std::size_t j = 0; j < cfg.d_in; ++j) map.a(i, j) += gain * s(i, j);
        Vec u(cfg.d_in);
        for (double& x : u) x = tr.next_normal();
        map.b = normalized(std::move(u));
        scale_in_place(map.b, cfg.eta); // bias stays O(eta): a large common
                                        // shift would reintroduce first-order
                                        // cosine noise across subjects
        w.template_maps.push_back(std::move(map));
    }

    Rng wr = root.derive(stream::world_weight);
    const double w_sd = detail::WEIGHT_GAIN / std::sqrt(static_cast<double>(cfg.d_in));
    w.base_weight = Mat::random_normal(cfg.d_out, cfg.d_in, wr, w_sd);

    Rng ur = root.derive(stream::world_unembedding);
    w.unembedding = Mat(cfg.vocab, cfg.d_out);
    for (std::size_t v = 0; v < cfg.vocab; ++v) {
        Vec row(cfg.d_out);
        for (double& x : row) x = ur.next_normal();
        row = normalized(std::move(row));
        for (std::size_t j = 0; j < cfg.d_out; ++j) w.unembedding(v, j) = row[j];
    }
    return w;
}

/// Activation of subject s under template t: k = A_t e_s + b_t.
inline Vec extract_key(const SyntheticWorld& w, std::size_t subject_id, std::size_t template_id) {
    if (subject_id >= w.cfg.n_subjects) throw invalid_input_error("extract_key: subject out of range");
    if (template_id >= w.cfg.n_templates) throw invalid_input_error("extract_key: template out of range");
    const TemplateMap& t = w.template_maps[template_id];
    Vec k = matvec(t.a, w.subject_embeddings.column(subject_id));
    for (std::size_t i = 0; i < k.size(); ++i) k[i] += t.b[i];
    return k;
}

/// Preserved-knowledge keys: activations of fresh corpus phrases (random
/// unit directions pushed through a random template map), one per column.
/// These feed C and P. Corpus directions are distributed like subject
/// embeddings but are distinct from every candidate subject, so no candidate
/// is accidentally protected.
inline Mat sample_key_pool(const SyntheticWorld& w, std::size_t count, Rng rng) {
    if (count == 0) throw invalid_input_error("sample_key_pool: count must be >= 1");
    Mat pool(w.cfg.d_in, count);
    for (std::size_t j = 0; j < count; ++j) {
        Vec u(w.cfg.d_in);
        for (double& x : u) x = rng.next_normal();
        u = normalized(std::move(u));
        const std::size_t t = static_cast<std::size_t>(rng.next_below(w.cfg.n_templates));
        const TemplateMap& map = w.template_maps[t];
        Vec k = matvec(map.a, u);
        for (std::size_t i = 0; i < k.size(); ++i) k[i] += map.b[i];
        pool.set_column(j, k);
    }
    return pool;
}

/// Keys of `count` uniformly drawn (subject, template) pairs, one per
/// column. This is what an attacker can sample to estimate the covariance.
inline Mat sample_candidate_key_pool(const SyntheticWorld& w, std::size_t count, Rng rng) {
    if (count == 0) throw invalid_input_error("sample_candidate_key_pool: count must be >= 1");
    Mat pool(w.cfg.d_in, count);
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t s = static_cast<std::size_t>(rng.next_below(w.cfg.n_subjects));
        const std::size_t t = static_cast<std::size_t>(rng.next_below(w.cfg.n_templates));
        pool.set_column(j, extract_key(w, s, t));
    }
    return pool;
}

/// Next-token distribution softmax(U (W + dW) k / tau). Pass dw = nullptr
/// for the pre-edit model.
inline Vec next_token_dist(const SyntheticWorld& w, const editors::WeightUpdate* dw,
                           std::size_t subject_id, std::size_t template_id) {
    const Vec k = extract_key(w, subject_id, template_id);
    Vec v = matvec(w.base_weight, k);
    if (dw) {
        const Vec dv = matvec(dw->dw, k);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += dv[i];
    }
    Vec logits = matvec(w.unembedding, v);
    double max_logit = logits[0];
    for (double l : logits) max_logit = std::max(max_logit, l);
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp((l - max_logit) / w.cfg.tau);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

/// Shannon entropy in nats, with 0*ln(0) = 0.
inline double shannon_entropy(const Vec& p) {
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0)) throw invalid_input_error("shannon_entropy: negative or NaN probability");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw invalid_input_error("shannon_entropy: probabilities do not sum to 1");
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

/// An edit batch plus the weight update it produced.
struct SynthesizedEdit {
    editors::EditBatch batch;
    editors::WeightUpdate update;
};

/// Draw n subjects without replacement, one template and one distinct object
/// token each; residual column i is beta*||v_i|| times the target object's
/// unembedding direction, so the desired post-edit value is v_i + r_i.
/// Rank-deficient draws are resampled (up to 8 retries).
///
/// `batch_index` selects an independent RNG stream so concurrent trials stay
/// order-independent.
inline SynthesizedEdit synthesize_edit_batch(const SyntheticWorld& w, std::size_t n,
                                             editors::Method method,
                                             const editors::Covariance* c,
                                             const editors::Projector* p,
                                             std::uint64_t batch_index = 0) {
    if (n == 0 || n > w.cfg.n_subjects)
        throw invalid_input_error("synthesize_edit_batch: bad batch size");
    if (n > w.cfg.vocab) throw invalid_input_error("synthesize_edit_batch: more edits than tokens");
    if (method == editors::Method::ROME && n != 1)
        throw invalid_input_error("synthesize_edit_batch: ROME is single-edit only");

    Rng rng = Rng(w.cfg.seed).derive(stream::batch).derive(batch_index);
    for (int attempt = 0; attempt < 8; ++attempt) {
        const std::vector<std::size_t> subjects =
            rng.sample_without_replacement(w.cfg.n_subjects, n);
        std::vector<std::size_t> templates(n);
        for (auto& t : templates) t = static_cast<std::size_t>(rng.next_below(w.cfg.n_templates));
        const std::vector<std::size_t> objects =
            rng.sample_without_replacement(w.cfg.vocab, n);

        Mat k(w.cfg.d_in, n), r(w.cfg.d_out, n);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec ki = extract_key(w, subjects[i], templates[i]);
            const Vec vi = matvec(w.base_weight, ki);
            const double push = w.cfg.beta * norm2(vi);
            k.set_column(i, ki);
            Vec ri = w.unembedding.row(objects[i]); // unit row of the target object
            scale_in_place(ri, push);
            r.set_column(i, ri);
        }
        if (numerical_rank(k) != n) continue;
        if (max_abs(r) != 0.0 && numerical_rank(r) != n) continue;

        editors::EditBatch batch = editors::make_edit_batch(subjects, templates, objects,
                                                            std::move(k), std::move(r));
        editors::WeightUpdate update = editors::compute_update(method, batch, c, p);
        return SynthesizedEdit{std::move(batch), std::move(update)};
    }
    throw degenerate_batch_error("synthesize_edit_batch: could not draw a full-rank batch");
}

/// Pairwise-cosine diagnostics over the listed subjects and templates.
/// Entry (i, j) is the minimum cosine between keys of subject i and subject j
/// across template pairs (distinct templates on the diagonal, all pairs off
/// it). The diagonal is the subject-invariance figure; off-diagonal entries
/// measure cross-subject separation.
inline Mat invariance_report(const SyntheticWorld& w,
                             const std::vector<std::size_t>& subject_ids,
                             const std::vector<std::size_t>& template_ids) {
    if (subject_ids.empty() || template_ids.empty())
        throw invalid_input_error("invariance_report: empty id list");
    const std::size_t ns = subject_ids.size(), nt = template_ids.size();
    std::vector<std::vector<Vec>> keys(ns, std::vector<Vec>(nt));
    for (std::size_t i = 0; i < ns; ++i)
        for (std::size_t a = 0; a < nt; ++a)
            keys[i][a] = extract_key(w, subject_ids[i], template_ids[a]);

    Mat report(ns, ns);
    for (std::size_t i = 0; i < ns; ++i)
        for (std::size_t j = i; j < ns; ++j) {
            double lo = 1.0;
            for (std::size_t a = 0; a < nt; ++a)
                for (std::size_t b = 0; b < nt; ++b) {
                    if (i == j && a == b) continue;
                    lo = std::min(lo, cosine(keys[i][a], keys[j][b]));
                }
            report(i, j) = lo;
            report(j, i) = lo;
        }
    return report;
}

// ---- fixture serialization --------------------------------------------------

inline void save_world(std::ostream& os, const SyntheticWorld& w) {
    os << "editleak-world 1\n";
    os << "d_in " << w.cfg.d_in << "\nd_out " << w.cfg.d_out << "\nvocab " << w.cfg.vocab
       << "\nn_subjects " << w.cfg.n_subjects << "\nn_templates " << w.cfg.n_templates << '\n';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", w.cfg.eta);
    os << "eta " << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.17g", w.cfg.tau);
    os << "tau " << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.17g", w.cfg.beta);
    os << "beta " << buf << '\n';
    os << "seed " << w.cfg.seed << '\n';
    os << "subject_embeddings\n";
    write_mat(os, w.subject_embeddings);
    for (std::size_t t = 0; t < w.cfg.n_templates; ++t) {
        os << "template " << t << '\n';
        write_mat(os, w.template_maps[t].a);
        write_mat(os, Mat::from_column(w.template_maps[t].b));
    }
    os << "base_weight\n";
    write_mat(os, w.base_weight);
    os << "unembedding\n";
    write_mat(os, w.unembedding);
    os << "end\n";
}

inline SyntheticWorld load_world(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "editleak-world" || version != 1)
        throw invalid_input_error("load_world: bad header");
    SyntheticWorld w;
    auto expect = [&](const char* key) {
        std::string k;
        if (!(is >> k) || k != key) throw invalid_input_error(std::string("load_world: expected ") + key);
    };
    expect("d_in");
    is >> w.cfg.d_in;
    expect("d_out");
    is >> w.cfg.d_out;
    expect("vocab");
    is >> w.cfg.vocab;
    expect("n_subjects");
    is >> w.cfg.n_subjects;
    expect("n_templates");
    is >> w.cfg.n_templates;
    expect("eta");
    is >> w.cfg.eta;
    expect("tau");
    is >> w.cfg.tau;
    expect("beta");
    is >> w.cfg.beta;
    expect("seed");
    is >> w.cfg.seed;
    validate(w.cfg);
    expect("subject_embeddings");
    w.subject_embeddings = read_mat(is);
    for (std::size_t t = 0; t < w.cfg.n_templates; ++t) {
        expect("template");
        std::size_t idx = 0;
        is >> idx;
        if (idx != t) throw invalid_input_error("load_world: template index mismatch");
        TemplateMap map;
        map.a = read_mat(is);
        map.b = read_mat(is).column(0);
        w.template_maps.push_back(std::move(map));
    }
    expect("base_weight");
    w.base_weight = read_mat(is);
    expect("unembedding");
    w.unembedding = read_mat(is);
    expect("end");
    return w;
}

inline void save_batch(std::ostream& os, const editors::EditBatch& batch,
                       const editors::WeightUpdate& update) {
    os << "editleak-batch 1\n";
    os << "n " << batch.size() << '\n';
    os << "method " << editors::method_name(update.method) << '\n';
    auto ids = [&](const char* key, const std::vector<std::size_t>& v) {
        os << key;
        for (std::size_t x : v) os << ' ' << x;
        os << '\n';
    };
    ids("subjects", batch.subject_ids);
    ids("templates", batch.template_ids);
    ids("objects", batch.object_token_ids);
    os << "K\n";
    write_mat(os, batch.k);
    os << "R\n";
    write_mat(os, batch.r);
    os << "dW\n";
    write_mat(os, update.dw);
    os << "end\n";
}

} // namespace editleak::worldsim
