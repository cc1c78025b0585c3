#pragma once

#include <stdexcept>
#include <string>

namespace editleak {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed arguments: NaN/Inf entries, shape mismatches, ids out of range.
struct invalid_input_error : error {
    using error::error;
};

// A matrix that must be symmetric positive definite failed its Cholesky
// factorization (or an SPD-derived scalar came out nonpositive).
struct not_spd_error : error {
    using error::error;
};

// An inner square system (e.g. I + K^T C^-1 K) could not be solved.
struct singular_system_error : error {
    using error::error;
};

// rank(P K) < N while some projected key survives; the null-space editor
// cannot satisfy its full-rank precondition.
struct degenerate_projection_error : error {
    using error::error;
};

// Asked for more singular directions than the matrix numerically has.
struct insufficient_rank_error : error {
    using error::error;
};

// Repeated resampling failed to produce a full-rank edit batch.
struct degenerate_batch_error : error {
    using error::error;
};

// The camouflage system G + lambda*I is numerically singular.
struct camouflage_degenerate_error : error {
    using error::error;
};

// An alias/equivalent residual construction hit a singular inner matrix.
struct construction_failed_error : error {
    using error::error;
};

// A requested allocation exceeds the configured memory budget.
struct resource_error : error {
    using error::error;
};

// Experiment configuration could not be parsed or validated.
struct config_error : error {
    using error::error;
};

} // namespace editleak
