#pragma once

#include <stdexcept>
#include <string>

namespace skewlap {

// Inputs outside the mathematical domain of an operation (unsupported y,
// invalid tail index, skewness outside the attainable range, ...).
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Sparse Cholesky failed: matrix not positive definite.
struct CholeskyFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A Newton system became indefinite and the safeguard could not recover.
struct IndefiniteSystem : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModeSearchFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Latent dimension exceeds the configured dense whitening limit.
struct DenseLimitExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A density grid failed to capture enough probability mass.
struct GridTooNarrow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OutOfRange : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

} // namespace skewlap
