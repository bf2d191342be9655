#pragma once

#include <stdexcept>
#include <string>

namespace latent_bki {

// Malformed arguments: wrong dimensions, non-finite values, out-of-range configs.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A voxel does not hold enough evidence (lambda) for the requested quantity.
class InsufficientEvidence : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// The expected feature has zero norm, so no cosine score exists.
class Undecodable : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Unreadable, truncated or inconsistent files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace latent_bki
