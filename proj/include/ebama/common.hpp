#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebama {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The CLI maps ConfigError to exit code 3 and every other
// ebama::Error to exit code 4; flag/usage problems exit with 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed caller input: bad shapes, empty sets, out-of-range indices.
class InputError : public Error {
public:
    using Error::Error;
};

// Missing or unusable external pieces: fixtures, adapters, model weights.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Numerically meaningless input, e.g. a zero-norm vector under cosine.
class DegenerateInputError : public InputError {
public:
    using InputError::InputError;
};

// Failure inside a running generation (non-finite gradients and the like).
class GuidanceError : public Error {
public:
    using Error::Error;
};

// FNV-1a over raw bytes; used for byte-stable fixture keys and trace digests.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(const std::string& s);

// Deterministic gaussian stream: mt19937_64 + Box-Muller. The standard
// normal_distribution is not pinned across library implementations; this is.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

    double next();

    // Fills `n` values into out (appended).
    void fill(std::vector<double>& out, std::size_t n);

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Collapses runs of whitespace to single spaces and trims the ends.
std::string normalize_whitespace(const std::string& s);

// Whitespace tokenization of a prompt (no punctuation splitting).
std::vector<std::string> split_words(const std::string& s);

}  // namespace ebama
