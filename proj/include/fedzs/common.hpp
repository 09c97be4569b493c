#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace fedzs {

// Invalid configuration (scenario fields, dimensions, schedules).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed runtime input (shape mismatches, empty batches, bad targets).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A label id that the receiving model or table does not know.
struct LabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Text-format violation; message names the offending line.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Last-layer weights unusable for similarity computation (zero column).
struct DegenerateWeightsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during impression descent; message names the sample.
struct SynthesisDivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Derives an independent RNG seed from a master seed and a tag path
// (purpose, iteration, user, ...). Call sites that tag by label/user get
// streams that do not shift when unrelated parts of a scenario change.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
    std::uint64_t state = master;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t tag : tags) {
        state ^= tag + 0x9E3779B97F4A7C15ull + (out << 6) + (out >> 2);
        out = splitmix64(state);
    }
    return out;
}

}  // namespace fedzs
