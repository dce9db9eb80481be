#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphfuse {

// Error taxonomy. The CLI maps ConfigError/UsageError/ShapeError to exit
// code 1 and DataError/NumericError to exit code 2.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (e.g. gradients).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Dims = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Dims& dims) {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

inline std::string dims_to_string(const Dims& dims) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ',';
        os << dims[i];
    }
    os << ')';
    return os.str();
}

// Row-major strides.
inline Dims strides_of(const Dims& dims) {
    Dims s(dims.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(dims.size()) - 2; i >= 0; --i) {
        s[i] = s[i + 1] * dims[i + 1];
    }
    return s;
}

// Sink for non-fatal diagnostics (loaders, graph checks). Null means drop.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, const std::string& msg) {
    if (sink) sink->push_back(msg);
}

// SplitMix64: stable stream derivation for seeding sub-generators.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ull + h;
    h = splitmix64(s);
    s ^= b * 0xd1b54a32d192ed03ull + h;
    return splitmix64(s);
}

// Deterministic uniform draws (std::uniform_real_distribution is
// implementation defined; this is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bull) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

private:
    std::uint64_t state_;
};

}  // namespace graphfuse
