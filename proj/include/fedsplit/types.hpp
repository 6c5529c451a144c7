#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>

namespace fedsplit {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Dimension or argument mismatches between tensors.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller-supplied value outside its legal range.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// An internal protocol or state-machine precondition was violated.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Purpose tags for deriving independent RNG substreams. Every stochastic
// component draws from its own stream keyed by (master seed, tag, ids...),
// so execution order and strategy flags cannot perturb unrelated draws.
enum class Stream : std::uint64_t {
    data_gen = 1,
    partition,
    train_test_split,
    init_repr,
    init_head,
    participation,
    batch_head,
    batch_repr,
    batch_joint,
    synth_train,
    synth_alpha,
    labelwise_data,
    finetune,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t p : path) s = splitmix64(s ^ (p * 0x9E3779B97F4A7C15ULL));
    return s;
}

inline std::mt19937_64 substream(std::uint64_t master, Stream tag,
                                 std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t s = derive_seed(master, {static_cast<std::uint64_t>(tag)});
    for (std::uint64_t p : path) s = splitmix64(s ^ (p * 0x9E3779B97F4A7C15ULL));
    return std::mt19937_64(s);
}

}  // namespace fedsplit
