#pragma once

#include <cstdint>
#include <vector>

#include "lpq/diff/tape.hpp"

namespace lpq::lfq {

inline constexpr double kProbEps = 1e-7;

struct CodebookConfig {
    int bits = 10;
    double temperature = 1.0;
    // Straight-through gradients pass where |z| <= ste_bound.
    double ste_bound = 1.0;

    std::int64_t vocab() const { return std::int64_t{1} << bits; }
    void validate() const;
};

struct GridDims {
    std::int64_t t = 1, h = 1, w = 1;
    std::int64_t positions() const { return t * h * w; }
    bool operator==(const GridDims&) const = default;
};

// Detached view of one quantized level. Tensors are [bits, t, h, w];
// indices are in raster order (t, then y, then x).
struct QuantizedField {
    diff::Tensor z;
    diff::Tensor hard_code;
    diff::Tensor bit_probs;
    std::vector<std::uint32_t> indices;
    GridDims grid;
    int bits = 0;
};

// Tape form of a quantized level; all vars are [bits, positions].
template <typename T>
struct QuantizedVar {
    diff::Var<T> z;
    diff::Var<T> hard;
    diff::Var<T> probs;
    // sign(z) as a constant, the commitment target.
    diff::Var<T> code;
    std::vector<std::uint32_t> indices;
    GridDims grid;

    QuantizedField detached() const;
};

enum class SignMode {
    // sign forward, straight-through backward
    StraightThrough,
    // hardtanh forward and backward; used by finite-difference checks
    Relaxed,
};

// z [bits, positions] on a tape.
template <typename T>
QuantizedVar<T> quantize(diff::Var<T> z, GridDims grid, const CodebookConfig& cfg,
                         SignMode mode = SignMode::StraightThrough);

// Pure form. z is [bits, t, h, w].
QuantizedField quantize_sign(const diff::Tensor& z, const CodebookConfig& cfg);

std::uint32_t code_to_index(const std::vector<int>& code);
std::vector<int> index_to_code(std::uint32_t index, int bits);
// Indices of each column of a [bits, positions] sign matrix.
template <typename T>
std::vector<std::uint32_t> column_indices(const diff::BasicTensor<T>& signs);

// Per-position factorized binary entropy in nats; probs is [bits, ...].
std::vector<double> factorized_entropy(const diff::Tensor& bit_probs);
double binary_entropy(double p);

double utilization(const std::vector<std::uint32_t>& indices, std::int64_t vocab);

}  // namespace lpq::lfq
