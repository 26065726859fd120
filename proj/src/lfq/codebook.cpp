#include "lpq/lfq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lpq/diff/ops.hpp"

namespace lpq::lfq {

void CodebookConfig::validate() const {
    require(bits >= 1 && bits <= 24, "codebook bits must be in [1, 24]");
    require(temperature > 0, "codebook temperature must be positive");
    require(ste_bound > 0, "straight-through bound must be positive");
}

std::uint32_t code_to_index(const std::vector<int>& code) {
    require(!code.empty() && code.size() <= 32, "code length must be in [1, 32]");
    std::uint32_t idx = 0;
    for (int c : code) {
        require(c == 1 || c == -1, "code entries must be -1 or +1");
        idx = (idx << 1) | static_cast<std::uint32_t>(c == 1);
    }
    return idx;
}

std::vector<int> index_to_code(std::uint32_t index, int bits) {
    require(bits >= 1 && bits <= 32, "code length must be in [1, 32]");
    require(bits == 32 || index < (std::uint64_t{1} << bits), "index out of range for code length");
    std::vector<int> code(static_cast<std::size_t>(bits));
    for (int i = 0; i < bits; ++i) code[static_cast<std::size_t>(i)] = ((index >> (bits - 1 - i)) & 1u) ? 1 : -1;
    return code;
}

template <typename T>
std::vector<std::uint32_t> column_indices(const diff::BasicTensor<T>& signs) {
    require(signs.rank() >= 2, "column_indices: expected [bits, positions...]");
    const int bits = static_cast<int>(signs.dim(0));
    const std::int64_t n = signs.size() / bits;
    std::vector<std::uint32_t> out(static_cast<std::size_t>(n), 0);
    for (int b = 0; b < bits; ++b)
        for (std::int64_t p = 0; p < n; ++p) {
            const T v = signs[b * n + p];
            require(v == T(1) || v == T(-1), "column_indices: entries must be -1 or +1");
            out[static_cast<std::size_t>(p)] = (out[static_cast<std::size_t>(p)] << 1) | static_cast<std::uint32_t>(v == T(1));
        }
    return out;
}
template std::vector<std::uint32_t> column_indices(const diff::BasicTensor<float>&);
template std::vector<std::uint32_t> column_indices(const diff::BasicTensor<double>&);

namespace {

template <typename T>
diff::BasicTensor<T> signs_of(const diff::BasicTensor<T>& z) {
    diff::BasicTensor<T> s(z.dims());
    for (std::int64_t i = 0; i < z.size(); ++i) s[i] = z[i] >= T(0) ? T(1) : T(-1);
    return s;
}

diff::Tensor as_grid(const diff::Tensor& m, int bits, GridDims g) {
    return m.reshaped({bits, g.t, g.h, g.w});
}

}  // namespace

template <typename T>
QuantizedField QuantizedVar<T>::detached() const {
    const int bits = static_cast<int>(z.dim(0));
    QuantizedField f;
    f.z = as_grid(z.value().template cast<float>(), bits, grid);
    f.hard_code = as_grid(code.value().template cast<float>(), bits, grid);
    f.bit_probs = as_grid(probs.value().template cast<float>(), bits, grid);
    f.indices = indices;
    f.grid = grid;
    f.bits = bits;
    return f;
}

template <typename T>
QuantizedVar<T> quantize(diff::Var<T> z, GridDims grid, const CodebookConfig& cfg, SignMode mode) {
    cfg.validate();
    require(z.dims().size() == 2, "quantize: expected [bits, positions]");
    require(z.dim(0) == cfg.bits, "quantize: channel count " + std::to_string(z.dim(0)) + " != bits " +
                                      std::to_string(cfg.bits));
    require(z.dim(1) == grid.positions(), "quantize: position count does not match grid");
    QuantizedVar<T> q;
    q.z = z;
    q.grid = grid;
    const T bound = static_cast<T>(cfg.ste_bound);
    q.hard = mode == SignMode::StraightThrough ? diff::ste_sign(z, bound) : diff::hardtanh(z, bound);
    q.code = z.tape->constant(signs_of(z.value()));
    q.probs = diff::sigmoid(diff::scale(z, static_cast<T>(1.0 / cfg.temperature)));
    q.indices = column_indices(q.code.value());
    return q;
}

template QuantizedVar<float> quantize(diff::Var<float>, GridDims, const CodebookConfig&, SignMode);
template QuantizedVar<double> quantize(diff::Var<double>, GridDims, const CodebookConfig&, SignMode);
template struct QuantizedVar<float>;
template struct QuantizedVar<double>;

QuantizedField quantize_sign(const diff::Tensor& z, const CodebookConfig& cfg) {
    cfg.validate();
    require(z.rank() == 4, "quantize_sign: expected [bits, t, h, w]");
    require(z.dim(0) == cfg.bits, "quantize_sign: channel count " + std::to_string(z.dim(0)) + " != bits " +
                                      std::to_string(cfg.bits));
    QuantizedField f;
    f.bits = cfg.bits;
    f.grid = {z.dim(1), z.dim(2), z.dim(3)};
    f.z = z;
    f.hard_code = signs_of(z);
    f.bit_probs = diff::Tensor(z.dims());
    for (std::int64_t i = 0; i < z.size(); ++i)
        f.bit_probs[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(z[i]) / cfg.temperature)));
    f.indices = column_indices(f.hard_code);
    return f;
}

double binary_entropy(double p) {
    p = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
}

std::vector<double> factorized_entropy(const diff::Tensor& bit_probs) {
    require(bit_probs.rank() >= 1, "factorized_entropy: expected [bits, ...]");
    const std::int64_t bits = bit_probs.dim(0);
    const std::int64_t n = bit_probs.size() / bits;
    std::vector<double> h(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t b = 0; b < bits; ++b)
        for (std::int64_t p = 0; p < n; ++p) h[static_cast<std::size_t>(p)] += binary_entropy(bit_probs[b * n + p]);
    return h;
}

double utilization(const std::vector<std::uint32_t>& indices, std::int64_t vocab) {
    require(vocab >= 1, "utilization: vocabulary must be non-empty");
    std::unordered_set<std::uint32_t> seen;
    for (auto i : indices) {
        require(static_cast<std::int64_t>(i) < vocab, "utilization: index " + std::to_string(i) + " out of range");
        seen.insert(i);
    }
    return static_cast<double>(seen.size()) / static_cast<double>(vocab);
}

}  // namespace lpq::lfq
