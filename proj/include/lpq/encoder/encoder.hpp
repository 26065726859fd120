#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpq/diff/ops.hpp"
#include "lpq/fixtures/video.hpp"
#include "lpq/lfq/codebook.hpp"
#include "lpq/params.hpp"

namespace lpq::encoder {

struct EncoderConfig {
    int levels = 4;
    int in_channels = 3;
    // Channel count of each stage; the last entry repeats if fewer than levels.
    std::vector<int> channels{16, 16, 16, 16};
    // 1-based stages that halve the temporal extent.
    std::vector<int> temporal_halving_stages{2, 4};
    int adapter_rank = 16;
    double adapter_alpha = 32.0;
    int decoder_channels = 16;
    // false: decoder reads level 1 only.
    bool decoder_all_levels = true;

    int stage_channels(int level) const;  // level is 1-based
    bool halves_time(int level) const;
    void validate() const;
};

// Grid of each level for a given input, level 1 first.
std::vector<lfq::GridDims> level_grids(const EncoderConfig& cfg, const fixtures::VideoDims& dims);
void validate_input(const EncoderConfig& cfg, const fixtures::VideoDims& dims);

// Registers base (frozen), adapter (trainable), decoder (trainable) and
// reference (frozen, own seed) parameters. Base and reference biases start at
// zero, adapter B factors start at zero.
void init_encoder(ParamStore& store, const EncoderConfig& cfg, int bits, std::uint64_t seed,
                  std::uint64_t reference_seed);

std::string stage_weight(int level);
std::string stage_bias(int level);
std::string adapter_a(int level);
std::string adapter_b(int level);
std::string reference_weight(int level);
std::string reference_bias(int level);

// y = W_base x + (alpha / r) B (A x) for matrices W_base [out, in],
// A [r, in], B [out, r], x [in, n].
template <typename T>
diff::Var<T> apply_adapter(diff::Var<T> w_base, diff::Var<T> a, diff::Var<T> b, T alpha, diff::Var<T> x);

// W_base + (alpha / r) reshape(B A) for a conv weight [out, in, 3, 3, 3].
template <typename T>
diff::Var<T> adapted_conv_weight(diff::Var<T> w_base, diff::Var<T> a, diff::Var<T> b, T alpha);

// x is [C, T, H, W]; returns F^(1..L), each [C_l, T_l, H_l, W_l].
template <typename T>
std::vector<diff::Var<T>> encode(diff::Var<T> x, const Binding<T>& params, const EncoderConfig& cfg);

// Deepest-level features of the frozen reference encoder.
template <typename T>
diff::Var<T> reference_features(diff::Var<T> x, const Binding<T>& params, const EncoderConfig& cfg);

// codes[l] is [bits, positions of level l+1]; returns [in_channels, T, H, W].
template <typename T>
diff::Var<T> decode(const std::vector<diff::Var<T>>& codes, const std::vector<lfq::GridDims>& grids,
                    const Binding<T>& params, const EncoderConfig& cfg, const fixtures::VideoDims& dims);

// Evaluation-time output range.
diff::Tensor clamp_unit(const diff::Tensor& x);

// Stage shapes and parameter inventory for the weight container.
nlohmann::json manifest(const EncoderConfig& cfg, const ParamStore& store);

}  // namespace lpq::encoder
