#include "lpq/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace lpq::encoder {

using diff::Var;

int EncoderConfig::stage_channels(int level) const {
    require(level >= 1 && level <= levels, "stage level out of range");
    require(!channels.empty(), "encoder channels must not be empty");
    return channels[static_cast<std::size_t>(std::min<int>(level, static_cast<int>(channels.size())) - 1)];
}

bool EncoderConfig::halves_time(int level) const {
    return std::find(temporal_halving_stages.begin(), temporal_halving_stages.end(), level) !=
           temporal_halving_stages.end();
}

void EncoderConfig::validate() const {
    require(levels >= 1 && levels <= 8, "levels must be in [1, 8]");
    require(in_channels >= 1, "in_channels must be positive");
    require(!channels.empty(), "encoder channels must not be empty");
    for (int c : channels) require(c >= 1, "encoder channels must be positive");
    require(adapter_rank >= 1, "adapter rank must be positive");
    require(adapter_alpha >= 0, "adapter alpha must be non-negative");
    require(decoder_channels >= 1, "decoder channels must be positive");
}

std::vector<lfq::GridDims> level_grids(const EncoderConfig& cfg, const fixtures::VideoDims& dims) {
    validate_input(cfg, dims);
    std::vector<lfq::GridDims> out;
    std::int64_t t = dims.frames, h = dims.height, w = dims.width;
    for (int l = 1; l <= cfg.levels; ++l) {
        if (cfg.halves_time(l)) t /= 2;
        h /= 2;
        w /= 2;
        out.push_back({t, h, w});
    }
    return out;
}

void validate_input(const EncoderConfig& cfg, const fixtures::VideoDims& dims) {
    cfg.validate();
    require(dims.channels == cfg.in_channels, "video has " + std::to_string(dims.channels) +
                                                  " channels, encoder expects " + std::to_string(cfg.in_channels));
    const std::int64_t s = std::int64_t{1} << cfg.levels;
    require(dims.height % s == 0 && dims.width % s == 0,
            "spatial extents must be divisible by 2^L = " + std::to_string(s));
    std::int64_t tf = 1;
    for (int l = 1; l <= cfg.levels; ++l)
        if (cfg.halves_time(l)) tf *= 2;
    require(dims.frames % tf == 0, "frame count must be divisible by the temporal factor " + std::to_string(tf));
}

std::string stage_weight(int l) { return "enc." + std::to_string(l) + ".w"; }
std::string stage_bias(int l) { return "enc." + std::to_string(l) + ".b"; }
std::string adapter_a(int l) { return "enc." + std::to_string(l) + ".lora_a"; }
std::string adapter_b(int l) { return "enc." + std::to_string(l) + ".lora_b"; }
std::string reference_weight(int l) { return "ref." + std::to_string(l) + ".w"; }
std::string reference_bias(int l) { return "ref." + std::to_string(l) + ".b"; }

namespace {

std::string lat_w(int l) { return "dec.lat." + std::to_string(l) + ".w"; }
std::string lat_b(int l) { return "dec.lat." + std::to_string(l) + ".b"; }

}  // namespace

void init_encoder(ParamStore& store, const EncoderConfig& cfg, int bits, std::uint64_t seed,
                  std::uint64_t reference_seed) {
    cfg.validate();
    require(seed != reference_seed, "reference encoder needs a seed distinct from the encoder seed");
    int cin = cfg.in_channels;
    for (int l = 1; l <= cfg.levels; ++l) {
        const int cout = cfg.stage_channels(l);
        const std::int64_t fan_in = std::int64_t{cin} * 27;
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        store.add(stage_weight(l), init_normal({cout, cin, 3, 3, 3}, s, seed, stage_weight(l)), false);
        store.add(stage_bias(l), init_zeros({cout}), false);
        store.add(adapter_a(l), init_normal({cfg.adapter_rank, fan_in}, s, seed, adapter_a(l)), true);
        store.add(adapter_b(l), init_zeros({cout, cfg.adapter_rank}), true);
        store.add(reference_weight(l), init_normal({cout, cin, 3, 3, 3}, s, reference_seed, reference_weight(l)), false);
        store.add(reference_bias(l), init_zeros({cout}), false);
        cin = cout;
    }
    const int d = cfg.decoder_channels;
    for (int l = 1; l <= cfg.levels; ++l) {
        store.add(lat_w(l), init_normal({d, bits}, 1.0 / std::sqrt(double(bits)), seed, lat_w(l)), true);
        store.add(lat_b(l), init_zeros({d}), true);
    }
    const double sm = 1.0 / std::sqrt(27.0 * d);
    store.add("dec.mid.w", init_normal({d, d, 3, 3, 3}, sm, seed, "dec.mid.w"), true);
    store.add("dec.mid.b", init_zeros({d}), true);
    store.add("dec.out.w", init_normal({cfg.in_channels, d, 3, 3, 3}, sm, seed, "dec.out.w"), true);
    store.add("dec.out.b", init_zeros({cfg.in_channels}), true);
}

template <typename T>
Var<T> apply_adapter(Var<T> w_base, Var<T> a, Var<T> b, T alpha, Var<T> x) {
    require(w_base.dims().size() == 2 && a.dims().size() == 2 && b.dims().size() == 2, "apply_adapter: rank-2 factors");
    const std::int64_t r = a.dim(0);
    require(b.dim(1) == r, "apply_adapter: rank mismatch between A and B");
    require(a.dim(1) == w_base.dim(1) && b.dim(0) == w_base.dim(0), "apply_adapter: factor shapes do not match W_base");
    Var<T> base = diff::matmul(w_base, x);
    Var<T> delta = diff::matmul(b, diff::matmul(a, x));
    return base + diff::scale(delta, alpha / static_cast<T>(r));
}

template <typename T>
Var<T> adapted_conv_weight(Var<T> w_base, Var<T> a, Var<T> b, T alpha) {
    const std::int64_t cout = w_base.dim(0);
    const std::int64_t fan_in = w_base.size() / cout;
    const std::int64_t r = a.dim(0);
    require(b.dim(1) == r, "adapter rank mismatch between A and B");
    require(a.dim(1) == fan_in && b.dim(0) == cout, "adapter factors do not match the stage weight");
    Var<T> delta = diff::reshape(diff::matmul(b, a), w_base.dims());
    return w_base + diff::scale(delta, alpha / static_cast<T>(r));
}

namespace {

template <typename T>
Var<T> stage(Var<T> x, Var<T> w, Var<T> b, bool halve_t) {
    return diff::tanh(diff::add_bias(diff::conv3d(x, w, halve_t ? 2 : 1, 2), b));
}

template <typename T>
fixtures::VideoDims dims_of(Var<T> x) {
    require(x.dims().size() == 4, "video tensor must be [C, T, H, W]");
    return {static_cast<int>(x.dim(0)), static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)),
            static_cast<int>(x.dim(3))};
}

}  // namespace

template <typename T>
std::vector<Var<T>> encode(Var<T> x, const Binding<T>& p, const EncoderConfig& cfg) {
    validate_input(cfg, dims_of(x));
    std::vector<Var<T>> levels;
    Var<T> f = x;
    const T alpha = static_cast<T>(cfg.adapter_alpha);
    for (int l = 1; l <= cfg.levels; ++l) {
        Var<T> w = adapted_conv_weight(p(stage_weight(l)), p(adapter_a(l)), p(adapter_b(l)), alpha);
        f = stage(f, w, p(stage_bias(l)), cfg.halves_time(l));
        levels.push_back(f);
    }
    return levels;
}

template <typename T>
Var<T> reference_features(Var<T> x, const Binding<T>& p, const EncoderConfig& cfg) {
    validate_input(cfg, dims_of(x));
    Var<T> f = x;
    for (int l = 1; l <= cfg.levels; ++l) f = stage(f, p(reference_weight(l)), p(reference_bias(l)), cfg.halves_time(l));
    return f;
}

template <typename T>
Var<T> decode(const std::vector<Var<T>>& codes, const std::vector<lfq::GridDims>& grids, const Binding<T>& p,
              const EncoderConfig& cfg, const fixtures::VideoDims& dims) {
    require(static_cast<int>(codes.size()) == cfg.levels,
            "decode: got " + std::to_string(codes.size()) + " levels, expected " + std::to_string(cfg.levels));
    require(grids.size() == codes.size(), "decode: one grid per level");
    const auto expect = level_grids(cfg, dims);
    const std::int64_t d = cfg.decoder_channels;
    auto lateral = [&](int l) {
        const auto& g = grids[static_cast<std::size_t>(l - 1)];
        require(g == expect[static_cast<std::size_t>(l - 1)], "decode: level grid does not match the encoder ladder");
        Var<T> c = codes[static_cast<std::size_t>(l - 1)];
        require(c.dims().size() == 2 && c.dim(1) == g.positions(), "decode: code tensor does not match its grid");
        Var<T> y = diff::add_bias(diff::matmul(p(lat_w(l)), c), p(lat_b(l)));
        return diff::reshape(y, {d, g.t, g.h, g.w});
    };
    const int top = cfg.decoder_all_levels ? cfg.levels : 1;
    Var<T> h = lateral(top);
    for (int l = top - 1; l >= 1; --l) {
        const auto& fine = grids[static_cast<std::size_t>(l - 1)];
        const auto& coarse = grids[static_cast<std::size_t>(l)];
        h = diff::upsample_nearest3d(h, static_cast<int>(fine.t / coarse.t), static_cast<int>(fine.h / coarse.h),
                                     static_cast<int>(fine.w / coarse.w));
        h = h + lateral(l);
    }
    h = diff::tanh(h);
    h = diff::tanh(diff::add_bias(diff::conv3d(h, p("dec.mid.w"), 1, 1), p("dec.mid.b")));
    const auto& g1 = grids[0];
    h = diff::upsample_nearest3d(h, static_cast<int>(dims.frames / g1.t), static_cast<int>(dims.height / g1.h),
                                 static_cast<int>(dims.width / g1.w));
    return diff::add_bias(diff::conv3d(h, p("dec.out.w"), 1, 1), p("dec.out.b"));
}

diff::Tensor clamp_unit(const diff::Tensor& x) {
    diff::Tensor y = x;
    for (auto& v : y.values()) v = std::clamp(v, 0.0f, 1.0f);
    return y;
}

nlohmann::json manifest(const EncoderConfig& cfg, const ParamStore& store) {
    nlohmann::json j;
    j["format"] = "LPQ1";
    j["levels"] = cfg.levels;
    j["in_channels"] = cfg.in_channels;
    j["temporal_halving_stages"] = cfg.temporal_halving_stages;
    j["adapter"] = {{"rank", cfg.adapter_rank}, {"alpha", cfg.adapter_alpha}};
    j["decoder_channels"] = cfg.decoder_channels;
    j["decoder_all_levels"] = cfg.decoder_all_levels;
    nlohmann::json stages = nlohmann::json::array();
    for (int l = 1; l <= cfg.levels; ++l) stages.push_back({{"level", l}, {"weight", store.value(stage_weight(l)).dims()}});
    j["stages"] = stages;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& prm : store.all())
        params.push_back({{"name", prm.name}, {"shape", prm.value.dims()}, {"trainable", prm.trainable}});
    j["parameters"] = params;
    return j;
}

#define LPQ_INSTANTIATE_ENCODER(T)                                                                          \
    template Var<T> apply_adapter(Var<T>, Var<T>, Var<T>, T, Var<T>);                                       \
    template Var<T> adapted_conv_weight(Var<T>, Var<T>, Var<T>, T);                                         \
    template std::vector<Var<T>> encode(Var<T>, const Binding<T>&, const EncoderConfig&);                   \
    template Var<T> reference_features(Var<T>, const Binding<T>&, const EncoderConfig&);                    \
    template Var<T> decode(const std::vector<Var<T>>&, const std::vector<lfq::GridDims>&, const Binding<T>&, \
                           const EncoderConfig&, const fixtures::VideoDims&);

LPQ_INSTANTIATE_ENCODER(float)
LPQ_INSTANTIATE_ENCODER(double)

}  // namespace lpq::encoder
