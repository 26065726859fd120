#include "lpq/pyramid/lapq.hpp"

#include <cmath>

namespace lpq::pyramid {

using diff::Var;

void QuantizerConfig::validate() const {
    require(text_dim >= 1, "text_dim must be positive");
    require(attn_dim >= 1 && heads >= 1, "attention width and heads must be positive");
    require(attn_dim % heads == 0, "attention width must be divisible by the head count");
    require(lateral_gain > 0, "lateral_gain must be positive");
}

std::string block_param(int level, const std::string& part) { return "qb." + std::to_string(level) + "." + part; }

void init_quantizer(ParamStore& store, const QuantizerConfig& cfg, const std::vector<int>& channels, int bits,
                    std::uint64_t seed) {
    cfg.validate();
    const int d = cfg.attn_dim;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const int l = static_cast<int>(i) + 1;
        const int c = channels[i];
        auto add = [&](const std::string& part, diff::Shape dims, double s) {
            const std::string name = block_param(l, part);
            store.add(name, s > 0 ? init_normal(dims, s, seed, name) : init_zeros(dims), true);
        };
        add("lat.w", {bits, c}, cfg.lateral_gain / std::sqrt(double(c)));
        add("lat.b", {bits}, 0.0);
        if (l >= 2) add("carry.w", {bits, bits}, 0.5 / std::sqrt(double(bits)));
        add("q.w", {d, c}, 1.0 / std::sqrt(double(c)));
        add("k.w", {d, cfg.text_dim}, 1.0 / std::sqrt(double(cfg.text_dim)));
        add("v.w", {d, cfg.text_dim}, 1.0 / std::sqrt(double(cfg.text_dim)));
        add("o.w", {bits, d}, 1.0 / std::sqrt(double(d)));
    }
    store.add("prior.w", init_normal({bits, cfg.text_dim}, cfg.prior_scale, seed, "prior.w"), false);
    store.add("prior.b", init_zeros({bits}), false);
}

namespace {

int axis_factor(std::int64_t src, std::int64_t dst, bool& down) {
    require(src >= 1 && dst >= 1, "align_grids: extents must be positive");
    const std::int64_t hi = std::max(src, dst), lo = std::min(src, dst);
    require(hi % lo == 0, "align_grids: extents " + std::to_string(src) + " and " + std::to_string(dst) +
                              " are not related by a power of two");
    const std::int64_t f = hi / lo;
    require((f & (f - 1)) == 0, "align_grids: ratio " + std::to_string(f) + " is not a power of two");
    down = src > dst;
    return static_cast<int>(f);
}

}  // namespace

template <typename T>
Var<T> align_probs(Var<T> probs, lfq::GridDims src, lfq::GridDims dst) {
    require(probs.dims().size() == 2 && probs.dim(1) == src.positions(), "align_grids: probs do not match source grid");
    if (src == dst) return probs;
    bool dt, dh, dw;
    const int ft = axis_factor(src.t, dst.t, dt), fh = axis_factor(src.h, dst.h, dh), fw = axis_factor(src.w, dst.w, dw);
    const std::int64_t b = probs.dim(0);
    Var<T> x = diff::reshape(probs, {b, src.t, src.h, src.w});
    if (dt || dh || dw) x = diff::avg_pool3d(x, dt ? ft : 1, dh ? fh : 1, dw ? fw : 1);
    if (!dt || !dh || !dw) x = diff::upsample_nearest3d(x, dt ? 1 : ft, dh ? 1 : fh, dw ? 1 : fw);
    return diff::reshape(x, {b, dst.positions()});
}

lfq::QuantizedField align_grids(const lfq::QuantizedField& q, lfq::GridDims dst) {
    if (q.grid == dst) return q;
    diff::Tape<float> tape;
    const std::int64_t b = q.bits;
    auto probs = tape.constant(q.bit_probs.reshaped({b, q.grid.positions()}));
    auto z = tape.constant(q.z.reshaped({b, q.grid.positions()}));
    lfq::QuantizedField out;
    out.bits = q.bits;
    out.grid = dst;
    out.bit_probs = align_probs(probs, q.grid, dst).value().reshaped({b, dst.t, dst.h, dst.w});
    out.z = align_probs(z, q.grid, dst).value().reshaped({b, dst.t, dst.h, dst.w});
    out.hard_code = diff::Tensor(out.bit_probs.dims());
    for (std::int64_t i = 0; i < out.bit_probs.size(); ++i) out.hard_code[i] = out.bit_probs[i] >= 0.5f ? 1.0f : -1.0f;
    out.indices = lfq::column_indices(out.hard_code);
    return out;
}

template <typename T>
lfq::QuantizedVar<T> quant_block(const lfq::QuantizedVar<T>* prev, Var<T> features, Var<T> words,
                                 const Binding<T>& p, int level, const QuantizerConfig& cfg,
                                 const lfq::CodebookConfig& codebook, const PyramidOptions& opt) {
    cfg.validate();
    require(features.dims().size() == 4, "quant_block: features must be [C, T, H, W]");
    require(words.dims().size() == 2 && words.dim(0) == cfg.text_dim, "quant_block: words must be [text_dim, n]");
    require((level == 1) == (prev == nullptr), "quant_block: level 1 takes no previous level, later levels need one");
    const lfq::GridDims grid{features.dim(1), features.dim(2), features.dim(3)};
    const std::int64_t c = features.dim(0), n = grid.positions();
    Var<T> f = diff::reshape(features, {c, n});

    Var<T> z = diff::add_bias(diff::matmul(p(block_param(level, "lat.w")), f), p(block_param(level, "lat.b")));
    require(z.dim(0) == codebook.bits, "quant_block: lateral projection does not produce b channels");

    if (prev && opt.carry) {
        Var<T> aligned = align_probs(prev->probs, prev->grid, grid);
        Var<T> centered = diff::add_scalar(diff::scale(aligned, T(2)), T(-1));
        z = z + diff::matmul(p(block_param(level, "carry.w")), centered);
    }

    const int heads = cfg.heads;
    const std::int64_t dh = cfg.attn_dim / heads;
    Var<T> q = diff::matmul(p(block_param(level, "q.w")), f);      // [d, n]
    Var<T> k = diff::matmul(p(block_param(level, "k.w")), words);  // [d, m]
    Var<T> v = diff::matmul(p(block_param(level, "v.w")), words);  // [d, m]
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var<T>> outs;
    for (int h = 0; h < heads; ++h) {
        Var<T> qh = diff::slice_rows(q, h * dh, (h + 1) * dh);
        Var<T> kh = diff::slice_rows(k, h * dh, (h + 1) * dh);
        Var<T> vh = diff::slice_rows(v, h * dh, (h + 1) * dh);
        Var<T> a = diff::softmax_rows(diff::scale(diff::matmul(diff::transpose(qh), kh), inv));  // [n, m]
        outs.push_back(diff::matmul(vh, diff::transpose(a)));                                      // [dh, n]
    }
    Var<T> attn = heads == 1 ? outs[0] : diff::concat_rows(outs);
    z = z + diff::matmul(p(block_param(level, "o.w")), attn);
    return lfq::quantize(z, grid, codebook, opt.mode);
}

template <typename T>
std::vector<lfq::QuantizedVar<T>> quantize_pyramid(const std::vector<Var<T>>& pyramid, Var<T> words,
                                                   const Binding<T>& p, const QuantizerConfig& cfg,
                                                   const lfq::CodebookConfig& codebook, const PyramidOptions& opt) {
    require(!pyramid.empty(), "quantize_pyramid: empty pyramid");
    for (std::size_t l = 1; l <= pyramid.size(); ++l)
        require(p.store().contains(block_param(static_cast<int>(l), "lat.w")),
                "quantize_pyramid: no block state for level " + std::to_string(l));
    require(!p.store().contains(block_param(static_cast<int>(pyramid.size()) + 1, "lat.w")),
            "quantize_pyramid: block state count exceeds pyramid depth");
    std::vector<lfq::QuantizedVar<T>> out;
    out.reserve(pyramid.size());
    for (std::size_t i = 0; i < pyramid.size(); ++i)
        out.push_back(quant_block(i == 0 ? nullptr : &out.back(), pyramid[i], words, p, static_cast<int>(i) + 1, cfg,
                                  codebook, opt));
    return out;
}

template <typename T>
Var<T> text_bit_prior(Var<T> e, const Binding<T>& p) {
    require(e.dims().size() == 1, "text_bit_prior: embedding must be a vector");
    Var<T> logits = diff::add_bias(diff::reshape(diff::matmul(p("prior.w"), diff::reshape(e, {e.dim(0), 1})),
                                                 {p("prior.w").dim(0)}),
                                   p("prior.b"));
    const T eps = static_cast<T>(lfq::kProbEps);
    return diff::clamp(diff::sigmoid(logits), eps, T(1) - eps);
}

diff::Tensor text_bit_prior(const diff::Tensor& e, const ParamStore& store) {
    diff::Tape<float> tape;
    Binding<float> b(tape, store);
    return text_bit_prior(tape.constant(e), b).value();
}

#define LPQ_INSTANTIATE_LAPQ(T)                                                                                 \
    template Var<T> align_probs(Var<T>, lfq::GridDims, lfq::GridDims);                                          \
    template lfq::QuantizedVar<T> quant_block(const lfq::QuantizedVar<T>*, Var<T>, Var<T>, const Binding<T>&, int, \
                                              const QuantizerConfig&, const lfq::CodebookConfig&,                \
                                              const PyramidOptions&);                                           \
    template std::vector<lfq::QuantizedVar<T>> quantize_pyramid(const std::vector<Var<T>>&, Var<T>,             \
                                                                const Binding<T>&, const QuantizerConfig&,      \
                                                                const lfq::CodebookConfig&, const PyramidOptions&); \
    template Var<T> text_bit_prior(Var<T>, const Binding<T>&);

LPQ_INSTANTIATE_LAPQ(float)
LPQ_INSTANTIATE_LAPQ(double)

}  // namespace lpq::pyramid
