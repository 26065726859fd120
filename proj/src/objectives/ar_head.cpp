#include "lpq/objectives/ar_head.hpp"

#include <cmath>
#include <numeric>

namespace lpq::objectives {

using diff::Var;

void ARConfig::validate() const {
    require(width >= 1 && layers >= 0 && heads >= 1 && mlp_ratio >= 1, "AR head sizes must be positive");
    require(width % heads == 0, "AR width must be divisible by the head count");
    require(max_len >= 2, "AR max_len must be at least 2");
}

std::vector<Token> SequenceLayout::tokens() const {
    std::vector<Token> out;
    for (int id : caption_ids) out.push_back({TokenKind::Text, id, 0});
    out.push_back({TokenKind::Soi, static_cast<int>(soi_id()), 0});
    for (std::size_t l = 0; l < levels.size(); ++l) {
        if (l > 0) out.push_back({TokenKind::QSep, static_cast<int>(qsep_id()), 0});
        for (auto idx : levels[l]) {
            require(static_cast<std::int64_t>(idx) < codebook_size,
                    "sequence token " + std::to_string(idx) + " exceeds codebook size");
            out.push_back({TokenKind::Visual, static_cast<int>(idx), static_cast<int>(l) + 1});
        }
    }
    return out;
}

std::int64_t SequenceLayout::length() const {
    std::int64_t n = static_cast<std::int64_t>(caption_ids.size()) + 1;
    for (std::size_t l = 0; l < levels.size(); ++l) n += static_cast<std::int64_t>(levels[l].size()) + (l > 0);
    return n;
}

std::vector<int> SequenceLayout::targets() const {
    const auto toks = tokens();
    std::vector<int> t(toks.size(), -1);
    for (std::size_t i = 0; i + 1 < toks.size(); ++i)
        if (toks[i + 1].kind == TokenKind::Visual) t[i] = toks[i + 1].id;
    return t;
}

namespace {

std::string lp(int i, const char* part) { return "ar." + std::to_string(i) + "." + part; }

}  // namespace

void init_ar_head(ParamStore& store, const ARConfig& cfg, int bits, int text_dim, std::uint64_t seed) {
    cfg.validate();
    const int w = cfg.width, h = w * cfg.mlp_ratio;
    const std::int64_t k = (std::int64_t{1} << bits) + 2;
    auto add = [&](const std::string& name, diff::Shape dims, double s) {
        store.add(name, s > 0 ? init_normal(dims, s, seed, name) : init_zeros(dims), true);
    };
    add("ar.text.w", {w, text_dim}, 1.0);
    add("ar.bits.w", {w, bits}, 1.0 / std::sqrt(double(bits)));
    add("ar.special", {2, w}, 1.0);
    add("ar.pos", {cfg.max_len, w}, 0.1);
    for (int i = 0; i < cfg.layers; ++i) {
        add(lp(i, "qkv.w"), {w, 3 * w}, 1.0 / std::sqrt(double(w)));
        add(lp(i, "o.w"), {w, w}, 0.5 / std::sqrt(double(w)));
        add(lp(i, "mlp1.w"), {w, h}, 1.0 / std::sqrt(double(w)));
        add(lp(i, "mlp2.w"), {h, w}, 0.5 / std::sqrt(double(h)));
    }
    add("ar.out.w", {w, k}, 1.0 / std::sqrt(double(w)));
}

template <typename T>
Var<T> ar_logits(Var<T> words, const std::vector<Var<T>>& codes, const Binding<T>& p, const ARConfig& cfg,
                 std::int64_t codebook_size) {
    cfg.validate();
    require(words.dims().size() == 2, "ar_logits: words must be [text_dim, n]");
    require(!codes.empty(), "ar_logits: no code levels");
    const std::int64_t w = cfg.width;
    Var<T> special = p("ar.special");
    std::vector<Var<T>> rows;
    rows.push_back(diff::transpose(diff::matmul(p("ar.text.w"), words)));
    rows.push_back(diff::slice_rows(special, 0, 1));
    for (std::size_t l = 0; l < codes.size(); ++l) {
        if (l > 0) rows.push_back(diff::slice_rows(special, 1, 2));
        Var<T> c = cfg.through_quantizer ? codes[l] : diff::detach(codes[l]);
        rows.push_back(diff::transpose(diff::matmul(p("ar.bits.w"), c)));
    }
    Var<T> x = diff::concat_rows(rows);
    const std::int64_t n = x.dim(0);
    require(n <= cfg.max_len, "sequence length " + std::to_string(n) + " exceeds AR max_len " + std::to_string(cfg.max_len));
    std::vector<int> pos(static_cast<std::size_t>(n));
    std::iota(pos.begin(), pos.end(), 0);
    x = x + diff::embedding(p("ar.pos"), pos);

    const std::int64_t dh = w / cfg.heads;
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const T eps = static_cast<T>(1e-5);
    for (int i = 0; i < cfg.layers; ++i) {
        Var<T> qkv = diff::matmul(diff::layer_norm_rows(x, eps), p(lp(i, "qkv.w")));  // [n, 3w]
        std::vector<Var<T>> heads;
        for (int h = 0; h < cfg.heads; ++h) {
            Var<T> q = diff::slice_cols(qkv, h * dh, (h + 1) * dh);
            Var<T> k = diff::slice_cols(qkv, w + h * dh, w + (h + 1) * dh);
            Var<T> v = diff::slice_cols(qkv, 2 * w + h * dh, 2 * w + (h + 1) * dh);
            Var<T> a = diff::causal_softmax_rows(diff::scale(diff::matmul(q, diff::transpose(k)), inv));
            heads.push_back(diff::matmul(a, v));
        }
        Var<T> att = cfg.heads == 1 ? heads[0] : diff::concat_cols(heads);
        x = x + diff::matmul(att, p(lp(i, "o.w")));
        Var<T> hid = diff::tanh(diff::matmul(diff::layer_norm_rows(x, eps), p(lp(i, "mlp1.w"))));
        x = x + diff::matmul(hid, p(lp(i, "mlp2.w")));
    }
    Var<T> logits = diff::matmul(diff::layer_norm_rows(x, eps), p("ar.out.w"));
    require(logits.dim(1) == codebook_size + 2, "ar_logits: output projection does not match the codebook size");
    return logits;
}

template <typename T>
Var<T> ar_loss(const SequenceLayout& layout, Var<T> words, const std::vector<Var<T>>& codes, const Binding<T>& p,
               const ARConfig& cfg) {
    require(static_cast<std::int64_t>(layout.caption_ids.size()) == words.dim(1),
            "ar_loss: caption ids and word vectors disagree in length");
    require(layout.levels.size() == codes.size(), "ar_loss: level count mismatch");
    const std::int64_t n = layout.length();
    require(n <= cfg.max_len, "sequence length " + std::to_string(n) + " exceeds AR max_len " + std::to_string(cfg.max_len));
    Var<T> logits = ar_logits(words, codes, p, cfg, layout.codebook_size);
    require(logits.dim(0) == n, "ar_loss: layout length does not match the embedded sequence");
    return diff::cross_entropy_rows(logits, layout.targets());
}

#define LPQ_INSTANTIATE_AR(T)                                                                                    \
    template Var<T> ar_logits(Var<T>, const std::vector<Var<T>>&, const Binding<T>&, const ARConfig&, std::int64_t); \
    template Var<T> ar_loss(const SequenceLayout&, Var<T>, const std::vector<Var<T>>&, const Binding<T>&,        \
                            const ARConfig&);

LPQ_INSTANTIATE_AR(float)
LPQ_INSTANTIATE_AR(double)

}  // namespace lpq::objectives
