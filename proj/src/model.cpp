#include "lpq/model.hpp"

#include <cmath>
#include <limits>

#include "lpq/fixtures/masking.hpp"

namespace lpq {

using diff::Var;

std::string variant_name(QuantizerVariant v) {
    switch (v) {
        case QuantizerVariant::VQ: return "vq";
        case QuantizerVariant::GVQ: return "gvq";
        case QuantizerVariant::RVQ: return "rvq";
        case QuantizerVariant::LFQ: return "lfq";
        case QuantizerVariant::LaPQ: return "lapq";
    }
    return "lapq";
}

QuantizerVariant variant_from_name(const std::string& s) {
    for (auto v : {QuantizerVariant::VQ, QuantizerVariant::GVQ, QuantizerVariant::RVQ, QuantizerVariant::LFQ,
                   QuantizerVariant::LaPQ})
        if (variant_name(v) == s) return v;
    fail("unknown quantizer variant '" + s + "' (expected vq, gvq, rvq, lfq or lapq)");
}

namespace {

bool table_based(QuantizerVariant v) {
    return v == QuantizerVariant::VQ || v == QuantizerVariant::GVQ || v == QuantizerVariant::RVQ;
}

int tables_per_level(const ModelConfig& c) {
    switch (c.variant) {
        case QuantizerVariant::GVQ: return c.vq_groups;
        case QuantizerVariant::RVQ: return c.rvq_depth;
        case QuantizerVariant::VQ: return 1;
        default: return 0;
    }
}

std::string table_name(int level, int k) { return "vq." + std::to_string(level) + "." + std::to_string(k) + ".table"; }

}  // namespace

std::vector<int> ModelConfig::level_channels() const {
    std::vector<int> c;
    for (int l = 1; l <= encoder.levels; ++l) c.push_back(encoder.stage_channels(l));
    return c;
}

std::int64_t ModelConfig::index_space() const {
    std::int64_t e = vq_entries;
    switch (variant) {
        case QuantizerVariant::VQ: return e;
        case QuantizerVariant::GVQ: return static_cast<std::int64_t>(std::llround(std::pow(double(e), vq_groups)));
        case QuantizerVariant::RVQ: return static_cast<std::int64_t>(std::llround(std::pow(double(e), rvq_depth)));
        default: return codebook.vocab();
    }
}

void ModelConfig::validate() const {
    encoder.validate();
    codebook.validate();
    quantizer.validate();
    ar.validate();
    encoder::validate_input(encoder, video);
    fixtures::validate_dims(video, encoder.levels);
    require(seed != reference_seed, "reference_seed must differ from seed");
    require(mask_ratio >= 0 && mask_ratio <= 1, "mask_ratio must be in [0, 1]");
    require(quantizer.attn_dim == quantizer.text_dim,
            "attn_dim must equal text_dim (relevance maps compare projected tokens with word vectors)");
    if (table_based(variant)) {
        require(vq_entries >= 2, "vq_entries must be at least 2");
        require(vq_groups >= 1 && codebook.bits % vq_groups == 0, "bits must be divisible by vq_groups");
        require(rvq_depth >= 1, "rvq_depth must be positive");
        require(index_space() <= (std::int64_t{1} << 31), "baseline index space too large");
    }
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int bits = cfg_.codebook.bits;
    encoder::init_encoder(store_, cfg_.encoder, bits, cfg_.seed, cfg_.reference_seed);
    pyramid::init_quantizer(store_, cfg_.quantizer, cfg_.level_channels(), bits, cfg_.seed);
    // Values start as the identity so attention initially copies word vectors.
    for (int l = 1; l <= cfg_.encoder.levels; ++l) {
        auto& v = store_.value(pyramid::block_param(l, "v.w"));
        v.fill(0.f);
        for (int i = 0; i < cfg_.quantizer.attn_dim; ++i) v[i * cfg_.quantizer.text_dim + i] = 1.f;
    }
    objectives::init_ar_head(store_, cfg_.ar, bits, cfg_.quantizer.text_dim, cfg_.seed);
    const int tables = tables_per_level(cfg_);
    const int dim = cfg_.variant == QuantizerVariant::GVQ ? bits / cfg_.vq_groups : bits;
    for (int l = 1; l <= cfg_.encoder.levels; ++l)
        for (int k = 0; k < tables; ++k)
            store_.add(table_name(l, k),
                       init_normal({cfg_.vq_entries, dim}, k == 0 ? 1.0 : 0.3, cfg_.seed, table_name(l, k)), true);
    proxy_ = objectives::make_perceptual_proxy(cfg_.video.channels);
}

ClipInput make_input(const fixtures::CaptionedClip& clip, double mask_ratio, std::uint64_t mask_seed, int text_dim) {
    ClipInput in;
    in.target = clip.video.values;
    in.masked = fixtures::mask_video(clip.video, mask_ratio, mask_seed).first.values;
    in.caption = clip.caption;
    in.text = fixtures::embed_text(clip.caption, text_dim);
    return in;
}

ClipInput make_input(const diff::Tensor& video, const std::vector<std::string>& caption, int text_dim) {
    ClipInput in;
    in.target = video;
    in.masked = video;
    in.caption = caption;
    in.text = fixtures::embed_text(caption, text_dim);
    return in;
}

namespace {

template <typename T>
std::vector<std::uint32_t> nearest_rows(const diff::BasicTensor<T>& z, std::int64_t row0, std::int64_t rows,
                                        const diff::BasicTensor<T>& table) {
    const std::int64_t n = z.dim(1), e = table.dim(0);
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k < e; ++k) {
            double d = 0;
            for (std::int64_t r = 0; r < rows; ++r) {
                const double diff = double(z[(row0 + r) * n + j]) - double(table[k * rows + r]);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                idx[static_cast<std::size_t>(j)] = static_cast<std::uint32_t>(k);
            }
        }
    }
    return idx;
}

std::vector<int> as_ints(const std::vector<std::uint32_t>& v) { return {v.begin(), v.end()}; }

// Table-based baseline for one level. Returns the quantized field and its
// codebook + commitment loss.
template <typename T>
std::pair<lfq::QuantizedVar<T>, Var<T>> table_quantize(Var<T> z, lfq::GridDims grid, const Binding<T>& p, int level,
                                                       const ModelConfig& cfg) {
    const std::int64_t bits = z.dim(0), n = z.dim(1);
    const T beta = static_cast<T>(cfg.vq_beta);
    const T inv_n = T(1) / static_cast<T>(n);
    const std::int64_t e = cfg.vq_entries;
    Var<T> emb;
    Var<T> loss;
    std::vector<std::uint32_t> index(static_cast<std::size_t>(n), 0);
    auto gather = [&](Var<T> table, const std::vector<std::uint32_t>& idx) {
        return diff::transpose(diff::embedding(table, as_ints(idx)));
    };
    if (cfg.variant == QuantizerVariant::GVQ) {
        const std::int64_t g = cfg.vq_groups, rows = bits / g;
        std::vector<Var<T>> parts;
        for (int k = 0; k < g; ++k) {
            Var<T> table = p(table_name(level, k));
            auto idx = nearest_rows(z.value(), k * rows, rows, table.value());
            for (std::size_t j = 0; j < idx.size(); ++j) index[j] = index[j] * static_cast<std::uint32_t>(e) + idx[j];
            parts.push_back(gather(table, idx));
        }
        emb = g == 1 ? parts[0] : diff::concat_rows(parts);
        loss = diff::sum(diff::square(diff::detach(z) - emb));
    } else {
        const int depth = cfg.variant == QuantizerVariant::RVQ ? cfg.rvq_depth : 1;
        diff::BasicTensor<T> residual = z.value();
        for (int k = 0; k < depth; ++k) {
            Var<T> table = p(table_name(level, k));
            auto idx = nearest_rows(residual, 0, bits, table.value());
            for (std::size_t j = 0; j < idx.size(); ++j) index[j] = index[j] * static_cast<std::uint32_t>(e) + idx[j];
            Var<T> ek = gather(table, idx);
            Var<T> target = z.tape->constant(residual);
            Var<T> stage = diff::sum(diff::square(target - ek));
            loss = k == 0 ? stage : loss + stage;
            emb = k == 0 ? ek : emb + ek;
            for (std::int64_t i = 0; i < residual.size(); ++i) residual[i] -= ek.value()[i];
        }
    }
    loss = diff::scale(loss + diff::scale(diff::sum(diff::square(z - diff::detach(emb))), beta), inv_n);
    lfq::QuantizedVar<T> q;
    q.z = z;
    q.grid = grid;
    q.hard = z + diff::detach(emb - z);
    q.code = diff::detach(emb);
    q.probs = diff::sigmoid(z);
    q.indices = std::move(index);
    return {q, loss};
}

template <typename T>
Var<T> scalar_zero(diff::Tape<T>* tape) {
    return tape->constant(diff::BasicTensor<T>::scalar(T(0)));
}

}  // namespace

template <typename T>
ForwardResult<T> Model::forward(const Binding<T>& p, const ClipInput& in, const ForwardOptions& opt,
                                const objectives::LossWeights* weights) const {
    const auto& w = weights ? *weights : cfg_.weights;
    require(in.target.dims() == cfg_.video.shape(), "clip dims " + diff::shape_str(in.target.dims()) +
                                                        " do not match the model's " + diff::shape_str(cfg_.video.shape()));
    require(in.masked.dims() == in.target.dims(), "masked input and target differ in shape");
    auto* tape = p.vars().front().tape;
    ForwardResult<T> r;
    Var<T> target = tape->constant(in.target.template cast<T>());
    Var<T> masked = tape->constant(in.masked.template cast<T>());
    Var<T> words = tape->constant(in.text.word_vectors.template cast<T>());
    Var<T> e_t = tape->constant(diff::Tensor({static_cast<std::int64_t>(in.text.vector.size())}, in.text.vector).template cast<T>());

    r.pyramid = encoder::encode(masked, p, cfg_.encoder);
    r.reference = encoder::reference_features(masked, p, cfg_.encoder);
    r.p_text = pyramid::text_bit_prior(e_t, p);

    const bool lfq_only = cfg_.variant == QuantizerVariant::LFQ;
    const bool tables = table_based(cfg_.variant);
    Var<T> words_used = lfq_only ? tape->constant(diff::BasicTensor<T>(words.dims(), T(0))) : words;
    pyramid::PyramidOptions popt{opt.mode, opt.carry && !lfq_only};
    std::vector<Var<T>> table_losses;
    for (int l = 1; l <= cfg_.encoder.levels; ++l) {
        Var<T> f = r.pyramid[static_cast<std::size_t>(l - 1)];
        const lfq::GridDims grid{f.dim(1), f.dim(2), f.dim(3)};
        if (tables) {
            const std::int64_t c = f.dim(0);
            Var<T> z = diff::add_bias(diff::matmul(p(pyramid::block_param(l, "lat.w")), diff::reshape(f, {c, grid.positions()})),
                                      p(pyramid::block_param(l, "lat.b")));
            auto [q, loss] = table_quantize(z, grid, p, l, cfg_);
            r.levels.push_back(q);
            table_losses.push_back(loss);
            continue;
        }
        const lfq::QuantizedVar<T>* prev = l == 1 ? nullptr : &r.levels.back();
        auto q = pyramid::quant_block(prev, f, words_used, p, l, cfg_.quantizer, cfg_.codebook, popt);
        if (opt.collapse) {
            const auto& c = opt.collapse->at(static_cast<std::size_t>(l - 1));
            require(static_cast<int>(c.size()) == cfg_.codebook.bits, "collapse vector must have one value per bit");
            diff::BasicTensor<T> zc({cfg_.codebook.bits, grid.positions()});
            for (int b = 0; b < cfg_.codebook.bits; ++b)
                for (std::int64_t j = 0; j < grid.positions(); ++j) zc[b * grid.positions() + j] = static_cast<T>(c[b]);
            q = lfq::quantize(tape->constant(std::move(zc)), grid, cfg_.codebook, opt.mode);
        }
        r.levels.push_back(q);
    }

    std::vector<Var<T>> codes;
    std::vector<lfq::GridDims> grids;
    for (const auto& q : r.levels) {
        codes.push_back(q.hard);
        grids.push_back(q.grid);
    }
    r.reconstruction = encoder::decode(codes, grids, p, cfg_.encoder, cfg_.video);
    r.recon = objectives::recon_loss(target, r.reconstruction, proxy_);

    if (tables) {
        auto& cb = r.codebook;
        cb.commitment = table_losses;
        for (std::size_t l = 0; l < table_losses.size(); ++l) {
            cb.entropy.push_back(scalar_zero(tape));
            cb.hierarchical.push_back(scalar_zero(tape));
            cb.text_cond.push_back(scalar_zero(tape));
            cb.text_code.push_back(scalar_zero(tape));
        }
        cb.commitment_sum = table_losses[0];
        for (std::size_t l = 1; l < table_losses.size(); ++l) cb.commitment_sum = cb.commitment_sum + table_losses[l];
        cb.entropy_sum = cb.hierarchical_sum = cb.text_cond_sum = cb.text_code_sum = scalar_zero(tape);
        cb.total = cb.commitment_sum;
        r.ar = scalar_zero(tape);
    } else {
        r.codebook = objectives::codebook_loss(r.levels, r.p_text, cfg_.codebook_loss, opt.sample_seed);
        if (lfq_only) {
            auto& cb = r.codebook;
            for (auto* v : {&cb.hierarchical, &cb.text_cond, &cb.text_code})
                for (auto& x : *v) x = scalar_zero(tape);
            cb.hierarchical_sum = cb.text_cond_sum = cb.text_code_sum = scalar_zero(tape);
            cb.total = cb.commitment_sum + cb.entropy_sum;
        }
        objectives::SequenceLayout layout;
        layout.codebook_size = cfg_.codebook.vocab();
        layout.caption_ids = in.text.token_ids;
        for (const auto& q : r.levels) layout.levels.push_back(q.indices);
        r.ar = objectives::ar_loss(layout, words, codes, p, cfg_.ar);
    }
    r.drift = objectives::drift_loss(r.pyramid.back(), r.reference);

    Var<T> total = diff::scale(r.recon.total, static_cast<T>(w.recon));
    if (w.codebook != 0) total = total + diff::scale(r.codebook.total, static_cast<T>(w.codebook));
    if (w.ar != 0 && !tables) total = total + diff::scale(r.ar, static_cast<T>(w.ar));
    if (w.drift != 0) total = total + diff::scale(r.drift, static_cast<T>(w.drift));
    r.total = total;
    r.breakdown = objectives::breakdown_of(r.recon, r.codebook, r.ar, r.drift, w);
    return r;
}

template ForwardResult<float> Model::forward(const Binding<float>&, const ClipInput&, const ForwardOptions&,
                                             const objectives::LossWeights*) const;
template ForwardResult<double> Model::forward(const Binding<double>&, const ClipInput&, const ForwardOptions&,
                                              const objectives::LossWeights*) const;

ForwardResult<float> Model::evaluate(diff::Tape<float>& tape, const ClipInput& in, const ForwardOptions& opt,
                                     const objectives::LossWeights* weights) const {
    Binding<float> p(tape, store_);
    return forward(p, in, opt, weights);
}

std::vector<lfq::QuantizedField> Model::quantize(const diff::Tensor& video, const std::vector<std::string>& caption) const {
    diff::Tape<float> tape;
    auto r = evaluate(tape, make_input(video, caption, cfg_.quantizer.text_dim));
    std::vector<lfq::QuantizedField> out;
    for (const auto& q : r.levels) out.push_back(q.detached());
    return out;
}

diff::Tensor Model::reconstruct(const diff::Tensor& video, const std::vector<std::string>& caption) const {
    diff::Tape<float> tape;
    auto r = evaluate(tape, make_input(video, caption, cfg_.quantizer.text_dim));
    return encoder::clamp_unit(r.reconstruction.value());
}

}  // namespace lpq
