#include "lpq/objectives/losses.hpp"

#include <cmath>
#include <random>

#include "lpq/params.hpp"
#include "lpq/pyramid/lapq.hpp"

namespace lpq::objectives {

using diff::Var;

template <typename T>
CodebookTerms<T> codebook_loss(const std::vector<lfq::QuantizedVar<T>>& levels, Var<T> p_text,
                               const CodebookLossConfig& cfg, std::uint64_t sample_seed) {
    require(!levels.empty(), "codebook_loss: no levels");
    require(cfg.text_code_samples >= 1, "codebook_loss: text_code_samples must be positive");
    auto* tape = p_text.tape;
    const std::int64_t bits = levels[0].z.dim(0);
    require(p_text.dims() == diff::Shape{bits}, "codebook_loss: text prior must have one probability per bit");
    const T eps = static_cast<T>(lfq::kProbEps);
    Var<T> prior = diff::detach(p_text);
    auto zero = [&] { return tape->constant(diff::BasicTensor<T>::scalar(T(0))); };

    CodebookTerms<T> out;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto& q = levels[l];
        require(q.z.dim(0) == bits, "codebook_loss: all levels must share the codebook width");
        const std::int64_t n = q.grid.positions();
        const T inv_n = T(1) / static_cast<T>(n);

        out.commitment.push_back(diff::scale(diff::sum(diff::square(q.z - q.code)), inv_n));

        Var<T> ent = diff::scale(diff::sum(diff::binary_entropy(q.probs, eps)), inv_n);
        if (cfg.batch_diversity) {
            Var<T> ones = tape->constant(diff::BasicTensor<T>({n, 1}, inv_n));
            Var<T> mean_p = diff::reshape(diff::matmul(q.probs, ones), {bits});
            ent = ent - diff::sum(diff::binary_entropy(mean_p, eps));
        }
        out.entropy.push_back(ent);

        if (l == 0) {
            out.hierarchical.push_back(zero());
        } else {
            Var<T> aligned = pyramid::align_probs(levels[l - 1].probs, levels[l - 1].grid, q.grid);
            out.hierarchical.push_back(diff::scale(diff::sum(diff::bernoulli_kl(q.probs, aligned, eps)), inv_n));
        }

        Var<T> prior_grid = diff::expand_cols(prior, n);
        out.text_cond.push_back(diff::scale(diff::sum(diff::bernoulli_kl(q.probs, prior_grid, eps)), inv_n));

        const std::int64_t m = cfg.text_code_samples;
        std::mt19937_64 rng(sample_seed * 0x9e3779b97f4a7c15ULL + l + 1);
        diff::BasicTensor<T> codes({bits, m});
        const double s = cfg.code_sharpness;
        for (std::int64_t j = 0; j < m; ++j) {
            const std::uint64_t word = rng();
            for (std::int64_t b = 0; b < bits; ++b) {
                const double c = ((word >> (b % 64)) & 1u) ? 1.0 : -1.0;
                codes[b * m + j] = static_cast<T>(1.0 / (1.0 + std::exp(-c * s)));
            }
        }
        Var<T> kl = diff::bernoulli_kl(tape->constant(std::move(codes)), diff::expand_cols(prior, m), eps);
        out.text_code.push_back(diff::scale(diff::sum(kl), T(1) / static_cast<T>(m)));
    }
    auto total_of = [](const std::vector<Var<T>>& v) {
        Var<T> s = v[0];
        for (std::size_t i = 1; i < v.size(); ++i) s = s + v[i];
        return s;
    };
    out.commitment_sum = total_of(out.commitment);
    out.entropy_sum = total_of(out.entropy);
    out.hierarchical_sum = total_of(out.hierarchical);
    out.text_cond_sum = total_of(out.text_cond);
    out.text_code_sum = total_of(out.text_code);
    out.total = out.commitment_sum + out.entropy_sum + out.hierarchical_sum + out.text_cond_sum + out.text_code_sum;
    return out;
}

PerceptualProxy make_perceptual_proxy(int in_channels, std::uint64_t seed) {
    PerceptualProxy p;
    p.w1 = init_normal({8, in_channels, 3, 3, 3}, 1.0 / std::sqrt(27.0 * in_channels), seed, "percep.w1");
    p.w2 = init_normal({8, 8, 3, 3, 3}, 1.0 / std::sqrt(27.0 * 8), seed, "percep.w2");
    return p;
}

diff::Tensor64 ssim_kernel() {
    diff::Tensor64 k({kSsimWindow, kSsimWindow});
    const int r = kSsimWindow / 2;
    double tot = 0;
    for (int y = 0; y < kSsimWindow; ++y)
        for (int x = 0; x < kSsimWindow; ++x) {
            const double d2 = double((y - r) * (y - r) + (x - r) * (x - r));
            tot += k[y * kSsimWindow + x] = std::exp(-d2 / (2 * kSsimSigma * kSsimSigma));
        }
    for (auto& v : k.values()) v /= tot;
    return k;
}

template <typename T>
Var<T> mean_ssim(Var<T> x, Var<T> y) {
    require(x.dims() == y.dims(), "ssim: dimension mismatch " + diff::shape_str(x.dims()) + " vs " +
                                      diff::shape_str(y.dims()));
    require(x.dims().size() == 4, "ssim: expected [C, T, H, W]");
    require(x.dim(2) >= kSsimWindow && x.dim(3) >= kSsimWindow, "ssim: frames smaller than the 11x11 window");
    const diff::Shape planes{x.dim(0) * x.dim(1), x.dim(2), x.dim(3)};
    const diff::BasicTensor<T> k = ssim_kernel().template cast<T>();
    Var<T> a = diff::reshape(x, planes), b = diff::reshape(y, planes);
    Var<T> mu_a = diff::filter2d_valid(a, k), mu_b = diff::filter2d_valid(b, k);
    Var<T> saa = diff::filter2d_valid(diff::square(a), k) - diff::square(mu_a);
    Var<T> sbb = diff::filter2d_valid(diff::square(b), k) - diff::square(mu_b);
    Var<T> sab = diff::filter2d_valid(a * b, k) - mu_a * mu_b;
    const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
    Var<T> num = diff::add_scalar(diff::scale(mu_a * mu_b, T(2)), c1) * diff::add_scalar(diff::scale(sab, T(2)), c2);
    Var<T> den = diff::add_scalar(diff::square(mu_a) + diff::square(mu_b), c1) * diff::add_scalar(saa + sbb, c2);
    return diff::mean(num / den);
}

template <typename T>
ReconTerms<T> recon_loss(Var<T> target, Var<T> pred, const PerceptualProxy& proxy) {
    require(target.dims() == pred.dims(), "recon_loss: dimension mismatch " + diff::shape_str(target.dims()) + " vs " +
                                              diff::shape_str(pred.dims()));
    auto* tape = pred.tape;
    ReconTerms<T> r;
    r.l1 = diff::mean(diff::abs(pred - target));
    r.ssim = diff::add_scalar(-mean_ssim(target, pred), T(1));
    Var<T> w1 = tape->constant(proxy.w1.template cast<T>());
    Var<T> w2 = tape->constant(proxy.w2.template cast<T>());
    auto features = [&](Var<T> v) {
        Var<T> f1 = diff::tanh(diff::conv3d(v, w1, 1, 1));
        Var<T> f2 = diff::tanh(diff::conv3d(f1, w2, 1, 2));
        return std::pair{f1, f2};
    };
    auto [a1, a2] = features(target);
    auto [b1, b2] = features(pred);
    r.perceptual = diff::mean(diff::square(b1 - a1)) + diff::mean(diff::square(b2 - a2));
    r.total = r.l1 + r.ssim + r.perceptual;
    return r;
}

template <typename T>
Var<T> drift_loss(Var<T> adapted, Var<T> reference) {
    require(adapted.dims() == reference.dims(), "drift_loss: grid mismatch " + diff::shape_str(adapted.dims()) + " vs " +
                                                    diff::shape_str(reference.dims()));
    require(adapted.dims().size() >= 2, "drift_loss: expected [C, ...]");
    const std::int64_t c = adapted.dim(0), n = adapted.size() / c;
    Var<T> a = diff::transpose(diff::reshape(adapted, {c, n}));
    Var<T> r = diff::transpose(diff::reshape(diff::detach(reference), {c, n}));
    Var<T> la = diff::log_softmax_rows(a);
    Var<T> kl = diff::softmax_rows(a) * (la - diff::log_softmax_rows(r));
    return diff::scale(diff::sum(kl), T(1) / static_cast<T>(n));
}

double total_objective(const LossBreakdown& b, const LossWeights& w) {
    return w.recon * b.recon + w.codebook * b.codebook + w.ar * b.ar + w.drift * b.drift;
}

template <typename T>
LossBreakdown breakdown_of(const ReconTerms<T>& r, const CodebookTerms<T>& c, Var<T> ar, Var<T> drift,
                           const LossWeights& w) {
    auto v = [](Var<T> x) { return static_cast<double>(x.value().item()); };
    auto vs = [&](const std::vector<Var<T>>& xs) {
        std::vector<double> o;
        for (auto x : xs) o.push_back(v(x));
        return o;
    };
    LossBreakdown b;
    b.l1 = v(r.l1);
    b.ssim = v(r.ssim);
    b.perceptual = v(r.perceptual);
    b.recon = v(r.total);
    b.commitment = vs(c.commitment);
    b.entropy = vs(c.entropy);
    b.hierarchical = vs(c.hierarchical);
    b.text_cond = vs(c.text_cond);
    b.text_code = vs(c.text_code);
    b.commitment_sum = v(c.commitment_sum);
    b.entropy_sum = v(c.entropy_sum);
    b.hierarchical_sum = v(c.hierarchical_sum);
    b.text_cond_sum = v(c.text_cond_sum);
    b.text_code_sum = v(c.text_code_sum);
    b.codebook = v(c.total);
    b.ar = v(ar);
    b.drift = v(drift);
    b.total = total_objective(b, w);
    return b;
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"recon", {{"l1", l1}, {"ssim", ssim}, {"perceptual", perceptual}, {"sum", recon}}},
            {"codebook",
             {{"commitment", {{"levels", commitment}, {"sum", commitment_sum}}},
              {"entropy", {{"levels", entropy}, {"sum", entropy_sum}}},
              {"hierarchical", {{"levels", hierarchical}, {"sum", hierarchical_sum}}},
              {"text_cond", {{"levels", text_cond}, {"sum", text_cond_sum}}},
              {"text_code", {{"levels", text_code}, {"sum", text_code_sum}}},
              {"sum", codebook}}},
            {"ar", ar},
            {"drift", drift},
            {"total", total}};
}

#define LPQ_INSTANTIATE_LOSSES(T)                                                                              \
    template CodebookTerms<T> codebook_loss(const std::vector<lfq::QuantizedVar<T>>&, Var<T>,                  \
                                            const CodebookLossConfig&, std::uint64_t);                          \
    template Var<T> mean_ssim(Var<T>, Var<T>);                                                                 \
    template ReconTerms<T> recon_loss(Var<T>, Var<T>, const PerceptualProxy&);                                 \
    template Var<T> drift_loss(Var<T>, Var<T>);                                                                \
    template LossBreakdown breakdown_of(const ReconTerms<T>&, const CodebookTerms<T>&, Var<T>, Var<T>,         \
                                       const LossWeights&);

LPQ_INSTANTIATE_LOSSES(float)
LPQ_INSTANTIATE_LOSSES(double)

}  // namespace lpq::objectives
