#include "lpq/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lpq/objectives/losses.hpp"

namespace lpq::harness {

std::vector<fixtures::CaptionedClip> make_dataset(const RunConfig& cfg) {
    const auto& d = cfg.dataset;
    const int levels = cfg.model.encoder.levels;
    std::vector<fixtures::CaptionedClip> clips;
    for (int i = 0; i < d.clips; ++i) {
        const std::uint64_t s = d.seed * 7919 + static_cast<std::uint64_t>(d.repeat_first ? 0 : i);
        clips.push_back(fixtures::make_clip(fixtures::random_scene(cfg.model.video, s, d.max_objects), cfg.model.video, s, levels));
    }
    return clips;
}

AdamW::AdamW(const OptimizerConfig& cfg, const ParamStore& store) : cfg_(cfg) {
    for (const auto& p : store.all()) {
        m_.emplace_back(p.value.dims(), 0.0f);
        v_.emplace_back(p.value.dims(), 0.0f);
    }
}

void AdamW::step(ParamStore& store, const std::vector<diff::Tensor>& grads) {
    require(grads.size() == store.size(), "AdamW: one gradient per parameter");
    ++t_;
    double norm2 = 0;
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (store.at(static_cast<int>(i)).trainable)
            for (float g : grads[i].values()) norm2 += double(g) * g;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm at optimizer step " + std::to_string(t_));
    const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
    const double bc1 = 1 - std::pow(cfg_.beta1, t_), bc2 = 1 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = store.at(static_cast<int>(i));
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::int64_t k = 0; k < p.value.size(); ++k) {
            const double g = grads[i][k] * clip;
            m[k] = static_cast<float>(cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g);
            v[k] = static_cast<float>(cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g * g);
            const double upd = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
            p.value[k] = static_cast<float>(p.value[k] - cfg_.lr * (upd + cfg_.weight_decay * p.value[k]));
        }
    }
}

std::vector<diff::Tensor> collect_gradients(diff::Tape<float>& tape, const Binding<float>& p, diff::Var<float> loss) {
    auto g = tape.backward(loss);
    std::vector<diff::Tensor> out;
    out.reserve(p.vars().size());
    for (std::size_t i = 0; i < p.vars().size(); ++i) {
        auto it = g.find(p.vars()[i].id);
        if (it != g.end() && p.store().at(static_cast<int>(i)).trainable)
            out.push_back(it->second);
        else
            out.emplace_back(p.store().at(static_cast<int>(i)).value.dims(), 0.0f);
    }
    return out;
}

namespace {

std::uint64_t step_mask_seed(const RunConfig& cfg, int step, int k) {
    return cfg.train_seed * 1000003ULL + static_cast<std::uint64_t>(step) * 64 + static_cast<std::uint64_t>(k);
}

void accumulate(objectives::LossBreakdown& acc, const objectives::LossBreakdown& b, double w) {
    auto add_vec = [w](std::vector<double>& a, const std::vector<double>& x) {
        if (a.empty()) a.assign(x.size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) a[i] += w * x[i];
    };
    acc.l1 += w * b.l1;
    acc.ssim += w * b.ssim;
    acc.perceptual += w * b.perceptual;
    acc.recon += w * b.recon;
    add_vec(acc.commitment, b.commitment);
    add_vec(acc.entropy, b.entropy);
    add_vec(acc.hierarchical, b.hierarchical);
    add_vec(acc.text_cond, b.text_cond);
    add_vec(acc.text_code, b.text_code);
    acc.commitment_sum += w * b.commitment_sum;
    acc.entropy_sum += w * b.entropy_sum;
    acc.hierarchical_sum += w * b.hierarchical_sum;
    acc.text_cond_sum += w * b.text_cond_sum;
    acc.text_code_sum += w * b.text_code_sum;
    acc.codebook += w * b.codebook;
    acc.ar += w * b.ar;
    acc.drift += w * b.drift;
    acc.total += w * b.total;
}

}  // namespace

ClipInput evaluation_input(const RunConfig& cfg, const fixtures::CaptionedClip& clip, std::size_t i) {
    return make_input(clip, cfg.model.mask_ratio, cfg.dataset.seed * 104729 + i + 1, cfg.model.quantizer.text_dim);
}

EvalMetrics evaluate_corpus(const Model& model, const std::vector<fixtures::CaptionedClip>& clips, const RunConfig& cfg,
                            const ForwardOptions& opt, const objectives::LossWeights* weights) {
    require(!clips.empty(), "evaluate_corpus: empty corpus");
    EvalMetrics m;
    const double w = 1.0 / static_cast<double>(clips.size());
    const int levels = model.config().encoder.levels;
    std::vector<std::vector<std::uint32_t>> indices(static_cast<std::size_t>(levels));
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto in = evaluation_input(cfg, clips[i], i);
        diff::Tape<float> tape;
        ForwardOptions o = opt;
        o.sample_seed = 0;
        auto r = model.evaluate(tape, in, o, weights);
        accumulate(m.loss, r.breakdown, w);
        const diff::Tensor out = encoder::clamp_unit(r.reconstruction.value());
        m.psnr += w * psnr(in.target, out);
        m.ssim += w * ssim(in.target, out);
        for (int l = 0; l < levels; ++l)
            indices[l].insert(indices[l].end(), r.levels[l].indices.begin(), r.levels[l].indices.end());
    }
    m.ar_perplexity = std::exp(m.loss.ar);
    for (const auto& idx : indices) m.utilization.push_back(lfq::utilization(idx, model.config().index_space()));
    return m;
}

TrainReport train_model(Model& model, const std::vector<fixtures::CaptionedClip>& clips, const RunConfig& cfg,
                        const StepCallback& on_step) {
    require(!clips.empty(), "train: empty corpus");
    TrainReport rep;
    rep.config = to_json(cfg);
    rep.initial = evaluate_corpus(model, clips, cfg);
    AdamW opt(cfg.optimizer, model.params());
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    int epoch = 0;
    const int bs = cfg.optimizer.batch_size;
    for (int step = 0; step < cfg.optimizer.steps; ++step) {
        std::vector<diff::Tensor> grads;
        objectives::LossBreakdown mean;
        for (int k = 0; k < bs; ++k) {
            if (cursor == order.size()) {
                std::mt19937_64 rng(cfg.train_seed * 31 + static_cast<std::uint64_t>(epoch++));
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const auto& clip = clips[order[cursor++]];
            auto in = make_input(clip, cfg.model.mask_ratio, step_mask_seed(cfg, step, k), cfg.model.quantizer.text_dim);
            diff::Tape<float> tape;
            Binding<float> p(tape, model.params());
            ForwardOptions fo;
            fo.sample_seed = static_cast<std::uint64_t>(step) + 1;
            ForwardResult<float> r;
            std::vector<diff::Tensor> g;
            try {
                r = model.forward(p, in, fo);
                g = collect_gradients(tape, p, r.total);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
            }
            accumulate(mean, r.breakdown, 1.0 / bs);
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (std::size_t i = 0; i < grads.size(); ++i)
                    for (std::int64_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
            }
        }
        if (bs > 1)
            for (auto& g : grads)
                for (auto& v : g.values()) v /= static_cast<float>(bs);
        try {
            opt.step(model.params(), grads);
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        rep.history.push_back({step, mean});
        if (on_step) on_step(rep.history.back());
    }
    rep.final = evaluate_corpus(model, clips, cfg);
    const std::size_t n = rep.history.size();
    if (n >= 10) {
        const std::size_t k = n / 10;
        double head = 0, tail = 0;
        for (std::size_t i = 0; i < k; ++i) {
            head += rep.history[i].loss.recon;
            tail += rep.history[n - 1 - i].loss.recon;
        }
        rep.recon_trend_decreasing = tail < head;
    }
    return rep;
}

TrainResult train_toy(const RunConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    Model model(cfg.model);
    auto clips = make_dataset(cfg);
    auto rep = train_model(model, clips, cfg, on_step);
    return {std::move(rep), std::move(model)};
}

double psnr(const diff::Tensor& x, const diff::Tensor& y) {
    require(x.dims() == y.dims(), "psnr: dimension mismatch");
    double mse = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double d = double(x[i]) - double(y[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const diff::Tensor& x, const diff::Tensor& y) {
    require(x.dims() == y.dims(), "ssim: dimension mismatch");
    diff::Tape<double> tape;
    return objectives::mean_ssim(tape.constant(x.cast<double>()), tape.constant(y.cast<double>())).value().item();
}

nlohmann::json EvalMetrics::to_json() const {
    return {{"loss", loss.to_json()},
            {"psnr_db", psnr},
            {"ssim", ssim},
            {"ar_perplexity", ar_perplexity},
            {"utilization", utilization}};
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& s : history) {
        auto j = s.loss.to_json();
        j["step"] = s.step;
        h.push_back(j);
    }
    return {{"config", config},
            {"initial", initial.to_json()},
            {"final", final.to_json()},
            {"recon_trend_decreasing", recon_trend_decreasing},
            {"history", h}};
}

}  // namespace lpq::harness
