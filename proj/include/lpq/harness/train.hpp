#pragma once

#include <functional>
#include <vector>

#include <json.hpp>

#include "lpq/fixtures/video.hpp"
#include "lpq/harness/config.hpp"
#include "lpq/model.hpp"

namespace lpq::harness {

std::vector<fixtures::CaptionedClip> make_dataset(const RunConfig& cfg);

// Decoupled weight decay Adam over the trainable entries of a store.
class AdamW {
public:
    AdamW(const OptimizerConfig& cfg, const ParamStore& store);
    // grads[i] is the gradient of parameter i (ignored for frozen entries).
    void step(ParamStore& store, const std::vector<diff::Tensor>& grads);
    int steps_taken() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<diff::Tensor> m_, v_;
    int t_ = 0;
};

// Gradient of `loss` for every store entry (zeros for frozen entries).
std::vector<diff::Tensor> collect_gradients(diff::Tape<float>& tape, const Binding<float>& p, diff::Var<float> loss);

struct EvalMetrics {
    objectives::LossBreakdown loss;  // corpus mean
    double psnr = 0;
    double ssim = 0;
    double ar_perplexity = 0;
    std::vector<double> utilization;  // per level

    nlohmann::json to_json() const;
};

struct StepRecord {
    int step = 0;
    objectives::LossBreakdown loss;
};

struct TrainReport {
    nlohmann::json config;
    std::vector<StepRecord> history;
    EvalMetrics initial;
    EvalMetrics final;
    // mean recon of the last tenth of steps below that of the first tenth
    bool recon_trend_decreasing = false;

    nlohmann::json to_json() const;
};

struct TrainResult {
    TrainReport report;
    Model model;
};

// Clip i of an evaluation corpus with its fixed mask.
ClipInput evaluation_input(const RunConfig& cfg, const fixtures::CaptionedClip& clip, std::size_t i);

// Mean masked-input objective over a corpus with fixed evaluation masks.
EvalMetrics evaluate_corpus(const Model& model, const std::vector<fixtures::CaptionedClip>& clips, const RunConfig& cfg,
                            const ForwardOptions& opt = {}, const objectives::LossWeights* weights = nullptr);

using StepCallback = std::function<void(const StepRecord&)>;

TrainResult train_toy(const RunConfig& cfg, const StepCallback& on_step = {});
// Continues training an existing model on a given corpus.
TrainReport train_model(Model& model, const std::vector<fixtures::CaptionedClip>& clips, const RunConfig& cfg,
                        const StepCallback& on_step = {});

inline constexpr double kPsnrCap = 99.0;
double psnr(const diff::Tensor& x, const diff::Tensor& y);
double ssim(const diff::Tensor& x, const diff::Tensor& y);

}  // namespace lpq::harness
