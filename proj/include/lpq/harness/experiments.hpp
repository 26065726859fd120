#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lpq/action/localizer.hpp"
#include "lpq/diff/grad_check.hpp"
#include "lpq/harness/train.hpp"
#include "lpq/zeroshot/segment.hpp"

namespace lpq::harness {

// Config plus git-style content hashes of the config and of any input bytes.
nlohmann::json report_header(const RunConfig& cfg, const std::string& input_bytes = "");

enum class AblationAxis { Quantizer, Levels, Losses };

std::string axis_name(AblationAxis a);
AblationAxis axis_from_name(const std::string& s);
// quantizer: vq gvq rvq lfq lapq; levels: 2 3 4; losses: full no_drift no_ar no_codebook
std::vector<std::string> default_axis_values(AblationAxis a);

struct AblationRow {
    std::string value;
    RunConfig config;
    EvalMetrics initial;
    EvalMetrics final;
    // Final objective under the base config's loss weights, so rows that
    // trained without a term are still scored on the full objective.
    double total_full_weights = 0;
    std::vector<objectives::LossBreakdown> history;
};

struct AblationTable {
    AblationAxis axis = AblationAxis::Levels;
    RunConfig base;
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& value) const;
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

// Config of one ablation cell; every cell keeps the base seeds and corpus.
RunConfig ablation_cell(const RunConfig& base, AblationAxis axis, const std::string& value);

// One training run per value. Cells are independent and run on up to
// `workers` threads (0 = hardware concurrency); output order follows `values`.
AblationTable run_ablation(const RunConfig& base, AblationAxis axis, std::vector<std::string> values = {},
                           int workers = 0);

struct CollapseCandidate {
    std::string name;
    std::vector<std::vector<double>> constants;  // [level][bit]
    double total = 0;
};

struct CollapseReport {
    nlohmann::json header;
    double loss_collapsed = 0;  // best candidate
    double loss_trained = 0;
    double margin = 0;
    std::vector<CollapseCandidate> candidates;
    // max over clip pairs of mean |x_i - x_j| between collapsed reconstructions
    double collapsed_output_distance = 0;
    TrainReport training;

    nlohmann::json to_json() const;
};

// Rejects corpora without two distinct clips.
void require_nondegenerate(const std::vector<fixtures::CaptionedClip>& clips);

// Trains on the config's corpus, then scores input-independent assignments
// built from the trained pre-activations: the per-bit corpus mean of z, and
// its sign.
CollapseReport demo_collapse(const RunConfig& cfg, const StepCallback& on_step = {});

// Finite-difference check of the full objective on one input, over every
// trainable tensor. The sign is relaxed to hardtanh so the objective is
// piecewise smooth; entries whose perturbation flips a code sign or crosses
// the clamp bound are skipped.
diff::GradCheckReport model_grad_check(const Model& model, const ClipInput& in, diff::GradCheckOptions opt);

// Joint mask for `units` from the model's last level on an unmasked clip.
zeroshot::MaskVolume segment_clip(const Model& model, const diff::Tensor& video, const std::vector<std::string>& caption,
                                  const std::vector<std::string>& units, const zeroshot::SegmentParams& params = {});

struct GroundingResult {
    std::vector<double> dominant_iou;  // per clip: IoU of the largest object's mask
    double mean_dominant_iou = 0;
    // clips with two or more objects, and how many of those had overlapping predicted masks
    int multi_object_clips = 0;
    int overlapping = 0;

    nlohmann::json to_json() const;
};

GroundingResult evaluate_grounding(const Model& model, const std::vector<fixtures::CaptionedClip>& clips,
                                   const zeroshot::SegmentParams& params = {});

// Per-frame level-1 descriptors over clips played back to back.
std::vector<std::vector<double>> stream_descriptors(const Model& model, const std::vector<fixtures::CaptionedClip>& clips);
// A word's query in level-1 bit space.
std::vector<double> word_query(const Model& model, const std::string& word);

}  // namespace lpq::harness
