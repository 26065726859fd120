#include "lpq/harness/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <memory>
#include <sstream>
#include <thread>

namespace lpq::harness {

using nlohmann::json;

json report_header(const RunConfig& cfg, const std::string& input_bytes) {
    const json c = to_json(cfg);
    return {{"config", c}, {"config_hash", content_hash(c.dump())}, {"input_hash", content_hash(input_bytes)}};
}

std::string axis_name(AblationAxis a) {
    switch (a) {
        case AblationAxis::Quantizer: return "quantizer";
        case AblationAxis::Levels: return "levels";
        case AblationAxis::Losses: return "losses";
    }
    return "levels";
}

AblationAxis axis_from_name(const std::string& s) {
    for (auto a : {AblationAxis::Quantizer, AblationAxis::Levels, AblationAxis::Losses})
        if (axis_name(a) == s) return a;
    fail("unknown ablation axis '" + s + "' (expected quantizer, levels or losses)");
}

std::vector<std::string> default_axis_values(AblationAxis a) {
    switch (a) {
        case AblationAxis::Quantizer: return {"vq", "gvq", "rvq", "lfq", "lapq"};
        case AblationAxis::Levels: return {"2", "3", "4"};
        case AblationAxis::Losses: return {"full", "no_drift", "no_ar", "no_codebook"};
    }
    return {};
}

RunConfig ablation_cell(const RunConfig& base, AblationAxis axis, const std::string& value) {
    RunConfig c = base;
    switch (axis) {
        case AblationAxis::Quantizer:
            c.model.variant = variant_from_name(value);
            break;
        case AblationAxis::Levels: {
            int levels = 0;
            std::size_t used = 0;
            try {
                levels = std::stoi(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == value.size() && levels >= 1, "levels axis value '" + value + "' is not a positive integer");
            c.model.encoder.levels = levels;
            break;
        }
        case AblationAxis::Losses:
            if (value == "no_drift")
                c.model.weights.drift = 0;
            else if (value == "no_ar")
                c.model.weights.ar = 0;
            else if (value == "no_codebook")
                c.model.weights.codebook = 0;
            else
                require(value == "full", "unknown losses axis value '" + value +
                                             "' (expected full, no_drift, no_ar or no_codebook)");
            break;
    }
    c.validate();
    return c;
}

const AblationRow& AblationTable::row(const std::string& value) const {
    for (const auto& r : rows)
        if (r.value == value) return r;
    fail("ablation table has no row '" + value + "'");
}

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + fmt(v[i]);
    return out;
}

}  // namespace

std::string AblationTable::to_csv() const {
    std::ostringstream s;
    s << axis_name(axis)
      << ",variant,levels,model_seed,train_seed,dataset_seed,steps,recon_initial,recon_final,codebook_final,ar_final,"
         "drift_final,total_final,total_full_weights,psnr_db,ssim,utilization\n";
    for (const auto& r : rows) {
        const auto& m = r.config.model;
        s << r.value << ',' << variant_name(m.variant) << ',' << m.encoder.levels << ',' << m.seed << ','
          << r.config.train_seed << ',' << r.config.dataset.seed << ',' << r.config.optimizer.steps << ','
          << fmt(r.initial.loss.recon) << ',' << fmt(r.final.loss.recon) << ',' << fmt(r.final.loss.codebook) << ','
          << fmt(r.final.loss.ar) << ',' << fmt(r.final.loss.drift) << ',' << fmt(r.final.loss.total) << ','
          << fmt(r.total_full_weights) << ',' << fmt(r.final.psnr) << ',' << fmt(r.final.ssim) << ','
          << join(r.final.utilization) << '\n';
    }
    return s.str();
}

json AblationTable::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"value", r.value},
                          {"config", harness::to_json(r.config)},
                          {"initial", r.initial.to_json()},
                          {"final", r.final.to_json()},
                          {"total_full_weights", r.total_full_weights}});
    return {{"header", report_header(base)}, {"axis", axis_name(axis)}, {"rows", rows_j}};
}

AblationTable run_ablation(const RunConfig& base, AblationAxis axis, std::vector<std::string> values, int workers) {
    base.validate();
    if (values.empty()) values = default_axis_values(axis);
    AblationTable table;
    table.axis = axis;
    table.base = base;
    table.rows.resize(values.size());
    // configs are checked up front so a bad value fails before any training
    for (std::size_t i = 0; i < values.size(); ++i) {
        table.rows[i].value = values[i];
        table.rows[i].config = ablation_cell(base, axis, values[i]);
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(values.size());
    auto worker = [&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
            try {
                auto& row = table.rows[i];
                Model model(row.config.model);
                const auto clips = make_dataset(row.config);
                auto rep = train_model(model, clips, row.config);
                row.initial = rep.initial;
                row.final = rep.final;
                for (const auto& h : rep.history) row.history.push_back(h.loss);
                row.total_full_weights = evaluate_corpus(model, clips, row.config, {}, &base.model.weights).loss.total;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    unsigned n = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
    n = std::min<unsigned>(n, static_cast<unsigned>(values.size()));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return table;
}

void require_nondegenerate(const std::vector<fixtures::CaptionedClip>& clips) {
    for (std::size_t i = 1; i < clips.size(); ++i) {
        const auto a = clips[0].video.values.values(), b = clips[i].video.values.values();
        if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return;
    }
    fail("degenerate corpus: collapse demonstration needs at least two distinct clips");
}

json CollapseReport::to_json() const {
    json c = json::array();
    for (const auto& k : candidates) c.push_back({{"name", k.name}, {"total", k.total}, {"constants", k.constants}});
    return {{"header", header},
            {"loss_collapsed", loss_collapsed},
            {"loss_trained", loss_trained},
            {"margin", margin},
            {"collapsed_output_distance", collapsed_output_distance},
            {"candidates", c},
            {"initial", training.initial.to_json()},
            {"final", training.final.to_json()}};
}

CollapseReport demo_collapse(const RunConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    const auto clips = make_dataset(cfg);
    require_nondegenerate(clips);
    Model model(cfg.model);
    CollapseReport rep;
    rep.header = report_header(cfg);
    rep.training = train_model(model, clips, cfg, on_step);
    rep.loss_trained = rep.training.final.loss.total;

    const int levels = cfg.model.encoder.levels, bits = cfg.model.codebook.bits;
    std::vector<std::vector<double>> mean(static_cast<std::size_t>(levels), std::vector<double>(bits, 0.0));
    std::vector<double> count(static_cast<std::size_t>(levels), 0.0);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        diff::Tape<float> tape;
        auto r = model.evaluate(tape, evaluation_input(cfg, clips[i], i));
        for (int l = 0; l < levels; ++l) {
            const auto& z = r.levels[l].z.value();
            const std::int64_t n = z.dim(1);
            for (int b = 0; b < bits; ++b)
                for (std::int64_t j = 0; j < n; ++j) mean[l][b] += z[b * n + j];
            count[l] += static_cast<double>(n);
        }
    }
    for (int l = 0; l < levels; ++l)
        for (double& v : mean[l]) v /= count[l];
    auto signs = mean;
    for (auto& lv : signs)
        for (double& v : lv) v = v >= 0 ? 1.0 : -1.0;
    rep.candidates = {{"mean_preactivation", mean, 0}, {"sign_of_mean", signs, 0}};

    rep.loss_collapsed = INFINITY;
    for (auto& c : rep.candidates) {
        ForwardOptions o;
        o.collapse = c.constants;
        c.total = evaluate_corpus(model, clips, cfg, o).loss.total;
        rep.loss_collapsed = std::min(rep.loss_collapsed, c.total);
    }
    rep.margin = rep.loss_collapsed - rep.loss_trained;

    ForwardOptions o;
    o.collapse = rep.candidates.front().constants;
    std::vector<diff::Tensor> outs;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        diff::Tape<float> tape;
        outs.push_back(model.evaluate(tape, evaluation_input(cfg, clips[i], i), o).reconstruction.value());
    }
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = i + 1; j < outs.size(); ++j) {
            double d = 0;
            for (std::int64_t k = 0; k < outs[i].size(); ++k) d += std::abs(double(outs[i][k]) - double(outs[j][k]));
            rep.collapsed_output_distance = std::max(rep.collapsed_output_distance, d / double(outs[i].size()));
        }
    return rep;
}

}  // namespace lpq::harness

namespace lpq::harness {

zeroshot::MaskVolume segment_clip(const Model& model, const diff::Tensor& video, const std::vector<std::string>& caption,
                                  const std::vector<std::string>& units, const zeroshot::SegmentParams& params) {
    const auto& cfg = model.config();
    const auto levels = model.quantize(video, caption);
    const auto& fusion = model.params().value(pyramid::block_param(cfg.encoder.levels, "o.w"));
    return zeroshot::segment_all(video, levels.back(), units, fusion, cfg.quantizer.text_dim, params);
}

json GroundingResult::to_json() const {
    return {{"dominant_iou", dominant_iou},
            {"mean_dominant_iou", mean_dominant_iou},
            {"multi_object_clips", multi_object_clips},
            {"overlapping", overlapping}};
}

GroundingResult evaluate_grounding(const Model& model, const std::vector<fixtures::CaptionedClip>& clips,
                                   const zeroshot::SegmentParams& params) {
    require(!clips.empty(), "evaluate_grounding: empty corpus");
    GroundingResult g;
    for (const auto& clip : clips) {
        require(!clip.masks.empty(), "evaluate_grounding: clip without objects");
        std::size_t dom = 0, dom_area = 0;
        for (std::size_t k = 0; k < clip.masks.size(); ++k) {
            std::size_t area = 0;
            for (auto v : clip.masks[k].voxels) area += v;
            if (area > dom_area) {
                dom = k;
                dom_area = area;
            }
        }
        const auto& unit = clip.masks[dom].unit;
        const auto single = segment_clip(model, clip.video.values, clip.caption, {unit}, params);
        g.dominant_iou.push_back(zeroshot::mask_iou(single.binary(unit), clip.masks[dom].voxels));
        if (clip.semantic_units.size() >= 2) {
            ++g.multi_object_clips;
            const auto joint = segment_clip(model, clip.video.values, clip.caption, clip.semantic_units, params);
            const auto a = joint.binary(clip.semantic_units[0]), b = joint.binary(clip.semantic_units[1]);
            bool overlap = false;
            for (std::size_t i = 0; i < a.size(); ++i) overlap = overlap || (a[i] && b[i]);
            g.overlapping += overlap;
        }
    }
    for (double v : g.dominant_iou) g.mean_dominant_iou += v / double(g.dominant_iou.size());
    return g;
}

std::vector<std::vector<double>> stream_descriptors(const Model& model, const std::vector<fixtures::CaptionedClip>& clips) {
    std::vector<std::vector<double>> out;
    for (const auto& clip : clips) {
        const auto levels = model.quantize(clip.video.values, clip.caption);
        const auto& q1 = levels.front();
        require(q1.grid.t == model.config().video.frames,
                "level 1 must keep full temporal resolution for frame descriptors");
        for (auto& d : action::frame_descriptors(q1)) out.push_back(std::move(d));
    }
    return out;
}

std::vector<double> word_query(const Model& model, const std::string& word) {
    const int d = model.config().quantizer.text_dim;
    return action::project_query(model.params().value(pyramid::block_param(1, "o.w")), fixtures::word_vector(word, d));
}

}  // namespace lpq::harness

namespace lpq::harness {

diff::GradCheckReport model_grad_check(const Model& model, const ClipInput& in, diff::GradCheckOptions opt) {
    const auto& store = model.params();
    std::vector<int> idx;
    std::vector<diff::NamedTensor64> theta;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& prm = store.at(static_cast<int>(i));
        if (!prm.trainable) continue;
        idx.push_back(static_cast<int>(i));
        theta.push_back({prm.name, prm.value.cast<double>()});
    }
    const double bound = model.config().codebook.ste_bound;
    auto digest = std::make_shared<std::uint64_t>(0);
    diff::GraphFn<double> f = [&model, &store, &in, idx, bound, digest](diff::Tape<double>& tape,
                                                                          const std::vector<diff::Var<double>>& vars) {
        Binding<double> p(tape, store, vars, idx);
        ForwardOptions o;
        o.mode = lfq::SignMode::Relaxed;
        auto r = model.forward(p, in, o);
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& q : r.levels)
            for (double z : q.z.value().values()) {
                const std::uint64_t state = (z >= 0 ? 1u : 0u) | (std::abs(z) >= bound ? 2u : 0u);
                h = (h ^ state) * 1099511628211ULL;
            }
        *digest = h;
        return r.total;
    };
    opt.discrete_state = [digest] { return *digest; };
    return diff::grad_check(f, theta, opt);
}

}  // namespace lpq::harness
