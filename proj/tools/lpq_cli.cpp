#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpq/error.hpp"
#include "lpq/fixtures/container.hpp"
#include "lpq/fixtures/sidecar.hpp"
#include "lpq/harness/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lpq;
using namespace lpq::harness;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

RunConfig load(const Globals& g) {
    RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
    if (g.seed) {
        c.train_seed = *g.seed;
        c.dataset.seed = *g.seed;
    }
    c.validate();
    return c;
}

fs::path out_dir(const Globals& g) {
    fs::create_directories(g.out);
    return fs::path(g.out);
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    require(f.good(), "cannot write '" + p.string() + "'");
    f << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open '" + path + "'");
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

fixtures::TensorMap corpus_map(const std::vector<fixtures::CaptionedClip>& clips) {
    fixtures::TensorMap m;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const std::string key = "clip" + std::to_string(i);
        m[key + "/video"] = clips[i].video.values;
        const auto d = clips[i].video.dims();
        for (const auto& mask : clips[i].masks) {
            std::vector<float> v(mask.voxels.begin(), mask.voxels.end());
            m[key + "/mask/" + mask.unit] = diff::Tensor({d.frames, d.height, d.width}, v);
        }
    }
    return m;
}

std::string corpus_bytes(const std::vector<fixtures::CaptionedClip>& clips) {
    const auto b = fixtures::encode_container(corpus_map(clips));
    return std::string(b.begin(), b.end());
}

// Loads a checkpoint when given, otherwise trains one from the config.
Model obtain_model(const RunConfig& cfg, const std::string& checkpoint) {
    if (!checkpoint.empty()) {
        Model m(cfg.model);
        m.params().load_map(fixtures::read_container(checkpoint));
        return m;
    }
    return train_toy(cfg).model;
}

std::string history_csv(const TrainReport& rep) {
    std::ostringstream s;
    s << std::setprecision(10) << "step,recon,l1,ssim,perceptual,codebook,ar,drift,total\n";
    for (const auto& h : rep.history)
        s << h.step << ',' << h.loss.recon << ',' << h.loss.l1 << ',' << h.loss.ssim << ',' << h.loss.perceptual << ','
          << h.loss.codebook << ',' << h.loss.ar << ',' << h.loss.drift << ',' << h.loss.total << '\n';
    return s.str();
}

int cmd_gen_data(const Globals& g) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    const auto clips = make_dataset(cfg);
    fixtures::write_container(dir / "corpus.lpq1", corpus_map(clips));
    json sidecars = json::array();
    for (const auto& c : clips) sidecars.push_back(fixtures::clip_sidecar(c));
    write_json(dir / "corpus.json", {{"header", report_header(cfg, corpus_bytes(clips))}, {"clips", sidecars}});
    std::cout << "wrote " << clips.size() << " clips to " << (dir / "corpus.lpq1").string() << "\n";
    return 0;
}

int cmd_train(const Globals& g) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    auto res = train_toy(cfg);
    const auto clips = make_dataset(cfg);
    json rep = res.report.to_json();
    rep["header"] = report_header(cfg, corpus_bytes(clips));
    write_json(dir / "report.json", rep);
    write_text(dir / "history.csv", history_csv(res.report));
    fixtures::write_container(dir / "checkpoint.lpq1", res.model.params().to_map());
    const auto& a = res.report.initial;
    const auto& b = res.report.final;
    std::cout << "recon " << a.loss.recon << " -> " << b.loss.recon << ", total " << a.loss.total << " -> "
              << b.loss.total << ", psnr " << b.psnr << " dB\n";
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& axis_s, const std::string& values, int workers) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    const auto axis = axis_from_name(axis_s);
    auto table = run_ablation(cfg, axis, split_list(values), workers);
    write_text(dir / ("ablation_" + axis_s + ".csv"), table.to_csv());
    write_json(dir / ("ablation_" + axis_s + ".json"), table.to_json());
    std::cout << table.to_csv();
    return 0;
}

int cmd_segment(const Globals& g, const std::string& checkpoint, int clip_index, const std::string& units_s,
                const zeroshot::SegmentParams& params) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    const auto clips = make_dataset(cfg);
    require(clip_index >= 0 && clip_index < static_cast<int>(clips.size()),
            "--clip " + std::to_string(clip_index) + " is outside the corpus of " + std::to_string(clips.size()));
    const auto& clip = clips[static_cast<std::size_t>(clip_index)];
    const auto units = units_s.empty() ? clip.semantic_units : split_list(units_s);
    const Model model = obtain_model(cfg, checkpoint);
    const auto mask = segment_clip(model, clip.video.values, clip.caption, units, params);

    fixtures::TensorMap out;
    out["labels"] = diff::Tensor({mask.t, mask.h, mask.w}, std::vector<float>(mask.labels.begin(), mask.labels.end()));
    json iou = json::object();
    for (const auto& u : units) {
        const auto b = mask.binary(u);
        out["mask/" + u] = diff::Tensor({mask.t, mask.h, mask.w}, std::vector<float>(b.begin(), b.end()));
        for (const auto& gt : clip.masks)
            if (gt.unit == u) iou[u] = zeroshot::mask_iou(b, gt.voxels);
    }
    fixtures::write_container(dir / "masks.lpq1", out);
    std::string input = corpus_bytes({clip});
    if (!checkpoint.empty()) input += read_bytes(checkpoint);
    write_json(dir / "masks.json", {{"header", report_header(cfg, input)},
                                    {"clip", clip_index},
                                    {"caption", clip.caption},
                                    {"labels", mask.label_map()},
                                    {"iou_vs_ground_truth", iou},
                                    {"crf",
                                     {{"iterations", params.crf.iterations},
                                      {"pairwise", params.crf.pairwise},
                                      {"threshold", params.threshold}}}});
    std::cout << "labels " << mask.label_map().dump() << ", iou " << iou.dump() << "\n";
    return 0;
}

int cmd_localize(const Globals& g, const std::string& checkpoint, const std::string& queries_s, int window, int stride,
                 double tau) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    const auto clips = make_dataset(cfg);
    std::vector<std::string> queries = split_list(queries_s);
    if (queries.empty()) {
        std::set<std::string> seen;
        for (const auto& c : clips)
            for (const auto& u : c.semantic_units)
                if (seen.insert(u).second) queries.push_back(u);
    }
    const Model model = obtain_model(cfg, checkpoint);
    const auto desc = stream_descriptors(model, clips);
    std::vector<std::vector<double>> per_query;
    json traj = json::array();
    for (const auto& q : queries) {
        auto tr = action::score_trajectory(desc, word_query(model, q), window, stride);
        traj.push_back({{"query", q}, {"frame_scores", tr.frame_scores}, {"window_scores", tr.window_scores}});
        per_query.push_back(std::move(tr.window_scores));
    }
    const auto segs = action::localize_multi(per_query, tau, window, stride);
    std::string lines;
    for (const auto& s : segs) {
        auto j = s.to_json();
        j["query"] = queries[static_cast<std::size_t>(s.query)];
        lines += j.dump() + "\n";
    }
    write_text(dir / "segments.jsonl", lines);
    std::string input = corpus_bytes(clips);
    if (!checkpoint.empty()) input += read_bytes(checkpoint);
    write_json(dir / "localize.json", {{"header", report_header(cfg, input)},
                                       {"frames", desc.size()},
                                       {"window", window},
                                       {"stride", stride},
                                       {"tau", tau},
                                       {"trajectories", traj}});
    std::cout << lines;
    return 0;
}

int cmd_collapse(const Globals& g) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    auto rep = demo_collapse(cfg);
    rep.header = report_header(cfg, corpus_bytes(make_dataset(cfg)));
    write_json(dir / "collapse.json", rep.to_json());
    std::cout << "loss_collapsed " << rep.loss_collapsed << ", loss_trained " << rep.loss_trained << ", margin "
              << rep.margin << "\n";
    return 0;
}

int cmd_codebook_stats(const Globals& g, const std::string& checkpoint) {
    const auto cfg = load(g);
    const auto dir = out_dir(g);
    const auto clips = make_dataset(cfg);
    Model model(cfg.model);
    if (!checkpoint.empty()) model.params().load_map(fixtures::read_container(checkpoint));
    const auto k = model.config().index_space();
    std::vector<std::map<std::uint32_t, std::int64_t>> hist(static_cast<std::size_t>(cfg.model.encoder.levels));
    for (const auto& c : clips) {
        const auto levels = model.quantize(c.video.values, c.caption);
        for (std::size_t l = 0; l < levels.size(); ++l)
            for (auto idx : levels[l].indices) ++hist[l][idx];
    }
    json lv = json::array();
    std::ostringstream csv;
    csv << "level,index,count\n";
    for (std::size_t l = 0; l < hist.size(); ++l) {
        std::int64_t positions = 0;
        for (const auto& [idx, n] : hist[l]) {
            positions += n;
            csv << l + 1 << ',' << idx << ',' << n << '\n';
        }
        lv.push_back({{"level", l + 1},
                      {"positions", positions},
                      {"distinct", hist[l].size()},
                      {"utilization", double(hist[l].size()) / double(k)},
                      {"utilization_bound", std::min(1.0, double(positions) / double(k))}});
    }
    std::string input = corpus_bytes(clips);
    if (!checkpoint.empty()) input += read_bytes(checkpoint);
    write_json(dir / "codebook_stats.json",
               {{"header", report_header(cfg, input)}, {"index_space", k}, {"levels", lv}});
    write_text(dir / "codebook_hist.csv", csv.str());
    std::cout << lv.dump() << "\n";
    return 0;
}

int cmd_export_plots(const Globals& g, const std::string& report_path) {
    const auto dir = out_dir(g);
    const std::string bytes = read_bytes(report_path);
    json rep;
    try {
        rep = json::parse(bytes);
    } catch (const json::exception& e) {
        fail("report '" + report_path + "' is not valid JSON: " + e.what());
    }
    require(rep.contains("history") && rep.contains("final"), "'" + report_path + "' is not a training report");
    std::ostringstream loss;
    loss << std::setprecision(10) << "step,recon,codebook,ar,drift,total\n";
    for (const auto& h : rep["history"])
        loss << h["step"].get<int>() << ',' << h["recon"]["sum"].get<double>() << ','
             << h["codebook"]["sum"].get<double>() << ',' << h["ar"].get<double>() << ',' << h["drift"].get<double>()
             << ',' << h["total"].get<double>() << '\n';
    write_text(dir / "loss_history.csv", loss.str());
    std::ostringstream util;
    util << std::setprecision(10) << "level,initial,final\n";
    const auto& ui = rep["initial"]["utilization"];
    const auto& uf = rep["final"]["utilization"];
    for (std::size_t l = 0; l < uf.size(); ++l)
        util << l + 1 << ',' << ui[l].get<double>() << ',' << uf[l].get<double>() << '\n';
    write_text(dir / "utilization.csv", util.str());
    const std::string h = content_hash(bytes);
    write_json(dir / "plots.json",
               {{"source_report_hash", h}, {"files", {"loss_history.csv", "utilization.csv"}}});
    std::cout << "wrote loss_history.csv and utilization.csv from report " << h << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pyramidal lookup-free video tokenizer toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "RunConfig JSON file (defaults apply to missing keys)");
    app.add_option("--seed", g.seed, "overrides the dataset and training seeds");
    app.add_option("--out", g.out, "output directory")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "write the seeded toy corpus and its sidecars");
    auto* train = app.add_subcommand("train", "train on the toy corpus; writes report, history and checkpoint");

    auto* ablate = app.add_subcommand("ablate", "one training run per axis value; writes CSV and JSON tables");
    std::string axis = "levels", values;
    int workers = 0;
    ablate->add_option("--axis", axis, "quantizer, levels or losses")->capture_default_str();
    ablate->add_option("--values", values, "comma-separated axis values (default: the axis's standard set)");
    ablate->add_option("--workers", workers, "parallel cells (0 = hardware concurrency)")->capture_default_str();

    std::string checkpoint;
    auto* seg = app.add_subcommand("segment", "zero-shot masks for one corpus clip");
    int clip = 0;
    std::string units;
    zeroshot::SegmentParams sp;
    seg->add_option("--checkpoint", checkpoint, "LPQ1 checkpoint from `train` (trains from the config when omitted)");
    seg->add_option("--clip", clip, "corpus clip index")->capture_default_str();
    seg->add_option("--units", units, "comma-separated semantic units (default: the clip's own)");
    seg->add_option("--crf-iters", sp.crf.iterations, "mean-field sweeps")->capture_default_str();
    seg->add_option("--crf-pairwise", sp.crf.pairwise, "pairwise weight")->capture_default_str();
    seg->add_option("--threshold", sp.threshold, "foreground decision point on normalized relevance")
        ->capture_default_str();

    auto* loc = app.add_subcommand("localize", "temporal segments per text query over the corpus played in order");
    std::string queries;
    int window = action::kDefaultWindow, stride = 1;
    double tau = 0.5;
    loc->add_option("--checkpoint", checkpoint, "LPQ1 checkpoint from `train` (trains from the config when omitted)");
    loc->add_option("--queries", queries, "comma-separated query words (default: every unit in the corpus)");
    loc->add_option("--window", window, "window length K in frames")->capture_default_str();
    loc->add_option("--stride", stride, "window stride")->capture_default_str();
    loc->add_option("--tau", tau, "confidence threshold on window scores")->capture_default_str();

    auto* col = app.add_subcommand("collapse-demo", "compare the trained objective with input-independent assignments");

    auto* stats = app.add_subcommand("codebook-stats", "per-level utilization and index histogram on the corpus");
    stats->add_option("--checkpoint", checkpoint, "LPQ1 checkpoint (initialization when omitted)");

    auto* plots = app.add_subcommand("export-plots", "CSV series from a training report");
    std::string report;
    plots->add_option("--report", report, "report.json written by `train`")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_data(g);
        if (*train) return cmd_train(g);
        if (*ablate) return cmd_ablate(g, axis, values, workers);
        if (*seg) return cmd_segment(g, checkpoint, clip, units, sp);
        if (*loc) return cmd_localize(g, checkpoint, queries, window, stride, tau);
        if (*col) return cmd_collapse(g);
        if (*stats) return cmd_codebook_stats(g, checkpoint);
        if (*plots) return cmd_export_plots(g, report);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
