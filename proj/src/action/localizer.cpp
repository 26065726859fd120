#include "lpq/action/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lpq/error.hpp"

namespace lpq::action {

nlohmann::json Segment::to_json() const {
    return {{"query", query}, {"start_frame", start}, {"end_frame", end}, {"mean_score", mean_score}};
}

std::vector<std::vector<double>> frame_descriptors(const lfq::QuantizedField& q1) {
    const auto& p = q1.bit_probs;
    require(p.rank() == 4 && p.dim(0) == q1.bits, "frame_descriptors: bit probabilities must be [bits, T, H, W]");
    const std::int64_t bits = p.dim(0), t = p.dim(1), hw = p.dim(2) * p.dim(3);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(bits)));
    for (std::int64_t f = 0; f < t; ++f) {
        auto& v = out[static_cast<std::size_t>(f)];
        double norm = 0;
        for (std::int64_t b = 0; b < bits; ++b) {
            double acc = 0;
            for (std::int64_t j = 0; j < hw; ++j) acc += 2.0 * p[(b * t + f) * hw + j] - 1.0;
            v[b] = acc / double(hw);
            norm += v[b] * v[b];
        }
        if (norm > 0)
            for (double& x : v) x /= std::sqrt(norm);
    }
    return out;
}

std::vector<double> window_means(const std::vector<double>& s, int window, int stride) {
    require(window >= 1 && stride >= 1, "window and stride must be positive");
    require(static_cast<std::int64_t>(s.size()) >= window,
            "trajectory of " + std::to_string(s.size()) + " frames is shorter than the window " + std::to_string(window));
    std::vector<double> out;
    for (std::size_t a = 0; a + window <= s.size(); a += static_cast<std::size_t>(stride)) {
        double acc = 0;
        for (int k = 0; k < window; ++k) acc += s[a + k];
        out.push_back(acc / window);
    }
    return out;
}

ScoreTrajectory score_trajectory(const std::vector<std::vector<double>>& descriptors, const std::vector<double>& query,
                                 int window, int stride) {
    double qn = 0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn);
    ScoreTrajectory tr;
    tr.window = window;
    tr.stride = stride;
    for (const auto& v : descriptors) {
        require(v.size() == query.size(), "score_trajectory: descriptor and query widths differ");
        double dot = 0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * query[i];
        tr.frame_scores.push_back(qn > 0 ? dot / qn : 0.0);
    }
    tr.window_scores = window_means(tr.frame_scores, window, stride);
    return tr;
}

namespace {

struct Run {
    std::int64_t a, b;
    double mean;
};

std::vector<Run> runs_at_or_above(const std::vector<double>& s, double tau) {
    std::vector<Run> runs;
    const std::int64_t n = static_cast<std::int64_t>(s.size());
    for (std::int64_t i = 0; i < n;) {
        if (!(s[i] >= tau)) {
            ++i;
            continue;
        }
        std::int64_t j = i;
        double acc = 0;
        while (j < n && s[j] >= tau) acc += s[j++];
        runs.push_back({i, j - 1, acc / double(j - i)});
        i = j;
    }
    return runs;
}

Segment to_frames(const Run& r, int window, int stride, int query) {
    return {r.a * stride, r.b * stride + window - 1, r.mean, query};
}

}  // namespace

std::optional<Segment> decode_segments(const std::vector<double>& window_scores, double tau, int window, int stride) {
    require(std::isfinite(tau), "decode_segments: tau must be finite");
    require(window >= 1 && stride >= 1, "window and stride must be positive");
    const auto runs = runs_at_or_above(window_scores, tau);
    if (runs.empty()) return std::nullopt;
    const Run* best = &runs[0];
    for (const auto& r : runs)
        if (r.mean > best->mean) best = &r;
    return to_frames(*best, window, stride, 0);
}

std::vector<Segment> localize_multi(const std::vector<std::vector<double>>& per_query, double tau, int window,
                                    int stride) {
    require(!per_query.empty(), "localize_multi: no queries");
    std::vector<Segment> out;
    for (std::size_t q = 0; q < per_query.size(); ++q) {
        std::vector<double> s = per_query[q];
        // window index ranges, to recompute merged means from the original scores
        std::vector<std::pair<std::int64_t, std::int64_t>> accepted;
        while (true) {
            const auto runs = runs_at_or_above(s, tau);
            if (runs.empty()) break;
            const Run* best = &runs[0];
            for (const auto& r : runs)
                if (r.mean > best->mean) best = &r;
            accepted.emplace_back(best->a, best->b);
            for (std::int64_t j = best->a; j <= best->b; ++j) s[j] = -std::numeric_limits<double>::infinity();
        }
        std::sort(accepted.begin(), accepted.end());
        std::vector<std::pair<std::int64_t, std::int64_t>> merged;
        for (const auto& r : accepted) {
            // frames of window run (a, b) end at b * stride + window - 1
            if (!merged.empty() && r.first * stride <= merged.back().second * stride + window - 1)
                merged.back().second = std::max(merged.back().second, r.second);
            else
                merged.push_back(r);
        }
        const auto& orig = per_query[q];
        for (const auto& [a, b] : merged) {
            double acc = 0;
            for (std::int64_t j = a; j <= b; ++j) acc += orig[j];
            out.push_back(to_frames({a, b, acc / double(b - a + 1)}, window, stride, static_cast<int>(q)));
        }
    }
    return out;
}

std::vector<double> project_query(const diff::Tensor& projection, const std::vector<float>& e_t) {
    require(projection.rank() == 2 && projection.dim(1) == static_cast<std::int64_t>(e_t.size()),
            "project_query: projection must be [bits, text_dim]");
    std::vector<double> out(static_cast<std::size_t>(projection.dim(0)), 0.0);
    for (std::int64_t b = 0; b < projection.dim(0); ++b)
        for (std::int64_t k = 0; k < projection.dim(1); ++k) out[b] += double(projection[b * projection.dim(1) + k]) * e_t[k];
    return out;
}

}  // namespace lpq::action
