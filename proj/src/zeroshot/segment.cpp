#include "lpq/zeroshot/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lpq/error.hpp"
#include "lpq/fixtures/text.hpp"

namespace lpq::zeroshot {

void CRFParams::validate() const {
    require(pairwise >= 0 && std::isfinite(pairwise), "crf: pairwise weight must be finite and >= 0");
    require(theta_s > 0 && theta_t > 0 && theta_a > 0, "crf: kernel bandwidths must be positive");
    require(iterations >= 0, "crf: iteration count must be non-negative");
    require(damping > 0 && damping <= 1, "crf: damping must be in (0, 1]");
}

std::vector<std::uint8_t> MaskVolume::binary(const std::string& unit) const {
    auto it = std::find(units.begin(), units.end(), unit);
    require(it != units.end(), "mask has no unit '" + unit + "'");
    const auto id = static_cast<std::uint8_t>(it - units.begin() + 1);
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == id;
    return out;
}

nlohmann::json MaskVolume::label_map() const {
    nlohmann::json j = nlohmann::json::object();
    j["background"] = 0;
    for (std::size_t u = 0; u < units.size(); ++u) j[units[u]] = u + 1;
    return j;
}

RelevanceVolume relevance_map(const lfq::QuantizedField& q, const std::vector<float>& e_w, const diff::Tensor& fusion,
                              const std::string& unit) {
    const std::int64_t bits = q.bits, d = static_cast<std::int64_t>(e_w.size());
    require(fusion.rank() == 2 && fusion.dim(0) == bits && fusion.dim(1) == d,
            "relevance_map: fusion projection must be [bits, text_dim]");
    double norm = 0;
    for (float v : e_w) norm += double(v) * v;
    require(std::abs(std::sqrt(norm) - 1.0) < 1e-4, "relevance_map: word embedding must be unit norm");
    const std::int64_t n = q.grid.positions();
    RelevanceVolume out{unit, diff::Tensor({q.grid.t, q.grid.h, q.grid.w})};
    std::vector<double> token(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < n; ++j) {
        std::fill(token.begin(), token.end(), 0.0);
        for (std::int64_t b = 0; b < bits; ++b) {
            const double c = q.hard_code[b * n + j];
            for (std::int64_t k = 0; k < d; ++k) token[k] += fusion[b * d + k] * c;
        }
        double dot = 0, tn = 0;
        for (std::int64_t k = 0; k < d; ++k) {
            dot += token[k] * e_w[k];
            tn += token[k] * token[k];
        }
        const double cos = tn > 0 ? dot / std::sqrt(tn) : 0.0;
        out.scores[j] = static_cast<float>(std::clamp(cos, -1.0, 1.0));
    }
    return out;
}

namespace {

// Source coordinate and blend weight for output index i under align-corners.
void corner_map(std::int64_t i, std::int64_t in, std::int64_t out, std::int64_t& i0, double& frac) {
    if (in == 1 || out == 1) {
        i0 = 0;
        frac = 0;
        return;
    }
    const double s = double(i) * double(in - 1) / double(out - 1);
    i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(s)), in - 2);
    frac = s - double(i0);
}

}  // namespace

RelevanceVolume upsample_scores(const RelevanceVolume& vol, std::int64_t t, std::int64_t h, std::int64_t w) {
    require(vol.scores.rank() == 3, "upsample_scores: expected a [T, H, W] volume");
    const std::int64_t ti = vol.scores.dim(0), hi = vol.scores.dim(1), wi = vol.scores.dim(2);
    require(t >= ti && h >= hi && w >= wi && t % ti == 0 && h % hi == 0 && w % wi == 0,
            "upsample_scores: target " + diff::shape_str({t, h, w}) + " is not an integer multiple of " +
                diff::shape_str(vol.scores.dims()));
    RelevanceVolume out{vol.unit, diff::Tensor({t, h, w})};
    auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
        return double(vol.scores[(std::min(a, ti - 1) * hi + std::min(b, hi - 1)) * wi + std::min(c, wi - 1)]);
    };
    for (std::int64_t z = 0; z < t; ++z) {
        std::int64_t z0;
        double fz;
        corner_map(z, ti, t, z0, fz);
        for (std::int64_t y = 0; y < h; ++y) {
            std::int64_t y0;
            double fy;
            corner_map(y, hi, h, y0, fy);
            for (std::int64_t x = 0; x < w; ++x) {
                std::int64_t x0;
                double fx;
                corner_map(x, wi, w, x0, fx);
                double acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const double wgt = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                            if (wgt != 0) acc += wgt * at(z0 + dz, y0 + dy, x0 + dx);
                        }
                out.scores[(z * h + y) * w + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

namespace {

struct Grid {
    std::int64_t c, t, h, w;
    std::int64_t voxels() const { return t * h * w; }
};

Grid check_inputs(const std::vector<diff::Tensor>& unaries, const diff::Tensor& video) {
    require(!unaries.empty(), "crf: empty label set");
    require(unaries.size() <= 256, "crf: at most 256 labels");
    require(video.rank() == 4, "crf: video must be [C, T, H, W]");
    const Grid g{video.dim(0), video.dim(1), video.dim(2), video.dim(3)};
    for (const auto& u : unaries)
        require(u.dims() == diff::Shape{g.t, g.h, g.w},
                "crf: unary " + diff::shape_str(u.dims()) + " does not match the video grid");
    return g;
}

// Calls f(j, k_ij) for every neighbor j != i inside the truncated kernel.
template <typename F>
void for_neighbors(const Grid& g, const diff::Tensor& video, const CRFParams& p, std::int64_t i, F&& f) {
    const std::int64_t rs = static_cast<std::int64_t>(std::ceil(3 * p.theta_s));
    const std::int64_t rt = static_cast<std::int64_t>(std::ceil(3 * p.theta_t));
    const std::int64_t t = i / (g.h * g.w), y = (i / g.w) % g.h, x = i % g.w;
    const std::int64_t plane = g.voxels();
    const double is2 = 1.0 / (2 * p.theta_s * p.theta_s), it2 = 1.0 / (2 * p.theta_t * p.theta_t),
                 ia2 = 1.0 / (2 * p.theta_a * p.theta_a);
    for (std::int64_t tt = std::max<std::int64_t>(0, t - rt); tt <= std::min(g.t - 1, t + rt); ++tt)
        for (std::int64_t yy = std::max<std::int64_t>(0, y - rs); yy <= std::min(g.h - 1, y + rs); ++yy)
            for (std::int64_t xx = std::max<std::int64_t>(0, x - rs); xx <= std::min(g.w - 1, x + rs); ++xx) {
                const std::int64_t j = (tt * g.h + yy) * g.w + xx;
                if (j == i) continue;
                const double ds = double((yy - y) * (yy - y) + (xx - x) * (xx - x));
                if (ds > double(rs * rs)) continue;
                double da = 0;
                for (std::int64_t c = 0; c < g.c; ++c) {
                    const double diff = double(video[c * plane + i]) - double(video[c * plane + j]);
                    da += diff * diff;
                }
                f(j, std::exp(-ds * is2 - double((tt - t) * (tt - t)) * it2 - da * ia2));
            }
}

}  // namespace

double crf_free_energy(const std::vector<double>& q, const std::vector<diff::Tensor>& unaries, const diff::Tensor& video,
                       const CRFParams& params) {
    params.validate();
    const Grid g = check_inputs(unaries, video);
    const std::int64_t n = g.voxels(), labels = static_cast<std::int64_t>(unaries.size());
    require(static_cast<std::int64_t>(q.size()) == labels * n, "crf_free_energy: marginals have the wrong size");
    double e = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t l = 0; l < labels; ++l) {
            const double qi = q[l * n + i];
            e -= qi * unaries[l][i];
            if (qi > 0) e += qi * std::log(qi);
        }
        if (params.pairwise == 0) continue;
        for_neighbors(g, video, params, i, [&](std::int64_t j, double k) {
            if (j < i) return;
            double agree = 0;
            for (std::int64_t l = 0; l < labels; ++l) agree += q[l * n + i] * q[l * n + j];
            e += params.pairwise * k * (1 - agree);
        });
    }
    return e;
}

CRFResult crf_mean_field(const std::vector<diff::Tensor>& unaries, const diff::Tensor& video, const CRFParams& params) {
    params.validate();
    const Grid g = check_inputs(unaries, video);
    const std::int64_t n = g.voxels(), labels = static_cast<std::int64_t>(unaries.size());
    CRFResult r;
    auto& q = r.marginals;
    q.assign(static_cast<std::size_t>(labels * n), 0.0);
    std::vector<double> logits(static_cast<std::size_t>(labels));
    auto softmax_into = [&](std::int64_t i, double alpha) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : logits) mx = std::max(mx, v);
        double z = 0;
        for (double& v : logits) z += (v = std::exp(v - mx));
        double total = 0;
        for (std::int64_t l = 0; l < labels; ++l) {
            double& qi = q[l * n + i];
            qi = (1 - alpha) * qi + alpha * logits[l] / z;
            total += qi;
        }
        r.max_marginal_error = std::max(r.max_marginal_error, std::abs(total - 1));
    };
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t l = 0; l < labels; ++l) logits[l] = unaries[l][i];
        softmax_into(i, 1.0);
    }
    r.energy.push_back(crf_free_energy(q, unaries, video, params));
    if (params.pairwise > 0) {
        for (int it = 0; it < params.iterations; ++it) {
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t l = 0; l < labels; ++l) logits[l] = unaries[l][i];
                for_neighbors(g, video, params, i, [&](std::int64_t j, double k) {
                    for (std::int64_t l = 0; l < labels; ++l) logits[l] += params.pairwise * k * q[l * n + j];
                });
                softmax_into(i, params.damping);
            }
            r.energy.push_back(crf_free_energy(q, unaries, video, params));
        }
    }
    r.mask.t = g.t;
    r.mask.h = g.h;
    r.mask.w = g.w;
    r.mask.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        for (std::int64_t l = 1; l < labels; ++l)
            if (q[l * n + i] > q[best * n + i]) best = l;
        r.mask.labels[i] = static_cast<std::uint8_t>(best);
    }
    return r;
}

MaskVolume segment_all(const diff::Tensor& video, const lfq::QuantizedField& q_last,
                       const std::vector<std::string>& units, const diff::Tensor& fusion, int text_dim,
                       const SegmentParams& params) {
    params.crf.validate();
    require(video.rank() == 4, "segment_all: video must be [C, T, H, W]");
    const std::int64_t t = video.dim(1), h = video.dim(2), w = video.dim(3);
    require(units.size() < 256, "segment_all: too many units");
    for (const auto& u : units) fixtures::word_id(u);
    if (units.empty()) {
        MaskVolume m;
        m.t = t;
        m.h = h;
        m.w = w;
        m.labels.assign(static_cast<std::size_t>(t * h * w), 0);
        return m;
    }
    std::vector<diff::Tensor> unaries{diff::Tensor({t, h, w})};
    for (const auto& u : units) {
        auto vol = upsample_scores(relevance_map(q_last, fixtures::word_vector(u, text_dim), fusion, u), t, h, w);
        float lo = vol.scores[0], hi = vol.scores[0];
        for (float v : vol.scores.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (auto& v : vol.scores.values()) v = hi > lo ? (v - lo) / (hi - lo) : 0.5f;
        unaries.push_back(vol.scores);
    }
    auto& bg = unaries[0];
    for (std::int64_t i = 0; i < bg.size(); ++i) {
        float mx = unaries[1][i];
        for (std::size_t u = 2; u < unaries.size(); ++u) mx = std::max(mx, unaries[u][i]);
        bg[i] = static_cast<float>(2 * params.threshold) - mx;
    }
    for (auto& u : unaries)
        for (auto& v : u.values()) v = static_cast<float>(v * params.unary_scale);
    auto r = crf_mean_field(unaries, video, params.crf);
    r.mask.units = units;
    return r.mask;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    require(a.size() == b.size(), "mask_iou: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
    }
    return uni ? double(inter) / double(uni) : 1.0;
}

}  // namespace lpq::zeroshot
