#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "lpq/diff/tensor.hpp"
#include "lpq/lfq/codebook.hpp"

namespace lpq::action {

inline constexpr int kDefaultWindow = 25;

struct ScoreTrajectory {
    std::vector<double> frame_scores;   // s_t, length N
    std::vector<double> window_scores;  // S_j, window j starts at frame j * stride
    int window = kDefaultWindow;
    int stride = 1;
};

// Inclusive frame interval.
struct Segment {
    std::int64_t start = 0;
    std::int64_t end = 0;
    double mean_score = 0;
    int query = 0;

    nlohmann::json to_json() const;
    friend bool operator==(const Segment&, const Segment&) = default;
};

// One vector per frame: the spatial mean of centered soft codes 2p - 1,
// L2-normalized. A zero mean stays the zero vector.
std::vector<std::vector<double>> frame_descriptors(const lfq::QuantizedField& q1);

// s_t = <v_t, query> with query L2-normalized inside; zero descriptors score 0.
ScoreTrajectory score_trajectory(const std::vector<std::vector<double>>& descriptors, const std::vector<double>& query,
                                 int window = kDefaultWindow, int stride = 1);

// Window means of arbitrary frame scores.
std::vector<double> window_means(const std::vector<double>& s, int window, int stride = 1);

// Highest-mean maximal run of S_j >= tau (ties to the earliest start),
// expanded to frames (a * stride, b * stride + window - 1).
std::optional<Segment> decode_segments(const std::vector<double>& window_scores, double tau, int window,
                                       int stride = 1);

// Repeated decoding per query with the chosen windows masked out; accepted
// intervals that share a frame are merged. Sorted by (query, start).
std::vector<Segment> localize_multi(const std::vector<std::vector<double>>& window_scores_per_query, double tau,
                                    int window, int stride = 1);

// Projects a text embedding into bit space through a [bits, text_dim] matrix.
std::vector<double> project_query(const diff::Tensor& projection, const std::vector<float>& e_t);

}  // namespace lpq::action
