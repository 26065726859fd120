#include "lpq/fixtures/text.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>

#include "lpq/error.hpp"

namespace lpq::fixtures {

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> v = {
        // colors
        "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
        // shapes
        "square", "circle", "bar", "diamond",
        // motion
        "left", "right", "up", "down", "still", "moving",
        // size
        "big", "small",
        // scene
        "background", "a", "an", "the", "and", "on", "in", "of", "with", "over",
        "across", "toward", "near", "far", "slowly", "quickly", "is", "object", "scene", "frame",
        "video", "clip", "shape", "color", "light", "dark", "bright", "pale", "top", "bottom",
        "center", "corner", "one", "two", "three", "appears", "stays", "goes", "turns", "while",
        "then", "edge", "side", "region",
    };
    return v;
}

int word_id(const std::string& word) {
    static const auto index = [] {
        std::unordered_map<std::string, int> m;
        const auto& v = vocabulary();
        for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<int>(i));
        return m;
    }();
    auto it = index.find(word);
    if (it == index.end()) fail("unknown word '" + word + "'");
    return it->second;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::vector<float> word_vector(const std::string& word, int dim) {
    require(dim > 0, "text dimension must be positive");
    word_id(word);
    std::mt19937_64 rng(fnv1a(word));
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0;
    for (double& x : v) {
        x = n(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

TextEmbedding embed_text(const std::vector<std::string>& caption, int dim) {
    require(!caption.empty(), "caption must contain at least one word");
    TextEmbedding e;
    const auto n = static_cast<std::int64_t>(caption.size());
    e.word_vectors = diff::Tensor({dim, n});
    std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
    for (std::int64_t k = 0; k < n; ++k) {
        const auto& w = caption[static_cast<std::size_t>(k)];
        e.token_ids.push_back(word_id(w));
        const auto v = word_vector(w, dim);
        for (int i = 0; i < dim; ++i) {
            e.word_vectors[i * n + k] = v[static_cast<std::size_t>(i)];
            acc[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)];
        }
    }
    double norm = 0;
    for (double a : acc) norm += a * a;
    norm = std::sqrt(norm);
    e.vector.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i)
        e.vector[static_cast<std::size_t>(i)] =
            norm > 0 ? static_cast<float>(acc[static_cast<std::size_t>(i)] / norm) : 0.0f;
    return e;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

}  // namespace lpq::fixtures
