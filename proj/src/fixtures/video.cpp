#include "lpq/fixtures/video.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "lpq/error.hpp"

namespace lpq::fixtures {

void validate_dims(const VideoDims& dims, int levels) {
    require(dims.channels >= 1, "video needs at least one channel");
    require(dims.frames >= 2, "video needs at least 2 frames");
    require(levels >= 0 && levels < 16, "bad pyramid level count");
    const std::int64_t f = std::int64_t{1} << levels;
    require(dims.height > 0 && dims.width > 0 && dims.height % f == 0 && dims.width % f == 0,
            "height and width must be divisible by 2^" + std::to_string(levels));
}

Video::Video(diff::Tensor v) : values(std::move(v)) {
    require(values.rank() == 4, "video tensor must be C x T x H x W, got " + diff::shape_str(values.dims()));
}

Video::Video(const VideoDims& dims, float fill) : values(dims.shape(), fill) {}

VideoDims Video::dims() const {
    return {values.dim(0), values.dim(1), values.dim(2), values.dim(3)};
}

float& Video::at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) {
    const auto& d = values.dims();
    return values[((c * d[1] + t) * d[2] + y) * d[3] + x];
}

float Video::at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) const {
    const auto& d = values.dims();
    return values[((c * d[1] + t) * d[2] + y) * d[3] + x];
}

namespace {

const std::map<std::string, std::array<float, 3>>& palette() {
    static const std::map<std::string, std::array<float, 3>> p = {
        {"red", {0.95f, 0.15f, 0.12f}},   {"green", {0.15f, 0.85f, 0.2f}},   {"blue", {0.15f, 0.25f, 0.95f}},
        {"yellow", {0.95f, 0.9f, 0.15f}}, {"cyan", {0.15f, 0.9f, 0.92f}},    {"magenta", {0.9f, 0.15f, 0.85f}},
        {"white", {0.97f, 0.97f, 0.97f}}, {"orange", {0.98f, 0.55f, 0.1f}},
    };
    return p;
}

std::string motion_word(const SceneObject& o) {
    if (o.vx == 0.0f && o.vy == 0.0f) return "still";
    if (std::abs(o.vx) >= std::abs(o.vy)) return o.vx > 0 ? "right" : "left";
    return o.vy > 0 ? "down" : "up";
}

bool inside(const SceneObject& o, float px, float py) {
    const float dx = px - o.x, dy = py - o.y, s = o.size;
    switch (o.shape) {
        case ShapeKind::Square: return std::abs(dx) <= s && std::abs(dy) <= s;
        case ShapeKind::Circle: return dx * dx + dy * dy <= s * s;
        case ShapeKind::Bar: return std::abs(dx) <= s && std::abs(dy) <= 0.5f * s;
        case ShapeKind::Diamond: return std::abs(dx) + std::abs(dy) <= s;
    }
    return false;
}

bool fits(const SceneObject& o, const VideoDims& dims) {
    for (std::int64_t t = 0; t < dims.frames; ++t) {
        const float cx = o.x + o.vx * static_cast<float>(t);
        const float cy = o.y + o.vy * static_cast<float>(t);
        if (cx - o.size < 0 || cx + o.size > static_cast<float>(dims.width)) return false;
        if (cy - o.size < 0 || cy + o.size > static_cast<float>(dims.height)) return false;
    }
    return true;
}

}  // namespace

std::string shape_word(ShapeKind s) {
    switch (s) {
        case ShapeKind::Square: return "square";
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Bar: return "bar";
        case ShapeKind::Diamond: return "diamond";
    }
    return "square";
}

ShapeKind shape_from_word(const std::string& w) {
    if (w == "square") return ShapeKind::Square;
    if (w == "circle") return ShapeKind::Circle;
    if (w == "bar") return ShapeKind::Bar;
    if (w == "diamond") return ShapeKind::Diamond;
    fail("unknown shape '" + w + "'");
}

const std::vector<std::string>& color_words() {
    static const std::vector<std::string> c = {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"};
    return c;
}

const std::vector<std::string>& shape_words() {
    static const std::vector<std::string> s = {"square", "circle", "bar", "diamond"};
    return s;
}

std::vector<std::uint8_t> rasterize(const SceneObject& obj, const VideoDims& dims) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(dims.voxels()), 0);
    for (std::int64_t t = 0; t < dims.frames; ++t) {
        SceneObject at = obj;
        at.x = obj.x + obj.vx * static_cast<float>(t);
        at.y = obj.y + obj.vy * static_cast<float>(t);
        for (std::int64_t y = 0; y < dims.height; ++y)
            for (std::int64_t x = 0; x < dims.width; ++x)
                if (inside(at, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f))
                    m[static_cast<std::size_t>((t * dims.height + y) * dims.width + x)] = 1;
    }
    return m;
}

CaptionedClip make_clip(const SceneSpec& scene, const VideoDims& dims, std::uint64_t seed, int levels) {
    validate_dims(dims, levels);
    require(dims.channels == 3, "clips are rendered with 3 channels");
    std::set<int> ids;
    std::set<std::string> colors;
    for (const auto& o : scene) {
        require(ids.insert(o.id).second, "duplicate object id " + std::to_string(o.id));
        require(palette().count(o.color) == 1, "unknown color '" + o.color + "'");
        require(colors.insert(o.color).second, "objects in one scene need distinct colors");
        require(o.size > 0, "object size must be positive");
        require(fits(o, dims), "object " + std::to_string(o.id) + " leaves the frame");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> bg(0.1f, 0.35f);
    const std::array<float, 3> background = {bg(rng), bg(rng), bg(rng)};

    CaptionedClip clip;
    clip.scene = scene;
    clip.video = Video(dims);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < dims.voxels(); ++i) clip.video.values[c * dims.voxels() + i] = background[c];

    for (const auto& o : scene) {
        auto footprint = rasterize(o, dims);
        const auto& rgb = palette().at(o.color);
        for (std::int64_t i = 0; i < dims.voxels(); ++i)
            if (footprint[static_cast<std::size_t>(i)])
                for (std::int64_t c = 0; c < 3; ++c) clip.video.values[c * dims.voxels() + i] = rgb[c];
        clip.masks.push_back({o.id, o.color, std::move(footprint)});
        clip.semantic_units.push_back(o.color);
    }

    if (scene.empty()) {
        clip.caption = {"background"};
        return clip;
    }
    const float big = 0.2f * static_cast<float>(std::min(dims.height, dims.width));
    for (std::size_t k = 0; k < scene.size(); ++k) {
        const auto& o = scene[k];
        if (k > 0) clip.caption.push_back("and");
        clip.caption.insert(clip.caption.end(), {"a", o.size >= big ? "big" : "small", o.color, shape_word(o.shape),
                                                 "moving", motion_word(o)});
    }
    clip.caption.insert(clip.caption.end(), {"on", "background"});
    return clip;
}

SceneSpec random_scene(const VideoDims& dims, std::uint64_t seed, int max_objects) {
    require(max_objects >= 1, "max_objects must be >= 1");
    std::mt19937_64 rng(seed);
    const float side = static_cast<float>(std::min(dims.height, dims.width));
    std::uniform_int_distribution<int> count(1, max_objects);
    std::uniform_real_distribution<float> size(side / 8.0f, side / 4.0f);
    std::uniform_int_distribution<int> shape(0, 3), dir(-1, 1);
    auto colors = color_words();
    std::shuffle(colors.begin(), colors.end(), rng);

    SceneSpec scene;
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
        SceneObject o;
        o.id = k + 1;
        o.shape = static_cast<ShapeKind>(shape(rng));
        o.color = colors[static_cast<std::size_t>(k)];
        o.size = std::round(size(rng) * 2.0f) / 2.0f;
        const float speed = side / 16.0f;
        o.vx = static_cast<float>(dir(rng)) * speed;
        o.vy = static_cast<float>(dir(rng)) * speed;
        const float travel_x = std::abs(o.vx) * static_cast<float>(dims.frames - 1);
        const float travel_y = std::abs(o.vy) * static_cast<float>(dims.frames - 1);
        if (2 * o.size + travel_x > static_cast<float>(dims.width)) o.vx = 0;
        if (2 * o.size + travel_y > static_cast<float>(dims.height)) o.vy = 0;
        auto place = [&](float extent, float v) {
            const float travel = std::abs(v) * static_cast<float>(dims.frames - 1);
            float lo = o.size + (v < 0 ? travel : 0.0f);
            float hi = extent - o.size - (v > 0 ? travel : 0.0f);
            std::uniform_real_distribution<float> u(lo, std::max(lo, hi));
            return std::round(u(rng));
        };
        o.x = std::clamp(place(static_cast<float>(dims.width), o.vx), o.size, static_cast<float>(dims.width) - o.size);
        o.y = std::clamp(place(static_cast<float>(dims.height), o.vy), o.size, static_cast<float>(dims.height) - o.size);
        if (!fits(o, dims)) {
            o.vx = o.vy = 0;
        }
        scene.push_back(o);
    }
    return scene;
}

std::vector<CaptionedClip> make_corpus(int count, const VideoDims& dims, std::uint64_t seed, int levels) {
    std::vector<CaptionedClip> corpus;
    corpus.reserve(static_cast<std::size_t>(count));
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        const std::uint64_t s = rng();
        corpus.push_back(make_clip(random_scene(dims, s), dims, s ^ 0x9e3779b97f4a7c15ULL, levels));
    }
    return corpus;
}

}  // namespace lpq::fixtures
