#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpq/diff/tensor.hpp"

namespace lpq::fixtures {

struct VideoDims {
    std::int64_t channels = 3;
    std::int64_t frames = 4;
    std::int64_t height = 16;
    std::int64_t width = 16;

    diff::Shape shape() const { return {channels, frames, height, width}; }
    std::int64_t voxels() const { return frames * height * width; }
    friend bool operator==(const VideoDims&, const VideoDims&) = default;
};

// Throws unless T >= 2 and H, W are divisible by 2^levels.
void validate_dims(const VideoDims& dims, int levels);

// C x T x H x W, values in [0, 1].
struct Video {
    diff::Tensor values;

    Video() = default;
    explicit Video(diff::Tensor v);
    explicit Video(const VideoDims& dims, float fill = 0.0f);

    VideoDims dims() const;
    float& at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x);
    float at(std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) const;
};

enum class ShapeKind { Square, Circle, Bar, Diamond };

struct SceneObject {
    int id = 0;
    ShapeKind shape = ShapeKind::Square;
    std::string color = "red";
    float size = 3.0f;  // half-extent in pixels
    float x = 8.0f;     // center at frame 0
    float y = 8.0f;
    float vx = 0.0f;  // pixels per frame
    float vy = 0.0f;
};

using SceneSpec = std::vector<SceneObject>;

std::string shape_word(ShapeKind s);
ShapeKind shape_from_word(const std::string& w);
const std::vector<std::string>& color_words();
const std::vector<std::string>& shape_words();

struct ObjectMask {
    int object_id = 0;
    std::string unit;             // semantic unit word (the object's color)
    std::vector<std::uint8_t> voxels;  // T*H*W footprint of the object rendered alone
};

struct CaptionedClip {
    Video video;
    std::vector<std::string> caption;
    std::vector<std::string> semantic_units;
    std::vector<ObjectMask> masks;  // one per object, same order as semantic_units
    SceneSpec scene;
};

// Renders objects over a constant background (seeded per-channel level).
// Later objects are drawn over earlier ones; masks are per-object footprints.
CaptionedClip make_clip(const SceneSpec& scene, const VideoDims& dims, std::uint64_t seed, int levels = 4);

// Single-object footprint, independent of the rest of the scene.
std::vector<std::uint8_t> rasterize(const SceneObject& obj, const VideoDims& dims);

// Random non-degenerate scene: 1..max_objects objects with distinct colors
// that stay inside the frame for every frame.
SceneSpec random_scene(const VideoDims& dims, std::uint64_t seed, int max_objects = 2);

// Seeded corpus of distinct clips.
std::vector<CaptionedClip> make_corpus(int count, const VideoDims& dims, std::uint64_t seed, int levels = 4);

}  // namespace lpq::fixtures
