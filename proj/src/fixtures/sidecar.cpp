#include "lpq/fixtures/sidecar.hpp"

#include "lpq/error.hpp"

namespace lpq::fixtures {

using nlohmann::json;

json scene_to_json(const SceneSpec& scene) {
    json arr = json::array();
    for (const auto& o : scene)
        arr.push_back({{"id", o.id},
                       {"shape", shape_word(o.shape)},
                       {"color", o.color},
                       {"size", o.size},
                       {"x", o.x},
                       {"y", o.y},
                       {"vx", o.vx},
                       {"vy", o.vy}});
    return arr;
}

SceneSpec scene_from_json(const json& j) {
    require(j.is_array(), "scene spec must be a JSON array");
    SceneSpec scene;
    for (const auto& e : j) {
        SceneObject o;
        o.id = e.at("id").get<int>();
        o.shape = shape_from_word(e.at("shape").get<std::string>());
        o.color = e.at("color").get<std::string>();
        o.size = e.at("size").get<float>();
        o.x = e.at("x").get<float>();
        o.y = e.at("y").get<float>();
        o.vx = e.value("vx", 0.0f);
        o.vy = e.value("vy", 0.0f);
        scene.push_back(o);
    }
    return scene;
}

json encode_runs(const std::vector<std::uint8_t>& mask) {
    json runs = json::array();
    std::size_t i = 0;
    while (i < mask.size()) {
        if (!mask[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < mask.size() && mask[j]) ++j;
        runs.push_back({i, j - i});
        i = j;
    }
    return runs;
}

std::vector<std::uint8_t> decode_runs(const json& runs, std::int64_t voxels) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(voxels), 0);
    for (const auto& r : runs) {
        const auto start = r.at(0).get<std::int64_t>(), len = r.at(1).get<std::int64_t>();
        require(start >= 0 && len >= 0 && start + len <= voxels, "mask run out of range");
        std::fill(m.begin() + start, m.begin() + start + len, std::uint8_t{1});
    }
    return m;
}

json clip_sidecar(const CaptionedClip& clip) {
    const auto d = clip.video.dims();
    json masks = json::array();
    for (const auto& m : clip.masks)
        masks.push_back({{"object_id", m.object_id}, {"unit", m.unit}, {"runs", encode_runs(m.voxels)}});
    return {{"dims", {d.channels, d.frames, d.height, d.width}},
            {"scene", scene_to_json(clip.scene)},
            {"caption", clip.caption},
            {"semantic_units", clip.semantic_units},
            {"masks", masks}};
}

}  // namespace lpq::fixtures
