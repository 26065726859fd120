#pragma once

#include <json.hpp>

#include "lpq/fixtures/video.hpp"

namespace lpq::fixtures {

nlohmann::json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);

// Run-length encoding of a binary volume: [[start, length], ...] over the
// flattened T*H*W index.
nlohmann::json encode_runs(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> decode_runs(const nlohmann::json& runs, std::int64_t voxels);

// Scene, caption, semantic units and ground-truth masks of a clip.
nlohmann::json clip_sidecar(const CaptionedClip& clip);

}  // namespace lpq::fixtures
