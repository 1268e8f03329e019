#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iid/synth.hpp"
#include "iid/toydit.hpp"

namespace iid {

// Everything one experiment needs, loadable from a JSON file. Steps, guidance
// and the map source default per model family when absent; the capture layer
// defaults to the second-to-last.
struct ExperimentManifest {
    ModelKind kind = ModelKind::FluxLike;
    int total_steps = 30;
    int predefined_step = 27;
    int layer = -1;
    double sigma = 1.0;
    double guidance = 60.0;
    MapSource source = MapSource::FamilyDefault;
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> instructions;
    std::optional<SceneSpec> scene;
    std::vector<std::string> dumps;  // attention tensors, alternative to a scene
    std::string out_dir;

    ToyDiTConfig model;       // grid dims mirrored from the scene when present
    PipelineConfig pipeline() const;
};

ExperimentManifest manifest_from_json(const std::string& text);
ExperimentManifest load_manifest(const std::string& path);
std::string manifest_to_json(const ExperimentManifest& m);

std::string scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const std::string& text);

}  // namespace iid
