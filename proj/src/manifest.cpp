#include "iid/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "iid/error.hpp"

namespace iid {

using json = nlohmann::ordered_json;

namespace {

json scene_json(const SceneSpec& scene) {
    json j;
    j["grid"] = {scene.height, scene.width};
    json regions = json::array();
    for (const Region& r : scene.regions) {
        if (r.is_rect()) {
            regions.push_back({r.x, r.y, r.w, r.h});
        } else {
            json cells = json::array();
            for (const auto& [row, col] : r.pixels) cells.push_back({row, col});
            regions.push_back(json{{"pixels", cells}});
        }
    }
    j["regions"] = regions;
    j["seed"] = scene.seed;
    return j;
}

SceneSpec parse_scene(const json& j) {
    SceneSpec scene;
    try {
        const auto& grid = j.at("grid");
        scene.height = grid.at(0).get<int>();
        scene.width = grid.at(1).get<int>();
        for (const auto& rj : j.at("regions")) {
            Region r;
            if (rj.is_array()) {
                r.x = rj.at(0).get<int>();
                r.y = rj.at(1).get<int>();
                r.w = rj.at(2).get<int>();
                r.h = rj.at(3).get<int>();
            } else {
                for (const auto& cell : rj.at("pixels"))
                    r.pixels.emplace_back(cell.at(0).get<int>(), cell.at(1).get<int>());
            }
            scene.regions.push_back(std::move(r));
        }
        scene.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad scene spec: ") + e.what());
    }
    validate_scene(scene);
    return scene;
}

ModelKind parse_kind(const std::string& s) {
    if (s == "flux") return ModelKind::FluxLike;
    if (s == "omni") return ModelKind::OmniLike;
    throw ConfigError("kind must be \"flux\" or \"omni\"");
}

MapSource parse_source(const std::string& s) {
    if (s == "zp") return MapSource::InstructionMaps;
    if (s == "zz") return MapSource::SelfMaps;
    throw ConfigError("map source must be \"zp\" or \"zz\"");
}

}  // namespace

PipelineConfig ExperimentManifest::pipeline() const {
    PipelineConfig p;
    p.total_steps = total_steps;
    p.predefined_step = predefined_step;
    p.layer = layer;
    p.sigma = sigma;
    p.source = source;
    return p;
}

ExperimentManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
    }

    ExperimentManifest m;
    try {
        m.kind = parse_kind(j.value("kind", std::string("flux")));
        const bool flux = m.kind == ModelKind::FluxLike;
        m.total_steps = j.value("total_steps", flux ? 30 : 50);
        m.predefined_step = j.value("predefined_step", flux ? 27 : 15);
        m.layer = j.value("layer", -1);
        m.sigma = j.value("sigma", 1.0);
        m.guidance = j.value("guidance", flux ? 60.0 : 1.0);
        if (j.contains("map_source")) m.source = parse_source(j.at("map_source").get<std::string>());
        m.seed = j.value("seed", std::uint64_t{0});

        if (!j.contains("instructions") || !j.at("instructions").is_array() ||
            j.at("instructions").empty())
            throw ConfigError("manifest needs a non-empty instruction list");
        for (const auto& seq : j.at("instructions")) {
            std::vector<int> tokens;
            for (const auto& tok : seq) tokens.push_back(tok.get<int>());
            if (tokens.empty()) throw ConfigError("empty instruction in manifest");
            m.instructions.push_back(std::move(tokens));
        }

        if (j.contains("scene")) m.scene = parse_scene(j.at("scene"));
        if (j.contains("dumps"))
            for (const auto& p : j.at("dumps")) m.dumps.push_back(p.get<std::string>());
        m.out_dir = j.value("out_dir", std::string());

        m.model.kind = m.kind;
        m.model.seed = m.seed;
        m.model.guidance_scale = m.guidance;
        if (j.contains("model")) {
            const auto& mj = j.at("model");
            m.model.layers = mj.value("layers", m.model.layers);
            m.model.heads = mj.value("heads", m.model.heads);
            m.model.model_dim = mj.value("dim", m.model.model_dim);
            m.model.channels = mj.value("channels", m.model.channels);
            m.model.vocab = mj.value("vocab", m.model.vocab);
        }
        if (m.scene.has_value()) {
            m.model.grid_height = m.scene->height;
            m.model.grid_width = m.scene->width;
        } else if (j.contains("grid")) {
            m.model.grid_height = j.at("grid").at(0).get<int>();
            m.model.grid_width = j.at("grid").at(1).get<int>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad manifest field: ") + e.what());
    }

    if (m.total_steps < 1) throw ConfigError("total_steps must be positive");
    if (m.predefined_step < 1 || m.predefined_step >= m.total_steps)
        throw ConfigError("predefined_step must lie in [1, total_steps)");
    if (m.layer >= m.model.layers) throw ConfigError("layer index beyond model depth");
    if (m.guidance < 1.0) throw ConfigError("guidance must be >= 1");
    return m;
}

ExperimentManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return manifest_from_json(text);
}

std::string manifest_to_json(const ExperimentManifest& m) {
    json j;
    j["kind"] = m.kind == ModelKind::FluxLike ? "flux" : "omni";
    j["total_steps"] = m.total_steps;
    j["predefined_step"] = m.predefined_step;
    j["layer"] = m.layer;
    j["sigma"] = m.sigma;
    j["guidance"] = m.guidance;
    if (m.source == MapSource::InstructionMaps) j["map_source"] = "zp";
    if (m.source == MapSource::SelfMaps) j["map_source"] = "zz";
    j["seed"] = m.seed;
    j["instructions"] = m.instructions;
    if (m.scene.has_value()) j["scene"] = scene_json(*m.scene);
    if (!m.dumps.empty()) j["dumps"] = m.dumps;
    if (!m.out_dir.empty()) j["out_dir"] = m.out_dir;
    j["model"] = {{"layers", m.model.layers},
                  {"heads", m.model.heads},
                  {"dim", m.model.model_dim},
                  {"channels", m.model.channels},
                  {"vocab", m.model.vocab}};
    if (!m.scene.has_value())
        j["grid"] = {m.model.grid_height, m.model.grid_width};
    return j.dump(2) + "\n";
}

std::string scene_to_json(const SceneSpec& scene) { return scene_json(scene).dump(2) + "\n"; }

SceneSpec scene_from_json(const std::string& text) {
    try {
        return parse_scene(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad scene JSON: ") + e.what());
    }
}

}  // namespace iid
