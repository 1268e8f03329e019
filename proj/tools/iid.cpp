#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "iid/error.hpp"
#include "iid/io.hpp"
#include "iid/manifest.hpp"
#include "iid/metrics.hpp"
#include "iid/synth.hpp"
#include "iid/toydit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace iid;

namespace {

void apply_thread_env() {
    const char* raw = std::getenv("IID_THREADS");
    if (raw == nullptr) return;
    const int n = std::atoi(raw);
    if (n < 1) throw ConfigError("IID_THREADS must be a positive integer");
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

fs::path prepare_out(const std::string& dir) {
    if (dir.empty()) throw ConfigError("an output directory is required (--out)");
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

// Manifest-adjacent knobs that only the CLI consumes. Absent fields keep the
// fixture defaults.
HeadRoleProfile fixture_profile(const std::string& manifest_path) {
    HeadRoleProfile profile;
    std::ifstream in(manifest_path);
    if (!in) return profile;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("fixture")) return profile;
    const json& f = j.at("fixture");
    profile.fraction_edit = f.value("fraction_edit", profile.fraction_edit);
    profile.fraction_global = f.value("fraction_global", profile.fraction_global);
    profile.eta = f.value("eta", profile.eta);
    profile.hot_cells = f.value("hot_cells", profile.hot_cells);
    return profile;
}

LatentImage source_latent(const ExperimentManifest& m) {
    if (m.scene.has_value()) return scene_to_latent(*m.scene, m.model.channels);
    return make_latent(m.model.grid_height, m.model.grid_width, m.model.channels);
}

BinaryMask load_mask_file(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".pgm") return read_pgm_mask(path);
    return mask_from_tensor(read_tensor(path));
}

// Latent for rank-3 f32 tensors, single-channel wrap for rank-2 grids.
LatentImage load_pixels_file(const std::string& path) {
    const TensorData t = read_tensor(path);
    if (t.dims.size() == 3) return latent_from_tensor(t);
    const Grid2D g = grid_from_tensor(t);
    LatentImage z = make_latent(g.height, g.width, 1);
    z.values = g.values;
    return z;
}

json score_json(const MaskScore& s) {
    return json{{"iou", s.iou}, {"precision", s.precision}, {"recall", s.recall}};
}

int overlap_cells(const OverlapMap& overlap) {
    int cells = 0;
    for (int c : overlap.counts) cells += c >= 2;
    return cells;
}

// Shared by `run` and both sweeps so every run directory looks the same.
json write_run_outputs(const fs::path& out, const ExperimentManifest& m, const IidResult& res) {
    write_tensor((out / "final_latent.atns").string(), tensor_from_latent(res.final_latent));

    json report;
    report["bypassed"] = res.bypassed;
    report["kind"] = m.kind == ModelKind::FluxLike ? "flux" : "omni";
    report["total_steps"] = m.total_steps;
    report["predefined_step"] = m.predefined_step;
    report["layer"] = m.layer;
    report["sigma"] = m.sigma;
    report["guidance"] = m.guidance;
    report["seed"] = m.seed;

    if (!res.bypassed) {
        json mask_info = json::array();
        for (const EditMask& em : res.masks) {
            const std::string stem = "mask_" + std::to_string(em.instruction);
            export_pgm(em.mask, (out / (stem + ".pgm")).string());
            write_tensor((out / (stem + ".atns")).string(), tensor_from_mask(em.mask));
            write_tensor((out / ("fused_" + std::to_string(em.instruction) + ".atns")).string(),
                         tensor_from_grid(em.fused_grid));
            json entry;
            entry["instruction"] = em.instruction;
            entry["cells"] = em.mask.count();
            if (m.scene.has_value())
                entry["score"] =
                    score_json(mask_score(em.mask, region_mask(*m.scene, em.instruction - 1)));
            mask_info.push_back(entry);
        }
        report["masks"] = mask_info;
        report["overlap_cells"] = overlap_cells(res.overlap);
        report["influence"] = {{"raw", res.influence.raw},
                               {"normalized", res.influence.normalized},
                               {"order", res.influence.order}};
        report["attention_mask"] = {
            {"size", res.attention_mask.size},
            {"allowed", res.attention_mask.count_allowed()},
            {"forbidden", static_cast<std::size_t>(res.attention_mask.size) *
                                  res.attention_mask.size -
                              res.attention_mask.count_allowed()}};
        report["composite_len"] = res.composite_layout.total_len;
    }
    write_text(out / "report.json", report.dump(2) + "\n");
    return report;
}

ExperimentManifest load_with_overrides(const std::string& manifest_path,
                                       const CLI::App* cmd, double sigma, std::string source,
                                       std::uint64_t seed, const std::vector<int>& steps,
                                       const std::vector<int>& layers) {
    ExperimentManifest m = load_manifest(manifest_path);
    auto given = [&](const std::string& name) {
        const CLI::Option* o = cmd->get_option_no_throw(name);
        return o != nullptr && o->count() > 0;
    };
    if (given("--sigma")) m.sigma = sigma;
    if (given("--source")) {
        if (source == "zp") m.source = MapSource::InstructionMaps;
        else m.source = MapSource::SelfMaps;
    }
    if (given("--seed")) {
        m.seed = seed;
        m.model.seed = seed;
    }
    if (given("--step") && steps.size() == 1) {
        if (steps[0] < 1 || steps[0] >= m.total_steps)
            throw ConfigError("step must lie in [1, total_steps)");
        m.predefined_step = steps[0];
    }
    if (given("--layer") && layers.size() == 1) {
        if (layers[0] < -1 || layers[0] >= m.model.layers)
            throw ConfigError("layer index beyond model depth");
        m.layer = layers[0];
    }
    return m;
}

int cmd_synth(const std::string& manifest_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
    ExperimentManifest m = load_manifest(manifest_path);
    if (!m.scene.has_value()) throw ConfigError("synth needs a manifest with a scene");
    SceneSpec scene = *m.scene;
    if (seed_override.has_value()) scene.seed = *seed_override;

    const HeadRoleProfile profile = fixture_profile(manifest_path);
    const std::vector<HeadMapStack> stacks =
        make_attention_fixture(scene, profile, m.model.heads);

    const fs::path out = prepare_out(out_dir.empty() ? m.out_dir : out_dir);
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        write_tensor((out / ("stack_" + std::to_string(i + 1) + ".atns")).string(),
                     tensor_from_stack(stacks[i]));
        export_pgm(region_mask(scene, static_cast<int>(i)),
                   (out / ("truth_" + std::to_string(i + 1) + ".pgm")).string());
    }
    write_text(out / "scene.json", scene_to_json(scene));
    std::cout << "wrote " << stacks.size() << " fixture stacks to " << out.string() << "\n";
    return 0;
}

// A dump is either a pre-extracted per-head map stack [J][h][w] or a raw
// attention tensor [heads][rows][cols]; raw dumps need the manifest for the
// token layout of their branch.
HeadMapStack ingest_dump(const std::string& path, std::size_t index,
                         const ExperimentManifest* m, MapSource source) {
    const TensorData t = read_tensor(path);
    if (t.dims.size() != 3) throw ShapeMismatch("dump must be rank 3: " + path);
    if (m == nullptr) return stack_from_tensor(t);  // no layout: only stacks make sense
    if (t.dims[1] == static_cast<std::uint64_t>(m->model.grid_height) &&
        t.dims[2] == static_cast<std::uint64_t>(m->model.grid_width))
        return stack_from_tensor(t);
    if (index >= m->instructions.size())
        throw ConfigError("more dumps than manifest instructions");

    const int n_z = m->model.grid_height * m->model.grid_width;
    const int n_v = m->kind == ModelKind::OmniLike ? n_z : 0;
    const int id = static_cast<int>(index) + 1;
    const TokenLayout layout = build_layout_with_ids(
        m->kind, {id}, {static_cast<int>(m->instructions[index].size())}, n_v, n_z);
    const RawAttention a = attention_from_tensor(t);
    const bool initial = a.rows == layout.total_len;
    const bool self_maps = source == MapSource::SelfMaps ||
                           (source == MapSource::FamilyDefault && m->kind == ModelKind::OmniLike);
    if (self_maps)
        return extract_image_self_maps(a, layout, m->model.grid_height, m->model.grid_width,
                                       initial);
    return extract_instruction_maps(a, layout, id, m->model.grid_height, m->model.grid_width,
                                    initial);
}

int cmd_masks(const std::vector<std::string>& dump_args, const std::string& manifest_path,
              const std::string& out_dir, double sigma, bool sigma_set, MapSource source) {
    std::optional<ExperimentManifest> m;
    if (!manifest_path.empty()) m = load_manifest(manifest_path);

    std::vector<std::string> dumps = dump_args;
    if (dumps.empty() && m.has_value()) dumps = m->dumps;
    if (dumps.size() < 2)
        throw NeedsMultipleInstructions("mask generation needs at least two dumps");

    std::vector<HeadMapStack> stacks;
    stacks.reserve(dumps.size());
    for (std::size_t i = 0; i < dumps.size(); ++i)
        stacks.push_back(ingest_dump(dumps[i], i, m.has_value() ? &*m : nullptr, source));

    const double sig = sigma_set ? sigma : (m.has_value() ? m->sigma : 1.0);
    const MaskGenResult res = generate_masks(stacks, sig);

    const fs::path out = prepare_out(!out_dir.empty() ? out_dir
                                     : m.has_value()  ? m->out_dir
                                                      : std::string());
    json info;
    info["sigma"] = sig;
    json mask_info = json::array();
    for (const EditMask& em : res.masks) {
        const std::string stem = "mask_" + std::to_string(em.instruction);
        export_pgm(em.mask, (out / (stem + ".pgm")).string());
        write_tensor((out / (stem + ".atns")).string(), tensor_from_mask(em.mask));
        write_tensor((out / ("fused_" + std::to_string(em.instruction) + ".atns")).string(),
                     tensor_from_grid(em.fused_grid));
        mask_info.push_back({{"instruction", em.instruction}, {"cells", em.mask.count()}});
    }
    info["masks"] = mask_info;
    info["overlap_cells"] = overlap_cells(res.overlap);
    write_text(out / "masks.json", info.dump(2) + "\n");
    std::cout << "wrote " << res.masks.size() << " masks to " << out.string() << "\n";
    return 0;
}

int cmd_blend(const std::vector<std::string>& files, const std::string& out_dir) {
    if (files.size() < 4 || files.size() % 2 != 0)
        throw ConfigError("blend takes N latents then N masks, N >= 2");
    const std::size_t n = files.size() / 2;

    std::vector<LatentImage> latents;
    std::vector<EditMask> masks;
    for (std::size_t i = 0; i < n; ++i) latents.push_back(load_pixels_file(files[i]));
    for (std::size_t i = 0; i < n; ++i) {
        EditMask em;
        em.instruction = static_cast<int>(i) + 1;
        em.mask = load_mask_file(files[n + i]);
        masks.push_back(std::move(em));
    }
    const OverlapMap overlap = compute_overlap(masks);
    const LatentImage blended = blend_latents(latents, masks, overlap);

    const fs::path out = prepare_out(out_dir);
    write_tensor((out / "blended.atns").string(), tensor_from_latent(blended));
    json info;
    info["inputs"] = n;
    info["overlap_cells"] = overlap_cells(overlap);
    write_text(out / "blend.json", info.dump(2) + "\n");
    std::cout << "wrote blended latent to " << out.string() << "\n";
    return 0;
}

int cmd_attnmask(const std::vector<std::string>& mask_files, const std::string& manifest_path,
                 const std::string& out_dir) {
    const ExperimentManifest m = load_manifest(manifest_path);
    if (mask_files.size() < 2)
        throw NeedsMultipleInstructions("attention-mask construction needs >= 2 edit masks");
    if (mask_files.size() != m.instructions.size())
        throw ConfigError("need exactly one edit mask per manifest instruction");

    std::vector<EditMask> masks;
    for (std::size_t i = 0; i < mask_files.size(); ++i) {
        EditMask em;
        em.instruction = static_cast<int>(i) + 1;
        em.mask = load_mask_file(mask_files[i]);
        if (em.mask.height != m.model.grid_height || em.mask.width != m.model.grid_width)
            throw ShapeMismatch("edit mask does not match the manifest grid");
        masks.push_back(std::move(em));
    }
    const OverlapMap overlap = compute_overlap(masks);

    std::vector<int> n_p;
    for (const auto& instr : m.instructions) n_p.push_back(static_cast<int>(instr.size()));
    const int n_z = m.model.grid_height * m.model.grid_width;
    const int n_v = m.kind == ModelKind::OmniLike ? n_z : 0;
    const TokenLayout layout = build_layout(m.kind, n_p, n_v, n_z);

    const bool block_cross = m.kind == ModelKind::FluxLike;
    const AttentionMaskMatrix vis = build_disentangle_mask(layout, masks, overlap, block_cross);

    const fs::path out = prepare_out(out_dir.empty() ? m.out_dir : out_dir);
    TensorData t;
    t.dtype = Dtype::U8;
    t.dims = {static_cast<std::uint64_t>(vis.size), static_cast<std::uint64_t>(vis.size)};
    t.u8 = vis.allowed;
    write_tensor((out / "attention_mask.atns").string(), t);

    json info;
    info["size"] = vis.size;
    info["allowed"] = vis.count_allowed();
    info["forbidden"] =
        static_cast<std::size_t>(vis.size) * vis.size - vis.count_allowed();
    info["overlap_cells"] = overlap_cells(overlap);
    write_text(out / "attnmask.json", info.dump(2) + "\n");
    std::cout << "wrote attention mask (" << vis.size << "x" << vis.size << ") to "
              << out.string() << "\n";
    return 0;
}

int cmd_run(const ExperimentManifest& m, const std::string& out_dir) {
    ToyDiT model(m.model);
    const LatentImage source = source_latent(m);
    const IidResult res = run_iid(model, source, m.instructions, m.pipeline());
    const fs::path out = prepare_out(out_dir.empty() ? m.out_dir : out_dir);
    write_run_outputs(out, m, res);
    std::cout << (res.bypassed ? "single-instruction bypass" : "pipeline run") << " written to "
              << out.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& a_path, const std::string& b_path, const std::string& out_dir) {
    auto is_mask = [](const std::string& p) {
        if (p.size() > 4 && p.substr(p.size() - 4) == ".pgm") return true;
        const TensorData t = read_tensor(p);
        return t.dtype == Dtype::U8 && t.dims.size() == 2;
    };

    json result;
    if (is_mask(a_path) != is_mask(b_path))
        throw ConfigError("eval needs two masks or two pixel tensors, not a mix");
    if (is_mask(a_path)) {
        const BinaryMask a = load_mask_file(a_path);
        const BinaryMask b = load_mask_file(b_path);
        result["kind"] = "mask";
        result["score"] = score_json(mask_score(a, b));
    } else {
        const LatentImage a = load_pixels_file(a_path);
        const LatentImage b = load_pixels_file(b_path);
        result["kind"] = "pixels";
        result["l1"] = pixel_l1(a, b);
        result["l2"] = pixel_l2(a, b);
    }
    const std::string text = result.dump(2) + "\n";
    if (!out_dir.empty()) {
        write_text(prepare_out(out_dir) / "eval.json", text);
    } else {
        std::cout << text;
    }
    return 0;
}

enum class SweepKind { Step, Layer };

int cmd_sweep(SweepKind kind, const ExperimentManifest& base, const std::vector<int>& values,
              const std::string& out_dir) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    for (int v : values) {
        if (kind == SweepKind::Step && (v < 1 || v >= base.total_steps))
            throw ConfigError("sweep step values must lie in [1, total_steps)");
        if (kind == SweepKind::Layer && (v < 0 || v >= base.model.layers))
            throw ConfigError("sweep layer values must lie in [0, model layers)");
    }

    const fs::path out = prepare_out(out_dir.empty() ? base.out_dir : out_dir);
    const std::string prefix = kind == SweepKind::Step ? "S_" : "L_";
    ToyDiT model(base.model);
    const LatentImage source = source_latent(base);

    json summary = json::array();
    std::optional<LatentImage> first;
    for (int v : values) {
        ExperimentManifest m = base;
        if (kind == SweepKind::Step) m.predefined_step = v;
        else m.layer = v;

        const IidResult res = run_iid(model, source, m.instructions, m.pipeline());
        const fs::path point = out / (prefix + std::to_string(v));
        fs::create_directories(point);
        const json report = write_run_outputs(point, m, res);

        json entry;
        entry[kind == SweepKind::Step ? "step" : "layer"] = v;
        entry["out"] = point.filename().string();
        if (report.contains("masks")) entry["masks"] = report.at("masks");
        if (!first.has_value()) {
            first = res.final_latent;
        } else {
            entry["l1_vs_first"] = pixel_l1(res.final_latent, *first);
            entry["l2_vs_first"] = pixel_l2(res.final_latent, *first);
        }
        summary.push_back(std::move(entry));
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cout << "swept " << values.size() << " values into " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instruction-influence disentanglement pipeline"};
    app.require_subcommand(1);

    std::string manifest_path, out_dir, source = "zp";
    double sigma = 1.0;
    std::uint64_t seed = 0;
    std::vector<int> steps, layers;
    std::vector<std::string> paths;

    auto add_common = [&](CLI::App* cmd, bool needs_manifest) {
        auto* mo = cmd->add_option("--manifest", manifest_path, "experiment manifest (JSON)");
        if (needs_manifest) mo->required();
        cmd->add_option("--out", out_dir, "output directory");
        return cmd;
    };

    CLI::App* synth = add_common(app.add_subcommand("synth", "write synthetic fixture stacks"),
                                 true);
    synth->add_option("--seed", seed, "override the scene seed");

    CLI::App* masks =
        add_common(app.add_subcommand("masks", "generate edit masks from attention dumps"),
                   false);
    masks->add_option("dumps", paths, "attention dumps (stack or raw ATNS)");
    masks->add_option("--sigma", sigma, "blur strength before thresholding");
    masks->add_option("--source", source, "map source for raw dumps")
        ->check(CLI::IsMember({"zp", "zz"}));

    CLI::App* blend = add_common(app.add_subcommand("blend", "blend latents under edit masks"),
                                 false);
    blend->add_option("files", paths, "N latent tensors followed by N masks");

    CLI::App* attnmask = add_common(
        app.add_subcommand("attnmask", "build the composite attention visibility mask"), true);
    attnmask->add_option("masks", paths, "one edit mask per manifest instruction");

    CLI::App* run = add_common(app.add_subcommand("run", "run the full pipeline"), true);
    run->add_option("--sigma", sigma, "blur strength before thresholding");
    run->add_option("--source", source, "attention map source")
        ->check(CLI::IsMember({"zp", "zz"}));
    run->add_option("--seed", seed, "override the manifest seed");
    run->add_option("--step", steps, "override the predefined step");
    run->add_option("--layer", layers, "override the capture layer");

    CLI::App* eval = add_common(app.add_subcommand("eval", "score two artifacts"), false);
    eval->add_option("artifacts", paths, "two masks or two pixel tensors")->expected(2);

    CLI::App* sweep_step =
        add_common(app.add_subcommand("sweep-step", "rerun across predefined steps"), true);
    sweep_step->add_option("--step", steps, "predefined step values");
    sweep_step->add_option("--sigma", sigma, "blur strength before thresholding");
    sweep_step->add_option("--source", source, "attention map source")
        ->check(CLI::IsMember({"zp", "zz"}));
    sweep_step->add_option("--seed", seed, "override the manifest seed");

    CLI::App* sweep_layer =
        add_common(app.add_subcommand("sweep-layer", "rerun across capture layers"), true);
    sweep_layer->add_option("--layer", layers, "capture layer values");
    sweep_layer->add_option("--sigma", sigma, "blur strength before thresholding");
    sweep_layer->add_option("--source", source, "attention map source")
        ->check(CLI::IsMember({"zp", "zz"}));
    sweep_layer->add_option("--seed", seed, "override the manifest seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        apply_thread_env();
        if (synth->parsed())
            return cmd_synth(manifest_path, out_dir,
                             synth->count("--seed") > 0 ? std::optional<std::uint64_t>(seed)
                                                        : std::nullopt);
        if (masks->parsed()) {
            MapSource ms = MapSource::FamilyDefault;
            if (masks->count("--source") > 0)
                ms = source == "zp" ? MapSource::InstructionMaps : MapSource::SelfMaps;
            return cmd_masks(paths, manifest_path, out_dir, sigma,
                             masks->count("--sigma") > 0, ms);
        }
        if (blend->parsed()) return cmd_blend(paths, out_dir);
        if (attnmask->parsed()) return cmd_attnmask(paths, manifest_path, out_dir);
        if (run->parsed())
            return cmd_run(load_with_overrides(manifest_path, run, sigma, source, seed, steps,
                                               layers),
                           out_dir);
        if (eval->parsed()) return cmd_eval(paths.at(0), paths.at(1), out_dir);
        if (sweep_step->parsed())
            return cmd_sweep(SweepKind::Step,
                             load_with_overrides(manifest_path, sweep_step, sigma, source, seed,
                                                 {}, {}),
                             steps, out_dir);
        if (sweep_layer->parsed())
            return cmd_sweep(SweepKind::Layer,
                             load_with_overrides(manifest_path, sweep_layer, sigma, source, seed,
                                                 {}, {}),
                             layers, out_dir);
        return 1;
    } catch (const DegenerateMask& e) {
        std::cerr << "degenerate: " << e.what() << "\n";
        return 2;
    } catch (const NeedsMultipleInstructions& e) {
        std::cerr << "degenerate: " << e.what() << "\n";
        return 2;
    } catch (const ZeroInfluence& e) {
        std::cerr << "degenerate: " << e.what() << "\n";
        return 2;
    } catch (const DegenerateHistogram& e) {
        std::cerr << "degenerate: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
