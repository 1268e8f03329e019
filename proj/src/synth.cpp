#include "iid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iid/error.hpp"
#include "iid/rng.hpp"

namespace iid {

void validate_scene(const SceneSpec& scene) {
    if (scene.height <= 0 || scene.width <= 0) throw InvalidScene("scene grid must be positive");
    if (scene.regions.empty()) throw InvalidScene("scene has no regions");
    for (const Region& reg : scene.regions) {
        if (reg.is_rect()) {
            if (reg.w <= 0 || reg.h <= 0) throw InvalidScene("empty region");
            if (reg.x < 0 || reg.y < 0 || reg.x + reg.w > scene.width ||
                reg.y + reg.h > scene.height)
                throw InvalidScene("region outside grid");
        } else {
            for (const auto& [r, c] : reg.pixels)
                if (r < 0 || c < 0 || r >= scene.height || c >= scene.width)
                    throw InvalidScene("region pixel outside grid");
        }
    }
}

BinaryMask region_mask(const SceneSpec& scene, int index) {
    validate_scene(scene);
    if (index < 0 || index >= static_cast<int>(scene.regions.size()))
        throw InvalidValue("region index out of range: " + std::to_string(index));
    const Region& reg = scene.regions[index];
    BinaryMask m = make_mask(scene.height, scene.width);
    if (reg.is_rect()) {
        for (int r = reg.y; r < reg.y + reg.h; ++r)
            for (int c = reg.x; c < reg.x + reg.w; ++c) m.set(r, c, true);
    } else {
        for (const auto& [r, c] : reg.pixels) m.set(r, c, true);
    }
    return m;
}

LatentImage scene_to_latent(const SceneSpec& scene, int channels) {
    validate_scene(scene);
    LatentImage z = make_latent(scene.height, scene.width, channels);
    for (int i = 0; i < static_cast<int>(scene.regions.size()); ++i) {
        const BinaryMask m = region_mask(scene, i);
        for (int ch = 0; ch < channels; ++ch)
            for (int r = 0; r < scene.height; ++r)
                for (int c = 0; c < scene.width; ++c)
                    if (m.test(r, c)) z.at(ch, r, c) = static_cast<double>(i + 1);
    }
    return z;
}

namespace {

Grid2D normalized(const std::vector<double>& raw, int h, int w) {
    return reshape_to_grid(minmax_normalize(raw), h, w);
}

}  // namespace

std::vector<HeadMapStack> make_attention_fixture(const SceneSpec& scene,
                                                 const HeadRoleProfile& profile, int heads) {
    validate_scene(scene);
    if (heads < 1) throw InvalidValue("fixture needs at least one head");
    if (profile.fraction_edit < 0.0 || profile.fraction_global < 0.0 ||
        profile.fraction_edit + profile.fraction_global > 1.0 + 1e-12)
        throw InvalidValue("head-role fractions must be nonnegative and sum to at most 1");
    if (profile.eta < 0.0) throw InvalidValue("noise amplitude must be nonnegative");
    if (profile.hot_cells < 0) throw InvalidValue("hot-cell count must be nonnegative");
    if (profile.hot_cells > scene.width)
        throw InvalidScene("hot-cell run does not fit one grid row");

    const int n = static_cast<int>(scene.regions.size());
    const int cells = scene.height * scene.width;
    const int n_edit = static_cast<int>(std::lround(profile.fraction_edit * heads));
    const int n_global = static_cast<int>(std::lround(profile.fraction_global * heads));
    if (n_edit + n_global > heads)
        throw InvalidValue("head-role fractions round above the head count");

    std::vector<BinaryMask> regions;
    regions.reserve(n);
    std::vector<std::uint8_t> any_region(cells, 0);
    for (int i = 0; i < n; ++i) {
        regions.push_back(region_mask(scene, i));
        for (int p = 0; p < cells; ++p) any_region[p] |= regions.back().bits[p];
    }

    Rng rng(scene.seed);

    // Hot cells: one contiguous run per fixture, outside every region, shared
    // by all edit-focused heads and all instructions.
    std::vector<int> hot;
    if (profile.hot_cells > 0) {
        const int len = profile.hot_cells;
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const int r = static_cast<int>(rng.uniform_index(scene.height));
            const int c0 = static_cast<int>(rng.uniform_index(scene.width - len + 1));
            bool clear = true;
            for (int c = c0; c < c0 + len; ++c)
                if (any_region[r * scene.width + c]) clear = false;
            if (!clear) continue;
            for (int c = c0; c < c0 + len; ++c) hot.push_back(r * scene.width + c);
            placed = true;
        }
        if (!placed) throw InvalidScene("no room for hot cells outside the regions");
    }

    // Shared-per-head draws come first so per-instruction noise cannot shift
    // them between instructions.
    const double base_amp = 0.1 * profile.eta;
    std::vector<double> region_level(heads), hot_level(heads);
    std::vector<std::vector<double>> shared_base(heads), global_field(heads);
    for (int j = 0; j < heads; ++j) {
        if (j < n_edit) {
            region_level[j] = rng.uniform(0.8, 1.0);
            hot_level[j] = rng.uniform(0.8, 1.0);
            shared_base[j].resize(cells);
            for (double& v : shared_base[j]) v = rng.uniform(0.0, base_amp);
        } else if (j < n_edit + n_global) {
            global_field[j].resize(cells);
            for (double& v : global_field[j]) v = rng.uniform();
        }
    }

    std::vector<HeadMapStack> stacks(n);
    for (int i = 0; i < n; ++i) stacks[i].maps.reserve(heads);
    for (int j = 0; j < heads; ++j) {
        if (j < n_edit) {
            for (int i = 0; i < n; ++i) {
                std::vector<double> raw(cells);
                for (int p = 0; p < cells; ++p)
                    raw[p] = shared_base[j][p] + rng.uniform(0.0, base_amp);
                for (int p = 0; p < cells; ++p)
                    if (regions[i].bits[p]) raw[p] = region_level[j];
                for (int p : hot) raw[p] = hot_level[j];
                stacks[i].maps.push_back(normalized(raw, scene.height, scene.width));
            }
        } else if (j < n_edit + n_global) {
            const Grid2D g = normalized(global_field[j], scene.height, scene.width);
            for (int i = 0; i < n; ++i) stacks[i].maps.push_back(g);
        } else {
            const double amp = std::min(profile.eta, 1.0);
            for (int i = 0; i < n; ++i) {
                std::vector<double> raw(cells);
                for (double& v : raw) v = amp * rng.uniform();
                stacks[i].maps.push_back(normalized(raw, scene.height, scene.width));
            }
        }
    }
    return stacks;
}

EditMask naive_baseline_mask(const HeadMapStack& stack, double sigma) {
    if (stack.heads() <= 0) throw ShapeMismatch("naive_baseline_mask: empty stack");
    Grid2D mean = make_grid(stack.height(), stack.width());
    const double inv_heads = 1.0 / stack.heads();
    for (const Grid2D& m : stack.maps) {
        if (m.height != mean.height || m.width != mean.width)
            throw ShapeMismatch("naive_baseline_mask: head maps disagree in shape");
        for (int idx = 0; idx < mean.cells(); ++idx) mean.values[idx] += m.values[idx];
    }
    for (double& v : mean.values) v *= inv_heads;

    EditMask out;
    out.instruction = 0;
    out.fused_grid = gaussian_filter(mean, sigma);
    try {
        out.mask = otsu_binarize(out.fused_grid).mask;
    } catch (const DegenerateHistogram& e) {
        throw DegenerateMask(0, e.what());
    }
    return out;
}

}  // namespace iid
