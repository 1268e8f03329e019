#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "iid/blender.hpp"
#include "iid/maskgen.hpp"

namespace iid {

// Ground-truth edit region: a rectangle, or an explicit cell list when
// `pixels` is non-empty.
struct Region {
    int x = 0, y = 0, w = 0, h = 0;
    std::vector<std::pair<int, int>> pixels;  // (row, col)

    bool is_rect() const { return pixels.empty(); }
};

struct SceneSpec {
    int height = 0;
    int width = 0;
    std::vector<Region> regions;
    std::uint64_t seed = 0;
};

void validate_scene(const SceneSpec& scene);
BinaryMask region_mask(const SceneSpec& scene, int index);

// Paint the planted regions into a latent: background 0, region i's cells set
// to i (1-based), identical across channels. Later regions win where they
// overlap.
LatentImage scene_to_latent(const SceneSpec& scene, int channels);

// Head-role mix for synthetic attention stacks. Fractions are of the total
// head count; the remainder are unstructured heads. eta scales the background
// noise; hot_cells plants that many spurious high-intensity cells (a
// contiguous run, so they survive smoothing) shared across instructions.
struct HeadRoleProfile {
    double fraction_edit = 0.75;
    double fraction_global = 0.25;
    double eta = 0.0;
    int hot_cells = 0;
};

// One normalized HeadMapStack per region/instruction. Edit-focused heads put
// a per-head constant high value (0.8-1.0) on the instruction's own region
// over a low noise base; hot cells and global-head fields are bitwise shared
// across instructions, which is what head-wise subtraction exploits.
std::vector<HeadMapStack> make_attention_fixture(const SceneSpec& scene,
                                                 const HeadRoleProfile& profile, int heads);

// Ablation baseline: plain head averaging with no cross-instruction
// subtraction, then the same blur + threshold.
EditMask naive_baseline_mask(const HeadMapStack& stack, double sigma);

}  // namespace iid
