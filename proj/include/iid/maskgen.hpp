#pragma once

#include <vector>

#include "iid/arrays.hpp"

namespace iid {

struct EditMask {
    int instruction = 0;  // 1-based
    BinaryMask mask;
    Grid2D fused_grid;  // smoothed head-mean the threshold was taken on
};

// Per-cell count of how many edit masks cover it.
struct OverlapMap {
    int height = 0;
    int width = 0;
    std::vector<int> counts;

    int at(int r, int c) const { return counts[static_cast<std::size_t>(r) * width + c]; }
    int& at(int r, int c) { return counts[static_cast<std::size_t>(r) * width + c]; }
};

// Per-head competition: map of instruction `instruction` minus the mean map of
// the other instructions, negatives clamped to zero. Needs at least two
// instructions.
HeadMapStack headwise_difference(const std::vector<HeadMapStack>& stacks, int instruction);

// Average the per-head difference maps, blur, threshold. Raises DegenerateMask
// (carrying `instruction`) when the smoothed grid is constant.
EditMask fuse_mask(const HeadMapStack& diffs, double sigma, int instruction);

OverlapMap compute_overlap(const std::vector<EditMask>& masks);

struct MaskGenResult {
    std::vector<EditMask> masks;  // one per instruction, in stack order
    OverlapMap overlap;
};

MaskGenResult generate_masks(const std::vector<HeadMapStack>& stacks, double sigma);

}  // namespace iid
