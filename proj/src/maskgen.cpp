#include "iid/maskgen.hpp"

#include <string>

#include "iid/error.hpp"

namespace iid {

namespace {

void check_stack_shapes(const std::vector<HeadMapStack>& stacks) {
    if (stacks.size() < 2)
        throw NeedsMultipleInstructions("head-wise suppression needs at least two instructions");
    const int heads = stacks[0].heads();
    const int h = stacks[0].height();
    const int w = stacks[0].width();
    if (heads <= 0 || h <= 0 || w <= 0) throw ShapeMismatch("empty attention map stack");
    for (const HeadMapStack& s : stacks) {
        if (s.heads() != heads || s.height() != h || s.width() != w)
            throw ShapeMismatch("attention map stacks disagree in shape");
        for (const Grid2D& g : s.maps)
            if (g.height != h || g.width != w)
                throw ShapeMismatch("attention map stacks disagree in shape");
    }
}

}  // namespace

HeadMapStack headwise_difference(const std::vector<HeadMapStack>& stacks, int instruction) {
    check_stack_shapes(stacks);
    const int n = static_cast<int>(stacks.size());
    if (instruction < 1 || instruction > n)
        throw UnknownInstruction("instruction index out of range: " + std::to_string(instruction));
    const HeadMapStack& self = stacks[instruction - 1];
    const double inv_others = 1.0 / (n - 1);

    HeadMapStack out;
    out.maps.reserve(self.heads());
    for (int j = 0; j < self.heads(); ++j) {
        Grid2D diff = make_grid(self.height(), self.width());
        for (int idx = 0; idx < diff.cells(); ++idx) {
            double others = 0.0;
            for (int k = 0; k < n; ++k)
                if (k != instruction - 1) others += stacks[k].maps[j].values[idx];
            const double d = self.maps[j].values[idx] - others * inv_others;
            diff.values[idx] = d > 0.0 ? d : 0.0;
        }
        out.maps.push_back(std::move(diff));
    }
    return out;
}

EditMask fuse_mask(const HeadMapStack& diffs, double sigma, int instruction) {
    if (diffs.heads() <= 0) throw ShapeMismatch("fuse_mask: no head maps");
    Grid2D mean = make_grid(diffs.height(), diffs.width());
    const double inv_heads = 1.0 / diffs.heads();
    for (const Grid2D& m : diffs.maps) {
        if (m.height != mean.height || m.width != mean.width)
            throw ShapeMismatch("fuse_mask: head maps disagree in shape");
        for (int idx = 0; idx < mean.cells(); ++idx) mean.values[idx] += m.values[idx];
    }
    for (double& v : mean.values) v *= inv_heads;

    EditMask out;
    out.instruction = instruction;
    out.fused_grid = gaussian_filter(mean, sigma);
    try {
        out.mask = otsu_binarize(out.fused_grid).mask;
    } catch (const DegenerateHistogram& e) {
        throw DegenerateMask(instruction, e.what());
    }
    return out;
}

OverlapMap compute_overlap(const std::vector<EditMask>& masks) {
    if (masks.empty()) throw InvalidValue("compute_overlap: no masks");
    OverlapMap ov;
    ov.height = masks[0].mask.height;
    ov.width = masks[0].mask.width;
    ov.counts.assign(static_cast<std::size_t>(ov.height) * ov.width, 0);
    for (const EditMask& m : masks) {
        if (m.mask.height != ov.height || m.mask.width != ov.width)
            throw ShapeMismatch("compute_overlap: masks disagree in shape");
        for (std::size_t i = 0; i < m.mask.bits.size(); ++i) ov.counts[i] += m.mask.bits[i] != 0;
    }
    return ov;
}

MaskGenResult generate_masks(const std::vector<HeadMapStack>& stacks, double sigma) {
    check_stack_shapes(stacks);
    MaskGenResult res;
    res.masks.reserve(stacks.size());
    for (int i = 1; i <= static_cast<int>(stacks.size()); ++i)
        res.masks.push_back(fuse_mask(headwise_difference(stacks, i), sigma, i));
    res.overlap = compute_overlap(res.masks);
    return res;
}

}  // namespace iid
