#pragma once

#include <vector>

#include "iid/layout.hpp"
#include "iid/maskgen.hpp"

namespace iid {

// Channels-first latent tensor at patch resolution, row-major per channel.
struct LatentImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    double at(int ch, int r, int c) const {
        return values[(static_cast<std::size_t>(ch) * height + r) * width + c];
    }
    double& at(int ch, int r, int c) {
        return values[(static_cast<std::size_t>(ch) * height + r) * width + c];
    }
    std::size_t size() const { return values.size(); }
};

LatentImage make_latent(int height, int width, int channels, double fill = 0.0);

struct InfluenceReport {
    std::vector<double> raw;
    std::vector<double> normalized;  // sums to 1
    std::vector<int> order;          // 1-based ids, ascending score, stable ties
};

// raw_i is instruction i's total attention mass inside its own mask, summed
// over heads. All-zero raw scores raise ZeroInfluence.
InfluenceReport influence_scores(const std::vector<HeadMapStack>& stacks,
                                 const std::vector<EditMask>& masks);

struct CompositeInstruction {
    std::vector<int> tokens;    // token ids in composition order
    TokenLayout layout;         // instruction segments keep original 1-based ids
    std::vector<int> positions; // one position index per layout slot
};

// Concatenate instruction token sequences following `order` (1-based original
// ids). FluxLike assigns fresh sequential positions over the whole composite
// sequence; OmniLike starts every instruction block at position 0 and the
// remaining segments right after the longest block.
CompositeInstruction compose_instructions(const std::vector<std::vector<int>>& instructions,
                                          const std::vector<int>& order, ModelKind kind,
                                          int n_v, int n_z);

// Composite latent: branch mean everywhere, each branch written into its own
// mask, pixels claimed by several masks set to the mean over the claimants.
// The overlap mean is accumulated in value-sorted order, so the result is
// bitwise independent of input order.
LatentImage blend_latents(const std::vector<LatentImage>& latents,
                          const std::vector<EditMask>& masks, const OverlapMap& overlap);

}  // namespace iid
