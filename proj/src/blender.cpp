#include "iid/blender.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "iid/error.hpp"

namespace iid {

LatentImage make_latent(int height, int width, int channels, double fill) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw InvalidValue("latent dims must be positive");
    LatentImage z;
    z.height = height;
    z.width = width;
    z.channels = channels;
    z.values.assign(static_cast<std::size_t>(channels) * height * width, fill);
    return z;
}

InfluenceReport influence_scores(const std::vector<HeadMapStack>& stacks,
                                 const std::vector<EditMask>& masks) {
    if (stacks.empty() || stacks.size() != masks.size())
        throw ShapeMismatch("influence_scores: stacks and masks disagree in count");
    const int n = static_cast<int>(stacks.size());

    InfluenceReport rep;
    rep.raw.resize(n);
    for (int i = 0; i < n; ++i) {
        const HeadMapStack& stack = stacks[i];
        const BinaryMask& m = masks[i].mask;
        if (stack.height() != m.height || stack.width() != m.width)
            throw ShapeMismatch("influence_scores: stack and mask dims disagree");
        double score = 0.0;
        for (const Grid2D& map : stack.maps)
            for (int idx = 0; idx < map.cells(); ++idx)
                if (m.bits[idx]) score += map.values[idx];
        rep.raw[i] = score;
    }

    const double total = std::accumulate(rep.raw.begin(), rep.raw.end(), 0.0);
    if (total <= 0.0) throw ZeroInfluence("influence_scores: every raw score is zero");
    rep.normalized.resize(n);
    for (int i = 0; i < n; ++i) rep.normalized[i] = rep.raw[i] / total;

    rep.order.resize(n);
    std::iota(rep.order.begin(), rep.order.end(), 1);
    std::stable_sort(rep.order.begin(), rep.order.end(),
                     [&](int a, int b) { return rep.raw[a - 1] < rep.raw[b - 1]; });
    return rep;
}

CompositeInstruction compose_instructions(const std::vector<std::vector<int>>& instructions,
                                          const std::vector<int>& order, ModelKind kind,
                                          int n_v, int n_z) {
    const int n = static_cast<int>(instructions.size());
    if (n == 0) throw InvalidInstruction("compose_instructions: no instructions");
    if (static_cast<int>(order.size()) != n)
        throw InvalidValue("compose_instructions: order is not a permutation of 1..N");
    std::vector<bool> seen(n, false);
    for (int id : order) {
        if (id < 1 || id > n || seen[id - 1])
            throw InvalidValue("compose_instructions: order is not a permutation of 1..N");
        seen[id - 1] = true;
    }
    for (const std::vector<int>& seq : instructions)
        if (seq.empty()) throw InvalidInstruction("compose_instructions: empty instruction");

    CompositeInstruction out;
    std::vector<int> lengths;
    lengths.reserve(n);
    int max_len = 0;
    for (int id : order) {
        const std::vector<int>& seq = instructions[id - 1];
        out.tokens.insert(out.tokens.end(), seq.begin(), seq.end());
        lengths.push_back(static_cast<int>(seq.size()));
        max_len = std::max(max_len, static_cast<int>(seq.size()));
    }
    out.layout = build_layout_with_ids(kind, order, lengths, n_v, n_z);

    out.positions.resize(out.layout.total_len);
    if (kind == ModelKind::FluxLike) {
        std::iota(out.positions.begin(), out.positions.end(), 0);
    } else {
        // Shared base: every instruction block restarts at position 0, the
        // rest of the sequence continues after the longest block.
        int text_total = 0;
        for (int len : lengths) text_total += len;
        for (const Segment& s : out.layout.segments) {
            if (s.kind == SegmentKind::Instruction) {
                for (int i = 0; i < s.length; ++i) out.positions[s.start + i] = i;
            } else {
                for (int i = 0; i < s.length; ++i)
                    out.positions[s.start + i] = max_len + (s.start - text_total) + i;
            }
        }
    }
    return out;
}

LatentImage blend_latents(const std::vector<LatentImage>& latents,
                          const std::vector<EditMask>& masks, const OverlapMap& overlap) {
    const int n = static_cast<int>(latents.size());
    if (n < 2) throw NeedsMultipleInstructions("blend_latents: needs at least two branches");
    if (masks.size() != latents.size())
        throw ShapeMismatch("blend_latents: latent and mask counts disagree");
    const LatentImage& first = latents[0];
    for (const LatentImage& z : latents)
        if (z.height != first.height || z.width != first.width || z.channels != first.channels)
            throw ShapeMismatch("blend_latents: latents disagree in shape");
    for (const EditMask& m : masks)
        if (m.mask.height != first.height || m.mask.width != first.width)
            throw ShapeMismatch("blend_latents: mask dims do not match latents");
    if (overlap.height != first.height || overlap.width != first.width)
        throw ShapeMismatch("blend_latents: overlap dims do not match latents");

    LatentImage out = make_latent(first.height, first.width, first.channels);
    const double inv_n = 1.0 / n;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = 0.0;
        for (const LatentImage& z : latents) sum += z.values[i];
        out.values[i] = sum * inv_n;
    }

    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < out.channels; ++ch)
            for (int r = 0; r < out.height; ++r)
                for (int c = 0; c < out.width; ++c)
                    if (masks[i].mask.test(r, c)) out.at(ch, r, c) = latents[i].at(ch, r, c);

    std::vector<double> covering;
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            if (overlap.at(r, c) < 2) continue;
            for (int ch = 0; ch < out.channels; ++ch) {
                covering.clear();
                for (int i = 0; i < n; ++i)
                    if (masks[i].mask.test(r, c)) covering.push_back(latents[i].at(ch, r, c));
                std::sort(covering.begin(), covering.end());
                double sum = 0.0;
                for (double v : covering) sum += v;
                out.at(ch, r, c) = sum / static_cast<double>(covering.size());
            }
        }
    }
    return out;
}

}  // namespace iid
