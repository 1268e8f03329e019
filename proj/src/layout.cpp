#include "iid/layout.hpp"

#include <cmath>
#include <string>

#include "iid/error.hpp"

namespace iid {

const Segment* TokenLayout::find_instruction(int instr) const {
    for (const Segment& s : segments)
        if (s.kind == SegmentKind::Instruction && s.instruction == instr) return &s;
    return nullptr;
}

const Segment& TokenLayout::noisy() const {
    for (const Segment& s : segments)
        if (s.kind == SegmentKind::NoisyImage) return s;
    throw InvalidLayout("layout has no noisy-image segment");
}

const Segment* TokenLayout::condition() const {
    for (const Segment& s : segments)
        if (s.kind == SegmentKind::ConditionImage) return &s;
    return nullptr;
}

const Segment* TokenLayout::timestep() const {
    for (const Segment& s : segments)
        if (s.kind == SegmentKind::TimestepToken) return &s;
    return nullptr;
}

int TokenLayout::instruction_count() const {
    int n = 0;
    for (const Segment& s : segments) n += s.kind == SegmentKind::Instruction;
    return n;
}

TokenLayout build_layout_with_ids(ModelKind kind, const std::vector<int>& ids,
                                  const std::vector<int>& n_p, int n_v, int n_z) {
    if (ids.size() != n_p.size()) throw InvalidLayout("instruction ids and lengths disagree");
    if (n_p.empty()) throw InvalidLayout("layout needs at least one instruction");
    if (n_z <= 0) throw InvalidLayout("noisy token count must be positive");
    if (n_v < 0) throw InvalidLayout("condition token count must be nonnegative");
    if (kind == ModelKind::FluxLike && n_v != 0)
        throw InvalidLayout("FluxLike carries no condition tokens");

    TokenLayout layout;
    layout.kind = kind;
    int pos = 0;
    for (std::size_t i = 0; i < n_p.size(); ++i) {
        if (n_p[i] <= 0) throw InvalidLayout("instruction token count must be positive");
        if (ids[i] <= 0) throw InvalidLayout("instruction ids are 1-based");
        for (std::size_t j = 0; j < i; ++j)
            if (ids[j] == ids[i]) throw InvalidLayout("duplicate instruction id");
        layout.segments.push_back({SegmentKind::Instruction, ids[i], pos, n_p[i]});
        pos += n_p[i];
    }
    if (kind == ModelKind::OmniLike) {
        if (n_v > 0) {
            layout.segments.push_back({SegmentKind::ConditionImage, 0, pos, n_v});
            pos += n_v;
        }
        layout.segments.push_back({SegmentKind::TimestepToken, 0, pos, 1});
        pos += 1;
    }
    layout.segments.push_back({SegmentKind::NoisyImage, 0, pos, n_z});
    pos += n_z;
    layout.total_len = pos;
    return layout;
}

TokenLayout build_layout(ModelKind kind, const std::vector<int>& n_p, int n_v, int n_z) {
    std::vector<int> ids(n_p.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i) + 1;
    return build_layout_with_ids(kind, ids, n_p, n_v, n_z);
}

RawAttention make_raw_attention(int heads, int rows, int cols) {
    if (heads <= 0 || rows <= 0 || cols <= 0)
        throw InvalidValue("attention dims must be positive");
    RawAttention a;
    a.heads = heads;
    a.rows = rows;
    a.cols = cols;
    a.weights.assign(static_cast<std::size_t>(heads) * rows * cols, 0.0);
    return a;
}

void validate_raw_attention(const RawAttention& a) {
    if (a.heads <= 0 || a.rows <= 0 || a.cols <= 0)
        throw InvalidValue("attention dims must be positive");
    if (a.weights.size() != static_cast<std::size_t>(a.heads) * a.rows * a.cols)
        throw ShapeMismatch("attention buffer does not match dims");
    for (int h = 0; h < a.heads; ++h) {
        for (int r = 0; r < a.rows; ++r) {
            double sum = 0.0;
            for (int c = 0; c < a.cols; ++c) {
                const double w = a.at(h, r, c);
                if (!(w >= 0.0) || !std::isfinite(w))
                    throw InvalidValue("attention weight negative or non-finite");
                sum += w;
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw InvalidValue("attention row does not sum to 1 (head " + std::to_string(h) +
                                   ", row " + std::to_string(r) + ")");
        }
    }
}

RowRange image_query_rows(const TokenLayout& layout, const RawAttention& a,
                          bool timestep_is_initial) {
    if (a.cols != layout.total_len)
        throw ShapeMismatch("attention key count does not match layout length");
    const Segment& z = layout.noisy();
    if (layout.kind == ModelKind::OmniLike && !timestep_is_initial) {
        // Query block is [timestep, noisy]: one timestep row then n_z image rows.
        if (a.rows != 1 + z.length)
            throw ShapeMismatch("expected reduced-query attention rows");
        return {1, 1 + z.length};
    }
    if (a.rows != layout.total_len)
        throw ShapeMismatch("expected full-sequence attention rows");
    return {z.start, z.start + z.length};
}

namespace {

HeadMapStack extract_maps_over(const RawAttention& a, const TokenLayout& layout,
                               const Segment& keys, int height, int width,
                               bool timestep_is_initial) {
    const RowRange rows = image_query_rows(layout, a, timestep_is_initial);
    if (rows.length() != height * width)
        throw ShapeMismatch("image query count does not match grid dims");
    HeadMapStack stack;
    stack.maps.reserve(a.heads);
    const double inv_len = 1.0 / keys.length;
    for (int h = 0; h < a.heads; ++h) {
        std::vector<double> means(rows.length());
        for (int r = rows.begin; r < rows.end; ++r) {
            double sum = 0.0;
            for (int c = keys.start; c < keys.start + keys.length; ++c) sum += a.at(h, r, c);
            means[r - rows.begin] = sum * inv_len;
        }
        stack.maps.push_back(reshape_to_grid(minmax_normalize(means), height, width));
    }
    return stack;
}

}  // namespace

HeadMapStack extract_instruction_maps(const RawAttention& a, const TokenLayout& layout,
                                      int instruction, int height, int width,
                                      bool timestep_is_initial) {
    const Segment* s = layout.find_instruction(instruction);
    if (s == nullptr)
        throw UnknownInstruction("no instruction " + std::to_string(instruction) + " in layout");
    return extract_maps_over(a, layout, *s, height, width, timestep_is_initial);
}

HeadMapStack extract_image_self_maps(const RawAttention& a, const TokenLayout& layout,
                                     int height, int width, bool timestep_is_initial) {
    return extract_maps_over(a, layout, layout.noisy(), height, width, timestep_is_initial);
}

}  // namespace iid
