#include "iid/disentangle.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "iid/error.hpp"

namespace iid {

std::size_t AttentionMaskMatrix::count_allowed() const {
    std::size_t n = 0;
    for (std::uint8_t b : allowed) n += b != 0;
    return n;
}

AttentionMaskMatrix make_all_allowed(int size) {
    if (size <= 0) throw InvalidValue("attention mask size must be positive");
    AttentionMaskMatrix m;
    m.size = size;
    m.allowed.assign(static_cast<std::size_t>(size) * size, 1);
    return m;
}

AttentionMaskMatrix build_disentangle_mask(const TokenLayout& layout,
                                           const std::vector<EditMask>& masks,
                                           const OverlapMap& overlap,
                                           bool block_cross_instruction) {
    const Segment& noisy = layout.noisy();
    if (masks.empty()) throw InvalidValue("build_disentangle_mask: no masks");
    const int h = masks[0].mask.height;
    const int w = masks[0].mask.width;
    if (h * w != noisy.length)
        throw ShapeMismatch("mask grid does not cover the noisy-image segment");
    for (const EditMask& m : masks)
        if (m.mask.height != h || m.mask.width != w)
            throw ShapeMismatch("masks disagree in shape");
    if (overlap.height != h || overlap.width != w)
        throw ShapeMismatch("overlap dims do not match masks");
    if (static_cast<int>(masks.size()) != layout.instruction_count())
        throw ShapeMismatch("mask count does not match layout instruction count");

    const int n = static_cast<int>(masks.size());
    const int cells = noisy.length;

    // exclusive[i]: cells held by mask i alone (overlap cells are exempt
    // everywhere, which is rule (b))
    std::vector<std::vector<std::uint8_t>> exclusive(n, std::vector<std::uint8_t>(cells, 0));
    std::vector<std::uint8_t> any_exclusive(cells, 0);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < cells; ++p)
            if (masks[i].mask.bits[p] && overlap.counts[p] < 2) {
                exclusive[i][p] = 1;
                any_exclusive[p] = 1;
            }

    auto mask_index_for = [&](int id) {
        for (int i = 0; i < n; ++i)
            if (masks[i].instruction == id) return i;
        throw UnknownInstruction("no mask for instruction " + std::to_string(id));
    };

    AttentionMaskMatrix vis = make_all_allowed(layout.total_len);

    for (const Segment& s : layout.segments) {
        if (s.kind != SegmentKind::Instruction) continue;
        const int self = mask_index_for(s.instruction);
        for (int q = s.start; q < s.start + s.length; ++q) {
            // (a): no reaching into another instruction's exclusive region
            for (int i = 0; i < n; ++i) {
                if (i == self) continue;
                for (int p = 0; p < cells; ++p)
                    if (exclusive[i][p]) vis.set(q, noisy.start + p, false);
            }
            // (c): no reading other instructions' text
            if (block_cross_instruction) {
                for (const Segment& o : layout.segments) {
                    if (o.kind != SegmentKind::Instruction || o.instruction == s.instruction)
                        continue;
                    for (int k = o.start; k < o.start + o.length; ++k) vis.set(q, k, false);
                }
            }
        }
    }

    // (d): an image query inside any mask loses every foreign exclusive
    // region and every foreign instruction's text keys; otherwise a value
    // perturbation at those keys would leak into the region. A query claimed
    // by several masks is inside a foreign mask from each claimant's
    // viewpoint, so it loses all exclusive regions and all text keys.
    auto block_text = [&](int q, int keep_instruction) {
        for (const Segment& o : layout.segments) {
            if (o.kind != SegmentKind::Instruction || o.instruction == keep_instruction)
                continue;
            for (int k = o.start; k < o.start + o.length; ++k) vis.set(q, k, false);
        }
    };
    for (int p = 0; p < cells; ++p) {
        if (overlap.counts[p] == 0) continue;
        const int q = noisy.start + p;
        if (overlap.counts[p] >= 2) {
            for (int kp = 0; kp < cells; ++kp)
                if (any_exclusive[kp]) vis.set(q, noisy.start + kp, false);
            block_text(q, 0);
        } else {
            int owner = -1;
            for (int i = 0; i < n; ++i)
                if (masks[i].mask.bits[p]) owner = i;
            for (int i = 0; i < n; ++i) {
                if (i == owner) continue;
                for (int kp = 0; kp < cells; ++kp)
                    if (exclusive[i][kp]) vis.set(q, noisy.start + kp, false);
            }
            block_text(q, masks[owner].instruction);
        }
    }

    for (int q = 0; q < vis.size; ++q) vis.set(q, q, true);
    return vis;
}

void masked_softmax_rows(const double* logits, int rows, int cols,
                         const AttentionMaskMatrix* mask, int row_offset, double* out) {
    if (mask != nullptr) {
        if (cols != mask->size || row_offset < 0 || row_offset + rows > mask->size)
            throw ShapeMismatch("masked_softmax: rows do not fit the visibility matrix");
    }
    for (int r = 0; r < rows; ++r) {
        const double* in = logits + static_cast<std::size_t>(r) * cols;
        double* o = out + static_cast<std::size_t>(r) * cols;
        const std::uint8_t* allow =
            mask ? mask->allowed.data() + static_cast<std::size_t>(row_offset + r) * cols : nullptr;

        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < cols; ++k)
            if (!allow || allow[k])
                if (in[k] > mx) mx = in[k];
        if (!(mx > -std::numeric_limits<double>::infinity()))
            throw InvalidValue("masked_softmax: row with no allowed key");

        double sum = 0.0;
        for (int k = 0; k < cols; ++k) {
            const double e = (allow && !allow[k]) ? 0.0 : std::exp(in[k] - mx);
            o[k] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int k = 0; k < cols; ++k) o[k] *= inv;
    }
}

std::vector<double> masked_softmax(const std::vector<double>& logits, int rows, int cols,
                                   const AttentionMaskMatrix* mask, int row_offset) {
    if (logits.size() != static_cast<std::size_t>(rows) * cols)
        throw ShapeMismatch("masked_softmax: logits do not match dims");
    std::vector<double> out(logits.size());
    masked_softmax_rows(logits.data(), rows, cols, mask, row_offset, out.data());
    return out;
}

}  // namespace iid
