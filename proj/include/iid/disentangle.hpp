#pragma once

#include <vector>

#include "iid/layout.hpp"
#include "iid/maskgen.hpp"

namespace iid {

// Boolean visibility matrix over the composite sequence: allowed[q][k] means
// query q may attend key k. The diagonal is always allowed, so no row is empty.
struct AttentionMaskMatrix {
    int size = 0;
    std::vector<std::uint8_t> allowed;

    bool at(int q, int k) const { return allowed[static_cast<std::size_t>(q) * size + k] != 0; }
    void set(int q, int k, bool v) { allowed[static_cast<std::size_t>(q) * size + k] = v ? 1 : 0; }
    std::size_t count_allowed() const;
};

AttentionMaskMatrix make_all_allowed(int size);

// Visibility rules over the composite layout:
//   (a) instruction-i queries cannot reach image keys lying exclusively in
//       another instruction's mask;
//   (b) image cells claimed by two or more masks stay visible to every
//       instruction query;
//   (c) optionally, instruction queries cannot reach other instructions'
//       text keys;
//   (d) image queries inside mask j cannot reach image keys exclusive to
//       mask i or instruction i's text keys, i != j (region isolation: no
//       foreign value may influence an edit region through one layer).
// Mask grids map row-major onto the NoisyImage segment.
AttentionMaskMatrix build_disentangle_mask(const TokenLayout& layout,
                                           const std::vector<EditMask>& masks,
                                           const OverlapMap& overlap,
                                           bool block_cross_instruction);

// Row-wise softmax over `logits` ([rows][cols]) honoring a visibility matrix.
// Forbidden entries come out exactly zero; a null mask means everything is
// allowed and takes the same code path, so an all-true matrix and no matrix
// produce bitwise-identical results. Logit row r corresponds to matrix row
// row_offset + r; key k to matrix column k.
void masked_softmax_rows(const double* logits, int rows, int cols,
                         const AttentionMaskMatrix* mask, int row_offset, double* out);

std::vector<double> masked_softmax(const std::vector<double>& logits, int rows, int cols,
                                   const AttentionMaskMatrix* mask, int row_offset = 0);

}  // namespace iid
