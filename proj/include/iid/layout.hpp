#pragma once

#include <vector>

#include "iid/arrays.hpp"

namespace iid {

// FluxLike: [instruction tokens..., noisy image tokens]; the condition image
// is folded into the noisy latent before patchify, so it owns no tokens.
// OmniLike: [instruction tokens..., condition image tokens, timestep token,
// noisy image tokens].
enum class ModelKind { FluxLike, OmniLike };

enum class SegmentKind { Instruction, ConditionImage, TimestepToken, NoisyImage };

struct Segment {
    SegmentKind kind = SegmentKind::Instruction;
    int instruction = 0;  // 1-based id, Instruction segments only
    int start = 0;
    int length = 0;
};

struct TokenLayout {
    ModelKind kind = ModelKind::FluxLike;
    std::vector<Segment> segments;
    int total_len = 0;

    const Segment* find_instruction(int instr) const;
    const Segment& noisy() const;
    const Segment* condition() const;
    const Segment* timestep() const;
    int instruction_count() const;
};

// n_p: per-instruction token counts, listed in sequence order with 1-based ids
// assigned in that order. n_v: condition token count (OmniLike only; a zero
// count drops the segment). n_z: noisy image token count.
TokenLayout build_layout(ModelKind kind, const std::vector<int>& n_p, int n_v, int n_z);

// Same segment structure, but instruction segments carry caller-chosen ids in
// caller-chosen order (used for reordered composite sequences).
TokenLayout build_layout_with_ids(ModelKind kind, const std::vector<int>& ids,
                                  const std::vector<int>& n_p, int n_v, int n_z);

// Post-softmax attention rows: [heads][rows][cols], each row a distribution
// over cols keys.
struct RawAttention {
    int heads = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> weights;

    double at(int head, int row, int col) const {
        return weights[(static_cast<std::size_t>(head) * rows + row) * cols + col];
    }
    double& at(int head, int row, int col) {
        return weights[(static_cast<std::size_t>(head) * rows + row) * cols + col];
    }
};

RawAttention make_raw_attention(int heads, int rows, int cols);

// Every ingestion path must go through this: weights nonnegative, rows
// stochastic within 1e-6.
void validate_raw_attention(const RawAttention& a);

struct RowRange {
    int begin = 0;
    int end = 0;  // half-open
    int length() const { return end - begin; }
};

// Rows of `a` holding the noisy-image queries. FluxLike attends with the full
// sequence as queries. OmniLike drops instruction and condition queries except
// at the initial step, so away from it the query block is [timestep, noisy]
// and the image rows are the last n_z of it.
RowRange image_query_rows(const TokenLayout& layout, const RawAttention& a,
                          bool timestep_is_initial);

// Per-head instruction-to-image maps: mean over the instruction's key columns,
// min-max normalized, reshaped to height x width.
HeadMapStack extract_instruction_maps(const RawAttention& a, const TokenLayout& layout,
                                      int instruction, int height, int width,
                                      bool timestep_is_initial = false);

// Per-head image self-attention maps: mean over the noisy-image key columns.
HeadMapStack extract_image_self_maps(const RawAttention& a, const TokenLayout& layout,
                                     int height, int width, bool timestep_is_initial = false);

}  // namespace iid
