#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "iid/blender.hpp"
#include "iid/disentangle.hpp"
#include "iid/layout.hpp"
#include "iid/maskgen.hpp"

namespace iid {

struct ToyDiTConfig {
    ModelKind kind = ModelKind::FluxLike;
    int layers = 2;
    int heads = 4;
    int model_dim = 16;  // divisible by heads
    int grid_height = 32;
    int grid_width = 32;
    int channels = 4;
    int vocab = 64;
    double guidance_scale = 1.0;
    std::uint64_t seed = 0;
};

struct LayerWeights {
    std::vector<double> wq, wk, wv, wo;  // [d][d]
    std::vector<double> ff1;             // [d][2d]
    std::vector<double> ff2;             // [2d][d]
};

struct ModelWeights {
    std::vector<double> token_table;  // [vocab][d]
    std::vector<double> patch_embed;  // [channels][d]
    std::vector<double> cond_embed;   // [channels][d]
    std::vector<double> time_proj;    // [d][d]
    std::vector<double> unpatch;      // [d][channels]
    std::vector<LayerWeights> layers;
};

ModelWeights init_weights(const ToyDiTConfig& cfg);

struct DenoiseState {
    LatentImage z;
    int t = 0;
    std::vector<double> schedule;  // step t consumes schedule[t-1]
    std::map<std::pair<int, int>, RawAttention> captured;  // (layer, t)
};

// Uniform schedule of total_steps steps summing to 1; start_t defaults to the
// top of the chain.
DenoiseState make_denoise_state(LatentImage z, int total_steps, int start_t = -1);

void reverse_step(DenoiseState& state, const LatentImage& eps);

double diffusion_loss(const LatentImage& eps_true, const LatentImage& eps_pred);

// What a forward pass is conditioned on. instruction_ids default to 1..N,
// positions to sequential; both can be overridden for composite sequences.
struct Conditioning {
    std::vector<std::vector<int>> instructions;  // token ids
    std::vector<int> instruction_ids;
    std::vector<int> positions;
    const LatentImage* condition = nullptr;
};

class ToyDiT {
public:
    explicit ToyDiT(const ToyDiTConfig& cfg);

    const ToyDiTConfig& config() const { return cfg_; }
    const ModelWeights& weights() const { return weights_; }

    TokenLayout sequence_layout(const Conditioning& c) const;

    // Token matrix [layout.total_len][d]. FluxLike folds the condition into
    // the noisy latent before patchify and adds the timestep embedding to the
    // image tokens; OmniLike gives condition and timestep their own segments.
    std::vector<double> embed_sequence(const Conditioning& c, int t, const LatentImage& z_t,
                                       TokenLayout* layout_out) const;

    // One transformer block in place: multi-head attention with residual,
    // then feedforward with residual. Only rows [q_begin, len) act as queries
    // and only they are updated. capture receives the post-softmax rows.
    void attention_block(std::vector<double>& tokens, int len, int layer, int q_begin,
                         const AttentionMaskMatrix* mask, RawAttention* capture) const;

    // Full denoiser forward, classifier-free guided when guidance_scale != 1
    // (the unconditional branch embeds a single pad token and never sees the
    // visibility mask, whose geometry belongs to the conditional sequence).
    // capture_layer >= 0 stores that layer's conditional-pass attention under
    // (layer, state.t).
    LatentImage predict_noise(DenoiseState& state, const Conditioning& c,
                              const AttentionMaskMatrix* mask = nullptr,
                              int capture_layer = -1) const;

private:
    ToyDiTConfig cfg_;
    ModelWeights weights_;
};

// Shared initial noise: a pure function of the model seed, so independent
// branches of one experiment start from the same z_T.
LatentImage initial_noise(const ToyDiTConfig& cfg);

enum class MapSource { FamilyDefault, InstructionMaps, SelfMaps };
enum class MaskMode { Rules, AllAllowed, Unmasked };

struct PipelineConfig {
    int total_steps = 30;
    int predefined_step = 27;
    int layer = -1;  // -1: second-to-last
    double sigma = 1.0;
    MapSource source = MapSource::FamilyDefault;
    int block_cross_instruction = -1;  // -1: family default (FluxLike blocks)
    MaskMode mask_mode = MaskMode::Rules;
};

struct BranchResult {
    LatentImage latent;         // z at the predefined step
    TokenLayout layout;
    RawAttention attention;     // from the forward that produced the latent
    bool timestep_is_initial = false;
};

BranchResult run_branch(const ToyDiT& model, const LatentImage& source,
                        const std::vector<int>& instruction, int instruction_id,
                        int total_steps, int stop_step, int capture_layer);

LatentImage run_plain(const ToyDiT& model, const LatentImage& source,
                      const std::vector<int>& instruction, int total_steps);

struct IidResult {
    LatentImage final_latent;
    bool bypassed = false;  // single instruction: plain denoise, no artifacts
    std::vector<EditMask> masks;
    OverlapMap overlap;
    InfluenceReport influence;
    AttentionMaskMatrix attention_mask;
    TokenLayout composite_layout;
};

IidResult run_iid(const ToyDiT& model, const LatentImage& source,
                  const std::vector<std::vector<int>>& instructions, const PipelineConfig& pcfg);

}  // namespace iid
