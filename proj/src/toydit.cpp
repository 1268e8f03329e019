#include "iid/toydit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iid/error.hpp"
#include "iid/kernels.hpp"
#include "iid/rng.hpp"

namespace iid {

namespace {

void check_config(const ToyDiTConfig& cfg) {
    if (cfg.layers < 1) throw ConfigError("model needs at least one layer");
    if (cfg.heads < 1) throw ConfigError("model needs at least one head");
    if (cfg.model_dim < 1 || cfg.model_dim % cfg.heads != 0)
        throw ConfigError("model_dim must be a positive multiple of heads");
    if (cfg.grid_height < 1 || cfg.grid_width < 1) throw ConfigError("grid must be positive");
    if (cfg.channels < 1) throw ConfigError("channels must be positive");
    if (cfg.vocab < 1) throw ConfigError("vocab must be positive");
    if (!(cfg.guidance_scale >= 1.0)) throw ConfigError("guidance scale must be >= 1");
}

void fill_normal(Rng& rng, std::vector<double>& v, std::size_t n, double scale) {
    v.resize(n);
    for (double& x : v) x = rng.normal() * scale;
}

// Interleaved sine/cosine features of an integer index.
void sinusoid(int index, int dim, double* out) {
    for (int i = 0; i < dim; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
        const double a = index * freq;
        out[i] = std::sin(a);
        if (i + 1 < dim) out[i + 1] = std::cos(a);
    }
}

constexpr std::uint64_t kNoiseStream = 0x9e3779b97f4a7c15ull;
constexpr int kPadToken = 0;

}  // namespace

ModelWeights init_weights(const ToyDiTConfig& cfg) {
    check_config(cfg);
    const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.model_dim));
    Rng rng(cfg.seed);

    ModelWeights w;
    fill_normal(rng, w.token_table, static_cast<std::size_t>(cfg.vocab) * d, scale);
    fill_normal(rng, w.patch_embed, static_cast<std::size_t>(cfg.channels) * d, scale);
    fill_normal(rng, w.cond_embed, static_cast<std::size_t>(cfg.channels) * d, scale);
    fill_normal(rng, w.time_proj, d * d, scale);
    fill_normal(rng, w.unpatch, d * static_cast<std::size_t>(cfg.channels), scale);
    w.layers.resize(cfg.layers);
    for (LayerWeights& lw : w.layers) {
        fill_normal(rng, lw.wq, d * d, scale);
        fill_normal(rng, lw.wk, d * d, scale);
        fill_normal(rng, lw.wv, d * d, scale);
        fill_normal(rng, lw.wo, d * d, scale);
        fill_normal(rng, lw.ff1, d * 2 * d, scale);
        fill_normal(rng, lw.ff2, 2 * d * d, scale);
    }
    return w;
}

DenoiseState make_denoise_state(LatentImage z, int total_steps, int start_t) {
    if (total_steps < 1) throw ConfigError("total steps must be positive");
    if (start_t < 0) start_t = total_steps;
    if (start_t > total_steps) throw ConfigError("start step beyond the schedule");
    DenoiseState s;
    s.z = std::move(z);
    s.t = start_t;
    s.schedule.assign(total_steps, 1.0 / total_steps);
    return s;
}

void reverse_step(DenoiseState& state, const LatentImage& eps) {
    if (state.t < 1) throw StepUnderflow("reverse_step at t == 0");
    if (eps.values.size() != state.z.values.size())
        throw ShapeMismatch("noise prediction does not match latent shape");
    const double step = state.schedule[state.t - 1];
    for (std::size_t i = 0; i < state.z.values.size(); ++i)
        state.z.values[i] -= step * eps.values[i];
    state.t -= 1;
}

double diffusion_loss(const LatentImage& eps_true, const LatentImage& eps_pred) {
    if (eps_true.values.size() != eps_pred.values.size() || eps_true.height != eps_pred.height ||
        eps_true.width != eps_pred.width || eps_true.channels != eps_pred.channels)
        throw ShapeMismatch("loss operands disagree in shape");
    double sum = 0.0;
    for (std::size_t i = 0; i < eps_true.values.size(); ++i) {
        const double d = eps_true.values[i] - eps_pred.values[i];
        sum += d * d;
    }
    return sum / static_cast<double>(eps_true.values.size());
}

ToyDiT::ToyDiT(const ToyDiTConfig& cfg) : cfg_(cfg), weights_(init_weights(cfg)) {}

TokenLayout ToyDiT::sequence_layout(const Conditioning& c) const {
    if (c.instructions.empty()) throw InvalidLayout("conditioning has no instructions");
    std::vector<int> n_p;
    n_p.reserve(c.instructions.size());
    for (const std::vector<int>& seq : c.instructions) {
        if (seq.empty()) throw InvalidLayout("empty instruction");
        n_p.push_back(static_cast<int>(seq.size()));
    }
    const int n_z = cfg_.grid_height * cfg_.grid_width;
    const int n_v = cfg_.kind == ModelKind::OmniLike && c.condition != nullptr ? n_z : 0;
    if (c.instruction_ids.empty()) return build_layout(cfg_.kind, n_p, n_v, n_z);
    return build_layout_with_ids(cfg_.kind, c.instruction_ids, n_p, n_v, n_z);
}

std::vector<double> ToyDiT::embed_sequence(const Conditioning& c, int t,
                                           const LatentImage& z_t,
                                           TokenLayout* layout_out) const {
    const TokenLayout layout = sequence_layout(c);
    const int d = cfg_.model_dim;
    const int len = layout.total_len;
    if (z_t.height != cfg_.grid_height || z_t.width != cfg_.grid_width ||
        z_t.channels != cfg_.channels)
        throw ShapeMismatch("latent does not match the configured grid");
    if (c.condition != nullptr &&
        (c.condition->height != z_t.height || c.condition->width != z_t.width ||
         c.condition->channels != z_t.channels))
        throw ShapeMismatch("condition latent does not match the noisy latent");
    if (!c.positions.empty() && static_cast<int>(c.positions.size()) != len)
        throw ShapeMismatch("position assignment does not cover the sequence");

    std::vector<double> time_vec(d), time_feat(d);
    sinusoid(t, d, time_feat.data());
    matmul(time_feat.data(), weights_.time_proj.data(), time_vec.data(), 1, d, d);

    std::vector<double> x(static_cast<std::size_t>(len) * d, 0.0);
    std::vector<double> patch(cfg_.channels), pe(d);
    auto position_of = [&](int slot) { return c.positions.empty() ? slot : c.positions[slot]; };

    std::size_t instr_idx = 0;
    for (const Segment& s : layout.segments) {
        switch (s.kind) {
            case SegmentKind::Instruction: {
                const std::vector<int>& seq = c.instructions[instr_idx++];
                for (int i = 0; i < s.length; ++i) {
                    const int tok = seq[i];
                    if (tok < 0 || tok >= cfg_.vocab)
                        throw InvalidInstruction("token id outside the vocabulary: " +
                                                 std::to_string(tok));
                    double* row = x.data() + static_cast<std::size_t>(s.start + i) * d;
                    const double* emb = weights_.token_table.data() +
                                        static_cast<std::size_t>(tok) * d;
                    sinusoid(position_of(s.start + i), d, pe.data());
                    for (int k = 0; k < d; ++k) row[k] = emb[k] + pe[k];
                }
                break;
            }
            case SegmentKind::ConditionImage: {
                for (int i = 0; i < s.length; ++i) {
                    const int r = i / cfg_.grid_width, cc = i % cfg_.grid_width;
                    for (int ch = 0; ch < cfg_.channels; ++ch)
                        patch[ch] = c.condition->at(ch, r, cc);
                    double* row = x.data() + static_cast<std::size_t>(s.start + i) * d;
                    matmul(patch.data(), weights_.cond_embed.data(), row, 1, cfg_.channels, d);
                    sinusoid(position_of(s.start + i), d, pe.data());
                    for (int k = 0; k < d; ++k) row[k] += pe[k];
                }
                break;
            }
            case SegmentKind::TimestepToken: {
                double* row = x.data() + static_cast<std::size_t>(s.start) * d;
                sinusoid(position_of(s.start), d, pe.data());
                for (int k = 0; k < d; ++k) row[k] = time_vec[k] + pe[k];
                break;
            }
            case SegmentKind::NoisyImage: {
                const bool fold_condition =
                    cfg_.kind == ModelKind::FluxLike && c.condition != nullptr;
                for (int i = 0; i < s.length; ++i) {
                    const int r = i / cfg_.grid_width, cc = i % cfg_.grid_width;
                    for (int ch = 0; ch < cfg_.channels; ++ch) {
                        patch[ch] = z_t.at(ch, r, cc);
                        if (fold_condition) patch[ch] += c.condition->at(ch, r, cc);
                    }
                    double* row = x.data() + static_cast<std::size_t>(s.start + i) * d;
                    matmul(patch.data(), weights_.patch_embed.data(), row, 1, cfg_.channels, d);
                    sinusoid(position_of(s.start + i), d, pe.data());
                    if (cfg_.kind == ModelKind::FluxLike) {
                        for (int k = 0; k < d; ++k) row[k] += pe[k] + time_vec[k];
                    } else {
                        for (int k = 0; k < d; ++k) row[k] += pe[k];
                    }
                }
                break;
            }
        }
    }
    if (layout_out != nullptr) *layout_out = layout;
    return x;
}

void ToyDiT::attention_block(std::vector<double>& tokens, int len, int layer, int q_begin,
                             const AttentionMaskMatrix* mask, RawAttention* capture) const {
    const int d = cfg_.model_dim;
    if (layer < 0 || layer >= cfg_.layers) throw ConfigError("layer index out of range");
    if (tokens.size() != static_cast<std::size_t>(len) * d)
        throw ShapeMismatch("token buffer does not match the sequence length");
    if (q_begin < 0 || q_begin >= len) throw InvalidValue("query start out of range");
    const LayerWeights& lw = weights_.layers[layer];
    const int rows_q = len - q_begin;
    const double* xq = tokens.data() + static_cast<std::size_t>(q_begin) * d;

    std::vector<double> q(static_cast<std::size_t>(rows_q) * d);
    std::vector<double> k(static_cast<std::size_t>(len) * d);
    std::vector<double> v(static_cast<std::size_t>(len) * d);
    matmul(xq, lw.wq.data(), q.data(), rows_q, d, d);
    matmul(tokens.data(), lw.wk.data(), k.data(), len, d, d);
    matmul(tokens.data(), lw.wv.data(), v.data(), len, d, d);

    if (capture != nullptr) *capture = make_raw_attention(cfg_.heads, rows_q, len);
    std::vector<double> mixed(static_cast<std::size_t>(rows_q) * d);
    attention_core(q.data(), k.data(), v.data(), cfg_.heads, rows_q, len, d / cfg_.heads, mask,
                   q_begin, mixed.data(), capture != nullptr ? capture->weights.data() : nullptr);

    std::vector<double> proj(static_cast<std::size_t>(rows_q) * d);
    matmul(mixed.data(), lw.wo.data(), proj.data(), rows_q, d, d);
    for (std::size_t i = 0; i < proj.size(); ++i)
        tokens[static_cast<std::size_t>(q_begin) * d + i] += proj[i];

    const int ff = 2 * d;
    std::vector<double> hidden(static_cast<std::size_t>(rows_q) * ff);
    matmul(tokens.data() + static_cast<std::size_t>(q_begin) * d, lw.ff1.data(), hidden.data(),
           rows_q, d, ff);
    for (double& h : hidden)
        if (h < 0.0) h = 0.0;
    std::vector<double> out(static_cast<std::size_t>(rows_q) * d);
    matmul(hidden.data(), lw.ff2.data(), out.data(), rows_q, ff, d);
    for (std::size_t i = 0; i < out.size(); ++i)
        tokens[static_cast<std::size_t>(q_begin) * d + i] += out[i];
}

namespace {

LatentImage unpatchify(const std::vector<double>& tokens, const TokenLayout& layout,
                       const ToyDiTConfig& cfg, const ModelWeights& w) {
    const Segment& noisy = layout.noisy();
    const int d = cfg.model_dim;
    LatentImage eps = make_latent(cfg.grid_height, cfg.grid_width, cfg.channels);
    std::vector<double> chans(cfg.channels);
    for (int i = 0; i < noisy.length; ++i) {
        const double* row = tokens.data() + static_cast<std::size_t>(noisy.start + i) * d;
        matmul(row, w.unpatch.data(), chans.data(), 1, d, cfg.channels);
        const int r = i / cfg.grid_width, c = i % cfg.grid_width;
        for (int ch = 0; ch < cfg.channels; ++ch) eps.at(ch, r, c) = chans[ch];
    }
    return eps;
}

}  // namespace

LatentImage ToyDiT::predict_noise(DenoiseState& state, const Conditioning& c,
                                  const AttentionMaskMatrix* mask, int capture_layer) const {
    const int total_steps = static_cast<int>(state.schedule.size());
    if (capture_layer >= cfg_.layers) throw ConfigError("capture layer out of range");

    auto forward = [&](const Conditioning& cond, const AttentionMaskMatrix* m,
                       int cap_layer, RawAttention* cap_out) {
        TokenLayout layout;
        std::vector<double> x = embed_sequence(cond, state.t, state.z, &layout);
        // OmniLike drops instruction and condition queries after the initial
        // step; their rows stay frozen and serve as keys only.
        int q_begin = 0;
        if (cfg_.kind == ModelKind::OmniLike && state.t < total_steps)
            q_begin = layout.timestep()->start;
        for (int l = 0; l < cfg_.layers; ++l)
            attention_block(x, layout.total_len, l, q_begin, m,
                            l == cap_layer ? cap_out : nullptr);
        return unpatchify(x, layout, cfg_, weights_);
    };

    RawAttention captured;
    LatentImage eps_cond = forward(c, mask, capture_layer,
                                   capture_layer >= 0 ? &captured : nullptr);
    if (capture_layer >= 0)
        state.captured[{capture_layer, state.t}] = std::move(captured);

    const double g = cfg_.guidance_scale;
    if (g == 1.0) return eps_cond;

    Conditioning uncond;
    uncond.instructions = {{kPadToken}};
    uncond.condition = c.condition;
    LatentImage eps_un = forward(uncond, nullptr, -1, nullptr);
    for (std::size_t i = 0; i < eps_un.values.size(); ++i)
        eps_un.values[i] += g * (eps_cond.values[i] - eps_un.values[i]);
    return eps_un;
}

LatentImage initial_noise(const ToyDiTConfig& cfg) {
    check_config(cfg);
    Rng rng(cfg.seed ^ kNoiseStream);
    LatentImage z = make_latent(cfg.grid_height, cfg.grid_width, cfg.channels);
    for (double& v : z.values) v = rng.normal();
    return z;
}

BranchResult run_branch(const ToyDiT& model, const LatentImage& source,
                        const std::vector<int>& instruction, int instruction_id,
                        int total_steps, int stop_step, int capture_layer) {
    if (stop_step < 1 || stop_step >= total_steps)
        throw ConfigError("predefined step must lie in [1, total steps)");
    if (capture_layer < 0 || capture_layer >= model.config().layers)
        throw ConfigError("capture layer out of range");

    Conditioning c;
    c.instructions = {instruction};
    c.instruction_ids = {instruction_id};
    c.condition = &source;

    DenoiseState state = make_denoise_state(initial_noise(model.config()), total_steps);
    BranchResult res;
    res.layout = model.sequence_layout(c);
    res.timestep_is_initial = stop_step + 1 == total_steps;
    while (state.t > stop_step) {
        const bool last = state.t == stop_step + 1;
        const LatentImage eps =
            model.predict_noise(state, c, nullptr, last ? capture_layer : -1);
        reverse_step(state, eps);
    }
    res.attention = std::move(state.captured.at({capture_layer, stop_step + 1}));
    res.latent = std::move(state.z);
    return res;
}

LatentImage run_plain(const ToyDiT& model, const LatentImage& source,
                      const std::vector<int>& instruction, int total_steps) {
    Conditioning c;
    c.instructions = {instruction};
    c.condition = &source;
    DenoiseState state = make_denoise_state(initial_noise(model.config()), total_steps);
    while (state.t > 0) {
        const LatentImage eps = model.predict_noise(state, c);
        reverse_step(state, eps);
    }
    return state.z;
}

IidResult run_iid(const ToyDiT& model, const LatentImage& source,
                  const std::vector<std::vector<int>>& instructions,
                  const PipelineConfig& pcfg) {
    const ToyDiTConfig& cfg = model.config();
    const int n = static_cast<int>(instructions.size());
    if (n == 0) throw InvalidInstruction("no instructions");

    IidResult result;
    if (n == 1) {
        result.final_latent = run_plain(model, source, instructions[0], pcfg.total_steps);
        result.bypassed = true;
        return result;
    }

    const int layer = pcfg.layer < 0 ? std::max(cfg.layers - 2, 0) : pcfg.layer;
    if (layer >= cfg.layers) throw ConfigError("capture layer out of range");

    std::vector<BranchResult> branches;
    branches.reserve(n);
    for (int i = 0; i < n; ++i)
        branches.push_back(run_branch(model, source, instructions[i], i + 1, pcfg.total_steps,
                                      pcfg.predefined_step, layer));

    const bool self_maps =
        pcfg.source == MapSource::SelfMaps ||
        (pcfg.source == MapSource::FamilyDefault && cfg.kind == ModelKind::OmniLike);
    std::vector<HeadMapStack> stacks;
    stacks.reserve(n);
    for (int i = 0; i < n; ++i) {
        const BranchResult& b = branches[i];
        stacks.push_back(self_maps
                             ? extract_image_self_maps(b.attention, b.layout, cfg.grid_height,
                                                       cfg.grid_width, b.timestep_is_initial)
                             : extract_instruction_maps(b.attention, b.layout, i + 1,
                                                        cfg.grid_height, cfg.grid_width,
                                                        b.timestep_is_initial));
    }

    MaskGenResult gen = generate_masks(stacks, pcfg.sigma);
    result.influence = influence_scores(stacks, gen.masks);

    const int n_z = cfg.grid_height * cfg.grid_width;
    const int n_v = cfg.kind == ModelKind::OmniLike ? n_z : 0;
    CompositeInstruction comp =
        compose_instructions(instructions, result.influence.order, cfg.kind, n_v, n_z);

    std::vector<LatentImage> latents;
    latents.reserve(n);
    for (BranchResult& b : branches) latents.push_back(std::move(b.latent));
    LatentImage blended = blend_latents(latents, gen.masks, gen.overlap);

    const bool block_cross = pcfg.block_cross_instruction < 0
                                 ? cfg.kind == ModelKind::FluxLike
                                 : pcfg.block_cross_instruction != 0;
    result.attention_mask =
        build_disentangle_mask(comp.layout, gen.masks, gen.overlap, block_cross);

    Conditioning cc;
    cc.instructions.reserve(n);
    for (int id : result.influence.order) cc.instructions.push_back(instructions[id - 1]);
    cc.instruction_ids = result.influence.order;
    cc.positions = comp.positions;
    cc.condition = &source;

    const AttentionMaskMatrix all = pcfg.mask_mode == MaskMode::AllAllowed
                                        ? make_all_allowed(comp.layout.total_len)
                                        : AttentionMaskMatrix{};
    const AttentionMaskMatrix* mask_ptr = nullptr;
    if (pcfg.mask_mode == MaskMode::Rules) mask_ptr = &result.attention_mask;
    else if (pcfg.mask_mode == MaskMode::AllAllowed) mask_ptr = &all;

    DenoiseState state =
        make_denoise_state(std::move(blended), pcfg.total_steps, pcfg.predefined_step);
    while (state.t > 0) {
        const LatentImage eps = model.predict_noise(state, cc, mask_ptr);
        reverse_step(state, eps);
    }

    result.final_latent = std::move(state.z);
    result.masks = std::move(gen.masks);
    result.overlap = std::move(gen.overlap);
    result.composite_layout = std::move(comp.layout);
    return result;
}

}  // namespace iid
