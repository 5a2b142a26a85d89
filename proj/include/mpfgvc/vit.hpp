#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mpfgvc/optim.hpp"
#include "mpfgvc/tensor.hpp"

namespace mpfgvc {

struct ViTConfig {
    std::int64_t image_side = 64;
    std::int64_t patch_side = 8;  // P
    std::int64_t channels = 3;
    std::int64_t embed_dim = 64;  // D
    std::int64_t num_layers = 6;  // L
    std::int64_t num_heads = 4;   // M
    std::int64_t mlp_ratio = 4;
    std::int64_t top_k = 8;        // tokens kept by the vision prompt
    std::int64_t ssvp_layer = -1;  // 1-based; -1 means L-1
    double ln_eps = 1e-5;

    std::int64_t patches_per_side() const { return image_side / patch_side; }
    std::int64_t patch_count() const { return patches_per_side() * patches_per_side(); }
    std::int64_t patch_dim() const { return patch_side * patch_side * channels; }
    std::int64_t head_dim() const { return embed_dim / num_heads; }
    std::int64_t selection_layer() const { return ssvp_layer < 0 ? num_layers - 1 : ssvp_layer; }
    void validate() const;
};

// The embedded token sequence flowing through the encoder.
struct TokenSequence {
    Tensor tokens;  // [n_tokens x D]
    int layer_index = 0;
    bool includes_class = true;
};

// Post-softmax class-token attention over the N patch tokens, one row per
// head; the class->class entry is excluded so rows need not sum to 1.
struct AttentionRecord {
    Tensor head_scores;  // [M x N], plain values, detached from the tape
    int layer_index = 0;
};

struct TransformerLayerParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ViTParams {
    Tensor patch_weight;  // [patch_dim x D]
    Tensor patch_bias;    // [D]
    Tensor class_token;   // [D]
    Tensor pos_embed;     // [(N+1) x D]
    std::vector<TransformerLayerParams> layers;
};

ViTParams init_vit_params(const ViTConfig& cfg, Rng& rng);

// Registers every tensor with a dotted name under `prefix`.
void register_vit_params(ViTParams& p, const std::string& prefix, bool frozen,
                         std::vector<Parameter>& out);
void register_layer_params(TransformerLayerParams& lp, const std::string& prefix, bool frozen,
                           std::vector<Parameter>& out);

// Non-differentiable patch extraction: [H x W x ch] -> [N x P*P*ch].
Tensor extract_patches(const Tensor& image, const ViTConfig& cfg);

// Patch embedding + class token + position embedding (layer-0 sequence).
TokenSequence patchify_and_embed(const Tensor& image, const ViTConfig& cfg, const ViTParams& params);

// Pre-norm residual MHSA + pre-norm residual MLP. When capture_attention is
// set, the class-token attention row of each head (patch columns only) is
// returned; capture is a pure read and never perturbs the forward values.
std::pair<TokenSequence, std::optional<AttentionRecord>> transformer_layer(
    const TokenSequence& seq, const TransformerLayerParams& lp, std::int64_t num_heads,
    double ln_eps, bool capture_attention);

inline std::pair<TokenSequence, std::optional<AttentionRecord>> transformer_layer(
    const TokenSequence& seq, const TransformerLayerParams& lp, const ViTConfig& cfg,
    bool capture_attention) {
    return transformer_layer(seq, lp, cfg.num_heads, cfg.ln_eps, capture_attention);
}

struct EncodeResult {
    Tensor visual_embedding;  // final class token, [D]
    AttentionRecord attention;
    std::vector<std::int64_t> selected_ids;  // empty when selection disabled
    std::int64_t final_input_len = 0;        // token count entering the last layer
};

// Full encoder pass. With use_selection, top-k patch tokens (by aggregated
// class attention at selection_layer) replace the full sequence for the
// remaining layers; otherwise the full sequence runs through every layer.
EncodeResult encode_image(const Tensor& image, const ViTConfig& cfg, const ViTParams& params,
                          bool use_selection = true);

}  // namespace mpfgvc
