#include "mpfgvc/vit.hpp"

#include <cmath>

#include "mpfgvc/errors.hpp"
#include "mpfgvc/ops.hpp"
#include "mpfgvc/ssvp.hpp"

namespace mpfgvc {

void ViTConfig::validate() const {
    if (image_side <= 0 || patch_side <= 0 || image_side % patch_side != 0)
        throw ConfigError("image side " + std::to_string(image_side) +
                          " not divisible by patch side " + std::to_string(patch_side));
    if (embed_dim % num_heads != 0)
        throw ConfigError("embed dim " + std::to_string(embed_dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    if (num_layers < 2) throw ConfigError("need at least 2 transformer layers");
    if (top_k < 1 || top_k > patch_count())
        throw ConfigError("top_k " + std::to_string(top_k) + " outside [1, " +
                          std::to_string(patch_count()) + "]");
    const auto sel = selection_layer();
    if (sel < 1 || sel > num_layers - 1)
        throw ConfigError("selection layer " + std::to_string(sel) + " outside [1, " +
                          std::to_string(num_layers - 1) + "]");
}

ViTParams init_vit_params(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    ViTParams p;
    p.patch_weight = init_weight({cfg.patch_dim(), cfg.embed_dim}, rng);
    p.patch_bias = init_zeros({cfg.embed_dim});
    p.class_token = init_weight({cfg.embed_dim}, rng);
    p.pos_embed = init_weight({cfg.patch_count() + 1, cfg.embed_dim}, rng);
    const std::int64_t D = cfg.embed_dim;
    const std::int64_t H = D * cfg.mlp_ratio;
    for (std::int64_t l = 0; l < cfg.num_layers; ++l) {
        TransformerLayerParams lp;
        lp.ln1_gamma = init_ones({D});
        lp.ln1_beta = init_zeros({D});
        lp.wq = init_weight({D, D}, rng);
        lp.bq = init_zeros({D});
        lp.wk = init_weight({D, D}, rng);
        lp.bk = init_zeros({D});
        lp.wv = init_weight({D, D}, rng);
        lp.bv = init_zeros({D});
        lp.wo = init_weight({D, D}, rng);
        lp.bo = init_zeros({D});
        lp.ln2_gamma = init_ones({D});
        lp.ln2_beta = init_zeros({D});
        lp.mlp_w1 = init_weight({D, H}, rng);
        lp.mlp_b1 = init_zeros({H});
        lp.mlp_w2 = init_weight({H, D}, rng);
        lp.mlp_b2 = init_zeros({D});
        p.layers.push_back(std::move(lp));
    }
    return p;
}

void register_layer_params(TransformerLayerParams& lp, const std::string& prefix, bool frozen,
                           std::vector<Parameter>& out) {
    out.push_back({lp.ln1_gamma, frozen, prefix + ".ln1.gamma"});
    out.push_back({lp.ln1_beta, frozen, prefix + ".ln1.beta"});
    out.push_back({lp.wq, frozen, prefix + ".mhsa.wq"});
    out.push_back({lp.bq, frozen, prefix + ".mhsa.bq"});
    out.push_back({lp.wk, frozen, prefix + ".mhsa.wk"});
    out.push_back({lp.bk, frozen, prefix + ".mhsa.bk"});
    out.push_back({lp.wv, frozen, prefix + ".mhsa.wv"});
    out.push_back({lp.bv, frozen, prefix + ".mhsa.bv"});
    out.push_back({lp.wo, frozen, prefix + ".mhsa.wo"});
    out.push_back({lp.bo, frozen, prefix + ".mhsa.bo"});
    out.push_back({lp.ln2_gamma, frozen, prefix + ".ln2.gamma"});
    out.push_back({lp.ln2_beta, frozen, prefix + ".ln2.beta"});
    out.push_back({lp.mlp_w1, frozen, prefix + ".mlp.w1"});
    out.push_back({lp.mlp_b1, frozen, prefix + ".mlp.b1"});
    out.push_back({lp.mlp_w2, frozen, prefix + ".mlp.w2"});
    out.push_back({lp.mlp_b2, frozen, prefix + ".mlp.b2"});
}

void register_vit_params(ViTParams& p, const std::string& prefix, bool frozen,
                         std::vector<Parameter>& out) {
    out.push_back({p.patch_weight, frozen, prefix + ".patch_embed.w"});
    out.push_back({p.patch_bias, frozen, prefix + ".patch_embed.b"});
    out.push_back({p.class_token, frozen, prefix + ".class_token"});
    out.push_back({p.pos_embed, frozen, prefix + ".pos_embed"});
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        register_layer_params(p.layers[l], prefix + ".layer" + std::to_string(l), frozen, out);
}

Tensor extract_patches(const Tensor& image, const ViTConfig& cfg) {
    if (image.rank() != 3 || image.dim(0) != cfg.image_side || image.dim(1) != cfg.image_side ||
        image.dim(2) != cfg.channels)
        throw ConfigError("image " + shape_str(image.shape()) + " does not match config side " +
                          std::to_string(cfg.image_side) + " channels " +
                          std::to_string(cfg.channels));
    if (image.requires_grad())
        throw ContractError("extract_patches: input images are constants of the forward pass");
    const std::int64_t grid = cfg.patches_per_side();
    const std::int64_t P = cfg.patch_side;
    const std::int64_t ch = cfg.channels;
    const std::int64_t side = cfg.image_side;
    std::vector<double> out(static_cast<std::size_t>(cfg.patch_count() * cfg.patch_dim()));
    const auto& pix = image.values();
    std::size_t w = 0;
    for (std::int64_t gy = 0; gy < grid; ++gy)
        for (std::int64_t gx = 0; gx < grid; ++gx)
            for (std::int64_t py = 0; py < P; ++py)
                for (std::int64_t px = 0; px < P; ++px)
                    for (std::int64_t c = 0; c < ch; ++c)
                        out[w++] = pix[static_cast<std::size_t>(
                            (((gy * P + py) * side) + gx * P + px) * ch + c)];
    return Tensor::from({cfg.patch_count(), cfg.patch_dim()}, std::move(out));
}

TokenSequence patchify_and_embed(const Tensor& image, const ViTConfig& cfg,
                                 const ViTParams& params) {
    cfg.validate();
    Tensor patches = extract_patches(image, cfg);
    Tensor embedded = ops::add_rowvec(ops::matmul(patches, params.patch_weight), params.patch_bias);
    Tensor class_row = ops::reshape(params.class_token, {1, cfg.embed_dim});
    Tensor seq = ops::concat_rows({class_row, embedded});
    seq = ops::add(seq, params.pos_embed);
    return TokenSequence{seq, 0, true};
}

std::pair<TokenSequence, std::optional<AttentionRecord>> transformer_layer(
    const TokenSequence& seq, const TransformerLayerParams& lp, std::int64_t num_heads,
    double ln_eps, bool capture_attention) {
    const Tensor& x = seq.tokens;
    const std::int64_t n = x.dim(0);
    const std::int64_t embed_dim = x.dim(1);
    if (embed_dim % num_heads != 0)
        throw ShapeError("transformer_layer: dim " + std::to_string(embed_dim) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
    const std::int64_t dh = embed_dim / num_heads;
    if (capture_attention && !seq.includes_class)
        throw ContractError("attention capture needs a class-bearing sequence");

    Tensor h = ops::layer_norm(x, lp.ln1_gamma, lp.ln1_beta, ln_eps);
    Tensor q = ops::add_rowvec(ops::matmul(h, lp.wq), lp.bq);
    Tensor k = ops::add_rowvec(ops::matmul(h, lp.wk), lp.bk);
    Tensor v = ops::add_rowvec(ops::matmul(h, lp.wv), lp.bv);

    std::optional<AttentionRecord> record;
    std::vector<double> captured;
    std::vector<Tensor> head_outputs;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::int64_t m = 0; m < num_heads; ++m) {
        Tensor qm = ops::slice_cols(q, m * dh, dh);
        Tensor km = ops::slice_cols(k, m * dh, dh);
        Tensor vm = ops::slice_cols(v, m * dh, dh);
        Tensor logits = ops::scale(ops::matmul(qm, ops::transpose(km)), inv_sqrt_dh);
        Tensor probs = ops::softmax(logits);  // [n x n]
        if (capture_attention) {
            // Class-token query row over patch keys; plain value read.
            for (std::int64_t j = 1; j < n; ++j) captured.push_back(probs.at({0, j}));
        }
        head_outputs.push_back(ops::matmul(probs, vm));
    }
    if (capture_attention) {
        record = AttentionRecord{
            Tensor::from({num_heads, n - 1}, std::move(captured)), seq.layer_index + 1};
    }

    // Concatenate head outputs along columns via transpose + row concat.
    Tensor merged;
    if (head_outputs.size() == 1) {
        merged = head_outputs.front();
    } else {
        std::vector<Tensor> transposed;
        transposed.reserve(head_outputs.size());
        for (const auto& ho : head_outputs) transposed.push_back(ops::transpose(ho));
        merged = ops::transpose(ops::concat_rows(transposed));
    }
    Tensor attn_out = ops::add_rowvec(ops::matmul(merged, lp.wo), lp.bo);
    Tensor x2 = ops::add(x, attn_out);

    Tensor h2 = ops::layer_norm(x2, lp.ln2_gamma, lp.ln2_beta, ln_eps);
    Tensor mlp = ops::add_rowvec(ops::matmul(h2, lp.mlp_w1), lp.mlp_b1);
    mlp = ops::gelu(mlp);
    mlp = ops::add_rowvec(ops::matmul(mlp, lp.mlp_w2), lp.mlp_b2);
    Tensor out = ops::add(x2, mlp);

    return {TokenSequence{out, seq.layer_index + 1, seq.includes_class}, record};
}

EncodeResult encode_image(const Tensor& image, const ViTConfig& cfg, const ViTParams& params,
                          bool use_selection) {
    cfg.validate();
    const std::int64_t sel_layer = cfg.selection_layer();
    TokenSequence seq = patchify_and_embed(image, cfg, params);
    EncodeResult result;
    for (std::int64_t l = 1; l <= cfg.num_layers; ++l) {
        const bool capture = (l == sel_layer);
        auto [next, record] = transformer_layer(seq, params.layers[static_cast<std::size_t>(l - 1)],
                                                cfg, capture);
        seq = std::move(next);
        if (capture) {
            result.attention = std::move(*record);
            if (use_selection) {
                Tensor agg = aggregate_head_attention(result.attention);
                SelectionResult sel = topk_indices(agg, cfg.top_k);
                seq = reassemble_sequence(seq, sel);
                result.selected_ids = sel.ids;
            }
        }
        if (l == cfg.num_layers - 1) result.final_input_len = seq.tokens.dim(0);
    }
    Tensor class_row = ops::gather_rows(seq.tokens, {0});
    result.visual_embedding = ops::reshape(class_row, {cfg.embed_dim});
    return result;
}

}  // namespace mpfgvc
