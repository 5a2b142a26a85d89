#include "mpfgvc/text.hpp"

#include <algorithm>

#include "mpfgvc/errors.hpp"
#include "mpfgvc/ops.hpp"

namespace mpfgvc {

TemplateMode template_mode_from_string(const std::string& s) {
    if (s == "learned-only") return TemplateMode::kLearnedOnly;
    if (s == "prefix-photo") return TemplateMode::kPrefixPhoto;
    if (s == "handcrafted") return TemplateMode::kHandcrafted;
    if (s == "subcategory-name") return TemplateMode::kSubcategoryName;
    throw ConfigError("unknown template mode '" + s + "'");
}

std::string to_string(TemplateMode mode) {
    switch (mode) {
        case TemplateMode::kLearnedOnly: return "learned-only";
        case TemplateMode::kPrefixPhoto: return "prefix-photo";
        case TemplateMode::kHandcrafted: return "handcrafted";
        case TemplateMode::kSubcategoryName: return "subcategory-name";
    }
    throw ConfigError("bad template mode value");
}

TokenTable::TokenTable(std::vector<std::string> vocab, std::int64_t embed_dim, Rng& rng)
    : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (index_.count(vocab_[i]))
            throw ConfigError("duplicate vocabulary word '" + vocab_[i] + "'");
        index_[vocab_[i]] = static_cast<std::int64_t>(i);
    }
    table_ = init_weight({static_cast<std::int64_t>(vocab_.size()), embed_dim}, rng);
}

std::int64_t TokenTable::lookup(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw IndexError("word '" + word + "' not in vocabulary");
    return it->second;
}

Tensor TokenTable::embedding_row(const std::string& word) const {
    const std::int64_t row = lookup(word);
    const std::int64_t d = table_.dim(1);
    std::vector<double> v(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] = table_.at({row, j});
    return Tensor::from({d}, std::move(v));
}

PromptBank init_prompt_bank(std::int64_t num_classes, std::int64_t tokens_per_class,
                            std::int64_t embed_dim, const std::string& supercategory,
                            const std::vector<std::string>& class_names, const TokenTable& table,
                            TemplateMode mode, Rng& rng) {
    if (num_classes < 1) throw ConfigError("prompt bank needs at least one class");
    if (tokens_per_class < 1) throw ConfigError("prompt bank needs at least one learnable token");
    if (static_cast<std::int64_t>(class_names.size()) != num_classes)
        throw ConfigError("class name count does not match num_classes");
    PromptBank bank;
    bank.num_classes = num_classes;
    bank.tokens_per_class = tokens_per_class;
    bank.embed_dim = embed_dim;
    bank.template_mode = mode;
    bank.tokens = init_weight({num_classes, tokens_per_class, embed_dim}, rng);
    bank.supercat_embedding = table.embedding_row(supercategory);
    for (const auto& name : class_names)
        bank.class_name_embeddings.push_back(table.embedding_row(name));
    for (const char* word : {"a", "photo", "of"})
        bank.prefix_embeddings.push_back(table.embedding_row(word));
    bank.handcrafted_article = table.embedding_row("a");
    return bank;
}

Tensor build_prompt(std::int64_t class_index, const PromptBank& bank) {
    if (class_index < 0 || class_index >= bank.num_classes)
        throw IndexError("class " + std::to_string(class_index) + " out of " +
                         std::to_string(bank.num_classes));
    const std::int64_t J = bank.tokens_per_class;
    const std::int64_t D = bank.embed_dim;

    auto frozen_row = [&](const Tensor& t) { return ops::reshape(t, {1, D}); };

    std::vector<Tensor> rows;
    const bool wants_prefix = bank.template_mode == TemplateMode::kPrefixPhoto ||
                              bank.template_mode == TemplateMode::kHandcrafted ||
                              bank.template_mode == TemplateMode::kSubcategoryName;
    if (wants_prefix)
        for (const auto& w : bank.prefix_embeddings) rows.push_back(frozen_row(w));
    if (bank.template_mode == TemplateMode::kHandcrafted) {
        rows.push_back(frozen_row(bank.handcrafted_article));
    } else {
        // Learnable rows for this class, differentiable through the gather.
        Tensor flat = ops::reshape(bank.tokens, {bank.num_classes * J, D});
        std::vector<std::int64_t> idx(static_cast<std::size_t>(J));
        for (std::int64_t j = 0; j < J; ++j)
            idx[static_cast<std::size_t>(j)] = class_index * J + j;
        rows.push_back(ops::gather_rows(flat, idx));
    }
    const bool subcat_name = bank.template_mode == TemplateMode::kHandcrafted ||
                             bank.template_mode == TemplateMode::kSubcategoryName;
    rows.push_back(frozen_row(
        subcat_name ? bank.class_name_embeddings[static_cast<std::size_t>(class_index)]
                    : bank.supercat_embedding));
    return ops::concat_rows(rows);
}

TextEncoderParams init_text_encoder(const TextConfig& cfg, Rng& rng) {
    if (cfg.embed_dim % cfg.num_heads != 0)
        throw ConfigError("text embed dim not divisible by head count");
    TextEncoderParams p;
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
    p.final_ln_gamma = init_ones({D});
    p.final_ln_beta = init_zeros({D});
    p.proj = init_weight({D, D}, rng);
    return p;
}

void register_text_params(TextEncoderParams& p, const std::string& prefix,
                          std::vector<Parameter>& out) {
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        register_layer_params(p.layers[l], prefix + ".layer" + std::to_string(l), true, out);
    out.push_back({p.final_ln_gamma, true, prefix + ".final_ln.gamma"});
    out.push_back({p.final_ln_beta, true, prefix + ".final_ln.beta"});
    out.push_back({p.proj, true, prefix + ".proj"});
}

Tensor encode_text(const PromptBank& bank, const TextConfig& cfg,
                   const TextEncoderParams& params) {
    std::vector<Tensor> class_embeddings;
    class_embeddings.reserve(static_cast<std::size_t>(bank.num_classes));
    for (std::int64_t c = 0; c < bank.num_classes; ++c) {
        Tensor prompt = build_prompt(c, bank);
        TokenSequence seq{prompt, 0, false};
        for (const auto& lp : params.layers)
            seq = transformer_layer(seq, lp, cfg.num_heads, cfg.ln_eps, false).first;
        // Pool at the final prompt position.
        Tensor last = ops::gather_rows(seq.tokens, {seq.tokens.dim(0) - 1});
        last = ops::layer_norm(last, params.final_ln_gamma, params.final_ln_beta, cfg.ln_eps);
        Tensor projected = ops::matmul(last, params.proj);
        class_embeddings.push_back(ops::reshape(projected, {cfg.embed_dim}));
    }
    return ops::stack_rows(class_embeddings);
}

}  // namespace mpfgvc
