#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpfgvc/optim.hpp"
#include "mpfgvc/tensor.hpp"
#include "mpfgvc/vit.hpp"

namespace mpfgvc {

// Prompt template variants for the text-prompt design comparison.
enum class TemplateMode {
    kLearnedOnly,       // [X_1 .. X_J, supercategory]
    kPrefixPhoto,       // [a, photo, of, X_1 .. X_J, supercategory]
    kHandcrafted,       // [a, photo, of, a, <subcategory name>]; no learnable rows
    kSubcategoryName,   // [a, photo, of, X_1 .. X_J, <subcategory name>]
};

TemplateMode template_mode_from_string(const std::string& s);
std::string to_string(TemplateMode mode);

// Frozen word -> embedding-row table. The vocabulary is fixed at build time
// from the dataset's supercategory, class names, and the template words.
class TokenTable {
public:
    TokenTable() = default;
    TokenTable(std::vector<std::string> vocab, std::int64_t embed_dim, Rng& rng);

    std::int64_t lookup(const std::string& word) const;  // throws IndexError on unknown words
    Tensor embedding_row(const std::string& word) const;  // detached [D] copy
    const Tensor& table() const { return table_; }
    Tensor& table() { return table_; }
    const std::vector<std::string>& vocab() const { return vocab_; }

private:
    std::vector<std::string> vocab_;
    std::map<std::string, std::int64_t> index_;
    Tensor table_;  // [V x D]
};

// Per-class learnable text tokens terminated by the shared supercategory
// embedding. Only `tokens` ever trains; everything else is a frozen lookup.
struct PromptBank {
    Tensor tokens;                // [C x J x D], learnable in stage 1
    Tensor supercat_embedding;    // [D], frozen; identical across all classes
    std::vector<Tensor> class_name_embeddings;  // C frozen [D] rows
    std::vector<Tensor> prefix_embeddings;      // frozen rows for "a photo of"
    Tensor handcrafted_article;                 // frozen row for the second "a"
    std::int64_t num_classes = 0;
    std::int64_t tokens_per_class = 0;  // J
    std::int64_t embed_dim = 0;
    TemplateMode template_mode = TemplateMode::kLearnedOnly;
};

PromptBank init_prompt_bank(std::int64_t num_classes, std::int64_t tokens_per_class,
                            std::int64_t embed_dim, const std::string& supercategory,
                            const std::vector<std::string>& class_names, const TokenTable& table,
                            TemplateMode mode, Rng& rng);

// Prompt rows for class c under the bank's template mode. The learnable rows
// stay differentiable w.r.t. bank.tokens; frozen rows are constants.
Tensor build_prompt(std::int64_t class_index, const PromptBank& bank);

struct TextConfig {
    std::int64_t embed_dim = 64;
    std::int64_t num_layers = 4;
    std::int64_t num_heads = 4;
    std::int64_t mlp_ratio = 4;
    double ln_eps = 1e-5;
};

// Frozen in both training stages.
struct TextEncoderParams {
    std::vector<TransformerLayerParams> layers;
    Tensor final_ln_gamma, final_ln_beta;
    Tensor proj;  // [D x D]
};

TextEncoderParams init_text_encoder(const TextConfig& cfg, Rng& rng);
void register_text_params(TextEncoderParams& p, const std::string& prefix,
                          std::vector<Parameter>& out);  // always frozen

// Encodes every class prompt; row c of the result is the representation at
// the final prompt position after the final norm and projection.
Tensor encode_text(const PromptBank& bank, const TextConfig& cfg, const TextEncoderParams& params);

}  // namespace mpfgvc
