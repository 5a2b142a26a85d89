#pragma once

#include <cstdint>
#include <vector>

#include "mpfgvc/tensor.hpp"

namespace mpfgvc {

// One training batch's embeddings: per-image visual rows, per-class textual
// rows, integer labels, and the contrastive temperature.
struct BatchEmbeddings {
    Tensor visual;      // [B x D]
    Tensor text_class;  // [C x D]
    std::vector<std::int64_t> labels;
    double tau = 0.07;

    void validate() const;
};

namespace objectives {

// Matched-pair contrastive losses without temperature; the denominator runs
// over text rows for image->text and over visual rows for text->image.
Tensor loss_i2t_pairs(const Tensor& visual, const Tensor& text);
Tensor loss_t2i_pairs(const Tensor& visual, const Tensor& text);

// Stage-1 classification loss from a linear head over the visual embedding.
Tensor loss_v(const Tensor& visual, const Tensor& head_w, const Tensor& head_b,
              const std::vector<std::int64_t>& labels);

// Temperature-scaled class contrastive loss over all C textual embeddings.
Tensor loss_i2t_class(const BatchEmbeddings& batch);

// Stage aggregates: stage 1 is the unweighted sum of the two stage-1 terms;
// stage 2 is plain cross-entropy on the fusion-head logits.
Tensor stage1_loss(const BatchEmbeddings& batch, const Tensor& head_w, const Tensor& head_b);
Tensor stage2_loss(const Tensor& logits, const std::vector<std::int64_t>& labels);

// Pairwise cosine matrix cos(u_i, v_j) as a differentiable [rows(u) x rows(v)]
// tensor; shared by the contrastive losses and the similarity-mode predictor.
Tensor cosine_matrix(const Tensor& u, const Tensor& v);

}  // namespace objectives
}  // namespace mpfgvc
