#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mpfgvc/checkpoint.hpp"
#include "mpfgvc/ops.hpp"
#include "mpfgvc/ssvp.hpp"
#include "mpfgvc/vit.hpp"
#include "test_support.hpp"

using namespace mpfgvc;
using testsup::PrecisionGuard;
using testsup::random_tensor;

namespace {

ViTConfig tiny_config() {
    ViTConfig cfg;
    cfg.image_side = 16;
    cfg.patch_side = 8;
    cfg.channels = 1;
    cfg.embed_dim = 8;
    cfg.num_layers = 3;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.top_k = 2;
    return cfg;
}

Tensor random_image(const ViTConfig& cfg, Rng& rng) {
    std::vector<double> v(
        static_cast<std::size_t>(cfg.image_side * cfg.image_side * cfg.channels));
    for (auto& x : v) x = rng.uniform();
    return Tensor::from({cfg.image_side, cfg.image_side, cfg.channels}, std::move(v));
}

void zero_layer(TransformerLayerParams& lp) {
    for (Tensor* t : {&lp.ln1_gamma, &lp.ln1_beta, &lp.wq, &lp.bq, &lp.wk, &lp.bk, &lp.wv, &lp.bv,
                      &lp.wo, &lp.bo, &lp.ln2_gamma, &lp.ln2_beta, &lp.mlp_w1, &lp.mlp_b1,
                      &lp.mlp_w2, &lp.mlp_b2})
        std::fill(t->values().begin(), t->values().end(), 0.0);
}

// Independent scalar evaluation of one pre-norm transformer layer for a
// single-head sequence, kept free of the Tensor op stack.
std::vector<double> scalar_layer_oracle(const std::vector<double>& x, std::int64_t n,
                                        std::int64_t d, const TransformerLayerParams& lp,
                                        double eps) {
    auto ln = [&](const std::vector<double>& in, const Tensor& gamma, const Tensor& beta) {
        std::vector<double> out(in.size());
        for (std::int64_t i = 0; i < n; ++i) {
            double mu = 0.0;
            for (std::int64_t j = 0; j < d; ++j) mu += in[static_cast<std::size_t>(i * d + j)];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double dv = in[static_cast<std::size_t>(i * d + j)] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(d);
            for (std::int64_t j = 0; j < d; ++j)
                out[static_cast<std::size_t>(i * d + j)] =
                    (in[static_cast<std::size_t>(i * d + j)] - mu) / std::sqrt(var + eps) *
                        gamma.values()[static_cast<std::size_t>(j)] +
                    beta.values()[static_cast<std::size_t>(j)];
        }
        return out;
    };
    auto affine = [&](const std::vector<double>& in, const Tensor& w, const Tensor& b,
                      std::int64_t din, std::int64_t dout) {
        std::vector<double> out(static_cast<std::size_t>(n * dout), 0.0);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t o = 0; o < dout; ++o) {
                double s = b.values()[static_cast<std::size_t>(o)];
                for (std::int64_t j = 0; j < din; ++j)
                    s += in[static_cast<std::size_t>(i * din + j)] *
                         w.values()[static_cast<std::size_t>(j * dout + o)];
                out[static_cast<std::size_t>(i * dout + o)] = s;
            }
        return out;
    };

    auto h = ln(x, lp.ln1_gamma, lp.ln1_beta);
    auto q = affine(h, lp.wq, lp.bq, d, d);
    auto k = affine(h, lp.wk, lp.bk, d, d);
    auto v = affine(h, lp.wv, lp.bv, d, d);
    std::vector<double> attn_out(static_cast<std::size_t>(n * d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(n));
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::int64_t c = 0; c < d; ++c)
                s += q[static_cast<std::size_t>(i * d + c)] * k[static_cast<std::size_t>(j * d + c)];
            logits[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(d));
        }
        double mx = logits[0];
        for (double lv : logits) mx = std::max(mx, lv);
        double denom = 0.0;
        for (auto& lv : logits) {
            lv = std::exp(lv - mx);
            denom += lv;
        }
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t c = 0; c < d; ++c)
                attn_out[static_cast<std::size_t>(i * d + c)] +=
                    logits[static_cast<std::size_t>(j)] / denom * v[static_cast<std::size_t>(j * d + c)];
    }
    auto proj = affine(attn_out, lp.wo, lp.bo, d, d);
    std::vector<double> x2(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] + proj[i];

    auto h2 = ln(x2, lp.ln2_gamma, lp.ln2_beta);
    const std::int64_t hidden = lp.mlp_w1.dim(1);
    auto m1 = affine(h2, lp.mlp_w1, lp.mlp_b1, d, hidden);
    for (auto& val : m1) val = 0.5 * val * (1.0 + std::erf(val * M_SQRT1_2));
    auto m2 = affine(m1, lp.mlp_w2, lp.mlp_b2, hidden, d);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x2[i] + m2[i];
    return out;
}

}  // namespace

TEST_CASE("patchify produces the expected token counts") {
    PrecisionGuard p(Precision::f64);
    Rng rng(1);
    ViTConfig cfg;
    cfg.image_side = 32;
    cfg.patch_side = 8;
    cfg.channels = 1;
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.top_k = 4;
    CHECK(cfg.patch_count() == 16);
    ViTParams params = init_vit_params(cfg, rng);
    Tensor img = random_image(cfg, rng);
    TokenSequence seq = patchify_and_embed(img, cfg, params);
    CHECK(seq.tokens.dim(0) == 17);
    CHECK(seq.tokens.dim(1) == 8);
    CHECK(seq.includes_class);

    // Full-scale geometry: 448x448 at P=16 gives 784 patches.
    ViTConfig big;
    big.image_side = 448;
    big.patch_side = 16;
    big.channels = 3;
    big.embed_dim = 8;
    big.num_layers = 2;
    big.num_heads = 2;
    big.top_k = 14;  // the chosen operating point at this scale
    big.validate();
    CHECK(big.patch_count() == 784);
    Rng rng2(2);
    ViTParams big_params = init_vit_params(big, rng2);
    Tensor big_img = random_image(big, rng2);
    CHECK(patchify_and_embed(big_img, big, big_params).tokens.dim(0) == 785);

    ViTConfig bad = cfg;
    bad.image_side = 30;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero image and zero embeddings leave only the class token") {
    PrecisionGuard p(Precision::f64);
    Rng rng(3);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    std::fill(params.patch_weight.values().begin(), params.patch_weight.values().end(), 0.0);
    std::fill(params.patch_bias.values().begin(), params.patch_bias.values().end(), 0.0);
    std::fill(params.pos_embed.values().begin(), params.pos_embed.values().end(), 0.0);
    Tensor img = Tensor::zeros({cfg.image_side, cfg.image_side, cfg.channels});
    TokenSequence seq = patchify_and_embed(img, cfg, params);
    for (std::int64_t j = 0; j < cfg.embed_dim; ++j)
        CHECK(seq.tokens.at({0, j}) == params.class_token.values()[static_cast<std::size_t>(j)]);
    for (std::int64_t i = 1; i < seq.tokens.dim(0); ++i)
        for (std::int64_t j = 0; j < cfg.embed_dim; ++j) CHECK(seq.tokens.at({i, j}) == 0.0);
}

TEST_CASE("zero-weight transformer layer is the identity map") {
    PrecisionGuard p(Precision::f64);
    Rng rng(4);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    zero_layer(params.layers[0]);
    TokenSequence seq{random_tensor({5, cfg.embed_dim}, rng), 0, true};
    auto [out, rec] = transformer_layer(seq, params.layers[0], cfg, false);
    CHECK(out.tokens.values() == seq.tokens.values());
    CHECK_FALSE(rec.has_value());
}

TEST_CASE("single-head layer matches the scalar oracle") {
    PrecisionGuard p(Precision::f64);
    Rng rng(5);
    ViTConfig cfg;
    cfg.image_side = 16;
    cfg.patch_side = 8;
    cfg.channels = 1;
    cfg.embed_dim = 2;
    cfg.num_layers = 2;
    cfg.num_heads = 1;
    cfg.mlp_ratio = 2;
    cfg.top_k = 1;
    ViTParams params = init_vit_params(cfg, rng);
    // Hand-scaled weights so the numbers stay O(1).
    for (Tensor* t : {&params.layers[0].wq, &params.layers[0].wk, &params.layers[0].wv,
                      &params.layers[0].wo, &params.layers[0].mlp_w1, &params.layers[0].mlp_w2})
        for (auto& v : t->values()) v = rng.uniform(-0.8, 0.8);

    TokenSequence seq{Tensor::matrix(2, 2, {0.4, -0.3, 0.9, 0.2}), 0, true};
    auto [out, rec] = transformer_layer(seq, params.layers[0], cfg, true);
    auto want = scalar_layer_oracle(seq.tokens.values(), 2, 2, params.layers[0], cfg.ln_eps);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(out.tokens.values()[i] == doctest::Approx(want[i]).epsilon(1e-10));

    REQUIRE(rec.has_value());
    CHECK(rec->head_scores.dim(0) == 1);
    CHECK(rec->head_scores.dim(1) == 1);
}

TEST_CASE("attention capture has the right shape and never perturbs outputs") {
    PrecisionGuard p(Precision::f64);
    Rng rng(6);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    TokenSequence seq{random_tensor({cfg.patch_count() + 1, cfg.embed_dim}, rng), 0, true};
    auto [with_cap, rec] = transformer_layer(seq, params.layers[0], cfg, true);
    auto [without_cap, none] = transformer_layer(seq, params.layers[0], cfg, false);
    CHECK(with_cap.tokens.values() == without_cap.tokens.values());
    REQUIRE(rec.has_value());
    CHECK(rec->head_scores.dim(0) == cfg.num_heads);
    CHECK(rec->head_scores.dim(1) == cfg.patch_count());
    for (double v : rec->head_scores.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_FALSE(none.has_value());
}

TEST_CASE("encode_image honors the selection length contract") {
    PrecisionGuard p(Precision::f64);
    Rng rng(7);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    Tensor img = random_image(cfg, rng);

    EncodeResult off = encode_image(img, cfg, params, false);
    CHECK(off.final_input_len == cfg.patch_count() + 1);
    CHECK(off.selected_ids.empty());

    EncodeResult on = encode_image(img, cfg, params, true);
    CHECK(on.final_input_len == cfg.top_k + 1);
    CHECK(on.selected_ids.size() == static_cast<std::size_t>(cfg.top_k));
    CHECK(on.visual_embedding.dim(0) == cfg.embed_dim);

    // k = N keeps the full patch set, in some order.
    ViTConfig all = cfg;
    all.top_k = all.patch_count();
    EncodeResult full = encode_image(img, all, params, true);
    std::vector<std::int64_t> sorted = full.selected_ids;
    std::sort(sorted.begin(), sorted.end());
    for (std::int64_t i = 0; i < all.patch_count(); ++i)
        CHECK(sorted[static_cast<std::size_t>(i)] == i);

    ViTConfig bad = cfg;
    bad.top_k = cfg.patch_count() + 1;
    CHECK_THROWS_AS(encode_image(img, bad, params, true), ConfigError);
}

TEST_CASE("attention record is identical with and without selection") {
    PrecisionGuard p(Precision::f64);
    Rng rng(17);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    Tensor img = random_image(cfg, rng);
    EncodeResult a = encode_image(img, cfg, params, true);
    EncodeResult b = encode_image(img, cfg, params, false);
    CHECK(a.attention.head_scores.values() == b.attention.head_scores.values());
}

TEST_CASE("end-to-end gradient through the encoder matches finite differences") {
    PrecisionGuard p(Precision::f64);
    Rng rng(8);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    Tensor img = random_image(cfg, rng);
    const Tensor probe_weights = random_tensor({cfg.embed_dim}, rng);

    // Scalar head on E_V; selection indices are constants of the forward pass.
    auto loss_with = [&](const Tensor& patch_w) {
        ViTParams local = params;
        local.patch_weight = patch_w.clone();
        local.patch_weight.set_requires_grad(patch_w.requires_grad());
        EncodeResult res = encode_image(img, cfg, local, true);
        return ops::dot(res.visual_embedding, probe_weights);
    };

    Tensor x = params.patch_weight.clone();
    x.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        ViTParams local = params;
        local.patch_weight = x;
        Tensor loss = ops::dot(encode_image(img, cfg, local, true).visual_embedding, probe_weights);
        tape.backward(loss);
    }
    Tensor fd = ops::finite_diff_grad(
        [&](const Tensor& t) { return loss_with(t).item(); }, params.patch_weight, 1e-5);
    CHECK(testsup::max_rel_err(x.grad(), fd.values()) < 1e-4);
}

TEST_CASE("checkpoint round-trips parameters bit-exactly") {
    PrecisionGuard p(Precision::f32);
    Rng rng(9);
    ViTConfig cfg = tiny_config();
    ViTParams params = init_vit_params(cfg, rng);
    std::vector<Parameter> reg;
    register_vit_params(params, "image_encoder", false, reg);

    const auto dir = std::filesystem::temp_directory_path() / "mpfgvc_test_ckpt";
    std::filesystem::create_directories(dir);
    const auto path = dir / "params.bin";
    save_checkpoint(path, reg, R"({"purpose":"test"})");

    std::vector<std::vector<double>> originals;
    for (const auto& prm : reg) originals.push_back(prm.tensor.values());
    for (auto& prm : reg)
        for (auto& v : prm.tensor.values()) v += 1.0;

    Checkpoint ckpt = load_checkpoint(path);
    CHECK(ckpt.config_json.find("purpose") != std::string::npos);
    restore_parameters(ckpt, reg);
    for (std::size_t i = 0; i < reg.size(); ++i) CHECK(reg[i].tensor.values() == originals[i]);

    CHECK(ckpt.find("image_encoder.patch_embed.w") != nullptr);
    CHECK(ckpt.find("missing") == nullptr);
    std::filesystem::remove_all(dir);
}
