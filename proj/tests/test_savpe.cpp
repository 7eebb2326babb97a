// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "yoloe/savpe.hpp"
#include "yoloe/train.hpp"

using yoloe::ModelConfig;
using yoloe::ParamStore;
using yoloe::Rng;
using yoloe::Tensor;
using yoloe::VisualPrompt;

namespace {

template <typename T>
struct Scene {
    ParamStore<T> params;
    ModelConfig cfg;
    Tensor<T> image;
    yoloe::PyramidH<yoloe::EagerCtx<T>> pyr;
    yoloe::EagerCtx<T> cx;
};

template <typename T>
Scene<T> make_scene(std::uint64_t seed, int groups = 16) {
    ModelConfig cfg;
    cfg.savpe_groups = groups;
    Scene<T> s{yoloe::init_weights<T>(cfg, seed), cfg, Tensor<T>(), {}, {}};
    Rng rng(seed + 1);
    s.image = oracle::random_tensor<T>({3, 64, 64}, rng, 0, 1);
    s.cx.params = &s.params;
    s.pyr = yoloe::backbone_pan_forward(s.cx, s.image, cfg);
    return s;
}

template <typename T>
void zero_fusion_conv(ParamStore<T>& ps) {
    ps.set_value("savpe.act.fuse.w", Tensor<T>(ps.value("savpe.act.fuse.w").shape()));
    ps.set_value("savpe.act.fuse.b", Tensor<T>(ps.value("savpe.act.fuse.b").shape()));
}

} // namespace

TEST_CASE("rasterize boxes") {
    auto full = yoloe::rasterize(VisualPrompt<float>::from_box(0, 0, 64, 64), 64);
    REQUIRE(yoloe::sum(full) == 64.0f * 64.0f);

    auto tiny = yoloe::rasterize(VisualPrompt<float>::from_box(0, 0, 1, 1), 64);
    REQUIRE(yoloe::sum(tiny) == 1.0f);
    REQUIRE(tiny(0, 0) == 1.0f);

    Rng rng(2);
    for (int i = 0; i < 16; ++i) {
        const double x0 = rng.uniform(0, 40), y0 = rng.uniform(0, 40);
        const double w = rng.uniform(2, 20), h = rng.uniform(2, 20);
        auto m = yoloe::rasterize(VisualPrompt<float>::from_box(x0, y0, x0 + w, y0 + h), 64);
        const double want = (std::lround(x0 + w) - std::lround(x0)) *
                            (std::lround(y0 + h) - std::lround(y0));
        REQUIRE(yoloe::sum(m) == static_cast<float>(want));
    }

    REQUIRE_THROWS_AS(yoloe::rasterize(VisualPrompt<float>::from_box(10, 10, 10, 20), 64),
                      yoloe::ValueError);
    REQUIRE_THROWS_AS(yoloe::rasterize(VisualPrompt<float>::from_box(-2, 0, 5, 5), 64),
                      yoloe::ValueError);
    REQUIRE_THROWS_AS(yoloe::rasterize(VisualPrompt<float>::from_mask(Tensor<float>({64, 64})), 64),
                      yoloe::ValueError);
}

TEST_CASE("semantic branch: zero weights give zero features, shapes check out") {
    auto s = make_scene<float>(3);
    for (const auto& name : s.params.names())
        if (name.rfind("savpe.sem.", 0) == 0)
            s.params.set_value(name, Tensor<float>(s.params.value(name).shape()));
    auto sem = yoloe::semantic_branch(s.cx, s.pyr, s.cfg);
    REQUIRE(sem.shape() == typename Tensor<float>::Shape{32, 8, 8});
    REQUIRE(yoloe::sum(sem) == 0.0f);
}

TEST_CASE("activation branch: constant logits spread weight uniformly over the region") {
    auto s = make_scene<float>(5);
    zero_fusion_conv(s.params);
    const auto mask = yoloe::rasterize(VisualPrompt<float>::from_box(0, 0, 64, 64), 64);
    Tensor<float> region;
    auto w = yoloe::activation_branch(s.cx, s.pyr, mask, s.cfg, &region);
    REQUIRE(w.shape() == typename Tensor<float>::Shape{16, 8, 8});
    for (std::size_t i = 0; i < w.numel(); ++i)
        REQUIRE(w.data()[i] == Catch::Approx(1.0 / 64.0).margin(1e-7));
}

TEST_CASE("activation branch: single-cell region takes all the weight") {
    auto s = make_scene<float>(7);
    // one stride-8 cell: pixels [8,16) x [8,16)
    const auto mask = yoloe::rasterize(VisualPrompt<float>::from_box(8, 8, 16, 16), 64);
    Tensor<float> region;
    auto w = yoloe::activation_branch(s.cx, s.pyr, mask, s.cfg, &region);
    REQUIRE(yoloe::sum(region) == 1.0f);
    for (std::size_t a = 0; a < 16; ++a) {
        REQUIRE(w(a, 1, 1) == 1.0f);
        REQUIRE(w(a, 0, 0) == 0.0f);
    }
}

TEST_CASE("activation branch: random masks give in-region unit sums, exact zeros outside") {
    for (std::uint64_t seed : {11, 12, 13}) {
        auto s = make_scene<float>(seed);
        Rng rng(seed * 31);
        Tensor<float> maskfull({64, 64});
        for (std::size_t i = 0; i < maskfull.numel(); ++i)
            maskfull.raw()[i] = rng.uniform() < 0.2 ? 1.0f : 0.0f;
        maskfull.at(std::size_t(5), std::size_t(5)) = 1.0f;
        Tensor<float> region;
        auto w = yoloe::activation_branch(s.cx, s.pyr, maskfull, s.cfg, &region);
        for (std::size_t a = 0; a < 16; ++a) {
            double sum = 0;
            for (std::size_t i = 0; i < 64; ++i) {
                if (region.data()[i] == 0.0f) REQUIRE(w.data()[a * 64 + i] == 0.0f);
                sum += w.data()[a * 64 + i];
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("aggregate arithmetic cases") {
    // A=1, weights 0.5 at two cells with channel values 2 and 4 -> 3
    Tensor<float> s({1, 1, 2}, {2, 4});
    Tensor<float> w({1, 1, 2}, {0.5, 0.5});
    yoloe::Tape<float> tape;
    auto pre = tape.savpe_aggregate(tape.constant(s), tape.constant(w), 1);
    REQUIRE(tape.value(pre)(0, 0) == 3.0f);

    // one-hot weights select and normalize a single column of S
    Rng rng(4);
    auto s2 = oracle::random_tensor<float>({8, 2, 2}, rng);
    Tensor<float> onehot({1, 2, 2});
    onehot.at(std::size_t(0), std::size_t(1), std::size_t(0)) = 1.0f;
    yoloe::EagerCtx<float> cx{nullptr};
    auto emb = yoloe::aggregate(cx, s2, onehot, 1);
    Tensor<float> col({1, 8});
    for (std::size_t d = 0; d < 8; ++d) col.at(std::size_t(0), d) = s2(d, 1, 0);
    REQUIRE(oracle::max_abs_diff(emb, yoloe::l2_normalize_rows(col)) < 1e-6);
}

TEST_CASE("aggregate matches the triple-loop oracle and normalizes") {
    Rng rng(21);
    auto s = oracle::random_tensor<float>({16, 3, 3}, rng);
    auto logits = oracle::random_tensor<float>({4, 3, 3}, rng);
    Tensor<float> region({3, 3}, {1, 0, 1, 1, 1, 0, 0, 1, 1});
    auto w = yoloe::masked_softmax(logits, region);
    yoloe::EagerCtx<float> cx{nullptr};
    auto emb = yoloe::aggregate(cx, s, w, 4);
    auto want = yoloe::l2_normalize_rows(oracle::grouped_pool(s, w, 4));
    REQUIRE(oracle::max_abs_diff(emb, want) < 1e-6);
    double norm = 0;
    for (std::size_t d = 0; d < 16; ++d) norm += emb(0, d) * emb(0, d);
    REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("mask_pool_baseline cases and uniform-weight equivalence") {
    Rng rng(31);
    auto s = oracle::random_tensor<float>({8, 4, 4}, rng);

    // single-cell region picks one column
    Tensor<float> single({4, 4});
    single.at(std::size_t(2), std::size_t(3)) = 1.0f;
    auto pooled = yoloe::mask_pool_baseline(s, single);
    Tensor<float> col({1, 8});
    for (std::size_t d = 0; d < 8; ++d) col.at(std::size_t(0), d) = s(d, 2, 3);
    REQUIRE(oracle::max_abs_diff(pooled, yoloe::l2_normalize_rows(col)) < 1e-6);

    // constant field: the same direction whatever the region
    Tensor<float> constant = Tensor<float>::full({4, 4, 4}, 0.0f);
    for (std::size_t d = 0; d < 4; ++d)
        for (std::size_t i = 0; i < 16; ++i) constant.raw()[d * 16 + i] = 0.5f * (d + 1);
    Tensor<float> r1({4, 4});
    r1.at(std::size_t(0), std::size_t(0)) = 1.0f;
    Tensor<float> r2 = Tensor<float>::full({4, 4}, 1.0f);
    REQUIRE(oracle::max_abs_diff(yoloe::mask_pool_baseline(constant, r1),
                                 yoloe::mask_pool_baseline(constant, r2)) < 1e-6);

    // uniform weights reproduce mask pooling exactly
    Tensor<float> region({4, 4});
    int cells = 0;
    for (std::size_t i = 0; i < 16; ++i) {
        region.raw()[i] = (i % 3 == 0) ? 1.0f : 0.0f;
        cells += region.raw()[i] != 0;
    }
    Tensor<float> uniform({2, 4, 4});
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < 16; ++i)
            uniform.raw()[a * 16 + i] = region.data()[i] != 0 ? 1.0f / cells : 0.0f;
    yoloe::EagerCtx<float> cx{nullptr};
    REQUIRE(oracle::max_abs_diff(yoloe::aggregate(cx, s, uniform, 2),
                                 yoloe::mask_pool_baseline(s, region)) < 1e-6);

    REQUIRE_THROWS_AS(yoloe::mask_pool_baseline(s, Tensor<float>({4, 4})), yoloe::ValueError);
}

TEST_CASE("constant-logit activation reduces the encoder to mask pooling, A in {1,16,32}") {
    for (int groups : {1, 16, 32}) {
        auto s = make_scene<float>(40 + groups, groups);
        zero_fusion_conv(s.params);
        const auto mask = yoloe::rasterize(VisualPrompt<float>::from_box(8, 16, 40, 48), 64);
        auto sem = yoloe::semantic_branch(s.cx, s.pyr, s.cfg);
        Tensor<float> region;
        auto w = yoloe::activation_branch(s.cx, s.pyr, mask, s.cfg, &region);
        auto emb = yoloe::aggregate(s.cx, sem, w, groups);
        auto base = yoloe::mask_pool_baseline(sem, region);
        REQUIRE(oracle::max_abs_diff(emb, base) < 1e-6);
    }
}

TEST_CASE("locality: out-of-region semantic features never touch the embedding") {
    auto s = make_scene<float>(51);
    const auto mask = yoloe::rasterize(VisualPrompt<float>::from_box(16, 16, 32, 32), 64);
    auto sem = yoloe::semantic_branch(s.cx, s.pyr, s.cfg);
    Tensor<float> region;
    auto w = yoloe::activation_branch(s.cx, s.pyr, mask, s.cfg, &region);
    auto emb = yoloe::aggregate(s.cx, sem, w, s.cfg.savpe_groups);

    // perturb S wildly outside the region
    auto sem2 = sem.clone();
    Rng rng(52);
    for (std::size_t d = 0; d < sem2.dim(0); ++d)
        for (std::size_t i = 0; i < 64; ++i)
            if (region.data()[i] == 0.0f)
                sem2.raw()[d * 64 + i] += static_cast<float>(rng.uniform(-100, 100));
    auto emb2 = yoloe::aggregate(s.cx, sem2, w, s.cfg.savpe_groups);
    REQUIRE(oracle::max_abs_diff(emb, emb2) == 0.0);
}

TEST_CASE("group independence of the pre-normalization embedding") {
    Rng rng(61);
    auto s = oracle::random_tensor<float>({32, 8, 8}, rng);
    auto logits = oracle::random_tensor<float>({16, 8, 8}, rng);
    Tensor<float> region = Tensor<float>::full({8, 8}, 1.0f);
    auto w = yoloe::masked_softmax(logits, region);

    // bump activation channel 3: only output channels 6..7 may move (D/A = 2)
    auto logits2 = logits.clone();
    for (std::size_t i = 0; i < 64; ++i) logits2.raw()[3 * 64 + i] += rng.uniform(-1, 1);
    auto w2 = yoloe::masked_softmax(logits2, region);

    yoloe::Tape<float> tape;
    auto g1 = tape.value(tape.savpe_aggregate(tape.constant(s), tape.constant(w), 16));
    auto g2 = tape.value(tape.savpe_aggregate(tape.constant(s), tape.constant(w2), 16));
    for (std::size_t d = 0; d < 32; ++d) {
        if (d / 2 == 3) continue;
        REQUIRE(g1(0, d) == g2(0, d));
    }
}

TEST_CASE("encode_prompts and embedding averaging") {
    auto s = make_scene<float>(71);
    std::vector<VisualPrompt<float>> prompts{VisualPrompt<float>::from_box(8, 8, 32, 32)};
    auto rows = yoloe::encode_prompts(s.params, s.cfg, s.image, prompts);
    REQUIRE(rows.dim(0) == 1);
    REQUIRE(rows.dim(1) == 32);

    // single prompt equals the hand-composed path
    auto sem = yoloe::semantic_branch(s.cx, s.pyr, s.cfg);
    auto w = yoloe::activation_branch(
        s.cx, s.pyr, yoloe::rasterize(prompts[0], s.cfg.image_size), s.cfg);
    auto emb = yoloe::aggregate(s.cx, sem, w, s.cfg.savpe_groups);
    REQUIRE(oracle::max_abs_diff(rows, emb) == 0.0);

    // averaging identical embeddings is the identity
    auto avg = yoloe::average_embeddings<float>({emb, emb, emb});
    REQUIRE(oracle::max_abs_diff(avg, emb) < 1e-6);

    // averaging orthogonal unit vectors renormalizes the mean
    Tensor<float> e1({1, 4}, {1, 0, 0, 0});
    Tensor<float> e2({1, 4}, {0, 1, 0, 0});
    auto mixed = yoloe::average_embeddings<float>({e1, e2});
    const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
    REQUIRE(mixed(0, 0) == Catch::Approx(inv_sqrt2).margin(1e-6));
    REQUIRE(mixed(0, 1) == Catch::Approx(inv_sqrt2).margin(1e-6));

    REQUIRE_THROWS_AS(yoloe::encode_prompts(s.params, s.cfg, s.image, {}), yoloe::ValueError);
    REQUIRE_THROWS_AS(yoloe::average_embeddings<float>({}), yoloe::ValueError);
}

TEST_CASE("gradients flow through the full visual-prompt path") {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.embed_dim = 8;
    cfg.head_channels = 6;
    cfg.savpe_groups = 2;
    cfg.proto_count = 2;
    cfg.stem_width = 3;
    cfg.stage_widths = {4, 5, 6, 7};
    auto ps = yoloe::init_weights<double>(cfg, 91);
    auto data = yoloe::gen_dataset<double>(92, 2, cfg.image_size, 3);
    std::vector<const yoloe::SyntheticSample<double>*> batch{&data[0], &data[1]};
    yoloe::apply_stage_freeze(ps, yoloe::Stage::savpe);

    auto fn = [&](ParamStore<double>& p, bool with_grad) {
        Rng rng(93);
        yoloe::Tape<double> tape;
        yoloe::TapeCtx<double> cx{&tape, &p};
        auto loss = yoloe::build_savpe_loss(cx, batch, cfg, rng);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)(std::size_t(0));
    };
    const auto res = yoloe::grad_check<double>(fn, ps, 1e-5, 6, 94);
    CAPTURE(res.max_error);
    REQUIRE(res.max_error <= 1e-4);
    // every visual-encoder parameter is trainable and receives gradient
    REQUIRE(res.per_param.size() >= 16);
}
