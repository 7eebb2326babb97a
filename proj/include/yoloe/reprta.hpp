// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "yoloe/model.hpp"

namespace yoloe {

/// Pretrained text embeddings, one unit-norm row per prompt. The encoder that
/// produced them is external; archives are the only source.
template <typename T>
struct CachedTextEmbeddings {
    Tensor<T> rows; // C x D
    std::vector<std::string> names;
    bool renormalized_on_load = false;
};

/// Residual SwiGLU enhancer over cached text embeddings:
///   enhanced = normalize(P + swiglu(P)).
/// With a zero output projection this is the identity on unit-norm rows.
template <class Cx>
typename Cx::H enhance(Cx& cx, typename Cx::H p) {
    auto wg = cx.param("aux.wg");
    auto wu = cx.param("aux.wu");
    auto wd = cx.param("aux.wd");
    auto h = cx.mul(cx.silu(cx.matmul(p, wg)), cx.matmul(p, wu));
    return cx.l2_normalize_rows(cx.add(p, cx.matmul(h, wd)));
}

template <typename T>
Tensor<T> enhance(const ParamStore<T>& params, const Tensor<T>& p) {
    EagerCtx<T> cx{&params};
    return enhance(cx, p);
}

/// Folds prompt rows into the final 1x1 kernel of the object embedding head:
/// K'[c,d'] = sum_d prompts[c,d] * K[d,d']. The rewritten head emits class
/// logits directly, with outputs equal to (I (*) K) . prompts^T everywhere.
template <typename T>
Tensor<T> fuse(const Tensor<T>& prompts, const Tensor<T>& k) {
    if (prompts.rank() != 2 || k.rank() != 4 || k.dim(2) != 1 || k.dim(3) != 1)
        throw ShapeError("fuse: prompts CxD and kernel DxD'x1x1 required");
    if (k.dim(0) != prompts.dim(1)) throw ShapeError("fuse: embedding dimensions disagree");
    const std::size_t C = prompts.dim(0), D = prompts.dim(1), Dp = k.dim(1);
    Tensor<T> out({C, Dp, 1, 1});
    T* o = out.raw();
    const T *pp = prompts.data(), *pk = k.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < D; ++d) {
            const T v = pp[c * D + d];
            for (std::size_t j = 0; j < Dp; ++j) o[c * Dp + j] += v * pk[d * Dp + j];
        }
    detail::ensure_finite(out, "fuse");
    return out;
}

/// Builds the deployment parameter set: the trunk and heads survive, the
/// object-embedding projections are replaced by fused C-output kernels, and
/// the auxiliary network, visual prompt encoder, and specialized embedding
/// are dropped. The result is structurally a closed-set model with C classes.
template <typename T>
ParamStore<T> fuse_model(const ParamStore<T>& params, const Tensor<T>& enhanced_prompts) {
    ParamStore<T> fused;
    for (const auto& name : params.names()) {
        if (name.rfind("aux.", 0) == 0 || name.rfind("savpe.", 0) == 0 ||
            name.rfind("lrpc.", 0) == 0)
            continue;
        bool is_proj = false;
        for (const char* sc : kScaleNames)
            if (name == std::string("head.emb.") + sc + ".proj.w") is_proj = true;
        fused.add(name, is_proj ? fuse(enhanced_prompts, params.value(name))
                                : params.value(name));
    }
    return fused;
}

/// Runs the eager head (O then contrast with enhanced prompts) and the fused
/// head (single conv) over the same image and returns the largest absolute
/// logit difference across all anchors and prompts.
template <typename T>
T verify_equivalence(const ParamStore<T>& params, const ModelConfig& cfg,
                     const Tensor<T>& text_embeds, const Tensor<T>& image) {
    EagerCtx<T> cx{&params};
    auto pyr = backbone_pan_forward(cx, image, cfg);
    auto emb = object_embedding_head(cx, pyr, cfg);
    const Tensor<T> enhanced = enhance(params, text_embeds);
    const Tensor<T> eager_logits = matmul_nt(emb.rows, enhanced);

    std::vector<Tensor<T>> fused_rows;
    for (int s = 0; s < 3; ++s) {
        const Tensor<T> kp =
            fuse(enhanced, params.value(std::string("head.emb.") + kScaleNames[s] + ".proj.w"));
        fused_rows.push_back(chw_to_rows(conv2d(emb.pre[s], kp, 1, 0)));
    }
    const Tensor<T> fused_logits = concat(fused_rows, 0);

    T dev = 0;
    for (std::size_t i = 0; i < eager_logits.numel(); ++i)
        dev = std::max(dev, std::abs(eager_logits.data()[i] - fused_logits.data()[i]));
    return dev;
}

} // namespace yoloe
