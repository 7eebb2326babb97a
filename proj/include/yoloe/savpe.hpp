// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "yoloe/model.hpp"

namespace yoloe {

/// A region of interest: either a pixel-space box or a full-resolution binary
/// mask. Boxes rasterize to filled rectangles.
template <typename T>
struct VisualPrompt {
    std::optional<std::array<double, 4>> box; // x0, y0, x1, y1 in image pixels
    Tensor<T> mask;                           // H x W, used when box is absent

    static VisualPrompt from_box(double x0, double y0, double x1, double y1) {
        VisualPrompt p;
        p.box = {x0, y0, x1, y1};
        return p;
    }
    static VisualPrompt from_mask(Tensor<T> m) {
        VisualPrompt p;
        p.mask = std::move(m);
        return p;
    }
};

template <typename T>
Tensor<T> rasterize(const VisualPrompt<T>& prompt, int image_size) {
    const std::size_t n = static_cast<std::size_t>(image_size);
    if (prompt.box) {
        const auto& b = *prompt.box;
        if (!(b[0] >= 0 && b[1] >= 0 && b[2] <= image_size && b[3] <= image_size) ||
            !(b[2] > b[0] && b[3] > b[1]))
            throw ValueError("rasterize: box must lie within the image with positive area");
        const int x0 = std::clamp(static_cast<int>(std::lround(b[0])), 0, image_size);
        const int x1 = std::clamp(static_cast<int>(std::lround(b[2])), x0, image_size);
        const int y0 = std::clamp(static_cast<int>(std::lround(b[1])), 0, image_size);
        const int y1 = std::clamp(static_cast<int>(std::lround(b[3])), y0, image_size);
        if (x1 == x0 || y1 == y0) throw ValueError("rasterize: box covers no pixels");
        Tensor<T> m({n, n});
        T* p = m.raw();
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) p[static_cast<std::size_t>(y) * n + x] = T(1);
        return m;
    }
    if (prompt.mask.rank() != 2 || prompt.mask.dim(0) != n || prompt.mask.dim(1) != n)
        throw ShapeError("rasterize: mask must be imageSize x imageSize");
    bool any = false;
    for (std::size_t i = 0; i < prompt.mask.numel(); ++i)
        if (prompt.mask.data()[i] != T(0)) { any = true; break; }
    if (!any) throw ValueError("rasterize: mask has no positive cells");
    return prompt.mask;
}

/// Prompt-agnostic semantic features: per-scale conv pairs, upsampling to P3
/// resolution, concatenation, and a 1x1 projection to D channels.
template <class Cx>
typename Cx::H semantic_branch(Cx& cx, const PyramidH<Cx>& pyr, const ModelConfig& cfg) {
    std::vector<typename Cx::H> feats;
    const std::array<typename Cx::H, 3> in{pyr.p3, pyr.p4, pyr.p5};
    const std::array<int, 3> up{1, 2, 4};
    for (int s = 0; s < 3; ++s) {
        const std::string p = std::string("savpe.sem.") + kScaleNames[s];
        auto f = conv_block(cx, in[s], p + ".c1", 1, 1);
        f = conv_block(cx, f, p + ".c2", 1, 1);
        feats.push_back(up[s] == 1 ? f : cx.upsample_nearest(f, up[s]));
    }
    auto cat = cx.concat0(feats);
    return cx.add_bias(cx.conv2d(cat, cx.param("savpe.sem.proj.w"), 1, 0),
                       cx.param("savpe.sem.proj.b"));
    (void)cfg;
}

/// Prompt-aware weights: the downsampled mask feeds a small conv (F_V),
/// per-scale convs summed at P3 resolution give image features (F_I), and a
/// fusion conv over their concatenation is softmax-normalized within the
/// region the mask touches after pooling.
template <class Cx, typename T>
typename Cx::H activation_branch(Cx& cx, const PyramidH<Cx>& pyr, const Tensor<T>& mask,
                                 const ModelConfig& cfg, Tensor<T>* region_out = nullptr) {
    const Tensor<T> pooled = avg_downsample(mask, ModelConfig::strides[0]);
    Tensor<T> region(pooled.shape());
    {
        T* r = region.raw();
        bool any = false;
        for (std::size_t i = 0; i < pooled.numel(); ++i) {
            r[i] = pooled.data()[i] > T(0) ? T(1) : T(0); // any overlap keeps the cell
            any = any || r[i] != T(0);
        }
        if (!any) throw ValueError("activation_branch: region empty after downsampling");
    }
    if (region_out) *region_out = region;

    auto fv = cx.add_bias(
        cx.conv2d(cx.constant(pooled.reshaped({1, pooled.dim(0), pooled.dim(1)})),
                  cx.param("savpe.act.mask.w"), 1, 1),
        cx.param("savpe.act.mask.b"));

    const std::array<typename Cx::H, 3> in{pyr.p3, pyr.p4, pyr.p5};
    const std::array<int, 3> up{1, 2, 4};
    typename Cx::H fi{};
    for (int s = 0; s < 3; ++s) {
        const std::string p = std::string("savpe.act.img.") + kScaleNames[s];
        auto f = cx.add_bias(cx.conv2d(in[s], cx.param(p + ".w"), 1, 1), cx.param(p + ".b"));
        if (up[s] != 1) f = cx.upsample_nearest(f, up[s]);
        fi = s == 0 ? f : cx.add(fi, f);
    }

    auto logits = cx.add_bias(cx.conv2d(cx.concat0({fv, fi}), cx.param("savpe.act.fuse.w"), 1, 1),
                              cx.param("savpe.act.fuse.b"));
    (void)cfg;
    return cx.masked_softmax(logits, region);
}

/// Grouped aggregation of semantic features by activation weights, then L2
/// normalization. Group i of the D channels pools with weight channel i.
template <class Cx>
typename Cx::H aggregate(Cx& cx, typename Cx::H s, typename Cx::H w, int groups) {
    return cx.l2_normalize_rows(cx.savpe_aggregate(s, w, groups));
}

/// Ablation baseline: uniform average of semantic features over the region.
template <typename T>
Tensor<T> mask_pool_baseline(const Tensor<T>& s, const Tensor<T>& region) {
    if (s.rank() != 3 || region.rank() != 2 || s.dim(1) != region.dim(0) ||
        s.dim(2) != region.dim(1))
        throw ShapeError("mask_pool_baseline: DxHxW features and HxW region required");
    const std::size_t D = s.dim(0), HW = region.numel();
    std::size_t count = 0;
    for (std::size_t i = 0; i < HW; ++i)
        if (region.data()[i] != T(0)) ++count;
    if (count == 0) throw ValueError("mask_pool_baseline: empty region");
    Tensor<T> out({1, D});
    T* o = out.raw();
    const T* ps = s.data();
    for (std::size_t d = 0; d < D; ++d) {
        T acc = 0;
        for (std::size_t i = 0; i < HW; ++i)
            if (region.data()[i] != T(0)) acc += ps[d * HW + i];
        o[d] = acc / T(count);
    }
    return l2_normalize_rows(out);
}

/// Encodes one embedding per prompt, sharing the pyramid and the semantic
/// features across prompts.
template <typename T>
Tensor<T> encode_prompts(const ParamStore<T>& params, const ModelConfig& cfg,
                         const Tensor<T>& image, const std::vector<VisualPrompt<T>>& prompts) {
    if (prompts.empty()) throw ValueError("encode_prompts: at least one prompt required");
    EagerCtx<T> cx{&params};
    auto pyr = backbone_pan_forward(cx, image, cfg);
    auto s = semantic_branch(cx, pyr, cfg);
    std::vector<Tensor<T>> rows;
    for (const auto& p : prompts) {
        const Tensor<T> mask = rasterize(p, cfg.image_size);
        auto w = activation_branch(cx, pyr, mask, cfg);
        rows.push_back(aggregate(cx, s, w, cfg.savpe_groups));
    }
    return concat(rows, 0);
}

/// Arithmetic mean of per-image embeddings, re-normalized.
template <typename T>
Tensor<T> average_embeddings(const std::vector<Tensor<T>>& per_image) {
    if (per_image.empty()) throw ValueError("average_embeddings: empty input");
    Tensor<T> acc = per_image[0].clone();
    for (std::size_t i = 1; i < per_image.size(); ++i) acc = add(acc, per_image[i]);
    return l2_normalize_rows(scale(acc, T(1) / T(per_image.size())));
}

} // namespace yoloe
