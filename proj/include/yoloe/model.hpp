// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "yoloe/autodiff.hpp"
#include "yoloe/tensor.hpp"

namespace yoloe {

/// Anchor-free detector dimensions. Anchors are laid out P3 row-major, then
/// P4, then P5; that ordering is part of the contract for every N-indexed
/// tensor in the engine.
struct ModelConfig {
    int image_size = 64;                      // square, multiple of 32
    int embed_dim = 32;                       // D
    int head_channels = 32;                   // D'
    int savpe_groups = 16;                    // A; must divide embed_dim
    int proto_count = 8;                      // k
    int stem_width = 8;
    std::array<int, 4> stage_widths{16, 32, 64, 128};

    static constexpr std::array<int, 3> strides{8, 16, 32};

    void validate() const {
        if (image_size <= 0 || image_size % 32 != 0)
            throw ValueError("ModelConfig: image_size must be a positive multiple of 32");
        if (embed_dim <= 0 || head_channels <= 0 || proto_count <= 0 || stem_width <= 0)
            throw ValueError("ModelConfig: dimensions must be positive");
        if (savpe_groups <= 0 || embed_dim % savpe_groups != 0)
            throw ValueError("ModelConfig: embed_dim must be divisible by savpe_groups");
        for (int w : stage_widths)
            if (w <= 0) throw ValueError("ModelConfig: stage widths must be positive");
    }

    int grid(int scale) const { return image_size / strides[scale]; } // cells per side
    int anchors_at(int scale) const { return grid(scale) * grid(scale); }
    int num_anchors() const { return anchors_at(0) + anchors_at(1) + anchors_at(2); }

    // pyramid channel widths at strides 8/16/32
    std::array<int, 3> pyramid_widths() const {
        return {stage_widths[1], stage_widths[2], stage_widths[3]};
    }

    int proto_res() const { return grid(0); } // prototypes live at P3 resolution
    int aux_hidden() const { return 2 * embed_dim; }
};

inline const std::array<const char*, 3> kScaleNames{"p3", "p4", "p5"};

template <typename T>
struct Predictions {
    Tensor<T> object_embeddings; // N x D (N x C logits when the head is fused)
    Tensor<T> box_offsets;       // N x 4, ltrb distances in stride units
    Tensor<T> mask_coeffs;       // N x k
    Tensor<T> prototypes;        // k x Hm x Wm
    Tensor<T> anchor_centers;    // N x 2, (x, y) in image pixels
};

template <typename T>
Tensor<T> anchor_centers(const ModelConfig& cfg) {
    const int n = cfg.num_anchors();
    Tensor<T> out({static_cast<std::size_t>(n), 2});
    T* o = out.raw();
    std::size_t i = 0;
    for (int s = 0; s < 3; ++s) {
        const int g = cfg.grid(s), stride = ModelConfig::strides[s];
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) {
                o[i * 2 + 0] = (T(x) + T(0.5)) * stride;
                o[i * 2 + 1] = (T(y) + T(0.5)) * stride;
                ++i;
            }
    }
    return out;
}

inline std::vector<int> anchor_strides(const ModelConfig& cfg) {
    std::vector<int> s;
    s.reserve(cfg.num_anchors());
    for (int k = 0; k < 3; ++k) s.insert(s.end(), cfg.anchors_at(k), ModelConfig::strides[k]);
    return s;
}

// ---------------------------------------------------------------------------
// weight initialization: seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
// aux.wd starts at zero so the text-embedding enhancer begins as the identity

namespace detail {

// Weights use a He-style gain so activations and gradients keep a workable
// scale through the unnormalized trunk; biases stay at the plain 1/sqrt
// bound. Everything is seeded, so runs reproduce bit for bit.
template <typename T>
Tensor<T> uniform_fan_in(Rng& rng, typename Tensor<T>::Shape shape, std::size_t fan_in,
                         double gain = 1.0) {
    Tensor<T> t(std::move(shape));
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    T* p = t.raw();
    for (std::size_t i = 0; i < t.numel(); ++i)
        p[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

inline constexpr double kWeightGain = 2.449489742783178; // sqrt(6)

template <typename T>
void add_conv(ParamStore<T>& ps, Rng& rng, const std::string& name, int cout, int cin, int k,
              bool bias) {
    const std::size_t fan = static_cast<std::size_t>(cin) * k * k;
    ps.add(name + ".w",
           uniform_fan_in<T>(rng,
                             {static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                              static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                             fan, kWeightGain));
    if (bias)
        ps.add(name + ".b", uniform_fan_in<T>(rng, {static_cast<std::size_t>(cout)}, fan));
}

template <typename T>
void add_trunk_and_heads(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg, int proj_out) {
    const auto pw = cfg.pyramid_widths();
    const int dp = cfg.head_channels;

    detail::add_conv(ps, rng, "backbone.stem", cfg.stem_width, 3, 3, true);
    detail::add_conv(ps, rng, "backbone.s1", cfg.stage_widths[0], cfg.stem_width, 3, true);
    detail::add_conv(ps, rng, "backbone.s2", cfg.stage_widths[1], cfg.stage_widths[0], 3, true);
    detail::add_conv(ps, rng, "backbone.s3", cfg.stage_widths[2], cfg.stage_widths[1], 3, true);
    detail::add_conv(ps, rng, "backbone.s4", cfg.stage_widths[3], cfg.stage_widths[2], 3, true);

    detail::add_conv(ps, rng, "pan.td4", pw[1], pw[2] + pw[1], 3, true);
    detail::add_conv(ps, rng, "pan.td3", pw[0], pw[1] + pw[0], 3, true);
    detail::add_conv(ps, rng, "pan.bu4_down", pw[0], pw[0], 3, true);
    detail::add_conv(ps, rng, "pan.bu4", pw[1], pw[0] + pw[1], 3, true);
    detail::add_conv(ps, rng, "pan.bu5_down", pw[1], pw[1], 3, true);
    detail::add_conv(ps, rng, "pan.bu5", pw[2], pw[1] + pw[2], 3, true);

    for (int s = 0; s < 3; ++s) {
        const std::string p = kScaleNames[s];
        detail::add_conv(ps, rng, "head.emb." + p + ".c1", dp, pw[s], 3, true);
        detail::add_conv(ps, rng, "head.emb." + p + ".c2", dp, dp, 3, true);
        detail::add_conv(ps, rng, "head.emb." + p + ".proj", proj_out, dp, 1, false); // no bias
        detail::add_conv(ps, rng, "head.reg." + p + ".c1", dp, pw[s], 3, true);
        detail::add_conv(ps, rng, "head.reg." + p + ".c2", dp, dp, 3, true);
        detail::add_conv(ps, rng, "head.reg." + p + ".out", 4, dp, 1, true);
        detail::add_conv(ps, rng, "head.msk." + p + ".c1", dp, pw[s], 3, true);
        detail::add_conv(ps, rng, "head.msk." + p + ".c2", dp, dp, 3, true);
        detail::add_conv(ps, rng, "head.msk." + p + ".out", cfg.proto_count, dp, 1, true);
    }
    detail::add_conv(ps, rng, "proto.c1", dp, pw[0], 3, true);
    detail::add_conv(ps, rng, "proto.out", cfg.proto_count, dp, 1, true);
}

} // namespace detail

template <typename T>
ParamStore<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> ps;
    Rng rng(seed);
    const auto pw = cfg.pyramid_widths();
    const int dp = cfg.head_channels, d = cfg.embed_dim, a = cfg.savpe_groups;
    detail::add_trunk_and_heads(ps, rng, cfg, d);

    for (int s = 0; s < 3; ++s) {
        const std::string p = kScaleNames[s];
        detail::add_conv(ps, rng, "savpe.sem." + p + ".c1", dp, pw[s], 3, true);
        detail::add_conv(ps, rng, "savpe.sem." + p + ".c2", dp, dp, 3, true);
    }
    detail::add_conv(ps, rng, "savpe.sem.proj", d, 3 * dp, 1, true);
    detail::add_conv(ps, rng, "savpe.act.mask", a, 1, 3, true);
    for (int s = 0; s < 3; ++s)
        detail::add_conv(ps, rng, "savpe.act.img." + std::string(kScaleNames[s]), a, pw[s], 3,
                         true);
    detail::add_conv(ps, rng, "savpe.act.fuse", a, 2 * a, 3, true);

    const std::size_t dh = static_cast<std::size_t>(cfg.aux_hidden());
    ps.add("aux.wg", detail::uniform_fan_in<T>(rng, {static_cast<std::size_t>(d), dh},
                                               static_cast<std::size_t>(d), detail::kWeightGain));
    ps.add("aux.wu", detail::uniform_fan_in<T>(rng, {static_cast<std::size_t>(d), dh},
                                               static_cast<std::size_t>(d), detail::kWeightGain));
    ps.add("aux.wd", Tensor<T>({dh, static_cast<std::size_t>(d)})); // zero: identity warm start

    Tensor<T> p_s = detail::uniform_fan_in<T>(rng, {1, static_cast<std::size_t>(d)},
                                              static_cast<std::size_t>(d));
    ps.add("lrpc.p_s", l2_normalize_rows(p_s));
    return ps;
}

/// A from-scratch closed-set detector with num_classes output channels in the
/// embedding head: the structural baseline a fused model is compared against.
template <typename T>
ParamStore<T> init_closed_set_weights(const ModelConfig& cfg, int num_classes,
                                      std::uint64_t seed) {
    cfg.validate();
    if (num_classes < 1) throw ValueError("init_closed_set_weights: need at least one class");
    ParamStore<T> ps;
    Rng rng(seed);
    detail::add_trunk_and_heads(ps, rng, cfg, num_classes);
    return ps;
}

// ---------------------------------------------------------------------------
// forward graph, written once against the execution-context interface

template <class Cx>
struct PyramidH {
    typename Cx::H p3, p4, p5;
};

template <class Cx>
typename Cx::H conv_block(Cx& cx, typename Cx::H x, const std::string& name, int stride, int pad,
                          bool act = true) {
    auto y = cx.conv2d(x, cx.param(name + ".w"), stride, pad);
    y = cx.add_bias(y, cx.param(name + ".b"));
    return act ? cx.silu(y) : y;
}

template <class Cx>
PyramidH<Cx> backbone_pan_forward(Cx& cx, typename Cx::H image, const ModelConfig& cfg) {
    {
        const auto& v = cx.val(image);
        if (v.rank() != 3 || v.dim(0) != 3 ||
            v.dim(1) != static_cast<std::size_t>(cfg.image_size) ||
            v.dim(2) != static_cast<std::size_t>(cfg.image_size))
            throw ShapeError("backbone_pan_forward: image must be 3 x imageSize x imageSize");
        for (std::size_t i = 0; i < v.numel(); ++i)
            if (!(v.data()[i] >= 0 && v.data()[i] <= 1))
                throw ValueError("backbone_pan_forward: pixel values must lie in [0,1]");
    }
    auto x = conv_block(cx, image, "backbone.stem", 2, 1);
    x = conv_block(cx, x, "backbone.s1", 2, 1);
    auto c3 = conv_block(cx, x, "backbone.s2", 2, 1);
    auto c4 = conv_block(cx, c3, "backbone.s3", 2, 1);
    auto c5 = conv_block(cx, c4, "backbone.s4", 2, 1);

    auto t4 = conv_block(cx, cx.concat0({cx.upsample_nearest(c5, 2), c4}), "pan.td4", 1, 1);
    auto t3 = conv_block(cx, cx.concat0({cx.upsample_nearest(t4, 2), c3}), "pan.td3", 1, 1);

    auto p3 = t3;
    auto d4 = conv_block(cx, p3, "pan.bu4_down", 2, 1);
    auto p4 = conv_block(cx, cx.concat0({d4, t4}), "pan.bu4", 1, 1);
    auto d5 = conv_block(cx, p4, "pan.bu5_down", 2, 1);
    auto p5 = conv_block(cx, cx.concat0({d5, c5}), "pan.bu5", 1, 1);
    return {p3, p4, p5};
}

template <class Cx>
struct EmbHeadOut {
    typename Cx::H rows;                   // N x D (or N x C for a fused head)
    std::array<typename Cx::H, 3> pre;     // per-scale D'-channel input to the final 1x1 conv
};

/// Two 3x3 convs to D' channels, then a bias-free 1x1 projection. The
/// projection kernel is what region-text fusion rewrites, so the pre-final
/// feature maps are returned alongside the flattened rows.
template <class Cx>
EmbHeadOut<Cx> object_embedding_head(Cx& cx, const PyramidH<Cx>& pyr, const ModelConfig& cfg) {
    EmbHeadOut<Cx> out{};
    std::vector<typename Cx::H> rows;
    const std::array<typename Cx::H, 3> feats{pyr.p3, pyr.p4, pyr.p5};
    for (int s = 0; s < 3; ++s) {
        const std::string p = std::string("head.emb.") + kScaleNames[s];
        auto i1 = conv_block(cx, feats[s], p + ".c1", 1, 1);
        auto i2 = conv_block(cx, i1, p + ".c2", 1, 1);
        out.pre[s] = i2;
        auto o = cx.conv2d(i2, cx.param(p + ".proj.w"), 1, 0);
        rows.push_back(cx.chw_to_rows(o));
    }
    out.rows = cx.concat0(rows);
    return out;
}

template <class Cx>
typename Cx::H regression_head(Cx& cx, const PyramidH<Cx>& pyr, const ModelConfig&) {
    std::vector<typename Cx::H> rows;
    const std::array<typename Cx::H, 3> feats{pyr.p3, pyr.p4, pyr.p5};
    for (int s = 0; s < 3; ++s) {
        const std::string p = std::string("head.reg.") + kScaleNames[s];
        auto i1 = conv_block(cx, feats[s], p + ".c1", 1, 1);
        auto i2 = conv_block(cx, i1, p + ".c2", 1, 1);
        auto o = cx.add_bias(cx.conv2d(i2, cx.param(p + ".out.w"), 1, 0), cx.param(p + ".out.b"));
        rows.push_back(cx.chw_to_rows(o));
    }
    return cx.concat0(rows);
}

template <class Cx>
typename Cx::H mask_coeff_head(Cx& cx, const PyramidH<Cx>& pyr, const ModelConfig&) {
    std::vector<typename Cx::H> rows;
    const std::array<typename Cx::H, 3> feats{pyr.p3, pyr.p4, pyr.p5};
    for (int s = 0; s < 3; ++s) {
        const std::string p = std::string("head.msk.") + kScaleNames[s];
        auto i1 = conv_block(cx, feats[s], p + ".c1", 1, 1);
        auto i2 = conv_block(cx, i1, p + ".c2", 1, 1);
        auto o = cx.add_bias(cx.conv2d(i2, cx.param(p + ".out.w"), 1, 0), cx.param(p + ".out.b"));
        rows.push_back(cx.chw_to_rows(o));
    }
    return cx.concat0(rows);
}

template <class Cx>
typename Cx::H prototype_head(Cx& cx, const PyramidH<Cx>& pyr, const ModelConfig&) {
    auto x = conv_block(cx, pyr.p3, "proto.c1", 1, 1);
    return cx.add_bias(cx.conv2d(x, cx.param("proto.out.w"), 1, 0), cx.param("proto.out.b"));
}

// ---------------------------------------------------------------------------
// eager inference

template <typename T>
Predictions<T> predict(const ParamStore<T>& params, const ModelConfig& cfg,
                       const Tensor<T>& image) {
    EagerCtx<T> cx{&params};
    auto pyr = backbone_pan_forward(cx, image, cfg);
    auto emb = object_embedding_head(cx, pyr, cfg);
    Predictions<T> out;
    out.object_embeddings = emb.rows;
    out.box_offsets = regression_head(cx, pyr, cfg);
    out.mask_coeffs = mask_coeff_head(cx, pyr, cfg);
    out.prototypes = prototype_head(cx, pyr, cfg);
    out.anchor_centers = anchor_centers<T>(cfg);
    return out;
}

/// Logits from object embeddings against unit-norm prompt rows.
template <typename T>
Tensor<T> contrast(const Tensor<T>& o, const Tensor<T>& prompts) {
    if (o.rank() != 2 || prompts.rank() != 2 || o.dim(1) != prompts.dim(1))
        throw ShapeError("contrast: embedding dimensions disagree");
    const std::size_t C = prompts.dim(0), D = prompts.dim(1);
    for (std::size_t c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t j = 0; j < D; ++j) s += prompts(c, j) * prompts(c, j);
        if (std::abs(std::sqrt(s) - T(1)) > T(1e-3))
            throw ValueError("contrast: prompt rows must be L2-normalized");
    }
    return matmul_nt(o, prompts);
}

/// YOLACT-style mask assembly: sigmoid of the coefficient-weighted prototype
/// sum. Returns an empty tensor when no detections are selected.
template <typename T>
Tensor<T> assemble_masks(const Tensor<T>& coeffs, const Tensor<T>& protos) {
    if (coeffs.numel() == 0) return Tensor<T>(); // zero selected detections
    if (coeffs.rank() != 2 || protos.rank() != 3 || coeffs.dim(1) != protos.dim(0))
        throw ShapeError("assemble_masks: coefficient count must match prototype count");
    const std::size_t M = coeffs.dim(0), K = coeffs.dim(1);
    const std::size_t H = protos.dim(1), W = protos.dim(2);
    Tensor<T> out({M, H, W});
    T* o = out.raw();
    const T* pp = protos.data();
    for (std::size_t m = 0; m < M; ++m) {
        T* plane = o + m * H * W;
        for (std::size_t k = 0; k < K; ++k) {
            const T c = coeffs(m, k);
            const T* proto = pp + k * H * W;
            for (std::size_t i = 0; i < H * W; ++i) plane[i] += c * proto[i];
        }
        for (std::size_t i = 0; i < H * W; ++i) plane[i] = sigmoid_scalar(plane[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// decode + NMS

template <typename T>
struct Detection {
    std::array<double, 4> box{}; // x0, y0, x1, y1 in image pixels
    int class_id = -1;
    double score = 0;
    int anchor = -1;
    std::vector<T> mask_coeffs;
};

struct ScoredAnchor {
    int anchor;
    int class_id;
    double score;
};

inline double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ix0 = std::max(a[0], b[0]), iy0 = std::max(a[1], b[1]);
    const double ix1 = std::min(a[2], b[2]), iy1 = std::min(a[3], b[3]);
    const double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
    const double inter = iw * ih;
    const double ua = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]) +
                      std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]) - inter;
    return ua > 0 ? inter / ua : 0.0;
}

/// Greedy class-agnostic NMS over per-anchor scored candidates. Candidates at
/// or below score_thresh are dropped; a candidate is suppressed when its IoU
/// with an already-kept box exceeds iou_thresh. Output order: descending
/// score, then box lexicographic.
template <typename T>
std::vector<Detection<T>> decode_and_nms(const Predictions<T>& pred,
                                         const std::vector<ScoredAnchor>& candidates,
                                         double score_thresh, double iou_thresh,
                                         const ModelConfig& cfg) {
    if (!(score_thresh > 0 && score_thresh < 1) || !(iou_thresh > 0 && iou_thresh < 1))
        throw ValueError("decode_and_nms: thresholds must lie in (0,1)");
    const auto strides = anchor_strides(cfg);
    const double img = cfg.image_size;
    std::vector<Detection<T>> cands;
    for (const auto& c : candidates) {
        if (!(c.score > score_thresh)) continue;
        Detection<T> d;
        d.anchor = c.anchor;
        d.class_id = c.class_id;
        d.score = c.score;
        const double cx = pred.anchor_centers(c.anchor, 0);
        const double cy = pred.anchor_centers(c.anchor, 1);
        const double s = strides[static_cast<std::size_t>(c.anchor)];
        const auto off = [&](int j) {
            return std::max(0.0, static_cast<double>(pred.box_offsets(c.anchor, j)));
        };
        d.box = {std::clamp(cx - off(0) * s, 0.0, img), std::clamp(cy - off(1) * s, 0.0, img),
                 std::clamp(cx + off(2) * s, 0.0, img), std::clamp(cy + off(3) * s, 0.0, img)};
        if (pred.mask_coeffs.numel() > 0) {
            const std::size_t k = pred.mask_coeffs.dim(1);
            d.mask_coeffs.resize(k);
            for (std::size_t j = 0; j < k; ++j) d.mask_coeffs[j] = pred.mask_coeffs(c.anchor, j);
        }
        cands.push_back(std::move(d));
    }
    std::sort(cands.begin(), cands.end(), [](const Detection<T>& a, const Detection<T>& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.box < b.box;
    });
    std::vector<Detection<T>> kept;
    for (auto& c : cands) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (box_iou(c.box, k.box) > iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(std::move(c));
    }
    return kept;
}

/// N x C score matrix variant: per anchor, the argmax class (ties resolved to
/// the lowest class index) becomes the candidate.
template <typename T>
std::vector<Detection<T>> decode_and_nms(const Predictions<T>& pred, const Tensor<T>& scores,
                                         double score_thresh, double iou_thresh,
                                         const ModelConfig& cfg) {
    if (scores.rank() != 2) throw ShapeError("decode_and_nms: scores must be N x C");
    const std::size_t N = scores.dim(0), C = scores.dim(1);
    std::vector<ScoredAnchor> cands;
    cands.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (scores(n, c) > scores(n, best)) best = c;
        cands.push_back({static_cast<int>(n), static_cast<int>(best),
                         static_cast<double>(scores(n, best))});
    }
    return decode_and_nms(pred, cands, score_thresh, iou_thresh, cfg);
}

} // namespace yoloe
