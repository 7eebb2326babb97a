// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "yoloe/lrpc.hpp"
#include "yoloe/reprta.hpp"
#include "yoloe/savpe.hpp"
#include "yoloe/train.hpp"

namespace yoloe {

template <typename T>
struct NamedDetection {
    Detection<T> det;
    std::string name;
};

struct DetectOptions {
    double score_thresh = 0.25;
    double iou_thresh = 0.5;
    double delta = 0.001; // prompt-free anchor filter threshold
};

namespace detail {

template <typename T>
std::vector<NamedDetection<T>> label(std::vector<Detection<T>> dets,
                                     const std::vector<std::string>& names) {
    std::vector<NamedDetection<T>> out;
    out.reserve(dets.size());
    for (auto& d : dets) {
        NamedDetection<T> nd;
        nd.name = d.class_id >= 0 && d.class_id < static_cast<int>(names.size())
                      ? names[d.class_id]
                      : "class_" + std::to_string(d.class_id);
        nd.det = std::move(d);
        out.push_back(std::move(nd));
    }
    return out;
}

} // namespace detail

/// Text prompts, eager head: enhance cached embeddings, contrast, decode.
template <typename T>
std::vector<NamedDetection<T>> detect_text(const ParamStore<T>& params, const ModelConfig& cfg,
                                           const Tensor<T>& image,
                                           const CachedTextEmbeddings<T>& text,
                                           const DetectOptions& opt = {}) {
    const Predictions<T> pred = predict(params, cfg, image);
    const Tensor<T> prompts = enhance(params, text.rows);
    const Tensor<T> scores = sigmoid(contrast(pred.object_embeddings, prompts));
    return detail::label(decode_and_nms(pred, scores, opt.score_thresh, opt.iou_thresh, cfg),
                         text.names);
}

/// Pre-enhanced (or otherwise prepared) unit-norm prompt rows.
template <typename T>
std::vector<NamedDetection<T>> detect_with_prompts(const ParamStore<T>& params,
                                                   const ModelConfig& cfg, const Tensor<T>& image,
                                                   const Tensor<T>& prompts,
                                                   const std::vector<std::string>& names,
                                                   const DetectOptions& opt = {}) {
    const Predictions<T> pred = predict(params, cfg, image);
    const Tensor<T> scores = sigmoid(contrast(pred.object_embeddings, prompts));
    return detail::label(decode_and_nms(pred, scores, opt.score_thresh, opt.iou_thresh, cfg),
                         names);
}

/// Fused head: the object-embedding rows already are class logits.
template <typename T>
std::vector<NamedDetection<T>> detect_fused(const ParamStore<T>& fused, const ModelConfig& cfg,
                                            const Tensor<T>& image,
                                            const std::vector<std::string>& names,
                                            const DetectOptions& opt = {}) {
    const Predictions<T> pred = predict(fused, cfg, image);
    const Tensor<T> scores = sigmoid(pred.object_embeddings);
    return detail::label(decode_and_nms(pred, scores, opt.score_thresh, opt.iou_thresh, cfg),
                         names);
}

/// Visual prompts: encode each prompt, then contrast as usual.
template <typename T>
std::vector<NamedDetection<T>> detect_visual(const ParamStore<T>& params, const ModelConfig& cfg,
                                             const Tensor<T>& image,
                                             const std::vector<VisualPrompt<T>>& prompts,
                                             std::vector<std::string> names = {},
                                             const DetectOptions& opt = {}) {
    const Tensor<T> rows = encode_prompts(params, cfg, image, prompts);
    if (names.empty())
        for (std::size_t i = 0; i < prompts.size(); ++i)
            names.push_back("prompt_" + std::to_string(i));
    return detect_with_prompts(params, cfg, image, rows, names, opt);
}

/// Prompt-free: specialized-embedding filtering, lazy vocabulary retrieval.
template <typename T>
std::vector<NamedDetection<T>> detect_prompt_free(const ParamStore<T>& params,
                                                  const ModelConfig& cfg, const Tensor<T>& image,
                                                  const Vocabulary<T>& vocab,
                                                  const DetectOptions& opt = {},
                                                  DotCounter* counter = nullptr) {
    const Predictions<T> pred = predict(params, cfg, image);
    auto dets = prompt_free_detect(pred, params.value("lrpc.p_s"), vocab,
                                   static_cast<T>(opt.delta), opt.score_thresh, opt.iou_thresh,
                                   cfg, counter);
    return detail::label(std::move(dets), vocab.names);
}

// ---------------------------------------------------------------------------
// instance masks

/// Binary instance mask at image resolution for one detection: assemble the
/// prototype combination, threshold at 0.5, nearest-upsample from the
/// prototype grid.
template <typename T>
Tensor<T> detection_mask(const Detection<T>& det, const Predictions<T>& pred,
                         const ModelConfig& cfg) {
    Tensor<T> coeffs({1, det.mask_coeffs.size()},
                     std::vector<T>(det.mask_coeffs.begin(), det.mask_coeffs.end()));
    const Tensor<T> soft = assemble_masks(coeffs, pred.prototypes);
    const std::size_t hm = soft.dim(1), wm = soft.dim(2);
    Tensor<T> bin({hm, wm});
    for (std::size_t i = 0; i < hm * wm; ++i)
        bin.raw()[i] = soft.data()[i] >= T(0.5) ? T(1) : T(0);
    const int f = cfg.image_size / static_cast<int>(hm);
    return upsample_nearest(bin.reshaped({1, hm, wm}), f)
        .reshaped({hm * static_cast<std::size_t>(f), wm * static_cast<std::size_t>(f)});
}

/// Row-major run-length encoding, zeros first: counts alternate between runs
/// of 0 and runs of 1 and sum to H*W.
template <typename T>
std::vector<std::size_t> rle_encode(const Tensor<T>& mask) {
    std::vector<std::size_t> counts;
    std::size_t run = 0;
    T current = T(0);
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        const T v = mask.data()[i] != T(0) ? T(1) : T(0);
        if (v == current) {
            ++run;
        } else {
            counts.push_back(run);
            current = v;
            run = 1;
        }
    }
    counts.push_back(run);
    return counts;
}

template <typename T>
Tensor<T> rle_decode(const std::vector<std::size_t>& counts, std::size_t h, std::size_t w) {
    Tensor<T> out({h, w});
    std::size_t i = 0;
    T v = T(0);
    for (std::size_t c : counts) {
        for (std::size_t k = 0; k < c; ++k) {
            if (i >= h * w) throw ValueError("rle_decode: counts exceed mask size");
            out.raw()[i++] = v;
        }
        v = v == T(0) ? T(1) : T(0);
    }
    if (i != h * w) throw ValueError("rle_decode: counts do not cover mask");
    return out;
}

// ---------------------------------------------------------------------------
// evaluation on synthetic scenes

struct EvalResult {
    int total_objects = 0;
    int recalled = 0;        // IoU >= 0.5 with the correct class
    double recall() const { return total_objects ? double(recalled) / total_objects : 0.0; }
};

/// Greedy one-to-one matching by descending detection score. An object counts
/// as recalled when a detection overlaps it at IoU >= 0.5 with the right name.
template <typename T>
void accumulate_recall(EvalResult& r, const std::vector<NamedDetection<T>>& dets,
                       const std::vector<SyntheticObject>& objects,
                       const std::vector<std::string>& class_names) {
    std::vector<bool> taken(objects.size(), false);
    r.total_objects += static_cast<int>(objects.size());
    for (const auto& d : dets) { // detections arrive sorted by score
        int best = -1;
        double best_iou = 0.5;
        for (std::size_t j = 0; j < objects.size(); ++j) {
            if (taken[j]) continue;
            if (class_names[objects[j].class_id] != d.name) continue;
            const double iou = box_iou(d.det.box, objects[j].box);
            if (iou >= best_iou) {
                best = static_cast<int>(j);
                best_iou = iou;
            }
        }
        if (best >= 0) {
            taken[best] = true;
            ++r.recalled;
        }
    }
}

} // namespace yoloe
