// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "yoloe/model.hpp"

namespace yoloe {

/// Built-in retrieval source: category names with unit-norm embeddings.
template <typename T>
struct Vocabulary {
    std::vector<std::string> names;
    Tensor<T> embeddings; // V x D
};

/// Counts D-length row dot products so laziness is measurable, not assumed.
struct DotCounter {
    std::uint64_t dots = 0;
};

inline int worker_thread_cap() {
    if (const char* env = std::getenv("YOLOE_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

/// Anchors whose dot product with the specialized embedding strictly exceeds
/// delta, in ascending order. Costs exactly N dot products.
template <typename T>
std::vector<int> filter_anchors(const Tensor<T>& o, const Tensor<T>& p_s, T delta,
                                DotCounter* counter = nullptr) {
    if (o.rank() != 2 || p_s.rank() != 2 || p_s.dim(0) != 1 || p_s.dim(1) != o.dim(1))
        throw ShapeError("filter_anchors: O is NxD and P_s is 1xD");
    if (!std::isfinite(static_cast<double>(delta)))
        throw ValueError("filter_anchors: delta must be finite");
    const std::size_t N = o.dim(0), D = o.dim(1);
    const T* po = o.data();
    const T* pp = p_s.data();
    std::vector<int> kept;
    for (std::size_t n = 0; n < N; ++n) {
        T dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += po[n * D + d] * pp[d];
        if (dot > delta) kept.push_back(static_cast<int>(n));
    }
    if (counter) counter->dots += N;
    return kept;
}

template <typename T>
struct Retrieval {
    int class_id;
    T score; // sigmoid of the winning logit
};

namespace detail {

template <typename T>
Retrieval<T> retrieve_one(const T* row, const Tensor<T>& vocab_embeds) {
    const std::size_t V = vocab_embeds.dim(0), D = vocab_embeds.dim(1);
    const T* pv = vocab_embeds.data();
    std::size_t best = 0;
    T best_logit = 0;
    for (std::size_t v = 0; v < V; ++v) {
        T dot = 0;
        const T* vrow = pv + v * D;
        for (std::size_t d = 0; d < D; ++d) dot += row[d] * vrow[d];
        if (v == 0 || dot > best_logit) { // ties keep the lowest index
            best = v;
            best_logit = dot;
        }
    }
    return {static_cast<int>(best), sigmoid_scalar(best_logit)};
}

} // namespace detail

/// Vocabulary retrieval for the given anchor indices only; anchors outside
/// the index set are never touched. Costs |indices| * V dot products.
/// Retrieval is partitioned across worker threads (capped by YOLOE_THREADS)
/// and merged in index order, so results are deterministic.
template <typename T>
std::vector<Retrieval<T>> retrieve(const Tensor<T>& o, const std::vector<int>& indices,
                                   const Vocabulary<T>& vocab, DotCounter* counter = nullptr) {
    if (vocab.names.empty() || vocab.embeddings.numel() == 0)
        throw ValueError("retrieve: empty vocabulary");
    if (vocab.embeddings.dim(1) != o.dim(1))
        throw ShapeError("retrieve: vocabulary embedding width mismatch");
    const std::size_t D = o.dim(1);
    for (int n : indices)
        if (n < 0 || static_cast<std::size_t>(n) >= o.dim(0))
            throw ValueError("retrieve: anchor index out of range");
    std::vector<Retrieval<T>> out(indices.size());
    const int threads = std::min(
        worker_thread_cap(), static_cast<int>(std::max<std::size_t>(1, indices.size() / 64)));
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            out[i] = detail::retrieve_one(o.data() + static_cast<std::size_t>(indices[i]) * D,
                                          vocab.embeddings);
    };
    if (threads <= 1 || indices.size() < 128) {
        work(0, indices.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (indices.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t lo = t * chunk, hi = std::min(indices.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(work, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    if (counter) counter->dots += static_cast<std::uint64_t>(indices.size()) * vocab.names.size();
    return out;
}

/// Full N x V contrast: the correctness oracle and the latency baseline.
template <typename T>
std::vector<Retrieval<T>> brute_force_full(const Tensor<T>& o, const Vocabulary<T>& vocab,
                                           DotCounter* counter = nullptr) {
    if (vocab.names.empty() || vocab.embeddings.numel() == 0)
        throw ValueError("brute_force_full: empty vocabulary");
    const std::size_t N = o.dim(0), D = o.dim(1);
    std::vector<Retrieval<T>> out(N);
    for (std::size_t n = 0; n < N; ++n)
        out[n] = detail::retrieve_one(o.data() + n * D, vocab.embeddings);
    if (counter) counter->dots += static_cast<std::uint64_t>(N) * vocab.names.size();
    return out;
}

/// filter -> retrieve -> decode/NMS. Detection confidence is the retrieval
/// score; anchors filtered out never meet the vocabulary.
template <typename T>
std::vector<Detection<T>> prompt_free_detect(const Predictions<T>& pred, const Tensor<T>& p_s,
                                             const Vocabulary<T>& vocab, T delta,
                                             double score_thresh, double iou_thresh,
                                             const ModelConfig& cfg,
                                             DotCounter* counter = nullptr) {
    if (vocab.names.empty()) throw ValueError("prompt_free_detect: empty vocabulary");
    const std::vector<int> kept = filter_anchors(pred.object_embeddings, p_s, delta, counter);
    const auto hits = retrieve(pred.object_embeddings, kept, vocab, counter);
    std::vector<ScoredAnchor> cands;
    cands.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i)
        cands.push_back({kept[i], hits[i].class_id, static_cast<double>(hits[i].score)});
    return decode_and_nms(pred, cands, score_thresh, iou_thresh, cfg);
}

} // namespace yoloe
