// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "yoloe/lrpc.hpp"
#include "yoloe/reprta.hpp"
#include "yoloe/train.hpp"

namespace yoloe {

struct BenchRow {
    std::string variant;
    std::size_t size = 0; // C for head benches, V for retrieval benches
    double median_ms = 0;
    double p95_ms = 0;
    std::uint64_t dots = 0;     // retrieval benches
    std::size_t retained = 0;   // retrieval benches: |O'|
};

struct BenchOptions {
    int warmup = 10;
    int iters = 100;
    std::uint64_t seed = 17;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0;
    const double pos = q * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(v.size() - 1, lo + 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - lo);
}

template <typename F>
BenchRow time_fn(const std::string& variant, std::size_t size, int warmup, int iters, F&& fn) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> ms;
    ms.reserve(iters);
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    BenchRow row;
    row.variant = variant;
    row.size = size;
    row.median_ms = quantile(ms, 0.5);
    row.p95_ms = quantile(ms, 0.95);
    return row;
}

} // namespace detail

/// Wide trunk, narrow head: mirrors production-scale cost ratios so the
/// prompt-count-dependent 1x1 projection is a small share of a forward pass.
inline ModelConfig bench_model_config() {
    ModelConfig cfg;
    cfg.image_size = 96;
    cfg.embed_dim = 64;
    cfg.head_channels = 16;
    cfg.savpe_groups = 16;
    cfg.proto_count = 8;
    cfg.stem_width = 24;
    cfg.stage_widths = {48, 96, 192, 384};
    return cfg;
}

template <typename T>
Tensor<T> random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
    Tensor<T> m({rows, dim});
    T* p = m.raw();
    for (std::size_t i = 0; i < m.numel(); ++i) p[i] = static_cast<T>(rng.normal());
    return l2_normalize_rows(m);
}

/// Times the full image -> class-logit forward for three head variants:
///   closed:  a from-scratch head with C output channels
///   fused:   the re-parameterized head (same structure as closed)
///   eager:   D-channel head plus per-call enhancement and contrast
template <typename T>
std::vector<BenchRow> run_head_bench(const std::vector<int>& prompt_counts,
                                     const BenchOptions& opt,
                                     const ModelConfig& cfg = bench_model_config()) {
    std::vector<BenchRow> rows;
    Rng rng(opt.seed);
    Tensor<T> image({3, static_cast<std::size_t>(cfg.image_size),
                     static_cast<std::size_t>(cfg.image_size)});
    for (std::size_t i = 0; i < image.numel(); ++i)
        image.raw()[i] = static_cast<T>(rng.uniform());

    const ParamStore<T> open_params = init_weights<T>(cfg, opt.seed + 1);
    volatile double sink = 0; // keep results observable

    for (int c : prompt_counts) {
        const Tensor<T> text = random_unit_rows<T>(c, cfg.embed_dim, rng);
        const Tensor<T> enhanced = enhance(open_params, text);
        const ParamStore<T> fused = fuse_model(open_params, enhanced);
        const ParamStore<T> closed = init_closed_set_weights<T>(cfg, c, opt.seed + 2);

        rows.push_back(detail::time_fn("closed", c, opt.warmup, opt.iters, [&]() {
            const Predictions<T> p = predict(closed, cfg, image);
            sink = sink + static_cast<double>(p.object_embeddings(0, 0));
        }));
        rows.push_back(detail::time_fn("fused", c, opt.warmup, opt.iters, [&]() {
            const Predictions<T> p = predict(fused, cfg, image);
            sink = sink + static_cast<double>(p.object_embeddings(0, 0));
        }));
        rows.push_back(detail::time_fn("eager", c, opt.warmup, opt.iters, [&]() {
            const Predictions<T> p = predict(open_params, cfg, image);
            const Tensor<T> pr = enhance(open_params, text);
            const Tensor<T> logits = matmul_nt(p.object_embeddings, pr);
            sink = sink + static_cast<double>(logits(0, 0));
        }));
    }
    return rows;
}

/// Times the prompt-free contrast stage (shared object embeddings) for the
/// brute-force full contrast versus filter + lazy retrieval, and reports the
/// instrumented dot-product counts.
template <typename T>
std::vector<BenchRow> run_lrpc_bench(const std::vector<int>& vocab_sizes, int num_anchors,
                                     int embed_dim, const BenchOptions& opt) {
    std::vector<BenchRow> rows;
    Rng rng(opt.seed);
    const std::size_t n = static_cast<std::size_t>(num_anchors);
    const std::size_t d = static_cast<std::size_t>(embed_dim);

    // object embeddings: most anchors near-orthogonal to the specialized
    // direction, a minority strongly aligned (trained-model shape)
    Tensor<T> p_s = random_unit_rows<T>(1, d, rng);
    Tensor<T> o({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const bool object_like = rng.uniform() < 0.15;
        for (std::size_t j = 0; j < d; ++j)
            o.at(i, j) = static_cast<T>(rng.normal() * 0.2) +
                         (object_like ? T(3) * p_s(std::size_t(0), j) : T(0));
    }

    for (int v : vocab_sizes) {
        Vocabulary<T> vocab;
        vocab.embeddings = random_unit_rows<T>(v, d, rng);
        for (int i = 0; i < v; ++i) vocab.names.push_back("entry_" + std::to_string(i));

        volatile double sink = 0;
        DotCounter brute_count;
        brute_force_full(o, vocab, &brute_count);
        BenchRow brute = detail::time_fn("brute", v, opt.warmup, opt.iters, [&]() {
            const auto r = brute_force_full<T>(o, vocab, nullptr);
            sink = sink + static_cast<double>(r[0].score);
        });
        brute.dots = brute_count.dots;
        brute.retained = n;
        rows.push_back(brute);

        DotCounter lazy_count;
        const auto kept = filter_anchors(o, p_s, T(0.5), &lazy_count);
        retrieve(o, kept, vocab, &lazy_count);
        BenchRow lazy = detail::time_fn("lrpc", v, opt.warmup, opt.iters, [&]() {
            const auto k = filter_anchors(o, p_s, T(0.5), nullptr);
            const auto r = retrieve<T>(o, k, vocab, nullptr);
            sink = sink + (r.empty() ? 0.0 : static_cast<double>(r[0].score));
        });
        lazy.dots = lazy_count.dots;
        lazy.retained = kept.size();
        rows.push_back(lazy);
    }
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "variant,size,median_ms,p95_ms,dot_products,retained\n";
    for (const auto& r : rows)
        out += r.variant + "," + std::to_string(r.size) + "," + std::to_string(r.median_ms) +
               "," + std::to_string(r.p95_ms) + "," + std::to_string(r.dots) + "," +
               std::to_string(r.retained) + "\n";
    return out;
}

} // namespace yoloe
