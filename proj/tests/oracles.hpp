// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used only by tests. Everything here
// is written as plain nested loops against the mathematical definitions and
// deliberately shares no code with the library kernels it checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "yoloe/common.hpp"
#include "yoloe/tensor.hpp"

namespace oracle {

// six nested loops straight from the cross-correlation definition
template <typename T>
yoloe::Tensor<T> conv2d(const yoloe::Tensor<T>& x, const yoloe::Tensor<T>& k, int stride,
                        int pad) {
    const int cin = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
              w = static_cast<int>(x.dim(2));
    const int cout = static_cast<int>(k.dim(0)), ks = static_cast<int>(k.dim(2));
    const int ho = (h + 2 * pad - ks) / stride + 1;
    const int wo = (w + 2 * pad - ks) / stride + 1;
    yoloe::Tensor<T> out({static_cast<std::size_t>(cout), static_cast<std::size_t>(ho),
                          static_cast<std::size_t>(wo)});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                T acc = 0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < ks; ++ky)
                        for (int kx = 0; kx < ks; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue; // zero pad
                            acc += x(ci, iy, ix) * k(co, ci, ky, kx);
                        }
                out.at(co, oy, ox) = acc;
            }
    return out;
}

template <typename T>
yoloe::Tensor<T> matmul(const yoloe::Tensor<T>& a, const yoloe::Tensor<T>& b) {
    const std::size_t m = a.dim(0), kk = a.dim(1), p = b.dim(1);
    yoloe::Tensor<T> out({m, p});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            T acc = 0;
            for (std::size_t k = 0; k < kk; ++k) acc += a(i, k) * b(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

// scalar-by-scalar SwiGLU evaluation
template <typename T>
yoloe::Tensor<T> swiglu(const yoloe::Tensor<T>& x, const yoloe::Tensor<T>& wg,
                        const yoloe::Tensor<T>& wu, const yoloe::Tensor<T>& wd) {
    const std::size_t c = x.dim(0), d = x.dim(1), dh = wg.dim(1);
    yoloe::Tensor<T> out({c, d});
    for (std::size_t i = 0; i < c; ++i) {
        std::vector<T> hidden(dh);
        for (std::size_t j = 0; j < dh; ++j) {
            T g = 0, u = 0;
            for (std::size_t k = 0; k < d; ++k) {
                g += x(i, k) * wg(k, j);
                u += x(i, k) * wu(k, j);
            }
            const T sig = T(1) / (T(1) + std::exp(-g));
            hidden[j] = g * sig * u;
        }
        for (std::size_t k = 0; k < d; ++k) {
            T acc = 0;
            for (std::size_t j = 0; j < dh; ++j) acc += hidden[j] * wd(j, k);
            out.at(i, k) = acc;
        }
    }
    return out;
}

template <typename T>
T bce_direct(const yoloe::Tensor<T>& logits, const yoloe::Tensor<T>& targets) {
    // direct formula via sigmoid and logs (f64 only keeps this stable)
    long double acc = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(logits.data()[i])));
        const long double t = targets.data()[i];
        acc += -(t * std::log(s) + (1 - t) * std::log(1 - s));
    }
    return static_cast<T>(acc / logits.numel());
}

template <typename T>
yoloe::Tensor<T> block_mean(const yoloe::Tensor<T>& m, int f) {
    const std::size_t ho = m.dim(0) / f, wo = m.dim(1) / f;
    yoloe::Tensor<T> out({ho, wo});
    for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
            T acc = 0;
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) acc += m(y * f + dy, x * f + dx);
            out.at(y, x) = acc / T(f * f);
        }
    return out;
}

// grouped weighted pooling by the aggregation definition, triple loop
template <typename T>
yoloe::Tensor<T> grouped_pool(const yoloe::Tensor<T>& s, const yoloe::Tensor<T>& w, int groups) {
    const std::size_t d = s.dim(0), hh = s.dim(1), ww = s.dim(2);
    const std::size_t per = d / groups;
    yoloe::Tensor<T> out({1, d});
    for (int g = 0; g < groups; ++g)
        for (std::size_t j = g * per; j < (g + 1) * per; ++j) {
            T acc = 0;
            for (std::size_t y = 0; y < hh; ++y)
                for (std::size_t x = 0; x < ww; ++x) acc += w(g, y, x) * s(j, y, x);
            out.at(std::size_t(0), j) = acc;
        }
    return out;
}

// quadratic reference NMS over decoded boxes: independently re-sorts and
// suppresses with the same strict-greater rule
struct RefBox {
    std::array<double, 4> box;
    double score;
    int id;
};

inline double iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double x0 = std::max(a[0], b[0]), y0 = std::max(a[1], b[1]);
    const double x1 = std::min(a[2], b[2]), y1 = std::min(a[3], b[3]);
    const double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0;
}

inline std::vector<int> reference_nms(std::vector<RefBox> boxes, double iou_thresh) {
    std::sort(boxes.begin(), boxes.end(), [](const RefBox& a, const RefBox& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.box < b.box;
    });
    std::vector<RefBox> kept;
    std::vector<int> ids;
    for (const auto& c : boxes) {
        bool ok = true;
        for (const auto& k : kept)
            if (iou(c.box, k.box) > iou_thresh) ok = false;
        if (ok) {
            kept.push_back(c);
            ids.push_back(c.id);
        }
    }
    return ids;
}

// helpers for random test tensors
template <typename T>
yoloe::Tensor<T> random_tensor(typename yoloe::Tensor<T>::Shape shape, yoloe::Rng& rng,
                               double lo = -1.0, double hi = 1.0) {
    yoloe::Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.raw()[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double max_abs_diff(const yoloe::Tensor<T>& a, const yoloe::Tensor<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                                 static_cast<double>(b.data()[i])));
    return m;
}

} // namespace oracle
