// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <vector>

#include "yoloe/common.hpp"

namespace yoloe {

enum class Dtype { f32, f64 };

template <typename T>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

/// Dense row-major tensor. The buffer is shared on copy and is never written
/// after the constructing operation returns, so concurrent reads are safe.
template <typename T>
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() : data_(std::make_shared<std::vector<T>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(numel_of(shape_), T(0))) {
        check_shape(shape_);
    }

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(data))) {
        check_shape(shape_);
        if (numel_of(shape_) != data_->size())
            throw ShapeError("tensor data length does not match shape");
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static constexpr Dtype dtype() { return dtype_of<T>(); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_->size(); }
    bool empty() const { return data_->empty(); }

    const T* data() const { return data_->data(); }
    const std::vector<T>& vec() const { return *data_; }

    // Construction-time mutable access. Must not be called once the tensor
    // has been published (copied or returned from a public operation).
    T* raw() { return data_->data(); }

    T operator()(std::size_t i) const { return (*data_)[i]; }
    T operator()(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }
    T operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return (*data_)[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    T& at(std::size_t i) { return (*data_)[i]; }
    T& at(std::size_t i, std::size_t j) { return (*data_)[i * shape_[1] + j]; }
    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }
    T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return (*data_)[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    Tensor clone() const { return Tensor(shape_, *data_); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Shares the buffer; only the shape changes.
    Tensor reshaped(Shape shape) const {
        if (numel_of(shape) != numel()) throw ShapeError("reshape changes element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    static std::size_t numel_of(const Shape& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t(1), std::multiplies<>());
    }

private:
    static void check_shape(const Shape& s) {
        for (std::size_t d : s)
            if (d == 0) throw ShapeError("zero dimension in tensor shape");
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
};

namespace detail {

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
    const T* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(p[i])) {
            std::ostringstream os;
            os << op << ": non-finite value at flat index " << i;
            throw ValueError(os.str());
        }
    }
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
    return r + "]";
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Tensor<T> out(a.shape());
    T* o = out.raw();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + pb[i];
    detail::ensure_finite(out, "add");
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
    Tensor<T> out(a.shape());
    T* o = out.raw();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] - pb[i];
    detail::ensure_finite(out, "sub");
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("mul: shape mismatch");
    Tensor<T> out(a.shape());
    T* o = out.raw();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] * pb[i];
    detail::ensure_finite(out, "mul");
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    T* o = out.raw();
    const T* pa = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] * s;
    detail::ensure_finite(out, "scale");
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    T* o = out.raw();
    const T* p = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = sigmoid_scalar(p[i]);
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    T* o = out.raw();
    const T* p = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = p[i] * sigmoid_scalar(p[i]);
    detail::ensure_finite(out, "silu");
    return out;
}

// Kahan-compensated: loss reductions feed finite-difference checks, where
// plain accumulation noise would eat the tolerance.
template <typename T>
T sum(const Tensor<T>& x) {
    T s = 0, comp = 0;
    const T* p = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T y = p[i] - comp;
        const T t = s + y;
        comp = (t - s) - y;
        s = t;
    }
    return s;
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 tensors required");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
    const std::size_t M = a.dim(0), K = a.dim(1), P = b.dim(1);
    Tensor<T> out({M, P});
    T* o = out.raw();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t m = 0; m < M; ++m) {
        T* orow = o + m * P;
        for (std::size_t k = 0; k < K; ++k) {
            const T amk = pa[m * K + k];
            const T* brow = pb + k * P;
            for (std::size_t p = 0; p < P; ++p) orow[p] += amk * brow[p];
        }
    }
    detail::ensure_finite(out, "matmul");
    return out;
}

// a (M x K) times b^T where b is (P x K); returns M x P
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul_nt: rank-2 tensors required");
    if (a.dim(1) != b.dim(1)) throw ShapeError("matmul_nt: inner dimensions disagree");
    const std::size_t M = a.dim(0), K = a.dim(1), P = b.dim(0);
    Tensor<T> out({M, P});
    T* o = out.raw();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t m = 0; m < M; ++m) {
        const T* arow = pa + m * K;
        for (std::size_t p = 0; p < P; ++p) {
            const T* brow = pb + p * K;
            T acc = 0;
            for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            o[m * P + p] = acc;
        }
    }
    detail::ensure_finite(out, "matmul_nt");
    return out;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation, no kernel flip, no implicit bias)

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int stride, int padding) {
    if (x.rank() != 3 || k.rank() != 4) throw ShapeError("conv2d: input CxHxW, kernel OxIxKxK");
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Cout = k.dim(0), ks = k.dim(2);
    if (k.dim(1) != Cin) throw ShapeError("conv2d: kernel input channels do not match input");
    if (k.dim(3) != ks || (ks != 1 && ks != 3)) throw ShapeError("conv2d: kernel must be 1x1 or 3x3");
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
    if (padding < 0) throw ShapeError("conv2d: negative padding");
    // floor division, the usual convention: a 3x3 stride-2 downsample on an
    // even side has no exact-divisibility option at all
    const long hnum = static_cast<long>(H) + 2 * padding - static_cast<long>(ks);
    const long wnum = static_cast<long>(W) + 2 * padding - static_cast<long>(ks);
    if (hnum < 0 || wnum < 0) throw ShapeError("conv2d: non-integral output size");
    const std::size_t Ho = static_cast<std::size_t>(hnum / stride) + 1;
    const std::size_t Wo = static_cast<std::size_t>(wnum / stride) + 1;

    Tensor<T> out({Cout, Ho, Wo});
    T* o = out.raw();
    const T *px = x.data(), *pk = k.data();
    for (std::size_t co = 0; co < Cout; ++co) {
        T* oplane = o + co * Ho * Wo;
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T* xplane = px + ci * H * W;
            for (std::size_t ky = 0; ky < ks; ++ky) {
                for (std::size_t kx = 0; kx < ks; ++kx) {
                    const T w = pk[((co * Cin + ci) * ks + ky) * ks + kx];
                    if (w == T(0)) continue;
                    // output range where the tap lands inside the input
                    const long offy = static_cast<long>(ky) - padding;
                    const long offx = static_cast<long>(kx) - padding;
                    std::size_t oy0 = 0, ox0 = 0;
                    if (offy < 0) oy0 = static_cast<std::size_t>((-offy + stride - 1) / stride);
                    if (offx < 0) ox0 = static_cast<std::size_t>((-offx + stride - 1) / stride);
                    std::size_t oy1 = Ho, ox1 = Wo;
                    {
                        const long maxy = static_cast<long>(H) - 1 - offy;
                        const long maxx = static_cast<long>(W) - 1 - offx;
                        if (maxy < 0 || maxx < 0) continue;
                        oy1 = std::min<std::size_t>(Ho, static_cast<std::size_t>(maxy / stride) + 1);
                        ox1 = std::min<std::size_t>(Wo, static_cast<std::size_t>(maxx / stride) + 1);
                    }
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const std::size_t iy = oy * stride + offy;
                        const T* xrow = xplane + iy * W;
                        T* orow = oplane + oy * Wo;
                        if (stride == 1) {
                            const T* xr = xrow + offx + ox0;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += w * xr[ox - ox0];
                        } else {
                            for (std::size_t ox = ox0; ox < ox1; ++ox)
                                orow[ox] += w * xrow[ox * 2 + offx];
                        }
                    }
                }
            }
        }
    }
    detail::ensure_finite(out, "conv2d");
    return out;
}

// x: CxHxW plus per-channel bias
template <typename T>
Tensor<T> add_bias_channels(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
        throw ShapeError("add_bias_channels: bias length must equal channel count");
    Tensor<T> out(x.shape());
    T* o = out.raw();
    const T *px = x.data(), *pb = b.data();
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) o[c * HW + i] = px[c * HW + i] + pb[c];
    detail::ensure_finite(out, "add_bias_channels");
    return out;
}

// ---------------------------------------------------------------------------
// softmax within a spatial region

// logits: AxHxW, region: HxW with nonzero marking membership. Out-of-region
// outputs are exactly zero; each channel sums to one over the region.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& logits, const Tensor<T>& region) {
    if (logits.rank() != 3 || region.rank() != 2) throw ShapeError("masked_softmax: AxHxW and HxW");
    if (logits.dim(1) != region.dim(0) || logits.dim(2) != region.dim(1))
        throw ShapeError("masked_softmax: spatial dims mismatch");
    const std::size_t A = logits.dim(0), HW = region.numel();
    const T* pr = region.data();
    bool any = false;
    for (std::size_t i = 0; i < HW; ++i)
        if (pr[i] != T(0)) { any = true; break; }
    if (!any) throw ValueError("masked_softmax: empty region");

    Tensor<T> out(logits.shape());
    T* o = out.raw();
    const T* pl = logits.data();
    for (std::size_t a = 0; a < A; ++a) {
        const T* lrow = pl + a * HW;
        T* orow = o + a * HW;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < HW; ++i)
            if (pr[i] != T(0)) m = std::max(m, lrow[i]);
        T z = 0;
        for (std::size_t i = 0; i < HW; ++i) {
            if (pr[i] != T(0)) {
                const T e = std::exp(lrow[i] - m);
                orow[i] = e;
                z += e;
            } else {
                orow[i] = T(0);
            }
        }
        for (std::size_t i = 0; i < HW; ++i)
            if (pr[i] != T(0)) orow[i] /= z;
    }
    detail::ensure_finite(out, "masked_softmax");
    return out;
}

// ---------------------------------------------------------------------------
// row normalization

inline constexpr double kL2NormEps = 1e-12;

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps = T(kL2NormEps)) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows: rank-2 tensor required");
    if (!(eps > T(0))) throw ValueError("l2_normalize_rows: eps must be positive");
    const std::size_t C = x.dim(0), D = x.dim(1);
    Tensor<T> out(x.shape());
    T* o = out.raw();
    const T* p = x.data();
    for (std::size_t c = 0; c < C; ++c) {
        const T* row = p + c * D;
        T s = 0;
        for (std::size_t d = 0; d < D; ++d) s += row[d] * row[d];
        const T denom = std::max(std::sqrt(s), eps);
        for (std::size_t d = 0; d < D; ++d) o[c * D + d] = row[d] / denom;
    }
    detail::ensure_finite(out, "l2_normalize_rows");
    return out;
}

// ---------------------------------------------------------------------------
// SwiGLU feed-forward: (silu(x Wg) * (x Wu)) Wd

template <typename T>
Tensor<T> swiglu_ffn(const Tensor<T>& x, const Tensor<T>& wg, const Tensor<T>& wu,
                     const Tensor<T>& wd) {
    return matmul(mul(silu(matmul(x, wg)), matmul(x, wu)), wd);
}

// ---------------------------------------------------------------------------
// resampling and concatenation

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest: CxHxW required");
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), f = factor;
    Tensor<T> out({C, H * f, W * f});
    T* o = out.raw();
    const T* p = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H * f; ++y) {
            const T* srow = p + (c * H + y / f) * W;
            T* orow = o + (c * H * f + y) * W * f;
            for (std::size_t xo = 0; xo < W * f; ++xo) orow[xo] = srow[xo / f];
        }
    return out;
}

// Non-overlapping block mean of an HxW map.
template <typename T>
Tensor<T> avg_downsample(const Tensor<T>& m, int factor) {
    if (m.rank() != 2) throw ShapeError("avg_downsample: HxW required");
    if (factor < 1) throw ShapeError("avg_downsample: factor must be >= 1");
    const std::size_t H = m.dim(0), W = m.dim(1), f = factor;
    if (H % f != 0 || W % f != 0) throw ShapeError("avg_downsample: factor does not divide dims");
    const std::size_t Ho = H / f, Wo = W / f;
    Tensor<T> out({Ho, Wo});
    T* o = out.raw();
    const T* p = m.data();
    const T inv = T(1) / T(f * f);
    for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
            T s = 0;
            for (std::size_t dy = 0; dy < f; ++dy)
                for (std::size_t dx = 0; dx < f; ++dx) s += p[(y * f + dy) * W + (x * f + dx)];
            o[y * Wo + x] = s * inv;
        }
    detail::ensure_finite(out, "avg_downsample");
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat: no tensors");
    const std::size_t rank = xs[0].rank();
    if (axis >= rank) throw ShapeError("concat: axis out of range");
    std::size_t axis_total = 0;
    for (const auto& t : xs) {
        if (t.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < rank; ++i)
            if (i != axis && t.dim(i) != xs[0].dim(i)) throw ShapeError("concat: dim mismatch");
        axis_total += t.dim(axis);
    }
    auto shape = xs[0].shape();
    shape[axis] = axis_total;
    Tensor<T> out(shape);

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < rank; ++i) inner *= shape[i];

    T* o = out.raw();
    const std::size_t out_block = axis_total * inner;
    std::size_t written = 0;
    for (const auto& t : xs) {
        const std::size_t blk = t.dim(axis) * inner;
        const T* p = t.data();
        for (std::size_t u = 0; u < outer; ++u)
            std::copy(p + u * blk, p + (u + 1) * blk, o + u * out_block + written);
        written += blk;
    }
    return out;
}

// CxHxW -> (H*W)xC, rows in row-major spatial order
template <typename T>
Tensor<T> chw_to_rows(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("chw_to_rows: CxHxW required");
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor<T> out({HW, C});
    T* o = out.raw();
    const T* p = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) o[i * C + c] = p[c * HW + i];
    return out;
}

// ---------------------------------------------------------------------------
// binary cross entropy with logits (stable form), elementwise

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (!logits.same_shape(targets)) throw ShapeError("bce_with_logits: shape mismatch");
    const T* pt = targets.data();
    for (std::size_t i = 0; i < targets.numel(); ++i)
        if (pt[i] != T(0) && pt[i] != T(1))
            throw ValueError("bce_with_logits: targets must be exactly 0 or 1");
    Tensor<T> out(logits.shape());
    T* o = out.raw();
    const T* px = logits.data();
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const T x = px[i], t = pt[i];
        o[i] = std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    detail::ensure_finite(out, "bce_with_logits");
    return out;
}

} // namespace yoloe
