// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "yoloe/tensor.hpp"

namespace yoloe {

/// Named parameters with paired gradients. Gradients accumulate additively;
/// callers zero them between optimizer steps.
template <typename T>
class ParamStore {
public:
    void add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (entries_.count(name)) throw ValueError("ParamStore: duplicate parameter " + name);
        Entry e;
        e.grad = Tensor<T>(value.shape());
        e.value = std::move(value);
        e.trainable = trainable;
        entries_.emplace(name, std::move(e));
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
    const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }

    void set_value(const std::string& name, Tensor<T> v) {
        Entry& e = entry(name);
        if (!e.value.same_shape(v)) throw ShapeError("ParamStore: value shape change for " + name);
        e.value = std::move(v);
    }

    bool trainable(const std::string& name) const { return entry(name).trainable; }
    void set_trainable(const std::string& name, bool t) { entry(name).trainable = t; }

    void set_all_trainable(bool t) {
        for (auto& [k, e] : entries_) e.trainable = t;
    }

    // Marks trainable exactly the parameters matching a prefix predicate.
    void freeze_except(const std::function<bool(const std::string&)>& keep) {
        for (auto& [k, e] : entries_) e.trainable = keep(k);
    }

    void zero_grads() {
        for (auto& [k, e] : entries_) e.grad = Tensor<T>(e.value.shape());
    }

    void accumulate_grad(const std::string& name, const Tensor<T>& g) {
        Entry& e = entry(name);
        e.grad = yoloe::add(e.grad, g);
    }

    void sgd_step(T lr) {
        for (auto& [k, e] : entries_)
            if (e.trainable) e.value = yoloe::sub(e.value, yoloe::scale(e.grad, lr));
    }

    // global L2 norm over trainable gradients
    T grad_norm() const {
        T s = 0;
        for (const auto& [k, e] : entries_) {
            if (!e.trainable) continue;
            const T* p = e.grad.data();
            for (std::size_t i = 0; i < e.grad.numel(); ++i) s += p[i] * p[i];
        }
        return std::sqrt(s);
    }

    void clip_grads(T max_norm) {
        const T n = grad_norm();
        if (n <= max_norm) return;
        const T f = max_norm / n;
        for (auto& [k, e] : entries_)
            if (e.trainable) e.grad = yoloe::scale(e.grad, f);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> r;
        for (const auto& [k, e] : entries_) r.push_back(k);
        return r;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> r;
        for (const auto& [k, e] : entries_)
            if (e.trainable) r.push_back(k);
        return r;
    }

    std::size_t size() const { return entries_.size(); }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [k, e] : entries_) n += e.value.numel();
        return n;
    }

private:
    struct Entry {
        Tensor<T> value;
        Tensor<T> grad;
        bool trainable = true;
    };

    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ValueError("ParamStore: unknown parameter " + name);
        return it->second;
    }
    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ValueError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    std::map<std::string, Entry> entries_; // ordered: deterministic iteration
};

/// Reverse-mode tape over the tensor op set. Nodes are appended in execution
/// order, so the node list is already a topological order of the DAG;
/// backward() walks it once in reverse.
template <typename T>
class Tape {
public:
    using Id = int;

    Tape() = default;
    Tape(const Tape&) = delete;            // backprop closures capture this
    Tape& operator=(const Tape&) = delete;

    Id constant(Tensor<T> v) { return push(std::move(v), /*needs=*/false); }

    Id param(ParamStore<T>& store, const std::string& name) {
        auto key = std::make_pair(&store, name);
        auto it = param_ids_.find(key);
        if (it != param_ids_.end()) return it->second;
        const bool needs = store.trainable(name);
        Id id = push(store.value(name), needs);
        if (needs) {
            nodes_[id].backprop = [this, id, &store, name]() {
                store.accumulate_grad(name, nodes_[id].grad);
            };
        }
        param_ids_.emplace(std::move(key), id);
        return id;
    }

    const Tensor<T>& value(Id id) const { return nodes_.at(id).value; }
    const Tensor<T>& grad(Id id) const { return nodes_.at(id).grad; }
    bool needs_grad(Id id) const { return nodes_.at(id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    // ---- ops ------------------------------------------------------------

    Id add(Id a, Id b) {
        Id out = push(yoloe::add(value(a), value(b)), needs(a) || needs(b));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, a, b, out]() {
                scatter(a, nodes_[out].grad);
                scatter(b, nodes_[out].grad);
            };
        return out;
    }

    Id mul(Id a, Id b) {
        Id out = push(yoloe::mul(value(a), value(b)), needs(a) || needs(b));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, a, b, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                if (needs(a)) scatter(a, yoloe::mul(g, value(b)));
                if (needs(b)) scatter(b, yoloe::mul(g, value(a)));
            };
        return out;
    }

    Id scale(Id a, T s) {
        Id out = push(yoloe::scale(value(a), s), needs(a));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, a, s, out]() {
                scatter(a, yoloe::scale(nodes_[out].grad, s));
            };
        return out;
    }

    Id silu(Id x) {
        Id out = push(yoloe::silu(value(x)), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                const Tensor<T>& vx = value(x);
                Tensor<T> dx(vx.shape());
                T* d = dx.raw();
                const T *pg = g.data(), *px = vx.data();
                for (std::size_t i = 0; i < vx.numel(); ++i) {
                    const T s = sigmoid_scalar(px[i]);
                    d[i] = pg[i] * s * (T(1) + px[i] * (T(1) - s));
                }
                scatter(x, dx);
            };
        return out;
    }

    Id sigmoid(Id x) {
        Id out = push(yoloe::sigmoid(value(x)), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                const Tensor<T>& y = value(out);
                Tensor<T> dx(y.shape());
                T* d = dx.raw();
                const T *pg = g.data(), *py = y.data();
                for (std::size_t i = 0; i < y.numel(); ++i)
                    d[i] = pg[i] * py[i] * (T(1) - py[i]);
                scatter(x, dx);
            };
        return out;
    }

    Id matmul(Id a, Id b) {
        Id out = push(yoloe::matmul(value(a), value(b)), needs(a) || needs(b));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, a, b, out]() {
                const Tensor<T>& g = nodes_[out].grad; // MxP
                if (needs(a)) scatter(a, yoloe::matmul_nt(g, value(b)));            // g * b^T
                if (needs(b)) scatter(b, yoloe::matmul(transpose2d(value(a)), g));  // a^T * g
            };
        return out;
    }

    // a (MxK) * b^T with b (PxK) -> MxP
    Id matmul_nt(Id a, Id b) {
        Id out = push(yoloe::matmul_nt(value(a), value(b)), needs(a) || needs(b));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, a, b, out]() {
                const Tensor<T>& g = nodes_[out].grad; // MxP
                if (needs(a)) scatter(a, yoloe::matmul(g, value(b)));                // g * b
                if (needs(b)) scatter(b, yoloe::matmul(transpose2d(g), value(a)));   // g^T * a
            };
        return out;
    }

    Id conv2d(Id x, Id k, int stride, int padding) {
        Id out = push(yoloe::conv2d(value(x), value(k), stride, padding), needs(x) || needs(k));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, k, stride, padding, out]() {
                conv2d_backward(x, k, stride, padding, out);
            };
        return out;
    }

    Id add_bias(Id x, Id b) {
        Id out = push(yoloe::add_bias_channels(value(x), value(b)), needs(x) || needs(b));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, b, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                if (needs(x)) scatter(x, g);
                if (needs(b)) {
                    const std::size_t C = g.dim(0), HW = g.dim(1) * g.dim(2);
                    Tensor<T> db({C});
                    T* d = db.raw();
                    const T* pg = g.data();
                    for (std::size_t c = 0; c < C; ++c) {
                        T s = 0;
                        for (std::size_t i = 0; i < HW; ++i) s += pg[c * HW + i];
                        d[c] = s;
                    }
                    scatter(b, db);
                }
            };
        return out;
    }

    Id l2_normalize_rows(Id x, T eps = T(kL2NormEps)) {
        Id out = push(yoloe::l2_normalize_rows(value(x), eps), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, eps, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                const Tensor<T>& vx = value(x);
                const Tensor<T>& y = value(out);
                const std::size_t C = vx.dim(0), D = vx.dim(1);
                Tensor<T> dx(vx.shape());
                T* d = dx.raw();
                const T *pg = g.data(), *px = vx.data(), *py = y.data();
                for (std::size_t c = 0; c < C; ++c) {
                    T norm2 = 0;
                    for (std::size_t j = 0; j < D; ++j) norm2 += px[c * D + j] * px[c * D + j];
                    const T r = std::sqrt(norm2);
                    if (r > eps) {
                        T dot = 0;
                        for (std::size_t j = 0; j < D; ++j) dot += pg[c * D + j] * py[c * D + j];
                        for (std::size_t j = 0; j < D; ++j)
                            d[c * D + j] = (pg[c * D + j] - py[c * D + j] * dot) / r;
                    } else {
                        for (std::size_t j = 0; j < D; ++j) d[c * D + j] = pg[c * D + j] / eps;
                    }
                }
                scatter(x, dx);
            };
        return out;
    }

    Id masked_softmax(Id logits, Tensor<T> region) {
        Id out = push(yoloe::masked_softmax(value(logits), region), needs(logits));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, logits, region = std::move(region), out]() {
                const Tensor<T>& g = nodes_[out].grad;
                const Tensor<T>& y = value(out);
                const std::size_t A = y.dim(0), HW = region.numel();
                Tensor<T> dx(y.shape());
                T* d = dx.raw();
                const T *pg = g.data(), *py = y.data(), *pr = region.data();
                for (std::size_t a = 0; a < A; ++a) {
                    T s = 0;
                    for (std::size_t i = 0; i < HW; ++i)
                        if (pr[i] != T(0)) s += pg[a * HW + i] * py[a * HW + i];
                    for (std::size_t i = 0; i < HW; ++i)
                        d[a * HW + i] = pr[i] != T(0) ? py[a * HW + i] * (pg[a * HW + i] - s) : T(0);
                }
                scatter(logits, dx);
            };
        return out;
    }

    Id upsample_nearest(Id x, int factor) {
        Id out = push(yoloe::upsample_nearest(value(x), factor), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, factor, out]() {
                const Tensor<T>& g = nodes_[out].grad;
                const Tensor<T>& vx = value(x);
                const std::size_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
                const std::size_t f = factor;
                Tensor<T> dx(vx.shape());
                T* d = dx.raw();
                const T* pg = g.data();
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t y = 0; y < H * f; ++y)
                        for (std::size_t xx = 0; xx < W * f; ++xx)
                            d[(c * H + y / f) * W + xx / f] += pg[(c * H * f + y) * W * f + xx];
                scatter(x, dx);
            };
        return out;
    }

    Id concat0(std::vector<Id> xs) {
        std::vector<Tensor<T>> vals;
        bool any = false;
        for (Id i : xs) {
            vals.push_back(value(i));
            any = any || needs(i);
        }
        Id out = push(yoloe::concat(vals, 0), any);
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, xs = std::move(xs), out]() {
                const Tensor<T>& g = nodes_[out].grad;
                std::size_t inner = 1;
                for (std::size_t i = 1; i < g.rank(); ++i) inner *= g.dim(i);
                std::size_t offset = 0;
                for (Id xid : xs) {
                    const Tensor<T>& vx = value(xid);
                    const std::size_t blk = vx.dim(0) * inner;
                    if (needs(xid)) {
                        Tensor<T> dx(vx.shape());
                        std::copy(g.data() + offset, g.data() + offset + blk, dx.raw());
                        scatter(xid, dx);
                    }
                    offset += blk;
                }
            };
        return out;
    }

    Id chw_to_rows(Id x) {
        Id out = push(yoloe::chw_to_rows(value(x)), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, out]() {
                const Tensor<T>& g = nodes_[out].grad; // HW x C
                const Tensor<T>& vx = value(x);
                const std::size_t C = vx.dim(0), HW = vx.dim(1) * vx.dim(2);
                Tensor<T> dx(vx.shape());
                T* d = dx.raw();
                const T* pg = g.data();
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < HW; ++i) d[c * HW + i] = pg[i * C + c];
                scatter(x, dx);
            };
        return out;
    }

    Id reshape(Id x, typename Tensor<T>::Shape shape) {
        Id out = push(value(x).reshaped(shape).clone(), needs(x));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, x, out]() {
                scatter(x, nodes_[out].grad.reshaped(value(x).shape()).clone());
            };
        return out;
    }

    // Grouped weighted pooling: S is DxHxW, W is AxHxW with D divisible by A.
    // Channel j of the output pools S[j] with weight channel j*A/D.
    Id savpe_aggregate(Id s, Id w, int groups) {
        const Tensor<T>& vs = value(s);
        const Tensor<T>& vw = value(w);
        Id out = push(savpe_aggregate_eval(vs, vw, groups), needs(s) || needs(w));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, s, w, groups, out]() {
                const Tensor<T>& g = nodes_[out].grad; // 1xD
                const Tensor<T>& vs = value(s);
                const Tensor<T>& vw = value(w);
                const std::size_t D = vs.dim(0), HW = vs.dim(1) * vs.dim(2);
                const std::size_t per = D / groups;
                const T *pg = g.data(), *ps = vs.data(), *pw = vw.data();
                if (needs(s)) {
                    Tensor<T> ds(vs.shape());
                    T* d = ds.raw();
                    for (std::size_t j = 0; j < D; ++j) {
                        const std::size_t a = j / per;
                        for (std::size_t i = 0; i < HW; ++i) d[j * HW + i] = pg[j] * pw[a * HW + i];
                    }
                    scatter(s, ds);
                }
                if (needs(w)) {
                    Tensor<T> dw(vw.shape());
                    T* d = dw.raw();
                    for (std::size_t j = 0; j < D; ++j) {
                        const std::size_t a = j / per;
                        for (std::size_t i = 0; i < HW; ++i) d[a * HW + i] += pg[j] * ps[j * HW + i];
                    }
                    scatter(w, dw);
                }
            };
        return out;
    }

    // mean over all elements of the stable BCE-with-logits form; scalar output
    Id bce_with_logits_mean(Id logits, Tensor<T> targets) {
        Tensor<T> elems = yoloe::bce_with_logits(value(logits), targets);
        Tensor<T> loss({1});
        loss.at(std::size_t(0)) = yoloe::sum(elems) / T(elems.numel());
        Id out = push(std::move(loss), needs(logits));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, logits, targets = std::move(targets), out]() {
                const T g = nodes_[out].grad(std::size_t(0));
                const Tensor<T>& vx = value(logits);
                Tensor<T> dx(vx.shape());
                T* d = dx.raw();
                const T *px = vx.data(), *pt = targets.data();
                const T inv = g / T(vx.numel());
                for (std::size_t i = 0; i < vx.numel(); ++i)
                    d[i] = (sigmoid_scalar(px[i]) - pt[i]) * inv;
                scatter(logits, dx);
            };
        return out;
    }

    // L1 over rows selected by rowmask (N), averaged over selected coordinates
    Id l1_rows_mean(Id pred, Tensor<T> target, Tensor<T> rowmask) {
        const Tensor<T>& vp = value(pred);
        if (!vp.same_shape(target) || vp.dim(0) != rowmask.dim(0))
            throw ShapeError("l1_rows_mean: shape mismatch");
        const std::size_t N = vp.dim(0), K = vp.dim(1);
        std::size_t npos = 0;
        for (std::size_t n = 0; n < N; ++n)
            if (rowmask(n) != T(0)) ++npos;
        const T denom = T(std::max<std::size_t>(1, npos * K));
        Tensor<T> loss({1});
        T s = 0;
        for (std::size_t n = 0; n < N; ++n)
            if (rowmask(n) != T(0))
                for (std::size_t j = 0; j < K; ++j) s += std::abs(vp(n, j) - target(n, j));
        loss.at(std::size_t(0)) = s / denom;
        Id out = push(std::move(loss), needs(pred));
        if (nodes_[out].needs_grad)
            nodes_[out].backprop = [this, pred, target = std::move(target),
                                    rowmask = std::move(rowmask), denom, out]() {
                const T g = nodes_[out].grad(std::size_t(0));
                const Tensor<T>& vp = value(pred);
                const std::size_t N = vp.dim(0), K = vp.dim(1);
                Tensor<T> dx(vp.shape());
                T* d = dx.raw();
                for (std::size_t n = 0; n < N; ++n) {
                    if (rowmask(n) == T(0)) continue;
                    for (std::size_t j = 0; j < K; ++j) {
                        const T diff = vp(n, j) - target(n, j);
                        d[n * K + j] = (diff > T(0) ? g : diff < T(0) ? -g : T(0)) / denom;
                    }
                }
                scatter(pred, dx);
            };
        return out;
    }

    // ---- backward --------------------------------------------------------

    void backward(Id loss) {
        if (value(loss).numel() != 1) throw ValueError("backward: loss must be scalar");
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad = Tensor<T>(n.value.shape());
        // a fully frozen graph has nothing to propagate but is not an error
        if (!nodes_[loss].needs_grad) return;
        nodes_[loss].grad.at(std::size_t(0)) = T(1);
        for (Id i = loss; i >= 0; --i)
            if (nodes_[i].needs_grad && nodes_[i].backprop) nodes_[i].backprop();
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::function<void()> backprop; // for leaves: flush into the ParamStore
    };

    bool needs(Id id) const { return nodes_[id].needs_grad; }

    Id push(Tensor<T> v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    void scatter(Id target, const Tensor<T>& g) {
        if (!nodes_[target].needs_grad) return;
        nodes_[target].grad = yoloe::add(nodes_[target].grad, g);
    }

    static Tensor<T> transpose2d(const Tensor<T>& x) {
        const std::size_t M = x.dim(0), N = x.dim(1);
        Tensor<T> out({N, M});
        T* o = out.raw();
        const T* p = x.data();
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) o[n * M + m] = p[m * N + n];
        return out;
    }

    static Tensor<T> savpe_aggregate_eval(const Tensor<T>& s, const Tensor<T>& w, int groups) {
        if (s.rank() != 3 || w.rank() != 3) throw ShapeError("savpe_aggregate: DxHxW and AxHxW");
        if (s.dim(1) != w.dim(1) || s.dim(2) != w.dim(2))
            throw ShapeError("savpe_aggregate: spatial dims mismatch");
        const std::size_t D = s.dim(0);
        if (groups < 1 || D % static_cast<std::size_t>(groups) != 0 ||
            w.dim(0) != static_cast<std::size_t>(groups))
            throw ShapeError("savpe_aggregate: channel count not divisible by group count");
        const std::size_t HW = s.dim(1) * s.dim(2), per = D / groups;
        Tensor<T> out({1, D});
        T* o = out.raw();
        const T *ps = s.data(), *pw = w.data();
        for (std::size_t j = 0; j < D; ++j) {
            const std::size_t a = j / per;
            T acc = 0;
            for (std::size_t i = 0; i < HW; ++i) acc += pw[a * HW + i] * ps[j * HW + i];
            o[j] = acc;
        }
        detail::ensure_finite(out, "savpe_aggregate");
        return out;
    }

    void conv2d_backward(Id x, Id k, int stride, int padding, Id out) {
        const Tensor<T>& g = nodes_[out].grad;
        const Tensor<T>& vx = value(x);
        const Tensor<T>& vk = value(k);
        const std::size_t Cin = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
        const std::size_t Cout = vk.dim(0), ks = vk.dim(2);
        const std::size_t Ho = g.dim(1), Wo = g.dim(2);
        const bool nx = needs(x), nk = needs(k);
        Tensor<T> dx(nx ? vx.shape() : typename Tensor<T>::Shape{1});
        Tensor<T> dk(nk ? vk.shape() : typename Tensor<T>::Shape{1});
        T* pdx = dx.raw();
        T* pdk = dk.raw();
        const T *pg = g.data(), *px = vx.data(), *pk = vk.data();
        for (std::size_t co = 0; co < Cout; ++co) {
            const T* gplane = pg + co * Ho * Wo;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const T gv = gplane[oy * Wo + ox];
                    if (gv == T(0)) continue;
                    for (std::size_t ky = 0; ky < ks; ++ky) {
                        const long iy = static_cast<long>(oy) * stride - padding + ky;
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        for (std::size_t kx = 0; kx < ks; ++kx) {
                            const long ix = static_cast<long>(ox) * stride - padding + kx;
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            for (std::size_t ci = 0; ci < Cin; ++ci) {
                                const std::size_t xi = (ci * H + iy) * W + ix;
                                const std::size_t kidx = ((co * Cin + ci) * ks + ky) * ks + kx;
                                if (nk) pdk[kidx] += gv * px[xi];
                                if (nx) pdx[xi] += gv * pk[kidx];
                            }
                        }
                    }
                }
            }
        }
        if (nx) scatter(x, dx);
        if (nk) scatter(k, dk);
    }

    std::vector<Node> nodes_;
    std::map<std::pair<const void*, std::string>, Id> param_ids_;
};

// ---------------------------------------------------------------------------
// execution contexts: model code is written once against this interface and
// runs either eagerly (plain tensors) or on a tape (recorded for backward)

template <typename T>
struct EagerCtx {
    using H = Tensor<T>;
    const ParamStore<T>* params = nullptr;

    H param(const std::string& name) { return params->value(name); }
    H constant(Tensor<T> v) { return v; }
    const Tensor<T>& val(const H& h) const { return h; }

    H add(const H& a, const H& b) { return yoloe::add(a, b); }
    H mul(const H& a, const H& b) { return yoloe::mul(a, b); }
    H scale(const H& a, T s) { return yoloe::scale(a, s); }
    H silu(const H& x) { return yoloe::silu(x); }
    H sigmoid(const H& x) { return yoloe::sigmoid(x); }
    H matmul(const H& a, const H& b) { return yoloe::matmul(a, b); }
    H matmul_nt(const H& a, const H& b) { return yoloe::matmul_nt(a, b); }
    H conv2d(const H& x, const H& k, int s, int p) { return yoloe::conv2d(x, k, s, p); }
    H add_bias(const H& x, const H& b) { return yoloe::add_bias_channels(x, b); }
    H l2_normalize_rows(const H& x) { return yoloe::l2_normalize_rows(x); }
    H masked_softmax(const H& x, const Tensor<T>& region) { return yoloe::masked_softmax(x, region); }
    H upsample_nearest(const H& x, int f) { return yoloe::upsample_nearest(x, f); }
    H concat0(const std::vector<H>& xs) { return yoloe::concat(xs, 0); }
    H chw_to_rows(const H& x) { return yoloe::chw_to_rows(x); }
    H savpe_aggregate(const H& s, const H& w, int groups);
};

template <typename T>
struct TapeCtx {
    using H = typename Tape<T>::Id;
    Tape<T>* tape = nullptr;
    ParamStore<T>* params = nullptr;

    H param(const std::string& name) { return tape->param(*params, name); }
    H constant(Tensor<T> v) { return tape->constant(std::move(v)); }
    const Tensor<T>& val(H h) const { return tape->value(h); }

    H add(H a, H b) { return tape->add(a, b); }
    H mul(H a, H b) { return tape->mul(a, b); }
    H scale(H a, T s) { return tape->scale(a, s); }
    H silu(H x) { return tape->silu(x); }
    H sigmoid(H x) { return tape->sigmoid(x); }
    H matmul(H a, H b) { return tape->matmul(a, b); }
    H matmul_nt(H a, H b) { return tape->matmul_nt(a, b); }
    H conv2d(H x, H k, int s, int p) { return tape->conv2d(x, k, s, p); }
    H add_bias(H x, H b) { return tape->add_bias(x, b); }
    H l2_normalize_rows(H x) { return tape->l2_normalize_rows(x); }
    H masked_softmax(H x, const Tensor<T>& region) { return tape->masked_softmax(x, region); }
    H upsample_nearest(H x, int f) { return tape->upsample_nearest(x, f); }
    H concat0(const std::vector<H>& xs) { return tape->concat0(xs); }
    H chw_to_rows(H x) { return tape->chw_to_rows(x); }
    H savpe_aggregate(H s, H w, int groups) { return tape->savpe_aggregate(s, w, groups); }
};

// Eager savpe_aggregate reuses the tape's evaluation through a tiny detour:
// run it on a throwaway tape with constants.
template <typename T>
typename EagerCtx<T>::H EagerCtx<T>::savpe_aggregate(const H& s, const H& w, int groups) {
    Tape<T> t;
    return t.value(t.savpe_aggregate(t.constant(s), t.constant(w), groups)).clone();
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking (f64)

template <typename T>
struct GradCheckResult {
    std::map<std::string, T> per_param; // max relative error
    T max_error = 0;
    std::size_t checked_elements = 0;
};

/// lossFn(params, with_grad): returns the scalar loss; when with_grad is set
/// it must also accumulate analytic gradients into the store. Central
/// differences with step eps; relative error uses max(|a|,|n|,1e-8).
/// max_elems_per_param < 0 checks every element, otherwise a deterministic
/// random subset per parameter.
template <typename T>
GradCheckResult<T> grad_check(const std::function<T(ParamStore<T>&, bool)>& lossFn,
                              ParamStore<T>& params, T eps = T(1e-5),
                              long max_elems_per_param = -1, std::uint64_t seed = 1) {
    static_assert(std::is_same_v<T, double>, "grad_check requires f64 mode");
    const T l0 = lossFn(params, false);
    const T l1 = lossFn(params, false);
    if (l0 != l1) throw ValueError("grad_check: loss function is not deterministic");

    params.zero_grads();
    lossFn(params, true);

    GradCheckResult<T> res;
    Rng rng(seed);
    for (const auto& name : params.trainable_names()) {
        const Tensor<T> v = params.value(name);
        const Tensor<T> g = params.grad(name);
        std::vector<std::size_t> idx;
        if (max_elems_per_param < 0 ||
            v.numel() <= static_cast<std::size_t>(max_elems_per_param)) {
            idx.resize(v.numel());
            for (std::size_t i = 0; i < v.numel(); ++i) idx[i] = i;
        } else {
            for (long i = 0; i < max_elems_per_param; ++i)
                idx.push_back(static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(v.numel()) - 1)));
        }
        T worst = 0;
        for (std::size_t i : idx) {
            Tensor<T> vp = v.clone();
            vp.at(i) = v(i) + eps;
            params.set_value(name, vp);
            const T lp = lossFn(params, false);
            vp = v.clone();
            vp.at(i) = v(i) - eps;
            params.set_value(name, vp);
            const T lm = lossFn(params, false);
            params.set_value(name, v.clone());
            const T numeric = (lp - lm) / (2 * eps);
            const T analytic = g(i);
            const T denom = std::max({std::abs(analytic), std::abs(numeric), T(1e-8)});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
            ++res.checked_elements;
        }
        res.per_param[name] = worst;
        res.max_error = std::max(res.max_error, worst);
    }
    return res;
}

} // namespace yoloe
