// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include "yoloe/reprta.hpp"
#include "yoloe/savpe.hpp"

namespace yoloe {

// ---------------------------------------------------------------------------
// toy ontology: colored shapes, separable by color and silhouette

struct ToyClass {
    const char* name;
    std::array<double, 3> color; // r, g, b
    int shape;                   // 0 rect, 1 disk, 2 wedge
};

inline const std::vector<ToyClass>& toy_ontology() {
    static const std::vector<ToyClass> classes{
        {"red_box", {0.95, 0.15, 0.15}, 0},   {"green_disk", {0.15, 0.90, 0.20}, 1},
        {"blue_wedge", {0.15, 0.25, 0.95}, 2}, {"yellow_box", {0.95, 0.90, 0.15}, 0},
        {"magenta_disk", {0.90, 0.15, 0.90}, 1}, {"cyan_wedge", {0.10, 0.90, 0.90}, 2},
    };
    return classes;
}

inline std::vector<std::string> toy_class_names(int num_classes) {
    const auto& ont = toy_ontology();
    if (num_classes < 1 || num_classes > static_cast<int>(ont.size()))
        throw ValueError("toy ontology has " + std::to_string(ont.size()) + " classes");
    std::vector<std::string> names;
    for (int i = 0; i < num_classes; ++i) names.push_back(ont[i].name);
    return names;
}

/// Deterministic per-name unit embeddings standing in for cached text-encoder
/// output. Seeded by the name itself so vocabularies compose stably. Rows are
/// drawn from a shared cone (a common mean direction plus a per-name
/// deviation), matching the anisotropy of real text encoders; with isotropic
/// rows no embedding could be simultaneously anti-aligned with every negative
/// and training against a broad vocabulary would be ill-posed.
inline constexpr double kToyTextConeSpread = 0.75;

template <typename T>
CachedTextEmbeddings<T> gen_toy_text_embeddings(const std::vector<std::string>& names, int dim,
                                                std::uint64_t seed) {
    std::vector<double> mean(dim);
    {
        Rng rng(seed ^ fnv1a("::cone_mean::"));
        double norm = 0;
        for (int d = 0; d < dim; ++d) {
            mean[d] = rng.normal();
            norm += mean[d] * mean[d];
        }
        norm = std::sqrt(norm);
        for (int d = 0; d < dim; ++d) mean[d] /= norm;
    }
    Tensor<T> rows({names.size(), static_cast<std::size_t>(dim)});
    T* p = rows.raw();
    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < names.size(); ++i) {
        Rng rng(seed ^ fnv1a(names[i]));
        for (int d = 0; d < dim; ++d)
            p[i * dim + d] = static_cast<T>(
                mean[d] + kToyTextConeSpread * rng.normal() * inv_sqrt_dim * std::sqrt(double(dim)) * inv_sqrt_dim * std::sqrt(double(dim)) / std::sqrt(double(dim)));
    }
    CachedTextEmbeddings<T> out;
    out.rows = l2_normalize_rows(rows);
    out.names = names;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic samples

struct SyntheticObject {
    std::array<double, 4> box; // x0, y0, x1, y1 pixels
    int class_id;
};

template <typename T>
struct SyntheticSample {
    Tensor<T> image; // 3 x H x W in [0,1]
    std::vector<SyntheticObject> objects;
    std::uint64_t seed;
};

namespace detail {

template <typename T>
void fill_shape(Tensor<T>& img, const SyntheticObject& obj, const ToyClass& cls, Rng& rng) {
    const std::size_t W = img.dim(2);
    const double x0 = obj.box[0], y0 = obj.box[1], x1 = obj.box[2], y1 = obj.box[3];
    const double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
    const double rx = (x1 - x0) / 2, ry = (y1 - y0) / 2;
    std::array<double, 3> col = cls.color;
    for (auto& c : col) c = std::clamp(c + rng.uniform(-0.06, 0.06), 0.0, 1.0);
    const int ix0 = static_cast<int>(std::floor(x0)), ix1 = static_cast<int>(std::ceil(x1));
    const int iy0 = static_cast<int>(std::floor(y0)), iy1 = static_cast<int>(std::ceil(y1));
    T* p = img.raw();
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (int y = std::max(0, iy0); y < std::min<int>(img.dim(1), iy1); ++y)
        for (int x = std::max(0, ix0); x < std::min<int>(W, ix1); ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool inside = false;
            if (cls.shape == 0) {
                inside = px >= x0 && px <= x1 && py >= y0 && py <= y1;
            } else if (cls.shape == 1) {
                const double dx = (px - cx) / rx, dy = (py - cy) / ry;
                inside = dx * dx + dy * dy <= 1.0;
            } else {
                // upward wedge: apex at top center, base along the bottom edge
                const double u = (py - y0) / (2 * ry); // 0 at apex row, 1 at base
                inside = py >= y0 && py <= y1 && std::abs(px - cx) <= u * rx;
            }
            if (inside)
                for (int c = 0; c < 3; ++c)
                    p[c * plane + static_cast<std::size_t>(y) * W + x] = static_cast<T>(col[c]);
        }
}

} // namespace detail

/// Deterministic synthetic scenes: 1-3 well-separated colored shapes on a
/// noisy dark background. Object side lengths stay above a quarter of the
/// image so every object covers at least one stride-8 anchor center.
template <typename T>
SyntheticSample<T> gen_sample(std::uint64_t seed, int image_size, int num_classes) {
    Rng rng(seed);
    const std::size_t n = static_cast<std::size_t>(image_size);
    SyntheticSample<T> s;
    s.seed = seed;
    s.image = Tensor<T>({3, n, n});
    T* p = s.image.raw();
    for (std::size_t i = 0; i < s.image.numel(); ++i)
        p[i] = static_cast<T>(0.08 + 0.07 * rng.uniform());

    const int count = rng.uniform_int(1, 3);
    const double min_side = image_size * 0.25, max_side = image_size * 0.45;
    for (int k = 0; k < count; ++k) {
        for (int attempt = 0; attempt < 24; ++attempt) {
            const double w = rng.uniform(min_side, max_side);
            const double h = rng.uniform(min_side, max_side);
            const double x0 = rng.uniform(1.0, image_size - w - 1.0);
            const double y0 = rng.uniform(1.0, image_size - h - 1.0);
            const std::array<double, 4> box{x0, y0, x0 + w, y0 + h};
            bool clear = true;
            for (const auto& other : s.objects)
                if (box_iou(box, other.box) > 0.05) { clear = false; break; }
            if (!clear) continue;
            SyntheticObject obj{box, rng.uniform_int(0, num_classes - 1)};
            detail::fill_shape(s.image, obj, toy_ontology()[obj.class_id], rng);
            s.objects.push_back(obj);
            break;
        }
    }
    if (s.objects.empty()) { // dense retry space exhausted; center one object
        const double w = min_side;
        SyntheticObject obj{{(image_size - w) / 2, (image_size - w) / 2, (image_size + w) / 2,
                             (image_size + w) / 2},
                            rng.uniform_int(0, num_classes - 1)};
        detail::fill_shape(s.image, obj, toy_ontology()[obj.class_id], rng);
        s.objects.push_back(obj);
    }
    return s;
}

template <typename T>
std::vector<SyntheticSample<T>> gen_dataset(std::uint64_t seed, int count, int image_size,
                                            int num_classes) {
    if (count < 1) throw ValueError("gen_dataset: count must be >= 1");
    toy_class_names(num_classes); // bounds check
    std::vector<SyntheticSample<T>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(gen_sample<T>(seed * 0x9e3779b9u + 0x1000 + i, image_size, num_classes));
    return out;
}

// ---------------------------------------------------------------------------
// target assignment: an anchor is positive for the smallest box containing
// its center; everything else is negative

template <typename T>
struct Assignment {
    std::vector<int> anchor_class;  // -1 for background
    std::vector<int> anchor_object; // index into the object list, -1 none
    Tensor<T> box_targets;          // N x 4 ltrb in stride units (zeros when negative)
    Tensor<T> positive;             // N, 1.0 where assigned
};

template <typename T>
Assignment<T> assign_targets(const ModelConfig& cfg, const std::vector<SyntheticObject>& objects) {
    const int n = cfg.num_anchors();
    const Tensor<T> centers = anchor_centers<T>(cfg);
    const auto strides = anchor_strides(cfg);
    Assignment<T> a;
    a.anchor_class.assign(n, -1);
    a.anchor_object.assign(n, -1);
    a.box_targets = Tensor<T>({static_cast<std::size_t>(n), 4});
    a.positive = Tensor<T>({static_cast<std::size_t>(n)});
    for (int i = 0; i < n; ++i) {
        const double cx = centers(i, 0), cy = centers(i, 1);
        int best = -1;
        double best_area = 0;
        for (std::size_t j = 0; j < objects.size(); ++j) {
            const auto& b = objects[j].box;
            if (cx < b[0] || cx > b[2] || cy < b[1] || cy > b[3]) continue;
            const double area = (b[2] - b[0]) * (b[3] - b[1]);
            if (best < 0 || area < best_area) {
                best = static_cast<int>(j);
                best_area = area;
            }
        }
        if (best < 0) continue;
        const auto& b = objects[best].box;
        const double s = strides[i];
        a.anchor_class[i] = objects[best].class_id;
        a.anchor_object[i] = best;
        a.box_targets.at(i, 0) = static_cast<T>((cx - b[0]) / s);
        a.box_targets.at(i, 1) = static_cast<T>((cy - b[1]) / s);
        a.box_targets.at(i, 2) = static_cast<T>((b[2] - cx) / s);
        a.box_targets.at(i, 3) = static_cast<T>((b[3] - cy) / s);
        a.positive.at(static_cast<std::size_t>(i)) = T(1);
    }
    return a;
}

/// Mean binary cross entropy over all elements, computed in the stable form.
template <typename T>
T bce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
    const Tensor<T> e = bce_with_logits(logits, targets);
    return sum(e) / T(e.numel());
}

namespace detail {

// Stage losses normalize the BCE sum by the positive count rather than the
// element count; a mean over N*C mostly-negative entries starves the
// gradients of any useful magnitude.
template <typename T>
T positive_normalizer(const Tensor<T>& targets) {
    T npos = 0;
    for (std::size_t i = 0; i < targets.numel(); ++i) npos += targets.data()[i];
    return T(targets.numel()) / std::max(T(1), npos);
}

} // namespace detail

// ---------------------------------------------------------------------------
// staged training

enum class Stage { text, savpe, specialized };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::text: return "text";
        case Stage::savpe: return "savpe";
        default: return "specialized";
    }
}

struct TrainOptions {
    double lr = 0.05;
    int batch = 8;
    double box_weight = 0.35;
    double clip_norm = 10.0; // global gradient-norm clip; keeps plain SGD stable
    int neg_samples = 8;     // negative names sampled into the online vocabulary
    std::uint64_t seed = 0;
};

struct StepRecord {
    int step;
    Stage stage;
    double loss;
};

struct StageMetrics {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_mean_loss;
    double initial_loss = 0;
    double final_loss = 0;
};

/// Applies the stage's freeze mask: the text stage trains the detector and
/// the auxiliary network, the visual-prompt stage trains only the prompt
/// encoder, and the prompt-free stage trains only the specialized embedding.
template <typename T>
void apply_stage_freeze(ParamStore<T>& params, Stage stage) {
    params.freeze_except([stage](const std::string& name) {
        const bool is_savpe = name.rfind("savpe.", 0) == 0;
        const bool is_ps = name == "lrpc.p_s";
        switch (stage) {
            case Stage::text: return !is_savpe && !is_ps;
            case Stage::savpe: return is_savpe;
            default: return is_ps;
        }
    });
}

/// Online vocabulary for a batch: classes present plus negatives sampled from
/// the remaining embedding rows (absent classes and any extra negative names
/// the caller supplied).
inline std::vector<int> online_vocab(const std::set<int>& present, int num_rows,
                                     int neg_samples, Rng& rng) {
    std::vector<int> vocab(present.begin(), present.end());
    std::vector<int> absent;
    for (int c = 0; c < num_rows; ++c)
        if (!present.count(c)) absent.push_back(c);
    // deterministic partial shuffle
    for (std::size_t i = 0; i + 1 < absent.size(); ++i) {
        const std::size_t j = i + rng.next_u64() % (absent.size() - i);
        std::swap(absent[i], absent[j]);
    }
    const int take = std::min<int>(neg_samples, static_cast<int>(absent.size()));
    vocab.insert(vocab.end(), absent.begin(), absent.begin() + take);
    std::sort(vocab.begin(), vocab.end());
    return vocab;
}

template <typename T>
using SampleSpan = const std::vector<const SyntheticSample<T>*>&;

/// Classification + box loss against an online vocabulary with enhanced text
/// embeddings as the contrast rows.
template <typename T>
typename Tape<T>::Id build_text_loss(TapeCtx<T>& cx, SampleSpan<T> batch,
                                     const CachedTextEmbeddings<T>& text, int num_classes,
                                     const ModelConfig& cfg, const TrainOptions& opts, Rng& rng) {
    std::set<int> present;
    for (const auto* s : batch)
        for (const auto& o : s->objects) present.insert(o.class_id);
    // negatives draw from every supplied row, including pool names past the
    // class range; only class rows can ever become positive targets
    const std::vector<int> vocab =
        online_vocab(present, static_cast<int>(text.rows.dim(0)), opts.neg_samples, rng);
    std::vector<int> column_of(num_classes, -1);
    Tensor<T> p_rows({vocab.size(), static_cast<std::size_t>(cfg.embed_dim)});
    for (std::size_t c = 0; c < vocab.size(); ++c) {
        if (vocab[c] < num_classes) column_of[vocab[c]] = static_cast<int>(c);
        for (int d = 0; d < cfg.embed_dim; ++d)
            p_rows.at(c, static_cast<std::size_t>(d)) = text.rows(vocab[c], d);
    }
    auto prompts = enhance(cx, cx.constant(p_rows));

    typename Tape<T>::Id total{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& sample = *batch[i];
        auto pyr = backbone_pan_forward(cx, cx.constant(sample.image), cfg);
        auto emb = object_embedding_head(cx, pyr, cfg);
        auto reg = regression_head(cx, pyr, cfg);
        const Assignment<T> asg = assign_targets<T>(cfg, sample.objects);
        Tensor<T> targets({static_cast<std::size_t>(cfg.num_anchors()), vocab.size()});
        for (int n = 0; n < cfg.num_anchors(); ++n)
            if (asg.anchor_class[n] >= 0) {
                const int col = column_of[asg.anchor_class[n]];
                if (col >= 0) targets.at(n, static_cast<std::size_t>(col)) = T(1);
            }
        auto logits = cx.matmul_nt(emb.rows, prompts);
        auto cls = cx.scale(cx.tape->bce_with_logits_mean(logits, targets),
                            detail::positive_normalizer(targets));
        auto box = cx.tape->l1_rows_mean(reg, asg.box_targets, asg.positive);
        auto loss = cx.add(cls, cx.scale(box, static_cast<T>(opts.box_weight)));
        total = i == 0 ? loss : cx.add(total, loss);
    }
    return cx.scale(total, T(1) / T(batch.size()));
}

/// Visual-prompt loss: per image, one ground-truth box per present class is
/// encoded through the prompt encoder and contrasted against the anchors.
template <typename T>
typename Tape<T>::Id build_savpe_loss(TapeCtx<T>& cx, SampleSpan<T> batch,
                                      const ModelConfig& cfg, Rng& rng) {
    typename Tape<T>::Id total{};
    std::size_t used = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& sample = *batch[i];
        auto pyr = backbone_pan_forward(cx, cx.constant(sample.image), cfg);
        auto emb = object_embedding_head(cx, pyr, cfg);
        auto s_feat = semantic_branch(cx, pyr, cfg);

        std::vector<int> classes;
        for (const auto& o : sample.objects)
            if (std::find(classes.begin(), classes.end(), o.class_id) == classes.end())
                classes.push_back(o.class_id);
        std::sort(classes.begin(), classes.end());

        std::vector<typename Tape<T>::Id> rows;
        for (int cls : classes) {
            std::vector<int> owners;
            for (std::size_t j = 0; j < sample.objects.size(); ++j)
                if (sample.objects[j].class_id == cls) owners.push_back(static_cast<int>(j));
            const int pick = owners[rng.next_u64() % owners.size()];
            const auto& b = sample.objects[pick].box;
            const Tensor<T> mask =
                rasterize(VisualPrompt<T>::from_box(b[0], b[1], b[2], b[3]), cfg.image_size);
            auto w = activation_branch(cx, pyr, mask, cfg);
            rows.push_back(aggregate(cx, s_feat, w, cfg.savpe_groups));
        }
        auto prompts = cx.concat0(rows);

        const Assignment<T> asg = assign_targets<T>(cfg, sample.objects);
        Tensor<T> targets({static_cast<std::size_t>(cfg.num_anchors()), classes.size()});
        for (int n = 0; n < cfg.num_anchors(); ++n)
            if (asg.anchor_class[n] >= 0) {
                const auto it = std::find(classes.begin(), classes.end(), asg.anchor_class[n]);
                targets.at(n, static_cast<std::size_t>(it - classes.begin())) = T(1);
            }
        auto logits = cx.matmul_nt(emb.rows, prompts);
        auto loss = cx.scale(cx.tape->bce_with_logits_mean(logits, targets),
                             detail::positive_normalizer(targets));
        total = used == 0 ? loss : cx.add(total, loss);
        ++used;
    }
    return cx.scale(total, T(1) / T(used));
}

/// Single-class objectness loss over the normalized specialized embedding.
template <typename T>
typename Tape<T>::Id build_specialized_loss(TapeCtx<T>& cx, SampleSpan<T> batch,
                                            const ModelConfig& cfg) {
    auto p = cx.l2_normalize_rows(cx.param("lrpc.p_s"));
    typename Tape<T>::Id total{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& sample = *batch[i];
        auto pyr = backbone_pan_forward(cx, cx.constant(sample.image), cfg);
        auto emb = object_embedding_head(cx, pyr, cfg);
        const Assignment<T> asg = assign_targets<T>(cfg, sample.objects);
        Tensor<T> targets({static_cast<std::size_t>(cfg.num_anchors()), 1});
        for (int n = 0; n < cfg.num_anchors(); ++n)
            if (asg.anchor_class[n] >= 0) targets.at(n, std::size_t(0)) = T(1);
        auto logits = cx.matmul_nt(emb.rows, p);
        auto loss = cx.scale(cx.tape->bce_with_logits_mean(logits, targets),
                             detail::positive_normalizer(targets));
        total = i == 0 ? loss : cx.add(total, loss);
    }
    return cx.scale(total, T(1) / T(batch.size()));
}

/// One training stage with SGD. The dataset order is reshuffled each epoch
/// from the stage seed; everything is deterministic for a fixed seed.
template <typename T>
StageMetrics run_stage(Stage stage, ParamStore<T>& params,
                       const CachedTextEmbeddings<T>& text, int num_classes,
                       const std::vector<SyntheticSample<T>>& dataset, int epochs,
                       const ModelConfig& cfg, const TrainOptions& opts) {
    apply_stage_freeze(params, stage);
    if (stage == Stage::specialized) {
        // start from the mean class-prompt direction: a generic objectness
        // vector (pool rows past the class range do not contribute)
        const Tensor<T> enhanced = enhance(params, text.rows);
        Tensor<T> mean({1, static_cast<std::size_t>(cfg.embed_dim)});
        for (int c = 0; c < num_classes; ++c)
            for (int d = 0; d < cfg.embed_dim; ++d)
                mean.at(std::size_t(0), static_cast<std::size_t>(d)) +=
                    enhanced(static_cast<std::size_t>(c), static_cast<std::size_t>(d));
        params.set_value("lrpc.p_s", l2_normalize_rows(mean));
    }

    StageMetrics metrics;
    Rng order_rng(opts.seed ^ fnv1a(stage_name(stage)));
    int step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<const SyntheticSample<T>*> order;
        for (const auto& s : dataset) order.push_back(&s);
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + order_rng.next_u64() % (order.size() - i);
            std::swap(order[i], order[j]);
        }
        double epoch_sum = 0;
        int epoch_batches = 0;
        for (std::size_t b = 0; b < order.size(); b += opts.batch) {
            std::vector<const SyntheticSample<T>*> batch(
                order.begin() + b,
                order.begin() + std::min(order.size(), b + opts.batch));
            Rng batch_rng(opts.seed ^ (0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(step)));
            Tape<T> tape;
            TapeCtx<T> cx{&tape, &params};
            typename Tape<T>::Id loss{};
            switch (stage) {
                case Stage::text:
                    loss = build_text_loss(cx, batch, text, num_classes, cfg, opts, batch_rng);
                    break;
                case Stage::savpe:
                    loss = build_savpe_loss(cx, batch, cfg, batch_rng);
                    break;
                default:
                    loss = build_specialized_loss(cx, batch, cfg);
            }
            const double lv = static_cast<double>(tape.value(loss)(std::size_t(0)));
            if (!std::isfinite(lv))
                throw TrainingDiverged(std::string("stage ") + stage_name(stage) +
                                       ": loss is not finite");
            params.zero_grads();
            tape.backward(loss);
            if (opts.clip_norm > 0) params.clip_grads(static_cast<T>(opts.clip_norm));
            params.sgd_step(static_cast<T>(opts.lr));
            metrics.steps.push_back({step, stage, lv});
            epoch_sum += lv;
            ++epoch_batches;
            ++step;
        }
        if (epoch_batches > 0) metrics.epoch_mean_loss.push_back(epoch_sum / epoch_batches);
    }
    if (stage == Stage::specialized)
        params.set_value("lrpc.p_s", l2_normalize_rows(params.value("lrpc.p_s")));
    if (!metrics.steps.empty()) {
        metrics.initial_loss = metrics.steps.front().loss;
        metrics.final_loss = metrics.steps.back().loss;
    }
    return metrics;
}

/// Text-prompt training entry point (classification + box regression over
/// enhanced cached embeddings).
template <typename T>
StageMetrics train_text_stage(ParamStore<T>& params, const CachedTextEmbeddings<T>& text,
                              int num_classes, const std::vector<SyntheticSample<T>>& dataset,
                              int epochs, const ModelConfig& cfg, const TrainOptions& opts) {
    return run_stage(Stage::text, params, text, num_classes, dataset, epochs, cfg, opts);
}

/// Trains only the specialized embedding (all other parameters frozen) and
/// returns it unit-normalized.
template <typename T>
Tensor<T> train_specialized_embedding(ParamStore<T>& params, const CachedTextEmbeddings<T>& text,
                                      int num_classes,
                                      const std::vector<SyntheticSample<T>>& dataset, int epochs,
                                      const ModelConfig& cfg, const TrainOptions& opts) {
    run_stage(Stage::specialized, params, text, num_classes, dataset, epochs, cfg, opts);
    return params.value("lrpc.p_s");
}

// ---------------------------------------------------------------------------
// three-stage toy recipe

/// Class names plus a pool of negative-only names; the pool plays the role of
/// a broad negative dictionary so object embeddings learn to reject arbitrary
/// text directions, not just sibling classes.
template <typename T>
CachedTextEmbeddings<T> toy_text_embeddings_with_pool(int num_classes, int dim,
                                                      std::uint64_t seed, int pool_size = 64) {
    auto names = toy_class_names(num_classes);
    for (int i = 0; i < pool_size; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "background_%03d", i);
        names.push_back(buf);
    }
    return gen_toy_text_embeddings<T>(names, dim, seed);
}

/// The classification projection starts at zero for toy training so object
/// embeddings grow only along trained prompt directions; the untouched
/// subspace would otherwise be initialization noise that poisons open-ended
/// vocabulary retrieval.
template <typename T>
void zero_embedding_projection(ParamStore<T>& params) {
    for (const char* sc : kScaleNames) {
        const std::string name = std::string("head.emb.") + sc + ".proj.w";
        params.set_value(name, Tensor<T>(params.value(name).shape()));
    }
}

struct ToyEpochs {
    int text = 30;
    int savpe = 2;
    int specialized = 1;
};

template <typename T>
struct ToyArtifacts {
    ParamStore<T> params;
    CachedTextEmbeddings<T> text; // class rows first, then the negative pool
    std::vector<std::string> class_names;
    StageMetrics text_metrics, savpe_metrics, specialized_metrics;
};

template <typename T>
ToyArtifacts<T> train_toy(const ModelConfig& cfg, std::uint64_t seed, int sample_count,
                          int num_classes, const ToyEpochs& epochs, const TrainOptions& opts) {
    ToyArtifacts<T> art{init_weights<T>(cfg, seed),
                        toy_text_embeddings_with_pool<T>(num_classes, cfg.embed_dim, seed),
                        toy_class_names(num_classes),
                        {},
                        {},
                        {}};
    zero_embedding_projection(art.params);
    auto dataset = gen_dataset<T>(seed + 1, sample_count, cfg.image_size, num_classes);
    art.text_metrics =
        run_stage(Stage::text, art.params, art.text, num_classes, dataset, epochs.text, cfg, opts);
    art.savpe_metrics = run_stage(Stage::savpe, art.params, art.text, num_classes, dataset,
                                  epochs.savpe, cfg, opts);
    art.specialized_metrics = run_stage(Stage::specialized, art.params, art.text, num_classes,
                                        dataset, epochs.specialized, cfg, opts);
    art.params.set_all_trainable(true);
    return art;
}

} // namespace yoloe
