// SPDX-License-Identifier: Apache-2.0
//
// The MH-MTL network: a shared 5-stage encoder (stride 2^i per stage), an
// FPN decoder fusing C2..C5 into a stride-4 map, and one private head per
// subtask. Task identity routes the forward pass through exactly one of two
// branches: global heads read GAP(C5), dense heads read the FPN output.

#pragma once

#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhmtl/nn_ops.hpp"
#include "mhmtl/task.hpp"
#include "mhmtl/tensor.hpp"

namespace mhmtl {

struct ModelConfig {
    int input_h = 256;
    int input_w = 256;
    std::vector<int> encoder_widths{8, 16, 24, 32, 48};  // C1..C5 channels
    int convs_per_stage = 1;                             // 1 or 2
    int fpn_channels = 32;                               // D; reference setting is 128
    double dropout_rate = 0.2;
    std::vector<TaskSpec> tasks;

    void validate() const {
        if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0)
            throw ConfigError("model: input extents must be positive multiples of 32");
        if (encoder_widths.size() != 5) throw ConfigError("model: exactly five encoder stages required");
        for (int wdt : encoder_widths)
            if (wdt < 1) throw ConfigError("model: encoder widths must be positive");
        if (convs_per_stage < 1 || convs_per_stage > 2)
            throw ConfigError("model: convs_per_stage must be 1 or 2");
        if (fpn_channels < 1) throw ConfigError("model: fpn_channels must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("model: dropout_rate must be in [0,1)");
        if (tasks.empty()) throw ConfigError("model: at least one task required");
        for (const auto& t : tasks) t.validate();
        for (std::size_t i = 0; i < tasks.size(); ++i)
            for (std::size_t j = i + 1; j < tasks.size(); ++j)
                if (tasks[i].subtask_id == tasks[j].subtask_id)
                    throw ConfigError("model: duplicate subtask_id '" + tasks[i].subtask_id + "'");
    }

    const TaskSpec* find_task(const std::string& id) const {
        for (const auto& t : tasks)
            if (t.subtask_id == id) return &t;
        return nullptr;
    }

    /// Stable text form; its hash is the checkpoint compatibility digest.
    std::string canonical() const {
        std::ostringstream os;
        os << "input=" << input_h << "x" << input_w << ";widths=";
        for (std::size_t i = 0; i < encoder_widths.size(); ++i) os << (i ? "," : "") << encoder_widths[i];
        os << ";convs=" << convs_per_stage << ";d=" << fpn_channels;
        os.precision(17);
        os << ";dropout=" << dropout_rate << ";tasks=[";
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto& t = tasks[i];
            os << (i ? "," : "") << t.subtask_id << ":" << task_kind_name(t.kind) << ":k=" << t.k
               << ":m=" << t.m;
        }
        os << "]";
        return os.str();
    }

    std::uint64_t digest() const { return fnv1a64(canonical()); }
};

/// Encoder/decoder artifacts of one forward pass.
template <typename T>
struct FeaturePyramid {
    Tensor<T> c1, c2, c3, c4, c5;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

namespace detail {

// Fan-in-scaled uniform init, zero biases.
template <typename T>
struct ConvLayer {
    Tensor<T> w, b;
    int stride = 1, pad = 0;

    ConvLayer() = default;
    ConvLayer(int out_ch, int in_ch, int k, int stride_, int pad_, std::mt19937_64& rng)
        : stride(stride_), pad(pad_) {
        const double bound = std::sqrt(1.0 / (static_cast<double>(in_ch) * k * k));
        w = Tensor<T>::uniform({out_ch, in_ch, k, k}, static_cast<T>(-bound), static_cast<T>(bound), rng, true);
        b = Tensor<T>::zeros({out_ch}, true);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct AffineLayer {
    Tensor<T> w, b;

    AffineLayer() = default;
    AffineLayer(int out_dim, int in_dim, std::mt19937_64& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in_dim));
        w = Tensor<T>::uniform({out_dim, in_dim}, static_cast<T>(-bound), static_cast<T>(bound), rng, true);
        b = Tensor<T>::zeros({out_dim}, true);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return affine(x, w, b); }
};

}  // namespace detail

template <typename T>
struct Detection {
    Box box;
    T score = 0;  // sigmoid of the winning objectness logit
    int cell_i = 0, cell_j = 0;
};

/// Picks the cell with the largest objectness logit (ties: smallest (i,j)
/// row-major) from a single-image [1,5,h',w'] prediction. Box channels are
/// already sigmoid-activated by the forward pass.
template <typename T>
Detection<T> decode_detection(const Tensor<T>& pred) {
    if (pred.rank() != 4 || pred.dim(0) != 1 || pred.dim(1) != 5)
        throw ShapeError("decode_detection: expected [1,5,h',w']");
    const int h = pred.dim(2), w = pred.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T* obj = pred.data().data() + 4 * plane;
    std::size_t best = 0;
    for (std::size_t p = 1; p < plane; ++p)
        if (obj[p] > obj[best]) best = p;
    Detection<T> det;
    det.cell_i = static_cast<int>(best) / w;
    det.cell_j = static_cast<int>(best) % w;
    const T* d = pred.data().data();
    det.box = Box{static_cast<double>(d[0 * plane + best]), static_cast<double>(d[1 * plane + best]),
                  static_cast<double>(d[2 * plane + best]), static_cast<double>(d[3 * plane + best])};
    det.score = sigmoid_scalar(obj[best]);
    return det;
}

template <typename T>
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
        cfg_.validate();
        std::mt19937_64 rng(derive_seed(seed, "model-init"));

        int in_ch = 1;  // grayscale ultrasound input
        for (int s = 0; s < 5; ++s) {
            Stage st;
            const int out_ch = cfg_.encoder_widths[static_cast<std::size_t>(s)];
            st.convs.emplace_back(out_ch, in_ch, 3, /*stride=*/2, /*pad=*/1, rng);
            for (int extra = 1; extra < cfg_.convs_per_stage; ++extra)
                st.convs.emplace_back(out_ch, out_ch, 3, 1, 1, rng);
            encoder_.push_back(std::move(st));
            in_ch = out_ch;
        }

        const int d = cfg_.fpn_channels;
        for (int lvl = 0; lvl < 4; ++lvl)  // laterals for C2..C5
            laterals_.emplace_back(d, cfg_.encoder_widths[static_cast<std::size_t>(lvl + 1)], 1, 1, 0, rng);
        smooth_ = detail::ConvLayer<T>(d, d, 3, 1, 1, rng);

        for (const auto& t : cfg_.tasks) {
            Head head;
            head.kind = t.kind;
            if (is_global(t.kind)) {
                const int out = t.kind == TaskKind::Classification ? t.k : 2 * t.m;
                head.fc = detail::AffineLayer<T>(out, cfg_.encoder_widths[4], rng);
            } else {
                const int out = t.kind == TaskKind::Segmentation ? t.k : 5;
                head.conv3 = detail::ConvLayer<T>(d, d, 3, 1, 1, rng);
                head.proj = detail::ConvLayer<T>(out, d, 1, 1, 0, rng);
            }
            heads_.emplace_back(t.subtask_id, std::move(head));
        }
    }

    const ModelConfig& config() const { return cfg_; }

    /// Shared encoder: five stride-2 stages; C_i has stride 2^i.
    FeaturePyramid<T> encode(const Tensor<T>& image) {
        if (image.rank() != 4 || image.dim(1) != 1)
            throw ShapeError("encode: expected [N,1,H,W], got " + shape_str(image.shape()));
        if (image.dim(2) != cfg_.input_h || image.dim(3) != cfg_.input_w)
            throw ShapeError("encode: input is " + std::to_string(image.dim(2)) + "x" +
                             std::to_string(image.dim(3)) + " but the model expects " +
                             std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) +
                             " (no implicit resize)");
        FeaturePyramid<T> pyr;
        Tensor<T> x = image;
        Tensor<T>* stages[5] = {&pyr.c1, &pyr.c2, &pyr.c3, &pyr.c4, &pyr.c5};
        for (int s = 0; s < 5; ++s) {
            for (const auto& conv : encoder_[static_cast<std::size_t>(s)].convs) x = relu(conv(x));
            *stages[s] = x;
        }
        return pyr;
    }

    /// FPN decoder: 1x1 laterals onto C2..C5, top-down 2x upsample + add,
    /// 3x3 smoothing at the C2 level. Output stride 4, D channels.
    Tensor<T> fpn(const FeaturePyramid<T>& pyr) {
        ++fpn_evals_;
        Tensor<T> p = laterals_[3](pyr.c5);
        p = add(laterals_[2](pyr.c4), upsample_nearest(p, 2));
        p = add(laterals_[1](pyr.c3), upsample_nearest(p, 2));
        p = add(laterals_[0](pyr.c2), upsample_nearest(p, 2));
        return smooth_(p);
    }

    /// Task-routed forward. Global kinds never touch the FPN; dense kinds
    /// never touch the dropout/GAP path. `rng` is only needed when training
    /// a global task with dropout_rate > 0.
    Tensor<T> forward(const Tensor<T>& image, const std::string& subtask_id, bool train,
                      std::mt19937_64* rng = nullptr) {
        const Head& head = find_head(subtask_id);
        if (is_global(head.kind)) return forward_global(image, subtask_id, train, rng);
        return forward_dense(image, subtask_id, train);
    }

    /// Classification -> [N,K] logits; Regression -> [N,2M] in (0,1).
    Tensor<T> forward_global(const Tensor<T>& image, const std::string& subtask_id, bool train,
                             std::mt19937_64* rng = nullptr) {
        const Head& head = find_head(subtask_id);
        if (!is_global(head.kind))
            throw RoutingError("forward_global: subtask '" + subtask_id + "' is a dense task");
        FeaturePyramid<T> pyr = encode(image);
        Tensor<T> feat = pool_avg_global(pyr.c5);
        if (train && cfg_.dropout_rate > 0.0) {
            if (!rng) throw ContractError("forward_global: rng required for train-time dropout");
            feat = dropout(feat, cfg_.dropout_rate, true, *rng);
        }
        Tensor<T> out = head.fc(feat);
        if (head.kind == TaskKind::Regression) out = sigmoid(out);
        return out;
    }

    /// Segmentation -> [N,K,H,W] logits; Detection -> [N,5,H/4,W/4] with
    /// channels (cx,cy,w,h) sigmoid-activated and the objectness logit raw.
    Tensor<T> forward_dense(const Tensor<T>& image, const std::string& subtask_id, bool /*train*/) {
        const Head& head = find_head(subtask_id);
        if (!is_dense(head.kind))
            throw RoutingError("forward_dense: subtask '" + subtask_id + "' is a global task");
        FeaturePyramid<T> pyr = encode(image);
        Tensor<T> p = fpn(pyr);
        Tensor<T> y = head.proj(relu(head.conv3(p)));
        if (head.kind == TaskKind::Segmentation) return upsample_nearest(y, 4);
        return concat_channels(sigmoid(slice_channels(y, 0, 4)), slice_channels(y, 4, 5));
    }

    /// Named parameters in a stable order. "head.<id>." prefixes mark the
    /// head LR group; everything else is backbone (encoder + FPN).
    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        for (std::size_t s = 0; s < encoder_.size(); ++s)
            for (std::size_t c = 0; c < encoder_[s].convs.size(); ++c) {
                const std::string base =
                    "encoder.s" + std::to_string(s + 1) + ".conv" + std::to_string(c + 1);
                out.push_back({base + ".w", encoder_[s].convs[c].w});
                out.push_back({base + ".b", encoder_[s].convs[c].b});
            }
        for (std::size_t l = 0; l < laterals_.size(); ++l) {
            const std::string base = "fpn.lat" + std::to_string(l + 2);
            out.push_back({base + ".w", laterals_[l].w});
            out.push_back({base + ".b", laterals_[l].b});
        }
        out.push_back({"fpn.smooth.w", smooth_.w});
        out.push_back({"fpn.smooth.b", smooth_.b});
        for (auto& [id, head] : heads_) {
            const std::string base = "head." + id;
            if (is_global(head.kind)) {
                out.push_back({base + ".fc.w", head.fc.w});
                out.push_back({base + ".fc.b", head.fc.b});
            } else {
                out.push_back({base + ".conv3.w", head.conv3.w});
                out.push_back({base + ".conv3.b", head.conv3.b});
                out.push_back({base + ".proj.w", head.proj.w});
                out.push_back({base + ".proj.b", head.proj.b});
            }
        }
        return out;
    }

    static bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

    /// FPN evaluation counter; the global branch must never advance it.
    std::uint64_t fpn_eval_count() const { return fpn_evals_; }

    /// Grid extents of the detection head for this model's input size.
    std::pair<int, int> detection_grid() const { return {cfg_.input_h / 4, cfg_.input_w / 4}; }

private:
    struct Stage {
        std::vector<detail::ConvLayer<T>> convs;
    };
    struct Head {
        TaskKind kind = TaskKind::Classification;
        detail::AffineLayer<T> fc;     // global kinds
        detail::ConvLayer<T> conv3;    // dense kinds
        detail::ConvLayer<T> proj;
    };

    const Head& find_head(const std::string& id) const {
        for (const auto& [hid, head] : heads_)
            if (hid == id) return head;
        throw RoutingError("unknown subtask_id '" + id + "'");
    }

    ModelConfig cfg_;
    std::vector<Stage> encoder_;
    std::vector<detail::ConvLayer<T>> laterals_;  // C2..C5
    detail::ConvLayer<T> smooth_;
    std::vector<std::pair<std::string, Head>> heads_;
    std::uint64_t fpn_evals_ = 0;
};

}  // namespace mhmtl
