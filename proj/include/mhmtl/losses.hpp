// SPDX-License-Identifier: Apache-2.0
//
// Task losses: soft Dice over foreground classes, cross-entropy, per-keypoint
// squared Euclidean error, and the center-cell detection loss. Each is a
// single fused graph node with a hand-derived backward pass; targets are
// plain values, never graph inputs.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mhmtl/task.hpp"
#include "mhmtl/tensor.hpp"

namespace mhmtl {

struct LossConfig {
    double dice_eps = 1e-6;
    double det_lambda = 8.0;

    void validate() const {
        if (dice_eps <= 0.0) throw ConfigError("loss: dice_eps must be positive");
        if (det_lambda <= 0.0) throw ConfigError("loss: det_lambda must be positive");
    }
};

/// Soft Dice loss on class probabilities. `target` is a [N,H,W] class-index
/// map (row-major). Per image and foreground class c >= 1:
///   1 - (2*sum(y*p) + eps) / (sum(p) + sum(y) + eps)
/// averaged over the N*(K-1) (image, class) pairs. Class 0 is background.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const std::vector<int>& target, T eps = T(1e-6)) {
    if (probs.rank() != 4) throw ShapeError("dice_loss: expected probs [N,K,H,W]");
    const int n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    if (k < 2) throw ContractError("dice_loss: need at least one foreground class");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (target.size() != static_cast<std::size_t>(n) * plane)
        throw ShapeError("dice_loss: target length does not match [N,H,W]");
    for (int t : target)
        if (t < 0 || t >= k) throw ContractError("dice_loss: target class out of range");

    // Per (image, class) sums; kept for the backward pass.
    const std::size_t terms = static_cast<std::size_t>(n) * (k - 1);
    std::vector<T> inter(terms, T(0)), psum(terms, T(0)), tsum(terms, T(0));
    const T* p = probs.data().data();
    for (int im = 0; im < n; ++im)
        for (int c = 1; c < k; ++c) {
            const std::size_t ti = static_cast<std::size_t>(im) * (k - 1) + (c - 1);
            const T* pc = p + (static_cast<std::size_t>(im) * k + c) * plane;
            const int* tc = target.data() + static_cast<std::size_t>(im) * plane;
            for (std::size_t px = 0; px < plane; ++px) {
                psum[ti] += pc[px];
                if (tc[px] == c) {
                    inter[ti] += pc[px];
                    tsum[ti] += T(1);
                }
            }
        }
    T loss = T(0);
    for (std::size_t ti = 0; ti < terms; ++ti)
        loss += T(1) - (T(2) * inter[ti] + eps) / (psum[ti] + tsum[ti] + eps);
    loss /= static_cast<T>(terms);

    return detail::make_op_result<T>(
        {1}, {loss}, "dice_loss", {probs},
        [target, eps, n, k, plane, terms, inter = std::move(inter), psum = std::move(psum),
         tsum = std::move(tsum)](detail::Node<T>& self) {
            auto& pn = *self.parents[0];
            if (!pn.requires_grad) return;
            const T g = self.grad[0] / static_cast<T>(terms);
            std::vector<T> gp(pn.data.size(), T(0));
            for (int im = 0; im < n; ++im)
                for (int c = 1; c < k; ++c) {
                    const std::size_t ti = static_cast<std::size_t>(im) * (k - 1) + (c - 1);
                    const T denom = psum[ti] + tsum[ti] + eps;
                    const T num = T(2) * inter[ti] + eps;
                    T* gc = gp.data() + (static_cast<std::size_t>(im) * k + c) * plane;
                    const int* tc = target.data() + static_cast<std::size_t>(im) * plane;
                    for (std::size_t px = 0; px < plane; ++px) {
                        const T y = tc[px] == c ? T(1) : T(0);
                        gc[px] = -g * (T(2) * y * denom - num) / (denom * denom);
                    }
                }
            detail::accumulate(pn, gp.data(), gp.size());
        });
}

/// Mean over the batch of -log softmax(logits)[target], with the probability
/// clamped at 1e-12 (a clamped row contributes zero gradient).
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<int>& target) {
    if (logits.rank() != 2) throw ShapeError("ce_loss: expected logits [N,K]");
    const int n = logits.dim(0), k = logits.dim(1);
    if (target.size() != static_cast<std::size_t>(n)) throw ShapeError("ce_loss: one target per row");
    for (int t : target)
        if (t < 0 || t >= k) throw ContractError("ce_loss: target class out of range");

    std::vector<T> prob(logits.data().size());
    const T* z = logits.data().data();
    T loss = T(0);
    for (int r = 0; r < n; ++r) {
        const T* zr = z + static_cast<std::size_t>(r) * k;
        T* pr = prob.data() + static_cast<std::size_t>(r) * k;
        T mx = zr[0];
        for (int c = 1; c < k; ++c) mx = std::max(mx, zr[c]);
        T denom = T(0);
        for (int c = 0; c < k; ++c) {
            pr[c] = std::exp(zr[c] - mx);
            denom += pr[c];
        }
        for (int c = 0; c < k; ++c) pr[c] /= denom;
        const T pt = pr[target[static_cast<std::size_t>(r)]];
        loss -= std::log(std::max(pt, static_cast<T>(kLogClampEps)));
    }
    loss /= static_cast<T>(n);

    return detail::make_op_result<T>(
        {1}, {loss}, "ce_loss", {logits},
        [target, n, k, prob = std::move(prob)](detail::Node<T>& self) {
            auto& pn = *self.parents[0];
            if (!pn.requires_grad) return;
            const T g = self.grad[0] / static_cast<T>(n);
            std::vector<T> gz(pn.data.size(), T(0));
            for (int r = 0; r < n; ++r) {
                const int t = target[static_cast<std::size_t>(r)];
                const T* pr = prob.data() + static_cast<std::size_t>(r) * k;
                if (pr[t] <= static_cast<T>(kLogClampEps)) continue;  // clamp region: flat
                T* gr = gz.data() + static_cast<std::size_t>(r) * k;
                for (int c = 0; c < k; ++c) gr[c] = g * (pr[c] - (c == t ? T(1) : T(0)));
            }
            detail::accumulate(pn, gz.data(), gz.size());
        });
}

/// Squared Euclidean keypoint error: per sample (1/M) * sum over coordinates
/// of (pred - target)^2, averaged over the batch. Layout [N,2M].
template <typename T>
Tensor<T> keypoint_mse(const Tensor<T>& pred, const std::vector<T>& target) {
    if (pred.rank() != 2) throw ShapeError("keypoint_mse: expected pred [N,2M]");
    const int n = pred.dim(0), cols = pred.dim(1);
    if (cols < 2 || cols % 2 != 0) throw ShapeError("keypoint_mse: column count must be 2M");
    if (target.size() != pred.numel()) throw ShapeError("keypoint_mse: target length mismatch");
    const int m = cols / 2;

    const T* p = pred.data().data();
    T loss = T(0);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const T d = p[i] - target[i];
        loss += d * d;
    }
    loss /= static_cast<T>(m) * static_cast<T>(n);

    return detail::make_op_result<T>(
        {1}, {loss}, "keypoint_mse", {pred}, [target, n, m](detail::Node<T>& self) {
            auto& pn = *self.parents[0];
            if (!pn.requires_grad) return;
            const T scale = self.grad[0] * T(2) / (static_cast<T>(m) * static_cast<T>(n));
            std::vector<T> gp(pn.data.size());
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = scale * (pn.data[i] - target[i]);
            detail::accumulate(pn, gp.data(), gp.size());
        });
}

namespace detail {

// log(1 + exp(-z)), stable for large |z|.
template <typename T>
inline T softplus_neg(T z) {
    return z > T(0) ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

}  // namespace detail

/// Center-cell detection loss. `pred` is [N,5,h',w'] with box channels 0..3
/// already sigmoid-activated and channel 4 an objectness logit; one ground
/// truth box per image. Per image, only the cell holding the box center is
/// supervised:
///   BCE(objectness, 1) + lambda * mean over 4 coords of |pred - gt|
/// averaged over the batch. Every other cell contributes nothing, in value
/// and in gradient.
template <typename T>
Tensor<T> detection_loss(const Tensor<T>& pred, const std::vector<Box>& targets,
                         T lambda = T(8)) {
    if (pred.rank() != 4 || pred.dim(1) != 5) throw ShapeError("detection_loss: expected [N,5,h',w']");
    if (targets.empty()) throw ContractError("detection_loss: every detection sample carries a box");
    const int n = pred.dim(0), h = pred.dim(2), w = pred.dim(3);
    if (targets.size() != static_cast<std::size_t>(n))
        throw ShapeError("detection_loss: one target box per image");

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t image = 5 * plane;
    const T* p = pred.data().data();
    std::vector<std::size_t> cell(static_cast<std::size_t>(n));
    T loss = T(0);
    for (int im = 0; im < n; ++im) {
        const auto [ci, cj] = encode_detection_target(targets[static_cast<std::size_t>(im)].cx,
                                                      targets[static_cast<std::size_t>(im)].cy, h, w);
        cell[static_cast<std::size_t>(im)] = static_cast<std::size_t>(ci) * w + cj;
        const T* base = p + static_cast<std::size_t>(im) * image;
        const T z = base[4 * plane + cell[static_cast<std::size_t>(im)]];
        const Box& b = targets[static_cast<std::size_t>(im)];
        const double gt[4] = {b.cx, b.cy, b.w, b.h};
        T l1 = T(0);
        for (int c = 0; c < 4; ++c)
            l1 += std::abs(base[static_cast<std::size_t>(c) * plane + cell[static_cast<std::size_t>(im)]] -
                           static_cast<T>(gt[c]));
        loss += detail::softplus_neg(z) + lambda * l1 / T(4);
    }
    loss /= static_cast<T>(n);

    return detail::make_op_result<T>(
        {1}, {loss}, "detection_loss", {pred},
        [targets, lambda, n, plane, image, cell = std::move(cell)](detail::Node<T>& self) {
            auto& pn = *self.parents[0];
            if (!pn.requires_grad) return;
            const T g = self.grad[0] / static_cast<T>(n);
            std::vector<T> gp(pn.data.size(), T(0));
            for (int im = 0; im < n; ++im) {
                const std::size_t at = static_cast<std::size_t>(im) * image;
                const std::size_t px = cell[static_cast<std::size_t>(im)];
                const T z = pn.data[at + 4 * plane + px];
                gp[at + 4 * plane + px] = g * (sigmoid_scalar(z) - T(1));
                const Box& b = targets[static_cast<std::size_t>(im)];
                const double gt[4] = {b.cx, b.cy, b.w, b.h};
                for (int c = 0; c < 4; ++c) {
                    const T d = pn.data[at + static_cast<std::size_t>(c) * plane + px] - static_cast<T>(gt[c]);
                    const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                    gp[at + static_cast<std::size_t>(c) * plane + px] = g * lambda * s / T(4);
                }
            }
            detail::accumulate(pn, gp.data(), gp.size());
        });
}

/// Homogeneous target batch for one training step.
template <typename T>
struct TargetBatch {
    TaskKind kind = TaskKind::Classification;
    std::vector<TaskKind> sample_kinds;  // one per sample, for homogeneity checks
    std::vector<int> class_map;          // Segmentation: [N,H,W] indices
    std::vector<int> labels;             // Classification: [N]
    std::vector<Box> boxes;              // Detection: [N]
    std::vector<T> keypoints;            // Regression: [N,2M]
};

/// Dispatches a model output to the single loss selected by the batch kind.
/// Segmentation outputs are logits; softmax is applied here.
template <typename T>
Tensor<T> composite_loss(const Tensor<T>& model_output, const TargetBatch<T>& batch,
                         const LossConfig& cfg = {}) {
    cfg.validate();
    for (TaskKind k : batch.sample_kinds)
        if (k != batch.kind) throw ContractError("composite_loss: batch mixes task kinds");
    switch (batch.kind) {
        case TaskKind::Segmentation:
            return dice_loss(softmax(model_output, 1), batch.class_map, static_cast<T>(cfg.dice_eps));
        case TaskKind::Classification:
            return ce_loss(model_output, batch.labels);
        case TaskKind::Detection:
            return detection_loss(model_output, batch.boxes, static_cast<T>(cfg.det_lambda));
        case TaskKind::Regression:
            return keypoint_mse(model_output, batch.keypoints);
    }
    throw ContractError("composite_loss: unknown task kind");
}

}  // namespace mhmtl
