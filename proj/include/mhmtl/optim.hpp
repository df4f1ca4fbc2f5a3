// SPDX-License-Identifier: Apache-2.0
//
// Decoupled-weight-decay adaptive-moment optimizer with cosine-annealed
// per-group learning rates. A parameter is updated only when the preceding
// backward sweep allocated a gradient for it; parameters outside the active
// task's subgraph are left untouched, weight decay included.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mhmtl/model.hpp"
#include "mhmtl/tensor.hpp"

namespace mhmtl {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const {
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("optim: betas must be in [0,1)");
        if (eps <= 0.0) throw ConfigError("optim: eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("optim: weight_decay must be >= 0");
    }
};

/// lr(t) = min + (base - min) * (1 + cos(pi t / T)) / 2, clamped to the
/// endpoints. t=0, t=T, and t=T/2 are returned exactly (no trig rounding).
struct CosineSchedule {
    double base_lr = 1e-3;
    double min_lr = 0.0;
    std::int64_t total_steps = 1;

    void validate() const {
        if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
        if (base_lr < min_lr || min_lr < 0.0) throw ConfigError("schedule: need base_lr >= min_lr >= 0");
    }

    double lr_at(std::int64_t t) const {
        validate();
        if (t <= 0) return base_lr;
        if (t >= total_steps) return min_lr;
        if (2 * t == total_steps) return min_lr + 0.5 * (base_lr - min_lr);
        const double phase = 3.14159265358979323846 * static_cast<double>(t) / static_cast<double>(total_steps);
        return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(phase));
    }
};

template <typename T>
class AdamW {
public:
    struct Group {
        std::string name;
        std::vector<NamedParam<T>> params;
        CosineSchedule schedule;
    };

    AdamW(std::vector<Group> groups, AdamWConfig cfg = {}) : groups_(std::move(groups)), cfg_(cfg) {
        cfg_.validate();
        for (auto& g : groups_) {
            g.schedule.validate();
            for (auto& p : g.params) {
                if (!p.tensor.requires_grad())
                    throw ContractError("optimizer: parameter '" + p.name + "' does not require grad");
                m_.emplace_back(p.tensor.numel(), T(0));
                v_.emplace_back(p.tensor.numel(), T(0));
            }
        }
    }

    std::int64_t step_count() const { return step_; }
    const std::vector<Group>& groups() const { return groups_; }
    const AdamWConfig& config() const { return cfg_; }

    /// Current learning rate of a group (the one the next step will use).
    double group_lr(std::size_t g) const { return groups_[g].schedule.lr_at(step_); }

    /// One update over all parameters holding gradients. Rejects the whole
    /// step if any participating gradient contains a non-finite value.
    void step() {
        for (const auto& g : groups_)
            for (const auto& p : g.params) {
                if (!p.tensor.has_grad()) continue;
                const auto& grad = std::as_const(p.tensor).grad();
                for (const T gv : grad)
                    if (!std::isfinite(static_cast<double>(gv)))
                        throw ContractError("optimizer: non-finite gradient in parameter '" + p.name + "'");
            }

        const double t = static_cast<double>(step_ + 1);  // 1-based for bias correction
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t);

        std::size_t flat = 0;
        for (auto& g : groups_) {
            const double lr = g.schedule.lr_at(step_);
            for (auto& p : g.params) {
                const std::size_t idx = flat++;
                if (!p.tensor.has_grad()) continue;
                const auto& grad = std::as_const(p.tensor).grad();
                auto& data = p.tensor.data();
                auto& m = m_[idx];
                auto& v = v_[idx];
                const double shrink = 1.0 - lr * cfg_.weight_decay;
                for (std::size_t i = 0; i < data.size(); ++i) {
                    double x = static_cast<double>(data[i]) * shrink;  // decoupled decay
                    const double gv = static_cast<double>(grad[i]);
                    const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gv;
                    const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gv * gv;
                    m[i] = static_cast<T>(mi);
                    v[i] = static_cast<T>(vi);
                    x -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
                    data[i] = static_cast<T>(x);
                }
            }
        }
        ++step_;
    }

    /// Drops gradients on every registered parameter; the next backward
    /// re-allocates them only along the active subgraph.
    void clear_grads() {
        for (auto& g : groups_)
            for (auto& p : g.params) p.tensor.clear_grad();
    }

    // Checkpoint plumbing: moments and step counter, in registration order.
    std::int64_t& mutable_step() { return step_; }
    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }
    const std::vector<std::vector<T>>& moments_m() const { return m_; }
    const std::vector<std::vector<T>>& moments_v() const { return v_; }

private:
    std::vector<Group> groups_;
    AdamWConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::int64_t step_ = 0;
};

/// Splits a model's parameters into the two standard groups: everything
/// under "head." follows the head schedule, the rest (encoder + FPN) the
/// backbone schedule.
template <typename T>
std::vector<typename AdamW<T>::Group> make_param_groups(Model<T>& model, const CosineSchedule& backbone,
                                                        const CosineSchedule& heads) {
    typename AdamW<T>::Group back{"backbone", {}, backbone};
    typename AdamW<T>::Group head{"heads", {}, heads};
    for (auto& p : model.parameters())
        (Model<T>::is_head_param(p.name) ? head : back).params.push_back(p);
    return {back, head};
}

}  // namespace mhmtl
