// SPDX-License-Identifier: Apache-2.0
//
// Training loop and evaluation driver. Batches are task-homogeneous and drawn
// round-robin across subtasks; every random decision (shuffles, augmentation,
// dropout) comes from a counter-derived stream of the run seed, so a run is a
// pure function of (config, data, seed) and resuming from an epoch-boundary
// checkpoint reproduces the uninterrupted run bit for bit.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mhmtl/checkpoint.hpp"
#include "mhmtl/data.hpp"
#include "mhmtl/losses.hpp"
#include "mhmtl/metrics.hpp"
#include "mhmtl/model.hpp"
#include "mhmtl/optim.hpp"

namespace mhmtl {

struct TrainConfig {
    int epochs = 5;
    int batch_size = 8;
    double backbone_lr = 1e-4;
    double head_lr = 1e-3;
    double min_lr = 0.0;
    AdamWConfig optim;
    LossConfig loss;
    std::uint64_t seed = 0;
    bool augment = true;       // photometric train-time augmentation
    int validate_every = 1;    // epochs between validation passes; 0 disables
    int stop_after_epoch = 0;  // >0: pause the run there (schedule still spans `epochs`)
    std::string out_dir;       // empty keeps checkpoints and the metric log off disk

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (validate_every < 0) throw ConfigError("train: validate_every must be >= 0");
        if (stop_after_epoch < 0 || stop_after_epoch > epochs)
            throw ConfigError("train: stop_after_epoch must be in [0, epochs]");
        if (backbone_lr <= 0.0 || head_lr <= 0.0) throw ConfigError("train: learning rates must be positive");
        if (min_lr < 0.0) throw ConfigError("train: min_lr must be >= 0");
        optim.validate();
        loss.validate();
    }
};

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

/// Stacks model-space images into a [N,1,H,W] tensor.
template <typename T>
Tensor<T> image_batch(const std::vector<const ModelSample*>& samples) {
    if (samples.empty()) throw ContractError("image_batch: empty batch");
    const int h = samples[0]->image.h, w = samples[0]->image.w;
    const int n = static_cast<int>(samples.size());
    std::vector<T> data(static_cast<std::size_t>(n) * h * w);
    std::size_t at = 0;
    for (const ModelSample* s : samples) {
        if (s->image.h != h || s->image.w != w) throw ShapeError("image_batch: mixed image sizes");
        for (float v : s->image.px) data[at++] = static_cast<T>(v);
    }
    return Tensor<T>::from_data({n, 1, h, w}, std::move(data));
}

/// Builds loss targets for a task-homogeneous batch. All samples must belong
/// to the same subtask.
template <typename T>
TargetBatch<T> make_targets(const std::vector<const ModelSample*>& samples) {
    if (samples.empty()) throw ContractError("make_targets: empty batch");
    const TaskSpec& task = samples[0]->task;
    TargetBatch<T> tb;
    tb.kind = task.kind;
    for (const ModelSample* s : samples) {
        if (s->task.subtask_id != task.subtask_id) throw ContractError("make_targets: batch mixes subtasks");
        tb.sample_kinds.push_back(s->task.kind);
        switch (task.kind) {
            case TaskKind::Segmentation:
                if (s->mask.empty()) throw ContractError("make_targets: sample '" + s->id + "' has no mask");
                tb.class_map.insert(tb.class_map.end(), s->mask.begin(), s->mask.end());
                break;
            case TaskKind::Classification:
                if (s->class_index < 0 || s->class_index >= task.k)
                    throw ContractError("make_targets: sample '" + s->id + "' class index out of range");
                tb.labels.push_back(s->class_index);
                break;
            case TaskKind::Detection:
                tb.boxes.push_back(s->box);
                break;
            case TaskKind::Regression:
                if (static_cast<int>(s->keypoints_norm.size()) != task.m)
                    throw ContractError("make_targets: sample '" + s->id + "' keypoint count mismatch");
                for (const Keypoint& kp : s->keypoints_norm) {
                    tb.keypoints.push_back(static_cast<T>(kp.x));
                    tb.keypoints.push_back(static_cast<T>(kp.y));
                }
                break;
        }
    }
    return tb;
}

// ---------------------------------------------------------------------------
// Prediction decoding and evaluation
// ---------------------------------------------------------------------------

/// Decoded model output for one sample; only the fields of the sample's task
/// kind are populated. Keypoints are normalized, the mask is model-sized.
struct Prediction {
    std::vector<int> mask;
    std::vector<double> probs;
    Box box;
    double score = 0.0;
    std::vector<Keypoint> keypoints;
};

template <typename T>
Prediction predict_sample(Model<T>& model, const ModelSample& s) {
    NoGradGuard ng;
    const Tensor<T> x = image_batch<T>({&s});
    Prediction p;
    switch (s.task.kind) {
        case TaskKind::Segmentation: {
            const Tensor<T> y = model.forward(x, s.task.subtask_id, false);  // [1,K,H,W]
            const int k = y.dim(1), h = y.dim(2), w = y.dim(3);
            const std::size_t plane = static_cast<std::size_t>(h) * w;
            p.mask.resize(plane);
            const T* d = y.data().data();
            for (std::size_t i = 0; i < plane; ++i) {
                int best = 0;
                for (int c = 1; c < k; ++c)
                    if (d[c * plane + i] > d[best * plane + i]) best = c;
                p.mask[i] = best;
            }
            break;
        }
        case TaskKind::Classification: {
            const Tensor<T> y = softmax(model.forward(x, s.task.subtask_id, false), 1);  // [1,K]
            p.probs.assign(y.data().begin(), y.data().end());
            break;
        }
        case TaskKind::Detection: {
            const Detection<T> det = decode_detection(model.forward(x, s.task.subtask_id, false));
            p.box = det.box;
            p.score = det.score;
            break;
        }
        case TaskKind::Regression: {
            const Tensor<T> y = model.forward(x, s.task.subtask_id, false);  // [1,2M] in (0,1)
            for (int i = 0; i < y.dim(1); i += 2)
                p.keypoints.push_back(Keypoint{static_cast<double>(y.data()[i]),
                                               static_cast<double>(y.data()[i + 1])});
            break;
        }
    }
    return p;
}

/// Ground truth replayed as a prediction; evaluating with this must yield the
/// ideal score for every metric.
inline Prediction oracle_prediction(const ModelSample& s) {
    Prediction p;
    switch (s.task.kind) {
        case TaskKind::Segmentation:
            p.mask = s.mask;
            break;
        case TaskKind::Classification:
            p.probs.assign(s.task.k, 0.0);
            p.probs[s.class_index] = 1.0;
            break;
        case TaskKind::Detection:
            p.box = s.box;
            p.score = 1.0;
            break;
        case TaskKind::Regression:
            p.keypoints = s.keypoints_norm;
            break;
    }
    return p;
}

using PredictFn = std::function<Prediction(const ModelSample&)>;

/// Scores predictions per subtask: segmentation reports dsc and hd (mean of
/// per-foreground-class values over samples), classification auc/f1/mcc over
/// the whole subtask, detection the mean iou, regression the mean radial
/// error in original-resolution pixels. Means over subtasks are unweighted.
inline EvalReport evaluate_with(const PredictFn& predict, const std::vector<ModelSample>& samples) {
    if (samples.empty()) throw ContractError("evaluate: empty dataset");

    struct Acc {
        TaskSpec task;
        double dsc = 0.0, hd = 0.0, iou_sum = 0.0, mre_sum = 0.0;
        int n = 0;
        std::vector<std::vector<double>> probs;
        std::vector<int> labels;
    };
    std::map<std::string, Acc> accs;

    for (const ModelSample& s : samples) {
        Acc& a = accs[s.task.subtask_id];
        if (a.n == 0) a.task = s.task;
        const Prediction p = predict(s);
        switch (s.task.kind) {
            case TaskKind::Segmentation: {
                if (p.mask.size() != s.mask.size()) throw ShapeError("evaluate: mask size mismatch");
                const int h = s.image.h, w = s.image.w;
                a.dsc += foreground_class_mean(s.task.k, p.mask, s.mask,
                                               [](const auto& bp, const auto& bg) { return dsc(bp, bg); });
                a.hd += foreground_class_mean(s.task.k, p.mask, s.mask, [h, w](const auto& bp, const auto& bg) {
                    return hausdorff(h, w, bp, bg);
                });
                break;
            }
            case TaskKind::Classification:
                if (static_cast<int>(p.probs.size()) != s.task.k)
                    throw ShapeError("evaluate: class probability size mismatch");
                a.probs.push_back(p.probs);
                a.labels.push_back(s.class_index);
                break;
            case TaskKind::Detection:
                a.iou_sum += iou(p.box, s.box);
                break;
            case TaskKind::Regression: {
                std::vector<Keypoint> gt_px;
                for (const Keypoint& kp : s.keypoints_norm)
                    gt_px.push_back(Keypoint{kp.x * s.orig_w, kp.y * s.orig_h});
                a.mre_sum += mre(p.keypoints, gt_px, s.orig_h, s.orig_w);
                break;
            }
        }
        ++a.n;
    }

    EvalReport report;
    for (auto& [id, a] : accs) {
        auto& out = report.subtasks[id];
        switch (a.task.kind) {
            case TaskKind::Segmentation:
                out["dsc"] = a.dsc / a.n;
                out["hd"] = a.hd / a.n;
                break;
            case TaskKind::Classification: {
                out["auc"] = auc_macro(a.probs, a.labels, a.task.k);
                ConfusionMatrix cm(a.task.k);
                for (std::size_t i = 0; i < a.labels.size(); ++i) {
                    const auto best = std::max_element(a.probs[i].begin(), a.probs[i].end());
                    cm.add(a.labels[i], static_cast<int>(best - a.probs[i].begin()));
                }
                const F1Mcc fm = f1_mcc(cm);
                out["f1"] = fm.f1;
                out["mcc"] = fm.mcc;
                break;
            }
            case TaskKind::Detection:
                out["iou"] = a.iou_sum / a.n;
                break;
            case TaskKind::Regression:
                out["mre"] = a.mre_sum / a.n;
                break;
        }
    }
    report.compute_means();
    return report;
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<ModelSample>& samples) {
    return evaluate_with([&model](const ModelSample& s) { return predict_sample(model, s); }, samples);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<double> step_losses;  // one entry per optimization step
    std::string last_checkpoint;
    std::string best_checkpoint;
    std::string metric_log;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::int64_t total_steps = 0;
};

template <typename T>
class Trainer {
public:
    Trainer(Model<T>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) { cfg_.validate(); }

    /// Trains from scratch. Validation uses `val` when non-empty, otherwise
    /// the training set.
    TrainResult fit(const std::vector<Sample>& train, const std::vector<Sample>& val = {}) {
        return run(train, val, nullptr);
    }

    /// Continues a run from an epoch-boundary checkpoint written by fit().
    /// Config, data, and seed must match the original run.
    TrainResult resume(const std::string& checkpoint_path, const std::vector<Sample>& train,
                       const std::vector<Sample>& val = {}) {
        const CheckpointData data = read_checkpoint(checkpoint_path);
        return run(train, val, &data);
    }

private:
    Model<T>& model_;
    TrainConfig cfg_;

    TrainResult run(const std::vector<Sample>& train, const std::vector<Sample>& val,
                    const CheckpointData* start) {
        namespace fs = std::filesystem;
        const ModelConfig& mc = model_.config();

        // Index training samples by subtask, in model task order. A subtask
        // with no samples simply does not participate; its head never sees a
        // gradient and stays at initialization.
        if (train.empty()) throw DataError("train: empty training set");
        std::vector<std::vector<int>> by_task(mc.tasks.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            const TaskSpec* t = mc.find_task(train[i].task.subtask_id);
            if (!t) throw DataError("train: sample '" + train[i].id + "' references unknown subtask '" +
                                    train[i].task.subtask_id + "'");
            by_task[t - mc.tasks.data()].push_back(static_cast<int>(i));
        }

        std::int64_t steps_per_epoch = 0;
        for (const auto& idx : by_task)
            steps_per_epoch += (static_cast<std::int64_t>(idx.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
        const std::int64_t total_steps = steps_per_epoch * cfg_.epochs;

        const CosineSchedule back_sched{cfg_.backbone_lr, cfg_.min_lr, total_steps};
        const CosineSchedule head_sched{cfg_.head_lr, cfg_.min_lr, total_steps};
        AdamW<T> opt(make_param_groups(model_, back_sched, head_sched), cfg_.optim);

        std::int64_t start_epoch = 0;
        if (start) {
            restore_model(model_, *start);
            restore_optimizer(opt, *start);
            if (start->progress.seed != cfg_.seed)
                throw CheckpointError("resume: checkpoint seed disagrees with config");
            if (start->schedules.size() != 2 || start->schedules[0].total_steps != total_steps ||
                start->schedules[0].base_lr != cfg_.backbone_lr || start->schedules[1].base_lr != cfg_.head_lr)
                throw CheckpointError("resume: checkpoint schedule disagrees with config");
            start_epoch = start->progress.epoch;
            if (start_epoch >= cfg_.epochs)
                throw CheckpointError("resume: checkpoint is already past the configured epochs");
        }

        // Model-space caches: training labels are augmentation-invariant, so
        // only validation samples are mapped once up front.
        const std::vector<Sample>& val_src = val.empty() ? train : val;
        std::vector<ModelSample> val_ms;
        val_ms.reserve(val_src.size());
        for (const Sample& s : val_src) val_ms.push_back(resize_to_model(s, mc.input_h, mc.input_w));

        TrainResult result;
        result.total_steps = total_steps;
        std::int64_t global_step = start ? start->progress.step : 0;

        std::ofstream log;
        if (!cfg_.out_dir.empty()) {
            fs::create_directories(cfg_.out_dir);
            result.metric_log = (fs::path(cfg_.out_dir) / "metrics.log").string();
            log.open(result.metric_log, start ? std::ios::app : std::ios::trunc);
            if (!log) throw DataError("train: cannot open metric log '" + result.metric_log + "'");
        }

        for (int epoch = static_cast<int>(start_epoch); epoch < cfg_.epochs; ++epoch) {
            // Per-subtask shuffles, then fixed round-robin interleaving.
            std::vector<std::vector<std::vector<int>>> chunks(by_task.size());
            std::size_t max_chunks = 0;
            for (std::size_t t = 0; t < by_task.size(); ++t) {
                std::vector<int> order = by_task[t];
                std::mt19937_64 rng(
                    derive_seed(cfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch),
                                fnv1a64(mc.tasks[t].subtask_id)));
                std::shuffle(order.begin(), order.end(), rng);
                for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
                    const std::size_t end = std::min(order.size(), at + cfg_.batch_size);
                    chunks[t].emplace_back(order.begin() + at, order.begin() + end);
                }
                max_chunks = std::max(max_chunks, chunks[t].size());
            }

            for (std::size_t b = 0; b < max_chunks; ++b) {
                for (std::size_t t = 0; t < chunks.size(); ++t) {
                    if (b >= chunks[t].size()) continue;

                    std::mt19937_64 aug_rng(
                        derive_seed(cfg_.seed, "aug", static_cast<std::uint64_t>(global_step)));
                    std::vector<ModelSample> batch_ms;
                    batch_ms.reserve(chunks[t][b].size());
                    for (int si : chunks[t][b])
                        batch_ms.push_back(resize_to_model(augment(train[si], aug_rng, cfg_.augment),
                                                           mc.input_h, mc.input_w));
                    std::vector<const ModelSample*> batch;
                    for (const ModelSample& ms : batch_ms) batch.push_back(&ms);

                    const Tensor<T> images = image_batch<T>(batch);
                    const TargetBatch<T> targets = make_targets<T>(batch);

                    std::mt19937_64 drop_rng(
                        derive_seed(cfg_.seed, "dropout", static_cast<std::uint64_t>(global_step)));
                    opt.clear_grads();
                    Tensor<T> out = model_.forward(images, mc.tasks[t].subtask_id, true, &drop_rng);
                    Tensor<T> loss = composite_loss(out, targets, cfg_.loss);
                    loss.backward();
                    opt.step();

                    result.step_losses.push_back(static_cast<double>(loss.data()[0]));
                    ++global_step;
                }
            }

            if (!cfg_.out_dir.empty()) {
                result.last_checkpoint = (fs::path(cfg_.out_dir) / "last.ckpt").string();
                save_checkpoint(result.last_checkpoint, model_, &opt,
                                TrainProgress{cfg_.seed, epoch + 1, global_step});
            }

            const bool validate_now =
                cfg_.validate_every > 0 &&
                ((epoch + 1) % cfg_.validate_every == 0 || epoch + 1 == cfg_.epochs);
            if (validate_now) {
                const double val_loss = validation_loss(val_ms);
                const EvalReport report = evaluate(model_, val_ms);
                if (log.is_open()) {
                    log << "epoch=" << (epoch + 1) << " step=" << global_step
                        << " val_loss=" << detail::fmt_double(val_loss);
                    for (const auto& [id, metrics] : report.subtasks)
                        for (const auto& [name, value] : metrics)
                            log << " " << id << "." << name << "=" << detail::fmt_double(value);
                    for (const auto& [name, value] : report.means)
                        log << " " << name << "=" << detail::fmt_double(value);
                    log << "\n";
                    log.flush();
                }
                if (val_loss < result.best_val_loss) {
                    result.best_val_loss = val_loss;
                    if (!cfg_.out_dir.empty()) {
                        result.best_checkpoint = (fs::path(cfg_.out_dir) / "best.ckpt").string();
                        save_checkpoint(result.best_checkpoint, model_, &opt,
                                        TrainProgress{cfg_.seed, epoch + 1, global_step});
                    }
                }
            }

            if (cfg_.stop_after_epoch > 0 && epoch + 1 >= cfg_.stop_after_epoch) break;
        }
        return result;
    }

    /// Mean over subtasks of the per-sample-mean composite loss, computed in
    /// eval mode (no dropout, no augmentation, no graph).
    double validation_loss(const std::vector<ModelSample>& val_ms) {
        NoGradGuard ng;
        const ModelConfig& mc = model_.config();
        std::vector<std::vector<const ModelSample*>> by_task(mc.tasks.size());
        for (const ModelSample& s : val_ms) {
            const TaskSpec* t = mc.find_task(s.task.subtask_id);
            if (!t) throw DataError("validate: sample '" + s.id + "' references unknown subtask");
            by_task[t - mc.tasks.data()].push_back(&s);
        }
        double acc = 0.0;
        int reported = 0;
        for (std::size_t t = 0; t < by_task.size(); ++t) {
            if (by_task[t].empty()) continue;
            double task_sum = 0.0;
            for (std::size_t at = 0; at < by_task[t].size(); at += cfg_.batch_size) {
                const std::size_t end = std::min(by_task[t].size(), at + cfg_.batch_size);
                const std::vector<const ModelSample*> batch(by_task[t].begin() + at, by_task[t].begin() + end);
                const Tensor<T> images = image_batch<T>(batch);
                const Tensor<T> out = model_.forward(images, mc.tasks[t].subtask_id, false);
                const Tensor<T> loss = composite_loss(out, make_targets<T>(batch), cfg_.loss);
                task_sum += static_cast<double>(loss.data()[0]) * static_cast<double>(batch.size());
            }
            acc += task_sum / static_cast<double>(by_task[t].size());
            ++reported;
        }
        return reported ? acc / reported : 0.0;
    }
};

}  // namespace mhmtl
