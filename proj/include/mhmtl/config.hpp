// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a single JSON document with `model`, `optim`, and
// `data` sections plus top-level `seed`, `deterministic`, and `out`. Every
// parse failure raises ConfigError naming the offending field.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"
#include "mhmtl/model.hpp"
#include "mhmtl/train.hpp"

namespace mhmtl {

namespace detail {

using json = nlohmann::json;

inline const json& need(const json& j, const std::string& key, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) throw ConfigError("config: missing field '" + where + key + "'");
    return *it;
}

template <typename V>
V get_as(const json& j, const std::string& where) {
    try {
        return j.get<V>();
    } catch (const json::exception&) {
        throw ConfigError("config: invalid value for '" + where + "'");
    }
}

template <typename V>
V get_req(const json& j, const std::string& key, const std::string& where) {
    return get_as<V>(need(j, key, where), where + key);
}

template <typename V>
V get_or(const json& j, const std::string& key, V def, const std::string& where) {
    const auto it = j.find(key);
    return it == j.end() ? def : get_as<V>(*it, where + key);
}

}  // namespace detail

/// Synthetic-data request: per-subtask sample counts and the original-
/// resolution range. Validation samples come from an independent stream.
struct SynthSpec {
    int count_per_task = 16;
    int val_count_per_task = 0;  // 0: validation reuses the training set
    int orig_lo = 300;
    int orig_hi = 800;
};

struct DataConfig {
    bool use_synth = false;
    SynthSpec synth;
    std::string train_manifest;
    std::string val_manifest;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;  // seed and out_dir are injected from the top level
    DataConfig data;
    std::uint64_t seed = 0;
    bool has_seed = false;
    bool deterministic = true;
    std::string out;

    void validate() const {
        model.validate();
        train.validate();
        if (deterministic && !has_seed) throw ConfigError("config: 'seed' is required when deterministic");
        if (data.use_synth && !data.train_manifest.empty())
            throw ConfigError("config: 'data' must use either 'synth' or 'train_manifest', not both");
        if (data.use_synth) {
            if (data.synth.count_per_task < 1)
                throw ConfigError("config: 'data.synth.count_per_task' must be >= 1");
            if (data.synth.val_count_per_task < 0)
                throw ConfigError("config: 'data.synth.val_count_per_task' must be >= 0");
        }
    }

    static RunConfig parse(const detail::json& j) {
        using detail::get_or;
        using detail::get_req;
        using detail::need;
        RunConfig cfg;

        if (j.contains("seed")) {
            cfg.seed = detail::get_as<std::uint64_t>(j.at("seed"), "seed");
            cfg.has_seed = true;
        }
        cfg.deterministic = get_or<bool>(j, "deterministic", true, "");
        cfg.out = get_or<std::string>(j, "out", "", "");

        const detail::json& jm = need(j, "model", "");
        cfg.model.input_h = get_or<int>(jm, "input_h", cfg.model.input_h, "model.");
        cfg.model.input_w = get_or<int>(jm, "input_w", cfg.model.input_w, "model.");
        cfg.model.encoder_widths =
            get_or<std::vector<int>>(jm, "encoder_widths", cfg.model.encoder_widths, "model.");
        cfg.model.convs_per_stage = get_or<int>(jm, "convs_per_stage", cfg.model.convs_per_stage, "model.");
        cfg.model.fpn_channels = get_or<int>(jm, "fpn_channels", cfg.model.fpn_channels, "model.");
        cfg.model.dropout_rate = get_or<double>(jm, "dropout", cfg.model.dropout_rate, "model.");
        const detail::json& jt = need(jm, "tasks", "model.");
        if (!jt.is_array() || jt.empty()) throw ConfigError("config: 'model.tasks' must be a non-empty array");
        for (std::size_t i = 0; i < jt.size(); ++i) {
            const std::string where = "model.tasks[" + std::to_string(i) + "].";
            TaskSpec t;
            t.subtask_id = get_req<std::string>(jt[i], "id", where);
            const std::string kind = get_req<std::string>(jt[i], "kind", where);
            try {
                t.kind = task_kind_from_name(kind);
            } catch (const ConfigError&) {
                throw ConfigError("config: invalid value for '" + where + "kind': unknown task kind '" +
                                  kind + "'");
            }
            t.k = get_or<int>(jt[i], "k", 0, where);
            t.m = get_or<int>(jt[i], "m", 0, where);
            cfg.model.tasks.push_back(t);
        }

        if (j.contains("optim")) {
            const detail::json& jo = j.at("optim");
            cfg.train.epochs = get_or<int>(jo, "epochs", cfg.train.epochs, "optim.");
            cfg.train.batch_size = get_or<int>(jo, "batch_size", cfg.train.batch_size, "optim.");
            cfg.train.backbone_lr = get_or<double>(jo, "backbone_lr", cfg.train.backbone_lr, "optim.");
            cfg.train.head_lr = get_or<double>(jo, "head_lr", cfg.train.head_lr, "optim.");
            cfg.train.min_lr = get_or<double>(jo, "min_lr", cfg.train.min_lr, "optim.");
            cfg.train.validate_every = get_or<int>(jo, "validate_every", cfg.train.validate_every, "optim.");
            cfg.train.augment = get_or<bool>(jo, "augment", cfg.train.augment, "optim.");
            cfg.train.optim.beta1 = get_or<double>(jo, "beta1", cfg.train.optim.beta1, "optim.");
            cfg.train.optim.beta2 = get_or<double>(jo, "beta2", cfg.train.optim.beta2, "optim.");
            cfg.train.optim.eps = get_or<double>(jo, "eps", cfg.train.optim.eps, "optim.");
            cfg.train.optim.weight_decay =
                get_or<double>(jo, "weight_decay", cfg.train.optim.weight_decay, "optim.");
        }

        if (j.contains("data")) {
            const detail::json& jd = j.at("data");
            if (jd.contains("synth")) {
                cfg.data.use_synth = true;
                const detail::json& js = jd.at("synth");
                cfg.data.synth.count_per_task =
                    get_or<int>(js, "count_per_task", cfg.data.synth.count_per_task, "data.synth.");
                cfg.data.synth.val_count_per_task =
                    get_or<int>(js, "val_count_per_task", cfg.data.synth.val_count_per_task, "data.synth.");
                cfg.data.synth.orig_lo = get_or<int>(js, "orig_lo", cfg.data.synth.orig_lo, "data.synth.");
                cfg.data.synth.orig_hi = get_or<int>(js, "orig_hi", cfg.data.synth.orig_hi, "data.synth.");
            }
            cfg.data.train_manifest = get_or<std::string>(jd, "train_manifest", "", "data.");
            cfg.data.val_manifest = get_or<std::string>(jd, "val_manifest", "", "data.");
        }

        cfg.train.seed = cfg.seed;
        cfg.validate();
        return cfg;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("config: cannot open '" + path + "'");
        detail::json j;
        try {
            j = detail::json::parse(is);
        } catch (const detail::json::exception& e) {
            throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
        }
        return parse(j);
    }
};

}  // namespace mhmtl
