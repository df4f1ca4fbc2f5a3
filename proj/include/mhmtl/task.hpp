// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "mhmtl/common.hpp"

namespace mhmtl {

enum class TaskKind { Segmentation, Classification, Detection, Regression };

inline bool is_dense(TaskKind k) { return k == TaskKind::Segmentation || k == TaskKind::Detection; }
inline bool is_global(TaskKind k) { return !is_dense(k); }

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Segmentation: return "segmentation";
        case TaskKind::Classification: return "classification";
        case TaskKind::Detection: return "detection";
        case TaskKind::Regression: return "regression";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
    if (s == "segmentation") return TaskKind::Segmentation;
    if (s == "classification") return TaskKind::Classification;
    if (s == "detection") return TaskKind::Detection;
    if (s == "regression") return TaskKind::Regression;
    throw ConfigError("unknown task kind '" + s + "'");
}

/// One subtask: a kind plus its class count K (segmentation counts the
/// background) or keypoint count M.
struct TaskSpec {
    std::string subtask_id;
    TaskKind kind = TaskKind::Classification;
    int k = 0;  // classes, Segmentation/Classification only
    int m = 0;  // keypoints, Regression only

    void validate() const {
        if (subtask_id.empty()) throw ConfigError("task: subtask_id must be non-empty");
        const bool wants_k = kind == TaskKind::Segmentation || kind == TaskKind::Classification;
        if (wants_k && k < 2)
            throw ConfigError("task '" + subtask_id + "': k must be >= 2");
        if (!wants_k && k != 0)
            throw ConfigError("task '" + subtask_id + "': k only valid for segmentation/classification");
        if (kind == TaskKind::Regression && m < 1)
            throw ConfigError("task '" + subtask_id + "': m must be >= 1");
        if (kind != TaskKind::Regression && m != 0)
            throw ConfigError("task '" + subtask_id + "': m only valid for regression");
    }
};

/// Axis-aligned box as normalized center/size fractions of the image.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
};

/// A 2-d point; pixel or normalized units depending on context.
struct Keypoint {
    double x = 0, y = 0;
};

/// Grid mapping of a normalized box center onto the h' x w' detection grid:
/// i = floor(y*h'), j = floor(x*w'). Coordinates at or past 1.0 clamp to the
/// last cell (with a warning); negatives are a contract violation.
inline std::pair<int, int> encode_detection_target(double x_gt, double y_gt, int grid_h, int grid_w) {
    if (grid_h < 1 || grid_w < 1) throw ContractError("encode_detection_target: empty grid");
    if (x_gt < 0.0 || y_gt < 0.0) throw ContractError("encode_detection_target: negative center coordinate");
    int i = static_cast<int>(y_gt * grid_h);
    int j = static_cast<int>(x_gt * grid_w);
    if (y_gt >= 1.0 || x_gt >= 1.0) {
        std::cerr << "[mhmtl] warning: detection center (" << x_gt << "," << y_gt
                  << ") outside [0,1); clamping to last grid cell\n";
    }
    if (i >= grid_h) i = grid_h - 1;
    if (j >= grid_w) j = grid_w - 1;
    return {i, j};
}

}  // namespace mhmtl
