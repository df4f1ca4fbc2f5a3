// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics. All are pure functions on plain containers; none touch
// the autodiff graph. Real-valued metrics are computed in double throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mhmtl/common.hpp"
#include "mhmtl/task.hpp"

namespace mhmtl {

// ---------------------------------------------------------------------------
// Segmentation overlap
// ---------------------------------------------------------------------------

/// Dice similarity coefficient of two binary masks: 2|A∩B| / (|A|+|B|).
/// Two empty masks agree perfectly and score 1.
inline double dsc(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("dsc: mask sizes differ");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        a += p;
        b += g;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace detail {

/// Boundary pixels of a binary mask: foreground with at least one background
/// 4-neighbor, or foreground on the image edge.
inline std::vector<std::pair<int, int>> mask_boundary(int h, int w, const std::vector<std::uint8_t>& m) {
    if (m.size() != static_cast<std::size_t>(h) * w) throw ShapeError("mask_boundary: size mismatch");
    std::vector<std::pair<int, int>> out;
    auto fg = [&](int y, int x) { return m[static_cast<std::size_t>(y) * w + x] != 0; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) continue;
            const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            if (edge || !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))
                out.emplace_back(y, x);
        }
    return out;
}

inline double directed_hausdorff(const std::vector<std::pair<int, int>>& from,
                                 const std::vector<std::pair<int, int>>& to) {
    double worst = 0.0;
    for (const auto& [fy, fx] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [ty, tx] : to) {
            const double dy = fy - ty, dx = fx - tx;
            best = std::min(best, dy * dy + dx * dx);
            if (best == 0.0) break;
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

}  // namespace detail

/// Symmetric Hausdorff distance between mask boundaries, in pixels.
/// One empty mask scores the image diagonal (total-metric penalty); two
/// empty masks score 0.
inline double hausdorff(int h, int w, const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& gt) {
    const auto bp = detail::mask_boundary(h, w, pred);
    const auto bg = detail::mask_boundary(h, w, gt);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty()) return std::hypot(static_cast<double>(h), static_cast<double>(w));
    return std::max(detail::directed_hausdorff(bp, bg), detail::directed_hausdorff(bg, bp));
}

/// Per-foreground-class mean of a binary mask metric over class-index maps.
template <typename F>
double foreground_class_mean(int k, const std::vector<int>& pred, const std::vector<int>& gt, F&& binary_metric) {
    if (k < 2) throw ContractError("foreground_class_mean: need at least one foreground class");
    if (pred.size() != gt.size()) throw ShapeError("foreground_class_mean: map sizes differ");
    double acc = 0.0;
    for (int c = 1; c < k; ++c) {
        std::vector<std::uint8_t> bp(pred.size()), bg(gt.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            bp[i] = pred[i] == c;
            bg[i] = gt[i] == c;
        }
        acc += binary_metric(bp, bg);
    }
    return acc / (k - 1);
}

// ---------------------------------------------------------------------------
// Ranking and confusion-matrix statistics
// ---------------------------------------------------------------------------

/// Binary AUC as the Mann-Whitney rank statistic; tied scores count half.
/// Requires at least one positive and one negative label.
inline double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc_binary: scores/labels length mismatch");
    std::int64_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ContractError("auc_binary: labels must be 0/1");
        pos += l;
    }
    const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
    if (pos == 0 || neg == 0) throw ContractError("auc_binary: needs both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks across tie groups, then sum the positive ranks.
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double u = pos_rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Macro one-vs-rest AUC over per-sample class probability rows. Classes
/// with a single label value are excluded; if every class is degenerate the
/// result is the uninformative 0.5.
inline double auc_macro(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, int k) {
    if (probs.size() != labels.size()) throw ShapeError("auc_macro: probs/labels length mismatch");
    if (k < 2) throw ContractError("auc_macro: need k >= 2");
    double acc = 0.0;
    int counted = 0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> s(probs.size());
        std::vector<int> l(labels.size());
        std::int64_t pos = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i].size() != static_cast<std::size_t>(k)) throw ShapeError("auc_macro: row width != k");
            s[i] = probs[i][static_cast<std::size_t>(c)];
            l[i] = labels[i] == c;
            pos += l[i];
        }
        if (pos == 0 || pos == static_cast<std::int64_t>(l.size())) continue;  // degenerate class
        acc += auc_binary(s, l);
        ++counted;
    }
    return counted == 0 ? 0.5 : acc / counted;
}

/// KxK label-count matrix; rows index ground truth, columns predictions.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(int k_) : k(k_), counts(static_cast<std::size_t>(k_) * k_, 0) {
        if (k_ < 2) throw ContractError("confusion matrix: need k >= 2");
    }

    void add(int truth, int pred) {
        if (truth < 0 || truth >= k || pred < 0 || pred >= k)
            throw ContractError("confusion matrix: label out of range");
        ++counts[static_cast<std::size_t>(truth) * k + pred];
    }

    std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * k + pred]; }

    std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

struct F1Mcc {
    double f1 = 0.0;
    double mcc = 0.0;
};

/// Macro F1 (per-class 2TP/(2TP+FP+FN), zero on zero denominator) and the
/// multiclass Matthews correlation coefficient
///   (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)),
/// zero when either variance factor vanishes.
inline F1Mcc f1_mcc(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw ContractError("f1_mcc: empty confusion matrix");
    const int k = cm.k;
    double f1_acc = 0.0;
    for (int c = 0; c < k; ++c) {
        std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::int64_t denom = 2 * tp + fp + fn;
        f1_acc += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }

    const double s = static_cast<double>(cm.total());
    double c_correct = 0.0, pt = 0.0, pp = 0.0, tt = 0.0;
    for (int i = 0; i < k; ++i) {
        c_correct += static_cast<double>(cm.at(i, i));
        double p_k = 0.0, t_k = 0.0;
        for (int o = 0; o < k; ++o) {
            p_k += static_cast<double>(cm.at(o, i));
            t_k += static_cast<double>(cm.at(i, o));
        }
        pt += p_k * t_k;
        pp += p_k * p_k;
        tt += t_k * t_k;
    }
    const double var_p = s * s - pp, var_t = s * s - tt;
    F1Mcc out;
    out.f1 = f1_acc / k;
    out.mcc = (var_p <= 0.0 || var_t <= 0.0) ? 0.0 : (c_correct * s - pt) / std::sqrt(var_p * var_t);
    return out;
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

/// Intersection over union of two center/size boxes; an empty union scores 0.
inline double iou(const Box& a, const Box& b) {
    if (a.w < 0 || a.h < 0 || b.w < 0 || b.h < 0) throw ContractError("iou: negative box extent");
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    // Areas from the same corner values as the intersection, so identical
    // boxes score exactly 1 despite rounding in the corner conversion.
    const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

/// Mean radial error in original-resolution pixels: predictions are
/// normalized (x,y); ground truth is in pixels of the (orig_h, orig_w) image.
inline double mre(const std::vector<Keypoint>& pred_norm, const std::vector<Keypoint>& gt_px, int orig_h,
                  int orig_w) {
    if (pred_norm.size() != gt_px.size() || pred_norm.empty())
        throw ShapeError("mre: keypoint lists must be non-empty and equal length");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred_norm.size(); ++i) {
        const double px = pred_norm[i].x * orig_w, py = pred_norm[i].y * orig_h;
        acc += std::hypot(px - gt_px[i].x, py - gt_px[i].y);
    }
    return acc / static_cast<double>(pred_norm.size());
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

/// Per-subtask metric values plus per-metric means over subtasks, serialized
/// as sorted "key = value" lines. Subtask keys are "<id>.<metric>"; mean keys
/// are "mean_<metric>".
struct EvalReport {
    std::map<std::string, std::map<std::string, double>> subtasks;
    std::map<std::string, double> means;

    /// Unweighted mean of each metric over the subtasks reporting it.
    void compute_means() {
        means.clear();
        std::map<std::string, std::pair<double, int>> acc;
        for (const auto& [id, metrics] : subtasks)
            for (const auto& [name, value] : metrics) {
                acc[name].first += value;
                ++acc[name].second;
            }
        for (const auto& [name, sum_count] : acc)
            means["mean_" + name] = sum_count.first / sum_count.second;
    }

    std::string serialize() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& [id, metrics] : subtasks)
            for (const auto& [name, value] : metrics) os << id << "." << name << " = " << value << "\n";
        for (const auto& [name, value] : means) os << name << " = " << value << "\n";
        return os.str();
    }

    static EvalReport parse(const std::string& text) {
        EvalReport r;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) throw DataError("eval report: malformed line '" + line + "'");
            const std::string key = line.substr(0, eq);
            const double value = std::stod(line.substr(eq + 3));
            const auto dot = key.find('.');
            if (key.rfind("mean_", 0) == 0 && dot == std::string::npos)
                r.means[key] = value;
            else if (dot != std::string::npos)
                r.subtasks[key.substr(0, dot)][key.substr(dot + 1)] = value;
            else
                throw DataError("eval report: unrecognized key '" + key + "'");
        }
        return r;
    }
};

}  // namespace mhmtl
