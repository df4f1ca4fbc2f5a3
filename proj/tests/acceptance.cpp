// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Each criterion is scored independently and prints one
// [PASS]/[FAIL] line; the process exits nonzero if any criterion fails.
// Usage: acceptance <path-to-cli-binary>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhmtl/checkpoint.hpp"
#include "mhmtl/config.hpp"
#include "mhmtl/train.hpp"
#include "testutil.hpp"

using namespace mhmtl;
namespace fs = std::filesystem;

namespace {

std::string g_cli;

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& msg) {
    if (!ok) throw Failure(msg);
}

void check_near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol))
        throw Failure(what + ": got " + std::to_string(got) + ", want " + std::to_string(want) +
                      " (tol " + std::to_string(tol) + ")");
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mhmtl_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& dir, std::string* output = nullptr) {
    const fs::path cap = dir / "capture.txt";
    const std::string cmd = g_cli + " " + args + " > " + cap.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) *output = slurp(cap);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// -----------------------------------------------------------------------
// Criterion 1: finite-difference gradient checks for every op and loss.
// -----------------------------------------------------------------------

using T64 = Tensor<double>;

T64 rand_leaf(std::mt19937_64& rng, Shape shape, double lo, double hi) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return T64::from_data(std::move(shape), testutil::random_vec(rng, n, lo, hi), true);
}

/// Scalarizes an op output against a random weighting so that every output
/// element influences the loss differently. The weighting is derived from a
/// fixed seed: finite differencing re-evaluates the loss many times and every
/// evaluation must see the same weights.
T64 weighted_sum(const T64& y, std::uint64_t wseed) {
    std::mt19937_64 wrng(wseed);
    const auto w = T64::from_data(y.shape(), testutil::random_vec(wrng, y.numel(), -1.0, 1.0));
    return sum(mul(y, w));
}

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    constexpr int kInstances = 20;
    constexpr double kSmooth = 1e-4;
    constexpr double kGeneral = 1e-3;

    struct Suite {
        std::string name;
        double tol;
        std::function<double(std::mt19937_64&)> run;  // returns worst rel err
    };

    const auto unary = [](auto op, Shape shape, double lo, double hi) {
        return [op, shape, lo, hi](std::mt19937_64& rng) {
            T64 x = rand_leaf(rng, shape, lo, hi);
            const std::uint64_t ws = rng();
            return testutil::gradcheck([&] { return weighted_sum(op(x), ws); }, {x});
        };
    };

    std::vector<Suite> suites;
    suites.push_back({"add", kSmooth, [](std::mt19937_64& rng) {
                          T64 a = rand_leaf(rng, {2, 3, 4}, -1, 1), b = rand_leaf(rng, {2, 3, 4}, -1, 1);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck([&] { return weighted_sum(add(a, b), ws); }, {a, b});
                      }});
    suites.push_back({"mul", kSmooth, [](std::mt19937_64& rng) {
                          T64 a = rand_leaf(rng, {3, 5}, -1, 1), b = rand_leaf(rng, {3, 5}, -1, 1);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck([&] { return weighted_sum(mul(a, b), ws); }, {a, b});
                      }});
    suites.push_back({"scale", kSmooth, unary([](const T64& x) { return scale(x, 1.7); }, {4, 3}, -1, 1)});
    suites.push_back({"relu", kGeneral, [](std::mt19937_64& rng) {
                          // Kink at 0: keep samples away from it.
                          T64 x = T64::from_data({3, 7}, testutil::random_vec_off_origin(rng, 21), true);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck([&] { return weighted_sum(relu(x), ws); }, {x});
                      }});
    suites.push_back({"sigmoid", kSmooth, unary([](const T64& x) { return sigmoid(x); }, {2, 9}, -3, 3)});
    suites.push_back(
        {"log_clamped", kSmooth, unary([](const T64& x) { return log_clamped(x); }, {2, 8}, 0.2, 3.0)});
    suites.push_back(
        {"softmax", kSmooth, unary([](const T64& x) { return softmax(x, 1); }, {2, 4, 3}, -2, 2)});
    suites.push_back({"affine", kSmooth, [](std::mt19937_64& rng) {
                          T64 x = rand_leaf(rng, {3, 4}, -1, 1);
                          T64 w = rand_leaf(rng, {5, 4}, -1, 1);
                          T64 b = rand_leaf(rng, {5}, -1, 1);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck([&] { return weighted_sum(affine(x, w, b), ws); },
                                                     {x, w, b});
                      }});
    suites.push_back({"conv2d", kSmooth, [](std::mt19937_64& rng) {
                          T64 x = rand_leaf(rng, {1, 2, 6, 6}, -1, 1);
                          T64 w = rand_leaf(rng, {3, 2, 3, 3}, -1, 1);
                          T64 b = rand_leaf(rng, {3}, -1, 1);
                          const int stride = 1 + static_cast<int>(rng() % 2);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck(
                              [&] { return weighted_sum(conv2d(x, w, b, stride, 1), ws); }, {x, w, b});
                      }});
    suites.push_back({"pool_avg_global", kSmooth,
                      unary([](const T64& x) { return pool_avg_global(x); }, {2, 3, 4, 4}, -1, 1)});
    suites.push_back({"pool_max2d", kGeneral, [](std::mt19937_64& rng) {
                          // Continuous draws never tie, so the max is locally smooth.
                          T64 x = rand_leaf(rng, {1, 2, 6, 6}, -1, 1);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck([&] { return weighted_sum(pool_max2d(x, 2, 2), ws); },
                                                     {x});
                      }});
    suites.push_back({"upsample_nearest", kSmooth,
                      unary([](const T64& x) { return upsample_nearest(x, 2); }, {1, 2, 3, 3}, -1, 1)});
    suites.push_back({"slice_channels", kSmooth,
                      unary([](const T64& x) { return slice_channels(x, 1, 3); }, {2, 4, 3, 3}, -1, 1)});
    suites.push_back({"concat_channels", kSmooth, [](std::mt19937_64& rng) {
                          T64 a = rand_leaf(rng, {2, 2, 3, 3}, -1, 1);
                          T64 b = rand_leaf(rng, {2, 3, 3, 3}, -1, 1);
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck(
                              [&] { return weighted_sum(concat_channels(a, b), ws); }, {a, b});
                      }});
    suites.push_back({"sum", kSmooth, unary([](const T64& x) { return sum(x); }, {3, 6}, -1, 1)});
    suites.push_back({"mean", kSmooth, unary([](const T64& x) { return mean(x); }, {3, 6}, -1, 1)});
    suites.push_back({"dropout", kGeneral, [](std::mt19937_64& rng) {
                          T64 x = rand_leaf(rng, {2, 10}, -1, 1);
                          const std::uint64_t mask_seed = rng();
                          const std::uint64_t ws = rng();
                          return testutil::gradcheck(
                              [&] {
                                  std::mt19937_64 mask_rng(mask_seed);
                                  return weighted_sum(dropout(x, 0.3, true, mask_rng), ws);
                              },
                              {x});
                      }});
    suites.push_back({"dice_loss", kGeneral, [](std::mt19937_64& rng) {
                          const int n = 2, k = 3, h = 4, w = 4;
                          T64 probs = rand_leaf(rng, {n, k, h, w}, 0.05, 0.95);
                          std::vector<int> target(n * h * w);
                          for (auto& t : target) t = static_cast<int>(rng() % k);
                          return testutil::gradcheck([&] { return dice_loss(probs, target, 1e-6); }, {probs});
                      }});
    suites.push_back({"ce_loss", kSmooth, [](std::mt19937_64& rng) {
                          const int n = 4, k = 5;
                          T64 logits = rand_leaf(rng, {n, k}, -2, 2);
                          std::vector<int> labels(n);
                          for (auto& l : labels) l = static_cast<int>(rng() % k);
                          return testutil::gradcheck([&] { return ce_loss(logits, labels); }, {logits});
                      }});
    suites.push_back({"keypoint_mse", kSmooth, [](std::mt19937_64& rng) {
                          const int n = 3, m = 4;
                          T64 preds = rand_leaf(rng, {n, 2 * m}, 0.05, 0.95);
                          std::vector<double> targets = testutil::random_vec(rng, n * 2 * m, 0.05, 0.95);
                          return testutil::gradcheck([&] { return keypoint_mse(preds, targets); }, {preds});
                      }});
    suites.push_back({"detection_loss", kGeneral, [](std::mt19937_64& rng) {
                          const int n = 2, h = 4, w = 4;
                          std::vector<Box> boxes(n);
                          std::vector<double> vals(static_cast<std::size_t>(n) * 5 * h * w);
                          for (auto& v : vals) v = 0.05 + 0.9 * (rng() % 1000) / 1000.0;
                          for (auto& b : boxes) {
                              // Keep predictions away from the L1 kink at pred == target.
                              b = Box{0.131 + 0.7 * (rng() % 97) / 97.0, 0.137 + 0.7 * (rng() % 89) / 89.0,
                                      0.213, 0.217};
                          }
                          T64 preds = T64::from_data({n, 5, h, w}, std::move(vals), true);
                          return testutil::gradcheck([&] { return detection_loss(preds, boxes, 8.0); },
                                                     {preds});
                      }});

    for (const auto& s : suites) {
        std::mt19937_64 rng(fnv1a64(s.name));
        double worst = 0.0;
        for (int i = 0; i < kInstances; ++i) worst = std::max(worst, s.run(rng));
        check(worst < s.tol, "gradcheck '" + s.name + "' worst rel err " + std::to_string(worst) +
                                 " >= " + std::to_string(s.tol));
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check(secs < 60.0, "gradient suite took " + std::to_string(secs) + "s (budget 60s)");
}

// -----------------------------------------------------------------------
// Criterion 2: closed-form loss identities.
// -----------------------------------------------------------------------

void criterion_loss_identities() {
    {
        const int n = 2, k = 3, h = 4, w = 4;
        std::vector<int> target(n * h * w);
        std::mt19937_64 rng(2);
        for (auto& t : target) t = static_cast<int>(rng() % k);
        std::vector<double> probs(static_cast<std::size_t>(n) * k * h * w, 0.0);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p)
                probs[(static_cast<std::size_t>(b) * k + target[b * plane + p]) * plane + p] = 1.0;
        const auto loss = dice_loss(T64::from_data({n, k, h, w}, probs), target, 1e-6);
        check(loss.data()[0] <= 1e-5, "dice(one-hot perfect) = " + std::to_string(loss.data()[0]));
    }
    {
        const auto logits = T64::filled({3, 4}, 0.7);  // uniform rows
        const auto loss = ce_loss(logits, std::vector<int>{0, 2, 3});
        check_near(loss.data()[0], std::log(4.0), 1e-6, "ce(uniform, K=4)");
    }
    {
        const auto preds = T64::from_data({1, 2}, {0.0, 0.0});
        const auto loss = keypoint_mse(preds, std::vector<double>{1.0, 1.0});
        check(loss.data()[0] == 2.0, "keypoint mse M=1 corner value");
    }
    {
        const int h = 4, w = 4;
        const Box gt{0.3, 0.6, 0.25, 0.5};
        const auto [gi, gj] = encode_detection_target(gt.cx, gt.cy, h, w);
        std::vector<double> vals(5 * h * w, 0.4);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        const std::size_t cell = static_cast<std::size_t>(gi) * w + gj;
        vals[0 * plane + cell] = gt.cx;
        vals[1 * plane + cell] = gt.cy;
        vals[2 * plane + cell] = gt.w;
        vals[3 * plane + cell] = gt.h;
        for (std::size_t p = 0; p < plane; ++p) vals[4 * plane + p] = p == cell ? 20.0 : -20.0;
        const auto perfect = detection_loss(T64::from_data({1, 5, h, w}, vals), {gt}, 8.0);
        check(perfect.data()[0] < 1e-6, "detection perfect-prediction loss");

        // Scrambling every non-target cell must not move the loss at all.
        std::mt19937_64 rng(77);
        std::vector<double> scrambled = vals;
        for (int c = 0; c < 4; ++c)
            for (std::size_t p = 0; p < plane; ++p)
                if (p != cell) scrambled[static_cast<std::size_t>(c) * plane + p] = (rng() % 1000) / 1000.0;
        const auto moved = detection_loss(T64::from_data({1, 5, h, w}, scrambled), {gt}, 8.0);
        check(moved.data()[0] == perfect.data()[0], "detection loss non-target-cell invariance");
    }
}

// -----------------------------------------------------------------------
// Criterion 3: grid encode against a floor oracle; decode against a scan.
// -----------------------------------------------------------------------

void criterion_grid_mapping() {
    const int gh = 64, gw = 64;
    int checked = 0;
    for (int xi = 0; xi < 100; ++xi)
        for (int yi = 0; yi < 100; ++yi) {
            const double x = xi / 100.0, y = yi / 100.0;
            const auto [i, j] = encode_detection_target(x, y, gh, gw);
            const int oi = std::min(gh - 1, static_cast<int>(std::floor(y * gh)));
            const int oj = std::min(gw - 1, static_cast<int>(std::floor(x * gw)));
            check(i == oi && j == oj, "encode mismatch at x=" + std::to_string(x) + " y=" + std::to_string(y));
            ++checked;
        }
    check(checked == 10000, "grid sweep size");

    std::mt19937_64 rng(33);
    for (int inst = 0; inst < 50; ++inst) {
        const int h = 3 + static_cast<int>(rng() % 6), w = 3 + static_cast<int>(rng() % 6);
        auto pred = Tensor<float>::uniform({1, 5, h, w}, -2.0f, 2.0f, rng);
        const auto det = decode_detection(pred);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        const float* obj = pred.data().data() + 4 * plane;
        int bi = 0, bj = 0;
        float best = obj[0];
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                if (obj[static_cast<std::size_t>(i) * w + j] > best) {
                    best = obj[static_cast<std::size_t>(i) * w + j];
                    bi = i;
                    bj = j;
                }
        check(det.cell_i == bi && det.cell_j == bj, "decode argmax cell");
        check(det.score == sigmoid_scalar(best), "decode score");
    }
}

// -----------------------------------------------------------------------
// Criterion 4: metric implementations against brute-force oracles.
// -----------------------------------------------------------------------

void criterion_metric_oracles() {
    std::mt19937_64 rng(4);
    const auto rand_mask = [&rng](std::size_t n, double p_fg) {
        std::vector<std::uint8_t> m(n);
        for (auto& v : m) v = (rng() % 1000) / 1000.0 < p_fg;
        return m;
    };

    for (int i = 0; i < 120; ++i) {
        const std::size_t n = 1 + rng() % 40;
        const auto a = rand_mask(n, 0.4), b = rand_mask(n, 0.4);
        check(dsc(a, b) == testutil::oracle_dsc(a, b), "dsc oracle mismatch");
    }

    for (int i = 0; i < 120; ++i) {
        const int h = 2 + static_cast<int>(rng() % 7), w = 2 + static_cast<int>(rng() % 7);
        const auto a = rand_mask(static_cast<std::size_t>(h) * w, 0.3);
        const auto b = rand_mask(static_cast<std::size_t>(h) * w, 0.3);
        check_near(hausdorff(h, w, a, b), testutil::oracle_hausdorff(h, w, a, b), 1e-9, "hausdorff oracle");
    }
    {
        // 3-4-5 fixture: single boundary pixels at (0,0) and (3,4).
        std::vector<std::uint8_t> a(5 * 6, 0), b(5 * 6, 0);
        a[0] = 1;
        b[3 * 6 + 4] = 1;
        check(hausdorff(5, 6, a, b) == 5.0, "hausdorff 3-4-5 fixture");
    }

    // IoU against exact cell counting: all corners are multiples of 1/64, so
    // counting 1/64-cells gives exact dyadic areas.
    for (int i = 0; i < 120; ++i) {
        const auto coord = [&rng] { return static_cast<double>(rng() % 33) / 32.0; };
        const auto extent = [&rng] { return static_cast<double>(1 + rng() % 16) / 32.0; };
        const Box a{coord(), coord(), extent(), extent()};
        const Box b{coord(), coord(), extent(), extent()};
        long double inter = 0, area_a = 0, area_b = 0;
        for (int cy = -64; cy < 128; ++cy)
            for (int cx = -64; cx < 128; ++cx) {
                const double x0 = cx / 64.0, x1 = (cx + 1) / 64.0, y0 = cy / 64.0, y1 = (cy + 1) / 64.0;
                const bool in_a = x0 >= a.cx - a.w / 2 && x1 <= a.cx + a.w / 2 && y0 >= a.cy - a.h / 2 &&
                                  y1 <= a.cy + a.h / 2;
                const bool in_b = x0 >= b.cx - b.w / 2 && x1 <= b.cx + b.w / 2 && y0 >= b.cy - b.h / 2 &&
                                  y1 <= b.cy + b.h / 2;
                inter += in_a && in_b;
                area_a += in_a;
                area_b += in_b;
            }
        inter /= 64.0L * 64.0L;
        area_a /= 64.0L * 64.0L;
        area_b /= 64.0L * 64.0L;
        const double oracle =
            area_a + area_b - inter <= 0 ? 0.0 : static_cast<double>(inter / (area_a + area_b - inter));
        check_near(iou(a, b), oracle, 1e-9, "iou oracle");
    }

    for (int i = 0; i < 120; ++i) {
        const int n = 4 + static_cast<int>(rng() % 30);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (int s = 0; s < n; ++s) {
            scores[s] = static_cast<double>(rng() % 7) / 6.0;  // heavy ties
            labels[s] = static_cast<int>(rng() % 2);
            (labels[s] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        check_near(auc_binary(scores, labels), testutil::oracle_auc_binary(scores, labels), 1e-9,
                   "auc oracle");
    }

    for (int i = 0; i < 120; ++i) {
        const int k = 2 + static_cast<int>(rng() % 3);
        const int n = 5 + static_cast<int>(rng() % 40);
        std::vector<int> truth(n), pred(n);
        ConfusionMatrix cm(k);
        for (int s = 0; s < n; ++s) {
            truth[s] = static_cast<int>(rng() % k);
            pred[s] = static_cast<int>(rng() % k);
            cm.add(truth[s], pred[s]);
        }
        const F1Mcc fm = f1_mcc(cm);
        check_near(fm.f1, testutil::oracle_f1_macro(k, truth, pred), 1e-9, "f1 oracle");
        check_near(fm.mcc, testutil::oracle_mcc(k, truth, pred), 1e-9, "mcc oracle");
    }

    for (int i = 0; i < 120; ++i) {
        const int m = 1 + static_cast<int>(rng() % 6);
        const int oh = 100 + static_cast<int>(rng() % 900), ow = 100 + static_cast<int>(rng() % 900);
        std::vector<Keypoint> pred, gt;
        std::vector<std::pair<double, double>> opred, ogt;
        for (int p = 0; p < m; ++p) {
            const double px = (rng() % 1000) / 999.0, py = (rng() % 1000) / 999.0;
            const double gx = (rng() % 1000) * 1.0, gy = (rng() % 1000) * 1.0;
            pred.push_back({px, py});
            gt.push_back({gx, gy});
            opred.push_back({px, py});
            ogt.push_back({gx, gy});
        }
        check_near(mre(pred, gt, oh, ow), testutil::oracle_mre(opred, ogt, oh, ow), 1e-9, "mre oracle");
    }
}

// -----------------------------------------------------------------------
// Criterion 5: routing isolation, single-step and end-to-end.
// -----------------------------------------------------------------------

ModelConfig quad_config() {
    ModelConfig cfg;
    cfg.input_h = 64;
    cfg.input_w = 64;
    cfg.tasks = {
        TaskSpec{"seg0", TaskKind::Segmentation, 2, 0},
        TaskSpec{"cls0", TaskKind::Classification, 3, 0},
        TaskSpec{"det0", TaskKind::Detection, 0, 0},
        TaskSpec{"reg0", TaskKind::Regression, 0, 4},
    };
    return cfg;
}

std::vector<ModelSample> model_space(const std::vector<Sample>& ss) {
    std::vector<ModelSample> out;
    for (const auto& s : ss) out.push_back(resize_to_model(s, 64, 64));
    return out;
}

void criterion_routing_isolation() {
    Model<float> model(quad_config(), 7);
    const auto cfg = quad_config();

    for (const TaskSpec& active : cfg.tasks) {
        for (auto& p : model.parameters()) p.tensor.clear_grad();
        const auto ms = model_space(generate(90, active, 4, 300, 330));
        std::vector<const ModelSample*> batch;
        for (const auto& s : ms) batch.push_back(&s);
        auto out = model.forward(image_batch<float>(batch), active.subtask_id, false);
        auto loss = composite_loss(out, make_targets<float>(batch));
        loss.backward();

        bool active_head_has_grad = false;
        for (auto& p : model.parameters()) {
            if (!Model<float>::is_head_param(p.name)) continue;
            const bool own = p.name.rfind("head." + active.subtask_id + ".", 0) == 0;
            if (!p.tensor.has_grad()) {
                check(!own, "active head '" + p.name + "' has no grad");
                continue;
            }
            bool nonzero = false;
            for (float g : std::as_const(p.tensor).grad()) nonzero = nonzero || g != 0.0f;
            if (own)
                active_head_has_grad = active_head_has_grad || nonzero;
            else
                check(!nonzero, "head '" + p.name + "' received gradient from task '" +
                                    active.subtask_id + "'");
        }
        check(active_head_has_grad, "task '" + active.subtask_id + "' produced no head gradient");
    }

    // End-to-end: a full run on det0 only must leave every other head
    // bit-identical to initialization.
    Model<float> fresh(quad_config(), 23);
    std::map<std::string, std::vector<float>> init;
    for (auto& p : fresh.parameters())
        if (Model<float>::is_head_param(p.name)) init[p.name] = p.tensor.data();

    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.seed = 9;
    tc.validate_every = 0;
    Trainer<float> trainer(fresh, tc);
    trainer.fit(generate(41, cfg.tasks[2], 8, 300, 330));

    for (auto& p : fresh.parameters()) {
        if (!Model<float>::is_head_param(p.name) || p.name.rfind("head.det0.", 0) == 0) continue;
        const auto& now = p.tensor.data();
        const auto& was = init.at(p.name);
        check(now.size() == was.size() && std::equal(now.begin(), now.end(), was.begin()),
              "head '" + p.name + "' drifted during a det0-only run");
    }
}

// -----------------------------------------------------------------------
// Criterion 6: 16-sample overfit runs for each task kind.
// -----------------------------------------------------------------------

void criterion_overfit() {
    // Each kind gets its own memorization recipe: photometric augmentation
    // off, dropout off for the pooled-feature heads, and per-run data seeds
    // and learning rates tuned so 200 steps reach the thresholds.
    struct Run {
        TaskSpec task;
        std::uint64_t data_seed;
        int epochs, batch;
        double head_lr, backbone_lr, weight_decay, dropout;
        std::function<void(Model<float>&, const std::vector<ModelSample>&)> judge;
    };

    const auto eval_loss = [](Model<float>& m, const std::vector<ModelSample>& ms) {
        NoGradGuard ng;
        std::vector<const ModelSample*> batch;
        for (const auto& s : ms) batch.push_back(&s);
        const auto out = m.forward(image_batch<float>(batch), ms[0].task.subtask_id, false);
        return static_cast<double>(composite_loss(out, make_targets<float>(batch)).data()[0]);
    };

    std::vector<Run> runs;
    runs.push_back({TaskSpec{"seg0", TaskKind::Segmentation, 2, 0}, 101, 200, 16, 3e-2, 3e-3, 0.01, 0.2,
                    [&](Model<float>& m, const std::vector<ModelSample>& ms) {
                        const double loss = eval_loss(m, ms);
                        check(loss < 0.1, "segmentation dice loss " + std::to_string(loss) + " >= 0.1");
                    }});
    runs.push_back({TaskSpec{"cls0", TaskKind::Classification, 3, 0}, 101, 100, 8, 1e-2, 1e-3, 0.01, 0.0,
                    [&](Model<float>& m, const std::vector<ModelSample>& ms) {
                        const double loss = eval_loss(m, ms);
                        check(loss < 0.05, "classification ce " + std::to_string(loss) + " >= 0.05");
                    }});
    runs.push_back({TaskSpec{"det0", TaskKind::Detection, 0, 0}, 106, 100, 8, 3e-2, 3e-3, 0.01, 0.2,
                    [](Model<float>& m, const std::vector<ModelSample>& ms) {
                        NoGradGuard ng;
                        const auto [gh, gw] = m.detection_grid();
                        int hits = 0;
                        for (const auto& s : ms) {
                            const auto y = m.forward(image_batch<float>({&s}), "det0", false);
                            const auto det = decode_detection(y);
                            const auto [gi, gj] = encode_detection_target(s.box.cx, s.box.cy, gh, gw);
                            hits += det.cell_i == gi && det.cell_j == gj;
                        }
                        check(hits >= 15, "detection argmax hit " + std::to_string(hits) + "/16 cells");
                    }});
    runs.push_back({TaskSpec{"reg0", TaskKind::Regression, 0, 4}, 108, 200, 16, 5e-2, 4e-3, 0.0, 0.0,
                    [](Model<float>& m, const std::vector<ModelSample>& ms) {
                        const EvalReport r = evaluate(m, ms);
                        const double v = r.subtasks.at("reg0").at("mre");
                        check(v < 5.0, "regression mre " + std::to_string(v) + "px >= 5px");
                    }});

    for (const auto& run : runs) {
        const auto t0 = std::chrono::steady_clock::now();
        ModelConfig mc;
        mc.input_h = 64;
        mc.input_w = 64;
        mc.dropout_rate = run.dropout;
        mc.tasks = {run.task};
        Model<float> model(mc, 19);

        const auto data = generate(run.data_seed, run.task, 16, 300, 330);
        TrainConfig tc;
        tc.epochs = run.epochs;  // epochs * ceil(16 / batch) == 200 steps
        tc.batch_size = run.batch;
        tc.head_lr = run.head_lr;
        tc.backbone_lr = run.backbone_lr;
        tc.optim.weight_decay = run.weight_decay;
        tc.loss.det_lambda = 16.0;
        tc.seed = run.task.kind == TaskKind::Detection ? 43 : 3;
        tc.validate_every = 0;
        tc.augment = false;
        Trainer<float> trainer(model, tc);
        const TrainResult r = trainer.fit(data);
        check(r.total_steps == 200, "expected a 200-step schedule");

        run.judge(model, model_space(data));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        check(secs < 300.0, task_kind_name(run.task.kind) + (" overfit run took " + std::to_string(secs)) +
                                "s (budget 300s)");
    }
}

// -----------------------------------------------------------------------
// Criterion 7: schedule endpoints and the head/backbone ratio.
// -----------------------------------------------------------------------

void criterion_schedule() {
    const std::int64_t T = 200;
    const CosineSchedule back{1e-4, 0.0, T};
    const CosineSchedule head{1e-3, 0.0, T};

    check(back.lr_at(0) == 1e-4, "lr_at(0) must equal base exactly");
    check(back.lr_at(T) == 0.0, "lr_at(T) must equal 0 exactly");
    check(back.lr_at(T / 2) == 0.5e-4, "lr_at(T/2) must equal base/2 exactly");
    check(head.lr_at(0) == 1e-3 && head.lr_at(T) == 0.0 && head.lr_at(T / 2) == 0.5e-3,
          "head schedule endpoints");

    for (std::int64_t t = 0; t <= T; ++t) {
        const double b = back.lr_at(t), h = head.lr_at(t);
        check(std::abs(h - 10.0 * b) <= 1e-12 * std::max(h, 1e-30),
              "lr ratio drifted from 10 at t=" + std::to_string(t));
    }
}

// -----------------------------------------------------------------------
// Criterion 8: determinism and persistence.
// -----------------------------------------------------------------------

std::vector<Sample> quad_data(std::uint64_t seed, int per_task) {
    std::vector<Sample> all;
    for (const TaskSpec& t : quad_config().tasks) {
        auto part = generate(seed, t, per_task, 300, 330);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

void criterion_determinism() {
    const auto data = quad_data(51, 4);

    const auto run = [&](const fs::path& dir, int stop_after, std::int64_t seed_model) {
        Model<float> model(quad_config(), seed_model);
        TrainConfig tc;
        tc.epochs = 4;
        tc.batch_size = 4;
        tc.seed = 13;
        tc.validate_every = 2;
        tc.stop_after_epoch = stop_after;
        tc.out_dir = dir.string();
        Trainer<float> trainer(model, tc);
        return trainer.fit(data);
    };

    // Two identical runs.
    const auto ra = run(work_dir("det_a"), 0, 77);
    const auto rb = run(work_dir("det_b"), 0, 77);
    check(slurp(ra.metric_log) == slurp(rb.metric_log) && !slurp(ra.metric_log).empty(),
          "metric logs differ between identical seeded runs");
    check(slurp(ra.last_checkpoint) == slurp(rb.last_checkpoint), "checkpoints differ between runs");
    check(ra.step_losses == rb.step_losses, "loss streams differ between runs");

    // Save -> load -> forward bit-identical.
    {
        Model<float> a(quad_config(), 1);
        std::mt19937_64 rng(4242);
        const auto x = Tensor<float>::uniform({1, 1, 64, 64}, 0.0f, 1.0f, rng);
        NoGradGuard ng;
        const auto ya = a.forward(x, "seg0", false);
        const auto path = work_dir("persist") / "m.ckpt";
        save_checkpoint(path.string(), a, static_cast<const AdamW<float>*>(nullptr), TrainProgress{});
        const auto ckpt = read_checkpoint(path.string());
        Model<float> b(ckpt.config, 999);
        restore_model(b, ckpt);
        const auto yb = b.forward(x, "seg0", false);
        check(ya.data() == yb.data(), "save->load->forward is not bit-identical");
    }

    // Resume from the midpoint matches the uninterrupted run.
    const auto full = run(work_dir("resume_full"), 0, 31);
    const auto part = run(work_dir("resume_part"), 2, 31);
    Model<float> model_res(quad_config(), 31);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.seed = 13;
    tc.validate_every = 2;
    tc.out_dir = work_dir("resume_rest").string();
    fs::copy_file(part.metric_log, fs::path(tc.out_dir) / "metrics.log");
    Trainer<float> trainer(model_res, tc);
    const auto rest = trainer.resume(part.last_checkpoint, data);

    std::vector<double> stitched = part.step_losses;
    stitched.insert(stitched.end(), rest.step_losses.begin(), rest.step_losses.end());
    check(stitched == full.step_losses, "resumed loss stream disagrees with the uninterrupted run");
    check(slurp(full.metric_log) == slurp(rest.metric_log), "resumed metric log disagrees");
    check(slurp(full.last_checkpoint) == slurp(rest.last_checkpoint), "resumed final checkpoint disagrees");
}

// -----------------------------------------------------------------------
// Criterion 9: end-to-end CLI smoke across all four task kinds.
// -----------------------------------------------------------------------

void criterion_cli_end_to_end() {
    const auto dir = work_dir("cli");
    const fs::path cfg_path = dir / "run.json";
    std::ofstream(cfg_path) << R"({
        "seed": 21,
        "out": ")" << (dir / "run").string() << R"(",
        "model": {
            "input_h": 64, "input_w": 64,
            "tasks": [
                {"id": "seg0", "kind": "segmentation", "k": 2},
                {"id": "cls0", "kind": "classification", "k": 3},
                {"id": "det0", "kind": "detection"},
                {"id": "reg0", "kind": "regression", "m": 4},
                {"id": "reg1", "kind": "regression", "m": 4}
            ]
        },
        "optim": {"epochs": 1, "batch_size": 4, "validate_every": 1},
        "data": {"synth": {"count_per_task": 4, "orig_lo": 300, "orig_hi": 340}}
    })";

    std::string out;
    check(run_cli("gen-data --config " + cfg_path.string() + " --out " + (dir / "data").string(), dir,
                  &out) == 0,
          "gen-data failed: " + out);
    {
        std::ifstream man(dir / "data" / "manifest.txt");
        std::string line;
        int records = 0;
        while (std::getline(man, line)) records += line.rfind("sample ", 0) == 0;
        check(records == 20, "expected 20 manifest records, found " + std::to_string(records));
    }

    check(run_cli("train --config " + cfg_path.string(), dir, &out) == 0, "train failed: " + out);
    const std::string ckpt = (dir / "run" / "last.ckpt").string();
    const std::string manifest = (dir / "data" / "manifest.txt").string();

    check(run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest + " --out " +
                      (dir / "report.txt").string(),
                  dir, &out) == 0,
          "eval failed: " + out);
    const EvalReport report = EvalReport::parse(slurp(dir / "report.txt"));
    const double hand_mre =
        (report.subtasks.at("reg0").at("mre") + report.subtasks.at("reg1").at("mre")) / 2;
    check(report.means.at("mean_mre") == hand_mre, "mean_mre is not the hand-averaged subtask value");
    check(report.means.at("mean_dsc") == report.subtasks.at("seg0").at("dsc"),
          "single-subtask mean_dsc must equal the subtask value");

    check(run_cli("eval --checkpoint " + ckpt + " --manifest " + manifest + " --oracle --out " +
                      (dir / "oracle.txt").string(),
                  dir, &out) == 0,
          "oracle eval failed: " + out);
    const EvalReport oracle = EvalReport::parse(slurp(dir / "oracle.txt"));
    check(oracle.means.at("mean_dsc") == 1.0, "oracle mean_dsc != 1");
    check(oracle.means.at("mean_iou") == 1.0, "oracle mean_iou != 1");
    check(oracle.means.at("mean_mre") == 0.0, "oracle mean_mre != 0");
    check(oracle.means.at("mean_mcc") == 1.0, "oracle mean_mcc != 1");

    const std::map<std::string, std::string> images = {
        {"seg0", "seg0-0001.pgm"}, {"cls0", "cls0-0002.pgm"}, {"det0", "det0-0000.pgm"},
        {"reg0", "reg0-0003.pgm"}};
    for (const auto& [task, image] : images) {
        const std::string out_file = (dir / ("pred_" + task)).string();
        check(run_cli("predict --checkpoint " + ckpt + " --image " +
                          (dir / "data" / "images" / image).string() + " --subtask " + task + " --out " +
                          out_file,
                      dir, &out) == 0,
              "predict " + task + " failed: " + out);
        check(fs::exists(out_file), "predict " + task + " wrote nothing");
    }
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <path-to-cli-binary>\n";
        return 2;
    }
    g_cli = argv[1];

    const std::vector<std::pair<std::string, std::function<void()>>> criteria = {
        {"gradient suite (finite differences, every op and loss)", criterion_gradients},
        {"loss identities (dice, ce, keypoint, detection)", criterion_loss_identities},
        {"grid mapping (encode floor oracle, decode scan)", criterion_grid_mapping},
        {"metric oracles (dsc/hd/iou/auc/f1/mcc/mre)", criterion_metric_oracles},
        {"routing isolation (gradients and end-to-end)", criterion_routing_isolation},
        {"overfit suites (four task kinds, 200 steps)", criterion_overfit},
        {"schedule endpoints and lr group ratio", criterion_schedule},
        {"determinism and persistence", criterion_determinism},
        {"end-to-end CLI smoke (all four kinds)", criterion_cli_end_to_end},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string verdict = "[PASS]";
        std::string detail;
        try {
            criteria[i].second();
        } catch (const std::exception& e) {
            verdict = "[FAIL]";
            detail = std::string(" -- ") + e.what();
            ++failed;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream line;
        line.precision(1);
        line << std::fixed << verdict << " " << (i + 1) << ". " << criteria[i].first << " (" << secs
             << "s)" << detail;
        std::cout << line.str() << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
