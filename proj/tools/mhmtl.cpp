// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: synthetic dataset generation, training, evaluation,
// and single-image prediction. Exit codes: 0 ok, 2 config error, 3 data
// error, 4 checkpoint error, 1 anything else. MHMTL_THREADS caps worker
// parallelism (default 1, which also guarantees determinism).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mhmtl/checkpoint.hpp"
#include "mhmtl/config.hpp"
#include "mhmtl/train.hpp"

namespace fs = std::filesystem;
using namespace mhmtl;

namespace {

/// Loads a manifest and checks every referenced subtask against the model
/// config (it must exist with identical kind/K/M).
std::vector<Sample> load_and_check(const std::string& manifest, const ModelConfig& mc) {
    std::vector<Sample> samples = load_manifest(manifest);
    for (const Sample& s : samples) {
        const TaskSpec* t = mc.find_task(s.task.subtask_id);
        if (!t)
            throw DataError("data: manifest subtask '" + s.task.subtask_id + "' is not in the model config");
        if (t->kind != s.task.kind || t->k != s.task.k || t->m != s.task.m)
            throw DataError("data: subtask '" + s.task.subtask_id + "' disagrees with the model config");
    }
    return samples;
}

std::vector<Sample> synth_tasks(const RunConfig& cfg, std::uint64_t seed, int per_task) {
    std::vector<Sample> all;
    for (const TaskSpec& t : cfg.model.tasks) {
        auto part = generate(seed, t, per_task, cfg.data.synth.orig_lo, cfg.data.synth.orig_hi);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

std::vector<ModelSample> to_model_space(const std::vector<Sample>& ss, const ModelConfig& mc) {
    std::vector<ModelSample> out;
    out.reserve(ss.size());
    for (const Sample& s : ss) out.push_back(resize_to_model(s, mc.input_h, mc.input_w));
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
        fs::create_directories(parent);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write '" + path + "'");
    os << text;
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 std::optional<std::uint64_t> seed_flag) {
    RunConfig cfg = RunConfig::load(config_path);
    if (!cfg.data.use_synth) throw ConfigError("config: gen-data requires a 'data.synth' section");
    const std::uint64_t seed = seed_flag.value_or(cfg.seed);
    if (!seed_flag && !cfg.has_seed) throw ConfigError("config: gen-data needs 'seed' or --seed");

    const auto samples = synth_tasks(cfg, seed, cfg.data.synth.count_per_task);
    const std::string manifest = save_dataset(samples, out);
    std::cout << "wrote " << samples.size() << " samples, manifest " << manifest << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.out.empty()) throw ConfigError("config: missing field 'out'");
    if (!cfg.data.use_synth && cfg.data.train_manifest.empty())
        throw ConfigError("config: 'data' needs 'synth' or 'train_manifest'");

    std::vector<Sample> train, val;
    if (cfg.data.use_synth) {
        train = synth_tasks(cfg, cfg.seed, cfg.data.synth.count_per_task);
        if (cfg.data.synth.val_count_per_task > 0)
            val = synth_tasks(cfg, derive_seed(cfg.seed, "val-data"), cfg.data.synth.val_count_per_task);
    } else {
        train = load_and_check(cfg.data.train_manifest, cfg.model);
        if (!cfg.data.val_manifest.empty()) val = load_and_check(cfg.data.val_manifest, cfg.model);
    }

    Model<float> model(cfg.model, cfg.seed);
    cfg.train.out_dir = cfg.out;
    Trainer<float> trainer(model, cfg.train);
    const TrainResult r =
        resume_path.empty() ? trainer.fit(train, val) : trainer.resume(resume_path, train, val);

    std::cout << "trained " << r.step_losses.size() << " steps (schedule " << r.total_steps << ")\n";
    if (!r.last_checkpoint.empty()) std::cout << "last checkpoint: " << r.last_checkpoint << "\n";
    if (!r.best_checkpoint.empty()) std::cout << "best checkpoint: " << r.best_checkpoint << "\n";
    if (!r.metric_log.empty()) std::cout << "metric log: " << r.metric_log << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest, const std::string& out,
             bool oracle) {
    const CheckpointData data = read_checkpoint(ckpt_path);
    Model<float> model(data.config, 0);
    restore_model(model, data);

    const auto samples = to_model_space(load_and_check(manifest, data.config), data.config);
    const EvalReport report =
        oracle ? evaluate_with(oracle_prediction, samples) : evaluate(model, samples);
    const std::string text = report.serialize();
    if (!out.empty()) write_text(out, text);
    std::cout << text;
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path, const std::string& subtask,
                const std::string& out) {
    const CheckpointData data = read_checkpoint(ckpt_path);
    const TaskSpec* task = data.config.find_task(subtask);
    if (!task) throw ConfigError("predict: unknown subtask '" + subtask + "'");
    Model<float> model(data.config, 0);
    restore_model(model, data);

    const Image orig = read_gray_image(image_path);
    const Image resized = resize_bilinear(orig, data.config.input_h, data.config.input_w);
    ModelSample s;
    s.id = image_path;
    s.task = *task;
    s.image = resized;
    s.orig_h = orig.h;
    s.orig_w = orig.w;
    const Prediction p = predict_sample(model, s);

    std::ostringstream text;
    text.precision(17);
    switch (task->kind) {
        case TaskKind::Segmentation: {
            // Class-index mask emitted at the input image's own resolution.
            MaskImage m = MaskImage::zeros(data.config.input_h, data.config.input_w);
            for (std::size_t i = 0; i < p.mask.size(); ++i) m.px[i] = static_cast<std::uint8_t>(p.mask[i]);
            if (const fs::path parent = fs::path(out).parent_path(); !parent.empty())
                fs::create_directories(parent);
            write_pgm(out, resize_nearest(m, orig.h, orig.w));
            std::cout << "mask (" << orig.h << "x" << orig.w << ") written to " << out << "\n";
            return 0;
        }
        case TaskKind::Classification: {
            int best = 0;
            for (std::size_t c = 1; c < p.probs.size(); ++c)
                if (p.probs[c] > p.probs[best]) best = static_cast<int>(c);
            text << "class = " << best << "\n";
            for (std::size_t c = 0; c < p.probs.size(); ++c)
                text << "prob_" << c << " = " << p.probs[c] << "\n";
            break;
        }
        case TaskKind::Detection:
            text << "box_norm = " << p.box.cx << " " << p.box.cy << " " << p.box.w << " " << p.box.h << "\n";
            text << "box_px = " << p.box.cx * orig.w << " " << p.box.cy * orig.h << " " << p.box.w * orig.w
                 << " " << p.box.h * orig.h << "\n";
            text << "score = " << p.score << "\n";
            break;
        case TaskKind::Regression:
            // Keypoints in the input image's own pixel coordinates.
            for (std::size_t i = 0; i < p.keypoints.size(); ++i)
                text << "kp_" << i << " = " << p.keypoints[i].x * orig.w << " " << p.keypoints[i].y * orig.h
                     << "\n";
            break;
    }
    write_text(out, text.str());
    std::cout << text.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-head multi-task training and evaluation for grayscale images"};
    app.require_subcommand(1);

    std::string config_path, out_path, resume_path, ckpt_path, manifest_path, image_path, subtask_id;
    std::optional<std::uint64_t> seed_flag;
    bool oracle = false;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset with a manifest");
    gen->add_option("--config", config_path, "run config (JSON)")->required();
    gen->add_option("--out", out_path, "output dataset directory")->required();
    gen->add_option("--seed", seed_flag, "override the config seed");

    CLI::App* train = app.add_subcommand("train", "train a model; outputs under the config's 'out'");
    train->add_option("--config", config_path, "run config (JSON)")->required();
    train->add_option("--resume", resume_path, "checkpoint to continue from");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--manifest", manifest_path, "dataset manifest")->required();
    eval->add_option("--out", out_path, "report file (also printed to stdout)");
    eval->add_flag("--oracle", oracle, "score ground truth replayed as predictions (sanity check)");

    CLI::App* predict = app.add_subcommand("predict", "run one image through one subtask head");
    predict->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    predict->add_option("--image", image_path, "input image (PGM)")->required();
    predict->add_option("--subtask", subtask_id, "subtask id from the model config")->required();
    predict->add_option("--out", out_path, "prediction file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed_flag);
        if (train->parsed()) return cmd_train(config_path, resume_path);
        if (eval->parsed()) return cmd_eval(ckpt_path, manifest_path, out_path, oracle);
        if (predict->parsed()) return cmd_predict(ckpt_path, image_path, subtask_id, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
