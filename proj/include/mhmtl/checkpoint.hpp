// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint binary format, version 1. Little-endian throughout.
//
//   magic "MHTL" | version u32 | config-digest u64
//   tensor count u64, then per tensor:
//     name length u32, name bytes, rank u32, extents i64[rank], data f32[n]
//   four length-prefixed sections (u64 byte count + payload), in order:
//     optimizer  : present u8; step i64, param count u64,
//                  per param (numel u64, m f32[n], v f32[n])
//     scheduler  : group count u64, per group (base f64, min f64, total i64)
//     progress   : seed u64, epoch i64, step i64
//     model config: input extents, widths, convs, fpn channels, dropout,
//                  task list (id, kind, k, m)
//
// The embedded config makes a checkpoint self-describing: loading first
// rebuilds the model from the config section, then fills parameters by name.
// A digest mismatch against the expected config refuses the load.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mhmtl/model.hpp"
#include "mhmtl/optim.hpp"

namespace mhmtl {

/// Training position stored alongside the weights. All random streams are
/// derived counters, so (seed, epoch, step) is the complete RNG state.
struct TrainProgress {
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
    std::int64_t step = 0;
};

namespace detail {

inline constexpr char kCkptMagic[4] = {'M', 'H', 'T', 'L'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <typename P>
void put(std::string& out, const P& v) {
    static_assert(std::is_trivially_copyable_v<P>);
    const char* p = reinterpret_cast<const char*>(&v);
    out.append(p, sizeof(P));
}

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(reinterpret_cast<const char*>(p), n);
}

inline void put_str(std::string& out, const std::string& s) {
    put(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t at = 0;
    std::string path;

    template <typename P>
    P get() {
        static_assert(std::is_trivially_copyable_v<P>);
        if (at + sizeof(P) > buf.size()) throw CheckpointError("checkpoint '" + path + "': truncated");
        P v;
        std::memcpy(&v, buf.data() + at, sizeof(P));
        at += sizeof(P);
        return v;
    }

    std::string get_str() {
        const auto n = get<std::uint32_t>();
        if (at + n > buf.size()) throw CheckpointError("checkpoint '" + path + "': truncated string");
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }

    void get_bytes(void* out, std::size_t n) {
        if (at + n > buf.size()) throw CheckpointError("checkpoint '" + path + "': truncated data");
        std::memcpy(out, buf.data() + at, n);
        at += n;
    }
};

inline void encode_model_config(std::string& out, const ModelConfig& cfg) {
    put(out, static_cast<std::int32_t>(cfg.input_h));
    put(out, static_cast<std::int32_t>(cfg.input_w));
    put(out, static_cast<std::uint64_t>(cfg.encoder_widths.size()));
    for (int w : cfg.encoder_widths) put(out, static_cast<std::int32_t>(w));
    put(out, static_cast<std::int32_t>(cfg.convs_per_stage));
    put(out, static_cast<std::int32_t>(cfg.fpn_channels));
    put(out, cfg.dropout_rate);
    put(out, static_cast<std::uint64_t>(cfg.tasks.size()));
    for (const TaskSpec& t : cfg.tasks) {
        put_str(out, t.subtask_id);
        put(out, static_cast<std::uint8_t>(t.kind));
        put(out, static_cast<std::int32_t>(t.k));
        put(out, static_cast<std::int32_t>(t.m));
    }
}

inline ModelConfig decode_model_config(Reader& r) {
    ModelConfig cfg;
    cfg.input_h = r.get<std::int32_t>();
    cfg.input_w = r.get<std::int32_t>();
    cfg.encoder_widths.resize(r.get<std::uint64_t>());
    for (int& w : cfg.encoder_widths) w = r.get<std::int32_t>();
    cfg.convs_per_stage = r.get<std::int32_t>();
    cfg.fpn_channels = r.get<std::int32_t>();
    cfg.dropout_rate = r.get<double>();
    cfg.tasks.resize(r.get<std::uint64_t>());
    for (TaskSpec& t : cfg.tasks) {
        t.subtask_id = r.get_str();
        t.kind = static_cast<TaskKind>(r.get<std::uint8_t>());
        t.k = r.get<std::int32_t>();
        t.m = r.get<std::int32_t>();
    }
    return cfg;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, const AdamW<T>* opt,
                     const TrainProgress& progress) {
    std::string out;
    detail::put_bytes(out, detail::kCkptMagic, 4);
    detail::put(out, detail::kCkptVersion);
    detail::put(out, model.config().digest());

    auto params = model.parameters();
    detail::put(out, static_cast<std::uint64_t>(params.size()));
    for (auto& p : params) {
        detail::put_str(out, p.name);
        detail::put(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (int d = 0; d < p.tensor.rank(); ++d) detail::put(out, static_cast<std::int64_t>(p.tensor.dim(d)));
        std::vector<float> raw(p.tensor.numel());
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(p.tensor.data()[i]);
        detail::put_bytes(out, raw.data(), raw.size() * sizeof(float));
    }

    auto section = [&out](const std::string& payload) {
        detail::put(out, static_cast<std::uint64_t>(payload.size()));
        out.append(payload);
    };

    std::string opt_sec;
    if (opt) {
        detail::put(opt_sec, static_cast<std::uint8_t>(1));
        detail::put(opt_sec, static_cast<std::int64_t>(opt->step_count()));
        detail::put(opt_sec, static_cast<std::uint64_t>(opt->moments_m().size()));
        for (std::size_t i = 0; i < opt->moments_m().size(); ++i) {
            const auto& m = opt->moments_m()[i];
            const auto& v = opt->moments_v()[i];
            detail::put(opt_sec, static_cast<std::uint64_t>(m.size()));
            std::vector<float> raw(m.size());
            for (std::size_t j = 0; j < m.size(); ++j) raw[j] = static_cast<float>(m[j]);
            detail::put_bytes(opt_sec, raw.data(), raw.size() * sizeof(float));
            for (std::size_t j = 0; j < v.size(); ++j) raw[j] = static_cast<float>(v[j]);
            detail::put_bytes(opt_sec, raw.data(), raw.size() * sizeof(float));
        }
    } else {
        detail::put(opt_sec, static_cast<std::uint8_t>(0));
    }
    section(opt_sec);

    std::string sched_sec;
    if (opt) {
        detail::put(sched_sec, static_cast<std::uint64_t>(opt->groups().size()));
        for (const auto& g : opt->groups()) {
            detail::put(sched_sec, g.schedule.base_lr);
            detail::put(sched_sec, g.schedule.min_lr);
            detail::put(sched_sec, static_cast<std::int64_t>(g.schedule.total_steps));
        }
    } else {
        detail::put(sched_sec, static_cast<std::uint64_t>(0));
    }
    section(sched_sec);

    std::string prog_sec;
    detail::put(prog_sec, progress.seed);
    detail::put(prog_sec, progress.epoch);
    detail::put(prog_sec, progress.step);
    section(prog_sec);

    std::string cfg_sec;
    detail::encode_model_config(cfg_sec, model.config());
    section(cfg_sec);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint '" + path + "': cannot write");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw CheckpointError("checkpoint '" + path + "': write failed");
}

/// Everything a checkpoint holds, decoded but not yet applied to a model.
struct CheckpointData {
    std::uint64_t digest = 0;
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
    bool has_optimizer = false;
    std::int64_t opt_step = 0;
    std::vector<std::vector<float>> m, v;
    std::vector<CosineSchedule> schedules;
    TrainProgress progress;
    ModelConfig config;
};

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint '" + path + "': cannot open");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    detail::Reader r{buf, 0, path};

    char magic[4];
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, detail::kCkptMagic, 4) != 0)
        throw CheckpointError("checkpoint '" + path + "': bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != detail::kCkptVersion)
        throw CheckpointError("checkpoint '" + path + "': unsupported version " + std::to_string(version));

    CheckpointData data;
    data.digest = r.get<std::uint64_t>();

    const auto tensor_count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < tensor_count; ++i) {
        const std::string name = r.get_str();
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(r.get<std::int64_t>());
            numel *= static_cast<std::size_t>(d);
        }
        std::vector<float> raw(numel);
        r.get_bytes(raw.data(), numel * sizeof(float));
        data.tensors.emplace(name, std::make_pair(std::move(shape), std::move(raw)));
    }

    auto open_section = [&r, &path]() {
        const auto len = r.get<std::uint64_t>();
        if (r.at + len > r.buf.size()) throw CheckpointError("checkpoint '" + path + "': truncated section");
        return r.at + len;
    };

    std::size_t end = open_section();
    if (r.get<std::uint8_t>()) {
        data.has_optimizer = true;
        data.opt_step = r.get<std::int64_t>();
        const auto n = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto numel = r.get<std::uint64_t>();
            std::vector<float> m(numel), v(numel);
            r.get_bytes(m.data(), numel * sizeof(float));
            r.get_bytes(v.data(), numel * sizeof(float));
            data.m.push_back(std::move(m));
            data.v.push_back(std::move(v));
        }
    }
    r.at = end;

    end = open_section();
    {
        const auto n = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            CosineSchedule s;
            s.base_lr = r.get<double>();
            s.min_lr = r.get<double>();
            s.total_steps = r.get<std::int64_t>();
            data.schedules.push_back(s);
        }
    }
    r.at = end;

    end = open_section();
    data.progress.seed = r.get<std::uint64_t>();
    data.progress.epoch = r.get<std::int64_t>();
    data.progress.step = r.get<std::int64_t>();
    r.at = end;

    end = open_section();
    data.config = detail::decode_model_config(r);
    r.at = end;

    if (data.config.digest() != data.digest)
        throw CheckpointError("checkpoint '" + path + "': embedded config disagrees with stored digest");
    return data;
}

/// Loads tensor values into an existing model. The model's config digest
/// must match the checkpoint's; every parameter must be present with the
/// right shape, and no unknown tensors may remain.
template <typename T>
void restore_model(Model<T>& model, const CheckpointData& data) {
    if (model.config().digest() != data.digest)
        throw CheckpointError("checkpoint: config digest mismatch (model " +
                              std::to_string(model.config().digest()) + ", file " +
                              std::to_string(data.digest) + ")");
    auto params = model.parameters();
    if (params.size() != data.tensors.size())
        throw CheckpointError("checkpoint: parameter count mismatch");
    for (auto& p : params) {
        const auto it = data.tensors.find(p.name);
        if (it == data.tensors.end()) throw CheckpointError("checkpoint: missing tensor '" + p.name + "'");
        if (it->second.first != p.tensor.shape())
            throw CheckpointError("checkpoint: shape mismatch for tensor '" + p.name + "'");
        auto& dst = p.tensor.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.second[i]);
    }
}

/// Restores optimizer moments and step counter saved by save_checkpoint.
template <typename T>
void restore_optimizer(AdamW<T>& opt, const CheckpointData& data) {
    if (!data.has_optimizer) throw CheckpointError("checkpoint: no optimizer state stored");
    if (data.m.size() != opt.moments_m().size())
        throw CheckpointError("checkpoint: optimizer parameter count mismatch");
    for (std::size_t i = 0; i < data.m.size(); ++i) {
        if (data.m[i].size() != opt.moments_m()[i].size())
            throw CheckpointError("checkpoint: optimizer moment size mismatch");
        for (std::size_t j = 0; j < data.m[i].size(); ++j) {
            opt.moments_m()[i][j] = static_cast<T>(data.m[i][j]);
            opt.moments_v()[i][j] = static_cast<T>(data.v[i][j]);
        }
    }
    opt.mutable_step() = data.opt_step;
}

}  // namespace mhmtl
