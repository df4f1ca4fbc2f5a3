// SPDX-License-Identifier: Apache-2.0
//
// Synthetic ultrasound-phantom data: ellipse scenes rendered over a speckled
// background, with labels derived analytically from the generating geometry.
// Also the on-disk dataset format (PGM images + a line-oriented manifest).

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhmtl/image.hpp"
#include "mhmtl/task.hpp"

namespace mhmtl {

/// One generating ellipse in original-pixel coordinates.
struct Ellipse {
    double cx = 0, cy = 0;    // center, pixels
    double a = 0, b = 0;      // semi-axes, pixels (a = major)
    double theta = 0;         // rotation, radians
    double intensity = 0.5;   // additive contrast against the background
};

/// Generating geometry for one sample; ellipses[0] is the primary object.
struct Scene {
    int h = 0, w = 0;
    std::vector<Ellipse> ellipses;
};

/// Task-typed label; exactly the variant matching the task kind is set.
struct Label {
    MaskImage mask;                   // Segmentation: class map at original size
    int class_index = -1;             // Classification
    Box box;                          // Detection, normalized
    std::vector<Keypoint> keypoints;  // Regression, original-pixel coordinates
};

/// One image with its label at original resolution.
struct Sample {
    std::string id;
    TaskSpec task;
    Image image;
    Label label;
    int orig_h = 0, orig_w = 0;
};

/// Sample mapped to model space: image resized, mask resized (nearest),
/// keypoints normalized by the original extents. Original size is kept for
/// pixel-space metrics.
struct ModelSample {
    std::string id;
    TaskSpec task;
    Image image;                           // model_h x model_w
    std::vector<int> mask;                 // Segmentation, model-size class map
    int class_index = -1;                  // Classification
    Box box;                               // Detection (resize-invariant)
    std::vector<Keypoint> keypoints_norm;  // Regression, in [0,1]
    int orig_h = 0, orig_w = 0;
};

/// Squared elliptical radius of a point: < 1 inside, 1 on the rim.
inline double ellipse_radius2(const Ellipse& e, double x, double y) {
    const double dx = x - e.cx, dy = y - e.cy;
    const double u = (dx * std::cos(e.theta) + dy * std::sin(e.theta)) / e.a;
    const double v = (-dx * std::sin(e.theta) + dy * std::cos(e.theta)) / e.b;
    return u * u + v * v;
}

inline bool point_in_ellipse(const Ellipse& e, double x, double y) {
    return ellipse_radius2(e, x, y) <= 1.0;
}

/// Binary raster of one ellipse, sampled at pixel centers.
inline MaskImage rasterize(const Ellipse& e, int h, int w) {
    MaskImage m = MaskImage::zeros(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (point_in_ellipse(e, x + 0.5, y + 0.5)) m.at(y, x) = 1;
    return m;
}

/// The four axis endpoints of an ellipse (major +, major -, minor +, minor -).
inline std::vector<Keypoint> axis_endpoints(const Ellipse& e) {
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    return {{e.cx + e.a * c, e.cy + e.a * s},
            {e.cx - e.a * c, e.cy - e.a * s},
            {e.cx - e.b * s, e.cy + e.b * c},
            {e.cx + e.b * s, e.cy - e.b * c}};
}

namespace detail {

inline double unit(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace detail

/// Deterministic scene geometry for sample `index` of a task. Classification
/// scenes cycle the primary ellipse's axis ratio through K equal buckets
/// (bucket = index mod K), which keeps generated class labels balanced
/// within one sample.
inline Scene make_scene(std::uint64_t seed, const TaskSpec& task, int index, int orig_lo, int orig_hi) {
    task.validate();
    if (orig_lo < 32 || orig_hi < orig_lo) throw ContractError("make_scene: bad original-size range");
    std::mt19937_64 rng(derive_seed(seed, "scene", fnv1a64(task.subtask_id), static_cast<std::uint64_t>(index)));

    Scene sc;
    const int span = orig_hi - orig_lo + 1;
    sc.h = orig_lo + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    sc.w = orig_lo + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    const double scale = std::min(sc.h, sc.w);

    const int count = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < count; ++e) {
        Ellipse el;
        // The primary ellipse stays well inside the frame so its raster, box,
        // and axis endpoints never touch the border.
        const double lo = e == 0 ? 0.30 : 0.18, hi = 1.0 - lo;
        el.cx = (lo + (hi - lo) * detail::unit(rng)) * sc.w;
        el.cy = (lo + (hi - lo) * detail::unit(rng)) * sc.h;
        // Detection scenes use compact primaries (lesion-like foci, at most a
        // few grid cells across so the brightness peak localizes well); the
        // other kinds get larger ones so dense labels carry enough area.
        if (e == 0)
            el.a = (task.kind == TaskKind::Detection ? 0.075 + 0.03 * detail::unit(rng)
                                                     : 0.18 + 0.12 * detail::unit(rng)) *
                   scale;
        else
            el.a = (0.12 + 0.10 * detail::unit(rng)) * scale;
        double ratio;
        if (e == 0 && task.kind == TaskKind::Classification) {
            const int bucket = index % task.k;
            const double width = (0.95 - 0.50) / task.k;
            // Sample inside the bucket with a 15% margin on each side.
            ratio = 0.50 + width * (bucket + 0.15 + 0.70 * detail::unit(rng));
        } else {
            ratio = 0.50 + 0.45 * detail::unit(rng);
        }
        el.b = el.a * ratio;
        el.theta = 3.14159265358979323846 * detail::unit(rng);
        // Only the primary is bright; distractors are dark so the primary
        // object stays identifiable for detection and keypoint labels.
        el.intensity = e == 0 ? 0.45 + 0.25 * detail::unit(rng) : -(0.15 + 0.15 * detail::unit(rng));
        sc.ellipses.push_back(el);
    }
    return sc;
}

/// Speckled phantom render: a smooth corner-interpolated intensity field,
/// multiplicative exponential speckle, plus the scene's ellipses.
inline Image render_scene(const Scene& sc, std::uint64_t seed, const TaskSpec& task, int index) {
    std::mt19937_64 rng(derive_seed(seed, "texture", fnv1a64(task.subtask_id), static_cast<std::uint64_t>(index)));
    double corner[4];
    for (double& c : corner) c = 0.10 + 0.20 * detail::unit(rng);

    Image im = Image::zeros(sc.h, sc.w);
    std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
    for (int y = 0; y < sc.h; ++y) {
        const double fy = sc.h > 1 ? static_cast<double>(y) / (sc.h - 1) : 0.0;
        for (int x = 0; x < sc.w; ++x) {
            const double fx = sc.w > 1 ? static_cast<double>(x) / (sc.w - 1) : 0.0;
            const double field = (1 - fy) * ((1 - fx) * corner[0] + fx * corner[1]) +
                                 fy * ((1 - fx) * corner[2] + fx * corner[3]);
            const double speckle = -std::log(u(rng));  // exponential, mean 1
            double v = field * (0.4 + 0.6 * speckle);
            for (const Ellipse& e : sc.ellipses) {
                const double r2 = ellipse_radius2(e, x + 0.5, y + 0.5);
                // Radial profile: full contrast at the core fading to 55% at
                // the rim, so the interior stays visible for dense labels.
                if (r2 <= 1.0) v += e.intensity * (0.55 + 0.45 * (1.0 - r2)) * (0.85 + 0.15 * speckle);
            }
            im.at(y, x) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
    return im;
}

/// Tight normalized bounding box of a raster's nonzero extent.
inline Box mask_extent_box(const MaskImage& m) {
    int x0 = m.w, x1 = -1, y0 = m.h, y1 = -1;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw DataError("mask_extent_box: empty mask");
    Box b;
    b.cx = 0.5 * (x0 + x1 + 1) / m.w;
    b.cy = 0.5 * (y0 + y1 + 1) / m.h;
    b.w = static_cast<double>(x1 + 1 - x0) / m.w;
    b.h = static_cast<double>(y1 + 1 - y0) / m.h;
    return b;
}

/// Deterministic dataset: `count` phantoms for one task. Original extents are
/// drawn from [orig_lo, orig_hi] per side; pass a degenerate range for fixed
/// sizes. Same arguments produce bit-identical samples.
inline std::vector<Sample> generate(std::uint64_t seed, const TaskSpec& task, int count, int orig_lo = 300,
                                    int orig_hi = 800) {
    task.validate();
    if (count < 1) throw ContractError("generate: count must be >= 1");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const Scene sc = make_scene(seed, task, i, orig_lo, orig_hi);
        Sample s;
        std::ostringstream id;
        id << task.subtask_id << "-" << std::setw(4) << std::setfill('0') << i;
        s.id = id.str();
        s.task = task;
        s.orig_h = sc.h;
        s.orig_w = sc.w;
        s.image = render_scene(sc, seed, task, i);

        switch (task.kind) {
            case TaskKind::Segmentation: {
                // Painter's order: later ellipses overwrite earlier ones.
                MaskImage m = MaskImage::zeros(sc.h, sc.w);
                for (std::size_t e = 0; e < sc.ellipses.size(); ++e) {
                    const std::uint8_t cls = static_cast<std::uint8_t>(1 + e % (task.k - 1));
                    for (int y = 0; y < sc.h; ++y)
                        for (int x = 0; x < sc.w; ++x)
                            if (point_in_ellipse(sc.ellipses[e], x + 0.5, y + 0.5)) m.at(y, x) = cls;
                }
                s.label.mask = std::move(m);
                break;
            }
            case TaskKind::Classification:
                s.label.class_index = i % task.k;
                break;
            case TaskKind::Detection:
                s.label.box = mask_extent_box(rasterize(sc.ellipses[0], sc.h, sc.w));
                break;
            case TaskKind::Regression: {
                const auto ends = axis_endpoints(sc.ellipses[0]);
                for (int k = 0; k < task.m; ++k) s.label.keypoints.push_back(ends[static_cast<std::size_t>(k) % 4]);
                break;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Photometric train-time augmentation: brightness shift U(-0.2,0.2),
/// contrast scale U(0.8,1.2), additive Gaussian noise with sigma U(0,0.03),
/// each applied with probability 1/2, then clamped to [0,1]. Labels are
/// untouched; eval mode is the identity.
inline Sample augment(Sample s, std::mt19937_64& rng, bool train) {
    if (!train) return s;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool do_bright = u(rng) < 0.5;
    const double bright = do_bright ? -0.2 + 0.4 * u(rng) : 0.0;
    const bool do_contrast = u(rng) < 0.5;
    const double contrast = do_contrast ? 0.8 + 0.4 * u(rng) : 1.0;
    const bool do_noise = u(rng) < 0.5;
    const double sigma = do_noise ? 0.03 * u(rng) : 0.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (float& v : s.image.px) {
        double x = (static_cast<double>(v) + bright) * contrast;
        if (do_noise) x += sigma * gauss(rng);
        v = static_cast<float>(std::min(1.0, std::max(0.0, x)));
    }
    return s;
}

/// Maps a sample into model space (see ModelSample).
inline ModelSample resize_to_model(const Sample& s, int model_h, int model_w) {
    ModelSample out;
    out.id = s.id;
    out.task = s.task;
    out.orig_h = s.orig_h;
    out.orig_w = s.orig_w;
    out.image = resize_bilinear(s.image, model_h, model_w);
    switch (s.task.kind) {
        case TaskKind::Segmentation: {
            const MaskImage m = resize_nearest(s.label.mask, model_h, model_w);
            out.mask.assign(m.px.begin(), m.px.end());
            break;
        }
        case TaskKind::Classification:
            out.class_index = s.label.class_index;
            break;
        case TaskKind::Detection:
            out.box = s.label.box;
            break;
        case TaskKind::Regression:
            for (const Keypoint& kp : s.label.keypoints)
                out.keypoints_norm.push_back({kp.x / s.orig_w, kp.y / s.orig_h});
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset format
// ---------------------------------------------------------------------------
//
// manifest.txt, line-oriented:
//   task id=<subtask_id> kind=<kind> k=<K> m=<M>
//   sample id=<id> task=<subtask_id> image=<relpath> orig=<H>x<W> label=<spec>
// where <spec> is one of
//   mask:<relpath> | class:<n> | box:<cx>,<cy>,<w>,<h> | kp:<x>,<y>[;<x>,<y>...]
// Floats are printed with 17 significant digits so labels round-trip exactly.

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

/// "key=value" fields separated by single spaces; value may not hold spaces.
inline std::string field(const std::string& line, const std::string& key, const std::string& ctx) {
    const std::string pat = key + "=";
    std::size_t at = line.find(pat);
    if (at == std::string::npos || (at != 0 && line[at - 1] != ' '))
        throw DataError("manifest: missing field '" + key + "' in " + ctx);
    at += pat.size();
    const std::size_t end = line.find(' ', at);
    return line.substr(at, end == std::string::npos ? std::string::npos : end - at);
}

inline int parse_int(const std::string& s, const std::string& ctx) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("manifest: malformed integer '" + s + "' in " + ctx);
    }
}

inline std::vector<double> parse_doubles(const std::string& s, char sep, const std::string& ctx) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
        if (tok.empty()) throw DataError("manifest: empty number in " + ctx);
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw DataError("manifest: malformed number '" + tok + "' in " + ctx);
    }
    return out;
}

}  // namespace detail

/// Writes images (and segmentation masks) as 8-bit PGM plus manifest.txt
/// into `dir`; returns the manifest path. Task lines appear in first-use
/// order, sample lines in input order.
inline std::string save_dataset(const std::vector<Sample>& samples, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    std::ostringstream man;
    std::vector<std::string> seen;
    for (const Sample& s : samples) {
        bool known = false;
        for (const auto& id : seen) known = known || id == s.task.subtask_id;
        if (!known) {
            seen.push_back(s.task.subtask_id);
            man << "task id=" << s.task.subtask_id << " kind=" << task_kind_name(s.task.kind)
                << " k=" << s.task.k << " m=" << s.task.m << "\n";
        }
    }
    for (const Sample& s : samples) {
        const std::string img_rel = "images/" + s.id + ".pgm";
        write_gray_image((fs::path(dir) / img_rel).string(), s.image);
        man << "sample id=" << s.id << " task=" << s.task.subtask_id << " image=" << img_rel
            << " orig=" << s.orig_h << "x" << s.orig_w << " label=";
        switch (s.task.kind) {
            case TaskKind::Segmentation: {
                const std::string mask_rel = "masks/" + s.id + ".pgm";
                write_pgm((fs::path(dir) / mask_rel).string(), s.label.mask);
                man << "mask:" << mask_rel;
                break;
            }
            case TaskKind::Classification:
                man << "class:" << s.label.class_index;
                break;
            case TaskKind::Detection:
                man << "box:" << detail::fmt_double(s.label.box.cx) << "," << detail::fmt_double(s.label.box.cy)
                    << "," << detail::fmt_double(s.label.box.w) << "," << detail::fmt_double(s.label.box.h);
                break;
            case TaskKind::Regression: {
                man << "kp:";
                for (std::size_t i = 0; i < s.label.keypoints.size(); ++i)
                    man << (i ? ";" : "") << detail::fmt_double(s.label.keypoints[i].x) << ","
                        << detail::fmt_double(s.label.keypoints[i].y);
                break;
            }
        }
        man << "\n";
    }

    const std::string man_path = (fs::path(dir) / "manifest.txt").string();
    std::ofstream os(man_path, std::ios::binary);
    if (!os) throw DataError("manifest '" + man_path + "': cannot write");
    os << man.str();
    if (!os) throw DataError("manifest '" + man_path + "': write failed");
    return man_path;
}

/// Loads a dataset saved by save_dataset, preserving manifest order. Every
/// failure names the offending record: missing files, malformed fields, and
/// sample lines whose task id has no preceding task line are all distinct
/// DataErrors.
inline std::vector<Sample> load_manifest(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream is(manifest_path, std::ios::binary);
    if (!is) throw DataError("manifest '" + manifest_path + "': cannot open");
    const fs::path root = fs::path(manifest_path).parent_path();

    std::vector<TaskSpec> tasks;
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string ctx = "line " + std::to_string(lineno);
        if (line.rfind("task ", 0) == 0) {
            TaskSpec t;
            t.subtask_id = detail::field(line, "id", ctx);
            t.kind = task_kind_from_name(detail::field(line, "kind", ctx));
            t.k = detail::parse_int(detail::field(line, "k", ctx), ctx);
            t.m = detail::parse_int(detail::field(line, "m", ctx), ctx);
            t.validate();
            tasks.push_back(t);
        } else if (line.rfind("sample ", 0) == 0) {
            Sample s;
            s.id = detail::field(line, "id", ctx);
            const std::string task_id = detail::field(line, "task", ctx);
            const TaskSpec* spec = nullptr;
            for (const auto& t : tasks)
                if (t.subtask_id == task_id) spec = &t;
            if (!spec) throw DataError("manifest: sample '" + s.id + "' references unknown task '" + task_id + "'");
            s.task = *spec;

            const std::string orig = detail::field(line, "orig", ctx);
            const std::size_t x = orig.find('x');
            if (x == std::string::npos) throw DataError("manifest: bad orig extents for sample '" + s.id + "'");
            s.orig_h = detail::parse_int(orig.substr(0, x), ctx);
            s.orig_w = detail::parse_int(orig.substr(x + 1), ctx);

            const std::string img_rel = detail::field(line, "image", ctx);
            const fs::path img_path = root / img_rel;
            if (!fs::exists(img_path))
                throw DataError("manifest: sample '" + s.id + "' image missing: " + img_path.string());
            s.image = read_gray_image(img_path.string());
            if (s.image.h != s.orig_h || s.image.w != s.orig_w)
                throw DataError("manifest: sample '" + s.id + "' image extents disagree with orig=");

            const std::string label = detail::field(line, "label", ctx);
            const std::size_t colon = label.find(':');
            if (colon == std::string::npos)
                throw DataError("manifest: sample '" + s.id + "' has malformed label '" + label + "'");
            const std::string tag = label.substr(0, colon), payload = label.substr(colon + 1);
            if (tag == "mask" && s.task.kind == TaskKind::Segmentation) {
                const fs::path mask_path = root / payload;
                if (!fs::exists(mask_path))
                    throw DataError("manifest: sample '" + s.id + "' mask missing: " + mask_path.string());
                s.label.mask = read_pgm(mask_path.string());
                for (std::uint8_t v : s.label.mask.px)
                    if (v >= s.task.k)
                        throw DataError("manifest: sample '" + s.id + "' mask value exceeds class count");
            } else if (tag == "class" && s.task.kind == TaskKind::Classification) {
                s.label.class_index = detail::parse_int(payload, ctx);
                if (s.label.class_index < 0 || s.label.class_index >= s.task.k)
                    throw DataError("manifest: sample '" + s.id + "' class out of range");
            } else if (tag == "box" && s.task.kind == TaskKind::Detection) {
                const auto v = detail::parse_doubles(payload, ',', ctx);
                if (v.size() != 4) throw DataError("manifest: sample '" + s.id + "' box needs 4 numbers");
                s.label.box = Box{v[0], v[1], v[2], v[3]};
            } else if (tag == "kp" && s.task.kind == TaskKind::Regression) {
                std::stringstream ss(payload);
                std::string pair;
                while (std::getline(ss, pair, ';')) {
                    const auto v = detail::parse_doubles(pair, ',', ctx);
                    if (v.size() != 2) throw DataError("manifest: sample '" + s.id + "' keypoint needs 2 numbers");
                    s.label.keypoints.push_back({v[0], v[1]});
                }
                if (static_cast<int>(s.label.keypoints.size()) != s.task.m)
                    throw DataError("manifest: sample '" + s.id + "' keypoint count != m");
            } else {
                throw DataError("manifest: sample '" + s.id + "' label tag '" + tag +
                                "' does not match task kind");
            }
            out.push_back(std::move(s));
        } else {
            throw DataError("manifest: unrecognized record at " + ctx);
        }
    }
    return out;
}

}  // namespace mhmtl
