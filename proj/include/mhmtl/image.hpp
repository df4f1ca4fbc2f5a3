// SPDX-License-Identifier: Apache-2.0
//
// Minimal grayscale raster support: float images in [0,1], 8-bit class maps,
// portable graymap (PGM) IO, and center-aligned resizing.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mhmtl/common.hpp"

namespace mhmtl {

/// Grayscale image, row-major, values in [0,1].
struct Image {
    int h = 0, w = 0;
    std::vector<float> px;

    static Image zeros(int h, int w) {
        Image im;
        im.h = h;
        im.w = w;
        im.px.assign(static_cast<std::size_t>(h) * w, 0.0f);
        return im;
    }

    float at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    float& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
};

/// Class-index map, one byte per pixel.
struct MaskImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;

    static MaskImage zeros(int h, int w) {
        MaskImage m;
        m.h = h;
        m.w = w;
        m.px.assign(static_cast<std::size_t>(h) * w, 0);
        return m;
    }

    std::uint8_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
};

namespace detail {

inline int pgm_next_int(std::istream& is, const std::string& path) {
    // Skips whitespace and '#' comment lines between header tokens.
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF) throw DataError("pgm '" + path + "': truncated header");
    int value = 0;
    bool any = false;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        any = true;
        ch = is.get();
    }
    if (!any) throw DataError("pgm '" + path + "': malformed header token");
    return value;
}

}  // namespace detail

/// Reads P5 (binary) or P2 (ascii) graymaps; P6 color is averaged to gray.
/// Only 8-bit depth (maxval <= 255) is accepted.
inline MaskImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("pgm '" + path + "': cannot open");
    char magic[2] = {0, 0};
    is.read(magic, 2);
    if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2' && magic[1] != '6'))
        throw DataError("pgm '" + path + "': unsupported magic");
    const char kind = magic[1];
    const int w = detail::pgm_next_int(is, path);
    const int h = detail::pgm_next_int(is, path);
    const int maxval = detail::pgm_next_int(is, path);
    if (w < 1 || h < 1) throw DataError("pgm '" + path + "': bad extents");
    if (maxval < 1 || maxval > 255) throw DataError("pgm '" + path + "': only 8-bit depth supported");

    MaskImage out = MaskImage::zeros(h, w);
    const std::size_t n = out.px.size();
    if (kind == '2') {
        for (std::size_t i = 0; i < n; ++i) out.px[i] = static_cast<std::uint8_t>(detail::pgm_next_int(is, path));
    } else if (kind == '5') {
        is.read(reinterpret_cast<char*>(out.px.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n) throw DataError("pgm '" + path + "': truncated data");
    } else {  // P6: average the three channels
        std::vector<std::uint8_t> rgb(n * 3);
        is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        if (static_cast<std::size_t>(is.gcount()) != rgb.size())
            throw DataError("pgm '" + path + "': truncated data");
        for (std::size_t i = 0; i < n; ++i) {
            const int s = rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2];
            out.px[i] = static_cast<std::uint8_t>((s + 1) / 3);  // round to nearest
        }
    }
    return out;
}

inline void write_pgm(const std::string& path, const MaskImage& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("pgm '" + path + "': cannot write");
    os << "P5\n" << m.w << " " << m.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(m.px.data()), static_cast<std::streamsize>(m.px.size()));
    if (!os) throw DataError("pgm '" + path + "': write failed");
}

/// Quantizes [0,1] floats to 8 bits (round to nearest, clamped).
inline MaskImage quantize(const Image& im) {
    MaskImage m = MaskImage::zeros(im.h, im.w);
    for (std::size_t i = 0; i < im.px.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, im.px[i]));
        m.px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return m;
}

inline Image to_float(const MaskImage& m) {
    Image im = Image::zeros(m.h, m.w);
    for (std::size_t i = 0; i < m.px.size(); ++i) im.px[i] = static_cast<float>(m.px[i]) / 255.0f;
    return im;
}

inline Image read_gray_image(const std::string& path) { return to_float(read_pgm(path)); }

inline void write_gray_image(const std::string& path, const Image& im) { write_pgm(path, quantize(im)); }

/// Bilinear resize with center-aligned sampling: output pixel center (i+0.5)
/// maps to source coordinate (i+0.5)*scale - 0.5, clamped to the source grid.
inline Image resize_bilinear(const Image& src, int oh, int ow) {
    if (src.h < 1 || src.w < 1 || oh < 1 || ow < 1) throw ContractError("resize_bilinear: empty image");
    Image out = Image::zeros(oh, ow);
    const double sy = static_cast<double>(src.h) / oh, sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        const double fy = std::min(std::max((y + 0.5) * sy - 0.5, 0.0), static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            const double fx = std::min(std::max((x + 0.5) * sx - 0.5, 0.0), static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            const double top = (1.0 - wx) * src.at(y0, x0) + wx * src.at(y0, x1);
            const double bot = (1.0 - wx) * src.at(y1, x0) + wx * src.at(y1, x1);
            out.at(y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

/// Nearest-neighbor resize; never invents values, so class maps stay valid.
inline MaskImage resize_nearest(const MaskImage& src, int oh, int ow) {
    if (src.h < 1 || src.w < 1 || oh < 1 || ow < 1) throw ContractError("resize_nearest: empty image");
    MaskImage out = MaskImage::zeros(oh, ow);
    const double sy = static_cast<double>(src.h) / oh, sx = static_cast<double>(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        const int yy = std::min(static_cast<int>((y + 0.5) * sy), src.h - 1);
        for (int x = 0; x < ow; ++x) {
            const int xx = std::min(static_cast<int>((x + 0.5) * sx), src.w - 1);
            out.at(y, x) = src.at(yy, xx);
        }
    }
    return out;
}

}  // namespace mhmtl
