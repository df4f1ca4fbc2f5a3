// SPDX-License-Identifier: Apache-2.0
//
// Spatial ops on N,C,H,W tensors: conv2d (im2col + small matmul), global
// average pooling, max pooling, nearest-neighbor upsampling.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mhmtl/tensor.hpp"

namespace mhmtl {

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// cols is [C*k*k, P] with P = oh*ow; column p holds the receptive field of
// output position p. Out-of-bounds taps are zero.
template <typename T>
inline void im2col(const T* img, int c, int h, int w, int k, int stride, int pad,
                   int oh, int ow, T* cols) {
    const std::size_t p_total = static_cast<std::size_t>(oh) * ow;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = img + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = cols + row * p_total;
                std::size_t p = 0;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) dst[p++] = T(0);
                        continue;
                    }
                    const T* src_row = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[p++] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
template <typename T>
inline void col2im_add(const T* cols, int c, int h, int w, int k, int stride, int pad,
                       int oh, int ow, T* img) {
    const std::size_t p_total = static_cast<std::size_t>(oh) * ow;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        T* plane = img + static_cast<std::size_t>(ch) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = cols + row * p_total;
                std::size_t p = 0;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        p += static_cast<std::size_t>(ow);
                        continue;
                    }
                    T* dst_row = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox, ++p) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst_row[ix] += src[p];
                    }
                }
            }
        }
    }
}

// C[m,p] += A[m,k] * B[k,p], row-major, fixed accumulation order per output.
// Optionally splits rows of A across threads; rows are disjoint so the result
// is bit-identical for any thread count.
template <typename T>
inline void matmul_acc(const T* a, const T* b, T* c_out, int m, int k, int p, int threads = 1) {
    parallel_for(m, threads, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            T* crow = c_out + static_cast<std::size_t>(i) * p;
            const T* arow = a + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                if (av == T(0)) continue;
                const T* brow = b + static_cast<std::size_t>(kk) * p;
                for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

}  // namespace detail

/// 2-d convolution: input [N,C,H,W], weight [F,C,k,k], bias [F].
/// Output extents follow floor((H + 2*pad - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
    if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1)
        throw ShapeError("conv2d: expected input[N,C,H,W], weight[F,C,k,k], bias[F]");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int f = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c)
        throw ShapeError("conv2d: input channels " + std::to_string(c) + " do not match weight channels " +
                         std::to_string(weight.dim(1)));
    if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
    if (bias.dim(0) != f) throw ShapeError("conv2d: bias extent must match filter count");
    if (k < 1 || stride < 1 || padding < 0) throw ContractError("conv2d: require k>=1, stride>=1, padding>=0");
    if (h + 2 * padding < k || w + 2 * padding < k)
        throw ShapeError("conv2d: kernel larger than padded input");

    const int oh = detail::conv_out_extent(h, k, stride, padding);
    const int ow = detail::conv_out_extent(w, k, stride, padding);
    const std::size_t p_total = static_cast<std::size_t>(oh) * ow;
    const int kdim = c * k * k;
    const int threads = thread_budget();

    std::vector<T> out(static_cast<std::size_t>(n) * f * p_total);
    std::vector<T> cols(static_cast<std::size_t>(kdim) * p_total);
    for (int b = 0; b < n; ++b) {
        detail::im2col(input.data().data() + static_cast<std::size_t>(b) * c * h * w, c, h, w, k, stride,
                       padding, oh, ow, cols.data());
        T* yb = out.data() + static_cast<std::size_t>(b) * f * p_total;
        for (int fi = 0; fi < f; ++fi) std::fill_n(yb + static_cast<std::size_t>(fi) * p_total, p_total, bias.data()[fi]);
        detail::matmul_acc(weight.data().data(), cols.data(), yb, f, kdim, static_cast<int>(p_total), threads);
    }

    return detail::make_op_result<T>({n, f, oh, ow}, std::move(out), "conv2d", {input, weight, bias},
                                     [n, c, h, w, f, k, stride, padding, oh, ow](detail::Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const std::size_t p_total = static_cast<std::size_t>(oh) * ow;
        const int kdim = c * k * k;
        const int threads = thread_budget();

        std::vector<T> gx(xn.requires_grad ? xn.data.size() : 0, T(0));
        std::vector<T> gw(wn.requires_grad ? wn.data.size() : 0, T(0));
        std::vector<T> gb(bn.requires_grad ? bn.data.size() : 0, T(0));
        std::vector<T> cols(static_cast<std::size_t>(kdim) * p_total);
        std::vector<T> gcols;

        for (int b = 0; b < n; ++b) {
            const T* gy = self.grad.data() + static_cast<std::size_t>(b) * f * p_total;
            if (bn.requires_grad) {
                for (int fi = 0; fi < f; ++fi) {
                    T acc = T(0);
                    const T* row = gy + static_cast<std::size_t>(fi) * p_total;
                    for (std::size_t p = 0; p < p_total; ++p) acc += row[p];
                    gb[fi] += acc;
                }
            }
            if (wn.requires_grad || xn.requires_grad) {
                detail::im2col(xn.data.data() + static_cast<std::size_t>(b) * c * h * w, c, h, w, k, stride,
                               padding, oh, ow, cols.data());
            }
            if (wn.requires_grad) {
                // gw[f,kk] += sum_p gy[f,p] * cols[kk,p]
                parallel_for(f, threads, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t fi = lo; fi < hi; ++fi) {
                        const T* gyr = gy + static_cast<std::size_t>(fi) * p_total;
                        T* gwr = gw.data() + static_cast<std::size_t>(fi) * kdim;
                        for (int kk = 0; kk < kdim; ++kk) {
                            const T* cr = cols.data() + static_cast<std::size_t>(kk) * p_total;
                            T acc = T(0);
                            for (std::size_t p = 0; p < p_total; ++p) acc += gyr[p] * cr[p];
                            gwr[kk] += acc;
                        }
                    }
                });
            }
            if (xn.requires_grad) {
                gcols.assign(static_cast<std::size_t>(kdim) * p_total, T(0));
                // gcols[kk,p] = sum_f w[f,kk] * gy[f,p]
                parallel_for(kdim, threads, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t kk = lo; kk < hi; ++kk) {
                        T* gcr = gcols.data() + static_cast<std::size_t>(kk) * p_total;
                        for (int fi = 0; fi < f; ++fi) {
                            const T wv = wn.data[static_cast<std::size_t>(fi) * kdim + kk];
                            if (wv == T(0)) continue;
                            const T* gyr = gy + static_cast<std::size_t>(fi) * p_total;
                            for (std::size_t p = 0; p < p_total; ++p) gcr[p] += wv * gyr[p];
                        }
                    }
                });
                detail::col2im_add(gcols.data(), c, h, w, k, stride, padding, oh, ow,
                                   gx.data() + static_cast<std::size_t>(b) * c * h * w);
            }
        }
        if (xn.requires_grad) detail::accumulate(xn, gx.data(), gx.size());
        if (wn.requires_grad) detail::accumulate(wn, gw.data(), gw.size());
        if (bn.requires_grad) detail::accumulate(bn, gb.data(), gb.size());
    });
}

/// Global average pooling: [N,C,H,W] -> [N,C], mean over each H*W plane.
template <typename T>
Tensor<T> pool_avg_global(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("pool_avg_global: expected N,C,H,W");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T inv = T(1) / static_cast<T>(plane);
    std::vector<T> out(static_cast<std::size_t>(n) * c);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T* src = input.data().data() + i * plane;
        T acc = T(0);
        for (std::size_t p = 0; p < plane; ++p) acc += src[p];
        out[i] = acc * inv;
    }
    return detail::make_op_result<T>({n, c}, std::move(out), "pool_avg_global", {input},
                                     [plane, inv](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(p.data.size());
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T v = self.grad[i] * inv;
            std::fill_n(g.data() + i * plane, plane, v);
        }
        detail::accumulate(p, g.data(), g.size());
    });
}

/// Max pooling with square window, no padding; the gradient routes to the
/// argmax, ties resolved to the first index in row-major order.
template <typename T>
Tensor<T> pool_max2d(const Tensor<T>& input, int k, int stride) {
    if (input.rank() != 4) throw ShapeError("pool_max2d: expected N,C,H,W");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (k < 1 || stride < 1) throw ContractError("pool_max2d: require k>=1, stride>=1");
    if (k > h || k > w) throw ShapeError("pool_max2d: window exceeds spatial extent");
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    std::vector<T> out(planes * oh * ow);
    std::vector<std::int32_t> argmax(out.size());
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = input.data().data() + pl * h * w;
        T* dst = out.data() + pl * oh * ow;
        std::int32_t* am = argmax.data() + pl * oh * ow;
        std::size_t o = 0;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++o) {
                T best = src[static_cast<std::size_t>(oy * stride) * w + ox * stride];
                int best_idx = oy * stride * w + ox * stride;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int idx = (oy * stride + ky) * w + (ox * stride + kx);
                        if (src[idx] > best) {  // strict: first max wins on ties
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                dst[o] = best;
                am[o] = best_idx;
            }
        }
    }
    return detail::make_op_result<T>({n, c, oh, ow}, std::move(out), "pool_max2d", {input},
                                     [planes, oh, ow, h, w, argmax = std::move(argmax)](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(p.data.size(), T(0));
        const std::size_t per = static_cast<std::size_t>(oh) * ow;
        for (std::size_t pl = 0; pl < planes; ++pl)
            for (std::size_t o = 0; o < per; ++o)
                g[pl * h * w + argmax[pl * per + o]] += self.grad[pl * per + o];
        detail::accumulate(p, g.data(), g.size());
    });
}

/// Nearest-neighbor upsampling: every source cell replicated factor x factor;
/// the gradient sums the replicas back.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor) {
    if (input.rank() != 4) throw ShapeError("upsample_nearest: expected N,C,H,W");
    if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int fh = h * factor, fw = w * factor;
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    std::vector<T> out(planes * fh * fw);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = input.data().data() + pl * h * w;
        T* dst = out.data() + pl * fh * fw;
        for (int y = 0; y < fh; ++y) {
            const T* src_row = src + static_cast<std::size_t>(y / factor) * w;
            T* dst_row = dst + static_cast<std::size_t>(y) * fw;
            for (int x = 0; x < fw; ++x) dst_row[x] = src_row[x / factor];
        }
    }
    return detail::make_op_result<T>({n, c, fh, fw}, std::move(out), "upsample_nearest", {input},
                                     [planes, h, w, factor, fh, fw](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(p.data.size(), T(0));
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* gsrc = self.grad.data() + pl * fh * fw;
            T* gdst = g.data() + pl * h * w;
            for (int y = 0; y < fh; ++y)
                for (int x = 0; x < fw; ++x)
                    gdst[static_cast<std::size_t>(y / factor) * w + x / factor] +=
                        gsrc[static_cast<std::size_t>(y) * fw + x];
        }
        detail::accumulate(p, g.data(), g.size());
    });
}

}  // namespace mhmtl
