#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "olbp/blas.hpp"
#include "olbp/common.hpp"
#include "olbp/tape.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

using std::int64_t;

inline int64_t conv_out_size(int64_t in, int k, int stride, int pad, int dil) {
    return (in + 2 * pad - static_cast<int64_t>(dil) * (k - 1) - 1) / stride + 1;
}

namespace detail {

constexpr int64_t kMaxColElems = int64_t(1) << 23;  // cap im2col scratch at ~8M values

// Unrolls input patches for output rows [oh0,oh1) into col[c_in*kh*kw x tile].
// Out-of-bounds taps (padding) become zeros.
template <typename T>
void im2col(const T* x, int64_t c_in, int64_t h, int64_t w, int kh, int kw, int stride,
            int pad, int dil, int64_t ow_count, int64_t oh0, int64_t oh1, T* col) {
    const int64_t tile = (oh1 - oh0) * ow_count;
    int64_t row = 0;
    for (int64_t ci = 0; ci < c_in; ++ci) {
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++row) {
                T* dst = col + row * tile;
                for (int64_t oh = oh0; oh < oh1; ++oh, dst += ow_count) {
                    const int64_t ih = oh * stride - pad + int64_t(r) * dil;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + ow_count, T(0));
                        continue;
                    }
                    const T* src = x + (ci * h + ih) * w;
                    const int64_t iw0 = int64_t(s) * dil - pad;  // iw = ow*stride + iw0
                    if (stride == 1) {
                        const int64_t lo = std::clamp<int64_t>(-iw0, 0, ow_count);
                        const int64_t hi = std::clamp<int64_t>(w - iw0, lo, ow_count);
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + iw0 + lo, src + iw0 + hi, dst + lo);
                        std::fill(dst + hi, dst + ow_count, T(0));
                    } else {
                        for (int64_t ow = 0; ow < ow_count; ++ow) {
                            const int64_t iw = ow * stride + iw0;
                            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds col back into the input-shaped buffer.
template <typename T>
void col2im_add(const T* col, int64_t c_in, int64_t h, int64_t w, int kh, int kw,
                int stride, int pad, int dil, int64_t ow_count, int64_t oh0, int64_t oh1,
                T* gx) {
    const int64_t tile = (oh1 - oh0) * ow_count;
    int64_t row = 0;
    for (int64_t ci = 0; ci < c_in; ++ci) {
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++row) {
                const T* src = col + row * tile;
                for (int64_t oh = oh0; oh < oh1; ++oh, src += ow_count) {
                    const int64_t ih = oh * stride - pad + int64_t(r) * dil;
                    if (ih < 0 || ih >= h) continue;
                    T* dst = gx + (ci * h + ih) * w;
                    const int64_t iw0 = int64_t(s) * dil - pad;
                    for (int64_t ow = 0; ow < ow_count; ++ow) {
                        const int64_t iw = ow * stride + iw0;
                        if (iw >= 0 && iw < w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

inline int64_t tile_rows_for(int64_t patch, int64_t ow, int64_t oh) {
    const int64_t rows = kMaxColElems / std::max<int64_t>(1, patch * ow);
    return std::clamp<int64_t>(rows, 1, oh);
}

}  // namespace detail

// 2D convolution, weight (c_out, c_in, kh, kw), bias (1, c_out, 1, 1).
// Differentiable w.r.t. input, weight and bias.
template <typename T>
Tensor4<T> conv2d(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& weight,
                  const Tensor4<T>& bias, int stride = 1, int padding = 0,
                  int dilation = 1) {
    const Shape4 xs = x.shape(), ws = weight.shape();
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (dilation < 1) throw ShapeError("conv2d: dilation must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (xs.c != ws.c)
        throw ShapeError("conv2d: channel axis mismatch, input c=" + std::to_string(xs.c) +
                         " vs weight c_in=" + std::to_string(ws.c));
    if (bias.shape() != Shape4{1, ws.n, 1, 1})
        throw ShapeError("conv2d: bias axis mismatch, expected (1," + std::to_string(ws.n) +
                         ",1,1), got " + bias.shape().str());
    const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
    const int64_t oh = conv_out_size(xs.h, kh, stride, padding, dilation);
    const int64_t ow = conv_out_size(xs.w, kw, stride, padding, dilation);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: spatial axis collapses, output " + std::to_string(oh) + "x" +
                         std::to_string(ow) + " from input " + xs.str());

    const int64_t c_out = ws.n, patch = ws.c * kh * kw, ohw = oh * ow;
    Tensor4<T> out({xs.n, c_out, oh, ow});
    const int64_t trows = detail::tile_rows_for(patch, ow, oh);
    std::vector<T> col(static_cast<std::size_t>(patch * trows * ow));

    for (int64_t n = 0; n < xs.n; ++n) {
        const T* xn = x.data() + n * xs.c * xs.h * xs.w;
        T* on = out.data() + n * c_out * ohw;
        for (int64_t oh0 = 0; oh0 < oh; oh0 += trows) {
            const int64_t oh1 = std::min(oh, oh0 + trows);
            const int64_t tile = (oh1 - oh0) * ow;
            detail::im2col(xn, xs.c, xs.h, xs.w, kh, kw, stride, padding, dilation, ow, oh0,
                           oh1, col.data());
            gemm(false, false, static_cast<int>(c_out), static_cast<int>(tile),
                 static_cast<int>(patch), T(1), weight.data(), static_cast<int>(patch),
                 col.data(), static_cast<int>(tile), T(0), on + oh0 * ow,
                 static_cast<int>(ohw));
        }
        for (int64_t co = 0; co < c_out; ++co) {
            const T b = bias.data()[co];
            if (b != T(0)) {
                T* p = on + co * ohw;
                for (int64_t i = 0; i < ohw; ++i) p[i] += b;
            }
        }
    }

    if (track_grad(tape, x, weight, bias)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, wc = weight, bc = bias, oc = out;
        tape->record([xc, wc, bc, oc, stride, padding, dilation]() mutable {
            const Shape4 xs = xc.shape(), ws = wc.shape();
            const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
            const int64_t oh = oc.shape().h, ow = oc.shape().w;
            const int64_t c_out = ws.n, patch = ws.c * kh * kw, ohw = oh * ow;
            const int64_t trows = detail::tile_rows_for(patch, ow, oh);
            std::vector<T> col(static_cast<std::size_t>(patch * trows * ow));
            std::vector<T> colg;
            if (xc.requires_grad()) colg.resize(col.size());
            if (xc.requires_grad()) xc.ensure_grad();
            if (wc.requires_grad()) wc.ensure_grad();
            if (bc.requires_grad()) bc.ensure_grad();
            for (int64_t n = 0; n < xs.n; ++n) {
                const T* xn = xc.data() + n * xs.c * xs.h * xs.w;
                const T* gon = oc.grad() + n * c_out * ohw;
                for (int64_t oh0 = 0; oh0 < oh; oh0 += trows) {
                    const int64_t oh1 = std::min(oh, oh0 + trows);
                    const int64_t tile = (oh1 - oh0) * ow;
                    if (wc.requires_grad()) {
                        detail::im2col(xn, xs.c, xs.h, xs.w, kh, kw, stride, padding,
                                       dilation, ow, oh0, oh1, col.data());
                        gemm(false, true, static_cast<int>(c_out), static_cast<int>(patch),
                             static_cast<int>(tile), T(1), gon + oh0 * ow,
                             static_cast<int>(ohw), col.data(), static_cast<int>(tile), T(1),
                             wc.grad(), static_cast<int>(patch));
                    }
                    if (xc.requires_grad()) {
                        // colg = W^T * gout, then scatter back onto the input grid
                        gemm(true, false, static_cast<int>(patch), static_cast<int>(tile),
                             static_cast<int>(c_out), T(1), wc.data(), static_cast<int>(patch),
                             gon + oh0 * ow, static_cast<int>(ohw), T(0), colg.data(),
                             static_cast<int>(tile));
                        detail::col2im_add(colg.data(), xs.c, xs.h, xs.w, kh, kw, stride,
                                           padding, dilation, ow, oh0, oh1,
                                           xc.grad() + n * xs.c * xs.h * xs.w);
                    }
                }
                if (bc.requires_grad()) {
                    for (int64_t co = 0; co < c_out; ++co) {
                        T acc = T(0);
                        const T* p = gon + co * ohw;
                        for (int64_t i = 0; i < ohw; ++i) acc += p[i];
                        bc.grad()[co] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// Transposed convolution, weight (c_in, c_out, kh, kw), bias (1, c_out, 1, 1).
// With kernel 4, stride 2, padding 1 the spatial size doubles exactly;
// exact_double enforces that property.
template <typename T>
Tensor4<T> deconv2d(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& weight,
                    const Tensor4<T>& bias, int stride = 2, int padding = 1,
                    bool exact_double = true) {
    const Shape4 xs = x.shape(), ws = weight.shape();
    if (stride < 1) throw ShapeError("deconv2d: stride must be >= 1");
    if (xs.c != ws.n)
        throw ShapeError("deconv2d: channel axis mismatch, input c=" + std::to_string(xs.c) +
                         " vs weight c_in=" + std::to_string(ws.n));
    const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
    const int64_t c_out = ws.c;
    if (bias.shape() != Shape4{1, c_out, 1, 1})
        throw ShapeError("deconv2d: bias axis mismatch, expected (1," + std::to_string(c_out) +
                         ",1,1), got " + bias.shape().str());
    const int64_t oh = (xs.h - 1) * stride - 2 * padding + kh;
    const int64_t ow = (xs.w - 1) * stride - 2 * padding + kw;
    if (oh < 1 || ow < 1) throw ShapeError("deconv2d: output collapses from " + xs.str());
    if (exact_double && (oh != 2 * xs.h || ow != 2 * xs.w))
        throw ShapeError("deconv2d: kernel " + std::to_string(kh) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(padding) +
                         " does not double the spatial axes (h " + std::to_string(xs.h) +
                         " -> " + std::to_string(oh) + ")");

    const int64_t patch = c_out * kh * kw, ihw = xs.h * xs.w;
    Tensor4<T> out({xs.n, c_out, oh, ow});
    const int64_t trows = detail::tile_rows_for(patch, xs.w, xs.h);
    std::vector<T> col(static_cast<std::size_t>(patch * trows * xs.w));

    for (int64_t n = 0; n < xs.n; ++n) {
        const T* xn = x.data() + n * xs.c * ihw;
        T* on = out.data() + n * c_out * oh * ow;
        for (int64_t ih0 = 0; ih0 < xs.h; ih0 += trows) {
            const int64_t ih1 = std::min(xs.h, ih0 + trows);
            const int64_t tile = (ih1 - ih0) * xs.w;
            // col[(co,r,s), (ih,iw)] = sum_ci W[ci,co,r,s] * x[ci,ih,iw]
            gemm(true, false, static_cast<int>(patch), static_cast<int>(tile),
                 static_cast<int>(xs.c), T(1), weight.data(), static_cast<int>(patch),
                 xn + ih0 * xs.w, static_cast<int>(ihw), T(0), col.data(),
                 static_cast<int>(tile));
            // scatter: out[co, ih*stride + r - pad, iw*stride + s - pad] += col
            detail::col2im_add(col.data(), c_out, oh, ow, kh, kw, stride, padding, 1, xs.w,
                               ih0, ih1, on);
        }
        for (int64_t co = 0; co < c_out; ++co) {
            const T b = bias.data()[co];
            if (b != T(0)) {
                T* p = on + co * oh * ow;
                for (int64_t i = 0; i < oh * ow; ++i) p[i] += b;
            }
        }
    }

    if (track_grad(tape, x, weight, bias)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, wc = weight, bc = bias, oc = out;
        tape->record([xc, wc, bc, oc, stride, padding]() mutable {
            const Shape4 xs = xc.shape(), ws = wc.shape();
            const int kh = static_cast<int>(ws.h), kw = static_cast<int>(ws.w);
            const int64_t c_out = ws.c, oh = oc.shape().h, ow = oc.shape().w;
            const int64_t patch = c_out * kh * kw, ihw = xs.h * xs.w;
            const int64_t trows = detail::tile_rows_for(patch, xs.w, xs.h);
            std::vector<T> col(static_cast<std::size_t>(patch * trows * xs.w));
            if (xc.requires_grad()) xc.ensure_grad();
            if (wc.requires_grad()) wc.ensure_grad();
            if (bc.requires_grad()) bc.ensure_grad();
            const bool need_cols = xc.requires_grad() || wc.requires_grad();
            for (int64_t n = 0; n < xs.n; ++n) {
                const T* gon = oc.grad() + n * c_out * oh * ow;
                for (int64_t ih0 = 0; need_cols && ih0 < xs.h; ih0 += trows) {
                    const int64_t ih1 = std::min(xs.h, ih0 + trows);
                    const int64_t tile = (ih1 - ih0) * xs.w;
                    // col[(co,r,s),(ih,iw)] = gout[co, ih*stride+r-pad, iw*stride+s-pad]
                    detail::im2col(gon, c_out, oh, ow, kh, kw, stride, padding, 1, xs.w, ih0,
                                   ih1, col.data());
                    if (xc.requires_grad())
                        gemm(false, false, static_cast<int>(xs.c), static_cast<int>(tile),
                             static_cast<int>(patch), T(1), wc.data(),
                             static_cast<int>(patch), col.data(), static_cast<int>(tile),
                             T(1), xc.grad() + n * xs.c * ihw + ih0 * xs.w,
                             static_cast<int>(ihw));
                    if (wc.requires_grad())
                        gemm(false, true, static_cast<int>(xs.c), static_cast<int>(patch),
                             static_cast<int>(tile), T(1), xc.data() + n * xs.c * ihw + ih0 * xs.w,
                             static_cast<int>(ihw), col.data(), static_cast<int>(tile), T(1),
                             wc.grad(), static_cast<int>(patch));
                }
                if (bc.requires_grad()) {
                    for (int64_t co = 0; co < c_out; ++co) {
                        T acc = T(0);
                        const T* p = gon + co * oh * ow;
                        for (int64_t i = 0; i < oh * ow; ++i) acc += p[i];
                        bc.grad()[co] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// Max pooling; the backward pass routes the gradient to the first-scanned
// maximum of each window.
template <typename T>
Tensor4<T> maxpool2d(Tape<T>* tape, const Tensor4<T>& x, int kernel, int stride) {
    const Shape4 xs = x.shape();
    if (kernel < 1 || stride < 1) throw ShapeError("maxpool2d: kernel/stride must be >= 1");
    if ((xs.h - kernel) % stride != 0)
        throw ShapeError("maxpool2d: height axis " + std::to_string(xs.h) +
                         " not divisible by stride " + std::to_string(stride));
    if ((xs.w - kernel) % stride != 0)
        throw ShapeError("maxpool2d: width axis " + std::to_string(xs.w) +
                         " not divisible by stride " + std::to_string(stride));
    if (kernel > xs.h || kernel > xs.w)
        throw ShapeError("maxpool2d: kernel " + std::to_string(kernel) +
                         " exceeds input " + xs.str());
    const int64_t oh = (xs.h - kernel) / stride + 1;
    const int64_t ow = (xs.w - kernel) / stride + 1;
    Tensor4<T> out({xs.n, xs.c, oh, ow});
    const bool track = track_grad(tape, x);
    std::vector<int64_t> argmax;
    if (track) argmax.resize(static_cast<std::size_t>(out.numel()));

    int64_t oidx = 0;
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < xs.c; ++c) {
            const T* plane = x.data() + (n * xs.c + c) * xs.h * xs.w;
            for (int64_t i = 0; i < oh; ++i)
                for (int64_t j = 0; j < ow; ++j, ++oidx) {
                    T best = plane[(i * stride) * xs.w + j * stride];
                    int64_t best_at = (i * stride) * xs.w + j * stride;
                    for (int r = 0; r < kernel; ++r)
                        for (int s = 0; s < kernel; ++s) {
                            const int64_t at = (i * stride + r) * xs.w + j * stride + s;
                            if (plane[at] > best) {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    out.data()[oidx] = best;
                    if (track) argmax[static_cast<std::size_t>(oidx)] =
                        (n * xs.c + c) * xs.h * xs.w + best_at;
                }
        }

    if (track) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, argmax = std::move(argmax)]() mutable {
            xc.ensure_grad();
            const T* go = oc.grad();
            for (std::size_t i = 0; i < argmax.size(); ++i)
                xc.grad()[argmax[i]] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor4<T> eltwise_mul(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("eltwise_mul: shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    Tensor4<T> out(a.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];

    if (track_grad(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const T* go = oc.grad();
            const int64_t n = oc.numel();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (int64_t i = 0; i < n; ++i) ac.grad()[i] += go[i] * bc.data()[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (int64_t i = 0; i < n; ++i) bc.grad()[i] += go[i] * ac.data()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> add(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> out(a.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];

    if (track_grad(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const T* go = oc.grad();
            const int64_t n = oc.numel();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (int64_t i = 0; i < n; ++i) ac.grad()[i] += go[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (int64_t i = 0; i < n; ++i) bc.grad()[i] += go[i];
            }
        });
    }
    return out;
}

// Cross-channel concatenation; all parts must agree on (n, h, w).
template <typename T>
Tensor4<T> concat_channels(Tape<T>* tape, const std::vector<Tensor4<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    const Shape4 s0 = parts[0].shape();
    int64_t c_total = 0;
    for (const auto& p : parts) {
        const Shape4 s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw ShapeError("concat_channels: spatial/batch axis mismatch " + s.str() +
                             " vs " + s0.str());
        c_total += s.c;
    }
    Tensor4<T> out({s0.n, c_total, s0.h, s0.w});
    const int64_t hw = s0.h * s0.w;
    for (int64_t n = 0; n < s0.n; ++n) {
        int64_t c_off = 0;
        for (const auto& p : parts) {
            const int64_t pc = p.shape().c;
            std::copy(p.data() + n * pc * hw, p.data() + (n + 1) * pc * hw,
                      out.data() + (n * c_total + c_off) * hw);
            c_off += pc;
        }
    }

    bool track = tape != nullptr;
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (track && any) {
        out.set_requires_grad(true);
        std::vector<Tensor4<T>> pc = parts;
        Tensor4<T> oc = out;
        tape->record([pc, oc]() mutable {
            const Shape4 os = oc.shape();
            const int64_t hw = os.h * os.w;
            for (int64_t n = 0; n < os.n; ++n) {
                int64_t c_off = 0;
                for (auto& p : pc) {
                    const int64_t sz = p.shape().c * hw;
                    if (p.requires_grad()) {
                        p.ensure_grad();
                        const T* go = oc.grad() + (n * os.c + c_off) * hw;
                        T* gp = p.grad() + n * sz;
                        for (int64_t i = 0; i < sz; ++i) gp[i] += go[i];
                    }
                    c_off += p.shape().c;
                }
            }
        });
    }
    return out;
}

// Logistic function with output clamped to the open interval (0,1); saturated
// inputs would otherwise round to exactly 0 or 1.
template <typename T>
Tensor4<T> sigmoid(Tape<T>* tape, const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    const int64_t n = out.numel();
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    for (int64_t i = 0; i < n; ++i) {
        const T v = x.data()[i];
        const T y = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
        out.data()[i] = std::clamp(y, lo, hi);
    }
    if (track_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            xc.ensure_grad();
            const T* go = oc.grad();
            const int64_t n = oc.numel();
            for (int64_t i = 0; i < n; ++i) {
                const T y = oc.data()[i];
                xc.grad()[i] += go[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> relu(Tape<T>* tape, const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = std::max(x.data()[i], T(0));
    if (track_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            xc.ensure_grad();
            const T* go = oc.grad();
            const int64_t n = oc.numel();
            for (int64_t i = 0; i < n; ++i)
                if (xc.data()[i] > T(0)) xc.grad()[i] += go[i];
        });
    }
    return out;
}

// Foreground probability of 2-channel logits. softmax over two channels
// collapses to sigmoid of the logit difference, which is how it is computed.
template <typename T>
Tensor4<T> softmax_fg_prob(Tape<T>* tape, const Tensor4<T>& logits) {
    const Shape4 s = logits.shape();
    if (s.c != 2)
        throw ShapeError("softmax_fg_prob: channel axis must be 2, got " + s.str());
    Tensor4<T> out({s.n, 1, s.h, s.w});
    const int64_t hw = s.h * s.w;
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    for (int64_t n = 0; n < s.n; ++n) {
        const T* bg = logits.data() + (n * 2 + 0) * hw;
        const T* fg = logits.data() + (n * 2 + 1) * hw;
        T* o = out.data() + n * hw;
        for (int64_t i = 0; i < hw; ++i) {
            const T d = fg[i] - bg[i];
            const T y = d >= T(0) ? T(1) / (T(1) + std::exp(-d))
                                  : std::exp(d) / (T(1) + std::exp(d));
            o[i] = std::clamp(y, lo, hi);
        }
    }
    if (track_grad(tape, logits)) {
        out.set_requires_grad(true);
        Tensor4<T> lc = logits, oc = out;
        tape->record([lc, oc]() mutable {
            lc.ensure_grad();
            const Shape4 s = lc.shape();
            const int64_t hw = s.h * s.w;
            for (int64_t n = 0; n < s.n; ++n) {
                const T* go = oc.grad() + n * hw;
                const T* p = oc.data() + n * hw;
                T* gbg = lc.grad() + (n * 2 + 0) * hw;
                T* gfg = lc.grad() + (n * 2 + 1) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const T d = go[i] * p[i] * (T(1) - p[i]);
                    gfg[i] += d;
                    gbg[i] -= d;
                }
            }
        });
    }
    return out;
}

// Mean over all pixels of the 2-class cross-entropy between logits
// (background/foreground channels) and a binary target map. Uses the stable
// log-sum-exp form; differentiable w.r.t. logits only.
template <typename T>
Tensor4<T> softmax_ce_loss(Tape<T>* tape, const Tensor4<T>& logits, const Tensor4<T>& target) {
    const Shape4 ls = logits.shape(), ts = target.shape();
    if (ls.c != 2)
        throw ShapeError("softmax_ce_loss: logits channel axis must be 2, got " + ls.str());
    if (ts.c != 1 || ts.n != ls.n || ts.h != ls.h || ts.w != ls.w)
        throw ShapeError("softmax_ce_loss: target shape " + ts.str() +
                         " does not match logits " + ls.str());
    const int64_t hw = ls.h * ls.w, npx = ls.n * hw;
    // compensated summation so a batched mean and an accumulated per-sample
    // mean agree to full precision
    double acc = 0.0, comp = 0.0;
    for (int64_t n = 0; n < ls.n; ++n) {
        const T* bg = logits.data() + (n * 2 + 0) * hw;
        const T* fg = logits.data() + (n * 2 + 1) * hw;
        const T* t = target.data() + n * hw;
        for (int64_t i = 0; i < hw; ++i) {
            if (t[i] != T(0) && t[i] != T(1))
                throw DataError("softmax_ce_loss: target value " +
                                std::to_string(static_cast<double>(t[i])) +
                                " outside {0,1}");
            const T m = std::max(bg[i], fg[i]);
            const T lse = m + std::log(std::exp(bg[i] - m) + std::exp(fg[i] - m));
            const double term =
                static_cast<double>(lse - (t[i] == T(1) ? fg[i] : bg[i])) - comp;
            const double next = acc + term;
            comp = (next - acc) - term;
            acc = next;
        }
    }
    Tensor4<T> out({1, 1, 1, 1});
    out.data()[0] = static_cast<T>(acc / static_cast<double>(npx));

    if (track_grad(tape, logits)) {
        out.set_requires_grad(true);
        Tensor4<T> lc = logits, tc = target, oc = out;
        tape->record([lc, tc, oc]() mutable {
            lc.ensure_grad();
            const Shape4 ls = lc.shape();
            const int64_t hw = ls.h * ls.w, npx = ls.n * hw;
            const T up = oc.grad()[0] / static_cast<T>(npx);
            for (int64_t n = 0; n < ls.n; ++n) {
                const T* bg = lc.data() + (n * 2 + 0) * hw;
                const T* fg = lc.data() + (n * 2 + 1) * hw;
                const T* t = tc.data() + n * hw;
                T* gbg = lc.grad() + (n * 2 + 0) * hw;
                T* gfg = lc.grad() + (n * 2 + 1) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const T d = fg[i] - bg[i];
                    const T pfg = d >= T(0) ? T(1) / (T(1) + std::exp(-d))
                                            : std::exp(d) / (T(1) + std::exp(d));
                    gfg[i] += up * (pfg - (t[i] == T(1) ? T(1) : T(0)));
                    gbg[i] += up * ((T(1) - pfg) - (t[i] == T(1) ? T(0) : T(1)));
                }
            }
        });
    }
    return out;
}

// Inverted dropout: in training, zero each value with probability `ratio` and
// scale survivors by 1/(1-ratio); at inference it is the identity. The mask
// is reproducible from the seed.
template <typename T>
Tensor4<T> dropout(Tape<T>* tape, const Tensor4<T>& x, double ratio, bool training,
                   std::uint64_t rng_seed) {
    if (ratio < 0.0 || ratio >= 1.0)
        throw DataError("dropout: ratio " + std::to_string(ratio) + " outside [0,1)");
    if (!training || ratio == 0.0) return x;

    const int64_t n = x.numel();
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n));
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int64_t i = 0; i < n; ++i) keep[static_cast<std::size_t>(i)] = uni(rng) >= ratio;

    const T scale = static_cast<T>(1.0 / (1.0 - ratio));
    Tensor4<T> out(x.shape());
    for (int64_t i = 0; i < n; ++i)
        out.data()[i] = keep[static_cast<std::size_t>(i)] ? x.data()[i] * scale : T(0);

    if (track_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, keep = std::move(keep), scale]() mutable {
            xc.ensure_grad();
            const T* go = oc.grad();
            const int64_t n = oc.numel();
            for (int64_t i = 0; i < n; ++i)
                if (keep[static_cast<std::size_t>(i)]) xc.grad()[i] += go[i] * scale;
        });
    }
    return out;
}

// Nearest-neighbour resize; binary inputs stay binary. Source index is
// floor(i * h_in / h_out).
template <typename T>
Tensor4<T> resize_nearest(Tape<T>* tape, const Tensor4<T>& x, int64_t h_out, int64_t w_out) {
    if (h_out < 1 || w_out < 1) throw ShapeError("resize_nearest: target axes must be >= 1");
    const Shape4 s = x.shape();
    if (s.h == h_out && s.w == w_out) return x;
    Tensor4<T> out({s.n, s.c, h_out, w_out});
    std::vector<int64_t> src_i(static_cast<std::size_t>(h_out)), src_j(static_cast<std::size_t>(w_out));
    for (int64_t i = 0; i < h_out; ++i) src_i[static_cast<std::size_t>(i)] = i * s.h / h_out;
    for (int64_t j = 0; j < w_out; ++j) src_j[static_cast<std::size_t>(j)] = j * s.w / w_out;
    for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const T* in = x.data() + nc * s.h * s.w;
        T* o = out.data() + nc * h_out * w_out;
        for (int64_t i = 0; i < h_out; ++i)
            for (int64_t j = 0; j < w_out; ++j)
                o[i * w_out + j] = in[src_i[static_cast<std::size_t>(i)] * s.w +
                                      src_j[static_cast<std::size_t>(j)]];
    }
    if (track_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, src_i = std::move(src_i), src_j = std::move(src_j)]() mutable {
            xc.ensure_grad();
            const Shape4 s = xc.shape(), os = oc.shape();
            for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
                const T* go = oc.grad() + nc * os.h * os.w;
                T* gx = xc.grad() + nc * s.h * s.w;
                for (int64_t i = 0; i < os.h; ++i)
                    for (int64_t j = 0; j < os.w; ++j)
                        gx[src_i[static_cast<std::size_t>(i)] * s.w +
                           src_j[static_cast<std::size_t>(j)]] += go[i * os.w + j];
            }
        });
    }
    return out;
}

// Sum of all elements as a scalar tensor; the usual test head for turning an
// op output into a checkable loss.
template <typename T>
Tensor4<T> sum_all(Tape<T>* tape, const Tensor4<T>& x) {
    Tensor4<T> out({1, 1, 1, 1});
    double acc = 0.0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
    out.data()[0] = static_cast<T>(acc);
    if (track_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            xc.ensure_grad();
            const T g = oc.grad()[0];
            const int64_t n = xc.numel();
            for (int64_t i = 0; i < n; ++i) xc.grad()[i] += g;
        });
    }
    return out;
}

}  // namespace olbp
