#pragma once

#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "rap/errors.hpp"

namespace rap::nn {

/// Single-sample feature map, channels x height x width, row-major.
struct Tensor {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(std::size_t c_, std::size_t h_, std::size_t w_, float fill = 0.0f)
        : c(c_), h(h_), w(w_), v(c_ * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }
    float* plane(std::size_t ch) { return v.data() + ch * h * w; }
    const float* plane(std::size_t ch) const { return v.data() + ch * h * w; }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    std::string shape_str() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
    void zero() { std::memset(v.data(), 0, v.size() * sizeof(float)); }
};

/// 3x3 convolution parameters, zero padding 1, stride 1 or 2.
/// Weight layout: [out_c][in_c][3][3].
struct Conv {
    std::size_t in_c = 0, out_c = 0;
    std::size_t stride = 1;
    std::vector<float> w;
    std::vector<float> b;

    Conv() = default;
    Conv(std::size_t in, std::size_t out, std::size_t s)
        : in_c(in), out_c(out), stride(s), w(out * in * 9, 0.0f), b(out, 0.0f) {}

    std::size_t fan_in() const { return in_c * 9; }
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t stride) {
    // pad 1, kernel 3: stride 1 preserves, stride 2 halves (even inputs)
    return (in + 2 - 3) / stride + 1;
}

/// Pre-activation convolution output.
inline Tensor conv_forward(const Conv& p, const Tensor& in) {
    if (in.c != p.in_c)
        throw DimensionError("conv input channels " + std::to_string(in.c) + " != " +
                             std::to_string(p.in_c));
    const std::size_t oh = conv_out_dim(in.h, p.stride);
    const std::size_t ow = conv_out_dim(in.w, p.stride);
    Tensor out(p.out_c, oh, ow);
    const std::size_t hw = in.h * in.w;
    for (std::size_t oc = 0; oc < p.out_c; ++oc) {
        float* op = out.plane(oc);
        const float bias = p.b[oc];
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy0 = std::ptrdiff_t(oy * p.stride) - 1;
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix0 = std::ptrdiff_t(ox * p.stride) - 1;
                float acc = bias;
                const float* wp = p.w.data() + oc * p.in_c * 9;
                for (std::size_t ic = 0; ic < p.in_c; ++ic, wp += 9) {
                    const float* ip = in.v.data() + ic * hw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t iy = iy0 + ky;
                        if (iy < 0 || iy >= std::ptrdiff_t(in.h)) continue;
                        const float* row = ip + iy * in.w;
                        const float* wr = wp + ky * 3;
                        for (int kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t ix = ix0 + kx;
                            if (ix < 0 || ix >= std::ptrdiff_t(in.w)) continue;
                            acc += wr[kx] * row[ix];
                        }
                    }
                }
                op[oy * ow + ox] = acc;
            }
        }
    }
    return out;
}

/// Accumulates dW/db into `grad` (shaped like `p`) and input gradient into
/// `din` (must be zeroed or pre-filled by the caller to accumulate into).
inline void conv_backward(const Conv& p, const Tensor& in, const Tensor& dout, Tensor& din,
                          Conv& grad) {
    const std::size_t oh = dout.h, ow = dout.w;
    const std::size_t hw = in.h * in.w;
    for (std::size_t oc = 0; oc < p.out_c; ++oc) {
        const float* dop = dout.plane(oc);
        double db = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) db += dop[i];
        grad.b[oc] += static_cast<float>(db);
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy0 = std::ptrdiff_t(oy * p.stride) - 1;
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const float g = dop[oy * ow + ox];
                if (g == 0.0f) continue;
                const std::ptrdiff_t ix0 = std::ptrdiff_t(ox * p.stride) - 1;
                float* wg = grad.w.data() + oc * p.in_c * 9;
                const float* wp = p.w.data() + oc * p.in_c * 9;
                for (std::size_t ic = 0; ic < p.in_c; ++ic, wg += 9, wp += 9) {
                    const float* ip = in.v.data() + ic * hw;
                    float* dp = din.v.data() + ic * hw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t iy = iy0 + ky;
                        if (iy < 0 || iy >= std::ptrdiff_t(in.h)) continue;
                        const float* row = ip + iy * in.w;
                        float* drow = dp + iy * in.w;
                        for (int kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t ix = ix0 + kx;
                            if (ix < 0 || ix >= std::ptrdiff_t(in.w)) continue;
                            wg[ky * 3 + kx] += g * row[ix];
                            drow[ix] += g * wp[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

inline constexpr float kLeakySlope = 0.1f;

inline Tensor leaky_relu(const Tensor& pre) {
    Tensor out = pre;
    for (float& x : out.v)
        if (x < 0.0f) x *= kLeakySlope;
    return out;
}

/// In-place: d *= leaky'(pre).
inline void leaky_relu_backward(const Tensor& pre, Tensor& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (pre.v[i] < 0.0f) d.v[i] *= kLeakySlope;
}

inline Tensor upsample2(const Tensor& in) {
    Tensor out(in.c, in.h * 2, in.w * 2);
    for (std::size_t ch = 0; ch < in.c; ++ch) {
        const float* ip = in.plane(ch);
        float* op = out.plane(ch);
        for (std::size_t y = 0; y < in.h; ++y)
            for (std::size_t x = 0; x < in.w; ++x) {
                float v = ip[y * in.w + x];
                float* o = op + (2 * y) * out.w + 2 * x;
                o[0] = v;
                o[1] = v;
                o[out.w] = v;
                o[out.w + 1] = v;
            }
    }
    return out;
}

inline Tensor upsample2_backward(const Tensor& dout, std::size_t in_h, std::size_t in_w) {
    Tensor din(dout.c, in_h, in_w);
    for (std::size_t ch = 0; ch < dout.c; ++ch) {
        const float* dp = dout.plane(ch);
        float* op = din.plane(ch);
        for (std::size_t y = 0; y < in_h; ++y)
            for (std::size_t x = 0; x < in_w; ++x) {
                const float* d = dp + (2 * y) * dout.w + 2 * x;
                op[y * in_w + x] = d[0] + d[1] + d[dout.w] + d[dout.w + 1];
            }
    }
    return din;
}

inline Tensor avgpool2(const Tensor& in) {
    Tensor out(in.c, in.h / 2, in.w / 2);
    for (std::size_t ch = 0; ch < in.c; ++ch) {
        const float* ip = in.plane(ch);
        float* op = out.plane(ch);
        for (std::size_t y = 0; y < out.h; ++y)
            for (std::size_t x = 0; x < out.w; ++x) {
                const float* i = ip + (2 * y) * in.w + 2 * x;
                op[y * out.w + x] = 0.25f * (i[0] + i[1] + i[in.w] + i[in.w + 1]);
            }
    }
    return out;
}

inline Tensor avgpool2_backward(const Tensor& dout, std::size_t in_h, std::size_t in_w) {
    Tensor din(dout.c, in_h, in_w);
    for (std::size_t ch = 0; ch < dout.c; ++ch) {
        const float* dp = dout.plane(ch);
        float* op = din.plane(ch);
        for (std::size_t y = 0; y < dout.h; ++y)
            for (std::size_t x = 0; x < dout.w; ++x) {
                float g = 0.25f * dp[y * dout.w + x];
                float* o = op + (2 * y) * in_w + 2 * x;
                o[0] = g;
                o[1] = g;
                o[in_w] = g;
                o[in_w + 1] = g;
            }
    }
    return din;
}

/// Channel-wise concatenation; `a` occupies the first channel block.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.h != b.h || a.w != b.w)
        throw DimensionError("concat spatial mismatch: " + a.shape_str() + " vs " +
                             b.shape_str());
    Tensor out(a.c + b.c, a.h, a.w);
    std::memcpy(out.data(), a.data(), a.size() * sizeof(float));
    std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(float));
    return out;
}

inline void split_channels(const Tensor& d, std::size_t c_first, Tensor& da, Tensor& db) {
    da = Tensor(c_first, d.h, d.w);
    db = Tensor(d.c - c_first, d.h, d.w);
    std::memcpy(da.data(), d.data(), da.size() * sizeof(float));
    std::memcpy(db.data(), d.data() + da.size(), db.size() * sizeof(float));
}

}  // namespace rap::nn
