#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "rap/errors.hpp"

namespace rap {

/// Dense spatiotemporal field: t timesteps, c channels, h x w grid.
/// Flat row-major (t, c, h, w) storage, 32-bit floats.
class Field {
public:
    Field() = default;

    Field(std::size_t t, std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : t_(t), c_(c), h_(h), w_(w), data_(t * c * h * w, fill) {}

    Field(std::size_t t, std::size_t c, std::size_t h, std::size_t w, std::vector<float> data)
        : t_(t), c_(c), h_(h), w_(w), data_(std::move(data)) {
        if (data_.size() != t * c * h * w)
            throw DimensionError("field data length " + std::to_string(data_.size()) +
                                 " != t*c*h*w = " + std::to_string(t * c * h * w));
    }

    std::size_t t() const { return t_; }
    std::size_t c() const { return c_; }
    std::size_t h() const { return h_; }
    std::size_t w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Field& o) const {
        return t_ == o.t_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }
    std::string shape_str() const {
        return std::to_string(t_) + "x" + std::to_string(c_) + "x" +
               std::to_string(h_) + "x" + std::to_string(w_);
    }

    std::size_t offset(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const {
        return ((t * c_ + c) * h_ + h) * w_ + w;
    }
    float& at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) {
        return data_[offset(t, c, h, w)];
    }
    float at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset(t, c, h, w)];
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& raw() { return data_; }
    const std::vector<float>& raw() const { return data_; }

    bool operator==(const Field& o) const {
        return same_shape(o) && std::memcmp(data_.data(), o.data_.data(),
                                            data_.size() * sizeof(float)) == 0;
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Frames [t0, t0+n) as a new field.
    Field slice_t(std::size_t t0, std::size_t n) const {
        if (t0 + n > t_)
            throw DimensionError("slice_t past end: " + std::to_string(t0 + n) + " > " +
                                 std::to_string(t_));
        Field out(n, c_, h_, w_);
        std::memcpy(out.data(), data_.data() + t0 * c_ * h_ * w_,
                    n * c_ * h_ * w_ * sizeof(float));
        return out;
    }

    /// Concatenate along time. Spatial/channel shapes must agree.
    static Field concat_t(const Field& a, const Field& b) {
        if (a.c_ != b.c_ || a.h_ != b.h_ || a.w_ != b.w_)
            throw DimensionError("concat_t shape mismatch: " + a.shape_str() + " vs " +
                                 b.shape_str());
        Field out(a.t_ + b.t_, a.c_, a.h_, a.w_);
        std::memcpy(out.data(), a.data(), a.size() * sizeof(float));
        std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(float));
        return out;
    }

private:
    std::size_t t_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

enum class BinOp { add, sub, mul };

inline Field field_binop(const Field& a, const Field& b, BinOp op) {
    if (!a.same_shape(b))
        throw DimensionError("binop shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Field out(a.t(), a.c(), a.h(), a.w());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t n = a.size();
    switch (op) {
        case BinOp::add:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case BinOp::sub:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case BinOp::mul:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
    }
    return out;
}

// ---- .rapf on-disk format ----
// magic "RAPF" | version u32=1 | t,c,h,w u32 | payload binary32, all little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& is, std::size_t offset, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw FormatError(std::string("truncated reading ") + what, offset);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, std::size_t offset, const char* what) {
    std::uint64_t lo = get_u32(is, offset, what);
    std::uint64_t hi = get_u32(is, offset + 4, what);
    return lo | (hi << 32);
}

// Host is assumed little-endian; floats are written verbatim.
static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 binary32 required");

inline void put_floats(std::ostream& os, const float* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
}

inline void get_floats(std::istream& is, float* p, std::size_t n, std::size_t offset) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(float))
        throw FormatError("truncated payload: expected " + std::to_string(n * sizeof(float)) +
                              " bytes, got " + std::to_string(is.gcount()),
                          offset);
}

}  // namespace detail

inline constexpr std::uint32_t kFieldFormatVersion = 1;

inline void write_field(const Field& f, std::ostream& os) {
    os.write("RAPF", 4);
    detail::put_u32(os, kFieldFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(f.t()));
    detail::put_u32(os, static_cast<std::uint32_t>(f.c()));
    detail::put_u32(os, static_cast<std::uint32_t>(f.h()));
    detail::put_u32(os, static_cast<std::uint32_t>(f.w()));
    detail::put_floats(os, f.data(), f.size());
}

inline void write_field(const Field& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_field(f, os);
    if (!os) throw IoError("write failed: " + path);
}

inline Field read_field(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "RAPF", 4) != 0)
        throw FormatError("bad magic, expected RAPF", 0);
    std::uint32_t version = detail::get_u32(is, 4, "version");
    if (version != kFieldFormatVersion)
        throw FormatError("unsupported field format version " + std::to_string(version), 4);
    std::uint32_t t = detail::get_u32(is, 8, "t");
    std::uint32_t c = detail::get_u32(is, 12, "c");
    std::uint32_t h = detail::get_u32(is, 16, "h");
    std::uint32_t w = detail::get_u32(is, 20, "w");
    std::uint64_t n = std::uint64_t(t) * c * h * w;
    if (t == 0 || n > (std::uint64_t(1) << 34))
        throw FormatError("implausible dims " + std::to_string(t) + "x" + std::to_string(c) +
                              "x" + std::to_string(h) + "x" + std::to_string(w),
                          8);
    Field f(t, c, h, w);
    detail::get_floats(is, f.data(), static_cast<std::size_t>(n), 24);
    return f;
}

inline Field read_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return read_field(is);
}

// ---- windowing ----

/// An (input window, future window) exemplar cut from a source trajectory.
struct TrajectoryPair {
    Field x;  // t = t_in
    Field y;  // t = t_out, starts at source timestep start_index + t_in
    std::uint64_t source_id = 0;
    std::uint64_t start_index = 0;
};

/// Slide a (t_in + t_out) window over a trajectory with the given stride.
/// Too-short trajectories yield an empty list.
inline std::vector<TrajectoryPair> window_split(const Field& traj, std::size_t t_in,
                                                std::size_t t_out, std::size_t stride,
                                                std::uint64_t source_id = 0) {
    if (stride < 1) throw ConfigError("window stride must be >= 1");
    std::vector<TrajectoryPair> pairs;
    if (traj.t() < t_in + t_out) return pairs;
    const std::size_t last_start = traj.t() - t_in - t_out;
    pairs.reserve(last_start / stride + 1);
    for (std::size_t s = 0; s <= last_start; s += stride) {
        TrajectoryPair p;
        p.x = traj.slice_t(s, t_in);
        p.y = traj.slice_t(s + t_in, t_out);
        p.source_id = source_id;
        p.start_index = s;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace rap
