#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rap/field.hpp"
#include "rap/physics.hpp"

namespace rap {

/// Normalized squared Frobenius distance between two input windows:
/// mean over all T_in*C*H*W elements of (a - b)^2, accumulated in double.
inline double similarity(const Field& xa, const Field& xb) {
    if (!xa.same_shape(xb))
        throw DimensionError("similarity shape mismatch: " + xa.shape_str() + " vs " +
                             xb.shape_str());
    const float* pa = xa.data();
    const float* pb = xb.data();
    const std::size_t n = xa.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = double(pa[i]) - double(pb[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

enum class ExclusionMode { none, exact_self, source_window };

inline std::string to_string(ExclusionMode m) {
    switch (m) {
        case ExclusionMode::none: return "none";
        case ExclusionMode::exact_self: return "exact-self";
        case ExclusionMode::source_window: return "source-window";
    }
    return "none";
}

inline ExclusionMode exclusion_from_string(const std::string& s) {
    if (s == "none") return ExclusionMode::none;
    if (s == "exact-self" || s == "exact_self") return ExclusionMode::exact_self;
    if (s == "source-window" || s == "source_window") return ExclusionMode::source_window;
    throw ConfigError("unknown exclusion mode: " + s);
}

struct ExclusionRule {
    ExclusionMode mode = ExclusionMode::none;
    std::uint64_t window_radius = 0;
};

struct QueryIdentity {
    std::uint64_t source_id = 0;
    std::uint64_t start_index = 0;
};

struct RetrievalResult {
    std::size_t index = 0;  // position in the database
    double score = 0.0;
    const Field* reference = nullptr;     // Y_k
    const Field* analog_input = nullptr;  // X_k
};

/// Ordered, immutable collection of (X_i, Y_i) exemplars. Entry order is
/// load order and is the tie-break key for retrieval.
class AnalogDatabase {
public:
    AnalogDatabase() = default;
    explicit AnalogDatabase(std::vector<TrajectoryPair> entries)
        : entries_(std::move(entries)) {
        validate_shapes();
    }

    const std::vector<TrajectoryPair>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    const TrajectoryPair& entry(std::size_t i) const { return entries_[i]; }

    std::size_t t_in() const { return entries_.empty() ? 0 : entries_[0].x.t(); }
    std::size_t t_out() const { return entries_.empty() ? 0 : entries_[0].y.t(); }

    bool excluded(std::size_t i, const ExclusionRule& excl,
                  const std::optional<QueryIdentity>& id) const {
        if (excl.mode == ExclusionMode::none || !id) return false;
        const auto& e = entries_[i];
        if (excl.mode == ExclusionMode::exact_self)
            return e.source_id == id->source_id && e.start_index == id->start_index;
        if (e.source_id != id->source_id) return false;
        std::uint64_t a = e.start_index, b = id->start_index;
        return (a > b ? a - b : b - a) <= excl.window_radius;
    }

    /// The k nearest entries under `similarity`, ordered by (score asc,
    /// index asc). Exhaustive scan; workers partition the entries and the
    /// per-worker candidate lists are merged by the same total order, so
    /// the result is independent of n_workers.
    std::vector<RetrievalResult> retrieve(const Field& query, std::size_t k = 1,
                                          const ExclusionRule& excl = {},
                                          std::optional<QueryIdentity> id = std::nullopt,
                                          unsigned n_workers = 1) const {
        if (entries_.empty()) throw RetrievalError("retrieve on empty database");
        if (k < 1) throw RetrievalError("k must be >= 1");
        if (!query.same_shape(entries_[0].x))
            throw DimensionError("query shape " + query.shape_str() +
                                 " does not match database x-shape " +
                                 entries_[0].x.shape_str());

        using Cand = std::pair<double, std::size_t>;
        auto scan = [&](std::size_t lo, std::size_t hi, std::vector<Cand>& out) {
            for (std::size_t i = lo; i < hi; ++i) {
                if (excluded(i, excl, id)) continue;
                out.emplace_back(similarity(query, entries_[i].x), i);
            }
            std::sort(out.begin(), out.end());
            if (out.size() > k) out.resize(k);
        };

        std::vector<Cand> merged;
        if (n_workers <= 1) {
            scan(0, entries_.size(), merged);
        } else {
            unsigned nw = std::min<unsigned>(n_workers, static_cast<unsigned>(entries_.size()));
            std::vector<std::vector<Cand>> parts(nw);
            std::vector<std::thread> threads;
            std::size_t chunk = (entries_.size() + nw - 1) / nw;
            for (unsigned t = 0; t < nw; ++t) {
                std::size_t lo = t * chunk;
                std::size_t hi = std::min(entries_.size(), lo + chunk);
                threads.emplace_back([&, lo, hi, t] { scan(lo, hi, parts[t]); });
            }
            for (auto& th : threads) th.join();
            for (auto& p : parts) merged.insert(merged.end(), p.begin(), p.end());
            std::sort(merged.begin(), merged.end());
            if (merged.size() > k) merged.resize(k);
        }
        if (merged.empty()) throw RetrievalError("database empty after exclusion");

        std::vector<RetrievalResult> results;
        results.reserve(merged.size());
        for (const auto& [score, idx] : merged)
            results.push_back({idx, score, &entries_[idx].y, &entries_[idx].x});
        return results;
    }

private:
    void validate_shapes() const {
        for (std::size_t i = 1; i < entries_.size(); ++i) {
            if (!entries_[i].x.same_shape(entries_[0].x) ||
                !entries_[i].y.same_shape(entries_[0].y))
                throw DimensionError("database entry " + std::to_string(i) +
                                     " shape differs from entry 0");
        }
    }

    std::vector<TrajectoryPair> entries_;
};

/// Load the manifest's retrieval library into memory, in manifest order.
inline AnalogDatabase build_database(const DatasetManifest& manifest) {
    if (manifest.retrieval.empty())
        throw RetrievalError("manifest retrieval list is empty");
    std::vector<TrajectoryPair> entries;
    entries.reserve(manifest.retrieval.size());
    for (const auto& e : manifest.retrieval) {
        TrajectoryPair p;
        p.x = read_field(e.x_path);
        p.y = read_field(e.y_path);
        p.source_id = e.source_id;
        p.start_index = e.start_index;
        if (!entries.empty() &&
            (!p.x.same_shape(entries[0].x) || !p.y.same_shape(entries[0].y)))
            throw DimensionError("retrieval entry has inconsistent shape: " + e.x_path);
        entries.push_back(std::move(p));
    }
    return AnalogDatabase(std::move(entries));
}

// ---- .rapdb on-disk format ----
// magic "RAPD" | version u32=1 | N u64 | t_in,t_out,c,h,w u32 |
// N x { source_id u64, start_index u64, x payload, y payload }

inline constexpr std::uint32_t kDatabaseFormatVersion = 1;

inline void save_database(const AnalogDatabase& db, const std::string& path) {
    if (db.size() == 0) throw RetrievalError("refusing to save empty database");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    const auto& first = db.entry(0);
    os.write("RAPD", 4);
    detail::put_u32(os, kDatabaseFormatVersion);
    detail::put_u64(os, db.size());
    detail::put_u32(os, static_cast<std::uint32_t>(first.x.t()));
    detail::put_u32(os, static_cast<std::uint32_t>(first.y.t()));
    detail::put_u32(os, static_cast<std::uint32_t>(first.x.c()));
    detail::put_u32(os, static_cast<std::uint32_t>(first.x.h()));
    detail::put_u32(os, static_cast<std::uint32_t>(first.x.w()));
    for (const auto& e : db.entries()) {
        detail::put_u64(os, e.source_id);
        detail::put_u64(os, e.start_index);
        detail::put_floats(os, e.x.data(), e.x.size());
        detail::put_floats(os, e.y.data(), e.y.size());
    }
    if (!os) throw IoError("write failed: " + path);
}

inline AnalogDatabase load_database(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "RAPD", 4) != 0)
        throw FormatError("bad magic, expected RAPD", 0);
    std::uint32_t version = detail::get_u32(is, 4, "version");
    if (version != kDatabaseFormatVersion)
        throw FormatError("unsupported database version " + std::to_string(version), 4);
    std::uint64_t n = detail::get_u64(is, 8, "entry count");
    std::uint32_t t_in = detail::get_u32(is, 16, "t_in");
    std::uint32_t t_out = detail::get_u32(is, 20, "t_out");
    std::uint32_t c = detail::get_u32(is, 24, "c");
    std::uint32_t h = detail::get_u32(is, 28, "h");
    std::uint32_t w = detail::get_u32(is, 32, "w");
    std::size_t offset = 36;
    std::vector<TrajectoryPair> entries;
    entries.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        TrajectoryPair p;
        p.source_id = detail::get_u64(is, offset, "source_id");
        p.start_index = detail::get_u64(is, offset + 8, "start_index");
        offset += 16;
        p.x = Field(t_in, c, h, w);
        detail::get_floats(is, p.x.data(), p.x.size(), offset);
        offset += p.x.size() * sizeof(float);
        p.y = Field(t_out, c, h, w);
        detail::get_floats(is, p.y.data(), p.y.size(), offset);
        offset += p.y.size() * sizeof(float);
        entries.push_back(std::move(p));
    }
    return AnalogDatabase(std::move(entries));
}

}  // namespace rap
