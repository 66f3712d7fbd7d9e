#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rap/train.hpp"

namespace rap {

inline double metric_mse(const Field& y_hat, const Field& y_gt) {
    if (!y_hat.same_shape(y_gt))
        throw DimensionError("mse shape mismatch: " + y_hat.shape_str() + " vs " +
                             y_gt.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) {
        double d = double(y_hat.data()[i]) - double(y_gt.data()[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(y_hat.size());
}

inline double metric_mae(const Field& y_hat, const Field& y_gt) {
    if (!y_hat.same_shape(y_gt))
        throw DimensionError("mae shape mismatch: " + y_hat.shape_str() + " vs " +
                             y_gt.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i)
        acc += std::fabs(double(y_hat.data()[i]) - double(y_gt.data()[i]));
    return acc / static_cast<double>(y_hat.size());
}

/// 10*log10(max_i^2 / mse); +infinity when the fields are identical.
inline double metric_psnr(const Field& y_hat, const Field& y_gt, double max_i) {
    if (max_i <= 0.0) throw ConfigError("PSNR max_i must be > 0");
    double mse = metric_mse(y_hat, y_gt);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_i * max_i / mse);
}

inline constexpr std::size_t kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean SSIM over all 7x7 uniform sliding windows of every (t, c) plane.
inline double metric_ssim(const Field& y_hat, const Field& y_gt, double max_i) {
    if (!y_hat.same_shape(y_gt))
        throw DimensionError("ssim shape mismatch: " + y_hat.shape_str() + " vs " +
                             y_gt.shape_str());
    const std::size_t h = y_hat.h(), w = y_hat.w();
    if (h < kSsimWindow || w < kSsimWindow)
        throw DimensionError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                             " smaller than SSIM window");
    const double c1 = (kSsimK1 * max_i) * (kSsimK1 * max_i);
    const double c2 = (kSsimK2 * max_i) * (kSsimK2 * max_i);
    const double inv_win = 1.0 / double(kSsimWindow * kSsimWindow);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t t = 0; t < y_hat.t(); ++t) {
        for (std::size_t ch = 0; ch < y_hat.c(); ++ch) {
            const float* a = y_hat.data() + (t * y_hat.c() + ch) * h * w;
            const float* b = y_gt.data() + (t * y_gt.c() + ch) * h * w;
            for (std::size_t y0 = 0; y0 + kSsimWindow <= h; ++y0) {
                for (std::size_t x0 = 0; x0 + kSsimWindow <= w; ++x0) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    for (std::size_t y = y0; y < y0 + kSsimWindow; ++y)
                        for (std::size_t x = x0; x < x0 + kSsimWindow; ++x) {
                            double va = a[y * w + x], vb = b[y * w + x];
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    double mu_a = sa * inv_win, mu_b = sb * inv_win;
                    double var_a = saa * inv_win - mu_a * mu_a;
                    double var_b = sbb * inv_win - mu_b * mu_b;
                    double cov = sab * inv_win - mu_a * mu_b;
                    total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                    ++windows;
                }
            }
        }
    }
    return total / static_cast<double>(windows);
}

/// Return the retrieved reference target verbatim: the non-learning baseline.
inline Field analog_only_forecast(const AnalogDatabase& db, const Field& x_query) {
    return *db.retrieve(x_query, 1, ExclusionRule{ExclusionMode::none, 0})[0].reference;
}

/// Autoregressive rollout: each cycle retrieves for the current window,
/// predicts, appends, and seeds the next window with the last t_in frames.
inline Field rollout(const ModelParams& params, const AnalogDatabase* db, const Field& x0,
                     std::size_t n_cycles) {
    if (params.cfg.t_out < params.cfg.t_in)
        throw ConfigError("rollout needs t_out >= t_in");
    if (n_cycles < 1) throw ConfigError("rollout needs n_cycles >= 1");
    Field window = x0;
    Field out;
    for (std::size_t cycle = 0; cycle < n_cycles; ++cycle) {
        Field pred;
        try {
            pred = infer(params, db, window);
        } catch (const DivergenceError&) {
            throw DivergenceError("rollout diverged", static_cast<long>(cycle));
        }
        if (!pred.all_finite())
            throw DivergenceError("rollout diverged", static_cast<long>(cycle));
        out = cycle == 0 ? pred : Field::concat_t(out, pred);
        window = pred.slice_t(pred.t() - params.cfg.t_in, params.cfg.t_in);
    }
    return out;
}

/// 100 * (base - enhanced) / base, the relative improvement percentage.
inline double relative_improvement(double base, double enhanced) {
    if (base <= 0.0) throw ConfigError("relative_improvement needs base > 0");
    return 100.0 * (base - enhanced) / base;
}

/// 100 * (lb - ours) / (lb - ub): fraction of the partial-vs-full-data gap
/// closed. lb is the worse (partial-data) loss, ub the better (full-data) one.
inline double gap_recovery(double lower_bound_loss, double ours_loss,
                           double upper_bound_loss) {
    if (lower_bound_loss <= upper_bound_loss)
        throw ConfigError("gap_recovery needs lb > ub (degenerate gap)");
    return 100.0 * (lower_bound_loss - ours_loss) / (lower_bound_loss - upper_bound_loss);
}

// ---- metric aggregation over a test split ----

struct MetricSet {
    double mse = 0.0, mae = 0.0, psnr = 0.0, ssim = 0.0;
    std::size_t count = 0;
};

inline void to_json(nlohmann::json& j, const MetricSet& m) {
    j = nlohmann::json{{"mse", m.mse},
                       {"mae", m.mae},
                       {"psnr", std::isinf(m.psnr) ? nlohmann::json("inf") : nlohmann::json(m.psnr)},
                       {"ssim", m.ssim},
                       {"count", m.count}};
}

/// FNV-1a digest over the evaluated sample identities; all variants scored
/// on the same test pairs must report the same digest.
inline std::uint64_t sample_digest(const std::vector<TrainSample>& samples) {
    std::uint64_t hashv = 0xcbf29ce484222325ull;
    auto mix = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hashv ^= (v >> (8 * i)) & 0xff;
            hashv *= 0x100000001b3ull;
        }
    };
    for (const auto& s : samples) {
        mix(s.id.source_id);
        mix(s.id.start_index);
    }
    return hashv;
}

/// Score a predictor over test samples with per-sample-then-mean averaging
/// (PSNR included; an exact match contributes +inf and dominates the mean).
template <typename Predict>
MetricSet evaluate_metrics(const std::vector<TrainSample>& test, double max_i,
                           Predict&& predict) {
    MetricSet m;
    for (const auto& s : test) {
        Field y_hat = predict(s.x);
        m.mse += metric_mse(y_hat, s.y);
        m.mae += metric_mae(y_hat, s.y);
        m.psnr += metric_psnr(y_hat, s.y, max_i);
        m.ssim += metric_ssim(y_hat, s.y, max_i);
        ++m.count;
    }
    if (m.count > 0) {
        double n = static_cast<double>(m.count);
        m.mse /= n;
        m.mae /= n;
        m.psnr /= n;
        m.ssim /= n;
    }
    return m;
}

// ---- PGM frame dumps ----

/// 8-bit grayscale PGM, min/max normalized per frame. Returns (min, max)
/// used for the normalization so the report can record it.
inline std::pair<double, double> write_pgm(const Field& f, std::size_t t, std::size_t c,
                                           const std::string& path) {
    const std::size_t h = f.h(), w = f.w();
    const float* p = f.data() + (t * f.c() + c) * h * w;
    float lo = p[0], hi = p[0];
    for (std::size_t i = 0; i < h * w; ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    float range = hi - lo;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h * w; ++i) {
        float norm = range > 0 ? (p[i] - lo) / range : 0.0f;
        os.put(static_cast<char>(std::lround(norm * 255.0f)));
    }
    return {lo, hi};
}

// ---- experiment matrix ----

struct ExperimentConfig {
    ArchConfig arch;
    TrainConfig train;
    std::vector<Variant> variants{Variant::baseline_single_stream, Variant::rap_dual_stream};
    bool include_analog_only = true;
    std::vector<std::uint64_t> seeds{1};
    double train_fraction = 1.0;     // fraction of training trajectories used
    bool full_retrieval = true;      // keep the full retrieval library when subsetting
    std::string out_dir = "experiment";
    std::size_t dump_frames = 1;     // test samples to dump as PGM per variant
};

struct VariantReport {
    std::string variant;
    std::vector<std::pair<std::uint64_t, MetricSet>> per_seed;
    MetricSet mean;
    std::uint64_t test_digest = 0;
};

struct Comparison {
    std::string name;
    std::string base, enhanced;
    double percent = 0.0;
};

struct ExperimentReport {
    std::map<std::string, VariantReport> variants;
    std::vector<Comparison> comparisons;
    std::vector<std::uint64_t> seeds;
    double max_i = 1.0;
    bool complete = true;
    nlohmann::json extra;
};

inline void to_json(nlohmann::json& j, const VariantReport& v) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& [seed, m] : v.per_seed) per_seed.push_back({{"seed", seed}, {"metrics", m}});
    j = nlohmann::json{{"variant", v.variant},
                       {"per_seed", per_seed},
                       {"mean", v.mean},
                       {"test_digest", v.test_digest}};
}

inline void to_json(nlohmann::json& j, const Comparison& c) {
    j = nlohmann::json{{"name", c.name}, {"base", c.base}, {"enhanced", c.enhanced},
                       {"percent", c.percent}};
}

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
    j = nlohmann::json{{"variants", r.variants},
                       {"comparisons", r.comparisons},
                       {"seeds", r.seeds},
                       {"max_i", r.max_i},
                       {"complete", r.complete},
                       {"extra", r.extra}};
}

/// Keep only the first `fraction` of the distinct training trajectories
/// (whole trajectories, preserving order). Validation/test are untouched.
inline DatasetManifest subset_manifest(const DatasetManifest& m, double fraction,
                                       bool keep_full_retrieval) {
    if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("fraction must be in (0, 1]");
    std::vector<std::uint64_t> ids;
    for (const auto& e : m.train)
        if (ids.empty() || ids.back() != e.source_id) ids.push_back(e.source_id);
    std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                    std::llround(fraction * double(ids.size()))));
    std::vector<std::uint64_t> kept(ids.begin(), ids.begin() + keep);
    auto is_kept = [&](std::uint64_t id) {
        return std::find(kept.begin(), kept.end(), id) != kept.end();
    };
    DatasetManifest out = m;
    out.train.clear();
    for (const auto& e : m.train)
        if (is_kept(e.source_id)) out.train.push_back(e);
    if (!keep_full_retrieval) {
        out.retrieval.clear();
        for (std::size_t i = 0; i < out.train.size(); i += out.retrieval_interval)
            out.retrieval.push_back(out.train[i]);
    }
    return out;
}

inline MetricSet mean_metrics(const std::vector<std::pair<std::uint64_t, MetricSet>>& per_seed) {
    MetricSet m;
    if (per_seed.empty()) return m;
    for (const auto& [seed, s] : per_seed) {
        m.mse += s.mse;
        m.mae += s.mae;
        m.psnr += s.psnr;
        m.ssim += s.ssim;
        m.count += s.count;
    }
    double n = static_cast<double>(per_seed.size());
    m.mse /= n;
    m.mae /= n;
    m.psnr /= n;
    m.ssim /= n;
    return m;
}

inline void save_report(const ExperimentReport& report, const std::string& dir,
                        const std::string& stem) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream os((fs::path(dir) / (stem + ".json")).string());
        os << nlohmann::json(report).dump(2) << "\n";
    }
    std::ofstream csv((fs::path(dir) / (stem + ".csv")).string());
    csv << "variant,seed,mse,mae,psnr,ssim\n";
    csv.precision(12);
    for (const auto& [name, v] : report.variants) {
        for (const auto& [seed, m] : v.per_seed)
            csv << name << "," << seed << "," << m.mse << "," << m.mae << "," << m.psnr << ","
                << m.ssim << "\n";
        csv << name << ",mean," << v.mean.mse << "," << v.mean.mae << "," << v.mean.psnr << ","
            << v.mean.ssim << "\n";
    }
}

/// Train and score every requested variant over every seed on the manifest's
/// test split; emits JSON + CSV reports and PGM frame dumps under out_dir.
inline ExperimentReport run_experiment(const DatasetManifest& manifest,
                                       const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    DatasetManifest train_manifest =
        cfg.train_fraction < 1.0 ? subset_manifest(manifest, cfg.train_fraction,
                                                   cfg.full_retrieval)
                                 : manifest;
    AnalogDatabase db = build_database(train_manifest);
    std::vector<TrainSample> test = load_samples(manifest.test);
    const double max_i = manifest.max_abs_value > 0 ? manifest.max_abs_value : 1.0;
    const std::uint64_t digest = sample_digest(test);

    ExperimentReport report;
    report.seeds = cfg.seeds;
    report.max_i = max_i;

    auto add_variant = [&](const std::string& name,
                           const std::function<MetricSet(std::uint64_t)>& run_seed) {
        VariantReport vr;
        vr.variant = name;
        vr.test_digest = digest;
        for (std::uint64_t seed : cfg.seeds) vr.per_seed.emplace_back(seed, run_seed(seed));
        vr.mean = mean_metrics(vr.per_seed);
        report.variants[name] = vr;
    };

    for (Variant variant : cfg.variants) {
        std::string name = to_string(variant);
        add_variant(name, [&](std::uint64_t seed) {
            ArchConfig arch = cfg.arch;
            arch.variant = variant;
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            TrainResult tr = train(train_manifest, arch, tc, &db);
            std::string tag = name + "_s" + std::to_string(seed);
            save_checkpoint(tr.best, (fs::path(cfg.out_dir) / (tag + ".rapw")).string());
            save_history_csv(tr.history,
                             (fs::path(cfg.out_dir) / (tag + "_history.csv")).string());
            for (std::size_t i = 0; i < std::min(cfg.dump_frames, test.size()); ++i) {
                Field pred = infer(tr.best, &db, test[i].x);
                Field err = field_binop(pred, test[i].y, BinOp::sub);
                std::string base = (fs::path(cfg.out_dir) / (tag + "_sample" +
                                                             std::to_string(i))).string();
                write_pgm(pred, 0, 0, base + "_pred.pgm");
                write_pgm(test[i].y, 0, 0, base + "_truth.pgm");
                write_pgm(err, 0, 0, base + "_error.pgm");
            }
            return evaluate_metrics(test, max_i,
                                    [&](const Field& x) { return infer(tr.best, &db, x); });
        });
    }

    if (cfg.include_analog_only) {
        add_variant("analog-only", [&](std::uint64_t) {
            return evaluate_metrics(test, max_i, [&](const Field& x) {
                return analog_only_forecast(db, x);
            });
        });
    }

    auto mse_of = [&](const std::string& name) -> double {
        return report.variants.at(name).mean.mse;
    };
    auto maybe_compare = [&](const std::string& base, const std::string& enhanced) {
        if (report.variants.count(base) && report.variants.count(enhanced) &&
            mse_of(base) > 0.0)
            report.comparisons.push_back({enhanced + " vs " + base, base, enhanced,
                                          relative_improvement(mse_of(base), mse_of(enhanced))});
    };
    maybe_compare("baseline", "rap");
    maybe_compare("analog-only", "rap");
    maybe_compare("naive-concat", "rap");

    save_report(report, cfg.out_dir, "report");
    return report;
}

}  // namespace rap
