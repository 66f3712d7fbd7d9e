#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rap/field.hpp"

namespace rap {

enum class SimSystem { advection_diffusion, gray_scott };

inline std::string to_string(SimSystem s) {
    return s == SimSystem::advection_diffusion ? "advection_diffusion" : "gray_scott";
}

inline SimSystem sim_system_from_string(const std::string& s) {
    if (s == "advection_diffusion") return SimSystem::advection_diffusion;
    if (s == "gray_scott") return SimSystem::gray_scott;
    throw ConfigError("unknown system: " + s);
}

struct SimConfig {
    SimSystem system = SimSystem::gray_scott;
    std::size_t h = 32, w = 32;
    double dt = 1.0;
    std::size_t n_steps = 600;
    std::size_t record_every = 30;
    // advection_diffusion
    double vx = 0.0, vy = 0.0;
    double kappa = 0.0;
    // gray_scott
    double feed = 0.035, kill = 0.065;
    double du = 0.16, dv = 0.08;
    std::uint64_t seed = 0;

    std::size_t channels() const {
        return system == SimSystem::gray_scott ? 2 : 1;
    }

    // Explicit-integration stability bounds with dx = dy = 1.
    void validate() const {
        if (n_steps < record_every || record_every < 1)
            throw ConfigError("need n_steps >= record_every >= 1");
        if (system == SimSystem::advection_diffusion) {
            if (kappa < 0) throw ConfigError("kappa must be >= 0");
            if (kappa * dt > 0.25)
                throw ConfigError("diffusion unstable: kappa*dt = " +
                                  std::to_string(kappa * dt) + " > 0.25");
            double speed = std::sqrt(vx * vx + vy * vy);
            if (speed * dt > 0.5)
                throw ConfigError("advection unstable: |v|*dt = " +
                                  std::to_string(speed * dt) + " > 0.5");
        } else {
            if (std::max(du, dv) * dt > 0.25)
                throw ConfigError("gray-scott unstable: max(Du,Dv)*dt = " +
                                  std::to_string(std::max(du, dv) * dt) + " > 0.25");
        }
    }
};

inline void to_json(nlohmann::json& j, const SimConfig& c) {
    j = nlohmann::json{{"system", to_string(c.system)},
                       {"h", c.h},
                       {"w", c.w},
                       {"dt", c.dt},
                       {"n_steps", c.n_steps},
                       {"record_every", c.record_every},
                       {"vx", c.vx},
                       {"vy", c.vy},
                       {"kappa", c.kappa},
                       {"feed", c.feed},
                       {"kill", c.kill},
                       {"du", c.du},
                       {"dv", c.dv},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
    c.system = sim_system_from_string(j.value("system", "gray_scott"));
    c.h = j.value("h", std::size_t(32));
    c.w = j.value("w", std::size_t(32));
    c.dt = j.value("dt", 1.0);
    c.n_steps = j.value("n_steps", std::size_t(600));
    c.record_every = j.value("record_every", std::size_t(30));
    c.vx = j.value("vx", 0.0);
    c.vy = j.value("vy", 0.0);
    c.kappa = j.value("kappa", 0.0);
    c.feed = j.value("feed", 0.035);
    c.kill = j.value("kill", 0.065);
    c.du = j.value("du", 0.16);
    c.dv = j.value("dv", 0.08);
    c.seed = j.value("seed", std::uint64_t(0));
}

namespace detail {

// Periodic 5-point Laplacian of plane p (h x w) at (i, j).
inline float laplacian(const float* p, std::size_t h, std::size_t w, std::size_t i,
                       std::size_t j) {
    std::size_t im = (i + h - 1) % h, ip = (i + 1) % h;
    std::size_t jm = (j + w - 1) % w, jp = (j + 1) % w;
    return p[im * w + j] + p[ip * w + j] + p[i * w + jm] + p[i * w + jp] - 4.0f * p[i * w + j];
}

}  // namespace detail

/// Explicit upwind advection + diffusion on a periodic grid, one channel.
/// Records the initial frame plus every record_every-th step.
inline Field simulate_advection_diffusion(const SimConfig& cfg, const Field& init) {
    cfg.validate();
    if (cfg.system != SimSystem::advection_diffusion)
        throw ConfigError("config system is not advection_diffusion");
    if (init.t() != 1 || init.c() != 1 || init.h() != cfg.h || init.w() != cfg.w)
        throw DimensionError("init shape " + init.shape_str() + " does not match config grid");

    const std::size_t h = cfg.h, w = cfg.w;
    const std::size_t n_frames = cfg.n_steps / cfg.record_every + 1;
    Field out(n_frames, 1, h, w);

    std::vector<float> cur(init.data(), init.data() + h * w);
    std::vector<float> nxt(h * w);
    std::memcpy(out.data(), cur.data(), h * w * sizeof(float));

    const float dt = static_cast<float>(cfg.dt);
    const float kappa = static_cast<float>(cfg.kappa);
    const float vx = static_cast<float>(cfg.vx);
    const float vy = static_cast<float>(cfg.vy);

    std::size_t recorded = 1;
    for (std::size_t step = 1; step <= cfg.n_steps; ++step) {
        for (std::size_t i = 0; i < h; ++i) {
            std::size_t im = (i + h - 1) % h, ip = (i + 1) % h;
            for (std::size_t j = 0; j < w; ++j) {
                std::size_t jm = (j + w - 1) % w, jp = (j + 1) % w;
                float u = cur[i * w + j];
                // upwind differences: vy transports along rows (i), vx along columns (j)
                float ady = vy >= 0 ? (u - cur[im * w + j]) : (cur[ip * w + j] - u);
                float adx = vx >= 0 ? (u - cur[i * w + jm]) : (cur[i * w + jp] - u);
                float lap = detail::laplacian(cur.data(), h, w, i, j);
                nxt[i * w + j] = u + dt * (kappa * lap - vx * adx - vy * ady);
            }
        }
        cur.swap(nxt);
        if (step % cfg.record_every == 0) {
            std::memcpy(out.data() + recorded * h * w, cur.data(), h * w * sizeof(float));
            ++recorded;
        }
    }
    if (!out.all_finite()) throw DivergenceError("advection-diffusion produced non-finite values",
                                                 static_cast<long>(cfg.n_steps));
    return out;
}

/// Gray-Scott reaction-diffusion, explicit Euler, periodic grid, channels (U, V).
inline Field simulate_gray_scott(const SimConfig& cfg, const Field& init) {
    cfg.validate();
    if (cfg.system != SimSystem::gray_scott)
        throw ConfigError("config system is not gray_scott");
    if (init.t() != 1 || init.c() != 2 || init.h() != cfg.h || init.w() != cfg.w)
        throw DimensionError("init shape " + init.shape_str() +
                             " does not match 1x2 config grid");

    const std::size_t h = cfg.h, w = cfg.w, n = h * w;
    const std::size_t n_frames = cfg.n_steps / cfg.record_every + 1;
    Field out(n_frames, 2, h, w);

    std::vector<float> u(init.data(), init.data() + n);
    std::vector<float> v(init.data() + n, init.data() + 2 * n);
    std::vector<float> un(n), vn(n);
    std::memcpy(out.data(), u.data(), n * sizeof(float));
    std::memcpy(out.data() + n, v.data(), n * sizeof(float));

    const float dt = static_cast<float>(cfg.dt);
    const float F = static_cast<float>(cfg.feed);
    const float K = static_cast<float>(cfg.kill);
    const float Du = static_cast<float>(cfg.du);
    const float Dv = static_cast<float>(cfg.dv);

    std::size_t recorded = 1;
    for (std::size_t step = 1; step <= cfg.n_steps; ++step) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                float uu = u[i * w + j];
                float vv = v[i * w + j];
                float uvv = uu * vv * vv;
                float lu = detail::laplacian(u.data(), h, w, i, j);
                float lv = detail::laplacian(v.data(), h, w, i, j);
                un[i * w + j] = uu + dt * (Du * lu - uvv + F * (1.0f - uu));
                vn[i * w + j] = vv + dt * (Dv * lv + uvv - (F + K) * vv);
            }
        }
        u.swap(un);
        v.swap(vn);
        if (step % cfg.record_every == 0) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::isfinite(u[i]) || !std::isfinite(v[i]))
                    throw DivergenceError("gray-scott diverged", static_cast<long>(step));
            }
            std::memcpy(out.data() + (recorded * 2) * n, u.data(), n * sizeof(float));
            std::memcpy(out.data() + (recorded * 2 + 1) * n, v.data(), n * sizeof(float));
            ++recorded;
        }
    }
    return out;
}

/// Default Gray-Scott start state: U = 1, V = 0 plus a seeded 8x8 square
/// perturbation (U = 0.5, V = 0.25) and 1% uniform noise.
inline Field gray_scott_initial(const SimConfig& cfg, std::uint64_t seed) {
    const std::size_t h = cfg.h, w = cfg.w, n = h * w;
    Field init(1, 2, h, w);
    for (std::size_t i = 0; i < n; ++i) {
        init.data()[i] = 1.0f;
        init.data()[n + i] = 0.0f;
    }
    std::mt19937_64 rng(seed);
    const std::size_t sq = std::min<std::size_t>(8, std::min(h, w));
    std::uniform_int_distribution<std::size_t> pick_i(0, h - sq), pick_j(0, w - sq);
    std::size_t i0 = pick_i(rng), j0 = pick_j(rng);
    for (std::size_t i = i0; i < i0 + sq; ++i)
        for (std::size_t j = j0; j < j0 + sq; ++j) {
            init.at(0, 0, i, j) = 0.5f;
            init.at(0, 1, i, j) = 0.25f;
        }
    std::uniform_real_distribution<float> noise(-0.01f, 0.01f);
    for (std::size_t i = 0; i < 2 * n; ++i) init.data()[i] += noise(rng);
    return init;
}

/// Seeded Gaussian-blob start state for advection-diffusion.
inline Field advection_initial(const SimConfig& cfg, std::uint64_t seed) {
    Field init(1, 1, cfg.h, cfg.w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ci(cfg.h * 0.3, cfg.h * 0.7);
    std::uniform_real_distribution<double> cj(cfg.w * 0.3, cfg.w * 0.7);
    std::uniform_real_distribution<double> amp(0.5, 1.5);
    double ic = ci(rng), jc = cj(rng), a = amp(rng);
    const double sigma2 = 4.0;
    for (std::size_t i = 0; i < cfg.h; ++i)
        for (std::size_t j = 0; j < cfg.w; ++j) {
            double d2 = (i - ic) * (i - ic) + (j - jc) * (j - jc);
            init.at(0, 0, i, j) = static_cast<float>(a * std::exp(-d2 / (2.0 * sigma2)));
        }
    return init;
}

inline Field simulate(const SimConfig& cfg, const Field& init) {
    return cfg.system == SimSystem::gray_scott ? simulate_gray_scott(cfg, init)
                                               : simulate_advection_diffusion(cfg, init);
}

inline Field default_initial(const SimConfig& cfg, std::uint64_t seed) {
    return cfg.system == SimSystem::gray_scott ? gray_scott_initial(cfg, seed)
                                               : advection_initial(cfg, seed);
}

// ---- dataset assembly ----

struct ManifestEntry {
    std::string x_path;
    std::string y_path;
    std::uint64_t source_id = 0;
    std::uint64_t start_index = 0;
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
    j = nlohmann::json{{"x_path", e.x_path},
                       {"y_path", e.y_path},
                       {"source_id", e.source_id},
                       {"start_index", e.start_index}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
    j.at("x_path").get_to(e.x_path);
    j.at("y_path").get_to(e.y_path);
    j.at("source_id").get_to(e.source_id);
    j.at("start_index").get_to(e.start_index);
}

struct DatasetManifest {
    std::uint32_t version = 1;
    SimConfig generator;
    std::uint64_t seed = 0;
    std::size_t t_in = 4, t_out = 4, stride = 1;
    std::size_t retrieval_interval = 3;
    std::size_t skipped_trajectories = 0;
    double max_abs_value = 0.0;  // over the training split, the PSNR MAX_I
    std::vector<ManifestEntry> train, val, test, retrieval;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json{{"version", m.version},
                       {"generator", m.generator},
                       {"seed", m.seed},
                       {"t_in", m.t_in},
                       {"t_out", m.t_out},
                       {"stride", m.stride},
                       {"retrieval_interval", m.retrieval_interval},
                       {"skipped_trajectories", m.skipped_trajectories},
                       {"max_abs_value", m.max_abs_value},
                       {"splits",
                        {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
                       {"retrieval", m.retrieval}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    j.at("version").get_to(m.version);
    j.at("generator").get_to(m.generator);
    j.at("seed").get_to(m.seed);
    j.at("t_in").get_to(m.t_in);
    j.at("t_out").get_to(m.t_out);
    j.at("stride").get_to(m.stride);
    j.at("retrieval_interval").get_to(m.retrieval_interval);
    m.skipped_trajectories = j.value("skipped_trajectories", std::size_t(0));
    m.max_abs_value = j.value("max_abs_value", 0.0);
    j.at("splits").at("train").get_to(m.train);
    j.at("splits").at("val").get_to(m.val);
    j.at("splits").at("test").get_to(m.test);
    j.at("retrieval").get_to(m.retrieval);
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << nlohmann::json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    is >> j;
    if (j.value("version", 0u) != 1u)
        throw FormatError("unsupported manifest version", 0);
    return j.get<DatasetManifest>();
}

/// Split counts by largest remainder, whole trajectories per split.
inline std::array<std::size_t, 3> split_counts(std::size_t n, double f_train, double f_val,
                                               double f_test) {
    double fr[3] = {f_train, f_val, f_test};
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    std::array<std::size_t, 3> counts{};
    double rem[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = fr[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    return counts;
}

/// Simulate n_trajectories runs, window them, assign whole trajectories to
/// train/val/test, subsample the training pairs into the retrieval library,
/// and write everything under out_dir.
inline DatasetManifest build_dataset(const SimConfig& cfg, std::size_t n_trajectories,
                                     std::size_t t_in, std::size_t t_out, std::size_t stride,
                                     std::size_t retrieval_interval, double f_train,
                                     double f_val, double f_test, const std::string& out_dir) {
    if (n_trajectories < 3) throw ConfigError("need at least 3 trajectories");
    if (retrieval_interval < 1) throw ConfigError("retrieval_interval must be >= 1");
    cfg.validate();
    auto counts = split_counts(n_trajectories, f_train, f_val, f_test);

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "fields");

    DatasetManifest m;
    m.generator = cfg;
    m.seed = cfg.seed;
    m.t_in = t_in;
    m.t_out = t_out;
    m.stride = stride;
    m.retrieval_interval = retrieval_interval;

    double max_abs = 0.0;
    for (std::size_t traj_id = 0; traj_id < n_trajectories; ++traj_id) {
        // per-run seed derived from the master seed
        std::uint64_t run_seed = cfg.seed * 1000003ull + traj_id;
        Field traj = simulate(cfg, default_initial(cfg, run_seed));
        auto pairs = window_split(traj, t_in, t_out, stride, traj_id);
        if (pairs.empty()) {
            ++m.skipped_trajectories;
            continue;
        }
        std::vector<ManifestEntry>* split;
        bool is_train = traj_id < counts[0];
        if (is_train)
            split = &m.train;
        else if (traj_id < counts[0] + counts[1])
            split = &m.val;
        else
            split = &m.test;
        for (const auto& p : pairs) {
            std::string base = (fs::path(out_dir) / "fields" /
                                ("t" + std::to_string(traj_id) + "_s" +
                                 std::to_string(p.start_index)))
                                   .string();
            ManifestEntry e{base + "_x.rapf", base + "_y.rapf", p.source_id, p.start_index};
            write_field(p.x, e.x_path);
            write_field(p.y, e.y_path);
            split->push_back(e);
            if (is_train) {
                for (float v : p.x.raw()) max_abs = std::max(max_abs, double(std::fabs(v)));
                for (float v : p.y.raw()) max_abs = std::max(max_abs, double(std::fabs(v)));
            }
        }
    }
    m.max_abs_value = max_abs;
    for (std::size_t i = 0; i < m.train.size(); i += retrieval_interval)
        m.retrieval.push_back(m.train[i]);
    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    return m;
}

}  // namespace rap
