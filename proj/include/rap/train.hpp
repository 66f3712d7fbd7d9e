#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "rap/analog_db.hpp"
#include "rap/model.hpp"

namespace rap {

struct LossConfig {
    double lambda1 = 1.0;  // L1 weight
    double lambda2 = 1.0;  // MSE weight
};

/// lambda1 * mean|d| + lambda2 * mean d^2 with 64-bit accumulation, plus the
/// exact gradient w.r.t. y_hat (|.| subgradient at 0 taken as 0).
inline std::pair<double, Field> loss_total(const Field& y_hat, const Field& y_gt,
                                           const LossConfig& cfg = {}) {
    if (!y_hat.same_shape(y_gt))
        throw DimensionError("loss shape mismatch: " + y_hat.shape_str() + " vs " +
                             y_gt.shape_str());
    const std::size_t n = y_hat.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    Field grad(y_hat.t(), y_hat.c(), y_hat.h(), y_hat.w());
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = double(y_hat.data()[i]) - double(y_gt.data()[i]);
        l1 += std::fabs(d);
        l2 += d * d;
        double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        grad.data()[i] =
            static_cast<float>((cfg.lambda1 * sign + cfg.lambda2 * 2.0 * d) * inv_n);
    }
    return {cfg.lambda1 * l1 * inv_n + cfg.lambda2 * l2 * inv_n, std::move(grad)};
}

struct OptimizerState {
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    double lr_max = 1e-4, lr_min = 0.0;
    std::size_t total_steps = 1;
    std::size_t step = 0;
    std::vector<std::vector<float>> m, v;  // one slot per parameter tensor, visit order
};

inline double cosine_lr(std::size_t step, const OptimizerState& st) {
    std::size_t s = std::min(step, st.total_steps);
    double frac = st.total_steps == 0 ? 1.0
                                      : static_cast<double>(s) / static_cast<double>(st.total_steps);
    return st.lr_min + 0.5 * (st.lr_max - st.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Bias-corrected Adam update at the cosine-scheduled learning rate of the
/// pre-increment step counter (so the first update runs at lr_max).
inline void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& st) {
    const double lr = cosine_lr(st.step, st);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));

    std::vector<std::vector<float>*> pt, gt;
    visit_params(params, [&](const std::string&, std::vector<float>& v) { pt.push_back(&v); });
    visit_params(const_cast<ModelParams&>(grads),
                 [&](const std::string&, std::vector<float>& v) { gt.push_back(&v); });
    if (st.m.empty()) {
        for (auto* p : pt) {
            st.m.emplace_back(p->size(), 0.0f);
            st.v.emplace_back(p->size(), 0.0f);
        }
    }
    for (std::size_t t = 0; t < pt.size(); ++t) {
        auto& p = *pt[t];
        auto& g = *gt[t];
        auto& m = st.m[t];
        auto& v = st.v[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = g[i];
            if (!std::isfinite(gi))
                throw DivergenceError("NaN gradient in optimizer", static_cast<long>(st.step));
            double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            p[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + st.epsilon));
        }
    }
}

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    LossConfig loss;
    double lr_max = 1e-4;
    double lr_min = 0.0;
    ExclusionRule exclusion{ExclusionMode::source_window, 0};  // radius 0 = t_in + t_out
    bool cache_retrieval = true;
    unsigned workers = 1;
};

struct TrainSample {
    Field x, y;
    QueryIdentity id;
};

/// Memoizes training-time retrieval per sample identity. Valid because the
/// database and exclusion rule are fixed for a whole run.
class RetrievalCache {
public:
    std::optional<std::size_t> find(const QueryIdentity& id) const {
        auto it = map_.find(key(id));
        return it == map_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
    }
    void insert(const QueryIdentity& id, std::size_t index) { map_[key(id)] = index; }

private:
    static std::uint64_t key(const QueryIdentity& id) {
        return id.source_id * 0x100000001b3ull ^ id.start_index;
    }
    std::unordered_map<std::uint64_t, std::size_t> map_;
};

struct StepStats {
    double loss = 0.0;
    std::size_t retrieval_calls = 0;
};

namespace detail_train {

inline ExclusionRule resolve_exclusion(const ExclusionRule& rule, std::size_t t_in,
                                       std::size_t t_out) {
    ExclusionRule r = rule;
    if (r.mode == ExclusionMode::source_window && r.window_radius == 0)
        r.window_radius = t_in + t_out;
    return r;
}

inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned t = 0; t < workers; ++t) {
        std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : threads) th.join();
}

inline void add_params(ModelParams& acc, const ModelParams& inc) {
    std::vector<std::vector<float>*> a;
    std::vector<const std::vector<float>*> b;
    visit_params(acc, [&](const std::string&, std::vector<float>& v) { a.push_back(&v); });
    visit_params(const_cast<ModelParams&>(inc),
                 [&](const std::string&, std::vector<float>& v) { b.push_back(&v); });
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i < a[t]->size(); ++i) (*a[t])[i] += (*b[t])[i];
}

}  // namespace detail_train

/// One optimization step over a batch: per-sample retrieve (k = 1), forward,
/// mean loss, one backward accumulation in sample-index order, one Adam step.
inline StepStats train_step(ModelParams& params, const std::vector<TrainSample>& batch,
                            const AnalogDatabase* db, const TrainConfig& cfg,
                            OptimizerState& opt, RetrievalCache* cache = nullptr) {
    if (batch.empty()) throw UsageError("empty batch");
    const bool uses_ref = params.cfg.variant != Variant::baseline_single_stream;
    if (uses_ref && (db == nullptr || db->size() == 0))
        throw RetrievalError("variant requires an analog database");

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    StepStats stats;
    ExclusionRule excl =
        detail_train::resolve_exclusion(cfg.exclusion, params.cfg.t_in, params.cfg.t_out);

    std::vector<double> losses(batch.size(), 0.0);
    std::vector<ModelParams> grads;
    grads.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) grads.push_back(make_params(params.cfg));

    std::vector<std::size_t> retrievals(batch.size(), 0);
    detail_train::parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
        const TrainSample& s = batch[i];
        const Field* y_ref = nullptr;
        if (uses_ref) {
            std::optional<std::size_t> hit =
                (cfg.cache_retrieval && cache) ? cache->find(s.id) : std::nullopt;
            std::size_t k;
            if (hit) {
                k = *hit;
            } else {
                k = db->retrieve(s.x, 1, excl, s.id)[0].index;
                retrievals[i] = 1;
                if (cfg.cache_retrieval && cache) cache->insert(s.id, k);
            }
            y_ref = &db->entry(k).y;
        }
        ForwardCache fc;
        Field y_hat = forward(params, s.x, y_ref, &fc);
        auto [loss, dy] = loss_total(y_hat, s.y, cfg.loss);
        losses[i] = loss;
        for (float& g : dy.raw()) g = static_cast<float>(g * inv_b);
        grads[i] = backward(params, fc, dy);
    });

    ModelParams total = std::move(grads[0]);
    for (std::size_t i = 1; i < grads.size(); ++i) detail_train::add_params(total, grads[i]);

    double loss_sum = 0.0;
    for (double l : losses) loss_sum += l;
    stats.loss = loss_sum * inv_b;
    for (std::size_t r : retrievals) stats.retrieval_calls += r;

    if (!std::isfinite(stats.loss))
        throw DivergenceError("NaN training loss", static_cast<long>(opt.step));
    adam_step(params, total, opt);
    return stats;
}

/// Algorithm: retrieve the best analog without exclusion, forward, return.
inline Field infer(const ModelParams& params, const AnalogDatabase* db, const Field& x_new) {
    if (params.cfg.variant == Variant::baseline_single_stream)
        return forward(params, x_new, nullptr);
    if (db == nullptr || db->size() == 0) throw RetrievalError("inference requires a database");
    auto res = db->retrieve(x_new, 1, ExclusionRule{ExclusionMode::none, 0});
    return forward(params, x_new, res[0].reference);
}

struct HistoryRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

inline void save_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "epoch,step,lr,train_loss,val_loss\n";
    os.precision(17);
    for (const auto& r : history)
        os << r.epoch << "," << r.step << "," << r.lr << "," << r.train_loss << ","
           << r.val_loss << "\n";
}

struct TrainResult {
    ModelParams best;     // lowest validation loss
    ModelParams final_;   // end of last epoch
    std::vector<HistoryRow> history;
    double best_val_loss = 0.0;
};

inline std::vector<TrainSample> load_samples(const std::vector<ManifestEntry>& entries) {
    std::vector<TrainSample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries)
        samples.push_back({read_field(e.x_path), read_field(e.y_path),
                           QueryIdentity{e.source_id, e.start_index}});
    return samples;
}

inline double mean_val_loss(const ModelParams& params, const AnalogDatabase* db,
                            const std::vector<TrainSample>& val, const LossConfig& loss_cfg) {
    if (val.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : val) sum += loss_total(infer(params, db, s.x), s.y, loss_cfg).first;
    return sum / static_cast<double>(val.size());
}

/// Full training run over a manifest: seeded shuffling, per-epoch validation
/// through the inference path, best-val checkpoint selection.
inline TrainResult train(const DatasetManifest& manifest, const ArchConfig& arch,
                         const TrainConfig& cfg, const AnalogDatabase* db,
                         std::optional<ModelParams> initial = std::nullopt) {
    std::vector<TrainSample> train_samples = load_samples(manifest.train);
    std::vector<TrainSample> val_samples = load_samples(manifest.val);
    if (train_samples.empty()) throw ConfigError("manifest has no training pairs");

    ModelParams params = initial ? std::move(*initial) : init_params(arch, cfg.seed);
    const std::size_t steps_per_epoch =
        (train_samples.size() + cfg.batch_size - 1) / cfg.batch_size;

    OptimizerState opt;
    opt.lr_max = cfg.lr_max;
    opt.lr_min = cfg.lr_min;
    opt.total_steps = cfg.epochs * steps_per_epoch;

    RetrievalCache cache;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        double epoch_lr = cosine_lr(opt.step, opt);
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<TrainSample> batch;
            for (std::size_t i = b * cfg.batch_size;
                 i < std::min((b + 1) * cfg.batch_size, order.size()); ++i)
                batch.push_back(train_samples[order[i]]);
            epoch_loss += train_step(params, batch, db, cfg, opt, &cache).loss;
        }
        epoch_loss /= static_cast<double>(steps_per_epoch);
        double val_loss = mean_val_loss(params, db, val_samples, cfg.loss);
        result.history.push_back({epoch, opt.step, epoch_lr, epoch_loss, val_loss});
        if (val_samples.empty() || val_loss < result.best_val_loss) {
            result.best_val_loss = val_samples.empty() ? epoch_loss : val_loss;
            result.best = params;
        }
    }
    result.final_ = std::move(params);
    return result;
}

}  // namespace rap
