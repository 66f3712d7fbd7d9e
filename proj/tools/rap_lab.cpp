// rap-lab: command-line front end for the retrieval-augmented prediction
// laboratory. Thin adapter: all numerics live in the library headers.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rap/eval.hpp"

namespace {

using nlohmann::json;

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw rap::UsageError("cannot open config file: " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw rap::UsageError("config is not valid JSON: " + std::string(e.what()));
    }
}

void write_snapshot(const json& resolved, const std::string& out_dir,
                    const std::string& name) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os((std::filesystem::path(out_dir) / name).string());
    os << resolved.dump(2) << "\n";
}

rap::ExclusionRule parse_exclusion(const std::string& s, std::size_t radius) {
    if (s == "none") return {rap::ExclusionMode::none, 0};
    if (s == "exact") return {rap::ExclusionMode::exact_self, 0};
    if (s == "window") return {rap::ExclusionMode::source_window, radius};
    throw rap::UsageError("unknown exclusion mode: " + s + " (none|exact|window)");
}

struct CommonOpts {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--workers", o.workers, "worker threads");
}

// ---- gen-data ----

int cmd_gen_data(const CommonOpts& common, std::size_t trajectories, std::size_t t_in,
                 std::size_t t_out, std::size_t stride, std::size_t retrieval_interval,
                 const std::string& system) {
    json cfg = load_config(common.config);
    rap::SimConfig sim = cfg.value("sim", json::object()).get<rap::SimConfig>();
    if (!system.empty())
        sim.system = system == "advection" ? rap::SimSystem::advection_diffusion
                                           : rap::SimSystem::gray_scott;
    if (common.seed) sim.seed = *common.seed;
    json ds = cfg.value("dataset", json::object());
    std::size_t n = trajectories ? trajectories : ds.value("trajectories", std::size_t(8));
    std::size_t ti = t_in ? t_in : ds.value("t_in", std::size_t(4));
    std::size_t to = t_out ? t_out : ds.value("t_out", std::size_t(4));
    std::size_t st = stride ? stride : ds.value("stride", std::size_t(1));
    std::size_t ri =
        retrieval_interval ? retrieval_interval : ds.value("retrieval_interval", std::size_t(3));
    double f_train = ds.value("f_train", 0.8);
    double f_val = ds.value("f_val", 0.1);
    double f_test = ds.value("f_test", 0.1);

    std::cerr << "generating " << n << " trajectories into " << common.out << "\n";
    rap::DatasetManifest man =
        rap::build_dataset(sim, n, ti, to, st, ri, f_train, f_val, f_test, common.out);

    json resolved{{"sim", sim},
                  {"dataset",
                   {{"trajectories", n},
                    {"t_in", ti},
                    {"t_out", to},
                    {"stride", st},
                    {"retrieval_interval", ri},
                    {"f_train", f_train},
                    {"f_val", f_val},
                    {"f_test", f_test}}}};
    write_snapshot(resolved, common.out, "resolved_config.json");

    json summary{{"manifest", (std::filesystem::path(common.out) / "manifest.json").string()},
                 {"train_pairs", man.train.size()},
                 {"val_pairs", man.val.size()},
                 {"test_pairs", man.test.size()},
                 {"retrieval_pairs", man.retrieval.size()},
                 {"skipped_trajectories", man.skipped_trajectories},
                 {"max_abs_value", man.max_abs_value}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---- build-db ----

int cmd_build_db(const std::string& manifest_path, const std::string& out_path) {
    rap::DatasetManifest man = rap::load_manifest(manifest_path);
    rap::AnalogDatabase db = rap::build_database(man);
    rap::save_database(db, out_path);
    std::cerr << "wrote " << db.size() << " exemplars to " << out_path << "\n";
    std::cout << json{{"database", out_path}, {"entries", db.size()}}.dump(2) << "\n";
    return 0;
}

// ---- retrieve ----

int cmd_retrieve(const std::string& db_path, const std::string& query_path, std::size_t k,
                 const std::string& exclusion, std::size_t radius, unsigned workers) {
    rap::AnalogDatabase db = rap::load_database(db_path);
    rap::Field query = rap::read_field(query_path);
    auto results = db.retrieve(query, k, parse_exclusion(exclusion, radius), std::nullopt,
                               workers);
    for (const auto& r : results) {
        const auto& e = db.entry(r.index);
        std::cout << r.index << " " << std::setprecision(17) << r.score << " " << e.source_id
                  << " " << e.start_index << "\n";
    }
    return 0;
}

// ---- train ----

struct TrainOpts {
    std::string manifest;
    std::string variant;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double lr_max = -1.0, lr_min = -1.0;
    double lambda1 = -1.0, lambda2 = -1.0;
    std::string exclusion;
    std::size_t radius = 0;
};

std::pair<rap::ArchConfig, rap::TrainConfig> resolve_train_config(const json& cfg,
                                                                  const CommonOpts& common,
                                                                  const TrainOpts& t) {
    rap::ArchConfig arch = cfg.value("arch", json::object()).get<rap::ArchConfig>();
    rap::TrainConfig tc;
    json tj = cfg.value("train", json::object());
    tc.epochs = t.epochs ? t.epochs : tj.value("epochs", tc.epochs);
    tc.batch_size = t.batch_size ? t.batch_size : tj.value("batch_size", tc.batch_size);
    tc.lr_max = t.lr_max >= 0 ? t.lr_max : tj.value("lr_max", tc.lr_max);
    tc.lr_min = t.lr_min >= 0 ? t.lr_min : tj.value("lr_min", tc.lr_min);
    tc.loss.lambda1 = t.lambda1 >= 0 ? t.lambda1 : tj.value("lambda1", tc.loss.lambda1);
    tc.loss.lambda2 = t.lambda2 >= 0 ? t.lambda2 : tj.value("lambda2", tc.loss.lambda2);
    tc.seed = common.seed ? *common.seed : tj.value("seed", std::uint64_t(0));
    tc.workers = common.workers;
    if (!t.exclusion.empty())
        tc.exclusion = parse_exclusion(t.exclusion, t.radius);
    else if (tj.contains("exclusion"))
        tc.exclusion = parse_exclusion(tj["exclusion"].get<std::string>(),
                                       tj.value("exclusion_radius", std::size_t(0)));
    if (!t.variant.empty()) arch.variant = rap::variant_from_string(t.variant);
    return {arch, tc};
}

int cmd_train(const CommonOpts& common, const TrainOpts& t) {
    if (t.manifest.empty()) throw rap::UsageError("train requires --manifest");
    json cfg = load_config(common.config);
    auto [arch, tc] = resolve_train_config(cfg, common, t);

    rap::DatasetManifest man = rap::load_manifest(t.manifest);
    arch.t_in = man.t_in;
    arch.t_out = man.t_out;
    arch.c = man.generator.system == rap::SimSystem::gray_scott ? 2 : 1;
    arch.h = man.generator.h;
    arch.w = man.generator.w;

    std::optional<rap::AnalogDatabase> db;
    const rap::AnalogDatabase* db_ptr = nullptr;
    if (arch.variant != rap::Variant::baseline_single_stream) {
        db.emplace(rap::build_database(man));
        db_ptr = &*db;
    }

    json resolved{{"arch", arch},
                  {"train",
                   {{"epochs", tc.epochs},
                    {"batch_size", tc.batch_size},
                    {"lr_max", tc.lr_max},
                    {"lr_min", tc.lr_min},
                    {"lambda1", tc.loss.lambda1},
                    {"lambda2", tc.loss.lambda2},
                    {"seed", tc.seed},
                    {"workers", tc.workers}}},
                  {"manifest", t.manifest}};
    write_snapshot(resolved, common.out, "resolved_config.json");

    std::cerr << "training " << rap::to_string(arch.variant) << " for " << tc.epochs
              << " epochs\n";
    rap::TrainResult result = rap::train(man, arch, tc, db_ptr);

    namespace fs = std::filesystem;
    rap::save_checkpoint(result.best, (fs::path(common.out) / "best.rapw").string());
    rap::save_checkpoint(result.final_, (fs::path(common.out) / "final.rapw").string());
    rap::save_history_csv(result.history, (fs::path(common.out) / "history.csv").string());

    json summary{{"best_checkpoint", (fs::path(common.out) / "best.rapw").string()},
                 {"best_val_loss", result.best_val_loss},
                 {"epochs", result.history.size()},
                 {"final_train_loss",
                  result.history.empty() ? 0.0 : result.history.back().train_loss}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---- eval ----

int cmd_eval(const CommonOpts& common, const std::string& manifest_path,
             const std::string& checkpoint) {
    if (manifest_path.empty() || checkpoint.empty())
        throw rap::UsageError("eval requires --manifest and --checkpoint");
    rap::DatasetManifest man = rap::load_manifest(manifest_path);
    rap::ModelParams params = rap::load_checkpoint(checkpoint);

    std::optional<rap::AnalogDatabase> db;
    const rap::AnalogDatabase* db_ptr = nullptr;
    if (params.cfg.variant != rap::Variant::baseline_single_stream) {
        db.emplace(rap::build_database(man));
        db_ptr = &*db;
    }
    std::vector<rap::TrainSample> test = rap::load_samples(man.test);
    double max_i = man.max_abs_value > 0 ? man.max_abs_value : 1.0;
    rap::MetricSet m = rap::evaluate_metrics(
        test, max_i, [&](const rap::Field& x) { return rap::infer(params, db_ptr, x); });

    json out{{"variant", rap::to_string(params.cfg.variant)},
             {"metrics", m},
             {"max_i", max_i},
             {"test_digest", rap::sample_digest(test)}};
    std::cout << out.dump(2) << "\n";
    if (common.out != ".") {
        std::filesystem::create_directories(common.out);
        std::ofstream os((std::filesystem::path(common.out) / "eval.json").string());
        os << out.dump(2) << "\n";
    }
    return 0;
}

// ---- rollout ----

int cmd_rollout(const CommonOpts& common, const std::string& manifest_path,
                const std::string& checkpoint, const std::string& input_path,
                std::size_t cycles, const std::string& out_field) {
    if (checkpoint.empty() || input_path.empty())
        throw rap::UsageError("rollout requires --checkpoint and --input");
    rap::ModelParams params = rap::load_checkpoint(checkpoint);
    std::optional<rap::AnalogDatabase> db;
    const rap::AnalogDatabase* db_ptr = nullptr;
    if (params.cfg.variant != rap::Variant::baseline_single_stream) {
        if (manifest_path.empty())
            throw rap::UsageError("this variant needs --manifest for the analog database");
        db.emplace(rap::build_database(rap::load_manifest(manifest_path)));
        db_ptr = &*db;
    }
    rap::Field x0 = rap::read_field(input_path);
    rap::Field traj = rap::rollout(params, db_ptr, x0, cycles);
    std::string out_path =
        out_field.empty()
            ? (std::filesystem::path(common.out) / "rollout.rapf").string()
            : out_field;
    std::filesystem::create_directories(
        std::filesystem::path(out_path).parent_path().empty()
            ? "."
            : std::filesystem::path(out_path).parent_path().string());
    rap::write_field(traj, out_path);
    std::cout << json{{"rollout", out_path}, {"frames", traj.t()}, {"cycles", cycles}}.dump(2)
              << "\n";
    return 0;
}

// ---- ablate ----

int cmd_ablate(const CommonOpts& common, const std::string& manifest_path,
               const std::string& variants_csv, const std::string& seeds_csv,
               bool analog_only, double train_fraction, bool full_retrieval,
               const TrainOpts& topts) {
    if (manifest_path.empty()) throw rap::UsageError("ablate requires --manifest");
    json cfg = load_config(common.config);
    auto [arch, tc] = resolve_train_config(cfg, common, topts);

    rap::DatasetManifest man = rap::load_manifest(manifest_path);
    rap::ExperimentConfig ec;
    ec.arch = arch;
    ec.arch.t_in = man.t_in;
    ec.arch.t_out = man.t_out;
    ec.arch.c = man.generator.system == rap::SimSystem::gray_scott ? 2 : 1;
    ec.arch.h = man.generator.h;
    ec.arch.w = man.generator.w;
    ec.train = tc;
    ec.include_analog_only = analog_only;
    ec.train_fraction = train_fraction;
    ec.full_retrieval = full_retrieval;
    ec.out_dir = common.out;

    ec.variants.clear();
    std::stringstream vs(variants_csv);
    for (std::string tok; std::getline(vs, tok, ',');)
        ec.variants.push_back(rap::variant_from_string(tok));
    if (ec.variants.empty()) throw rap::UsageError("ablate requires at least one variant");

    if (!seeds_csv.empty()) {
        ec.seeds.clear();
        std::stringstream ss(seeds_csv);
        for (std::string tok; std::getline(ss, tok, ',');)
            ec.seeds.push_back(std::stoull(tok));
    }
    if (common.seed) ec.seeds = {*common.seed};

    json resolved{{"arch", ec.arch},
                  {"train",
                   {{"epochs", ec.train.epochs},
                    {"batch_size", ec.train.batch_size},
                    {"lr_max", ec.train.lr_max},
                    {"lr_min", ec.train.lr_min},
                    {"lambda1", ec.train.loss.lambda1},
                    {"lambda2", ec.train.loss.lambda2}}},
                  {"seeds", ec.seeds},
                  {"variants", variants_csv},
                  {"analog_only", analog_only},
                  {"train_fraction", train_fraction},
                  {"full_retrieval", full_retrieval},
                  {"manifest", manifest_path}};
    write_snapshot(resolved, common.out, "resolved_config.json");

    rap::ExperimentReport report = rap::run_experiment(man, ec);
    std::cout << json(report).dump(2) << "\n";
    return 0;
}

// ---- report ----

int cmd_report(const std::vector<std::string>& inputs, double gap_lb, double gap_ours,
               double gap_ub) {
    for (const auto& path : inputs) {
        std::ifstream is(path);
        if (!is) throw rap::UsageError("cannot open report: " + path);
        json j = json::parse(is);
        std::cout << "# " << path << "\n";
        std::cout << "variant,mse,mae,psnr,ssim\n";
        for (const auto& [name, v] : j.at("variants").items()) {
            const json& m = v.at("mean");
            std::cout << name << "," << m.at("mse").get<double>() << ","
                      << m.at("mae").get<double>() << "," << m.at("psnr").dump() << ","
                      << m.at("ssim").get<double>() << "\n";
        }
        for (const auto& c : j.at("comparisons"))
            std::cout << c.at("name").get<std::string>() << ": "
                      << c.at("percent").get<double>() << "%\n";
    }
    if (gap_lb > 0.0 || gap_ours > 0.0 || gap_ub > 0.0) {
        double rec = rap::gap_recovery(gap_lb, gap_ours, gap_ub);
        std::cout << "gap_recovery: " << rec << "%\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval-augmented prediction laboratory"};
    app.require_subcommand(1);

    CommonOpts common;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "simulate trajectories and build a dataset");
    CommonOpts gen_common;
    add_common(gen, gen_common);
    std::size_t trajectories = 0, g_tin = 0, g_tout = 0, g_stride = 0, g_ri = 0;
    std::string system;
    gen->add_option("--trajectories", trajectories, "number of trajectories");
    gen->add_option("--t-in", g_tin, "input window length");
    gen->add_option("--t-out", g_tout, "target window length");
    gen->add_option("--stride", g_stride, "window stride");
    gen->add_option("--retrieval-interval", g_ri, "train-pair subsampling for the database");
    gen->add_option("--system", system, "advection|gray-scott");

    // build-db
    auto* bdb = app.add_subcommand("build-db", "build and save an analog database");
    std::string bdb_manifest, bdb_out = "analog.rapdb";
    bdb->add_option("--manifest", bdb_manifest, "dataset manifest")->required();
    bdb->add_option("--out", bdb_out, "output .rapdb path");

    // retrieve
    auto* ret = app.add_subcommand("retrieve", "query a database for nearest analogs");
    std::string ret_db, ret_query, ret_excl = "none";
    std::size_t ret_k = 1, ret_radius = 0;
    unsigned ret_workers = 1;
    ret->add_option("--db", ret_db, "database .rapdb path")->required();
    ret->add_option("--query", ret_query, "query .rapf field")->required();
    ret->add_option("--k", ret_k, "number of results");
    ret->add_option("--exclusion", ret_excl, "none|exact|window");
    ret->add_option("--radius", ret_radius, "window exclusion radius");
    ret->add_option("--workers", ret_workers, "worker threads");

    // train
    auto* trn = app.add_subcommand("train", "train one model variant");
    CommonOpts trn_common;
    add_common(trn, trn_common);
    TrainOpts topts;
    trn->add_option("--manifest", topts.manifest, "dataset manifest")->required();
    trn->add_option("--variant", topts.variant, "baseline|rap|naive-concat");
    trn->add_option("--epochs", topts.epochs, "training epochs");
    trn->add_option("--batch-size", topts.batch_size, "batch size");
    trn->add_option("--lr-max", topts.lr_max, "peak learning rate");
    trn->add_option("--lr-min", topts.lr_min, "final learning rate");
    trn->add_option("--lambda1", topts.lambda1, "L1 loss weight");
    trn->add_option("--lambda2", topts.lambda2, "MSE loss weight");
    trn->add_option("--exclusion", topts.exclusion, "none|exact|window");
    trn->add_option("--radius", topts.radius, "window exclusion radius");

    // eval
    auto* evl = app.add_subcommand("eval", "score a checkpoint on the test split");
    CommonOpts evl_common;
    add_common(evl, evl_common);
    std::string evl_manifest, evl_ckpt;
    evl->add_option("--manifest", evl_manifest, "dataset manifest")->required();
    evl->add_option("--checkpoint", evl_ckpt, "model .rapw checkpoint")->required();

    // rollout
    auto* rol = app.add_subcommand("rollout", "autoregressive multi-cycle forecast");
    CommonOpts rol_common;
    add_common(rol, rol_common);
    std::string rol_manifest, rol_ckpt, rol_input, rol_out_field;
    std::size_t rol_cycles = 1;
    rol->add_option("--manifest", rol_manifest, "dataset manifest (for the database)");
    rol->add_option("--checkpoint", rol_ckpt, "model .rapw checkpoint")->required();
    rol->add_option("--input", rol_input, "initial window .rapf")->required();
    rol->add_option("--cycles", rol_cycles, "number of prediction cycles");
    rol->add_option("--out-field", rol_out_field, "output .rapf path");

    // ablate
    auto* abl = app.add_subcommand("ablate", "train and compare a variant matrix");
    CommonOpts abl_common;
    add_common(abl, abl_common);
    TrainOpts abl_topts;
    std::string abl_manifest, abl_variants = "baseline,rap", abl_seeds;
    bool abl_analog = true, abl_full_retrieval = true;
    double abl_fraction = 1.0;
    abl->add_option("--manifest", abl_manifest, "dataset manifest")->required();
    abl->add_option("--variants", abl_variants, "comma-separated variant list");
    abl->add_option("--seeds", abl_seeds, "comma-separated seed list");
    abl->add_flag("--analog-only,!--no-analog-only", abl_analog,
                  "include the analog-only baseline");
    abl->add_option("--train-fraction", abl_fraction, "fraction of training trajectories");
    abl->add_flag("--full-retrieval,!--subset-retrieval", abl_full_retrieval,
                  "keep the full retrieval library when subsetting");
    abl->add_option("--epochs", abl_topts.epochs, "training epochs");
    abl->add_option("--batch-size", abl_topts.batch_size, "batch size");
    abl->add_option("--lr-max", abl_topts.lr_max, "peak learning rate");
    abl->add_option("--lr-min", abl_topts.lr_min, "final learning rate");
    abl->add_option("--lambda1", abl_topts.lambda1, "L1 loss weight");
    abl->add_option("--lambda2", abl_topts.lambda2, "MSE loss weight");

    // report
    auto* rep = app.add_subcommand("report", "summarize experiment reports");
    std::vector<std::string> rep_inputs;
    double gap_lb = 0.0, gap_ours = 0.0, gap_ub = 0.0;
    rep->add_option("--in", rep_inputs, "report.json files")->required();
    rep->add_option("--gap-lb", gap_lb, "gap recovery: lower-bound (worse) loss");
    rep->add_option("--gap-ours", gap_ours, "gap recovery: our loss");
    rep->add_option("--gap-ub", gap_ub, "gap recovery: upper-bound (better) loss");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen)
            return cmd_gen_data(gen_common, trajectories, g_tin, g_tout, g_stride, g_ri,
                                system);
        if (*bdb) return cmd_build_db(bdb_manifest, bdb_out);
        if (*ret)
            return cmd_retrieve(ret_db, ret_query, ret_k, ret_excl, ret_radius, ret_workers);
        if (*trn) return cmd_train(trn_common, topts);
        if (*evl) return cmd_eval(evl_common, evl_manifest, evl_ckpt);
        if (*rol)
            return cmd_rollout(rol_common, rol_manifest, rol_ckpt, rol_input, rol_cycles,
                               rol_out_field);
        if (*abl)
            return cmd_ablate(abl_common, abl_manifest, abl_variants, abl_seeds, abl_analog,
                              abl_fraction, abl_full_retrieval, abl_topts);
        if (*rep) return cmd_report(rep_inputs, gap_lb, gap_ours, gap_ub);
    } catch (const rap::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const rap::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
