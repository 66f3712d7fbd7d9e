// Shells out to the rap-lab binary (path passed as the last program argument)
// and checks the stable surface: output formats, determinism, exit codes.

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

std::string g_binary;
namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    fs::path out_file = fs::temp_directory_path() / ("rap_cli_out_" +
                                                     std::to_string(counter++) + ".txt");
    std::string cmd = g_binary + " " + args + " > " + out_file.string() + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    r.out = ss.str();
    return r;
}

std::string temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string write_config(const std::string& dir) {
    std::string path = (fs::path(dir) / "cfg.json").string();
    std::ofstream os(path);
    os << R"({
  "sim": {"system": "advection_diffusion", "h": 8, "w": 8, "dt": 0.1, "n_steps": 40,
          "record_every": 2, "vx": 0.4, "vy": -0.2, "kappa": 0.05, "seed": 5},
  "dataset": {"trajectories": 6, "t_in": 2, "t_out": 2, "stride": 2,
              "retrieval_interval": 2, "f_train": 0.67, "f_val": 0.17, "f_test": 0.16},
  "arch": {"levels": 2, "base_channels": 4, "variant": "rap"},
  "train": {"epochs": 1, "batch_size": 4, "lr_max": 0.001}
})";
    return path;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Shared fixture: one generated dataset reused across the test cases.
struct Workspace {
    std::string root, config, data, manifest, db;
    Workspace() {
        root = temp_dir("rap_cli_ws");
        config = write_config(root);
        data = root + "/data";
        RunResult g = run("gen-data --config " + config + " --out " + data);
        REQUIRE(g.exit_code == 0);
        manifest = data + "/manifest.json";
        db = root + "/analog.rapdb";
        REQUIRE(run("build-db --manifest " + manifest + " --out " + db).exit_code == 0);
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

std::string first_test_query() {
    std::ifstream is(ws().manifest);
    nlohmann::json j = nlohmann::json::parse(is);
    return j.at("splits").at("test").at(0).at("x_path").get<std::string>();
}

}  // namespace

TEST_CASE("gen-data is deterministic across output directories") {
    std::string d1 = temp_dir("rap_cli_gen1"), d2 = temp_dir("rap_cli_gen2");
    RunResult r1 = run("gen-data --config " + ws().config + " --out " + d1);
    RunResult r2 = run("gen-data --config " + ws().config + " --out " + d2);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);

    nlohmann::json s1 = nlohmann::json::parse(r1.out);
    nlohmann::json s2 = nlohmann::json::parse(r2.out);
    CHECK(s1.at("train_pairs") == s2.at("train_pairs"));
    CHECK(s1.at("max_abs_value") == s2.at("max_abs_value"));

    // every generated field file is bit-identical across the two runs
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(d1) / "fields")) {
        if (entry.path().extension() != ".rapf") continue;
        fs::path other = fs::path(d2) / "fields" / entry.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(slurp(entry.path().string()) == slurp(other.string()));
        ++compared;
    }
    CHECK(compared > 0);
}

TEST_CASE("gen-data writes a resolved config snapshot") {
    std::ifstream is(ws().data + "/resolved_config.json");
    REQUIRE(is.good());
    nlohmann::json j = nlohmann::json::parse(is);
    CHECK(j.at("dataset").at("t_in") == 2);
    CHECK(j.at("sim").at("h") == 8);
}

TEST_CASE("retrieve prints one sorted result line per k") {
    RunResult r = run("retrieve --db " + ws().db + " --query " + first_test_query() +
                      " --k 3");
    REQUIRE(r.exit_code == 0);
    std::istringstream lines(r.out);
    std::string line;
    double prev_score = -1.0;
    int count = 0;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t index, source_id, start_index;
        double score;
        REQUIRE((ls >> index >> score >> source_id >> start_index));
        CHECK(score >= prev_score);
        prev_score = score;
        ++count;
    }
    CHECK(count == 3);
}

TEST_CASE("retrieve with more workers gives identical output") {
    std::string base = "retrieve --db " + ws().db + " --query " + first_test_query() +
                       " --k 5";
    RunResult r1 = run(base + " --workers 1");
    RunResult r3 = run(base + " --workers 3");
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r3.exit_code == 0);
    CHECK(r1.out == r3.out);
}

TEST_CASE("train writes checkpoints, history, and a summary") {
    std::string out = temp_dir("rap_cli_train");
    RunResult r = run("train --config " + ws().config + " --manifest " + ws().manifest +
                      " --out " + out + " --variant rap --epochs 1 --seed 3");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j.at("epochs") == 1);
    CHECK(j.at("best_val_loss").get<double>() > 0.0);
    CHECK(fs::exists(out + "/best.rapw"));
    CHECK(fs::exists(out + "/final.rapw"));
    CHECK(fs::exists(out + "/resolved_config.json"));
    std::ifstream hist(out + "/history.csv");
    std::string header;
    std::getline(hist, header);
    CHECK(header == "epoch,step,lr,train_loss,val_loss");
}

TEST_CASE("eval scores a trained checkpoint") {
    std::string out = temp_dir("rap_cli_eval_train");
    REQUIRE(run("train --config " + ws().config + " --manifest " + ws().manifest + " --out " +
                out + " --variant baseline --epochs 1").exit_code == 0);
    RunResult r = run("eval --manifest " + ws().manifest + " --checkpoint " + out +
                      "/best.rapw");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j.at("variant") == "baseline");
    CHECK(j.at("metrics").at("mse").get<double>() > 0.0);
    CHECK(j.at("metrics").at("count") == 9);
}

TEST_CASE("ablate emits a joint report with comparisons") {
    std::string out = temp_dir("rap_cli_ablate");
    RunResult r = run("ablate --config " + ws().config + " --manifest " + ws().manifest +
                      " --out " + out + " --variants baseline,rap --seeds 1 --epochs 1");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    REQUIRE(j.at("variants").contains("baseline"));
    REQUIRE(j.at("variants").contains("rap"));
    REQUIRE(j.at("variants").contains("analog-only"));
    CHECK(j.at("comparisons").size() == 2);
    CHECK(fs::exists(out + "/report.json"));
    CHECK(fs::exists(out + "/report.csv"));

    RunResult rep = run("report --in " + out + "/report.json --gap-lb 0.1003 "
                        "--gap-ours 0.0957 --gap-ub 0.0946");
    REQUIRE(rep.exit_code == 0);
    CHECK(rep.out.find("variant,mse,mae,psnr,ssim") != std::string::npos);
    CHECK(rep.out.find("gap_recovery: 80.7") != std::string::npos);
}

TEST_CASE("usage errors exit 2, runtime errors exit 1") {
    CHECK(run("train").exit_code == 2);                       // missing required option
    CHECK(run("no-such-command").exit_code == 2);             // unknown subcommand
    CHECK(run("retrieve --db missing.rapdb --query also_missing").exit_code == 1);
    CHECK(run("retrieve --db " + ws().db + " --query " + first_test_query() +
              " --exclusion bogus").exit_code == 2);
    std::string out = temp_dir("rap_cli_badcfg");
    std::string bad = out + "/bad.json";
    std::ofstream(bad) << "{not json";
    CHECK(run("gen-data --config " + bad + " --out " + out).exit_code == 2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli [doctest options] <rap-lab binary>\n");
        return 1;
    }
    g_binary = argv[argc - 1];
    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv);
    return ctx.run();
}
