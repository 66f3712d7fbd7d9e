#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>

#include "rap/analog_db.hpp"

using namespace rap;

namespace {

Field random_field(std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                   std::mt19937_64& rng) {
    Field f(t, c, h, w);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (float& v : f.raw()) v = dist(rng);
    return f;
}

AnalogDatabase random_db(std::size_t n, std::mt19937_64& rng, std::size_t t_in = 2,
                         std::size_t c = 1, std::size_t h = 4, std::size_t w = 4) {
    std::vector<TrajectoryPair> entries;
    for (std::size_t i = 0; i < n; ++i) {
        TrajectoryPair p;
        p.x = random_field(t_in, c, h, w, rng);
        p.y = random_field(t_in, c, h, w, rng);
        p.source_id = i / 4;
        p.start_index = i % 4;
        entries.push_back(std::move(p));
    }
    return AnalogDatabase(std::move(entries));
}

// Independent oracle: score everything, stable sort, take k.
std::vector<std::pair<double, std::size_t>> brute_force(const AnalogDatabase& db,
                                                        const Field& q, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < db.size(); ++i)
        scored.emplace_back(similarity(q, db.entry(i).x), i);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

}  // namespace

TEST_CASE("similarity: zero on identical inputs") {
    std::mt19937_64 rng(1);
    Field x = random_field(2, 1, 3, 3, rng);
    CHECK(similarity(x, x) == 0.0);
}

TEST_CASE("similarity: constant offset 0.5 scores 0.25") {
    Field a(2, 1, 4, 4, 1.0f);
    Field b(2, 1, 4, 4, 0.5f);
    CHECK(similarity(a, b) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("similarity: matches an elementwise hand computation") {
    std::mt19937_64 rng(2);
    Field a = random_field(2, 1, 2, 2, rng);
    Field b = random_field(2, 1, 2, 2, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        double d = double(a.data()[i]) - double(b.data()[i]);
        acc += d * d;
    }
    CHECK(similarity(a, b) == acc / 8.0);
}

TEST_CASE("similarity: metric properties on random pairs") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        Field a = random_field(2, 2, 3, 3, rng);
        Field b = random_field(2, 2, 3, 3, rng);
        double s = similarity(a, b);
        CHECK(s >= 0.0);
        CHECK(s == similarity(b, a));
    }
}

TEST_CASE("similarity rejects shape mismatch") {
    Field a(2, 1, 2, 2), b(2, 1, 2, 3);
    CHECK_THROWS_AS(similarity(a, b), DimensionError);
}

TEST_CASE("retrieve: self-match scores zero at the right index") {
    std::mt19937_64 rng(4);
    AnalogDatabase db = random_db(20, rng);
    auto res = db.retrieve(db.entry(7).x);
    REQUIRE(res.size() == 1);
    CHECK(res[0].index == 7);
    CHECK(res[0].score == 0.0);
    CHECK(res[0].reference == &db.entry(7).y);
}

TEST_CASE("retrieve: ties break to the lowest index") {
    std::vector<TrajectoryPair> entries(3);
    for (auto& e : entries) {
        e.x = Field(1, 1, 2, 2, 1.0f);
        e.y = Field(1, 1, 2, 2);
    }
    entries[1].x = Field(1, 1, 2, 2, 3.0f);  // entries 0 and 2 tie
    AnalogDatabase db(std::move(entries));
    Field q(1, 1, 2, 2, 1.5f);
    auto res = db.retrieve(q, 2);
    CHECK(res[0].index == 0);
    CHECK(res[1].index == 2);
    CHECK(res[0].score == res[1].score);
}

TEST_CASE("retrieve equals the brute-force oracle, any worker count") {
    std::mt19937_64 rng(5);
    AnalogDatabase db = random_db(100, rng);
    for (int trial = 0; trial < 20; ++trial) {
        Field q = random_field(2, 1, 4, 4, rng);
        auto expect = brute_force(db, q, 3);
        for (unsigned workers : {1u, 2u, 3u, 7u, 64u}) {
            auto res = db.retrieve(q, 3, {}, std::nullopt, workers);
            REQUIRE(res.size() == expect.size());
            for (std::size_t i = 0; i < res.size(); ++i) {
                CHECK(res[i].index == expect[i].second);
                CHECK(res[i].score == expect[i].first);  // exact 64-bit equality
            }
        }
    }
}

TEST_CASE("exclusion rules") {
    std::mt19937_64 rng(6);
    AnalogDatabase db = random_db(40, rng);
    const auto& e5 = db.entry(5);
    QueryIdentity id{e5.source_id, e5.start_index};

    SUBCASE("exact_self never returns the query's own entry") {
        auto res = db.retrieve(e5.x, 1, {ExclusionMode::exact_self, 0}, id);
        CHECK(res[0].index != 5);
    }
    SUBCASE("source_window excludes same-source neighbors") {
        auto res = db.retrieve(e5.x, db.size() - 4, {ExclusionMode::source_window, 3}, id);
        for (const auto& r : res)
            CHECK(db.entry(r.index).source_id != e5.source_id);
    }
    SUBCASE("empty database after exclusion is an error") {
        std::vector<TrajectoryPair> one(1);
        one[0].x = Field(1, 1, 2, 2);
        one[0].y = Field(1, 1, 2, 2);
        AnalogDatabase tiny(std::move(one));
        CHECK_THROWS_AS(
            tiny.retrieve(Field(1, 1, 2, 2), 1, {ExclusionMode::exact_self, 0},
                          QueryIdentity{0, 0}),
            RetrievalError);
    }
}

TEST_CASE("rapdb roundtrip preserves order and bytes") {
    std::mt19937_64 rng(7);
    AnalogDatabase db = random_db(10, rng);
    auto path = (std::filesystem::temp_directory_path() / "rap_db_test.rapdb").string();
    save_database(db, path);
    AnalogDatabase loaded = load_database(path);
    REQUIRE(loaded.size() == db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
        CHECK(loaded.entry(i).x == db.entry(i).x);
        CHECK(loaded.entry(i).y == db.entry(i).y);
        CHECK(loaded.entry(i).source_id == db.entry(i).source_id);
        CHECK(loaded.entry(i).start_index == db.entry(i).start_index);
    }
}

TEST_CASE("rapdb: version mismatch is a format error") {
    std::mt19937_64 rng(8);
    AnalogDatabase db = random_db(2, rng);
    auto path = (std::filesystem::temp_directory_path() / "rap_db_badver.rapdb").string();
    save_database(db, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        char two[4] = {2, 0, 0, 0};
        f.write(two, 4);
    }
    CHECK_THROWS_AS(load_database(path), FormatError);
}

TEST_CASE("retrieval is identical across a save/load cycle") {
    std::mt19937_64 rng(9);
    AnalogDatabase db = random_db(50, rng);
    auto path = (std::filesystem::temp_directory_path() / "rap_db_persist.rapdb").string();
    save_database(db, path);
    AnalogDatabase loaded = load_database(path);
    for (int i = 0; i < 50; ++i) {
        Field q = random_field(2, 1, 4, 4, rng);
        auto a = db.retrieve(q, 2);
        auto b = loaded.retrieve(q, 2);
        REQUIRE(a.size() == b.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
            CHECK(a[j].index == b[j].index);
            CHECK(a[j].score == b[j].score);
        }
    }
}

TEST_CASE("similarity equals field-core sub + sum of squares") {
    std::mt19937_64 rng(10);
    Field a = random_field(2, 1, 4, 4, rng);
    Field b = random_field(2, 1, 4, 4, rng);
    Field d = field_binop(a, b, BinOp::sub);
    double acc = 0.0;
    for (float v : d.raw()) acc += double(v) * double(v);
    // the field-core route subtracts in 32-bit before squaring
    CHECK(similarity(a, b) == doctest::Approx(acc / d.size()).epsilon(1e-6));
}
