#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "rap/field.hpp"

using namespace rap;

namespace {

Field random_field(std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                   std::uint64_t seed) {
    Field f(t, c, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    for (float& v : f.raw()) v = dist(rng);
    return f;
}

std::filesystem::path tmpdir() {
    auto p = std::filesystem::temp_directory_path() / "rap_field_tests";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("indexing is the documented row-major bijection") {
    Field f(2, 3, 4, 5);
    CHECK(f.offset(0, 0, 0, 0) == 0);
    CHECK(f.offset(1, 2, 3, 4) == f.size() - 1);
    CHECK(f.offset(1, 0, 0, 0) == 3 * 4 * 5);
    CHECK(f.offset(0, 1, 0, 0) == 4 * 5);
    CHECK(f.offset(0, 0, 1, 0) == 5);
}

TEST_CASE("binop: sub(f, f) is zero, add(zeros, f) is f") {
    Field f = random_field(2, 1, 4, 4, 7);
    Field z = field_binop(f, f, BinOp::sub);
    for (float v : z.raw()) CHECK(v == 0.0f);
    Field zeros(2, 1, 4, 4);
    CHECK(field_binop(zeros, f, BinOp::add) == f);
}

TEST_CASE("binop: elementwise product on 1x1x2x2") {
    Field a(1, 1, 2, 2, {1, 2, 3, 4});
    Field b(1, 1, 2, 2, {2, 2, 2, 2});
    Field p = field_binop(a, b, BinOp::mul);
    CHECK(p.raw() == std::vector<float>{2, 4, 6, 8});
}

TEST_CASE("binop rejects shape mismatch and names both shapes") {
    Field a(1, 1, 2, 2);
    Field b(1, 1, 2, 3);
    CHECK_THROWS_WITH_AS(field_binop(a, b, BinOp::add),
                         doctest::Contains("1x1x2x2"), DimensionError);
}

TEST_CASE("rapf roundtrip is bit-exact") {
    Field f = random_field(4, 1, 8, 8, 42);
    auto path = (tmpdir() / "roundtrip.rapf").string();
    write_field(f, path);
    CHECK(read_field(path) == f);
}

TEST_CASE("rapf: bad magic is a format error") {
    std::stringstream ss;
    ss << "XXXXjunkjunkjunkjunkjunk";
    CHECK_THROWS_AS(read_field(ss), FormatError);
}

TEST_CASE("rapf: truncated payload reports the error") {
    Field f = random_field(2, 1, 2, 2, 3);
    std::stringstream ss;
    write_field(f, ss);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 4);  // drop one float: 15 of 16 remain
    std::stringstream cut(bytes);
    CHECK_THROWS_AS(read_field(cut), FormatError);
}

TEST_CASE("window_split pair counts") {
    SUBCASE("t=20, 4+4, stride 2 gives 7 pairs") {
        Field traj = random_field(20, 1, 2, 2, 1);
        auto pairs = window_split(traj, 4, 4, 2);
        REQUIRE(pairs.size() == 7);
        for (std::size_t j = 0; j < pairs.size(); ++j)
            CHECK(pairs[j].start_index == 2 * j);
    }
    SUBCASE("exact fit gives one pair at start 0") {
        Field traj = random_field(8, 1, 2, 2, 2);
        auto pairs = window_split(traj, 4, 4, 1);
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0].start_index == 0);
    }
    SUBCASE("too-short trajectory gives an empty list") {
        Field traj = random_field(7, 1, 2, 2, 3);
        CHECK(window_split(traj, 4, 4, 1).empty());
    }
}

TEST_CASE("window_split pairs reconstruct their source") {
    Field traj = random_field(17, 2, 3, 3, 11);
    for (const auto& p : window_split(traj, 3, 2, 2, 5)) {
        CHECK(p.source_id == 5);
        Field joined = Field::concat_t(p.x, p.y);
        Field expect = traj.slice_t(p.start_index, 5);
        CHECK(joined == expect);
    }
}

TEST_CASE("random roundtrips stay bit-exact (property)") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 20; ++i) {
        std::uniform_int_distribution<std::size_t> d(1, 6);
        Field f = random_field(d(rng), d(rng), d(rng), d(rng), rng());
        std::stringstream ss;
        write_field(f, ss);
        CHECK(read_field(ss) == f);
    }
}
