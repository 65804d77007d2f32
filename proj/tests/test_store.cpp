#include <doctest.h>

#include <fstream>
#include <sstream>

#include "boubakiki/npz.hpp"
#include "boubakiki/result_store.hpp"

using namespace bk;
using store::Json;
using store::JsonlStore;

namespace {

std::filesystem::path fresh(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("bk_store_" + name);
    std::filesystem::remove(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("append, duplicates and resume") {
    const auto path = fresh("basic.jsonl");
    {
        JsonlStore s(path);
        CHECK(s.size() == 0);
        CHECK(s.append({{"key", "b"}, {"v", 1}}));
        CHECK(s.append({{"key", "a"}, {"v", 2}}));
        CHECK(!s.append({{"key", "a"}, {"v", 3}}));
        CHECK(s.contains("a"));
        CHECK(s.size() == 2);
    }
    JsonlStore again(path);
    CHECK(again.size() == 2);
    CHECK(again.contains("b"));
    CHECK(!again.append({{"key", "b"}, {"v", 9}}));
    const auto rows = JsonlStore::read_all(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1]["v"] == 2);
}

TEST_CASE("records without a key are rejected") {
    JsonlStore s(fresh("nokey.jsonl"));
    CHECK_THROWS(s.append({{"v", 1}}));
}

TEST_CASE("torn final line is dropped") {
    const auto path = fresh("torn.jsonl");
    std::ofstream(path) << "{\"key\":\"a\",\"v\":1}\n{\"key\":\"b\",\"v\":";
    {
        JsonlStore s(path);
        CHECK(s.size() == 1);
        CHECK(!s.contains("b"));
        CHECK(s.append({{"key", "b"}, {"v", 2}}));
    }
    const auto rows = JsonlStore::read_all(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1]["key"] == "b");
    CHECK(rows[1]["v"] == 2);
}

TEST_CASE("canonicalize gives order-independent bytes") {
    const auto p1 = fresh("c1.jsonl"), p2 = fresh("c2.jsonl");
    {
        JsonlStore a(p1), b(p2);
        for (const char* k : {"x", "m", "c"}) a.append({{"key", k}, {"n", std::string(k)}});
        for (const char* k : {"c", "x", "m"}) b.append({{"key", k}, {"n", std::string(k)}});
        a.canonicalize();
        b.canonicalize();
    }
    CHECK(slurp(p1) == slurp(p2));
    CHECK(store::file_hash(p1) == store::file_hash(p2));
    CHECK(JsonlStore::read_all(p1).front()["key"] == "c");
}

TEST_CASE("make_key") {
    CHECK(store::make_key({"a", "b"}) == store::make_key({"a", "b"}));
    CHECK(store::make_key({"ab", "c"}) != store::make_key({"a", "bc"}));
    CHECK(store::make_key({"a"}) != store::make_key({"b"}));
    CHECK(!store::make_key({}).empty());
}

TEST_CASE("npy and npz round trip") {
    npz::Array a{{2, 3}, {0, 1.5, -2, 3.25, 4, 1e-3}};
    const auto bytes = npz::npy_bytes(a);
    CHECK(bytes.substr(0, 6) == "\x93NUMPY");
    CHECK(bytes.find("'<f4'") != std::string::npos);
    CHECK(bytes.find("(2, 3)") != std::string::npos);
    const auto back = npz::parse_npy(bytes);
    CHECK(back.shape == a.shape);
    REQUIRE(back.data.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(back.data[i] == doctest::Approx(a.data[i]).epsilon(1e-7));

    for (bool compress : {false, true}) {
        const auto path = fresh(compress ? "m_c.npz" : "m_u.npz");
        npz::write(path, {{"map", a}, {"score", {{}, {0.5}}}}, compress);
        const auto arrays = npz::read(path);
        REQUIRE(arrays.count("map"));
        REQUIRE(arrays.count("score"));
        CHECK(arrays.at("map").shape == a.shape);
        CHECK(arrays.at("score").data.at(0) == 0.5);
        CHECK(arrays.at("map").data[3] == 3.25);
    }
}
