#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "catalog.hpp"
#include "oracles.hpp"
#include "rng.hpp"

using namespace starid;
using namespace starid::testing;

namespace {

std::filesystem::path test_dir() {
    auto p = std::filesystem::temp_directory_path() / "starid_unit_catalog";
    std::filesystem::create_directories(p);
    return p;
}

std::string write_file(const std::string& name, const std::string& content) {
    auto path = test_dir() / name;
    std::ofstream os(path);
    os << content;
    os.close();
    return path.string();
}

}  // namespace

TEST_CASE("hash_index reference bins") {
    CHECK(hash_index(0.5, 0.016) == 31);
    CHECK(hash_index(7.99, 0.016) == 499);
    CHECK(hash_index(2.0, 0.016) == 125);
}

TEST_CASE("load_catalog parses the shipped file") {
    std::string path = env_catalog_path();
    REQUIRE_MESSAGE(!path.empty(), "STARID_TEST_CATALOG not set");
    auto stars = load_catalog(path, 6.0);
    CHECK(stars.size() == 5006);  // fixed content, fixed cutoff
    for (size_t i = 0; i < stars.size(); i++) {
        CHECK(stars[i].vmag <= 6.0);
        CHECK(std::abs(stars[i].unit.norm() - 1.0) < 1e-14);
        if (i > 0) CHECK(stars[i - 1].hip < stars[i].hip);
    }
    // a looser cutoff keeps strictly more stars
    CHECK(load_catalog(path, 6.5).size() > stars.size());
}

TEST_CASE("load_catalog error handling") {
    CHECK_THROWS_AS(load_catalog("/no/such/file.csv", 6.0), std::runtime_error);

    std::string bad_header =
        write_file("bad_header.csv", "hip,ra,dec,mag\n1,0,0,1\n");
    CHECK_THROWS_AS(load_catalog(bad_header, 6.0), std::runtime_error);

    std::string bad_row = write_file(
        "bad_row.csv", "hip_id,ra_deg,dec_deg,vmag\n1,0.0,0.0,1.0\n2,x,0.0,1.0\n");
    CHECK_THROWS_WITH_AS(load_catalog(bad_row, 6.0),
                         doctest::Contains("row 3"), std::runtime_error);

    std::string out_of_range = write_file(
        "bad_dec.csv", "hip_id,ra_deg,dec_deg,vmag\n1,0.0,91.0,1.0\n");
    CHECK_THROWS_AS(load_catalog(out_of_range, 6.0), std::runtime_error);

    std::string dup = write_file(
        "dup.csv", "hip_id,ra_deg,dec_deg,vmag\n7,0.0,0.0,1.0\n7,1.0,0.0,1.0\n");
    CHECK_THROWS_AS(load_catalog(dup, 6.0), std::runtime_error);
}

TEST_CASE("equator triple lands in the expected bins") {
    // Three stars on the equator; separations 1, 2 and 3 degrees (the last
    // nudged off the exact bin edge, where IEEE rounding could go either way).
    std::string path = write_file("equator.csv",
                                  "hip_id,ra_deg,dec_deg,vmag\n"
                                  "1,0.0,0.0,3.0\n"
                                  "2,1.0,0.0,3.0\n"
                                  "3,3.0000000001,0.0,3.0\n");
    auto stars = load_catalog(path, 6.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.0);
    REQUIRE(db.pairs().size() == 3);
    CHECK(hash_index(db.pairs()[0].distance_deg, 0.016) == 62);   // 1 deg
    CHECK(hash_index(db.pairs()[1].distance_deg, 0.016) == 125);  // 2 deg
    CHECK(hash_index(db.pairs()[2].distance_deg, 0.016) == 187);  // 3 deg
    CHECK(db.pairs()[0].distance_deg == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pair count matches the brute-force double loop") {
    Rng rng(21);
    for (int c = 0; c < 500; c++) {
        int n = 10 + static_cast<int>(rng.below(30));
        double ad_max = 2.0 + rng.uniform() * 8.0;
        double mag_limit = 4.0 + rng.uniform() * 2.5;
        auto stars = random_catalog(n, 1000 + c, 15.0);
        PairDatabase db = PairDatabase::build(stars, 0.016, ad_max, mag_limit);
        size_t expect = brute_force_pair_count(stars, ad_max, mag_limit,
                                               db.double_star_sep_deg());
        CHECK(db.pairs().size() == expect);
    }
}

TEST_CASE("pairs are sorted and within range") {
    auto stars = random_catalog(300, 77, 20.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.5);
    REQUIRE(db.pairs().size() > 100);
    for (size_t i = 0; i < db.pairs().size(); i++) {
        const CatalogPair& p = db.pairs()[i];
        CHECK(p.a < p.b);
        CHECK(p.distance_deg >= db.double_star_sep_deg());
        CHECK(p.distance_deg <= 8.0);
        if (i > 0) {
            const CatalogPair& q = db.pairs()[i - 1];
            bool ordered = q.distance_deg < p.distance_deg ||
                           (q.distance_deg == p.distance_deg &&
                            (q.a < p.a || (q.a == p.a && q.b < p.b)));
            CHECK(ordered);
        }
    }
}

TEST_CASE("separation boundaries are honored") {
    // 8 degrees apart (with a hair of margin against acos rounding): kept.
    std::string path = write_file("boundary.csv",
                                  "hip_id,ra_deg,dec_deg,vmag\n"
                                  "1,0.0,0.0,3.0\n"
                                  "2,7.9999999,0.0,3.0\n"
                                  "3,100.0,0.0,3.0\n"
                                  "4,100.005,0.0,3.0\n");
    auto stars = load_catalog(path, 6.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.0);
    // pair (1,2) is inside ad_max; (3,4) is a 0.005-degree double star, cut;
    // everything else is far beyond 8 degrees.
    REQUIRE(db.pairs().size() == 1);
    CHECK(db.stars()[db.pairs()[0].a].hip == 1);
    CHECK(db.stars()[db.pairs()[0].b].hip == 2);
}

TEST_CASE("query_pairs equals a linear scan") {
    auto stars = random_catalog(200, 88, 15.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.5);
    REQUIRE(db.pairs().size() > 500);
    Rng rng(22);
    for (int c = 0; c < 500; c++) {
        double d = rng.uniform() * 9.0;
        double eps = rng.uniform() * 0.08;
        auto got = db.query_pairs(d, eps);
        auto expect = linear_scan_pairs(db.pairs(), d, eps);
        CHECK(same_pairs(got, expect));
    }
}

TEST_CASE("query_pairs probes a bounded bin window") {
    auto stars = random_catalog(200, 99, 15.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.5);
    Rng rng(23);
    for (int c = 0; c < 200; c++) {
        double d = rng.uniform() * 8.0;
        double eps = 0.001 + rng.uniform() * 0.05;
        PairQueryStats stats;
        db.query_pairs(d, eps, &stats);
        int64_t max_bins = 2 * static_cast<int64_t>(std::ceil(eps / db.n_x())) + 1;
        CHECK(stats.bins_probed <= max_bins);
    }
}

TEST_CASE("rebin changes only the grid") {
    auto stars = random_catalog(150, 33, 15.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.5);
    PairDatabase wide = db.rebin(0.05);
    CHECK(wide.n_x() == 0.05);
    CHECK(wide.pairs().size() == db.pairs().size());
    auto a = wide.query_pairs(3.0, 0.02);
    auto b = linear_scan_pairs(wide.pairs(), 3.0, 0.02);
    CHECK(same_pairs(a, b));
}

TEST_CASE("database file round trip") {
    auto stars = random_catalog(120, 55, 15.0);
    PairDatabase db = PairDatabase::build(stars, 0.02, 8.0, 6.5);
    auto path = (test_dir() / "roundtrip.db").string();
    db.save(path);

    PairDatabase back = PairDatabase::load(path);
    CHECK(back.n_x() == db.n_x());
    CHECK(back.ad_max_deg() == db.ad_max_deg());
    CHECK(back.mag_limit() == db.mag_limit());
    REQUIRE(back.stars().size() == db.stars().size());
    for (size_t i = 0; i < db.stars().size(); i++) {
        CHECK(back.stars()[i].hip == db.stars()[i].hip);
        CHECK(back.stars()[i].ra_deg == db.stars()[i].ra_deg);
        CHECK(back.stars()[i].dec_deg == db.stars()[i].dec_deg);
        CHECK(back.stars()[i].vmag == db.stars()[i].vmag);
        CHECK(std::abs(back.stars()[i].unit.norm() - 1.0) < 1e-14);
    }
    CHECK(same_pairs(back.pairs(), db.pairs()));
    // queries behave identically after the round trip
    auto q1 = db.query_pairs(2.5, 0.03);
    auto q2 = back.query_pairs(2.5, 0.03);
    CHECK(same_pairs(q1, q2));

    CHECK(PairDatabase::load(path, 0.02).n_x() == 0.02);
    CHECK_THROWS_AS(PairDatabase::load(path, 0.016), std::runtime_error);
}

TEST_CASE("database load rejects damaged files") {
    CHECK_THROWS_AS(PairDatabase::load("/no/such/file.db"), std::runtime_error);

    auto garbage = write_file("garbage.db", "this is not a database");
    CHECK_THROWS_AS(PairDatabase::load(garbage), std::runtime_error);

    // truncated copy of a real database
    auto stars = random_catalog(60, 66, 15.0);
    PairDatabase db = PairDatabase::build(stars, 0.016, 8.0, 6.5);
    auto full = (test_dir() / "full.db").string();
    db.save(full);
    std::ifstream is(full, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() > 100);
    auto truncated = write_file("truncated.db", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(PairDatabase::load(truncated), std::runtime_error);
}

TEST_CASE("catalog content hash reacts to changes") {
    auto stars = random_catalog(50, 44, 15.0);
    uint64_t h1 = catalog_content_hash(stars);
    CHECK(h1 == catalog_content_hash(stars));
    auto tweaked = stars;
    tweaked[10].ra_deg += 1e-9;
    CHECK(catalog_content_hash(tweaked) != h1);
    auto renamed = stars;
    renamed[0].hip += 1;
    CHECK(catalog_content_hash(renamed) != h1);
}
