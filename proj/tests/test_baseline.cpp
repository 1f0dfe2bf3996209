#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "baseline.hpp"
#include "catalog.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "simulate.hpp"

using namespace starid;
using namespace starid::testing;

namespace {

const PairDatabase& shipped_db() {
    static std::optional<PairDatabase> db;
    if (!db) {
        std::string path = env_catalog_path();
        if (path.empty()) throw std::runtime_error("STARID_TEST_CATALOG not set");
        db = PairDatabase::build(load_catalog(path, 6.0), 0.016, 8.0, 6.0);
    }
    return *db;
}

const TriangleDatabase& shipped_tdb() {
    static std::optional<TriangleDatabase> tdb;
    if (!tdb) tdb = TriangleDatabase::build(shipped_db());
    return *tdb;
}

double wrap_diff_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return std::min(d, 360.0 - d);
}

}  // namespace

TEST_CASE("triangle store matches brute-force enumeration") {
    auto cat = random_catalog(45, 606, 12.0);
    PairDatabase db = PairDatabase::build(cat, 0.016, 8.0, 6.5);
    TriangleDatabase tdb = TriangleDatabase::build(db);
    CHECK(tdb.bin_width_deg() == 0.05);

    // brute force: a triple is a triangle iff all three edges are pairs
    std::map<std::pair<uint32_t, uint32_t>, double> edge;
    for (const CatalogPair& p : db.pairs()) edge[{p.a, p.b}] = p.distance_deg;
    std::set<std::tuple<uint32_t, uint32_t, uint32_t>> expected;
    std::map<std::tuple<uint32_t, uint32_t, uint32_t>, std::array<double, 3>> expected_sides;
    uint32_t n = static_cast<uint32_t>(cat.size());
    for (uint32_t i = 0; i < n; i++) {
        for (uint32_t j = i + 1; j < n; j++) {
            auto eij = edge.find({i, j});
            if (eij == edge.end()) continue;
            for (uint32_t k = j + 1; k < n; k++) {
                auto eik = edge.find({i, k});
                if (eik == edge.end()) continue;
                auto ejk = edge.find({j, k});
                if (ejk == edge.end()) continue;
                std::array<double, 3> sides{eij->second, eik->second, ejk->second};
                std::sort(sides.begin(), sides.end());
                expected.insert({i, j, k});
                expected_sides[{i, j, k}] = sides;
            }
        }
    }
    REQUIRE(expected.size() > 50);  // the fixture is meant to be nontrivial

    REQUIRE(tdb.triangles().size() == expected.size());
    for (const TriangleFeature& t : tdb.triangles()) {
        CHECK(t.a < t.b);
        CHECK(t.b < t.c);
        CHECK(t.d1 <= t.d2);
        CHECK(t.d2 <= t.d3);
        CHECK(t.d3 <= db.ad_max_deg());
        auto it = expected_sides.find({t.a, t.b, t.c});
        REQUIRE(it != expected_sides.end());
        CHECK(t.d1 == doctest::Approx(it->second[0]).epsilon(1e-12));
        CHECK(t.d2 == doctest::Approx(it->second[1]).epsilon(1e-12));
        CHECK(t.d3 == doctest::Approx(it->second[2]).epsilon(1e-12));
        expected.erase({t.a, t.b, t.c});
    }
    CHECK(expected.empty());  // no duplicates, nothing missed
}

TEST_CASE("triangle query equals a linear scan") {
    auto cat = random_catalog(45, 606, 12.0);
    PairDatabase db = PairDatabase::build(cat, 0.016, 8.0, 6.5);
    TriangleDatabase tdb = TriangleDatabase::build(db);
    const auto& tris = tdb.triangles();
    REQUIRE(!tris.empty());

    Rng rng(4321);
    for (int c = 0; c < 500; c++) {
        const TriangleFeature& base = tris[rng.below(tris.size())];
        double s[3] = {base.d1 + rng.uniform(-0.1, 0.1),
                       base.d2 + rng.uniform(-0.1, 0.1),
                       base.d3 + rng.uniform(-0.1, 0.1)};
        std::sort(s, s + 3);
        for (double& v : s) v = std::max(v, 0.0);
        double tol = rng.uniform() * 0.08;

        std::vector<uint32_t> got = tdb.query(s[0], s[1], s[2], tol);
        CHECK(std::is_sorted(got.begin(), got.end()));

        std::vector<uint32_t> want;
        for (uint32_t ti = 0; ti < tris.size(); ti++) {
            const TriangleFeature& t = tris[ti];
            if (std::abs(t.d1 - s[0]) <= tol && std::abs(t.d2 - s[1]) <= tol &&
                std::abs(t.d3 - s[2]) <= tol) {
                want.push_back(ti);
            }
        }
        CHECK(got == want);
    }

    // exact sides with zero tolerance find at least the triangle itself
    const TriangleFeature& t0 = tris[0];
    std::vector<uint32_t> self = tdb.query(t0.d1, t0.d2, t0.d3, 0.0);
    CHECK(std::find(self.begin(), self.end(), 0u) != self.end());
}

TEST_CASE("triangle identification solves a clean frame") {
    const PairDatabase& db = shipped_db();
    const TriangleDatabase& tdb = shipped_tdb();
    CameraModel cam;
    NoiseSpec zero;
    Scene scene = make_benchmark_scene(db.stars(), cam, zero, 5, 8888, 0);

    IdentificationResult res = triangle_identify(scene.stars, tdb, db, TriangleParams{});
    REQUIRE(res.status == IdStatus::success);
    CHECK(check_success(res, scene.truth_map()));
    CHECK(res.matches.size() >= 3);
    for (const auto& [idx, hip] : res.matches) {
        REQUIRE(scene.stars[idx].truth_hip.has_value());
        CHECK(*scene.stars[idx].truth_hip == hip);
    }
    CHECK(wrap_diff_deg(res.attitude.ra, scene.truth.attitude.ra) < 0.05);
    CHECK(std::abs(res.attitude.dec - scene.truth.attitude.dec) < 0.05);
    CHECK(wrap_diff_deg(res.attitude.roll, scene.truth.attitude.roll) < 0.05);
    CHECK(res.elapsed_s >= 0.0);
}

TEST_CASE("triangle identification holds up under noise") {
    const PairDatabase& db = shipped_db();
    const TriangleDatabase& tdb = shipped_tdb();
    CameraModel cam;
    NoiseSpec noisy;
    noisy.sigma_px = 2.0;
    int ok = 0;
    for (int f = 0; f < 10; f++) {
        Scene scene = make_benchmark_scene(db.stars(), cam, noisy, 5, 1010, f);
        IdentificationResult res = triangle_identify(scene.stars, tdb, db, TriangleParams{});
        if (check_success(res, scene.truth_map())) ok++;
    }
    CHECK(ok >= 8);
}

TEST_CASE("triangle identification is deterministic") {
    const PairDatabase& db = shipped_db();
    const TriangleDatabase& tdb = shipped_tdb();
    CameraModel cam;
    NoiseSpec spec;
    spec.sigma_px = 3.0;
    spec.false_ratio = 0.4;
    Scene scene = make_benchmark_scene(db.stars(), cam, spec, 5, 2020, 2);
    IdentificationResult a = triangle_identify(scene.stars, tdb, db, TriangleParams{});
    IdentificationResult b = triangle_identify(scene.stars, tdb, db, TriangleParams{});
    CHECK(a.status == b.status);
    CHECK(a.matches == b.matches);
    CHECK(a.vote_count == b.vote_count);
}

TEST_CASE("triangle identification failure paths") {
    const PairDatabase& db = shipped_db();
    const TriangleDatabase& tdb = shipped_tdb();
    CameraModel cam;

    std::vector<ObservedStar> stars;
    CHECK(triangle_identify(stars, tdb, db, TriangleParams{}).status ==
          IdStatus::insufficient_stars);

    NoiseSpec zero;
    Scene scene = make_benchmark_scene(db.stars(), cam, zero, 5, 8888, 0);
    stars.assign(scene.stars.begin(), scene.stars.begin() + 2);
    stars[0].index = 0;
    stars[1].index = 1;
    CHECK(triangle_identify(stars, tdb, db, TriangleParams{}).status ==
          IdStatus::insufficient_stars);

    // three directions far wider than any catalog triangle
    stars.clear();
    for (int i = 0; i < 3; i++) {
        ObservedStar s;
        s.index = static_cast<uint32_t>(i);
        s.px = 200.0 * i;
        s.py = 100.0;
        s.unit = radec_to_unit(25.0 * i, 5.0).vec();
        stars.push_back(s);
    }
    CHECK(triangle_identify(stars, tdb, db, TriangleParams{}).status ==
          IdStatus::no_candidates);
}
