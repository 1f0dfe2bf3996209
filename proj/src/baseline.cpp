#include "baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace starid {

namespace {

uint64_t triangle_bin_key(int64_t b1, int64_t b2, int64_t b3) {
    return (static_cast<uint64_t>(b1) << 42) | (static_cast<uint64_t>(b2) << 21) |
           static_cast<uint64_t>(b3);
}

}  // namespace

TriangleDatabase TriangleDatabase::build(const PairDatabase& pairs,
                                         double bin_width_deg) {
    TriangleDatabase tdb;
    tdb.bin_width_ = bin_width_deg;
    const auto& cat = pairs.stars();

    // Forward adjacency (neighbors with a larger index), sorted by index, so
    // each triangle a < b < c is generated exactly once by intersecting the
    // forward lists of a and b.
    std::vector<std::vector<std::pair<uint32_t, double>>> adj(cat.size());
    for (const CatalogPair& p : pairs.pairs()) {
        adj[p.a].emplace_back(p.b, p.distance_deg);
    }
    for (auto& list : adj) std::sort(list.begin(), list.end());

    for (uint32_t a = 0; a < cat.size(); a++) {
        for (const auto& [b, dab] : adj[a]) {
            const auto& la = adj[a];
            const auto& lb = adj[b];
            size_t ia = 0, ib = 0;
            while (ia < la.size() && ib < lb.size()) {
                if (la[ia].first < lb[ib].first) {
                    ia++;
                } else if (la[ia].first > lb[ib].first) {
                    ib++;
                } else {
                    uint32_t c = la[ia].first;
                    if (c > b) {
                        double sides[3] = {dab, la[ia].second, lb[ib].second};
                        std::sort(sides, sides + 3);
                        TriangleFeature t{a, b, c, sides[0], sides[1], sides[2]};
                        uint32_t idx = static_cast<uint32_t>(tdb.triangles_.size());
                        tdb.triangles_.push_back(t);
                        tdb.bins_[triangle_bin_key(
                                      static_cast<int64_t>(t.d1 / bin_width_deg),
                                      static_cast<int64_t>(t.d2 / bin_width_deg),
                                      static_cast<int64_t>(t.d3 / bin_width_deg))]
                            .push_back(idx);
                    }
                    ia++;
                    ib++;
                }
            }
        }
    }
    return tdb;
}

std::vector<uint32_t> TriangleDatabase::query(double d1, double d2, double d3,
                                              double tol) const {
    std::vector<uint32_t> out;
    int64_t lo1 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((d1 - tol) / bin_width_)));
    int64_t hi1 = static_cast<int64_t>(std::floor((d1 + tol) / bin_width_));
    int64_t lo2 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((d2 - tol) / bin_width_)));
    int64_t hi2 = static_cast<int64_t>(std::floor((d2 + tol) / bin_width_));
    int64_t lo3 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((d3 - tol) / bin_width_)));
    int64_t hi3 = static_cast<int64_t>(std::floor((d3 + tol) / bin_width_));
    for (int64_t b1 = lo1; b1 <= hi1; b1++) {
        for (int64_t b2 = lo2; b2 <= hi2; b2++) {
            for (int64_t b3 = lo3; b3 <= hi3; b3++) {
                auto it = bins_.find(triangle_bin_key(b1, b2, b3));
                if (it == bins_.end()) continue;
                for (uint32_t idx : it->second) {
                    const TriangleFeature& t = triangles_[idx];
                    if (std::abs(t.d1 - d1) <= tol && std::abs(t.d2 - d2) <= tol &&
                        std::abs(t.d3 - d3) <= tol) {
                        out.push_back(idx);
                    }
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

Vec3 transpose_mul(const Mat3& m, const Vec3& v) {
    return {m.m[0][0] * v.x + m.m[1][0] * v.y + m.m[2][0] * v.z,
            m.m[0][1] * v.x + m.m[1][1] * v.y + m.m[2][1] * v.z,
            m.m[0][2] * v.x + m.m[1][2] * v.y + m.m[2][2] * v.z};
}

struct VerifiedMatch {
    uint32_t star = 0;     // observed index
    uint32_t cat_idx = 0;  // catalog index
    double dot = -1.0;     // closeness, larger is better
};

}  // namespace

IdentificationResult triangle_identify(const std::vector<ObservedStar>& stars,
                                       const TriangleDatabase& tdb,
                                       const PairDatabase& db,
                                       const TriangleParams& params) {
    auto t0 = std::chrono::steady_clock::now();
    IdentificationResult res;
    auto stamp = [&t0](IdentificationResult& r) {
        r.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
        return r;
    };

    size_t n = stars.size();
    if (n < 3) {
        res.status = IdStatus::insufficient_stars;
        return stamp(res);
    }
    const auto& cat = db.stars();

    std::vector<Vec3> os(n);
    double max_off_axis = 0.0;
    for (size_t i = 0; i < n; i++) {
        os[i] = UnitVec3::normalize(stars[i].unit).vec();
        max_off_axis = std::max(
            max_off_axis, std::acos(std::clamp(os[i].z, -1.0, 1.0)) * kDegPerRad);
    }
    std::vector<double> dmat(n * n, 0.0);
    for (size_t i = 0; i < n; i++) {
        for (size_t j = i + 1; j < n; j++) {
            double d = std::acos(std::clamp(os[i].dot(os[j]), -1.0, 1.0)) * kDegPerRad;
            dmat[i * n + j] = dmat[j * n + i] = d;
        }
    }

    struct ObsTriangle {
        uint32_t i, j, k;
        double perimeter;
    };
    std::vector<ObsTriangle> tris;
    for (uint32_t i = 0; i < n; i++) {
        for (uint32_t j = i + 1; j < n; j++) {
            for (uint32_t k = j + 1; k < n; k++) {
                double s1 = dmat[i * n + j], s2 = dmat[i * n + k], s3 = dmat[j * n + k];
                if (std::max({s1, s2, s3}) > db.ad_max_deg()) continue;
                tris.push_back({i, j, k, s1 + s2 + s3});
            }
        }
    }
    // Widest triangles first: better TRIAD conditioning and more distinctive
    // side triples.
    std::sort(tris.begin(), tris.end(), [](const ObsTriangle& a, const ObsTriangle& b) {
        if (a.perimeter != b.perimeter) return a.perimeter > b.perimeter;
        if (a.i != b.i) return a.i < b.i;
        if (a.j != b.j) return a.j < b.j;
        return a.k < b.k;
    });
    if (tris.size() > static_cast<size_t>(params.max_observed_triangles)) {
        tris.resize(static_cast<size_t>(params.max_observed_triangles));
    }

    double cone_cos =
        std::cos((max_off_axis + params.verify_radius_deg + 0.01) * kRadPerDeg);
    double verify_cos = std::cos(params.verify_radius_deg * kRadPerDeg);

    static const int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                     {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

    int best_score = 0;
    Mat3 best_rot;
    std::vector<VerifiedMatch> best_matches;
    bool attempted = false;

    std::vector<uint32_t> cone;
    for (const ObsTriangle& tri : tris) {
        uint32_t obs[3] = {tri.i, tri.j, tri.k};
        double sides[3] = {dmat[tri.i * n + tri.j], dmat[tri.i * n + tri.k],
                           dmat[tri.j * n + tri.k]};
        double sorted_sides[3] = {sides[0], sides[1], sides[2]};
        std::sort(sorted_sides, sorted_sides + 3);
        auto cand_idx = tdb.query(sorted_sides[0], sorted_sides[1], sorted_sides[2],
                                  params.tol_deg);

        // Anchor the TRIAD on the triangle's longest observed side.
        int au = 0, av = 1;
        if (sides[1] >= sides[0] && sides[1] >= sides[2]) {
            au = 0;
            av = 2;
        } else if (sides[2] >= sides[0] && sides[2] >= sides[1]) {
            au = 1;
            av = 2;
        }

        for (uint32_t ti : cand_idx) {
            const TriangleFeature& f = tdb.triangles()[ti];
            uint32_t verts[3] = {f.a, f.b, f.c};
            double edge[3][3] = {};
            edge[0][1] = edge[1][0] = angular_distance_deg(
                UnitVec3::normalize(cat[f.a].unit), UnitVec3::normalize(cat[f.b].unit));
            edge[0][2] = edge[2][0] = angular_distance_deg(
                UnitVec3::normalize(cat[f.a].unit), UnitVec3::normalize(cat[f.c].unit));
            edge[1][2] = edge[2][1] = angular_distance_deg(
                UnitVec3::normalize(cat[f.b].unit), UnitVec3::normalize(cat[f.c].unit));

            for (const auto& perm : kPerms) {
                if (std::abs(dmat[obs[0] * n + obs[1]] - edge[perm[0]][perm[1]]) >
                        params.tol_deg ||
                    std::abs(dmat[obs[0] * n + obs[2]] - edge[perm[0]][perm[2]]) >
                        params.tol_deg ||
                    std::abs(dmat[obs[1] * n + obs[2]] - edge[perm[1]][perm[2]]) >
                        params.tol_deg) {
                    continue;
                }
                attempted = true;
                uint32_t cu = verts[perm[au]];
                uint32_t cv = verts[perm[av]];
                auto rot = triad_attitude(UnitVec3::normalize(cat[cu].unit),
                                          UnitVec3::normalize(cat[cv].unit),
                                          UnitVec3::normalize(os[obs[au]]),
                                          UnitVec3::normalize(os[obs[av]]));
                if (!rot) continue;

                // Score the attitude: how many observed stars land within
                // verify_radius of some catalog star. The catalog is first
                // cut to a cone around the implied boresight.
                Vec3 boresight = rot->row(2);
                cone.clear();
                for (uint32_t s = 0; s < cat.size(); s++) {
                    if (cat[s].unit.dot(boresight) >= cone_cos) cone.push_back(s);
                }
                std::vector<VerifiedMatch> matches;
                for (uint32_t m = 0; m < n; m++) {
                    Vec3 inertial = transpose_mul(*rot, os[m]);
                    VerifiedMatch vm{m, 0, -1.0};
                    for (uint32_t s : cone) {
                        double dot = cat[s].unit.dot(inertial);
                        if (dot > vm.dot) {
                            vm.dot = dot;
                            vm.cat_idx = s;
                        }
                    }
                    if (vm.dot >= verify_cos) matches.push_back(vm);
                }
                // One catalog star can verify only one observed star; the
                // closest claimant keeps it.
                std::sort(matches.begin(), matches.end(),
                          [](const VerifiedMatch& x, const VerifiedMatch& y) {
                              if (x.cat_idx != y.cat_idx) return x.cat_idx < y.cat_idx;
                              if (x.dot != y.dot) return x.dot > y.dot;
                              return x.star < y.star;
                          });
                std::vector<VerifiedMatch> dedup;
                for (const VerifiedMatch& vm : matches) {
                    if (dedup.empty() || dedup.back().cat_idx != vm.cat_idx) {
                        dedup.push_back(vm);
                    }
                }
                if (static_cast<int>(dedup.size()) > best_score) {
                    best_score = static_cast<int>(dedup.size());
                    best_rot = *rot;
                    best_matches = dedup;
                }
            }
        }
    }

    int min_verified =
        std::max(3, static_cast<int>(std::ceil(0.35 * static_cast<double>(n))));
    if (best_score < min_verified) {
        res.status = attempted ? IdStatus::ambiguous : IdStatus::no_candidates;
        return stamp(res);
    }

    res.status = IdStatus::success;
    res.rotation = best_rot;
    res.attitude = matrix_to_euler(best_rot);
    res.vote_count = static_cast<uint32_t>(best_score);
    for (const VerifiedMatch& vm : best_matches) {
        res.matches.emplace_back(vm.star, cat[vm.cat_idx].hip);
    }
    std::sort(res.matches.begin(), res.matches.end());
    return stamp(res);
}

}  // namespace starid
