#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "catalog.hpp"
#include "identify.hpp"

namespace starid {

struct TriangleFeature {
    uint32_t a = 0;  // catalog star indices, a < b < c
    uint32_t b = 0;
    uint32_t c = 0;
    double d1 = 0.0;  // sorted side separations, d1 <= d2 <= d3, degrees
    double d2 = 0.0;
    double d3 = 0.0;
};

// Every catalog triangle whose three sides fit inside ad_max, indexed by a
// 3D spatial hash over the sorted side lengths.
class TriangleDatabase {
public:
    // Built from an existing pair database (it already holds the within-FOV
    // pair list and the catalog).
    static TriangleDatabase build(const PairDatabase& pairs,
                                  double bin_width_deg = 0.05);

    // Indices of stored triangles whose sorted sides all lie within tol of
    // the query sides (inputs must satisfy d1 <= d2 <= d3). Sorted output.
    std::vector<uint32_t> query(double d1, double d2, double d3, double tol) const;

    const std::vector<TriangleFeature>& triangles() const { return triangles_; }
    double bin_width_deg() const { return bin_width_; }

private:
    std::vector<TriangleFeature> triangles_;
    std::unordered_map<uint64_t, std::vector<uint32_t>> bins_;
    double bin_width_ = 0.05;
};

struct TriangleParams {
    double tol_deg = 0.05;            // per-side match tolerance
    double verify_radius_deg = 0.06;  // max star-to-catalog residual to verify
    int max_observed_triangles = 300;
};

// Classic match-and-verify triangle identification: every observed triangle
// (largest perimeter first, capped) is matched against the store, each
// side-consistent vertex assignment yields a TRIAD attitude, and the
// attitude scoring the most verified observed stars wins. Emits the same
// result schema as identify().
IdentificationResult triangle_identify(const std::vector<ObservedStar>& stars,
                                       const TriangleDatabase& tdb,
                                       const PairDatabase& db,
                                       const TriangleParams& params);

}  // namespace starid
