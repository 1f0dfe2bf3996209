#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace starid {

struct CatalogStar {
    uint32_t hip = 0;
    double ra_deg = 0.0;
    double dec_deg = 0.0;
    double vmag = 0.0;
    Vec3 unit;  // recomputed from (ra, dec) on load, never serialized
};

// Parses a catalog CSV with header "hip_id,ra_deg,dec_deg,vmag", keeps rows
// with vmag <= mag_limit, and returns the stars sorted by ascending hip id.
// Throws std::runtime_error naming the offending row for unreadable files,
// malformed rows, out-of-range coordinates, and duplicate ids.
std::vector<CatalogStar> load_catalog(const std::string& path, double mag_limit);

// Bin index of an angular distance on the n_x-degree grid.
inline int64_t hash_index(double distance_deg, double n_x) {
    return static_cast<int64_t>(std::floor(distance_deg / n_x));
}

struct CatalogPair {
    uint32_t a = 0;  // indices into the star array, a < b
    uint32_t b = 0;
    double distance_deg = 0.0;
};

struct PairQueryStats {
    int64_t bins_probed = 0;
    int64_t pairs_scanned = 0;
};

// All catalog pairs closer than ad_max, bucketed by hash_index of their
// separation for O(1) distance lookups. Pairs closer than double_star_sep
// (double stars, which a centroider cannot split) are excluded.
class PairDatabase {
public:
    PairDatabase() = default;

    // Builds from a loaded catalog. Deterministic: pairs are sorted by
    // (distance, a, b) before binning.
    static PairDatabase build(std::vector<CatalogStar> stars, double n_x,
                              double ad_max_deg, double mag_limit,
                              double double_star_sep_deg = 0.01);

    // Re-bins the same star/pair lists on a different grid. Cheap compared to
    // build(); the tuner calls this when it moves n_x.
    PairDatabase rebin(double n_x) const;

    // Pairs whose catalog distance is within epsilon of measured_deg, sorted
    // by (distance, a, b). Probes only the hash bins that can contain such
    // pairs; stats (when given) records how many, so tests can pin the cost.
    std::vector<CatalogPair> query_pairs(double measured_deg, double epsilon_deg,
                                         PairQueryStats* stats = nullptr) const;

    const std::vector<CatalogStar>& stars() const { return stars_; }
    const std::vector<CatalogPair>& pairs() const { return pairs_; }
    double n_x() const { return n_x_; }
    double ad_max_deg() const { return ad_max_; }
    double mag_limit() const { return mag_limit_; }
    double double_star_sep_deg() const { return double_star_sep_; }

    // Binary round-trip. save() writes a little-endian snapshot with a
    // catalog content hash; load() rebuilds bins and unit vectors and
    // verifies the hash, and (when expected_n_x > 0) rejects databases built
    // on a different grid. Both throw std::runtime_error on failure.
    void save(const std::string& path) const;
    static PairDatabase load(const std::string& path, double expected_n_x = -1.0);

private:
    void build_bins();

    std::vector<CatalogStar> stars_;
    std::vector<CatalogPair> pairs_;      // sorted by (distance, a, b)
    std::vector<uint32_t> bin_offsets_;   // bin k spans [offsets[k], offsets[k+1])
    double n_x_ = 0.016;
    double ad_max_ = 8.0;
    double mag_limit_ = 6.0;
    double double_star_sep_ = 0.01;
};

// FNV-1a over the catalog fields, used to couple a saved database to its
// source catalog.
uint64_t catalog_content_hash(const std::vector<CatalogStar>& stars);

}  // namespace starid
