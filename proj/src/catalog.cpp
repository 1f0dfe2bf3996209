#include "catalog.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace starid {

namespace {

double parse_field(const std::string& field, const std::string& path, size_t row,
                   const char* name) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = first + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw std::runtime_error(path + ": row " + std::to_string(row) +
                                 ": bad " + name + " value '" + field + "'");
    }
    return value;
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace

std::vector<CatalogStar> load_catalog(const std::string& path, double mag_limit) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open catalog file " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error(path + ": empty catalog file");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "hip_id,ra_deg,dec_deg,vmag") {
        throw std::runtime_error(path + ": unexpected header '" + line + "'");
    }

    std::vector<CatalogStar> stars;
    std::unordered_set<uint32_t> seen;
    size_t row = 1;
    while (std::getline(in, line)) {
        row++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_row(line);
        if (fields.size() != 4) {
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": expected 4 fields, got " +
                                     std::to_string(fields.size()));
        }
        CatalogStar s;
        double hip = parse_field(fields[0], path, row, "hip_id");
        if (hip < 1 || hip != std::floor(hip) || hip > 4294967295.0) {
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": bad hip_id '" + fields[0] + "'");
        }
        s.hip = static_cast<uint32_t>(hip);
        s.ra_deg = parse_field(fields[1], path, row, "ra_deg");
        s.dec_deg = parse_field(fields[2], path, row, "dec_deg");
        s.vmag = parse_field(fields[3], path, row, "vmag");
        if (s.dec_deg < -90.0 || s.dec_deg > 90.0) {
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": dec_deg outside [-90, 90]");
        }
        if (s.vmag > mag_limit) continue;
        if (!seen.insert(s.hip).second) {
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": duplicate hip_id " + std::to_string(s.hip));
        }
        s.unit = radec_to_unit(s.ra_deg, s.dec_deg).vec();
        stars.push_back(s);
    }
    std::sort(stars.begin(), stars.end(),
              [](const CatalogStar& a, const CatalogStar& b) { return a.hip < b.hip; });
    return stars;
}

uint64_t catalog_content_hash(const std::vector<CatalogStar>& stars) {
    uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; i++) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 0x100000001B3ull;
        }
    };
    for (const CatalogStar& s : stars) {
        mix(s.hip);
        mix(std::bit_cast<uint64_t>(s.ra_deg));
        mix(std::bit_cast<uint64_t>(s.dec_deg));
        mix(std::bit_cast<uint64_t>(s.vmag));
    }
    return h;
}

PairDatabase PairDatabase::build(std::vector<CatalogStar> stars, double n_x,
                                 double ad_max_deg, double mag_limit,
                                 double double_star_sep_deg) {
    if (n_x <= 0.0 || ad_max_deg <= 0.0) {
        throw std::runtime_error("pair database needs positive n_x and ad_max");
    }
    PairDatabase db;
    db.stars_ = std::move(stars);
    db.n_x_ = n_x;
    db.ad_max_ = ad_max_deg;
    db.mag_limit_ = mag_limit;
    db.double_star_sep_ = double_star_sep_deg;

    // The recorded limit is a guarantee about the content, not advice to the
    // caller: drop anything dimmer even when the input was pre-filtered.
    db.stars_.erase(std::remove_if(db.stars_.begin(), db.stars_.end(),
                                   [&](const CatalogStar& s) {
                                       return s.vmag > mag_limit;
                                   }),
                    db.stars_.end());

    // Slightly loose dot-product prefilter; the acos below is the authority,
    // so boundary pairs cannot fall between the two tests.
    double cos_max = std::cos((ad_max_deg + 1e-6) * kRadPerDeg);
    const auto& st = db.stars_;
    for (uint32_t i = 0; i < st.size(); i++) {
        for (uint32_t j = i + 1; j < st.size(); j++) {
            if (st[i].unit.dot(st[j].unit) <= cos_max) continue;
            double d = angular_distance_deg(UnitVec3::normalize(st[i].unit),
                                            UnitVec3::normalize(st[j].unit));
            if (d > ad_max_deg || d < double_star_sep_deg) continue;
            db.pairs_.push_back({i, j, d});
        }
    }
    std::sort(db.pairs_.begin(), db.pairs_.end(),
              [](const CatalogPair& x, const CatalogPair& y) {
                  if (x.distance_deg != y.distance_deg)
                      return x.distance_deg < y.distance_deg;
                  if (x.a != y.a) return x.a < y.a;
                  return x.b < y.b;
              });
    db.build_bins();
    return db;
}

PairDatabase PairDatabase::rebin(double n_x) const {
    if (n_x <= 0.0) {
        throw std::runtime_error("pair database needs positive n_x");
    }
    PairDatabase db = *this;
    db.n_x_ = n_x;
    db.build_bins();
    return db;
}

void PairDatabase::build_bins() {
    // pairs_ is sorted by distance, so each bin is a contiguous slice; a
    // prefix-offset table is all the index we need.
    int64_t nbins = hash_index(ad_max_, n_x_) + 1;
    bin_offsets_.assign(static_cast<size_t>(nbins) + 1, 0);
    for (const CatalogPair& p : pairs_) {
        bin_offsets_[static_cast<size_t>(hash_index(p.distance_deg, n_x_)) + 1]++;
    }
    for (size_t k = 1; k < bin_offsets_.size(); k++) {
        bin_offsets_[k] += bin_offsets_[k - 1];
    }
}

std::vector<CatalogPair> PairDatabase::query_pairs(double measured_deg,
                                                   double epsilon_deg,
                                                   PairQueryStats* stats) const {
    std::vector<CatalogPair> out;
    if (epsilon_deg < 0.0) return out;
    int64_t nbins = static_cast<int64_t>(bin_offsets_.size()) - 1;
    int64_t lo = hash_index(measured_deg - epsilon_deg, n_x_);
    int64_t hi = hash_index(measured_deg + epsilon_deg, n_x_);
    lo = std::max<int64_t>(lo, 0);
    hi = std::min<int64_t>(hi, nbins - 1);
    for (int64_t k = lo; k <= hi; k++) {
        if (stats) stats->bins_probed++;
        for (uint32_t idx = bin_offsets_[static_cast<size_t>(k)];
             idx < bin_offsets_[static_cast<size_t>(k) + 1]; idx++) {
            if (stats) stats->pairs_scanned++;
            const CatalogPair& p = pairs_[idx];
            if (std::abs(p.distance_deg - measured_deg) <= epsilon_deg) {
                out.push_back(p);
            }
        }
    }
    // Bins are distance-ordered slices of a distance-sorted array, so out is
    // already sorted by (distance, a, b).
    return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; i++) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; i++) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<uint64_t>(v)); }

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(path + ": truncated pair database");
    }
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error(path + ": truncated pair database");
    }
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is, const std::string& path) {
    return std::bit_cast<double>(get_u64(is, path));
}

constexpr uint32_t kDbMagic = 0x42445053;  // "SPDB" little-endian
constexpr uint32_t kDbVersion = 1;

}  // namespace

void PairDatabase::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write pair database " + path);
    }
    put_u32(os, kDbMagic);
    put_u32(os, kDbVersion);
    put_f64(os, n_x_);
    put_f64(os, ad_max_);
    put_f64(os, mag_limit_);
    put_f64(os, double_star_sep_);
    put_u64(os, catalog_content_hash(stars_));
    put_u64(os, stars_.size());
    for (const CatalogStar& s : stars_) {
        put_u32(os, s.hip);
        put_f64(os, s.ra_deg);
        put_f64(os, s.dec_deg);
        put_f64(os, s.vmag);
    }
    put_u64(os, pairs_.size());
    for (const CatalogPair& p : pairs_) {
        put_u32(os, p.a);
        put_u32(os, p.b);
        put_f64(os, p.distance_deg);
    }
    if (!os) {
        throw std::runtime_error("short write to pair database " + path);
    }
}

PairDatabase PairDatabase::load(const std::string& path, double expected_n_x) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open pair database " + path);
    }
    if (get_u32(is, path) != kDbMagic) {
        throw std::runtime_error(path + ": not a pair database file");
    }
    uint32_t version = get_u32(is, path);
    if (version != kDbVersion) {
        throw std::runtime_error(path + ": unsupported pair database version " +
                                 std::to_string(version));
    }
    PairDatabase db;
    db.n_x_ = get_f64(is, path);
    db.ad_max_ = get_f64(is, path);
    db.mag_limit_ = get_f64(is, path);
    db.double_star_sep_ = get_f64(is, path);
    uint64_t stored_hash = get_u64(is, path);
    uint64_t nstars = get_u64(is, path);
    db.stars_.resize(nstars);
    for (CatalogStar& s : db.stars_) {
        s.hip = get_u32(is, path);
        s.ra_deg = get_f64(is, path);
        s.dec_deg = get_f64(is, path);
        s.vmag = get_f64(is, path);
        s.unit = radec_to_unit(s.ra_deg, s.dec_deg).vec();
    }
    uint64_t npairs = get_u64(is, path);
    db.pairs_.resize(npairs);
    for (CatalogPair& p : db.pairs_) {
        p.a = get_u32(is, path);
        p.b = get_u32(is, path);
        p.distance_deg = get_f64(is, path);
        if (p.a >= nstars || p.b >= nstars) {
            throw std::runtime_error(path + ": pair index out of range");
        }
    }
    if (catalog_content_hash(db.stars_) != stored_hash) {
        throw std::runtime_error(path + ": catalog hash mismatch, file corrupt");
    }
    if (expected_n_x > 0.0 && db.n_x_ != expected_n_x) {
        throw std::runtime_error(path + ": built with n_x=" + std::to_string(db.n_x_) +
                                 ", requested n_x=" + std::to_string(expected_n_x));
    }
    db.build_bins();
    return db;
}

}  // namespace starid
