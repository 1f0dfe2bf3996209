#include "identify.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>

#include <json.hpp>

namespace starid {

const char* to_string(IdStatus s) {
    switch (s) {
        case IdStatus::success: return "success";
        case IdStatus::ambiguous: return "ambiguous";
        case IdStatus::insufficient_stars: return "insufficient_stars";
        case IdStatus::no_candidates: return "no_candidates";
    }
    return "unknown";
}

PairSelection select_pairs(const std::vector<ObservedStar>& stars,
                           const IdentifyParams& params) {
    PairSelection sel;
    if (stars.size() < 2) return sel;

    std::vector<ObservedPair> preferred;
    std::vector<ObservedPair> fallback;
    for (uint32_t i = 0; i < stars.size(); i++) {
        for (uint32_t j = i + 1; j < stars.size(); j++) {
            ObservedPair p;
            p.i1 = i;
            p.i2 = j;
            p.d_m_deg = angular_distance_deg(UnitVec3::normalize(stars[i].unit),
                                             UnitVec3::normalize(stars[j].unit));
            double ci = std::hypot(stars[i].px - params.center_px,
                                   stars[i].py - params.center_py);
            double cj = std::hypot(stars[j].px - params.center_px,
                                   stars[j].py - params.center_py);
            p.centrality_px = 0.5 * (ci + cj);
            (p.d_m_deg >= params.min_pair_sep ? preferred : fallback).push_back(p);
        }
    }
    // Short well-separated pairs first: short distances have the least
    // catalog redundancy, central stars the least distortion. Sub-threshold
    // pairs only pad out the budget, best (widest) first.
    auto by_quality = [](const ObservedPair& a, const ObservedPair& b) {
        if (a.d_m_deg != b.d_m_deg) return a.d_m_deg < b.d_m_deg;
        if (a.centrality_px != b.centrality_px) return a.centrality_px < b.centrality_px;
        if (a.i1 != b.i1) return a.i1 < b.i1;
        return a.i2 < b.i2;
    };
    std::sort(preferred.begin(), preferred.end(), by_quality);
    std::sort(fallback.begin(), fallback.end(),
              [&](const ObservedPair& a, const ObservedPair& b) {
                  if (a.d_m_deg != b.d_m_deg) return a.d_m_deg > b.d_m_deg;
                  return by_quality(a, b);
              });

    size_t budget = static_cast<size_t>(std::max(params.n_th, 0));
    for (const ObservedPair& p : preferred) {
        if (sel.pairs.size() >= budget) break;
        sel.pairs.push_back(p);
    }
    for (const ObservedPair& p : fallback) {
        if (sel.pairs.size() >= budget) break;
        sel.pairs.push_back(p);
        sel.fallback_used = true;
    }
    return sel;
}

std::vector<std::vector<CatalogPair>> initial_match(const PairSelection& selection,
                                                    const PairDatabase& db,
                                                    const IdentifyParams& params) {
    if (db.n_x() != params.n_x) {
        throw std::runtime_error("pair database n_x " + std::to_string(db.n_x()) +
                                 " does not match requested n_x " +
                                 std::to_string(params.n_x));
    }
    double eps = params.effective_epsilon();
    std::vector<std::vector<CatalogPair>> candidates;
    candidates.reserve(selection.pairs.size());
    for (const ObservedPair& p : selection.pairs) {
        candidates.push_back(db.query_pairs(p.d_m_deg, eps));
    }
    return candidates;
}

AttitudeHistogram::AttitudeHistogram(double fnx, int64_t wrap_steps)
    : fnx_(fnx), wrap_(wrap_steps) {
    ra_span_ = wrap_ + 2;
    roll_span_ = wrap_ + 2;
    dec_offset_ = wrap_ / 4 + 2;  // qdec spans +-(90/fnx); keep packed dec >= 1
}

int64_t AttitudeHistogram::pack(const QuantizedAttitude& q) const {
    return ((q.qdec + dec_offset_) * ra_span_ + (q.qra + 1)) * roll_span_ +
           (q.qroll + 1);
}

QuantizedAttitude AttitudeHistogram::unpack(int64_t key) const {
    QuantizedAttitude q;
    q.qroll = key % roll_span_ - 1;
    int64_t rest = key / roll_span_;
    q.qra = rest % ra_span_ - 1;
    q.qdec = rest / ra_span_ - dec_offset_;
    return q;
}

void AttitudeHistogram::add(const QuantizedAttitude& q, uint32_t pair_slot,
                            uint32_t cand, bool flipped) {
    votes_.push_back({pack(q), pair_slot, cand, flipped});
}

void AttitudeHistogram::finalize() {
    // Stable sort by key: the insertion order is already ascending
    // (pair_slot, cand, flipped), so sorting (key, insertion index) words
    // reproduces a full lexicographic sort of the votes while comparing and
    // moving far less data. Keys are nonnegative and small enough to share a
    // 64-bit word with the index in any realistic grid, which makes the sort
    // a branch-free LSD radix; sub-millidegree fnx grids fall back to a
    // comparison sort.
    size_t n = votes_.size();
    finalized_ = true;
    if (n < 2) return;
    int64_t max_key = 0;
    for (const AttitudeVote& v : votes_) max_key = std::max(max_key, v.key);
    unsigned ib = std::bit_width(n - 1);
    unsigned kb = std::bit_width(static_cast<uint64_t>(max_key));
    std::vector<uint64_t> a(n);
    if (kb + ib <= 64) {
        uint64_t mask = (uint64_t{1} << ib) - 1;
        for (size_t i = 0; i < n; i++) {
            a[i] = (static_cast<uint64_t>(votes_[i].key) << ib) | i;
        }
        std::vector<uint64_t> tmp(n);
        constexpr unsigned kDigit = 11;
        uint32_t count[1 << kDigit];
        for (unsigned shift = 0; shift < kb + ib; shift += kDigit) {
            std::fill(std::begin(count), std::end(count), 0);
            for (uint64_t v : a) count[(v >> shift) & ((1 << kDigit) - 1)]++;
            uint32_t run = 0;
            for (uint32_t& c : count) {
                uint32_t next = run + c;
                c = run;
                run = next;
            }
            for (uint64_t v : a) tmp[count[(v >> shift) & ((1 << kDigit) - 1)]++] = v;
            a.swap(tmp);
        }
        for (uint64_t& v : a) v &= mask;
    } else {
        std::vector<std::pair<int64_t, uint32_t>> order(n);
        for (uint32_t i = 0; i < n; i++) order[i] = {votes_[i].key, i};
        std::sort(order.begin(), order.end());
        for (size_t i = 0; i < n; i++) a[i] = order[i].second;
    }
    std::vector<AttitudeVote> sorted(n);
    for (size_t i = 0; i < n; i++) sorted[i] = votes_[a[i]];
    votes_ = std::move(sorted);
}

namespace {

// Observed-side triad for one vertex order of a pair: the primary ray, the
// pair normal, and their cross product, kept as rows. The accumulation loop
// forms only the two rows of the candidate rotation it actually quantizes,
// so the triad is never materialized as a matrix on the hot path.
struct ObservedTriad {
    bool valid = false;
    Vec3 r0, r1, r2;
};

ObservedTriad make_observed_triad(const Vec3& o1, const Vec3& o2) {
    ObservedTriad t;
    Vec3 cross = o1.cross(o2);
    double n = cross.norm();
    if (n < 1e-8) return t;
    t.r0 = o1;
    t.r1 = cross * (1.0 / n);
    t.r2 = o1.cross(t.r1);
    t.valid = true;
    return t;
}

// Bin boundaries that replace the per-vote inverse trig: round-half-away
// quantization puts the edge between bins k and k+1 at angle (k + 0.5) * fnx,
// so a declination bins by comparing sin(dec) against precomputed boundary
// sines, and an azimuth bins by octant reduction plus a tangent table. A
// uniform grid over the input range narrows each lookup to a short walk,
// which beats both inverse trig and binary search. Built once per
// accumulation. An input landing within rounding error of a boundary may bin
// one step off the trig path; such a vote stays inside the same merged
// neighborhood, so the winner statistics do not move.
struct QuantTables {
    double fnx;
    std::vector<double> sin_edge;  // sin((k + 0.5) fnx), k in [-ktop, ktop)
    std::vector<int32_t> sin_cell;
    int64_t ktop;
    std::vector<double> tan_edge;  // tan((j + 0.5) fnx) below 45 degrees
    std::vector<int32_t> tan_cell;
    int64_t q90 = 0, q180 = 0;
    bool az_exact = false;  // 90 / fnx is an integer, reflections stay on-grid

    explicit QuantTables(double fnx_deg) : fnx(fnx_deg) {
        ktop = static_cast<int64_t>(std::round(90.0 / fnx));
        sin_edge.resize(static_cast<size_t>(2 * ktop));
        for (int64_t j = 0; j < 2 * ktop; j++) {
            double ang = (static_cast<double>(j - ktop) + 0.5) * fnx;
            sin_edge[static_cast<size_t>(j)] = std::sin(ang * kRadPerDeg);
        }
        size_t nsin = std::max<size_t>(256, 2 * sin_edge.size());
        sin_cell.resize(nsin + 1);
        for (size_t c = 0, j = 0; c <= nsin; c++) {
            double lo = 2.0 * static_cast<double>(c) / static_cast<double>(nsin) - 1.0;
            while (j < sin_edge.size() && sin_edge[j] <= lo) j++;
            sin_cell[c] = static_cast<int32_t>(j);
        }
        double steps = 90.0 / fnx;
        az_exact = steps == std::floor(steps);
        if (az_exact) {
            q90 = static_cast<int64_t>(steps);
            q180 = 2 * q90;
            for (int64_t j = 0; (static_cast<double>(j) + 0.5) * fnx < 45.0; j++) {
                tan_edge.push_back(std::tan((static_cast<double>(j) + 0.5) * fnx *
                                            kRadPerDeg));
            }
            size_t ntan = std::max<size_t>(64, 2 * tan_edge.size());
            tan_cell.resize(ntan + 1);
            for (size_t c = 0, j = 0; c <= ntan; c++) {
                double lo = static_cast<double>(c) / static_cast<double>(ntan);
                while (j < tan_edge.size() && tan_edge[j] <= lo) j++;
                tan_cell[c] = static_cast<int32_t>(j);
            }
        }
    }

    int64_t dec_bin(double bz) const {
        size_t nsin = sin_cell.size() - 1;
        int cell = static_cast<int>((bz + 1.0) * 0.5 * static_cast<double>(nsin));
        cell = std::clamp(cell, 0, static_cast<int>(nsin));
        size_t j = static_cast<size_t>(sin_cell[cell]);
        while (j < sin_edge.size() && sin_edge[j] <= bz) j++;
        return static_cast<int64_t>(j) - ktop;
    }

    // round(atan2(y, x) / fnx) in signed grid steps; requires az_exact and
    // (x, y) not both zero.
    int64_t az_bin(double y, double x) const {
        double ax = std::fabs(x), ay = std::fabs(y);
        bool swapped = ay > ax;
        double t = swapped ? ax / ay : ay / ax;
        size_t ntan = tan_cell.size() - 1;
        int cell = static_cast<int>(t * static_cast<double>(ntan));
        cell = std::clamp(cell, 0, static_cast<int>(ntan));
        size_t q = static_cast<size_t>(tan_cell[cell]);
        while (q < tan_edge.size() && tan_edge[q] <= t) q++;
        int64_t u = swapped ? q90 - static_cast<int64_t>(q)
                            : static_cast<int64_t>(q);  // from +x, within [0, 90]
        if (x >= 0.0) return y >= 0.0 ? u : -u;
        return y >= 0.0 ? q180 - u : u - q180;
    }
};

// Quantized Euler extraction for the rotation triad(t)^T * rows(b0, b1, b2).
// Same convention as matrix_to_euler, with the focal-plane basis formed
// arithmetically from the boresight row instead of via trig. Only the
// boresight row and (off the pole) the camera-x row of the product are ever
// formed.
QuantizedAttitude quantize_candidate(const ObservedTriad& t, const Vec3& b0,
                                     const Vec3& b1, const Vec3& b2,
                                     const QuantTables& qt, int64_t wrap) {
    double bx = t.r0.z * b0.x + t.r1.z * b1.x + t.r2.z * b2.x;
    double by = t.r0.z * b0.y + t.r1.z * b1.y + t.r2.z * b2.y;
    double bz = t.r0.z * b0.z + t.r1.z * b1.z + t.r2.z * b2.z;
    double c2 = bx * bx + by * by;
    if (c2 < 1e-24) {
        // Degenerate at the pole; rebuild the full matrix and route through
        // the canonical extraction.
        Mat3 c = Mat3::from_rows(t.r0, t.r1, t.r2).transpose() *
                 Mat3::from_rows(b0, b1, b2);
        return quantize_attitude(matrix_to_euler(c), qt.fnx);
    }
    double x0 = t.r0.x * b0.x + t.r1.x * b1.x + t.r2.x * b2.x;
    double x1 = t.r0.x * b0.y + t.r1.x * b1.y + t.r2.x * b2.y;
    double x2 = t.r0.x * b0.z + t.r1.x * b1.z + t.r2.x * b2.z;
    // east ~ (-by, bx, 0), north ~ (-bz*bx, -bz*by, c2): the documented
    // basis scaled by cos(dec) > 0, which the azimuth binning ignores.
    double ex = -by, ey = bx;
    double nx = -bz * bx, ny = -bz * by, nz = c2;
    double rn = x0 * nx + x1 * ny + x2 * nz;
    double re = x0 * ex + x1 * ey;
    if (qt.az_exact) {
        auto wrap_steps = [wrap](int64_t s) {
            int64_t w = s % wrap;
            if (w < 0) w += wrap;
            return w;
        };
        QuantizedAttitude q;
        q.qdec = qt.dec_bin(bz);
        q.qra = wrap_steps(qt.az_bin(by, bx));
        q.qroll = wrap_steps(qt.az_bin(rn, re));
        return q;
    }
    EulerAngles e;
    e.dec = std::asin(std::clamp(bz, -1.0, 1.0)) * kDegPerRad;
    e.ra = std::atan2(by, bx) * kDegPerRad;
    e.roll = std::atan2(rn, re) * kDegPerRad;
    return quantize_attitude(e, qt.fnx);
}

}  // namespace

AttitudeHistogram accumulate_attitudes(const std::vector<ObservedStar>& stars,
                                       const PairSelection& selection,
                                       const std::vector<std::vector<CatalogPair>>& candidates,
                                       const PairDatabase& db,
                                       const IdentifyParams& params) {
    int64_t wrap = quantize_wrap_steps(params.fnx);
    AttitudeHistogram hist(params.fnx, wrap);
    const auto& cat = db.stars();
    QuantTables qt(params.fnx);

    size_t cap = 0;
    for (const auto& c : candidates) cap += 2 * c.size();
    hist.reserve(cap);

    for (uint32_t slot = 0; slot < selection.pairs.size(); slot++) {
        const ObservedPair& p = selection.pairs[slot];
        const Vec3& o1 = stars[p.i1].unit;
        const Vec3& o2 = stars[p.i2].unit;
        ObservedTriad direct = make_observed_triad(o1, o2);
        ObservedTriad flipped = make_observed_triad(o2, o1);
        if (!direct.valid || !flipped.valid) continue;  // collinear pair

        const auto& cands = candidates[slot];
        for (uint32_t ci = 0; ci < cands.size(); ci++) {
            const Vec3& ca = cat[cands[ci].a].unit;
            const Vec3& cb = cat[cands[ci].b].unit;
            Vec3 cross = ca.cross(cb);
            double n = cross.norm();
            if (n < 1e-8) continue;
            Vec3 rb = cross * (1.0 / n);
            Vec3 crb = ca.cross(rb);
            // Angular distance alone cannot orient the pair, so both vertex
            // assignments vote; the wrong one lands in a scattered bin and
            // is absorbed by the statistics.
            hist.add(quantize_candidate(direct, ca, rb, crb, qt, wrap),
                     slot, ci, false);
            hist.add(quantize_candidate(flipped, ca, rb, crb, qt, wrap),
                     slot, ci, true);
        }
    }
    hist.finalize();
    return hist;
}

namespace {

struct OccupiedBin {
    int64_t key = 0;
    uint32_t raw = 0;
    uint32_t merged = 0;
};

int64_t ring_distance(int64_t a, int64_t b, int64_t wrap) {
    int64_t d = std::abs(a - b);
    return std::min(d, wrap - d);
}

// The distinct packed keys of a bin and its neighborhood: +-1 in dec and +-1
// in ra/roll with modular wraparound. Deduplicated, so rings shorter than 3
// bins collapse correctly.
std::vector<int64_t> neighborhood_keys(const AttitudeHistogram& hist,
                                       const QuantizedAttitude& q) {
    int64_t wrap = hist.wrap_steps();
    auto wrap_pos = [wrap](int64_t v) { return ((v % wrap) + wrap) % wrap; };
    std::vector<int64_t> keys;
    for (int64_t dd : {-1, 0, 1}) {
        for (int64_t dr : {-1, 0, 1}) {
            for (int64_t dl : {-1, 0, 1}) {
                keys.push_back(hist.pack({wrap_pos(q.qra + dr), q.qdec + dd,
                                          wrap_pos(q.qroll + dl)}));
            }
        }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

// Merged counts via ghost padding: a bin at ra step 0 is copied past step
// wrap-1 and vice versa (same for roll), after which every wrapped neighbor
// sits at a constant key offset. Rolls pack at key stride 1, so each
// (dec, ra) neighbor row is up to three adjacent padded entries, and the 27
// probes per bin collapse to 9 short scans driven forward in a single pass
// over the key-sorted bins. Requires wrap >= 3 so the +-1 ring positions
// are distinct.
void merge_counts_fast(const AttitudeHistogram& hist, std::vector<OccupiedBin>& bins) {
    int64_t wrap = hist.wrap_steps();
    struct Padded {
        int64_t key;
        uint32_t raw;
    };
    // bins arrive key-sorted, so only the ring-edge ghosts need sorting;
    // they then merge with the bins in one linear pass. Ghost keys use the
    // pad slots of the packing and can never collide with a real bin.
    std::vector<Padded> ghosts;
    for (const OccupiedBin& b : bins) {
        QuantizedAttitude q = hist.unpack(b.key);
        bool ra_lo = q.qra == 0, ra_hi = q.qra == wrap - 1;
        bool roll_lo = q.qroll == 0, roll_hi = q.qroll == wrap - 1;
        if (!ra_lo && !ra_hi && !roll_lo && !roll_hi) continue;
        int64_t ra_pos[2] = {q.qra, q.qra};
        int64_t roll_pos[2] = {q.qroll, q.qroll};
        int nra = 1, nroll = 1;
        if (ra_hi) ra_pos[nra++] = -1;
        if (ra_lo) ra_pos[nra++] = wrap;
        if (roll_hi) roll_pos[nroll++] = -1;
        if (roll_lo) roll_pos[nroll++] = wrap;
        for (int i = 0; i < nra; i++) {
            for (int j = 0; j < nroll; j++) {
                if (i == 0 && j == 0) continue;  // the bin itself
                ghosts.push_back({hist.pack({ra_pos[i], q.qdec, roll_pos[j]}), b.raw});
            }
        }
    }
    std::sort(ghosts.begin(), ghosts.end(),
              [](const Padded& a, const Padded& b) { return a.key < b.key; });
    std::vector<Padded> padded(bins.size() + ghosts.size());
    {
        size_t bi = 0, gi = 0, k = 0;
        while (bi < bins.size() && gi < ghosts.size()) {
            if (bins[bi].key < ghosts[gi].key) {
                padded[k++] = {bins[bi].key, bins[bi].raw};
                bi++;
            } else {
                padded[k++] = ghosts[gi++];
            }
        }
        for (; bi < bins.size(); bi++) padded[k++] = {bins[bi].key, bins[bi].raw};
        for (; gi < ghosts.size(); gi++) padded[k++] = ghosts[gi];
    }

    int64_t base = hist.pack({0, 0, 0});
    int64_t ra_stride = hist.pack({1, 0, 0}) - base;
    int64_t dec_stride = hist.pack({0, 1, 0}) - base;
    int64_t roll_stride = hist.pack({0, 0, 1}) - base;  // 1: roll is innermost

    int64_t row_start[9];
    int r = 0;
    for (int64_t dd : {-1, 0, 1}) {
        for (int64_t dr : {-1, 0, 1}) {
            row_start[r++] = dd * dec_stride + dr * ra_stride - roll_stride;
        }
    }
    size_t p[9] = {};
    size_t m = padded.size();
    for (OccupiedBin& b : bins) {
        uint32_t sum = 0;
        for (r = 0; r < 9; r++) {
            int64_t want = b.key + row_start[r];
            int64_t last = want + 2 * roll_stride;
            size_t& pi = p[r];
            while (pi < m && padded[pi].key < want) pi++;
            for (size_t q = pi; q < m && padded[q].key <= last; q++) {
                sum += padded[q].raw;
            }
        }
        b.merged = sum;
    }
}

// Reference merge used when the ra/roll ring is too short for the padding
// trick (fnx >= 120 degrees, a configuration of no practical interest).
void merge_counts_small_wrap(const AttitudeHistogram& hist,
                             std::vector<OccupiedBin>& bins) {
    std::map<int64_t, uint32_t> raw;
    for (const OccupiedBin& b : bins) raw[b.key] = b.raw;
    for (OccupiedBin& b : bins) {
        for (int64_t key : neighborhood_keys(hist, hist.unpack(b.key))) {
            auto it = raw.find(key);
            if (it != raw.end()) b.merged += it->second;
        }
    }
}

}  // namespace

WinnerInfo extract_winner(const AttitudeHistogram& hist, const IdentifyParams& params) {
    WinnerInfo w;
    if (hist.empty()) return w;
    const auto& votes = hist.votes();
    int64_t wrap = hist.wrap_steps();

    std::vector<OccupiedBin> bins;
    for (uint32_t i = 0; i < votes.size();) {
        uint32_t j = i;
        while (j < votes.size() && votes[j].key == votes[i].key) j++;
        bins.push_back({votes[i].key, j - i, 0});
        i = j;
    }

    if (!params.merge_neighbors) {
        for (OccupiedBin& b : bins) b.merged = b.raw;
    } else if (wrap >= 3) {
        merge_counts_fast(hist, bins);
    } else {
        merge_counts_small_wrap(hist, bins);
    }

    const OccupiedBin* best = &bins[0];
    for (const OccupiedBin& b : bins) {
        if (b.merged > best->merged ||
            (b.merged == best->merged &&
             (b.raw > best->raw || (b.raw == best->raw && b.key < best->key)))) {
            best = &b;
        }
    }

    w.found = true;
    w.key = hist.unpack(best->key);
    w.score = best->merged;
    w.raw_count = best->raw;

    if (w.score < 2) {
        w.ambiguous = true;
        return w;
    }
    for (const OccupiedBin& b : bins) {
        if (b.key == best->key || b.merged != best->merged) continue;
        QuantizedAttitude q = hist.unpack(b.key);
        bool adjacent = std::abs(q.qdec - w.key.qdec) <= 1 &&
                        ring_distance(q.qra, w.key.qra, wrap) <= 1 &&
                        ring_distance(q.qroll, w.key.qroll, wrap) <= 1;
        if (!adjacent) {
            w.ambiguous = true;
            return w;
        }
    }

    // Collect the votes inside the winning window for correspondence
    // assembly: the winning bin itself, plus its distinct neighbors when
    // merging.
    std::vector<int64_t> keys{best->key};
    if (params.merge_neighbors) keys = neighborhood_keys(hist, w.key);
    for (int64_t key : keys) {
        auto lo = std::lower_bound(votes.begin(), votes.end(), key,
                                   [](const AttitudeVote& v, int64_t k) {
                                       return v.key < k;
                                   });
        for (auto it = lo; it != votes.end() && it->key == key; ++it) {
            w.vote_indices.push_back(static_cast<uint32_t>(it - votes.begin()));
        }
    }
    std::sort(w.vote_indices.begin(), w.vote_indices.end());
    return w;
}

namespace {

// Reprojection tolerance for keeping an assembled match; see the gate in
// assemble_result for how the value was chosen.
constexpr double kResidualGateDeg = 0.3;

// Index of the catalog star carrying this hip id; stars are hip-sorted.
uint32_t catalog_index_of(const std::vector<CatalogStar>& cat, uint32_t hip) {
    auto it = std::lower_bound(cat.begin(), cat.end(), hip,
                               [](const CatalogStar& s, uint32_t h) {
                                   return s.hip < h;
                               });
    return static_cast<uint32_t>(it - cat.begin());
}

std::optional<Mat3> vote_attitude(const AttitudeVote& v,
                                  const std::vector<ObservedStar>& stars,
                                  const PairSelection& selection,
                                  const std::vector<std::vector<CatalogPair>>& candidates,
                                  const PairDatabase& db) {
    const ObservedPair& p = selection.pairs[v.pair_slot];
    const CatalogPair& c = candidates[v.pair_slot][v.cand];
    const auto& cat = db.stars();
    UnitVec3 o1 = UnitVec3::normalize(stars[p.i1].unit);
    UnitVec3 o2 = UnitVec3::normalize(stars[p.i2].unit);
    UnitVec3 ca = UnitVec3::normalize(cat[c.a].unit);
    UnitVec3 cb = UnitVec3::normalize(cat[c.b].unit);
    // flipped votes paired observed (i2, i1) with catalog (a, b)
    return v.flipped ? triad_attitude(ca, cb, o2, o1)
                     : triad_attitude(ca, cb, o1, o2);
}

}  // namespace

IdentificationResult assemble_result(const std::vector<ObservedStar>& stars,
                                     const PairSelection& selection,
                                     const std::vector<std::vector<CatalogPair>>& candidates,
                                     const AttitudeHistogram& hist,
                                     const WinnerInfo& winner,
                                     const PairDatabase& db,
                                     const IdentifyParams& params) {
    IdentificationResult res;
    res.vote_count = winner.score;
    const auto& cat = db.stars();

    // Tally HIP votes per observed star across the winning window.
    std::map<uint32_t, std::map<uint32_t, uint32_t>> tally;  // star -> hip -> votes
    for (uint32_t vi : winner.vote_indices) {
        const AttitudeVote& v = hist.votes()[vi];
        const ObservedPair& p = selection.pairs[v.pair_slot];
        const CatalogPair& c = candidates[v.pair_slot][v.cand];
        uint32_t hip_a = cat[c.a].hip;
        uint32_t hip_b = cat[c.b].hip;
        if (!v.flipped) {
            tally[p.i1][hip_a]++;
            tally[p.i2][hip_b]++;
        } else {
            tally[p.i1][hip_b]++;
            tally[p.i2][hip_a]++;
        }
    }

    struct Claim {
        uint32_t star = 0;
        uint32_t hip = 0;
        uint32_t votes = 0;
        uint32_t runner_up = 0;  // votes for the star's second-place hip
    };
    std::map<uint32_t, Claim> by_hip;  // conflict arbitration per claimed hip
    for (const auto& [star_idx, hips] : tally) {
        Claim c{star_idx, 0, 0, 0};
        for (const auto& [hip, n] : hips) {
            if (n > c.votes) {  // ties keep the lowest hip (map order)
                c.runner_up = c.votes;
                c.hip = hip;
                c.votes = n;
            } else if (n > c.runner_up) {
                c.runner_up = n;
            }
        }
        auto [it, inserted] = by_hip.try_emplace(c.hip, c);
        if (!inserted) {
            // Two observed stars claim one catalog star; the better-supported
            // one keeps it, position breaking exact ties so the outcome does
            // not depend on star order.
            const Claim& held = it->second;
            const ObservedStar& sa = stars[c.star];
            const ObservedStar& sb = stars[held.star];
            bool take = c.votes > held.votes ||
                        (c.votes == held.votes &&
                         (sa.px < sb.px || (sa.px == sb.px && sa.py < sb.py)));
            if (take) it->second = c;
        }
    }

    std::vector<Claim> assigned;
    for (const auto& [hip, c] : by_hip) {
        // A competing hip with two or more votes is structured disagreement
        // (typically an unresolved close catalog pair), not a stray; leave
        // the star out rather than pick a side. This runs after arbitration
        // so a contested star still defends its hip against a weaker claim
        // from a neighboring star before bowing out.
        if (c.runner_up >= 2) continue;
        assigned.push_back(c);
    }
    if (assigned.size() < 2) {
        res.status = IdStatus::insufficient_stars;
        return res;
    }

    // Final attitude from the two best-supported stars. The second anchor
    // additionally needs a decent baseline from the first: a near-collinear
    // anchor pair turns position noise into a large roll error.
    std::vector<Claim> ranked = assigned;
    std::sort(ranked.begin(), ranked.end(), [&](const Claim& a, const Claim& b) {
        if (a.votes != b.votes) return a.votes > b.votes;
        const ObservedStar& sa = stars[a.star];
        const ObservedStar& sb = stars[b.star];
        if (sa.px != sb.px) return sa.px < sb.px;
        if (sa.py != sb.py) return sa.py < sb.py;
        return a.hip < b.hip;
    });
    size_t second = 1;
    for (size_t i = 1; i < ranked.size(); i++) {
        double sep = angular_distance_deg(
            UnitVec3::normalize(stars[ranked[0].star].unit),
            UnitVec3::normalize(stars[ranked[i].star].unit));
        if (sep >= params.min_pair_sep) {
            second = i;
            break;
        }
    }
    std::optional<Mat3> rot = triad_attitude(
        UnitVec3::normalize(cat[catalog_index_of(cat, ranked[0].hip)].unit),
        UnitVec3::normalize(cat[catalog_index_of(cat, ranked[second].hip)].unit),
        UnitVec3::normalize(stars[ranked[0].star].unit),
        UnitVec3::normalize(stars[ranked[second].star].unit));
    if (!rot) {
        // The two most-voted stars can in principle be nearly collinear;
        // fall back to a winning vote's attitude, which exists by
        // construction.
        for (uint32_t vi : winner.vote_indices) {
            rot = vote_attitude(hist.votes()[vi], stars, selection, candidates, db);
            if (rot) break;
        }
    }
    if (!rot) {
        res.status = IdStatus::ambiguous;
        return res;
    }

    // Consistency gate: every kept match must reproject onto its catalog
    // star under the final attitude. Honest matches stay within ~0.15 deg
    // even at heavy noise; a stray vote that slipped into the winning window
    // maps its star roughly a quantization bin away, so 0.3 deg separates
    // the two populations with wide margin on both sides.
    for (const Claim& c : assigned) {
        Vec3 inertial = rot->transpose() * stars[c.star].unit;
        double resid = angular_distance_deg(
            UnitVec3::normalize(inertial),
            UnitVec3::normalize(cat[catalog_index_of(cat, c.hip)].unit));
        if (resid <= kResidualGateDeg) res.matches.emplace_back(c.star, c.hip);
    }
    if (res.matches.size() < 2) {
        res.matches.clear();
        res.status = IdStatus::insufficient_stars;
        return res;
    }
    std::sort(res.matches.begin(), res.matches.end());

    res.rotation = *rot;
    res.attitude = matrix_to_euler(*rot);
    res.status = IdStatus::success;
    return res;
}

IdentificationResult identify(const std::vector<ObservedStar>& stars,
                              const PairDatabase& db, const IdentifyParams& params) {
    auto t0 = std::chrono::steady_clock::now();
    IdentificationResult res;
    auto stamp = [&t0](IdentificationResult& r) {
        r.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
        return r;
    };

    if (stars.size() < 2) {
        res.status = IdStatus::insufficient_stars;
        return stamp(res);
    }
    PairSelection selection = select_pairs(stars, params);
    auto candidates = initial_match(selection, db, params);
    AttitudeHistogram hist =
        accumulate_attitudes(stars, selection, candidates, db, params);
    if (hist.empty()) {
        res.status = IdStatus::no_candidates;
        return stamp(res);
    }
    WinnerInfo winner = extract_winner(hist, params);
    if (!winner.found) {
        res.status = IdStatus::no_candidates;
        return stamp(res);
    }
    if (winner.ambiguous) {
        res.status = IdStatus::ambiguous;
        res.vote_count = winner.score;
        return stamp(res);
    }
    res = assemble_result(stars, selection, candidates, hist, winner, db, params);
    return stamp(res);
}

bool check_success(const IdentificationResult& result,
                   const std::map<uint32_t, uint32_t>& truth) {
    int correct = 0;
    for (const auto& [idx, hip] : result.matches) {
        auto it = truth.find(idx);
        if (it == truth.end()) return false;      // false star matched
        if (it->second != hip) return false;      // real star mismatched
        correct++;
    }
    return correct >= 2;
}

std::string result_to_json(const IdentificationResult& result) {
    nlohmann::json j;
    j["status"] = to_string(result.status);
    if (result.status == IdStatus::success) {
        j["attitude"] = {{"ra_deg", result.attitude.ra},
                         {"dec_deg", result.attitude.dec},
                         {"roll_deg", result.attitude.roll},
                         {"near_pole", result.attitude.near_pole}};
    } else {
        j["attitude"] = nullptr;
    }
    j["vote_count"] = result.vote_count;
    auto matches = nlohmann::json::array();
    for (const auto& [idx, hip] : result.matches) {
        matches.push_back({idx, hip});
    }
    j["matches"] = matches;
    j["elapsed_s"] = result.elapsed_s;
    return j.dump();
}

}  // namespace starid
