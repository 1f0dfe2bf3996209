#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "catalog.hpp"
#include "geometry.hpp"

namespace starid {

struct ObservedStar {
    uint32_t index = 0;  // position in the scene's star list
    double px = 0.0;
    double py = 0.0;
    Vec3 unit;                          // sensor-frame line of sight
    std::optional<uint32_t> truth_hip;  // simulation label, absent for false stars
};

struct ObservedPair {
    uint32_t i1 = 0;  // observed indices, i1 < i2
    uint32_t i2 = 0;
    double d_m_deg = 0.0;       // measured angular separation
    double centrality_px = 0.0; // mean distance of the two stars from image center
};

struct IdentifyParams {
    double n_x = 0.016;          // hash bin width, degrees
    int n_th = 55;               // cap on observed pairs entering matching
    double fnx = 1.0;            // attitude quantization step, degrees
    double epsilon = -1.0;       // match tolerance, degrees; <= 0 means "use n_x"
    double min_pair_sep = 1.5;   // preferred minimum pair separation, degrees
    bool merge_neighbors = true; // include adjacent attitude bins in the mode score
    double center_px = 1024.0;   // image center for the centrality preference
    double center_py = 1024.0;

    double effective_epsilon() const { return epsilon > 0.0 ? epsilon : n_x; }
};

struct PairSelection {
    std::vector<ObservedPair> pairs;
    bool fallback_used = false;  // some returned pairs are below min_pair_sep
};

// One candidate attitude vote. The attitude matrix is not stored; it is
// cheap to recompute from (pair_slot, cand, flipped) when a winner needs it.
struct AttitudeVote {
    int64_t key = 0;         // packed QuantizedAttitude
    uint32_t pair_slot = 0;  // index into PairSelection::pairs
    uint32_t cand = 0;       // index into that pair's candidate list
    bool flipped = false;    // observed (i2, i1) matched catalog (a, b)
};

class AttitudeHistogram {
public:
    AttitudeHistogram(double fnx, int64_t wrap_steps);

    void add(const QuantizedAttitude& q, uint32_t pair_slot, uint32_t cand,
             bool flipped);
    void reserve(size_t n) { votes_.reserve(n); }
    // Sorts votes by key; add() is not allowed afterwards. Votes sharing a
    // key keep their insertion order, which is ascending (pair_slot, cand,
    // flipped) by construction.
    void finalize();

    bool empty() const { return votes_.empty(); }
    size_t total() const { return votes_.size(); }
    const std::vector<AttitudeVote>& votes() const { return votes_; }
    double fnx() const { return fnx_; }
    int64_t wrap_steps() const { return wrap_; }

    int64_t pack(const QuantizedAttitude& q) const;
    QuantizedAttitude unpack(int64_t key) const;

private:
    std::vector<AttitudeVote> votes_;
    double fnx_;
    int64_t wrap_;        // ra/roll steps per revolution
    int64_t ra_span_;     // padded strides for packing
    int64_t roll_span_;
    int64_t dec_offset_;
    bool finalized_ = false;
};

struct WinnerInfo {
    bool found = false;      // false iff the histogram was empty
    bool ambiguous = false;  // tie with a non-adjacent bin, or score < 2
    QuantizedAttitude key;
    uint32_t score = 0;      // merged frequency when merging, raw otherwise
    uint32_t raw_count = 0;  // votes exactly in the winning bin
    std::vector<uint32_t> vote_indices;  // histogram votes inside the winning window
};

enum class IdStatus {
    success,
    ambiguous,
    insufficient_stars,
    no_candidates,
};

const char* to_string(IdStatus s);

struct IdentificationResult {
    IdStatus status = IdStatus::insufficient_stars;
    EulerAngles attitude;      // valid only on success
    Mat3 rotation;             // inertial -> sensor, valid only on success
    uint32_t vote_count = 0;   // winning frequency (merged when merging is on)
    std::vector<std::pair<uint32_t, uint32_t>> matches;  // (observed index, hip)
    double elapsed_s = 0.0;
};

// Forms all observed pairs and orders them by the selection preferences:
// pairs separated by at least min_pair_sep first (ascending separation, then
// ascending centrality), closer pairs only as fallback (descending
// separation), capped at n_th. Fewer than 2 stars yields an empty selection.
PairSelection select_pairs(const std::vector<ObservedStar>& stars,
                           const IdentifyParams& params);

// Hash lookup of catalog candidates for each selected pair (distance within
// effective_epsilon). Throws std::runtime_error if the database was built
// with a different n_x than params requests.
std::vector<std::vector<CatalogPair>> initial_match(const PairSelection& selection,
                                                    const PairDatabase& db,
                                                    const IdentifyParams& params);

// Solves TRIAD for every (observed pair, catalog candidate) under both vertex
// assignments, quantizes each resulting attitude, and returns the finalized
// vote histogram. Collinear TRIAD failures are skipped.
AttitudeHistogram accumulate_attitudes(const std::vector<ObservedStar>& stars,
                                       const PairSelection& selection,
                                       const std::vector<std::vector<CatalogPair>>& candidates,
                                       const PairDatabase& db,
                                       const IdentifyParams& params);

// Picks the modal quantized attitude. With merging enabled a bin's score
// includes its 26 neighbors (ra/roll wrap around); the reported winner is the
// center bin. Ties between non-adjacent bins mark the result ambiguous; a
// winning score below 2 is also ambiguous.
WinnerInfo extract_winner(const AttitudeHistogram& hist, const IdentifyParams& params);

// Turns the winning votes into star correspondences: majority HIP per
// observed star, duplicate-HIP conflicts resolved by vote count (loser left
// unassigned), final attitude recomputed by TRIAD on the two most-voted
// stars (preferring a second anchor at least min_pair_sep away). Two hygiene
// rules keep contaminated assignments out: a star whose runner-up HIP drew 2+
// votes is left unassigned (close catalog pairs produce such splits, and
// picking a side is a guess), and matches that do not reproject onto their
// catalog star within 0.3 degrees under the final attitude are dropped.
// Fewer than 2 assigned stars fails with insufficient_stars.
IdentificationResult assemble_result(const std::vector<ObservedStar>& stars,
                                     const PairSelection& selection,
                                     const std::vector<std::vector<CatalogPair>>& candidates,
                                     const AttitudeHistogram& hist,
                                     const WinnerInfo& winner,
                                     const PairDatabase& db,
                                     const IdentifyParams& params);

// The full pipeline. Failed stages map to a failed status on the result;
// only programming errors (parameter mismatch) throw.
IdentificationResult identify(const std::vector<ObservedStar>& stars,
                              const PairDatabase& db, const IdentifyParams& params);

// Strict success test: at least two real stars matched to their true HIP,
// no false star matched, no real star matched to a wrong HIP.
bool check_success(const IdentificationResult& result,
                   const std::map<uint32_t, uint32_t>& truth);

// One-line JSON record of a result, the stable per-frame output schema.
std::string result_to_json(const IdentificationResult& result);

}  // namespace starid
