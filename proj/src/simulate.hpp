#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "catalog.hpp"
#include "geometry.hpp"
#include "identify.hpp"
#include "rng.hpp"

namespace starid {

// Pinhole camera, defaults from the reference star tracker: 8-degree
// circular field of view, 95 mm focal length, 2048x2048 detector with
// 6.5 um pixels. The stated FOV and the focal geometry are consistent to
// within 5% (checked in tests, not asserted here).
struct CameraModel {
    double fov_deg = 8.0;
    double focal_mm = 95.0;
    int width_px = 2048;
    int height_px = 2048;
    double pixel_um = 6.5;

    double cx() const { return width_px / 2.0; }
    double cy() const { return height_px / 2.0; }
    double focal_px() const { return focal_mm * 1000.0 / pixel_um; }
};

// Sensor-frame line of sight for a detector position. Total function; the
// caller guards detector bounds where they matter.
UnitVec3 pixel_to_vector(const CameraModel& cam, double px, double py);

// Detector position of a sensor-frame direction, or nullopt for directions
// at or behind the focal plane (z <= 0).
std::optional<std::pair<double, double>> project(const CameraModel& cam,
                                                 const Vec3& sensor_dir);

struct NoiseSpec {
    double sigma_px = 0.0;
    double false_ratio = 0.0;
    std::optional<int> keep_count;
    uint64_t seed = 0;
};

struct TruthStar {
    uint32_t hip = 0;
    double px = 0.0;  // noise-free position
    double py = 0.0;
};

struct SceneTruth {
    EulerAngles attitude;
    std::vector<TruthStar> stars;
    std::vector<std::pair<double, double>> false_px;
};

struct Scene {
    CameraModel camera;
    NoiseSpec noise;
    SceneTruth truth;
    std::vector<ObservedStar> stars;

    size_t real_count() const;
    // Ground-truth map (observed index -> hip) for check_success.
    std::map<uint32_t, uint32_t> truth_map() const;
};

// Projects every catalog star inside the circular FOV (and on the detector)
// under the given attitude. Observed stars come out in catalog order with
// truth labels attached; units are derived from the pixel positions so the
// pipeline sees exactly what the detector reports.
Scene render_scene(const std::vector<CatalogStar>& catalog, const EulerAngles& attitude,
                   const CameraModel& cam);

// In-place scene transforms, each deterministic given its rng. Units are
// re-derived from the transformed pixels.
//  - position noise: independent per-axis Gaussian offsets of sigma pixels;
//  - false stars: round(ratio x real count) extra detections uniform on the
//    detector, appended after the real stars;
//  - dropping: exactly min(keep, current) real stars survive, chosen
//    uniformly; relative order is preserved and indices are rebuilt.
void apply_position_noise(Scene& scene, double sigma_px, Rng& rng);
void add_false_stars(Scene& scene, double false_ratio, Rng& rng);
void drop_stars(Scene& scene, int keep_count, Rng& rng);

// Boresight uniform on the sphere, roll uniform. Draw order: ra, dec, roll.
EulerAngles random_attitude(Rng& rng);

// One deterministic benchmark frame. The attitude substream is resampled
// until the noise-free render holds at least min_stars real stars, then the
// transforms run as drop -> position noise -> false stars. Every transform
// draws from its own per-frame substream, so sweeping one noise knob leaves
// the draws of the others untouched (common random numbers across levels:
// noise offsets scale the same Gaussians, false stars extend a common
// prefix, and smaller keep counts select nested subsets).
Scene make_benchmark_scene(const std::vector<CatalogStar>& catalog,
                           const CameraModel& cam, const NoiseSpec& noise,
                           int min_stars, uint64_t seed, uint64_t frame);

// Scene file round-trip (JSON, format tag "starid-scene/1"). Serialization
// is byte-stable; load re-derives unit vectors and validates the format tag.
// Both throw std::runtime_error on file or format problems.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text, const std::string& origin);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

}  // namespace starid
