#include "simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace starid {

UnitVec3 pixel_to_vector(const CameraModel& cam, double px, double py) {
    return UnitVec3::normalize({px - cam.cx(), py - cam.cy(), cam.focal_px()});
}

std::optional<std::pair<double, double>> project(const CameraModel& cam,
                                                 const Vec3& sensor_dir) {
    if (sensor_dir.z <= 0.0) return std::nullopt;
    double s = cam.focal_px() / sensor_dir.z;
    return std::make_pair(cam.cx() + s * sensor_dir.x, cam.cy() + s * sensor_dir.y);
}

size_t Scene::real_count() const {
    size_t n = 0;
    for (const ObservedStar& s : stars) {
        if (s.truth_hip) n++;
    }
    return n;
}

std::map<uint32_t, uint32_t> Scene::truth_map() const {
    std::map<uint32_t, uint32_t> m;
    for (const ObservedStar& s : stars) {
        if (s.truth_hip) m[s.index] = *s.truth_hip;
    }
    return m;
}

Scene render_scene(const std::vector<CatalogStar>& catalog, const EulerAngles& attitude,
                   const CameraModel& cam) {
    Scene scene;
    scene.camera = cam;
    scene.truth.attitude = attitude;
    Mat3 c = euler_to_matrix(attitude);
    double cos_half_fov = std::cos(0.5 * cam.fov_deg * kRadPerDeg);
    for (const CatalogStar& star : catalog) {
        Vec3 v = c * star.unit;
        if (v.z < cos_half_fov) continue;  // unit vector: z is cos(off-axis)
        auto px = project(cam, v);
        if (!px) continue;
        auto [x, y] = *px;
        if (x < 0.0 || x >= cam.width_px || y < 0.0 || y >= cam.height_px) continue;
        ObservedStar o;
        o.index = static_cast<uint32_t>(scene.stars.size());
        o.px = x;
        o.py = y;
        o.unit = pixel_to_vector(cam, x, y).vec();
        o.truth_hip = star.hip;
        scene.stars.push_back(o);
        scene.truth.stars.push_back({star.hip, x, y});
    }
    return scene;
}

void apply_position_noise(Scene& scene, double sigma_px, Rng& rng) {
    scene.noise.sigma_px = sigma_px;
    for (ObservedStar& s : scene.stars) {
        s.px += sigma_px * rng.gaussian();
        s.py += sigma_px * rng.gaussian();
        s.unit = pixel_to_vector(scene.camera, s.px, s.py).vec();
    }
}

void add_false_stars(Scene& scene, double false_ratio, Rng& rng) {
    scene.noise.false_ratio = false_ratio;
    size_t count = static_cast<size_t>(
        std::llround(false_ratio * static_cast<double>(scene.real_count())));
    for (size_t k = 0; k < count; k++) {
        ObservedStar o;
        o.index = static_cast<uint32_t>(scene.stars.size());
        o.px = rng.uniform() * scene.camera.width_px;
        o.py = rng.uniform() * scene.camera.height_px;
        o.unit = pixel_to_vector(scene.camera, o.px, o.py).vec();
        scene.stars.push_back(o);
        scene.truth.false_px.emplace_back(o.px, o.py);
    }
}

void drop_stars(Scene& scene, int keep_count, Rng& rng) {
    scene.noise.keep_count = keep_count;
    std::vector<uint32_t> real_slots;
    for (uint32_t i = 0; i < scene.stars.size(); i++) {
        if (scene.stars[i].truth_hip) real_slots.push_back(i);
    }
    size_t keep = std::min<size_t>(std::max(keep_count, 0), real_slots.size());

    // Full Fisher-Yates, keep the first `keep` entries: the survivor set for
    // a smaller keep_count is a subset of the set for a larger one under the
    // same rng, and the draw count does not depend on keep_count.
    std::vector<uint32_t> order = real_slots;
    for (size_t i = order.size(); i > 1; i--) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<bool> keep_slot(scene.stars.size(), false);
    for (size_t i = 0; i < keep; i++) keep_slot[order[i]] = true;

    std::vector<ObservedStar> kept;
    std::vector<TruthStar> kept_truth;
    size_t truth_i = 0;
    for (uint32_t i = 0; i < scene.stars.size(); i++) {
        const ObservedStar& s = scene.stars[i];
        bool is_real = s.truth_hip.has_value();
        if (!is_real || keep_slot[i]) {
            ObservedStar o = s;
            o.index = static_cast<uint32_t>(kept.size());
            kept.push_back(o);
            if (is_real) kept_truth.push_back(scene.truth.stars[truth_i]);
        }
        if (is_real) truth_i++;
    }
    scene.stars = std::move(kept);
    scene.truth.stars = std::move(kept_truth);
}

EulerAngles random_attitude(Rng& rng) {
    EulerAngles e;
    e.ra = rng.uniform() * 360.0;
    e.dec = std::asin(2.0 * rng.uniform() - 1.0) * kDegPerRad;
    e.roll = rng.uniform() * 360.0;
    return e;
}

Scene make_benchmark_scene(const std::vector<CatalogStar>& catalog,
                           const CameraModel& cam, const NoiseSpec& noise,
                           int min_stars, uint64_t seed, uint64_t frame) {
    // Substream layout per frame: +0 attitude, +1 position noise, +2 false
    // stars, +3 star dropping. Keep this stable; benchmark comparability
    // across noise levels depends on it.
    Rng att_rng(derive_stream(seed, frame * 4 + 0));
    Scene scene;
    do {
        scene = render_scene(catalog, random_attitude(att_rng), cam);
    } while (scene.real_count() < static_cast<size_t>(std::max(min_stars, 0)));

    if (noise.keep_count) {
        Rng rng(derive_stream(seed, frame * 4 + 3));
        drop_stars(scene, *noise.keep_count, rng);
    }
    if (noise.sigma_px > 0.0) {
        Rng rng(derive_stream(seed, frame * 4 + 1));
        apply_position_noise(scene, noise.sigma_px, rng);
    }
    if (noise.false_ratio > 0.0) {
        Rng rng(derive_stream(seed, frame * 4 + 2));
        add_false_stars(scene, noise.false_ratio, rng);
    }
    scene.noise = noise;
    scene.noise.seed = seed;
    return scene;
}

std::string scene_to_json(const Scene& scene) {
    nlohmann::json j;
    j["format"] = "starid-scene/1";
    j["camera"] = {{"fov_deg", scene.camera.fov_deg},
                   {"focal_mm", scene.camera.focal_mm},
                   {"width_px", scene.camera.width_px},
                   {"height_px", scene.camera.height_px},
                   {"pixel_um", scene.camera.pixel_um}};
    j["noise"] = {{"sigma_px", scene.noise.sigma_px},
                  {"false_ratio", scene.noise.false_ratio},
                  {"keep_count", scene.noise.keep_count
                                     ? nlohmann::json(*scene.noise.keep_count)
                                     : nlohmann::json(nullptr)},
                  {"seed", scene.noise.seed}};
    auto truth_stars = nlohmann::json::array();
    for (const TruthStar& t : scene.truth.stars) {
        truth_stars.push_back({{"hip", t.hip}, {"px", t.px}, {"py", t.py}});
    }
    auto false_px = nlohmann::json::array();
    for (const auto& [x, y] : scene.truth.false_px) {
        false_px.push_back({x, y});
    }
    j["truth"] = {{"attitude",
                   {{"ra_deg", scene.truth.attitude.ra},
                    {"dec_deg", scene.truth.attitude.dec},
                    {"roll_deg", scene.truth.attitude.roll}}},
                  {"stars", truth_stars},
                  {"false_px", false_px}};
    auto stars = nlohmann::json::array();
    for (const ObservedStar& s : scene.stars) {
        stars.push_back({{"index", s.index},
                         {"px", s.px},
                         {"py", s.py},
                         {"hip", s.truth_hip ? nlohmann::json(*s.truth_hip)
                                             : nlohmann::json(nullptr)}});
    }
    j["stars"] = stars;
    return j.dump(1);
}

Scene scene_from_json(const std::string& text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(origin + ": not valid JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "starid-scene/1") {
            throw std::runtime_error(origin + ": unsupported scene format '" +
                                     j.at("format").get<std::string>() + "'");
        }
        Scene scene;
        const auto& cam = j.at("camera");
        scene.camera.fov_deg = cam.at("fov_deg").get<double>();
        scene.camera.focal_mm = cam.at("focal_mm").get<double>();
        scene.camera.width_px = cam.at("width_px").get<int>();
        scene.camera.height_px = cam.at("height_px").get<int>();
        scene.camera.pixel_um = cam.at("pixel_um").get<double>();
        const auto& noise = j.at("noise");
        scene.noise.sigma_px = noise.at("sigma_px").get<double>();
        scene.noise.false_ratio = noise.at("false_ratio").get<double>();
        if (!noise.at("keep_count").is_null()) {
            scene.noise.keep_count = noise.at("keep_count").get<int>();
        }
        scene.noise.seed = noise.at("seed").get<uint64_t>();
        const auto& att = j.at("truth").at("attitude");
        scene.truth.attitude.ra = att.at("ra_deg").get<double>();
        scene.truth.attitude.dec = att.at("dec_deg").get<double>();
        scene.truth.attitude.roll = att.at("roll_deg").get<double>();
        for (const auto& t : j.at("truth").at("stars")) {
            scene.truth.stars.push_back({t.at("hip").get<uint32_t>(),
                                         t.at("px").get<double>(),
                                         t.at("py").get<double>()});
        }
        for (const auto& f : j.at("truth").at("false_px")) {
            scene.truth.false_px.emplace_back(f.at(0).get<double>(),
                                              f.at(1).get<double>());
        }
        for (const auto& s : j.at("stars")) {
            ObservedStar o;
            o.index = s.at("index").get<uint32_t>();
            o.px = s.at("px").get<double>();
            o.py = s.at("py").get<double>();
            if (!s.at("hip").is_null()) o.truth_hip = s.at("hip").get<uint32_t>();
            o.unit = pixel_to_vector(scene.camera, o.px, o.py).vec();
            scene.stars.push_back(o);
        }
        return scene;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(origin + ": malformed scene: " + e.what());
    }
}

void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write scene file " + path);
    }
    os << scene_to_json(scene) << "\n";
    if (!os) {
        throw std::runtime_error("short write to scene file " + path);
    }
}

Scene load_scene(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open scene file " + path);
    }
    std::stringstream buf;
    buf << is.rdbuf();
    return scene_from_json(buf.str(), path);
}

}  // namespace starid
