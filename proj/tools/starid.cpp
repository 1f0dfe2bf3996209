// starid: command-line front end for the star-map identification toolkit.
// Subcommands: build-db, simulate, identify, bench, tune. Exit codes:
// 0 = ok (including soft failures such as an unidentifiable frame),
// 1 = internal error, 2 = usage or file error.
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "baseline.hpp"
#include "catalog.hpp"
#include "geometry.hpp"
#include "identify.hpp"
#include "rng.hpp"
#include "simulate.hpp"
#include "tune.hpp"

namespace {

using namespace starid;

// Prints doubles without trailing zero noise so CSV output is stable.
std::string fmt_num(double v, int precision = 10) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

void cmd_build_db(const std::string& catalog_path, double mag_limit, double ad_max,
                  double nx, const std::string& out_path) {
    auto stars = load_catalog(catalog_path, mag_limit);
    PairDatabase db = PairDatabase::build(std::move(stars), nx, ad_max, mag_limit);
    db.save(out_path);
    std::cout << "stars=" << db.stars().size() << " pairs=" << db.pairs().size()
              << " nx=" << fmt_num(db.n_x()) << " ad_max=" << fmt_num(db.ad_max_deg())
              << " mag_limit=" << fmt_num(db.mag_limit()) << " out=" << out_path
              << "\n";
}

void cmd_simulate(const std::string& db_path, const std::string& catalog_path,
                  int count, double sigma, double false_ratio,
                  std::optional<int> keep, uint64_t seed, int min_stars,
                  const std::string& out_dir) {
    std::vector<CatalogStar> stars;
    if (!db_path.empty()) {
        stars = PairDatabase::load(db_path).stars();
    } else if (!catalog_path.empty()) {
        stars = load_catalog(catalog_path, 6.0);
    } else {
        throw std::runtime_error(
            "simulate: give --db or --catalog (or set STARID_CATALOG)");
    }

    std::filesystem::create_directories(out_dir);
    CameraModel cam;
    NoiseSpec noise;
    noise.sigma_px = sigma;
    noise.false_ratio = false_ratio;
    noise.keep_count = keep;
    noise.seed = seed;
    for (int f = 0; f < count; f++) {
        Scene scene = make_benchmark_scene(stars, cam, noise, min_stars, seed,
                                           static_cast<uint64_t>(f));
        std::ostringstream name;
        name << "scene_" << std::setw(4) << std::setfill('0') << f << ".json";
        save_scene(scene, (std::filesystem::path(out_dir) / name.str()).string());
    }
    std::cout << "wrote " << count << " scene(s) to " << out_dir << " (sigma="
              << fmt_num(sigma) << " false=" << fmt_num(false_ratio) << " keep=";
    if (keep) {
        std::cout << *keep;
    } else {
        std::cout << "none";
    }
    std::cout << " seed=" << seed << " min_stars=" << min_stars << ")\n";
}

void cmd_identify(const std::string& db_path, const std::string& scene_path,
                  double nx, int nth, double fnx, double epsilon, bool no_merge,
                  bool as_json) {
    PairDatabase db = PairDatabase::load(db_path);
    Scene scene = load_scene(scene_path);

    IdentifyParams params;
    params.n_x = nx > 0.0 ? nx : db.n_x();
    params.n_th = nth;
    params.fnx = fnx;
    params.epsilon = epsilon;
    params.merge_neighbors = !no_merge;
    params.center_px = scene.camera.cx();
    params.center_py = scene.camera.cy();

    // identify() rejects a parameter/database bin-width mismatch; surface
    // that as a file/usage error (exit 2) rather than an internal one.
    IdentificationResult res = identify(scene.stars, db, params);

    auto truth = scene.truth_map();
    bool have_truth = !truth.empty();
    bool verdict = have_truth && check_success(res, truth);

    if (as_json) {
        nlohmann::json j = nlohmann::json::parse(result_to_json(res));
        if (have_truth) j["verdict"] = verdict;
        std::cout << j.dump() << "\n";
        return;
    }
    std::cout << "status: " << to_string(res.status) << "\n";
    if (res.status == IdStatus::success) {
        std::cout << "attitude: ra=" << fmt_num(res.attitude.ra)
                  << " dec=" << fmt_num(res.attitude.dec)
                  << " roll=" << fmt_num(res.attitude.roll) << "\n";
        std::cout << "votes: " << res.vote_count << "\n";
        std::cout << "matches (" << res.matches.size() << "):";
        for (const auto& [idx, hip] : res.matches) {
            std::cout << " " << idx << "->HIP" << hip;
        }
        std::cout << "\n";
    }
    std::cout << "elapsed_s: " << fmt_num(res.elapsed_s, 6) << "\n";
    if (have_truth) {
        std::cout << "verdict: " << (verdict ? "correct" : "incorrect") << "\n";
    }
}

struct BenchAccum {
    std::vector<double> time_s;
    std::vector<char> ok;
};

void cmd_bench(const std::string& db_path, const std::string& sweep,
               std::vector<double> levels, int frames, uint64_t seed,
               const std::string& method, const std::string& out_path,
               double nx, int nth, int min_stars, int threads) {
    if (levels.empty()) throw std::runtime_error("bench: --levels is empty");
    bool run_proposed = method == "proposed" || method == "both";
    bool run_triangle = method == "triangle" || method == "both";

    PairDatabase db = PairDatabase::load(db_path);
    if (nx > 0.0 && nx != db.n_x()) db = db.rebin(nx);

    IdentifyParams params;
    params.n_x = db.n_x();
    params.n_th = nth;

    TriangleDatabase tdb;
    TriangleParams tparams;
    if (run_triangle) tdb = TriangleDatabase::build(db);

    // All sweeps share one base-frame population: attitudes resampled until
    // at least 9 real stars land on the detector. The missing sweep needs
    // that floor so every keep level down to 3 draws from identical frames,
    // and using the same floor elsewhere keeps levels comparable across
    // sweeps. Frames below 9 stars are the missing sweep's subject matter,
    // not the noise sweeps'.
    if (min_stars < 0) min_stars = 9;
    if (sweep == "missing") {
        for (double lv : levels) {
            if (lv < 0 || lv != std::floor(lv)) {
                throw std::runtime_error(
                    "bench: missing-sweep levels are star counts, got " +
                    fmt_num(lv));
            }
        }
    }

    CameraModel cam;
    std::ostringstream csv;
    csv << "# starid bench\n";
    csv << "# db=" << db_path << " sweep=" << sweep << " frames=" << frames
        << " seed=" << seed << " method=" << method << " nx=" << fmt_num(db.n_x())
        << " nth=" << nth << " min_stars=" << min_stars << " threads=" << threads
        << "\n";
    csv << "# levels=";
    for (size_t i = 0; i < levels.size(); i++) {
        csv << (i ? "," : "") << fmt_num(levels[i]);
    }
    csv << "\n";
    csv << "method,level,frames,success_rate,mean_time_s\n";

    for (double level : levels) {
        NoiseSpec noise;
        noise.seed = seed;
        if (sweep == "sigma") {
            noise.sigma_px = level;
        } else if (sweep == "false") {
            noise.false_ratio = level;
        } else {
            noise.keep_count = static_cast<int>(std::llround(level));
        }

        BenchAccum prop{std::vector<double>(frames, 0.0),
                        std::vector<char>(frames, 0)};
        BenchAccum tri{std::vector<double>(frames, 0.0),
                       std::vector<char>(frames, 0)};

        auto worker = [&](int first, int stride) {
            for (int f = first; f < frames; f += stride) {
                Scene scene = make_benchmark_scene(db.stars(), cam, noise, min_stars,
                                                   seed, static_cast<uint64_t>(f));
                auto truth = scene.truth_map();
                if (run_proposed) {
                    IdentificationResult r = identify(scene.stars, db, params);
                    prop.time_s[f] = r.elapsed_s;
                    prop.ok[f] = check_success(r, truth) ? 1 : 0;
                }
                if (run_triangle) {
                    IdentificationResult r =
                        triangle_identify(scene.stars, tdb, db, tparams);
                    tri.time_s[f] = r.elapsed_s;
                    tri.ok[f] = check_success(r, truth) ? 1 : 0;
                }
            }
        };
        if (threads <= 1) {
            worker(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; t++) pool.emplace_back(worker, t, threads);
            for (auto& t : pool) t.join();
        }

        auto emit = [&](const char* name, const BenchAccum& acc) {
            double rate = 0.0, mean_t = 0.0;
            for (int f = 0; f < frames; f++) {
                rate += acc.ok[f];
                mean_t += acc.time_s[f];
            }
            rate /= frames;
            mean_t /= frames;
            std::ostringstream row;
            row << name << "," << fmt_num(level) << "," << frames << ","
                << fmt_num(rate) << "," << fmt_num(mean_t, 6) << "\n";
            csv << row.str();
            std::cout << row.str();
        };
        if (run_proposed) emit("proposed", prop);
        if (run_triangle) emit("triangle", tri);
    }

    if (!out_path.empty()) {
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot open bench output " + out_path);
        os << csv.str();
        if (!os) throw std::runtime_error("short write to " + out_path);
    }
}

void cmd_tune(const std::string& config_path) {
    TuneConfig cfg = parse_tune_config(config_path);
    if (cfg.trace_out.empty()) cfg.trace_out = "tune_trace.csv";
    TuneResult res = run_tuning(cfg);
    std::cout << "evaluations=" << res.trace.evals.size()
              << " best: n_x=" << fmt_num(res.n_x) << " n_th=" << res.n_th
              << " y=" << fmt_num(res.y) << " trace=" << cfg.trace_out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"star-map identification toolkit"};
    app.require_subcommand(1);

    // build-db
    auto* build = app.add_subcommand("build-db", "build and save the pair database");
    std::string catalog_path, out_path;
    double mag_limit = 6.0, ad_max = 8.0, nx = 0.016;
    build->add_option("--catalog", catalog_path, "catalog CSV")
        ->envname("STARID_CATALOG")
        ->required();
    build->add_option("--mag-limit", mag_limit, "magnitude cutoff");
    build->add_option("--ad-max", ad_max, "maximum pair separation, degrees")
        ->check(CLI::PositiveNumber);
    build->add_option("--nx", nx, "hash bin width, degrees")
        ->check(CLI::PositiveNumber);
    build->add_option("--out", out_path, "output database file")->required();
    build->callback([&] { cmd_build_db(catalog_path, mag_limit, ad_max, nx, out_path); });

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate synthetic scene files");
    std::string sim_db, sim_catalog, sim_out;
    int sim_count = 1, sim_min_stars = 0;
    double sim_sigma = 0.0, sim_false = 0.0;
    int sim_keep = -1;
    uint64_t sim_seed = 1;
    sim->add_option("--db", sim_db, "pair database (stars reused from it)");
    sim->add_option("--catalog", sim_catalog, "catalog CSV (mag limit 6.0)")
        ->envname("STARID_CATALOG");
    sim->add_option("--count", sim_count, "number of scenes")
        ->check(CLI::PositiveNumber);
    sim->add_option("--sigma", sim_sigma, "position noise, pixels")
        ->check(CLI::NonNegativeNumber);
    sim->add_option("--false", sim_false, "false-star ratio")
        ->check(CLI::NonNegativeNumber);
    sim->add_option("--keep", sim_keep, "real stars to keep (-1 = all)");
    sim->add_option("--seed", sim_seed, "rng seed");
    sim->add_option("--min-stars", sim_min_stars,
                    "resample attitudes with fewer real stars");
    sim->add_option("--out", sim_out, "output directory")->required();
    sim->callback([&] {
        std::optional<int> keep;
        if (sim_keep >= 0) keep = sim_keep;
        cmd_simulate(sim_db, sim_catalog, sim_count, sim_sigma, sim_false, keep,
                     sim_seed, sim_min_stars, sim_out);
    });

    // identify
    auto* ident = app.add_subcommand("identify", "identify one scene file");
    std::string id_db, id_scene;
    double id_nx = -1.0, id_fnx = 1.0, id_eps = -1.0;
    int id_nth = 55;
    bool id_json = false, id_no_merge = false;
    ident->add_option("--db", id_db, "pair database")->required();
    ident->add_option("--scene", id_scene, "scene JSON")->required();
    ident->add_option("--nx", id_nx,
                      "hash bin width; must match the database (default: its value)");
    ident->add_option("--nth", id_nth, "max observed pairs used")
        ->check(CLI::PositiveNumber);
    ident->add_option("--fnx", id_fnx, "attitude quantization step, degrees")
        ->check(CLI::PositiveNumber);
    ident->add_option("--epsilon", id_eps, "match tolerance (<=0: use nx)");
    ident->add_flag("--no-merge", id_no_merge, "score without neighbor-bin merging");
    ident->add_flag("--json", id_json, "print the result as one JSON line");
    ident->callback([&] {
        cmd_identify(id_db, id_scene, id_nx, id_nth, id_fnx, id_eps, id_no_merge,
                     id_json);
    });

    // bench
    auto* bench = app.add_subcommand("bench", "noise sweep benchmark");
    std::string bn_db, bn_sweep, bn_method = "both", bn_out;
    std::vector<double> bn_levels;
    int bn_frames = 100, bn_nth = 55, bn_min_stars = -1, bn_threads = 1;
    double bn_nx = -1.0;
    uint64_t bn_seed = 1;
    bench->add_option("--db", bn_db, "pair database")->required();
    bench->add_option("--sweep", bn_sweep, "sweep axis")
        ->check(CLI::IsMember({"sigma", "false", "missing"}))
        ->required();
    bench->add_option("--levels", bn_levels, "sweep levels (comma separated)")
        ->delimiter(',')
        ->required();
    bench->add_option("--frames", bn_frames, "frames per level")
        ->check(CLI::PositiveNumber);
    bench->add_option("--seed", bn_seed, "rng seed");
    bench->add_option("--method", bn_method, "which identifiers to run")
        ->check(CLI::IsMember({"proposed", "triangle", "both"}));
    bench->add_option("--out", bn_out, "write the CSV here as well as stdout");
    bench->add_option("--nx", bn_nx, "rebin the database to this width first");
    bench->add_option("--nth", bn_nth, "max observed pairs used")
        ->check(CLI::PositiveNumber);
    bench->add_option("--min-stars", bn_min_stars,
                      "resample attitudes below this real-star count (default 9)");
    bench->add_option("--threads", bn_threads, "worker threads")
        ->check(CLI::PositiveNumber);
    bench->callback([&] {
        cmd_bench(bn_db, bn_sweep, bn_levels, bn_frames, bn_seed, bn_method, bn_out,
                  bn_nx, bn_nth, bn_min_stars, bn_threads);
    });

    // tune
    auto* tune = app.add_subcommand("tune", "optimize (n_x, N_th) for a scenario");
    std::string tn_config;
    tune->add_option("--config", tn_config, "key=value config file")->required();
    tune->callback([&] { cmd_tune(tn_config); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
