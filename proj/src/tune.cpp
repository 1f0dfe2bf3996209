#include "tune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "rng.hpp"

namespace starid {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void config_fail(const std::string& path, int line,
                              const std::string& what) {
    throw std::runtime_error("tune config " + path + ":" + std::to_string(line) +
                             ": " + what);
}

double parse_num(const std::string& path, int line, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        config_fail(path, line, "bad numeric value '" + v + "'");
    }
}

int parse_int(const std::string& path, int line, const std::string& v) {
    double x = parse_num(path, line, v);
    if (x != std::floor(x) || std::abs(x) > 1e18) {
        config_fail(path, line, "expected an integer, got '" + v + "'");
    }
    return static_cast<int>(x);
}

}  // namespace

TuneConfig parse_tune_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open tune config " + path);
    TuneConfig cfg;
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        line++;
        size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string s = trim(raw);
        if (s.empty()) continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos) config_fail(path, line, "expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty()) config_fail(path, line, "empty key");
        if (val.empty()) config_fail(path, line, "empty value for '" + key + "'");

        if (key == "catalog") {
            cfg.catalog_path = val;
        } else if (key == "trace_out") {
            cfg.trace_out = val;
        } else if (key == "nx_min") {
            cfg.nx_min = parse_num(path, line, val);
        } else if (key == "nx_max") {
            cfg.nx_max = parse_num(path, line, val);
        } else if (key == "nth_min") {
            cfg.nth_min = parse_int(path, line, val);
        } else if (key == "nth_max") {
            cfg.nth_max = parse_int(path, line, val);
        } else if (key == "weight1") {
            cfg.weight1 = parse_num(path, line, val);
        } else if (key == "weight2") {
            cfg.weight2 = parse_num(path, line, val);
        } else if (key == "sigma_px") {
            cfg.sigma_px = parse_num(path, line, val);
        } else if (key == "false_ratio") {
            cfg.false_ratio = parse_num(path, line, val);
        } else if (key == "keep_count") {
            if (val == "none") {
                cfg.keep_count.reset();
            } else {
                cfg.keep_count = parse_int(path, line, val);
            }
        } else if (key == "frames") {
            cfg.frames = parse_int(path, line, val);
        } else if (key == "budget") {
            cfg.budget = parse_int(path, line, val);
        } else if (key == "seed") {
            double x = parse_num(path, line, val);
            if (x < 0 || x != std::floor(x)) config_fail(path, line, "bad seed");
            cfg.seed = static_cast<uint64_t>(x);
        } else if (key == "min_stars") {
            cfg.min_stars = parse_int(path, line, val);
        } else if (key == "mag_limit") {
            cfg.mag_limit = parse_num(path, line, val);
        } else if (key == "ad_max_deg") {
            cfg.ad_max_deg = parse_num(path, line, val);
        } else if (key == "fnx_deg") {
            cfg.fnx_deg = parse_num(path, line, val);
        } else {
            config_fail(path, line, "unknown key '" + key + "'");
        }
    }
    if (cfg.catalog_path.empty()) {
        throw std::runtime_error("tune config " + path + ": 'catalog' is required");
    }
    return cfg;
}

TuneContext::TuneContext(const TuneConfig& cfg) : cfg_(cfg) {
    if (cfg.frames < 1) throw std::invalid_argument("tune: frames must be >= 1");
    auto stars = load_catalog(cfg.catalog_path, cfg.mag_limit);
    db_ = PairDatabase::build(std::move(stars), IdentifyParams{}.n_x,
                              cfg.ad_max_deg, cfg.mag_limit);

    CameraModel cam;
    NoiseSpec noise;
    noise.sigma_px = cfg.sigma_px;
    noise.false_ratio = cfg.false_ratio;
    noise.keep_count = cfg.keep_count;
    noise.seed = cfg.seed;
    frames_.reserve(cfg.frames);
    truths_.reserve(cfg.frames);
    for (int f = 0; f < cfg.frames; f++) {
        Scene s = make_benchmark_scene(db_.stars(), cam, noise, cfg.min_stars,
                                       cfg.seed, static_cast<uint64_t>(f));
        frames_.push_back(s.stars);
        truths_.push_back(s.truth_map());
    }

    // Zero-noise runtime of the same attitude batch at default parameters;
    // runtime_norm divides by this so traces transfer across machines.
    NoiseSpec zero;
    zero.seed = cfg.seed;
    IdentifyParams ref;
    ref.fnx = cfg.fnx_deg;
    db_ = db_.rebin(ref.n_x);
    double total = 0.0;
    for (int f = 0; f < cfg.frames; f++) {
        Scene s = make_benchmark_scene(db_.stars(), cam, zero, cfg.min_stars,
                                       cfg.seed, static_cast<uint64_t>(f));
        total += identify(s.stars, db_, ref).elapsed_s;
    }
    ref_runtime_s_ = total / cfg.frames;
}

TuneEval TuneContext::evaluate(double n_x, int n_th) {
    if (n_x < cfg_.nx_min || n_x > cfg_.nx_max || n_th < cfg_.nth_min ||
        n_th > cfg_.nth_max) {
        throw std::invalid_argument("tune evaluate: parameters out of bounds");
    }
    db_ = db_.rebin(n_x);
    IdentifyParams p;
    p.n_x = n_x;
    p.n_th = n_th;
    p.fnx = cfg_.fnx_deg;

    double total = 0.0;
    int ok = 0;
    for (size_t f = 0; f < frames_.size(); f++) {
        IdentificationResult r = identify(frames_[f], db_, p);
        total += r.elapsed_s;
        if (check_success(r, truths_[f])) ok++;
    }
    TuneEval e;
    e.n_x = n_x;
    e.n_th = n_th;
    e.runtime_s = total / static_cast<double>(frames_.size());
    e.runtime_norm = ref_runtime_s_ > 0.0 ? e.runtime_s / ref_runtime_s_ : 0.0;
    e.success = static_cast<double>(ok) / static_cast<double>(frames_.size());
    e.y = cfg_.weight1 * e.runtime_s - cfg_.weight2 * e.success;
    return e;
}

CostFn TuneContext::cost_fn() {
    return [this](double n_x, int n_th) { return evaluate(n_x, n_th); };
}

TuneEval evaluate_cost(double n_x, int n_th, TuneContext& ctx) {
    return ctx.evaluate(n_x, n_th);
}

double GaussianProcess::kernel(const std::array<double, 2>& a,
                               const std::array<double, 2>& b) const {
    double d0 = (a[0] - b[0]) / ell_[0];
    double d1 = (a[1] - b[1]) / ell_[1];
    return sf2_ * std::exp(-0.5 * (d0 * d0 + d1 * d1));
}

void GaussianProcess::fit(const std::vector<std::array<double, 2>>& xs,
                          const std::vector<double>& ys) {
    if (xs.empty() || xs.size() != ys.size()) {
        throw std::invalid_argument("GaussianProcess::fit: bad training set");
    }
    const int n = static_cast<int>(xs.size());
    xs_ = xs;

    y_mean_ = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double var = 0.0;
    for (double y : ys) var += (y - y_mean_) * (y - y_mean_);
    y_std_ = std::sqrt(var / n);
    if (y_std_ < 1e-12) y_std_ = 1.0;
    Eigen::VectorXd yv(n);
    for (int i = 0; i < n; i++) yv[i] = (ys[i] - y_mean_) / y_std_;

    // Hyperparameters by log-marginal-likelihood over a small grid; after
    // standardization the amplitude is near 1, so the grids stay coarse.
    static const double kElls[] = {0.05, 0.1, 0.2, 0.4, 0.8};
    static const double kSf2[] = {0.25, 1.0, 4.0};
    static const double kSn2[] = {1e-6, 1e-4, 1e-2};

    double best_lml = -std::numeric_limits<double>::infinity();
    bool found = false;
    Eigen::MatrixXd k(n, n);
    for (double e0 : kElls) {
        for (double e1 : kElls) {
            for (double sf2 : kSf2) {
                for (double sn2 : kSn2) {
                    for (int i = 0; i < n; i++) {
                        for (int j = 0; j <= i; j++) {
                            double d0 = (xs[i][0] - xs[j][0]) / e0;
                            double d1 = (xs[i][1] - xs[j][1]) / e1;
                            double v = sf2 * std::exp(-0.5 * (d0 * d0 + d1 * d1));
                            k(i, j) = v;
                            k(j, i) = v;
                        }
                        k(i, i) += sn2;
                    }
                    Eigen::LLT<Eigen::MatrixXd> llt(k);
                    if (llt.info() != Eigen::Success) continue;
                    Eigen::VectorXd alpha = llt.solve(yv);
                    double logdet = 0.0;
                    for (int i = 0; i < n; i++) logdet += std::log(llt.matrixL()(i, i));
                    double lml = -0.5 * yv.dot(alpha) - logdet -
                                 0.5 * n * std::log(2.0 * std::numbers::pi);
                    if (lml > best_lml) {
                        best_lml = lml;
                        found = true;
                        ell_[0] = e0;
                        ell_[1] = e1;
                        sf2_ = sf2;
                        sn2_ = sn2;
                        alpha_.assign(alpha.data(), alpha.data() + n);
                        chol_.assign(static_cast<size_t>(n) * n, 0.0);
                        Eigen::MatrixXd l = llt.matrixL();
                        for (int i = 0; i < n; i++) {
                            for (int j = 0; j <= i; j++) {
                                chol_[static_cast<size_t>(i) * n + j] = l(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    if (!found) {
        throw std::runtime_error("GaussianProcess::fit: no factorizable kernel");
    }
}

std::pair<double, double> GaussianProcess::predict(
    const std::array<double, 2>& x) const {
    const size_t n = xs_.size();
    if (n == 0) throw std::logic_error("GaussianProcess::predict before fit");
    std::vector<double> ks(n);
    double mean_std = 0.0;
    for (size_t i = 0; i < n; i++) {
        ks[i] = kernel(x, xs_[i]);
        mean_std += ks[i] * alpha_[i];
    }
    // v = L^-1 k* by forward substitution, then var = k(x,x) - v.v
    std::vector<double> v(n);
    for (size_t i = 0; i < n; i++) {
        double s = ks[i];
        for (size_t j = 0; j < i; j++) s -= chol_[i * n + j] * v[j];
        v[i] = s / chol_[i * n + i];
    }
    double var_std = sf2_;
    for (size_t i = 0; i < n; i++) var_std -= v[i] * v[i];
    var_std = std::max(var_std, 0.0);
    return {y_mean_ + y_std_ * mean_std, var_std * y_std_ * y_std_};
}

double GaussianProcess::noise_std() const { return std::sqrt(sn2_) * y_std_; }

namespace {

// Expected improvement for minimization, in original target units.
double expected_improvement(double mean, double var, double best) {
    double sd = std::sqrt(std::max(var, 0.0));
    if (sd < 1e-12) return std::max(best - mean, 0.0);
    double z = (best - mean) / sd;
    double big_phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
    double small_phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return (best - mean) * big_phi + sd * small_phi;
}

}  // namespace

TuneResult bayes_optimize(const TuneConfig& cfg, const CostFn& cost) {
    if (!(cfg.nx_min > 0.0) || !(cfg.nx_min < cfg.nx_max)) {
        throw std::invalid_argument("tune: n_x bounds must satisfy 0 < min < max");
    }
    if (cfg.nth_min < 1 || cfg.nth_min > cfg.nth_max) {
        throw std::invalid_argument("tune: N_th bounds must satisfy 1 <= min <= max");
    }
    if (cfg.budget < kTuneDesignSize) {
        throw std::invalid_argument(
            "tune: budget " + std::to_string(cfg.budget) +
            " is below the initial design size " + std::to_string(kTuneDesignSize));
    }

    Rng rng(derive_stream(cfg.seed, 9001));
    auto to_nx = [&cfg](double u) {
        return cfg.nx_min + u * (cfg.nx_max - cfg.nx_min);
    };
    auto to_nth = [&cfg](double u) {
        double cont = cfg.nth_min + u * (cfg.nth_max - cfg.nth_min);
        long r = std::lround(cont);
        return static_cast<int>(
            std::clamp<long>(r, cfg.nth_min, cfg.nth_max));
    };

    TuneResult out;
    TuneTrace& trace = out.trace;
    std::vector<std::array<double, 2>> xs;
    std::vector<double> ys;
    double best = std::numeric_limits<double>::infinity();
    size_t best_idx = 0;

    auto run_point = [&](const std::array<double, 2>& u) {
        double nx = to_nx(u[0]);
        int nth = to_nth(u[1]);
        TuneEval e = cost(nx, nth);
        e.n_x = nx;
        e.n_th = nth;
        xs.push_back(u);
        ys.push_back(e.y);
        if (e.y < best) {
            best = e.y;
            best_idx = trace.evals.size();
        }
        trace.evals.push_back(e);
        trace.best_y.push_back(best);
    };

    // Latin hypercube: one stratum per design point on each axis, shuffled.
    std::vector<int> strata[2];
    for (auto& s : strata) {
        s.resize(kTuneDesignSize);
        std::iota(s.begin(), s.end(), 0);
        for (int i = kTuneDesignSize - 1; i > 0; i--) {
            int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
            std::swap(s[i], s[static_cast<size_t>(j)]);
        }
    }
    for (int i = 0; i < kTuneDesignSize; i++) {
        std::array<double, 2> u;
        u[0] = (strata[0][i] + rng.uniform()) / kTuneDesignSize;
        u[1] = (strata[1][i] + rng.uniform()) / kTuneDesignSize;
        run_point(u);
    }

    // Sequential expected-improvement proposals on grid-cell centers; ties
    // resolve to the lowest row-major index, so runs are reproducible.
    std::vector<char> used(static_cast<size_t>(kTuneGridSize) * kTuneGridSize, 0);
    while (static_cast<int>(trace.evals.size()) < cfg.budget) {
        GaussianProcess gp;
        gp.fit(xs, ys);
        int best_cell = -1;
        double best_ei = -1.0;
        for (int gi = 0; gi < kTuneGridSize; gi++) {
            double u0 = (gi + 0.5) / kTuneGridSize;
            for (int gj = 0; gj < kTuneGridSize; gj++) {
                int cell = gi * kTuneGridSize + gj;
                if (used[static_cast<size_t>(cell)]) continue;
                double u1 = (gj + 0.5) / kTuneGridSize;
                auto [mean, var] = gp.predict({u0, u1});
                double ei = expected_improvement(mean, var, best);
                if (ei > best_ei) {
                    best_ei = ei;
                    best_cell = cell;
                }
            }
        }
        if (best_cell < 0) break;  // every cell probed; nothing left to try
        used[static_cast<size_t>(best_cell)] = 1;
        double u0 = (best_cell / kTuneGridSize + 0.5) / kTuneGridSize;
        double u1 = (best_cell % kTuneGridSize + 0.5) / kTuneGridSize;
        run_point({u0, u1});
    }

    out.n_x = trace.evals[best_idx].n_x;
    out.n_th = trace.evals[best_idx].n_th;
    out.y = trace.evals[best_idx].y;
    return out;
}

TuneResult run_tuning(const TuneConfig& cfg) {
    TuneContext ctx(cfg);
    TuneResult res = bayes_optimize(cfg, ctx.cost_fn());
    res.trace.ref_runtime_s = ctx.ref_runtime_s();
    if (!cfg.trace_out.empty()) write_trace_csv(cfg.trace_out, cfg, res);
    return res;
}

void write_trace_csv(const std::string& path, const TuneConfig& cfg,
                     const TuneResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open trace file " + path);
    os << std::setprecision(12);
    os << "# starid tune trace\n";
    os << "# scenario: sigma_px=" << cfg.sigma_px << " false_ratio=" << cfg.false_ratio
       << " keep_count=";
    if (cfg.keep_count) {
        os << *cfg.keep_count;
    } else {
        os << "none";
    }
    os << " frames=" << cfg.frames << " min_stars=" << cfg.min_stars << "\n";
    os << "# search: nx=[" << cfg.nx_min << "," << cfg.nx_max << "] nth=["
       << cfg.nth_min << "," << cfg.nth_max << "] budget=" << cfg.budget
       << " seed=" << cfg.seed << "\n";
    os << "# cost: y = weight1*runtime_s - weight2*success, weight1="
       << cfg.weight1 << " weight2=" << cfg.weight2 << "\n";
    os << "# ref_runtime_s=" << result.trace.ref_runtime_s
       << " (zero-noise batch at default parameters; divides runtime_norm)\n";
    os << "# best: n_x=" << result.n_x << " n_th=" << result.n_th
       << " y=" << result.y << "\n";
    os << "eval,n_x,n_th,runtime_s,runtime_norm,success,y,best_y\n";
    for (size_t i = 0; i < result.trace.evals.size(); i++) {
        const TuneEval& e = result.trace.evals[i];
        os << (i + 1) << "," << e.n_x << "," << e.n_th << "," << e.runtime_s << ","
           << e.runtime_norm << "," << e.success << "," << e.y << ","
           << result.trace.best_y[i] << "\n";
    }
    if (!os) throw std::runtime_error("short write to trace file " + path);
}

}  // namespace starid
