#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "catalog.hpp"
#include "identify.hpp"
#include "simulate.hpp"

namespace starid {

// Points in the initial Latin-hypercube design and the per-axis resolution
// of the acquisition grid.
inline constexpr int kTuneDesignSize = 10;
inline constexpr int kTuneGridSize = 200;

// Search configuration for the (n_x, N_th) optimizer. Parsed from a
// key = value config file, see parse_tune_config().
struct TuneConfig {
    double nx_min = 0.004;  // degrees
    double nx_max = 0.064;
    int nth_min = 10;
    int nth_max = 120;
    double weight1 = 30.0;  // cost per second of mean frame runtime
    double weight2 = 1.0;   // reward per unit of success rate
    double sigma_px = 3.0;  // noise scenario the cost is evaluated under
    double false_ratio = 0.0;
    std::optional<int> keep_count;
    int frames = 40;            // frames per cost evaluation
    int budget = 60;            // total evaluations, initial design included
    uint64_t seed = 20240601;
    int min_stars = 9;          // benchmark base-frame floor; see cmd_bench
    std::string catalog_path;
    double mag_limit = 6.0;
    double ad_max_deg = 8.0;
    double fnx_deg = 1.0;
    std::string trace_out;      // trace CSV path, empty = do not write
};

// Parses `key = value` lines; '#' starts a comment, blank lines are skipped,
// unknown keys are errors. Throws std::runtime_error with file:line context.
TuneConfig parse_tune_config(const std::string& path);

// One cost evaluation. y = weight1 * runtime_s - weight2 * success, so lower
// is better; runtime_norm additionally reports runtime against the batch's
// zero-noise runtime at default parameters so traces from different machines
// can be compared.
struct TuneEval {
    double n_x = 0.0;
    int n_th = 0;
    double runtime_s = 0.0;     // mean per-frame identify wall time
    double runtime_norm = 0.0;  // runtime_s / ref_runtime_s (0 if no reference)
    double success = 0.0;       // fraction of frames identified correctly
    double y = 0.0;
};

struct TuneTrace {
    std::vector<TuneEval> evals;  // in evaluation order
    std::vector<double> best_y;   // incumbent cost after each evaluation
    double ref_runtime_s = 0.0;   // zero-noise reference used for runtime_norm
};

struct TuneResult {
    double n_x = 0.0;
    int n_th = 0;
    double y = 0.0;
    TuneTrace trace;
};

// Cost oracle the optimizer minimizes. Receives n_x and the already-rounded
// integer N_th and must fill at least y; scenario-backed oracles also fill
// runtime and success.
using CostFn = std::function<TuneEval(double n_x, int n_th)>;

// Everything a cost evaluation needs, built once: the catalog pair list
// (rebinned cheaply for each candidate n_x) and a fixed batch of noisy
// frames generated from the config scenario. Also measures the zero-noise
// reference runtime of the same attitude batch at default parameters.
class TuneContext {
public:
    explicit TuneContext(const TuneConfig& cfg);

    // Throws std::invalid_argument when (n_x, n_th) is outside the bounds.
    TuneEval evaluate(double n_x, int n_th);

    double ref_runtime_s() const { return ref_runtime_s_; }
    const PairDatabase& db() const { return db_; }
    CostFn cost_fn();

private:
    TuneConfig cfg_;
    PairDatabase db_;
    std::vector<std::vector<ObservedStar>> frames_;
    std::vector<std::map<uint32_t, uint32_t>> truths_;
    double ref_runtime_s_ = 0.0;
};

// One-shot form of TuneContext::evaluate for callers holding a context.
TuneEval evaluate_cost(double n_x, int n_th, TuneContext& ctx);

// Gaussian-process regressor over the normalized 2D search box: squared
// exponential kernel with per-dimension length scales, hyperparameters
// picked by log-marginal-likelihood grid search, targets standardized
// internally. fit() throws std::invalid_argument on empty or mismatched
// input.
class GaussianProcess {
public:
    void fit(const std::vector<std::array<double, 2>>& xs,
             const std::vector<double>& ys);

    // Posterior mean and variance at x, in original target units.
    std::pair<double, double> predict(const std::array<double, 2>& x) const;

    // Fitted observation-noise standard deviation in original target units.
    double noise_std() const;

private:
    double kernel(const std::array<double, 2>& a,
                  const std::array<double, 2>& b) const;

    std::vector<std::array<double, 2>> xs_;
    std::vector<double> chol_;   // row-major lower Cholesky factor of K
    std::vector<double> alpha_;  // K^-1 (y - mean), standardized units
    double ell_[2] = {0.3, 0.3};
    double sf2_ = 1.0;
    double sn2_ = 1e-4;
    double y_mean_ = 0.0;
    double y_std_ = 1.0;
};

// Sequential minimizer: Latin-hypercube design of kTuneDesignSize points,
// then expected-improvement proposals from the GP surrogate, maximized over
// a kTuneGridSize^2 grid of cell centers inside the normalized box (so
// proposals are always in bounds). N_th is treated as continuous and rounded
// just before each cost call. Throws std::invalid_argument for unordered
// bounds or budget below the design size.
TuneResult bayes_optimize(const TuneConfig& cfg, const CostFn& cost);

// Builds a TuneContext for cfg, optimizes its cost, fills the normalization
// reference, and writes the trace file when cfg.trace_out is set.
TuneResult run_tuning(const TuneConfig& cfg);

// Trace CSV: '#' header lines echoing the config, then one row per
// evaluation (eval, n_x, n_th, runtime_s, runtime_norm, success, y, best_y).
void write_trace_csv(const std::string& path, const TuneConfig& cfg,
                     const TuneResult& result);

}  // namespace starid
