#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"
#include "pchmm/mcecm.hpp"
#include "pchmm/rng.hpp"
#include "pchmm/selection.hpp"

namespace pchmm {

/// Generative configuration for the piecewise constant hazard mixed-effects
/// process: group-level latent factors, per-interval exponential event-time
/// chaining, and uniform censoring.
struct SimConfig {
    int n_subjects = 1000;
    int n_groups = 5;
    int n_covariates = 100;
    VectorXd beta_true;       // p
    MatrixXd loadings_true;   // (p+1) x r
    VectorXd log_hazard_true; // psi* per simulation interval
    VectorXd sim_cutpoints;   // interior boundaries of the simulation grid
    double censor_max = 5.0;
    std::uint64_t seed = 1;

    int r_true() const { return static_cast<int>(loadings_true.cols()); }

    /// Loading presets on the first six rows (intercept + five covariates).
    /// Columns are supported on disjoint row pairs, so Sigma = B B' has
    /// exactly the advertised nonzero eigenvalues:
    /// "small" -> (1.5, 1.5, 1.0), "moderate" -> (3.38, 3.38, 2.25).
    static MatrixXd loadings_preset(const std::string& name, int p) {
        if (p < 5) throw InvalidParameter("loading presets need at least 5 covariates");
        double pair_a, pair_c;
        if (name == "small") {
            pair_a = std::sqrt(0.75);
            pair_c = std::sqrt(0.5);
        } else if (name == "moderate") {
            pair_a = 1.3;
            pair_c = std::sqrt(1.125);
        } else {
            throw InvalidParameter("unknown loading preset: " + name);
        }
        MatrixXd b = MatrixXd::Zero(p + 1, 3);
        b(0, 0) = b(1, 0) = pair_a;
        b(2, 1) = b(3, 1) = pair_a;
        b(4, 2) = b(5, 2) = pair_c;
        return b;
    }

    static SimConfig paper_default(int p = 100, int k_groups = 5, double beta = 1.0,
                                   const std::string& preset = "moderate",
                                   std::uint64_t seed = 1) {
        SimConfig cfg;
        cfg.n_subjects = 1000;
        cfg.n_groups = k_groups;
        cfg.n_covariates = p;
        cfg.beta_true = VectorXd::Zero(p);
        cfg.beta_true.head(5).setConstant(beta);
        cfg.loadings_true = loadings_preset(preset, p);
        cfg.log_hazard_true.resize(5);
        cfg.log_hazard_true << -1.5, 1.0, 2.7, 3.7, 6.8;
        cfg.sim_cutpoints.resize(4);
        cfg.sim_cutpoints << 0.5, 1.0, 1.5, 2.0;
        cfg.seed = seed;
        return cfg;
    }

    void validate() const {
        if (n_subjects < n_groups || n_groups < 2) throw InvalidParameter("bad sim dimensions");
        if (beta_true.size() != n_covariates) throw DimensionMismatch("beta_true length != p");
        if (loadings_true.rows() != n_covariates + 1)
            throw DimensionMismatch("loadings_true must have p + 1 rows");
        if (log_hazard_true.size() != sim_cutpoints.size() + 1)
            throw DimensionMismatch("psi* length must match the simulation intervals");
        if (!(censor_max > 0.0)) throw InvalidParameter("censor_max must be positive");
    }
};

/// Draws one dataset: standard-normal covariates (standardized), one latent
/// factor vector per group, event times chained through the simulation
/// intervals with rates exp(psi*_j + x'beta* + z'gamma_k), and censoring
/// C ~ Uniform(0, censor_max); y = min(T, C), delta = I(T < C).
inline SurvivalDataset simulate_dataset(const SimConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0x51));
    const int n = cfg.n_subjects, k_groups = cfg.n_groups, p = cfg.n_covariates;
    const int n_sim_intervals = static_cast<int>(cfg.log_hazard_true.size());

    SurvivalDataset data;
    data.group_labels.resize(k_groups);
    for (int k = 0; k < k_groups; ++k) data.group_labels[k] = "g" + std::to_string(k + 1);
    data.group.resize(n);
    for (int i = 0; i < n; ++i)
        data.group[i] = std::min(static_cast<int>(static_cast<long>(i) * k_groups / n), k_groups - 1);
    data.covariate_names.resize(p);
    for (int j = 0; j < p; ++j) data.covariate_names[j] = "x" + std::to_string(j + 1);

    MatrixXd raw(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) raw(i, j) = rng.normal();
    data.X = standardize_covariates(raw, data.centers, data.scales);
    data.standardized = true;

    MatrixXd gamma(k_groups, p + 1);  // group effects B* alpha_k
    for (int k = 0; k < k_groups; ++k) {
        VectorXd alpha(cfg.r_true());
        for (int c = 0; c < alpha.size(); ++c) alpha[c] = rng.normal();
        gamma.row(k) = (cfg.loadings_true * alpha).transpose();
    }

    data.time.resize(n);
    data.status.resize(n);
    for (int i = 0; i < n; ++i) {
        const int k = data.group[i];
        const double eta = data.X.row(i).dot(cfg.beta_true) + gamma(k, 0) +
                           data.X.row(i).dot(gamma.row(k).tail(p));
        double event_time = 0.0;
        for (int j = 0; j < n_sim_intervals; ++j) {
            const double rate = std::exp(cfg.log_hazard_true[j] + eta);
            const double lower = j == 0 ? 0.0 : cfg.sim_cutpoints[j - 1];
            const double e = rng.exponential(rate);
            if (j + 1 == n_sim_intervals || lower + e <= cfg.sim_cutpoints[j]) {
                event_time = lower + e;
                break;
            }
        }
        const double censor_time = cfg.censor_max * rng.uniform();
        data.time[i] = std::min(event_time, censor_time);
        data.status[i] = event_time < censor_time ? 1 : 0;
    }
    return data;
}

struct SelectionMetrics {
    double tp_fixed = 0.0;
    double fp_fixed = 0.0;
    double tp_random = 0.0;
    double fp_random = 0.0;
    double mean_abs_dev = 0.0;
    double frob_std = 0.0;
    double censor_rate = 0.0;
    double runtime_seconds = 0.0;
    bool failed = false;
};

/// Table-style selection metrics against the generating truth. The random
/// intercept counts toward the truth (q* = p* + 1) and is excluded from the
/// false-positive denominator.
inline SelectionMetrics evaluate_selection(const FitResult& fit, const SimConfig& truth) {
    const int p = truth.n_covariates;
    if (fit.params.n_fixed() != p) throw DimensionMismatch("fit p != truth p");
    if (fit.params.q() != p + 1) throw DimensionMismatch("fit q != p + 1");

    std::vector<bool> true_fixed(p, false), true_random(p + 1, false);
    int n_true_fixed = 0, n_true_random = 0;
    for (int l = 0; l < p; ++l)
        if (truth.beta_true[l] != 0.0) {
            true_fixed[l] = true;
            ++n_true_fixed;
        }
    for (int t = 0; t <= p; ++t)
        if (truth.loadings_true.row(t).norm() != 0.0) {
            true_random[t] = true;
            ++n_true_random;
        }

    SelectionMetrics m;
    int tp_f = 0, fp_f = 0, tp_r = 0, fp_r = 0;
    for (int l : fit.selected_fixed) (true_fixed[l] ? tp_f : fp_f)++;
    for (int t : fit.selected_random) {
        if (true_random[t])
            ++tp_r;
        else if (t != 0)  // intercept never counts as a false candidate
            ++fp_r;
    }
    const int false_fixed_candidates = p - n_true_fixed;
    int false_random_candidates = p + 1 - n_true_random;
    if (!true_random[0]) --false_random_candidates;

    m.tp_fixed = n_true_fixed > 0 ? 100.0 * tp_f / n_true_fixed : 100.0;
    m.fp_fixed = false_fixed_candidates > 0 ? 100.0 * fp_f / false_fixed_candidates : 0.0;
    m.tp_random = n_true_random > 0 ? 100.0 * tp_r / n_true_random : 100.0;
    m.fp_random = false_random_candidates > 0 ? 100.0 * fp_r / false_random_candidates : 0.0;

    double dev = 0.0;
    for (int l = 0; l < p; ++l)
        if (true_fixed[l]) dev += std::abs(fit.params.beta[l] - truth.beta_true[l]);
    m.mean_abs_dev = n_true_fixed > 0 ? dev / n_true_fixed : 0.0;

    const MatrixXd sigma_true = truth.loadings_true * truth.loadings_true.transpose();
    const double frob = (fit.sigma_hat - sigma_true).norm();
    m.frob_std = frob / std::max<std::size_t>(1, fit.selected_random.size());
    return m;
}

/// Concordance of a risk score with censored outcomes. Pairs are usable when
/// the earlier subject had an observed event and strictly earlier time; risk
/// ties count one half.
inline double c_index(const VectorXd& risk, const VectorXd& time, const VectorXi& status) {
    const long n = risk.size();
    if (time.size() != n || status.size() != n) throw DimensionMismatch("c_index input lengths");
    double concordant = 0.0;
    long comparable = 0;
    for (long i = 0; i < n; ++i) {
        if (status[i] != 1) continue;
        for (long j = 0; j < n; ++j) {
            if (j == i || !(time[i] < time[j])) continue;
            ++comparable;
            if (risk[i] > risk[j])
                concordant += 1.0;
            else if (risk[i] == risk[j])
                concordant += 0.5;
        }
    }
    if (comparable == 0) throw NoComparablePairs();
    return concordant / static_cast<double>(comparable);
}

struct BenchConfig {
    FitConfig fit;
    int n_lambda = 10;
    int r = 0;          // 0 => estimate via the Growth Ratio
    int threads = 1;
};

struct BenchSummary {
    std::vector<SelectionMetrics> replicates;
    std::vector<std::uint64_t> seeds;
    SelectionMetrics means;      // averages over successful replicates
    double median_runtime_hours = 0.0;
    int n_failed = 0;
};

namespace detail {

inline SelectionMetrics run_one_replicate(const SimConfig& sim, const BenchConfig& bench,
                                          std::uint64_t seed) {
    SimConfig rep_sim = sim;
    rep_sim.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    const SurvivalDataset data = simulate_dataset(rep_sim);
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, bench.fit.intervals);

    FitConfig fit_cfg = bench.fit;
    fit_cfg.seed = derive_seed(seed, 0xF17);
    int r = bench.r;
    if (r <= 0) {
        const PseudoEffectsMatrix pseudo = pseudo_random_effects(data, grid, fit_cfg);
        r = growth_ratio_r(pseudo.G).r_hat;
    }
    const SelectionPath path = two_stage_search(data, grid, r, fit_cfg, bench.n_lambda);

    SelectionMetrics m = evaluate_selection(path.best(), rep_sim);
    m.censor_rate = 1.0 - static_cast<double>(data.n_events()) / data.n_subjects();
    m.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

}  // namespace detail

/// Runs R independent replicates (seeds derived from the master seed) and
/// aggregates Table-style summaries. A failed replicate is recorded and
/// skipped in the averages, not fatal. Replicates may run on several
/// threads; results are identical to the sequential order by construction.
inline BenchSummary run_replicates(const SimConfig& sim, const BenchConfig& bench, int n_replicates) {
    if (n_replicates < 1) throw InvalidParameter("need at least one replicate");
    BenchSummary out;
    out.replicates.resize(n_replicates);
    out.seeds.resize(n_replicates);
    for (int rep = 0; rep < n_replicates; ++rep)
        out.seeds[rep] = derive_seed(sim.seed, 0xBE, static_cast<std::uint64_t>(rep));

    const auto worker_body = [&](int rep) {
        try {
            out.replicates[rep] = detail::run_one_replicate(sim, bench, out.seeds[rep]);
        } catch (const std::exception&) {
            out.replicates[rep].failed = true;
        }
    };

    const int threads = std::max(1, bench.threads);
    if (threads == 1) {
        for (int rep = 0; rep < n_replicates; ++rep) worker_body(rep);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < std::min(threads, n_replicates); ++w)
            pool.emplace_back([&] {
                for (int rep = next.fetch_add(1); rep < n_replicates; rep = next.fetch_add(1))
                    worker_body(rep);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<double> runtimes;
    int ok = 0;
    for (const SelectionMetrics& m : out.replicates) {
        if (m.failed) {
            ++out.n_failed;
            continue;
        }
        ++ok;
        out.means.tp_fixed += m.tp_fixed;
        out.means.fp_fixed += m.fp_fixed;
        out.means.tp_random += m.tp_random;
        out.means.fp_random += m.fp_random;
        out.means.mean_abs_dev += m.mean_abs_dev;
        out.means.frob_std += m.frob_std;
        out.means.censor_rate += m.censor_rate;
        runtimes.push_back(m.runtime_seconds);
    }
    if (ok > 0) {
        out.means.tp_fixed /= ok;
        out.means.fp_fixed /= ok;
        out.means.tp_random /= ok;
        out.means.fp_random /= ok;
        out.means.mean_abs_dev /= ok;
        out.means.frob_std /= ok;
        out.means.censor_rate /= ok;
        std::sort(runtimes.begin(), runtimes.end());
        const std::size_t mid = runtimes.size() / 2;
        const double median = runtimes.size() % 2 == 1
                                  ? runtimes[mid]
                                  : 0.5 * (runtimes[mid - 1] + runtimes[mid]);
        out.median_runtime_hours = median / 3600.0;
    }
    return out;
}

}  // namespace pchmm
