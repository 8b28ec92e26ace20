#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"
#include "pchmm/mcecm.hpp"
#include "pchmm/mstep.hpp"
#include "pchmm/params.hpp"
#include "pchmm/sampler.hpp"

namespace pchmm {

struct LambdaGrids {
    VectorXd lambda0;  // ascending
    VectorXd lambda1;  // ascending
};

namespace detail {

inline VectorXd log_spaced(double lo, double hi, int n) {
    VectorXd out(n);
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < n; ++i)
        out[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / (n - 1));
    out[0] = lo;
    out[n - 1] = hi;
    return out;
}

}  // namespace detail

/// Builds the two penalty sequences. lambda0_max is the smallest penalty
/// that zeroes every beta at the intercept-only fit (prox stationarity of
/// the per-subject-scaled Q1 at beta = 0). lambda1_max applies the same
/// unit-step prox zeroing condition to the loading rows at the screened
/// initialization: a row dies in one step when ||b_t - grad_t|| <= pi
/// lambda, so the bound is the largest such prox-target norm under one
/// posterior draw. Both sequences run log-spaced from 0.05 * max to max.
inline LambdaGrids lambda_grid(const LongFormDataset& data, const FitConfig& cfg, int r,
                               int n_lambda = 10) {
    if (n_lambda < 2) throw InvalidParameter("need at least 2 penalty values");
    cfg.validate();
    const double n_scale = static_cast<double>(data.n_subjects);
    const double pi = cfg.penalty.pi;

    // Intercept-only fit, beta = 0.
    ModelParams theta0 = ModelParams::zero(data.n_intervals, data.p(), data.q(), 1);
    theta0.psi_tilde = detail::intercept_only_psi_tilde(data);
    const PosteriorSamples degenerate = detail::degenerate_samples(data.n_groups(), 1);
    const Q1Gradient g0 = q1_gradient(theta0, degenerate, data);
    const double gmax = g0.beta.cwiseAbs().maxCoeff() / n_scale;
    if (!(gmax > 1e-12)) throw DegenerateGradient("fixed-effect gradient vanishes at the null fit");
    const double lambda0_max = gmax / pi;
    const double lambda0_min = 0.05 * lambda0_max;

    // Screened initialization at lambda0_min, then one posterior pass for
    // the loading-row prox targets.
    auto [psi_tilde, beta] = init_fixed_effects(data, lambda0_min, cfg.penalty, cfg.max_mstep);
    ModelParams theta1 = init_theta(psi_tilde, beta, r, data.q(), cfg.screen_random_effects);
    const PosteriorSamples draws =
        sample_all_groups(data, theta1, 500, cfg.burnin, derive_seed(cfg.seed, 0x1A));
    const Q1Gradient g1 = q1_gradient(theta1, draws, data);
    double row_max = 0.0;
    for (int t = 0; t < g1.loadings.rows(); ++t) {
        const VectorXd target =
            theta1.loadings.row(t).transpose() - g1.loadings.row(t).transpose() / n_scale;
        row_max = std::max(row_max, target.norm());
    }
    if (!(row_max > 1e-12)) throw DegenerateGradient("loading gradient vanishes at initialization");
    const double lambda1_max = row_max / pi;

    LambdaGrids grids;
    grids.lambda0 = detail::log_spaced(lambda0_min, lambda0_max, n_lambda);
    grids.lambda1 = detail::log_spaced(0.05 * lambda1_max, lambda1_max, n_lambda);
    return grids;
}

/// BIC-ICQ: 2 (Q1 + Q2) evaluated at the fitted parameters under posterior
/// samples from the minimal-penalty reference model, plus d log N with
/// d = #nonzero beta + #nonzero loading entries + J and N the subject count.
inline double bic_icq(const FitResult& fit, const PosteriorSamples& reference_samples,
                      const LongFormDataset& data) {
    const double q1 = q1_value(fit.params, reference_samples, data);
    // Q2 = -(1/M) sum_m sum_k log phi(alpha_k^m); constant in theta but kept
    // so the criterion is a full likelihood composite.
    const double half_log_2pi = 0.91893853320467274178;
    double q2 = 0.0;
    const int m_draws = reference_samples.sample_size();
    for (const MatrixXd& draws : reference_samples.draws) {
        q2 += 0.5 * draws.squaredNorm() / static_cast<double>(m_draws);
        q2 += half_log_2pi * static_cast<double>(draws.cols());
    }
    long dim = static_cast<long>(fit.params.selected_fixed().size());
    for (int t = 0; t < fit.params.loadings.rows(); ++t)
        for (int c = 0; c < fit.params.loadings.cols(); ++c)
            if (fit.params.loadings(t, c) != 0.0) ++dim;
    dim += fit.params.intervals();
    return 2.0 * (q1 + q2) + static_cast<double>(dim) * std::log(data.n_subjects);
}

struct PathEntry {
    double lambda0 = 0.0;
    double lambda1 = 0.0;
    int stage = 0;  // 1 or 2
    double bic = 0.0;
    FitResult fit;
};

struct SelectionPath {
    std::vector<PathEntry> entries;  // visit order
    int best_index = -1;             // stage-2 BIC minimizer
    int lambda1_opt_index = -1;      // stage-1 winner
    LambdaGrids grids;

    const FitResult& best() const { return entries.at(best_index).fit; }
};

/// Two-stage tuning search with warm starts. Stage 1 holds lambda0 at its
/// minimum and walks lambda1 from min to max; stage 2 holds the stage-1
/// BIC-ICQ winner lambda1_opt and walks lambda0 from min to max. Reference
/// samples for BIC-ICQ come from the first (minimal-penalty) fit only.
inline SelectionPath two_stage_search(const LongFormDataset& data, int r, const FitConfig& cfg,
                                      const LambdaGrids& grids) {
    if (grids.lambda0.size() < 1 || grids.lambda1.size() < 1)
        throw InvalidParameter("empty penalty grid");
    SelectionPath path;
    path.grids = grids;
    path.entries.reserve(grids.lambda0.size() + grids.lambda1.size());
    const double lambda0_min = grids.lambda0[0];

    ModelParams warm;
    bool have_warm = false;
    for (int i = 0; i < grids.lambda1.size(); ++i) {
        PathEntry entry;
        entry.lambda0 = lambda0_min;
        entry.lambda1 = grids.lambda1[i];
        entry.stage = 1;
        entry.fit = fit_mcecm(data, entry.lambda0, entry.lambda1, r, cfg,
                              have_warm ? &warm : nullptr);
        warm = entry.fit.params;
        have_warm = true;
        path.entries.push_back(std::move(entry));
    }
    const PosteriorSamples& reference = path.entries.front().fit.samples_final;
    for (auto& entry : path.entries) entry.bic = bic_icq(entry.fit, reference, data);

    path.lambda1_opt_index = 0;
    for (int i = 1; i < static_cast<int>(path.entries.size()); ++i)
        if (path.entries[i].bic < path.entries[path.lambda1_opt_index].bic)
            path.lambda1_opt_index = i;
    const double lambda1_opt = path.entries[path.lambda1_opt_index].lambda1;

    warm = path.entries[path.lambda1_opt_index].fit.params;
    const int stage2_begin = static_cast<int>(path.entries.size());
    for (int i = 0; i < grids.lambda0.size(); ++i) {
        PathEntry entry;
        entry.lambda0 = grids.lambda0[i];
        entry.lambda1 = lambda1_opt;
        entry.stage = 2;
        entry.fit = fit_mcecm(data, entry.lambda0, entry.lambda1, r, cfg, &warm);
        entry.bic = bic_icq(entry.fit, reference, data);
        warm = entry.fit.params;
        path.entries.push_back(std::move(entry));
    }

    path.best_index = stage2_begin;
    for (int i = stage2_begin; i < static_cast<int>(path.entries.size()); ++i)
        if (path.entries[i].bic < path.entries[path.best_index].bic) path.best_index = i;
    return path;
}

inline SelectionPath two_stage_search(const SurvivalDataset& data, const IntervalGrid& grid, int r,
                                      const FitConfig& cfg, int n_lambda = 10) {
    data.validate();
    const LongFormDataset long_form = expand_long_form(data, grid);
    const LambdaGrids grids = lambda_grid(long_form, cfg, r, n_lambda);
    return two_stage_search(long_form, r, cfg, grids);
}

/// q x K matrix of centered group-specific coefficient estimates used by the
/// Growth Ratio estimator.
struct PseudoEffectsMatrix {
    MatrixXd G;  // q x K, rows centered across groups
};

/// Fits the fixed-effects-only piecewise model to each group alone at a
/// small penalty (0.01 * lambda0_max) and centers the per-group coefficient
/// vectors (interval-1 log hazard acting as the intercept coordinate).
/// Groups lacking events in some interval keep the pooled psi_tilde tail and
/// refit only the intercept and beta.
inline PseudoEffectsMatrix pseudo_random_effects(const SurvivalDataset& data,
                                                 const IntervalGrid& grid, const FitConfig& cfg) {
    data.validate();
    const LongFormDataset pooled = expand_long_form(data, grid);
    const int K = data.n_groups();
    const int q = pooled.q();
    const int J = pooled.n_intervals;

    // Small penalty derived from the pooled null-fit gradient.
    ModelParams theta0 = ModelParams::zero(J, pooled.p(), q, 1);
    theta0.psi_tilde = detail::intercept_only_psi_tilde(pooled);
    const Q1Gradient g0 = q1_gradient(theta0, detail::degenerate_samples(K, 1), pooled);
    const double lambda0_max =
        g0.beta.cwiseAbs().maxCoeff() / (static_cast<double>(pooled.n_subjects) * cfg.penalty.pi);
    const double small_penalty = 0.01 * lambda0_max;
    const VectorXd pooled_psi =
        init_fixed_effects(pooled, small_penalty, cfg.penalty, cfg.max_mstep).first;

    MatrixXd G(q, K);
    for (int k = 0; k < K; ++k) {
        // Single-group slice with covariates restricted to the z columns.
        SurvivalDataset sub;
        sub.group_labels = {"slice"};
        std::vector<int> rows;
        for (int i = 0; i < data.n_subjects(); ++i)
            if (data.group[i] == k) rows.push_back(i);
        const int nk = static_cast<int>(rows.size());
        sub.group.assign(nk, 0);
        sub.time.resize(nk);
        sub.status.resize(nk);
        sub.X.resize(nk, static_cast<long>(pooled.z_cols.size()));
        long events = 0;
        for (int i = 0; i < nk; ++i) {
            sub.time[i] = data.time[rows[i]];
            sub.status[i] = data.status[rows[i]];
            events += data.status[rows[i]];
            for (std::size_t t = 0; t < pooled.z_cols.size(); ++t)
                sub.X(i, static_cast<long>(t)) = data.X(rows[i], pooled.z_cols[t]);
        }
        if (events == 0) throw GroupTooSmall(k);
        const LongFormDataset long_k = expand_long_form(sub, grid);

        VectorXd per_interval_events = VectorXd::Zero(J);
        for (long row = 0; row < long_k.rows(); ++row)
            per_interval_events[long_k.interval[row] - 1] += long_k.death[row];
        const bool full_fit = per_interval_events.minCoeff() > 0.0;

        VectorXd psi_k, beta_k;
        if (full_fit) {
            std::tie(psi_k, beta_k) =
                init_fixed_effects(long_k, small_penalty, cfg.penalty, cfg.max_mstep);
        } else {
            std::tie(psi_k, beta_k) = init_fixed_effects(long_k, small_penalty, cfg.penalty,
                                                         cfg.max_mstep, /*psi_head_only=*/true,
                                                         &pooled_psi);
        }
        G(0, k) = psi_k[0];
        G.block(1, k, q - 1, 1) = beta_k;
    }
    // Center each coefficient across groups.
    const VectorXd row_means = G.rowwise().mean();
    G.colwise() -= row_means;
    return PseudoEffectsMatrix{G};
}

struct GrowthRatioResult {
    VectorXd eigenvalues;    // descending, length min(q, K)
    VectorXd growth_ratios;  // GR(1..U)
    int r_hat = 0;
    int u = 0;
};

/// Growth Ratio sequence from descending eigenvalues mu_j of G G' / (qK):
/// V(j) = sum_{l > j} mu_l, GR(j) = log(1 + mu_j / V(j)) / log(1 + mu_{j+1} / V(j+1)),
/// and r-hat = argmax_{1 <= j <= U} GR(j).
inline GrowthRatioResult growth_ratio_from_eigenvalues(const VectorXd& eigenvalues, int u) {
    const int m = static_cast<int>(eigenvalues.size());
    if (u < 1 || u > m - 2)
        throw InvalidParameter("U must lie in [1, #eigenvalues - 2]");
    for (int j = 1; j < m; ++j)
        if (eigenvalues[j] > eigenvalues[j - 1] + 1e-12)
            throw InvalidParameter("eigenvalues must be sorted descending");

    VectorXd tail_sums(m + 1);  // tail_sums[j] = V(j) = sum_{l >= j+1} mu_l
    tail_sums[m] = 0.0;
    for (int j = m - 1; j >= 0; --j) tail_sums[j] = tail_sums[j + 1] + std::max(eigenvalues[j], 0.0);

    const auto scaled = [&](int j) {  // mu*_j, 1-based j
        const double v = tail_sums[j];
        if (!(v > 0.0)) throw RankDeficient("V(" + std::to_string(j) + ") is zero");
        return std::max(eigenvalues[j - 1], 0.0) / v;
    };

    GrowthRatioResult out;
    out.eigenvalues = eigenvalues;
    out.u = u;
    out.growth_ratios.resize(u);
    for (int j = 1; j <= u; ++j)
        out.growth_ratios[j - 1] = std::log1p(scaled(j)) / std::log1p(scaled(j + 1));
    int best = 0;
    for (int j = 1; j < u; ++j)
        if (out.growth_ratios[j] > out.growth_ratios[best]) best = j;
    out.r_hat = best + 1;
    return out;
}

/// Default U accounts for the rank lost to row centering (rank(G) <= K - 1),
/// capped at 10.
inline int default_growth_ratio_u(int q, int k_groups) {
    const int u = std::min(q, k_groups - 1) - 2;
    return std::clamp(u, 1, 10);
}

inline GrowthRatioResult growth_ratio_r(const MatrixXd& G, int u = -1) {
    const int q = static_cast<int>(G.rows());
    const int k_groups = static_cast<int>(G.cols());
    if (u < 0) u = default_growth_ratio_u(q, k_groups);
    // Squared singular values of G / sqrt(qK); the SVD keeps the small
    // eigenvalues positive where a Gram-matrix eigensolver would round them
    // below zero.
    Eigen::JacobiSVD<MatrixXd> svd(G / std::sqrt(static_cast<double>(q) * k_groups));
    VectorXd eigenvalues = svd.singularValues().array().square();
    return growth_ratio_from_eigenvalues(eigenvalues, u);
}

}  // namespace pchmm
