#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"
#include "pchmm/params.hpp"
#include "pchmm/rng.hpp"

namespace pchmm {

/// Cached evaluator for the unnormalized log posterior of one group's latent
/// factors: sum over the group's rows of d log(mu) - mu, with
/// log mu = base + W alpha, plus the standard normal log prior on alpha
/// (additive constants dropped).
struct GroupPosterior {
    VectorXd base;   // n_g: offset + v' psi_tilde + x' beta
    MatrixXd W;      // n_g x r: rows are B' z
    VectorXd death;  // n_g

    double log_posterior(const VectorXd& alpha) const {
        const VectorXd lp = base + W * alpha;
        return death.dot(lp) - lp.array().exp().sum() - 0.5 * alpha.squaredNorm();
    }

    double log_posterior(const VectorXd& alpha, VectorXd& grad) const {
        const VectorXd lp = base + W * alpha;
        const VectorXd mu = lp.array().exp();
        grad = W.transpose() * (death - mu) - alpha;
        return death.dot(lp) - mu.sum() - 0.5 * alpha.squaredNorm();
    }
};

inline GroupPosterior make_group_posterior(const LongFormDataset& data, int group,
                                           const ModelParams& params) {
    params.check_dims(data);
    if (group < 0 || group >= data.n_groups()) throw DimensionMismatch("group index out of range");
    const auto [begin, end] = data.group_rows[group];
    const long n = end - begin;
    GroupPosterior gp;
    gp.base.resize(n);
    gp.W.resize(n, params.r());
    gp.death.resize(n);
    for (long row = begin; row < end; ++row) {
        const int i = data.subject[row];
        const int j = data.interval[row];
        double b = data.offset[row] + params.psi_tilde[0];
        if (j > 1) b += params.psi_tilde[j - 1];
        b += data.X.row(i).dot(params.beta);
        gp.base[row - begin] = b;
        gp.death[row - begin] = data.death[row];
        // z = (1, x[z_cols]); W row = B' z
        Eigen::RowVectorXd w = params.loadings.row(0);
        for (std::size_t t = 0; t < data.z_cols.size(); ++t)
            w += data.X(i, data.z_cols[t]) * params.loadings.row(1 + static_cast<int>(t));
        gp.W.row(row - begin) = w;
    }
    return gp;
}

/// Unnormalized log posterior of alpha for one group; optional gradient.
inline double log_posterior_alpha(const VectorXd& alpha, const LongFormDataset& data, int group,
                                  const ModelParams& params, VectorXd* grad = nullptr) {
    if (alpha.size() != params.r()) throw DimensionMismatch("alpha length != factor count");
    const GroupPosterior gp = make_group_posterior(data, group, params);
    if (grad) return gp.log_posterior(alpha, *grad);
    return gp.log_posterior(alpha);
}

/// Random-walk chain state carried across E-steps so chains warm-start and
/// the Robbins-Monro adaptation keeps diminishing over the whole run.
struct ChainState {
    VectorXd alpha;
    VectorXd log_scale;
    long batches_done = 0;

    static ChainState fresh(int r) {
        ChainState s;
        s.alpha = VectorXd::Zero(r);
        s.log_scale = VectorXd::Constant(r, std::log(2.38 / std::sqrt(static_cast<double>(r))));
        return s;
    }
};

struct SamplerConfig {
    int burnin = 250;
    int batch_size = 50;
    double target_accept = 0.44;
};

/// Retained draws of the latent factors, one matrix of size M x r per group.
struct PosteriorSamples {
    std::vector<MatrixXd> draws;  // K entries
    MatrixXd acceptance;          // K x r post-burn-in acceptance rates

    int n_groups() const { return static_cast<int>(draws.size()); }
    int sample_size() const { return draws.empty() ? 0 : static_cast<int>(draws[0].rows()); }

    VectorXd mean(int k) const { return draws[k].colwise().mean(); }
    VectorXd variance(int k) const {
        const VectorXd m = mean(k);
        return (draws[k].rowwise() - m.transpose()).array().square().colwise().mean();
    }
};

namespace detail {

/// Adaptive random-walk Metropolis-within-Gibbs over the r coordinates of
/// alpha. Proposal scales adapt toward the target acceptance rate in batches
/// during burn-in only, so retained draws form a valid Markov chain.
inline MatrixXd run_chain(const GroupPosterior& gp, int m_draws, const SamplerConfig& cfg,
                          std::uint64_t seed, ChainState& state, VectorXd& acceptance) {
    const int r = static_cast<int>(state.alpha.size());
    Rng rng(seed);
    VectorXd alpha = state.alpha;
    VectorXd eta = gp.base + gp.W * alpha;  // log mu at the current state
    double d_dot_eta = gp.death.dot(eta);
    double exp_sum = eta.array().exp().sum();
    double lp = d_dot_eta - exp_sum - 0.5 * alpha.squaredNorm();
    if (!std::isfinite(lp)) throw NonFiniteLogPosterior();

    MatrixXd draws(m_draws, r);
    Eigen::VectorXi batch_accepts = Eigen::VectorXi::Zero(r);
    Eigen::VectorXi kept_accepts = Eigen::VectorXi::Zero(r);
    VectorXd eta_prop(eta.size());
    const int total = cfg.burnin + m_draws;
    for (int iter = 0; iter < total; ++iter) {
        for (int t = 0; t < r; ++t) {
            const double step = std::exp(state.log_scale[t]) * rng.normal();
            const double cand = alpha[t] + step;
            eta_prop = eta + step * gp.W.col(t);
            const double exp_sum_prop = eta_prop.array().exp().sum();
            const double d_dot_prop = d_dot_eta + step * gp.death.dot(gp.W.col(t));
            const double prior = 0.5 * (alpha.squaredNorm() - alpha[t] * alpha[t] + cand * cand);
            const double lp_prop = d_dot_prop - exp_sum_prop - prior;
            const double u = rng.uniform();
            if (std::isfinite(lp_prop) && std::log(1.0 - u) < lp_prop - lp) {
                alpha[t] = cand;
                eta.swap(eta_prop);
                d_dot_eta = d_dot_prop;
                exp_sum = exp_sum_prop;
                lp = lp_prop;
                ++batch_accepts[t];
                if (iter >= cfg.burnin) ++kept_accepts[t];
            }
        }
        if (iter < cfg.burnin && (iter + 1) % cfg.batch_size == 0) {
            ++state.batches_done;
            const double damp = 1.0 / std::sqrt(static_cast<double>(state.batches_done));
            for (int t = 0; t < r; ++t) {
                const double rate =
                    static_cast<double>(batch_accepts[t]) / static_cast<double>(cfg.batch_size);
                state.log_scale[t] += (rate - cfg.target_accept) * damp;
            }
            batch_accepts.setZero();
        }
        if (iter >= cfg.burnin) draws.row(iter - cfg.burnin) = alpha;
    }
    state.alpha = alpha;
    acceptance = kept_accepts.cast<double>() / std::max(1, m_draws);
    return draws;
}

}  // namespace detail

/// Draws M retained posterior samples of alpha for one group after the
/// configured burn-in. Deterministic given the seed; the optional chain
/// state warm-starts the walk and receives the final state back.
inline MatrixXd sample_posterior(const LongFormDataset& data, int group, const ModelParams& params,
                                 int m_draws, int burnin, std::uint64_t seed,
                                 ChainState* state = nullptr, VectorXd* acceptance = nullptr) {
    if (m_draws < 1) throw InvalidParameter("sample size must be positive");
    if (burnin < 0) throw InvalidParameter("burn-in must be nonnegative");
    const GroupPosterior gp = make_group_posterior(data, group, params);
    SamplerConfig cfg;
    cfg.burnin = burnin;
    ChainState local = state ? *state : ChainState::fresh(params.r());
    VectorXd acc;
    MatrixXd draws = detail::run_chain(gp, m_draws, cfg, seed, local, acc);
    if (state) *state = local;
    if (acceptance) *acceptance = acc;
    return draws;
}

/// E-step over all groups, merged in group order. Chains are independent
/// given theta; per-group seeds are derived from (seed, group).
inline PosteriorSamples sample_all_groups(const LongFormDataset& data, const ModelParams& params,
                                          int m_draws, int burnin, std::uint64_t seed,
                                          std::vector<ChainState>* states = nullptr) {
    const int K = data.n_groups();
    if (states && static_cast<int>(states->size()) != K)
        throw DimensionMismatch("chain state count != group count");
    PosteriorSamples out;
    out.draws.resize(K);
    out.acceptance.resize(K, params.r());
    for (int k = 0; k < K; ++k) {
        VectorXd acc;
        ChainState* st = states ? &(*states)[k] : nullptr;
        out.draws[k] = sample_posterior(data, k, params, m_draws, burnin,
                                        derive_seed(seed, 0xE5, static_cast<std::uint64_t>(k)), st,
                                        &acc);
        out.acceptance.row(k) = acc;
    }
    return out;
}

}  // namespace pchmm
