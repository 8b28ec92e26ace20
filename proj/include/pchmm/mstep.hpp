#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"
#include "pchmm/params.hpp"
#include "pchmm/penalty.hpp"
#include "pchmm/sampler.hpp"

namespace pchmm {

namespace detail {

/// Shared scratch for Q1 evaluations. All sample-dependent factors are
/// per-subject (the latent contribution does not vary across a subject's
/// interval rows), so the expensive N x M passes are taken only when the
/// loading matrix changes.
struct QWorkspace {
    const LongFormDataset& data;
    const PosteriorSamples& samples;
    int n, p, q, r, m;
    MatrixXd xz;                                   // N x (q-1)
    std::vector<std::vector<int>> group_subjects;  // subject ids per group
    MatrixXd abar;                                 // K x r sample means

    // Loading-dependent caches, indexed by subject.
    MatrixXd w_subj;                // N x r:  B' z_i
    VectorXd e0;                    // N:      mean_m exp(w_i' alpha_m)
    MatrixXd e1;                    // N x r:  mean_m exp(w_i' alpha_m) alpha_m
    VectorXd walpha_subj;           // N:      w_i' abar_{g(i)}
    std::vector<MatrixXd> exp_u;    // per group: exp(W_g A_g'), n_k x M

    QWorkspace(const LongFormDataset& d, const PosteriorSamples& s)
        : data(d), samples(s), n(d.n_subjects), p(d.p()), q(d.q()), r(0), m(s.sample_size()) {
        if (s.n_groups() != d.n_groups())
            throw DimensionMismatch("sample group count != data group count");
        r = s.draws.empty() ? 0 : static_cast<int>(s.draws[0].cols());
        xz.resize(n, q - 1);
        for (int t = 0; t + 1 < q; ++t) xz.col(t) = d.X.col(d.z_cols[t]);
        group_subjects.resize(d.n_groups());
        std::vector<char> seen(n, 0);
        for (long row = 0; row < d.rows(); ++row) {
            const int i = d.subject[row];
            if (!seen[i]) {
                seen[i] = 1;
                group_subjects[d.group[row]].push_back(i);
            }
        }
        abar.resize(d.n_groups(), r);
        for (int k = 0; k < d.n_groups(); ++k) abar.row(k) = s.draws[k].colwise().mean();
    }

    /// Computes e0 and w' abar for the given loadings; one N x M exp pass.
    /// The per-group exp matrices are retained so e1 can be formed later by
    /// a plain matrix product.
    void latent_terms(const MatrixXd& loadings, MatrixXd& w_out, VectorXd& e0_out,
                      VectorXd& walpha_out, std::vector<MatrixXd>& exp_u_out) const {
        w_out = MatrixXd::Ones(n, 1) * loadings.row(0);
        w_out.noalias() += xz * loadings.bottomRows(q - 1);
        e0_out.resize(n);
        walpha_out.resize(n);
        exp_u_out.resize(data.n_groups());
        for (int k = 0; k < data.n_groups(); ++k) {
            const auto& subjects = group_subjects[k];
            if (subjects.empty()) continue;
            MatrixXd wg(static_cast<long>(subjects.size()), r);
            for (std::size_t s = 0; s < subjects.size(); ++s) wg.row(s) = w_out.row(subjects[s]);
            exp_u_out[k] = (wg * samples.draws[k].transpose()).array().exp();  // n_k x M
            const VectorXd row_mean = exp_u_out[k].rowwise().mean();
            for (std::size_t s = 0; s < subjects.size(); ++s) {
                const int i = subjects[s];
                e0_out[i] = row_mean[s];
                walpha_out[i] = w_out.row(i).dot(abar.row(k));
            }
        }
    }

    /// e1 from retained exp matrices (no exp pass).
    void e1_from_exp_u(const std::vector<MatrixXd>& exp_u_in, MatrixXd& e1_out) const {
        e1_out.resize(n, r);
        for (int k = 0; k < data.n_groups(); ++k) {
            const auto& subjects = group_subjects[k];
            if (subjects.empty()) continue;
            const MatrixXd s1 = exp_u_in[k] * samples.draws[k] / static_cast<double>(m);
            for (std::size_t s = 0; s < subjects.size(); ++s)
                e1_out.row(subjects[s]) = s1.row(s);
        }
    }

    void rebuild_loading_cache(const MatrixXd& loadings) {
        latent_terms(loadings, w_subj, e0, walpha_subj, exp_u);
        e1_from_exp_u(exp_u, e1);
    }

    /// Q1 (unscaled sum) for the given psi_tilde and per-subject linear
    /// predictor xb, using per-subject latent caches. O(L).
    double q1(const VectorXd& psi_tilde, const VectorXd& xb, const VectorXd& e0_in,
              const VectorXd& walpha_in) const {
        double acc = 0.0;
        for (long row = 0; row < data.rows(); ++row) {
            const int i = data.subject[row];
            const int j = data.interval[row];
            double base = data.offset[row] + psi_tilde[0] + xb[i];
            if (j > 1) base += psi_tilde[j - 1];
            acc -= data.death[row] * (base + walpha_in[i]);
            acc += std::exp(base) * e0_in[i];
        }
        return acc;
    }

    /// Residual pass: accumulates the unscaled gradient pieces shared by all
    /// blocks. rho = d - exp(base) e0; bexp_i = sum over subject rows of
    /// exp(base).
    void residuals(const VectorXd& psi_tilde, const VectorXd& xb, VectorXd& grad_psi,
                   VectorXd& rho_subj, VectorXd& bexp_subj) const {
        const int J = data.n_intervals;
        grad_psi = VectorXd::Zero(J);
        rho_subj = VectorXd::Zero(n);
        bexp_subj = VectorXd::Zero(n);
        for (long row = 0; row < data.rows(); ++row) {
            const int i = data.subject[row];
            const int j = data.interval[row];
            double base = data.offset[row] + psi_tilde[0] + xb[i];
            if (j > 1) base += psi_tilde[j - 1];
            const double mu = std::exp(base) * e0[i];
            const double rho = data.death[row] - mu;
            grad_psi[0] -= rho;
            if (j > 1) grad_psi[j - 1] -= rho;
            rho_subj[i] += rho;
            bexp_subj[i] += std::exp(base);
        }
    }
};

}  // namespace detail

/// Monte Carlo Q1: -(1/M) sum_m sum_rows [d log mu - mu] with
/// log mu = log t* + v' psi_tilde + x' beta + z' B alpha_m.
inline double q1_value(const ModelParams& params, const PosteriorSamples& samples,
                       const LongFormDataset& data) {
    params.check_dims(data);
    detail::QWorkspace ws(data, samples);
    if (ws.r != params.r()) throw DimensionMismatch("sample factor count != loading columns");
    ws.rebuild_loading_cache(params.loadings);
    const VectorXd xb = data.X * params.beta;
    return ws.q1(params.psi_tilde, xb, ws.e0, ws.walpha_subj);
}

struct Q1Gradient {
    double value = 0.0;
    VectorXd psi_tilde;
    VectorXd beta;
    MatrixXd loadings;
};

/// Q1 with its analytic gradient in (psi_tilde, beta, B), unscaled.
inline Q1Gradient q1_gradient(const ModelParams& params, const PosteriorSamples& samples,
                              const LongFormDataset& data) {
    params.check_dims(data);
    detail::QWorkspace ws(data, samples);
    if (ws.r != params.r()) throw DimensionMismatch("sample factor count != loading columns");
    ws.rebuild_loading_cache(params.loadings);
    const VectorXd xb = data.X * params.beta;

    Q1Gradient out;
    out.value = ws.q1(params.psi_tilde, xb, ws.e0, ws.walpha_subj);
    VectorXd rho_subj, bexp_subj;
    ws.residuals(params.psi_tilde, xb, out.psi_tilde, rho_subj, bexp_subj);
    out.beta = -(data.X.transpose() * rho_subj);

    // Per-subject latent residual rows: delta_i abar_g - bexp_i e1_i.
    MatrixXd r_subj(ws.n, ws.r);
    VectorXd delta = VectorXd::Zero(ws.n);
    for (long row = 0; row < data.rows(); ++row) delta[data.subject[row]] += data.death[row];
    for (int k = 0; k < data.n_groups(); ++k)
        for (int i : ws.group_subjects[k])
            r_subj.row(i) = delta[i] * ws.abar.row(k) - bexp_subj[i] * ws.e1.row(i);
    out.loadings.resize(ws.q, ws.r);
    out.loadings.row(0) = -r_subj.colwise().sum();
    out.loadings.bottomRows(ws.q - 1) = -(ws.xz.transpose() * r_subj);
    return out;
}

struct MStepOptions {
    double lambda0 = 0.0;
    double lambda1 = 0.0;
    PenaltyConfig penalty;
    double step_init = 1.0;
    int max_iter = 50;
    double tol = 1e-4;
    bool pin_loadings = false;         // keep B fixed (fixed-effects-only fits)
    bool penalize_intercept_row = true;
    bool psi_head_only = false;        // update only psi_tilde_1, freeze the rest
};

struct MStepState {
    ModelParams params;
    double step_size = 1.0;
    std::vector<double> objective_trace;  // penalized, per-subject scale
    int iterations = 0;
    bool converged = false;
};

/// One M-step: cyclic conditional proximal-gradient updates of psi_tilde
/// (unpenalized), beta (scalar penalty lambda0), and the rows of B (grouped
/// penalty lambda1), each backtracked against the quadratic majorization of
/// the per-subject-scaled Q1. The step size halves until the majorization
/// holds and decays by 0.95 after any iteration that required halving.
inline MStepState mstep(const ModelParams& init, const PosteriorSamples& samples,
                        const LongFormDataset& data, const MStepOptions& opt) {
    init.check_dims(data);
    opt.penalty.validate();
    if (!(opt.step_init > 0.0)) throw InvalidParameter("initial step size must be positive");
    if (opt.lambda0 < 0.0 || opt.lambda1 < 0.0) throw InvalidParameter("penalties must be >= 0");

    detail::QWorkspace ws(data, samples);
    if (ws.r != init.r()) throw DimensionMismatch("sample factor count != loading columns");
    const double n_scale = static_cast<double>(data.n_subjects);

    MStepState st;
    st.params = init;
    st.step_size = opt.step_init;
    ModelParams& th = st.params;
    ws.rebuild_loading_cache(th.loadings);
    VectorXd xb = data.X * th.beta;

    const auto penalty_total = [&](const ModelParams& par) {
        double pen = 0.0;
        for (int l = 0; l < par.beta.size(); ++l)
            pen += opt.lambda0 == 0.0
                       ? 0.0
                       : penalty_value(opt.penalty, std::abs(par.beta[l]), opt.lambda0);
        if (!opt.pin_loadings && opt.lambda1 > 0.0) {
            for (int t = 0; t < par.loadings.rows(); ++t) {
                if (t == 0 && !opt.penalize_intercept_row) continue;
                pen += penalty_value(opt.penalty, par.loadings.row(t).norm(), opt.lambda1);
            }
        }
        return pen;
    };

    double q1_cur = ws.q1(th.psi_tilde, xb, ws.e0, ws.walpha_subj) / n_scale;
    if (!std::isfinite(q1_cur)) throw NonFiniteObjective();
    st.objective_trace.push_back(q1_cur + penalty_total(th));

    const double underflow = 1e-10;
    // Majorization test with a roundoff allowance.
    const auto accepts = [](double f_new, double f_old, double inner, double sqnorm, double c) {
        const double rhs = f_old + inner + sqnorm / (2.0 * c);
        return std::isfinite(f_new) && f_new <= rhs + 1e-12 * (1.0 + std::abs(f_old));
    };

    for (int iter = 0; iter < opt.max_iter; ++iter) {
        bool halved = false;
        double max_change = 0.0;

        VectorXd grad_psi, rho_subj, bexp_subj;
        ws.residuals(th.psi_tilde, xb, grad_psi, rho_subj, bexp_subj);
        grad_psi /= n_scale;
        if (opt.psi_head_only) grad_psi.tail(grad_psi.size() - 1).setZero();

        // psi block (unpenalized).
        {
            VectorXd cand;
            double f_new = 0.0;
            while (true) {
                cand = th.psi_tilde - st.step_size * grad_psi;
                const VectorXd diff = cand - th.psi_tilde;
                f_new = ws.q1(cand, xb, ws.e0, ws.walpha_subj) / n_scale;
                if (accepts(f_new, q1_cur, grad_psi.dot(diff), diff.squaredNorm(), st.step_size))
                    break;
                st.step_size *= 0.5;
                halved = true;
                if (st.step_size < underflow) throw StepSizeUnderflow(st.step_size);
            }
            max_change = std::max(max_change, (cand - th.psi_tilde).cwiseAbs().maxCoeff());
            th.psi_tilde = cand;
            q1_cur = f_new;
        }

        // beta block.
        {
            ws.residuals(th.psi_tilde, xb, grad_psi, rho_subj, bexp_subj);
            const VectorXd grad_beta = -(data.X.transpose() * rho_subj) / n_scale;
            VectorXd cand(th.beta.size());
            double f_new = 0.0;
            while (true) {
                for (int l = 0; l < th.beta.size(); ++l)
                    cand[l] = prox_scalar(opt.penalty, th.beta[l] - st.step_size * grad_beta[l],
                                          st.step_size, opt.lambda0);
                const VectorXd diff = cand - th.beta;
                const VectorXd xb_cand = data.X * cand;
                f_new = ws.q1(th.psi_tilde, xb_cand, ws.e0, ws.walpha_subj) / n_scale;
                if (accepts(f_new, q1_cur, grad_beta.dot(diff), diff.squaredNorm(), st.step_size)) {
                    xb = xb_cand;
                    break;
                }
                st.step_size *= 0.5;
                halved = true;
                if (st.step_size < underflow) throw StepSizeUnderflow(st.step_size);
            }
            max_change = std::max(max_change, (cand - th.beta).cwiseAbs().maxCoeff());
            th.beta = cand;
            q1_cur = f_new;
        }

        // loading rows block.
        if (!opt.pin_loadings) {
            ws.residuals(th.psi_tilde, xb, grad_psi, rho_subj, bexp_subj);
            VectorXd delta = VectorXd::Zero(ws.n);
            for (long row = 0; row < data.rows(); ++row)
                delta[data.subject[row]] += data.death[row];
            MatrixXd r_subj(ws.n, ws.r);
            for (int k = 0; k < data.n_groups(); ++k)
                for (int i : ws.group_subjects[k])
                    r_subj.row(i) = delta[i] * ws.abar.row(k) - bexp_subj[i] * ws.e1.row(i);
            MatrixXd grad_b(ws.q, ws.r);
            grad_b.row(0) = -r_subj.colwise().sum();
            grad_b.bottomRows(ws.q - 1) = -(ws.xz.transpose() * r_subj);
            grad_b /= n_scale;

            MatrixXd cand(ws.q, ws.r), w_cand;
            VectorXd e0_cand, walpha_cand;
            std::vector<MatrixXd> exp_u_cand;
            double f_new = 0.0;
            while (true) {
                for (int t = 0; t < ws.q; ++t) {
                    const VectorXd target = th.loadings.row(t).transpose() -
                                            st.step_size * grad_b.row(t).transpose();
                    const double lam = (t == 0 && !opt.penalize_intercept_row) ? 0.0 : opt.lambda1;
                    cand.row(t) = prox_group(opt.penalty, target, st.step_size, lam).transpose();
                }
                const MatrixXd diff = cand - th.loadings;
                ws.latent_terms(cand, w_cand, e0_cand, walpha_cand, exp_u_cand);
                f_new = ws.q1(th.psi_tilde, xb, e0_cand, walpha_cand) / n_scale;
                if (accepts(f_new, q1_cur, grad_b.cwiseProduct(diff).sum(), diff.squaredNorm(),
                            st.step_size))
                    break;
                st.step_size *= 0.5;
                halved = true;
                if (st.step_size < underflow) throw StepSizeUnderflow(st.step_size);
            }
            max_change = std::max(max_change, (cand - th.loadings).cwiseAbs().maxCoeff());
            th.loadings = cand;
            q1_cur = f_new;
            // Adopt the accepted candidate's caches; e1 needs no new exp pass.
            ws.w_subj.swap(w_cand);
            ws.e0.swap(e0_cand);
            ws.walpha_subj.swap(walpha_cand);
            ws.exp_u.swap(exp_u_cand);
            ws.e1_from_exp_u(ws.exp_u, ws.e1);
        }

        if (halved) st.step_size *= 0.95;
        st.iterations = iter + 1;
        st.objective_trace.push_back(q1_cur + penalty_total(th));
        if (max_change < opt.tol) {
            st.converged = true;
            break;
        }
    }
    return st;
}

}  // namespace pchmm
