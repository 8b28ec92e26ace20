#pragma once

#include <Eigen/Core>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"

namespace pchmm {

/// Full parameter vector theta = (psi_tilde, beta, B). psi_tilde is the
/// reference-coded log baseline hazard: psi_1 = psi_tilde_1 and
/// psi_j = psi_tilde_1 + psi_tilde_j for j >= 2. Rows of the loading matrix
/// B correspond to the random intercept (row 0) followed by the z covariates;
/// a row of exact zeros means the effect is fixed across groups.
struct ModelParams {
    VectorXd psi_tilde;  // J
    VectorXd beta;       // p
    MatrixXd loadings;   // q x r

    int intervals() const { return static_cast<int>(psi_tilde.size()); }
    int n_fixed() const { return static_cast<int>(beta.size()); }
    int q() const { return static_cast<int>(loadings.rows()); }
    int r() const { return static_cast<int>(loadings.cols()); }

    VectorXd psi() const {
        VectorXd out = psi_tilde;
        for (int j = 1; j < out.size(); ++j) out[j] += psi_tilde[0];
        return out;
    }

    MatrixXd sigma() const { return loadings * loadings.transpose(); }

    std::vector<int> selected_fixed() const {
        std::vector<int> out;
        for (int l = 0; l < beta.size(); ++l)
            if (beta[l] != 0.0) out.push_back(l);
        return out;
    }

    std::vector<int> selected_random() const {
        std::vector<int> out;
        for (int t = 0; t < loadings.rows(); ++t)
            if (loadings.row(t).norm() != 0.0) out.push_back(t);
        return out;
    }

    void check_dims(const LongFormDataset& data) const {
        if (intervals() != data.n_intervals)
            throw DimensionMismatch("psi_tilde length != interval count");
        if (n_fixed() != data.p()) throw DimensionMismatch("beta length != covariate count");
        if (q() != data.q()) throw DimensionMismatch("loading rows != random-effect count");
        if (r() < 1) throw DimensionMismatch("need at least one latent factor");
    }

    /// Flat view (psi_tilde, beta, vec B) used for convergence statistics.
    VectorXd flatten() const {
        VectorXd out(psi_tilde.size() + beta.size() + loadings.size());
        out << psi_tilde, beta,
            Eigen::Map<const VectorXd>(loadings.data(), loadings.size());
        return out;
    }

    static ModelParams zero(int intervals, int p, int q, int r) {
        return ModelParams{VectorXd::Zero(intervals), VectorXd::Zero(p), MatrixXd::Zero(q, r)};
    }
};

inline double max_abs_change(const ModelParams& a, const ModelParams& b) {
    return (a.flatten() - b.flatten()).cwiseAbs().maxCoeff();
}

}  // namespace pchmm
