#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pchmm/error.hpp"

namespace pchmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

/// Grouped right-censored survival data. Subjects are stored in input order;
/// `group[i]` indexes into `group_labels`.
struct SurvivalDataset {
    std::vector<std::string> group_labels;      // K labels, order of first appearance
    std::vector<int> group;                     // N entries in [0, K)
    VectorXd time;                              // observed time y >= 0
    VectorXi status;                            // event indicator in {0, 1}
    MatrixXd X;                                 // N x p covariate matrix
    std::vector<std::string> covariate_names;   // p names (may be empty)
    bool standardized = false;
    VectorXd centers;                           // p, valid when standardized
    VectorXd scales;                            // p, valid when standardized

    int n_subjects() const { return static_cast<int>(time.size()); }
    int n_groups() const { return static_cast<int>(group_labels.size()); }
    int n_covariates() const { return static_cast<int>(X.cols()); }

    std::vector<int> group_sizes() const {
        std::vector<int> sizes(n_groups(), 0);
        for (int g : group) ++sizes[g];
        return sizes;
    }

    long n_events() const {
        long e = 0;
        for (int i = 0; i < status.size(); ++i) e += status[i];
        return e;
    }

    /// Validates the invariants required for model fitting. Throws on the
    /// first violation.
    void validate() const {
        const int n = n_subjects();
        if (n == 0) throw DataSchemaError("dataset has no subjects");
        if (static_cast<int>(group.size()) != n || status.size() != n || X.rows() != n)
            throw DimensionMismatch("dataset fields have inconsistent lengths");
        if (n_groups() < 2) throw DataSchemaError("need at least 2 groups");
        for (int i = 0; i < n; ++i) {
            if (!(time[i] >= 0.0)) throw DataSchemaError("negative or NaN time at row " + std::to_string(i));
            if (status[i] != 0 && status[i] != 1)
                throw DataSchemaError("status must be 0 or 1 at row " + std::to_string(i));
            if (status[i] == 1 && time[i] <= 0.0)
                throw DataSchemaError("event with nonpositive time at row " + std::to_string(i));
            if (group[i] < 0 || group[i] >= n_groups())
                throw DataSchemaError("group index out of range at row " + std::to_string(i));
        }
        if (n_events() == 0) throw DataSchemaError("no events observed");
    }
};

/// Standardizes each column of X to mean 0 and N^{-1} sum x^2 = 1
/// (population scaling). Returns the standardized matrix with the
/// per-column centers and scales needed to map coefficients back.
inline MatrixXd standardize_covariates(const MatrixXd& X, VectorXd& centers, VectorXd& scales) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (n < 2) throw InvalidParameter("standardization needs at least 2 rows");
    centers.resize(p);
    scales.resize(p);
    MatrixXd out(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double center = X.col(j).mean();
        const double var = (X.col(j).array() - center).square().sum() / static_cast<double>(n);
        if (var <= 1e-24) throw ZeroVarianceColumn(static_cast<int>(j));
        const double scale = std::sqrt(var);
        centers[j] = center;
        scales[j] = scale;
        out.col(j) = (X.col(j).array() - center) / scale;
    }
    return out;
}

/// Copy of the dataset with standardized covariates (no-op flags recorded).
inline SurvivalDataset standardize(SurvivalDataset data) {
    data.X = standardize_covariates(data.X, data.centers, data.scales);
    data.standardized = true;
    return data;
}

/// Maps coefficients for standardized covariates back to the original scale.
inline VectorXd destandardize_coefficients(const VectorXd& beta_std, const VectorXd& scales) {
    if (beta_std.size() != scales.size())
        throw DimensionMismatch("coefficient/scale length mismatch");
    return beta_std.array() / scales.array();
}

/// Time axis partition 0 = tau_0 < tau_1 < ... < tau_{J-1} < tau_J = inf.
/// Only the finite interior cut points are stored.
struct IntervalGrid {
    VectorXd cutpoints;  // tau_1 .. tau_{J-1}, strictly increasing, tau_1 > 0

    int intervals() const { return static_cast<int>(cutpoints.size()) + 1; }

    void validate() const {
        if (intervals() < 2) throw InvalidParameter("interval grid needs J >= 2");
        if (!(cutpoints[0] > 0.0)) throw InvalidParameter("first cut point must be positive");
        for (int j = 1; j < cutpoints.size(); ++j)
            if (!(cutpoints[j] > cutpoints[j - 1]))
                throw InvalidParameter("cut points must be strictly increasing");
    }

    double lower(int j) const { return j <= 1 ? 0.0 : cutpoints[j - 2]; }  // tau_{j-1}, j 1-based

    /// Interval containing y under the right-closed convention
    /// (tau_{j-1}, tau_j]; the last interval is open to the right.
    int interval_of(double y) const {
        const int J = intervals();
        for (int j = 1; j < J; ++j)
            if (y <= cutpoints[j - 1]) return j;
        return J;
    }
};

/// Event-balanced cut points: the j/J empirical quantiles of the observed
/// event times, linear-interpolation rule. Throws if fewer events than
/// intervals or if ties collapse the grid.
inline IntervalGrid compute_cutpoints(const VectorXd& time, const VectorXi& status, int intervals) {
    if (intervals < 2) throw InvalidParameter("interval count must be >= 2");
    std::vector<double> events;
    for (int i = 0; i < time.size(); ++i)
        if (status[i] == 1) events.push_back(time[i]);
    if (static_cast<long>(events.size()) < intervals)
        throw TooFewEvents(static_cast<long>(events.size()), intervals);
    std::sort(events.begin(), events.end());

    const auto quantile = [&](double prob) {
        const double h = prob * static_cast<double>(events.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const double frac = h - static_cast<double>(lo);
        if (lo + 1 >= events.size()) return events.back();
        return events[lo] + frac * (events[lo + 1] - events[lo]);
    };

    IntervalGrid grid;
    grid.cutpoints.resize(intervals - 1);
    for (int j = 1; j < intervals; ++j)
        grid.cutpoints[j - 1] = quantile(static_cast<double>(j) / intervals);
    for (int j = 1; j < grid.cutpoints.size(); ++j)
        if (!(grid.cutpoints[j] > grid.cutpoints[j - 1]))
            throw DegenerateQuantiles("tied event-time quantiles collapse intervals");
    if (!(grid.cutpoints[0] > 0.0))
        throw DegenerateQuantiles("first quantile cut point is not positive");
    // A cut at or beyond the largest event time leaves the last interval
    // without events.
    if (grid.cutpoints[grid.cutpoints.size() - 1] >= events.back())
        throw DegenerateQuantiles("tied event-time quantiles collapse intervals");
    return grid;
}

/// Interval-expanded representation of a SurvivalDataset: one row per
/// (subject, interval) with positive exposure, sorted by group then subject.
/// Covariates stay in the N x p matrix and rows address them by subject
/// index. The interval dummies v are implicit: v_1 = 1 on every row, v_j = 1
/// on rows of interval j > 1.
struct LongFormDataset {
    std::vector<int> subject;   // L, index into X rows
    std::vector<int> group;     // L
    std::vector<int> interval;  // L, 1-based interval j
    VectorXd exposure;          // L, t* > 0
    VectorXd offset;            // L, log t*
    VectorXd death;             // L, d in {0, 1} stored as double
    MatrixXd X;                 // N x p (shared by all rows of a subject)
    std::vector<int> z_cols;    // covariate columns entering z after the intercept
    std::vector<std::pair<long, long>> group_rows;  // [begin, end) per group
    int n_intervals = 0;
    int n_subjects = 0;

    long rows() const { return static_cast<long>(exposure.size()); }
    int n_groups() const { return static_cast<int>(group_rows.size()); }
    int p() const { return static_cast<int>(X.cols()); }
    int q() const { return 1 + static_cast<int>(z_cols.size()); }

    double total_events() const { return death.sum(); }
};

/// Expands to the long form: t* = max[min(y, tau_j) - tau_{j-1}, 0], and the
/// death indicator placed in the interval containing y. Ties y == tau_j
/// resolve right-closed, (tau_{j-1}, tau_j], so the death row always has
/// positive exposure and the per-subject sums reproduce (y, delta) exactly.
inline LongFormDataset expand_long_form(const SurvivalDataset& data, const IntervalGrid& grid) {
    grid.validate();
    const int J = grid.intervals();
    const int n = data.n_subjects();
    const int K = data.n_groups();

    LongFormDataset out;
    out.X = data.X;
    out.n_intervals = J;
    out.n_subjects = n;
    out.z_cols.resize(data.n_covariates());
    std::iota(out.z_cols.begin(), out.z_cols.end(), 0);

    // Subjects ordered by group, preserving input order within each group.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return data.group[a] < data.group[b]; });

    std::vector<double> exposure, offset, death;
    out.group_rows.assign(K, {0, 0});
    int current_group = -1;
    for (int idx : order) {
        if (data.group[idx] != current_group) {
            if (current_group >= 0)
                out.group_rows[current_group].second = static_cast<long>(exposure.size());
            current_group = data.group[idx];
            out.group_rows[current_group].first = static_cast<long>(exposure.size());
        }
        const double y = data.time[idx];
        const int delta = data.status[idx];
        const int death_interval = delta == 1 ? grid.interval_of(y) : 0;
        for (int j = 1; j <= J; ++j) {
            const double lo = grid.lower(j);
            const double hi = j < J ? grid.cutpoints[j - 1] : std::numeric_limits<double>::infinity();
            const double t = std::max(std::min(y, hi) - lo, 0.0);
            if (t <= 0.0) break;  // intervals beyond y contribute nothing
            out.subject.push_back(idx);
            out.group.push_back(data.group[idx]);
            out.interval.push_back(j);
            exposure.push_back(t);
            offset.push_back(std::log(t));
            death.push_back(j == death_interval ? 1.0 : 0.0);
        }
    }
    if (current_group >= 0)
        out.group_rows[current_group].second = static_cast<long>(exposure.size());

    out.exposure = Eigen::Map<VectorXd>(exposure.data(), static_cast<long>(exposure.size()));
    out.offset = Eigen::Map<VectorXd>(offset.data(), static_cast<long>(offset.size()));
    out.death = Eigen::Map<VectorXd>(death.data(), static_cast<long>(death.size()));
    return out;
}

/// Rank-transform indicator matrix: entry (i, m) is 1 when expression of the
/// first gene of pair m strictly exceeds the second in subject i.
inline MatrixXd tsp_transform(const MatrixXd& expr,
                              const std::vector<std::pair<int, int>>& pairs) {
    MatrixXd out(expr.rows(), static_cast<long>(pairs.size()));
    for (std::size_t m = 0; m < pairs.size(); ++m) {
        const auto [a, b] = pairs[m];
        if (a < 0 || b < 0 || a >= expr.cols() || b >= expr.cols())
            throw InvalidPair("pair column out of range");
        if (a == b) throw InvalidPair("pair compares a column with itself");
        for (long i = 0; i < expr.rows(); ++i)
            out(i, static_cast<long>(m)) = expr(i, a) > expr(i, b) ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace pchmm
