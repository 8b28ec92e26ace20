#include <catch2/catch_amalgamated.hpp>

#include "pchmm/csv.hpp"
#include "pchmm/data.hpp"
#include "pchmm/rng.hpp"
#include "test_helpers.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace pchmm;

TEST_CASE("standardize_covariates centers and scales", "[data]") {
    VectorXd centers, scales;

    MatrixXd already(2, 1);
    already << 1, -1;
    MatrixXd out = standardize_covariates(already, centers, scales);
    CHECK(out(0, 0) == Catch::Approx(1.0));
    CHECK(out(1, 0) == Catch::Approx(-1.0));
    CHECK(centers[0] == Catch::Approx(0.0));
    CHECK(scales[0] == Catch::Approx(1.0));

    MatrixXd shifted(2, 1);
    shifted << 0, 2;
    out = standardize_covariates(shifted, centers, scales);
    CHECK(out(0, 0) == Catch::Approx(-1.0));
    CHECK(out(1, 0) == Catch::Approx(1.0));
    CHECK(centers[0] == Catch::Approx(1.0));
    CHECK(scales[0] == Catch::Approx(1.0));

    MatrixXd constant(2, 1);
    constant << 5, 5;
    CHECK_THROWS_AS(standardize_covariates(constant, centers, scales), ZeroVarianceColumn);
}

TEST_CASE("standardized columns satisfy the moment contract", "[data]") {
    Rng rng(7);
    MatrixXd raw(37, 4);
    for (int i = 0; i < raw.rows(); ++i)
        for (int j = 0; j < raw.cols(); ++j) raw(i, j) = 2.0 + 3.0 * rng.normal();
    VectorXd centers, scales;
    MatrixXd std_x = standardize_covariates(raw, centers, scales);
    for (int j = 0; j < std_x.cols(); ++j) {
        CHECK(std::abs(std_x.col(j).sum()) < 1e-10);
        CHECK(std::abs(std_x.col(j).squaredNorm() / std_x.rows() - 1.0) < 1e-10);
    }

    // Coefficient de-standardization round trip.
    VectorXd beta_orig(4);
    beta_orig << 0.5, -1.0, 0.0, 2.0;
    VectorXd beta_std = beta_orig.cwiseProduct(scales);
    CHECK((destandardize_coefficients(beta_std, scales) - beta_orig).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("compute_cutpoints uses linear-interpolation quantiles", "[data]") {
    VectorXd time(8);
    time << 1, 2, 3, 4, 5, 6, 7, 8;
    VectorXi status = VectorXi::Ones(8);
    const IntervalGrid grid = compute_cutpoints(time, status, 4);
    REQUIRE(grid.intervals() == 4);
    CHECK(grid.cutpoints[0] == Catch::Approx(2.75));
    CHECK(grid.cutpoints[1] == Catch::Approx(4.5));
    CHECK(grid.cutpoints[2] == Catch::Approx(6.25));

    // Censored times must not influence the cut points.
    VectorXd padded(10);
    padded << 1, 2, 3, 4, 5, 6, 7, 8, 100, 200;
    VectorXi status2(10);
    status2 << 1, 1, 1, 1, 1, 1, 1, 1, 0, 0;
    const IntervalGrid grid2 = compute_cutpoints(padded, status2, 4);
    CHECK(grid2.cutpoints.isApprox(grid.cutpoints));
}

TEST_CASE("compute_cutpoints error paths", "[data]") {
    VectorXd time(2);
    time << 1, 2;
    VectorXi status = VectorXi::Ones(2);
    CHECK_THROWS_AS(compute_cutpoints(time, status, 5), TooFewEvents);

    VectorXd tied = VectorXd::Constant(6, 3.0);
    VectorXi all_events = VectorXi::Ones(6);
    CHECK_THROWS_AS(compute_cutpoints(tied, all_events, 2), DegenerateQuantiles);
}

namespace {

SurvivalDataset two_subject_dataset(double y0, int d0, double y1, int d1) {
    SurvivalDataset data;
    data.group_labels = {"a", "b"};
    data.group = {0, 1};
    data.time.resize(2);
    data.time << y0, y1;
    data.status.resize(2);
    data.status << d0, d1;
    data.X = MatrixXd::Zero(2, 1);
    data.X << 1, -1;
    return data;
}

IntervalGrid grid_half_steps() {
    IntervalGrid grid;
    grid.cutpoints.resize(4);
    grid.cutpoints << 0.5, 1.0, 1.5, 2.0;
    return grid;
}

}  // namespace

TEST_CASE("expand_long_form worked examples", "[data]") {
    const IntervalGrid grid = grid_half_steps();

    SECTION("death in the second interval") {
        const auto lf = expand_long_form(two_subject_dataset(0.7, 1, 3.0, 0), grid);
        REQUIRE(lf.group_rows[0] == std::make_pair(0L, 2L));
        CHECK(lf.interval[0] == 1);
        CHECK(lf.exposure[0] == Catch::Approx(0.5));
        CHECK(lf.death[0] == 0.0);
        CHECK(lf.interval[1] == 2);
        CHECK(lf.exposure[1] == Catch::Approx(0.2));
        CHECK(lf.death[1] == 1.0);
    }
    SECTION("censored in the first interval") {
        const auto lf = expand_long_form(two_subject_dataset(0.3, 0, 3.0, 1), grid);
        REQUIRE(lf.group_rows[0] == std::make_pair(0L, 1L));
        CHECK(lf.interval[0] == 1);
        CHECK(lf.exposure[0] == Catch::Approx(0.3));
        CHECK(lf.death[0] == 0.0);
    }
    SECTION("death in the open final interval") {
        const auto lf = expand_long_form(two_subject_dataset(2.5, 1, 0.2, 0), grid);
        REQUIRE(lf.group_rows[0] == std::make_pair(0L, 5L));
        for (int j = 0; j < 4; ++j) {
            CHECK(lf.interval[j] == j + 1);
            CHECK(lf.exposure[j] == Catch::Approx(0.5));
            CHECK(lf.death[j] == 0.0);
        }
        CHECK(lf.interval[4] == 5);
        CHECK(lf.exposure[4] == Catch::Approx(0.5));
        CHECK(lf.death[4] == 1.0);
    }
}

TEST_CASE("long-form expansion preserves per-subject totals", "[data][property]") {
    Rng rng(42);
    for (int trial = 0; trial < 500; ++trial) {
        // Random grid, occasionally hit cut points exactly.
        const int J = 2 + static_cast<int>(rng.uniform() * 6);
        VectorXd cuts(J - 1);
        double acc = 0.0;
        for (int j = 0; j < J - 1; ++j) {
            acc += 0.1 + rng.exponential(2.0);
            cuts[j] = acc;
        }
        IntervalGrid grid{cuts};

        const int n = 20;
        SurvivalDataset data;
        data.group_labels = {"a", "b"};
        data.group.assign(n, 0);
        data.time.resize(n);
        data.status.resize(n);
        data.X = MatrixXd::Zero(n, 1);
        for (int i = 0; i < n; ++i) {
            data.group[i] = i % 2;
            data.X(i, 0) = i;
            const double u = rng.uniform();
            if (u < 0.2) {
                data.time[i] = cuts[static_cast<int>(rng.uniform() * (J - 1))];  // exact tie
            } else if (u < 0.3) {
                data.time[i] = acc + rng.exponential(1.0);  // beyond the last cut
            } else {
                data.time[i] = rng.exponential(0.7);
            }
            data.status[i] = rng.uniform() < 0.6 ? 1 : 0;
            if (data.time[i] <= 0.0) data.time[i] = 0.01;
        }
        const auto lf = expand_long_form(data, grid);

        VectorXd time_sum = VectorXd::Zero(n), death_sum = VectorXd::Zero(n);
        for (long row = 0; row < lf.rows(); ++row) {
            time_sum[lf.subject[row]] += lf.exposure[row];
            death_sum[lf.subject[row]] += lf.death[row];
            CHECK(lf.exposure[row] > 0.0);
        }
        for (int i = 0; i < n; ++i) {
            REQUIRE(std::abs(time_sum[i] - data.time[i]) < 1e-12);
            REQUIRE(death_sum[i] == static_cast<double>(data.status[i]));
        }
    }
}

TEST_CASE("expansion blocks depend only on the subject data", "[data][property]") {
    const SurvivalDataset data = testing::random_dataset(30, 2, 3, 99);
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, 4);
    const auto lf = expand_long_form(data, grid);

    // Reverse the subjects; each subject's block must be unchanged.
    SurvivalDataset reversed = data;
    for (int i = 0; i < data.n_subjects(); ++i) {
        const int src = data.n_subjects() - 1 - i;
        reversed.group[i] = data.group[src];
        reversed.time[i] = data.time[src];
        reversed.status[i] = data.status[src];
        reversed.X.row(i) = data.X.row(src);
    }
    const auto lf2 = expand_long_form(reversed, grid);
    REQUIRE(lf.rows() == lf2.rows());

    const auto block_of = [](const LongFormDataset& l, int subject) {
        std::vector<std::tuple<int, double, double>> rows;
        for (long r = 0; r < l.rows(); ++r)
            if (l.subject[r] == subject) rows.emplace_back(l.interval[r], l.exposure[r], l.death[r]);
        return rows;
    };
    for (int i = 0; i < data.n_subjects(); ++i)
        CHECK(block_of(lf, i) == block_of(lf2, data.n_subjects() - 1 - i));
}

TEST_CASE("tsp_transform strict comparison", "[data]") {
    MatrixXd expr(3, 2);
    expr << 5, 3,   // 5 > 3 -> 1
        3, 3,       // tie -> 0
        1, 4;       // reversed -> 0
    const MatrixXd tsp = tsp_transform(expr, {{0, 1}});
    CHECK(tsp(0, 0) == 1.0);
    CHECK(tsp(1, 0) == 0.0);
    CHECK(tsp(2, 0) == 0.0);

    CHECK_THROWS_AS(tsp_transform(expr, {{0, 0}}), InvalidPair);
    CHECK_THROWS_AS(tsp_transform(expr, {{0, 7}}), InvalidPair);
}

TEST_CASE("survival CSV round trip and schema checks", "[data][csv]") {
    const auto dir = std::filesystem::temp_directory_path() / "pchmm_test_csv";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "data.csv").string();

    const SurvivalDataset data = testing::random_dataset(25, 3, 3, 5);
    write_survival_csv(data, path);
    const SurvivalDataset back = read_survival_csv(path);
    REQUIRE(back.n_subjects() == data.n_subjects());
    REQUIRE(back.n_covariates() == data.n_covariates());
    CHECK(back.group == data.group);
    CHECK((back.time - data.time).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.X - data.X).cwiseAbs().maxCoeff() == 0.0);

    const std::string bad = (dir / "bad.csv").string();
    std::ofstream out(bad);
    out << "group,time\n" << "a,1.0\n";
    out.close();
    CHECK_THROWS_AS(read_survival_csv(bad), DataSchemaError);
    std::filesystem::remove_all(dir);
}
