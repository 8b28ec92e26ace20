// Acceptance suite: one self-contained check per criterion, each printing a
// single PASS/FAIL line. Run with a criterion number (1-10) or no argument
// for the full set.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "oracles.hpp"
#include "pchmm/pchmm.hpp"
#include "test_helpers.hpp"

#ifndef PCHMM_CLI_PATH
#define PCHMM_CLI_PATH "pchmm"
#endif

using namespace pchmm;

namespace {

struct Criterion {
    int number;
    std::string name;
    std::function<bool(std::string&)> run;
};

// --- 1: long-form conservation -------------------------------------------

bool criterion_long_form(std::string& detail) {
    Rng rng(20260809);
    long checked = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int J = 2 + static_cast<int>(rng.uniform() * 7);
        VectorXd cuts(J - 1);
        double acc = 0.0;
        for (int j = 0; j < J - 1; ++j) {
            acc += 0.05 + rng.exponential(1.5);
            cuts[j] = acc;
        }
        const IntervalGrid grid{cuts};

        const int n = 20;
        SurvivalDataset data;
        data.group_labels = {"a", "b"};
        data.group.assign(n, 0);
        data.time.resize(n);
        data.status.resize(n);
        data.X = MatrixXd::Zero(n, 1);
        for (int i = 0; i < n; ++i) {
            data.group[i] = i % 2;
            const double u = rng.uniform();
            if (u < 0.25)
                data.time[i] = cuts[static_cast<int>(rng.uniform() * (J - 1))];
            else if (u < 0.35)
                data.time[i] = acc + rng.exponential(0.8);
            else
                data.time[i] = 0.001 + rng.exponential(0.5);
            data.status[i] = rng.uniform() < 0.6 ? 1 : 0;
        }
        const LongFormDataset lf = expand_long_form(data, grid);
        VectorXd t_sum = VectorXd::Zero(n), d_sum = VectorXd::Zero(n);
        for (long row = 0; row < lf.rows(); ++row) {
            t_sum[lf.subject[row]] += lf.exposure[row];
            d_sum[lf.subject[row]] += lf.death[row];
        }
        for (int i = 0; i < n; ++i) {
            ++checked;
            if (std::abs(t_sum[i] - data.time[i]) > 1e-12) {
                detail = "exposure sum mismatch at subject " + std::to_string(i);
                return false;
            }
            if (d_sum[i] != static_cast<double>(data.status[i])) {
                detail = "death sum mismatch at subject " + std::to_string(i);
                return false;
            }
        }
    }
    detail = std::to_string(checked) + " fuzzed subjects conserved (tol 1e-12)";
    return true;
}

// --- 2: proximal-operator oracle ------------------------------------------

double prox_objective_fast(PenaltyKind kind, double gamma, double pi, double x, double z, double c,
                           double lambda) {
    const double t = std::abs(x);
    return (x - z) * (x - z) / (2.0 * c) + pi * pchmm::detail::pure_penalty(kind, gamma, t, lambda) +
           (1.0 - pi) * 0.5 * lambda * x * x;
}

bool criterion_prox_oracle(std::string& detail) {
    Rng rng(77003);
    const double resolution = 1e-5;
    for (int trial = 0; trial < 1000; ++trial) {
        PenaltyConfig cfg;
        const double u = rng.uniform();
        cfg.kind = u < 0.34 ? PenaltyKind::lasso
                            : (u < 0.67 ? PenaltyKind::mcp : PenaltyKind::scad);
        cfg.gamma =
            cfg.kind == PenaltyKind::scad ? 2.6 + 2.5 * rng.uniform() : 1.6 + 3.5 * rng.uniform();
        cfg.pi = 0.3 + 0.7 * rng.uniform();
        const double margin = cfg.kind == PenaltyKind::scad ? cfg.gamma - 1.0 : cfg.gamma;
        const double c = 0.05 + 0.85 * margin * rng.uniform() / cfg.pi;
        const double lambda = 0.05 + 1.5 * rng.uniform();
        const double z = -4.0 + 8.0 * rng.uniform();

        const double x = prox_scalar(cfg, z, c, lambda);
        const double fx = prox_objective_fast(cfg.kind, cfg.gamma, cfg.pi, x, z, c, lambda);
        const double hw = std::max(5.0, std::abs(z) + 1.0);
        const long n = static_cast<long>(2.0 * hw / resolution) + 1;
        double best = fx + 1.0;
        for (long i = 0; i < n; ++i) {
            const double g = -hw + resolution * static_cast<double>(i);
            const double fg = prox_objective_fast(cfg.kind, cfg.gamma, cfg.pi, g, z, c, lambda);
            if (fg < best) best = fg;
        }
        if (fx > best + 1e-8) {
            detail = "prox beaten by grid at trial " + std::to_string(trial) +
                     " (gap " + std::to_string(fx - best) + ")";
            return false;
        }
    }
    detail = "1000 fuzzed configs dominate the 1e-5 grid within 1e-8";
    return true;
}

// --- 3: gradient correctness ----------------------------------------------

bool criterion_gradient(std::string& detail) {
    double worst = 0.0;
    for (int instance = 0; instance < 50; ++instance) {
        const LongFormDataset lf = testing::random_long_form(30, 4, 3, 4, 5000 + instance);
        const ModelParams theta = testing::random_params(lf, 2, 6000 + instance, 0.25);
        const PosteriorSamples samples = testing::random_samples(3, 5, 2, 7000 + instance);
        const Q1Gradient g = q1_gradient(theta, samples, lf);

        const auto fd_rel = [&](double analytic, auto bump) {
            const double h = 1e-5;
            ModelParams up = theta, dn = theta;
            bump(up, h);
            bump(dn, -h);
            const double fd = (q1_value(up, samples, lf) - q1_value(dn, samples, lf)) / (2.0 * h);
            return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
        };
        for (int j = 0; j < theta.intervals(); ++j)
            worst = std::max(worst, fd_rel(g.psi_tilde[j],
                                           [j](ModelParams& t, double h) { t.psi_tilde[j] += h; }));
        for (int l = 0; l < theta.n_fixed(); ++l)
            worst = std::max(
                worst, fd_rel(g.beta[l], [l](ModelParams& t, double h) { t.beta[l] += h; }));
        for (int t = 0; t < theta.q(); ++t)
            for (int c = 0; c < theta.r(); ++c)
                worst = std::max(worst,
                                 fd_rel(g.loadings(t, c), [t, c](ModelParams& th, double h) {
                                     th.loadings(t, c) += h;
                                 }));
        if (worst > 1e-6) {
            detail = "relative error " + std::to_string(worst) + " at instance " +
                     std::to_string(instance);
            return false;
        }
    }
    detail = "50 instances, worst relative error " + std::to_string(worst);
    return true;
}

// --- 4: fixed-effects oracle -----------------------------------------------

bool criterion_fixed_effects(std::string& detail) {
    const SurvivalDataset data = testing::random_dataset(200, 5, 4, 88111);
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, 5);
    const LongFormDataset lf = expand_long_form(data, grid);

    const auto [psi_tilde, beta] =
        init_fixed_effects(lf, 0.0, PenaltyConfig::make(PenaltyKind::mcp));

    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(lf.rows(), lf.n_intervals + lf.p());
    for (long row = 0; row < lf.rows(); ++row) {
        design(row, 0) = 1.0;
        if (lf.interval[row] > 1) design(row, lf.interval[row] - 1) = 1.0;
        design.row(row).tail(lf.p()) = lf.X.row(lf.subject[row]);
    }
    const VectorXd coef = oracle::irls_poisson(design, lf.death, lf.offset);

    double worst = 0.0;
    for (int j = 0; j < lf.n_intervals; ++j) worst = std::max(worst, std::abs(psi_tilde[j] - coef[j]));
    for (int l = 0; l < lf.p(); ++l)
        worst = std::max(worst, std::abs(beta[l] - coef[lf.n_intervals + l]));
    detail = "max |MCECM - IRLS| = " + std::to_string(worst) + " (tol 1e-4)";
    return worst < 1e-4;
}

// --- 5: E-step oracle --------------------------------------------------------

bool criterion_estep(std::string& detail) {
    const LongFormDataset lf = testing::random_long_form(50, 2, 2, 4, 90210);
    ModelParams theta = testing::random_params(lf, 1, 90211);
    theta.loadings = MatrixXd::Constant(lf.q(), 1, 0.45);

    std::ostringstream note;
    for (int k = 0; k < 2; ++k) {
        const auto log_post = [&](double a) {
            return log_posterior_alpha(VectorXd::Constant(1, a), lf, k, theta);
        };
        const double quad = oracle::quadrature_posterior_mean(log_post, 2001, 8.0);

        const int m = 2000;
        const MatrixXd draws = sample_posterior(lf, k, theta, m, 500, 424200 + k);
        const double mc = draws.col(0).mean();

        const int n_batches = 20, batch = m / n_batches;
        VectorXd batch_means(n_batches);
        for (int b = 0; b < n_batches; ++b)
            batch_means[b] = draws.col(0).segment(b * batch, batch).mean();
        const double se = std::sqrt((batch_means.array() - batch_means.mean()).square().sum() /
                                    (n_batches - 1) / n_batches);
        note << "group " << k << ": |mc-quad| = " << std::abs(mc - quad) << " vs 3se = " << 3 * se
             << "; ";
        if (std::abs(mc - quad) > 3.0 * std::max(se, 1e-8)) {
            detail = note.str();
            return false;
        }
    }
    detail = note.str();
    return true;
}

// --- 6: growth ratio ---------------------------------------------------------

bool criterion_growth_ratio(std::string& detail) {
    VectorXd fixture(4);
    fixture << 8, 4, 1, 0.5;
    const GrowthRatioResult res = growth_ratio_from_eigenvalues(fixture, 2);
    if (std::abs(res.growth_ratios[0] - 0.691) > 1e-3 ||
        std::abs(res.growth_ratios[1] - 1.183) > 1e-3 || res.r_hat != 2) {
        detail = "fixture GR = (" + std::to_string(res.growth_ratios[0]) + ", " +
                 std::to_string(res.growth_ratios[1]) + "), r_hat = " + std::to_string(res.r_hat);
        return false;
    }
    int correct = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(31000 + seed);
        MatrixXd a(20, 2), f(2, 10);
        for (int i = 0; i < a.size(); ++i) a(i / 2, i % 2) = rng.normal();
        for (int i = 0; i < f.size(); ++i) f(i / 10, i % 10) = rng.normal();
        MatrixXd g = a * f;
        for (int i = 0; i < g.size(); ++i) g(i / 10, i % 10) += 1e-8 * rng.normal();
        g.colwise() -= g.rowwise().mean().eval();
        if (growth_ratio_r(g, 5).r_hat == 2) ++correct;
    }
    detail = "fixture ok; synthetic rank-2 recovered on " + std::to_string(correct) + "/20 seeds";
    return correct == 20;
}

// --- 7: simulator fidelity ---------------------------------------------------

bool criterion_simulator(std::string& detail) {
    SimConfig null_cfg;
    null_cfg.n_subjects = 100000;
    null_cfg.n_groups = 2;
    null_cfg.n_covariates = 2;
    null_cfg.beta_true = VectorXd::Zero(2);
    null_cfg.loadings_true = MatrixXd::Zero(3, 1);
    null_cfg.log_hazard_true.resize(5);
    null_cfg.log_hazard_true << -1.5, 1.0, 2.7, 3.7, 6.8;
    null_cfg.sim_cutpoints.resize(4);
    null_cfg.sim_cutpoints << 0.5, 1.0, 1.5, 2.0;
    null_cfg.seed = 314159;
    null_cfg.censor_max = 1e12;
    const SurvivalDataset null_data = simulate_dataset(null_cfg);
    double above = 0.0;
    for (int i = 0; i < null_data.n_subjects(); ++i)
        above += null_data.time[i] > 0.5 ? 1.0 : 0.0;
    const double s_half = above / null_data.n_subjects();
    if (std::abs(s_half - 0.8944) > 0.01) {
        detail = "empirical S(0.5) = " + std::to_string(s_half) + ", expected 0.8944 +- 0.01";
        return false;
    }

    int within = 0;
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const SurvivalDataset data =
            simulate_dataset(SimConfig::paper_default(100, 5, 1.0, "moderate", seed));
        const double censor = 1.0 - static_cast<double>(data.n_events()) / data.n_subjects();
        lo = std::min(lo, censor);
        hi = std::max(hi, censor);
        if (censor >= 0.11 && censor <= 0.26) ++within;
    }
    detail = "S(0.5) = " + std::to_string(s_half) + "; censoring in band on " +
             std::to_string(within) + "/10 seeds (range " + std::to_string(lo) + "-" +
             std::to_string(hi) + ")";
    return within >= 9;
}

// --- 8: desk-scale selection study -------------------------------------------

bool criterion_selection_study(std::string& detail) {
    SimConfig sim = SimConfig::paper_default(25, 5, 1.0, "moderate", 2468);
    sim.n_subjects = 500;

    BenchConfig bench;
    bench.fit.intervals = 8;
    bench.fit.seed = 97;
    bench.r = 3;  // true r supplied
    bench.n_lambda = 10;
    bench.threads = 1;

    const BenchSummary summary = run_replicates(sim, bench, 10);
    std::ostringstream note;
    note << "tp_fixef " << summary.means.tp_fixed << " fp_fixef " << summary.means.fp_fixed
         << " tp_ranef " << summary.means.tp_random << " fp_ranef " << summary.means.fp_random
         << " abs_dev " << summary.means.mean_abs_dev << " t_med_h "
         << summary.median_runtime_hours << " failed " << summary.n_failed;
    detail = note.str();
    return summary.n_failed == 0 && summary.means.tp_fixed >= 90.0 &&
           summary.means.fp_fixed <= 10.0 && summary.means.tp_random >= 80.0 &&
           summary.means.fp_random <= 10.0 && summary.means.mean_abs_dev <= 0.5;
}

// --- 9: monotone M-step ------------------------------------------------------

bool criterion_monotone_mstep(std::string& detail) {
    Rng rng(1357);
    for (int instance = 0; instance < 100; ++instance) {
        const LongFormDataset lf = testing::random_long_form(40, 3, 3, 4, 20000 + instance);
        const ModelParams theta = testing::random_params(lf, 2, 21000 + instance, 0.4);
        const PosteriorSamples samples = testing::random_samples(3, 20, 2, 22000 + instance);
        MStepOptions opt;
        opt.lambda0 = 0.4 * rng.uniform();
        opt.lambda1 = 0.4 * rng.uniform();
        opt.penalty = PenaltyConfig::make(rng.uniform() < 0.5 ? PenaltyKind::mcp
                                                              : PenaltyKind::scad);
        opt.penalty.pi = 0.6 + 0.4 * rng.uniform();
        opt.max_iter = 30;
        const MStepState st = mstep(theta, samples, lf, opt);
        for (std::size_t i = 1; i < st.objective_trace.size(); ++i) {
            if (st.objective_trace[i] > st.objective_trace[i - 1] + 1e-8) {
                detail = "objective increased by " +
                         std::to_string(st.objective_trace[i] - st.objective_trace[i - 1]) +
                         " at instance " + std::to_string(instance);
                return false;
            }
        }
    }
    detail = "100 fuzzed instances, trace non-increasing within 1e-8";
    return true;
}

// --- 10: end-to-end determinism ----------------------------------------------

bool criterion_determinism(std::string& detail) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "pchmm_acceptance_10";
    fs::create_directories(dir);
    const std::string csv = (dir / "sim.csv").string();
    const std::string out = (dir / "select.json").string();

    const auto shell = [](const std::string& args) {
        const std::string cmd = std::string(PCHMM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    const auto slurp = [](const std::string& path) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    if (!shell("simulate --output " + csv + " --n 200 --groups 4 --p 6 --seed 12")) {
        detail = "simulate failed";
        return false;
    }
    const std::string flags = " --r 2 -J 5 --n-lambda 4 --max-em 8 --seed 55";
    if (!shell("select --input " + csv + " --output " + out + flags)) {
        detail = "first select failed";
        return false;
    }
    const std::string first = slurp(out);
    if (!shell("select --input " + csv + " --output " + out + flags)) {
        detail = "second select failed";
        return false;
    }
    const std::string second = slurp(out);
    fs::remove_all(dir);
    if (first.empty() || first != second) {
        detail = "outputs differ (" + std::to_string(first.size()) + " vs " +
                 std::to_string(second.size()) + " bytes)";
        return false;
    }
    detail = "byte-identical select output (" + std::to_string(first.size()) + " bytes)";
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "long-form conservation", criterion_long_form},
        {2, "proximal-operator grid oracle", criterion_prox_oracle},
        {3, "Q1 gradient vs finite differences", criterion_gradient},
        {4, "fixed-effects IRLS oracle", criterion_fixed_effects},
        {5, "E-step quadrature oracle", criterion_estep},
        {6, "growth ratio estimator", criterion_growth_ratio},
        {7, "simulator fidelity", criterion_simulator},
        {8, "desk-scale selection study", criterion_selection_study},
        {9, "monotone M-step", criterion_monotone_mstep},
        {10, "end-to-end determinism", criterion_determinism},
    };

    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);

    bool all_ok = true;
    for (const Criterion& criterion : criteria) {
        if (only != 0 && criterion.number != only) continue;
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& err) {
            detail = std::string("exception: ") + err.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s  criterion %2d  %-36s  [%.1fs]  %s\n", ok ? "PASS" : "FAIL",
                    criterion.number, criterion.name.c_str(), seconds, detail.c_str());
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
