// Command-line interface for fitting, tuning, and benchmarking penalized
// piecewise constant hazard mixed-effects survival models.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pchmm/pchmm.hpp"

using json = nlohmann::ordered_json;
using namespace pchmm;

namespace {

struct CommonOptions {
    std::string input;
    std::string output;
    int intervals = 8;
    std::string penalty = "mcp";
    double gamma = 0.0;  // 0 => kind default
    double pi = 1.0;
    std::string r_mode = "auto";
    int n_lambda = 10;
    std::uint64_t seed = 1;
    int max_em = 25;
    int max_mstep = 50;
    int burnin = 250;
    int threads = 1;
};

void add_fit_flags(CLI::App* cmd, CommonOptions& opt, bool with_input = true) {
    if (with_input) cmd->add_option("--input", opt.input, "input CSV")->required();
    cmd->add_option("--output", opt.output, "output path")->required();
    cmd->add_option("-J,--intervals", opt.intervals, "number of hazard intervals (default 8)");
    cmd->add_option("--penalty", opt.penalty, "penalty kind: lasso|mcp|scad")
        ->check(CLI::IsMember({"lasso", "mcp", "scad"}));
    cmd->add_option("--gamma", opt.gamma, "penalty concavity (default 3 mcp, 3.7 scad)");
    cmd->add_option("--pi", opt.pi, "elastic-net mixing in (0,1], 1 = pure penalty");
    cmd->add_option("--r", opt.r_mode, "latent factor count: auto|<int>");
    cmd->add_option("--n-lambda", opt.n_lambda, "penalty grid length per sequence");
    cmd->add_option("--seed", opt.seed, "master seed");
    cmd->add_option("--max-em", opt.max_em, "EM iteration cap");
    cmd->add_option("--max-mstep", opt.max_mstep, "inner M-step iteration cap");
    cmd->add_option("--burnin", opt.burnin, "MCMC burn-in per E-step");
    cmd->add_option("--threads", opt.threads, "worker threads (bench only)");
}

PenaltyConfig make_penalty(const CommonOptions& opt) {
    PenaltyConfig penalty = PenaltyConfig::make(penalty_kind_from_string(opt.penalty), opt.pi);
    if (opt.gamma > 0.0) penalty.gamma = opt.gamma;
    penalty.validate();
    return penalty;
}

FitConfig make_fit_config(const CommonOptions& opt) {
    if (opt.intervals < 2 || opt.intervals > 50)
        throw InvalidParameter("intervals must lie in [2, 50]");
    if (opt.intervals < 5 || opt.intervals > 10)
        std::cerr << "warning: " << opt.intervals
                  << " intervals is outside the recommended range [5, 10]\n";
    FitConfig cfg;
    cfg.intervals = opt.intervals;
    cfg.max_em = opt.max_em;
    cfg.max_mstep = opt.max_mstep;
    cfg.burnin = opt.burnin;
    cfg.penalty = make_penalty(opt);
    cfg.seed = opt.seed;
    cfg.validate();
    return cfg;
}

json config_json(const CommonOptions& opt, const std::string& subcommand) {
    json cfg;
    cfg["subcommand"] = subcommand;
    cfg["input"] = opt.input;
    cfg["output"] = opt.output;
    cfg["intervals"] = opt.intervals;
    cfg["penalty"] = opt.penalty;
    cfg["gamma"] = opt.gamma > 0.0 ? opt.gamma : default_concavity(penalty_kind_from_string(opt.penalty));
    cfg["pi"] = opt.pi;
    cfg["r"] = opt.r_mode;
    cfg["n_lambda"] = opt.n_lambda;
    cfg["seed"] = opt.seed;
    cfg["max_em"] = opt.max_em;
    cfg["max_mstep"] = opt.max_mstep;
    cfg["burnin"] = opt.burnin;
    cfg["threads"] = opt.threads;
    return cfg;
}

json vector_json(const VectorXd& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

json matrix_json(const MatrixXd& m) {
    json out = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(row);
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

/// Resolves --r: explicit integer or Growth Ratio estimate, with diagnostics.
int resolve_r(const CommonOptions& opt, const SurvivalDataset& data, const IntervalGrid& grid,
              const FitConfig& cfg, json* diagnostics) {
    if (opt.r_mode != "auto") {
        const int r = std::stoi(opt.r_mode);
        if (r < 1) throw InvalidParameter("--r must be >= 1");
        return r;
    }
    const PseudoEffectsMatrix pseudo = pseudo_random_effects(data, grid, cfg);
    const GrowthRatioResult gr = growth_ratio_r(pseudo.G);
    if (diagnostics) {
        (*diagnostics)["eigenvalues"] = vector_json(gr.eigenvalues);
        (*diagnostics)["growth_ratios"] = vector_json(gr.growth_ratios);
        (*diagnostics)["u"] = gr.u;
        (*diagnostics)["r_hat"] = gr.r_hat;
    }
    return gr.r_hat;
}

json model_json(const FitResult& fit, const SurvivalDataset& data, double bic) {
    json out;
    out["lambda0"] = fit.lambda0;
    out["lambda1"] = fit.lambda1;
    out["converged"] = fit.converged;
    out["em_iterations"] = fit.em_iterations;
    out["psi_tilde"] = vector_json(fit.params.psi_tilde);
    out["psi"] = vector_json(fit.params.psi());
    out["beta_standardized"] = vector_json(fit.params.beta);
    const VectorXd beta_original = destandardize_coefficients(fit.params.beta, data.scales);
    out["beta_original_scale"] = vector_json(beta_original);
    out["hazard_ratios"] = vector_json(beta_original.array().exp());
    out["B"] = matrix_json(fit.params.loadings);
    out["Sigma"] = matrix_json(fit.sigma_hat);
    out["selected_fixed"] = fit.selected_fixed;
    json fixed_names = json::array(), random_names = json::array();
    for (int l : fit.selected_fixed) fixed_names.push_back(data.covariate_names[l]);
    for (int t : fit.selected_random)
        random_names.push_back(t == 0 ? "(intercept)" : data.covariate_names[t - 1]);
    out["selected_fixed_names"] = fixed_names;
    out["selected_random"] = fit.selected_random;
    out["selected_random_names"] = random_names;
    out["q1"] = fit.q1_at_solution;
    out["bic_icq"] = bic;
    return out;
}

int run_fit(const CommonOptions& opt, double lambda0, double lambda1) {
    const SurvivalDataset data = standardize(read_survival_csv(opt.input));
    data.validate();
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, opt.intervals);
    const FitConfig cfg = make_fit_config(opt);

    json out;
    out["config"] = config_json(opt, "fit");
    out["config"]["lambda0"] = lambda0;
    out["config"]["lambda1"] = lambda1;
    json gr_diag;
    const int r = resolve_r(opt, data, grid, cfg, &gr_diag);
    if (!gr_diag.empty()) out["growth_ratio"] = gr_diag;
    out["r"] = r;

    const LongFormDataset lf = expand_long_form(data, grid);
    const FitResult fit = fit_mcecm(lf, lambda0, lambda1, r, cfg);
    // Single fits use their own final draws as the BIC-ICQ reference.
    const double bic = bic_icq(fit, fit.samples_final, lf);
    out["model"] = model_json(fit, data, bic);
    write_text(opt.output, out.dump(2) + "\n");
    return 0;
}

int run_select(const CommonOptions& opt) {
    const SurvivalDataset data = standardize(read_survival_csv(opt.input));
    data.validate();
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, opt.intervals);
    const FitConfig cfg = make_fit_config(opt);

    json out;
    out["config"] = config_json(opt, "select");
    json gr_diag;
    const int r = resolve_r(opt, data, grid, cfg, &gr_diag);
    if (!gr_diag.empty()) out["growth_ratio"] = gr_diag;
    out["r"] = r;

    const LongFormDataset lf = expand_long_form(data, grid);
    const LambdaGrids grids = lambda_grid(lf, cfg, r, opt.n_lambda);
    const SelectionPath path = two_stage_search(lf, r, cfg, grids);

    out["lambda0_grid"] = vector_json(grids.lambda0);
    out["lambda1_grid"] = vector_json(grids.lambda1);
    json entries = json::array();
    for (const PathEntry& entry : path.entries) {
        json e;
        e["lambda0"] = entry.lambda0;
        e["lambda1"] = entry.lambda1;
        e["stage"] = entry.stage;
        e["bic_icq"] = entry.bic;
        e["n_selected_fixed"] = entry.fit.selected_fixed.size();
        e["n_selected_random"] = entry.fit.selected_random.size();
        e["converged"] = entry.fit.converged;
        e["em_iterations"] = entry.fit.em_iterations;
        entries.push_back(e);
    }
    out["path"] = entries;
    out["best_index"] = path.best_index;
    out["lambda1_opt"] = path.entries[path.lambda1_opt_index].lambda1;
    out["model"] = model_json(path.best(), data, path.entries[path.best_index].bic);
    write_text(opt.output, out.dump(2) + "\n");
    return 0;
}

int run_estimate_r(const CommonOptions& opt) {
    const SurvivalDataset data = standardize(read_survival_csv(opt.input));
    data.validate();
    const IntervalGrid grid = compute_cutpoints(data.time, data.status, opt.intervals);
    const FitConfig cfg = make_fit_config(opt);

    const PseudoEffectsMatrix pseudo = pseudo_random_effects(data, grid, cfg);
    const GrowthRatioResult gr = growth_ratio_r(pseudo.G);
    json out;
    out["config"] = config_json(opt, "estimate-r");
    out["eigenvalues"] = vector_json(gr.eigenvalues);
    out["growth_ratios"] = vector_json(gr.growth_ratios);
    out["u"] = gr.u;
    out["r_hat"] = gr.r_hat;
    write_text(opt.output, out.dump(2) + "\n");
    return 0;
}

struct SimOptions {
    int n = 1000;
    int groups = 5;
    int p = 100;
    double beta_value = 1.0;
    std::string preset = "moderate";
    double censor_max = 5.0;
};

void add_sim_flags(CLI::App* cmd, SimOptions& sim) {
    cmd->add_option("--n", sim.n, "subjects");
    cmd->add_option("--groups", sim.groups, "groups");
    cmd->add_option("--p", sim.p, "covariates");
    cmd->add_option("--beta-value", sim.beta_value, "true effect size on the first 5 covariates");
    cmd->add_option("--preset", sim.preset, "loading preset: small|moderate")
        ->check(CLI::IsMember({"small", "moderate"}));
    cmd->add_option("--censor-max", sim.censor_max, "uniform censoring upper bound");
}

SimConfig make_sim_config(const SimOptions& sim, std::uint64_t seed) {
    SimConfig cfg = SimConfig::paper_default(sim.p, sim.groups, sim.beta_value, sim.preset, seed);
    cfg.n_subjects = sim.n;
    cfg.censor_max = sim.censor_max;
    return cfg;
}

json sim_config_json(const SimOptions& sim, std::uint64_t seed) {
    json out;
    out["n"] = sim.n;
    out["groups"] = sim.groups;
    out["p"] = sim.p;
    out["beta_value"] = sim.beta_value;
    out["preset"] = sim.preset;
    out["censor_max"] = sim.censor_max;
    out["seed"] = seed;
    return out;
}

int run_simulate(const SimOptions& sim, const std::string& output, std::uint64_t seed) {
    const SimConfig cfg = make_sim_config(sim, seed);
    const SurvivalDataset data = simulate_dataset(cfg);
    write_survival_csv(data, output);
    return 0;
}

int run_bench(const CommonOptions& opt, const SimOptions& sim, int replicates) {
    BenchConfig bench;
    bench.fit = make_fit_config(opt);
    bench.n_lambda = opt.n_lambda;
    bench.r = opt.r_mode == "auto" ? 0 : std::stoi(opt.r_mode);
    bench.threads = opt.threads;
    const SimConfig cfg = make_sim_config(sim, opt.seed);
    const BenchSummary summary = run_replicates(cfg, bench, replicates);

    // CSV: one row per replicate plus a summary row, Table-style headers.
    std::string csv =
        "replicate,seed,tp_fixef,fp_fixef,tp_ranef,fp_ranef,t_med_hours,abs_dev_mean,frob_norm,"
        "censor_rate,status\n";
    char buf[512];
    for (std::size_t i = 0; i < summary.replicates.size(); ++i) {
        const SelectionMetrics& m = summary.replicates[i];
        std::snprintf(buf, sizeof(buf),
                      "%zu,%llu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%s\n", i,
                      static_cast<unsigned long long>(summary.seeds[i]), m.tp_fixed, m.fp_fixed,
                      m.tp_random, m.fp_random, m.runtime_seconds / 3600.0, m.mean_abs_dev,
                      m.frob_std, m.censor_rate, m.failed ? "failed" : "ok");
        csv += buf;
    }
    const SelectionMetrics& mm = summary.means;
    std::snprintf(buf, sizeof(buf), "summary,%llu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%s\n",
                  static_cast<unsigned long long>(opt.seed), mm.tp_fixed, mm.fp_fixed, mm.tp_random,
                  mm.fp_random, summary.median_runtime_hours, mm.mean_abs_dev, mm.frob_std,
                  mm.censor_rate, summary.n_failed == 0 ? "ok" : "partial");
    csv += buf;
    write_text(opt.output, csv);

    json out;
    out["config"] = config_json(opt, "bench");
    out["config"]["replicates"] = replicates;
    out["config"]["sim"] = sim_config_json(sim, opt.seed);
    json reps = json::array();
    for (std::size_t i = 0; i < summary.replicates.size(); ++i) {
        const SelectionMetrics& m = summary.replicates[i];
        json e;
        e["replicate"] = i;
        e["seed"] = summary.seeds[i];
        e["failed"] = m.failed;
        e["tp_fixef"] = m.tp_fixed;
        e["fp_fixef"] = m.fp_fixed;
        e["tp_ranef"] = m.tp_random;
        e["fp_ranef"] = m.fp_random;
        e["abs_dev_mean"] = m.mean_abs_dev;
        e["frob_norm"] = m.frob_std;
        e["censor_rate"] = m.censor_rate;
        e["runtime_hours"] = m.runtime_seconds / 3600.0;
        reps.push_back(e);
    }
    out["replicates"] = reps;
    json means;
    means["tp_fixef"] = mm.tp_fixed;
    means["fp_fixef"] = mm.fp_fixed;
    means["tp_ranef"] = mm.tp_random;
    means["fp_ranef"] = mm.fp_random;
    means["abs_dev_mean"] = mm.mean_abs_dev;
    means["frob_norm"] = mm.frob_std;
    means["censor_rate"] = mm.censor_rate;
    means["t_med_hours"] = summary.median_runtime_hours;
    means["n_failed"] = summary.n_failed;
    out["summary"] = means;
    write_text(opt.output + ".json", out.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"penalized piecewise constant hazard mixed-effects survival models"};
    app.require_subcommand(1);

    CommonOptions opt;
    SimOptions sim;
    double lambda0 = 0.0, lambda1 = 0.0;
    int replicates = 10;

    CLI::App* fit = app.add_subcommand("fit", "one MCECM fit at a fixed (lambda0, lambda1)");
    add_fit_flags(fit, opt);
    fit->add_option("--lambda0", lambda0, "fixed-effect penalty")->required();
    fit->add_option("--lambda1", lambda1, "random-effect penalty")->required();

    CLI::App* select = app.add_subcommand("select", "two-stage penalty search with BIC-ICQ");
    add_fit_flags(select, opt);

    CLI::App* estimate =
        app.add_subcommand("estimate-r", "Growth Ratio estimate of the latent factor count");
    add_fit_flags(estimate, opt);

    CLI::App* simulate = app.add_subcommand("simulate", "draw a synthetic dataset CSV");
    simulate->add_option("--output", opt.output, "output CSV")->required();
    simulate->add_option("--seed", opt.seed, "master seed");
    add_sim_flags(simulate, sim);

    CLI::App* bench = app.add_subcommand("bench", "replicate study with selection metrics");
    add_fit_flags(bench, opt, /*with_input=*/false);
    add_sim_flags(bench, sim);
    bench->add_option("--replicates", replicates, "number of replicates");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) return run_fit(opt, lambda0, lambda1);
        if (select->parsed()) return run_select(opt);
        if (estimate->parsed()) return run_estimate_r(opt);
        if (simulate->parsed()) return run_simulate(sim, opt.output, opt.seed);
        if (bench->parsed()) return run_bench(opt, sim, replicates);
    } catch (const Error& err) {
        json out;
        out["error"]["code"] = err.code();
        out["error"]["message"] = err.what();
        std::cout << out.dump(2) << std::endl;
        return 1;
    } catch (const std::exception& err) {
        json out;
        out["error"]["code"] = "UNKNOWN";
        out["error"]["message"] = err.what();
        std::cout << out.dump(2) << std::endl;
        return 1;
    }
    return 0;
}
