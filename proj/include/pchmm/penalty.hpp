#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "pchmm/error.hpp"

namespace pchmm {

enum class PenaltyKind { lasso, mcp, scad };

inline const char* to_string(PenaltyKind kind) {
    switch (kind) {
        case PenaltyKind::lasso: return "lasso";
        case PenaltyKind::mcp: return "mcp";
        case PenaltyKind::scad: return "scad";
    }
    return "?";
}

inline PenaltyKind penalty_kind_from_string(const std::string& name) {
    if (name == "lasso") return PenaltyKind::lasso;
    if (name == "mcp") return PenaltyKind::mcp;
    if (name == "scad") return PenaltyKind::scad;
    throw InvalidParameter("unknown penalty kind: " + name);
}

inline double default_concavity(PenaltyKind kind) {
    return kind == PenaltyKind::scad ? 3.7 : 3.0;
}

/// Folded-concave penalty family with an optional ridge admixture. pi = 1 is
/// the pure penalty; pi < 1 blends in (1 - pi) * (lambda / 2) * t^2.
struct PenaltyConfig {
    PenaltyKind kind = PenaltyKind::mcp;
    double gamma = 3.0;
    double pi = 1.0;

    static PenaltyConfig make(PenaltyKind kind, double pi = 1.0) {
        return PenaltyConfig{kind, default_concavity(kind), pi};
    }

    void validate() const {
        if (kind == PenaltyKind::mcp && !(gamma > 1.0))
            throw InvalidParameter("mcp requires gamma > 1");
        if (kind == PenaltyKind::scad && !(gamma > 2.0))
            throw InvalidParameter("scad requires gamma > 2");
        if (!(pi > 0.0) || pi > 1.0) throw InvalidParameter("pi must lie in (0, 1]");
    }
};

namespace detail {

inline double pure_penalty(PenaltyKind kind, double gamma, double t, double lambda) {
    switch (kind) {
        case PenaltyKind::lasso:
            return lambda * t;
        case PenaltyKind::mcp:
            if (t <= gamma * lambda) return lambda * t - t * t / (2.0 * gamma);
            return gamma * lambda * lambda / 2.0;
        case PenaltyKind::scad:
            if (t <= lambda) return lambda * t;
            if (t <= gamma * lambda)
                return (gamma * lambda * t - 0.5 * (t * t + lambda * lambda)) / (gamma - 1.0);
            return lambda * lambda * (gamma + 1.0) / 2.0;
    }
    return 0.0;
}

inline double soft_threshold(double z, double threshold) {
    if (z > threshold) return z - threshold;
    if (z < -threshold) return z + threshold;
    return 0.0;
}

}  // namespace detail

/// pi * rho_kind(t; lambda, gamma) + (1 - pi) * (lambda / 2) * t^2 for t >= 0.
inline double penalty_value(const PenaltyConfig& cfg, double t, double lambda) {
    cfg.validate();
    if (!(t >= 0.0)) throw InvalidParameter("penalty argument must be nonnegative");
    if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be nonnegative");
    return cfg.pi * detail::pure_penalty(cfg.kind, cfg.gamma, t, lambda) +
           (1.0 - cfg.pi) * 0.5 * lambda * t * t;
}

/// argmin_x (1/(2c)) (x - z)^2 + pi rho(|x|; lambda, gamma) + (1-pi)(lambda/2) x^2.
///
/// Closed forms per region of |z|; the ridge admixture enters through the
/// factor 1 + c (1-pi) lambda. When the concave region would make the
/// subproblem nonconvex (step too large relative to gamma) the soft-threshold
/// branch is returned instead.
inline double prox_scalar(const PenaltyConfig& cfg, double z, double step, double lambda) {
    cfg.validate();
    if (!(step > 0.0)) throw InvalidParameter("prox step must be positive");
    if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be nonnegative");
    const double c = step;
    const double pi = cfg.pi;
    const double gamma = cfg.gamma;
    const double ridge = 1.0 + c * (1.0 - pi) * lambda;  // > 0
    const double az = std::abs(z);

    switch (cfg.kind) {
        case PenaltyKind::lasso:
            return detail::soft_threshold(z, c * pi * lambda) / ridge;
        case PenaltyKind::mcp: {
            const double denom = ridge - c * pi / gamma;
            if (denom <= 1e-12)  // nonconvex subproblem: soft-threshold fallback
                return detail::soft_threshold(z, c * pi * lambda) / ridge;
            if (az <= gamma * lambda * ridge)
                return detail::soft_threshold(z, c * pi * lambda) / denom;
            return z / ridge;
        }
        case PenaltyKind::scad: {
            const double denom = ridge - c * pi / (gamma - 1.0);
            if (denom <= 1e-12)
                return detail::soft_threshold(z, c * pi * lambda) / ridge;
            if (az <= c * pi * lambda + lambda * ridge)
                return detail::soft_threshold(z, c * pi * lambda) / ridge;
            if (az <= gamma * lambda * ridge)
                return detail::soft_threshold(z, c * pi * gamma * lambda / (gamma - 1.0)) / denom;
            return z / ridge;
        }
    }
    return z;
}

/// Groupwise proximal map: shrink the Euclidean norm with prox_scalar and
/// keep the direction. The zero vector maps to itself.
inline Eigen::VectorXd prox_group(const PenaltyConfig& cfg, const Eigen::VectorXd& z, double step,
                                  double lambda) {
    const double norm = z.norm();
    if (norm == 0.0) {
        cfg.validate();
        if (!(step > 0.0)) throw InvalidParameter("prox step must be positive");
        return Eigen::VectorXd::Zero(z.size());
    }
    const double shrunk = prox_scalar(cfg, norm, step, lambda);
    if (shrunk == 0.0) return Eigen::VectorXd::Zero(z.size());
    return (shrunk / norm) * z;
}

}  // namespace pchmm
