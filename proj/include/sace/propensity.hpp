#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "core_data.hpp"

namespace sace {

struct SurvivalObservation {
    double time = 0.0;
    int event = 0; // 1 = treatment observed
    Eigen::VectorXd covariates;
};

// Time to treatment as a right-censored observation; t_z already encodes the
// censoring by death or by the horizon.
inline SurvivalObservation to_survival(const PatientRecord &r) {
    SurvivalObservation o;
    o.time = r.t_z;
    o.event = r.z;
    o.covariates = Eigen::Map<const Eigen::VectorXd>(r.covariates.data(),
                                                     static_cast<Eigen::Index>(r.covariates.size()));
    return o;
}

inline std::vector<SurvivalObservation> to_survival(const Dataset &ds) {
    std::vector<SurvivalObservation> out;
    out.reserve(ds.size());
    for (const auto &r : ds.records)
        out.push_back(to_survival(r));
    return out;
}

struct PartialLikelihood {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Breslow log partial likelihood with gradient and Hessian.
inline PartialLikelihood cox_partial_likelihood(const std::vector<SurvivalObservation> &obs,
                                                const Eigen::VectorXd &beta) {
    const Eigen::Index p = beta.size();
    const std::size_t n = obs.size();
    PartialLikelihood out{0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
    if (n == 0)
        return out;

    std::vector<double> lp(n);
    for (std::size_t i = 0; i < n; ++i)
        lp[i] = obs[i].covariates.dot(beta);
    const double shift = *std::max_element(lp.begin(), lp.end());

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return obs[a].time > obs[b].time; });

    // Risk-set sums accumulated from the longest time downward.
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    std::size_t k = 0;
    while (k < n) {
        const double t = obs[order[k]].time;
        std::size_t end = k;
        while (end < n && obs[order[end]].time == t)
            ++end;
        double events = 0.0;
        Eigen::VectorXd x_events = Eigen::VectorXd::Zero(p);
        double lp_events = 0.0;
        for (std::size_t q = k; q < end; ++q) {
            const auto &o = obs[order[q]];
            const double w = std::exp(lp[order[q]] - shift);
            s0 += w;
            s1.noalias() += w * o.covariates;
            s2.noalias() += w * o.covariates * o.covariates.transpose();
            if (o.event) {
                events += 1.0;
                x_events += o.covariates;
                lp_events += lp[order[q]];
            }
        }
        if (events > 0.0) {
            const Eigen::VectorXd mean = s1 / s0;
            out.value += lp_events - events * (std::log(s0) + shift);
            out.gradient += x_events - events * mean;
            out.hessian -= events * (s2 / s0 - mean * mean.transpose());
        }
        k = end;
    }
    return out;
}

struct CoxFit {
    Eigen::VectorXd beta;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string diagnostic;
};

struct CoxOptions {
    double tolerance = 1e-8; // on the gradient max-norm
    int max_iter = 50;
    int max_halvings = 30;
};

// Newton-Raphson with step halving on the Breslow partial likelihood.
inline CoxFit fit_cox(const std::vector<SurvivalObservation> &obs, const CoxOptions &opt = {}) {
    if (obs.empty())
        throw ValidationError("Cox fit: no observations");
    const Eigen::Index p = obs.front().covariates.size();
    std::size_t events = 0;
    for (const auto &o : obs) {
        if (o.covariates.size() != p)
            throw ValidationError("Cox fit: inconsistent covariate dimensions");
        if (!(o.time > 0.0))
            throw ValidationError("Cox fit: observation times must be positive");
        events += o.event ? 1 : 0;
    }
    if (events == 0)
        throw ValidationError("Cox fit: at least one event is required");

    CoxFit fit;
    fit.beta = Eigen::VectorXd::Zero(p);
    auto pl = cox_partial_likelihood(obs, fit.beta);

    for (fit.iterations = 0; fit.iterations <= opt.max_iter; ++fit.iterations) {
        if (p == 0 || pl.gradient.lpNorm<Eigen::Infinity>() < opt.tolerance) {
            fit.converged = true;
            break;
        }
        if (fit.iterations == opt.max_iter)
            break;
        const Eigen::MatrixXd info = -pl.hessian;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
        const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
        if (eig.eigenvalues().minCoeff() <= 1e-12 * top) {
            if (fit.iterations == 0)
                throw ValidationError(
                    "Cox fit: covariates are collinear on the event risk sets");
            fit.diagnostic = "information matrix became singular at iteration " +
                             std::to_string(fit.iterations) +
                             "; likely monotone likelihood (separation)";
            break;
        }
        const Eigen::VectorXd step = info.ldlt().solve(pl.gradient);
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opt.max_halvings; ++h, scale *= 0.5) {
            Eigen::VectorXd trial = fit.beta + scale * step;
            auto next = cox_partial_likelihood(obs, trial);
            // Near the optimum the gain is below rounding noise; allow for it.
            const double slack = 1e-12 * (1.0 + std::abs(pl.value));
            if (std::isfinite(next.value) && next.value >= pl.value - slack) {
                fit.beta = std::move(trial);
                pl = std::move(next);
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            fit.diagnostic = "step halving failed to increase the partial likelihood";
            break;
        }
    }
    fit.loglik = pl.value;

    if (fit.converged && fit.iterations > 0 && p > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-pl.hessian);
        const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
        if (eig.eigenvalues().minCoeff() <= 1e-8 * top) {
            fit.converged = false;
            fit.diagnostic =
                "gradient vanished with a singular information matrix; likely monotone "
                "likelihood (separation), |beta|max = " +
                text::format_double(fit.beta.lpNorm<Eigen::Infinity>());
        }
    }
    if (!fit.converged && fit.diagnostic.empty())
        fit.diagnostic = "no convergence within " + std::to_string(opt.max_iter) +
                         " Newton steps (gradient max-norm " +
                         text::format_double(pl.gradient.lpNorm<Eigen::Infinity>()) + ")";
    return fit;
}

// Generalized propensity score: the Cox linear predictor.
inline double linear_predictor(const CoxFit &fit, const std::vector<double> &covariates) {
    if (static_cast<Eigen::Index>(covariates.size()) != fit.beta.size())
        throw ValidationError("linear predictor: covariate dimension " +
                              std::to_string(covariates.size()) + " does not match " +
                              std::to_string(fit.beta.size()) + " coefficients");
    double ps = 0.0;
    for (std::size_t j = 0; j < covariates.size(); ++j)
        ps += fit.beta[static_cast<Eigen::Index>(j)] * covariates[j];
    return ps;
}

inline double linear_predictor(const CoxFit &fit, const PatientRecord &r) {
    return linear_predictor(fit, r.covariates);
}

inline std::vector<double> propensity_scores(const CoxFit &fit, const Dataset &ds) {
    std::vector<double> ps;
    ps.reserve(ds.size());
    for (const auto &r : ds.records)
        ps.push_back(linear_predictor(fit, r));
    return ps;
}

// (x, x^2, ..., x^d); empty for d = 0.
inline std::vector<double> polynomial_basis(double x, int degree) {
    if (degree < 0)
        throw ValidationError("polynomial degree must be non-negative");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(degree));
    double power = 1.0;
    for (int k = 1; k <= degree; ++k) {
        power *= x;
        out.push_back(power);
    }
    return out;
}

// Degree-d polynomial in the propensity score after min-max rescaling of the
// fit sample to [-1, 1].
struct PsBasis {
    double lo = 0.0;
    double hi = 0.0;
    int degree = 0;

    static PsBasis fit(const std::vector<double> &ps, int degree) {
        if (degree < 0)
            throw ValidationError("polynomial degree must be non-negative");
        PsBasis b;
        b.degree = degree;
        if (!ps.empty()) {
            auto [mn, mx] = std::minmax_element(ps.begin(), ps.end());
            b.lo = *mn;
            b.hi = *mx;
        }
        return b;
    }

    double rescale(double ps) const {
        if (!(hi > lo))
            return 0.0;
        return 2.0 * (ps - lo) / (hi - lo) - 1.0;
    }

    std::vector<double> expand(double ps) const { return polynomial_basis(rescale(ps), degree); }
};

} // namespace sace
