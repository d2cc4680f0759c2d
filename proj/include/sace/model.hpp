#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "core_data.hpp"
#include "propensity.hpp"

namespace sace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowRef = Eigen::Ref<const Eigen::RowVectorXd>;

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// Which columns enter each regression.
struct DesignOptions {
    int ps_degree = 1;
    // Extra covariate columns (dataset indices) appended to X2 and X3.
    std::vector<std::size_t> strata_extra;
    std::vector<std::size_t> missing_extra;
};

struct ModelLayout {
    std::vector<std::string> x1_ll;    // intercept, z, t_z, ps1..psd
    std::vector<std::string> x1_other; // intercept, ps1..psd
    std::vector<std::string> x2;       // strata model
    std::vector<std::string> x3;       // missingness model

    // Column of the treatment indicator in X1,LL: its coefficient is the SACE.
    static constexpr Eigen::Index z_column = 1;
    static constexpr Eigen::Index t_z_column = 2;

    // sd used to standardize t_z; converts its coefficient back to per-month units.
    double t_z_sd = 1.0;
};

// Model-ready view of a dataset: observed groups, outcomes and design rows.
struct ModelData {
    ModelLayout layout;
    std::vector<ObservedGroup> group;
    std::vector<double> y; // NaN when absent
    RowMatrix x1_ll;
    RowMatrix x1_other;
    RowMatrix x2;
    RowMatrix x3;
    Scaling t_z_scale; // standardization applied to t_z inside X1,LL

    std::size_t size() const { return group.size(); }
    int arm(std::size_t i) const { return arm_of(group[i]); }

    RowRef x1(std::size_t i, Stratum g) const {
        const auto r = static_cast<Eigen::Index>(i);
        return g == Stratum::LL ? RowRef(x1_ll.row(r)) : RowRef(x1_other.row(r));
    }

    ModelData subset(const std::vector<std::size_t> &keep) const {
        ModelData out;
        out.layout = layout;
        out.t_z_scale = t_z_scale;
        const auto m = static_cast<Eigen::Index>(keep.size());
        out.x1_ll.resize(m, x1_ll.cols());
        out.x1_other.resize(m, x1_other.cols());
        out.x2.resize(m, x2.cols());
        out.x3.resize(m, x3.cols());
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto i = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(k)]);
            out.group.push_back(group[static_cast<std::size_t>(i)]);
            out.y.push_back(y[static_cast<std::size_t>(i)]);
            out.x1_ll.row(k) = x1_ll.row(i);
            out.x1_other.row(k) = x1_other.row(i);
            out.x2.row(k) = x2.row(i);
            out.x3.row(k) = x3.row(i);
        }
        return out;
    }

    // Complete-case view: survivors with a missing outcome removed.
    ModelData complete_cases() const {
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < size(); ++i)
            if (!outcome_missing(group[i]))
                keep.push_back(i);
        return subset(keep);
    }
};

inline ModelLayout make_layout(const Dataset &ds, const DesignOptions &opt) {
    ModelLayout l;
    std::vector<std::string> ps_cols;
    for (int k = 1; k <= opt.ps_degree; ++k)
        ps_cols.push_back("ps" + std::to_string(k));
    l.x1_ll = {"intercept", "z", "t_z"};
    l.x1_ll.insert(l.x1_ll.end(), ps_cols.begin(), ps_cols.end());
    l.x1_other = {"intercept"};
    l.x1_other.insert(l.x1_other.end(), ps_cols.begin(), ps_cols.end());
    l.x2 = l.x1_other;
    for (auto j : opt.strata_extra)
        l.x2.push_back(ds.covariate_names.at(j));
    l.x3 = l.x1_other;
    for (auto j : opt.missing_extra)
        l.x3.push_back(ds.covariate_names.at(j));
    return l;
}

inline ModelData build_model_data(const Dataset &ds, const std::vector<double> &ps,
                                  const PsBasis &basis, const DesignOptions &opt) {
    if (ps.size() != ds.size())
        throw ValidationError("propensity scores do not match the dataset size");
    if (opt.ps_degree != basis.degree)
        throw ValidationError("design degree does not match the propensity basis");
    ModelData md;
    md.layout = make_layout(ds, opt);
    const auto n = static_cast<Eigen::Index>(ds.size());
    const auto d = static_cast<Eigen::Index>(opt.ps_degree);
    md.x1_ll.resize(n, 3 + d);
    md.x1_other.resize(n, 1 + d);
    md.x2.resize(n, static_cast<Eigen::Index>(md.layout.x2.size()));
    md.x3.resize(n, static_cast<Eigen::Index>(md.layout.x3.size()));

    if (n > 1) {
        double sum = 0.0, ss = 0.0;
        for (const auto &r : ds.records)
            sum += r.t_z;
        const double mean = sum / static_cast<double>(n);
        for (const auto &r : ds.records)
            ss += (r.t_z - mean) * (r.t_z - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        md.t_z_scale = {mean, sd > 0.0 ? sd : 1.0};
    }
    md.layout.t_z_sd = md.t_z_scale.sd;

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &r = ds.records[static_cast<std::size_t>(i)];
        md.group.push_back(classify_observed_group(r));
        md.y.push_back(r.y ? *r.y : std::nan(""));
        const auto b = basis.expand(ps[static_cast<std::size_t>(i)]);
        md.x1_ll(i, 0) = 1.0;
        md.x1_ll(i, 1) = r.z;
        md.x1_ll(i, 2) = (r.t_z - md.t_z_scale.mean) / md.t_z_scale.sd;
        md.x1_other(i, 0) = 1.0;
        md.x2(i, 0) = 1.0;
        md.x3(i, 0) = 1.0;
        for (Eigen::Index k = 0; k < d; ++k) {
            const double v = b[static_cast<std::size_t>(k)];
            md.x1_ll(i, 3 + k) = v;
            md.x1_other(i, 1 + k) = v;
            md.x2(i, 1 + k) = v;
            md.x3(i, 1 + k) = v;
        }
        Eigen::Index c = 1 + d;
        for (auto j : opt.strata_extra)
            md.x2(i, c++) = r.covariates.at(j);
        c = 1 + d;
        for (auto j : opt.missing_extra)
            md.x3(i, c++) = r.covariates.at(j);
    }
    return md;
}

// Multinomial-logit coefficients; alpha[DD] is the fixed zero reference and
// alpha[DL] is empty under monotonicity.
struct StrataParams {
    std::array<Eigen::VectorXd, 4> alpha;
};

// Normal outcome regressions for LL, LD, DL (indexed by stratum).
struct OutcomeParams {
    std::array<Eigen::VectorXd, 3> eta;
    std::array<double, 3> sigma2{1.0, 1.0, 1.0};
};

// Logistic missingness coefficients per survivor cell; empty when the mode
// does not model missingness.
struct MissingnessParams {
    std::array<Eigen::VectorXd, 4> theta;

    bool present() const { return theta[0].size() > 0; }
};

struct ModelParams {
    StrataParams strata;
    OutcomeParams outcome;
    MissingnessParams missing;
};

// Parameters at their zero/unit starting point for the given layout and model.
inline ModelParams zero_params(const ModelLayout &l, const ModelConfig &cfg) {
    ModelParams p;
    const auto k2 = static_cast<Eigen::Index>(l.x2.size());
    for (Stratum g : all_strata)
        if (stratum_active(g, cfg))
            p.strata.alpha[index(g)] = Eigen::VectorXd::Zero(k2);
    for (Stratum g : outcome_strata) {
        if (!stratum_active(g, cfg))
            continue;
        const auto k1 = static_cast<Eigen::Index>(g == Stratum::LL ? l.x1_ll.size()
                                                                   : l.x1_other.size());
        p.outcome.eta[index(g)] = Eigen::VectorXd::Zero(k1);
        p.outcome.sigma2[index(g)] = 1.0;
    }
    if (cfg.mode == MissingMode::latent)
        for (std::size_t c = 0; c < missing_cells.size(); ++c)
            if (stratum_active(missing_cells[c].stratum, cfg))
                p.missing.theta[c] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.x3.size()));
    return p;
}

struct OutcomePrior {
    Eigen::VectorXd mu;
    Eigen::MatrixXd V; // eta | sigma2 ~ N(mu, sigma2 V)
    double nu = 0.01;  // sigma2 ~ InvGamma(nu, omega)
    double omega = 0.01;
};

struct Priors {
    std::array<OutcomePrior, 3> outcome;
    double alpha_sd = 10.0;
    double theta_sd = 10.0;

    static Priors defaults(const ModelLayout &l) {
        Priors p;
        for (Stratum g : outcome_strata) {
            const auto k = static_cast<Eigen::Index>(g == Stratum::LL ? l.x1_ll.size()
                                                                      : l.x1_other.size());
            p.outcome[index(g)] = {Eigen::VectorXd::Zero(k),
                                   100.0 * Eigen::MatrixXd::Identity(k, k), 0.01, 0.01};
        }
        return p;
    }

    void validate(const ModelLayout &l) const {
        if (!(alpha_sd > 0.0) || !(theta_sd > 0.0))
            throw ValidationError("prior: alpha_sd and theta_sd must be positive");
        for (Stratum g : outcome_strata) {
            const auto &o = outcome[index(g)];
            const auto k = static_cast<Eigen::Index>(g == Stratum::LL ? l.x1_ll.size()
                                                                      : l.x1_other.size());
            if (o.mu.size() != k || o.V.rows() != k || o.V.cols() != k)
                throw ValidationError("prior for stratum " + std::string(name(g)) +
                                      " has wrong dimension");
            if (!(o.nu > 0.0) || !(o.omega > 0.0))
                throw ValidationError("prior: nu and omega must be positive");
            Eigen::LLT<Eigen::MatrixXd> llt(o.V);
            if (llt.info() != Eigen::Success)
                throw ValidationError("prior V for stratum " + std::string(name(g)) +
                                      " is not positive definite");
        }
    }
};

// log pi_g for all four strata (DL gets -inf under monotonicity).
inline std::array<double, 4> log_strata_probs(const StrataParams &sp, RowRef x2,
                                              bool monotonicity) {
    std::array<double, 4> lp{};
    double top = neg_inf;
    for (Stratum g : all_strata) {
        const auto k = index(g);
        if (monotonicity && g == Stratum::DL) {
            lp[k] = neg_inf;
            continue;
        }
        lp[k] = (g == Stratum::DD || sp.alpha[k].size() == 0) ? 0.0 : x2.dot(sp.alpha[k]);
        top = std::max(top, lp[k]);
    }
    double sum = 0.0;
    for (double v : lp)
        if (v != neg_inf)
            sum += std::exp(v - top);
    const double lse = top + std::log(sum);
    for (double &v : lp)
        if (v != neg_inf)
            v -= lse;
    return lp;
}

inline std::array<double, 4> strata_probs(const StrataParams &sp, RowRef x2, bool monotonicity) {
    auto lp = log_strata_probs(sp, x2, monotonicity);
    std::array<double, 4> out{};
    for (std::size_t k = 0; k < 4; ++k)
        out[k] = std::exp(lp[k]);
    return out;
}

// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double log_logistic(double x) { return -softplus(-x); }

inline const Eigen::VectorXd &theta_for(const MissingnessParams &mp, Stratum g, int z) {
    const int c = missing_cell_index(g, z);
    if (c < 0)
        throw ValidationError("no missingness model for stratum " + std::string(name(g)) +
                              " under arm " + std::to_string(z) +
                              ": that stratum does not survive this arm");
    const auto &theta = mp.theta[static_cast<std::size_t>(c)];
    if (theta.size() == 0)
        throw ValidationError("missingness parameters absent for cell " +
                              cell_name(static_cast<std::size_t>(c)));
    return theta;
}

// Pr(M = 1 | G = g, Z = z, S = 1).
inline double missing_prob(const MissingnessParams &mp, Stratum g, int z, RowRef x3) {
    const double eta = x3.dot(theta_for(mp, g, z));
    return 1.0 / (1.0 + std::exp(-eta));
}

// log Pr(M = m | G = g, Z = z, S = 1).
inline double missing_logprob(const MissingnessParams &mp, Stratum g, int z, RowRef x3,
                              bool missing) {
    const double eta = x3.dot(theta_for(mp, g, z));
    return missing ? log_logistic(eta) : log_logistic(-eta);
}

inline double outcome_logdensity(const OutcomeParams &op, Stratum g, RowRef x1, double y) {
    if (g == Stratum::DD)
        throw ValidationError("no outcome model for stratum DD");
    const auto k = index(g);
    if (op.eta[k].size() != x1.size())
        throw ValidationError("outcome design dimension mismatch for stratum " +
                              std::string(name(g)));
    const double s2 = op.sigma2[k];
    const double r = y - x1.dot(op.eta[k]);
    return -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * r * r / s2;
}

namespace detail {

// Log likelihood cell given precomputed log strata probabilities.
inline double cell_logvalue(const ModelData &md, std::size_t i, Stratum g, const ModelParams &p,
                            const ModelConfig &cfg, const std::array<double, 4> &log_pi) {
    const ObservedGroup o = md.group[i];
    double v = log_pi[index(g)];
    if (v == neg_inf || !survived(o))
        return v;
    const auto r = static_cast<Eigen::Index>(i);
    if (cfg.mode == MissingMode::latent)
        v += missing_logprob(p.missing, g, arm_of(o), md.x3.row(r), outcome_missing(o));
    if (outcome_observed(o))
        v += outcome_logdensity(p.outcome, g, md.x1(i, g), md.y[i]);
    return v;
}

inline double log_sum_exp(double a, double b) {
    if (a == neg_inf)
        return b;
    if (b == neg_inf)
        return a;
    const double top = std::max(a, b);
    return top + std::log(std::exp(a - top) + std::exp(b - top));
}

} // namespace detail

// Log of the likelihood cell for record i if its stratum were g.
inline double complete_data_logcontribution(const ModelData &md, std::size_t i, Stratum g,
                                            const ModelParams &p, const ModelConfig &cfg) {
    if (!feasible_strata(md.group[i], cfg.monotonicity).contains(g))
        throw ValidationError("stratum " + std::string(name(g)) + " is infeasible for group " +
                              std::string(name(md.group[i])));
    const auto lp = log_strata_probs(p.strata, md.x2.row(static_cast<Eigen::Index>(i)),
                                     cfg.monotonicity);
    return detail::cell_logvalue(md, i, g, p, cfg, lp);
}

// Record i's contribution to the observed-data log-likelihood.
inline double record_loglik(const ModelData &md, std::size_t i, const ModelParams &p,
                            const ModelConfig &cfg) {
    const auto lp = log_strata_probs(p.strata, md.x2.row(static_cast<Eigen::Index>(i)),
                                     cfg.monotonicity);
    double total = neg_inf;
    for (Stratum g : feasible_strata(md.group[i], cfg.monotonicity))
        total = detail::log_sum_exp(total, detail::cell_logvalue(md, i, g, p, cfg, lp));
    return total;
}

// Sum over records of log sum over feasible strata of the likelihood cells.
// Under mcar, survivors with a missing outcome do not contribute.
inline double observed_data_loglik(const ModelData &md, const ModelParams &p,
                                   const ModelConfig &cfg) {
    double total = 0.0;
    for (std::size_t i = 0; i < md.size(); ++i) {
        if (cfg.mode == MissingMode::mcar && outcome_missing(md.group[i]))
            continue;
        total += record_loglik(md, i, p, cfg);
    }
    return total;
}

} // namespace sace
