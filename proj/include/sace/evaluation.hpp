#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "draws.hpp"
#include "model.hpp"
#include "sampler.hpp"

namespace sace {

// Type-7 (linear interpolation) quantile of sorted data.
inline double quantile_type7(const std::vector<double> &sorted, double p) {
    if (sorted.empty())
        throw ValidationError("quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Effective sample size of one chain via Geyer's initial positive sequence.
inline double effective_sample_size(const std::vector<double> &x) {
    const std::size_t n = x.size();
    if (n < 2)
        return static_cast<double>(n);
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t)
            s += (x[t] - mean) * (x[t + lag] - mean);
        return s / static_cast<double>(n);
    };
    const double gamma0 = autocov(0);
    if (!(gamma0 > 0.0))
        return static_cast<double>(n);
    double tau = -1.0;
    for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
        const double pair = (autocov(2 * m) + autocov(2 * m + 1)) / gamma0;
        if (pair <= 0.0)
            break;
        tau += 2.0 * pair;
    }
    return static_cast<double>(n) / std::max(tau, 1.0 / std::log10(static_cast<double>(n) + 10.0));
}

// Potential scale reduction factor over equal-length chains.
inline double gelman_rubin(const std::vector<std::vector<double>> &chains) {
    if (chains.size() < 2)
        throw ValidationError("Gelman-Rubin requires at least two chains");
    const std::size_t n = chains.front().size();
    if (n < 2)
        throw ValidationError("Gelman-Rubin requires at least two draws per chain");
    for (const auto &c : chains)
        if (c.size() != n)
            throw ValidationError("Gelman-Rubin requires equal-length chains");
    const double m = static_cast<double>(chains.size());
    const double nd = static_cast<double>(n);
    std::vector<double> means;
    double w = 0.0;
    for (const auto &c : chains) {
        const double mu = std::accumulate(c.begin(), c.end(), 0.0) / nd;
        double ss = 0.0;
        for (double v : c)
            ss += (v - mu) * (v - mu);
        means.push_back(mu);
        w += ss / (nd - 1.0);
    }
    w /= m;
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0.0;
    for (double mu : means)
        b += (mu - grand) * (mu - grand);
    b *= nd / (m - 1.0);
    if (!(w > 0.0))
        return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    const double var_plus = (nd - 1.0) / nd * w + b / nd;
    return std::sqrt(var_plus / w);
}

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double lower = 0.0; // 2.5%
    double upper = 0.0; // 97.5%
    double ess = 0.0;
    double rhat = std::nan(""); // NaN with a single chain
};

struct PosteriorSummary {
    std::vector<ParameterSummary> rows;
    std::vector<std::string> warnings;

    const ParameterSummary &get(const std::string &name) const {
        for (const auto &r : rows)
            if (r.name == name)
                return r;
        throw ValidationError("no summary row for '" + name + "'");
    }
    const ParameterSummary &sace() const { return get(sace_name); }
};

inline ParameterSummary summarize_series(const std::string &name,
                                         const std::vector<std::vector<double>> &chains) {
    std::vector<double> pooled;
    for (const auto &c : chains)
        pooled.insert(pooled.end(), c.begin(), c.end());
    if (pooled.size() < 2)
        throw ValidationError("summary of '" + name + "' requires at least two draws");
    ParameterSummary s;
    s.name = name;
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    // Sum in sorted order so mean/sd do not depend on draw order.
    const double n = static_cast<double>(sorted.size());
    s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : sorted)
        ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
    s.lower = quantile_type7(sorted, 0.025);
    s.upper = quantile_type7(sorted, 0.975);
    s.ess = 0.0;
    for (const auto &c : chains)
        s.ess += effective_sample_size(c);
    if (chains.size() >= 2 && chains.front().size() >= 2)
        s.rhat = gelman_rubin(chains);
    return s;
}

inline PosteriorSummary summarize(const DrawTable &t) {
    if (t.total_draws() < 2)
        throw ValidationError("summary requires at least two draws");
    PosteriorSummary out;
    for (std::size_t k = 0; k < t.names.size(); ++k) {
        auto s = summarize_series(t.names[k], t.series(k));
        if (s.mean < s.lower || s.mean > s.upper)
            out.warnings.push_back("posterior of '" + s.name +
                                   "' is so skewed that its mean lies outside the 95% interval");
        out.rows.push_back(std::move(s));
    }
    return out;
}

inline PosteriorSummary summarize(const PosteriorSamples &s) { return summarize(to_draw_table(s)); }

inline PosteriorSummary select(const PosteriorSummary &s, const std::string &name) {
    PosteriorSummary out;
    out.rows.push_back(s.get(name));
    return out;
}

inline void write_summary_csv(const PosteriorSummary &s, std::ostream &out) {
    out << "parameter,mean,sd,q2.5,q97.5,ess,rhat\n";
    for (const auto &r : s.rows)
        out << r.name << ',' << text::format_double(r.mean) << ',' << text::format_double(r.sd)
            << ',' << text::format_double(r.lower) << ',' << text::format_double(r.upper) << ','
            << text::format_double(r.ess) << ',' << text::format_double(r.rhat) << '\n';
}

inline void write_summary_text(const PosteriorSummary &s, std::ostream &out) {
    std::size_t width = 9;
    for (const auto &r : s.rows)
        width = std::max(width, r.name.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %12s %10s %12s %12s %9s %7s\n", static_cast<int>(width),
                  "parameter", "mean", "sd", "2.5%", "97.5%", "ess", "rhat");
    out << buf;
    for (const auto &r : s.rows) {
        char rhat[16];
        if (std::isnan(r.rhat))
            std::snprintf(rhat, sizeof rhat, "%7s", "-");
        else
            std::snprintf(rhat, sizeof rhat, "%7.3f", r.rhat);
        std::snprintf(buf, sizeof buf, "%-*s %12.4f %10.4f %12.4f %12.4f %9.1f %s\n",
                      static_cast<int>(width), r.name.c_str(), r.mean, r.sd, r.lower, r.upper,
                      r.ess, rhat);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// DIC

struct DicResult {
    double dbar = 0.0;      // posterior mean deviance
    double d_at_mean = 0.0; // deviance at the posterior mean
    double p_d = 0.0;
    double dic = 0.0;
};

inline DicResult dic_from_deviances(const std::vector<double> &deviances, double d_at_mean) {
    if (deviances.empty())
        throw ValidationError("DIC requires at least one draw");
    DicResult r;
    r.dbar = std::accumulate(deviances.begin(), deviances.end(), 0.0) /
             static_cast<double>(deviances.size());
    r.d_at_mean = d_at_mean;
    r.p_d = r.dbar - r.d_at_mean;
    r.dic = r.dbar + r.p_d;
    return r;
}

inline DicResult operator+(const DicResult &a, const DicResult &b) {
    DicResult r;
    r.dbar = a.dbar + b.dbar;
    r.d_at_mean = a.d_at_mean + b.d_at_mean;
    r.p_d = r.dbar - r.d_at_mean;
    r.dic = r.dbar + r.p_d;
    return r;
}

// Component-wise posterior mean on the natural scale of each parameter.
inline ModelParams posterior_mean(const PosteriorSamples &s) {
    ModelParams mean;
    std::size_t count = 0;
    for (const auto &c : s.chains)
        for (const auto &p : c.draws) {
            if (count == 0) {
                mean = p;
            } else {
                for (std::size_t k = 0; k < 4; ++k)
                    if (mean.strata.alpha[k].size())
                        mean.strata.alpha[k] += p.strata.alpha[k];
                for (std::size_t k = 0; k < 3; ++k) {
                    if (mean.outcome.eta[k].size())
                        mean.outcome.eta[k] += p.outcome.eta[k];
                    mean.outcome.sigma2[k] += p.outcome.sigma2[k];
                }
                for (std::size_t k = 0; k < 4; ++k)
                    if (mean.missing.theta[k].size())
                        mean.missing.theta[k] += p.missing.theta[k];
            }
            ++count;
        }
    if (count == 0)
        throw ValidationError("posterior mean of an empty sample");
    const double inv = 1.0 / static_cast<double>(count);
    for (auto &a : mean.strata.alpha)
        a *= inv;
    for (std::size_t k = 0; k < 3; ++k) {
        mean.outcome.eta[k] *= inv;
        mean.outcome.sigma2[k] *= inv;
    }
    for (auto &t : mean.missing.theta)
        t *= inv;
    return mean;
}

// What the deviance measures.
enum class DevianceFocus {
    // -2 x the likelihood each mode is fitted with (mcar: complete cases only,
    // ignorable: no missingness term).
    fit,
    // -2 x the likelihood of the full observed data (Y, S, M); modes without a
    // stratum-dependent missingness model get a separately fitted model for M
    // (arm-specific logistic on X3 for ignorable, a constant rate for mcar).
    full_data
};

// Missingness-only logistic model that ignores the strata: cells are the two
// arms (ignorable) or all survivors pooled (mcar).
struct MissingnessOnlyModel {
    RowMatrix design;
    std::vector<std::vector<std::size_t>> rows;
    std::vector<std::vector<std::uint8_t>> missing;

    static MissingnessOnlyModel build(const ModelData &md, MissingMode mode) {
        MissingnessOnlyModel m;
        if (mode == MissingMode::mcar) {
            m.design = RowMatrix::Ones(static_cast<Eigen::Index>(md.size()), 1);
            m.rows.resize(1);
            m.missing.resize(1);
        } else {
            m.design = md.x3;
            m.rows.resize(2);
            m.missing.resize(2);
        }
        for (std::size_t i = 0; i < md.size(); ++i) {
            if (!survived(md.group[i]))
                continue;
            const std::size_t cell = mode == MissingMode::mcar ? 0 : static_cast<std::size_t>(md.arm(i));
            m.rows[cell].push_back(i);
            m.missing[cell].push_back(outcome_missing(md.group[i]) ? 1 : 0);
        }
        return m;
    }

    double deviance(const std::vector<Eigen::VectorXd> &theta) const {
        double ll = 0.0;
        for (std::size_t c = 0; c < rows.size(); ++c)
            ll += logistic_loglik(design, rows[c], missing[c], theta[c]);
        return -2.0 * ll;
    }

    // Adaptive random-walk chains matching the main sampler's schedule.
    std::vector<std::vector<Eigen::VectorXd>> sample(const SamplerConfig &cfg, double prior_sd) const {
        std::vector<std::vector<Eigen::VectorXd>> draws;
        for (int chain = 0; chain < cfg.chains; ++chain) {
            Rng rng = chain_rng(cfg.seed, 0x10000u + static_cast<std::uint64_t>(chain));
            std::vector<Eigen::VectorXd> theta(rows.size(), Eigen::VectorXd::Zero(design.cols()));
            std::vector<MhBlock> blocks(rows.size());
            for (std::size_t c = 0; c < rows.size(); ++c) {
                blocks[c].log_scale = initial_log_scale(cfg.mh_step_theta, design.cols());
                blocks[c].set_shape(logistic_information(design, rows[c], theta[c], prior_sd));
            }
            MhControl ctl{false, false, cfg.target_acceptance};
            for (int t = 1; t <= cfg.iterations; ++t) {
                const bool burning = t <= cfg.burn_in;
                ctl.adapting = burning && cfg.adapt_during_burnin;
                ctl.recording = !burning;
                for (std::size_t c = 0; c < rows.size(); ++c) {
                    if (ctl.adapting && t % cfg.adapt_interval == 0)
                        blocks[c].set_shape(
                            logistic_information(design, rows[c], theta[c], prior_sd));
                    auto target = [&](const Eigen::VectorXd &th) {
                        return logistic_loglik(design, rows[c], missing[c], th) +
                               normal_logprior(th, prior_sd);
                    };
                    double current = target(theta[c]);
                    mh_step(theta[c], current, target, blocks[c], ctl, rng);
                }
                if (!burning && (t - cfg.burn_in) % cfg.thin == 0)
                    draws.push_back(theta);
            }
        }
        return draws;
    }
};

inline DicResult compute_dic(const PosteriorSamples &s, const ModelData &full_data,
                             const Priors &priors, DevianceFocus focus = DevianceFocus::full_data) {
    const ModelConfig fitted = s.config.model();
    ModelConfig eval = fitted;
    if (focus == DevianceFocus::full_data && fitted.mode == MissingMode::mcar)
        eval.mode = MissingMode::ignorable;

    std::vector<double> deviances;
    for (std::size_t c = 0; c < s.chains.size(); ++c)
        for (std::size_t d = 0; d < s.chains[c].draws.size(); ++d) {
            const double dev = -2.0 * observed_data_loglik(full_data, s.chains[c].draws[d], eval);
            if (!std::isfinite(dev))
                throw NumericalError("non-finite deviance at chain " + std::to_string(c) +
                                     ", iteration " +
                                     std::to_string(s.chains[c].iteration[d]));
            deviances.push_back(dev);
        }
    const double at_mean = -2.0 * observed_data_loglik(full_data, posterior_mean(s), eval);
    if (!std::isfinite(at_mean))
        throw NumericalError("non-finite deviance at the posterior mean");
    DicResult result = dic_from_deviances(deviances, at_mean);

    if (focus == DevianceFocus::full_data && fitted.mode != MissingMode::latent) {
        const auto aux = MissingnessOnlyModel::build(full_data, fitted.mode);
        const auto draws = aux.sample(s.config, priors.theta_sd);
        std::vector<double> aux_dev;
        std::vector<Eigen::VectorXd> mean(aux.rows.size(), Eigen::VectorXd::Zero(aux.design.cols()));
        for (const auto &th : draws) {
            aux_dev.push_back(aux.deviance(th));
            for (std::size_t c = 0; c < th.size(); ++c)
                mean[c] += th[c] / static_cast<double>(draws.size());
        }
        result = result + dic_from_deviances(aux_dev, aux.deviance(mean));
    }
    return result;
}

} // namespace sace
