#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "model.hpp"

namespace sace {

using Rng = std::mt19937_64;

struct SamplerConfig {
    int iterations = 5000;
    int burn_in = 3000;
    int thin = 1;
    std::uint64_t seed = 42;
    int chains = 1;
    double mh_step_alpha = 1.0; // multiplier on the preconditioned random-walk scale
    double mh_step_theta = 1.0;
    bool adapt_during_burnin = true;
    MissingMode mode = MissingMode::latent;
    bool monotonicity = false;
    int ps_degree = 1;
    // When false the strata are never re-imputed (conjugate oracle checks).
    bool impute_strata = true;
    double target_acceptance = 0.35;
    int adapt_interval = 100;
    // Short pilot runs from different starting allocations; the chain continues
    // from the pilot with the highest observed-data log-likelihood. The strata
    // mixture has label-swapped local modes that a single start can fall into.
    int pilot_starts = 4;
    int pilot_iterations = 250;

    ModelConfig model() const { return {mode, monotonicity}; }

    void validate() const {
        if (iterations < 1 || burn_in < 0 || burn_in >= iterations)
            throw ValidationError("sampler: require 0 <= burn_in < iterations");
        if (thin < 1)
            throw ValidationError("sampler: thin must be >= 1");
        if (chains < 1)
            throw ValidationError("sampler: chains must be >= 1");
        if (!(mh_step_alpha > 0.0) || !(mh_step_theta > 0.0))
            throw ValidationError("sampler: MH step multipliers must be positive");
        if (ps_degree < 0)
            throw ValidationError("sampler: ps_degree must be non-negative");
        if (adapt_interval < 1)
            throw ValidationError("sampler: adapt_interval must be >= 1");
        if (pilot_starts < 1 || pilot_iterations < 0)
            throw ValidationError("sampler: need pilot_starts >= 1 and pilot_iterations >= 0");
    }

    std::size_t expected_draws() const {
        return static_cast<std::size_t>((iterations - burn_in) / thin);
    }
};

struct ChainState {
    ModelParams params;
    std::vector<Stratum> g;
    int iteration = 0;
};

// Independent, reproducible stream per (seed, chain).
inline Rng chain_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5ace5aceu};
    return Rng(seq);
}

// ---------------------------------------------------------------------------
// I-step

// Conditional probabilities of the feasible strata for record i: each likelihood
// cell divided by its row total. Computed in log space.
inline std::array<double, 2> stratum_posterior(const ModelData &md, std::size_t i,
                                               const ModelParams &p, const ModelConfig &cfg) {
    const auto fs = feasible_strata(md.group[i], cfg.monotonicity);
    if (fs.size() == 1)
        return {1.0, 0.0};
    const auto lp = log_strata_probs(p.strata, md.x2.row(static_cast<Eigen::Index>(i)),
                                     cfg.monotonicity);
    const double l0 = detail::cell_logvalue(md, i, fs[0], p, cfg, lp);
    const double l1 = detail::cell_logvalue(md, i, fs[1], p, cfg, lp);
    if (l0 == neg_inf && l1 == neg_inf)
        throw NumericalError("I-step: both feasible strata have zero likelihood for record " +
                             std::to_string(i));
    if (std::isnan(l0) || std::isnan(l1))
        throw NumericalError("I-step: NaN cell likelihood for record " + std::to_string(i));
    const double p0 = 1.0 / (1.0 + std::exp(l1 - l0));
    return {p0, 1.0 - p0};
}

inline void i_step(ChainState &state, const ModelData &md, const ModelConfig &cfg, Rng &rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < md.size(); ++i) {
        const auto fs = feasible_strata(md.group[i], cfg.monotonicity);
        if (fs.size() == 1) {
            state.g[i] = fs[0];
            continue;
        }
        const auto prob = stratum_posterior(md, i, state.params, cfg);
        state.g[i] = unif(rng) < prob[0] ? fs[0] : fs[1];
    }
}

// ---------------------------------------------------------------------------
// P-step: outcome regressions (normal / inverse-gamma conjugate)

struct NigPosterior {
    Eigen::VectorXd mean;      // mu_n
    Eigen::MatrixXd precision; // V_n^{-1}
    double shape = 0.0;        // a_n
    double rate = 0.0;         // b_n
};

inline NigPosterior nig_posterior(const Eigen::MatrixXd &x, const Eigen::VectorXd &y,
                                  const OutcomePrior &prior) {
    const Eigen::MatrixXd v_inv = prior.V.llt().solve(
        Eigen::MatrixXd::Identity(prior.V.rows(), prior.V.cols()));
    NigPosterior post;
    post.precision = v_inv + x.transpose() * x;
    Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
    if (llt.info() != Eigen::Success)
        throw NumericalError("outcome P-step: posterior precision is not positive definite");
    post.mean = llt.solve(v_inv * prior.mu + x.transpose() * y);
    const Eigen::VectorXd resid = y - x * post.mean;
    const Eigen::VectorXd shift = post.mean - prior.mu;
    post.shape = prior.nu + 0.5 * static_cast<double>(y.size());
    post.rate = prior.omega + 0.5 * (resid.squaredNorm() + shift.dot(v_inv * shift));
    return post;
}

// One exact draw of (eta, sigma2) from the normal / inverse-gamma posterior.
inline std::pair<Eigen::VectorXd, double> draw_nig(const NigPosterior &post, Rng &rng) {
    std::gamma_distribution<double> gamma(post.shape, 1.0);
    const double precision_draw = std::max(gamma(rng), DBL_MIN);
    const double sigma2 = post.rate / precision_draw;
    std::normal_distribution<double> normal;
    Eigen::VectorXd eps(post.mean.size());
    for (Eigen::Index k = 0; k < eps.size(); ++k)
        eps[k] = normal(rng);
    Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
    // precision = L L^T, so L^{-T} eps has covariance precision^{-1}.
    const Eigen::VectorXd z = llt.matrixU().solve(eps);
    return {post.mean + std::sqrt(sigma2) * z, sigma2};
}

inline void p_step_outcome(ChainState &state, const ModelData &md, const Priors &priors,
                           const ModelConfig &cfg, Rng &rng) {
    for (Stratum g : outcome_strata) {
        if (!stratum_active(g, cfg))
            continue;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < md.size(); ++i)
            if (state.g[i] == g && outcome_observed(md.group[i]))
                rows.push_back(i);
        const RowMatrix &design = g == Stratum::LL ? md.x1_ll : md.x1_other;
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), design.cols());
        Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = design.row(static_cast<Eigen::Index>(rows[r]));
            y[static_cast<Eigen::Index>(r)] = md.y[rows[r]];
        }
        auto [eta, sigma2] = draw_nig(nig_posterior(x, y, priors.outcome[index(g)]), rng);
        state.params.outcome.eta[index(g)] = std::move(eta);
        state.params.outcome.sigma2[index(g)] = sigma2;
    }
}

// ---------------------------------------------------------------------------
// Random-walk Metropolis-Hastings blocks

struct MhBlock {
    std::string name;
    Eigen::MatrixXd shape; // Cholesky factor of the proposal covariance shape
    double log_scale = 0.0;
    std::size_t adapt_steps = 0;
    std::size_t proposed = 0; // post burn-in
    std::size_t accepted = 0;

    double acceptance_rate() const {
        return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
    }

    // Proposal covariance proportional to the inverse of `information`.
    void set_shape(const Eigen::MatrixXd &information) {
        const auto k = information.rows();
        Eigen::LLT<Eigen::MatrixXd> llt(information);
        if (llt.info() != Eigen::Success) {
            shape = Eigen::MatrixXd::Identity(k, k);
            return;
        }
        const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(k, k));
        shape = cov.llt().matrixL();
    }
};

struct MhControl {
    bool adapting = false;  // Robbins-Monro scale adaptation active
    bool recording = false; // count toward reported acceptance
    double target = 0.35;
};

// Generic preconditioned random-walk step. `log_target` maps a proposal to its
// log density (up to a constant). Returns true on acceptance.
template <class LogTarget>
bool mh_step(Eigen::VectorXd &x, double &current, LogTarget &&log_target, MhBlock &blk,
             const MhControl &ctl, Rng &rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd eps(x.size());
    for (Eigen::Index k = 0; k < eps.size(); ++k)
        eps[k] = normal(rng);
    Eigen::VectorXd proposal = x + std::exp(blk.log_scale) * (blk.shape * eps);
    const double cand = log_target(proposal);
    const double log_ratio = std::isnan(cand) ? neg_inf : cand - current;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const bool accept = std::log(unif(rng)) < log_ratio;
    if (ctl.adapting) {
        ++blk.adapt_steps;
        const double a = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
        blk.log_scale += (a - ctl.target) / std::pow(static_cast<double>(blk.adapt_steps), 0.6);
    }
    if (ctl.recording) {
        ++blk.proposed;
        blk.accepted += accept ? 1 : 0;
    }
    if (accept) {
        x = std::move(proposal);
        current = cand;
    }
    return accept;
}

inline double normal_logprior(const Eigen::VectorXd &x, double sd) {
    return -0.5 * x.squaredNorm() / (sd * sd);
}

// Log-likelihood sum_i m_i log phi_i + (1 - m_i) log(1 - phi_i) over `rows`.
inline double logistic_loglik(const RowMatrix &x, const std::vector<std::size_t> &rows,
                              const std::vector<std::uint8_t> &missing,
                              const Eigen::VectorXd &theta) {
    double total = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double eta = x.row(static_cast<Eigen::Index>(rows[r])).dot(theta);
        total += missing[r] ? log_logistic(eta) : log_logistic(-eta);
    }
    return total;
}

inline Eigen::MatrixXd logistic_information(const RowMatrix &x,
                                            const std::vector<std::size_t> &rows,
                                            const Eigen::VectorXd &theta, double prior_sd) {
    const auto k = x.cols();
    Eigen::MatrixXd info = Eigen::MatrixXd::Identity(k, k) / (prior_sd * prior_sd);
    for (std::size_t i : rows) {
        const auto row = x.row(static_cast<Eigen::Index>(i));
        const double phi = 1.0 / (1.0 + std::exp(-row.dot(theta)));
        info.noalias() += phi * (1.0 - phi) * row.transpose() * row;
    }
    return info;
}

inline double initial_log_scale(double multiplier, Eigen::Index dim) {
    return std::log(multiplier * 2.38 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(dim, 1))));
}

// Proposal tuning carried across iterations of one chain.
struct ChainTuning {
    std::array<MhBlock, 4> strata;  // indexed by stratum (DD unused)
    std::array<MhBlock, 4> missing; // indexed by missing cell
};

inline ChainTuning make_tuning(const ModelLayout &l, const SamplerConfig &cfg) {
    ChainTuning t;
    for (Stratum g : all_strata) {
        auto &b = t.strata[index(g)];
        b.name = "alpha." + std::string(name(g));
        const auto k = static_cast<Eigen::Index>(l.x2.size());
        b.shape = Eigen::MatrixXd::Identity(k, k);
        b.log_scale = initial_log_scale(cfg.mh_step_alpha, k);
    }
    for (std::size_t c = 0; c < missing_cells.size(); ++c) {
        auto &b = t.missing[c];
        b.name = "theta." + cell_name(c);
        const auto k = static_cast<Eigen::Index>(l.x3.size());
        b.shape = Eigen::MatrixXd::Identity(k, k);
        b.log_scale = initial_log_scale(cfg.mh_step_theta, k);
    }
    return t;
}

namespace detail {

// n x 4 matrix of strata linear predictors (DD column zero).
inline Eigen::MatrixXd strata_linear_predictors(const ModelData &md, const StrataParams &sp) {
    Eigen::MatrixXd lp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(md.size()), 4);
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL})
        if (sp.alpha[index(g)].size() > 0)
            lp.col(static_cast<Eigen::Index>(index(g))) = md.x2 * sp.alpha[index(g)];
    return lp;
}

// sum_i log pi_{G_i}(x2_i) from a linear-predictor matrix.
inline double strata_loglik(const Eigen::MatrixXd &lp, const std::vector<Stratum> &g,
                            bool monotonicity) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        double top = neg_inf;
        for (Eigen::Index k = 0; k < 4; ++k)
            if (!(monotonicity && k == 2))
                top = std::max(top, lp(i, k));
        double sum = 0.0;
        for (Eigen::Index k = 0; k < 4; ++k)
            if (!(monotonicity && k == 2))
                sum += std::exp(lp(i, k) - top);
        total += lp(i, static_cast<Eigen::Index>(index(g[static_cast<std::size_t>(i)]))) - top -
                 std::log(sum);
    }
    return total;
}

} // namespace detail

// Refreshes every strata proposal shape from the multinomial-logit information
// at the current parameters.
inline void refresh_strata_shapes(ChainTuning &tuning, const ModelData &md,
                                  const ModelParams &p, const Priors &priors,
                                  const ModelConfig &cfg) {
    const auto k = md.x2.cols();
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL}) {
        if (!stratum_active(g, cfg))
            continue;
        Eigen::MatrixXd info =
            Eigen::MatrixXd::Identity(k, k) / (priors.alpha_sd * priors.alpha_sd);
        for (std::size_t i = 0; i < md.size(); ++i) {
            const auto row = md.x2.row(static_cast<Eigen::Index>(i));
            const double pi = std::exp(log_strata_probs(p.strata, row, cfg.monotonicity)[index(g)]);
            info.noalias() += pi * (1.0 - pi) * row.transpose() * row;
        }
        tuning.strata[index(g)].set_shape(info);
    }
}

inline void p_step_strata(ChainState &state, const ModelData &md, const Priors &priors,
                          const ModelConfig &cfg, ChainTuning &tuning, const MhControl &ctl,
                          Rng &rng) {
    Eigen::MatrixXd lp = detail::strata_linear_predictors(md, state.params.strata);
    double loglik = detail::strata_loglik(lp, state.g, cfg.monotonicity);
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL}) {
        if (!stratum_active(g, cfg))
            continue;
        const auto col = static_cast<Eigen::Index>(index(g));
        auto &alpha = state.params.strata.alpha[index(g)];
        Eigen::VectorXd saved_col = lp.col(col);
        double current = loglik + normal_logprior(alpha, priors.alpha_sd);
        double cand_loglik = 0.0;
        auto target = [&](const Eigen::VectorXd &a) {
            lp.col(col) = md.x2 * a;
            cand_loglik = detail::strata_loglik(lp, state.g, cfg.monotonicity);
            return cand_loglik + normal_logprior(a, priors.alpha_sd);
        };
        if (mh_step(alpha, current, target, tuning.strata[index(g)], ctl, rng))
            loglik = cand_loglik;
        else
            lp.col(col) = saved_col;
    }
}

// Survivors currently imputed to each missing cell, with their indicators.
struct CellMembers {
    std::array<std::vector<std::size_t>, 4> rows;
    std::array<std::vector<std::uint8_t>, 4> missing;
};

inline CellMembers missing_cell_members(const ModelData &md, const std::vector<Stratum> &g) {
    CellMembers m;
    for (std::size_t i = 0; i < md.size(); ++i) {
        if (!survived(md.group[i]))
            continue;
        const int c = missing_cell_index(g[i], md.arm(i));
        if (c < 0)
            continue;
        m.rows[static_cast<std::size_t>(c)].push_back(i);
        m.missing[static_cast<std::size_t>(c)].push_back(outcome_missing(md.group[i]) ? 1 : 0);
    }
    return m;
}

inline void refresh_missing_shapes(ChainTuning &tuning, const ModelData &md, const ChainState &s,
                                   const Priors &priors, const ModelConfig &cfg) {
    if (cfg.mode != MissingMode::latent)
        return;
    const auto members = missing_cell_members(md, s.g);
    for (std::size_t c = 0; c < missing_cells.size(); ++c) {
        const auto &theta = s.params.missing.theta[c];
        if (theta.size() == 0)
            continue;
        tuning.missing[c].set_shape(
            logistic_information(md.x3, members.rows[c], theta, priors.theta_sd));
    }
}

inline void p_step_missing(ChainState &state, const ModelData &md, const Priors &priors,
                           const ModelConfig &cfg, ChainTuning &tuning, const MhControl &ctl,
                           Rng &rng) {
    if (cfg.mode != MissingMode::latent)
        return;
    const auto members = missing_cell_members(md, state.g);
    for (std::size_t c = 0; c < missing_cells.size(); ++c) {
        auto &theta = state.params.missing.theta[c];
        if (theta.size() == 0)
            continue;
        auto target = [&](const Eigen::VectorXd &t) {
            return logistic_loglik(md.x3, members.rows[c], members.missing[c], t) +
                   normal_logprior(t, priors.theta_sd);
        };
        double current = target(theta);
        mh_step(theta, current, target, tuning.missing[c], ctl, rng);
    }
}

// ---------------------------------------------------------------------------
// Chains

struct ChainDraws {
    std::vector<int> iteration;
    std::vector<ModelParams> draws;
    std::vector<std::pair<std::string, double>> acceptance; // post burn-in, per MH block
};

struct PosteriorSamples {
    ModelLayout layout;
    SamplerConfig config;
    std::vector<ChainDraws> chains;

    std::size_t draws_per_chain() const { return chains.empty() ? 0 : chains.front().draws.size(); }
};

inline bool params_finite(const ModelParams &p) {
    for (const auto &a : p.strata.alpha)
        if (!a.allFinite())
            return false;
    for (std::size_t k = 0; k < 3; ++k)
        if (!p.outcome.eta[k].allFinite() || !std::isfinite(p.outcome.sigma2[k]))
            return false;
    for (const auto &t : p.missing.theta)
        if (!t.allFinite())
            return false;
    return true;
}

enum class StartRule {
    random,       // alternative stratum for a random 20%
    low_outcome,  // ... for the 20% lowest observed outcomes of each survivor group
    high_outcome, // ... for the 20% highest
};

// Starting strata: the always-survivor / never-survivor reading with 20% of
// two-stratum records placed in the alternative stratum.
inline std::vector<Stratum> initial_strata(const ModelData &md, const ModelConfig &cfg, Rng &rng,
                                           StartRule rule = StartRule::random) {
    std::vector<Stratum> g(md.size());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto alternative = [&](std::size_t i) {
        const auto fs = feasible_strata(md.group[i], cfg.monotonicity);
        const Stratum primary = survived(md.group[i]) ? Stratum::LL : Stratum::DD;
        return fs[0] == primary ? fs[1] : fs[0];
    };
    std::array<std::vector<std::size_t>, 2> by_outcome; // observed survivors per arm
    for (std::size_t i = 0; i < md.size(); ++i) {
        const auto fs = feasible_strata(md.group[i], cfg.monotonicity);
        if (fs.size() == 1) {
            g[i] = fs[0];
            continue;
        }
        if (rule != StartRule::random && outcome_observed(md.group[i])) {
            by_outcome[static_cast<std::size_t>(md.arm(i))].push_back(i);
            g[i] = Stratum::LL;
            continue;
        }
        g[i] = unif(rng) < 0.8 ? (survived(md.group[i]) ? Stratum::LL : Stratum::DD)
                               : alternative(i);
    }
    for (auto &rows : by_outcome) {
        std::stable_sort(rows.begin(), rows.end(),
                         [&](std::size_t a, std::size_t b) { return md.y[a] < md.y[b]; });
        if (rule == StartRule::high_outcome)
            std::reverse(rows.begin(), rows.end());
        for (std::size_t k = 0; k < rows.size() / 5; ++k)
            g[rows[k]] = alternative(rows[k]);
    }
    return g;
}

namespace detail {

struct ChainRunner {
    const ModelData &md;
    const SamplerConfig &config;
    const Priors &priors;
    ModelConfig cfg;
    ChainState state;
    ChainTuning tuning;

    void check(const char *block) const {
        if (!params_finite(state.params))
            throw NumericalError("non-finite parameter at iteration " +
                                 std::to_string(state.iteration) + " in block " + block);
    }

    void p_steps(const MhControl &ctl, Rng &rng) {
        p_step_outcome(state, md, priors, cfg, rng);
        check("outcome");
        p_step_strata(state, md, priors, cfg, tuning, ctl, rng);
        check("strata");
        p_step_missing(state, md, priors, cfg, tuning, ctl, rng);
        check("missingness");
    }

    // Zero parameters, proposal shapes at the start, then one round of P-steps.
    void start(std::vector<Stratum> g, const MhControl &ctl, Rng &rng) {
        state = ChainState{zero_params(md.layout, cfg), std::move(g), 0};
        tuning = make_tuning(md.layout, config);
        refresh_strata_shapes(tuning, md, state.params, priors, cfg);
        refresh_missing_shapes(tuning, md, state, priors, cfg);
        p_steps(ctl, rng);
    }

    void iterate(int t, const MhControl &ctl, Rng &rng) {
        state.iteration = t;
        // Shapes are refreshed over the first half of burn-in only, so the
        // scale gets the second half to settle on the final shape.
        if (ctl.adapting && t % config.adapt_interval == 0 && 2 * t <= config.burn_in) {
            refresh_strata_shapes(tuning, md, state.params, priors, cfg);
            refresh_missing_shapes(tuning, md, state, priors, cfg);
            for (auto *blocks : {&tuning.strata, &tuning.missing})
                for (auto &b : *blocks)
                    b.adapt_steps = 0;
        }
        if (config.impute_strata)
            i_step(state, md, cfg, rng);
        p_steps(ctl, rng);
    }
};

} // namespace detail

inline ChainDraws run_chain(const ModelData &md, const SamplerConfig &config, const Priors &priors,
                            std::size_t chain_index = 0,
                            std::optional<std::vector<Stratum>> start = std::nullopt) {
    config.validate();
    priors.validate(md.layout);
    const ModelConfig cfg = config.model();
    Rng rng = chain_rng(config.seed, chain_index);
    detail::ChainRunner runner{md, config, priors, cfg, {}, {}};
    MhControl ctl{config.adapt_during_burnin, false, config.target_acceptance};

    if (start) {
        if (start->size() != md.size())
            throw ValidationError("initial strata do not match the data size");
        for (std::size_t i = 0; i < md.size(); ++i)
            if (!feasible_strata(md.group[i], cfg.monotonicity).contains((*start)[i]))
                throw ValidationError("initial stratum infeasible for record " +
                                      std::to_string(i));
        runner.start(std::move(*start), ctl, rng);
    } else if (!config.impute_strata || config.pilot_starts == 1 || config.pilot_iterations == 0) {
        runner.start(initial_strata(md, cfg, rng), ctl, rng);
    } else {
        // Pilots score by the observed-data log-likelihood averaged over the
        // last quarter of their iterations.
        double best_score = neg_inf;
        ChainState best_state;
        ChainTuning best_tuning;
        for (int k = 0; k < config.pilot_starts; ++k) {
            const StartRule rule = k == 0   ? StartRule::low_outcome
                                   : k == 1 ? StartRule::high_outcome
                                            : StartRule::random;
            detail::ChainRunner pilot = runner;
            pilot.start(initial_strata(md, cfg, rng, rule), ctl, rng);
            double score = 0.0;
            int scored = 0;
            for (int t = 1; t <= config.pilot_iterations; ++t) {
                pilot.iterate(t, ctl, rng);
                if (4 * t > 3 * config.pilot_iterations && t % 5 == 0) {
                    score += observed_data_loglik(md, pilot.state.params, cfg);
                    ++scored;
                }
            }
            score = scored ? score / scored : observed_data_loglik(md, pilot.state.params, cfg);
            if (k == 0 || score > best_score) {
                best_score = score;
                best_state = std::move(pilot.state);
                best_tuning = std::move(pilot.tuning);
            }
        }
        runner.state = std::move(best_state);
        runner.tuning = std::move(best_tuning);
    }

    ChainDraws out;
    out.draws.reserve(config.expected_draws());
    for (int t = 1; t <= config.iterations; ++t) {
        const bool burning = t <= config.burn_in;
        ctl.adapting = burning && config.adapt_during_burnin;
        ctl.recording = !burning;
        runner.iterate(t, ctl, rng);
        if (!burning && (t - config.burn_in) % config.thin == 0) {
            out.iteration.push_back(t);
            out.draws.push_back(runner.state.params);
        }
    }
    const auto &tuning = runner.tuning;
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL})
        if (stratum_active(g, cfg))
            out.acceptance.emplace_back(tuning.strata[index(g)].name,
                                        tuning.strata[index(g)].acceptance_rate());
    if (cfg.mode == MissingMode::latent)
        for (std::size_t c = 0; c < missing_cells.size(); ++c)
            if (stratum_active(missing_cells[c].stratum, cfg))
                out.acceptance.emplace_back(tuning.missing[c].name,
                                            tuning.missing[c].acceptance_rate());
    return out;
}

// Runs config.chains chains concurrently; results ordered by chain index.
inline PosteriorSamples run_chains(const ModelData &md, const SamplerConfig &config,
                                   const Priors &priors) {
    config.validate();
    PosteriorSamples out;
    out.layout = md.layout;
    out.config = config;
    std::vector<std::future<ChainDraws>> jobs;
    for (int c = 0; c < config.chains; ++c)
        jobs.push_back(std::async(std::launch::async, [&md, &config, &priors, c] {
            return run_chain(md, config, priors, static_cast<std::size_t>(c));
        }));
    for (auto &j : jobs)
        out.chains.push_back(j.get());
    return out;
}

} // namespace sace
