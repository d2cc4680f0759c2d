#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sace/evaluation.hpp"
#include "sace/pipeline.hpp"
#include "sace/simulator.hpp"
#include "sace/sampler.hpp"

using namespace sace;

namespace {

// Intercept-only model data with the given groups and outcomes.
ModelData intercept_data(const std::vector<ObservedGroup> &groups, const std::vector<double> &y) {
    ModelData md;
    md.layout.x1_ll = {"intercept", "z", "t_z"};
    md.layout.x1_other = {"intercept"};
    md.layout.x2 = {"intercept"};
    md.layout.x3 = {"intercept"};
    const auto n = static_cast<Eigen::Index>(groups.size());
    md.group = groups;
    md.y = y;
    md.x1_ll.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
        md.x1_ll.row(i) << 1.0, arm_of(groups[static_cast<std::size_t>(i)]), 0.0;
    md.x1_other = RowMatrix::Ones(n, 1);
    md.x2 = RowMatrix::Ones(n, 1);
    md.x3 = RowMatrix::Ones(n, 1);
    return md;
}

// Intercept-only strata logits reproducing the given probabilities (LL, LD, DL, DD).
StrataParams strata_from(std::array<double, 4> pi) {
    StrataParams sp;
    for (std::size_t g = 0; g < 4; ++g)
        sp.alpha[g] = Eigen::VectorXd::Constant(1, std::log(pi[g] / pi[3]));
    sp.alpha[3].setZero();
    return sp;
}

} // namespace

TEST(IStep, DeadUntreatedRowRatio) {
    auto md = intercept_data({ObservedGroup::O00x}, {std::nan("")});
    ModelConfig cfg;
    auto p = zero_params(md.layout, cfg);
    p.strata = strata_from({0.4, 0.1, 0.2, 0.3});
    auto prob = stratum_posterior(md, 0, p, cfg);
    // Feasible set is {LD, DD}: 0.1 / (0.1 + 0.3).
    EXPECT_NEAR(prob[0], 0.25, 1e-12);
    EXPECT_NEAR(prob[1], 0.75, 1e-12);
}

TEST(IStep, SingletonUnderMonotonicity) {
    auto md = intercept_data({ObservedGroup::O10x}, {std::nan("")});
    ModelConfig cfg{MissingMode::latent, true};
    auto p = zero_params(md.layout, cfg);
    auto prob = stratum_posterior(md, 0, p, cfg);
    EXPECT_EQ(prob[0], 1.0);
    ChainState s{p, {Stratum::DL}, 0};
    Rng rng(1);
    i_step(s, md, cfg, rng);
    EXPECT_EQ(s.g[0], Stratum::DD);
}

TEST(IStep, OutcomeDensityRatio) {
    // Equal pi and phi; the LL density is 3 times the LD density at y.
    const double y = 20.0;
    auto md = intercept_data({ObservedGroup::O110}, {y});
    ModelConfig cfg;
    auto p = zero_params(md.layout, cfg);
    p.outcome.eta[0] << y, 0.0, 0.0;
    p.outcome.eta[1] << y - std::sqrt(2.0 * std::log(3.0));
    p.outcome.sigma2 = {1.0, 1.0, 1.0};
    auto prob = stratum_posterior(md, 0, p, cfg);
    EXPECT_NEAR(prob[0], 0.75, 1e-12);
}

TEST(IStep, ImputedStrataStayFeasible) {
    SimConfig sc;
    sc.n = 300;
    auto [ds, truth] = simulate(sc);
    auto prep = prepare(ds);
    auto basis = PsBasis::fit(prep.ps, 1);
    auto md = build_model_data(prep.data, prep.ps, basis, DesignOptions{});
    for (bool mono : {false, true}) {
        ModelConfig cfg{MissingMode::latent, mono};
        Rng rng(3);
        ChainState s{zero_params(md.layout, cfg), initial_strata(md, cfg, rng), 0};
        std::normal_distribution<double> normal;
        for (int it = 0; it < 50; ++it) {
            for (auto &a : s.params.strata.alpha)
                for (Eigen::Index k = 0; k < a.size(); ++k)
                    a[k] = normal(rng);
            i_step(s, md, cfg, rng);
            for (std::size_t i = 0; i < md.size(); ++i)
                ASSERT_TRUE(feasible_strata(md.group[i], mono).contains(s.g[i]));
        }
    }
}

TEST(NigPosterior, MatchesTextbookUpdate) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(10, 3);
    Eigen::VectorXd y(10);
    for (int i = 0; i < 10; ++i) {
        x.row(i) << 1.0, normal(rng), normal(rng);
        y[i] = 2.0 + x(i, 1) - 0.5 * x(i, 2) + normal(rng);
    }
    OutcomePrior prior{Eigen::Vector3d(0.5, -1.0, 2.0), Eigen::Matrix3d::Identity() * 4.0, 2.5, 1.5};
    prior.V(0, 1) = prior.V(1, 0) = 0.5;
    auto post = nig_posterior(x, y, prior);

    // Precision-form update: L_n = X'X + L_0, mu_n = L_n^{-1}(L_0 mu_0 + X'y),
    // a_n = a_0 + n/2, b_n = b_0 + (y'y + mu_0'L_0 mu_0 - mu_n'L_n mu_n)/2.
    const Eigen::MatrixXd l0 = prior.V.inverse();
    const Eigen::MatrixXd ln = x.transpose() * x + l0;
    const Eigen::VectorXd mun = ln.inverse() * (l0 * prior.mu + x.transpose() * y);
    const double an = prior.nu + 5.0;
    const double bn = prior.omega + 0.5 * (y.dot(y) + prior.mu.dot(l0 * prior.mu) - mun.dot(ln * mun));
    EXPECT_LT((post.mean - mun).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_LT((post.precision - ln).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_NEAR(post.shape, an, 1e-12);
    EXPECT_NEAR(post.rate, bn, 1e-9);
}

TEST(OutcomeStep, LargeSampleMatchesLeastSquares) {
    const std::size_t n = 4000;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal;
    std::vector<ObservedGroup> groups(n, ObservedGroup::O010);
    std::vector<double> y(n);
    auto md = intercept_data(groups, y);
    md.layout.x1_ll = {"intercept", "z", "t_z"};
    for (std::size_t i = 0; i < n; ++i) {
        const double tz = normal(rng);
        md.x1_ll.row(static_cast<Eigen::Index>(i)) << 1.0, static_cast<double>(i % 2), tz;
        md.y[i] = 10.0 + 2.0 * (i % 2) + 0.7 * tz + normal(rng);
    }
    // OLS by normal equations.
    Eigen::MatrixXd x = md.x1_ll;
    Eigen::Map<Eigen::VectorXd> yv(md.y.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * yv);

    ModelConfig cfg{MissingMode::ignorable, false};
    auto priors = Priors::defaults(md.layout);
    ChainState s{zero_params(md.layout, cfg), std::vector<Stratum>(n, Stratum::LL), 0};
    Rng r(5);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    const int draws = 400;
    for (int d = 0; d < draws; ++d) {
        p_step_outcome(s, md, priors, cfg, r);
        mean += s.params.outcome.eta[0] / draws;
    }
    // Posterior sd is about 1/sqrt(n/2) ~ 0.02 per coefficient; 400 draws.
    EXPECT_LT((mean - ols).lpNorm<Eigen::Infinity>(), 0.01);
}

TEST(OutcomeStep, EmptyStratumDrawsFromPrior) {
    auto md = intercept_data({ObservedGroup::O00x}, {std::nan("")});
    ModelConfig cfg{MissingMode::ignorable, false};
    auto priors = Priors::defaults(md.layout);
    priors.outcome[1] = {Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Identity(1, 1), 6.0,
                         5.0};
    ChainState s{zero_params(md.layout, cfg), {Stratum::DD}, 0};
    Rng r(8);
    double sum = 0.0, sum_s2 = 0.0;
    const int draws = 20000;
    for (int d = 0; d < draws; ++d) {
        p_step_outcome(s, md, priors, cfg, r);
        sum += s.params.outcome.eta[1][0];
        sum_s2 += s.params.outcome.sigma2[1];
    }
    // eta ~ t with sd sqrt(omega/(nu-1)) = 1; sigma2 mean omega/(nu-1) = 1.
    EXPECT_NEAR(sum / draws, 3.0, 4.0 / std::sqrt(static_cast<double>(draws)));
    EXPECT_NEAR(sum_s2 / draws, 1.0, 0.03);
}

TEST(MhStep, VanishingScaleAcceptsAlmostEverything) {
    Rng rng(4);
    MhBlock blk;
    blk.shape = Eigen::MatrixXd::Identity(2, 2);
    blk.log_scale = -30.0;
    MhControl ctl{false, true, 0.35};
    Eigen::VectorXd x = Eigen::Vector2d(0.3, -0.2);
    auto target = [](const Eigen::VectorXd &v) { return -0.5 * v.squaredNorm() * 100.0; };
    double cur = target(x);
    for (int t = 0; t < 2000; ++t)
        mh_step(x, cur, target, blk, ctl, rng);
    EXPECT_GT(blk.acceptance_rate(), 0.99);
}

TEST(MhStep, AdaptationMovesTowardTarget) {
    Rng rng(4);
    MhBlock blk;
    blk.shape = Eigen::MatrixXd::Identity(1, 1);
    blk.log_scale = std::log(50.0);
    MhControl ctl{true, false, 0.35};
    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    auto target = [](const Eigen::VectorXd &v) { return -0.5 * v.squaredNorm(); };
    double cur = target(x);
    for (int t = 0; t < 5000; ++t)
        mh_step(x, cur, target, blk, ctl, rng);
    ctl = {false, true, 0.35};
    for (int t = 0; t < 5000; ++t)
        mh_step(x, cur, target, blk, ctl, rng);
    EXPECT_NEAR(blk.acceptance_rate(), 0.35, 0.06);
}

// One record held in LL, intercept-only strata logits with N(0, 1.5^2) priors:
// the posterior mean of pi_LL by numerical integration over a 3-D grid.
TEST(StrataStep, SingleRecordMatchesGridPosterior) {
    const double sd = 1.5;
    const double lo = -7.5, step = 0.1;
    const int m = 151;
    double num = 0.0, den = 0.0;
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
            for (int c = 0; c < m; ++c) {
                const double x = lo + a * step, yv = lo + b * step, z = lo + c * step;
                const double total = 1.0 + std::exp(x) + std::exp(yv) + std::exp(z);
                const double pi_ll = std::exp(x) / total;
                const double w = pi_ll * std::exp(-(x * x + yv * yv + z * z) / (2 * sd * sd));
                num += w * pi_ll;
                den += w;
            }
    const double oracle = num / den;
    ASSERT_GT(oracle, 0.25);

    auto md = intercept_data({ObservedGroup::O110}, {20.0});
    SamplerConfig cfg;
    cfg.mode = MissingMode::ignorable;
    cfg.iterations = 60000;
    cfg.burn_in = 2000;
    cfg.impute_strata = false;
    auto priors = Priors::defaults(md.layout);
    priors.alpha_sd = sd;
    auto chain = run_chain(md, cfg, priors, 0, std::vector<Stratum>{Stratum::LL});
    Eigen::RowVectorXd one(1);
    one << 1.0;
    std::vector<double> pis;
    for (const auto &d : chain.draws)
        pis.push_back(strata_probs(d.strata, one, false)[0]);
    double mean = 0.0;
    for (double v : pis)
        mean += v / static_cast<double>(pis.size());
    const double se = std::sqrt(0.05 / effective_sample_size(pis));
    EXPECT_GT(mean, 0.25);
    EXPECT_NEAR(mean, oracle, 4 * se + 0.005) << "oracle " << oracle;
}

// Every (LL,1) survivor has a missing outcome; intercept-only phi with a
// N(0, 10^2) prior on its logit. Oracle: 1-D grid posterior of phi.
TEST(MissingStep, AllMissingConcentratesAboveHalf) {
    const int k = 6;
    auto md = intercept_data(std::vector<ObservedGroup>(k, ObservedGroup::O111),
                             std::vector<double>(k, std::nan("")));
    SamplerConfig cfg;
    cfg.iterations = 40000;
    cfg.burn_in = 2000;
    cfg.impute_strata = false;
    auto priors = Priors::defaults(md.layout);
    double num = 0.0, den = 0.0, above = 0.0;
    for (int a = -6000; a <= 6000; ++a) {
        const double t = a * 0.01;
        const double w = std::exp(k * log_logistic(t) - t * t / 200.0);
        num += w / (1.0 + std::exp(-t));
        den += w;
        above += t > 0 ? w : 0.0;
    }
    ASSERT_GT(above / den, 0.9);
    auto chain = run_chain(md, cfg, priors, 0, std::vector<Stratum>(k, Stratum::LL));
    std::vector<double> phi;
    std::size_t over = 0;
    for (const auto &d : chain.draws) {
        phi.push_back(1.0 / (1.0 + std::exp(-d.missing.theta[0][0])));
        over += phi.back() > 0.5;
    }
    double mean = 0.0;
    for (double v : phi)
        mean += v / static_cast<double>(phi.size());
    EXPECT_GT(static_cast<double>(over) / static_cast<double>(phi.size()), 0.9);
    EXPECT_NEAR(mean, num / den, 0.01);
}

TEST(MissingStep, IgnorableModeLeavesStateUnchanged) {
    auto md = intercept_data({ObservedGroup::O111, ObservedGroup::O110}, {std::nan(""), 3.0});
    ModelConfig cfg{MissingMode::ignorable, false};
    SamplerConfig sc;
    auto priors = Priors::defaults(md.layout);
    ChainState s{zero_params(md.layout, {MissingMode::latent, false}),
                 {Stratum::LL, Stratum::LL}, 0};
    s.params.missing.theta[0][0] = 0.7;
    auto before = s.params.missing.theta;
    auto tuning = make_tuning(md.layout, sc);
    Rng rng(1);
    Rng copy = rng;
    p_step_missing(s, md, priors, cfg, tuning, MhControl{}, rng);
    for (std::size_t c = 0; c < 4; ++c)
        EXPECT_EQ(s.params.missing.theta[c], before[c]);
    EXPECT_EQ(rng, copy);
}

TEST(RunChain, DeterministicAndStreamSpecific) {
    SimConfig sim;
    sim.n = 400;
    auto [ds, truth] = simulate(sim);
    auto prep = prepare(ds);
    SamplerConfig cfg;
    cfg.iterations = 300;
    cfg.burn_in = 100;
    cfg.pilot_iterations = 40;
    auto basis = PsBasis::fit(prep.ps, 1);
    auto md = build_model_data(prep.data, prep.ps, basis, DesignOptions{});
    auto priors = Priors::defaults(md.layout);
    auto a = run_chain(md, cfg, priors, 0);
    auto b = run_chain(md, cfg, priors, 0);
    auto c = run_chain(md, cfg, priors, 1);
    ASSERT_EQ(a.draws.size(), 200u);
    bool differs = false;
    for (std::size_t d = 0; d < a.draws.size(); ++d) {
        EXPECT_EQ(a.draws[d].outcome.eta[0], b.draws[d].outcome.eta[0]);
        EXPECT_EQ(a.draws[d].strata.alpha[1], b.draws[d].strata.alpha[1]);
        EXPECT_EQ(a.draws[d].missing.theta[2], b.draws[d].missing.theta[2]);
        differs |= a.draws[d].outcome.eta[0] != c.draws[d].outcome.eta[0];
    }
    EXPECT_TRUE(differs);
    EXPECT_EQ(a.iteration.front(), 101);
    EXPECT_EQ(a.iteration.back(), 300);
}

TEST(RunChain, ThinningAndValidation) {
    auto md = intercept_data({ObservedGroup::O110, ObservedGroup::O00x}, {1.0, std::nan("")});
    SamplerConfig cfg;
    cfg.iterations = 100;
    cfg.burn_in = 40;
    cfg.thin = 7;
    auto priors = Priors::defaults(md.layout);
    auto chain = run_chain(md, cfg, priors);
    EXPECT_EQ(chain.draws.size(), cfg.expected_draws());
    EXPECT_EQ(chain.iteration.front(), 47);
    cfg.burn_in = 100;
    EXPECT_THROW(run_chain(md, cfg, priors), ValidationError);
    cfg.burn_in = 10;
    cfg.thin = 0;
    EXPECT_THROW(run_chain(md, cfg, priors), ValidationError);
    cfg.thin = 1;
    EXPECT_THROW(run_chain(md, cfg, priors, 0, std::vector<Stratum>{Stratum::DL, Stratum::DD}),
                 ValidationError);
}

// Simulator defaults with the default sampler settings.
TEST(RunChain, AcceptanceRatesOnReferenceSimulation) {
    auto [ds, truth] = simulate(SimConfig{});
    auto prep = prepare(ds);
    SamplerConfig cfg;
    auto fit = fit_model(prep, cfg, false);
    for (const auto &[block, rate] : fit.samples.chains[0].acceptance) {
        EXPECT_GE(rate, 0.15) << block;
        EXPECT_LE(rate, 0.6) << block;
    }
}

TEST(RunChains, MultipleChainsUseDistinctStreams) {
    auto md = intercept_data({ObservedGroup::O110, ObservedGroup::O010, ObservedGroup::O00x,
                              ObservedGroup::O10x, ObservedGroup::O111},
                             {20.0, 21.0, std::nan(""), std::nan(""), std::nan("")});
    SamplerConfig cfg;
    cfg.iterations = 200;
    cfg.burn_in = 100;
    cfg.chains = 3;
    auto priors = Priors::defaults(md.layout);
    auto s = run_chains(md, cfg, priors);
    ASSERT_EQ(s.chains.size(), 3u);
    EXPECT_EQ(s.draws_per_chain(), 100u);
    auto single = run_chain(md, cfg, priors, 2);
    EXPECT_EQ(s.chains[2].draws.back().outcome.eta[0], single.draws.back().outcome.eta[0]);
    EXPECT_NE(s.chains[0].draws.back().outcome.eta[0], s.chains[1].draws.back().outcome.eta[0]);
}
