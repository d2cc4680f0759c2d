#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sace/evaluation.hpp"
#include "sace/pipeline.hpp"
#include "sace/simulator.hpp"

using namespace sace;

namespace {

DrawTable single_parameter(const std::vector<std::vector<double>> &chains) {
    DrawTable t;
    t.names = {"x"};
    for (std::size_t c = 0; c < chains.size(); ++c) {
        DrawTable::Chain ch;
        ch.id = static_cast<int>(c);
        ch.values.resize(static_cast<Eigen::Index>(chains[c].size()), 1);
        for (std::size_t d = 0; d < chains[c].size(); ++d) {
            ch.iteration.push_back(static_cast<int>(d + 1));
            ch.values(static_cast<Eigen::Index>(d), 0) = chains[c][d];
        }
        t.chains.push_back(std::move(ch));
    }
    return t;
}

std::vector<double> white_noise(std::uint64_t seed, std::size_t n, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(shift, 1.0);
    std::vector<double> x(n);
    for (auto &v : x)
        v = normal(rng);
    return x;
}

struct SmallFit {
    PreparedData prep;
    ModelData md;
};

SmallFit small_problem(std::size_t n) {
    SimConfig sim;
    sim.n = n;
    auto [ds, truth] = simulate(sim);
    SmallFit f{prepare(ds), {}};
    f.md = build_model_data(f.prep.data, f.prep.ps, PsBasis::fit(f.prep.ps, 1), DesignOptions{});
    return f;
}

} // namespace

TEST(Summary, OneToHundredInterval) {
    std::vector<double> x(100);
    std::iota(x.begin(), x.end(), 1.0);
    auto s = summarize(single_parameter({x})).rows[0];
    EXPECT_NEAR(s.lower, 3.475, 1e-12);
    EXPECT_NEAR(s.upper, 97.525, 1e-12);
    EXPECT_NEAR(s.mean, 50.5, 1e-12);
    EXPECT_NEAR(s.sd, std::sqrt(100.0 * 101.0 / 12.0), 1e-9);
    EXPECT_TRUE(std::isnan(s.rhat));
}

TEST(Summary, ConstantDraws) {
    auto s = summarize(single_parameter({std::vector<double>(50, 2.5)})).rows[0];
    EXPECT_EQ(s.mean, 2.5);
    EXPECT_EQ(s.sd, 0.0);
    EXPECT_EQ(s.lower, 2.5);
    EXPECT_EQ(s.upper, 2.5);
}

TEST(Summary, InvariantToDrawOrder) {
    auto x = white_noise(3, 777);
    auto a = summarize(single_parameter({x})).rows[0];
    std::mt19937_64 rng(1);
    std::shuffle(x.begin(), x.end(), rng);
    auto b = summarize(single_parameter({x})).rows[0];
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.sd, b.sd);
    EXPECT_EQ(a.lower, b.lower);
    EXPECT_EQ(a.upper, b.upper);
}

TEST(Summary, SkewWarning) {
    std::vector<double> x(100, 0.0);
    x[0] = 1e6;
    auto s = summarize(single_parameter({x}));
    ASSERT_EQ(s.warnings.size(), 1u);
    EXPECT_NE(s.warnings[0].find("'x'"), std::string::npos);
    EXPECT_THROW(summarize(single_parameter({{1.0}})), ValidationError);
}

TEST(Ess, WhiteNoiseNearSampleSize) {
    const std::size_t n = 5000;
    EXPECT_NEAR(effective_sample_size(white_noise(5, n)), n, 0.2 * n);
}

TEST(Ess, Ar1MatchesTheory) {
    const double rho = 0.9;
    const std::size_t n = 200000;
    auto e = white_noise(6, n);
    std::vector<double> x(n);
    x[0] = e[0];
    for (std::size_t t = 1; t < n; ++t)
        x[t] = rho * x[t - 1] + std::sqrt(1 - rho * rho) * e[t];
    const double expected = n * (1 - rho) / (1 + rho);
    EXPECT_NEAR(effective_sample_size(x), expected, 0.15 * expected);
}

TEST(Rhat, IdenticalChains) {
    auto x = white_noise(7, 400);
    const double n = 400.0;
    EXPECT_NEAR(gelman_rubin({x, x, x}), std::sqrt((n - 1) / n), 1e-12);
}

TEST(Rhat, OffsetChainsAreFlagged) {
    EXPECT_GT(gelman_rubin({white_noise(1, 500), white_noise(2, 500, 5.0)}), 2.0);
    EXPECT_LT(gelman_rubin({white_noise(1, 500), white_noise(2, 500), white_noise(3, 500)}), 1.1);
}

TEST(Rhat, Errors) {
    EXPECT_THROW(gelman_rubin({white_noise(1, 10)}), ValidationError);
    EXPECT_THROW(gelman_rubin({white_noise(1, 10), white_noise(2, 9)}), ValidationError);
}

TEST(Dic, TwoDrawArithmetic) {
    auto r = dic_from_deviances({10.0, 14.0}, 11.0);
    EXPECT_EQ(r.dbar, 12.0);
    EXPECT_EQ(r.p_d, 1.0);
    EXPECT_EQ(r.dic, 13.0);
    EXPECT_THROW(dic_from_deviances({}, 0.0), ValidationError);
}

TEST(Dic, DegenerateChainHasNoEffectiveParameters) {
    auto f = small_problem(200);
    PosteriorSamples s;
    s.layout = f.md.layout;
    s.config.iterations = 10;
    s.config.burn_in = 0;
    ModelParams p = zero_params(f.md.layout, s.config.model());
    for (auto &eta : p.outcome.eta)
        eta[0] = 20.0;
    p.outcome.sigma2 = {9.0, 9.0, 9.0};
    s.chains.push_back({{1, 2, 3}, {p, p, p}, {}});
    auto r = compute_dic(s, f.md, Priors::defaults(f.md.layout));
    EXPECT_EQ(r.p_d, 0.0);
    EXPECT_EQ(r.dic, r.dbar);
    EXPECT_NEAR(r.dbar, -2.0 * observed_data_loglik(f.md, p, s.config.model()), 1e-9);
}

TEST(Dic, IdentityAndAuxiliaryModel) {
    auto f = small_problem(500);
    SamplerConfig cfg;
    cfg.iterations = 1500;
    cfg.burn_in = 700;
    for (MissingMode mode : {MissingMode::latent, MissingMode::ignorable, MissingMode::mcar}) {
        cfg.mode = mode;
        auto fit = fit_model(f.prep, cfg);
        const auto &d = fit.dic;
        EXPECT_NEAR(d.dic, d.dbar + d.p_d, 1e-9 * std::abs(d.dic));
        EXPECT_NEAR(d.dic, 2 * d.dbar - d.d_at_mean, 1e-9 * std::abs(d.dic));
        EXPECT_GT(d.p_d, 0.0) << name(mode);

        // The fit-focused version measures each mode against its own likelihood.
        auto own = compute_dic(fit.samples, mode == MissingMode::mcar ? f.md.complete_cases() : f.md,
                               Priors::defaults(f.md.layout), DevianceFocus::fit);
        EXPECT_NEAR(own.dic, own.dbar + own.p_d, 1e-9 * std::abs(own.dic));
        if (mode == MissingMode::latent) {
            EXPECT_NEAR(own.dic, d.dic, 1e-9 * std::abs(d.dic));
        }
    }
}

// With a single intercept the missingness-only model has one free parameter,
// so its p_D should be close to 1.
TEST(Dic, AuxiliaryMissingnessModelPenalty) {
    auto f = small_problem(2000);
    auto aux = MissingnessOnlyModel::build(f.md, MissingMode::mcar);
    ASSERT_EQ(aux.rows.size(), 1u);
    SamplerConfig cfg;
    cfg.iterations = 6000;
    cfg.burn_in = 1000;
    const auto draws = aux.sample(cfg, 10.0);
    ASSERT_EQ(draws.size(), 5000u);
    std::vector<double> dev;
    std::vector<Eigen::VectorXd> mean{Eigen::VectorXd::Zero(1)};
    for (const auto &th : draws) {
        dev.push_back(aux.deviance(th));
        mean[0] += th[0] / static_cast<double>(draws.size());
    }
    auto r = dic_from_deviances(dev, aux.deviance(mean));
    EXPECT_NEAR(r.p_d, 1.0, 0.25);
    // The posterior mean of the logit sits near the empirical log-odds.
    std::size_t miss = 0;
    for (auto m : aux.missing[0])
        miss += m;
    const double frac = static_cast<double>(miss) / static_cast<double>(aux.missing[0].size());
    EXPECT_NEAR(mean[0][0], std::log(frac / (1 - frac)), 0.05);
}

TEST(PosteriorMean, AveragesEveryBlock) {
    ModelLayout l;
    l.x1_ll = {"intercept", "z", "t_z"};
    l.x1_other = {"intercept"};
    l.x2 = {"intercept"};
    l.x3 = {"intercept"};
    PosteriorSamples s;
    s.layout = l;
    auto a = zero_params(l, s.config.model());
    auto b = a;
    a.outcome.eta[0] << 1, 2, 3;
    b.outcome.eta[0] << 3, 4, 5;
    a.outcome.sigma2[1] = 2.0;
    b.outcome.sigma2[1] = 4.0;
    b.missing.theta[2][0] = 1.0;
    s.chains.push_back({{1}, {a}, {}});
    s.chains.push_back({{1}, {b}, {}});
    auto m = posterior_mean(s);
    EXPECT_EQ(m.outcome.eta[0], Eigen::Vector3d(2, 3, 4));
    EXPECT_EQ(m.outcome.sigma2[1], 3.0);
    EXPECT_EQ(m.missing.theta[2][0], 0.5);
}

TEST(Draws, WriteReadRoundTrip) {
    DrawTable t;
    t.names = {"sace", "b"};
    for (int c = 0; c < 2; ++c) {
        DrawTable::Chain ch;
        ch.id = c;
        ch.iteration = {11, 12, 13};
        ch.values = Eigen::MatrixXd::Random(3, 2) * 1e3;
        ch.values(0, 0) = 1.0 / 3.0;
        t.chains.push_back(ch);
    }
    std::ostringstream out;
    write_draws(t, out);
    std::istringstream in(out.str());
    auto back = read_draws(in);
    ASSERT_EQ(back.names, t.names);
    ASSERT_EQ(back.chains.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_EQ(back.chains[c].iteration, t.chains[c].iteration);
        EXPECT_EQ(back.chains[c].values, t.chains[c].values);
    }
    std::ostringstream again;
    write_draws(back, again);
    EXPECT_EQ(again.str(), out.str());
}

TEST(Draws, ParseErrorsCarryLineNumbers) {
    auto error_of = [](const std::string &text) {
        std::istringstream in(text);
        try {
            read_draws(in);
        } catch (const ValidationError &e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    const std::string head = "chain,iteration,parameter,value\n";
    EXPECT_NE(error_of("a,b\n").find("line 1"), std::string::npos);
    EXPECT_NE(error_of(head + "0,1,sace,1\n0,1,b,2\n0,2,sace,1\n").find("line 4: incomplete draw"),
              std::string::npos);
    EXPECT_NE(error_of(head + "0,1,sace,1\n0,1,b,2\n0,2,sace,abc\n").find("line 4"),
              std::string::npos);
    EXPECT_NE(error_of(head + "0,1,sace,1\n0,1,b\n").find("line 3"), std::string::npos);
    EXPECT_NE(error_of(head + "0,1,sace,1\n0,1,b,2\n0,2,sace,1\n0,2,c,2\n").find("line 5"),
              std::string::npos);
    EXPECT_NE(error_of(head).find("no draws"), std::string::npos);
}

TEST(Draws, ParameterNamesFollowModelShape) {
    ModelLayout l;
    l.x1_ll = {"intercept", "z", "t_z"};
    l.x1_other = {"intercept"};
    l.x2 = {"intercept"};
    l.x3 = {"intercept"};
    auto has = [](const std::vector<std::string> &names, const std::string &prefix) {
        return std::any_of(names.begin(), names.end(),
                           [&](const std::string &n) { return n.rfind(prefix, 0) == 0; });
    };
    auto latent = parameter_names(l, {MissingMode::latent, false});
    EXPECT_EQ(latent[0], "sace");
    EXPECT_EQ(latent[1], "tz_effect");
    EXPECT_TRUE(has(latent, "theta."));
    EXPECT_TRUE(has(latent, "alpha.DL"));
    auto mono = parameter_names(l, {MissingMode::latent, true});
    EXPECT_FALSE(has(mono, "alpha.DL"));
    EXPECT_FALSE(has(mono, "eta.DL"));
    EXPECT_FALSE(has(mono, "theta.DL"));
    EXPECT_FALSE(has(parameter_names(l, {MissingMode::mcar, false}), "theta."));
}
