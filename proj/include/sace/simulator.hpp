#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "core_data.hpp"
#include "model.hpp"

namespace sace {

// Generating model for synthetic cohorts. Every regression is a polynomial of
// degree `ps_degree` in the true propensity score ps = beta' D (raw scale).
struct SimConfig {
    std::size_t n = 2000;
    std::size_t covariate_dim = 3;
    double covariate_correlation = 0.0; // equicorrelated standard normals
    std::vector<double> beta{0.8, -0.5, 0.3};
    double baseline_rate = 0.06; // treatment hazard per month at ps = 0
    int ps_degree = 1;
    // Strata logits for LL, LD, DL on (1, ps, ..., ps^d); DD is the reference.
    std::array<std::vector<double>, 3> alpha{std::vector<double>{1.0, 0.3},
                                             std::vector<double>{-0.8, 0.2},
                                             std::vector<double>{-1.2, -0.2}};
    bool dl_absent = false; // monotone population: no DL stratum
    // Outcome regressions: LL on (1, z, t_z [months], ps...), LD/DL on (1, ps...).
    std::array<std::vector<double>, 3> eta{std::vector<double>{24.0, 3.0, -0.05, -1.0},
                                           std::vector<double>{18.0, -0.5},
                                           std::vector<double>{20.0, 0.5}};
    std::array<double, 3> sigma2{4.0, 4.0, 4.0};
    // Missingness logits on (1, ps, ...): latent cells (LL,1), (LL,0), (LD,1), (DL,0).
    std::array<std::vector<double>, 4> theta{
        std::vector<double>{-1.5, 0.3}, std::vector<double>{-1.0, -0.3},
        std::vector<double>{0.8, 0.0}, std::vector<double>{0.5, 0.0}};
    // Ignorable mechanism: logits per arm (index = z).
    std::array<std::vector<double>, 2> theta_arm{std::vector<double>{-1.0, 0.2},
                                                 std::vector<double>{-1.0, -0.2}};
    double mcar_rate = 0.25;
    MissingMode mechanism = MissingMode::latent;
    double t_o = default_horizon;
    double post_horizon_mean = 12.0; // survivors live t_o + Exp(mean) months
    std::uint64_t seed = 1;

    double true_sace() const { return eta[0].at(1); }

    void validate() const {
        if (n == 0)
            throw ValidationError("simulation: n must be positive");
        if (beta.size() != covariate_dim)
            throw ValidationError("simulation: beta must have one entry per covariate");
        if (ps_degree < 0)
            throw ValidationError("simulation: ps_degree must be non-negative");
        const auto k = static_cast<std::size_t>(ps_degree) + 1;
        for (std::size_t g = 0; g < 3; ++g) {
            if (alpha[g].size() != k)
                throw ValidationError("simulation: alpha dimension must be ps_degree + 1");
            if (eta[g].size() != (g == 0 ? k + 2 : k))
                throw ValidationError("simulation: eta dimension mismatch");
            if (!(sigma2[g] > 0.0))
                throw ValidationError("simulation: sigma2 must be positive");
        }
        for (const auto &t : theta)
            if (t.size() != k)
                throw ValidationError("simulation: theta dimension must be ps_degree + 1");
        for (const auto &t : theta_arm)
            if (t.size() != k)
                throw ValidationError("simulation: theta_arm dimension must be ps_degree + 1");
        if (!(mcar_rate >= 0.0 && mcar_rate <= 1.0))
            throw ValidationError("simulation: mcar_rate must lie in [0, 1]");
        if (!(t_o > 0.0) || !(baseline_rate > 0.0) || !(post_horizon_mean > 0.0))
            throw ValidationError("simulation: horizons and rates must be positive");
        if (covariate_correlation < 0.0 || covariate_correlation >= 1.0)
            throw ValidationError("simulation: covariate_correlation must lie in [0, 1)");
    }
};

struct SimTruth {
    SimConfig config;
    std::vector<Stratum> strata;
    std::vector<double> ps;      // beta' D on the raw covariate scale
    std::vector<double> outcome; // realized Y for survivors (NaN if dead), before masking
    std::array<std::size_t, 4> counts{};
    std::vector<std::string> warnings;

    double sace() const { return config.true_sace(); }
};

namespace detail {

inline std::vector<double> power_row(double ps, int degree) {
    std::vector<double> row{1.0};
    for (double v : polynomial_basis(ps, degree))
        row.push_back(v);
    return row;
}

inline double dot(const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        s += a[k] * b[k];
    return s;
}

} // namespace detail

inline std::pair<Dataset, SimTruth> simulate(const SimConfig &cfg) {
    cfg.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32), 0x51u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Dataset ds;
    ds.t_o = cfg.t_o;
    for (std::size_t j = 0; j < cfg.covariate_dim; ++j)
        ds.covariate_names.push_back("x" + std::to_string(j + 1));
    ds.continuous.assign(cfg.covariate_dim, true);
    ds.standardization.assign(cfg.covariate_dim, std::nullopt);

    SimTruth truth;
    truth.config = cfg;
    const double rho = cfg.covariate_correlation;
    const int width = static_cast<int>(std::to_string(cfg.n).size());

    for (std::size_t i = 0; i < cfg.n; ++i) {
        PatientRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "s%0*zu", width, i + 1);
        r.id = id;
        const double common = normal(rng);
        for (std::size_t j = 0; j < cfg.covariate_dim; ++j)
            r.covariates.push_back(std::sqrt(1.0 - rho) * normal(rng) + std::sqrt(rho) * common);
        const double ps = detail::dot(cfg.beta, r.covariates);
        const auto row = detail::power_row(ps, cfg.ps_degree);

        // Stratum from the multinomial logit.
        std::array<double, 4> w{};
        for (std::size_t g = 0; g < 3; ++g)
            w[g] = (g == 2 && cfg.dl_absent) ? 0.0 : std::exp(detail::dot(cfg.alpha[g], row));
        w[3] = 1.0;
        const double total = w[0] + w[1] + w[2] + w[3];
        double u = unif(rng) * total;
        Stratum g = Stratum::DD;
        for (std::size_t k = 0; k < 4; ++k) {
            if (u < w[k] && w[k] > 0.0) {
                g = all_strata[k];
                break;
            }
            u -= w[k];
        }

        // The treatment decision depends on covariates only; death times are
        // then drawn consistently with the realized arm, so a treated patient
        // is always alive at t_z and an untreated one never reached T_Z < t_o.
        std::exponential_distribution<double> treat(cfg.baseline_rate * std::exp(ps));
        std::exponential_distribution<double> beyond(1.0 / cfg.post_horizon_mean);
        const double t_treat = treat(rng);
        if (t_treat < cfg.t_o) {
            r.z = 1;
            r.t_z = t_treat;
            r.t_s = survives(g, 1) ? cfg.t_o + beyond(rng)
                                   : t_treat + unif(rng) * (cfg.t_o - t_treat);
        } else {
            r.z = 0;
            r.t_s = survives(g, 0) ? cfg.t_o + beyond(rng) : unif(rng) * cfg.t_o;
            r.t_z = std::min(r.t_s, cfg.t_o);
        }
        r.s = survives(g, r.z) ? 1 : 0;

        double y = std::nan("");
        if (r.s) {
            std::vector<double> x1 = row;
            if (g == Stratum::LL)
                x1.insert(x1.begin() + 1, {static_cast<double>(r.z), r.t_z});
            y = detail::dot(cfg.eta[index(g)], x1) + std::sqrt(cfg.sigma2[index(g)]) * normal(rng);
            double phi = cfg.mcar_rate;
            if (cfg.mechanism == MissingMode::latent)
                phi = 1.0 / (1.0 + std::exp(-detail::dot(
                                       cfg.theta[static_cast<std::size_t>(missing_cell_index(g, r.z))],
                                       row)));
            else if (cfg.mechanism == MissingMode::ignorable)
                phi = 1.0 / (1.0 + std::exp(-detail::dot(cfg.theta_arm[static_cast<std::size_t>(r.z)], row)));
            const bool missing = unif(rng) < phi;
            r.m = missing ? MissingState::missing : MissingState::observed;
            if (!missing)
                r.y = y;
        }
        if (auto why = record_violation(r, cfg.t_o); !why.empty())
            throw NumericalError("simulation produced an invalid record: " + why);
        truth.strata.push_back(g);
        truth.ps.push_back(ps);
        truth.outcome.push_back(y);
        ++truth.counts[index(g)];
        ds.records.push_back(std::move(r));
    }
    for (Stratum g : all_strata) {
        if (g == Stratum::DL && cfg.dl_absent)
            continue;
        if (truth.counts[index(g)] == 0)
            truth.warnings.push_back("no subject realized in stratum " + std::string(name(g)));
    }
    return {std::move(ds), std::move(truth)};
}

// Difference in mean observed outcome between treated and untreated survivors.
inline double naive_survivor_difference(const Dataset &ds) {
    double sum[2] = {0.0, 0.0};
    double cnt[2] = {0.0, 0.0};
    for (const auto &r : ds.records)
        if (r.y) {
            sum[r.z] += *r.y;
            cnt[r.z] += 1.0;
        }
    return sum[1] / cnt[1] - sum[0] / cnt[0];
}

inline nlohmann::json to_json(const SimConfig &c) {
    return {{"n", c.n},
            {"covariate_dim", c.covariate_dim},
            {"covariate_correlation", c.covariate_correlation},
            {"beta", c.beta},
            {"baseline_rate", c.baseline_rate},
            {"ps_degree", c.ps_degree},
            {"alpha", c.alpha},
            {"dl_absent", c.dl_absent},
            {"eta", c.eta},
            {"sigma2", c.sigma2},
            {"theta", c.theta},
            {"theta_arm", c.theta_arm},
            {"mcar_rate", c.mcar_rate},
            {"mechanism", std::string(name(c.mechanism))},
            {"t_o", c.t_o},
            {"post_horizon_mean", c.post_horizon_mean},
            {"seed", c.seed}};
}

// Reads a (possibly partial) configuration; absent keys keep their defaults.
inline SimConfig sim_config_from_json(const nlohmann::json &j, SimConfig c = {}) {
    auto get = [&](const char *key, auto &field) {
        if (j.contains(key))
            j.at(key).get_to(field);
    };
    get("n", c.n);
    get("covariate_dim", c.covariate_dim);
    get("covariate_correlation", c.covariate_correlation);
    get("beta", c.beta);
    get("baseline_rate", c.baseline_rate);
    get("ps_degree", c.ps_degree);
    get("alpha", c.alpha);
    get("dl_absent", c.dl_absent);
    get("eta", c.eta);
    get("sigma2", c.sigma2);
    get("theta", c.theta);
    get("theta_arm", c.theta_arm);
    get("mcar_rate", c.mcar_rate);
    if (j.contains("mechanism"))
        c.mechanism = parse_missing_mode(j.at("mechanism").get<std::string>());
    get("t_o", c.t_o);
    get("post_horizon_mean", c.post_horizon_mean);
    get("seed", c.seed);
    return c;
}

inline nlohmann::json to_json(const SimTruth &t) {
    std::string strata;
    for (Stratum g : t.strata)
        strata += name(g);
    nlohmann::json outcome = nlohmann::json::array();
    for (double y : t.outcome)
        outcome.push_back(std::isnan(y) ? nlohmann::json(nullptr) : nlohmann::json(y));
    return {{"config", to_json(t.config)},
            {"true_sace", t.sace()},
            {"counts",
             {{"LL", t.counts[0]}, {"LD", t.counts[1]}, {"DL", t.counts[2]}, {"DD", t.counts[3]}}},
            {"strata", strata},
            {"ps", t.ps},
            {"outcome", outcome},
            {"warnings", t.warnings}};
}

inline SimTruth truth_from_json(const nlohmann::json &j) {
    SimTruth t;
    t.config = sim_config_from_json(j.at("config"));
    const auto strata = j.at("strata").get<std::string>();
    if (strata.size() % 2 != 0)
        throw ValidationError("truth manifest: malformed strata string");
    for (std::size_t k = 0; k < strata.size(); k += 2) {
        const auto code = strata.substr(k, 2);
        bool found = false;
        for (Stratum g : all_strata)
            if (name(g) == code) {
                t.strata.push_back(g);
                found = true;
            }
        if (!found)
            throw ValidationError("truth manifest: unknown stratum '" + code + "'");
    }
    j.at("ps").get_to(t.ps);
    for (const auto &v : j.at("outcome"))
        t.outcome.push_back(v.is_null() ? std::nan("") : v.get<double>());
    const auto &c = j.at("counts");
    t.counts = {c.at("LL").get<std::size_t>(), c.at("LD").get<std::size_t>(),
                c.at("DL").get<std::size_t>(), c.at("DD").get<std::size_t>()};
    j.at("warnings").get_to(t.warnings);
    return t;
}

inline void write_truth_manifest(const SimTruth &t, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write truth manifest '" + path + "'");
    out << to_json(t).dump(2) << '\n';
    if (!out)
        throw ValidationError("failed writing truth manifest '" + path + "'");
}

inline SimTruth read_truth_manifest(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open truth manifest '" + path + "'");
    try {
        return truth_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError("truth manifest '" + path + "': " + e.what());
    }
}

} // namespace sace
