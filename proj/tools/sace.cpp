// Command-line front end: simulate, fit, dic-scan, summarize.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "sace/sace.hpp"

namespace {

struct SamplerFlags {
    std::string mode = "latent";
    int ps_degree = 1;
    bool monotonicity = false;
    int iters = 5000;
    int burnin = 3000;
    int thin = 1;
    int chains = 1;
    std::uint64_t seed = 42;
    double mh_step_alpha = 1.0;
    double mh_step_theta = 1.0;
    bool no_adapt = false;

    void add(CLI::App &app, bool with_mode) {
        if (with_mode)
            app.add_option("--mode", mode, "missingness model: latent | ignorable | mcar");
        app.add_option("--ps-degree", ps_degree, "polynomial degree in the propensity score");
        app.add_flag("--monotonicity", monotonicity, "exclude the DL stratum");
        app.add_option("--iters", iters, "total MCMC iterations per chain");
        app.add_option("--burnin", burnin, "burn-in iterations");
        app.add_option("--thin", thin, "keep every k-th post burn-in draw");
        app.add_option("--chains", chains, "number of chains (run concurrently)");
        app.add_option("--seed", seed, "master RNG seed");
        app.add_option("--mh-step-alpha", mh_step_alpha, "MH step multiplier for strata blocks");
        app.add_option("--mh-step-theta", mh_step_theta, "MH step multiplier for missingness blocks");
        app.add_flag("--no-adapt", no_adapt, "disable step-size adaptation during burn-in");
    }

    sace::SamplerConfig config() const {
        sace::SamplerConfig c;
        c.mode = sace::parse_missing_mode(mode);
        c.ps_degree = ps_degree;
        c.monotonicity = monotonicity;
        c.iterations = iters;
        c.burn_in = burnin;
        c.thin = thin;
        c.chains = chains;
        c.seed = seed;
        c.mh_step_alpha = mh_step_alpha;
        c.mh_step_theta = mh_step_theta;
        c.adapt_during_burnin = !no_adapt;
        return c;
    }
};

std::vector<int> parse_degrees(const std::string &spec) {
    // "0..5" or "0,2,4"
    std::vector<int> out;
    if (auto dots = spec.find(".."); dots != std::string::npos) {
        auto lo = sace::text::parse_int(spec.substr(0, dots));
        auto hi = sace::text::parse_int(spec.substr(dots + 2));
        if (!lo || !hi || *lo > *hi)
            throw sace::ValidationError("bad degree range '" + spec + "'");
        for (long long d = *lo; d <= *hi; ++d)
            out.push_back(static_cast<int>(d));
        return out;
    }
    for (auto f : sace::text::split(spec)) {
        auto d = sace::text::parse_int(f);
        if (!d)
            throw sace::ValidationError("bad degree '" + std::string(f) + "'");
        out.push_back(static_cast<int>(*d));
    }
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Survivor average causal effect estimation with missing outcomes"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with flag values (flags on the command line win)");

    // fit
    auto *fit = app.add_subcommand("fit", "fit one model and write draws, summary and manifest");
    sace::FitOptions fit_opt;
    SamplerFlags fit_flags;
    fit->add_option("--data", fit_opt.data, "input CSV")->required();
    fit->add_option("--out", fit_opt.out, "output directory");
    fit->add_option("--horizon", fit_opt.horizon, "follow-up horizon t_o in months");
    fit->add_flag("--allow-nonconverged", fit_opt.allow_nonconverged,
                  "continue when the Cox propensity fit does not converge");
    fit->add_flag("--export-ps", fit_opt.export_ps, "also write the propensity scores");
    fit_flags.add(*fit, true);

    // dic-scan
    auto *scan = app.add_subcommand("dic-scan", "DIC over missingness modes x propensity degrees");
    sace::ScanOptions scan_opt;
    SamplerFlags scan_flags;
    std::string scan_modes = "latent,ignorable,mcar";
    std::string scan_degrees = "0..5";
    scan->add_option("--data", scan_opt.data, "input CSV")->required();
    scan->add_option("--out", scan_opt.out, "output directory");
    scan->add_option("--horizon", scan_opt.horizon, "follow-up horizon t_o in months");
    scan->add_option("--modes", scan_modes, "comma-separated missingness modes");
    scan->add_option("--degrees", scan_degrees, "degree list '0,2,4' or range '0..5'");
    scan->add_flag("--allow-nonconverged", scan_opt.allow_nonconverged,
                   "continue when the Cox propensity fit does not converge");
    scan_flags.add(*scan, false);

    // simulate
    auto *sim = app.add_subcommand("simulate", "generate synthetic cohorts with known truth");
    sace::SimulateOptions sim_opt;
    std::string sim_json;
    std::string mechanism = "latent";
    std::size_t sim_n = sim_opt.config.n;
    std::uint64_t sim_seed = sim_opt.config.seed;
    double sim_sace = sim_opt.config.true_sace();
    bool sim_monotone = false;
    sim->add_option("--out", sim_opt.out, "output directory");
    sim->add_option("--n", sim_n, "records per replicate");
    sim->add_option("--seed", sim_seed, "seed of the first replicate");
    sim->add_option("--replicates", sim_opt.replicates, "number of replicates (run concurrently)");
    sim->add_option("--mechanism", mechanism, "missingness mechanism: latent | ignorable | mcar");
    sim->add_option("--true-sace", sim_sace, "treatment effect among always-survivors");
    sim->add_flag("--monotone", sim_monotone, "generate without a DL stratum");
    sim->add_option("--sim-config", sim_json, "JSON file with generating parameters");

    // summarize
    auto *sum = app.add_subcommand("summarize", "re-derive the posterior summary from a draws file");
    sace::SummarizeOptions sum_opt;
    sum->add_option("--draws", sum_opt.draws, "draws CSV written by fit")->required();
    sum->add_option("--out", sum_opt.out, "output directory (default: print to stdout)");
    sum->add_option("--param", sum_opt.param, "report a single parameter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*fit) {
            fit_opt.sampler = fit_flags.config();
            if (auto *c = app.get_config_ptr(); c && c->count() > 0)
                fit_opt.config_file = c->as<std::string>();
            auto r = sace::cmd_fit(fit_opt);
            sace::write_summary_text(sace::select(r.summary, sace::sace_name), std::cout);
            for (const auto &w : r.summary.warnings)
                std::cerr << "warning: " << w << '\n';
            std::cout << "DIC " << sace::text::format_double(r.dic.dic) << "\nwrote " << fit_opt.out
                      << '\n';
        } else if (*scan) {
            scan_opt.sampler = scan_flags.config();
            scan_opt.modes.clear();
            for (auto m : sace::text::split(scan_modes))
                scan_opt.modes.push_back(sace::parse_missing_mode(std::string(sace::text::trim(m))));
            scan_opt.degrees = parse_degrees(scan_degrees);
            auto t = sace::cmd_dic_scan(scan_opt);
            sace::write_scan_text(t, std::cout);
        } else if (*sim) {
            if (!sim_json.empty())
                sim_opt.config = sace::sim_config_from_json(
                    nlohmann::json::parse(sace::read_file(sim_json)), sim_opt.config);
            if (sim->count("--n"))
                sim_opt.config.n = sim_n;
            if (sim->count("--seed"))
                sim_opt.config.seed = sim_seed;
            if (sim->count("--mechanism"))
                sim_opt.config.mechanism = sace::parse_missing_mode(mechanism);
            if (sim->count("--true-sace"))
                sim_opt.config.eta[0].at(1) = sim_sace;
            if (sim_monotone)
                sim_opt.config.dl_absent = true;
            auto truths = sace::cmd_simulate(sim_opt);
            for (const auto &t : truths)
                for (const auto &w : t.warnings)
                    std::cerr << "warning: " << w << '\n';
            std::cout << "wrote " << truths.size() << " replicate(s) to " << sim_opt.out << '\n';
        } else if (*sum) {
            sace::cmd_summarize(sum_opt, std::cout);
        }
    } catch (const sace::ValidationError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const sace::NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
