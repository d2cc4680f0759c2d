#pragma once

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "core_data.hpp"
#include "draws.hpp"
#include "evaluation.hpp"
#include "model.hpp"
#include "propensity.hpp"
#include "sampler.hpp"
#include "simulator.hpp"

namespace sace {

inline constexpr const char *software_version = "0.1.0";

inline std::string sha256_hex(const std::string &bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("SHA-256 digest failed");
    static const char *hex = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < len; ++k) {
        out += hex[digest[k] >> 4];
        out += hex[digest[k] & 0xf];
    }
    return out;
}

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::ofstream open_output(const std::filesystem::path &p) {
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write '" + p.string() + "'");
    return out;
}

// Data after the pre-processing shared by every fit on the same input:
// covariate imputation, standardization and the Cox propensity model.
struct PreparedData {
    Dataset data;
    ImputationReport imputation;
    CoxFit cox;
    std::vector<double> ps;
    double prepare_seconds = 0.0;
};

inline PreparedData prepare(Dataset raw) {
    const auto start = std::chrono::steady_clock::now();
    PreparedData p;
    auto imputed = impute_covariates(std::move(raw));
    p.imputation = std::move(imputed.second);
    const auto continuous = imputed.first.continuous_columns();
    p.data = standardize(std::move(imputed.first), continuous);
    p.cox = fit_cox(to_survival(p.data));
    p.ps = propensity_scores(p.cox, p.data);
    p.prepare_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return p;
}

struct FitResult {
    ModelData full;
    PsBasis basis;
    PosteriorSamples samples;
    DrawTable draws;
    PosteriorSummary summary;
    DicResult dic;
    double sample_seconds = 0.0;
    double dic_seconds = 0.0;
};

// Fits one model (mode, degree, monotonicity) to prepared data. Under mcar the
// sampler sees complete cases only; the DIC is always evaluated on all records.
inline FitResult fit_model(const PreparedData &prep, const SamplerConfig &config,
                           bool with_dic = true) {
    config.validate();
    FitResult r;
    r.basis = PsBasis::fit(prep.ps, config.ps_degree);
    DesignOptions design;
    design.ps_degree = config.ps_degree;
    r.full = build_model_data(prep.data, prep.ps, r.basis, design);
    const ModelData fit_data =
        config.mode == MissingMode::mcar ? r.full.complete_cases() : r.full;
    const Priors priors = Priors::defaults(r.full.layout);

    auto t0 = std::chrono::steady_clock::now();
    r.samples = run_chains(fit_data, config, priors);
    r.draws = to_draw_table(r.samples);
    r.summary = summarize(r.draws);
    auto t1 = std::chrono::steady_clock::now();
    r.sample_seconds = std::chrono::duration<double>(t1 - t0).count();
    if (with_dic) {
        r.dic = compute_dic(r.samples, r.full, priors);
        if (r.dic.p_d < 0.0)
            r.summary.warnings.push_back(
                "negative effective number of parameters (p_D = " + text::format_double(r.dic.p_d) +
                "): the posterior mean is a poor plug-in, check mixing before comparing DIC");
        r.dic_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    }
    return r;
}

inline nlohmann::json to_json(const SamplerConfig &c) {
    return {{"mode", std::string(name(c.mode))},
            {"ps_degree", c.ps_degree},
            {"monotonicity", c.monotonicity},
            {"iterations", c.iterations},
            {"burn_in", c.burn_in},
            {"thin", c.thin},
            {"chains", c.chains},
            {"seed", c.seed},
            {"mh_step_alpha", c.mh_step_alpha},
            {"mh_step_theta", c.mh_step_theta},
            {"adapt_during_burnin", c.adapt_during_burnin},
            {"target_acceptance", c.target_acceptance},
            {"adapt_interval", c.adapt_interval}};
}

inline nlohmann::json to_json(const DicResult &d) {
    return {{"dbar", d.dbar}, {"d_at_mean", d.d_at_mean}, {"p_d", d.p_d}, {"dic", d.dic}};
}

struct FitOptions {
    std::string data;
    std::string out = "sace_fit";
    SamplerConfig sampler;
    double horizon = default_horizon;
    bool allow_nonconverged = false;
    bool export_ps = false;
    std::string config_file; // echoed into the manifest
};

inline Dataset load_input(const std::string &path, double horizon) {
    if (path.empty())
        throw ValidationError("--data is required");
    return load_csv(path, CsvSchema{}, horizon);
}

inline void require_cox_convergence(const CoxFit &cox, bool allow) {
    if (!cox.converged && !allow)
        throw NumericalError("Cox propensity model did not converge: " + cox.diagnostic +
                             " (rerun with --allow-nonconverged to continue)");
}

// fit: impute, standardize, Cox, PS, chains, summary, DIC. Writes draws.csv,
// summary.csv, summary.txt and manifest.json into opt.out.
inline FitResult cmd_fit(const FitOptions &opt) {
    opt.sampler.validate();
    const auto wall0 = std::chrono::steady_clock::now();
    const std::string bytes = read_file(opt.data);
    std::istringstream in(bytes);
    Dataset raw = parse_csv(in, CsvSchema{}, opt.horizon);
    const auto t_load = std::chrono::steady_clock::now();

    PreparedData prep = prepare(std::move(raw));
    require_cox_convergence(prep.cox, opt.allow_nonconverged);
    FitResult r = fit_model(prep, opt.sampler);

    namespace fs = std::filesystem;
    const fs::path dir(opt.out);
    fs::create_directories(dir);
    {
        auto out = open_output(dir / "draws.csv");
        write_draws(r.draws, out);
    }
    {
        auto out = open_output(dir / "summary.csv");
        write_summary_csv(r.summary, out);
    }
    {
        auto out = open_output(dir / "summary.txt");
        write_summary_text(r.summary, out);
    }
    if (opt.export_ps) {
        auto out = open_output(dir / "ps.csv");
        out << "id,ps,ps_rescaled\n";
        for (std::size_t i = 0; i < prep.data.size(); ++i)
            out << prep.data.records[i].id << ',' << text::format_double(prep.ps[i]) << ','
                << text::format_double(r.basis.rescale(prep.ps[i])) << '\n';
    }

    nlohmann::json manifest;
    manifest["software"] = {{"name", "sace"}, {"version", software_version}};
    manifest["command"] = "fit";
    manifest["config"] = to_json(opt.sampler);
    manifest["config"]["horizon"] = opt.horizon;
    manifest["config"]["allow_nonconverged"] = opt.allow_nonconverged;
    if (!opt.config_file.empty())
        manifest["config"]["config_file"] = opt.config_file;
    nlohmann::json streams = nlohmann::json::array();
    for (int c = 0; c < opt.sampler.chains; ++c)
        streams.push_back(c);
    manifest["seeds"] = {{"seed", opt.sampler.seed}, {"chain_streams", streams}};
    manifest["data"] = {{"path", opt.data},
                        {"sha256", sha256_hex(bytes)},
                        {"records", prep.data.size()},
                        {"records_fitted", opt.sampler.mode == MissingMode::mcar
                                               ? r.full.complete_cases().size()
                                               : r.full.size()}};
    nlohmann::json imputation = nlohmann::json::array();
    for (const auto &c : prep.imputation.columns)
        imputation.push_back({{"column", c.name},
                              {"missing", c.missing},
                              {"fraction", c.fraction},
                              {"fill_value", c.fill_value}});
    manifest["imputation"] = imputation;
    std::vector<double> beta(prep.cox.beta.data(), prep.cox.beta.data() + prep.cox.beta.size());
    manifest["cox"] = {{"covariates", prep.data.covariate_names},
                       {"beta", beta},
                       {"loglik", prep.cox.loglik},
                       {"iterations", prep.cox.iterations},
                       {"converged", prep.cox.converged},
                       {"diagnostic", prep.cox.diagnostic}};
    manifest["ps_basis"] = {{"lo", r.basis.lo}, {"hi", r.basis.hi}, {"degree", r.basis.degree}};
    nlohmann::json acceptance = nlohmann::json::array();
    for (std::size_t c = 0; c < r.samples.chains.size(); ++c)
        for (const auto &[block, rate] : r.samples.chains[c].acceptance)
            acceptance.push_back({{"chain", c}, {"block", block}, {"rate", rate}});
    manifest["acceptance"] = acceptance;
    manifest["dic"] = to_json(r.dic);
    double min_ess = std::numeric_limits<double>::infinity();
    double max_rhat = std::nan("");
    for (const auto &row : r.summary.rows) {
        min_ess = std::min(min_ess, row.ess);
        if (!std::isnan(row.rhat))
            max_rhat = std::isnan(max_rhat) ? row.rhat : std::max(max_rhat, row.rhat);
    }
    manifest["convergence"] = {{"cox_converged", prep.cox.converged},
                               {"min_ess", min_ess},
                               {"max_rhat", std::isnan(max_rhat) ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(max_rhat)},
                               {"rhat_below_1_1", std::isnan(max_rhat) ? nlohmann::json(nullptr)
                                                                       : nlohmann::json(max_rhat < 1.1)}};
    manifest["warnings"] = r.summary.warnings;
    manifest["timing_seconds"] = {
        {"load", std::chrono::duration<double>(t_load - wall0).count()},
        {"prepare", prep.prepare_seconds},
        {"sample", r.sample_seconds},
        {"dic", r.dic_seconds},
        {"total",
         std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count()}};
    auto out = open_output(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    return r;
}

// ---------------------------------------------------------------------------
// DIC scan over missingness modes x propensity degrees

struct ScanOptions {
    std::string data;
    std::string out = "sace_scan";
    std::vector<MissingMode> modes{MissingMode::latent, MissingMode::ignorable, MissingMode::mcar};
    std::vector<int> degrees{0, 1, 2, 3, 4, 5};
    SamplerConfig sampler;
    double horizon = default_horizon;
    bool allow_nonconverged = false;
};

struct ScanCell {
    MissingMode mode = MissingMode::latent;
    int degree = 0;
    bool ok = false;
    DicResult dic;
    double sace_mean = std::nan("");
    std::string error;
};

struct ScanTable {
    std::vector<MissingMode> modes;
    std::vector<int> degrees;
    std::vector<ScanCell> cells; // row-major: modes x degrees

    const ScanCell &at(std::size_t row, std::size_t col) const {
        return cells[row * degrees.size() + col];
    }
    // Column of the smallest DIC in a row, or -1 if every cell failed.
    int row_min(std::size_t row) const {
        int best = -1;
        for (std::size_t c = 0; c < degrees.size(); ++c)
            if (at(row, c).ok && (best < 0 || at(row, c).dic.dic < at(row, best).dic.dic))
                best = static_cast<int>(c);
        return best;
    }
    // Index into cells of the global minimum, or -1.
    int global_min() const {
        int best = -1;
        for (std::size_t k = 0; k < cells.size(); ++k)
            if (cells[k].ok && (best < 0 || cells[k].dic.dic < cells[best].dic.dic))
                best = static_cast<int>(k);
        return best;
    }
};

inline ScanTable dic_scan(const PreparedData &prep, const std::vector<MissingMode> &modes,
                          const std::vector<int> &degrees, const SamplerConfig &base) {
    if (modes.empty() || degrees.empty())
        throw ValidationError("DIC scan needs at least one mode and one degree");
    ScanTable t{modes, degrees, {}};
    for (MissingMode mode : modes)
        for (int d : degrees) {
            ScanCell cell;
            cell.mode = mode;
            cell.degree = d;
            SamplerConfig cfg = base;
            cfg.mode = mode;
            cfg.ps_degree = d;
            try {
                auto r = fit_model(prep, cfg);
                cell.dic = r.dic;
                cell.sace_mean = r.summary.sace().mean;
                cell.ok = true;
            } catch (const std::exception &e) {
                cell.error = e.what();
            }
            t.cells.push_back(std::move(cell));
        }
    return t;
}

inline void write_scan_csv(const ScanTable &t, std::ostream &out) {
    out << "mode,ps_degree,status,dbar,p_d,dic,sace_mean,row_min,global_min,error\n";
    const int g = t.global_min();
    for (std::size_t row = 0; row < t.modes.size(); ++row) {
        const int rm = t.row_min(row);
        for (std::size_t col = 0; col < t.degrees.size(); ++col) {
            const auto &c = t.at(row, col);
            const auto k = static_cast<int>(row * t.degrees.size() + col);
            out << name(c.mode) << ',' << c.degree << ',' << (c.ok ? "ok" : "failed") << ',';
            if (c.ok)
                out << text::format_double(c.dic.dbar) << ',' << text::format_double(c.dic.p_d)
                    << ',' << text::format_double(c.dic.dic) << ','
                    << text::format_double(c.sace_mean);
            else
                out << "NA,NA,NA,NA";
            std::string err = c.error;
            for (char &ch : err)
                if (ch == ',' || ch == '\n')
                    ch = ';';
            out << ',' << (rm == static_cast<int>(col) ? 1 : 0) << ',' << (g == k ? 1 : 0) << ','
                << err << '\n';
        }
    }
}

// Rows are modes, columns degrees; '*' marks the row minimum, '**' the global one.
inline void write_scan_text(const ScanTable &t, std::ostream &out) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "mode");
    out << buf;
    for (int d : t.degrees) {
        std::snprintf(buf, sizeof buf, " %12s", ("d=" + std::to_string(d)).c_str());
        out << buf;
    }
    out << '\n';
    const int g = t.global_min();
    for (std::size_t row = 0; row < t.modes.size(); ++row) {
        std::snprintf(buf, sizeof buf, "%-10s", std::string(name(t.modes[row])).c_str());
        out << buf;
        const int rm = t.row_min(row);
        for (std::size_t col = 0; col < t.degrees.size(); ++col) {
            const auto &c = t.at(row, col);
            const auto k = static_cast<int>(row * t.degrees.size() + col);
            std::string mark = g == k ? "**" : (rm == static_cast<int>(col) ? "*" : "");
            if (c.ok)
                std::snprintf(buf, sizeof buf, " %10.2f%-2s", c.dic.dic, mark.c_str());
            else
                std::snprintf(buf, sizeof buf, " %12s", "failed");
            out << buf;
        }
        out << '\n';
    }
    for (const auto &c : t.cells)
        if (!c.ok)
            out << "failed " << name(c.mode) << " d=" << c.degree << ": " << c.error << '\n';
}

inline ScanTable cmd_dic_scan(const ScanOptions &opt) {
    opt.sampler.validate();
    for (int d : opt.degrees)
        if (d < 0 || d > 5)
            throw ValidationError("propensity degree must lie in 0..5");
    PreparedData prep = prepare(load_input(opt.data, opt.horizon));
    require_cox_convergence(prep.cox, opt.allow_nonconverged);
    ScanTable t = dic_scan(prep, opt.modes, opt.degrees, opt.sampler);
    namespace fs = std::filesystem;
    fs::create_directories(opt.out);
    {
        auto out = open_output(fs::path(opt.out) / "dic_scan.csv");
        write_scan_csv(t, out);
    }
    auto out = open_output(fs::path(opt.out) / "dic_scan.txt");
    write_scan_text(t, out);
    return t;
}

// ---------------------------------------------------------------------------
// simulate / summarize

struct SimulateOptions {
    SimConfig config;
    std::string out = "sace_sim";
    int replicates = 1;
};

// Replicate r uses seed config.seed + r and writes data_<r>.csv / truth_<r>.json
// (data.csv / truth.json for a single replicate).
inline std::vector<SimTruth> cmd_simulate(const SimulateOptions &opt) {
    if (opt.replicates < 1)
        throw ValidationError("--replicates must be >= 1");
    opt.config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(opt.out);
    std::vector<std::future<SimTruth>> jobs;
    for (int r = 0; r < opt.replicates; ++r)
        jobs.push_back(std::async(std::launch::async, [&opt, r] {
            SimConfig cfg = opt.config;
            cfg.seed = opt.config.seed + static_cast<std::uint64_t>(r);
            auto [ds, truth] = simulate(cfg);
            const std::string suffix = opt.replicates == 1 ? "" : "_" + std::to_string(r);
            write_csv(ds, (fs::path(opt.out) / ("data" + suffix + ".csv")).string());
            write_truth_manifest(truth, (fs::path(opt.out) / ("truth" + suffix + ".json")).string());
            return truth;
        }));
    std::vector<SimTruth> out;
    for (auto &j : jobs)
        out.push_back(j.get());
    return out;
}

struct SummarizeOptions {
    std::string draws;
    std::string out; // empty: print the text table to stdout only
    std::string param;
};

inline PosteriorSummary cmd_summarize(const SummarizeOptions &opt, std::ostream &console) {
    PosteriorSummary s = summarize(read_draws(opt.draws));
    if (!opt.param.empty())
        s = select(s, opt.param);
    if (opt.out.empty()) {
        write_summary_text(s, console);
        return s;
    }
    namespace fs = std::filesystem;
    fs::create_directories(opt.out);
    {
        auto out = open_output(fs::path(opt.out) / "summary.csv");
        write_summary_csv(s, out);
    }
    auto out = open_output(fs::path(opt.out) / "summary.txt");
    write_summary_text(s, out);
    return s;
}

} // namespace sace
