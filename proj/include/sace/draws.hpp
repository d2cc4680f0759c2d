#pragma once

#include <Eigen/Dense>

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sampler.hpp"
#include "text.hpp"

namespace sace {

// Posterior draws flattened to named scalars, one matrix (draws x parameters)
// per chain.
struct DrawTable {
    struct Chain {
        int id = 0;
        std::vector<int> iteration;
        Eigen::MatrixXd values;
    };
    std::vector<std::string> names;
    std::vector<Chain> chains;

    std::size_t parameter_index(const std::string &name) const {
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == name)
                return k;
        throw ValidationError("unknown parameter '" + name + "'");
    }

    std::size_t total_draws() const {
        std::size_t n = 0;
        for (const auto &c : chains)
            n += static_cast<std::size_t>(c.values.rows());
        return n;
    }

    // Per-chain draw sequences of one parameter.
    std::vector<std::vector<double>> series(std::size_t k) const {
        std::vector<std::vector<double>> out;
        for (const auto &c : chains) {
            const auto col = c.values.col(static_cast<Eigen::Index>(k));
            out.emplace_back(col.data(), col.data() + col.size());
        }
        return out;
    }
};

inline constexpr const char *sace_name = "sace";
inline constexpr const char *tz_effect_name = "tz_effect";

// Flattened parameter names: the SACE and per-month t_z effect first, then
// every sampled coefficient in model order.
inline std::vector<std::string> parameter_names(const ModelLayout &l, const ModelConfig &cfg) {
    std::vector<std::string> names{sace_name, tz_effect_name};
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL})
        if (stratum_active(g, cfg))
            for (const auto &c : l.x2)
                names.push_back("alpha." + std::string(name(g)) + "." + c);
    for (Stratum g : outcome_strata) {
        if (!stratum_active(g, cfg))
            continue;
        for (const auto &c : g == Stratum::LL ? l.x1_ll : l.x1_other)
            names.push_back("eta." + std::string(name(g)) + "." + c);
        names.push_back("sigma2." + std::string(name(g)));
    }
    if (cfg.mode == MissingMode::latent)
        for (std::size_t c = 0; c < missing_cells.size(); ++c)
            if (stratum_active(missing_cells[c].stratum, cfg))
                for (const auto &col : l.x3)
                    names.push_back("theta." + cell_name(c) + "." + col);
    return names;
}

inline std::vector<double> flatten(const ModelParams &p, const ModelLayout &l,
                                   const ModelConfig &cfg) {
    std::vector<double> v;
    const auto &eta_ll = p.outcome.eta[index(Stratum::LL)];
    v.push_back(eta_ll[ModelLayout::z_column]);
    v.push_back(eta_ll[ModelLayout::t_z_column] / l.t_z_sd);
    for (Stratum g : {Stratum::LL, Stratum::LD, Stratum::DL})
        if (stratum_active(g, cfg))
            for (Eigen::Index k = 0; k < p.strata.alpha[index(g)].size(); ++k)
                v.push_back(p.strata.alpha[index(g)][k]);
    for (Stratum g : outcome_strata) {
        if (!stratum_active(g, cfg))
            continue;
        for (Eigen::Index k = 0; k < p.outcome.eta[index(g)].size(); ++k)
            v.push_back(p.outcome.eta[index(g)][k]);
        v.push_back(p.outcome.sigma2[index(g)]);
    }
    if (cfg.mode == MissingMode::latent)
        for (std::size_t c = 0; c < missing_cells.size(); ++c)
            if (stratum_active(missing_cells[c].stratum, cfg))
                for (Eigen::Index k = 0; k < p.missing.theta[c].size(); ++k)
                    v.push_back(p.missing.theta[c][k]);
    return v;
}

inline DrawTable to_draw_table(const PosteriorSamples &s) {
    const ModelConfig cfg = s.config.model();
    DrawTable t;
    t.names = parameter_names(s.layout, cfg);
    for (std::size_t c = 0; c < s.chains.size(); ++c) {
        const auto &ch = s.chains[c];
        DrawTable::Chain out;
        out.id = static_cast<int>(c);
        out.iteration = ch.iteration;
        out.values.resize(static_cast<Eigen::Index>(ch.draws.size()),
                          static_cast<Eigen::Index>(t.names.size()));
        for (std::size_t d = 0; d < ch.draws.size(); ++d) {
            const auto row = flatten(ch.draws[d], s.layout, cfg);
            for (std::size_t k = 0; k < row.size(); ++k)
                out.values(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = row[k];
        }
        t.chains.push_back(std::move(out));
    }
    return t;
}

// Long-format draw log: chain,iteration,parameter,value.
inline void write_draws(const DrawTable &t, std::ostream &out) {
    out << "chain,iteration,parameter,value\n";
    for (const auto &c : t.chains)
        for (Eigen::Index d = 0; d < c.values.rows(); ++d)
            for (std::size_t k = 0; k < t.names.size(); ++k)
                out << c.id << ',' << c.iteration[static_cast<std::size_t>(d)] << ','
                    << t.names[k] << ','
                    << text::format_double(c.values(d, static_cast<Eigen::Index>(k))) << '\n';
}

inline void write_draws(const DrawTable &t, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write '" + path + "'");
    write_draws(t, out);
}

inline DrawTable read_draws(std::istream &in) {
    auto fail = [](std::size_t line, const std::string &what) {
        throw ValidationError("draws file line " + std::to_string(line) + ": " + what);
    };
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || text::trim(line) != "chain,iteration,parameter,value")
        fail(1, "expected header 'chain,iteration,parameter,value'");

    DrawTable t;
    std::map<std::string, std::size_t> name_index;
    struct Pending {
        int chain = -1;
        int iteration = -1;
        std::size_t start_line = 0;
        std::vector<double> values;
        std::size_t filled = 0;
    } cur;
    std::vector<std::vector<double>> rows;
    std::vector<int> iters;
    int chain_id = -1;
    bool names_frozen = false;

    auto flush_chain = [&]() {
        if (chain_id < 0)
            return;
        DrawTable::Chain c;
        c.id = chain_id;
        c.iteration = iters;
        c.values.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(t.names.size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t k = 0; k < t.names.size(); ++k)
                c.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
        t.chains.push_back(std::move(c));
        rows.clear();
        iters.clear();
    };
    auto finish_draw = [&]() {
        if (cur.chain < 0)
            return;
        if (!names_frozen) {
            names_frozen = true;
            cur.values.resize(t.names.size());
            cur.filled = t.names.size();
        }
        if (cur.filled != t.names.size())
            fail(cur.start_line, "incomplete draw (chain " + std::to_string(cur.chain) +
                                     ", iteration " + std::to_string(cur.iteration) + ")");
        if (cur.chain != chain_id) {
            flush_chain();
            chain_id = cur.chain;
        }
        rows.push_back(cur.values);
        iters.push_back(cur.iteration);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        auto f = text::split(line);
        if (f.size() != 4)
            fail(line_no, "expected 4 fields, found " + std::to_string(f.size()));
        auto chain = text::parse_int(f[0]);
        auto iter = text::parse_int(f[1]);
        auto value = text::parse_double(f[3]);
        if (!chain || !iter)
            fail(line_no, "unparseable chain or iteration");
        if (!value)
            fail(line_no, "unparseable value '" + std::string(f[3]) + "'");
        const std::string pname(text::trim(f[2]));
        if (static_cast<int>(*chain) != cur.chain || static_cast<int>(*iter) != cur.iteration) {
            finish_draw();
            if (static_cast<int>(*chain) < chain_id)
                fail(line_no, "chains out of order");
            cur = Pending{static_cast<int>(*chain), static_cast<int>(*iter), line_no, {}, 0};
            if (names_frozen)
                cur.values.assign(t.names.size(), 0.0);
        }
        if (!names_frozen) {
            if (name_index.count(pname))
                fail(line_no, "duplicate parameter '" + pname + "' within a draw");
            name_index[pname] = t.names.size();
            t.names.push_back(pname);
            cur.values.push_back(*value);
            continue;
        }
        auto it = name_index.find(pname);
        if (it == name_index.end())
            fail(line_no, "unknown parameter '" + pname + "'");
        if (cur.filled != it->second)
            fail(line_no, "parameter '" + pname + "' out of order");
        cur.values[it->second] = *value;
        ++cur.filled;
    }
    finish_draw();
    flush_chain();
    if (t.chains.empty())
        throw ValidationError("draws file contains no draws");
    return t;
}

inline DrawTable read_draws(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open draws file '" + path + "'");
    return read_draws(in);
}

} // namespace sace
