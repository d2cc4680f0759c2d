#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "text.hpp"
#include "types.hpp"

namespace sace {

inline constexpr double default_horizon = 18.0;

// One subject. Covariates may hold NaN (missing) until impute_covariates runs.
struct PatientRecord {
    std::string id;
    std::vector<double> covariates;
    int z = 0;        // treated before the horizon
    double t_z = 0.0; // time to treatment, or min(t_s, t_o) if untreated
    int s = 0;        // alive at the horizon
    double t_s = 0.0; // survival time
    MissingState m = MissingState::undefined;
    std::optional<double> y;
};

struct Scaling {
    double mean = 0.0;
    double sd = 1.0;
};

struct Dataset {
    std::vector<PatientRecord> records;
    double t_o = default_horizon;
    std::vector<std::string> covariate_names;
    // true for continuous covariates (standardized); false for categorical.
    std::vector<bool> continuous;
    // Cumulative (mean, sd) applied to each covariate; nullopt if never standardized.
    std::vector<std::optional<Scaling>> standardization;

    std::size_t size() const { return records.size(); }
    std::size_t covariate_count() const { return covariate_names.size(); }

    std::size_t covariate_index(const std::string &col) const {
        auto it = std::find(covariate_names.begin(), covariate_names.end(), col);
        if (it == covariate_names.end())
            throw ValidationError("unknown covariate column '" + col + "'");
        return static_cast<std::size_t>(it - covariate_names.begin());
    }

    std::vector<std::string> continuous_columns() const {
        std::vector<std::string> out;
        for (std::size_t j = 0; j < covariate_names.size(); ++j)
            if (continuous[j])
                out.push_back(covariate_names[j]);
        return out;
    }
};

// Empty string when the record satisfies every invariant, otherwise the first
// violated invariant.
inline std::string record_violation(const PatientRecord &r, double t_o) {
    constexpr double tol = 1e-9;
    if (r.z != 0 && r.z != 1)
        return "treatment indicator must be 0 or 1";
    if (r.s != 0 && r.s != 1)
        return "survival indicator must be 0 or 1";
    if (!(r.t_s > 0.0) || !std::isfinite(r.t_s))
        return "survival time must be positive and finite";
    if (!std::isfinite(r.t_z))
        return "treatment time must be finite";
    if (r.s == 0) {
        if (r.y)
            return "outcome defined despite censoring by death";
        if (r.m != MissingState::undefined)
            return "missingness indicator defined despite censoring by death";
        if (r.t_s > t_o + tol)
            return "death before the horizon requires t_s <= t_o";
    } else {
        if (r.m == MissingState::undefined)
            return "missingness indicator must be 0 or 1 for survivors";
        if (r.m == MissingState::observed && !r.y)
            return "outcome marked observed but absent";
        if (r.m == MissingState::missing && r.y)
            return "outcome marked missing but present";
        if (r.y && !std::isfinite(*r.y))
            return "outcome must be finite";
        if (r.t_s < t_o - tol)
            return "survival past the horizon requires t_s >= t_o";
    }
    if (r.z == 0) {
        const double expected = std::min(r.t_s, t_o);
        if (std::abs(r.t_z - expected) > tol * std::max(1.0, expected))
            return "untreated record must have t_z = min(t_s, t_o)";
    } else {
        if (!(r.t_z > 0.0) || r.t_z > std::min(r.t_s, t_o) + tol)
            return "treated record must have 0 < t_z <= min(t_s, t_o)";
    }
    return {};
}

inline ObservedGroup classify_observed_group(const PatientRecord &r) {
    if (r.z == 1) {
        if (r.s == 0)
            return ObservedGroup::O10x;
        return r.m == MissingState::missing ? ObservedGroup::O111 : ObservedGroup::O110;
    }
    if (r.s == 0)
        return ObservedGroup::O00x;
    return r.m == MissingState::missing ? ObservedGroup::O011 : ObservedGroup::O010;
}

// At most two strata are compatible with any observed group.
struct FeasibleSet {
    std::array<Stratum, 2> items{};
    std::size_t count = 0;

    const Stratum *begin() const { return items.data(); }
    const Stratum *end() const { return items.data() + count; }
    std::size_t size() const { return count; }
    Stratum operator[](std::size_t k) const { return items[k]; }
    bool contains(Stratum g) const { return std::find(begin(), end(), g) != end(); }
};

// Strata whose survival letter for the realized arm matches the realized survival.
inline FeasibleSet feasible_strata(ObservedGroup o, bool monotonicity) {
    const int z = arm_of(o);
    const bool s = survived(o);
    FeasibleSet out;
    for (Stratum g : all_strata) {
        if (monotonicity && g == Stratum::DL)
            continue;
        if (survives(g, z) == s)
            out.items[out.count++] = g;
    }
    return out;
}

struct CsvSchema {
    std::string id = "id";
    std::string z = "z";
    std::string t_z = "t_z";
    std::string s = "s";
    std::string t_s = "t_s";
    std::string m = "m";
    std::string y = "y";
    // Empty: every remaining column is a covariate.
    std::vector<std::string> covariates;
    // Covariates treated as categorical; others are classified automatically
    // (a column whose observed values are all 0/1 is categorical).
    std::vector<std::string> categorical;
};

namespace detail {

inline std::string row_error(std::size_t line, const std::string &what) {
    return "row " + std::to_string(line) + ": " + what;
}

inline bool is_binary_column(const std::vector<PatientRecord> &records, std::size_t j) {
    bool any = false;
    for (const auto &r : records) {
        double v = r.covariates[j];
        if (std::isnan(v))
            continue;
        any = true;
        if (v != 0.0 && v != 1.0)
            return false;
    }
    return any;
}

} // namespace detail

inline Dataset parse_csv(std::istream &in, const CsvSchema &schema = {},
                         double t_o = default_horizon) {
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError("schema error: empty input, header row expected");
    auto header = text::split(line);
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t k = 0; k < header.size(); ++k)
        pos[std::string(text::trim(header[k]))] = k;

    auto column = [&](const std::string &col) {
        auto it = pos.find(col);
        if (it == pos.end())
            throw ValidationError("schema error: missing column '" + col + "'");
        return it->second;
    };
    const std::size_t c_id = column(schema.id), c_z = column(schema.z), c_tz = column(schema.t_z),
                      c_s = column(schema.s), c_ts = column(schema.t_s), c_m = column(schema.m),
                      c_y = column(schema.y);

    Dataset ds;
    ds.t_o = t_o;
    std::vector<std::size_t> cov_cols;
    if (schema.covariates.empty()) {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (k == c_id || k == c_z || k == c_tz || k == c_s || k == c_ts || k == c_m ||
                k == c_y)
                continue;
            cov_cols.push_back(k);
            ds.covariate_names.emplace_back(text::trim(header[k]));
        }
    } else {
        for (const auto &name : schema.covariates) {
            cov_cols.push_back(column(name));
            ds.covariate_names.push_back(name);
        }
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        auto f = text::split(line);
        if (f.size() != header.size())
            throw ValidationError(detail::row_error(
                line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(f.size())));
        PatientRecord r;
        r.id = std::string(text::trim(f[c_id]));
        auto need_int = [&](std::size_t c, const char *what) {
            auto v = text::parse_int(f[c]);
            if (!v)
                throw ValidationError(detail::row_error(line_no, std::string("unparseable ") +
                                                                     what + " '" +
                                                                     std::string(f[c]) + "'"));
            return static_cast<int>(*v);
        };
        auto need_real = [&](std::size_t c, const char *what) {
            auto v = text::parse_double(f[c]);
            if (!v)
                throw ValidationError(detail::row_error(line_no, std::string("unparseable ") +
                                                                     what + " '" +
                                                                     std::string(f[c]) + "'"));
            return *v;
        };
        r.z = need_int(c_z, "z");
        r.s = need_int(c_s, "s");
        r.t_z = need_real(c_tz, "t_z");
        r.t_s = need_real(c_ts, "t_s");
        if (text::is_na(f[c_m])) {
            r.m = MissingState::undefined;
        } else {
            int m = need_int(c_m, "m");
            if (m != 0 && m != 1)
                throw ValidationError(detail::row_error(line_no, "m must be 0, 1 or NA"));
            r.m = m == 1 ? MissingState::missing : MissingState::observed;
        }
        if (!text::is_na(f[c_y]))
            r.y = need_real(c_y, "y");
        r.covariates.reserve(cov_cols.size());
        for (std::size_t c : cov_cols) {
            if (text::is_na(f[c]))
                r.covariates.push_back(std::nan(""));
            else
                r.covariates.push_back(need_real(c, "covariate"));
        }
        if (auto why = record_violation(r, t_o); !why.empty())
            throw ValidationError(detail::row_error(line_no, why));
        ds.records.push_back(std::move(r));
    }

    ds.continuous.assign(ds.covariate_count(), true);
    ds.standardization.assign(ds.covariate_count(), std::nullopt);
    for (std::size_t j = 0; j < ds.covariate_count(); ++j) {
        bool forced = std::find(schema.categorical.begin(), schema.categorical.end(),
                                ds.covariate_names[j]) != schema.categorical.end();
        ds.continuous[j] = !(forced || detail::is_binary_column(ds.records, j));
    }
    return ds;
}

inline Dataset load_csv(const std::string &path, const CsvSchema &schema = {},
                        double t_o = default_horizon) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open data file '" + path + "'");
    return parse_csv(in, schema, t_o);
}

inline void write_csv(const Dataset &ds, std::ostream &out) {
    out << "id,z,t_z,s,t_s,m,y";
    for (const auto &n : ds.covariate_names)
        out << ',' << n;
    out << '\n';
    for (const auto &r : ds.records) {
        out << r.id << ',' << r.z << ',' << text::format_double(r.t_z) << ',' << r.s << ','
            << text::format_double(r.t_s) << ',';
        switch (r.m) {
        case MissingState::observed:
            out << '0';
            break;
        case MissingState::missing:
            out << '1';
            break;
        case MissingState::undefined:
            out << "NA";
            break;
        }
        out << ',' << (r.y ? text::format_double(*r.y) : std::string("NA"));
        for (double v : r.covariates)
            out << ',' << text::format_double(v);
        out << '\n';
    }
}

inline void write_csv(const Dataset &ds, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write '" + path + "'");
    write_csv(ds, out);
}

// Sample mean and sd (n - 1 denominator) of a covariate.
inline Scaling column_moments(const Dataset &ds, std::size_t j) {
    const std::size_t n = ds.size();
    double sum = 0.0;
    for (const auto &r : ds.records)
        sum += r.covariates[j];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto &r : ds.records)
        ss += (r.covariates[j] - mean) * (r.covariates[j] - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    return {mean, sd};
}

inline Dataset standardize(Dataset ds, const std::vector<std::string> &columns) {
    for (const auto &col : columns) {
        const std::size_t j = ds.covariate_index(col);
        for (const auto &r : ds.records)
            if (!std::isfinite(r.covariates[j]))
                throw ValidationError("cannot standardize column '" + col +
                                      "': non-finite values (impute first)");
        const Scaling s = column_moments(ds, j);
        if (!(s.sd > 0.0))
            throw ValidationError("cannot standardize column '" + col + "': zero variance");
        for (auto &r : ds.records)
            r.covariates[j] = (r.covariates[j] - s.mean) / s.sd;
        const Scaling prev = ds.standardization[j].value_or(Scaling{});
        ds.standardization[j] = Scaling{prev.mean + prev.sd * s.mean, prev.sd * s.sd};
    }
    return ds;
}

// Inverse of every standardization applied so far.
inline Dataset unstandardize(Dataset ds) {
    for (std::size_t j = 0; j < ds.covariate_count(); ++j) {
        if (!ds.standardization[j])
            continue;
        const Scaling s = *ds.standardization[j];
        for (auto &r : ds.records)
            r.covariates[j] = r.covariates[j] * s.sd + s.mean;
        ds.standardization[j].reset();
    }
    return ds;
}

struct ImputationReport {
    struct Column {
        std::string name;
        std::size_t missing = 0;
        double fraction = 0.0;
        double fill_value = 0.0;
    };
    std::vector<Column> columns;
};

// Mean imputation for continuous covariates, mode for categorical ones
// (ties resolved toward the smaller value).
inline std::pair<Dataset, ImputationReport> impute_covariates(Dataset ds) {
    ImputationReport report;
    const std::size_t n = ds.size();
    for (std::size_t j = 0; j < ds.covariate_count(); ++j) {
        ImputationReport::Column col{ds.covariate_names[j]};
        double sum = 0.0;
        std::size_t observed = 0;
        std::map<double, std::size_t> counts;
        for (const auto &r : ds.records) {
            double v = r.covariates[j];
            if (std::isnan(v)) {
                ++col.missing;
                continue;
            }
            ++observed;
            sum += v;
            ++counts[v];
        }
        if (n > 0 && observed == 0)
            throw ValidationError("covariate '" + col.name + "' has no observed values");
        if (col.missing > 0) {
            if (ds.continuous[j]) {
                col.fill_value = sum / static_cast<double>(observed);
            } else {
                std::size_t best = 0;
                for (auto [value, count] : counts)
                    if (count > best) {
                        best = count;
                        col.fill_value = value;
                    }
            }
            for (auto &r : ds.records)
                if (std::isnan(r.covariates[j]))
                    r.covariates[j] = col.fill_value;
        }
        col.fraction = n ? static_cast<double>(col.missing) / static_cast<double>(n) : 0.0;
        report.columns.push_back(col);
    }
    return {std::move(ds), std::move(report)};
}

inline void require_complete_covariates(const Dataset &ds) {
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.covariate_count(); ++j)
            if (!std::isfinite(ds.records[i].covariates[j]))
                throw ValidationError("record '" + ds.records[i].id + "': covariate '" +
                                      ds.covariate_names[j] + "' is not finite");
}

} // namespace sace
