#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sace {

// Input that breaks a documented contract (bad file, bad flag, bad record).
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Numerical breakdown: non-finite parameters, failed factorizations,
// non-convergent fits.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Principal strata by joint potential survival (S(1), S(0)).
// First letter: status if treated, second letter: status if untreated.
enum class Stratum : std::uint8_t { LL = 0, LD = 1, DL = 2, DD = 3 };

inline constexpr std::array<Stratum, 4> all_strata{Stratum::LL, Stratum::LD, Stratum::DL,
                                                   Stratum::DD};
// Strata that can survive in at least one arm and so carry an outcome model.
inline constexpr std::array<Stratum, 3> outcome_strata{Stratum::LL, Stratum::LD, Stratum::DL};

inline constexpr std::size_t index(Stratum g) { return static_cast<std::size_t>(g); }

inline constexpr std::string_view name(Stratum g) {
    constexpr std::array<std::string_view, 4> names{"LL", "LD", "DL", "DD"};
    return names[index(g)];
}

// Survival status of stratum g under arm z.
inline constexpr bool survives(Stratum g, int z) {
    switch (g) {
    case Stratum::LL:
        return true;
    case Stratum::LD:
        return z == 1;
    case Stratum::DL:
        return z == 0;
    case Stratum::DD:
        return false;
    }
    return false;
}

enum class MissingState : std::uint8_t { observed = 0, missing = 1, undefined = 2 };

// The six observable groups O(Z, S, M).
enum class ObservedGroup : std::uint8_t { O110, O111, O10x, O010, O011, O00x };

inline constexpr std::array<ObservedGroup, 6> all_groups{ObservedGroup::O110, ObservedGroup::O111,
                                                         ObservedGroup::O10x, ObservedGroup::O010,
                                                         ObservedGroup::O011, ObservedGroup::O00x};

inline constexpr std::string_view name(ObservedGroup o) {
    constexpr std::array<std::string_view, 6> names{"O(1,1,0)", "O(1,1,1)", "O(1,0,-)",
                                                    "O(0,1,0)", "O(0,1,1)", "O(0,0,-)"};
    return names[static_cast<std::size_t>(o)];
}

inline constexpr int arm_of(ObservedGroup o) {
    return (o == ObservedGroup::O110 || o == ObservedGroup::O111 || o == ObservedGroup::O10x) ? 1
                                                                                               : 0;
}

inline constexpr bool survived(ObservedGroup o) {
    return o != ObservedGroup::O10x && o != ObservedGroup::O00x;
}

inline constexpr bool outcome_missing(ObservedGroup o) {
    return o == ObservedGroup::O111 || o == ObservedGroup::O011;
}

inline constexpr bool outcome_observed(ObservedGroup o) {
    return o == ObservedGroup::O110 || o == ObservedGroup::O010;
}

// How the missing-outcome indicator enters the model.
enum class MissingMode : std::uint8_t {
    latent,    // M depends on the latent stratum and arm
    ignorable, // M independent of Y and G given covariates; not modelled
    mcar       // complete-case analysis: survivors with missing Y dropped
};

inline constexpr std::string_view name(MissingMode m) {
    constexpr std::array<std::string_view, 3> names{"latent", "ignorable", "mcar"};
    return names[static_cast<std::size_t>(m)];
}

inline MissingMode parse_missing_mode(std::string_view text) {
    if (text == "latent" || text == "latent-ignorable")
        return MissingMode::latent;
    if (text == "ignorable")
        return MissingMode::ignorable;
    if (text == "mcar")
        return MissingMode::mcar;
    throw ValidationError("unknown missingness mode '" + std::string(text) +
                          "' (expected latent, ignorable or mcar)");
}

struct ModelConfig {
    MissingMode mode = MissingMode::latent;
    bool monotonicity = false;
};

// Survivor cells (stratum, arm) that carry a missingness model.
struct MissingCell {
    Stratum stratum;
    int arm;
};

inline constexpr std::array<MissingCell, 4> missing_cells{
    MissingCell{Stratum::LL, 1}, MissingCell{Stratum::LL, 0}, MissingCell{Stratum::LD, 1},
    MissingCell{Stratum::DL, 0}};

// Position of (g, z) in missing_cells, or -1 when stratum g cannot survive arm z.
inline constexpr int missing_cell_index(Stratum g, int z) {
    for (std::size_t c = 0; c < missing_cells.size(); ++c)
        if (missing_cells[c].stratum == g && missing_cells[c].arm == z)
            return static_cast<int>(c);
    return -1;
}

inline std::string cell_name(std::size_t c) {
    return std::string(name(missing_cells[c].stratum)) + std::to_string(missing_cells[c].arm);
}

inline bool stratum_active(Stratum g, const ModelConfig &cfg) {
    return !(cfg.monotonicity && g == Stratum::DL);
}

} // namespace sace
