#pragma once

#include "srot/dynamical.hpp"
#include "srot/kantorovich.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace srot::cli {

enum ExitCode : int {
    kPass = 0,
    kAssertionFailure = 1,
    kInputError = 2,
    kNumericalFailure = 3,
};

struct RunConfig {
    std::string manifold = "heisenberg";  ///< heisenberg | euclidean
    int dim = 3;                          ///< chart dimension for euclidean
    ShootingConfig shooting;
    SolverKind solver = SolverKind::exact;
    EntropicOptions entropic;
    VerifyTolerances tolerances;
    std::uint64_t seed = 1;

    Manifold make_manifold() const;
    /// Throws InputError on out-of-range values.
    void validate() const;
};

/// INI-style text with [manifold] [shooting] [solver] [tolerances] [run]
/// sections and `key = value` lines. Unknown sections or keys, duplicates and
/// malformed values are InputErrors carrying the line number.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace srot::cli
