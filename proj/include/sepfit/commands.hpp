#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>

#include <json.hpp>

#include "sepfit/mle.hpp"
#include "sepfit/posterior.hpp"
#include "sepfit/sampler.hpp"
#include "sepfit/tree.hpp"

namespace sepfit {

enum class Engine { Check, Irls, Laplace, Nuts };
const char* to_string(Engine e);
Engine engine_from_string(const std::string& s);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int formula = 2;
inline constexpr int data = 3;
inline constexpr int not_identifiable = 4;
inline constexpr int verdict_fail = 5;
}  // namespace exit_code

struct RunConfig {
    std::string formula;
    std::filesystem::path data;
    std::filesystem::path schema;
    std::filesystem::path out = "sepfit-out";
    Engine engine = Engine::Nuts;
    SamplerConfig sampler;
    PriorConfig prior;
    GroupHandling irls_groups = GroupHandling::Fixed;
    TreeOptions tree;
    int ppc_draws = 500;

    /// Option keys set explicitly (config file or flags); engine-specific
    /// keys are rejected for other engines.
    std::set<std::string> explicit_keys;

    /// Applies the keys of a run-config JSON object; relative paths are
    /// resolved against `base_dir`.
    void apply_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = {});
    void validate() const;
    nlohmann::ordered_json to_json() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Separation scans and the classification tree. Writes manifest.json,
/// separation.json, separation.txt, tree.json and tree.txt. Returns 0.
int cmd_check(const RunConfig& config, std::ostream& log);

/// Runs the configured engine. Always writes manifest.json, separation.json
/// and identifiability.json; returns an exit_code value.
int cmd_fit(const RunConfig& config, std::ostream& log);

/// Writes data.csv, schema.json, truth.json and manifest.json into `out`.
int cmd_simulate(const std::filesystem::path& scenario, std::uint64_t seed, const std::filesystem::path& out,
                 std::ostream& log);

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

}  // namespace sepfit
