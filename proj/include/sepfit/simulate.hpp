#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sepfit/dataset.hpp"
#include "sepfit/schema.hpp"

namespace sepfit {

struct CovariateGenerator {
    std::string name;
    std::string distribution = "normal";  // "normal" (a = mean, b = sd), "uniform" (a, b), "sequence" (a = start, b = step)
    double a = 0.0;
    double b = 1.0;
};

/// Levels are assigned in a balanced mixed-radix cycle over rows.
struct FactorGenerator {
    std::string name;
    std::vector<std::string> levels;
    bool ordered = false;
};

/// The first grouping occupies contiguous row blocks; later ones are crossed
/// with the factor cycle.
struct GroupGenerator {
    std::string name;
    int count = 0;
    std::string prefix;
};

struct BlockTruth {
    std::string group;
    Eigen::VectorXd sigma;
    Eigen::MatrixXd corr;
};

/// Rows whose columns all take one of the listed labels get response `y`.
struct Injection {
    std::vector<std::pair<std::string, std::vector<std::string>>> where;
    int y = 1;
};

/// Synthetic data scenario. The linear predictor is evaluated on the
/// standardized design of `formula`, so `intercept`, `beta` (in design column
/// order) and the block SDs are on the fitting scale.
struct SimScenario {
    std::string formula;
    std::string response = "y";
    int n = 0;
    std::vector<CovariateGenerator> covariates;
    std::vector<FactorGenerator> factors;
    std::vector<GroupGenerator> groups;
    double intercept = 0.0;
    std::vector<double> beta;
    std::vector<BlockTruth> blocks;
    std::vector<Injection> injections;

    void validate() const;
    static SimScenario from_json(const nlohmann::ordered_json& j);
    static SimScenario from_json_text(const std::string& text);
    nlohmann::ordered_json to_json() const;
};

struct SimResult {
    Dataset data;
    ColumnSchema schema;
    nlohmann::ordered_json truth;
};

SimResult simulate_dataset(const SimScenario& scenario, std::uint64_t seed);

/// Writes data.csv, schema.json and truth.json into `dir`.
void write_simulation(const SimResult& result, const std::filesystem::path& dir);

}  // namespace sepfit
