#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sepfit/dataset.hpp"
#include "sepfit/formula.hpp"
#include "sepfit/scaling.hpp"

namespace sepfit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Design for one random-effects block: an n x q matrix of per-row
/// coefficients plus the row -> group-level map.
struct RandomDesign {
    std::string group;
    std::vector<std::string> coef_names;   // "(Intercept)", slope column names
    RowMatrix Z;                           // n x q
    std::vector<int> group_index;          // per row, into group_levels
    std::vector<std::string> group_levels; // observed levels, schema order

    int q() const { return static_cast<int>(Z.cols()); }
    int groups() const { return static_cast<int>(group_levels.size()); }
};

struct DesignMatrices {
    Eigen::VectorXd y;                   // 0/1
    Eigen::MatrixXd X;                   // n x p, no intercept column
    std::vector<std::string> x_names;
    std::vector<std::size_t> x_term;     // fixed term index per column
    std::vector<RandomDesign> blocks;
    ScalingRecord scaling;

    int n() const { return static_cast<int>(y.size()); }
    int p() const { return static_cast<int>(X.cols()); }
};

/// Encoded columns for one term (product of its variables' encodings).
struct TermColumns {
    Eigen::MatrixXd values;
    std::vector<std::string> names;
};
TermColumns encode_term(const Dataset& data, const ScalingRecord& scaling, const Term& term);

DesignMatrices build_design(const Dataset& data, const ModelSpec& spec, const ScalingRecord& scaling);

struct BlockIdentifiability {
    std::string group;
    int q = 0;
    bool full_rank_group_found = false;
    std::string witness_group;  // first group with a full-rank sub-matrix
};

struct IdentifiabilityReport {
    int observations = 0;
    int parameters = 0;  // fixed + random coefficients + SDs + correlations
    bool enough_observations = false;
    std::vector<BlockIdentifiability> blocks;
    bool pass = false;

    nlohmann::ordered_json to_json() const;
};

/// Total model parameter count for the hierarchical model over `design`.
int parameter_count(const DesignMatrices& design);

IdentifiabilityReport check_identifiability(const DesignMatrices& design);

}  // namespace sepfit
