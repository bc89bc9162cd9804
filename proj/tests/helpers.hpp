#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sepfit/dataset.hpp"
#include "sepfit/design.hpp"
#include "sepfit/formula.hpp"
#include "sepfit/scaling.hpp"
#include "sepfit/simulate.hpp"

namespace testutil {

/// Rows for one binary factor: `ones_a` of `n_a` successes at level A, same for B.
inline std::string two_level_csv(int n_a, int ones_a, int n_b, int ones_b) {
    std::string csv = "y,f\n";
    for (int i = 0; i < n_a; ++i) csv += std::string(i < ones_a ? "1" : "0") + ",A\n";
    for (int i = 0; i < n_b; ++i) csv += std::string(i < ones_b ? "1" : "0") + ",B\n";
    return csv;
}

inline sepfit::ColumnSchema two_level_schema() {
    return sepfit::ColumnSchema({{"y", sepfit::ColumnKind::Response, {"0", "1"}},
                                 {"f", sepfit::ColumnKind::Factor, {"A", "B"}}});
}

struct Built {
    sepfit::ModelSpec spec;
    sepfit::Dataset data;
    sepfit::DesignMatrices design;
};

inline Built build(const std::string& formula, const sepfit::Dataset& data) {
    Built b;
    b.spec = sepfit::parse_formula(formula);
    b.data = data;
    sepfit::validate_spec(b.spec, data.schema());
    const auto scaling = sepfit::standardize(data, b.spec);
    b.design = sepfit::build_design(data, b.spec, scaling);
    return b;
}

inline Built build_csv(const std::string& formula, const std::string& csv, const sepfit::ColumnSchema& schema) {
    return build(formula, sepfit::parse_csv(csv, schema));
}

/// Random intercept + condition slope mixed design used by several tests.
inline sepfit::SimScenario mixed_scenario(int n, int groups, double b0, std::vector<double> beta,
                                          std::vector<double> sigma, double rho) {
    sepfit::SimScenario s;
    s.formula = "y ~ cond + x + (1 + cond | subj)";
    s.n = n;
    s.factors.push_back({"cond", {"A", "B"}, false});
    s.groups.push_back({"subj", groups, "s"});
    s.covariates.push_back({"x", "normal", 0.0, 1.0});
    s.intercept = b0;
    s.beta = std::move(beta);
    sepfit::BlockTruth bt;
    bt.group = "subj";
    bt.sigma = Eigen::Map<Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
    bt.corr = Eigen::MatrixXd::Identity(2, 2);
    bt.corr(0, 1) = bt.corr(1, 0) = rho;
    s.blocks.push_back(bt);
    return s;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("sepfit-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
