#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sepfit/dataset.hpp"
#include "sepfit/formula.hpp"

namespace sepfit {

/// How one predictor variable is put on the 0.5 scale.
///
/// Covariates: (x - center) / divisor with divisor = 2 * sample SD (n - 1).
/// Unordered factors: sum contrasts with deviations of +/-0.5; the first level
/// gets +0.5 in its own column and the last level -0.5 in every column.
/// Ordered factors: orthogonal polynomial contrasts on equally spaced codes,
/// each column rescaled to sample SD 0.5 on the observed rows.
struct VariableScaling {
    std::string name;
    ColumnKind kind = ColumnKind::Covariate;
    double center = 0.0;
    double divisor = 1.0;
    std::vector<std::string> levels;
    Eigen::MatrixXd contrasts;          // levels x columns
    std::vector<std::string> suffixes;  // per contrast column; "" for one-column codings

    std::size_t width() const { return kind == ColumnKind::Covariate ? 1 : static_cast<std::size_t>(contrasts.cols()); }
};

struct ScalingRecord {
    std::vector<VariableScaling> variables;

    const VariableScaling& at(const std::string& name) const;
    const VariableScaling* find(const std::string& name) const;

    double apply(const std::string& covariate, double raw) const;
    double invert(const std::string& covariate, double standardized) const;

    nlohmann::ordered_json to_json() const;
};

/// Scaling for every predictor referenced by fixed terms and random slopes.
ScalingRecord standardize(const Dataset& data, const ModelSpec& spec);

/// Orthonormal polynomial contrasts for `k` equally spaced levels
/// (k x (k-1)), leading coefficients positive.
Eigen::MatrixXd orthogonal_polynomials(int k);

}  // namespace sepfit
