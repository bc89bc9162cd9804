#include "sepfit/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sepfit/error.hpp"

namespace sepfit {

const VariableScaling* ScalingRecord::find(const std::string& name) const {
    for (const auto& v : variables)
        if (v.name == name) return &v;
    return nullptr;
}

const VariableScaling& ScalingRecord::at(const std::string& name) const {
    if (const auto* v = find(name)) return *v;
    throw DataError("no scaling recorded for '" + name + "'");
}

double ScalingRecord::apply(const std::string& covariate, double raw) const {
    const auto& v = at(covariate);
    return (raw - v.center) / v.divisor;
}

double ScalingRecord::invert(const std::string& covariate, double standardized) const {
    const auto& v = at(covariate);
    return standardized * v.divisor + v.center;
}

nlohmann::ordered_json ScalingRecord::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& v : variables) {
        nlohmann::ordered_json e;
        e["name"] = v.name;
        e["kind"] = to_string(v.kind);
        if (v.kind == ColumnKind::Covariate) {
            e["center"] = v.center;
            e["divisor"] = v.divisor;
        } else {
            e["levels"] = v.levels;
            nlohmann::ordered_json cols = nlohmann::ordered_json::array();
            for (Eigen::Index c = 0; c < v.contrasts.cols(); ++c) {
                nlohmann::ordered_json col;
                col["suffix"] = v.suffixes[c];
                std::vector<double> vals(v.contrasts.rows());
                for (Eigen::Index r = 0; r < v.contrasts.rows(); ++r) vals[r] = v.contrasts(r, c);
                col["values"] = vals;
                cols.push_back(col);
            }
            e["contrasts"] = cols;
        }
        j.push_back(e);
    }
    return j;
}

Eigen::MatrixXd orthogonal_polynomials(int k) {
    if (k < 2) throw DataError("polynomial contrasts need at least 2 levels");
    Eigen::MatrixXd basis(k, k);
    const double mid = (k + 1) / 2.0;
    for (int i = 0; i < k; ++i)
        for (int d = 0; d < k; ++d) basis(i, d) = std::pow(i + 1 - mid, d);
    // modified Gram-Schmidt
    for (int d = 0; d < k; ++d) {
        for (int e = 0; e < d; ++e) basis.col(d) -= basis.col(e).dot(basis.col(d)) * basis.col(e);
        basis.col(d) /= basis.col(d).norm();
    }
    return basis.rightCols(k - 1);
}

namespace {

std::string poly_suffix(int degree) {
    switch (degree) {
        case 1: return ".L";
        case 2: return ".Q";
        case 3: return ".C";
        default: return "^" + std::to_string(degree);
    }
}

double sample_sd(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    if (x.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / (n - 1.0));
}

VariableScaling scale_variable(const Dataset& data, const std::string& name) {
    const auto& col = data.column(name);
    VariableScaling s;
    s.name = name;
    s.kind = col.info.kind;
    switch (col.info.kind) {
        case ColumnKind::Covariate: {
            double mean = 0.0;
            for (double v : col.values) mean += v;
            mean /= static_cast<double>(col.values.size());
            const double sd = sample_sd(col.values);
            if (!(sd > 0.0)) throw DataError("covariate '" + name + "' has zero variance");
            s.center = mean;
            s.divisor = 2.0 * sd;
            return s;
        }
        case ColumnKind::Factor:
        case ColumnKind::OrderedFactor: {
            std::set<int> observed(col.codes.begin(), col.codes.end());
            if (observed.size() < 2)
                throw DataError("factor '" + name + "' has a single observed level");
            s.levels = col.info.levels;
            const int k = static_cast<int>(s.levels.size());
            if (col.info.kind == ColumnKind::Factor) {
                s.contrasts = Eigen::MatrixXd::Zero(k, k - 1);
                for (int j = 0; j < k - 1; ++j) s.contrasts(j, j) = 0.5;
                s.contrasts.row(k - 1).setConstant(-0.5);
                for (int j = 0; j < k - 1; ++j) s.suffixes.push_back(k == 2 ? "" : "." + s.levels[j]);
            } else {
                s.contrasts = orthogonal_polynomials(k);
                std::vector<double> vals(col.codes.size());
                for (int c = 0; c < k - 1; ++c) {
                    for (std::size_t i = 0; i < col.codes.size(); ++i) vals[i] = s.contrasts(col.codes[i], c);
                    const double sd = sample_sd(vals);
                    if (!(sd > 0.0))
                        throw DataError("ordered factor '" + name + "': contrast column " + poly_suffix(c + 1) +
                                        " is constant on the observed data");
                    s.contrasts.col(c) *= 0.5 / sd;
                    s.suffixes.push_back(poly_suffix(c + 1));
                }
            }
            return s;
        }
        case ColumnKind::Response: break;
    }
    throw DataError("column '" + name + "' is the response and cannot be standardized");
}

}  // namespace

ScalingRecord standardize(const Dataset& data, const ModelSpec& spec) {
    std::vector<std::string> names = spec.fixed_variables();
    for (const auto& b : spec.random_blocks)
        for (const auto& t : b.slopes)
            for (const auto& v : t.vars)
                if (std::find(names.begin(), names.end(), v) == names.end()) names.push_back(v);
    ScalingRecord rec;
    for (const auto& n : names) rec.variables.push_back(scale_variable(data, n));
    return rec;
}

}  // namespace sepfit
