#include "sepfit/design.hpp"

#include <set>

#include "sepfit/error.hpp"

namespace sepfit {

namespace {

TermColumns encode_variable(const Dataset& data, const ScalingRecord& scaling, const std::string& name) {
    const auto& col = data.column(name);
    const auto& s = scaling.at(name);
    const Eigen::Index n = static_cast<Eigen::Index>(data.rows());
    TermColumns out;
    if (s.kind == ColumnKind::Covariate) {
        out.values.resize(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) out.values(i, 0) = (col.values[i] - s.center) / s.divisor;
        out.names.push_back(name);
        return out;
    }
    out.values.resize(n, s.contrasts.cols());
    for (Eigen::Index i = 0; i < n; ++i) out.values.row(i) = s.contrasts.row(col.codes[i]);
    for (const auto& suffix : s.suffixes) out.names.push_back(name + suffix);
    return out;
}

}  // namespace

TermColumns encode_term(const Dataset& data, const ScalingRecord& scaling, const Term& term) {
    TermColumns acc = encode_variable(data, scaling, term.vars.front());
    for (std::size_t k = 1; k < term.vars.size(); ++k) {
        TermColumns next = encode_variable(data, scaling, term.vars[k]);
        TermColumns prod;
        prod.values.resize(acc.values.rows(), acc.values.cols() * next.values.cols());
        Eigen::Index c = 0;
        for (Eigen::Index a = 0; a < acc.values.cols(); ++a)
            for (Eigen::Index b = 0; b < next.values.cols(); ++b, ++c) {
                prod.values.col(c) = acc.values.col(a).cwiseProduct(next.values.col(b));
                prod.names.push_back(acc.names[a] + ":" + next.names[b]);
            }
        acc = std::move(prod);
    }
    return acc;
}

DesignMatrices build_design(const Dataset& data, const ModelSpec& spec, const ScalingRecord& scaling) {
    DesignMatrices d;
    d.scaling = scaling;
    const Eigen::Index n = static_cast<Eigen::Index>(data.rows());
    const auto& resp = data.column(spec.response);
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.y(i) = resp.codes[i];

    std::vector<TermColumns> fixed;
    Eigen::Index p = 0;
    for (const auto& t : spec.fixed_terms) {
        fixed.push_back(encode_term(data, scaling, t));
        p += fixed.back().values.cols();
    }
    d.X.resize(n, p);
    Eigen::Index c = 0;
    for (std::size_t k = 0; k < fixed.size(); ++k) {
        const auto& tc = fixed[k];
        d.X.middleCols(c, tc.values.cols()) = tc.values;
        c += tc.values.cols();
        d.x_names.insert(d.x_names.end(), tc.names.begin(), tc.names.end());
        d.x_term.insert(d.x_term.end(), tc.names.size(), k);
    }

    for (const auto& b : spec.random_blocks) {
        RandomDesign rd;
        rd.group = b.group;
        std::vector<TermColumns> cols;
        Eigen::Index q = b.has_intercept ? 1 : 0;
        for (const auto& t : b.slopes) {
            cols.push_back(encode_term(data, scaling, t));
            q += cols.back().values.cols();
        }
        rd.Z.resize(n, q);
        Eigen::Index zc = 0;
        if (b.has_intercept) {
            rd.Z.col(0).setOnes();
            rd.coef_names.push_back("(Intercept)");
            zc = 1;
        }
        for (const auto& tc : cols) {
            rd.Z.middleCols(zc, tc.values.cols()) = tc.values;
            zc += tc.values.cols();
            rd.coef_names.insert(rd.coef_names.end(), tc.names.begin(), tc.names.end());
        }
        const auto& gcol = data.column(b.group);
        std::set<int> observed(gcol.codes.begin(), gcol.codes.end());
        std::vector<int> remap(gcol.info.levels.size(), -1);
        for (int code : observed) {
            remap[code] = static_cast<int>(rd.group_levels.size());
            rd.group_levels.push_back(gcol.info.levels[code]);
        }
        rd.group_index.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) rd.group_index[i] = remap[gcol.codes[i]];
        d.blocks.push_back(std::move(rd));
    }
    return d;
}

int parameter_count(const DesignMatrices& design) {
    int count = 1 + design.p();
    for (const auto& b : design.blocks) {
        const int q = b.q();
        count += q * b.groups() + q + q * (q - 1) / 2;
    }
    return count;
}

IdentifiabilityReport check_identifiability(const DesignMatrices& design) {
    IdentifiabilityReport r;
    r.observations = design.n();
    r.parameters = parameter_count(design);
    r.enough_observations = r.observations > r.parameters;
    r.pass = r.enough_observations;
    for (const auto& b : design.blocks) {
        BlockIdentifiability bi;
        bi.group = b.group;
        bi.q = b.q();
        std::vector<std::vector<int>> rows(b.groups());
        for (int i = 0; i < design.n(); ++i) rows[b.group_index[i]].push_back(i);
        for (int g = 0; g < b.groups() && !bi.full_rank_group_found; ++g) {
            if (static_cast<int>(rows[g].size()) < bi.q) continue;
            Eigen::MatrixXd sub(rows[g].size(), bi.q);
            for (std::size_t k = 0; k < rows[g].size(); ++k) sub.row(k) = b.Z.row(rows[g][k]);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
            if (qr.rank() == bi.q) {
                bi.full_rank_group_found = true;
                bi.witness_group = b.group_levels[g];
            }
        }
        r.pass = r.pass && bi.full_rank_group_found;
        r.blocks.push_back(std::move(bi));
    }
    return r;
}

nlohmann::ordered_json IdentifiabilityReport::to_json() const {
    nlohmann::ordered_json j;
    j["observations"] = observations;
    j["parameters"] = parameters;
    j["enough_observations"] = enough_observations;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& b : blocks) {
        nlohmann::ordered_json e;
        e["group"] = b.group;
        e["coefficients"] = b.q;
        e["full_rank_group_found"] = b.full_rank_group_found;
        if (b.full_rank_group_found) e["witness_group"] = b.witness_group;
        arr.push_back(e);
    }
    j["blocks"] = arr;
    j["pass"] = pass;
    return j;
}

}  // namespace sepfit
