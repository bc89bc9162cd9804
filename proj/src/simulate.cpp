#include "sepfit/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sepfit/design.hpp"
#include "sepfit/error.hpp"
#include "sepfit/formula.hpp"
#include "sepfit/mathutil.hpp"
#include "sepfit/rng.hpp"
#include "sepfit/scaling.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

namespace {

using json = nlohmann::ordered_json;

std::string group_label(const GroupGenerator& g, int k) {
    const int width = static_cast<int>(std::to_string(g.count).size());
    std::string num = std::to_string(k + 1);
    if (static_cast<int>(num.size()) < width) num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
    return g.prefix + num;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (j[static_cast<std::size_t>(r)].size() != static_cast<std::size_t>(rows))
            throw ConfigError("correlation matrix must be square");
        for (Eigen::Index c = 0; c < rows; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
    }
    return out;
}

}  // namespace

void SimScenario::validate() const {
    if (n < 1) throw ConfigError("scenario needs n >= 1");
    std::set<std::string> names{response};
    const auto claim = [&](const std::string& name) {
        if (name.empty() || !names.insert(name).second) throw ConfigError("scenario column '" + name + "' is empty or repeated");
    };
    for (const auto& c : covariates) {
        claim(c.name);
        if (c.distribution != "normal" && c.distribution != "uniform" && c.distribution != "sequence")
            throw ConfigError("unknown covariate distribution '" + c.distribution + "'");
        if (c.distribution == "normal" && !(c.b >= 0.0)) throw ConfigError("normal covariate needs sd >= 0");
        if (c.distribution == "uniform" && !(c.b > c.a)) throw ConfigError("uniform covariate needs max > min");
    }
    for (const auto& f : factors) {
        claim(f.name);
        if (f.levels.size() < 2) throw ConfigError("factor '" + f.name + "' needs at least two levels");
    }
    for (const auto& g : groups) {
        claim(g.name);
        if (g.count < 1) throw ConfigError("grouping '" + g.name + "' needs count >= 1");
    }
    for (const auto& b : blocks) {
        const auto q = b.sigma.size();
        if (b.corr.rows() != q || b.corr.cols() != q)
            throw ConfigError("block '" + b.group + "' correlation size does not match its SD vector");
        if ((b.sigma.array() < 0.0).any()) throw ConfigError("block '" + b.group + "' has a negative SD");
        if (!b.corr.isApprox(b.corr.transpose(), 1e-12) || (b.corr.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
            throw ConfigError("block '" + b.group + "' correlation must be symmetric with unit diagonal");
        if (b.corr.llt().info() != Eigen::Success)
            throw ConfigError("block '" + b.group + "' correlation is not positive definite");
    }
    for (const auto& inj : injections) {
        if (inj.y != 0 && inj.y != 1) throw ConfigError("injected response must be 0 or 1");
        for (const auto& [col, values] : inj.where)
            if (!names.count(col) || col == response) throw ConfigError("injection refers to unknown column '" + col + "'");
    }
}

SimScenario SimScenario::from_json(const json& j) {
    SimScenario s;
    s.formula = j.at("formula").get<std::string>();
    s.response = j.value("response", std::string("y"));
    s.n = j.at("n").get<int>();
    for (const auto& c : j.value("covariates", json::array())) {
        CovariateGenerator g;
        g.name = c.at("name").get<std::string>();
        g.distribution = c.value("distribution", std::string("normal"));
        if (g.distribution == "normal") {
            g.a = c.value("mean", 0.0);
            g.b = c.value("sd", 1.0);
        } else if (g.distribution == "uniform") {
            g.a = c.value("min", 0.0);
            g.b = c.value("max", 1.0);
        } else {
            g.a = c.value("start", 1.0);
            g.b = c.value("step", 1.0);
        }
        s.covariates.push_back(g);
    }
    for (const auto& f : j.value("factors", json::array()))
        s.factors.push_back({f.at("name").get<std::string>(), f.at("levels").get<std::vector<std::string>>(),
                             f.value("ordered", false)});
    for (const auto& g : j.value("groups", json::array()))
        s.groups.push_back({g.at("name").get<std::string>(), g.at("count").get<int>(),
                            g.value("prefix", g.at("name").get<std::string>())});
    s.intercept = j.value("intercept", 0.0);
    s.beta = j.value("beta", std::vector<double>{});
    for (const auto& b : j.value("random", json::array())) {
        BlockTruth t;
        t.group = b.at("group").get<std::string>();
        const auto sd = b.at("sigma").get<std::vector<double>>();
        t.sigma = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
        t.corr = b.contains("corr") ? matrix_from_json(b.at("corr"))
                                    : Eigen::MatrixXd::Identity(t.sigma.size(), t.sigma.size());
        s.blocks.push_back(std::move(t));
    }
    for (const auto& inj : j.value("injections", json::array())) {
        Injection in;
        in.y = inj.at("y").get<int>();
        for (const auto& [col, vals] : inj.at("where").items()) {
            std::vector<std::string> labels;
            if (vals.is_array()) {
                for (const auto& v : vals) labels.push_back(v.get<std::string>());
            } else {
                labels.push_back(vals.get<std::string>());
            }
            in.where.emplace_back(col, labels);
        }
        s.injections.push_back(std::move(in));
    }
    s.validate();
    return s;
}

SimScenario SimScenario::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
    }
    try {
        return from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
}

json SimScenario::to_json() const {
    json j;
    j["formula"] = formula;
    j["response"] = response;
    j["n"] = n;
    json cov = json::array();
    for (const auto& c : covariates) {
        json g;
        g["name"] = c.name;
        g["distribution"] = c.distribution;
        if (c.distribution == "normal") {
            g["mean"] = c.a;
            g["sd"] = c.b;
        } else if (c.distribution == "uniform") {
            g["min"] = c.a;
            g["max"] = c.b;
        } else {
            g["start"] = c.a;
            g["step"] = c.b;
        }
        cov.push_back(g);
    }
    j["covariates"] = cov;
    json fac = json::array();
    for (const auto& f : factors) fac.push_back({{"name", f.name}, {"levels", f.levels}, {"ordered", f.ordered}});
    j["factors"] = fac;
    json grp = json::array();
    for (const auto& g : groups) grp.push_back({{"name", g.name}, {"count", g.count}, {"prefix", g.prefix}});
    j["groups"] = grp;
    j["intercept"] = intercept;
    j["beta"] = beta;
    json rnd = json::array();
    for (const auto& b : blocks)
        rnd.push_back({{"group", b.group},
                       {"sigma", std::vector<double>(b.sigma.data(), b.sigma.data() + b.sigma.size())},
                       {"corr", matrix_to_json(b.corr)}});
    j["random"] = rnd;
    json inj = json::array();
    for (const auto& in : injections) {
        json where = json::object();
        for (const auto& [col, vals] : in.where) where[col] = vals;
        inj.push_back({{"where", where}, {"y", in.y}});
    }
    j["injections"] = inj;
    return j;
}

SimResult simulate_dataset(const SimScenario& scenario, std::uint64_t seed) {
    scenario.validate();
    const int n = scenario.n;
    const auto nz = static_cast<std::size_t>(n);
    Rng rng(seed, 0);

    std::vector<DataColumn> columns;
    for (const auto& f : scenario.factors) {
        DataColumn c;
        c.info = {f.name, f.ordered ? ColumnKind::OrderedFactor : ColumnKind::Factor, f.levels};
        c.codes.resize(nz);
        columns.push_back(std::move(c));
    }
    int stride = 1;
    for (std::size_t k = 0; k < scenario.factors.size(); ++k) {
        const int radix = static_cast<int>(scenario.factors[k].levels.size());
        for (int i = 0; i < n; ++i) columns[k].codes[static_cast<std::size_t>(i)] = (i / stride) % radix;
        stride *= radix;
    }
    for (std::size_t k = 0; k < scenario.groups.size(); ++k) {
        const auto& g = scenario.groups[k];
        DataColumn c;
        c.info.name = g.name;
        c.info.kind = ColumnKind::Factor;
        for (int l = 0; l < g.count; ++l) c.info.levels.push_back(group_label(g, l));
        c.codes.resize(nz);
        for (int i = 0; i < n; ++i) {
            const long long idx = k == 0 ? static_cast<long long>(i) * g.count / n : (i / stride) % g.count;
            c.codes[static_cast<std::size_t>(i)] = static_cast<int>(idx);
        }
        columns.push_back(std::move(c));
    }
    for (const auto& cg : scenario.covariates) {
        DataColumn c;
        c.info = {cg.name, ColumnKind::Covariate, {}};
        c.values.resize(nz);
        for (int i = 0; i < n; ++i) {
            double v;
            if (cg.distribution == "normal") {
                v = cg.a + cg.b * rng.normal();
            } else if (cg.distribution == "uniform") {
                v = rng.uniform(cg.a, cg.b);
            } else {
                v = cg.a + cg.b * i;
            }
            c.values[static_cast<std::size_t>(i)] = v;
        }
        columns.push_back(std::move(c));
    }
    {
        DataColumn c;
        c.info = {scenario.response, ColumnKind::Response, {"0", "1"}};
        c.codes.assign(nz, 0);
        columns.push_back(std::move(c));
    }

    const ModelSpec spec = parse_formula(scenario.formula);
    Dataset provisional(columns, nz);
    validate_spec(spec, provisional.schema());
    const ScalingRecord scaling = standardize(provisional, spec);
    const DesignMatrices design = build_design(provisional, spec, scaling);

    if (static_cast<int>(scenario.beta.size()) != design.p())
        throw ConfigError("scenario gives " + std::to_string(scenario.beta.size()) + " coefficients but the design has " +
                          std::to_string(design.p()) + " columns");
    if (scenario.blocks.size() != design.blocks.size())
        throw ConfigError("scenario must give SDs for each of the " + std::to_string(design.blocks.size()) +
                          " random blocks");

    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, scenario.intercept);
    if (design.p() > 0)
        eta.noalias() += design.X * Eigen::Map<const Eigen::VectorXd>(scenario.beta.data(), design.p());

    json truth;
    truth["seed"] = seed;
    truth["formula"] = scenario.formula;
    truth["n"] = n;
    truth["b_Intercept"] = scenario.intercept;
    json beta = json::object();
    for (int k = 0; k < design.p(); ++k) beta["b_" + design.x_names[static_cast<std::size_t>(k)]] = scenario.beta[static_cast<std::size_t>(k)];
    truth["beta"] = beta;
    json blocks = json::array();
    for (std::size_t b = 0; b < design.blocks.size(); ++b) {
        const auto& rd = design.blocks[b];
        const auto& bt = scenario.blocks[b];
        if (bt.group != rd.group)
            throw ConfigError("scenario random block " + std::to_string(b + 1) + " is for '" + bt.group + "' but the formula has '" +
                              rd.group + "'");
        if (bt.sigma.size() != rd.q())
            throw ConfigError("block '" + rd.group + "' needs " + std::to_string(rd.q()) + " SDs");
        const Eigen::MatrixXd L = bt.corr.llt().matrixL();
        Eigen::MatrixXd u(rd.groups(), rd.q());
        for (int g = 0; g < rd.groups(); ++g) {
            Eigen::VectorXd z(rd.q());
            for (int k = 0; k < rd.q(); ++k) z(k) = rng.normal();
            u.row(g) = (bt.sigma.asDiagonal() * (L * z)).transpose();
        }
        for (int i = 0; i < n; ++i) eta(i) += rd.Z.row(i).dot(u.row(rd.group_index[static_cast<std::size_t>(i)]));

        json jb;
        jb["group"] = rd.group;
        jb["coefficients"] = rd.coef_names;
        jb["sigma"] = std::vector<double>(bt.sigma.data(), bt.sigma.data() + bt.sigma.size());
        jb["corr"] = matrix_to_json(bt.corr);
        json effects = json::object();
        for (int g = 0; g < rd.groups(); ++g) {
            std::vector<double> row(static_cast<std::size_t>(rd.q()));
            for (int k = 0; k < rd.q(); ++k) row[static_cast<std::size_t>(k)] = u(g, k);
            effects[rd.group_levels[static_cast<std::size_t>(g)]] = row;
        }
        jb["effects"] = effects;
        blocks.push_back(jb);
    }
    truth["blocks"] = blocks;

    auto& ycol = columns.back();
    for (int i = 0; i < n; ++i) ycol.codes[static_cast<std::size_t>(i)] = rng.bernoulli(inv_logit(eta(i))) ? 1 : 0;

    const auto label_of = [&](const std::string& col, std::size_t row) -> std::string {
        for (const auto& c : columns)
            if (c.info.name == col)
                return c.info.kind == ColumnKind::Covariate ? format_double(c.values[row]) : c.info.levels[static_cast<std::size_t>(c.codes[row])];
        return {};
    };
    std::vector<int> injected_by(nz, -1);
    json injected = json::array();
    for (std::size_t r = 0; r < scenario.injections.size(); ++r) {
        const auto& inj = scenario.injections[r];
        int count = 0;
        for (std::size_t i = 0; i < nz; ++i) {
            bool match = true;
            for (const auto& [col, labels] : inj.where) {
                const std::string v = label_of(col, i);
                if (std::find(labels.begin(), labels.end(), v) == labels.end()) {
                    match = false;
                    break;
                }
            }
            if (!match) continue;
            if (injected_by[i] >= 0)
                throw ConfigError("injection rules " + std::to_string(injected_by[i] + 1) + " and " + std::to_string(r + 1) +
                                  " overlap");
            injected_by[i] = static_cast<int>(r);
            ycol.codes[i] = inj.y;
            ++count;
        }
        injected.push_back(count);
    }
    truth["injected_rows"] = injected;
    truth["scenario"] = scenario.to_json();

    SimResult out;
    out.data = Dataset(std::move(columns), nz);
    out.schema = out.data.schema();
    out.truth = std::move(truth);
    return out;
}

void write_simulation(const SimResult& result, const std::filesystem::path& dir) {
    write_file(dir / "data.csv", to_csv(result.data));
    write_file(dir / "schema.json", result.schema.to_json_text());
    write_file(dir / "truth.json", result.truth.dump(2) + "\n");
}

}  // namespace sepfit
