#include "sepfit/mle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sepfit/error.hpp"
#include "sepfit/mathutil.hpp"

namespace sepfit {

GlmDesign glm_design(const DesignMatrices& design, GroupHandling groups) {
    const Eigen::Index n = design.n();
    std::vector<Eigen::VectorXd> cols;
    std::vector<std::string> names;
    cols.push_back(Eigen::VectorXd::Ones(n));
    names.push_back("(Intercept)");
    for (Eigen::Index c = 0; c < design.X.cols(); ++c) {
        cols.push_back(design.X.col(c));
        names.push_back(design.x_names[c]);
    }
    GlmDesign out;
    const std::size_t fixed_count = cols.size();
    if (groups == GroupHandling::Fixed) {
        for (const auto& b : design.blocks) {
            const int G = b.groups();
            for (int g = 0; g + 1 < G; ++g) {
                Eigen::VectorXd contrast(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const int gi = b.group_index[i];
                    contrast(i) = gi == g ? 0.5 : (gi == G - 1 ? -0.5 : 0.0);
                }
                for (int k = 0; k < b.q(); ++k) {
                    const bool intercept = b.coef_names[k] == "(Intercept)";
                    cols.push_back(intercept ? contrast : Eigen::VectorXd(contrast.cwiseProduct(b.Z.col(k))));
                    names.push_back(b.group + "[" + b.group_levels[g] + "]" + (intercept ? "" : ":" + b.coef_names[k]));
                }
            }
        }
    }

    // Greedy aliasing check over the extra columns, in order.
    std::vector<Eigen::VectorXd> kept(cols.begin(), cols.begin() + static_cast<long>(fixed_count));
    std::vector<std::string> kept_names(names.begin(), names.begin() + static_cast<long>(fixed_count));
    if (cols.size() > fixed_count) {
        Eigen::MatrixXd basis(n, 0);
        auto orthonormal_append = [&](const Eigen::VectorXd& v) {
            Eigen::VectorXd r = v;
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index c = 0; c < basis.cols(); ++c) r -= basis.col(c).dot(r) * basis.col(c);
            const double norm = r.norm();
            if (norm <= 1e-9 * std::max(1.0, v.norm())) return false;
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = r / norm;
            return true;
        };
        for (std::size_t k = 0; k < fixed_count; ++k) orthonormal_append(cols[k]);
        for (std::size_t k = fixed_count; k < cols.size(); ++k) {
            if (orthonormal_append(cols[k])) {
                kept.push_back(cols[k]);
                kept_names.push_back(names[k]);
            } else {
                out.dropped.push_back(names[k]);
            }
        }
    }
    out.A.resize(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) out.A.col(static_cast<Eigen::Index>(k)) = kept[k];
    out.names = std::move(kept_names);
    out.y = design.y;
    return out;
}

double logistic_loglik(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = A * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += bernoulli_logit_lpmf(y(i), eta(i));
    return ll;
}

GlmFit fit_glm_irls(const GlmDesign& design, const GlmOptions& options) {
    if (!(options.tol > 0.0)) throw ConfigError("IRLS tolerance must be positive");
    const Eigen::MatrixXd& A = design.A;
    const Eigen::VectorXd& y = design.y;
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() < A.cols())
            throw DataError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                            std::to_string(A.cols()) + " columns)");
    }
    GlmFit fit;
    fit.names = design.names;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(A.cols());
    Eigen::MatrixXd info(A.cols(), A.cols());
    Eigen::VectorXd mu(A.rows()), w(A.rows());

    for (int it = 1; it <= options.max_iter; ++it) {
        const Eigen::VectorXd eta = A * beta;
        Eigen::VectorXd resid(A.rows());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu(i) = inv_logit(eta(i));
            const double rest = inv_logit(-eta(i));  // 1 - mu without cancellation
            w(i) = mu(i) * rest;
            resid(i) = y(i) > 0.5 ? rest : -mu(i);
        }
        info.noalias() = A.transpose() * w.asDiagonal() * A;
        const Eigen::VectorXd score = A.transpose() * resid;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        Eigen::VectorXd step;
        bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
        if (ok) {
            step = ldlt.solve(score);
            ok = step.allFinite() && ldlt.rcond() > 1e-12;
        }
        if (!ok) {
            fit.note = "information matrix numerically singular (fitted probabilities at 0 or 1); stopped";
            break;
        }
        beta += step;
        fit.iterations = it;
        fit.norm_trajectory.push_back(beta.norm());
        fit.max_abs_trajectory.push_back(beta.cwiseAbs().maxCoeff());
        fit.loglik_trajectory.push_back(logistic_loglik(A, y, beta));
        if (step.cwiseAbs().maxCoeff() < options.tol) {
            fit.converged = true;
            break;
        }
    }
    if (!fit.converged && fit.note.empty()) fit.note = "iteration limit reached";

    fit.coefficients = beta;
    fit.deviance = -2.0 * logistic_loglik(A, y, beta);
    {
        const Eigen::VectorXd eta = A * beta;
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double m = inv_logit(eta(i));
            w(i) = m * (1.0 - m);
        }
        info.noalias() = A.transpose() * w.asDiagonal() * A;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        fit.std_errors = Eigen::VectorXd::Constant(A.cols(), std::numeric_limits<double>::infinity());
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
            const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(A.cols(), A.cols()));
            for (Eigen::Index k = 0; k < A.cols(); ++k)
                if (cov(k, k) > 0.0 && std::isfinite(cov(k, k))) fit.std_errors(k) = std::sqrt(cov(k, k));
        }
    }
    return fit;
}

const char* to_string(DivergenceVerdict v) {
    switch (v) {
        case DivergenceVerdict::Converged: return "converged";
        case DivergenceVerdict::Diverging: return "diverging";
        case DivergenceVerdict::Stalled: return "stalled";
    }
    return "?";
}

DivergenceVerdict detect_mle_divergence(const GlmFit& fit, double threshold) {
    if (fit.converged) return DivergenceVerdict::Converged;
    const auto& t = fit.norm_trajectory;
    if (t.size() < 5 || fit.coefficients.size() == 0) return DivergenceVerdict::Stalled;
    if (!(fit.coefficients.cwiseAbs().maxCoeff() > threshold)) return DivergenceVerdict::Stalled;
    for (std::size_t k = t.size() - 4; k < t.size(); ++k)
        if (!(t[k] > t[k - 1])) return DivergenceVerdict::Stalled;
    return DivergenceVerdict::Diverging;
}

nlohmann::ordered_json GlmFit::to_json() const {
    nlohmann::ordered_json j;
    j["engine"] = "irls";
    j["converged"] = converged;
    j["verdict"] = to_string(detect_mle_divergence(*this));
    j["iterations"] = iterations;
    j["deviance"] = deviance;
    nlohmann::ordered_json coefs = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < coefficients.size(); ++k) {
        nlohmann::ordered_json c;
        c["name"] = names[k];
        c["estimate"] = coefficients(k);
        if (std::isfinite(std_errors(k)))
            c["std_error"] = std_errors(k);
        else
            c["std_error"] = nullptr;
        coefs.push_back(c);
    }
    j["coefficients"] = coefs;
    j["norm_trajectory"] = norm_trajectory;
    j["max_abs_trajectory"] = max_abs_trajectory;
    j["loglik_trajectory"] = loglik_trajectory;
    if (!note.empty()) j["note"] = note;
    return j;
}

namespace {

/// Approximate marginal log-likelihood and its gradient in (beta, log sigma).
class LaplaceObjective {
public:
    LaplaceObjective(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const std::vector<int>& group_index, int groups)
        : A_(A), y_(y), rows_(static_cast<std::size_t>(groups)), modes_(Eigen::VectorXd::Zero(groups)) {
        for (std::size_t i = 0; i < group_index.size(); ++i) {
            const int g = group_index[i];
            if (g < 0 || g >= groups) throw DataError("group index out of range");
            rows_[static_cast<std::size_t>(g)].push_back(static_cast<Eigen::Index>(i));
        }
    }

    /// Returns L; fills dL/dbeta and dL/dsigma.
    double evaluate(const Eigen::VectorXd& beta, double sigma, Eigen::VectorXd& grad_beta, double& grad_sigma) {
        const Eigen::VectorXd eta = A_ * beta;
        const Eigen::Index p = A_.cols();
        grad_beta = Eigen::VectorXd::Zero(p);
        grad_sigma = 0.0;
        double total = 0.0;
        Eigen::VectorXd wA(p), tA(p);
        for (std::size_t g = 0; g < rows_.size(); ++g) {
            const auto& rows = rows_[g];
            double b = solve_mode(eta, rows, sigma, modes_(static_cast<Eigen::Index>(g)));
            modes_(static_cast<Eigen::Index>(g)) = b;
            double h = -0.5 * b * b, W = 0.0, T = 0.0, R = 0.0;
            wA.setZero();
            tA.setZero();
            for (Eigen::Index i : rows) {
                const double e = eta(i) + sigma * b;
                const double mu = inv_logit(e);
                const double r = y_(i) - mu;
                const double w = mu * (1.0 - mu);
                const double t = w * (1.0 - 2.0 * mu);
                h += bernoulli_logit_lpmf(y_(i), e);
                W += w;
                T += t;
                R += r;
                grad_beta += r * A_.row(i).transpose();
                wA += w * A_.row(i).transpose();
                tA += t * A_.row(i).transpose();
            }
            const double s2 = sigma * sigma;
            const double D = 1.0 + s2 * W;
            total += h - 0.5 * std::log(D);
            const Eigen::VectorXd db_dbeta = (-sigma / D) * wA;
            const double db_dsigma = (R - sigma * W * b) / D;
            const Eigen::VectorXd dD_dbeta = s2 * tA + s2 * sigma * T * db_dbeta;
            const double dD_dsigma = 2.0 * sigma * W + s2 * T * b + s2 * sigma * T * db_dsigma;
            grad_beta -= (0.5 / D) * dD_dbeta;
            grad_sigma += R * b - 0.5 * dD_dsigma / D;
        }
        return total;
    }

    const Eigen::VectorXd& modes() const { return modes_; }

private:
    // Maximizes h(b) = sum log p(y | eta + sigma b) - b^2/2, which is concave.
    double solve_mode(const Eigen::VectorXd& eta, const std::vector<Eigen::Index>& rows, double sigma, double b) const {
        if (sigma == 0.0) return 0.0;
        auto value = [&](double bb) {
            double h = -0.5 * bb * bb;
            for (Eigen::Index i : rows) h += bernoulli_logit_lpmf(y_(i), eta(i) + sigma * bb);
            return h;
        };
        double hb = value(b);
        for (int it = 0; it < 200; ++it) {
            double d1 = -b, d2 = -1.0;
            for (Eigen::Index i : rows) {
                const double mu = inv_logit(eta(i) + sigma * b);
                d1 += sigma * (y_(i) - mu);
                d2 -= sigma * sigma * mu * (1.0 - mu);
            }
            double step = -d1 / d2;
            double next = b + step, hn = value(next);
            for (int half = 0; half < 60 && hn < hb; ++half) {
                step *= 0.5;
                next = b + step;
                hn = value(next);
            }
            if (hn < hb) break;
            b = next;
            hb = hn;
            if (std::abs(step) < 1e-13 * (1.0 + std::abs(b))) break;
        }
        return b;
    }

    const Eigen::MatrixXd& A_;
    const Eigen::VectorXd& y_;
    std::vector<std::vector<Eigen::Index>> rows_;
    Eigen::VectorXd modes_;
};

constexpr double kMinLogSigma = -10.0;

}  // namespace

LaplaceFit fit_glmm_laplace(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const std::vector<int>& group_index,
                            int groups, const LaplaceOptions& options) {
    if (groups < 1) throw DataError("Laplace fit needs at least one group");
    if (options.fixed_sigma && *options.fixed_sigma < 0.0) throw ConfigError("fixed sigma must be >= 0");
    LaplaceObjective obj(A, y, group_index, groups);
    const Eigen::Index p = A.cols();
    const bool free_sigma = !options.fixed_sigma.has_value();
    const Eigen::Index dim = p + (free_sigma ? 1 : 0);

    // Minimize f = -L over x = (beta, log sigma).
    auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double sigma = free_sigma ? std::exp(x(p)) : *options.fixed_sigma;
        Eigen::VectorXd gb;
        double gs;
        const double L = obj.evaluate(x.head(p), sigma, gb, gs);
        g.resize(dim);
        g.head(p) = -gb;
        if (free_sigma) g(p) = -gs * sigma;
        return -L;
    };
    auto projected = [&](const Eigen::VectorXd& x, Eigen::VectorXd g) {
        if (free_sigma && x(p) <= kMinLogSigma && g(p) > 0.0) g(p) = 0.0;
        return g;
    };

    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd g;
    double f = eval(x, g);
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(dim, dim);
    LaplaceFit fit;
    int it = 0;
    for (; it < options.max_iter; ++it) {
        const Eigen::VectorXd pg = projected(x, g);
        if (!std::isfinite(f) || !g.allFinite()) {
            fit.note = "objective became non-finite";
            break;
        }
        if (pg.cwiseAbs().maxCoeff() < options.tol) {
            fit.converged = true;
            break;
        }
        Eigen::VectorXd d = -Hinv * g;
        if (g.dot(d) >= 0.0) {
            Hinv.setIdentity();
            d = -g;
        }
        const double dmax = d.cwiseAbs().maxCoeff();
        if (dmax > 5.0) d *= 5.0 / dmax;
        double t = 1.0;
        Eigen::VectorXd xn, gn;
        double fn = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = x + t * d;
            if (free_sigma && xn(p) < kMinLogSigma) xn(p) = kMinLogSigma;
            fn = eval(xn, gn);
            if (std::isfinite(fn) && fn <= f + 1e-4 * g.dot(xn - x)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            fit.note = "line search failed to improve the objective";
            break;
        }
        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd yv = gn - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dim, dim);
            Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        x = xn;
        g = gn;
        f = fn;
    }
    if (!fit.converged && fit.note.empty()) fit.note = "iteration limit reached";
    // Refresh modes at the final point.
    f = eval(x, g);
    fit.iterations = it;
    fit.gradient_max_norm = projected(x, g).cwiseAbs().maxCoeff();
    fit.beta = x.head(p);
    fit.sigma = free_sigma ? std::exp(x(p)) : *options.fixed_sigma;
    fit.group_modes = fit.sigma * obj.modes();
    fit.log_likelihood = -f;
    fit.boundary = fit.sigma < options.boundary_sigma;
    if (fit.boundary && free_sigma) fit.note = (fit.note.empty() ? "" : fit.note + "; ") + "sigma at the zero boundary";
    return fit;
}

LaplaceFit fit_glmm_laplace(const DesignMatrices& design, const LaplaceOptions& options, bool* reduced) {
    if (design.blocks.empty()) throw DataError("Laplace engine needs a random-effects block");
    const auto& block = design.blocks.front();
    if (reduced) *reduced = design.blocks.size() > 1 || block.q() != 1 || block.coef_names.front() != "(Intercept)";
    GlmDesign gd = glm_design(design, GroupHandling::Ignore);
    LaplaceFit fit = fit_glmm_laplace(gd.A, gd.y, block.group_index, block.groups(), options);
    fit.names = gd.names;
    fit.group_levels = block.group_levels;
    return fit;
}

nlohmann::ordered_json LaplaceFit::to_json() const {
    nlohmann::ordered_json j;
    j["engine"] = "laplace";
    j["converged"] = converged;
    j["boundary"] = boundary;
    j["iterations"] = iterations;
    j["gradient_max_norm"] = gradient_max_norm;
    j["log_likelihood"] = log_likelihood;
    nlohmann::ordered_json coefs = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        nlohmann::ordered_json c;
        c["name"] = k < static_cast<Eigen::Index>(names.size()) ? names[k] : "beta" + std::to_string(k);
        c["estimate"] = beta(k);
        coefs.push_back(c);
    }
    j["coefficients"] = coefs;
    j["sigma"] = sigma;
    nlohmann::ordered_json modes = nlohmann::ordered_json::array();
    for (Eigen::Index g = 0; g < group_modes.size(); ++g) {
        nlohmann::ordered_json m;
        m["group"] = g < static_cast<Eigen::Index>(group_levels.size()) ? group_levels[g] : std::to_string(g);
        m["mode"] = group_modes(g);
        modes.push_back(m);
    }
    j["group_modes"] = modes;
    if (!note.empty()) j["note"] = note;
    return j;
}

}  // namespace sepfit
