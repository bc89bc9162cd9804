#include "sepfit/posterior.hpp"

#include <cmath>

#include "sepfit/distributions.hpp"
#include "sepfit/error.hpp"
#include "sepfit/mathutil.hpp"

namespace sepfit {

void PriorConfig::validate() const {
    if (!(intercept_scale > 0.0) || !(beta_scale > 0.0) || !(sd_scale > 0.0))
        throw ConfigError("prior scales must be positive");
    if (!(lkj_eta > 0.0)) throw ConfigError("LKJ shape must be positive");
}

ParameterLayout::ParameterLayout(int p, std::vector<std::pair<int, int>> blocks_q_groups) : p_(p) {
    Eigen::Index off = 1 + p;
    for (auto [q, groups] : blocks_q_groups) {
        BlockLayout b;
        b.q = q;
        b.groups = groups;
        b.log_sigma = off;
        off += q;
        b.cpc = off;
        off += q * (q - 1) / 2;
        b.z = off;
        off += static_cast<Eigen::Index>(q) * groups;
        blocks_.push_back(b);
    }
    dim_ = off;
}

ParameterLayout::ParameterLayout(const DesignMatrices& design)
    : ParameterLayout(design.p(), [&] {
          std::vector<std::pair<int, int>> v;
          for (const auto& b : design.blocks) v.emplace_back(b.q(), b.groups());
          return v;
      }()) {}

Eigen::MatrixXd cholesky_corr_from_unconstrained(const Eigen::Ref<const Eigen::VectorXd>& angles, int q,
                                                 double* log_jacobian) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
    double lj = 0.0;
    L(0, 0) = 1.0;
    Eigen::Index k = 0;
    for (int i = 1; i < q; ++i) {
        double cum = 0.0;  // log(1 - sum of squares so far in this row)
        for (int j = 0; j < i; ++j, ++k) {
            const double w = std::tanh(angles(k));
            const double l1w = log1m_tanh_sq(angles(k));
            L(i, j) = w * std::exp(0.5 * cum);
            lj += l1w + (j > 0 ? 0.5 * cum : 0.0);
            cum += l1w;
        }
        L(i, i) = std::exp(0.5 * cum);
    }
    if (log_jacobian) *log_jacobian = lj;
    return L;
}

namespace {

/// Accumulates d(target)/d(angles) given gL = d(target)/dL (lower triangle),
/// and adds the gradient of the construction's own log Jacobian.
void cholesky_corr_backward(const double* angles, int q, const Eigen::MatrixXd& gL, const Eigen::MatrixXd& L,
                            double* grad) {
    std::vector<double> w(q), cum(q + 1);
    Eigen::Index base = 0;
    for (int i = 1; i < q; ++i) {
        cum[0] = 0.0;
        for (int j = 0; j < i; ++j) {
            w[j] = std::tanh(angles[base + j]);
            cum[j + 1] = cum[j] + log1m_tanh_sq(angles[base + j]);
        }
        // S = sum over later entries of gL * dL/d(cum) (each is 0.5 L)
        double S = 0.5 * gL(i, i) * L(i, i);
        for (int j = i - 1; j >= 0; --j) {
            const double sech_sq = std::exp(cum[j + 1] - cum[j]);
            grad[base + j] += gL(i, j) * std::exp(0.5 * cum[j]) * sech_sq - 2.0 * w[j] * S - 2.0 * w[j] -
                              w[j] * static_cast<double>(i - 1 - j);
            S += 0.5 * gL(i, j) * L(i, j);
        }
        base += i;
    }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

Transformed transform(const ParameterLayout& layout, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (x.size() != layout.dim()) throw ConfigError("parameter vector has the wrong dimension");
    Transformed t;
    t.params.intercept = x(0);
    t.params.beta = x.segment(1, layout.p());
    for (const auto& b : layout.blocks()) {
        BlockParams bp;
        bp.sigma = x.segment(b.log_sigma, b.q).array().exp();
        t.log_jacobian += x.segment(b.log_sigma, b.q).sum();
        double lj = 0.0;
        bp.L = cholesky_corr_from_unconstrained(x.segment(b.cpc, b.q * (b.q - 1) / 2), b.q, &lj);
        t.log_jacobian += lj;
        bp.Omega = bp.L * bp.L.transpose();
        bp.Sigma = bp.sigma.asDiagonal() * bp.Omega * bp.sigma.asDiagonal();
        bp.z = Eigen::Map<const RowMat>(x.data() + b.z, b.groups, b.q);
        bp.u = bp.z * bp.L.transpose() * bp.sigma.asDiagonal();
        t.params.blocks.push_back(std::move(bp));
    }
    return t;
}

double log_prior(const ConstrainedParams& params, const PriorConfig& config) {
    double lp = cauchy_lpdf(params.intercept, 0.0, config.intercept_scale);
    for (Eigen::Index k = 0; k < params.beta.size(); ++k) lp += cauchy_lpdf(params.beta(k), 0.0, config.beta_scale);
    for (const auto& b : params.blocks) {
        for (Eigen::Index k = 0; k < b.sigma.size(); ++k) lp += half_cauchy_lpdf(b.sigma(k), config.sd_scale);
        lp += lkj_corr_cholesky_lpdf(b.L, config.lkj_eta);
        lp += -kLogSqrt2Pi * static_cast<double>(b.z.size()) - 0.5 * b.z.squaredNorm();
    }
    return lp;
}

Eigen::VectorXd linear_predictor(const ConstrainedParams& params, const DesignMatrices& design) {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(design.n(), params.intercept);
    if (design.p() > 0) eta.noalias() += design.X * params.beta;
    for (std::size_t k = 0; k < design.blocks.size(); ++k) {
        const auto& rd = design.blocks[k];
        const auto& u = params.blocks[k].u;
        for (int i = 0; i < design.n(); ++i) eta(i) += rd.Z.row(i).dot(u.row(rd.group_index[i]));
    }
    return eta;
}

double log_likelihood(const ConstrainedParams& params, const DesignMatrices& design) {
    const Eigen::VectorXd eta = linear_predictor(params, design);
    double ll = 0.0;
    for (int i = 0; i < design.n(); ++i) ll += bernoulli_logit_lpmf(design.y(i), eta(i));
    return ll;
}

LogPosterior::LogPosterior(const DesignMatrices& design, PriorConfig config)
    : design_(design), config_(config), layout_(design) {
    config_.validate();
}

double LogPosterior::value(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Transformed t = transform(layout_, x);
    return log_prior(t.params, config_) + log_likelihood(t.params, design_) + t.log_jacobian;
}

double LogPosterior::operator()(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> grad) const {
    const int p = layout_.p();
    const int n = design_.n();
    const auto& blocks = layout_.blocks();
    grad.setZero();
    double lp = 0.0;

    // Fixed effects and their priors.
    const double b0 = x(0);
    const double s0 = config_.intercept_scale, sb = config_.beta_scale;
    lp += cauchy_lpdf(b0, 0.0, s0);
    grad(0) += -2.0 * b0 / (s0 * s0 + b0 * b0);
    for (int k = 0; k < p; ++k) {
        const double bk = x(1 + k);
        lp += cauchy_lpdf(bk, 0.0, sb);
        grad(1 + k) += -2.0 * bk / (sb * sb + bk * bk);
    }

    // Random blocks: constrain, priors, Jacobians.
    std::vector<Eigen::VectorXd> sigmas(blocks.size());
    std::vector<Eigen::MatrixXd> Ls(blocks.size());
    std::vector<RowMat> us(blocks.size());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto& b = blocks[bi];
        const double ss = config_.sd_scale;
        sigmas[bi] = x.segment(b.log_sigma, b.q).array().exp();
        for (int k = 0; k < b.q; ++k) {
            const double s = sigmas[bi](k);
            lp += half_cauchy_lpdf(s, ss) + x(b.log_sigma + k);
            grad(b.log_sigma + k) += -2.0 * s * s / (ss * ss + s * s) + 1.0;
        }
        double lj = 0.0;
        Ls[bi] = cholesky_corr_from_unconstrained(x.segment(b.cpc, b.q * (b.q - 1) / 2), b.q, &lj);
        lp += lj + lkj_corr_cholesky_lpdf(Ls[bi], config_.lkj_eta);
        Eigen::Map<const RowMat> z(x.data() + b.z, b.groups, b.q);
        lp += -kLogSqrt2Pi * static_cast<double>(z.size()) - 0.5 * z.squaredNorm();
        Eigen::Map<RowMat>(grad.data() + b.z, b.groups, b.q) -= z;
        us[bi] = z * Ls[bi].transpose() * sigmas[bi].asDiagonal();
    }

    // Likelihood.
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, b0);
    if (p > 0) eta.noalias() += design_.X * x.segment(1, p);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto& rd = design_.blocks[bi];
        const RowMat& u = us[bi];
        const int q = blocks[bi].q;
        const double* zrow = rd.Z.data();
        for (int i = 0; i < n; ++i, zrow += q) {
            const double* urow = u.data() + static_cast<Eigen::Index>(rd.group_index[i]) * q;
            double acc = 0.0;
            for (int k = 0; k < q; ++k) acc += zrow[k] * urow[k];
            eta(i) += acc;
        }
    }
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) {
        lp += bernoulli_logit_lpmf(design_.y(i), eta(i));
        r(i) = design_.y(i) - inv_logit(eta(i));
    }
    grad(0) += r.sum();
    if (p > 0) grad.segment(1, p).noalias() += design_.X.transpose() * r;

    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto& b = blocks[bi];
        const auto& rd = design_.blocks[bi];
        const int q = b.q;
        RowMat A = RowMat::Zero(b.groups, q);
        const double* zrow = rd.Z.data();
        for (int i = 0; i < n; ++i, zrow += q) {
            double* arow = A.data() + static_cast<Eigen::Index>(rd.group_index[i]) * q;
            for (int k = 0; k < q; ++k) arow[k] += r(i) * zrow[k];
        }
        Eigen::Map<const RowMat> z(x.data() + b.z, b.groups, q);
        const Eigen::VectorXd& sigma = sigmas[bi];
        const Eigen::MatrixXd& L = Ls[bi];

        // u_g = D L z_g
        Eigen::Map<RowMat>(grad.data() + b.z, b.groups, q) += A * sigma.asDiagonal() * L;
        const RowMat Lz = z * L.transpose();  // rows (L z_g)^T
        for (int k = 0; k < q; ++k) grad(b.log_sigma + k) += sigma(k) * A.col(k).dot(Lz.col(k));

        if (q > 1) {
            Eigen::MatrixXd gL = sigma.asDiagonal() * (A.transpose() * z);
            for (int d = 1; d < q; ++d) gL(d, d) += (static_cast<double>(q - d - 1) + 2.0 * config_.lkj_eta - 2.0) / L(d, d);
            cholesky_corr_backward(x.data() + b.cpc, q, gL, L, grad.data() + b.cpc);
        }
    }
    return lp;
}

namespace {
std::string coef_label(const std::string& name) { return name == "(Intercept)" ? "Intercept" : name; }
}  // namespace

std::vector<std::string> LogPosterior::constrained_names() const {
    std::vector<std::string> out;
    out.push_back("b_Intercept");
    for (const auto& c : design_.x_names) out.push_back("b_" + c);
    for (const auto& rd : design_.blocks) {
        for (const auto& c : rd.coef_names) out.push_back("sd_" + rd.group + "__" + coef_label(c));
        for (int i = 0; i < rd.q(); ++i)
            for (int j = i + 1; j < rd.q(); ++j)
                out.push_back("cor_" + rd.group + "__" + coef_label(rd.coef_names[i]) + "__" + coef_label(rd.coef_names[j]));
        for (const auto& level : rd.group_levels)
            for (const auto& c : rd.coef_names) out.push_back("r_" + rd.group + "[" + level + "," + coef_label(c) + "]");
    }
    return out;
}

Eigen::VectorXd LogPosterior::constrained_values(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Transformed t = transform(layout_, x);
    std::vector<double> v;
    v.push_back(t.params.intercept);
    for (Eigen::Index k = 0; k < t.params.beta.size(); ++k) v.push_back(t.params.beta(k));
    for (const auto& b : t.params.blocks) {
        for (Eigen::Index k = 0; k < b.sigma.size(); ++k) v.push_back(b.sigma(k));
        for (Eigen::Index i = 0; i < b.Omega.rows(); ++i)
            for (Eigen::Index j = i + 1; j < b.Omega.cols(); ++j) v.push_back(b.Omega(i, j));
        for (Eigen::Index g = 0; g < b.u.rows(); ++g)
            for (Eigen::Index k = 0; k < b.u.cols(); ++k) v.push_back(b.u(g, k));
    }
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> LogPosterior::unconstrained_names() const {
    std::vector<std::string> out;
    out.push_back("b_Intercept");
    for (const auto& c : design_.x_names) out.push_back("b_" + c);
    for (const auto& rd : design_.blocks) {
        for (const auto& c : rd.coef_names) out.push_back("log_sd_" + rd.group + "__" + coef_label(c));
        for (int i = 1; i < rd.q(); ++i)
            for (int j = 0; j < i; ++j) out.push_back("cpc_" + rd.group + "[" + std::to_string(i) + "," + std::to_string(j) + "]");
        for (const auto& level : rd.group_levels)
            for (const auto& c : rd.coef_names) out.push_back("z_" + rd.group + "[" + level + "," + coef_label(c) + "]");
    }
    return out;
}

}  // namespace sepfit
