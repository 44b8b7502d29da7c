#pragma once

// Parameter-update rules over flat parameter vectors: the gradient family (SGD, Adam, AdamW,
// Adamax, NAdam, RAdam, RMSprop, Adagrad, Rprop) and a (mu/mu_w, lambda)-CMA-ES.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace qdport {

enum class OptimizerKind { sgd, adam, adamw, adamax, nadam, radam, rmsprop, adagrad, rprop, cmaes };

inline constexpr std::array<OptimizerKind, 10> kAllOptimizers = {
    OptimizerKind::sgd,   OptimizerKind::adam,    OptimizerKind::adamw,   OptimizerKind::adamax, OptimizerKind::nadam,
    OptimizerKind::radam, OptimizerKind::rmsprop, OptimizerKind::adagrad, OptimizerKind::rprop,  OptimizerKind::cmaes};

inline constexpr std::string_view to_string(OptimizerKind k) {
    switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::adamax: return "adamax";
    case OptimizerKind::nadam: return "nadam";
    case OptimizerKind::radam: return "radam";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::rprop: return "rprop";
    case OptimizerKind::cmaes: return "cmaes";
    }
    return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
    for (auto k : kAllOptimizers)
        if (to_string(k) == s) return k;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct Hyper {
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  ///< decoupled, AdamW only
    double momentum = 0.0;       ///< SGD
    double rmsprop_alpha = 0.99;
    double nadam_momentum_decay = 0.004;
    double rprop_eta_plus = 1.2;
    double rprop_eta_minus = 0.5;
    double rprop_step_min = 1e-6;
    double rprop_step_max = 50.0;
    std::size_t cmaes_popsize = 0; ///< 0: 4 + floor(3 ln n)
    double cmaes_sigma0 = 0.5;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("optimizer: betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be >= 0");
        if (!(rmsprop_alpha >= 0.0 && rmsprop_alpha < 1.0)) throw ConfigError("optimizer: rmsprop alpha in [0, 1)");
        if (!(rprop_eta_plus > 1.0) || !(rprop_eta_minus > 0.0 && rprop_eta_minus < 1.0))
            throw ConfigError("optimizer: rprop etas must satisfy 0 < eta- < 1 < eta+");
        if (!(rprop_step_min > 0.0 && rprop_step_min <= rprop_step_max))
            throw ConfigError("optimizer: rprop step bounds invalid");
        if (!(cmaes_sigma0 > 0.0)) throw ConfigError("optimizer: cmaes sigma0 must be > 0");
    }

    friend bool operator==(const Hyper&, const Hyper&) = default;
};

/// Per-run optimizer memory. Meaning of the arrays depends on the kind:
/// first = first moment / momentum buffer, second = second moment / accumulated squares /
/// infinity norm, third = Rprop previous gradient, fourth = Rprop step sizes.
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<double> first;
    std::vector<double> second;
    std::vector<double> third;
    std::vector<double> fourth;
    double mu_product = 1.0; ///< NAdam running product of momentum coefficients

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One in-place update of `params` for gradient-based kinds.
inline void step(OptimizerKind kind, std::span<double> params, std::span<const double> grads, OptimizerState& st,
                 const Hyper& hp) {
    if (kind == OptimizerKind::cmaes) throw ConfigError("step: cmaes is not a gradient optimizer");
    if (params.size() != grads.size()) throw DataError("step: parameter/gradient size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericalError("step: non-finite gradient");
    const std::size_t n = params.size();
    auto ensure = [n](std::vector<double>& v, double fill = 0.0) {
        if (v.size() != n) v.assign(n, fill);
    };
    ++st.step;
    const double t = static_cast<double>(st.step);
    const double b1 = hp.beta1, b2 = hp.beta2;

    switch (kind) {
    case OptimizerKind::sgd:
        if (hp.momentum == 0.0) {
            for (std::size_t i = 0; i < n; ++i) params[i] -= hp.lr * grads[i];
        } else {
            ensure(st.first);
            for (std::size_t i = 0; i < n; ++i) {
                st.first[i] = st.step == 1 ? grads[i] : hp.momentum * st.first[i] + grads[i];
                params[i] -= hp.lr * st.first[i];
            }
        }
        break;
    case OptimizerKind::adam:
    case OptimizerKind::adamw: {
        ensure(st.first);
        ensure(st.second);
        if (kind == OptimizerKind::adamw)
            for (std::size_t i = 0; i < n; ++i) params[i] *= 1.0 - hp.lr * hp.weight_decay;
        const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < n; ++i) {
            st.first[i] = b1 * st.first[i] + (1.0 - b1) * grads[i];
            st.second[i] = b2 * st.second[i] + (1.0 - b2) * grads[i] * grads[i];
            const double m_hat = st.first[i] / bc1;
            const double v_hat = st.second[i] / bc2;
            params[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
        }
        break;
    }
    case OptimizerKind::adamax: {
        ensure(st.first);
        ensure(st.second);
        const double bc1 = 1.0 - std::pow(b1, t);
        for (std::size_t i = 0; i < n; ++i) {
            st.first[i] = b1 * st.first[i] + (1.0 - b1) * grads[i];
            st.second[i] = std::max(b2 * st.second[i], std::abs(grads[i]) + hp.eps);
            params[i] -= hp.lr / bc1 * st.first[i] / st.second[i];
        }
        break;
    }
    case OptimizerKind::nadam: {
        ensure(st.first);
        ensure(st.second);
        const double psi = hp.nadam_momentum_decay;
        const double mu = b1 * (1.0 - 0.5 * std::pow(0.96, t * psi));
        const double mu_next = b1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * psi));
        st.mu_product *= mu;
        const double mu_product_next = st.mu_product * mu_next;
        const double bc2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < n; ++i) {
            st.first[i] = b1 * st.first[i] + (1.0 - b1) * grads[i];
            st.second[i] = b2 * st.second[i] + (1.0 - b2) * grads[i] * grads[i];
            const double denom = std::sqrt(st.second[i] / bc2) + hp.eps;
            params[i] -= hp.lr * (1.0 - mu) / (1.0 - st.mu_product) * grads[i] / denom;
            params[i] -= hp.lr * mu_next / (1.0 - mu_product_next) * st.first[i] / denom;
        }
        break;
    }
    case OptimizerKind::radam: {
        ensure(st.first);
        ensure(st.second);
        const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double rho_t = rho_inf - 2.0 * t * std::pow(b2, t) / bc2;
        const bool rectify = rho_t > 5.0;
        const double r = rectify ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                                 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            st.first[i] = b1 * st.first[i] + (1.0 - b1) * grads[i];
            st.second[i] = b2 * st.second[i] + (1.0 - b2) * grads[i] * grads[i];
            const double m_hat = st.first[i] / bc1;
            if (rectify)
                params[i] -= hp.lr * m_hat * r * std::sqrt(bc2) / (std::sqrt(st.second[i]) + hp.eps);
            else
                params[i] -= hp.lr * m_hat;
        }
        break;
    }
    case OptimizerKind::rmsprop: {
        ensure(st.second);
        const double a = hp.rmsprop_alpha;
        for (std::size_t i = 0; i < n; ++i) {
            st.second[i] = a * st.second[i] + (1.0 - a) * grads[i] * grads[i];
            params[i] -= hp.lr * grads[i] / (std::sqrt(st.second[i]) + hp.eps);
        }
        break;
    }
    case OptimizerKind::adagrad: {
        ensure(st.second);
        for (std::size_t i = 0; i < n; ++i) {
            st.second[i] += grads[i] * grads[i];
            params[i] -= hp.lr * grads[i] / (std::sqrt(st.second[i]) + hp.eps);
        }
        break;
    }
    case OptimizerKind::rprop: {
        // Rprop without weight backtracking: on a sign change the step shrinks, the
        // coordinate is left alone and its remembered gradient is cleared.
        ensure(st.third);
        ensure(st.fourth, hp.lr);
        for (std::size_t i = 0; i < n; ++i) {
            double g = grads[i];
            const double prod = g * st.third[i];
            if (prod > 0.0) {
                st.fourth[i] = std::min(st.fourth[i] * hp.rprop_eta_plus, hp.rprop_step_max);
            } else if (prod < 0.0) {
                st.fourth[i] = std::max(st.fourth[i] * hp.rprop_eta_minus, hp.rprop_step_min);
                g = 0.0;
            }
            const double sign = (g > 0.0) - (g < 0.0);
            params[i] -= sign * st.fourth[i];
            st.third[i] = g;
        }
        break;
    }
    case OptimizerKind::cmaes: break;
    }
}

struct CmaesGeneration {
    double best_value = 0.0;      ///< best objective among this generation's samples
    double sigma = 0.0;           ///< step size after the update
    double min_eigenvalue = 0.0;  ///< smallest eigenvalue of C after the update
};

/// Ask/tell CMA-ES with the standard default strategy parameters.
class CmaEs {
public:
    CmaEs(std::vector<double> x0, double sigma0, std::size_t popsize, std::uint64_t seed)
        : n_(x0.size()), lambda_(popsize ? popsize : default_popsize(x0.size())), sigma_(sigma0), rng_(seed) {
        if (n_ < 1) throw ConfigError("cmaes: dimension must be >= 1");
        if (lambda_ < 4) throw ConfigError("cmaes: population size must be >= 4");
        if (!(sigma0 > 0.0)) throw ConfigError("cmaes: sigma0 must be > 0");
        mean_ = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(n_));
        mu_ = lambda_ / 2;
        weights_.resize(static_cast<Eigen::Index>(mu_));
        for (std::size_t i = 0; i < mu_; ++i)
            weights_[static_cast<Eigen::Index>(i)] =
                std::log((static_cast<double>(lambda_) + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
        weights_ /= weights_.sum();
        mu_eff_ = 1.0 / weights_.squaredNorm();
        const double n = static_cast<double>(n_);
        c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
        d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
        c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
        c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
        c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) / ((n + 2.0) * (n + 2.0) + mu_eff_));
        chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        p_sigma_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
        p_c_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
        cov_ = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        basis_ = cov_;
        scales_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_));
    }

    static std::size_t default_popsize(std::size_t dim) {
        return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(std::max<std::size_t>(dim, 1)))));
    }

    /// Draws the next population, lambda rows of length n.
    std::vector<std::vector<double>> ask() {
        samples_.clear();
        std::vector<std::vector<double>> out;
        for (std::size_t k = 0; k < lambda_; ++k) {
            Eigen::VectorXd z(static_cast<Eigen::Index>(n_));
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng_.normal();
            Eigen::VectorXd y = basis_ * scales_.cwiseProduct(z);
            Eigen::VectorXd x = mean_ + sigma_ * y;
            samples_.push_back(y);
            out.emplace_back(x.data(), x.data() + x.size());
        }
        return out;
    }

    /// Updates the distribution from objective values of the last ask().
    CmaesGeneration tell(std::span<const double> values) {
        if (values.size() != lambda_ || samples_.size() != lambda_) throw ConfigError("cmaes: tell without matching ask");
        for (double v : values)
            if (!std::isfinite(v)) throw NumericalError("cmaes: non-finite objective value");
        std::vector<std::size_t> order(lambda_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        ++generation_;

        Eigen::VectorXd y_w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < mu_; ++i) y_w += weights_[static_cast<Eigen::Index>(i)] * samples_[order[i]];
        mean_ += sigma_ * y_w;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        Eigen::VectorXd inv_sqrt_y = basis_ * (basis_.transpose() * y_w).cwiseQuotient(scales_);
        p_sigma_ = (1.0 - c_sigma_) * p_sigma_ + std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * inv_sqrt_y;
        const double ps_norm = p_sigma_.norm();
        const double n = static_cast<double>(n_);
        const double h_sigma_lhs = ps_norm / std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * static_cast<double>(generation_)));
        const bool h_sigma = h_sigma_lhs < (1.4 + 2.0 / (n + 1.0)) * chi_n_;
        p_c_ = (1.0 - c_c_) * p_c_;
        if (h_sigma) p_c_ += std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) * y_w;
        const double delta = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);

        Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < mu_; ++i) {
            const Eigen::VectorXd& y = samples_[order[i]];
            rank_mu += weights_[static_cast<Eigen::Index>(i)] * y * y.transpose();
        }
        cov_ = (1.0 - c_1_ - c_mu_) * cov_ + c_1_ * (p_c_ * p_c_.transpose() + delta * cov_) + c_mu_ * rank_mu;
        cov_ = 0.5 * (cov_ + cov_.transpose());
        sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_);
        if (eig.info() != Eigen::Success) throw NumericalError("cmaes: eigendecomposition failed");
        const double min_eig = eig.eigenvalues().minCoeff();
        if (!(min_eig > 0.0) || !std::isfinite(sigma_)) throw NumericalError("cmaes: covariance lost positive definiteness");
        basis_ = eig.eigenvectors();
        scales_ = eig.eigenvalues().cwiseSqrt();

        return {values[order[0]], sigma_, min_eig};
    }

    std::vector<double> mean() const { return {mean_.data(), mean_.data() + mean_.size()}; }
    double sigma() const { return sigma_; }
    std::size_t popsize() const { return lambda_; }
    std::size_t dim() const { return n_; }
    const Eigen::MatrixXd& covariance() const { return cov_; }

private:
    std::size_t n_;
    std::size_t lambda_;
    std::size_t mu_ = 0;
    double sigma_;
    Rng rng_;
    Eigen::VectorXd mean_, weights_, p_sigma_, p_c_, scales_;
    Eigen::MatrixXd cov_, basis_;
    double mu_eff_ = 0, c_sigma_ = 0, d_sigma_ = 0, c_c_ = 0, c_1_ = 0, c_mu_ = 0, chi_n_ = 0;
    std::vector<Eigen::VectorXd> samples_;
    std::uint64_t generation_ = 0;
};

struct CmaesResult {
    std::vector<double> best_x;
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<double> final_mean;
    std::vector<CmaesGeneration> history;
    std::size_t evaluations = 0;
};

/// Runs `iterations` generations of CMA-ES from x0. `on_generation`, when set, sees the
/// optimizer after each update (used for per-generation validation).
inline CmaesResult cmaes_run(const std::function<double(std::span<const double>)>& objective, std::vector<double> x0,
                             std::size_t popsize, std::size_t iterations, std::uint64_t seed, double sigma0 = 0.5,
                             const std::function<void(const CmaEs&, std::size_t)>& on_generation = {}) {
    if (popsize != 0 && popsize < 4) throw ConfigError("cmaes: population size must be >= 4");
    CmaEs es(std::move(x0), sigma0, popsize, seed);
    CmaesResult res;
    for (std::size_t g = 0; g < iterations; ++g) {
        auto pop = es.ask();
        std::vector<double> values;
        values.reserve(pop.size());
        for (const auto& x : pop) {
            const double v = objective(x);
            if (!std::isfinite(v)) throw NumericalError("cmaes: non-finite objective value");
            values.push_back(v);
            ++res.evaluations;
            if (v < res.best_value) {
                res.best_value = v;
                res.best_x = x;
            }
        }
        res.history.push_back(es.tell(values));
        if (on_generation) on_generation(es, g);
    }
    res.final_mean = es.mean();
    return res;
}

} // namespace qdport
