#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/linalg.hpp"
#include "mtif/model.hpp"

namespace mtif {

struct LineSearchConfig {
    double shrink = 0.5;
    double sufficient_decrease = 1e-4;
};

struct SolverConfig {
    double grad_tol = 1e-10;  // stopping threshold on the joint gradient inf-norm
    int max_iter = 200;
    double damping = 0.0;  // added to Hessian diagonals up front; ladder starts above it
    LineSearchConfig line_search;

    void validate() const {
        if (!(grad_tol > 0)) throw InvalidConfig("grad_tol must be positive");
        if (max_iter < 1) throw InvalidConfig("max_iter must be >= 1");
        if (damping < 0) throw InvalidConfig("damping must be nonnegative");
    }
};

struct FitResult {
    MtlParams params;
    int iterations = 0;
    double final_grad_norm = 0.0;
    bool converged = false;
    double damping_used = 0.0;  // largest diagonal shift any Newton step needed
    std::vector<double> objective_trace;  // pre-step objective values (line-searched fits only)
};

struct JointGradient {
    std::vector<Eigen::VectorXd> theta;
    Eigen::VectorXd gamma;

    double inf_norm() const {
        double m = gamma.size() ? gamma.lpNorm<Eigen::Infinity>() : 0.0;
        for (const auto& g : theta)
            if (g.size()) m = std::max(m, g.lpNorm<Eigen::Infinity>());
        return m;
    }
};

namespace detail {

inline void check_fit_inputs(const ModelSpec& spec, const MtlDataset& ds,
                             const TrainWeights& sigma) {
    spec.validate();
    if (ds.task_count() != spec.task_count())
        throw DimMismatch("dataset task count != model task count");
    if (ds.dim != spec.dim) throw DimMismatch("dataset dim != model dim");
    if (!sigma.matches(ds)) throw DimMismatch("sigma shape != dataset training shape");
    for (int k = 0; k < ds.task_count(); ++k)
        if (ds.train_size(k) == 0)
            throw EmptySplit("task " + std::to_string(k) + " has no training samples");
}

/// Objective generalized over both weighting schemes:
///   sum_j t_j [ (1/n_j) sum_i s_ji loss_ji + Omega_j ].
/// Instance-level weighting sets t == 1; task-level weighting sets s == 1 and
/// scales the regularizer too.
inline double weighted_objective(const ModelSpec& spec, const MtlParams& params,
                                 const MtlDataset& ds, const std::vector<double>& task_scale,
                                 const TrainWeights& sigma, const std::vector<int>& denoms) {
    double total = 0.0;
    for (int k = 0; k < spec.task_count(); ++k) {
        if (task_scale[k] == 0.0) continue;
        double acc = 0.0;
        for (int i = 0; i < ds.train_size(k); ++i)
            if (sigma(k, i) != 0.0)
                acc += sigma(k, i) * sample_loss(spec, params, k, ds.tasks[k].train[i]);
        total += task_scale[k] * (acc / denoms[k] + reg_value_grad_hess(spec, params, k).value);
    }
    return total;
}

inline JointGradient weighted_gradient(const ModelSpec& spec, const MtlParams& params,
                                       const MtlDataset& ds,
                                       const std::vector<double>& task_scale,
                                       const TrainWeights& sigma,
                                       const std::vector<int>& denoms) {
    JointGradient g;
    g.theta.assign(spec.task_count(), Eigen::VectorXd());
    g.gamma = Eigen::VectorXd::Zero(spec.dim);
    for (int k = 0; k < spec.task_count(); ++k) {
        if (task_scale[k] == 0.0) continue;
        Eigen::VectorXd gk = Eigen::VectorXd::Zero(spec.dim);
        for (int i = 0; i < ds.train_size(k); ++i)
            if (sigma(k, i) != 0.0)
                gk += sigma(k, i) * sample_grad(spec, params, k, ds.tasks[k].train[i]).theta;
        gk /= denoms[k];
        RegTerms r = reg_value_grad_hess(spec, params, k);
        g.theta[k] = task_scale[k] * (gk + r.g_theta);
        g.gamma += task_scale[k] * r.g_gamma;
    }
    return g;
}

/// Hessian of the generalized objective. Sample losses touch only theta_k, so
/// cross and shared blocks come from the coupling penalty alone.
inline BlockHessian weighted_hessian(const ModelSpec& spec, const MtlParams& params,
                                     const MtlDataset& ds,
                                     const std::vector<double>& task_scale,
                                     const TrainWeights& sigma,
                                     const std::vector<int>& denoms) {
    const int d = spec.dim;
    BlockHessian h;
    h.shared = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k < spec.task_count(); ++k) {
        Eigen::MatrixXd hk = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < ds.train_size(k); ++i) {
            const double w = task_scale[k] * sigma(k, i);
            if (w == 0.0) continue;
            const Sample& z = ds.tasks[k].train[i];
            hk.selfadjointView<Eigen::Lower>().rankUpdate(
                z.x, w / denoms[k] * sample_curvature(spec, params, k, z));
        }
        hk.triangularView<Eigen::StrictlyUpper>() = hk.transpose();
        const double lam2 = 2.0 * task_scale[k] * spec.lambdas[k];
        hk.diagonal().array() += lam2;
        h.diag.push_back(std::move(hk));
        h.cross.push_back(-lam2 * Eigen::MatrixXd::Identity(d, d));
        h.shared.diagonal().array() += lam2;
    }
    return h;
}

inline BlockHessian damped(BlockHessian h, double delta) {
    if (delta > 0) {
        for (auto& m : h.diag) m.diagonal().array() += delta;
        h.shared.diagonal().array() += delta;
    }
    return h;
}

struct CoreOptions {
    std::vector<double> task_scale;
    const MtlParams* warm = nullptr;
    const std::vector<int>* denominators = nullptr;
};

/// Damped-Newton minimizer of the generalized objective over the non-frozen
/// tasks plus gamma. Frozen tasks (task_scale 0) keep their initial values and
/// are dropped from the Newton system; the shared block stays well posed as
/// long as one task remains active.
inline FitResult newton_fit(const ModelSpec& spec, const MtlDataset& ds,
                            const TrainWeights& sigma, const SolverConfig& cfg,
                            const CoreOptions& opt) {
    cfg.validate();
    check_fit_inputs(spec, ds, sigma);
    const int K = spec.task_count();
    std::vector<int> denoms = opt.denominators ? *opt.denominators : ds.train_sizes();
    if (static_cast<int>(denoms.size()) != K) throw DimMismatch("denominators length != K");
    for (int n : denoms)
        if (n <= 0) throw InvalidConfig("denominators must be positive");

    std::vector<int> active;
    for (int k = 0; k < K; ++k)
        if (opt.task_scale[k] > 0.0) active.push_back(k);
    if (active.empty()) throw InvalidConfig("all tasks have zero weight");

    FitResult res;
    res.params = opt.warm ? *opt.warm : MtlParams::zeros(spec);
    const bool quadratic = spec.kind == ModelKind::ridge_linear;

    for (int iter = 0; iter <= cfg.max_iter; ++iter) {
        JointGradient g =
            weighted_gradient(spec, res.params, ds, opt.task_scale, sigma, denoms);
        res.final_grad_norm = g.inf_norm();
        res.iterations = iter;
        if (res.final_grad_norm <= cfg.grad_tol) {
            res.converged = true;
            return res;
        }
        if (iter == cfg.max_iter) break;

        BlockHessian h =
            weighted_hessian(spec, res.params, ds, opt.task_scale, sigma, denoms);
        if (static_cast<int>(active.size()) < K) {
            BlockHessian sub;
            sub.shared = h.shared;
            for (int k : active) {
                sub.diag.push_back(std::move(h.diag[k]));
                sub.cross.push_back(std::move(h.cross[k]));
            }
            h = std::move(sub);
        }

        std::vector<Eigen::VectorXd> step(active.size());
        for (size_t a = 0; a < active.size(); ++a) step[a] = g.theta[active[a]];
        Eigen::VectorXd step_gamma = g.gamma;

        double delta = cfg.damping;
        for (int attempt = 0;; ++attempt) {
            try {
                BlockCholesky chol(damped(h, delta));
                chol.solve_joint(step, step_gamma);
                break;
            } catch (const Error&) {
                if (attempt >= 20)
                    throw SingularSystem("Hessian factorization failed despite damping");
                delta = delta == 0.0 ? 1e-8 : delta * 10.0;
            }
        }
        res.damping_used = std::max(res.damping_used, delta);

        // Newton direction is -H^-1 g; directional derivative g'dir < 0.
        double gtd = -step_gamma.dot(g.gamma);
        for (size_t a = 0; a < active.size(); ++a) gtd -= step[a].dot(g.theta[active[a]]);

        double t = 1.0;
        if (!quadratic) {
            const double f0 =
                weighted_objective(spec, res.params, ds, opt.task_scale, sigma, denoms);
            // The full step is trusted without a measured decrease iff it
            // strictly shrinks the gradient; used when the Newton decrease
            // falls below the rounding granularity of the objective while the
            // gradient still exceeds tol (the quadratic tail keeps working on
            // the gradient long after f stops moving in double precision).
            auto full_step_rescue = [&]() -> bool {
                MtlParams full = res.params;
                for (size_t a = 0; a < active.size(); ++a)
                    full.thetas[active[a]] -= step[a];
                full.gamma -= step_gamma;
                JointGradient gf =
                    weighted_gradient(spec, full, ds, opt.task_scale, sigma, denoms);
                if (gf.inf_norm() >= res.final_grad_norm) return false;
                res.params = std::move(full);
                return true;
            };
            if (std::abs(gtd) <= 1e-14 * std::max(1.0, std::abs(f0))) {
                if (!full_step_rescue())
                    throw NotConverged(res.final_grad_norm,
                                       "objective decrease below rounding granularity");
                continue;
            }
            res.objective_trace.push_back(f0);
            while (true) {
                MtlParams trial = res.params;
                for (size_t a = 0; a < active.size(); ++a)
                    trial.thetas[active[a]] -= t * step[a];
                trial.gamma -= t * step_gamma;
                double f = weighted_objective(spec, trial, ds, opt.task_scale, sigma, denoms);
                if (f <= f0 + cfg.line_search.sufficient_decrease * t * gtd) {
                    res.params = std::move(trial);
                    break;
                }
                t *= cfg.line_search.shrink;
                if (t < 1e-16) {
                    if (full_step_rescue()) break;
                    throw NotConverged(res.final_grad_norm, "line search stalled");
                }
            }
        } else {
            for (size_t a = 0; a < active.size(); ++a)
                res.params.thetas[active[a]] -= step[a];
            res.params.gamma -= step_gamma;
        }
    }
    throw NotConverged(res.final_grad_norm,
                       "no convergence in " + std::to_string(cfg.max_iter) + " iterations");
}

}  // namespace detail

/// Hessian of the instance-weighted objective at `params`.
inline BlockHessian full_hessian(const ModelSpec& spec, const MtlParams& params,
                                 const MtlDataset& ds, const TrainWeights& sigma,
                                 const std::vector<int>* denominators = nullptr) {
    detail::check_fit_inputs(spec, ds, sigma);
    std::vector<int> denoms = denominators ? *denominators : ds.train_sizes();
    return detail::weighted_hessian(spec, params, ds, std::vector<double>(spec.task_count(), 1.0),
                                    sigma, denoms);
}

/// Gradient of the instance-weighted objective at `params`.
inline JointGradient joint_gradient(const ModelSpec& spec, const MtlParams& params,
                                    const MtlDataset& ds, const TrainWeights& sigma,
                                    const std::vector<int>* denominators = nullptr) {
    detail::check_fit_inputs(spec, ds, sigma);
    std::vector<int> denoms = denominators ? *denominators : ds.train_sizes();
    return detail::weighted_gradient(spec, params, ds,
                                     std::vector<double>(spec.task_count(), 1.0), sigma, denoms);
}

/// Minimizes the instance-weighted objective. Ridge converges in one Newton
/// step (jointly quadratic); logistic runs Newton with backtracking. `warm`
/// overrides the zero initialization; `denominators` pins the 1/n_k factors,
/// which removal experiments need when fitting physically reduced datasets.
inline FitResult fit(const ModelSpec& spec, const MtlDataset& ds, const TrainWeights& sigma,
                     const SolverConfig& cfg = {}, const MtlParams* warm = nullptr,
                     const std::vector<int>* denominators = nullptr) {
    detail::CoreOptions opt;
    opt.task_scale.assign(spec.task_count(), 1.0);
    opt.warm = warm;
    opt.denominators = denominators;
    return detail::newton_fit(spec, ds, sigma, cfg, opt);
}

/// Minimizes the task-weighted objective sum_j s_j [ (1/n_j) sum_i loss_ji +
/// Omega_j ]. Unlike per-sample weights, s_j scales the regularizer too. A
/// task with s_j = 0 has no terms left, so theta_j is frozen at its initial
/// value and dropped from the Newton system; pass allow_frozen = false to get
/// DegenerateTask instead.
inline FitResult fit_task_weighted(const ModelSpec& spec, const MtlDataset& ds,
                                   const std::vector<double>& sigma_tilde,
                                   const SolverConfig& cfg = {}, const MtlParams* warm = nullptr,
                                   bool allow_frozen = true) {
    if (static_cast<int>(sigma_tilde.size()) != spec.task_count())
        throw DimMismatch("sigma_tilde length != task count");
    for (int k = 0; k < spec.task_count(); ++k) {
        double s = sigma_tilde[k];
        if (!(s >= 0.0 && s <= 1.0))
            throw InvalidConfig("sigma_tilde entries must lie in [0,1]");
        if (s == 0.0 && !allow_frozen) throw DegenerateTask(k);
    }
    detail::CoreOptions opt;
    opt.task_scale = sigma_tilde;
    opt.warm = warm;
    return detail::newton_fit(spec, ds, TrainWeights::ones(ds), cfg, opt);
}

}  // namespace mtif
