#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"

namespace mtif {

enum class ModelKind { ridge_linear, soft_logistic };

inline const char* model_kind_name(ModelKind k) {
    return k == ModelKind::ridge_linear ? "ridge_linear" : "soft_logistic";
}

/// Both concrete models use d_k = p = dim: task heads and the shared center
/// live in the same space, coupled by the penalty lambda_k * |theta_k - gamma|^2.
struct ModelSpec {
    ModelKind kind = ModelKind::ridge_linear;
    std::vector<double> lambdas;
    int dim = 0;

    int task_count() const { return static_cast<int>(lambdas.size()); }

    void validate() const {
        if (lambdas.empty()) throw InvalidConfig("model needs at least one task");
        if (dim < 1) throw InvalidConfig("model dim must be >= 1");
        for (double l : lambdas) {
            if (!std::isfinite(l)) throw InvalidConfig("lambda must be finite");
            if (l <= 0.0)
                throw SingularSystem(
                    "lambda <= 0 leaves the shared parameter block singular; all lambdas must "
                    "be positive");
        }
    }

    static ModelSpec make(ModelKind kind, int tasks, int dim, double lambda) {
        ModelSpec s;
        s.kind = kind;
        s.lambdas.assign(tasks, lambda);
        s.dim = dim;
        return s;
    }
};

/// Joint parameter point w = (theta_1..theta_K, gamma).
struct MtlParams {
    std::vector<Eigen::VectorXd> thetas;
    Eigen::VectorXd gamma;

    static MtlParams zeros(const ModelSpec& spec) {
        MtlParams p;
        p.thetas.assign(spec.task_count(), Eigen::VectorXd::Zero(spec.dim));
        p.gamma = Eigen::VectorXd::Zero(spec.dim);
        return p;
    }

    int task_count() const { return static_cast<int>(thetas.size()); }

    Eigen::VectorXd pack() const {
        Eigen::Index total = gamma.size();
        for (const auto& t : thetas) total += t.size();
        Eigen::VectorXd w(total);
        Eigen::Index at = 0;
        for (const auto& t : thetas) {
            w.segment(at, t.size()) = t;
            at += t.size();
        }
        w.segment(at, gamma.size()) = gamma;
        return w;
    }

    static MtlParams unpack(const ModelSpec& spec, const Eigen::VectorXd& w) {
        const Eigen::Index d = spec.dim;
        if (w.size() != d * (spec.task_count() + 1))
            throw DimMismatch("packed parameter vector has wrong length");
        MtlParams p;
        for (int k = 0; k < spec.task_count(); ++k) p.thetas.push_back(w.segment(k * d, d));
        p.gamma = w.tail(d);
        return p;
    }
};

inline double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

namespace detail {
inline void check_dims(const ModelSpec& spec, const MtlParams& params, int k,
                       const Eigen::VectorXd& x) {
    if (k < 0 || k >= spec.task_count()) throw InvalidTask(k);
    if (params.thetas[k].size() != spec.dim || x.size() != spec.dim)
        throw DimMismatch("sample/parameter dimension mismatch");
}
}  // namespace detail

/// Per-sample loss. Ridge: squared residual. Logistic: cross-entropy in the
/// overflow-safe max(t,0) - y*t + log1p(exp(-|t|)) form. Neither touches gamma.
inline double sample_loss(const ModelSpec& spec, const MtlParams& params, int k, const Sample& z) {
    detail::check_dims(spec, params, k, z.x);
    const double t = z.x.dot(params.thetas[k]);
    if (spec.kind == ModelKind::ridge_linear) {
        const double r = t - z.y;
        return r * r;
    }
    return std::max(t, 0.0) - z.y * t + std::log1p(std::exp(-std::abs(t)));
}

struct SampleGrad {
    Eigen::VectorXd theta;  // d(loss)/d(theta_k)
    Eigen::VectorXd gamma;  // zero for both concrete models; kept for extensibility
};

inline SampleGrad sample_grad(const ModelSpec& spec, const MtlParams& params, int k,
                              const Sample& z) {
    detail::check_dims(spec, params, k, z.x);
    const double t = z.x.dot(params.thetas[k]);
    SampleGrad g;
    if (spec.kind == ModelKind::ridge_linear)
        g.theta = 2.0 * (t - z.y) * z.x;
    else
        g.theta = (sigmoid(t) - z.y) * z.x;
    g.gamma = Eigen::VectorXd::Zero(spec.dim);
    return g;
}

struct SampleHessian {
    Eigen::MatrixXd tt, tg, gg;
};

inline SampleHessian sample_hessian_blocks(const ModelSpec& spec, const MtlParams& params, int k,
                                           const Sample& z) {
    detail::check_dims(spec, params, k, z.x);
    SampleHessian h;
    if (spec.kind == ModelKind::ridge_linear) {
        h.tt = 2.0 * z.x * z.x.transpose();
    } else {
        const double s = sigmoid(z.x.dot(params.thetas[k]));
        h.tt = s * (1.0 - s) * z.x * z.x.transpose();
    }
    h.tg = Eigen::MatrixXd::Zero(spec.dim, spec.dim);
    h.gg = Eigen::MatrixXd::Zero(spec.dim, spec.dim);
    return h;
}

/// Curvature scale of a sample's theta-Hessian x x': 2 for ridge, s(1-s) for
/// logistic. Lets the trainer accumulate Hessians by rank updates.
inline double sample_curvature(const ModelSpec& spec, const MtlParams& params, int k,
                               const Sample& z) {
    if (spec.kind == ModelKind::ridge_linear) return 2.0;
    const double s = sigmoid(z.x.dot(params.thetas[k]));
    return s * (1.0 - s);
}

struct RegTerms {
    double value = 0.0;
    Eigen::VectorXd g_theta, g_gamma;
    Eigen::MatrixXd h_tt, h_tg, h_gg;
};

/// Coupling penalty Omega_k = lambda_k |theta_k - gamma|^2 and its exact
/// derivatives. All Hessian blocks are multiples of the identity.
inline RegTerms reg_value_grad_hess(const ModelSpec& spec, const MtlParams& params, int k) {
    if (k < 0 || k >= spec.task_count()) throw InvalidTask(k);
    const double lam = spec.lambdas[k];
    const Eigen::VectorXd diff = params.thetas[k] - params.gamma;
    RegTerms r;
    r.value = lam * diff.squaredNorm();
    r.g_theta = 2.0 * lam * diff;
    r.g_gamma = -2.0 * lam * diff;
    r.h_tt = 2.0 * lam * Eigen::MatrixXd::Identity(spec.dim, spec.dim);
    r.h_tg = -r.h_tt;
    r.h_gg = r.h_tt;
    return r;
}

/// Weighted objective sum_k [ (1/n_k) sum_i sigma_ki loss_ki + Omega_k ].
/// `denominators` overrides the 1/n_k factors; removal experiments pass the
/// original sizes so zeroing a sigma entry matches deleting the sample.
inline double objective(const ModelSpec& spec, const MtlParams& params, const MtlDataset& ds,
                        const TrainWeights& sigma,
                        const std::vector<int>* denominators = nullptr) {
    if (ds.task_count() != spec.task_count())
        throw DimMismatch("dataset task count != model task count");
    if (!sigma.matches(ds)) throw DimMismatch("sigma shape != dataset training shape");
    double total = 0.0;
    for (int k = 0; k < spec.task_count(); ++k) {
        const int n_k = denominators ? (*denominators)[k] : ds.train_size(k);
        if (n_k <= 0) throw EmptySplit("task " + std::to_string(k) + " has no training samples");
        double acc = 0.0;
        for (int i = 0; i < ds.train_size(k); ++i) {
            const double w = sigma(k, i);
            if (w != 0.0) acc += w * sample_loss(spec, params, k, ds.tasks[k].train[i]);
        }
        total += acc / n_k + reg_value_grad_hess(spec, params, k).value;
    }
    return total;
}

}  // namespace mtif
