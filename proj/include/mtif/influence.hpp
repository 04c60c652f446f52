#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/linalg.hpp"
#include "mtif/model.hpp"
#include "mtif/parallel.hpp"
#include "mtif/random.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

/// Mean loss of task k over one split, with its gradient in (theta_k, gamma).
/// grad_gamma is identically zero for the shipped models but kept so the score
/// formulas stay in their general form.
struct ValidationLoss {
    int task = 0;
    double value = 0.0;
    Eigen::VectorXd grad_theta, grad_gamma;
};

inline ValidationLoss validation_loss(const ModelSpec& spec, const MtlParams& params,
                                      const MtlDataset& ds, int k,
                                      SplitKind split = SplitKind::val) {
    if (k < 0 || k >= ds.task_count()) throw InvalidTask(k);
    const auto& samples = ds.tasks[k].split(split);
    if (samples.empty())
        throw EmptySplit("task " + std::to_string(k) + " has an empty " +
                         split_name(split) + " split");
    ValidationLoss v;
    v.task = k;
    v.grad_theta = Eigen::VectorXd::Zero(spec.dim);
    v.grad_gamma = Eigen::VectorXd::Zero(spec.dim);
    for (const auto& z : samples) {
        v.value += sample_loss(spec, params, k, z);
        v.grad_theta += sample_grad(spec, params, k, z).theta;
    }
    const double m = static_cast<double>(samples.size());
    v.value /= m;
    v.grad_theta /= m;
    return v;
}

struct InfluenceMeta {
    std::string model_fingerprint;
    std::uint64_t seed = 0;
    std::string note;
};

/// scores[l](i, k) = predicted first-order change of task k's validation loss
/// per unit weight on training sample i of task l.
struct InfluenceMatrix {
    std::vector<Eigen::MatrixXd> scores;
    InfluenceMeta meta;

    int task_count() const { return static_cast<int>(scores.size()); }
    int source_size(int l) const { return static_cast<int>(scores[l].rows()); }

    double at(int l, int i, int k) const {
        if (l < 0 || l >= task_count()) throw InvalidTask(l);
        if (k < 0 || k >= static_cast<int>(scores[l].cols())) throw InvalidTask(k);
        if (i < 0 || i >= source_size(l)) throw DimMismatch("sample index out of range");
        return scores[l](i, k);
    }

    void validate() const {
        if (scores.empty()) throw IncompleteMatrix("influence matrix has no tasks");
        for (const auto& m : scores) {
            if (m.cols() != task_count())
                throw IncompleteMatrix("influence matrix misses target columns");
            if (!m.allFinite()) throw IncompleteMatrix("influence matrix has non-finite scores");
        }
    }
};

/// scores(l, k) = MTIF_task(l; k), the predicted first-order change of task
/// k's validation loss per unit weight on all of task l's objective terms.
struct TaskAffinity {
    Eigen::MatrixXd scores;
};

struct EngineOptions {
    bool allow_damped = false;      // accept fits whose Newton steps were damped
    double stationarity_tol = 1e-6;  // max joint-gradient inf-norm accepted
    std::uint64_t seed = 0;          // recorded in InfluenceMeta only
};

/// Influence scores of training data on validation losses, all derived from
/// one fitted model. Construction factorizes the base-weight Hessian once
/// (task blocks + Schur complement) and precomputes per-target projections;
/// every score afterwards costs one sample gradient plus cached triangular
/// solves. The base weights default to sigma = 1; passing the weights a fit
/// was trained under lets reweighted fits (e.g. bootstrap resamples) be
/// scored at their own optimum.
///
/// Derivation sketch, instance level: differentiating the stationarity
/// condition of the weighted objective in sigma_li gives
///   dw/dsigma_li = -H^{-1} load(l,i),
/// where load(l,i) has the sample's scaled gradient v_li = (1/n_l) dloss/dtheta_l
/// in block l and v^gamma_li = (1/n_l) dloss/dgamma in the shared block. With
/// u_li = H_ll^{-1} v_li and N the Schur complement, the shared component is
///   dgamma/dsigma_li = N^{-1} (H_{K+1,l} u_li - v^gamma_li),
/// and chaining through grad V_k collapses the score to
///   MTIF(i,l;k) = c_k' g_li - [l==k] a_k' u_li,
/// with a_k = grad_theta V_k, c_k = grad_gamma V_k - H_{K+1,k} H_kk^{-1} a_k.
///
/// Task level: reweighting all of task l's objective terms by sigma_tilde_l
/// loads the full task-l gradient blocks instead of one sample's:
///   t_l = (1/n_l) sum_i dloss/dtheta_l + dOmega_l/dtheta_l   (~0 at the optimum)
///   s_l = (1/n_l) sum_i dloss/dgamma   + dOmega_l/dgamma,
/// and at sigma_tilde = 1 the task-weighted Hessian equals the instance-level
/// one, so the same factorization serves both with
///   MTIF_task(l;k) = c_k' N^{-1}(H_{K+1,l} H_ll^{-1} t_l - s_l) - [l==k] a_k' H_ll^{-1} t_l.
class InfluenceEngine {
  public:
    InfluenceEngine(const ModelSpec& spec, const MtlDataset& ds, const FitResult& fit,
                    const EngineOptions& opts = {},
                    const std::vector<ValidationLoss>* vlosses = nullptr,
                    const TrainWeights* base_sigma = nullptr)
        : InfluenceEngine(spec, ds, fit.params, opts, vlosses, fit.damping_used, base_sigma) {}

    InfluenceEngine(const ModelSpec& spec, const MtlDataset& ds, const MtlParams& params,
                    const EngineOptions& opts = {},
                    const std::vector<ValidationLoss>* vlosses = nullptr,
                    double damping_used = 0.0, const TrainWeights* base_sigma = nullptr)
        : spec_(spec), ds_(ds), params_(params), opts_(opts),
          sigma_(base_sigma ? *base_sigma : TrainWeights::ones(ds)) {
        spec_.validate();
        if (!sigma_.matches(ds_))
            throw DimMismatch("base weights do not match the training splits");
        if (damping_used > 0.0 && !opts_.allow_damped)
            throw InvalidConfig(
                "fit used Hessian damping; influence scores would not match the model's "
                "curvature (set allow_damped to override)");

        JointGradient g = joint_gradient(spec_, params_, ds_, sigma_);
        if (g.inf_norm() > opts_.stationarity_tol)
            throw NotConverged(g.inf_norm(), "influence requires a stationary fit");

        hessian_ = full_hessian(spec_, params_, ds_, sigma_);
        chol_ = std::make_unique<linalg::BlockCholesky>(hessian_);

        const int K = ds_.task_count();
        if (vlosses) {
            if (static_cast<int>(vlosses->size()) != K)
                throw DimMismatch("need one validation loss per task");
            vloss_ = *vlosses;
        } else {
            for (int k = 0; k < K; ++k)
                vloss_.push_back(validation_loss(spec_, params_, ds_, k));
        }
        for (int k = 0; k < K; ++k) {
            if (vloss_[k].grad_theta.size() != spec_.dim ||
                vloss_[k].grad_gamma.size() != spec_.dim)
                throw DimMismatch("validation-loss gradient has wrong dimension");
            Target t;
            t.a = vloss_[k].grad_theta;
            t.abar = chol_->solve_diag(k, t.a);
            t.c = vloss_[k].grad_gamma - hessian_.cross[k].transpose() * t.abar;
            targets_.push_back(std::move(t));
        }
    }

    int task_count() const { return ds_.task_count(); }
    int source_size(int l) const {
        check_target(l);
        return ds_.train_size(l);
    }
    const ValidationLoss& vloss(int k) const { return vloss_.at(k); }
    const linalg::BlockHessian& hessian() const { return hessian_; }
    const MtlParams& params() const { return params_; }

    /// u = H_ll^{-1} v_li and g = dgamma/dsigma_li for one training sample.
    struct SampleLoad {
        Eigen::VectorXd u, g;
    };

    SampleLoad sample_load(int l, int i) const {
        check_source(l, i);
        const double inv_n = 1.0 / ds_.train_size(l);
        Eigen::VectorXd v = inv_n * sample_grad(spec_, params_, l, ds_.tasks[l].train[i]).theta;
        SampleLoad s;
        s.u = chol_->solve_diag(l, v);
        // v^gamma is identically zero for the shipped models, so only the
        // H_{K+1,l} u term loads the Schur system.
        s.g = chol_->solve_schur(hessian_.cross[l].transpose() * s.u);
        return s;
    }

    Eigen::VectorXd shared_param_influence(int i, int k) const { return sample_load(k, i).g; }

    Eigen::VectorXd within_task_influence(int i, int k) const {
        SampleLoad s = sample_load(k, i);
        return -s.u - chol_->solve_diag(k, hessian_.cross[k] * s.g);
    }

    Eigen::VectorXd between_task_influence(int i, int l, int k) const {
        check_target(k);
        if (l == k) throw SameTask();
        SampleLoad s = sample_load(l, i);
        return -chol_->solve_diag(k, hessian_.cross[k] * s.g);
    }

    double mtif_instance(int i, int l, int k) const {
        check_target(k);
        SampleLoad s = sample_load(l, i);
        return score_from_load(s, l, k);
    }

    InfluenceMatrix mtif_all(int jobs = 1) const {
        const int K = task_count();
        InfluenceMatrix out;
        out.scores.resize(K);
        std::vector<std::pair<int, int>> items;
        for (int l = 0; l < K; ++l) {
            out.scores[l].resize(ds_.train_size(l), K);
            for (int i = 0; i < ds_.train_size(l); ++i) items.emplace_back(l, i);
        }
        parallel_for(static_cast<int>(items.size()), jobs, [&](int idx) {
            auto [l, i] = items[idx];
            SampleLoad s = sample_load(l, i);
            for (int k = 0; k < K; ++k) out.scores[l](i, k) = score_from_load(s, l, k);
        });
        out.meta.model_fingerprint = fingerprint();
        out.meta.seed = opts_.seed;
        out.meta.note = "per-sample loads scaled by 1/n_l; score = dV_k/dsigma_li";
        out.validate();
        return out;
    }

    /// Task-level loads: the full gradient blocks of task l's objective terms.
    struct TaskLoad {
        Eigen::VectorXd t;  // theta_l block; ~0 at a converged optimum
        Eigen::VectorXd s;  // gamma block; the regularizer's -2 lambda_l (theta_l - gamma)
    };

    TaskLoad task_load(int l) const {
        check_target(l);
        TaskLoad load;
        load.t = Eigen::VectorXd::Zero(spec_.dim);
        for (int i = 0; i < ds_.train_size(l); ++i)
            load.t += sigma_(l, i) * sample_grad(spec_, params_, l, ds_.tasks[l].train[i]).theta;
        load.t /= ds_.train_size(l);
        RegTerms r = reg_value_grad_hess(spec_, params_, l);
        load.t += r.g_theta;
        load.s = r.g_gamma;
        return load;
    }

    double mtif_task(int l, int k) const {
        check_target(k);
        TaskLoad load = task_load(l);
        Eigen::VectorXd ut = chol_->solve_diag(l, load.t);
        Eigen::VectorXd g =
            chol_->solve_schur(hessian_.cross[l].transpose() * ut - load.s);
        double score = targets_[k].c.dot(g);
        if (l == k) score -= targets_[k].a.dot(ut);
        return score;
    }

    TaskAffinity task_affinity() const {
        const int K = task_count();
        TaskAffinity aff;
        aff.scores.resize(K, K);
        for (int l = 0; l < K; ++l)
            for (int k = 0; k < K; ++k) aff.scores(l, k) = mtif_task(l, k);
        return aff;
    }

    /// Per-target contraction vectors: every instance score is the pair of
    /// dot products c_k' g_li - [l==k] a_k' u_li, so exposing a and c lets
    /// approximations replace the dot products without redoing the solves.
    struct TargetVectors {
        Eigen::VectorXd a, c;
    };

    TargetVectors target_vectors(int k) const {
        check_target(k);
        return {targets_[k].a, targets_[k].c};
    }

    std::string fingerprint() const {
        Eigen::VectorXd w = params_.pack();
        std::string bytes(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(double));
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(bytes)));
        return buf;
    }

  private:
    struct Target {
        Eigen::VectorXd a, abar, c;
    };

    void check_target(int k) const {
        if (k < 0 || k >= task_count()) throw InvalidTask(k);
    }
    void check_source(int l, int i) const {
        check_target(l);
        if (i < 0 || i >= ds_.train_size(l)) throw DimMismatch("sample index out of range");
    }

    double score_from_load(const SampleLoad& s, int l, int k) const {
        double score = targets_[k].c.dot(s.g);
        if (l == k) score -= targets_[k].a.dot(s.u);
        return score;
    }

    ModelSpec spec_;
    MtlDataset ds_;
    MtlParams params_;
    EngineOptions opts_;
    TrainWeights sigma_;
    linalg::BlockHessian hessian_;
    std::unique_ptr<linalg::BlockCholesky> chol_;
    std::vector<ValidationLoss> vloss_;
    std::vector<Target> targets_;
};

}  // namespace mtif
