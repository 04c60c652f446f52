#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/influence.hpp"
#include "mtif/io.hpp"
#include "mtif/model.hpp"
#include "mtif/parallel.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

/// One exact leave-one-out measurement. delta = V_target(full fit) minus
/// V_target(refit with sample (source_task, source_index) removed); positive
/// delta means removing the sample lowered the target's validation loss.
struct LooRecord {
    int source_task = 0;
    int source_index = 0;
    int target_task = 0;
    double delta = 0.0;
    int retrain_iters = 0;

    friend bool operator==(const LooRecord&, const LooRecord&) = default;
};

/// One exact leave-one-task-out measurement. delta = V_target(full fit) minus
/// V_target(refit with every sample of source_task removed).
struct LotoRecord {
    int source_task = 0;
    int target_task = 0;
    double delta = 0.0;

    friend bool operator==(const LotoRecord&, const LotoRecord&) = default;
};

/// How a sample is removed for a leave-one-out refit. sigma_zero keeps the
/// task's 1/n_l averaging factor and zeroes the sample's weight;
/// delete_renormalize additionally shrinks the denominator to n_l - 1, which
/// matches deleting the row outright. The two conventions differ at O(1/n^2).
enum class RemovalConvention { sigma_zero, delete_renormalize };

struct OracleOptions {
    bool warm_start = true;
    RemovalConvention convention = RemovalConvention::sigma_zero;
};

/// Brute-force ground truth for influence scores: every delta comes from an
/// actual Newton refit of the model with the sample (or task) removed, so the
/// only error in a record is solver tolerance.
class RetrainOracle {
public:
    RetrainOracle(const ModelSpec& spec, const MtlDataset& ds, SolverConfig cfg = {},
                  OracleOptions opts = {})
        : spec_(spec), ds_(ds), cfg_(cfg), opts_(opts),
          base_(fit(spec_, ds_, TrainWeights::ones(ds_), cfg_)) {}

    const FitResult& base_fit() const { return base_; }
    const OracleOptions& options() const { return opts_; }

    /// Exact removal effect of training sample (l, i) on each target task's
    /// mean validation loss. One warm-started refit serves all targets.
    std::vector<LooRecord> loo_delta(int i, int l, const std::vector<int>& targets) const {
        check_sample(l, i);
        check_targets(targets);
        FitResult refit = refit_without(l, i);
        std::vector<LooRecord> out;
        out.reserve(targets.size());
        for (int k : targets)
            out.push_back({l, i, k, base_vloss(k) - vloss(refit.params, k), refit.iterations});
        return out;
    }

    /// Exact removal effect of all of task l's training data. The refit keeps
    /// task l's parameter block frozen at zero weight, so target indices are
    /// unchanged. l itself is not a valid target: with its data gone its own
    /// parameters are no longer identified by the remaining objective.
    std::vector<LotoRecord> loto_delta(int l, const std::vector<int>& targets) const {
        if (ds_.task_count() < 2)
            throw InvalidConfig("leave-one-task-out requires at least two tasks");
        if (l < 0 || l >= ds_.task_count()) throw InvalidTask(l);
        check_targets(targets);
        for (int k : targets)
            if (k == l) throw SameTask();

        std::vector<double> sigma_tilde(ds_.task_count(), 1.0);
        sigma_tilde[l] = 0.0;
        FitResult refit;
        try {
            refit = fit_task_weighted(spec_, ds_, sigma_tilde, cfg_,
                                      opts_.warm_start ? &base_.params : nullptr);
        } catch (const NotConverged& e) {
            throw NotConverged(e.final_grad_norm,
                               "leave-one-task-out refit without task " + std::to_string(l));
        }
        std::vector<LotoRecord> out;
        out.reserve(targets.size());
        for (int k : targets)
            out.push_back({l, k, base_vloss(k) - vloss(refit.params, k)});
        return out;
    }

    /// Central difference of V_k along the weight of sample (l, i):
    /// [V_k at sigma_li = 1+step minus V_k at 1-step] / (2 step). Converges to
    /// the analytic per-sample influence score at O(step^2).
    double fd_sigma_derivative(int i, int l, int k, double step) const {
        check_sample(l, i);
        if (k < 0 || k >= ds_.task_count()) throw InvalidTask(k);
        if (!(step > 0.0) || step > 0.1)
            throw InvalidConfig("finite-difference step must lie in (0, 0.1]");

        double up = vloss(refit_reweighted(l, i, 1.0 + step).params, k);
        double down = vloss(refit_reweighted(l, i, 1.0 - step).params, k);
        return (up - down) / (2.0 * step);
    }

    /// Leave-one-out deltas for every training sample (optionally the first
    /// per_task_cap per task), each against every target. Retrains run in
    /// parallel; the output order is fixed: source task ascending, sample
    /// index ascending, then targets in the given order.
    std::vector<LooRecord> loo_all(const std::vector<int>& targets, int jobs = 1,
                                   int per_task_cap = -1) const {
        check_targets(targets);
        std::vector<std::pair<int, int>> items;
        for (int l = 0; l < ds_.task_count(); ++l) {
            int n = ds_.train_size(l);
            if (per_task_cap >= 0 && per_task_cap < n) n = per_task_cap;
            for (int i = 0; i < n; ++i) items.emplace_back(l, i);
        }
        std::vector<std::vector<LooRecord>> slots(items.size());
        parallel_for(items.size(), jobs, [&](std::size_t j) {
            slots[j] = loo_delta(items[j].second, items[j].first, targets);
        });
        std::vector<LooRecord> out;
        out.reserve(items.size() * targets.size());
        for (auto& s : slots)
            for (auto& r : s) out.push_back(r);
        return out;
    }

private:
    void check_sample(int l, int i) const {
        if (l < 0 || l >= ds_.task_count()) throw InvalidTask(l);
        if (i < 0 || i >= ds_.train_size(l))
            throw InvalidConfig("sample index " + std::to_string(i) + " out of range for task " +
                                std::to_string(l));
    }

    void check_targets(const std::vector<int>& targets) const {
        for (int k : targets)
            if (k < 0 || k >= ds_.task_count()) throw InvalidTask(k);
    }

    double base_vloss(int k) const { return vloss(base_.params, k); }

    double vloss(const MtlParams& params, int k) const {
        return validation_loss(spec_, params, ds_, k).value;
    }

    FitResult refit_without(int l, int i) const {
        if (opts_.convention == RemovalConvention::delete_renormalize && ds_.train_size(l) == 1)
            throw EmptySplit("cannot delete the only training sample of task " +
                             std::to_string(l));
        TrainWeights sigma = TrainWeights::ones(ds_);
        sigma.set(l, i, 0.0);
        std::vector<int> denoms = ds_.train_sizes();
        bool renorm = opts_.convention == RemovalConvention::delete_renormalize;
        if (renorm) denoms[l] -= 1;
        try {
            return fit(spec_, ds_, sigma, cfg_, opts_.warm_start ? &base_.params : nullptr,
                       renorm ? &denoms : nullptr);
        } catch (const NotConverged& e) {
            throw NotConverged(e.final_grad_norm, "leave-one-out refit without sample (" +
                                                      std::to_string(l) + ", " +
                                                      std::to_string(i) + ")");
        }
    }

    FitResult refit_reweighted(int l, int i, double weight) const {
        TrainWeights sigma = TrainWeights::ones(ds_);
        sigma.set(l, i, weight);
        try {
            return fit(spec_, ds_, sigma, cfg_, opts_.warm_start ? &base_.params : nullptr);
        } catch (const NotConverged& e) {
            throw NotConverged(e.final_grad_norm, "reweighted refit of sample (" +
                                                      std::to_string(l) + ", " +
                                                      std::to_string(i) + ") at weight " +
                                                      std::to_string(weight));
        }
    }

    ModelSpec spec_;
    MtlDataset ds_;
    SolverConfig cfg_;
    OracleOptions opts_;
    FitResult base_;
};

/// Oracle records in the common score-file schema; whole-task rows use
/// source_index -1.
inline std::vector<ScoreRow> to_score_rows(const std::vector<LooRecord>& records) {
    std::vector<ScoreRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records)
        rows.push_back({r.source_task, r.source_index, r.target_task, r.delta, "oracle"});
    return rows;
}

inline std::vector<ScoreRow> to_score_rows(const std::vector<LotoRecord>& records) {
    std::vector<ScoreRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records)
        rows.push_back({r.source_task, -1, r.target_task, r.delta, "oracle"});
    return rows;
}

}  // namespace mtif
