#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/influence.hpp"
#include "mtif/model.hpp"
#include "mtif/parallel.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

/// One entry of the removal ranking. total_score sums the sample's influence
/// over every target task; larger means removal is predicted to lower more
/// validation loss.
struct RankedSample {
    int task = 0;
    int index = 0;
    double total_score = 0.0;

    friend bool operator==(const RankedSample&, const RankedSample&) = default;
};

/// Pooled removal ranking. The head of the list holds the samples whose
/// removal is predicted to help most (largest positive total score); ties are
/// broken by (task, sample) so the order is platform-independent. Removing a
/// fraction f takes the first floor(f * N) entries, which makes removed sets
/// nested across fractions.
inline std::vector<RankedSample> rank_total_influence(const InfluenceMatrix& im) {
    im.validate();
    std::vector<RankedSample> ranked;
    for (int l = 0; l < im.task_count(); ++l) {
        const Eigen::MatrixXd& s = im.scores[l];
        for (Eigen::Index i = 0; i < s.rows(); ++i)
            ranked.push_back({l, static_cast<int>(i), s.row(i).sum()});
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedSample& a, const RankedSample& b) {
        if (a.total_score != b.total_score) return a.total_score > b.total_score;
        if (a.task != b.task) return a.task < b.task;
        return a.index < b.index;
    });
    return ranked;
}

/// Mean 0/1 accuracy of thresholding the class-1 probability at 0.5, i.e.
/// predicting 1 iff x'theta_k > 0.
struct AccuracyReport {
    std::vector<double> per_task;
    double mean = 0.0;
};

inline AccuracyReport accuracy(const ModelSpec& spec, const MtlParams& params,
                               const MtlDataset& ds, SplitKind split = SplitKind::val) {
    if (spec.kind != ModelKind::soft_logistic) throw NotClassification();
    spec.validate();
    if (spec.dim != ds.dim) throw DimMismatch("model dim != dataset dim");
    AccuracyReport rep;
    for (int k = 0; k < ds.task_count(); ++k) {
        const auto& samples = ds.tasks[k].split(split);
        if (samples.empty())
            throw EmptySplit("task " + std::to_string(k) + " has an empty " +
                             std::string(split_name(split)) + " split");
        int correct = 0;
        for (const auto& z : samples) {
            int pred = z.x.dot(params.thetas[k]) > 0.0 ? 1 : 0;
            if (pred == static_cast<int>(z.y)) ++correct;
        }
        rep.per_task.push_back(static_cast<double>(correct) / static_cast<double>(samples.size()));
    }
    rep.mean = 0.0;
    for (double a : rep.per_task) rep.mean += a;
    rep.mean /= static_cast<double>(rep.per_task.size());
    return rep;
}

/// Gradient-similarity task affinity baseline. The concrete losses never touch
/// the shared parameters directly, so each task's gradient is taken through
/// the coupling: g_l is the shared-block image of the task's mean training
/// gradient, g_l = H_{shared,l} H_ll^-1 mean_grad_l. Entry (l,k) is the cosine
/// of the angle between g_l and g_k; a task with an exactly zero mean gradient
/// gets a zero row and column with a warning instead of an error.
inline TaskAffinity cosine_task_affinity(const ModelSpec& spec, const MtlParams& params,
                                         const MtlDataset& ds) {
    spec.validate();
    ds.validate();
    if (spec.dim != ds.dim) throw DimMismatch("model dim != dataset dim");
    if (spec.task_count() != ds.task_count()) throw DimMismatch("model tasks != dataset tasks");
    const int K = ds.task_count();

    BlockHessian h = full_hessian(spec, params, ds, TrainWeights::ones(ds));
    BlockCholesky chol(h);

    std::vector<Eigen::VectorXd> g(K);
    std::vector<bool> degenerate(K, false);
    for (int l = 0; l < K; ++l) {
        Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(ds.dim);
        for (const auto& z : ds.tasks[l].train)
            mean_grad += sample_grad(spec, params, l, z).theta;
        mean_grad /= static_cast<double>(ds.train_size(l));
        if (mean_grad.isZero(0.0)) {
            degenerate[l] = true;
            std::fprintf(stderr,
                         "cosine_task_affinity: task %d has a zero mean training gradient; "
                         "affinity row set to 0\n",
                         l);
            g[l] = Eigen::VectorXd::Zero(ds.dim);
            continue;
        }
        g[l] = -2.0 * spec.lambdas[l] * chol.solve_diag(l, mean_grad);
    }

    TaskAffinity aff;
    aff.scores = Eigen::MatrixXd::Zero(K, K);
    for (int l = 0; l < K; ++l)
        for (int k = 0; k < K; ++k) {
            if (degenerate[l] || degenerate[k]) continue;
            aff.scores(l, k) = g[l].dot(g[k]) / (g[l].norm() * g[k].norm());
        }
    return aff;
}

/// Ranking plus the removal decision actually taken.
struct SelectionPlan {
    std::vector<RankedSample> ranked;
    double removal_fraction = 0.0;
    std::vector<std::pair<int, int>> removed;  // (task, sample), ranking order
    std::vector<double> tuning_grid;
    std::string chosen_by = "mean_validation_accuracy";
};

/// Outcome of retraining with one candidate fraction removed.
struct FractionOutcome {
    double fraction = 0.0;
    bool converged = false;
    double mean_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    double precision = std::numeric_limits<double>::quiet_NaN();
    double recall = std::numeric_limits<double>::quiet_NaN();
    std::string note;
};

struct SelectionResult {
    SelectionPlan plan;
    FitResult model;  // retrained at the chosen fraction
    std::vector<FractionOutcome> outcomes;
    double best_fraction = 0.0;
    double best_accuracy = std::numeric_limits<double>::quiet_NaN();
};

inline nlohmann::json selection_report_json(const SelectionResult& res) {
    nlohmann::json j;
    j["chosen_by"] = res.plan.chosen_by;
    j["best_fraction"] = res.best_fraction;
    j["best_accuracy"] = res.best_accuracy;
    j["tuning_grid"] = res.plan.tuning_grid;
    j["outcomes"] = nlohmann::json::array();
    for (const auto& o : res.outcomes) {
        nlohmann::json e;
        e["fraction"] = o.fraction;
        e["converged"] = o.converged;
        e["mean_val_accuracy"] = o.mean_val_accuracy;
        if (std::isfinite(o.precision)) e["precision"] = o.precision;
        if (std::isfinite(o.recall)) e["recall"] = o.recall;
        if (!o.note.empty()) e["note"] = o.note;
        j["outcomes"].push_back(std::move(e));
    }
    j["removed"] = nlohmann::json::array();
    for (const auto& [l, i] : res.plan.removed) j["removed"].push_back({l, i});
    return j;
}

/// Removes each candidate fraction of the ranking head, retrains with those
/// samples' weights zeroed, and keeps the fraction with the best mean
/// validation accuracy (ties go to the smaller fraction). Influence scores
/// are computed once and reused across the grid. A fraction whose retrain
/// fails to converge is recorded and skipped; if every fraction fails the
/// failure propagates. When the true corrupted-sample set is supplied each
/// fraction also reports the precision/recall of its removed set.
inline SelectionResult select_and_retrain(
    const ModelSpec& spec, const MtlDataset& ds, const InfluenceMatrix& im,
    const std::vector<double>& grid, const SolverConfig& cfg = {},
    const std::vector<std::pair<int, int>>* corrupted = nullptr, int jobs = 1) {
    if (grid.empty()) throw InvalidConfig("tuning grid must be nonempty");
    for (double f : grid)
        if (!(f >= 0.0) || f > 0.5)
            throw InvalidConfig("removal fractions must lie in [0, 0.5]");

    SelectionResult res;
    res.plan.ranked = rank_total_influence(im);
    res.plan.tuning_grid = grid;
    const auto total = static_cast<double>(res.plan.ranked.size());

    auto removed_at = [&](double f) {
        std::vector<std::pair<int, int>> removed;
        auto m = static_cast<std::size_t>(std::floor(f * total));
        removed.reserve(m);
        for (std::size_t r = 0; r < m; ++r)
            removed.emplace_back(res.plan.ranked[r].task, res.plan.ranked[r].index);
        return removed;
    };

    std::vector<FractionOutcome> outcomes(grid.size());
    std::vector<std::optional<FitResult>> fits(grid.size());
    parallel_for(grid.size(), jobs, [&](std::size_t gi) {
        FractionOutcome& out = outcomes[gi];
        out.fraction = grid[gi];
        auto removed = removed_at(grid[gi]);
        if (corrupted) {
            std::size_t hit = 0;
            for (const auto& ri : removed)
                if (std::binary_search(corrupted->begin(), corrupted->end(), ri)) ++hit;
            if (!removed.empty())
                out.precision = static_cast<double>(hit) / static_cast<double>(removed.size());
            if (!corrupted->empty())
                out.recall = static_cast<double>(hit) / static_cast<double>(corrupted->size());
        }
        TrainWeights sigma = TrainWeights::ones(ds);
        for (const auto& [l, i] : removed) sigma.set(l, i, 0.0);
        try {
            FitResult fr = fit(spec, ds, sigma, cfg);
            out.mean_val_accuracy = accuracy(spec, fr.params, ds).mean;
            out.converged = true;
            fits[gi] = std::move(fr);
        } catch (const NotConverged& e) {
            out.note = e.what();
        }
    });
    res.outcomes = std::move(outcomes);

    int best = -1;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const FractionOutcome& o = res.outcomes[gi];
        if (!o.converged) continue;
        if (best < 0 || o.mean_val_accuracy > res.best_accuracy ||
            (o.mean_val_accuracy == res.best_accuracy && o.fraction < res.best_fraction)) {
            best = static_cast<int>(gi);
            res.best_accuracy = o.mean_val_accuracy;
            res.best_fraction = o.fraction;
        }
    }
    if (best < 0)
        throw NotConverged(std::numeric_limits<double>::quiet_NaN(),
                           "no removal fraction produced a converged retrain");

    res.model = std::move(*fits[best]);
    res.plan.removal_fraction = res.best_fraction;
    res.plan.removed = removed_at(res.best_fraction);
    return res;
}

}  // namespace mtif
