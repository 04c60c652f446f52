#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/eval.hpp"
#include "mtif/influence.hpp"
#include "mtif/parallel.hpp"
#include "mtif/random.hpp"
#include "mtif/trainer.hpp"

namespace mtif {

/// Knobs for the cheap approximations: random projection of gradient
/// contractions, ensembling over resampled fits, and score sparsification.
struct SketchConfig {
    int sketch_dim = 32;     // projection target dimension m
    std::uint64_t seed = 0;  // drives the projection draws and the resamples
    int ensembles = 1;       // independent fits averaged into one score matrix
    double tau = 0.0;        // soft-threshold level; 0 keeps every score

    void validate() const {
        if (sketch_dim < 1) throw InvalidConfig("sketch_dim must be at least 1");
        if (ensembles < 1) throw InvalidConfig("ensembles must be at least 1");
        if (!(tau >= 0.0)) throw InvalidConfig("tau must be a nonnegative number");
    }
};

/// Seeded Gaussian random projection: an m x D matrix with i.i.d. N(0, 1/m)
/// entries, so E[(Pu)'(Pv)] = u'v. The matrix is filled row by row from one
/// generator, making it a pure function of (D, m, seed).
class GradientSketch {
  public:
    GradientSketch(int input_dim, int sketch_dim, std::uint64_t seed) : seed_(seed) {
        if (input_dim < 1 || sketch_dim < 1)
            throw InvalidConfig("projection dimensions must be positive");
        std::mt19937_64 rng = make_rng(derive_seed(seed, "approx/sketch"));
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(sketch_dim)));
        p_.resize(sketch_dim, input_dim);
        for (Eigen::Index r = 0; r < p_.rows(); ++r)
            for (Eigen::Index c = 0; c < p_.cols(); ++c) p_(r, c) = normal(rng);
    }

    const Eigen::MatrixXd& matrix() const { return p_; }
    int input_dim() const { return static_cast<int>(p_.cols()); }
    int sketch_dim() const { return static_cast<int>(p_.rows()); }
    std::uint64_t seed() const { return seed_; }

    /// Replaces the random draws with a fixed matrix (e.g. the identity) so
    /// exactness tests can bypass sampling noise. The input dimension is part
    /// of the object's contract and cannot change.
    void substitute(Eigen::MatrixXd p) {
        if (p.cols() != p_.cols())
            throw DimMismatch("substituted projection changes the input dimension");
        if (p.rows() < 1) throw DimMismatch("substituted projection has no rows");
        p_ = std::move(p);
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        if (v.size() != p_.cols())
            throw DimMismatch("vector length does not match the projection input");
        return p_ * v;
    }

  private:
    Eigen::MatrixXd p_;
    std::uint64_t seed_ = 0;
};

inline std::vector<Eigen::VectorXd> project_gradients(const std::vector<Eigen::VectorXd>& grads,
                                                      const GradientSketch& sketch) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(grads.size());
    for (const auto& g : grads) out.push_back(sketch.apply(g));
    return out;
}

/// Projects every vector by one seeded sketch sized to the first entry, so
/// any length disagreement surfaces as DimMismatch.
inline std::vector<Eigen::VectorXd> project_gradients(const std::vector<Eigen::VectorXd>& grads,
                                                      const SketchConfig& cfg) {
    cfg.validate();
    if (grads.empty()) return {};
    GradientSketch sketch(static_cast<int>(grads.front().size()), cfg.sketch_dim, cfg.seed);
    return project_gradients(grads, sketch);
}

/// Entrywise mean of score matrices over identical index sets. A single
/// matrix passes through unchanged; for larger ensembles the fingerprint
/// survives only if every member agrees on it.
inline InfluenceMatrix ensemble_scores(const std::vector<InfluenceMatrix>& mats) {
    if (mats.empty()) throw InvalidConfig("ensemble needs at least one score matrix");
    for (const auto& m : mats) m.validate();
    const InfluenceMatrix& first = mats.front();
    for (std::size_t e = 1; e < mats.size(); ++e) {
        if (mats[e].task_count() != first.task_count())
            throw IndexMismatch("score matrices cover different task sets");
        for (int l = 0; l < first.task_count(); ++l)
            if (mats[e].source_size(l) != first.source_size(l))
                throw IndexMismatch("score matrices cover different samples");
    }
    InfluenceMatrix out = first;
    if (mats.size() == 1) return out;
    for (std::size_t e = 1; e < mats.size(); ++e)
        for (int l = 0; l < out.task_count(); ++l) out.scores[l] += mats[e].scores[l];
    for (int l = 0; l < out.task_count(); ++l) out.scores[l] /= double(mats.size());
    for (std::size_t e = 1; e < mats.size(); ++e)
        if (mats[e].meta.model_fingerprint != first.meta.model_fingerprint) {
            out.meta.model_fingerprint.clear();
            break;
        }
    out.meta.note = "entrywise mean of " + std::to_string(mats.size()) + " score matrices";
    return out;
}

/// Pooled median of |score| across every (source, target) pair; the
/// scale-free default level for soft_threshold.
inline double median_abs_score(const InfluenceMatrix& im) {
    im.validate();
    std::vector<double> mags;
    for (const auto& m : im.scores)
        for (Eigen::Index j = 0; j < m.size(); ++j) mags.push_back(std::abs(m.data()[j]));
    if (mags.empty()) return 0.0;
    std::sort(mags.begin(), mags.end());
    const std::size_t n = mags.size();
    return n % 2 ? mags[n / 2] : 0.5 * (mags[n / 2 - 1] + mags[n / 2]);
}

/// Sparsifies scores by s -> sign(s) * max(|s| - tau, 0).
inline InfluenceMatrix soft_threshold(const InfluenceMatrix& im, double tau) {
    if (!(tau >= 0.0)) throw InvalidConfig("soft-threshold level must be nonnegative");
    im.validate();
    InfluenceMatrix out = im;
    for (auto& m : out.scores)
        m = m.unaryExpr([tau](double s) {
            double mag = std::abs(s) - tau;
            if (mag <= 0.0) return 0.0;
            return s < 0.0 ? -mag : mag;
        });
    return out;
}

inline InfluenceMatrix soft_threshold(const InfluenceMatrix& im) {
    return soft_threshold(im, median_abs_score(im));
}

/// Multinomial bootstrap of each task's training split, expressed as integer
/// instance weights: n_l draws with replacement, so the counts sum to n_l and
/// the weighted objective equals the objective of the materialized resample.
inline TrainWeights bootstrap_weights(const MtlDataset& ds, std::uint64_t seed) {
    TrainWeights w = TrainWeights::ones(ds);
    for (int l = 0; l < ds.task_count(); ++l) {
        const int n = ds.train_size(l);
        if (n < 1) throw EmptySplit("bootstrap needs training samples in every task");
        for (int i = 0; i < n; ++i) w.set(l, i, 0.0);
        std::mt19937_64 rng = make_rng(
            splitmix64(derive_seed(seed, "approx/bootstrap") ^ static_cast<std::uint64_t>(l)));
        std::uniform_int_distribution<int> pick(0, n - 1);
        for (int d = 0; d < n; ++d) {
            int i = pick(rng);
            w.set(l, i, w(l, i) + 1.0);
        }
    }
    return w;
}

/// Mean score matrix over `cfg.ensembles` independent fits. Convex fits are
/// deterministic, so the ensemble varies the data instead of the optimizer:
/// member 0 is the unresampled fit (a single-member ensemble therefore equals
/// the direct score matrix) and members 1.. refit under seeded bootstrap
/// weights, each scored at its own weighted optimum.
inline InfluenceMatrix ensemble_mtif(const ModelSpec& spec, const MtlDataset& ds,
                                     const SketchConfig& cfg, const SolverConfig& solver = {},
                                     int jobs = 1) {
    cfg.validate();
    std::vector<InfluenceMatrix> members(cfg.ensembles);
    parallel_for(cfg.ensembles, jobs, [&](int e) {
        TrainWeights w =
            e == 0 ? TrainWeights::ones(ds)
                   : bootstrap_weights(ds, splitmix64(derive_seed(cfg.seed, "approx/ensemble") ^
                                                      static_cast<std::uint64_t>(e)));
        FitResult fr = fit(spec, ds, w, solver);
        EngineOptions eopts;
        eopts.seed = cfg.seed;
        InfluenceEngine eng(spec, ds, fr, eopts, nullptr, &w);
        members[e] = eng.mtif_all(1);
    });
    return ensemble_scores(members);
}

/// Score matrix with the final contraction done in sketch space: the
/// factorized solves behind each sample load stay exact and full-dimensional,
/// only the closing dot products c_k'g and a_k'u are replaced by their
/// projected counterparts (Pc_k)'(Pg) and (Pa_k)'(Pu).
inline InfluenceMatrix sketched_mtif(const InfluenceEngine& eng, const GradientSketch& sketch,
                                     int jobs = 1) {
    const int K = eng.task_count();
    std::vector<Eigen::VectorXd> pa(K), pc(K);
    for (int k = 0; k < K; ++k) {
        InfluenceEngine::TargetVectors tv = eng.target_vectors(k);
        pa[k] = sketch.apply(tv.a);
        pc[k] = sketch.apply(tv.c);
    }
    InfluenceMatrix out;
    out.scores.resize(K);
    std::vector<std::pair<int, int>> items;
    for (int l = 0; l < K; ++l) {
        out.scores[l].resize(eng.source_size(l), K);
        for (int i = 0; i < eng.source_size(l); ++i) items.emplace_back(l, i);
    }
    parallel_for(static_cast<int>(items.size()), jobs, [&](int idx) {
        auto [l, i] = items[idx];
        InfluenceEngine::SampleLoad s = eng.sample_load(l, i);
        Eigen::VectorXd pu = sketch.apply(s.u);
        Eigen::VectorXd pg = sketch.apply(s.g);
        for (int k = 0; k < K; ++k) {
            double score = pc[k].dot(pg);
            if (l == k) score -= pa[k].dot(pu);
            out.scores[l](i, k) = score;
        }
    });
    out.meta.model_fingerprint = eng.fingerprint();
    out.meta.seed = sketch.seed();
    out.meta.note = "sketched score contraction; factorized solves stay exact";
    out.validate();
    return out;
}

inline InfluenceMatrix sketched_mtif(const InfluenceEngine& eng, const SketchConfig& cfg,
                                     int jobs = 1) {
    cfg.validate();
    GradientSketch sketch(static_cast<int>(eng.target_vectors(0).a.size()), cfg.sketch_dim,
                          cfg.seed);
    return sketched_mtif(eng, sketch, jobs);
}

/// How faithfully one sketch width reproduces the full-precision ranking:
/// pooled Spearman between exact and sketched scores over every
/// (source sample, target) pair.
struct SketchAccuracy {
    int sketch_dim = 0;
    double spearman_vs_exact = std::numeric_limits<double>::quiet_NaN();
};

/// Measures, without judging, how the ranking degrades as the sketch narrows.
/// Callers report these numbers; nothing here asserts a quality bar.
inline std::vector<SketchAccuracy> sketch_sweep(const InfluenceEngine& eng,
                                                const InfluenceMatrix& exact,
                                                const std::vector<int>& dims, std::uint64_t seed,
                                                int jobs = 1) {
    exact.validate();
    std::vector<SketchAccuracy> out;
    out.reserve(dims.size());
    for (int m : dims) {
        GradientSketch sketch(static_cast<int>(eng.target_vectors(0).a.size()), m, seed);
        InfluenceMatrix approx = sketched_mtif(eng, sketch, jobs);
        std::vector<double> xs, ys;
        for (int l = 0; l < exact.task_count(); ++l)
            for (int i = 0; i < exact.source_size(l); ++i)
                for (int k = 0; k < exact.task_count(); ++k) {
                    xs.push_back(exact.at(l, i, k));
                    ys.push_back(approx.at(l, i, k));
                }
        out.push_back({m, spearman(xs, ys)});
    }
    return out;
}

}  // namespace mtif
