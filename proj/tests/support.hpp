#pragma once

// Shared generators for randomized tests.

#include <random>
#include <vector>

#include "mtif/dataset.hpp"
#include "mtif/linalg.hpp"

namespace mtif::testing {

inline Eigen::MatrixXd random_spd(int dim, std::mt19937_64& rng, double ridge = 0.2) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = u(rng);
    Eigen::MatrixXd m = a * a.transpose() / dim + ridge * Eigen::MatrixXd::Identity(dim, dim);
    linalg::symmetrize(m);
    return m;
}

// SPD-by-construction block Hessian: the shared block is built as
// N0 + sum_k C_k^T H_kk^{-1} C_k with N0 SPD, so the Schur complement equals N0
// and the assembled matrix is positive definite.
inline linalg::BlockHessian random_spd_block_hessian(const std::vector<int>& task_dims, int shared_dim,
                                                     std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    linalg::BlockHessian bh;
    Eigen::MatrixXd accum = random_spd(shared_dim, rng);
    for (int d : task_dims) {
        bh.diag.push_back(random_spd(d, rng));
        Eigen::MatrixXd c(d, shared_dim);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < shared_dim; ++j) c(i, j) = u(rng);
        accum += c.transpose() * bh.diag.back().llt().solve(c);
        bh.cross.push_back(std::move(c));
    }
    linalg::symmetrize(accum);
    bh.shared = std::move(accum);
    return bh;
}

/// Small random linear-regression dataset for solver and influence tests.
/// Labels are x' w_k + noise for a per-task random w_k.
inline MtlDataset make_regression_toy(int tasks, int n_train, int n_val, int dim,
                                      std::uint64_t seed, double noise_sd = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    MtlDataset ds;
    ds.dim = dim;
    for (int k = 0; k < tasks; ++k) {
        Eigen::VectorXd w(dim);
        for (int j = 0; j < dim; ++j) w[j] = gauss(rng);
        TaskData t;
        t.name = "task" + std::to_string(k);
        auto draw = [&](std::vector<Sample>& dst, int n) {
            for (int i = 0; i < n; ++i) {
                Sample z;
                z.x.resize(dim);
                for (int j = 0; j < dim; ++j) z.x[j] = gauss(rng);
                z.y = z.x.dot(w) + noise_sd * gauss(rng);
                dst.push_back(std::move(z));
            }
        };
        draw(t.train, n_train);
        draw(t.val, n_val);
        draw(t.test, n_val);
        ds.tasks.push_back(std::move(t));
    }
    return ds;
}

/// Same shape with {0,1} labels from a random linear separator.
inline MtlDataset make_classification_toy(int tasks, int n_train, int n_val, int dim,
                                          std::uint64_t seed) {
    MtlDataset ds = make_regression_toy(tasks, n_train, n_val, dim, seed, 0.5);
    for (auto& t : ds.tasks)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (auto& z : t.split(s)) z.y = z.y > 0 ? 1.0 : 0.0;
    return ds;
}

inline bool samples_equal(const Sample& a, const Sample& b) {
    return a.y == b.y && a.x.size() == b.x.size() && a.x == b.x;
}

/// Exact (bitwise-value) dataset equality over structure and samples.
inline bool datasets_equal(const MtlDataset& a, const MtlDataset& b) {
    if (a.dim != b.dim || a.task_count() != b.task_count()) return false;
    for (int k = 0; k < a.task_count(); ++k)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test}) {
            const auto& sa = a.tasks[k].split(s);
            const auto& sb = b.tasks[k].split(s);
            if (sa.size() != sb.size()) return false;
            for (size_t i = 0; i < sa.size(); ++i)
                if (!samples_equal(sa[i], sb[i])) return false;
        }
    return true;
}

}  // namespace mtif::testing
