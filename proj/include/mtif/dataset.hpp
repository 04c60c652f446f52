#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtif/errors.hpp"
#include "mtif/random.hpp"

namespace mtif {

struct Sample {
    Eigen::VectorXd x;
    double y = 0.0;
};

enum class SplitKind { train, val, test };

inline const char* split_name(SplitKind s) {
    switch (s) {
        case SplitKind::train: return "train";
        case SplitKind::val: return "val";
        default: return "test";
    }
}

struct TaskData {
    std::string name;
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(SplitKind s) const {
        switch (s) {
            case SplitKind::train: return train;
            case SplitKind::val: return val;
            default: return test;
        }
    }
    std::vector<Sample>& split(SplitKind s) {
        return const_cast<std::vector<Sample>&>(std::as_const(*this).split(s));
    }
    int size() const { return static_cast<int>(train.size() + val.size() + test.size()); }
};

/// K tasks with train/val/test splits sharing one feature dimension.
/// Provenance records how the data came to be (generator config, source file,
/// PCA projection); immutable by convention once built.
struct MtlDataset {
    std::vector<TaskData> tasks;
    int dim = 0;
    nlohmann::json provenance = nlohmann::json::object();

    int task_count() const { return static_cast<int>(tasks.size()); }
    int train_size(int k) const { return static_cast<int>(tasks[k].train.size()); }
    int total_train() const {
        int n = 0;
        for (const auto& t : tasks) n += static_cast<int>(t.train.size());
        return n;
    }
    std::vector<int> train_sizes() const {
        std::vector<int> ns(tasks.size());
        for (size_t k = 0; k < tasks.size(); ++k) ns[k] = static_cast<int>(tasks[k].train.size());
        return ns;
    }

    void validate() const {
        if (tasks.empty()) throw InvalidConfig("dataset has no tasks");
        for (const auto& t : tasks)
            for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
                for (const auto& z : t.split(s)) {
                    if (z.x.size() != dim) throw DimMismatch("sample dimension != dataset dim");
                    if (!z.x.allFinite() || !std::isfinite(z.y))
                        throw InvalidConfig("non-finite sample in dataset");
                }
    }
};

/// Per-sample weights over the training splits (the sigma vector). Indexed
/// (task, train index); defaults to all ones.
class TrainWeights {
  public:
    TrainWeights() = default;
    explicit TrainWeights(std::vector<int> sizes) {
        w_.reserve(sizes.size());
        for (int n : sizes) w_.emplace_back(n, 1.0);
    }
    static TrainWeights ones(const MtlDataset& ds) { return TrainWeights(ds.train_sizes()); }

    double operator()(int l, int i) const { return w_[l][i]; }
    void set(int l, int i, double v) { w_[l][i] = v; }
    int task_count() const { return static_cast<int>(w_.size()); }
    int size(int l) const { return static_cast<int>(w_[l].size()); }

    bool matches(const MtlDataset& ds) const {
        if (task_count() != ds.task_count()) return false;
        for (int k = 0; k < task_count(); ++k)
            if (size(k) != ds.train_size(k)) return false;
        return true;
    }

  private:
    std::vector<std::vector<double>> w_;
};

/// Split sizes by largest remainder: floor(ratio*n) each, leftovers handed out
/// by descending fractional part with ties resolved in train->val->test order.
inline std::array<int, 3> split_sizes(int n, const std::array<double, 3>& ratios) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
        throw InvalidRatios("split ratios must be nonnegative and sum to 1");
    std::array<int, 3> sizes{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
        double exact = ratios[s] * n;
        sizes[s] = static_cast<int>(std::floor(exact + 1e-9));
        frac[s] = exact - sizes[s];
        assigned += sizes[s];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (int r = 0; r < n - assigned; ++r) sizes[order[r % 3]] += 1;
    return sizes;
}

/// Re-splits each task: pools its samples, shuffles with the task-derived
/// seed, slices contiguously into train/val/test.
inline MtlDataset split(const MtlDataset& ds, const std::array<double, 3>& ratios,
                        std::uint64_t seed) {
    MtlDataset out;
    out.dim = ds.dim;
    out.provenance = ds.provenance;
    for (int k = 0; k < ds.task_count(); ++k) {
        const TaskData& t = ds.tasks[k];
        std::vector<Sample> pool;
        pool.reserve(t.size());
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (const auto& z : t.split(s)) pool.push_back(z);

        auto rng = make_rng(splitmix64(seed ^ static_cast<std::uint64_t>(k)));
        std::shuffle(pool.begin(), pool.end(), rng);

        auto sizes = split_sizes(static_cast<int>(pool.size()), ratios);
        TaskData nt;
        nt.name = t.name;
        auto it = pool.begin();
        nt.train.assign(it, it + sizes[0]);
        it += sizes[0];
        nt.val.assign(it, it + sizes[1]);
        it += sizes[1];
        nt.test.assign(it, it + sizes[2]);
        out.tasks.push_back(std::move(nt));
    }
    return out;
}

inline bool is_classification(const MtlDataset& ds) {
    for (const auto& t : ds.tasks)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (const auto& z : t.split(s))
                if (z.y != 0.0 && z.y != 1.0) return false;
    return true;
}

/// Thresholds continuous responses into {0,1} labels so regression-style
/// generators can feed the classification model.
inline MtlDataset binarize_labels(const MtlDataset& ds, double threshold = 0.0) {
    MtlDataset out = ds;
    for (auto& t : out.tasks)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (auto& z : t.split(s)) z.y = z.y > threshold ? 1.0 : 0.0;
    out.provenance["binarize_threshold"] = threshold;
    return out;
}

/// Flips round(fraction * total_train) labels, drawn uniformly from the pooled
/// training set. Returns the corrupted (task, index) pairs sorted.
inline std::pair<MtlDataset, std::vector<std::pair<int, int>>> corrupt_labels(
    const MtlDataset& ds, double fraction, std::uint64_t seed) {
    if (!is_classification(ds)) throw NotClassification();
    if (fraction < 0.0 || fraction > 1.0) throw InvalidConfig("corruption fraction outside [0,1]");

    std::vector<std::pair<int, int>> pool;
    for (int k = 0; k < ds.task_count(); ++k)
        for (int i = 0; i < ds.train_size(k); ++i) pool.emplace_back(k, i);

    const auto count = static_cast<size_t>(std::llround(fraction * pool.size()));
    auto rng = make_rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());

    MtlDataset out = ds;
    for (auto [k, i] : pool) {
        double& y = out.tasks[k].train[i].y;
        y = 1.0 - y;  // binary: always lands on the other class
    }
    out.provenance["corrupt_fraction"] = fraction;
    return {std::move(out), std::move(pool)};
}

/// PCA fit on pooled training features only (center by the pooled training
/// mean, keep the top directions); all splits are projected with the same map.
/// Falls back to the available rank with a warning when the data is rank
/// deficient. The mean and projection land in provenance.
inline MtlDataset pca_reduce(const MtlDataset& ds, int target_dim) {
    if (target_dim < 1 || target_dim > ds.dim) throw InvalidConfig("pca target_dim outside [1, d]");
    int n_train = ds.total_train();
    if (n_train == 0) throw EmptySplit("pca needs a nonempty training split");

    Eigen::MatrixXd x(n_train, ds.dim);
    int r = 0;
    for (const auto& t : ds.tasks)
        for (const auto& z : t.train) x.row(r++) = z.x.transpose();
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    double tol = std::max(n_train, ds.dim) * 1e-12 * (sv.size() ? sv[0] : 0.0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++rank;
    if (rank == 0) throw RankDeficient("training features have rank zero");
    int keep = target_dim;
    if (rank < target_dim) {
        std::cerr << "pca_reduce: rank " << rank << " < requested " << target_dim
                  << ", projecting onto available rank\n";
        keep = rank;
    }
    Eigen::MatrixXd proj = svd.matrixV().leftCols(keep);  // d x keep

    MtlDataset out;
    out.dim = keep;
    out.provenance = ds.provenance;
    nlohmann::json pca;
    pca["original_dim"] = ds.dim;
    pca["target_dim"] = keep;
    pca["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    nlohmann::json pj = nlohmann::json::array();
    for (int i = 0; i < proj.rows(); ++i) {
        Eigen::RowVectorXd row = proj.row(i);
        pj.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    pca["projection"] = std::move(pj);
    out.provenance["pca"] = std::move(pca);

    for (const auto& t : ds.tasks) {
        TaskData nt;
        nt.name = t.name;
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (const auto& z : t.split(s))
                nt.split(s).push_back({proj.transpose() * (z.x - mean.transpose()), z.y});
        out.tasks.push_back(std::move(nt));
    }
    return out;
}

}  // namespace mtif
