#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/random.hpp"

namespace mtif {

struct SyntheticConfig {
    int tasks = 10;
    int samples_per_task = 200;
    int dim = 50;
    double delta = 1.0;     // radius of the per-task offset from the shared center
    double alpha = 0.2;     // fraction of tasks replaced by unrelated parameters
    double noise_sd = 1.0;  // response noise standard deviation
    std::uint64_t seed = 0;

    void validate() const {
        if (tasks < 1) throw InvalidConfig("synthetic: tasks must be >= 1");
        if (samples_per_task < 1) throw InvalidConfig("synthetic: samples_per_task must be >= 1");
        if (dim < 1) throw InvalidConfig("synthetic: dim must be >= 1");
        if (delta < 0.0) throw InvalidConfig("synthetic: delta must be >= 0");
        if (alpha < 0.0 || alpha > 1.0) throw InvalidConfig("synthetic: alpha outside [0,1]");
        if (noise_sd < 0.0) throw InvalidConfig("synthetic: noise_sd must be >= 0");
    }

    nlohmann::json to_json() const {
        return {{"tasks", tasks},       {"samples_per_task", samples_per_task},
                {"dim", dim},           {"delta", delta},
                {"alpha", alpha},       {"noise_sd", noise_sd},
                {"seed", seed}};
    }
    static SyntheticConfig from_json(const nlohmann::json& j) {
        SyntheticConfig c;
        c.tasks = j.value("tasks", c.tasks);
        c.samples_per_task = j.value("samples_per_task", c.samples_per_task);
        c.dim = j.value("dim", c.dim);
        c.delta = j.value("delta", c.delta);
        c.alpha = j.value("alpha", c.alpha);
        c.noise_sd = j.value("noise_sd", c.noise_sd);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

/// Linear-regression benchmark: task parameters cluster around a shared center
/// beta* = 2 e_1 at distance delta, except a round(alpha*K) subset redrawn as
/// unrelated directions of the same norm. Responses are x' theta* + noise with
/// x ~ N(0, I). Each task is split 1:1:1 into train/val/test.
///
/// Every random stream derives its own seed from (seed, stage label), so e.g.
/// the replaced-task choice is unaffected by changing n or d.
inline MtlDataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const int K = cfg.tasks, n = cfg.samples_per_task, d = cfg.dim;

    Eigen::VectorXd center = Eigen::VectorXd::Zero(d);
    center[0] = 2.0;

    auto rng_theta = make_rng(derive_seed(cfg.seed, "synthetic/theta"));
    std::vector<Eigen::VectorXd> theta_star(K);
    for (int k = 0; k < K; ++k) theta_star[k] = center + sphere_vector(d, cfg.delta, rng_theta);

    auto rng_replace = make_rng(derive_seed(cfg.seed, "synthetic/replace"));
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_replace);
    const int n_replace = static_cast<int>(std::llround(cfg.alpha * K));
    std::vector<int> replaced(order.begin(), order.begin() + n_replace);
    std::sort(replaced.begin(), replaced.end());
    for (int k : replaced) {
        Eigen::VectorXd v = gaussian_vector(d, rng_theta);
        double norm = v.norm();
        theta_star[k] = norm > 0 ? Eigen::VectorXd(v * (center.norm() / norm)) : center;
    }

    auto rng_x = make_rng(derive_seed(cfg.seed, "synthetic/features"));
    auto rng_noise = make_rng(derive_seed(cfg.seed, "synthetic/noise"));

    MtlDataset ds;
    ds.dim = d;
    for (int k = 0; k < K; ++k) {
        TaskData t;
        t.name = "task" + std::to_string(k);
        t.train.reserve(n);
        for (int i = 0; i < n; ++i) {
            Sample z;
            z.x = gaussian_vector(d, rng_x);
            z.y = z.x.dot(theta_star[k]) + gaussian_vector(1, rng_noise, cfg.noise_sd)[0];
            t.train.push_back(std::move(z));
        }
        ds.tasks.push_back(std::move(t));
    }

    nlohmann::json prov;
    prov["generator"] = "synthetic";
    prov["config"] = cfg.to_json();
    prov["replaced_tasks"] = replaced;
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& v : theta_star)
        ts.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    prov["theta_star"] = std::move(ts);
    ds.provenance = std::move(prov);

    return split(ds, {1.0 / 3, 1.0 / 3, 1.0 / 3}, derive_seed(cfg.seed, "synthetic/split"));
}

}  // namespace mtif
