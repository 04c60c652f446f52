#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mtif/errors.hpp"
#include "mtif/influence.hpp"
#include "mtif/oracle.hpp"
#include "support.hpp"

using namespace mtif;
using namespace mtif::testing;

namespace {

double pearson_of(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    REQUIRE(a.size() >= 2);
    Eigen::Map<const Eigen::VectorXd> va(a.data(), static_cast<Eigen::Index>(a.size()));
    Eigen::Map<const Eigen::VectorXd> vb(b.data(), static_cast<Eigen::Index>(b.size()));
    Eigen::VectorXd ca = va.array() - va.mean();
    Eigen::VectorXd cb = vb.array() - vb.mean();
    return ca.dot(cb) / (ca.norm() * cb.norm());
}

}  // namespace

TEST_CASE("warm and cold leave-one-out refits agree", "[oracle]") {
    for (ModelKind kind : {ModelKind::ridge_linear, ModelKind::soft_logistic}) {
        MtlDataset ds = kind == ModelKind::ridge_linear ? make_regression_toy(2, 20, 10, 3, 5)
                                                        : make_classification_toy(2, 20, 10, 3, 5);
        ModelSpec spec = ModelSpec::make(kind, 2, 3, 0.4);
        OracleOptions cold;
        cold.warm_start = false;
        RetrainOracle warm_oracle(spec, ds);
        RetrainOracle cold_oracle(spec, ds, {}, cold);
        for (int i : {0, 7, 19}) {
            auto a = warm_oracle.loo_delta(i, 1, {0, 1});
            auto b = cold_oracle.loo_delta(i, 1, {0, 1});
            REQUIRE(a.size() == b.size());
            for (std::size_t r = 0; r < a.size(); ++r) {
                CHECK(a[r].source_task == b[r].source_task);
                CHECK(a[r].target_task == b[r].target_task);
                CHECK(std::abs(a[r].delta - b[r].delta) < 1e-8);
            }
        }
    }
}

TEST_CASE("duplicate training samples yield identical removal effects", "[oracle]") {
    MtlDataset ds = make_regression_toy(2, 12, 6, 3, 11);
    ds.tasks[0].train[3] = ds.tasks[0].train[2];
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.3);
    RetrainOracle oracle(spec, ds);
    auto a = oracle.loo_delta(2, 0, {0, 1});
    auto b = oracle.loo_delta(3, 0, {0, 1});
    REQUIRE(a.size() == b.size());
    for (std::size_t r = 0; r < a.size(); ++r) {
        CHECK(a[r].delta == b[r].delta);
        CHECK(a[r].retrain_iters == b[r].retrain_iters);
    }
}

TEST_CASE("both removal conventions rank samples the same way", "[oracle]") {
    // Shrinking the denominator upweights the surviving data of the source
    // task by 1/(n-1), which shifts every delta of a (source, target) pair by
    // a near-common offset; sample-to-sample variation within such a group
    // only differs between the conventions at the next order in 1/n. Ranking
    // agreement is therefore asserted per group.
    MtlDataset ds = make_regression_toy(2, 30, 15, 4, 3);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 4, 0.5);
    OracleOptions renorm;
    renorm.convention = RemovalConvention::delete_renormalize;
    RetrainOracle keep_n(spec, ds);
    RetrainOracle drop_n(spec, ds, {}, renorm);

    auto a = keep_n.loo_all({0, 1}, 2, 12);
    auto b = drop_n.loo_all({0, 1}, 2, 12);
    REQUIRE(a.size() == b.size());
    for (int l : {0, 1})
        for (int k : {0, 1}) {
            std::vector<double> da, db;
            for (std::size_t r = 0; r < a.size(); ++r) {
                if (a[r].source_task != l || a[r].target_task != k) continue;
                CHECK(a[r].source_index == b[r].source_index);
                da.push_back(a[r].delta);
                db.push_back(b[r].delta);
            }
            REQUIRE(da.size() == 12);
            CHECK(pearson_of(da, db) > 0.99);
        }
}

TEST_CASE("finite difference matches the analytic influence score", "[oracle]") {
    // For the quadratic model the analytic score is the exact derivative of
    // V_k along the sample weight, so a central difference at step 1e-5 must
    // agree to high relative accuracy.
    MtlDataset ds = make_regression_toy(2, 20, 10, 3, 7);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.4);
    RetrainOracle oracle(spec, ds);
    InfluenceEngine engine(spec, ds, oracle.base_fit());
    for (int l : {0, 1})
        for (int i : {0, 5, 13})
            for (int k : {0, 1}) {
                double fd = oracle.fd_sigma_derivative(i, l, k, 1e-5);
                double analytic = engine.mtif_instance(i, l, k);
                CHECK(std::abs(fd - analytic) <= 1e-4 * std::max(std::abs(analytic), 1e-8));
            }
}

TEST_CASE("a zero-feature sample has no removal effect", "[oracle]") {
    MtlDataset ds = make_regression_toy(2, 15, 8, 3, 9);
    Sample dead;
    dead.x = Eigen::VectorXd::Zero(3);
    dead.y = 0.0;
    ds.tasks[0].train.push_back(dead);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.6);
    RetrainOracle oracle(spec, ds);
    int dead_idx = ds.train_size(0) - 1;
    auto recs = oracle.loo_delta(dead_idx, 0, {0, 1});
    for (const auto& r : recs) {
        CHECK(std::abs(r.delta) < 1e-12);
        CHECK(r.retrain_iters == 0);  // warm start is already stationary
    }
    CHECK(std::abs(oracle.fd_sigma_derivative(dead_idx, 0, 0, 1e-3)) < 1e-8);
}

TEST_CASE("finite-difference error shrinks quadratically with the step", "[oracle]") {
    MtlDataset ds = make_regression_toy(2, 16, 8, 3, 13);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.3);
    RetrainOracle oracle(spec, ds);
    InfluenceEngine engine(spec, ds, oracle.base_fit());

    // Pick the sample with the largest score so truncation error dominates
    // solver noise across the whole step ladder.
    int best_i = 0, best_l = 0;
    double best = -1.0;
    for (int l : {0, 1})
        for (int i = 0; i < ds.train_size(l); ++i) {
            double s = std::abs(engine.mtif_instance(i, l, 0));
            if (s > best) best = s, best_i = i, best_l = l;
        }
    double exact = engine.mtif_instance(best_i, best_l, 0);
    double e1 = std::abs(oracle.fd_sigma_derivative(best_i, best_l, 0, 0.05) - exact);
    double e2 = std::abs(oracle.fd_sigma_derivative(best_i, best_l, 0, 0.025) - exact);
    double e3 = std::abs(oracle.fd_sigma_derivative(best_i, best_l, 0, 0.0125) - exact);
    if (e1 > 1e-12) {
        CHECK(e2 <= 0.6 * e1);
        CHECK(e3 <= 0.6 * e2);
    }
}

TEST_CASE("leave-one-task-out equals an independent reduced fit", "[oracle]") {
    MtlDataset ds = make_regression_toy(3, 18, 9, 3, 21);
    std::vector<double> lambdas{0.3, 0.5, 0.7};
    ModelSpec spec{ModelKind::ridge_linear, lambdas, 3};
    RetrainOracle oracle(spec, ds);
    auto recs = oracle.loto_delta(1, {0, 2});

    // Reference path: physically drop task 1 and fit the two-task model.
    MtlDataset reduced = ds;
    reduced.tasks.erase(reduced.tasks.begin() + 1);
    ModelSpec rspec{ModelKind::ridge_linear, {lambdas[0], lambdas[2]}, 3};
    FitResult rfit = fit(rspec, reduced, TrainWeights::ones(reduced));

    double base_v0 = validation_loss(spec, oracle.base_fit().params, ds, 0).value;
    double base_v2 = validation_loss(spec, oracle.base_fit().params, ds, 2).value;
    double red_v0 = validation_loss(rspec, rfit.params, reduced, 0).value;
    double red_v2 = validation_loss(rspec, rfit.params, reduced, 1).value;

    REQUIRE(recs.size() == 2);
    CHECK(recs[0].target_task == 0);
    CHECK(std::abs(recs[0].delta - (base_v0 - red_v0)) < 1e-9);
    CHECK(recs[1].target_task == 2);
    CHECK(std::abs(recs[1].delta - (base_v2 - red_v2)) < 1e-9);
}

TEST_CASE("a strongly coupled task outranks a weakly tied noise task", "[oracle]") {
    // Tasks 0 and 1 share the same ground-truth parameters; task 2's labels
    // are pure noise and its coupling weight is small, so removing it should
    // barely move the shared center compared with removing task 1.
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd theta_star = Eigen::VectorXd::Zero(4);
    theta_star[0] = 2.0;
    theta_star[2] = -1.0;

    MtlDataset ds;
    ds.dim = 4;
    for (int k = 0; k < 3; ++k) {
        TaskData t;
        t.name = "task" + std::to_string(k);
        auto draw = [&](std::vector<Sample>& dst, int n) {
            for (int i = 0; i < n; ++i) {
                Sample z;
                z.x = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return gauss(rng); });
                z.y = k < 2 ? z.x.dot(theta_star) + 0.1 * gauss(rng) : gauss(rng);
                dst.push_back(std::move(z));
            }
        };
        draw(t.train, 40);
        draw(t.val, 20);
        ds.tasks.push_back(std::move(t));
    }

    ModelSpec spec{ModelKind::ridge_linear, {0.5, 0.5, 0.01}, 4};
    RetrainOracle oracle(spec, ds);
    double coupled = oracle.loto_delta(1, {0})[0].delta;
    double noise = oracle.loto_delta(2, {0})[0].delta;
    CHECK(std::abs(coupled) > 3.0 * std::abs(noise));
}

TEST_CASE("bulk leave-one-out output is ordered and parallel-stable", "[oracle]") {
    MtlDataset ds = make_regression_toy(2, 8, 5, 3, 29);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.4);
    RetrainOracle oracle(spec, ds);

    auto serial = oracle.loo_all({1, 0});
    auto parallel = oracle.loo_all({1, 0}, 4);
    REQUIRE(serial.size() == 2u * 16u);
    CHECK(serial == parallel);

    std::size_t r = 0;
    for (int l = 0; l < 2; ++l)
        for (int i = 0; i < 8; ++i)
            for (int k : {1, 0}) {
                CHECK(serial[r].source_task == l);
                CHECK(serial[r].source_index == i);
                CHECK(serial[r].target_task == k);
                ++r;
            }

    auto capped = oracle.loo_all({0}, 1, 3);
    REQUIRE(capped.size() == 6);
    CHECK(capped[2].source_index == 2);
    CHECK(capped[3].source_task == 1);
}

TEST_CASE("oracle records convert to the shared score-row schema", "[oracle]") {
    std::vector<LooRecord> loo{{0, 4, 1, 0.25, 3}};
    auto rows = to_score_rows(loo);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].source_task == 0);
    CHECK(rows[0].source_index == 4);
    CHECK(rows[0].target_task == 1);
    CHECK(rows[0].score == 0.25);
    CHECK(rows[0].source == "oracle");

    std::vector<LotoRecord> loto{{2, 0, -0.5}};
    auto trows = to_score_rows(loto);
    REQUIRE(trows.size() == 1);
    CHECK(trows[0].source_index == -1);
    CHECK(trows[0].source == "oracle");
}

TEST_CASE("oracle rejects invalid requests", "[oracle]") {
    MtlDataset ds = make_regression_toy(2, 6, 4, 3, 31);
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.4);
    RetrainOracle oracle(spec, ds);

    CHECK_THROWS_AS(oracle.loo_delta(0, 5, {0}), InvalidTask);
    CHECK_THROWS_AS(oracle.loo_delta(6, 0, {0}), InvalidConfig);
    CHECK_THROWS_AS(oracle.loo_delta(0, 0, {2}), InvalidTask);
    CHECK_THROWS_AS(oracle.loto_delta(0, {0}), SameTask);
    CHECK_THROWS_AS(oracle.loto_delta(7, {0}), InvalidTask);
    CHECK_THROWS_AS(oracle.fd_sigma_derivative(0, 0, 0, 0.0), InvalidConfig);
    CHECK_THROWS_AS(oracle.fd_sigma_derivative(0, 0, 0, 0.2), InvalidConfig);
    CHECK_THROWS_AS(oracle.fd_sigma_derivative(0, 0, -1, 1e-3), InvalidTask);

    MtlDataset single = make_regression_toy(1, 6, 4, 3, 33);
    ModelSpec sspec = ModelSpec::make(ModelKind::ridge_linear, 1, 3, 0.4);
    RetrainOracle soracle(sspec, single);
    CHECK_THROWS_AS(soracle.loto_delta(0, {}), InvalidConfig);

    MtlDataset tiny = make_regression_toy(2, 1, 3, 2, 35);
    ModelSpec tspec = ModelSpec::make(ModelKind::ridge_linear, 2, 2, 0.4);
    OracleOptions renorm;
    renorm.convention = RemovalConvention::delete_renormalize;
    RetrainOracle toracle(tspec, tiny, {}, renorm);
    CHECK_THROWS_AS(toracle.loo_delta(0, 0, {0}), EmptySplit);

    MtlDataset cls = make_classification_toy(2, 20, 10, 3, 37);
    ModelSpec cspec = ModelSpec::make(ModelKind::soft_logistic, 2, 3, 0.4);
    SolverConfig strict;
    strict.max_iter = 1;
    CHECK_THROWS_AS(RetrainOracle(cspec, cls, strict), NotConverged);
}
