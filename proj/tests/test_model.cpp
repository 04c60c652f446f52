#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mtif/model.hpp"
#include "support.hpp"

using namespace mtif;

namespace {

ModelSpec one_task(ModelKind kind, int dim, double lambda = 1.0) {
    return ModelSpec::make(kind, 1, dim, lambda);
}

MtlParams params_of(const ModelSpec& spec, const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& gamma) {
    MtlParams p = MtlParams::zeros(spec);
    p.thetas[0] = theta;
    p.gamma = gamma;
    return p;
}

Eigen::VectorXd fd_loss_grad(const ModelSpec& spec, MtlParams params, const Sample& z,
                             double h) {
    Eigen::VectorXd g(spec.dim);
    for (int j = 0; j < spec.dim; ++j) {
        params.thetas[0][j] += h;
        double up = sample_loss(spec, params, 0, z);
        params.thetas[0][j] -= 2 * h;
        double dn = sample_loss(spec, params, 0, z);
        params.thetas[0][j] += h;
        g[j] = (up - dn) / (2 * h);
    }
    return g;
}

Eigen::MatrixXd fd_grad_jacobian(const ModelSpec& spec, MtlParams params, const Sample& z,
                                 double h) {
    Eigen::MatrixXd m(spec.dim, spec.dim);
    for (int j = 0; j < spec.dim; ++j) {
        params.thetas[0][j] += h;
        Eigen::VectorXd up = sample_grad(spec, params, 0, z).theta;
        params.thetas[0][j] -= 2 * h;
        Eigen::VectorXd dn = sample_grad(spec, params, 0, z).theta;
        params.thetas[0][j] += h;
        m.col(j) = (up - dn) / (2 * h);
    }
    return m;
}

}  // namespace

TEST_CASE("sample loss closed forms", "[model]") {
    ModelSpec ridge = one_task(ModelKind::ridge_linear, 2);
    ModelSpec logit = one_task(ModelKind::soft_logistic, 2);

    Sample fit{Eigen::Vector2d(1.0, 2.0), 5.0};
    MtlParams exact = params_of(ridge, Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d::Zero());
    CHECK(sample_loss(ridge, exact, 0, fit) == Catch::Approx(0.0).margin(1e-15));

    Sample miss{Eigen::Vector2d(1.0, 0.0), 0.0};
    MtlParams two = params_of(ridge, Eigen::Vector2d(2.0, 0.0), Eigen::Vector2d::Zero());
    CHECK(sample_loss(ridge, two, 0, miss) == Catch::Approx(4.0));

    MtlParams zero = MtlParams::zeros(logit);
    Sample pos{Eigen::Vector2d(3.0, -1.0), 1.0};
    Sample neg{Eigen::Vector2d(3.0, -1.0), 0.0};
    CHECK(sample_loss(logit, zero, 0, pos) == Catch::Approx(std::log(2.0)));
    CHECK(sample_loss(logit, zero, 0, neg) == Catch::Approx(std::log(2.0)));
}

TEST_CASE("logistic loss is overflow-safe at extreme margins", "[model]") {
    ModelSpec logit = one_task(ModelKind::soft_logistic, 1);
    MtlParams p = params_of(logit, Eigen::VectorXd::Constant(1, 500.0),
                            Eigen::VectorXd::Zero(1));
    Sample agree{Eigen::VectorXd::Constant(1, 1.0), 1.0};
    Sample oppose{Eigen::VectorXd::Constant(1, 1.0), 0.0};
    CHECK(std::isfinite(sample_loss(logit, p, 0, agree)));
    CHECK(sample_loss(logit, p, 0, agree) >= 0.0);
    CHECK(sample_loss(logit, p, 0, oppose) == Catch::Approx(500.0));
    CHECK(sigmoid(-800.0) == 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("sample gradient closed forms", "[model]") {
    ModelSpec ridge = one_task(ModelKind::ridge_linear, 2);
    Sample fit{Eigen::Vector2d(1.0, 2.0), 5.0};
    MtlParams exact = params_of(ridge, Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d::Zero());
    CHECK(sample_grad(ridge, exact, 0, fit).theta.norm() == Catch::Approx(0.0).margin(1e-15));

    ModelSpec logit = one_task(ModelKind::soft_logistic, 2);
    MtlParams zero = MtlParams::zeros(logit);
    Sample z{Eigen::Vector2d(1.0, 0.0), 1.0};
    SampleGrad g = sample_grad(logit, zero, 0, z);
    CHECK(g.theta[0] == Catch::Approx(-0.5));
    CHECK(g.theta[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(g.gamma.isZero(0.0));
}

TEST_CASE("sample hessian closed forms", "[model]") {
    ModelSpec ridge = one_task(ModelKind::ridge_linear, 2);
    MtlParams p = MtlParams::zeros(ridge);
    Sample e1{Eigen::Vector2d(1.0, 0.0), 0.0};
    SampleHessian h = sample_hessian_blocks(ridge, p, 0, e1);
    CHECK(h.tt(0, 0) == 2.0);
    CHECK(h.tt(0, 1) == 0.0);
    CHECK(h.tt(1, 1) == 0.0);
    CHECK(h.tg.isZero(0.0));
    CHECK(h.gg.isZero(0.0));

    ModelSpec logit = one_task(ModelKind::soft_logistic, 2);
    MtlParams zero = MtlParams::zeros(logit);
    Sample z{Eigen::Vector2d(2.0, -1.0), 1.0};
    SampleHessian hl = sample_hessian_blocks(logit, zero, 0, z);
    CHECK((hl.tt - 0.25 * z.x * z.x.transpose()).norm() == Catch::Approx(0.0).margin(1e-14));
    CHECK(sample_curvature(logit, zero, 0, z) == Catch::Approx(0.25));
    CHECK(sample_curvature(ridge, p, 0, z) == 2.0);
}

TEST_CASE("regularizer closed forms", "[model]") {
    ModelSpec spec = one_task(ModelKind::ridge_linear, 2, 0.5);
    MtlParams agree = params_of(spec, Eigen::Vector2d(0.3, -0.7), Eigen::Vector2d(0.3, -0.7));
    RegTerms r0 = reg_value_grad_hess(spec, agree, 0);
    CHECK(r0.value == Catch::Approx(0.0).margin(1e-15));
    CHECK(r0.g_theta.norm() == Catch::Approx(0.0).margin(1e-15));
    CHECK(r0.g_gamma.norm() == Catch::Approx(0.0).margin(1e-15));

    MtlParams apart = params_of(spec, Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d::Zero());
    RegTerms r = reg_value_grad_hess(spec, apart, 0);
    CHECK(r.value == Catch::Approx(0.5));
    CHECK(r.g_theta[0] == Catch::Approx(1.0));
    CHECK(r.g_gamma[0] == Catch::Approx(-1.0));
    CHECK((r.h_tt - Eigen::Matrix2d::Identity()).norm() == Catch::Approx(0.0).margin(1e-15));
    CHECK((r.h_tg + Eigen::Matrix2d::Identity()).norm() == Catch::Approx(0.0).margin(1e-15));
    CHECK((r.h_gg - Eigen::Matrix2d::Identity()).norm() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("gradients match finite differences on random instances", "[model]") {
    std::mt19937_64 rng(123);
    std::normal_distribution<double> gauss;
    std::bernoulli_distribution coin;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 6);
        const bool ridge = trial % 2 == 0;
        ModelSpec spec =
            one_task(ridge ? ModelKind::ridge_linear : ModelKind::soft_logistic, d);
        Eigen::VectorXd theta(d), gamma(d);
        Sample z;
        z.x.resize(d);
        for (int j = 0; j < d; ++j) {
            theta[j] = gauss(rng);
            gamma[j] = gauss(rng);
            z.x[j] = gauss(rng);
        }
        z.y = ridge ? gauss(rng) : (coin(rng) ? 1.0 : 0.0);
        MtlParams p = params_of(spec, theta, gamma);

        Eigen::VectorXd g = sample_grad(spec, p, 0, z).theta;
        Eigen::VectorXd fd = fd_loss_grad(spec, p, z, 1e-6);
        double scale = std::max(1.0, g.lpNorm<Eigen::Infinity>());
        REQUIRE((g - fd).lpNorm<Eigen::Infinity>() <= 1e-5 * scale);

        Eigen::MatrixXd h = sample_hessian_blocks(spec, p, 0, z).tt;
        Eigen::MatrixXd fdh = fd_grad_jacobian(spec, p, z, 1e-4);
        double hscale = std::max(1.0, h.lpNorm<Eigen::Infinity>());
        REQUIRE((h - fdh).lpNorm<Eigen::Infinity>() <= 1e-4 * hscale);
    }
}

TEST_CASE("regularizer gradients match finite differences", "[model]") {
    std::mt19937_64 rng(321);
    std::normal_distribution<double> gauss;
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 5);
        ModelSpec spec = one_task(ModelKind::ridge_linear, d, 0.1 + 2.0 * (trial % 5));
        Eigen::VectorXd theta(d), gamma(d);
        for (int j = 0; j < d; ++j) {
            theta[j] = gauss(rng);
            gamma[j] = gauss(rng);
        }
        MtlParams p = params_of(spec, theta, gamma);
        RegTerms r = reg_value_grad_hess(spec, p, 0);

        const double h = 1e-6;
        for (int j = 0; j < d; ++j) {
            MtlParams up = p, dn = p;
            up.thetas[0][j] += h;
            dn.thetas[0][j] -= h;
            double fd = (reg_value_grad_hess(spec, up, 0).value -
                         reg_value_grad_hess(spec, dn, 0).value) /
                        (2 * h);
            REQUIRE(std::abs(fd - r.g_theta[j]) <= 1e-6 * std::max(1.0, std::abs(fd)));

            up = p;
            dn = p;
            up.gamma[j] += h;
            dn.gamma[j] -= h;
            fd = (reg_value_grad_hess(spec, up, 0).value -
                  reg_value_grad_hess(spec, dn, 0).value) /
                 (2 * h);
            REQUIRE(std::abs(fd - r.g_gamma[j]) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("objective matches its definition", "[model]") {
    // Two tasks, labels constructed so task 0 has zero residuals.
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.75);
    MtlParams p = MtlParams::zeros(spec);
    p.thetas[0] = Eigen::Vector3d(1.0, -1.0, 0.5);
    p.thetas[1] = Eigen::Vector3d(0.0, 2.0, 0.0);
    p.gamma = Eigen::Vector3d(0.5, 0.5, 0.5);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss;
    MtlDataset ds;
    ds.dim = 3;
    for (int k = 0; k < 2; ++k) {
        TaskData t;
        t.name = "task" + std::to_string(k);
        for (int i = 0; i < 4 + k; ++i) {
            Sample z;
            z.x = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
            z.y = k == 0 ? z.x.dot(p.thetas[0]) : gauss(rng);
            t.train.push_back(std::move(z));
        }
        ds.tasks.push_back(std::move(t));
    }

    TrainWeights sigma = TrainWeights::ones(ds);
    double manual = 0.0;
    for (int k = 0; k < 2; ++k) {
        double acc = 0.0;
        for (int i = 0; i < ds.train_size(k); ++i)
            acc += sample_loss(spec, p, k, ds.tasks[k].train[i]);
        manual += acc / ds.train_size(k) + reg_value_grad_hess(spec, p, k).value;
    }
    CHECK(objective(spec, p, ds, sigma) == Catch::Approx(manual).epsilon(1e-14));

    // All-zero weights leave only the coupling penalties.
    TrainWeights off = sigma;
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < ds.train_size(k); ++i) off.set(k, i, 0.0);
    double reg_only = reg_value_grad_hess(spec, p, 0).value + reg_value_grad_hess(spec, p, 1).value;
    CHECK(objective(spec, p, ds, off) == Catch::Approx(reg_only).epsilon(1e-14));

    // With theta_0 = gamma and zero residuals, task 0 contributes nothing.
    MtlParams q = p;
    q.gamma = p.thetas[0];
    TrainWeights only0 = off;
    for (int i = 0; i < ds.train_size(0); ++i) only0.set(0, i, 1.0);
    double expect = reg_value_grad_hess(spec, q, 1).value;
    CHECK(objective(spec, q, ds, only0) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("zeroing one weight equals deleting the sample at fixed normalization", "[model]") {
    ModelSpec spec = ModelSpec::make(ModelKind::soft_logistic, 2, 3, 0.4);
    MtlDataset ds = mtif::testing::make_classification_toy(2, 6, 2, 3, 19);
    MtlParams p = MtlParams::zeros(spec);
    p.thetas[0] = Eigen::Vector3d(0.2, -0.4, 0.6);
    p.thetas[1] = Eigen::Vector3d(-1.0, 0.3, 0.1);
    p.gamma = Eigen::Vector3d(0.1, 0.1, 0.1);

    TrainWeights sigma = TrainWeights::ones(ds);
    sigma.set(1, 3, 0.0);

    MtlDataset reduced = ds;
    reduced.tasks[1].train.erase(reduced.tasks[1].train.begin() + 3);
    std::vector<int> denoms = ds.train_sizes();  // keep the original 1/n_k

    CHECK(objective(spec, p, ds, sigma) ==
          Catch::Approx(objective(spec, p, reduced, TrainWeights::ones(reduced), &denoms))
              .epsilon(1e-14));
}

TEST_CASE("objective is invariant to within-task sample order", "[model]") {
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 1, 4, 1.0);
    MtlDataset ds = mtif::testing::make_regression_toy(1, 9, 2, 4, 23);
    MtlParams p = MtlParams::zeros(spec);
    p.thetas[0] = Eigen::Vector4d(0.5, 1.0, -0.5, 0.25);

    MtlDataset shuffled = ds;
    std::reverse(shuffled.tasks[0].train.begin(), shuffled.tasks[0].train.end());
    CHECK(objective(spec, p, ds, TrainWeights::ones(ds)) ==
          Catch::Approx(objective(spec, p, shuffled, TrainWeights::ones(shuffled)))
              .epsilon(1e-14));
}

TEST_CASE("pack and unpack are inverse", "[model]") {
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 3, 2, 1.0);
    MtlParams p = MtlParams::zeros(spec);
    p.thetas[0] << 1, 2;
    p.thetas[1] << 3, 4;
    p.thetas[2] << 5, 6;
    p.gamma << 7, 8;

    Eigen::VectorXd w = p.pack();
    REQUIRE(w.size() == 8);
    CHECK(w[0] == 1.0);
    CHECK(w[5] == 6.0);
    CHECK(w[6] == 7.0);

    MtlParams back = MtlParams::unpack(spec, w);
    for (int k = 0; k < 3; ++k) CHECK(back.thetas[k] == p.thetas[k]);
    CHECK(back.gamma == p.gamma);
    CHECK_THROWS_AS(MtlParams::unpack(spec, Eigen::VectorXd::Zero(7)), DimMismatch);
}

TEST_CASE("model spec validation", "[model]") {
    CHECK_THROWS_AS(ModelSpec::make(ModelKind::ridge_linear, 2, 3, 0.0).validate(),
                    SingularSystem);
    CHECK_THROWS_AS(ModelSpec::make(ModelKind::ridge_linear, 2, 3, -1.0).validate(),
                    SingularSystem);
    CHECK_THROWS_AS(ModelSpec::make(ModelKind::ridge_linear, 0, 3, 1.0).validate(),
                    InvalidConfig);
    CHECK_THROWS_AS(ModelSpec::make(ModelKind::ridge_linear, 2, 0, 1.0).validate(),
                    InvalidConfig);
    CHECK_NOTHROW(ModelSpec::make(ModelKind::soft_logistic, 2, 3, 0.5).validate());
}

TEST_CASE("dimension and task index guards", "[model]") {
    ModelSpec spec = ModelSpec::make(ModelKind::ridge_linear, 2, 3, 1.0);
    MtlParams p = MtlParams::zeros(spec);
    Sample bad{Eigen::Vector2d(1.0, 2.0), 0.0};
    CHECK_THROWS_AS(sample_loss(spec, p, 0, bad), DimMismatch);
    Sample ok{Eigen::Vector3d(1.0, 2.0, 3.0), 0.0};
    CHECK_THROWS_AS(sample_loss(spec, p, 5, ok), InvalidTask);
    CHECK_THROWS_AS(sample_grad(spec, p, -1, ok), InvalidTask);
}
