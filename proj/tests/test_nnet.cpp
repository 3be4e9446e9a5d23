#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "drum/nnet.hpp"
#include "drum/rng.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

using namespace drum;
using namespace drum::nnet;

namespace {

DenseNet small_random_net(const std::vector<int>& widths, std::vector<Activation> acts,
                          std::uint64_t seed) {
    return net_new(widths, acts, seed);
}

Mat random_mat(long r, long c, std::uint64_t seed) {
    Rng rng(seed, "test-data");
    Mat m(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("smallest net computes an affine map") {
    auto net = net_new({2, 1}, {Activation::identity}, 0);
    Mat x1(1, 2), x2(1, 2), sum(1, 2);
    x1 << 1.0, 0.0;
    x2 << 0.0, 1.0;
    sum << 1.0, 1.0;
    double b = net.biases[0](0);
    double f1 = forward(net, x1)(0, 0), f2 = forward(net, x2)(0, 0);
    double fsum = forward(net, sum)(0, 0);
    CHECK(fsum == doctest::Approx(f1 + f2 - b).epsilon(1e-12));
}

TEST_CASE("stage-1 architecture builds and respects shapes") {
    auto net = net_new({19, 128, 128, 1},
                       {Activation::relu, Activation::relu, Activation::sigmoid}, 7);
    CHECK(net.weights[0].rows() == 128);
    CHECK(net.weights[0].cols() == 19);
    CHECK(net.weights[2].rows() == 1);
    Mat batch = random_mat(5, 19, 1);
    Mat out = forward(net, batch);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 1);
    CHECK(out.allFinite());
}

TEST_CASE("same widths and seed give bitwise-identical parameters") {
    auto a = net_new({4, 8, 2}, {Activation::relu, Activation::identity}, 42);
    auto b = net_new({4, 8, 2}, {Activation::relu, Activation::identity}, 42);
    for (int k = 0; k < a.layer_count(); ++k) {
        CHECK(a.weights[k] == b.weights[k]);
        CHECK(a.biases[k] == b.biases[k]);
    }
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(net_new({3}, {}, 0), ConfigError);
    CHECK_THROWS_AS(net_new({3, 0}, {Activation::relu}, 0), ConfigError);
    CHECK_THROWS_AS(net_new({3, 2}, {}, 0), ConfigError);
}

TEST_CASE("identity net with unit weights passes input through") {
    auto net = net_new({3, 3}, {Activation::identity}, 0);
    net.weights[0] = Mat::Identity(3, 3);
    net.biases[0].setZero();
    Mat x = random_mat(4, 3, 2);
    CHECK((forward(net, x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single relu unit kinks at zero") {
    auto net = net_new({1, 1}, {Activation::relu}, 0);
    net.weights[0](0, 0) = 1.0;
    net.biases[0](0) = -1.0;
    Mat x(1, 1);
    x << 0.5;
    CHECK(forward(net, x)(0, 0) == 0.0);
    x << 2.0;
    CHECK(forward(net, x)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("sigmoid head stays inside (0,1)") {
    auto net = net_new({2, 4, 1}, {Activation::relu, Activation::sigmoid}, 3);
    Mat x = 100.0 * random_mat(20, 2, 4);
    Mat out = forward(net, x);
    for (long i = 0; i < out.rows(); ++i) {
        CHECK(out(i, 0) > 0.0);
        CHECK(out(i, 0) < 1.0);
    }
}

TEST_CASE("forward rejects non-finite input") {
    auto net = net_new({2, 1}, {Activation::identity}, 0);
    Mat x(1, 2);
    x << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, x), InputError);
}

TEST_CASE("forward is side-effect free") {
    auto net = net_new({3, 5, 1}, {Activation::relu, Activation::identity}, 11);
    Mat x = random_mat(6, 3, 5);
    Mat a = forward(net, x), b = forward(net, x);
    CHECK(a == b);
}

TEST_CASE("convex descent on a linear unit") {
    auto net = net_new({1, 1}, {Activation::identity}, 1);
    net.weights[0](0, 0) = 1.0;
    net.biases[0](0) = 0.5;
    auto opt = adam_new(net, 1e-3);
    Mat x(1, 1), y(1, 1);
    x << 1.0;
    y << 0.0;
    LossSpec mse;
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        double loss = train_step(net, x, y, mse, opt);
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("gradient clipping rescales the global norm") {
    auto net = net_new({2, 1}, {Activation::identity}, 0);
    NetGrads g = zero_grads(net);
    g.w[0] << 6.0, 8.0;  // norm 10
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(10.0));
    clip_global_norm(g, 2.0);
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(2.0));
    // below the threshold nothing changes
    clip_global_norm(g, 5.0);
    CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(2.0));
}

TEST_CASE("weighted mse with all-zero weights leaves parameters unchanged") {
    auto net = net_new({2, 3, 1}, {Activation::relu, Activation::identity}, 9);
    auto before = net;
    auto opt = adam_new(net, 1e-2);
    Mat x = random_mat(8, 2, 6), y = random_mat(8, 1, 7);
    Vec w = Vec::Zero(8);
    LossSpec loss;
    loss.kind = LossKind::weighted_mse;
    loss.weights = &w;
    double v = train_step(net, x, y, loss, opt);
    CHECK(v == 0.0);
    for (int k = 0; k < net.layer_count(); ++k) {
        CHECK(net.weights[k] == before.weights[k]);
        CHECK(net.biases[k] == before.biases[k]);
    }
}

TEST_CASE("negative weights are rejected") {
    auto net = net_new({2, 1}, {Activation::identity}, 9);
    auto opt = adam_new(net, 1e-2);
    Mat x = random_mat(4, 2, 6), y = random_mat(4, 1, 7);
    Vec w = Vec::Constant(4, -1.0);
    LossSpec loss;
    loss.kind = LossKind::weighted_mse;
    loss.weights = &w;
    CHECK_THROWS_AS(train_step(net, x, y, loss, opt), ConfigError);
}

TEST_CASE("adam weight decay shrinks weights monotonically under zero data gradient") {
    auto net = net_new({2, 2, 1}, {Activation::relu, Activation::identity}, 13);
    auto opt = adam_new(net, 1e-2, /*weight_decay=*/0.1);
    Mat x = random_mat(4, 2, 6), y = random_mat(4, 1, 7);
    Vec w = Vec::Zero(4);
    LossSpec loss;
    loss.kind = LossKind::weighted_mse;
    loss.weights = &w;
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 50; ++i) {
        train_step(net, x, y, loss, opt);
        double norm = 0;
        for (int k = 0; k < net.layer_count(); ++k) norm += net.weights[k].squaredNorm();
        CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("divergence error carries the step index") {
    auto net = net_new({1, 1}, {Activation::identity}, 0);
    auto opt = adam_new(net, 1e-3);
    Mat x(1, 1), y(1, 1);
    x << 1.0;
    y << 0.0;
    LossSpec loss;
    loss.kind = LossKind::custom;
    loss.custom = [](const Mat& out, const Mat&, Mat& d) {
        d = Mat::Zero(out.rows(), out.cols());
        return std::numeric_limits<double>::quiet_NaN();
    };
    train_step(net, x, y, LossSpec{}, opt);  // one clean step first
    try {
        train_step(net, x, y, loss, opt);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.step == 1);
    }
}

TEST_CASE("grad_check: random relu net under mse") {
    auto net = small_random_net({3, 4, 1}, {Activation::relu, Activation::identity}, 17);
    Mat x = random_mat(6, 3, 8), y = random_mat(6, 1, 9);
    CHECK(grad_check(net, x, y, LossSpec{}) < 1e-4);
}

TEST_CASE("grad_check: linear net under mse is near machine precision") {
    auto net = small_random_net({3, 1}, {Activation::identity}, 19);
    Mat x = random_mat(6, 3, 10), y = random_mat(6, 1, 11);
    CHECK(grad_check(net, x, y, LossSpec{}) < 1e-7);
}

TEST_CASE("grad_check: bce with sigmoid head") {
    auto net = small_random_net({3, 4, 1}, {Activation::relu, Activation::sigmoid}, 23);
    Mat x = random_mat(6, 3, 12);
    Mat y(6, 1);
    y << 1, 0, 1, 1, 0, 0;
    LossSpec loss;
    loss.kind = LossKind::bce;
    CHECK(grad_check(net, x, y, loss) < 1e-4);
}

TEST_CASE("gradient correctness across loss kinds on 20 random nets") {
    for (int rep = 0; rep < 20; ++rep) {
        std::uint64_t seed = 1000 + rep;
        Rng shape_rng(seed, "shape");
        int d_in = 2 + static_cast<int>(shape_rng.below(3));
        int hidden = 3 + static_cast<int>(shape_rng.below(4));
        Mat x = random_mat(5, d_in, seed * 7 + 1);

        auto reg = small_random_net({d_in, hidden, 1}, {Activation::relu, Activation::identity},
                                    seed);
        Mat y = random_mat(5, 1, seed * 7 + 2);
        CHECK(grad_check(reg, x, y, LossSpec{}) < 1e-4);

        Vec w(5);
        for (int i = 0; i < 5; ++i) w(i) = shape_rng.uniform01() + 0.1;
        LossSpec wmse;
        wmse.kind = LossKind::weighted_mse;
        wmse.weights = &w;
        CHECK(grad_check(reg, x, y, wmse) < 1e-4);

        auto clf = small_random_net({d_in, hidden, 1}, {Activation::relu, Activation::sigmoid},
                                    seed + 500);
        Mat yb(5, 1);
        for (int i = 0; i < 5; ++i) yb(i, 0) = shape_rng.below(2) ? 1.0 : 0.0;
        LossSpec bce;
        bce.kind = LossKind::bce;
        CHECK(grad_check(clf, x, yb, bce) < 1e-4);

        LossSpec custom;
        custom.kind = LossKind::custom;
        custom.custom = [](const Mat& out, const Mat& t, Mat& d) {
            // quartic penalty, gradient checked like the rest
            Mat r = out - t;
            d = 4.0 * r.array().cube().matrix() / static_cast<double>(out.rows());
            return r.array().square().square().sum() / static_cast<double>(out.rows());
        };
        CHECK(grad_check(reg, x, y, custom) < 1e-4);
    }
}

TEST_CASE("training is deterministic given seed, data, and hyperparameters") {
    Mat x = random_mat(64, 3, 21), y = random_mat(64, 1, 22);
    auto run = [&]() {
        auto net = net_new({3, 16, 1}, {Activation::relu, Activation::identity}, 77);
        auto opt = adam_new(net, 1e-3);
        fit(net, x, y, LossSpec{}, opt, 5, 16, 99);
        return net;
    };
    auto a = run(), b = run();
    for (int k = 0; k < a.layer_count(); ++k) {
        CHECK(a.weights[k] == b.weights[k]);
        CHECK(a.biases[k] == b.biases[k]);
    }
}

TEST_CASE("serialization round-trips exactly") {
    auto net = net_new({4, 6, 2}, {Activation::relu, Activation::sigmoid}, 31);
    nlohmann::json j;
    to_json(j, net);
    std::string blob = j.dump();
    DenseNet back;
    from_json(nlohmann::json::parse(blob), back);
    Mat x = random_mat(5, 4, 14);
    CHECK(forward(net, x) == forward(back, x));
}
