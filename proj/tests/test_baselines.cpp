#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "drum/baselines.hpp"
#include "drum/rng.hpp"
#include "drum/simgen.hpp"

#include <algorithm>
#include <cmath>

using namespace drum;
using namespace drum::baselines;

namespace {

Mat gaussian(long r, long c, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    Rng rng(seed, "bl-test");
    Mat m(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) m(i, j) = rng.normal(mean, sd);
    return m;
}

double mse(const Vec& a, const Vec& b) {
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("effective sample size") {
    CHECK(ess(Vec::Ones(50)) == doctest::Approx(50.0));
    Vec onehot = Vec::Zero(10);
    onehot(3) = 5.0;
    CHECK(ess(onehot) == doctest::Approx(1.0));
    Vec w(3);
    w << 1, 1, 2;
    CHECK(ess(w) == doctest::Approx(16.0 / 6.0));
    CHECK_THROWS_AS(ess(Vec::Zero(4)), InputError);
}

TEST_CASE("erm recovers a noiseless linear signal") {
    Mat X = gaussian(2000, 3, 1);
    Vec Y = 3.0 * X.col(0);
    BaselineHp hp;
    hp.lr = 3e-3;
    hp.epochs = 100;
    hp.seed = 5;
    auto m = fit_erm(X, Y, hp, Task::regression);
    Mat Xh = gaussian(500, 3, 2);
    Vec Yh = 3.0 * Xh.col(0);
    CHECK(mse(m.predict(Xh), Yh) < 0.01);
}

TEST_CASE("erm on constant outcomes predicts the constant") {
    Mat X = gaussian(500, 3, 3);
    Vec Y = Vec::Constant(500, 1.7);
    BaselineHp hp;
    hp.lr = 3e-3;
    hp.epochs = 200;
    hp.hidden = {32};
    hp.seed = 6;
    auto m = fit_erm(X, Y, hp, Task::regression);
    Vec pred = m.predict(X);
    CHECK(std::abs(pred.mean() - 1.7) < 0.02);
    CHECK(mse(pred, Y) < 0.01);
}

TEST_CASE("baselines reject rows carrying extra columns") {
    Mat X = gaussian(100, 3, 7);
    Vec Y = X.col(0);
    BaselineHp hp;
    hp.epochs = 2;
    auto m = fit_erm(X, Y, hp, Task::regression);
    CHECK_THROWS_AS(m.predict(gaussian(10, 5, 8)), InputError);  // smells like X + A
}

TEST_CASE("chi-square robust loss basics") {
    Vec constant = Vec::Constant(7, 2.5);
    CHECK(chisq_robust_loss(constant, 0.75) == doctest::Approx(2.5));

    Rng rng(11, "dro");
    for (int rep = 0; rep < 30; ++rep) {
        Vec losses(16);
        for (int i = 0; i < 16; ++i) losses(i) = rng.uniform(0, 4);
        double mean = losses.mean();
        double robust = chisq_robust_loss(losses, 0.5);
        CHECK(robust >= mean - 1e-9);
    }
}

TEST_CASE("chi-square robust loss matches the simplex-grid oracle on two points") {
    Vec losses(2);
    losses << 0.0, 2.0;
    for (double rho : {0.1, 0.25, 0.5, 1.0}) {
        // brute force: max over p in the chi-square ball; the grid must resolve the
        // ball boundary finer than the comparison tolerance
        double step = rho == 0.5 ? 1e-3 : 1e-4;
        double best = -1e300;
        for (double p1 = 0.0; p1 <= 1.0 + 1e-12; p1 += step) {
            double p2 = 1.0 - p1;
            double div = 0.25 * ((2 * p1 - 1) * (2 * p1 - 1) + (2 * p2 - 1) * (2 * p2 - 1));
            if (div <= rho) best = std::max(best, p1 * losses(0) + p2 * losses(1));
        }
        CHECK(std::abs(chisq_robust_loss(losses, rho) - best) < 1e-3);
    }
}

TEST_CASE("chi-square robust loss is monotone in rho") {
    Rng rng(13, "mono");
    Vec losses(32);
    for (int i = 0; i < 32; ++i) losses(i) = rng.uniform(0, 3);
    double prev = -1e300;
    for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0, 1.5}) {
        double v = chisq_robust_loss(losses, rho);
        CHECK(v >= prev - 1e-9);
        prev = v;
    }
}

TEST_CASE("dro with rho = 0 collapses to erm") {
    Mat X = gaussian(600, 3, 17);
    Vec Y = X.col(0) - 0.5 * X.col(2);
    BaselineHp hp;
    hp.lr = 1e-3;
    hp.epochs = 20;
    hp.seed = 21;
    auto erm = fit_erm(X, Y, hp, Task::regression);
    auto dro = fit_chisq_dro(X, Y, 0.0, hp, Task::regression);
    for (int k = 0; k < erm.net.layer_count(); ++k) CHECK(erm.net.weights[k] == dro.net.weights[k]);
}

TEST_CASE("kernel mean matching: identical samples get flat weights") {
    Mat Xs = gaussian(300, 4, 23);
    Mat Xt = Xs;  // the exact same sample: the ratio is one
    auto w = kmm_weights(Xs, Xt);
    long in_band = 0;
    for (long i = 0; i < w.w.size(); ++i) in_band += w.w(i) >= 0.8 && w.w(i) <= 1.25;
    CHECK(static_cast<double>(in_band) / static_cast<double>(w.w.size()) >= 0.95);
    CHECK(w.ess / static_cast<double>(w.w.size()) > 0.9);
}

TEST_CASE("kernel mean matching: box and sum constraints hold to 1e-6") {
    Mat Xs = gaussian(200, 3, 25);
    Mat Xt = gaussian(150, 3, 26, 0.4, 1.2);
    auto w = kmm_weights(Xs, Xt);
    double m = 200.0, eps = (std::sqrt(m) - 1.0) / std::sqrt(m);
    CHECK(w.w.minCoeff() >= 0.0);
    CHECK(w.w.maxCoeff() <= 1000.0);
    CHECK(w.w.sum() >= m * (1.0 - eps) - 1e-6);
    CHECK(w.w.sum() <= m * (1.0 + eps) + 1e-6);
}

TEST_CASE("kernel mean matching matches a brute-force oracle on five points") {
    Mat Xs(5, 1), Xt(4, 1);
    Xs << -1.0, -0.3, 0.2, 0.9, 1.5;
    Xt << 0.8, 1.1, 1.4, 0.4;
    KmmOptions opts;
    opts.bandwidth = 1.0;
    auto sol = kmm_weights(Xs, Xt, opts);

    const double m = 5.0, eps = (std::sqrt(m) - 1.0) / std::sqrt(m);
    Mat K(5, 5);
    Vec kappa(5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j)
            K(i, j) = std::exp(-(Xs(i, 0) - Xs(j, 0)) * (Xs(i, 0) - Xs(j, 0)) / 2.0);
        double s = 0;
        for (int j = 0; j < 4; ++j)
            s += std::exp(-(Xs(i, 0) - Xt(j, 0)) * (Xs(i, 0) - Xt(j, 0)) / 2.0);
        kappa(i) = s * 5.0 / 4.0;
    }
    auto objective = [&](const Vec& w) { return 0.5 * w.dot(K * w) - kappa.dot(w); };
    auto feasible = [&](const Vec& w) {
        return w.minCoeff() >= -1e-12 && w.sum() >= m * (1 - eps) - 1e-9 &&
               w.sum() <= m * (1 + eps) + 1e-9;
    };

    // coarse exhaustive grid, then exhaustive per-coordinate refinement at 1e-2
    Vec best = Vec::Ones(5);
    double best_obj = objective(best);
    for (double a = 0; a <= 3.0; a += 0.5)
        for (double b = 0; b <= 3.0; b += 0.5)
            for (double c = 0; c <= 3.0; c += 0.5)
                for (double d = 0; d <= 3.0; d += 0.5)
                    for (double e = 0; e <= 3.0; e += 0.5) {
                        Vec w(5);
                        w << a, b, c, d, e;
                        if (feasible(w) && objective(w) < best_obj) {
                            best_obj = objective(w);
                            best = w;
                        }
                    }
    bool improved = true;
    while (improved) {
        improved = false;
        for (int i = 0; i < 5; ++i)
            for (double v = 0.0; v <= 4.0; v += 1e-2) {
                Vec w = best;
                w(i) = v;
                if (feasible(w) && objective(w) < best_obj - 1e-12) {
                    best_obj = objective(w);
                    best = w;
                    improved = true;
                }
            }
    }
    CHECK(std::abs(objective(sol.w) - best_obj) < 1e-3);
    CHECK(objective(sol.w) <= best_obj + 1e-3);
}

TEST_CASE("classifier weights: identical populations") {
    Mat Xs = gaussian(800, 4, 27);
    Mat Xt = gaussian(700, 4, 28);
    auto w = classifier_weights(Xs, Xt);
    CHECK(w.ess / 800.0 > 0.9);
    CHECK(std::abs(w.w.mean() - 1.0) < 1e-9);
}

TEST_CASE("classifier weights recover the analytic gaussian log-ratio slope") {
    // N(0,1) source vs N(1,1) target in 1-D: log ratio = x - 1/2
    Mat Xs = gaussian(4000, 1, 29);
    Mat Xt = gaussian(4000, 1, 30, 1.0, 1.0);
    auto w = classifier_weights(Xs, Xt);
    // regress log w on x over |x| <= 2 (the mean-1 rescale only shifts the intercept)
    std::vector<double> xs, ls;
    for (long i = 0; i < Xs.rows(); ++i)
        if (std::abs(Xs(i, 0)) <= 2.0 && w.w(i) > 0 && w.w(i) < 100) {
            xs.push_back(Xs(i, 0));
            ls.push_back(std::log(w.w(i)));
        }
    double mx = 0, ml = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        ml += ls[i];
    }
    mx /= xs.size();
    ml /= ls.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ls[i] - ml);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    double slope = num / den;
    CHECK(slope > 0.8);
    CHECK(slope < 1.2);
}

TEST_CASE("weighted erm with unit weights matches plain erm exactly") {
    Mat X = gaussian(400, 3, 31);
    Vec Y = X.col(1);
    BaselineHp hp;
    hp.lr = 1e-3;
    hp.epochs = 10;
    hp.seed = 33;
    auto erm = fit_erm(X, Y, hp, Task::regression);
    WeightVector ones;
    ones.w = Vec::Ones(400);
    ones.ess = 400;
    ones.method = "unit";
    auto werm = fit_weighted_erm(X, Y, ones, hp, Task::regression);
    for (int k = 0; k < erm.net.layer_count(); ++k)
        CHECK(erm.net.weights[k] == werm.net.weights[k]);
}

TEST_CASE("weights concentrated on half the data reproduce the half-sample fit") {
    Mat X = gaussian(1200, 3, 35);
    Rng noise(36, "halfnoise");
    Vec Y(1200);
    for (long i = 0; i < 1200; ++i)
        Y(i) = X(i, 0) + 0.5 * X(i, 1) + 0.3 * noise.normal();
    BaselineHp hp;
    hp.lr = 3e-3;
    hp.epochs = 200;
    hp.hidden = {32};
    hp.seed = 37;

    WeightVector half;
    half.w = Vec::Zero(1200);
    half.w.head(600).setConstant(2.0);  // mean 1, mass on the first half
    half.ess = ess(half.w);
    auto weighted = fit_weighted_erm(X, Y, half, hp, Task::regression);
    auto subsample = fit_erm(X.topRows(600), Y.head(600), hp, Task::regression);

    Mat Xh = gaussian(500, 3, 38);
    Rng hnoise(40, "holdnoise");
    Vec Yh(500);
    for (long i = 0; i < 500; ++i)
        Yh(i) = Xh(i, 0) + 0.5 * Xh(i, 1) + 0.3 * hnoise.normal();
    double a = mse(weighted.predict(Xh), Yh), b = mse(subsample.predict(Xh), Yh);
    CHECK(std::abs(a - b) / std::max(b, 1e-6) < 0.10);
}

TEST_CASE("weighted erm rejects bad weights") {
    Mat X = gaussian(50, 2, 39);
    Vec Y = X.col(0);
    BaselineHp hp;
    WeightVector w;
    w.w = Vec::Constant(50, -1.0);
    CHECK_THROWS_AS(fit_weighted_erm(X, Y, w, hp, Task::regression), ConfigError);
    w.w = Vec::Zero(50);
    CHECK_THROWS_AS(fit_weighted_erm(X, Y, w, hp, Task::regression), ConfigError);
}

TEST_CASE("mean imputation fills the source mean") {
    Mat Xs = gaussian(100, 2, 41);
    Vec Ys = Vec::LinSpaced(100, 0.0, 1.0);
    Mat Xt = gaussian(40, 2, 42);
    Vec imp = impute_pseudo_labels(Xs, Ys, Xt, Imputer::mean, 1);
    for (long i = 0; i < imp.size(); ++i) CHECK(imp(i) == doctest::Approx(Ys.mean()));
}

TEST_CASE("mice recovers an exactly linear outcome") {
    Mat Xs = gaussian(800, 4, 43);
    Vec beta(4);
    beta << 1.0, -2.0, 0.5, 0.0;
    Vec Ys = Xs * beta;
    Mat Xt = gaussian(300, 4, 44);
    Vec truth = Xt * beta;
    Vec imp = impute_pseudo_labels(Xs, Ys, Xt, Imputer::mice, 2);
    double ss_res = (imp - truth).squaredNorm();
    double ss_tot = (truth.array() - truth.mean()).square().sum();
    CHECK(1.0 - ss_res / ss_tot > 0.99);
}

TEST_CASE("forest imputation localizes a step function within one split") {
    Rng rng(45, "step");
    long n = 600;
    Mat Xs(n, 1);
    for (long i = 0; i < n; ++i) Xs(i, 0) = rng.uniform(-1.0, 1.0);
    Vec Ys(n);
    for (long i = 0; i < n; ++i) Ys(i) = Xs(i, 0) > 0.0 ? 1.0 : 0.0;
    // the forest cannot place the jump more precisely than the data gap around 0
    double lo = -1.0, hi = 1.0;
    for (long i = 0; i < n; ++i) {
        if (Xs(i, 0) <= 0.0) lo = std::max(lo, Xs(i, 0));
        if (Xs(i, 0) > 0.0) hi = std::min(hi, Xs(i, 0));
    }
    Mat Xt(200, 1);
    for (long i = 0; i < 200; ++i) Xt(i, 0) = rng.uniform(-1.0, 1.0);
    Vec imp = impute_pseudo_labels(Xs, Ys, Xt, Imputer::forest, 3);
    for (long i = 0; i < 200; ++i) {
        if (Xt(i, 0) < lo - 1e-9) CHECK(imp(i) < 0.2);
        if (Xt(i, 0) > hi + 1e-9) CHECK(imp(i) > 0.8);
    }
}

TEST_CASE("pseudolabel with an empty target equals the plain trainer") {
    Mat Xs = gaussian(300, 3, 47);
    Vec Ys = Xs.col(0);
    Mat Xt(0, 3);
    BaselineHp hp;
    hp.lr = 1e-3;
    hp.epochs = 8;
    hp.seed = 48;
    auto pooled = fit_pseudolabel(Xs, Ys, Xt, Imputer::mean, Trainer::erm, 0.25, hp,
                                  Task::regression);
    auto plain = fit_erm(Xs, Ys, hp, Task::regression);
    for (int k = 0; k < plain.net.layer_count(); ++k)
        CHECK(plain.net.weights[k] == pooled.net.weights[k]);
}

TEST_CASE("pseudolabel pooling with matched laws stays close to erm") {
    // linear truth so the mice imputer is an oracle for E[Y | X]
    Mat Xs = gaussian(1000, 4, 51);
    Mat Xt = gaussian(400, 4, 52);
    Vec beta(4);
    beta << 1.0, -0.5, 0.3, 0.0;
    Rng noise(53, "plnoise");
    Vec Ys = Xs * beta;
    for (long i = 0; i < Ys.size(); ++i) Ys(i) += 0.3 * noise.normal();

    BaselineHp hp;
    hp.lr = 1e-3;
    hp.epochs = 40;
    hp.seed = 54;
    auto erm = fit_erm(Xs, Ys, hp, Task::regression);
    auto pl = fit_pseudolabel(Xs, Ys, Xt, Imputer::mice, Trainer::erm, 0.25, hp,
                              Task::regression);

    Mat Xh = gaussian(600, 4, 55);
    Vec Yh = Xh * beta;
    for (long i = 0; i < Yh.size(); ++i) Yh(i) += 0.3 * noise.normal();
    double m_erm = mse(erm.predict(Xh), Yh);
    double m_pl = mse(pl.predict(Xh), Yh);
    CHECK(std::abs(m_erm - m_pl) / m_erm < 0.10);
}
