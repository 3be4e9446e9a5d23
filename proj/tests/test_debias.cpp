#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "drum/debias.hpp"
#include "drum/rng.hpp"
#include "drum/simgen.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

using namespace drum;
using namespace drum::debias;
using core::GenKind;
using core::Generator;
using core::OutcomeModel;
using nnet::Activation;

namespace {

Mat gaussian(long r, long c, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    Rng rng(seed, "db-test");
    Mat m(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) m(i, j) = rng.normal(mean, sd);
    return m;
}

// Parallel composition with a scaled second branch: g(u) = f(u) + delta * h(u),
// exact for single-hidden-layer relu nets.
OutcomeModel combine(const OutcomeModel& f, const OutcomeModel& h, double delta) {
    OutcomeModel out = f;
    long nf = f.net.weights[0].rows(), nh = h.net.weights[0].rows();
    out.net = nnet::net_new({f.net.input_dim(), static_cast<int>(nf + nh), 1},
                            {Activation::relu, Activation::identity}, 0);
    out.net.weights[0].topRows(nf) = f.net.weights[0];
    out.net.weights[0].bottomRows(nh) = h.net.weights[0];
    out.net.biases[0].head(nf) = f.net.biases[0];
    out.net.biases[0].tail(nh) = h.net.biases[0];
    out.net.weights[1].leftCols(nf) = f.net.weights[1];
    out.net.weights[1].rightCols(nh) = delta * h.net.weights[1];
    out.net.biases[1](0) = f.net.biases[1](0) + delta * h.net.biases[1](0);
    return out;
}

OutcomeModel random_outcome(int d_X, int d_A, int hidden, std::uint64_t seed) {
    OutcomeModel f;
    f.d_X = d_X;
    f.d_A = d_A;
    f.net = nnet::net_new({d_X + d_A, hidden, 1}, {Activation::relu, Activation::identity},
                          seed);
    // spread the output layer so values are O(1)
    f.net.weights[1] *= 2.0;
    return f;
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

}  // namespace

TEST_CASE("fold plans partition both populations") {
    auto plan = make_folds(6, 9, 3, 17);
    for (const auto& f : plan.source_folds) CHECK(f.size() == 2);
    std::set<long> seen;
    for (const auto& f : plan.source_folds) seen.insert(f.begin(), f.end());
    CHECK(seen.size() == 6);

    auto plan7 = make_folds(7, 7, 3, 18);
    std::multiset<std::size_t> sizes;
    for (const auto& f : plan7.source_folds) sizes.insert(f.size());
    CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});

    CHECK_THROWS_AS(make_folds(2, 9, 3, 1), ConfigError);
    CHECK_THROWS_AS(make_folds(9, 2, 3, 1), ConfigError);
}

TEST_CASE("weight normalization: unit mean and clipped maximum") {
    Rng rng(19, "w");
    Vec w(200);
    for (int i = 0; i < 200; ++i) w(i) = std::exp(rng.normal(0.0, 1.5));
    w(0) = 500.0;  // force the clip to matter
    Vec out = normalize_weights(w, 20.0);
    CHECK(std::abs(out.mean() - 1.0) < 1e-12);
    CHECK(out.maxCoeff() <= 20.0 * (1.0 + 1e-12));
    CHECK(out.minCoeff() > 0.0);
}

TEST_CASE("density ratio on identical populations concentrates near one") {
    Mat Xs = gaussian(1500, 2, 21);
    Mat As = gaussian(1500, 1, 22);
    Mat Xt = gaussian(1500, 2, 23);
    Mat At = gaussian(1500, 1, 24);
    DensityRatioHp hp;
    hp.lr = 1e-3;
    hp.epochs = 40;
    hp.seed = 25;
    auto model = fit_density_ratio(Xs, As, Xt, At, hp);
    Vec w = normalize_weights(model.raw_weights(Xs, As), hp.m_omega);
    CHECK(std::abs(w.mean() - 1.0) < 1e-12);
    long in_band = 0;
    for (long i = 0; i < w.size(); ++i) in_band += w(i) >= 0.5 && w(i) <= 2.0;
    CHECK(static_cast<double>(in_band) / static_cast<double>(w.size()) >= 0.9);
}

TEST_CASE("density ratio recovers the gaussian log-ratio slope") {
    // source a ~ N(0,1), synthetic a ~ N(1,1): log omega(a) = a - 1/2
    Mat Xs = gaussian(4000, 1, 26);
    Mat As = gaussian(4000, 1, 27);
    Mat Xt = gaussian(4000, 1, 28);
    Mat At = gaussian(4000, 1, 29, 1.0, 1.0);
    DensityRatioHp hp;
    hp.lr = 1e-2;
    hp.epochs = 120;
    hp.hidden = {};  // single sigmoid unit: the true log-odds are linear
    hp.m_omega = 1e9;
    hp.seed = 30;
    auto model = fit_density_ratio(Xs, As, Xt, At, hp);

    std::vector<double> grid, logs;
    for (double a = -2.0; a <= 2.0; a += 0.1) {
        Mat x = Mat::Zero(1, 1), av(1, 1);
        av << a;
        logs.push_back(std::log(model.raw_weights(x, av)(0)));
        grid.push_back(a);
    }
    double slope = fit_slope(grid, logs);
    CHECK(slope > 0.8);
    CHECK(slope < 1.2);
}

TEST_CASE("zero residuals kill the correction term and its gradients") {
    auto f = random_outcome(2, 1, 8, 31);
    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 1;
    gen.d_X = 2;
    gen.d_A = 1;
    gen.net = nnet::net_new({1, 8, 1}, {Activation::relu, Activation::identity}, 32);

    Mat Xt = gaussian(50, 2, 33);
    Mat Xs = gaussian(80, 2, 34);
    Vec zeros = Vec::Zero(80), ones = Vec::Ones(80);
    double deb = debiased_objective(f, gen, Xt, Xs, zeros, ones, 32, 35);
    double plug = plugin_objective(f, gen, Xt, 32, 35);
    CHECK(deb == plug);

    // gradient contribution of the correction is identically zero
    nnet::NetGrads grads = nnet::zero_grads(gen.net);
    core::DMeanFn corr = [&](long, double) { return 0.0; };
    core::mc_mean_rows(f, gen, Xs, 32, 36, false, &corr, &grads);
    CHECK(grads.squared_norm() == 0.0);
}

TEST_CASE("zero weights reduce the debiased objective to the plug-in objective") {
    auto f = random_outcome(2, 1, 8, 37);
    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 1;
    gen.d_X = 2;
    gen.d_A = 1;
    gen.net = nnet::net_new({1, 8, 1}, {Activation::relu, Activation::identity}, 38);
    Mat Xt = gaussian(40, 2, 39);
    Mat Xs = gaussian(60, 2, 40);
    Vec resid = gaussian(60, 1, 41).col(0);
    CHECK(debiased_objective(f, gen, Xt, Xs, resid, Vec::Zero(60), 32, 42) ==
          plugin_objective(f, gen, Xt, 32, 42));
}

TEST_CASE("a known constant bias shows up in the correction term mean") {
    auto fbar = random_outcome(2, 1, 8, 43);
    auto fhat = fbar;
    fhat.net.biases[1](0) += 0.3;  // f_hat = f_bar + 0.3

    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 1;
    gen.d_X = 2;
    gen.d_A = 1;
    gen.net = nnet::net_new({1, 8, 1}, {Activation::relu, Activation::identity}, 44);

    const long n = 4000;
    Mat Xs = gaussian(n, 2, 45);
    Mat As = gaussian(n, 1, 46);
    Rng noise(47, "bias-noise");
    Vec Y = fbar.eval(Xs, As);
    const double eta_sd = 0.1;
    for (long i = 0; i < n; ++i) Y(i) += eta_sd * noise.normal();
    Vec resid = Y - fhat.eval(Xs, As);  // eta - 0.3
    Vec ones = Vec::Ones(n);

    std::uint64_t key = 48;
    Vec mu = core::mc_mean_rows(fhat, gen, Xs, 64, key, true);
    double correction = 2.0 * (ones.array() * mu.array() * resid.array()).mean();
    double expected = -2.0 * 0.3 * mu.mean();
    double se = 2.0 * eta_sd * std::sqrt(mu.array().square().mean() / n);
    CHECK(std::abs(correction - expected) < 3.0 * se + 1e-9);
}

TEST_CASE("orthogonality: debiased objective error is second order in nuisance error") {
    // exact construction: the generator atoms double as the source A values, the
    // density ratio is identically one, and outcomes carry no noise
    const int m = 64, L = 64;
    auto fbar = random_outcome(2, 8, 8, 49);
    auto h = random_outcome(2, 8, 8, 50);

    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 2;
    gen.d_X = 2;
    gen.d_A = 8;
    gen.net = nnet::net_new({2, 8, 8}, {Activation::relu, Activation::identity}, 51);

    Mat Xt = gaussian(m, 2, 52);
    std::uint64_t eps_key = 53;
    Rng panel_rng(eps_key, "panel");
    Mat panel(L, 2);
    for (int l = 0; l < L; ++l)
        for (int j = 0; j < 2; ++j) panel(l, j) = panel_rng.normal();
    Mat atoms = gen.sample(nullptr, panel);

    // source rows: all (x_i, atom_l) pairs with exact outcomes
    Mat Xs(m * L, 2), As(m * L, 8);
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < L; ++l) {
            Xs.row(i * L + l) = Xt.row(i);
            As.row(i * L + l) = atoms.row(l);
        }
    Vec Y = fbar.eval(Xs, As);
    Vec ones = Vec::Ones(m * L);

    double oracle = plugin_objective(fbar, gen, Xt, L, eps_key);
    std::vector<double> log_d, log_dev_deb, log_dev_plug;
    for (double delta : {0.05, 0.1, 0.2, 0.4}) {
        auto fhat = combine(fbar, h, delta);
        fhat.d_X = 2;
        fhat.d_A = 8;
        Vec resid = Y - fhat.eval(Xs, As);
        double deb = debiased_objective(fhat, gen, Xt, Xs, resid, ones, L, eps_key);
        double plug = plugin_objective(fhat, gen, Xt, L, eps_key);
        log_d.push_back(std::log(delta));
        log_dev_deb.push_back(std::log(std::abs(deb - oracle)));
        log_dev_plug.push_back(std::log(std::abs(plug - oracle)));
    }
    double slope_deb = fit_slope(log_d, log_dev_deb);
    double slope_plug = fit_slope(log_d, log_dev_plug);
    CHECK(slope_deb >= 1.7);
    CHECK(slope_plug <= 1.3);
}

TEST_CASE("pseudo outcomes: tower property, scaling, and fold discipline") {
    const long n = 3000, N = 1000;
    auto oracle = random_outcome(3, 2, 8, 54);
    Mat Xs = gaussian(n, 3, 55);
    Mat As = gaussian(n, 2, 56);
    Rng noise(57, "tower");
    Vec Y = oracle.eval(Xs, As);
    const double eta_sd = 0.3;
    for (long i = 0; i < n; ++i) Y(i) += eta_sd * noise.normal();
    Mat Xt = gaussian(N, 3, 58);

    auto folds = make_folds(n, N, 3, 59);
    std::vector<OutcomeModel> f_fold{oracle, oracle, oracle};

    // constant classifier p = 1/2: raw weights are exactly one
    DensityRatioModel flat;
    flat.clip_bound = 20.0;
    flat.classifier = nnet::net_new({5, 1}, {Activation::sigmoid}, 0);
    flat.classifier.weights[0].setZero();
    flat.classifier.biases[0].setZero();
    std::vector<DensityRatioModel> omega_fold{flat, flat, flat};

    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 2;
    gen.d_X = 3;
    gen.d_A = 2;
    gen.net = nnet::net_new({2, 8, 2}, {Activation::relu, Activation::identity}, 60);
    std::vector<Generator> gen_fold{gen, gen, gen};

    auto pseudo = pseudo_outcomes(folds, f_fold, omega_fold, gen_fold, Xs, As, Y, Xt, 20.0, 32,
                                  61);
    CHECK(pseudo.r == doctest::Approx(3.0));
    CHECK(pseudo.X.rows() == n + N);

    double mean_f = 0.0;
    for (long i = 0; i < n; ++i) mean_f += pseudo.F(i);
    mean_f /= static_cast<double>(n);
    double se = eta_sd / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean_f) < 3.0 * se);
}

TEST_CASE("pseudo outcomes with n = N give r = 1 and zero source rows under oracle fit") {
    const long n = 300;
    auto oracle = random_outcome(2, 1, 6, 62);
    Mat Xs = gaussian(n, 2, 63);
    Mat As = gaussian(n, 1, 64);
    Vec Y = oracle.eval(Xs, As);  // zero noise
    Mat Xt = gaussian(n, 2, 65);

    auto folds = make_folds(n, n, 3, 66);
    DensityRatioModel flat;
    flat.clip_bound = 20.0;
    flat.classifier = nnet::net_new({3, 1}, {Activation::sigmoid}, 0);
    flat.classifier.weights[0].setZero();
    flat.classifier.biases[0].setZero();
    Generator gen;
    gen.kind = GenKind::unconstrained;
    gen.q = 1;
    gen.d_X = 2;
    gen.d_A = 1;
    gen.net = nnet::net_new({1, 4, 1}, {Activation::relu, Activation::identity}, 67);

    auto pseudo = pseudo_outcomes(folds, {oracle, oracle, oracle}, {flat, flat, flat},
                                  {gen, gen, gen}, Xs, As, Y, Xt, 20.0, 16, 68);
    CHECK(pseudo.r == 1.0);
    for (long i = 0; i < n; ++i) CHECK(std::abs(pseudo.F(i)) < 1e-12);
}

TEST_CASE("final regression fits constants and recovers planted structure") {
    PseudoOutcomeSet constant;
    constant.X = gaussian(400, 3, 69);
    constant.F = Vec::Constant(400, 0.9);
    constant.r = 1.0;
    constant.is_source.assign(400, 1);
    FinalRegressionHp hp;
    hp.lr = 3e-3;
    hp.epochs = 200;
    hp.hidden = {32};
    hp.seed = 70;
    auto pred = fit_debiased_predictor(constant, hp, Task::regression);
    Vec out = pred.predict(constant.X);
    CHECK(std::abs(out.mean() - 0.9) < 0.01);
    CHECK((out.array() - 0.9).square().mean() < 0.01);

    // target rows carry m(x) = x_1 exactly, source rows mean-zero noise
    PseudoOutcomeSet planted;
    const long n = 1500, N = 1500;
    planted.X = gaussian(n + N, 3, 71);
    planted.F.resize(n + N);
    planted.r = 1.0;
    planted.is_source.assign(n + N, 0);
    Rng noise(72, "planted");
    for (long i = 0; i < n; ++i) {
        planted.F(i) = 0.3 * noise.normal();
        planted.is_source[i] = 1;
    }
    for (long j = 0; j < N; ++j) planted.F(n + j) = planted.X(n + j, 0);
    auto m = fit_debiased_predictor(planted, hp, Task::regression);
    Mat Xh = gaussian(500, 3, 73);
    Vec ph = m.predict(Xh);
    Vec truth = Xh.col(0);
    double corr = (ph.array() - ph.mean()).matrix().dot((truth.array() - truth.mean()).matrix()) /
                  std::sqrt((ph.array() - ph.mean()).square().sum() *
                            (truth.array() - truth.mean()).square().sum());
    CHECK(corr > 0.9);
}

TEST_CASE("drum_debiased is deterministic given seeds") {
    auto spec = simgen::make_setting(simgen::Setting::I, 74);
    spec.n = 240;
    spec.N = 120;
    auto src = simgen::gen_source(spec);
    auto tgt = simgen::gen_target(spec);

    DrumDebiasedHp hp;
    hp.outcome = {1e-3, 4, {16}, 64, 0};
    hp.worstcase = {2, 8, 1e-3, 4, {16}, 64, 0};
    hp.density_ratio = {1e-3, 4, {16}, 64, 20.0, 0};
    hp.final_regression = {1e-3, 4, {16}, 64, 0};
    hp.fold_generator.unconstrained = hp.worstcase;
    hp.L = 8;
    hp.seed = 75;

    auto a = drum_debiased(src.X, src.A, src.Y, tgt.X, GenKind::unconstrained, hp,
                           Task::regression);
    auto b = drum_debiased(src.X, src.A, src.Y, tgt.X, GenKind::unconstrained, hp,
                           Task::regression);
    nlohmann::json ja, jb;
    nnet::to_json(ja, a.predictor.net);
    nnet::to_json(jb, b.predictor.net);
    CHECK(sha256_hex(ja.dump()) == sha256_hex(jb.dump()));
}

TEST_CASE("irrelevant missing covariates: debiased and plug-in agree") {
    // Y depends on X only; A is independent noise, so there is nothing to correct
    const long n = 1500, N = 600;
    Mat Xs = gaussian(n, 3, 76);
    Mat As = gaussian(n, 2, 77);
    Rng noise(78, "irrel");
    Vec Y(n);
    for (long i = 0; i < n; ++i) Y(i) = Xs(i, 0) + 0.1 * noise.normal();
    Mat Xt = gaussian(N, 3, 79);

    DrumDebiasedHp hp;
    hp.outcome = {1e-3, 60, {64}, 128, 0};
    hp.worstcase = {2, 32, 1e-3, 60, {32}, 128, 0};
    hp.density_ratio = {1e-3, 40, {32}, 128, 20.0, 0};
    hp.final_regression = {1e-3, 80, {64}, 128, 0};
    hp.fold_generator.unconstrained = hp.worstcase;
    hp.L = 32;
    hp.seed = 80;

    auto result = drum_debiased(Xs, As, Y, Xt, GenKind::unconstrained, hp, Task::regression);
    core::RobustPredictor plug{result.outcome, result.preliminary_gen, 64, 81};
    Vec deb_pred = result.predictor.predict(Xt);
    Vec plug_pred = core::predict(plug, Xt);
    CHECK((deb_pred - plug_pred).squaredNorm() / static_cast<double>(N) < 0.05);
}
