#include "drum/debias.hpp"
#include "drum/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace drum::debias {

using core::GenKind;
using core::Generator;
using core::OutcomeModel;
using nnet::Activation;

namespace {

Mat rows_of(const Mat& m, const std::vector<long>& idx) {
    Mat out(static_cast<long>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = m.row(idx[r]);
    return out;
}

Vec entries_of(const Vec& v, const std::vector<long>& idx) {
    Vec out(static_cast<long>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) out(r) = v(idx[r]);
    return out;
}

void assert_disjoint(const std::vector<long>& train, const std::vector<long>& eval,
                     const char* what) {
    std::unordered_set<long> seen(train.begin(), train.end());
    for (long i : eval)
        if (seen.count(i))
            throw IntegrityError(std::string("out-of-fold violation: ") + what +
                                 " evaluates its own training row " + std::to_string(i));
}

std::vector<long> random_batch(Rng& rng, long n, long size) {
    std::vector<long> idx(size);
    for (long i = 0; i < size; ++i) idx[i] = static_cast<long>(rng.below(n));
    return idx;
}

}  // namespace

FoldPlan make_folds(long n, long N, int K, std::uint64_t seed) {
    if (K < 2) throw ConfigError("make_folds: need K >= 2");
    if (n < K || N < K) throw ConfigError("make_folds: K exceeds a population size");
    FoldPlan plan;
    plan.K = K;
    plan.seed = seed;
    auto split = [&](long count, const char* tag) {
        std::vector<long> idx(count);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(seed, tag);
        rng.shuffle(idx);
        std::vector<std::vector<long>> folds(K);
        long pos = 0;
        for (int k = 0; k < K; ++k) {
            long size = count / K + (k < count % K ? 1 : 0);
            folds[k].assign(idx.begin() + pos, idx.begin() + pos + size);
            pos += size;
        }
        return folds;
    };
    plan.source_folds = split(n, "source-folds");
    plan.target_folds = split(N, "target-folds");
    return plan;
}

Vec DensityRatioModel::raw_weights(const Mat& X, const Mat& A) const {
    Mat in(X.rows(), X.cols() + A.cols());
    in.leftCols(X.cols()) = X;
    in.rightCols(A.cols()) = A;
    Vec p = nnet::forward(classifier, in).col(0);
    Vec w(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i)
        w(i) = std::min((1.0 - p(i)) / p(i), clip_bound);
    return w;
}

Vec normalize_weights(Vec w, double m_omega) {
    if (w.size() == 0) throw InputError("normalize_weights: empty");
    for (int round = 0; round < 32; ++round) {
        w = w.cwiseMin(m_omega);
        double mean = w.mean();
        if (mean <= 0.0) throw IntegrityError("normalize_weights: non-positive mean");
        w /= mean;
        if (w.maxCoeff() <= m_omega * (1.0 + 1e-12)) break;
    }
    return w;
}

DensityRatioModel fit_density_ratio(const Mat& source_X, const Mat& source_A,
                                    const Mat& synth_X, const Mat& synth_A,
                                    const DensityRatioHp& hp) {
    if (source_X.rows() == 0 || synth_X.rows() == 0)
        throw InputError("fit_density_ratio: empty fold");
    const long ns = source_X.rows(), nsyn = synth_X.rows();
    const int d = static_cast<int>(source_X.cols() + source_A.cols());

    Mat X(ns + nsyn, d);
    X.block(0, 0, ns, source_X.cols()) = source_X;
    X.block(0, source_X.cols(), ns, source_A.cols()) = source_A;
    X.block(ns, 0, nsyn, synth_X.cols()) = synth_X;
    X.block(ns, synth_X.cols(), nsyn, synth_A.cols()) = synth_A;
    Vec y(ns + nsyn);
    y.head(ns).setOnes();  // S = 1 marks source
    y.tail(nsyn).setZero();

    DensityRatioModel model;
    model.clip_bound = hp.m_omega;
    std::vector<int> widths{d};
    widths.insert(widths.end(), hp.hidden.begin(), hp.hidden.end());
    widths.push_back(1);
    std::vector<Activation> acts(hp.hidden.size(), Activation::relu);
    acts.push_back(Activation::sigmoid);
    model.classifier = nnet::net_new(widths, acts, stream_key(hp.seed, "density-ratio-init"));

    auto opt = nnet::adam_new(model.classifier, hp.lr);
    nnet::LossSpec loss;
    loss.kind = nnet::LossKind::bce;
    nnet::fit(model.classifier, X, y, loss, opt, hp.epochs, hp.batch_size,
              stream_key(hp.seed, "density-ratio-shuffle"));

    Vec p = nnet::forward(model.classifier, X).col(0);
    if (p.maxCoeff() <= 1e-12 || p.minCoeff() >= 1.0 - 1e-12)
        throw IntegrityError("density ratio classifier is degenerate: all outputs at a bound");
    return model;
}

double plugin_objective(const OutcomeModel& f, const Generator& gen, const Mat& target_X, int L,
                        std::uint64_t eps_key) {
    Vec m = core::mc_mean_rows(f, gen, target_X, L, eps_key, true);
    return m.squaredNorm() / static_cast<double>(target_X.rows());
}

double debiased_objective(const OutcomeModel& f, const Generator& gen, const Mat& target_X,
                          const Mat& source_X, const Vec& residuals, const Vec& weights, int L,
                          std::uint64_t eps_key) {
    if (source_X.rows() != residuals.size() || source_X.rows() != weights.size())
        throw InputError("debiased_objective: source row mismatch");
    double plug = plugin_objective(f, gen, target_X, L, eps_key);
    Vec mu = core::mc_mean_rows(f, gen, source_X, L, eps_key, true);
    double correction =
        2.0 * (weights.array() * mu.array() * residuals.array()).mean();
    return plug + correction;
}

Generator debiased_generator_fit(const OutcomeModel& f_fold, const Mat& source_X,
                                 const Vec& residuals, const Vec& weights, const Mat& target_X,
                                 GenKind kind, const Generator* init, const DebiasedGenHp& hp) {
    if (source_X.rows() != residuals.size() || source_X.rows() != weights.size())
        throw InputError("debiased_generator_fit: source row mismatch");
    if (target_X.rows() == 0) throw InputError("debiased_generator_fit: empty target fold");

    const long ns = source_X.rows(), nt = target_X.rows();

    Generator gen;
    double lr, clip = 0.0;
    long total_steps;
    if (kind == GenKind::unconstrained) {
        const auto& whp = hp.unconstrained;
        std::vector<int> widths{whp.q};
        widths.insert(widths.end(), whp.hidden.begin(), whp.hidden.end());
        widths.push_back(f_fold.d_A);
        std::vector<Activation> acts(whp.hidden.size(), Activation::relu);
        acts.push_back(Activation::identity);
        gen.kind = GenKind::unconstrained;
        gen.q = whp.q;
        gen.d_X = static_cast<int>(target_X.cols());
        gen.d_A = f_fold.d_A;
        gen.net = nnet::net_new(widths, acts, stream_key(hp.seed, "fold-gen-init"));
        lr = whp.lr;
        long batches_per_epoch = (nt + whp.batch_size - 1) / whp.batch_size;
        total_steps = static_cast<long>(whp.epochs) * batches_per_epoch;
    } else {
        if (!init) throw ConfigError("conditional debiased fit needs the preliminary generator");
        gen = *init;
        lr = hp.conditional_lr;
        clip = hp.conditional_clip;
        total_steps = hp.conditional_steps;
    }

    const int L = hp.unconstrained.L;
    auto opt = nnet::adam_new(gen.net, lr);
    long bt_size = std::min<long>(hp.batch_target, nt);
    long bs_size = std::min<long>(hp.batch_source, ns);

    Mat bt(bt_size, target_X.cols()), bs(bs_size, source_X.cols());
    Vec br(bs_size), bw(bs_size);
    for (long step = 0; step < total_steps; ++step) {
        Rng batch_rng(hp.seed, "fold-gen-batch", step);
        auto tgt_idx = random_batch(batch_rng, nt, bt_size);
        auto src_idx = random_batch(batch_rng, ns, bs_size);
        for (long r = 0; r < bt_size; ++r) bt.row(r) = target_X.row(tgt_idx[r]);
        for (long r = 0; r < bs_size; ++r) {
            bs.row(r) = source_X.row(src_idx[r]);
            br(r) = residuals(src_idx[r]);
            bw(r) = weights(src_idx[r]);
        }

        nnet::NetGrads grads = nnet::zero_grads(gen.net);
        core::DMeanFn square_fn = [bt_size](long, double mv) {
            return 2.0 * mv / static_cast<double>(bt_size);
        };
        Vec m = core::mc_mean_rows(f_fold, gen, bt, L,
                                   stream_key(hp.seed, "fold-gen-eps-t", step), false,
                                   &square_fn, &grads);
        core::DMeanFn corr_fn = [&](long row, double) {
            return 2.0 * bw(row) * br(row) / static_cast<double>(bs_size);
        };
        Vec mu = core::mc_mean_rows(f_fold, gen, bs, L,
                                    stream_key(hp.seed, "fold-gen-eps-s", step), false,
                                    &corr_fn, &grads);
        double obj = m.squaredNorm() / static_cast<double>(bt_size) +
                     2.0 * (bw.array() * mu.array() * br.array()).mean();
        if (!std::isfinite(obj)) throw DivergenceError("debiased generator diverged", step);
        if (clip > 0.0) nnet::clip_global_norm(grads, clip);
        nnet::adam_step(gen.net, grads, opt);
    }
    return gen;
}

namespace {

struct FoldNuisances {
    std::vector<OutcomeModel> f_fold;
    std::vector<DensityRatioModel> omega_fold;
    std::vector<Generator> gen_fold;
    // per source row, filled by the rotation
    Vec residuals;
    Vec weights;
};

// Residuals and normalized weights per source row: fold k's models score fold k+1.
void rotate_residuals_weights(const FoldPlan& folds, const std::vector<OutcomeModel>& f_fold,
                              const std::vector<DensityRatioModel>& omega_fold,
                              const Mat& source_X, const Mat& source_A, const Vec& source_Y,
                              double m_omega, Vec& residuals, Vec& weights) {
    const int K = folds.K;
    residuals = Vec::Zero(source_X.rows());
    weights = Vec::Zero(source_X.rows());
    for (int k = 0; k < K; ++k) {
        const auto& eval_fold = folds.source_folds[(k + 1) % K];
        assert_disjoint(folds.source_folds[k], eval_fold, "fold outcome model");
        Mat ex = rows_of(source_X, eval_fold);
        Mat ea = rows_of(source_A, eval_fold);
        Vec ey = entries_of(source_Y, eval_fold);
        Vec pred = f_fold[k].eval(ex, ea);
        Vec w = normalize_weights(omega_fold[k].raw_weights(ex, ea), m_omega);
        for (std::size_t r = 0; r < eval_fold.size(); ++r) {
            residuals(eval_fold[r]) = ey(r) - pred(r);
            weights(eval_fold[r]) = w(r);
        }
    }
}

}  // namespace

PseudoOutcomeSet pseudo_outcomes(const FoldPlan& folds,
                                 const std::vector<core::OutcomeModel>& f_fold,
                                 const std::vector<DensityRatioModel>& omega_fold,
                                 const std::vector<core::Generator>& gen_fold,
                                 const Mat& source_X, const Mat& source_A, const Vec& source_Y,
                                 const Mat& target_X, double m_omega, int L, std::uint64_t seed) {
    const int K = folds.K;
    if (static_cast<int>(f_fold.size()) != K || static_cast<int>(omega_fold.size()) != K ||
        static_cast<int>(gen_fold.size()) != K)
        throw IntegrityError("pseudo_outcomes: fold model counts disagree with the fold plan");
    const long n = source_X.rows(), N = target_X.rows();

    Vec residuals, weights;
    rotate_residuals_weights(folds, f_fold, omega_fold, source_X, source_A, source_Y, m_omega,
                             residuals, weights);

    PseudoOutcomeSet out;
    out.r = static_cast<double>(n) / static_cast<double>(N);
    out.X.resize(n + N, source_X.cols());
    out.X.topRows(n) = source_X;
    out.X.bottomRows(N) = target_X;
    out.F.resize(n + N);
    out.is_source.assign(n + N, 0);
    for (long i = 0; i < n; ++i) {
        out.F(i) = weights(i) * residuals(i);
        out.is_source[i] = 1;
    }
    for (int k = 0; k < K; ++k) {
        const auto& eval_tgt = folds.target_folds[(k + 1) % K];
        assert_disjoint(folds.target_folds[k], eval_tgt, "fold generator");
        assert_disjoint(folds.source_folds[(k + K - 1) % K], folds.source_folds[(k + 1) % K],
                        "fold outcome model for target pseudo-outcomes");
        Mat ex = rows_of(target_X, eval_tgt);
        Vec fhat = core::mc_mean_rows(f_fold[(k + K - 1) % K], gen_fold[k], ex, L,
                                      stream_key(seed, "pseudo-eps", k), false);
        for (std::size_t r = 0; r < eval_tgt.size(); ++r)
            out.F(n + eval_tgt[r]) = out.r * fhat(r);
    }
    return out;
}

DebiasedPredictor fit_debiased_predictor(const PseudoOutcomeSet& pseudo,
                                         const FinalRegressionHp& hp, Task task) {
    if (pseudo.X.rows() != pseudo.F.size()) throw InputError("pseudo outcomes misaligned");
    DebiasedPredictor out;
    out.task = task;
    out.d_X = static_cast<int>(pseudo.X.cols());
    std::vector<int> widths{out.d_X};
    widths.insert(widths.end(), hp.hidden.begin(), hp.hidden.end());
    widths.push_back(1);
    std::vector<Activation> acts(hp.hidden.size(), Activation::relu);
    acts.push_back(Activation::identity);  // the final regression is unconstrained
    out.net = nnet::net_new(widths, acts, stream_key(hp.seed, "final-regressor-init"));
    auto opt = nnet::adam_new(out.net, hp.lr);
    nnet::fit(out.net, pseudo.X, pseudo.F, nnet::LossSpec{}, opt, hp.epochs, hp.batch_size,
              stream_key(hp.seed, "final-regressor-shuffle"));
    return out;
}

Vec DebiasedPredictor::predict(const Mat& X) const {
    if (X.cols() != d_X)
        throw InputError("debiased predict: expected " + std::to_string(d_X) +
                         " stable covariates (schema error)");
    Vec out = nnet::forward(net, X).col(0);
    if (task == Task::binary) out = out.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

DrumDebiasedResult drum_debiased(const Mat& source_X, const Mat& source_A, const Vec& source_Y,
                                 const Mat& target_X, GenKind variant, const DrumDebiasedHp& hp,
                                 Task task, const OutcomeModel* pretrained_outcome,
                                 const Generator* pretrained_gen,
                                 const core::EnergyBudget* pretrained_budget) {
    const long n = source_X.rows(), N = target_X.rows();
    DrumDebiasedResult result;

    // Preliminary stage: full-data outcome model and plug-in generator g(0).
    result.outcome = pretrained_outcome ? *pretrained_outcome
                                        : core::fit_outcome_model(source_X, source_A, source_Y,
                                                                  hp.outcome, task);
    if (pretrained_gen) {
        result.preliminary_gen = *pretrained_gen;
        if (pretrained_budget) result.budget = *pretrained_budget;
    } else if (variant == GenKind::unconstrained) {
        result.preliminary_gen =
            core::fit_worstcase_unconstrained(result.outcome, target_X, hp.worstcase).gen;
    } else {
        auto [g_source, baseline] = core::fit_source_engression(source_X, source_A,
                                                                hp.engression);
        result.budget.baseline_energy = baseline;
        result.budget.delta = hp.delta;
        result.preliminary_gen =
            core::fit_worstcase_constrained(result.outcome, source_X, source_A, target_X,
                                            g_source, result.budget, hp.constrained)
                .gen;
    }

    FoldPlan folds = make_folds(n, N, hp.K, stream_key(hp.seed, "fold-plan"));
    const int K = hp.K;
    FoldNuisances nu;
    nu.residuals = Vec::Zero(n);
    nu.weights = Vec::Zero(n);

    // Stage 2: per-fold outcome models and density-ratio classifiers, evaluated on
    // the next fold in the rotation.
    for (int k = 0; k < K; ++k) {
        const auto& src_k = folds.source_folds[k];
        const auto& tgt_k = folds.target_folds[k];

        core::OutcomeHp fhp = hp.outcome;
        fhp.seed = stream_key(hp.seed, "fold-outcome", k);
        nu.f_fold.push_back(core::fit_outcome_model(rows_of(source_X, src_k),
                                                    rows_of(source_A, src_k),
                                                    entries_of(source_Y, src_k), fhp, task));

        Mat synth_X = rows_of(target_X, tgt_k);
        Mat eps = result.preliminary_gen.sample_eps(stream_key(hp.seed, "synth-eps", k),
                                                    synth_X.rows());
        Mat synth_A = result.preliminary_gen.sample(&synth_X, eps);
        DensityRatioHp dhp = hp.density_ratio;
        dhp.seed = stream_key(hp.seed, "fold-density", k);
        nu.omega_fold.push_back(fit_density_ratio(rows_of(source_X, src_k),
                                                  rows_of(source_A, src_k), synth_X, synth_A,
                                                  dhp));
    }
    rotate_residuals_weights(folds, nu.f_fold, nu.omega_fold, source_X, source_A, source_Y,
                             hp.density_ratio.m_omega, nu.residuals, nu.weights);

    // Stage 3: cross-fitted debiased generators.
    for (int k = 0; k < K; ++k) {
        const auto& src_k = folds.source_folds[k];
        const auto& tgt_k = folds.target_folds[k];
        const OutcomeModel& f_prev = nu.f_fold[(k + K - 1) % K];
        DebiasedGenHp ghp = hp.fold_generator;
        ghp.seed = stream_key(hp.seed, "fold-gen", k);
        nu.gen_fold.push_back(debiased_generator_fit(
            f_prev, rows_of(source_X, src_k), entries_of(nu.residuals, src_k),
            entries_of(nu.weights, src_k), rows_of(target_X, tgt_k), variant,
            variant == GenKind::conditional ? &result.preliminary_gen : nullptr, ghp));
    }

    // Stage 4: pseudo-outcomes and the final X-only regression.
    result.pseudo = pseudo_outcomes(folds, nu.f_fold, nu.omega_fold, nu.gen_fold, source_X,
                                    source_A, source_Y, target_X, hp.density_ratio.m_omega, hp.L,
                                    stream_key(hp.seed, "pseudo"));

    FinalRegressionHp frhp = hp.final_regression;
    frhp.seed = stream_key(hp.seed, "final");
    result.predictor = fit_debiased_predictor(result.pseudo, frhp, task);
    result.predictor.fold_seed = folds.seed;
    return result;
}

}  // namespace drum::debias
