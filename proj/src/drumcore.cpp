#include "drum/drumcore.hpp"
#include "drum/rng.hpp"

#include <cmath>

namespace drum::core {

using nnet::Activation;
using nnet::ForwardCache;
using nnet::NetGrads;

namespace {

Mat normal_rows(Rng& rng, long rows, long cols) {
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

std::vector<long> batch_indices(Rng& rng, long n, long batch) {
    std::vector<long> idx(batch);
    for (long i = 0; i < batch; ++i) idx[i] = static_cast<long>(rng.below(n));
    return idx;
}

}  // namespace

Vec OutcomeModel::eval(const Mat& X, const Mat& A) const {
    if (X.cols() != d_X || A.cols() != d_A || X.rows() != A.rows())
        throw InputError("outcome model eval: shape mismatch");
    Mat in(X.rows(), d_X + d_A);
    in.leftCols(d_X) = X;
    in.rightCols(d_A) = A;
    return nnet::forward(net, in).col(0);
}

OutcomeModel fit_outcome_model(const Mat& X, const Mat& A, const Vec& Y, const OutcomeHp& hp,
                               Task task) {
    if (X.rows() != A.rows() || X.rows() != Y.size())
        throw InputError("fit_outcome_model: row counts differ");
    OutcomeModel m;
    m.d_X = static_cast<int>(X.cols());
    m.d_A = static_cast<int>(A.cols());
    m.task = task;

    std::vector<int> widths{m.d_X + m.d_A};
    widths.insert(widths.end(), hp.hidden.begin(), hp.hidden.end());
    widths.push_back(1);
    std::vector<Activation> acts(hp.hidden.size(), Activation::relu);
    acts.push_back(task == Task::binary ? Activation::sigmoid : Activation::identity);
    m.net = nnet::net_new(widths, acts, hp.seed);

    Mat in(X.rows(), m.d_X + m.d_A);
    in.leftCols(m.d_X) = X;
    in.rightCols(m.d_A) = A;
    auto opt = nnet::adam_new(m.net, hp.lr);
    nnet::LossSpec loss;
    loss.kind = task == Task::binary ? nnet::LossKind::bce : nnet::LossKind::mse;
    long batches_per_epoch = (X.rows() + hp.batch_size - 1) / hp.batch_size;
    try {
        auto log = nnet::fit(m.net, in, Y, loss, opt, hp.epochs, hp.batch_size,
                             stream_key(hp.seed, "outcome-shuffle"));
        m.epoch_loss = log.epoch_loss;
    } catch (const DivergenceError& e) {
        throw DivergenceError("outcome model diverged at epoch", e.step / batches_per_epoch);
    }
    return m;
}

Mat Generator::sample(const Mat* X, const Mat& eps) const {
    if (eps.cols() != q) throw InputError("generator: eps width != q");
    if (kind == GenKind::unconstrained) return nnet::forward(net, eps);
    if (!X || X->rows() != eps.rows() || X->cols() != d_X)
        throw InputError("conditional generator needs matching x rows");
    Mat in(eps.rows(), d_X + q);
    in.leftCols(d_X) = *X;
    in.rightCols(q) = eps;
    return nnet::forward(net, in);
}

Mat Generator::sample_eps(std::uint64_t eps_key, long rows) const {
    Rng rng(eps_key, "gen-eps");
    return normal_rows(rng, rows, q);
}

double energy_score(const Generator& gen, const Mat& X, const Mat& A, std::uint64_t eps_seed) {
    const long n = A.rows();
    if (n == 0) throw InputError("energy_score: empty batch");
    Rng rng(eps_seed, "energy-eps");
    Mat eps = normal_rows(rng, n, gen.q);
    Mat eps2 = normal_rows(rng, n, gen.q);
    Mat ahat = gen.sample(&X, eps);
    Mat ahat2 = gen.sample(&X, eps2);
    double first = 0.0, second = 0.0;
    for (long i = 0; i < n; ++i) {
        first += (A.row(i) - ahat.row(i)).norm();
        second += (ahat.row(i) - ahat2.row(i)).norm();
    }
    return first / static_cast<double>(n) - second / (2.0 * static_cast<double>(n));
}

namespace {

// Energy-score value and generator gradients on one batch.
double energy_score_step(const Generator& gen, const Mat& X, const Mat& A, const Mat& eps,
                         const Mat& eps2, double scale, NetGrads* grads) {
    const long n = A.rows();
    Mat gin1, gin2;
    if (gen.kind == GenKind::conditional) {
        gin1.resize(n, gen.d_X + gen.q);
        gin1.leftCols(gen.d_X) = X;
        gin1.rightCols(gen.q) = eps;
        gin2.resize(n, gen.d_X + gen.q);
        gin2.leftCols(gen.d_X) = X;
        gin2.rightCols(gen.q) = eps2;
    } else {
        gin1 = eps;
        gin2 = eps2;
    }
    ForwardCache c1, c2;
    Mat ahat = nnet::forward_cached(gen.net, gin1, c1);
    Mat ahat2 = nnet::forward_cached(gen.net, gin2, c2);

    double first = 0.0, second = 0.0;
    Mat d1 = Mat::Zero(n, gen.d_A), d2 = Mat::Zero(n, gen.d_A);
    for (long i = 0; i < n; ++i) {
        Eigen::RowVectorXd r = A.row(i) - ahat.row(i);
        double nr = r.norm();
        first += nr;
        if (nr > 1e-12) d1.row(i) -= r / (nr * static_cast<double>(n));
        Eigen::RowVectorXd s = ahat.row(i) - ahat2.row(i);
        double ns = s.norm();
        second += ns;
        if (ns > 1e-12) {
            d1.row(i) -= s / (2.0 * ns * static_cast<double>(n));
            d2.row(i) += s / (2.0 * ns * static_cast<double>(n));
        }
    }
    if (grads) {
        d1 *= scale;
        d2 *= scale;
        nnet::backward(gen.net, c1, d1, grads);
        nnet::backward(gen.net, c2, d2, grads);
    }
    return first / static_cast<double>(n) - second / (2.0 * static_cast<double>(n));
}

}  // namespace

std::pair<Generator, double> fit_source_engression(const Mat& X, const Mat& A,
                                                   const EngressionHp& hp) {
    if (X.rows() != A.rows() || X.rows() == 0)
        throw InputError("fit_source_engression: bad source data");
    Generator gen;
    gen.kind = GenKind::conditional;
    gen.q = hp.q;
    gen.d_X = static_cast<int>(X.cols());
    gen.d_A = static_cast<int>(A.cols());
    gen.net = nnet::net_new({gen.d_X + gen.q, hp.hidden, gen.d_A},
                            {Activation::relu, Activation::identity},
                            stream_key(hp.seed, "engression-init"));
    auto opt = nnet::adam_new(gen.net, hp.lr);

    const long n = X.rows();
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    long step = 0;
    Mat bx, ba;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng shuffle(hp.seed, "engression-shuffle", epoch);
        shuffle.shuffle(order);
        for (long start = 0; start < n; start += hp.batch_size, ++step) {
            long size = std::min<long>(hp.batch_size, n - start);
            bx.resize(size, X.cols());
            ba.resize(size, A.cols());
            for (long r = 0; r < size; ++r) {
                bx.row(r) = X.row(order[start + r]);
                ba.row(r) = A.row(order[start + r]);
            }
            Rng eps_rng(hp.seed, "engression-eps", step);
            Mat eps = normal_rows(eps_rng, size, gen.q);
            Mat eps2 = normal_rows(eps_rng, size, gen.q);
            NetGrads grads = nnet::zero_grads(gen.net);
            double value = energy_score_step(gen, bx, ba, eps, eps2, 1.0, &grads);
            if (!std::isfinite(value)) throw DivergenceError("engression diverged", step);
            nnet::adam_step(gen.net, grads, opt);
        }
    }
    double baseline = energy_score(gen, X, A, stream_key(hp.seed, "engression-baseline"));
    return {std::move(gen), baseline};
}

Vec mc_mean_rows(const OutcomeModel& f, const Generator& gen, const Mat& X, int L,
                 std::uint64_t eps_key, bool shared_panel, const DMeanFn* d_mean_fn,
                 nnet::NetGrads* gen_grads) {
    const long n = X.rows();
    const int d_X = f.d_X, d_A = f.d_A, q = gen.q;
    if (X.cols() != d_X) throw InputError("mc_mean_rows: x width mismatch");
    if (gen.d_A != d_A) throw InputError("mc_mean_rows: generator output width mismatch");
    if ((d_mean_fn == nullptr) != (gen_grads == nullptr))
        throw ConfigError("mc_mean_rows: gradient callback and output must come together");

    Vec m(n);

    Mat panel;  // L x q, only for shared draws
    Mat panel_A;
    if (shared_panel) {
        Rng rng(eps_key, "panel");
        panel = normal_rows(rng, L, q);
        if (gen.kind == GenKind::unconstrained && !gen_grads)
            panel_A = nnet::forward(gen.net, panel);
    }

    const long rows_per_block = std::max<long>(1, 8192 / L);
    const long n_blocks = (n + rows_per_block - 1) / rows_per_block;
    std::vector<NetGrads> partials;
    if (gen_grads) partials.resize(n_blocks);

    parallel_for(n_blocks, [&](long b) {
        const long lo = b * rows_per_block;
        const long hi = std::min(n, lo + rows_per_block);
        const long rows_here = hi - lo;
        const long M = rows_here * L;

        Mat fin(M, d_X + d_A);
        for (long r = 0; r < rows_here; ++r)
            fin.block(r * L, 0, L, d_X) = X.row(lo + r).replicate(L, 1);

        ForwardCache gen_cache;
        Mat gin;
        if (shared_panel && gen.kind == GenKind::unconstrained && !gen_grads) {
            for (long r = 0; r < rows_here; ++r) fin.block(r * L, d_X, L, d_A) = panel_A;
        } else {
            Mat E(M, q);
            if (shared_panel) {
                for (long r = 0; r < rows_here; ++r) E.middleRows(r * L, L) = panel;
            } else {
                for (long r = 0; r < rows_here; ++r) {
                    Rng rng(eps_key, "row-eps", static_cast<std::uint64_t>(lo + r));
                    E.middleRows(r * L, L) = normal_rows(rng, L, q);
                }
            }
            if (gen.kind == GenKind::conditional) {
                gin.resize(M, gen.d_X + q);
                gin.leftCols(gen.d_X) = fin.leftCols(gen.d_X);
                gin.rightCols(q) = E;
            } else {
                gin = std::move(E);
            }
            fin.rightCols(d_A) = nnet::forward_cached(gen.net, gin, gen_cache);
        }

        ForwardCache f_cache;
        Mat out = nnet::forward_cached(f.net, fin, f_cache);
        for (long r = 0; r < rows_here; ++r)
            m(lo + r) = out.col(0).segment(r * L, L).mean();

        if (gen_grads) {
            Mat d_out(M, 1);
            for (long r = 0; r < rows_here; ++r)
                d_out.col(0).segment(r * L, L).setConstant(
                    (*d_mean_fn)(lo + r, m(lo + r)) / static_cast<double>(L));
            Mat d_fin = nnet::backward(f.net, f_cache, d_out, nullptr);
            Mat d_gen_out = d_fin.rightCols(d_A);
            partials[b] = nnet::zero_grads(gen.net);
            nnet::backward(gen.net, gen_cache, d_gen_out, &partials[b]);
        }
    });

    if (gen_grads)
        for (long b = 0; b < n_blocks; ++b) gen_grads->add(partials[b]);
    return m;
}

WorstCaseFit fit_worstcase_unconstrained(const OutcomeModel& f, const Mat& target_X,
                                         const WorstCaseHp& hp) {
    if (target_X.rows() == 0) throw InputError("fit_worstcase_unconstrained: empty target");
    WorstCaseFit fit;
    fit.gen.kind = GenKind::unconstrained;
    fit.gen.q = hp.q;
    fit.gen.d_X = static_cast<int>(target_X.cols());
    fit.gen.d_A = f.d_A;

    std::vector<int> widths{hp.q};
    widths.insert(widths.end(), hp.hidden.begin(), hp.hidden.end());
    widths.push_back(f.d_A);
    std::vector<Activation> acts(hp.hidden.size(), Activation::relu);
    acts.push_back(Activation::identity);
    fit.gen.net = nnet::net_new(widths, acts, stream_key(hp.seed, "worstcase-init"));

    auto opt = nnet::adam_new(fit.gen.net, hp.lr);
    const long n = target_X.rows();
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    long step = 0;
    Mat bx;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng shuffle(hp.seed, "worstcase-shuffle", epoch);
        shuffle.shuffle(order);
        double total = 0;
        long batches = 0;
        for (long start = 0; start < n; start += hp.batch_size, ++step) {
            long size = std::min<long>(hp.batch_size, n - start);
            bx.resize(size, target_X.cols());
            for (long r = 0; r < size; ++r) bx.row(r) = target_X.row(order[start + r]);

            NetGrads grads = nnet::zero_grads(fit.gen.net);
            std::uint64_t eps_key = stream_key(hp.seed, "worstcase-eps", step);
            DMeanFn square_fn = [size](long, double mv) {
                return 2.0 * mv / static_cast<double>(size);
            };
            Vec m = mc_mean_rows(f, fit.gen, bx, hp.L, eps_key, false, &square_fn, &grads);
            double obj = m.squaredNorm() / static_cast<double>(size);
            if (!std::isfinite(obj)) throw DivergenceError("worst-case generator diverged", step);
            nnet::adam_step(fit.gen.net, grads, opt);
            total += obj;
            ++batches;
        }
        fit.objective_per_epoch.push_back(total / static_cast<double>(batches));
    }
    return fit;
}

WorstCaseFit fit_worstcase_constrained(const OutcomeModel& f, const Mat& source_X,
                                       const Mat& source_A, const Mat& target_X,
                                       const Generator& g_source, EnergyBudget& budget,
                                       const ConstrainedHp& hp) {
    if (g_source.kind != GenKind::conditional)
        throw ConfigError("fit_worstcase_constrained: source generator must be conditional");
    WorstCaseFit fit;
    fit.gen = g_source;  // initialize from the source generator
    auto opt = nnet::adam_new(fit.gen.net, hp.primal_lr);

    double lambda = budget.dual_lambda;
    const long ns = source_X.rows(), nt = target_X.rows();
    Mat bs_x(hp.batch_source, source_X.cols()), bs_a(hp.batch_source, source_A.cols());
    Mat bt_x(hp.batch_target, target_X.cols());

    for (int step = 0; step < hp.steps; ++step) {
        Rng batch_rng(hp.seed, "constrained-batch", step);
        auto src_idx = batch_indices(batch_rng, ns, hp.batch_source);
        auto tgt_idx = batch_indices(batch_rng, nt, hp.batch_target);
        for (int r = 0; r < hp.batch_source; ++r) {
            bs_x.row(r) = source_X.row(src_idx[r]);
            bs_a.row(r) = source_A.row(src_idx[r]);
        }
        for (int r = 0; r < hp.batch_target; ++r) bt_x.row(r) = target_X.row(tgt_idx[r]);

        NetGrads grads = nnet::zero_grads(fit.gen.net);

        std::uint64_t eps_key = stream_key(hp.seed, "constrained-eps", step);
        const long bt = hp.batch_target;
        DMeanFn square_fn = [bt](long, double mv) { return 2.0 * mv / static_cast<double>(bt); };
        Vec m = mc_mean_rows(f, fit.gen, bt_x, hp.L, eps_key, false, &square_fn, &grads);
        double obj = m.squaredNorm() / static_cast<double>(hp.batch_target);

        Rng energy_rng(hp.seed, "constrained-energy", step);
        Mat eps = normal_rows(energy_rng, hp.batch_source, fit.gen.q);
        Mat eps2 = normal_rows(energy_rng, hp.batch_source, fit.gen.q);
        double en = energy_score_step(fit.gen, bs_x, bs_a, eps, eps2, lambda, &grads);
        double gap = en - budget.baseline_energy;

        if (!std::isfinite(obj) || !std::isfinite(en))
            throw DivergenceError("constrained generator diverged", step);

        nnet::clip_global_norm(grads, hp.clip);
        nnet::adam_step(fit.gen.net, grads, opt);

        lambda = std::max(0.0, lambda + hp.dual_lr * (gap - budget.delta));
        if (lambda > 1e6) {
            lambda = 1e6;
            budget.lambda_capped = true;
        }
        budget.lambda_trajectory.push_back(lambda);
        budget.gap_trajectory.push_back(gap);
        fit.objective_per_epoch.push_back(obj + lambda * (gap - budget.delta));
    }

    budget.dual_lambda = lambda;
    budget.final_gap =
        energy_score(fit.gen, source_X, source_A, stream_key(hp.seed, "constrained-final")) -
        budget.baseline_energy;
    return fit;
}

Vec predict_with_seed(const RobustPredictor& rp, const Mat& X, std::uint64_t eps_key) {
    return mc_mean_rows(rp.outcome, rp.gen, X, rp.L, eps_key, true, nullptr, nullptr);
}

Vec predict(const RobustPredictor& rp, const Mat& X) {
    return predict_with_seed(rp, X, stream_key(rp.prediction_seed, "predict"));
}

double robust_value(const OutcomeModel& f, const Generator& gen, const Mat& target_X, int L,
                    std::uint64_t eps_key) {
    Vec m = mc_mean_rows(f, gen, target_X, L, eps_key, true, nullptr, nullptr);
    return m.squaredNorm() / static_cast<double>(target_X.rows());
}

}  // namespace drum::core
