#include "drum/baselines.hpp"
#include "drum/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace drum::baselines {

namespace {

using nnet::Activation;
using nnet::DenseNet;
using nnet::LossKind;
using nnet::LossSpec;

std::vector<int> arch(int d_in, const std::vector<int>& hidden) {
    std::vector<int> widths{d_in};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(1);
    return widths;
}

std::vector<Activation> acts(std::size_t hidden_layers, Task task) {
    std::vector<Activation> a(hidden_layers, Activation::relu);
    a.push_back(task == Task::binary ? Activation::sigmoid : Activation::identity);
    return a;
}

DenseNet make_net(int d_in, const BaselineHp& hp, Task task) {
    return nnet::net_new(arch(d_in, hp.hidden), acts(hp.hidden.size(), task), hp.seed);
}

// Pseudo-label pooling feeds soft targets to bce, so only the range is enforced
// here; hard 0/1 labels are checked at the CSV schema boundary.
void check_labels(const Vec& Y, Task task) {
    if (task != Task::binary) return;
    for (Eigen::Index i = 0; i < Y.size(); ++i)
        if (!(Y(i) >= 0.0 && Y(i) <= 1.0))
            throw InputError("binary task requires outcomes in [0, 1]");
}

// per-example loss and its gradient wrt the (post-activation) output
void per_example_losses(const Mat& out, const Vec& Y, Task task, Vec& losses, Vec& dloss_dout) {
    const long n = out.rows();
    losses.resize(n);
    dloss_dout.resize(n);
    if (task == Task::regression) {
        for (long i = 0; i < n; ++i) {
            double r = out(i, 0) - Y(i);
            losses(i) = r * r;
            dloss_dout(i) = 2.0 * r;
        }
    } else {
        for (long i = 0; i < n; ++i) {
            double p = std::min(std::max(out(i, 0), 1e-12), 1.0 - 1e-12);
            losses(i) = -(Y(i) * std::log(p) + (1.0 - Y(i)) * std::log(1.0 - p));
            dloss_dout(i) = (p - Y(i)) / (p * (1.0 - p));
        }
    }
}

}  // namespace

double ess(const Vec& w) {
    if (w.size() == 0) throw InputError("ess: empty weight vector");
    if ((w.array() < 0.0).any()) throw InputError("ess: weights must be non-negative");
    double sum = w.sum();
    double sq = w.squaredNorm();
    if (sq == 0.0) throw InputError("ess: all-zero weight vector");
    return sum * sum / sq;
}

Vec BaselineModel::predict(const Mat& X) const {
    if (X.cols() != d_X)
        throw InputError("baseline predict: expected " + std::to_string(d_X) +
                         " stable covariates, got " + std::to_string(X.cols()) +
                         " columns (schema error)");
    return nnet::forward(net, X).col(0);
}

BaselineModel fit_erm(const Mat& X, const Vec& Y, const BaselineHp& hp, Task task) {
    check_labels(Y, task);
    BaselineModel m;
    m.task = task;
    m.d_X = static_cast<int>(X.cols());
    m.net = make_net(m.d_X, hp, task);
    auto opt = nnet::adam_new(m.net, hp.lr);
    LossSpec loss;
    loss.kind = task == Task::binary ? LossKind::bce : LossKind::mse;
    nnet::fit(m.net, X, Y, loss, opt, hp.epochs, hp.batch_size,
              stream_key(hp.seed, "baseline-shuffle"));
    return m;
}

double chisq_robust_loss(const Vec& losses, double rho) {
    Vec unused;
    return chisq_robust_loss_grad(losses, rho, unused);
}

double chisq_robust_loss_grad(const Vec& losses, double rho, Vec& d_losses) {
    if (losses.size() == 0) throw InputError("chisq_robust_loss: empty batch");
    if (!losses.allFinite()) throw InputError("chisq_robust_loss: non-finite losses");
    if (rho < 0.0) throw ConfigError("chisq_robust_loss: rho must be non-negative");
    const long n = losses.size();
    const double c = std::sqrt(1.0 + 2.0 * rho);
    const double lo_v = losses.minCoeff(), hi_v = losses.maxCoeff();

    if (hi_v - lo_v < 1e-15 || rho == 0.0) {
        // point mass (or zero-radius ball): robust value is the mean
        d_losses = Vec::Constant(n, 1.0 / static_cast<double>(n));
        return losses.mean();
    }

    auto objective = [&](double eta) {
        double s = 0.0;
        for (long i = 0; i < n; ++i) {
            double d = losses(i) - eta;
            if (d > 0.0) s += d * d;
        }
        return c * std::sqrt(s / static_cast<double>(n)) + eta;
    };

    double lo = lo_v - (hi_v - lo_v), hi = hi_v;
    for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, hi_v - lo_v); ++it) {
        double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (objective(m1) < objective(m2))
            hi = m2;
        else
            lo = m1;
    }
    double eta = 0.5 * (lo + hi);

    double s = 0.0;
    for (long i = 0; i < n; ++i) {
        double d = losses(i) - eta;
        if (d > 0.0) s += d * d;
    }
    double root = std::sqrt(s / static_cast<double>(n));
    d_losses.resize(n);
    if (root <= 0.0) {
        d_losses.setConstant(1.0 / static_cast<double>(n));
    } else {
        for (long i = 0; i < n; ++i) {
            double d = losses(i) - eta;
            d_losses(i) = d > 0.0 ? c * d / (static_cast<double>(n) * root) : 0.0;
        }
    }
    return c * root + eta;
}

BaselineModel fit_chisq_dro(const Mat& X, const Vec& Y, double rho, const BaselineHp& hp,
                            Task task) {
    check_labels(Y, task);
    BaselineModel m;
    m.task = task;
    m.trainer = Trainer::chisq_dro;
    m.rho = rho;
    m.d_X = static_cast<int>(X.cols());
    m.net = make_net(m.d_X, hp, task);
    auto opt = nnet::adam_new(m.net, hp.lr);

    LossSpec loss;
    loss.kind = LossKind::custom;
    loss.custom = [rho, task](const Mat& out, const Mat& targets, Mat& d_out) {
        Vec losses, dloss_dout, d_losses;
        per_example_losses(out, targets.col(0), task, losses, dloss_dout);
        double v = chisq_robust_loss_grad(losses, rho, d_losses);
        d_out.resize(out.rows(), 1);
        d_out.col(0) = d_losses.cwiseProduct(dloss_dout);
        return v;
    };
    nnet::fit(m.net, X, Y, loss, opt, hp.epochs, hp.batch_size,
              stream_key(hp.seed, "baseline-shuffle"));
    return m;
}

// ---------------------------------------------------------------------------
// Kernel mean matching

namespace {

double median_pairwise_distance(const Mat& pooled, std::uint64_t seed) {
    // exact on modest pools, deterministic subsample beyond that
    const long cap = 4096;
    Mat pts = pooled;
    if (pooled.rows() > cap) {
        Rng rng(seed, "kmm-median-subsample");
        std::vector<long> idx(pooled.rows());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        pts.resize(cap, pooled.cols());
        for (long i = 0; i < cap; ++i) pts.row(i) = pooled.row(idx[i]);
    }
    const long n = pts.rows();
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (long i = 0; i < n; ++i)
        for (long j = i + 1; j < n; ++j) d.push_back((pts.row(i) - pts.row(j)).norm());
    std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + mid, d.end());
    return d[mid];
}

}  // namespace

WeightVector kmm_weights(const Mat& source_X, const Mat& target_X, const KmmOptions& opts) {
    if (source_X.rows() == 0 || target_X.rows() == 0)
        throw InputError("kmm_weights: empty source or target");
    const long m = source_X.rows(), nt = target_X.rows();
    const double B = opts.b_cap;

    double sigma;
    if (opts.bandwidth) {
        sigma = *opts.bandwidth;
    } else {
        Mat pooled(m + nt, source_X.cols());
        pooled.topRows(m) = source_X;
        pooled.bottomRows(nt) = target_X;
        sigma = median_pairwise_distance(pooled, opts.seed);
    }
    const double gamma = 1.0 / (2.0 * sigma * sigma);

    Mat K(m, m);
    parallel_chunks(m, 256, [&](long, long lo, long hi) {
        for (long i = lo; i < hi; ++i)
            for (long j = 0; j < m; ++j)
                K(i, j) = std::exp(-gamma * (source_X.row(i) - source_X.row(j)).squaredNorm());
    });
    Vec kappa(m);
    parallel_chunks(m, 256, [&](long, long lo, long hi) {
        for (long i = lo; i < hi; ++i) {
            double s = 0;
            for (long j = 0; j < nt; ++j)
                s += std::exp(-gamma * (source_X.row(i) - target_X.row(j)).squaredNorm());
            kappa(i) = s * static_cast<double>(m) / static_cast<double>(nt);
        }
    });

    const double md = static_cast<double>(m);
    const double eps_tol = (std::sqrt(md) - 1.0) / std::sqrt(md);
    const double sum_lo = md * (1.0 - eps_tol), sum_hi = md * (1.0 + eps_tol);

    // lambda_max(K) for the step size, via power iteration
    Vec pv = Vec::Constant(m, 1.0 / std::sqrt(md));
    double lam = 1.0;
    for (int it = 0; it < 30; ++it) {
        Vec next = K * pv;
        lam = next.norm();
        if (lam <= 0) break;
        pv = next / lam;
    }
    lam = std::max(lam, 1.0);

    // FISTA-accelerated projected gradient; the sum constraint enters through an
    // augmented-Lagrangian term with multiplier mu and penalty rho_al.
    Vec w = Vec::Ones(m);
    double mu = 0.0, rho_al = 1.0 / md;
    auto violation = [&](double s) {
        if (s < sum_lo) return s - sum_lo;
        if (s > sum_hi) return s - sum_hi;
        return 0.0;
    };

    long iters = 0;
    double kkt = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < 60 && iters < opts.max_iterations; ++outer) {
        double step = 1.0 / (lam + rho_al * md);
        Vec y = w, w_prev = w;
        double t = 1.0;
        for (long inner = 0; inner < 4000 && iters < opts.max_iterations; ++inner, ++iters) {
            Vec grad = K * y - kappa;
            double c = violation(y.sum());
            if (mu != 0.0 || c != 0.0) grad.array() += mu + rho_al * c;
            Vec w_next = (y - step * grad).cwiseMax(0.0).cwiseMin(B);
            double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            y = w_next + ((t - 1.0) / t_next) * (w_next - w_prev);
            if ((w_next - w_prev).dot(grad) > 0.0) {  // restart on non-descent
                y = w_next;
                t_next = 1.0;
            }
            w_prev = w_next;
            t = t_next;
            if (inner % 50 == 49) {
                Vec g = K * w_prev - kappa;
                double cv = violation(w_prev.sum());
                g.array() += mu + rho_al * cv;
                double r = (w_prev - (w_prev - g).cwiseMax(0.0).cwiseMin(B)).cwiseAbs().maxCoeff();
                if (r < 0.25 * opts.kkt_tol) break;
            }
        }
        w = w_prev;
        double c = violation(w.sum());
        mu += rho_al * c;
        Vec g = K * w - kappa;
        g.array() += mu;
        kkt = (w - (w - g).cwiseMax(0.0).cwiseMin(B)).cwiseAbs().maxCoeff();
        if (kkt <= opts.kkt_tol && std::abs(c) <= 1e-6) break;
        if (std::abs(c) > 1e-6) rho_al *= 2.0;
    }

    w = w.cwiseMax(0.0).cwiseMin(B);
    double c_final = violation(w.sum());
    if (kkt > opts.kkt_tol || std::abs(c_final) > 1e-6)
        throw SolverError("kmm_weights: no convergence after " + std::to_string(iters) +
                          " iterations (kkt residual " + std::to_string(kkt) +
                          ", sum violation " + std::to_string(c_final) + ")");

    WeightVector out;
    out.w = w;
    out.ess = ess(w);
    out.method = "kmm";
    out.note = "bandwidth=" + format_double(sigma);
    return out;
}

WeightVector classifier_weights(const Mat& source_X, const Mat& target_X) {
    if (source_X.rows() == 0 || target_X.rows() == 0)
        throw InputError("classifier_weights: empty source or target");
    const long m = source_X.rows(), nt = target_X.rows();
    const int d = static_cast<int>(source_X.cols());

    // logistic regression on domain labels (1 = target), full batch Newton steps
    Mat Z(m + nt, d + 1);
    Z.col(0).setOnes();
    Z.block(0, 1, m, d) = source_X;
    Z.block(m, 1, nt, d) = target_X;
    Vec y(m + nt);
    y.head(m).setZero();
    y.tail(nt).setOnes();

    Vec beta = Vec::Zero(d + 1);
    bool separated = false;
    for (int it = 0; it < 200; ++it) {
        Vec eta = Z * beta;
        if (eta.cwiseAbs().maxCoeff() > 30.0) {
            separated = true;
            break;
        }
        Vec p = eta.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        Vec grad = Z.transpose() * (p - y);
        if (grad.cwiseAbs().maxCoeff() < 1e-10) break;
        Vec s = p.array() * (1.0 - p.array());
        Eigen::MatrixXd H = Z.transpose() * s.asDiagonal() * Z;
        H.diagonal().array() += 1e-10;
        Vec delta = H.ldlt().solve(grad);
        beta -= delta;
        if (delta.cwiseAbs().maxCoeff() < 1e-12) break;
    }

    Vec eta_s = Z.topRows(m) * beta;
    Vec w(m);
    for (long i = 0; i < m; ++i) w(i) = std::exp(eta_s(i));  // p/(1-p) = exp(eta)
    w = w.cwiseMin(100.0);
    w *= static_cast<double>(m) / w.sum();  // mean 1

    WeightVector out;
    out.w = w;
    out.ess = ess(w);
    out.method = "classifier";
    if (separated) out.note = "warning: near-perfect domain separation, weights clipped at 100";
    return out;
}

BaselineModel fit_weighted_erm(const Mat& X, const Vec& Y, const WeightVector& weights,
                               const BaselineHp& hp, Task task) {
    if (weights.w.size() != X.rows()) throw ConfigError("fit_weighted_erm: weight length mismatch");
    if ((weights.w.array() < 0.0).any())
        throw ConfigError("fit_weighted_erm: weights must be non-negative");
    if (weights.w.sum() == 0.0) throw ConfigError("fit_weighted_erm: all-zero weights");
    check_labels(Y, task);

    BaselineModel m;
    m.task = task;
    m.d_X = static_cast<int>(X.cols());
    m.weighting = weights.method;
    m.net = make_net(m.d_X, hp, task);
    auto opt = nnet::adam_new(m.net, hp.lr);
    LossSpec loss;
    loss.kind = LossKind::weighted_mse;
    loss.weights = &weights.w;
    nnet::fit(m.net, X, Y, loss, opt, hp.epochs, hp.batch_size,
              stream_key(hp.seed, "baseline-shuffle"));
    return m;
}

// ---------------------------------------------------------------------------
// Imputation

namespace {

Vec ridge_predict(const Mat& Xtr, const Vec& Ytr, const Mat& Xte, double lambda) {
    Vec x_mean = Xtr.colwise().mean();
    double y_mean = Ytr.mean();
    Mat Xc = Xtr.rowwise() - x_mean.transpose();
    Vec Yc = Ytr.array() - y_mean;
    Eigen::MatrixXd gram = Xc.transpose() * Xc;
    gram.diagonal().array() += lambda;
    Vec beta = gram.ldlt().solve(Xc.transpose() * Yc);
    return ((Xte.rowwise() - x_mean.transpose()) * beta).array() + y_mean;
}

struct TreeBuilder {
    const Mat& X;
    const Vec& Y;
    int max_depth;
    RegressionForest::Tree tree;

    int build(std::vector<long>& idx, long lo, long hi, int depth) {
        double sum = 0, sq = 0;
        for (long k = lo; k < hi; ++k) {
            sum += Y(idx[k]);
            sq += Y(idx[k]) * Y(idx[k]);
        }
        long n = hi - lo;
        double mean = sum / n;
        double sse = sq - sum * sum / n;

        int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes[node_id].value = mean;
        if (depth >= max_depth || n < 2 || sse <= 1e-12) return node_id;

        int best_f = -1;
        double best_gain = 0.0, best_thr = 0.0;
        std::vector<long> sorted(idx.begin() + lo, idx.begin() + hi);
        for (int f = 0; f < X.cols(); ++f) {
            std::sort(sorted.begin(), sorted.end(),
                      [&](long a, long b) { return X(a, f) < X(b, f); });
            double lsum = 0, lsq = 0;
            for (long k = 0; k + 1 < n; ++k) {
                double yv = Y(sorted[k]);
                lsum += yv;
                lsq += yv * yv;
                if (X(sorted[k], f) == X(sorted[k + 1], f)) continue;
                long nl = k + 1, nr = n - nl;
                double rsum = sum - lsum, rsq = sq - lsq;
                double sse_l = lsq - lsum * lsum / nl;
                double sse_r = rsq - rsum * rsum / nr;
                double gain = sse - sse_l - sse_r;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_f = f;
                    best_thr = 0.5 * (X(sorted[k], f) + X(sorted[k + 1], f));
                }
            }
        }
        if (best_f < 0) return node_id;

        auto mid_it = std::partition(idx.begin() + lo, idx.begin() + hi,
                                     [&](long a) { return X(a, best_f) <= best_thr; });
        long mid = mid_it - idx.begin();
        if (mid == lo || mid == hi) return node_id;

        tree.nodes[node_id].feature = best_f;
        tree.nodes[node_id].threshold = best_thr;
        int l = build(idx, lo, mid, depth + 1);
        int r = build(idx, mid, hi, depth + 1);
        tree.nodes[node_id].left = l;
        tree.nodes[node_id].right = r;
        return node_id;
    }
};

}  // namespace

double RegressionForest::Tree::predict(const Eigen::Ref<const Vec>& x) const {
    int cur = 0;
    while (nodes[cur].feature >= 0)
        cur = x(nodes[cur].feature) <= nodes[cur].threshold ? nodes[cur].left : nodes[cur].right;
    return nodes[cur].value;
}

Vec RegressionForest::predict(const Mat& X) const {
    Vec out = Vec::Zero(X.rows());
    for (const auto& t : trees)
        for (long i = 0; i < X.rows(); ++i) out(i) += t.predict(X.row(i).transpose());
    return out / static_cast<double>(trees.size());
}

RegressionForest fit_forest(const Mat& X, const Vec& Y, int n_trees, int max_depth,
                            std::uint64_t seed) {
    RegressionForest forest;
    forest.trees.resize(n_trees);
    const long n = X.rows();
    parallel_for(n_trees, [&](long t) {
        Rng rng(seed, "forest-bootstrap", static_cast<std::uint64_t>(t));
        std::vector<long> idx(n);
        for (long i = 0; i < n; ++i) idx[i] = static_cast<long>(rng.below(n));
        TreeBuilder builder{X, Y, max_depth, {}};
        builder.build(idx, 0, n, 0);
        forest.trees[t] = std::move(builder.tree);
    });
    return forest;
}

Imputer imputer_from_name(const std::string& name) {
    if (name == "mean" || name == "Mean") return Imputer::mean;
    if (name == "mice" || name == "MICE") return Imputer::mice;
    if (name == "forest" || name == "MF" || name == "MissForest") return Imputer::forest;
    throw ConfigError("unknown imputer: " + name);
}

std::string imputer_name(Imputer m) {
    switch (m) {
        case Imputer::mean: return "mean";
        case Imputer::mice: return "mice";
        case Imputer::forest: return "forest";
    }
    return "?";
}

Vec impute_pseudo_labels(const Mat& source_X, const Vec& source_Y, const Mat& target_X,
                         Imputer method, std::uint64_t seed) {
    if (target_X.rows() == 0) return Vec(0);
    switch (method) {
        case Imputer::mean:
            return Vec::Constant(target_X.rows(), source_Y.mean());
        case Imputer::mice: {
            // Y is the sole missing column: each round refits on the observed rows.
            Vec imputed = Vec::Constant(target_X.rows(), source_Y.mean());
            for (int round = 0; round < 20; ++round)
                imputed = ridge_predict(source_X, source_Y, target_X, 1e-6 * source_X.rows());
            return imputed;
        }
        case Imputer::forest: {
            Vec imputed = Vec::Constant(target_X.rows(), source_Y.mean());
            for (int round = 0; round < 25; ++round) {
                auto forest = fit_forest(source_X, source_Y, 100, 10,
                                         stream_key(seed, "missforest-round", round));
                imputed = forest.predict(target_X);
            }
            return imputed;
        }
    }
    throw ConfigError("bad imputer");
}

BaselineModel fit_pseudolabel(const Mat& source_X, const Vec& source_Y, const Mat& target_X,
                              Imputer method, Trainer trainer, double rho, const BaselineHp& hp,
                              Task task) {
    Vec imputed = impute_pseudo_labels(source_X, source_Y, target_X, method, hp.seed);
    Mat X(source_X.rows() + target_X.rows(), source_X.cols());
    Vec Y(X.rows());
    X.topRows(source_X.rows()) = source_X;
    Y.head(source_X.rows()) = source_Y;
    if (target_X.rows() > 0) {
        X.bottomRows(target_X.rows()) = target_X;
        Y.tail(target_X.rows()) = imputed;
    }
    BaselineModel m = trainer == Trainer::erm ? fit_erm(X, Y, hp, task)
                                              : fit_chisq_dro(X, Y, rho, hp, task);
    m.imputer = imputer_name(method);
    return m;
}

}  // namespace drum::baselines
