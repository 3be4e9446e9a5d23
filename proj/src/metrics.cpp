#include "drum/metrics.hpp"
#include "drum/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace drum::metrics {

namespace {

void check_binary(const Vec& pred, const Vec& labels, bool probs) {
    if (pred.size() != labels.size()) throw InputError("metric: length mismatch");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        if (labels(i) != 0.0 && labels(i) != 1.0)
            throw InputError("metric: labels must be 0/1");
    if (probs)
        for (Eigen::Index i = 0; i < pred.size(); ++i)
            if (!(pred(i) >= 0.0 && pred(i) <= 1.0))
                throw InputError("metric: probabilities must lie in [0, 1]");
}

}  // namespace

double normalized_mse(const Vec& pred, const Vec& truth, double var_y_source) {
    if (pred.size() != truth.size()) throw InputError("normalized_mse: length mismatch");
    if (!(var_y_source > 0.0)) throw InputError("normalized_mse: normalizer must be positive");
    return (pred - truth).squaredNorm() / static_cast<double>(pred.size()) / var_y_source;
}

McEvaluation mc_summarize(const std::vector<double>& mses, double normalizer) {
    if (mses.empty()) throw InputError("mc_summarize: empty list");
    McEvaluation ev;
    ev.per_set = mses;
    ev.worst = *std::max_element(mses.begin(), mses.end());
    ev.mean = std::accumulate(mses.begin(), mses.end(), 0.0) / static_cast<double>(mses.size());
    ev.normalizer = normalizer;
    return ev;
}

double brier(const Vec& pred_probs, const Vec& labels) {
    check_binary(pred_probs, labels, true);
    return (pred_probs - labels).squaredNorm() / static_cast<double>(pred_probs.size());
}

std::pair<double, std::vector<CalibrationPoint>> ece_quantile(const Vec& pred_probs,
                                                              const Vec& labels, int bins) {
    check_binary(pred_probs, labels, true);
    const long n = pred_probs.size();
    if (n < bins) throw InputError("ece_quantile: need at least one sample per bin");

    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return pred_probs(a) < pred_probs(b); });

    double ece = 0.0;
    std::vector<CalibrationPoint> points;
    for (int b = 0; b < bins; ++b) {
        long lo = b * n / bins;
        long hi = (b + 1) * n / bins;
        if (hi <= lo) continue;
        double sp = 0, sy = 0;
        for (long k = lo; k < hi; ++k) {
            sp += pred_probs(order[k]);
            sy += labels(order[k]);
        }
        long nb = hi - lo;
        CalibrationPoint pt{sp / nb, sy / nb, nb};
        ece += (static_cast<double>(nb) / n) * std::abs(pt.mean_pred - pt.observed);
        points.push_back(pt);
    }
    return {ece, points};
}

double auroc(const Vec& pred, const Vec& labels) {
    check_binary(pred, labels, false);
    const long n = pred.size();
    long n_pos = 0;
    for (long i = 0; i < n; ++i) n_pos += labels(i) == 1.0;
    long n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InputError("auroc: both classes required");

    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](long a, long b) { return pred(a) < pred(b); });

    // rank-sum with midranks on ties
    double rank_sum_pos = 0.0;
    long i = 0;
    while (i < n) {
        long j = i;
        while (j < n && pred(order[j]) == pred(order[i])) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (long k = i; k < j; ++k)
            if (labels(order[k]) == 1.0) rank_sum_pos += midrank;
        i = j;
    }
    return (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

double auprc(const Vec& pred, const Vec& labels) {
    check_binary(pred, labels, false);
    const long n = pred.size();
    long n_pos = 0;
    for (long i = 0; i < n; ++i) n_pos += labels(i) == 1.0;
    if (n_pos == 0 || n_pos == n) throw InputError("auprc: both classes required");

    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](long a, long b) { return pred(a) > pred(b); });

    // step integration over distinct thresholds: AP = sum dR * precision
    double ap = 0.0;
    long tp = 0, fp = 0;
    double prev_recall = 0.0;
    long i = 0;
    while (i < n) {
        long j = i;
        while (j < n && pred(order[j]) == pred(order[i])) ++j;
        for (long k = i; k < j; ++k) {
            if (labels(order[k]) == 1.0)
                ++tp;
            else
                ++fp;
        }
        double recall = static_cast<double>(tp) / n_pos;
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

CutoffReport fixed_cutoff(const Vec& pred, const Vec& labels, double t) {
    check_binary(pred, labels, false);
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        bool hat = pred(i) >= t;
        bool y = labels(i) == 1.0;
        if (hat && y) ++tp;
        else if (hat && !y) ++fp;
        else if (!hat && !y) ++tn;
        else ++fn;
    }
    CutoffReport r;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    r.specificity = (tn + fp) > 0 ? static_cast<double>(tn) / (tn + fp) : 1.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                          : 0.0;
    return r;
}

BootstrapCI bootstrap(const RowStat& stat, long n_rows, long B, std::uint64_t seed,
                      const RowStat* paired_reference) {
    if (B < 1) throw InputError("bootstrap: B must be >= 1");
    std::vector<long> identity(n_rows);
    std::iota(identity.begin(), identity.end(), 0);

    BootstrapCI ci;
    ci.B = B;
    ci.point = stat(identity);

    std::vector<double> values(B), diffs;
    if (paired_reference) diffs.resize(B);
    parallel_for(B, [&](long b) {
        Rng rng(seed, "bootstrap", static_cast<std::uint64_t>(b));
        std::vector<long> rows(n_rows);
        for (long i = 0; i < n_rows; ++i) rows[i] = static_cast<long>(rng.below(n_rows));
        values[b] = stat(rows);
        if (paired_reference) diffs[b] = values[b] - (*paired_reference)(rows);
    });

    std::sort(values.begin(), values.end());
    auto percentile = [&](double q) {
        double pos = q * (B - 1);
        long lo = static_cast<long>(std::floor(pos));
        long hi = std::min<long>(B - 1, lo + 1);
        double w = pos - lo;
        if (values[lo] == values[hi]) return values[lo];
        return (1.0 - w) * values[lo] + w * values[hi];
    };
    ci.lo = percentile(0.025);
    ci.hi = percentile(0.975);

    if (paired_reference) {
        long nonzero = 0, le = 0, ge = 0;
        for (double d : diffs) {
            if (d != 0.0) ++nonzero;
            if (d <= 0.0) ++le;
            if (d >= 0.0) ++ge;
        }
        if (nonzero == 0)
            ci.paired_p = 1.0;
        else
            ci.paired_p = std::min(1.0, 2.0 * std::min(static_cast<double>(le),
                                                       static_cast<double>(ge)) /
                                            static_cast<double>(B));
    }
    return ci;
}

}  // namespace drum::metrics
