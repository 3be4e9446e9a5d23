#pragma once

#include "drum/common.hpp"

#include <functional>
#include <optional>

namespace drum::metrics {

struct McEvaluation {
    std::vector<double> per_set;  // normalized mse per Monte-Carlo test set
    double worst = 0.0;
    double mean = 0.0;
    double normalizer = 0.0;  // Var^(Y source)
};

double normalized_mse(const Vec& pred, const Vec& truth, double var_y_source);
McEvaluation mc_summarize(const std::vector<double>& mses, double normalizer = 0.0);

double brier(const Vec& pred_probs, const Vec& labels);

struct CalibrationPoint {
    double mean_pred = 0.0;
    double observed = 0.0;
    long count = 0;
};

// Quantile binning: sort by predicted probability (stable on ties), split into
// `bins` equal-count groups.
std::pair<double, std::vector<CalibrationPoint>> ece_quantile(const Vec& pred_probs,
                                                              const Vec& labels, int bins = 10);

double auroc(const Vec& pred, const Vec& labels);
double auprc(const Vec& pred, const Vec& labels);

struct CutoffReport {
    double f1 = 0.0, precision = 0.0, recall = 0.0, specificity = 0.0;
};

CutoffReport fixed_cutoff(const Vec& pred, const Vec& labels, double t);

struct BootstrapCI {
    double point = 0.0, lo = 0.0, hi = 0.0;
    long B = 2000;
    std::optional<double> paired_p;
};

// stat receives resampled row indices. Percentile CI at 2.5/97.5. In paired mode
// both methods are evaluated on the same resample, and the p-value is the
// two-sided sign fraction of the replicate differences (p = 1 when all zero).
using RowStat = std::function<double(const std::vector<long>&)>;

BootstrapCI bootstrap(const RowStat& stat, long n_rows, long B, std::uint64_t seed,
                      const RowStat* paired_reference = nullptr);

}  // namespace drum::metrics
