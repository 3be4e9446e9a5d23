#pragma once

#include "drum/common.hpp"
#include "drum/nnet.hpp"

#include <optional>
#include <string>

namespace drum {

enum class Task { regression, binary };

}  // namespace drum

namespace drum::baselines {

struct WeightVector {
    Vec w;             // non-negative, one per source row
    double ess = 0.0;  // (sum w)^2 / sum w^2
    std::string method;
    std::string note;  // diagnostics, e.g. perfect-separation warning
};

double ess(const Vec& w);

enum class Trainer { erm, chisq_dro };

struct BaselineHp {
    double lr = 1e-3;
    int epochs = 20;
    double rho = 0.25;  // chisq_dro radius
    std::vector<int> hidden = {128, 128};
    int batch_size = 128;
    std::uint64_t seed = 0;
};

// Every baseline regresses Y on X alone; predict() rejects any other width.
struct BaselineModel {
    nnet::DenseNet net;
    Trainer trainer = Trainer::erm;
    double rho = 0.0;
    Task task = Task::regression;
    int d_X = 0;
    std::string weighting;  // weight method tag, if any
    std::string imputer;    // imputation tag, if any

    Vec predict(const Mat& X) const;
};

BaselineModel fit_erm(const Mat& X, const Vec& Y, const BaselineHp& hp, Task task);

// Dual form of the chi-square-ball robust mean: inf_eta sqrt(1+2 rho) *
// sqrt(mean((l - eta)_+^2)) + eta, eta located by ternary search.
double chisq_robust_loss(const Vec& losses, double rho);

// Same value plus the envelope gradient wrt each per-example loss.
double chisq_robust_loss_grad(const Vec& losses, double rho, Vec& d_losses);

BaselineModel fit_chisq_dro(const Mat& X, const Vec& Y, double rho, const BaselineHp& hp,
                            Task task);

struct KmmOptions {
    std::optional<double> bandwidth;  // default: median pairwise-distance heuristic
    double b_cap = 1000.0;
    long max_iterations = 200000;
    double kkt_tol = 1e-4;
    std::uint64_t seed = 0;
};

WeightVector kmm_weights(const Mat& source_X, const Mat& target_X, const KmmOptions& opts = {});

WeightVector classifier_weights(const Mat& source_X, const Mat& target_X);

BaselineModel fit_weighted_erm(const Mat& X, const Vec& Y, const WeightVector& weights,
                               const BaselineHp& hp, Task task);

enum class Imputer { mean, mice, forest };

Imputer imputer_from_name(const std::string& name);
std::string imputer_name(Imputer m);

// mean: source-mean constant. mice: chained ridge regressions, 20 rounds.
// forest: same loop with a CART regression forest (100 trees, depth <= 10, 25 rounds).
Vec impute_pseudo_labels(const Mat& source_X, const Vec& source_Y, const Mat& target_X,
                         Imputer method, std::uint64_t seed);

BaselineModel fit_pseudolabel(const Mat& source_X, const Vec& source_Y, const Mat& target_X,
                              Imputer method, Trainer trainer, double rho, const BaselineHp& hp,
                              Task task);

// Regression forest shared by the imputer; exposed for its own tests.
struct RegressionForest {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        double value = 0.0;
        int left = -1, right = -1;
    };
    struct Tree {
        std::vector<Node> nodes;
        double predict(const Eigen::Ref<const Vec>& x) const;
    };
    std::vector<Tree> trees;
    Vec predict(const Mat& X) const;
};

RegressionForest fit_forest(const Mat& X, const Vec& Y, int n_trees, int max_depth,
                            std::uint64_t seed);

}  // namespace drum::baselines
