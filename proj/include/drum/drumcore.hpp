#pragma once

#include "drum/baselines.hpp"  // Task
#include "drum/common.hpp"
#include "drum/nnet.hpp"

#include <optional>

namespace drum::core {

struct OutcomeModel {
    nnet::DenseNet net;  // (x, a) -> prediction; sigmoid head for binary
    int d_X = 0, d_A = 0;
    Task task = Task::regression;
    std::vector<double> epoch_loss;

    Vec eval(const Mat& X, const Mat& A) const;
};

struct OutcomeHp {
    double lr = 1e-5;
    int epochs = 100;
    std::vector<int> hidden = {128, 128};
    int batch_size = 128;
    std::uint64_t seed = 0;
};

OutcomeModel fit_outcome_model(const Mat& X, const Mat& A, const Vec& Y, const OutcomeHp& hp,
                               Task task);

enum class GenKind { unconstrained, conditional };

struct Generator {
    GenKind kind = GenKind::unconstrained;
    nnet::DenseNet net;  // eps -> A, or (x, eps) -> A
    int q = 4;
    int d_X = 0, d_A = 0;

    // Unconstrained generators ignore X entirely (pass nullptr or anything).
    Mat sample(const Mat* X, const Mat& eps) const;
    Mat sample_eps(std::uint64_t eps_key, long rows) const;  // N(0, I_q) draws
};

// Empirical energy score with one (eps, eps') pair per example (Alg. 2 batch form).
double energy_score(const Generator& gen, const Mat& X, const Mat& A, std::uint64_t eps_seed);

struct EngressionHp {
    double lr = 5e-4;
    int hidden = 16;
    int q = 32;  // noise dimension
    int epochs = 500;
    int batch_size = 128;
    std::uint64_t seed = 0;
};

// Learns the source conditional generator; second element is the full-sample
// baseline energy En(g^S).
std::pair<Generator, double> fit_source_engression(const Mat& X, const Mat& A,
                                                   const EngressionHp& hp);

struct WorstCaseHp {
    int q = 4;
    int L = 256;
    double lr = 1e-5;
    int epochs = 300;
    std::vector<int> hidden = {128, 128};
    int batch_size = 128;
    std::uint64_t seed = 0;
};

struct WorstCaseFit {
    Generator gen;
    std::vector<double> objective_per_epoch;  // recorded loss trajectory
};

WorstCaseFit fit_worstcase_unconstrained(const OutcomeModel& f, const Mat& target_X,
                                         const WorstCaseHp& hp);

struct EnergyBudget {
    double baseline_energy = 0.0;  // En(g^S)
    double delta = 0.3;
    double dual_lambda = 0.0;
    double final_gap = 0.0;  // full-sample energy gap after training
    bool lambda_capped = false;
    std::vector<double> lambda_trajectory;
    std::vector<double> gap_trajectory;
};

struct ConstrainedHp {
    double primal_lr = 2e-4;
    double dual_lr = 1e-4;
    double clip = 2.0;
    int steps = 80;  // total primal-dual iterations
    int L = 256;
    int batch_source = 128;
    int batch_target = 128;
    std::uint64_t seed = 0;
};

WorstCaseFit fit_worstcase_constrained(const OutcomeModel& f, const Mat& source_X,
                                       const Mat& source_A, const Mat& target_X,
                                       const Generator& g_source, EnergyBudget& budget,
                                       const ConstrainedHp& hp);

struct RobustPredictor {
    OutcomeModel outcome;
    Generator gen;
    int L = 256;
    std::uint64_t prediction_seed = 0;
};

// m(x) = (1/L) sum_l f(x, g(., eps_l)); one eps panel shared across all rows of a call.
Vec predict(const RobustPredictor& rp, const Mat& X);
Vec predict_with_seed(const RobustPredictor& rp, const Mat& X, std::uint64_t eps_key);

// (1/N) sum_j m(X_j)^2 over the full target set.
double robust_value(const OutcomeModel& f, const Generator& gen, const Mat& target_X, int L,
                    std::uint64_t eps_key);

// Shared kernel: per-row Monte-Carlo mean of f through the generator. When
// shared_panel, the same L noise draws serve every row; otherwise draws are
// per (row, l). d_mean_fn(row, m_row) supplies d objective / d m_row, which is
// backpropagated into generator parameter gradients (f stays frozen).
using DMeanFn = std::function<double(long, double)>;

Vec mc_mean_rows(const OutcomeModel& f, const Generator& gen, const Mat& X, int L,
                 std::uint64_t eps_key, bool shared_panel, const DMeanFn* d_mean_fn = nullptr,
                 nnet::NetGrads* gen_grads = nullptr);

}  // namespace drum::core
