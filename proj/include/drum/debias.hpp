#pragma once

#include "drum/common.hpp"
#include "drum/drumcore.hpp"
#include "drum/nnet.hpp"

namespace drum::debias {

struct FoldPlan {
    int K = 3;
    std::vector<std::vector<long>> source_folds;
    std::vector<std::vector<long>> target_folds;
    std::uint64_t seed = 0;
};

FoldPlan make_folds(long n, long N, int K, std::uint64_t seed);

struct DensityRatioModel {
    nnet::DenseNet classifier;  // (x, a) -> p(source)
    double clip_bound = 20.0;   // M_omega
    int fold = -1;

    // raw (1 - p)/p, clipped at clip_bound
    Vec raw_weights(const Mat& X, const Mat& A) const;
};

// Clip at M_omega, then normalize to unit mean (iterated to a joint fixed point).
Vec normalize_weights(Vec w, double m_omega);

struct DensityRatioHp {
    double lr = 1e-5;
    int epochs = 200;
    std::vector<int> hidden = {128, 128};
    int batch_size = 128;
    double m_omega = 20.0;
    std::uint64_t seed = 0;
};

DensityRatioModel fit_density_ratio(const Mat& source_X, const Mat& source_A,
                                    const Mat& synth_X, const Mat& synth_A,
                                    const DensityRatioHp& hp);

// The cross-fitted debiased objective at a fixed generator: plug-in target term
// plus the correction 2 * mean_i(w_i * mu(X_i) * R_i), with mu the Monte-Carlo
// mean of f through the generator (one shared eps panel for evaluation).
double debiased_objective(const core::OutcomeModel& f, const core::Generator& gen,
                          const Mat& target_X, const Mat& source_X, const Vec& residuals,
                          const Vec& weights, int L, std::uint64_t eps_key);

// Same, without the correction term (the plug-in objective on the target rows).
double plugin_objective(const core::OutcomeModel& f, const core::Generator& gen,
                        const Mat& target_X, int L, std::uint64_t eps_key);

struct DebiasedGenHp {
    // unconstrained variant: fresh generator, trained for `epochs` epochs at `lr`
    // conditional variant: starts from the preliminary generator, `steps` iterations
    core::WorstCaseHp unconstrained;
    int conditional_steps = 80;
    double conditional_lr = 2e-4;
    double conditional_clip = 2.0;
    int batch_source = 128;
    int batch_target = 128;
    std::uint64_t seed = 0;
};

core::Generator debiased_generator_fit(const core::OutcomeModel& f_fold, const Mat& source_X,
                                       const Vec& residuals, const Vec& weights,
                                       const Mat& target_X, core::GenKind kind,
                                       const core::Generator* init, const DebiasedGenHp& hp);

struct PseudoOutcomeSet {
    Mat X;   // pooled (n + N) x d_X
    Vec F;   // pseudo-outcomes
    double r = 1.0;  // n / N
    std::vector<int> is_source;  // 1 source, 0 target
};

// Assembles pseudo-outcomes under the mod-K rotation: fold k's models score fold
// k+1, residuals/weights come from the previous fold's nuisances, and the target
// plug-in term uses f^(k-1) through g^(k). Throws IntegrityError if any model
// would score its own training rows.
PseudoOutcomeSet pseudo_outcomes(const FoldPlan& folds,
                                 const std::vector<core::OutcomeModel>& f_fold,
                                 const std::vector<DensityRatioModel>& omega_fold,
                                 const std::vector<core::Generator>& gen_fold,
                                 const Mat& source_X, const Mat& source_A, const Vec& source_Y,
                                 const Mat& target_X, double m_omega, int L, std::uint64_t seed);

struct DebiasedPredictor {
    nnet::DenseNet net;  // x -> prediction
    Task task = Task::regression;
    int d_X = 0;
    std::uint64_t fold_seed = 0;
    std::string provenance;  // nuisance hyperparameter digest

    Vec predict(const Mat& X) const;  // binary predictions clamped to [0, 1]
};

struct FinalRegressionHp {
    double lr = 1e-5;
    int epochs = 300;
    std::vector<int> hidden = {128, 128};
    int batch_size = 128;
    std::uint64_t seed = 0;
};

DebiasedPredictor fit_debiased_predictor(const PseudoOutcomeSet& pseudo,
                                         const FinalRegressionHp& hp, Task task);

struct DrumDebiasedHp {
    core::OutcomeHp outcome;
    core::WorstCaseHp worstcase;          // preliminary generator (unconstrained variant)
    core::EngressionHp engression;        // conditional variant
    core::ConstrainedHp constrained;      // conditional variant
    double delta = 0.3;
    DensityRatioHp density_ratio;
    DebiasedGenHp fold_generator;
    FinalRegressionHp final_regression;
    int K = 3;
    int L = 256;
    std::uint64_t seed = 0;
};

struct DrumDebiasedResult {
    DebiasedPredictor predictor;
    core::OutcomeModel outcome;       // full-data f, reused by the harness
    core::Generator preliminary_gen;  // g(0)
    core::EnergyBudget budget;        // conditional variant only
    PseudoOutcomeSet pseudo;
};

// Full Algorithm-4 pipeline. The conditional variant substitutes g(x, eps)
// wherever the unconstrained pseudocode writes g(eps). Pretrained stages can be
// injected so the harness shares them across DRUM variants.
DrumDebiasedResult drum_debiased(const Mat& source_X, const Mat& source_A, const Vec& source_Y,
                                 const Mat& target_X, core::GenKind variant,
                                 const DrumDebiasedHp& hp, Task task,
                                 const core::OutcomeModel* pretrained_outcome = nullptr,
                                 const core::Generator* pretrained_gen = nullptr,
                                 const core::EnergyBudget* pretrained_budget = nullptr);

}  // namespace drum::debias
