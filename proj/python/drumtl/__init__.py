"""Distributionally robust unsupervised transfer learning with structurally
missing covariates.

The heavy lifting lives in the compiled extension; this package re-exports it.
"""

from drumtl._core import (  # noqa: F401
    ConfigError,
    DebiasedPredictor,
    DenseNet,
    DivergenceError,
    Generator,
    InputError,
    OutcomeModel,
    auprc,
    auroc,
    brier,
    chisq_robust_loss,
    classifier_weights,
    coeff_matrix,
    drum_debiased,
    ece_quantile,
    energy_score,
    ess,
    fbar_eval,
    fit_outcome_model,
    fit_worstcase_unconstrained,
    fixed_cutoff,
    gen_perturbed_test,
    gen_source,
    gen_target,
    grad_check,
    impute_pseudo_labels,
    kmm_weights,
    net_new,
    normalized_mse,
    predict_robust,
    run_experiment,
    set_thread_count,
    simulate,
    thread_count,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
