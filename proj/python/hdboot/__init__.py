"""Resampling inference for high-dimensional M-estimation."""

from ._core import (
    HdbootError,
    Loss,
    boot_var_prediction,
    bootstrap,
    calibrate_alpha,
    deconvolve_cdf,
    fit,
    gamma_hat,
    gen_design,
    gen_errors,
    jackknife,
    jackknife_factor,
    run_experiment,
    solve_c,
    solve_risk_system,
)

__all__ = [
    "HdbootError",
    "Loss",
    "boot_var_prediction",
    "bootstrap",
    "calibrate_alpha",
    "deconvolve_cdf",
    "fit",
    "gamma_hat",
    "gen_design",
    "gen_errors",
    "jackknife",
    "jackknife_factor",
    "run_experiment",
    "solve_c",
    "solve_risk_system",
]
