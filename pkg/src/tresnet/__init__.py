"""Targeted regularization for shift-response functions with varying-coefficient networks."""
from .data import Dataset, gen_linear, gen_nonlinear, load_csv, mise, oracle_srf, save_csv, split
from .estimators import (SrfEstimate, aipw_srf, bootstrap_ensemble, eee_residual, eif, erf_plugin,
                         plugin_srf, tr_srf)
from .family import ExponentialFamily, get_family
from .model import ModelConfig, TresnetModel, load_model, save_model
from .shifts import ShiftFamily, ShiftSpec, apply_shift, parse_shifts, shift_grid
from .training import TrainConfig, refit_epsilon, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ExponentialFamily", "ModelConfig", "ShiftFamily", "ShiftSpec", "SrfEstimate", "TrainConfig",
    "TresnetModel", "aipw_srf", "apply_shift", "bootstrap_ensemble", "eee_residual", "eif", "erf_plugin",
    "gen_linear", "gen_nonlinear", "get_family", "load_csv", "load_model", "mise", "oracle_srf",
    "parse_shifts", "plugin_srf", "refit_epsilon", "save_csv", "save_model", "shift_grid", "split",
    "train", "tr_srf",
]
