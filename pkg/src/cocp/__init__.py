"""Conformal intervals with a learned center and radius.

Submodules: ``nn`` (MLP and training), ``losses``, ``distributions``
(synthetic conditional laws and their oracles), ``data``, ``conformal``,
``trainer``, ``metrics``, ``theory``, ``experiment`` and ``cli``.
"""

from .conformal import IntervalModel, calibrate, conformal_quantile, predict_interval
from .data import generate_synthetic, make_split_plan
from .distributions import make_family
from .trainer import CocpConfig, fit_cocp

__version__ = "0.1.0"

__all__ = [
    "CocpConfig",
    "IntervalModel",
    "calibrate",
    "conformal_quantile",
    "fit_cocp",
    "generate_synthetic",
    "make_family",
    "make_split_plan",
    "predict_interval",
]
