"""Sinh-transformed short-rate model: analytic caplet and swaption pricing,
effective-variance implied vols, calibration and a Monte Carlo oracle."""

from .drift import DriftTable, r1_star, r2_star
from .implied import (EffectiveVariance, effective_variance, hw_baseline_price, implied_hw_vol,
                      model_implied_vol)
from .marketcal import CalibrationReport, Quote, QuoteSurface, calibrate
from .model import ModelParams, load_model, save_model
from .numerics import QuadratureSpec
from .oracle import McConfig, mc_discount, mc_price, mc_price_many
from .pricing import InstrumentSpec, PriceResult, forward_rate, price, zcb_price
from .termstructure import DiscountCurve, DomainError, InputFormatError, PiecewiseCurve

__version__ = "0.1.0"

__all__ = [
    "CalibrationReport", "DiscountCurve", "DomainError", "DriftTable", "EffectiveVariance",
    "InputFormatError", "InstrumentSpec", "McConfig", "ModelParams", "PiecewiseCurve",
    "PriceResult", "QuadratureSpec", "Quote", "QuoteSurface", "calibrate", "effective_variance",
    "forward_rate", "hw_baseline_price", "implied_hw_vol", "load_model", "mc_discount",
    "mc_price", "mc_price_many", "model_implied_vol", "price", "r1_star", "r2_star", "save_model",
    "zcb_price",
]
