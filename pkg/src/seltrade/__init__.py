"""Selective-classification trading research engine.

Pipeline: ticks -> 30-minute bars -> nested feature sets -> binary/ternary
labels -> walk-forward folds -> probabilistic classifiers with MCC grid
search -> guaranteed-risk selective thresholds -> slippage-aware backtests.
"""

__version__ = "0.1.0"
