"""Receding-horizon building control workbench.

Compares a linear state-space model with a kernel power regressor against an
LSTM encoder-decoder as predictors inside a sequential-quadratic-programming
controller that minimizes grid power exchange under comfort constraints.
"""

__version__ = "0.1.0"
