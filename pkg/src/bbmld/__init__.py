"""Large deviations of the leader in branching Brownian motion with selection.

Modules: ``analytic`` (rate functions and oracles), ``exponents`` (finite-size
correction exponents), ``sim`` and ``kernels`` (exact particle simulators),
``rare`` (Monte Carlo estimators), ``fkpp`` (deterministic front solver) and
``cli``.
"""
from ._jit import backend
from .params import MODELS, ModelParams

__version__ = "0.1.0"

__all__ = ["MODELS", "ModelParams", "backend", "__version__"]
