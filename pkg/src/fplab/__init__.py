"""Fokker-Planck laboratory.

Simulates diffusion processes on grids, instruments the entropy balance
dS/dt = e_p + Q_ex and the free-energy balance dF/dt = -e_p + Q_hk along the
solutions, and provides exact Ornstein-Uhlenbeck references, large-size
asymptotics and the discrete Markov-chain entropy decomposition.
"""

__version__ = "0.1.0"

from . import asympt, cli, fpsolve, markov, model, ougauss, thermo
from .errors import ConfigError, FplabError, ModelError, NumericsError, RegimeError

__all__ = [
    "model",
    "fpsolve",
    "thermo",
    "ougauss",
    "asympt",
    "markov",
    "cli",
    "FplabError",
    "ConfigError",
    "ModelError",
    "NumericsError",
    "RegimeError",
    "__version__",
]
