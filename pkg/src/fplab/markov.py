"""Entropy bookkeeping for one step of a finite-state Markov chain.

Three quantities in nats: the mean entropy generated along paths,
-sum_ij p_i P_ij ln P_ij; the entropy change of the state distribution,
H(p P) - H(p); and the folding entropy H(X_t | X_{t+1}), the uncertainty
about the past state given the next one.  Generated minus change equals
folding, an exact identity.  Terms with zero probability contribute zero
throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError

__all__ = [
    "MarkovChain",
    "step_distribution",
    "mean_entropy_generated",
    "mean_entropy_change",
    "folding_entropy",
    "decomposition_check",
]


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Distribution p over N states plus a row-stochastic transition matrix P."""

    p: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if p.ndim != 1 or P.shape != (p.size, p.size):
            raise ModelError("need a length-N distribution and an N x N matrix")
        if p.min() < 0 or abs(p.sum() - 1.0) > 1e-12:
            raise ModelError("p must be a probability distribution (sum 1 to 1e-12)")
        if P.min() < 0 or np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
            raise ModelError("P must be row-stochastic (row sums 1 to 1e-12)")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "P", P)


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def _entropy(p):
    return float(-_xlogx(p).sum())


def step_distribution(chain):
    """One-step evolved distribution p(t+1) = p P."""
    return chain.p @ chain.P


def mean_entropy_generated(chain):
    """Mean path entropy -sum_ij p_i P_ij ln P_ij; nonnegative."""
    joint_mask = (chain.p[:, None] > 0) & (chain.P > 0)
    P = np.where(joint_mask, chain.P, 1.0)
    return float(-(chain.p[:, None] * chain.P * np.log(P))[joint_mask].sum())


def mean_entropy_change(chain):
    """H(p(t+1)) - H(p(t)); either sign."""
    return _entropy(step_distribution(chain)) - _entropy(chain.p)


def folding_entropy(chain):
    """Conditional entropy H(X_t | X_{t+1}) under the joint p_i P_ij.

    The posterior is Pr{X_t = i | X_{t+1} = j} = p_i P_ij / (pP)_j; columns
    with zero mass are skipped.
    """
    joint = chain.p[:, None] * chain.P
    nxt = joint.sum(axis=0)
    total = 0.0
    for j in range(len(nxt)):
        if nxt[j] <= 0:
            continue
        post = joint[:, j] / nxt[j]
        total += nxt[j] * _entropy(post)
    return total


def decomposition_check(chain):
    """Residual |generated - change - folding| of the exact decomposition."""
    return abs(
        mean_entropy_generated(chain) - mean_entropy_change(chain) - folding_entropy(chain)
    )
