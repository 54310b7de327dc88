"""Exact engine for Ornstein-Uhlenbeck dynamics and Gaussian laws.

Provides moment propagation through the covariance equation
C' = 2 D / alpha + B C + C B^T, algebraic Lyapunov solves, Gaussian entropy,
and closed forms for the entropy production rate, heat exchange rate,
relative-entropy free energy and house-keeping heat of a Gaussian state.
These closed forms are the reference values the grid solver is checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import cholesky, expm, solve_triangular

from .errors import ModelError, NumericsError

__all__ = [
    "GaussianState",
    "OUSpec",
    "from_system",
    "propagate",
    "gaussian_entropy",
    "gaussian_entropy_rate",
    "ou_entropy_production",
    "ou_heat_exchange",
    "stationary_covariance",
    "lyapunov_solve",
    "ou_rate_function",
    "wkb_covariance",
    "ou_free_energy_and_qhk",
    "ou_free_energy_rate",
]

_LOG_2PI_E = np.log(2.0 * np.pi * np.e)


def _check_spd(mat, what):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ModelError(f"{what} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(mat).max())):
        raise ModelError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() <= 0.0:
        raise ModelError(f"{what} must be positive definite")
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean vector and covariance matrix of a Gaussian law."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _check_spd(self.cov, "covariance")
        if cov.shape[0] != mean.shape[0]:
            raise ModelError("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class OUSpec:
    """Linear system dx = B x dt + sqrt(2 D / alpha) dW."""

    B: np.ndarray
    D: np.ndarray
    alpha: float

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        D = _check_spd(self.D, "diffusion")
        if B.shape != D.shape:
            raise ModelError("B and D shapes differ")
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ModelError("alpha must be positive")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @property
    def dim(self):
        return self.B.shape[0]

    @property
    def is_hurwitz(self):
        return np.linalg.eigvals(self.B).real.max() < 0.0


def from_system(spec):
    """OUSpec view of a linear constant-diffusion SystemSpec."""
    if spec.linear is None:
        raise ModelError(f"system '{spec.name}' has no linear-drift metadata")
    if not spec.constant_diffusion:
        raise ModelError(f"system '{spec.name}' has state-dependent diffusion")
    zero = np.zeros(spec.dim)
    from .model import eval_diffusion

    return OUSpec(B=np.asarray(spec.linear, dtype=float), D=eval_diffusion(spec, zero), alpha=spec.alpha)


def _require_hurwitz(ou):
    if not ou.is_hurwitz:
        raise ModelError("drift matrix is not Hurwitz; no stationary Gaussian exists")


def _chol_rhs_factory(ou):
    """Right-hand side for the covariance ODE in Cholesky-factor coordinates.

    With C = L L^T, the factor obeys L' = L Phi(L^{-1} M L^{-T}) where
    M = 2 D / alpha + B C + C B^T and Phi takes the strictly-lower part plus
    half the diagonal; this keeps C positive definite by construction.
    """
    n = ou.dim
    two_d = 2.0 * ou.D / ou.alpha
    B = ou.B

    def rhs(_t, y):
        L = y.reshape(n, n)
        C = L @ L.T
        M = two_d + B @ C + C @ B.T
        Y = solve_triangular(L, solve_triangular(L, M, lower=True).T, lower=True).T
        Phi = np.tril(Y, -1) + 0.5 * np.diag(np.diag(Y))
        return (L @ Phi).ravel()

    return rhs


def propagate(ou, init, t):
    """Evolve a Gaussian state for time t >= 0.

    The mean follows mu(t) = expm(B t) mu(0); the covariance ODE
    C' = 2 D / alpha + B C + C B^T is integrated in Cholesky coordinates with
    a high-order adaptive method (local tolerance 1e-12).
    """
    if t < 0:
        raise ModelError("propagation time must be nonnegative")
    if init.dim != ou.dim:
        raise ModelError("state and system dimensions differ")
    if t == 0.0:
        return GaussianState(init.mean.copy(), init.cov.copy())
    mean = expm(ou.B * t) @ init.mean
    L0 = cholesky(init.cov, lower=True)
    sol = solve_ivp(
        _chol_rhs_factory(ou),
        (0.0, float(t)),
        L0.ravel(),
        method="DOP853",
        rtol=1e-12,
        atol=1e-12,
        dense_output=False,
    )
    if not sol.success:
        raise NumericsError(f"covariance integration failed: {sol.message}")
    L = sol.y[:, -1].reshape(ou.dim, ou.dim)
    return GaussianState(mean, L @ L.T)


def gaussian_entropy(state):
    """Differential entropy (nats): N/2 ln(2 pi e) + 1/2 ln det C."""
    sign, logdet = np.linalg.slogdet(state.cov)
    if sign <= 0:
        raise ModelError("covariance must be positive definite")
    return 0.5 * state.dim * _LOG_2PI_E + 0.5 * logdet


class EntropyRate(NamedTuple):
    """dS/dt of a Gaussian state in its two algebraically equal forms."""

    trace_form: float
    divergence_form: float


def gaussian_entropy_rate(ou, state):
    """dS/dt = (1/2) tr(C^{-1} C') and, equivalently, div b + D : (alpha C)^{-1}.

    Both forms are returned; they agree to rounding by Jacobi's formula.
    """
    C = state.cov
    Cdot = 2.0 * ou.D / ou.alpha + ou.B @ C + C @ ou.B.T
    Cinv = np.linalg.inv(C)
    trace_form = 0.5 * float(np.trace(Cinv @ Cdot))
    divergence_form = float(np.trace(ou.B)) + float(np.sum(ou.D * Cinv)) / ou.alpha
    return EntropyRate(trace_form, divergence_form)


def _velocity_matrix(ou, state):
    """M with flux velocity v(x) = M (x - mu) + B mu for a Gaussian density."""
    return ou.B + ou.D @ np.linalg.inv(state.cov) / ou.alpha


def ou_entropy_production(ou, state):
    """Entropy production rate alpha E[v . D^{-1} v] of a Gaussian state.

    The flux velocity is v(x) = b(x) - (D/alpha) grad ln f; Gaussian moment
    identities reduce the defining integral to traces.
    """
    M = _velocity_matrix(ou, state)
    Dinv = np.linalg.inv(ou.D)
    bmu = ou.B @ state.mean
    value = ou.alpha * (
        float(np.trace(M.T @ Dinv @ M @ state.cov)) + float(bmu @ Dinv @ bmu)
    )
    return value


def ou_heat_exchange(ou, state):
    """Heat exchange rate -alpha E[v . D^{-1} b]; can have either sign."""
    M = _velocity_matrix(ou, state)
    Dinv = np.linalg.inv(ou.D)
    bmu = ou.B @ state.mean
    return -ou.alpha * (
        float(np.trace(M.T @ Dinv @ ou.B @ state.cov)) + float(bmu @ Dinv @ bmu)
    )


def lyapunov_solve(B, Q):
    """Solve B X + X B^T + Q = 0 by Kronecker linearization with one
    refinement pass; intended for the small dimensions used here."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = B.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, B) + np.kron(B, eye)
    try:
        X = np.linalg.solve(K, -Q.ravel()).reshape(n, n)
        resid = B @ X + X @ B.T + Q
        X = X + np.linalg.solve(K, -resid.ravel()).reshape(n, n)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"Lyapunov solve failed: {exc}") from exc
    return 0.5 * (X + X.T)


def stationary_covariance(ou):
    """Stationary covariance C_ss solving 2 D / alpha + B C + C B^T = 0."""
    _require_hurwitz(ou)
    C = lyapunov_solve(ou.B, 2.0 * ou.D / ou.alpha)
    if np.linalg.eigvalsh(C).min() <= 0.0:
        raise NumericsError("stationary covariance is not positive definite")
    return C


def wkb_covariance(ou, t, sigma0=None):
    """Covariance Sigma(t) of the quadratic rate function, solving
    Sigma' = 2 D + B Sigma + Sigma B^T from Sigma(0) = sigma0 (default 0,
    the point-mass start).  Computed exactly via a block matrix exponential.
    """
    n = ou.dim
    if sigma0 is None:
        sigma0 = np.zeros((n, n))
    else:
        sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = ou.B
    blk[:n, n:] = 2.0 * ou.D
    blk[n:, n:] = -ou.B.T
    F = expm(blk * float(t))
    ebt = F[:n, :n]
    integral = F[:n, n:] @ ebt.T
    sigma = ebt @ sigma0 @ ebt.T + integral
    return 0.5 * (sigma + sigma.T)


def ou_rate_function(ou, x0, t, x, sigma0=None):
    """Quadratic rate function (1/2)(x - e^{Bt} x0) . Sigma(t)^{-1} (x - e^{Bt} x0).

    Requires t > 0 unless a positive-definite sigma0 is supplied, since the
    point-mass start makes Sigma(0) singular.
    """
    if t <= 0 and sigma0 is None:
        raise ModelError("rate function undefined at t <= 0 for a point-mass start")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sigma = wkb_covariance(ou, t, sigma0)
    center = expm(ou.B * float(t)) @ x0
    dev = x - center
    return 0.5 * float(dev @ np.linalg.solve(sigma, dev))


def _free_energy(ou, state, css):
    dev = state.mean
    cssinv = np.linalg.inv(css)
    sign_c, logdet_c = np.linalg.slogdet(state.cov)
    sign_s, logdet_s = np.linalg.slogdet(css)
    if sign_c <= 0 or sign_s <= 0:
        raise ModelError("covariances must be positive definite")
    return 0.5 * (
        float(np.trace(cssinv @ state.cov))
        - ou.dim
        + float(dev @ cssinv @ dev)
        + logdet_s
        - logdet_c
    )


def ou_free_energy_and_qhk(ou, state):
    """Relative entropy to the stationary Gaussian and the house-keeping
    heat rate alpha E[v_ss . D^{-1} v_ss], v_ss(x) = (B + D (alpha C_ss)^{-1}) x."""
    css = stationary_covariance(ou)
    F = _free_energy(ou, state, css)
    Mss = ou.B + ou.D @ np.linalg.inv(css) / ou.alpha
    Dinv = np.linalg.inv(ou.D)
    A = Mss.T @ Dinv @ Mss
    qhk = ou.alpha * (float(np.trace(A @ state.cov)) + float(state.mean @ A @ state.mean))
    return F, qhk


def ou_free_energy_rate(ou, state):
    """Chain-rule dF/dt of the relative entropy along the moment flow."""
    css = stationary_covariance(ou)
    cssinv = np.linalg.inv(css)
    C = state.cov
    Cdot = 2.0 * ou.D / ou.alpha + ou.B @ C + C @ ou.B.T
    mudot = ou.B @ state.mean
    return 0.5 * float(np.trace((cssinv - np.linalg.inv(C)) @ Cdot)) + float(
        mudot @ cssinv @ state.mean
    )
