"""Large-size asymptotics around the deterministic flow.

Covers the deterministic characteristic dx/dt = b(x), propagation of local
Gaussian fluctuations along it, rate-function curvature estimated from grid
densities, the O(1) entropy balance dS/dt = div b + D : hess(phi), extraction
of the O(alpha) coefficients of e_p and Q_ex from a size sweep together with
their cancellation, Gaussian fourth-moment tensors, the stationary-landscape
orthogonality gamma . grad(phi_ss) = 0 with its Pythagorean consequence, and
an Euler-Maruyama ensemble cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import model, ougauss, thermo
from .errors import ConfigError, ModelError, NumericsError, RegimeError
from .fpsolve import init_density, solve

__all__ = [
    "FlowPoint",
    "RateFunctionEstimate",
    "MacroBalance",
    "SweepResult",
    "FourthMomentTensor",
    "LandscapeCheck",
    "MacroFreeEnergy",
    "EnsembleResult",
    "ode_flow",
    "propagate_fluctuations",
    "estimate_hessian_from_density",
    "macroscopic_entropy_balance",
    "alpha_sweep",
    "gaussian_fourth_moment",
    "phi_ss_provider",
    "landscape_check",
    "macroscopic_free_energy",
    "brownian_entropy_rate",
    "simulate_ensemble",
]


@dataclass(frozen=True, eq=False)
class FlowPoint:
    """State of the deterministic characteristic at one time, with the drift
    divergence and Jacobian evaluated there."""

    t: float
    xhat: np.ndarray
    div_b: float
    jac_b: np.ndarray


@dataclass(frozen=True, eq=False)
class RateFunctionEstimate:
    """Curvature of the rate function at the flow: hessian = inverse local
    covariance (paper-normalized sigma), with its provenance."""

    hessian: np.ndarray
    sigma: np.ndarray
    source: str

    def __post_init__(self):
        hess = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if np.linalg.eigvalsh(0.5 * (hess + hess.T)).min() <= 0.0:
            raise RegimeError("rate-function hessian must be positive definite")
        gap = np.abs(hess @ sig - np.eye(hess.shape[0])).max()
        if gap > 1e-10 * max(1.0, np.abs(hess).max() * np.abs(sig).max()):
            raise NumericsError(f"hessian and sigma are not inverses (gap {gap:.2e})")
        object.__setattr__(self, "hessian", hess)
        object.__setattr__(self, "sigma", sig)


class MacroBalance(NamedTuple):
    """O(1) entropy balance terms at one flow point."""

    local_heat: float
    local_ep: float
    total: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Least-squares extraction of the O(alpha) parts of e_p and Q_ex."""

    alphas: np.ndarray
    ep_values: np.ndarray
    qex_values: np.ndarray
    ep_slope: float
    ep_slope_se: float
    ep_intercept: float
    qex_slope: float
    qex_slope_se: float
    qex_intercept: float
    sum_slope: float
    sum_slope_se: float
    predicted_slope: float
    ep_residual_rms: float
    qex_residual_rms: float


@dataclass(frozen=True, eq=False)
class FourthMomentTensor:
    """Centered Gaussian fourth moments Theta[i,j,k,l] for a covariance."""

    theta: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True, eq=False)
class LandscapeCheck:
    """Stationary-landscape diagnostics at one point: gamma = b + D grad phi,
    the orthogonality product gamma . grad phi, and the three squared
    D^{-1}-norms (|D grad phi|^2, |gamma|^2, |b|^2)."""

    point: np.ndarray
    phi_ss_grad: np.ndarray
    gamma: np.ndarray
    ortho: float
    norms: tuple


class MacroFreeEnergy(NamedTuple):
    """Per-size-unit free energy at a flow point: value phi_ss(xhat), its
    rate -grad phi . D grad phi, and the house-keeping rate gamma . D^-1 gamma."""

    t: float
    value: float
    rate: float
    qhk: float


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Sample moments of an Euler-Maruyama ensemble at the output times."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    n_paths: int
    seed: int


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flow_point(spec, t, x):
    return FlowPoint(
        t=float(t),
        xhat=np.array(x, dtype=float),
        div_b=float(model.div_drift(spec, x)),
        jac_b=model.jac_drift(spec, x),
    )


def ode_flow(spec, x0, t_grid, max_step=1e-3, escape=1e3):
    """Deterministic characteristic dx/dt = b(x) on a sorted time grid,
    integrated with the classical fourth-order scheme at steps <= max_step."""
    t_grid = [float(t) for t in t_grid]
    if t_grid != sorted(t_grid) or (t_grid and t_grid[0] < 0.0):
        raise ConfigError("t_grid must be sorted and start at a nonnegative time")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (spec.dim,):
        raise ModelError("x0 has the wrong dimension")

    def rhs(y):
        return model.eval_drift(spec, y)

    points = []
    t = 0.0
    for target in t_grid:
        while target - t > 1e-13:
            h = min(max_step, target - t)
            x = _rk4_step(rhs, x, h)
            t += h
            if np.abs(x).max() > escape:
                raise NumericsError(f"flow escaped |x| > {escape} at t={t:.4f}")
        points.append(_flow_point(spec, target, x))
    return points


def _const_d(spec):
    return model.eval_diffusion(spec, np.zeros(spec.dim))


def propagate_fluctuations(spec, flow, sigma0, alpha=None):
    """Local Gaussian covariance along the flow: sigma' = 2 D(xhat) +
    J(xhat) sigma + sigma J(xhat)^T, integrated jointly with the flow.

    For linear drift this reproduces the exact covariance equation.  Returns
    one RateFunctionEstimate per flow point; hessians are the inverses.
    """
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    if np.linalg.eigvalsh(0.5 * (sigma0 + sigma0.T)).min() <= 0.0:
        raise ModelError("sigma0 must be positive definite")
    dim = spec.dim
    constant_d = spec.constant_diffusion
    dmat0 = _const_d(spec) if constant_d else None

    def rhs(state):
        y = state[:dim]
        s = state[dim:].reshape(dim, dim)
        jac = model.jac_drift(spec, y)
        dmat = dmat0 if constant_d else model.eval_diffusion(spec, y)
        ds = 2.0 * dmat + jac @ s + s @ jac.T
        return np.concatenate([model.eval_drift(spec, y), ds.ravel()])

    state = np.concatenate([flow[0].xhat, sigma0.ravel()])
    out = []
    t = flow[0].t
    max_step = 1e-3
    for fp in flow:
        while fp.t - t > 1e-13:
            h = min(max_step, fp.t - t)
            state = _rk4_step(rhs, state, h)
            t += h
        s = state[dim:].reshape(dim, dim)
        s = 0.5 * (s + s.T)
        out.append(
            RateFunctionEstimate(hessian=np.linalg.inv(s), sigma=s, source="lyapunov-ode")
        )
    return out


def _count_modes(values, floor_rel=1e-3):
    """Local maxima above a relative floor (4-neighborhood in 2d).

    Ties are broken one-sidedly so a flat two-cell peak counts once.
    """
    v = values
    floor = floor_rel * v.max()
    if v.ndim == 1:
        inner = v[1:-1]
        peaks = (inner >= v[:-2]) & (inner > v[2:]) & (inner >= floor)
        return int(peaks.sum())
    inner = v[1:-1, 1:-1]
    peaks = (
        (inner >= v[:-2, 1:-1])
        & (inner > v[2:, 1:-1])
        & (inner >= v[1:-1, :-2])
        & (inner > v[1:-1, 2:])
        & (inner >= floor)
    )
    return int(peaks.sum())


def estimate_hessian_from_density(density, alpha):
    """Rate-function hessian at the density's bulk: (alpha Cov[f])^{-1}.

    Valid only in the locally Gaussian (unimodal) regime; multimodal or
    degenerate densities raise RegimeError.
    """
    modes = _count_modes(density.values)
    if modes != 1:
        raise RegimeError(
            f"density has {modes} modes; the local-Gaussian estimate needs exactly one"
        )
    cov = density.cov()
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() <= 0.0:
        raise RegimeError("density covariance is not positive definite")
    sigma = alpha * cov
    return RateFunctionEstimate(
        hessian=np.linalg.inv(sigma), sigma=sigma, source="empirical-covariance"
    )


def macroscopic_entropy_balance(spec, flowpoint, rfe):
    """O(1) entropy balance at a flow point: local heat exchange div b,
    local entropy production D : hess(phi), and their sum."""
    dmat = model.eval_diffusion(spec, flowpoint.xhat)
    local_ep = float(np.sum(dmat * rfe.hessian))
    return MacroBalance(
        local_heat=float(flowpoint.div_b),
        local_ep=local_ep,
        total=float(flowpoint.div_b) + local_ep,
    )


def _ols_line(x, y):
    """Slope, intercept, slope standard error and residual rms of y ~ x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    xbar = x.mean()
    sxx = ((x - xbar) ** 2).sum()
    if sxx <= 0:
        raise NumericsError("size sweep regression is rank deficient")
    slope = ((x - xbar) * (y - y.mean())).sum() / sxx
    intercept = y.mean() - slope * xbar
    resid = y - (intercept + slope * x)
    dof = max(n - 2, 1)
    se = np.sqrt((resid @ resid) / dof / sxx)
    rms = np.sqrt((resid @ resid) / n)
    return slope, intercept, se, rms


def alpha_sweep(spec, alphas, t_probe, x0, route="auto", sigma0=None, grid=None, dt=1e-3):
    """Rates at t_probe across system sizes, with the O(alpha) fit.

    Linear constant-diffusion systems use the exact Gaussian engine (the
    start is a point mass at x0 unless sigma0, in the paper-normalized
    convention, says otherwise); other systems run the grid solver on the
    supplied grid.  Returns slopes, intercepts, standard errors and the
    drift-based prediction b . D^{-1} b at the flow point.
    """
    alphas = np.asarray(sorted(float(a) for a in alphas))
    if alphas.size < 4:
        raise ConfigError("a size sweep needs at least four alpha values")
    if np.unique(alphas).size != alphas.size:
        raise ConfigError("alpha values must be distinct")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if route == "auto":
        route = "closed-form" if (spec.is_linear and spec.constant_diffusion) else "fp"
    ep_vals = np.empty(alphas.size)
    qex_vals = np.empty(alphas.size)
    if route == "closed-form":
        from scipy.linalg import expm

        base = ougauss.from_system(spec)
        sig = ougauss.wkb_covariance(base, t_probe, sigma0)
        mean = expm(base.B * t_probe) @ x0
        for i, a in enumerate(alphas):
            ou = ougauss.OUSpec(B=base.B, D=base.D, alpha=a)
            state = ougauss.GaussianState(mean, sig / a)
            ep_vals[i] = ougauss.ou_entropy_production(ou, state)
            qex_vals[i] = ougauss.ou_heat_exchange(ou, state)
    elif route == "fp":
        if grid is None:
            raise ConfigError("the grid route needs a grid")
        sig = np.eye(spec.dim) * 0.1 if sigma0 is None else np.atleast_2d(
            np.asarray(sigma0, dtype=float)
        )
        for i, a in enumerate(alphas):
            sized = replace(spec, alpha=float(a))
            f0 = init_density(grid, "gaussian", mean=x0, cov=sig / a)
            snap = solve(sized, f0, t_probe, [t_probe], dt=dt)[0]
            ep_vals[i] = thermo.entropy_production_rate(sized, snap)
            qex_vals[i] = thermo.heat_exchange_rate(sized, snap)
    else:
        raise ConfigError(f"unknown sweep route '{route}'")
    fp = ode_flow(spec, x0, [t_probe])[-1]
    b = model.eval_drift(spec, fp.xhat)
    dmat = model.eval_diffusion(spec, fp.xhat)
    predicted = float(b @ np.linalg.solve(dmat, b))
    ep_slope, ep_int, ep_se, ep_rms = _ols_line(alphas, ep_vals)
    qex_slope, qex_int, qex_se, qex_rms = _ols_line(alphas, qex_vals)
    sum_slope, _, sum_se, _ = _ols_line(alphas, ep_vals + qex_vals)
    return SweepResult(
        alphas=alphas,
        ep_values=ep_vals,
        qex_values=qex_vals,
        ep_slope=ep_slope,
        ep_slope_se=ep_se,
        ep_intercept=ep_int,
        qex_slope=qex_slope,
        qex_slope_se=qex_se,
        qex_intercept=qex_int,
        sum_slope=sum_slope,
        sum_slope_se=sum_se,
        predicted_slope=predicted,
        ep_residual_rms=ep_rms,
        qex_residual_rms=qex_rms,
    )


def gaussian_fourth_moment(sigma):
    """Fourth-moment tensor of a centered Gaussian via the pair-product
    (Isserlis) identity Theta_ijkl = S_ij S_kl + S_ik S_jl + S_il S_jk."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if np.linalg.eigvalsh(0.5 * (sigma + sigma.T)).min() <= 0.0:
        raise ModelError("sigma must be positive definite")
    pairings = np.stack(
        [
            np.einsum("ij,kl->ijkl", sigma, sigma),
            np.einsum("ik,jl->ijkl", sigma, sigma),
            np.einsum("il,jk->ijkl", sigma, sigma),
        ]
    )
    # summing the sorted pair products makes the permutation symmetry exact
    # in floating point, not just up to rounding
    theta = np.sort(pairings, axis=0).sum(axis=0)
    return FourthMomentTensor(theta=theta, sigma=sigma)


class _GradientLandscape:
    """phi_ss = U for gradient systems (up to an additive constant)."""

    source = "gradient-analytic"

    def __init__(self, spec):
        if spec.potential is None:
            raise ModelError("gradient landscape needs a potential")
        self.spec = spec

    def value(self, x):
        pts = model._as_points(x, self.spec.dim)
        return float(
            self.spec.potential.eval_on([pts[..., i] for i in range(self.spec.dim)])
        )

    def grad(self, x):
        return model.grad_potential(self.spec, x)


class _LinearLandscape:
    """phi_ss = x . Sigma_ss^{-1} x / 2 for Hurwitz linear systems, with
    Sigma_ss the size-free stationary covariance."""

    source = "linear-lyapunov"

    def __init__(self, spec):
        ou = ougauss.from_system(spec)
        sigma_ss = spec.alpha * ougauss.stationary_covariance(ou)
        self.prec = np.linalg.inv(sigma_ss)

    def value(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return 0.5 * float(x @ self.prec @ x)

    def grad(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.prec @ x


class _GridLandscape:
    """phi_ss = -(1/alpha) ln pi from a computed stationary density; the
    gradient uses central differences evaluated at the nearest cell center."""

    source = "grid-numeric"

    def __init__(self, spec, stationary):
        grid = stationary.density.grid
        vals = stationary.density.values
        if vals.min() <= 0.0:
            raise ModelError("grid landscape needs a strictly positive stationary density")
        self.grid = grid
        self.phi = -np.log(vals) / spec.alpha
        if grid.ndim == 1:
            self.gphi = np.gradient(self.phi, grid.h[0])[..., np.newaxis]
        else:
            self.gphi = np.stack(np.gradient(self.phi, *grid.h), axis=-1)

    def _index(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for k in range(self.grid.ndim):
            lo, hi = self.grid.bounds[k]
            if not (lo <= x[k] <= hi):
                raise ModelError(f"point {x} outside the landscape grid")
            i = int(np.clip((x[k] - lo) / self.grid.h[k], 0, self.grid.cells[k] - 1))
            idx.append(i)
        return tuple(idx)

    def value(self, x):
        return float(self.phi[self._index(x)])

    def grad(self, x):
        return np.array(self.gphi[self._index(x)], dtype=float)


def phi_ss_provider(spec, kind="auto", stationary=None):
    """Stationary-landscape accessor with .value(x) and .grad(x).

    kinds: "gradient" (analytic potential), "linear" (Lyapunov solve),
    "grid" (numeric log-density; needs a stationary solution), or "auto".
    """
    if kind == "auto":
        if spec.potential is not None:
            kind = "gradient"
        elif spec.is_linear and spec.constant_diffusion:
            kind = "linear"
        elif stationary is not None:
            kind = "grid"
        else:
            raise ModelError(
                f"no stationary landscape available for '{spec.name}' without "
                "a computed stationary density"
            )
    if kind == "gradient":
        return _GradientLandscape(spec)
    if kind == "linear":
        return _LinearLandscape(spec)
    if kind == "grid":
        if stationary is None:
            raise ModelError("kind 'grid' needs a stationary solution")
        return _GridLandscape(spec, stationary)
    raise ModelError(f"unknown landscape kind '{kind}'")


def landscape_check(spec, provider, points):
    """Orthogonality and Pythagoras diagnostics at each point.

    The algebraic identity norms[0] + norms[1] - norms[2] = 2 ortho holds for
    any inputs; ortho itself vanishes when the provider's gradient is the
    true stationary landscape.
    """
    out = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        g = np.atleast_1d(provider.grad(x))
        b = model.eval_drift(spec, x)
        dmat = model.eval_diffusion(spec, x)
        dinv = np.linalg.inv(dmat)
        gamma = b + dmat @ g
        out.append(
            LandscapeCheck(
                point=x,
                phi_ss_grad=g,
                gamma=gamma,
                ortho=float(gamma @ g),
                norms=(
                    float(g @ dmat @ g),
                    float(gamma @ dinv @ gamma),
                    float(b @ dinv @ b),
                ),
            )
        )
    return out


def macroscopic_free_energy(spec, flow, provider):
    """Per-size-unit free energy along the flow: phi_ss(xhat), its chain-rule
    rate -grad phi . D grad phi (never positive) and gamma . D^-1 gamma."""
    out = []
    for fp in flow:
        g = np.atleast_1d(provider.grad(fp.xhat))
        dmat = model.eval_diffusion(spec, fp.xhat)
        b = model.eval_drift(spec, fp.xhat)
        gamma = b + dmat @ g
        out.append(
            MacroFreeEnergy(
                t=fp.t,
                value=provider.value(fp.xhat),
                rate=-float(g @ dmat @ g),
                qhk=float(gamma @ np.linalg.solve(dmat, gamma)),
            )
        )
    return out


def brownian_entropy_rate(D, var):
    """Instantaneous entropy growth rate D / sigma^2 of a spreading Gaussian."""
    if var <= 0:
        raise ModelError("variance must be positive")
    return float(D) / float(var)


def simulate_ensemble(spec, x0, n_paths, dt, t_end, seed, output_times=None):
    """Euler-Maruyama ensemble with a counter-based generator; deterministic
    for a fixed seed.  Returns sample means and covariances per output time."""
    if n_paths < 1000:
        raise ConfigError("ensemble statistics need at least 1000 paths")
    if dt <= 0 or t_end <= 0:
        raise ConfigError("dt and t_end must be positive")
    output_times = [float(t_end)] if output_times is None else [
        float(t) for t in output_times
    ]
    if output_times != sorted(output_times) or output_times[-1] > t_end + 1e-12:
        raise ConfigError("output_times must be sorted within (0, t_end]")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = spec.dim
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    x = np.tile(x0, (int(n_paths), 1))
    const_d = spec.constant_diffusion
    diag_d = all(
        not spec.diffusion[i][j].terms
        for i in range(dim)
        for j in range(dim)
        if i != j
    )
    if const_d:
        chol = np.linalg.cholesky(2.0 * _const_d(spec) * dt / spec.alpha)
    elif not diag_d:
        raise ModelError("ensemble simulation needs constant or diagonal diffusion")
    times, means, covs = [], [], []
    t = 0.0
    for target in output_times:
        while target - t > 1e-12:
            h = min(dt, target - t)
            noise = rng.standard_normal(size=(x.shape[0], dim))
            if const_d:
                incr = noise @ (chol.T * np.sqrt(h / dt))
            else:
                dvals = np.stack(
                    [
                        np.broadcast_to(
                            spec.diffusion[k][k].eval_on([x[:, i] for i in range(dim)]),
                            (x.shape[0],),
                        )
                        for k in range(dim)
                    ],
                    axis=-1,
                )
                incr = noise * np.sqrt(2.0 * dvals * h / spec.alpha)
            x = x + model.eval_drift(spec, x) * h + incr
            t += h
            if np.abs(x).max() > 1e3:
                raise NumericsError("ensemble path escaped the safety box |x| <= 1e3")
        times.append(target)
        means.append(x.mean(axis=0))
        covs.append(np.cov(x, rowvar=False, ddof=1).reshape(dim, dim))
    return EnsembleResult(
        times=np.array(times),
        means=np.array(means),
        covs=np.array(covs),
        n_paths=int(n_paths),
        seed=int(seed),
    )
