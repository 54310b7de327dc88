"""Diffusion-system definitions.

A system is a drift field b(x), a diffusion field D(x) entering the dynamics
as D(x)/alpha, and the size parameter alpha.  Fields are multivariate
polynomials so that divergences, Jacobians and potential gradients are exact;
the built-in catalog collects benchmark systems with known closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError

__all__ = [
    "Polynomial",
    "SystemSpec",
    "CatalogEntry",
    "build_system",
    "from_catalog",
    "catalog_names",
    "eval_drift",
    "eval_diffusion",
    "div_drift",
    "jac_drift",
    "grad_potential",
    "with_alpha",
    "validate_fields",
]


class Polynomial:
    """Polynomial in ``nvars`` variables with exact differentiation.

    ``terms`` maps exponent tuples to coefficients; ``{(0,): 1.0, (2,): -0.5}``
    is ``1 - x**2 / 2`` in one variable.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms):
        nvars = int(nvars)
        if nvars < 1:
            raise ModelError("polynomial needs at least one variable")
        clean: dict[tuple[int, ...], float] = {}
        for exps, coef in dict(terms).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars or any(e < 0 for e in exps):
                raise ModelError(f"bad exponent tuple {exps} for {nvars} variable(s)")
            c = clean.get(exps, 0.0) + float(coef)
            clean[exps] = c
        self.nvars = nvars
        self.terms = {e: c for e, c in clean.items() if c != 0.0}

    @classmethod
    def from_coefficients(cls, coeffs):
        """One-variable polynomial from the power-series list [c0, c1, ...]."""
        return cls(1, {(k,): c for k, c in enumerate(coeffs)})

    @classmethod
    def constant(cls, nvars, value):
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def zero(cls, nvars):
        return cls(nvars, {})

    def eval_on(self, comps):
        """Evaluate on per-axis coordinate arrays (broadcast together)."""
        out = np.zeros(np.broadcast(*comps).shape) if len(comps) > 1 else np.zeros_like(
            np.asarray(comps[0], dtype=float)
        )
        for exps, coef in self.terms.items():
            term = coef
            for xi, e in zip(comps, exps):
                if e:
                    term = term * np.asarray(xi, dtype=float) ** e
            out = out + term
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.nvars == 1:
            out = self.eval_on([x])
        else:
            if x.ndim == 0 or x.shape[-1] != self.nvars:
                raise ModelError(
                    f"expected points with last axis of length {self.nvars}"
                )
            out = self.eval_on([x[..., i] for i in range(self.nvars)])
        return float(out) if out.ndim == 0 else out

    def diff(self, axis):
        """Exact partial derivative with respect to variable ``axis``."""
        terms = {}
        for exps, coef in self.terms.items():
            e = exps[axis]
            if e == 0:
                continue
            lowered = exps[:axis] + (e - 1,) + exps[axis + 1:]
            terms[lowered] = terms.get(lowered, 0.0) + coef * e
        return Polynomial(self.nvars, terms)

    @property
    def is_constant(self):
        return all(all(e == 0 for e in exps) for exps in self.terms)

    def __repr__(self):
        return f"Polynomial(nvars={self.nvars}, terms={self.terms!r})"


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A diffusion system: drift b(x), diffusion D(x)/alpha, size parameter alpha.

    ``drift`` holds one polynomial per component; ``diffusion`` a dim x dim
    matrix of polynomials (symmetric, positive definite wherever evaluated).
    ``potential`` asserts b = -D grad U; ``linear`` asserts b(x) = B x with
    constant diffusion.  Instances are immutable and safe to share.
    """

    dim: int
    alpha: float
    drift: tuple
    diffusion: tuple
    potential: Polynomial | None = None
    linear: np.ndarray | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def is_gradient(self):
        return self.potential is not None

    @property
    def is_linear(self):
        return self.linear is not None

    @property
    def constant_diffusion(self):
        return all(p.is_constant for row in self.diffusion for p in row)


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    """A named benchmark system together with its known closed forms.

    ``known_quantities`` keys: ``stationary_covariance`` (covariance of the
    stationary density, or None when no closed form applies) and
    ``equilibrium`` (True when the drift is a gradient field).
    """

    name: str
    spec: SystemSpec
    known_quantities: dict


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1:
        if x.ndim == 0:
            return x.reshape(1)
        if x.shape[-1] != 1:
            return x[..., np.newaxis]
        return x
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ModelError(f"expected state vector(s) with last axis {dim}, got shape {x.shape}")
    return x


def eval_drift(spec, x):
    """Drift vector b(x); accepts a single point or an array of points."""
    pts = _as_points(x, spec.dim)
    comps = [pts[..., i] for i in range(spec.dim)]
    out = np.stack([np.broadcast_to(p.eval_on(comps), comps[0].shape) for p in spec.drift], axis=-1)
    if not np.all(np.isfinite(out)):
        raise ModelError("drift evaluation produced non-finite values")
    return out


def eval_diffusion(spec, x):
    """Diffusion matrix D(x); symmetric positive definite at valid points."""
    pts = _as_points(x, spec.dim)
    comps = [pts[..., i] for i in range(spec.dim)]
    base = comps[0].shape
    rows = []
    for i in range(spec.dim):
        rows.append([np.broadcast_to(spec.diffusion[i][j].eval_on(comps), base)
                     for j in range(spec.dim)])
    out = np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
    if not np.all(np.isfinite(out)):
        raise ModelError("diffusion evaluation produced non-finite values")
    if out.ndim == 2:
        if np.linalg.eigvalsh(0.5 * (out + out.T)).min() <= 0.0:
            raise ModelError(f"diffusion matrix not positive definite at x={x!r}")
    return out


def div_drift(spec, x):
    """Divergence of the drift, computed from exact polynomial derivatives."""
    pts = _as_points(x, spec.dim)
    comps = [pts[..., i] for i in range(spec.dim)]
    out = np.zeros(comps[0].shape)
    for i in range(spec.dim):
        out = out + spec.drift[i].diff(i).eval_on(comps)
    return float(out) if out.ndim == 0 else out


def jac_drift(spec, x):
    """Jacobian matrix of the drift at a single point."""
    pts = _as_points(x, spec.dim)
    comps = [pts[..., i] for i in range(spec.dim)]
    jac = np.empty((spec.dim, spec.dim))
    for i in range(spec.dim):
        for j in range(spec.dim):
            jac[i, j] = spec.drift[i].diff(j).eval_on(comps)
    return jac


def grad_potential(spec, x):
    """Gradient of the potential U; requires the gradient flag."""
    if spec.potential is None:
        raise ModelError(f"system '{spec.name}' carries no potential")
    pts = _as_points(x, spec.dim)
    comps = [pts[..., i] for i in range(spec.dim)]
    return np.stack(
        [np.broadcast_to(spec.potential.diff(i).eval_on(comps), comps[0].shape)
         for i in range(spec.dim)],
        axis=-1,
    )


def with_alpha(spec, alpha):
    """Copy of the system with a different size parameter."""
    if alpha <= 0:
        raise ModelError("alpha must be positive")
    return replace(spec, alpha=float(alpha))


def _probe_points(dim, bounds=(-2.0, 2.0), count=100):
    lo, hi = bounds
    if dim == 1:
        return np.linspace(lo, hi, count)[:, None]
    side = int(np.ceil(np.sqrt(count)))
    g = np.linspace(lo, hi, side)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def validate_fields(spec, bounds=(-2.0, 2.0), count=100):
    """Check SPD diffusion and the potential/linear consistency assertions
    at grid-sampled probe points; raises ModelError on violation."""
    pts = _probe_points(spec.dim, bounds, count)
    dmats = eval_diffusion(spec, pts)
    eigs = np.linalg.eigvalsh(0.5 * (dmats + np.swapaxes(dmats, -1, -2)))
    if eigs.min() <= 0.0:
        bad = pts[np.argmin(eigs.min(axis=-1))]
        raise ModelError(f"diffusion not positive definite at probe point {bad}")
    b = eval_drift(spec, pts)
    if spec.potential is not None:
        gu = grad_potential(spec, pts)
        resid = b + np.einsum("...ij,...j->...i", dmats, gu)
        worst = np.abs(resid).max()
        if worst > 1e-10:
            raise ModelError(
                f"potential flag inconsistent: max |b + D grad U| = {worst:.3e}"
            )
    if spec.linear is not None:
        resid = b - pts @ np.asarray(spec.linear, dtype=float).T
        worst = np.abs(resid).max()
        if worst > 1e-12:
            raise ModelError(f"linear flag inconsistent: max |b - Bx| = {worst:.3e}")
    return spec


def _const_matrix(dim, mat):
    mat = np.asarray(mat, dtype=float)
    return tuple(
        tuple(Polynomial.constant(dim, mat[i, j]) for j in range(dim))
        for i in range(dim)
    )


def _ou1d(alpha, B=-1.0, D=1.0):
    B = float(B)
    D = float(D)
    if D <= 0:
        raise ModelError("ou1d requires D > 0")
    spec = SystemSpec(
        dim=1,
        alpha=alpha,
        drift=(Polynomial(1, {(1,): B}),),
        diffusion=((Polynomial.constant(1, D),),),
        # b = Bx = -D U' with U = -B x^2 / (2 D)
        potential=Polynomial(1, {(2,): -B / (2.0 * D)}),
        linear=np.array([[B]]),
        name="ou1d",
        params={"B": B, "D": D},
    )
    cov = np.array([[-D / (alpha * B)]]) if B < 0 else None
    return CatalogEntry("ou1d", spec, {"stationary_covariance": cov, "equilibrium": True})


def _double_well(alpha):
    spec = SystemSpec(
        dim=1,
        alpha=alpha,
        drift=(Polynomial(1, {(1,): 1.0, (3,): -1.0}),),
        diffusion=((Polynomial.constant(1, 1.0),),),
        # U(x) = (x^2 - 1)^2 / 4
        potential=Polynomial(1, {(4,): 0.25, (2,): -0.5, (0,): 0.25}),
        name="double_well",
        params={},
    )
    return CatalogEntry(
        "double_well", spec, {"stationary_covariance": None, "equilibrium": True}
    )


def _rot_ou(alpha, omega=1.0):
    w = float(omega)
    B = np.array([[-1.0, w], [-w, -1.0]])
    spec = SystemSpec(
        dim=2,
        alpha=alpha,
        drift=(
            Polynomial(2, {(1, 0): B[0, 0], (0, 1): B[0, 1]}),
            Polynomial(2, {(1, 0): B[1, 0], (0, 1): B[1, 1]}),
        ),
        diffusion=_const_matrix(2, np.eye(2)),
        linear=B,
        name="rot_ou",
        params={"omega": w},
    )
    return CatalogEntry(
        "rot_ou",
        spec,
        {"stationary_covariance": np.eye(2) / alpha, "equilibrium": w == 0.0},
    )


def _var_diff_1d(alpha):
    spec = SystemSpec(
        dim=1,
        alpha=alpha,
        # D(x) = 1 + x^2/2, U(x) = x^2/2, b = -D U' = -x - x^3/2
        drift=(Polynomial(1, {(1,): -1.0, (3,): -0.5}),),
        diffusion=((Polynomial(1, {(0,): 1.0, (2,): 0.5}),),),
        potential=Polynomial(1, {(2,): 0.5}),
        name="var_diff_1d",
        params={},
    )
    return CatalogEntry(
        "var_diff_1d", spec, {"stationary_covariance": None, "equilibrium": True}
    )


def _brownian(alpha, D=1.0):
    D = float(D)
    if D <= 0:
        raise ModelError("brownian requires D > 0")
    spec = SystemSpec(
        dim=1,
        alpha=alpha,
        drift=(Polynomial.zero(1),),
        diffusion=((Polynomial.constant(1, D),),),
        potential=Polynomial.zero(1),
        linear=np.array([[0.0]]),
        name="brownian",
        params={"D": D},
    )
    return CatalogEntry(
        "brownian", spec, {"stationary_covariance": None, "equilibrium": True}
    )


_CATALOG = {
    "ou1d": (_ou1d, {"B", "D"}),
    "double_well": (_double_well, set()),
    "rot_ou": (_rot_ou, {"omega"}),
    "var_diff_1d": (_var_diff_1d, set()),
    "brownian": (_brownian, {"D"}),
}


def catalog_names():
    return sorted(_CATALOG)


def from_catalog(name, alpha, **params):
    """Instantiate a catalog entry; unknown names or parameters are rejected."""
    if name not in _CATALOG:
        raise ModelError(f"unknown catalog name '{name}' (have: {', '.join(catalog_names())})")
    builder, allowed = _CATALOG[name]
    extra = set(params) - allowed
    if extra:
        raise ModelError(f"catalog '{name}' does not accept parameter(s): {sorted(extra)}")
    if not np.isfinite(alpha) or alpha <= 0:
        raise ModelError("alpha must be a positive finite number")
    entry = builder(float(alpha), **params)
    validate_fields(entry.spec)
    return entry


def _parse_poly(raw, dim, what):
    """Parse a polynomial from config data.

    One variable: a flat coefficient list [c0, c1, ...].
    Two variables: a list of terms [coef, ex, ey].
    """
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ModelError(f"{what}: expected a non-empty coefficient list")
    if dim == 1:
        if not all(isinstance(c, (int, float)) for c in raw):
            raise ModelError(f"{what}: 1d coefficients must be numbers")
        return Polynomial.from_coefficients([float(c) for c in raw])
    terms = {}
    for term in raw:
        if (not isinstance(term, (list, tuple))) or len(term) != dim + 1:
            raise ModelError(f"{what}: 2d terms must be [coef, ex, ey]")
        coef = float(term[0])
        exps = tuple(int(e) for e in term[1:])
        terms[exps] = terms.get(exps, 0.0) + coef
    return Polynomial(dim, terms)


def _parse_diffusion(raw, dim):
    if isinstance(raw, (int, float)):
        return _const_matrix(dim, float(raw) * np.eye(dim))
    if dim == 1:
        return ((_parse_poly(raw, 1, "diffusion"),),)
    if isinstance(raw, (list, tuple)) and len(raw) == dim and all(
        isinstance(v, (int, float)) for v in raw
    ):
        return _const_matrix(dim, np.diag([float(v) for v in raw]))
    if isinstance(raw, (list, tuple)) and len(raw) == dim:
        polys = [_parse_poly(r, dim, "diffusion") for r in raw]
        zero = Polynomial.zero(dim)
        return tuple(
            tuple(polys[i] if i == j else zero for j in range(dim)) for i in range(dim)
        )
    raise ModelError("diffusion: expected a constant, per-axis constants, or diagonal polynomials")


def build_system(config):
    """Build a SystemSpec from a configuration mapping.

    Either ``{"catalog": name, "alpha": a, ...entry params}`` or a custom
    definition ``{"dim", "alpha", "drift", "diffusion"[, "potential"]}`` with
    polynomial coefficient lists.  All field invariants are checked.
    """
    if not isinstance(config, dict):
        raise ModelError("system configuration must be a table")
    cfg = dict(config)
    if "catalog" in cfg:
        name = cfg.pop("catalog")
        alpha = cfg.pop("alpha", None)
        if alpha is None:
            raise ModelError("catalog systems require 'alpha'")
        return from_catalog(name, alpha, **cfg).spec
    missing = {"dim", "alpha", "drift", "diffusion"} - set(cfg)
    if missing:
        raise ModelError(f"custom system missing key(s): {sorted(missing)}")
    extra = set(cfg) - {"dim", "alpha", "drift", "diffusion", "potential"}
    if extra:
        raise ModelError(f"custom system has unknown key(s): {sorted(extra)}")
    dim = int(cfg["dim"])
    if dim not in (1, 2):
        raise ModelError("grid-backed systems support dim 1 or 2")
    alpha = float(cfg["alpha"])
    if not np.isfinite(alpha) or alpha <= 0:
        raise ModelError("alpha must be a positive finite number")
    if dim == 1:
        drift_raw = cfg["drift"]
        if isinstance(drift_raw, (list, tuple)) and drift_raw and isinstance(
            drift_raw[0], (list, tuple)
        ):
            drift_raw = drift_raw[0]
        drift = (_parse_poly(drift_raw, 1, "drift"),)
    else:
        raw = cfg["drift"]
        if not isinstance(raw, (list, tuple)) or len(raw) != dim:
            raise ModelError("drift: expected one term list per component")
        drift = tuple(_parse_poly(r, dim, "drift") for r in raw)
    diffusion = _parse_diffusion(cfg["diffusion"], dim)
    potential = None
    if "potential" in cfg:
        potential = _parse_poly(cfg["potential"], dim, "potential")
    spec = SystemSpec(
        dim=dim,
        alpha=alpha,
        drift=drift,
        diffusion=diffusion,
        potential=potential,
        name="custom",
        params={},
    )
    validate_fields(spec)
    return spec
