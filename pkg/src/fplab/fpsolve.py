"""Finite-volume solver for the density evolution
df/dt = div( D(x)/alpha grad f - b(x) f ) on a truncated box.

Face fluxes are exponentially fitted (Chang-Cooper / Scharfetter-Gummel):
G = (D_face / (alpha h)) * (Bern(-w) f_R - Bern(w) f_L) with Bern(z) =
z / (e^z - 1).  The fitting parameter w comes from potential differences
alpha * (U_R - U_L) on gradient systems, which makes the discrete stationary
state exactly the cell-evaluated Gibbs density with identically zero flux;
otherwise w = -alpha * b * h / D at the face midpoint.  Off-diagonal terms of
the operator are nonnegative, so implicit Euler steps preserve positivity
unconditionally, and column sums vanish exactly, so mass is conserved to
solver precision.  The boundary is a no-flux (reflecting) closure.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu
from scipy.special import erf

from .errors import ConfigError, ModelError, NumericsError

__all__ = [
    "Grid",
    "DensityField",
    "StationarySolution",
    "Scheme",
    "make_grid",
    "init_density",
    "flux",
    "step",
    "solve",
    "stationary_density",
    "write_density",
    "read_density",
]

MIN_CELLS = 8
BOUNDARY_MASS_LIMIT = 1e-8
NEGATIVITY_LIMIT = -1e-14


@dataclass(frozen=True, eq=False)
class Grid:
    """Rectangular cell-centered grid: per-axis bounds, cell counts, widths."""

    bounds: tuple
    cells: tuple
    h: tuple
    centers: tuple

    @property
    def ndim(self):
        return len(self.cells)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def points(self):
        """Cell-center coordinates stacked on the last axis, shape cells + (ndim,)."""
        mesh = np.meshgrid(*self.centers, indexing="ij")
        return np.stack(mesh, axis=-1)

    def matches(self, other):
        return self.bounds == other.bounds and self.cells == other.cells

    def boundary_mask(self):
        mask = np.zeros(self.cells, dtype=bool)
        for axis in range(self.ndim):
            sl = [slice(None)] * self.ndim
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = -1
            mask[tuple(sl)] = True
        return mask


def make_grid(bounds, cells):
    """Build a grid from per-axis (lo, hi) bounds and cell counts.

    One-dimensional input may be given flat: make_grid((-3, 3), 600).
    """
    if np.isscalar(cells):
        cells = (cells,)
        bounds = (tuple(bounds),)
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    cells = tuple(int(n) for n in cells)
    if len(bounds) != len(cells) or not cells or len(cells) > 2:
        raise ConfigError("grids are one- or two-dimensional with matching bounds")
    for (lo, hi), n in zip(bounds, cells):
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError(f"bad bounds ({lo}, {hi})")
        if n < MIN_CELLS:
            raise ConfigError(f"cell count {n} below minimum {MIN_CELLS}")
    h = tuple((hi - lo) / n for (lo, hi), n in zip(bounds, cells))
    centers = tuple(
        lo + (np.arange(n) + 0.5) * hk for (lo, hi), n, hk in zip(bounds, cells, h)
    )
    return Grid(bounds=bounds, cells=cells, h=h, centers=centers)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nonnegative density values on a grid at one instant."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.cells:
            raise ModelError(f"values shape {vals.shape} != grid cells {self.grid.cells}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def mass(self):
        return float(self.values.sum()) * self.grid.cell_volume

    def normalize(self):
        m = self.mass()
        if m <= 0:
            raise ModelError("cannot normalize a density with nonpositive mass")
        return DensityField(self.grid, self.values / m, self.time)

    def mean(self):
        pts = self.grid.points().reshape(-1, self.grid.ndim)
        w = (self.values * self.grid.cell_volume).ravel()
        return (w[:, None] * pts).sum(axis=0) / w.sum()

    def cov(self):
        pts = self.grid.points()
        w = (self.values * self.grid.cell_volume).ravel()
        dev = pts.reshape(-1, self.grid.ndim) - self.mean()
        return (dev * w[:, None]).T @ dev / w.sum()

    def boundary_mass(self):
        return float(self.values[self.grid.boundary_mask()].sum()) * self.grid.cell_volume

    def validate(self, mass_tol=1e-9):
        if self.values.min() < 0.0:
            raise NumericsError(f"negative density value {self.values.min():.3e}")
        if abs(self.mass() - 1.0) > mass_tol:
            raise NumericsError(f"density mass {self.mass():.12f} deviates from 1")
        return self


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Stationary density, its normalization constant (the discrete partition
    function when the Gibbs form applies, else None) and the method used."""

    density: DensityField
    normalization: float | None
    method: str


def _bernoulli(z):
    """z / (exp(z) - 1), elementwise, stable across all magnitudes."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    zs = z[small]
    out[small] = 1.0 - 0.5 * zs + zs * zs / 12.0
    zb = z[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.where(zb > 700.0, 0.0, zb / np.expm1(zb))
    return out


def _diagonal_diffusion_polys(spec):
    dim = spec.dim
    for i in range(dim):
        for j in range(dim):
            if i != j and spec.diffusion[i][j].terms:
                raise ModelError(
                    "grid solver supports diagonal diffusion only; "
                    "use the Gaussian engine for correlated noise"
                )
    return [spec.diffusion[i][i] for i in range(dim)]


class Scheme:
    """Assembled exponentially fitted face data and sparse generator.

    Per axis: interior-face diffusion values, fitting parameters w and the
    conductances c = D_face / (alpha h).  The generator A acts on flattened
    cell values with df/dt = A f.
    """

    def __init__(self, spec, grid):
        if spec.dim != grid.ndim:
            raise ModelError("system and grid dimensions differ")
        self.spec = spec
        self.grid = grid
        dpolys = _diagonal_diffusion_polys(spec)
        alpha = spec.alpha
        ndim = grid.ndim
        self.w = []
        self.c = []
        if spec.potential is not None:
            upot = spec.potential.eval_on(
                [grid.points()[..., i] for i in range(ndim)]
            )
            upot = np.broadcast_to(upot, grid.cells).astype(float)
        else:
            upot = None
        for axis in range(ndim):
            coords = []
            for k in range(ndim):
                if k == axis:
                    lo, _ = grid.bounds[k]
                    coords.append(lo + np.arange(1, grid.cells[k]) * grid.h[k])
                else:
                    coords.append(grid.centers[k])
            mesh = np.meshgrid(*coords, indexing="ij")
            dface = dpolys[axis].eval_on(mesh)
            dface = np.broadcast_to(dface, mesh[0].shape).astype(float)
            if np.any(dface <= 0.0):
                raise ModelError("diffusion must stay positive on the grid")
            if upot is not None:
                lo_sl = [slice(None)] * ndim
                hi_sl = [slice(None)] * ndim
                lo_sl[axis] = slice(0, -1)
                hi_sl[axis] = slice(1, None)
                w = alpha * (upot[tuple(hi_sl)] - upot[tuple(lo_sl)])
            else:
                bface = spec.drift[axis].eval_on(mesh)
                bface = np.broadcast_to(bface, mesh[0].shape).astype(float)
                w = -alpha * bface * grid.h[axis] / dface
            self.w.append(w)
            self.c.append(dface / (alpha * grid.h[axis]))
        self._operator = None

    def face_weight(self, axis):
        """Transverse cell measure of a face: cell volume / h_axis."""
        return self.grid.cell_volume / self.grid.h[axis]

    def flux(self, values):
        """Interior-face divergence-form fluxes G per axis.

        G = c (Bern(-w) f_R - Bern(w) f_L); the probability flux is -G.
        """
        out = []
        ndim = self.grid.ndim
        for axis in range(ndim):
            lo_sl = [slice(None)] * ndim
            hi_sl = [slice(None)] * ndim
            lo_sl[axis] = slice(0, -1)
            hi_sl[axis] = slice(1, None)
            fl = values[tuple(lo_sl)]
            fr = values[tuple(hi_sl)]
            w = self.w[axis]
            out.append(self.c[axis] * (_bernoulli(-w) * fr - _bernoulli(w) * fl))
        return out

    def divergence(self, fluxes):
        """Cell-wise flux divergence (the right-hand side df/dt)."""
        ndim = self.grid.ndim
        out = np.zeros(self.grid.cells)
        for axis in range(ndim):
            g = fluxes[axis]
            pad = [(0, 0)] * ndim
            pad[axis] = (1, 1)
            g = np.pad(g, pad)
            lo_sl = [slice(None)] * ndim
            hi_sl = [slice(None)] * ndim
            lo_sl[axis] = slice(0, -1)
            hi_sl[axis] = slice(1, None)
            out = out + (g[tuple(hi_sl)] - g[tuple(lo_sl)]) / self.grid.h[axis]
        return out

    def operator(self):
        """Sparse generator A (CSC) with df/dt = A f on flattened values."""
        if self._operator is not None:
            return self._operator
        grid = self.grid
        ndim = grid.ndim
        n = int(np.prod(grid.cells))
        idx = np.arange(n).reshape(grid.cells)
        rows, cols, vals = [], [], []
        for axis in range(ndim):
            lo_sl = [slice(None)] * ndim
            hi_sl = [slice(None)] * ndim
            lo_sl[axis] = slice(0, -1)
            hi_sl[axis] = slice(1, None)
            left = idx[tuple(lo_sl)].ravel()
            right = idx[tuple(hi_sl)].ravel()
            w = self.w[axis].ravel()
            c = self.c[axis].ravel() / grid.h[axis]
            cp = c * _bernoulli(-w)  # multiplies f_R in G/h
            cm = c * _bernoulli(w)  # multiplies f_L in G/h
            # face (L,R): df_L/dt += G/h, df_R/dt -= G/h
            rows.append(left)
            cols.append(right)
            vals.append(cp)
            rows.append(left)
            cols.append(left)
            vals.append(-cm)
            rows.append(right)
            cols.append(right)
            vals.append(-cp)
            rows.append(right)
            cols.append(left)
            vals.append(cm)
        A = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        self._operator = A.tocsc()
        return self._operator


def _gaussian_values(grid, mean, cov):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    dim = grid.ndim
    if mean.shape != (dim,) or cov.shape != (dim, dim):
        raise ModelError("mean/covariance shape does not match the grid dimension")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() <= 0.0:
        raise ModelError("initial covariance must be positive definite")
    pts = grid.points().reshape(-1, dim)
    dev = pts - mean
    cinv = np.linalg.inv(cov)
    quad = np.einsum("ni,ij,nj->n", dev, cinv, dev)
    norm = 1.0 / np.sqrt((2.0 * np.pi) ** dim * np.linalg.det(cov))
    return (norm * np.exp(-0.5 * quad)).reshape(grid.cells)


def _gaussian_box_mass(grid, mean, cov):
    """Probability mass of the Gaussian inside the box; exact erf product for
    diagonal covariance, discrete midpoint estimate otherwise."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    off = cov - np.diag(np.diag(cov))
    if np.abs(off).max() == 0.0:
        mass = 1.0
        for k, (lo, hi) in enumerate(grid.bounds):
            s = np.sqrt(2.0 * cov[k, k])
            mass *= 0.5 * (erf((hi - mean[k]) / s) - erf((lo - mean[k]) / s))
        return mass
    return float(_gaussian_values(grid, mean, cov).sum()) * grid.cell_volume


def init_density(grid, kind, mean=None, cov=None, values=None, eps=None):
    """Initial density on a grid.

    kind "gaussian" requires mean and cov; kind "delta" places a narrow
    Gaussian of covariance eps * I (default eps = 4 h^2 per axis) at mean;
    kind "uniform" needs nothing; kind "custom" takes raw cell values.
    Gaussian initial data must have mass >= 1 - 1e-8 inside the box.
    """
    if kind == "uniform":
        vals = np.ones(grid.cells)
    elif kind in ("gaussian", "delta"):
        if mean is None:
            raise ModelError(f"init kind '{kind}' requires a mean")
        if kind == "delta":
            scales = [4.0 * hk * hk for hk in grid.h] if eps is None else [
                float(eps)
            ] * grid.ndim
            cov = np.diag(scales)
        if cov is None:
            raise ModelError("init kind 'gaussian' requires a covariance")
        inside = _gaussian_box_mass(grid, mean, cov)
        if inside < 1.0 - 1e-8:
            raise ModelError(
                f"initial Gaussian keeps only {inside:.12f} of its mass inside "
                "the domain; enlarge the box"
            )
        vals = _gaussian_values(grid, mean, cov)
    elif kind == "custom":
        if values is None:
            raise ModelError("init kind 'custom' requires values")
        vals = np.asarray(values, dtype=float)
        if vals.min() < 0:
            raise ModelError("custom initial values must be nonnegative")
    else:
        raise ModelError(f"unknown init kind '{kind}'")
    return DensityField(grid, vals, 0.0).normalize()


def flux(spec, density):
    """Per-axis face fluxes G = (D/alpha) grad f - b f of a density, including
    the boundary faces, which carry exactly zero flux."""
    scheme = Scheme(spec, density.grid)
    interior = scheme.flux(density.values)
    out = []
    for axis, g in enumerate(interior):
        pad = [(0, 0)] * density.grid.ndim
        pad[axis] = (1, 1)
        out.append(np.pad(g, pad))
    return out


class _Stepper:
    """Implicit-Euler stepping engine with a cached factorization."""

    def __init__(self, scheme, dt):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.scheme = scheme
        self.dt = float(dt)
        n = int(np.prod(scheme.grid.cells))
        A = scheme.operator()
        try:
            self.lu = splu((sparse.identity(n, format="csc") - self.dt * A).tocsc())
        except RuntimeError as exc:
            raise NumericsError(f"factorization of the implicit operator failed: {exc}")

    def advance(self, values):
        flat = values.ravel()
        mass_before = flat.sum()
        out = self.lu.solve(flat)
        if not np.all(np.isfinite(out)):
            raise NumericsError("implicit solve produced non-finite values")
        neg = out.min()
        if neg < NEGATIVITY_LIMIT:
            raise NumericsError(f"negativity {neg:.3e} beyond scheme tolerance")
        np.clip(out, 0.0, None, out=out)
        drift = abs(out.sum() - mass_before) * self.scheme.grid.cell_volume
        if drift > 1e-12:
            raise NumericsError(f"mass changed by {drift:.3e} in one step")
        return out.reshape(self.scheme.grid.cells)


def step(spec, density, dt, max_substep=1e-3):
    """Advance a density by dt with implicit Euler substeps of at most
    max_substep; mass is conserved to 1e-12 per substep and values stay
    nonnegative."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    n_sub = max(1, ceil(dt / max_substep - 1e-12))
    scheme = Scheme(spec, density.grid)
    stepper = _Stepper(scheme, dt / n_sub)
    vals = density.values
    for _ in range(n_sub):
        vals = stepper.advance(vals)
    return DensityField(density.grid, vals, density.time + dt)


def solve(spec, f0, t_end, output_times, dt=1e-3, boundary_limit=BOUNDARY_MASS_LIMIT):
    """March the density to t_end, returning one snapshot per output time.

    Aborts when boundary cells ever hold more than boundary_limit of the mass
    or when the total mass drifts by more than 1e-9 per unit time.
    """
    output_times = [float(t) for t in output_times]
    if any(b > a for a, b in zip(output_times[1:], output_times)):
        raise ConfigError("output_times must be sorted")
    if output_times and (output_times[0] < 0.0 or output_times[-1] > t_end + 1e-12):
        raise ConfigError("output_times must lie within [0, t_end]")
    if t_end < 0:
        raise ConfigError("t_end must be nonnegative")
    if t_end == 0.0:
        return [DensityField(f0.grid, f0.values, t) for t in output_times]
    scheme = Scheme(spec, f0.grid)
    stepper = _Stepper(scheme, dt)
    mass0 = f0.mass()
    vals = f0.values
    t = f0.time
    bmask = f0.grid.boundary_mask()
    snapshots = []
    remainder_stepper = None
    for target in output_times:
        while target - t > 1e-12:
            span = target - t
            if span >= dt - 1e-12:
                vals = stepper.advance(vals)
                t += dt
            else:
                if remainder_stepper is None or abs(remainder_stepper.dt - span) > 1e-15:
                    remainder_stepper = _Stepper(scheme, span)
                vals = remainder_stepper.advance(vals)
                t = target
            bmass = vals[bmask].sum() * f0.grid.cell_volume
            if bmass > boundary_limit:
                raise NumericsError(
                    f"boundary cells hold {bmass:.3e} of the mass at t={t:.4f}; "
                    "enlarge the domain"
                )
        snap = DensityField(f0.grid, vals, target)
        drift = abs(snap.mass() - mass0)
        if drift > 1e-9 * max(1.0, t - f0.time):
            raise NumericsError(f"mass drifted by {drift:.3e} during the solve")
        snapshots.append(snap)
    return snapshots


def _gibbs_stationary(spec, grid, operator):
    pts = grid.points()
    u = spec.potential.eval_on([pts[..., i] for i in range(grid.ndim)])
    u = np.broadcast_to(u, grid.cells).astype(float)
    logp = -spec.alpha * u
    shift = logp.max()
    vals = np.exp(logp - shift)
    total = vals.sum() * grid.cell_volume
    # discrete partition function sum exp(-alpha U) vol, in overflow-safe form
    log_k = shift + np.log(total)
    partition = float(np.exp(log_k))
    vals = vals / total
    resid = np.abs(operator @ vals.ravel()).max()
    if resid > 1e-8 * vals.max():
        raise NumericsError(f"stationary residual {resid:.3e} too large")
    return vals, partition


def _nullspace_stationary(grid, operator):
    """Null vector of the generator by inverse power iteration.

    (I - tau A)^{-1} has spectral radius 1 attained only by the stationary
    vector, and as the inverse of an irreducible M-matrix it is entrywise
    positive, so the iterates stay strictly positive by construction.
    """
    n = int(np.prod(grid.cells))
    tau = 50.0
    try:
        lu = splu((sparse.identity(n, format="csc") - tau * operator).tocsc())
    except RuntimeError as exc:
        raise NumericsError(f"stationary null-space factorization failed: {exc}")
    sol = np.full(n, 1.0 / n)
    resid = np.inf
    for _ in range(500):
        sol = lu.solve(sol)
        if not np.all(np.isfinite(sol)):
            raise NumericsError("stationary null-space solve diverged")
        sol /= sol.sum()
        resid = np.abs(operator @ sol).max()
        if resid <= 1e-10 * sol.max():
            break
    if resid > 1e-8 * sol.max():
        raise NumericsError(f"stationary solve ill-conditioned (residual {resid:.3e})")
    if sol.min() <= 0.0:
        raise NumericsError(
            "stationary solve lost strict positivity; shrink the domain so the "
            "density's dynamic range stays within solver precision"
        )
    return sol.reshape(grid.cells)


def stationary_density(spec, grid, method="direct-null-space"):
    """Stationary density of the scheme on a grid.

    Gradient systems get the exact discrete Gibbs state (with its partition
    function as normalization); otherwise the generator's null space is
    computed directly, or by long-time integration when method="long-time".
    """
    scheme = Scheme(spec, grid)
    A = scheme.operator()
    if method == "long-time":
        f = init_density(grid, "uniform")
        vals = f.values
        stepper = _Stepper(scheme, 0.01)
        for _ in range(20000):
            new = stepper.advance(vals)
            if np.abs(A @ new.ravel()).max() <= 1e-10 * new.max():
                vals = new
                break
            vals = new
        else:
            raise NumericsError("long-time stationary iteration did not converge")
        dens = DensityField(grid, vals, 0.0).normalize()
        return StationarySolution(dens, None, "long-time")
    if method != "direct-null-space":
        raise ConfigError(f"unknown stationary method '{method}'")
    if spec.potential is not None:
        vals, partition = _gibbs_stationary(spec, grid, A)
        dens = DensityField(grid, vals, 0.0)
        return StationarySolution(dens, partition, "direct-null-space")
    vals = _nullspace_stationary(grid, A)
    dens = DensityField(grid, vals, 0.0).normalize()
    return StationarySolution(dens, None, "direct-null-space")


def write_density(density, path):
    """Dump a snapshot: header `t=<time> grid=<counts> bounds=<list>`, then
    one cell value per line in row-major order."""
    grid = density.grid
    counts = "x".join(str(n) for n in grid.cells)
    bounds = "x".join(f"[{lo:.17g},{hi:.17g}]" for lo, hi in grid.bounds)
    with open(path, "w") as fh:
        fh.write(f"t={density.time:.17g} grid={counts} bounds={bounds}\n")
        for v in density.values.ravel():
            fh.write(f"{v:.17g}\n")


def read_density(path):
    """Read a snapshot written by write_density."""
    with open(path) as fh:
        header = fh.readline().strip()
        fields = dict(item.split("=", 1) for item in header.split())
        t = float(fields["t"])
        cells = tuple(int(n) for n in fields["grid"].split("x"))
        bounds = tuple(
            tuple(float(v) for v in part.strip("[]").split(","))
            for part in fields["bounds"].split("x")
        )
        vals = np.array([float(line) for line in fh], dtype=float).reshape(cells)
    grid = make_grid(bounds, cells)
    return DensityField(grid, vals, t)
