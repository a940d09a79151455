"""Statistical distances on lattices and empirical measures.

Grid divergences (KL, JSD, total variation) act on :class:`GridDensity`
pairs defined on one lattice.  Exact Wasserstein-1 between empirical
measures runs a network-simplex min-cost flow on integer-scaled costs, and
the bound calculators relate the two families through additive noise.

An infinite divergence is returned as a :class:`DivergenceValue` whose
``infinite`` flag is set.  Converting it to ``float`` raises
:class:`InfiniteDivergenceError`, so the marker cannot silently enter
downstream arithmetic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.spatial.distance import cdist

from . import _ot
from .manifolds import (
    GridDensity,
    ManifoldDistribution,
    NoiseSpec,
    UnsupportedKindError,
    convolved_density,
    rasterize,
    sample,
    support_gap,
)

LOG2 = math.log(2.0)
COST_SCALE = 1e9
MASS_SCALE = 1 << 40
_INT_LIMIT = 2**62


class GridMismatchError(ValueError):
    """Two grid densities do not share a lattice."""


class InfiniteDivergenceError(ArithmeticError):
    """An infinite divergence was used where a finite number is required."""


class BoundDomainError(ValueError):
    """Inputs to a bound calculator fall outside its domain."""


@dataclass(frozen=True)
class DivergenceValue:
    """A divergence with an explicit infinity tag and provenance metadata."""

    value: float
    method: str
    infinite: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def finite(cls, value: float, method: str, **meta) -> "DivergenceValue":
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"divergence value must be finite and nonnegative, got {value!r}")
        return cls(float(value), method, False, meta)

    @classmethod
    def infinity(cls, method: str, **meta) -> "DivergenceValue":
        return cls(math.nan, method, True, meta)

    def __float__(self) -> float:
        if self.infinite:
            raise InfiniteDivergenceError(f"{self.method} divergence is +inf")
        return self.value

    def format(self) -> str:
        """CSV-friendly text: ``inf`` for the marker, 17 significant digits otherwise."""
        return "inf" if self.infinite else f"{self.value:.17g}"

    def __repr__(self) -> str:
        return f"DivergenceValue({self.format()}, method={self.method!r})"


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms in R^d; weights are nonnegative and sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one point")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, float)
        n = pts.shape[0]
        if n < 1:
            raise ValueError("an empirical measure needs at least one point")
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def from_grid(cls, grid: GridDensity) -> "EmpiricalMeasure":
        """Cell-center atoms carrying the grid masses (empty cells dropped)."""
        m = grid.masses.reshape(-1)
        keep = m > 0
        return cls(grid.cell_centers()[keep], m[keep] / m[keep].sum())

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Coupling:
    """Sparse transport plan: ``mass[k]`` moves from source ``src[k]`` to target ``dst[k]``."""

    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray
    shape: tuple[int, int]

    def matrix(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.src, self.dst), self.mass)
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.src, self.mass, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.dst, self.mass, minlength=self.shape[1])

    def cost(self, cost_matrix: np.ndarray) -> float:
        return float(np.dot(self.mass, cost_matrix[self.src, self.dst]))


# -- grid divergences ------------------------------------------------------

def _check_lattice(p: GridDensity, q: GridDensity):
    if not p.same_lattice(q):
        raise GridMismatchError(
            f"grids differ: resolution {p.resolution} vs {q.resolution}, "
            f"bounds {p.bounds.tolist()} vs {q.bounds.tolist()}")


def _grid_meta(p: GridDensity) -> dict:
    return {"resolution": list(p.resolution), "bounds": p.bounds.tolist()}


def _xlogy_ratio(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of a*log(a/b) over cells with a > 0 (callers guarantee b > 0 there)."""
    pos = a > 0
    return float(np.sum(a[pos] * (np.log(a[pos]) - np.log(b[pos]))))


def kl_grid(p: GridDensity, q: GridDensity) -> DivergenceValue:
    """KL(p || q) over lattice cells; infinite when p charges a cell q leaves empty."""
    _check_lattice(p, q)
    a, b = p.masses, q.masses
    if np.any((a > 0) & (b == 0)):
        return DivergenceValue.infinity("kl_grid", **_grid_meta(p))
    return DivergenceValue.finite(max(_xlogy_ratio(a, b), 0.0), "kl_grid", **_grid_meta(p))


def jsd_grid(p: GridDensity, q: GridDensity) -> DivergenceValue:
    """Jensen-Shannon divergence through the mixture (p + q) / 2; lies in [0, log 2]."""
    _check_lattice(p, q)
    a, b = p.masses, q.masses
    if not np.any((a > 0) & (b > 0)):
        return DivergenceValue.finite(LOG2, "jsd_grid", disjoint=True, **_grid_meta(p))
    m = 0.5 * (a + b)
    value = 0.5 * _xlogy_ratio(a, m) + 0.5 * _xlogy_ratio(b, m)
    return DivergenceValue.finite(min(max(value, 0.0), LOG2), "jsd_grid", **_grid_meta(p))


def tv_grid(p: GridDensity, q: GridDensity) -> DivergenceValue:
    """Total variation: half the L1 distance between cell masses."""
    _check_lattice(p, q)
    value = 0.5 * float(np.abs(p.masses - q.masses).sum())
    return DivergenceValue.finite(min(value, 1.0), "tv_grid", **_grid_meta(p))


def _disjoint(a: ManifoldDistribution, b: ManifoldDistribution, cell: float) -> float:
    if cell <= 0:
        raise ValueError("cell size must be positive")
    gap = support_gap(a, b)
    if gap <= cell:
        raise UnsupportedKindError(
            f"singular supports are within one cell (gap {gap:.3g} <= {cell:.3g}); "
            "divergences between overlapping singular measures need noise")
    return gap


def singular_jsd(a: ManifoldDistribution, b: ManifoldDistribution, cell: float) -> DivergenceValue:
    """JSD of singular measures whose supports are separated by more than ``cell``: exactly log 2."""
    gap = _disjoint(a, b, cell)
    return DivergenceValue.finite(LOG2, "support_disjoint", gap=gap, cell=cell)


def singular_kl(a: ManifoldDistribution, b: ManifoldDistribution, cell: float) -> DivergenceValue:
    """KL of singular measures whose supports are separated by more than ``cell``: +inf marker."""
    gap = _disjoint(a, b, cell)
    return DivergenceValue.infinity("support_disjoint", gap=gap, cell=cell)


# -- optimal discriminator -------------------------------------------------

def _dstar(pr: np.ndarray, pg: np.ndarray) -> np.ndarray:
    pr = np.asarray(pr, float)
    pg = np.asarray(pg, float)
    tot = pr + pg
    out = np.full(np.broadcast(pr, pg).shape, 0.5)
    np.divide(pr, tot, out=out, where=tot > 0)
    return out


def optimal_discriminator(pr, pg, x=None) -> np.ndarray:
    """D*(x) = P_r(x) / (P_r(x) + P_g(x)), set to 0.5 where both densities vanish.

    ``pr`` and ``pg`` may be grid densities (evaluated per cell, or at the
    cells containing the rows of ``x``), callables mapping an (n, d) array
    to densities, or arrays of density values.
    """
    if isinstance(pr, GridDensity) and isinstance(pg, GridDensity):
        _check_lattice(pr, pg)
        field_ = _dstar(pr.masses, pg.masses)
        if x is None:
            return field_
        return field_[_cell_index(pr, x)]
    if callable(pr) and callable(pg):
        if x is None:
            raise ValueError("query points are required for density callables")
        pts = np.atleast_2d(np.asarray(x, float))
        return _dstar(pr(pts), pg(pts))
    return _dstar(pr, pg)


def _cell_index(grid: GridDensity, x) -> tuple[np.ndarray, ...]:
    pts = np.asarray(x, float).reshape(-1, grid.dim)
    lo = grid.bounds[:, 0]
    idx = np.floor((pts - lo) / grid.cell_widths).astype(int)
    idx = np.clip(idx, 0, np.array(grid.resolution) - 1)
    return tuple(idx.T)


# -- exact Wasserstein-1 -----------------------------------------------------

def _integer_masses(w: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``w * total`` to integers summing to ``total``."""
    raw = w * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")[:short]
        base[order] += 1
    return base


def wasserstein_exact(a: EmpiricalMeasure, b: EmpiricalMeasure, *, backend: str | None = None,
                      scale: float = COST_SCALE) -> tuple[DivergenceValue, Coupling]:
    """Exact W1 under Euclidean ground cost via network-simplex min-cost flow.

    Costs are rounded to integers at resolution ``1/scale`` so pivoting is
    exact; the returned value is the true-cost of the optimal integer plan,
    which is within ``0.5/scale`` of the continuous optimum.
    """
    if not isinstance(a, EmpiricalMeasure) or not isinstance(b, EmpiricalMeasure):
        raise TypeError("wasserstein_exact takes EmpiricalMeasure arguments")
    if a.dim != b.dim:
        raise ValueError(f"measures live in R^{a.dim} and R^{b.dim}")
    solve = _ot.solve if backend is None else _ot.BACKENDS[backend]
    ia = _integer_masses(a.weights, MASS_SCALE)
    ib = _integer_masses(b.weights, MASS_SCALE)
    ka, kb = np.flatnonzero(ia > 0), np.flatnonzero(ib > 0)
    cost = cdist(a.points[ka], b.points[kb])
    n_nodes = len(ka) + len(kb) + 1
    max_cost = float(cost.max())
    # node potentials reach about n_nodes^2 * max integer cost; keep them in int64
    limit = _INT_LIMIT / (n_nodes + 1) ** 2
    eff_scale = scale if max_cost * scale < limit else limit / max(max_cost, 1e-300)
    icost = np.rint(cost * eff_scale).astype(np.int64)
    src, dst, flow, iters = solve(icost, ia[ka], ib[kb])
    mass = flow / MASS_SCALE
    plan = Coupling(ka[src], kb[dst], mass, (len(a), len(b)))
    value = float(np.dot(mass, cost[src, dst]))
    backend_name = backend or _ot.BACKEND
    return (DivergenceValue.finite(max(value, 0.0), "wasserstein_exact", backend=backend_name,
                                   pivots=int(iters), cost_scale=eff_scale), plan)


def wasserstein(a, b, **kw) -> float:
    """Convenience: W1 between two point arrays (uniform weights) or measures."""
    if not isinstance(a, EmpiricalMeasure):
        a = EmpiricalMeasure.uniform(a)
    if not isinstance(b, EmpiricalMeasure):
        b = EmpiricalMeasure.uniform(b)
    return float(wasserstein_exact(a, b, **kw)[0])


# -- bound calculators ---------------------------------------------------------

def noise_wasserstein_bound(noise: NoiseSpec) -> float:
    """sqrt(E|eps|^2): the transport cost bound between P_X and P_{X+eps}."""
    return math.sqrt(noise.second_moment())


def wasserstein_jsd_bound(V: float, C: float, jsd_noisy) -> float:
    """2 sqrt(V) + 2 C sqrt(JSD) for noise variance ``V`` and support diameter ``C``."""
    if isinstance(jsd_noisy, DivergenceValue):
        jsd_noisy = float(jsd_noisy)
    if V < 0 or C < 0 or jsd_noisy < 0:
        raise BoundDomainError(f"bound inputs must be nonnegative (V={V}, C={C}, jsd={jsd_noisy})")
    if jsd_noisy > LOG2 + 1e-9:
        raise BoundDomainError(f"JSD {jsd_noisy!r} exceeds log 2; the JSD computation is broken")
    return 2.0 * math.sqrt(V) + 2.0 * C * math.sqrt(min(jsd_noisy, LOG2))


BOUND_FIELDS = ("config_id", "seed", "W_exact", "slack", "V_sqrt", "C", "jsd_noisy", "rhs", "holds")


@dataclass(frozen=True)
class BoundCheck:
    """One bound-check record: holds when ``W_exact <= rhs + slack``."""

    config_id: str
    seed: int
    W_exact: float
    slack: float
    V_sqrt: float
    C: float
    jsd_noisy: float
    rhs: float
    holds: int

    def row(self) -> list[str]:
        out = []
        for name in BOUND_FIELDS:
            v = getattr(self, name)
            out.append(f"{v:.17g}" if isinstance(v, float) else str(v))
        return out


def write_bound_checks(path, checks: Iterable[BoundCheck]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_FIELDS)
        for c in checks:
            w.writerow(c.row())
    return path


def noise_lemma_check(dist: ManifoldDistribution, noise: NoiseSpec, n: int, rng: np.random.Generator,
                      config_id: str = "", seed: int = 0) -> BoundCheck:
    """Compare W(A, B) for A ~ P_X and B ~ P_{X+eps} against sqrt(V) plus measured slack.

    ``B`` is built from a second independent draw ``A'`` so the check is a
    population statement; the empirical-OT slack is W(A, A').
    """
    a = sample(dist, n, rng)
    a2 = sample(dist, n, rng)
    b = a2 + noise.sample(n, rng)
    w_ab = wasserstein(a, b)
    slack = wasserstein(a, a2)
    v_sqrt = noise_wasserstein_bound(noise)
    rhs = v_sqrt
    return BoundCheck(config_id, seed, w_ab, slack, v_sqrt, math.nan, math.nan, rhs,
                      int(w_ab <= rhs + slack))


def support_radius(dist: ManifoldDistribution, center=None) -> float:
    """Radius of a ball (around ``center``, default origin) containing the support."""
    c = np.zeros(dist.ambient_dim) if center is None else np.asarray(center, float)
    if dist.kind in ("segment", "parallel_segments", "pushforward"):
        pts = np.concatenate([[s[0], s[1]] for s in dist.segments()])
    elif dist.kind == "point_cloud":
        pts = dist.params["atoms"]
    elif dist.kind == "box_uniform":
        lo, hi = dist.params["low"], dist.params["high"]
        pts = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(dist.ambient_dim, -1).T
    elif dist.kind == "circle":
        return float(np.linalg.norm(dist.params["center"] - c) + dist.params["radius"])
    else:
        raise UnsupportedKindError(f"{dist.kind} has unbounded or implicit support")
    return float(np.max(np.linalg.norm(pts - c, axis=1)))


def jsd_bound_check(real: ManifoldDistribution, fake: ManifoldDistribution, noise: NoiseSpec,
                    n: int, rng: np.random.Generator, *, resolution: int = 200,
                    config_id: str = "", seed: int = 0) -> BoundCheck:
    """Check W(P_r, P_g) <= 2 sqrt(V) + 2 C sqrt(JSD(P_{r+eps} || P_{g+eps})).

    ``W`` is estimated by exact OT between ``n``-sample sets; the slack is
    W(R, R') + W(G, G') from independent resamples.  ``C`` is the diameter
    of a ball holding both noisy supports and the noisy JSD comes from
    rasterized convolved densities on a ``resolution``-per-axis lattice.
    """
    kappa = noise.support_radius()
    if not math.isfinite(kappa):
        raise BoundDomainError("the diameter bound needs noise with bounded support")
    radius = max(support_radius(real), support_radius(fake)) + kappa
    C = 2.0 * radius
    d = real.ambient_dim
    bounds = np.tile([-radius, radius], (d, 1))
    jsd = float(jsd_grid(rasterize(real, noise, bounds, resolution, rng=rng),
                         rasterize(fake, noise, bounds, resolution, rng=rng)))
    r1, r2 = sample(real, n, rng), sample(real, n, rng)
    g1, g2 = sample(fake, n, rng), sample(fake, n, rng)
    w = wasserstein(r1, g1)
    slack = wasserstein(r1, r2) + wasserstein(g1, g2)
    V = noise.second_moment()
    rhs = wasserstein_jsd_bound(V, C, jsd)
    return BoundCheck(config_id, seed, w, slack, math.sqrt(V), C, jsd, rhs, int(w <= rhs + slack))


def density_callable(dist: ManifoldDistribution, noise: NoiseSpec, **kw) -> Callable[[np.ndarray], np.ndarray]:
    """Bind ``convolved_density`` to a distribution for use with :func:`optimal_discriminator`."""
    return lambda x: convolved_density(dist, noise, x, **kw)


__all__ = [
    "LOG2", "COST_SCALE", "MASS_SCALE", "GridMismatchError", "InfiniteDivergenceError", "BoundDomainError",
    "DivergenceValue", "EmpiricalMeasure", "Coupling", "kl_grid", "jsd_grid", "tv_grid", "singular_jsd",
    "singular_kl", "optimal_discriminator", "wasserstein_exact", "wasserstein", "noise_wasserstein_bound",
    "wasserstein_jsd_bound", "BoundCheck", "BOUND_FIELDS", "write_bound_checks", "noise_lemma_check",
    "support_radius", "jsd_bound_check", "density_callable",
]
