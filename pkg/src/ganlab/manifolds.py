"""Synthetic distributions on low-dimensional supports, noise models, grids.

A :class:`ManifoldDistribution` is an immutable description (segment,
circle, point cloud, ...) plus a sampler.  Adding a :class:`NoiseSpec`
turns any of them into an absolutely continuous distribution whose density
is the noise density averaged over the support; :func:`convolved_density`
evaluates it and :func:`rasterize` discretizes it onto a :class:`GridDensity`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from . import diffcore as dc

__all__ = [
    "ManifoldDistribution", "NoiseSpec", "GridDensity", "SingularDensityError",
    "UnsupportedKindError", "GridCoverageError", "make_rng", "sample",
    "density", "convolved_density", "log_convolved_density_tensor",
    "rasterize", "grid_spec", "support_gap", "parallel_pair", "crossing_pair",
    "geometric_schedule",
]

KINDS = ("segment", "circle", "parallel_segments", "point_cloud", "box_uniform", "gaussian", "pushforward")
SINGULAR_KINDS = ("segment", "circle", "parallel_segments", "point_cloud", "pushforward")
_LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


class SingularDensityError(ValueError):
    """The distribution has no Lebesgue density (its support has measure zero)."""


class UnsupportedKindError(ValueError):
    pass


class GridCoverageError(ValueError):
    def __init__(self, leak: float, tol: float):
        super().__init__(f"grid does not cover the support: leaked mass {leak:.3e} exceeds {tol:.1e}")
        self.leak = leak


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *stream)``.

    Distinct stream tuples give independent, reproducible streams.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class ManifoldDistribution:
    kind: str
    ambient_dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be positive")

    # constructors ------------------------------------------------------
    @classmethod
    def segment(cls, start, end) -> "ManifoldDistribution":
        a, b = np.asarray(start, float), np.asarray(end, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("segment endpoints must be vectors of equal length")
        if np.linalg.norm(b - a) == 0:
            raise ValueError("segment endpoints coincide; use point_cloud")
        return cls("segment", a.size, {"start": a, "end": b})

    @classmethod
    def circle(cls, center, radius: float) -> "ManifoldDistribution":
        c = np.asarray(center, float)
        if c.shape != (2,):
            raise ValueError("circles live in the plane")
        if not radius > 0:
            raise ValueError("radius must be positive")
        return cls("circle", 2, {"center": c, "radius": float(radius)})

    @classmethod
    def parallel_segments(cls, offset: float, length: float = 1.0) -> "ManifoldDistribution":
        """Equal mixture of two horizontal segments at heights +-offset/2."""
        if not offset > 0:
            raise ValueError("offset must be positive")
        return cls("parallel_segments", 2, {"offset": float(offset), "length": float(length)})

    @classmethod
    def point_cloud(cls, atoms, weights=None) -> "ManifoldDistribution":
        x = np.atleast_2d(np.asarray(atoms, float))
        w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, float)
        if w.shape != (len(x),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("point_cloud weights must be nonnegative and sum to 1")
        return cls("point_cloud", x.shape[1], {"atoms": x, "weights": w})

    @classmethod
    def box_uniform(cls, low, high) -> "ManifoldDistribution":
        lo, hi = np.atleast_1d(np.asarray(low, float)), np.atleast_1d(np.asarray(high, float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box bounds must satisfy low < high per axis")
        return cls("box_uniform", lo.size, {"low": lo, "high": hi})

    @classmethod
    def gaussian(cls, mean, cov) -> "ManifoldDistribution":
        mu = np.atleast_1d(np.asarray(mean, float))
        sig = np.atleast_2d(np.asarray(cov, float))
        if sig.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match the mean")
        np.linalg.cholesky(sig)
        return cls("gaussian", mu.size, {"mean": mu, "cov": sig})

    @classmethod
    def pushforward(cls, generator: dc.Mlp, prior: "ManifoldDistribution") -> "ManifoldDistribution":
        if prior.ambient_dim != generator.in_dim:
            raise ValueError(f"prior dimension {prior.ambient_dim} != generator input dimension {generator.in_dim}")
        return cls("pushforward", generator.out_dim, {"generator": generator, "prior": prior})

    # helpers -----------------------------------------------------------
    @property
    def singular(self) -> bool:
        return self.kind in SINGULAR_KINDS

    def segments(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        """(start, end, mixture weight) for segment-like kinds."""
        if self.kind == "segment":
            return [(self.params["start"], self.params["end"], 1.0)]
        if self.kind == "parallel_segments":
            h, half = self.params["offset"] / 2.0, self.params["length"] / 2.0
            return [(np.array([-half, -h]), np.array([half, -h]), 0.5),
                    (np.array([-half, h]), np.array([half, h]), 0.5)]
        if self.kind == "pushforward":
            seg = self.as_segment()
            if seg is not None:
                return seg.segments()
        raise UnsupportedKindError(f"{self.kind} is not a union of segments")

    def as_segment(self) -> "ManifoldDistribution | None":
        """The exact segment image of an affine generator on a 1-D uniform prior, else None."""
        if self.kind != "pushforward":
            return self if self.kind == "segment" else None
        gen, prior = self.params["generator"], self.params["prior"]
        if len(gen.layers) != 1 or gen.layers[0].activation != "identity":
            return None
        if prior.kind != "box_uniform" or prior.ambient_dim != 1:
            return None
        w, b = gen.layers[0].weight.data[0], gen.layers[0].bias.data
        lo, hi = prior.params["low"][0], prior.params["high"][0]
        return ManifoldDistribution.segment(b + lo * w, b + hi * w)


def parallel_pair(offset: float = 0.5, length: float = 1.0):
    """Real and fake horizontal unit segments, disjoint at vertical distance ``offset``."""
    half = length / 2.0
    real = ManifoldDistribution.segment([-half, -offset / 2], [half, -offset / 2])
    fake = ManifoldDistribution.segment([-half, offset / 2], [half, offset / 2])
    return real, fake


def crossing_pair(angle: float = math.pi / 3, length: float = 1.0):
    """Two segments through the origin crossing transversally at ``angle``."""
    half = length / 2.0
    d = np.array([math.cos(angle), math.sin(angle)]) * half
    real = ManifoldDistribution.segment([-half, 0.0], [half, 0.0])
    fake = ManifoldDistribution.segment(-d, d)
    return real, fake


def geometric_schedule(sigma0: float, ratio: float, epochs: int) -> np.ndarray:
    """Per-epoch noise scales sigma0 * ratio**k (the default annealing schedule)."""
    return sigma0 * ratio ** np.arange(epochs)


# -- noise --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseSpec:
    family: str
    dimension: int
    sigma2: float = 0.0
    cov: np.ndarray | None = None
    clip_radius: float | None = None

    def __post_init__(self):
        if self.family not in ("gaussian_iso", "gaussian_full", "clipped_gaussian"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "gaussian_full":
            cov = np.atleast_2d(np.asarray(self.cov, float))
            if cov.shape != (self.dimension, self.dimension) or not np.allclose(cov, cov.T):
                raise ValueError("covariance must be a symmetric dimension x dimension matrix")
            np.linalg.cholesky(cov)
            object.__setattr__(self, "cov", cov)
        elif not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.family == "clipped_gaussian" and not (self.clip_radius and self.clip_radius > 0):
            raise ValueError("clip_radius must be positive")

    @classmethod
    def iso(cls, sigma: float, dimension: int) -> "NoiseSpec":
        return cls("gaussian_iso", dimension, sigma2=sigma * sigma)

    @classmethod
    def full(cls, cov) -> "NoiseSpec":
        cov = np.atleast_2d(np.asarray(cov, float))
        return cls("gaussian_full", cov.shape[0], cov=cov)

    @classmethod
    def clipped(cls, sigma: float, dimension: int, clip_sigmas: float = 4.0) -> "NoiseSpec":
        return cls("clipped_gaussian", dimension, sigma2=sigma * sigma, clip_radius=clip_sigmas * sigma)

    @property
    def sigma(self) -> float:
        if self.family == "gaussian_full":
            raise ValueError("full-covariance noise has no scalar sigma")
        return math.sqrt(self.sigma2)

    @property
    def clip_mass(self) -> float:
        """Probability that the unclipped Gaussian falls inside the clip ball."""
        return float(stats.chi2.cdf(self.clip_radius ** 2 / self.sigma2, self.dimension))

    def second_moment(self) -> float:
        """E||eps||^2."""
        if self.family == "gaussian_iso":
            return self.dimension * self.sigma2
        if self.family == "gaussian_full":
            return float(np.trace(self.cov))
        # truncated chi-square: E[X | X <= k] = d * F_{d+2}(k) / F_d(k)
        k = self.clip_radius ** 2 / self.sigma2
        d = self.dimension
        return self.sigma2 * d * float(stats.chi2.cdf(k, d + 2) / stats.chi2.cdf(k, d))

    def support_radius(self) -> float:
        return self.clip_radius if self.family == "clipped_gaussian" else math.inf

    def logpdf(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, float))
        d = self.dimension
        if self.family == "gaussian_full":
            return stats.multivariate_normal(np.zeros(d), self.cov).logpdf(u).reshape(-1)
        r2 = np.sum(u * u, axis=1)
        out = -0.5 * r2 / self.sigma2 - 0.5 * d * (_LOG_2PI + math.log(self.sigma2))
        if self.family == "clipped_gaussian":
            out = np.where(r2 <= self.clip_radius ** 2, out - math.log(self.clip_mass), -np.inf)
        return out

    def pdf(self, u) -> np.ndarray:
        return np.exp(self.logpdf(u))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dimension
        if self.family == "gaussian_full":
            return rng.multivariate_normal(np.zeros(d), self.cov, size=n)
        sigma = self.sigma
        if self.family == "gaussian_iso":
            return rng.normal(0.0, sigma, size=(n, d))
        out = np.empty((0, d))
        while len(out) < n:
            draw = rng.normal(0.0, sigma, size=(int(1.2 * (n - len(out))) + 16, d))
            keep = draw[np.sum(draw * draw, axis=1) <= self.clip_radius ** 2]
            out = np.vstack([out, keep])
        return out[:n]


# -- sampling and densities --------------------------------------------

def sample(dist: ManifoldDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. points of ``dist`` as an ``(n, ambient_dim)`` array."""
    if n < 1:
        raise ValueError("n must be at least 1")
    p = dist.params
    if dist.kind == "segment":
        t = rng.uniform(size=(n, 1))
        return p["start"] + t * (p["end"] - p["start"])
    if dist.kind == "parallel_segments":
        segs = dist.segments()
        pick = rng.integers(0, 2, size=n)
        t = rng.uniform(size=(n, 1))
        starts = np.stack([s[0] for s in segs])[pick]
        ends = np.stack([s[1] for s in segs])[pick]
        return starts + t * (ends - starts)
    if dist.kind == "circle":
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return p["center"] + p["radius"] * np.column_stack([np.cos(phi), np.sin(phi)])
    if dist.kind == "point_cloud":
        idx = rng.choice(len(p["atoms"]), size=n, p=p["weights"])
        return p["atoms"][idx].copy()
    if dist.kind == "box_uniform":
        return rng.uniform(p["low"], p["high"], size=(n, dist.ambient_dim))
    if dist.kind == "gaussian":
        return rng.multivariate_normal(p["mean"], p["cov"], size=n)
    z = sample(p["prior"], n, rng)
    return dc.forward(p["generator"], z).data


def density(dist: ManifoldDistribution, x) -> np.ndarray:
    """Lebesgue density of an absolutely continuous ``dist``; undefined for singular kinds."""
    if dist.singular:
        raise SingularDensityError(f"{dist.kind} has no density: its support has Lebesgue measure zero")
    x = np.atleast_2d(np.asarray(x, float))
    p = dist.params
    if dist.kind == "gaussian":
        return np.atleast_1d(stats.multivariate_normal(p["mean"], p["cov"]).pdf(x)).reshape(-1)
    inside = np.all((x >= p["low"]) & (x <= p["high"]), axis=1)
    return np.where(inside, 1.0 / np.prod(p["high"] - p["low"]), 0.0)


def _log_phi_diff(lo, hi):
    """log(Phi(hi) - Phi(lo)) for hi >= lo, without cancellation in either tail."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    flip = lo > 0
    a = np.where(flip, -lo, hi)
    b = np.where(flip, -hi, lo)
    la, lb = special.log_ndtr(a), special.log_ndtr(b)
    # entries with hi <= lo are masked below and may overflow here
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = la + np.log(-np.expm1(lb - la))
    return np.where(hi > lo, out, -np.inf)


def _segment_log_density(x, a, b, noise: NoiseSpec) -> np.ndarray:
    """log density of Uniform(segment a-b) + isotropic or clipped Gaussian noise."""
    d = x.shape[1]
    length = float(np.linalg.norm(b - a))
    u = (b - a) / length
    rel = x - a
    s = rel @ u
    h2 = np.maximum(np.sum(rel * rel, axis=1) - s * s, 0.0)
    sigma = noise.sigma
    base = -0.5 * h2 / noise.sigma2 - 0.5 * (d - 1) * (_LOG_2PI + math.log(noise.sigma2)) - math.log(length)
    if noise.family == "gaussian_iso":
        lo, hi = np.zeros_like(s), np.full_like(s, length)
    else:
        r2 = noise.clip_radius ** 2
        w = np.sqrt(np.maximum(r2 - h2, 0.0))
        lo = np.maximum(0.0, s - w)
        hi = np.where(h2 <= r2, np.minimum(length, s + w), lo)
        base = base - math.log(noise.clip_mass)
    # integral over t in [lo, hi] of the 1-D normal density at s - t
    return base + _log_phi_diff((s - hi) / sigma, (s - lo) / sigma)


def _exact_log_convolved(dist: ManifoldDistribution, noise: NoiseSpec, x: np.ndarray):
    p = dist.params
    if dist.kind == "point_cloud":
        diff = x[:, None, :] - p["atoms"][None, :, :]
        logk = noise.logpdf(diff.reshape(-1, dist.ambient_dim)).reshape(len(x), -1)
        with np.errstate(divide="ignore"):
            return special.logsumexp(logk, axis=1, b=p["weights"][None, :])
    if dist.kind == "gaussian" and noise.family != "clipped_gaussian":
        extra = noise.cov if noise.family == "gaussian_full" else noise.sigma2 * np.eye(dist.ambient_dim)
        return np.atleast_1d(stats.multivariate_normal(p["mean"], p["cov"] + extra).logpdf(x)).reshape(-1)
    if dist.kind == "box_uniform" and noise.family == "gaussian_iso":
        lo, hi, sigma = p["low"], p["high"], noise.sigma
        terms = _log_phi_diff((x - hi) / sigma, (x - lo) / sigma)
        return terms.sum(axis=1) - np.log(hi - lo).sum()
    if noise.family != "gaussian_full" and (dist.kind in ("segment", "parallel_segments") or dist.as_segment() is not None):
        parts = [_segment_log_density(x, a, b, noise) + math.log(w) for a, b, w in dist.segments()]
        with np.errstate(divide="ignore"):
            return special.logsumexp(np.stack(parts), axis=0)
    return None


def convolved_density(dist: ManifoldDistribution, noise: NoiseSpec, x, mc_samples: int = 10_000,
                      rng: np.random.Generator | None = None, method: str = "auto") -> np.ndarray:
    """Density of ``dist + noise`` at ``x``: the mean of the noise density at ``x - y``, ``y ~ dist``.

    ``method="auto"`` uses a closed form when one exists (point clouds,
    Gaussians, boxes, segments) and Monte Carlo otherwise; ``"mc"`` forces
    Monte Carlo with ``mc_samples`` draws.  Returns one value per row of ``x``.
    """
    if noise.dimension != dist.ambient_dim:
        raise ValueError(f"noise dimension {noise.dimension} != ambient dimension {dist.ambient_dim}")
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    x = np.atleast_2d(np.asarray(x, float))
    if method not in ("auto", "mc", "exact"):
        raise ValueError(f"unknown method {method!r}")
    if method != "mc":
        logd = _exact_log_convolved(dist, noise, x)
        if logd is not None:
            return np.exp(logd)
        if method == "exact":
            raise UnsupportedKindError(f"no closed form for {dist.kind} with {noise.family} noise")
    if rng is None:
        raise ValueError("Monte Carlo evaluation needs an rng")
    ys = sample(dist, mc_samples, rng)
    return _mc_density(ys, noise, x)


def _mc_density(ys: np.ndarray, noise: NoiseSpec, x: np.ndarray, chunk: int = 4_000_000) -> np.ndarray:
    out = np.empty(len(x))
    rows = max(1, chunk // max(len(ys), 1))
    for i in range(0, len(x), rows):
        xb = x[i:i + rows]
        diff = (xb[:, None, :] - ys[None, :, :]).reshape(-1, x.shape[1])
        out[i:i + rows] = noise.pdf(diff).reshape(len(xb), -1).mean(axis=1)
    return out


def log_convolved_density_tensor(dist: ManifoldDistribution, noise: NoiseSpec, x: dc.Tensor) -> dc.Tensor:
    """Differentiable log density of ``dist + noise`` at the rows of ``x``.

    Supports isotropic Gaussian noise on segments, segment unions and point
    clouds; everything stays in log space so far-away points do not underflow.
    """
    if noise.family != "gaussian_iso":
        raise UnsupportedKindError("differentiable densities need isotropic Gaussian noise")
    x = dc.as_tensor(x)
    d = dist.ambient_dim
    s2 = noise.sigma2
    sigma = noise.sigma
    if dist.kind == "point_cloud":
        atoms, w = dist.params["atoms"], dist.params["weights"]
        keep = w > 0
        diff = x.reshape(-1, 1, d) - atoms[keep][None, :, :]
        logk = (diff * diff).sum(axis=2) * (-0.5 / s2) + np.log(w[keep])
        out = dc.logsumexp(logk, axis=1)
        return out - 0.5 * d * (_LOG_2PI + math.log(s2))
    out = None
    for a, b, wk in dist.segments():
        length = float(np.linalg.norm(b - a))
        u = (b - a) / length
        rel = x - a
        s = rel @ u.reshape(-1, 1)
        s = s.reshape(-1)
        h2 = (rel * rel).sum(axis=1) - s * s
        hi = s * (1.0 / sigma)
        lo = (s - length) * (1.0 / sigma)
        # Phi(hi) - Phi(lo) == Phi(-lo) - Phi(-hi); keep both arguments in the lower tail
        m = (lo.data > 0).astype(float)
        upper = hi * (1.0 - m) - lo * m
        lower = lo * (1.0 - m) - hi * m
        la = dc.log_ndtr(upper)
        diff = la + dc.log1mexp(dc.log_ndtr(lower) - la)
        term = h2 * (-0.5 / s2) + diff + (math.log(wk) - math.log(length) - 0.5 * (d - 1) * (_LOG_2PI + math.log(s2)))
        out = term if out is None else dc.logaddexp(out, term)
    return out


# -- grids ----------------------------------------------------------------

@dataclass
class GridDensity:
    """Probability masses on a regular lattice of cells."""

    bounds: np.ndarray
    resolution: tuple[int, ...]
    masses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, float))
        self.resolution = tuple(int(r) for r in self.resolution)
        self.masses = np.asarray(self.masses, float).reshape(self.resolution)
        if self.bounds.shape != (len(self.resolution), 2) or np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ValueError("bounds must be (low, high) per axis with low < high")
        if np.any(self.masses < 0):
            raise ValueError("cell masses must be nonnegative")
        if abs(self.masses.sum() - 1.0) > 1e-12:
            raise ValueError(f"cell masses sum to {self.masses.sum()!r}, not 1")

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def cell_widths(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    def axes(self) -> list[np.ndarray]:
        return _axes(self.bounds, self.resolution)

    def cell_centers(self) -> np.ndarray:
        return _centers(self.bounds, self.resolution)

    def same_lattice(self, other: "GridDensity") -> bool:
        return self.resolution == other.resolution and np.array_equal(self.bounds, other.bounds)

    def density_values(self) -> np.ndarray:
        return self.masses / self.cell_volume

    def to_csv(self, path) -> tuple[Path, Path]:
        """Write ``(i0, i1, ..., mass)`` rows plus a JSON sidecar with the lattice."""
        path = Path(path)
        idx = np.indices(self.resolution).reshape(self.dim, -1).T
        header = ",".join([f"i{k}" for k in range(self.dim)] + ["mass"])
        with path.open("w") as fh:
            fh.write(header + "\n")
            for row, m in zip(idx, self.masses.reshape(-1)):
                fh.write(",".join(map(str, row)) + f",{m:.17g}\n")
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({
            "bounds": self.bounds.tolist(), "resolution": list(self.resolution), "meta": self.meta,
        }, indent=2, sort_keys=True))
        return path, sidecar

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        path = Path(path)
        info = json.loads(path.with_suffix(".json").read_text())
        res = tuple(info["resolution"])
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        masses = np.zeros(res)
        masses[tuple(data[:, :-1].astype(int).T)] = data[:, -1]
        return cls(np.array(info["bounds"]), res, masses, info.get("meta", {}))


def _axes(bounds, resolution):
    return [lo + (np.arange(n) + 0.5) * (hi - lo) / n for (lo, hi), n in zip(bounds, resolution)]


def _centers(bounds, resolution):
    mesh = np.meshgrid(*_axes(bounds, resolution), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def grid_spec(dim: int = 2, diameter: float = 6.0, resolution: int = 200, center=None):
    """Cube lattice around ``center`` with side ``diameter`` (the default 200 cells/axis over C = 6)."""
    c = np.zeros(dim) if center is None else np.asarray(center, float)
    bounds = np.stack([c - diameter / 2, c + diameter / 2], axis=1)
    return bounds, (resolution,) * dim


def _histogram(points: np.ndarray, weights, bounds, resolution):
    edges = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(bounds, resolution)]
    counts, _ = np.histogramdd(points, bins=edges, weights=weights)
    return counts


def rasterize(dist: ManifoldDistribution, noise: NoiseSpec | None, bounds, resolution, *,
              rng: np.random.Generator | None = None, n_samples: int = 200_000,
              mc_samples: int = 4_000, leak_tol: float = 1e-3) -> GridDensity:
    """Discretize ``dist`` (optionally convolved with ``noise``) onto a lattice.

    With noise, or for absolutely continuous kinds, cell masses are the
    density at cell centers times the cell volume.  Point clouds drop their
    atoms into cells exactly; other singular supports are histogrammed from
    ``n_samples`` draws.  Mass falling outside the lattice beyond
    ``leak_tol`` raises :class:`GridCoverageError`.
    """
    bounds = np.atleast_2d(np.asarray(bounds, float))
    resolution = tuple(int(r) for r in np.broadcast_to(resolution, (len(bounds),)))
    if len(bounds) != dist.ambient_dim:
        raise ValueError(f"grid dimension {len(bounds)} != ambient dimension {dist.ambient_dim}")
    vol = float(np.prod((bounds[:, 1] - bounds[:, 0]) / np.array(resolution)))
    meta = {"kind": dist.kind, "noise": None if noise is None else noise.family}
    if noise is not None:
        centers = _centers(bounds, resolution)
        logd = _exact_log_convolved(dist, noise, centers)
        if logd is None:
            if rng is None:
                raise ValueError("Monte Carlo rasterization needs an rng")
            dens = _mc_density(sample(dist, mc_samples, rng), noise, centers)
            meta["mc_samples"] = mc_samples
        else:
            dens = np.exp(logd)
        raw = (dens * vol).reshape(resolution)
    elif not dist.singular:
        raw = (density(dist, _centers(bounds, resolution)) * vol).reshape(resolution)
    elif dist.kind == "point_cloud":
        raw = _histogram(dist.params["atoms"], dist.params["weights"], bounds, resolution)
    else:
        if rng is None:
            raise ValueError("histogramming a singular distribution needs an rng")
        raw = _histogram(sample(dist, n_samples, rng), None, bounds, resolution) / n_samples
        meta["n_samples"] = n_samples
    total = float(raw.sum())
    leak = max(0.0, 1.0 - total)
    if leak > leak_tol:
        raise GridCoverageError(leak, leak_tol)
    meta["leak"] = leak
    return GridDensity(bounds, resolution, raw / total, meta)


# -- support geometry ------------------------------------------------------

def _point_segment(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _segment_segment(p1, q1, p2, q2):
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = np.dot(d1, d1), np.dot(d2, d2), np.dot(d2, r)
    c, b = np.dot(d1, r), np.dot(d1, d2)
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-14 * a * e else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
    elif t > 1.0:
        t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm((p1 + s * d1) - (p2 + t * d2)))


def _circle_point(c, r, p):
    return abs(float(np.linalg.norm(p - c)) - r)


def _circle_segment(c, r, a, b):
    near = _point_segment(c, a, b)
    far = max(np.linalg.norm(a - c), np.linalg.norm(b - c))
    if near <= r <= far:
        return 0.0
    return near - r if r < near else r - far


def _circle_circle(c1, r1, c2, r2):
    d = float(np.linalg.norm(c1 - c2))
    if abs(r1 - r2) <= d <= r1 + r2:
        return 0.0
    return d - r1 - r2 if d > r1 + r2 else abs(r1 - r2) - d


def _primitives(dist: ManifoldDistribution):
    if dist.kind == "pushforward":
        raise UnsupportedKindError("pushforward supports have no closed-form geometry")
    if dist.kind in ("segment", "parallel_segments"):
        return [("segment", a, b) for a, b, _ in dist.segments()]
    if dist.kind == "circle":
        return [("circle", dist.params["center"], dist.params["radius"])]
    if dist.kind == "point_cloud":
        return [("point", x) for x, w in zip(dist.params["atoms"], dist.params["weights"]) if w > 0]
    if dist.kind == "box_uniform":
        return [("box", dist.params["low"], dist.params["high"])]
    return [("everywhere",)]


def _box_point(lo, hi, p):
    return float(np.linalg.norm(np.maximum(0.0, np.maximum(lo - p, p - hi))))


def _pair_gap(a, b) -> float:
    ka, kb = a[0], b[0]
    if "everywhere" in (ka, kb):
        return 0.0
    order = ("point", "segment", "circle", "box")
    if order.index(ka) > order.index(kb):
        a, b, ka, kb = b, a, kb, ka
    if ka == "point":
        p = a[1]
        if kb == "point":
            return float(np.linalg.norm(p - b[1]))
        if kb == "segment":
            return _point_segment(p, b[1], b[2])
        if kb == "circle":
            return _circle_point(b[1], b[2], p)
        return _box_point(b[1], b[2], p)
    if ka == "segment":
        if kb == "segment":
            return _segment_segment(a[1], a[2], b[1], b[2])
        if kb == "circle":
            return _circle_segment(b[1], b[2], a[1], a[2])
        # distance to a box is convex along the segment
        from scipy.optimize import minimize_scalar
        res = minimize_scalar(lambda t: _box_point(b[1], b[2], a[1] + t * (a[2] - a[1])),
                              bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        return float(min(res.fun, _box_point(b[1], b[2], a[1]), _box_point(b[1], b[2], a[2])))
    if ka == "circle" and kb == "circle":
        return _circle_circle(a[1], a[2], b[1], b[2])
    if ka == "box" and kb == "box":
        gap = np.maximum(0.0, np.maximum(a[1] - b[2], b[1] - a[2]))
        return float(np.linalg.norm(gap))
    raise UnsupportedKindError(f"no closed-form gap between {ka} and {kb}")


def support_gap(a: ManifoldDistribution, b: ManifoldDistribution) -> float:
    """Minimal Euclidean distance between the supports of ``a`` and ``b``."""
    if a.ambient_dim != b.ambient_dim:
        raise ValueError("distributions live in different ambient dimensions")
    return min(_pair_gap(pa, pb) for pa in _primitives(a) for pb in _primitives(b))
