"""GAN losses, discriminator training and gradient probes.

Every experiment here holds the generator fixed and studies what the
discriminator passes back to it:

* ``train_discriminator`` trains ``D`` from scratch and records a
  :class:`GradientProbe` at each checkpoint (loss, held-out accuracy,
  generator-gradient norm and spread, input-gradient norms on both
  supports, the measured discriminator error ``eps_hat`` and the Jacobian
  scale ``m_hat``).
* ``cauchy_simulation`` draws the white-noise model of a -log D update.
* ``logd_identity_check``, ``noisy_gradient_decomposition`` and
  ``noisy_jsd_gradient_check`` compare closed-form optimal-discriminator
  gradients with divergence derivatives taken by finite differences.

Random streams come from :func:`ganlab.manifolds.make_rng` so each
``(config, seed)`` pair replays bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import diffcore as dc
from .divergence import jsd_grid, kl_grid
from .manifolds import (
    ManifoldDistribution,
    NoiseSpec,
    UnsupportedKindError,
    log_convolved_density_tensor,
    make_rng,
    rasterize,
    sample,
    support_gap,
)

LOG_FLOOR = 1e-12
GEN_LOSSES = ("original", "neg_log_d", "noisy_original")
CSV_FIELDS = ("iteration", "disc_loss", "accuracy", "gen_grad_norm", "grad_var",
              "grad_x_norm_real", "grad_x_norm_fake", "eps_hat", "m_hat")
BOUND_SLACK = 1e-8

# stream ids passed to make_rng(seed, stream)
_S_DISC_INIT, _S_TRAIN, _S_HOLDOUT, _S_PROBE, _S_VARIANCE, _S_NOISE = range(1, 7)


class DensityUnderflowError(FloatingPointError):
    """Convolved densities fell below the representable range."""


# -- configuration --------------------------------------------------------

@dataclass
class GanConfig:
    """A fixed generator, a target distribution and the discriminator training protocol."""

    generator: dc.Mlp
    prior: ManifoldDistribution
    real: ManifoldDistribution
    disc_hidden: tuple[int, ...] = (32, 32)
    disc_activation: str = "relu"
    gen_loss: str = "original"
    noise: NoiseSpec | None = None
    batch: int = 256
    d_steps_per_g_step: int = 1
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-2
    n_holdout: int = 10_000
    checkpoint_every: int = 100
    probe_batch: int = 512
    variance_batches: int = 16
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if self.gen_loss not in GEN_LOSSES:
            raise ValueError(f"gen_loss must be one of {GEN_LOSSES}, got {self.gen_loss!r}")
        if self.gen_loss == "noisy_original" and self.noise is None:
            raise ValueError("noisy_original needs a noise spec")
        if self.batch < 2:
            raise ValueError("batch must be at least 2")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be positive")
        if self.generator.in_dim != self.prior.ambient_dim:
            raise ValueError("generator input dimension does not match the prior")
        if self.generator.out_dim != self.real.ambient_dim:
            raise ValueError("generator output dimension does not match the data space")
        if self.checkpoint_every < 1 or self.probe_batch < 1 or self.variance_batches < 2:
            raise ValueError("checkpoint_every and probe_batch must be positive, variance_batches >= 2")

    @property
    def fake(self) -> ManifoldDistribution:
        return ManifoldDistribution.pushforward(self.generator, self.prior)

    def init_discriminator(self) -> dc.Mlp:
        sizes = [self.real.ambient_dim, *self.disc_hidden, 1]
        acts = [self.disc_activation] * len(self.disc_hidden) + ["sigmoid"]
        return dc.Mlp.init(sizes, acts, make_rng(self.seed, _S_DISC_INIT))


def affine_segment_generator(start, end) -> dc.Mlp:
    """One identity layer mapping z in [0, 1] onto the segment from ``start`` to ``end``."""
    a, b = np.asarray(start, float), np.asarray(end, float)
    return dc.Mlp.from_arrays([(b - a).reshape(1, -1)], [a], ["identity"])


def unit_prior() -> ManifoldDistribution:
    return ManifoldDistribution.box_uniform([0.0], [1.0])


def disjoint_segments_config(offset: float = 0.5, length: float = 1.0, **overrides) -> GanConfig:
    """Horizontal real segment at height -offset/2, generator image at +offset/2."""
    half = length / 2.0
    real = ManifoldDistribution.segment([-half, -offset / 2], [half, -offset / 2])
    gen = affine_segment_generator([-half, offset / 2], [half, offset / 2])
    return GanConfig(generator=gen, prior=unit_prior(), real=real, **overrides)


def matched_config(length: float = 1.0, **overrides) -> GanConfig:
    """Generator image equal to the real segment: no discriminator can beat chance."""
    half = length / 2.0
    real = ManifoldDistribution.segment([-half, 0.0], [half, 0.0])
    gen = affine_segment_generator([-half, 0.0], [half, 0.0])
    return GanConfig(generator=gen, prior=unit_prior(), real=real, **overrides)


def crossing_config(sigma: float = 0.3, angle: float = math.pi / 3, length: float = 1.0, **overrides) -> GanConfig:
    """Real and generated segments crossing at ``angle`` through the origin, with Gaussian noise."""
    half = length / 2.0
    d = np.array([math.cos(angle), math.sin(angle)]) * half
    real = ManifoldDistribution.segment([-half, 0.0], [half, 0.0])
    overrides.setdefault("noise", NoiseSpec.iso(sigma, 2))
    return GanConfig(generator=affine_segment_generator(-d, d), prior=unit_prior(), real=real, **overrides)


# -- losses --------------------------------------------------------------

def _floored_log(x: dc.Tensor, floor: float) -> dc.Tensor:
    return dc.log(dc.clamp_min(x, floor))


def disc_loss(D: dc.Mlp, real_batch, fake_batch, floor: float = LOG_FLOOR) -> dc.Tensor:
    """Negated discriminator objective -(E log D(x_r) + E log(1 - D(x_f))), logs floored."""
    real_batch = dc.as_tensor(real_batch)
    fake_batch = dc.as_tensor(fake_batch)
    if real_batch.shape[0] == 0 or fake_batch.shape[0] == 0:
        raise ValueError("disc_loss needs nonempty real and fake batches")
    dr = dc.forward(D, real_batch)
    df = dc.forward(D, fake_batch)
    return -(_floored_log(dr, floor).mean() + _floored_log(1.0 - df, floor).mean())


def gen_loss(D: dc.Mlp, fake_batch, kind: str, noise: NoiseSpec | None = None,
             rng: np.random.Generator | None = None, floor: float = LOG_FLOOR) -> dc.Tensor:
    """Generator cost on ``fake_batch``.

    ``original`` is E log(1 - D(g)), ``neg_log_d`` is E -log D(g) and
    ``noisy_original`` is E log(1 - D(g + eps')) with a fresh ``eps'`` per
    sample drawn from ``noise`` with ``rng``.
    """
    if kind not in GEN_LOSSES:
        raise ValueError(f"unknown generator loss {kind!r}")
    if (kind == "noisy_original") != (noise is not None):
        raise ValueError(f"generator loss {kind!r} {'needs' if kind == 'noisy_original' else 'takes no'} noise")
    fake_batch = dc.as_tensor(fake_batch)
    if fake_batch.shape[0] == 0:
        raise ValueError("gen_loss needs a nonempty batch")
    if kind == "noisy_original":
        if rng is None:
            raise ValueError("noisy_original needs an rng for the input noise")
        fake_batch = fake_batch + noise.sample(fake_batch.shape[0], rng)
    d = dc.forward(D, fake_batch)
    if kind == "neg_log_d":
        return -_floored_log(d, floor).mean()
    return _floored_log(1.0 - d, floor).mean()


def expected_disc_loss(p_masses: np.ndarray, q_masses: np.ndarray, d_values: np.ndarray,
                       floor: float = LOG_FLOOR) -> float:
    """Discriminator loss in expectation over two cell-mass arrays for cellwise values of D."""
    d = np.asarray(d_values, float)
    return float(-(np.sum(p_masses * np.log(np.maximum(d, floor)))
                   + np.sum(q_masses * np.log(np.maximum(1.0 - d, floor)))))


def generator_gradient(D: dc.Mlp, G: dc.Mlp, z, kind: str, noise: NoiseSpec | None = None,
                       rng: np.random.Generator | None = None, floor: float = LOG_FLOOR) -> np.ndarray:
    """Flattened gradient of the generator cost with respect to the generator parameters."""
    params = G.parameters()
    with dc.GradTape():
        loss = gen_loss(D, dc.forward(G, z), kind, noise, rng, floor)
        grads = dc.backward(loss)
    return dc.flatten_grads(grads, params)


# -- probes and series -----------------------------------------------------

@dataclass
class GradientProbe:
    """Measurements taken at one discriminator-training checkpoint."""

    iteration: int
    disc_loss: float
    accuracy: float
    gen_grad_norm: float
    grad_var: float
    grad_x_norm_real: float
    grad_x_norm_fake: float
    eps_hat: float
    m_hat: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        for name in ("gen_grad_norm", "grad_var", "grad_x_norm_real", "grad_x_norm_fake", "m_hat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def bound(self) -> float:
        """m_hat * eps_hat / (1 - eps_hat), or nan when eps_hat >= 1."""
        if not self.eps_hat < 1.0:
            return math.nan
        return self.m_hat * self.eps_hat / (1.0 - self.eps_hat)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


@dataclass
class MetricSeries:
    """Checkpoint-indexed probes with exact-precision CSV serialization."""

    probes: list[GradientProbe] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, probe: GradientProbe) -> None:
        self.probes.append(probe)

    def __len__(self) -> int:
        return len(self.probes)

    def __getitem__(self, i) -> GradientProbe:
        return self.probes[i]

    def column(self, name: str) -> np.ndarray:
        if name in CSV_FIELDS:
            return np.array([getattr(p, name) for p in self.probes], dtype=float)
        return np.array([p.extras[name] for p in self.probes], dtype=float)

    def at(self, iteration: int) -> GradientProbe:
        for p in self.probes:
            if p.iteration == iteration:
                return p
        raise KeyError(f"no checkpoint at iteration {iteration}")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for p in self.probes:
                w.writerow([_fmt(getattr(p, name)) for name in CSV_FIELDS])
        return path

    @classmethod
    def from_csv(cls, path) -> "MetricSeries":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        probes = [GradientProbe(int(r["iteration"]), *(float(r[k]) for k in CSV_FIELDS[1:])) for r in rows]
        return cls(probes)


def _spectral_norms(G: dc.Mlp, z: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(dc.jacobian(G, zi, wrt="parameters"), 2) for zi in z])


def _dstar_and_grad(cfg: GanConfig, pts_real: np.ndarray, pts_fake: np.ndarray):
    """Optimal discriminator values and input-gradients at support probe points.

    With disjoint singular supports the optimum is 1 on the real support and
    0 on the generated one, with zero gradient along both.  With isotropic
    Gaussian noise the closed-form ratio of convolved densities is used.
    """
    pts = np.vstack([pts_real, pts_fake])
    if cfg.noise is None:
        fake = cfg.fake.as_segment() or cfg.fake
        if support_gap(cfg.real, fake) > 0:
            dstar = np.concatenate([np.ones(len(pts_real)), np.zeros(len(pts_fake))])
        elif _same_segments(cfg.real, fake):
            dstar = np.full(len(pts), 0.5)
        else:
            # overlapping but different singular supports: D* is not defined pointwise
            dstar = np.full(len(pts), np.nan)
        return dstar, np.zeros_like(pts)
    fake = cfg.fake.as_segment()
    if fake is None:
        raise UnsupportedKindError("closed-form optimum needs a segment generator image")
    leaf = dc.Tensor(pts, requires_grad=True)
    with dc.GradTape():
        lr = log_convolved_density_tensor(cfg.real, cfg.noise, leaf)
        lg = log_convolved_density_tensor(fake, cfg.noise, leaf)
        logd = lr - dc.logaddexp(lr, lg)
        grads = dc.backward(logd.sum())
    dstar = np.exp(logd.data)
    return dstar, grads[leaf] * dstar[:, None]


def _same_segments(a: ManifoldDistribution, b: ManifoldDistribution) -> bool:
    try:
        sa, sb = a.segments(), b.segments()
    except UnsupportedKindError:
        return False
    return len(sa) == len(sb) and all(
        np.allclose(x[0], y[0]) and np.allclose(x[1], y[1]) and x[2] == y[2] for x, y in zip(sa, sb))


def _input_grads(D: dc.Mlp, pts: np.ndarray) -> np.ndarray:
    leaf = dc.Tensor(pts, requires_grad=True)
    with dc.GradTape():
        grads = dc.backward(dc.forward(D, leaf).sum())
    return grads[leaf]


def _probe(cfg: GanConfig, D: dc.Mlp, it: int, state: dict) -> GradientProbe:
    G, floor = cfg.generator, cfg.log_floor
    xr_h, xf_h = state["holdout_real"], state["holdout_fake"]
    dr, df = dc.predict(D, xr_h).reshape(-1), dc.predict(D, xf_h).reshape(-1)
    loss = float(-(np.log(np.maximum(dr, floor)).mean() + np.log(np.maximum(1.0 - df, floor)).mean()))
    acc = float(((dr > 0.5).sum() + (df < 0.5).sum()) / (len(dr) + len(df)))

    z = state["probe_z"]
    rng_probe = make_rng(cfg.seed, _S_PROBE, it)
    norms = {}
    for kind in ("original", "neg_log_d") + (("noisy_original",) if cfg.noise is not None else ()):
        noise = cfg.noise if kind == "noisy_original" else None
        norms[kind] = float(np.linalg.norm(generator_gradient(D, G, z, kind, noise, rng_probe, floor)))

    rng_var = make_rng(cfg.seed, _S_VARIANCE, it)
    noise = cfg.noise if cfg.gen_loss == "noisy_original" else None
    batch_grads = np.stack([
        generator_gradient(D, G, sample(cfg.prior, cfg.batch, rng_var), cfg.gen_loss, noise, rng_var, floor)
        for _ in range(cfg.variance_batches)
    ])
    grad_var = float(batch_grads.var(axis=0, ddof=1).sum())

    pr, pf = state["support_real"], state["support_fake"]
    gx = _input_grads(D, np.vstack([pr, pf]))
    gx_norm = np.linalg.norm(gx, axis=1)
    gx_r, gx_f = gx_norm[:len(pr)], gx_norm[len(pr):]
    d_sup = dc.predict(D, np.vstack([pr, pf])).reshape(-1)
    dstar, gstar = state["dstar"], state["dstar_grad"]
    eps_hat = float(np.max(np.abs(d_sup - dstar)) + np.max(np.linalg.norm(gx - gstar, axis=1)))
    d_fake_batch = d_sup[len(pr):len(pr) + len(z)]
    floored = int(np.sum(d_fake_batch < floor) + np.sum(1.0 - d_fake_batch < floor))

    probe = GradientProbe(
        iteration=it, disc_loss=loss, accuracy=acc, gen_grad_norm=norms[cfg.gen_loss], grad_var=grad_var,
        grad_x_norm_real=float(gx_r.mean()), grad_x_norm_fake=float(gx_f.mean()),
        eps_hat=eps_hat, m_hat=state["m_hat"],
        extras={
            "grad_norm_original": norms["original"], "grad_norm_neg_log_d": norms["neg_log_d"],
            "grad_x_median_real": float(np.median(gx_r)), "grad_x_median_fake": float(np.median(gx_f)),
            "floored": floored,
        },
    )
    if "noisy_original" in norms:
        probe.extras["grad_norm_noisy_original"] = norms["noisy_original"]
    b = probe.bound
    probe.extras["bound"] = b
    probe.extras["bound_holds"] = math.nan if math.isnan(b) else float(norms["original"] <= b + BOUND_SLACK)
    return probe


def _probe_state(cfg: GanConfig) -> dict:
    rng_h = make_rng(cfg.seed, _S_HOLDOUT)
    G = cfg.generator
    n = cfg.n_holdout
    holdout_real = sample(cfg.real, n, rng_h)
    holdout_fake = dc.predict(G, sample(cfg.prior, n, rng_h))
    if cfg.noise is not None:
        holdout_real = holdout_real + cfg.noise.sample(n, rng_h)
        holdout_fake = holdout_fake + cfg.noise.sample(n, rng_h)
    probe_z = sample(cfg.prior, cfg.probe_batch, rng_h)
    # support probe set: the gradient batch images plus held-out support samples, half per support
    half = max(n // 2, cfg.probe_batch)
    support_real = sample(cfg.real, half, rng_h)
    support_fake = np.vstack([dc.predict(G, probe_z),
                              dc.predict(G, sample(cfg.prior, max(half - cfg.probe_batch, 0), rng_h))])
    dstar, dstar_grad = _dstar_and_grad(cfg, support_real, support_fake)
    norms = _spectral_norms(G, probe_z)
    return {
        "holdout_real": holdout_real, "holdout_fake": holdout_fake, "probe_z": probe_z,
        "support_real": support_real, "support_fake": support_fake,
        "dstar": dstar, "dstar_grad": dstar_grad, "m_hat": float(np.sqrt(np.mean(norms ** 2))),
    }


def train_discriminator(cfg: GanConfig, fixed_g: dc.Mlp | None = None, iters: int = 5000,
                        checkpoints: Sequence[int] | None = None) -> tuple[dc.Mlp, MetricSeries]:
    """Train a fresh discriminator against the frozen generator, probing at checkpoints.

    Checkpoints default to every ``cfg.checkpoint_every`` iterations plus
    the last one.  Raises ``FloatingPointError`` naming the iteration if the
    loss stops being finite.
    """
    if fixed_g is not None:
        cfg = _with_generator(cfg, fixed_g)
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    if checkpoints is None:
        checkpoints = sorted(set(range(0, iters + 1, cfg.checkpoint_every)) | {iters})
    marks = set(int(c) for c in checkpoints)
    D = cfg.init_discriminator()
    opt = dc.Optimizer(cfg.optimizer, cfg.lr)
    state = _probe_state(cfg)
    rng = make_rng(cfg.seed, _S_TRAIN)
    series = MetricSeries(meta={"optimizer": cfg.optimizer, "lr": cfg.lr, "batch": cfg.batch,
                                "log_floor": cfg.log_floor, "iters": iters})
    params = D.parameters()
    for it in range(iters + 1):
        if it in marks:
            series.append(_probe(cfg, D, it, state))
        if it == iters:
            break
        xr = sample(cfg.real, cfg.batch, rng)
        xf = dc.predict(cfg.generator, sample(cfg.prior, cfg.batch, rng))
        if cfg.noise is not None:
            xr = xr + cfg.noise.sample(cfg.batch, rng)
            xf = xf + cfg.noise.sample(cfg.batch, rng)
        with dc.GradTape():
            loss = disc_loss(D, xr, xf, cfg.log_floor)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"discriminator loss is not finite at iteration {it}")
            grads = dc.backward(loss)
        try:
            opt.step(params, grads)
        except FloatingPointError as exc:
            raise FloatingPointError(f"iteration {it}: {exc}") from exc
    return D, series


def _with_generator(cfg: GanConfig, G: dc.Mlp) -> GanConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values["generator"] = G
    return GanConfig(**values)


def _with_loss(cfg: GanConfig, kind: str) -> GanConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values["gen_loss"] = kind
    return GanConfig(**values)


def vanishing_probe(cfg: GanConfig, fixed_g: dc.Mlp | None = None, iters: int = 4000,
                    checkpoints: Sequence[int] | None = None) -> MetricSeries:
    """Original-cost generator gradient against the bound m_hat * eps_hat / (1 - eps_hat).

    Each probe's ``extras["bound_holds"]`` is 1 or 0 when ``eps_hat < 1``
    and nan otherwise (the bound does not apply).
    """
    if cfg.gen_loss != "original":
        raise ValueError("vanishing_probe measures the original generator cost")
    return train_discriminator(cfg, fixed_g, iters, checkpoints)[1]


def logd_instability_probe(cfg: GanConfig, fixed_g: dc.Mlp | None = None, iters: int = 4000,
                           checkpoints: Sequence[int] | None = None) -> MetricSeries:
    """-log D generator-gradient norm and across-batch variance as the discriminator trains."""
    if cfg.gen_loss != "neg_log_d":
        cfg = _with_loss(cfg, "neg_log_d")
    return train_discriminator(cfg, fixed_g, iters, checkpoints)[1]


def bound_violations(series: MetricSeries) -> list[int]:
    """Checkpoints where eps_hat < 1 and the original-cost gradient exceeds its bound."""
    return [p.iteration for p in series.probes if p.extras.get("bound_holds") == 0.0]


# -- white-noise model of the -log D update --------------------------------

@dataclass
class CauchyStats:
    n: int
    gamma: float
    median: float
    iqr: float
    hill_alpha: float
    tail: dict
    cauchy_tail: dict

    def tail_rel_error(self, t: float) -> float:
        return abs(self.tail[t] - self.cauchy_tail[t]) / self.cauchy_tail[t]


def cauchy_tail(t: float, gamma: float) -> float:
    """P(|X| > t) for a centered Cauchy law with scale ``gamma``."""
    return 1.0 - 2.0 / math.pi * math.atan(t / gamma)


def hill_estimator(x: np.ndarray, top_fraction: float = 0.01) -> float:
    """Tail index from the largest ``top_fraction`` of ``|x|``."""
    a = np.sort(np.abs(np.asarray(x, float)))[::-1]
    k = max(int(math.ceil(top_fraction * len(a))), 2)
    if k >= len(a):
        raise ValueError("not enough samples for the requested tail fraction")
    logs = np.log(a[:k]) - math.log(a[k])
    return float(1.0 / logs.mean())


@dataclass
class WhiteNoiseModel:
    """-(j_z . r_z) / eps_z averaged over a z-batch, r ~ N(0, s_r^2 I), eps ~ N(0, s_eps^2).

    ``jac_rows[b]`` is the derivative of ``g(z_b)`` with respect to one
    generator parameter.  ``j . r`` is drawn as N(0, |j|^2 s_r^2), which is
    its exact law, so a draw costs two normals per z.
    """

    jac_rows: np.ndarray
    s_r: float
    s_eps: float

    @property
    def gamma(self) -> float:
        """Scale of the Cauchy law followed by every draw."""
        return float(np.mean(np.linalg.norm(self.jac_rows, axis=1)) * self.s_r / self.s_eps)

    def draw(self, n: int, rng: np.random.Generator, chunk: int = 1 << 20) -> np.ndarray:
        scale = np.linalg.norm(self.jac_rows, axis=1) * self.s_r
        out = np.empty(n)
        for i in range(0, n, chunk):
            m = min(chunk, n - i)
            num = rng.standard_normal((m, len(scale))) * scale
            den = rng.standard_normal((m, len(scale))) * self.s_eps
            out[i:i + m] = -(num / den).mean(axis=1)
        return out


def white_noise_model(noise_scales: tuple[float, float], rng: np.random.Generator, *,
                      generator: dc.Mlp | None = None, z_batch: int = 2,
                      param_index: int | None = None) -> WhiteNoiseModel:
    """Build the model from a generator's parameter-Jacobian rows at ``z_batch`` prior draws.

    ``param_index=None`` picks the parameter with the largest Jacobian
    column, which avoids parameters feeding dead ReLU units.
    """
    if generator is None:
        generator = dc.Mlp.init([2, 16, 2], ["relu", "identity"], rng)
    z = rng.standard_normal((z_batch, generator.in_dim))
    jacs = np.stack([dc.jacobian(generator, zi, wrt="parameters") for zi in z])
    if param_index is None:
        param_index = int(np.argmax(np.linalg.norm(jacs, axis=(0, 1))))
    rows = jacs[:, :, param_index]
    if not np.any(rows):
        raise ValueError("the chosen parameter does not move g(z) at the sampled z")
    s_r, s_eps = noise_scales
    if not (s_r > 0 and s_eps > 0):
        raise ValueError("noise scales must be positive")
    return WhiteNoiseModel(rows, float(s_r), float(s_eps))


def cauchy_simulation(n_draws: int, noise_scales: tuple[float, float], rng: np.random.Generator, *,
                      generator: dc.Mlp | None = None, z_batch: int = 2, param_index: int | None = None,
                      thresholds: Sequence[float] = (10.0, 100.0), model: WhiteNoiseModel | None = None) -> CauchyStats:
    """Tail statistics of simulated -log D updates under independent Gaussian errors."""
    if n_draws < 1_000_000:
        raise ValueError("the tail statistics need at least 1e6 draws")
    if model is None:
        model = white_noise_model(noise_scales, rng, generator=generator, z_batch=z_batch, param_index=param_index)
    x = model.draw(n_draws, rng)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    ax = np.abs(x)
    gamma = model.gamma
    return CauchyStats(
        n=n_draws, gamma=gamma, median=float(med), iqr=float(q3 - q1), hill_alpha=hill_estimator(x),
        tail={float(t): float(np.mean(ax > t)) for t in thresholds},
        cauchy_tail={float(t): cauchy_tail(t, gamma) for t in thresholds},
    )


def batch_mean_variances(model: WhiteNoiseModel | None, batch_sizes: Sequence[int], n_batches: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Variance across ``n_batches`` batch means for each batch size.

    ``model=None`` draws standard normals instead, a finite-variance
    control whose batch-mean variance halves with each doubling.
    """
    out = []
    for m in batch_sizes:
        means = np.empty(n_batches)
        for k in range(n_batches):
            x = rng.standard_normal(m) if model is None else model.draw(m, rng)
            means[k] = x.mean()
        out.append(means.var(ddof=1))
    return np.array(out)


def strictly_decreasing(v: Sequence[float]) -> bool:
    return bool(np.all(np.diff(np.asarray(v, float)) < 0))


# -- identity checks ---------------------------------------------------------

def _gauss_logpdf(x: dc.Tensor, mean, var: float) -> dc.Tensor:
    d = x - mean
    return d * d * (-0.5 / var) - 0.5 * math.log(2.0 * math.pi * var)


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    rel_error: float
    parts: dict = field(default_factory=dict)


def _rel(lhs, rhs) -> float:
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    return float(np.linalg.norm(lhs - rhs) / (np.linalg.norm(rhs) + 1e-9))


def logd_identity_check(theta0: float, *, real_mean: float = 0.0, grid: tuple[float, float, int] | None = None,
                        h: float = 1e-3, nodes: int = 120) -> IdentityCheck:
    """-log D gradient against d/dtheta [KL(P_g || P_r) - 2 JSD(P_g || P_r)] for unit Gaussians.

    ``P_r = N(real_mean, 1)`` and ``g_theta(z) = z + theta``.  The left side
    is E_z[-d/dtheta log D*(g_theta(z))] with the optimum frozen at
    ``theta0``, integrated by Gauss-Hermite quadrature and differentiated
    by the tape.  The right side is a central difference of grid
    divergences.  Returns |lhs - rhs| / (|rhs| + 1e-9).
    """
    if grid is None:
        lo, hi = min(real_mean, theta0) - 10.0, max(real_mean, theta0) + 10.0
        grid = (lo, hi, 20_000)
    lo, hi, res = grid
    z, w = hermegauss(nodes)
    w = w / w.sum()
    theta = dc.Tensor(np.array(theta0), requires_grad=True)
    with dc.GradTape():
        x = dc.Tensor(z) + theta
        lr = _gauss_logpdf(x, real_mean, 1.0)
        lg = _gauss_logpdf(x, theta0, 1.0)
        obj = (-(lr - dc.logaddexp(lr, lg)) * w).sum()
        lhs = float(dc.backward(obj)[theta])

    real = ManifoldDistribution.gaussian([real_mean], [[1.0]])

    def divergences(t):
        pg = rasterize(ManifoldDistribution.gaussian([t], [[1.0]]), None, [[lo, hi]], res)
        pr = rasterize(real, None, [[lo, hi]], res)
        return float(kl_grid(pg, pr)), float(jsd_grid(pg, pr))

    kl_p, js_p = divergences(theta0 + h)
    kl_m, js_m = divergences(theta0 - h)
    grad_kl = (kl_p - kl_m) / (2 * h)
    grad_jsd = (js_p - js_m) / (2 * h)
    rhs = grad_kl - 2.0 * grad_jsd
    return IdentityCheck(lhs, rhs, abs(lhs - rhs) / (abs(rhs) + 1e-9), {"grad_kl": grad_kl, "grad_jsd": grad_jsd})


# -- noisy optimal discriminator -------------------------------------------

@dataclass
class NoisyGradientDecomposition:
    """Attraction and repulsion parts of the generator gradient under the noisy optimum."""

    a: np.ndarray
    b: np.ndarray
    p_real: np.ndarray
    p_fake: np.ndarray
    attraction: np.ndarray
    repulsion: np.ndarray
    total: np.ndarray
    autodiff: np.ndarray
    rel_error: float

    def __post_init__(self):
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ValueError("a(z) and b(z) must be strictly positive")


def _iso_noise(noise: NoiseSpec | None) -> NoiseSpec:
    if noise is None or noise.family != "gaussian_iso":
        raise UnsupportedKindError("the decomposition needs isotropic Gaussian noise")
    return noise


def _frozen_fake(cfg: GanConfig) -> ManifoldDistribution:
    fake = cfg.fake.as_segment()
    if fake is None:
        raise UnsupportedKindError("closed-form noisy densities need a segment generator image")
    return fake


def ab_weights(real: ManifoldDistribution, fake: ManifoldDistribution, noise: NoiseSpec, x):
    """a(x), b(x) and both convolved densities at the rows of ``x``.

    a = 1 / (2 sigma^2 (P_{g+eps} + P_{r+eps})) and b = a P_{r+eps} / P_{g+eps}.
    """
    noise = _iso_noise(noise)
    pts = np.atleast_2d(np.asarray(x, float))
    lr = log_convolved_density_tensor(real, noise, dc.Tensor(pts)).data
    lg = log_convolved_density_tensor(fake, noise, dc.Tensor(pts)).data
    floor = math.log(1e-300)
    if np.min(lr) < floor or np.min(lg) < floor:
        raise DensityUnderflowError("convolved densities below 1e-300; increase the noise scale sigma")
    log_a = -math.log(2.0 * noise.sigma2) - np.logaddexp(lr, lg)
    return np.exp(log_a), np.exp(log_a + lr - lg), np.exp(lr), np.exp(lg)


def noisy_gradient_decomposition(cfg: GanConfig, z_batch: np.ndarray, quadrature_samples: int,
                                 rng: np.random.Generator) -> NoisyGradientDecomposition:
    """Split the generator gradient of E log(1 - D*(g(z))) into attraction and repulsion.

    Both manifold integrals are Monte Carlo averages over
    ``quadrature_samples`` draws from each support; the total is checked
    against the tape gradient of the closed-form log(1 - D*), whose
    densities are frozen at the current parameters.
    """
    noise = _iso_noise(cfg.noise)
    fake = _frozen_fake(cfg)
    G = cfg.generator
    z_batch = np.atleast_2d(np.asarray(z_batch, float))
    x = dc.predict(G, z_batch)
    a, b, pr, pg = ab_weights(cfg.real, fake, noise, x)
    ys_r = sample(cfg.real, quadrature_samples, rng)
    ys_g = sample(fake, quadrature_samples, rng)
    att, rep = [], []
    for k, zk in enumerate(z_batch):
        J = dc.jacobian(G, zk, wrt="parameters")
        parts = []
        for ys in (ys_r, ys_g):
            diff = x[k] - ys
            wts = noise.pdf(diff)
            parts.append((2.0 * (wts[:, None] * diff).mean(axis=0)) @ J)
        att.append(a[k] * parts[0])
        rep.append(b[k] * parts[1])
    attraction, repulsion = np.mean(att, axis=0), np.mean(rep, axis=0)
    total = attraction - repulsion

    params = G.parameters()
    with dc.GradTape():
        xt = dc.forward(G, z_batch)
        lr = log_convolved_density_tensor(cfg.real, noise, xt)
        lg = log_convolved_density_tensor(fake, noise, xt)
        obj = (lg - dc.logaddexp(lr, lg)).mean()
        autodiff = dc.flatten_grads(dc.backward(obj), params)
    return NoisyGradientDecomposition(a, b, pr, pg, attraction, repulsion, total, autodiff, _rel(total, autodiff))


@dataclass
class JsdGradientCheck:
    lhs: float
    rhs: float
    rel_error: float
    jsd: float


def noisy_jsd_gradient_check(sigma: float, *, offset: float = 1.0, length: float = 1.0,
                             resolution: tuple[int, int] = (40, 1600), h: float = 1e-3,
                             margin: float = 7.0) -> JsdGradientCheck:
    """Noisy-input generator gradient against 2 d/dtheta JSD(P_{r+eps} || P_{g+eps}).

    The real segment lies on y = 0 and the generator translates its copy to
    height ``theta``, evaluated at ``theta0 = offset``.  The left side is the
    expectation over z and eps' of d/dtheta log(1 - D*(g_theta(z) + eps')),
    written as a lattice integral against the noisy generated density; the
    right side is a central difference of grid JSD between rasterized
    noisy densities.
    """
    half = length / 2.0
    noise = NoiseSpec.iso(sigma, 2)
    real = ManifoldDistribution.segment([-half, 0.0], [half, 0.0])

    def fake_at(t):
        return ManifoldDistribution.segment([-half, t], [half, t])

    ylo, yhi = min(0.0, offset) - margin * sigma, max(0.0, offset) + margin * sigma
    bounds = np.array([[-half - margin * sigma, half + margin * sigma], [ylo - h, yhi + h]])
    fake0 = fake_at(offset)
    pg = rasterize(fake0, noise, bounds, resolution)
    pr = rasterize(real, noise, bounds, resolution)
    nodes = pg.cell_centers()
    weights = pg.masses.reshape(-1)
    theta = dc.Tensor(np.array(offset), requires_grad=True)
    e_y = np.array([0.0, 1.0])
    with dc.GradTape():
        x = dc.Tensor(nodes - offset * e_y) + theta * e_y
        lr = log_convolved_density_tensor(real, noise, x)
        lg = log_convolved_density_tensor(fake0, noise, x)
        obj = ((lg - dc.logaddexp(lr, lg)) * weights).sum()
        lhs = float(dc.backward(obj)[theta])

    def jsd_at(t):
        return float(jsd_grid(pr, rasterize(fake_at(t), noise, bounds, resolution)))

    rhs = 2.0 * (jsd_at(offset + h) - jsd_at(offset - h)) / (2.0 * h)
    return JsdGradientCheck(lhs, rhs, abs(lhs - rhs) / (abs(rhs) + 1e-9), float(jsd_grid(pr, pg)))


# -- local image dimension -------------------------------------------------

def _activation_pattern(net: dc.Mlp, x: np.ndarray) -> np.ndarray:
    h = np.atleast_2d(x)
    pattern = []
    for layer in net.layers:
        pre = h @ layer.weight.data + layer.bias.data
        pattern.append(pre > 0)
        h = dc.predict(dc.Mlp([layer]), h)
    return np.concatenate(pattern, axis=1)


def secant_singular_values(net: dc.Mlp, z, rng: np.random.Generator, *, n_dirs: int = 32,
                           radius: float = 1e-3) -> np.ndarray:
    """Singular values of image secants g(z + delta) - g(z) inside z's linear region.

    Directions whose perturbation changes the ReLU activation pattern are
    discarded, so the secants span the image of one affine piece.  The
    result is zero-padded to the output dimension.
    """
    z = np.asarray(z, float).reshape(-1)
    base_pattern = _activation_pattern(net, z)
    deltas = rng.standard_normal((4 * n_dirs, z.size))
    deltas *= radius / np.linalg.norm(deltas, axis=1, keepdims=True)
    pts = z + deltas
    same = np.all(_activation_pattern(net, pts) == base_pattern, axis=1)
    pts = pts[same][:n_dirs]
    if len(pts) < z.size:
        raise ValueError("too few perturbations stayed in the linear region; shrink the radius")
    secants = dc.predict(net, pts) - dc.predict(net, z)
    sv = np.linalg.svd(secants, compute_uv=False)
    out = np.zeros(net.out_dim)
    out[:min(len(sv), net.out_dim)] = sv[:net.out_dim]
    return out


def jacobian_singular_values(net: dc.Mlp, z) -> np.ndarray:
    """Singular values of the input Jacobian, zero-padded to the output dimension."""
    sv = np.linalg.svd(dc.jacobian(net, z, wrt="input"), compute_uv=False)
    out = np.zeros(net.out_dim)
    out[:len(sv)] = sv
    return out


__all__ = [
    "GanConfig", "GradientProbe", "MetricSeries", "NoisyGradientDecomposition", "CauchyStats", "IdentityCheck",
    "JsdGradientCheck", "WhiteNoiseModel", "DensityUnderflowError", "CSV_FIELDS", "GEN_LOSSES", "LOG_FLOOR",
    "disc_loss", "gen_loss", "expected_disc_loss", "generator_gradient", "train_discriminator",
    "vanishing_probe", "logd_instability_probe", "bound_violations", "cauchy_simulation", "cauchy_tail",
    "hill_estimator", "white_noise_model", "batch_mean_variances", "strictly_decreasing",
    "logd_identity_check", "ab_weights", "noisy_gradient_decomposition", "noisy_jsd_gradient_check",
    "secant_singular_values", "jacobian_singular_values", "affine_segment_generator", "unit_prior",
    "disjoint_segments_config", "matched_config", "crossing_config",
]
