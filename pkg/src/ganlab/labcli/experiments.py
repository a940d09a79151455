"""Catalog of named experiments: parameters, declared assertions and pipelines.

Each experiment function takes a :class:`RunContext` and returns a
:class:`RunResult` with the rows of its CSV, one :class:`Assertion` per
declared name and a flat summary used by sweeps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .. import diffcore as dc
from .. import gandyn as gd
from ..divergence import (
    BOUND_FIELDS,
    EmpiricalMeasure,
    jsd_bound_check,
    noise_lemma_check,
    wasserstein_exact,
)
from ..manifolds import ManifoldDistribution, NoiseSpec, make_rng, sample


class UsageError(ValueError):
    """Bad experiment name, parameter key or value."""


# -- parameter parsing -------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "random") else float(text)


@dataclass(frozen=True)
class Param:
    default: Any
    parse: Callable[[str], Any]
    help: str = ""

    def render(self, value) -> str:
        if value is None:
            return "random"
        if isinstance(value, tuple):
            return ",".join(_render_scalar(v) for v in value)
        return _render_scalar(value)


def _render_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def P(default, kind=None, help: str = "") -> Param:  # noqa: N802 - short constructor for the tables below
    if kind is None:
        kind = {bool: _parse_bool, int: int, float: float, str: str}[type(default)]
    return Param(default, kind, help)


# -- results ---------------------------------------------------------------

@dataclass
class Assertion:
    name: str
    passed: bool
    value: Any = None
    threshold: Any = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": _jsonable(self.value),
                "threshold": _jsonable(self.threshold)}


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class RunContext:
    seed: int
    params: dict
    n_seeds: int = 1


@dataclass
class RunResult:
    header: tuple[str, ...]
    rows: list[tuple]
    assertions: list[Assertion]
    summary: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    runtime_s: float
    params: dict[str, Param]
    assertions: tuple[str, ...]
    fn: Callable[[RunContext], RunResult]
    default_seeds: tuple[int, ...] = (0,)
    pool: Callable[[list[RunResult]], dict] | None = None

    def resolve(self, overrides: dict[str, str]) -> dict:
        """Defaults updated with parsed string overrides; unknown keys raise UsageError."""
        values = {k: p.default for k, p in self.params.items()}
        for key, text in overrides.items():
            if key not in self.params:
                raise UsageError(f"unknown parameter {key!r} for {self.name}; valid keys: {', '.join(sorted(self.params))}")
            try:
                values[key] = self.params[key].parse(text)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
        return values


# -- shared training setup -------------------------------------------------

TRAIN_PARAMS = {
    "offset": P(0.5, help="vertical gap between the real and generated segments"),
    "length": P(1.0, help="segment length"),
    "d_iters": P(4000, help="discriminator iterations"),
    "checkpoint_every": P(500),
    "disc.lr": P(1e-2),
    "disc.optimizer": P("adam"),
    "disc.batch": P(256),
    "disc.hidden": P((32, 32), _parse_ints),
    "disc.activation": P("relu"),
    "n_holdout": P(10_000),
    "probe_batch": P(512),
    "variance_batches": P(16),
}


def _training_config(ctx: RunContext, gen_loss: str) -> gd.GanConfig:
    p = ctx.params
    if p["disc.optimizer"] not in ("sgd", "adam"):
        raise UsageError("disc.optimizer must be sgd or adam")
    return gd.disjoint_segments_config(
        p["offset"], p["length"], seed=ctx.seed, gen_loss=gen_loss, lr=p["disc.lr"], optimizer=p["disc.optimizer"],
        batch=p["disc.batch"], disc_hidden=tuple(p["disc.hidden"]), disc_activation=p["disc.activation"],
        n_holdout=p["n_holdout"], probe_batch=p["probe_batch"], variance_batches=p["variance_batches"],
        checkpoint_every=p["checkpoint_every"],
    )


def _series_rows(series: gd.MetricSeries) -> list[tuple]:
    return [tuple(getattr(pr, k) for k in gd.CSV_FIELDS) for pr in series.probes]


def _train(ctx: RunContext, gen_loss: str) -> gd.MetricSeries:
    cfg = _training_config(ctx, gen_loss)
    return gd.train_discriminator(cfg, iters=ctx.params["d_iters"])[1]


# -- pipelines -------------------------------------------------------------

def run_perfect_disc(ctx: RunContext) -> RunResult:
    p = ctx.params
    series = _train(ctx, "original")
    last = series[-1]
    med_r, med_f = series.column("grad_x_median_real"), series.column("grad_x_median_fake")
    decay = max(med_r[-1] / med_r[0], med_f[-1] / med_f[0])
    monotone = gd.strictly_decreasing(med_r) and gd.strictly_decreasing(med_f)
    checks = [
        Assertion("final_loss_below", last.disc_loss < p["max_loss"], last.disc_loss, p["max_loss"]),
        Assertion("holdout_accuracy_one", last.accuracy == 1.0, last.accuracy, 1.0),
        Assertion("grad_x_median_decay", decay < p["max_grad_ratio"], decay, p["max_grad_ratio"]),
        Assertion("grad_x_median_monotone", monotone, None, None),
    ]
    summary = {"final_disc_loss": last.disc_loss, "final_accuracy": last.accuracy,
               "initial_grad_x_median": max(med_r[0], med_f[0]), "grad_x_decay": decay}
    return RunResult(gd.CSV_FIELDS, _series_rows(series), checks, summary)


def run_vanishing(ctx: RunContext) -> RunResult:
    p = ctx.params
    series = _train(ctx, "original")
    g0, g1 = series[0].gen_grad_norm, series[-1].gen_grad_norm
    decay = g0 / g1 if g1 > 0 else math.inf
    applicable = [pr for pr in series.probes if pr.eps_hat < 1.0]
    violations = gd.bound_violations(series)
    checks = [
        Assertion("initial_gradient_informative", g0 > p["min_initial_grad"], g0, p["min_initial_grad"]),
        Assertion("gradient_decay", decay >= p["min_decay"], decay, p["min_decay"]),
        Assertion("bound_holds", not violations, {"checked": len(applicable), "violations": violations}, None),
    ]
    summary = {"d_iters": p["d_iters"], "initial_gen_grad_norm": g0, "final_gen_grad_norm": g1,
               "decay": decay, "final_eps_hat": series[-1].eps_hat, "bound_checkpoints": len(applicable)}
    return RunResult(gd.CSV_FIELDS, _series_rows(series), checks, summary)


def run_logd_instability(ctx: RunContext) -> RunResult:
    p = ctx.params
    series = _train(ctx, "neg_log_d")
    first, last = series[0], series[-1]
    growth = last.gen_grad_norm / first.gen_grad_norm
    orig0, orig1 = first.extras["grad_norm_original"], last.extras["grad_norm_original"]
    checks = [
        Assertion("gradient_growth", growth >= p["min_growth"], growth, p["min_growth"]),
        Assertion("variance_increase", last.grad_var > first.grad_var, [first.grad_var, last.grad_var], None),
        Assertion("original_cost_shrinks", orig1 < orig0, [orig0, orig1], None),
    ]
    summary = {"initial_gen_grad_norm": first.gen_grad_norm, "final_gen_grad_norm": last.gen_grad_norm,
               "growth": growth, "initial_grad_var": first.grad_var, "final_grad_var": last.grad_var}
    return RunResult(gd.CSV_FIELDS, _series_rows(series), checks, summary)


def run_cauchy_sim(ctx: RunContext) -> RunResult:
    p = ctx.params
    rng = make_rng(ctx.seed, 11)
    model = gd.white_noise_model((p["s_r"], p["s_eps"]), rng, z_batch=p["z_batch"])
    draws = model.draw(p["n_draws"], rng)
    n = len(draws)
    q1, med, q3 = np.percentile(draws, [25, 50, 75])
    iqr = q3 - q1
    hill = gd.hill_estimator(draws)
    ax = np.abs(draws)
    sizes = [p["batch_base"] * 2 ** j for j in range(p["doublings"] + 1)]
    bvar = gd.batch_mean_variances(model, sizes, p["n_batches"], rng)
    control = gd.batch_mean_variances(None, sizes, p["n_batches"], rng)
    rows = [("n_draws", n), ("gamma", model.gamma), ("median", med), ("iqr", iqr), ("hill_alpha", hill)]
    tail_checks = []
    for t in p["thresholds"]:
        emp, law = float(np.mean(ax > t)), gd.cauchy_tail(t, model.gamma)
        rows += [(f"tail_{t:g}", emp), (f"cauchy_tail_{t:g}", law)]
        tail_checks.append(abs(emp - law) / law)
    rows += [(f"batch_mean_var_{m}", v) for m, v in zip(sizes, bvar)]
    rows += [(f"control_batch_mean_var_{m}", v) for m, v in zip(sizes, control)]
    lo, hi = p["hill_range"]
    med_tol = 5 * iqr / math.sqrt(n)
    checks = [
        Assertion("median_centered", abs(med) <= med_tol, med, med_tol),
        Assertion("hill_in_range", lo <= hill <= hi, hill, [lo, hi]),
        Assertion("tails_match_cauchy", max(tail_checks) < p["tail_rel_tol"], tail_checks, p["tail_rel_tol"]),
        Assertion("batch_means_do_not_settle", not gd.strictly_decreasing(bvar), list(bvar), None),
    ]
    keep = min(n, int(math.ceil(0.01 * n * ctx.n_seeds)) + 1)
    top = np.partition(ax, n - keep)[n - keep:]
    summary = {"gamma": model.gamma, "median": med, "iqr": iqr, "hill_alpha": hill,
               "tail_rel_error_max": max(tail_checks), "control_decreasing": float(gd.strictly_decreasing(control))}
    return RunResult(("statistic", "value"), rows, checks, summary, {"top_abs": top, "n": n})


def _pool_cauchy(results: list[RunResult]) -> dict:
    n = sum(r.pooled["n"] for r in results)
    top = np.sort(np.concatenate([r.pooled["top_abs"] for r in results]))[::-1]
    k = max(int(math.ceil(0.01 * n)), 2)
    return {"pooled_hill_alpha": float(1.0 / np.mean(np.log(top[:k]) - math.log(top[k]))), "pooled_draws": n}


def run_logd_identity(ctx: RunContext) -> RunResult:
    p = ctx.params
    rows, errors, signs = [], [], []
    for t0 in p["theta0"]:
        r = gd.logd_identity_check(t0, h=p["h"], nodes=p["nodes"])
        rows.append((t0, r.lhs, r.rhs, r.rel_error, r.parts["grad_kl"], r.parts["grad_jsd"]))
        errors.append(r.rel_error)
        # generator descent moves theta by -lhs; the minimum sits at theta = 0
        signs.append(r.parts["grad_kl"] * np.sign(t0) > 0 and r.lhs * np.sign(t0) > 0)
    z = gd.logd_identity_check(0.0, h=p["h"], nodes=p["nodes"])
    rows.append((0.0, z.lhs, z.rhs, z.rel_error, z.parts["grad_kl"], z.parts["grad_jsd"]))
    checks = [
        Assertion("relative_error_below", max(errors) < p["rel_tol"], errors, p["rel_tol"]),
        Assertion("update_points_to_target", all(signs), signs, None),
        Assertion("matched_point_stationary", max(abs(z.lhs), abs(z.rhs)) < 1e-9, [z.lhs, z.rhs], 1e-9),
    ]
    return RunResult(("theta0", "lhs", "rhs", "rel_error", "grad_kl", "grad_jsd"), rows, checks,
                     {"max_rel_error": max(errors)})


def run_noisy_decomposition(ctx: RunContext) -> RunResult:
    p = ctx.params
    rng = make_rng(ctx.seed, 13)
    cfg = gd.crossing_config(p["sigma"], p["angle"], p["length"])
    z = rng.uniform(0.0, 1.0, (p["z_batch"], 1))
    dec = gd.noisy_gradient_decomposition(cfg, z, p["quadrature_samples"], rng)
    fake = cfg.fake.as_segment()
    n_half = p["probe_points"] // 2
    pts = np.vstack([sample(cfg.real, n_half, rng), sample(fake, p["probe_points"] - n_half, rng)])
    a, b, pr, pg = gd.ab_weights(cfg.real, fake, cfg.noise, pts)
    agree = np.sign(b - a) == np.sign(pr - pg)
    half = p["length"] / 2
    end = np.array([[half, 0.0]])
    a_end, b_end, *_ = gd.ab_weights(cfg.real, fake, cfg.noise, end)
    sym = gd.matched_config(p["length"], noise=cfg.noise)
    sa, sb, *_ = gd.ab_weights(sym.real, sym.fake.as_segment(), sym.noise, pts)
    rows = [("probe", i, x, y, ai, bi, pri, pgi) for i, ((x, y), ai, bi, pri, pgi) in enumerate(zip(pts, a, b, pr, pg))]
    rows += [("z", i, float(zi[0]), math.nan, ai, bi, pri, pgi)
             for i, (zi, ai, bi, pri, pgi) in enumerate(zip(z, dec.a, dec.b, dec.p_real, dec.p_fake))]
    positive = bool(np.all(a > 0) and np.all(b > 0) and np.all(dec.a > 0) and np.all(dec.b > 0))
    checks = [
        Assertion("total_matches_autodiff", dec.rel_error < p["rel_tol"], dec.rel_error, p["rel_tol"]),
        Assertion("weights_positive", positive, None, None),
        Assertion("weight_order_matches_densities", bool(agree.all()), int(agree.sum()), len(agree)),
        Assertion("real_manifold_point_has_b_above_a", bool(b_end[0] > a_end[0]), [a_end[0], b_end[0]], None),
        Assertion("matched_manifolds_equal_weights", bool(np.allclose(sa, sb, rtol=1e-12, atol=0)), None, None),
    ]
    summary = {"rel_error": dec.rel_error, "sign_agreement": int(agree.sum()),
               "attraction_norm": float(np.linalg.norm(dec.attraction)),
               "repulsion_norm": float(np.linalg.norm(dec.repulsion))}
    return RunResult(("kind", "index", "x", "y", "a", "b", "p_real", "p_fake"), rows, checks, summary)


def run_noisy_jsd_grad(ctx: RunContext) -> RunResult:
    p = ctx.params
    res = (p["resolution_x"], p["resolution_y"])
    rows, errors, signs = [], [], []
    for sigma in p["sigma"]:
        r = gd.noisy_jsd_gradient_check(sigma, offset=p["offset"], resolution=res, h=p["h"])
        rows.append((sigma, p["offset"], r.lhs, r.rhs, r.rel_error, r.jsd))
        errors.append(r.rel_error)
        signs.append(r.lhs > 0 and r.rhs > 0)
    z = gd.noisy_jsd_gradient_check(p["sigma"][-1], offset=0.0, resolution=res, h=p["h"])
    rows.append((p["sigma"][-1], 0.0, z.lhs, z.rhs, z.rel_error, z.jsd))
    checks = [
        Assertion("relative_error_below", max(errors) < p["rel_tol"], errors, p["rel_tol"]),
        Assertion("update_closes_offset", all(signs), signs, None),
        Assertion("matched_zero_gradient", max(abs(z.lhs), abs(z.rhs)) < 1e-9, [z.lhs, z.rhs], 1e-9),
    ]
    return RunResult(("sigma", "offset", "lhs", "rhs", "rel_error", "jsd"), rows, checks,
                     {"max_rel_error": max(errors)})


def _brute_force_w(a: np.ndarray, b: np.ndarray) -> float:
    from itertools import permutations

    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    idx = np.arange(len(a))
    return min(cost[idx, list(perm)].mean() for perm in permutations(range(len(b))))


def run_wasserstein_bounds(ctx: RunContext) -> RunResult:
    p = ctx.params
    rng = make_rng(ctx.seed, 17)
    ot_err = 0.0
    for _ in range(p["ot_instances"]):
        n = int(rng.integers(1, p["ot_max_n"] + 1))
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        w = float(wasserstein_exact(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b))[0])
        ot_err = max(ot_err, abs(w - _brute_force_w(a, b)))

    def sigma_draw():
        return p["sigma"] if p["sigma"] is not None else float(rng.uniform(p["sigma_min"], p["sigma_max"]))

    def segment():
        start = rng.uniform(-p["radius"], p["radius"], 2)
        return ManifoldDistribution.segment(start, start + rng.uniform(-p["radius"], p["radius"], 2))

    lemma, eq = [], []
    for k in range(p["configs"]):
        noise = NoiseSpec.clipped(sigma_draw(), 2, p["clip_sigmas"])
        lemma.append(noise_lemma_check(segment(), noise, p["samples"], rng, config_id=f"lemma-{k}", seed=ctx.seed))
    for k in range(p["configs"]):
        noise = NoiseSpec.clipped(sigma_draw(), 2, p["clip_sigmas"])
        real = segment()
        fake = real if p["matched"] else segment()
        eq.append(jsd_bound_check(real, fake, noise, p["samples"], rng, resolution=p["resolution"],
                                  config_id=f"jsd-{k}", seed=ctx.seed))
    gaps = [c.rhs - c.W_exact for c in eq]
    checks = [
        Assertion("exact_ot_matches_bruteforce", ot_err < 1e-9, ot_err, 1e-9),
        Assertion("noise_lemma_holds", all(c.holds for c in lemma), sum(c.holds for c in lemma), len(lemma)),
        Assertion("jsd_bound_holds", all(c.holds for c in eq), sum(c.holds for c in eq), len(eq)),
    ]
    summary = {"ot_max_abs_error": ot_err, "mean_bound_gap": float(np.mean(gaps)),
               "min_bound_gap": float(np.min(gaps)), "lemma_holds": sum(c.holds for c in lemma),
               "jsd_bound_holds": sum(c.holds for c in eq)}
    rows = [c.row() for c in lemma + eq]
    return RunResult(BOUND_FIELDS, rows, checks, summary)


def run_jacobian_rank(ctx: RunContext) -> RunResult:
    p = ctx.params
    rng = make_rng(ctx.seed, 19)
    sizes = [p["latent_dim"], *p["hidden"], p["out_dim"]]
    acts = ["relu"] * len(p["hidden"]) + ["identity"]
    net = dc.Mlp.init(sizes, acts, rng)
    rows, ratios = [], []
    k = p["latent_dim"]
    for i in range(p["n_z"]):
        sv = gd.secant_singular_values(net, rng.standard_normal(k), rng, radius=p["radius"])
        ratio = float(sv[k] / sv[0]) if sv[0] > 0 else 0.0
        rows.append(("rank_ratio", i, ratio))
        ratios.append(ratio)
    smooth = ("tanh", "sigmoid", "softplus")
    errs = []
    for i in range(p["n_nets"]):
        act = smooth[i % len(smooth)]
        width = int(rng.integers(2, 9))
        gnet = dc.Mlp.init([3, width, width, 2], [act, act, "identity"], rng)
        err = dc.gradient_check(gnet, rng.normal(size=(4, 3)))
        rows.append(("gradcheck_rel_error", i, err))
        errs.append(err)
    checks = [
        Assertion("singular_values_beyond_latent_dim_vanish", max(ratios) < p["rank_tol"], max(ratios), p["rank_tol"]),
        Assertion("autodiff_matches_finite_differences", max(errs) < p["grad_tol"], max(errs), p["grad_tol"]),
    ]
    return RunResult(("probe", "index", "value"), rows, checks,
                     {"max_rank_ratio": max(ratios), "max_gradcheck_error": max(errs)})


# -- catalog ---------------------------------------------------------------

def _train_params(**extra) -> dict[str, Param]:
    return {**TRAIN_PARAMS, **extra}


EXPERIMENTS: dict[str, Experiment] = {e.name: e for e in [
    Experiment(
        "perfect_disc", "optimal discriminator separates disjoint supports; its loss goes to 0 and accuracy to 1",
        10, _train_params(d_iters=P(5000), max_loss=P(1e-3), max_grad_ratio=P(1e-2)),
        ("final_loss_below", "holdout_accuracy_one", "grad_x_median_decay", "grad_x_median_monotone"),
        run_perfect_disc),
    Experiment(
        "vanishing", "original generator cost: gradient norm bounded by M eps / (1 - eps), decaying as D improves",
        8, _train_params(min_initial_grad=P(1e-3), min_decay=P(1e3)),
        ("initial_gradient_informative", "gradient_decay", "bound_holds"),
        run_vanishing),
    Experiment(
        "logd_instability", "-log D generator cost: gradient norm and its variance grow as D improves",
        24, _train_params(min_growth=P(10.0)),
        ("gradient_growth", "variance_increase", "original_cost_shrinks"),
        run_logd_instability, default_seeds=(0, 1, 2)),
    Experiment(
        "cauchy_sim", "-log D update under independent Gaussian errors: centered Cauchy, no mean or variance",
        18, {"n_draws": P(1_000_000), "s_r": P(1.0), "s_eps": P(1.0), "z_batch": P(2),
             "n_batches": P(100), "batch_base": P(10_000), "doublings": P(4),
             "thresholds": P((10.0, 100.0), _parse_floats), "hill_range": P((0.9, 1.1), _parse_floats),
             "tail_rel_tol": P(0.2)},
        ("median_centered", "hill_in_range", "tails_match_cauchy", "batch_means_do_not_settle"),
        run_cauchy_sim, default_seeds=(0, 1, 2), pool=_pool_cauchy),
    Experiment(
        "logd_identity", "-log D gradient equals the gradient of KL(P_g || P_r) - 2 JSD",
        1, {"theta0": P((0.5, 1.0, 2.0), _parse_floats), "h": P(1e-3), "nodes": P(120), "rel_tol": P(1e-2)},
        ("relative_error_below", "update_points_to_target", "matched_point_stationary"),
        run_logd_identity),
    Experiment(
        "noisy_decomposition", "noisy optimal discriminator: generator gradient = attraction a(z) - repulsion b(z)",
        2, {"sigma": P(0.3), "angle": P(math.pi / 3), "length": P(1.0), "z_batch": P(8),
            "quadrature_samples": P(100_000), "probe_points": P(100), "rel_tol": P(5e-2)},
        ("total_matches_autodiff", "weights_positive", "weight_order_matches_densities",
         "real_manifold_point_has_b_above_a", "matched_manifolds_equal_weights"),
        run_noisy_decomposition),
    Experiment(
        "noisy_jsd_grad", "noisy generator cost gradient equals 2 grad JSD(P_r+eps || P_g+eps)",
        1, {"sigma": P((0.1, 0.3), _parse_floats), "offset": P(1.0), "resolution_x": P(40),
            "resolution_y": P(1600), "h": P(1e-3), "rel_tol": P(5e-2)},
        ("relative_error_below", "update_closes_offset", "matched_zero_gradient"),
        run_noisy_jsd_grad),
    Experiment(
        "wasserstein_bounds", "W(P_X, P_X+eps) <= sqrt(V) and W(P_r, P_g) <= 2 sqrt(V) + 2 C sqrt(JSD of noisy pair)",
        6, {"configs": P(100), "samples": P(128), "resolution": P(120), "sigma": P(None, _parse_optional_float),
            "sigma_min": P(0.03), "sigma_max": P(0.3), "clip_sigmas": P(4.0), "radius": P(0.7),
            "matched": P(False), "ot_instances": P(200), "ot_max_n": P(7)},
        ("exact_ot_matches_bruteforce", "noise_lemma_holds", "jsd_bound_holds"),
        run_wasserstein_bounds),
    Experiment(
        "jacobian_rank", "generator image has dimension at most dim Z; autodiff agrees with finite differences",
        4, {"latent_dim": P(2), "out_dim": P(10), "hidden": P((32, 32), _parse_ints), "n_z": P(100),
            "radius": P(1e-3), "rank_tol": P(1e-8), "n_nets": P(100), "grad_tol": P(1e-6)},
        ("singular_values_beyond_latent_dim_vanish", "autodiff_matches_finite_differences"),
        run_jacobian_rank),
]}


def get(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise UsageError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}") from None


def catalog() -> list[dict]:
    """One row per experiment in stable order."""
    return [{"name": e.name, "anchor": e.anchor, "default_runtime_s": e.runtime_s,
             "default_seeds": list(e.default_seeds), "assertions": list(e.assertions)}
            for e in EXPERIMENTS.values()]
