"""Training procedures for MPS models: GD, natural GD sweeps, and DMRG-style updates.

The natural gradient step on site ``i`` minimizes

    <grad L, dtheta> + eta/2 * ||q(theta + dtheta) - q(theta)||_F^2

over changes of core ``i`` only. With the state in mixed canonical form around
``i`` the tensor-space metric equals the parameter-space metric on that core, so
the step is a plain gradient step on the center core; :func:`ngd_sweep` uses this
and keeps per-record environments cached while the center walks the chain.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .losses import (
    EnvironmentCache,
    LossContext,
    _log_terms,
    _norm_envs,
    _require_field,
    nll,
    nll_and_gradient,
    push_left,
    push_right,
    site_amplitudes,
    site_projection,
)
from .mps import Mps, canonicalize, normalized, random_mps, split_svd

METHODS = ("GD", "NGD", "DMRG1", "DMRG2")


@dataclass
class OptimizerConfig:
    """Settings for :func:`train`. The learning rate is ``1 / eta``."""

    method: str = "NGD"
    eta: float = 10.0
    line_search: bool = False
    max_iters: int = 100
    rng_seed: int = 0
    r_max: int = 10
    init_scale: float | None = None
    init_dist: str = "uniform"
    tol: float = 1e-9
    renormalize: bool = True
    monitor_every: int = 0

    def __post_init__(self) -> None:
        self.method = self.method.upper()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class TraceRecord:
    iter: int
    sweep: int
    nll: float
    mi_x1_xn: float = math.nan
    tv_to_causal: float = math.nan
    alpha: float = math.nan
    wall_ms: float = 0.0
    flagged: bool = False


TRACE_COLUMNS = ["iter", "sweep", "nll", "mi_x1_xn", "tv_to_causal", "alpha", "wall_ms"]


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def nll(self) -> list[float]:
        return [r.nll for r in self.records]

    @property
    def final_nll(self) -> float:
        return self.records[-1].nll if self.records else math.nan

    def to_csv(self, path: str | Path, timestamps: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                row = asdict(r)
                if not timestamps:
                    row["wall_ms"] = 0.0
                w.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.12g}"
    return str(v)


@dataclass
class SiteUpdate:
    """One single-core update inside a sweep."""

    site: int
    alpha: float
    nll_before: float
    flag: str = ""


# ---------------------------------------------------------------------------
# line search


def golden_section_search(
    f: Callable[[float], float],
    f0: float | None = None,
    *,
    hi: float = 1.0,
    expand: float = 2.0,
    max_evals: int = 40,
    tol: float = 1e-6,
) -> tuple[float, float, str]:
    """Minimize ``f`` over ``alpha > 0`` by bracketing then golden-section search.

    The bracket starts at ``[0, hi]`` and grows (or shrinks) by ``expand`` until
    it holds an interior point lower than both ends. Returns
    ``(alpha, f(alpha), flag)``; the result never has ``f(alpha) > f(0)``.
    """
    cache: dict[float, float] = {}

    def F(a: float) -> float:
        if a not in cache:
            v = f(a)
            cache[a] = v if np.isfinite(v) else np.inf
        return cache[a]

    if f0 is not None:
        cache[0.0] = f0
    f0 = F(0.0)
    flag = ""
    if F(hi) < f0:
        lo, mid = 0.0, hi
        for _ in range(60):
            nxt = mid * expand
            if F(nxt) >= F(mid):
                hi = nxt
                break
            lo, mid = mid, nxt
        else:
            flag = "bracket"
            best = min(cache, key=cache.get)
            return best, cache[best], flag
    else:
        lo, mid = 0.0, hi / expand
        while F(mid) >= f0:
            hi, mid = mid, mid / expand
            if mid < 1e-14:
                return 0.0, f0, "no-decrease"
    gr = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    x1, x2 = b - gr * (b - a), a + gr * (b - a)
    for _ in range(max_evals):
        if b - a <= tol * max(b, 1e-300):
            break
        if F(x1) < F(x2):
            b, x2 = x2, x1
            x1 = b - gr * (b - a)
        else:
            a, x1 = x1, x2
            x2 = a + gr * (b - a)
    best = min(cache, key=cache.get)
    return best, cache[best], flag


class _RayLoss:
    """Loss along ``G + alpha * delta`` on one core, in ``O(N)`` per evaluation.

    Record amplitudes are affine in ``alpha`` and ``Z`` is quadratic.
    """

    def __init__(self, a0, b, weights, z00, z01, z11):
        self.a0, self.b, self.w = a0, b, weights
        self.z00, self.z01, self.z11 = z00, z01, z11

    def __call__(self, alpha: float) -> float:
        amps = self.a0 + alpha * self.b
        z = self.z00 + 2 * alpha * self.z01 + alpha * alpha * self.z11
        if not z > 0:
            return np.inf
        return _log_terms_quiet(amps, z, self.w)

    def slope0(self) -> float:
        sq = np.maximum(np.abs(self.a0) ** 2, 1e-300)
        return float(-np.dot(self.w, 2 * np.real(np.conj(self.a0) * self.b) / sq) + 2 * self.z01 / self.z00)


def _log_terms_quiet(amps, z, w) -> float:
    sq = np.maximum(np.abs(amps) ** 2, 1e-300 * z)
    return float(-np.dot(w, np.log(sq)) + np.log(z))


def _search_ray(ray: _RayLoss, f0: float) -> tuple[float, str]:
    if ray.z11 == 0 and not np.any(ray.b):
        return 0.0, "zero-direction"
    if ray.slope0() >= 0:
        return 0.0, "non-descent"
    alpha, _, flag = golden_section_search(ray, f0)
    return alpha, flag


def line_search(theta: Mps, delta: list[np.ndarray], ctx: LossContext) -> tuple[float, str]:
    """``argmin_{alpha > 0} L(theta + alpha * delta)`` for a single-core direction.

    ``delta`` is a list of per-core arrays, nonzero on exactly one core. Returns
    ``(alpha, flag)``; ``alpha = 0`` with a flag for degenerate or non-descent
    directions.
    """
    theta = _require_field(theta, ctx)
    nonzero = [k for k, d in enumerate(delta) if np.any(d)]
    if not nonzero:
        return 0.0, "zero-direction"
    if len(nonzero) > 1:
        raise ValueError("line_search expects a direction supported on one core")
    k = nonzero[0]
    cores = theta.cores
    dt = np.result_type(ctx.vectors, cores[0])
    left = np.ones((ctx.size, 1), dtype=dt)
    for j in range(k):
        left = push_left(left, cores[j], ctx, j)
    right = np.ones((ctx.size, 1), dtype=dt)
    for j in range(theta.n - 1, k, -1):
        right = push_right(right, cores[j], ctx, j)
    g, dk = cores[k], np.asarray(delta[k], dtype=np.result_type(cores[k], delta[k]))
    a0 = site_amplitudes(left, right, g, ctx.vectors, ctx.masks(k))
    b = site_amplitudes(left, right, dk, ctx.vectors, ctx.masks(k))
    zl, zr = _norm_envs(cores)

    def form(x, y):
        return float(np.real(np.einsum("axb,ac,cxd,bd->", x.conj(), zl[k], y, zr[k])))

    ray = _RayLoss(a0, b, ctx.weights, form(g, g), form(g, dk), form(dk, dk))
    return _search_ray(ray, ray(0.0))


# ---------------------------------------------------------------------------
# single updates and sweeps


def gd_step(theta: Mps, ctx: LossContext, eta: float) -> Mps:
    """Simultaneous gradient step ``theta - grad / eta`` on all cores."""
    _, grads = nll_and_gradient(theta, ctx)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient")
    theta = _require_field(theta, ctx)
    return Mps([c - g / eta for c, g in zip(theta.cores, grads)])


def ngd_sweep(
    theta: Mps,
    ctx: LossContext,
    eta: float,
    line_search: bool = False,
    callback: Callable[[int, Mps], None] | None = None,
    order: str = "forward-backward",
) -> tuple[Mps, list[SiteUpdate]]:
    """One natural-gradient sweep: sites ``0..n-1`` and then ``n-1..0``.

    Each site update is a gradient step ``-grad/eta`` on the center core of the
    mixed canonical form (optionally scaled by an exact line search along that
    direction). ``callback(site, state)`` runs after every site update.
    """
    n = theta.n
    cache = EnvironmentCache(theta, ctx, center=0)
    visits = list(range(n))
    if order == "forward-backward":
        visits += list(range(n - 1, -1, -1))
    elif order != "forward":
        raise ValueError(f"unknown sweep order {order!r}")
    updates = []
    for step, site in enumerate(visits):
        if cache.center != site:
            cache.move(site)
        value, grad, amps, z = cache.center_terms()
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient")
        delta = -grad / eta
        alpha, flag = 1.0, ""
        if line_search:
            b = cache.direction_amplitudes(delta)
            g = cache.cores[site]
            ray = _RayLoss(
                amps,
                b,
                ctx.weights,
                z,
                float(np.real(np.vdot(g, delta))),
                float(np.sum(np.abs(delta) ** 2)),
            )
            alpha, flag = _search_ray(ray, value)
        if alpha != 0.0:
            cache.set_center_core(cache.cores[site] + alpha * delta)
        updates.append(SiteUpdate(site, alpha, value, flag))
        if callback is not None:
            callback(site, cache.mps())
    return cache.mps(), updates


def dmrg1_sweep(
    theta: Mps,
    ctx: LossContext,
    eta: float,
    callback: Callable[[int, Mps], None] | None = None,
) -> Mps:
    """1-site DMRG training sweep, written out directly.

    For ``i = 0..n-1``: gauge to mixed canonical form centered at ``i`` from
    scratch, take the full-chain gradient, and update core ``i`` only. No
    environment reuse, so this costs ``O(n)`` times an NGD half-sweep; it serves
    as the reference for the cached implementation.
    """
    theta = _require_field(theta, ctx)
    for i in range(theta.n):
        theta = canonicalize(theta, i)
        _, grads = nll_and_gradient(theta, ctx)
        cores = list(theta.cores)
        cores[i] = cores[i] - grads[i] / eta
        theta = Mps(cores, center=i)
        if callback is not None:
            callback(i, theta)
    return theta


def _pair_vectors(ctx: LossContext) -> np.ndarray:
    v = ctx.vectors
    k, d = v.shape
    return np.einsum("sx,ty->stxy", v, v).reshape(k * k, d * d)


def dmrg2_sweep(theta: Mps, ctx: LossContext, eta: float, r_max: int) -> Mps:
    """2-site DMRG training sweep over pairs ``(i, i+1)``, ``i = 0..n-2``.

    Merge the pair into one core, step along the negative gradient of the merged
    core in mixed canonical form, then split by truncated SVD keeping at most
    ``r_max`` singular values. ``eta = inf`` gives a pure merge/split pass.
    """
    theta = _require_field(theta, ctx)
    n = theta.n
    cache = EnvironmentCache(theta, ctx, center=0)
    pv = _pair_vectors(ctx)
    nsym = ctx.vectors.shape[0]
    for i in range(n - 1):
        if cache.center != i:
            cache.move(i)
        gi, gj = cache.cores[i], cache.cores[i + 1]
        rl, d1, _ = gi.shape
        _, d2, rr = gj.shape
        merged = np.tensordot(gi, gj, axes=(2, 0)).reshape(rl, d1 * d2, rr)
        if np.isfinite(eta):
            pair_sym = ctx.symbols[:, i] * nsym + ctx.symbols[:, i + 1]
            masks = [np.nonzero(pair_sym == s)[0] for s in range(nsym * nsym)]
            left, right = cache.left[i], cache.right[i + 1]
            amps = site_amplitudes(left, right, merged, pv, masks)
            z = float(np.sum(np.abs(merged) ** 2))
            _, coef, _ = _log_terms(amps, z, ctx.weights)
            t = site_projection(coef, left, right, pv, masks, merged.shape)
            grad = 2.0 * (-np.conj(t) + merged / z)
            if not np.iscomplexobj(merged):
                grad = grad.real
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite gradient")
            merged = merged - grad / eta
        u, s, vh, _ = split_svd(merged.reshape(rl * d1, d2 * rr), r_max)
        cache.cores[i] = u.reshape(rl, d1, -1)
        cache.cores[i + 1] = (s[:, None] * vh).reshape(-1, d2, rr)
        cache.left[i + 1] = push_left(cache.left[i], cache.cores[i], ctx, i)
        cache.center = i + 1
        cache.version += 1
    return cache.mps()


# ---------------------------------------------------------------------------
# driver


def initial_state(n: int, config: OptimizerConfig, complex_: bool = False) -> Mps:
    """Random normalized start drawn per ``config.init_dist`` (see :func:`random_mps`)."""
    return random_mps(
        n, config.r_max, complex_=complex_, rng=config.rng_seed, scale=config.init_scale, dist=config.init_dist
    )


def _renormalize(theta: Mps) -> Mps:
    return normalized(theta)


def train(
    theta0: Mps,
    ctx: LossContext,
    config: OptimizerConfig,
    monitor: Callable[[Mps], dict] | None = None,
) -> tuple[Mps, TrainTrace]:
    """Run ``config.method`` for up to ``max_iters`` iterations.

    One iteration is a full gradient step for GD and a sweep otherwise. The NLL
    is recorded after every iteration; training stops early once it changes by
    less than ``config.tol``. With ``renormalize`` the state is rescaled to unit
    norm between iterations (this leaves the model distribution unchanged).
    ``monitor(theta)`` may return ``mi_x1_xn`` / ``tv_to_causal`` entries; it is
    called every ``monitor_every`` iterations and at the end.
    """
    trace = TrainTrace()
    theta = _require_field(theta0, ctx) if config.max_iters else theta0
    if config.max_iters == 0:
        return theta0, trace
    prev = nll(theta, ctx)
    trace.append(TraceRecord(0, 0, prev, **_monitor(monitor, theta, 0, config, force=True)))
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        alpha, flagged = math.nan, False
        if config.method == "GD":
            theta = gd_step(theta, ctx, config.eta)
        elif config.method == "NGD":
            theta, ups = ngd_sweep(theta, ctx, config.eta, line_search=config.line_search)
            alpha = float(np.mean([u.alpha for u in ups]))
            flagged = any(u.flag for u in ups)
        elif config.method == "DMRG1":
            theta = dmrg1_sweep(theta, ctx, config.eta)
        else:
            theta = dmrg2_sweep(theta, ctx, config.eta, config.r_max)
        if config.renormalize:
            theta = _renormalize(theta)
        value = nll(theta, ctx)
        wall = 1000 * (time.perf_counter() - t0)
        last = it == config.max_iters or abs(prev - value) < config.tol
        diag = _monitor(monitor, theta, it, config, force=last)
        trace.append(TraceRecord(it, it, value, alpha=alpha, wall_ms=wall, flagged=flagged, **diag))
        if not np.isfinite(value):
            break
        if abs(prev - value) < config.tol:
            break
        prev = value
    return theta, trace


def _monitor(monitor, theta, it, config, force=False) -> dict:
    if monitor is None:
        return {}
    if force or (config.monitor_every and it % config.monitor_every == 0):
        out = monitor(theta)
        return {k: float(v) for k, v in out.items() if k in ("mi_x1_xn", "tv_to_causal")}
    return {}


# ---------------------------------------------------------------------------
# scalar-core toy model


@dataclass
class ToyReport:
    """Outcome of one update of the scalar-core chain ``q = (prod c_i) * q_unit``."""

    x: float
    dl_dx: float
    ngd_new_x: float
    gd_in_x_new_x: float
    gd_site_new_x: float
    gd_effective_rate: float
    predicted_effective_rate: float

    @property
    def ngd_error(self) -> float:
        return abs(self.ngd_new_x - self.gd_in_x_new_x)

    @property
    def rate_error(self) -> float:
        return abs(self.gd_effective_rate - self.predicted_effective_rate) / abs(self.predicted_effective_rate)


def toy_multilinear_check(
    c: np.ndarray,
    site: int = 0,
    alpha: float = 1e-3,
    loss: Callable[[float], float] | None = None,
    dloss: Callable[[float], float] | None = None,
    d: int = 2,
    rng=0,
) -> ToyReport:
    """Compare single-scalar NGD and GD updates on an MPS with cores ``c_i G_i``.

    ``G_i`` are fixed random unit vectors (a product state with unit norm), so
    ``q`` depends on ``x = prod c_i`` only and ``F(q) = l(<q_unit, q>) = l(x)``.
    The default ``l`` is the strongly convex ``(x - 2)^2 / 2``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    if loss is None:
        loss = lambda x: 0.5 * (x - 2.0) ** 2  # noqa: E731
        dloss = lambda x: x - 2.0  # noqa: E731
    gen = np.random.default_rng(rng)
    unit = []
    for _ in range(n):
        v = gen.standard_normal(d)
        unit.append(v / np.linalg.norm(v))
    q_unit = Mps([v.reshape(1, d, 1) for v in unit]).to_dense().reshape(-1)

    def q_of(cs):
        return Mps([ci * v.reshape(1, d, 1) for ci, v in zip(cs, unit)]).to_dense().reshape(-1)

    def x_of(cs):
        return float(q_unit @ q_of(cs))

    x = x_of(c)
    lp = dloss(x)
    grad_q = lp * q_unit  # nabla_q F
    jac = q_of(c) / c[site]  # d q / d c_site
    # NGD on c_site: argmin jac.grad * dc + (1/(2 alpha)) ||jac dc||^2
    dc_ngd = -alpha * (jac @ grad_q) / (jac @ jac)
    c_ngd = c.copy()
    c_ngd[site] += dc_ngd
    # GD on c_site
    c_gd = c.copy()
    c_gd[site] -= alpha * (jac @ grad_q)
    x_gd = x_of(c_gd)
    others = np.prod(np.delete(c, site))
    return ToyReport(
        x=x,
        dl_dx=lp,
        ngd_new_x=x_of(c_ngd),
        gd_in_x_new_x=x - alpha * lp,
        gd_site_new_x=x_gd,
        gd_effective_rate=(x - x_gd) / lp,
        predicted_effective_rate=alpha * others**2,
    )
