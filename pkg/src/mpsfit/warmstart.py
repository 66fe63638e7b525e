"""Warm initialization of Born machines from a sample-based density estimate.

Pipeline: a direct MPS density estimate ``p(x) = q(x) / W`` from samples, TT-cross
interpolation of ``sqrt(max(0, p))``, then rank reduction and ALS fitting to the
requested bond dimension.

The density estimator is a sketching method on the line graph. For each bond
``k`` (between sites ``k`` and ``k+1``) the left sketch is the one-hot encoding
of the ``w+1`` sites ending at ``k`` and the right sketch the one-hot encoding of
the ``w+1`` sites starting at ``k+1``. By default both windows are also anchored
at the chain ends (site 0 on the left, site ``n-1`` on the right), which are
the other boundary vertices of the cut when the data live on a ring. Sketched
empirical marginals then give small linear systems whose solutions are the
cores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .mps import Mps, als_fit, evaluate_batch, norm_squared, normalized, truncate


class SketchRankWarning(RuntimeWarning):
    """A sketch matrix was rank deficient; the bond rank was reduced."""


@dataclass
class DirectMps:
    """Unsigned density model ``p(x) = q(x) / W`` with ``W = sum_x q(x)``."""

    mps: Mps

    def __post_init__(self) -> None:
        if self.mps.is_complex:
            raise ValueError("a direct MPS density must be real")
        if self.normalization == 0:
            raise ValueError("direct MPS with zero total mass")

    @property
    def normalization(self) -> float:
        env = np.ones(1)
        for c in self.mps.cores:
            env = env @ c.sum(axis=1)
        return float(env[0])

    @property
    def n(self) -> int:
        return self.mps.n

    def __call__(self, bits: np.ndarray) -> np.ndarray:
        return evaluate_batch(self.mps, bits) / self.normalization


@dataclass
class SketchConfig:
    """``anchor_ends`` adds site 0 to every left sketch and site ``n-1`` to every right one."""

    rank: int = 4
    window: int = 1
    cutoff: float = 1e-10
    anchor_ends: bool = True

    def __post_init__(self) -> None:
        if self.rank < 1 or self.window < 0:
            raise ValueError("rank must be >= 1 and window >= 0")


def _codes(bits: np.ndarray, sites: list[int]) -> np.ndarray:
    code = np.zeros(bits.shape[0], dtype=np.int64)
    for s in sites:
        code = 2 * code + bits[:, s]
    return code


def _joint(codes: list[np.ndarray], sizes: list[int], n_samples: int) -> np.ndarray:
    flat = np.ravel_multi_index(codes, sizes)
    return np.bincount(flat, minlength=int(np.prod(sizes))).reshape(sizes) / n_samples


def sketch_estimate(bits: np.ndarray, cfg: SketchConfig | None = None) -> DirectMps:
    """Direct MPS density estimate from binary samples (rows of 0/1)."""
    cfg = cfg or SketchConfig()
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    m, n = bits.shape
    if m == 0:
        raise ValueError("need at least one sample")
    if n < 2:
        raise ValueError("need n >= 2")
    w = cfg.window
    left = [list(range(max(0, k - w), k + 1)) for k in range(n - 1)]
    right = [list(range(k + 1, min(n, k + 2 + w))) for k in range(n - 1)]
    if cfg.anchor_ends:
        left = [s if s[0] == 0 else [0] + s for s in left]
        right = [s if s[-1] == n - 1 else s + [n - 1] for s in right]
    lcode = [_codes(bits, s) for s in left]
    rcode = [_codes(bits, s) for s in right]
    lsize = [2 ** len(s) for s in left]
    rsize = [2 ** len(s) for s in right]

    # Q[k]: leading right singular vectors of B_k = S_k^T p T_{k+1}
    qs, bq = [], []
    for k in range(n - 1):
        b = _joint([lcode[k], rcode[k]], [lsize[k], rsize[k]], m)
        _, s, vh = np.linalg.svd(b, full_matrices=False)
        keep = int(np.count_nonzero(s > cfg.cutoff * max(s[0], 1e-300)))
        r = min(cfg.rank, max(keep, 1))
        if keep < cfg.rank and keep < min(b.shape):
            warnings.warn(f"sketch at bond {k} has rank {keep}; using {r}", SketchRankWarning, stacklevel=2)
        q = vh[:r].T
        qs.append(q)
        bq.append(b @ q)

    cores = []
    x0 = bits[:, 0]
    a0 = _joint([x0, rcode[0]], [2, rsize[0]], m)
    cores.append((a0 @ qs[0])[None])
    for k in range(1, n - 1):
        a = _joint([lcode[k - 1], bits[:, k], rcode[k]], [lsize[k - 1], 2, rsize[k]], m)
        rhs = (a @ qs[k]).reshape(lsize[k - 1], -1)
        g = _lstsq(bq[k - 1], rhs, cfg.cutoff)
        cores.append(g.reshape(g.shape[0], 2, -1))
    last = _joint([lcode[n - 2], bits[:, n - 1]], [lsize[n - 2], 2], m)
    g = _lstsq(bq[n - 2], last, cfg.cutoff)
    cores.append(g[:, :, None])
    return DirectMps(Mps(cores))


def _lstsq(a: np.ndarray, b: np.ndarray, cutoff: float) -> np.ndarray:
    sol, *_ = scipy.linalg.lstsq(a, b, cond=cutoff)
    return sol


def clipped_sqrt(p: DirectMps) -> Callable[[np.ndarray], np.ndarray]:
    """Entrywise ``sqrt(max(0, p(x)))`` as a batch evaluator on bit rows."""

    def f(bits: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(p(bits), 0.0))

    return f


# ---------------------------------------------------------------------------
# TT-cross


def maxvol(a: np.ndarray, tol: float = 1.05, max_iters: int = 200) -> np.ndarray:
    """Row indices of a dominant ``r x r`` submatrix of the tall matrix ``a``."""
    m, r = a.shape
    if m <= r:
        return np.arange(m)
    _, _, piv = scipy.linalg.qr(a.T, pivoting=True, mode="economic")
    rows = piv[:r].copy()
    sub = a[rows]
    try:
        b = np.linalg.solve(sub.T, a.T).T
    except np.linalg.LinAlgError:
        return rows
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= tol:
            break
        # swap row j of the submatrix for row i (Sherman-Morrison update)
        bj = b[:, j].copy()
        bi = b[i].copy()
        bi[j] -= 1.0
        b -= np.outer(bj, bi) / b[i, j]
        rows[j] = i
    return rows


@dataclass
class CrossResult:
    mps: Mps
    probe_residual: float
    sweeps: int
    evaluations: int
    converged: bool
    degenerate: bool = False
    left_pivots: list[np.ndarray] = field(default_factory=list)
    right_pivots: list[np.ndarray] = field(default_factory=list)


def tt_cross(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    r: int,
    max_sweeps: int = 10,
    tol: float = 1e-8,
    rng_seed=None,
    init_samples: np.ndarray | None = None,
    probe_size: int = 10_000,
    max_reseeds: int = 3,
) -> CrossResult:
    """Fixed-rank cross interpolation of a function on ``{0,1}^n``.

    Alternating left-to-right and right-to-left passes refine nested pivot
    sets with maxvol. Bond ranks are capped at ``r`` and reduced to the numerical
    rank of each fiber, so over-ranked requests stay well conditioned. Each left-to-right pass assembles the interpolant
    ``C_k P_k^{-1}`` and measures the relative residual on a random probe set.
    Initial right pivots come from ``init_samples`` when given.
    """
    rng = np.random.default_rng(rng_seed)
    ranks = [1] + [min(r, 2 ** min(k + 1, n - k - 1)) for k in range(n - 1)] + [1]
    calls = 0

    def F(x: np.ndarray) -> np.ndarray:
        nonlocal calls
        calls += x.shape[0]
        return np.asarray(f(x), dtype=float)

    def random_rows(count: int, width: int) -> np.ndarray:
        return rng.integers(0, 2, size=(count, width))

    # right[k]: configurations of sites k+1..n-1 (bond k), rows = pivots
    right = _nested_right_pivots(init_samples, ranks, n, rng)
    left: list[np.ndarray] = [None] * (n - 1)  # type: ignore[list-item]

    probe = random_rows(probe_size, n)
    f_probe = F(probe)
    probe_norm = max(np.linalg.norm(f_probe), 1e-300)

    def fiber(k: int, lrows: np.ndarray, rrows: np.ndarray) -> np.ndarray:
        """Values on ``lrows x {0,1} x rrows`` as an array (len(l), 2, len(r))."""
        nl, nr = max(len(lrows), 1), max(len(rrows), 1)
        pts = np.empty((nl, 2, nr, n), dtype=np.int64)
        if k > 0:
            pts[..., :k] = lrows[:, None, None, :]
        pts[..., k] = np.arange(2)[None, :, None]
        if k < n - 1:
            pts[..., k + 1 :] = rrows[None, None, :, :]
        return F(pts.reshape(-1, n)).reshape(nl, 2, nr)

    degenerate = False
    best = None
    residual = np.inf
    sweeps = 0
    converged = False
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        cores = []
        lrows = np.zeros((1, 0), dtype=np.int64)
        for k in range(n - 1):
            for attempt in range(max_reseeds + 1):
                c = fiber(k, lrows, right[k])
                u, rho = _range_basis(c.reshape(-1, c.shape[2]))
                if rho > 0:
                    break
                if attempt == max_reseeds:
                    degenerate = True
                    u, rho = u[:, :1], 1
                    break
                right[k] = _reseed(right[k], n - k - 1, rng)
            rows = maxvol(u)
            try:
                core = np.linalg.solve(u[rows].T, u.T).T
            except np.linalg.LinAlgError:
                core = u @ np.linalg.pinv(u[rows])
                degenerate = True
            cores.append(core.reshape(c.shape[0], 2, -1))
            prev = np.repeat(lrows, 2, axis=0) if k > 0 else np.zeros((2, 0), dtype=np.int64)
            cand = np.concatenate([prev, np.tile(np.arange(2), len(lrows))[:, None]], axis=1)
            lrows = cand[rows]
            left[k] = lrows
        cores.append(fiber(n - 1, lrows, np.zeros((1, 0), dtype=np.int64))[..., :1])
        approx = Mps(cores)
        residual = float(np.linalg.norm(evaluate_batch(approx, probe) - f_probe) / probe_norm)
        if best is None or residual < best[0]:
            best = (residual, approx, [x.copy() for x in left], [x.copy() for x in right])
        if residual < tol:
            converged = True
            break
        # right-to-left pass refreshes the right pivots; beyond the revealed rank
        # they are padded with random candidates so the rank can grow next sweep
        rrows = np.zeros((1, 0), dtype=np.int64)
        for k in range(n - 1, 0, -1):
            c = fiber(k, left[k - 1], rrows)  # (r_{k-1}, 2, r_k)
            u, rho = _range_basis(c.reshape(c.shape[0], -1).T)
            cols = list(maxvol(u[:, : max(rho, 1)]))
            nxt = np.repeat(np.arange(2), len(rrows))[:, None]
            tail = np.tile(rrows, (2, 1)) if rrows.shape[1] else np.zeros((2, 0), dtype=np.int64)
            cand = np.concatenate([nxt, tail], axis=1)
            spare = [i for i in rng.permutation(len(cand)) if i not in cols]
            cols += spare[: max(0, ranks[k] - len(cols))]
            rrows = cand[cols]
            right[k - 1] = rrows
    return CrossResult(best[1], best[0], sweeps, calls, converged, degenerate, best[2], best[3])


def _range_basis(mat: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, int]:
    """Orthonormal basis of the numerical column space of ``mat`` and its rank."""
    u, sv, _ = np.linalg.svd(mat, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return u, 0
    rho = int(np.count_nonzero(sv > rcond * sv[0]))
    return u[:, :rho], rho


def _nested_right_pivots(samples, ranks, n, rng) -> list[np.ndarray]:
    """Right pivot sets with ``J_{k-1}`` inside ``{0,1} x J_k``, seeded by sample tails."""
    rows = None
    if samples is not None and len(samples):
        samples = np.asarray(samples, dtype=np.int64)
        rows = samples[rng.choice(len(samples), size=min(len(samples), max(ranks)), replace=False)]
    right: list[np.ndarray] = [None] * (n - 1)  # type: ignore[list-item]
    below = np.zeros((1, 0), dtype=np.int64)
    for k in range(n - 2, -1, -1):
        count = ranks[k + 1]
        cand = np.concatenate(
            [np.repeat(np.arange(2), len(below))[:, None], np.tile(below, (2, 1))], axis=1
        )
        chosen: list[int] = []
        if rows is not None:
            for tail in rows[:, k + 1 :]:
                hit = np.nonzero(np.all(cand == tail, axis=1))[0]
                if hit.size and hit[0] not in chosen:
                    chosen.append(int(hit[0]))
        for idx in rng.permutation(len(cand)):
            if len(chosen) >= count:
                break
            if idx not in chosen:
                chosen.append(int(idx))
        below = cand[chosen[:count]]
        right[k] = below
    return right


def _reseed(current: np.ndarray, width: int, rng) -> np.ndarray:
    """Replace the last pivot of ``current`` with a fresh row."""
    seen = {tuple(r) for r in current[:-1]}
    for _ in range(1000):
        row = tuple(int(v) for v in rng.integers(0, 2, size=width))
        if row not in seen:
            return np.concatenate([current[:-1], np.array([row])], axis=0)
    return current


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class WarmStartReport:
    probe_residual: float
    als_error: float
    relative_als_error: float
    cross_ranks: list[int]
    ranks: list[int]
    cross_sweeps: int
    cross_converged: bool
    degenerate: bool

    def as_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.__dict__.items()) + "\n"


def warm_init(
    p: DirectMps,
    r_target: int,
    tol: float = 1e-8,
    cross_rank: int | None = None,
    max_sweeps: int = 10,
    rng_seed=0,
    init_samples: np.ndarray | None = None,
    als_sweeps: int = 50,
    als_tol: float = 1e-10,
) -> tuple[Mps, WarmStartReport]:
    """Born-machine initialization from a direct density estimate.

    ``sqrt(max(0, p))`` is interpolated by TT-cross at ``cross_rank`` (default
    ``2 * r_target``), truncated to ``r_target`` and refined by ALS. The result
    is normalized.
    """
    cross_rank = cross_rank or 2 * r_target
    cross = tt_cross(
        clipped_sqrt(p), p.n, cross_rank, max_sweeps=max_sweeps, tol=tol, rng_seed=rng_seed,
        init_samples=init_samples,
    )
    start, _ = truncate(cross.mps, r_target)
    fit = als_fit(cross.mps, r_target, sweeps=als_sweeps, tol=als_tol, init=start)
    tnorm = np.sqrt(norm_squared(cross.mps))
    report = WarmStartReport(
        probe_residual=cross.probe_residual,
        als_error=fit.error,
        relative_als_error=fit.error / max(tnorm, 1e-300),
        cross_ranks=cross.mps.ranks,
        ranks=fit.mps.ranks,
        cross_sweeps=cross.sweeps,
        cross_converged=cross.converged,
        degenerate=cross.degenerate,
    )
    return normalized(fit.mps), report
