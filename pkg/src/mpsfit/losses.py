"""Negative log-likelihood objectives for Born machines and MPS tomography.

Both losses share one contraction scheme. A record is a sequence of local
symbols ``s_k``; each symbol selects a covector ``V[s_k]`` acting on the physical
leg of core ``k``, and the record's amplitude is

    a = prod_k ( sum_x V[s_k, x] G_k[:, x, :] ).

For a Born machine ``V`` is the identity (the symbol is the bit itself); for
tomography ``V`` holds the rows of the Pauli basis-change unitaries. The loss is
``-sum_j w_j log(|a_j|^2 / Z)`` with ``Z = <psi|psi>`` and weights summing to one.

Gradients are with respect to raw core entries. For complex cores the gradient
packs the real and imaginary partial derivatives as ``dL/dRe + 1j * dL/dIm``,
so ``G - lr * grad`` is plain gradient descent on the real parametrization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .models import IsingModel, ising_distribution
from .mps import (
    Mps,
    _left_orthogonalize,
    _right_orthogonalize,
    born_distribution,
    canonicalize,
    norm_squared,
)
from .measurement import MEASUREMENT_VECTORS, QstDataset

#: probabilities are clamped here before taking logs
PROB_FLOOR = 1e-300


class ZeroProbabilityWarning(RuntimeWarning):
    """A record has (numerically) zero model probability; the loss was clamped."""


@dataclass
class LossContext:
    """A deduplicated dataset plus the local measurement covectors.

    ``symbols`` has one row per distinct record and ``weights`` the empirical
    frequencies (summing to one).
    """

    kind: str
    symbols: np.ndarray
    weights: np.ndarray
    vectors: np.ndarray
    _masks: list[list[np.ndarray]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.symbols.shape[0] == 0:
            raise ValueError("empty dataset")
        self.weights = np.asarray(self.weights, dtype=float)
        self.weights = self.weights / self.weights.sum()
        self._masks = [
            [np.nonzero(self.symbols[:, k] == s)[0] for s in range(self.vectors.shape[0])]
            for k in range(self.symbols.shape[1])
        ]

    @classmethod
    def _dedup(cls, kind: str, symbols: np.ndarray, vectors: np.ndarray, weights=None) -> "LossContext":
        symbols = np.asarray(symbols, dtype=np.int64)
        if weights is None:
            uniq, counts = np.unique(symbols, axis=0, return_counts=True)
            return cls(kind, uniq, counts.astype(float), vectors)
        return cls(kind, symbols, np.asarray(weights, dtype=float), vectors)

    @classmethod
    def born(cls, bits: np.ndarray, weights=None, d: int = 2) -> "LossContext":
        """Born-machine NLL over computational-basis samples (rows of ``0..d-1``)."""
        return cls._dedup("BM", bits, np.eye(d), weights)

    @classmethod
    def tomography(cls, data: QstDataset) -> "LossContext":
        """Tomography NLL over random Pauli measurement records."""
        return cls._dedup("QST", data.symbols(), MEASUREMENT_VECTORS)

    @property
    def n(self) -> int:
        return self.symbols.shape[1]

    @property
    def size(self) -> int:
        return self.symbols.shape[0]

    def masks(self, k: int) -> list[np.ndarray]:
        return self._masks[k]

    def subset(self, rows: np.ndarray) -> "LossContext":
        """Mini-batch restricted to the given distinct-record rows."""
        return LossContext(self.kind, self.symbols[rows], self.weights[rows], self.vectors)

    def local_matrices(self, core: np.ndarray) -> np.ndarray:
        """``A[s] = sum_x V[s, x] core[:, x, :]`` for every symbol ``s``."""
        return np.einsum("sx,axb->sab", self.vectors, core)


# ---------------------------------------------------------------------------
# per-sample environment contractions


def _result_dtype(ctx: LossContext, *arrays) -> np.dtype:
    return np.result_type(ctx.vectors, *arrays)


def push_left(v: np.ndarray, core: np.ndarray, ctx: LossContext, k: int) -> np.ndarray:
    """Left environments after absorbing site ``k``: ``v_j <- v_j A_k[s_jk]``."""
    mats = ctx.local_matrices(core)
    out = np.empty((v.shape[0], core.shape[2]), dtype=_result_dtype(ctx, v, core))
    for s, idx in enumerate(ctx.masks(k)):
        if idx.size:
            out[idx] = v[idx] @ mats[s]
    return out


def push_right(v: np.ndarray, core: np.ndarray, ctx: LossContext, k: int) -> np.ndarray:
    """Right environments after absorbing site ``k``: ``v_j <- A_k[s_jk] v_j``."""
    mats = ctx.local_matrices(core)
    out = np.empty((v.shape[0], core.shape[0]), dtype=_result_dtype(ctx, v, core))
    for s, idx in enumerate(ctx.masks(k)):
        if idx.size:
            out[idx] = v[idx] @ mats[s].T
    return out


def site_amplitudes(
    left: np.ndarray, right: np.ndarray, core: np.ndarray, vectors: np.ndarray, masks
) -> np.ndarray:
    """Record amplitudes with explicit environments around one (possibly merged) core."""
    mats = np.einsum("sx,axb->sab", vectors, core)
    out = np.empty(left.shape[0], dtype=np.result_type(left, right, mats))
    for s, idx in enumerate(masks):
        if idx.size:
            out[idx] = np.sum((left[idx] @ mats[s]) * right[idx], axis=1)
    return out


def site_projection(
    coef: np.ndarray, left: np.ndarray, right: np.ndarray, vectors: np.ndarray, masks, shape
) -> np.ndarray:
    """``T = sum_j coef_j * d a_j / d core`` (holomorphic derivative, no conjugation)."""
    dtype = np.result_type(coef, left, right, vectors)
    mats = np.zeros((vectors.shape[0], shape[0], shape[2]), dtype=dtype)
    for s, idx in enumerate(masks):
        if idx.size:
            mats[s] = (coef[idx, None] * left[idx]).T @ right[idx]
    return np.einsum("sx,sab->axb", vectors, mats)


def _log_terms(amps: np.ndarray, z: float, weights: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """NLL value and per-record coefficients ``w_j / a_j`` (clamped)."""
    sq = np.abs(amps) ** 2
    floor = PROB_FLOOR * z
    clamped = bool(np.any(sq < floor))
    sq_c = np.maximum(sq, floor)
    value = float(-np.dot(weights, np.log(sq_c)) + np.log(z))
    coef = weights * np.conj(amps) / sq_c
    if clamped:
        warnings.warn("record with zero model probability; loss clamped", ZeroProbabilityWarning, stacklevel=3)
    return value, coef, clamped


def _require_field(theta: Mps, ctx: LossContext) -> Mps:
    if np.iscomplexobj(ctx.vectors) and not theta.is_complex:
        return theta.astype(complex)
    return theta


def amplitudes(theta: Mps, ctx: LossContext) -> np.ndarray:
    theta = _require_field(theta, ctx)
    v = np.ones((ctx.size, 1), dtype=_result_dtype(ctx, theta.cores[0]))
    for k, c in enumerate(theta.cores):
        v = push_left(v, c, ctx, k)
    return v[:, 0]


def _norm_envs(cores: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    n = len(cores)
    dt = cores[0].dtype
    zl = [np.ones((1, 1), dtype=dt)]
    for c in cores[:-1]:
        tmp = np.tensordot(zl[-1], c, axes=(1, 0))
        zl.append(np.tensordot(c.conj(), tmp, axes=([0, 1], [0, 1])))
    zr = [np.ones((1, 1), dtype=dt)] * n
    for k in range(n - 1, 0, -1):
        c = cores[k]
        tmp = np.tensordot(c, zr[k], axes=(2, 1))  # (b', x, c)
        zr[k - 1] = np.tensordot(c.conj(), tmp, axes=([1, 2], [1, 2]))
    return zl, zr


def nll(theta: Mps, ctx: LossContext) -> float:
    """Empirical negative log-likelihood (``+inf``-safe: probabilities are clamped)."""
    theta = _require_field(theta, ctx)
    z = norm_squared(theta)
    value, _, _ = _log_terms(amplitudes(theta, ctx), z, ctx.weights)
    return value


def nll_and_gradient(theta: Mps, ctx: LossContext) -> tuple[float, list[np.ndarray]]:
    """Loss and the exact gradient with respect to every core.

    Per-record left environments are cached on a forward pass and right
    environments accumulated on the backward pass, so the cost is
    ``O(n (N r^2 + r^3))``.
    """
    theta = _require_field(theta, ctx)
    cores = theta.cores
    n = theta.n
    lefts = [np.ones((ctx.size, 1), dtype=_result_dtype(ctx, cores[0]))]
    for k in range(n - 1):
        lefts.append(push_left(lefts[-1], cores[k], ctx, k))
    amps = push_left(lefts[-1], cores[-1], ctx, n - 1)[:, 0]
    zl, zr = _norm_envs(cores)
    last = cores[-1]
    z = float(np.real(np.einsum("axb,ac,cxb->", last.conj(), zl[-1], last)))
    value, coef, _ = _log_terms(amps, z, ctx.weights)
    grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    right = np.ones((ctx.size, 1), dtype=lefts[0].dtype)
    for k in range(n - 1, -1, -1):
        c = cores[k]
        t = site_projection(coef, lefts[k], right, ctx.vectors, ctx.masks(k), c.shape)
        zg = np.einsum("ac,cxd,bd->axb", zl[k], c, zr[k])
        g = 2.0 * (-np.conj(t) + zg / z)
        grads[k] = g.real if not np.iscomplexobj(c) else g
        if k > 0:
            right = push_right(right, c, ctx, k)
    return value, grads


def gradient(theta: Mps, ctx: LossContext) -> list[np.ndarray]:
    return nll_and_gradient(theta, ctx)[1]


def exact_distribution_context(configs: np.ndarray, probs: np.ndarray) -> LossContext:
    """Born-machine context whose NLL is the cross entropy ``-sum p log p_theta``."""
    keep = probs > 0
    return LossContext.born(configs[keep], weights=probs[keep])


# ---------------------------------------------------------------------------
# mixed-canonical sweeping


class EnvironmentCache:
    """An MPS held in mixed canonical form with per-record environments.

    ``left[k]`` contracts sites ``< k`` and ``right[k]`` sites ``> k`` for every
    record. Only the environments on the far side of the current center are
    guaranteed valid; moving the center one site costs one QR and one
    ``O(N r^2)`` environment push. ``version`` increments on every core change.
    """

    def __init__(self, theta: Mps, ctx: LossContext, center: int = 0):
        theta = _require_field(theta, ctx)
        self.ctx = ctx
        self.cores = list(canonicalize(theta, center).cores)
        self.n = len(self.cores)
        self.center = center
        self.version = 0
        dt = _result_dtype(ctx, self.cores[0])
        self.left: list[np.ndarray | None] = [None] * self.n
        self.right: list[np.ndarray | None] = [None] * self.n
        self.left[0] = np.ones((ctx.size, 1), dtype=dt)
        for k in range(center):
            self.left[k + 1] = push_left(self.left[k], self.cores[k], ctx, k)
        self.right[self.n - 1] = np.ones((ctx.size, 1), dtype=dt)
        for k in range(self.n - 1, center, -1):
            self.right[k - 1] = push_right(self.right[k], self.cores[k], ctx, k)

    def mps(self) -> Mps:
        return Mps([c.copy() for c in self.cores], center=self.center)

    def center_terms(self) -> tuple[float, np.ndarray, np.ndarray, float]:
        """Loss, gradient at the center core, record amplitudes and ``Z``."""
        k = self.center
        c = self.cores[k]
        ctx = self.ctx
        amps = site_amplitudes(self.left[k], self.right[k], c, ctx.vectors, ctx.masks(k))
        z = float(np.sum(np.abs(c) ** 2))
        value, coef, _ = _log_terms(amps, z, ctx.weights)
        t = site_projection(coef, self.left[k], self.right[k], ctx.vectors, ctx.masks(k), c.shape)
        g = 2.0 * (-np.conj(t) + c / z)
        if not np.iscomplexobj(c):
            g = g.real
        return value, g, amps, z

    def direction_amplitudes(self, delta: np.ndarray) -> np.ndarray:
        k = self.center
        return site_amplitudes(self.left[k], self.right[k], delta, self.ctx.vectors, self.ctx.masks(k))

    def set_center_core(self, core: np.ndarray) -> None:
        self.cores[self.center] = core
        self.version += 1

    def move(self, to: int) -> None:
        k = self.center
        if to == k + 1:
            self.cores[k], self.cores[to] = _left_orthogonalize(self.cores[k], self.cores[to])
            self.left[to] = push_left(self.left[k], self.cores[k], self.ctx, k)
        elif to == k - 1:
            self.cores[k], self.cores[to] = _right_orthogonalize(self.cores[k], self.cores[to])
            self.right[to] = push_right(self.right[k], self.cores[k], self.ctx, k)
        else:
            raise ValueError("the center moves one site at a time")
        self.center = to
        self.version += 1


def exact_kl_loss(theta: Mps, model: IsingModel, enum_bound: int = 1 << 20) -> float:
    """Infinite-sample loss ``D_KL(p* || p_theta) + H(p*)`` by enumeration.

    Raises ``ValueError`` when ``2**n`` exceeds ``enum_bound``.
    """
    if 2**model.n > enum_bound:
        raise ValueError(f"2^{model.n} configurations exceed enum_bound={enum_bound}")
    p = ising_distribution(model)
    q = np.maximum(born_distribution(theta), PROB_FLOOR)
    keep = p > 0
    return float(-np.dot(p[keep], np.log(q[keep])))
