"""Boundary-pair statistics, KL decomposition and the causality-trap detector.

Notation: ``z = (x_1, x_n)`` is the boundary pair and ``w`` the interior sites.
The chain rule splits ``D_KL(p* || p) = D_z + D_{w|z}`` where ``D_z`` compares
the pair marginals and ``D_{w|z}`` the conditionals. All quantities are in nats.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .models import IsingModel, ising_distribution, ising_pair_marginal
from .mps import Mps, born_distribution

DEFAULT_ENUM_BOUND = 1 << 20


class EnumerationBoundError(ValueError):
    """The requested quantity needs more than ``enum_bound`` configurations."""


def _check_bound(n: int, enum_bound: int) -> None:
    if 2**n > enum_bound:
        raise EnumerationBoundError(f"2^{n} configurations exceed enum_bound={enum_bound}")


def pair_marginal(model: Mps | IsingModel, sites: tuple[int, int] | None = None) -> np.ndarray:
    """2x2 joint table of two sites (default: first and last).

    Born machines use the squared-MPS transfer chain with the two sites left
    open, so the cost is polynomial in ``n``. Ising models are exact by transfer
    matrices (first/last pair only).
    """
    if isinstance(model, IsingModel):
        if sites not in (None, (0, model.n - 1)):
            raise ValueError("Ising pair marginals are available for the boundary pair only")
        return ising_pair_marginal(model)
    n = model.n
    i, j = sites if sites is not None else (0, n - 1)
    if not 0 <= i < j < n:
        raise ValueError("sites must satisfy 0 <= i < j < n")
    cores = model.cores
    # env[a, b] accumulates conj(G) on index a and G on index b
    env = np.ones((1, 1), dtype=model.dtype)
    for k in range(i):
        env = _transfer(env, cores[k])
    d_i = cores[i].shape[1]
    branches = [_transfer(env, cores[i][:, x : x + 1]) for x in range(d_i)]
    for k in range(i + 1, j):
        branches = [_transfer(e, cores[k]) for e in branches]
    tail = np.ones((1, 1), dtype=model.dtype)
    for k in range(n - 1, j, -1):
        tail = _transfer_right(tail, cores[k])
    d_j = cores[j].shape[1]
    table = np.empty((d_i, d_j))
    for a, e in enumerate(branches):
        for b in range(d_j):
            end = _transfer(e, cores[j][:, b : b + 1])
            table[a, b] = float(np.real(np.sum(end * tail)))
    return table / table.sum()


def _transfer(env: np.ndarray, core: np.ndarray) -> np.ndarray:
    t = np.tensordot(env, core, axes=(1, 0))  # a x b'
    return np.tensordot(core.conj(), t, axes=([0, 1], [0, 1]))


def _transfer_right(env: np.ndarray, core: np.ndarray) -> np.ndarray:
    t = np.tensordot(core, env, axes=(2, 1))  # a' x b
    return np.tensordot(core.conj(), t, axes=([1, 2], [1, 2]))


def mutual_information(table: np.ndarray) -> float:
    """``sum p(a,b) log(p(a,b) / (p(a) p(b)))`` with ``0 log 0 = 0``."""
    p = np.asarray(table, dtype=float)
    p = p / p.sum()
    pa, pb = p.sum(axis=1), p.sum(axis=0)
    outer = np.outer(pa, pb)
    mask = p > 0
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / outer[mask]))))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def density(source, n: int | None = None, enum_bound: int = DEFAULT_ENUM_BOUND) -> np.ndarray:
    """Dense probability vector of a model, or a given vector renormalized."""
    if isinstance(source, IsingModel):
        _check_bound(source.n, enum_bound)
        return ising_distribution(source)
    if isinstance(source, Mps):
        _check_bound(source.n, enum_bound)
        return born_distribution(source)
    p = np.asarray(source, dtype=float).reshape(-1)
    if n is not None and p.size != 2**n:
        raise ValueError("density vector has the wrong length")
    return p / p.sum()


def tv_distance(a, b, n: int | None = None, enum_bound: int = DEFAULT_ENUM_BOUND) -> float:
    """``0.5 * sum |p_a - p_b|`` by enumeration."""
    pa, pb = density(a, n, enum_bound), density(b, n, enum_bound)
    if pa.shape != pb.shape:
        raise ValueError("densities live on different spaces")
    return float(0.5 * np.abs(pa - pb).sum())


def kl_decomposition(
    target: IsingModel, model: Mps, enum_bound: int = DEFAULT_ENUM_BOUND
) -> tuple[float, float, float]:
    """``(D_KL, D_z, D_{w|z})`` for ``D_KL(p_target || p_model)``."""
    d_kl = _kl(density(target, enum_bound=enum_bound), density(model, enum_bound=enum_bound))
    d_z = _kl(pair_marginal(target).reshape(-1), pair_marginal(model).reshape(-1))
    return d_kl, d_z, d_kl - d_z


@dataclass
class TrapReport:
    D_z: float
    D_w_given_z: float
    mi_model: float
    mi_target: float
    nll_gap: float
    trapped: bool
    D_kl: float = float("nan")
    method: str = "exact"

    def as_text(self) -> str:
        """Flat ``key=value`` block."""
        return "\n".join(f"{k}={_fmt(v)}" for k, v in asdict(self).items()) + "\n"

    def as_row(self) -> dict:
        return {k: _fmt(v) for k, v in asdict(self).items()}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def trap_detector(
    target: IsingModel,
    model: Mps,
    tol_mi: float = 0.05,
    tol_kl: float = 0.05,
    enum_bound: int = DEFAULT_ENUM_BOUND,
    nll_gap: float | None = None,
) -> TrapReport:
    """Decide whether ``model`` sits in the causality trap of ``target``.

    Trapped means the conditional part ``D_{w|z}`` is fitted, the boundary part
    ``D_z`` equals the target's boundary mutual information, and the model's own
    boundary mutual information is near zero. Beyond ``enum_bound`` the exact
    ``D_{w|z}`` is replaced by ``nll_gap - D_z`` (``nll_gap`` is then required).
    """
    pm_target, pm_model = pair_marginal(target), pair_marginal(model)
    mi_t, mi_m = mutual_information(pm_target), mutual_information(pm_model)
    d_z = _kl(pm_target.reshape(-1), pm_model.reshape(-1))
    if 2**target.n <= enum_bound:
        d_kl, _, d_wz = kl_decomposition(target, model, enum_bound)
        gap = d_kl if nll_gap is None else nll_gap
        method = "exact"
    else:
        if nll_gap is None:
            raise EnumerationBoundError("nll_gap is required beyond the enumeration bound")
        d_kl, gap, d_wz, method = float("nan"), nll_gap, nll_gap - d_z, "proxy"
    trapped = bool(d_wz < tol_kl and abs(d_z - mi_t) < tol_kl and mi_m < tol_mi)
    return TrapReport(d_z, d_wz, mi_m, mi_t, gap, trapped, d_kl, method)
