"""Two-site DMRG ground states of MPO Hamiltonians."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .models import Mpo
from .mps import Mps, canonicalize, norm_squared, random_mps, split_svd

#: local problems up to this dimension are diagonalized densely
DENSE_LIMIT = 256
HERMITICITY_TOL = 1e-8


class DmrgError(RuntimeError):
    """Internal consistency failure (e.g. a non-Hermitian effective Hamiltonian)."""


@dataclass
class GroundStateResult:
    state: Mps
    energy: float
    sweep_energies: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def sweeps(self) -> int:
        return len(self.sweep_energies)


def _grow_left(env: np.ndarray, core: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``env[a, w, a']`` absorbing one site: bra ``conj(core)``, operator, ket ``core``."""
    t = np.tensordot(env, core, axes=(2, 0))  # a w i b'
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # a b' o w'
    return np.tensordot(core.conj(), t, axes=([0, 1], [0, 2])).transpose(0, 2, 1)  # b w' b'


def _grow_right(env: np.ndarray, core: np.ndarray, w: np.ndarray) -> np.ndarray:
    t = np.tensordot(core, env, axes=(2, 2))  # a' i b w'
    t = np.tensordot(w, t, axes=([2, 3], [1, 3]))  # w o a' b
    return np.tensordot(core.conj(), t, axes=([1, 2], [1, 3])).transpose(0, 1, 2)  # a w a'


def _two_site_matvec(left, w1, w2, right, shape):
    def apply(v: np.ndarray) -> np.ndarray:
        x = v.reshape(shape)  # a' i1 i2 b'
        t = np.tensordot(left, x, axes=(2, 0))  # a w i1 i2 b'
        t = np.tensordot(t, w1, axes=([1, 2], [0, 2]))  # a i2 b' o1 w1
        t = np.tensordot(t, w2, axes=([4, 1], [0, 2]))  # a b' o1 o2 w2
        t = np.tensordot(t, right, axes=([1, 4], [2, 1]))  # a o1 o2 b
        return t.reshape(-1)

    return apply


def _check_hermitian(apply, dim: int, rng: np.random.Generator) -> None:
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    y = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    hx, hy = apply(x), apply(y)
    lhs, rhs = np.vdot(y, hx), np.vdot(hy, x)
    scale = max(np.linalg.norm(hx) * np.linalg.norm(y), 1e-300)
    if abs(lhs - rhs) > HERMITICITY_TOL * scale:
        raise DmrgError(f"effective Hamiltonian is not Hermitian (mismatch {abs(lhs - rhs):.3e})")


def lowest_eigenpair(apply, v0: np.ndarray, tol: float = 1e-9, maxiter: int = 50) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of the Hermitian map ``apply``.

    Implicitly restarted Lanczos (ARPACK) with at most ``maxiter`` restarts;
    problems of dimension up to ``DENSE_LIMIT`` are diagonalized densely.
    """
    dim = v0.size
    if dim <= DENSE_LIMIT:
        h = np.column_stack([apply(e) for e in np.eye(dim, dtype=complex)])
        vals, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
        return float(vals[0]), vecs[:, 0]
    op = LinearOperator((dim, dim), matvec=apply, dtype=complex)
    ncv = min(dim - 1, 20)
    try:
        vals, vecs = eigsh(op, k=1, which="SA", v0=v0, tol=tol, ncv=ncv, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        if exc.eigenvalues.size == 0:
            raise DmrgError("local eigensolver did not converge") from exc
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    return float(vals[0]), vecs[:, 0]


def mpo_expectation(state: Mps, h: Mpo) -> float:
    """``<psi|H|psi> / <psi|psi>``."""
    env = np.ones((1, 1, 1), dtype=complex)
    for c, w in zip(state.cores, h.cores):
        env = _grow_left(env, c.astype(complex), w)
    return float(np.real(env[0, 0, 0])) / norm_squared(state)


def mpo_variance(state: Mps, h: Mpo) -> float:
    """``<H^2> - <H>^2`` for the normalized state, via a double-layer contraction."""
    env = np.ones((1, 1, 1, 1), dtype=complex)  # bra, w_top, w_bottom, ket
    for c, w in zip(state.cores, h.cores):
        c = c.astype(complex)
        t = np.tensordot(env, c, axes=(3, 0))  # a u v i b'
        t = np.tensordot(t, w, axes=([2, 3], [0, 2]))  # a u b' m v'
        t = np.tensordot(t, w, axes=([1, 3], [0, 2]))  # a b' v' o u'
        env = np.tensordot(c.conj(), t, axes=([0, 1], [0, 3]))  # b b' v' u'
        env = env.transpose(0, 3, 2, 1)
    z = norm_squared(state)
    h2 = float(np.real(env[0, 0, 0, 0])) / z
    e = mpo_expectation(state, h)
    return h2 - e * e


def dmrg_ground_state(
    h: Mpo,
    r_max: int,
    sweeps: int = 20,
    tol: float = 1e-9,
    rng_seed=None,
    init: Mps | None = None,
) -> GroundStateResult:
    """Alternating two-site sweeps until the energy changes by less than ``tol`` (relative).

    Each sweep goes left to right and back. The local ground state of the
    effective Hamiltonian is split by SVD keeping at most ``r_max`` values.
    """
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    n = h.n
    rng = np.random.default_rng(rng_seed)
    if init is None:
        init = random_mps(n, r_max, d=h.cores[0].shape[1], complex_=True, rng=rng, scale=1.0)
    cores = list(canonicalize(init.astype(complex), 0).cores)
    cores[0] = cores[0] / np.linalg.norm(cores[0])
    ws = h.cores
    left = [None] * n
    right = [None] * n
    left[0] = np.ones((1, 1, 1), dtype=complex)
    right[n - 1] = np.ones((1, 1, 1), dtype=complex)
    for k in range(n - 1, 0, -1):
        right[k - 1] = _grow_right(right[k], cores[k], ws[k])

    checked = False
    energies: list[float] = []
    converged = False

    def solve(i: int) -> np.ndarray:
        nonlocal checked
        a, d1, _ = cores[i].shape
        _, d2, b = cores[i + 1].shape
        shape = (a, d1, d2, b)
        apply = _two_site_matvec(left[i], ws[i], ws[i + 1], right[i + 1], shape)
        dim = a * d1 * d2 * b
        if not checked:
            _check_hermitian(apply, dim, rng)
            checked = True
        v0 = np.tensordot(cores[i], cores[i + 1], axes=(2, 0)).reshape(-1)
        if not np.any(v0):
            v0 = rng.standard_normal(dim) + 0j
        _, vec = lowest_eigenpair(apply, v0 / np.linalg.norm(v0), tol=min(tol, 1e-9))
        return vec.reshape(a * d1, d2 * b)

    for _ in range(sweeps):
        for i in range(n - 1):
            theta = solve(i)
            a, d1 = cores[i].shape[:2]
            d2, b = cores[i + 1].shape[1:]
            u, s, vh, _ = split_svd(theta, r_max)
            s = s / np.linalg.norm(s)
            cores[i] = u.reshape(a, d1, -1)
            cores[i + 1] = (s[:, None] * vh).reshape(-1, d2, b)
            left[i + 1] = _grow_left(left[i], cores[i], ws[i])
        for i in range(n - 2, -1, -1):
            theta = solve(i)
            a, d1 = cores[i].shape[:2]
            d2, b = cores[i + 1].shape[1:]
            u, s, vh, _ = split_svd(theta, r_max)
            s = s / np.linalg.norm(s)
            cores[i] = (u * s).reshape(a, d1, -1)
            cores[i + 1] = vh.reshape(-1, d2, b)
            right[i] = _grow_right(right[i + 1], cores[i + 1], ws[i + 1])
        state = Mps([c.copy() for c in cores], center=0)
        energies.append(mpo_expectation(state, h))
        if len(energies) > 1 and abs(energies[-1] - energies[-2]) < tol * max(1.0, abs(energies[-1])):
            converged = True
            break
    state = Mps([c.copy() for c in cores], center=0)
    return GroundStateResult(state, mpo_expectation(state, h), energies, converged)
