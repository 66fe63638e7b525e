"""Ground-truth models: 1D Ising distributions and spin-chain Hamiltonians as MPOs.

Spins are ``-1/+1``; as MPS physical indices they map ``-1 -> 0`` and ``+1 -> 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .mps import Mps, all_configurations, normalized


def spins_to_bits(spins: np.ndarray) -> np.ndarray:
    return ((np.asarray(spins) + 1) // 2).astype(np.int64)


def bits_to_spins(bits: np.ndarray) -> np.ndarray:
    return (2 * np.asarray(bits) - 1).astype(np.int64)


@dataclass(frozen=True)
class IsingModel:
    """``p(x) ∝ exp(-beta * sum_{(i,j) in edges} x_i x_j)`` on a cycle or a path."""

    n: int
    beta: float = 1.0
    topology: Literal["cycle", "path"] = "cycle"

    def __post_init__(self) -> None:
        if self.topology not in ("cycle", "path"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.topology == "cycle" and self.n < 3:
            raise ValueError("cycle topology needs n >= 3")
        if self.n < 2:
            raise ValueError("need n >= 2")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")

    def edges(self) -> list[tuple[int, int]]:
        e = [(i, i + 1) for i in range(self.n - 1)]
        if self.topology == "cycle":
            e.append((self.n - 1, 0))
        return e

    def causal(self, beta: float = 1.0) -> "IsingModel":
        """The same chain with the closing edge removed."""
        return IsingModel(self.n, beta, "path")

    def transfer(self) -> np.ndarray:
        """Bond weight ``T[a, b] = exp(-beta s_a s_b)`` on bit indices."""
        s = np.array([-1.0, 1.0])
        return np.exp(-self.beta * np.outer(s, s))


def ising_log_unnormalized(model: IsingModel, x: np.ndarray) -> np.ndarray | float:
    """``-beta * sum_edges x_i x_j`` for one spin configuration or a batch (rows)."""
    x = np.asarray(x)
    if x.shape[-1] != model.n:
        raise ValueError("configuration length does not match the model")
    total = np.sum(x[..., :-1] * x[..., 1:], axis=-1).astype(float)
    if model.topology == "cycle":
        total = total + x[..., -1] * x[..., 0]
    out = -model.beta * total
    return float(out) if np.ndim(out) == 0 else out


def _scaled_power(t: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """``T^k = m * exp(log_scale)`` with ``m`` kept at unit max-norm."""
    m = np.eye(t.shape[0])
    log_scale = 0.0
    for _ in range(k):
        m = m @ t
        s = np.max(np.abs(m))
        m /= s
        log_scale += np.log(s)
    return m, log_scale


def ising_log_partition(model: IsingModel) -> float:
    """``log Z`` by transfer matrices."""
    t = model.transfer()
    if model.topology == "cycle":
        m, ls = _scaled_power(t, model.n)
        return float(np.log(np.trace(m)) + ls)
    m, ls = _scaled_power(t, model.n - 1)
    return float(np.log(np.sum(m)) + ls)


def ising_log_prob(model: IsingModel, spins: np.ndarray) -> np.ndarray | float:
    return ising_log_unnormalized(model, spins) - ising_log_partition(model)


def ising_exact_sampler(model: IsingModel, count: int, rng_seed=None) -> np.ndarray:
    """Exact i.i.d. samples (rows of ``-1/+1``) by sequential conditional sampling.

    For the cycle, ``x_1`` is drawn from its marginal ``(T^n)_{aa}``; then each
    ``x_k`` given the prefix has weight ``T(x_{k-1}, x_k) (T^{n-k+1})(x_k, x_1)``,
    the second factor closing the loop back to ``x_1``.
    """
    rng = np.random.default_rng(rng_seed)
    n = model.n
    t = model.transfer()
    powers = [np.eye(2)]
    for _ in range(n):
        p = powers[-1] @ t
        powers.append(p / np.max(p))
    bits = np.empty((count, n), dtype=np.int64)
    u = rng.random((count, n))
    if model.topology == "cycle":
        w0 = np.diag(powers[n])
    else:
        w0 = powers[n - 1] @ np.ones(2)
    p1 = w0[1] / w0.sum()
    bits[:, 0] = (u[:, 0] < p1).astype(np.int64)
    first = bits[:, 0]
    for k in range(1, n):
        prev = bits[:, k - 1]
        if model.topology == "cycle":
            # n - k edges remain between x_k and x_1 going forward around the cycle
            close = powers[n - k]
            w = t[prev, :] * close[:, first].T
        else:
            tail = powers[n - 1 - k] @ np.ones(2)
            w = t[prev, :] * tail[None, :]
        p = w[:, 1] / w.sum(axis=1)
        bits[:, k] = (u[:, k] < p).astype(np.int64)
    return bits_to_spins(bits)


def ising_to_bm(model: IsingModel) -> Mps:
    """Real Born-machine MPS with ``|q|^2 / Z`` equal to the Ising distribution.

    Each edge contributes ``sqrt(T)``; the path needs bond dimension 2 (the
    current spin). The cycle additionally carries the first spin along the
    chain to close the loop at the last site, so bonds index ``(x_1, x_k)``
    and have dimension 4. The returned state has unit norm.
    """
    n = model.n
    m = np.exp(-0.5 * model.beta * np.outer([-1.0, 1.0], [-1.0, 1.0]))
    cores = []
    if model.topology == "path":
        c = np.zeros((1, 2, 2))
        c[0, 0, 0] = c[0, 1, 1] = 1.0
        cores.append(c)
        for _ in range(1, n - 1):
            c = np.zeros((2, 2, 2))
            for a in range(2):
                for x in range(2):
                    c[a, x, x] = m[a, x]
            cores.append(c)
        cores.append(m.reshape(2, 2, 1).copy())
    else:
        c = np.zeros((1, 2, 4))
        for x in range(2):
            c[0, x, 2 * x + x] = 1.0
        cores.append(c)
        for _ in range(1, n - 1):
            c = np.zeros((4, 2, 4))
            for a in range(2):
                for b in range(2):
                    for x in range(2):
                        c[2 * a + b, x, 2 * a + x] = m[b, x]
            cores.append(c)
        c = np.zeros((4, 2, 1))
        for a in range(2):
            for b in range(2):
                for x in range(2):
                    c[2 * a + b, x, 0] = m[b, x] * m[x, a]
        cores.append(c)
    return normalized(Mps(cores))


def optimal_nll(model: IsingModel, spins: np.ndarray) -> float:
    """Empirical NLL of the exact model on a dataset of spin rows."""
    return float(-np.mean(ising_log_prob(model, np.atleast_2d(spins))))


def ising_distribution(model: IsingModel) -> np.ndarray:
    """Dense probability vector over bit configurations in lexicographic order."""
    spins = bits_to_spins(all_configurations(model.n))
    return np.exp(ising_log_prob(model, spins))


def ising_pair_marginal(model: IsingModel) -> np.ndarray:
    """Exact 2x2 joint table of ``(x_1, x_n)`` over bit indices."""
    t = model.transfer()
    m, _ = _scaled_power(t, model.n - 1)
    if model.topology == "cycle":
        m = m * t.T
    return m / m.sum()


# ---------------------------------------------------------------------------
# Hamiltonians

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass
class Mpo:
    """Matrix product operator; core ``k`` has legs ``(w_{k-1}, out, in, w_k)``."""

    cores: list[np.ndarray]

    def __post_init__(self) -> None:
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ValueError("boundary MPO bonds must have dimension 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[3] != self.cores[k + 1].shape[0]:
                raise ValueError(f"MPO bond mismatch after site {k}")

    @property
    def n(self) -> int:
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [1] + [c.shape[3] for c in self.cores]

    def to_dense(self) -> np.ndarray:
        """Dense ``2^n x 2^n`` matrix; site 0 is the most significant tensor factor."""
        out = self.cores[0][0]  # (o, i, w)
        for c in self.cores[1:]:
            # out (O, I, w) x c (w, o, i, w') -> (O o, I i, w')
            tmp = np.tensordot(out, c, axes=(2, 0))  # (O, I, o, i, w')
            o_dim, i_dim = tmp.shape[0] * tmp.shape[2], tmp.shape[1] * tmp.shape[3]
            out = tmp.transpose(0, 2, 1, 3, 4).reshape(o_dim, i_dim, -1)
        return out[:, :, 0]


def _mpo_from_terms(n: int, w: int, bulk, first_row: int, last_col: int) -> Mpo:
    """Build an MPO from a bulk operator-valued matrix ``bulk(k)`` of shape (w, w, 2, 2)."""
    cores = []
    for k in range(n):
        b = bulk(k)  # (w, w, 2, 2)
        c = b.transpose(0, 2, 3, 1)
        if k == 0:
            c = c[first_row : first_row + 1]
        if k == n - 1:
            c = c[..., last_col : last_col + 1]
        cores.append(np.ascontiguousarray(c))
    return Mpo(cores)


def tfim_mpo(n: int, J: float = 1.0, h: float = 1.0, periodic: bool = True) -> Mpo:
    """``H = -J sum_{edges} Z_i Z_j - h sum_i X_i``.

    Lower-triangular finite-state automaton: channel 0 = "done", last channel =
    "not started", channel 1 carries a ``Z`` to its right neighbour. The periodic
    closing term uses one extra channel that carries ``Z_1`` through the chain.
    """
    if n < 3 and periodic:
        raise ValueError("periodic chain needs n >= 3")
    I, X, Z = PAULI["I"], PAULI["X"], PAULI["Z"]
    w = 4 if periodic else 3
    start = w - 1

    def bulk(k):
        b = np.zeros((w, w, 2, 2), dtype=complex)
        b[0, 0] = I
        b[start, start] = I
        b[1, 0] = Z
        b[start, 1] = -J * Z
        b[start, 0] = -h * X
        if periodic:
            # channel 2 carries Z from site 0 to site n-1
            if k == 0:
                b[start, 2] = Z
            b[2, 2] = I
            if k == n - 1:
                b[2, 0] = -J * Z
        return b

    return _mpo_from_terms(n, w, bulk, first_row=start, last_col=0)


def heisenberg_mpo(n: int, periodic: bool = True, J: float = 1.0) -> Mpo:
    """``H = J sum_{edges} (X_i X_j + Y_i Y_j + Z_i Z_j)``; open bond 5, periodic 8."""
    if n < 3 and periodic:
        raise ValueError("periodic chain needs n >= 3")
    I = PAULI["I"]
    ops = [PAULI["X"], PAULI["Y"], PAULI["Z"]]
    w = 8 if periodic else 5
    start = w - 1

    def bulk(k):
        b = np.zeros((w, w, 2, 2), dtype=complex)
        b[0, 0] = I
        b[start, start] = I
        for a, op in enumerate(ops):
            b[1 + a, 0] = op
            b[start, 1 + a] = J * op
        if periodic:
            for a, op in enumerate(ops):
                ch = 4 + a
                b[ch, ch] = I
                if k == 0:
                    b[start, ch] = op
                if k == n - 1:
                    b[ch, 0] = J * op
        return b

    return _mpo_from_terms(n, w, bulk, first_row=start, last_col=0)


def kron_chain(ops: list[np.ndarray]) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def save_spin_dataset(spins: np.ndarray, path: str | Path) -> None:
    """``n=<int> kind=spin`` header, then one row of ``-1/+1`` per sample."""
    spins = np.atleast_2d(np.asarray(spins, dtype=np.int64))
    lines = [f"n={spins.shape[1]} kind=spin"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in spins)
    Path(path).write_text("\n".join(lines) + "\n")


def load_spin_dataset(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].split())
    if meta.get("kind") != "spin":
        raise ValueError(f"{path}: not a spin dataset")
    n = int(meta["n"])
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if not rows:
        return np.zeros((0, n), dtype=np.int64)
    arr = np.array(rows, dtype=np.int64)
    if arr.shape[1] != n or not np.all(np.abs(arr) == 1):
        raise ValueError(f"{path}: malformed spin rows")
    return arr
