"""Random Pauli measurements of MPS states and tomography datasets.

Convention: measuring site ``i`` in basis ``P`` applies the unitary whose rows are
``(<+p|, <-p|)`` and then reads the computational basis, so outcome bit 0 means the
+1 eigenstate. The Y rows are ``(1, -i)/sqrt2`` and ``(1, i)/sqrt2``; every first
column is real nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mps import Mps, MpsError, canonicalize, norm_squared

BASES = "XYZ"

_S2 = 1 / np.sqrt(2)
BASIS_UNITARIES = np.array(
    [
        [[_S2, _S2], [_S2, -_S2]],  # X
        [[_S2, -1j * _S2], [_S2, 1j * _S2]],  # Y
        [[1, 0], [0, 1]],  # Z
    ],
    dtype=complex,
)

#: measurement covectors indexed by ``2 * basis + outcome``
MEASUREMENT_VECTORS = BASIS_UNITARIES.reshape(6, 2)


def setting_to_indices(setting: str | np.ndarray) -> np.ndarray:
    if isinstance(setting, str):
        try:
            return np.array([BASES.index(ch) for ch in setting.upper()], dtype=np.int64)
        except ValueError:
            raise ValueError(f"invalid Pauli setting {setting!r}") from None
    arr = np.asarray(setting, dtype=np.int64)
    if np.any((arr < 0) | (arr > 2)):
        raise ValueError("basis indices must be 0 (X), 1 (Y) or 2 (Z)")
    return arr


def indices_to_setting(idx: np.ndarray) -> str:
    return "".join(BASES[i] for i in idx)


def random_setting(n: int, rng: np.random.Generator) -> str:
    """Uniform i.i.d. choice of X, Y or Z on each of ``n`` sites."""
    if n < 1:
        raise ValueError("n must be positive")
    return indices_to_setting(rng.integers(0, 3, size=n))


def rotate(state: Mps, setting: str | np.ndarray) -> Mps:
    """Apply the local basis-change unitaries of ``setting`` site by site."""
    idx = setting_to_indices(setting)
    if len(idx) != state.n:
        raise ValueError("setting length does not match the state")
    cores = [np.einsum("ox,axb->aob", BASIS_UNITARIES[b], c) for b, c in zip(idx, state.cores)]
    return Mps(cores)


def _sequential_sample(cores_by_record, count: int, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw bits site by site from a right-canonical state.

    ``cores_by_record(k)`` yields ``(mask, core)`` pairs covering all records at site ``k``.
    """
    u = rng.random((count, n))
    bits = np.empty((count, n), dtype=np.int64)
    v = np.ones((count, 1), dtype=complex)
    for k in range(n):
        nxt = None
        for mask, core in cores_by_record(k):
            w = np.einsum("na,aoc->noc", v[mask], core)
            if nxt is None:
                nxt = np.empty((count, core.shape[2]), dtype=complex)
            p = np.sum(np.abs(w) ** 2, axis=2)
            p /= p.sum(axis=1, keepdims=True)
            cum = np.cumsum(p, axis=1)
            b = np.minimum((u[mask, k, None] >= cum).sum(axis=1), core.shape[1] - 1)
            bits[mask, k] = b
            chosen = w[np.arange(w.shape[0]), b]
            chosen /= np.linalg.norm(chosen, axis=1, keepdims=True)
            nxt[mask] = chosen
        v = nxt
    return bits


def sample_computational_basis(state: Mps, count: int, rng: np.random.Generator) -> np.ndarray:
    """Exact i.i.d. bitstrings from ``|<b|psi>|^2`` (rows of 0/1)."""
    z = norm_squared(state)
    if not z > 0:
        raise MpsError("cannot sample from a zero state")
    cores = canonicalize(state, 0).cores
    everyone = np.arange(count)
    return _sequential_sample(lambda k: [(everyone, cores[k])], count, rng, state.n)


@dataclass
class QstDataset:
    """Measurement records ``(outcome bits, Pauli setting)``; bases are 0=X, 1=Y, 2=Z."""

    bits: np.ndarray
    bases: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.int64).reshape(-1, np.shape(self.bits)[-1])
        self.bases = np.asarray(self.bases, dtype=np.int64).reshape(self.bits.shape)

    @property
    def n(self) -> int:
        return self.bits.shape[1]

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    def symbols(self) -> np.ndarray:
        """Per-site index into :data:`MEASUREMENT_VECTORS`."""
        return 2 * self.bases + self.bits

    def records(self) -> list[tuple[str, str]]:
        return [
            ("".join(str(b) for b in row), indices_to_setting(bs))
            for row, bs in zip(self.bits, self.bases)
        ]


def generate_qst_dataset(state: Mps, B: int, rng_seed=None) -> QstDataset:
    """``B`` records: per record a uniform random setting, then one exact outcome."""
    rng = np.random.default_rng(rng_seed)
    n = state.n
    bases = rng.integers(0, 3, size=(B, n))
    if B == 0:
        return QstDataset(np.zeros((0, n), dtype=np.int64), bases)
    z = norm_squared(state)
    if not z > 0:
        raise MpsError("cannot sample from a zero state")
    cores = canonicalize(state, 0).cores
    # local unitaries preserve right-orthogonality, so rotated cores stay canonical
    rotated = [
        [np.einsum("ox,axb->aob", BASIS_UNITARIES[b], c) for b in range(3)] for c in cores
    ]

    def by_basis(k):
        out = []
        for b in range(3):
            mask = np.nonzero(bases[:, k] == b)[0]
            if mask.size:
                out.append((mask, rotated[k][b]))
        return out

    bits = _sequential_sample(by_basis, B, rng, n)
    return QstDataset(bits, bases)


def save_qst_dataset(data: QstDataset, path: str | Path) -> None:
    """``n=<int> kind=qst`` header, then ``<bitstring> <basisstring>`` per record."""
    lines = [f"n={data.n} kind=qst"]
    lines.extend(f"{b} {s}" for b, s in data.records())
    Path(path).write_text("\n".join(lines) + "\n")


def load_qst_dataset(path: str | Path) -> QstDataset:
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].split())
    if meta.get("kind") != "qst":
        raise ValueError(f"{path}: not a tomography dataset")
    n = int(meta["n"])
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if any(len(r) != 2 or len(r[0]) != n or len(r[1]) != n for r in rows):
        raise ValueError(f"{path}: malformed record")
    bits = np.array([[int(ch) for ch in r[0]] for r in rows], dtype=np.int64).reshape(-1, n)
    bases = np.array([setting_to_indices(r[1]) for r in rows], dtype=np.int64).reshape(-1, n)
    return QstDataset(bits, bases)
