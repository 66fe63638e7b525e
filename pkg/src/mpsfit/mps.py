"""Matrix product states over real or complex scalars.

Every core is stored as a 3-way array with legs ``(left bond, physical, right bond)``;
the boundary cores carry explicit dummy bonds of size 1. Sites are indexed from 0.

All functions in this module treat an :class:`Mps` as a value: they return new
instances and never modify their arguments in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: singular values below this fraction of the largest one are treated as zero
SVD_RELATIVE_CUTOFF = 1e-14


class MpsError(ValueError):
    """Invalid MPS shapes or arguments."""


@dataclass
class Mps:
    """A finite, open-boundary matrix product state.

    Attributes
    ----------
    cores : list of ndarray
        Core ``k`` has shape ``(r_{k-1}, d_k, r_k)`` with ``r_0 = r_n = 1``.
    center : int or None
        Orthogonality center if the cores are known to be in mixed canonical
        form around it, else ``None``. Informational; never trusted blindly by
        the algorithms that need a canonical form.
    """

    cores: list[np.ndarray]
    center: int | None = field(default=None)

    def __post_init__(self) -> None:
        self.cores = [np.asarray(c) for c in self.cores]
        if len(self.cores) < 2:
            raise MpsError("an MPS needs at least two sites")
        dtype = np.result_type(*self.cores)
        if not (np.issubdtype(dtype, np.floating) or np.issubdtype(dtype, np.complexfloating)):
            dtype = np.dtype(float)
        self.cores = [c.astype(dtype, copy=False) for c in self.cores]
        for k, c in enumerate(self.cores):
            if c.ndim != 3:
                raise MpsError(f"core {k} has {c.ndim} legs, expected 3")
            if c.shape[1] < 2:
                raise MpsError(f"core {k} has physical dimension {c.shape[1]} < 2")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise MpsError("boundary bonds must have dimension 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise MpsError(
                    f"bond mismatch between sites {k} and {k + 1}: "
                    f"{self.cores[k].shape[2]} != {self.cores[k + 1].shape[0]}"
                )

    @property
    def n(self) -> int:
        return len(self.cores)

    @property
    def phys_dims(self) -> list[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def ranks(self) -> list[int]:
        """Bond dimensions ``[r_0, r_1, ..., r_n]`` including the dummy boundary bonds."""
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def r_max(self) -> int:
        return max(self.ranks)

    @property
    def dtype(self) -> np.dtype:
        return self.cores[0].dtype

    @property
    def is_complex(self) -> bool:
        return np.issubdtype(self.dtype, np.complexfloating)

    def copy(self) -> "Mps":
        return Mps([c.copy() for c in self.cores], center=self.center)

    def astype(self, dtype) -> "Mps":
        return Mps([c.astype(dtype) for c in self.cores], center=self.center)

    def num_parameters(self) -> int:
        return sum(c.size for c in self.cores)

    def to_dense(self) -> np.ndarray:
        """Full tensor of shape ``phys_dims``. Only for small ``n``."""
        out = self.cores[0].reshape(self.cores[0].shape[1], -1)
        for c in self.cores[1:]:
            out = out @ c.reshape(c.shape[0], -1)
            out = out.reshape(-1, c.shape[2])
        return out.reshape(self.phys_dims)


def product_state(vectors: Sequence[np.ndarray]) -> Mps:
    """Rank-1 MPS whose site ``k`` carries the local vector ``vectors[k]``."""
    return Mps([np.asarray(v).reshape(1, -1, 1) for v in vectors])


def _cap_ranks(n: int, r: int, phys_dims: Sequence[int]) -> list[int]:
    ranks = [1]
    for k in range(1, n):
        left = int(np.prod(phys_dims[:k], dtype=float)) if k < 60 else r
        right = int(np.prod(phys_dims[k:], dtype=float)) if n - k < 60 else r
        ranks.append(int(min(r, left, right)))
    ranks.append(1)
    return ranks


def random_mps(
    n: int,
    r: int,
    d: int = 2,
    *,
    complex_: bool = False,
    rng: np.random.Generator | int | None = None,
    scale: float | None = None,
    normalize: bool = True,
    dist: str = "normal",
) -> Mps:
    """Random MPS with i.i.d. entries.

    Bond dimensions are ``min(r, d**k, d**(n-k))``. ``dist="normal"`` draws
    standard normal entries times ``scale`` (default ``r**-0.5``);
    ``dist="uniform"`` draws from ``[0, scale)`` (default ``scale=1``). Complex
    states get independent real and imaginary parts. With ``normalize`` the
    cores are then rescaled evenly so that ``norm_squared == 1``.
    """
    rng = np.random.default_rng(rng)
    if dist not in ("normal", "uniform"):
        raise MpsError(f"unknown entry distribution {dist!r}")
    ranks = _cap_ranks(n, r, [d] * n)
    if scale is None:
        scale = r ** -0.5 if dist == "normal" else 1.0
    draw = rng.standard_normal if dist == "normal" else rng.random
    cores = []
    for k in range(n):
        shape = (ranks[k], d, ranks[k + 1])
        c = draw(shape)
        if complex_:
            c = (c + 1j * draw(shape)) / np.sqrt(2)
        cores.append(scale * c)
    mps = Mps(cores)
    if normalize:
        mps = normalized(mps)
    return mps


def _check_config(mps: Mps, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != mps.n:
        raise MpsError(f"configuration length {x.shape[-1]} does not match n={mps.n}")
    if not np.issubdtype(x.dtype, np.integer):
        raise MpsError("configurations must be integer arrays")
    dims = np.asarray(mps.phys_dims)
    if np.any(x < 0) or np.any(x >= dims):
        raise MpsError("configuration index out of range")
    return x


def evaluate(mps: Mps, x: Sequence[int]) -> complex | float:
    """Entry ``q(x)`` as a chain of matrix products."""
    x = _check_config(mps, np.asarray(x))
    if x.ndim != 1:
        raise MpsError("evaluate takes a single configuration; use evaluate_batch")
    v = mps.cores[0][:, x[0], :]
    for c, xk in zip(mps.cores[1:], x[1:]):
        v = v @ c[:, xk, :]
    return v[0, 0].item()


def evaluate_batch(mps: Mps, xs: np.ndarray) -> np.ndarray:
    """Entries ``q(x)`` for each row of the integer array ``xs``."""
    xs = _check_config(mps, np.atleast_2d(np.asarray(xs)))
    v = mps.cores[0][0, xs[:, 0], :]
    for k in range(1, mps.n):
        c = mps.cores[k]
        out = np.empty((xs.shape[0], c.shape[2]), dtype=np.result_type(v, c))
        for s in range(c.shape[1]):
            mask = xs[:, k] == s
            out[mask] = v[mask] @ c[:, s, :]
        v = out
    return v[:, 0]


def inner_product(a: Mps, b: Mps) -> complex | float:
    """``<a, b> = sum_z conj(a(z)) b(z)`` by transfer-matrix contraction."""
    if a.n != b.n or a.phys_dims != b.phys_dims:
        raise MpsError("inner product of MPS with different shapes")
    env = np.ones((1, 1), dtype=np.result_type(a.dtype, b.dtype))
    for ca, cb in zip(a.cores, b.cores):
        # env[a', b'] = sum conj(ca[a, x, a']) env[a, b] cb[b, x, b']
        tmp = np.tensordot(env, cb, axes=(1, 0))
        env = np.tensordot(ca.conj(), tmp, axes=([0, 1], [0, 1]))
    val = env[0, 0]
    return val.item() if np.iscomplexobj(val) else float(val)


def norm_squared(mps: Mps) -> float:
    """``Z = sum_z |q(z)|^2`` by transfer-matrix contraction."""
    return float(np.real(inner_product(mps, mps)))


def scaled(mps: Mps, c: float | complex, site: int | None = None) -> Mps:
    """Multiply the state by ``c``; the factor lands on ``site`` (default: spread evenly)."""
    cores = [x.copy() for x in mps.cores]
    if site is None:
        if not np.isreal(c) or c < 0:
            cores[0] = cores[0] * c
        else:
            f = float(c) ** (1.0 / mps.n)
            cores = [x * f for x in cores]
    else:
        cores[site] = cores[site] * c
    return Mps(cores, center=mps.center)


def normalized(mps: Mps) -> Mps:
    """Rescale to unit norm. The factor goes on the center if known, else evenly."""
    z = norm_squared(mps)
    if not z > 0:
        raise MpsError("cannot normalize a zero state")
    if mps.center is not None:
        return scaled(mps, z ** -0.5, site=mps.center)
    return scaled(mps, z ** -0.5)


# ---------------------------------------------------------------------------
# gauge moves


def qr_positive(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the diagonal of ``R`` made real nonnegative."""
    q, r = np.linalg.qr(m)
    diag = np.diagonal(r)
    phase = np.ones_like(diag)
    nz = np.abs(diag) > 0
    phase[nz] = diag[nz] / np.abs(diag[nz])
    q = q * phase[None, :]
    r = phase.conj()[:, None] * r
    return q, r


def _left_orthogonalize(core: np.ndarray, nxt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rl, d, rr = core.shape
    q, r = qr_positive(core.reshape(rl * d, rr))
    new = q.reshape(rl, d, q.shape[1])
    return new, np.tensordot(r, nxt, axes=(1, 0))


def _right_orthogonalize(core: np.ndarray, prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rl, d, rr = core.shape
    q, r = qr_positive(core.reshape(rl, d * rr).T)
    # core = r^T q^T with q^T having orthonormal rows
    new = q.T.reshape(q.shape[1], d, rr)
    return new, np.tensordot(prev, r.T, axes=(2, 0))


def canonicalize(mps: Mps, center: int) -> Mps:
    """Gauge-equivalent MPS in mixed canonical form around ``center``.

    Cores left of the center become left-orthogonal, cores right of it
    right-orthogonal. Bonds larger than the local maximal rank shrink.
    """
    n = mps.n
    if not 0 <= center < n:
        raise MpsError(f"center {center} out of range for n={n}")
    cores = [c.copy() for c in mps.cores]
    for k in range(center):
        cores[k], cores[k + 1] = _left_orthogonalize(cores[k], cores[k + 1])
    for k in range(n - 1, center, -1):
        cores[k], cores[k - 1] = _right_orthogonalize(cores[k], cores[k - 1])
    return Mps(cores, center=center)


def shift_center(mps: Mps, frm: int, to: int) -> Mps:
    """Move the orthogonality center one site, from ``frm`` to ``to``."""
    if abs(to - frm) != 1:
        raise MpsError("shift_center moves by exactly one site")
    if not (0 <= frm < mps.n and 0 <= to < mps.n):
        raise MpsError("site out of range")
    cores = list(mps.cores)
    if to > frm:
        cores[frm], cores[to] = _left_orthogonalize(cores[frm], cores[to])
    else:
        cores[frm], cores[to] = _right_orthogonalize(cores[frm], cores[to])
    return Mps(cores, center=to)


def is_canonical(mps: Mps, center: int, tol: float = 1e-10) -> bool:
    """Explicit orthonormality check of every unfolding around ``center``."""
    for k, c in enumerate(mps.cores):
        rl, d, rr = c.shape
        if k < center:
            m = c.reshape(rl * d, rr)
            if not np.allclose(m.conj().T @ m, np.eye(rr), atol=tol, rtol=0):
                return False
        elif k > center:
            m = c.reshape(rl, d * rr)
            if not np.allclose(m @ m.conj().T, np.eye(rl), atol=tol, rtol=0):
                return False
    return True


# ---------------------------------------------------------------------------
# rank reduction


def split_svd(
    theta: np.ndarray, r_max: int | None = None, cutoff: float = SVD_RELATIVE_CUTOFF
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Truncated SVD of a matrix.

    Returns ``(u, s, vh, discarded)`` where ``discarded`` is the sum of squared
    dropped singular values. At least one singular value is always kept.
    """
    try:
        u, s, vh = np.linalg.svd(theta, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vh = np.linalg.svd(theta + 1e-300, full_matrices=False, hermitian=False)
    keep = int(np.count_nonzero(s > cutoff * s[0])) if s[0] > 0 else 1
    keep = max(1, keep)
    if r_max is not None:
        keep = min(keep, r_max)
    discarded = float(np.sum(s[keep:] ** 2))
    return u[:, :keep], s[:keep], vh[:keep], discarded


def truncate(mps: Mps, r_max: int) -> tuple[Mps, float]:
    """Sequential-SVD rank reduction (TT rounding).

    The state is right-canonicalized and swept left to right, truncating each
    bond to at most ``r_max``. Returns the truncated MPS (canonical at the last
    site) and the Frobenius error ``sqrt(sum of discarded sigma^2)``, which for
    this scheme equals the actual error ``||q - q_trunc||_F``.
    """
    if r_max < 1:
        raise MpsError("r_max must be at least 1")
    cores = canonicalize(mps, 0).cores
    err2 = 0.0
    for k in range(mps.n - 1):
        rl, d, rr = cores[k].shape
        u, s, vh, disc = split_svd(cores[k].reshape(rl * d, rr), r_max)
        err2 += disc
        cores[k] = u.reshape(rl, d, -1)
        cores[k + 1] = np.tensordot(s[:, None] * vh, cores[k + 1], axes=(1, 0))
    return Mps(cores, center=mps.n - 1), float(np.sqrt(err2))


@dataclass
class AlsResult:
    mps: Mps
    objective: list[float]
    sweeps: int

    @property
    def error(self) -> float:
        """Final ``||q_fit - q_target||_F``."""
        return float(np.sqrt(max(self.objective[-1], 0.0)))


def als_fit(
    target: Mps,
    r: int,
    sweeps: int = 10,
    tol: float = 1e-10,
    init: Mps | None = None,
) -> AlsResult:
    """Fit a rank-``r`` MPS to ``target`` in Frobenius norm by alternating least squares.

    Each core solve is exact: with the fit held in mixed canonical form, the
    normal equations for the center core have identity Gram matrix, so the
    optimal core is the environment-projected target. ``objective`` records
    ``||q_fit - q_target||^2`` after every core solve (nonincreasing).
    Iteration stops when a full sweep reduces the objective by less than
    ``tol`` relative to ``||target||^2`` or after ``sweeps`` sweeps.
    """
    n = target.n
    if init is None:
        init, _ = truncate(target, r)
    if init.n != n or init.phys_dims != target.phys_dims:
        raise MpsError("init shape does not match target")
    dtype = np.result_type(init.dtype, target.dtype)
    fit = canonicalize(init.astype(dtype), 0).cores
    tcores = target.cores
    tnorm2 = norm_squared(target)

    # right[k]: overlap env of sites > k, indices (fit bond, target bond)
    right: list[np.ndarray | None] = [None] * n
    right[n - 1] = np.ones((1, 1), dtype=dtype)
    for k in range(n - 1, 0, -1):
        right[k - 1] = _overlap_right(fit[k], tcores[k], right[k])
    left: list[np.ndarray | None] = [None] * n
    left[0] = np.ones((1, 1), dtype=dtype)

    objective = [max(tnorm2 - 2 * np.real(inner_product(Mps(fit), target)) + norm_squared(Mps(fit)), 0.0)]
    done = 0
    for sweep in range(sweeps):
        start = objective[-1]
        order = list(range(n)) + list(range(n - 2, -1, -1))
        for step, k in enumerate(order):
            # optimal core: left[k]^T-contracted target core with right[k]
            new = np.tensordot(left[k], tcores[k], axes=(1, 0))
            new = np.tensordot(new, right[k], axes=(2, 1))
            fit[k] = new
            objective.append(max(tnorm2 - float(np.sum(np.abs(new) ** 2)), 0.0))
            if step < n - 1:
                fit[k], fit[k + 1] = _left_orthogonalize(fit[k], fit[k + 1])
                left[k + 1] = _overlap_left(fit[k], tcores[k], left[k])
            elif step < len(order) - 1:
                nxt = order[step + 1]
                fit[k], fit[nxt] = _right_orthogonalize(fit[k], fit[nxt])
                right[nxt] = _overlap_right(fit[k], tcores[k], right[k])
        done = sweep + 1
        if start - objective[-1] < tol * max(tnorm2, 1e-300):
            break
    return AlsResult(Mps(fit, center=0), objective, done)


def _overlap_left(fc: np.ndarray, tc: np.ndarray, env: np.ndarray) -> np.ndarray:
    # env[a, b] over (fit bond, target bond); result env'[a', b'] = sum conj(fc[a,x,a']) env[a,b] tc[b,x,b']
    tmp = np.tensordot(env, tc, axes=(1, 0))
    return np.tensordot(fc.conj(), tmp, axes=([0, 1], [0, 1]))


def _overlap_right(fc: np.ndarray, tc: np.ndarray, env: np.ndarray) -> np.ndarray:
    # env[a', b'] over right bonds; result env[a, b] = sum conj(fc[a,x,a']) tc[b,x,b'] env[a',b']
    tmp = np.tensordot(tc, env, axes=(2, 1))  # (b, x, a')
    return np.tensordot(fc.conj(), tmp, axes=([1, 2], [1, 2]))


# ---------------------------------------------------------------------------
# serialization

_HEADER = "# mpsfit-mps v1"


def dumps(mps: Mps) -> str:
    """Textual container: header, shape metadata, then row-major core entries at 17 digits."""
    field_tag = "complex" if mps.is_complex else "real"
    lines = [
        _HEADER,
        f"n={mps.n} field={field_tag}",
        "phys_dims=" + " ".join(str(d) for d in mps.phys_dims),
        "ranks=" + " ".join(str(r) for r in mps.ranks),
    ]
    for k, c in enumerate(mps.cores):
        lines.append(f"core {k}")
        flat = c.reshape(-1)
        if mps.is_complex:
            lines.extend(f"{v.real:.17g} {v.imag:.17g}" for v in flat)
        else:
            lines.extend(f"{v:.17g}" for v in flat)
    return "\n".join(lines) + "\n"


def loads(text: str) -> Mps:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _HEADER:
        raise MpsError("not an mpsfit MPS file")
    meta = dict(item.split("=", 1) for item in lines[1].split())
    n = int(meta["n"])
    is_complex = meta["field"] == "complex"
    dims = [int(v) for v in lines[2].split("=", 1)[1].split()]
    ranks = [int(v) for v in lines[3].split("=", 1)[1].split()]
    if len(dims) != n or len(ranks) != n + 1:
        raise MpsError("inconsistent MPS header")
    pos = 4
    cores = []
    for k in range(n):
        if lines[pos].strip() != f"core {k}":
            raise MpsError(f"expected 'core {k}' at line {pos + 1}")
        pos += 1
        shape = (ranks[k], dims[k], ranks[k + 1])
        size = int(np.prod(shape))
        chunk = lines[pos : pos + size]
        pos += size
        if is_complex:
            vals = np.array([complex(float(a), float(b)) for a, b in (ln.split() for ln in chunk)])
        else:
            vals = np.array([float(ln) for ln in chunk])
        cores.append(vals.reshape(shape))
    return Mps(cores)


def save(mps: Mps, path: str | Path) -> None:
    Path(path).write_text(dumps(mps))


def load(path: str | Path) -> Mps:
    return loads(Path(path).read_text())


def all_configurations(n: int, d: int = 2) -> np.ndarray:
    """All ``d**n`` configurations in lexicographic (row-major) order."""
    grids = np.indices([d] * n).reshape(n, -1).T
    return grids.astype(np.int64)


def iter_configuration_blocks(n: int, block: int = 1 << 16) -> Iterable[np.ndarray]:
    """Lexicographic binary configurations in blocks, without materializing all of them."""
    total = 1 << n
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total), dtype=np.int64)
        yield ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int64)


def born_distribution(mps: Mps) -> np.ndarray:
    """Dense Born probabilities ``|q|^2 / Z`` in lexicographic order. Only for small ``n``."""
    sq = np.abs(mps.to_dense().reshape(-1)) ** 2
    return sq / sq.sum()
