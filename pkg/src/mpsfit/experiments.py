"""Experiment configs and the grid runner behind ``mpsfit run``.

A config is one JSON document::

    {
      "experiment": "born-gd",
      "model": {"n": 16, "beta": 1.0},
      "data": {"train_size": 32768},
      "optimizer": {"method": "GD", "lr": [0.01, 0.1], "r_max": [4, 10, 20], "max_iters": 2000},
      "seeds": {"master": 0, "count": 5}
    }

Runs are the product ``r_max x lr x seed`` (``x sketch_size`` for warm starts).
Each run writes ``runs/<id>/trace.csv`` and ``runs/<id>/model.mps``; the grid
writes ``summary.csv``. Outputs are deterministic given the config except the
``wall_ms`` trace column.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mps as mps_mod
from .diagnostics import mutual_information, pair_marginal, trap_detector, tv_distance
from .dmrg import dmrg_ground_state
from .losses import LossContext, nll
from .measurement import generate_qst_dataset
from .models import IsingModel, heisenberg_mpo, ising_exact_sampler, optimal_nll, spins_to_bits, tfim_mpo
from .optimizers import OptimizerConfig, initial_state, train
from .warmstart import SketchConfig, sketch_estimate, warm_init

EXPERIMENTS = ("born-gd", "born-ngd", "born-dmrg2", "born-warm", "qst-gd", "qst-ngd")
DEFAULT_METHOD = {
    "born-gd": "GD",
    "born-ngd": "NGD",
    "born-dmrg2": "DMRG2",
    "born-warm": "GD",
    "qst-gd": "GD",
    "qst-ngd": "NGD",
}
SUMMARY_COLUMNS = [
    "run_id", "experiment", "method", "r_max", "lr", "line_search", "seed", "sketch_size",
    "iters", "initial_nll", "final_nll", "reference_nll", "nll_gap", "mi", "trapped", "trace",
]  # fmt: skip


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def derive_seed(master: int, *key) -> int:
    """Stable 32-bit seed from the master seed and a run key."""
    text = ":".join(str(x) for x in (master, *key))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@dataclass
class RunSpec:
    run_id: str
    index: int
    r_max: int
    lr: float
    seed: int
    sketch_size: int | None = None


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    warm: dict = field(default_factory=dict)
    output: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("top level: expected a JSON object")
        known = {"experiment", "model", "data", "optimizer", "seeds", "warm", "output", "description"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{key}: unknown field")
        exp = raw.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
        for key in ("model", "data", "optimizer", "seeds", "warm"):
            if not isinstance(raw.get(key, {}), dict):
                raise ConfigError(f"{key}: expected an object")
        cfg = cls(
            experiment=exp,
            model=dict(raw.get("model", {})),
            data=dict(raw.get("data", {})),
            optimizer=dict(raw.get("optimizer", {})),
            seeds=dict(raw.get("seeds", {})),
            warm=dict(raw.get("warm", {})),
            output=raw.get("output"),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(raw)

    @property
    def is_born(self) -> bool:
        return self.experiment.startswith("born")

    @property
    def method(self) -> str:
        return str(self.optimizer.get("method", DEFAULT_METHOD[self.experiment])).upper()

    def _list(self, section: dict, key: str, default, kind, name: str) -> list:
        val = section.get(key, default)
        vals = val if isinstance(val, list) else [val]
        out = []
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{name}.{key}: expected number(s), got {v!r}")
            if kind is int and int(v) != v:
                raise ConfigError(f"{name}.{key}: expected integer(s), got {v!r}")
            out.append(kind(v))
        return out

    def validate(self) -> None:
        self.r_max_list()
        lrs = self._list(self.optimizer, "lr", 0.1, float, "optimizer")
        if any(not lr > 0 for lr in lrs):
            raise ConfigError("optimizer.lr: learning rates must be positive")
        if self.method not in ("GD", "NGD", "DMRG1", "DMRG2"):
            raise ConfigError(f"optimizer.method: unknown method {self.method!r}")
        if self.optimizer.get("init_dist", "uniform") not in ("uniform", "normal"):
            raise ConfigError(f"optimizer.init_dist: expected 'uniform' or 'normal', got {self.optimizer['init_dist']!r}")
        it = self.optimizer.get("max_iters", 100)
        if not isinstance(it, int) or it < 0:
            raise ConfigError("optimizer.max_iters: expected a nonnegative integer")
        n = self.model.get("n", 16 if self.is_born else 20)
        if not isinstance(n, int) or n < 3:
            raise ConfigError("model.n: expected an integer >= 3")
        if not self.is_born:
            ham = self.model.get("hamiltonian", "tfim")
            if ham not in ("tfim", "heisenberg"):
                raise ConfigError(f"model.hamiltonian: expected 'tfim' or 'heisenberg', got {ham!r}")
        count = self.seeds.get("count", 1)
        if not isinstance(count, int) or count < 0:
            raise ConfigError("seeds.count: expected a nonnegative integer")
        if not isinstance(self.seeds.get("master", 0), int):
            raise ConfigError("seeds.master: expected an integer")
        if self.experiment == "born-warm":
            sizes = self._list(self.warm, "sketch_sizes", [128], int, "warm")
            if any(s < 1 for s in sizes):
                raise ConfigError("warm.sketch_sizes: sizes must be positive")

    def r_max_list(self) -> list[int]:
        vals = self._list(self.optimizer, "r_max", [10], int, "optimizer")
        if any(v < 1 for v in vals):
            raise ConfigError("optimizer.r_max: ranks must be positive")
        return vals

    def runs(self) -> list[RunSpec]:
        master = int(self.seeds.get("master", 0))
        count = int(self.seeds.get("count", 1))
        lrs = self._list(self.optimizer, "lr", 0.1, float, "optimizer")
        sizes: list[int | None] = [None]
        if self.experiment == "born-warm":
            sizes = self._list(self.warm, "sketch_sizes", [128], int, "warm")
        specs = []
        for size in sizes:
            for r in self.r_max_list():
                for lr in lrs:
                    for s in range(count):
                        idx = len(specs)
                        parts = [f"r{r}", f"lr{lr:g}", f"s{s}"]
                        if size is not None:
                            parts.insert(0, f"S{size}")
                        specs.append(RunSpec("-".join(parts), idx, r, lr, derive_seed(master, "run", *parts), size))
        return specs


# ---------------------------------------------------------------------------
# shared data


@dataclass
class Prepared:
    """Data shared by every run of a grid."""

    ctx: LossContext
    reference_nll: float
    n: int
    complex_: bool
    ising: IsingModel | None = None


def prepare(cfg: ExperimentConfig) -> Prepared:
    master = int(cfg.seeds.get("master", 0))
    n = int(cfg.model.get("n", 16 if cfg.is_born else 20))
    if cfg.is_born:
        model = IsingModel(n, float(cfg.model.get("beta", 1.0)), cfg.model.get("topology", "cycle"))
        size = int(cfg.data.get("train_size", 2**15))
        spins = ising_exact_sampler(model, size, derive_seed(master, "data"))
        ctx = LossContext.born(spins_to_bits(spins))
        return Prepared(ctx, optimal_nll(model, spins), n, False, model)
    ham = cfg.model.get("hamiltonian", "tfim")
    periodic = bool(cfg.model.get("periodic", True))
    if ham == "tfim":
        h = tfim_mpo(n, float(cfg.model.get("J", 1.0)), float(cfg.model.get("h", 1.0)), periodic)
    else:
        h = heisenberg_mpo(n, periodic, float(cfg.model.get("J", 1.0)))
    gs = dmrg_ground_state(
        h,
        int(cfg.model.get("dmrg_r_max", 6)),
        sweeps=int(cfg.model.get("dmrg_sweeps", 20)),
        tol=float(cfg.model.get("dmrg_tol", 1e-9)),
        rng_seed=derive_seed(master, "dmrg"),
    )
    data = generate_qst_dataset(gs.state, int(cfg.data.get("B", 20000)), derive_seed(master, "data"))
    ctx = LossContext.tomography(data)
    return Prepared(ctx, nll(gs.state, ctx), n, True)


# ---------------------------------------------------------------------------
# single run


@dataclass
class RunResult:
    spec: RunSpec
    row: dict
    error: str | None = None


def _monitor_for(prep: Prepared):
    if prep.ising is None:
        return None
    causal = prep.ising.causal()
    enumerable = prep.n <= 20

    def monitor(theta):
        out = {"mi_x1_xn": mutual_information(pair_marginal(theta))}
        if enumerable:
            out["tv_to_causal"] = tv_distance(theta, causal)
        return out

    return monitor


def execute(cfg: ExperimentConfig, prep: Prepared, spec: RunSpec, outdir: Path) -> RunResult:
    opt = cfg.optimizer
    ocfg = OptimizerConfig(
        method=cfg.method,
        eta=1.0 / spec.lr,
        line_search=bool(opt.get("line_search", False)),
        max_iters=int(opt.get("max_iters", 100)),
        rng_seed=spec.seed,
        r_max=spec.r_max,
        init_dist=str(opt.get("init_dist", "uniform" if cfg.is_born else "normal")),
        tol=float(opt.get("tol", 1e-9)),
        monitor_every=int(opt.get("monitor_every", 0)),
    )
    rundir = outdir / "runs" / spec.run_id
    rundir.mkdir(parents=True, exist_ok=True)
    if cfg.experiment == "born-warm":
        sk_seed = derive_seed(spec.seed, "sketch")
        sample_bits = spins_to_bits(ising_exact_sampler(prep.ising, spec.sketch_size, sk_seed))
        sk = SketchConfig(
            rank=int(cfg.warm.get("sketch_rank", 4)),
            window=int(cfg.warm.get("window", 1)),
            anchor_ends=bool(cfg.warm.get("anchor_ends", True)),
        )
        theta0, report = warm_init(
            sketch_estimate(sample_bits, sk),
            spec.r_max,
            cross_rank=cfg.warm.get("cross_rank"),
            rng_seed=sk_seed,
            init_samples=sample_bits,
        )
        (rundir / "warm_report.txt").write_text(report.as_text())
    else:
        theta0 = initial_state(prep.n, ocfg, complex_=prep.complex_)
    theta, trace = train(theta0, prep.ctx, ocfg, monitor=_monitor_for(prep))
    trace.to_csv(rundir / "trace.csv")
    mps_mod.save(theta, rundir / "model.mps")
    final = trace.final_nll if len(trace) else nll(theta, prep.ctx)
    gap = final - prep.reference_nll
    row = {
        "run_id": spec.run_id,
        "experiment": cfg.experiment,
        "method": ocfg.method,
        "r_max": spec.r_max,
        "lr": f"{spec.lr:g}",
        "line_search": str(ocfg.line_search).lower(),
        "seed": spec.seed,
        "sketch_size": spec.sketch_size if spec.sketch_size is not None else "",
        "iters": max(len(trace) - 1, 0),
        "initial_nll": _f(trace.records[0].nll if len(trace) else final),
        "final_nll": _f(final),
        "reference_nll": _f(prep.reference_nll),
        "nll_gap": _f(gap),
        "mi": "",
        "trapped": "",
        "trace": f"runs/{spec.run_id}/trace.csv",
    }
    if prep.ising is not None:
        enum_bound = 1 << 20
        rep = trap_detector(prep.ising, theta, enum_bound=enum_bound, nll_gap=None if prep.n <= 20 else gap)
        (rundir / "trap.txt").write_text(rep.as_text())
        row["mi"] = _f(rep.mi_model)
        row["trapped"] = str(rep.trapped).lower()
    return RunResult(spec, row)


def _f(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


_WORKER: dict = {}


def _init_worker(cfg, prep, outdir) -> None:
    _WORKER.update(cfg=cfg, prep=prep, outdir=outdir)


def _run_in_worker(spec: RunSpec) -> RunResult:
    return _safe_execute(_WORKER["cfg"], _WORKER["prep"], spec, _WORKER["outdir"])


def _safe_execute(cfg, prep, spec, outdir) -> RunResult:
    try:
        return execute(cfg, prep, spec, outdir)
    except Exception as exc:  # a failed run must not take down the grid
        return RunResult(spec, {"run_id": spec.run_id}, f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: ExperimentConfig, outdir: str | Path, workers: int = 1) -> list[RunResult]:
    """Execute every run of the grid and write ``summary.csv``. Rows keep grid order."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    specs = cfg.runs()
    results: list[RunResult] = []
    if specs:
        prep = prepare(cfg)
        if workers > 1 and len(specs) > 1:
            with ProcessPoolExecutor(
                max_workers=min(workers, len(specs), os.cpu_count() or 1),
                initializer=_init_worker,
                initargs=(cfg, prep, outdir),
            ) as pool:
                results = list(pool.map(_run_in_worker, specs))
        else:
            results = [_safe_execute(cfg, prep, s, outdir) for s in specs]
    with open(outdir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in results:
            if r.error is None:
                w.writerow(r.row)
    failures = [r for r in results if r.error is not None]
    if failures:
        (outdir / "failures.txt").write_text("".join(f"{r.spec.run_id}: {r.error}\n" for r in failures))
    return results


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_array(rows: list[dict], key: str) -> np.ndarray:
    return np.array([float(r[key]) for r in rows if r.get(key, "") != ""])
