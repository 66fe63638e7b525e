"""Command-line interface: ``mpsfit {run,gen-data,dmrg,warm-start,diagnose}``.

Exit codes: 0 success, 1 configuration or input error, 2 run failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import mps as mps_mod
from .diagnostics import trap_detector
from .dmrg import dmrg_ground_state
from .experiments import ConfigError, ExperimentConfig, run_experiment
from .losses import LossContext, nll
from .measurement import generate_qst_dataset, save_qst_dataset
from .models import (
    IsingModel,
    heisenberg_mpo,
    ising_exact_sampler,
    load_spin_dataset,
    optimal_nll,
    save_spin_dataset,
    spins_to_bits,
    tfim_mpo,
)
from .warmstart import SketchConfig, sketch_estimate, warm_init

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2

log = logging.getLogger("mpsfit")


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(args.outdir or cfg.output or Path("results") / Path(args.config).stem)
    results = run_experiment(cfg, outdir, workers=args.workers)
    failed = [r for r in results if r.error is not None]
    for r in results:
        if r.error is None:
            row = r.row
            log.info("%s final_nll=%s nll_gap=%s mi=%s trapped=%s", r.spec.run_id, row["final_nll"], row["nll_gap"], row["mi"], row["trapped"])
        else:
            log.error("%s failed: %s", r.spec.run_id, r.error)
    print(f"{len(results) - len(failed)}/{len(results)} runs ok; summary at {outdir / 'summary.csv'}")
    return EXIT_FAILURE if failed else EXIT_OK


def _ising_from_args(args) -> IsingModel:
    return IsingModel(args.n, args.beta, args.topology)


def _cmd_gen_data(args) -> int:
    if args.kind == "spin":
        spins = ising_exact_sampler(_ising_from_args(args), args.count, args.seed)
        save_spin_dataset(spins, args.output)
    else:
        if args.state is None:
            print("gen-data --kind qst needs --state", file=sys.stderr)
            return EXIT_CONFIG
        state = mps_mod.load(args.state)
        save_qst_dataset(generate_qst_dataset(state, args.count, args.seed), args.output)
    print(f"wrote {args.count} records to {args.output}")
    return EXIT_OK


def _cmd_dmrg(args) -> int:
    periodic = not args.open
    h = tfim_mpo(args.n, args.J, args.h, periodic) if args.model == "tfim" else heisenberg_mpo(args.n, periodic, args.J)
    res = dmrg_ground_state(h, args.r_max, sweeps=args.sweeps, tol=args.tol, rng_seed=args.seed)
    mps_mod.save(res.state, args.output)
    meta = {
        "model": args.model,
        "n": args.n,
        "periodic": periodic,
        "J": args.J,
        "h": args.h if args.model == "tfim" else None,
        "r_max": args.r_max,
        "energy": res.energy,
        "sweeps": res.sweeps,
        "sweep_energies": res.sweep_energies,
        "converged": res.converged,
        "seed": args.seed,
    }
    Path(f"{args.output}.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"energy={res.energy:.12g} sweeps={res.sweeps}")
    return EXIT_OK


def _cmd_warm_start(args) -> int:
    spins = load_spin_dataset(args.data)
    if spins.shape[0] == 0:
        print("warm-start: empty dataset", file=sys.stderr)
        return EXIT_CONFIG
    bits = spins_to_bits(spins)
    sk = SketchConfig(rank=args.sketch_rank, window=args.window, anchor_ends=not args.no_anchor)
    theta, report = warm_init(
        sketch_estimate(bits, sk), args.rank, cross_rank=args.cross_rank, rng_seed=args.seed, init_samples=bits
    )
    mps_mod.save(theta, args.output)
    Path(f"{args.output}.report.txt").write_text(report.as_text())
    sys.stdout.write(report.as_text())
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    theta = mps_mod.load(args.mps)
    model = _ising_from_args(args)
    if theta.n != model.n:
        print(f"diagnose: model has n={model.n} but the MPS has n={theta.n}", file=sys.stderr)
        return EXIT_CONFIG
    gap = None
    if args.data:
        spins = load_spin_dataset(args.data)
        gap = nll(theta, LossContext.born(spins_to_bits(spins))) - optimal_nll(model, spins)
    rep = trap_detector(model, theta, tol_mi=args.tol_mi, tol_kl=args.tol_kl, enum_bound=args.enum_bound, nll_gap=gap)
    sys.stdout.write(rep.as_text())
    if args.csv:
        row = rep.as_row()
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            if new:
                w.writeheader()
            w.writerow(row)
    return EXIT_OK


def _add_ising_args(p) -> None:
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--topology", choices=["cycle", "path"], default="cycle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpsfit", description="MPS Born machines and tomography experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment grid from a JSON config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-j", "--workers", type=int, default=1)
    p.add_argument("-o", "--outdir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("gen-data", help="sample a spin or tomography dataset")
    p.add_argument("--kind", choices=["spin", "qst"], default="spin")
    _add_ising_args(p)
    p.add_argument("--state", help="MPS file to measure (qst)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("dmrg", help="ground state of TFIM or Heisenberg chain")
    p.add_argument("--model", choices=["tfim", "heisenberg"], default="tfim")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--open", action="store_true", help="open instead of periodic boundary")
    p.add_argument("--r-max", type=int, default=6)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_dmrg)

    p = sub.add_parser("warm-start", help="Born-machine initialization from samples")
    p.add_argument("--data", required=True, help="spin dataset file")
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--sketch-rank", type=int, default=4)
    p.add_argument("--cross-rank", type=int)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--no-anchor", action="store_true", help="plain contiguous sketch windows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_warm_start)

    p = sub.add_parser("diagnose", help="causality-trap report for a Born machine")
    p.add_argument("--mps", required=True)
    _add_ising_args(p)
    p.add_argument("--data", help="spin dataset for the NLL gap")
    p.add_argument("--tol-mi", type=float, default=0.05)
    p.add_argument("--tol-kl", type=float, default=0.05)
    p.add_argument("--enum-bound", type=int, default=1 << 20)
    p.add_argument("--csv", help="append the report as a CSV row")
    p.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
