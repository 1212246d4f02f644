"""Command-line entry point: ``stmh ed|train|diagnose|bench|rank|cost``.

Exit codes: 0 on success, 2 on configuration or validation errors, 1 on
runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import costmodel
from .config import ConfigError, RunConfig, load, load_preset
from .diagnostics import (
    DiagnosticsError,
    RepresentabilityError,
    construct_representing_ensemble,
    enumerate_states,
    ground_space_report,
    phase_aligned_error,
    rank_analysis,
)
from .model import (
    ConfigurationError,
    Problem,
    build_dimer_states,
    build_momentum_states,
    exact_diagonalize,
)
from .nqs import (
    Mode,
    TabularEnsemble,
    exact_param_count,
    init_ensemble,
    load_checkpoint,
    save_checkpoint,
    tabular_dict,
)
from .trainer import TrainingAborted, train

log = logging.getLogger("stmh")

BENCH_COLUMNS = [
    "sweep",
    "mode",
    "K",
    "h",
    "params_exact",
    "params_theory",
    "seconds_per_iter",
    "max_energy_error",
]


class CLIError(RuntimeError):
    pass


# file helpers -------------------------------------------------------------------


def run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output.directory) / cfg.output.run_id


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {path}: {exc}") from exc
    return path


def write_json(path: Path, data) -> None:
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}") from exc


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}") from exc


def _write_config(cfg: RunConfig, directory: Path) -> None:
    try:
        (directory / "config.json").write_text(cfg.dumps())
    except OSError as exc:
        raise CLIError(f"cannot write {directory / 'config.json'}: {exc}") from exc


# subcommands --------------------------------------------------------------------


def cmd_ed(cfg: RunConfig) -> dict:
    problem = Problem.build(cfg.model.N, cfg.model.J1, cfg.model.J2)
    ed = exact_diagonalize(problem.hamiltonian)
    out = _ensure_dir(run_dir(cfg))
    _write_config(cfg, out)
    report = ed.to_json()
    report["E0"] = ed.ground_energy
    report["configs"] = [int(x) for x in problem.basis.configs]
    report["ground_vectors"] = ed.ground_vectors.T.tolist()
    write_json(out / "report.json", report)
    return {"E0": ed.ground_energy, "degeneracy": ed.degeneracy}


def _make_ensemble(cfg: RunConfig, seed: int, mode: str | None = None, n_heads=None, width=None):
    return init_ensemble(
        cfg.model.N,
        cfg.ensemble.h if width is None else width,
        cfg.ensemble.K if n_heads is None else n_heads,
        cfg.ensemble.mode if mode is None else mode,
        np.random.default_rng(seed),
    )


def train_one(cfg: RunConfig, problem: Problem, seed: int, ed=None) -> dict:
    """Train, write per-seed artefacts and return the seed summary."""
    out = _ensure_dir(run_dir(cfg) / f"seed-{seed}")
    _write_config(cfg.with_overrides(seed=seed), out)
    ens = _make_ensemble(cfg, seed)
    counts = exact_param_count(cfg.model.N, cfg.ensemble.h, cfg.ensemble.K, cfg.ensemble.mode)
    summary = {
        "seed": seed,
        "mode": cfg.ensemble.mode,
        "params_exact": counts.exact,
        "params_theory": counts.theory,
        "aborted": False,
    }
    try:
        result = train(problem, ens, cfg.train_config(seed))
        final, trace = result.ensemble, result.trace
    except TrainingAborted as exc:
        final, trace = exc.ensemble, exc.trace
        summary["aborted"] = True
        summary["abort_reason"] = str(exc)
    trace.write_csv(out / "trace.csv")
    save_checkpoint(final, out / "checkpoint.json")
    summary.update(
        steps=len(trace.records),
        clamp_events=trace.clamp_events,
        underflow_events=trace.underflow_events,
        low_ess_steps=trace.low_ess_steps,
        band_flagged_steps=len(trace.flagged_steps),
        final_estimates=[float(e) for e in trace.final_energies()],
    )
    report = ground_space_report(final, problem, ed).to_json()
    write_json(out / "report.json", report)
    summary["report"] = report
    return summary


def cmd_train(cfg: RunConfig) -> dict:
    problem = Problem.build(cfg.model.N, cfg.model.J1, cfg.model.J2)
    ed = exact_diagonalize(problem.hamiltonian)
    root = _ensure_dir(run_dir(cfg))
    _write_config(cfg, root)
    runs = [train_one(cfg, problem, s, ed) for s in cfg.seeds]
    reports = [r["report"] for r in runs]
    summary = {
        "run_id": cfg.output.run_id,
        "seeds": list(cfg.seeds),
        "E0": ed.ground_energy,
        "Ebar": float(np.mean([r["Ebar"] for r in reports])),
        "maxVar": float(np.max([r["maxVar"] for r in reports])),
        "F_mean": float(np.mean([r["F_mean"] for r in reports])),
        "F_min": float(np.min([r["F_min"] for r in reports])),
        "min_rank": int(np.min([r["rank"] for r in reports])),
        "min_d_eff": int(np.min([r["d_eff"] for r in reports])),
        "max_frob_dev": float(np.max([r["frob_dev"] for r in reports])),
        "any_aborted": any(r["aborted"] for r in runs),
        "runs": runs,
    }
    write_json(root / "summary.json", summary)
    return summary


def cmd_diagnose(cfg: RunConfig, checkpoint: str | Path) -> dict:
    problem = Problem.build(cfg.model.N, cfg.model.J1, cfg.model.J2)
    try:
        ens = load_checkpoint(checkpoint)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    if isinstance(ens, TabularEnsemble):
        if ens.features.shape[0] != len(problem.basis):
            raise ConfigError(
                f"checkpoint covers {ens.features.shape[0]} configurations but N={cfg.model.N} "
                f"has {len(problem.basis)}"
            )
    elif ens.n_sites != cfg.model.N:
        raise ConfigError(f"checkpoint has N={ens.n_sites} inputs but config has N={cfg.model.N}")
    report = ground_space_report(ens, problem).to_json()
    out = _ensure_dir(run_dir(cfg))
    write_json(out / "report.json", report)
    return report


def rank_targets(cfg: RunConfig, problem: Problem) -> np.ndarray:
    family = cfg.rank.family
    if family == "mg-momentum":
        return np.stack(build_momentum_states(problem.basis))
    if family == "mg-dimer":
        return np.stack(build_dimer_states(problem.basis)).astype(np.complex128)
    if family == "ed-ground":
        return exact_diagonalize(problem.hamiltonian).ground_vectors.T.astype(np.complex128)
    path = Path(cfg.rank.file)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read target file {path}: {exc}") from exc
    re = np.atleast_2d(np.array(data["re"], dtype=float))
    im = np.atleast_2d(np.array(data.get("im", np.zeros_like(re)), dtype=float))
    if re.shape != im.shape or re.shape[1] != len(problem.basis):
        raise ConfigError(
            f"target file {path} has shape {re.shape}; expected (D, {len(problem.basis)})"
        )
    return re + 1j * im


def cmd_rank(cfg: RunConfig) -> dict:
    problem = Problem.build(cfg.model.N, cfg.model.J1, cfg.model.J2)
    targets = rank_targets(cfg, problem)
    report = rank_analysis(targets, problem.basis)
    out = _ensure_dir(run_dir(cfg))
    result = {"family": cfg.rank.family, "N": cfg.model.N, "D": len(targets), **report.to_json()}
    if cfg.rank.width is not None:
        ens = construct_representing_ensemble(targets, cfg.rank.width)
        states = enumerate_states(ens, problem)
        result["construct_width"] = cfg.rank.width
        result["construct_max_error"] = max(
            phase_aligned_error(states[k], targets[k] / np.linalg.norm(targets[k]))
            for k in range(len(targets))
        )
        write_json(out / "checkpoint.json", tabular_dict(ens))
    write_json(out / "rank.json", result)
    return result


def cmd_cost(cfg: RunConfig) -> dict:
    n, k = cfg.model.N, cfg.ensemble.K
    h_m = cfg.cost.h_m if cfg.cost.h_m is not None else cfg.ensemble.h
    h_star = costmodel.threshold_width(n, k, h_m)
    rows = [[h, repr(r)] for h, r in costmodel.slowdown_sweep(cfg.cost.h_list, n, k, h_m)]
    fl = costmodel.flops(costmodel.CostInputs(n, k, h_m, h_m, cfg.sampler.n_samples))
    result = {
        "N": n,
        "K": k,
        "h_m": h_m,
        "h_s_star": h_star,
        "h_s_star_trunk_only": costmodel.trunk_only_threshold(n, k, h_m),
        "R_equal_width": costmodel.slowdown(h_m, n, k, h_m),
        "C_stmh": fl.stmh,
        "C_mtmh": fl.mtmh,
        "C_penalty": fl.penalty,
        "trunk_dominated": costmodel.trunk_dominated(n, k, h_m),
    }
    out = _ensure_dir(run_dir(cfg))
    write_csv(out / "cost.csv", ["h_s", "R"], rows)
    write_json(out / "cost.json", result)
    return result


def bench_point(
    cfg: RunConfig, problem: Problem, mode: str, n_heads: int, width: int, steps: int, e0: float
) -> list:
    times, errors = [], []
    for r in range(cfg.bench.repeats):
        seed = cfg.seeds[0] + r
        ens = _make_ensemble(cfg, seed, mode, n_heads, width)
        tcfg = replace(cfg.train_config(seed), steps=steps, head_weights=None)
        res = train(problem, ens, tcfg)
        secs = [rec.seconds for rec in res.trace.records[cfg.bench.warmup :]]
        times.append(float(np.mean(secs)))
        rep = ground_space_report(res.ensemble, problem)
        errors.append(float(np.max(np.abs(rep.energies - e0))))
    counts = exact_param_count(cfg.model.N, width, n_heads, mode)
    return [
        mode,
        n_heads,
        width,
        counts.exact,
        counts.theory,
        repr(float(np.mean(times))),
        repr(float(np.mean(errors))),
    ]


def cmd_bench(cfg: RunConfig, sweep: str = "K") -> list[list]:
    """K-sweep (timing at fixed width) or width sweep (timing and accuracy).

    The K sweep runs ``bench.steps`` steps per point; the width sweep runs
    the full ``train.steps`` budget so the reported energy error is final.
    """
    problem = Problem.build(cfg.model.N, cfg.model.J1, cfg.model.J2)
    e0 = exact_diagonalize(problem.hamiltonian).ground_energy
    if sweep == "K":
        if not cfg.bench.K_list:
            raise ConfigError("bench.K_list is empty")
        points = [(k, cfg.ensemble.h) for k in cfg.bench.K_list]
        steps = cfg.bench.steps
    elif sweep == "h":
        if not cfg.bench.h_list:
            raise ConfigError("bench.h_list is empty")
        points = [(cfg.ensemble.K, h) for h in cfg.bench.h_list]
        steps = max(cfg.train.steps, cfg.bench.warmup + 1)
    else:
        raise ConfigError(f"unknown sweep '{sweep}'")
    rows = []
    for k, h in points:
        for mode in (Mode.ST_MH.value, Mode.MT_MH.value):
            rows.append([sweep] + bench_point(cfg, problem, mode, k, h, steps, e0))
    out = _ensure_dir(run_dir(cfg))
    write_csv(out / f"bench-{sweep}.csv", BENCH_COLUMNS, rows)
    return rows


# entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="JSON run configuration")
        src.add_argument("--preset", help="shipped preset: n4, n4b, n4c, n6, n8")
        p.add_argument("--seed", type=int, help="replace the seed list with one seed")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("ed", help="exact diagonalisation of the sector Hamiltonian"))
    common(sub.add_parser("train", help="train an ensemble for every configured seed"))
    p = common(sub.add_parser("diagnose", help="exact ground-space report for a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p = common(sub.add_parser("bench", help="K or width sweep of timing and accuracy"))
    p.add_argument("--sweep", choices=["K", "h"], default="K")
    p = common(sub.add_parser("rank", help="representability ranks of a target family"))
    p.add_argument("--family", help="mg-momentum, mg-dimer, ed-ground or file")
    p.add_argument("--file", help="target file for family 'file'")
    p.add_argument("--width", type=int, help="also build the tabular ensemble of this width")
    common(sub.add_parser("cost", help="analytic cost model and break-even width"))
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    else:
        cfg = RunConfig().validate()
    cfg = cfg.with_overrides(seed=args.seed, out=args.out)
    if getattr(args, "family", None) or getattr(args, "file", None) or getattr(args, "width", None) is not None:
        rank = cfg.rank
        if args.family:
            rank = replace(rank, family=args.family)
        if args.file:
            rank = replace(rank, file=args.file)
        if args.width is not None:
            rank = replace(rank, width=args.width)
        cfg = replace(cfg, rank=rank)
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "ed":
            result = cmd_ed(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
            result = {k: v for k, v in result.items() if k != "runs"}
        elif args.command == "diagnose":
            result = cmd_diagnose(cfg, args.checkpoint)
        elif args.command == "bench":
            rows = cmd_bench(cfg, args.sweep)
            result = {"rows": len(rows), "csv": str(run_dir(cfg) / f"bench-{args.sweep}.csv")}
        elif args.command == "rank":
            result = cmd_rank(cfg)
        else:
            result = cmd_cost(cfg)
    except (ConfigError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RepresentabilityError, DiagnosticsError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.command == "train" and result.get("any_aborted"):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
