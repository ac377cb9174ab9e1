"""Command-line front end.

Subcommands: ``simulate``, ``characterize``, ``metrics``, ``sweep`` and
``oracle-check``. Exit codes: 0 ok, 2 config error, 3 scale error, 4 data
error. The default worker count for simulation comes from
``LONCHAR_THREADS``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import AccumulatorSet, InsufficientDataError, estimate_mode_losses, reconstruct_exact, reconstruct_first_order
from .fock_oracle import MAX_MODES, UnsupportedScaleError, joint_distribution
from .lon_core import LonError, loss_measure, matrix_from_json
from .metrics import compare_networks, fidelity_bound, inequality_chain_check, sector_fidelity, sweep, truncated_sector_bound, tvd_bound, write_sweep_csv
from .simulator import ConfigError, ExperimentConfig, RbsSampler, build_networks, generate_runs, read_stream, records_to_arrays, write_stream

EXIT_OK, EXIT_CONFIG, EXIT_SCALE, EXIT_DATA = 0, 2, 3, 4


class DataError(LonError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(args) -> ExperimentConfig:
    try:
        obj = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    obj.pop("sweep", None)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        obj[key] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        obj["runs"] = args.runs
    return ExperimentConfig.from_dict(obj)


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    U, L = build_networks(cfg)
    if cfg.run_mix < 1.0 and cfg.runs > 0 and cfg.modes > MAX_MODES:
        raise UnsupportedScaleError(f"RBS runs need M <= {MAX_MODES}, got {cfg.modes}")
    sampler = RbsSampler(L, cfg.photon_cutoff) if cfg.run_mix < 1.0 and cfg.runs > 0 else None
    records = generate_runs(cfg, L, workers=args.workers, sampler=sampler)
    header = {"config": cfg.resolved(), "version": __version__}
    summary = write_stream(args.out, records, header=header)
    summary["cutoff_overflows"] = 0 if sampler is None else sampler.overflows
    summary["config"] = cfg.resolved()
    _emit(summary, args.summary)
    return EXIT_OK


def run_characterize(stream_path, cfg: ExperimentConfig, method: str = "exact") -> dict:
    alpha, bob_char, bob_all, n_rbs = records_to_arrays(read_stream(stream_path))
    if alpha.shape[0] == 0:
        raise DataError("stream has no characterization runs")
    acc = AccumulatorSet(cfg.modes)
    # accumulate in stream order so jackknife blocks follow run indices
    acc.accumulate_batch(alpha, bob_char, 0)
    acc.skipped_rbs = n_rbs
    sq = cfg.squeeze
    fn = reconstruct_exact if method == "exact" else reconstruct_first_order
    res = fn(acc, sq)
    losses = estimate_mode_losses(bob_all, sq)
    return res.to_json(
        loss_estimate=float(1.0 - np.sum(np.abs(res.estimate) ** 2) / cfg.modes),
        mode_loss=losses.loss,
        ell_sq=[float(x) for x in losses.ell_sq],
        rbs_runs_skipped=n_rbs,
        config=cfg.resolved(),
    )


def cmd_characterize(args) -> int:
    cfg = _load_config(args)
    report = run_characterize(args.stream, cfg, args.method)
    _emit(report, args.out)
    if args.out:
        print(
            json.dumps(
                {"E_hat": report["loss_estimate"], "conditioned_counts": report["conditioned_counts"], "flags": report["flags"]}
            )
        )
    return EXIT_OK


def run_metrics(cfg: ExperimentConfig, estimate_path: str | None = None, epsilon: float | None = None, sectors: int = 3) -> dict:
    U, L = build_networks(cfg)
    source = "config"
    if estimate_path:
        L = matrix_from_json(json.loads(Path(estimate_path).read_text()), validate=False)
        source = Path(estimate_path).name
        norm = float(np.linalg.norm(L, 2))
        if norm > 1.0:
            # sampling noise can push an estimate slightly past the unit ball
            L = L / norm
    sq = cfg.squeeze
    cmp = compare_networks(sq, U, L, sectors=range(sectors + 1))
    out = cmp.to_json()
    out.update({"network_source": source, "loss_measure": loss_measure(L), "config": cfg.resolved()})
    if epsilon is not None:
        out["epsilon"] = epsilon
        out["acceptable"] = bool(cmp.tvd_bound <= epsilon)
    return out


def cmd_metrics(args) -> int:
    cfg = _load_config(args)
    _emit(run_metrics(cfg, args.estimate, args.epsilon, args.sectors), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    modes, t_sq, chi = args.modes, args.t_sq, args.chi_sq
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        grid = obj.get("sweep", obj)
        modes = modes or grid.get("modes")
        t_sq = t_sq or grid.get("t_sq")
        chi = chi if chi is not None else grid.get("chi_sq", "inv-sqrt")
    if not modes or not t_sq:
        raise ConfigError("sweep needs a grid of modes and t_sq values")
    chi = "inv-sqrt" if chi is None else _parse_value(chi) if isinstance(chi, str) else chi
    try:
        rows = sweep([int(m) for m in modes], [float(t) for t in t_sq], chi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.format == "json":
        _emit(rows, args.out)
    elif args.out:
        with open(args.out, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = _load_config(args)
    if cfg.modes > MAX_MODES:
        raise UnsupportedScaleError(f"oracle checks need M <= {MAX_MODES}, got {cfg.modes}")
    U, L = build_networks(cfg)
    sq = cfg.squeeze
    n_max = args.n_max
    pu = joint_distribution(sq, U, n_max)
    pl = joint_distribution(sq, L, n_max)
    kept = 1.0 - pu.residual_mass
    pu.probs, pu.residual_mass = pu.probs / kept, 0.0
    pl.probs, pl.residual_mass = pl.probs / kept, 0.0
    chain = inequality_chain_check(pu, pl, truncated_sector_bound(sq, U, L, n_max))
    report = {
        "n_max": n_max,
        "kept_mass": kept,
        "tvd": chain.tvd,
        "classical_fidelity": chain.classical_fidelity,
        "sector_bound": chain.quantum_fidelity,
        "fidelity_bound": fidelity_bound(sq, U, L),
        "tvd_bound": tvd_bound(sq, U, L),
        "slacks": chain.slacks,
        "ok": chain.ok,
        "sector_fidelities": {str(n): sector_fidelity(U, L, n) for n in range(n_max + 1)},
        "config": cfg.resolved(),
    }
    _emit(report, args.out)
    return EXIT_OK if chain.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lonchar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment config JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (last wins)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path (default stdout)")

    sp = sub.add_parser("simulate", help="generate an NDJSON run stream")
    common(sp)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--summary", help="summary JSON path (default stdout)")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("characterize", help="reconstruct L from a run stream")
    common(sp)
    sp.add_argument("--stream", required=True)
    sp.add_argument("--method", choices=("exact", "first-order"), default="exact")
    sp.set_defaults(func=cmd_characterize)

    sp = sub.add_parser("metrics", help="fidelity and TVD bounds against the ideal network")
    common(sp)
    sp.add_argument("--estimate", help="reconstructed matrix JSON to score instead of the configured L")
    sp.add_argument("--epsilon", type=float, help="acceptance threshold on the TVD bound")
    sp.add_argument("--sectors", type=int, default=3, help="largest photon sector to report")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("sweep", help="closed-form fidelity grid for uniform loss")
    sp.add_argument("--config", help="JSON with modes, t_sq and optional chi_sq")
    sp.add_argument("--modes", type=int, nargs="+")
    sp.add_argument("--t-sq", dest="t_sq", type=float, nargs="+")
    sp.add_argument("--chi-sq", dest="chi_sq", help="number or rule name (inv-sqrt, rbs)")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("oracle-check", help="exact small-instance inequality checks")
    common(sp)
    sp.add_argument("--n-max", dest="n_max", type=int, default=4)
    sp.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedScaleError as exc:
        print(f"scale error: {exc}", file=sys.stderr)
        return EXIT_SCALE
    except (DataError, InsufficientDataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LonError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
