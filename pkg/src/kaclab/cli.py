"""Command-line interface: ``kaclab {simulate,metric,branch,study}``.

Every subcommand writes its artifacts under ``--out`` (default: the
configuration's ``output_dir``) and prints a JSON summary on stdout.  On
failure it prints ``{"error": ..., "message": ..., "violations": [...]}`` on
stderr and exits with status 2 for invalid input or 1 for runtime errors.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .branching import estimate_fst
from .cloud import weight_function
from .config import ConfigError, default_config, emit_config, parse_config
from .experiments.checks import kac_environment, tanh_weight
from .experiments.initial import (equilibrium_sample, heavy_tailed_init, maxwellian_init,
                                  nonchaotic_init)
from .experiments.studies import STUDIES, run_study
from .io import (atomic_write, dumps_canonical, read_measure_csv, write_environment,
                 write_events_csv, write_json, write_snapshot_csv)
from .kinetic import ParticleState
from .metrics import (SupportTooLarge, dyadic_upper_bound, w1_ot, wasserstein_lower_witness,
                      wasserstein_lp)
from .process import KacProcess
from .seeding import stream

log = logging.getLogger("kaclab")

TEST_FUNCTIONS = {
    "weight": weight_function,
    "tanh": tanh_weight,
    "energy": lambda V: np.einsum("ij,ij->i", np.atleast_2d(V), np.atleast_2d(V)),
    "one": lambda V: np.ones(len(np.atleast_2d(V))),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(args, kind=None):
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError([f"config: cannot read {args.config}: {exc.strerror}"]) from None
        cfg = parse_config(text)
    elif kind is not None:
        cfg = default_config(kind)
    else:
        raise UsageError("--config is required")
    if kind is not None and cfg.kind != kind:
        raise ConfigError([f"kind: expected {kind!r}, config has {cfg.kind!r}"])
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _initial(cfg, rng):
    if cfg.init == "maxwellian":
        return maxwellian_init(cfg.N, cfg.d, rng)
    if cfg.init == "heavy_tailed":
        return heavy_tailed_init(cfg.N, cfg.d, cfg.tail_index, rng)
    if cfg.init == "nonchaotic":
        return nonchaotic_init(cfg.N, cfg.d, rng)
    return equilibrium_sample(cfg.N, cfg.d, rng)


def cmd_simulate(args):
    cfg = _load_config(args, "simulate")
    out = Path(cfg.output_dir)
    V0 = _initial(cfg, stream(cfg.seed, 0, "init"))
    state = ParticleState(V0, on_sphere=True)
    proc = KacProcess(state, stream(cfg.seed, 0, "dynamics"), engine=cfg.engine)
    write_snapshot_csv(out / "snapshot_0000.csv", state.velocities, 0.0, cfg.seed)
    batches, snaps = [], ["snapshot_0000.csv"]
    for k, t in enumerate(sorted(set(cfg.t_grid) | {cfg.t_fin}), start=1):
        if cfg.record_events:
            _, b = proc.advance(t, record=True)
            batches.append(b)
        else:
            proc.advance(t)
        name = f"snapshot_{k:04d}.csv"
        write_snapshot_csv(out / name, state.velocities, t, cfg.seed)
        snaps.append(name)
    files = {"snapshots": snaps, "config": "config.json"}
    if cfg.record_events:
        from .process import EventBatch
        write_events_csv(out / "events.csv", EventBatch.concatenate(batches, cfg.d))
        files["events"] = "events.csv"
    atomic_write(out / "config.json", emit_config(cfg))
    summary = {"command": "simulate", "N": cfg.N, "d": cfg.d, "t_fin": cfg.t_fin,
               "events": proc.n_events, "momentum": state.momentum.tolist(),
               "energy": state.energy, "files": files}
    write_json(out / "summary.json", summary)
    return summary


def cmd_metric(args):
    try:
        mu, nu = read_measure_csv(args.mu), read_measure_csv(args.nu)
    except OSError as exc:
        raise ConfigError([f"measure file: {exc}"]) from None
    rec = {"command": "metric", "mu": str(args.mu), "nu": str(args.nu)}
    if args.w1:
        rec.update(metric="w1", value=w1_ot(mu, nu))
    elif args.bracket:
        rng = stream(args.seed or 0, 0, "witness")
        lo = wasserstein_lower_witness(mu, nu, args.subsample, rng)[0]
        up = dyadic_upper_bound(mu, nu, args.J, args.L)[0]
        rec.update(metric="weighted", mode="bracket", lower=lo, upper=up, value=0.5 * (lo + up),
                   half_width=0.5 * (up - lo), J=args.J, L=args.L, subsample=args.subsample)
    else:
        value, wit = wasserstein_lp(mu, nu, method=args.method, cap=args.cap)
        rec.update(metric="weighted", mode="exact", method=args.method, value=value,
                   witness_feasible=bool(wit.is_feasible()))
    if args.out:
        write_json(Path(args.out) / "metric.json", rec)
    return rec


def cmd_branch(args):
    cfg = _load_config(args, "branch")
    out = Path(cfg.output_dir)
    if args.env:
        from .io import read_environment
        env = read_environment(args.env)
    else:
        erng = stream(cfg.seed, 0, "environment")
        env = kac_environment(maxwellian_init(cfg.N_env, cfg.d, erng), cfg.t_end, cfg.env_step,
                              erng, cfg.engine, cfg.env_points)
        write_environment(out / "environment", env)
    f = TEST_FUNCTIONS[cfg.f]
    rng = stream(cfg.seed, 0, "branching")
    records = []
    for v0 in cfg.v0:
        est = estimate_fst(f, v0, cfg.t_start, cfg.t_end, env, cfg.n_trees, rng, cfg.population_cap)
        records.append({"f_id": cfg.f, "v0": v0, "s": cfg.t_start, "t": cfg.t_end,
                        "estimate": est.estimate, "se": est.se, "n_trees": est.n_trees,
                        "discard_fraction": est.discard_fraction,
                        "events_per_tree": est.events_per_tree})
    write_json(out / "branch.json", records)
    atomic_write(out / "config.json", emit_config(cfg))
    return {"command": "branch", "estimates": records}


def cmd_study(args):
    cfg = _load_config(args, args.kind)
    out = Path(cfg.output_dir)
    rep = run_study(cfg, args.threads)
    write_json(out / f"{cfg.kind}_report.json", rep.to_dict())
    if args.format == "csv":
        atomic_write(out / f"{cfg.kind}_cells.csv", rep.to_csv())
    for line in rep.summary_lines():
        log.info(line)
    return {"command": "study", "study": cfg.kind, "passed": rep.passed,
            "verdicts": rep.verdicts, "report": str(out / f"{cfg.kind}_report.json")}


def build_parser():
    p = _Parser(prog="kaclab", description="Hard-spheres Kac process lab.")
    p.add_argument("--version", action="version", version=f"kaclab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: KACLAB_THREADS or 1)")
        sp.add_argument("--format", choices=("csv", "json"), default="json")

    sp = sub.add_parser("simulate", help="run one Kac path and write events and snapshots")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("metric", help="distance between two measure CSV files")
    common(sp)
    sp.add_argument("--mu", required=True)
    sp.add_argument("--nu", required=True)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="exact weighted distance (default)")
    mode.add_argument("--bracket", action="store_true", help="certified lower/upper bracket")
    mode.add_argument("--w1", action="store_true", help="plain W1 optimal transport")
    sp.add_argument("--method", choices=("lp", "flow"), default="lp")
    sp.add_argument("--cap", type=int, default=2000)
    sp.add_argument("--J", type=int, default=8)
    sp.add_argument("--L", type=int, default=8)
    sp.add_argument("--subsample", type=int, default=100)
    sp.set_defaults(func=cmd_metric)

    sp = sub.add_parser("branch", help="branching estimates of f_st(v0)")
    common(sp)
    sp.add_argument("--env", help="environment.json to use instead of building one")
    sp.set_defaults(func=cmd_branch)

    sp = sub.add_parser("study", help="run a scripted study and write its report")
    sp.add_argument("kind", choices=sorted(STUDIES))
    common(sp)
    sp.set_defaults(func=cmd_study)
    return p


def _fail(kind, message, violations=(), code=1):
    sys.stderr.write(dumps_canonical({"error": kind, "message": message,
                                      "violations": list(violations)}))
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), code=2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), exc.violations, code=2)
    except UsageError as exc:
        return _fail("usage", str(exc), code=2)
    except SupportTooLarge as exc:
        return _fail("support_too_large", str(exc), code=2)
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), code=1)
    sys.stdout.write(dumps_canonical(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
