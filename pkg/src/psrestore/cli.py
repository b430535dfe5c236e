"""Command-line front end.

Every command writes its payload files plus one ``manifest.json`` into
``--out``. Payloads carry no wall-time fields, so re-running a command with
the same case and config reproduces them byte for byte.

Exit codes: 0 success, 1 infeasible or violation verdict, 2 usage or input
error, 3 resource cap reached.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dvlp import solve_dvlp
from .dynamics import DynScheduleConfig, FineSchedule, SimulationError, objective, simulate
from .dynopt import compare_static_dynamic, solve_dynopfr
from .network import VARIANTS, CaseError, builtin_ieee9, load_case
from .static import brute_force_oracle, schedule_csv, solve_opfr
from .switching import Rules

EXIT_OK, EXIT_VERDICT, EXIT_INPUT, EXIT_CAP = 0, 1, 2, 3

CONFIG_KEYS = ("dt_s", "t_max_s", "df_max_hz", "alpha", "beta", "epsilon_rad_s", "kappa_s")


class InputError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _clean(obj):
    """Drop wall-time fields and convert numpy scalars for JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if k not in ("seconds", "wall_time_s")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _json(obj) -> str:
    # json writes floats with repr, which round-trips at 17 significant digits
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _load_net(args):
    if getattr(args, "case", None):
        path = Path(args.case)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read case file {path}: {exc.strerror}") from exc
        try:
            net = load_case(text)
        except CaseError as exc:
            raise InputError(f"invalid case file {path}: {exc}") from exc
    else:
        net = builtin_ieee9(args.variant)
    return net


def _case_hash(net) -> str:
    return hashlib.sha256(net.dumps().encode()).hexdigest()


def _load_config(args) -> DynScheduleConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config file {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError("config file must hold an object")
        unknown = sorted(set(doc) - set(CONFIG_KEYS))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        values.update({k: float(v) for k, v in doc.items()})
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    try:
        return DynScheduleConfig(**values)
    except ValueError as exc:
        raise InputError(f"invalid config: {exc}") from exc


def _config_dict(cfg: DynScheduleConfig) -> dict:
    return {k: getattr(cfg, k) for k in CONFIG_KEYS}


def _parse_setpoints(text, net) -> np.ndarray:
    G = len(net.generators)
    if text is None:
        return np.zeros(G)
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError(f"setpoints must be comma-separated numbers: {text!r}") from exc
    if len(vals) != G:
        raise InputError(f"expected {G} setpoints, got {len(vals)}")
    return np.array(vals)


def read_schedule(path, net, cfg: DynScheduleConfig) -> FineSchedule:
    """Read a schedule CSV.

    Rows are ordered by ``step``. With a ``time_s`` column each switch happens
    at the fine step nearest that time and ``time_s = 0`` rows are energized
    from the start; without it the switches occupy consecutive slots from 2.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read schedule file {path}: {exc.strerror}") from exc
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and ("step" not in rows[0] or "component_id" not in rows[0]):
        raise InputError("schedule CSV needs step and component_id columns")
    try:
        rows.sort(key=lambda r: int(r["step"]))
    except ValueError as exc:
        raise InputError(f"non-integer step in schedule: {exc}") from exc
    known = set(net.switchable())
    for r in rows:
        if r["component_id"] not in known:
            raise InputError(f"unknown component {r['component_id']!r} in schedule")
    timed = bool(rows) and bool(rows[0].get("time_s"))
    initial, events = [], []
    for k, r in enumerate(rows):
        if timed:
            step = int(round(float(r["time_s"]) / cfg.dt_s))
        else:
            step = cfg.slot_start_step(k + 2)
        if step <= 0:
            initial.append(r["component_id"])
        else:
            events.append((step, r["component_id"]))
    sched = FineSchedule(tuple(initial), tuple(events))
    try:
        sched.validate(net, cfg)
    except SimulationError as exc:
        raise InputError(f"invalid schedule: {exc}") from exc
    return sched


def _rules(args) -> Rules:
    return Rules(allow_loops=not args.radial, symmetry=not args.no_symmetry)


class _Outputs:
    def __init__(self, out: str):
        self.dir = Path(out)
        self.files = []

    def write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        p.write_text(text)
        self.files.append(str(p))


# -- commands ---------------------------------------------------------------

def cmd_export_case(args, outs: _Outputs) -> tuple[int, dict]:
    net = builtin_ieee9(args.variant)
    outs.write(args.file or f"ieee9_{args.variant}.json", net.dumps() + "\n")
    return EXIT_OK, {"variant": args.variant}


def cmd_opfr(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    if args.slots < 1:
        raise InputError("--slots must be at least 1")
    res = solve_opfr(net, args.slots, _rules(args), node_cap=args.node_cap, memo=not args.no_memo)
    outs.write("schedule.csv", schedule_csv(net, res.schedule))
    summary = res.summary()
    summary["dispatch"] = [d.to_dict() for d in res.dispatch]
    outs.write("summary.json", _json(summary))
    code = EXIT_CAP if res.status == "cap_reached" else EXIT_OK
    if res.status == "infeasible":
        code = EXIT_VERDICT
    return code, {"slots": args.slots, "rules": vars(_rules(args))}


def cmd_validate(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    rules = Rules(allow_loops=args.loops, symmetry=not args.no_symmetry)
    res = brute_force_oracle(net, args.slots, rules, cap=args.cap)
    outs.write("counts.json", _json(res.to_dict()))
    return (EXIT_CAP if res.status == "cap_reached" else EXIT_OK), {"slots": args.slots,
                                                                     "cap": args.cap,
                                                                     "rules": vars(rules)}


def cmd_simulate(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    cfg = _load_config(args)
    sched = read_schedule(args.schedule, net, cfg) if args.schedule else FineSchedule()
    refs = _parse_setpoints(args.setpoints, net)
    traj = simulate(net, sched, refs, cfg)
    outs.write("trajectory.csv", traj.to_csv())
    report = {"objective": objective(traj, cfg).to_dict(), "max_abs_delta_omega_rad_s": traj.max_abs_omega(),
              "sync_gap_rad_s": traj.sync_gap, "pickup_steps": traj.pickups,
              "violations": traj.violations}
    outs.write("report.json", _json(report))
    return (EXIT_VERDICT if traj.violations else EXIT_OK), {"config": _config_dict(cfg),
                                                            "setpoints": refs.tolist(),
                                                            "schedule": args.schedule}


def cmd_dvlp(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    cfg = _load_config(args)
    sched = read_schedule(args.schedule, net, cfg) if args.schedule else FineSchedule()
    res = solve_dvlp(net, sched, cfg, minimize_penalty=not args.feasibility_only)
    outs.write("dvlp.json", _json(res.to_dict()))
    code = EXIT_OK if res.feasible else (EXIT_CAP if res.status == "not_converged" else EXIT_VERDICT)
    return code, {"config": _config_dict(cfg), "schedule": args.schedule}


def cmd_dynopfr(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    cfg = _load_config(args)
    width = None if args.width == 0 else args.width
    if cfg.n_r < 2:
        res = None
    else:
        res = solve_dynopfr(net, cfg, args.mode, width, _rules(args), node_cap=args.node_cap,
                            threads=args.threads)
    if res is None:
        outs.write("schedule.csv", schedule_csv(net, [], []))
        outs.write("result.json", _json({"mode": args.mode, "status": "optimal", "schedule": [],
                                         "note": "fewer than two condensed slots"}))
        return EXIT_OK, {"config": _config_dict(cfg), "mode": args.mode}
    outs.write("schedule.csv", schedule_csv(net, res.schedule.ids, res.times_s()))
    outs.write("result.json", _json(res.summary()))
    outs.write("trajectory.csv", res.trajectory.to_csv())
    code = EXIT_CAP if res.status == "cap_reached" else EXIT_OK
    return code, {"config": _config_dict(cfg), "mode": args.mode, "width": width,
                  "threads": args.threads, "node_cap": args.node_cap}


def cmd_compare(args, outs: _Outputs) -> tuple[int, dict]:
    net = _load_net(args)
    cfg = _load_config(args)
    width = None if args.width == 0 else args.width
    rep = compare_static_dynamic(net, cfg, args.mode, width, _rules(args), threads=args.threads)
    outs.write("compare.json", _json(rep.to_dict()))
    return EXIT_OK, {"config": _config_dict(cfg), "mode": args.mode, "width": width,
                     "threads": args.threads}


# -- parser -----------------------------------------------------------------

def _add_case(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--case", help="case JSON file")
    g.add_argument("--variant", choices=VARIANTS, default="three-loads", help="builtin 9-bus variant")


def _add_config(p):
    p.add_argument("--config", help="JSON file with keys " + ", ".join(CONFIG_KEYS))
    for k in CONFIG_KEYS:
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=float, default=None)


def _add_search(p):
    p.add_argument("--radial", action="store_true", help="forbid closing loops")
    p.add_argument("--no-symmetry", action="store_true", help="treat equal loads as distinct")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psrestore", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-case", help="write a builtin case file")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--file", help="output file name inside --out")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_export_case)

    p = sub.add_parser("opfr", help="static restoration optimum")
    _add_case(p)
    _add_search(p)
    p.add_argument("--slots", type=int, required=True, help="number of switch slots")
    p.add_argument("--node-cap", type=int)
    p.add_argument("--no-memo", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_opfr)

    p = sub.add_parser("validate", help="enumerate every sequence and count feasible ones")
    _add_case(p)
    p.add_argument("--slots", type=int, required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--loops", action="store_true", help="allow closing loops")
    p.add_argument("--no-symmetry", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="simulate frequency dynamics for a schedule")
    _add_case(p)
    _add_config(p)
    p.add_argument("--schedule", help="schedule CSV")
    p.add_argument("--setpoints", help="comma-separated setpoints in rad/s, one per generator")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dvlp", help="setpoint feasibility and penalty LP for a schedule")
    _add_case(p)
    _add_config(p)
    p.add_argument("--schedule", help="schedule CSV")
    p.add_argument("--feasibility-only", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_dvlp)

    for name, fn, helptext in (("dynopfr", cmd_dynopfr, "dynamic restoration search"),
                               ("compare", cmd_compare, "static optimum against dynamic optimum")):
        p = sub.add_parser(name, help=helptext)
        _add_case(p)
        _add_config(p)
        _add_search(p)
        p.add_argument("--mode", choices=("exact", "beam"), default="exact" if name == "dynopfr" else "beam")
        p.add_argument("--width", type=int, default=8, help="beam width, 0 keeps every node")
        p.add_argument("--threads", type=int, default=1)
        if name == "dynopfr":
            p.add_argument("--node-cap", type=int)
        p.add_argument("--out", default=".")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    outs = _Outputs(args.out)
    t0 = time.perf_counter()
    try:
        code, snapshot = args.func(args, outs)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                "config": snapshot, "outputs": list(outs.files), "exit_code": code,
                "wall_time_s": time.perf_counter() - t0, "version": __version__}
    net = builtin_ieee9(args.variant) if args.command == "export-case" else _load_net(args)
    manifest["case_sha256"] = _case_hash(net)
    outs.dir.mkdir(parents=True, exist_ok=True)
    (outs.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for f in outs.files:
        print(f)
    return code


if __name__ == "__main__":
    sys.exit(main())
