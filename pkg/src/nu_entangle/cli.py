"""Command-line front end: ``nu-entangle <command> [options]``.

Outputs are JSON (default) or CSV, written to ``--output`` or stdout. Exit
codes: 0 success, 1 domain error (e.g. undefined Hardy ratio), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from nu_entangle.bell import (
    REFERENCE_TIMES,
    TIME_NAMES,
    BellTimes,
    EmptyRange,
    GridScanSpec,
    NonPositiveDenominator,
    bell_result,
    find_contamination_minimum,
    scan_h,
    tau_contamination,
)
from nu_entangle.optimizer import NoFeasiblePoint, OptimizerConfig, maximize_h
from nu_entangle.oscillation import (
    Flavor,
    OscillationParams,
    coincidence_table,
    osc_probability,
)
from nu_entangle.qkd import EveConfig, QkdConfig, run_protocol
from nu_entangle.source import (
    OutOfDomain,
    SourceConfig,
    ZeroEnergy,
    distance_to_s,
    s_to_distance,
    sample_pair_energies,
    smeared_bell,
)

COMMANDS = ("osc-prob", "table", "bell-eval", "bell-scan", "bell-optimize", "contamination",
            "convert", "source-sample", "smear", "qkd-run")

ENERGY_NOTE = ("Energy note: the quoted detector distances (2418, 241.72, 0.42, 752.28 km) "
               "are reproduced with E = 0.106 GeV; the working point quoted in the text is "
               "0.107 GeV, which is the default here.")
DEFAULT_ENERGY_GEV = 0.107
SCAN_PRESETS = {
    "near": (("t_l2", "t_r1"), (0.0, 0.25), (0.0, 0.25)),
    "far": (("t_l1", "t_r2"), (0.0, 0.6), (0.0, 0.3)),
}


class UsageError(Exception):
    """Bad command line; maps to exit status 2."""


@dataclass
class RunConfig:
    physics: OscillationParams = field(default_factory=OscillationParams)
    source: SourceConfig = field(default_factory=SourceConfig)
    output: str | None = None
    format: str = "json"
    seed: int = 0


@dataclass
class Command:
    name: str
    params: dict[str, Any]
    run: RunConfig


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(n: int | None = None):
    def conv(text: str) -> tuple[float, ...]:
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        if not all(math.isfinite(v) for v in vals):
            raise argparse.ArgumentTypeError(f"non-finite value in {text!r}")
        return vals
    return conv


def _ints(n: int):
    def conv(text: str) -> tuple[int, ...]:
        try:
            vals = tuple(int(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
        if len(vals) == 1:
            vals = vals * n
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} integers, got {text!r}")
        return vals
    return conv


def _flavor(text: str) -> Flavor:
    try:
        return Flavor.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _common(parser: argparse.ArgumentParser, fmt: str = "json") -> None:
    g = parser.add_argument_group("run configuration")
    g.add_argument("--config", metavar="FILE",
                   help="JSON file with sections physics/source and keys output/format/seed; "
                        "flags override it")
    g.add_argument("--dm2-21", type=float, default=None,
                   help="solar splitting in eV^2 (default 8e-5)")
    g.add_argument("--dm2-32", type=float, default=None,
                   help="atmospheric splitting in eV^2 (default 2.4e-3)")
    g.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    g.add_argument("--format", choices=("json", "csv"), default=None,
                   help=f"output format (default {fmt})")
    g.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    parser.set_defaults(_default_format=fmt)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = _Parser(prog="nu-entangle",
                     description="Entangled neutrino pairs from tau decay: oscillation, "
                                 "Bell/Hardy tests and key distribution.",
                     epilog=ENERGY_NOTE)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}",
                                parser_class=_Parser)

    p = sub.add_parser("osc-prob", help="single-particle P(a -> b)", formatter_class=fmt)
    p.add_argument("--from", dest="flavor_from", type=_flavor, default="e", help="e, mu or tau")
    p.add_argument("--to", dest="flavor_to", type=_flavor, default="mu", help="e, mu or tau")
    p.add_argument("--s", type=_floats(), default=(0.1,), help="s values, comma-separated")
    _common(p)

    p = sub.add_parser("table", help="3x3 coincidence table at (t_l, t_r)", formatter_class=fmt)
    p.add_argument("--tl", type=float, default=0.0, help="left detection time (s units)")
    p.add_argument("--tr", type=float, default=0.0, help="right detection time (s units)")
    _common(p)

    p = sub.add_parser("bell-eval", help="CH value and Hardy ratio at four times", formatter_class=fmt)
    p.add_argument("--times", type=_floats(4), default=REFERENCE_TIMES.as_tuple(),
                   help="t_l1,t_l2,t_r1,t_r2")
    p.add_argument("--guard", type=float, default=1e-9, help="denominator guard")
    _common(p)

    p = sub.add_parser("bell-scan", help="Hardy-ratio grid over two times (CSV)", formatter_class=fmt)
    p.add_argument("--preset", choices=sorted(SCAN_PRESETS), default="near",
                   help="near: (t_l2, t_r1) over [0,0.25]^2; far: (t_l1, t_r2) over [0,0.6]x[0,0.3]")
    p.add_argument("--axes", default=None, help="two of t_l1,t_l2,t_r1,t_r2 (overrides preset)")
    p.add_argument("--range1", type=_floats(2), default=None, help="lo,hi of axis 1")
    p.add_argument("--range2", type=_floats(2), default=None, help="lo,hi of axis 2")
    p.add_argument("--resolution", type=_ints(2), default=(400, 400), help="n1,n2 (or one value)")
    p.add_argument("--base", type=_floats(4), default=REFERENCE_TIMES.as_tuple(),
                   help="t_l1,t_l2,t_r1,t_r2 for the fixed axes")
    _common(p, fmt="csv")

    p = sub.add_parser("bell-optimize", help="multistart search for the largest Hardy ratio",
                       formatter_class=fmt)
    p.add_argument("--bounds", type=_floats(2), default=(1e-5, 0.6), help="lo,hi for every time")
    p.add_argument("--den-min", type=float, default=0.1, help="minimum Hardy denominator")
    p.add_argument("--n-starts", type=int, default=256, help="number of uniform random starts")
    p.add_argument("--max-iter", type=int, default=500, help="Nelder-Mead iterations per start")
    _common(p)

    p = sub.add_parser("contamination", help="nu_tau contamination for the two-flavor layout",
                       formatter_class=fmt)
    p.add_argument("--side", choices=("left", "right"), default="left",
                   help="side of the fixed detector")
    p.add_argument("--fixed-time", type=float, default=REFERENCE_TIMES.t_l1,
                   help="time of the fixed detector (s units)")
    p.add_argument("--fixed-flavor", type=_flavor, default="e",
                   help="flavor registered by the fixed detector")
    p.add_argument("--t", type=float, default=None, help="evaluate at this time")
    p.add_argument("--range", dest="search_range", type=_floats(2), default=(0.02, 0.03),
                   help="lo,hi for the minimum search (used when --t is absent)")
    _common(p)

    p = sub.add_parser("convert", help="s <-> distance in km", formatter_class=fmt,
                       epilog=ENERGY_NOTE)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--s", type=_floats(), default=None, help="s values -> km")
    g.add_argument("--distance-km", type=_floats(), default=None, help="km values -> s")
    p.add_argument("--energy-gev", type=float, default=DEFAULT_ENERGY_GEV,
                   help="pair energy in GeV (0.106 reproduces the quoted distances)")
    _common(p)

    p = sub.add_parser("source-sample", help="sample pair energies (CSV e_mean,eps)",
                       formatter_class=fmt, epilog=ENERGY_NOTE)
    p.add_argument("--n", type=int, default=1000, help="number of pairs to sample")
    p.add_argument("--e-window", type=_floats(2), default=None,
                   help="E_min,E_max in GeV (default 0.095,0.12)")
    p.add_argument("--eps-halfwidth", type=float, default=None, help="GeV (default 0.005)")
    _common(p, fmt="csv")

    p = sub.add_parser("smear", help="Hardy ratio averaged over an energy band",
                       formatter_class=fmt, epilog=ENERGY_NOTE)
    p.add_argument("--distances", type=_floats(4), default=None,
                   help="L1,L2,R1,R2 km (default: the optimal times at 0.106 GeV)")
    p.add_argument("--energy-gev", type=float, default=0.106, help="band centre in GeV")
    p.add_argument("--spread", type=_floats(), default=(0.0, 0.005, 0.01, 0.02, 0.05),
                   help="relative widths dE/E")
    p.add_argument("--points", type=int, default=129, help="odd quadrature point count")
    _common(p)

    p = sub.add_parser("qkd-run", help="simulate the key-distribution protocol", formatter_class=fmt)
    p.add_argument("--t1", type=float, default=0.15, help="baseline 1 (s units)")
    p.add_argument("--t2", type=float, default=0.45, help="baseline 2 (s units)")
    p.add_argument("--n-pairs", type=int, default=100_000, help="pairs emitted")
    p.add_argument("--efficiency", type=float, default=1.0, help="per-detector efficiency")
    p.add_argument("--eve-te", type=float, default=None, help="interception time; omit for no Eve")
    p.add_argument("--alarm-threshold", type=int, default=0,
                   help="same-flavor coincidences tolerated before the alarm")
    p.add_argument("--include-bits", action="store_true", help="include sifted bit strings")
    p.add_argument("--events-csv", default=None, help="write per-pair events here")
    _common(p)
    return parser


def _load_run_config(ns: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {ns.config}: {exc}")
        unknown = set(doc) - {"physics", "source", "output", "format", "seed"}
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
    try:
        physics = OscillationParams(**doc.get("physics", {}))
        src = dict(doc.get("source", {}))
        if "e_window" in src:
            src["e_window"] = tuple(src["e_window"])
        source = SourceConfig(**src)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--config: {exc}")
    if ns.dm2_21 is not None:
        physics = replace(physics, dm2_21=ns.dm2_21)
    if ns.dm2_32 is not None:
        physics = replace(physics, dm2_32=ns.dm2_32)
    if physics.dm2_21 <= 0 or physics.dm2_32 <= 0:
        raise UsageError("--dm2-21/--dm2-32: mass splittings must be positive")
    changes = {}
    if getattr(ns, "e_window", None) is not None:
        changes["e_window"] = ns.e_window
    if getattr(ns, "eps_halfwidth", None) is not None:
        changes["eps_halfwidth"] = ns.eps_halfwidth
    if changes:
        try:
            source = replace(source, **changes)
        except ValueError as exc:
            raise UsageError(f"--e-window/--eps-halfwidth: {exc}")
    return RunConfig(
        physics=physics,
        source=source,
        output=ns.output if ns.output is not None else doc.get("output"),
        format=ns.format or doc.get("format") or ns._default_format,
        seed=ns.seed if ns.seed is not None else int(doc.get("seed", 0)),
    )


def parse(args: Sequence[str]) -> Command:
    args = list(args)
    parser = build_parser()
    if not args:
        raise UsageError("missing command; choose one of: " + ", ".join(COMMANDS))
    ns = parser.parse_args(args)
    if ns.command is None:
        raise UsageError("missing command; choose one of: " + ", ".join(COMMANDS))
    run = _load_run_config(ns)
    skip = {"command", "config", "dm2_21", "dm2_32", "output", "format", "seed",
            "_default_format", "e_window", "eps_halfwidth"}
    params = {k: v for k, v in vars(ns).items() if k not in skip}
    if ns.command == "bell-eval":
        params["times"] = BellTimes.from_sequence(params["times"])
    if ns.command == "bell-scan":
        axes, r1, r2 = SCAN_PRESETS[params.pop("preset")]
        if params["axes"] is not None:
            axes = tuple(a.strip() for a in params["axes"].split(","))
            if len(axes) != 2 or not set(axes) <= set(TIME_NAMES):
                raise UsageError(f"--axes: expected two of {','.join(TIME_NAMES)}")
        try:
            params = {"spec": GridScanSpec(
                axes=axes, base=BellTimes.from_sequence(params["base"]),
                range1=params["range1"] or r1, range2=params["range2"] or r2,
                resolution=params["resolution"])}
        except ValueError as exc:
            raise UsageError(f"bell-scan: {exc}")
    if ns.command == "convert" and params["s"] is None and params["distance_km"] is None:
        raise UsageError("convert: give --s or --distance-km")
    return Command(ns.command, params, run)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return f"{x:.12g}"


def _run(cmd: Command) -> tuple[str, int]:
    """Returns (text, exit status)."""
    prm, run = cmd.params, cmd.run
    phys = run.physics
    csv_out = run.format == "csv"

    if cmd.name == "osc-prob":
        s = np.array(prm["s"])
        if np.any(s < 0):
            raise ValueError("s must be nonnegative")
        prob = np.atleast_1d(osc_probability(prm["flavor_from"], prm["flavor_to"], s, phys))
        a, b = prm["flavor_from"].label, prm["flavor_to"].label
        if csv_out:
            return _csv_text(["from", "to", "s", "probability"],
                             [[a, b, _num(x), _num(v)] for x, v in zip(s, prob)]), 0
        return _dump_json({"from": a, "to": b, "s": s.tolist(), "probability": prob.tolist()}), 0

    if cmd.name == "table":
        tab = coincidence_table(prm["tl"], prm["tr"], phys)
        labels = [f.label for f in Flavor]
        if csv_out:
            return _csv_text(["left", "right", "p"],
                             [[a, b, _num(tab.p[i, j])] for i, a in enumerate(labels)
                              for j, b in enumerate(labels)]), 0
        return _dump_json({"t_l": tab.t_l, "t_r": tab.t_r,
                           "p": {a: {b: float(tab.p[i, j]) for j, b in enumerate(labels)}
                                 for i, a in enumerate(labels)}}), 0

    if cmd.name == "bell-eval":
        bt = prm["times"]
        res = bell_result(bt, phys, guard=prm["guard"])
        out = {"times": dict(zip(TIME_NAMES, bt.as_tuple())), **res.to_dict()}
        status = 0
        if not res.defined:
            out["error"] = "NonPositiveDenominator: Hardy ratio undefined at these times"
            status = 1
        if csv_out:
            rows = [[k, _num(v)] for k, v in out["times"].items()]
            rows += [[k, _num(v)] for k, v in res.terms.items()]
            rows += [["ch", _num(res.ch)], ["h_numerator", _num(res.h_numerator)],
                     ["h_denominator", _num(res.h_denominator)],
                     ["h", "nan" if res.h is None else _num(res.h)]]
            return _csv_text(["quantity", "value"], rows), status
        return _dump_json(out), status

    if cmd.name == "bell-scan":
        res = scan_h(prm["spec"], phys)
        if csv_out:
            buf = io.StringIO()
            res.to_csv(buf)
            return buf.getvalue(), 0
        spec = res.spec
        return _dump_json({"axes": list(spec.axes), "range1": list(spec.range1),
                           "range2": list(spec.range2), "resolution": list(spec.resolution),
                           "max": res.max, "argmax": None if res.argmax is None else list(res.argmax),
                           "n_defined": int(res.defined.sum()),
                           "n_violating": int(np.sum(res.defined & (np.nan_to_num(res.h) > 1)))}), 0

    if cmd.name == "bell-optimize":
        cfg = OptimizerConfig(bounds=(tuple(prm["bounds"]),) * 4, den_min=prm["den_min"],
                              n_starts=prm["n_starts"], max_iter=prm["max_iter"], seed=run.seed)
        return _dump_json(maximize_h(cfg, phys).to_dict()), 0

    if cmd.name == "contamination":
        side, ft, ff = prm["side"], prm["fixed_time"], prm["fixed_flavor"]
        out = {"side": side, "fixed_time": ft, "fixed_flavor": ff.label}
        if prm["t"] is not None:
            out.update(t=prm["t"], probability=tau_contamination(side, ft, ff, prm["t"], phys))
        else:
            t, v = find_contamination_minimum(side, ft, ff, prm["search_range"], phys)
            out.update(search_range=list(prm["search_range"]), t_min=t, probability=v)
        return _dump_json(out), 0

    if cmd.name == "convert":
        e = prm["energy_gev"]
        if prm["s"] is not None:
            vals = np.array(prm["s"])
            conv = np.atleast_1d(s_to_distance(vals, e))
            keys = ("s", "distance_km")
        else:
            vals = np.array(prm["distance_km"])
            conv = np.atleast_1d(distance_to_s(vals, e))
            keys = ("distance_km", "s")
        if csv_out:
            return _csv_text([*keys, "energy_gev"],
                             [[_num(a), _num(b), _num(e)] for a, b in zip(vals, conv)]), 0
        return _dump_json({"energy_gev": e, keys[0]: vals.tolist(), keys[1]: conv.tolist()}), 0

    if cmd.name == "source-sample":
        if prm["n"] < 1:
            raise ValueError("--n must be >= 1")
        samples = sample_pair_energies(prm["n"], run.source, np.random.default_rng(run.seed))
        if csv_out:
            return _csv_text(["e_mean", "eps"], [[_num(a), _num(b)] for a, b in samples]), 0
        return _dump_json({"e_mean": samples[:, 0].tolist(), "eps": samples[:, 1].tolist()}), 0

    if cmd.name == "smear":
        e = prm["energy_gev"]
        dist = prm["distances"] or tuple(s_to_distance(np.array(REFERENCE_TIMES.as_tuple()), 0.106))
        rows = []
        status = 0
        for sp in prm["spread"]:
            try:
                res = smeared_bell(dist, e, sp, phys, n_points=prm["points"])
            except NonPositiveDenominator as exc:
                res, status = exc.result, 1
            rows.append({"spread": sp, **res.to_dict()})
        if csv_out:
            return _csv_text(["spread", "ch", "h_numerator", "h_denominator", "h"],
                             [[_num(r["spread"]), _num(r["ch"]), _num(r["h_numerator"]),
                               _num(r["h_denominator"]), "nan" if r["h"] is None else _num(r["h"])]
                              for r in rows]), status
        return _dump_json({"distances_km": list(dist), "energy_gev": e,
                           "n_points": prm["points"], "results": rows}), status

    if cmd.name == "qkd-run":
        eve = None if prm["eve_te"] is None else EveConfig(prm["eve_te"])
        cfg = QkdConfig(t1=prm["t1"], t2=prm["t2"], n_pairs=prm["n_pairs"],
                        efficiency=prm["efficiency"], eve=eve, seed=run.seed,
                        alarm_threshold=prm["alarm_threshold"],
                        record_events=prm["events_csv"] is not None)
        rep = run_protocol(cfg, phys)
        if prm["events_csv"]:
            rep.write_events_csv(prm["events_csv"])
        return _dump_json(rep.to_dict(include_bits=prm["include_bits"])), 0

    raise UsageError(f"unknown command {cmd.name!r}")


def execute(cmd: Command, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    try:
        text, status = _run(cmd)
    except (EmptyRange, NoFeasiblePoint, OutOfDomain, ZeroEnergy, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if cmd.run.output:
        with open(cmd.run.output, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
