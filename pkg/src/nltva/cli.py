"""Command-line front end.

Configuration files are flat ``key = value`` text with dotted keys, for
example ``system.k1 = 1.0`` or ``analysis.freq_response.F = 0.15``. Values
are parsed as JSON when possible and kept as strings otherwise. ``--set``
overrides individual keys. Every run writes ``manifest.json`` next to its
outputs with the configuration echo and SHA-256 checksums.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error,
3 no seed bifurcation found, 4 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .model import SystemParams, table1_params, tune_dimensionless, tune_linear, tune_nonlinear

log = logging.getLogger("nltva")

KINDS = ("tune", "freq-response", "track", "basins", "regions")
EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_NO_SEED, EXIT_VALIDATION = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class SeedNotFound(RuntimeError):
    pass


class ValidationFailure(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = _value(val)
    return out


def dump_config(flat: dict) -> str:
    return "".join(f"{k} = {json.dumps(flat[k])}\n" for k in sorted(flat))


@dataclass(frozen=True)
class RunConfig:
    kind: str
    values: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown analysis kind {self.kind!r}")
        declared = self.values.get("analysis.kind")
        if declared is not None and declared != self.kind:
            raise ConfigError(f"config declares analysis.kind={declared!r} but command is {self.kind!r}")
        if self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")

    @property
    def section(self) -> str:
        return "analysis." + self.kind.replace("-", "_") + "."

    def get(self, key: str, default=None, *, required: bool = False):
        """Analysis-specific key (``analysis.<kind>.key``), then a global one."""
        keys = (key,) if key.startswith("system.") else (self.section + key, key)
        for k in keys:
            if k in self.values:
                return self.values[k]
        if required:
            raise ConfigError(f"missing required key {keys[0]}")
        return default

    def number(self, key: str, default=None, *, required: bool = False) -> float:
        v = self.get(key, default, required=required)
        if v is None:
            return None
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number") from None
        if not math.isfinite(v):
            raise ConfigError(f"{key} must be finite")
        return v

    def echo(self) -> dict:
        flat = dict(self.values)
        flat["analysis.kind"] = self.kind
        flat["run.out"] = self.out
        flat["run.seed"] = self.seed
        flat["run.threads"] = self.threads
        return flat

    @classmethod
    def from_echo(cls, flat: dict) -> "RunConfig":
        flat = dict(flat)
        out, seed, threads = flat.pop("run.out"), flat.pop("run.seed"), flat.pop("run.threads")
        kind = flat["analysis.kind"]
        return cls(kind, flat, out, int(seed), int(threads))


SYSTEM_KEYS = ("m1", "c1", "k1", "knl1", "m2", "c2", "k2", "knl2")


def system_from(cfg: RunConfig) -> SystemParams:
    """Dimensional system from ``system.*`` keys on top of the tabulated one.

    ``system.mode = dimensionless`` builds the unit-forcing reference system
    from ``system.epsilon``, ``system.p_mu`` and ``system.p_beta`` instead.
    """
    v = cfg.values
    if v.get("system.mode", "dimensional") == "dimensionless":
        from .regions import reference_system
        return reference_system(float(v.get("system.epsilon", 0.05)), float(v.get("system.p_mu", 1.0)),
                                float(v.get("system.p_beta", 1.0)))
    base = asdict(table1_params(exact=bool(v.get("system.exact", False))))
    if "system.epsilon" in v and "system.m2" not in v:
        base["m2"] = float(v["system.epsilon"]) * float(v.get("system.m1", base["m1"]))
    for k in SYSTEM_KEYS:
        if f"system.{k}" in v:
            base[k] = float(v[f"system.{k}"])
    if v.get("system.absorber", "nonlinear") == "linear":
        base["knl2"] = 0.0
    try:
        return SystemParams(**base)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None


def _dimensionless(cfg: RunConfig) -> bool:
    return cfg.values.get("system.mode", "dimensional") == "dimensionless"


# ---------------------------------------------------------------------------
# output


class Writer:
    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def csv(self, name: str, header, rows):
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(x) for x in r])
        self.files.append(path)
        return path

    def json(self, name: str, obj):
        path = self.out / name
        path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n",
                        encoding="utf-8")
        self.files.append(path)
        return path

    def manifest(self, cfg: RunConfig, wall: float, flags: dict):
        sums = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files}
        try:
            version = metadata.version("artifact")
        except metadata.PackageNotFoundError:
            version = "unknown"
        obj = {"config": cfg.echo(), "version": version, "wall_time_s": wall,
               "outputs": sums, "flags": flags}
        (self.out / "manifest.json").write_text(
            json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else repr(x) if x == 0 else f"{x:.17g}"
    return x


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


# ---------------------------------------------------------------------------
# commands


def cmd_tune(cfg: RunConfig, w: Writer) -> dict:
    m1 = cfg.number("system.m1", 1.0)
    k1 = cfg.number("system.k1", 1.0)
    knl1 = cfg.number("system.knl1", 1.0)
    eps = cfg.number("system.epsilon", required=True)
    try:
        k2, c2 = tune_linear(m1, k1, eps)
        knl2 = tune_nonlinear(knl1, eps)
        F = cfg.number("F", None)
        alpha3 = None if F is None else 3 * knl1 * F**2 / (4 * k1**3)
        lam, mu2, beta3 = tune_dimensionless(eps, alpha3 if alpha3 is not None else 0.0)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None
    report = {"m2": eps * m1, "k2": k2, "c2": c2, "knl2": knl2, "lambda": lam, "mu2": mu2,
              "beta3_over_alpha3": 2 * eps / (1 + 4 * eps),
              "alpha3": alpha3, "beta3": beta3 if alpha3 is not None else None}
    for k in ("k2", "c2", "knl2", "lambda", "mu2"):
        print(f"{k:>8s} = {report[k]:.6g}")
    w.json("tune.json", report)
    return {}


def _omega_range(cfg, default=(0.5, 3.0)):
    lo = cfg.number("omega_min", default[0])
    hi = cfg.number("omega_max", default[1])
    if not 0 < lo < hi:
        raise ConfigError("omega range must satisfy 0 < omega_min < omega_max")
    return lo, hi


def _harmonics(cfg):
    NH = int(cfg.number("NH", 5))
    Nt = int(cfg.number("Nt", 128))
    if NH < 1 or Nt < 4 * NH + 1:
        raise ValidationFailure("need NH >= 1 and Nt >= 4 NH + 1")
    return NH, Nt


def cmd_freq_response(cfg: RunConfig, w: Writer) -> dict:
    from .continuation import continue_branch, detect_bifurcations, find_drc
    from .hbm import as_system
    from .timedomain import sweep_quasiperiodic

    params = system_from(cfg)
    F = cfg.number("F", required=True)
    if F <= 0:
        raise ValidationFailure("F must be positive")
    wr = _omega_range(cfg)
    NH, Nt = _harmonics(cfg)
    system = as_system(params, NH, Nt)
    main = continue_branch(system, F, wr, NH=NH, Nt=Nt)
    branches = {"main": main}
    if cfg.get("drc", True):
        drc = find_drc(system, F, wr, main=main, NH=NH, Nt=Nt)
        if drc is not None:
            branches["drc"] = drc
    bif_rows = []
    for name, br in branches.items():
        a1, a2 = br.amplitudes(0), br.amplitudes(1)
        w.csv(f"{name}.csv", ["omega", "amplitude_x1", "amplitude_x2", "stable"],
              [(p.omega, a1[i], a2[i], p.stable) for i, p in enumerate(br.points)])
        for bp in detect_bifurcations(br, system, Nt=Nt):
            bif_rows.append((bp.omega, F, bp.kind, name, bp.precise))
    w.csv("bifurcations.csv", ["omega", "F", "kind", "branch", "precise"], bif_rows)
    qp = cfg.get("qp_omegas", None)
    if qp:
        pts = sweep_quasiperiodic(params, F, [float(x) for x in qp])
        w.csv("quasiperiodic.csv", ["omega", "amplitude_x1"], pts)
    trunc = any(b.truncated for b in branches.values())
    if trunc:
        print("warning: continuation truncated; branch output is partial", file=sys.stderr)
    return {"truncated": trunc, "drc_found": "drc" in branches}


def _loci_rows(branch, dimless):
    amp = branch.amplitudes()
    return [((p.F**2 if dimless else p.F), p.omega, amp[i]) for i, p in enumerate(branch.points)]


def cmd_track(cfg: RunConfig, w: Writer) -> dict:
    from .regions import ALPHA3_RANGE
    from .tracking import compute_loci

    params = system_from(cfg)
    dimless = _dimensionless(cfg)
    if dimless:
        lo, hi = cfg.number("alpha3_min", ALPHA3_RANGE[0]), cfg.number("alpha3_max", ALPHA3_RANGE[1])
        if not 0 < lo < hi:
            raise ConfigError("alpha3 range must satisfy 0 < alpha3_min < alpha3_max")
        F_range = (math.sqrt(lo), math.sqrt(hi))
    else:
        F_range = (cfg.number("F_min", 0.01), cfg.number("F_max", 0.3))
        if not 0 < F_range[0] < F_range[1]:
            raise ConfigError("F range must satisfy 0 < F_min < F_max")
    NH, Nt = _harmonics(cfg)
    if params.knl1 == 0 and params.knl2 == 0:
        raise SeedNotFound("linear system: the response has no fold or Neimark-Sacker point")
    try:
        loci = compute_loci(params, F_range, omega_range=_omega_range(cfg), NH=NH, Nt=Nt,
                            ns=bool(cfg.get("ns", True)))
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None
    if loci.A is None and loci.B is None and loci.ns is None:
        raise SeedNotFound(f"no fold or Neimark-Sacker point for F in {F_range}")
    col = "alpha3" if dimless else "F"
    for name, br in (("fold_A", loci.A), ("fold_B", loci.B), ("ns", loci.ns)):
        if br is not None:
            w.csv(f"{name}.csv", [col, "omega", "amplitude_x1"], _loci_rows(br, dimless))
    sq = (lambda x: None if x is None else x**2) if dimless else (lambda x: x)
    ev = loci.events
    onset = loci.qp_onset.F if loci.qp_onset is not None and not loci.qp_onset.at_boundary else None
    events = {f"{col}_appear": _num(sq(ev.F_appear)), f"{col}_merge": _num(sq(ev.F_merge)),
              f"{col}_qp_onset": _num(sq(onset))}
    w.json("events.json", events)
    print(json.dumps(events, sort_keys=True))
    return {"truncated": any(b is not None and b.truncated for b in (loci.A, loci.B, loci.ns))}


def cmd_basins(cfg: RunConfig, w: Writer) -> dict:
    from .continuation import continue_branch, find_drc
    from .hbm import as_system
    from .model import Forcing
    from .timedomain import (LABELS, GridSpec, UndefinedRatio, basin_area_ratio, coexisting_solutions,
                             compute_basins)

    params = system_from(cfg)
    F = cfg.number("F", required=True)
    omega = cfg.number("omega", required=True)
    n = int(cfg.number("n", 201))
    factor = cfg.number("window_factor", 1.5)
    if n < 2 or factor <= 0:
        raise ValidationFailure("need n >= 2 and window_factor > 0")
    system = as_system(params)
    main = continue_branch(system, F, (0.5, 3.0), stability=False)
    drc = find_drc(system, F, (0.5, 3.0), main=main)

    def grid_for(sols):
        half = cfg.get("half_width", None)
        if half is not None:
            a = float(half)
            return GridSpec((-a, a), (-a, a), n, n)
        return GridSpec.around(sols, factor, n) if sols else GridSpec((-1.0, 1.0), (-1.0, 1.0), n, n)

    threads = cfg.threads

    def run(om):
        sols = coexisting_solutions(params, F, om, main=main, drc=drc)
        try:
            return compute_basins(params, Forcing(F, om), grid_for(sols), solutions=sols, threads=threads)
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from None

    bm = run(omega)
    xs, vs = bm.grid.axes()
    rows = [(xs[i], vs[j], LABELS[bm.labels[j, i]], bm.amplitudes[j, i])
            for j in range(len(vs)) for i in range(len(xs))]
    w.csv("raster.csv", ["x1_0", "v1_0", "label", "amplitude"], rows)
    sweep = cfg.get("omegas", None)
    if sweep:
        ratios = []
        for om in sweep:
            try:
                r = basin_area_ratio(run(float(om)))
            except UndefinedRatio:
                r = None
            ratios.append((float(om), r))
        w.csv("ratio.csv", ["omega", "ratio_percent"], ratios)
    print(json.dumps(bm.counts(), sort_keys=True))
    return {"config_hash": bm.config_hash}


def cmd_regions(cfg: RunConfig, w: Writer) -> dict:
    from .regions import ALPHA3_RANGE, classify_operation, drc_events, region_sweep

    flags = {}
    sweep = cfg.get("sweep", None)
    if sweep is not None:
        if sweep not in ("epsilon", "p_mu", "p_beta"):
            raise ConfigError("sweep must be epsilon, p_mu or p_beta")
        values = cfg.get("values", required=True)
        if not isinstance(values, list) or not values:
            raise ConfigError("values must be a non-empty list")
        try:
            rb = region_sweep(sweep, values, qp=bool(cfg.get("qp", True)),
                              alpha3_range=(cfg.number("alpha3_min", ALPHA3_RANGE[0]), cfg.number("alpha3_max", ALPHA3_RANGE[1])))
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from None
        w.csv(f"boundary_{sweep}.csv", ["param_value", "alpha3_appear", "alpha3_merge", "alpha3_qp_onset"],
              zip(rb.values, rb.alpha3_appear, rb.alpha3_merge, rb.alpha3_qp_onset))
        flags["failed_points"] = list(rb.failed)
    Fs = cfg.get("classify_F", None)
    if Fs:
        params = system_from(cfg)
        ev = drc_events(params)
        report = {"F_appear": _num(ev.F_appear), "F_merge": _num(ev.F_merge),
                  "classification": [{"F": float(F), "region": classify_operation(params, float(F), ev)}
                                     for F in Fs]}
        w.json("classification.json", report)
        for item in report["classification"]:
            print(f"F = {item['F']:g}: {item['region']}")
    if sweep is None and not Fs:
        raise ConfigError("regions needs a sweep or classify_F")
    return flags


COMMANDS = {"tune": cmd_tune, "freq-response": cmd_freq_response, "track": cmd_track,
            "basins": cmd_basins, "regions": cmd_regions}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nltva", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in KINDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--out", type=Path, default=None)
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key")
    return p


def load_config(args) -> RunConfig:
    values = {}
    if args.config is not None:
        try:
            values = parse_config(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = _value(v)
    out = args.out if args.out is not None else Path(values.pop("run.out", "out"))
    values.pop("run.out", None)
    return RunConfig(args.command, values, str(out), args.seed, args.threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args)
        np.random.seed(cfg.seed % 2**32)
        writer = Writer(Path(cfg.out))
        flags = COMMANDS[cfg.kind](cfg, writer)
        writer.manifest(cfg, time.perf_counter() - t0, flags)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SeedNotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SEED
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
