"""Experiment runner: `interlace <command>` with reproducible seeded runs.

Every run writes a manifest carrying the canonical config and its hash; every
result row repeats that hash so artifacts remain attributable offline. Runs
are deterministic functions of (config, seed): replica k draws from stream k
regardless of scheduling, and INTERLACE_THREADS (or --threads) only changes
wall-clock time, never output bytes.

Exit codes: 0 ok, 2 config error, 3 Green-table coverage, 4 numeric failure,
5 snapshot/file error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decoupling import ScaleParams, decoupling_rhs, sprinkle_factor
from .goodness import GoodnessField, bad_clusters, classify_sample
from .lattice import Window
from .potential import EquilibriumError, WindowHarmonics
from .rerouting import LiftError, NoRerouteWitness, reroute
from .rng import PhiloxStream
from .sampler import (BulkSampler, SamplerError, sample, thread_count,
                      truncation_bias_bound)
from .snapshots import SnapshotError, read_any, read_goodness, read_sample, write_goodness, write_sample
from .transience import (EnergyError, PathMeasure, ResistanceSolveError,
                         effective_resistance, energy, pushforward_energy_check)
from .vacancy import WindowTooSmallError, components, scan_u
from .walk import (GreenAccuracyError, GreenCoverageError, GreenTable,
                   GreenValidationError, build_green_table, loop_erase)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COVERAGE = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _parse_grid(spec: str):
    """lo:hi:step -> inclusive float grid."""
    try:
        lo, hi, step = (float(p) for p in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}; expected lo:hi:step") from exc
    if step <= 0 or hi < lo:
        raise ConfigError(f"bad grid spec {spec!r}")
    n = int(round((hi - lo) / step))
    return [lo + k * step for k in range(n + 1)]


def _parse_mode(spec: str):
    if spec == "exact":
        return "exact", None
    if spec.startswith("truncate:"):
        return "truncate", float(spec.split(":", 1)[1])
    raise ConfigError(f"bad mode {spec!r}; expected exact or truncate:R")


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Precedence: command-line flags > config file [run] section > defaults."""
    if not getattr(args, "config", None):
        return args
    cp = configparser.ConfigParser()
    if not cp.read(args.config):
        raise ConfigError(f"config file {args.config} not found")
    if not cp.has_section("run"):
        raise ConfigError("config file needs a [run] section")
    actions = {}
    for sub in parser._subparsers._group_actions[0].choices.values():
        for a in sub._actions:
            actions.setdefault(a.dest, a)
    provided = {dest for dest, a in actions.items()
                if getattr(args, dest, a.default) != a.default}
    for key, raw in cp.items("run"):
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in provided:
            continue
        action = actions.get(dest)
        if action is not None and action.type is not None:
            setattr(args, dest, action.type(raw))
        elif isinstance(getattr(args, dest), bool):
            setattr(args, dest, cp.getboolean("run", key))
        else:
            setattr(args, dest, raw)
    return args


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Output directory, manifest, and row emission for one command."""

    # excluded from the manifest config/hash: they steer where results go or
    # how fast they are computed, never what the result bytes contain
    EXECUTION_KEYS = ("func", "config", "out", "infile", "green_cache", "threads")

    def __init__(self, args, command: str):
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.format = args.format
        cfg = {k: v for k, v in sorted(vars(args).items())
               if k not in self.EXECUTION_KEYS and v is not None}
        self.config = {"command": command, **cfg}
        self.hash = _config_hash(self.config)
        self.artifacts = []

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def emit(self, name: str, rows: list):
        rows = [{**row, "cfg": self.hash} for row in rows]
        if self.format == "ndjson":
            p = self.path(name + ".ndjson")
            with open(p, "w") as fh:
                for row in rows:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        else:
            p = self.path(name + ".csv")
            keys = sorted({k for row in rows for k in row})
            with open(p, "w", newline="") as fh:
                wr = csv.DictWriter(fh, fieldnames=keys)
                wr.writeheader()
                wr.writerows(rows)
        return p

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.config,
            "config_hash": self.hash,
            "version": __version__,
            "artifacts": sorted(self.artifacts),
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)


def _window_from_args(args) -> Window:
    if getattr(args, "slab", None) is not None:
        return Window.slab(args.slab, args.d)
    if getattr(args, "window", None) is not None:
        return Window.box_radius(args.d, args.window)
    raise ConfigError("need --window L or --slab N")


def _green_for(window: Window, cache: str | None, tol: float = 1e-8) -> GreenTable:
    need = max(b - a + 1 for a, b in zip(window.lo, window.hi))
    if cache and Path(cache).exists():
        table = GreenTable.load(cache)
        if table.d == window.d and table.radius >= need:
            return table
    table = build_green_table(window.d, need, tol=tol)
    if cache:
        table.save(cache)
    return table


# ---------------------------------------------------------------------------
# commands

def cmd_sample(args, run: Run):
    window = _window_from_args(args)
    mode, radius = _parse_mode(args.mode)
    green = _green_for(window, args.green_cache)
    harmonics = WindowHarmonics(window, green)
    rows = []
    for r in range(args.replicas):
        record = r < args.save_snapshots
        s = sample(args.u, window, harmonics=harmonics, mode=mode,
                   truncate_radius=radius, rng=args.seed, stream=r,
                   record_trajectories=record)
        if record:
            write_sample(run.path(f"sample_r{r:05d}.rilc"), s)
        rows.append({"replica": r, "u": args.u,
                     "n_trajectories": s.n_trajectories,
                     "occupied_fraction": float(s.occupancy().mean()),
                     "seed": args.seed})
    if mode == "truncate":
        bias = truncation_bias_bound(harmonics, radius)
        rows.append({"replica": -1, "u": args.u,
                     "vacancy_bias_bound": bias, "seed": args.seed})
    run.emit("sample_stats", rows)


def cmd_classify(args, run: Run):
    if args.infile:
        s = read_sample(args.infile)
    else:
        window = _window_from_args(args)
        if window.shape != "slab":
            raise ConfigError("classification needs a slab window (--slab N)")
        green = _green_for(window, args.green_cache)
        s = sample(args.u, window, green=green, rng=args.seed, stream=0)
    gf = classify_sample(s)
    write_goodness(run.path("goodness.good"), gf)
    stats = bad_clusters(gf)
    run.emit("classify_stats", [{
        "u": gf.u, "seed": args.seed, "good_fraction": gf.good_fraction(),
        "n_bad_clusters": len(stats.sizes), "max_bad_cluster": stats.max_size,
    }])


def cmd_scan_u(args, run: Run):
    window = _window_from_args(args)
    green = _green_for(window, args.green_cache)
    grid = _parse_grid(args.u_grid)
    rows, violations = scan_u(window, grid, args.replicas, args.observable,
                              green, crossing_L=args.crossing_l,
                              seed=args.seed, threads=args.threads)
    if violations:
        raise SamplerError(f"{violations} per-replica monotonicity violations")
    run.emit("scan_u", [r.as_dict() for r in rows])


def cmd_reroute(args, run: Run):
    gf = read_goodness(args.infile)
    stream = PhiloxStream(args.seed, 0)
    core = gf.core
    rows = []
    produced = 0
    attempts = 0
    while produced < args.paths and attempts < 50 * args.paths:
        attempts += 1
        site = core.site(stream.integers(core.size))
        walk = [site]
        for _ in range(args.length * 4):
            nbrs = [w for w in
                    ((site[0] + 1, site[1], site[2]), (site[0] - 1, site[1], site[2]),
                     (site[0], site[1] + 1, site[2]), (site[0], site[1] - 1, site[2]),
                     (site[0], site[1], site[2] + 1), (site[0], site[1], site[2] - 1))
                    if core.contains(w)]
            if not nbrs:
                break
            site = nbrs[stream.integers(len(nbrs))]
            walk.append(site)
        path = loop_erase(walk)[:args.length]
        try:
            new = reroute(path, gf)
        except NoRerouteWitness:
            continue
        produced += 1
        rows.append({"path_id": produced - 1, "seed": args.seed,
                     "original": json.dumps(path), "rerouted": json.dumps(new),
                     "original_len": len(path), "rerouted_len": len(new)})
    if produced < args.paths:
        raise SamplerError(f"only {produced}/{args.paths} paths had reroute witnesses")
    run.emit("reroute_paths", rows)


def _good_paths_ensemble(gf: GoodnessField, k: int, length: int, seed: int):
    """k loop-erased good-site walks from a common deterministic root."""
    stream = PhiloxStream(seed, 1)
    root = None
    for y in gf.core.sites():
        if gf.is_good(y):
            root = y
            break
    if root is None:
        raise EnergyError("field has no good site to root an ensemble at")
    paths = []
    for _ in range(k):
        site = root
        walk = [site]
        for _ in range(length * 6):
            nbrs = [w for w in
                    ((site[0] + 1, site[1], site[2]), (site[0] - 1, site[1], site[2]),
                     (site[0], site[1] + 1, site[2]), (site[0], site[1] - 1, site[2]),
                     (site[0], site[1], site[2] + 1), (site[0], site[1], site[2] - 1))
                    if gf.contains(w) and gf.is_good(w)]
            if not nbrs:
                break
            site = nbrs[stream.integers(len(nbrs))]
            walk.append(site)
            if len(loop_erase(walk)) >= length:
                break
        paths.append(tuple(loop_erase(walk)[:length]))
    return PathMeasure.uniform(paths)


def cmd_energy(args, run: Run):
    gf = read_goodness(args.infile)
    pm = _good_paths_ensemble(gf, args.paths, args.length, args.seed)
    rep = energy(pm)
    rows = [{"kind": "ensemble", "paths": args.paths, "energy": rep.energy,
             "sites": rep.site_count, "seed": args.seed}]
    push = pushforward_energy_check(pm, gf)
    rows.append({"kind": "pushforward", "energy_original": push.original.energy,
                 "energy_lifted": push.lifted.energy, "ratio": push.ratio,
                 "bound_factor": push.bound_factor, "within_bound": push.ok,
                 "max_segment": push.max_segment, "seed": args.seed})
    run.emit("energy", rows)


def cmd_resistance(args, run: Run):
    radii = [int(v) for v in _parse_grid(args.radii)]
    if args.infile:
        s = read_any(args.infile)
        if isinstance(s, GoodnessField):
            raise ConfigError("resistance expects a sample snapshot or --window")
        field = s.vacant_field()
        lab = components(field, adjacency="nearest")
        if lab.n_components == 0:
            raise ConfigError("vacant set is empty; no cluster to measure")
        k = int(np.argmax(lab.sizes)) + 1
        sites_arr = s.window.sites_array()[(lab.labels == k).ravel()]
        cluster = [tuple(int(c) for c in row) for row in sites_arr]
        center = min(cluster)
        d = s.window.d
    else:
        window = _window_from_args(args)
        cluster = list(window.sites())
        center = (0,) * window.d
        d = window.d
    curve = effective_resistance(cluster, center, radii)
    run.emit("resistance", [{"d": d, "radius": n, "r_eff": v, "center": json.dumps(center)}
                            for n, v in zip(curve.radii, curve.values)])


def cmd_decouple(args, run: Run):
    params = ScaleParams(d=args.d, l0=args.l0, L0=args.L0, lam=args.lam,
                         C1=args.C1, c0=args.c0, c1=args.c1,
                         c_boundary=args.c_boundary)
    f = sprinkle_factor(params)
    rows = [{"kind": "sprinkle", "f": f.value, "log_f": f.log_value,
             "tail_bound": f.tail_bound, "cutoff": f.cutoff,
             "l0_hypothesis_ok": params.l0_hypothesis_ok,
             "L0_hypothesis_ok": params.L0_hypothesis_ok}]
    for n in range(args.n_max + 1):
        rep = decoupling_rhs(params, args.p0, n, args.u)
        rows.append({"kind": "rhs", "n": n, "log_rhs": rep.log_rhs,
                     "rhs": rep.rhs if math.isfinite(rep.rhs) else None,
                     "eps": rep.eps, "u_lowered": rep.u_lowered,
                     "dominated_by_exp": rep.dominated_by_exp,
                     "planner_seed_ok": rep.planner_seed_ok,
                     "planner_eps_ok": rep.planner_eps_ok})
    run.emit("decouple", rows)


def cmd_stats(args, run: Run):
    obj = read_any(args.infile)
    if isinstance(obj, GoodnessField):
        stats = bad_clusters(obj)
        row = {"type": "goodness", "d": obj.d, "u": obj.u,
               "good_fraction": obj.good_fraction(),
               "n_bad_clusters": len(stats.sizes),
               "max_bad_cluster": stats.max_size}
    else:
        lab = components(obj.vacant_field(), adjacency="nearest")
        row = {"type": "sample", "d": obj.window.d, "u": obj.u,
               "mode": obj.mode, "seed": obj.seed, "stream": obj.stream,
               "occupied_fraction": float(obj.occupancy().mean()),
               "vacant_components": lab.n_components,
               "largest_vacant_fraction": lab.largest_fraction()}
    run.emit("stats", [row])
    print(json.dumps(row, sort_keys=True))


# ---------------------------------------------------------------------------
# parser

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="interlace",
        description="simulation and analysis toolkit for random interlacements")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, window=True):
        p.add_argument("--config", help="INI file with a [run] section; flags win")
        p.add_argument("--d", type=int, default=3, help="ambient dimension")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "ndjson"), default="ndjson")
        p.add_argument("--green-cache", dest="green_cache",
                       help="GRNT file to reuse/store the Green table")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: INTERLACE_THREADS or 1)")
        if window:
            p.add_argument("--window", type=int, help="box window radius L")
            p.add_argument("--slab", type=int, help="slab window parameter n")

    p = sub.add_parser("sample", help="draw interlacement samples on a window")
    common(p)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--mode", default="exact", help="exact or truncate:R")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--save-snapshots", dest="save_snapshots", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("classify", help="good/bad classification of a slab sample")
    common(p)
    p.add_argument("--u", type=float, default=0.1)
    p.add_argument("--in", dest="infile", help="existing sample snapshot")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("scan-u", help="observable scan over a level grid")
    common(p)
    p.add_argument("--u-grid", dest="u_grid", required=True, help="lo:hi:step")
    p.add_argument("--observable", choices=("vacant_crossing", "largest_fraction"),
                   default="largest_fraction")
    p.add_argument("--crossing-L", dest="crossing_l", type=int, default=None)
    p.add_argument("--replicas", type=int, default=100)
    p.set_defaults(func=cmd_scan_u)

    p = sub.add_parser("reroute", help="reroute random paths through a goodness field")
    common(p, window=False)
    p.add_argument("--in", dest="infile", required=True, help="goodness snapshot")
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("--length", type=int, default=12)
    p.set_defaults(func=cmd_reroute)

    p = sub.add_parser("energy", help="path-ensemble energy and lift inflation")
    common(p, window=False)
    p.add_argument("--in", dest="infile", required=True, help="goodness snapshot")
    p.add_argument("--paths", type=int, default=8)
    p.add_argument("--length", type=int, default=6)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("resistance", help="effective resistance curves")
    common(p)
    p.add_argument("--in", dest="infile", help="sample snapshot (largest vacant cluster)")
    p.add_argument("--radii", default="2:10:2", help="lo:hi:step")
    p.set_defaults(func=cmd_resistance)

    p = sub.add_parser("decouple", help="decoupling recursion calculator")
    common(p, window=False)
    p.add_argument("--l0", type=float, required=True)
    p.add_argument("--L0", type=float, required=True)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--p0", type=float, default=0.0)
    p.add_argument("--lam", type=float, default=3.0)
    p.add_argument("--C1", type=float, default=10.0)
    p.add_argument("--c0", type=float, default=2.0)
    p.add_argument("--c1", type=float, default=2.0)
    p.add_argument("--c-boundary", dest="c_boundary", type=float, default=6.0)
    p.add_argument("--n-max", dest="n_max", type=int, default=10)
    p.set_defaults(func=cmd_decouple)

    p = sub.add_parser("stats", help="summarize a snapshot file")
    common(p, window=False)
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_stats)

    return ap


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, parser)
        if args.threads is None:
            args.threads = thread_count(None)
        run = Run(args, args.command)
        args.func(args, run)
        run.finish()
        return EXIT_OK
    except (ConfigError, WindowTooSmallError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GreenCoverageError as exc:
        print(f"green coverage error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except (GreenAccuracyError, GreenValidationError, EquilibriumError,
            SamplerError, ResistanceSolveError, EnergyError,
            NoRerouteWitness, LiftError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SnapshotError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
