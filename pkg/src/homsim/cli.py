"""``homsim`` command line: simulate, analyze, reproduce, calibrate.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or stream
format error, 4 internal error.  ``HOMSIM_THREADS`` sets the default number
of simulation threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import re
import sys
import tempfile
import time
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import calibrate as cb
from . import figures as fg
from . import mcsim as mc
from . import timetag as tt

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.exc = exc


# ------------------------------------------------------------------ helpers

def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_stream(stream: tt.TimeTagStream, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            tt.write_stream(stream.header, stream.records, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resolve_config(arg: str) -> tuple[Path, mc.ExperimentConfig]:
    """A config path, or the name of a bundled preset (``paper_or``, ``paper_eit``)."""
    p = Path(arg)
    if not p.exists():
        bundled = cb.DATA_DIR / "presets" / f"{Path(arg).stem}.json"
        if bundled.exists() and p.parent == Path("."):
            p = bundled
        else:
            raise FileNotFoundError(f"config {arg!r} not found")
    return p, mc.load_config(p)


def parse_duration(text: str) -> float:
    """``500ns``, ``0.5us`` or a bare number of ns."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*(ns|us|ps)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"cannot parse duration {text!r}")
    v = float(m.group(1))
    return v * {"ns": 1.0, "us": 1000.0, "ps": 1e-3, None: 1.0}[m.group(2)]


def parse_window(text: str):
    """``START:STOP`` (ns) for an explicit window, else a width placed by policy."""
    if ":" in text:
        a, b = text.split(":", 1)
        return (parse_duration(a), parse_duration(b))
    return parse_duration(text)


def _json_default(x):
    if is_dataclass(x):
        return asdict(x)
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, bytes):
        return x.hex()
    raise TypeError(type(x).__name__)


def write_manifest(path, **fields) -> dict:
    doc = {
        "tool": "homsim",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **fields,
    }
    atomic_write(path, json.dumps(doc, indent=2, default=_json_default, sort_keys=True) + "\n")
    return doc


def write_tables(out_dir: Path, prefix: str, tables: dict, fmt: str) -> list[str]:
    written = []
    for name, rows in tables.items():
        stem = f"{prefix}_{name}" if prefix else name
        if fmt in ("csv", "both"):
            p = out_dir / f"{stem}.csv"
            atomic_write(p, an.table_csv(name, rows))
            written.append(str(p))
        if fmt in ("json", "both"):
            p = out_dir / f"{stem}.json"
            atomic_write(p, an.table_json(name, rows))
            written.append(str(p))
    return written


def _lineage(stream: tt.TimeTagStream) -> dict | None:
    cfg = stream.header.metadata.get("config")
    if cfg is None:
        return None
    cfg = json.loads(json.dumps(cfg))
    for k in ("distinguishable_delay", "seed", "n_trials"):
        cfg.pop(k, None)
    cfg.get("wcs_source", {}).pop("mean_n", None)
    return cfg


# ----------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    path, cfg = resolve_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.trials is not None:
        over["n_trials"] = args.trials
    if args.indistinguishable:
        over["distinguishable_delay"] = 0.0
    elif args.delay is not None:
        over["distinguishable_delay"] = args.delay
    if over:
        cfg = cfg.with_(**over)
    out = Path(args.out)
    t0 = time.perf_counter()
    stream = mc.run(cfg, args.threads)
    dt = time.perf_counter() - t0
    atomic_write_stream(stream, out)
    rate = cfg.n_trials / dt if dt > 0 else float("inf")
    print(f"simulated {cfg.n_trials} trials in {dt:.2f} s ({rate:.3g} trials/s), {len(stream)} records -> {out}")
    manifest = Path(str(out) + ".manifest.json")
    write_manifest(
        manifest,
        command="simulate",
        config_path=str(path),
        config_fingerprint=cfg.fingerprint().hex(),
        config_file_sha256=hashlib.sha256(path.read_bytes()).hexdigest(),
        seed=cfg.seed,
        n_trials=cfg.n_trials,
        threads=args.threads or mc.default_workers(),
        outputs=[str(out)],
        n_records=len(stream),
        wall_clock_s=dt,
        trials_per_s=rate,
    )
    return EXIT_OK


def _window_for(width_or_window, ind: tt.TimeTagStream, policy: str):
    if isinstance(width_or_window, tuple):
        return width_or_window
    return an.place_window(an.pulse_times(ind), width_or_window, policy)


def cmd_analyze(args) -> int:
    paths = args.streams
    if len(paths) % 2:
        raise mc.ConfigError("streams must come in IND DIST pairs")
    streams = [tt.load_stream(p) for p in paths]
    ind, dist = streams[0::2], streams[1::2]
    ref = _lineage(ind[0])
    for p, s in zip(paths, streams):
        lin = _lineage(s)
        if ref is not None and lin is not None and lin != ref:
            print(f"warning: {p} was produced by a different source/detector configuration", file=sys.stderr)
    out_dir = Path(args.out_dir)
    tables, meta = {}, {"inputs": paths}
    delay = args.delay
    if args.window is not None:
        win = _window_for(args.window, ind[0], args.policy)
        meta["window"] = win
        rows = []
        for k, (i, d) in enumerate(zip(ind, dist)):
            dd = an.stream_delay(d) if delay is None else delay
            op = an.extract_operating_point(d, win, an.shifted(win, dd))
            v = an.hom_visibility_measured(i, d, win, dd)
            rows.append({"pair": k, "p1": op.p1, "sigma_p1": op.sigma_p1, "alpha2": op.alpha2,
                         "sigma_alpha2": op.sigma_alpha2, "g2": op.g2zero, "sigma_g2": op.sigma_g2zero,
                         "ratio": op.ratio, "V": v.V, "sigma_V": v.sigma,
                         "Pc_ind": v.ind.Pc, "Pc_dist": v.dist.Pc})
        tables["window"] = rows
        if args.fit_eta:
            fit, psp, g2 = an.analyze_window(ind, dist, win, delay, args.epsilon_det, args.bs_transmittance)
            row = {"eta_hat": fit.eta_hat, "sigma_eta": fit.sigma_eta, "chi2": fit.chi2,
                   "n_points": len(fit.points), "p_sp": psp.value, "sigma_p_sp": psp.sigma,
                   "g2": g2.value, "sigma_g2": g2.sigma, "bs_transmittance": args.bs_transmittance}
            tables["eta_fit"] = [row]
            print(f"eta = {fit.eta_hat:.4f} +/- {fit.sigma_eta:.4f} in window {win[0]:.1f}-{win[1]:.1f} ns")
    if args.sweep:
        tables["sweep"] = an.window_sweep(ind, dist, args.sweep, args.policy, delay, args.epsilon_det,
                                          args.bs_transmittance)
    if args.bins is not None:
        span = args.span if args.span is not None else (args.window if args.window is not None else 500.0)
        win = _window_for(span, ind[0], args.policy)
        tables["time_resolved"] = an.time_resolved_visibility(ind[0], dist[0], args.bins, win, delay)
    if not tables:
        raise mc.ConfigError("nothing to do: give --window, --sweep or --bins")
    written = write_tables(out_dir, args.prefix, tables, args.format)
    write_manifest(out_dir / f"{args.prefix or 'analysis'}.manifest.json", command="analyze",
                   outputs=written, **meta,
                   input_fingerprints=[s.header.config_fingerprint.hex() for s in streams])
    for w in written:
        print(w)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out_dir = Path(args.out_dir)
    t0 = time.perf_counter()
    try:
        res = fg.RUNNERS[args.figure](n_trials=args.trials, workers=args.threads)
    except Exception as exc:  # report the failing stage
        raise StageError(f"reproduce {args.figure}", exc) from exc
    dt = time.perf_counter() - t0
    tables = dict(res.tables)
    tables["comparison"] = res.comparison
    written = write_tables(out_dir, args.figure, tables, args.format)
    write_manifest(out_dir / f"{args.figure}.manifest.json", command="reproduce", figure=args.figure,
                   outputs=written, wall_clock_s=dt, meta=res.meta, passed=res.passed)
    for r in res.comparison:
        status = "PASS" if r.passed else "FAIL"
        ref = "" if np.isnan(r.published) else f" published {r.published:g} +/- {r.tolerance:g},"
        print(f"[{status}] {r.quantity}:{ref} simulated {r.simulated:.4g} (sigma {r.sigma:.2g}) {r.note}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out = Path(args.out_dir) if args.out_dir else cb.DATA_DIR
    notes = cb.build_presets(out)
    print(json.dumps({k: notes[k] for k in ("or", "eit")}, indent=2, default=_json_default))
    print(f"presets written to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="homsim",
        description="HOM interference between a single-photon source and a weak coherent state: "
        "simulation, analysis and figure reproduction.",
        epilog="exit codes: 0 ok, 2 config/usage error, 3 I/O or stream format error, 4 internal error. "
        f"{mc.THREADS_ENV} sets the default thread count.",
    )
    p.add_argument("--version", action="version", version=f"homsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the Monte Carlo and write a time-tag stream")
    s.add_argument("config", help="JSON config path or bundled preset name (paper_or, paper_eit)")
    s.add_argument("--out", "-o", required=True, help="output stream path")
    s.add_argument("--seed", type=int, help="override the configured seed")
    s.add_argument("--trials", type=int, help="override the configured number of trials")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--delay", type=parse_duration, help="override the distinguishing delay (e.g. 1500ns)")
    g.add_argument("--indistinguishable", action="store_true", help="force zero delay")
    s.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${mc.THREADS_ENV} or 1)")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="estimate g2, visibility, eta from stream pairs")
    a.add_argument("streams", nargs="+", metavar="IND DIST", help="indistinguishable/distinguishable stream pairs")
    a.add_argument("--window", type=parse_window, help="window width (e.g. 500ns) or START:STOP in ns")
    a.add_argument("--fit-eta", action="store_true", help="fit eta over all pairs in --window")
    a.add_argument("--sweep", type=lambda t: [parse_duration(x) for x in t.split(",")],
                   help="comma-separated window widths for a window sweep")
    a.add_argument("--bins", type=parse_duration, help="bin width for time-resolved visibility (e.g. 20ns)")
    a.add_argument("--span", type=parse_window, help="region binned by --bins (default: --window or 500ns)")
    a.add_argument("--policy", choices=("center", "max_count"), default="center", help="window placement")
    a.add_argument("--delay", type=parse_duration, help="distinguishing delay (default: from stream header)")
    a.add_argument("--epsilon-det", type=float, default=an.EPSILON_DET, help="detection efficiency for P_SP")
    a.add_argument("--bs-transmittance", type=float, default=0.5, help="beamsplitter T assumed by the eta fit")
    a.add_argument("--format", choices=("csv", "json", "both"), default="both")
    a.add_argument("--out-dir", default=".", help="directory for result tables")
    a.add_argument("--prefix", default="", help="file name prefix for result tables")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="regenerate figure data with fixed seeds")
    r.add_argument("figure", choices=fg.FIGURES)
    r.add_argument("--out-dir", default=".", help="directory for tables and manifest")
    r.add_argument("--trials", type=int, help="trials per simulated run (default: per-figure)")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--format", choices=("csv", "json", "both"), default="both")
    r.set_defaults(func=cmd_reproduce)

    c = sub.add_parser("calibrate", help="recompute the bundled mode and source presets")
    c.add_argument("--out-dir", help="target directory (default: the bundled data directory)")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except mc.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, tt.TimeTagFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        code = EXIT_IO if isinstance(exc.exc, (OSError, tt.TimeTagFormatError)) else EXIT_INTERNAL
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
