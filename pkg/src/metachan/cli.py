"""Command-line front end: ``metachan <spectrum|ems|simulate|validate> --config FILE``.

Exit codes: 0 ok, 1 config error, 2 analysis precondition failure, 3 step
budget exceeded, 4 validation failure.
"""

import argparse
import csv
import datetime
import hashlib
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_model,
    build_observables,
    initial_state,
    load_config,
)
from .hs_algebra import trace_distance
from .manifold import (
    ManifoldError,
    approximate_manifold,
    b_eigenprojectors,
    ems_candidates,
    ems_from_modes,
    ems_qubit,
    fixed_point_space,
)
from .spectral import NoMetastableRegion, SpectralError, classify_spectrum, spectral_decompose
from .trajectories import (
    BudgetExceeded,
    InvalidMapsError,
    classify_and_average,
    find_peaks,
    polarization_histogram,
    run_ensemble,
)

log = logging.getLogger("metachan")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PRECONDITION = 2
EXIT_BUDGET = 3
EXIT_VALIDATION = 4

BIORTH_TOL = 1e-8
COMMUTE_TOL = 1e-8
COMPLETENESS_TOL = 1e-10
VALIDITY_TOL = 1e-10


class PreconditionError(RuntimeError):
    pass


def fmt(x):
    """CSV number format: integers verbatim, floats with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def flat_complex(a):
    return [[float(z.real), float(z.imag)] for z in np.asarray(a).reshape(-1)]


class AtomicOutput:
    """Collects files in a staging directory and renames them into place on success."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.files = []

    def __enter__(self):
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".metachan-", dir=self.out.parent))
        return self

    def write(self, name, text):
        with open(self.tmp / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for name in self.files:
                    os.replace(self.tmp / name, self.out / name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def manifest(cfg, command, files, started, extra=None):
    text = json.dumps(cfg.to_dict(), sort_keys=True)
    out = {
        "command": command,
        "config_hash": hashlib.sha256(text.encode()).hexdigest(),
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "files": list(files),
        "seed": cfg.run.seed,
    }
    if extra:
        out.update(extra)
    return out


def _spectrum_rows(sd, classes, gamma):
    for i, (lam, cls) in enumerate(zip(sd.eigenvalues, classes)):
        yield [gamma, i + 1, float(lam.real), float(lam.imag), float(abs(lam)), str(cls)]


def _analyse(natural, cfg):
    sd = spectral_decompose(natural)
    if not sd.diagonalizable:
        raise PreconditionError(
            f"channel is not diagonalizable (eigenvector condition number {sd.cond_eigvec:.3e}, residual {sd.residual:.3e})"
        )
    classes, region = classify_spectrum(sd, cfg.run.eps_unit, cfg.run.l)
    return sd, classes, region


def cmd_spectrum(cfg, out=None, threads=1):
    started = _now()
    gs = cfg.run.gamma_scan
    gammas = [None] if gs is None else list(np.linspace(gs["start"], gs["stop"], gs["num"]))
    rows, regions = [], []
    for g in gammas:
        built = build_model(cfg.model, gamma=g)
        sd, classes, region = _analyse(built.natural, cfg)
        gamma = built.description.get("gamma", float("nan")) if g is None else float(g)
        rows.extend(_spectrum_rows(sd, classes, gamma))
        regions.append({"gamma": gamma, "region": None if region is None else region.as_dict()})
    region_doc = regions[0] if gs is None else {"scan": regions}
    with AtomicOutput(out or cfg.output) as ao:
        ao.write("spectrum.csv", csv_text(["gamma", "index", "re", "im", "modulus", "class"], rows))
        ao.write("region.json", json_text(region_doc))
        ao.write("manifest.json", json_text(manifest(cfg, "spectrum", ao.files + ["manifest.json"], started)))
    return EXIT_OK


def cmd_ems(cfg, out=None, threads=1, modes=None):
    """EMS and duals; ``modes=(R2, L2)`` injects the qubit eigenoperators directly."""
    started = _now()
    built = build_model(cfg.model)
    if modes is not None:
        mm = ems_from_modes(*modes)
        doc = {"approximate": False, "source": "injected", **mm.as_dict()}
    else:
        sd, classes, region = _analyse(built.natural, cfg)
        if region is None:
            raise NoMetastableRegion("no metastable region found; set run.l to override")
        fixed = sum(c.kind == "fixed" for c in classes)
        if built.dim == 2 and region.l == 2 and fixed == 1:
            mm = ems_qubit(sd)
            doc = {"approximate": False, "source": "qubit", **mm.as_dict()}
        else:
            seeds = b_eigenprojectors(built.B) if built.B is not None else [np.diag(np.eye(built.dim)[j]) for j in range(built.dim)]
            cands = ems_candidates(built.natural, region, seeds)
            doc = {"approximate": True, "source": "midpoint", "m_star": region.midpoint}
            if len(seeds) == region.l:
                doc.update(approximate_manifold(sd, built.natural, region, seeds).as_dict())
            doc["candidates"] = [flat_complex(c) for c in cands]
            doc["candidate_purity"] = [float(np.trace(c @ c).real) for c in cands]
            doc["pairwise_trace_distance"] = [
                [trace_distance(a, b) for b in cands] for a in cands
            ]
        doc["region"] = region.as_dict()
    with AtomicOutput(out or cfg.output) as ao:
        ao.write("ems.json", json_text(doc))
        ao.write("manifest.json", json_text(manifest(cfg, "ems", ao.files + ["manifest.json"], started)))
    return EXIT_OK


def _rle(bits):
    bits = np.asarray(bits, dtype=np.int8)
    if bits.size == 0:
        return None, []
    change = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate([[0], change, [bits.size]])
    return int(bits[0]), np.diff(bounds).tolist()


def _plot_script(rounds, observables):
    lines = [
        "# gnuplot script generated by metachan",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,600",
    ]
    for k in rounds:
        lines += [
            f"set output 'histogram_m{k}.png'",
            f"set title 'measurement polarization, m = {k}'",
            "set xlabel 'X'; set ylabel 'count'",
            "set style fill solid 0.6",
            f"plot 'histogram_m{k}.csv' using 3:4 with boxes notitle",
        ]
    for name in observables:
        lines += [
            f"set output 'class_means_{name}.png'",
            f"set title 'class means of {name}'",
            "set xlabel 'm'; set ylabel 'mean'; set logscale x",
            f"plot for [c=0:9] 'class_means.csv' using (column(5) eq '{name}' && column(2) == c ? column(1) : 1/0):6 with linespoints title sprintf('class %d', c)",
            "unset logscale x",
        ]
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg, out=None, threads=1):
    started = _now()
    run = cfg.run
    built = build_model(cfg.model)
    rho0 = initial_state(run.rho0, built)
    observables = build_observables(run.observables, built)
    cks = sorted(set(run.rounds) | set(run.checkpoints))
    if run.window is not None:
        cks = sorted(set(cks) | set(w for w in run.window if w > 0))
    ens = run_ensemble(
        built.maps,
        rho0,
        max(cks),
        run.samples,
        cks,
        run.seed,
        observables,
        threads=threads,
        store_outcomes=run.emit_trajectories,
        step_budget=run.step_budget,
        params={"model": cfg.model["type"]},
    )
    peaks = {}
    with AtomicOutput(out or cfg.output) as ao:
        for k in run.rounds:
            window = None
            if run.window is not None:
                start, end = run.window
                window = (start, min(end, k))
                if window[1] <= window[0]:
                    window = None
            hist = polarization_histogram(ens, bins=run.bins, window=window, m=None if window else k)
            loc, height = find_peaks(hist)
            peaks[str(k)] = {"count": int(len(loc)), "locations": loc.tolist(), "heights": height.tolist(),
                             "bins": int(len(hist.counts)), "window": list(window) if window else None}
            means = np.divide(hist.sums, hist.counts, out=np.full(len(hist.counts), np.nan), where=hist.counts > 0)
            rows = [
                [hist.bin_edges[i], hist.bin_edges[i + 1], hist.centers[i], int(hist.counts[i]), means[i]]
                for i in range(len(hist.counts))
            ]
            ao.write(f"histogram_m{k}.csv", csv_text(["bin_lo", "bin_hi", "center", "count", "mean_x"], rows))
        rows = []
        for obs in observables:
            curves = classify_and_average(ens, run.thresholds, obs.name)
            b = curves.boundaries
            for j, r in enumerate(curves.rounds):
                for c in range(len(b) - 1):
                    rows.append([int(r), c, b[c], b[c + 1], obs.name, curves.means[c, j], int(curves.populations[c, j])])
        ao.write("class_means.csv", csv_text(["round", "class", "lo", "hi", "observable", "mean", "population"], rows))
        ao.write("peaks.json", json_text(peaks))
        if run.emit_trajectories:
            lines = []
            bits = ens.outcomes()
            x = ens.polarization()
            for i in range(ens.n_samples):
                first, runs = _rle(bits[i])
                rec = {
                    "index": i,
                    "seed": [run.seed, i],
                    "first": first,
                    "runs": runs,
                    "X": float(x[i]),
                    "observables": {o.name: ens.observables[o.name][i].tolist() for o in observables},
                    "checkpoints": ens.checkpoints.tolist(),
                }
                lines.append(json.dumps(rec, sort_keys=True))
            ao.write("trajectories.jsonl", "\n".join(lines) + "\n")
        ao.write("plot.gp", _plot_script(run.rounds, [o.name for o in observables]))
        extra = {"threads": threads, "samples": run.samples, "rounds": list(run.rounds), "checkpoints": cks}
        ao.write("manifest.json", json_text(manifest(cfg, "simulate", ao.files + ["manifest.json"], started, extra)))
    return EXIT_OK


def _completeness_residual(maps, d, n_random=8, seed=0):
    rng = np.random.default_rng(seed)
    states = [np.eye(d) / d] + [np.diag(np.eye(d)[j]) for j in range(d)]
    for _ in range(n_random):
        g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rho = g @ g.conj().T
        states.append(rho / np.trace(rho).real)
    worst = 0.0
    for rho in states:
        v = rho.reshape(-1)
        total = sum(np.trace((e @ v).reshape(d, d)).real for e in maps.maps)
        worst = max(worst, abs(total - 1.0))
    return worst


def cmd_validate(cfg, out=None, threads=1):
    started = _now()
    built = build_model(cfg.model)
    report, branch_min = built.maps.validate(VALIDITY_TOL)
    doc = {"channel": report.as_dict(), "branch_min_choi_eigenvalue": branch_min}
    failures = list(report.failures())
    if min(branch_min) < -VALIDITY_TOL:
        failures.append("branch_completely_positive")
    if "kraus_tp_residual" in built.description:
        doc["kraus_tp_residual"] = built.description["kraus_tp_residual"]
    doc["branch_completeness_residual"] = _completeness_residual(built.maps, built.dim)
    if doc["branch_completeness_residual"] > COMPLETENESS_TOL and "trace_preserving" not in failures:
        failures.append("branch_completeness")
    sd = spectral_decompose(built.natural)
    doc["diagonalizable"] = sd.diagonalizable
    doc["eigenvector_condition"] = sd.cond_eigvec
    doc["biorthonormality_residual"] = sd.biorthonormality_residual() if sd.diagonalizable else None
    if sd.diagonalizable and doc["biorthonormality_residual"] > BIORTH_TOL:
        failures.append("biorthonormality")
    doc["fixed_point_commutation_residual"] = None
    doc["fixed_point_invariance_residual"] = None
    if report.unital and report.ok and built.kraus:
        try:
            fps = fixed_point_space(sd, built.natural, kraus=())
            doc["fixed_point_dimension"] = fps.dimension
            doc["fixed_point_invariance_residual"] = fps.fixed_residual(built.natural)
            doc["fixed_point_commutation_residual"] = fps.commutation_residual(built.kraus)
            if doc["fixed_point_commutation_residual"] > COMMUTE_TOL:
                failures.append("fixed_point_commutation")
        except ManifoldError as exc:
            failures.append("fixed_point_commutation")
            doc["fixed_point_error"] = str(exc)
    doc["failures"] = failures
    doc["ok"] = not failures
    with AtomicOutput(out or cfg.output) as ao:
        ao.write("validity.json", json_text(doc))
        ao.write("manifest.json", json_text(manifest(cfg, "validate", ao.files + ["manifest.json"], started)))
    if failures:
        print(f"validation failed: {', '.join(failures)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "ems": cmd_ems,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def default_threads():
    raw = os.environ.get("METACHAN_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"METACHAN_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("METACHAN_THREADS must be at least 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="metachan", description="Metastability analysis of sequential quantum channels.")
    p.add_argument("--version", action="version", version=f"metachan {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config (schema 1)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override output.dir")
    p.add_argument("--threads", type=int, help="worker threads (default: $METACHAN_THREADS or 1)")
    p.add_argument("--emit-trajectories", action="store_true", help="write trajectories.jsonl")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_command(command, cfg, out=None, threads=1):
    """Run one command and map failures to exit codes."""
    try:
        return COMMANDS[command](cfg, out=out, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, SpectralError, NoMetastableRegion, ManifoldError) as exc:
        print(f"analysis precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except BudgetExceeded as exc:
        print(f"step budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InvalidMapsError as exc:
        print(f"invalid maps: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config).with_overrides(args.seed, args.out, args.emit_trajectories)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(args.command, cfg, threads=threads)


if __name__ == "__main__":
    sys.exit(main())
