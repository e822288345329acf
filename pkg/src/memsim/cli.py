"""Command line front end: ``memsim run|sweep|mc|am|compose``.

Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, canonical, parse_config
from .core import SingularityError, derive_coefficients
from .devices import DeviceDomainError
from .engine import InsufficientLengthError, Trace, default_dt, integrate, steady_window
from .fingerprints import (
    SETTLE_PERIODS,
    NoCrossingError,
    area_frequency_profile,
    loop_metrics,
)

log = logging.getLogger("memsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

TRACE_HEADER = ("time_s", "vin_V", "phi_Wb", "rho_Wbs", "q_C", "i_A", "linv_perH")


def _fmt(x) -> str:
    return "%.17g" % x


def write_csv(path: Path, header, rows) -> None:
    """Write a numeric table with 17 significant digits and LF endings."""
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace(path: Path, tr: Trace) -> None:
    write_csv(path, TRACE_HEADER, tr.table())


def read_trace(path: Path) -> Trace:
    """Load a trace CSV written by :func:`write_trace`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    return Trace(dt=float(t[1] - t[0]), t=t, vin=data[:, 1], phi=data[:, 2], rho=data[:, 3],
                 q=data[:, 4], i=data[:, 5], linv=data[:, 6])


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_summary(path: Path, exp: ExperimentConfig, metrics: dict) -> None:
    doc = {
        "tool": "memsim",
        "version": __version__,
        "experiment": exp.experiment,
        "config_hash": exp.config_hash,
        "metrics": _clean(metrics),
    }
    if exp.ignored:
        doc["ignored_parameters"] = list(exp.ignored)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _steady_periods(exp: ExperimentConfig) -> int:
    return int(exp.sim.get("steady_periods", 1))


def _t_end(exp: ExperimentConfig, src) -> float:
    if "t_end" in exp.sim:
        return float(exp.sim["t_end"])
    if src.kind == "samples":
        return src.sample_dt * (len(src.values) - 1)
    return (_steady_periods(exp) + SETTLE_PERIODS) / src.f_min


def trace_metrics(tr: Trace, src, n_periods: int) -> dict:
    """Loop metrics of the steady window, or None when the trace has none."""
    if src.kind == "samples":
        return {}
    try:
        return loop_metrics(steady_window(tr, src.f_min, n_periods)).as_dict()
    except (InsufficientLengthError, NoCrossingError, ValueError) as exc:
        log.warning("no loop metrics: %s", exc)
        return {}


def _coeffs(cfg) -> dict:
    co = derive_coefficients(cfg)
    return {"a": co.a, "b": co.b, "mode_sign": co.mode_sign, "Rx2": cfg.Rx2}


def cmd_run(exp: ExperimentConfig, out: Path, threads: int) -> dict:
    src = exp.source
    dt = exp.sim.get("dt")
    tr = integrate(exp.emulator, src, _t_end(exp, src), dt)
    write_trace(out / "trace.csv", tr)
    return {"coefficients": _coeffs(exp.emulator), "loop": trace_metrics(tr, src, _steady_periods(exp)),
            "samples": len(tr), "dt": tr.dt}


def cmd_sweep(exp: ExperimentConfig, out: Path, threads: int) -> dict:
    b = exp.block
    src = exp.source
    if src.kind != "sine":
        raise ConfigError("/source: sweeps need a sine source")
    amp = src.tones[0].amplitude
    prof = area_frequency_profile(exp.emulator, amp, b["frequencies"], b.get("hold", "C_fixed"),
                                  b.get("c1f_product", 75e-6), src.dc_flux_removal)
    write_csv(out / "sweep.csv", ("f_Hz", "area_normalized", "pinch_residual"),
              [(p.f, p.area_normalized, p.pinch_residual) for p in prof.points])
    tr = integrate(exp.emulator, src, _t_end(exp, src), exp.sim.get("dt"))
    write_trace(out / "trace.csv", tr)
    return {"hold": prof.hold.value, "monotone": prof.monotone,
            "points": [p.__dict__ for p in prof.points],
            "coefficients": _coeffs(exp.emulator)}


def cmd_mc(exp: ExperimentConfig, out: Path, threads: int) -> dict:
    from .montecarlo import PARAMS, DeviationSpec, run_batch

    b = exp.block
    dev = b.get("deviations", {})
    kw = {p: tuple(dev[p]) for p in PARAMS if p in dev}
    if "geometry" in b:
        kw["geometry"] = dict(b["geometry"])
    spec = DeviationSpec(n_runs=b.get("n_runs", 200), seed=b.get("seed", 0), **kw)
    rep = run_batch(exp.emulator, exp.source, spec, threshold=b.get("threshold", 0.05),
                    n_periods=_steady_periods(exp), dt=exp.sim.get("dt"), threads=threads)
    cols = ("run_index", "Vth", "k", "Vth4", "k4", "pinch_residual", "lobe_area_pos",
            "lobe_area_neg", "area_normalized", "failed")
    write_csv(out / "mc_records.csv", cols,
              [tuple(float(getattr(r, c)) for c in cols) for r in rep.records])
    for name, h in rep.histograms.items():
        write_csv(out / f"hist_{name}.csv", ("bin_lo", "bin_hi", "count"),
                  list(zip(h.edges[:-1], h.edges[1:], h.counts)))
    tr = integrate(exp.emulator, exp.source, _t_end(exp, exp.source), exp.sim.get("dt"))
    write_trace(out / "trace.csv", tr)
    summary = rep.summary()
    summary["configured_sigma"] = {p: spec.combined_sigma(p) for p in PARAMS}
    summary["failures"] = {r.run_index: r.error for r in rep.records if r.failed}
    return summary


def cmd_am(exp: ExperimentConfig, out: Path, threads: int) -> dict:
    from .am import AmConfig, BiquadSpec, analyze

    b = dict(exp.block)
    n_periods = b.pop("n_periods", 4)
    kw = {k: b[k] for k in ("Am", "fm", "Ac", "fc", "A_L", "lo_phase") if k in b}
    fc = kw.get("fc", 1e6)
    fm = kw.get("fm", 50e3)
    bp = b.get("bpf", {})
    lp = b.get("lpf", {})
    kw["bpf"] = BiquadSpec("band_pass", bp.get("f0", fc), bp.get("Q", 5.0))
    kw["lpf"] = BiquadSpec("low_pass", lp.get("f0", fm), lp.get("Q", 1 / math.sqrt(2)))
    cfg = AmConfig(emulator=exp.emulator, **kw)
    t_end = exp.sim.get("t_end", (n_periods + 4) / cfg.fm)
    an = analyze(cfg, t_end, exp.sim.get("dt"), n_periods)
    write_trace(out / "trace.csv", an.s_am)
    write_trace(out / "demodulated.csv", an.demod.message_estimate)
    write_csv(out / "spectrum.csv", ("f_Hz", "magnitude_db"),
              zip(an.spectrum.f, an.spectrum.magnitude_db()))
    return an.summary()


def cmd_compose(exp: ExperimentConfig, out: Path, threads: int) -> dict:
    from .config import build_emulator
    from .network import CompositeSpec, simulate_composite

    b = exp.block
    second = build_emulator(b["second"]) if "second" in b else exp.emulator
    spec = CompositeSpec((exp.emulator, second), b["wiring"], exp.source)
    tr = simulate_composite(spec, _t_end(exp, exp.source), exp.sim.get("dt"))
    write_trace(out / "trace.csv", tr)
    return {"wiring": spec.wiring.value, "loop": trace_metrics(tr, exp.source, _steady_periods(exp))}


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "mc": cmd_mc, "am": cmd_am, "compose": cmd_compose}


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("MEMSIM_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"MEMSIM_THREADS must be an integer, got {env!r}")


def run_experiment(exp: ExperimentConfig, out_dir: str | Path, threads: int = 1) -> int:
    """Run one parsed experiment and write its outputs; returns an exit code."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics = COMMANDS[exp.experiment](exp, out, threads)
        write_summary(out / "summary.json", exp, metrics)
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ConfigError, DeviceDomainError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ArithmeticError, SingularityError, InsufficientLengthError, RuntimeError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memsim", description="Meminductor emulator simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment document")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    p.add_argument("--threads", type=int, help="worker threads (default: $MEMSIM_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = Path(args.config).read_bytes()
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    try:
        exp = parse_config(raw)
        if exp.experiment != args.command:
            raise ConfigError(f"config holds a {exp.experiment!r} experiment, command is {args.command!r}")
        if args.seed is not None:
            if exp.experiment != "mc":
                raise ConfigError("--seed applies to mc experiments only")
            doc = json.loads(canonical(exp.doc))
            doc["mc"]["seed"] = args.seed
            from .config import from_document

            exp = from_document(doc)
        threads = _threads(args.threads)
    except (ConfigError, DeviceDomainError) as exc:
        for line in str(exc).split("; "):
            log.error("%s", line)
        return EXIT_CONFIG
    return run_experiment(exp, args.out, threads)


if __name__ == "__main__":
    sys.exit(main())
