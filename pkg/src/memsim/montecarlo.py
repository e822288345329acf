"""Gaussian process/mismatch sampling and batched robustness runs.

A run draws one process offset per parameter, shared by every OTA, plus an
independent mismatch offset per OTA.  Vth offsets are added directly; oxide
thickness and geometry offsets are mapped onto the lumped gain k.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import ConfigError, EmulatorConfig
from .devices import DeviceDomainError, OtaParams, k_from_geometry, ota_gm
from .engine import NonFiniteError, SourceSpec, integrate_batch, steady_window
from .fingerprints import PINCH_THRESHOLD, SETTLE_PERIODS, loop_metrics

log = logging.getLogger(__name__)

PARAMS = ("tox", "Vth", "L", "W")

#: Nominal OTA input-pair geometry (m) that the deviations perturb.
NOMINAL_GEOMETRY = {"tox": 4.08e-9, "W": 12e-6, "L": 375e-9}

#: Junction deviation rows with no carrier in the behavioral model.
IGNORED_PARAMS = ("Cjn", "Cjswn", "Cjswgn", "Cgon", "hdifn")

MAX_REDRAWS = 100
HIST_BINS = 20


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviationSpec:
    """(process_sigma, mismatch_sigma) per parameter, SI units."""

    tox: tuple[float, float] = (0.2e-9, 0.02e-9)
    Vth: tuple[float, float] = (0.04, 0.004)
    L: tuple[float, float] = (2e-9, 0.2e-9)
    W: tuple[float, float] = (2e-9, 0.2e-9)
    n_runs: int = 200
    seed: int = 0
    geometry: dict = field(default_factory=lambda: dict(NOMINAL_GEOMETRY))

    def __post_init__(self):
        for p in PARAMS:
            pair = tuple(float(v) for v in getattr(self, p))
            if len(pair) != 2 or min(pair) < 0:
                raise ConfigError(f"{p}: need two non-negative sigmas, got {pair}")
            object.__setattr__(self, p, pair)
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def combined_sigma(self, name: str) -> float:
        p, m = getattr(self, name)
        return math.hypot(p, m)

    @property
    def is_degenerate(self) -> bool:
        return all(s == 0 for p in PARAMS for s in getattr(self, p))


def _rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index,)))


def _perturb(ota: OtaParams, spec: DeviationSpec, proc: dict, mism: dict) -> OtaParams:
    off = {p: proc[p] + mism[p] for p in PARAMS}
    g = spec.geometry
    k = k_from_geometry(ota.k, g["tox"], g["W"], g["L"],
                        g["tox"] + off["tox"], g["W"] + off["W"], g["L"] + off["L"])
    return replace(ota, k=k, Vth=ota.Vth + off["Vth"])


def sample_variation(base: EmulatorConfig, spec: DeviationSpec, run_index: int) -> EmulatorConfig:
    """Deterministic perturbed copy of ``base`` for one Monte Carlo run."""
    if spec.is_degenerate:
        return base
    rng = _rng(spec.seed, run_index)
    for _ in range(MAX_REDRAWS):
        z = rng.standard_normal(3 * len(PARAMS))
        proc = {p: getattr(spec, p)[0] * z[i] for i, p in enumerate(PARAMS)}
        m3 = {p: getattr(spec, p)[1] * z[4 + i] for i, p in enumerate(PARAMS)}
        m4 = {p: getattr(spec, p)[1] * z[8 + i] for i, p in enumerate(PARAMS)}
        try:
            ota3 = _perturb(base.ota3, spec, proc, m3)
            ota4 = _perturb(base.ota4, spec, proc, m4)
            ota_gm(ota3)
            ota_gm(ota4)
        except (DeviceDomainError, ValueError):
            continue
        return base.replace(ota3=ota3, ota4=ota4)
    raise SamplingError(f"run {run_index}: no valid draw after {MAX_REDRAWS} attempts")


@dataclass(frozen=True)
class McRecord:
    run_index: int
    Vth: float
    k: float
    Vth4: float
    k4: float
    pinch_residual: float = math.nan
    lobe_area_pos: float = math.nan
    lobe_area_neg: float = math.nan
    area_normalized: float = math.nan
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray


@dataclass
class McReport:
    records: list[McRecord]
    aggregates: dict
    pinched_fraction: float
    histograms: dict
    threshold: float
    n_failed: int

    def summary(self) -> dict:
        return {
            "n_runs": len(self.records),
            "n_failed": self.n_failed,
            "pinched_fraction": self.pinched_fraction,
            "threshold": self.threshold,
            "aggregates": self.aggregates,
        }


def _simulate_chunk(cfgs, src, n_periods, dt):
    f = src.f_min
    t_end = (n_periods + SETTLE_PERIODS) / f
    res = integrate_batch(cfgs, src, t_end, dt)
    out = []
    for r in res:
        if isinstance(r, NonFiniteError):
            out.append(r)
            continue
        try:
            out.append(loop_metrics(steady_window(r, f, n_periods)))
        except ValueError as exc:
            out.append(exc)
    return out


def _stats(x: np.ndarray) -> dict:
    if x.size == 0:
        return {"mean": math.nan, "sigma": math.nan}
    sigma = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return {"mean": float(np.mean(x)), "sigma": sigma}


def run_batch(base: EmulatorConfig, src: SourceSpec, spec: DeviationSpec,
              threshold: float = PINCH_THRESHOLD, n_periods: int = 1,
              dt: float | None = None, threads: int = 1, chunk: int = 50) -> McReport:
    """Sample, simulate and summarize ``spec.n_runs`` perturbed emulators.

    Runs are integrated in vectorized chunks; results are keyed by run
    index, so the report does not depend on ``threads`` or ``chunk``.
    """
    cfgs = [sample_variation(base, spec, i) for i in range(spec.n_runs)]
    groups = [list(range(s, min(s + chunk, len(cfgs)))) for s in range(0, len(cfgs), chunk)]

    def job(idx):
        return idx, _simulate_chunk([cfgs[i] for i in idx], src, n_periods, dt)

    results: dict[int, object] = {}
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(job, groups))
    else:
        done = [job(g) for g in groups]
    for idx, res in done:
        results.update(zip(idx, res))

    records = []
    for i, c in enumerate(cfgs):
        r = results[i]
        common = dict(run_index=i, Vth=c.ota3.Vth, k=c.ota3.k, Vth4=c.ota4.Vth, k4=c.ota4.k)
        if isinstance(r, Exception):
            records.append(McRecord(failed=True, error=str(r), **common))
        else:
            records.append(McRecord(pinch_residual=r.pinch_residual,
                                    lobe_area_pos=r.lobe_area_pos,
                                    lobe_area_neg=r.lobe_area_neg,
                                    area_normalized=r.area_normalized, **common))
    ok = [r for r in records if not r.failed]
    if len(ok) < len(records):
        log.warning("%d of %d Monte Carlo runs failed", len(records) - len(ok), len(records))
    cols = {name: np.array([getattr(r, name) for r in ok]) for name in
            ("Vth", "k", "Vth4", "k4", "pinch_residual", "area_normalized")}
    aggregates = {name: _stats(v) for name, v in cols.items()}
    pinched = float(np.mean(cols["pinch_residual"] < threshold)) if ok else 0.0
    hists = {}
    for name in ("Vth", "k"):
        counts, edges = np.histogram(cols[name], bins=HIST_BINS) if ok else (np.zeros(HIST_BINS, int), np.zeros(HIST_BINS + 1))
        hists[name] = Histogram(edges=edges, counts=counts)
    return McReport(records=records, aggregates=aggregates, pinched_fraction=pinched,
                    histograms=hists, threshold=threshold, n_failed=len(records) - len(ok))
