"""Hysteresis fingerprint metrics computed on steady-state trace windows."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, EmulatorConfig
from .engine import SourceSpec, Trace, integrate, steady_window

#: Periods simulated ahead of the analysed window.
SETTLE_PERIODS = 3

#: Default pinch threshold for non-simplified tiers.
PINCH_THRESHOLD = 0.05


class NoCrossingError(ValueError):
    """The flux never changes sign inside the window."""


class DegenerateRangeError(ValueError):
    """The rho excursion is too small to bin."""


class Hold(str, enum.Enum):
    C1F_CONST = "C1f_const"
    C_FIXED = "C_fixed"


@dataclass(frozen=True)
class LoopMetrics:
    pinch_residual: float
    lobe_area_pos: float
    lobe_area_neg: float
    area_normalized: float
    qr_spread: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _crossings(phi: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Indices k and fractions f locating flux zeros at phi[k] + f*(phi[k+1]-phi[k]).

    Samples within ``tol`` of zero relative to the peak count as zeros
    themselves (interpolated window edges rarely land on exactly 0.0).
    """
    near = np.abs(phi) <= tol * np.max(np.abs(phi))
    exact = np.nonzero(near)[0]
    strict = np.nonzero((phi[:-1] * phi[1:] < 0.0) & ~near[:-1] & ~near[1:])[0]
    frac = phi[strict] / (phi[strict] - phi[strict + 1])
    idx = np.concatenate([exact, strict])
    fr = np.concatenate([np.zeros(exact.size), frac])
    order = np.argsort(idx + fr, kind="stable")
    return idx[order], fr[order]


def _interp(y: np.ndarray, idx: np.ndarray, fr: np.ndarray) -> np.ndarray:
    nxt = np.minimum(idx + 1, len(y) - 1)
    return y[idx] + fr * (y[nxt] - y[idx])


def pinch_residual(w: Trace) -> float:
    """Largest |I| at a flux zero crossing, relative to the peak |I|."""
    idx, fr = _crossings(w.phi)
    if idx.size < 2:
        raise NoCrossingError(f"need >= 2 flux zero crossings, found {idx.size}")
    i_max = np.max(np.abs(w.i))
    if i_max == 0.0:
        return 0.0
    return float(min(1.0, np.max(np.abs(_interp(w.i, idx, fr))) / i_max))


def lobe_areas(w: Trace) -> tuple[float, float]:
    """Signed loop integral of I dphi split into the phi > 0 and phi < 0 lobes.

    Trapezoid segments that straddle a zero crossing are cut at the
    interpolated crossing so each part lands in its own lobe.
    """
    phi, cur = w.phi, w.i
    idx, _ = _crossings(phi)
    if idx.size < 2:
        raise NoCrossingError(f"need >= 2 flux zero crossings, found {idx.size}")
    p0, p1 = phi[:-1], phi[1:]
    i0, i1 = cur[:-1], cur[1:]
    seg = 0.5 * (i0 + i1) * (p1 - p0)
    mid = p0 + p1
    pos = np.where(mid > 0, seg, 0.0)
    neg = np.where(mid < 0, seg, 0.0)

    cut = np.nonzero(p0 * p1 < 0.0)[0]
    if cut.size:
        f = p0[cut] / (p0[cut] - p1[cut])
        ic = i0[cut] + f * (i1[cut] - i0[cut])
        first = 0.5 * (i0[cut] + ic) * (0.0 - p0[cut])
        second = 0.5 * (ic + i1[cut]) * p1[cut]
        pos[cut] = np.where(p0[cut] > 0, first, second)
        neg[cut] = np.where(p0[cut] > 0, second, first)
    return float(pos.sum()), float(neg.sum())


def q_rho_single_valuedness(w: Trace, bins: int = 100) -> float:
    """Worst vertical spread of q within equal-width rho bins, relative to the q range.

    Inside each bin q is detrended by its least-squares line in rho, so the
    slope of a single-valued curve across the bin does not count as spread;
    distinct branches passing through the same bin do.
    """
    rho, q = w.rho, w.q
    lo, hi = float(np.min(rho)), float(np.max(rho))
    if hi - lo < 1e-18:
        raise DegenerateRangeError(f"rho range {hi - lo:.3g} Wb*s is below 1e-18")
    q_range = float(np.max(q) - np.min(q))
    if q_range == 0.0:
        return 0.0
    x = (rho - lo) / (hi - lo)
    k = np.clip((x * bins).astype(int), 0, bins - 1)
    n = np.bincount(k, minlength=bins).astype(float)
    sx = np.bincount(k, x, bins)
    sy = np.bincount(k, q, bins)
    sxx = np.bincount(k, x * x, bins)
    sxy = np.bincount(k, x * q, bins)
    nz = np.maximum(n, 1.0)
    var = sxx / nz - (sx / nz) ** 2
    cov = sxy / nz - (sx / nz) * (sy / nz)
    slope = np.where(var > 1e-12 / bins**2, cov / np.where(var > 0, var, 1.0), 0.0)
    resid = q - (sy / nz)[k] - slope[k] * (x - (sx / nz)[k])
    rmax = np.full(bins, -np.inf)
    rmin = np.full(bins, np.inf)
    np.maximum.at(rmax, k, resid)
    np.minimum.at(rmin, k, resid)
    used = n > 0
    return float(np.max(rmax[used] - rmin[used]) / q_range)


def area_normalized(w: Trace, lobes: tuple[float, float] | None = None) -> float:
    pos, neg = lobe_areas(w) if lobes is None else lobes
    scale = np.max(np.abs(w.phi)) * np.max(np.abs(w.i))
    if scale == 0.0:
        return 0.0
    return float(0.5 * (abs(pos) + abs(neg)) / scale)


def loop_metrics(w: Trace) -> LoopMetrics:
    lobes = lobe_areas(w)
    return LoopMetrics(
        pinch_residual=pinch_residual(w),
        lobe_area_pos=abs(lobes[0]),
        lobe_area_neg=abs(lobes[1]),
        area_normalized=area_normalized(w, lobes),
        qr_spread=q_rho_single_valuedness(w),
    )


def analytic_lobe_area(b: float, amplitude: float, f: float) -> float:
    """Lobe magnitude (2/3)*b*Phi^3/omega of the simplified model under cosine drive."""
    w = 2 * math.pi * f
    return 2.0 / 3.0 * b * (amplitude / w) ** 3 / w


def steady_loop(cfg: EmulatorConfig, src: SourceSpec, n_periods: int = 1,
                dt: float | None = None) -> Trace:
    """Simulate and return the final ``n_periods`` of the slowest tone."""
    f = src.f_min
    tr = integrate(cfg, src, (n_periods + SETTLE_PERIODS) / f, dt)
    return steady_window(tr, f, n_periods)


@dataclass(frozen=True)
class ProfilePoint:
    f: float
    area_normalized: float
    pinch_residual: float
    lobe_area_pos: float
    lobe_area_neg: float


@dataclass(frozen=True)
class AreaProfile:
    points: tuple[ProfilePoint, ...]
    hold: Hold
    monotone: bool


def area_frequency_profile(cfg: EmulatorConfig, src_amplitude: float, freqs: Sequence[float],
                           hold: Hold | str = Hold.C_FIXED, c1f_product: float = 75e-6,
                           dc_flux_removal: bool = True) -> AreaProfile:
    """Normalized loop area versus drive frequency.

    ``hold=C1f_const`` rescales C1 to ``c1f_product / f`` at each point.
    ``monotone`` reports a strictly decreasing area.
    """
    hold = Hold(hold)
    freqs = [float(f) for f in freqs]
    if len(freqs) < 3:
        raise ConfigError("need at least 3 frequencies")
    if any(b <= a for a, b in zip(freqs, freqs[1:])):
        raise ConfigError("frequencies must be strictly increasing")
    pts = []
    for f in freqs:
        c = cfg.replace(C1=c1f_product / f) if hold is Hold.C1F_CONST else cfg
        src = SourceSpec.sine(src_amplitude, f, dc_flux_removal=dc_flux_removal)
        m = loop_metrics(steady_loop(c, src))
        pts.append(ProfilePoint(f, m.area_normalized, m.pinch_residual,
                                m.lobe_area_pos, m.lobe_area_neg))
    areas = [p.area_normalized for p in pts]
    mono = all(b < a for a, b in zip(areas, areas[1:]))
    return AreaProfile(tuple(pts), hold, mono)


def tone_phasor(w: Trace, f: float, column: str) -> complex:
    """Complex amplitude X of ``column`` ~ Re[X exp(j*2*pi*f*t)] over a window
    spanning an integer number of periods (rectangle rule, last sample dropped)."""
    x = np.asarray(w.column(column))[:-1]
    t = w.t[:-1]
    return complex(2.0 * np.mean(x * np.exp(-2j * math.pi * f * t)))


def linear_path_response(cfg: EmulatorConfig, omega: float) -> complex:
    """Analytic Vin -> VinB transfer (1 + s*C2*Rp) / (s*R1*C2)."""
    s = 1j * omega
    return (1.0 + s * cfg.C2 * cfg.Rp) / (s * cfg.R1 * cfg.C2)


def probe_linear_path(cfg: EmulatorConfig, f: float, amplitude: float = 0.14,
                      n_periods: int = 2) -> complex:
    """Measured Vin -> VinB gain from a steady sine probe of the time-domain engine."""
    w = steady_loop(cfg, SourceSpec.sine(amplitude, f), n_periods)
    return tone_phasor(w, f, "vinb") / tone_phasor(w, f, "vin")
