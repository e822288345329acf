"""Fixed-step RK4 integration of the emulator under voltage sources."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ConfigError, EmulatorConfig, Model, build_model

#: Samples per period of the highest source frequency.
STEPS_PER_PERIOD = 2000

COLUMNS = ("t", "vin", "phi", "rho", "q", "i", "linv")


class NonFiniteError(ArithmeticError):
    """A state left the finite range during integration."""

    def __init__(self, step: int, t: float, name: str, lane: int | None = None):
        where = f" (run {lane})" if lane is not None else ""
        super().__init__(f"state {name!r} became non-finite at step {step}, t={t:.6g} s{where}")
        self.step = step
        self.t = t
        self.name = name
        self.lane = lane


class InsufficientLengthError(ValueError):
    pass


@dataclass(frozen=True)
class Tone:
    amplitude: float
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise ConfigError("tone frequency must be > 0")
        if self.amplitude < 0:
            raise ConfigError("tone amplitude must be >= 0")


@dataclass(frozen=True)
class SourceSpec:
    """Terminal drive.  Tones are ``A*cos(2*pi*f*t + phase)``.

    With ``dc_flux_removal`` off every tone is shifted by -pi/2 (sine drive),
    which leaves the flux with a DC offset of A/omega.
    """

    kind: str = "sine"
    tones: tuple[Tone, ...] = ()
    sample_dt: float = 0.0
    values: tuple[float, ...] = ()
    dc_flux_removal: bool = True

    def __post_init__(self):
        if self.kind not in ("sine", "multitone", "samples"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if self.kind == "samples":
            if not self.sample_dt > 0 or len(self.values) < 2:
                raise ConfigError("samples source needs dt > 0 and at least two values")
        elif not self.tones:
            raise ConfigError("periodic source needs at least one tone")
        if self.kind == "sine" and len(self.tones) != 1:
            raise ConfigError("sine source takes exactly one tone")

    @classmethod
    def sine(cls, amplitude: float, frequency: float, phase: float = 0.0, **kw) -> "SourceSpec":
        return cls(kind="sine", tones=(Tone(amplitude, frequency, phase),), **kw)

    @classmethod
    def multitone(cls, tones, **kw) -> "SourceSpec":
        return cls(kind="multitone", tones=tuple(Tone(*t) for t in tones), **kw)

    @classmethod
    def samples(cls, dt: float, values, **kw) -> "SourceSpec":
        return cls(kind="samples", sample_dt=dt, values=tuple(float(v) for v in values), **kw)

    @property
    def f_max(self) -> float:
        if self.kind == "samples":
            return 0.5 / self.sample_dt
        return max(t.frequency for t in self.tones)

    @property
    def f_min(self) -> float:
        if self.kind == "samples":
            return 1.0 / (self.sample_dt * (len(self.values) - 1))
        return min(t.frequency for t in self.tones)

    def describe(self) -> str:
        if self.kind == "samples":
            return f"samples(n={len(self.values)}, dt={self.sample_dt:.6g})"
        parts = ", ".join(f"{t.amplitude:g}V@{t.frequency:g}Hz/{t.phase:g}rad" for t in self.tones)
        return f"{self.kind}({parts}, dc_flux_removal={self.dc_flux_removal})"

    def scaled(self, amplitude: float | None = None, frequency: float | None = None) -> "SourceSpec":
        """Single-tone copy with a new amplitude and/or frequency."""
        if self.kind != "sine":
            raise ConfigError("only sine sources can be rescaled")
        t = self.tones[0]
        tone = Tone(t.amplitude if amplitude is None else amplitude,
                    t.frequency if frequency is None else frequency, t.phase)
        return SourceSpec(kind="sine", tones=(tone,), dc_flux_removal=self.dc_flux_removal)


def source_eval(spec: SourceSpec, t):
    """Source value at time ``t`` (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    if spec.kind == "samples":
        t_last = spec.sample_dt * (len(spec.values) - 1)
        if np.any(t_arr > t_last * (1 + 1e-12)):
            raise ValueError(f"t beyond the sampled range [0, {t_last:.6g}] s")
        grid = spec.sample_dt * np.arange(len(spec.values))
        out = np.interp(t_arr, grid, np.asarray(spec.values))
    else:
        shift = 0.0 if spec.dc_flux_removal else -0.5 * math.pi
        out = np.zeros_like(t_arr)
        for tone in spec.tones:
            out = out + tone.amplitude * np.cos(2 * math.pi * tone.frequency * t_arr + tone.phase + shift)
    return float(out) if np.ndim(out) == 0 else out


def source_derivative(spec: SourceSpec, t):
    """Time derivative of the source (analytic for tones)."""
    t_arr = np.asarray(t, dtype=float)
    if spec.kind == "samples":
        grid = spec.sample_dt * np.arange(len(spec.values))
        slope = np.gradient(np.asarray(spec.values), spec.sample_dt)
        out = np.interp(t_arr, grid, slope)
    else:
        shift = 0.0 if spec.dc_flux_removal else -0.5 * math.pi
        out = np.zeros_like(t_arr)
        for tone in spec.tones:
            w = 2 * math.pi * tone.frequency
            out = out - tone.amplitude * w * np.sin(w * t_arr + tone.phase + shift)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Trace:
    """Uniformly sampled simulation record."""

    dt: float
    t: np.ndarray
    vin: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    q: np.ndarray
    i: np.ndarray
    linv: np.ndarray
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        if n < 2:
            raise ValueError("a trace needs at least two samples")
        for name in COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name) if name in COLUMNS else self.extras[name]

    def table(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in COLUMNS])

    def select(self, idx) -> "Trace":
        cols = {c: getattr(self, c)[idx] for c in COLUMNS}
        extras = {k: v[idx] for k, v in self.extras.items()}
        return Trace(dt=self.dt, extras=extras, meta=dict(self.meta), **cols)


def config_digest(cfg) -> str:
    return hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]


def rk4(deriv: Callable, x0: Sequence, u: Sequence, u_half: Sequence, dt: float,
        check_every: int = 4096) -> np.ndarray:
    """Classical RK4 over ``len(u) - 1`` steps.

    ``u[n]`` is the input at ``t_n`` and ``u_half[n]`` at ``t_n + dt/2``.
    Elements of ``x0`` may be floats or equally shaped arrays (batch lanes).
    Returns the state history stacked along axis 0.  Integration stops early
    (remaining rows NaN) once the state sum is non-finite.
    """
    h = dt
    h2 = 0.5 * dt
    h6 = dt / 6.0
    x = list(x0)
    hist = [x]
    n_steps = len(u) - 1
    for n in range(n_steps):
        u0 = u[n]
        uh = u_half[n]
        k1 = deriv(x, u0)
        k2 = deriv([a + h2 * b for a, b in zip(x, k1)], uh)
        k3 = deriv([a + h2 * b for a, b in zip(x, k2)], uh)
        k4 = deriv([a + h * b for a, b in zip(x, k3)], u[n + 1])
        x = [a + h6 * (b + 2.0 * (c + d) + e) for a, b, c, d, e in zip(x, k1, k2, k3, k4)]
        hist.append(x)
        if n % check_every == 0 and not np.all(np.isfinite(sum(x))):
            break
    out = np.array(hist, dtype=float)
    if len(hist) < n_steps + 1:
        pad = np.full((n_steps + 1 - len(hist),) + out.shape[1:], np.nan)
        out = np.concatenate([out, pad])
    return out


def default_dt(src: SourceSpec) -> float:
    if src.kind == "samples":
        return src.sample_dt
    return 1.0 / (STEPS_PER_PERIOD * src.f_max)


def _time_grid(t_end: float, dt: float) -> tuple[int, np.ndarray]:
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    if t_end < 100 * dt * (1 - 1e-12):
        raise ConfigError(f"t_end must span at least 100 steps (t_end={t_end:.6g}, dt={dt:.6g})")
    n = int(round(t_end / dt))
    return n, dt * np.arange(n + 1)


def _first_bad(hist: np.ndarray, names, t: np.ndarray, lane: int | None = None):
    bad = ~np.isfinite(hist)
    rows = np.nonzero(bad.any(axis=1))[0]
    if rows.size:
        r = int(rows[0])
        col = int(np.nonzero(bad[r])[0][0])
        raise NonFiniteError(r, float(t[r]), names[col], lane)


def run_model(model: Model, src: SourceSpec, t_end: float, dt: float):
    """Integrate a compiled model; returns (t, vin, history) with history
    shaped (n_samples, n_states[, lanes])."""
    n, t = _time_grid(t_end, dt)
    vin = np.asarray(source_eval(src, t))
    vh = np.asarray(source_eval(src, t[:-1] + 0.5 * dt))
    lanes = np.shape(model.a)
    x0 = [np.zeros(lanes) if lanes else 0.0 for _ in model.names]
    hist = rk4(model.deriv, x0, vin.tolist(), vh.tolist(), dt)
    return t, vin, hist


def _trace_from(model: Model, t, vin, hist, dt, meta) -> Trace:
    cols = [hist[:, k] for k in range(hist.shape[1])]
    _, (cur, vinb, vb3) = model.evaluate(cols, vin)
    cur = np.broadcast_to(cur, t.shape).astype(float)
    return Trace(
        dt=dt, t=t, vin=vin, phi=cols[0], rho=cols[1], q=cols[2], i=cur,
        linv=model.linv(cols[0], cur),
        extras={"vinb": np.broadcast_to(vinb, t.shape).astype(float),
                "vb3": np.broadcast_to(vb3, t.shape).astype(float)},
        meta=meta,
    )


def integrate(cfg: EmulatorConfig, src: SourceSpec, t_end: float, dt: float | None = None) -> Trace:
    """Simulate one emulator under a voltage source from rest."""
    dt = default_dt(src) if dt is None else dt
    cfg.check_stability(src.f_max)
    model = build_model(cfg, dt)
    t, vin, hist = run_model(model, src, t_end, dt)
    _first_bad(hist, model.names, t)
    meta = {"config_hash": config_digest(cfg), "source": src.describe()}
    return _trace_from(model, t, vin, hist, dt, meta)


def integrate_batch(cfgs: Sequence[EmulatorConfig], src: SourceSpec, t_end: float,
                    dt: float | None = None) -> list[Trace | NonFiniteError]:
    """Simulate a homogeneous batch of configs in lock-step.

    Lanes that leave the finite range are returned as their NonFiniteError
    instead of a trace.
    """
    dt = default_dt(src) if dt is None else dt
    for c in cfgs:
        c.check_stability(src.f_max)
    if len(cfgs) == 1:
        try:
            return [integrate(cfgs[0], src, t_end, dt)]
        except NonFiniteError as exc:
            return [exc]
    model = build_model(cfgs, dt)
    t, vin, hist = run_model(model, src, t_end, dt)
    out: list = []
    for lane, c in enumerate(cfgs):
        h = hist[:, :, lane]
        try:
            _first_bad(h, model.names, t, lane)
        except NonFiniteError as exc:
            out.append(exc)
            continue
        single = build_model(c, dt)
        meta = {"config_hash": config_digest(c), "source": src.describe()}
        out.append(_trace_from(single, t, vin, h, dt, meta))
    return out


def steady_window(trace: Trace, f: float, n_periods: int = 1) -> Trace:
    """Final ``n_periods`` of ``trace`` starting at an upward flux crossing.

    The window is re-sampled on the trace's own step, shifted so that its
    first sample sits on the (linearly interpolated) crossing; crossings that
    fall within 1e-6 of a sample are snapped to it.
    """
    period = 1.0 / f
    if trace.duration < (n_periods + 2) * period * (1 - 1e-9):
        raise InsufficientLengthError(
            f"trace spans {trace.duration:.6g} s, need {(n_periods + 2) * period:.6g} s"
        )
    n_w = int(round(n_periods * period / trace.dt))
    phi = trace.phi
    up = np.nonzero((phi[:-1] < 0) & (phi[1:] >= 0))[0]
    if up.size == 0:
        raise InsufficientLengthError("no upward flux zero crossing")
    for i in up[::-1]:
        frac = phi[i] / (phi[i] - phi[i + 1])
        if frac < 1e-6:
            start, frac = int(i), 0.0
        elif frac > 1 - 1e-6:
            start, frac = int(i) + 1, 0.0
        else:
            start = int(i)
        if start + n_w + (1 if frac else 0) <= len(trace) - 1:
            break
    else:
        raise InsufficientLengthError("no crossing leaves room for the window")
    if frac == 0.0:
        w = trace.select(slice(start, start + n_w + 1))
    else:
        idx = np.arange(n_w + 1) + start
        cols = {c: (1 - frac) * getattr(trace, c)[idx] + frac * getattr(trace, c)[idx + 1]
                for c in COLUMNS}
        extras = {k: (1 - frac) * v[idx] + frac * v[idx + 1] for k, v in trace.extras.items()}
        w = Trace(dt=trace.dt, extras=extras, meta=dict(trace.meta), **cols)
    w.meta["window"] = {"f": f, "n_periods": n_periods}
    return w
