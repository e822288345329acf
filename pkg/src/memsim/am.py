"""Amplitude modulation with the grounded emulator.

The emulator is driven by message + carrier; its terminal current is
band-pass filtered around the carrier (integrated in the same RK4 loop) to
give the AM signal.  Demodulation multiplies by a local carrier and low-pass
filters the product.

The emulator current is bilinear in two linear functionals of the drive
(the VinB path and its integral), so its spectrum contains only DC, fm, 2fm,
fc, fc +/- fm and 2fc.  ``sideband_coefficients`` evaluates the fc and
fc +/- fm phasors exactly from that structure.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core import ConfigError, EmulatorConfig, Fidelity, Mode, Topology, build_model, derive_coefficients
from .devices import ota_gm
from .engine import (
    SourceSpec,
    Trace,
    _first_bad,
    _time_grid,
    config_digest,
    default_dt,
    rk4,
    source_eval,
)

SQRT2 = math.sqrt(2.0)


class DegenerateSignalError(ValueError):
    pass


class LeakageWarning(UserWarning):
    """Spectrum window does not span an integer number of periods."""


class FilterKind(str, enum.Enum):
    BAND_PASS = "band_pass"
    LOW_PASS = "low_pass"


@dataclass(frozen=True)
class BiquadSpec:
    kind: FilterKind
    f0: float
    Q: float = 1.0 / SQRT2

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        if not (self.f0 > 0 and self.Q > 0):
            raise ConfigError("biquad needs f0 > 0 and Q > 0")

    @property
    def w0(self) -> float:
        return 2 * math.pi * self.f0

    def state_space(self):
        """Controllable canonical (A, B, C) with x1' = x2."""
        w0, q = self.w0, self.Q
        A = np.array([[0.0, 1.0], [-w0 * w0, -w0 / q]])
        B = np.array([0.0, 1.0])
        C = np.array([0.0, w0 / q]) if self.kind is FilterKind.BAND_PASS else np.array([w0 * w0, 0.0])
        return A, B, C


def biquad_response(spec: BiquadSpec, omega):
    """Complex gain at s = j*omega (scalar or array)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("omega must be >= 0")
    s = 1j * w
    w0, q = spec.w0, spec.Q
    den = s * s + (w0 / q) * s + w0 * w0
    num = (w0 / q) * s if spec.kind is FilterKind.BAND_PASS else w0 * w0 + 0j * s
    h = num / den
    return complex(h) if np.ndim(h) == 0 else h


def biquad_filter(spec: BiquadSpec, u: np.ndarray, dt: float) -> np.ndarray:
    """Filter a uniformly sampled signal, treating it as piecewise linear
    between samples (exact first-order-hold discretization), from rest."""
    A, B, C = spec.state_space()
    d = signal.cont2discrete((A, B[:, None], C[None, :], np.zeros((1, 1))), dt, method="foh")
    b, a = signal.ss2tf(*d[:4])
    return signal.lfilter(b[0], a, np.asarray(u, dtype=float))


def biquad_impulse_response(spec: BiquadSpec, dt: float, t_end: float) -> tuple[np.ndarray, np.ndarray]:
    """Impulse response of the RK4-stepped state-space realization.

    The impulse sets x(0+) = B; the free response is advanced with the exact
    RK4 amplification matrix, evaluated in closed form through its
    eigendecomposition.
    """
    A, B, C = spec.state_space()
    n = int(round(t_end / dt))
    hA = dt * A
    eye = np.eye(2)
    M = eye + hA @ (eye + hA @ (eye / 2 + hA @ (eye / 6 + hA / 24)))
    lam, V = np.linalg.eig(M)
    coef = np.linalg.solve(V, B.astype(complex))
    k = np.arange(n + 1)
    x = (V[:, None, :] * (lam[None, :] ** k[:, None])[None, :, :] * coef[None, None, :]).sum(axis=2)
    h = np.real(C @ x)
    return dt * k, h


@dataclass(frozen=True)
class AmConfig:
    Am: float = 0.12
    fm: float = 50e3
    Ac: float = 0.37
    fc: float = 1e6
    A_L: float = 0.45
    lo_phase: float = -0.5 * math.pi
    bpf: BiquadSpec = BiquadSpec(FilterKind.BAND_PASS, 1e6, 5.0)
    lpf: BiquadSpec = BiquadSpec(FilterKind.LOW_PASS, 50e3)
    emulator: EmulatorConfig = field(default_factory=lambda: EmulatorConfig(
        C1=32e-12, C2=150e-12, mode=Mode.DECREMENTAL, fidelity=Fidelity.FULL_IDEAL))

    def __post_init__(self):
        if not (self.fm > 0 and self.fc > 0):
            raise ConfigError("frequencies must be > 0")
        if min(self.Am, self.Ac, self.A_L) < 0:
            raise ConfigError("amplitudes must be >= 0")
        if not self.fc > 10 * self.fm:
            raise ConfigError("carrier must exceed 10x the message frequency")
        if self.bpf.kind is not FilterKind.BAND_PASS or not math.isclose(self.bpf.f0, self.fc, rel_tol=1e-9):
            raise ConfigError("bpf must be a band-pass centered on the carrier")
        if self.lpf.kind is not FilterKind.LOW_PASS or self.lpf.f0 < self.fm * (1 - 1e-12):
            raise ConfigError("lpf must be a low-pass with cutoff >= fm")
        if self.emulator.topology is not Topology.GROUNDED:
            raise ConfigError("the modulator uses the grounded emulator")
        if self.emulator.fidelity is Fidelity.NON_IDEAL:
            raise ConfigError("the modulator supports the simplified and full_ideal tiers")

    @property
    def source(self) -> SourceSpec:
        return SourceSpec.multitone([(self.Am, self.fm, 0.0), (self.Ac, self.fc, 0.0)])

    def default_t_end(self, n_message_periods: int = 8) -> float:
        return n_message_periods / self.fm


def modulate(cfg: AmConfig, t_end: float | None = None, dt: float | None = None) -> Trace:
    """Drive the emulator with message + carrier and band-pass its current.

    Column ``i`` of the returned trace is the AM signal (BPF output, A);
    the raw emulator current is kept in ``extras['i_emulator']``.
    """
    src = cfg.source
    t_end = cfg.default_t_end() if t_end is None else t_end
    dt = default_dt(src) if dt is None else dt
    emu = build_model(cfg.emulator, dt)
    A, B, C = cfg.bpf.state_space()
    a11, a12 = A[1]
    m = emu.n_states

    def deriv(x, v):
        dx, (cur, _, _) = emu.evaluate(x[:m], v)
        y1, y2 = x[m], x[m + 1]
        return list(dx) + [y2, a11 * y1 + a12 * y2 + cur]

    n, t = _time_grid(t_end, dt)
    vin = np.asarray(source_eval(src, t))
    vh = np.asarray(source_eval(src, t[:-1] + 0.5 * dt))
    hist = rk4(deriv, [0.0] * (m + 2), vin.tolist(), vh.tolist(), dt)
    _first_bad(hist, emu.names + ("bpf_x1", "bpf_x2"), t)
    cols = [hist[:, k] for k in range(m)]
    _, (cur, vinb, vb3) = emu.evaluate(cols, vin)
    cur = np.broadcast_to(cur, t.shape).astype(float)
    s_am = C[0] * hist[:, m] + C[1] * hist[:, m + 1]
    meta = {"config_hash": config_digest(cfg), "source": src.describe(), "signal": "s_am"}
    return Trace(dt=dt, t=t, vin=vin, phi=cols[0], rho=cols[1], q=cols[2], i=s_am,
                 linv=emu.linv(cols[0], cur),
                 extras={"i_emulator": cur, "vinb": np.broadcast_to(vinb, t.shape).astype(float)},
                 meta=meta)


@dataclass(frozen=True)
class Spectrum:
    f: np.ndarray
    magnitude: np.ndarray
    leakage: bool

    def magnitude_db(self, floor: float = 1e-300) -> np.ndarray:
        return 20.0 * np.log10(np.maximum(self.magnitude, floor))

    def at(self, f: float) -> float:
        return float(self.magnitude[int(np.argmin(np.abs(self.f - f)))])

    def bin_of(self, f: float) -> int:
        return int(np.argmin(np.abs(self.f - f)))


def spectrum(w: Trace, f0: float | None = None, column: str = "i") -> Spectrum:
    """Single-sided amplitude spectrum of a rectangular window.

    The last sample is dropped so ``N`` samples span exactly ``N*dt``.  With
    ``f0`` given, a window that is not an integer number of 1/f0 periods is
    flagged (and warned about) as leaky.
    """
    x = np.asarray(w.column(column), dtype=float)[:-1]
    n = x.size
    span = n * w.dt
    leak = False
    if f0 is not None:
        cycles = span * f0
        leak = abs(cycles - round(cycles)) > 1e-6 * max(1.0, cycles)
        if leak:
            warnings.warn(f"window spans {cycles:.6g} periods of {f0:g} Hz; expect leakage",
                          LeakageWarning, stacklevel=2)
    X = np.fft.rfft(x)
    mag = np.abs(X) / n
    mag[1:] *= 2.0
    if n % 2 == 0:
        mag[-1] /= 2.0
    return Spectrum(f=np.fft.rfftfreq(n, w.dt), magnitude=mag, leakage=leak)


def analysis_window(tr: Trace, cfg: AmConfig, n_periods: int = 4) -> Trace:
    """Final ``n_periods`` message periods, sample-aligned."""
    n_w = int(round(n_periods / (cfg.fm * tr.dt)))
    if n_w + 1 > len(tr):
        raise ConfigError("trace shorter than the analysis window")
    return tr.select(slice(len(tr) - n_w - 1, len(tr)))


def envelope_response(cfg: AmConfig, lpf: BiquadSpec | None = None) -> complex:
    """Linear gain of the BPF + coherent detector + LPF chain for the message
    envelope of a double-sideband signal."""
    wc, wm = 2 * math.pi * cfg.fc, 2 * math.pi * cfg.fm
    h_bp = 0.5 * (biquad_response(cfg.bpf, wc + wm) + np.conj(biquad_response(cfg.bpf, wc - wm)))
    return complex(h_bp * biquad_response(lpf or cfg.lpf, wm))


@dataclass
class DemodResult:
    message_estimate: Trace
    correlation: float
    reference: np.ndarray


def demodulate(s_am: Trace, cfg: AmConfig, n_periods: int = 4, lpf: BiquadSpec | None = None,
               lo_phase: float | None = None) -> DemodResult:
    """Coherent product detection followed by the low-pass filter.

    Correlation is Pearson's r between the DC-removed detector output over
    the final ``n_periods`` message periods and the message as it would
    emerge from the same linear filter chain.
    """
    lpf = lpf or cfg.lpf
    phase = cfg.lo_phase if lo_phase is None else lo_phase
    wc, wm = 2 * math.pi * cfg.fc, 2 * math.pi * cfg.fm
    lo = cfg.A_L * np.cos(wc * s_am.t + phase)
    out = biquad_filter(lpf, s_am.i * lo, s_am.dt)
    rms_in = float(np.sqrt(np.mean(s_am.i ** 2)))
    est = Trace(dt=s_am.dt, t=s_am.t, vin=s_am.vin, phi=s_am.phi, rho=s_am.rho, q=s_am.q,
                i=out, linv=s_am.linv, meta=dict(s_am.meta, signal="demodulated"))
    w = analysis_window(est, cfg, n_periods)
    y = w.i - np.mean(w.i)
    rms_out = float(np.sqrt(np.mean(y ** 2)))
    if not rms_out > 1e-12 * rms_in:
        raise DegenerateSignalError(f"demodulated RMS {rms_out:.3g} is negligible against input RMS {rms_in:.3g}")
    h = envelope_response(cfg, lpf)
    ref = cfg.Am * np.real(h * np.exp(1j * wm * w.t))
    ref = ref - np.mean(ref)
    # no message, nothing to correlate against
    r = float(np.corrcoef(y, ref)[0, 1]) if np.any(ref) else math.nan
    return DemodResult(message_estimate=w, correlation=r, reference=ref)


@dataclass(frozen=True)
class AmSidebandCoeffs:
    """Phasors (A) of the emulator current: carrier beta7, lower sideband
    beta8 and the upper-sideband excess beta8p (USB = beta8 + beta8p)."""

    beta7: complex
    beta8: complex
    beta8p: complex

    @property
    def usb(self) -> complex:
        return self.beta8 + self.beta8p

    @property
    def ratio(self) -> float:
        """|beta8 / beta7|."""
        return abs(self.beta8) / abs(self.beta7) if self.beta7 else math.inf

    @property
    def asymmetry(self) -> float:
        """|beta8p / beta8|."""
        return abs(self.beta8p) / abs(self.beta8) if self.beta8 else 0.0


def sideband_coefficients(cfg: AmConfig) -> AmSidebandCoeffs:
    """Carrier and sideband phasors of the emulator current at fc, fc -/+ fm."""
    emu = cfg.emulator
    wc, wm = 2 * math.pi * cfg.fc, 2 * math.pi * cfg.fm
    R1, C2 = emu.R1, emu.C2
    rp = 0.0 if emu.fidelity is Fidelity.SIMPLIFIED else emu.Rp
    K = emu.ota3.k / SQRT2
    c0 = emu.ota3.overdrive
    g = ota_gm(emu.ota4) / emu.C1
    s = emu.mode.sign

    def T(w):
        return (1.0 + 1j * w * C2 * rp) / (1j * w * R1 * C2)

    Q = T(wm) * cfg.Am           # VinB, message
    P = T(wc) * cfg.Ac           # VinB, carrier
    M = Q / (1j * wm)            # its integral, message
    N = P / (1j * wc)            # its integral, carrier
    x0 = -(M.real + N.real)      # integral starts from zero
    carrier = K * (c0 + s * g * x0) * P
    usb = 0.5 * K * s * g * (M * P + N * Q)
    lsb = 0.5 * K * s * g * (np.conj(M) * P + N * np.conj(Q))
    return AmSidebandCoeffs(beta7=complex(carrier), beta8=complex(lsb), beta8p=complex(usb - lsb))


def simplified_sideband_ratio(cfg: AmConfig) -> float:
    """|beta8/beta7| of the simplified tier in closed form.

    The lower sideband collects the message-rho x carrier-flux product and,
    with opposite sign, the carrier-rho x message-flux product.
    """
    co = derive_coefficients(cfg.emulator)
    wc, wm = 2 * math.pi * cfg.fc, 2 * math.pi * cfg.fm
    sb = co.mode_sign * co.b
    den = co.a + sb * (cfg.Am / wm**2 + cfg.Ac / wc**2)
    return abs(sb * cfg.Am * (1.0 / wm**2 - 1.0 / (wm * wc)) / (2 * den))


@dataclass
class AmAnalysis:
    s_am: Trace
    spectrum: Spectrum
    peaks: dict
    floor: float
    demod: DemodResult
    coeffs: AmSidebandCoeffs
    measured_ratio: float
    predicted_ratio: float
    measured_asymmetry: float
    symmetry_bound: float

    def summary(self) -> dict:
        return {
            "peaks_A": {k: v for k, v in self.peaks.items()},
            "peaks_db_above_floor": {k: 20 * math.log10(v / self.floor) for k, v in self.peaks.items()},
            "floor_A": self.floor,
            "correlation": self.demod.correlation,
            "beta7_abs": abs(self.coeffs.beta7),
            "beta8_abs": abs(self.coeffs.beta8),
            "beta8p_abs": abs(self.coeffs.beta8p),
            "sideband_ratio_measured": self.measured_ratio,
            "sideband_ratio_predicted": self.predicted_ratio,
            "sideband_asymmetry_measured": self.measured_asymmetry,
            "sideband_asymmetry_bound": self.symmetry_bound,
        }


def analyze(cfg: AmConfig, t_end: float | None = None, dt: float | None = None,
            n_periods: int = 4) -> AmAnalysis:
    """Modulate, take the spectrum of the steady window, and demodulate."""
    tr = modulate(cfg, t_end, dt)
    w = analysis_window(tr, cfg, n_periods)
    sp = spectrum(w, cfg.fm)
    fl, fc, fu = cfg.fc - cfg.fm, cfg.fc, cfg.fc + cfg.fm
    peaks = {"lsb": sp.at(fl), "carrier": sp.at(fc), "usb": sp.at(fu)}
    band = sp.f <= 2 * cfg.fc
    mask = band.copy()
    for f in (fl, fc, fu):
        mask[sp.bin_of(f)] = False
    floor = float(np.median(sp.magnitude[mask]))
    co = sideband_coefficients(cfg)
    wc, wm = 2 * math.pi * cfg.fc, 2 * math.pi * cfg.fm
    g_l = abs(biquad_response(cfg.bpf, wc - wm))
    g_c = abs(biquad_response(cfg.bpf, wc))
    g_u = abs(biquad_response(cfg.bpf, wc + wm))
    lsb_raw, car_raw, usb_raw = peaks["lsb"] / g_l, peaks["carrier"] / g_c, peaks["usb"] / g_u
    measured_ratio = lsb_raw / car_raw if car_raw else math.inf
    asym = abs(usb_raw - lsb_raw) / lsb_raw if lsb_raw else 0.0
    bound = max(0.10, 2.0 * co.asymmetry)
    demod = demodulate(tr, cfg, n_periods)
    return AmAnalysis(s_am=tr, spectrum=sp, peaks=peaks, floor=floor, demod=demod, coeffs=co,
                      measured_ratio=measured_ratio, predicted_ratio=co.ratio,
                      measured_asymmetry=asym, symmetry_bound=bound)
