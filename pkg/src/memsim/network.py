"""Two-element series and parallel meminductor networks.

Parallel branches share the terminal voltage (and therefore the flux) and
are integrated as one joint system whose state is the concatenation of the
branch states; per-branch arithmetic is identical to a standalone run.
Series elements share the drive current (and the charge); each element's
flux follows from phi_i = I / Linv_i(rho_i).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ConfigError,
    EmulatorConfig,
    Fidelity,
    SingularityError,
    build_model,
    derive_coefficients,
)
from .engine import (
    SourceSpec,
    Trace,
    _first_bad,
    _time_grid,
    config_digest,
    default_dt,
    rk4,
    source_derivative,
    source_eval,
)


class Wiring(str, enum.Enum):
    PARALLEL = "parallel_same_polarity"
    SERIES = "series_same_polarity"


@dataclass(frozen=True)
class CompositeSpec:
    """Two emulators plus their wiring.  ``drive`` is a voltage source for
    parallel wiring and a current source (values in A) for series wiring."""

    elements: tuple[EmulatorConfig, ...]
    wiring: Wiring
    drive: SourceSpec

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "wiring", Wiring(self.wiring))
        if len(self.elements) != 2:
            raise ConfigError(f"a composite takes exactly 2 elements, got {len(self.elements)}")


def _meta(spec: CompositeSpec) -> dict:
    return {
        "config_hash": config_digest((spec.elements, spec.wiring)),
        "source": spec.drive.describe(),
        "wiring": spec.wiring.value,
    }


def simulate_parallel(spec: CompositeSpec, t_end: float, dt: float | None = None) -> Trace:
    """Voltage-driven parallel pair: I = I1 + I2, q = q1 + q2, shared phi."""
    if spec.wiring is not Wiring.PARALLEL:
        raise ConfigError("simulate_parallel needs parallel wiring")
    src = spec.drive
    dt = default_dt(src) if dt is None else dt
    for c in spec.elements:
        c.check_stability(src.f_max)
    models = [build_model(c, dt) for c in spec.elements]
    sizes = [m.n_states for m in models]
    split = sizes[0]

    def deriv(x, v):
        return models[0].deriv(x[:split], v) + models[1].deriv(x[split:], v)

    n, t = _time_grid(t_end, dt)
    vin = np.asarray(source_eval(src, t))
    vh = np.asarray(source_eval(src, t[:-1] + 0.5 * dt))
    hist = rk4(deriv, [0.0] * sum(sizes), vin.tolist(), vh.tolist(), dt)
    names = [f"{nm}{k + 1}" for k, m in enumerate(models) for nm in m.names]
    _first_bad(hist, names, t)

    parts = [hist[:, :split], hist[:, split:]]
    cur = []
    for m, h in zip(models, parts):
        _, (ik, _, _) = m.evaluate([h[:, j] for j in range(h.shape[1])], vin)
        cur.append(np.broadcast_to(ik, t.shape).astype(float))
    i_tot = cur[0] + cur[1]
    phi = parts[0][:, 0]
    a_tot = models[0].a + models[1].a
    safe = np.where(phi != 0.0, phi, 1.0)
    linv = np.where(phi != 0.0, i_tot / safe, a_tot)
    extras = {"i1": cur[0], "i2": cur[1], "q1": parts[0][:, 2], "q2": parts[1][:, 2]}
    return Trace(dt=dt, t=t, vin=vin, phi=phi, rho=parts[0][:, 1],
                 q=parts[0][:, 2] + parts[1][:, 2], i=i_tot, linv=linv,
                 extras=extras, meta=_meta(spec))


def _current_driven(cfgs: Sequence[EmulatorConfig], src: SourceSpec, t_end: float,
                    dt: float | None):
    for c in cfgs:
        if c.fidelity is not Fidelity.SIMPLIFIED:
            raise ConfigError("current-driven elements are supported at the simplified tier only")
    co = [derive_coefficients(c) for c in cfgs]
    a = [c.a for c in co]
    sb = [c.mode_sign * c.b for c in co]
    m = len(cfgs)
    dt = default_dt(src) if dt is None else dt
    n, t = _time_grid(t_end, dt)
    cur = np.asarray(source_eval(src, t))
    ch = np.asarray(source_eval(src, t[:-1] + 0.5 * dt))

    def deriv(x, i):
        return [i] + [i / (a[k] + sb[k] * x[k + 1]) for k in range(m)]

    hist = rk4(deriv, [0.0] * (m + 1), cur.tolist(), ch.tolist(), dt)
    rho = hist[:, 1:]
    linv = np.asarray(a) + np.asarray(sb) * rho
    bad = ~(np.isfinite(linv) & (linv > 0.0))
    if bad.any():
        r, k = np.argwhere(bad)[0]
        raise SingularityError(
            f"inverse meminductance of element {k + 1} reached zero at t={t[r]:.6g} s "
            f"(rho={rho[r, k]:.6g} Wb*s, Linv={linv[r, k]:.6g} 1/H)"
        )
    phi = cur[:, None] / linv
    di = np.asarray(source_derivative(src, t))
    # v_k = d(I/Linv_k)/dt with dLinv_k/dt = sb_k * phi_k
    vk = (di[:, None] - phi * np.asarray(sb) * phi) / linv
    return dt, t, cur, hist[:, 0], rho, phi, linv, vk


def current_driven(cfg: EmulatorConfig, src: SourceSpec, t_end: float,
                   dt: float | None = None) -> Trace:
    """Single element under a current source (values in A)."""
    dt, t, cur, q, rho, phi, linv, vk = _current_driven([cfg], src, t_end, dt)
    meta = {"config_hash": config_digest(cfg), "source": src.describe(), "drive": "current"}
    return Trace(dt=dt, t=t, vin=vk[:, 0], phi=phi[:, 0], rho=rho[:, 0], q=q,
                 i=cur, linv=linv[:, 0], meta=meta)


def simulate_series(spec: CompositeSpec, t_end: float, dt: float | None = None) -> Trace:
    """Current-driven series pair: phi = phi1 + phi2, shared q = int I dt."""
    if spec.wiring is not Wiring.SERIES:
        raise ConfigError("simulate_series needs series wiring")
    dt, t, cur, q, rho, phi, linv, vk = _current_driven(spec.elements, spec.drive, t_end, dt)
    phi_tot = phi[:, 0] + phi[:, 1]
    # composite inverse meminductance: 1/Linv = 1/Linv1 + 1/Linv2
    linv_tot = 1.0 / (1.0 / linv[:, 0] + 1.0 / linv[:, 1])
    extras = {"phi1": phi[:, 0], "phi2": phi[:, 1], "rho1": rho[:, 0], "rho2": rho[:, 1],
              "linv1": linv[:, 0], "linv2": linv[:, 1]}
    return Trace(dt=dt, t=t, vin=vk[:, 0] + vk[:, 1], phi=phi_tot,
                 rho=rho[:, 0] + rho[:, 1], q=q, i=cur, linv=linv_tot,
                 extras=extras, meta=_meta(spec))


def simulate_composite(spec: CompositeSpec, t_end: float, dt: float | None = None) -> Trace:
    if spec.wiring is Wiring.PARALLEL:
        return simulate_parallel(spec, t_end, dt)
    return simulate_series(spec, t_end, dt)
