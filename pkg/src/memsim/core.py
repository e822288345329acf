"""Grounded and floating meminductor emulator dynamics.

Each fidelity tier is compiled into a small model object: an ordered list of
state names, an initial state and an ``evaluate(x, v)`` function returning
the state derivatives and the terminal outputs.  ``evaluate`` uses plain
arithmetic only, so the same code runs on Python floats (single runs) and on
numpy arrays (vectorized post-processing and Monte Carlo batches).

Sign convention: the baseline inverse meminductance uses the OTA3 overdrive
``Vb3 - Vss - 2*Vth`` which is positive at the working rails, and the
rho-dependent term enters with ``mode_sign`` (+1 incremental, -1 decremental).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .devices import (
    IDEAL_POLE,
    CcciiParams,
    OtaParams,
    ccii_transfer,
    ota_gamma,
    ota_gm,
)

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

#: Largest pole*dt product integrated explicitly; faster stages are folded
#: into their DC gain for that step size.
MAX_POLE_DT = 0.5


class Topology(str, enum.Enum):
    GROUNDED = "grounded"
    FLOATING = "floating"


class Mode(str, enum.Enum):
    INCREMENTAL = "incremental"
    DECREMENTAL = "decremental"

    @property
    def sign(self) -> int:
        return 1 if self is Mode.INCREMENTAL else -1


class Fidelity(str, enum.Enum):
    SIMPLIFIED = "simplified"
    FULL_IDEAL = "full_ideal"
    NON_IDEAL = "non_ideal"


class ConfigError(ValueError):
    """Invalid emulator or simulation configuration."""


class SingularityError(ArithmeticError):
    """A closed-form or algebraic relation hit a vanishing denominator."""


def _default_cccii2() -> CcciiParams:
    return CcciiParams.from_bias(20e-6)


@dataclass(frozen=True)
class EmulatorConfig:
    topology: Topology = Topology.GROUNDED
    mode: Mode = Mode.INCREMENTAL
    fidelity: Fidelity = Fidelity.SIMPLIFIED
    R1: float = 10.0
    C1: float = 75e-12
    C2: float = 150e-12
    ota3: OtaParams = field(default_factory=lambda: OtaParams(Vb=0.0))
    ota4: OtaParams = field(default_factory=lambda: OtaParams(Vb=0.45))
    ccii1: CcciiParams = field(default_factory=CcciiParams)
    cccii2: CcciiParams = field(default_factory=_default_cccii2)

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        for name in ("R1", "C1", "C2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    def replace(self, **kw) -> "EmulatorConfig":
        return replace(self, **kw)

    @property
    def Rx2(self) -> float:
        return self.cccii2.Rx

    @property
    def Rp(self) -> float:
        """Feed-through resistance of the Vin -> VinB path."""
        if self.topology is Topology.GROUNDED:
            return self.cccii2.Rx
        return self.cccii2.Rx - self.R1

    def check_stability(self, f_max: float) -> None:
        """Floating realizations need 1 + s*C2*(Rx2 - R1) to stay well posed."""
        if self.topology is not Topology.FLOATING or self.fidelity is Fidelity.SIMPLIFIED:
            return
        bound = self.Rx2 + 1.0 / (2 * math.pi * f_max * self.C2)
        if not self.R1 < bound:
            raise ConfigError(
                f"floating emulator requires R1 < Rx2 + 1/(w_max*C2) = {bound:.6g} ohm, "
                f"got R1 = {self.R1:.6g}"
            )


@dataclass(frozen=True)
class Coefficients:
    a: float
    b: float
    mode_sign: int

    def linv(self, rho):
        return self.a + self.mode_sign * self.b * rho


def derive_coefficients(cfg: EmulatorConfig) -> Coefficients:
    """Baseline (a) and rho-sensitivity (b) of the inverse meminductance."""
    gm3_0 = ota_gm(cfg.ota3)
    gm4 = ota_gm(cfg.ota4)
    a = gm3_0 / (cfg.R1 * cfg.C2)
    b = cfg.ota3.k * gm4 / (SQRT2 * cfg.C1 * cfg.R1**2 * cfg.C2**2)
    return Coefficients(a=a, b=b, mode_sign=cfg.mode.sign)


@dataclass(frozen=True)
class MeminductorState:
    t: float = 0.0
    phi: float = 0.0
    rho: float = 0.0
    q: float = 0.0
    aux: tuple = ()


@dataclass(frozen=True)
class RhsResult:
    d_phi: float
    d_rho: float
    d_q: float
    d_aux: tuple
    I: float
    VinB: float
    VB3: float
    Linv: float


class Model:
    """Compiled emulator dynamics for one configuration (or a batch).

    ``evaluate(x, v)`` returns ``(dx, (I, VinB, VB3))`` for state sequence
    ``x`` and terminal voltage ``v``.
    """

    def __init__(self, names: Sequence[str], evaluate: Callable, a, folded=()):
        self.names = tuple(names)
        self.evaluate = evaluate
        self.a = a
        self.folded = tuple(folded)

    @property
    def n_states(self) -> int:
        return len(self.names)

    def initial_state(self, like=0.0) -> list:
        return [like * 0.0 for _ in self.names]

    def deriv(self, x, v):
        return self.evaluate(x, v)[0]

    def linv(self, phi, current):
        """Inverse meminductance diagnostic I/phi, baseline where phi == 0."""
        if isinstance(phi, np.ndarray):
            safe = np.where(phi != 0.0, phi, 1.0)
            return np.where(phi != 0.0, current / safe, self.a)
        return current / phi if phi != 0.0 else self.a


def _stack(cfgs: Sequence[EmulatorConfig], fn: Callable[[EmulatorConfig], float]):
    vals = [fn(c) for c in cfgs]
    return vals[0] if len(vals) == 1 else np.array(vals)


def _simplified(cfgs) -> Model:
    co = [derive_coefficients(c) for c in cfgs]
    a = _stack(co, lambda c: c.a)
    sb = _stack(co, lambda c: c.mode_sign * c.b)
    inv_r1c2 = _stack(cfgs, lambda c: 1.0 / (c.R1 * c.C2))
    vb3_per_rho = _stack(cfgs, lambda c: ota_gm(c.ota4) / (c.C1 * c.R1 * c.C2))

    def evaluate(x, v):
        phi, rho, _q = x
        cur = (a + sb * rho) * phi
        return (v, phi, cur), (cur, phi * inv_r1c2, vb3_per_rho * rho)

    return Model(("phi", "rho", "q"), evaluate, a)


def _full_ideal(cfgs) -> Model:
    a = _stack(cfgs, lambda c: derive_coefficients(c).a)
    gain = _stack(cfgs, lambda c: c.ota3.k / SQRT2)
    c0 = _stack(cfgs, lambda c: c.ota3.overdrive)
    s = _stack(cfgs, lambda c: float(c.mode.sign))
    inv_r1c2 = _stack(cfgs, lambda c: 1.0 / (c.R1 * c.C2))
    rp_r1 = _stack(cfgs, lambda c: c.Rp / c.R1)
    g4_c1 = _stack(cfgs, lambda c: ota_gm(c.ota4) / c.C1)

    def evaluate(x, v):
        phi, rho, _q, xa = x
        vinb = phi * inv_r1c2 + rp_r1 * v
        vb3 = g4_c1 * xa
        cur = gain * (c0 + s * vb3) * vinb
        return (v, phi, cur, vinb), (cur, vinb, vb3)

    return Model(("phi", "rho", "q", "x_aux"), evaluate, a)


_NONIDEAL_STATES = (
    "phi", "rho", "q",
    "u1",      # CCII1 voltage follower output (beta1)
    "w2",      # CCCII2 conveyed current into the C2 branch (alpha2)
    "vc2",     # voltage across C2
    "vinb",    # CCCII2 follower output VinB (beta2)
    "pade4",   # excess-phase stage of OTA4
    "ic4",     # OTA4 output current (gamma4 pole)
    "vb3",     # control voltage on C1
    "pade3",   # excess-phase stage of OTA3
    "io3",     # OTA3 output current (gamma3 pole)
    "iin",     # terminal current conveyed by CCII1 (alpha1)
)


def _active(pole: float, dt: float | None) -> bool:
    if pole >= IDEAL_POLE:
        return False
    return dt is None or pole * dt <= MAX_POLE_DT


def _non_ideal(cfgs, dt: float | None) -> Model:
    c = cfgs[0]
    poles = _non_ideal_poles(c)
    on = _non_ideal_flags(c, dt)
    for other in cfgs[1:]:
        if _non_ideal_flags(other, dt) != on:
            raise ConfigError("batched non-ideal configs must share their pole structure")
    folded = tuple(n for n, p in poles.items() if p < IDEAL_POLE and not on[n])
    if folded:
        log.warning("stages %s are faster than the step resolves; folded to DC gain", folded)

    a = _stack(cfgs, lambda c: derive_coefficients(c).a)
    floating = c.topology is Topology.FLOATING
    s = _stack(cfgs, lambda c: float(c.mode.sign))
    gain3 = _stack(cfgs, lambda c: c.ota3.k / SQRT2)
    c0 = _stack(cfgs, lambda c: c.ota3.overdrive)
    gm4 = _stack(cfgs, lambda c: ota_gm(c.ota4))
    g_ro3 = _stack(cfgs, lambda c: 1.0 / c.ota3.Ro)
    g_ro4 = _stack(cfgs, lambda c: 1.0 / c.ota4.Ro)
    c_b3 = _stack(cfgs, lambda c: c.C1 + c.ota4.Co)
    c_c2 = _stack(cfgs, lambda c: c.C2 + c.cccii2.Cz)
    g_rz2 = _stack(cfgs, lambda c: 1.0 / c.cccii2.Rz)
    inv_r1 = _stack(cfgs, lambda c: 1.0 / c.R1)
    rx1 = _stack(cfgs, lambda c: c.ccii1.Rx)
    rx2 = _stack(cfgs, lambda c: c.cccii2.Rx)
    b1 = _stack(cfgs, lambda c: c.ccii1.beta0)
    a1 = _stack(cfgs, lambda c: c.ccii1.alpha0)
    b2 = _stack(cfgs, lambda c: c.cccii2.beta0)
    a2 = _stack(cfgs, lambda c: c.cccii2.alpha0)
    rate = {n: _stack(cfgs, lambda c, n=n: _non_ideal_poles(c)[n]) for n in poles if on[n]}

    def lag(name, state, target):
        if on[name]:
            return state, rate[name] * (target - state)
        return target, 0.0

    def pade(name, state, u):
        if on[name]:
            return 2.0 * state - u, rate[name] * (u - state)
        return u, 0.0

    def core(x, v):
        (_phi, _rho, _q, u1, w2, vc2, vinb, p4, ic4, vb3, p3, io3, iin) = x
        y_u1, d_u1 = lag("u1", u1, b1 * v)
        y_w2, d_w2 = lag("w2", w2, a2 * y_u1 * inv_r1)
        d_vc2 = (y_w2 - g_rz2 * vc2) / c_c2
        raw = vc2 + rx2 * y_w2
        if floating:
            raw = raw - y_u1
        y_vinb, d_vinb = lag("vinb", vinb, b2 * raw)
        y_p4, d_p4 = pade("pade4", p4, y_vinb)
        y_ic4, d_ic4 = lag("ic4", ic4, gm4 * y_p4)
        d_vb3 = (y_ic4 - g_ro4 * vb3) / c_b3
        gm3 = gain3 * (c0 + s * vb3) + g_ro3
        y_p3, d_p3 = pade("pade3", p3, gm3 * y_vinb)
        y_io3, d_io3 = lag("io3", io3, y_p3)
        cur, d_iin = lag("iin", iin, a1 * y_io3)
        dx = [d_u1, d_w2, d_vc2, d_vinb, d_p4, d_ic4, d_vb3, d_p3, d_io3, d_iin]
        return dx, cur, y_vinb, vb3

    feedthrough = not on["iin"] and not on["io3"]

    def evaluate(x, v):
        if feedthrough:
            # I is affine in the core voltage; solve v_core = v - Rx1*I(v_core).
            _, i0, _, _ = core(x, v)
            _, i1, _, _ = core(x, v + 1.0)
            m = i1 - i0
            vc = (v - rx1 * (i0 - m * v)) / (1.0 + rx1 * m)
        else:
            vc = v - rx1 * x[12]
        dx, cur, vinb, vb3 = core(x, vc)
        return [v, x[0], cur] + dx, (cur, vinb, vb3)

    return Model(_NONIDEAL_STATES, evaluate, a, folded)


def _non_ideal_poles(c: EmulatorConfig) -> dict:
    return {
        "u1": c.ccii1.omega_beta,
        "w2": c.cccii2.omega_alpha,
        "vinb": c.cccii2.omega_beta,
        "ic4": c.ota4.omega_a,
        "io3": c.ota3.omega_a,
        "iin": c.ccii1.omega_alpha,
        "pade4": 2.0 / c.ota4.tau if c.ota4.tau > 0 else math.inf,
        "pade3": 2.0 / c.ota3.tau if c.ota3.tau > 0 else math.inf,
    }


def _non_ideal_flags(c: EmulatorConfig, dt: float | None) -> dict:
    return {n: _active(p, dt) for n, p in _non_ideal_poles(c).items()}


def build_model(cfg: EmulatorConfig | Sequence[EmulatorConfig], dt: float | None = None) -> Model:
    """Compile the emulator dynamics for one config or a homogeneous batch.

    With ``dt`` given, non-ideal stages whose pole exceeds ``MAX_POLE_DT/dt``
    are folded into their DC gain (they settle within a fraction of a step).
    """
    cfgs = [cfg] if isinstance(cfg, EmulatorConfig) else list(cfg)
    if not cfgs:
        raise ConfigError("no configuration given")
    kinds = {(c.topology, c.fidelity) for c in cfgs}
    if len(kinds) != 1:
        raise ConfigError("batched configs must share topology and fidelity")
    fid = cfgs[0].fidelity
    if fid is Fidelity.SIMPLIFIED:
        return _simplified(cfgs)
    if fid is Fidelity.FULL_IDEAL:
        return _full_ideal(cfgs)
    return _non_ideal(cfgs, dt)


def eval_rhs(state: MeminductorState, vin: float, cfg: EmulatorConfig) -> RhsResult:
    """Derivatives and terminal outputs of the emulator at one instant."""
    model = build_model(cfg)
    n_aux = model.n_states - 3
    aux = tuple(state.aux) + (0.0,) * (n_aux - len(state.aux))
    if len(aux) != n_aux:
        raise ConfigError(f"expected {n_aux} auxiliary states, got {len(state.aux)}")
    x = [state.phi, state.rho, state.q, *aux]
    dx, (cur, vinb, vb3) = model.evaluate(x, vin)
    return RhsResult(
        d_phi=dx[0], d_rho=dx[1], d_q=dx[2], d_aux=tuple(dx[3:]),
        I=cur, VinB=vinb, VB3=vb3, Linv=model.linv(state.phi, cur),
    )


def ideal_limit(cfg: EmulatorConfig, pole: float = 1e12, r_big: float = 1e12) -> EmulatorConfig:
    """Non-ideal parameters pushed to their ideal values.

    Poles at ``pole``, no excess phase, unity transfer gains, Rx1 = 0, large
    output/port resistances and no added node capacitance.  Rx2 is kept: it
    belongs to the ideal realization.
    """
    ota = dict(omega_a=pole, tau=0.0, Ro=r_big, Co=0.0, Ci=0.0)
    conv = dict(beta0=1.0, alpha0=1.0, omega_beta=pole, omega_alpha=pole,
                Rz=r_big, Cz=0.0, Ry=r_big, Cy=0.0, Lx=0.0)
    return cfg.replace(
        ota3=replace(cfg.ota3, **ota),
        ota4=replace(cfg.ota4, **ota),
        ccii1=replace(cfg.ccii1, Rx=0.0, **conv),
        cccii2=replace(cfg.cccii2, **conv),
    )


def closed_form_linv(cfg: EmulatorConfig, omega: float, phi_amplitude: float) -> complex:
    """Frequency-domain inverse meminductance at s = j*omega (analysis only).

    The flux is treated as a phasor of magnitude ``phi_amplitude`` and the
    operator 1/s in the rho term as integration of that phasor.
    """
    if not omega > 0:
        raise ValueError("omega must be > 0")
    jw = 1j * omega
    co = derive_coefficients(cfg)
    sgn = cfg.mode.sign
    if cfg.fidelity is Fidelity.SIMPLIFIED:
        return co.a + sgn * co.b * phi_amplitude / jw

    R1, C1, C2 = cfg.R1, cfg.C1, cfg.C2
    K = cfg.ota3.k / SQRT2
    c0 = cfg.ota3.overdrive
    gm4 = ota_gm(cfg.ota4)
    T = 1.0 + jw * C2 * cfg.Rp
    if abs(T) < 1e-12:
        raise SingularityError("1 + s*C2*(Rx2 - R1) vanishes")

    def denom(g_lin, g_sq):
        return K * g_lin * c0 + sgn * K * g_sq * gm4 * T * phi_amplitude / (jw * C1 * R1 * C2)

    if cfg.fidelity is Fidelity.FULL_IDEAL:
        return T * denom(1.0, 1.0) / (R1 * C2)

    reg3 = "high" if cfg.ota3.tau > 0 else "low"
    reg4 = "high" if cfg.ota4.tau > 0 else "low"
    g3 = ota_gamma(cfg.ota3, omega, reg3)
    g4 = ota_gamma(cfg.ota4, omega, reg4)
    beta = ccii_transfer(cfg.cccii2.beta0, cfg.cccii2.omega_beta, omega)
    rx1 = cfg.ccii1.Rx
    if cfg.topology is Topology.GROUNDED:
        d = denom(g3, g3 * g4)
        if abs(d * T) < 1e-300:
            raise SingularityError("core admittance vanishes")
        z = rx1 + jw * R1 * C2 * beta**2 / (d * T)
    else:
        t_beta = 1.0 + beta * jw * C2 * cfg.Rx2 - beta * jw * C2 * R1
        if abs(t_beta) < 1e-12:
            raise SingularityError("1 + beta*s*C2*(Rx2 - R1) vanishes")
        d = denom(g3, g3 * g4) / beta
        lead = rx1 * (1.0 + cfg.Rx2 * beta * jw * C2) / t_beta
        z = lead + jw * R1 * C2 / (d * t_beta)
    if abs(z) < 1e-300:
        raise SingularityError("terminal impedance vanishes")
    return jw / z
