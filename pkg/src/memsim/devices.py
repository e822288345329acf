"""Behavioral port models for the OTA, CCII and CCCII building blocks.

Static laws (transconductance from bias voltage, X-port resistance from bias
current) plus the single-pole / excess-phase gain factors used by the
non-ideal fidelity tier.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

#: Oxide permittivity (F/m), used when tox is perturbed.
EPS_OX = 3.45e-11

#: Poles at or above this value (rad/s) are treated as ideal (no dynamics).
IDEAL_POLE = 1e12


class DeviceDomainError(ValueError):
    """Raised when a device law is evaluated outside its validity region."""


@dataclass(frozen=True)
class OtaParams:
    """OTA device, bias and parasitic parameters (SI units).

    ``k`` is the lumped device gain mu_n*Cox*W/L. ``Vb`` is the bias voltage
    that sets Gm; for the Gm3 stage it is the quiescent offset added to the
    dynamic control voltage (0 V in the emulator).
    """

    k: float = 1e-3
    Vth: float = 0.45
    Vss: float = -1.2
    Vdd: float = 1.2
    Vb: float = 0.45
    omega_a: float = 2 * math.pi * 500e6
    tau: float = 1.25e-9
    Ro: float = 1e6
    Co: float = 100e-15
    Ci: float = 50e-15

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if not (self.Vdd > 0 > self.Vss):
            raise ValueError("rails must satisfy Vdd > 0 > Vss")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not self.omega_a > 0:
            raise ValueError("omega_a must be > 0")
        if not (self.Ro > 0 and self.Co >= 0 and self.Ci >= 0):
            raise ValueError("Ro must be > 0 and Co, Ci >= 0")

    @property
    def overdrive(self) -> float:
        return self.Vb - self.Vss - 2.0 * self.Vth

    def with_bias(self, vb: float) -> "OtaParams":
        return replace(self, Vb=vb)


@dataclass(frozen=True)
class MosPair:
    """Process constants of the CCCII translinear X-port pair.

    ``mu_cox_*`` are in A/V^2, ``aspect_*`` are effective W/L ratios of the
    parallel translinear devices.  The defaults are lumped so that the
    conveyor biased at 20 uA shows an X-port resistance of about 2 ohm.
    """

    mu_cox_n: float = 300e-6
    aspect_n: float = 9.25e6
    mu_cox_p: float = 75e-6
    aspect_p: float = 9.25e6

    def __post_init__(self):
        if min(self.mu_cox_n, self.aspect_n, self.mu_cox_p, self.aspect_p) <= 0:
            raise ValueError("MosPair constants must all be > 0")


@dataclass(frozen=True)
class CcciiParams:
    """Conveyor transfer gains, poles and port parasitics (SI units)."""

    Rx: float = 5.0
    Lx: float = 150e-6
    Ry: float = 1e9
    Cy: float = 10e-15
    Rz: float = 1e6
    Cz: float = 10e-15
    beta0: float = 1.0
    alpha0: float = 1.0
    omega_beta: float = 2 * math.pi * 1e9
    omega_alpha: float = 2 * math.pi * 1e9

    def __post_init__(self):
        if self.Rx < 0:
            raise ValueError("Rx must be >= 0")
        for name in ("beta0", "alpha0"):
            g = getattr(self, name)
            if not 0.0 < g <= 1.1:
                raise ValueError(f"{name} must lie in (0, 1.1], got {g}")
        if not (self.omega_beta > 0 and self.omega_alpha > 0):
            raise ValueError("transfer poles must be > 0")
        if not (self.Ry > 0 and self.Rz > 0 and self.Cy >= 0 and self.Cz >= 0 and self.Lx >= 0):
            raise ValueError("port parasitics must be non-negative (resistances > 0)")

    @classmethod
    def from_bias(cls, ib: float, mos: MosPair | None = None, **kw) -> "CcciiParams":
        """Current-controlled conveyor with Rx set by the bias current."""
        return cls(Rx=cccii_rx(ib, mos or MosPair()), **kw)


def ota_gm(p: OtaParams) -> float:
    """Transconductance (S) of the OTA in saturation.

    Raises DeviceDomainError when the gate overdrive Vb - Vss - 2*Vth is
    negative, i.e. the input pair has left saturation.
    """
    od = p.overdrive
    if od < 0:
        raise DeviceDomainError(
            f"OTA out of saturation: Vb - Vss - 2*Vth = {od:.6g} V < 0"
        )
    return p.k / math.sqrt(2.0) * od


def ota_current(gm: float, v_plus: float, v_minus: float, sign: int = +1) -> float:
    """Output current of one OTA port; ``sign=-1`` selects the inverting port."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return sign * gm * (v_plus - v_minus)


def cccii_rx(ib: float, mos: MosPair | None = None) -> float:
    """X-port resistance (ohm) of a CCCII biased with current ``ib`` (A)."""
    if not ib > 0:
        raise DeviceDomainError(f"bias current must be > 0, got {ib}")
    m = mos or MosPair()
    g = math.sqrt(m.mu_cox_p * m.aspect_p) + math.sqrt(m.mu_cox_n * m.aspect_n)
    return 1.0 / (math.sqrt(2.0 * ib) * g)


def ota_gamma(p: OtaParams, omega: float, regime: str = "low") -> complex:
    """Frequency-dependent transconductance factor (dimensionless).

    ``regime="low"`` is the single-pole roll-off; ``"high"`` adds the
    excess-phase delay exp(-j*omega*tau).
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    g = p.omega_a / complex(p.omega_a, omega)
    if regime == "high":
        g *= cmath.exp(-1j * omega * p.tau)
    elif regime != "low":
        raise ValueError(f"unknown regime {regime!r}")
    return g


def ccii_transfer(gain0: float, pole: float, omega: float) -> complex:
    """First-order conveyor voltage (beta) or current (alpha) transfer."""
    if omega < 0:
        raise ValueError("omega must be >= 0")
    return gain0 / complex(1.0, omega / pole)


def k_from_geometry(k0: float, tox0: float, w0: float, l0: float,
                    tox: float, w: float, l: float) -> float:
    """Rescale a lumped device gain k0 to perturbed oxide and geometry.

    k = mu * (EPS_OX / tox) * (W / L); mobility is held at its nominal value.
    """
    if min(tox, w, l) <= 0:
        raise DeviceDomainError("tox, W and L must stay positive")
    cox0 = EPS_OX / tox0
    cox = EPS_OX / tox
    return k0 * (cox / cox0) * (w / w0) * (l0 / l)
