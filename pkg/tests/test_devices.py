import cmath
import math

import pytest
from hypothesis import given, strategies as st

from memsim.devices import (
    CcciiParams,
    DeviceDomainError,
    MosPair,
    OtaParams,
    ccii_transfer,
    cccii_rx,
    k_from_geometry,
    ota_current,
    ota_gamma,
    ota_gm,
)

pos = st.floats(1e-6, 1e-1)


def test_gm_reference_point():
    p = OtaParams(k=1e-3, Vb=0.45, Vss=-1.2, Vth=0.45)
    assert ota_gm(p) == pytest.approx(1e-3 / math.sqrt(2) * 0.75, rel=1e-15)
    assert ota_gm(p) == pytest.approx(5.3033e-4, rel=1e-4)


def test_gm_zero_overdrive():
    p = OtaParams(Vb=-1.2 + 2 * 0.45)
    assert ota_gm(p) == pytest.approx(0.0, abs=1e-18)


def test_gm_out_of_saturation():
    with pytest.raises(DeviceDomainError):
        ota_gm(OtaParams(Vb=-0.5))


@given(k=pos, vb=st.floats(0.0, 1.0), dv=st.floats(0.01, 0.5))
def test_gm_affine_in_vb(k, vb, dv):
    p1 = OtaParams(k=k, Vb=vb)
    p2 = OtaParams(k=k, Vb=vb + dv)
    slope = (ota_gm(p2) - ota_gm(p1)) / dv
    assert slope == pytest.approx(k / math.sqrt(2), rel=1e-9)


def test_ota_current():
    assert ota_current(5.3033e-4, 0.14, 0.0) == pytest.approx(7.4246e-5, rel=1e-4)
    assert ota_current(1e-3, 0.3, 0.3) == 0.0
    assert ota_current(1e-3, 0.2, 0.1, -1) == -ota_current(1e-3, 0.2, 0.1)
    with pytest.raises(ValueError):
        ota_current(1e-3, 0.2, 0.1, 2)


def test_rx_default_operating_point():
    # frozen regression value for the default device constants at 20 uA
    assert cccii_rx(20e-6) == pytest.approx(2.0010007506255474, rel=1e-12)
    m = MosPair()
    g = math.sqrt(m.mu_cox_p * m.aspect_p) + math.sqrt(m.mu_cox_n * m.aspect_n)
    assert cccii_rx(20e-6) == pytest.approx(1 / (math.sqrt(2 * 20e-6) * g), rel=1e-15)


@given(ib=st.floats(1e-7, 1e-3))
def test_rx_scaling(ib):
    assert cccii_rx(2 * ib) < cccii_rx(ib)
    assert cccii_rx(ib) * math.sqrt(ib) == pytest.approx(cccii_rx(1e-5) * math.sqrt(1e-5), rel=1e-12)


@pytest.mark.parametrize("ib", [0.0, -1e-6])
def test_rx_domain(ib):
    with pytest.raises(DeviceDomainError):
        cccii_rx(ib)


def test_gamma_points():
    p = OtaParams()
    assert ota_gamma(p, 0.0) == 1 + 0j
    assert abs(ota_gamma(p, p.omega_a)) == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    assert p.tau == 1.25e-9
    with pytest.raises(ValueError):
        ota_gamma(p, 1.0, "mid")


@given(w1=st.floats(0, 1e11), w2=st.floats(0, 1e11))
def test_gamma_monotone_and_phase(w1, w2):
    p = OtaParams()
    lo, hi = sorted((w1, w2))
    assert abs(ota_gamma(p, hi)) <= abs(ota_gamma(p, lo)) + 1e-15
    assert abs(ota_gamma(p, hi, "high")) <= 1.0 + 1e-15
    if hi > 0 and hi * p.tau < math.pi / 2:
        assert cmath.phase(ota_gamma(p, hi, "high")) <= cmath.phase(ota_gamma(p, hi)) + 1e-15


def test_ccii_transfer():
    assert ccii_transfer(0.98, 1e9, 0.0) == 0.98
    assert abs(ccii_transfer(0.98, 1e9, 1e9)) == pytest.approx(0.98 / math.sqrt(2), rel=1e-12)
    assert ccii_transfer(1.0, 1e9, 0.0) == 1.0


def test_param_validation():
    with pytest.raises(ValueError):
        OtaParams(k=0)
    with pytest.raises(ValueError):
        OtaParams(Vss=0.1)
    with pytest.raises(ValueError):
        CcciiParams(beta0=1.2)
    with pytest.raises(ValueError):
        CcciiParams(Rx=-1)
    with pytest.raises(ValueError):
        CcciiParams(omega_alpha=0)


def test_k_from_geometry():
    assert k_from_geometry(1e-3, 4e-9, 1e-5, 4e-7, 4e-9, 1e-5, 4e-7) == pytest.approx(1e-3, rel=1e-15)
    # thinner oxide and wider device both raise k
    assert k_from_geometry(1e-3, 4e-9, 1e-5, 4e-7, 3.9e-9, 1e-5, 4e-7) > 1e-3
    assert k_from_geometry(1e-3, 4e-9, 1e-5, 4e-7, 4e-9, 1.1e-5, 4e-7) == pytest.approx(1.1e-3)
    with pytest.raises(DeviceDomainError):
        k_from_geometry(1e-3, 4e-9, 1e-5, 4e-7, 0.0, 1e-5, 4e-7)
