import numpy as np
import pytest

from memsim.core import ConfigError, EmulatorConfig, SingularityError, derive_coefficients
from memsim.devices import OtaParams
from memsim.engine import SourceSpec, integrate
from memsim.fingerprints import pinch_residual, q_rho_single_valuedness, steady_window
from memsim.network import CompositeSpec, Wiring, current_driven, simulate_composite

CFG = EmulatorConfig()
FLAT = EmulatorConfig(ota4=OtaParams(Vb=-1.2 + 2 * 0.45))
V = SourceSpec.sine(0.14, 1e6)
I = SourceSpec.sine(2e-5, 1e6)


@pytest.mark.parametrize("fid", ["simplified", "full_ideal", "non_ideal"])
def test_parallel_doubles_current(fid):
    c = CFG.replace(fidelity=fid)
    src = V if fid != "non_ideal" else SourceSpec.sine(1e-3, 1e6)
    tr = simulate_composite(CompositeSpec((c, c), "parallel_same_polarity", src), 4e-6)
    one = integrate(c, src, 4e-6)
    assert np.array_equal(tr.i, 2 * one.i)
    assert np.array_equal(tr.i, tr.extras["i1"] + tr.extras["i2"])
    assert np.array_equal(tr.q, tr.extras["q1"] + tr.extras["q2"])


def test_parallel_matches_independent_branches():
    c2 = CFG.replace(C1=100e-12, mode="decremental")
    tr = simulate_composite(CompositeSpec((CFG, c2), Wiring.PARALLEL, V), 4e-6)
    ref = integrate(CFG, V, 4e-6).i + integrate(c2, V, 4e-6).i
    assert np.max(np.abs(tr.i - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_parallel_flat_branch_adds_linear_term():
    tr = simulate_composite(CompositeSpec((CFG, FLAT), Wiring.PARALLEL, V), 4e-6)
    co = derive_coefficients(CFG)
    a2 = derive_coefficients(FLAT).a
    ok = np.abs(tr.phi) > 1e-3 * np.max(np.abs(tr.phi))
    ref = co.a + co.b * tr.rho + a2
    assert np.max(np.abs(tr.linv[ok] - ref[ok]) / ref[ok]) < 1e-9


def test_parallel_pinch():
    tr = simulate_composite(CompositeSpec((CFG, CFG), Wiring.PARALLEL, V), 4e-6)
    assert pinch_residual(steady_window(tr, 1e6, 1)) < 1e-9


def test_series_doubles_flux():
    tr = simulate_composite(CompositeSpec((CFG, CFG), Wiring.SERIES, I), 4e-6)
    one = current_driven(CFG, I, 4e-6)
    assert np.array_equal(tr.phi, 2 * one.phi)
    assert np.array_equal(tr.phi, tr.extras["phi1"] + tr.extras["phi2"])
    assert np.array_equal(tr.q, one.q)
    w = steady_window(tr, 1e6, 1)
    assert pinch_residual(w) < 1e-9
    assert q_rho_single_valuedness(w) < 1e-3


def test_series_flat_is_series_inductor():
    tr = simulate_composite(CompositeSpec((FLAT, FLAT.replace(R1=20)), Wiring.SERIES, I), 4e-6)
    a1, a2 = derive_coefficients(FLAT).a, derive_coefficients(FLAT.replace(R1=20)).a
    assert np.allclose(tr.linv, 1 / (1 / a1 + 1 / a2), rtol=1e-12)
    assert np.allclose(tr.phi, tr.i * (1 / a1 + 1 / a2), rtol=1e-12, atol=0)


def test_current_driven_voltage_consistency():
    tr = current_driven(CFG, I, 4e-6)
    fd = np.gradient(tr.phi, tr.dt)
    assert np.max(np.abs(fd[2:-2] - tr.vin[2:-2])) < 1e-4 * np.max(np.abs(tr.vin))


def test_series_singularity():
    big = SourceSpec.sine(1e-2, 1e6)
    with pytest.raises(SingularityError, match="t=.*rho=.*Linv="):
        simulate_composite(CompositeSpec((CFG.replace(mode="decremental"),) * 2, Wiring.SERIES, big), 4e-6)


def test_composite_validation():
    with pytest.raises(ConfigError):
        CompositeSpec((CFG,), Wiring.PARALLEL, V)
    with pytest.raises(ValueError):
        CompositeSpec((CFG, CFG), "antiparallel", V)
    with pytest.raises(ConfigError):
        simulate_composite(CompositeSpec((CFG.replace(fidelity="full_ideal"),) * 2, Wiring.SERIES, I), 4e-6)
