import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memsim.core import ConfigError, EmulatorConfig, derive_coefficients
from memsim.engine import (
    InsufficientLengthError,
    NonFiniteError,
    SourceSpec,
    integrate,
    integrate_batch,
    source_derivative,
    source_eval,
    steady_window,
)

CFG = EmulatorConfig()
SRC = SourceSpec.sine(0.14, 1e6)


def test_source_points():
    assert source_eval(SourceSpec.sine(0.3, 1e3), 0.0) == 0.3
    assert source_eval(SourceSpec.sine(0.3, 1e3, math.pi / 2), 0.0) == pytest.approx(0.0, abs=1e-16)
    mt = SourceSpec.multitone([(0.12, 50e3, 0.0), (0.37, 1e6, 0.0)])
    assert source_eval(mt, 0.0) == pytest.approx(0.49, rel=1e-15)


def test_sine_convention_without_flux_removal():
    s = SourceSpec.sine(0.2, 1e3, dc_flux_removal=False)
    assert source_eval(s, 0.0) == pytest.approx(0.0, abs=1e-16)
    assert source_eval(s, 0.25e-3) == pytest.approx(0.2)


def test_source_samples():
    s = SourceSpec.samples(1e-3, [0.0, 1.0, 0.0])
    assert source_eval(s, 0.5e-3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        source_eval(s, 3e-3)
    with pytest.raises(ValueError):
        source_eval(s, -1e-3)


def test_source_validation():
    with pytest.raises(ConfigError):
        SourceSpec.sine(0.1, 0.0)
    with pytest.raises(ConfigError):
        SourceSpec.sine(-0.1, 1e3)
    with pytest.raises(ConfigError):
        SourceSpec(kind="sine", tones=())


def test_source_derivative_matches_difference():
    s = SourceSpec.multitone([(0.1, 1e3, 0.3), (0.2, 7e3, 1.0)])
    t = np.linspace(1e-6, 1e-3, 101)
    h = 1e-8
    fd = (source_eval(s, t + h) - source_eval(s, t - h)) / (2 * h)
    assert np.allclose(source_derivative(s, t), fd, rtol=1e-6, atol=1e-3)


def test_zero_source_rest_trajectory():
    tr = integrate(CFG, SourceSpec.sine(0.0, 1e6), 2e-6)
    for col in (tr.phi, tr.rho, tr.q, tr.i):
        assert not np.any(col)


def test_time_grid_requirements():
    with pytest.raises(ConfigError):
        integrate(CFG, SRC, 10e-9, 5e-10)
    with pytest.raises(ConfigError):
        integrate(CFG, SRC, 1e-6, 0.0)


def test_trace_self_consistency():
    tr = integrate(CFG, SRC, 5e-6)
    dt = tr.dt

    def fd(x):
        return (x[2:] - x[:-2]) / (2 * dt)

    for x, dx in ((tr.phi, tr.vin), (tr.rho, tr.phi), (tr.q, tr.i)):
        err = np.max(np.abs(fd(x) - dx[1:-1])) / np.max(np.abs(dx))
        assert err < 1e-3


def test_determinism():
    a = integrate(CFG.replace(fidelity="full_ideal"), SRC, 3e-6)
    b = integrate(CFG.replace(fidelity="full_ideal"), SRC, 3e-6)
    assert a.table().tobytes() == b.table().tobytes()
    assert a.meta == b.meta


@given(amp=st.floats(0.01, 0.3), f=st.sampled_from([1e5, 1e6, 5e6]))
def test_charge_law_any_amplitude(amp, f):
    tr = integrate(CFG, SourceSpec.sine(amp, f), 4 / f)
    co = derive_coefficients(CFG)
    oracle = co.a * tr.rho + co.b / 2 * tr.rho**2
    assert np.max(np.abs(tr.q - oracle)) / np.max(np.abs(tr.q)) < 1e-6


def test_charge_law_random_smooth_input():
    rng = np.random.default_rng(7)
    tones = [(float(a), float(f), float(p)) for a, f, p in
             zip(rng.uniform(0.01, 0.05, 5), rng.uniform(2e5, 2e6, 5), rng.uniform(0, 6, 5))]
    src = SourceSpec.multitone(tones, dc_flux_removal=False)
    tr = integrate(CFG.replace(mode="decremental"), src, 10e-6)
    co = derive_coefficients(CFG)
    oracle = co.a * tr.rho - co.b / 2 * tr.rho**2
    assert np.max(np.abs(tr.q - oracle)) / np.max(np.abs(tr.q)) < 1e-6


def test_batch_matches_single_runs():
    cfgs = [CFG.replace(fidelity="full_ideal", C1=c) for c in (50e-12, 75e-12, 100e-12)]
    batch = integrate_batch(cfgs, SRC, 3e-6)
    for c, tr in zip(cfgs, batch):
        one = integrate(c, SRC, 3e-6)
        assert np.array_equal(one.i, tr.i)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_reported():
    src = SourceSpec.sine(1e300, 1e6)
    with pytest.raises(NonFiniteError) as exc:
        integrate(CFG, src, 5e-6)
    assert exc.value.step >= 1 and exc.value.name == "q"
    res = integrate_batch([CFG, CFG.replace(C1=80e-12)], src, 5e-6)
    assert all(isinstance(r, NonFiniteError) for r in res)


def test_steady_window_length_and_alignment():
    tr = integrate(CFG, SRC, 10e-6)
    w = steady_window(tr, 1e6, 1)
    assert abs(len(w) - 1 - round(1e-6 / tr.dt)) <= 1
    assert abs(w.phi[0]) < 1e-3 * np.max(np.abs(w.phi))


def test_steady_window_interpolated_start():
    src = SourceSpec.sine(0.14, 1e6, phase=0.3)
    tr = integrate(CFG, src, 5e-6)
    w = steady_window(tr, 1e6, 2)
    assert abs(w.phi[0]) < 1e-9 * np.max(np.abs(w.phi))
    assert w.phi[1] > 0


def test_steady_window_too_short():
    tr = integrate(CFG, SRC, 2e-6)
    with pytest.raises(InsufficientLengthError):
        steady_window(tr, 1e6, 1)


def test_rk4_fourth_order():
    def traj_err(a, b):
        return max(np.max(np.abs(getattr(a, c) - getattr(b, c)[::2])) / np.max(np.abs(getattr(b, c)))
                   for c in ("phi", "rho", "q"))

    T = 1e-6
    runs = [integrate(CFG, SRC, 20e-6, T / n) for n in (100, 200, 400)]
    ratio = traj_err(runs[0], runs[1]) / traj_err(runs[1], runs[2])
    assert ratio > 12
