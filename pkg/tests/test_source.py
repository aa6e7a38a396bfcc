import math

import numpy as np
import pytest

from superbunch.coherence import sinc
from superbunch.coincidence import count_pairs, normalize_pairs
from superbunch.model import PS_PER_S, PhotonStream, SourceConfig, merge
from superbunch.source import (IntensityTrace, ModeSumField, cascade, derive_seed,
                               empirical_g1, empirical_g2, empirical_g3_zero, make_rng,
                               sample_photons, simulate, split_three, stage_fields, synthesize_field,
                               synthesize_stage_field)

from conftest import BW, TAU_C

DT = TAU_C / 10


def stage(seed, duration=1e4 * TAU_C, modes=256, method="modes", dt=DT):
    return synthesize_stage_field(BW, duration, dt, modes, np.random.default_rng(seed), method)


@pytest.mark.parametrize("method", ["modes", "fft"])
def test_field_autocorrelation_is_sinc(method):
    e = synthesize_field(BW, 1e4 * TAU_C, DT, 256, np.random.default_rng(1), method)
    lags = np.arange(31)
    g = empirical_g1(e, 30)
    ref = sinc(BW * lags * DT / 2)
    assert np.sqrt(np.mean((g.real - ref) ** 2)) < 0.02
    assert np.max(np.abs(g.imag)) < 0.05


@pytest.mark.parametrize("method", ["modes", "fft"])
def test_single_stage_thermal_statistics(method):
    tr = stage(2, method=method)
    g2 = empirical_g2(tr.samples, 1000)
    assert g2[0] == pytest.approx(2.0, abs=0.05)
    assert g2[500:].mean() == pytest.approx(1.0, abs=0.02)
    assert tr.mean == pytest.approx(1.0, abs=0.02)


def test_modes_below_minimum_rejected():
    with pytest.raises(ValueError, match="modes"):
        ModeSumField(BW, 63, np.random.default_rng(0))


def test_mode_sum_chunking_is_seamless():
    f = ModeSumField(BW, 128, np.random.default_rng(3))
    whole = f.evaluate(0, 10_000, DT)
    parts = np.concatenate([f.evaluate(0, 4321, DT), f.evaluate(4321, 5679, DT)])
    np.testing.assert_allclose(parts, whole, atol=1e-10)


def test_cascade_of_one_is_identity():
    tr = stage(4, duration=200 * TAU_C)
    assert np.array_equal(cascade([tr]).samples, tr.samples)


def test_cascade_two_stage_superbunching():
    a = stage(5, duration=4e5 * TAU_C)
    b = stage(6, duration=4e5 * TAU_C)
    c = cascade([a, b])
    assert empirical_g2(c.samples, 0)[0] == pytest.approx(4.0, rel=0.05)
    assert empirical_g3_zero(c.samples) == pytest.approx(36.0, abs=9.0)
    assert c.mean == pytest.approx(1.0, abs=0.02)


def test_cascade_rejects_mismatch():
    a = stage(7, duration=200 * TAU_C)
    b = stage(8, duration=300 * TAU_C)
    with pytest.raises(ValueError):
        cascade([a, b])
    with pytest.raises(ValueError):
        cascade([])


def test_stage_traces_independent():
    cfg = SourceConfig(n_stages=2, bandwidths=(BW, BW), duration=2e4 * TAU_C, sample_dt=DT)
    a, b = (np.abs(f.evaluate(0, 200_000, DT)) ** 2 for f in stage_fields(cfg))
    rho = np.corrcoef(a, b)[0, 1]
    assert abs(rho) < 0.01


def test_derived_seeds_differ():
    seeds = {derive_seed(7, label) for label in (1, 2, 3, "photons", "split")}
    assert len(seeds) == 5
    assert derive_seed(7, 1) == derive_seed(7, "1")
    a = make_rng(7, "split").integers(0, 2**63, 4)
    assert np.array_equal(a, make_rng(7, "split").integers(0, 2**63, 4))


def test_constant_trace_is_homogeneous_poisson():
    dt = 1e-5
    T = 100.0
    rate = 5000.0
    tr = IntensityTrace(np.ones(int(T / dt)), dt, T)
    s = sample_photons(tr, rate, np.random.default_rng(9))
    assert s.channel == 0
    assert abs(len(s) - rate * T) < 3 * math.sqrt(rate * T)
    assert s.timestamps[-1] < T * PS_PER_S


def test_zero_trace_emits_nothing():
    tr = IntensityTrace(np.zeros(1000), 1e-5, 1e-2)
    assert len(sample_photons(tr, 1000.0, np.random.default_rng(0))) == 0


def test_rate_guard():
    tr = IntensityTrace(np.ones(100), 1e-3, 0.1)
    with pytest.raises(ValueError, match="shrink sample_dt"):
        sample_photons(tr, 1000.0, np.random.default_rng(0))


def test_photon_g2_matches_trace():
    # counting estimator on photons reproduces the intensity g2(0)
    dt = TAU_C / 40
    tr = synthesize_stage_field(BW, 4e4 * TAU_C, dt, 256, np.random.default_rng(10))
    rate = 0.1 / dt
    s = sample_photons(tr, rate, np.random.default_rng(11))
    a, b, _ = split_three(s, np.random.default_rng(12))
    bw = int(round(TAU_C * PS_PER_S / 40))
    hist = count_pairs(a, b, bw, 4 * bw, duration=s.duration_ps)
    g, _ = normalize_pairs(hist)
    trace_g2 = empirical_g2(tr.samples, 0)[0]
    assert abs(g[4] - trace_g2) < 0.1


def test_split_three_partition():
    ts = np.unique(np.random.default_rng(13).integers(0, 10**12, 30_000))
    s = PhotonStream(0, ts)
    parts = split_three(s, np.random.default_rng(14))
    n = len(s)
    for k, p in enumerate(parts, start=1):
        assert p.channel == k
        assert abs(len(p) - n / 3) < 3 * math.sqrt(n / 3)
    assert np.array_equal(merge(parts).timestamps, s.timestamps)


def test_split_three_empty():
    parts = split_three(PhotonStream(0, []), np.random.default_rng(0))
    assert [len(p) for p in parts] == [0, 0, 0]


def test_simulate_is_reproducible():
    cfg = SourceConfig(n_stages=2, bandwidths=(BW, BW), duration=0.5, seed=99)
    a = simulate(cfg)
    b = simulate(cfg)
    assert all(x == y for x, y in zip(a, b))
    c = simulate(cfg.replace(seed=100))
    assert not all(x == y for x, y in zip(a, c))


def test_simulate_channel_counts():
    cfg = SourceConfig(n_stages=0, bandwidths=(), duration=2.0, seed=3)
    streams = simulate(cfg)
    expected = cfg.mean_rate_per_detector * cfg.duration
    for s in streams:
        assert abs(len(s) - expected) < 3 * math.sqrt(expected)
