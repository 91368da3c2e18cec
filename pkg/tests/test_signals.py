import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pqvit.signals import (
    CLASS_NAMES,
    DegenerateSignalError,
    DisturbanceClass,
    DisturbanceParams,
    ParameterError,
    RangeError,
    Signal,
    TimeGrid,
    add_awgn,
    generate_signal,
    required_fields,
    sample_params,
    synthesize_clean,
)

GRID = TimeGrid()
T0 = 1 / 50


def test_default_grid():
    assert (GRID.fs, GRID.f0, GRID.n_samples) == (3200.0, 50.0, 650)
    with pytest.raises(RangeError):
        TimeGrid(fs=100.0, f0=50.0)


def test_seventeen_classes():
    assert len(DisturbanceClass) == 17
    assert DisturbanceClass(0).label == "Normal"
    assert DisturbanceClass(16).label == "Notch"
    assert DisturbanceClass(6).label == "Harmonics"
    assert set(CLASS_NAMES) == set(DisturbanceClass)


def test_class0_pure_sine():
    sig = synthesize_clean(DisturbanceParams(DisturbanceClass.NORMAL, phase0=0.0))
    assert sig.samples[0] == 0.0
    k = np.arange(650)
    np.testing.assert_allclose(sig.samples, np.sin(2 * np.pi * 50 * k / 3200), atol=1e-13)


def test_full_interruption_is_zero():
    p = DisturbanceParams(DisturbanceClass.INTERRUPTION, alpha=1.0, t1=0.0, t2=GRID.duration)
    assert np.all(synthesize_clean(p).samples == 0.0)


def test_harmonics_match_direct_sum():
    amps, phases = (0.15, 0.10, 0.05), (0.0, 0.0, 0.0)
    p = DisturbanceParams(DisturbanceClass.HARMONICS, harmonic_amps=amps, harmonic_phases=phases)
    got = synthesize_clean(p).samples
    for k in range(650):
        t = k / 3200
        direct = math.sin(2 * math.pi * 50 * t)
        for h, a in zip((3, 5, 7), amps):
            direct += a * math.sin(h * 2 * math.pi * 50 * t)
        assert abs(got[k] - direct) < 1e-12


def test_mismatched_params_rejected():
    with pytest.raises(ParameterError):
        synthesize_clean(DisturbanceParams(DisturbanceClass.NORMAL, alpha=0.5))
    with pytest.raises(ParameterError):
        synthesize_clean(DisturbanceParams(DisturbanceClass.SAG, t1=0.0, t2=0.05))


def test_out_of_range_params_rejected():
    with pytest.raises(RangeError):
        synthesize_clean(DisturbanceParams(DisturbanceClass.SAG, alpha=0.95, t1=0.0, t2=0.05))
    with pytest.raises(RangeError):
        synthesize_clean(DisturbanceParams(DisturbanceClass.SAG, alpha=0.5, t1=0.05, t2=0.01))


def test_sample_params_normal_only_phase():
    p = sample_params(DisturbanceClass.NORMAL, 123)
    d = p.to_dict()
    assert set(d) == {"class_id", "phase0"}
    assert 0 <= p.phase0 < 2 * math.pi


def test_sample_params_deterministic():
    assert sample_params(DisturbanceClass.SAG, 42) == sample_params(DisturbanceClass.SAG, 42)
    assert sample_params(DisturbanceClass.SAG, 42) != sample_params(DisturbanceClass.SAG, 43)


def test_sag_depth_uniform():
    alphas = np.array([sample_params(DisturbanceClass.SAG, s).alpha for s in range(10_000)])
    assert alphas.min() >= 0.1 and alphas.max() <= 0.9
    counts, _ = np.histogram(alphas, bins=10, range=(0.1, 0.9))
    assert stats.chisquare(counts).pvalue > 0.001


@pytest.mark.parametrize("cls", list(DisturbanceClass))
def test_sampled_params_valid_for_every_class(cls):
    for seed in range(50):
        p = sample_params(cls, seed)
        sig = synthesize_clean(p)
        assert sig.samples.shape == (650,)
        assert np.all(np.isfinite(sig.samples))
        populated = {k for k in p.to_dict() if k not in ("class_id", "phase0")}
        assert populated == required_fields(cls)
        if p.t1 is not None:
            assert 0 <= p.t1 < p.t2 <= GRID.duration
            assert T0 - 1e-12 <= p.t2 - p.t1 <= 9 * T0 + 1e-12


def test_params_dict_round_trip():
    for cls in DisturbanceClass:
        p = sample_params(cls, 5)
        assert DisturbanceParams.from_dict(p.to_dict()) == p


def _window_rms(cls, depth_field, depth, seed):
    p = replace(sample_params(cls, seed), t1=2 * T0, t2=6 * T0, **{depth_field: depth})
    x = synthesize_clean(p).samples
    k1, k2 = round(p.t1 * 3200), round(p.t2 * 3200)
    return math.sqrt(np.mean(x[k1:k2] ** 2))


@pytest.mark.parametrize("alpha", [0.1, 0.35, 0.6, 0.9])
def test_sag_window_rms(alpha):
    rms = _window_rms(DisturbanceClass.SAG, "alpha", alpha, seed=3)
    expected = (1 - alpha) / math.sqrt(2)
    assert abs(rms - expected) / expected < 0.02


@pytest.mark.parametrize("beta", [0.1, 0.45, 0.8])
def test_swell_window_rms(beta):
    rms = _window_rms(DisturbanceClass.SWELL, "beta", beta, seed=4)
    expected = (1 + beta) / math.sqrt(2)
    assert abs(rms - expected) / expected < 0.02


@pytest.mark.parametrize("cls", [2, 8, 11, 13, 15])
def test_swell_composites_peak_inside_window(cls):
    t = GRID.times()
    for seed in range(300):
        p = sample_params(cls, seed)
        x = synthesize_clean(p).samples
        w = (t >= p.t1) & (t < p.t2)
        assert np.abs(x[w]).max() > np.abs(x[~w]).max()


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2 * math.pi, exclude_max=True))
def test_normal_zero_crossings_every_32_samples(phase):
    x = synthesize_clean(DisturbanceParams(DisturbanceClass.NORMAL, phase0=phase)).samples
    s = np.signbit(x)
    crossings = np.flatnonzero(s[1:] != s[:-1])
    gaps = np.diff(crossings)
    assert len(gaps) > 10
    assert np.all(np.abs(gaps - 32) <= 1)


# -- noise -------------------------------------------------------------------


def _unit_sine(n=650):
    grid = TimeGrid(n_samples=n)
    p = DisturbanceParams(DisturbanceClass.NORMAL, phase0=0.0)
    return synthesize_clean(p, grid)


def test_awgn_variance_formula():
    sig = Signal(np.sin(2 * np.pi * np.arange(64) / 64), DisturbanceClass.NORMAL,
                 DisturbanceParams(DisturbanceClass.NORMAL))
    assert abs(np.mean(sig.samples ** 2) - 0.5) < 1e-15
    noisy = add_awgn(sig, 30.0, seed=1)
    from pqvit.signals import make_rng

    expected_noise = make_rng(1).standard_normal(64) * math.sqrt(0.5 / 1000)
    np.testing.assert_allclose(noisy.samples - sig.samples, expected_noise, atol=1e-15)


def test_awgn_negligible_at_high_snr():
    sig = _unit_sine()
    noisy = add_awgn(sig, 300.0, seed=9)
    assert np.max(np.abs(noisy.samples - sig.samples)) < 1e-6


def test_awgn_empirical_snr_1e6():
    sig = _unit_sine(1_000_000)
    noisy = add_awgn(sig, 30.0, seed=2024)
    noise = noisy.samples - sig.samples
    snr = 10 * math.log10(np.mean(sig.samples ** 2) / np.var(noise))
    assert abs(snr - 30.0) < 0.1


def test_awgn_residuals_look_gaussian():
    pooled = []
    for seed in range(200):
        sig = synthesize_clean(sample_params(seed % 17, seed))
        noisy = add_awgn(sig, 30.0, seed=seed + 10_000)
        r = noisy.samples - sig.samples
        pooled.append(r / r.std())
    r = np.concatenate(pooled)
    assert r.size >= 100_000
    assert abs(stats.skew(r)) < 0.1
    assert abs(stats.kurtosis(r)) < 0.2


def test_awgn_deterministic_and_errors():
    sig = _unit_sine()
    assert np.array_equal(add_awgn(sig, 30, 5).samples, add_awgn(sig, 30, 5).samples)
    zero = replace(sig, samples=np.zeros(650))
    with pytest.raises(DegenerateSignalError):
        add_awgn(zero, 30, 1)
    with pytest.raises(ValueError):
        add_awgn(sig, float("nan"), 1)


def test_generate_signal_records_seed():
    sig = generate_signal(DisturbanceClass.FLICKER, 77)
    assert sig.seed == 77
    assert sig.label == DisturbanceClass.FLICKER
    assert np.array_equal(sig.samples, generate_signal(DisturbanceClass.FLICKER, 77).samples)
