import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fock_sampling.ensembles import (
    EnergyWindow,
    InsufficientSamplesError,
    auto_window,
    blocking_error,
    blocking_levels,
    canonical_stats,
    estimate,
    geweke_z,
    integrated_autocorr_time,
    merge_series,
    microcanonical_filter,
    microcanonical_stats,
    modal_energy,
)
from fock_sampling.modes import build_mode_set
from fock_sampling.oracle import enumerate_exact
from fock_sampling.sampler import ChainConfig, SampleSeries, run_chain


def series_of(n0, energy=None, seed=0, beta=1.0):
    n0 = np.asarray(n0)
    energy = np.zeros(n0.size) if energy is None else np.asarray(energy, dtype=float)
    return SampleSeries(np.arange(1, n0.size + 1), n0, energy,
                        ChainConfig(10, beta, steps=max(n0.size, 2), seed=seed))


def ar1(n, phi, rng):
    eps = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0] / math.sqrt(1 - phi**2)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return x


def test_constant_series():
    est = canonical_stats(series_of(np.full(1000, 300)))
    assert (est.mean_n0, est.std_n0, est.se_mean, est.se_std) == (300.0, 0.0, 0.0, 0.0)


def test_two_point_series():
    est = canonical_stats(series_of([0, 2]))
    assert (est.mean_n0, est.std_n0) == (1.0, 1.0)


def test_needs_two_samples():
    with pytest.raises(InsufficientSamplesError):
        canonical_stats(series_of([4]))


def test_blocking_recovers_ar1_error():
    phi, n = 0.9, 1 << 18
    x = ar1(n, phi, np.random.default_rng(0))
    se, converged = blocking_error(x)
    exact = math.sqrt(1 / (1 - phi**2) * (1 + phi) / (1 - phi) / n)
    assert converged
    assert se == pytest.approx(exact, rel=0.15)
    tau = integrated_autocorr_time(x)
    assert tau == pytest.approx((1 + phi) / (1 - phi), rel=0.15)


def test_blocking_monotone_until_plateau_and_deterministic():
    x = ar1(1 << 16, 0.95, np.random.default_rng(1))
    sizes, errs = blocking_levels(x)
    se, _ = blocking_error(x)
    plateau = int(np.flatnonzero(errs >= se * (1 - 1e-12))[0])
    assert plateau > 0
    assert np.all(np.diff(errs[: plateau + 1]) > 0)
    assert np.all(sizes[:-1] // 2 == sizes[1:])
    assert sizes[-1] >= 32
    assert blocking_error(x) == blocking_error(x.copy())


def test_white_noise_blocking_and_tau():
    x = np.random.default_rng(2).standard_normal(1 << 16)
    se, converged = blocking_error(x)
    assert converged
    assert se == pytest.approx(1 / math.sqrt(x.size), rel=0.1)
    assert integrated_autocorr_time(x) == pytest.approx(1.0, abs=0.1)
    assert abs(geweke_z(x)) < 4


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.integers(0, 500), min_size=2, max_size=300), seed=st.integers(0, 1000))
def test_mean_std_invariant_under_permutation(values, seed):
    x = np.asarray(values)
    a = canonical_stats(series_of(x))
    b = canonical_stats(series_of(np.random.default_rng(seed).permutation(x)))
    assert a.mean_n0 == pytest.approx(b.mean_n0, rel=1e-12, abs=1e-12)
    assert a.std_n0 == pytest.approx(b.std_n0, rel=1e-9, abs=1e-9)
    assert a.mean_n0 == pytest.approx(float(np.mean(x)), rel=1e-12)
    assert a.std_n0 == pytest.approx(float(np.std(x)), rel=1e-9, abs=1e-9)


def test_permutation_changes_errors_only_mildly_for_iid():
    x = np.random.default_rng(3).poisson(50, 1 << 14)
    a = canonical_stats(series_of(x))
    b = canonical_stats(series_of(np.random.default_rng(4).permutation(x)))
    assert a.se_mean == pytest.approx(b.se_mean, rel=0.2)
    assert a.se_std == pytest.approx(b.se_std, rel=0.2)


def test_merge_single_is_identity():
    s = series_of([1, 2, 3, 4])
    assert merge_series([s]) is s


def test_merge_refuses_mismatch():
    with pytest.raises(ValueError):
        merge_series([series_of([1, 2], seed=1, beta=1.0), series_of([1, 2], seed=2, beta=2.0)])
    with pytest.raises(ValueError):
        merge_series([series_of([1, 2], seed=1), series_of([1, 2], seed=1)])


def test_merging_k_replicas_shrinks_error():
    rng = np.random.default_rng(5)
    n = 4096
    single = canonical_stats(series_of(rng.normal(100, 10, n).round(), seed=0))
    merged = merge_series([series_of(rng.normal(100, 10, n).round(), seed=k) for k in range(1, 5)])
    assert merged.n_replicas == 4
    assert [lab for lab, _ in merged.replica_segments()] == [0, 1, 2, 3]
    est = canonical_stats(merged)
    assert est.se_mean / single.se_mean == pytest.approx(0.5, rel=0.25)
    assert est.se_std / single.se_std == pytest.approx(0.5, rel=0.3)


def test_replica_scatter_dominates_when_replicas_disagree():
    a = series_of(np.random.default_rng(6).normal(0, 1, 4096), seed=1)
    b = series_of(np.random.default_rng(7).normal(5, 1, 4096), seed=2)
    est = canonical_stats(merge_series([a, b]))
    assert est.se_mean >= 2.4


def test_full_window_is_identity():
    e = np.random.default_rng(8).uniform(0, 10, 500)
    s = series_of(np.arange(500), e)
    out = microcanonical_filter(s, EnergyWindow(5.0, 100.0))
    assert np.array_equal(out.n0, s.n0) and np.array_equal(out.energy, s.energy)


def test_empty_window_raises():
    s = series_of(np.arange(500), np.repeat([1.0, 2.0], 250))
    with pytest.raises(InsufficientSamplesError):
        microcanonical_filter(s, EnergyWindow(1.5, 1e-9))
    with pytest.raises(ValueError):
        EnergyWindow(1.5, 0.0)


def test_modal_energy_on_discrete_spectrum():
    e = np.concatenate([np.full(500, 1.5), np.full(300, 3.3), np.full(200, 4.7)])
    assert modal_energy(np.random.default_rng(9).permutation(e)) == 1.5
    assert modal_energy(np.full(10, 2.0)) == 2.0


@pytest.fixture(scope="module")
def tiny_series():
    m = build_mode_set(1, None, 9)
    cfg = ChainConfig(5, 0.5, 0.2, steps=6_000_000, burn_in=10_000, thin=3, seed=21)
    return run_chain(cfg, m), enumerate_exact(5, m, 0.2, 0.5)


def test_fixed_window_matches_exact_shell(tiny_series):
    series, exact = tiny_series
    shell = exact.shell_at(6.3)
    est = microcanonical_stats(series, EnergyWindow(6.3, 0.05))
    assert est.mean_n0 == pytest.approx(shell.mean_n0, rel=0.05)
    assert est.std_n0 == pytest.approx(shell.std_n0, rel=0.05)
    assert est.window == EnergyWindow(6.3, 0.05)


def test_auto_window_isolates_modal_shell(tiny_series):
    series, exact = tiny_series
    w = auto_window(series)
    assert w.center == pytest.approx(exact.modal_shell.energy)
    levels = np.unique(np.round([s.energy for s in exact.shells], 9))
    inside = levels[np.abs(levels - w.center) <= w.half_width]
    assert inside.tolist() == pytest.approx([exact.modal_shell.energy])
    est = estimate(series, "microcanonical")
    assert est.ensemble == "microcanonical"
    assert (est.mean_n0, est.std_n0) == (5.0, 0.0)


def test_estimate_rejects_unknown_ensemble():
    with pytest.raises(ValueError):
        estimate(series_of([1, 2]), "grand")
