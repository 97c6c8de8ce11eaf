import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from radioloc.bounds import (C0, DiscreteSpectrum, autocorrelation, crlb_range_variance,
                             equivalent_bandwidth_sq, tdoa_error_floor, zzlb_range_variance)
from radioloc.errors import ZeroEnergy, ZeroEquivalentBandwidth

DF = 15e3


def test_beta_examples():
    assert equivalent_bandwidth_sq(DiscreteSpectrum.flat(1, DF)) == 0.0
    assert equivalent_bandwidth_sq(DiscreteSpectrum.flat(3, DF)) == pytest.approx(1.5e8, rel=1e-12)
    n = 101
    flat = DiscreteSpectrum.flat(n, DF)
    # flat: df^2 (N^2 - 1) / 12
    assert equivalent_bandwidth_sq(flat) == pytest.approx(DF ** 2 * (n * n - 1) / 12, rel=1e-12)
    edge = equivalent_bandwidth_sq(DiscreteSpectrum.edge(n, DF))
    assert edge == pytest.approx((DF * 50) ** 2, rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert equivalent_bandwidth_sq(DiscreteSpectrum(rng.random(n), DF)) <= edge * (1 + 1e-12)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        DiscreteSpectrum.flat(4, DF)
    with pytest.raises(ValueError):
        DiscreteSpectrum.flat(3, 0.0)
    with pytest.raises(ZeroEnergy):
        equivalent_bandwidth_sq(DiscreteSpectrum(np.zeros(5), DF))


def test_crlb_values():
    s = DiscreteSpectrum.flat(1201, DF)
    b2 = DF ** 2 * (1201 ** 2 - 1) / 12
    for snr in (1e-12, 1.0, 1e4):
        expected = C0 ** 2 / (8 * np.pi ** 2 * b2 * snr)
        assert crlb_range_variance(s, snr).variance == pytest.approx(expected, rel=1e-12)
    r = crlb_range_variance(s, 10.0).variance / crlb_range_variance(s, 20.0).variance
    assert r == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ZeroEquivalentBandwidth):
        crlb_range_variance(DiscreteSpectrum.flat(1, DF), 10.0)
    with pytest.raises(ValueError):
        crlb_range_variance(s, 0.0)


def test_autocorrelation_examples():
    s = DiscreteSpectrum.flat(3, DF)
    assert autocorrelation(s, 0.0) == pytest.approx(1.0)
    # (1 + 2 cos(2 pi df tau)) / 3
    tau = np.array([1e-6, 1 / (4 * DF), 1 / (3 * DF)])
    assert np.allclose(autocorrelation(s, tau), (1 + 2 * np.cos(2 * np.pi * DF * tau)) / 3)
    assert abs(autocorrelation(s, 1 / (3 * DF))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(amps=st.lists(st.floats(0, 10), min_size=7, max_size=7).filter(lambda a: sum(a) > 1e-3),
       tau=st.floats(-1e-3, 1e-3))
def test_autocorrelation_properties(amps, tau):
    s = DiscreteSpectrum(np.array(amps), DF)
    p = autocorrelation(s, tau)
    assert abs(p) <= 1 + 1e-12
    assert np.isclose(autocorrelation(s, -tau), np.conj(p), atol=1e-12)


def zzlb_oracle(spec, snr, t_obs):
    l, p = spec.indices, spec.power
    e = p.sum()

    def f(t):
        rho = 1 - np.sum(p * np.cos(2 * np.pi * l * spec.subcarrier_spacing * t)) / e
        return t * (1 - t / t_obs) * norm.sf(np.sqrt(snr * max(rho, 0.0)))
    # break points at the correlation sidelobes
    edges = np.linspace(0, t_obs, 2 * len(l) + 1)
    v = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-11)[0] for a, b in zip(edges[:-1], edges[1:]))
    return C0 ** 2 * v


@pytest.mark.parametrize("snr_db", [-10.0, 0.0, 10.0])
def test_zzlb_matches_independent_quadrature(snr_db):
    s = DiscreteSpectrum.flat(31, DF)
    t_obs = 0.5 / DF
    snr = 10 ** (snr_db / 10)
    assert zzlb_range_variance(s, snr, t_obs).variance == pytest.approx(
        zzlb_oracle(s, snr, t_obs), rel=1e-6)


def test_zzlb_edge_spectrum_matches_quadrature():
    s = DiscreteSpectrum.edge(301, DF)
    t_obs = 0.5 / DF
    assert zzlb_range_variance(s, 100.0, t_obs).variance == pytest.approx(
        zzlb_oracle(s, 100.0, t_obs), rel=1e-6)


def test_zzlb_limits():
    s = DiscreteSpectrum.flat(1201, DF)
    t_obs = 0.5 / DF
    prior = C0 ** 2 * t_obs ** 2 / 12
    assert zzlb_range_variance(s, 1e-12, t_obs).variance == pytest.approx(prior, rel=1e-5)
    hi = zzlb_range_variance(s, 1e4, t_obs).variance
    assert hi / crlb_range_variance(s, 1e4).variance == pytest.approx(1.0, rel=1e-2)
    lo = zzlb_range_variance(s, 10 ** -1.5, t_obs).variance
    assert lo > 100 * crlb_range_variance(s, 10 ** -1.5).variance


def test_zzlb_monotone_and_bracketed():
    s = DiscreteSpectrum.flat(1201, DF)
    t_obs = 0.5 / DF
    prior = C0 ** 2 * t_obs ** 2 / 12
    snr_db = np.linspace(-20, 40, 20)
    vals = [zzlb_range_variance(s, 10 ** (d / 10), t_obs).variance for d in snr_db]
    assert np.all(np.diff(vals) <= 0)
    assert all(v <= prior for v in vals)
    # above threshold the bound sits on or just over the CRLB
    for d, v in zip(snr_db, vals):
        if d >= 10:
            assert v >= crlb_range_variance(s, 10 ** (d / 10)).variance * (1 - 1e-3)


def test_zzlb_quadrature_convergence():
    s = DiscreteSpectrum.edge(301, DF)
    t_obs = 0.5 / DF
    a = zzlb_range_variance(s, 100.0, t_obs, quadrature_points=256).variance
    b = zzlb_range_variance(s, 100.0, t_obs, quadrature_points=512).variance
    assert a == pytest.approx(b, rel=1e-6)
    with pytest.raises(ValueError):
        zzlb_range_variance(s, 100.0, t_obs, quadrature_points=32)
    with pytest.raises(ValueError):
        zzlb_range_variance(s, 100.0, t_obs, mode="other")


def test_zzlb_literal_mode_is_looser_at_high_snr():
    s = DiscreteSpectrum.flat(101, DF)
    t_obs = 0.5 / DF
    sq = zzlb_range_variance(s, 1e4, t_obs).variance
    lit = zzlb_range_variance(s, 1e4, t_obs, mode="literal").variance
    assert lit > sq


def test_tdoa_floor():
    assert tdoa_error_floor(1e6) == pytest.approx(C0 / 1e6)
    assert tdoa_error_floor(4e6, dims=2) == pytest.approx(105.99, abs=0.01)
    with pytest.raises(ValueError):
        tdoa_error_floor(0.0)
    with pytest.raises(ValueError):
        tdoa_error_floor(1e6, dims=3)


def test_power_csv(tmp_path):
    p = tmp_path / "psd.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["power"])
        for v in (1.0, 0.0, 4.0):
            w.writerow([v])
    s = DiscreteSpectrum.from_power_csv(p, DF)
    assert np.allclose(s.power, [1.0, 0.0, 4.0])
    assert equivalent_bandwidth_sq(s) == pytest.approx(DF ** 2)
