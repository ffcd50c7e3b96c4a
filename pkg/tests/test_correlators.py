import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from heitlerlab.correlators import (
    CorrelatorRequest,
    G_n_zero,
    coherent_distribution,
    g_n_heitler,
    g_n_zero,
    is_divergent,
    locate_antibunching_minimum,
    modulation_factor,
    photon_distribution,
    sweep_rows,
)
from heitlerlab.errors import AmbiguousMinimumError, ConfigError, PoleError
from heitlerlab.model import HomodyneConfig, SystemParams, signal_intensity, steady_state

PI = math.pi
P15 = SystemParams(0.15)

# Reference values below were produced by tests/oracles.py (density-matrix
# moments and a 1e-3 grid search refined by bounded minimization) and frozen.
G2_F1 = 53.086419753086126
G3_F1 = 963.6488340191947
DIP_N2 = 3.282450646738286
DIP_N3 = 4.663831146579203


def test_order_validation():
    with pytest.raises(ConfigError):
        g_n_zero(P15, HomodyneConfig(1.0), 0)
    with pytest.raises(ConfigError):
        CorrelatorRequest(P15, HomodyneConfig(), 1.5)
    r = CorrelatorRequest(P15, HomodyneConfig(1.0), 2)
    assert r.g() == pytest.approx(G2_F1)


@pytest.mark.parametrize("f", [0.0, 0.5, 1.0, 2.94, 4.17])
@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("omega", [1e-3, 0.15, 0.28, 0.4])
def test_g_matches_density_matrix(f, n, omega):
    ref = oracles.g(omega, f, PI, n) if f > 0 else 0.0
    # near F = 1 the oracle's float trace cancels down to 8 Omega^2 of the intensity
    rel = 1e-6 if f == 1.0 else 1e-8
    assert g_n_zero(SystemParams(omega), HomodyneConfig(f, PI), n) == pytest.approx(ref, rel=rel, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(1e-3, 2.0),
    st.floats(0.05, 6.0),
    st.floats(-PI, PI),
    st.integers(1, 5),
)
def test_G_matches_operator_powers(omega, f, phi, n):
    p = SystemParams(omega)
    cfg = HomodyneConfig(f, phi)
    assert G_n_zero(p, cfg, n) == pytest.approx(oracles.G(omega, f, phi, n), rel=1e-7, abs=1e-300)


@settings(max_examples=100)
@given(st.floats(0, 2.0), st.floats(0, 6.0), st.floats(-PI, PI), st.integers(1, 5))
def test_G_g_consistency(omega, f, phi, n):
    p = SystemParams(omega)
    cfg = HomodyneConfig(f, phi)
    i1 = signal_intensity(steady_state(p), cfg)
    if is_divergent(p, cfg) or i1 == 0:
        return
    assert G_n_zero(p, cfg, n) == pytest.approx(g_n_zero(p, cfg, n) * i1 ** n, rel=1e-10, abs=1e-300)


def test_G_examples():
    s = steady_state(P15)
    assert G_n_zero(P15, HomodyneConfig(0.7, 1.1), 1) == pytest.approx(signal_intensity(s, HomodyneConfig(0.7, 1.1)), rel=1e-14)
    assert G_n_zero(P15, HomodyneConfig(1.0), 2) == pytest.approx(7.20e-3, rel=2e-3)
    # F = 0 limit: bare emitter, <sigma^dag sigma> = population and higher moments vanish
    assert G_n_zero(P15, HomodyneConfig(0.0), 1) == pytest.approx(s.population, rel=1e-14)
    assert G_n_zero(P15, HomodyneConfig(0.0), 2) == 0.0


@settings(max_examples=100)
@given(st.floats(0, 3.0), st.floats(0, 6.0), st.floats(-PI, PI))
def test_g1_is_one(omega, f, phi):
    assert g_n_zero(SystemParams(omega), HomodyneConfig(f, phi), 1) == 1.0


def test_g_examples():
    assert g_n_zero(P15, HomodyneConfig(1.0), 2) == pytest.approx(G2_F1, rel=1e-12)
    assert g_n_zero(P15, HomodyneConfig(1.0), 2) == pytest.approx(1.72 / 0.0324, rel=1e-12)
    assert g_n_zero(SystemParams(0.3), HomodyneConfig(0.0), 2) == 0.0
    assert g_n_zero(SystemParams(1e-4), HomodyneConfig(2.0), 3) == pytest.approx(16, abs=1e-2)


def test_divergence_flag():
    p = SystemParams(0.0)
    cfg = HomodyneConfig(1.0, PI)
    assert is_divergent(p, cfg)
    assert g_n_zero(p, cfg, 2) == math.inf
    assert not is_divergent(P15, cfg)


def test_heitler_examples():
    assert g_n_heitler(2, 2) == 0.0
    assert g_n_heitler(2, 3) == 16.0
    assert g_n_heitler(3, 2) == 0.5625
    assert g_n_heitler(3, 3) == 0.0
    for n in (2, 3, 4):
        assert g_n_heitler(0.0, n) == 0.0
        assert g_n_heitler(float(n), n) == 0.0
    with pytest.raises(PoleError):
        g_n_heitler(1.0, 2)


@pytest.mark.parametrize("f", [0.5, 2.0, 3.0, 5.0, 7.5])
@pytest.mark.parametrize("n", [2, 3, 4])
def test_heitler_matches_vanishing_drive_moments(f, n):
    assert g_n_heitler(f, n) == pytest.approx(oracles.heitler_direct(f, n), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_pole_order(n):
    # g(1 + e) e^{2n} -> (n-1)^2; Richardson-combine the two step sizes
    vals = {}
    for eps in (1e-2, 1e-3):
        vals[eps] = 0.5 * (g_n_heitler(1 + eps, n) + g_n_heitler(1 - eps, n)) * eps ** (2 * n)
    rich = (100 * vals[1e-3] - vals[1e-2]) / 99
    assert rich == pytest.approx((n - 1) ** 2, rel=1e-4)
    assert vals[1e-3] == pytest.approx((n - 1) ** 2, rel=5e-3)


@pytest.mark.parametrize("f", [0.5, 2.0, 3.0, 5.0])
@pytest.mark.parametrize("n", [2, 3, 4])
def test_limit_consistency(f, n):
    full = g_n_zero(SystemParams(1e-4), HomodyneConfig(f, PI), n)
    h = g_n_heitler(f, n)
    assert abs(full - h) / max(h, 1.0) < 1e-3


def test_orderings():
    g = lambda f, n: g_n_heitler(f, n)
    assert g(2, 2) < 1 < g(2, 3)
    assert g(3, 3) < g(3, 2) < 1
    # same structure at finite drive near the shifted dips
    assert g_n_zero(P15, HomodyneConfig(2.94), 2) < 1 < g_n_zero(P15, HomodyneConfig(2.94), 3)
    assert g_n_zero(P15, HomodyneConfig(4.17), 3) < g_n_zero(P15, HomodyneConfig(4.17), 2) < 1


# ---------------------------------------------------------------------------
# photon-number distribution
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("omega,f,phi", [(0.15, 0.0, PI), (0.15, 1.0, PI), (0.15, 3.0, PI), (0.4, 2.0, 0.5), (1e-3, 1.0, PI), (0.5, 6.0, PI)])
def test_distribution_matches_extended_precision(omega, f, phi):
    d = photon_distribution(SystemParams(omega), HomodyneConfig(f, phi), n_max=12)
    for n in range(8):
        assert d.probs[n] == pytest.approx(oracles.p_series(omega, f, phi, n), rel=1e-8, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 6.0), st.floats(-PI, PI))
def test_distribution_normalized(omega, f, phi):
    d = photon_distribution(SystemParams(omega), HomodyneConfig(f, phi))
    assert np.all(d.probs >= 0) and np.all(d.probs <= 1)
    assert abs(d.total - 1) <= 1e-6
    assert d.residual < 1e-6
    assert d.truncation == 40


def test_distribution_vanishing_emission():
    d = photon_distribution(SystemParams(1e-8), HomodyneConfig(0.0))
    assert d.probs[0] == pytest.approx(1, abs=1e-12)
    assert np.all(d.probs[1:] < 1e-12)


@pytest.mark.parametrize("n,ratio", [(2, 1), (3, 4), (4, 9)])
def test_amplified_coincidences(n, ratio):
    p = SystemParams(1e-3)
    cfg = HomodyneConfig(1.0, PI)
    d = photon_distribution(p, cfg)
    coh = coherent_distribution(p, cfg, 10)
    assert d.probs[n] / coh[n] == pytest.approx(ratio, rel=1e-2)


def test_coherent_distribution():
    coh = coherent_distribution(P15, HomodyneConfig(2.0), 30)
    assert coh.sum() == pytest.approx(1, abs=1e-14)
    assert coh[1] / coh[0] == pytest.approx(4 * abs(steady_state(P15).mean_field) ** 2)
    assert coherent_distribution(P15, HomodyneConfig(0.0), 5)[0] == 1


def test_distribution_rejects_small_truncation():
    with pytest.raises(ConfigError):
        photon_distribution(P15, HomodyneConfig(1.0), n_max=3)


# ---------------------------------------------------------------------------
# modulation factor and minima
# ---------------------------------------------------------------------------

def test_modulation_examples():
    assert modulation_factor(1.0, 1, 0.0) == 0.0
    assert modulation_factor(1.0, 3, 0.0) == 4.0
    for n in range(1, 6):
        assert modulation_factor(float(n), n, 0.0) == 0.0
        assert modulation_factor(float(n), n, leading_only=True) == 0.0
    with pytest.raises(ConfigError):
        modulation_factor(0.0, 2)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("f", [0.5, 1.0, 2.0, 3.0])
def test_modulation_matches_distribution(n, f):
    # p(n) / p_coh(n) at weak drive, including the Omega^2 term
    omega = 1e-3
    ratio = oracles.p_series(omega, f, PI, n) / oracles.p_coherent(omega, f, PI, n)
    assert modulation_factor(f, n, omega) == pytest.approx(ratio, abs=5e-5)
    lead = modulation_factor(f, n, omega, leading_only=True)
    assert lead == pytest.approx((1 - n / f) ** 2)


def test_minimum_heitler_limit():
    assert locate_antibunching_minimum(SystemParams(1e-4), PI, 2) == pytest.approx(2.0, abs=1e-2)
    assert locate_antibunching_minimum(SystemParams(1e-4), PI, 3) == pytest.approx(3.0, abs=1e-2)


def test_minimum_finite_drive():
    f2 = locate_antibunching_minimum(P15, PI, 2)
    f3 = locate_antibunching_minimum(P15, PI, 3)
    assert f2 == pytest.approx(DIP_N2, abs=1e-6)
    assert f3 == pytest.approx(DIP_N3, abs=1e-6)
    assert 2 < f2 < f3


def test_minimum_rejects_pole_in_range():
    with pytest.raises(ConfigError):
        locate_antibunching_minimum(P15, PI, 2, search_range=(0.5, 3.0))


def test_minimum_ambiguous(monkeypatch):
    # the physical g(n) is unimodal on every range probed, so feed the locator a
    # two-well stand-in to exercise the pre-scan
    import heitlerlab.correlators as corr

    monkeypatch.setattr(corr, "g_n_zero", lambda p, cfg, n: math.cos(3 * cfg.f) + 2)
    with pytest.raises(AmbiguousMinimumError):
        locate_antibunching_minimum(P15, PI, 2, search_range=(1.2, 6.0))


def test_minimum_wide_range_still_unique():
    f4 = locate_antibunching_minimum(SystemParams(1e-4), PI, 4, search_range=(1.5, 8.0))
    assert f4 == pytest.approx(4.0, abs=1e-2)


def test_sweep_rows_columns():
    rows = list(sweep_rows(P15, PI, [0.0, 1.0, 2.0]))
    assert set(rows[0]) == {"F", "intensity", "g2", "g3", "g4", "divergent"} | {f"p{k}" for k in range(7)}
    assert rows[1]["g2"] == pytest.approx(G2_F1)
    assert rows[0]["p1"] == pytest.approx(steady_state(P15).population, rel=1e-12)
