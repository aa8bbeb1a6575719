import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfgnn.channel import (
    Geometry,
    LinkBudget,
    PathLossParams,
    generate_channel,
    noise_variance_for_snr,
    path_loss_db,
    sample_geometry,
    sample_small_scale,
)
from cfgnn.errors import InvalidArgumentError


@pytest.mark.parametrize("d, fc, expected", [
    (1.0, 1.0, 32.4),
    (10.0, 1.0, 64.3),
    # 30-digit mpmath evaluation of 32.4 + 31.9 + 20 log10(3.5)
    (10.0, 3.5, 75.1813608870055127),
])
def test_path_loss_values(d, fc, expected):
    assert path_loss_db(d, PathLossParams(carrier_ghz=fc)) == pytest.approx(expected, abs=1e-12)


def test_path_loss_clamps_below_d_min():
    params = PathLossParams(carrier_ghz=1.0, d_min=1.0)
    assert path_loss_db(0.0, params) == path_loss_db(1.0, params) == pytest.approx(32.4)
    assert path_loss_db(0.5, params) == pytest.approx(32.4)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
def test_path_loss_rejects_bad_distance(bad):
    with pytest.raises(InvalidArgumentError):
        path_loss_db(bad)


def test_path_loss_params_validation():
    with pytest.raises(InvalidArgumentError):
        PathLossParams(carrier_ghz=0)
    with pytest.raises(InvalidArgumentError):
        PathLossParams(d_min=-1)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.1, 100), st.floats(0.1, 100))
def test_path_loss_monotone(d1, d2, f1, f2):
    lo_d, hi_d = sorted((d1, d2))
    lo_f, hi_f = sorted((f1, f2))
    assert path_loss_db(lo_d, PathLossParams(lo_f)) <= path_loss_db(hi_d, PathLossParams(lo_f))
    assert path_loss_db(lo_d, PathLossParams(lo_f)) <= path_loss_db(lo_d, PathLossParams(hi_f))


def test_small_scale_statistics():
    h = sample_small_scale(1000, 1000, np.random.default_rng(0))
    assert abs(h.mean()) < 0.01
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.01)
    assert np.var(h.real) == pytest.approx(0.5, abs=0.01)
    assert np.var(h.imag) == pytest.approx(0.5, abs=0.01)


def test_small_scale_deterministic():
    a = sample_small_scale(3, 5, np.random.default_rng(7))
    b = sample_small_scale(3, 5, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_geometry_sampling():
    geom = sample_geometry(10.0, 33, 4, np.random.default_rng(1))
    assert geom.ap_positions.shape == (33, 2) and geom.ue_positions.shape == (4, 2)
    for pos in (geom.ap_positions, geom.ue_positions):
        assert np.all((pos >= 0) & (pos <= 10.0))
    again = sample_geometry(10.0, 33, 4, np.random.default_rng(1))
    assert np.array_equal(geom.ap_positions, again.ap_positions)
    assert np.array_equal(geom.ue_positions, again.ue_positions)
    with pytest.raises(InvalidArgumentError):
        sample_geometry(0.0, 3, 2, np.random.default_rng(1))


def test_coincident_points_stay_finite():
    geom = Geometry(np.array([[5.0, 5.0]]), np.array([[5.0, 5.0]]))
    g = generate_channel(geom, PathLossParams(), np.random.default_rng(0))
    assert g.shape == (1, 1) and np.all(np.isfinite(g))


def test_unit_fading_gives_sqrt_beta():
    rng = np.random.default_rng(2)
    geom = sample_geometry(10.0, 6, 3, rng)
    params = PathLossParams()
    g = generate_channel(geom, params, rng, fading=1.0)
    beta = 10 ** (-path_loss_db(geom.distances(), params) / 10)
    assert np.array_equal(np.abs(g), np.sqrt(beta))


def test_channel_power_monte_carlo_unit_distance():
    # all links at 1 m, 1 GHz: E|g|^2 = 10^(-3.24) (30-digit mpmath value)
    expected = 5.75439937337156930e-4
    geom = Geometry(np.zeros((1, 2)), np.array([[1.0, 0.0]]))
    rng = np.random.default_rng(3)
    params = PathLossParams(carrier_ghz=1.0)
    n = 100_000
    draws = np.array([generate_channel(geom, params, rng)[0, 0] for _ in range(n)])
    # |h|^2 ~ Exp(1): the sample mean has std beta / sqrt(n)
    assert abs(np.mean(np.abs(draws) ** 2) - expected) < 3 * expected / np.sqrt(n)


def test_channel_power_follows_path_loss_per_link():
    rng = np.random.default_rng(4)
    geom = sample_geometry(20.0, 5, 3, rng)
    params = PathLossParams()
    n = 20_000
    power = np.zeros((3, 5))
    for _ in range(n):
        power += np.abs(generate_channel(geom, params, rng)) ** 2
    power /= n
    beta = 10 ** (-path_loss_db(geom.distances(), params) / 10)
    assert np.all(np.abs(power - beta) < 3 * beta / np.sqrt(n))


def test_generate_channel_deterministic():
    geom = sample_geometry(10.0, 8, 2, np.random.default_rng(5))
    a = generate_channel(geom, PathLossParams(), np.random.default_rng(9))
    b = generate_channel(geom, PathLossParams(), np.random.default_rng(9))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("p, snr, expected", [
    (1.0, 0.0, 1.0),
    (1.0, 10.0, 0.1),
    (2.0, 3.0, 1.00237446725454457),
])
def test_noise_variance_for_snr(p, snr, expected):
    assert noise_variance_for_snr(p, snr) == pytest.approx(expected, rel=1e-12)


@given(st.floats(1e-6, 1e6), st.floats(-50, 80))
def test_link_budget_round_trip(p, snr):
    budget = LinkBudget.from_snr(p, snr)
    assert budget.snr_tx_db == pytest.approx(snr, rel=1e-9, abs=1e-9)


def test_link_budget_validation():
    with pytest.raises(InvalidArgumentError):
        LinkBudget(0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        noise_variance_for_snr(-1.0, 0.0)
