import math

import numpy as np
import pytest

from mobipower.channel import (
    ChannelState,
    FadingField,
    ShadowingField,
    compose_gains,
    doppler_correlation,
    jakes_correlation,
    path_loss_db,
    shadowing_correlation,
    step_fading,
    step_shadowing,
)
from mobipower.geometry import (
    DeviceKinematics,
    build_layout,
    init_devices,
    step_mobility,
)
from mobipower.models import NetworkConfig


def _j0_series(x: float, terms: int = 40) -> float:
    half = x / 2
    return sum(
        (-1) ** k * half ** (2 * k) / math.factorial(k) ** 2 for k in range(terms)
    )


@pytest.mark.parametrize(
    "distance_km, loss_db",
    [(1.0, 128.1), (0.1, 90.5), (0.2, 101.819)],
)
def test_path_loss(distance_km, loss_db):
    assert path_loss_db(distance_km) == pytest.approx(loss_db, abs=1e-3)


def test_path_loss_is_clamped_at_minimum_distance():
    assert path_loss_db(0.0) == pytest.approx(52.9)
    assert path_loss_db(0.001) == path_loss_db(0.01)
    assert np.allclose(path_loss_db(np.array([0.0, 1.0])), [52.9, 128.1])


def test_path_loss_rejects_nan():
    with pytest.raises(ValueError):
        path_loss_db(np.array([0.5, float("nan")]))


@pytest.mark.parametrize(
    "displacement, rho",
    [(0.0, 1.0), (10.0, math.exp(-1)), (1e6, 0.0)],
)
def test_shadowing_correlation(displacement, rho):
    assert shadowing_correlation(displacement, 10.0) == pytest.approx(rho, abs=1e-12)


def test_static_device_keeps_its_shadowing():
    field = ShadowingField.initial(4, 3, 10.0, 10.0, np.random.default_rng(0))

    stepped = step_shadowing(field, np.zeros(3), np.random.default_rng(1))

    assert np.array_equal(stepped.values_db, field.values_db)


def test_far_move_redraws_shadowing():
    field = ShadowingField(np.full((50, 200), 30.0), 10.0, 10.0)

    stepped = step_shadowing(field, np.full(200, 1e6), np.random.default_rng(2))

    assert stepped.values_db.mean() == pytest.approx(0.0, abs=0.5)
    assert stepped.values_db.var() == pytest.approx(100.0, rel=0.06)


def test_doppler_coefficient_at_rest_is_one():
    assert jakes_correlation(0.0, 2e9, 0.02) == 1.0


def test_doppler_coefficient_at_ten_hertz():
    assert doppler_correlation(10.0, 0.02) == pytest.approx(0.6425, abs=1e-4)


def test_doppler_coefficient_at_pedestrian_speed():
    assert jakes_correlation(2.5, 2e9, 0.02) == pytest.approx(0.1698, abs=1e-4)


def test_doppler_coefficient_matches_power_series():
    speeds = np.linspace(0, 5, 11)

    rho = jakes_correlation(speeds, 2e9, 0.02)

    expected = [_j0_series(2 * math.pi * v * 2e9 / 3e8 * 0.02) for v in speeds]
    assert np.allclose(rho, expected, atol=1e-10)


def test_fading_with_unit_correlation_is_frozen():
    field = FadingField.initial(3, 4, np.random.default_rng(0))

    stepped = step_fading(field, np.ones(4), np.random.default_rng(1))

    assert np.array_equal(stepped.h, field.h)


def test_fading_with_zero_correlation_is_fresh_unit_power():
    field = FadingField(np.full((100, 100), 5.0 + 0j), np.ones(100))

    stepped = step_fading(field, np.zeros(100), np.random.default_rng(3))

    assert np.mean(np.abs(stepped.h) ** 2) == pytest.approx(1.0, abs=0.05)
    assert abs(np.mean(stepped.h)) < 0.05


@pytest.mark.slow
@pytest.mark.parametrize("rho", [0.0, 0.1698, 0.6425, 0.99])
def test_fading_chain_moments(rho):
    rng = np.random.default_rng(11)
    steps = 100_000
    field = FadingField.initial(1, 1, rng)
    samples = np.empty(steps, dtype=complex)
    for t in range(steps):
        field = step_fading(field, np.array([rho]), rng)
        samples[t] = field.h[0, 0]

    power = np.abs(samples) ** 2
    effective = steps * (1 - rho**2) / (1 + rho**2)
    lag1 = np.mean(samples[1:] * np.conj(samples[:-1])).real / power.mean()

    assert power.mean() == pytest.approx(1.0, abs=3 / math.sqrt(effective) + 1e-3)
    spread = 3 * math.sqrt((1 + rho**2) / effective) + 1e-3
    assert lag1 == pytest.approx(rho, abs=spread)


@pytest.mark.slow
def test_shadowing_chain_moments():
    rng = np.random.default_rng(12)
    steps = 100_000
    rho = math.exp(-1)
    field = ShadowingField.initial(1, 1, 10.0, 10.0, rng)
    samples = np.empty(steps)
    for t in range(steps):
        field = step_shadowing(field, np.array([10.0]), rng)
        samples[t] = field.values_db[0, 0]

    lag1 = np.corrcoef(samples[1:], samples[:-1])[0, 1]

    assert samples.var() == pytest.approx(100.0, rel=0.03)
    assert lag1 == pytest.approx(rho, abs=0.01)


def test_unit_fading_at_one_kilometer():
    layout = build_layout(1, 200)
    device = DeviceKinematics(
        np.array([[1000.0, 0.0]]), np.zeros(1), np.zeros(1), np.zeros(1)
    )
    shadowing = ShadowingField(np.zeros((1, 1)), 10.0, 10.0)

    unit = FadingField(np.ones((1, 1), complex), np.ones(1))
    faded = FadingField(np.zeros((1, 1), complex), np.ones(1))
    gains = compose_gains(layout, device, shadowing, unit)
    silent = compose_gains(layout, device, shadowing, faded)

    assert gains.g_bar[0, 0] == pytest.approx(1.549e-13, rel=1e-3)
    assert gains.alpha[0, 0] == pytest.approx(10 ** -12.81)
    assert silent.g_bar[0, 0] == 0.0


def test_gains_match_scalar_recomputation():
    rng = np.random.default_rng(6)
    layout = build_layout(3, 200)
    devices, association = init_devices(layout, 5, rng, NetworkConfig({}))
    shadowing = ShadowingField.initial(3, 5, 10.0, 10.0, rng)
    fading = FadingField.initial(3, 5, rng)

    gains = compose_gains(layout, devices, shadowing, fading)

    for k in range(3):
        for n in range(5):
            d_km = math.dist(layout.centers[k], devices.positions[n]) / 1000
            loss = 128.1 + 37.6 * math.log10(max(d_km, 0.01))
            attenuation_db = loss + shadowing.values_db[k, n]
            expected = abs(fading.h[k, n]) ** 2 * 10 ** (-attenuation_db / 10)
            assert gains.g_bar[k, n] == pytest.approx(expected, rel=1e-12)

    G = gains.link_gains(association.serving)
    for m in range(5):
        for n in range(5):
            assert G[m, n] == gains.g_bar[association.serving[m], n]


def test_compose_gains_rejects_shape_mismatch():
    layout = build_layout(2, 200)
    device = DeviceKinematics(np.zeros((1, 2)), np.zeros(1), np.zeros(1), np.zeros(1))

    with pytest.raises(ValueError):
        compose_gains(
            layout,
            device,
            ShadowingField(np.zeros((3, 1)), 10.0, 10.0),
            FadingField(np.ones((2, 1), complex), np.ones(1)),
        )


def test_static_channel_without_doppler_override_is_frozen():
    config = NetworkConfig({"mobility": False, "cells": 2, "links": 4})
    layout = build_layout(2, 200)
    rng = np.random.default_rng(9)
    devices, _ = init_devices(layout, 4, rng, config)
    state = ChannelState.initial(layout, devices, config, rng, rng)

    moved = step_mobility(devices, layout, 1, rng, config)
    stepped = state.advance(layout, moved, config, rng, rng)

    assert np.array_equal(stepped.gains.g_bar, state.gains.g_bar)


def test_doppler_override_keeps_static_channel_fading():
    config = NetworkConfig(
        {"mobility": False, "fixed_doppler_hz": 10, "cells": 2, "links": 4}
    )
    layout = build_layout(2, 200)
    rng = np.random.default_rng(9)
    devices, _ = init_devices(layout, 4, rng, config)
    state = ChannelState.initial(layout, devices, config, rng, rng)

    stepped = state.advance(
        layout, devices, config, rng, rng, doppler_hz=config.fixed_doppler_hz
    )

    assert np.allclose(stepped.fading.rho, 0.6425, atol=1e-4)
    assert np.array_equal(stepped.shadowing.values_db, state.shadowing.values_db)
    assert not np.array_equal(stepped.gains.g_bar, state.gains.g_bar)
