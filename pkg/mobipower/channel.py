import math
from typing import Optional, Union

import numpy as np
from scipy.special import j0

from mobipower.geometry import CellLayout, DeviceKinematics
from mobipower.models import SPEED_OF_LIGHT, NetworkConfig

ArrayLike = Union[float, np.ndarray]


def path_loss_db(distance_km: ArrayLike, min_distance_km: float = 0.01) -> ArrayLike:
    """
    LTE macro path loss 128.1 + 37.6 log10(d), d in km, clamped below at
    `min_distance_km`.
    """
    distance_km = np.asarray(distance_km, dtype=float)
    if np.isnan(distance_km).any():
        raise ValueError("distance_km contains NaN")
    loss = 128.1 + 37.6 * np.log10(np.maximum(distance_km, min_distance_km))
    return float(loss) if loss.ndim == 0 else loss


def shadowing_correlation(displacement_m: ArrayLike, d_cor: float) -> ArrayLike:
    return np.exp(-np.asarray(displacement_m, dtype=float) / d_cor)


def jakes_correlation(speed_mps: ArrayLike, f_c: float, T: float) -> ArrayLike:
    doppler = np.asarray(speed_mps, dtype=float) * f_c / SPEED_OF_LIGHT
    return doppler_correlation(doppler, T)


def doppler_correlation(doppler_hz: ArrayLike, T: float) -> ArrayLike:
    rho = j0(2 * math.pi * np.asarray(doppler_hz, dtype=float) * T)
    return float(rho) if np.ndim(rho) == 0 else rho


class ShadowingField:
    values_db: np.ndarray
    sigma_db: float
    d_cor: float

    def __init__(self, values_db: np.ndarray, sigma_db: float, d_cor: float):
        self.values_db = values_db
        self.sigma_db = sigma_db
        self.d_cor = d_cor

    @classmethod
    def initial(
        cls, K: int, N: int, sigma_db: float, d_cor: float, rng: np.random.Generator
    ) -> "ShadowingField":
        return cls(rng.normal(0, sigma_db, (K, N)), sigma_db, d_cor)


def step_shadowing(
    field: ShadowingField, displacement_m: np.ndarray, rng: np.random.Generator
) -> ShadowingField:
    """
    Gudmundson AR(1) update toward every cell center: X <- rho X + sigma e with
    e ~ N(0, 1 - rho^2) and rho = exp(-dx / d_cor) shared by all K entries of a device.
    """
    rho = shadowing_correlation(displacement_m, field.d_cor)[None, :]
    innovation = rng.standard_normal(field.values_db.shape)
    values = rho * field.values_db + field.sigma_db * np.sqrt(1 - rho**2) * innovation
    return ShadowingField(values, field.sigma_db, field.d_cor)


class FadingField:
    h: np.ndarray
    rho: np.ndarray

    def __init__(self, h: np.ndarray, rho: np.ndarray):
        self.h = h
        self.rho = rho

    @classmethod
    def initial(cls, K: int, N: int, rng: np.random.Generator) -> "FadingField":
        return cls(complex_gaussian((K, N), rng), np.ones(N))


def complex_gaussian(shape, rng: np.random.Generator) -> np.ndarray:
    """
    Circularly symmetric complex Gaussian samples with unit variance.
    """
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def step_fading(
    field: FadingField, rho: np.ndarray, rng: np.random.Generator
) -> FadingField:
    """
    First-order Gauss-Markov update h <- rho h + e with e ~ CN(0, 1 - rho^2);
    `rho` is per device.
    """
    rho = np.asarray(rho, dtype=float)
    innovation = complex_gaussian(field.h.shape, rng)
    h = rho[None, :] * field.h + np.sqrt(1 - rho**2)[None, :] * innovation
    return FadingField(h, rho)


class GainMatrix:
    alpha: np.ndarray
    g_bar: np.ndarray

    def __init__(self, alpha: np.ndarray, g_bar: np.ndarray):
        self.alpha = alpha
        self.g_bar = g_bar

    def link_gains(self, serving: np.ndarray) -> np.ndarray:
        """
        N x N matrix G with G[m, n] = gain from link m's access point to receiver n.
        """
        return self.g_bar[serving, :]


def compose_gains(
    layout: CellLayout,
    devices: DeviceKinematics,
    shadowing: ShadowingField,
    fading: FadingField,
    min_distance_km: float = 0.01,
) -> GainMatrix:
    shape = (layout.K, devices.N)
    if shadowing.values_db.shape != shape or fading.h.shape != shape:
        raise ValueError(
            f"shape mismatch: layout/devices {shape}, shadowing "
            f"{shadowing.values_db.shape}, fading {fading.h.shape}"
        )

    loss_db = path_loss_db(layout.distances_km(devices.positions), min_distance_km)
    alpha = 10 ** (-(loss_db + shadowing.values_db) / 10)
    return GainMatrix(alpha, np.abs(fading.h) ** 2 * alpha)


class ChannelState:
    """
    Shadowing, fading and the composed gains of one deployment at the current slot.
    """

    shadowing: ShadowingField
    fading: FadingField
    gains: GainMatrix

    def __init__(
        self, shadowing: ShadowingField, fading: FadingField, gains: GainMatrix
    ):
        self.shadowing = shadowing
        self.fading = fading
        self.gains = gains

    @classmethod
    def initial(
        cls,
        layout: CellLayout,
        devices: DeviceKinematics,
        config: NetworkConfig,
        shadowing_rng: np.random.Generator,
        fading_rng: np.random.Generator,
    ) -> "ChannelState":
        shadowing = ShadowingField.initial(
            layout.K,
            devices.N,
            config.shadowing_std_db,
            config.correlation_length_m,
            shadowing_rng,
        )
        fading = FadingField.initial(layout.K, devices.N, fading_rng)
        return cls(
            shadowing,
            fading,
            compose_gains(layout, devices, shadowing, fading, config.min_distance_km),
        )

    def advance(
        self,
        layout: CellLayout,
        devices: DeviceKinematics,
        config: NetworkConfig,
        shadowing_rng: np.random.Generator,
        fading_rng: np.random.Generator,
        doppler_hz: Optional[float] = None,
    ) -> "ChannelState":
        shadowing = step_shadowing(self.shadowing, devices.displacement, shadowing_rng)
        if doppler_hz is None:
            rho = jakes_correlation(
                devices.speeds, config.carrier_hz, config.slot_duration_s
            )
        else:
            rho = np.full(
                devices.N, doppler_correlation(doppler_hz, config.slot_duration_s)
            )
        fading = step_fading(self.fading, rho, fading_rng)
        return ChannelState(
            shadowing,
            fading,
            compose_gains(layout, devices, shadowing, fading, config.min_distance_km),
        )
