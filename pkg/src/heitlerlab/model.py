"""Steady state of a resonantly driven two-level emitter and the homodyne admixture.

All closed forms depend on the driving only through ``Omega = omega / gamma``, so
rates are normalized internally to ``gamma = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, UndefinedRatioError


@dataclass(frozen=True)
class SystemParams:
    """Driving amplitude ``omega`` and radiative decay ``gamma`` (same rate units)."""

    omega: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma!r}")
        if not self.omega >= 0:
            raise ConfigError(f"omega must be >= 0, got {self.omega!r}")

    @property
    def drive(self) -> float:
        """Dimensionless driving Omega_sigma / gamma_sigma."""
        return self.omega / self.gamma


@dataclass(frozen=True)
class SteadyState:
    population: float
    mean_field: complex
    fluct_intensity: float

    @property
    def coherent_intensity(self) -> float:
        return abs(self.mean_field) ** 2

    @property
    def coherent_fraction(self) -> float:
        if self.population == 0:
            raise UndefinedRatioError("coherent fraction undefined for an undriven emitter")
        return self.coherent_intensity / self.population


@dataclass(frozen=True)
class HomodyneConfig:
    """Local-oscillator amplitude factor ``f`` and phase ``phi`` relative to arg<sigma>."""

    f: float = 0.0
    phi: float = math.pi

    def __post_init__(self):
        if not self.f >= 0:
            raise ConfigError(f"LO amplitude factor must be >= 0, got {self.f!r}")

    def lo_amplitude(self, state: SteadyState) -> complex:
        """Complex LO amplitude F |<sigma>| exp(i(phi + arg<sigma>)) = F <sigma> e^{i phi}."""
        return self.f * state.mean_field * complex(math.cos(self.phi), math.sin(self.phi))


def steady_state(params: SystemParams) -> SteadyState:
    w = params.drive
    denom = 1.0 + 8.0 * w * w
    population = 4.0 * w * w / denom
    mean_field = complex(0.0, 2.0 * w / denom)
    # population - |<sigma>|^2 written in its cancellation-free form 8 w^2 |<sigma>|^2
    coherent = (2.0 * w / denom) ** 2
    fluct = 8.0 * w * w * coherent
    return SteadyState(population=population, mean_field=mean_field, fluct_intensity=fluct)


def heitler_diagnostic(state: SteadyState) -> float:
    """Ratio of fluctuation to mean-field intensity (equals ``8 Omega**2``).

    The caller decides what counts as "much smaller than one"; nothing is
    classified here.
    """
    coherent = state.coherent_intensity
    if coherent == 0.0:
        raise UndefinedRatioError("mean field vanishes; fluctuation ratio is undefined")
    return state.fluct_intensity / coherent


def signal_intensity(state: SteadyState, cfg: HomodyneConfig) -> float:
    """Intensity <s^dag s> of the admixture s = sigma + F <sigma> e^{i phi}."""
    f = cfg.f
    return state.fluct_intensity + state.coherent_intensity * (
        1.0 + 2.0 * f * math.cos(cfg.phi) + f * f
    )
