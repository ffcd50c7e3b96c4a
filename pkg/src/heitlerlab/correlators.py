"""Closed-form zero-delay multiphoton observables of the homodyned emission."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousMinimumError,
    ConfigError,
    ConvergenceError,
    PoleError,
)
from .model import HomodyneConfig, SystemParams, signal_intensity, steady_state

DIVERGENCE_FLOOR = 1e-30


@dataclass(frozen=True)
class CorrelatorRequest:
    params: SystemParams
    cfg: HomodyneConfig
    order: int

    def __post_init__(self):
        _check_order(self.order)

    def g(self) -> float:
        return g_n_zero(self.params, self.cfg, self.order)

    def G(self) -> float:
        return G_n_zero(self.params, self.cfg, self.order)


@dataclass(frozen=True)
class PhotonDistribution:
    probs: np.ndarray
    truncation: int
    residual: float

    @property
    def total(self) -> float:
        return math.fsum(self.probs)


def _check_order(n):
    if int(n) != n or n < 1:
        raise ConfigError(f"correlator order must be an integer >= 1, got {n!r}")


def _bracket(f, cos_phi, w, n):
    # (n^2 + F^2) + 8 n^2 Omega^2 + 2 n F cos(phi), with gamma = 1
    return n * n * (1.0 + 8.0 * w * w) + f * f + 2.0 * n * f * cos_phi


def is_divergent(params: SystemParams, cfg: HomodyneConfig) -> bool:
    """True where the normalizing intensity base cancels (F=1, phi=pi, Omega->0)."""
    w = params.drive
    base = cfg.f * cfg.f + 2.0 * cfg.f * math.cos(cfg.phi) + 1.0 + 8.0 * w * w
    return base <= DIVERGENCE_FLOOR


def g_n_zero(params: SystemParams, cfg: HomodyneConfig, n: int) -> float:
    """Normalized n-photon coincidence g^(n)(0) at arbitrary driving.

    Returns ``math.inf`` instead of raising where the signal intensity cancels
    exactly; use :func:`is_divergent` to test for that case.
    """
    _check_order(n)
    if n == 1:
        return 1.0
    w = params.drive
    f = cfg.f
    c = math.cos(cfg.phi)
    if f == 0.0:
        return 0.0
    base = f * f + 2.0 * f * c + 1.0 + 8.0 * w * w
    if base <= DIVERGENCE_FLOOR:
        return math.inf
    num = f ** (2 * (n - 1)) * _bracket(f, c, w, n)
    return num / base ** n


def g_n_heitler(f: float, n: int) -> float:
    """Vanishing-driving limit F^{2(n-1)} (F-n)^2 / (F-1)^{2n}."""
    _check_order(n)
    if f == 1.0:
        raise PoleError("g^(n)(0) diverges at F = 1 in the Heitler limit")
    if f < 0:
        raise ConfigError("F must be >= 0")
    return f ** (2 * (n - 1)) * (f - n) ** 2 / (f - 1.0) ** (2 * n)


def _G(coh, f, c, w, n):
    # (F^2 |<sigma>|^2)^(n-1) |<sigma>|^2 [bracket]; algebraically identical to the
    # F^-2 form but regular at F = 0, where it reduces to the bare-emitter moments.
    if n == 0:
        return 1.0
    x = f * f * coh
    return x ** (n - 1) * coh * _bracket(f, c, w, n)


def G_n_zero(params: SystemParams, cfg: HomodyneConfig, n: int) -> float:
    """Unnormalized n-photon correlator <s^dag^n s^n>."""
    _check_order(n)
    state = steady_state(params)
    return _G(state.coherent_intensity, cfg.f, math.cos(cfg.phi), params.drive, n)


def coherent_distribution(params: SystemParams, cfg: HomodyneConfig, n_max: int) -> np.ndarray:
    """Poisson statistics of the LO alone, |<n|F<sigma>e^{i phi}>|^2 for n = 0..n_max."""
    mean = cfg.f ** 2 * steady_state(params).coherent_intensity
    n = np.arange(n_max + 1)
    if mean == 0.0:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        return out
    logp = n * math.log(mean) - mean - np.array([math.lgamma(k + 1) for k in n])
    return np.exp(logp)


def photon_distribution(
    params: SystemParams,
    cfg: HomodyneConfig,
    n_max: int = 40,
    *,
    rtol: float = 1e-14,
    max_terms: int = 200,
    tol: float = 1e-6,
) -> PhotonDistribution:
    """Photon-number probabilities from the alternating series over G^(n+k)(0).

    Each p(n) sums (-1)^k G^(n+k) / (k! n!) with exact (fsum) accumulation until
    the term magnitude drops below ``rtol`` times the running sum, capped at
    ``max_terms`` terms.  ``residual`` collects the last-term bounds plus the
    probability mass beyond ``n_max``.
    """
    if n_max < 4:
        raise ConfigError("n_max must be >= 4")
    state = steady_state(params)
    coh = state.coherent_intensity
    f, c, w = cfg.f, math.cos(cfg.phi), params.drive

    probs = np.empty(n_max + 1)
    residual = 0.0
    log_fact = [math.lgamma(k + 1) for k in range(n_max + max_terms + 2)]
    for n in range(n_max + 1):
        terms = []
        last = 0.0
        converged = False
        peak = 0.0
        for k in range(max_terms):
            G = _G(coh, f, c, w, n + k)
            if G == 0.0:
                # all higher correlators vanish too (F = 0 or no driving)
                converged = True
                last = 0.0
                break
            mag = math.exp(math.log(abs(G)) - log_fact[k] - log_fact[n])
            term = math.copysign(mag, G) * (-1 if k % 2 else 1)
            terms.append(term)
            peak = max(peak, mag)
            last = mag
            # terms start shrinking monotonically once k exceeds the mean
            if k > 2 and mag < rtol * max(abs(math.fsum(terms)), 1e-300) and mag < peak:
                converged = True
                break
        p = math.fsum(terms)
        if not converged and last > tol:
            raise ConvergenceError(
                f"p({n}) series did not converge in {max_terms} terms (last term {last:.3g})"
            )
        residual += last + 1e-16 * peak
        probs[n] = p

    if np.any(probs < -tol):
        raise ConvergenceError("negative probability beyond tolerance; series lost precision")
    probs = np.clip(probs, 0.0, None)
    residual += abs(1.0 - math.fsum(probs))
    return PhotonDistribution(probs=probs, truncation=n_max, residual=residual)


def modulation_factor(f: float, n: int, omega: float = 0.0, *, leading_only: bool = False) -> float:
    """Weak-driving correction M_F(n) multiplying the LO Poisson statistics.

    ``omega`` is the dimensionless driving; the O(Omega^2) term is included
    unless ``leading_only`` is set.  The o(Omega^4) remainder is dropped.
    """
    if f == 0:
        raise ConfigError("modulation factor divides by F; F = 0 is not allowed")
    lead = (1.0 - n / f) ** 2
    if leading_only:
        return lead
    return lead - (1.0 + 2 * n - 2 * f - 2 * n * n / (f * f)) * (2.0 * omega) ** 2


def _golden_min(func, a, b, tol=1e-10, max_iter=200):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if abs(b - a) < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    return 0.5 * (a + b)


def locate_antibunching_minimum(
    params: SystemParams,
    phi: float,
    n: int,
    search_range: tuple[float, float] = (1.2, 6.0),
    *,
    grid_points: int = 1000,
) -> float:
    """LO factor F minimizing g^(n)(0): grid pre-scan, then golden-section refinement."""
    _check_order(n)
    lo, hi = search_range
    if not (1.0 < lo < hi):
        raise ConfigError("search range must lie inside (1, inf) and be increasing")

    def g(f):
        return g_n_zero(params, HomodyneConfig(f=f, phi=phi), n)

    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([g(x) for x in grid])
    interior = np.flatnonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1
    # collapse runs of equal neighbours into one minimum
    if len(interior) > 1 and np.any(np.diff(interior) > 1):
        raise AmbiguousMinimumError(
            f"g^({n})(0) has several separated local minima on {search_range}: "
            f"{grid[interior].round(3).tolist()}"
        )
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid_points - 1)]
    return _golden_min(g, a, b)


def sweep_rows(params: SystemParams, phi: float, f_grid, orders=(2, 3, 4), n_probs: int = 7):
    """Yield one dict per F with intensity, g^(n)(0) and p(0..n_probs-1)."""
    state = steady_state(params)
    for f in f_grid:
        cfg = HomodyneConfig(f=float(f), phi=phi)
        row = {"F": float(f), "intensity": signal_intensity(state, cfg)}
        for n in orders:
            row[f"g{n}"] = g_n_zero(params, cfg, n)
        row["divergent"] = is_divergent(params, cfg)
        if params.drive > 0:
            dist = photon_distribution(params, cfg, n_max=max(40, n_probs))
            probs = dist.probs
        else:
            probs = np.zeros(n_probs)
            probs[0] = 1.0
        for k in range(n_probs):
            row[f"p{k}"] = float(probs[k])
        yield row
