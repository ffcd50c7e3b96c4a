"""Quantum-jump unraveling of the homodyned emitter and a modeled detector chain.

The detected field is s = sigma + beta with beta = F <sigma> e^{i phi}.  Jumps are
generated with the displaced operator C = sqrt(gamma) (sigma + beta); the extra
Hamiltonian term (i gamma / 2)(beta sigma^dag - beta^* sigma) restores the bare
master equation on average, so atomic populations do not depend on F while the
click statistics are those of s.

Between jumps the non-Hermitian generator is a constant 2x2 matrix (piecewise
constant when LO phase drift is on), so its exponential is evaluated in closed
form.  A jump happens where the squared norm falls below the drawn threshold;
the crossing is located by a safeguarded Newton solve, so jump times are not
quantized.  ``dt`` is the nominal step that a stepping integrator would use and
only enters the norm-loss sanity check.
"""
from __future__ import annotations

import cmath
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, NormUnderflowError
from .model import HomodyneConfig, SystemParams, steady_state
from .tags import TagStream

# radiative lifetime quoted for the measured emitter; converts 1/gamma to ps
DEFAULT_LIFETIME_PS = 216.0
BURN_IN = 50.0
UNIFORM_CHUNK = 1 << 16
STEP_TOLERANCE = 0.05


@dataclass(frozen=True)
class UnravelingConfig:
    """Simulation request; ``duration`` and ``dt`` are in units of 1/gamma."""

    params: SystemParams
    cfg: HomodyneConfig = HomodyneConfig()
    duration: float = 1e6
    seed: int = 0
    dt: float = 1e-3
    lifetime_ps: float = DEFAULT_LIFETIME_PS
    segment_length: float = 1e6

    def __post_init__(self):
        if not 0 < self.dt <= 1e-2:
            raise ConfigError(f"dt must be in (0, 1e-2] (units of 1/gamma), got {self.dt}")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.lifetime_ps > 0:
            raise ConfigError("lifetime_ps must be positive")
        if not self.segment_length > 0:
            raise ConfigError("segment_length must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @property
    def beta(self) -> complex:
        return self.cfg.lo_amplitude(steady_state(self.params))

    def n_segments(self) -> int:
        return max(1, math.ceil(self.duration / self.segment_length - 1e-12))


def _triple(x, name):
    arr = np.broadcast_to(np.asarray(x, dtype=float), (3,)).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DetectorChain:
    """Three-detector extended HBT chain.

    ``jitter_sigma`` and ``dead_time`` are in ps; ``phase_jitter_tau`` (the
    correlation time of the optional Ornstein-Uhlenbeck LO phase drift) is in
    units of 1/gamma.
    """

    splitting: tuple = (0.5, 0.25, 0.25)
    efficiency: tuple = (1.0, 1.0, 1.0)
    jitter_sigma: tuple = (20.0, 20.0, 20.0)
    dead_time: tuple = (0.0, 0.0, 0.0)
    phase_jitter_sigma: float = 0.0
    phase_jitter_tau: float = 1e4

    def __post_init__(self):
        split = _triple(self.splitting, "splitting")
        if np.any(split < 0) or abs(split.sum() - 1.0) > 1e-9:
            raise ConfigError(f"splitting must be non-negative and sum to 1, got {self.splitting}")
        eff = _triple(self.efficiency, "efficiency")
        if np.any(eff <= 0) or np.any(eff > 1):
            raise ConfigError("efficiencies must lie in (0, 1]")
        if np.any(_triple(self.jitter_sigma, "jitter") < 0):
            raise ConfigError("jitter must be >= 0")
        if np.any(_triple(self.dead_time, "dead_time") < 0):
            raise ConfigError("dead time must be >= 0")
        if self.phase_jitter_sigma < 0 or self.phase_jitter_tau <= 0:
            raise ConfigError("phase jitter needs sigma >= 0 and tau > 0")
        for name in ("splitting", "efficiency", "jitter_sigma", "dead_time"):
            object.__setattr__(self, name, tuple(float(v) for v in _triple(getattr(self, name), name)))

    @classmethod
    def ideal(cls, **overrides) -> "DetectorChain":
        """Unit efficiency, no jitter, no dead time, no phase drift."""
        kw = dict(jitter_sigma=0.0, dead_time=0.0)
        kw.update(overrides)
        return cls(**kw)

    def overall_efficiency(self) -> float:
        return float(np.dot(self.splitting, self.efficiency))


# ---------------------------------------------------------------------------
# compiled kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _generator(omega, beta):
    # A = -i H_eff with H = -omega (sigma + sigma^dag), basis (g, e), gamma = 1
    b2 = (beta * beta.conjugate()).real
    a00 = -0.5 * b2 + 0j
    a01 = 1j * omega - beta.conjugate()
    a10 = 1j * omega + 0j
    a11 = -0.5 * (1.0 + b2) + 0j
    return a00, a01, a10, a11


@numba.njit(cache=True, nogil=True)
def _propagate(a00, a01, a10, a11, t, g, e):
    half = 0.5 * (a00 + a11)
    m00 = a00 - half
    delta = cmath.sqrt(m00 * m00 + a01 * a10)
    x = delta * t
    if abs(x) < 1e-4:
        ch = 1.0 + 0.5 * x * x
        sh = t * (1.0 + x * x / 6.0)
    else:
        ch = cmath.cosh(x)
        sh = cmath.sinh(x) / delta
    scale = cmath.exp(half * t)
    ng = scale * ((ch + sh * m00) * g + sh * a01 * e)
    ne = scale * (sh * a10 * g + (ch - sh * m00) * e)
    return ng, ne


@numba.njit(cache=True, nogil=True)
def _norm2(g, e):
    return (g * g.conjugate()).real + (e * e.conjugate()).real


@numba.njit(cache=True, nogil=True)
def _jump_rate(beta, g, e):
    # ||C psi||^2 with C = sigma + beta
    cg = beta * g + e
    ce = beta * e
    return _norm2(cg, ce)


@numba.njit(cache=True, nogil=True)
def _crossing(a00, a01, a10, a11, beta, g, e, r, span):
    """Time in (0, span] at which ||U(t) psi||^2 = r (norm is non-increasing)."""
    lo = 0.0
    hi = span
    t = 0.5 * span
    rate0 = _jump_rate(beta, g, e)
    if rate0 > 0.0:
        guess = -math.log(r) / rate0
        if guess < span:
            t = guess
    for _ in range(200):
        ng, ne = _propagate(a00, a01, a10, a11, t, g, e)
        f = _norm2(ng, ne) - r
        if f > 0.0:
            lo = t
        else:
            hi = t
        d = -_jump_rate(beta, ng, ne)
        tn = t - f / d if d < 0.0 else 0.5 * (lo + hi)
        if not (lo <= tn <= hi):
            tn = 0.5 * (lo + hi)
        # Newton approaches a convex root from one side, so test the step, not the bracket
        if abs(tn - t) <= 1e-14 * (1.0 + t) or hi - lo <= 1e-14 * (1.0 + hi):
            return tn
        t = tn
    return t


@numba.njit(cache=True, nogil=True)
def _run(
    g, e, t, r, t_end, grid0, dt, omega, beta0, thetas, theta_dt,
    uniforms, u_pos, jump_buf, sample_dt, next_sample, sample_buf,
):
    """Advance one trajectory until t_end, or until a buffer runs out.

    Returns (status, t, g, e, r, u_pos, n_jumps, n_samples, next_sample);
    status 0 = reached t_end, 1 = uniforms exhausted, 2 = output buffer full.
    """
    n_j = 0
    n_s = 0
    n_theta = thetas.shape[0]
    k_theta = -1
    a00 = a01 = a10 = a11 = 0j
    beta = beta0
    while t < t_end:
        if n_j >= jump_buf.shape[0] or n_s >= sample_buf.shape[0]:
            return 2, t, g, e, r, u_pos, n_j, n_s, next_sample
        k = 0
        if n_theta > 1:
            k = min(int((t - grid0) / theta_dt), n_theta - 1)
        if k != k_theta:
            k_theta = k
            beta = beta0 * cmath.exp(1j * thetas[k])
            a00, a01, a10, a11 = _generator(omega, beta)
        t1 = t_end
        if n_theta > 1 and k < n_theta - 1:
            t1 = min(t1, grid0 + (k + 1) * theta_dt)
        is_sample = False
        if sample_dt > 0.0 and next_sample <= t1:
            t1 = next_sample
            is_sample = True
        span = t1 - t
        if span <= 0.0:
            # boundary reached exactly; consume it
            if is_sample:
                sample_buf[n_s] = (e * e.conjugate()).real
                n_s += 1
                next_sample += sample_dt
            else:
                t = t1 + 1e-12 * (1.0 + abs(t1))
            continue
        ng, ne = _propagate(a00, a01, a10, a11, span, g, e)
        n1 = _norm2(ng, ne)
        if n1 > r:
            s = math.sqrt(n1)
            g = ng / s
            e = ne / s
            r = r / n1
            t = t1
            if is_sample:
                sample_buf[n_s] = (e * e.conjugate()).real
                n_s += 1
                next_sample += sample_dt
            continue
        tau = _crossing(a00, a01, a10, a11, beta, g, e, r, span)
        # snapping to a dt grid would lengthen every waiting time by dt/2 on
        # average and visibly deplete the zero-delay bins
        tj = min(t + tau, t1)
        ng, ne = _propagate(a00, a01, a10, a11, tj - t, g, e)
        cg = beta * ng + ne
        ce = beta * ne
        s = math.sqrt(_norm2(cg, ce))
        g = cg / s
        e = ce / s
        t = tj
        jump_buf[n_j] = t
        n_j += 1
        if u_pos >= uniforms.shape[0]:
            return 1, t, g, e, 0.0, u_pos, n_j, n_s, next_sample
        r = uniforms[u_pos]
        u_pos += 1
    return 0, t, g, e, r, u_pos, n_j, n_s, next_sample


# ---------------------------------------------------------------------------
# segment driver
# ---------------------------------------------------------------------------

def _segment_rngs(seed, index):
    """Independent Philox streams (jumps, detector chain, phase drift) for one segment."""
    children = np.random.SeedSequence(entropy=seed, spawn_key=(index,)).spawn(3)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _phase_path(rng, chain: DetectorChain, length):
    if chain.phase_jitter_sigma == 0.0:
        return np.zeros(1), math.inf
    step = chain.phase_jitter_tau / 20.0
    n = int(math.ceil(length / step)) + 1
    a = math.exp(-step / chain.phase_jitter_tau)
    sig = chain.phase_jitter_sigma
    noise = rng.standard_normal(n) * sig * math.sqrt(1.0 - a * a)
    theta0 = rng.standard_normal() * sig
    path, _ = lfilter([1.0], [1.0, -a], noise, zi=[a * theta0])
    return path, step


def _simulate_segment(uc: UnravelingConfig, chain: DetectorChain, index, sample_dt=0.0):
    t_start = index * uc.segment_length
    t_stop = min(uc.duration, (index + 1) * uc.segment_length)
    t0 = t_start - BURN_IN
    jump_rng, chain_rng, phase_rng = _segment_rngs(uc.seed, index)
    thetas, theta_dt = _phase_path(phase_rng, chain, t_stop - t0)

    beta = complex(uc.beta)
    omega = uc.params.drive
    worst = (1.0 + abs(beta)) ** 2 * uc.dt
    if worst > STEP_TOLERANCE:
        raise NormUnderflowError(
            f"dt={uc.dt} loses up to {worst:.3g} of the norm per step "
            f"(tolerance {STEP_TOLERANCE}); reduce dt"
        )

    expected = (1.0 + abs(beta)) ** 2 * (t_stop - t0)
    jump_buf = np.empty(int(min(max(1024, 1.2 * expected + 1024), 1 << 22)))
    n_samples_total = int((t_stop - t_start) / sample_dt) + 2 if sample_dt > 0 else 1
    sample_buf = np.empty(min(max(n_samples_total, 1), 1 << 22))

    g, e = 1.0 + 0j, 0j
    t = t0
    uniforms = 1.0 - jump_rng.random(UNIFORM_CHUNK)
    u_pos = 1
    r = uniforms[0]
    next_sample = t_start if sample_dt > 0 else math.inf
    jumps, samples = [], []
    while True:
        status, t, g, e, r, u_pos, n_j, n_s, next_sample = _run(
            g, e, t, r, t_stop, t0, uc.dt, omega, beta, thetas, theta_dt,
            uniforms, u_pos, jump_buf, sample_dt, next_sample, sample_buf,
        )
        jumps.append(jump_buf[:n_j].copy())
        samples.append(sample_buf[:n_s].copy())
        if status == 0:
            break
        if status == 1:
            uniforms = 1.0 - jump_rng.random(UNIFORM_CHUNK)
            r = uniforms[0]
            u_pos = 1
    jumps = np.concatenate(jumps)
    jumps = jumps[jumps >= t_start]
    samples = np.concatenate(samples)
    return jumps, samples, chain_rng


def _detect(jumps, uc: UnravelingConfig, chain: DetectorChain, rng):
    """Route, thin, jitter and dead-time filter one segment's photons."""
    n = len(jumps)
    channel = rng.choice(3, size=n, p=np.asarray(chain.splitting)).astype(np.uint8)
    keep = rng.random(n) < np.asarray(chain.efficiency)[channel]
    jitter = rng.standard_normal(n) * np.asarray(chain.jitter_sigma)[channel]
    t_ps = jumps * uc.lifetime_ps + jitter
    keep &= t_ps >= 0.0
    ticks = np.rint(t_ps[keep]).astype(np.int64)
    return channel[keep], ticks


@numba.njit(cache=True)
def _dead_time_mask(times, dead):
    keep = np.ones(times.shape[0], dtype=np.bool_)
    last = -(1 << 62)
    for i in range(times.shape[0]):
        if times[i] - last < dead:
            keep[i] = False
        else:
            last = times[i]
    return keep


def apply_dead_time(channels, times, dead_times):
    """Drop events closer than the channel's dead time to its previous kept event."""
    keep = np.ones(len(times), dtype=bool)
    for ch, dead in enumerate(dead_times):
        if dead <= 0:
            continue
        idx = np.flatnonzero(channels == ch)
        keep[idx] = _dead_time_mask(times[idx], int(math.ceil(dead)))
    return keep


def _map_segments(func, n, workers):
    workers = workers or os.cpu_count() or 1
    if workers == 1 or n == 1:
        return [func(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(n)))


def simulate_tags(uc: UnravelingConfig, chain: DetectorChain | None = None, *, workers=None) -> TagStream:
    """Synthetic time tags (1 ps resolution) for the homodyned emission.

    Output depends only on ``(uc, chain)``: segments draw from independent
    streams keyed by ``(seed, segment)``, so worker count does not matter.
    """
    chain = chain or DetectorChain()

    def one(i):
        jumps, _, rng = _simulate_segment(uc, chain, i)
        return _detect(jumps, uc, chain, rng)

    parts = _map_segments(one, uc.n_segments(), workers)
    channels = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.uint8)
    ticks = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    order = np.lexsort((channels, ticks))
    channels, ticks = channels[order], ticks[order]
    if any(d > 0 for d in chain.dead_time):
        keep = apply_dead_time(channels, ticks, chain.dead_time)
        channels, ticks = channels[keep], ticks[keep]
    return TagStream(channels, ticks.astype(np.uint64), resolution=1)


def simulate_jumps(uc: UnravelingConfig, chain: DetectorChain | None = None, *, workers=None) -> np.ndarray:
    """Raw jump times (units of 1/gamma) before the detector chain, sorted."""
    chain = chain or DetectorChain.ideal()
    parts = _map_segments(lambda i: _simulate_segment(uc, chain, i)[0], uc.n_segments(), workers)
    return np.sort(np.concatenate(parts))


@dataclass(frozen=True)
class EnsembleEstimate:
    population: float
    population_err: float
    jump_rate: float
    jump_rate_err: float
    n_samples: int
    extra: dict = field(default_factory=dict)


def _batch_mean(values, n_batches):
    n = len(values) // n_batches * n_batches
    if n == 0:
        return float("nan"), float("nan")
    means = values[:n].reshape(n_batches, -1).mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def ensemble_estimate(
    uc: UnravelingConfig,
    *,
    sample_dt: float = 0.1,
    n_batches: int = 50,
    chain: DetectorChain | None = None,
    workers=None,
) -> EnsembleEstimate:
    """Time-averaged excited population and jump rate with batch-means errors."""
    if uc.duration < 1e4:
        raise ConfigError("ensemble estimates need duration >= 1e4 / gamma")
    chain = chain or DetectorChain.ideal()
    parts = _map_segments(
        lambda i: _simulate_segment(uc, chain, i, sample_dt=sample_dt)[:2], uc.n_segments(), workers
    )
    samples = np.concatenate([p[1] for p in parts])
    jumps = np.concatenate([p[0] for p in parts])
    pop, pop_err = _batch_mean(samples, n_batches)
    edges = np.linspace(0.0, uc.duration, n_batches + 1)
    per_batch = np.histogram(jumps, bins=edges)[0] / np.diff(edges)
    rate = float(len(jumps) / uc.duration)
    rate_err = float(per_batch.std(ddof=1) / math.sqrt(n_batches))
    return EnsembleEstimate(pop, pop_err, rate, rate_err, len(samples))


def ensemble_population(uc: UnravelingConfig, **kwargs) -> float:
    """Trajectory time-average of the normalized excited-state population."""
    return ensemble_estimate(uc, **kwargs).population
