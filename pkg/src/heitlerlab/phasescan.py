"""Extraction of the coherent and fluctuation intensities from homodyne phase scans.

While the LO phase is scanned, the two beam-splitter outputs oscillate as

    I_s+/- = 1/2 [I_fluct + I_coh (1 +/- 2 F cos(phi) + F^2)]

so every oscillation period has a maximum 1/2 [I_fluct + I_coh (1 + F)^2] and a
minimum 1/2 [I_fluct + I_coh (1 - F)^2].  The per-period extrema are averaged
for each F and the two intensities follow from a linear fit across F.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigError, IllConditionedFitError, UndefinedRatioError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhaseTrace:
    """Count rates of both outputs (cts/ms) sampled along a phase scan at one F."""

    f: float
    phase: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        for name in ("phase", "plus", "minus"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.phase.shape == self.plus.shape == self.minus.shape) or self.phase.ndim != 1:
            raise ConfigError("phase, plus and minus must be 1-D arrays of equal length")
        if self.f < 0:
            raise ConfigError("F must be >= 0")

    def periods(self) -> int:
        return _full_periods(self.phase)


@dataclass(frozen=True)
class Extrema:
    f: float
    maximum: float
    minimum: float
    max_err: float
    min_err: float
    n_periods: int


@dataclass(frozen=True)
class PhaseScanFit:
    i_coh: float
    i_fluct: float
    omega_est: float
    covariance: np.ndarray
    extrema: tuple

    @property
    def errors(self) -> tuple[float, float]:
        return float(math.sqrt(self.covariance[0, 0])), float(math.sqrt(self.covariance[1, 1]))


def _full_periods(phase):
    # each sample covers one step of the scan, so the covered span is one
    # spacing longer than max - min
    if phase.size < 2:
        return 0
    step = float(np.median(np.diff(np.sort(phase))))
    return int(math.floor((phase.max() - phase.min() + step) / TWO_PI + 1e-9))


def _period_extrema(phase, y):
    """Max and min of a cos/sin fit in each complete 2 pi period of the scan."""
    start = phase.min()
    idx = np.floor((phase - start) / TWO_PI + 1e-12).astype(int)
    n_full = _full_periods(phase)
    highs, lows = [], []
    for k in range(n_full):
        sel = idx == k
        if sel.sum() < 4:
            continue
        p = phase[sel]
        design = np.column_stack([np.ones_like(p), np.cos(p), np.sin(p)])
        a, b, c = np.linalg.lstsq(design, y[sel], rcond=None)[0]
        amp = math.hypot(b, c)
        highs.append(a + amp)
        lows.append(a - amp)
    return np.array(highs), np.array(lows)


def _sem(x):
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def trace_extrema(trace: PhaseTrace) -> Extrema:
    """Averaged per-period maximum and minimum, pooled over both outputs."""
    if trace.periods() < 2:
        raise ConfigError(f"trace at F={trace.f} spans fewer than 2 full phase periods")
    highs, lows = [], []
    for y in (trace.plus, trace.minus):
        hi, lo = _period_extrema(trace.phase, y)
        highs.append(hi)
        lows.append(lo)
    highs = np.concatenate(highs)
    lows = np.concatenate(lows)
    return Extrema(trace.f, float(highs.mean()), float(lows.mean()), _sem(highs), _sem(lows), len(highs) // 2)


def fit_extrema(extrema) -> PhaseScanFit:
    """Least-squares fit of averaged extrema against F (non-negative intensities)."""
    extrema = tuple(extrema)
    if len({round(e.f, 12) for e in extrema}) < 3:
        raise IllConditionedFitError("phase-scan fit needs at least 3 distinct F values")
    rows, y, err = [], [], []
    for e in extrema:
        rows.append([0.5, 0.5 * (1 + e.f) ** 2])
        y.append(e.maximum)
        err.append(e.max_err)
        rows.append([0.5, 0.5 * (1 - e.f) ** 2])
        y.append(e.minimum)
        err.append(e.min_err)
    x = np.array(rows)
    y = np.array(y)
    err = np.array(err)
    # noiseless input has zero scatter; fall back to an unweighted fit
    w = 1.0 / err if np.all(err > 0) else np.ones_like(y)
    coef, _ = nnls(x * w[:, None], y * w)
    i_fluct, i_coh = (float(v) for v in coef)

    xtx = (x * (w * w)[:, None]).T @ x
    if np.linalg.cond(xtx) > 1e12:
        raise IllConditionedFitError("phase-scan design matrix is singular")
    cov = np.linalg.inv(xtx)
    dof = len(y) - 2
    if dof > 0:
        chi2 = float(np.sum(((x @ coef - y) * w) ** 2)) / dof
        if not np.all(err > 0):
            cov = cov * chi2
    # reorder to (i_coh, i_fluct)
    cov = cov[::-1, ::-1].copy()
    if i_coh <= 1e-12 * float(np.abs(y).max()):
        raise UndefinedRatioError("fitted coherent intensity is zero; driving is undefined")
    return PhaseScanFit(i_coh, i_fluct, math.sqrt(i_fluct / (8 * i_coh)), cov, extrema)


def fit_phase_scan(traces) -> PhaseScanFit:
    """I_coh, I_fluct and the driving from phase scans recorded at several F."""
    return fit_extrema(trace_extrema(t) for t in traces)


def synthesize_phase_scan(
    i_coh: float,
    i_fluct: float,
    f_grid,
    *,
    periods: int = 4,
    samples_per_period: int = 100,
    bin_ms: float = 10.0,
    rng=None,
    noise: bool = True,
) -> list[PhaseTrace]:
    """Phase-scan traces from the two-output intensity model, optionally with Poisson counts."""
    rng = np.random.default_rng(rng)
    n = periods * samples_per_period
    phase = (np.arange(n) + 0.5) * TWO_PI / samples_per_period
    traces = []
    for f in f_grid:
        base = i_fluct + i_coh * (1 + f * f)
        swing = 2 * i_coh * f * np.cos(phase)
        plus = 0.5 * (base + swing)
        minus = 0.5 * (base - swing)
        if noise:
            plus = rng.poisson(plus * bin_ms) / bin_ms
            minus = rng.poisson(minus * bin_ms) / bin_ms
        traces.append(PhaseTrace(float(f), phase, plus, minus))
    return traces


def read_trace_csv(path) -> list[PhaseTrace]:
    """Traces from a CSV with header F,phase,plus,minus (one row per sample)."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    need = {"F", "phase", "plus", "minus"}
    if data.dtype.names is None or not need <= set(data.dtype.names):
        raise ConfigError(f"trace CSV must have columns {sorted(need)}")
    data = np.atleast_1d(data)
    if any(np.isnan(data[c]).any() for c in need):
        raise ConfigError(f"{path}: non-numeric entries in trace CSV")
    traces = []
    for f in np.unique(data["F"]):
        sel = data["F"] == f
        order = np.argsort(data["phase"][sel], kind="stable")
        traces.append(PhaseTrace(float(f), data["phase"][sel][order], data["plus"][sel][order], data["minus"][sel][order]))
    return traces


def write_trace_csv(path, traces) -> None:
    with open(path, "w") as fh:
        fh.write("F,phase,plus,minus\n")
        for t in traces:
            for row in zip(t.phase, t.plus, t.minus):
                fh.write(",".join(repr(float(v)) for v in (t.f, *row)) + "\n")
