"""Coincidence histograms, normalization and radial integration of time-tag data.

Times are integer picoseconds.  Histogram bins are centred on multiples of the
bin width, so a window of half-width W holds 2 W/b + 1 bins per axis.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BaselineError, ConfigError, EmptyChannelError, WindowTooNarrowError
from .tags import TagStream

OUTER_FRACTION = 0.2
DEFAULT_HALF_ANGLE = math.pi / 12


@dataclass
class CorrelationHistogram:
    """Raw coincidence counts plus the uncorrelated baseline used to normalize them.

    ``baseline_err`` is the standard error of the baseline mean and
    ``baseline_std`` the spread of the individual baseline bins.
    """

    dims: int
    bin_width: int
    window: int
    counts: np.ndarray
    baseline: float = float("nan")
    baseline_err: float = float("nan")
    baseline_std: float = float("nan")
    n_baseline_bins: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def half_bins(self) -> int:
        return (self.counts.shape[0] - 1) // 2

    @property
    def centers(self) -> np.ndarray:
        k = np.arange(-self.half_bins, self.half_bins + 1)
        return k * self.bin_width

    def _require_baseline(self):
        if not (self.baseline > 0):
            raise BaselineError("baseline is zero or undefined; cannot normalize")

    def normalized(self) -> np.ndarray:
        self._require_baseline()
        return self.counts / self.baseline

    def sigma(self) -> np.ndarray:
        """Poisson error on each normalized bin with the baseline error in quadrature."""
        self._require_baseline()
        g = self.counts / self.baseline
        stat = np.sqrt(self.counts) / self.baseline
        return np.hypot(stat, g * self.baseline_err / self.baseline)

    def center_value(self) -> tuple[float, float]:
        """Raw central-bin g and its error."""
        mid = self.half_bins
        idx = (mid,) * self.dims
        return float(self.normalized()[idx]), float(self.sigma()[idx])

    def __add__(self, other):
        if (self.dims, self.bin_width, self.window) != (other.dims, other.bin_width, other.window):
            raise ConfigError("cannot merge histograms with different geometry")
        return CorrelationHistogram(self.dims, self.bin_width, self.window, self.counts + other.counts)


@dataclass
class RadialProfile:
    bin_width: int
    centers: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    counts: np.ndarray
    n_cells: np.ndarray
    integration_half_angle: float
    baseline: float
    baseline_err: float

    def value_at(self, tau_ps: float = 0.0) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.centers - tau_ps)))
        return float(self.values[i]), float(self.sigma[i])

    def plateau(self, half_width_ps: float = 600.0) -> tuple[float, float, int]:
        """Pooled g over |tau*| <= half_width_ps: (value, error, raw triple count)."""
        sel = np.abs(self.centers) <= half_width_ps
        cells = self.n_cells[sel].sum()
        counts = self.counts[sel].sum()
        if cells == 0:
            return float("nan"), float("nan"), 0
        g = counts / cells / self.baseline
        err = math.hypot(math.sqrt(counts) / cells / self.baseline, g * self.baseline_err / self.baseline)
        return float(g), float(err), int(counts)


# ---------------------------------------------------------------------------
# histogram kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _bin_index(tau, b):
    # nearest multiple of b (ties towards +inf); floor division keeps negatives right
    return (2 * tau + b) // (2 * b)


@numba.njit(cache=True, nogil=True)
def _hist1d(starts, stops, b, half, out):
    reach = (half + 1) * b
    j0 = 0
    n = stops.shape[0]
    for i in range(starts.shape[0]):
        s = starts[i]
        while j0 < n and stops[j0] < s - reach:
            j0 += 1
        j = j0
        while j < n and stops[j] <= s + reach:
            k = _bin_index(stops[j] - s, b)
            if -half <= k <= half:
                out[k + half] += 1
            j += 1


@numba.njit(cache=True, nogil=True)
def _hist2d(starts, t1, t2, b, half, out):
    reach = (half + 1) * b
    p1 = 0
    p2 = 0
    n1 = t1.shape[0]
    n2 = t2.shape[0]
    for i in range(starts.shape[0]):
        s = starts[i]
        while p1 < n1 and t1[p1] < s - reach:
            p1 += 1
        while p2 < n2 and t2[p2] < s - reach:
            p2 += 1
        j = p1
        while j < n1 and t1[j] <= s + reach:
            k1 = _bin_index(t1[j] - s, b)
            if -half <= k1 <= half:
                m = p2
                while m < n2 and t2[m] <= s + reach:
                    k2 = _bin_index(t2[m] - s, b)
                    if -half <= k2 <= half:
                        out[k1 + half, k2 + half] += 1
                    m += 1
            j += 1


def _geometry(bin_width, window):
    b = int(round(bin_width))
    if b <= 0:
        raise ConfigError("bin width must be a positive number of ps")
    half = int(round(window / b))
    if half < 1:
        raise ConfigError("window must span at least one bin")
    return b, half


def _chunks(n, workers):
    workers = workers or os.cpu_count() or 1
    pieces = max(1, min(workers, n // 10000 or 1))
    return np.linspace(0, n, pieces + 1).astype(int)


def _fold(kernel, starts, others, b, half, shape, workers):
    """Histogram ``starts`` in independent chunks and add the partial results."""
    bounds = _chunks(len(starts), workers)

    def run(i):
        out = np.zeros(shape, dtype=np.int64)
        kernel(starts[bounds[i]:bounds[i + 1]], *others, b, half, out)
        return out

    n = len(bounds) - 1
    if n == 1:
        return run(0)
    with ThreadPoolExecutor(max_workers=n) as pool:
        return sum(pool.map(run, range(n)))


def _channel_ps(tags: TagStream, channel: int) -> np.ndarray:
    t = tags.times_ps(channel)
    if t.size == 0:
        raise EmptyChannelError(f"channel {channel} has no detections")
    return t


def g2_histogram(
    tags: TagStream,
    bin_width: float = 200,
    window: float = 25_000,
    *,
    start_channel: int = 0,
    stop_channels=(1, 2),
    workers=None,
) -> CorrelationHistogram:
    """Cross-correlate ``start_channel`` against the merged ``stop_channels``.

    tau = t_stop - t_start.  The baseline is the mean of the bins in the outer
    20% of the window.
    """
    b, half = _geometry(bin_width, window)
    starts = _channel_ps(tags, start_channel)
    stops = np.sort(np.concatenate([_channel_ps(tags, c) for c in stop_channels]))
    counts = _fold(_hist1d, starts, (stops,), b, half, (2 * half + 1,), workers)
    h = CorrelationHistogram(1, b, half * b, counts)
    h.meta = {"n_start": int(starts.size), "n_stop": int(stops.size)}
    try:
        _set_baseline_1d(h)
    except BaselineError:
        # sparse data: raw counts stay usable, normalizing raises
        h.baseline = float("nan")
    return h


def _set_baseline_1d(h: CorrelationHistogram):
    tau = np.abs(h.centers)
    sel = tau >= (1.0 - OUTER_FRACTION) * h.window
    _set_baseline(h, h.counts[sel])


def _set_baseline(h, values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise BaselineError("no bins in the baseline region")
    h.baseline = float(values.mean())
    h.baseline_std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    h.baseline_err = h.baseline_std / math.sqrt(values.size) if values.size > 1 else math.sqrt(h.baseline)
    h.n_baseline_bins = int(values.size)
    if not h.baseline > 0:
        raise BaselineError("baseline region holds no coincidences")


def g3_histogram(
    tags: TagStream,
    bin_width: float = 500,
    window: float = 12_500,
    *,
    channels=(0, 1, 2),
    half_angle: float = DEFAULT_HALF_ANGLE,
    workers=None,
) -> CorrelationHistogram:
    """Two-dimensional triple-coincidence histogram G3(tau1, tau2).

    Every (c0, c1, c2) triple with |t1 - t0| and |t2 - t0| inside the window is
    counted at (tau1, tau2) = (t1 - t0, t2 - t0); axis 0 is tau1.  The baseline
    comes from the outer 20% (in |tau*|) of the antidiagonal wedge used by
    :func:`radial_integrate`, which keeps clear of the two-photon lines.
    """
    b, half = _geometry(bin_width, window)
    t0, t1, t2 = (_channel_ps(tags, c) for c in channels)
    counts = _fold(_hist2d, t0, (t1, t2), b, half, (2 * half + 1, 2 * half + 1), workers)
    h = CorrelationHistogram(2, b, half * b, counts)
    h.meta = {"n": [int(t0.size), int(t1.size), int(t2.size)]}
    try:
        _set_baseline(h, h.counts[_wedge_outer_mask(h, half_angle)])
    except BaselineError:
        # sparse data: leave the histogram unnormalized
        h.baseline = float("nan")
    return h


# ---------------------------------------------------------------------------
# polar reduction
# ---------------------------------------------------------------------------

def polar_coordinates(tau1, tau2):
    """(tau*, theta) with tau1 = tau* cos(theta), tau2 = -tau* sin(theta).

    theta = pi/4 is the antidiagonal tau1 = -tau2; points outside the
    quadrants tau1 * tau2 <= 0 get theta = nan.
    """
    tau1 = np.asarray(tau1, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    r = np.hypot(tau1, tau2)
    sign = np.where(tau1 > 0, 1.0, -1.0)
    theta = np.arctan2(-sign * tau2, sign * tau1)
    ok = (tau1 * tau2 <= 0) & (r > 0) & (theta >= 0) & (theta <= math.pi / 2)
    return sign * r, np.where(ok, theta, np.nan)


def _cell_grid(h):
    c = h.centers.astype(float)
    return np.meshgrid(c, c, indexing="ij")


def wedge_mask(h: CorrelationHistogram, half_angle: float = DEFAULT_HALF_ANGLE) -> np.ndarray:
    """Cartesian bins whose centres fall in theta in [half_angle, pi/2 - half_angle].

    Raises WindowTooNarrowError if any selected bin touches one of the
    two-photon lines tau1 = 0, tau2 = 0 or tau1 = tau2.
    """
    if not 0 < half_angle < math.pi / 4:
        raise WindowTooNarrowError(
            f"exclusion half-angle {half_angle} must lie in (0, pi/4) to keep the two-photon lines out"
        )
    x, y = _cell_grid(h)
    _, theta = polar_coordinates(x, y)
    with np.errstate(invalid="ignore"):
        mask = (theta >= half_angle) & (theta <= math.pi / 2 - half_angle)
    b = h.bin_width
    touching = (np.abs(x) < b / 2) | (np.abs(y) < b / 2) | (np.abs(x - y) < b)
    if np.any(mask & touching):
        raise WindowTooNarrowError("angular window includes bins crossed by a two-photon line")
    return mask


def _wedge_outer_mask(h, half_angle):
    x, y = _cell_grid(h)
    r = np.hypot(x, y)
    return wedge_mask(h, half_angle) & (r >= (1 - OUTER_FRACTION) * h.window) & (r <= h.window)


def radial_integrate(
    h: CorrelationHistogram,
    half_angle: float = DEFAULT_HALF_ANGLE,
    bin_width: float = 200,
) -> RadialProfile:
    """Project G3(tau1, tau2) onto tau* by integrating theta over the antidiagonal wedge.

    Each Cartesian bin in the wedge is assigned to the nearest tau* output bin
    by its centre; the integral over theta is taken as the mean count per
    Cartesian cell in each annular sector.  Only |tau*| <= window is used so
    every arc is complete.  Normalization uses the outer 20% of |tau*|.
    """
    if h.dims != 2:
        raise ConfigError("radial integration needs a 2-D histogram")
    bw = int(round(bin_width))
    mask = wedge_mask(h, half_angle)
    x, y = _cell_grid(h)
    tstar, _ = polar_coordinates(x, y)
    nout = int(h.window // bw)
    if nout < 2:
        raise ConfigError("radial bin width is too wide for the histogram window")
    sel = mask & (np.abs(tstar) <= h.window)
    k = np.rint(tstar[sel] / bw).astype(int)
    inside = np.abs(k) <= nout
    k = k[inside] + nout
    cnt = h.counts[sel][inside]
    counts = np.bincount(k, weights=cnt, minlength=2 * nout + 1)
    cells = np.bincount(k, minlength=2 * nout + 1)
    centers = (np.arange(2 * nout + 1) - nout) * bw

    outer = _wedge_outer_mask(h, half_angle)
    tmp = CorrelationHistogram(2, h.bin_width, h.window, h.counts)
    _set_baseline(tmp, h.counts[outer])
    base, base_err = tmp.baseline, tmp.baseline_err

    with np.errstate(invalid="ignore", divide="ignore"):
        mean = counts / cells
        values = mean / base
        stat = np.sqrt(counts) / cells / base
        sigma = np.hypot(stat, values * base_err / base)
    return RadialProfile(
        bin_width=bw,
        centers=centers,
        values=values,
        sigma=sigma,
        counts=counts.astype(np.int64),
        n_cells=cells,
        integration_half_angle=half_angle,
        baseline=base,
        baseline_err=base_err,
    )


# ---------------------------------------------------------------------------
# zero-delay extraction with finite-bin correction
# ---------------------------------------------------------------------------

def _span_moments(h, half_fit, sub=8):
    """Bin-averaged span S and S^2 for each fit cell (S = spread of the photon times)."""
    b = h.bin_width
    u = (np.arange(sub) + 0.5) / sub - 0.5
    k = np.arange(-half_fit, half_fit + 1)
    if h.dims == 1:
        t = (k[:, None] + u[None, :]) * b
        s = np.abs(t)
        return s.mean(axis=1), (s * s).mean(axis=1)
    t1 = (k[:, None, None, None] + u[None, None, :, None]) * b
    t2 = (k[None, :, None, None] + u[None, None, None, :]) * b
    zero = np.zeros(1)
    hi = np.maximum(np.maximum(t1, t2), zero)
    lo = np.minimum(np.minimum(t1, t2), zero)
    s = hi - lo
    return s.mean(axis=(2, 3)), (s * s).mean(axis=(2, 3))


@dataclass(frozen=True)
class ZeroDelayEstimate:
    value: float
    sigma: float
    raw: float
    raw_sigma: float
    correction: float
    fit_half_width: int


def zero_delay_estimate(h: CorrelationHistogram, fit_half_width: int = 3) -> ZeroDelayEstimate:
    """g(0) corrected for bin averaging, from a local fit of the measured profile.

    The bins within ``fit_half_width`` bins of the origin are fitted, weighted by
    their Poisson errors, with a + c1 <S> + c2 <S^2>, where <.> is the average
    over each bin and S the temporal spread of the photons (|tau| for pairs,
    max - min of (0, tau1, tau2) for triples).  The intercept ``a`` is the
    zero-delay value; ``correction`` = a / raw central bin.
    """
    m = fit_half_width
    mid = h.half_bins
    if m < 1 or m > mid:
        raise ConfigError("fit half-width must be between 1 and the histogram half-width")
    sl = slice(mid - m, mid + m + 1)
    counts = h.counts[(sl,) * h.dims].astype(float).ravel()
    s1, s2 = (a.ravel() for a in _span_moments(h, m))
    y = counts / h.baseline
    design = np.column_stack([np.ones_like(s1), s1 / h.bin_width, s2 / h.bin_width ** 2])
    # Poisson maximum likelihood by iteratively reweighted least squares; weighting
    # by the observed counts instead would bias sparse bins low
    mu = np.full_like(y, max(y.mean(), 1.0 / h.baseline))
    for _ in range(20):
        w = h.baseline / np.maximum(mu, 0.5 / h.baseline)
        ata = design.T @ (design * w[:, None])
        coef = np.linalg.solve(ata, design.T @ (w * y))
        new_mu = design @ coef
        if np.allclose(new_mu, mu, rtol=1e-10, atol=1e-12):
            break
        mu = new_mu
    cov = np.linalg.inv(ata)
    a = float(coef[0])
    sig = math.hypot(math.sqrt(cov[0, 0]), a * h.baseline_err / h.baseline)
    raw, raw_sig = h.center_value()
    return ZeroDelayEstimate(
        value=a,
        sigma=sig,
        raw=raw,
        raw_sigma=raw_sig,
        correction=a / raw if raw else float("nan"),
        fit_half_width=m,
    )


def triples_in_central_bin(tags: TagStream, bin_width: float = 200, channels=(0, 1, 2)) -> int:
    """Triple coincidences falling in the central (tau1, tau2) = (0, 0) bin."""
    b, _ = _geometry(bin_width, bin_width)
    t0, t1, t2 = (tags.times_ps(c) for c in channels)
    if min(t0.size, t1.size, t2.size) == 0:
        return 0
    out = np.zeros((3, 3), dtype=np.int64)
    _hist2d(t0, t1, t2, b, 1, out)
    return int(out[1, 1])
