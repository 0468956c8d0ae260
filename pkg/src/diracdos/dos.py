"""Density-of-states estimators on finite tori.

Two constructions of the same object: a window trace cut to a box inside
a larger ambient torus (spatial), and a plain eigenvalue count of the
operator restricted to the box with periodic wrap (periodic). Both are
disorder-averaged and volume-normalized. The remaining operations
quantify how the two constructions approach each other, how the window
measure scales with window width, and how sample fluctuations die off
with volume.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from .disorder import (
    build_disordered_operator,
    build_periodic_restriction,
    sample_realization,
)
from .errors import ComputeError, GeometryError, PreconditionError
from .estimates import wegner_scan
from .operators import FOURIER, Grid, box_indicator
from .spectral import ENDPOINT_TIE

SPATIAL = "spatial"
PERIODIC = "periodic"

# Minimal clearance between the averaging box and its ambient torus. The
# box must not feel its own wrap through the ambient boundary.
AMBIENT_MARGIN = 8


@dataclass(frozen=True, eq=False)
class DOSEstimate:
    window: tuple
    bin_edges: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    box_side: float
    n_realizations: int
    construction: str
    seed: int
    smooth: bool

    def __post_init__(self):
        if self.construction not in (SPATIAL, PERIODIC):
            raise ComputeError("unknown construction tag %r" % (self.construction,))
        edges = np.asarray(self.bin_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ComputeError("bin edges must increase")
        lo, hi = self.window
        if abs(edges[0] - lo) > 1e-12 or abs(edges[-1] - hi) > 1e-12:
            raise ComputeError("bins must partition the window")
        if self.means.shape != (edges.size - 1,) or \
                self.stderrs.shape != (edges.size - 1,):
            raise ComputeError("per-bin tables must match the bin count")
        # A signed smooth test function gives a signed trace; only sharp
        # window counts are forced nonnegative.
        if not self.smooth and float(self.means.min()) < 0.0:
            raise ComputeError("volume-normalized counts cannot be negative")

    def csv_text(self):
        """Per-bin table, one row per bin, floats via repr."""
        lines = ["bin_lo,bin_hi,mean,stderr"]
        edges = np.asarray(self.bin_edges, dtype=float)
        for j in range(self.means.size):
            lines.append(",".join(repr(float(v)) for v in
                                  (edges[j], edges[j + 1], self.means[j],
                                   self.stderrs[j])))
        return "\n".join(lines) + "\n"

    def metadata(self):
        return {"window": [float(self.window[0]), float(self.window[1])],
                "box_side": self.box_side,
                "n_realizations": self.n_realizations,
                "construction": self.construction,
                "seed": self.seed,
                "smooth": self.smooth}


def _bin_edges(window, bins):
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise PreconditionError("window must be a nonempty interval")
    if bins < 1:
        raise PreconditionError("need at least one bin")
    return np.linspace(lo, hi, bins + 1)


def _bin_weights(eigenvalues, weights, edges):
    """Weighted eigenvalue counts per bin; bins tile [edges[0], edges[-1]].

    Half-open bins except the last, with an absolute tie tolerance at the
    outer window edges matching the sharp interval counter.
    """
    lo, hi = edges[0], edges[-1]
    keep = (eigenvalues >= lo - ENDPOINT_TIE) & (eigenvalues <= hi + ENDPOINT_TIE)
    ev = np.clip(eigenvalues[keep], lo, np.nextafter(hi, lo))
    idx = np.searchsorted(edges, ev, side="right") - 1
    out = np.zeros(edges.size - 1)
    np.add.at(out, idx, weights[keep])
    return out


def _spectrum_with_box_weights(op, box_side):
    """Eigenvalues and per-eigenvector mass inside the centered box."""
    grid = op.grid
    chi = box_indicator(grid, -box_side / 2.0, box_side / 2.0)
    mask = chi.fiber_vector(op.fiber_n) > 0.0
    evals, vecs = np.linalg.eigh(op.matrix)
    w = np.sum(np.abs(vecs[mask, :]) ** 2, axis=0)
    return evals, w


def spatial_realization_values(model, symbol, background, phi_or_window,
                               box_side, ambient_side, seed, backend, ppc,
                               bins):
    """Per-bin window-trace values of one disorder draw. Worker-safe."""
    realization = sample_realization(model, ambient_side, seed)
    grid = Grid.regular(symbol.d, ambient_side, ppc)
    op = build_disordered_operator(symbol, background, model, realization,
                                   grid, backend)
    evals, w = _spectrum_with_box_weights(op, box_side)
    vol = float(box_side) ** symbol.d
    if callable(phi_or_window):
        return np.array([float(np.dot(phi_or_window(evals), w)) / vol])
    edges = _bin_edges(phi_or_window, bins)
    return _bin_weights(evals, w, edges) / vol


def periodic_realization_values(model, symbol, background, window, box_side,
                                seed, backend, ppc, bins):
    """Per-bin eigenvalue counts of one periodic draw. Worker-safe."""
    realization = sample_realization(model, box_side, seed)
    op = build_periodic_restriction(symbol, background, model, realization,
                                    box_side, backend, ppc)
    evals = np.linalg.eigvalsh(op.matrix)
    vol = float(box_side) ** symbol.d
    if callable(window):
        return np.array([float(np.sum(window(evals))) / vol])
    edges = _bin_edges(window, bins)
    return _bin_weights(evals, np.ones_like(evals), edges) / vol


def _aggregate(samples, window, box_side, n_realizations, construction, seed,
               smooth, edges):
    table = np.stack(samples, axis=0)
    means = table.mean(axis=0)
    if n_realizations > 1:
        stderrs = table.std(axis=0, ddof=1) / math.sqrt(n_realizations)
    else:
        stderrs = np.zeros_like(means)
    return DOSEstimate(window=window, bin_edges=edges, means=means,
                       stderrs=stderrs, box_side=float(box_side),
                       n_realizations=n_realizations,
                       construction=construction, seed=int(seed),
                       smooth=smooth)


def dos_spatial(model, symbol, background, phi_or_window, box_side,
                ambient_side, n_realizations, seed, backend=FOURIER,
                points_per_cell=4, bins=1, map_fn=None):
    """Disorder-averaged window trace cut to a box on an ambient torus.

    Per realization, the operator lives on the torus of side
    ``ambient_side`` with impurities everywhere, and the trace is cut to
    the centered box of side ``box_side`` and normalized by its volume.
    ``phi_or_window`` is either a callable applied to eigenvalues (one
    output bin; SmoothBump instances qualify) or an (a, b) window split
    into ``bins`` sharp bins. ``map_fn`` optionally distributes the
    per-realization solves; any order-preserving mapper gives identical
    output.
    """
    if ambient_side < box_side + AMBIENT_MARGIN:
        raise GeometryError("ambient torus must exceed the box by at least %d"
                            % AMBIENT_MARGIN)
    if n_realizations < 1:
        raise PreconditionError("need at least one realization")
    smooth = callable(phi_or_window)
    if smooth:
        window = tuple(float(v) for v in getattr(phi_or_window, "support",
                                                 (0.0, 1.0)))
        edges = np.array(window)
    else:
        window = (float(phi_or_window[0]), float(phi_or_window[1]))
        edges = _bin_edges(window, bins)
    worker = functools.partial(spatial_realization_values, model, symbol,
                               background, phi_or_window, box_side,
                               ambient_side, backend=backend,
                               ppc=points_per_cell, bins=bins)
    samples = list((map_fn or map)(worker,
                                   [seed + r for r in range(n_realizations)]))
    return _aggregate(samples, window, box_side, n_realizations, SPATIAL,
                      seed, smooth, edges)


def dos_periodic(model, symbol, background, window, box_side, n_realizations,
                 seed, backend=FOURIER, points_per_cell=4, bins=1,
                 map_fn=None):
    """Disorder-averaged per-volume eigenvalue count on the box torus."""
    if n_realizations < 1:
        raise PreconditionError("need at least one realization")
    smooth = callable(window)
    if smooth:
        win = tuple(float(v) for v in getattr(window, "support", (0.0, 1.0)))
        edges = np.array(win)
    else:
        win = (float(window[0]), float(window[1]))
        edges = _bin_edges(win, bins)
    worker = functools.partial(periodic_realization_values, model, symbol,
                               background, window, box_side, backend=backend,
                               ppc=points_per_cell, bins=bins)
    samples = list((map_fn or map)(worker,
                                   [seed + r for r in range(n_realizations)]))
    return _aggregate(samples, win, box_side, n_realizations, PERIODIC, seed,
                      smooth, edges)


# ---------------------------------------------------------------------------
# comparisons between the constructions


@dataclass(frozen=True, eq=False)
class EquivalenceRow:
    box_side: float
    spatial_mean: float
    periodic_mean: float
    difference: float
    relative: float
    combined_stderr: float


# Offsets relating the two pictures: the periodic comparison torus
# outgrows the averaging box by PERIODIC_OFFSET, and the spatial ambient
# torus outgrows it a little more so both sets of impurity draws embed
# in one coupled ambient sample.
PERIODIC_OFFSET = 10
SPATIAL_AMBIENT_OFFSET = 12


def equivalence_study(model, symbol, background, window, box_sides,
                      n_realizations, seed, backend=FOURIER,
                      points_per_cell=4, map_fn=None):
    """Spatial window trace at L against the periodic count at L + 10.

    Realizations are coupled through the site-keyed generator, so the
    impurity data shared by the two pictures agree draw for draw. One
    row per box side, in the given order.
    """
    box_sides = tuple(int(L) for L in box_sides)
    if any(b <= a for a, b in zip(box_sides, box_sides[1:])):
        raise PreconditionError("box sides must increase")
    rows = []
    for L in box_sides:
        spatial = dos_spatial(model, symbol, background, window, L,
                              L + SPATIAL_AMBIENT_OFFSET, n_realizations,
                              seed, backend, points_per_cell, map_fn=map_fn)
        periodic = dos_periodic(model, symbol, background, window,
                                L + PERIODIC_OFFSET, n_realizations, seed,
                                backend, points_per_cell, map_fn=map_fn)
        sm = float(spatial.means[0])
        pm = float(periodic.means[0])
        err = math.hypot(float(spatial.stderrs[0]), float(periodic.stderrs[0]))
        scale = 0.5 * (abs(sm) + abs(pm))
        rows.append(EquivalenceRow(box_side=float(L), spatial_mean=sm,
                                   periodic_mean=pm, difference=abs(sm - pm),
                                   relative=abs(sm - pm) / scale if scale else 0.0,
                                   combined_stderr=err))
    return tuple(rows)


def lipschitz_check(model, symbol, background, interval, widths, box_side,
                    n_realizations, seed, backend=FOURIER, points_per_cell=4,
                    center=None, gap=(-1.0, 1.0), map_fn=None):
    """Width-stability of the window measure inside the gap.

    Same normalization as the counting scan (mean count over width times
    volume); returns the rows for the single requested box side and the
    largest ratio. Width-stable ratios are the desk-scale signature that
    the limiting measure has a bounded density on the interval.
    """
    report = wegner_scan(model, symbol, background, interval, widths,
                         (box_side,), n_realizations, seed, backend=backend,
                         points_per_cell=points_per_cell, center=center,
                         gap=gap, map_fn=map_fn)
    return report.rows, report.constant


def self_averaging(model, symbol, background, phi, box_sides, n_realizations,
                   seed, backend=FOURIER, points_per_cell=4, map_fn=None):
    """Sample variance of the volume-averaged trace across box sides.

    phi is any callable on eigenvalues. Returns one (box_side, mean,
    variance) triple per side; fluctuations shrinking with volume is the
    finite-size shadow of the almost-sure limit.
    """
    if n_realizations < 2:
        raise PreconditionError("variance needs at least two realizations")
    out = []
    for L in (int(v) for v in box_sides):
        worker = functools.partial(periodic_realization_values, model, symbol,
                                   background, phi, L, backend=backend,
                                   ppc=points_per_cell, bins=1)
        vals = np.array([v[0] for v in (map_fn or map)(
            worker, [seed + r for r in range(n_realizations)])])
        out.append((float(L), float(vals.mean()), float(vals.var(ddof=1))))
    return tuple(out)
