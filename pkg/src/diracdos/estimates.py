"""Quantitative checks on eigenvalue counts and resolvent decay.

Four families of desk-scale verifications:

* gap-window eigenvalue counting across box sides and window widths,
  with volume-normalized ratios (wegner_scan);
* exponential off-diagonal decay of resolvent blocks between separated
  cutoffs, with fitted rates per imaginary offset (combes_thomas_scan,
  operator_norm_ct_bound, dilated_operator);
* Schatten-norm bounds for multiplication-times-Fourier-multiplier
  operators and for cutoff resolvents (birman_solomyak_check,
  resolvent_schatten_bound);
* the algebraic identity tying the resolvent on a torus to the resolvent
  of the same data on a larger torus through a spatial cutoff
  (gre_residual).
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
from .operators import (
    FINITE_DIFFERENCE,
    FOURIER,
    Grid,
    _dft_1d,
    box_indicator,
)
from .spectral import count_in_interval, resolvent, schatten_norm

# Separation floor for decay scans, in unit-cell lengths. Below this the
# near-field of the cutoffs contaminates the fitted rate.
MIN_SEPARATION = 10.0


# ---------------------------------------------------------------------------
# eigenvalue counting in gap windows


@dataclass(frozen=True, eq=False)
class WegnerRow:
    """One (box side, window) cell of a counting scan."""

    box_side: float
    lo: float
    hi: float
    mean_count: float
    var_count: float
    stderr: float
    ratio: float

    @property
    def width(self):
        return self.hi - self.lo


@dataclass(frozen=True, eq=False)
class WegnerReport:
    interval: tuple
    widths: tuple
    box_sides: tuple
    n_realizations: int
    seed: int
    padded: bool
    rows: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.rows) != len(self.widths) * len(self.box_sides):
            raise ComputeError("report table does not match the requested cells")
        for block in self.counts:
            if block.shape != (self.n_realizations, len(self.widths)):
                raise ComputeError("count table shape mismatch")
            if np.any(block < 0) or not np.issubdtype(block.dtype, np.integer):
                raise ComputeError("per-realization counts must be nonnegative integers")

    @property
    def constant(self):
        """Largest volume-and-width normalized mean count over all cells."""
        return max(row.ratio for row in self.rows)

    def csv_text(self):
        """One row per (box side, width) cell, floats via repr."""
        lines = ["seed_lo,seed_hi,L,a,b,count_mean,count_var,ratio"]
        hi = self.seed + self.n_realizations - 1
        for row in self.rows:
            lines.append(",".join(
                [repr(self.seed), repr(hi)]
                + [repr(float(v)) for v in (row.box_side, row.lo, row.hi,
                                            row.mean_count, row.var_count,
                                            row.ratio)]))
        return "\n".join(lines) + "\n"


def _window_counts(cell, model, symbol, background, backend, points_per_cell,
                   padded, padding, windows):
    """Eigenvalue counts of one (box side, seed) cell. Worker-safe."""
    box_side, seed = cell
    evals = _gap_spectrum(model, symbol, background, box_side, seed, backend,
                          points_per_cell, padded, padding)
    return np.array([count_in_interval(evals, lo, hi) for lo, hi in windows],
                    dtype=np.int64)


def wegner_scan(model, symbol, background, interval, widths, box_sides,
                n_realizations, seed, backend=FOURIER, points_per_cell=4,
                center=None, padded=False, padding=4, gap=(-1.0, 1.0),
                map_fn=None):
    """Count spectrum in nested gap sub-windows over a disorder ensemble.

    For every box side L and every realization, one eigensolve of the
    periodic operator; eigenvalues are then counted in closed windows of
    the requested widths, all centered at ``center`` (window midpoint by
    default). Ratios mean_count / (width * L^d) are the per-cell estimates
    of the counting constant; ``report.constant`` is their maximum.

    With ``padded=True`` the impurities of the open box of side L are
    placed on a torus of side L + padding instead, which realizes the
    second finite-volume picture. Normalization stays L^d, the side of
    the impurity box.

    ``map_fn`` replaces the builtin map over (box side, seed) cells; any
    order-preserving mapper (a process pool's map) gives identical
    output, since every cell is pure.
    """
    a, b = float(interval[0]), float(interval[1])
    glo, ghi = float(gap[0]), float(gap[1])
    if not (glo < a < b < ghi):
        raise PreconditionError("counting window must lie strictly inside the gap")
    widths = tuple(float(w) for w in widths)
    if any(w <= 0 for w in widths):
        raise PreconditionError("window widths must be positive")
    c = 0.5 * (a + b) if center is None else float(center)
    for w in widths:
        if c - w / 2.0 < a - 1e-12 or c + w / 2.0 > b + 1e-12:
            raise PreconditionError("sub-window of width %g leaves the interval" % w)
    if n_realizations < 1:
        raise PreconditionError("need at least one realization")

    box_sides = tuple(int(L) for L in box_sides)
    windows = tuple((c - w / 2.0, c + w / 2.0) for w in widths)
    cells = [(L, seed + r) for L in box_sides for r in range(n_realizations)]
    worker = functools.partial(_window_counts, model=model, symbol=symbol,
                               background=background, backend=backend,
                               points_per_cell=points_per_cell, padded=padded,
                               padding=padding, windows=windows)
    table = np.stack(list((map_fn or map)(worker, cells)), axis=0)

    rows = []
    blocks = []
    for i, L in enumerate(box_sides):
        counts = table[i * n_realizations:(i + 1) * n_realizations]
        blocks.append(counts)
        vol = float(L) ** symbol.d
        for j, w in enumerate(widths):
            col = counts[:, j].astype(float)
            mean = float(col.mean())
            var = float(col.var(ddof=1)) if n_realizations > 1 else 0.0
            rows.append(WegnerRow(
                box_side=float(L), lo=windows[j][0], hi=windows[j][1],
                mean_count=mean, var_count=var,
                stderr=math.sqrt(var / n_realizations),
                ratio=mean / (w * vol)))
    return WegnerReport(interval=(a, b), widths=widths, box_sides=box_sides,
                        n_realizations=n_realizations, seed=int(seed),
                        padded=bool(padded), rows=tuple(rows),
                        counts=tuple(blocks))


def _gap_spectrum(model, symbol, background, box_side, seed, backend,
                  points_per_cell, padded, padding):
    realization = sample_realization(model, box_side, seed)
    if padded:
        grid = Grid.regular(symbol.d, box_side + padding, points_per_cell)
        op = build_disordered_operator(symbol, background, model, realization,
                                       grid, backend)
    else:
        op = build_periodic_restriction(symbol, background, model, realization,
                                        box_side, backend, points_per_cell)
    return np.linalg.eigvalsh(op.matrix)


# ---------------------------------------------------------------------------
# off-diagonal resolvent decay


@dataclass(frozen=True, eq=False)
class DecayFit:
    """Fitted exponential decay of resolvent blocks versus separation.

    The fit is log(trace norm) = intercept - slope * distance, so a
    positive slope means decay. Operator norms ride along for the
    prefactor diagnostics.
    """

    distances: tuple
    energy: float
    imag_part: float
    op_norms: tuple
    trace_norms: tuple
    slope: float
    intercept: float
    r_squared: float

    def __post_init__(self):
        if len(self.distances) < 4:
            raise PreconditionError("decay fits need at least four separations")
        if len(self.op_norms) != len(self.distances) or \
                len(self.trace_norms) != len(self.distances):
            raise ComputeError("norm tables must match the separation list")
        if any(v < 0 for v in self.op_norms) or any(v < 0 for v in self.trace_norms):
            raise ComputeError("norms must be nonnegative")

    def summary(self):
        """Fit parameters as plain types, for a JSON report."""
        return {"energy": self.energy, "imag_part": self.imag_part,
                "slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared,
                "distances": [float(a) for a in self.distances]}


def _fiber_rows(site_idx, n):
    return (np.asarray(site_idx)[:, None] * n + np.arange(n)[None, :]).ravel()


def _weighted_block(matrix, chi_left, chi_right, n):
    """chi_left * matrix * chi_right restricted to the supporting sites."""
    vl = chi_left.site_vector()
    vr = chi_right.site_vector()
    il = np.flatnonzero(vl > 0.0)
    ir = np.flatnonzero(vr > 0.0)
    if il.size == 0 or ir.size == 0:
        return np.zeros((max(il.size, 1) * n, max(ir.size, 1) * n), dtype=complex)
    rows = _fiber_rows(il, n)
    cols = _fiber_rows(ir, n)
    wl = np.repeat(vl[il], n)
    wr = np.repeat(vr[ir], n)
    return wl[:, None] * matrix[np.ix_(rows, cols)] * wr[None, :]


def _arc_gap(lo_a, hi_a, lo_b, hi_b, period):
    """Gap between two arcs of a circle, or None when interiors meet."""
    len_a = hi_a - lo_a
    len_b = hi_b - lo_b
    s1 = (lo_b - hi_a) % period
    s2 = (lo_a - hi_b) % period
    if abs(len_a + len_b + s1 + s2 - period) <= 1e-9:
        return min(s1, s2)
    return None


def support_distance(chi_left, chi_right):
    """Sup-norm torus distance between two cutoff support boxes.

    Touching supports give 0.0; supports whose interiors intersect in
    every dimension are rejected, since no separation is defined there.
    """
    if chi_left.grid.d != chi_right.grid.d:
        raise GeometryError("cutoffs live in different dimensions")
    if abs(chi_left.grid.box_side - chi_right.grid.box_side) > 1e-12:
        raise GeometryError("cutoffs live on different tori")
    period = chi_left.grid.box_side
    gaps = []
    for (la, ha), (lb, hb) in zip(chi_left.support_box, chi_right.support_box):
        gaps.append(_arc_gap(la, ha, lb, hb, period))
    if all(g is None for g in gaps):
        raise PreconditionError("cutoff supports overlap")
    return max(0.0 if g is None else g for g in gaps)


def separated_slab_pair(grid, width, distance):
    """A width-`width` slab at the box edge and the slab separated from it
    by `distance` on both torus sides along axis 0.

    Returns (chi_near, chi_far). Both are sharp indicators; the far slab
    spans the remaining circumference, so it plays the role of an
    unbounded complement region at desk scale.
    """
    L = grid.box_side
    if L - width - 2.0 * distance <= 0:
        raise GeometryError("torus too small for the requested separation")
    lo1 = np.full(grid.d, -L / 2.0)
    hi1 = np.full(grid.d, L / 2.0)
    hi1[0] = -L / 2.0 + width
    lo2 = np.full(grid.d, -L / 2.0)
    hi2 = np.full(grid.d, L / 2.0)
    lo2[0] = -L / 2.0 + width + distance
    hi2[0] = L / 2.0 - distance
    return box_indicator(grid, lo1, hi1), box_indicator(grid, lo2, hi2)


def _block_norms(y, op, energy, pairs):
    """Operator and trace norms of all cutoff blocks at one offset."""
    R = resolvent(op, energy + 1j * y)
    op_norms = []
    tr_norms = []
    for chi1, chi2 in pairs:
        block = _weighted_block(R, chi1, chi2, op.fiber_n)
        sv = np.linalg.svd(block, compute_uv=False)
        op_norms.append(float(sv[0]) if sv.size else 0.0)
        tr_norms.append(float(sv.sum()))
    return op_norms, tr_norms


def combes_thomas_scan(op, energy, ys, pairs, e_max=3.0, y_max=2.0,
                       map_fn=None):
    """Decay of chi_1 R(E+iy) chi_2 blocks over a list of separated pairs.

    One direct resolvent solve per y; per pair the block norms come from
    its singular values. Separations below MIN_SEPARATION unit cells are
    rejected. Returns one DecayFit per y, ordered as given. ``map_fn``
    optionally distributes the per-y solves.
    """
    energy = float(energy)
    if abs(energy) > e_max:
        raise PreconditionError("energy outside the configured scan cap")
    ys = tuple(float(y) for y in ys)
    if any(y == 0.0 or abs(y) > y_max for y in ys):
        raise PreconditionError("imaginary offsets must be nonzero and below the cap")
    pairs = tuple(pairs)
    dists = []
    for chi1, chi2 in pairs:
        a = support_distance(chi1, chi2)
        if a < MIN_SEPARATION - 1e-12:
            raise PreconditionError(
                "separation %.3g below the scan floor %g" % (a, MIN_SEPARATION))
        dists.append(a)
    if len(dists) < 4:
        raise PreconditionError("decay fits need at least four separations")

    worker = functools.partial(_block_norms, op=op, energy=energy, pairs=pairs)
    fits = []
    for y, (op_norms, tr_norms) in zip(ys, (map_fn or map)(worker, ys)):
        intercept, rate, r2 = _line_fit(np.array(dists), np.log(tr_norms))
        fits.append(DecayFit(distances=tuple(dists), energy=energy,
                             imag_part=y, op_norms=tuple(op_norms),
                             trace_norms=tuple(tr_norms), slope=-rate,
                             intercept=intercept, r_squared=r2))
    return tuple(fits)


def _line_fit(x, y):
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def operator_norm_ct_bound(op, energy, y, chi_left, chi_right, rate):
    """Measured ||chi_left R(E+iy) chi_right|| against the fitted envelope.

    ``rate`` is the per-model decay constant per unit imaginary offset,
    taken from a prior scan's slope / y. The envelope carries a built-in
    10 percent haircut on the rate, so measured <= bound is the expected
    state of the world whenever the supports are truly separated; at
    distance 0 the pair (measured, 2/|y|) is diagnostic only.
    """
    y = float(y)
    if y == 0.0:
        raise PreconditionError("imaginary offset must be nonzero")
    dist = support_distance(chi_left, chi_right)
    R = resolvent(op, float(energy) + 1j * y)
    block = _weighted_block(R, chi_left, chi_right, op.fiber_n)
    sv = np.linalg.svd(block, compute_uv=False)
    measured = float(sv[0]) if sv.size else 0.0
    bound = (2.0 / abs(y)) * math.exp(-0.9 * float(rate) * abs(y) * dist)
    return measured, bound


def dilated_operator(symbol, background, model, realization, grid, t, eps,
                     x0, backend):
    """Hopping-dilated operator and its similarity defect.

    The weight rho(x) = sqrt(eps + |x - x0|^2) uses the wrapped torus
    displacement. The first-order dilation places t * (rho(b) - rho(a))
    on every hopping bond (a, b); site-diagonal blocks are untouched.
    Conjugating the plain operator by the diagonals exp(+-t rho) realizes
    the same dilation to first order, and the returned residual is the
    operator norm of the difference, which shrinks linearly in the grid
    step at fixed t.

    Locality of the hopping stencil is essential, so only the
    finite-difference backend is admitted. Pass model=None and
    realization=None for the clean background operator.
    """
    if backend != FINITE_DIFFERENCE:
        raise PreconditionError("dilation needs the local finite-difference backend")
    t = float(t)
    eps = float(eps)
    if t < 0.0:
        raise PreconditionError("dilation strength must be nonnegative")
    if eps <= 0.0:
        raise PreconditionError("regularization eps must be positive")
    if (model is None) != (realization is None):
        raise PreconditionError("model and realization must be given together")

    if model is None:
        from .operators import build_background_operator
        op = build_background_operator(symbol, grid, background, backend)
    else:
        op = build_disordered_operator(symbol, background, model, realization,
                                       grid, backend)
    H = op.matrix

    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.d,))
    pts = grid.points()
    L = grid.box_side
    delta = (pts - x0[None, :] + L / 2.0) % L - L / 2.0
    rho = np.sqrt(eps + np.sum(delta ** 2, axis=1))
    rho_f = np.repeat(rho, symbol.n)

    D = rho_f[None, :] - rho_f[:, None]
    H_t = H + t * (H * D)
    # exp only where H has an entry; rho differences across far-apart
    # site pairs would overflow and never contribute anyway
    Dm = np.where(H != 0.0, D, 0.0)
    exact = H * np.exp(t * Dm)
    residual = float(np.linalg.norm(exact - H_t, 2))
    return H_t, residual


# ---------------------------------------------------------------------------
# Schatten bounds


def birman_solomyak_check(f, g, grid, p):
    """Schatten-p norm of f(x) g(-i grad) against the lattice product bound.

    ``f`` is a grid function (callable on the (size, d) coordinate array,
    or values), ``g`` a frequency function (callable on the (size, d)
    frequency array, or values). Scalar fiber. Returns (lhs, rhs) with
    lhs the computed norm and rhs the bound

        (1/L)^(d/p) * (sum_x |f|^p h^d)^(1/p) * (sum_k |g|^p)^(1/p),

    which is an equality at p = 2. A violation beyond roundoff means the
    assembly is broken and raises instead of returning.
    """
    p = float(p)
    if p < 2.0:
        raise PreconditionError("the product bound needs p >= 2")
    fv = _field_values(f, grid.points(), grid)
    freqs = _frequency_points(grid)
    gv = _field_values(g, freqs, grid)
    if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gv))):
        raise PreconditionError("symbol values must be finite on the grid")

    F = None
    for _ in range(grid.d):
        F1 = _dft_1d(grid)
        F = F1 if F is None else np.kron(F, F1)
    M = fv[:, None] * (F.conj().T @ (gv[:, None] * F))
    lhs = schatten_norm(M, p)

    hd = grid.h ** grid.d
    vol = grid.box_side ** grid.d
    rhs = (vol ** (-1.0 / p)
           * float(np.sum(np.abs(fv) ** p) * hd) ** (1.0 / p)
           * float(np.sum(np.abs(gv) ** p)) ** (1.0 / p))
    if lhs > rhs * (1.0 + 1e-9):
        raise ComputeError("product bound violated: %.17g > %.17g" % (lhs, rhs))
    return lhs, rhs


def _field_values(f, points, grid):
    if callable(f):
        vals = np.asarray(f(points))
    else:
        vals = np.asarray(f)
    vals = vals.reshape(-1)
    if vals.shape != (grid.size,):
        raise GeometryError("field values must cover the grid exactly")
    return vals.astype(complex)


def _frequency_points(grid):
    axes = np.meshgrid(*([grid.freqs_1d()] * grid.d), indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=-1)


def resolvent_schatten_bound(op, energy, y, chi, half_order, e_max=3.0):
    """Schatten-(2 half_order) norm of R(E+iy) chi against |y|^-1 ||chi||.

    The reference is the grid 2d-norm of the cutoff divided by |y|; the
    unknown model constant is deliberately not estimated, so callers
    compare the ratio lhs/reference across parameters rather than its
    absolute size.
    """
    half_order = int(half_order)
    if half_order < 1:
        raise PreconditionError("half_order must be a positive integer")
    y = float(y)
    if y == 0.0:
        raise PreconditionError("imaginary offset must be nonzero")
    if abs(float(energy)) > e_max:
        raise PreconditionError("energy outside the configured cap")
    p = 2.0 * half_order
    R = resolvent(op, float(energy) + 1j * y)
    M = R * chi.fiber_vector(op.fiber_n)[None, :]
    lhs = schatten_norm(M, p)
    hd = chi.grid.h ** chi.grid.d
    reference = float(np.sum(chi.site_vector() ** p) * hd) ** (1.0 / p) / abs(y)
    return lhs, reference


# ---------------------------------------------------------------------------
# resolvent identity between nested tori


def gre_residual(symbol, background, model, realization, box_side,
                 ambient_side, cutoff, z, backend=FINITE_DIFFERENCE):
    """Defect of the cutoff resolvent identity between nested tori.

    With R the resolvent on the torus of side ``box_side``, R' on the
    torus of side ``ambient_side`` (same impurity data, restricted), and
    chi the cutoff zero-extended from the small grid, the identity

        chi R' = E R chi E* + E R E* [H', chi] R'

    is exact matrix algebra whenever chi is supported far enough from
    the small-box boundary that (i) the hopping stencil never reaches a
    wrapped bond and (ii) the two operators have identical coefficients
    on the stencil neighborhood of the support. Condition (i) is the
    hard precondition checked here, one grid step of clearance;
    condition (ii) additionally needs the support to clear the reach of
    impurities outside the small box, which callers control through the
    margin of the cutoff they pass in. Returns the operator norm of the
    difference of the two sides.
    """
    if backend != FINITE_DIFFERENCE:
        raise PreconditionError("the identity needs the local finite-difference backend")
    small = cutoff.grid
    if small.d != symbol.d:
        raise GeometryError("cutoff grid dimension mismatch")
    Ls = int(round(box_side))
    La = int(round(ambient_side))
    if abs(small.box_side - Ls) > 1e-12:
        raise GeometryError("cutoff must live on the small torus")
    if La < Ls:
        raise GeometryError("ambient side smaller than the box side")
    ppc = small.npts // Ls
    if ppc * Ls != small.npts:
        raise GeometryError("grid points per unit cell must be integral")
    h = small.h

    if La > Ls:
        margin = min(min(lo - (-Ls / 2.0), Ls / 2.0 - hi)
                     for lo, hi in cutoff.support_box)
        if margin + 1e-12 < h:
            raise GeometryError(
                "cutoff support within one stencil step of the boundary")

    H_small = build_periodic_restriction(symbol, background, model, realization,
                                         Ls, backend, ppc)
    H_big = build_periodic_restriction(symbol, background, model, realization,
                                       La, backend, ppc)
    big = H_big.grid
    z = complex(z)
    R = resolvent(H_small, z)
    Rp = resolvent(H_big, z)

    emb = _embedding_indices(small, big, symbol.n)
    chi_small = np.repeat(cutoff.site_vector(), symbol.n)
    chi_big = np.zeros(H_big.dim)
    chi_big[emb] = chi_small

    lhs = chi_big[:, None] * Rp
    term_direct = np.zeros_like(Rp)
    term_direct[np.ix_(emb, emb)] = R * chi_small[None, :]
    Hb = H_big.matrix
    comm = Hb * chi_big[None, :] - chi_big[:, None] * Hb
    M = comm @ Rp
    term_comm = np.zeros_like(Rp)
    term_comm[emb, :] = R @ M[emb, :]
    return float(np.linalg.norm(lhs - term_direct - term_comm, 2))


def _embedding_indices(small, big, fiber_n):
    """Flat fiber-space indices of the small grid's sites inside the big one."""
    axis_maps = []
    xs = small.coords_1d()
    for _ in range(small.d):
        pos = (xs + big.box_side / 2.0) / big.h
        j = np.round(pos).astype(int)
        if np.max(np.abs(pos - j)) > 1e-9 or np.any(j < 0) or np.any(j >= big.npts):
            raise GeometryError("small grid does not embed into the ambient grid")
        axis_maps.append(j)
    mesh = np.meshgrid(*axis_maps, indexing="ij")
    sites = np.ravel_multi_index([m.ravel() for m in mesh], big.shape)
    return _fiber_rows(sites, fiber_n)
