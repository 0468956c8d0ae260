"""Smooth functional calculus through a complex-plane resolvent average.

phi(A) is assembled as (1/pi) * integral of dbar(phi_ext) * (A - z)^{-1}
over the plane, where phi_ext is a quasi-analytic continuation of a smooth
compactly supported phi: a Taylor sum in iy of fixed order, cut off at
height 2*delta. The integrand concentrates near the real axis with
magnitude O(|y|^order) there, so the quadrature grid is graded: a
Gauss-Legendre band where the height cutoff varies, log-spaced panels
toward the axis, and edge-graded panels in the real direction where the
test function's high derivatives live.

The inner loop never forms a dense resolvent. The matrix is tridiagonalized
once; each shifted tridiagonal inverse is rank-structured (two coupled
determinant recurrences give the whole inverse), so one matrix product per
chunk of nodes accumulates the integral. Determinant recurrences overflow
for large shifts, hence the log-scaled form with per-node balancing, and a
LAPACK tridiagonal-solve fallback when even that lacks headroom.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .bumps import SmoothBump
from .errors import ComputeError, PreconditionError, QuadratureBudgetError
from .spectral import _as_matrix, _check_hermitian

_OVERFLOW_EXP = 650.0


def _smooth_partition(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a = np.zeros_like(u)
    b = np.zeros_like(u)
    p = u > 0
    a[p] = np.exp(-1.0 / u[p])
    q = u < 1
    b[q] = np.exp(-1.0 / (1.0 - u[q]))
    return a / (a + b)


def _smooth_partition_deriv(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = (u > 0) & (u < 1)
    um = u[m]
    a = np.exp(-1.0 / um)
    b = np.exp(-1.0 / (1.0 - um))
    da = a / um ** 2
    db = -b / (1.0 - um) ** 2
    out[m] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out


def _height_cutoff(y, delta):
    """tau(|y|/delta) and its derivative in y/delta: 1 below delta, 0 above 2*delta."""
    s = np.abs(np.asarray(y, dtype=float)) / delta
    t = np.where(s <= 1.0, 1.0, np.where(s >= 2.0, 0.0, _smooth_partition(2.0 - s)))
    dt = np.where((s > 1.0) & (s < 2.0), -_smooth_partition_deriv(2.0 - s), 0.0)
    dt = dt * np.sign(np.asarray(y, dtype=float))
    return t, dt


@dataclass(frozen=True, eq=False)
class QuadratureSpec:
    """Node layout parameters plus the error budget.

    Lengths are relative: x panel widths scale with the support halfwidth
    and every height scales with delta, so the layout is invariant under
    dilations of the test function.
    """

    y_min_factor: float = 1e-5
    x_first_width: float = 0.006
    x_growth: float = 1.45
    x_cap: float = 0.35
    x_points: int = 14
    band_panels: int = 2
    band_points: int = 20
    axis_panels: int = 3
    axis_points: int = 12
    max_nodes: int = 90_000
    tolerance: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.y_min_factor < 1.0:
            raise PreconditionError("y_min_factor must lie in (0, 1)")
        if not (0.0 < self.x_first_width <= self.x_cap <= 1.0):
            raise PreconditionError("x panel widths must satisfy 0 < first <= cap <= 1")
        if self.x_growth <= 1.0:
            raise PreconditionError("x panel growth factor must exceed 1")
        for k in (self.x_points, self.band_panels, self.band_points,
                  self.axis_panels, self.axis_points):
            if k < 1:
                raise PreconditionError("panel and point counts must be positive")
        if self.max_nodes < 1 or self.tolerance <= 0.0:
            raise PreconditionError("need a positive node budget and tolerance")


@dataclass(frozen=True, eq=False)
class AlmostAnalyticExtension:
    """Order-N quasi-analytic continuation of a smooth bump.

    extension(x, 0) reproduces the bump; dbar decays like |y|^order toward
    the real axis and vanishes above height 2*delta.
    """

    bump: SmoothBump
    order: int
    delta: float

    def __post_init__(self):
        if self.order < 2:
            raise PreconditionError("extension order must be at least 2")
        if self.order + 1 > self.bump.max_order:
            raise PreconditionError(
                "extension order %d needs derivative order %d beyond the bump's cap %d"
                % (self.order, self.order + 1, self.bump.max_order))
        if self.delta <= 0.0:
            raise PreconditionError("height scale delta must be positive")

    @property
    def support(self):
        lo, hi = self.bump.support
        return (lo, hi, 2.0 * self.delta)

    def _stacks(self, x):
        return self.bump.derivatives(x, self.order + 1)

    def extension(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
        ders = self._stacks(x)
        tau, _ = _height_cutoff(y, self.delta)
        iy = 1j * y
        total = np.zeros(x.shape, dtype=complex)
        for k in range(self.order + 1):
            total += ders[k] * iy ** k / math.factorial(k)
        return tau * total

    def dbar(self, x, y):
        """d/dzbar of the extension; conjugate-even in y."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape).astype(float)
        ders = self._stacks(x)
        return self._dbar_from_stack(ders, y)

    def _dbar_from_stack(self, ders, y):
        tau, dtau = _height_cutoff(y, self.delta)
        iy = 1j * y
        N = self.order
        lead = tau * ders[N + 1] * iy ** N / math.factorial(N)
        tail = np.zeros(iy.shape, dtype=complex)
        if np.any(dtau != 0.0):
            for k in range(N + 1):
                tail += ders[k] * iy ** k / math.factorial(k)
        return 0.5 * (lead + (1j / self.delta) * dtau * tail)


def build_extension(bump, order, delta=None):
    """Default delta: a quarter of the feature width (ramp, or halfwidth)."""
    if delta is None:
        lo, hi = bump.support
        feature = bump.ramp if bump.family == "plateau" else 0.5 * (hi - lo)
        delta = feature / 4.0
    return AlmostAnalyticExtension(bump, int(order), float(delta))


def _edge_graded_panel_edges(s0, s1, spec):
    """Panel edges graded geometrically from both ends toward the midpoint."""
    hw = 0.5 * (s1 - s0)
    mid = 0.5 * (s0 + s1)
    widths = [spec.x_first_width * hw]
    while sum(widths) < hw:
        widths.append(min(widths[-1] * spec.x_growth, spec.x_cap * hw))
    lefts = [s0]
    for w in widths:
        nxt = lefts[-1] + w
        if nxt >= mid:
            break
        lefts.append(nxt)
    lefts.append(mid)
    return np.array(lefts + [2.0 * mid - v for v in reversed(lefts[:-1])])


def _graded_x_nodes(ext, spec):
    """Gauss-Legendre points per panel; panels follow the bump's structure.

    Edge segments get geometric grading toward both ends, where the high
    derivatives concentrate. On flat segments the test function is
    constant but the resolvent kernel still varies on the height scale,
    so panels there are about 2*delta wide.
    """
    gx, gw = np.polynomial.legendre.leggauss(spec.x_points)
    xs, ws = [], []
    for a0, b0, kind in ext.bump.panel_structure():
        if kind == "flat":
            n_panels = max(1, int(math.ceil((b0 - a0) / (2.0 * ext.delta))))
            edges = np.linspace(a0, b0, n_panels + 1)
        else:
            edges = _edge_graded_panel_edges(a0, b0, spec)
        for a, b in zip(edges[:-1], edges[1:]):
            xs.append(0.5 * (b - a) * gx + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * gw)
    return np.concatenate(xs), np.concatenate(ws)


def truncation_tail(ext, spec):
    """Bound on the integral lost below the smallest quadrature height."""
    N = ext.order
    lo, hi = ext.bump.support
    c_lead = ext.bump.derivative_sup(N + 1) / (2.0 * math.factorial(N))
    y_min = spec.y_min_factor * ext.delta
    return (2.0 / math.pi) * c_lead * (hi - lo) * y_min ** N / N


def build_quadrature(ext, spec=None):
    """Upper-half-plane nodes z and complex weights c.

    The represented functional is phi(a) = (2/pi) Re sum c / (a - z);
    the lower half plane is folded in by conjugate symmetry. Raises
    QuadratureBudgetError when the node budget or the truncation-tail
    tolerance cannot be met.
    """
    spec = spec or QuadratureSpec()
    s0, s1 = ext.bump.support
    N = ext.order
    kf = [math.factorial(k) for k in range(N + 2)]

    xs, wx = _graded_x_nodes(ext, spec)
    n_y = spec.band_panels * spec.band_points + spec.axis_panels * spec.axis_points
    total = xs.size * n_y
    if total > spec.max_nodes:
        raise QuadratureBudgetError(
            "node layout needs %d nodes, budget is %d" % (total, spec.max_nodes))
    tail = truncation_tail(ext, spec)
    if tail > spec.tolerance:
        raise QuadratureBudgetError(
            "truncation tail %.3e exceeds tolerance %.3e; lower y_min_factor "
            "or raise the extension order" % (tail, spec.tolerance))

    ders = ext._stacks(xs)
    delta = ext.delta
    y_min = spec.y_min_factor * delta
    zs, cs = [], []

    # band [delta, 2*delta]: the height cutoff varies here
    gy, gwy = np.polynomial.legendre.leggauss(spec.band_points)
    band_edges = np.linspace(delta, 2.0 * delta, spec.band_panels + 1)
    for a, b in zip(band_edges[:-1], band_edges[1:]):
        for y, wy in zip(0.5 * (b - a) * gy + 0.5 * (a + b), 0.5 * (b - a) * gwy):
            dbar = ext._dbar_from_stack(ders, np.full(xs.size, y))
            zs.append(xs + 1j * y)
            cs.append(dbar * wx * wy)

    # near-axis [y_min, delta]: only the leading term survives; log-spaced panels
    gu, gwu = np.polynomial.legendre.leggauss(spec.axis_points)
    uedges = np.linspace(math.log(y_min), math.log(delta), spec.axis_panels + 1)
    for ua, ub in zip(uedges[:-1], uedges[1:]):
        for u, wu in zip(0.5 * (ub - ua) * gu + 0.5 * (ua + ub),
                         0.5 * (ub - ua) * gwu):
            y = math.exp(u)
            dbar = 0.5 * ders[N + 1] * (1j * y) ** N / kf[N]
            zs.append(xs + 1j * y)
            cs.append(dbar * wx * (wu * y))

    z = np.concatenate(zs)
    c = np.concatenate(cs)
    keep = c != 0.0  # flat stretches and edge-guard zeros carry no weight
    return z[keep], c[keep]


def hs_scalar(ext, points, spec=None):
    """The quadrature applied to scalars; the matrix path must agree with this."""
    z, c = build_quadrature(ext, spec)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    out = np.empty(points.size)
    for i, lam in enumerate(points):
        out[i] = (2.0 / math.pi) * float(np.sum((c / (lam - z)).real))
    return out


def _tridiagonalize(A):
    """A = Qt T Qt^dagger with T real symmetric tridiagonal (diag, offdiag)."""
    n = A.shape[0]
    if n == 1:
        return A.real.diagonal().copy(), np.zeros(0), np.eye(1, dtype=complex)
    H, Q = sla.hessenberg(A, calc_q=True)
    d = H.diagonal().real.copy()
    e = H.diagonal(-1).copy()
    ph = np.ones(n, dtype=complex)
    for k in range(1, n):
        ph[k] = ph[k - 1] * np.exp(1j * np.angle(e[k - 1]))
    Qt = Q * ph[None, :]
    return d, np.abs(e), Qt


def _accumulate_structured(d, eb, zs, ws, chunk=4096):
    """sum_k ws[k] * inv(T - zs[k]) for real symmetric tridiagonal T.

    Log-scaled determinant recurrences; the inverse's upper triangle is an
    outer product per node, so each chunk is one matrix product. Raises
    FloatingPointError when the balanced exponents still overflow.
    """
    n = d.size
    if n == 1:
        return np.array([[np.sum(ws / (d[0] - zs))]])
    if float(eb.min()) < 1e-300:
        raise FloatingPointError("reducible tridiagonal; structured path unusable")
    Wu = np.zeros((n, n), dtype=complex)
    S = np.concatenate([[0.0], np.cumsum(np.log(eb))])
    for lo in range(0, zs.size, chunk):
        z = zs[lo:lo + chunk]
        w = ws[lo:lo + chunk]
        m = z.size
        thh = np.empty((n + 1, m), dtype=complex)
        lth = np.empty((n + 1, m))
        thh[0] = 1.0
        lth[0] = 0.0
        thh[1] = d[0] - z
        s = np.abs(thh[1])
        s[s == 0] = 1.0
        thh[1] = thh[1] / s
        lth[1] = np.log(s)
        for i in range(2, n + 1):
            br = (d[i - 1] - z) * thh[i - 1] \
                - eb[i - 2] ** 2 * thh[i - 2] * np.exp(lth[i - 2] - lth[i - 1])
            s = np.abs(br)
            s[s == 0] = 1.0
            thh[i] = br / s
            lth[i] = lth[i - 1] + np.log(s)
        phh = np.empty((n + 2, m), dtype=complex)
        lph = np.empty((n + 2, m))
        phh[n + 1] = 1.0
        lph[n + 1] = 0.0
        phh[n] = d[n - 1] - z
        s = np.abs(phh[n])
        s[s == 0] = 1.0
        phh[n] = phh[n] / s
        lph[n] = np.log(s)
        for j in range(n - 1, 0, -1):
            br = (d[j - 1] - z) * phh[j + 1] \
                - eb[j - 1] ** 2 * phh[j + 2] * np.exp(lph[j + 2] - lph[j + 1])
            s = np.abs(br)
            s[s == 0] = 1.0
            phh[j] = br / s
            lph[j] = lph[j + 1] + np.log(s)
        idx = np.arange(1, n + 1)
        expA = lth[idx - 1] - S[idx - 1][:, None] - 0.5 * lth[n][None, :]
        expB = lph[idx + 1] + S[idx - 1][:, None] - 0.5 * lth[n][None, :]
        shift = 0.5 * (expA.max(axis=0) - expB.max(axis=0))
        expA = expA - shift[None, :]
        expB = expB + shift[None, :]
        if not (np.isfinite(expA).all() and np.isfinite(expB).all()):
            raise FloatingPointError("non-finite exponents in structured inverse")
        if expA.max() > _OVERFLOW_EXP or expB.max() > _OVERFLOW_EXP:
            raise FloatingPointError("exponent overflow in structured inverse")
        sgn = np.where(idx % 2 == 0, 1.0, -1.0)
        Amat = sgn[:, None] * thh[idx - 1] * np.exp(expA) * w[None, :]
        Bmat = sgn[:, None] * phh[idx + 1] * np.exp(expB) / thh[n][None, :]
        Wu += Amat @ Bmat.T
    iu = np.triu_indices(n)
    W = np.zeros((n, n), dtype=complex)
    W[iu] = Wu[iu]
    return W + np.triu(Wu, 1).T


def _accumulate_gtsv(d, eb, zs, ws):
    """Reference accumulation: one LAPACK tridiagonal solve per node."""
    n = d.size
    if n == 1:
        return np.array([[np.sum(ws / (d[0] - zs))]])
    gtsv = sla.lapack.zgtsv
    eye = np.eye(n, dtype=complex)
    W = np.zeros((n, n), dtype=complex)
    off = eb.astype(complex)
    for z, w in zip(zs, ws):
        _, _, _, X, info = gtsv(off, (d - z).astype(complex), off, eye)
        if info != 0:
            raise ComputeError("tridiagonal solve failed at a quadrature node")
        W += w * X
    return W


def hs_apply(op, ext, spec=None, force_fallback=False):
    """phi(A) through the quadrature; Hermitian input, Hermitian output."""
    A = _as_matrix(op)
    _check_hermitian(A)
    zs, cs = build_quadrature(ext, spec)
    d, eb, Qt = _tridiagonalize(A)
    if force_fallback:
        W = _accumulate_gtsv(d, eb, zs, cs)
    else:
        try:
            W = _accumulate_structured(d, eb, zs, cs)
        except FloatingPointError:
            W = _accumulate_gtsv(d, eb, zs, cs)
    Z = Qt @ W @ Qt.conj().T
    return (Z + Z.conj().T) / math.pi


@dataclass(frozen=True, eq=False)
class FVRComparison:
    """Window average of phi(H) on a large torus vs the periodically closed box."""

    box_side: float
    ambient_side: float
    seed: int
    window_average: float
    periodic_average: float

    @property
    def difference(self):
        return abs(self.window_average - self.periodic_average)


def finite_volume_replacement(symbol, background, disorder, phi, box_side,
                              pad=15, ambient_side=None, seed=0,
                              backend=None, points_per_cell=8,
                              mode="eigen", spec=None):
    """Compare the two finite-volume readings of the averaged trace of phi(H).

    Window reading: one disorder realization on a large ambient torus,
    trace of phi(H) cut down to the centered box, divided by the box
    volume. Periodic reading: the same realization restricted to the box
    and closed periodically. phi is a SmoothBump or plain callable for
    mode "eigen"; mode "hs" takes an AlmostAnalyticExtension and exercises
    the quadrature route end to end.
    """
    from .disorder import (build_disordered_operator, build_periodic_restriction,
                           sample_realization)
    from .operators import FOURIER, Grid, box_indicator
    from .spectral import eigen_hermitian

    backend = backend or FOURIER
    if ambient_side is None:
        ambient_side = box_side + pad + 5
    if not ambient_side > box_side + pad + 4:
        raise PreconditionError("ambient torus must exceed the box by pad + 4")
    realization = sample_realization(disorder, ambient_side, seed)
    grid = Grid.regular(symbol.d, ambient_side, points_per_cell)
    H = build_disordered_operator(symbol, background, disorder, realization,
                                  grid, backend)
    half = box_side / 2.0
    chi = box_indicator(grid, [-half] * symbol.d, [half] * symbol.d)
    box_diag = chi.fiber_vector(symbol.n) > 0.5
    volume = float(box_side) ** symbol.d

    if mode == "eigen":
        fn = phi if callable(phi) else phi.bump
        data = eigen_hermitian(H)
        weights = np.sum(np.abs(data.eigenvectors[box_diag, :]) ** 2, axis=0)
        window = float(np.sum(np.asarray(fn(data.eigenvalues)) * weights)) / volume
    elif mode == "hs":
        M = hs_apply(H, phi, spec)
        window = float(np.sum(M.diagonal().real[box_diag])) / volume
    else:
        raise PreconditionError("mode must be 'eigen' or 'hs'")

    Hper = build_periodic_restriction(symbol, background, disorder, realization,
                                      box_side, backend, points_per_cell)
    vals = np.linalg.eigvalsh(Hper.matrix)
    fn = phi if callable(phi) else phi.bump
    periodic = float(np.sum(np.asarray(fn(vals)))) / volume
    return FVRComparison(float(box_side), float(ambient_side), int(seed),
                         window, periodic)
