"""Discretized Dirac-type operators on periodic boxes.

Everything lives on a torus: coordinates run over [-L/2, L/2) with spacing
h = L/N, and the unit impurity lattice is a subset of the grid whenever the
box side is an integer and the points-per-cell count is even. Two
interchangeable backends build each operator. The Fourier-symbol backend is
spectrally exact and dense; the finite-difference backend is a local central
stencil, which is what the commutator-support and resolvent-identity
arguments need.

Index convention for block structure: flattened index = site * n + fiber
component, so matrices factor as kron(site_matrix, fiber_matrix).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ComputeError, GeometryError, PreconditionError

FOURIER = "fourier_spectral"
FINITE_DIFFERENCE = "finite_difference"
BACKENDS = (FOURIER, FINITE_DIFFERENCE)

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# Relative max-norm tolerance for declaring a built matrix Hermitian.
HERMITICITY_TOL = 1e-10


def _require(cond, err, msg):
    if not cond:
        raise err(msg)


@dataclass(frozen=True, eq=False)
class DiracSymbol:
    """Coefficient matrices (one Hermitian n x n matrix per dimension)."""

    sigmas: tuple

    def __post_init__(self):
        sig = tuple(np.array(s, dtype=complex) for s in self.sigmas)
        _require(len(sig) >= 1, GeometryError, "need at least one coefficient matrix")
        n = sig[0].shape[0] if sig[0].ndim == 2 else 0
        for s in sig:
            _require(s.ndim == 2 and s.shape == (n, n) and n >= 1, GeometryError,
                     "coefficient matrices must be square and share one shape")
            _require(float(np.max(np.abs(s - s.conj().T))) <= 1e-12, GeometryError,
                     "coefficient matrix is not Hermitian to 1e-12")
        for s in sig:
            s.setflags(write=False)
        object.__setattr__(self, "sigmas", sig)

    @property
    def d(self):
        return len(self.sigmas)

    @property
    def n(self):
        return self.sigmas[0].shape[0]

    def contract(self, p):
        """sigma . p for one momentum vector p (length d)."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        _require(p.shape == (self.d,), GeometryError, "momentum dimension mismatch")
        out = np.zeros((self.n, self.n), dtype=complex)
        for pj, s in zip(p, self.sigmas):
            out = out + pj * s
        return out


def ellipticity_constant(symbol, samples=128, seed=0):
    """Smallest singular value of sigma . p over unit momenta.

    Samples the unit sphere (plus every +-coordinate direction), then
    polishes the best few directions with a local derivative-free search.
    Returns 0 when the polished minimum drops below 1e-8, flagging a
    degenerate direction. Diagnostic, not a certified bound.
    """
    _require(samples >= 100, PreconditionError, "need at least 100 sphere samples")
    d = symbol.d
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((samples, d))
    norms = np.linalg.norm(pts, axis=1)
    norms[norms < 1e-12] = 1.0
    pts /= norms[:, None]
    axes = np.concatenate([np.eye(d), -np.eye(d)], axis=0)
    cand = np.concatenate([axes, pts], axis=0)

    def sv_min(p):
        nrm = float(np.linalg.norm(p))
        if nrm < 1e-9:
            return np.inf
        return float(np.linalg.svd(symbol.contract(np.asarray(p) / nrm),
                                   compute_uv=False)[-1])

    vals = np.array([sv_min(p) for p in cand])
    best = float(np.min(vals))
    if d > 1:
        from scipy import optimize
        for start in cand[np.argsort(vals)[:3]]:
            res = optimize.minimize(sv_min, start, method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-14,
                                             "maxfev": 800})
            best = min(best, float(res.fun))
    if best <= 1e-8:
        return 0.0
    return best


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic grid: N points per dimension on a box of side L."""

    d: int
    box_side: float
    npts: int

    def __post_init__(self):
        _require(self.d >= 1, GeometryError, "dimension must be >= 1")
        _require(self.box_side > 0, GeometryError, "box side must be positive")
        _require(self.npts > 0 and self.npts % 2 == 0, GeometryError,
                 "points per dimension must be a positive even integer")

    @property
    def h(self):
        return self.box_side / self.npts

    @property
    def shape(self):
        return (self.npts,) * self.d

    @property
    def size(self):
        return self.npts ** self.d

    @classmethod
    def regular(cls, d, box_side, points_per_cell=8):
        """Grid aligned with the unit impurity lattice.

        box_side must be a positive integer (in lattice units) and
        points_per_cell even, so that integer lattice points land exactly on
        grid points for boxes of either parity.
        """
        L = int(round(box_side))
        _require(abs(box_side - L) < 1e-12 and L > 0, GeometryError,
                 "box side must be a positive integer in lattice units")
        ppc = int(points_per_cell)
        _require(ppc > 0 and ppc % 2 == 0, GeometryError,
                 "points per cell must be a positive even integer")
        return cls(d, float(L), L * ppc)

    def coords_1d(self):
        return -self.box_side / 2.0 + self.h * np.arange(self.npts)

    def freqs_1d(self):
        """Frequencies 2*pi*k/L for -N/2 <= k < N/2, in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.npts, d=self.h)

    def points(self):
        """All grid points, shape (size, d), C-order flattening."""
        axes = np.meshgrid(*([self.coords_1d()] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)


@dataclass(frozen=True, eq=False)
class PeriodicBackground:
    """Unit-periodic coefficient and potential fields, one sampled cell each.

    coeff_cell and potential_cell have shape (r,)*d + (n, n) where r is the
    sample resolution per unit cell; sample j corresponds to offset j/r in
    the cell. Fields are tiled exactly onto any compatible grid, so float
    periodicity is structural rather than numerical.
    """

    coeff_cell: np.ndarray
    potential_cell: np.ndarray

    def __post_init__(self):
        cc = np.array(self.coeff_cell, dtype=complex)
        vc = np.array(self.potential_cell, dtype=complex)
        _require(cc.ndim >= 3 and cc.shape == vc.shape, GeometryError,
                 "coefficient and potential cells must share shape (r,)*d + (n, n)")
        n = cc.shape[-1]
        _require(cc.shape[-2] == n, GeometryError, "cell entries must be square matrices")
        flat_c = cc.reshape(-1, n, n)
        flat_v = vc.reshape(-1, n, n)
        _require(float(np.max(np.abs(flat_c - flat_c.conj().transpose(0, 2, 1)))) <= 1e-12,
                 GeometryError, "coefficient field must be Hermitian at every sample")
        _require(float(np.max(np.abs(flat_v - flat_v.conj().transpose(0, 2, 1)))) <= 1e-12,
                 GeometryError, "potential field must be Hermitian at every sample")
        eigs = np.linalg.eigvalsh(flat_c)
        lo, hi = float(eigs.min()), float(eigs.max())
        _require(lo > 0.0, GeometryError,
                 "coefficient field must be positive definite at every sample")
        cc.setflags(write=False)
        vc.setflags(write=False)
        object.__setattr__(self, "coeff_cell", cc)
        object.__setattr__(self, "potential_cell", vc)
        object.__setattr__(self, "_coeff_bounds", (lo, hi))

    @property
    def d(self):
        return self.coeff_cell.ndim - 2

    @property
    def n(self):
        return self.coeff_cell.shape[-1]

    @property
    def resolution(self):
        return self.coeff_cell.shape[0] if self.d >= 1 else 1

    @property
    def coeff_lower(self):
        return self._coeff_bounds[0]

    @property
    def coeff_upper(self):
        return self._coeff_bounds[1]

    @classmethod
    def constant(cls, coeff, potential, d, resolution=1):
        coeff = np.asarray(coeff, dtype=complex)
        potential = np.asarray(potential, dtype=complex)
        shape = (resolution,) * d + coeff.shape
        return cls(np.broadcast_to(coeff, shape), np.broadcast_to(potential, shape))

    @classmethod
    def from_functions(cls, coeff_fn, potential_fn, d, resolution):
        """Sample matrix-valued functions of the cell coordinate in [0, 1)^d."""
        offs = np.arange(resolution) / float(resolution)
        axes = np.meshgrid(*([offs] * d), indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        cvals = np.array([coeff_fn(x) for x in pts], dtype=complex)
        vvals = np.array([potential_fn(x) for x in pts], dtype=complex)
        n = cvals.shape[-1]
        shape = (resolution,) * d + (n, n)
        return cls(cvals.reshape(shape), vvals.reshape(shape))

    def _cell_index(self, grid):
        L = grid.box_side
        Lint = int(round(L))
        _require(abs(L - Lint) < 1e-12 and Lint >= 1, GeometryError,
                 "box side must be an integer number of background periods")
        _require(grid.npts == Lint * self.resolution, GeometryError,
                 "grid resolution must equal the background sample resolution")
        # Grid point j sits at fractional cell coordinate ((j + N/2) mod r) / r
        # for boxes of either parity (odd boxes shift the origin by half a cell).
        return (np.arange(grid.npts) + grid.npts // 2) % self.resolution

    def _tile(self, cell, grid):
        _require(grid.d == self.d, GeometryError, "grid dimension mismatch")
        idx = self._cell_index(grid)
        out = cell[np.ix_(*([idx] * self.d))]
        return np.ascontiguousarray(out.reshape(grid.size, self.n, self.n))

    def coeff_on(self, grid):
        """Coefficient field tiled onto the grid, shape (size, n, n)."""
        return self._tile(self.coeff_cell, grid)

    def potential_on(self, grid):
        return self._tile(self.potential_cell, grid)


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Scalar cutoff sampled on a grid, values in [0, 1].

    support_box is a per-dimension list of half-open intervals [lo, hi) in
    torus coordinates. The half-open convention makes sharp boxes tile the
    torus exactly, which keeps full-window trace identities at integer
    values; the impurity index set elsewhere stays the open box.
    """

    grid: Grid
    values: np.ndarray
    support_box: tuple
    smooth: bool
    sup_gradient_bound: float

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        _require(vals.shape == self.grid.shape, GeometryError,
                 "indicator values must match the grid shape")
        _require(float(vals.min()) >= -1e-12 and float(vals.max()) <= 1.0 + 1e-12,
                 GeometryError, "indicator values must lie in [0, 1]")
        box = tuple((float(lo), float(hi)) for lo, hi in self.support_box)
        _require(len(box) == self.grid.d, GeometryError, "support box dimension mismatch")
        half = self.grid.box_side / 2.0
        for lo, hi in box:
            _require(-half - 1e-12 <= lo < hi <= half + 1e-12, GeometryError,
                     "support box must be a nonempty interval inside the torus")
        outside = np.zeros(self.grid.shape, dtype=bool)
        x = self.grid.coords_1d()
        for axis, (lo, hi) in enumerate(box):
            shape = [1] * self.grid.d
            shape[axis] = self.grid.npts
            out_1d = (x < lo - 1e-12) | (x >= hi - 1e-12)
            outside |= out_1d.reshape(shape)
        _require(float(np.max(np.abs(vals[outside]))) == 0.0 if outside.any() else True,
                 GeometryError, "indicator values must vanish outside the support box")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "support_box", box)
        object.__setattr__(self, "sup_gradient_bound", float(self.sup_gradient_bound))

    def site_vector(self):
        return self.values.ravel()

    def fiber_vector(self, n):
        """Diagonal of the multiplication matrix on the full fiber space."""
        return np.repeat(self.values.ravel(), n)

    def multiplication_matrix(self, n):
        return np.diag(self.fiber_vector(n).astype(complex))


def _discrete_gradient_bound(grid, values):
    g = 0.0
    for axis in range(grid.d):
        d1 = np.roll(values, -1, axis=axis) - values
        g = max(g, float(np.max(np.abs(d1))) / grid.h)
    return g


def _smoothstep(v):
    v = np.clip(v, 0.0, 1.0)
    return v * v * (3.0 - 2.0 * v)


def box_indicator(grid, lo, hi):
    """Sharp indicator of the half-open box [lo, hi)."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.d,))
    x = grid.coords_1d()
    vals = np.ones(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.npts
        inside = (x >= lo[axis] - 1e-12) & (x < hi[axis] - 1e-12)
        vals = vals * inside.astype(float).reshape(shape)
    return IndicatorField(grid, vals, tuple(zip(lo, hi)), False,
                          _discrete_gradient_bound(grid, vals))


def smooth_box_indicator(grid, lo, hi, ramp):
    """C^1 cutoff: 1 on [lo+ramp, hi-ramp], 0 outside [lo, hi), cubic ramps."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.d,))
    _require(ramp > 0, GeometryError, "ramp width must be positive")
    for a in range(grid.d):
        _require(hi[a] - lo[a] > 2 * ramp, GeometryError,
                 "box too small for the requested ramp width")
    x = grid.coords_1d()
    vals = np.ones(grid.shape)
    for axis in range(grid.d):
        rise = _smoothstep((x - lo[axis]) / ramp)
        fall = _smoothstep((hi[axis] - x) / ramp)
        prof = np.minimum(rise, fall)
        prof[(x < lo[axis]) | (x >= hi[axis])] = 0.0
        shape = [1] * grid.d
        shape[axis] = grid.npts
        vals = vals * prof.reshape(shape)
    return IndicatorField(grid, vals, tuple(zip(lo, hi)), True,
                          _discrete_gradient_bound(grid, vals))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Finite Hermitian matrix realizing an operator on a periodic grid."""

    matrix: np.ndarray
    grid: Grid
    fiber_n: int
    backend: str
    hermitian: bool = True

    def __post_init__(self):
        _require(self.backend in BACKENDS, PreconditionError,
                 "unknown backend %r" % (self.backend,))
        m = np.asarray(self.matrix)
        dim = self.fiber_n * self.grid.size
        _require(m.shape == (dim, dim), GeometryError,
                 "matrix dimension must equal fiber_n * npts^d")
        if self.hermitian:
            scale = float(np.max(np.abs(m)))
            dev = float(np.max(np.abs(m - m.conj().T)))
            _require(dev <= HERMITICITY_TOL * max(scale, 1e-300), PreconditionError,
                     "matrix fails the Hermiticity tolerance")
        if isinstance(self.matrix, np.ndarray):
            self.matrix.setflags(write=False)

    @property
    def dim(self):
        return self.fiber_n * self.grid.size


def _dft_1d(grid):
    x = grid.coords_1d()
    p = grid.freqs_1d()
    return np.exp(-1j * np.outer(p, x)) / np.sqrt(grid.npts)


def _momentum_1d(grid, backend):
    """One-dimensional momentum operator for the chosen backend."""
    N = grid.npts
    if backend == FOURIER:
        F = _dft_1d(grid)
        return F.conj().T @ (grid.freqs_1d()[:, None] * F)
    if backend == FINITE_DIFFERENCE:
        shift_up = np.roll(np.eye(N), 1, axis=1)      # psi(x + h)
        shift_dn = np.roll(np.eye(N), -1, axis=1)     # psi(x - h)
        return (-1j) * (shift_up - shift_dn) / (2.0 * grid.h)
    raise PreconditionError("unknown backend %r" % (backend,))


def _axis_matrix(grid, one_dim, axis):
    out = None
    for a in range(grid.d):
        block = one_dim if a == axis else np.eye(grid.npts)
        out = block if out is None else np.kron(out, block)
    return out


def build_free_dirac(symbol, grid, backend):
    """Discretization of sigma . (-i grad) with periodic boundary."""
    _require(grid.d == symbol.d, GeometryError, "grid and symbol dimension mismatch")
    dim = symbol.n * grid.size
    H = np.zeros((dim, dim), dtype=complex)
    for axis in range(grid.d):
        P = _momentum_1d(grid, backend)
        H += np.kron(_axis_matrix(grid, P, axis), symbol.sigmas[axis])
    return DiscreteOperator(H, grid, symbol.n, backend)


def _block_scale_left(field, mat, n):
    """(block-diagonal field) @ mat for a per-site (n, n) field."""
    m = mat.shape[0]
    size = m // n
    r = mat.reshape(size, n, m)
    return np.einsum("sab,sbm->sam", field, r).reshape(m, m)


def _block_scale_right(mat, field, n):
    m = mat.shape[0]
    size = m // n
    r = mat.reshape(m, size, n)
    return np.einsum("msb,sba->msa", r, field).reshape(m, m)


def add_block_diagonal(matrix, field, n):
    """In-place add of a per-site (n, n) field to the block diagonal."""
    m = matrix.shape[0]
    size = m // n
    view = matrix.reshape(size, n, size, n)
    idx = np.arange(size)
    view[idx, :, idx, :] += field
    return matrix


def build_background_operator(symbol, grid, background, backend):
    """coeff * (free Dirac) * coeff + periodic potential, as a dense matrix."""
    _require(background.n == symbol.n, GeometryError, "fiber dimension mismatch")
    _require(background.d == symbol.d, GeometryError, "background dimension mismatch")
    _require(background.coeff_lower > 0.0, GeometryError,
             "coefficient field must have a positive lower bound")
    free = build_free_dirac(symbol, grid, backend)
    S = background.coeff_on(grid)
    V = background.potential_on(grid)
    n = symbol.n
    H = _block_scale_left(S, _block_scale_right(free.matrix, S, n), n)
    H = add_block_diagonal(H, V, n)
    return DiscreteOperator(H, grid, n, backend)


def commutator_with_cutoff(op, cutoff):
    """op @ M_chi - M_chi @ op for a smooth scalar cutoff chi."""
    _require(cutoff.smooth, PreconditionError, "cutoff must be smooth")
    _require(cutoff.grid.shape == op.grid.shape
             and cutoff.grid.box_side == op.grid.box_side,
             GeometryError, "cutoff grid does not match the operator grid")
    chi = cutoff.fiber_vector(op.fiber_n)
    return op.matrix * chi[None, :] - chi[:, None] * op.matrix


def dump_matrix(matrix, path):
    """Text dump: row-major, complex entries as re+imi, one row per line."""
    m = np.asarray(matrix, dtype=complex)
    with open(path, "w") as fh:
        for row in m:
            fh.write(" ".join("%.17e%+.17ei" % (v.real, v.imag) for v in row))
            fh.write("\n")


def load_matrix(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([complex(tok[:-1] + "j") for tok in line.split()])
    return np.array(rows, dtype=complex)
