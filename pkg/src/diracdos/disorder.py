"""Impurity law, reproducible sampling, and the random potential field.

Couplings and displacements are drawn from per-impurity substreams of a
counter-based generator keyed by (seed, variable tag, lattice index). A
realization sampled on a large box therefore agrees with one sampled on any
smaller box at every shared lattice site, which is what couples the
restricted and ambient operators in the finite-volume experiments.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ComputeError, ConfigError, GeometryError
from .operators import DiscreteOperator, Grid, add_block_diagonal, build_background_operator

TAG_COUPLING = 0
TAG_DISPLACEMENT = 1
INDEX_OFFSET = 2 ** 31  # spawn-key entries must be nonnegative

LAWS = ("uniform", "triangular")


def _profile_cos2(x):
    """prod_j (1 + cos(pi x_j)) / 2 on [-1, 1]^d, zero outside.

    Peak value 1 at the origin; the integer translates of this profile sum
    to 1 everywhere, so equal couplings produce an exactly flat field.
    """
    x = np.asarray(x, dtype=float)
    inside = np.all(np.abs(x) <= 1.0, axis=-1)
    vals = np.prod(0.5 * (1.0 + np.cos(np.pi * np.clip(x, -1.0, 1.0))), axis=-1)
    return np.where(inside, vals, 0.0)


# name -> (evaluator, support radius, sup value)
PROFILES = {"cos2": (_profile_cos2, 1.0, 1.0)}

# Unit cells intersecting the maximal allowed single-site support [-2, 2]^d.
_CELLS_PER_DIM = 5


@dataclass(frozen=True, eq=False)
class DisorderModel:
    """Law of the impurity field.

    Couplings are i.i.d. with density supported on
    [coupling_min, coupling_max] (an interval containing 0, not reduced to
    it); displacements are i.i.d. uniform on the ball of radius
    displacement_radius < 1/2. The single-site potential is a scalar profile
    times amplitude times the fiber identity, supported in [-1, 1]^d.
    """

    d: int
    fiber_n: int
    law: str = "uniform"
    coupling_min: float = 0.0
    coupling_max: float = 1.0
    displacement_radius: float = 0.25
    profile: str = "cos2"
    amplitude: float = 2.0

    def __post_init__(self):
        if self.law not in LAWS:
            raise ConfigError("unknown coupling law %r" % (self.law,))
        if not (self.coupling_min <= 0.0 <= self.coupling_max):
            raise ConfigError("coupling support must be an interval containing 0")
        if self.coupling_max - self.coupling_min <= 0.0:
            raise ConfigError("degenerate coupling law: support reduced to {0}")
        if not (0.0 < self.displacement_radius < 0.5):
            raise ConfigError("displacement radius must lie strictly in (0, 1/2)")
        if self.profile not in PROFILES:
            raise ConfigError("unknown single-site profile %r" % (self.profile,))
        if self.amplitude <= 0.0:
            raise ConfigError("single-site amplitude must be positive")
        fn, radius, sup = PROFILES[self.profile]
        if radius > 2.0:
            raise ConfigError("single-site support must fit inside [-2, 2]^d")
        # Nonnegativity spot check of the sampled profile.
        probe = np.linspace(-radius, radius, 41)
        axes = np.meshgrid(*([probe] * self.d), indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        if float(np.min(fn(pts))) < -1e-12:
            raise ConfigError("single-site profile must be nonnegative")

    @property
    def density_sup(self):
        span = self.coupling_max - self.coupling_min
        return (1.0 / span) if self.law == "uniform" else (2.0 / span)

    @property
    def sup_bound(self):
        """Crude uniform bound on the assembled field's operator norm."""
        fn, radius, sup = PROFILES[self.profile]
        peak = max(-self.coupling_min, self.coupling_max) * self.amplitude * sup
        return peak * _CELLS_PER_DIM ** self.d

    def profile_fn(self):
        return PROFILES[self.profile][0]

    def profile_radius(self):
        return PROFILES[self.profile][1]


def lattice_indices(d, box_side):
    """Integer lattice points strictly inside the open box of the given side."""
    half = box_side / 2.0
    lim = int(math.ceil(half - 1e-12)) - 1
    if lim < 0:
        return np.zeros((0, d), dtype=int)
    ks = np.arange(-lim, lim + 1)
    axes = np.meshgrid(*([ks] * d), indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """One sampled impurity configuration on a box."""

    box_side: float
    indices: np.ndarray
    couplings: np.ndarray
    displacements: np.ndarray
    seed: int
    substreams: tuple = (("coupling", TAG_COUPLING), ("displacement", TAG_DISPLACEMENT))

    def __post_init__(self):
        idx = np.array(self.indices, dtype=int)
        lam = np.array(self.couplings, dtype=float)
        xi = np.array(self.displacements, dtype=float)
        count = idx.shape[0]
        if idx.ndim != 2 or lam.shape != (count,) or xi.shape != (count, idx.shape[1]):
            raise GeometryError("inconsistent realization array shapes")
        for a in (idx, lam, xi):
            a.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "couplings", lam)
        object.__setattr__(self, "displacements", xi)

    @property
    def d(self):
        return self.indices.shape[1]

    @property
    def count(self):
        return self.indices.shape[0]

    def restrict(self, box_side):
        """Keep only impurities indexed inside the smaller open box."""
        if box_side > self.box_side + 1e-12:
            raise GeometryError("cannot restrict to a larger box")
        lim = int(math.ceil(box_side / 2.0 - 1e-12)) - 1
        mask = np.all(np.abs(self.indices) <= lim, axis=1)
        return DisorderRealization(float(box_side), self.indices[mask],
                                   self.couplings[mask], self.displacements[mask],
                                   self.seed, self.substreams)

    def cyclic_shift(self, gamma):
        """Torus translation of the impurity data by an integer vector.

        Requires an odd box side: only then is the open-box index set a full
        set of residues mod the side, so shifting permutes it. The shifted
        realization is no longer derivable from its seed; it exists for
        covariance tests.
        """
        L = int(round(self.box_side))
        if abs(self.box_side - L) > 1e-12 or L % 2 == 0:
            raise GeometryError("cyclic shifts need an odd integer box side")
        gamma = np.asarray(gamma, dtype=int).reshape(1, self.d)
        k = (L - 1) // 2
        shifted = ((self.indices + gamma + k) % L) - k
        order = np.lexsort(shifted.T[::-1])
        return DisorderRealization(self.box_side, shifted[order],
                                   self.couplings[order], self.displacements[order],
                                   self.seed, self.substreams)

    def to_json(self):
        doc = {
            "seed": int(self.seed),
            "box_side": float(self.box_side),
            "indices": self.indices.tolist(),
            "couplings": self.couplings.tolist(),
            "displacements": self.displacements.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(doc["box_side"], np.array(doc["indices"], dtype=int),
                   np.array(doc["couplings"], dtype=float),
                   np.array(doc["displacements"], dtype=float), doc["seed"])


def _substream(seed, tag, index):
    key = (int(tag),) + tuple(int(c) + INDEX_OFFSET for c in index)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def _draw_coupling(model, rng):
    lo, hi = model.coupling_min, model.coupling_max
    if model.law == "uniform":
        return lo + (hi - lo) * rng.random()
    return rng.triangular(lo, 0.5 * (lo + hi), hi)


def _draw_displacement(model, rng):
    R = model.displacement_radius
    while True:
        v = rng.uniform(-R, R, size=model.d)
        if float(np.dot(v, v)) <= R * R:
            return v


def sample_realization(model, box_side, seed):
    """Deterministic draw of all impurity data on the open box.

    Each lattice site gets its own substreams, so the draw at a site does
    not depend on the box side.
    """
    if box_side <= 0:
        raise GeometryError("box side must be positive")
    idx = lattice_indices(model.d, box_side)
    lam = np.empty(idx.shape[0])
    xi = np.empty((idx.shape[0], model.d))
    for row, site in enumerate(idx):
        lam[row] = _draw_coupling(model, _substream(seed, TAG_COUPLING, site))
        xi[row] = _draw_displacement(model, _substream(seed, TAG_DISPLACEMENT, site))
    return DisorderRealization(float(box_side), idx, lam, xi, int(seed))


def assemble_potential(realization, grid, model):
    """Sum of shifted single-site potentials, shape (grid.size, n, n).

    Displacements are snapped to the nearest grid point, so the profile is
    always evaluated on its precomputed grid footprint and the assembled
    field stays exactly nonnegative for nonnegative couplings.
    """
    if grid.d != model.d or realization.d != model.d:
        raise GeometryError("dimension mismatch between grid, model and realization")
    if grid.box_side + 1e-12 < realization.box_side:
        raise GeometryError("grid box must cover the realization box")
    h = grid.h
    N = grid.npts
    reach = int(math.floor(model.profile_radius() / h + 1e-9))
    offsets = np.arange(-reach, reach + 1)
    axes = np.meshgrid(*([offsets * h] * grid.d), indexing="ij")
    footprint = model.profile_fn()(np.stack(axes, axis=-1)) * model.amplitude

    scalar = np.zeros(grid.shape)
    origin = -grid.box_side / 2.0
    for site, lam, xi in zip(realization.indices, realization.couplings,
                             realization.displacements):
        center = np.round((site + xi - origin) / h).astype(int)
        target = [(center[a] + offsets) % N for a in range(grid.d)]
        scalar[np.ix_(*target)] += lam * footprint

    sup = float(np.max(np.abs(scalar)))
    if sup > model.sup_bound + 1e-9:
        raise ComputeError("assembled field exceeds its declared uniform bound")
    eye = np.eye(model.fiber_n, dtype=complex)
    return scalar.reshape(grid.size, 1, 1) * eye


def build_disordered_operator(symbol, background, model, realization, grid, backend):
    """Background operator plus the realized impurity potential."""
    if model.fiber_n != symbol.n:
        raise GeometryError("fiber dimension mismatch between model and symbol")
    base = build_background_operator(symbol, grid, background, backend)
    field = assemble_potential(realization, grid, model)
    H = base.matrix.copy()
    add_block_diagonal(H, field, symbol.n)
    return DiscreteOperator(H, grid, symbol.n, backend)


def build_periodic_restriction(symbol, background, model, realization, sub_box_side,
                               backend, points_per_cell=8):
    """Operator on the torus of side sub_box_side, impurities restricted.

    Only impurities indexed in the open sub-box enter; the sub-box side must
    be an integer (the background period is 1) no larger than the ambient
    realization box.
    """
    Ls = int(round(sub_box_side))
    if abs(sub_box_side - Ls) > 1e-12 or Ls < 1:
        raise GeometryError("sub-box side must be a positive integer multiple of the period")
    if sub_box_side > realization.box_side + 1e-12:
        raise GeometryError("sub-box side exceeds the ambient box side")
    grid = Grid.regular(symbol.d, Ls, points_per_cell)
    return build_disordered_operator(symbol, background, model,
                                     realization.restrict(Ls), grid, backend)
