import numpy as np
import pytest

from diracdos.disorder import (
    DisorderModel,
    DisorderRealization,
    assemble_potential,
    build_disordered_operator,
    build_periodic_restriction,
    lattice_indices,
    sample_realization,
)
from diracdos.errors import ConfigError, GeometryError, PreconditionError
from diracdos.models import get_model
from diracdos.operators import FOURIER, Grid, build_background_operator


def default_model(d=1, **kw):
    return DisorderModel(d=d, fiber_n=2, **kw)


class TestLattice:
    def test_1d_counts(self):
        assert lattice_indices(1, 8).shape == (7, 1)
        assert lattice_indices(1, 7).shape == (7, 1)
        assert lattice_indices(1, 3).shape == (3, 1)

    def test_strict_interior(self):
        idx = lattice_indices(1, 8)[:, 0]
        assert idx.min() == -3 and idx.max() == 3

    def test_2d_product(self):
        idx = lattice_indices(2, 5)
        assert idx.shape == (25, 2)
        # Lexicographic order is part of the contract.
        assert np.array_equal(idx, idx[np.lexsort(idx.T[::-1])])


class TestModelValidation:
    def test_zero_outside_interval(self):
        with pytest.raises(ConfigError):
            default_model(coupling_min=0.5, coupling_max=1.0)

    def test_degenerate_law(self):
        with pytest.raises(ConfigError):
            default_model(coupling_min=0.0, coupling_max=0.0)

    def test_radius_bounds(self):
        with pytest.raises(ConfigError):
            default_model(displacement_radius=0.5)
        with pytest.raises(ConfigError):
            default_model(displacement_radius=0.0)

    def test_unknown_law(self):
        with pytest.raises(ConfigError):
            default_model(law="cauchy")

    def test_sup_bound_1d(self):
        m = default_model()
        # amplitude 2, unit profile sup, five unit cells can reach a point
        assert m.sup_bound == pytest.approx(10.0)


class TestSampling:
    def test_deterministic(self):
        m = default_model()
        a = sample_realization(m, 8, seed=11)
        b = sample_realization(m, 8, seed=11)
        assert np.array_equal(a.couplings, b.couplings)
        assert np.array_equal(a.displacements, b.displacements)

    def test_seed_sensitivity(self):
        m = default_model()
        a = sample_realization(m, 8, seed=11)
        b = sample_realization(m, 8, seed=12)
        assert not np.array_equal(a.couplings, b.couplings)

    def test_ranges(self):
        m = default_model()
        r = sample_realization(m, 16, seed=0)
        assert np.all(r.couplings >= 0.0) and np.all(r.couplings <= 1.0)
        assert np.all(np.linalg.norm(r.displacements, axis=1) <= m.displacement_radius)

    def test_uniform_moments(self):
        m = default_model()
        draws = []
        for seed in range(100):
            draws.append(sample_realization(m, 101, seed=seed).couplings)
        lam = np.concatenate(draws)
        assert lam.size >= 10_000
        assert abs(lam.mean() - 0.5) < 0.02
        assert abs(lam.var() - 1.0 / 12.0) < 0.005

    def test_triangular_moments(self):
        m = default_model(law="triangular")
        lam = np.concatenate(
            [sample_realization(m, 101, seed=s).couplings for s in range(40)])
        assert abs(lam.mean() - 0.5) < 0.02
        assert abs(lam.var() - 1.0 / 24.0) < 0.005

    def test_site_independence_proxy(self):
        m = default_model()
        cols = np.empty((10_000, 3))
        for seed in range(10_000):
            cols[seed] = sample_realization(m, 4, seed=seed).couplings
        c = np.corrcoef(cols.T)
        off = c[~np.eye(3, dtype=bool)]
        assert np.max(np.abs(off)) < 0.05

    def test_restriction_matches_fresh_sample(self):
        m = default_model()
        big = sample_realization(m, 32, seed=5)
        small = sample_realization(m, 16, seed=5)
        cut = big.restrict(16)
        assert np.array_equal(cut.indices, small.indices)
        assert np.array_equal(cut.couplings, small.couplings)
        assert np.array_equal(cut.displacements, small.displacements)

    def test_json_roundtrip(self):
        m = default_model(d=2)
        r = sample_realization(m, 6, seed=3)
        s = r.to_json()
        back = DisorderRealization.from_json(s)
        assert back.seed == r.seed and back.box_side == r.box_side
        assert np.array_equal(back.indices, r.indices)
        assert np.array_equal(back.couplings, r.couplings)
        assert np.array_equal(back.displacements, r.displacements)


class TestCyclicShift:
    def test_identity_shift(self):
        m = default_model()
        r = sample_realization(m, 7, seed=2)
        s = r.cyclic_shift(0)
        assert np.array_equal(s.couplings, r.couplings)

    def test_shift_permutes_data(self):
        m = default_model()
        r = sample_realization(m, 7, seed=2)
        s = r.cyclic_shift(2)
        assert np.array_equal(np.sort(s.couplings), np.sort(r.couplings))
        assert not np.array_equal(s.couplings, r.couplings)

    def test_even_side_rejected(self):
        m = default_model()
        r = sample_realization(m, 8, seed=2)
        with pytest.raises(PreconditionError):
            r.cyclic_shift(1)


class TestPotentialAssembly:
    def test_single_impurity_reproduces_profile(self):
        m = default_model()
        grid = Grid.regular(1, 8, 8)
        r = DisorderRealization(
            box_side=8,
            indices=np.array([[0]]),
            couplings=np.array([1.0]),
            displacements=np.array([[0.0]]),
            seed=0,
        )
        V = assemble_potential(r, grid, m)
        x = grid.coords_1d()
        want = m.amplitude * m.profile_fn()(x[:, None])
        assert np.allclose(V[:, 0, 0].real, want, atol=1e-12)
        assert np.allclose(V[:, 0, 0], V[:, 1, 1])
        assert np.allclose(V[:, 0, 1], 0.0)

    def test_two_impurities_superpose(self):
        m = default_model()
        grid = Grid.regular(1, 8, 8)

        def one(center, lam):
            return assemble_potential(
                DisorderRealization(8, np.array([[center]]), np.array([lam]),
                                    np.array([[0.0]]), 0), grid, m)

        both = assemble_potential(
            DisorderRealization(8, np.array([[0], [1]]), np.array([0.3, 0.9]),
                                np.array([[0.0], [0.0]]), 0), grid, m)
        assert np.allclose(both, one(0, 0.3) + one(1, 0.9), atol=1e-12)

    def test_displacement_snaps_to_grid(self):
        m = default_model()
        grid = Grid.regular(1, 8, 8)
        r = DisorderRealization(8, np.array([[0]]), np.array([1.0]),
                                np.array([[0.22]]), 0)
        V = assemble_potential(r, grid, m)
        x = grid.coords_1d()
        peak = x[np.argmax(V[:, 0, 0].real)]
        assert peak == pytest.approx(0.25)

    def test_wraps_around_torus(self):
        m = default_model()
        grid = Grid.regular(1, 8, 8)
        edge = (8 - 1) // 2  # site 3, profile reaches past the seam at 4
        r = DisorderRealization(8, np.array([[edge]]), np.array([1.0]),
                                np.array([[0.2]]), 0)
        V = assemble_potential(r, grid, m)
        x = grid.coords_1d()
        left_tail = V[x < -3.5, 0, 0].real
        assert np.max(left_tail) > 0.0

    def test_nonnegative_and_bounded(self):
        m = default_model()
        grid = Grid.regular(1, 16, 8)
        for seed in range(10):
            r = sample_realization(m, 16, seed=seed)
            V = assemble_potential(r, grid, m)
            diag = V[:, 0, 0].real
            assert np.min(diag) >= 0.0
            assert np.max(diag) <= m.sup_bound + 1e-9

    def test_translation_covariance_odd_torus(self):
        m = default_model()
        grid = Grid.regular(1, 7, 8)
        r = sample_realization(m, 7, seed=4)
        shifted = assemble_potential(r.cyclic_shift(1), grid, m)
        rolled = np.roll(assemble_potential(r, grid, m), 8, axis=0)
        assert np.allclose(shifted, rolled, atol=1e-12)


class TestDisorderedOperator:
    def test_zero_coupling_reduces_to_clean(self):
        model = get_model("dirac1d")
        dm = model.disorder()
        grid = Grid.regular(1, 8, 8)
        r = sample_realization(dm, 8, seed=1)
        zero = DisorderRealization(r.box_side, r.indices,
                                   np.zeros_like(r.couplings),
                                   r.displacements, r.seed)
        H = build_disordered_operator(model.symbol(), model.background(8),
                                      dm, zero, grid, FOURIER)
        H0 = build_background_operator(model.symbol(), grid,
                                       model.background(8), FOURIER)
        assert np.array_equal(H.matrix, H0.matrix)

    def test_nonnegative_bump_lifts_spectrum(self):
        model = get_model("dirac1d")
        dm = model.disorder()
        grid = Grid.regular(1, 8, 8)
        r = sample_realization(dm, 8, seed=7)
        H = build_disordered_operator(model.symbol(), model.background(8),
                                      dm, r, grid, FOURIER)
        H0 = build_background_operator(model.symbol(), grid,
                                       model.background(8), FOURIER)
        lo = np.linalg.eigvalsh(H.matrix)[0]
        lo0 = np.linalg.eigvalsh(H0.matrix)[0]
        assert lo >= lo0 - 1e-10

    def test_some_realizations_enter_gap(self):
        model = get_model("dirac1d")
        dm = model.disorder()
        grid = Grid.regular(1, 16, 8)
        hits = 0
        for seed in range(60):
            r = sample_realization(dm, 16, seed=seed)
            H = build_disordered_operator(model.symbol(), model.background(8),
                                          dm, r, grid, FOURIER)
            vals = np.linalg.eigvalsh(H.matrix)
            if np.any((vals > -1 + 1e-9) & (vals < 1 - 1e-9)):
                hits += 1
        assert hits > 0

    def test_periodic_restriction_shape_and_coupling(self):
        model = get_model("dirac1d")
        dm = model.disorder()
        big = sample_realization(dm, 32, seed=9)
        H16 = build_periodic_restriction(
            model.symbol(), model.background(8), dm, big, 16, FOURIER)
        grid16 = H16.grid
        assert grid16.box_side == 16
        assert H16.dim == 2 * grid16.npts
        # Same operator as sampling at 16 directly: the streams are site-keyed.
        small = sample_realization(dm, 16, seed=9)
        direct = build_disordered_operator(model.symbol(), model.background(8),
                                           dm, small, grid16, FOURIER)
        assert np.array_equal(H16.matrix, direct.matrix)

    def test_restriction_larger_than_ambient_rejected(self):
        model = get_model("dirac1d")
        dm = model.disorder()
        r = sample_realization(dm, 8, seed=0)
        with pytest.raises(GeometryError):
            build_periodic_restriction(model.symbol(), model.background(8),
                                       dm, r, 16, FOURIER)
