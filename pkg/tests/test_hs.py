import numpy as np
import pytest

from diracdos.bumps import make_bump
from diracdos.errors import PreconditionError, QuadratureBudgetError
from diracdos.hs_calculus import (
    AlmostAnalyticExtension,
    QuadratureSpec,
    build_extension,
    build_quadrature,
    finite_volume_replacement,
    hs_apply,
    hs_scalar,
    truncation_tail,
)
from diracdos.models import get_model
from diracdos.operators import FOURIER, Grid, build_background_operator
from diracdos.spectral import eigen_hermitian


def random_hermitian(dim, seed, radius=5.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    a = (a + a.conj().T) / 2
    return a * (radius / np.abs(np.linalg.eigvalsh(a)).max())


def eigen_oracle(A, fn):
    data = eigen_hermitian(A)
    return (data.eigenvectors * fn(data.eigenvalues)[None, :]) @ data.eigenvectors.conj().T


class TestExtension:
    def test_boundary_value_is_phi(self):
        b = make_bump(-2.0, 2.0)
        ext = build_extension(b, 4)
        x = np.linspace(-3.0, 3.0, 301)
        vals = ext.extension(x, np.zeros(x.size))
        assert np.max(np.abs(vals.imag)) == 0.0
        assert np.max(np.abs(vals.real - b(x))) == 0.0

    def test_support_box(self):
        b = make_bump(-1.0, 1.0)
        ext = build_extension(b, 3)
        x_out = np.array([-1.5, 1.5, 3.0])
        assert np.all(ext.extension(x_out, np.full(3, 0.1)) == 0.0)
        x_in = np.linspace(-0.9, 0.9, 11)
        high = np.full(x_in.size, 2.0 * ext.delta + 1e-9)
        assert np.all(ext.extension(x_in, high) == 0.0)
        assert np.all(ext.dbar(x_in, high) == 0.0)

    def test_dbar_order_scaling(self):
        # near-axis decay exponent tracks the extension order
        b = make_bump(-4.0, 4.0, max_order=8)
        x = np.linspace(-4.0, 4.0, 801)
        slopes = []
        for order in (2, 3, 4, 5, 6):
            ext = build_extension(b, order)
            ys = np.logspace(-4, -1, 7) * ext.delta
            sup = [np.max(np.abs(ext.dbar(x, np.full(x.size, y)))) for y in ys]
            slopes.append(np.polyfit(np.log(ys), np.log(sup), 1)[0])
        for order, slope in zip((2, 3, 4, 5, 6), slopes):
            assert slope >= order - 0.1
        assert np.all(np.diff(slopes) > 0)

    def test_dbar_conjugate_symmetry(self):
        b = make_bump(0.0, 3.0, family="poly_bump")
        ext = build_extension(b, 4)
        x = np.linspace(0.1, 2.9, 41)
        up = ext.dbar(x, np.full(x.size, 0.7 * ext.delta))
        dn = ext.dbar(x, np.full(x.size, -0.7 * ext.delta))
        assert np.max(np.abs(dn - up.conj())) < 1e-15
        # and in the cutoff band, where the second term is active
        up = ext.dbar(x, np.full(x.size, 1.5 * ext.delta))
        dn = ext.dbar(x, np.full(x.size, -1.5 * ext.delta))
        assert np.max(np.abs(dn - up.conj())) < 1e-15

    def test_validation(self):
        b = make_bump(-1.0, 1.0, max_order=4)
        with pytest.raises(PreconditionError):
            AlmostAnalyticExtension(b, 1, 0.25)
        with pytest.raises(PreconditionError):
            AlmostAnalyticExtension(b, 4, 0.25)  # needs order 5 derivatives
        with pytest.raises(PreconditionError):
            AlmostAnalyticExtension(b, 3, 0.0)


class TestQuadrature:
    def test_scalar_accuracy(self):
        b = make_bump(-4.2, 3.8)
        ext = build_extension(b, 4)
        lams = np.linspace(-5.0, 5.0, 801)
        got = hs_scalar(ext, lams)
        assert np.max(np.abs(got - b(lams))) < 1e-7

    def test_scale_covariance(self):
        # same relative error after dilating the support by 8x
        wide = build_extension(make_bump(-4.0, 4.0), 4)
        narrow = build_extension(make_bump(-0.5, 0.5), 4)
        lw = np.linspace(-4.5, 4.5, 201)
        ln = lw / 8.0
        err_w = np.max(np.abs(hs_scalar(wide, lw) - wide.bump(lw)))
        err_n = np.max(np.abs(hs_scalar(narrow, ln) - narrow.bump(ln)))
        assert err_n < 10 * err_w + 1e-9

    def test_node_budget_enforced(self):
        ext = build_extension(make_bump(-1.0, 1.0), 4)
        with pytest.raises(QuadratureBudgetError):
            build_quadrature(ext, QuadratureSpec(max_nodes=100))

    def test_tail_tolerance_enforced(self):
        ext = build_extension(make_bump(-1.0, 1.0), 2)
        spec = QuadratureSpec(y_min_factor=0.5, tolerance=1e-12)
        assert truncation_tail(ext, spec) > 1e-12
        with pytest.raises(QuadratureBudgetError):
            build_quadrature(ext, spec)

    def test_spec_validation(self):
        with pytest.raises(PreconditionError):
            QuadratureSpec(y_min_factor=2.0)
        with pytest.raises(PreconditionError):
            QuadratureSpec(x_growth=0.9)
        with pytest.raises(PreconditionError):
            QuadratureSpec(tolerance=0.0)


class TestMatrixFunction:
    def test_scalar_matrix(self):
        b = make_bump(1.0, 3.0)
        ext = build_extension(b, 4)
        M = hs_apply(np.array([[2.0 + 0j]]), ext)
        assert abs(M[0, 0] - 1.0) < 1e-6

    def test_diagonal_example(self):
        b = make_bump(0.0, 1.0)
        ext = build_extension(b, 4)
        M = hs_apply(np.diag([-3.0, 0.5]).astype(complex), ext)
        assert abs(M[0, 0]) < 1e-6
        assert abs(M[1, 1] - b(np.array([0.5]))[0]) < 1e-6
        assert abs(M[0, 1]) < 1e-6

    def test_gap_bump_annihilates_clean_operator(self):
        model = get_model("dirac1d")
        grid = Grid.regular(1, 8, 8)
        H = build_background_operator(model.symbol(), grid,
                                      model.background(8), FOURIER)
        ext = build_extension(make_bump(-0.8, 0.8), 4)
        M = hs_apply(H, ext)
        assert np.linalg.norm(M, 2) <= 1e-8

    def test_agrees_with_eigen_route(self):
        b = make_bump(-3.5, 2.5, family="plateau", ramp=1.5)
        ext = build_extension(b, 4)
        A = random_hermitian(120, 3)
        M = hs_apply(A, ext)
        ref = eigen_oracle(A, lambda lam: b(lam))
        assert np.max(np.abs(M - ref)) < 1e-6

    def test_hermitian_output_and_range(self):
        b = make_bump(-2.0, 4.0, family="poly_bump")
        ext = build_extension(b, 4)
        A = random_hermitian(80, 5)
        M = hs_apply(A, ext)
        assert np.max(np.abs(M - M.conj().T)) == 0.0
        vals = np.linalg.eigvalsh(M)
        assert vals.min() >= -1e-6
        assert vals.max() <= 1.0 + 1e-6

    def test_structured_path_matches_fallback(self):
        b = make_bump(-3.0, 3.0)
        ext = build_extension(b, 4)
        A = random_hermitian(40, 7)
        fast = hs_apply(A, ext)
        slow = hs_apply(A, ext, force_fallback=True)
        assert np.max(np.abs(fast - slow)) < 1e-9

    def test_rejects_non_hermitian(self):
        ext = build_extension(make_bump(-1.0, 1.0), 4)
        bad = np.zeros((3, 3), dtype=complex)
        bad[0, 1] = 1.0
        with pytest.raises(PreconditionError):
            hs_apply(bad, ext)


class TestFiniteVolumeComparison:
    def test_single_instance(self):
        model = get_model("dirac1d")
        ext = build_extension(make_bump(0.7, 1.3), 4)
        out = finite_volume_replacement(model.symbol(), model.background(4),
                                        model.disorder(), ext, 8,
                                        seed=2, points_per_cell=4)
        assert out.ambient_side == 8 + 15 + 5
        assert out.window_average >= 0.0
        assert out.periodic_average >= 0.0
        assert np.isfinite(out.difference)

    def test_hs_mode_matches_eigen_mode(self):
        model = get_model("dirac1d")
        ext = build_extension(make_bump(0.7, 1.3), 4)
        kw = dict(pad=2, ambient_side=15, seed=4, points_per_cell=4)
        a = finite_volume_replacement(model.symbol(), model.background(4),
                                      model.disorder(), ext, 8, mode="eigen", **kw)
        b = finite_volume_replacement(model.symbol(), model.background(4),
                                      model.disorder(), ext, 8, mode="hs", **kw)
        assert abs(a.window_average - b.window_average) < 2e-6
        assert a.periodic_average == b.periodic_average

    def test_ambient_margin_enforced(self):
        model = get_model("dirac1d")
        ext = build_extension(make_bump(0.7, 1.3), 4)
        with pytest.raises(PreconditionError):
            finite_volume_replacement(model.symbol(), model.background(4),
                                      model.disorder(), ext, 8,
                                      pad=15, ambient_side=20)
