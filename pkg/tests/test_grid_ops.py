import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdfamily.grid_ops import (
    DEFAULT_THETA,
    AnisotropyMap,
    Grid,
    Region,
    aniso_diffusion,
    chemotaxis_div,
    chi_theta,
    integrate_domain,
    laplacian_matrix,
    laplacian_neumann,
    neumann_eigenvalue,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def field_on(grid):
    return arrays(np.float64, grid.shape, elements=finite)


def cos_mode(grid):
    X, Y = grid.mesh()
    return np.cos(np.pi * X) * np.cos(np.pi * Y)


class TestGrid:
    def test_spacing_spans_unit_square(self):
        g = Grid(21, 11)
        assert abs((g.nx - 1) * g.dx - 1) < 1e-12
        assert abs((g.ny - 1) * g.dy - 1) < 1e-12
        assert g.shape == (11, 21)

    @pytest.mark.parametrize("nx, ny", [(2, 5), (5, 2), (0, 0)])
    def test_rejects_tiny_grids(self, nx, ny):
        with pytest.raises(ValueError):
            Grid(nx, ny)

    def test_weights_are_trapezoid(self):
        w = Grid.square(5).weights()
        h2 = 0.25 ** 2
        assert w[0, 0] == pytest.approx(h2 / 4)
        assert w[0, 2] == pytest.approx(h2 / 2)
        assert w[2, 2] == pytest.approx(h2)


class TestRegion:
    @pytest.mark.parametrize("box", [(0.5, 0.5, 0, 1), (0, 1, 0.3, 0.2), (-0.1, 1, 0, 1), (0, 1.2, 0, 1)])
    def test_invalid_boxes(self, box):
        with pytest.raises(ValueError):
            Region(*box)


class TestAnisotropy:
    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            AnisotropyMap(1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            AnisotropyMap(-1.0, 0.0, 1.0)

    def test_min_eigenvalue(self, grid21):
        assert AnisotropyMap(2.0, 0.0, 1.0).min_eigenvalue(grid21) == pytest.approx(1.0)
        assert AnisotropyMap(2.0, 1.0, 2.0).min_eigenvalue(grid21) == pytest.approx(1.0)


class TestLaplacian:
    def test_constant_in_kernel(self, grid21):
        assert np.max(np.abs(laplacian_neumann(grid21.full(3.7), grid21))) < 1e-12

    def test_cosine_eigenpair(self, grid21):
        f = cos_mode(grid21)
        err = np.max(np.abs(laplacian_neumann(f, grid21) + 2 * np.pi ** 2 * f))
        # Frozen from the n=21 operator (0.04055); second order, well under the 0.25 bound.
        assert err == pytest.approx(0.0405537544, rel=1e-6)
        assert err <= 0.25

    def test_discrete_eigenvalue_is_exact(self, grid21):
        f = cos_mode(grid21)
        h = grid21.dx
        lam = (2 * np.cos(np.pi * h) - 2) / h ** 2
        assert np.max(np.abs(laplacian_neumann(f, grid21) - 2 * lam * f)) < 1e-10

    def test_second_order_convergence(self):
        errs = []
        for n in (21, 41):
            g = Grid.square(n)
            f = cos_mode(g)
            errs.append(np.max(np.abs(laplacian_neumann(f, g) + 2 * np.pi ** 2 * f)))
        assert errs[0] / errs[1] >= 3.5

    def test_spike_is_conserved(self, grid21):
        f = grid21.zeros()
        f[7, 12] = 1.0
        assert abs(integrate_domain(laplacian_neumann(f, grid21), grid21)) < 1e-12

    def test_matrix_matches_operator(self, grid21):
        f = np.random.default_rng(3).standard_normal(grid21.shape)
        L = laplacian_matrix(grid21)
        assert np.allclose(L @ f.ravel(), laplacian_neumann(f, grid21).ravel(), atol=1e-9)

    def test_spectrum_of_matrix(self):
        ev = np.sort(np.linalg.eigvals(laplacian_matrix(Grid.square(21)).toarray()).real)
        assert abs(ev[-1]) < 1e-9
        assert -ev[-2] == pytest.approx(neumann_eigenvalue(21), rel=1e-10)
        assert -ev[0] == pytest.approx(3200.0, rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_linearity(self, data):
        g = Grid(7, 6)
        f = data.draw(field_on(g))
        h = data.draw(field_on(g))
        a, b = data.draw(finite), data.draw(finite)
        lhs = laplacian_neumann(a * f + b * h, g)
        rhs = a * laplacian_neumann(f, g) + b * laplacian_neumann(h, g)
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.max(np.abs(lhs)))


class TestAnisoDiffusion:
    def test_identity_reduces_to_laplacian(self, grid21):
        f = np.random.default_rng(0).random(grid21.shape)
        diff = aniso_diffusion(f, AnisotropyMap.identity(), 0.6, grid21) - 0.6 * laplacian_neumann(f, grid21)
        assert np.max(np.abs(diff)) < 1e-12

    def test_zero_coefficient(self, grid21):
        f = np.random.default_rng(1).random(grid21.shape)
        assert not np.any(aniso_diffusion(f, AnisotropyMap(2.0, 0.5, 1.0), 0.0, grid21))

    def test_rejects_negative_coefficient(self, grid21):
        with pytest.raises(ValueError):
            aniso_diffusion(grid21.zeros(), AnisotropyMap.identity(), -0.1, grid21)

    def test_rejects_indefinite_field(self, grid21):
        a12 = np.zeros(grid21.shape)
        a12[3, 3] = 5.0
        bad = object.__new__(AnisotropyMap)
        object.__setattr__(bad, "a11", 1.0)
        object.__setattr__(bad, "a12", a12)
        object.__setattr__(bad, "a22", 1.0)
        with pytest.raises(ValueError):
            aniso_diffusion(grid21.zeros(), bad, 1.0, grid21)

    def test_diagonal_tensor_converges(self):
        errs = []
        for n in (21, 41):
            g = Grid.square(n)
            X, _ = g.mesh()
            f = np.cos(np.pi * X)
            out = aniso_diffusion(f, AnisotropyMap(2.0, 0.0, 1.0), 0.7, g)
            errs.append(np.max(np.abs(out + 2 * np.pi ** 2 * 0.7 * f)))
        assert errs[0] == pytest.approx(0.0283876281, rel=1e-6)
        assert errs[0] / errs[1] >= 3.5

    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_conservative_with_cross_terms(self, data):
        g = Grid(6, 7)
        f = data.draw(field_on(g))
        X, Y = g.mesh()
        A = AnisotropyMap(1.5 + X, 0.3 * np.sin(3 * Y), 1.0 + Y)
        assert abs(integrate_domain(aniso_diffusion(f, A, 0.8, g), g)) < 1e-10 * max(1.0, np.max(np.abs(f)))


class TestChemotaxis:
    def test_constant_attractant(self, grid21):
        c = np.random.default_rng(2).random(grid21.shape)
        assert not np.any(chemotaxis_div(c, grid21.full(0.4), 3.0, grid21))

    def test_no_carrier(self, grid21):
        a = np.random.default_rng(2).random(grid21.shape)
        assert not np.any(chemotaxis_div(grid21.zeros(), a, 3.0, grid21))

    def test_constant_carrier_is_negative_laplacian(self, grid21):
        X, _ = grid21.mesh()
        a = np.cos(np.pi * X)
        out = chemotaxis_div(grid21.full(1.0), a, 1.0, grid21)
        assert np.max(np.abs(out + laplacian_neumann(a, grid21))) < 1e-10
        assert np.max(np.abs(out - np.pi ** 2 * a)) == pytest.approx(0.0202768772, rel=1e-6)

    def test_moves_cells_up_the_gradient(self, grid21):
        X, _ = grid21.mesh()
        out = chemotaxis_div(grid21.full(1.0), X, 1.0, grid21)
        assert out[:, -1].min() > 0 and out[:, 0].max() < 0

    def test_rejects_negative_sensitivity(self, grid21):
        with pytest.raises(ValueError):
            chemotaxis_div(grid21.zeros(), grid21.zeros(), -1.0, grid21)

    @settings(max_examples=40, deadline=None)
    @given(data=st.data())
    def test_conservative(self, data):
        g = Grid(7, 5)
        c = np.abs(data.draw(field_on(g)))
        a = data.draw(field_on(g))
        out = chemotaxis_div(c, a, 2.0, g)
        assert np.all(np.isfinite(out))
        assert abs(integrate_domain(out, g)) < 1e-10 * max(1.0, np.max(np.abs(out)))


class TestQuadrature:
    def test_constants(self, grid21):
        assert integrate_domain(grid21.full(1.0), grid21) == pytest.approx(1.0, abs=1e-12)
        assert integrate_domain(grid21.zeros(), grid21) == 0.0

    def test_bilinear_exact(self):
        g = Grid(9, 13)
        X, Y = g.mesh()
        assert abs(integrate_domain(X * Y, g) - 0.25) < 1e-12


class TestPortalField:
    def test_whole_domain(self, grid21):
        chi = chi_theta(grid21, Region(0, 1, 0, 1))
        assert np.max(np.abs(chi - 1.0)) < 1e-12

    def test_default_corner(self, grid21):
        chi = chi_theta(grid21, DEFAULT_THETA)
        X, Y = grid21.mesh()
        assert not np.any(chi[(X < 0.8 - 1e-9) | (Y > 0.2 + 1e-9)])
        assert np.all(chi >= 0)
        assert integrate_domain(chi, grid21) == pytest.approx(1.0, abs=1e-12)

    def test_empty_region(self, grid21):
        with pytest.raises(ValueError):
            chi_theta(grid21, Region(0.41, 0.44, 0.41, 0.44))

    @settings(max_examples=30, deadline=None)
    @given(
        x0=st.floats(0, 0.6), w=st.floats(0.15, 0.4), y0=st.floats(0, 0.6), hgt=st.floats(0.15, 0.4)
    )
    def test_normalised_for_any_box(self, x0, w, y0, hgt):
        g = Grid.square(21)
        chi = chi_theta(g, Region(x0, x0 + w, y0, y0 + hgt))
        assert integrate_domain(chi, g) == pytest.approx(1.0, abs=1e-12)
        assert chi.min() >= 0
