import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odil import Field, Grid, IndexSet, eval_on_grid, load_field, norm, save_field


def wave_exact(x, t):
    # standing-wave sum: solves u_tt = u_xx exactly
    u = 0.0
    for k in range(1, 6):
        u = u + np.cos((x - t + 0.5) * np.pi * k) + np.cos((x + t + 0.5) * np.pi * k)
    return u / 10.0


class TestGridBasics:
    def test_spacing_node(self):
        g = Grid(dims=(5,), lo=(0.0,), hi=(1.0,), centering="node")
        assert g.spacing == (0.25,)
        assert np.allclose(g.axis_coords(0), [0, 0.25, 0.5, 0.75, 1.0])

    def test_spacing_cell(self):
        g = Grid(dims=(4,), lo=(0.0,), hi=(1.0,), centering="cell")
        assert g.spacing == (0.25,)
        assert np.allclose(g.axis_coords(0), [0.125, 0.375, 0.625, 0.875])

    def test_invalid_grids(self):
        with pytest.raises(ValueError):
            Grid(dims=(1,), lo=(0.0,), hi=(1.0,), centering="node")
        with pytest.raises(ValueError):
            Grid(dims=(4,), lo=(1.0,), hi=(0.0,))
        with pytest.raises(ValueError):
            Grid(dims=(2, 2, 2, 2), lo=(0,) * 4, hi=(1,) * 4)

    def test_flat_index_examples(self):
        g33 = Grid(dims=(3, 3), lo=(0, 0), hi=(1, 1))
        assert g33.flat_index((1, 1)) == 4
        assert g33.flat_index((0, 0)) == 0
        g45 = Grid(dims=(4, 5), lo=(0, 0), hi=(1, 1))
        assert g45.flat_index((2, 3)) == 13  # 2*5 + 3

    def test_flat_index_errors_name_axis(self):
        g = Grid(dims=(3, 4), lo=(0, 0), hi=(1, 1))
        with pytest.raises(IndexError, match="axis 1"):
            g.flat_index((0, 4))
        with pytest.raises(IndexError, match="axis 0"):
            g.flat_indices(np.array([[3, 0]]))

    @given(
        dims=st.lists(st.integers(2, 7), min_size=1, max_size=3),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_flat_unflatten_round_trip(self, dims, data):
        g = Grid(dims=tuple(dims), lo=(0.0,) * len(dims), hi=(1.0,) * len(dims))
        idx = tuple(data.draw(st.integers(0, d - 1)) for d in dims)
        flat = g.flat_index(idx)
        assert g.unflatten(flat) == idx
        assert 0 <= flat < g.size


class TestNorms:
    def grid(self, n=6):
        return Grid(dims=(n,), lo=(0.0,), hi=(1.0,))

    def test_zero_field(self):
        f = Field.zeros(self.grid())
        assert norm(f, "L2") == 0.0

    def test_constant_l1(self):
        f = Field.full(self.grid(), 2.0)
        assert norm(f, "L1") == pytest.approx(2.0)

    def test_rms_two_points(self):
        g = Grid(dims=(2,), lo=(0.0,), hi=(1.0,))
        f = Field(g, np.array([3.0, 4.0]))
        assert norm(f, "L2") == pytest.approx(np.sqrt(12.5))

    def test_difference_and_homogeneity(self):
        rng = np.random.default_rng(0)
        g = self.grid(17)
        a = Field(g, rng.normal(size=17))
        assert norm(Field(g, a.values - a.values), "Linf") == 0.0
        for which in ("L1", "L2", "Linf"):
            assert norm(Field(g, -2.5 * a.values), which) == pytest.approx(
                2.5 * norm(a, which)
            )

    def test_relative_norm_and_zero_guard(self):
        g = self.grid(4)
        a = Field(g, np.full(4, 3.0))
        b = Field(g, np.full(4, 2.0))
        assert norm(a, "L2", relative_to=b) == pytest.approx(0.5)
        zero = Field.zeros(g)
        assert norm(a, "L2", relative_to=zero) == pytest.approx(3.0)

    def test_grid_mismatch(self):
        a = Field.zeros(self.grid(4))
        b = Field.zeros(self.grid(5))
        with pytest.raises(ValueError):
            norm(a, "L2", relative_to=b)


class TestEvalOnGrid:
    def test_constant(self):
        g = Grid(dims=(4, 4), lo=(0, 0), hi=(1, 1), centering="cell")
        f = eval_on_grid(g, lambda x, y: 1.0)
        assert np.all(f.values == 1.0)

    def test_wave_exact_values(self):
        g = Grid(dims=(5, 5), lo=(-1.0, 0.0), hi=(1.0, 1.0))
        f = eval_on_grid(g, wave_exact)
        # (x, t) = (0, 0) sits at multi-index (2, 0)
        assert f.values[g.flat_index((2, 0))] == pytest.approx(0.0, abs=1e-14)

    def test_wave_exact_at_half(self):
        g = Grid(dims=(5, 3), lo=(-1.0, 0.0), hi=(1.0, 1.0))
        f = eval_on_grid(g, wave_exact)
        # x = 0.5 is multi-index 3 on [-1, 1] with 5 nodes; 2*sum(cos(pi k))/10 = -0.2
        assert f.values[g.flat_index((3, 0))] == pytest.approx(-0.2)

    def test_sampled_solution_residual_second_order(self):
        # centered differences of the sampled exact solution: residual -> 0 at O(h^2)
        errs = []
        for n in (17, 33, 65):
            g = Grid(dims=(n, n), lo=(-1.0, 0.0), hi=(1.0, 1.0))
            u = eval_on_grid(g, wave_exact).reshaped()
            hx, ht = g.spacing
            utt = (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / ht**2
            uxx = (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / hx**2
            errs.append(np.max(np.abs(utt - uxx)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.4)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.4)


class TestIndexSet:
    def test_interior(self):
        g = Grid(dims=(4, 5), lo=(0, 0), hi=(1, 1))
        s = IndexSet.interior(g)
        assert len(s) == 2 * 3
        assert s.indices.min() == 1

    def test_boundary_face(self):
        g = Grid(dims=(4, 5), lo=(0, 0), hi=(1, 1))
        s = IndexSet.boundary_face(g, axis=0, side=1)
        assert len(s) == 5
        assert np.all(s.indices[:, 0] == 3)

    def test_explicit_validation(self):
        g = Grid(dims=(3, 3), lo=(0, 0), hi=(1, 1))
        with pytest.raises(ValueError):
            IndexSet.explicit(g, [(0, 3)])


class TestFieldIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        g = Grid(dims=(6, 3), lo=(0.0, -1.0), hi=(2.0, 1.0), centering="cell")
        f = Field(g, rng.normal(size=g.size))
        save_field(f, tmp_path / "state")
        back = load_field(tmp_path / "state")
        assert back.grid == g
        assert np.array_equal(back.values, f.values)
        raw = np.fromfile(tmp_path / "state.raw", dtype="<f8")
        assert np.array_equal(raw, f.values)

    def test_nonfinite_rejected(self, tmp_path):
        g = Grid(dims=(2,), lo=(0.0,), hi=(1.0,))
        f = Field(g, np.array([1.0, np.nan]))
        with pytest.raises(ValueError, match="non-finite"):
            save_field(f, tmp_path / "bad")
