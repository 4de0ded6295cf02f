import numpy as np
import pytest

from odil import (
    Field,
    Grid,
    IndexSet,
    NonFiniteResidualError,
    Problem,
    ResidualBlock,
    eval_on_grid,
    known,
    unknown,
)

from test_grid import wave_exact


def wave_exact_ut(x, t):
    u = 0.0
    for k in range(1, 6):
        u = u + np.pi * k * (
            np.sin((x - t + 0.5) * np.pi * k) - np.sin((x + t + 0.5) * np.pi * k)
        )
    return u / 10.0


def point_problem(g_value=3.0):
    """Single unknown at one point with residual u - g."""
    g = Grid(dims=(1,), lo=(0.0,), hi=(1.0,), centering="cell")
    u = unknown("u")
    gk = known("g")
    block = ResidualBlock(u(0) - gk(0), IndexSet.box(g, [0], [0]), {"u": g, "g": g}, name="data")
    return Problem(
        fields={"u": g},
        blocks=[block],
        knowns={"g": Field(g, np.array([g_value]))},
    )


def wave_problem(nx=9, nt=8):
    """Space-time wave equation as residual blocks, boundary data from the
    closed-form reference."""
    g = Grid(dims=(nx, nt), lo=(-1.0, 0.0), hi=(1.0, 1.0))
    hx, ht = g.spacing
    u = unknown("u")
    gk = known("g")
    interior = ResidualBlock(
        (u(0, 1) - 2 * u(0, 0) + u(0, -1)) / ht**2
        - (u(1, 0) - 2 * u(0, 0) + u(-1, 0)) / hx**2,
        IndexSet.interior(g),
        {"u": g},
        name="interior",
    )
    edges = np.concatenate(
        [
            IndexSet.boundary_face(g, 0, 0).indices,
            IndexSet.boundary_face(g, 0, 1).indices,
            IndexSet.box(g, [1, 0], [nx - 2, 0]).indices,
        ]
    )
    bc = ResidualBlock(
        u(0, 0) - gk(0, 0), IndexSet(g, edges), {"u": g, "g": g}, name="bc"
    )
    # second time layer pinned through the one-sided velocity constraint,
    # with the rate sampled at the half layer
    gt = known("gt")
    vel = ResidualBlock(
        (u(0, 1) - u(0, 0)) / ht - gt(0, 0),
        IndexSet.box(g, [1, 0], [nx - 2, 0]),
        {"u": g, "gt": g},
        name="initial-rate",
    )
    gfield = eval_on_grid(g, wave_exact)
    gtfield = eval_on_grid(g, lambda x, t: wave_exact_ut(x, ht / 2.0))
    return Problem(
        fields={"u": g},
        blocks=[interior, bc, vel],
        knowns={"g": gfield, "gt": gtfield},
    )


class TestLoss:
    def test_point_mismatch(self):
        p = point_problem(g_value=3.0)
        assert p.loss(np.array([1.0])) == pytest.approx(4.0)

    def test_zero_at_consistent_point(self):
        p = point_problem(g_value=3.0)
        assert p.loss(np.array([3.0])) == 0.0

    def test_linear_blocks_vanish_at_solution(self):
        p = wave_problem()
        from odil import NewtonConfig, OptConfig, minimize_newton

        report = minimize_newton(p, p.initial_vector(), OptConfig(method="newton", max_epochs=3))
        assert report.final_loss < 1e-18

    def test_truncation_error_scaling(self):
        # residuals of the sampled exact solution shrink at O(h^4) per point
        per_point = []
        for n in (17, 33):
            p = wave_problem(n, n)
            g = p.fields["u"]
            x = eval_on_grid(g, wave_exact).values
            interior = p.blocks[0]
            r = interior.eval_residuals({"u": Field(g, x)})
            per_point.append(float(np.mean(r**2)))
        ratio = per_point[0] / per_point[1]
        assert 8.0 < ratio < 32.0

    def test_non_finite_identifies_block(self):
        p = point_problem()
        with pytest.raises(NonFiniteResidualError, match="data"):
            p.loss(np.array([np.inf]))

    def test_loss_terms_by_block(self):
        p = wave_problem()
        terms = p.loss_terms(p.initial_vector())
        assert set(terms) == {"interior", "bc", "initial-rate"}
        assert terms["interior"] == pytest.approx(0.0, abs=1e-20)
        assert terms["bc"] > 0


class TestGradient:
    def test_matches_finite_differences(self):
        p = wave_problem(7, 6)
        rng = np.random.default_rng(5)
        x = rng.normal(size=p.total_dofs)
        g = p.gradient(x)
        h = 1e-6
        idxs = rng.choice(p.total_dofs, size=15, replace=False)
        for i in idxs:
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (p.loss(xp) - p.loss(xm)) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-6)

    def test_zero_at_minimizer(self):
        p = point_problem(g_value=3.0)
        g = p.gradient(np.array([3.0]))
        assert np.max(np.abs(g)) < 1e-10

    def test_single_residual_chain_rule(self):
        # r = u^2 at u = 3: dL/du = 2 r dr/du = 2 * 9 * 6 = 108
        g = Grid(dims=(1,), lo=(0.0,), hi=(1.0,), centering="cell")
        u = unknown("u")
        block = ResidualBlock(u(0) ** 2, IndexSet.box(g, [0], [0]), {"u": g})
        p = Problem(fields={"u": g}, blocks=[block])
        assert p.gradient(np.array([3.0]))[0] == pytest.approx(108.0)


class TestNormalSystem:
    def test_single_linear_block(self):
        p = point_problem(g_value=3.0)
        system = p.normal_system(np.array([1.0]))
        assert system.A.to_dense().tolist() == [[1.0]]
        assert system.b.tolist() == [2.0]  # g - u

    def test_damping_added_to_diagonal(self):
        p = point_problem()
        system = p.normal_system(np.array([1.0]), damping=0.5)
        assert system.A.to_dense().tolist() == [[1.5]]

    def test_b_is_minus_half_gradient(self):
        p = wave_problem(8, 7)
        rng = np.random.default_rng(2)
        x = rng.normal(size=p.total_dofs)
        system = p.normal_system(x)
        grad = p.gradient(x)
        assert np.allclose(system.b, -grad / 2.0, rtol=1e-12, atol=1e-12)

    def test_symmetry_and_psd(self):
        p = wave_problem(7, 7)
        rng = np.random.default_rng(3)
        x = rng.normal(size=p.total_dofs)
        A = p.normal_system(x).A.to_dense()
        assert np.array_equal(A, A.T)
        for _ in range(5):
            v = rng.normal(size=p.total_dofs)
            assert v @ A @ v >= -1e-10

    def test_interior_row_sparsity(self):
        # squared 5-point space-time stencil keeps <= 13 nonzeros per interior row
        p = wave_problem(9, 9)
        g = p.fields["u"]
        A = p.normal_system(np.zeros(p.total_dofs)).A
        dof = g.flat_index((4, 4))
        row_nnz = A.row_ptr[dof + 1] - A.row_ptr[dof]
        assert row_nnz <= 13

    def test_weight_zero_block_changes_nothing(self):
        g = Grid(dims=(4,), lo=(0.0,), hi=(1.0,))
        u = unknown("u")
        base = ResidualBlock(u(1) - u(0), IndexSet.box(g, [0], [2]), {"u": g}, name="a")
        extra = ResidualBlock(u(0) * 5.0, IndexSet.box(g, [0], [3]), {"u": g}, weight=0.0, name="z")
        p1 = Problem(fields={"u": g}, blocks=[base])
        p2 = Problem(fields={"u": g}, blocks=[base, extra])
        rng = np.random.default_rng(1)
        x = rng.normal(size=4)
        assert p1.loss(x) == p2.loss(x)
        assert np.array_equal(p1.gradient(x), p2.gradient(x))
        s1, s2 = p1.normal_system(x), p2.normal_system(x)
        assert np.allclose(s1.A.to_dense(), s2.A.to_dense())
        assert np.array_equal(s1.b, s2.b)


class TestLayout:
    def two_field_problem(self, order):
        ga = Grid(dims=(3,), lo=(0.0,), hi=(1.0,))
        gb = Grid(dims=(2,), lo=(0.0,), hi=(1.0,))
        a = unknown("a")
        b = unknown("b")
        blocks = [
            ResidualBlock(a(1) - 2 * b(0), IndexSet.box(ga, [0], [1]), {"a": ga, "b": gb}, name="c1"),
            ResidualBlock(b(0) - 1.5, IndexSet.box(gb, [0], [1]), {"b": gb}, name="c2"),
            ResidualBlock(a(0) * a(0) - 2.0, IndexSet.box(ga, [0], [2]), {"a": ga}, name="c3"),
        ]
        fields = {"a": ga, "b": gb} if order == "ab" else {"b": gb, "a": ga}
        return Problem(fields=fields, blocks=blocks)

    def test_loss_invariant_under_layout_permutation(self):
        p1 = self.two_field_problem("ab")
        p2 = self.two_field_problem("ba")
        rng = np.random.default_rng(0)
        a_vals = rng.normal(size=3)
        b_vals = rng.normal(size=2)
        x1 = np.concatenate([a_vals, b_vals])
        x2 = np.concatenate([b_vals, a_vals])
        assert p1.loss(x1) == pytest.approx(p2.loss(x2), rel=1e-15)

    def test_solutions_agree_after_permutation(self):
        from odil import OptConfig, minimize_newton

        p1 = self.two_field_problem("ab")
        p2 = self.two_field_problem("ba")
        cfg = OptConfig(method="newton", max_epochs=30)
        r1 = minimize_newton(p1, np.full(5, 0.7), cfg)
        r2 = minimize_newton(p2, np.full(5, 0.7), cfg)
        assert np.allclose(r1.x[:3], r2.x[2:], atol=1e-10)
        assert np.allclose(r1.x[3:], r2.x[:2], atol=1e-10)

    def test_undeclared_names_rejected(self):
        g = Grid(dims=(3,), lo=(0.0,), hi=(1.0,))
        u = unknown("u")
        w = unknown("w")
        block = ResidualBlock(u(0) - w(0), IndexSet.box(g, [0], [2]), {"u": g, "w": g})
        with pytest.raises(KeyError, match="'w'"):
            Problem(fields={"u": g}, blocks=[block])

    def test_params_at_tail(self):
        g = Grid(dims=(2,), lo=(0.0,), hi=(1.0,))
        from odil import param

        u = unknown("u")
        block = ResidualBlock(param("k") * u(0) - 1.0, IndexSet.box(g, [0], [1]), {"u": g})
        p = Problem(fields={"u": g}, blocks=[block], params={"k": 2.0})
        assert p.total_dofs == 3
        x0 = p.initial_vector()
        assert x0[2] == 2.0
        # gradient wrt parameter matches finite differences
        rng = np.random.default_rng(4)
        x = rng.normal(size=3)
        grad = p.gradient(x)
        h = 1e-6
        xp, xm = x.copy(), x.copy()
        xp[2] += h
        xm[2] -= h
        assert grad[2] == pytest.approx((p.loss(xp) - p.loss(xm)) / (2 * h), rel=1e-6)
