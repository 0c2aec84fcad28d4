import warnings

import numpy as np
import pytest
import scipy.optimize

from netlineq.dynamics import (
    AlgorithmSpec,
    SolverState,
    Trajectory,
    check_init,
    conserved_mismatch,
    default_init,
    error_metrics,
    euler_step,
    rhs_central,
    rhs_dac,
    rhs_dist,
    rhs_gdac,
    rhs_timevarying,
    rhs_unbalanced_fixed_v,
    simulate,
    simulate_reference,
)
from netlineq.graph import GraphSequence, in_laplacian, positive_null_eigenvector, ring
from netlineq.kernels import DivergenceError
from netlineq.linproblem import NetworkProblem, generate_problem, reference_solution, stack
from netlineq.spectral import central_rate_bound

from conftest import (
    mutual_pair, random_balanced, random_digraph, singular_problem, two_node, well_conditioned,
)


def instance(seed=0, n=4, m=3, balanced=True):
    r = np.random.default_rng(seed)
    g = random_balanced(r, n) if balanced else random_digraph(r, n)
    p = generate_problem(seed, n, m, shift=1.0)
    return p, g, stack(p, in_laplacian(g))


def random_state(rng, p, with_v=False):
    nm = p.n * p.m
    v = rng.uniform(0.1, 1.0, p.n) if with_v else None
    return SolverState(rng.normal(size=nm), rng.normal(size=nm), v)


def equilibrium(p):
    xs = reference_solution(p)
    return xs, SolverState(np.tile(xs, p.n), np.zeros(p.n * p.m))


def hand_problem():
    return NetworkProblem.from_arrays([[[2.0]], [[0.0]]], [[1.0], [1.0]])


def sum_blocks(v, n, m):
    return v.reshape(n, m).sum(axis=0)


class TestAlgorithmSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            AlgorithmSpec("bogus")
        with pytest.raises(ValueError):
            AlgorithmSpec("gdac", alpha=0.0)
        with pytest.raises(ValueError):
            AlgorithmSpec("gdac", gamma=-1.0)
        AlgorithmSpec("central", gamma=0.0)

    def test_uses_y(self):
        assert not AlgorithmSpec("central").uses_y
        assert AlgorithmSpec("dist").uses_y


class TestCentral:
    def test_equilibrium(self):
        p, g, ops = instance()
        xs, s = equilibrium(p)
        np.testing.assert_allclose(rhs_central(p, ops, s, AlgorithmSpec("central")), 0, atol=1e-12)

    def test_hand_example(self):
        p = hand_problem()
        ops = stack(p, in_laplacian(mutual_pair()))
        f = rhs_central(p, ops, SolverState(np.zeros(2)), AlgorithmSpec("central", alpha=7.0, beta=0.1))
        np.testing.assert_allclose(f, [0.4, 0.0], atol=1e-15)

    def test_matrix_free_oracle(self, rng):
        p, g, ops = instance(1)
        L = in_laplacian(g)
        spec = AlgorithmSpec("central", alpha=1.3, beta=0.7)
        x = rng.normal(size=p.n * p.m)
        X = x.reshape(p.n, p.m)
        r = sum(a.A @ X[i] - a.b for i, a in enumerate(p.agents))
        ref = np.concatenate([
            -spec.alpha * sum(L[i, j] * X[j] for j in range(p.n)) - spec.beta * a.A.T @ r
            for i, a in enumerate(p.agents)
        ])
        np.testing.assert_allclose(rhs_central(p, ops, SolverState(x), spec), ref, atol=1e-12)

    def test_equilibrium_is_unique(self):
        p, g, ops = instance(2, n=3, m=2)
        spec = AlgorithmSpec("central")
        sol = scipy.optimize.fsolve(
            lambda x: rhs_central(p, ops, SolverState(x), spec), np.ones(6), xtol=1e-13)
        A = sum(a.A for a in p.agents)
        b = sum(a.b for a in p.agents)
        np.testing.assert_allclose(sol, np.tile(np.linalg.solve(A, b), 3), atol=1e-9)

    def test_lyapunov_decrease(self):
        p, g = well_conditioned(3)
        spec = AlgorithmSpec("central", alpha=1.0, beta=1.0)
        xs = np.tile(reference_solution(p), p.n)
        tr = simulate(p, g, spec, h=1e-4, steps=20000, record_every=100)
        V = 0.5 * np.sum((tr.x - xs) ** 2, axis=1)
        assert np.all(np.diff(V) < 0)
        slope = np.polyfit(tr.times, np.log(V), 1)[0]
        assert slope <= -0.9 * central_rate_bound(p, g, 1.0, 1.0)


class TestGdac:
    def test_equilibrium(self):
        p, g, ops = instance()
        _, s = equilibrium(p)
        for f in rhs_gdac(p, ops, s, AlgorithmSpec("gdac")):
            np.testing.assert_allclose(f, 0, atol=1e-12)

    def test_structural_identity(self, rng):
        p, g, ops = instance()
        spec = AlgorithmSpec("gdac", gamma=3.0)
        for _ in range(5):
            s = random_state(rng, p)
            xd, yd = rhs_gdac(p, ops, s, spec)
            np.testing.assert_allclose(yd - ops.blockA @ xd + spec.gamma * ops.lapKron @ s.y, 0, atol=1e-12)

    def test_expanded_form(self, rng):
        p, g, ops = instance()
        spec = AlgorithmSpec("gdac", alpha=1.5, beta=0.3, gamma=3.0)
        s = random_state(rng, p)
        A, Lk, n = ops.blockA, ops.lapKron, p.n
        yd_ref = -spec.alpha * A @ Lk @ s.x - n * spec.beta * A @ A.T @ s.y - spec.gamma * Lk @ s.y
        np.testing.assert_allclose(rhs_gdac(p, ops, s, spec)[1], yd_ref, atol=1e-12)

    def test_conservation_generator(self, rng):
        p, g, ops = instance()
        s = random_state(rng, p)
        xd, yd = rhs_gdac(p, ops, s, AlgorithmSpec("gdac"))
        np.testing.assert_allclose(sum_blocks(yd - ops.blockA @ xd, p.n, p.m), 0, atol=1e-12)

    def test_missing_y(self):
        p, g, ops = instance()
        with pytest.raises(ValueError):
            rhs_gdac(p, ops, SolverState(np.zeros(p.n * p.m)), AlgorithmSpec("gdac"))


class TestTimeVarying:
    def test_single_graph(self, rng):
        p, g, ops = instance()
        seq = GraphSequence((g,), policy="random", seed=3)
        s = random_state(rng, p)
        spec = AlgorithmSpec("gdac_tv")
        for step in range(4):
            a = rhs_timevarying(p, seq, step, s, spec, seq.rng())
            b = rhs_gdac(p, ops, s, spec)
            for u, w in zip(a, b):
                np.testing.assert_array_equal(u, w)

    def test_equilibrium_every_graph(self):
        p, g, _ = instance()
        g2 = random_balanced(np.random.default_rng(77), p.n)
        seq = GraphSequence((g, g2), policy="random", seed=1)
        _, s = equilibrium(p)
        rng = seq.rng()
        for step in range(10):
            for f in rhs_timevarying(p, seq, step, s, AlgorithmSpec("gdac_tv"), rng):
                np.testing.assert_allclose(f, 0, atol=1e-12)

    def test_deterministic(self):
        p, g, _ = instance()
        g2 = random_balanced(np.random.default_rng(77), p.n)
        seq = GraphSequence((g, g2), policy="random", seed=5)
        spec = AlgorithmSpec("gdac_tv")
        a = simulate_reference(p, seq, spec, steps=50)
        b = simulate_reference(p, seq, spec, steps=50)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)


class TestUnbalanced:
    def test_uniform_reduces_to_scaled_gdac(self, rng):
        p, g, ops = instance()
        spec = AlgorithmSpec("unbalanced_fixed_v", gamma=4.0)
        s = random_state(rng, p)
        a = rhs_unbalanced_fixed_v(p, ops, np.full(p.n, 1 / p.n), s, spec)
        scaled = stack(p, in_laplacian(g.scaled(1 / p.n)))
        b = rhs_gdac(p, scaled, s, AlgorithmSpec("gdac", gamma=4.0))
        for u, w in zip(a, b):
            np.testing.assert_allclose(u, w, atol=1e-13)

    def test_equilibrium(self):
        p, g, ops = instance(balanced=False)
        _, s = equilibrium(p)
        vbar = positive_null_eigenvector(g)
        for f in rhs_unbalanced_fixed_v(p, ops, vbar, s, AlgorithmSpec("unbalanced_fixed_v")):
            np.testing.assert_allclose(f, 0, atol=1e-12)

    def test_two_node_hand(self):
        p = hand_problem()
        ops = stack(p, in_laplacian(two_node()))
        vbar = positive_null_eigenvector(two_node())
        s = SolverState(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        xd, yd = rhs_unbalanced_fixed_v(p, ops, vbar, s, AlgorithmSpec("unbalanced_fixed_v", alpha=1.0))
        # L = [[2,-1],[-2,1]], V = diag(1/3, 2/3): L V x = (2/3, -2/3)
        np.testing.assert_allclose(xd, [-2 / 3, 2 / 3], atol=1e-15)
        np.testing.assert_allclose(yd, [-4 / 3, 0.0], atol=1e-15)

    def test_rejects_nonpositive(self, rng):
        p, g, ops = instance()
        with pytest.raises(ValueError):
            rhs_unbalanced_fixed_v(p, ops, np.zeros(p.n), random_state(rng, p), AlgorithmSpec("unbalanced_fixed_v"))


class TestDist:
    def test_equilibrium(self):
        p, g, ops = instance(balanced=False)
        xs, s = equilibrium(p)
        s = SolverState(s.x, s.y, positive_null_eigenvector(g))
        for f in rhs_dist(p, ops, s, AlgorithmSpec("dist")):
            np.testing.assert_allclose(f, 0, atol=1e-12)

    def test_substitution(self, rng):
        p, g, ops = instance(balanced=False)
        vbar = positive_null_eigenvector(g)
        s = random_state(rng, p)
        spec = AlgorithmSpec("dist")
        xd, yd, _ = rhs_dist(p, ops, SolverState(s.x, s.y, vbar), spec)
        rx, ry = rhs_unbalanced_fixed_v(p, ops, vbar, s, spec)
        np.testing.assert_allclose(xd, rx, atol=1e-14)
        np.testing.assert_allclose(yd, ry, atol=1e-14)

    def test_sum_v_conserved(self, rng):
        p, g, ops = instance(balanced=False)
        s = random_state(rng, p, with_v=True)
        _, _, vd = rhs_dist(p, ops, s, AlgorithmSpec("dist"))
        assert abs(vd.sum()) < 1e-13

    def test_conservation_generator(self, rng):
        p, g, ops = instance(balanced=False)
        s = random_state(rng, p, with_v=True)
        xd, yd, _ = rhs_dist(p, ops, s, AlgorithmSpec("dist"))
        np.testing.assert_allclose(sum_blocks(yd - ops.blockA @ xd, p.n, p.m), 0, atol=1e-12)

    def test_v_stays_positive(self):
        p, g, _ = instance(4, n=5, m=2, balanced=False)
        tr = simulate(p, g, AlgorithmSpec("dist"), steps=4000, record_every=50)
        assert np.all(tr.v > 0)
        np.testing.assert_allclose(tr.v.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(tr.v[-1], positive_null_eigenvector(g), atol=1e-6)

    def test_missing_v(self, rng):
        p, g, ops = instance()
        with pytest.raises(ValueError):
            rhs_dist(p, ops, random_state(rng, p), AlgorithmSpec("dist"))


class TestDac:
    def test_consensus_fixed_point(self):
        np.testing.assert_array_equal(rhs_dac(ring(4), np.full(4, 2.5), np.zeros(4)), 0)

    def test_tracks_average(self):
        g = ring(3)
        x = np.array([1.0, 2.0, 3.0])
        for _ in range(4000):
            x = x + 0.01 * rhs_dac(g, x, np.zeros(3))
        np.testing.assert_allclose(x, 2.0, atol=1e-10)

    def test_sum_conserved(self, rng):
        g = random_balanced(rng, 5)
        zd = rng.normal(size=5)
        zd -= zd.mean()
        assert abs(rhs_dac(g, rng.normal(size=5), zd).sum()) < 1e-12


class TestInit:
    def test_default(self):
        p = generate_problem(0, 3, 2)
        s = default_init(p, AlgorithmSpec("gdac"))
        ops = stack(p, np.zeros((3, 3)))
        assert np.all(s.x == 0)
        np.testing.assert_array_equal(sum_blocks(s.y - ops.blockA @ s.x + ops.stackedB, 3, 2), 0)
        assert s.v is None

    def test_custom_x0(self, rng):
        p = generate_problem(0, 3, 2)
        s = default_init(p, AlgorithmSpec("gdac"), x0=rng.normal(size=6))
        ops = stack(p, np.zeros((3, 3)))
        np.testing.assert_allclose(sum_blocks(s.y - ops.blockA @ s.x + ops.stackedB, 3, 2), 0, atol=1e-14)

    def test_dist_v(self):
        s = default_init(generate_problem(0, 4, 2), AlgorithmSpec("dist"))
        assert s.v.sum() == pytest.approx(1.0, abs=1e-15)

    def test_central_has_no_y(self):
        assert default_init(generate_problem(0, 2, 1), AlgorithmSpec("central")).y is None

    def test_check_init_warns(self):
        p = generate_problem(0, 3, 2)
        good = default_init(p, AlgorithmSpec("gdac"))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            check_init(p, AlgorithmSpec("gdac"), good)
        with pytest.warns(UserWarning):
            check_init(p, AlgorithmSpec("gdac"), SolverState(good.x, good.y + 1.0))


class TestEuler:
    def test_zero_field(self):
        s = SolverState(np.array([1.0, 2.0]), t=0.5)
        s2 = euler_step(s, np.zeros(2), 0.1)
        np.testing.assert_array_equal(s2.x, s.x)
        assert s2.t == pytest.approx(0.6)

    def test_scalar_decay(self):
        s = SolverState(np.array([1.0]))
        assert euler_step(s, -s.x, 0.1).x[0] == pytest.approx(0.9, abs=1e-15)

    def test_gdac_hand_step(self):
        p = hand_problem()
        ops = stack(p, in_laplacian(mutual_pair()))
        spec = AlgorithmSpec("gdac", alpha=1.0, beta=0.1, gamma=1.0)
        s = default_init(p, spec)  # x = 0, y = (-1, -1)
        s1 = euler_step(s, rhs_gdac(p, ops, s, spec), 0.5)
        # xd = -n beta A^T y = (0.4, 0); yd = A xd - gamma L y = (0.8, 0)
        np.testing.assert_allclose(s1.x, [0.2, 0.0], atol=1e-15)
        np.testing.assert_allclose(s1.y, [-0.6, -1.0], atol=1e-15)

    def test_nonfinite(self):
        with pytest.raises(DivergenceError) as e:
            euler_step(SolverState(np.zeros(1)), np.array([np.inf]), 0.1, step=7)
        assert e.value.step == 7

    def test_bad_h(self):
        with pytest.raises(ValueError):
            euler_step(SolverState(np.zeros(1)), np.zeros(1), 0.0)

    def test_missing_field(self):
        with pytest.raises(ValueError):
            euler_step(SolverState(np.zeros(1), np.zeros(1)), np.zeros(1), 0.1)


class TestConservedMismatch:
    def test_init_and_long_run(self):
        p, g, ops = instance(5)
        spec = AlgorithmSpec("gdac")
        b = sum_blocks(ops.stackedB, p.n, p.m)
        s = default_init(p, spec)
        np.testing.assert_allclose(conserved_mismatch(p, ops, s), -b, atol=1e-15)
        tr = simulate(p, g, spec, steps=10000, record_every=1000)
        np.testing.assert_allclose(conserved_mismatch(p, ops, tr.final), -b, rtol=1e-9, atol=1e-12)

    def test_at_limit(self):
        p, g, ops = instance(5)
        _, s = equilibrium(p)
        np.testing.assert_allclose(conserved_mismatch(p, ops, s), -sum_blocks(ops.stackedB, p.n, p.m), atol=1e-12)


class TestMetrics:
    def test_at_solution(self):
        p, g, ops = instance()
        xs = reference_solution(p)
        s = SolverState(np.tile(xs, p.n), -ops.stackedB + np.tile(sum_blocks(ops.stackedB, p.n, p.m) / p.n, p.n))
        m = error_metrics(p, ops, s, xs)
        assert m["err_avg"] < 1e-12 and m["err_full"] < 1e-12 and m["consensus_spread"] < 1e-12

    def test_uniform_offset(self):
        p, g, ops = instance()
        xs = reference_solution(p)
        d = np.array([0.3, -0.4, 1.2])
        m = error_metrics(p, ops, SolverState(np.tile(xs + d, p.n)), xs)
        assert m["err_avg"] == pytest.approx(np.linalg.norm(d), rel=1e-12)
        assert m["err_full"] == pytest.approx(np.sqrt(p.n) * np.linalg.norm(d), rel=1e-12)
        assert m["consensus_spread"] < 1e-12
        assert m["e_norm"] is None and m["conserved_drift"] is None

    def test_random_state_oracle(self, rng):
        p, g, ops = instance()
        xs = reference_solution(p)
        s = random_state(rng, p)
        n, m = p.n, p.m
        ones = np.kron(np.ones((n, 1)), np.eye(m))
        proj = np.eye(n * m) - ones @ ones.T / n
        xbar = ones.T @ s.x / n
        r = ones.T @ (ops.blockA @ s.x - ops.stackedB)
        got = error_metrics(p, ops, s, xs)
        assert got["err_avg"] == pytest.approx(np.linalg.norm(xbar - xs), rel=1e-12)
        assert got["err_full"] == pytest.approx(np.linalg.norm(s.x - np.tile(xs, n)), rel=1e-12)
        assert got["consensus_spread"] == pytest.approx(np.linalg.norm(proj @ s.x), rel=1e-12)
        assert got["e_norm"] == pytest.approx(np.linalg.norm(s.y - ones @ r / n), rel=1e-12)
        assert got["objective_f"] == pytest.approx(r @ r, rel=1e-12)
        b = ones.T @ ops.stackedB
        assert got["conserved_drift"] == pytest.approx(
            np.linalg.norm(ones.T @ (s.y - ops.blockA @ s.x) + b), rel=1e-12)


class TestNullComponent:
    @pytest.mark.parametrize("kind", ["central", "gdac"])
    def test_generator_orthogonal(self, rng, kind):
        p, w = singular_problem(rng)
        g = random_balanced(rng, p.n)
        ops = stack(p, in_laplacian(g))
        W = np.tile(w, p.n)
        spec = AlgorithmSpec(kind)
        for _ in range(5):
            s = random_state(rng, p)
            if kind == "central":
                s = SolverState(s.x)
                xd = rhs_central(p, ops, s, spec)
            else:
                xd = rhs_gdac(p, ops, s, spec)[0]
            assert abs(xd @ W) < 1e-12


class TestSimulate:
    @pytest.mark.parametrize("kind", ["central", "gdac", "unbalanced_fixed_v", "dist"])
    def test_matches_reference(self, kind):
        p, g, _ = instance(6, balanced=kind in ("central", "gdac"))
        spec = AlgorithmSpec(kind)
        vbar = positive_null_eigenvector(g) if kind == "unbalanced_fixed_v" else None
        tr = simulate(p, g, spec, steps=200, record_every=50, vbar=vbar)
        ref = simulate_reference(p, g, spec, steps=200, vbar=vbar)
        np.testing.assert_allclose(tr.final.x, ref.x, rtol=1e-11, atol=1e-12)
        if ref.y is not None:
            np.testing.assert_allclose(tr.final.y, ref.y, rtol=1e-11, atol=1e-12)
        if ref.v is not None:
            np.testing.assert_allclose(tr.final.v, ref.v, rtol=1e-11, atol=1e-14)
        assert tr.final.t == pytest.approx(ref.t)

    def test_timevarying_matches_reference(self):
        p, g, _ = instance(6)
        g2 = random_balanced(np.random.default_rng(8), p.n)
        seq = GraphSequence((g, g2), policy="random", seed=11)
        spec = AlgorithmSpec("gdac_tv")
        tr = simulate(p, seq, spec, steps=300, record_every=300)
        ref = simulate_reference(p, seq, spec, steps=300)
        np.testing.assert_allclose(tr.final.x, ref.x, rtol=1e-11, atol=1e-12)

    def test_record_layout(self):
        p, g, _ = instance()
        tr = simulate(p, g, AlgorithmSpec("gdac"), steps=25, record_every=10)
        assert list(tr.steps) == [0, 10, 20, 25]
        assert isinstance(tr, Trajectory) and tr.x.shape == (4, p.n * p.m)
        np.testing.assert_array_equal(tr.x[0], 0)

    def test_divergence(self):
        p, g, _ = instance()
        with pytest.raises(DivergenceError):
            simulate(p, g, AlgorithmSpec("gdac", gamma=1e4), h=0.1, steps=1000)

    def test_fixed_v_needs_vbar(self):
        p, g, _ = instance(balanced=False)
        with pytest.raises(ValueError):
            simulate(p, g, AlgorithmSpec("unbalanced_fixed_v"), steps=5)
