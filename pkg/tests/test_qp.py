import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakloc.errors import Infeasible, SingularKKT
from leakloc.qp import kkt_solve, qp_solve
from oracles import enumerate_active_sets


def random_pd(rng, n, ridge=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T + ridge * np.eye(n)


class TestEquality:
    def test_scalar(self):
        x, diag = qp_solve(np.eye(1), np.zeros(1), np.eye(1), [3.0])
        assert x[0] == pytest.approx(3.0, abs=1e-12)
        assert diag.method == "kkt"

    def test_symmetric(self):
        x, _ = qp_solve(np.eye(2), np.zeros(2), np.ones((1, 2)), [2.0])
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_kkt_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, me = 7, 3
        # PSD but singular objective, made definite on the null space by the constraints
        M = rng.standard_normal((n, n - 2))
        P, q = M @ M.T, rng.standard_normal(n)
        A, b = rng.standard_normal((me, n)), rng.standard_normal(me)
        K = np.block([[P, A.T], [A, np.zeros((me, me))]])
        ref = np.linalg.solve(K, np.concatenate([-q, b]))[:n]
        x, diag = qp_solve(P, q, A, b)
        np.testing.assert_allclose(x, ref, atol=1e-9)
        assert np.abs(A @ x - b).max() <= 1e-9

    def test_redundant_rows_dropped(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        x, _ = qp_solve(np.eye(2), np.zeros(2), A, [2.0, 4.0])
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)

    def test_conflicting(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(Infeasible):
            qp_solve(np.eye(2), np.zeros(2), A, [1.0, 2.0])

    def test_singular(self):
        P = np.diag([1.0, 0.0])
        with pytest.raises(SingularKKT):
            kkt_solve(P, np.array([0.0, 1.0]), np.zeros((0, 2)), np.zeros(0))


class TestInequality:
    @pytest.mark.parametrize("seed", range(20))
    def test_box_qp_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = 5
        P, q = random_pd(rng, n), 3 * rng.standard_normal(n)
        G = np.vstack([np.eye(n), -np.eye(n)])
        h = np.concatenate([rng.uniform(0.1, 1.0, n), rng.uniform(0.1, 1.0, n)])
        ref, ref_obj = enumerate_active_sets(P, q, G, h)
        x, diag = qp_solve(P, q, A_ineq=G, b_ineq=h)
        np.testing.assert_allclose(x, ref, atol=1e-6)
        assert diag.objective == pytest.approx(ref_obj, abs=1e-8)
        assert np.all(G @ x <= h + 1e-8)

    @given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 5))
    @settings(max_examples=40, deadline=None)
    def test_general_enumeration(self, seed, n, m):
        rng = np.random.default_rng(seed)
        P, q = random_pd(rng, n), rng.standard_normal(n)
        G = rng.standard_normal((m, n))
        h = rng.uniform(0.0, 1.0, m)  # x = 0 is feasible
        Ae = rng.standard_normal((1, n))
        be = np.zeros(1)
        ref, _ = enumerate_active_sets(P, q, G, h, Ae, be)
        x, _ = qp_solve(P, q, Ae, be, G, h)
        np.testing.assert_allclose(x, ref, atol=1e-6)
        assert abs(Ae @ x - be).max() <= 1e-8

    def test_infeasible(self):
        G = np.array([[1.0], [-1.0]])
        with pytest.raises(Infeasible):
            qp_solve(np.eye(1), np.zeros(1), A_ineq=G, b_ineq=[-1.0, -1.0])

    def test_diagnostics(self):
        rng = np.random.default_rng(5)
        P, q = random_pd(rng, 4), rng.standard_normal(4)
        x, diag = qp_solve(P, q, A_ineq=np.eye(4), b_ineq=np.zeros(4))
        d = diag.to_dict()
        assert d["iterations"] >= 1
        assert diag.primal_residual <= 1e-8
        assert len(diag.objective_trace) >= 1
