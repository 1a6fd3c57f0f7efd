import numpy as np
import pytest

from contactrom.lcp import LcpProblem, LcpStatus, lcp_oracle, lemke


def random_spd(rng, m):
    a = rng.standard_normal((m, m))
    return a @ a.T + m * np.eye(m)


def test_lemke_trivial_nonnegative_b():
    sol = lemke(LcpProblem(A=np.eye(2), B=np.array([1.0, 1.0])))
    assert sol.status is LcpStatus.SOLVED
    np.testing.assert_allclose(sol.z, 0.0)


def test_lemke_componentwise():
    sol = lemke(LcpProblem(A=np.eye(2), B=np.array([-1.0, 2.0])))
    assert sol.status is LcpStatus.SOLVED
    np.testing.assert_allclose(sol.z, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.w, [0.0, 2.0], atol=1e-12)


def test_oracle_trivial_cases():
    sol = lcp_oracle(LcpProblem(A=np.array([[2.0]]), B=np.array([-4.0])))
    np.testing.assert_allclose(sol.z, [2.0])
    sol = lcp_oracle(LcpProblem(A=np.eye(3), B=np.array([0.5, 0.0, 3.0])))
    np.testing.assert_allclose(sol.z, 0.0)
    assert sol.status is LcpStatus.SOLVED


def test_oracle_rejects_large_m():
    with pytest.raises(ValueError):
        lcp_oracle(LcpProblem(A=np.eye(13), B=np.zeros(13)))


def test_lemke_matches_oracle_on_spd():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        m = int(rng.integers(1, 7))
        prob = LcpProblem(A=random_spd(rng, m), B=rng.standard_normal(m) * 2.0)
        sol = lemke(prob)
        ref = lcp_oracle(prob)
        assert sol.status is LcpStatus.SOLVED, f"trial {trial}"
        assert ref.status is LcpStatus.SOLVED
        assert sol.certificate(prob)
        assert ref.certificate(prob)
        np.testing.assert_allclose(sol.z, ref.z, atol=1e-9)


def test_lemke_deterministic():
    rng = np.random.default_rng(5)
    prob = LcpProblem(A=random_spd(rng, 5), B=rng.standard_normal(5))
    s1 = lemke(prob)
    s2 = lemke(prob)
    np.testing.assert_array_equal(s1.z, s2.z)
    np.testing.assert_array_equal(s1.w, s2.w)


def test_lemke_infeasible_ray_termination():
    # w = -z + B with B < 0 has no solution with z, w >= 0
    prob = LcpProblem(A=-np.eye(2), B=np.array([-1.0, -1.0]))
    sol = lemke(prob)
    assert sol.status is LcpStatus.RAY_TERMINATION
    assert lcp_oracle(prob).status is LcpStatus.NO_SOLUTION


def test_lemke_degenerate_ties():
    # identical rows force degenerate ratios; lexicographic rule must cope
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    prob = LcpProblem(A=a + 1e-9 * np.eye(2), B=np.array([-1.0, -1.0]))
    sol = lemke(prob)
    assert sol.status is LcpStatus.SOLVED
    assert sol.certificate(prob)


def test_certificate_rejects_garbage():
    prob = LcpProblem(A=np.eye(2), B=np.array([-1.0, 2.0]))
    from contactrom.lcp import LcpSolution
    bad = LcpSolution(z=np.array([5.0, 5.0]), w=prob.B + prob.A @ np.array([5.0, 5.0]),
                      status=LcpStatus.SOLVED)
    assert not bad.certificate(prob)
