import numpy as np
import pytest
import scipy.sparse as sp

from contactrom.contact import ContactPairing, assemble_constraints, evaluate_gap
from contactrom.fem import Material, assemble
from contactrom.mesh import CrackSpec, build_rect_mesh, partition_dofs
from contactrom.ncp import (NcpStatus, OperatorBundle, StaticContext, StepHistory,
                            complementarity_violation, constraint_F, dynamic_w,
                            effective_stiffness, jacobian, solve_ncp, static_w)

MAT = Material(1000.0, 0.3, 1.0)


def random_bundle(rng, n=8, m=3, d_scale=0.1, f=None, s_eval="current"):
    a = rng.standard_normal((n, n))
    mmat = a @ a.T + n * np.eye(n)
    a = rng.standard_normal((n, n))
    kmat = a @ a.T + n * np.eye(n)
    dsym = []
    for _ in range(m):
        s = rng.standard_normal((n, n)) * d_scale
        dsym.append(s + s.T)
    c = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    fvec = rng.standard_normal(n) if f is None else f
    return OperatorBundle(M=sp.csc_matrix(mmat), K=sp.csc_matrix(kmat),
                          D_sym=tuple(sp.csr_matrix(d) for d in dsym),
                          C=sp.csr_matrix(c), b=b,
                          f_provider=lambda t: fvec, s_eval=s_eval)


def crack_bundle(nx=12, ny=12):
    crack = CrackSpec.reference_layout(nx, ny)
    mesh = build_rect_mesh(nx, ny, crack=crack)
    pairing = ContactPairing.from_mesh(mesh)
    part = partition_dofs(mesh, pairing.all_nodes())
    right = [i for i in range(mesh.n_nodes) if mesh.node_coords[i, 0] == 1.0]
    from contactrom.fem import LoadSpec, make_force_provider
    spec = LoadSpec(loaded_nodes=right, direction=(1.0, 0.0),
                    magnitude_fn=lambda t: 1.5 * np.sin(0.1 * np.pi * t))
    sys = assemble(mesh, MAT, loads=[spec])
    cs = assemble_constraints(mesh, pairing, part)
    bundle = OperatorBundle.from_full(sys, cs, make_force_provider(spec, mesh))
    return bundle, cs, part, mesh


def test_effective_stiffness_lambda_zero():
    rng = np.random.default_rng(0)
    ops = random_bundle(rng)
    s = effective_stiffness(ops, np.zeros(3))
    np.testing.assert_array_equal(s.toarray(), ops.K.toarray())


def test_effective_stiffness_single_constraint():
    rng = np.random.default_rng(1)
    ops = random_bundle(rng, m=1)
    s = effective_stiffness(ops, np.array([1.0]))
    np.testing.assert_allclose(s.toarray(),
                               ops.K.toarray() - ops.D_sym[0].toarray(), atol=1e-14)


def test_slave_block_untouched_by_lambda():
    bundle, cs, part, _ = crack_bundle()
    rng = np.random.default_rng(2)
    lam = rng.uniform(0, 5, bundle.m)
    s = effective_stiffness(bundle, lam).toarray()
    k = bundle.K.toarray()
    sl = part.slave_dofs
    np.testing.assert_array_equal(s[np.ix_(sl, sl)], k[np.ix_(sl, sl)])


def test_static_w_linear_elastic_limit():
    rng = np.random.default_rng(3)
    ops = random_bundle(rng)
    w = static_w(ops, np.zeros(3))
    f = ops.f_provider(0.0)
    np.testing.assert_allclose(ops.K @ w, f, atol=1e-10 * np.linalg.norm(f))
    ops0 = random_bundle(rng, f=np.zeros(8))
    np.testing.assert_allclose(static_w(ops0, np.zeros(3)), 0.0, atol=1e-14)


def test_static_w_residual():
    rng = np.random.default_rng(4)
    ops = random_bundle(rng)
    lam = rng.uniform(0, 0.5, 3)
    w = static_w(ops, lam)
    s = effective_stiffness(ops, lam)
    rhs = ops.f_provider(0.0) + ops.C.T @ lam
    assert np.linalg.norm(s @ w - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_dynamic_w_trivial_zero():
    rng = np.random.default_rng(5)
    ops = random_bundle(rng, f=np.zeros(8))
    hist = StepHistory(w_prev=np.zeros(8), w_prev2=np.zeros(8),
                       lam_prev=np.zeros(3), h=0.1, t_next=0.2)
    np.testing.assert_allclose(dynamic_w(ops, hist, np.zeros(3)), 0.0, atol=1e-14)


def test_dynamic_w_small_h_limit():
    rng = np.random.default_rng(6)
    ops = random_bundle(rng, f=np.zeros(8))
    w1 = rng.standard_normal(8)
    w2 = rng.standard_normal(8)
    target = 2 * w1 - w2
    errs = []
    for h in (1e-3, 5e-4):
        hist = StepHistory(w_prev=w1, w_prev2=w2, lam_prev=np.zeros(3), h=h, t_next=h)
        errs.append(np.linalg.norm(dynamic_w(ops, hist, np.zeros(3)) - target))
    assert errs[0] <= 1e-4
    assert errs[1] <= errs[0] / 3.0   # O(h^2) decay


def test_dynamic_w_residual():
    rng = np.random.default_rng(7)
    ops = random_bundle(rng)
    lam = rng.uniform(0, 0.5, 3)
    hist = StepHistory(w_prev=rng.standard_normal(8), w_prev2=rng.standard_normal(8),
                       lam_prev=lam, h=0.05, t_next=0.3)
    w = dynamic_w(ops, hist, lam)
    h2 = hist.h ** 2
    lhs = (ops.M + h2 * effective_stiffness(ops, lam)) @ w
    rhs = (h2 * ops.f_provider(hist.t_next) + h2 * (ops.C.T @ lam)
           + ops.M @ (2 * hist.w_prev - hist.w_prev2))
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1.0)


def test_constraint_F_offset_and_cross_module():
    bundle, cs, part, mesh = crack_bundle()
    np.testing.assert_allclose(constraint_F(bundle, np.zeros(bundle.n)), cs.b)
    rng = np.random.default_rng(8)
    w = rng.standard_normal(bundle.n)
    np.testing.assert_allclose(constraint_F(bundle, w), evaluate_gap(cs, w),
                               rtol=1e-12, atol=1e-12)


def test_jacobian_linear_constraint_reduction():
    rng = np.random.default_rng(9)
    ops = random_bundle(rng, d_scale=0.0)
    h = 0.07
    hist = StepHistory(w_prev=rng.standard_normal(8), w_prev2=rng.standard_normal(8),
                       lam_prev=np.zeros(3), h=h, t_next=0.1)
    df = jacobian(ops, hist, rng.uniform(0, 1, 3))
    c = ops.C.toarray()
    expected = h * h * c @ np.linalg.solve((ops.M + h * h * ops.K).toarray(), c.T)
    np.testing.assert_allclose(df, expected, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(df, df.T, atol=1e-9 * np.abs(df).max())
    assert np.linalg.eigvalsh(df).min() >= -1e-9 * np.abs(df).max()


def fd_jacobian(ops, hist, lam, step=1e-6):
    m = ops.m
    df = np.empty((m, m))
    for j in range(m):
        lp = lam.copy()
        lp[j] += step
        lm = lam.copy()
        lm[j] -= step
        fp = constraint_F(ops, dynamic_w(ops, hist, lp))
        fm = constraint_F(ops, dynamic_w(ops, hist, lm))
        df[:, j] = (fp - fm) / (2 * step)
    return df


def test_jacobian_finite_difference_oracle():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 41))
        m = int(rng.integers(1, 6))
        ops = random_bundle(rng, n=n, m=m, d_scale=0.05)
        hist = StepHistory(w_prev=rng.standard_normal(n) * 0.1,
                           w_prev2=rng.standard_normal(n) * 0.1,
                           lam_prev=np.zeros(m), h=0.05, t_next=0.4)
        lam = rng.uniform(0, 1, m)
        df = jacobian(ops, hist, lam)
        df_fd = fd_jacobian(ops, hist, lam)
        err = np.abs(df - df_fd).max() / max(np.abs(df).max(), 1e-30)
        worst = max(worst, err)
    assert worst <= 1e-5


def test_jacobian_symbolic_two_dof():
    """m = 1 on a 2-DOF system, differentiated symbolically."""
    sympy = pytest.importorskip("sympy")
    lam = sympy.symbols("lam")
    h = sympy.Rational(1, 20)
    mmat = sympy.Matrix([[2, 0], [0, 3]])
    kmat = sympy.Matrix([[5, 1], [1, 4]])
    dsym = sympy.Matrix([[0, 1], [1, 2]])
    c = sympy.Matrix([[1], [-2]])
    f = sympy.Matrix([[1], [2]])
    w1 = sympy.Matrix([[sympy.Rational(1, 10)], [0]])
    w2 = sympy.Matrix([[0], [sympy.Rational(1, 20)]])
    b0 = sympy.Rational(1, 4)
    smat = kmat - lam * dsym
    amat = mmat + h ** 2 * smat
    rhs = h ** 2 * f + h ** 2 * c * lam + 2 * mmat * w1 - mmat * w2
    w = amat.inv() * rhs
    fexpr = (w.T * (dsym / 2) * w)[0] + (c.T * w)[0] + b0
    dfdlam = sympy.diff(fexpr, lam)
    lam0 = 0.3
    expected = float(dfdlam.subs(lam, lam0))

    ops = OperatorBundle(M=sp.csc_matrix(np.array([[2.0, 0], [0, 3]])),
                         K=sp.csc_matrix(np.array([[5.0, 1], [1, 4]])),
                         D_sym=(sp.csr_matrix(np.array([[0.0, 1], [1, 2]])),),
                         C=sp.csr_matrix(np.array([[1.0, -2.0]])),
                         b=np.array([0.25]), f_provider=lambda t: np.array([1.0, 2.0]))
    hist = StepHistory(w_prev=np.array([0.1, 0.0]), w_prev2=np.array([0.0, 0.05]),
                       lam_prev=np.zeros(1), h=0.05, t_next=1.0)
    df = jacobian(ops, hist, np.array([lam0]))
    assert df[0, 0] == pytest.approx(expected, rel=1e-10)


def test_solve_ncp_open_gap_one_iteration():
    rng = np.random.default_rng(11)
    ops = random_bundle(rng, f=np.zeros(8))
    # with zero force and zero history every gap stays at b; make b positive
    ops = OperatorBundle(M=ops.M, K=ops.K, D_sym=ops.D_sym, C=ops.C,
                         b=np.abs(ops.b) + 0.1, f_provider=ops.f_provider)
    hist = StepHistory(w_prev=np.zeros(8), w_prev2=np.zeros(8),
                       lam_prev=np.zeros(3), h=0.05, t_next=0.1)
    rep = solve_ncp(ops, hist, np.zeros(3))
    assert rep.status is NcpStatus.CONVERGED
    assert rep.iterations == 1
    np.testing.assert_allclose(rep.lam, 0.0)


def test_solve_ncp_affine_constraints_two_iterations():
    rng = np.random.default_rng(12)
    for _ in range(10):
        ops = random_bundle(rng, d_scale=0.0)
        hist = StepHistory(w_prev=rng.standard_normal(8) * 0.01,
                           w_prev2=rng.standard_normal(8) * 0.01,
                           lam_prev=np.zeros(3), h=0.05, t_next=0.2)
        rep = solve_ncp(ops, hist, np.zeros(3))
        assert rep.status is NcpStatus.CONVERGED
        assert rep.iterations <= 2
        assert complementarity_violation(rep.lam, rep.gap) <= 1.0


def test_solve_ncp_quadratic_converges_with_certificate():
    rng = np.random.default_rng(13)
    for _ in range(20):
        ops = random_bundle(rng, n=10, m=4, d_scale=0.05)
        hist = StepHistory(w_prev=rng.standard_normal(10) * 0.05,
                           w_prev2=rng.standard_normal(10) * 0.05,
                           lam_prev=np.zeros(4), h=0.05, t_next=0.7)
        rep = solve_ncp(ops, hist, np.zeros(4))
        assert rep.status is NcpStatus.CONVERGED
        assert rep.lam.min() >= 0.0
        assert complementarity_violation(rep.lam, rep.gap) <= 1.0
        assert rep.residuals[-1] <= 1e-9 * (1.0 + np.linalg.norm(rep.lam))


def test_solve_ncp_static_context():
    rng = np.random.default_rng(14)
    ops = random_bundle(rng, d_scale=0.02)
    rep = solve_ncp(ops, StaticContext(), np.zeros(3))
    assert rep.status is NcpStatus.CONVERGED
    assert complementarity_violation(rep.lam, rep.gap) <= 1.0
    # the returned displacement is the static map at the returned multiplier
    np.testing.assert_allclose(rep.w, static_w(ops, rep.lam), atol=1e-12)


def test_solve_ncp_previous_s_eval_mode():
    rng = np.random.default_rng(15)
    ops = random_bundle(rng, d_scale=0.02, s_eval="previous")
    lamp = np.array([0.1, 0.0, 0.2])
    hist = StepHistory(w_prev=rng.standard_normal(8) * 0.01,
                       w_prev2=rng.standard_normal(8) * 0.01,
                       lam_prev=lamp, h=0.05, t_next=0.2)
    rep = solve_ncp(ops, hist, lamp)
    assert rep.status is NcpStatus.CONVERGED
    # frozen S makes F affine: two iterations at most
    assert rep.iterations <= 2
    assert complementarity_violation(rep.lam, rep.gap) <= 1.0


def test_solve_ncp_rejects_negative_start():
    rng = np.random.default_rng(16)
    ops = random_bundle(rng)
    hist = StepHistory(w_prev=np.zeros(8), w_prev2=np.zeros(8),
                       lam_prev=np.zeros(3), h=0.1, t_next=0.1)
    from contactrom.ncp import NcpError
    with pytest.raises(NcpError):
        solve_ncp(ops, hist, np.array([-1.0, 0.0, 0.0]))
