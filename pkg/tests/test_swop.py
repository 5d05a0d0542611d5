import numpy as np
import pytest

from swq import dgla, field3 as f3, qrep, swop
from swq.errors import ModeMismatch

from test_dgla import constant_adhm_solution


RNG = np.random.default_rng(99)


def _rand(rep, geom, fiber, M=1, backend="lattice", scale=1.0):
    f = f3.random_field(rep, geom, fiber, RNG, M, backend)
    n = f3.l2_norm(rep, f)
    return f * (scale / n) if n else f


def rand_triple(rep, geom, backend="lattice", scale=1.0, M=1):
    return swop.TangentTriple(
        _rand(rep, geom, f3.spinor_fiber(rep), M, backend, scale),
        _rand(rep, geom, f3.form_fiber(rep, 1, "g"), M, backend, scale),
        _rand(rep, geom, f3.form_fiber(rep, 0, "g"), M, backend, scale))


def test_trivial_residuals():
    rep = qrep.builtin("classical_sw")
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(f3.Field.zeros(geom, f3.spinor_fiber(rep)),
                           f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g")))
    assert swop.sw_residual(rep, p, c).norm(rep) == 0.0


def test_constant_adhm_solution_residual():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = constant_adhm_solution(rep, geom)
    assert swop.sw_residual(rep, p, c).norm(rep) < 1e-12
    for eps in (0.0, 0.3, 1.0):
        r = swop.blown_up_residual(rep, p, eps, c)
        assert r.norm(rep) < 1e-12


def test_blown_up_scaling_correspondence():
    # (eps, Phi, A) -> (Phi/eps, A) sends the residual rows to
    # (r1/eps, r2/eps^2, .)
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    phi = _rand(rep, geom, f3.spinor_fiber(rep))
    a = _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
    c = dgla.Configuration(phi, a)
    eps = 0.45
    r_eps = swop.blown_up_residual(rep, p, eps, c)
    c_scaled = dgla.Configuration(phi * (1.0 / eps), a)
    r_sw = swop.sw_residual(rep, p, c_scaled)
    assert f3.l2_norm(rep, r_eps.spinor * (1.0 / eps) - r_sw.spinor) < 1e-10
    assert f3.l2_norm(rep, r_eps.form * (1.0 / eps ** 2) - r_sw.form) < 1e-10


def test_eps_one_recovers_sw():
    rep = qrep.builtin("classical_sw")
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    r1 = swop.blown_up_residual(rep, p, 1.0, c)
    r0 = swop.sw_residual(rep, p, c)
    assert f3.l2_norm(rep, r1.spinor - r0.spinor) == 0.0
    assert f3.l2_norm(rep, r1.form - r0.form) == 0.0


def test_gauge_invariance_of_residual():
    rep = qrep.builtin("adjoint_flat", group="su2")
    geom = f3.TorusGeometry(8, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    r0 = swop.sw_residual(rep, p, c).norm(rep)
    worst = 0.0
    for _ in range(20):
        xi = _rand(rep, geom, f3.form_fiber(rep, 0, "g"), scale=0.3)
        moved = swop.gauge_transform(rep, p, xi, c)
        worst = max(worst, abs(swop.sw_residual(rep, p, moved).norm(rep) - r0))
    assert worst < 1e-10
    # identity transformation
    zero = f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"))
    moved = swop.gauge_transform(rep, p, zero, c)
    assert f3.l2_norm(rep, moved.phi - c.phi) == 0.0
    assert f3.l2_norm(rep, moved.a - c.a) == 0.0


def test_gauge_transform_abelian_constant():
    rep = qrep.builtin("classical_sw")
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    xi = f3.constant_field(geom, f3.form_fiber(rep, 0, "g"), [0.8])
    moved = swop.gauge_transform(rep, p, xi, c)
    assert np.abs(moved.a.data - c.a.data).max() < 1e-15
    assert f3.l2_norm(rep, moved.phi - c.phi) > 0.1


def test_linearization_self_adjoint():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    L = swop.linearization(rep, p, c, "Lc")

    def pair(y, t):
        return (f3.l2_inner(rep, y.spinor, t.phi) + f3.l2_inner(rep, y.form, t.a)
                + f3.l2_inner(rep, y.zero_form, t.xi))

    worst = 0.0
    for _ in range(50):
        t1 = rand_triple(rep, geom)
        t2 = rand_triple(rep, geom)
        d = abs(pair(L.apply(t1), t2) - pair(L.apply(t2), t1))
        worst = max(worst, d / (t1.l2_norm(rep) * t2.l2_norm(rep)))
    assert worst < 1e-10


def test_linearization_block_structure_at_reducible():
    # at c = (0, flat) all algebraic couplings vanish
    rep = qrep.builtin("classical_sw")
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(f3.Field.zeros(geom, f3.spinor_fiber(rep)),
                           f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g")))
    L = swop.linearization(rep, p, c, "Lc")
    t = rand_triple(rep, geom)
    y = L.apply(t)
    conn = c.connection(p)
    want1 = -1.0 * f3.dirac(rep, conn, t.phi)
    assert f3.l2_norm(rep, y.spinor - want1) < 1e-13
    t_phi_only = swop.TangentTriple(
        t.phi, f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g")),
        f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g")))
    y2 = L.apply(t_phi_only)
    assert f3.l2_norm(rep, y2.form) == 0.0 and f3.l2_norm(rep, y2.zero_form) == 0.0


def test_mode_validation():
    rep = qrep.builtin("classical_sw")
    geom = f3.TorusGeometry(4, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(f3.Field.zeros(geom, f3.spinor_fiber(rep)),
                           f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g")))
    with pytest.raises(ModeMismatch):
        swop.linearization(rep, p, c, "Leps")
    with pytest.raises(ModeMismatch):
        swop.linearization(rep, p, c, "bogus")


def remainder_norm(rep, full, base, Lt, h, with_scalar):
    total = 0.0
    for att in ("spinor", "form", "zero_form"):
        fv, bv, lv = getattr(full, att), getattr(base, att), getattr(Lt, att)
        total += f3.l2_norm(rep, fv - bv - h * lv) ** 2
    if with_scalar:
        total += (full.scalar - base.scalar - h * Lt.scalar) ** 2
    return np.sqrt(total)


@pytest.mark.parametrize("mode,lmode,eps", [
    ("SW", "Lc", None), ("Zero", "L0", None), ("Eps", "Leps", 0.3)])
def test_fd_consistency(mode, lmode, eps):
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    t = rand_triple(rep, geom)
    L = swop.linearization(rep, p, c, lmode, eps)
    Lt = L.apply(t)
    base = swop.extended_residual(rep, p, c, 0.0 * t, mode, eps)
    hs = [1e-1, 1e-2, 1e-3]
    errs = [remainder_norm(rep, swop.extended_residual(rep, p, c, h * t, mode, eps),
                           base, Lt, h, mode != "SW") for h in hs]
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert min(slopes) >= 1.9


def test_eps_blocks_scale_exactly():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = constant_adhm_solution(rep, geom)
    t = swop.TangentTriple(
        f3.Field.zeros(geom, f3.spinor_fiber(rep)),
        _rand(rep, geom, f3.form_fiber(rep, 1, "g")),
        _rand(rep, geom, f3.form_fiber(rep, 0, "g")))
    L0y = swop.linearization(rep, p, c, "L0").apply(t)
    ya = swop.linearization(rep, p, c, "Leps", 0.2).apply(t)
    yb = swop.linearization(rep, p, c, "Leps", 0.1).apply(t)
    na = f3.l2_norm(rep, ya.form - L0y.form)
    nb = f3.l2_norm(rep, yb.form - L0y.form)
    assert abs(na / nb - 4.0) < 1e-10


def test_extended_residual_zero_at_solution():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = constant_adhm_solution(rep, geom)
    t0 = swop.TangentTriple.zeros(rep, geom)
    for mode, eps in [("SW", None), ("Zero", None), ("Eps", 0.25)]:
        r = swop.extended_residual(rep, p, c, t0, mode, eps)
        assert r.norm(rep) < 1e-12, mode


def test_quadratic_estimate():
    # |Q(x1) - Q(x2)| <= c (|x1| + |x2|) |x1 - x2| with a stable measured c
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c = constant_adhm_solution(rep, geom)
    ratios = []
    for _ in range(100):
        s1, s2 = RNG.uniform(0.1, 2.0, 2)
        x1 = s1 * rand_triple(rep, geom)
        x2 = s2 * rand_triple(rep, geom)
        q1 = swop.quadratic_part(rep, p, c, x1, "Eps", 0.3)
        q2 = swop.quadratic_part(rep, p, c, x2, "Eps", 0.3)
        num = swop.ResidualBundle(q1.spinor - q2.spinor, q1.form - q2.form,
                                  q1.zero_form - q2.zero_form,
                                  q1.scalar - q2.scalar).norm(rep)
        den = (x1.l2_norm(rep) + x2.l2_norm(rep)) * (x1 - x2).l2_norm(rep)
        if den > 1e-12:
            ratios.append(num / den)
    assert max(ratios) < 10.0


def test_gauge_fix_to_slice():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c0 = constant_adhm_solution(rep, geom)
    conn0 = c0.connection(p)
    for eps in (1.0, 0.1):
        t = rand_triple(rep, geom)
        t = t * (0.05 / t.weighted_norm(rep, eps))
        c = dgla.Configuration(c0.phi + t.phi, c0.a + t.a)
        xi, fixed, diag = swop.gauge_fix_to_slice(rep, p, c0, c, eps)
        assert diag["residual"] < 1e-10
        assert diag["iterations"] <= 30
        r = (eps ** 2) * f3.exterior_d(rep, conn0, fixed.a, adjoint=True) \
            - f3.rho_star_pair(rep, fixed.phi, c0.phi)
        assert f3.l2_norm(rep, r) < 1e-10
        before = t.weighted_norm(rep, eps)
        after = fixed.weighted_norm(rep, eps)
        assert after <= 5.0 * before
    # already on slice: zero iterations
    xi, fixed, diag = swop.gauge_fix_to_slice(rep, p, c0, c0, 0.1)
    assert diag["iterations"] == 0 and f3.l2_norm(rep, xi) == 0.0


def test_gauge_fix_uniqueness_on_orbit():
    # two off-slice points in one gauge orbit fix to the same offset
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom)
    c0 = constant_adhm_solution(rep, geom)
    t = rand_triple(rep, geom)
    t = t * (0.03 / t.weighted_norm(rep, 0.1))
    c = dgla.Configuration(c0.phi + t.phi, c0.a + t.a)
    xi_move = _rand(rep, geom, f3.form_fiber(rep, 0, "g"), scale=0.02)
    c_moved = swop.gauge_transform(rep, p, xi_move, c)
    _, fixed1, _ = swop.gauge_fix_to_slice(rep, p, c0, c, 0.1)
    _, fixed2, _ = swop.gauge_fix_to_slice(rep, p, c0, c_moved, 0.1)
    d = np.sqrt(f3.l2_norm(rep, fixed1.phi - fixed2.phi) ** 2
                + f3.l2_norm(rep, fixed1.a - fixed2.a) ** 2)
    assert d < 1e-8
