import numpy as np
import pytest

from swq import dgla, field3 as f3, qrep, swop
from swq.errors import NotASolution


RNG = np.random.default_rng(555)


def _setup(rep_name="adhm", backend="trig", N=6, M=1, **params):
    rep = qrep.builtin(rep_name, **params)
    geom = f3.TorusGeometry(N, np.eye(3))
    p = f3.flat_parameter(rep, geom, backend, 0)
    return rep, geom, p


def _rand(rep, geom, fiber, M=1, backend="trig", scale=1.0):
    f = f3.random_field(rep, geom, fiber, RNG, M, backend)
    n = f3.l2_norm(rep, f)
    return f * (scale / n) if n else f


def _elem(rep, geom, key, backend="trig"):
    fibs = {
        "f0": f3.form_fiber(rep, 0, "g"), "f1": f3.form_fiber(rep, 1, "g"),
        "f2": f3.form_fiber(rep, 2, "g"), "f3": f3.form_fiber(rep, 3, "g"),
        "s1": f3.spinor_fiber(rep), "s2": f3.spinor_fiber(rep),
    }
    return dgla.GradedElement(**{key: _rand(rep, geom, fibs[key], 1, backend)})


def constant_adhm_solution(rep, geom, backend="lattice", seed=3):
    """Constant regular moment-map zero with trivial connection: an exact
    solution of the equations on the flat torus."""
    rng = np.random.default_rng(seed)
    z = None
    while z is None or not qrep.is_numerically_regular(rep, z):
        z = qrep.sample_moment_zero(rep, rng)
    z = z / np.sqrt(f3.TWO_PI ** 3 * geom.sqrt_det)   # unit L^2 norm
    phi = f3.constant_field(geom, f3.spinor_fiber(rep), z, backend)
    a = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"), backend,
                       0 if backend == "trig" else 0)
    return dgla.Configuration(phi, a)


def test_bracket_zero_and_antisymmetry():
    rep, geom, p = _setup(r=2, k=1)
    x = _elem(rep, geom, "s1")
    zero = dgla.GradedElement()
    assert dgla.graded_norm(rep, dgla.bracket(rep, x, zero)) == 0.0
    keys = ["f0", "s1", "f1", "s2", "f2", "f3"]
    worst = 0.0
    for _ in range(100):
        kx, ky = RNG.choice(keys, 2)
        x, y = _elem(rep, geom, kx), _elem(rep, geom, ky)
        px, py = x.degree(), y.degree()
        d = dgla.bracket(rep, x, y) + ((-1.0) ** (px * py)) * dgla.bracket(rep, y, x)
        worst = max(worst, dgla.graded_norm(rep, d))
    assert worst < 1e-12


def test_bracket_spinor_pair_is_moment():
    rep, geom, p = _setup(r=2, k=1)
    phi = _rand(rep, geom, f3.spinor_fiber(rep))
    x = dgla.GradedElement(s1=phi)
    out = dgla.bracket(rep, x, x)
    mu = -2.0 * f3.moment_two_form(rep, phi)
    assert f3.l2_norm(rep, out.get("f2") - mu) < 1e-13


@pytest.mark.parametrize("rep_name,params", [
    ("classical_sw", {}), ("adhm", {"r": 2, "k": 1})])
def test_jacobi(rep_name, params):
    rep, geom, p = _setup(rep_name, **params)
    families = [("f0", "f0", "s1"), ("f0", "s1", "s1"), ("f0", "s1", "s2"),
                ("f0", "f1", "s1"), ("f1", "s1", "s1")]
    worst = 0.0
    for fam in families:
        for _ in range(10):
            x, y, z = (_elem(rep, geom, k) for k in fam)
            worst = max(worst, dgla.jacobi_defect(rep, x, y, z))
    assert worst < 1e-11
    z0 = dgla.GradedElement()
    x = _elem(rep, geom, "s1")
    assert dgla.jacobi_defect(rep, x, x, dgla.GradedElement(f0=_rand(
        rep, geom, f3.form_fiber(rep, 0, "g")) * 0.0)) < 1e-14


def test_delta_zero_flat():
    rep, geom, p = _setup("classical_sw")
    phi0 = f3.Field.zeros(geom, f3.spinor_fiber(rep), "trig")
    a0 = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"), "trig")
    c = dgla.Configuration(phi0, a0)
    xi = _rand(rep, geom, f3.form_fiber(rep, 0, "g"))
    out = dgla.delta(rep, p, c, dgla.GradedElement(f0=xi))
    assert f3.l2_norm(rep, out.get("s1")) == 0.0
    flat = f3.Connection(a0, p.b)
    dxi = f3.exterior_d(rep, flat, xi)
    assert f3.l2_norm(rep, out.get("f1") - dxi) == 0.0


def test_delta_squared_at_solution_and_closed_form():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom, "trig")
    c = constant_adhm_solution(rep, geom, "trig")
    xi = _rand(rep, geom, f3.form_fiber(rep, 0, "g"))
    dd = dgla.delta(rep, p, c, dgla.delta(rep, p, c, dgla.GradedElement(f0=xi)))
    assert dgla.graded_norm(rep, dd) < 1e-11
    # off-solution: delta^2 matches the closed-form residual pairing
    phi = _rand(rep, geom, f3.spinor_fiber(rep))
    a = _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
    c_bad = dgla.Configuration(c.phi + 0.3 * phi, c.a + 0.3 * a)
    for key, x in [("f0", dgla.GradedElement(f0=xi)),
                   ("s1+f1", dgla.GradedElement(s1=phi, f1=a))]:
        dd = dgla.delta(rep, p, c_bad, dgla.delta(rep, p, c_bad, x))
        cf = dgla.delta_squared_closed_form(rep, p, c_bad, x)
        assert dgla.graded_norm(rep, dd - cf) < 1e-10, key
        assert dgla.graded_norm(rep, dd) > 1e-4  # genuinely nonzero


def test_delta_squared_linear_in_residual():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom, "trig")
    c0 = constant_adhm_solution(rep, geom, "trig")
    dphi = _rand(rep, geom, f3.spinor_fiber(rep))
    da = _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
    xi = _rand(rep, geom, f3.form_fiber(rep, 0, "g"))
    ts = np.linspace(0.05, 0.5, 6)
    defects, resids = [], []
    for t in ts:
        c = dgla.Configuration(c0.phi + t * dphi, c0.a + t * da)
        dd = dgla.delta(rep, p, c, dgla.delta(rep, p, c, dgla.GradedElement(f0=xi)))
        defects.append(dgla.graded_norm(rep, dd))
        resids.append(swop.sw_residual(rep, p, c).norm(rep))
    r = np.corrcoef(resids, defects)[0, 1] ** 2
    assert r > 0.999


@pytest.mark.parametrize("rep_name,params", [
    ("classical_sw", {}), ("adhm", {"r": 2, "k": 1})])
def test_leibniz(rep_name, params):
    rep, geom, p = _setup(rep_name, **params)
    # arbitrary (non-solution) configuration: the rule holds regardless
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    families = [("f0", "f0"), ("f0", "s1"), ("f0", "f1"), ("f0", "s2"),
                ("f0", "f2"), ("s1", "s1"), ("f1", "s1"), ("f1", "f1")]
    worst = 0.0
    for fam in families:
        for _ in range(5):
            x, y = _elem(rep, geom, fam[0]), _elem(rep, geom, fam[1])
            worst = max(worst, dgla.leibniz_defect(rep, p, c, x, y))
    assert worst < 1e-10
    x = _elem(rep, geom, "s1")
    assert dgla.leibniz_defect(rep, p, c, x, dgla.GradedElement()) == 0.0


def test_maurer_cartan_matches_residual():
    rep = qrep.builtin("adhm", r=2, k=1)
    geom = f3.TorusGeometry(6, np.eye(3))
    p = f3.flat_parameter(rep, geom, "trig")
    c = constant_adhm_solution(rep, geom, "trig")
    for scale in (0.05, 0.3):
        phi = scale * _rand(rep, geom, f3.spinor_fiber(rep))
        a = scale * _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
        x = dgla.GradedElement(s1=phi, f1=a)
        mc = dgla.maurer_cartan_residual(rep, p, c, x)
        moved = dgla.Configuration(c.phi + phi, c.a + a)
        rn = swop.sw_residual(rep, p, moved).norm(rep)
        assert abs(dgla.graded_norm(rep, mc) - rn) < 1e-10
    assert dgla.graded_norm(
        rep, dgla.maurer_cartan_residual(rep, p, c, dgla.GradedElement())) == 0.0


def test_maurer_cartan_requires_solution():
    rep, geom, p = _setup("classical_sw")
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    with pytest.raises(NotASolution):
        dgla.maurer_cartan_residual(rep, p, c, dgla.GradedElement())


def test_maurer_cartan_abelian_flat_formula():
    # at c = (0, flat) the residual is (-D phi - gb(a) phi, da + [a^a]/2 - mu(phi))
    rep, geom, p = _setup("classical_sw")
    phi0 = f3.Field.zeros(geom, f3.spinor_fiber(rep), "trig")
    a0 = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"), "trig")
    c = dgla.Configuration(phi0, a0)
    phi = _rand(rep, geom, f3.spinor_fiber(rep))
    a = _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
    mc = dgla.maurer_cartan_residual(rep, p, c, dgla.GradedElement(s1=phi, f1=a))
    conn = f3.Connection(a0, p.b)
    want_s = -1.0 * f3.dirac(rep, conn, phi) - f3.gamma_bar_apply(rep, a, phi)
    want_f = f3.exterior_d(rep, conn, a) + 0.5 * f3.wedge_bracket(rep, a, a) \
        - f3.moment_two_form(rep, phi)
    assert f3.l2_norm(rep, mc.get("s2") - want_s) < 1e-12
    assert f3.l2_norm(rep, mc.get("f2") - want_f) < 1e-12


def test_duality_pairing():
    rep, geom, p = _setup("adhm", r=2, k=1)
    c = dgla.Configuration(_rand(rep, geom, f3.spinor_fiber(rep)),
                           _rand(rep, geom, f3.form_fiber(rep, 1, "g")))
    worst = 0.0
    for _ in range(10):
        xi = _rand(rep, geom, f3.form_fiber(rep, 0, "g"))
        phi = _rand(rep, geom, f3.spinor_fiber(rep))
        a = _rand(rep, geom, f3.form_fiber(rep, 1, "g"))
        worst = max(worst, dgla.duality_defect(rep, p, c, xi, phi, a))
    assert worst < 1e-10
