"""The graded deformation algebra of the gauged spinor equations.

Degrees 0..3 hold g-valued forms together with spinor summands in degrees
one and two:

    L0 = g 0-forms
    L1 = spinors (+) g 1-forms
    L2 = spinors (+) g 2-forms
    L3 = g 3-forms

The bracket dispatches on explicit slot tags because the spinor space
appears in two degrees; all pointwise rules are exact, and the derivative
rules are exact on band-limited data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field3 as f3
from .errors import BackendMismatch, DimensionMismatch, NotASolution

_SLOT_DEGREE = {"f0": 0, "s1": 1, "f1": 1, "s2": 2, "f2": 2, "f3": 3}
_FORM_DEGREE = {"f0": 0, "f1": 1, "f2": 2, "f3": 3}


@dataclass(frozen=True)
class Configuration:
    """A pair c = (Phi, A): spinor field plus gauge offset 1-form."""
    phi: object
    a: object

    def connection(self, p):
        return f3.Connection(self.a, p.b)


class GradedElement:
    """Element of the graded algebra; missing slots are zero."""

    __slots__ = ("slots",)

    def __init__(self, **slots):
        self.slots = {k: v for k, v in slots.items() if v is not None}
        for k in self.slots:
            if k not in _SLOT_DEGREE:
                raise DimensionMismatch(f"unknown slot '{k}'")

    @classmethod
    def of_degree(cls, degree, spinor=None, form=None):
        slots = {}
        if spinor is not None:
            if degree not in (1, 2):
                raise DimensionMismatch("spinor summands live in degrees 1 and 2")
            slots[f"s{degree}"] = spinor
        if form is not None:
            slots[f"f{degree}"] = form
        return cls(**slots)

    def get(self, key):
        return self.slots.get(key)

    def degrees(self):
        return sorted({_SLOT_DEGREE[k] for k in self.slots})

    def is_homogeneous(self):
        return len(self.degrees()) <= 1

    def degree(self):
        degs = self.degrees()
        if len(degs) != 1:
            raise DimensionMismatch("element is not homogeneous")
        return degs[0]

    def __add__(self, other):
        out = dict(self.slots)
        for k, v in other.slots.items():
            out[k] = out[k] + v if k in out else v
        return GradedElement(**out)

    def __mul__(self, s):
        return GradedElement(**{k: v * float(s) for k, v in self.slots.items()})

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return self * -1.0


def graded_norm(rep, x):
    """Square root of the summed squared L^2 norms of all slots."""
    return float(np.sqrt(sum(f3.l2_norm(rep, v) ** 2 for v in x.slots.values())))


# ---------------------------------------------------------------------------
# bracket

def _rho_apply(rep, xi, phi):
    T = rep.rho_G.transpose(1, 0, 2) if rep.dim_g else np.zeros((rep.dim_S, 0, rep.dim_S))
    return f3.pw_bilinear(T, xi, phi, phi.fiber)


def _pair_bracket(rep, key_x, vx, key_y, vy):
    """Bracket of two homogeneous slot values; None when it vanishes."""
    px, py = _SLOT_DEGREE[key_x], _SLOT_DEGREE[key_y]
    sx, sy = key_x.startswith("s"), key_y.startswith("s")
    if not sx and not sy:
        if px + py > 3:
            return None
        return (f"f{px + py}", f3.wedge_bracket(rep, vx, vy))
    if sx and sy:
        if px == 1 and py == 1:
            return ("f2", -2.0 * f3.moment_two_form(rep, vx, vy))
        if px == 1 and py == 2:
            return ("f3", -1.0 * f3.hodge(rep, f3.rho_star_pair(rep, vx, vy)))
        if px == 2 and py == 1:
            # graded antisymmetry: [x2, y1] = -(-1)^2 [y1, x2]
            return ("f3", f3.hodge(rep, f3.rho_star_pair(rep, vy, vx)))
        return None
    if sx:  # swap so the form argument comes first
        res = _pair_bracket(rep, key_y, vy, key_x, vx)
        if res is None:
            return None
        key, val = res
        return (key, -((-1.0) ** (px * py)) * val)
    # form (x) spinor
    if px == 0:
        return (key_y, _rho_apply(rep, vx, vy))
    if px == 1 and py == 1:
        return ("s2", -1.0 * f3.gamma_bar_apply(rep, vx, vy))
    return None


def bracket(rep, x, y):
    """Graded skew bilinear bracket; zero on all undeclared slot pairs."""
    backends = {v.backend for v in list(x.slots.values()) + list(y.slots.values())}
    if len(backends) > 1:
        raise BackendMismatch("bracket needs a single backend")
    acc = {}
    for kx, vx in x.slots.items():
        for ky, vy in y.slots.items():
            res = _pair_bracket(rep, kx, vx, ky, vy)
            if res is None:
                continue
            key, val = res
            acc[key] = acc[key] + val if key in acc else val
    return GradedElement(**acc)


def jacobi_defect(rep, x, y, z):
    """Norm of the graded Jacobi combination on homogeneous elements."""
    px, py, pz = x.degree(), y.degree(), z.degree()
    t1 = ((-1.0) ** (px * pz)) * bracket(rep, x, bracket(rep, y, z))
    t2 = ((-1.0) ** (py * px)) * bracket(rep, y, bracket(rep, z, x))
    t3 = ((-1.0) ** (pz * py)) * bracket(rep, z, bracket(rep, x, y))
    return graded_norm(rep, t1 + t2 + t3)


# ---------------------------------------------------------------------------
# differential

def delta(rep, p, c, x):
    """Degree-one differential attached to the configuration c = (Phi, A)."""
    conn = c.connection(p)
    acc = {}

    def add(key, val):
        acc[key] = acc[key] + val if key in acc else val

    xi = x.get("f0")
    if xi is not None:
        add("s1", -1.0 * _rho_apply(rep, xi, c.phi))
        add("f1", f3.exterior_d(rep, conn, xi))
    phi = x.get("s1")
    if phi is not None:
        add("s2", -1.0 * f3.dirac(rep, conn, phi))
        add("f2", -2.0 * f3.moment_two_form(rep, c.phi, phi))
    a = x.get("f1")
    if a is not None:
        add("s2", -1.0 * f3.gamma_bar_apply(rep, a, c.phi))
        add("f2", f3.exterior_d(rep, conn, a))
    psi = x.get("s2")
    if psi is not None:
        add("f3", f3.hodge(rep, f3.rho_star_pair(rep, psi, c.phi)))
    b = x.get("f2")
    if b is not None:
        add("f3", f3.exterior_d(rep, conn, b))
    return GradedElement(**acc)


def delta_squared_closed_form(rep, p, c, x):
    """The exact value of delta(delta(x)) in terms of the equation residual.

    For x = xi in degree zero this is (rho(xi) D_A Phi, [F - mu, xi]);
    for x = (phi, a) in degree one it is *rho_star((D_A Phi) phi*)
    + [(F - mu) ^ a].  Vanishes exactly at solutions.
    """
    conn = c.connection(p)
    dphi = f3.dirac(rep, conn, c.phi)
    resid2 = f3.curvature(rep, conn) - f3.moment_two_form(rep, c.phi)
    acc = {}
    xi = x.get("f0")
    if xi is not None:
        acc["s2"] = _rho_apply(rep, xi, dphi)
        acc["f2"] = f3.wedge_bracket(rep, resid2, xi) * -1.0
    phi = x.get("s1")
    a = x.get("f1")
    if phi is not None or a is not None:
        t = None
        if phi is not None:
            t = f3.hodge(rep, f3.rho_star_pair(rep, dphi, phi))
        if a is not None:
            w = f3.wedge_bracket(rep, resid2, a)
            t = w if t is None else t + w
        acc["f3"] = t
    return GradedElement(**acc)


def leibniz_defect(rep, p, c, x, y):
    """Norm of delta[x,y] - [delta x, y] - (-1)^deg(x) [x, delta y]."""
    px = x.degree()
    d = delta(rep, p, c, bracket(rep, x, y)) \
        - bracket(rep, delta(rep, p, c, x), y) \
        - ((-1.0) ** px) * bracket(rep, x, delta(rep, p, c, y))
    return graded_norm(rep, d)


# ---------------------------------------------------------------------------
# Maurer-Cartan correspondence

def _sw_residual_parts(rep, p, c):
    conn = c.connection(p)
    spinor = f3.dirac(rep, conn, c.phi)
    two_form = f3.curvature(rep, conn) - f3.moment_two_form(rep, c.phi)
    return spinor, two_form


def maurer_cartan_residual(rep, p, c, x, tol_c=1e-9):
    """delta_c(x) + 0.5 [x, x] for a degree-one x at a solution c.

    Its graded norm agrees with the equation residual norm of c + x.
    """
    s, t = _sw_residual_parts(rep, p, c)
    base = np.sqrt(f3.l2_norm(rep, s) ** 2 + f3.l2_norm(rep, t) ** 2)
    if base > tol_c:
        raise NotASolution(f"base configuration residual {base:.3e} exceeds {tol_c:.1e}")
    return delta(rep, p, c, x) + 0.5 * bracket(rep, x, x)


def duality_defect(rep, p, c, xi, phi, a):
    """Pairing mismatch between the degree-zero differential and the
    star-dressed degree-two one: <delta0 xi, (phi,a)> - <xi, dual(phi,a)>."""
    d0 = delta(rep, p, c, GradedElement(f0=xi))
    lhs = f3.l2_inner(rep, d0.get("s1"), phi) + f3.l2_inner(rep, d0.get("f1"), a)
    conn = c.connection(p)
    # dual operator: -*(delta2 applied to (phi, *a))
    psi, b = phi, f3.hodge(rep, a)
    d2 = f3.hodge(rep, f3.rho_star_pair(rep, psi, c.phi)) + f3.exterior_d(rep, conn, b)
    dual = -1.0 * f3.hodge(rep, d2)
    rhs = f3.l2_inner(rep, xi, dual)
    return abs(lhs - rhs)
