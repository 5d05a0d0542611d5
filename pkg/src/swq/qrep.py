"""Quaternionic representation data and the hyperkaehler moment map.

Everything in this module is finite-dimensional, pointwise linear algebra:
a real inner-product space S with three anticommuting complex structures,
a compact gauge group G acting through real matrices inside Sp(S), an
optional flavor group K commuting with G, and the quadratic moment map
built from both.  All group data is given by explicit matrices and
structure constants; there is no symbolic Lie theory.

Conventions
-----------
* Quaternions are stored as real 4-vectors over the basis (1, i, j, k).
* mu(Phi) is valued in coefficient triples: comps[v][a] is the value of
  mu(Phi) on e_a (x) v for v in (i, j, k), dualized through the group
  metric, so that for the identity metric
      comps[v][a] = 0.5 * <J_v rho(e_a) Phi, Phi>.
* rho_star(u, w) is the g-vector with <rho_star(u,w), xi> = <u, rho(xi) w>,
  i.e. the pointwise dual of xi -> rho(xi) acting on the pair (u, w).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import AxiomViolation, DimensionMismatch, Unsupported

VALIDATION_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers

def quat_left(q):
    """Matrix of left multiplication by the quaternion q on (1,i,j,k)."""
    a, b, c, d = q
    return np.array([
        [a, -b, -c, -d],
        [b,  a, -d,  c],
        [c,  d,  a, -b],
        [d, -c,  b,  a]], dtype=float)


def quat_right(q):
    """Matrix of right multiplication by the quaternion q."""
    a, b, c, d = q
    return np.array([
        [a, -b, -c, -d],
        [b,  a,  d, -c],
        [c, -d,  a,  b],
        [d,  c, -b,  a]], dtype=float)


QUAT_1 = np.array([1.0, 0.0, 0.0, 0.0])
QUAT_I = np.array([0.0, 1.0, 0.0, 0.0])
QUAT_J = np.array([0.0, 0.0, 1.0, 0.0])
QUAT_K = np.array([0.0, 0.0, 0.0, 1.0])
IM_UNITS = (QUAT_I, QUAT_J, QUAT_K)


def _complex_to_quat(z):
    """Embed the complex number z = x + iy as the quaternion x + y i."""
    return np.array([z.real, z.imag, 0.0, 0.0])


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class ImVector:
    """An element of Im H, stored as the (i, j, k) coefficients."""
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, float))
        if self.components.shape != (3,):
            raise DimensionMismatch("ImVector needs exactly three components")

    @property
    def norm(self):
        return float(np.linalg.norm(self.components))


@dataclass(frozen=True)
class QuaternionicStructure:
    """Real vector space with three complex structures and an inner product."""
    J: np.ndarray                 # (3, d, d)
    inner: np.ndarray             # (d, d) SPD

    def __post_init__(self):
        J = np.asarray(self.J, float)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "inner", np.asarray(self.inner, float))
        if J.ndim != 3 or J.shape[0] != 3 or J.shape[1] != J.shape[2]:
            raise DimensionMismatch("J must have shape (3, d, d)")
        if self.inner.shape != J.shape[1:]:
            raise DimensionMismatch("inner product shape mismatch")

    @property
    def dim_S(self):
        return self.J.shape[1]


@dataclass(frozen=True)
class LieGroupData:
    """Lie algebra presented by structure constants and an invariant metric.

    structure[i, j, k] is the e_k coefficient of [e_i, e_j].
    """
    name: str
    structure: np.ndarray         # (dg, dg, dg)
    killing: np.ndarray           # (dg, dg) SPD, Ad-invariant

    def __post_init__(self):
        object.__setattr__(self, "structure", np.asarray(self.structure, float))
        object.__setattr__(self, "killing", np.asarray(self.killing, float))

    @property
    def dim_g(self):
        return self.structure.shape[0]

    def bracket(self, x, y):
        if self.dim_g == 0:
            return np.zeros(0)
        return np.einsum("ijk,i,j->k", self.structure, x, y)

    def ad(self, x):
        """Matrix of ad(x) = [x, .] on the algebra."""
        if self.dim_g == 0:
            return np.zeros((0, 0))
        return np.einsum("ijk,i->kj", self.structure, x)

    def ad_basis(self):
        return np.stack([self.ad(e) for e in np.eye(max(self.dim_g, 1))[: self.dim_g]]) \
            if self.dim_g else np.zeros((0, 0, 0))


def trivial_group(name="trivial"):
    return LieGroupData(name, np.zeros((0, 0, 0)), np.zeros((0, 0)))


@dataclass(frozen=True)
class QuaternionicRepresentation:
    """Validated algebraic datum: space, groups, and their actions on S."""
    space: QuaternionicStructure
    group_G: LieGroupData
    group_K: LieGroupData
    rho_G: np.ndarray             # (dg, d, d)
    rho_K: np.ndarray             # (dk, d, d)
    tags: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "rho_G", np.asarray(self.rho_G, float))
        object.__setattr__(self, "rho_K", np.asarray(self.rho_K, float))
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def dim_S(self):
        return self.space.dim_S

    @property
    def dim_g(self):
        return self.group_G.dim_g

    @property
    def dim_k(self):
        return self.group_K.dim_g

    def rho(self, xi):
        """Gauge action rho_G(xi) as a matrix on S."""
        if self.dim_g == 0:
            return np.zeros((self.dim_S, self.dim_S))
        return np.einsum("a,aij->ij", np.asarray(xi, float), self.rho_G)

    def rho_flavor(self, eta):
        if self.dim_k == 0:
            return np.zeros((self.dim_S, self.dim_S))
        return np.einsum("a,aij->ij", np.asarray(eta, float), self.rho_K)


@dataclass
class MomentValue:
    """Element of (g (x) Im H)* stored as three g-coefficient vectors."""
    comps: np.ndarray             # (3, dg)

    def __post_init__(self):
        self.comps = np.asarray(self.comps, float)

    def __add__(self, other):
        return MomentValue(self.comps + other.comps)

    def __sub__(self, other):
        return MomentValue(self.comps - other.comps)

    def __mul__(self, s):
        return MomentValue(self.comps * float(s))

    __rmul__ = __mul__

    def norm(self, group=None):
        if group is None or group.dim_g == 0:
            return float(np.linalg.norm(self.comps))
        return float(np.sqrt(np.einsum("va,ab,vb->", self.comps, group.killing, self.comps)))


# ---------------------------------------------------------------------------
# validation

def _axiom_defects(rep):
    """Max defect per axiom family; keys are stable identifiers."""
    s, d = rep.space, rep.dim_S
    J, G = s.J, s.inner
    eye = np.eye(d)
    out = {}

    out["inner_spd"] = float(np.abs(G - G.T).max())
    out["J_isometry"] = max(float(np.abs(J[i].T @ G @ J[i] - G).max()) for i in range(3))
    out["J_square"] = max(float(np.abs(J[i] @ J[i] + eye).max()) for i in range(3))
    cyc = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    out["quaternion_relations"] = max(
        float(np.abs(J[i] @ J[j] - J[k]).max()) for i, j, k in cyc)

    for label, grp, rho in (("G", rep.group_G, rep.rho_G), ("K", rep.group_K, rep.rho_K)):
        dg = grp.dim_g
        if dg == 0:
            out[f"rho_{label}_skew"] = 0.0
            out[f"rho_{label}_commutes_J"] = 0.0
            out[f"rho_{label}_homomorphism"] = 0.0
            out[f"lie_{label}_jacobi"] = 0.0
            out[f"lie_{label}_ad_invariance"] = 0.0
            continue
        out[f"rho_{label}_skew"] = max(
            float(np.abs(G @ rho[a] + rho[a].T @ G).max()) for a in range(dg))
        out[f"rho_{label}_commutes_J"] = max(
            float(np.abs(rho[a] @ J[i] - J[i] @ rho[a]).max())
            for a in range(dg) for i in range(3))
        c = grp.structure
        hom = 0.0
        for a in range(dg):
            for b in range(dg):
                lhs = rho[a] @ rho[b] - rho[b] @ rho[a]
                rhs = np.einsum("k,kij->ij", c[a, b], rho)
                hom = max(hom, float(np.abs(lhs - rhs).max()))
        out[f"rho_{label}_homomorphism"] = hom
        out[f"lie_{label}_antisymmetry"] = float(np.abs(c + c.transpose(1, 0, 2)).max())
        jac = 0.0
        eg = np.eye(dg)
        for a in range(dg):
            for b in range(dg):
                for cc in range(dg):
                    v = (grp.bracket(eg[a], grp.bracket(eg[b], eg[cc]))
                         + grp.bracket(eg[b], grp.bracket(eg[cc], eg[a]))
                         + grp.bracket(eg[cc], grp.bracket(eg[a], eg[b])))
                    jac = max(jac, float(np.abs(v).max()))
        out[f"lie_{label}_jacobi"] = jac
        kil = grp.killing
        adinv = 0.0
        for a in range(dg):
            ad = grp.ad(eg[a])
            adinv = max(adinv, float(np.abs(kil @ ad + ad.T @ kil).max()))
        out[f"lie_{label}_ad_invariance"] = adinv

    if rep.dim_g and rep.dim_k:
        out["G_K_commute"] = max(
            float(np.abs(rep.rho_G[a] @ rep.rho_K[b] - rep.rho_K[b] @ rep.rho_G[a]).max())
            for a in range(rep.dim_g) for b in range(rep.dim_k))
    else:
        out["G_K_commute"] = 0.0
    return out


def make_representation(space, group_G, rho_G, group_K=None, rho_K=None,
                        tags=(), name="custom", tol=VALIDATION_TOL):
    """Assemble and validate a representation; returns (rep, defect report).

    Raises AxiomViolation on the first axiom whose defect exceeds tol.
    """
    if group_K is None:
        group_K = trivial_group()
    if rho_K is None:
        rho_K = np.zeros((0, space.dim_S, space.dim_S))
    rho_G = np.asarray(rho_G, float)
    rho_K = np.asarray(rho_K, float)
    if rho_G.shape[1:] != (space.dim_S, space.dim_S):
        raise DimensionMismatch("rho_G matrices must act on S")
    if rho_K.size and rho_K.shape[1:] != (space.dim_S, space.dim_S):
        raise DimensionMismatch("rho_K matrices must act on S")
    rep = QuaternionicRepresentation(space, group_G, group_K, rho_G, rho_K, tags, name)
    report = _axiom_defects(rep)
    for axiom, defect in report.items():
        if defect > tol:
            raise AxiomViolation(axiom, defect)
    return rep, report


# ---------------------------------------------------------------------------
# built-in examples

def _normalize_basis(basis):
    """Unit-normalize in Re tr(X^H Y), making the metric the identity."""
    return [m / np.sqrt(np.real(np.trace(m.conj().T @ m))) for m in basis]


def _u_n_basis(n):
    """Orthonormal real basis of u(n) in the metric Re tr(X^H Y)."""
    basis = []
    for a in range(n):
        m = np.zeros((n, n), complex)
        m[a, a] = 1j
        basis.append(m)
    for a in range(n):
        for b in range(a + 1, n):
            m = np.zeros((n, n), complex)
            m[a, b], m[b, a] = 1.0, -1.0
            basis.append(m)
            m = np.zeros((n, n), complex)
            m[a, b], m[b, a] = 1j, 1j
            basis.append(m)
    return _normalize_basis(basis)


def _su_n_basis(n):
    """Orthonormal basis of the traceless part of u(n)."""
    if n < 2:
        return []
    basis = []
    for a in range(n - 1):
        m = np.zeros((n, n), complex)
        m[a, a], m[a + 1, a + 1] = 1j, -1j
        basis.append(m)
    for a in range(n):
        for b in range(a + 1, n):
            m = np.zeros((n, n), complex)
            m[a, b], m[b, a] = 1.0, -1.0
            basis.append(m)
            m = np.zeros((n, n), complex)
            m[a, b], m[b, a] = 1j, 1j
            basis.append(m)
    return _normalize_basis(basis)


def _group_from_matrix_basis(name, basis):
    """Structure constants and metric from an explicit matrix Lie algebra."""
    dg = len(basis)
    if dg == 0:
        return trivial_group(name)
    flat = np.stack([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in basis])
    gram = flat @ flat.T
    structure = np.zeros((dg, dg, dg))
    for a in range(dg):
        for b in range(dg):
            comm = basis[a] @ basis[b] - basis[b] @ basis[a]
            vec = np.concatenate([comm.real.ravel(), comm.imag.ravel()])
            structure[a, b] = np.linalg.solve(gram, flat @ vec)
    killing = gram
    return LieGroupData(name, structure, killing)


def _hyperkaehler_space(n_quat):
    """n_quat copies of the quaternions with left multiplication."""
    d = 4 * n_quat
    J = np.zeros((3, d, d))
    for i, unit in enumerate(IM_UNITS):
        m = quat_left(unit)
        for b in range(n_quat):
            J[i, 4 * b:4 * b + 4, 4 * b:4 * b + 4] = m
    return QuaternionicStructure(J, np.eye(d))


def _right_complex_block(rep_dim, z):
    """Right multiplication by the complex scalar z on one quaternion slot."""
    return quat_right(_complex_to_quat(z))


def _builtin_classical_sw():
    space = _hyperkaehler_space(1)
    group = LieGroupData("u(1)", np.zeros((1, 1, 1)), np.eye(1))
    rho_G = quat_right(QUAT_I)[None]
    return make_representation(space, group, rho_G,
                               tags=({"kind": "complex-induced", "group": "U(1)"},),
                               name="classical_sw")[0]


def _builtin_u_n_monopole(n):
    space = _hyperkaehler_space(n)
    basis = _u_n_basis(n)
    group = _group_from_matrix_basis(f"u({n})", basis)
    d = 4 * n
    rho_G = np.zeros((len(basis), d, d))
    for idx, A in enumerate(basis):
        for a in range(n):
            for b in range(n):
                z = A[a, b]
                if z != 0:
                    rho_G[idx, 4 * a:4 * a + 4, 4 * b:4 * b + 4] += _right_complex_block(n, z)
    return make_representation(space, group, rho_G,
                               tags=({"kind": "complex-induced", "group": f"U({n})"},),
                               name=f"u_{n}_monopole")[0]


def _su2_group():
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k], eps[j, i, k] = 1.0, -1.0
    return LieGroupData("su(2)", eps, np.eye(3))


def _builtin_adjoint_flat(which):
    if which in ("u1", "u(1)"):
        group = LieGroupData("u(1)", np.zeros((1, 1, 1)), np.eye(1))
    elif which in ("su2", "su(2)"):
        group = _su2_group()
    else:
        raise Unsupported(f"adjoint_flat group '{which}'")
    dg = group.dim_g
    space = _hyperkaehler_space(dg)
    d = 4 * dg
    rho_G = np.zeros((dg, d, d))
    eye4 = np.eye(4)
    for a in range(dg):
        ad = group.ad(np.eye(dg)[a])
        # slot layout: component (b*4 + q) is the quaternion coefficient q of e_b
        for b in range(dg):
            for c in range(dg):
                if ad[c, b] != 0:
                    rho_G[a, 4 * c:4 * c + 4, 4 * b:4 * b + 4] += ad[c, b] * eye4
    return make_representation(space, group, rho_G,
                               tags=({"kind": "real-induced", "group": group.name},),
                               name=f"adjoint_flat_{group.name}")[0]


def _builtin_adhm(r, k):
    """ADHM datum: S = Hom(C^r, H (x) C^k) + H (x) u(k), G = U(k).

    Component layout, quaternion coefficients innermost:
      block 1: index ((a * r + j) * 4 + q), a < k, j < r   (matrix entry a,j)
      block 2: index (4 r k + m * 4 + q), m < k^2          (u(k) basis slot m)
    """
    if r < 1 or k < 1:
        raise Unsupported("adhm needs r >= 1, k >= 1")
    d1, dk2 = 4 * r * k, k * k
    d = d1 + 4 * dk2
    J = np.zeros((3, d, d))
    for i, unit in enumerate(IM_UNITS):
        m = quat_left(unit)
        for b in range(r * k + dk2):
            J[i, 4 * b:4 * b + 4, 4 * b:4 * b + 4] = m
    space = QuaternionicStructure(J, np.eye(d))

    uk_basis = _u_n_basis(k)
    group_G = _group_from_matrix_basis(f"u({k})", uk_basis)

    def b1(a, j):
        return 4 * (a * r + j)

    def b2(m):
        return d1 + 4 * m

    rho_G = np.zeros((len(uk_basis), d, d))
    for idx, A in enumerate(uk_basis):
        for a in range(k):
            for b in range(k):
                z = A[a, b]
                if z != 0:
                    blk = _right_complex_block(k, z)
                    for j in range(r):
                        rho_G[idx, b1(a, j):b1(a, j) + 4, b1(b, j):b1(b, j) + 4] += blk
        ad = group_G.ad(np.eye(len(uk_basis))[idx])
        for mo in range(dk2):
            for mi in range(dk2):
                if ad[mo, mi] != 0:
                    rho_G[idx, b2(mo):b2(mo) + 4, b2(mi):b2(mi) + 4] += ad[mo, mi] * np.eye(4)

    sur_basis = _su_n_basis(r)
    flavor_mats = []
    for B in sur_basis:
        M = np.zeros((d, d))
        for l in range(r):
            for j in range(r):
                z = B[l, j]
                if z != 0:
                    blk = -quat_right(_complex_to_quat(z))
                    for a in range(k):
                        M[b1(a, j):b1(a, j) + 4, b1(a, l):b1(a, l) + 4] += blk
        flavor_mats.append(M)
    for unit in IM_UNITS:
        M = np.zeros((d, d))
        for m in range(dk2):
            M[b2(m):b2(m) + 4, b2(m):b2(m) + 4] = -quat_right(unit)
        flavor_mats.append(M)

    sur_group = _group_from_matrix_basis(f"su({r})", sur_basis)
    sp1 = _su2_group()
    dk = sur_group.dim_g + 3
    structure = np.zeros((dk, dk, dk))
    ns = sur_group.dim_g
    structure[:ns, :ns, :ns] = sur_group.structure
    structure[ns:, ns:, ns:] = _sp1_structure()
    killing = np.eye(dk)
    if ns:
        killing[:ns, :ns] = sur_group.killing
    group_K = LieGroupData(f"su({r})+sp(1)", structure, killing)
    rho_K = np.stack(flavor_mats) if flavor_mats else np.zeros((0, d, d))
    tags = ({"kind": "complex-induced", "group": f"U({k})"},
            {"kind": "real-induced", "group": f"U({k})"})
    return make_representation(space, group_G, rho_G, group_K, rho_K,
                               tags=tags, name=f"adhm_{r}_{k}")[0]


def _sp1_structure():
    """sp(1) = Im H with basis (i, j, k): [i, j] = 2k cyclic."""
    c = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        c[i, j, k], c[j, i, k] = 2.0, -2.0
    return c


_BUILTIN_CACHE = {}


def builtin(name, **params):
    """Construct one of the built-in representations (cached)."""
    key = (name, tuple(sorted(params.items())))
    if key in _BUILTIN_CACHE:
        return _BUILTIN_CACHE[key]
    if name == "classical_sw":
        rep = _builtin_classical_sw()
    elif name == "u_n_monopole":
        n = int(params.get("n", 1))
        if n < 1:
            raise Unsupported("u_n_monopole needs n >= 1")
        rep = _builtin_u_n_monopole(n)
    elif name == "adjoint_flat":
        rep = _builtin_adjoint_flat(params.get("group", "su2"))
    elif name == "adhm":
        rep = _builtin_adhm(int(params.get("r", 2)), int(params.get("k", 1)))
    else:
        raise Unsupported(f"unknown builtin '{name}'")
    _BUILTIN_CACHE[key] = rep
    return rep


# ---------------------------------------------------------------------------
# pointwise operations

def clifford(rep, v, s):
    """gamma(v) s = sum_i v_i J_i s for v in Im H."""
    v = v.components if isinstance(v, ImVector) else np.asarray(v, float)
    s = np.asarray(s, float)
    if v.shape != (3,) or s.shape[-1] != rep.dim_S:
        raise DimensionMismatch("clifford: shape mismatch")
    return np.einsum("i,ijk,...k->...j", v, rep.space.J, s)


def gamma_bar(rep, a):
    """gamma-bar of a g-valued Im H covector: sum_i J_i rho(a_i) as a matrix.

    a has shape (3, dg) in an orthonormal coframe.
    """
    a = np.asarray(a, float)
    if a.shape != (3, rep.dim_g):
        raise DimensionMismatch("gamma_bar: expected (3, dim_g) coefficients")
    m = np.zeros((rep.dim_S, rep.dim_S))
    for i in range(3):
        m += rep.space.J[i] @ rep.rho(a[i])
    return m


def moment_polar(rep, s1, s2):
    """Symmetric bilinear polarization of the moment map."""
    s1 = np.asarray(s1, float)
    s2 = np.asarray(s2, float)
    if s1.shape != (rep.dim_S,) or s2.shape != (rep.dim_S,):
        raise DimensionMismatch("moment_polar: vectors must live in S")
    G = rep.space.inner
    raw = np.empty((3, rep.dim_g))
    for i in range(3):
        for a in range(rep.dim_g):
            raw[i, a] = 0.5 * (rep.space.J[i] @ rep.rho_G[a] @ s1) @ (G @ s2)
    comps = np.linalg.solve(rep.group_G.killing, raw.T).T if rep.dim_g else raw
    return MomentValue(comps)


def moment_map(rep, s):
    """mu(s): quadratic hyperkaehler moment map, as coefficient triples."""
    return moment_polar(rep, s, s)


def regularity_margin(rep, s):
    """Smallest singular value of (xi, v) -> gamma(v) rho(xi) s.

    Positive exactly on the open cone of regular points; scales linearly
    in |s|.
    """
    s = np.asarray(s, float)
    if rep.dim_g == 0:
        return 0.0
    cols = np.empty((rep.dim_S, 3 * rep.dim_g))
    for i in range(3):
        for a in range(rep.dim_g):
            cols[:, i * rep.dim_g + a] = rep.space.J[i] @ rep.rho_G[a] @ s
    return float(np.linalg.svd(cols, compute_uv=False)[-1])


def is_numerically_regular(rep, s, rel_tol=1e-8):
    """Scale-aware regularity test: margin > rel_tol * |s|."""
    n = float(np.linalg.norm(s))
    return n > 0 and regularity_margin(rep, s) > rel_tol * n


def rho_star(rep, u, w):
    """g-vector pairing <rho_star(u, w), xi> = <u, rho(xi) w>."""
    u = np.asarray(u, float)
    w = np.asarray(w, float)
    G = rep.space.inner
    raw = np.array([(u @ G @ (rep.rho_G[a] @ w)) for a in range(rep.dim_g)])
    if rep.dim_g == 0:
        return raw
    return np.linalg.solve(rep.group_G.killing, raw)


def pointwise_identity_defect(kind, rep, inputs):
    """Defect of one of the derivative-free moment-map identities.

    kind 'XiMu':  [xi, mu(phi,psi)] - mu(phi, rho(xi)psi) - mu(psi, rho(xi)phi)
    kind 'AMu':   2 sum_i [a_i, mu(phi,psi)_i] + rho_star(gb(a)phi, psi)
                  + rho_star(gb(a)psi, phi), with a an Im H coefficient triple.
    """
    if kind == "XiMu":
        xi, phi, psi = inputs
        xi = np.asarray(xi, float)
        m = moment_polar(rep, phi, psi)
        ad = rep.group_G.ad(xi)
        lhs = MomentValue(m.comps @ ad.T)
        rhs = moment_polar(rep, phi, rep.rho(xi) @ psi) + moment_polar(rep, psi, rep.rho(xi) @ phi)
        return (lhs - rhs).norm(rep.group_G)
    if kind == "AMu":
        a, phi, psi = inputs
        a = np.asarray(a, float)
        if a.shape != (3, rep.dim_g):
            raise DimensionMismatch("AMu: a must be a (3, dim_g) coefficient triple")
        m = moment_polar(rep, phi, psi)
        lhs = np.zeros(rep.dim_g)
        for i in range(3):
            lhs += 2.0 * rep.group_G.bracket(a[i], m.comps[i])
        gb = gamma_bar(rep, a)
        rhs = -(rho_star(rep, gb @ phi, psi) + rho_star(rep, gb @ psi, phi))
        diff = lhs - rhs
        if rep.dim_g == 0:
            return 0.0
        return float(np.sqrt(diff @ rep.group_G.killing @ diff))
    raise Unsupported(f"unknown identity '{kind}'")


def ad_group_transport(group, xi, t=1.0):
    """Matrix of Ad(exp(t xi)) on the algebra."""
    if group.dim_g == 0:
        return np.zeros((0, 0))
    return expm(t * group.ad(xi))


def exp_action(rep, xi, t=1.0):
    """Matrix of the one-parameter gauge action exp(t rho(xi)) on S."""
    return expm(t * rep.rho(np.asarray(xi, float)))


# ---------------------------------------------------------------------------
# orientation certificate

_RULES = {
    "complex-induced": "2c2(E) - c1(E)^2",
    "real-induced": "-2p1(E)",
}


def orientation_certificate(rep):
    """Conservative parity certificate from the construction tags.

    Every summand tagged complex-induced or real-induced contributes an
    even class by the corresponding rule; any other tag (or no tags)
    yields even=False with witness 'no rule applies'.
    """
    if not rep.tags:
        return {"even": False, "witness": "no rule applies"}
    parts = []
    for tag in rep.tags:
        kind = tag.get("kind") if isinstance(tag, dict) else str(tag)
        rule = _RULES.get(kind)
        if rule is None:
            return {"even": False, "witness": "no rule applies"}
        parts.append(rule)
    return {"even": True, "witness": " + ".join(parts)}


# ---------------------------------------------------------------------------
# moment-map zero sampling

def _moment_rows_tensor(rep):
    """Stacked matrices P[i*dg+a] = inner @ J_i @ rho_a (gradient rows)."""
    dg = rep.dim_g
    P = np.empty((3 * dg, rep.dim_S, rep.dim_S))
    for i in range(3):
        for a in range(dg):
            P[i * dg + a] = rep.space.inner @ rep.space.J[i] @ rep.rho_G[a]
    return P


def sample_moment_zero(rep, rng, max_iter=500, accept_tol=1e-10):
    """Projected gradient descent of |mu|^2 on the unit sphere.

    The zero set is a cone, so iterates are kept at unit norm; a
    Gauss-Newton polish is attempted once the residual is small.
    Returns a unit-norm endpoint (accepted iff |mu| < accept_tol) or None.
    """
    x = rng.standard_normal(rep.dim_S)
    x /= np.linalg.norm(x)
    P = _moment_rows_tensor(rep)

    def raw_mu(v):
        # un-dualized components 0.5 <J_i rho_a v, v>; same zero set as mu
        return 0.5 * (P @ v) @ v

    # polish to stagnation (not merely below the acceptance threshold) so
    # that degenerate flat directions are driven to machine scale
    for _ in range(max_iter):
        rows = P @ x
        m = 0.5 * rows @ x
        f = float(m @ m)
        if f == 0.0:
            break
        # Gauss-Newton step first (fast on degenerate flats); accept on decrease
        A = rows @ rows.T + 1e-14 * np.trace(rows @ rows.T) * np.eye(rows.shape[0])
        try:
            cand = x + rows.T @ np.linalg.solve(A, -m)
            cand /= np.linalg.norm(cand)
            mc = raw_mu(cand)
            if mc @ mc < 0.81 * f:
                x = cand
                continue
        except np.linalg.LinAlgError:
            pass
        g = 2.0 * rows.T @ m
        g -= (g @ x) * x
        t = 0.5
        improved = False
        while t > 1e-14:
            cand = x - t * g
            cand /= np.linalg.norm(cand)
            mc = raw_mu(cand)
            if mc @ mc < f * (1.0 - 1e-4 * t):
                x = cand
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    m = raw_mu(x)
    return x if np.linalg.norm(m) < accept_tol else None


def moment_zero_statistics(rep, n_samples, seed=0, reg_tol=1e-8):
    """Sample zeros and count the numerically regular ones."""
    rng = np.random.default_rng(seed)
    found = regular = 0
    example_regular = None
    for _ in range(n_samples):
        z = sample_moment_zero(rep, rng)
        if z is None:
            continue
        found += 1
        if is_numerically_regular(rep, z, reg_tol):
            regular += 1
            if example_regular is None:
                example_regular = z
    return {"samples": n_samples, "zeros": found, "regular": regular,
            "example_regular": example_regular}


# ---------------------------------------------------------------------------
# JSON loading

def representation_from_json(doc):
    """Build a representation from its JSON description.

    Schema: {"dim_S": int, "J": [3][d*d row-major], "inner": [d*d]?,
             "group_G": {"name": str, "structure": [dg*dg*dg], "killing": [dg*dg]},
             "rho_G": [dg][d*d], "group_K": {...}?, "rho_K": [...]?,
             "tags": [{"kind": ...}]}
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    d = int(doc["dim_S"])
    J = np.asarray(doc["J"], float).reshape(3, d, d)
    inner = np.asarray(doc.get("inner", np.eye(d).ravel().tolist()), float).reshape(d, d)
    space = QuaternionicStructure(J, inner)

    def load_group(gdoc):
        if gdoc is None:
            return trivial_group()
        dg = int(gdoc["dim_g"])
        structure = np.asarray(gdoc["structure"], float).reshape(dg, dg, dg)
        killing = np.asarray(gdoc.get("killing", np.eye(dg).ravel().tolist()), float).reshape(dg, dg)
        return LieGroupData(gdoc.get("name", "g"), structure, killing)

    group_G = load_group(doc["group_G"])
    rho_G = np.asarray(doc["rho_G"], float).reshape(group_G.dim_g, d, d)
    group_K = load_group(doc.get("group_K"))
    rho_K = np.asarray(doc.get("rho_K", []), float).reshape(group_K.dim_g, d, d) \
        if group_K.dim_g else np.zeros((0, d, d))
    tags = tuple(doc.get("tags", ()))
    rep, report = make_representation(space, group_G, rho_G, group_K, rho_K,
                                      tags=tags, name=doc.get("name", "json"))
    return rep, report
