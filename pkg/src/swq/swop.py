"""Residual maps, linearizations, and gauge fixing for the gauged
spinor equations on the flat 3-torus.

The extended residual comes in three modes sharing one L + Q + e shape:

* ``SW``   - the gauge-fixed equation away from the degenerate limit,
             unknowns (phi, a, xi), outputs (spinor, 1-form, 0-form);
* ``Zero`` - the normalized limit system (no curvature term), with the
             extra scalar row enforcing the unit sphere;
* ``Eps``  - the eps-rescaled system interpolating between the two, with
             derivative blocks carrying the eps^2 weight.

Output 2-form rows are stored in their metric-dual 1-form components so
that the linearizations act on and into triples of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field3 as f3
from .dgla import Configuration
from .errors import BackendMismatch, ModeMismatch, NoConvergence

__all__ = [
    "Configuration", "TangentTriple", "ResidualBundle", "sw_residual",
    "blown_up_residual", "SWLinearization", "linearization",
    "extended_residual", "gauge_transform", "gauge_fix_to_slice",
    "TripleSpace",
]


@dataclass(frozen=True)
class TangentTriple:
    """Perturbation (phi, a, xi): spinor, g 1-form, g 0-form."""
    phi: object
    a: object
    xi: object

    def __add__(self, other):
        return TangentTriple(self.phi + other.phi, self.a + other.a,
                             self.xi + other.xi)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, s):
        return TangentTriple(self.phi * s, self.a * s, self.xi * s)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, rep, geom, backend="lattice", max_freq=0):
        return cls(f3.Field.zeros(geom, f3.spinor_fiber(rep), backend, max_freq),
                   f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"), backend, max_freq),
                   f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"), backend, max_freq))

    def weighted_norm(self, rep, eps, level=0):
        return f3.weighted_triple_norm(rep, self.phi, self.a, self.xi, eps, level)

    def l2_norm(self, rep):
        return float(np.sqrt(f3.l2_norm(rep, self.phi) ** 2
                             + f3.l2_norm(rep, self.a) ** 2
                             + f3.l2_norm(rep, self.xi) ** 2))


@dataclass(frozen=True)
class ResidualBundle:
    """Residual components; unused slots are None."""
    spinor: object = None
    form: object = None          # g-valued form row (degree in its fiber)
    zero_form: object = None
    scalar: float = None

    def norm(self, rep):
        total = 0.0
        for v in (self.spinor, self.form, self.zero_form):
            if v is not None:
                total += f3.l2_norm(rep, v) ** 2
        if self.scalar is not None:
            total += float(self.scalar) ** 2
        return float(np.sqrt(total))


def sw_residual(rep, p, c):
    """(D_A Phi, F_A - mu(Phi)) with the curvature row as a 2-form."""
    conn = c.connection(p)
    spinor = f3.dirac(rep, conn, c.phi)
    two_form = f3.curvature(rep, conn) - f3.moment_two_form(rep, c.phi)
    return ResidualBundle(spinor=spinor, form=two_form)


def blown_up_residual(rep, p, eps, c):
    """(D_A Phi, eps^2 F_A - mu(Phi), |Phi|^2_{L2} - 1)."""
    conn = c.connection(p)
    spinor = f3.dirac(rep, conn, c.phi)
    two_form = (eps ** 2) * f3.curvature(rep, conn) - f3.moment_two_form(rep, c.phi)
    scalar = f3.l2_norm(rep, c.phi) ** 2 - 1.0
    return ResidualBundle(spinor=spinor, form=two_form, scalar=scalar)


# ---------------------------------------------------------------------------
# linearizations

class SWLinearization:
    """Linear operator on perturbation triples, in one of three modes.

    Mode 'Lc' is the formally self-adjoint gauge/co-gauge fixed operator;
    modes 'L0' and 'Leps' append the scalar normalization row and carry
    the eps^2-weighted derivative blocks on (a, xi).
    """

    def __init__(self, rep, p, c0, mode, eps=None):
        if mode not in ("Lc", "L0", "Leps"):
            raise ModeMismatch(f"unknown mode '{mode}'")
        if mode == "Leps":
            if eps is None or eps <= 0:
                raise ModeMismatch("mode Leps requires eps > 0")
        else:
            eps = None
        self.rep, self.p, self.c0, self.mode, self.eps = rep, p, c0, mode, eps
        self.conn = c0.connection(p)

    def apply(self, t):
        rep, conn, c0 = self.rep, self.conn, self.c0
        row1 = -1.0 * f3.dirac(rep, conn, t.phi) \
            - f3.gamma_bar_apply(rep, t.a, c0.phi) \
            - _rho_apply(rep, t.xi, c0.phi)
        mu_row = -2.0 * f3.moment_one_form(rep, c0.phi, t.phi)
        rho_row = -1.0 * f3.rho_star_pair(rep, t.phi, c0.phi)
        if self.mode == "Lc":
            row2 = mu_row + f3.hodge(rep, f3.exterior_d(rep, conn, t.a)) \
                + f3.exterior_d(rep, conn, t.xi)
            row3 = rho_row + f3.exterior_d(rep, conn, t.a, adjoint=True)
            return ResidualBundle(spinor=row1, form=row2, zero_form=row3)
        w = 1.0 if self.eps is None else self.eps ** 2
        if self.mode == "L0":
            row2, row3 = mu_row, rho_row
        else:
            row2 = mu_row + w * (f3.hodge(rep, f3.exterior_d(rep, conn, t.a))
                                 + f3.exterior_d(rep, conn, t.xi))
            row3 = rho_row + w * f3.exterior_d(rep, conn, t.a, adjoint=True)
        scalar = 2.0 * f3.l2_inner(rep, c0.phi, t.phi)
        return ResidualBundle(spinor=row1, form=row2, zero_form=row3, scalar=scalar)


def linearization(rep, p, c0, mode, eps=None):
    return SWLinearization(rep, p, c0, mode, eps)


def _rho_apply(rep, xi, phi):
    T = rep.rho_G.transpose(1, 0, 2) if rep.dim_g else np.zeros((rep.dim_S, 0, rep.dim_S))
    return f3.pw_bilinear(T, xi, phi, phi.fiber)


def quadratic_part(rep, p, c0, t, mode, eps=None):
    """The purely quadratic term Q(t) of the extended residual."""
    rep_ = rep
    row1 = -1.0 * f3.gamma_bar_apply(rep_, t.a, t.phi)
    mu_t = f3.moment_one_form(rep_, t.phi)
    if mode == "SW":
        br = 0.5 * f3.wedge_bracket(rep_, t.a, t.a)
        row2 = f3.hodge(rep_, br) - mu_t
        return ResidualBundle(spinor=row1, form=row2,
                              zero_form=_zero_form_like(rep_, t))
    if mode == "Zero":
        return ResidualBundle(spinor=row1, form=-1.0 * mu_t,
                              zero_form=_zero_form_like(rep_, t),
                              scalar=f3.l2_norm(rep_, t.phi) ** 2)
    if mode == "Eps":
        br = (0.5 * eps ** 2) * f3.wedge_bracket(rep_, t.a, t.a)
        row2 = f3.hodge(rep_, br) - mu_t
        return ResidualBundle(spinor=row1, form=row2,
                              zero_form=_zero_form_like(rep_, t),
                              scalar=f3.l2_norm(rep_, t.phi) ** 2)
    raise ModeMismatch(f"unknown mode '{mode}'")


def _zero_form_like(rep, t):
    return f3.Field.zeros(t.xi.geometry, t.xi.fiber, t.xi.backend,
                          0 if t.xi.backend == "trig" else 0)


def offset_term(rep, p, c0, mode, eps=None):
    """The affine term e of the extended residual (zero at exact solutions)."""
    conn = c0.connection(p)
    dphi0 = -1.0 * f3.dirac(rep, conn, c0.phi)
    mu0 = f3.moment_one_form(rep, c0.phi)
    zero = f3.Field.zeros(c0.a.geometry, f3.form_fiber(rep, 0, "g"),
                          c0.a.backend, 0)
    if mode == "SW":
        F = f3.hodge(rep, f3.curvature(rep, conn))
        return ResidualBundle(spinor=dphi0, form=F - mu0, zero_form=zero)
    if mode == "Zero":
        return ResidualBundle(spinor=dphi0, form=-1.0 * mu0, zero_form=zero,
                              scalar=f3.l2_norm(rep, c0.phi) ** 2 - 1.0)
    if mode == "Eps":
        F = f3.hodge(rep, f3.curvature(rep, conn))
        return ResidualBundle(spinor=dphi0, form=(eps ** 2) * F - mu0,
                              zero_form=zero,
                              scalar=f3.l2_norm(rep, c0.phi) ** 2 - 1.0)
    raise ModeMismatch(f"unknown mode '{mode}'")


def extended_residual(rep, p, c0, t, mode, eps=None):
    """L t + Q(t) + e in the requested mode."""
    lin_mode = {"SW": "Lc", "Zero": "L0", "Eps": "Leps"}[mode]
    L = SWLinearization(rep, p, c0, lin_mode, eps)
    Lx = L.apply(t)
    Qx = quadratic_part(rep, p, c0, t, mode, eps)
    ex = offset_term(rep, p, c0, mode, eps)
    spinor = Lx.spinor + Qx.spinor + ex.spinor
    form = Lx.form + Qx.form + ex.form
    zf = Lx.zero_form + Qx.zero_form + ex.zero_form
    if mode == "SW":
        return ResidualBundle(spinor=spinor, form=form, zero_form=zf)
    scalar = Lx.scalar + Qx.scalar + ex.scalar
    return ResidualBundle(spinor=spinor, form=form, zero_form=zf, scalar=scalar)


# ---------------------------------------------------------------------------
# gauge transformations

def _site_stack(field):
    """(n_sites, ncomp) view of a lattice field."""
    d = field.fiber.ncomp
    return field.data.reshape(d, -1).T


def _unstack(geom, fiber, arr):
    return f3.Field(geom, fiber, "lattice",
                    arr.T.reshape(fiber.ncomp, geom.N, geom.N, geom.N))


def _exp_series(mats, order=20):
    """Stacked matrix exponentials (series with scaling and squaring)."""
    n, d, _ = mats.shape
    if d == 0:
        return mats.copy()
    nrm = np.abs(mats).sum(axis=-1).max() if n else 0.0
    s = max(0, int(np.ceil(np.log2(max(nrm, 1e-300) / 0.5)))) if nrm > 0.5 else 0
    m = mats / (2 ** s)
    out = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    term = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    for k in range(1, order + 1):
        term = np.einsum("nij,njk->nik", term, m) / k
        out += term
    for _ in range(s):
        out = np.einsum("nij,njk->nik", out, out)
    return out


def gauge_transform(rep, p, xi_field, c):
    """Act by the pointwise exponential u = exp(rho(xi)).

    Phi -> u Phi; a -> Ad(u) a - (du) u^{-1}, with the pure-gauge term
    computed from the spectral derivative of xi through the exponential
    differential series.
    """
    if c.phi.backend != "lattice" or xi_field.backend != "lattice":
        raise BackendMismatch("gauge transforms act on the lattice backend")
    geom = c.phi.geometry
    dg = rep.dim_g
    xs = _site_stack(xi_field)                       # (n, dg)
    ad = np.einsum("aij,na->nij", np.stack([rep.group_G.ad(e) for e in np.eye(dg)]), xs) \
        if dg else np.zeros((xs.shape[0], 0, 0))
    rho = np.einsum("aij,na->nij", rep.rho_G, xs)
    U = _exp_series(rho)                             # exp(rho(xi)) per site
    Ad = _exp_series(ad)                             # Ad(exp xi) per site
    phi_new = _unstack(geom, c.phi.fiber, np.einsum("nij,nj->ni", U, _site_stack(c.phi)))

    # T(ad_xi) w = sum_k ad^k w / (k+1)!
    def dexp(w):
        out = w.copy()
        term = w.copy()
        fact = 1.0
        for k in range(1, 25):
            term = np.einsum("nij,nj->ni", ad, term)
            fact *= (k + 1)
            out = out + term / fact
        return out

    slots = []
    for i in range(3):
        ai = _site_stack(f3._slot(c.a, i, dg))
        dxi = _site_stack(f3.deriv(xi_field, i))
        new = np.einsum("nij,nj->ni", Ad, ai) - dexp(dxi)
        slots.append(new)
    fib = f3.form_fiber(rep, 1, "g")
    a_new = _unstack(geom, fib, np.concatenate(slots, 1))
    return Configuration(phi_new, a_new)


def gauge_fix_to_slice(rep, p, c0, c, eps, tol=1e-10, max_iter=60):
    """Find u = exp(xi) putting c - c0 on the eps-weighted gauge slice:

        eps^2 d*_{A0}(a~) - rho_star(phi~ Phi0*) = 0

    via damped Picard iteration preconditioned by the mode-diagonal
    operator eps^2 Laplace + mean(R*R); returns (xi, transformed triple,
    diagnostics).
    """
    geom = c0.phi.geometry
    dg = rep.dim_g
    conn0 = c0.connection(p)

    # mean Gram of the infinitesimal action, dualized by the group metric
    phi0s = _site_stack(c0.phi)
    rhoPhi = np.einsum("aij,nj->nai", rep.rho_G, phi0s)
    gram = np.einsum("nai,ij,nbj->ab", rhoPhi, rep.space.inner, rhoPhi) / phi0s.shape[0]
    K = np.linalg.solve(rep.group_G.killing, gram)

    m = geom.modes()
    m[geom.N // 2] = 0.0
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    m2 = np.einsum("i...,ij,j...->...", vec, geom.inv_metric, vec)
    # per-mode dg x dg inverse of eps^2 |m|^2 + K
    eye = np.eye(dg)
    denom = eps ** 2 * m2[..., None, None] * eye + K
    denom_inv = np.linalg.inv(denom)

    def precond_solve(r):
        spec = np.fft.fftn(r.data, axes=(1, 2, 3))
        spec = np.einsum("xyzab,bxyz->axyz", denom_inv, spec)
        return f3.Field(geom, r.fiber, "lattice",
                        np.fft.ifftn(spec, axes=(1, 2, 3)).real)

    def slice_residual(xi):
        moved = gauge_transform(rep, p, xi, c)
        phit = moved.phi - c0.phi
        at = moved.a - c0.a
        r = (eps ** 2) * f3.exterior_d(rep, conn0, at, adjoint=True) \
            - f3.rho_star_pair(rep, phit, c0.phi)
        return r, moved, phit, at

    xi = f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"), "lattice")
    r, moved, phit, at = slice_residual(xi)
    res = f3.l2_norm(rep, r)
    history = [res]
    for it in range(max_iter):
        if res < tol:
            triple = TangentTriple(phit, at,
                                   f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"), "lattice"))
            return xi, triple, {"iterations": it, "residual": res, "history": history}
        step = precond_solve(r)
        damping = 1.0
        while damping > 1e-4:
            cand = xi + damping * step
            rc, movedc, phitc, atc = slice_residual(cand)
            resc = f3.l2_norm(rep, rc)
            if resc < res:
                xi, r, res, moved, phit, at = cand, rc, resc, movedc, phitc, atc
                history.append(res)
                break
            damping *= 0.5
        else:
            raise NoConvergence(it, res)
    if res < tol:
        triple = TangentTriple(phit, at,
                               f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"), "lattice"))
        return xi, triple, {"iterations": max_iter, "residual": res, "history": history}
    raise NoConvergence(max_iter, res)


# ---------------------------------------------------------------------------
# dense vectorization of triples and residuals

class TripleSpace:
    """Packs perturbation triples and residual bundles into flat vectors.

    X-layout: [phi comps, a comps, xi comps], each component field C-order.
    Y-layout: X-layout plus one trailing scalar row when with_scalar.
    """

    def __init__(self, rep, geom, backend="lattice"):
        if backend != "lattice":
            raise BackendMismatch("dense packing uses the lattice backend")
        self.rep, self.geom = rep, geom
        n = geom.N ** 3
        self.n_sites = n
        self.d_phi = rep.dim_S * n
        self.d_a = 3 * rep.dim_g * n
        self.d_xi = rep.dim_g * n
        self.dim = self.d_phi + self.d_a + self.d_xi

    def pack(self, t):
        return np.concatenate([t.phi.data.ravel(), t.a.data.ravel(),
                               t.xi.data.ravel()])

    def unpack(self, v):
        rep, geom = self.rep, self.geom
        N = geom.N
        p0, p1 = self.d_phi, self.d_phi + self.d_a
        phi = f3.Field(geom, f3.spinor_fiber(rep), "lattice",
                       v[:p0].reshape(rep.dim_S, N, N, N))
        a = f3.Field(geom, f3.form_fiber(rep, 1, "g"), "lattice",
                     v[p0:p1].reshape(3 * rep.dim_g, N, N, N))
        xi = f3.Field(geom, f3.form_fiber(rep, 0, "g"), "lattice",
                      v[p1:].reshape(rep.dim_g, N, N, N))
        return TangentTriple(phi, a, xi)

    def pack_residual(self, r, with_scalar):
        parts = [r.spinor.data.ravel(), r.form.data.ravel(),
                 r.zero_form.data.ravel()]
        if with_scalar:
            parts.append(np.array([r.scalar]))
        return np.concatenate(parts)

    def assemble(self, op_apply, with_scalar=False):
        """Dense matrix of a linear operator by column probes."""
        cols = []
        for c in range(self.dim):
            v = np.zeros(self.dim)
            v[c] = 1.0
            out = op_apply(self.unpack(v))
            cols.append(self.pack_residual(out, with_scalar))
        return np.stack(cols, 1)

    def l2_gram_factors(self):
        """Per-block fiber Gram matrices and the uniform site weight."""
        rep, geom = self.rep, self.geom
        gs = f3.fiber_gram(rep, geom, f3.spinor_fiber(rep))
        ga = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 1, "g"))
        gx = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 0, "g"))
        w = geom.volume / geom.N ** 3
        return (gs, ga, gx), w
