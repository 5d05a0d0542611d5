"""Pointwise horizontal/normal geometry along regular moment-map zeros.

At every lattice site of a spinor field lying on the zero set, the image
of the infinitesimal gauge action together with its three Clifford
rotations spans the normal space N; its orthogonal complement H carries
the quotient geometry.  All computations here are sitewise linear
algebra batched over the grid: projectors from a sign-fixed thin QR,
the map a(a, xi) = gamma-bar(a) Phi + rho(xi) Phi with its pointwise
(pseudo-)inverses, the uniquely determined horizontal connection, the
block decomposition of the Dirac operator, and the residual of the
projected section.

The module also constructs exact nontrivially-twisted configurations:
constant regular zeros paired with flavor-connection profiles chosen in
the pointwise kernel of the Clifford contraction, which solve the
degenerate-limit equations identically while twisting the linearized
operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field3 as f3
from . import qrep as _qrep
from .dgla import Configuration
from .errors import (BackendMismatch, NoConvergence, NotHorizontal,
                     NotOnZeroSet, NotRegular)


def _sites(field):
    """(n_sites, ncomp) array of a lattice field."""
    if field.backend != "lattice":
        raise BackendMismatch("sitewise geometry uses the lattice backend")
    return field.data.reshape(field.fiber.ncomp, -1).T


def _from_sites(geom, fiber, arr):
    N = geom.N
    return f3.Field(geom, fiber, "lattice", arr.T.reshape(fiber.ncomp, N, N, N))


@dataclass
class SplittingData:
    """Per-site splitting S = H (+) N along a zero-set spinor field."""
    rep: object
    geom: object
    phi_sites: np.ndarray        # (n, d)
    amat: np.ndarray             # (n, d, 4 dg): columns of the normal map
    q_n: np.ndarray              # (n, d, 4 dg): orthonormal basis of N
    pi_n: np.ndarray             # (n, d, d)
    pi_h: np.ndarray             # (n, d, d)
    ata_inv: np.ndarray          # (n, 4 dg, 4 dg): (a^T a)^{-1}
    _gdom: np.ndarray = None     # Gram of the (a, xi) domain
    _gdom_inv: np.ndarray = None

    @property
    def n_sites(self):
        return self.phi_sites.shape[0]

    def project_h(self, field):
        arr = np.einsum("nij,nj->ni", self.pi_h, _sites(field))
        return _from_sites(self.geom, field.fiber, arr)

    def project_n(self, field):
        arr = np.einsum("nij,nj->ni", self.pi_n, _sites(field))
        return _from_sites(self.geom, field.fiber, arr)

    def apply_a(self, a, xi):
        """gamma-bar(a) Phi + rho(xi) Phi as a spinor field."""
        packed = np.concatenate([_sites(a), _sites(xi)], 1)
        out = np.einsum("nic,nc->ni", self.amat, packed)
        return _from_sites(self.geom, f3.spinor_fiber(self.rep), out)

    def a_star(self, spinor):
        """Adjoint of apply_a: spinor -> (a, xi) coefficient fields."""
        out = np.einsum("nci,ni->nc", self.amat.transpose(0, 2, 1), _sites(spinor))
        out = np.einsum("cd,nd->nc", self._gdom_inv, out)
        return self._split_pair(out)

    def a_inv(self, spinor):
        """Pointwise inverse on Gamma(N): solve a(a, xi) = pi_N spinor."""
        rhs = np.einsum("nci,ni->nc", self.amat.transpose(0, 2, 1), _sites(spinor))
        out = np.einsum("ncd,nd->nc", self.ata_inv, rhs)
        return self._split_pair(out)

    def a_star_inv(self, a, xi):
        """Pointwise inverse of the adjoint: value in Gamma(N)."""
        packed = np.concatenate([_sites(a), _sites(xi)], 1)
        w = np.einsum("cd,nd->nc", self._gdom, packed)
        coef = np.einsum("ncd,nd->nc", self.ata_inv, w)
        out = np.einsum("nic,nc->ni", self.amat, coef)
        return _from_sites(self.geom, f3.spinor_fiber(self.rep), out)

    def _split_pair(self, packed):
        dg = self.rep.dim_g
        a = _from_sites(self.geom, f3.form_fiber(self.rep, 1, "g"), packed[:, :3 * dg])
        xi = _from_sites(self.geom, f3.form_fiber(self.rep, 0, "g"), packed[:, 3 * dg:])
        return a, xi

    def gamma_equivariance_defect(self, rng, samples=10):
        """max |pi_H gamma(v) - gamma(v) pi_H| over random covectors."""
        Gam = f3.gamma_coord(self.rep, self.geom)
        worst = 0.0
        for _ in range(samples):
            v = rng.standard_normal(3)
            gv = np.einsum("i,ijk->jk", v, Gam)
            comm = np.einsum("nij,jk->nik", self.pi_h, gv) \
                - np.einsum("ij,njk->nik", gv, self.pi_h)
            worst = max(worst, np.abs(comm).max() / np.linalg.norm(v))
        return worst


def splitting(rep, phi, reg_tol=1e-8, zero_tol=1e-8, project=False):
    """Build the per-site orthogonal splitting along phi.

    Raises NotOnZeroSet / NotRegular when a site violates the pointwise
    hypotheses; with project=True a transverse Newton correction onto the
    zero set is applied first.
    """
    if project:
        phi = project_to_moment_zero(rep, phi)
    geom = phi.geometry
    sites = _sites(phi)
    n, d = sites.shape
    dg = rep.dim_g

    mu_tensor = f3._moment_tensor(rep)
    mus = np.einsum("vst,ns,nt->nv", mu_tensor, sites, sites)
    mu_norm = np.linalg.norm(mus, axis=1)
    bad = int(np.argmax(mu_norm))
    if mu_norm[bad] > zero_tol:
        raise NotOnZeroSet(site=bad, value=float(mu_norm[bad]))

    Gam = f3.gamma_coord(rep, geom)
    cols = np.empty((n, d, 4 * dg))
    for i in range(3):
        for b in range(dg):
            cols[:, :, i * dg + b] = sites @ (Gam[i] @ rep.rho_G[b]).T
    for b in range(dg):
        cols[:, :, 3 * dg + b] = sites @ rep.rho_G[b].T

    W = rep.space.inner
    Wh = np.linalg.cholesky(W)
    colsW = np.einsum("ij,njc->nic", Wh.T, cols)
    q, r = np.linalg.qr(colsW)
    # deterministic sign convention: positive diagonal of r
    sign = np.sign(np.einsum("ncc->nc", r))
    sign[sign == 0] = 1.0
    q = q * sign[:, None, :]
    rdiag = np.abs(np.einsum("ncc->nc", r))
    phi_norm = np.linalg.norm(sites, axis=1)
    margin = rdiag.min(axis=1)
    bad = int(np.argmin(margin - reg_tol * phi_norm))
    if margin[bad] <= reg_tol * phi_norm[bad]:
        raise NotRegular(site=bad, margin=float(margin[bad]))

    Whinv = np.linalg.inv(Wh.T)
    q_n = np.einsum("ij,njc->nic", Whinv, q)      # W-orthonormal basis of N
    pi_n = np.einsum("nic,njc,jk->nik", q_n, q_n, W)
    pi_h = np.broadcast_to(np.eye(d), (n, d, d)) - pi_n

    gdom = _domain_gram(rep, geom)
    gdom_inv = np.linalg.inv(gdom) if gdom.size else gdom
    ata = np.einsum("nic,ij,njd->ncd", cols, W, cols)
    ata_inv = np.linalg.inv(ata)
    return SplittingData(rep, geom, sites, cols, q_n, pi_n, pi_h, ata_inv,
                         gdom, gdom_inv)


def _domain_gram(rep, geom):
    """Gram of the (a, xi) domain: (h^{-1} (x) killing) (+) killing."""
    dg = rep.dim_g
    ga = np.kron(geom.inv_metric, rep.group_G.killing)
    out = np.zeros((4 * dg, 4 * dg))
    out[:3 * dg, :3 * dg] = ga
    out[3 * dg:, 3 * dg:] = rep.group_G.killing
    return out


def project_to_moment_zero(rep, phi, tol=1e-12, max_iter=60):
    """Transverse Newton step onto the zero set along the rotated action
    directions; leaves zero-set fields untouched."""
    geom = phi.geometry
    sites = _sites(phi).copy()
    dg = rep.dim_g
    mu_tensor = f3._moment_tensor(rep)
    Gam = f3.gamma_coord(rep, geom)
    dirs = np.stack([(Gam[i] @ rep.rho_G[b]) for i in range(3) for b in range(dg)])
    for _ in range(max_iter):
        mus = np.einsum("vst,ns,nt->nv", mu_tensor, sites, sites)
        if np.abs(mus).max() < tol:
            break
        tangent = np.einsum("cst,nt->ncs", dirs, sites)    # (n, 3dg, d)
        # d mu in the transverse directions
        jac = 2.0 * np.einsum("vst,ncs,nt->nvc", mu_tensor, tangent, sites)
        step = np.linalg.solve(jac, -mus[..., None])[..., 0]
        sites = sites + np.einsum("ncs,nc->ns", tangent, step)
    return _from_sites(geom, phi.fiber, sites)


def horizontal_connection(rep, p, phi, a0=None, tol=1e-10):
    """The unique gauge offset making the covariant derivative horizontal.

    Sitewise least squares against the infinitesimal action; the result
    satisfies pi_N nabla_A phi = 0 whenever phi lies on the zero set.
    """
    geom = phi.geometry
    if a0 is None:
        a0 = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"))
    conn0 = f3.Connection(a0, p.b)
    nab = f3.covariant_deriv(rep, conn0, phi)
    sites = _sites(phi)
    n = sites.shape[0]
    dg = rep.dim_g
    W = rep.space.inner
    R = np.einsum("bst,nt->nsb", rep.rho_G.transpose(0, 1, 2), sites)  # (n, d, dg)
    RtW = np.einsum("nsb,st->nbt", R, W)
    gram = np.einsum("nbt,ntc->nbc", RtW, R)
    gram_inv = np.linalg.inv(gram)
    slots = []
    for i in range(3):
        gi = _sites(f3._slot(nab, i, rep.dim_S))
        coef = -np.einsum("nbc,nc->nb", gram_inv, np.einsum("nbt,nt->nb", RtW, gi))
        slots.append(coef)
    corr = _from_sites(geom, f3.form_fiber(rep, 1, "g"), np.concatenate(slots, 1))
    a = a0 + corr
    return f3.Connection(a, p.b)


def horizontality_defect(rep, p, conn, phi, split=None):
    """Sitewise max of |pi_N nabla_A phi|."""
    split = split or splitting(rep, phi)
    nab = f3.covariant_deriv(rep, conn, phi)
    worst = 0.0
    for i in range(3):
        g = split.project_n(f3._slot(nab, i, rep.dim_S))
        worst = max(worst, np.abs(g.data).max())
    return worst


def block_dirac(rep, p, c, field, part, split=None, horiz_tol=1e-8):
    """One block of the Dirac operator in the splitting: HH, NN, HN, NH.

    HN is the block mapping H-sections into N (the second fundamental
    form contraction); NH its adjoint counterpart.
    """
    split = split or splitting(rep, c.phi)
    conn = c.connection(p)
    if horizontality_defect(rep, p, conn, c.phi, split) > horiz_tol:
        raise NotHorizontal("connection is not horizontal for the spinor")
    pin, pih = split.project_n, split.project_h
    src = {"HH": pih, "NN": pin, "HN": pih, "NH": pin}[part]
    dst = {"HH": pih, "NN": pin, "HN": pin, "NH": pih}[part]
    return dst(f3.dirac(rep, conn, src(field)))


def fueter_residual(rep, p, phi, a0=None, split=None):
    """pi_H D_A phi for the horizontal connection: the projected-section
    residual of the degenerate-limit equation."""
    split = split or splitting(rep, phi)
    conn = horizontal_connection(rep, p, phi, a0)
    return split.project_h(f3.dirac(rep, conn, phi)), conn


def second_fundamental_identity_defect(rep, p, c, a, xi, split=None):
    """Defect of the off-diagonal contraction identity on normal sections.

    For phi = rho(xi) Phi + gamma-bar(a) Phi and a horizontal zero-set
    configuration, the contraction of the second fundamental form obeys

        sum_i gamma(dx^i) pi_H nabla_i phi
          = pi_H rho(xi) D_A Phi - pi_H gamma-bar(a) D_A Phi
            - 2 sum h^{ij} pi_H (rho(a_i) nabla_j Phi);

    at solutions of the Dirac equation only the last term survives.
    Returns the L^2 norm of the difference.
    """
    split = split or splitting(rep, c.phi)
    conn = c.connection(p)
    geom = c.phi.geometry
    phi_n = split.apply_a(a, xi)
    # left side: the (minus gamma II*) contraction of the normal section
    nab_phi_n = f3.covariant_deriv(rep, conn, phi_n)
    Gam = f3.gamma_coord(rep, geom)
    lhs = None
    for i in range(3):
        t = f3.pw_linear(Gam[i],
                         split.project_h(f3._slot(nab_phi_n, i, rep.dim_S)),
                         f3.spinor_fiber(rep))
        lhs = t if lhs is None else lhs + t
    # right side
    dphi = f3.dirac(rep, conn, c.phi)
    rho_t = f3._rho_tensor(rep, "g")
    t1 = split.project_h(f3.pw_bilinear(rho_t, xi, dphi, f3.spinor_fiber(rep)))
    t2 = split.project_h(f3.gamma_bar_apply(rep, a, dphi))
    nab = f3.covariant_deriv(rep, conn, c.phi)
    hinv = geom.inv_metric
    t3 = None
    for i in range(3):
        for j in range(3):
            if hinv[i, j] == 0.0:
                continue
            ai = f3._slot(a, i, rep.dim_g)
            gj = f3._slot(nab, j, rep.dim_S)
            term = hinv[i, j] * f3.pw_bilinear(rho_t, ai, gj, f3.spinor_fiber(rep))
            t3 = term if t3 is None else t3 + term
    rhs = t1 - t2 - 2.0 * split.project_h(t3)
    return f3.l2_norm(rep, lhs - rhs)


def affine_zero_motion(rep, geom, seed=5, amplitude=0.2, mode_axis=0):
    """On-zero-set spinor field moving along horizontal directions.

    Valid for data whose zero set contains the affine horizontal space at
    the base zero (checked); the result has nonvanishing covariant
    derivative and genuinely varying projectors.
    """
    rng = np.random.default_rng(seed)
    z = _regular_zero_with_trivial_tail(rep, seed) / np.sqrt(geom.volume)
    # horizontal directions at z: complement of the normal map image
    Gam = f3.gamma_coord(rep, geom)
    cols = [Gam[i] @ rep.rho_G[b] @ z for i in range(3) for b in range(rep.dim_g)]
    cols += [rep.rho_G[b] @ z for b in range(rep.dim_g)]
    A = np.stack(cols, 1)
    q, _ = np.linalg.qr(np.concatenate([A, np.eye(rep.dim_S)], 1))
    hdirs = q[:, 4 * rep.dim_g:]
    h1 = hdirs @ rng.standard_normal(hdirs.shape[1])
    h1 *= amplitude / np.linalg.norm(h1) * np.linalg.norm(z)
    mu_shift = _qrep.moment_map(rep, z + h1).norm()
    if mu_shift > 1e-12:
        raise NotOnZeroSet(None, mu_shift)
    N = geom.N
    x = np.arange(N) * (f3.TWO_PI / N)
    shape = [1, 1, 1]
    shape[mode_axis] = N
    prof = np.cos(x).reshape(shape)
    data = z[:, None, None, None] + h1[:, None, None, None] * prof
    return f3.Field(geom, f3.spinor_fiber(rep), "lattice",
                    np.broadcast_to(data, (rep.dim_S, N, N, N)).copy())


def lift_slice(rep, phi0, phi, tol=1e-12, max_iter=60):
    """Pointwise gauge fix onto the action-orthogonal slice through phi0.

    Finds xi with <exp(rho(xi)) phi, rho(.) phi0> = 0 at every site;
    returns (xi field, transformed spinor field).
    """
    geom = phi.geometry
    dg = rep.dim_g
    s0 = _sites(phi0)
    s = _sites(phi)
    n = s.shape[0]
    W = rep.space.inner
    R0 = np.einsum("bst,nt->nsb", rep.rho_G, s0)          # rho_b phi0
    R0W = np.einsum("nsb,st->nbt", R0, W)
    xi = np.zeros((n, dg))
    from .swop import _exp_series

    for it in range(max_iter):
        rho_xi = np.einsum("bst,nb->nst", rep.rho_G, xi)
        U = _exp_series(rho_xi)
        moved = np.einsum("nst,nt->ns", U, s)
        r = np.einsum("nbt,nt->nb", R0W, moved)
        if np.abs(r).max() < tol:
            break
        dmoved = np.einsum("bst,nt->nsb", rep.rho_G, moved)
        jac = np.einsum("nbt,ntc->nbc", R0W, dmoved)
        xi = xi + np.linalg.solve(jac, -r[..., None])[..., 0]
    else:
        raise NoConvergence(max_iter, float(np.abs(r).max()))
    xi_f = _from_sites(geom, f3.form_fiber(rep, 0, "g"), xi)
    moved_f = _from_sites(geom, phi.fiber, moved)
    return xi_f, moved_f


# ---------------------------------------------------------------------------
# exact twisted configurations

def find_twist_pairs(rep, geom, phi0_vec, max_pairs=3):
    """Exact flavor-twist pairs annihilating the constant zero phi0.

    For each coordinate direction pair (i, j), solves the pointwise
    condition Gam_i rho_K(eta_i) phi0 + Gam_j rho_K(eta_j) phi0 = 0 for
    (eta_i, eta_j) in the flavor algebra; returns up to max_pairs kernel
    elements with the largest action on phi0, each as (dirs, eta_i, eta_j).
    """
    dk = rep.dim_k
    if dk == 0:
        return []
    Gam = f3.gamma_coord(rep, geom)
    out = []
    for dirs in ((0, 1), (0, 2), (1, 2)):
        M = np.empty((rep.dim_S, 2 * dk))
        for b in range(dk):
            M[:, b] = Gam[dirs[0]] @ rep.rho_K[b] @ phi0_vec
            M[:, dk + b] = Gam[dirs[1]] @ rep.rho_K[b] @ phi0_vec
        _, sv, vt = np.linalg.svd(M, full_matrices=True)
        scale = sv[0] if sv.size and sv[0] > 0 else 1.0
        rank = int((sv > 1e-10 * scale).sum())
        for v in vt[rank:]:
            eta1, eta2 = v[:dk], v[dk:]
            act = np.linalg.norm(rep.rho_flavor(eta1) @ phi0_vec) \
                + np.linalg.norm(rep.rho_flavor(eta2) @ phi0_vec)
            if act > 1e-8:
                out.append((dirs, eta1, eta2, act))
    out.sort(key=lambda t: -t[3])
    return [(d, e1, e2) for d, e1, e2, _ in out[:max_pairs]]


def _regular_zero_with_trivial_tail(rep, seed=3):
    """Unit regular zero; for data whose gauge action ignores a trailing
    block, prefer zeros supported away from it (richer twist kernels)."""
    rng = np.random.default_rng(seed)
    z = None
    while z is None or not _qrep.is_numerically_regular(rep, z):
        z = _qrep.sample_moment_zero(rep, rng)
    # zero out components on which the gauge action vanishes identically
    act = np.abs(rep.rho_G).sum(axis=(0, 1))
    dead = act < 1e-12
    if dead.any():
        z = z.copy()
        z[dead] = 0.0
        if _qrep.moment_map(rep, z).norm() > 1e-12 or \
                not _qrep.is_numerically_regular(rep, z):
            rng2 = np.random.default_rng(seed + 1)
            z = None
            while z is None or not _qrep.is_numerically_regular(rep, z):
                z = _qrep.sample_moment_zero(rep, rng2)
    return z / np.linalg.norm(z)


def twisted_lift(rep, geom, amplitude=0.4, n_pairs=3, seed=3,
                 profile_axes=(2, 0, 1), constant_part=1.0):
    """Exact solution of the degenerate-limit system with a nonflat twist.

    Returns (parameter, configuration, info): a constant regular unit
    zero phi0 with zero gauge offset, and a flavor connection built from
    exact twist pairs scaled by band-limited profiles with a constant
    part.  The configuration satisfies the limit equations and the
    horizontality condition identically while the twist enters every
    linearized block.
    """
    z = _regular_zero_with_trivial_tail(rep, seed)
    z = z / np.sqrt(geom.volume)              # unit L^2 norm as a field
    pairs = find_twist_pairs(rep, geom, z, n_pairs)
    if not pairs:
        raise NotRegular(None, None)
    N = geom.N
    x = np.arange(N) * (f3.TWO_PI / N)
    dk = rep.dim_k
    bdata = np.zeros((3 * dk, N, N, N))
    grids = np.meshgrid(x, x, x, indexing="ij")
    for idx, (dirs, e1, e2) in enumerate(pairs):
        axis = profile_axes[idx % len(profile_axes)]
        prof = amplitude * (constant_part + np.cos(grids[axis]))
        for comp, eta in zip(dirs, (e1, e2)):
            bdata[comp * dk:(comp + 1) * dk] += eta[:, None, None, None] * prof
    b = f3.Field(geom, f3.form_fiber(rep, 1, "k"), "lattice", bdata)
    p = f3.Parameter(geom, b)
    phi0 = f3.constant_field(geom, f3.spinor_fiber(rep), z)
    a0 = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"))
    c0 = Configuration(phi0, a0)
    info = {"pairs": pairs, "zero": z, "amplitude": amplitude}
    return p, c0, info


def flat_lift(rep, geom, seed=3):
    """Constant regular zero with trivial connections (fully degenerate)."""
    z = _regular_zero_with_trivial_tail(rep, seed) / np.sqrt(geom.volume)
    phi0 = f3.constant_field(geom, f3.spinor_fiber(rep), z)
    a0 = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"))
    return f3.flat_parameter(rep, geom), Configuration(phi0, a0), {"zero": z}


def _gauge_compensator(rep, z):
    """Matrix of the map eta -> kappa with pi_N(rho_K(eta) z) =
    rho_G(kappa) z; exact by tangency of the flavor action."""
    dg, dk = rep.dim_g, rep.dim_k
    Gam3 = rep.space.J
    cols = [Gam3[i] @ rep.rho_G[b] @ z for i in range(3) for b in range(dg)]
    cols += [rep.rho_G[b] @ z for b in range(dg)]
    A = np.stack(cols, 1)
    Q, _ = np.linalg.qr(A)
    piN = Q @ Q.T
    RG = np.stack([rep.rho_G[b] @ z for b in range(dg)], 1)
    K = np.zeros((dg, dk))
    for b in range(dk):
        npart = piN @ (rep.rho_K[b] @ z)
        coef, res, *_ = np.linalg.lstsq(RG, npart, rcond=None)
        K[:, b] = coef
    return K


def curved_lift(rep, geom, seed=3, amplitude=0.5, profile_axis=2,
                constant_part=1.0):
    """Exact solution of the limit system with nonzero gauge curvature.

    Solves for constant flavor components b_i whose compensated Clifford
    contraction annihilates the base zero, with gauge components
    a_i = -kappa(b_i) restoring horizontality; any shared scalar profile
    preserves exactness, and a nonconstant profile makes the gauge
    curvature da nonzero whenever the compensators do not vanish.
    Needs data whose flavor action has nonzero gauge compensators
    (nontrivial normal components at zeros).
    """
    rng = np.random.default_rng(seed)
    z = None
    while z is None or not _qrep.is_numerically_regular(rep, z):
        z = _qrep.sample_moment_zero(rep, rng)
    z = z / np.linalg.norm(z) / np.sqrt(geom.volume)
    K = _gauge_compensator(rep, z)
    Gam = f3.gamma_coord(rep, geom)
    dk = rep.dim_k
    cols = []
    for i in range(3):
        for b in range(dk):
            T = rep.rho_K[b] - np.einsum("c,cst->st", K[:, b], rep.rho_G)
            cols.append(Gam[i] @ T @ z)
    M = np.stack(cols, 1)                     # (dim_S, 3 dk)
    _, sv, vt = np.linalg.svd(M, full_matrices=True)
    rank = int((sv > 1e-10 * sv[0]).sum())
    kernel = vt[rank:]
    best, best_a = None, -1.0
    for v in kernel:
        bcomp = v.reshape(3, dk)
        acomp = -(K @ bcomp.T).T              # a_i = -kappa(b_i)
        if np.linalg.norm(acomp) > best_a:
            best_a, best = np.linalg.norm(acomp), (bcomp, acomp)
    if best is None or best_a < 1e-8:
        raise NotRegular(None, best_a)
    bcomp, acomp = best
    scale = amplitude / max(np.abs(acomp).max(), np.abs(bcomp).max())
    bcomp, acomp = bcomp * scale, acomp * scale
    N = geom.N
    x = np.arange(N) * (f3.TWO_PI / N)
    shape = [1, 1, 1]
    shape[profile_axis] = N
    prof = (constant_part + np.cos(x)).reshape(shape)
    bdata = np.broadcast_to(
        bcomp.ravel()[:, None, None, None] * prof, (3 * dk, N, N, N)).copy()
    adata = np.broadcast_to(
        acomp.ravel()[:, None, None, None] * prof,
        (3 * rep.dim_g, N, N, N)).copy()
    b = f3.Field(geom, f3.form_fiber(rep, 1, "k"), "lattice", bdata)
    a = f3.Field(geom, f3.form_fiber(rep, 1, "g"), "lattice", adata)
    phi0 = f3.constant_field(geom, f3.spinor_fiber(rep), z)
    p = f3.Parameter(geom, b)
    c0 = Configuration(phi0, a)
    return p, c0, {"zero": z, "a_scale": best_a * scale}
