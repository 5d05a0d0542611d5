"""Finite-dimensional reduction machinery.

Contains, in increasing order of specialization:

* an abstract bordered-solver for quadratic Fredholm systems
  F(p, x) = L(p) x + Q(x) + e(p): slice solutions, obstruction maps and
  their exact Jacobians, plus an independent brute-force root finder used
  as the oracle for the homeomorphism property;
* the structured three-block left inverse (Gauss elimination through the
  Schur complement of the middle block);
* dense assemblies of the degenerate-limit linearizations over the
  horizontal/normal splitting, the closed-form inverse of the limit
  operator, the weighted-norm minimum singular value, and the composite
  operator z_eps with its preconditioned solve;
* the expansion of bordered solutions in even powers of eps with measured
  remainder orders, for toy families and the discretized system alike;
* the crossing quantities (chi, phi, (a, xi), o, delta) with the sign
  bookkeeping for counts of solutions across a wall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import field3 as f3
from . import haydys as hy
from . import swop
from .errors import (HypothesisViolated, KernelTooLarge, NoConvergence,
                     NotAFueterLift, OrderNotReached, SingularBlock)


# ---------------------------------------------------------------------------
# abstract quadratic Fredholm systems

@dataclass
class FredholmSystem:
    """F(p, x) = L(p) x + Q(x) + e(p) with distinguished subspaces.

    L: callable p -> (m, n) matrix (or a constant matrix);
    quad: callable x -> y; polar: callable (x1, x2) -> y symmetric bilinear
    with polar(x, x) = quad(x);
    e: callable p -> y (or constant vector);
    I_basis: (n, di) orthonormal columns; O_basis: (m, do) orthonormal.
    """
    L: object
    quad: object
    polar: object
    e: object
    I_basis: np.ndarray
    O_basis: np.ndarray
    name: str = "system"

    def L_at(self, p):
        return self.L(p) if callable(self.L) else np.asarray(self.L, float)

    def e_at(self, p):
        return self.e(p) if callable(self.e) else np.asarray(self.e, float)

    @property
    def dim_I(self):
        return self.I_basis.shape[1]

    @property
    def dim_O(self):
        return self.O_basis.shape[1]

    def bordered_matrix(self, p):
        """bar L = [[0, pi], [iota, L]] : O (+) X -> I (+) Y."""
        L = self.L_at(p)
        m, n = L.shape
        di, do = self.dim_I, self.dim_O
        out = np.zeros((di + m, do + n))
        out[:di, do:] = self.I_basis.T
        out[di:, :do] = self.O_basis
        out[di:, do:] = L
        return out

    def residual(self, p, x):
        return self.L_at(p) @ x + self.quad(x) + self.e_at(p)


@dataclass
class SliceSolution:
    x: np.ndarray
    ob: np.ndarray
    iterations: int
    residual: float
    contraction: float


def hypothesis_constants(sys, p, rng=None, samples=50):
    """Measured constants of the contraction hypothesis.

    c_R is the operator norm of the bordered inverse, c_Q the smallest
    constant observed in the quadratic estimate over random pairs, c_e
    the offset size; the solver requires c_e well below 1/(c_R^2 c_Q).
    """
    rng = rng or np.random.default_rng(0)
    bar = sys.bordered_matrix(p)
    c_R = float(np.linalg.norm(np.linalg.inv(bar), 2))
    n = sys.L_at(p).shape[1]
    c_Q = 0.0
    for _ in range(samples):
        x1 = rng.standard_normal(n)
        x2 = rng.standard_normal(n)
        num = np.linalg.norm(sys.quad(x1) - sys.quad(x2))
        den = (np.linalg.norm(x1) + np.linalg.norm(x2)) * np.linalg.norm(x1 - x2)
        if den > 1e-12:
            c_Q = max(c_Q, num / den)
    c_e = float(np.linalg.norm(sys.e_at(p)))
    return {"c_R": c_R, "c_Q": c_Q, "c_e": c_e,
            "smallness": c_e * c_R ** 2 * c_Q}


def solve_slice(sys, p, x0, tol=1e-12, max_iter=200, check_hypothesis=False):
    """Unique small solution of (id - Pi) F(p, x) = 0, pi x = x0.

    Newton iteration with the fixed bordered inverse; the obstruction is
    the O-component of F at the solution.  With check_hypothesis the
    measured smallness product c_e c_R^2 c_Q is required to stay below a
    loose unit threshold before iterating.
    """
    x0 = np.atleast_1d(np.asarray(x0, float))
    bar = sys.bordered_matrix(p)
    if bar.shape[0] != bar.shape[1]:
        raise HypothesisViolated(
            f"bordered operator is {bar.shape[0]}x{bar.shape[1]}, not square")
    if check_hypothesis:
        consts = hypothesis_constants(sys, p)
        if consts["smallness"] > 1.0:
            raise HypothesisViolated(
                f"offset too large: c_e c_R^2 c_Q = {consts['smallness']:.3f}")
    lu = sla.lu_factor(bar)
    di = sys.dim_I
    n = sys.L_at(p).shape[1]
    z = np.zeros(bar.shape[0])      # (o, x)
    prev = None
    contraction = 0.0
    for it in range(max_iter):
        o, x = z[:sys.dim_O], z[sys.dim_O:]
        top = sys.I_basis.T @ x - x0
        bottom = sys.O_basis @ o + sys.residual(p, x)
        Fz = np.concatenate([top, bottom])
        res = np.linalg.norm(Fz)
        if prev is not None and prev > 0:
            contraction = res / prev
        if res < tol:
            ob = sys.O_basis.T @ sys.residual(p, x)
            return SliceSolution(x, ob, it, res, contraction)
        if prev is not None and res > 10 * prev + tol:
            raise NoConvergence(it, res)
        prev = res
        z = z - sla.lu_solve(lu, Fz)
    raise NoConvergence(max_iter, res)


def obstruction(sys, p, x0, tol=1e-12):
    return solve_slice(sys, p, x0, tol).ob


def obstruction_jacobian(sys, p, x0, tol=1e-12):
    """Exact d_{x0} ob as a (dim O, dim I) matrix via the linearized
    bordered system at the slice solution."""
    sol = solve_slice(sys, p, x0, tol)
    L = sys.L_at(p)
    dF = L + _polar_matrix(sys, sol.x)
    di, do = sys.dim_I, sys.dim_O
    bar = np.zeros((di + L.shape[0], do + L.shape[1]))
    bar[:di, do:] = sys.I_basis.T
    bar[di:, :do] = sys.O_basis
    bar[di:, do:] = dF
    lu = sla.lu_factor(bar)
    jac = np.zeros((do, di))
    for j in range(di):
        rhs = np.zeros(bar.shape[0])
        rhs[:di] = np.eye(di)[j]
        sol_j = sla.lu_solve(lu, rhs)
        jac[:, j] = -sol_j[:do]
    return jac, sol


def _polar_matrix(sys, x):
    n = x.shape[0]
    cols = [2.0 * sys.polar(x, np.eye(n)[j]) for j in range(n)]
    return np.stack(cols, 1)


def brute_force_zero_set(sys, p, radius=0.8, n_grid=4, newton_tol=1e-13,
                         dedupe=1e-6, max_iter=80):
    """Independent root enumeration of F(p, .) = 0 inside a ball.

    Plain multistart Gauss-Newton on the full map; no projections or
    bordered operators are involved.
    """
    L = sys.L_at(p)
    m, n = L.shape
    axes = [np.linspace(-radius, radius, n_grid)] * n
    roots = []
    for start in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n):
        x = start.copy()
        ok = False
        for _ in range(max_iter):
            r = sys.residual(p, x)
            if np.linalg.norm(r) < newton_tol:
                ok = True
                break
            J = L + _polar_matrix(sys, x)
            dx, *_ = np.linalg.lstsq(J, -r, rcond=None)
            if np.linalg.norm(dx) > 2 * radius:
                break
            x = x + dx
        if not ok or np.linalg.norm(x) > radius:
            continue
        if all(np.linalg.norm(x - r0) > dedupe for r0 in roots):
            roots.append(x)
    return roots


def set_distance(set_a, set_b):
    """Symmetric Hausdorff distance between finite point sets."""
    if not set_a and not set_b:
        return 0.0
    if not set_a or not set_b:
        return np.inf
    d = 0.0
    for a in set_a:
        d = max(d, min(np.linalg.norm(a - b) for b in set_b))
    for b in set_b:
        d = max(d, min(np.linalg.norm(b - a) for a in set_a))
    return d


def obstruction_zero_set(sys, p, radius=0.5, n_grid=7, tol=1e-12):
    """Zeros of the obstruction map over the slice ball, mapped to X."""
    di = sys.dim_I
    if di == 0:
        sol = solve_slice(sys, p, np.zeros(0), tol)
        return [sol.x] if np.linalg.norm(sol.ob) < 1e-10 else []
    axes = [np.linspace(-radius, radius, n_grid)] * di
    points = []
    for start in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, di):
        x0 = start.copy()
        try:
            for _ in range(60):
                jac, sol = obstruction_jacobian(sys, p, x0, tol)
                if np.linalg.norm(sol.ob) < 1e-12:
                    break
                step, *_ = np.linalg.lstsq(jac, -sol.ob, rcond=None)
                if np.linalg.norm(step) > 1.0:
                    break
                x0 = x0 + step
            else:
                continue
        except NoConvergence:
            continue
        if np.linalg.norm(sol.ob) >= 1e-12 or np.linalg.norm(x0) > radius:
            continue
        if all(np.linalg.norm(sol.x - q) > 1e-6 for q in points):
            points.append(sol.x)
    return points


# ---------------------------------------------------------------------------
# toy system constructions

def random_fredholm_system(rng, nx=None, ny=None, kernel_dim=None,
                           coker_dim=None, q_scale=0.4, e_scale=0.015):
    """Random quadratic system with prescribed kernel/cokernel of L."""
    nx = int(rng.integers(2, 7)) if nx is None else nx
    ny = int(rng.integers(2, 7)) if ny is None else ny
    rank_max = min(nx, ny)
    if kernel_dim is None:
        kernel_dim = int(rng.integers(0, min(2, nx) + 1))
    rank = min(rank_max, nx - kernel_dim)
    kernel_dim = nx - rank
    coker_dim = ny - rank
    U, _ = np.linalg.qr(rng.standard_normal((ny, ny)))
    V, _ = np.linalg.qr(rng.standard_normal((nx, nx)))
    sing = rng.uniform(0.6, 1.8, rank)
    L = U[:, :rank] @ np.diag(sing) @ V[:, :rank].T
    I_basis = V[:, rank:]
    O_basis = U[:, rank:]
    T = q_scale * rng.standard_normal((ny, nx, nx))
    T = 0.5 * (T + T.transpose(0, 2, 1))
    e_vec = e_scale * rng.standard_normal(ny)

    def quad(x):
        return np.einsum("oij,i,j->o", T, x, x)

    def polar(x1, x2):
        return np.einsum("oij,i,j->o", T, x1, x2)

    return FredholmSystem(L, quad, polar, e_vec, I_basis, O_basis,
                          name=f"toy({nx},{ny},k{kernel_dim})")


def toy_2d_system():
    """X = Y = R^2, L = diag(0, 1), Q(x) = (x1^2, x1 x2), e = (.01, .02)."""
    L = np.diag([0.0, 1.0])
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 1.0
    T[1, 0, 1] = T[1, 1, 0] = 0.5

    def quad(x):
        return np.einsum("oij,i,j->o", T, x, x)

    def polar(x1, x2):
        return np.einsum("oij,i,j->o", T, x1, x2)

    I_basis = np.array([[1.0], [0.0]])
    O_basis = np.array([[1.0], [0.0]])
    return FredholmSystem(L, quad, polar, np.array([0.01, 0.02]),
                          I_basis, O_basis, name="toy2d")


# ---------------------------------------------------------------------------
# structured three-block inversion

def block_inverse(D1, Bp, Bm, D2, Ap, Am, D3, cond_limit=1e12):
    """Left inverse of [[D1, B+, 0], [B-, D2, A+], [0, A-, D3]].

    Requires D1, A-, and the composite Z = A+ - (D2 - B- D1^{-1} B+) A-^{-1} D3
    to be invertible; returns (R, diagnostics).
    """
    D1, Bp, Bm = map(np.asarray, (D1, Bp, Bm))
    D2, Ap, Am, D3 = map(np.asarray, (D2, Ap, Am, D3))

    def checked_inv(M, which):
        c = np.linalg.cond(M)
        if not np.isfinite(c) or c > cond_limit:
            raise SingularBlock(which, c)
        return np.linalg.inv(M)

    D1i = checked_inv(D1, "D1")
    Ami = checked_inv(Am, "A-")
    E = (D2 - Bm @ D1i @ Bp) @ Ami
    Z = Ap - E @ D3
    Zi = checked_inv(Z, "Z")

    n1, n2, n3 = D1.shape[1], D2.shape[1], D3.shape[1]
    m1, m2, m3 = D1.shape[0], Bm.shape[0], Am.shape[0]
    P = np.zeros((n1 + n2 + n3, m1 + m2 + m3))
    P[:n1, :m1] = D1i
    P[n1:n1 + n2, m1 + m2:] = Ami
    P[n1 + n2:, :m1] = -Zi @ Bm @ D1i
    P[n1 + n2:, m1:m1 + m2] = Zi
    P[n1 + n2:, m1 + m2:] = -Zi @ E

    PL_inv = np.eye(n1 + n2 + n3)
    PL_inv[:n1, n1:n1 + n2] = -D1i @ Bp
    PL_inv[:n1, n1 + n2:] = D1i @ Bp @ Ami @ D3
    PL_inv[n1:n1 + n2, n1 + n2:] = -Ami @ D3

    R = PL_inv @ P
    diags = {"norm_R": float(np.linalg.norm(R, 2)),
             "cond_D1": float(np.linalg.cond(D1)),
             "cond_Am": float(np.linalg.cond(Am)),
             "cond_Z": float(np.linalg.cond(Z))}
    return R, diags


def assemble_three_block(D1, Bp, Bm, D2, Ap, Am, D3):
    n1, n2, n3 = D1.shape[1], D2.shape[1], D3.shape[1]
    m1, m2, m3 = D1.shape[0], Bm.shape[0], Am.shape[0]
    L = np.zeros((m1 + m2 + m3, n1 + n2 + n3))
    L[:m1, :n1] = D1
    L[:m1, n1:n1 + n2] = Bp
    L[m1:m1 + m2, :n1] = Bm
    L[m1:m1 + m2, n1:n1 + n2] = D2
    L[m1:m1 + m2, n1 + n2:] = Ap
    L[m1 + m2:, n1:n1 + n2] = Am
    L[m1 + m2:, n1 + n2:] = D3
    return L


# ---------------------------------------------------------------------------
# dense assembly over the splitting

class HaydysAssembly:
    """Dense operators at a constant-spinor lift of the limit equations.

    Builds the subspace frames per site, the restricted Dirac blocks,
    kernel/cokernel bases, the bordered horizontal operator, and the full
    linearization matrices used by the solvers.
    """

    def __init__(self, rep, p, c0, fueter_tol=1e-9, kernel_tol=1e-8,
                 solve_parameter=None):
        self.rep, self.p, self.c0 = rep, p, c0
        geom = c0.phi.geometry
        self.geom = geom
        resid = swop.blown_up_residual(rep, p, 0.0, c0).norm(rep)
        if resid > fueter_tol:
            raise NotAFueterLift(f"limit residual {resid:.2e}")
        self.split = hy.splitting(rep, c0.phi)
        conn = c0.connection(p)
        if hy.horizontality_defect(rep, p, conn, c0.phi, self.split) > 1e-8:
            raise NotAFueterLift("connection is not horizontal")
        self.conn = conn
        self.space = swop.TripleSpace(rep, geom)
        self.n_sites = geom.N ** 3
        self.site_weight = geom.volume / self.n_sites

        self._build_frames()
        self._build_dh(kernel_tol)
        self.solve_parameter = solve_parameter or p
        self._lin_cache = {}

    # -- frames ------------------------------------------------------------
    def _build_frames(self):
        rep, geom = self.rep, self.geom
        W = rep.space.inner
        pih = self.split.pi_h
        # constant projectors for constant spinors: build one H-frame
        if np.abs(pih - pih[0]).max() < 1e-12:
            w, v = np.linalg.eigh(pih[0] @ W)
            frame = v[:, w > 0.5]
            # W-orthonormalize deterministically
            q, r = np.linalg.qr(np.linalg.cholesky(W).T @ frame)
            sign = np.sign(np.diag(r))
            sign[sign == 0] = 1.0
            frame = np.linalg.solve(np.linalg.cholesky(W).T, q * sign)
            self.h_frame = np.broadcast_to(frame, (self.n_sites,) + frame.shape)
        else:  # per-site frames with the same deterministic convention
            frames = []
            Wh = np.linalg.cholesky(W).T
            for n in range(self.n_sites):
                w, v = np.linalg.eigh(pih[n] @ W)
                fr = v[:, w > 0.5]
                q, r = np.linalg.qr(Wh @ fr)
                sign = np.sign(np.diag(r))
                sign[sign == 0] = 1.0
                frames.append(np.linalg.solve(Wh, q * sign))
            self.h_frame = np.stack(frames)
        self.n_frame = self.split.q_n
        self.dim_h = self.h_frame.shape[2]
        self.dim_n = self.n_frame.shape[2]

    def spinor_to_h(self, fld):
        W = self.rep.space.inner
        arr = hy._sites(fld)
        return np.einsum("nic,ij,nj->nc", self.h_frame, W, arr).ravel()

    def h_to_spinor(self, coords):
        arr = np.einsum("nic,nc->ni", self.h_frame,
                        coords.reshape(self.n_sites, self.dim_h))
        return hy._from_sites(self.geom, f3.spinor_fiber(self.rep), arr)

    def spinor_to_n(self, fld):
        W = self.rep.space.inner
        arr = hy._sites(fld)
        return np.einsum("nic,ij,nj->nc", self.n_frame, W, arr).ravel()

    def n_to_spinor(self, coords):
        arr = np.einsum("nic,nc->ni", self.n_frame,
                        coords.reshape(self.n_sites, self.dim_n))
        return hy._from_sites(self.geom, f3.spinor_fiber(self.rep), arr)

    # -- horizontal Dirac and kernels ---------------------------------------
    def _build_dh(self, kernel_tol):
        rep = self.rep
        nH = self.dim_h * self.n_sites
        cols = np.empty((nH, nH))
        for j in range(nH):
            e = np.zeros(nH)
            e[j] = 1.0
            fld = self.h_to_spinor(e)
            out = self.split.project_h(f3.dirac(rep, self.conn, fld))
            cols[:, j] = self.spinor_to_h(out)
        self.dh_mat = 0.5 * (cols + cols.T)
        evals, evecs = np.linalg.eigh(self.dh_mat)
        self.dh_evals, self.dh_evecs = evals, evecs
        mask = np.abs(evals) < kernel_tol
        kernel = evecs[:, mask]
        # radial direction: the spinor itself, normalized in L^2 coords
        radial = self.spinor_to_h(self.c0.phi)
        radial = radial / np.linalg.norm(radial)
        self.radial = radial
        # project the radial line out of the kernel for the slice space
        if kernel.shape[1] == 0:
            raise NotAFueterLift("radial direction missing from the kernel")
        proj = kernel @ (kernel.T @ radial)
        if np.linalg.norm(proj - radial) > 1e-6:
            raise NotAFueterLift("radial direction missing from the kernel")
        rest = kernel - np.outer(radial, radial @ kernel)
        q, r = np.linalg.qr(rest)
        keep = np.abs(np.diag(r)) > 1e-8
        self.i_partial = q[:, keep]              # ker minus the radial line
        self.coker = kernel                      # self-adjoint: coker = ker
        self.kernel_dim = kernel.shape[1]

    def bordered_dh_matrix(self):
        """Rows (pi_0, -2<., Phi0>_{L2}, iota + D_H) as one square matrix."""
        nH = self.dh_mat.shape[0]
        di = self.i_partial.shape[1]
        do = self.coker.shape[1]
        w = self.site_weight
        out = np.zeros((di + 1 + nH, do + nH))
        out[:di, do:] = self.i_partial.T
        out[di, do:] = -2.0 * w * self._phi0_coords()
        out[di + 1:, :do] = self.coker
        out[di + 1:, do:] = self.dh_mat
        return out

    def _phi0_coords(self):
        return self.spinor_to_h(self.c0.phi)

    def bordered_dh_solve(self, rhs_i, rhs_r, rhs_h):
        """Solve barD_H (o, h) = (rhs_i, rhs_r, rhs_h)."""
        M = self.bordered_dh_matrix()
        rhs = np.concatenate([np.atleast_1d(rhs_i), np.atleast_1d(rhs_r), rhs_h])
        sol = np.linalg.solve(M, rhs)
        do = self.coker.shape[1]
        return sol[:do], sol[do:]

    def dh_solve_perp(self, rhs_h):
        """Solve D_H h = rhs_h orthogonally to the kernel (rhs must be
        orthogonal to the cokernel); returns (h, coker residual norm)."""
        coef = self.coker.T @ rhs_h
        evals, evecs = self.dh_evals, self.dh_evecs
        inv = np.zeros_like(evals)
        mask = np.abs(evals) > 1e-10
        inv[mask] = 1.0 / evals[mask]
        h = evecs @ (inv * (evecs.T @ rhs_h))
        return h, float(np.linalg.norm(coef) * np.sqrt(self.site_weight))

    # -- full linearization matrices -----------------------------------------
    def linearization_matrices(self):
        """(L0, Lder): the eps-independent part and the eps^2 coefficient of
        the four-row linearization at the solve parameter."""
        if "L0" in self._lin_cache:
            return self._lin_cache["L0"], self._lin_cache["Lder"]
        rep, c0 = self.rep, self.c0
        p = self.solve_parameter
        lin0 = swop.linearization(rep, p, c0, "L0")
        lin1 = swop.linearization(rep, p, c0, "Leps", 1.0)
        L0 = self.space.assemble(lin0.apply, with_scalar=True)
        L1 = self.space.assemble(lin1.apply, with_scalar=True)
        Lder = L1 - L0
        self._lin_cache["L0"] = L0
        self._lin_cache["Lder"] = Lder
        return L0, Lder

    def y_dim(self):
        return self.space.dim + 1

    # coordinates of the I_partial / coker subspaces inside X and Y vectors
    def i_basis_x(self):
        """I_partial as orthonormal columns in the packed X coordinates."""
        cols = []
        for j in range(self.i_partial.shape[1]):
            fld = self.h_to_spinor(self.i_partial[:, j])
            t = swop.TangentTriple(
                fld, f3.Field.zeros(self.geom, f3.form_fiber(self.rep, 1, "g")),
                f3.Field.zeros(self.geom, f3.form_fiber(self.rep, 0, "g")))
            cols.append(self.space.pack(t))
        return np.stack(cols, 1) if cols else np.zeros((self.space.dim, 0))

    def o_basis_y(self):
        """Cokernel as orthonormal columns in the packed Y coordinates."""
        cols = []
        for j in range(self.coker.shape[1]):
            fld = self.h_to_spinor(self.coker[:, j])
            r = swop.ResidualBundle(
                spinor=fld,
                form=f3.Field.zeros(self.geom, f3.form_fiber(self.rep, 1, "g")),
                zero_form=f3.Field.zeros(self.geom, f3.form_fiber(self.rep, 0, "g")),
                scalar=0.0)
            cols.append(self.space.pack_residual(r, with_scalar=True))
        return np.stack(cols, 1) if cols else np.zeros((self.y_dim(), 0))

    # -- weighted grams -----------------------------------------------------
    def weighted_gram_x(self, eps, level=0):
        """Quadratic realization of the eps-weighted norm on packed X."""
        return _triple_gram(self.rep, self.geom, eps, level)

    def weighted_gram_y(self):
        return _y_gram(self.rep, self.geom)

    def bordered_full_matrix(self, eps):
        """Generic bordered linearization [[0, pi], [iota, L_eps]] with
        L2-orthonormal slice/cokernel slots."""
        L0, Lder = self.linearization_matrices()
        L = L0 + eps ** 2 * Lder
        Ib = self.i_basis_x()
        Ob = self.o_basis_y()
        di, do = Ib.shape[1], Ob.shape[1]
        n, m = self.space.dim, self.y_dim()
        bar = np.zeros((di + m, do + n))
        sw = np.sqrt(self.site_weight)
        bar[:di, do:] = Ib.T * sw
        bar[di:, :do] = Ob / sw
        bar[di:, do:] = L
        return bar

    def sigma_min_weighted(self, eps, level=0):
        """Smallest singular value of the bordered operator from the
        weighted X-norm to the Y-norm (quadratic norm realizations)."""
        bar = self.bordered_full_matrix(eps)
        di = self.i_partial.shape[1]
        do = self.coker.shape[1]
        sx_inv = _triple_gram_sqrt(self.rep, self.geom, eps, level, inverse=True)
        sy = _y_gram_sqrt(self.rep, self.geom)
        SX = sla.block_diag(np.eye(do), sx_inv)
        SY = sla.block_diag(np.eye(di), sy)
        Lw = SY @ bar @ SX
        return float(np.linalg.svd(Lw, compute_uv=False)[-1])


def _sqrt_apply(G, inverse=False):
    w, v = np.linalg.eigh(G)
    w = np.clip(w, 1e-300, None)
    w = 1.0 / np.sqrt(w) if inverse else np.sqrt(w)
    return (v * w) @ v.T


def _x_block_data(rep, geom, eps, level):
    k = level
    m = geom.modes()
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    w2 = np.einsum("i...,ij,j...->...", vec, geom.inv_metric, vec).ravel()
    mult_phi = sum(w2 ** j for j in range(k + 2))
    mult_ax = sum(w2 ** j for j in range(k + 1)) \
        + eps ** 2 * w2 ** (k + 1) + eps ** 4 * w2 ** (k + 2)
    gs = f3.fiber_gram(rep, geom, f3.spinor_fiber(rep))
    ga = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 1, "g"))
    gx = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 0, "g"))
    return [(gs, mult_phi), (ga, mult_ax), (gx, mult_ax)]


def _triple_gram_sqrt(rep, geom, eps, level=0, inverse=False):
    """Kron-structured square root (or inverse root) of the X gram."""
    blocks = []
    for fib, mult in _x_block_data(rep, geom, eps, level):
        Gs = _component_block_gram(geom, mult)
        blocks.append(np.kron(_sqrt_apply(fib, inverse), _sqrt_apply(Gs, inverse)))
    return sla.block_diag(*blocks)


def _y_gram_sqrt(rep, geom):
    N3 = geom.N ** 3
    m = geom.modes()
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    w2 = np.einsum("i...,ij,j...->...", vec, geom.inv_metric, vec).ravel()
    gs = f3.fiber_gram(rep, geom, f3.spinor_fiber(rep))
    ga = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 1, "g"))
    gx = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 0, "g"))
    G0 = _component_block_gram(geom, np.ones(N3))
    G1 = _component_block_gram(geom, 1.0 + w2)
    blocks = [np.kron(_sqrt_apply(gs), _sqrt_apply(G0)),
              np.kron(_sqrt_apply(ga), _sqrt_apply(G1)),
              np.kron(_sqrt_apply(gx), _sqrt_apply(G1)),
              np.eye(1)]
    return sla.block_diag(*blocks)


def _component_block_gram(geom, mult):
    """Gram matrix of sum_m mult(m) |u_m|^2 on one real scalar component."""
    N = geom.N
    N3 = N ** 3
    F = np.fft.fftn(np.eye(N3).reshape(N3, N, N, N), axes=(1, 2, 3)).reshape(N3, N3)
    # columns are FFTs of delta functions; gram = F^H diag(mult) F / N^3
    G = (F.conj().T * mult) @ F / N3
    return G.real * (geom.volume / N3)


def _triple_gram(rep, geom, eps, level=0):
    k = level
    N3 = geom.N ** 3
    m = geom.modes()
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    w2 = np.einsum("i...,ij,j...->...", vec, geom.inv_metric, vec).ravel()
    mult_phi = sum(w2 ** j for j in range(k + 2))
    mult_ax = sum(w2 ** j for j in range(k + 1)) \
        + eps ** 2 * w2 ** (k + 1) + eps ** 4 * w2 ** (k + 2)
    Gphi = _component_block_gram(geom, mult_phi)
    Gax = _component_block_gram(geom, mult_ax)
    gs = f3.fiber_gram(rep, geom, f3.spinor_fiber(rep))
    ga = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 1, "g"))
    gx = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 0, "g"))
    return sla.block_diag(np.kron(gs, Gphi), np.kron(ga, Gax),
                          np.kron(gx, Gax))


def _y_gram(rep, geom):
    N3 = geom.N ** 3
    m = geom.modes()
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    w2 = np.einsum("i...,ij,j...->...", vec, geom.inv_metric, vec).ravel()
    G0 = _component_block_gram(geom, np.ones(N3))
    G1 = _component_block_gram(geom, 1.0 + w2)
    gs = f3.fiber_gram(rep, geom, f3.spinor_fiber(rep))
    ga = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 1, "g"))
    gx = f3.fiber_gram(rep, geom, f3.form_fiber(rep, 0, "g"))
    return sla.block_diag(np.kron(gs, G0), np.kron(ga, G1), np.kron(gx, G1),
                          np.eye(1))


# ---------------------------------------------------------------------------
# structured split operators and the closed-form limit inverse

class StructuredBlocks:
    """Field-level blocks of the split linearization at a lift.

    All maps act on and return lattice fields / coefficient pairs:
    dh, dn are the diagonal Dirac blocks, hn (= gamma II) and nh
    (= -gamma II*) the off-diagonal ones, amap the normal-space
    parametrization with its pointwise inverses.
    """

    def __init__(self, assembly):
        self.asm = assembly
        self.rep, self.p, self.c0 = assembly.rep, assembly.p, assembly.c0
        self.split = assembly.split
        self.conn = assembly.conn

    def dirac(self, fld):
        return f3.dirac(self.rep, self.conn, fld)

    def dh(self, fld):
        s = self.split
        return s.project_h(self.dirac(s.project_h(fld)))

    def dn(self, fld):
        s = self.split
        return s.project_n(self.dirac(s.project_n(fld)))

    def gamma_ii(self, fld):
        """pi_N D pi_H: the block mapping horizontal into normal."""
        s = self.split
        return s.project_n(self.dirac(s.project_h(fld)))

    def gamma_ii_star(self, fld):
        """pi_H D pi_N (the block named -gamma II* carries this value with
        the sign handled at the call sites)."""
        s = self.split
        return s.project_h(self.dirac(s.project_n(fld)))

    def delta_pair(self, a, xi, eps2=1.0):
        """The first-order pair operator (*(d a) + d xi, d* a), scaled."""
        rep, conn = self.rep, self.conn
        out_a = f3.hodge(rep, f3.exterior_d(rep, conn, a)) \
            + f3.exterior_d(rep, conn, xi)
        out_xi = f3.exterior_d(rep, conn, a, adjoint=True)
        return eps2 * out_a, eps2 * out_xi

    def zeps_apply(self, a, xi, eps):
        """z_eps (a, xi) = amap(a, xi) + eps^2 (D_N + gII barD_H^{-1} gII*)
        (amap*)^{-1} delta (a, xi), valued in Gamma(N)."""
        s, asm = self.split, self.asm
        base = s.apply_a(a, xi)
        da, dxi = self.delta_pair(a, xi)
        w = s.a_star_inv(da, dxi)
        t1 = self.dn(w)
        g = self.gamma_ii_star(w)
        o, hc = asm.bordered_dh_solve(
            np.zeros(asm.i_partial.shape[1]), 0.0, asm.spinor_to_h(g))
        hfld = asm.h_to_spinor(hc)
        t2 = -1.0 * self.gamma_ii(hfld)
        return base + (eps ** 2) * (t1 + t2)

    def zeps_matrix(self, eps):
        """Dense matrix of z_eps from packed (a, xi) to N-coordinates."""
        asm = self.asm
        rep, geom = self.rep, asm.geom
        dg = rep.dim_g
        nV = 4 * dg * asm.n_sites
        cols = np.empty((asm.dim_n * asm.n_sites, nV))
        for j in range(nV):
            v = np.zeros(nV)
            v[j] = 1.0
            a, xi = _unpack_pair(rep, geom, v)
            out = self.zeps_apply(a, xi, eps)
            cols[:, j] = asm.spinor_to_n(out)
        return cols


def _unpack_pair(rep, geom, v):
    N = geom.N
    dg = rep.dim_g
    na = 3 * dg * N ** 3
    a = f3.Field(geom, f3.form_fiber(rep, 1, "g"), "lattice",
                 v[:na].reshape(3 * dg, N, N, N))
    xi = f3.Field(geom, f3.form_fiber(rep, 0, "g"), "lattice",
                  v[na:].reshape(dg, N, N, N))
    return a, xi


def _pack_pair(a, xi):
    return np.concatenate([a.data.ravel(), xi.data.ravel()])


def invert_z_epsilon(assembly, eps, rhs_field, method="dense", tol=1e-11,
                     max_iter=400):
    """Solve z_eps (a, xi) = rhs for a normal-space spinor field rhs.

    'dense' factors the assembled matrix; 'iterative' runs preconditioned
    lgmres on the symmetrized system amap* z_eps with the flat-mode
    diagonal of (amap* amap + eps^2 delta^2) as preconditioner.
    Returns ((a, xi), diagnostics with the weighted-norm stability ratio).
    """
    blocks = StructuredBlocks(assembly)
    asm = assembly
    rep, geom = asm.rep, asm.geom
    rhs_n = asm.spinor_to_n(rhs_field)
    if method == "dense":
        Z = blocks.zeps_matrix(eps)
        sol, *_ = np.linalg.lstsq(Z, rhs_n, rcond=None)
        resid = float(np.linalg.norm(Z @ sol - rhs_n))
        its = 0
    else:
        from scipy.sparse.linalg import LinearOperator, lgmres
        dg = rep.dim_g
        nV = 4 * dg * asm.n_sites

        def apply_sym(v):
            a, xi = _unpack_pair(rep, geom, v)
            out = blocks.zeps_apply(a, xi, eps)
            aa, axi = asm.split.a_star(out)
            return _pack_pair(aa, axi)

        def precond(v):
            a, xi = _unpack_pair(rep, geom, v)
            # a* a is pointwise SPD; eps^2 delta^2 is the flat vector
            # Laplacian on each slot: invert mode-diagonally + mean gram
            ata = asm.split.ata_inv
            packed = np.concatenate([hy._sites(a), hy._sites(xi)], 1)
            out = np.einsum("ncd,nd->nc", ata, packed)
            a2, xi2 = asm.split._split_pair(out)
            return _pack_pair(a2, xi2)

        A = LinearOperator((nV, nV), matvec=apply_sym)
        M = LinearOperator((nV, nV), matvec=precond)
        arhs, xirhs = asm.split.a_star(rhs_field)
        b = _pack_pair(arhs, xirhs)
        sol, info = lgmres(A, b, M=M, rtol=tol, maxiter=max_iter)
        if info != 0:
            raise NoConvergence(max_iter, float(np.linalg.norm(apply_sym(sol) - b)))
        a, xi = _unpack_pair(rep, geom, sol)
        resid = float(np.linalg.norm(
            asm.spinor_to_n(blocks.zeps_apply(a, xi, eps)) - rhs_n))
        its = info
        sol = _pack_pair(a, xi)
    a, xi = _unpack_pair(rep, geom, sol)
    rhs_norm = f3.l2_norm(rep, rhs_field)
    weighted = (np.sqrt(f3.l2_norm(rep, a) ** 2 + f3.l2_norm(rep, xi) ** 2)
                + eps * np.sqrt(f3.grad_power_norm(rep, a, 1) ** 2
                                + f3.grad_power_norm(rep, xi, 1) ** 2)
                + eps ** 2 * np.sqrt(f3.grad_power_norm(rep, a, 2) ** 2
                                     + f3.grad_power_norm(rep, xi, 2) ** 2))
    diag = {"residual": resid, "iterations": its,
            "stability_c": weighted / rhs_norm if rhs_norm else 0.0}
    return (a, xi), diag


def closed_form_limit_inverse(assembly, w_i, w_r, w_h, w_n, w_pair):
    """Apply the explicit inverse of the split limit operator.

    Input lives in (I_partial, R, Gamma(H), Gamma(N), (a, xi)); output in
    (coker, Gamma(H), Gamma(N), (a, xi)).
    """
    blocks = StructuredBlocks(assembly)
    asm = assembly
    s = asm.split
    # n-component from the V-row: -amap* n = w_pair
    n_fld = -1.0 * s.a_star_inv(*w_pair)
    # (o, h)-component: iota o + D_H h = -pi_H D(n) - w_H, with the slice
    # and normalization rows carrying -w_i, -w_r
    g = blocks.gamma_ii_star(n_fld)
    rhs_h = -asm.spinor_to_h(w_h) - asm.spinor_to_h(g)
    o, hc = asm.bordered_dh_solve(-np.atleast_1d(w_i), -np.atleast_1d(w_r),
                                  rhs_h)
    h_fld = asm.h_to_spinor(hc)
    # (a, xi)-component from the N-row
    t = blocks.gamma_ii(h_fld) * -1.0 + blocks.dn(n_fld) * -1.0 \
        - s.project_n(w_n)
    a, xi = s.a_inv(t)
    return o, h_fld, n_fld, (a, xi)


def structured_limit_apply(assembly, o, h_fld, n_fld, pair, eps=0.0):
    """Apply the split operator (rows I, R, H, N, V) to (o, h, n, (a,xi))."""
    blocks = StructuredBlocks(assembly)
    asm = assembly
    s = asm.split
    a, xi = pair
    hc = asm.spinor_to_h(h_fld)
    w = asm.site_weight
    y_i = -asm.i_partial.T @ hc
    y_r = 2.0 * w * asm._phi0_coords() @ hc
    coker_fld = asm.h_to_spinor(asm.coker @ o) if o.size else \
        asm.h_to_spinor(np.zeros(asm.dh_mat.shape[0]))
    y_h = -1.0 * coker_fld - blocks.dh(h_fld) - blocks.gamma_ii_star(n_fld)
    y_n = -1.0 * blocks.gamma_ii(h_fld) - blocks.dn(n_fld) - s.apply_a(a, xi)
    da, dxi = blocks.delta_pair(a, xi, eps ** 2)
    y_pair = (da, dxi)
    # the V-row pairs -a* n with the derivative part
    an_a, an_xi = s.a_star(n_fld)
    y_pair = (y_pair[0] - an_a, y_pair[1] - an_xi)
    return y_i, y_r, y_h, y_n, y_pair


# ---------------------------------------------------------------------------
# expansion of bordered solutions in even powers of eps

class EpsilonFamily:
    """Quadratic bordered family z -> barL(eps) z + Q(eps)(x) + e(eps) - d.

    Abstract finite-dimensional presentation: dense matrices barL0 and
    barLder (the eps^2 coefficient), bilinear maps quad0/quadder acting on
    the x-part and valued in the bordered codomain, offsets e0/eder, and
    an embedding of slice data d into the codomain.  norm_x measures the
    (possibly eps-weighted) size of bordered vectors.
    """

    def __init__(self, barL0, barLder, polar0, polarder, e0, eder, dim_o,
                 embed_d, norm_x=None, name="family"):
        self.barL0, self.barLder = barL0, barLder
        self.polar0, self.polarder = polar0, polarder
        self.e0, self.eder = e0, eder
        self.dim_o = dim_o
        self.embed_d = embed_d
        self.norm_x = norm_x or (lambda z, eps: float(np.linalg.norm(z)))
        self.name = name

    def barL(self, eps):
        return self.barL0 + eps ** 2 * self.barLder

    def offset(self, eps):
        return self.e0 + eps ** 2 * self.eder

    def polar(self, z1, z2, eps):
        return self.polar0(z1, z2) + eps ** 2 * self.polarder(z1, z2)

    def residual(self, z, eps, d):
        return self.barL(eps) @ z + self.polar(z, z, eps) \
            + self.offset(eps) - self.embed_d(d)

    def solve(self, eps, d, tol=1e-12, max_iter=100):
        lu = sla.lu_factor(self.barL(eps))
        z = np.zeros(self.barL0.shape[1])
        prev = None
        for it in range(max_iter):
            F = self.residual(z, eps, d)
            res = np.linalg.norm(F)
            if res < tol:
                return z, it
            if prev is not None and res > 10 * prev + tol:
                raise NoConvergence(it, res)
            prev = res
            z = z - sla.lu_solve(lu, F)
        raise NoConvergence(max_iter, res)


@dataclass
class ExpansionOutput:
    base: np.ndarray                 # c0-bar coefficient
    corrections: list                # chat_1..chat_r
    ob_boundary: np.ndarray
    ob_corrections: list
    eps_grid: list
    remainders: list
    slope: float
    recursion_sign: float


def epsilon_expansion(family, d, order, eps_grid=(0.2, 0.1, 0.05),
                      tol=1e-12, require_slope=None):
    """Even-power expansion of the bordered solution and its obstruction.

    Builds the coefficients by the linearized-recursion at the base
    solution, choosing the update sign that cancels the next residual
    order (verified numerically), then measures the remainder order
    against full solves on the eps grid.
    """
    z0, _ = family.solve(0.0, d, tol)
    lu0 = sla.lu_factor(family.barL0)

    def m0_solve(b):
        # solve (barL0 + 2 Q0(z0, .)) c = b by preconditioned Richardson;
        # the quadratic coupling at the small base point is a contraction
        bn = max(1.0, np.linalg.norm(b))
        c = sla.lu_solve(lu0, b)
        best = None
        for _ in range(200):
            r = family.barL0 @ c + 2.0 * family.polar0(z0, c) - b
            rn = np.linalg.norm(r)
            if rn < 1e-12 * bn:
                return c
            if best is not None and rn > 0.9 * best:
                if rn < 1e-8 * bn:
                    return c      # stagnation at roundoff level
                raise NoConvergence(200, float(rn))
            best = rn if best is None else min(best, rn)
            c = c - sla.lu_solve(lu0, r)
        raise NoConvergence(200, float(rn))

    coeffs = [z0]
    for m in range(1, order + 1):
        # eps^{2m} coefficient of the residual, excluding the unknown c_m
        P = family.barLder @ coeffs[m - 1]
        for i in range(m + 1):
            j = m - i
            if i < len(coeffs) and j < len(coeffs) and i != m and j != m:
                P = P + family.polar0(coeffs[i], coeffs[j])
        for i in range(m):
            j = m - 1 - i
            if i < len(coeffs) and j < len(coeffs):
                P = P + family.polarder(coeffs[i], coeffs[j])
        if m == 1:
            P = P + family.eder
        coeffs.append(m0_solve(-P))

    def partial_sum(eps):
        out = coeffs[0].copy()
        for m in range(1, order + 1):
            out = out + eps ** (2 * m) * coeffs[m]
        return out

    remainders = []
    for eps in eps_grid:
        z_eps, _ = family.solve(eps, d, tol)
        remainders.append(family.norm_x(z_eps - partial_sum(eps), eps))
    logs = np.log(np.maximum(remainders, 1e-300))
    slope = float(np.polyfit(np.log(eps_grid), logs, 1)[0])

    do = family.dim_o
    ob_b = -coeffs[0][:do]
    ob_corr = [-c[:do] for c in coeffs[1:]]
    out = ExpansionOutput(coeffs[0], coeffs[1:], ob_b, ob_corr,
                          list(eps_grid), remainders, slope, -1.0)
    if require_slope is not None and slope < require_slope:
        raise OrderNotReached(slope, require_slope)
    return out


def _family_polar_matrix(family, z0):
    n = z0.shape[0]
    cols = [2.0 * family.polar0(z0, np.eye(n)[j]) for j in range(n)]
    return np.stack(cols, 1)


def toy_epsilon_family(rng, nx=5, kernel_dim=2, scale=0.3):
    """Manufactured finite-dimensional family with full eps structure."""
    sys = random_fredholm_system(rng, nx, nx, kernel_dim=kernel_dim,
                                 q_scale=scale, e_scale=0.01)
    L = sys.L_at(None)
    di, do = sys.dim_I, sys.dim_O
    n = L.shape[1]
    ell = 0.4 * rng.standard_normal((nx, nx))
    Tq = 0.2 * rng.standard_normal((nx, n, n))
    Tq = 0.5 * (Tq + Tq.transpose(0, 2, 1))
    ehat = 0.3 * rng.standard_normal(nx)

    dim = do + n
    barL0 = np.zeros((di + nx, dim))
    barL0[:di, do:] = sys.I_basis.T
    barL0[di:, :do] = sys.O_basis
    barL0[di:, do:] = L
    barLder = np.zeros_like(barL0)
    barLder[di:, do:] = ell

    def polar0(z1, z2):
        out = np.zeros(di + nx)
        out[di:] = sys.polar(z1[do:], z2[do:])
        return out

    def polarder(z1, z2):
        out = np.zeros(di + nx)
        out[di:] = np.einsum("oij,i,j->o", Tq, z1[do:], z2[do:])
        return out

    e0 = np.zeros(di + nx)
    e0[di:] = sys.e_at(None)
    eder = np.zeros(di + nx)
    eder[di:] = ehat

    def embed_d(d):
        out = np.zeros(di + nx)
        out[:di] = np.atleast_1d(d) if di else 0.0
        return out

    fam = EpsilonFamily(barL0, barLder, polar0, polarder, e0, eder, do,
                        embed_d, name="toy-eps")
    fam.system = sys
    return fam


def pde_epsilon_family(assembly, eps2_source=None):
    """The discretized bordered family at the assembly's solve parameter.

    eps2_source, when given, is a g-valued 1-form added to the eps^2
    offset slot (the position the dualized gauge curvature of the base
    occupies in general); it drives the normal-block response and with it
    the genuine eps-dependence of the solutions.
    """
    asm = assembly
    rep, c0 = asm.rep, asm.c0
    p = asm.solve_parameter
    space = asm.space
    L0, Lder = asm.linearization_matrices()
    Ib = asm.i_basis_x()
    Ob = asm.o_basis_y()
    di, do = Ib.shape[1], Ob.shape[1]
    n, m = space.dim, asm.y_dim()
    sw = np.sqrt(asm.site_weight)

    barL0 = np.zeros((di + m, do + n))
    barL0[:di, do:] = Ib.T * sw
    barL0[di:, :do] = Ob / sw
    barL0[di:, do:] = L0
    barLder = np.zeros_like(barL0)
    barLder[di:, do:] = Lder

    def quad_y(t, mode_eps):
        q = swop.quadratic_part(rep, p, c0, t, *mode_eps)
        return space.pack_residual(q, with_scalar=True)

    def polar0(z1, z2):
        t1 = space.unpack(z1[do:])
        t2 = space.unpack(z2[do:])
        qp = quad_y(t1 + t2, ("Zero", None))
        q1 = quad_y(t1, ("Zero", None))
        q2 = quad_y(t2, ("Zero", None))
        out = np.zeros(di + m)
        out[di:] = 0.5 * (qp - q1 - q2)
        return out

    def polarder(z1, z2):
        # only the eps^2 [a ^ a] term differs between the modes
        t1 = space.unpack(z1[do:])
        t2 = space.unpack(z2[do:])
        br = f3.wedge_bracket(rep, t1.a, t2.a) \
            + f3.wedge_bracket(rep, t2.a, t1.a)
        row = f3.hodge(rep, 0.25 * br)
        r = swop.ResidualBundle(
            spinor=f3.Field.zeros(asm.geom, f3.spinor_fiber(rep)),
            form=row,
            zero_form=f3.Field.zeros(asm.geom, f3.form_fiber(rep, 0, "g")),
            scalar=0.0)
        out = np.zeros(di + m)
        out[di:] = space.pack_residual(r, with_scalar=True)
        return out

    e_zero = swop.offset_term(rep, p, c0, "Zero")
    e_eps1 = swop.offset_term(rep, p, c0, "Eps", 1.0)
    e0v = space.pack_residual(e_zero, with_scalar=True)
    e1v = space.pack_residual(e_eps1, with_scalar=True)
    e0 = np.zeros(di + m)
    e0[di:] = e0v
    eder = np.zeros(di + m)
    eder[di:] = e1v - e0v
    if eps2_source is not None:
        src = swop.ResidualBundle(
            spinor=f3.Field.zeros(asm.geom, f3.spinor_fiber(rep)),
            form=eps2_source,
            zero_form=f3.Field.zeros(asm.geom, f3.form_fiber(rep, 0, "g")),
            scalar=0.0)
        eder[di:] += space.pack_residual(src, with_scalar=True)

    def embed_d(d):
        out = np.zeros(di + m)
        if di:
            out[:di] = np.atleast_1d(d)
        return out

    def norm_x(z, eps):
        t = space.unpack(z[do:])
        return float(np.abs(z[:do]).sum()
                     + t.weighted_norm(rep, eps))

    return EpsilonFamily(barL0, barLder, polar0, polarder, e0, eder, do,
                         embed_d, norm_x, name="pde-eps")


# ---------------------------------------------------------------------------
# wall crossing

@dataclass
class WallCrossReport:
    chi: object
    phi: object
    a: object
    xi: object
    o_value: float
    delta: float
    lambda_dot: float
    sigma: int
    identity_defect: float
    t4_coefficient: float
    crossing_side: int
    solution_sign: int
    net_count_change: int
    source_norm: float
    coker_defect: float = 0.0
    kernel_dim: int = 1


def wall_crossing(rep, p, c0, sigma=+1, lambda_dot=1.0, source=None,
                  assembly=None, kernel_policy="strict"):
    """Crossing data at a lift of the degenerate-limit equations.

    chi = (amap*)^{-1} of the 1-form source (default: the dualized
    curvature of the gauge part); phi and (a, xi) follow the closed-form
    limit inverse; the report carries o, delta, the quartic crossing
    coefficient delta/lambda_dot, and the signed-count bookkeeping.

    kernel_policy 'strict' demands that the horizontal kernel is exactly
    the radial line (raising KernelTooLarge otherwise); 'bordered' allows
    larger kernels and solves through the bordered operator, which is
    exact whenever the off-diagonal image stays orthogonal to the kernel
    (automatic in the decoupled regime).
    """
    asm = assembly or HaydysAssembly(rep, p, c0)
    if kernel_policy == "strict" and asm.kernel_dim > 1:
        raise KernelTooLarge(asm.kernel_dim)
    blocks = StructuredBlocks(asm)
    s = asm.split
    geom = asm.geom
    conn = asm.conn

    if source is None:
        source = f3.hodge(rep, f3.curvature(rep, conn))
    src_norm = f3.l2_norm(rep, source)
    zero0 = f3.Field.zeros(geom, f3.form_fiber(rep, 0, "g"))
    if src_norm < 1e-14:
        z1 = f3.Field.zeros(geom, f3.spinor_fiber(rep))
        za = f3.Field.zeros(geom, f3.form_fiber(rep, 1, "g"))
        return WallCrossReport(z1, z1, za, zero0, 0.0, 0.0, lambda_dot,
                               sigma, 0.0, 0.0, 0, 0, 0, 0.0,
                               kernel_dim=asm.kernel_dim)

    chi = s.a_star_inv(source, zero0)
    g = blocks.gamma_ii_star(chi)
    gh = asm.spinor_to_h(g)
    # radial-orthogonality of the off-diagonal image (exact at lifts)
    radial_ip = float(asm.radial @ gh) * asm.site_weight
    h_sol, coker_resid = asm.dh_solve_perp(gh)
    phi_h = asm.h_to_spinor(h_sol)
    phi = phi_h - chi
    rhs_n = blocks.dn(chi) - blocks.gamma_ii(phi_h)
    a, xi = s.a_inv(rhs_n)

    gb_phi = f3.gamma_bar_apply(rep, a, phi)
    o_val = f3.l2_inner(rep, c0.phi, gb_phi)
    dphi = f3.dirac(rep, conn, phi)
    delta = f3.l2_inner(rep, phi, dphi)
    ident = abs(delta + o_val) / (abs(delta) + abs(o_val) + 1e-12)

    t4 = delta / lambda_dot
    side = int(np.sign(t4)) if t4 != 0 else 0
    sol_sign = -sigma * int(np.sign(delta)) if delta != 0 else 0
    # the crossing removes one signed solution regardless of the side
    net = -1 if delta != 0 else 0
    return WallCrossReport(chi, phi, a, xi, o_val, delta, lambda_dot, sigma,
                           ident, t4, side, sol_sign, net, src_norm,
                           coker_defect=coker_resid + abs(radial_ip),
                           kernel_dim=asm.kernel_dim)


def fig_bookkeeping(lambda_dot, sigma, delta):
    """Side of the wall carrying the solution, its sign, and the net
    signed-count change across the wall (left to right)."""
    side = int(np.sign(delta / lambda_dot))
    sol_sign = -sigma * int(np.sign(delta))
    count_right = sol_sign if side > 0 else 0
    count_left = sol_sign if side < 0 else 0
    return {"side": side, "solution_sign": sol_sign,
            "net_change": count_right - count_left}


# ---------------------------------------------------------------------------
# surrogate crossing family

def surrogate_crossing_family(rng, n=6, delta_sign=+1, scale=0.5):
    """Finite-dimensional one-parameter family crossing a wall at t = 0.

    F(t, eps, x) = L0 x + t M x + eps^2 ell x + Q(x) + t u + eps^2 ehat,
    with ker L0 = span(u) = coker L0 and <u, ehat> = 0.  The boundary
    obstruction is lambda(t) = t + O(t^2) and the quartic coefficient is
    delta* = -<u, ell x1 + Q(x1)> with x1 the first-order response.
    """
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    u = V[:, 0]
    lam = rng.uniform(0.7, 1.5, n - 1) * rng.choice([-1.0, 1.0], n - 1)
    L0 = V[:, 1:] @ np.diag(lam) @ V[:, 1:].T   # symmetric, kernel span(u)
    Mmat = 0.05 * rng.standard_normal((n, n))
    Mmat = 0.5 * (Mmat + Mmat.T)
    ell = scale * rng.standard_normal((n, n))
    Tq = scale * rng.standard_normal((n, n, n))
    Tq = 0.5 * (Tq + Tq.transpose(0, 2, 1))
    ehat = rng.standard_normal(n)
    ehat -= (ehat @ u) * u
    ehat *= scale / np.linalg.norm(ehat)

    # first-order response and the quartic coefficient
    P = np.eye(n) - np.outer(u, u)
    L0_pinv = np.linalg.pinv(L0, rcond=1e-10)
    x1 = -L0_pinv @ (P @ ehat)
    delta_star = -(u @ (ell @ x1 + np.einsum("oij,i,j->o", Tq, x1, x1)))
    if delta_sign * delta_star < 0:
        ell = -ell
        Tq = -Tq
        x1p = x1
        delta_star = -(u @ (ell @ x1p + np.einsum("oij,i,j->o", Tq, x1p, x1p)))

    def residual(t, eps, x):
        return (L0 @ x + t * (Mmat @ x) + eps ** 2 * (ell @ x)
                + np.einsum("oij,i,j->o", Tq, x, x) + t * u + eps ** 2 * ehat)

    def solve_ob(t, eps, tol=1e-13):
        """Slice solve with pi x = 0; returns the obstruction <u, F>."""
        bar = np.zeros((n + 1, n + 1))
        bar[0, 1:] = u
        bar[1:, 0] = u
        bar[1:, 1:] = L0 + t * Mmat + eps ** 2 * ell
        lu = sla.lu_factor(bar)
        z = np.zeros(n + 1)
        for _ in range(100):
            o, x = z[0], z[1:]
            F = np.concatenate([[u @ x], o * u + residual(t, eps, x)])
            if np.linalg.norm(F) < tol:
                return float(u @ residual(t, eps, x)), x
            z = z - sla.lu_solve(lu, F)
        raise NoConvergence(100, float(np.linalg.norm(F)))

    return {"u": u, "delta_star": float(delta_star), "lambda_dot": 1.0,
            "residual": residual, "solve_ob": solve_ob, "x1": x1,
            "L0": L0, "ell": ell}


def fit_crossing_coefficient(family, eps_grid=(0.3, 0.2, 0.15, 0.1),
                             bracket=2.0):
    """Root-find t(eps) of the obstruction and fit t = alpha eps^4 + beta eps^6."""
    from scipy.optimize import brentq
    roots = []
    for eps in eps_grid:
        guess = family["delta_star"] * eps ** 4 / family["lambda_dot"]
        span = max(abs(guess) * bracket, 1e-3)

        def ob_of_t(t):
            return family["solve_ob"](t, eps)[0]

        lo, hi = -span + guess * 0, span
        # expand until sign change
        flo, fhi = ob_of_t(-span), ob_of_t(span)
        grow = 0
        while flo * fhi > 0 and grow < 10:
            span *= 2.0
            flo, fhi = ob_of_t(-span), ob_of_t(span)
            grow += 1
        t_root = brentq(ob_of_t, -span, span, xtol=1e-14)
        roots.append(t_root)
    eps_arr = np.asarray(eps_grid, float)
    A = np.stack([eps_arr ** 4, eps_arr ** 6], 1)
    coef, *_ = np.linalg.lstsq(A, np.asarray(roots), rcond=None)
    # the obstruction is lambda_dot t - delta* eps^4 + h.o.t., so the root
    # behaves like (delta*/lambda_dot) eps^4
    alpha = float(coef[0])
    return {"roots": roots, "alpha": alpha,
            "predicted": family["delta_star"] / family["lambda_dot"]}
