"""Discretized sections of trivialized bundles over a flat 3-torus.

Two interchangeable backends share one coefficient model:

* ``lattice``  - real values on the uniform N^3 collocation grid, spectral
  (Fourier multiplier) derivatives, pointwise products;
* ``trig``     - exact real trigonometric polynomials stored as a centered
  cube of Fourier coefficients with max frequency M; products are exact
  (evaluated on a grid large enough to resolve them, then refit).

Coordinates are x_i in [0, 2pi); the metric is a constant SPD matrix h.
Differential-form fields store their (3 choose k) components in the
coordinate coframe, slot-major with the value index innermost; the
h-orthonormal coframe enters only through the Clifford matrices and the
Hodge star.  Two-form components use the basis
(dx2^dx3, dx3^dx1, dx1^dx2).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BackendMismatch, DegreeOutOfRange, DimensionMismatch,
                     FormatError, Unsupported)

TWO_PI = 2.0 * np.pi
FORM_SLOTS = {0: 1, 1: 3, 2: 3, 3: 1}


# ---------------------------------------------------------------------------
# geometry

@dataclass(frozen=True)
class TorusGeometry:
    """Flat torus R^3/(2pi Z)^3 with constant metric and even grid size."""
    N: int
    metric: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "metric", np.asarray(self.metric, float))
        if self.N < 2 or self.N % 2:
            raise Unsupported("grid size N must be even and >= 2")
        h = self.metric
        if h.shape != (3, 3) or np.abs(h - h.T).max() > 1e-13:
            raise DimensionMismatch("metric must be symmetric 3x3")
        w = np.linalg.eigvalsh(h)
        if w[0] <= 0 or w[-1] / w[0] > 1e6:
            raise Unsupported("metric must be SPD with condition < 1e6")
        object.__setattr__(self, "_chol", np.linalg.cholesky(h))

    @property
    def coframe(self):
        """Rows are the orthonormal coframe: e^a = coframe[a, i] dx^i."""
        return self._chol.T.copy()

    @property
    def inv_metric(self):
        return np.linalg.inv(self.metric)

    @property
    def sqrt_det(self):
        return float(np.sqrt(np.linalg.det(self.metric)))

    @property
    def volume(self):
        return TWO_PI ** 3 * self.sqrt_det

    def modes(self, N=None):
        """Integer frequency along one axis in FFT order."""
        n = self.N if N is None else N
        return np.fft.fftfreq(n, d=1.0 / n)


def gamma_coord(rep, geom):
    """Clifford matrices of the coordinate covectors dx^i."""
    Cinv = np.linalg.inv(geom.coframe)
    return np.einsum("ia,ajk->ijk", Cinv, rep.space.J)


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True)
class FiberSpec:
    """What a field's components mean: spinor, g/k-valued k-form, or plain."""
    kind: str                   # 'spinor' | 'form' | 'scalar'
    degree: int = 0             # form degree
    value: str = "S"            # 'S' | 'g' | 'k' | 'R'
    ncomp: int = 0

    def label(self):
        if self.kind == "form":
            return f"form{self.degree}{self.value}"
        return self.kind


def spinor_fiber(rep):
    return FiberSpec("spinor", 0, "S", rep.dim_S)


def form_fiber(rep, degree, value="g"):
    if degree not in FORM_SLOTS:
        raise DegreeOutOfRange(f"form degree {degree}")
    vdim = {"g": rep.dim_g, "k": rep.dim_k, "S": rep.dim_S, "R": 1}[value]
    return FiberSpec("form", degree, value, FORM_SLOTS[degree] * vdim)


class Field:
    """A section, stored per backend; treated as immutable."""

    __slots__ = ("geometry", "fiber", "backend", "data", "max_freq")

    def __init__(self, geometry, fiber, backend, data, max_freq=None):
        self.geometry = geometry
        self.fiber = fiber
        self.backend = backend
        if backend == "lattice":
            data = np.asarray(data, float)
            if data.shape != (fiber.ncomp, geometry.N, geometry.N, geometry.N):
                raise DimensionMismatch(
                    f"lattice data shape {data.shape} for ncomp={fiber.ncomp}, N={geometry.N}")
            self.max_freq = None
        elif backend == "trig":
            data = np.asarray(data, complex)
            if max_freq is None:
                max_freq = (data.shape[-1] - 1) // 2
            K = 2 * max_freq + 1
            if data.shape != (fiber.ncomp, K, K, K):
                raise DimensionMismatch(
                    f"trig data shape {data.shape} for ncomp={fiber.ncomp}, M={max_freq}")
            self.max_freq = int(max_freq)
        else:
            raise BackendMismatch(f"unknown backend '{backend}'")
        self.data = data

    @classmethod
    def zeros(cls, geometry, fiber, backend="lattice", max_freq=0):
        if backend == "lattice":
            return cls(geometry, fiber, backend,
                       np.zeros((fiber.ncomp, geometry.N, geometry.N, geometry.N)))
        K = 2 * max_freq + 1
        return cls(geometry, fiber, backend,
                   np.zeros((fiber.ncomp, K, K, K), complex), max_freq)

    def _compat(self, other):
        if self.backend != other.backend:
            raise BackendMismatch("mixed backends")
        if self.geometry.N != other.geometry.N \
                or np.any(self.geometry.metric != other.geometry.metric):
            raise DimensionMismatch("mixed geometries")
        if self.fiber.ncomp != other.fiber.ncomp:
            raise DimensionMismatch("mixed fibers")

    def __add__(self, other):
        self._compat(other)
        if self.backend == "trig" and self.max_freq != other.max_freq:
            M = max(self.max_freq, other.max_freq)
            a, b = _pad_trig(self, M), _pad_trig(other, M)
            return Field(a.geometry, a.fiber, "trig", a.data + b.data, M)
        return Field(self.geometry, self.fiber, self.backend,
                     self.data + other.data, self.max_freq)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, s):
        return Field(self.geometry, self.fiber, self.backend,
                     self.data * float(s), self.max_freq)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def copy(self):
        return Field(self.geometry, self.fiber, self.backend,
                     self.data.copy(), self.max_freq)


def _pad_trig(f, M):
    if f.max_freq == M:
        return f
    K, Knew = 2 * f.max_freq + 1, 2 * M + 1
    out = np.zeros((f.fiber.ncomp, Knew, Knew, Knew), complex)
    s = M - f.max_freq
    out[:, s:s + K, s:s + K, s:s + K] = f.data
    return Field(f.geometry, f.fiber, "trig", out, M)


def hermitize(data):
    """Project trig coefficients onto the real (conjugate-symmetric) part."""
    flipped = data[:, ::-1, ::-1, ::-1].conj()
    return 0.5 * (data + flipped)


# ---------------------------------------------------------------------------
# backend conversion

def to_lattice(f, N=None):
    """Evaluate on the collocation grid (exact for N > 2*max_freq)."""
    if f.backend == "lattice":
        if N is None or N == f.geometry.N:
            return f
        return to_lattice(to_trig(f, (f.geometry.N - 1) // 2), N)
    N = N or f.geometry.N
    M = f.max_freq
    if N <= 2 * M:
        raise Unsupported(f"grid N={N} cannot resolve max frequency {M}")
    spec = np.zeros((f.fiber.ncomp, N, N, N), complex)
    idx = np.arange(-M, M + 1) % N
    spec[:, idx[:, None, None], idx[None, :, None], idx[None, None, :]] = f.data
    vals = np.fft.ifftn(spec, axes=(1, 2, 3)) * N ** 3
    geom = f.geometry if N == f.geometry.N else TorusGeometry(N, f.geometry.metric)
    return Field(geom, f.fiber, "lattice", vals.real)


def to_trig(f, M):
    """Fit a trig polynomial of max frequency M (exact if band-limited)."""
    if f.backend == "trig":
        if M >= f.max_freq:
            return _pad_trig(f, M)
        K = 2 * M + 1
        s = f.max_freq - M
        return Field(f.geometry, f.fiber, "trig",
                     f.data[:, s:s + K, s:s + K, s:s + K].copy(), M)
    N = f.geometry.N
    if 2 * M + 1 > N:
        raise Unsupported(f"cannot fit max frequency {M} from grid N={N}")
    spec = np.fft.fftn(f.data, axes=(1, 2, 3)) / N ** 3
    idx = np.arange(-M, M + 1) % N
    coef = spec[:, idx[:, None, None], idx[None, :, None], idx[None, None, :]]
    return Field(f.geometry, f.fiber, "trig", hermitize(coef), M)


# ---------------------------------------------------------------------------
# pointwise and spectral primitives

def deriv(f, j):
    """Spectral partial derivative along x_j."""
    if f.backend == "trig":
        M = f.max_freq
        m = np.arange(-M, M + 1, dtype=float)
        shape = [1, 1, 1, 1]
        shape[j + 1] = 2 * M + 1
        return Field(f.geometry, f.fiber, "trig",
                     f.data * (1j * m.reshape(shape)), M)
    N = f.geometry.N
    spec = np.fft.fftn(f.data, axes=(1, 2, 3))
    m = f.geometry.modes()
    m[N // 2] = 0.0  # drop the unpaired Nyquist mode to keep exact skewness
    shape = [1, 1, 1, 1]
    shape[j + 1] = N
    spec *= 1j * m.reshape(shape)
    return Field(f.geometry, f.fiber, "lattice",
                 np.fft.ifftn(spec, axes=(1, 2, 3)).real)


def pw_linear(mat, f, fiber_out=None):
    """Apply a constant matrix to the component vector at every point."""
    mat = np.asarray(mat, float)
    out = np.einsum("oc,c...->o...", mat, f.data)
    fiber_out = fiber_out or FiberSpec("scalar", 0, "R", mat.shape[0])
    return Field(f.geometry, fiber_out, f.backend, out, f.max_freq)


def _product_grid(M):
    n = 2 * M + 2
    return n + (n % 2)


def pw_bilinear(tensor, u, v, fiber_out=None):
    """Pointwise bilinear map out_o = T[o,a,b] u_a v_b (exact on trig)."""
    if u.backend != v.backend:
        raise BackendMismatch("mixed backends in product")
    tensor = np.asarray(tensor, float)
    fiber_out = fiber_out or FiberSpec("scalar", 0, "R", tensor.shape[0])
    if u.backend == "lattice":
        out = np.einsum("oab,a...,b...->o...", tensor, u.data, v.data)
        return Field(u.geometry, fiber_out, "lattice", out)
    Mout = u.max_freq + v.max_freq
    Np = _product_grid(Mout)
    ul = to_lattice(u, Np)
    vl = to_lattice(v, Np)
    out = np.einsum("oab,a...,b...->o...", tensor, ul.data, vl.data)
    prod = Field(TorusGeometry(Np, u.geometry.metric), fiber_out, "lattice", out)
    fitted = to_trig(prod, Mout)
    return Field(u.geometry, fiber_out, "trig", fitted.data, Mout)


# ---------------------------------------------------------------------------
# inner products and norms

def fiber_gram(rep, geom, fiber):
    """Pointwise Gram matrix of a fiber in its stored components."""
    if fiber.kind == "spinor":
        return rep.space.inner.copy()
    if fiber.kind == "scalar":
        return np.eye(fiber.ncomp)
    if fiber.kind == "form" and fiber.value == "S":
        return np.kron(geom.inv_metric, rep.space.inner)
    h, hinv, g = geom.metric, geom.inv_metric, geom.sqrt_det ** 2
    form_gram = {0: np.eye(1), 1: hinv, 2: h / g, 3: np.eye(1) / g}[fiber.degree]
    val_gram = {"g": rep.group_G.killing, "k": rep.group_K.killing,
                "R": np.eye(1)}[fiber.value]
    if val_gram.shape[0] == 0:
        return np.zeros((0, 0))
    return np.kron(form_gram, val_gram)


def l2_inner(rep, u, v, gram=None):
    """L^2 inner product with the metric volume element."""
    if u.backend != v.backend:
        raise BackendMismatch("mixed backends in inner product")
    geom = u.geometry
    if gram is None:
        gram = fiber_gram(rep, geom, u.fiber)
    if u.fiber.ncomp == 0:
        return 0.0
    if u.backend == "lattice":
        s = np.einsum("a...,ab,b...->...", u.data, gram, v.data).sum() / geom.N ** 3
    else:
        M = max(u.max_freq, v.max_freq)
        ud, vd = _pad_trig(u, M).data, _pad_trig(v, M).data
        s = np.einsum("a...,ab,b...->...", ud.conj(), gram, vd).sum().real
    return float(s * geom.volume)


def l2_norm(rep, u, gram=None):
    return float(np.sqrt(max(l2_inner(rep, u, u, gram), 0.0)))


def _spectral_weights(f):
    """|m|_h^2 per mode of the field's spectral representation."""
    geom = f.geometry
    hinv = geom.inv_metric
    if f.backend == "trig":
        m = np.arange(-f.max_freq, f.max_freq + 1, dtype=float)
    else:
        m = geom.modes()
    mx, my, mz = np.meshgrid(m, m, m, indexing="ij")
    vec = np.stack([mx, my, mz])
    return np.einsum("i...,ij,j...->...", vec, hinv, vec)


def _spectrum(rep, f, gram=None):
    """Fiber-contracted power spectrum |f_m|^2."""
    geom = f.geometry
    if gram is None:
        gram = fiber_gram(rep, geom, f.fiber)
    if f.fiber.ncomp == 0:
        return np.zeros((1, 1, 1))
    if f.backend == "trig":
        coef = f.data
    else:
        coef = np.fft.fftn(f.data, axes=(1, 2, 3)) / geom.N ** 3
    return np.einsum("a...,ab,b...->...", coef.conj(), gram, coef).real


def sobolev_norm(rep, f, order, gram=None):
    """W^{order,2} norm: gradient powers 0..order summed in square."""
    spec = _spectrum(rep, f, gram)
    w = _spectral_weights(f)
    mult = sum(w ** j for j in range(order + 1))
    return float(np.sqrt(max((spec * mult).sum() * f.geometry.volume, 0.0)))


def grad_power_norm(rep, f, power, gram=None):
    """L^2 norm of the power-th gradient (flat constant metric)."""
    spec = _spectrum(rep, f, gram)
    w = _spectral_weights(f)
    return float(np.sqrt(max((spec * w ** power).sum() * f.geometry.volume, 0.0)))


# ---------------------------------------------------------------------------
# connections

@dataclass(frozen=True)
class Connection:
    """Gauge offset a (g-valued 1-form) and flavor offset b (k-valued)."""
    a: object
    b: object

    def backend_of(self):
        for f in (self.a, self.b):
            if f is not None:
                return f.backend
        return None


def zero_connection(rep, geom, backend="lattice", max_freq=0):
    a = Field.zeros(geom, form_fiber(rep, 1, "g"), backend, max_freq)
    b = Field.zeros(geom, form_fiber(rep, 1, "k"), backend, max_freq)
    return Connection(a, b)


@dataclass(frozen=True)
class Parameter:
    """Equation parameters: the flat metric and the flavor connection."""
    geometry: TorusGeometry
    b: object

    def connection(self, a):
        return Connection(a, self.b)


def flat_parameter(rep, geom, backend="lattice", max_freq=0):
    return Parameter(geom, Field.zeros(geom, form_fiber(rep, 1, "k"), backend, max_freq))


# ---------------------------------------------------------------------------
# covariant calculus

def _rho_tensor(rep, which="g"):
    rho = rep.rho_G if which == "g" else rep.rho_K
    if rho.shape[0] == 0:
        return np.zeros((rep.dim_S, 0, rep.dim_S))
    return rho.transpose(1, 0, 2)            # T[out, alg, in]


def _slot(f, i, vdim):
    """Extract one coordinate slot of a slot-major form field."""
    sub = f.data[i * vdim:(i + 1) * vdim]
    fib = FiberSpec("scalar", 0, "R", vdim)
    return Field(f.geometry, fib, f.backend, sub, f.max_freq)


def _join_slots(geom, backend, fiber, slots):
    if backend == "trig":
        M = max(s.max_freq for s in slots)
        slots = [_pad_trig(s, M) for s in slots]
        return Field(geom, fiber, backend,
                     np.concatenate([s.data for s in slots], 0), M)
    return Field(geom, fiber, backend,
                 np.concatenate([s.data for s in slots], 0))


def covariant_deriv(rep, conn, phi):
    """nabla_A phi as an S-valued coordinate 1-form (slot-major)."""
    geom = phi.geometry
    TG = _rho_tensor(rep, "g")
    TK = _rho_tensor(rep, "k")
    parts = []
    for i in range(3):
        t = deriv(phi, i)
        if rep.dim_g and conn.a is not None:
            t = t + pw_bilinear(TG, _slot(conn.a, i, rep.dim_g), phi, phi.fiber)
        if rep.dim_k and conn.b is not None:
            t = t + pw_bilinear(TK, _slot(conn.b, i, rep.dim_k), phi, phi.fiber)
        parts.append(t)
    fib = FiberSpec("form", 1, "S", 3 * rep.dim_S)
    return _join_slots(geom, phi.backend, fib, parts)


def covariant_deriv_adjoint(rep, conn, omega):
    """Adjoint of the covariant derivative on S-valued 1-forms:
    -(sum over i, j) h^{ij} (d_i + rho(a_i) + rho(b_i)) omega_j."""
    geom = omega.geometry
    hinv = geom.inv_metric
    TG = _rho_tensor(rep, "g")
    TK = _rho_tensor(rep, "k")
    fib = spinor_fiber(rep)
    out = None
    for i in range(3):
        for j in range(3):
            if hinv[i, j] == 0.0:
                continue
            wj = _slot(omega, j, rep.dim_S)
            wj = Field(geom, fib, wj.backend, wj.data, wj.max_freq)
            t = deriv(wj, i)
            if rep.dim_g and conn.a is not None:
                t = t + pw_bilinear(TG, _slot(conn.a, i, rep.dim_g), wj, fib)
            if rep.dim_k and conn.b is not None:
                t = t + pw_bilinear(TK, _slot(conn.b, i, rep.dim_k), wj, fib)
            t = (-hinv[i, j]) * t
            out = t if out is None else out + t
    return out


def dirac(rep, conn, phi):
    """D_A phi = sum_i gamma(dx^i)(d_i + rho(a_i) + rho(b_i)) phi.

    Formally self-adjoint; exactly so in the discrete L^2 pairing since the
    spectral derivative is exactly skew and the algebra terms are pointwise
    skew matrices commuting with the Clifford action.
    """
    if phi.fiber.ncomp != rep.dim_S:
        raise DimensionMismatch("dirac expects a spinor field")
    Gam = gamma_coord(rep, phi.geometry)
    nab = covariant_deriv(rep, conn, phi)
    out = None
    for i in range(3):
        term = pw_linear(Gam[i], _slot(nab, i, rep.dim_S), phi.fiber)
        out = term if out is None else out + term
    return out


def gamma_bar_apply(rep, a, phi):
    """gamma-bar(a) phi for a g-valued coordinate 1-form a."""
    Gam = gamma_coord(rep, phi.geometry)
    TG = _rho_tensor(rep, "g")
    out = None
    for i in range(3):
        T = np.einsum("os,sat->oat", Gam[i], TG)
        term = pw_bilinear(T, _slot(a, i, rep.dim_g), phi, phi.fiber)
        out = term if out is None else out + term
    return out


def gamma_bar_flavor_apply(rep, b, phi):
    """gamma-bar for a k-valued coordinate 1-form (flavor twist of the Dirac)."""
    Gam = gamma_coord(rep, phi.geometry)
    TK = _rho_tensor(rep, "k")
    out = None
    for i in range(3):
        T = np.einsum("os,sat->oat", Gam[i], TK)
        term = pw_bilinear(T, _slot(b, i, rep.dim_k), phi, phi.fiber)
        out = term if out is None else out + term
    return out


def _ad_tensor(group):
    """T[c, a, b] with [x, y]_c = T[c,a,b] x_a y_b."""
    return group.structure.transpose(2, 0, 1)


def exterior_d(rep, conn, omega, adjoint=False):
    """Covariant exterior derivative d_A or its metric codifferential.

    The bracket term uses the adjoint action of the gauge algebra; the
    flavor connection acts trivially on g-valued forms because the flavor
    factor commutes with the gauge factor.
    """
    if omega.fiber.kind != "form":
        raise DegreeOutOfRange("exterior_d expects a form field")
    k = omega.fiber.degree
    if adjoint:
        if k < 1:
            raise DegreeOutOfRange("codifferential needs degree >= 1")
        sign = {1: -1.0, 2: 1.0, 3: -1.0}[k]
        return sign * hodge(rep, exterior_d(rep, conn, hodge(rep, omega)))
    if k > 2:
        raise DegreeOutOfRange("d on degree 3 vanishes in three dimensions")
    dg = {"g": rep.dim_g, "k": rep.dim_k, "R": 1}[omega.fiber.value]
    geom = omega.geometry
    use_bracket = omega.fiber.value == "g" and rep.dim_g and conn.a is not None
    adT = _ad_tensor(rep.group_G) if use_bracket else None

    def dplus(i, w):
        t = deriv(w, i)
        if adT is not None:
            t = t + pw_bilinear(adT, _slot(conn.a, i, rep.dim_g), w, w.fiber)
        return t

    if k == 0:
        slots = [dplus(i, omega) for i in range(3)]
        fib = FiberSpec("form", 1, omega.fiber.value, 3 * dg)
        return _join_slots(geom, omega.backend, fib, slots)
    if k == 1:
        w = [_slot(omega, i, dg) for i in range(3)]
        cyc = [(1, 2), (2, 0), (0, 1)]
        slots = [dplus(i, w[j]) - dplus(j, w[i]) for i, j in cyc]
        fib = FiberSpec("form", 2, omega.fiber.value, 3 * dg)
        return _join_slots(geom, omega.backend, fib, slots)
    w = [_slot(omega, i, dg) for i in range(3)]
    s = dplus(0, w[0]) + dplus(1, w[1]) + dplus(2, w[2])
    fib = FiberSpec("form", 3, omega.fiber.value, dg)
    return Field(geom, fib, omega.backend, s.data, s.max_freq)


def hodge(rep, omega):
    """Hodge star on coordinate-coframe components."""
    k = omega.fiber.degree
    geom = omega.geometry
    vdim = omega.fiber.ncomp // FORM_SLOTS[k]
    sg = geom.sqrt_det
    if k == 0:
        fib = FiberSpec("form", 3, omega.fiber.value, vdim)
        return pw_linear(sg * np.eye(max(vdim, 1))[:vdim, :vdim], omega, fib)
    if k == 3:
        fib = FiberSpec("form", 0, omega.fiber.value, vdim)
        return pw_linear(np.eye(max(vdim, 1))[:vdim, :vdim] / sg, omega, fib)
    if k == 1:
        mat = np.kron(sg * geom.inv_metric, np.eye(vdim))
        fib = FiberSpec("form", 2, omega.fiber.value, 3 * vdim)
        return pw_linear(mat, omega, fib)
    mat = np.kron(geom.metric / sg, np.eye(vdim))
    fib = FiberSpec("form", 1, omega.fiber.value, 3 * vdim)
    return pw_linear(mat, omega, fib)


def wedge_bracket(rep, alpha, beta):
    """Graded bracket [alpha ^ beta] of g-valued forms."""
    ka, kb = alpha.fiber.degree, beta.fiber.degree
    if ka > kb:
        return -((-1.0) ** (ka * kb)) * wedge_bracket(rep, beta, alpha)
    dg = rep.dim_g
    adT = _ad_tensor(rep.group_G)
    geom = alpha.geometry
    if ka + kb > 3:
        raise DegreeOutOfRange("bracket degree exceeds 3")
    if ka == 0:
        slots = [pw_bilinear(adT, alpha, _slot(beta, i, dg))
                 for i in range(FORM_SLOTS[kb])]
        fib = FiberSpec("form", kb, "g", FORM_SLOTS[kb] * dg)
        return _join_slots(geom, alpha.backend, fib, slots)
    a = [_slot(alpha, i, dg) for i in range(3)]
    b = [_slot(beta, i, dg) for i in range(FORM_SLOTS[kb])]
    if ka == 1 and kb == 1:
        cyc = [(1, 2), (2, 0), (0, 1)]
        slots = [pw_bilinear(adT, a[i], b[j]) - pw_bilinear(adT, a[j], b[i])
                 for i, j in cyc]
        fib = FiberSpec("form", 2, "g", 3 * dg)
        return _join_slots(geom, alpha.backend, fib, slots)
    if ka == 1 and kb == 2:
        out = None
        for i in range(3):
            t = pw_bilinear(adT, a[i], b[i])
            out = t if out is None else out + t
        fib = FiberSpec("form", 3, "g", dg)
        return Field(geom, fib, alpha.backend, out.data, out.max_freq)
    raise DegreeOutOfRange(f"unsupported bracket degrees ({ka},{kb})")


def curvature(rep, conn):
    """Gauge-part curvature F_a = da + 0.5 [a ^ a] as a g-valued 2-form.

    This is the projection of the full curvature onto the gauge algebra;
    the flavor block is available from curvature_flavor.
    """
    flat = Connection(None, None)
    da = exterior_d(rep, flat, conn.a)
    if rep.dim_g:
        da = da + 0.5 * wedge_bracket(rep, conn.a, conn.a)
    return da


def curvature_flavor(rep, conn):
    """Curvature of the flavor offset (k-valued 2-form)."""
    b = conn.b
    geom = b.geometry
    dk = rep.dim_k
    w = [_slot(b, i, dk) for i in range(3)]
    adT = _ad_tensor(rep.group_K) if dk else None
    cyc = [(1, 2), (2, 0), (0, 1)]
    slots = []
    for i, j in cyc:
        t = deriv(w[j], i) - deriv(w[i], j)
        if dk:
            t = t + pw_bilinear(adT, w[i], w[j])
        slots.append(t)
    fib = FiberSpec("form", 2, "k", 3 * dk)
    return _join_slots(geom, b.backend, fib, slots)


# ---------------------------------------------------------------------------
# moment map as a field

def _moment_tensor(rep):
    """T[(v,a), s, t]: pointwise moment polarization contraction."""
    T = np.empty((3 * rep.dim_g, rep.dim_S, rep.dim_S))
    G = rep.space.inner
    for v in range(3):
        for a in range(rep.dim_g):
            M = 0.5 * G @ rep.space.J[v] @ rep.rho_G[a]
            T[v * rep.dim_g + a] = 0.5 * (M + M.T)
    if rep.dim_g:
        kinv = np.linalg.inv(rep.group_G.killing)
        T = np.einsum("ab,vbst->vast", kinv,
                      T.reshape(3, rep.dim_g, rep.dim_S, rep.dim_S)) \
            .reshape(3 * rep.dim_g, rep.dim_S, rep.dim_S)
    return T


def moment_frame_comps(rep, phi, psi=None):
    """Pointwise moment polarization as orthonormal-frame components."""
    psi = phi if psi is None else psi
    fib = FiberSpec("scalar", 0, "R", 3 * rep.dim_g)
    return pw_bilinear(_moment_tensor(rep), phi, psi, fib)


def moment_two_form(rep, phi, psi=None):
    """mu(phi, psi) as a g-valued 2-form: sum_v m_v (x) *e^v."""
    geom = phi.geometry
    m = moment_frame_comps(rep, phi, psi)
    dg = rep.dim_g
    Linv = np.linalg.inv(geom.coframe.T)      # *e^v = sqrt(g) Linv[v, j] sigma_j
    mat = np.kron(geom.sqrt_det * Linv.T, np.eye(dg))
    fib = FiberSpec("form", 2, "g", 3 * dg)
    return pw_linear(mat, m, fib)


def moment_one_form(rep, phi, psi=None):
    """Metric dual of the moment two-form: sum_v m_v e^v."""
    geom = phi.geometry
    m = moment_frame_comps(rep, phi, psi)
    dg = rep.dim_g
    mat = np.kron(geom.coframe.T, np.eye(dg))
    fib = FiberSpec("form", 1, "g", 3 * dg)
    return pw_linear(mat, m, fib)


def rho_star_pair(rep, u, w):
    """g-valued 0-form <out, xi> = <u, rho(xi) w> pointwise."""
    dg = rep.dim_g
    T = np.empty((dg, rep.dim_S, rep.dim_S))
    G = rep.space.inner
    for a in range(dg):
        T[a] = G @ rep.rho_G[a]
    if dg:
        T = np.einsum("ab,bst->ast", np.linalg.inv(rep.group_G.killing), T)
    fib = FiberSpec("form", 0, "g", dg)
    return pw_bilinear(T, u, w, fib)


# ---------------------------------------------------------------------------
# weighted norms

def weighted_triple_norm(rep, phi, a, xi, eps, level=0):
    """eps-weighted norm on perturbation triples (phi, a, xi):

    |phi|_{W^{k+1,2}} + |(a,xi)|_{W^{k,2}} + eps |grad^{k+1}(a,xi)|
    + eps^2 |grad^{k+2}(a,xi)|, k = level.  Monotone nondecreasing in eps.
    """
    k = level
    n_phi = sobolev_norm(rep, phi, k + 1)

    def joint(fn, order):
        return float(np.sqrt(fn(rep, a, order) ** 2 + fn(rep, xi, order) ** 2))

    return (n_phi + joint(sobolev_norm, k)
            + eps * joint(grad_power_norm, k + 1)
            + eps ** 2 * joint(grad_power_norm, k + 2))


def gauge_weighted_norm(rep, xi, eps, level=0):
    """Companion weighted norm on gauge-algebra fields."""
    k = level
    return (sobolev_norm(rep, xi, k + 1)
            + eps * grad_power_norm(rep, xi, k + 2)
            + eps ** 2 * grad_power_norm(rep, xi, k + 3))


# ---------------------------------------------------------------------------
# random and constant fields

def random_field(rep, geom, fiber, rng, max_freq=1, backend="lattice", scale=1.0):
    """Random real band-limited field (same law on both backends)."""
    K = 2 * max_freq + 1
    coef = scale * (rng.standard_normal((fiber.ncomp, K, K, K))
                    + 1j * rng.standard_normal((fiber.ncomp, K, K, K)))
    f = Field(geom, fiber, "trig", hermitize(coef), max_freq)
    return f if backend == "trig" else to_lattice(f)


def constant_field(geom, fiber, values, backend="lattice"):
    values = np.asarray(values, float)
    if backend == "lattice":
        data = np.broadcast_to(values[:, None, None, None],
                               (fiber.ncomp, geom.N, geom.N, geom.N)).copy()
        return Field(geom, fiber, "lattice", data)
    data = np.zeros((fiber.ncomp, 1, 1, 1), complex)
    data[:, 0, 0, 0] = values
    return Field(geom, fiber, "trig", data, 0)


# ---------------------------------------------------------------------------
# identity defects at field level

def field_identity_defect(kind, rep, p, conn, inputs):
    """Norm of LHS - RHS of the derivative-level moment-map identities."""
    if kind == "DMu":
        phi, psi = inputs
        mu = moment_two_form(rep, phi, psi)
        lhs = exterior_d(rep, conn, mu)
        dphi = dirac(rep, conn, phi)
        dpsi = dirac(rep, conn, psi)
        s = rho_star_pair(rep, dphi, psi) + rho_star_pair(rep, dpsi, phi)
        rhs = -0.5 * hodge(rep, s)
        return l2_norm(rep, lhs - rhs)
    if kind == "DStarMu":
        phi, psi = inputs
        mu = moment_two_form(rep, phi, psi)
        lhs = exterior_d(rep, conn, mu, adjoint=True)
        dphi = dirac(rep, conn, phi)
        dpsi = dirac(rep, conn, psi)
        t1 = hodge(rep, moment_two_form(rep, dphi, psi))
        t2 = hodge(rep, moment_two_form(rep, dpsi, phi))
        nphi = covariant_deriv(rep, conn, phi)
        npsi = covariant_deriv(rep, conn, psi)
        slots = []
        for i in range(3):
            s = rho_star_pair(rep, _slot(nphi, i, rep.dim_S), psi) \
                + rho_star_pair(rep, _slot(npsi, i, rep.dim_S), phi)
            slots.append(s)
        fib = FiberSpec("form", 1, "g", 3 * rep.dim_g)
        grad_term = _join_slots(phi.geometry, phi.backend, fib, slots)
        rhs = t1 + t2 - 0.5 * grad_term
        return l2_norm(rep, lhs - rhs)
    if kind == "HiggsCore":
        (phi,) = inputs
        nphi = covariant_deriv(rep, conn, phi)
        slots = [rho_star_pair(rep, _slot(nphi, i, rep.dim_S), phi) for i in range(3)]
        fib1 = FiberSpec("form", 1, "g", 3 * rep.dim_g)
        omega = _join_slots(phi.geometry, phi.backend, fib1, slots)
        lhs = exterior_d(rep, conn, omega)
        Fg = curvature(rep, conn)
        Fk = curvature_flavor(rep, conn)
        TG = _rho_tensor(rep, "g")
        TK = _rho_tensor(rep, "k")
        cyc = [(1, 2), (2, 0), (0, 1)]
        slots2 = []
        for s_idx in range(3):
            i, j = cyc[s_idx]
            fphi = pw_bilinear(TG, _slot(Fg, s_idx, rep.dim_g), phi, phi.fiber)
            if rep.dim_k:
                fphi = fphi + pw_bilinear(TK, _slot(Fk, s_idx, rep.dim_k), phi, phi.fiber)
            cur = rho_star_pair(rep, fphi, phi)
            gi = _slot(nphi, i, rep.dim_S)
            gj = _slot(nphi, j, rep.dim_S)
            grad = rho_star_pair(rep, gj, gi) - rho_star_pair(rep, gi, gj)
            slots2.append(cur + grad)
        fib2 = FiberSpec("form", 2, "g", 3 * rep.dim_g)
        rhs = _join_slots(phi.geometry, phi.backend, fib2, slots2)
        return l2_norm(rep, lhs - rhs)
    raise Unsupported(f"unknown field identity '{kind}'")


# ---------------------------------------------------------------------------
# snapshots (SWQF binary format)

SNAPSHOT_MAGIC = b"SWQF"
SNAPSHOT_VERSION = 1


def save_field(path, f):
    """Write an SWQF snapshot.

    Layout: magic 'SWQF', version u32 LE, N u32, 9 x f64 metric, fiber tag
    (u32 length + JSON bytes), component count u32, then row-major f64 data
    (trig coefficients stored interleaved re/im).
    """
    tag = {
        "backend": f.backend,
        "kind": f.fiber.kind,
        "degree": f.fiber.degree,
        "value": f.fiber.value,
    }
    if f.backend == "trig":
        tag["max_freq"] = f.max_freq
    tag_bytes = json.dumps(tag, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", SNAPSHOT_VERSION))
        fh.write(struct.pack("<I", f.geometry.N))
        fh.write(np.ascontiguousarray(f.geometry.metric, "<f8").tobytes())
        fh.write(struct.pack("<I", len(tag_bytes)))
        fh.write(tag_bytes)
        fh.write(struct.pack("<I", f.fiber.ncomp))
        if f.backend == "lattice":
            fh.write(np.ascontiguousarray(f.data, "<f8").tobytes())
        else:
            inter = np.stack([f.data.real, f.data.imag], axis=-1)
            fh.write(np.ascontiguousarray(inter, "<f8").tobytes())


def load_field(path, backend=None):
    """Read an SWQF snapshot; optionally convert to the requested backend."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise FormatError("truncation")
        out = blob[off:off + n]
        off += n
        return out

    if take(4) != SNAPSHOT_MAGIC:
        raise FormatError("magic")
    (version,) = struct.unpack("<I", take(4))
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"version {version}")
    (N,) = struct.unpack("<I", take(4))
    metric = np.frombuffer(take(72), "<f8").reshape(3, 3).copy()
    (tlen,) = struct.unpack("<I", take(4))
    tag = json.loads(take(tlen).decode())
    (ncomp,) = struct.unpack("<I", take(4))
    geom = TorusGeometry(int(N), metric)
    fiber = FiberSpec(tag["kind"], tag.get("degree", 0), tag.get("value", "S"), ncomp)
    if tag["backend"] == "lattice":
        data = np.frombuffer(take(8 * ncomp * N ** 3), "<f8") \
            .reshape(ncomp, N, N, N).copy()
        if off != len(blob):
            raise FormatError("trailing bytes")
        f = Field(geom, fiber, "lattice", data)
    else:
        M = int(tag["max_freq"])
        K = 2 * M + 1
        raw = np.frombuffer(take(8 * ncomp * K ** 3 * 2), "<f8")
        if off != len(blob):
            raise FormatError("trailing bytes")
        inter = raw.reshape(ncomp, K, K, K, 2)
        f = Field(geom, fiber, "trig", inter[..., 0] + 1j * inter[..., 1], M)
    if backend is None or backend == f.backend:
        return f
    if backend == "lattice":
        return to_lattice(f)
    return to_trig(f, (geom.N - 1) // 2)
