"""Batch front end: scenario configs, task dispatch, and report emission.

Usage:
    swq <task> --config <path> [--out <dir>] [--seed <u64>] [--jobs <n>]

Tasks: verify-algebra, verify-fields, dgla, linearize, kuranishi, expand,
wallcross, snapshot.  Configs are JSON documents holding either a single
scenario object or {"scenarios": [...]}; every numeric tolerance lives in
the config (defaults below).  Reports are JSON with a deterministic
"report" part (byte-identical for a fixed config and seed) and a separate
"metadata" part for timestamps; a delimited summary table and diagnostic
figures are written next to it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dgla, field3 as f3, haydys as hy, kuranishi as ku, qrep, swop
from .errors import ConfigError, SWQError

TASKS = ("verify-algebra", "verify-fields", "dgla", "linearize",
         "kuranishi", "expand", "wallcross", "snapshot")

DEFAULT_TOLERANCES = {
    "verify-algebra": {
        "axioms": 1e-12, "equivariance": 1e-10, "polarization": 1e-13,
        "derivative_order": 1.9, "identity_pointwise": 1e-12,
        "margin_rel": 1e-8, "sphere_minimum": 0.4,
    },
    "verify-fields": {
        "hodge_involution": 1e-13, "clifford_frame": 1e-12,
        "adjointness": 1e-12, "dirac_self_adjoint": 1e-11,
        "backend_agreement": 1e-11, "identity_dmu": 1e-9,
        "identity_dstarmu": 1e-9, "identity_higgs": 1e-9,
        "norm_growth": 1e-2, "snapshot_roundtrip": 0.0,
    },
    "dgla": {
        "antisymmetry": 1e-12, "jacobi": 1e-11, "leibniz": 1e-10,
        "delta_squared": 1e-11, "maurer_cartan": 1e-10, "duality": 1e-10,
    },
    "linearize": {
        "self_adjoint": 1e-10, "fd_order": 1.9, "eps_block_ratio": 1e-10,
        "gauge_invariance": 1e-10, "slice_residual": 1e-10,
        "slice_iterations": 30, "slice_constant": 5.0,
    },
    "kuranishi": {
        "set_distance": 1e-8, "rank_identity": 0.0, "block_rl": 1e-10,
        "block_dense": 1e-10,
    },
    "expand": {
        "slope_margin": 1.5, "toy_coefficient": 1e-10,
    },
    "wallcross": {
        "identity_rel": 1e-8, "fit_rel": 0.05, "net_change": -1,
    },
    "snapshot": {"crossload": 1e-13},
}


# ---------------------------------------------------------------------------
# config plumbing

def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if "scenarios" in doc:
        scenarios = doc["scenarios"]
    else:
        scenarios = [doc]
    if not isinstance(scenarios, list) or not scenarios:
        raise ConfigError("config must hold a scenario or a scenario list")
    for i, sc in enumerate(scenarios):
        if not isinstance(sc, dict):
            raise ConfigError(f"scenario {i} is not an object")
        sc.setdefault("name", f"scenario-{i:03d}")
    return scenarios


def _digest(obj):
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _geometry(sc):
    g = sc.get("geometry", {})
    N = int(g.get("N", 6))
    if g.get("unit_volume", False):
        metric = np.eye(3) / (2.0 * np.pi) ** 2
    else:
        metric = np.asarray(g.get("metric", np.eye(3).tolist()), float)
    return f3.TorusGeometry(N, metric)


def _representation(sc):
    spec = sc.get("representation", {"builtin": "classical_sw"})
    if "file" in spec:
        with open(spec["file"]) as fh:
            rep, _ = qrep.representation_from_json(json.load(fh))
        return rep
    return qrep.builtin(spec.get("builtin", "classical_sw"),
                        **spec.get("params", {}))


def _tols(task, sc):
    out = dict(DEFAULT_TOLERANCES[task])
    out.update(sc.get("tolerances", {}))
    return out


class Checks:
    def __init__(self):
        self.rows = []

    def add(self, check_id, value, tolerance, mode="max"):
        value = float(value)
        if mode == "max":
            ok = value < tolerance
        elif mode == "min":
            ok = value >= tolerance
        else:
            ok = bool(value == tolerance)
        self.rows.append({"id": check_id, "value": value,
                          "tolerance": float(tolerance), "mode": mode,
                          "pass": bool(ok)})

    def all_pass(self):
        return all(r["pass"] for r in self.rows)


# ---------------------------------------------------------------------------
# task implementations

def _task_verify_algebra(sc, seed):
    rep = _representation(sc)
    tol = _tols("verify-algebra", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    report = qrep._axiom_defects(rep)
    ck.add("qrep.axioms", max(report.values()), tol["axioms"])
    for t in (0.1, 0.5):
        worst = 0.0
        for _ in range(5):
            xi = rng.standard_normal(rep.dim_g)
            s = rng.standard_normal(rep.dim_S)
            g = qrep.exp_action(rep, xi, t)
            ad = qrep.ad_group_transport(rep.group_G, xi, t)
            worst = max(worst, np.abs(qrep.moment_map(rep, g @ s).comps
                                      - qrep.moment_map(rep, s).comps @ ad.T).max())
        ck.add(f"qrep.equivariance_t{t}", worst, tol["equivariance"])
    worst = 0.0
    for _ in range(20):
        p1 = rng.standard_normal(rep.dim_S)
        p2 = rng.standard_normal(rep.dim_S)
        d = (qrep.moment_map(rep, p1 + p2) - qrep.moment_map(rep, p1)
             - qrep.moment_map(rep, p2) - 2.0 * qrep.moment_polar(rep, p1, p2))
        worst = max(worst, d.norm() / max(1.0, qrep.moment_map(rep, p1 + p2).norm()))
    ck.add("qrep.polarization", worst, tol["polarization"])
    p1 = rng.standard_normal(rep.dim_S)
    p2 = rng.standard_normal(rep.dim_S)
    errs = [(qrep.moment_map(rep, p1 + h * p2) - qrep.moment_map(rep, p1)
             - 2.0 * h * qrep.moment_polar(rep, p1, p2)).norm()
            for h in (1e-2, 1e-3, 1e-4)]
    slope = float(np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(errs), 1)[0])
    ck.add("qrep.derivative_order", slope, tol["derivative_order"], "min")
    worst = {"XiMu": 0.0, "AMu": 0.0}
    for _ in range(int(sc.get("identity_samples", 100))):
        xi = rng.standard_normal(rep.dim_g)
        a = rng.standard_normal((3, rep.dim_g))
        u = rng.standard_normal(rep.dim_S)
        v = rng.standard_normal(rep.dim_S)
        worst["XiMu"] = max(worst["XiMu"],
                            qrep.pointwise_identity_defect("XiMu", rep, (xi, u, v)))
        worst["AMu"] = max(worst["AMu"],
                           qrep.pointwise_identity_defect("AMu", rep, (a, u, v)))
    ck.add("qrep.identity_XiMu", worst["XiMu"], tol["identity_pointwise"])
    ck.add("qrep.identity_AMu", worst["AMu"], tol["identity_pointwise"])
    data = {"orientation": qrep.orientation_certificate(rep),
            "axiom_defects": {k: float(v) for k, v in report.items()}}
    n_zero = int(sc.get("zero_samples", 0))
    if n_zero:
        stats = qrep.moment_zero_statistics(rep, n_zero, seed=seed)
        data["zero_statistics"] = {k: v for k, v in stats.items()
                                   if k != "example_regular"}
    if rep.name == "classical_sw":
        vals = []
        for _ in range(int(sc.get("sphere_samples", 2000))):
            s = rng.standard_normal(4)
            vals.append(qrep.moment_map(rep, s / np.linalg.norm(s)).norm())
        ck.add("qrep.sphere_minimum", min(vals), tol["sphere_minimum"], "min")
    return ck, data


def _task_verify_fields(sc, seed):
    rep = _representation(sc)
    geom = _geometry(sc)
    tol = _tols("verify-fields", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    worst = 0.0
    for k in range(4):
        w = f3.random_field(rep, geom, f3.form_fiber(rep, k, "g"), rng, 1)
        worst = max(worst, np.abs(f3.hodge(rep, f3.hodge(rep, w)).data - w.data).max())
    ck.add("field3.hodge_involution", worst, tol["hodge_involution"])
    Gam = f3.gamma_coord(rep, geom)
    C = geom.coframe
    Ghat = np.einsum("ai,ijk->ajk", C, Gam)
    worst = max(np.abs(Ghat[i] @ Ghat[j] - Ghat[k]).max()
                for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)))
    ck.add("field3.clifford_frame", worst, tol["clifford_frame"])
    conn = f3.Connection(
        f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1, "trig", 0.3),
        f3.random_field(rep, geom, f3.form_fiber(rep, 1, "k"), rng, 1, "trig", 0.3))
    worst = 0.0
    for k in (0, 1, 2):
        w1 = f3.random_field(rep, geom, f3.form_fiber(rep, k, "g"), rng, 1, "trig")
        w2 = f3.random_field(rep, geom, f3.form_fiber(rep, k + 1, "g"), rng, 1, "trig")
        n = f3.l2_norm(rep, w1) * f3.l2_norm(rep, w2)
        lhs = f3.l2_inner(rep, f3.exterior_d(rep, conn, w1), w2)
        rhs = f3.l2_inner(rep, w1, f3.exterior_d(rep, conn, w2, adjoint=True))
        worst = max(worst, abs(lhs - rhs) / max(n, 1e-30))
    ck.add("field3.adjointness", worst, tol["adjointness"])
    worst = 0.0
    for _ in range(int(sc.get("pairs", 20))):
        u = f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1, "trig")
        v = f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1, "trig")
        lhs = f3.l2_inner(rep, f3.dirac(rep, conn, u), v)
        rhs = f3.l2_inner(rep, u, f3.dirac(rep, conn, v))
        worst = max(worst, abs(lhs - rhs) / (f3.l2_norm(rep, u) * f3.l2_norm(rep, v)))
    ck.add("field3.dirac_self_adjoint", worst, tol["dirac_self_adjoint"])
    phiT = f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1, "trig")
    connL = f3.Connection(f3.to_lattice(conn.a), f3.to_lattice(conn.b))
    d1 = f3.dirac(rep, conn, phiT)
    d2 = f3.dirac(rep, connL, f3.to_lattice(phiT))
    agree = np.abs(f3.to_lattice(d1, geom.N).data - d2.data).max()
    ck.add("field3.backend_agreement", agree, tol["backend_agreement"])
    p = f3.Parameter(geom, conn.b)
    M = int(sc.get("max_freq", 2))
    def unit(f):
        return f * (1.0 / f3.l2_norm(rep, f))
    u = unit(f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, M, "trig"))
    v = unit(f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, M, "trig"))
    ck.add("field3.identity_DMu",
           f3.field_identity_defect("DMu", rep, p, conn, (u, v)), tol["identity_dmu"])
    ck.add("field3.identity_DStarMu",
           f3.field_identity_defect("DStarMu", rep, p, conn, (u, v)),
           tol["identity_dstarmu"])
    ck.add("field3.identity_HiggsCore",
           f3.field_identity_defect("HiggsCore", rep, p, conn, (u,)),
           tol["identity_higgs"])
    return ck, {}


def _task_dgla(sc, seed):
    rep = _representation(sc)
    geom = _geometry(sc)
    tol = _tols("dgla", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    p = f3.flat_parameter(rep, geom, "trig")

    def elem(key):
        fibs = {"f0": f3.form_fiber(rep, 0, "g"), "f1": f3.form_fiber(rep, 1, "g"),
                "f2": f3.form_fiber(rep, 2, "g"), "f3": f3.form_fiber(rep, 3, "g"),
                "s1": f3.spinor_fiber(rep), "s2": f3.spinor_fiber(rep)}
        f = f3.random_field(rep, geom, fibs[key], rng, 1, "trig")
        return dgla.GradedElement(**{key: f * (1.0 / f3.l2_norm(rep, f))})

    keys = ["f0", "s1", "f1", "s2", "f2", "f3"]
    worst = 0.0
    for _ in range(40):
        kx, ky = rng.choice(keys, 2)
        x, y = elem(kx), elem(ky)
        d = dgla.bracket(rep, x, y) \
            + ((-1.0) ** (x.degree() * y.degree())) * dgla.bracket(rep, y, x)
        worst = max(worst, dgla.graded_norm(rep, d))
    ck.add("dgla.antisymmetry", worst, tol["antisymmetry"])
    fams = [("f0", "f0", "s1"), ("f0", "s1", "s1"), ("f0", "s1", "s2"),
            ("f0", "f1", "s1"), ("f1", "s1", "s1")]
    worst = 0.0
    for fam in fams:
        for _ in range(int(sc.get("jacobi_samples", 10))):
            worst = max(worst, dgla.jacobi_defect(rep, *[elem(k) for k in fam]))
    ck.add("dgla.jacobi", worst, tol["jacobi"])
    c = dgla.Configuration(
        f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1, "trig", 0.2),
        f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1, "trig", 0.2))
    fams2 = [("f0", "f0"), ("f0", "s1"), ("f0", "f1"), ("f0", "s2"),
             ("f0", "f2"), ("s1", "s1"), ("f1", "s1"), ("f1", "f1")]
    worst = 0.0
    for fam in fams2:
        for _ in range(int(sc.get("leibniz_samples", 5))):
            worst = max(worst, dgla.leibniz_defect(rep, p, c, elem(fam[0]), elem(fam[1])))
    ck.add("dgla.leibniz", worst, tol["leibniz"])
    data = {}
    if rep.name.startswith("adhm"):
        from .haydys import flat_lift
        pf, c0, _ = flat_lift(rep, _geometry(sc))
        c0t = dgla.Configuration(f3.to_trig(c0.phi, 0), f3.to_trig(c0.a, 0))
        pt = f3.Parameter(geom, f3.Field.zeros(geom, f3.form_fiber(rep, 1, "k"), "trig"))
        xi = elem("f0")
        dd = dgla.delta(rep, pt, c0t, dgla.delta(rep, pt, c0t, xi))
        ck.add("dgla.delta_squared", dgla.graded_norm(rep, dd), tol["delta_squared"])
        x1 = dgla.GradedElement(
            s1=0.1 * elem("s1").get("s1"), f1=0.1 * elem("f1").get("f1"))
        mc = dgla.maurer_cartan_residual(rep, pt, c0t, x1)
        moved = dgla.Configuration(c0t.phi + x1.get("s1"), c0t.a + x1.get("f1"))
        rn = swop.sw_residual(rep, pt, moved).norm(rep)
        ck.add("dgla.maurer_cartan", abs(dgla.graded_norm(rep, mc) - rn),
               tol["maurer_cartan"])
    worst = 0.0
    for _ in range(5):
        worst = max(worst, dgla.duality_defect(
            rep, p, c, elem("f0").get("f0"), elem("s1").get("s1"),
            elem("f1").get("f1")))
    ck.add("dgla.duality", worst, tol["duality"])
    return ck, data


def _task_linearize(sc, seed):
    rep = _representation(sc)
    geom = _geometry(sc)
    tol = _tols("linearize", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    p = f3.flat_parameter(rep, geom)

    def unit(f):
        return f * (1.0 / f3.l2_norm(rep, f))

    def rand_triple():
        return swop.TangentTriple(
            unit(f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1)),
            unit(f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1)),
            unit(f3.random_field(rep, geom, f3.form_fiber(rep, 0, "g"), rng, 1)))

    c = dgla.Configuration(
        unit(f3.random_field(rep, geom, f3.spinor_fiber(rep), rng, 1)),
        unit(f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1)))
    L = swop.linearization(rep, p, c, "Lc")

    def pair(y, t):
        return (f3.l2_inner(rep, y.spinor, t.phi) + f3.l2_inner(rep, y.form, t.a)
                + f3.l2_inner(rep, y.zero_form, t.xi))

    worst = 0.0
    for _ in range(int(sc.get("pairs", 50))):
        t1, t2 = rand_triple(), rand_triple()
        worst = max(worst, abs(pair(L.apply(t1), t2) - pair(L.apply(t2), t1)))
    ck.add("swop.self_adjoint", worst, tol["self_adjoint"])

    slopes = {}
    for mode, lmode, eps in (("SW", "Lc", None), ("Zero", "L0", None),
                             ("Eps", "Leps", 0.3)):
        t = rand_triple()
        Lm = swop.linearization(rep, p, c, lmode, eps)
        Lt = Lm.apply(t)
        base = swop.extended_residual(rep, p, c, 0.0 * t, mode, eps)
        errs = []
        hs = (1e-1, 1e-2, 1e-3)
        for h in hs:
            full = swop.extended_residual(rep, p, c, h * t, mode, eps)
            tot = 0.0
            for att in ("spinor", "form", "zero_form"):
                tot += f3.l2_norm(rep, getattr(full, att) - getattr(base, att)
                                  - h * getattr(Lt, att)) ** 2
            if mode != "SW":
                tot += (full.scalar - base.scalar - h * Lt.scalar) ** 2
            errs.append(np.sqrt(tot))
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        slopes[mode] = slope
        ck.add(f"swop.fd_order_{mode}", slope, tol["fd_order"], "min")

    r0 = swop.sw_residual(rep, p, c).norm(rep)
    worst = 0.0
    # amplitude small enough that the exponential stays resolved: the
    # aliasing tail of exp decays factorially in the clean bandwidth
    amp = float(sc.get("gauge_amplitude", 0.01 if geom.N < 12 else 0.05))
    for _ in range(int(sc.get("gauge_samples", 10))):
        xi = f3.random_field(rep, geom, f3.form_fiber(rep, 0, "g"), rng, 1)
        xi = xi * (amp / np.abs(xi.data).max())
        moved = swop.gauge_transform(rep, p, xi, c)
        worst = max(worst, abs(swop.sw_residual(rep, p, moved).norm(rep) - r0))
    ck.add("swop.gauge_invariance", worst, tol["gauge_invariance"])

    data = {"fd_slopes": slopes}
    if rep.name.startswith("adhm"):
        pf, c0, _ = hy.flat_lift(rep, geom)
        rows = []
        for eps in sc.get("slice_eps", (1.0, 0.1)):
            t = rand_triple()
            t = t * (0.05 / t.weighted_norm(rep, eps))
            cpert = dgla.Configuration(c0.phi + t.phi, c0.a + t.a)
            xi, fixed, diag = swop.gauge_fix_to_slice(rep, pf, c0, cpert, eps)
            ratio = fixed.weighted_norm(rep, eps) / t.weighted_norm(rep, eps)
            rows.append({"eps": eps, "iterations": diag["iterations"],
                         "residual": diag["residual"], "constant": ratio})
            ck.add(f"swop.slice_residual_eps{eps}", diag["residual"],
                   tol["slice_residual"])
            ck.add(f"swop.slice_iterations_eps{eps}", diag["iterations"],
                   tol["slice_iterations"] + 0.5)
            ck.add(f"swop.slice_constant_eps{eps}", ratio, tol["slice_constant"])
        data["slice"] = rows
    return ck, data


def _task_kuranishi(sc, seed):
    tol = _tols("kuranishi", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    n_sys = int(sc.get("systems", 20))
    worst_dist, rank_fail = 0.0, 0
    for _ in range(n_sys):
        nx = int(rng.integers(2, 7))
        sysr = ku.random_fredholm_system(rng, nx=nx, ny=nx,
                                         kernel_dim=int(rng.integers(0, 3)))
        bf = ku.brute_force_zero_set(sysr, None, radius=0.6, n_grid=4)
        obz = ku.obstruction_zero_set(sysr, None, radius=0.5)
        bf_in = [x for x in bf if np.linalg.norm(x) <= 0.3]
        ob_in = [x for x in obz if np.linalg.norm(x) <= 0.3]
        worst_dist = max(worst_dist, ku.set_distance(bf_in, ob_in))
        jac, sol = ku.obstruction_jacobian(sysr, None, np.zeros(sysr.dim_I))
        dF = sysr.L_at(None) + ku._polar_matrix(sysr, sol.x)
        sv = np.linalg.svd(dF, compute_uv=False)
        rank_dF = int((sv > 1e-8).sum())
        svj = np.linalg.svd(jac, compute_uv=False) if min(jac.shape) else np.zeros(0)
        rank_j = int((svj > 1e-8).sum())
        if (dF.shape[1] - rank_dF != jac.shape[1] - rank_j
                or dF.shape[0] - rank_dF != jac.shape[0] - rank_j):
            rank_fail += 1
    ck.add("kuranishi.set_distance", worst_dist, tol["set_distance"])
    ck.add("kuranishi.rank_identity_failures", rank_fail,
           tol["rank_identity"] + 0.5)
    worst_rl = worst_dense = 0.0
    done = 0
    while done < int(sc.get("block_systems", 100)):
        blocks = [rng.standard_normal((3, 3)) for _ in range(7)]
        D1, Bp, Bm, D2, Ap, Am, D3 = blocks
        D1 = D1 + 3 * np.eye(3)
        Am = Am + 3 * np.eye(3)
        Ap = Ap + 3 * np.eye(3)
        try:
            R, _ = ku.block_inverse(D1, Bp, Bm, D2, Ap, Am, D3)
        except SWQError:
            continue
        done += 1
        Lm = ku.assemble_three_block(D1, Bp, Bm, D2, Ap, Am, D3)
        worst_rl = max(worst_rl, np.abs(R @ Lm - np.eye(9)).max())
        worst_dense = max(worst_dense, np.abs(R - np.linalg.inv(Lm)).max())
    ck.add("kuranishi.block_rl", worst_rl, tol["block_rl"])
    ck.add("kuranishi.block_dense", worst_dense, tol["block_dense"])
    # measured contraction constants and one iteration trace
    demo = ku.random_fredholm_system(np.random.default_rng(seed), nx=4, ny=4,
                                     kernel_dim=1)
    consts = ku.hypothesis_constants(demo, None)
    sol = ku.solve_slice(demo, None, np.zeros(demo.dim_I))
    data = {"constants": consts,
            "iteration_trace": {"iterations": sol.iterations,
                                "residual": sol.residual,
                                "contraction": sol.contraction}}
    return ck, data


def _task_expand(sc, seed):
    tol = _tols("expand", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    orders = [int(r) for r in sc.get("orders", (1, 2))]
    eps_grid = tuple(sc.get("eps_grid", (0.2, 0.1, 0.05)))
    data = {"surrogate": [], "pde": []}
    fam = ku.toy_epsilon_family(rng, nx=int(sc.get("toy_dim", 5)),
                                kernel_dim=2)
    d = 0.05 * rng.standard_normal(fam.system.dim_I)
    for r in orders:
        out = ku.epsilon_expansion(fam, d, order=r, eps_grid=eps_grid)
        need = 2 * r + tol["slope_margin"]
        ck.add(f"expand.surrogate_slope_r{r}", out.slope, need, "min")
        data["surrogate"].append({
            "r": r, "slope": out.slope, "eps": list(eps_grid),
            "remainders": out.remainders,
            "ob_boundary": out.ob_boundary.tolist(),
            "ob_corrections": [c.tolist() for c in out.ob_corrections]})
    if sc.get("pde", False):
        rep = _representation(sc)
        geom = _geometry(sc)
        p, c0, info = hy.twisted_lift(rep, geom, amplitude=0.4, seed=seed % 100 + 1)
        btw = f3.random_field(rep, geom, f3.form_fiber(rep, 1, "k"), rng, 1)
        btw = btw * (0.05 / f3.l2_norm(rep, btw))
        asm = ku.HaydysAssembly(rep, p, c0,
                                solve_parameter=f3.Parameter(geom, p.b + btw))
        w = f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1)
        w = w * (0.3 / f3.l2_norm(rep, w))
        famp = ku.pde_epsilon_family(asm, eps2_source=w)
        d0 = np.zeros(asm.i_partial.shape[1])
        for r in orders:
            out = ku.epsilon_expansion(famp, d0, order=r, eps_grid=eps_grid)
            need = 2 * r + tol["slope_margin"]
            ck.add(f"expand.pde_slope_r{r}", out.slope, need, "min")
            data["pde"].append({
                "r": r, "slope": out.slope, "eps": list(eps_grid),
                "remainders": out.remainders,
                "ob_boundary": out.ob_boundary.tolist(),
                "ob_corrections": [c.tolist() for c in out.ob_corrections]})
    return ck, data


def _task_wallcross(sc, seed):
    tol = _tols("wallcross", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    data = {}
    fits = []
    for sign in (+1, -1):
        fam = ku.surrogate_crossing_family(
            np.random.default_rng(seed + (0 if sign > 0 else 1)),
            n=int(sc.get("surrogate_dim", 6)), delta_sign=sign)
        fit = ku.fit_crossing_coefficient(
            fam, eps_grid=tuple(sc.get("fit_eps", (0.3, 0.2, 0.15, 0.1))))
        rel = abs(fit["alpha"] - fit["predicted"]) / abs(fit["predicted"])
        ck.add(f"wallcross.fit_rel_sign{sign:+d}", rel, tol["fit_rel"])
        book = ku.fig_bookkeeping(fam["lambda_dot"], +1, fam["delta_star"])
        ck.add(f"wallcross.net_change_sign{sign:+d}", book["net_change"],
               tol["net_change"], "eq")
        fits.append({"sign": sign, "alpha": fit["alpha"],
                     "predicted": fit["predicted"], "roots": fit["roots"],
                     "eps": list(sc.get("fit_eps", (0.3, 0.2, 0.15, 0.1))),
                     "book": book})
    data["surrogate_fits"] = fits
    if sc.get("pde", False):
        rep = _representation(sc)
        geom = _geometry(sc)
        if rep.name == "adhm_2_2":
            p, c0, info = hy.curved_lift(rep, geom, seed=3, amplitude=0.15)
            asm = ku.HaydysAssembly(rep, p, c0)
            out = ku.wall_crossing(rep, p, c0, sigma=+1,
                                   lambda_dot=float(sc.get("lambda_dot", 1.0)),
                                   assembly=asm, kernel_policy="bordered")
        else:
            p, c0, info = hy.twisted_lift(rep, geom, amplitude=0.4, seed=3)
            asm = ku.HaydysAssembly(rep, p, c0)
            src = f3.random_field(rep, geom, f3.form_fiber(rep, 1, "g"), rng, 1)
            src = src * (1.0 / f3.l2_norm(rep, src))
            out = ku.wall_crossing(rep, p, c0, sigma=+1,
                                   lambda_dot=float(sc.get("lambda_dot", 1.0)),
                                   source=src, assembly=asm,
                                   kernel_policy="bordered")
        ck.add("wallcross.identity_rel", out.identity_defect, tol["identity_rel"])
        data["pde"] = {"delta": out.delta, "o": out.o_value,
                       "t4": out.t4_coefficient, "source_norm": out.source_norm,
                       "kernel_dim": out.kernel_dim,
                       "net_change": out.net_count_change}
    return ck, data


def _task_snapshot(sc, seed, outdir):
    rep = _representation(sc)
    geom = _geometry(sc)
    tol = _tols("snapshot", sc)
    rng = np.random.default_rng(seed)
    ck = Checks()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fld = f3.random_field(rep, geom, f3.spinor_fiber(rep), rng,
                          int(sc.get("max_freq", 1)),
                          sc.get("backend", "lattice"))
    path = outdir / f"{sc['name']}.swqf"
    f3.save_field(path, fld)
    back = f3.load_field(path)
    exact = float(np.abs(back.data - fld.data).max())
    ck.add("snapshot.roundtrip", exact, 0.0, "eq")
    ft = f3.to_trig(fld, int(sc.get("max_freq", 1))) if fld.backend == "lattice" else fld
    f3.save_field(path, ft)
    lat = f3.load_field(path, backend="lattice")
    refit = f3.to_trig(lat, ft.max_freq)
    ck.add("snapshot.crossload", np.abs(refit.data - ft.data).max(),
           tol["crossload"])
    return ck, {"path": str(path)}


def run_scenario(task, sc, seed, outdir):
    t0 = time.time()
    try:
        if task == "verify-algebra":
            ck, data = _task_verify_algebra(sc, seed)
        elif task == "verify-fields":
            ck, data = _task_verify_fields(sc, seed)
        elif task == "dgla":
            ck, data = _task_dgla(sc, seed)
        elif task == "linearize":
            ck, data = _task_linearize(sc, seed)
        elif task == "kuranishi":
            ck, data = _task_kuranishi(sc, seed)
        elif task == "expand":
            ck, data = _task_expand(sc, seed)
        elif task == "wallcross":
            ck, data = _task_wallcross(sc, seed)
        elif task == "snapshot":
            ck, data = _task_snapshot(sc, seed, outdir)
        else:
            raise ConfigError(f"unknown task '{task}'")
    except SWQError as exc:
        return {"scenario": sc["name"], "inputs_digest": _digest(sc),
                "error": f"{type(exc).__name__}: {exc}", "checks": [],
                "pass": False}, time.time() - t0
    return {"scenario": sc["name"], "inputs_digest": _digest(sc),
            "checks": ck.rows, "pass": ck.all_pass(), "data": data}, \
        time.time() - t0


# ---------------------------------------------------------------------------
# rendering

def _render_csv(outdir, results):
    path = Path(outdir) / "summary.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "check", "value", "tolerance", "mode", "pass"])
        for res in results:
            for row in res.get("checks", []):
                wr.writerow([res["scenario"], row["id"], f"{row['value']:.6e}",
                             f"{row['tolerance']:.6e}", row["mode"], row["pass"]])
            if "error" in res:
                wr.writerow([res["scenario"], "error", res["error"], "", "", False])
    return path


def _render_figures(outdir, task, results):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figdir = Path(outdir) / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    written = []
    for res in results:
        rows = res.get("checks", [])
        if rows:
            fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(rows)), 4))
            names = [r["id"].split(".", 1)[-1] for r in rows]
            vals = [max(abs(r["value"]), 1e-17) for r in rows]
            tols = [max(abs(r["tolerance"]), 1e-17) for r in rows]
            x = np.arange(len(rows))
            ax.bar(x, vals, color=["tab:green" if r["pass"] else "tab:red"
                                   for r in rows])
            ax.plot(x, tols, "k_", markersize=14, label="tolerance")
            ax.set_yscale("log")
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
            ax.set_title(f"{task}: {res['scenario']}")
            ax.legend()
            fig.tight_layout()
            fp = figdir / f"{res['scenario']}_checks.png"
            fig.savefig(fp, dpi=120)
            plt.close(fig)
            written.append(str(fp))
        data = res.get("data", {})
        series = data.get("surrogate", []) + data.get("pde", []) \
            if task == "expand" else []
        if series:
            fig, ax = plt.subplots(figsize=(5, 4))
            for entry in series:
                ax.loglog(entry["eps"], np.maximum(entry["remainders"], 1e-18),
                          "o-", label=f"r={entry['r']} slope {entry['slope']:.2f}")
            ax.set_xlabel("eps")
            ax.set_ylabel("remainder")
            ax.legend()
            fig.tight_layout()
            fp = figdir / f"{res['scenario']}_remainders.png"
            fig.savefig(fp, dpi=120)
            plt.close(fig)
            written.append(str(fp))
        if task == "wallcross" and "surrogate_fits" in data:
            fig, ax = plt.subplots(figsize=(5, 4))
            for fit in data["surrogate_fits"]:
                eps = np.asarray(fit["eps"])
                ax.plot(eps ** 4, fit["roots"], "o",
                        label=f"sign {fit['sign']:+d}")
                ax.plot(eps ** 4, fit["alpha"] * eps ** 4, "--")
            ax.set_xlabel("eps^4")
            ax.set_ylabel("crossing parameter")
            ax.legend()
            fig.tight_layout()
            fp = figdir / f"{res['scenario']}_crossing.png"
            fig.savefig(fp, dpi=120)
            plt.close(fig)
            written.append(str(fp))
    return written


# ---------------------------------------------------------------------------
# entry point

def main(argv=None):
    ap = argparse.ArgumentParser(prog="swq", description=__doc__)
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default="swq-out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--no-figures", action="store_true")
    args = ap.parse_args(argv)

    try:
        scenarios = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    results = []
    wall = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {sc["name"]: pool.submit(run_scenario, args.task, sc,
                                               args.seed, str(outdir))
                       for sc in scenarios}
            for name, fut in futures.items():
                res, dt = fut.result()
                results.append(res)
                wall[name] = dt
    else:
        for sc in scenarios:
            res, dt = run_scenario(args.task, sc, args.seed, str(outdir))
            results.append(res)
            wall[res["scenario"]] = dt
    results.sort(key=lambda r: r["scenario"])

    report = {
        "task": args.task,
        "seed": args.seed,
        "scenarios": results,
        "pass": all(r["pass"] for r in results),
    }
    payload = {
        "report": report,
        "metadata": {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "wall_clock_s": {k: round(v, 3) for k, v in wall.items()},
            "total_wall_clock_s": round(time.time() - t0, 3),
        },
    }
    report_path = outdir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _render_csv(outdir, results)
    if not args.no_figures:
        try:
            _render_figures(outdir, args.task, results)
        except Exception as exc:  # rendering must never flip the exit code
            print(f"figure rendering skipped: {exc}", file=sys.stderr)

    for res in results:
        status = "PASS" if res["pass"] else "FAIL"
        detail = res.get("error", f"{len(res.get('checks', []))} checks")
        print(f"[{status}] {res['scenario']}: {detail}")
    print(f"report: {report_path}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
