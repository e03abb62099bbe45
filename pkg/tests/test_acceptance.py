"""The twelve acceptance criteria, one test each, at their stated tolerances.

Every test prints a single PASS/FAIL line with the measured numbers; the
lines are repeated in the terminal summary.
"""

import dataclasses
import json
import math

import numpy as np
import pytest
import scipy.linalg as sla

from collarlab import calderon as K
from collarlab import cobordism as B
from collarlab import collar as C
from collarlab import extension as E
from collarlab import paramflow as P
from collarlab import sectorial as S
from collarlab import symplectic as Y
from collarlab.circleop import fourier_multiplier, order_multiplier
from collarlab.cli import bundled_scenarios, conjugated_oracle, parse_scenario, substream
from collarlab.errors import GradingUnbalanced
from collarlab.numkernel import hermitian_eigen, max_abs, op_norm, orthonormalize, principal_angles

from conftest import ACCEPTANCE_LINES, random_complex
from test_collar import random_pair
from test_symplectic import brute_is_lagrangian


def verdict(number, title, ok, detail):
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _suite():
    """One scenario per distinct operator among the bundled scenarios."""
    seen, out = set(), []
    for name, text in bundled_scenarios().items():
        raw = json.loads(text)
        key = json.dumps([raw["model"], raw["J"], raw["B"], raw.get("C"), raw.get("selfadjoint")], sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(parse_scenario(text, name))
    return out


SUITE = _suite()
OPERATORS = {sc.name: sc.operator() for sc in SUITE}


def _constant(sc):
    return len(sc.J) == 1 and len(sc.B) == 1 and all(c is None for c in sc.C)


def _sectorial_suite():
    rng = substream(3, "acceptance/sectorial-suite")
    mats = {"diag": np.diag([1.0, -1.0]), "jordan-like": np.array([[2.0, -(2.0**1.5)], [0.0, -2.0]])}
    mats["weakly-sectorial"] = S.weakly_sectorial_example([1, 2, 3], 0.5)
    for i in range(3):
        mats[f"conjugated-{i}"] = conjugated_oracle(rng, 4)[0]
    for name, d in OPERATORS.items():
        mats[f"{name}:B0"] = d.B_at(0.0)
    return mats


def test_criterion_01_sectorial_oracle():
    rng = substream(1, "acceptance/oracle")
    worst, kmax = 0.0, 0.0
    for _ in range(100):
        b, p, kappa = conjugated_oracle(rng, 6, kappa_max=50.0, gap=0.3)
        cfg = S.default_cut(b, c=0.1, margin=min(0.1, 0.15 / kappa))
        got = S.sectorial_projection(b, S.build_positive_contour(b, cfg)).mat
        worst, kmax = max(worst, op_norm(got - p)), max(kmax, kappa)
    verdict(1, "sectorial oracle", worst <= 1e-7, f"max ‖P₊ − P₊exact‖ = {worst:.2e} over 100 trials (κ ≤ {kmax:.1f})")


def test_criterion_02_semigroup_laws():
    grid = [0.1 * k for k in range(1, 11)]
    sums = sorted({round(x + y, 10) for x in grid for y in grid})
    worst = {"semigroup": 0.0, "annihilation": 0.0, "derivative": 0.0}
    for name, b in _sectorial_suite().items():
        cfg = S.default_cut(b, c=0.1, margin=0.02)
        gp, gm = S.build_positive_contour(b, cfg), S.build_negative_contour(b, cfg)
        xs = sorted(set([round(x, 10) for x in grid] + sums))
        table = dict(zip(xs, S.q_many(b, gp, xs)))
        scale = max(1.0, op_norm(S.sectorial_projection(b, gp).mat)) ** 2
        for x in grid:
            for y in grid:
                r = max_abs(table[round(x, 10)] @ table[round(y, 10)] - table[round(x + y, 10)]) / scale
                worst["semigroup"] = max(worst["semigroup"], r)
        qm = S.q_many(b, gm, [-x for x in grid])
        for q in qm:
            for x in grid:
                r = max(max_abs(table[round(x, 10)] @ q), max_abs(q @ table[round(x, 10)])) / scale
                worst["annihilation"] = max(worst["annihilation"], r)
        h = 1e-4
        for x in grid[1:-1]:
            a, c = S.q_many(b, gp, [x - h, x + h])
            r = max_abs((c - a) / (2 * h) + b @ table[round(x, 10)]) / (scale * max(1.0, op_norm(b)))
            worst["derivative"] = max(worst["derivative"], r)
    ok = all(v <= 1e-6 for v in worst.values())
    verdict(2, "semigroup laws", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_03_unboundedness_exhibit():
    half = S.projection_norm_growth(0.5)
    one = S.projection_norm_growth(1.0)
    ratio = one.norms[-1] / one.norms[0]
    ok = abs(half.exponent - 0.5) <= 0.05 and ratio <= 1.2
    verdict(
        3, "unbounded P₊ exhibit", ok,
        f"α=½ exponent {half.exponent:.3f} (plain log-log {half.raw_exponent:.3f}), α=1 ratio {ratio:.4f}",
    )


def test_criterion_04_calderon_algebra():
    worst = {"idempotent": 0.0, "complement": 0.0, "hermitian": 0.0, "orthogonality": 0.0, "range_drift": 0.0}
    for name, d in OPERATORS.items():
        pair = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
        cp, cm = pair.c_plus.mat, pair.c_minus.mat
        worst["idempotent"] = max(worst["idempotent"], max_abs(cp @ cp - cp), max_abs(cm @ cm - cm))
        worst["complement"] = max(worst["complement"], max_abs(cp + cm - np.eye(2 * d.n)))
        worst["hermitian"] = max(worst["hermitian"], max_abs(cp - cp.conj().T))
        along = orthonormalize(np.linalg.inv(pair.t_used.T) @ pair.n_minus.frame)
        gap = max(abs(math.pi / 2 - a) for a in principal_angles(pair.n_plus, along))
        worst["orthogonality"] = max(worst["orthogonality"], gap)
        ranges = [K.calderon_pair(d, K.make_boundary_condition(d, c)).c_plus.range() for c in ("J", "JtInv", "UnitaryJ")]
        drift = max(max(principal_angles(r, ranges[0])) for r in ranges[1:])
        worst["range_drift"] = max(worst["range_drift"], drift)
    ok = (worst["idempotent"] <= 1e-8 and worst["complement"] <= 1e-8 and worst["hermitian"] <= 1e-8
          and worst["orthogonality"] <= 1e-7 and worst["range_drift"] <= 1e-7)
    verdict(4, "Calderón algebra", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" on {len(OPERATORS)} operators")


def test_criterion_05_oracle_agreement():
    worst_angle = worst_res = worst_coupling = 0.0
    for sc in SUITE:
        d = OPERATORS[sc.name]
        bc = K.make_boundary_condition(d, sc.boundary_condition)
        pair = K.calderon_pair(d, bc)
        data = C.kernel_data(d)
        worst_angle = max(worst_angle, max(principal_angles(pair.c_plus.range(), data.cauchy_plus)))
        rng = substream(5, f"acceptance/{sc.name}/double")
        rhs = []
        for _ in range(20):
            a, b = random_complex(rng, 2, d.n)
            f1, f2 = rng.uniform(0.5, 3.0, 2)
            rhs.append((
                C.Section.from_function(d.grid, lambda x, a=a, f=f1: np.outer(np.cos(f * x), a)),
                C.Section.from_function(d.grid, lambda x, b=b, f=f2: np.outer(np.sin(f * x), b)),
            ))
        solver = K.double_solver(d, bc)
        sols = solver.solve_many(rhs)
        worst_res = max([worst_res] + [solver.residual(f, g) for f, g in zip(sols, rhs)])
        worst_coupling = max([worst_coupling] + [solver.coupling_residual(f) for f in sols])
    ok = worst_angle <= 1e-7 and worst_res <= 1e-7 and worst_coupling <= 1e-9
    verdict(
        5, "oracle agreement", ok,
        f"max angle to transfer Cauchy data {worst_angle:.1e}, double residual {worst_res:.1e}, "
        f"coupling {worst_coupling:.1e} (20 rhs × {len(SUITE)} operators)",
    )


def test_criterion_06_product_case():
    details, ok = [], True
    for sc in SUITE:
        if not _constant(sc):
            continue
        errs = []
        for ell in (1.0, 2.0, 3.0, 4.0):
            d = dataclasses.replace(sc, length=ell, grid_points=129).operator()
            b0 = d.B_at(0.0)
            vals = hermitian_eigen(0.5 * (b0 + b0.conj().T))[0]
            assert max_abs(b0 - b0.conj().T) <= 1e-12
            small = float(np.min(np.abs(vals)))
            gp = S.build_positive_contour(b0, S.default_cut(b0, c=0.5 * small, margin=0.25 * small))
            pair = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
            errs.append(op_norm(pair.c_plus.mat[: d.n, : d.n] - S.sectorial_projection(b0, gp).mat))
        # the gap separating the positive and the negative spectrum of B₀
        gap = float(vals[vals > 0].min() - vals[vals < 0].max())
        slope = float(np.polyfit([1, 2, 3, 4], np.log(errs), 1)[0])
        good = abs(slope + gap) <= 0.1 * gap
        ok &= good
        details.append(f"{sc.name} slope {slope:.3f} vs −{gap:.2f}")
    verdict(6, "product-case closeness", ok and bool(details), "; ".join(details))


def test_criterion_07_cobordism():
    sigs, lag_worst, grading, skipped = [], 0.0, [], []
    lag_ok = True
    for sc in SUITE:
        name, d = sc.name, OPERATORS[sc.name]
        if not d.selfadjoint:
            continue
        # the strip around iℝ must stay clear of the smallest real eigenvalue
        small = float(np.min(np.abs(hermitian_eigen(d.B_at(0.0))[0])))
        margin = min(sc.cut["margin"], 0.25 * small)
        sigs.append(B.cobordism_signature(d, c=sc.cut["c"], margin=margin, strip=2 * margin).signature)
        rep = B.range_lagrangian(K.calderon_pair(d, K.make_boundary_condition(d, "Reflection")), d)
        lag_ok &= rep.ok
        lag_worst = max(lag_worst, rep.max_angle)
        try:
            grading.append(B.circle_grading_index(d.circle_B(0.0), np.asarray(d.J(0.0))).index)
        except GradingUnbalanced:
            skipped.append(name)
    ok = all(s == 0 for s in sigs) and lag_ok and all(g == 0 for g in grading)
    verdict(
        7, "cobordism", ok,
        f"signatures {sigs}, Lagrangian angle ≤ {lag_worst:.1e}, grading indices {grading}"
        + (f", unbalanced {skipped}" if skipped else ""),
    )


def test_criterion_08_symplectic_suites():
    rng = substream(8, "acceptance/upgrade")
    upgrade = 0
    for _ in range(500):
        sp, a = Y.random_symplectic(rng, int(rng.integers(1, 5)))
        lam, mu = Y.random_transversal_isotropic_pair(rng, a)
        upgrade += Y.transversal_isotropic_upgrade_check(sp, lam, mu)
    rng = substream(8, "acceptance/reduction")
    reduction = 0
    for _ in range(200):
        h = int(rng.integers(1, 7))
        sp, a = Y.random_symplectic(rng, h)
        lam = Y.random_lagrangian(rng, a)
        w, w0 = Y.random_coisotropic(rng, sp, a, int(rng.integers(0, h + 1)))
        red = Y.symplectic_reduce(sp, lam, w, w0)
        reduction += red.report is None or red.report.ok
    rng = substream(8, "acceptance/brute")
    agree = 0
    for trial in range(200):
        half = 1 + trial % 2
        sp, a = Y.random_symplectic(rng, half)
        k = 1 + int(rng.integers(0, 2 * half))
        lam = Y.random_lagrangian(rng, a) if trial % 2 else orthonormalize(random_complex(rng, 2 * half, k))
        agree += Y.is_lagrangian(sp, lam).ok == brute_is_lagrangian(sp.gamma, lam.frame)
    ok = upgrade == 500 and reduction == 200 and agree == 200
    verdict(8, "symplectic suites", ok, f"upgrade {upgrade}/500, reduction {reduction}/200, brute-force agreement {agree}/200")


def test_criterion_09_perturbation_bounds():
    N = 32
    b = fourier_multiplier(lambda k: np.diag([1.0 + abs(k), -(1.0 + abs(k))]), N, 2)
    v = 0.1 * fourier_multiplier(lambda k: (1.0 + abs(k)) * np.eye(2), N, 2)
    slopes = []
    for s, s2 in [(0.0, 0.0), (0.0, 0.5), (-0.25, 0.25), (0.0, 0.25)]:
        r = P.resolvent_perturbation_probe(b, v, s, s2, fiber_dim=2, lambdas=P.default_probe_lambdas(hi=10))
        slopes.append((s, s2, r.slope, r.target_slope))
    slope_ok = all(abs(x - t) <= 0.1 for _, _, x, t in slopes)
    rng = substream(9, "acceptance/riesz")
    riesz = 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        bb = random_complex(rng, n, n)
        bb = bb + bb.conj().T
        e = random_complex(rng, n, n)
        e = e + e.conj().T
        e *= rng.uniform(0.01, 0.3) / P.riesz_q(bb, bb + e)
        riesz += P.riesz_lipschitz_check(bb, bb + e).ok
    lo = P.lower_order_projection_stability(fourier_multiplier(lambda k: np.diag([1.0 + abs(k), -(1.0 + abs(k))]), 8, 2),
                                            order_multiplier(0.5, np.array([[0.0, 1.0], [1.0, 0.0]]), 8), 0.5, fiber_dim=2)
    ok = slope_ok and riesz == 100 and abs(lo.intercept) <= 1e-8
    verdict(
        9, "perturbation bounds", ok,
        "slopes " + ", ".join(f"({s},{s2}) {x:.3f}/{t:.2f}" for s, s2, x, t in slopes)
        + f"; Riesz {riesz}/100; lower-order intercept {lo.intercept:.1e}",
    )


def test_criterion_10_continuity():
    fam = P.rotation_family()
    parts, ok = [], True
    for target in P.TARGETS:
        rep = P.continuity_experiment(fam, target)
        ok &= rep.ok(1e-3)
        parts.append(f"{target} monotone={rep.monotone} finest={rep.finest:.1e}")
    crossing = P.cut_crossing_flag(P.mass_family([0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6]))
    ok &= crossing == 0.5
    verdict(10, "continuity", ok, "; ".join(parts) + f"; crossing flagged at {crossing}")


def test_criterion_11_extension():
    worst = {"restriction": 0.0, "constant": 0.0, "symmetry": 0.0}
    floor, halvings = math.inf, 0
    for name, d in OPERATORS.items():
        r = E.extend_symmetric(d, max_halvings=8)
        for k in worst:
            worst[k] = max(worst[k], r.checks[k])
        floor, halvings = min(floor, r.checks["symbol_min"]), max(halvings, r.halvings)
    rot = lambda t: np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    j2 = np.diag([1j, -1j])
    g2 = E.gauge_unitary(lambda x: rot(x) @ j2 @ rot(x).T, np.linspace(0, 0.5, 11))
    a = random_complex(substream(11, "acceptance/gauge"), 4, 4)
    h = a - a.conj().T
    j4 = np.diag([1j, 1j, -1j, -1j])
    g4 = E.gauge_unitary(lambda x: sla.expm(x * h) @ j4 @ sla.expm(-x * h), np.linspace(0, 0.3, 7))
    gauge = max(g2.unitarity_defect, g2.conjugation_defect, g4.unitarity_defect, g4.conjugation_defect)
    ok = (worst["restriction"] <= 1e-12 and worst["constant"] <= 1e-12 and worst["symmetry"] <= 1e-10
          and floor >= 1e-6 and gauge <= 1e-10)
    verdict(
        11, "collar extension", ok,
        ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
        + f", symbol floor {floor:.3f}, halvings ≤ {halvings}, gauge {gauge:.1e}",
    )


def test_criterion_12_greens_formula():
    grids = (65, 129, 257, 513)
    lo, hi = math.inf, -math.inf
    for name, d in OPERATORS.items():
        rng = substream(12, f"acceptance/{name}/green")
        for _ in range(20):
            fu, fv = random_pair(rng, d.n)
            ds, hs = [], []
            for p in grids:
                dd = d.with_grid(p)
                u, v = C.Section.from_function(dd.grid, fu), C.Section.from_function(dd.grid, fv)
                ds.append(abs(C.greens_defect(dd, u, v)))
                hs.append(dd.h)
            order = float(np.polyfit(np.log(hs), np.log(ds), 1)[0])
            lo, hi = min(lo, order), max(hi, order)
    ok = 3.7 <= lo and hi <= 4.3
    verdict(12, "Green's formula order", ok, f"orders in [{lo:.2f}, {hi:.2f}] over 20 pairs × {len(OPERATORS)} operators")
