"""Scenario-driven command line front end.

A scenario is a JSON document naming an operator on the model cylinder and
the experiments to run on it.  Complex numbers are written either as plain
numbers or as ``[re, im]`` pairs; a matrix is a list of rows.

    {
      "name": "diag-toy", "seed": 1,
      "model": {"m": 2, "N": 4, "length": 1.0, "grid_points": 65},
      "J": [J_0, J_1, ...],                      Chebyshev coefficients in x
      "B": [{"gamma": [[k, M], ...], "V": [[k, M], ...]}, ...],
      "C": [[[k, M], ...], ...],
      "selfadjoint": true,
      "boundary_condition": "JtInv",
      "cut": {"c": 0.5, "margin": 0.1},
      "experiments": {"sectorial": {...}, "calderon": {...}, ...}
    }

Every asserted inequality lands in the report as ``{name, lhs, rhs, tol,
pass}`` so a reader can check it without rerunning anything.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import IncompatibleReports, LabError, SchemaError

EXPERIMENTS = ("sectorial", "calderon", "cobordism", "continuity", "extension")

CATALOG = {
    "sectorial": "contour projection of B(0) against a constructed oracle; semigroup laws",
    "calderon": "Calderón projection algebra, Cauchy data agreement, invertible double solves",
    "cobordism": "signature of iJ₀ on the imaginary spectrum of B₀; Lagrangian range; graded index",
    "continuity": "modulus of continuity along a one-parameter family, with cut-crossing flags",
    "extension": "symmetric continuation past the boundary and gauge unitaries",
}

EXIT_OK, EXIT_INPUT, EXIT_ASSERT = 0, 1, 2


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def substream(seed: int, label: str) -> np.random.Generator:
    """Philox generator for the labeled substream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(label.encode("utf-8")),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    seed: int | None
    m: int
    N: int
    length: float
    grid_points: int
    J: list
    B: list
    C: list
    selfadjoint: bool
    boundary_condition: str
    cut: dict
    experiments: dict
    raw: dict = field(repr=False, default_factory=dict)
    source: str = ""

    def operator(self):
        from .collar import collar_from_chebyshev

        return collar_from_chebyshev(
            self.length, self.N, self.m, self.J, self.B, self.C,
            grid_points=self.grid_points, selfadjoint=self.selfadjoint, label=self.name,
        )

    def rng(self, label: str) -> np.random.Generator:
        if self.seed is None:
            raise SchemaError("field 'seed': required by randomized experiments", field="seed")
        return substream(self.seed, f"{self.name}/{label}")


def _where(text: str, key: str) -> str:
    """Line number of the first occurrence of a JSON key, for diagnostics."""
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return f"line {i}"
    return "line ?"


def _complex(v, path: str) -> complex:
    if isinstance(v, bool):
        raise SchemaError(f"{path}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in v):
        return complex(v[0], v[1])
    raise SchemaError(f"{path}: expected a number or an [re, im] pair")


def _matrix(v, m: int, path: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != m or any(not isinstance(r, list) or len(r) != m for r in v):
        raise SchemaError(f"{path}: expected a {m}×{m} matrix")
    return np.array([[_complex(e, f"{path}[{i}][{j}]") for j, e in enumerate(r)] for i, r in enumerate(v)])


def _trig(v, m: int, path: str) -> list | None:
    if v is None:
        return None
    if not isinstance(v, list):
        raise SchemaError(f"{path}: expected a list of [mode, matrix] pairs")
    out = []
    for i, pair in enumerate(v):
        if not isinstance(pair, list) or len(pair) != 2 or not isinstance(pair[0], int) or isinstance(pair[0], bool):
            raise SchemaError(f"{path}[{i}]: expected [mode, matrix]")
        out.append((pair[0], _matrix(pair[1], m, f"{path}[{i}][1]")))
    return out


def _need(d: dict, key: str, kind, text: str, prefix: str = ""):
    if key not in d:
        raise SchemaError(f"{_where(text, key)}: field '{prefix}{key}' is missing", field=prefix + key)
    val = d[key]
    ok = isinstance(val, kind) and not (isinstance(val, bool) and kind is not bool)
    if not ok:
        raise SchemaError(f"{_where(text, key)}: field '{prefix}{key}' has the wrong type", field=prefix + key)
    return val


def parse_scenario(text: str, source: str = "") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno}: invalid JSON ({exc.msg})", line=exc.lineno) from exc
    if not isinstance(raw, dict):
        raise SchemaError("line 1: a scenario is a JSON object")
    name = _need(raw, "name", str, text)
    model = _need(raw, "model", dict, text)
    m = _need(model, "m", int, text, "model.")
    N = _need(model, "N", int, text, "model.")
    length = float(_need(model, "length", (int, float), text, "model."))
    grid = int(model.get("grid_points", 65))
    if m < 1 or N < 0 or length <= 0:
        raise SchemaError(f"{_where(text, 'model')}: need m >= 1, N >= 0 and length > 0", field="model")
    if grid < 5 or (grid - 1) % 4:
        raise SchemaError(f"{_where(text, 'grid_points')}: grid_points must be 4k+1", field="model.grid_points")
    jl = _need(raw, "J", list, text)
    if not jl:
        raise SchemaError(f"{_where(text, 'J')}: field 'J' needs at least one coefficient", field="J")
    J = [_matrix(j, m, f"J[{i}]") for i, j in enumerate(jl)]
    bl = _need(raw, "B", list, text)
    if not bl:
        raise SchemaError(f"{_where(text, 'B')}: field 'B' needs at least one coefficient", field="B")
    B = []
    for i, b in enumerate(bl):
        if not isinstance(b, dict) or set(b) - {"gamma", "V"}:
            raise SchemaError(f"{_where(text, 'B')}: B[{i}] must be an object with keys gamma, V", field=f"B[{i}]")
        B.append((_trig(b.get("gamma"), m, f"B[{i}].gamma"), _trig(b.get("V"), m, f"B[{i}].V")))
    C = [_trig(c, m, f"C[{i}]") for i, c in enumerate(raw.get("C") or [None])]
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise SchemaError(f"{_where(text, 'seed')}: seed must be a non-negative integer", field="seed")
    exps = raw.get("experiments", {})
    if not isinstance(exps, dict) or any(k not in EXPERIMENTS for k in exps):
        bad = [k for k in exps if k not in EXPERIMENTS] if isinstance(exps, dict) else ["?"]
        raise SchemaError(f"{_where(text, 'experiments')}: unknown experiments {bad}", field="experiments")
    if any(not isinstance(v, dict) for v in exps.values()):
        raise SchemaError(f"{_where(text, 'experiments')}: experiment parameters must be objects", field="experiments")
    randomized = {"sectorial", "calderon"}
    if seed is None and randomized & set(exps):
        raise SchemaError(f"{_where(text, 'name')}: field 'seed' is mandatory for randomized experiments", field="seed")
    cut = raw.get("cut", {"c": 0.5, "margin": 0.1})
    if not isinstance(cut, dict) or set(cut) - {"c", "margin"}:
        raise SchemaError(f"{_where(text, 'cut')}: cut must be an object with keys c, margin", field="cut")
    bc = raw.get("boundary_condition", "JtInv")
    from .calderon import CHOICES

    if bc not in CHOICES:
        raise SchemaError(f"{_where(text, 'boundary_condition')}: unknown choice {bc!r}", field="boundary_condition")
    return Scenario(
        name, seed, m, N, length, grid, J, B, C, bool(raw.get("selfadjoint", False)), bc,
        {"c": float(cut.get("c", 0.5)), "margin": float(cut.get("margin", 0.1))}, exps, raw, source,
    )


def bundled_scenarios() -> dict[str, str]:
    root = resources.files("collarlab") / "scenarios"
    files = sorted((p for p in root.iterdir() if p.name.endswith(".json")), key=lambda p: p.name[:-5])
    return {p.name[:-5]: p.read_text(encoding="utf-8") for p in files}


def load_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.is_file():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise SchemaError(f"cannot read {ref}: {exc}") from exc
        return parse_scenario(text, str(path))
    bundled = bundled_scenarios()
    if ref in bundled:
        return parse_scenario(bundled[ref], f"bundled:{ref}")
    raise SchemaError(f"no scenario file or bundled scenario named {ref!r}")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, complex):
        return [_num(x.real), _num(x.imag)]
    x = float(x)
    return x if math.isfinite(x) else repr(x)


class Record:
    """Collects values and asserted inequalities for one experiment."""

    def __init__(self) -> None:
        self.values: dict = {}
        self.assertions: list = []
        self.curves: dict[str, tuple[list, list]] = {}

    def value(self, key: str, v) -> None:
        self.values[key] = _clean(v)

    def at_most(self, name: str, lhs: float, rhs: float) -> bool:
        ok = bool(float(lhs) <= float(rhs))
        self.assertions.append({"name": name, "lhs": _num(lhs), "op": "<=", "rhs": _num(rhs), "tol": _num(rhs), "pass": ok})
        return ok

    def equals(self, name: str, lhs, rhs, tol: float = 0.0) -> bool:
        ok = bool(abs(float(lhs) - float(rhs)) <= tol)
        self.assertions.append({"name": name, "lhs": _num(lhs), "op": "==", "rhs": _num(rhs), "tol": _num(tol), "pass": ok})
        return ok

    def within(self, name: str, lhs: float, target: float, tol: float) -> bool:
        return self.equals(name, lhs, target, tol)

    def truth(self, name: str, flag: bool) -> bool:
        return self.equals(name, 1.0 if flag else 0.0, 1.0, 0.0)

    def curve(self, name: str, header: list, rows: list) -> None:
        self.curves[name] = (header, rows)

    def passed(self) -> bool:
        return all(a["pass"] for a in self.assertions)


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if v is None or isinstance(v, str):
        return v
    return _num(v)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _exact_projection(b: np.ndarray, c: float) -> np.ndarray | None:
    """Threshold projection when b is diagonal, otherwise None.

    Γ₊ encloses the right half plane outside the cut and the whole disc |λ| < c.
    """
    if np.count_nonzero(b - np.diag(np.diag(b))):
        return None
    lam = np.diag(b)
    keep = (lam.real > 0) | (np.abs(lam) < c)
    return np.diag(keep.astype(np.complex128))


def conjugated_oracle(rng: np.random.Generator, n: int, kappa_max: float = 50.0, gap: float = 0.3):
    """(V diag(λ) V⁻¹, exact P₊, κ(V)) with κ(V) ≤ kappa_max and |Re λ| ≥ gap."""
    from .numkernel import inverse, singular_values

    while True:
        v = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        s = singular_values(v)
        kappa = float(s[0] / s[-1])
        if kappa <= kappa_max:
            break
    re = rng.uniform(gap, 2.0, n) * rng.choice([-1.0, 1.0], n)
    re[0], re[-1] = abs(re[0]), -abs(re[-1])
    lam = re + 1j * rng.uniform(-2.0, 2.0, n)
    vi = inverse(v)
    b = v @ np.diag(lam) @ vi
    p = v @ np.diag((lam.real > 0).astype(np.complex128)) @ vi
    return b, p, kappa


def run_sectorial(sc: Scenario, params: dict, rec: Record) -> None:
    from .numkernel import max_abs, op_norm
    from .sectorial import (SpectralCutConfig, build_negative_contour, build_positive_contour, default_cut, q_many,
                            sectorial_projection)

    trials = int(params.get("trials", 20))
    size = int(params.get("size", 6))
    rng = sc.rng("sectorial-oracle")
    worst = 0.0
    for _ in range(trials):
        b, p, kappa = conjugated_oracle(rng, size)
        # σ_min(z − b) ≥ dist(z, spec)/κ(V) and the contour stays 0.2 away from the spectrum
        cfg = default_cut(b, c=0.1, margin=min(0.1, 0.15 / kappa))
        got = sectorial_projection(b, build_positive_contour(b, cfg)).mat
        worst = max(worst, op_norm(got - p) / max(1.0, op_norm(p)))
    rec.value("oracle_trials", trials)
    rec.at_most("oracle_deviation", worst, 1e-7)

    d = sc.operator()
    b0 = d.B_at(0.0)
    nb = op_norm(b0)
    cfg = SpectralCutConfig(sc.cut["c"], max(2.0 * nb + 1.0, 2.0 * sc.cut["c"] + 1.0), margin=sc.cut["margin"])
    gp = build_positive_contour(b0, cfg)
    gm = build_negative_contour(b0, cfg)
    pp = sectorial_projection(b0, gp)
    pm = sectorial_projection(b0, gm)
    rec.value("rank_plus", pp.rank())
    rec.at_most("complement_residual", max_abs(pp.mat + pm.mat - np.eye(b0.shape[0])), 1e-8)
    exact = _exact_projection(b0, sc.cut["c"])
    if exact is not None:
        rec.at_most("diagonal_oracle_deviation", op_norm(pp.mat - exact), 1e-7)
    xs = [0.1, 0.2, 0.3]
    qp = q_many(b0, gp, xs)
    qm = q_many(b0, gm, [0.1])
    rec.at_most("semigroup_residual", op_norm(qp[0] @ qp[1] - qp[2]) / max(1.0, op_norm(qp[2])), 1e-6)
    rec.at_most("annihilation_residual", op_norm(qp[0] @ qm[0]), 1e-6)


def run_calderon(sc: Scenario, params: dict, rec: Record) -> None:
    from .calderon import CHOICES, calderon_pair, double_solver, make_boundary_condition
    from .collar import Section, kernel_data
    from .numkernel import max_abs, principal_angles

    d = sc.operator()
    n = d.n
    bc = make_boundary_condition(d, sc.boundary_condition)
    pair = calderon_pair(d, bc)
    cp, cm = pair.c_plus.mat, pair.c_minus.mat
    rec.value("rank_plus", pair.c_plus.rank())
    rec.at_most("idempotent", max_abs(cp @ cp - cp), 1e-8)
    rec.at_most("complement", max_abs(cp + cm - np.eye(2 * n)), 1e-8)
    data = kernel_data(d)
    rec.at_most("transfer_cauchy_angle", max(principal_angles(pair.c_plus.range(), data.cauchy_plus), default=0.0), 1e-7)
    frame = data.cauchy_plus.frame
    x0, xl = frame[:n], frame[n:]
    defect = max(
        float(np.linalg.norm(xl[:, i] - data.transfer @ x0[:, i]) / max(np.linalg.norm(x0[:, i]), 1e-300))
        for i in range(frame.shape[1])
    )
    rec.at_most("cauchy_consistency", defect, 1e-7)
    if sc.boundary_condition == "JtInv":
        rec.at_most("hermitian", max_abs(cp - cp.conj().T), 1e-8)
    if sc.selfadjoint:
        ranges = []
        for choice in CHOICES:
            try:
                ranges.append((choice, calderon_pair(d, make_boundary_condition(d, choice)).c_plus.range()))
            except LabError:
                continue
        drift = max((max(principal_angles(r, ranges[0][1]), default=0.0) for _, r in ranges[1:]), default=0.0)
        rec.value("choices_compared", [c for c, _ in ranges])
        rec.at_most("range_independent_of_T", drift, 1e-7)
    solves = int(params.get("solves", 5))
    rng = sc.rng("calderon-rhs")
    solver = double_solver(d, bc)
    rhs = []
    for _ in range(solves):
        a, b = (rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n)))
        f1, f2 = rng.uniform(0.5, 3.0, 2)
        rhs.append((
            Section.from_function(d.grid, lambda x, a=a, f=f1: np.outer(np.cos(f * np.asarray(x)), a)),
            Section.from_function(d.grid, lambda x, b=b, f=f2: np.outer(np.sin(f * np.asarray(x)), b)),
        ))
    sols = solver.solve_many(rhs)
    rec.value("double_solves", solves)
    rec.at_most("double_residual", max(solver.residual(f, g) for f, g in zip(sols, rhs)), 1e-7)
    rec.at_most("coupling_residual", max(solver.coupling_residual(f) for f in sols), 1e-9)


def run_cobordism(sc: Scenario, params: dict, rec: Record) -> None:
    from .calderon import calderon_pair, make_boundary_condition
    from .cobordism import circle_grading_index, cobordism_signature, range_lagrangian
    from .errors import GradingUnbalanced, PreconditionFailed

    d = sc.operator()
    if not d.selfadjoint:
        raise PreconditionFailed("cobordism experiment needs a formally selfadjoint scenario")
    sig = cobordism_signature(d, c=sc.cut["c"], margin=sc.cut["margin"])
    rec.value("w_zero_dim", sig.w_zero_dim)
    rec.equals("signature", sig.signature, 0)
    pair = calderon_pair(d, make_boundary_condition(d, "Reflection"))
    lag = range_lagrangian(pair, d)
    rec.value("lagrangian_isotropy", lag.isotropy_defect)
    rec.truth("range_lagrangian", lag.ok)
    try:
        g = circle_grading_index(d.circle_B(0.0), np.asarray(d.J(0.0)))
    except (GradingUnbalanced, LabError) as exc:
        rec.value("grading", exc.code)
    else:
        rec.equals("grading_index", g.index, 0)


def run_continuity(sc: Scenario, params: dict, rec: Record) -> None:
    from .paramflow import TARGETS, continuity_experiment, cut_crossing_flag, mass_family, rotation_family

    kind = params.get("family", "rotation")
    if kind == "rotation":
        steps = [2.0 ** -j for j in range(1, int(params.get("finest_power", 10)) + 1)]
        fam = rotation_family(z0=float(params.get("z0", 0.3)), steps=steps, mu=float(params.get("mu", 0.7)))
    elif kind == "mass":
        fam = mass_family([float(z) for z in params.get("masses", [0.3, 0.4, 0.5, 0.6])])
    else:
        raise SchemaError(f"continuity family {kind!r} is not one of rotation, mass", field="experiments.continuity.family")
    targets = params.get("targets", list(TARGETS))
    header = ["z_i", "z_j", "d_str", "diff_norm", "flag"]
    for tg in targets:
        if tg not in TARGETS:
            raise SchemaError(f"continuity target {tg!r} is unknown", field="experiments.continuity.targets")
        rep = continuity_experiment(fam, tg)
        rec.curve(f"continuity_{tg}", header, rep.csv_rows())
        rec.value(f"{tg}_flagged", list(rep.flagged))
        if kind == "rotation":
            rec.truth(f"{tg}_monotone", rep.monotone)
            rec.at_most(f"{tg}_finest", rep.finest, float(params.get("finest_tol", 1e-3)))
    if kind == "mass":
        crossing = cut_crossing_flag(fam)
        rec.value("crossing", crossing)
        if "expect_crossing" in params:
            rec.within("crossing_sample", -1.0 if crossing is None else crossing, float(params["expect_crossing"]), 1e-12)


def run_extension(sc: Scenario, params: dict, rec: Record) -> None:
    from .extension import extend_symmetric, gauge_unitary, ucp_defect_along_extension

    d = sc.operator()
    res = extend_symmetric(d, max_halvings=int(params.get("max_halvings", 8)))
    rec.value("delta", res.delta)
    rec.value("halvings", res.halvings)
    rec.value("case_tags", res.case_tags)
    rec.at_most("restriction", res.checks["restriction"], 1e-12)
    rec.at_most("constant_near_end", res.checks["constant"], 1e-12)
    rec.at_most("symmetry", res.checks["symmetry"], 1e-10)
    rec.value("symbol_worst", list(res.checks["symbol_worst"]))
    rec.at_most("negative_symbol_floor", -res.checks["symbol_min"], -1e-6)
    xs = np.linspace(0.0, d.length, 9)
    path = [np.asarray(d.J(float(x))) for x in xs]
    if all(np.max(np.abs(j @ j + np.eye(d.m))) <= 1e-12 for j in path):
        g = gauge_unitary(path, xs)
        rec.at_most("gauge_unitarity", g.unitarity_defect, 1e-10)
        rec.at_most("gauge_conjugation", g.conjugation_defect, 1e-10)
    else:
        # the gauge is only defined along complex structures
        rec.value("gauge", "skipped: J(x)² ≠ −Id")
    stations = [-res.delta, -0.8 * res.delta, 0.0, d.length]
    prof = ucp_defect_along_extension(res, stations)
    rec.value("ucp_counts", list(prof.counts))
    rec.truth("ucp_constant", prof.constant)


RUNNERS: dict[str, Callable[[Scenario, dict, Record], None]] = {
    "sectorial": run_sectorial,
    "calderon": run_calderon,
    "cobordism": run_cobordism,
    "continuity": run_continuity,
    "extension": run_extension,
}


# ---------------------------------------------------------------------------
# run / compare
# ---------------------------------------------------------------------------


@dataclass
class Outcome:
    name: str
    record: Record
    status: str
    error: dict | None
    seconds: float


def _execute(sc: Scenario, name: str) -> Outcome:
    rec = Record()
    t0 = time.perf_counter()
    err = None
    try:
        RUNNERS[name](sc, sc.experiments.get(name, {}), rec)
        status = "pass" if rec.passed() else "fail"
    except SchemaError:
        raise
    except LabError as exc:
        status, err = "fail", {"code": exc.code, "message": str(exc)}
    except Exception as exc:  # recorded, not fatal, so the other experiments still run
        status, err = "error", {"code": type(exc).__name__, "message": str(exc)}
    return Outcome(name, rec, status, err, time.perf_counter() - t0)


def select_experiments(sc: Scenario, listing: str | None) -> list[str]:
    declared = list(sc.experiments) or list(EXPERIMENTS)
    if not listing:
        return declared
    names = [s.strip() for s in listing.split(",") if s.strip()]
    if "all" in names:
        return declared if sc.experiments else list(EXPERIMENTS)
    bad = [s for s in names if s not in EXPERIMENTS]
    if bad:
        raise SchemaError(f"--experiments: unknown names {bad}")
    return [s for s in declared if s in names] + [s for s in names if s not in declared]


def run_scenario(sc: Scenario, selected: Sequence[str], fail_fast: bool = False, threads: int = 1) -> list[Outcome]:
    if threads > 1 and not fail_fast:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda n: _execute(sc, n), selected))
    out = []
    for name in selected:
        res = _execute(sc, name)
        out.append(res)
        if fail_fast and res.status != "pass":
            break
    return out


def build_report(sc: Scenario, outcomes: Sequence[Outcome], timings: bool = True) -> dict:
    exps = {}
    for o in outcomes:
        entry = {"status": o.status, "values": o.record.values, "assertions": o.record.assertions}
        if o.error is not None:
            entry["error"] = o.error
        if o.record.curves:
            entry["curves"] = sorted(f"{k}.csv" for k in o.record.curves)
        exps[o.name] = entry
    report = {
        "scenario": {"name": sc.name, "seed": sc.seed, "definition": sc.raw},
        "versions": {"collarlab": __version__, "numpy": np.__version__},
        "experiments": exps,
        "passed": all(o.status == "pass" for o in outcomes),
    }
    if timings:
        report["timings"] = {o.name: round(o.seconds, 6) for o in outcomes}
    return report


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False) + "\n"


def _csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_outputs(out_dir: Path, report: dict, outcomes: Sequence[Outcome]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(dump_json(report), encoding="utf-8", newline="\n")
    for o in outcomes:
        for name, (header, rows) in o.record.curves.items():
            (out_dir / f"{name}.csv").write_text(_csv_text(header, rows), encoding="utf-8", newline="\n")


def _leaves(obj, prefix: str = ""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def compare_reports(a: dict, b: dict, tol: float = 1e-9) -> list[dict]:
    """Fieldwise differences beyond ``tol`` (relative to max(1, |a|)); timings are ignored."""
    try:
        na, nb = a["scenario"]["name"], b["scenario"]["name"]
        va, vb = a["versions"]["collarlab"], b["versions"]["collarlab"]
    except (KeyError, TypeError) as exc:
        raise IncompatibleReports("input is not a report") from exc
    if na != nb:
        raise IncompatibleReports(f"reports describe different scenarios ({na!r} vs {nb!r})")
    if va.split(".")[0] != vb.split(".")[0]:
        raise IncompatibleReports(f"reports come from incompatible versions ({va} vs {vb})")
    la = {k: v for k, v in _leaves(a) if not k.startswith("timings")}
    lb = {k: v for k, v in _leaves(b) if not k.startswith("timings")}
    diffs = []
    for key in sorted(set(la) | set(lb)):
        if key not in la or key not in lb:
            diffs.append({"field": key, "a": la.get(key), "b": lb.get(key), "reason": "missing"})
            continue
        x, y = la[key], lb[key]
        numeric = all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in (x, y))
        if numeric:
            if abs(x - y) > tol * max(1.0, abs(x)):
                diffs.append({"field": key, "a": x, "b": y, "reason": "numeric"})
        elif x != y:
            diffs.append({"field": key, "a": x, "b": y, "reason": "value"})
    return diffs


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collarlab", description="Experiments on first-order elliptic operators on a cylinder.")
    p.add_argument("--list", action="store_true", help="print the experiment catalog and exit")
    sub = p.add_subparsers(dest="command")
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--out", default=None, help="output directory (default: ./out/<name>)")
    r.add_argument("--experiments", default=None, help="comma separated subset, or 'all'")
    r.add_argument("--fail-fast", action="store_true")
    r.add_argument("--no-timings", action="store_true", help="omit timings so reports are byte-comparable")
    r.add_argument("--threads", type=int, default=1)
    c = sub.add_parser("compare", help="diff two reports")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, default=1e-9)
    sub.add_parser("list", help="print the experiment catalog and bundled scenarios")
    return p


def _fail(code: str, message: str, status: int = EXIT_INPUT) -> int:
    sys.stderr.write(dump_json({"status": "error", "code": code, "message": message}))
    return status


def _print_catalog() -> int:
    lines = ["experiments:"] + [f"  {k:<11} {v}" for k, v in CATALOG.items()]
    lines += ["  all         every experiment declared by the scenario", "scenarios:"]
    lines += [f"  {name}" for name in bundled_scenarios()]
    print("\n".join(lines))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.list or args.command == "list":
        return _print_catalog()
    if args.command is None:
        _parser().print_help(sys.stderr)
        return EXIT_INPUT
    if args.command == "compare":
        try:
            reports = [json.loads(Path(p).read_text(encoding="utf-8")) for p in (args.a, args.b)]
            diffs = compare_reports(*reports, tol=args.tol)
        except (OSError, json.JSONDecodeError) as exc:
            return _fail("SchemaError", str(exc))
        except IncompatibleReports as exc:
            return _fail(exc.code, str(exc))
        sys.stdout.write(dump_json({"differences": diffs}))
        return EXIT_OK if not diffs else EXIT_ASSERT
    try:
        sc = load_scenario(args.scenario)
        selected = select_experiments(sc, args.experiments)
        if args.threads < 1:
            raise SchemaError("--threads must be at least 1")
        outcomes = run_scenario(sc, selected, args.fail_fast, args.threads)
    except SchemaError as exc:
        return _fail(exc.code, str(exc))
    report = build_report(sc, outcomes, timings=not args.no_timings)
    out = Path(args.out) if args.out else Path("out") / sc.name
    try:
        write_outputs(out, report, outcomes)
    except OSError as exc:
        return _fail("OutputError", str(exc))
    for o in outcomes:
        line = f"{o.name:<11} {o.status}"
        if o.error:
            line += f" [{o.error['code']}]"
        print(line)
    return EXIT_OK if report["passed"] else EXIT_ASSERT


if __name__ == "__main__":
    raise SystemExit(main())
