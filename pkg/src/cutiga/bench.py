"""Convergence and robustness sweeps, slope fitting and CSV emission."""

from __future__ import annotations

import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assemble import (
    AssembledSystem,
    apply_mixing,
    assemble,
    cleanup_zero_rows,
    error_norms,
    recover_coefficients,
    scale_system,
    solve,
)
from .enrich import apply_projection_T, build_enrichment, orthogonalize_ldl, variant
from .experiments import Experiment, robustness_experiment
from .geometry import classify_elements
from .linalg import PivotError, scn
from .quadrature import QuadOptions, RuleCache

CSV_HEADER = "method,N,h,dofs,l2_error,h1_error,scn,wall_ms,notes"

PIVOT_DROP_TOL = 1e-12


@dataclass
class RunRecord:
    method: str
    N: int
    h: float
    dofs: int
    l2: float | None
    h1: float | None
    scn: float | None
    wall_ms: int
    notes: str
    delta: float | None = None
    failed: bool = False

    def csv_row(self) -> str:
        def num(v):
            return "" if v is None else f"{v:.10e}"

        return (f"{self.method},{self.N},{self.h:.10e},{self.dofs},"
                f"{num(self.l2)},{num(self.h1)},{num(self.scn)},"
                f"{self.wall_ms},{self.notes}")


def run_cell(exp: Experiment, method: str, N: int,
             quad: QuadOptions | None = None, compute_scn: bool = True,
             compute_errors: bool = True) -> RunRecord:
    """Classify, build, assemble, stabilize, scale, solve and measure one
    (method, N) cell; failures are captured in the record."""
    quad = quad or QuadOptions()
    t0 = time.perf_counter()
    notes = ["scn=drop1"]
    if exp.delta is not None:
        notes.append(f"delta={exp.delta:.10e}")
    try:
        space = exp.make_space(N)
        cls = classify_elements(space, exp.iface, max_k=3)
        cache = RuleCache(space, exp.iface, cls, quad)
        mv = variant(method)
        enr = build_enrichment(mv, space, exp.iface, cls)
        if mv.project and enr.n_functions:
            enr = apply_projection_T(enr, cache)
        sys = assemble(space, enr, cls, exp.iface, exp.data, cache)
        sys, enr, _ = cleanup_zero_rows(sys)
        if sys.notes.get("dropped_zero_rows"):
            notes.append(f"dropped={sys.notes['dropped_zero_rows']}")
        mixing = None
        if mv.orthogonalize and sys.n_enr:
            try:
                enr_m, kept, piv = orthogonalize_ldl(sys.K_EE, enr)
            except PivotError:
                n_before = sys.n_enr
                enr_m, kept, piv = orthogonalize_ldl(sys.K_EE, enr,
                                                     drop_tol=PIVOT_DROP_TOL)
                sys = AssembledSystem(
                    sys.space, enr_m, sys.K_OO,
                    sp.csr_matrix(sys.K_OE.toarray()[:, kept]),
                    sp.csr_matrix(sys.K_EE.toarray()[np.ix_(kept, kept)]),
                    sys.F_O, sys.F_E[kept], sys.w_O, sys.w_E[kept],
                    sys.target, dict(sys.notes),
                )
                notes.append(f"pivot_dropped={n_before - kept.size}")
            enr = enr_m
            mixing = enr_m.mixing
            sys = apply_mixing(sys, mixing, piv)
        scaled = scale_system(sys)
        scn_val = scn(scaled.K_hat, drop_smallest=1).scn if compute_scn else None
        l2 = h1 = None
        if compute_errors and exp.data.exact is not None:
            c, d = solve(scaled)
            c_eff, d_raw = recover_coefficients(enr, c, d, mixing)
            l2, h1 = error_norms(space, enr, cls, exp.data, c_eff, d_raw, cache)
        wall = int(round(1000 * (time.perf_counter() - t0)))
        return RunRecord(method, N, 1.0 / N, sys.ndof, l2, h1, scn_val, wall,
                         ";".join(notes), delta=exp.delta)
    except Exception as exc:  # noqa: BLE001 - a cell failure must not kill the sweep
        wall = int(round(1000 * (time.perf_counter() - t0)))
        notes.append(f"error={type(exc).__name__}:{exc}")
        traceback.print_exc()
        return RunRecord(method, N, 1.0 / N, 0, None, None, None, wall,
                         ";".join(notes), delta=exp.delta, failed=True)


def run_convergence(exp: Experiment, methods, Ns, quad: QuadOptions | None = None,
                    compute_scn: bool = True, compute_errors: bool = True,
                    workers: int = 1, on_record=None) -> list[RunRecord]:
    """Sweep (method, N) cells in deterministic order."""
    Ns = list(Ns)
    if Ns != sorted(Ns):
        raise ValueError("mesh sizes must be ascending")
    cells = [(m, n) for m in methods for n in Ns]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(
                lambda mn: run_cell(exp, mn[0], mn[1], quad, compute_scn, compute_errors),
                cells))
    else:
        records = [run_cell(exp, m, n, quad, compute_scn, compute_errors)
                   for m, n in cells]
    if on_record is not None:
        for r in records:
            on_record(r)
    return records


def run_robustness(a0: float, a1: float, methods, deltas, N: int = 20,
                   quad: QuadOptions | None = None, workers: int = 1,
                   on_record=None) -> list[RunRecord]:
    """SCN of each method as the interface approaches the element boundary."""
    cells = [(m, d) for m in methods for d in deltas]

    def one(cell):
        m, d = cell
        exp = robustness_experiment(d, a0, a1)
        return run_cell(exp, m, N, quad, compute_scn=True, compute_errors=False)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, cells))
    else:
        records = [one(c) for c in cells]
    if on_record is not None:
        for r in records:
            on_record(r)
    return records


def default_deltas() -> list[float]:
    return [0.05 * 2.0 ** (-j) for j in range(1, 21)]


def fit_slope(records, quantity: str, exclude_coarsest: bool = False):
    """Least-squares slope of log(quantity) against log(h).

    Returns (slope, intercept, r_squared). `records` are RunRecords of one
    method; `quantity` is one of 'l2_error', 'h1_error', 'scn'.
    """
    key = {"l2_error": "l2", "h1_error": "h1", "scn": "scn"}[quantity]
    recs = sorted((r for r in records if not r.failed), key=lambda r: r.N)
    if exclude_coarsest and len(recs) > 1:
        recs = recs[1:]
    hs = np.array([r.h for r in recs], dtype=float)
    qs = np.array([getattr(r, key) for r in recs], dtype=float)
    if len(recs) < 3:
        raise ValueError("slope fit needs at least 3 records")
    if np.any(qs <= 0) or np.any(~np.isfinite(qs)):
        raise ValueError(f"nonpositive or missing {quantity} values")
    X = np.log(hs)
    Y = np.log(qs)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def write_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(r.csv_row() + "\n")
