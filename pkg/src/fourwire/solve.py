"""Numerical engines: Newton power flow and solution post-processing.

The power-flow path solves the square equality-only system produced by the
builders in "pf" mode with a damped Newton iteration on sparse Jacobians.
The optimization path lives in :mod:`fourwire.ipm`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .formulation import init_voltages  # re-exported; builders set inits from it
from .network import NEUTRAL, PHASES
from .reduce import FORTESCUE_INV

__all__ = [
    "SolverOptions",
    "Solution",
    "newton_pf",
    "recover_postprocessing",
    "init_voltages",
]


@dataclass
class SolverOptions:
    tol_kkt: float = 1e-8
    tol_pf: float = 1e-10
    max_iter: int = 500
    mu_init: float = 0.1
    mu_reduction: float = 0.2
    regularization_min: float = 1e-20
    dense_threshold: int = 200
    line_search_factor: float = 0.5
    min_step: float = 1e-8
    verbose: bool = False


@dataclass
class Solution:
    status: str
    x: np.ndarray
    objective: float = 0.0
    iterations: int = 0
    wall_time: float = 0.0
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    kkt_error: float = math.nan
    max_residual: float = math.nan
    message: str = ""
    recovered: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == "optimal"


def newton_pf(sys, opts: SolverOptions | None = None, x0=None) -> Solution:
    """Damped Newton on a square equality system; converged when the
    residual infinity norm drops below ``tol_pf``."""
    opts = opts or SolverOptions()
    if sys.n_ineq:
        raise ValueError("newton_pf requires an equality-only system")
    if sys.n_eq != sys.n_vars:
        raise ValueError(
            f"newton_pf requires a square system, got {sys.n_eq} equations "
            f"for {sys.n_vars} variables"
        )
    t0 = time.perf_counter()
    x = sys.initial_point() if x0 is None else np.array(x0, dtype=float)
    if sys.n_vars == 0:
        return Solution("optimal", x, iterations=0, wall_time=time.perf_counter() - t0,
                        max_residual=0.0)
    r = sys.constraint_values(x)
    for it in range(opts.max_iter + 1):
        rmax = float(np.abs(r).max())
        if rmax <= opts.tol_pf:
            return Solution(
                "optimal",
                x,
                iterations=it,
                wall_time=time.perf_counter() - t0,
                max_residual=rmax,
            )
        if it == opts.max_iter:
            break
        J = sys.eval_jacobian(x).tocsc()
        try:
            lu = spla.splu(J)
        except RuntimeError as exc:
            return Solution(
                "numerical-failure",
                x,
                iterations=it,
                wall_time=time.perf_counter() - t0,
                max_residual=rmax,
                message=f"singular Jacobian at iteration {it}: {exc}",
            )
        dx = lu.solve(-r)
        if not np.all(np.isfinite(dx)):
            return Solution(
                "numerical-failure",
                x,
                iterations=it,
                wall_time=time.perf_counter() - t0,
                max_residual=rmax,
                message=f"non-finite Newton step at iteration {it}",
            )
        norm0 = float(np.linalg.norm(r))
        alpha = 1.0
        while alpha >= opts.min_step:
            x_trial = x + alpha * dx
            r_trial = sys.constraint_values(x_trial)
            if np.all(np.isfinite(r_trial)) and float(
                np.linalg.norm(r_trial)
            ) <= (1.0 - 1e-4 * alpha) * norm0:
                break
            alpha *= opts.line_search_factor
        else:
            return Solution(
                "numerical-failure",
                x,
                iterations=it,
                wall_time=time.perf_counter() - t0,
                max_residual=rmax,
                message=f"line search stalled at iteration {it} (divergence)",
            )
        x, r = x_trial, r_trial
    return Solution(
        "iteration-limit",
        x,
        iterations=opts.max_iter,
        wall_time=time.perf_counter() - t0,
        max_residual=float(np.abs(r).max()),
        message=f"no convergence within {opts.max_iter} iterations",
    )


def scale_injections(net, factor, setpoints=None):
    """Network copy with all load nominals (and setpoints) scaled by factor."""
    from .network import Load

    out = net.copy_shallow()
    out.loads = {
        did: Load(
            id=load.id,
            bus=load.bus,
            connection=load.connection,
            model=load.model,
            P_nom=load.P_nom * factor,
            Q_nom=load.Q_nom * factor,
            map=load.map,
            U_nom=load.U_nom,
            zip_weights=load.zip_weights,
            group=load.group,
        )
        for did, load in net.loads.items()
    }
    scaled_setpoints = None
    if setpoints is not None:
        scaled_setpoints = {
            gid: (p * factor, q * factor) for gid, (p, q) in setpoints.items()
        }
    return out, scaled_setpoints


def solve_pf(net, form="ivr", cfg=None, opts=None, voltage_guide=True):
    """Build and solve a power-flow feasibility problem, returning (sol, sys).

    The current-voltage form converges from the no-load initialization
    directly. The power-voltage form has spurious solutions (non-physical
    neutral groundings) arbitrarily close to the physical one, so its
    Newton solve is anchored by first solving the current form and copying
    only the voltage profile into the initial point; all power-flow and
    auxiliary variables keep their cold-start values and are resolved
    through the power form's own equations. Set ``voltage_guide=False`` for
    a flat start.
    """
    from dataclasses import replace as _replace

    from .acr import build_acr
    from .ivr import build_ivr
    from .formulation import FormulationConfig

    cfg = cfg or FormulationConfig.pf()
    if cfg.mode != "pf":
        cfg = _replace(cfg, mode="pf")
    opts = opts or SolverOptions()
    if form == "ivr":
        sys = build_ivr(net, cfg)
        return newton_pf(sys, opts), sys
    if form != "acr":
        raise ValueError(f"unknown formulation {form!r}")
    from .acr import acr_initial_point

    sys = build_acr(net, cfg)
    x0 = None
    if voltage_guide:
        guide_sol, guide_sys = solve_pf(net, "ivr", cfg, opts)
        if guide_sol.status == "optimal":
            vm_i = guide_sys.meta["varmap"]
            built = guide_sys.meta["net"]
            profile = {}
            for bid in built.buses:
                for t in built.buses[bid].terminals:
                    key = ("U", bid, t.label)
                    if vm_i.has(key):
                        profile[(bid, t.label)] = vm_i.c[key].value(guide_sol.x)
            x0 = acr_initial_point(sys, profile)
    return newton_pf(sys, opts, x0=x0), sys


# -- post-processing ------------------------------------------------------------


def reconstruct_currents(sol: Solution, sys, floor_pu: float = 1e-6):
    """Per-terminal component current sums rebuilt from a power solution.

    Line and shunt currents follow from the voltages alone (series Ohm law
    and admitance products); device currents are conj(S / U) and are
    undefined below the voltage floor, where they contribute nothing. The
    return value maps (bus, terminal) -> net injected current in per-unit,
    i.e. the current-law residual the power solution implies.
    """
    vm = sys.meta["varmap"]
    net = sys.meta["net"]
    x = sol.x
    mismatch: dict[tuple, complex] = {}

    def add(bus, lbl, value):
        mismatch[(bus, lbl)] = mismatch.get((bus, lbl), 0.0) + value

    bases = sys.meta["bases"]
    for lid in sorted(net.lines):
        line = net.lines[lid]
        zb = bases.z(line.from_bus)
        Z = line.z_total() / zb
        Ysf = np.linalg.inv(Z)
        Yf = line.y_fr_total() * zb
        Yt = line.y_to_total() * zb
        u_fr = np.array(
            [vm.U(line.from_bus, l).value(x) for l in line.map_from], dtype=complex
        )
        u_to = np.array(
            [vm.U(line.to_bus, l).value(x) for l in line.map_to], dtype=complex
        )
        i_s = Ysf @ (u_fr - u_to)
        i_fr = Yf @ u_fr + i_s
        i_to = Yt @ u_to - i_s
        for c in range(line.code.n_conductors):
            add(line.from_bus, line.map_from[c], -i_fr[c])
            add(line.to_bus, line.map_to[c], -i_to[c])
    for sid in sorted(net.shunts):
        sh = net.shunts[sid]
        Y = sh.Y * bases.z(sh.bus)
        u = np.array([vm.U(sh.bus, l).value(x) for l in sh.map], dtype=complex)
        i = Y @ u
        for c in range(len(sh.map)):
            add(sh.bus, sh.map[c], -i[c])

    def device_current(bus, lbl, s):
        u = vm.U(bus, lbl).value(x)
        if abs(u) < floor_pu:
            return 0.0
        return np.conj(s / u)

    for rec in vm.legs:
        lid = rec["id"]
        sign = 1.0 if rec["kind"] == "generator" else -1.0
        if vm.has(("Sb", lid)):
            sbx = vm.c_value(("Sb", lid), x)
        else:
            # grounded-return simplification: interface power = element power
            p = vm.scalars[("P", lid)].value(x) if ("P", lid) in vm.scalars else None
            if p is None:
                continue
            q = vm.scalars[("Q", lid)].value(x)
            sbx = complex(p, q)
        add(rec["bus"], rec["t1"], sign * device_current(rec["bus"], rec["t1"], sbx))
        if vm.has(("Sby", lid)):
            sby = vm.c_value(("Sby", lid), x)
            add(rec["bus"], rec["t2"], sign * device_current(rec["bus"], rec["t2"], sby))
    roots = {}
    for rec in vm.legs:
        if vm.has(("Sbw", rec["root"])):
            roots[(rec["root"], rec["bus"], rec["t2"], rec["kind"])] = True
    for root, bus, t2, kind in sorted(roots):
        sbw = vm.c_value(("Sbw", root), x)
        sign = 1.0 if kind == "generator" else -1.0
        add(bus, t2, sign * device_current(bus, t2, sbw))
    for tid in sorted(net.transformers):
        tr = net.transformers[tid]
        for side, bus, cmap in (
            ("fr", tr.from_bus, tr.map_from),
            ("to", tr.to_bus, tr.map_to),
        ):
            for c in range(2):
                s = vm.c_value(("Str", tid, side, c), x)
                add(bus, cmap[c], -device_current(bus, cmap[c], s))
    return mismatch


def sequence_of_phasors(ua, ub, uc):
    seq = FORTESCUE_INV @ np.array([ua, ub, uc], dtype=complex)
    return seq[0], seq[1], seq[2]


def recover_postprocessing(sol: Solution, net, sys) -> Solution:
    """Fill ``sol.recovered`` with SI-unit quantities.

    Includes per-terminal voltage phasors, grounding currents at perfectly
    grounded terminals (from the dropped balance rows), element powers,
    and a per-bus report of phase-to-neutral magnitudes, unbalance factor
    and neutral shift.
    """
    vm = sys.meta["varmap"]
    bases = sys.meta["bases"]
    built_net = sys.meta["net"]
    x = sol.x
    voltages: dict[str, dict[str, complex]] = {}
    for bid in sorted(built_net.buses):
        vb = {}
        for t in built_net.buses[bid].terminals:
            key = ("U", bid, t.label)
            if vm.has(key):
                vb[t.label] = vm.c_value(key, x) * bases.u(bid)
        voltages[bid] = vb
    grounding = {}
    is_current_form = sys.meta.get("formulation") == "current"
    if is_current_form:
        for bid, lbl in vm.grounded:
            expr = vm.kcl_expression(bid, lbl)
            grounding[(bid, lbl)] = expr.value(x) * bases.i(bid)
    else:
        mismatch = reconstruct_currents(sol, sys)
        for bid, lbl in vm.grounded:
            grounding[(bid, lbl)] = mismatch.get((bid, lbl), 0.0) * bases.i(bid)
    powers = {}
    for rec in vm.legs:
        lid = rec["id"]
        if is_current_form:
            i = vm.c_value(("Ileg", lid), x)
            u1 = vm.c_value(("U", rec["bus"], rec["t1"]), x)
            u2 = vm.c_value(("U", rec["bus"], rec["t2"]), x)
            s = (u1 - u2) * np.conj(i) * bases.s_base
        else:
            if ("P", lid) in vm.scalars:
                s = complex(
                    vm.scalars[("P", lid)].value(x), vm.scalars[("Q", lid)].value(x)
                ) * bases.s_base
            else:
                s = complex(math.nan, math.nan)
        powers[lid] = s
    report = {}
    for bid, vb in voltages.items():
        ub = bases.u(bid)
        entry = {}
        neutral = vb.get(NEUTRAL, 0.0)
        pn = {
            p: abs(vb[p] - neutral) / ub for p in vb if p != NEUTRAL
        }
        if pn:
            entry["max_pn_pu"] = max(pn.values())
            entry["pn_pu"] = pn
        if NEUTRAL in vb:
            entry["neutral_shift_v"] = abs(vb[NEUTRAL])
        if all(p in vb for p in PHASES):
            uz, up, un = sequence_of_phasors(
                *(vb[p] - neutral for p in PHASES)
            )
            entry["vuf"] = abs(un) / abs(up) if abs(up) > 0 else math.inf
            entry["negseq_v"] = abs(un)
        report[bid] = entry
    sol.recovered = {
        "voltages": voltages,
        "grounding_currents": grounding,
        "element_powers": powers,
        "bus_report": report,
    }
    return sol
