"""Case synthesis, setpoint evaluation and the model/formulation matrix.

The evaluation methodology: optimize dispatch on a possibly simplified
network model (four-wire, Kron-reduced or balanced), then replay the
resulting generator setpoints through a four-wire power-flow simulation of
the unreduced network and measure what the simplified model hid (bound
violations, unbalance, neutral shift).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .acr import build_acr
from .formulation import FormulationConfig
from .ipm import ipm_solve
from .ivr import build_ivr
from .network import Generator, Network
from .reduce import balanced_equivalent, kron_reduce_network
from .solve import SolverOptions, recover_postprocessing, solve_pf

MODELS = ("fourwire", "kron", "balanced")
FORMS = ("ivr", "acr")

CSV_COLUMNS = (
    "instance",
    "form",
    "model",
    "status",
    "objective",
    "iterations",
    "solve_time",
    "eval_status",
    "max_pn_pu",
    "bound_pu",
    "violation_pct",
    "max_vuf",
    "max_neutral_shift_v",
)


@dataclass
class CaseSpec:
    """How to place and size the dispatchable generation of a case."""

    dg_every: int = 4
    dg_cost_ratio: float = 0.1
    bound_pu: float = 1.1
    size_resolution: float = 0.01
    capacity: float | None = None

    def __post_init__(self):
        if not 0.0 < self.dg_cost_ratio < 1.0:
            raise ValueError("dg_cost_ratio must lie in (0, 1)")


def _grid_cost(net: Network) -> float:
    src_buses = net.source_buses()
    costs = [g.cost for g in net.generators.values() if g.bus in src_buses and g.cost]
    if not costs:
        raise ValueError("network has no costed import generator at a source bus")
    return max(costs)


def _place_dgs(net: Network, spec: CaseSpec, capacity: float) -> Network:
    out = net.copy_shallow()
    out.generators = dict(net.generators)
    cost = _grid_cost(net) * spec.dg_cost_ratio
    load_ids = sorted(net.loads)
    for k, did in enumerate(load_ids, start=1):
        if k % spec.dg_every:
            continue
        host = net.loads[did]
        gid = f"dg{k // spec.dg_every}"
        out.generators[gid] = Generator(
            id=gid,
            bus=host.bus,
            connection="wye",
            P_min=[0.0],
            P_max=[capacity],
            Q_min=[0.0],
            Q_max=[capacity],
            map=(host.map[0], host.map[-1]),
            cost=cost,
        )
    return out


def model_of(net: Network, model: str) -> Network:
    if model == "fourwire":
        return net
    if model == "kron":
        return kron_reduce_network(net)
    if model == "balanced":
        return balanced_equivalent(net)
    raise ValueError(f"unknown network model {model!r}")


def _opf_cfg(spec_bound, base_cfg=None) -> FormulationConfig:
    cfg = base_cfg or FormulationConfig()
    return replace(cfg, mode="opf", pn_max_pu=spec_bound)


def _active_envelopes(sys, sol, atol=1e-5):
    vals = sys.constraint_values(sol.x)
    active = []
    for k, con in enumerate(sys.constraints):
        if con.sense != "le" or not con.tag or not str(con.tag[0]).startswith("env_"):
            continue
        if vals[k] >= -atol:
            active.append(con.tag)
    return active


def synthesize_case(net: Network, spec: CaseSpec, opts=None):
    """Place one single-phase DG at every n-th load (by ascending load id)
    and size the common capacity so the balanced decision model congests.

    The sizing is a doubling-then-bisection search for the smallest
    capacity (to the given relative resolution) at which the balanced-model
    dispatch leaves at least one voltage envelope active. Returns the
    four-wire network with DGs installed.
    """
    if not net.loads:
        raise ValueError("case synthesis needs at least one load")
    opts = opts or SolverOptions()
    if spec.capacity is not None:
        return _place_dgs(net, spec, spec.capacity)

    def congested(cap):
        candidate = _place_dgs(net, spec, cap)
        bal = balanced_equivalent(candidate)
        sys = build_ivr(bal, _opf_cfg(spec.bound_pu))
        sol = ipm_solve(sys, opts)
        if sol.status != "optimal":
            raise RuntimeError(
                f"balanced sizing OPF failed at capacity {cap:.1f} W: {sol.status}"
            )
        return bool(_active_envelopes(sys, sol))

    total_p = sum(float(d.P_nom.sum()) for d in net.loads.values())
    n_dgs = max(1, len(net.loads) // spec.dg_every)
    lo = 0.0
    hi = max(total_p / n_dgs, 1000.0)
    for _ in range(40):
        if congested(hi):
            break
        lo = hi
        hi *= 2.0
    else:
        raise RuntimeError("balanced model never congests; check bounds")
    while (hi - lo) > spec.size_resolution * hi:
        mid = 0.5 * (lo + hi)
        if congested(mid):
            hi = mid
        else:
            lo = mid
    return _place_dgs(net, spec, hi)


def extract_setpoints(sys, sol) -> dict:
    """Per-generator (P, Q) in SI watts/vars, keyed by original generator id.

    Slack generators at source buses are skipped. Setpoints from a balanced
    model are rescaled to full three-phase totals via the reduction map.
    """
    vm = sys.meta["varmap"]
    net = sys.meta["net"]
    s_base = sys.meta["bases"].s_base
    src = net.source_buses()
    per_root: dict[str, complex] = {}
    for rec in vm.legs:
        if rec["kind"] != "generator" or rec["bus"] in src:
            continue
        p = vm.scalars[("P", rec["id"])].value(sol.x)
        q = vm.scalars[("Q", rec["id"])].value(sol.x)
        per_root[rec["root"]] = per_root.get(rec["root"], 0.0) + complex(p, q)
    gen_map = net.meta.get("balanced_gen_map", {})
    out = {}
    for root, s in sorted(per_root.items()):
        scale = gen_map.get(root, {}).get("scale", 1.0)
        orig = gen_map.get(root, {}).get("orig", root)
        out[orig] = (s.real * s_base * scale, s.imag * s_base * scale)
    return out


def evaluate_setpoints(truth: Network, setpoints: dict, bound_pu: float,
                       opts=None) -> dict:
    """Replay setpoints through a four-wire PF and measure the violation.

    Returns a report fragment; a diverged evaluation is reported as
    ``eval_status = "pf-failed"`` with NaN metrics, never as zero violation.
    """
    opts = opts or SolverOptions()
    cfg = FormulationConfig.pf(gen_setpoints=dict(setpoints))
    sol, sys = solve_pf(truth, "ivr", cfg, opts)
    if sol.status != "optimal":
        return {
            "eval_status": "pf-failed",
            "max_pn_pu": math.nan,
            "bound_pu": bound_pu,
            "violation_pct": math.nan,
            "max_vuf": math.nan,
            "max_neutral_shift_v": math.nan,
        }
    sol = recover_postprocessing(sol, truth, sys)
    built = sys.meta["net"]
    bounded = {d.bus for d in built.loads.values()}
    bounded |= {g.bus for g in built.generators.values() if g.bus not in built.source_buses()}
    report = sol.recovered["bus_report"]
    max_pn = max(
        (report[b].get("max_pn_pu", 0.0) for b in bounded if b in report),
        default=0.0,
    )
    max_vuf = max(
        (report[b]["vuf"] for b in report if "vuf" in report[b] and math.isfinite(report[b]["vuf"])),
        default=0.0,
    )
    max_shift = max(
        (report[b].get("neutral_shift_v", 0.0) for b in report), default=0.0
    )
    return {
        "eval_status": "ok",
        "max_pn_pu": max_pn,
        "bound_pu": bound_pu,
        "violation_pct": max(0.0, (max_pn / bound_pu - 1.0)) * 100.0,
        "max_vuf": max_vuf,
        "max_neutral_shift_v": max_shift,
    }


@dataclass
class ViolationReport:
    rows: list = field(default_factory=list)
    columns: tuple = CSV_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(col)) for col in self.columns])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.rows, fh, indent=1, sort_keys=True, default=float)
            fh.write("\n")

    @property
    def any_failure(self):
        return any(r["status"] == "numerical-failure" for r in self.rows)

    def cell(self, instance, form, model):
        for r in self.rows:
            if (r["instance"], r["form"], r["model"]) == (instance, form, model):
                return r
        raise KeyError((instance, form, model))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.10g}"
    return str(v)


def run_matrix(
    instances: dict,
    forms=FORMS,
    models=MODELS,
    bound_pu: float = 1.1,
    opts: SolverOptions | None = None,
    cfg: FormulationConfig | None = None,
    timer=time.perf_counter,
) -> ViolationReport:
    """Full cross product of instances x forms x models.

    Each cell optimizes dispatch on the reduced model with the requested
    formulation, then evaluates the setpoints against the four-wire truth
    via Newton PF. Per-cell failures (iteration limit, numerical failure)
    are recorded in the row and never retried.
    """
    opts = opts or SolverOptions()
    report = ViolationReport()
    for name in sorted(instances):
        truth = instances[name]
        for form in forms:
            for model in models:
                row = {
                    "instance": name,
                    "form": form,
                    "model": model,
                    "status": "",
                    "objective": math.nan,
                    "iterations": 0,
                    "solve_time": 0.0,
                    "eval_status": "",
                    "max_pn_pu": math.nan,
                    "bound_pu": bound_pu,
                    "violation_pct": math.nan,
                    "max_vuf": math.nan,
                    "max_neutral_shift_v": math.nan,
                }
                try:
                    reduced = model_of(truth, model)
                    build = build_ivr if form == "ivr" else build_acr
                    sys = build(reduced, _opf_cfg(bound_pu, cfg))
                    t0 = timer()
                    sol = ipm_solve(sys, opts)
                    row["solve_time"] = timer() - t0
                    row["status"] = sol.status
                    row["iterations"] = sol.iterations
                    if sol.status == "optimal":
                        row["objective"] = sol.objective
                        setpoints = extract_setpoints(sys, sol)
                        row.update(
                            evaluate_setpoints(truth, setpoints, bound_pu, opts)
                        )
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    row["status"] = "numerical-failure"
                    row["eval_status"] = f"error: {exc}"
                report.rows.append(row)
    return report


def time_regression(report: ViolationReport, sizes: dict):
    """Least-squares linear fit of solve time against network size per model."""
    out = {}
    for model in {r["model"] for r in report.rows}:
        pts = [
            (sizes[r["instance"]], r["solve_time"])
            for r in report.rows
            if r["model"] == model and r["status"] == "optimal"
        ]
        if len(pts) >= 2:
            xs, ys = zip(*pts)
            slope, intercept = np.polyfit(xs, ys, 1)
            out[model] = (float(slope), float(intercept))
    return out


def objective_ordering_exceptions(report: ViolationReport):
    """Instances violating the soft ordering balanced <= kron <= four-wire.

    Less detailed models relax the physics and should reach lower cost;
    local optimality can break this, so callers log rather than fail.
    """
    bad = []
    for name in sorted({r["instance"] for r in report.rows}):
        try:
            fw = report.cell(name, "ivr", "fourwire")["objective"]
            kr = report.cell(name, "ivr", "kron")["objective"]
            ba = report.cell(name, "ivr", "balanced")["objective"]
        except KeyError:
            continue
        if not (ba <= kr + 1e-9 and kr <= fw + 1e-9):
            bad.append((name, ba, kr, fw))
    return bad
