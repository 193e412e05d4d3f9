"""Shared machinery for the current-voltage and power-voltage builders.

Both formulations share rectangular voltage variables, the per-unit
scaling, the no-load initialization and every voltage-only envelope
constraint; they differ only in the flow variables interfacing the
components. Systems are built entirely in per-unit: voltage bases
propagate from the sources across transformers, which keeps the quadratic
constraints well conditioned regardless of the SI magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (
    DELTA,
    NEUTRAL,
    PHASES,
    WYE,
    CURRENT,
    IMPEDANCE,
    POWER,
    Network,
    expand_composites,
    normalize,
    validate_network,
)
from .qcqp import EQ, LE, Affine, CAffine, ConstraintSystem
from .reduce import FORTESCUE_INV


class BuildError(ValueError):
    pass


@dataclass
class FormulationConfig:
    """Build options shared by both formulations.

    ``mode`` is "opf" (objective, inequality envelopes, generator boxes) or
    "pf" (square feasibility system: fixed injections, no inequalities).
    Envelope families are disabled when their field is None; when enabled
    they apply at buses carrying loads or generators, or everywhere with
    ``bound_all_buses``. Per-bus entries in ``Network.bounds`` override the
    defaults.
    """

    mode: str = "opf"
    series_current_only: bool = True
    s_base: float = 1.0e4
    eps_neutral_pu: float = 1.0e-4
    eliminate_groundings: bool = True
    pn_max_pu: float | None = None
    pn_min_pu: float | None = None
    pp_max_pu: float | None = None
    pp_min_pu: float | None = None
    vuf_max: float | None = None
    neutral_shift_max_v: float | None = None
    negseq_max_v: float | None = None
    current_ratings: bool = False
    power_ratings: bool = False
    bound_all_buses: bool = False
    gen_setpoints: dict = field(default_factory=dict)

    @classmethod
    def pf(cls, **kw):
        kw.setdefault("mode", "pf")
        return cls(**kw)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise BuildError(f"unknown formulation options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Bases:
    """Per-unit bases: one global power base, one voltage base per bus."""

    s_base: float
    u_base: dict[str, float]

    def u(self, bus):
        return self.u_base[bus]

    def i(self, bus):
        return self.s_base / self.u_base[bus]

    def z(self, bus):
        return self.u_base[bus] ** 2 / self.s_base


def _winding_kind(bus, labels):
    """'delta' when a winding spans two phase terminals, else 'wye'."""
    return "delta" if all(lbl in PHASES for lbl in labels) else "wye"


def assign_bases(net: Network, s_base: float) -> Bases:
    """Propagate voltage bases from the sources through lines and banks.

    Lines keep the base; an ideal transformer leg scales it by the winding
    ratio, with a sqrt(3) correction for delta-connected windings so the
    base stays a phase-to-neutral magnitude.
    """
    u: dict[str, float] = {}
    for sid in sorted(net.sources):
        src = net.sources[sid]
        mags = [abs(complex(v)) for v in src.phasors.values() if abs(complex(v)) > 1e-9]
        if not mags:
            raise BuildError(f"source {sid} fixes only zero phasors")
        u[src.bus] = float(np.mean(mags))
    if not u:
        raise BuildError("network has no voltage source to anchor the per-unit bases")
    edges = []
    for line in net.lines.values():
        edges.append((line.from_bus, line.to_bus, 1.0))
        edges.append((line.to_bus, line.from_bus, 1.0))
    for tr in net.transformers.values():
        k_fr = math.sqrt(3.0) if _winding_kind(tr.from_bus, tr.map_from) == "delta" else 1.0
        k_to = math.sqrt(3.0) if _winding_kind(tr.to_bus, tr.map_to) == "delta" else 1.0
        # winding voltages: k_fr * u_fr = n * k_to * u_to
        ratio = k_fr / (tr.turns_ratio * k_to)
        edges.append((tr.from_bus, tr.to_bus, ratio))
        edges.append((tr.to_bus, tr.from_bus, 1.0 / ratio))
    adj: dict[str, list] = {}
    for a, b, r in edges:
        adj.setdefault(a, []).append((b, r))
    frontier = sorted(u)
    while frontier:
        nxt = []
        for a in frontier:
            for b, r in adj.get(a, []):
                ub = u[a] * r
                if b in u:
                    if abs(u[b] - ub) > 1e-6 * max(u[b], ub):
                        raise BuildError(
                            f"inconsistent voltage bases at bus {b}: {u[b]} vs {ub}"
                        )
                else:
                    u[b] = ub
                    nxt.append(b)
        frontier = sorted(nxt)
    missing = sorted(set(net.buses) - set(u))
    if missing:
        raise BuildError(f"buses unreachable from any source: {missing}")
    return Bases(s_base=s_base, u_base=u)


def init_voltages(net: Network, bases: Bases | None = None, s_base: float = 1.0e4,
                  eps_neutral_pu: float = 1.0e-4):
    """No-load voltage profile in per-unit, keyed by (bus, terminal label).

    Source phasors propagate through lines unchanged and across ideal
    transformer legs with the vector-group angle shift; all flows are zero.
    Solved as a complex least-squares system, so floating degrees of
    freedom (for example the zero sequence behind a delta winding) take
    their minimum-norm value. Ungrounded neutral terminals then move to
    eps_neutral_pu + j0.
    """
    if bases is None:
        bases = assign_bases(net, s_base)
    keys = []
    for bid in sorted(net.buses):
        for t in net.buses[bid].terminals:
            keys.append((bid, t.label))
    pos = {k: i for i, k in enumerate(keys)}
    rows, rhs = [], []

    def row(entries, value=0.0 + 0.0j):
        r = np.zeros(len(keys), dtype=complex)
        for key, coef in entries:
            r[pos[key]] += coef
        rows.append(r)
        rhs.append(value)

    for sid in sorted(net.sources):
        src = net.sources[sid]
        ub = bases.u(src.bus)
        for lbl, ph in sorted(src.phasors.items()):
            row([((src.bus, lbl), 1.0)], complex(ph) / ub)
    for bid in sorted(net.buses):
        for t in net.buses[bid].terminals:
            if t.grounded:
                row([((bid, t.label), 1.0)], 0.0)
    for lid in sorted(net.lines):
        line = net.lines[lid]
        for c in range(line.code.n_conductors):
            row(
                [
                    ((line.from_bus, line.map_from[c]), 1.0),
                    ((line.to_bus, line.map_to[c]), -1.0),
                ]
            )
    for tid in sorted(net.transformers):
        tr = net.transformers[tid]
        n_eff = tr.turns_ratio * bases.u(tr.to_bus) / bases.u(tr.from_bus)
        row(
            [
                ((tr.from_bus, tr.map_from[0]), 1.0),
                ((tr.from_bus, tr.map_from[1]), -1.0),
                ((tr.to_bus, tr.map_to[0]), -n_eff),
                ((tr.to_bus, tr.map_to[1]), n_eff),
            ]
        )
    A = np.vstack(rows)
    b = np.asarray(rhs, dtype=complex)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    out = {}
    for k, i in pos.items():
        out[k] = complex(sol[i])
    for bid in sorted(net.buses):
        for t in net.buses[bid].terminals:
            if t.label == NEUTRAL and not t.grounded and abs(out[(bid, t.label)]) < 1e-9:
                fixed = any(
                    t.label in net.sources[sid].phasors and net.sources[sid].bus == bid
                    for sid in net.sources
                )
                if not fixed:
                    out[(bid, t.label)] = complex(eps_neutral_pu, 0.0)
    return out


class VariableMap:
    """Bidirectional map between physical quantities and system variables.

    Complex quantities live in ``c`` as CAffine expressions; quantities
    backed one-to-one by a variable also appear in ``index_of`` (scalar
    parts keyed with a trailing "re"/"im" or "P"/"Q"). Derived quantities
    (substituted currents, constants) are plain affine expressions.
    """

    def __init__(self, sys: ConstraintSystem, bases: Bases):
        self.sys = sys
        self.bases = bases
        self.c: dict[tuple, CAffine] = {}
        self.scalars: dict[tuple, Affine] = {}
        self.index_of: dict[tuple, int] = {}
        self.kcl: dict[tuple, list[CAffine]] = {}
        self.kcl_emitted: set[tuple] = set()
        self.grounded: list[tuple] = []
        self.legs: list[dict] = []
        self.aux_recipes: list[tuple] = []
        self.source_buses: set[str] = set()

    # -- variable creation --------------------------------------------------

    def scalar_var(self, key, kind, lower=-math.inf, upper=math.inf, init=0.0):
        name = ".".join(str(p) for p in key)
        idx = self.sys.new_var(kind, name, lower, upper, init)
        self.index_of[key] = idx
        aff = Affine.variable(idx)
        self.scalars[key] = aff
        return aff

    def cvar(self, key, kind, init=0.0 + 0.0j):
        init = complex(init)
        re = self.scalar_var(key + ("re",), kind, init=init.real)
        im = self.scalar_var(key + ("im",), kind, init=init.imag)
        ca = CAffine(re, im)
        self.c[key] = ca
        return ca

    def define_c(self, key, expr: CAffine):
        self.c[key] = expr
        return expr

    def define_scalar(self, key, expr: Affine):
        self.scalars[key] = expr
        return expr

    # -- lookups --------------------------------------------------------------

    def U(self, bus, label) -> CAffine:
        return self.c[("U", bus, label)]

    def has(self, key):
        return key in self.c

    def c_value(self, key, x) -> complex:
        return self.c[key].value(x)

    def scalar_value(self, key, x) -> float:
        return self.scalars[key].value(x)

    def voltage_si(self, bus, label, x) -> complex:
        return self.U(bus, label).value(x) * self.bases.u(bus)

    # -- KCL bookkeeping ------------------------------------------------------

    def kcl_add(self, bus, label, contribution: CAffine):
        self.kcl.setdefault((bus, label), []).append(contribution)

    def kcl_expression(self, bus, label) -> CAffine:
        total = CAffine.constant(0.0)
        for contrib in self.kcl.get((bus, label), []):
            total = total + contrib
        return total

    # -- remapping after variable elimination ---------------------------------

    def remap(self, index_map):
        """Rewrite all stored expressions after ``fix_variables``.

        Eliminated variables are assumed to have been fixed to zero (the
        grounding case), so their terms simply vanish.
        """

        def remap_affine(aff):
            a = {}
            for i, v in aff.a.items():
                j = int(index_map[i])
                if j >= 0:
                    a[j] = a.get(j, 0.0) + v
            return Affine(a, aff.b)

        for key, aff in list(self.scalars.items()):
            self.scalars[key] = remap_affine(aff)
        for key, ca in list(self.c.items()):
            self.c[key] = CAffine(remap_affine(ca.re), remap_affine(ca.im))
        for key, idx in list(self.index_of.items()):
            j = int(index_map[idx])
            if j < 0:
                del self.index_of[key]
            else:
                self.index_of[key] = j
        for key, contribs in list(self.kcl.items()):
            self.kcl[key] = [
                CAffine(remap_affine(c.re), remap_affine(c.im)) for c in contribs
            ]


@dataclass
class LegData:
    """One elementary two-terminal load or generator after expansion."""

    kind: str
    comp: object
    t1: str
    t2: str
    root: str
    group: tuple | None

    @property
    def id(self):
        return self.comp.id

    @property
    def bus(self):
        return self.comp.bus


def prepare_network(net: Network):
    """Normalize, expand and validate; raise BuildError on diagnostics."""
    net = expand_composites(normalize(net))
    diags = validate_network(net)
    if diags:
        raise BuildError(
            "network invalid: " + "; ".join(str(d) for d in diags[:10])
        )
    return net


def live_terminals(net: Network) -> set[tuple]:
    """Terminals referenced by any component, source or grounding.

    Declared-but-unused terminals get no voltage variables at all, mirroring
    how absent terminals are simply never defined.
    """
    live = set()
    for line in net.lines.values():
        live.update((line.from_bus, lbl) for lbl in line.map_from)
        live.update((line.to_bus, lbl) for lbl in line.map_to)
    for tr in net.transformers.values():
        live.update((tr.from_bus, lbl) for lbl in tr.map_from)
        live.update((tr.to_bus, lbl) for lbl in tr.map_to)
    for comp in list(net.loads.values()) + list(net.generators.values()):
        live.update((comp.bus, lbl) for lbl in comp.map)
    for sh in net.shunts.values():
        live.update((sh.bus, lbl) for lbl in sh.map)
    for src in net.sources.values():
        live.update((src.bus, lbl) for lbl in src.phasors)
    for bus in net.buses.values():
        for t in bus.terminals:
            if t.grounded:
                live.add((bus.id, t.label))
    return live


class FormulationBuilder:
    """Common state and voltage-side emitters for both formulations."""

    flow = "none"

    def __init__(self, net: Network, cfg: FormulationConfig):
        self.cfg = cfg
        self.net = prepare_network(net)
        self.bases = assign_bases(self.net, cfg.s_base)
        self.sys = ConstraintSystem()
        self.vm = VariableMap(self.sys, self.bases)
        self.vm.source_buses = set(self.net.source_buses())
        self.live = live_terminals(self.net)
        self.init = init_voltages(
            self.net, self.bases, eps_neutral_pu=cfg.eps_neutral_pu
        )
        self.sys.meta["varmap"] = self.vm
        self.sys.meta["cfg"] = cfg
        self.sys.meta["bases"] = self.bases
        self.sys.meta["formulation"] = self.flow
        self.sys.meta["net"] = self.net

    # -- voltage variables ----------------------------------------------------

    def make_voltage_variables(self):
        net, cfg, vm = self.net, self.cfg, self.vm
        fixed = {}
        for sid in sorted(net.sources):
            src = net.sources[sid]
            for lbl, ph in src.phasors.items():
                fixed[(src.bus, lbl)] = complex(ph) / self.bases.u(src.bus)
        for bid in sorted(net.buses):
            for t in net.buses[bid].terminals:
                if (bid, t.label) not in self.live:
                    continue
                key = ("U", bid, t.label)
                if t.grounded:
                    if abs(fixed.get((bid, t.label), 0.0)) > 1e-12:
                        raise BuildError(
                            f"bus {bid} terminal {t.label}: grounded but source fixes "
                            f"a nonzero phasor"
                        )
                    vm.grounded.append((bid, t.label))
                    if cfg.eliminate_groundings:
                        vm.define_c(key, CAffine.constant(0.0))
                    else:
                        vm.cvar(key, "voltage", init=0.0)
                elif (bid, t.label) in fixed:
                    vm.define_c(key, CAffine.constant(fixed[(bid, t.label)]))
                else:
                    vm.cvar(key, "voltage", init=self.init[(bid, t.label)])

    # -- component legs ---------------------------------------------------------

    def collect_legs(self):
        legs = []
        for did in sorted(self.net.loads):
            load = self.net.loads[did]
            if not load.is_elementary:
                raise BuildError(f"load {did} not elementary after expansion")
            legs.append(
                LegData(
                    kind="load",
                    comp=load,
                    t1=load.map[0],
                    t2=load.map[1],
                    root=load.group[0] if load.group else load.id,
                    group=load.group,
                )
            )
        for gid in sorted(self.net.generators):
            gen = self.net.generators[gid]
            if not gen.is_elementary:
                raise BuildError(f"generator {gid} not elementary after expansion")
            legs.append(
                LegData(
                    kind="generator",
                    comp=gen,
                    t1=gen.map[0],
                    t2=gen.map[1],
                    root=gen.group[0] if gen.group else gen.id,
                    group=gen.group,
                )
            )
        self.vm.legs = [
            {
                "kind": leg.kind,
                "id": leg.id,
                "bus": leg.bus,
                "t1": leg.t1,
                "t2": leg.t2,
                "root": leg.root,
                "model": getattr(leg.comp, "model", None),
            }
            for leg in legs
        ]
        return legs

    def leg_diff(self, leg) -> CAffine:
        return self.vm.U(leg.bus, leg.t1) - self.vm.U(leg.bus, leg.t2)

    def leg_diff_init(self, leg) -> complex:
        u1 = self.init[(leg.bus, leg.t1)]
        u2 = self.init[(leg.bus, leg.t2)]
        return u1 - u2

    def is_slack(self, leg) -> bool:
        return leg.kind == "generator" and leg.bus in self.vm.source_buses

    def gen_setpoint_pu(self, leg):
        """Fixed (P, Q) in pu for a generator leg in PF mode, or None."""
        sp = self.cfg.gen_setpoints.get(leg.root)
        if sp is None:
            return None
        n = self._root_leg_count(leg.root)
        return (sp[0] / n / self.bases.s_base, sp[1] / n / self.bases.s_base)

    def _root_leg_count(self, root):
        n = sum(
            1
            for g in self.net.generators.values()
            if (g.group[0] if g.group else g.id) == root
        )
        return max(n, 1)

    # -- nominal quantities in pu ---------------------------------------------

    def load_nominals(self, leg):
        comp = leg.comp
        sb = self.bases.s_base
        ub = self.bases.u(leg.bus)
        p_pu = float(comp.P_nom[0]) / sb
        q_pu = float(comp.Q_nom[0]) / sb
        out = {"p": p_pu, "q": q_pu}
        if comp.model == IMPEDANCE:
            g_si = float(comp.P_nom[0]) / comp.U_nom**2
            b_si = -float(comp.Q_nom[0]) / comp.U_nom**2
            zb = self.bases.z(leg.bus)
            out["g_pu"] = g_si * zb
            out["b_pu"] = b_si * zb
        if comp.model == CURRENT:
            out["c_p"] = p_pu * ub / comp.U_nom
            out["c_q"] = q_pu * ub / comp.U_nom
        return out

    # -- KCL ---------------------------------------------------------------------

    def emit_kcl(self, family):
        """One complex balance row per terminal carrying flow contributions.

        Perfectly grounded terminals are skipped (the grounding current is
        recovered in post-processing), unless groundings are kept so that
        ``eliminate_grounded_terminals`` can reproduce the reduced build.
        """
        vm, sys = self.vm, self.sys
        grounded = set(vm.grounded)
        for key in sorted(vm.kcl):
            bid, label = key
            if self.cfg.eliminate_groundings and key in grounded:
                continue
            expr = vm.kcl_expression(bid, label)
            sys.add(expr.re, EQ, (family, bid, label, "re"))
            sys.add(expr.im, EQ, (family, bid, label, "im"))
            vm.kcl_emitted.add(key)

    # -- voltage envelopes ---------------------------------------------------------

    def bus_bound_spec(self, bid):
        cfg = self.cfg
        attached = any(d.bus == bid for d in self.net.loads.values()) or any(
            g.bus == bid for g in self.net.generators.values()
        )
        spec = {}
        if attached or cfg.bound_all_buses:
            for key in (
                "pn_max_pu",
                "pn_min_pu",
                "pp_max_pu",
                "pp_min_pu",
                "vuf_max",
                "neutral_shift_max_v",
                "negseq_max_v",
            ):
                val = getattr(cfg, key)
                if val is not None:
                    spec[key] = val
        spec.update(self.net.bounds.get(bid, {}))
        return spec

    def _phase_labels(self, bid):
        labels = [t.label for t in self.net.buses[bid].terminals]
        return [l for l in labels if l != NEUTRAL and self.vm.has(("U", bid, l))]

    def pn_diff(self, bid, phase) -> CAffine:
        if self.vm.has(("U", bid, NEUTRAL)):
            return self.vm.U(bid, phase) - self.vm.U(bid, NEUTRAL)
        return self.vm.U(bid, phase)

    def emit_voltage_envelopes(self):
        """Magnitude, unbalance and sequence bounds; voltage-only, shared."""
        if self.cfg.mode == "pf":
            return
        sys, vm = self.sys, self.vm
        for bid in sorted(self.net.buses):
            spec = self.bus_bound_spec(bid)
            if not spec:
                continue
            if bid in vm.source_buses:
                continue
            phases = self._phase_labels(bid)
            if "pn_max_pu" in spec or "pn_min_pu" in spec:
                for p in phases:
                    d = self.pn_diff(bid, p)
                    mag2 = d.cmul(d.conj())[0]
                    if "pn_max_pu" in spec:
                        sys.add(mag2 - spec["pn_max_pu"] ** 2, LE, ("env_pn_ub", bid, p))
                    if "pn_min_pu" in spec:
                        sys.add(
                            (-mag2) + spec["pn_min_pu"] ** 2, LE, ("env_pn_lb", bid, p)
                        )
            bus = self.net.buses[bid]
            if ("pp_max_pu" in spec or "pp_min_pu" in spec) and len(phases) >= 2:
                pairs = [
                    (phases[k], phases[(k + 1) % len(phases)])
                    for k in range(len(phases))
                    if len(phases) > 2 or k == 0
                ]
                for pa, pb in pairs:
                    d = vm.U(bid, pa) - vm.U(bid, pb)
                    mag2 = d.cmul(d.conj())[0]
                    if "pp_max_pu" in spec:
                        sys.add(
                            mag2 - 3.0 * spec["pp_max_pu"] ** 2,
                            LE,
                            ("env_pp_ub", bid, pa, pb),
                        )
                    if "pp_min_pu" in spec:
                        sys.add(
                            (-mag2) + 3.0 * spec["pp_min_pu"] ** 2,
                            LE,
                            ("env_pp_lb", bid, pa, pb),
                        )
            if "neutral_shift_max_v" in spec and vm.has(("U", bid, NEUTRAL)):
                un = vm.U(bid, NEUTRAL)
                if not un.is_constant:
                    lim = spec["neutral_shift_max_v"] / self.bases.u(bid)
                    mag2 = un.cmul(un.conj())[0]
                    sys.add(mag2 - lim**2, LE, ("env_nshift", bid))
            needs_seq = "vuf_max" in spec or "negseq_max_v" in spec
            if needs_seq and all(vm.has(("U", bid, p)) for p in PHASES):
                useq = self.ensure_sequence_vars(bid)
                if "vuf_max" in spec:
                    un2 = useq["n"].cmul(useq["n"].conj())[0]
                    up2 = useq["p"].cmul(useq["p"].conj())[0]
                    sys.add(
                        un2 - up2.scaled(spec["vuf_max"] ** 2), LE, ("env_vuf", bid)
                    )
                if "negseq_max_v" in spec:
                    lim = spec["negseq_max_v"] / self.bases.u(bid)
                    un2 = useq["n"].cmul(useq["n"].conj())[0]
                    sys.add(un2 - lim**2, LE, ("env_negseq", bid))

    def ensure_sequence_vars(self, bid):
        """Zero/positive/negative sequence phasors of the pn voltages."""
        vm, sys = self.vm, self.sys
        out = {}
        diffs = [self.pn_diff(bid, p) for p in PHASES]
        has_n = vm.has(("U", bid, NEUTRAL))
        inits = [
            self.init[(bid, p)] - (self.init[(bid, NEUTRAL)] if has_n else 0.0)
            for p in PHASES
        ]
        for row, seq in ((0, "z"), (1, "p"), (2, "n")):
            key = ("Useq", bid, seq)
            if vm.has(key):
                out[seq] = vm.c[key]
                continue
            w = FORTESCUE_INV[row]
            init = sum(complex(w[k]) * inits[k] for k in range(3))
            var = vm.cvar(key, "sequence", init=init)
            expr = CAffine.constant(0.0)
            for k in range(3):
                expr = expr + diffs[k].rotated(complex(w[k]))
            delta = var - expr
            sys.add(delta.re, EQ, ("seqdef", bid, seq, "re"))
            sys.add(delta.im, EQ, ("seqdef", bid, seq, "im"))
            out[seq] = var
        return out

    # -- finishing -----------------------------------------------------------------

    def finish_pf_checks(self):
        if self.cfg.mode != "pf":
            return
        if self.sys.n_ineq:
            raise BuildError("PF build produced inequality constraints")
        n_free = self.sys.n_vars
        if self.sys.n_eq != n_free:
            raise BuildError(
                f"PF system not square: {self.sys.n_eq} equations, {n_free} variables"
            )
