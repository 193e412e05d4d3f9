"""Power-voltage rectangular formulation.

Voltage variables, bases and envelopes are shared with the current-voltage
form; the flow variable interfacing the components is complex power. The
current balance at each terminal is lifted to a power balance by
multiplying its conjugate with the terminal voltage, which makes the form a
relaxation: at zero terminal voltage a power balance holds regardless of
the current mismatch.

Component reformulations used here (derived by multiplying the
current-variable relations with the appropriate conjugated voltages):

* line / shunt flows are quadratic voltage expressions,
  ``S = U (*) conj(Y U + Ys (U - U'))``;
* a two-terminal device with internal balance ``Ix + Iy = 0`` satisfies
  ``U_y Sx + U_x Sy = 0`` with interface powers ``S = U conj(I)``;
* an ideal transformer with ``n I_fr + I_to = 0`` satisfies
  ``n U_to_x S_fr_x + U_fr_x S_to_x = 0``;
* a wye-connected group of m legs sharing a live return terminal satisfies
  ``sum_c (prod_{c' != c} U_c') S_c = 0`` over its m+1 conductors, a degree
  m+1 polynomial lowered to quadratics by materialising pairwise products
  ``z <- x y`` left to right (cached, fixed order).

When the return terminal is grounded the interface power equals the
element power and none of the lifted machinery is emitted.
"""

from __future__ import annotations

import math

import numpy as np

from .formulation import (
    BuildError,
    FormulationBuilder,
    FormulationConfig,
    live_terminals,
    prepare_network,
)
from .network import CURRENT, IMPEDANCE, NEUTRAL, POWER, WYE, Network
from .qcqp import EQ, LE, Affine, CAffine
from .reduce import FORTESCUE_INV

_INF = math.inf


class AcrBuilder(FormulationBuilder):
    flow = "power"

    def __init__(self, net, cfg):
        super().__init__(net, cfg)
        self._cinit: dict[tuple, complex] = {}
        self._prod_cache: dict[tuple, tuple] = {}
        self._aux_count = 0

    def build(self):
        self.make_voltage_variables()
        for bid in sorted(self.net.buses):
            for t in self.net.buses[bid].terminals:
                key = ("U", bid, t.label)
                if self.vm.has(key):
                    ca = self.vm.c[key]
                    if ca.is_constant:
                        self._cinit[key] = complex(ca.re.b, ca.im.b)
                    else:
                        self._cinit[key] = self.init[(bid, t.label)]
        for lid in sorted(self.net.lines):
            self.emit_line_power(self.net.lines[lid])
        for tid in sorted(self.net.transformers):
            self.emit_transformer_power(self.net.transformers[tid])
        self.emit_element_groups()
        for sid in sorted(self.net.shunts):
            self.emit_shunt_power(self.net.shunts[sid])
        self.emit_kcl("kcl_power")
        self.emit_voltage_envelopes()
        self.emit_flow_envelopes()
        self.finish_pf_checks()
        return self.sys

    # -- lines / shunts ---------------------------------------------------------

    def emit_line_power(self, line):
        vm, sys = self.vm, self.sys
        zb = self.bases.z(line.from_bus)
        zb_t = self.bases.z(line.to_bus)
        if abs(zb - zb_t) > 1e-9 * max(zb, zb_t):
            raise BuildError(f"line {line.id} spans different voltage bases")
        n = line.code.n_conductors
        Z = line.z_total() / zb
        try:
            Ys = np.linalg.inv(Z)
        except np.linalg.LinAlgError as exc:
            raise BuildError(f"line {line.id}: singular series impedance") from exc
        Yf = line.y_fr_total() * zb
        Yt = line.y_to_total() * zb
        u_fr = [vm.U(line.from_bus, lbl) for lbl in line.map_from]
        u_to = [vm.U(line.to_bus, lbl) for lbl in line.map_to]
        for side, u_own, u_other, Ysh, bus, cmap in (
            ("fr", u_fr, u_to, Yf, line.from_bus, line.map_from),
            ("to", u_to, u_fr, Yt, line.to_bus, line.map_to),
        ):
            for c in range(n):
                s = vm.cvar(("Sl", line.id, side, c), "power")
                inner = CAffine.constant(0.0)
                for k in range(n):
                    if Ysh[c, k] != 0:
                        inner = inner + u_own[k].rotated(Ysh[c, k])
                    if Ys[c, k] != 0:
                        inner = inner + (u_own[k] - u_other[k]).rotated(Ys[c, k])
                p_quad, q_quad = u_own[c].cmul(inner.conj())
                sys.add(p_quad - s.re, EQ, ("line_power", line.id, side, c, "re"))
                sys.add(q_quad - s.im, EQ, ("line_power", line.id, side, c, "im"))
                vm.kcl_add(bus, cmap[c], -s)

    def emit_shunt_power(self, sh):
        vm, sys = self.vm, self.sys
        Y = sh.Y * self.bases.z(sh.bus)
        m = len(sh.map)
        u = [vm.U(sh.bus, lbl) for lbl in sh.map]
        for c in range(m):
            s = vm.cvar(("Ssh", sh.id, c), "power")
            inner = CAffine.constant(0.0)
            for k in range(m):
                if Y[c, k] != 0:
                    inner = inner + u[k].rotated(Y[c, k])
            p_quad, q_quad = u[c].cmul(inner.conj())
            sys.add(p_quad - s.re, EQ, ("shunt_power", sh.id, c, "re"))
            sys.add(q_quad - s.im, EQ, ("shunt_power", sh.id, c, "im"))
            vm.kcl_add(sh.bus, sh.map[c], -s)

    # -- transformer ---------------------------------------------------------------

    def emit_transformer_power(self, tr):
        vm, sys = self.vm, self.sys
        n_eff = tr.turns_ratio * self.bases.u(tr.to_bus) / self.bases.u(tr.from_bus)
        u_fa = vm.U(tr.from_bus, tr.map_from[0])
        u_fb = vm.U(tr.from_bus, tr.map_from[1])
        u_ta = vm.U(tr.to_bus, tr.map_to[0])
        u_tb = vm.U(tr.to_bus, tr.map_to[1])
        s = {
            (side, c): vm.cvar(("Str", tr.id, side, c), "power")
            for side in ("fr", "to")
            for c in range(2)
        }
        # lift: U_b * S_x + U_a * S_y = 0 per side (complex product, no conj)
        for side, ua, ub in (("fr", u_fa, u_fb), ("to", u_ta, u_tb)):
            pr, pi = ub.cmul(s[(side, 0)])
            qr, qi = ua.cmul(s[(side, 1)])
            sys.add(pr + qr, EQ, ("tr_lift", tr.id, side, "re"))
            sys.add(pi + qi, EQ, ("tr_lift", tr.id, side, "im"))
        # power transfer: n_eff * U_ta * S_fr_x + U_fa * S_to_x = 0
        ar, ai = u_ta.cmul(s[("fr", 0)])
        br, bi = u_fa.cmul(s[("to", 0)])
        sys.add(ar.scaled(n_eff) + br, EQ, ("tr_power", tr.id, "re"))
        sys.add(ai.scaled(n_eff) + bi, EQ, ("tr_power", tr.id, "im"))
        volt = (u_fa - u_fb) - (u_ta - u_tb).rotated(n_eff)
        sys.add(volt.re, EQ, ("tr_volt", tr.id, "re"))
        sys.add(volt.im, EQ, ("tr_volt", tr.id, "im"))
        for side, bus, cmap in (
            ("fr", tr.from_bus, tr.map_from),
            ("to", tr.to_bus, tr.map_to),
        ):
            for c in range(2):
                vm.kcl_add(bus, cmap[c], -s[(side, c)])

    # -- loads and generators ---------------------------------------------------------

    def _return_is_zero(self, leg):
        u2 = self.vm.U(leg.bus, leg.t2)
        return u2.is_constant and abs(complex(u2.re.b, u2.im.b)) < 1e-12

    def emit_element_groups(self):
        legs = self.collect_legs()
        groups: dict[tuple, list] = {}
        singles = []
        for leg in legs:
            if (
                leg.group is not None
                and leg.group[1] == WYE
                and not self._return_is_zero(leg)
            ):
                groups.setdefault((leg.kind, leg.root, leg.bus, leg.t2), []).append(leg)
            else:
                singles.append(leg)
        for leg in singles:
            self.emit_element_leg(leg)
        for key in sorted(groups):
            self.emit_wye_group(key, groups[key])

    def _element_power_expr(self, leg):
        """CAffine for the element power S_d (or S_g), emitting model rows.

        Loads return drawn power; generators return injected power with
        bounds, objective and optional apparent-power cap.
        """
        vm, sys, cfg = self.vm, self.sys, self.cfg
        u_diff = self.leg_diff(leg)
        u0 = self.leg_diff_init(leg)
        if leg.kind == "generator":
            comp = leg.comp
            sb = self.bases.s_base
            setpoint = self.gen_setpoint_pu(leg)
            slack = self.is_slack(leg)
            if cfg.mode == "pf" and not slack and setpoint is None:
                raise BuildError(
                    f"generator {leg.id}: PF build needs a setpoint "
                    f"(or a source at its bus)"
                )
            if setpoint is not None and not slack:
                p_expr = Affine.constant(setpoint[0])
                q_expr = Affine.constant(setpoint[1])
            else:
                pmin, pmax = float(comp.P_min[0]) / sb, float(comp.P_max[0]) / sb
                qmin, qmax = float(comp.Q_min[0]) / sb, float(comp.Q_max[0]) / sb
                if cfg.mode == "pf" or slack:
                    pmin = qmin = -_INF
                    pmax = qmax = _INF
                p_expr = (
                    Affine.constant(pmin)
                    if pmax - pmin < 1e-15
                    else vm.scalar_var(("P", leg.id), "power", pmin, pmax,
                                       init=min(max(0.0, pmin), pmax))
                )
                q_expr = (
                    Affine.constant(qmin)
                    if qmax - qmin < 1e-15
                    else vm.scalar_var(("Q", leg.id), "power", qmin, qmax,
                                       init=min(max(0.0, qmin), qmax))
                )
            vm.define_scalar(("P", leg.id), p_expr)
            vm.define_scalar(("Q", leg.id), q_expr)
            if cfg.mode != "pf":
                if comp.cost:
                    for idx, coef in p_expr.a.items():
                        sys.add_objective_term(idx, comp.cost * sb * coef)
                    sys.objective_const += comp.cost * sb * p_expr.b
                if comp.S_max is not None and not slack:
                    smax = float(comp.S_max[0]) / sb
                    sys.add(
                        p_expr.times(p_expr) + q_expr.times(q_expr) - smax**2,
                        LE,
                        ("gen_smax", leg.id),
                    )
            return CAffine(p_expr, q_expr), complex(0.0, 0.0)
        nom = self.load_nominals(leg)
        model = leg.comp.model
        if model == POWER:
            expr = CAffine.constant(complex(nom["p"], nom["q"]))
            return expr, complex(nom["p"], nom["q"])
        mag2 = u_diff.cmul(u_diff.conj())[0]
        if model == IMPEDANCE:
            p0 = nom["g_pu"] * abs(u0) ** 2
            q0 = -nom["b_pu"] * abs(u0) ** 2
            p = vm.scalar_var(("P", leg.id), "power", init=p0)
            q = vm.scalar_var(("Q", leg.id), "power", init=q0)
            sys.add(mag2.scaled(nom["g_pu"]) - p, EQ, ("load_z", leg.id, "P"))
            sys.add(mag2.scaled(-nom["b_pu"]) - q, EQ, ("load_z", leg.id, "Q"))
            return CAffine(p, q), complex(p0, q0)
        if model == CURRENT:
            p = vm.scalar_var(("P", leg.id), "power", init=nom["p"])
            q = vm.scalar_var(("Q", leg.id), "power", init=nom["q"])
            umsqr = vm.scalar_var(("Umsqr", leg.id), "aux", init=abs(u0) ** 2)
            sys.add(mag2 - umsqr, EQ, ("load_umsqr", leg.id))
            sys.add(
                p.times(p) - Affine({}, nom["c_p"] ** 2).times(umsqr),
                EQ,
                ("load_i", leg.id, "P"),
            )
            sys.add(
                q.times(q) - Affine({}, nom["c_q"] ** 2).times(umsqr),
                EQ,
                ("load_i", leg.id, "Q"),
            )
            if cfg.mode != "pf":
                if nom["p"] != 0.0:
                    sys.add(p.scaled(-math.copysign(1.0, nom["p"])), LE,
                            ("load_sign", leg.id, "P"))
                if nom["q"] != 0.0:
                    sys.add(q.scaled(-math.copysign(1.0, nom["q"])), LE,
                            ("load_sign", leg.id, "Q"))
            return CAffine(p, q), complex(nom["p"], nom["q"])
        raise BuildError(f"load {leg.id}: no emitter for model {model!r}")

    def _kcl_sign(self, leg):
        return 1.0 if leg.kind == "generator" else -1.0

    def emit_element_leg(self, leg):
        """Grounded-return simplification or the two-terminal lifted form."""
        vm, sys = self.vm, self.sys
        s_elem, s0 = self._element_power_expr(leg)
        sign = self._kcl_sign(leg)
        if self._return_is_zero(leg):
            # interface power equals element power; the return terminal
            # contributes exactly zero power and needs no entry
            contrib = s_elem if sign > 0 else -s_elem
            vm.kcl_add(leg.bus, leg.t1, contrib)
            return
        u1 = vm.U(leg.bus, leg.t1)
        u2 = vm.U(leg.bus, leg.t2)
        sb_x = vm.cvar(("Sb", leg.id), "power", init=s0)
        sb_y = vm.cvar(("Sby", leg.id), "power", init=0.0)
        lr, li = u2.cmul(sb_x)
        mr, mi = u1.cmul(sb_y)
        sys.add(lr + mr, EQ, ("lift", leg.id, "re"))
        sys.add(li + mi, EQ, ("lift", leg.id, "im"))
        tr_l = s_elem.cmul(u1)
        tr_r = sb_x.cmul(u1 - u2)
        sys.add(tr_l[0] - tr_r[0], EQ, ("transfer", leg.id, "re"))
        sys.add(tr_l[1] - tr_r[1], EQ, ("transfer", leg.id, "im"))
        vm.kcl_add(leg.bus, leg.t1, sb_x if sign > 0 else -sb_x)
        vm.kcl_add(leg.bus, leg.t2, sb_y if sign > 0 else -sb_y)

    def emit_wye_group(self, key, legs):
        """Composed lifted balance over the group conductors.

        The internal current balance of an m-leg wye group with a live
        return is degree m+1 in the voltages once lifted; pairwise products
        are materialised as auxiliary variables in a fixed order.
        """
        kind, root, bus, t2 = key
        vm, sys = self.vm, self.sys
        sign = 1.0 if kind == "generator" else -1.0
        legs = sorted(legs, key=lambda l: l.id)
        u_n_key = ("U", bus, t2)
        sb = {}
        s_elem = {}
        for leg in legs:
            expr, s0 = self._element_power_expr(leg)
            s_elem[leg.id] = expr
            sb[leg.id] = vm.cvar(("Sb", leg.id), "power", init=s0)
            u1 = vm.U(bus, leg.t1)
            u2 = vm.U(bus, t2)
            tr_l = expr.cmul(u1)
            tr_r = sb[leg.id].cmul(u1 - u2)
            sys.add(tr_l[0] - tr_r[0], EQ, ("transfer", leg.id, "re"))
            sys.add(tr_l[1] - tr_r[1], EQ, ("transfer", leg.id, "im"))
            vm.kcl_add(bus, leg.t1, sb[leg.id] if sign > 0 else -sb[leg.id])
        sbw = vm.cvar(("Sbw", root), "power", init=0.0)
        vm.kcl_add(bus, t2, sbw if sign > 0 else -sbw)
        conductors = [(("U", bus, leg.t1), sb[leg.id]) for leg in legs]
        conductors.append((u_n_key, sbw))
        total = None
        for c, (_, s_c) in enumerate(conductors):
            other_keys = [ck for k, (ck, _) in enumerate(conductors) if k != c]
            prod_key, prod_expr = self._voltage_product(other_keys)
            pr, pi = prod_expr.cmul(s_c)
            term = CAffineQuad(pr, pi)
            total = term if total is None else total + term
        sys.add(total.re, EQ, ("lift_group", root, "re"))
        sys.add(total.im, EQ, ("lift_group", root, "im"))

    def _voltage_product(self, keys):
        """Product of voltage quantities, materialised pairwise left to right."""
        acc_key = keys[0]
        acc_expr = self.vm.c[acc_key]
        for nxt in keys[1:]:
            acc_key, acc_expr = self._cprod(acc_key, acc_expr, nxt, self.vm.c[nxt])
        return acc_key, acc_expr

    def _cprod(self, a_key, a_expr, b_key, b_expr):
        cache_key = tuple(sorted((a_key, b_key)))
        if cache_key in self._prod_cache:
            return self._prod_cache[cache_key]
        self._aux_count += 1
        key = ("aux", self._aux_count)
        init = self._cinit[a_key] * self._cinit[b_key]
        aux = self.vm.cvar(key, "aux", init=init)
        self._cinit[key] = init
        pr, pi = a_expr.cmul(b_expr)
        self.sys.add(pr - aux.re, EQ, ("aux", self._aux_count, "re"))
        self.sys.add(pi - aux.im, EQ, ("aux", self._aux_count, "im"))
        self.vm.aux_recipes.append((key, a_key, b_key))
        self._prod_cache[cache_key] = (key, aux)
        return key, aux

    # -- flow envelopes -----------------------------------------------------------

    def emit_flow_envelopes(self):
        """Current ratings lifted into the power-voltage variable space."""
        if self.cfg.mode == "pf" or not self.cfg.current_ratings:
            return
        vm, sys = self.vm, self.sys
        for lid in sorted(self.net.lines):
            line = self.net.lines[lid]
            if not line.i_max_a:
                continue
            imax = line.i_max_a / self.bases.i(line.from_bus)
            for side, bus, cmap in (
                ("fr", line.from_bus, line.map_from),
                ("to", line.to_bus, line.map_to),
            ):
                for c in range(line.code.n_conductors):
                    s = vm.c[("Sl", lid, side, c)]
                    u = vm.U(bus, cmap[c])
                    s2 = s.cmul(s.conj())[0]
                    u2 = u.cmul(u.conj())[0]
                    sys.add(s2 - u2.scaled(imax**2), LE, ("env_iline", lid, side, c))


class CAffineQuad:
    """Pair of quadratic expressions used as a complex accumulator."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re
        self.im = im

    def __add__(self, other):
        return CAffineQuad(self.re + other.re, self.im + other.im)


def build_acr(net: Network, cfg: FormulationConfig | None = None):
    """Assemble the rectangular power-voltage system for a network."""
    return AcrBuilder(net, cfg or FormulationConfig()).build()


def kron_grounding_note(net: Network):
    """Report which loads bypass the lifted quartic path under grounding.

    Returns one record per original load: ``simplified`` is True when every
    return terminal voltage is pinned to zero (grounded or fixed by a
    source), in which case the interface power equals the element power and
    no auxiliary variables are needed.
    """
    from .network import expand_composites, normalize

    work = expand_composites(normalize(net))
    zero_pins = set()
    for bus in work.buses.values():
        for t in bus.terminals:
            if t.grounded:
                zero_pins.add((bus.id, t.label))
    for src in work.sources.values():
        for lbl, ph in src.phasors.items():
            if abs(complex(ph)) < 1e-12:
                zero_pins.add((src.bus, lbl))
    by_root: dict[str, list] = {}
    for did in sorted(work.loads):
        load = work.loads[did]
        root = load.group[0] if load.group else load.id
        by_root.setdefault(root, []).append(load)
    records = []
    for root in sorted(by_root):
        legs = by_root[root]
        live = [l for l in legs if (l.bus, l.map[1]) not in zero_pins]
        is_wye_group = any(l.group and l.group[1] == WYE for l in legs)
        aux = 0
        if live and is_wye_group and len(live) > 1:
            m = len(live)
            # pairwise products: (m-1 choose 2)-style cache, counted exactly
            aux = _count_group_aux(m)
        elif live:
            aux = 0
        records.append(
            {
                "component": root,
                "simplified": not live,
                "lifted_legs": len(live),
                "aux_vars": aux,
            }
        )
    return records


def _count_group_aux(m):
    """Distinct pairwise products for the degree-(m+1) group lifting."""
    keys = [("p", k) for k in range(m)] + [("n",)]
    cache = set()
    count = 0
    for c in range(len(keys)):
        others = [keys[k] for k in range(len(keys)) if k != c]
        acc = others[0]
        for nxt in others[1:]:
            pair = tuple(sorted((repr(acc), repr(nxt))))
            if pair not in cache:
                cache.add(pair)
                count += 1
            acc = ("prod", acc, nxt)
    return count


def acr_initial_point(sys, voltages):
    """Initial point consistent with a given voltage profile.

    ``voltages`` maps (bus, label) to complex per-unit phasors. Every flow
    or auxiliary variable with a local closed form at fixed voltages (line
    and shunt flows, product auxiliaries, voltage-dependent element powers,
    interface powers) is set from the profile through this formulation's
    own defining equations; transformer through-flows and slack injections,
    which are only pinned by the network balance, stay at zero and are left
    to the solver.
    """
    vm = sys.meta["varmap"]
    net = sys.meta["net"]
    bases = sys.meta["bases"]
    x = sys.initial_point()
    cvals: dict[tuple, complex] = {}

    def uval(bus, lbl):
        return voltages[(bus, lbl)]

    def set_c(key, value):
        value = complex(value)
        cvals[key] = value
        for part, comp in (("re", value.real), ("im", value.imag)):
            idx = vm.index_of.get(key + (part,))
            if idx is not None:
                x[idx] = comp

    for key in vm.c:
        if key[0] == "U":
            set_c(key, uval(key[1], key[2]))
    for lid in sorted(net.lines):
        line = net.lines[lid]
        zb = bases.z(line.from_bus)
        Z = line.z_total() / zb
        Ys = np.linalg.inv(Z)
        Yf = line.y_fr_total() * zb
        Yt = line.y_to_total() * zb
        u_fr = np.array([uval(line.from_bus, l) for l in line.map_from])
        u_to = np.array([uval(line.to_bus, l) for l in line.map_to])
        s_fr = u_fr * np.conj(Yf @ u_fr + Ys @ (u_fr - u_to))
        s_to = u_to * np.conj(Yt @ u_to + Ys @ (u_to - u_fr))
        for c in range(line.code.n_conductors):
            set_c(("Sl", lid, "fr", c), s_fr[c])
            set_c(("Sl", lid, "to", c), s_to[c])
    for sid in sorted(net.shunts):
        sh = net.shunts[sid]
        Y = sh.Y * bases.z(sh.bus)
        u = np.array([uval(sh.bus, l) for l in sh.map])
        s = u * np.conj(Y @ u)
        for c in range(len(sh.map)):
            set_c(("Ssh", sid, c), s[c])
    for key, a_key, b_key in vm.aux_recipes:
        set_c(key, cvals[a_key] * cvals[b_key])
    group_terms: dict[str, dict] = {}
    for rec in vm.legs:
        lid = rec["id"]
        u1 = uval(rec["bus"], rec["t1"])
        u2 = uval(rec["bus"], rec["t2"])
        d = u1 - u2
        s_d = None
        if ("P", lid) in vm.index_of:
            # voltage-dependent element powers from their defining relations
            load = net.loads.get(lid)
            if load is not None:
                sb_ = bases.s_base
                ub_ = bases.u(rec["bus"])
                if load.model == IMPEDANCE:
                    g = float(load.P_nom[0]) / load.U_nom**2 * bases.z(rec["bus"])
                    b = -float(load.Q_nom[0]) / load.U_nom**2 * bases.z(rec["bus"])
                    s_d = complex(g * abs(d) ** 2, -b * abs(d) ** 2)
                elif load.model == CURRENT:
                    cp = float(load.P_nom[0]) / sb_ * ub_ / load.U_nom
                    cq = float(load.Q_nom[0]) / sb_ * ub_ / load.U_nom
                    s_d = complex(cp * abs(d), cq * abs(d))
                if s_d is not None:
                    x[vm.index_of[("P", lid)]] = s_d.real
                    x[vm.index_of[("Q", lid)]] = s_d.imag
                if ("Umsqr", lid) in vm.index_of:
                    x[vm.index_of[("Umsqr", lid)]] = abs(d) ** 2
        elif rec["kind"] == "load":
            load = net.loads[lid]
            s_d = complex(float(load.P_nom[0]), float(load.Q_nom[0])) / bases.s_base
        else:
            gen = net.generators.get(lid)
            cfgsp = sys.meta["cfg"].gen_setpoints.get(rec["root"])
            if gen is not None and cfgsp is not None and rec["bus"] not in vm.source_buses:
                n = max(
                    1,
                    sum(
                        1
                        for g in net.generators.values()
                        if (g.group[0] if g.group else g.id) == rec["root"]
                    ),
                )
                s_d = complex(cfgsp[0], cfgsp[1]) / n / bases.s_base
        if s_d is None or abs(d) < 1e-9:
            continue
        sb_val = s_d * u1 / d
        if vm.has(("Sb", lid)):
            set_c(("Sb", lid), sb_val)
        if vm.has(("Sby", lid)) and abs(u1) > 1e-12:
            set_c(("Sby", lid), -u2 * sb_val / u1)
        if vm.has(("Sbw", rec["root"])):
            grp = group_terms.setdefault(
                rec["root"], {"bus": rec["bus"], "t2": rec["t2"], "legs": []}
            )
            grp["legs"].append((rec["t1"], sb_val))
    for root, grp in sorted(group_terms.items()):
        u_n = uval(grp["bus"], grp["t2"])
        total = 0.0 + 0.0j
        for t1, sb_val in grp["legs"]:
            u1 = uval(grp["bus"], t1)
            if abs(u1) > 1e-12:
                total += sb_val / u1
        set_c(("Sbw", root), -u_n * total)
    return x


def map_point_from_ivr(acr_sys, ivr_sys, x_ivr):
    """Translate a current-voltage solution into the power variable space.

    Voltages copy across directly; every power-flow variable is computed as
    S = U * conj(I) from the corresponding current-form quantities, and the
    auxiliary product variables are evaluated along their recorded recipes.
    Feasibility of the result certifies that the power form relaxes the
    current form.
    """
    vm_a = acr_sys.meta["varmap"]
    vm_i = ivr_sys.meta["varmap"]
    x = acr_sys.initial_point()
    cvals: dict[tuple, complex] = {}

    def uval(bus, lbl):
        return vm_i.U(bus, lbl).value(x_ivr)

    def set_c(key, value):
        cvals[key] = value
        for part, comp in (("re", value.real), ("im", value.imag)):
            idx = vm_a.index_of.get(key + (part,))
            if idx is not None:
                x[idx] = comp

    legs = {rec["id"]: rec for rec in vm_i.legs}
    for key in sorted(vm_a.c, key=repr):
        if key[0] == "U":
            set_c(key, uval(key[1], key[2]))
    net = acr_sys.meta.get("net")
    if net is None:
        raise ValueError("ACR system carries no network reference")
    for lid in sorted(net.lines):
        line = net.lines[lid]
        for side, bus, cmap in (
            ("fr", line.from_bus, line.map_from),
            ("to", line.to_bus, line.map_to),
        ):
            for c in range(line.code.n_conductors):
                i = vm_i.c[("Il", lid, side, c)].value(x_ivr)
                u = uval(bus, cmap[c])
                set_c(("Sl", lid, side, c), u * np.conj(i))
    for tid in sorted(net.transformers):
        tr = net.transformers[tid]
        for side, bus, cmap in (
            ("fr", tr.from_bus, tr.map_from),
            ("to", tr.to_bus, tr.map_to),
        ):
            for c in range(2):
                i = vm_i.c[("Itr", tid, side, c)].value(x_ivr)
                set_c(("Str", tid, side, c), uval(bus, cmap[c]) * np.conj(i))
    for sid in sorted(net.shunts):
        sh = net.shunts[sid]
        for c in range(len(sh.map)):
            i = vm_i.c[("Ish", sid, c)].value(x_ivr)
            set_c(("Ssh", sid, c), uval(sh.bus, sh.map[c]) * np.conj(i))
    group_w: dict[tuple, complex] = {}
    for rec in vm_i.legs:
        lid = rec["id"]
        i = vm_i.c[("Ileg", lid)].value(x_ivr)
        u1 = uval(rec["bus"], rec["t1"])
        u2 = uval(rec["bus"], rec["t2"])
        set_c(("Sb", lid), u1 * np.conj(i))
        set_c(("Sby", lid), u2 * np.conj(-i))
        gk = (rec["root"], rec["bus"], rec["t2"])
        group_w[gk] = group_w.get(gk, 0.0) + (-i)
    for (root, bus, t2), i_w in sorted(group_w.items()):
        set_c(("Sbw", root), uval(bus, t2) * np.conj(i_w))
    for key in list(vm_a.index_of):
        fam = key[0]
        if fam in ("P", "Q"):
            src = vm_i.scalars.get(key)
            if src is not None:
                x[vm_a.index_of[key]] = src.value(x_ivr)
            else:
                rec = legs.get(key[1])
                if rec is not None:
                    i = vm_i.c[("Ileg", key[1])].value(x_ivr)
                    d = uval(rec["bus"], rec["t1"]) - uval(rec["bus"], rec["t2"])
                    s = d * np.conj(i)
                    x[vm_a.index_of[key]] = s.real if fam == "P" else s.imag
        elif fam == "Umsqr":
            rec = legs[key[1]]
            d = uval(rec["bus"], rec["t1"]) - uval(rec["bus"], rec["t2"])
            x[vm_a.index_of[key]] = abs(d) ** 2
    for key, a_key, b_key in vm_a.aux_recipes:
        va = cvals[a_key]
        vb = cvals[b_key]
        set_c(key, va * vb)
    for key in vm_a.c:
        if key[0] == "Useq":
            _, bus, seq = key
            row = {"z": 0, "p": 1, "n": 2}[seq]
            has_n = vm_a.has(("U", bus, "n"))
            un = uval(bus, "n") if has_n else 0.0
            diffs = [uval(bus, p) - un for p in ("a", "b", "c")]
            val = sum(complex(FORTESCUE_INV[row][k]) * diffs[k] for k in range(3))
            set_c(key, val)
    return x
