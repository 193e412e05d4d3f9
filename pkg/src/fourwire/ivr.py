"""Current-voltage rectangular formulation.

Every component contributes rectangular current variables and quadratic (or
linear) constraints; Kirchhoff's current law is written directly in the
current variables, one complex balance per bus terminal. All power-style
quantities are products U * conj(I) expanded into their real and imaginary
parts:

    P = Ur*Ir + Ui*Ii,    Q = Ui*Ir - Ur*Ii.
"""

from __future__ import annotations

import math

import numpy as np

from .formulation import BuildError, FormulationBuilder, FormulationConfig
from .network import CURRENT, IMPEDANCE, POWER, Network
from .qcqp import EQ, LE, Affine, CAffine

_INF = math.inf


def _power_quads(u_diff: CAffine, i: CAffine):
    """(P, Q) quadratic expressions of S = U * conj(I)."""
    re, im = u_diff.cmul(i.conj())
    return re, im


class IvrBuilder(FormulationBuilder):
    flow = "current"

    def build(self):
        self.make_voltage_variables()
        for lid in sorted(self.net.lines):
            self.emit_line(self.net.lines[lid])
        for tid in sorted(self.net.transformers):
            self.emit_ideal_transformer(self.net.transformers[tid])
        legs = self.collect_legs()
        for leg in legs:
            if leg.kind == "load":
                self.emit_load(leg)
            else:
                self.emit_generator(leg)
        for sid in sorted(self.net.shunts):
            self.emit_shunt(self.net.shunts[sid])
        self.emit_kcl("kcl")
        self.emit_voltage_envelopes()
        self.emit_flow_envelopes()
        self.finish_pf_checks()
        return self.sys

    # -- two-port components --------------------------------------------------

    def emit_line(self, line):
        """Series voltage drop plus total-current definitions per conductor.

        With ``series_current_only`` the total currents are affine
        transformations of the series current and never become variables.
        """
        vm, sys, cfg = self.vm, self.sys, self.cfg
        zb_f = self.bases.z(line.from_bus)
        zb_t = self.bases.z(line.to_bus)
        if abs(zb_f - zb_t) > 1e-9 * max(zb_f, zb_t):
            raise BuildError(f"line {line.id} spans different voltage bases")
        n = line.code.n_conductors
        Z = line.z_total() / zb_f
        Yf = line.y_fr_total() * zb_f
        Yt = line.y_to_total() * zb_f
        u_fr = [vm.U(line.from_bus, lbl) for lbl in line.map_from]
        u_to = [vm.U(line.to_bus, lbl) for lbl in line.map_to]
        i_s = [vm.cvar(("Is", line.id, c), "current") for c in range(n)]
        for c in range(n):
            drop = u_fr[c] - u_to[c]
            for k in range(n):
                drop = drop - i_s[k].rotated(Z[c, k])
            sys.add(drop.re, EQ, ("line_ohm", line.id, c, "re"))
            sys.add(drop.im, EQ, ("line_ohm", line.id, c, "im"))

        def charging(Y, u_vec, c):
            tot = CAffine.constant(0.0)
            for k in range(n):
                yck = Y[c, k]
                if yck != 0:
                    tot = tot + u_vec[k].rotated(yck)
            return tot

        for c in range(n):
            total_fr = charging(Yf, u_fr, c) + i_s[c]
            total_to = charging(Yt, u_to, c) - i_s[c]
            if cfg.series_current_only:
                vm.define_c(("Il", line.id, "fr", c), total_fr)
                vm.define_c(("Il", line.id, "to", c), total_to)
            else:
                ifr = vm.cvar(("Il", line.id, "fr", c), "current")
                ito = vm.cvar(("Il", line.id, "to", c), "current")
                d_fr = ifr - total_fr
                d_to = ito - total_to
                sys.add(d_fr.re, EQ, ("line_cfr", line.id, c, "re"))
                sys.add(d_fr.im, EQ, ("line_cfr", line.id, c, "im"))
                sys.add(d_to.re, EQ, ("line_cto", line.id, c, "re"))
                sys.add(d_to.im, EQ, ("line_cto", line.id, c, "im"))
            vm.kcl_add(line.from_bus, line.map_from[c], -vm.c[("Il", line.id, "fr", c)])
            vm.kcl_add(line.to_bus, line.map_to[c], -vm.c[("Il", line.id, "to", c)])

    def emit_ideal_transformer(self, tr):
        """Current balance per winding, ratio coupling, voltage coupling."""
        vm, sys = self.vm, self.sys
        n_eff = tr.turns_ratio * self.bases.u(tr.to_bus) / self.bases.u(tr.from_bus)
        i_fr = [vm.cvar(("Itr", tr.id, "fr", c), "current") for c in range(2)]
        i_to = [vm.cvar(("Itr", tr.id, "to", c), "current") for c in range(2)]
        cbal_fr = i_fr[0] + i_fr[1]
        cbal_to = i_to[0] + i_to[1]
        ratio = i_fr[0].rotated(n_eff) + i_to[0]
        u_f = vm.U(tr.from_bus, tr.map_from[0]) - vm.U(tr.from_bus, tr.map_from[1])
        u_t = vm.U(tr.to_bus, tr.map_to[0]) - vm.U(tr.to_bus, tr.map_to[1])
        volt = u_f - u_t.rotated(n_eff)
        for name, expr in (
            (("tr_cbal", tr.id, "fr"), cbal_fr),
            (("tr_cbal", tr.id, "to"), cbal_to),
            (("tr_ratio", tr.id), ratio),
            (("tr_volt", tr.id), volt),
        ):
            sys.add(expr.re, EQ, name + ("re",))
            sys.add(expr.im, EQ, name + ("im",))
        for side, currents, bus, cmap in (
            ("fr", i_fr, tr.from_bus, tr.map_from),
            ("to", i_to, tr.to_bus, tr.map_to),
        ):
            for c in range(2):
                vm.kcl_add(bus, cmap[c], -currents[c])

    # -- one-port components -----------------------------------------------------

    def emit_load(self, leg):
        """Two-terminal load leg; the return conductor current is -I."""
        vm, sys, cfg = self.vm, self.sys, self.cfg
        nom = self.load_nominals(leg)
        u_diff = self.leg_diff(leg)
        u0 = self.leg_diff_init(leg)
        if leg.comp.model == IMPEDANCE:
            y = complex(nom["g_pu"], nom["b_pu"])
            i0 = y * u0
        else:
            s0 = complex(nom["p"], nom["q"])
            i0 = np.conj(s0 / u0) if abs(u0) > 1e-6 else 0.0
        i = vm.cvar(("Ileg", leg.id), "current", init=i0)
        vm.kcl_add(leg.bus, leg.t1, -i)
        vm.kcl_add(leg.bus, leg.t2, i)
        model = leg.comp.model
        if model == POWER:
            p_expr, q_expr = _power_quads(u_diff, i)
            sys.add(p_expr - nom["p"], EQ, ("load_S", leg.id, "P"))
            sys.add(q_expr - nom["q"], EQ, ("load_S", leg.id, "Q"))
        elif model == IMPEDANCE:
            y = complex(nom["g_pu"], nom["b_pu"])
            d = i - u_diff.rotated(y)
            sys.add(d.re, EQ, ("load_z", leg.id, "re"))
            sys.add(d.im, EQ, ("load_z", leg.id, "im"))
        elif model == CURRENT:
            p = vm.scalar_var(("P", leg.id), "power", init=nom["p"])
            q = vm.scalar_var(("Q", leg.id), "power", init=nom["q"])
            umsqr = vm.scalar_var(
                ("Umsqr", leg.id), "aux", init=abs(u0) ** 2
            )
            mag2 = u_diff.cmul(u_diff.conj())[0]
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
            p_expr, q_expr = _power_quads(u_diff, i)
            sys.add(p_expr - p, EQ, ("load_S", leg.id, "P"))
            sys.add(q_expr - q, EQ, ("load_S", leg.id, "Q"))
        else:
            raise BuildError(f"load {leg.id}: no emitter for model {model!r}")

    def emit_generator(self, leg):
        vm, sys, cfg = self.vm, self.sys, self.cfg
        comp = leg.comp
        sb = self.bases.s_base
        u_diff = self.leg_diff(leg)
        setpoint = self.gen_setpoint_pu(leg)
        slack = self.is_slack(leg)
        if cfg.mode == "pf" and not slack and setpoint is None:
            raise BuildError(
                f"generator {leg.id}: PF build needs a setpoint (or a source at its bus)"
            )
        if setpoint is not None and not slack:
            p_expr = Affine.constant(setpoint[0])
            q_expr = Affine.constant(setpoint[1])
            u0 = self.leg_diff_init(leg)
            i0 = np.conj(complex(*setpoint) / u0) if abs(u0) > 1e-6 else 0.0
        else:
            pmin, pmax = float(comp.P_min[0]) / sb, float(comp.P_max[0]) / sb
            qmin, qmax = float(comp.Q_min[0]) / sb, float(comp.Q_max[0]) / sb
            if cfg.mode == "pf" or slack:
                pmin = qmin = -_INF
                pmax = qmax = _INF
            if pmax - pmin < 1e-15:
                p_expr = Affine.constant(pmin)
            else:
                p_expr = vm.scalar_var(
                    ("P", leg.id), "power", lower=pmin, upper=pmax,
                    init=min(max(0.0, pmin), pmax),
                )
            if qmax - qmin < 1e-15:
                q_expr = Affine.constant(qmin)
            else:
                q_expr = vm.scalar_var(
                    ("Q", leg.id), "power", lower=qmin, upper=qmax,
                    init=min(max(0.0, qmin), qmax),
                )
            i0 = 0.0
        vm.define_scalar(("P", leg.id), p_expr)
        vm.define_scalar(("Q", leg.id), q_expr)
        i = vm.cvar(("Ileg", leg.id), "current", init=i0)
        vm.kcl_add(leg.bus, leg.t1, i)
        vm.kcl_add(leg.bus, leg.t2, -i)
        p_quad, q_quad = _power_quads(u_diff, i)
        sys.add(p_quad - p_expr, EQ, ("gen_S", leg.id, "P"))
        sys.add(q_quad - q_expr, EQ, ("gen_S", leg.id, "Q"))
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

    def emit_shunt(self, sh):
        vm, sys = self.vm, self.sys
        zb = self.bases.z(sh.bus)
        Y = sh.Y * zb
        m = len(sh.map)
        u = [vm.U(sh.bus, lbl) for lbl in sh.map]
        for c in range(m):
            i = vm.cvar(("Ish", sh.id, c), "current")
            rhs = CAffine.constant(0.0)
            for k in range(m):
                if Y[c, k] != 0:
                    rhs = rhs + u[k].rotated(Y[c, k])
            d = i - rhs
            sys.add(d.re, EQ, ("shunt", sh.id, c, "re"))
            sys.add(d.im, EQ, ("shunt", sh.id, c, "im"))
            vm.kcl_add(sh.bus, sh.map[c], -i)

    # -- flow envelopes ------------------------------------------------------------

    def emit_flow_envelopes(self):
        """Current magnitude ratings and optional line power bounds."""
        if self.cfg.mode == "pf":
            return
        vm, sys = self.vm, self.sys
        if self.cfg.current_ratings:
            for lid in sorted(self.net.lines):
                line = self.net.lines[lid]
                if not line.i_max_a:
                    continue
                imax = line.i_max_a / self.bases.i(line.from_bus)
                for side in ("fr", "to"):
                    for c in range(line.code.n_conductors):
                        i = vm.c[("Il", lid, side, c)]
                        mag2 = i.cmul(i.conj())[0]
                        sys.add(mag2 - imax**2, LE, ("env_iline", lid, side, c))
        if self.cfg.power_ratings:
            for lid in sorted(self.net.lines):
                line = self.net.lines[lid]
                if not line.s_max_va:
                    continue
                smax = line.s_max_va / self.bases.s_base
                for side, bus, cmap in (
                    ("fr", line.from_bus, line.map_from),
                    ("to", line.to_bus, line.map_to),
                ):
                    for c in range(line.code.n_conductors):
                        i = vm.c[("Il", lid, side, c)]
                        u = vm.U(bus, cmap[c])
                        p = vm.scalar_var(("Pline", lid, side, c), "power")
                        q = vm.scalar_var(("Qline", lid, side, c), "power")
                        p_quad, q_quad = _power_quads(u, i)
                        sys.add(p_quad - p, EQ, ("line_pdef", lid, side, c))
                        sys.add(q_quad - q, EQ, ("line_qdef", lid, side, c))
                        sys.add(
                            p.times(p) + q.times(q) - smax**2,
                            LE,
                            ("env_sline", lid, side, c),
                        )


def build_ivr(net: Network, cfg: FormulationConfig | None = None):
    """Assemble the rectangular current-voltage system for a network."""
    return IvrBuilder(net, cfg or FormulationConfig()).build()
