"""Network-model reductions and the system-level grounding elimination.

The impedance chain goes: n x n series matrix -> Kron-reduced (n-1) x (n-1)
matrix -> sequence components. The Kron step is the standard Schur
complement

    Z' = Z_pp - Z_pn inv(Z_nn) Z_np

which reproduces the terminal behaviour of the full matrix exactly when the
eliminated conductor is perfectly grounded at both ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import (
    NEUTRAL,
    PHASES,
    Bus,
    Generator,
    Line,
    LineCode,
    Load,
    Network,
    Shunt,
    Terminal,
    VoltageSource,
)

ALPHA = complex(-0.5, math.sqrt(3.0) / 2.0)  # 1 at 120 degrees

# Fortescue matrix for sequence order (zero, positive, negative),
# with b lagging a and c lagging b.
FORTESCUE = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, ALPHA**2, ALPHA],
        [1.0, ALPHA, ALPHA**2],
    ],
    dtype=complex,
)
FORTESCUE_INV = np.linalg.inv(FORTESCUE)


@dataclass(frozen=True)
class SequenceImpedance:
    """Positive and zero sequence impedances of a three-conductor code.

    ``coupling`` is the largest off-diagonal magnitude of the transformed
    matrix; zero for perfectly transposed lines, and a fidelity measure of
    how badly the scalar z_plus represents an untransposed one.
    """

    z_plus: complex
    z_zero: complex
    coupling: float = 0.0


def kron_reduce(code: LineCode, eliminate: int) -> LineCode:
    """Eliminate one conductor from a linecode by Schur complement.

    Shunt admittance rows/columns of the eliminated conductor are dropped;
    the reduction is exact only when they are zero and the conductor is
    perfectly grounded at both ends.
    """
    n = code.n_conductors
    if not 0 <= eliminate < n:
        raise ValueError(f"conductor index {eliminate} out of range for {n} conductors")
    keep = [i for i in range(n) if i != eliminate]
    Z = code.z
    znn = Z[eliminate, eliminate]
    if abs(znn) < 1e-14 * max(1.0, float(np.abs(Z).max())):
        raise np.linalg.LinAlgError(
            f"cannot eliminate conductor {eliminate}: singular diagonal block"
        )
    zp = Z[np.ix_(keep, keep)] - np.outer(Z[keep, eliminate], Z[eliminate, keep]) / znn
    return LineCode(
        R=zp.real,
        X=zp.imag,
        G_fr=code.G_fr[np.ix_(keep, keep)],
        B_fr=code.B_fr[np.ix_(keep, keep)],
        G_to=code.G_to[np.ix_(keep, keep)],
        B_to=code.B_to[np.ix_(keep, keep)],
        name=f"{code.name}/kron{eliminate}" if code.name else "",
    )


def sequence_impedance(code: LineCode) -> SequenceImpedance:
    """Sequence components of a 3-conductor code via the Fortescue transform."""
    Z = code.z
    if Z.shape != (3, 3):
        raise ValueError(f"sequence components need a 3x3 matrix, got {Z.shape}")
    zs = FORTESCUE_INV @ Z @ FORTESCUE
    off = zs - np.diag(np.diag(zs))
    return SequenceImpedance(
        z_plus=complex(zs[1, 1]),
        z_zero=complex(zs[0, 0]),
        coupling=float(np.abs(off).max()),
    )


def positive_sequence_of(code: LineCode) -> complex:
    """z_plus of any code, Kron-reducing trailing conductors down to three."""
    work = code
    while work.n_conductors > 3:
        work = kron_reduce(work, work.n_conductors - 1)
    if work.n_conductors == 3:
        return sequence_impedance(work).z_plus
    if work.n_conductors == 1:
        return complex(work.z[0, 0])
    raise ValueError(f"cannot derive z_plus from {work.n_conductors} conductors")


def _is_delta(load):
    return load.connection == "delta" or (
        load.group is not None and load.group[1] == "delta"
    )


def match_linecode(original: SequenceImpedance, library: list[LineCode]) -> LineCode:
    """Nearest candidate in (r+, x+) space; ties go to the lowest index."""
    if not library:
        raise ValueError("empty candidate library")
    zo = original.z_plus
    best, best_dist = 0, math.inf
    for idx, cand in enumerate(library):
        zc = positive_sequence_of(cand)
        dist = math.hypot(zo.real - zc.real, zo.imag - zc.imag)
        if dist < best_dist:
            best, best_dist = idx, dist
    return library[best]


# -- network-level transforms -------------------------------------------------


def kron_reduce_network(net: Network, neutral=NEUTRAL) -> Network:
    """Eliminate the neutral conductor of every line, grounding all neutrals.

    Every line conductor mapped to the neutral terminal at both ends is
    Schur-eliminated from its code; the neutral terminals themselves become
    perfectly grounded, so device return currents flow into ground at the
    bus.
    """
    out = net.copy_shallow()
    codes: dict[int, LineCode] = {}
    lines = {}
    for lid in sorted(net.lines):
        line = net.lines[lid]
        drop = [
            c
            for c in range(line.code.n_conductors)
            if line.map_from[c] == neutral and line.map_to[c] == neutral
        ]
        if not drop:
            lines[lid] = line
            continue
        if len(drop) > 1:
            raise ValueError(f"line {lid}: multiple neutral conductors")
        c = drop[0]
        key = (id(line.code), c)
        if key not in codes:
            codes[key] = kron_reduce(line.code, c)
        keep = [k for k in range(line.code.n_conductors) if k != c]
        lines[lid] = Line(
            id=line.id,
            from_bus=line.from_bus,
            to_bus=line.to_bus,
            length=line.length,
            code=codes[key],
            map_from=tuple(line.map_from[k] for k in keep),
            map_to=tuple(line.map_to[k] for k in keep),
            i_max_a=line.i_max_a,
            s_max_va=line.s_max_va,
        )
    buses = {}
    for bid, bus in net.buses.items():
        terms = tuple(
            Terminal(t.label, grounded=True) if t.label == neutral else t
            for t in bus.terminals
        )
        buses[bid] = Bus(bid, terms)
    sources = {}
    for sid, src in net.sources.items():
        phasors = dict(src.phasors)
        if neutral in phasors:
            phasors[neutral] = 0.0 + 0.0j
        sources[sid] = VoltageSource(sid, src.bus, phasors)
    out.lines = lines
    out.buses = buses
    out.sources = sources
    out.linecodes = dict(net.linecodes)
    for key, code in codes.items():
        out.linecodes[code.name or f"kron.{key[0]}.{key[1]}"] = code
    out.meta = dict(net.meta, model="kron")
    return out


def _bus_components(net):
    """Component ids attached per bus (loads, gens, shunts, sources, tfmrs)."""
    att = {b: [] for b in net.buses}
    for d in net.loads.values():
        att[d.bus].append(("load", d.id))
    for g in net.generators.values():
        att[g.bus].append(("generator", g.id))
    for s in net.shunts.values():
        att[s.bus].append(("shunt", s.id))
    for s in net.sources.values():
        att[s.bus].append(("source", s.id))
    for t in net.transformers.values():
        att[t.from_bus].append(("transformer", t.id))
        att[t.to_bus].append(("transformer", t.id))
    return att


def merge_series_lines(net: Network) -> Network:
    """Collapse chains of series lines through bare degree-2 buses.

    A middle bus is merged away when it hosts no component, no source, no
    grounded or lossy-grounded terminal and no explicit bounds, both lines
    have zero shunt admittance, and the conductor maps align one-to-one at
    the middle bus. Identical codes sum their lengths; different codes melt
    into a one-off unit-length code carrying the summed impedance.
    """
    out = net.copy_shallow()
    while True:
        att = _bus_components(out)
        incident = {b: [] for b in out.buses}
        for line in out.lines.values():
            incident[line.from_bus].append(line)
            incident[line.to_bus].append(line)
        candidate = None
        for bid in sorted(out.buses):
            bus = out.buses[bid]
            if att[bid] or bid in out.bounds:
                continue
            if any(t.grounded or t.grounding_impedance is not None for t in bus.terminals):
                continue
            if len(incident[bid]) != 2:
                continue
            l1, l2 = incident[bid]
            if l1 is l2:
                continue
            if l1.code.has_shunt() or l2.code.has_shunt():
                continue
            if l1.i_max_a or l2.i_max_a or l1.s_max_va or l2.s_max_va:
                continue
            merged = _try_merge(l1, l2, bid)
            if merged is not None:
                candidate = (bid, l1, l2, merged)
                break
        if candidate is None:
            return out
        bid, l1, l2, merged = candidate
        out.lines = {
            k: v for k, v in out.lines.items() if v.id not in (l1.id, l2.id)
        }
        out.lines[merged.id] = merged
        if merged.code.name and merged.code.name not in out.linecodes:
            out.linecodes[merged.code.name] = merged.code
        out.buses = {k: v for k, v in out.buses.items() if k != bid}


def _oriented(line, mid):
    """Return (far_bus, far_map, mid_map) with the line pointing at mid."""
    if line.to_bus == mid:
        return line.from_bus, line.map_from, line.map_to
    return line.to_bus, line.map_to, line.map_from


def _try_merge(l1, l2, mid):
    bus_a, map_a, mid_map_1 = _oriented(l1, mid)
    bus_b, map_b, mid_map_2 = _oriented(l2, mid)
    if set(mid_map_1) != set(mid_map_2):
        return None
    # permutation: conductor c of l1 continues as conductor perm[c] of l2
    perm = [mid_map_2.index(lbl) for lbl in mid_map_1]
    if l1.code is l2.code and perm == list(range(len(perm))):
        code = l1.code
        length = l1.length + l2.length
    else:
        z = l1.code.z * l1.length + l2.code.z[np.ix_(perm, perm)] * l2.length
        code = LineCode(R=z.real, X=z.imag, name=f"{l1.id}+{l2.id}")
        length = 1.0
    return Line(
        id=f"{l1.id}+{l2.id}",
        from_bus=bus_a,
        to_bus=bus_b,
        length=length,
        code=code,
        map_from=map_a,
        map_to=tuple(map_b[p] for p in perm),
    )


def aggregate_bus_power(net: Network, bus_id: str):
    """Total nominal (P, Q) of all load elements attached to a bus."""
    p = q = 0.0
    for load in net.loads.values():
        if load.bus == bus_id:
            p += float(load.P_nom.sum())
            q += float(load.Q_nom.sum())
    return p, q


def balanced_equivalent(net: Network) -> Network:
    """Single-phase positive-sequence equivalent of a three-phase network.

    The reduced network models one phase of the balanced system: every line
    becomes a one-conductor branch with impedance z_plus, loads aggregate
    per bus and model kind at one third of the total nominal power, and
    each generator keeps its identity with per-phase bounds (capacity / 3)
    and a cost scaled by 3 so objective values stay comparable. Sources
    reduce to their positive-sequence phasor. Delta-connected nominal
    voltages are rescaled by 1/sqrt(3).
    """
    if net.transformers:
        raise ValueError("balanced equivalent of transformer networks is not supported")
    out = Network()
    out.meta = dict(net.meta, model="balanced")
    for bid in net.buses:
        # grounded n terminal gives loads and generators their return path
        out.buses[bid] = Bus(bid, (Terminal("p"), Terminal("n", grounded=True)))
    seen = {}
    for lid in sorted(net.lines):
        line = net.lines[lid]
        key = id(line.code)
        if key not in seen:
            zp = positive_sequence_of(line.code)
            seen[key] = LineCode(
                R=np.array([[zp.real]]),
                X=np.array([[zp.imag]]),
                name=f"{line.code.name or lid}+seq",
            )
            out.linecodes[seen[key].name] = seen[key]
        out.lines[lid] = Line(
            id=lid,
            from_bus=line.from_bus,
            to_bus=line.to_bus,
            length=line.length,
            code=seen[key],
            map_from=("p",),
            map_to=("p",),
        )
    groups: dict[tuple, list[Load]] = {}
    for did in sorted(net.loads):
        load = net.loads[did]
        key = (load.bus, load.model, load.U_nom, _is_delta(load))
        groups.setdefault(key, []).append(load)
    for (bus, model, u_nom, is_delta), members in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], str(kv[0][2]))
    ):
        p = sum(float(m.P_nom.sum()) for m in members)
        q = sum(float(m.Q_nom.sum()) for m in members)
        lid = f"agg.{bus}.{model}" + (".d" if is_delta else "")
        out.loads[lid] = Load(
            id=lid,
            bus=bus,
            connection="wye",
            model=model,
            P_nom=np.array([p / 3.0]),
            Q_nom=np.array([q / 3.0]),
            map=("p", "n"),
            U_nom=None if u_nom is None else (u_nom / math.sqrt(3.0) if is_delta else u_nom),
        )
    gen_map = {}
    for gid in sorted(net.generators):
        gen = net.generators[gid]
        out.generators[gid] = Generator(
            id=gid,
            bus=gen.bus,
            connection="wye",
            P_min=np.array([float(gen.P_min.sum()) / 3.0]),
            P_max=np.array([float(gen.P_max.sum()) / 3.0]),
            Q_min=np.array([float(gen.Q_min.sum()) / 3.0]),
            Q_max=np.array([float(gen.Q_max.sum()) / 3.0]),
            map=("p", "n"),
            S_max=None if gen.S_max is None else np.array([float(gen.S_max.sum()) / 3.0]),
            cost=gen.cost * 3.0,
        )
        gen_map[gid] = {"orig": gid, "scale": 3.0}
    out.meta["balanced_gen_map"] = gen_map
    for sid, src in net.sources.items():
        u = np.array([src.phasors.get(p, 0.0) for p in PHASES], dtype=complex)
        seq = FORTESCUE_INV @ u
        out.sources[sid] = VoltageSource(sid, src.bus, {"p": complex(seq[1]), "n": 0.0})
    out.bounds = dict(net.bounds)
    return out


# -- constraint-system grounding elimination ----------------------------------


def eliminate_grounded_terminals(sys, net):
    """Fix voltage variables of perfectly grounded terminals to zero and drop
    their current-law rows, keeping enough bookkeeping to recover the
    grounding current in post-processing.

    Works on a system built with ``eliminate_groundings=False``; builders
    normally do this inline, which produces the same system.
    """
    vm = sys.meta.get("varmap")
    assignments = {}
    grounded = []
    for bid in sorted(net.buses):
        bus = net.buses[bid]
        for t in bus.terminals:
            if not t.grounded:
                continue
            grounded.append((bid, t.label))
            for part in ("re", "im"):
                key = ("U", bid, t.label, part)
                if vm is not None and key in vm.index_of:
                    assignments[vm.index_of[key]] = 0.0
    dropped = set()
    for bid, label in grounded:
        for part in ("re", "im"):
            for family in ("kcl", "kcl_power"):
                tag = (family, bid, label, part)
                if tag in sys._row_of:
                    dropped.add(tag)
    reduced = sys.drop_constraints(lambda tag: tag in dropped)
    reduced, index_map = reduced.fix_variables(assignments)
    if vm is not None:
        vm.remap(index_map)
    reduced.meta["grounded_terminals"] = grounded
    return reduced
