"""Typed network data model for multi-conductor distribution networks.

Buses carry labelled terminals; every component maps its conductors onto
bus terminals explicitly (a conductor-terminal map is a tuple of terminal
labels, indexed by conductor position), so nothing relies on conductor
ordering or on the network being four-wire throughout.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

PHASES = ("a", "b", "c")
NEUTRAL = "n"

WYE = "wye"
DELTA = "delta"

POWER = "power"
IMPEDANCE = "impedance"
CURRENT = "current"
ZIP = "zip"
LOAD_MODELS = (POWER, IMPEDANCE, CURRENT, ZIP)


@dataclass(frozen=True)
class Terminal:
    label: str
    grounded: bool = False
    grounding_impedance: complex | None = None


@dataclass(frozen=True)
class Bus:
    id: str
    terminals: tuple[Terminal, ...]

    def labels(self):
        return tuple(t.label for t in self.terminals)

    def terminal(self, label):
        for t in self.terminals:
            if t.label == label:
                return t
        raise KeyError(f"bus {self.id} has no terminal {label!r}")

    def has(self, label):
        return any(t.label == label for t in self.terminals)


@dataclass(eq=False)
class LineCode:
    """Per-length line parameters: series R + jX and optional shunt halves.

    R, X are n x n ohm/km; G/B matrices are siemens/km and default to zero.
    """

    R: np.ndarray
    X: np.ndarray
    G_fr: np.ndarray | None = None
    B_fr: np.ndarray | None = None
    G_to: np.ndarray | None = None
    B_to: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        n = self.R.shape[0]
        for attr in ("G_fr", "B_fr", "G_to", "B_to"):
            m = getattr(self, attr)
            setattr(
                self,
                attr,
                np.zeros((n, n)) if m is None else np.asarray(m, dtype=float),
            )

    @property
    def n_conductors(self):
        return self.R.shape[0]

    @property
    def z(self):
        return self.R + 1j * self.X

    @property
    def y_fr(self):
        return self.G_fr + 1j * self.B_fr

    @property
    def y_to(self):
        return self.G_to + 1j * self.B_to

    def has_shunt(self):
        return bool(
            np.any(self.G_fr)
            or np.any(self.B_fr)
            or np.any(self.G_to)
            or np.any(self.B_to)
        )


@dataclass(eq=False)
class Line:
    id: str
    from_bus: str
    to_bus: str
    length: float
    code: LineCode
    map_from: tuple[str, ...]
    map_to: tuple[str, ...]
    i_max_a: float | None = None
    s_max_va: float | None = None

    def z_total(self):
        return self.code.z * self.length

    def y_fr_total(self):
        return self.code.y_fr * self.length

    def y_to_total(self):
        return self.code.y_to * self.length


@dataclass(eq=False)
class IdealTransformer:
    """Ideal two-winding single-phase transformer; real ratio, no phase shift."""

    id: str
    from_bus: str
    to_bus: str
    turns_ratio: float
    map_from: tuple[str, str]
    map_to: tuple[str, str]


@dataclass(eq=False)
class Load:
    id: str
    bus: str
    connection: str
    model: str
    P_nom: np.ndarray
    Q_nom: np.ndarray
    map: tuple[str, ...]
    U_nom: float | None = None
    zip_weights: tuple[float, float, float] | None = None
    group: tuple | None = None  # (root id, connection, element index) after expansion

    def __post_init__(self):
        self.P_nom = np.atleast_1d(np.asarray(self.P_nom, dtype=float))
        self.Q_nom = np.atleast_1d(np.asarray(self.Q_nom, dtype=float))

    @property
    def n_elements(self):
        return len(self.P_nom)

    @property
    def is_elementary(self):
        return len(self.map) == 2 and self.n_elements == 1


@dataclass(eq=False)
class Generator:
    id: str
    bus: str
    connection: str
    P_min: np.ndarray
    P_max: np.ndarray
    Q_min: np.ndarray
    Q_max: np.ndarray
    map: tuple[str, ...]
    S_max: np.ndarray | None = None
    cost: float = 0.0
    group: tuple | None = None

    def __post_init__(self):
        for attr in ("P_min", "P_max", "Q_min", "Q_max"):
            setattr(self, attr, np.atleast_1d(np.asarray(getattr(self, attr), float)))
        if self.S_max is not None:
            self.S_max = np.atleast_1d(np.asarray(self.S_max, dtype=float))

    @property
    def n_elements(self):
        return len(self.P_min)

    @property
    def is_elementary(self):
        return len(self.map) == 2 and self.n_elements == 1

    @property
    def root_id(self):
        return self.group[0] if self.group else self.id


@dataclass(eq=False)
class Shunt:
    id: str
    bus: str
    Y: np.ndarray
    map: tuple[str, ...]

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=complex))


@dataclass(eq=False)
class VoltageSource:
    id: str
    bus: str
    phasors: dict[str, complex]


@dataclass(eq=False)
class Network:
    buses: dict[str, Bus] = field(default_factory=dict)
    linecodes: dict[str, LineCode] = field(default_factory=dict)
    lines: dict[str, Line] = field(default_factory=dict)
    transformers: dict[str, IdealTransformer] = field(default_factory=dict)
    loads: dict[str, Load] = field(default_factory=dict)
    generators: dict[str, Generator] = field(default_factory=dict)
    shunts: dict[str, Shunt] = field(default_factory=dict)
    sources: dict[str, VoltageSource] = field(default_factory=dict)
    bounds: dict[str, dict] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def copy_shallow(self):
        return Network(
            buses=dict(self.buses),
            linecodes=dict(self.linecodes),
            lines=dict(self.lines),
            transformers=dict(self.transformers),
            loads=dict(self.loads),
            generators=dict(self.generators),
            shunts=dict(self.shunts),
            sources=dict(self.sources),
            bounds=dict(self.bounds),
            meta=dict(self.meta),
        )

    def source_buses(self):
        return {s.bus for s in self.sources.values()}


@dataclass(frozen=True)
class Diagnostic:
    component: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.component}: [{self.rule}] {self.message}"


def _check_map(diags, comp_kind, comp_id, net, bus_id, cmap, expected_len=None):
    if bus_id not in net.buses:
        diags.append(
            Diagnostic(f"{comp_kind} {comp_id}", "missing-bus", f"bus {bus_id} not found")
        )
        return
    bus = net.buses[bus_id]
    if expected_len is not None and len(cmap) != expected_len:
        diags.append(
            Diagnostic(
                f"{comp_kind} {comp_id}",
                "map-size",
                f"map has {len(cmap)} entries, expected {expected_len}",
            )
        )
    for label in cmap:
        if not bus.has(label):
            diags.append(
                Diagnostic(
                    f"{comp_kind} {comp_id}",
                    "map-target",
                    f"terminal {label!r} not present at bus {bus_id}",
                )
            )
    if len(set(cmap)) != len(cmap):
        diags.append(
            Diagnostic(
                f"{comp_kind} {comp_id}", "map-injective", f"map {cmap} repeats a terminal"
            )
        )


def validate_network(net: Network) -> list[Diagnostic]:
    """Check all type invariants plus connectivity; empty list means valid."""
    diags: list[Diagnostic] = []
    for bus in net.buses.values():
        labels = bus.labels()
        if len(set(labels)) != len(labels):
            diags.append(
                Diagnostic(f"bus {bus.id}", "labels-unique", f"duplicate labels {labels}")
            )
        for t in bus.terminals:
            if t.grounded and t.grounding_impedance is not None:
                diags.append(
                    Diagnostic(
                        f"bus {bus.id}",
                        "grounding",
                        f"terminal {t.label}: perfectly grounded terminals carry no impedance",
                    )
                )
    for name, code in net.linecodes.items():
        n = code.n_conductors
        for attr in ("R", "X"):
            m = getattr(code, attr)
            if m.shape != (n, n):
                diags.append(
                    Diagnostic(f"linecode {name}", "dims", f"{attr} is {m.shape}")
                )
            elif not np.allclose(m, m.T, atol=1e-12):
                diags.append(
                    Diagnostic(f"linecode {name}", "symmetry", f"{attr} not symmetric")
                )
        try:
            if np.linalg.cond(code.z) > 1e13:
                diags.append(
                    Diagnostic(f"linecode {name}", "invertible", "series Z nearly singular")
                )
        except np.linalg.LinAlgError:
            diags.append(Diagnostic(f"linecode {name}", "invertible", "series Z singular"))
    for line in net.lines.values():
        n = line.code.n_conductors
        _check_map(diags, "line", line.id, net, line.from_bus, line.map_from, n)
        _check_map(diags, "line", line.id, net, line.to_bus, line.map_to, n)
        if line.length <= 0:
            diags.append(Diagnostic(f"line {line.id}", "length", "length must be > 0"))
    for tr in net.transformers.values():
        if not (tr.turns_ratio > 0):
            diags.append(
                Diagnostic(f"transformer {tr.id}", "ratio", "turns ratio must be > 0")
            )
        _check_map(diags, "transformer", tr.id, net, tr.from_bus, tr.map_from, 2)
        _check_map(diags, "transformer", tr.id, net, tr.to_bus, tr.map_to, 2)
    for load in net.loads.values():
        if load.model not in LOAD_MODELS:
            diags.append(
                Diagnostic(f"load {load.id}", "model", f"unknown model {load.model!r}")
            )
        if load.model == ZIP:
            w = load.zip_weights
            if w is None or len(w) != 3 or any(x < 0 for x in w):
                diags.append(
                    Diagnostic(f"load {load.id}", "zip-weights", "need 3 nonnegative weights")
                )
            elif abs(sum(w) - 1.0) > 1e-12:
                diags.append(
                    Diagnostic(f"load {load.id}", "zip-weights", f"weights sum to {sum(w)}")
                )
        if load.model != POWER and not (load.U_nom and load.U_nom > 0):
            diags.append(
                Diagnostic(f"load {load.id}", "u-nom", "voltage-dependent load needs U_nom > 0")
            )
        expected = len(load.map) - 1 if load.connection == WYE else len(load.map)
        if load.is_elementary:
            expected = 1
        if load.n_elements != expected:
            diags.append(
                Diagnostic(
                    f"load {load.id}",
                    "elements",
                    f"{load.n_elements} elements inconsistent with map {load.map}",
                )
            )
        _check_map(diags, "load", load.id, net, load.bus, load.map)
    for gen in net.generators.values():
        if np.any(gen.P_min > gen.P_max) or np.any(gen.Q_min > gen.Q_max):
            diags.append(Diagnostic(f"generator {gen.id}", "bounds", "min exceeds max"))
        if gen.S_max is not None and np.any(gen.S_max < 0):
            diags.append(Diagnostic(f"generator {gen.id}", "bounds", "S_max < 0"))
        _check_map(diags, "generator", gen.id, net, gen.bus, gen.map)
    for sh in net.shunts.values():
        m = len(sh.map)
        if sh.Y.shape != (m, m):
            diags.append(
                Diagnostic(f"shunt {sh.id}", "dims", f"Y is {sh.Y.shape}, map has {m}")
            )
        _check_map(diags, "shunt", sh.id, net, sh.bus, sh.map)
    for src in net.sources.values():
        if src.bus not in net.buses:
            diags.append(
                Diagnostic(f"source {src.id}", "missing-bus", f"bus {src.bus} not found")
            )
            continue
        bus = net.buses[src.bus]
        missing = [t.label for t in bus.terminals if t.label not in src.phasors]
        if missing:
            diags.append(
                Diagnostic(
                    f"source {src.id}", "coverage", f"no phasor for terminals {missing}"
                )
            )
    diags.extend(_check_connectivity(net))
    return diags


def _adjacency(net):
    adj = {b: set() for b in net.buses}
    for line in net.lines.values():
        if line.from_bus in adj and line.to_bus in adj:
            adj[line.from_bus].add(line.to_bus)
            adj[line.to_bus].add(line.from_bus)
    for tr in net.transformers.values():
        if tr.from_bus in adj and tr.to_bus in adj:
            adj[tr.from_bus].add(tr.to_bus)
            adj[tr.to_bus].add(tr.from_bus)
    return adj


def _check_connectivity(net):
    anchors = set(net.source_buses())
    for bus in net.buses.values():
        if any(t.grounded for t in bus.terminals):
            anchors.add(bus.id)
    if not anchors:
        return [
            Diagnostic(
                "network",
                "floating",
                "no perfectly grounded terminal and no fixed-phasor source anywhere",
            )
        ]
    adj = _adjacency(net)
    seen = set()
    stack = sorted(anchors & set(adj))
    while stack:
        b = stack.pop()
        if b in seen:
            continue
        seen.add(b)
        stack.extend(adj[b] - seen)
    floating = sorted(set(net.buses) - seen)
    return [
        Diagnostic(f"bus {b}", "floating", "not reachable from any ground or source")
        for b in floating
    ]


def normalize(net: Network) -> Network:
    """Lower lossy terminal groundings to single-conductor shunts."""
    changed = False
    buses = dict(net.buses)
    shunts = dict(net.shunts)
    for bus in net.buses.values():
        terms = []
        for t in bus.terminals:
            if t.grounding_impedance is not None and not t.grounded:
                zg = complex(t.grounding_impedance)
                if zg == 0:
                    terms.append(Terminal(t.label, grounded=True))
                else:
                    sid = f"_ground.{bus.id}.{t.label}"
                    shunts[sid] = Shunt(sid, bus.id, np.array([[1.0 / zg]]), (t.label,))
                    terms.append(Terminal(t.label))
                changed = True
            else:
                terms.append(t)
        if changed:
            buses[bus.id] = Bus(bus.id, tuple(terms))
    if not changed:
        return net
    out = net.copy_shallow()
    out.buses = buses
    out.shunts = shunts
    return out


def _delta_pairs(labels):
    return [(labels[k], labels[(k + 1) % len(labels)]) for k in range(len(labels))]


def expand_composites(net: Network) -> Network:
    """Replace wye/delta multi-phase loads and generators by single-phase legs.

    Legs share the original terminals and carry a ``group`` marker so the
    formulation builders can substitute the duplicated internal currents
    (wye legs share the neutral return). ZIP loads are additionally lowered
    into co-located impedance / current / power parts. Idempotent.
    """
    out = net.copy_shallow()
    loads = {}
    for lid in sorted(net.loads):
        load = net.loads[lid]
        for leg in _expand_load(load):
            if leg.id in loads:
                raise ValueError(f"duplicate load id {leg.id} during expansion")
            loads[leg.id] = leg
    gens = {}
    for gid in sorted(net.generators):
        gen = net.generators[gid]
        for leg in _expand_generator(gen):
            if leg.id in gens:
                raise ValueError(f"duplicate generator id {leg.id} during expansion")
            gens[leg.id] = leg
    out.loads = loads
    out.generators = gens
    return out


def _zip_parts(load):
    wz, wi, wp = load.zip_weights
    parts = []
    for weight, model, suffix in ((wz, IMPEDANCE, "z"), (wi, CURRENT, "i"), (wp, POWER, "p")):
        if weight == 0.0:
            continue
        parts.append(
            Load(
                id=f"{load.id}.{suffix}",
                bus=load.bus,
                connection=load.connection,
                model=model,
                P_nom=load.P_nom * weight,
                Q_nom=load.Q_nom * weight,
                map=load.map,
                U_nom=load.U_nom,
                group=load.group,
            )
        )
    return parts


def _expand_load(load):
    if load.model == ZIP:
        legs = []
        for part in _zip_parts(load):
            legs.extend(_expand_load(part))
        return legs
    if load.is_elementary:
        return [load]
    if load.connection == WYE:
        neutral = load.map[-1]
        pairs = [(lbl, neutral) for lbl in load.map[:-1]]
    elif load.connection == DELTA:
        pairs = _delta_pairs(load.map)
    else:
        raise ValueError(f"load {load.id}: unsupported connection {load.connection!r}")
    legs = []
    for k, (t1, t2) in enumerate(pairs):
        legs.append(
            Load(
                id=f"{load.id}.{t1}{t2}",
                bus=load.bus,
                connection=load.connection,
                model=load.model,
                P_nom=load.P_nom[k : k + 1],
                Q_nom=load.Q_nom[k : k + 1],
                map=(t1, t2),
                U_nom=load.U_nom,
                group=(load.id, load.connection, k),
            )
        )
    return legs


def _expand_generator(gen):
    if gen.is_elementary:
        return [gen]
    if gen.connection == WYE:
        neutral = gen.map[-1]
        pairs = [(lbl, neutral) for lbl in gen.map[:-1]]
    elif gen.connection == DELTA:
        pairs = _delta_pairs(gen.map)
    else:
        raise ValueError(f"generator {gen.id}: unsupported connection {gen.connection!r}")
    legs = []
    for k, (t1, t2) in enumerate(pairs):
        legs.append(
            Generator(
                id=f"{gen.id}.{t1}{t2}",
                bus=gen.bus,
                connection=gen.connection,
                P_min=gen.P_min[k : k + 1],
                P_max=gen.P_max[k : k + 1],
                Q_min=gen.Q_min[k : k + 1],
                Q_max=gen.Q_max[k : k + 1],
                map=(t1, t2),
                S_max=None if gen.S_max is None else gen.S_max[k : k + 1],
                cost=gen.cost,
                group=(gen.id, gen.connection, k),
            )
        )
    return legs


# -- transformer banks ------------------------------------------------------

BANK_KINDS = ("Yy", "Dy", "Yd", "Dd")


@dataclass
class BankParts:
    """Elementary pieces realising a three-phase transformer bank."""

    buses: list[Bus] = field(default_factory=list)
    transformers: list[IdealTransformer] = field(default_factory=list)
    lines: list[Line] = field(default_factory=list)
    shunts: list[Shunt] = field(default_factory=list)
    linecodes: dict[str, LineCode] = field(default_factory=dict)


def _port_pairs(kind_char, phases, neutral):
    if kind_char == "Y":
        return [(p, neutral) for p in phases]
    if kind_char == "D":
        return _delta_pairs(phases)
    raise ValueError(f"unsupported winding connection {kind_char!r}")


def assemble_transformer_bank(
    kind,
    bank_id,
    from_bus,
    to_bus,
    turns_ratio,
    series_impedance=None,
    magnetizing_y=None,
    phases=PHASES,
    neutral=NEUTRAL,
) -> BankParts:
    """Compose a three-phase bank from ideal elements, lines and shunts.

    ``kind`` is one of Yy, Dy, Yd, Dd; the first letter is the from-side
    connection. ``turns_ratio`` is the winding voltage ratio of each ideal
    element. ``series_impedance`` (ohm, per winding) inserts a two-conductor
    line between each ideal element and the to-side port; the impedance is
    split evenly over the two conductors so the loop impedance equals z.
    ``magnetizing_y`` (siemens) adds a shunt across each from-side winding.
    """
    if kind not in BANK_KINDS:
        raise ValueError(f"unsupported bank kind {kind!r}; expected one of {BANK_KINDS}")
    parts = BankParts()
    from_pairs = _port_pairs(kind[0], phases, neutral)
    to_pairs = _port_pairs(kind[1].upper(), phases, neutral)
    if series_impedance is not None:
        z = complex(series_impedance) / 2.0
        code = LineCode(
            R=np.diag([z.real, z.real]),
            X=np.diag([z.imag, z.imag]),
            name=f"{bank_id}.winding",
        )
        parts.linecodes[code.name] = code
    for k, (fp, tp) in enumerate(zip(from_pairs, to_pairs)):
        leg = f"{bank_id}.{k+1}"
        if series_impedance is None:
            parts.transformers.append(
                IdealTransformer(leg, from_bus, to_bus, turns_ratio, fp, tp)
            )
        else:
            mid = f"{leg}.int"
            parts.buses.append(Bus(mid, (Terminal("x"), Terminal("y"))))
            parts.transformers.append(
                IdealTransformer(leg, from_bus, mid, turns_ratio, fp, ("x", "y"))
            )
            parts.lines.append(
                Line(
                    id=f"{leg}.z",
                    from_bus=mid,
                    to_bus=to_bus,
                    length=1.0,
                    code=parts.linecodes[f"{bank_id}.winding"],
                    map_from=("x", "y"),
                    map_to=tp,
                )
            )
        if magnetizing_y is not None:
            y = complex(magnetizing_y)
            parts.shunts.append(
                Shunt(
                    f"{leg}.mag",
                    from_bus,
                    np.array([[y, -y], [-y, y]]),
                    fp,
                )
            )
    return parts


def add_bank(net: Network, parts: BankParts) -> Network:
    """Merge bank parts into a network (returns a new shallow copy)."""
    out = net.copy_shallow()
    for bus in parts.buses:
        out.buses[bus.id] = bus
    for name, code in parts.linecodes.items():
        out.linecodes[name] = code
    for tr in parts.transformers:
        out.transformers[tr.id] = tr
    for line in parts.lines:
        out.lines[line.id] = line
    for sh in parts.shunts:
        out.shunts[sh.id] = sh
    return out


def balanced_phasors(u_mag, angle_a=0.0):
    """Balanced a/b/c phasors with b lagging a and c lagging b by 120 deg."""
    return {
        "a": cmath.rect(u_mag, angle_a),
        "b": cmath.rect(u_mag, angle_a - 2.0 * math.pi / 3.0),
        "c": cmath.rect(u_mag, angle_a + 2.0 * math.pi / 3.0),
    }
