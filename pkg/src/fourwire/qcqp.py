"""Sparse quadratically constrained programs with a linear objective.

This is the shared target of the formulation builders: every constraint is
an equality or a ``<=`` inequality whose left-hand side is at most
quadratic, stored in monomial form

    g_k(x) = sum_{(i,j), i<=j} q_ij x_i x_j + sum_i c_i x_i + b

with sense ``g_k(x) = 0`` or ``g_k(x) <= 0``. Constraints are assembled as
monomial dicts and compiled once into flat index arrays for vectorised
residual / Jacobian / Hessian evaluation.

Since nothing is ever more than quadratic and the objective is linear, the
Lagrangian Hessian ``sum_k lam_k * hess(g_k)`` does not depend on x;
:meth:`ConstraintSystem.eval_lagrangian_hessian` therefore takes only the
multipliers.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

EQ = "eq"
LE = "le"

_INF = math.inf


class Affine:
    """Sparse affine expression ``sum_i a_i x_i + b``."""

    __slots__ = ("a", "b")

    def __init__(self, a=None, b=0.0):
        self.a = dict(a) if a else {}
        self.b = float(b)

    @classmethod
    def variable(cls, index):
        return cls({index: 1.0})

    @classmethod
    def constant(cls, value):
        return cls(None, value)

    @property
    def is_constant(self):
        return not self.a

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return Affine(self.a, self.b + other)
        a = dict(self.a)
        for i, v in other.a.items():
            a[i] = a.get(i, 0.0) + v
        return Affine(a, self.b + other.b)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return Affine(self.a, self.b - other)
        a = dict(self.a)
        for i, v in other.a.items():
            a[i] = a.get(i, 0.0) - v
        return Affine(a, self.b - other.b)

    def __neg__(self):
        return Affine({i: -v for i, v in self.a.items()}, -self.b)

    def scaled(self, s):
        s = float(s)
        return Affine({i: s * v for i, v in self.a.items()}, s * self.b)

    def times(self, other):
        """Product of two affine expressions, as a :class:`Quad`."""
        q = {}
        for i, ai in self.a.items():
            for j, bj in other.a.items():
                key = (i, j) if i <= j else (j, i)
                q[key] = q.get(key, 0.0) + ai * bj
        lin = {}
        if other.b:
            for i, ai in self.a.items():
                lin[i] = lin.get(i, 0.0) + ai * other.b
        if self.b:
            for j, bj in other.a.items():
                lin[j] = lin.get(j, 0.0) + bj * self.b
        return Quad(q, lin, self.b * other.b)

    def value(self, x):
        return self.b + sum(v * x[i] for i, v in self.a.items())


class CAffine:
    """Complex-valued affine expression as a (re, im) pair of :class:`Affine`."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re
        self.im = im

    @classmethod
    def constant(cls, z):
        z = complex(z)
        return cls(Affine.constant(z.real), Affine.constant(z.imag))

    @property
    def is_constant(self):
        return self.re.is_constant and self.im.is_constant

    def __add__(self, other):
        return CAffine(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return CAffine(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return CAffine(-self.re, -self.im)

    def rotated(self, z):
        """Multiplication by a complex constant z."""
        z = complex(z)
        return CAffine(
            self.re.scaled(z.real) - self.im.scaled(z.imag),
            self.re.scaled(z.imag) + self.im.scaled(z.real),
        )

    def conj(self):
        return CAffine(self.re, -self.im)

    def cmul(self, other):
        """Complex product, returning (re, im) as :class:`Quad` pairs."""
        re = self.re.times(other.re) - self.im.times(other.im)
        im = self.re.times(other.im) + self.im.times(other.re)
        return re, im

    def value(self, x):
        return complex(self.re.value(x), self.im.value(x))


class Quad:
    """Quadratic expression in monomial form: q x_i x_j + a x_i + b."""

    __slots__ = ("q", "a", "b")

    def __init__(self, q=None, a=None, b=0.0):
        self.q = dict(q) if q else {}
        self.a = dict(a) if a else {}
        self.b = float(b)

    @classmethod
    def from_affine(cls, aff):
        return cls({}, aff.a, aff.b)

    @staticmethod
    def _coerce(other):
        if isinstance(other, (int, float)):
            return Quad({}, {}, other)
        if isinstance(other, Affine):
            return Quad.from_affine(other)
        return other

    def __add__(self, other):
        other = Quad._coerce(other)
        q = dict(self.q)
        for k, v in other.q.items():
            q[k] = q.get(k, 0.0) + v
        a = dict(self.a)
        for i, v in other.a.items():
            a[i] = a.get(i, 0.0) + v
        return Quad(q, a, self.b + other.b)

    def __sub__(self, other):
        other = Quad._coerce(other)
        q = dict(self.q)
        for k, v in other.q.items():
            q[k] = q.get(k, 0.0) - v
        a = dict(self.a)
        for i, v in other.a.items():
            a[i] = a.get(i, 0.0) - v
        return Quad(q, a, self.b - other.b)

    def __neg__(self):
        return Quad(
            {k: -v for k, v in self.q.items()},
            {i: -v for i, v in self.a.items()},
            -self.b,
        )

    def scaled(self, s):
        s = float(s)
        return Quad(
            {k: s * v for k, v in self.q.items()},
            {i: s * v for i, v in self.a.items()},
            s * self.b,
        )

    def value(self, x):
        tot = self.b
        for (i, j), v in self.q.items():
            tot += v * x[i] * x[j]
        for i, v in self.a.items():
            tot += v * x[i]
        return tot


@dataclass
class VariableRef:
    """One scalar decision variable with bounds and an initial value."""

    index: int
    kind: str
    name: str = ""
    lower: float = -_INF
    upper: float = _INF
    init: float = 0.0

    def __post_init__(self):
        if not (self.lower <= self.init <= self.upper):
            raise ValueError(
                f"variable {self.name or self.index}: init {self.init} outside "
                f"bounds [{self.lower}, {self.upper}]"
            )


@dataclass(eq=False)
class QuadraticConstraint:
    """One constraint g(x) = 0 or g(x) <= 0 in monomial form."""

    qi: np.ndarray
    qj: np.ndarray
    qv: np.ndarray
    li: np.ndarray
    lv: np.ndarray
    b: float
    sense: str
    tag: tuple = ()

    @classmethod
    def from_quad(cls, quad, sense, tag=()):
        if isinstance(quad, Affine):
            quad = Quad.from_affine(quad)
        qitems = sorted((k, v) for k, v in quad.q.items() if v != 0.0)
        litems = sorted((i, v) for i, v in quad.a.items() if v != 0.0)
        return cls(
            qi=np.array([k[0] for k, _ in qitems], dtype=np.int64),
            qj=np.array([k[1] for k, _ in qitems], dtype=np.int64),
            qv=np.array([v for _, v in qitems], dtype=float),
            li=np.array([i for i, _ in litems], dtype=np.int64),
            lv=np.array([v for _, v in litems], dtype=float),
            b=float(quad.b),
            sense=sense,
            tag=tuple(tag),
        )

    @property
    def is_linear(self):
        return len(self.qv) == 0

    def Q_matrix(self, n):
        """Symmetric Q with g = x'Qx + c'x + b (off-diagonal split in half)."""
        rows, cols, vals = [], [], []
        for i, j, v in zip(self.qi, self.qj, self.qv):
            if i == j:
                rows.append(i)
                cols.append(j)
                vals.append(v)
            else:
                rows.extend((i, j))
                cols.extend((j, i))
                vals.extend((v / 2.0, v / 2.0))
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def value(self, x):
        tot = self.b
        if len(self.qv):
            tot += float(np.dot(self.qv, x[self.qi] * x[self.qj]))
        if len(self.lv):
            tot += float(np.dot(self.lv, x[self.li]))
        return tot


class ConstraintSystem:
    """A QCQP: variables with bounds, quadratic constraints, linear objective.

    Immutable once :meth:`compiled`; all evaluation methods are reentrant.
    """

    def __init__(self):
        self.variables: list[VariableRef] = []
        self.constraints: list[QuadraticConstraint] = []
        self.objective: dict[int, float] = {}
        self.objective_const: float = 0.0
        self.meta: dict = {}
        self._row_of: dict[tuple, int] = {}
        self._cache = None

    # -- construction ------------------------------------------------------

    def new_var(self, kind, name="", lower=-_INF, upper=_INF, init=0.0):
        idx = len(self.variables)
        self.variables.append(VariableRef(idx, kind, name, lower, upper, init))
        self._cache = None
        return idx

    def add(self, expr, sense=EQ, tag=()):
        if sense not in (EQ, LE):
            raise ValueError(f"unknown sense {sense!r}")
        con = QuadraticConstraint.from_quad(expr, sense, tag)
        if con.tag:
            if con.tag in self._row_of:
                raise ValueError(f"duplicate constraint tag {con.tag}")
            self._row_of[con.tag] = len(self.constraints)
        self.constraints.append(con)
        self._cache = None
        return len(self.constraints) - 1

    def add_objective_term(self, index, coef):
        self.objective[index] = self.objective.get(index, 0.0) + float(coef)

    # -- shape -------------------------------------------------------------

    @property
    def n_vars(self):
        return len(self.variables)

    @property
    def n_cons(self):
        return len(self.constraints)

    @property
    def senses(self):
        return np.array([c.sense == LE for c in self.constraints])

    @property
    def eq_indices(self):
        return np.array(
            [k for k, c in enumerate(self.constraints) if c.sense == EQ], dtype=np.int64
        )

    @property
    def ineq_indices(self):
        return np.array(
            [k for k, c in enumerate(self.constraints) if c.sense == LE], dtype=np.int64
        )

    @property
    def n_eq(self):
        return sum(1 for c in self.constraints if c.sense == EQ)

    @property
    def n_ineq(self):
        return sum(1 for c in self.constraints if c.sense == LE)

    def row_of(self, tag):
        return self._row_of[tuple(tag)]

    def rows_tagged(self, *prefix):
        """Row indices of all constraints whose tag starts with the prefix."""
        return [
            k for k, c in enumerate(self.constraints) if c.tag[: len(prefix)] == prefix
        ]

    def bounds_arrays(self):
        lower = np.array([v.lower for v in self.variables])
        upper = np.array([v.upper for v in self.variables])
        return lower, upper

    def initial_point(self):
        return np.array([v.init for v in self.variables])

    # -- compiled evaluation ----------------------------------------------

    def _compiled(self):
        if self._cache is not None:
            return self._cache
        m = self.n_cons
        q_row, q_i, q_j, q_v = [], [], [], []
        l_row, l_i, l_v = [], [], []
        b_vec = np.zeros(m)
        # Jacobian entries: value = coef * (x[src] if src >= 0 else 1.0)
        jrow, jcol, jcoef, jsrc = [], [], [], []
        # Hessian entries: value = coef * mult[con]
        h_i, h_j, h_c, h_k = [], [], [], []
        for k, con in enumerate(self.constraints):
            b_vec[k] = con.b
            for i, j, v in zip(con.qi, con.qj, con.qv):
                q_row.append(k)
                q_i.append(i)
                q_j.append(j)
                q_v.append(v)
                if i == j:
                    jrow.append(k)
                    jcol.append(i)
                    jcoef.append(2.0 * v)
                    jsrc.append(i)
                    h_i.append(i)
                    h_j.append(i)
                    h_c.append(2.0 * v)
                    h_k.append(k)
                else:
                    jrow.extend((k, k))
                    jcol.extend((i, j))
                    jcoef.extend((v, v))
                    jsrc.extend((j, i))
                    h_i.extend((i, j))
                    h_j.extend((j, i))
                    h_c.extend((v, v))
                    h_k.extend((k, k))
            for i, v in zip(con.li, con.lv):
                l_row.append(k)
                l_i.append(i)
                l_v.append(v)
                jrow.append(k)
                jcol.append(i)
                jcoef.append(v)
                jsrc.append(-1)
        cache = {
            "q_row": np.asarray(q_row, dtype=np.int64),
            "q_i": np.asarray(q_i, dtype=np.int64),
            "q_j": np.asarray(q_j, dtype=np.int64),
            "q_v": np.asarray(q_v, dtype=float),
            "l_row": np.asarray(l_row, dtype=np.int64),
            "l_i": np.asarray(l_i, dtype=np.int64),
            "l_v": np.asarray(l_v, dtype=float),
            "b": b_vec,
            "j_row": np.asarray(jrow, dtype=np.int64),
            "j_col": np.asarray(jcol, dtype=np.int64),
            "j_coef": np.asarray(jcoef, dtype=float),
            "j_src": np.asarray(jsrc, dtype=np.int64),
            "h_i": np.asarray(h_i, dtype=np.int64),
            "h_j": np.asarray(h_j, dtype=np.int64),
            "h_c": np.asarray(h_c, dtype=float),
            "h_k": np.asarray(h_k, dtype=np.int64),
            "is_le": self.senses,
        }
        self._cache = cache
        return cache

    def constraint_values(self, x):
        """Raw g_k(x) for every constraint (signed, both senses)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,):
            raise ValueError(f"expected point of length {self.n_vars}, got {x.shape}")
        c = self._compiled()
        m = self.n_cons
        vals = c["b"].copy()
        if len(c["q_v"]):
            np.add.at(vals, c["q_row"], c["q_v"] * x[c["q_i"]] * x[c["q_j"]])
        if len(c["l_v"]):
            np.add.at(vals, c["l_row"], c["l_v"] * x[c["l_i"]])
        return vals

    def eval_residuals(self, x):
        """Equality residuals and inequality violations max(g, 0)."""
        vals = self.constraint_values(x)
        is_le = self._compiled()["is_le"]
        if len(vals):
            vals = np.where(is_le, np.maximum(vals, 0.0), vals)
        return vals

    def eval_jacobian(self, x):
        """Constraint Jacobian at x as CSR; sparsity fixed across calls."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,):
            raise ValueError(f"expected point of length {self.n_vars}, got {x.shape}")
        c = self._compiled()
        src = c["j_src"]
        vals = c["j_coef"] * np.where(src >= 0, x[np.maximum(src, 0)], 1.0)
        return sp.csr_matrix(
            (vals, (c["j_row"], c["j_col"])), shape=(self.n_cons, self.n_vars)
        )

    def eval_lagrangian_hessian(self, multipliers):
        """sum_k lam_k * hess(g_k); constant in x since g is quadratic."""
        multipliers = np.asarray(multipliers, dtype=float)
        if multipliers.shape != (self.n_cons,):
            raise ValueError(
                f"expected {self.n_cons} multipliers, got {multipliers.shape}"
            )
        c = self._compiled()
        vals = c["h_c"] * multipliers[c["h_k"]]
        return sp.csr_matrix(
            (vals, (c["h_i"], c["h_j"])), shape=(self.n_vars, self.n_vars)
        )

    def objective_gradient(self):
        g = np.zeros(self.n_vars)
        for i, v in self.objective.items():
            g[i] += v
        return g

    def eval_objective(self, x):
        return self.objective_const + float(
            sum(v * x[i] for i, v in self.objective.items())
        )

    # -- transforms ----------------------------------------------------------

    def fix_variables(self, assignments):
        """Substitute ``x_j = value`` for each (j, value) and drop those vars.

        Returns (new_system, index_map) where index_map[old] is the new index
        or -1 for eliminated variables. Constraint rows are preserved 1:1.
        """
        assignments = {int(k): float(v) for k, v in assignments.items()}
        index_map = np.full(self.n_vars, -1, dtype=np.int64)
        new = ConstraintSystem()
        for var in self.variables:
            if var.index in assignments:
                continue
            index_map[var.index] = new.new_var(
                var.kind, var.name, var.lower, var.upper, var.init
            )
        for con in self.constraints:
            quad = Quad({}, {}, con.b)
            for i, j, v in zip(con.qi, con.qj, con.qv):
                vi = assignments.get(int(i))
                vj = assignments.get(int(j))
                if vi is not None and vj is not None:
                    quad.b += v * vi * vj
                elif vi is not None:
                    nj = int(index_map[j])
                    quad.a[nj] = quad.a.get(nj, 0.0) + v * vi
                elif vj is not None:
                    ni = int(index_map[i])
                    quad.a[ni] = quad.a.get(ni, 0.0) + v * vj
                else:
                    ni, nj = int(index_map[i]), int(index_map[j])
                    key = (ni, nj) if ni <= nj else (nj, ni)
                    quad.q[key] = quad.q.get(key, 0.0) + v
            for i, v in zip(con.li, con.lv):
                vi = assignments.get(int(i))
                if vi is not None:
                    quad.b += v * vi
                else:
                    ni = int(index_map[i])
                    quad.a[ni] = quad.a.get(ni, 0.0) + v
            new.add(quad, con.sense, con.tag)
        new.objective_const = self.objective_const
        for i, v in self.objective.items():
            if i in assignments:
                new.objective_const += v * assignments[i]
                continue
            new.add_objective_term(int(index_map[i]), v)
        new.meta = dict(self.meta)
        return new, index_map

    def drop_constraints(self, predicate):
        """New system without the constraints whose tag satisfies predicate."""
        new = ConstraintSystem()
        for var in self.variables:
            new.new_var(var.kind, var.name, var.lower, var.upper, var.init)
        for con in self.constraints:
            if predicate(con.tag):
                continue
            new.constraints.append(con)
            if con.tag:
                new._row_of[con.tag] = len(new.constraints) - 1
        new.objective = dict(self.objective)
        new.objective_const = self.objective_const
        new.meta = dict(self.meta)
        return new

    # -- debugging -----------------------------------------------------------

    def dump_text(self):
        """Deterministic text listing of variables and monomial constraints."""
        out = io.StringIO()
        out.write(f"variables {self.n_vars}\n")
        for v in self.variables:
            lo = "-inf" if v.lower == -_INF else f"{v.lower:.12g}"
            hi = "inf" if v.upper == _INF else f"{v.upper:.12g}"
            out.write(
                f"  x{v.index} kind={v.kind} name={v.name} "
                f"bounds=[{lo},{hi}] init={v.init:.12g}\n"
            )
        obj = " + ".join(
            f"{self.objective[i]:.12g}*x{i}" for i in sorted(self.objective)
        )
        out.write(f"objective {obj or '0'}\n")
        out.write(f"constraints {self.n_cons}\n")
        for k, c in enumerate(self.constraints):
            terms = [
                f"{v:.12g}*x{i}*x{j}" for i, j, v in zip(c.qi, c.qj, c.qv)
            ] + [f"{v:.12g}*x{i}" for i, v in zip(c.li, c.lv)]
            if c.b or not terms:
                terms.append(f"{c.b:.12g}")
            op = "<= 0" if c.sense == LE else "== 0"
            out.write(f"  g{k} {' + '.join(terms)} {op}  tag={c.tag}\n")
        return out.getvalue()
