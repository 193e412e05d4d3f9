"""Symmetric indefinite LDL' factorizations with inertia reporting.

Interior-point KKT systems need the inertia (number of positive and
negative pivots) to drive regularization. Small systems go through the
dense LAPACK Bunch-Kaufman routine; larger ones use a sparse up-looking
LDL' without pivoting over an elimination tree, which is reliable on the
quasidefinite matrices produced once the KKT system is regularized (zero
or tiny pivots are reported as factorization failure so the caller can
increase the regularization).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee


class FactorizationError(Exception):
    pass


class DenseLDL:
    def __init__(self, K):
        self.K = np.asarray(K)
        lu, d, perm = scipy.linalg.ldl(self.K, lower=True)
        self.inertia = _dense_inertia(d)
        if self.inertia[2] == 0:
            # factor once for the solves; LAPACK pivoting keeps this stable
            self._lu, self._piv = scipy.linalg.lu_factor(self.K)
        else:
            self._lu = None

    def solve(self, b):
        if self._lu is None:
            raise FactorizationError("singular dense KKT matrix")
        return scipy.linalg.lu_solve((self._lu, self._piv), b)


def _dense_inertia(d, tol=1e-150):
    # Pivots are classified by sign alone: barrier terms make the pivot
    # magnitudes span many orders legitimately, so a scale-relative zero
    # test would misread small-but-healthy pivots. Structural singularity
    # still surfaces as a wrong positive/negative count.
    n = d.shape[0]
    pos = neg = zero = 0
    k = 0
    off_scale = max(1.0, float(np.abs(np.diag(d)).max()))
    while k < n:
        if k + 1 < n and abs(d[k, k + 1]) > 1e-14 * off_scale:
            block = d[k : k + 2, k : k + 2]
            ev = np.linalg.eigvalsh(0.5 * (block + block.T))
            for e in ev:
                if e > tol:
                    pos += 1
                elif e < -tol:
                    neg += 1
                else:
                    zero += 1
            k += 2
        else:
            e = d[k, k]
            if e > tol:
                pos += 1
            elif e < -tol:
                neg += 1
            else:
                zero += 1
            k += 1
    return pos, neg, zero


class SparseLDL:
    """Up-looking LDL' of a symmetric matrix given by its upper triangle."""

    def __init__(self, K_csc, perm=None):
        n = K_csc.shape[0]
        self.n = n
        self.perm = perm
        if perm is not None:
            K_csc = K_csc[perm, :][:, perm].tocsc()
        A = sp.triu(K_csc, format="csc")
        A.sort_indices()
        Ap, Ai, Ax = A.indptr, A.indices, A.data
        parent = np.full(n, -1, dtype=np.int64)
        flag = np.full(n, -1, dtype=np.int64)
        Lnz = np.zeros(n, dtype=np.int64)
        # symbolic: elimination tree and column counts
        for k in range(n):
            flag[k] = k
            for p in range(Ap[k], Ap[k + 1]):
                i = Ai[p]
                while i < k and flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    Lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
        Lp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(Lnz, out=Lp[1:])
        Li = np.zeros(int(Lp[n]), dtype=np.int64)
        Lx = np.zeros(int(Lp[n]))
        D = np.zeros(n)
        Y = np.zeros(n)
        pattern = np.zeros(n, dtype=np.int64)
        lnz_fill = np.zeros(n, dtype=np.int64)
        flag[:] = -1
        dmax = 0.0
        for k in range(n):
            top = n
            flag[k] = k
            Y[k] = 0.0
            for p in range(Ap[k], Ap[k + 1]):
                i = Ai[p]
                if i > k:
                    continue
                Y[i] += Ax[p]
                length = 0
                while flag[i] != k:
                    pattern[length] = i
                    length += 1
                    flag[i] = k
                    i = parent[i]
                while length > 0:
                    top -= 1
                    length -= 1
                    pattern[top] = pattern[length]
            D[k] = Y[k]
            Y[k] = 0.0
            for s in range(top, n):
                i = pattern[s]
                yi = Y[i]
                Y[i] = 0.0
                p2 = Lp[i] + lnz_fill[i]
                for p in range(Lp[i], p2):
                    Y[Li[p]] -= Lx[p] * yi
                l_ki = yi / D[i]
                D[k] -= l_ki * yi
                Li[p2] = k
                Lx[p2] = l_ki
                lnz_fill[i] += 1
            dmax = max(dmax, abs(D[k]))
            if D[k] == 0.0 or abs(D[k]) < 1e-150:
                raise FactorizationError(f"zero pivot at column {k}")
        self.Lp, self.Li, self.Lx, self.D = Lp, Li, Lx, D
        pos = int(np.sum(D > 0))
        neg = int(np.sum(D < 0))
        self.inertia = (pos, neg, n - pos - neg)

    def solve(self, b):
        x = np.array(b, dtype=float)
        if self.perm is not None:
            x = x[self.perm]
        Lp, Li, Lx, D, n = self.Lp, self.Li, self.Lx, self.D, self.n
        for j in range(n):
            xj = x[j]
            if xj != 0.0:
                for p in range(Lp[j], Lp[j + 1]):
                    x[Li[p]] -= Lx[p] * xj
        x /= D
        for j in range(n - 1, -1, -1):
            acc = x[j]
            for p in range(Lp[j], Lp[j + 1]):
                acc -= Lx[p] * x[Li[p]]
            x[j] = acc
        if self.perm is not None:
            out = np.empty_like(x)
            out[self.perm] = x
            return out
        return x


def factor_kkt(K, dense_threshold=200):
    """Factor a symmetric KKT matrix, choosing dense or sparse by size.

    Returns an object with ``solve(b)`` and ``inertia = (pos, neg, zero)``;
    raises FactorizationError when the factorization breaks down.
    """
    n = K.shape[0]
    if n <= dense_threshold:
        return DenseLDL(K.toarray() if sp.issparse(K) else K)
    K = K.tocsc() if sp.issparse(K) else sp.csc_matrix(K)
    pattern = K.copy()
    pattern.data = np.ones_like(pattern.data)
    perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=np.int64)
    return SparseLDL(K, perm=perm)
