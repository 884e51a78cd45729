"""Genus-zero data of the base: small quantum product in divisor directions,
fundamental solution, J-function, gradings.

The base carries the trivial torus action, so every number here is rational.
Divisor directions enter through the modified Novikov variables x_b = Q_b e^{tau_b};
``A[b][D]`` is the x^D coefficient of the matrix of phi_b * (small product).
"""

from __future__ import annotations

import json
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .algebra import GradedAlgebra
from .report import Report
from .series import MissingBaseDerivative, ScalarKind, TruncationTooLow


def _frac_matrix(rows):
    a = np.empty((len(rows), len(rows[0]) if rows else 0), dtype=object)
    for i, r in enumerate(rows):
        for j, x in enumerate(r):
            a[i, j] = Fraction(x)
    return a


def _zeros(n, m=None):
    a = np.empty((n, n if m is None else m), dtype=object)
    a[...] = Fraction(0)
    for idx in np.ndindex(*a.shape):
        a[idx] = Fraction(0)
    return a


def _eye(n):
    a = _zeros(n)
    for i in range(n):
        a[i, i] = Fraction(1)
    return a


def _is_zero(M):
    return all(x == 0 for x in M.flat)


def _ldict_add(d, n, v):
    if n in d:
        d[n] = d[n] + v
    else:
        d[n] = v


class BaseTheory:
    """Cohomology of B with its small quantum product along divisor directions.

    ``mult[a]`` classical multiplication matrices, ``pairing`` rational matrix,
    basis index 0 the unit, indices 1..r the nef divisor basis.
    ``quantum[b]`` maps a base degree tuple D (length r) to the correction
    matrix of phi_b * at x^D (D = 0 excluded).
    """

    def __init__(self, names, degrees, mult, pairing, r, c1, quantum, provenance, max_degree=None):
        self.names = tuple(names)
        self.degrees = tuple(degrees)
        self.rank = len(names)
        self.mult = [_frac_matrix(m) if not isinstance(m, np.ndarray) else m for m in mult]
        self.pairing = _frac_matrix(pairing) if not isinstance(pairing, np.ndarray) else pairing
        self.r = r
        self.c1 = tuple(Fraction(x) for x in c1)  # coordinates on phi_1..phi_r
        self.quantum = quantum  # list over b=1..r of {D: matrix}
        self.provenance = provenance
        self.dim = max(self.degrees)
        self.max_degree = max_degree  # highest D for which the table is complete (None: exact)
        self._L = {(0,) * r: {0: _eye(self.rank)}}

    # -- built-ins ------------------------------------------------------------
    @classmethod
    def point(cls):
        return cls(["1"], [0], [[[1]]], [[1]], 0, [], [], "builtin-point")

    @classmethod
    def projective(cls, n: int):
        names = ["1"] + (["phi"] if n >= 1 else []) + [f"phi^{i}" for i in range(2, n + 1)]
        rank = n + 1
        mult = []
        for a in range(rank):
            M = [[0] * rank for _ in range(rank)]
            for b in range(rank):
                if a + b <= n:
                    M[a + b][b] = 1
            mult.append(M)
        pairing = [[1 if a + b == n else 0 for b in range(rank)] for a in range(rank)]
        quantum = []
        if n >= 1:
            corr = [[0] * rank for _ in range(rank)]
            corr[0][n] = 1  # phi * phi^n = x
            quantum = [{(1,): _frac_matrix(corr)}]
        return cls(names, list(range(rank)), mult, pairing, 1 if n >= 1 else 0, [n + 1] if n >= 1 else [],
                   quantum, f"builtin-projective({n})")

    @classmethod
    def from_table(cls, path_or_dict):
        """User table: names, degrees, mult, pairing, r, c1, quantum records."""
        data = path_or_dict
        if not isinstance(data, dict):
            with open(data) as fh:
                data = json.load(fh)
        r = int(data["r"])
        quantum = [dict() for _ in range(r)]
        for rec in data.get("quantum", []):
            b = int(rec["divisor"]) - 1
            quantum[b][tuple(rec["degree"])] = _frac_matrix([[Fraction(x) for x in row] for row in rec["matrix"]])
        base = cls(data["names"], data["degrees"], data["mult"], data["pairing"], r, data["c1"], quantum,
                   "user-table", data.get("max_degree"))
        rep = base.check_wdvv()
        if not rep.status:
            raise ValueError(f"user base table fails associativity: {rep.residual[:3]}")
        return base

    @classmethod
    def from_config(cls, cfg):
        if cfg is None or cfg == "point" or cfg.get("type") == "point":
            return cls.point()
        if cfg.get("type") == "projective":
            return cls.projective(int(cfg["n"]))
        if cfg.get("type") == "table":
            return cls.from_table(cfg["path"])
        raise ValueError(f"unknown base {cfg!r}")

    # -- algebra -----------------------------------------------------------------
    def algebra(self, sk: ScalarKind) -> GradedAlgebra:
        conv = lambda M: sk.array([[M[i, j] for j in range(self.rank)] for i in range(self.rank)])
        return GradedAlgebra(self.names, self.degrees, [conv(M) for M in self.mult], conv(self.pairing), sk, self.dim)

    def class_matrix(self, v) -> np.ndarray:
        """Classical multiplication matrix of a rational coordinate vector."""
        M = _zeros(self.rank)
        for a, c in enumerate(v):
            if c:
                M = M + self.mult[a] * Fraction(c)
        return M

    def deg_Q(self, D) -> Fraction:
        return sum((c * d for c, d in zip(self.c1, D)), Fraction(0))

    def A(self, b: int, D) -> np.ndarray:
        """x^D coefficient of phi_b * (b in 1..r)."""
        D = tuple(D)
        if not any(D):
            return self.mult[b]
        if self.max_degree is not None and sum(D) > self.max_degree:
            raise TruncationTooLow(f"base table complete only to degree {self.max_degree}")
        return self.quantum[b - 1].get(D, _zeros(self.rank))

    def quantum_product(self, a, b, D):
        """x^D coefficient of a * b for coordinate vectors a, b (divisor-generated part).

        Only products with a in span(1, phi_1..phi_r) are available from the
        divisor-direction table; other inputs raise MissingBaseDerivative.
        """
        a = [Fraction(x) for x in a]
        if any(a[i] for i in range(self.r + 1, self.rank)):
            raise MissingBaseDerivative("product by a non-divisor class needs big quantum data")
        out = np.array([Fraction(0)] * self.rank, dtype=object)
        bv = np.array([Fraction(x) for x in b], dtype=object)
        if not any(D):
            out = out + (a[0] * bv)
        for j in range(1, self.r + 1):
            if a[j]:
                out = out + a[j] * (self.A(j, D) @ bv)
        return out

    # -- fundamental solution ---------------------------------------------------
    def degrees_upto(self, maxD):
        import itertools

        return [D for D in itertools.product(*[range(m + 1) for m in maxD])]

    def Ltilde(self, D) -> dict:
        """x^D coefficient of e^{-tau/z} L_B as {z-power: matrix}, exact."""
        D = tuple(D)
        if D in self._L:
            return self._L[D]
        if any(d < 0 for d in D):
            return {}
        j = next(i for i, d in enumerate(D) if d > 0)
        b = j + 1
        rhs: dict = {}
        for D2 in self.degrees_upto(D):
            if not any(D2):
                continue
            A = self.A(b, D2)
            if _is_zero(A):
                continue
            prev = self.Ltilde(tuple(x - y for x, y in zip(D, D2)))
            for n, M in prev.items():
                _ldict_add(rhs, n, M @ A)
        phi = self.mult[b]
        # (ad_phi + z D_j) X = rhs  =>  X = sum_k (-ad_phi)^k rhs / (z D_j)^(k+1)
        out: dict = {}
        term = {n: M for n, M in rhs.items() if not _is_zero(M)}
        k = 0
        Dj = Fraction(D[j])
        while term:
            for n, M in term.items():
                _ldict_add(out, n - k - 1, M * ((-1) ** k / Dj ** (k + 1)))
            term = {n: phi @ M - M @ phi for n, M in term.items()}
            term = {n: M for n, M in term.items() if not _is_zero(M)}
            k += 1
            if k > 4 * self.rank + 4:
                raise RuntimeError("ad_phi not nilpotent")
        out = {n: M for n, M in out.items() if not _is_zero(M)}
        self._L[D] = out
        return out

    def Jtilde(self, D) -> dict:
        """x^D coefficient of e^{-tau/z} J_B / z as {z-power: vector}."""
        return {n: M[:, 0].copy() for n, M in self.Ltilde(D).items()}

    def j_function_point(self, Dmax, tau0_order=4):
        """Coefficients of J_B = z e^{tau/z} sum x^D Jtilde_D at tau = tau0 * 1 (tau0 symbolic powers).

        Returns {(tau0 power, D, z-power): vector} for checking the leading z + tau0 + ... terms.
        """
        out = {}
        from math import factorial

        for D in self.degrees_upto(Dmax):
            for n, v in self.Jtilde(D).items():
                for p in range(tau0_order + 1):
                    key = (p, D, n + 1 - p)
                    out[key] = out.get(key, 0) + v * Fraction(1, factorial(p))
        return out

    # -- checks ------------------------------------------------------------------
    def check_unitarity(self, Dmax) -> Report:
        """sum_{D1+D2=D} Ltilde_{D1}(-z)^T G Ltilde_{D2}(z) = delta_{D,0} G."""
        bad = []
        G = self.pairing
        for D in self.degrees_upto(Dmax):
            acc: dict = {}
            for D1 in self.degrees_upto(D):
                D2 = tuple(a - b for a, b in zip(D, D1))
                for n1, M1 in self.Ltilde(D1).items():
                    for n2, M2 in self.Ltilde(D2).items():
                        _ldict_add(acc, n1 + n2, (M1.T * (-1 if n1 % 2 else 1)) @ G @ M2)
            if not any(D):
                acc[0] = acc.get(0, _zeros(self.rank)) - G
            for n, M in acc.items():
                if not _is_zero(M):
                    bad.append((f"D={D} z^{n}", "nonzero"))
        return Report("base unitarity", not bad, bad)

    def check_flat(self, Dmax) -> Report:
        """Ltilde solves every divisor equation, not only the one used to build it."""
        bad = []
        for D in self.degrees_upto(Dmax):
            if not any(D):
                continue
            for j in range(self.r):
                b = j + 1
                phi = self.mult[b]
                lhs: dict = {}
                for n, M in self.Ltilde(D).items():
                    _ldict_add(lhs, n, phi @ M - M @ phi)
                    _ldict_add(lhs, n + 1, M * D[j])
                for D2 in self.degrees_upto(D):
                    if not any(D2):
                        continue
                    prev = self.Ltilde(tuple(x - y for x, y in zip(D, D2)))
                    for n, M in prev.items():
                        _ldict_add(lhs, n, -(M @ self.A(b, D2)))
                for n, M in lhs.items():
                    if not _is_zero(M):
                        bad.append((f"D={D} j={b} z^{n}", "nonzero"))
        return Report("base connection", not bad, bad)

    def check_wdvv(self, Dmax=None) -> Report:
        """Commutativity [phi_a*, phi_b*] = 0 order by order."""
        bad = []
        if self.max_degree is not None:
            Dmax = (self.max_degree,) * self.r
        Dmax = Dmax or (3,) * self.r
        for D in self.degrees_upto(Dmax):
            if self.max_degree is not None and sum(D) > self.max_degree:
                continue
            for a in range(1, self.r + 1):
                for b in range(a + 1, self.r + 1):
                    acc = _zeros(self.rank)
                    for D1 in self.degrees_upto(D):
                        D2 = tuple(x - y for x, y in zip(D, D1))
                        acc = acc + self.A(a, D1) @ self.A(b, D2) - self.A(b, D2) @ self.A(a, D1)
                    if not _is_zero(acc):
                        bad.append((f"[{a},{b}] at {D}", "nonzero"))
        return Report("base associativity", not bad, bad)

    def grading_data(self):
        return {"degrees": self.degrees, "c1": self.c1, "half_dim": self.dim,
                "weights": [1 - d for d in self.degrees]}

    def check_grading(self, Dmax) -> Report:
        """Ltilde_D entry (a,b) at z^n satisfies n + deg x^D + deg e_a - deg e_b = 0."""
        bad = []
        for D in self.degrees_upto(Dmax):
            for n, M in self.Ltilde(D).items():
                for a in range(self.rank):
                    for b in range(self.rank):
                        if M[a, b] != 0 and n + self.deg_Q(D) + self.degrees[a] - self.degrees[b] != 0:
                            bad.append((f"D={D} z^{n} ({a},{b})", str(M[a, b])))
        return Report("base grading", not bad, bad)
