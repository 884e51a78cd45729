"""Finite-rank graded commutative algebras with a pairing, and presentation checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coeffs import iszero, scalar_str
from .report import Report
from .series import Box, Ser, ScalarKind, TruncationTooLow, matrix_inverse, vscale, vzero


class AlgebraError(Exception):
    pass


class RankMismatch(AlgebraError):
    pass


class GradedAlgebra:
    """Basis e_0 (unit), ..., e_m with structure constants and pairing.

    ``mult[a]`` is the matrix of multiplication by e_a: column b holds the
    coordinates of e_a * e_b.  Degrees are halved cohomological degrees.
    """

    def __init__(self, names, degrees, mult, pairing, sk: ScalarKind, dim: int | None = None):
        self.names = tuple(names)
        self.degrees = tuple(degrees)
        self.sk = sk
        self.mult = [sk.array(m) if not isinstance(m, np.ndarray) else m for m in mult]
        self.pairing = sk.array(pairing) if not isinstance(pairing, np.ndarray) else pairing
        self.rank = len(self.names)
        self.dim = max(self.degrees) if dim is None else dim
        if len(self.mult) != self.rank or self.pairing.shape != (self.rank, self.rank):
            raise RankMismatch("structure data does not match basis size")

    def element(self, coords) -> "AlgebraElement":
        return AlgebraElement(self, self.sk.array(list(coords)))

    def basis(self, a) -> np.ndarray:
        v = self.sk.zeros((self.rank,))
        v[a if isinstance(a, int) else self.names.index(a)] = self.sk.one()
        return v

    def unit(self):
        return self.basis(0)

    def _vec(self, x):
        v = x.v if isinstance(x, AlgebraElement) else x
        if len(v) != self.rank:
            raise RankMismatch(f"length {len(v)} vs rank {self.rank}")
        return v

    def mult_matrix(self, x) -> np.ndarray:
        v = self._vec(x)
        out = self.sk.zeros((self.rank, self.rank))
        for a in range(self.rank):
            if not iszero(v[a]):
                out = out + vscale(self.mult[a], v[a])
        return out

    def mul(self, a, b):
        return self.mult_matrix(a) @ self._vec(b)

    def pair(self, a, b):
        return self._vec(a) @ self.pairing @ self._vec(b)

    def power(self, x, n):
        v = self.unit()
        M = self.mult_matrix(x)
        for _ in range(n):
            v = M @ v
        return v

    # -- invariants -------------------------------------------------------
    def check(self) -> Report:
        bad = []
        r = self.rank
        e = [self.basis(a) for a in range(r)]
        for a in range(r):
            if not vzero(self.mul(e[0], e[a]) - e[a]):
                bad.append((f"unit*{self.names[a]}", "ne"))
            for b in range(r):
                if not vzero(self.mul(e[a], e[b]) - self.mul(e[b], e[a])):
                    bad.append((f"comm {self.names[a]},{self.names[b]}", "ne"))
                for c in range(r):
                    lhs = self.mul(self.mul(e[a], e[b]), e[c])
                    rhs = self.mul(e[a], self.mul(e[b], e[c]))
                    if not vzero(lhs - rhs):
                        bad.append((f"assoc {a}{b}{c}", "ne"))
                    if not iszero(self.pair(self.mul(e[a], e[b]), e[c]) - self.pair(e[a], self.mul(e[b], e[c]))):
                        bad.append((f"frobenius {a}{b}{c}", "ne"))
        try:
            matrix_inverse(self.pairing, self.sk)
        except Exception:
            bad.append(("pairing", "singular"))
        return Report("algebra axioms", not bad, bad)

    def check_graded_pairing(self) -> Report:
        """Non-equivariant test: pairing vanishes unless degrees add to dim."""
        bad = []
        for a in range(self.rank):
            for b in range(self.rank):
                if self.degrees[a] + self.degrees[b] != self.dim and not iszero(self.pairing[a, b]):
                    bad.append((f"<{self.names[a]},{self.names[b]}>", scalar_str(self.pairing[a, b])))
        return Report("graded pairing", not bad, bad)


@dataclass
class AlgebraElement:
    algebra: GradedAlgebra
    v: np.ndarray

    def __post_init__(self):
        if len(self.v) != self.algebra.rank:
            raise RankMismatch("coordinate length differs from rank")

    def __add__(self, o):
        return AlgebraElement(self.algebra, self.v + o.v)

    def __sub__(self, o):
        return AlgebraElement(self.algebra, self.v - o.v)

    def __mul__(self, o):
        if isinstance(o, AlgebraElement):
            return AlgebraElement(self.algebra, self.algebra.mul(self.v, o.v))
        return AlgebraElement(self.algebra, vscale(self.v, o))

    def __eq__(self, o):
        return isinstance(o, AlgebraElement) and vzero(self.v - o.v)

    def __str__(self):
        parts = [f"({scalar_str(c)})*{n}" for c, n in zip(self.v, self.algebra.names) if not iszero(c)]
        return " + ".join(parts) or "0"


@dataclass
class Presentation:
    """Generators (name -> operator series), Novikov symbols (name -> series variable), relations."""

    generators: dict
    novikov: dict
    relations: list
    params: dict = field(default_factory=dict)


def _parse_relation(text, gens, novs, ring):
    import sympy

    names = list(gens) + list(novs) + list(ring.names)
    syms = {n: sympy.Symbol(n) for n in names}
    expr = sympy.expand(sympy.sympify(text.replace("^", "**"), locals=syms))
    P = sympy.Poly(expr, *[syms[n] for n in names])
    terms = []
    ng, nn = len(gens), len(novs)
    for mon, c in P.terms():
        g = mon[:ng]
        q = mon[ng:ng + nn]
        lam = mon[ng + nn:]
        num, den = sympy.fraction(c)
        coeff = ring.const(Fraction(int(num), int(den)))
        for i, e in enumerate(lam):
            if e:
                coeff = coeff * ring.sym(ring.names[i]) ** e
        terms.append((g, q, coeff))
    return terms


def check_presentation(pres: Presentation, sk: ScalarKind, box: Box | None = None) -> Report:
    """Evaluate each relation on the operator series; residual must vanish where known."""
    gens = list(pres.generators)
    novs = list(pres.novikov)
    ops = [pres.generators[g] for g in gens]
    S0: Ser = ops[0]
    sch = S0.scheme
    box = box or S0.box
    n = S0.shape[0]
    eye = Ser.constant(sch, S0.box, sk, sk.eye(n), strict=S0.strict)
    residuals = []
    details = {}
    for rel in pres.relations:
        terms = _parse_relation(rel, gens, novs, sk.ring)
        total = None
        for g, q, coeff in terms:
            mono = [0] * sch.n
            for nm, e in zip(novs, q):
                mono[sch.index(pres.novikov[nm])] += e
            mono = tuple(mono)
            if any(e > c for e, c in zip(mono, box.caps)):
                raise TruncationTooLow(f"relation {rel!r} needs {sch.mono_str(mono)} beyond the box")
            term = eye
            for op, e in zip(ops, g):
                for _ in range(e):
                    term = term @ op
            shifted = term.empty_like()
            for m in set(term.c) | set(term.w):
                mm = tuple(a + b for a, b in zip(m, mono))
                if term.box.contains(sch, mm):
                    if m in term.c:
                        shifted.c[mm] = {k: vscale(v, sk.coerce(coeff)) for k, v in term.c[m].items()}
                    if m in term.w:
                        shifted.w[mm] = term.w[m]
            total = shifted if total is None else total + shifted
        keys = [k for k in total.residual_keys(box=box)]
        unknown = [m for m in box.monos(sch) if total.window(m)[0] > 0 or total.window(m)[1] < 0
                   or not total.box.contains(sch, m)]
        details[rel] = "0" if not keys else f"nonzero at {len(keys)} keys"
        for m, k in keys:
            residuals.append((f"{rel} @ {sch.mono_str(m)} z^{k}", "nonzero"))
        for m in unknown:
            residuals.append((f"{rel} @ {sch.mono_str(m)}", "not computed"))
    return Report("presentation", not residuals, residuals, details)
