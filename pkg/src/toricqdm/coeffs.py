"""Exact scalar arithmetic.

Three layers live here:

* ``Rational`` is :class:`fractions.Fraction`.
* polynomials in the equivariant parameters are python-flint ``fmpq_mpoly``
  objects inside a :class:`LambdaRing` (graded lex, ``l1 > l2 > ... > extras``);
* :class:`RatFun` is the gcd-normalized fraction field, :class:`Loc` the
  localized ring whose denominators are products of registered linear forms.

:class:`BranchExtension` adjoins a root of a monic univariate relation.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping

import flint

Rational = Fraction


class CoeffError(Exception):
    pass


class DivisionByZero(CoeffError, ZeroDivisionError):
    pass


class PoleAtSubstitution(CoeffError):
    pass


class NotLocalizable(CoeffError):
    """A denominator is not a product of registered linear forms."""


def iszero(x) -> bool:
    if isinstance(x, (int, Fraction)):
        return x == 0
    return x.is_zero()


def to_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    # flint.fmpq / fmpz
    return Fraction(int(c.p), int(c.q)) if hasattr(c, "p") else Fraction(int(c))


class LambdaRing:
    """Q[l1..lN, extras] with deglex order; one cached instance per signature."""

    _cache: dict = {}

    def __new__(cls, N: int, extra: Iterable[str] = ()):
        extra = tuple(extra)
        key = (N, extra)
        if key in cls._cache:
            return cls._cache[key]
        self = super().__new__(cls)
        self.N = N
        self.extra = extra
        self.names = tuple(f"l{j}" for j in range(1, N + 1)) + extra
        if not self.names:
            # flint wants at least one generator; a dummy never used in data
            self._names_ctx = ("_u",)
        else:
            self._names_ctx = self.names
        self.ctx = flint.fmpq_mpoly_ctx.get(self._names_ctx, "deglex")
        self.zero = self.ctx.from_dict({})
        self.one = self.ctx.constant(1)
        self.forms = FormRegistry(self)
        cls._cache[key] = self
        return self

    def __repr__(self):
        return f"LambdaRing({self.N}, {self.extra})"

    def __reduce__(self):
        return (LambdaRing, (self.N, self.extra))

    def lam(self, j: int):
        """1-based equivariant parameter."""
        return self.ctx.gens()[j - 1]

    def sym(self, name: str):
        return self.ctx.gens()[self._names_ctx.index(name)]

    def const(self, c):
        if isinstance(c, Fraction):
            return self.ctx.constant(flint.fmpq(c.numerator, c.denominator))
        return self.ctx.constant(c)

    def poly(self, x):
        if isinstance(x, (int, Fraction)):
            return self.const(x)
        if isinstance(x, flint.fmpq_mpoly):
            return x
        if isinstance(x, (flint.fmpz, flint.fmpq)):
            return self.ctx.constant(x)
        raise TypeError(f"cannot coerce {type(x)} to polynomial")

    def linear(self, coeffs: Mapping[int, object]):
        """sum c_j l_j from a 1-based coefficient map."""
        out = self.zero
        for j, c in coeffs.items():
            if c:
                out = out + self.const(Fraction(c)) * self.lam(j)
        return out

    def parse(self, text: str):
        """Parse a polynomial string over this ring's generator names."""
        import sympy

        syms = {n: sympy.Symbol(n) for n in self.names}
        expr = sympy.expand(sympy.sympify(text.replace("^", "**"), locals=syms))
        if not self.names:
            return self.const(Fraction(str(expr)))
        P = sympy.Poly(expr, *[syms[n] for n in self.names]) if self.names else None
        d = {}
        for mon, c in P.terms():
            d[tuple(mon)] = flint.fmpq(int(sympy.fraction(c)[0]), int(sympy.fraction(c)[1]))
        return self.ctx.from_dict(d)


def poly_str(p) -> str:
    if p.is_zero():
        return "0"
    return p.str()


def is_homogeneous(p) -> tuple[bool, int | None]:
    if p.is_zero():
        return True, None
    degs = {sum(m) for m in p.monoms()}
    if len(degs) == 1:
        return True, degs.pop()
    return False, None


# ---------------------------------------------------------------------------
# RatFun


class RatFun:
    """num/den with gcd(num, den) = 1 and den monic in deglex."""

    __slots__ = ("ring", "num", "den")

    def __init__(self, ring: LambdaRing, num, den=None, normalize: bool = True):
        self.ring = ring
        num = ring.poly(num)
        den = ring.one if den is None else ring.poly(den)
        if den.is_zero():
            raise DivisionByZero("zero denominator")
        if normalize:
            if num.is_zero():
                den = ring.one
            else:
                g = num.gcd(den)
                if not g.is_one():
                    num = num / g
                    den = den / g
            lc = den.leading_coefficient()
            if lc != 1:
                num = num / lc
                den = den / lc
        self.num = num
        self.den = den

    # construction helpers
    @classmethod
    def const(cls, ring, c):
        return cls(ring, ring.const(Fraction(c)))

    def _co(self, other) -> "RatFun":
        if isinstance(other, RatFun):
            return other
        if isinstance(other, Loc):
            return other.to_ratfun()
        return RatFun(self.ring, self.ring.poly(other if not isinstance(other, int) else Fraction(other)))

    def __add__(self, other):
        o = self._co(other)
        if self.den == o.den:
            return RatFun(self.ring, self.num + o.num, self.den)
        g = self.den.gcd(o.den)
        a = o.den / g
        return RatFun(self.ring, self.num * a + o.num * (self.den / g), self.den * a)

    __radd__ = __add__

    def __neg__(self):
        return RatFun(self.ring, -self.num, self.den, normalize=False)

    def __sub__(self, other):
        return self + (-self._co(other))

    def __rsub__(self, other):
        return self._co(other) - self

    def __mul__(self, other):
        o = self._co(other)
        g1 = self.num.gcd(o.den)
        g2 = o.num.gcd(self.den)
        return RatFun(self.ring, (self.num / g1) * (o.num / g2), (self.den / g2) * (o.den / g1))

    __rmul__ = __mul__

    def inverse(self):
        if self.num.is_zero():
            raise DivisionByZero("inverse of zero")
        return RatFun(self.ring, self.den, self.num)

    def __truediv__(self, other):
        o = self._co(other)
        if o.num.is_zero():
            raise DivisionByZero("division by zero RatFun")
        return self * o.inverse()

    def __rtruediv__(self, other):
        return self._co(other) / self

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        return RatFun(self.ring, self.num**n, self.den**n, normalize=False)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction, flint.fmpq_mpoly, RatFun, Loc)):
            o = self._co(other)
            return (self.num * o.den - o.num * self.den).is_zero()
        return NotImplemented

    def __hash__(self):
        return hash(str(self))

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_poly(self) -> bool:
        return self.den.is_one()

    def to_poly(self):
        if not self.den.is_one():
            raise CoeffError(f"not a polynomial: {self}")
        return self.num

    def __str__(self):
        if self.den.is_one():
            return poly_str(self.num)
        return f"({poly_str(self.num)})/({poly_str(self.den)})"

    __repr__ = __str__

    def degree(self) -> int | None:
        """Homogeneous degree deg num - deg den, or None if inhomogeneous/zero."""
        hn, dn = is_homogeneous(self.num)
        hd, dd = is_homogeneous(self.den)
        if not (hn and hd) or dn is None:
            return None
        return dn - dd

    def substitute(self, assignment: Mapping[str, object]) -> "RatFun":
        """Exact substitution of generators by RatFun (or polynomial) values."""
        vals = [assignment.get(n) for n in self.ring._names_ctx]
        used = set()
        for p in (self.num, self.den):
            for m in p.monoms():
                used.update(i for i, e in enumerate(m) if e)
        for i in used:
            if vals[i] is None:
                raise CoeffError(f"assignment misses {self.ring._names_ctx[i]}")
        target = None
        for v in vals:
            if isinstance(v, RatFun):
                target = v.ring
                break
        target = target or self.ring
        vv = []
        for v in vals:
            if v is None:
                vv.append(None)
            elif isinstance(v, RatFun):
                vv.append(v)
            else:
                vv.append(RatFun(target, target.poly(v if not isinstance(v, int) else Fraction(v))))
        num = _eval_poly(self.num, vv, target)
        den = _eval_poly(self.den, vv, target)
        if den.is_zero():
            raise PoleAtSubstitution(f"denominator {poly_str(self.den)} vanishes")
        return num / den

    def in_ral(self, forms: Iterable) -> bool:
        """True when den divides a product of powers of the given linear forms."""
        d = self.den
        for f in forms:
            while not d.is_constant():
                qq, r = divmod(d, f)
                if not r.is_zero():
                    break
                d = qq
        return d.is_constant()


def _eval_poly(p, vals, target: LambdaRing) -> RatFun:
    out = RatFun(target, target.zero)
    for mon, c in zip(p.monoms(), p.coeffs()):
        term = RatFun(target, target.ctx.constant(c))
        for i, e in enumerate(mon):
            if e:
                term = term * vals[i] ** e
        out = out + term
    return out


# ---------------------------------------------------------------------------
# Localized ring


class FormRegistry:
    """Normalized integer linear forms used as localized denominators."""

    def __init__(self, ring: LambdaRing):
        self.ring = ring
        self.forms: list = []
        self._index: dict = {}
        self._pow: dict = {}

    @staticmethod
    def _normalize(f):
        d = f.to_dict()
        if not d or any(sum(m) != 1 for m in d):
            raise NotLocalizable(f"not a linear form: {f}")
        lead = f.leading_coefficient()
        g = f / lead
        # integer primitive representative with positive leading coefficient
        dens = [int(to_fraction(c).denominator) for c in g.coeffs()]
        import math

        l = 1
        for x in dens:
            l = l * x // math.gcd(l, x)
        g = g * l
        nums = [int(to_fraction(c).numerator) for c in g.coeffs()]
        gg = 0
        for x in nums:
            gg = math.gcd(gg, x)
        return g / gg

    def index(self, f) -> tuple[int, Fraction]:
        """Register f; return (index, c) with f = c * form[index]."""
        g = self._normalize(f)
        key = tuple(sorted(g.to_dict().items()))
        key = tuple((m, str(c)) for m, c in key)
        if key not in self._index:
            self._index[key] = len(self.forms)
            self.forms.append(g)
        c = to_fraction(f.leading_coefficient()) / to_fraction(g.leading_coefficient())
        return self._index[key], c

    def power(self, i: int, e: int):
        k = (i, e)
        if k not in self._pow:
            self._pow[k] = self.forms[i] ** e
        return self._pow[k]


class Loc:
    """num / prod forms[i]^e_i for registered linear forms; no gcd."""

    __slots__ = ("ring", "num", "exps")

    def __init__(self, ring: LambdaRing, num, exps: tuple = ()):
        self.ring = ring
        self.num = num
        # trailing zeros trimmed so equal denominators compare equal
        e = list(exps)
        while e and e[-1] == 0:
            e.pop()
        self.exps = tuple(e)

    @classmethod
    def from_poly(cls, ring, p):
        return cls(ring, ring.poly(p if not isinstance(p, int) else Fraction(p)))

    @classmethod
    def inv_form(cls, ring, f, power: int = 1):
        i, c = ring.forms.index(f)
        e = [0] * (i + 1)
        e[i] = power
        return cls(ring, ring.const(Fraction(1) / c**power), tuple(e))

    def _co(self, other) -> "Loc":
        if isinstance(other, Loc):
            return other
        if isinstance(other, RatFun):
            return Loc.from_ratfun(other)
        return Loc(self.ring, self.ring.poly(other if not isinstance(other, int) else Fraction(other)))

    def _align(self, o: "Loc"):
        n = max(len(self.exps), len(o.exps))
        a = self.exps + (0,) * (n - len(self.exps))
        b = o.exps + (0,) * (n - len(o.exps))
        if a == b:
            return self.num, o.num, a
        m = tuple(max(x, y) for x, y in zip(a, b))
        na, nb = self.num, o.num
        R = self.ring.forms
        for i in range(n):
            if m[i] > a[i]:
                na = na * R.power(i, m[i] - a[i])
            if m[i] > b[i]:
                nb = nb * R.power(i, m[i] - b[i])
        return na, nb, m

    def __add__(self, other):
        o = self._co(other)
        if self.num.is_zero():
            return o
        if o.num.is_zero():
            return self
        na, nb, m = self._align(o)
        return Loc(self.ring, na + nb, m)

    __radd__ = __add__

    def __neg__(self):
        return Loc(self.ring, -self.num, self.exps)

    def __sub__(self, other):
        return self + (-self._co(other))

    def __rsub__(self, other):
        return self._co(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return Loc(self.ring, self.num * self.ring.const(Fraction(other)), self.exps)
        o = self._co(other)
        if self.num.is_zero() or o.num.is_zero():
            return Loc(self.ring, self.ring.zero)
        n = max(len(self.exps), len(o.exps))
        a = self.exps + (0,) * (n - len(self.exps))
        b = o.exps + (0,) * (n - len(o.exps))
        return Loc(self.ring, self.num * o.num, tuple(x + y for x, y in zip(a, b)))

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        return Loc(self.ring, self.num**n, tuple(e * n for e in self.exps))

    def inverse(self) -> "Loc":
        """Invert when num is a constant times a product of registered forms."""
        if self.num.is_zero():
            raise DivisionByZero("inverse of zero")
        c, extra = _split_forms(self.ring, self.num)
        n = max(len(self.exps), len(extra))
        a = self.exps + (0,) * (n - len(self.exps))
        b = extra + (0,) * (n - len(extra))
        # 1/(c prod f^b / prod f^a) = prod f^a / (c prod f^b)
        num = self.ring.const(Fraction(1) / c)
        R = self.ring.forms
        for i in range(n):
            if a[i]:
                num = num * R.power(i, a[i])
        return Loc(self.ring, num, b)

    def __truediv__(self, other):
        return self * self._co(other).inverse()

    def __rtruediv__(self, other):
        return self._co(other) * self.inverse()

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def __eq__(self, other):
        if isinstance(other, (int, Fraction, flint.fmpq_mpoly, Loc, RatFun)):
            return (self - self._co(other)).is_zero()
        return NotImplemented

    def __hash__(self):
        return hash(str(self.reduce()))

    def reduce(self) -> "Loc":
        """Cancel registered forms dividing the numerator."""
        num = self.num
        e = list(self.exps)
        if num.is_zero():
            return Loc(self.ring, num)
        R = self.ring.forms
        for i in range(len(e)):
            while e[i] > 0:
                qq, r = divmod(num, R.forms[i])
                if not r.is_zero():
                    break
                num = qq
                e[i] -= 1
        return Loc(self.ring, num, tuple(e))

    def den_poly(self):
        out = self.ring.one
        for i, e in enumerate(self.exps):
            if e:
                out = out * self.ring.forms.power(i, e)
        return out

    def to_ratfun(self) -> RatFun:
        return RatFun(self.ring, self.num, self.den_poly())

    @classmethod
    def from_ratfun(cls, f: RatFun) -> "Loc":
        c, exps = _split_forms(f.ring, f.den)
        return cls(f.ring, f.num * f.ring.const(Fraction(1) / c), exps)

    def is_poly(self) -> bool:
        return self.reduce().exps == ()

    def to_poly(self):
        r = self.reduce()
        if r.exps:
            raise CoeffError(f"not a polynomial: {self}")
        return r.num

    def degree(self) -> int | None:
        h, d = is_homogeneous(self.num)
        if not h or d is None:
            return None
        return d - sum(self.exps)

    def derivative(self, name: str) -> "Loc":
        """Partial derivative in one generator (forms are linear, so f' is constant)."""
        i = self.ring._names_ctx.index(name)
        out = Loc(self.ring, self.num.derivative(i), self.exps)
        R = self.ring.forms
        for k, e in enumerate(self.exps):
            if not e:
                continue
            c = R.forms[k].derivative(i)
            if c.is_zero():
                continue
            ex = list(self.exps)
            ex[k] += 1
            out = out - Loc(self.ring, self.num * c * e, tuple(ex))
        return out

    def pushforward(self, target: "LambdaRing", images) -> "Loc":
        """Substitute generator i by the target polynomial images[i] (forms must map to forms)."""
        if self.num.is_zero():
            return Loc(target, target.zero)
        num = self.num.compose(*images, ctx=target.ctx) if self.ring.names else target.ctx.constant(self.num.leading_coefficient())
        out = Loc(target, num)
        R = self.ring.forms
        for k, e in enumerate(self.exps):
            if e:
                g = R.forms[k].compose(*images, ctx=target.ctx)
                out = out * Loc.inv_form(target, g, e)
        return out

    def __str__(self):
        return str(self.to_ratfun())

    __repr__ = __str__


def _split_forms(ring: LambdaRing, p) -> tuple[Fraction, tuple]:
    """Write p = c * prod forms^e, registering linear factors as needed."""
    if p.is_constant():
        return to_fraction(p.leading_coefficient()), ()
    R = ring.forms
    exps: dict[int, int] = {}
    rest = p
    for i, f in enumerate(R.forms):
        while not rest.is_constant():
            qq, r = divmod(rest, f)
            if not r.is_zero():
                break
            rest = qq
            exps[i] = exps.get(i, 0) + 1
    if not rest.is_constant():
        c, facs = rest.factor()
        for fac, m in facs:
            if fac.total_degree() != 1:
                raise NotLocalizable(f"denominator factor {fac} is not linear")
            i, cc = R.index(fac)
            exps[i] = exps.get(i, 0) + m
            c = to_fraction(c) * cc**m
        const = to_fraction(c)
    else:
        const = to_fraction(rest.leading_coefficient())
    n = max(exps) + 1 if exps else 0
    return const, tuple(exps.get(i, 0) for i in range(n))


def coerce_scalar(ring: LambdaRing, x, kind: str):
    """Convert int/Fraction/poly/RatFun into the requested representation."""
    if kind == "poly":
        if isinstance(x, RatFun):
            return x.to_poly()
        if isinstance(x, Loc):
            return x.to_poly()
        return ring.poly(x if not isinstance(x, int) else Fraction(x))
    if kind == "loc":
        if isinstance(x, Loc):
            return x
        if isinstance(x, RatFun):
            return Loc.from_ratfun(x)
        return Loc(ring, ring.poly(x if not isinstance(x, int) else Fraction(x)))
    if kind == "ratfun":
        if isinstance(x, RatFun):
            return x
        if isinstance(x, Loc):
            return x.to_ratfun()
        return RatFun(ring, ring.poly(x if not isinstance(x, int) else Fraction(x)))
    raise ValueError(kind)


def scalar_str(x) -> str:
    if isinstance(x, flint.fmpq_mpoly):
        return poly_str(x)
    if isinstance(x, Loc):
        return str(x.reduce())
    return str(x)


# ---------------------------------------------------------------------------
# Branch extensions


class BranchExtension:
    """Adjoin a symbol s subject to a monic relation in s (others are scalars)."""

    def __init__(self, ring: LambdaRing, symbol: str, relation):
        self.ring = ring
        self.symbol = symbol
        self.var = ring._names_ctx.index(symbol)
        self.relation = ring.poly(relation)
        self.degree = self._deg(self.relation)
        if self.degree < 1:
            raise CoeffError("relation must involve the adjoined symbol")
        lead = self._coeff_in_s(self.relation, self.degree)
        if not (lead.is_constant() and lead.leading_coefficient() == 1):
            raise CoeffError("relation must be monic in the adjoined symbol")
        # s^deg = tail
        s = ring.sym(symbol)
        self.tail = s**self.degree - self.relation

    def _deg(self, p) -> int:
        if p.is_zero():
            return -1
        return max(m[self.var] for m in p.monoms())

    def _coeff_in_s(self, p, k):
        d = {}
        for m, c in zip(p.monoms(), p.coeffs()):
            if m[self.var] == k:
                mm = list(m)
                mm[self.var] = 0
                d[tuple(mm)] = c
        return self.ring.ctx.from_dict(d)

    def reduce(self, p):
        """Normal form: degree in s strictly below the relation's degree."""
        p = self.ring.poly(p)
        s = self.ring.sym(self.symbol)
        n = self.degree
        while True:
            d = self._deg(p)
            if d < n:
                return p
            c = self._coeff_in_s(p, d)
            p = p - c * s**d + c * s ** (d - n) * self.tail

    def mul(self, a, b):
        return self.reduce(self.ring.poly(a) * self.ring.poly(b))
