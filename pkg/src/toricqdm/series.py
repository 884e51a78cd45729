"""Truncated power series in Novikov and parameter variables, Laurent in z.

A :class:`Ser` maps a monomial (exponent tuple over the scheme's variables)
to a sparse Laurent polynomial ``{n: value}`` in z.  Values are scalars or
numpy object arrays (vectors, matrices) over one :class:`ScalarKind`.

Every monomial carries a validity window ``(lo, hi)``: the stored
coefficients are exact for ``lo <= n <= hi`` and unknown outside.  A window
of ``(-inf, inf)`` means the Laurent polynomial is exact, which is the
default for monomials without an explicit window.  Products propagate the
windows by the usual support argument, so truncating a z=infinity expansion
from below (or a z=0 expansion from above) never silently corrupts a
coefficient: reading outside the window raises :class:`WindowOverflow` in
strict mode and sets ``lossy`` in permissive mode.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable

import flint
import numpy as np

from .coeffs import Loc, LambdaRing, RatFun, coerce_scalar, iszero, scalar_str

INF = math.inf


class SeriesError(Exception):
    pass


class SchemeMismatch(SeriesError):
    pass


class WindowOverflow(SeriesError):
    pass


class TruncationTooLow(SeriesError):
    pass


class MissingBaseDerivative(SeriesError):
    pass


# ---------------------------------------------------------------------------
# scalars


@dataclass(frozen=True)
class ScalarKind:
    """Which scalar representation a series uses, and over which ring."""

    ring: LambdaRing
    kind: str  # "poly" | "loc" | "ratfun"

    def zero(self):
        if self.kind == "poly":
            return self.ring.zero
        if self.kind == "loc":
            return Loc(self.ring, self.ring.zero)
        return RatFun(self.ring, self.ring.zero)

    def one(self):
        return self.coerce(1)

    def coerce(self, x):
        return coerce_scalar(self.ring, x, self.kind)

    def zeros(self, shape):
        if shape == ():
            return self.zero()
        a = np.empty(shape, dtype=object)
        for idx in np.ndindex(*shape):
            a[idx] = self.zero()
        return a

    def eye(self, n):
        a = self.zeros((n, n))
        for i in range(n):
            a[i, i] = self.one()
        return a

    def array(self, rows):
        # shape from nesting only: numpy would iterate into flint polynomials
        shape = []
        probe = rows
        while isinstance(probe, (list, tuple, np.ndarray)):
            shape.append(len(probe))
            if not len(probe):
                break
            probe = probe[0]
        out = np.empty(tuple(shape), dtype=object)
        for idx in np.ndindex(*shape):
            x = rows
            for i in idx:
                x = x[i]
            out[idx] = self.coerce(x)
        return out


def objvec(items) -> np.ndarray:
    """1-d object array without numpy looking inside the entries."""
    items = list(items)
    out = np.empty(len(items), dtype=object)
    for i, x in enumerate(items):
        out[i] = x
    return out


def vzero(v) -> bool:
    if isinstance(v, np.ndarray):
        return all(iszero(x) for x in v.flat)
    return iszero(v)


def vmul(a, b):
    """Product where at most one side may be an array (flint polys are not broadcast)."""
    if isinstance(a, np.ndarray) and not isinstance(b, np.ndarray):
        return vmap(lambda x: x * b, a)
    if isinstance(b, np.ndarray) and not isinstance(a, np.ndarray):
        return vmap(lambda x: a * x, b)
    return a * b


def vmap(f, v):
    if isinstance(v, np.ndarray):
        out = np.empty(v.shape, dtype=object)
        for idx in np.ndindex(*v.shape):
            out[idx] = f(v[idx])
        return out
    return f(v)


def vscale(v, c):
    """Multiply a value by a scalar (int/Fraction or ring scalar)."""
    if isinstance(c, Fraction):
        if c.denominator == 1:
            c = int(c.numerator)
        else:
            return vmap(lambda x: x * flint.fmpq(c.numerator, c.denominator) if isinstance(x, flint.fmpq_mpoly) else x * c, v)
    if isinstance(v, np.ndarray):
        return vmap(lambda x: x * c, v)
    return v * c


# ---------------------------------------------------------------------------
# variable scheme and truncation box


@dataclass(frozen=True)
class VariableScheme:
    """Series variables: Novikov (modified, divisor-type) first, then parameters.

    ``euler[i]`` marks variables of the form q e^t whose t-derivative is the
    Euler operator; plain parameters are differentiated ordinarily.
    """

    names: tuple
    kinds: tuple  # "nov" | "par"
    weights: tuple  # grading degree (deg z = deg lambda = 1)

    @property
    def n(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    def nov_deg(self, m):
        return sum(e for e, k in zip(m, self.kinds) if k == "nov")

    def par_deg(self, m):
        return sum(e for e, k in zip(m, self.kinds) if k == "par")

    def weight(self, m) -> Fraction:
        return sum((Fraction(w) * e for w, e in zip(self.weights, m)), Fraction(0))

    def order_key(self, m):
        return (self.nov_deg(m) + self.par_deg(m), self.par_deg(m), m)

    def unit(self, name):
        i = self.index(name)
        return tuple(1 if j == i else 0 for j in range(self.n))

    def zero_mono(self):
        return (0,) * self.n

    def mono_str(self, m):
        parts = [f"{nm}^{e}" if e > 1 else nm for nm, e in zip(self.names, m) if e]
        return "*".join(parts) or "1"


@dataclass(frozen=True)
class Box:
    """Per-variable caps plus optional total Novikov / parameter caps."""

    caps: tuple
    nov_total: int | None = None
    par_total: int | None = None

    def contains(self, scheme: VariableScheme, m) -> bool:
        if any(e > c for e, c in zip(m, self.caps)):
            return False
        if self.nov_total is not None and scheme.nov_deg(m) > self.nov_total:
            return False
        if self.par_total is not None and scheme.par_deg(m) > self.par_total:
            return False
        return True

    def meet(self, other: "Box") -> "Box":
        def mn(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return min(a, b)

        return Box(tuple(min(a, b) for a, b in zip(self.caps, other.caps)),
                   mn(self.nov_total, other.nov_total), mn(self.par_total, other.par_total))

    def shrink(self, scheme, name, by=1) -> "Box":
        i = scheme.index(name)
        caps = list(self.caps)
        caps[i] = max(caps[i] - by, -1)
        return Box(tuple(caps), self.nov_total, self.par_total)

    def monos(self, scheme: VariableScheme):
        out = [m for m in itertools.product(*[range(c + 1) for c in self.caps]) if self.contains(scheme, m)]
        out.sort(key=scheme.order_key)
        return out

    def total_degree(self, scheme) -> int:
        ms = self.monos(scheme)
        return max((sum(m) for m in ms), default=0)


@dataclass
class Truncation:
    """Box plus z caps used when building or multiplying series."""

    box: Box
    z_lo: float = -INF
    z_hi: float = INF
    strict: bool = True


def default_window(total_degree: int, z_slack: int = 4) -> int:
    return z_slack * (total_degree + 1)


# ---------------------------------------------------------------------------
# series


def _win_bounds(d: dict, lo, hi):
    """Support bounds used by the product rule (see module docstring)."""
    if hi == INF:
        U = max(d) if d else -INF
    else:
        U = INF
    if lo == -INF:
        L = min(d) if d else INF
    else:
        L = -INF
    return U, L


@dataclass
class Ser:
    scheme: VariableScheme
    box: Box
    sk: ScalarKind
    shape: tuple = ()
    c: dict = field(default_factory=dict)  # mono -> {n: value}
    w: dict = field(default_factory=dict)  # mono -> (lo, hi); absent = exact
    strict: bool = True
    lossy: bool = False

    # -- construction -----------------------------------------------------
    def empty_like(self, shape=None, box=None) -> "Ser":
        return Ser(self.scheme, box or self.box, self.sk, self.shape if shape is None else shape,
                   strict=self.strict, lossy=self.lossy)

    @classmethod
    def constant(cls, scheme, box, sk, value, z: int = 0, strict=True):
        s = cls(scheme, box, sk, value.shape if isinstance(value, np.ndarray) else (), strict=strict)
        if not vzero(value):
            s.c[scheme.zero_mono()] = {z: value}
        return s

    def zero_value(self):
        return self.sk.zeros(self.shape)

    def window(self, m):
        return self.w.get(m, (-INF, INF))

    def set(self, m, n, v):
        if not self.box.contains(self.scheme, m):
            return
        d = self.c.setdefault(m, {})
        if vzero(v):
            d.pop(n, None)
        else:
            d[n] = v

    def add_to(self, m, n, v):
        if not self.box.contains(self.scheme, m) or vzero(v):
            return
        d = self.c.setdefault(m, {})
        if n in d:
            s = d[n] + v
            if vzero(s):
                del d[n]
            else:
                d[n] = s
        else:
            d[n] = v

    def restrict_window(self, m, lo=-INF, hi=INF):
        a, b = self.window(m)
        a, b = max(a, lo), min(b, hi)
        if (a, b) != (-INF, INF):
            self.w[m] = (a, b)
            self.c.setdefault(m, {})
        d = self.c.get(m)
        if d:
            for n in [n for n in d if n < a or n > b]:
                del d[n]

    def copy(self) -> "Ser":
        s = self.empty_like()
        s.c = {m: dict(d) for m, d in self.c.items()}
        s.w = dict(self.w)
        return s

    # -- reading ------------------------------------------------------------
    def known(self, m, n) -> bool:
        if not self.box.contains(self.scheme, m):
            return False
        lo, hi = self.window(m)
        return lo <= n <= hi

    def coeff(self, m, n):
        if not self.known(m, n):
            if self.strict:
                raise WindowOverflow(f"coefficient {self.scheme.mono_str(m)} z^{n} outside valid window {self.window(m)}")
            self.lossy = True
        d = self.c.get(m)
        if d and n in d:
            return d[n]
        return self.zero_value()

    def zcoeff(self, n) -> "Ser":
        """The z^n coefficient as a z-free series."""
        out = self.empty_like()
        for m in self.monos_present():
            v = self.coeff(m, n)
            if not vzero(v):
                out.c[m] = {0: v}
        return out

    def monos_present(self):
        ms = set(self.c) | set(self.w)
        return sorted(ms, key=self.scheme.order_key)

    def items(self):
        for m in sorted(self.c, key=self.scheme.order_key):
            for n in sorted(self.c[m]):
                yield m, n, self.c[m][n]

    def is_zero_known(self) -> bool:
        return all(not d for d in self.c.values())

    def nonzero_keys(self):
        return [(m, n) for m, n, v in self.items()]

    # -- arithmetic -----------------------------------------------------------
    def _check(self, o: "Ser"):
        if self.scheme != o.scheme:
            raise SchemeMismatch(f"{self.scheme.names} vs {o.scheme.names}")
        if self.sk != o.sk:
            raise SchemeMismatch(f"scalar kinds differ: {self.sk} vs {o.sk}")

    def __add__(self, o):
        if not isinstance(o, Ser):
            return self + Ser.constant(self.scheme, self.box, self.sk, o, strict=self.strict)
        self._check(o)
        out = Ser(self.scheme, self.box.meet(o.box), self.sk, self.shape, strict=self.strict,
                  lossy=self.lossy or o.lossy)
        for src in (self, o):
            for m, d in src.c.items():
                for n, v in d.items():
                    out.add_to(m, n, v)
        for m in set(self.w) | set(o.w):
            if not out.box.contains(self.scheme, m):
                continue
            a1, b1 = self.window(m)
            a2, b2 = o.window(m)
            out.restrict_window(m, max(a1, a2), min(b1, b2))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self.empty_like()
        out.c = {m: {n: -v for n, v in d.items()} for m, d in self.c.items()}
        out.w = dict(self.w)
        return out

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def scale(self, c) -> "Ser":
        """Multiply by a scalar or by a constant value (matrix) on the left."""
        out = self.empty_like()
        out.w = dict(self.w)
        for m, d in self.c.items():
            nd = {}
            for n, v in d.items():
                if isinstance(c, np.ndarray):
                    r = c @ v
                else:
                    r = vscale(v, c)
                if not vzero(r):
                    nd[n] = r
            out.c[m] = nd
        if isinstance(c, np.ndarray):
            out.shape = (c @ self.zero_value()).shape if self.shape else c.shape
        return out

    def rscale(self, c) -> "Ser":
        """Multiply on the right by a constant matrix."""
        out = self.empty_like()
        out.w = dict(self.w)
        for m, d in self.c.items():
            out.c[m] = {n: v @ c for n, v in d.items() if not vzero(v @ c)}
        out.shape = (self.zero_value() @ c).shape
        return out

    def zshift(self, k: int) -> "Ser":
        out = self.empty_like()
        out.c = {m: {n + k: v for n, v in d.items()} for m, d in self.c.items()}
        out.w = {m: (lo + k, hi + k) for m, (lo, hi) in self.w.items()}
        return out

    def mul(self, o: "Ser", op: str = "@", z_lo=-INF, z_hi=INF) -> "Ser":
        """Product; op '@' is matrix product, '*' elementwise/scalar.

        Result coefficients with z-power outside [z_lo, z_hi] are not
        computed and the windows record that.
        """
        self._check(o)
        if op == "@" and (self.shape == () or o.shape == ()):
            op = "*"
        box = self.box.meet(o.box)
        zero_prod = self.zero_value() @ o.zero_value() if op == "@" else vmul(self.zero_value(), o.zero_value())
        shape = zero_prod.shape if isinstance(zero_prod, np.ndarray) else ()
        out = Ser(self.scheme, box, self.sk, shape, strict=self.strict, lossy=self.lossy or o.lossy)
        sch = self.scheme
        A = {m: self.c.get(m, {}) for m in set(self.c) | set(self.w)}
        B = {m: o.c.get(m, {}) for m in set(o.c) | set(o.w)}
        Bw = {m: o.window(m) for m in B}
        Bb = {m: _win_bounds(B[m], *Bw[m]) for m in B}
        Bsup = {m: ((min(B[m]), max(B[m])) if B[m] else None) for m in B}
        wins: dict = {}
        for m1, d1 in A.items():
            lo1, hi1 = self.window(m1)
            U1, L1 = _win_bounds(d1, lo1, hi1)
            sup1 = (min(d1), max(d1)) if d1 else None
            for m2, d2 in B.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                if not box.contains(sch, m):
                    continue
                lo2, hi2 = Bw[m2]
                if not d1 and (lo1, hi1) == (-INF, INF):
                    continue
                if not d2 and (lo2, hi2) == (-INF, INF):
                    continue
                U2, L2 = Bb[m2]
                lo = max(lo1 + U2 if lo1 > -INF else -INF, lo2 + U1 if lo2 > -INF else -INF)
                hi = min(hi1 + L2 if hi1 < INF else INF, hi2 + L1 if hi2 < INF else INF)
                if sup1 is not None and Bsup[m2] is not None:
                    smin = sup1[0] + Bsup[m2][0]
                    smax = sup1[1] + Bsup[m2][1]
                    if smin < z_lo:
                        lo = max(lo, z_lo)
                    if smax > z_hi:
                        hi = min(hi, z_hi)
                if m in wins:
                    a, b = wins[m]
                    wins[m] = (max(a, lo), min(b, hi))
                else:
                    wins[m] = (lo, hi)
                if not d1 or not d2:
                    continue
                acc = out.c.setdefault(m, {})
                nlo = max(lo, z_lo)
                nhi = min(hi, z_hi)
                for n1, v1 in d1.items():
                    for n2, v2 in d2.items():
                        n = n1 + n2
                        if n < nlo or n > nhi:
                            continue
                        p = v1 @ v2 if op == "@" else vmul(v1, v2)
                        if n in acc:
                            acc[n] = acc[n] + p
                        else:
                            acc[n] = p
        for m, (lo, hi) in wins.items():
            d = out.c.get(m, {})
            for n in [n for n, v in d.items() if n < lo or n > hi or vzero(v)]:
                del d[n]
            if (lo, hi) != (-INF, INF):
                out.w[m] = (lo, hi)
                out.c.setdefault(m, {})
        return out

    def __matmul__(self, o):
        if isinstance(o, Ser):
            return self.mul(o, "@")
        return self.rscale(o)

    def __rmatmul__(self, c):
        return self.scale(c)

    def __mul__(self, o):
        if isinstance(o, Ser):
            return self.mul(o, "*")
        return self.scale(o)

    __rmul__ = __mul__

    # -- structural -------------------------------------------------------------
    def map_values(self, f: Callable, shape=None, sk=None) -> "Ser":
        out = Ser(self.scheme, self.box, sk or self.sk, self.shape if shape is None else shape,
                  strict=self.strict, lossy=self.lossy)
        out.w = dict(self.w)
        for m, d in self.c.items():
            nd = {}
            for n, v in d.items():
                r = f(v)
                if not vzero(r):
                    nd[n] = r
            out.c[m] = nd
        return out

    def entry(self, *idx) -> "Ser":
        return self.map_values(lambda v: v[idx], shape=())

    def column(self, j) -> "Ser":
        return self.map_values(lambda v: v[:, j], shape=(self.shape[0],))

    def transpose(self) -> "Ser":
        return self.map_values(lambda v: v.T.copy(), shape=tuple(reversed(self.shape)))

    def z_neg(self) -> "Ser":
        """z -> -z."""
        out = self.empty_like()
        out.c = {m: {n: (v if n % 2 == 0 else -v) for n, v in d.items()} for m, d in self.c.items()}
        out.w = dict(self.w)
        return out

    def z_split(self, at: int = 0):
        """(part with z-power < at, part with z-power >= at)."""
        minus = self.empty_like()
        plus = self.empty_like()
        for m in set(self.c) | set(self.w):
            d = self.c.get(m, {})
            lo, hi = self.window(m)
            minus.c[m] = {n: v for n, v in d.items() if n < at}
            plus.c[m] = {n: v for n, v in d.items() if n >= at}
            if (lo, hi) != (-INF, INF):
                minus.w[m] = (lo, INF if hi >= at - 1 else hi)
                plus.w[m] = (-INF if lo <= at else lo, hi)
            for s in (minus, plus):
                if not s.c[m] and m not in s.w:
                    del s.c[m]
        return minus, plus

    def shift(self, mono) -> "Ser":
        """Multiply by the monomial y^mono (terms leaving the box are dropped)."""
        out = self.empty_like()
        for m in set(self.c) | set(self.w):
            mm = tuple(a + b for a, b in zip(m, mono))
            if not self.box.contains(self.scheme, mm):
                continue
            if m in self.c:
                out.c[mm] = dict(self.c[m])
            if m in self.w:
                out.w[mm] = self.w[m]
        return out

    def truncate_box(self, box: Box) -> "Ser":
        out = self.empty_like(box=self.box.meet(box))
        for m in set(self.c) | set(self.w):
            if out.box.contains(self.scheme, m):
                if m in self.c:
                    out.c[m] = dict(self.c[m])
                if m in self.w:
                    out.w[m] = self.w[m]
        return out

    def subs_zero(self, names: Iterable[str]) -> "Ser":
        idx = [self.scheme.index(nm) for nm in names]
        out = self.empty_like()
        for m in set(self.c) | set(self.w):
            if all(m[i] == 0 for i in idx):
                if m in self.c:
                    out.c[m] = dict(self.c[m])
                if m in self.w:
                    out.w[m] = self.w[m]
        return out

    def y0(self):
        """Laurent dict of the constant monomial (must be exact)."""
        m = self.scheme.zero_mono()
        lo, hi = self.window(m)
        return dict(self.c.get(m, {})), (lo, hi)

    def deriv(self, name: str, euler: bool) -> "Ser":
        """Euler operator (modified divisor variable) or ordinary derivative."""
        i = self.scheme.index(name)
        if euler:
            out = self.empty_like()
            for m in set(self.c) | set(self.w):
                if m in self.w:
                    out.w[m] = self.w[m]
                d = self.c.get(m, {})
                if m[i] == 0:
                    if m in self.w:
                        out.c[m] = {}
                    continue
                out.c[m] = {n: vscale(v, m[i]) for n, v in d.items()}
            return out
        box = self.box.shrink(self.scheme, name)
        # boundary monomials lose information unless the total caps allow it
        out = self.empty_like(box=box)
        for m in set(self.c) | set(self.w):
            if m[i] == 0:
                continue
            mm = m[:i] + (m[i] - 1,) + m[i + 1:]
            d = self.c.get(m, {})
            out.c[mm] = {n: vscale(v, m[i]) for n, v in d.items()}
            if m in self.w:
                out.w[mm] = self.w[m]
        # total caps: a mono at the total cap has unknown derivative
        kind = self.scheme.kinds[i]
        tot = self.box.nov_total if kind == "nov" else self.box.par_total
        if tot is not None:
            out.box = Box(out.box.caps, out.box.nov_total if kind == "par" else tot - 1,
                          out.box.par_total if kind == "nov" else tot - 1)
        return out

    def max_z(self):
        vals = [n for d in self.c.values() for n in d]
        return max(vals) if vals else None

    def min_z(self):
        vals = [n for d in self.c.values() for n in d]
        return min(vals) if vals else None

    # -- comparison ----------------------------------------------------------------
    def residual_keys(self, o: "Ser" = None, box: Box | None = None, zrange=None):
        """Known nonzero coefficients of self - o (optionally inside a box)."""
        d = self if o is None else self - o
        out = []
        for m, n, v in d.items():
            if box is not None and not box.contains(self.scheme, m):
                continue
            if zrange is not None and not (zrange[0] <= n <= zrange[1]):
                continue
            if d.known(m, n):
                out.append((m, n))
        return out

    def unknown_in(self, box: Box, zrange) -> list:
        """Keys inside box x zrange that are not known (coverage audit)."""
        bad = []
        for m in box.monos(self.scheme):
            if not self.box.contains(self.scheme, m):
                bad.append((m, None))
                continue
            lo, hi = self.window(m)
            if lo > zrange[0] or hi < zrange[1]:
                bad.append((m, (lo, hi)))
        return bad

    # -- serialization ---------------------------------------------------------
    def to_json(self, basis=None, rows=None, cols=None):
        rec = []
        sch = self.scheme
        for m, n, v in self.items():
            nov = [e for e, k in zip(m, sch.kinds) if k == "nov"]
            par = [e for e, k in zip(m, sch.kinds) if k == "par"]
            if isinstance(v, np.ndarray) and v.ndim == 2:
                co = {}
                for i in range(v.shape[0]):
                    for j in range(v.shape[1]):
                        if not iszero(v[i, j]):
                            ri = rows[i] if rows else str(i)
                            cj = cols[j] if cols else str(j)
                            co[f"{ri},{cj}"] = scalar_str(v[i, j])
            elif isinstance(v, np.ndarray):
                co = {(basis[i] if basis else str(i)): scalar_str(v[i]) for i in range(v.shape[0]) if not iszero(v[i])}
            else:
                co = {"1": scalar_str(v)}
            rec.append({"novikov": nov, "param": par, "z": n, "coeff": co})
        return rec


def series_exp(X: Ser, op: str = "@", z_lo=-INF, z_hi=INF, max_terms: int = 200) -> Ser:
    """exp(X) for X whose constant-monomial part is nilpotent or z-adically small."""
    if X.shape and op == "@":
        one = X.sk.eye(X.shape[0])
    else:
        one = X.sk.one()
    out = Ser.constant(X.scheme, X.box, X.sk, one, strict=X.strict)
    term = out
    for k in range(1, max_terms):
        term = term.mul(X, op, z_lo, z_hi).scale(Fraction(1, k))
        if term.is_zero_known():
            # remaining powers are zero where known; keep their windows
            out = out + term
            return out
        out = out + term
    raise SeriesError("exponential did not terminate")


def series_inverse(X: Ser, z_lo=-INF, z_hi=INF) -> Ser:
    """Inverse of a matrix series whose constant monomial is an exact z-free invertible matrix."""
    m0 = X.scheme.zero_mono()
    d0 = X.c.get(m0, {})
    if set(d0) != {0} or X.window(m0) != (-INF, INF):
        raise SeriesError("leading term must be an exact z-free matrix")
    X0inv = matrix_inverse(d0[0], X.sk)
    N = X.scale(X0inv) - Ser.constant(X.scheme, X.box, X.sk, X.sk.eye(X.shape[0]), strict=X.strict)
    out = Ser.constant(X.scheme, X.box, X.sk, X.sk.eye(X.shape[0]), strict=X.strict)
    term = out
    D = X.box.total_degree(X.scheme)
    for _ in range(D):
        term = -(term.mul(N, "@", z_lo, z_hi))
        if term.is_zero_known() and not term.w:
            break
        out = out + term
    return out.rscale(X0inv)


def matrix_inverse(M, sk: ScalarKind):
    """Gauss-Jordan over the scalar kind (RatFun used internally for polys)."""
    n = M.shape[0]
    work_kind = "ratfun" if sk.kind == "poly" else sk.kind
    wk = ScalarKind(sk.ring, work_kind)
    A = [[wk.coerce(M[i, j]) for j in range(n)] + [wk.coerce(1 if i == j else 0) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = None
        for r in range(col, n):
            if not iszero(A[r][col]):
                piv = r
                break
        if piv is None:
            from .coeffs import DivisionByZero

            raise DivisionByZero("singular matrix")
        A[col], A[piv] = A[piv], A[col]
        inv = A[col][col].inverse()
        A[col] = [x * inv for x in A[col]]
        for r in range(n):
            if r != col and not iszero(A[r][col]):
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = sk.coerce(A[i][n + j])
    return out


@dataclass
class PrefactorData:
    """z^a * prod f_i^{e_i} * exp((lin + sum c_k Log(f_k)) / z), carried beside a series.

    ``powers`` maps a linear-form string to a half-integer exponent; ``exp_lin``
    maps a linear-form string to its coefficient, ``exp_log`` maps
    (coefficient-string, form-string) pairs to multiplicities.
    """

    z_power: Fraction = Fraction(0)
    powers: dict = field(default_factory=dict)
    exp_lin: dict = field(default_factory=dict)
    exp_log: dict = field(default_factory=dict)

    def __mul__(self, o: "PrefactorData") -> "PrefactorData":
        def merge(a, b):
            out = dict(a)
            for k, v in b.items():
                out[k] = out.get(k, 0) + v
                if out[k] == 0:
                    del out[k]
            return out

        return PrefactorData(self.z_power + o.z_power, merge(self.powers, o.powers),
                             merge(self.exp_lin, o.exp_lin), merge(self.exp_log, o.exp_log))

    def inverse(self) -> "PrefactorData":
        return PrefactorData(-self.z_power, {k: -v for k, v in self.powers.items()},
                             {k: -v for k, v in self.exp_lin.items()}, {k: -v for k, v in self.exp_log.items()})

    def is_one(self) -> bool:
        return self.z_power == 0 and not self.powers and not self.exp_lin and not self.exp_log

    def __eq__(self, o):
        return isinstance(o, PrefactorData) and (self * o.inverse()).is_one()

    def to_json(self):
        return {"z_power": str(self.z_power), "powers": {k: str(v) for k, v in sorted(self.powers.items())},
                "exp_lin": {k: str(v) for k, v in sorted(self.exp_lin.items())},
                "exp_log": {f"{a}*Log({b})": str(v) for (a, b), v in sorted(self.exp_log.items())}}


class PrefactorMismatch(SeriesError):
    pass


def combine_prefactored(a: tuple, b: tuple, op: str = "add"):
    """(PrefactorData, Ser) pairs may be added only with equal prefactors."""
    pa, sa = a
    pb, sb = b
    if op == "add":
        if pa != pb:
            raise PrefactorMismatch("prefactors differ")
        return pa, sa + sb
    return pa * pb, sa.mul(sb)


def lambda_shift(L: Ser, Lam, D_of: Callable, base_mul: Callable) -> Ser:
    """Apply z d/dLambda_j termwise: coefficient c at base degree D -> Lam*c + z*Lam(D)*c.

    ``Lam`` is the multiplication matrix of the class on H*(B), ``D_of(m)``
    returns the integer Lam(D) for monomial m.
    """
    out = L.empty_like()
    out.w = {m: (lo + 1 if lo > -INF else lo, hi) for m, (lo, hi) in L.w.items()}
    for m, d in L.c.items():
        k = D_of(m)
        nd: dict = {}
        for n, v in d.items():
            a = base_mul(Lam, v)
            for nn, vv in ((n, a), (n + 1, vscale(v, k))):
                if vzero(vv):
                    continue
                nd[nn] = nd[nn] + vv if nn in nd else vv
        out.c[m] = {n: v for n, v in nd.items() if not vzero(v)}
    return out
