"""Independent sympy oracles for the golden comparisons.

Closed forms are expanded in q through the branch series s of
(x - l1)(x - l2) = q, using truncated series with sympy rational coefficients.
"""

from math import comb

import sympy as sp

l1, l2 = sp.symbols("l1 l2")


def catalan(n):
    return comb(2 * n, n) // (n + 1)


class TS:
    """Truncated q-series with rational-function coefficients."""

    def __init__(self, coeffs, n):
        self.n = n
        self.c = [sp.cancel(x) for x in (list(coeffs) + [0] * n)[:n]]

    def _lift(self, o):
        return o if isinstance(o, TS) else TS([o], self.n)

    def __add__(self, o):
        o = self._lift(o)
        return TS([a + b for a, b in zip(self.c, o.c)], self.n)

    __radd__ = __add__

    def __neg__(self):
        return TS([-a for a in self.c], self.n)

    def __sub__(self, o):
        return self + (-self._lift(o))

    def __rsub__(self, o):
        return self._lift(o) - self

    def __mul__(self, o):
        if not isinstance(o, TS):
            return TS([a * o for a in self.c], self.n)
        return TS([sum(self.c[i] * o.c[k - i] for i in range(k + 1)) for k in range(self.n)], self.n)

    __rmul__ = __mul__

    def inv(self):
        out = [1 / self.c[0]]
        for k in range(1, self.n):
            out.append(sp.cancel(-sum(self.c[i] * out[k - i] for i in range(1, k + 1)) / self.c[0]))
        return TS(out, self.n)

    def __truediv__(self, o):
        return self * (o.inv() if isinstance(o, TS) else sp.Integer(1) / o)

    def __pow__(self, e):
        r = TS([1], self.n)
        for _ in range(e):
            r = r * self
        return r

    def log1p(self):
        """log(1 + self) for self with zero constant term."""
        assert self.c[0] == 0
        out = TS([], self.n)
        term = TS([1], self.n)
        for k in range(1, self.n):
            term = term * self
            out = out + term * sp.Rational((-1) ** (k - 1), k)
        return out


def s_branch(gamma, n):
    """Root of (x - l1)(x - l2) = q near l_gamma, through q^(n-1)."""
    lam, oth = (l1, l2) if gamma == 1 else (l2, l1)
    d = lam - oth
    return TS([lam] + [sp.Integer(-1) ** (k - 1) * catalan(k - 1) / d ** (2 * k - 1) for k in range(1, n)], n)


def f1_jacobians(gamma, qorder=3):
    """{(name, q-power, Q-power, basis): coefficient} for J(phi) and J(P) mod Q^2."""
    n = qorder + 1
    s = s_branch(gamma, n)
    qs = TS([0, 1], n)
    d = 2 * s - l1 - l2
    out = {}

    def put(name, Qp, b, ser):
        for k, c in enumerate(ser.c):
            if c != 0:
                out[(name, k, Qp, b)] = c

    put("phi", 0, "phi", TS([1], n))
    put("phi", 1, "1", -(s - l2) / (2 * d))
    put("phi", 1, "phi", (s - l2) * (6 * s - 5 * l1 - l2) / (12 * d ** 3))
    put("P", 0, "1", s)
    put("P", 0, "phi", (s - l1) / d)
    put("P", 1, "1", qs * (l1 - l2) / (2 * d ** 3))
    put("P", 1, "phi", -(qs * (12 * qs + (l1 - l2) * (4 * s - 5 * l1 + l2))) / (12 * d ** 5))
    return out


def f1_tau_series(gamma, qorder=3):
    """Series part of chi tau_gamma at Q^0 (the q = 0 constant and log atoms removed).

    gamma = 1: 2s - 2 l1 - (l1 - l2) log((s - l2)/(l1 - l2)) + log((s - l2)/(l1 - l2)) phi.
    """
    n = qorder + 1
    s = s_branch(gamma, n)
    lam, oth = (l1, l2) if gamma == 1 else (l2, l1)
    d = lam - oth
    lg = ((s - lam) / d).log1p()  # log((s - oth)/(lam - oth))
    sign = 1 if gamma == 1 else -1
    c1 = 2 * (s - lam) - d * lg
    cphi = lg * sign
    out = {}
    for k in range(n):
        if c1.c[k] != 0:
            out[(k, 0, "1")] = c1.c[k]
        if cphi.c[k] != 0:
            out[(k, 0, "phi")] = cphi.c[k]
    return out


def series_to_dict(S, name=None, basis=("1", "phi")):
    """Loc-valued vector series -> {(name?, q-power, Q-power, basis): sympy coefficient} at zero parameters."""
    out = {}
    loc = {"l1": l1, "l2": l2}
    for rec in S.to_json(basis=list(basis)):
        if any(rec["param"]) or rec["z"] != 0:
            continue
        key = tuple(rec["novikov"])
        for b, v in rec["coeff"].items():
            k = (name,) + key + (b,) if name is not None else key + (b,)
            out[k] = sp.sympify(v, locals=loc)
    return out


def mismatches(mine: dict, ref: dict, keep=lambda k: True):
    keys = sorted((k for k in set(mine) | set(ref) if keep(k)), key=str)
    return [k for k in keys if sp.cancel(mine.get(k, 0) - ref.get(k, 0)) != 0]


def projective_branch(N, j, order):
    """Root of prod_i (x - l_i) = q near l_j (symbols l1..lN), as q-series coefficients."""
    ls = sp.symbols(" ".join(f"l{i}" for i in range(1, N + 1)))
    ls = ls if isinstance(ls, tuple) else (ls,)
    lam = ls[j - 1]
    n = order + 1
    x = TS([lam], n)
    qs = TS([0, 1], n)
    for _ in range(n):
        den = TS([1], n)
        for i, li in enumerate(ls, 1):
            if i != j:
                den = den * (x - li)
        x = lam + qs / den
    return x.c
