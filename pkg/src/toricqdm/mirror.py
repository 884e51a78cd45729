"""Equivariant Landau-Ginzburg model of the toric fiber.

The phase is W = sum_j (xi_j + lambda_j log xi_j) on the torus cut out by
prod_j xi_j^{c_ij} = q_i.  On the chart attached to a fixed point alpha the
coordinates xi_j (j not in alpha) are free and xi_n (n in alpha) are
monomials in q and the free ones.  In log coordinates x_j = log xi_j,

    W^alpha = sum_{n in alpha} xi_n(x) + sum_{j not in alpha} (e^{x_j} - u_j x_j),

so everything depends on lambda only through the weights u_j.  Series are
therefore computed over a ring whose generators are the u_j themselves and
pushed to the lambda ring at the end.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np

from .coeffs import CoeffError, LambdaRing, Loc, scalar_str
from .report import Report


class MirrorError(Exception):
    pass


class NonIntegralExponent(MirrorError):
    pass


class SingularLinearSolve(MirrorError):
    pass


class JetOrderTooLow(MirrorError):
    pass


class DegenerateParameters(MirrorError):
    pass


class Unsupported(MirrorError):
    pass


# ---------------------------------------------------------------------------
# truncated q-series with localized coefficients


class QSeries:
    """Power series in q_1..q_k over one :class:`LambdaRing`, Loc coefficients.

    Exponents are truncated per variable at ``caps``: every stored
    coefficient with exponent inside the caps is exact.
    """

    __slots__ = ("ring", "caps", "c")

    def __init__(self, ring: LambdaRing, caps: tuple, c: dict | None = None):
        self.ring = ring
        self.caps = tuple(caps)
        self.c = {}
        for m, v in (c or {}).items():
            if self._inside(m) and not v.is_zero():
                self.c[m] = v

    # -- construction -----------------------------------------------------
    def _inside(self, m):
        return all(0 <= e <= cap for e, cap in zip(m, self.caps))

    def _loc(self, x) -> Loc:
        if isinstance(x, Loc):
            return x
        return Loc(self.ring, self.ring.poly(Fraction(x) if isinstance(x, int) else x))

    @classmethod
    def const(cls, ring, caps, x) -> "QSeries":
        s = cls(ring, caps)
        v = s._loc(x)
        if not v.is_zero():
            s.c[(0,) * len(caps)] = v
        return s

    @classmethod
    def monomial(cls, ring, caps, m, x=1) -> "QSeries":
        s = cls(ring, caps)
        v = s._loc(x)
        if s._inside(m) and not v.is_zero():
            s.c[tuple(m)] = v
        return s

    def zero(self) -> "QSeries":
        return QSeries(self.ring, self.caps)

    def one(self) -> "QSeries":
        return QSeries.const(self.ring, self.caps, 1)

    @property
    def k(self):
        return len(self.caps)

    # -- arithmetic -----------------------------------------------------------
    def _co(self, o) -> "QSeries":
        if isinstance(o, QSeries):
            if o.ring is not self.ring:
                raise MirrorError("q-series over different rings")
            return o
        return QSeries.const(self.ring, self.caps, o)

    def __add__(self, o):
        o = self._co(o)
        caps = tuple(min(a, b) for a, b in zip(self.caps, o.caps))
        out = dict(self.c)
        for m, v in o.c.items():
            out[m] = out[m] + v if m in out else v
        return QSeries(self.ring, caps, out)

    __radd__ = __add__

    def __neg__(self):
        return QSeries(self.ring, self.caps, {m: -v for m, v in self.c.items()})

    def __sub__(self, o):
        return self + (-self._co(o))

    def __rsub__(self, o):
        return self._co(o) - self

    def __mul__(self, o):
        if isinstance(o, (int, Fraction)):
            return QSeries(self.ring, self.caps, {m: v * o for m, v in self.c.items()})
        if isinstance(o, Loc):
            return QSeries(self.ring, self.caps, {m: v * o for m, v in self.c.items()})
        o = self._co(o)
        caps = tuple(min(a, b) for a, b in zip(self.caps, o.caps))
        out: dict = {}
        for m1, v1 in self.c.items():
            for m2, v2 in o.c.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                if any(e > cap for e, cap in zip(m, caps)):
                    continue
                p = v1 * v2
                out[m] = out[m] + p if m in out else p
        return QSeries(self.ring, caps, out)

    __rmul__ = __mul__

    def const_term(self) -> Loc:
        return self.c.get((0,) * self.k, Loc(self.ring, self.ring.zero))

    def tail(self) -> "QSeries":
        return QSeries(self.ring, self.caps, {m: v for m, v in self.c.items() if any(m)})

    def _powers_of_tail(self, t: "QSeries"):
        """Yield t^0, t^1, ... until the truncation kills them."""
        p = self.one()
        while not p.is_zero():
            yield p
            p = p * t

    def inverse(self) -> "QSeries":
        c0 = self.const_term()
        if c0.is_zero():
            raise SingularLinearSolve("q-series with zero constant term")
        c0i = c0.inverse()
        t = self.tail() * c0i
        out = self.zero()
        for k, p in enumerate(self._powers_of_tail(t)):
            out = out + (p if k % 2 == 0 else -p)
        return out * c0i

    def __pow__(self, n: int):
        if n < 0:
            return self.inverse() ** (-n)
        out = self.one()
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def pow_frac(self, e: Fraction) -> "QSeries":
        """(1 + t)^e for a series with constant term 1."""
        if not (self.const_term() - 1).is_zero():
            raise MirrorError("fractional power needs constant term 1")
        t = self.tail()
        out = self.zero()
        binom = Fraction(1)
        for k, p in enumerate(self._powers_of_tail(t)):
            out = out + p * binom
            binom = binom * (Fraction(e) - k) / (k + 1)
        return out

    def log1p(self) -> "QSeries":
        """log(1 + self) for a series without constant term."""
        if not self.const_term().is_zero():
            raise MirrorError("log1p needs a series without constant term")
        out = self.zero()
        for k, p in enumerate(self._powers_of_tail(self)):
            if k:
                out = out + p * Fraction(1 if k % 2 else -1, k)
        return out

    def exp(self) -> "QSeries":
        if not self.const_term().is_zero():
            raise MirrorError("exp needs a series without constant term")
        out = self.zero()
        fact = 1
        for k, p in enumerate(self._powers_of_tail(self)):
            if k:
                fact *= k
            out = out + p * Fraction(1, fact)
        return out

    # -- structure ---------------------------------------------------------------
    def map(self, f, ring=None) -> "QSeries":
        return QSeries(ring or self.ring, self.caps, {m: f(v) for m, v in self.c.items()})

    def derivative(self, name: str) -> "QSeries":
        return self.map(lambda v: v.derivative(name))

    def euler(self, i: int) -> "QSeries":
        """q_i d/dq_i."""
        return QSeries(self.ring, self.caps, {m: v * m[i] for m, v in self.c.items() if m[i]})

    def pushforward(self, target: LambdaRing, images) -> "QSeries":
        return QSeries(target, self.caps, {m: v.pushforward(target, images) for m, v in self.c.items()})

    def coeff(self, m) -> Loc:
        if not self._inside(m):
            raise MirrorError(f"q^{m} is beyond the caps {self.caps}")
        return self.c.get(tuple(m), Loc(self.ring, self.ring.zero))

    def is_zero(self) -> bool:
        return all(v.is_zero() for v in self.c.values())

    def truncate(self, caps) -> "QSeries":
        caps = tuple(min(a, b) for a, b in zip(self.caps, caps))
        return QSeries(self.ring, caps, self.c)

    def __eq__(self, o):
        if not isinstance(o, QSeries):
            return self.is_zero() if o == 0 else NotImplemented
        return (self - o).is_zero()

    __hash__ = None

    def items(self):
        return sorted(self.c.items())

    def to_json(self):
        return {"caps": list(self.caps),
                "terms": [{"q": list(m), "coeff": scalar_str(v)} for m, v in self.items()]}

    def __str__(self):
        parts = []
        for m, v in self.items():
            mono = "*".join(f"q{i + 1}^{e}" if self.k > 1 else f"q^{e}" for i, e in enumerate(m) if e)
            parts.append(f"({scalar_str(v)})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts) or "0"

    __repr__ = __str__


def qmatrix_inverse(M):
    """Gauss-Jordan inverse of a square list-of-lists of QSeries; also returns the determinant."""
    n = len(M)
    one = M[0][0].one()
    A = [list(row) + [one if i == j else one.zero() for j in range(n)] for i, row in enumerate(M)]
    det = one
    for col in range(n):
        piv = next((r for r in range(col, n) if not A[r][col].const_term().is_zero()), None)
        if piv is None:
            raise SingularLinearSolve("leading matrix is singular")
        if piv != col:
            A[col], A[piv] = A[piv], A[col]
            det = -det
        p = A[col][col]
        det = det * p
        inv = p.inverse()
        A[col] = [x * inv for x in A[col]]
        for r in range(n):
            if r != col and not A[r][col].is_zero():
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    return [row[n:] for row in A], det


# ---------------------------------------------------------------------------
# chart


def _frac_inverse(M):
    from .toric import frac_inverse

    return frac_inverse(M)


@dataclass
class LGModel:
    c: list
    alpha: tuple
    N: int
    k: int
    cinv: list  # rows n in alpha (alpha order), columns i
    cac: list  # rows n in alpha, columns j = 1..N
    nondiv: tuple
    integral: bool
    uring: LambdaRing
    lam_ring: LambdaRing
    u_forms: dict  # j -> linear form in the lambda ring

    def u_name(self, j):
        return f"u{j}"

    def u(self, j) -> Loc:
        return Loc(self.uring, self.uring.sym(self.u_name(j)))

    def lambda_images(self):
        """Images of the u-ring generators under u_j -> u_j^alpha."""
        return [self.u_forms[j] for j in self.nondiv]

    def to_lambda(self, x):
        if isinstance(x, QSeries):
            return x.pushforward(self.lam_ring, self.lambda_images())
        return x.pushforward(self.lam_ring, self.lambda_images())

    def xi_exponents(self, a):
        """(q exponents, {j: exponent of xi_j}) for the a-th element of alpha."""
        return tuple(self.cinv[a]), {j: -self.cac[a][j - 1] for j in self.nondiv}

    def substitution_check(self) -> Report:
        """prod_j xi_j^{c_ij} = q_i as an identity of exponent vectors (log-linear)."""
        bad = []
        for i in range(self.k):
            q_exp = [Fraction(0)] * self.k
            x_exp = {j: Fraction(0) for j in self.nondiv}
            for a, n in enumerate(self.alpha):
                qe, xe = self.xi_exponents(a)
                for i2 in range(self.k):
                    q_exp[i2] += self.c[i][n - 1] * qe[i2]
                for j in self.nondiv:
                    x_exp[j] += self.c[i][n - 1] * xe[j]
            for j in self.nondiv:
                x_exp[j] += self.c[i][j - 1]
            if q_exp != [Fraction(int(i == i2)) for i2 in range(self.k)] or any(x_exp.values()):
                bad.append((f"relation {i + 1}", f"q^{q_exp} xi^{x_exp}"))
        return Report("chart substitution", not bad, bad)

    def describe(self) -> dict:
        out = {}
        for a, n in enumerate(self.alpha):
            qe, xe = self.xi_exponents(a)
            out[f"xi{n}"] = {"q": [str(x) for x in qe], "xi": {f"xi{j}": str(e) for j, e in xe.items() if e}}
        return {"alpha": list(self.alpha), "integral": self.integral, "exponents": out,
                "u": {f"u{j}": scalar_str(f) for j, f in self.u_forms.items()}}


def chart_build(fiber, alpha, strict: bool = True) -> LGModel:
    """Chart of the mirror torus at the fixed point alpha (1-based indices).

    ``fiber`` is a ToricBundle or the integer matrix c.
    """
    c = fiber.c if hasattr(fiber, "c") else [list(map(int, row)) for row in fiber]
    k, N = len(c), len(c[0])
    alpha = tuple(sorted(int(x) for x in alpha))
    if len(alpha) != k:
        raise MirrorError(f"chart needs {k} indices, got {alpha}")
    ca = [[c[i][n - 1] for n in alpha] for i in range(k)]
    inv = _frac_inverse(ca)
    if inv is None:
        raise SingularLinearSolve(f"c_alpha singular for alpha={alpha}")
    if any(x < 0 for row in inv for x in row):
        raise MirrorError(f"negative q-exponent in the chart alpha={alpha}")
    cac = [[sum(inv[a][i] * c[i][j] for i in range(k)) for j in range(N)] for a in range(k)]
    nondiv = tuple(j for j in range(1, N + 1) if j not in alpha)
    integral = all(x.denominator == 1 for row in inv for x in row) and \
        all(x.denominator == 1 for row in cac for x in row)
    if strict and not integral:
        raise NonIntegralExponent(f"chart alpha={alpha} has fractional exponents")
    lam = LambdaRing(N)
    u_forms = {}
    for j in nondiv:
        coeffs = {n: cac[a][j - 1] for a, n in enumerate(alpha)}
        coeffs[j] = coeffs.get(j, 0) - 1
        u_forms[j] = lam.linear(coeffs)
        lam.forms.index(u_forms[j])
    uring = LambdaRing(0, tuple(f"u{j}" for j in nondiv))
    for j in nondiv:
        uring.forms.index(uring.sym(f"u{j}"))
    return LGModel(c, alpha, N, k, inv, cac, nondiv, integral, uring, lam, u_forms)


# ---------------------------------------------------------------------------
# critical branch


@dataclass
class CriticalBranch:
    model: LGModel
    caps: tuple
    rho: dict  # j -> QSeries over the u-ring
    xi: dict  # n -> QSeries over the u-ring (xi_n evaluated on the branch)

    def rho_lambda(self, j) -> QSeries:
        return self.model.to_lambda(self.rho[j])

    def xi_lambda(self, n) -> QSeries:
        return self.model.to_lambda(self.xi[n])

    def s_coords(self) -> list:
        """s_i = sum_{n in alpha} (c_alpha^{-1})_{ni} (xi_n + lambda_n), lambda ring."""
        m = self.model
        R = m.lam_ring
        out = []
        for i in range(m.k):
            s = QSeries(R, self.caps)
            for a, n in enumerate(m.alpha):
                w = m.cinv[a][i]
                if w:
                    s = s + (self.xi_lambda(n) + Loc(R, R.lam(n))) * w
            out.append(s)
        return out

    def residual_report(self) -> Report:
        """xi_j dW/dxi_j on the branch, j not in alpha."""
        m = self.model
        bad = []
        for j in m.nondiv:
            r = self.rho[j] - m.u(j)
            for a, n in enumerate(m.alpha):
                if m.cac[a][j - 1]:
                    r = r - self.xi[n] * m.cac[a][j - 1]
            for mono, v in r.items():
                bad.append((f"j={j} q^{mono}", scalar_str(v)))
        return Report(f"critical equations alpha={m.alpha}", not bad, bad)

    def homogeneity_report(self) -> Report:
        m = self.model
        degq = [sum(row) for row in m.c]
        bad = []
        for j in m.nondiv:
            if not (self.rho[j].const_term() - m.u(j)).is_zero():
                bad.append((f"rho_{j}(0)", "is not u_j"))
            for mono, v in self.rho[j].items():
                want = 1 - sum(d * g for d, g in zip(mono, degq))
                if v.degree() != want:
                    bad.append((f"rho_{j} q^{mono}", f"degree {v.degree()} != {want}"))
        return Report(f"branch homogeneity alpha={m.alpha}", not bad, bad)

    def s_relation_report(self) -> Report:
        """With xi_j := sum_i c_ij s_i - lambda_j, prod_j xi_j^{c_ij} = q_i."""
        m = self.model
        R = m.lam_ring
        s = self.s_coords()
        xis = {}
        for j in range(1, m.N + 1):
            v = QSeries(R, self.caps) - Loc(R, R.lam(j))
            for i in range(m.k):
                if m.c[i][j - 1]:
                    v = v + s[i] * m.c[i][j - 1]
            xis[j] = v
        bad = []
        for i in range(m.k):
            lhs = QSeries.const(R, self.caps, 1)
            rhs = QSeries.monomial(R, self.caps, tuple(int(a == i) for a in range(m.k)))
            for j in range(1, m.N + 1):
                e = m.c[i][j - 1]
                if e > 0:
                    lhs = lhs * xis[j] ** e
                elif e < 0:
                    rhs = rhs * xis[j] ** (-e)
            for mono, v in (lhs - rhs).items():
                bad.append((f"relation {i + 1} q^{mono}", scalar_str(v)))
        return Report(f"critical scheme relations alpha={m.alpha}", not bad, bad)

    def to_json(self):
        return {"alpha": list(self.model.alpha),
                "rho": {f"rho{j}": self.rho_lambda(j).to_json() for j in self.model.nondiv}}


def _xi_on(m: LGModel, rho: dict, caps, a) -> QSeries:
    qe, xe = m.xi_exponents(a)
    out = QSeries.monomial(m.uring, caps, tuple(int(e) for e in qe))
    for j, e in xe.items():
        if e:
            out = out * rho[j] ** int(e)
    return out


def critical_branch(model: LGModel, order) -> CriticalBranch:
    """Distinguished critical branch rho_j = u_j + O(q), by fixed-point iteration.

    The map delta -> sum_n cac_nj xi_n(u + delta) raises q-adic order by one
    each step because every xi_n carries a positive power of q.
    """
    if not model.integral:
        raise NonIntegralExponent("branch iteration needs integral chart exponents")
    caps = tuple(order) if isinstance(order, (tuple, list)) else (int(order),) * model.k
    if any(x < 0 for x in caps):
        raise MirrorError("order must be non-negative")
    R = model.uring
    rho = {j: QSeries.const(R, caps, model.u(j)) for j in model.nondiv}
    for _ in range(sum(caps) + 2):
        xi = {n: _xi_on(model, rho, caps, a) for a, n in enumerate(model.alpha)}
        new = {}
        for j in model.nondiv:
            v = QSeries.const(R, caps, model.u(j))
            for a, n in enumerate(model.alpha):
                if model.cac[a][j - 1]:
                    v = v + xi[n] * model.cac[a][j - 1]
            new[j] = v
        if all(new[j] == rho[j] for j in model.nondiv):
            break
        rho = new
    xi = {n: _xi_on(model, rho, caps, a) for a, n in enumerate(model.alpha)}
    return CriticalBranch(model, caps, rho, xi)


# ---------------------------------------------------------------------------
# formal Gaussian integration


def _mono_fact(kappa):
    return math.prod(math.factorial(e) for e in kappa)


def gaussian_moments(cov, zero):
    """Memoized E[x^kappa] for a centered Gaussian with covariance ``cov``."""
    n = len(cov)
    memo = {(0,) * n: None}

    def E(kappa):
        kappa = tuple(kappa)
        if kappa in memo:
            v = memo[kappa]
            return v
        if sum(kappa) % 2:
            memo[kappa] = zero
            return zero
        i = next(a for a, e in enumerate(kappa) if e)
        rest = list(kappa)
        rest[i] -= 1
        acc = zero
        for j in range(n):
            if rest[j]:
                sub = list(rest)
                sub[j] -= 1
                ev = E(sub)
                if ev is None:  # E[1] = 1
                    acc = acc + cov[i][j] * rest[j]
                elif not _is_zero(ev):
                    acc = acc + cov[i][j] * ev * rest[j]
        memo[kappa] = acc
        return acc

    return E


def _is_zero(x):
    return x == 0 if isinstance(x, (int, Fraction)) else x.is_zero()


def gaussian_expectation(jets: dict, cov, order_z: int, one, zero) -> list:
    """a_0..a_Z of E[exp(V/z)] with V = sum_{|k|>=3} jets[k] x^k / k!.

    ``cov`` is the z-free covariance: <x_i x_j> = z cov[i][j].  A term
    x^kappa z^{-v} contributes at z-power |kappa|/2 - v; every vertex raises
    that weight by at least 1/2, so terms above order_z are pruned.
    """
    n = len(cov)
    need = 2 * order_z + 2
    have = max((sum(k) for k in jets), default=0)
    if order_z > 0 and have < need and any(sum(k) == have for k in jets):
        # jets of the top order are required unless they are identically zero
        raise JetOrderTooLow(f"need jets to order {need}, have {have}")
    V = {tuple(k): v * Fraction(1, _mono_fact(k)) for k, v in jets.items() if sum(k) >= 3 and not _is_zero(v)}
    V = {k: v for k, v in V.items() if Fraction(sum(k), 2) - 1 <= order_z}
    total = {((0,) * n, 0): one}
    layer = dict(total)
    for step in range(1, 2 * order_z + 1):
        nxt: dict = {}
        for (kap, v), c in layer.items():
            for kv, cv in V.items():
                kk = tuple(a + b for a, b in zip(kap, kv))
                if Fraction(sum(kk), 2) - (v + 1) > order_z:
                    continue
                key = (kk, v + 1)
                p = c * cv * Fraction(1, step)
                nxt[key] = nxt[key] + p if key in nxt else p
        layer = nxt
        if not layer:
            break
        for key, c in layer.items():
            total[key] = total[key] + c if key in total else c
    E = gaussian_moments(cov, zero)
    out = [zero] * (order_z + 1)
    for (kap, v), c in total.items():
        s = sum(kap)
        if s % 2:
            continue
        w = s // 2 - v
        if 0 <= w <= order_z:
            ev = E(kap)
            term = c if ev is None else c * ev
            out[w] = out[w] + term
    return out


def gamma_stationary_phase(order_z: int) -> list:
    """Normalized coefficients a_n * nu^n for the phase -xi + nu log xi at xi = nu.

    In x = log xi the phase is -e^x + nu x; every jet of order >= 2 at the
    critical point equals -nu and the covariance is 1/nu.
    """
    R = LambdaRing(0, ("nu",))
    nu = Loc(R, R.sym("nu"))
    nu_inv = Loc.inv_form(R, R.sym("nu"))
    jets = {(k,): -nu for k in range(3, 2 * order_z + 3)}
    a = gaussian_expectation(jets, [[nu_inv]], order_z, Loc(R, R.one), Loc(R, R.zero))
    out = []
    for nn, an in enumerate(a):
        v = (an * nu**nn).reduce()
        if not v.is_poly() or not v.to_poly().is_constant():
            raise MirrorError(f"Gamma coefficient {nn} is not a pure power of nu: {v}")
        c = v.to_poly().leading_coefficient() if not v.to_poly().is_zero() else 0
        out.append(Fraction(int(c.p), int(c.q)) if c != 0 else Fraction(0))
    return out


# ---------------------------------------------------------------------------
# stationary phase on the branch


@dataclass
class StationaryPhase:
    branch: CriticalBranch
    order_z: int
    F: QSeries  # normalized phase, u-ring
    A: list  # amplitudes A_0..A_Z, u-ring
    a: list  # raw Wick coefficients a_n
    hessian_det: QSeries
    log_atoms: list = field(default_factory=list)  # j for the constants u_j - u_j log u_j

    @property
    def model(self):
        return self.branch.model

    def F_lambda(self) -> QSeries:
        return self.model.to_lambda(self.F)

    def A_lambda(self, n) -> QSeries:
        return self.model.to_lambda(self.A[n])

    def g_alias(self) -> dict:
        """The G/H normalization: G = F + sum_j (u_j - u_j log u_j), H_n = A_n prod u_j^{-1/2}.

        The constants are kept as symbolic atoms, never expanded.
        """
        return {"G_series": self.F_lambda(), "G_constants": [f"u{j} - u{j}*log(u{j})" for j in self.log_atoms],
                "H_prefactor": {f"u{j}": Fraction(-1, 2) for j in self.log_atoms},
                "H_series": [self.A_lambda(n) for n in range(self.order_z + 1)]}

    def envelope_report(self) -> Report:
        """q_i dF/dq_i equals the explicit q_i-derivative of W^alpha on the branch."""
        m = self.model
        bad = []
        for i in range(m.k):
            lhs = self.F.euler(i)
            rhs = self.F.zero()
            for a, n in enumerate(m.alpha):
                if m.cinv[a][i]:
                    rhs = rhs + self.branch.xi[n] * m.cinv[a][i]
            for mono, v in (lhs - rhs).items():
                bad.append((f"i={i + 1} q^{mono}", scalar_str(v)))
        return Report(f"envelope identity alpha={m.alpha}", not bad, bad)

    def normalization_report(self) -> Report:
        bad = []
        zero = (0,) * self.model.k
        if not self.F.coeff(zero).is_zero():
            bad.append(("F(0)", scalar_str(self.F.coeff(zero))))
        if not (self.A[0].coeff(zero) - 1).is_zero():
            bad.append(("A_0(0)", scalar_str(self.A[0].coeff(zero))))
        for n in range(1, len(self.A)):
            if not self.A[n].coeff(zero).is_zero() and self.model.N - self.model.k == 0:
                bad.append((f"A_{n}(0)", "nonzero"))
        return Report(f"stationary phase normalization alpha={self.model.alpha}", not bad, bad)


def branch_jets(branch: CriticalBranch, max_order: int) -> dict:
    """Taylor coefficients f_kappa of W^alpha at the branch, 2 <= |kappa| <= max_order."""
    m = branch.model
    nv = len(m.nondiv)
    jets = {}
    for deg in range(2, max_order + 1):
        for kap in itertools.product(range(deg + 1), repeat=nv):
            if sum(kap) != deg:
                continue
            v = QSeries(m.uring, branch.caps)
            for a, n in enumerate(m.alpha):
                w = math.prod((-m.cac[a][j - 1]) ** e for j, e in zip(m.nondiv, kap))
                if w:
                    v = v + branch.xi[n] * Fraction(w)
            nz = [t for t, e in enumerate(kap) if e]
            if len(nz) == 1:
                v = v + branch.rho[m.nondiv[nz[0]]]
            jets[kap] = v
    return jets


def stationary_phase(model: LGModel, branch: CriticalBranch, order_z: int) -> StationaryPhase:
    R = model.uring
    caps = branch.caps
    nv = len(model.nondiv)
    one = QSeries.const(R, caps, 1)
    zero = QSeries(R, caps)
    if nv == 0:
        # the fiber is a point: no integral, F = 0 and A_0 = 1
        return StationaryPhase(branch, order_z, zero, [one] + [zero] * order_z, [one] + [zero] * order_z, one, [])
    jets = branch_jets(branch, 2 * order_z + 2)
    H = [[jets[tuple(int(t == a) + int(t == b) for t in range(nv))] for b in range(nv)] for a in range(nv)]
    Hinv, det = qmatrix_inverse(H)
    cov = [[-x for x in row] for row in Hinv]
    a = gaussian_expectation({k: v for k, v in jets.items() if sum(k) >= 3}, cov, order_z, one, zero)
    # F = sum_n xi_n + sum_j (rho_j - u_j - u_j log(1 + delta_j / u_j))
    F = zero
    for n in model.alpha:
        F = F + branch.xi[n]
    uprod = Loc(R, R.one)
    for j in model.nondiv:
        u = model.u(j)
        uprod = uprod * u
        delta = branch.rho[j] - u
        F = F + delta - (delta * u.inverse()).log1p() * u
    scale = (det * uprod.inverse()).pow_frac(Fraction(-1, 2))
    A = [x * scale for x in a]
    return StationaryPhase(branch, order_z, F, A, a, det, list(model.nondiv))


# ---------------------------------------------------------------------------
# numeric critical count (projective-space fibers)


@dataclass
class CriticalCount:
    roots: list
    residuals: list
    count: int
    expected: int

    def to_json(self):
        return {"roots": [[float(r.real), float(r.imag)] for r in self.roots],
                "residuals": [float(x) for x in self.residuals], "count": self.count, "expected": self.expected}


def critical_count_numeric(fiber, q: complex, lam, tol: float = 1e-9, sep_tol: float = 1e-6) -> CriticalCount:
    """Count critical points of W for a projective-space fiber: roots of prod_j (x - lambda_j) = q."""
    c = fiber.c if hasattr(fiber, "c") else fiber
    if len(c) != 1 or any(x != 1 for x in c[0]):
        raise Unsupported("numeric critical count is implemented for projective-space fibers only")
    N = len(c[0])
    lam = [complex(x) for x in lam]
    if len(lam) != N:
        raise MirrorError("need one lambda value per coordinate")
    coeffs = np.poly(np.array(lam, dtype=complex)).astype(complex)
    coeffs[-1] -= q
    roots = np.roots(coeffs)
    poly = np.poly1d(coeffs)
    dpoly = poly.deriv()
    polished = []
    for r in roots:
        for _ in range(3):  # Newton polish
            d = dpoly(r)
            if d == 0:
                break
            r = r - poly(r) / d
        polished.append(complex(r))
    scale = max(1.0, max(abs(r) for r in polished))
    for a, b in itertools.combinations(polished, 2):
        if abs(a - b) < sep_tol * scale:
            raise DegenerateParameters(f"repeated critical point near {a}: parameters on the discriminant")
    residuals = [abs(poly(r)) for r in polished]
    count = sum(1 for x in residuals if x < tol)
    return CriticalCount(polished, residuals, count, N)


def generic_samples(N: int, count: int, seed: int):
    """Random (q, lambda) pairs away from the discriminant."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        lam = rng.normal(size=N) + 1j * rng.normal(size=N)
        q = complex(rng.normal() + 1j * rng.normal())
        out.append((q, [complex(x) for x in lam]))
    return out
