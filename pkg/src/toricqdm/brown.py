"""Brown's I-function, its big version, the Gamma series and the M-matrix.

Two expansions are used and never mixed inside one series:

* the E side lives at z = infinity with polynomial coefficients.  The
  stored matrix is ``Lt = exp(-(Pt + tau)/z) L^I`` written in the variables
  y = (q e^t, Q e^tau, sigma), so t and tau only enter through y;
* the fixed-point side lives at z = 0 with localized coefficients.  Each
  fixed point alpha carries the scalar prefactor
  prod_j u_j^{-1/2} exp((u_j - U_j log u_j)/z) as :class:`PrefactorData`;
  every series stored here is what remains after factoring it out.

Column (i, j) of Lt at the monomial (d, D, kappa) is

    Theta_ij * prod_S Theta_S^kappa / kappa! z^{-|kappa|} * hyp_{d,D} * pi^* Jt_D

with Theta_ij = T_i(P + z d) (phi_j + z D_j), hyp the ratio of shifted
products of U_j + m z and Jt_D the base J-coefficient.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coeffs import Loc, LambdaRing, scalar_str
from .mirror import QSeries, chart_build, critical_branch, stationary_phase
from .report import Report, Timer
from .series import (INF, Box, MissingBaseDerivative, PrefactorData, PrefactorMismatch, ScalarKind, Ser,
                     TruncationTooLow, VariableScheme, WindowOverflow, default_window, series_exp, vscale, vzero)
from .toric import ToricBundle


class BrownError(Exception):
    pass


# ---------------------------------------------------------------------------
# Laurent dictionaries {z-power: array}


def ld_mul(A: dict, B: dict, lo=-INF, hi=INF) -> dict:
    out: dict = {}
    for a, x in A.items():
        for b, y in B.items():
            n = a + b
            if n < lo or n > hi:
                continue
            p = x @ y
            out[n] = out[n] + p if n in out else p
    return {n: v for n, v in out.items() if not vzero(v)}


def ld_add(A: dict, B: dict) -> dict:
    out = dict(A)
    for n, v in B.items():
        out[n] = out[n] + v if n in out else v
    return {n: v for n, v in out.items() if not vzero(v)}


def ld_scale(A: dict, c) -> dict:
    return {n: vscale(v, c) for n, v in A.items() if not vzero(vscale(v, c))}


def ld_shift(A: dict, k: int) -> dict:
    return {n + k: v for n, v in A.items()}


def _minpow(*ds):
    vals = [n for d in ds for n in d]
    return min(vals) if vals else 0


def _maxpow(*ds):
    vals = [n for d in ds for n in d]
    return max(vals) if vals else 0


# ---------------------------------------------------------------------------
# layout: variables, box and column directions


@dataclass
class Layout:
    bundle: ToricBundle
    scheme: VariableScheme
    box: Box
    q_names: list
    Q_names: list
    s_names: dict  # (i, j) -> name
    z_slack: int = 4
    strict: bool = True

    @property
    def S(self):
        return sorted(self.s_names)

    def split(self, m):
        sch = self.scheme
        d = tuple(m[sch.index(n)] for n in self.q_names)
        D = tuple(m[sch.index(n)] for n in self.Q_names)
        kap = {p: m[sch.index(n)] for p, n in self.s_names.items() if m[sch.index(n)]}
        return d, D, kap

    def mono(self, d=None, D=None, kappa=None):
        sch = self.scheme
        m = [0] * sch.n
        for n, e in zip(self.q_names, d or ()):
            m[sch.index(n)] = e
        for n, e in zip(self.Q_names, D or ()):
            m[sch.index(n)] = e
        for p, e in (kappa or {}).items():
            m[sch.index(self.s_names[p])] = e
        return tuple(m)

    def floor(self) -> int:
        return -default_window(self.box.total_degree(self.scheme), self.z_slack)

    def direction(self, a):
        """(name of the y-variable, euler?) for the L^I column a; None for tau_0."""
        kind, idx = self.bundle.direction(a)
        if kind == "t":
            return self.q_names[idx - 1], True
        if kind == "tau":
            if idx == 0:
                return None, True
            if idx > self.bundle.r:
                raise MissingBaseDerivative(f"tau_{idx} is not a divisor direction")
            return self.Q_names[idx - 1], True
        return self.s_names[idx], False

    def nov_box(self) -> Box:
        """The box with all parameters set to zero."""
        caps = tuple(c if k == "nov" else 0 for c, k in zip(self.box.caps, self.scheme.kinds))
        return Box(caps, self.box.nov_total, 0)


def make_layout(bundle: ToricBundle, order=2, param_order: int = 1, z_slack: int = 4, strict: bool = True,
                nov_total=None) -> Layout:
    """Variables q (or q1..), Q (or Q1..), then one parameter per element of S."""
    k, r = bundle.k, bundle.r
    q_names = ["q"] if k == 1 else [f"q{i}" for i in range(1, k + 1)]
    Q_names = ["Q"] if r == 1 else [f"Q{b}" for b in range(1, r + 1)]
    if r == 0:
        Q_names = []
    s_names = {p: f"s{p[0]}{p[1]}" for p in bundle.sigma_set()}
    names = q_names + Q_names + [s_names[p] for p in sorted(s_names)]
    kinds = ["nov"] * (len(q_names) + len(Q_names)) + ["par"] * len(s_names)
    weights = [bundle.deg_q(i) for i in range(k)] + [bundle.deg_Q(b) for b in range(r)]
    weights += [1 - bundle.degrees[bundle.index(*p)] for p in sorted(s_names)]
    sch = VariableScheme(tuple(names), tuple(kinds), tuple(Fraction(w) for w in weights))

    def cap(n, group):
        if isinstance(order, dict):
            if n in order:
                return int(order[n])
            return int(order.get(group, 0))
        return int(order)

    caps = [cap(n, "q") for n in q_names] + [cap(n, "Q") for n in Q_names] + [param_order] * len(s_names)
    if any(c < 0 for c in caps):
        raise TruncationTooLow("truncation orders must be non-negative")
    box = Box(tuple(caps), nov_total, param_order)
    return Layout(bundle, sch, box, q_names, Q_names, s_names, z_slack, strict)


# ---------------------------------------------------------------------------
# E-side class data


class EClasses:
    """Multiplication matrices on H*_T(E) and the Theta operators."""

    def __init__(self, bundle: ToricBundle):
        self.E = bundle
        self.n = bundle.rank
        self.I = bundle.skp.eye(self.n)
        self.MP = [bundle.m(bundle.class_P(i)) for i in range(bundle.k)]
        self.MU = {j: bundle.m(bundle.class_U(j)) for j in range(1, bundle.N + 1)}
        self.Mphi = [bundle.m(bundle.class_phi(b)) for b in range(bundle.s + 1)]
        self._upow: dict = {}

    def theta(self, i, j, d, D) -> dict:
        """T_i(P + z d) (phi_j + z D_j) as a z-polynomial of matrices."""
        E = self.E
        out = {0: self.I}
        for a, e in enumerate(E.T[i]):
            fac = {0: self.MP[a]}
            if d[a]:
                fac[1] = vscale(self.I, d[a])
            for _ in range(e):
                out = ld_mul(out, fac)
        if j > E.r:
            raise MissingBaseDerivative(f"phi_{j} is not a divisor class of the base")
        fac = {0: self.Mphi[j]}
        if j and D[j - 1]:
            fac[1] = vscale(self.I, D[j - 1])
        return ld_mul(out, fac)

    def neg_U_power(self, j, n):
        key = (j, n)
        if key not in self._upow:
            if n == 0:
                self._upow[key] = self.I
            else:
                self._upow[key] = vscale(self.MU[j], -1) @ self.neg_U_power(j, n - 1)
        return self._upow[key]

    def inverse_factor(self, j, m, lo) -> dict:
        """(U_j + m z)^{-1} = sum_n (-U_j)^n m^{-n-1} z^{-n-1} down to z^lo."""
        out = {}
        n = 0
        while -n - 1 >= lo:
            out[-n - 1] = vscale(self.neg_U_power(j, n), Fraction(1, m ** (n + 1)))
            n += 1
        return {p: v for p, v in out.items() if not vzero(v)}

    def pullback_J(self, D) -> dict:
        """pi^* Jt_D as an E-vector Laurent polynomial."""
        out = {}
        R = self.E.ring
        for n, v in self.E.base.Jtilde(D).items():
            w = self.E.skp.zeros((self.n,))
            for b in range(len(v)):
                if v[b]:
                    w[self.E.index(0, b)] = R.const(Fraction(v[b]))
            out[n] = w
        return out


def _sigma_factor(ec: EClasses, kappa: dict, d, D) -> dict:
    out = {0: ec.I}
    for (i, j), e in sorted(kappa.items()):
        th = ec.theta(i, j, d, D)
        for _ in range(e):
            out = ld_mul(out, th)
        out = ld_scale(out, Fraction(1, math.factorial(e)))
        out = ld_shift(out, -e)
    return out


def big_i_matrix(lay: Layout, floor: int | None = None) -> Ser:
    """Lt = exp(-(Pt + tau)/z) L^I in y-variables, expanded at z = infinity.

    Monomials carrying 1/(U_j + m z) factors are known down to ``floor``; the
    others are exact Laurent polynomials.
    """
    E = lay.bundle
    ec = EClasses(E)
    n = ec.n
    for a in range(n):
        lay.direction(a)  # raises for non-divisor base directions
    for p in lay.S:
        if p[1] > E.r:
            raise MissingBaseDerivative(f"sigma_{p} needs tau_{p[1]} derivatives of the base J-function")
    F = lay.floor() if floor is None else floor
    sk = E.skp
    out = Ser(lay.scheme, lay.box, sk, (n, n), strict=lay.strict)
    cols = [E.pairs()[a] for a in range(n)]
    for m in lay.box.monos(lay.scheme):
        d, D, kap = lay.split(m)
        if E.base.max_degree is not None and sum(D) > E.base.max_degree:
            raise TruncationTooLow(f"base table complete only to degree {E.base.max_degree}")
        ell = {j: E.U_of(j, d, D) for j in range(1, E.N + 1)}
        v = ec.pullback_J(D)
        if not v:
            continue
        v1 = ld_mul(_sigma_factor(ec, kap, d, D), v)
        for j, l in ell.items():
            for mm in range(int(l) + 1, 1):
                v1 = ld_mul({0: ec.MU[j], 1: vscale(ec.I, mm)} if mm else {0: ec.MU[j]}, v1)
        va = [ld_mul(ec.theta(i, j, d, D), v1) for (i, j) in cols]
        infinite = [(j, int(l)) for j, l in ell.items() if l > 0]
        if infinite:
            X = _maxpow(*va)
            lo = F - X
            inf = {0: ec.I}
            for j, l in infinite:
                for mm in range(1, l + 1):
                    inf = ld_mul(inf, ec.inverse_factor(j, mm, lo), lo=lo)
            va = [ld_mul(inf, x, lo=F) for x in va]
        vals: dict = {}
        for a, x in enumerate(va):
            for p, vec in x.items():
                if p not in vals:
                    vals[p] = sk.zeros((n, n))
                vals[p][:, a] = vec
        out.c[m] = {p: M for p, M in vals.items() if not vzero(M)}
        if infinite:
            out.w[m] = (F, INF)
    return out


@dataclass
class IFunction:
    series: Ser  # exp(-(Pt + tau)/z) I / z, vector valued
    big: bool
    layout: Layout
    matrix: Ser | None = None
    sigma_set: list = field(default_factory=list)

    def coordinates(self) -> int:
        return self.layout.bundle.rank

    def normalization_report(self) -> Report:
        """At y = 0 the matrix is the identity (the pure exponential factored off)."""
        bad = []
        if self.matrix is not None:
            L0, win = self.matrix.y0()
            I = self.layout.bundle.skp.eye(self.layout.bundle.rank)
            for p, M in L0.items():
                if not vzero(M - (I if p == 0 else 0 * I)):
                    bad.append((f"y^0 z^{p}", "not identity"))
            if 0 not in L0:
                bad.append(("y^0 z^0", "missing"))
        return Report("I-function normalization", not bad, bad)


def i_function(bundle: ToricBundle, order=2, z_slack: int = 4, strict: bool = True) -> IFunction:
    lay = make_layout(bundle, order, 0, z_slack, strict)
    L = _column_zero_matrix(lay)
    return IFunction(L.column(0), False, lay, None, [])


def _column_zero_matrix(lay):
    """The e_{0,0} column only needs no derivative of the base; compute it on a reduced copy."""
    E = lay.bundle
    ec = EClasses(E)
    F = lay.floor()
    out = Ser(lay.scheme, lay.box, E.skp, (ec.n, 1), strict=lay.strict)
    for m in lay.box.monos(lay.scheme):
        d, D, kap = lay.split(m)
        v = ec.pullback_J(D)
        if not v:
            continue
        ell = {j: E.U_of(j, d, D) for j in range(1, E.N + 1)}
        v1 = ld_mul(_sigma_factor(ec, kap, d, D), v)
        for j, l in ell.items():
            for mm in range(int(l) + 1, 1):
                v1 = ld_mul({0: ec.MU[j], 1: vscale(ec.I, mm)} if mm else {0: ec.MU[j]}, v1)
        infinite = [(j, int(l)) for j, l in ell.items() if l > 0]
        if infinite:
            lo = F - _maxpow(v1)
            inf = {0: ec.I}
            for j, l in infinite:
                for mm in range(1, l + 1):
                    inf = ld_mul(inf, ec.inverse_factor(j, mm, lo), lo=lo)
            v1 = ld_mul(inf, v1, lo=F)
            out.w[m] = (F, INF)
        out.c[m] = {p: x.reshape(ec.n, 1) for p, x in v1.items()}
    return out


def big_i_function(bundle: ToricBundle, order=2, param_order: int = 1, z_slack: int = 4,
                   strict: bool = True) -> IFunction:
    lay = make_layout(bundle, order, param_order, z_slack, strict)
    L = big_i_matrix(lay)
    return IFunction(L.column(0), True, lay, L, lay.S)


# ---------------------------------------------------------------------------
# Gamma series


def bernoulli(n: int) -> Fraction:
    import sympy

    b = sympy.bernoulli(n)
    if n == 1:
        return Fraction(-1, 2)
    return Fraction(int(b.p), int(b.q))


@dataclass
class GammaSeries:
    """Gamma-hat(nu, z) = nu^{-1/2} e^{(nu log nu - nu)/z} * tail(z/nu)."""

    order: int
    bernoulli: dict
    tail: list  # tail(x) = sum_k tail[k] x^k
    prefactor: PrefactorData

    def exponent(self) -> dict:
        return {2 * m - 1: self.bernoulli[2 * m] / (2 * m * (2 * m - 1)) for m in range(1, (self.order + 1) // 2 + 1)}

    def tail_minus(self) -> list:
        """Coefficients of tail(-z/nu)."""
        return [c if k % 2 == 0 else -c for k, c in enumerate(self.tail)]


def _exp_series(coeffs: dict, order: int) -> list:
    """exp(sum_k c_k x^k) (no constant term) up to x^order, rational."""
    out = [Fraction(0)] * (order + 1)
    out[0] = Fraction(1)
    # f' = g' f recursion: n f_n = sum_k k c_k f_{n-k}
    for n in range(1, order + 1):
        s = Fraction(0)
        for k, c in coeffs.items():
            if 1 <= k <= n:
                s += k * c * out[n - k]
        out[n] = s / n
    return out


def gamma_hat(order: int) -> GammaSeries:
    if order < 0:
        raise ValueError("order must be non-negative")
    B = {2 * m: bernoulli(2 * m) for m in range(1, order // 2 + 2)}
    expo = {2 * m - 1: B[2 * m] / (2 * m * (2 * m - 1)) for m in range(1, order // 2 + 2) if 2 * m - 1 <= order}
    tail = _exp_series(expo, order)
    pre = PrefactorData(Fraction(0), {"nu": Fraction(-1, 2)}, {"nu": -1}, {("nu", "nu"): 1})
    return GammaSeries(order, B, tail, pre)


# ---------------------------------------------------------------------------
# fixed-point side


class FixedSide:
    """Base-valued classes over the localized lambda ring at one fixed point."""

    def __init__(self, lay: Layout, alpha):
        self.lay = lay
        E = lay.bundle
        self.E = E
        self.fp = E.fp(alpha)
        self.alpha = self.fp.alpha
        self.R = E.ring
        self.sk = ScalarKind(self.R, "loc")
        self.nb = E.base.rank
        self.I = self.sk.eye(self.nb)
        self.nil = E.base.dim
        self.u = {j: Loc(self.R, self.fp.u[j]) for j in self.fp.nondiv}
        self.uinv = {j: Loc.inv_form(self.R, self.fp.u[j]) for j in self.fp.nondiv}
        self.Ubar = {j: self._rat_matrix(E.base.class_matrix(self.fp.U_base[j])) for j in self.fp.nondiv}
        self.ell_of = {j: (lambda D, j=j: int(sum(self.fp.U_base[j][b + 1] * D[b] for b in range(E.r))))
                       for j in self.fp.nondiv}

    def _rat_matrix(self, M):
        out = self.sk.zeros(M.shape)
        for idx in np.ndindex(*M.shape):
            if M[idx]:
                out[idx] = self.sk.coerce(Fraction(M[idx]))
        return out

    def loc_matrix(self, M):
        out = self.sk.zeros(M.shape)
        for idx in np.ndindex(*M.shape):
            out[idx] = self.sk.coerce(M[idx])
        return out

    def base_class_matrix(self, v):
        """Multiplication matrix of a base class given as a poly vector."""
        return self.loc_matrix(self.E.Bp.mult_matrix(v))

    def P_matrix(self, i):
        return self.base_class_matrix(self.E.P_alpha(self.fp, i))

    def P_of_D(self, D):
        return tuple(int(self.fp.P_of_D(i, self.E.Lam_D(D))) for i in range(self.E.k))

    def J_vec(self, D) -> dict:
        out = {}
        for n, v in self.E.base.Jtilde(D).items():
            out[n] = self.sk.array([Fraction(x) for x in v])
        return out

    def Ubar_power(self, j, a):
        M = self.I
        for _ in range(a):
            M = M @ self.Ubar[j]
        return M

    def shifted_power(self, j, m, n) -> dict:
        """(Ubar_j + m z)^n, exact."""
        out = {}
        for a in range(min(n, self.nil) + 1):
            M = self.Ubar_power(j, a)
            if vzero(M):
                break
            c = math.comb(n, a) * Fraction(m) ** (n - a)
            if c:
                out[n - a] = out.get(n - a, 0 * self.I) + vscale(M, c)
        return {p: v for p, v in out.items() if not vzero(v)}

    def inverse_factor(self, j, m, top) -> dict:
        """(U_j + m z)^{-1} = sum_n (-1)^n (Ubar + m z)^n / u^{n+1}, through z^top."""
        out: dict = {}
        ui = self.uinv[j]
        n = 0
        while n - self.nil <= top:
            c = ui ** (n + 1) * (1 if n % 2 == 0 else -1)
            for p, M in self.shifted_power(j, m, n).items():
                if p <= top:
                    v = vscale(M, c)
                    out[p] = out[p] + v if p in out else v
            n += 1
        return {p: v for p, v in out.items() if not vzero(v)}

    def linear_factor(self, j, m) -> dict:
        """U_j + m z restricted to alpha."""
        out = {0: vscale(self.I, self.u[j]) + self.Ubar[j]}
        if m:
            out[1] = vscale(self.I, m)
        return out

    # -- Gamma prefactor split ---------------------------------------------------
    def prefactor(self) -> PrefactorData:
        forms = {scalar_str(self.fp.u[j]): Fraction(-1, 2) for j in self.fp.nondiv}
        lin = {scalar_str(self.fp.u[j]): 1 for j in self.fp.nondiv}
        logs = {(f"-U{j}", scalar_str(self.fp.u[j])): 1 for j in self.fp.nondiv}
        return PrefactorData(Fraction(0), forms, lin, logs)

    def g_series(self, j, m_ld: dict, top, divide_z=True) -> dict:
        """g(m)/z with g(m) = -sum_{k>=2} (-1)^k m^k / (k (k-1) u^{k-1}), m a z-polynomial matrix."""
        out: dict = {}
        ui = self.uinv[j]
        power = ld_mul(m_ld, m_ld)
        k = 2
        shift = -1 if divide_z else 0
        while True:
            low = _minpow(power) + shift if power else INF
            if low > top:
                break
            c = ui ** (k - 1) * Fraction(-1 if k % 2 == 0 else 1, k * (k - 1))
            for p, M in power.items():
                if p + shift <= top:
                    v = vscale(M, c)
                    out[p + shift] = out[p + shift] + v if p + shift in out else v
            power = ld_mul(power, m_ld)
            k += 1
            if not power:
                break
        return {p: v for p, v in out.items() if not vzero(v)}

    def half_power(self, j, m_ld: dict, e: Fraction, top) -> dict:
        """(1 + m/u)^e through z^top."""
        out = {0: self.I}
        ui = self.uinv[j]
        term = {0: self.I}
        binom = Fraction(1)
        k = 0
        while True:
            binom = binom * (Fraction(e) - k) / (k + 1)
            k += 1
            term = ld_mul(term, ld_scale(m_ld, ui), hi=top)
            if not term:
                break
            out = ld_add(out, ld_scale(term, binom))
            if _minpow(term) > top:
                break
        return {p: v for p, v in out.items() if p <= top}

    def ld_exp(self, X: dict, top) -> dict:
        """exp of a Laurent matrix whose non-positive part is nilpotent."""
        out = {0: self.I}
        term = {0: self.I}
        for k in range(1, 400):
            term = ld_scale(ld_mul(term, X, hi=top), Fraction(1, k))
            if not term:
                return out
            out = ld_add(out, term)
        raise BrownError("exponential did not converge")

    def pre_series(self, top) -> dict:
        """The genuine series part of Gamma-hat_alpha, through z^top.

        prod_j (1 + Ubar/u)^{-1/2} e^{g(Ubar)/z} tail(-z/U_j).
        """
        g = gamma_hat(top + self.nil + 2)
        out = {0: self.I}
        for j in self.fp.nondiv:
            m = {0: self.Ubar[j]} if not vzero(self.Ubar[j]) else {}
            fac = self.half_power(j, m, Fraction(-1, 2), top + self.nil) if m else {0: self.I}
            if m:
                fac = ld_mul(fac, self.ld_exp(self.g_series(j, m, top + self.nil), top + self.nil))
            # tail(-z/U) = sum_k t_k (-z)^k u^{-k} (1 + Ubar/u)^{-k}
            tl: dict = {}
            for kk, tk in enumerate(g.tail):
                if kk > top + self.nil or not tk:
                    continue
                c = tk * (1 if kk % 2 == 0 else -1)
                base = self.half_power(j, m, Fraction(-kk), top + self.nil) if (m and kk) else {0: self.I}
                base = ld_scale(base, self.uinv[j] ** kk * c)
                tl = ld_add(tl, ld_shift(base, kk))
            fac = ld_mul(fac, tl, hi=top + self.nil)
            out = ld_mul(out, fac, hi=top + self.nil)
        return {p: v for p, v in out.items() if p <= top}


def gamma_alpha(bundle: ToricBundle, alpha, top: int = 3):
    """(PrefactorData, {z-power: base matrix}) for prod_{j not in alpha} Gamma-hat(U_j, -z)."""
    lay = make_layout(bundle, 0, 0)
    fs = FixedSide(lay, alpha)
    return fs.prefactor(), fs.pre_series(top)


def route_b(lay: Layout, alpha, hi: int, columns=None, with_pre: bool = True) -> Ser:
    """Gamma-hat_alpha * alpha^* L^I columns at z = 0 (prefactor removed), through z^hi.

    Classes are restricted to alpha from their E-side expressions, so this
    path does not use the fixed-point formulas for P^alpha.
    """
    E = lay.bundle
    fs = FixedSide(lay, alpha)
    ec = EClasses(E)
    cols = list(range(E.rank)) if columns is None else list(columns)
    pairs = [E.pairs()[a] for a in cols]
    nb = fs.nb
    out = Ser(lay.scheme, lay.box, fs.sk, (nb, len(cols)), strict=lay.strict)
    pre_cache: dict = {}
    unit = E.skp.zeros((E.rank,))
    unit[0] = E.ring.one
    for m in lay.box.monos(lay.scheme):
        d, D, kap = lay.split(m)
        Jv = fs.J_vec(D)
        out.w[m] = (-INF, hi)
        out.c.setdefault(m, {})
        if not Jv:
            continue
        ell = {j: E.U_of(j, d, D) for j in range(1, E.N + 1)}
        if any(ell[j] < 0 for j in fs.alpha):
            continue  # the product contains the factor U_j = 0
        scal = Fraction(1)
        shiftz = 0
        for j in fs.alpha:
            scal /= math.factorial(int(ell[j]))
            shiftz -= int(ell[j])
        w = ld_shift(ld_scale(Jv, scal), shiftz)
        for j in fs.fp.nondiv:
            for mm in range(int(ell[j]) + 1, 1):
                w = ld_mul(fs.linear_factor(j, mm), w)
        sig = _sigma_factor(ec, kap, d, D)
        colv = []
        for (i, j) in pairs:
            X = ld_mul(ec.theta(i, j, d, D), sig)
            Xa = {p: fs.base_class_matrix(E.restrict(fs.alpha, M @ unit)) for p, M in X.items()}
            colv.append(ld_mul(Xa, w))
        Xmin = _minpow(*colv)
        p_neg = fs.nil // 2
        top_inf = hi + p_neg - Xmin
        infinite = [(j, int(ell[j])) for j in fs.fp.nondiv if ell[j] > 0]
        inf = {0: fs.I}
        for j, l in infinite:
            for mm in range(1, l + 1):
                inf = ld_mul(inf, fs.inverse_factor(j, mm, top_inf), hi=top_inf)
        top_pre = hi - Xmin
        if with_pre:
            if top_pre not in pre_cache:
                pre_cache[top_pre] = fs.pre_series(top_pre + p_neg)
            pre = pre_cache[top_pre]
            full = ld_mul(pre, inf, hi=hi - Xmin + p_neg)
        else:
            full = inf
        vals: dict = {}
        for a, v in enumerate(colv):
            x = ld_mul(full, v, hi=hi)
            for p, vec in x.items():
                if p not in vals:
                    vals[p] = fs.sk.zeros((nb, len(cols)))
                vals[p][:, a] = vec
        out.c[m] = {p: M for p, M in vals.items() if not vzero(M)}
    return out


# ---------------------------------------------------------------------------
# route A: the mirror side of Brown's identity


def _loc_series_from_ld(lay, sk, shape, data: dict, hi) -> Ser:
    s = Ser(lay.scheme, lay.box, sk, shape, strict=lay.strict)
    for m, d in data.items():
        s.c[m] = {p: v for p, v in d.items() if p <= hi and not vzero(v)}
        s.w[m] = (-INF, hi)
    return s


class MirrorSide:
    """The stationary-phase factor hat-I_alpha(q, lambda + z d_Lambda, z) at one fixed point."""

    def __init__(self, lay: Layout, alpha, top: int):
        self.lay = lay
        self.fs = FixedSide(lay, alpha)
        E = lay.bundle
        self.model = chart_build(E, self.fs.alpha)
        caps = tuple(lay.box.caps[lay.scheme.index(n)] for n in lay.q_names)
        self.branch = critical_branch(self.model, caps)
        self.top = top + self.depth
        self.sp = stationary_phase(self.model, self.branch, max(self.top, 0))
        self.images = self.model.lambda_images()
        self._deriv_cache: dict = {}

    @property
    def depth(self):
        """Extra z-orders needed because exp(F/z) has poles up to the q-degree."""
        return sum(self.lay.box.caps[self.lay.scheme.index(n)] for n in self.lay.q_names) + self.fs.nil

    def _deriv(self, key, X: QSeries, kappa):
        ck = (key, kappa)
        if ck not in self._deriv_cache:
            Y = X
            for v, e in zip(self.model.nondiv, kappa):
                for _ in range(e):
                    Y = Y.derivative(f"u{v}")
            Y = Y * Fraction(1, math.prod(math.factorial(e) for e in kappa))
            self._deriv_cache[ck] = Y.pushforward(self.fs.R, self.images)
        return self._deriv_cache[ck]

    def m_ld(self, D) -> dict:
        """m_j = Ubar_j + z ell_j(D) as exact z-polynomials."""
        fs = self.fs
        out = {}
        for j in fs.fp.nondiv:
            d = {}
            if not vzero(fs.Ubar[j]):
                d[0] = fs.Ubar[j]
            l = fs.ell_of[j](D)
            if l:
                d[1] = vscale(fs.I, l)
            out[j] = d
        return out

    def taylor(self, key, X: QSeries, mld: dict, top, divide_z=False) -> dict:
        """X(u + m) as {q-mono: {z: matrix}} through z^top."""
        nd = self.model.nondiv
        shift = -1 if divide_z else 0
        K = top - shift + self.fs.nil
        out: dict = {}
        for deg in range(0, K + 1):
            for kap in itertools.product(range(deg + 1), repeat=len(nd)):
                if sum(kap) != deg:
                    continue
                mp = {0: self.fs.I}
                for j, e in zip(nd, kap):
                    for _ in range(e):
                        mp = ld_mul(mp, mld[j])
                if not mp:
                    continue
                if _minpow(mp) + shift > top:
                    continue
                Y = self._deriv(key, X, kap)
                for qm, c in Y.items():
                    slot = out.setdefault(qm, {})
                    for p, M in mp.items():
                        if p + shift <= top:
                            v = vscale(M, c)
                            slot[p + shift] = slot[p + shift] + v if p + shift in slot else v
        return out

    def psi(self, D, top) -> Ser:
        """Psi_D (see module notes) as a series in q with base-matrix coefficients, through z^top."""
        lay = self.lay
        fs = self.fs
        sch = lay.scheme
        mld = self.m_ld(D)
        qidx = [sch.index(n) for n in lay.q_names]

        def q_mono(qm):
            m = [0] * sch.n
            for i, e in zip(qidx, qm):
                m[i] = e
            return tuple(m)

        T = top + self.depth
        Fz = self.taylor("F", self.sp.F, mld, T, divide_z=True)
        Fser = _loc_series_from_ld(lay, fs.sk, (fs.nb, fs.nb), {q_mono(k): v for k, v in Fz.items()}, T)
        for qm in itertools.product(*[range(lay.box.caps[i] + 1) for i in qidx]):
            Fser.w[q_mono(qm)] = (-INF, T)
            Fser.c.setdefault(q_mono(qm), {})
        for mono in [mm for mm in Fser.c if not lay.box.contains(sch, mm)]:
            del Fser.c[mono]
        expF = series_exp(Fser, "@", z_hi=T)
        Adata: dict = {}
        for n, An in enumerate(self.sp.A):
            if n > T:
                break
            for k, v in self.taylor(("A", n), An, mld, T - n).items():
                slot = Adata.setdefault(q_mono(k), {})
                for p, M in v.items():
                    slot[p + n] = slot[p + n] + M if p + n in slot else M
        Aser = _loc_series_from_ld(lay, fs.sk, (fs.nb, fs.nb), Adata, T)
        for qm in itertools.product(*[range(lay.box.caps[i] + 1) for i in qidx]):
            Aser.w[q_mono(qm)] = (-INF, T)
            Aser.c.setdefault(q_mono(qm), {})
        if len(self.sp.A) <= T:
            raise TruncationTooLow("stationary phase computed to too low a z-order")
        const = {0: fs.I}
        for j in fs.fp.nondiv:
            l = fs.ell_of[j](D)
            c = fs.u[j] ** (-l) if l else Loc(fs.R, fs.R.one)
            fac = ld_scale(fs.half_power(j, mld[j], Fraction(-1, 2), T), c) if mld[j] else {0: vscale(fs.I, c)}
            if mld[j]:
                fac = ld_mul(fac, fs.ld_exp(fs.g_series(j, mld[j], T), T), hi=T)
            const = ld_mul(const, fac, hi=T)
        Cser = _loc_series_from_ld(lay, fs.sk, (fs.nb, fs.nb), {sch.zero_mono(): const}, T)
        return Cser.mul(expF, "@", z_hi=T).mul(Aser, "@", z_hi=T)


def route_a(lay: Layout, alpha, hi: int) -> Ser:
    """sum_D y^{(P^alpha(D), D)} Psi_D Jt_D: the e_{0,0} column at sigma = 0 (prefactor removed)."""
    E = lay.bundle
    sch = lay.scheme
    fs = FixedSide(lay, alpha)
    Ds = sorted({lay.split(m)[1] for m in lay.box.monos(sch)})
    Dtops = {}
    for D in Ds:
        J = fs.J_vec(D)
        Dtops[D] = hi - (_minpow(J) if J else 0)
    ms = MirrorSide(lay, alpha, max(Dtops.values()))
    total = Ser(sch, lay.nov_box(), fs.sk, (fs.nb,), strict=lay.strict)
    for m in lay.nov_box().monos(sch):
        total.w[m] = (-INF, hi)
        total.c.setdefault(m, {})
    for D in Ds:
        J = fs.J_vec(D)
        if not J:
            continue
        psi = ms.psi(D, Dtops[D]).truncate_box(lay.nov_box())
        Jser = Ser.constant(sch, lay.nov_box(), fs.sk, fs.sk.zeros((fs.nb,)), strict=lay.strict)
        Jser.c[sch.zero_mono()] = dict(J)
        term = psi.mul(Jser, "@", z_hi=hi)
        shifted = term.shift(lay.mono(fs.P_of_D(D), D))
        total = total + shifted
    return total


def check_brown_identity(bundle_or_layout, alpha, order=2, hi: int = 3, z_slack: int = 4) -> Report:
    """Compare the mirror-side column with Gamma-hat_alpha * alpha^* I_E at z = 0, prefactor removed."""
    lay = bundle_or_layout if isinstance(bundle_or_layout, Layout) else make_layout(bundle_or_layout, order, 0, z_slack)
    with Timer() as tm:
        fs = FixedSide(lay, alpha)
        lhs = route_a(lay, alpha, hi)
        rhs = route_b(lay, alpha, hi, columns=[0]).truncate_box(lay.nov_box()).column(0)
        box = lay.nov_box()
        keys = lhs.residual_keys(rhs, box=box, zrange=(-INF, hi))
        unknown = [k for k in (lhs - rhs).unknown_in(box, (0, hi))]
    res = [(f"{lay.scheme.mono_str(m)} z^{n}", "nonzero") for m, n in keys]
    res += [(f"{lay.scheme.mono_str(m)}", f"window {w}") for m, w in unknown]
    return Report(f"Brown identity alpha={fs.alpha}", not res, res,
                  {"prefactor": fs.prefactor().to_json(), "z_max": hi}, tm.seconds)


# ---------------------------------------------------------------------------
# M-matrix


@dataclass
class MBlock:
    alpha: tuple
    prefactor: PrefactorData
    series: Ser  # Gamma-hat_alpha alpha^* L^I / prefactor, columns e_{i,j}: defines M_alpha up to exp((P^alpha t + tau)/z)
    q_shift: dict  # D -> P^alpha(D)


@dataclass
class MMatrix:
    layout: Layout
    blocks: list
    hi: int
    reports: list = field(default_factory=list)

    def block(self, alpha) -> MBlock:
        alpha = tuple(sorted(alpha)) if not isinstance(alpha, int) else self.layout.bundle.fps[alpha].alpha
        for b in self.blocks:
            if b.alpha == alpha:
                return b
        raise KeyError(alpha)

    def column_block(self, alpha, i) -> Ser:
        """M_{alpha,i}: the columns e_{i,0..s}."""
        E = self.layout.bundle
        b = self.block(alpha)
        cols = [E.index(i, j) for j in range(E.s + 1)]
        return b.series.map_values(lambda v: v[:, cols].copy(), shape=(b.series.shape[0], len(cols)))


def theta_alpha(fs: FixedSide, i, j, d, D) -> dict:
    """T_i(P^alpha + z d)(phi_j + z D_j) from the fixed-point formulas."""
    E = fs.E
    out = {0: fs.I}
    for a, e in enumerate(E.T[i]):
        fac = {0: fs.P_matrix(a)}
        if d[a]:
            fac[1] = vscale(fs.I, d[a])
        for _ in range(e):
            out = ld_mul(out, fac)
    fac = {0: fs.loc_matrix(E.Bp.mult_matrix(E.Bp.basis(j)))}
    if j and D[j - 1]:
        fac[1] = vscale(fs.I, D[j - 1])
    return ld_mul(out, fac)


def definition_columns(lay: Layout, alpha, S0: Ser, hi: int) -> Ser:
    """T_i(z d_t) Delta(sigma) applied to the mirror-side column (the definition of M_alpha)."""
    E = lay.bundle
    fs = FixedSide(lay, alpha)
    out = Ser(lay.scheme, lay.box, fs.sk, (fs.nb, E.rank), strict=lay.strict)
    for m in lay.box.monos(lay.scheme):
        d, D, kap = lay.split(m)
        m0 = lay.mono(d, D)
        out.w[m] = (-INF, hi)
        col0 = S0.c.get(m0, {})
        if not col0:
            out.c.setdefault(m, {})
            continue
        lo0 = S0.window(m0)
        sig = {0: fs.I}
        for (i, j), e in sorted(kap.items()):
            th = theta_alpha(fs, i, j, d, D)
            for _ in range(e):
                sig = ld_mul(sig, th)
            sig = ld_shift(ld_scale(sig, Fraction(1, math.factorial(e))), -e)
        vals: dict = {}
        known = hi
        for a, (i, j) in enumerate(E.pairs()):
            op = ld_mul(theta_alpha(fs, i, j, d, D), sig)
            known = min(known, lo0[1] + _minpow(op))
            x = ld_mul(op, col0, hi=hi)
            for p, vec in x.items():
                if p not in vals:
                    vals[p] = fs.sk.zeros((fs.nb, E.rank))
                vals[p][:, a] = vec
        out.w[m] = (-INF, known)
        out.c[m] = {p: M for p, M in vals.items() if p <= known and not vzero(M)}
    return out


def m_matrix(bundle_or_layout, order=2, param_order: int = 1, hi: int = 3, z_slack: int = 4,
             dual_path: bool = True) -> MMatrix:
    lay = bundle_or_layout if isinstance(bundle_or_layout, Layout) else make_layout(bundle_or_layout, order,
                                                                                      param_order, z_slack)
    E = lay.bundle
    blocks, reports = [], []
    Ds = sorted({lay.split(m)[1] for m in lay.box.monos(lay.scheme)})
    for fp in E.fps:
        fs = FixedSide(lay, fp.alpha)
        with Timer() as tm:
            N = route_b(lay, fp.alpha, hi)
        blocks.append(MBlock(fp.alpha, fs.prefactor(), N, {D: fs.P_of_D(D) for D in Ds}))
        if dual_path:
            with Timer() as tm2:
                S0 = route_a(lay, fp.alpha, hi + _pos_theta_degree(E))
                Mdef = definition_columns(lay, fp.alpha, S0, hi)
                keys = Mdef.residual_keys(N, box=lay.box, zrange=(-INF, hi))
                keys = [k for k in keys if Mdef.known(*k) and N.known(*k)]
            reports.append(Report(f"M-matrix dual path alpha={fp.alpha}", not keys,
                                  [(f"{lay.scheme.mono_str(m)} z^{n}", "nonzero") for m, n in keys], {},
                                  tm.seconds + tm2.seconds))
    return MMatrix(lay, blocks, hi, reports)


def _pos_theta_degree(E: ToricBundle) -> int:
    return max(sum(t) for t in E.T) + 1
