"""Toric bundle data: GIT matrix, fixed points, restrictions and localization.

Classes of B are rational coordinate vectors in the base basis.  Classes of
H^*_T(E) are coordinate vectors over Q[lambda] in the monomial basis
e_{i,j} = T_i(P) phi_j, flattened as a = i * (s + 1) + j.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .algebra import GradedAlgebra
from .base_gw import BaseTheory
from .coeffs import LambdaRing, RatFun, iszero
from .report import Report
from .series import ScalarKind, matrix_inverse, objvec, vscale, vzero


class ToricError(Exception):
    pass


class NotInvertible(ToricError):
    pass


class NefnessViolation(ToricError):
    pass


class AssumptionViolation(ToricError):
    pass


class RankMismatch(ToricError):
    pass


class UnknownFixedPoint(ToricError):
    pass


class NonInvertibleEuler(ToricError):
    pass


class ConfigError(ToricError):
    pass


def frac_inverse(M):
    """Inverse of a square list-of-lists of Fractions."""
    n = len(M)
    A = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(M)]
    for c in range(n):
        p = next((r for r in range(c, n) if A[r][c] != 0), None)
        if p is None:
            return None
        A[c], A[p] = A[p], A[c]
        f = A[c][c]
        A[c] = [x / f for x in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                g = A[r][c]
                A[r] = [x - g * y for x, y in zip(A[r], A[c])]
    return [row[n:] for row in A]


@dataclass
class FixedPoint:
    alpha: tuple  # 1-based indices
    cinv: list  # rows n in alpha (order of alpha), cols i
    cac: list  # (c_alpha^{-1} c), rows n in alpha, cols j = 1..N
    P_lam: list  # per i: linear form p_i^alpha (poly)
    P_base: list  # per i: base class of P_i^alpha (Fractions)
    u: dict  # j not in alpha -> linear form u_j^alpha (poly)
    U_base: dict  # j -> base class U_j^alpha - u_j^alpha (Fractions), j not in alpha
    nondiv: tuple  # j not in alpha, increasing

    def P_of_D(self, i, Lam_D):
        """Integer pairing P_i^alpha(D) given the list Lambda_n(D)."""
        return sum((self.cinv[a][i] * Lam_D[n - 1] for a, n in enumerate(self.alpha)), Fraction(0))


class ToricBundle:
    def __init__(self, k, N, c, fixed_points, lambda_classes, monomials, base: BaseTheory, name="E"):
        self.name = name
        self.k, self.N = int(k), int(N)
        self.c = [[int(x) for x in row] for row in c]
        if len(self.c) != self.k or any(len(r) != self.N for r in self.c):
            raise ConfigError("c must be a k x N integer matrix")
        self.F = [tuple(sorted(int(x) for x in a)) for a in fixed_points]
        self.base = base
        self.s = base.rank - 1
        self.r = base.r
        self.Lam = [self._base_vec(x) for x in lambda_classes]
        if len(self.Lam) != self.N:
            raise ConfigError("need one base class per line bundle")
        for v in self.Lam:
            if any(v[a] for a in range(base.rank) if base.degrees[a] != 1):
                raise ConfigError("Lambda_j must lie in H^2(B)")
        self.T = [tuple([0] * self.k)] + [tuple(int(i == j) for j in range(self.k)) for i in range(self.k)]
        self.T += [tuple(int(x) for x in m) for m in monomials]
        self.l = len(self.T) - 1
        if len(self.F) != self.l + 1:
            raise RankMismatch(f"|F| = {len(self.F)} but l + 1 = {self.l + 1}")
        self.rank = (self.l + 1) * (self.s + 1)
        self.ring = LambdaRing(self.N)
        self.skp = ScalarKind(self.ring, "poly")
        self.skr = ScalarKind(self.ring, "ratfun")
        self.fps = [self._fixed_point(a) for a in self.F]
        for fp in self.fps:
            for j, uj in fp.u.items():
                self.ring.forms.index(uj)
        self.Bp = base.algebra(self.skp)
        self._build_localization()

    # -- construction helpers ----------------------------------------------
    def _base_vec(self, x):
        if isinstance(x, (list, tuple)):
            v = [Fraction(y) for y in x]
            if len(v) != self.base.rank:
                raise ConfigError("base class has wrong length")
            return v
        import sympy

        names = [n.replace("^", "") for n in self.base.names]
        syms = {n: sympy.Symbol(n) for n in names if n != "1"}
        expr = sympy.expand(sympy.sympify(str(x).replace("^", "**"), locals=syms))
        unknown = expr.free_symbols - set(syms.values())
        if unknown:
            raise ConfigError(f"lambda_classes: unknown base class {sorted(map(str, unknown))} in {x!r}")
        v = [Fraction(0)] * self.base.rank
        P = sympy.Poly(expr, *syms.values()) if syms else None
        if P is None:
            v[0] = Fraction(str(expr))
            return v
        for mon, cc in P.terms():
            num, den = sympy.fraction(cc)
            if sum(mon) == 0:
                v[0] += Fraction(int(num), int(den))
            elif sum(mon) == 1:
                idx = [i for i, e in enumerate(mon) if e][0]
                v[names.index(list(syms)[idx])] += Fraction(int(num), int(den))
            else:
                raise ConfigError(f"nonlinear base class {x}")
        return v

    def _fixed_point(self, alpha) -> FixedPoint:
        if len(alpha) != self.k or any(not 1 <= n <= self.N for n in alpha):
            raise ConfigError(f"bad fixed point {alpha}")
        ca = [[self.c[i][n - 1] for n in alpha] for i in range(self.k)]
        inv = frac_inverse(ca)
        if inv is None:
            raise NotInvertible(f"c_alpha singular for alpha={alpha}")
        if any(x < 0 for row in inv for x in row):
            raise NefnessViolation(f"c_alpha^-1 has a negative entry for alpha={alpha}")
        cac = [[sum(inv[a][i] * self.c[i][j] for i in range(self.k)) for j in range(self.N)]
               for a in range(self.k)]
        R = self.ring
        P_lam, P_base = [], []
        for i in range(self.k):
            lam = R.linear({n: inv[a][i] for a, n in enumerate(alpha)})
            base = [sum((inv[a][i] * self.Lam[n - 1][b] for a, n in enumerate(alpha)), Fraction(0))
                    for b in range(self.base.rank)]
            if any(base[b] < 0 for b in range(1, self.r + 1)):
                raise AssumptionViolation(f"P_{i + 1}^alpha not nef for alpha={alpha}")
            P_lam.append(lam)
            P_base.append(base)
        u, Ub = {}, {}
        nondiv = tuple(j for j in range(1, self.N + 1) if j not in alpha)
        for j in range(1, self.N + 1):
            lam = {n: cac[a][j - 1] for a, n in enumerate(alpha)}
            lam[j] = lam.get(j, 0) - 1
            form = R.linear(lam)
            base = [sum((cac[a][j - 1] * self.Lam[n - 1][b] for a, n in enumerate(alpha)), Fraction(0))
                    - self.Lam[j - 1][b] for b in range(self.base.rank)]
            if j in alpha:
                if not form.is_zero() or any(base):
                    raise ToricError("U_j^alpha must vanish for j in alpha")
                continue
            if form.is_zero():
                raise NonInvertibleEuler(f"u_{j}^alpha vanishes for alpha={alpha}")
            u[j] = form
            Ub[j] = base
        return FixedPoint(tuple(alpha), inv, cac, P_lam, P_base, u, Ub, nondiv)

    def fp(self, alpha) -> FixedPoint:
        if isinstance(alpha, int):
            if not 0 <= alpha < len(self.fps):
                raise UnknownFixedPoint(str(alpha))
            return self.fps[alpha]
        alpha = tuple(sorted(alpha))
        for fp in self.fps:
            if fp.alpha == alpha:
                return fp
        raise UnknownFixedPoint(str(alpha))

    # -- base-valued classes over Q[lambda] ------------------------------------
    def bvec(self, lam_part, base_part):
        """Base-valued class lam_part * 1 + base_part as poly vector."""
        v = self.skp.zeros((self.base.rank,))
        for b in range(self.base.rank):
            v[b] = self.ring.const(Fraction(base_part[b]))
        v[0] = v[0] + lam_part
        return v

    def P_alpha(self, fp: FixedPoint, i):
        return self.bvec(fp.P_lam[i], fp.P_base[i])

    def U_alpha(self, fp: FixedPoint, j):
        if j in fp.alpha:
            return self.skp.zeros((self.base.rank,))
        return self.bvec(fp.u[j], fp.U_base[j])

    def bmul(self, a, b):
        return self.Bp.mul(a, b)

    def T_alpha(self, fp, i):
        v = self.Bp.unit()
        for a, e in enumerate(self.T[i]):
            for _ in range(e):
                v = self.bmul(self.P_alpha(fp, a), v)
        return v

    def restrict_basis(self, fp, a):
        i, j = divmod(a, self.s + 1)
        return self.bmul(self.T_alpha(fp, i), self.Bp.basis(j))

    def _build_localization(self):
        nB = self.base.rank
        nF = len(self.fps)
        Xi = self.skp.zeros((nB * nF, self.rank))
        for f, fp in enumerate(self.fps):
            for a in range(self.rank):
                Xi[f * nB:(f + 1) * nB, a] = self.restrict_basis(fp, a)
        self.Xi = Xi
        try:
            self.Xi_inv = matrix_inverse(Xi, self.skr)
        except Exception as exc:
            raise NonInvertibleEuler(f"localization matrix singular: {exc}") from exc
        self.names = []
        for i in range(self.l + 1):
            for j in range(self.s + 1):
                parts = []
                for a, e in enumerate(self.T[i]):
                    nm = "P" if self.k == 1 else f"P{a + 1}"
                    if e:
                        parts.append(nm if e == 1 else f"{nm}^{e}")
                if j:
                    parts.append(self.base.names[j])
                self.names.append("*".join(parts) or "1")
        self.degrees = [sum(self.T[i]) + self.base.degrees[j] for i in range(self.l + 1) for j in range(self.s + 1)]
        self.dim = self.N - self.k + self.base.dim
        # multiplication matrices of basis elements and pairing
        mult = []
        for a in range(self.rank):
            mult.append(self.mult_by_localized([self.restrict_basis(fp, a) for fp in self.fps]))
        self.G = self._pairing()
        self.algebra = GradedAlgebra(self.names, self.degrees, mult, self.G, self.skp, self.dim)

    # -- localization ----------------------------------------------------------
    def localize(self, x):
        """E-vector -> tuple of base vectors (one per fixed point)."""
        nB = self.base.rank
        y = self.Xi @ x
        return tuple(y[f * nB:(f + 1) * nB] for f in range(len(self.fps)))

    def delocalize(self, parts, kind="poly"):
        stack = objvec([self.skr.coerce(x) for p in parts for x in p])
        v = self.Xi_inv @ stack
        if kind == "ratfun":
            return v
        return objvec([x.to_poly() for x in v])

    def mult_by_localized(self, parts):
        """Matrix on the E-basis of multiplication by the class with restrictions ``parts``."""
        nB = self.base.rank
        nF = len(self.fps)
        D = self.skr.zeros((nB * nF, nB * nF))
        for f, p in enumerate(parts):
            D[f * nB:(f + 1) * nB, f * nB:(f + 1) * nB] = self.skr.array(self.Bp.mult_matrix(p).tolist())
        M = self.Xi_inv @ D @ self.skr.array(self.Xi.tolist())
        out = self.skp.zeros((self.rank, self.rank))
        for idx in np.ndindex(*M.shape):
            out[idx] = M[idx].to_poly()
        return out

    def inv_euler(self, fp: FixedPoint):
        """1 / e_alpha as a base-valued RatFun vector (nilpotent parts expanded)."""
        Bq = self.base.algebra(self.skr)
        v = Bq.unit()
        for j in fp.nondiv:
            u = RatFun(self.ring, fp.u[j])
            nil = self.skr.array([RatFun.const(self.ring, x) for x in fp.U_base[j]])
            # (u + n)^{-1} = sum_k (-n)^k / u^{k+1}
            term = vscale(Bq.unit(), u.inverse())
            acc = term
            for _ in range(self.base.rank):
                term = vscale(-(Bq.mul(nil, term)), u.inverse())
                if vzero(term):
                    break
                acc = acc + term
            v = Bq.mul(v, acc)
        return v

    def euler(self, fp: FixedPoint):
        v = self.Bp.unit()
        for j in fp.nondiv:
            v = self.bmul(self.U_alpha(fp, j), v)
        return v

    def euler_fiber(self, fp: FixedPoint):
        e = self.ring.one
        for j in fp.nondiv:
            e = e * fp.u[j]
        return e

    def integrate_base(self, v):
        return sum((v[b] * self.base.pairing[b, 0] for b in range(self.base.rank)), 0 * v[0])

    def _pairing(self):
        Bq = self.base.algebra(self.skr)
        G = self.skp.zeros((self.rank, self.rank))
        locs = [[self.skr.array(self.restrict_basis(fp, a).tolist()) for a in range(self.rank)] for fp in self.fps]
        inv_e = [self.inv_euler(fp) for fp in self.fps]
        for a in range(self.rank):
            for b in range(a, self.rank):
                tot = RatFun(self.ring, self.ring.zero)
                for f in range(len(self.fps)):
                    w = Bq.mul(Bq.mul(locs[f][a], locs[f][b]), inv_e[f])
                    tot = tot + sum((w[c] * Fraction(self.base.pairing[c, 0]) for c in range(self.base.rank)),
                                    RatFun(self.ring, self.ring.zero))
                G[a, b] = G[b, a] = tot.to_poly()
        return G

    def pairing_localized(self, x, y):
        """sum_alpha int_B alpha*x alpha*y / e_alpha for E-vectors x, y."""
        Bq = self.base.algebra(self.skr)
        tot = RatFun(self.ring, self.ring.zero)
        for fp, lx, ly in zip(self.fps, self.localize(x), self.localize(y)):
            w = Bq.mul(Bq.mul(self.skr.array(lx.tolist()), self.skr.array(ly.tolist())), self.inv_euler(fp))
            tot = tot + sum((w[c] * Fraction(self.base.pairing[c, 0]) for c in range(self.base.rank)),
                            RatFun(self.ring, self.ring.zero))
        return tot

    def restrict(self, alpha, x):
        fp = self.fp(alpha)
        return self.localize(x)[self.fps.index(fp)]

    # -- named classes -------------------------------------------------------------
    def class_P(self, i):
        return self.delocalize([self.P_alpha(fp, i) for fp in self.fps])

    def class_U(self, j):
        parts = []
        for fp in self.fps:
            parts.append(self.U_alpha(fp, j))
        return self.delocalize(parts)

    def class_phi(self, b):
        v = self.skp.zeros((self.rank,))
        v[b] = self.ring.one
        return v

    def m(self, v):
        """Multiplication matrix on the E-basis."""
        return self.algebra.mult_matrix(v)

    def index(self, i, j):
        return i * (self.s + 1) + j

    def pairs(self):
        return [divmod(a, self.s + 1) for a in range(self.rank)]

    # -- curve-class data ------------------------------------------------------
    def Lam_D(self, D):
        return [sum((self.Lam[n][b + 1] * D[b] for b in range(self.r)), Fraction(0)) for n in range(self.N)]

    def U_of(self, j, d, D):
        """Integer U_j(d, D) = sum_i c_ij d_i - Lambda_j(D)."""
        return sum(self.c[i][j - 1] * d[i] for i in range(self.k)) - self.Lam_D(D)[j - 1]

    def deg_q(self, i):
        return Fraction(sum(self.c[i]))

    def deg_Q(self, b):
        D = [int(x == b) for x in range(self.r)]
        return -sum(self.Lam_D(D), Fraction(0)) + self.base.deg_Q(D)

    def sigma_set(self):
        """Index pairs (i, j) of the extra parameters sigma_{i,j}."""
        S = [(i, j) for i in range(1, self.l + 1) for j in range(1, self.s + 1)]
        S += [(i, 0) for i in range(self.k + 1, self.l + 1)]
        return sorted(S)

    def direction(self, a):
        """Parameter attached to basis index a: ('t', i) | ('tau', j) | ('sigma', (i, j))."""
        i, j = divmod(a, self.s + 1)
        if j == 0 and 1 <= i <= self.k:
            return ("t", i)
        if i == 0:
            return ("tau", j)
        return ("sigma", (i, j))

    # -- validation report -----------------------------------------------------------
    def check(self) -> Report:
        bad = []
        for fp in self.fps:
            for j in range(1, self.N + 1):
                lhs = self.U_alpha(fp, j)
                lam = self.ring.zero
                base = [Fraction(0)] * self.base.rank
                for a, n in enumerate(fp.alpha):
                    lam = lam + self.ring.const(fp.cac[a][j - 1]) * self.ring.lam(n)
                    base = [x + fp.cac[a][j - 1] * y for x, y in zip(base, self.Lam[n - 1])]
                lam = lam - self.ring.lam(j)
                base = [x - y for x, y in zip(base, self.Lam[j - 1])]
                if not vzero(lhs - self.bvec(lam, base)):
                    bad.append((f"U_{j} at {fp.alpha}", "mismatch"))
        rep = self.algebra.check()
        bad += rep.residual
        for x in [self.class_P(0), self.class_phi(min(1, self.s))]:
            if not vzero(self.delocalize(self.localize(x)) - x):
                bad.append(("round trip", "fails"))
        return Report("toric data", not bad, bad)

    def describe(self) -> dict:
        def bstr(v):
            parts = []
            for b, c in enumerate(v):
                if c:
                    parts.append(f"{c}*{self.base.names[b]}" if c != 1 else self.base.names[b])
            return " + ".join(parts) or "0"

        Pn = "P" if self.k == 1 else "P{}"
        U = []
        for j in range(1, self.N + 1):
            terms = []
            for i in range(self.k):
                cij = self.c[i][j - 1]
                if cij:
                    nm = "P" if self.k == 1 else f"P{i + 1}"
                    terms.append(nm if cij == 1 else f"{cij}*{nm}")
            lam = self.Lam[j - 1]
            s = " + ".join(terms) if terms else "0"
            if any(lam):
                s += f" - ({bstr(lam)})" if sum(1 for x in lam if x) > 1 or any(x != 1 for x in lam if x) else f" - {bstr(lam)}"
            s += f" - l{j}"
            U.append(s.replace("+ -", "- "))
        return {"k": self.k, "N": self.N, "c": self.c, "F": [list(a) for a in self.F],
                "base": self.base.provenance, "U": U, "rank": self.rank, "basis": self.names,
                "S": [list(p) for p in self.sigma_set()]}


def load_toric_bundle(cfg: dict) -> ToricBundle:
    try:
        base = BaseTheory.from_config(cfg.get("base"))
        return ToricBundle(cfg["k"], cfg["N"], cfg["c"], cfg["fixed_points"],
                           cfg.get("lambda_classes") or ["0"] * int(cfg["N"]), cfg.get("monomials", []), base,
                           cfg.get("name", "E"))
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from exc


# built-in example configurations
def projective_config(N: int) -> dict:
    """P^{N-1} over a point, with sigma directions for p^2..p^{N-1}."""
    return {"name": f"P{N - 1}", "k": 1, "N": N, "c": [[1] * N], "fixed_points": [[j] for j in range(1, N + 1)],
            "lambda_classes": ["0"] * N, "monomials": [[i] for i in range(2, N)], "base": {"type": "point"}}


def f1_config() -> dict:
    return {"name": "F1", "k": 1, "N": 2, "c": [[1, 1]], "fixed_points": [[1], [2]],
            "lambda_classes": ["0", "phi"], "monomials": [], "base": {"type": "projective", "n": 1}}
