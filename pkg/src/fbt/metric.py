"""Finsler metrics on a single chart box.

A MetricField bundles evaluators for F, L = F^2 and the chart derivatives
dxL, dvL, dxxL, dxvL, dvvL, plus the fundamental tensor (the vertical
Hessian of L/2) and the geodesic spray.

Every supported kind fits one algebraic template,

    L(x, v) = q + 2*b*sqrt(q) + b^2        q = v.h(x)v,  b = beta(x).v,

with beta absent for plain Riemannian/quadratic kinds (then L = q, possibly
indefinite for the quadratic pseudo-kind).  The v-derivatives are exact
closed forms of (h, beta); the x-derivatives chain through (dh, dbeta,
d2h, d2beta), which are either analytic closures (euclidean, sphere chart,
constant-coefficient Randers) or central finite differences of the compiled
component expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr
from .errors import ConfigError, NumericalError

__all__ = [
    "PhaseState",
    "MetricField",
    "InvariantReport",
    "ZeroVelocity",
    "OutsideChart",
    "ConvexityViolation",
    "SingularVerticalHessian",
    "RandersBoundError",
    "euclidean",
    "sphere_stereo",
    "riemannian_expr",
    "randers_expr",
    "quadratic_expr",
    "from_callables",
]

DEFAULT_V_MIN = 1e-6
DEFAULT_CHART_HALF_WIDTH = 10.0
FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4


class ZeroVelocity(NumericalError):
    pass


class OutsideChart(NumericalError):
    pass


class ConvexityViolation(NumericalError):
    pass


class SingularVerticalHessian(NumericalError):
    pass


class RandersBoundError(ConfigError):
    pass


@dataclass
class PhaseState:
    """A chart point x and a velocity v, both in chart components."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)


# ---------------------------------------------------------------------------
# Component bundle: h(x), beta(x) and their chart derivatives


def _fd_first(fn, shape, step):
    def d(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        out = np.empty((n,) + shape)
        for k in range(n):
            h = step * max(1.0, abs(x[k]))
            xp = x.copy()
            xm = x.copy()
            xp[k] += h
            xm[k] -= h
            out[k] = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * h)
        return out

    return d


def _fd_second(fn, shape, step):
    def d2(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        out = np.empty((n, n) + shape)
        f0 = np.asarray(fn(x))
        steps = [step * max(1.0, abs(x[k])) for k in range(n)]
        for k in range(n):
            hk = steps[k]
            xp = x.copy()
            xm = x.copy()
            xp[k] += hk
            xm[k] -= hk
            out[k, k] = (np.asarray(fn(xp)) - 2.0 * f0 + np.asarray(fn(xm))) / hk**2
            for l in range(k + 1, n):
                hl = steps[l]
                xpp = x.copy(); xpp[k] += hk; xpp[l] += hl
                xpm = x.copy(); xpm[k] += hk; xpm[l] -= hl
                xmp = x.copy(); xmp[k] -= hk; xmp[l] += hl
                xmm = x.copy(); xmm[k] -= hk; xmm[l] -= hl
                mixed = (
                    np.asarray(fn(xpp)) - np.asarray(fn(xpm))
                    - np.asarray(fn(xmp)) + np.asarray(fn(xmm))
                ) / (4.0 * hk * hl)
                out[k, l] = mixed
                out[l, k] = mixed
        return out

    return d2


class _Components:
    """h, beta and derivative closures; finite differences fill the gaps."""

    def __init__(self, dim, h, beta=None, dh=None, d2h=None, dbeta=None,
                 d2beta=None, step1=FD_STEP_FIRST, step2=FD_STEP_SECOND):
        self.dim = dim
        self.h = h
        self.beta = beta
        self.analytic_dx = dh is not None and (beta is None or dbeta is not None)
        self.dh = dh if dh is not None else _fd_first(h, (dim, dim), step1)
        self.d2h = d2h if d2h is not None else _fd_second(h, (dim, dim), step2)
        if beta is None:
            self.dbeta = None
            self.d2beta = None
        else:
            self.dbeta = dbeta if dbeta is not None else _fd_first(beta, (dim,), step1)
            self.d2beta = (
                d2beta if d2beta is not None else _fd_second(beta, (dim,), step2)
            )


class MetricField:
    """Evaluator bundle for one metric on an axis-aligned chart box."""

    def __init__(self, dim, kind, comps, *, pseudo=False, params=None,
                 chart_box=None, v_min=DEFAULT_V_MIN, sources=None):
        if dim < 1:
            raise ConfigError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.kind = kind
        self._c = comps
        self.pseudo = bool(pseudo)
        self.params = dict(params or {})
        if chart_box is None:
            chart_box = [[-DEFAULT_CHART_HALF_WIDTH, DEFAULT_CHART_HALF_WIDTH]] * dim
        self.chart_box = np.asarray(chart_box, dtype=float)
        if self.chart_box.shape != (dim, 2) or np.any(
            self.chart_box[:, 1] <= self.chart_box[:, 0]
        ):
            raise ConfigError(f"chart_box must be shape ({dim}, 2) with lo < hi")
        self.v_min = float(v_min)
        self.sources = sources or {}

    # -- validation ---------------------------------------------------------

    @property
    def has_analytic_dx(self):
        return self._c.analytic_dx

    def inside_chart(self, x):
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.chart_box[:, 0]) and np.all(x <= self.chart_box[:, 1])
        )

    def _check(self, x, v):
        if not self.inside_chart(x):
            raise OutsideChart(f"point {np.asarray(x)} outside chart box")
        if np.linalg.norm(v) < self.v_min:
            raise ZeroVelocity(
                f"|v| = {np.linalg.norm(v):.3e} below floor {self.v_min:.3e}"
            )

    # -- scalar pieces shared by the formulas --------------------------------

    def _qb(self, x, v):
        hx = np.asarray(self._c.h(x), dtype=float)
        u = hx @ v
        q = float(v @ u)
        if self._c.beta is None:
            return hx, u, q, None, 0.0
        bx = np.asarray(self._c.beta(x), dtype=float)
        return hx, u, q, bx, float(bx @ v)

    def _sqrt_q(self, q):
        if q <= 0.0:
            raise ConvexityViolation(
                f"quadratic part non-positive ({q!r}) at an evaluation point"
            )
        return math.sqrt(q)

    # -- public evaluators ----------------------------------------------------

    def L(self, x, v, validate=False):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if validate:
            self._check(x, v)
        _, _, q, bx, b = self._qb(x, v)
        if bx is None:
            return q
        s = self._sqrt_q(q)
        return (s + b) ** 2

    def F(self, x, v, validate=False):
        """F(x, v); for the quadratic pseudo-kind this is the Lagrangian value."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if validate:
            self._check(x, v)
        _, _, q, bx, b = self._qb(x, v)
        if self.pseudo:
            return q
        s = self._sqrt_q(q)
        val = s + b
        if val <= 0.0:
            raise ConvexityViolation(f"F = {val!r} not positive; metric degenerate here")
        return val

    def F_state(self, s, validate=True):
        return self.F(s.x, s.v, validate=validate)

    # formula pieces over the shared pack (hx, u, q, bx, b[, s, dh, dbeta])

    def _dvL(self, hx, u, q, bx, b, s):
        if bx is None:
            return 2.0 * u
        return 2.0 * u + 2.0 * s * bx + (2.0 * b / s) * u + 2.0 * b * bx

    def _dvvL(self, hx, u, q, bx, b, s):
        if bx is None:
            return 2.0 * hx
        bu = np.outer(bx, u) + np.outer(u, bx)
        return (
            2.0 * hx
            + (2.0 / s) * bu
            + (2.0 * b / s) * hx
            - (2.0 * b / s**3) * np.outer(u, u)
            + 2.0 * np.outer(bx, bx)
        )

    def _dxL(self, qk, bk, q, bx, b, s):
        if bx is None:
            return qk
        return qk * (1.0 + b / s) + 2.0 * bk * (s + b)

    def _dxvL(self, hx, u, q, bx, b, s, uk, qk, dbeta, bk):
        if bx is None:
            return 2.0 * uk
        sk = qk / (2.0 * s)
        out = 2.0 * uk
        out += 2.0 * np.outer(sk, bx) + 2.0 * s * dbeta
        out += 2.0 * np.outer(bk / s - b * sk / q, u) + (2.0 * b / s) * uk
        out += 2.0 * np.outer(bk, bx) + 2.0 * b * dbeta
        return out

    def _pack(self, x, v):
        hx, u, q, bx, b = self._qb(x, v)
        s = None if bx is None else self._sqrt_q(q)
        return hx, u, q, bx, b, s

    def dvL(self, x, v):
        return self._dvL(*self._pack(np.asarray(x, float), np.asarray(v, float)))

    def dvvL(self, x, v):
        return self._dvvL(*self._pack(np.asarray(x, float), np.asarray(v, float)))

    def dxL(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        hx, u, q, bx, b, s = self._pack(x, v)
        qk = np.einsum("i,kij,j->k", v, self._c.dh(x), v)
        bk = None if bx is None else self._c.dbeta(x) @ v
        return self._dxL(qk, bk, q, bx, b, s)

    def dxvL(self, x, v):
        """Mixed Hessian, dxvL[k, j] = d^2 L / dx_k dv_j."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        hx, u, q, bx, b, s = self._pack(x, v)
        dh = self._c.dh(x)
        uk = np.einsum("kij,j->ki", dh, v)
        qk = np.einsum("i,kij,j->k", v, dh, v)
        dbeta = self._c.dbeta(x) if bx is not None else None
        bk = None if dbeta is None else dbeta @ v
        return self._dxvL(hx, u, q, bx, b, s, uk, qk, dbeta, bk)

    def dxxL(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        hx, u, q, bx, b, s = self._pack(x, v)
        qkl = np.einsum("i,klij,j->kl", v, self._c.d2h(x), v)
        if bx is None:
            return qkl
        dh = self._c.dh(x)
        qk = np.einsum("i,kij,j->k", v, dh, v)
        sk = qk / (2.0 * s)
        skl = qkl / (2.0 * s) - np.outer(qk, qk) / (4.0 * s**3)
        bk = self._c.dbeta(x) @ v
        bkl = self._c.d2beta(x) @ v
        return (
            qkl
            + 2.0 * (bkl * s + np.outer(bk, sk) + np.outer(sk, bk) + b * skl)
            + 2.0 * (bkl * b + np.outer(bk, bk))
        )

    def second_derivatives(self, x, v):
        """(dxxL, dxvL, dvvL) with shared component evaluations (hot path for
        quadrature assembly)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        hx, u, q, bx, b, s = self._pack(x, v)
        dh = self._c.dh(x)
        d2h = self._c.d2h(x)
        uk = np.einsum("kij,j->ki", dh, v)
        qk = np.einsum("i,kij,j->k", v, dh, v)
        qkl = np.einsum("i,klij,j->kl", v, d2h, v)
        if bx is None:
            return qkl, 2.0 * uk, 2.0 * hx
        dbeta = self._c.dbeta(x)
        bk = dbeta @ v
        bkl = self._c.d2beta(x) @ v
        sk = qk / (2.0 * s)
        skl = qkl / (2.0 * s) - np.outer(qk, qk) / (4.0 * s**3)
        lxx = (
            qkl
            + 2.0 * (bkl * s + np.outer(bk, sk) + np.outer(sk, bk) + b * skl)
            + 2.0 * (bkl * b + np.outer(bk, bk))
        )
        lxv = self._dxvL(hx, u, q, bx, b, s, uk, qk, dbeta, bk)
        lvv = self._dvvL(hx, u, q, bx, b, s)
        return lxx, lxv, lvv

    def fundamental_tensor(self, x, v, validate=False):
        """Vertical Hessian of L/2 at (x, v), symmetrized."""
        if validate:
            self._check(x, v)
        g = 0.5 * self.dvvL(np.asarray(x, float), np.asarray(v, float))
        g = 0.5 * (g + g.T)
        if not self.pseudo:
            w = np.linalg.eigvalsh(g)
            tol_pd = 1e-10 * np.trace(g) / self.dim
            if w[0] <= tol_pd:
                raise ConvexityViolation(
                    f"fundamental tensor not positive definite "
                    f"(min eig {w[0]:.3e}, tol {tol_pd:.3e})"
                )
        return g

    def spray(self, x, v, validate=False):
        """Acceleration solving dvvL . a = dxL - dvxL . v (Euler-Lagrange)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if validate:
            self._check(x, v)
        hx, u, q, bx, b, s = self._pack(x, v)
        dh = self._c.dh(x)
        uk = np.einsum("kij,j->ki", dh, v)
        qk = np.einsum("i,kij,j->k", v, dh, v)
        dbeta = self._c.dbeta(x) if bx is not None else None
        bk = None if dbeta is None else dbeta @ v
        A = self._dvvL(hx, u, q, bx, b, s)
        rhs = (
            self._dxL(qk, bk, q, bx, b, s)
            - self._dxvL(hx, u, q, bx, b, s, uk, qk, dbeta, bk).T @ v
        )
        try:
            return np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularVerticalHessian(str(exc)) from None

    # -- invariant sweep -------------------------------------------------------

    def check_invariants(self, samples=200, seed=0, t_factors=(0.5, 2.0, 7.0)):
        rng = np.random.default_rng(seed)
        lo, hi = self.chart_box[:, 0], self.chart_box[:, 1]
        worst_hom = 0.0
        worst_euler = 0.0
        worst_sym = 0.0
        min_eig_ratio = math.inf
        failures = []
        for _ in range(samples):
            x = lo + (hi - lo) * rng.uniform(size=self.dim)
            direction = rng.normal(size=self.dim)
            direction /= np.linalg.norm(direction)
            mag = rng.uniform(self.v_min, 10.0)
            v = mag * direction
            try:
                fv = self.F(x, v)
                if self.pseudo and abs(fv) < 1e-10 * mag**2:
                    continue  # near the null cone homogeneity ratios blow up
                deg = 2.0 if self.pseudo else 1.0
                for t in t_factors:
                    err = abs(self.F(x, t * v) - t**deg * fv) / (t**deg * abs(fv))
                    worst_hom = max(worst_hom, err)
                g = 0.5 * self.dvvL(x, v)
                worst_sym = max(worst_sym, float(np.max(np.abs(g - g.T))))
                gs = 0.5 * (g + g.T)
                euler = abs(float(v @ gs @ v) - fv * fv) / max(fv * fv, 1e-300)
                worst_euler = max(worst_euler, euler)
                if not self.pseudo:
                    w = np.linalg.eigvalsh(gs)
                    min_eig_ratio = min(min_eig_ratio, w[0] / max(abs(w[-1]), 1e-300))
                    if w[0] <= 0:
                        failures.append(("definiteness", x.tolist(), v.tolist()))
            except NumericalError as exc:
                failures.append((type(exc).__name__, x.tolist(), v.tolist()))
        passed = (
            worst_hom <= 1e-9
            and worst_euler <= 1e-6
            and not failures
            and (self.pseudo or min_eig_ratio > 0)
        )
        return InvariantReport(
            kind=self.kind,
            samples=samples,
            seed=seed,
            max_homogeneity_error=worst_hom,
            max_euler_error=worst_euler,
            max_symmetry_error=worst_sym,
            min_eigenvalue_ratio=None if self.pseudo else min_eig_ratio,
            failures=failures,
            passed=passed,
        )


@dataclass
class InvariantReport:
    kind: str
    samples: int
    seed: int
    max_homogeneity_error: float
    max_euler_error: float
    max_symmetry_error: float
    min_eigenvalue_ratio: float | None
    failures: list = field(default_factory=list)
    passed: bool = False

    def as_dict(self):
        return {
            "kind": self.kind,
            "samples": self.samples,
            "seed": self.seed,
            "max_homogeneity_error": self.max_homogeneity_error,
            "max_euler_error": self.max_euler_error,
            "max_symmetry_error": self.max_symmetry_error,
            "min_eigenvalue_ratio": self.min_eigenvalue_ratio,
            "failures": self.failures,
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------
# Factories


def euclidean(dim=2, **kw):
    eye = np.eye(dim)
    zeros1 = np.zeros((dim, dim, dim))
    zeros2 = np.zeros((dim, dim, dim, dim))
    comps = _Components(
        dim,
        h=lambda x: eye,
        dh=lambda x: zeros1,
        d2h=lambda x: zeros2,
    )
    return MetricField(dim, "euclidean", comps, **kw)


def sphere_stereo(curvature, dim=2, **kw):
    """Round sphere of constant curvature K in the stereographic chart.

    Conformal factor rho(x) = 4 / (K (1 + |x|^2)^2); the image of a great
    circle through the chart point (0, ..., -1) tangent to e1 is |x| = 1.
    """
    if curvature <= 0:
        raise ConfigError(f"curvature must be positive, got {curvature}")
    K = float(curvature)
    eye = np.eye(dim)

    def rho(x):
        return 4.0 / (K * (1.0 + float(x @ x)) ** 2)

    def h(x):
        return rho(x) * eye

    def dh(x):
        s = 1.0 + float(x @ x)
        drho = -16.0 * np.asarray(x, float) / (K * s**3)
        return drho[:, None, None] * eye

    def d2h(x):
        x = np.asarray(x, dtype=float)
        s = 1.0 + float(x @ x)
        d2rho = (-16.0 / (K * s**3)) * np.eye(dim) + (
            96.0 / (K * s**4)
        ) * np.outer(x, x)
        return d2rho[:, :, None, None] * eye

    params = dict(kw.pop("params", {}) or {})
    params.setdefault("K", K)
    comps = _Components(dim, h=h, dh=dh, d2h=d2h)
    return MetricField(dim, "sphere_stereo", comps, params=params, **kw)


def _matrix_from_exprs(dim, rows, params, what):
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ConfigError(f"{what} must be a {dim}x{dim} matrix of expressions")
    fns = [[_expr.bind(rows[i][j], dim, params) for j in range(dim)] for i in range(dim)]

    def h(x):
        out = np.empty((dim, dim))
        for i in range(dim):
            for j in range(dim):
                out[i, j] = fns[i][j](x)
        return 0.5 * (out + out.T)

    return h


def _vector_from_exprs(dim, comps, params, what):
    if len(comps) != dim:
        raise ConfigError(f"{what} must have {dim} component expressions")
    fns = [_expr.bind(c, dim, params) for c in comps]

    def b(x):
        return np.array([f(x) for f in fns])

    return b


def riemannian_expr(dim, g, params=None, **kw):
    comps = _Components(dim, h=_matrix_from_exprs(dim, g, params or {}, "g"))
    return MetricField(
        dim, "riemannian_expr", comps, params=params,
        sources={"g": g}, **kw,
    )


def quadratic_expr(dim, g, params=None, **kw):
    comps = _Components(dim, h=_matrix_from_exprs(dim, g, params or {}, "g"))
    return MetricField(
        dim, "quadratic_expr", comps, pseudo=True, params=params,
        sources={"g": g}, **kw,
    )


def _check_randers_bound(m, n_check=128, seed=7):
    """Sample |beta|_h over the chart box; reject if it ever reaches 1."""
    rng = np.random.default_rng(seed)
    lo, hi = m.chart_box[:, 0], m.chart_box[:, 1]
    pts = [0.5 * (lo + hi)]
    pts += [lo + (hi - lo) * rng.uniform(size=m.dim) for _ in range(n_check)]
    worst = -math.inf
    worst_x = None
    for x in pts:
        hx = np.asarray(m._c.h(x), dtype=float)
        bx = np.asarray(m._c.beta(x), dtype=float)
        try:
            norm2 = float(bx @ np.linalg.solve(hx, bx))
        except np.linalg.LinAlgError:
            raise RandersBoundError(f"h singular at sampled point {x}")
        if norm2 > worst:
            worst, worst_x = norm2, x
    if worst >= 1.0:
        raise RandersBoundError(
            f"|beta|_h = {math.sqrt(max(worst, 0.0)):.6f} >= 1 near {worst_x}"
        )
    return math.sqrt(max(worst, 0.0))


def randers_expr(dim, h, beta, params=None, *, bound_check_samples=128, **kw):
    comps = _Components(
        dim,
        h=_matrix_from_exprs(dim, h, params or {}, "h"),
        beta=_vector_from_exprs(dim, beta, params or {}, "beta"),
    )
    m = MetricField(
        dim, "randers", comps, params=params,
        sources={"h": h, "beta": beta}, **kw,
    )
    _check_randers_bound(m, n_check=bound_check_samples)
    return m


def from_callables(dim, kind, h, beta=None, *, dh=None, d2h=None, dbeta=None,
                   d2beta=None, pseudo=False, randers_check=True, **kw):
    """Build a MetricField from component callables (library entry point)."""
    comps = _Components(dim, h=h, beta=beta, dh=dh, d2h=d2h,
                        dbeta=dbeta, d2beta=d2beta)
    m = MetricField(dim, kind, comps, pseudo=pseudo, **kw)
    if beta is not None and not pseudo and randers_check:
        _check_randers_bound(m)
    return m
