"""I.i.d. potential catalog: sampling, cumulant generating functions, tilting.

Three families are supported.

* ``double_exponential(rho)``: survival P(xi > r) = exp(-e^{r/rho}) on all of
  R.  Writing xi = rho log E with E standard exponential gives the exact
  identity H(t) = log <e^{t xi}> = log Gamma(1 + rho t), which serves as the
  quadrature oracle.
* ``tail families``: the law is pinned by its upper tail
  P(xi > r) = exp(-e^{f(r)}) on (r_lo, r_hi), with the leftover mass sitting
  in an atom at r_lo (= essinf).  Bounded families have r_hi = 0 so that
  esssup xi = 0; a user offset is carried separately and only added back when
  fields are written out.
* ``constant(c)``: the degenerate law, useful as a test oracle.

The tail integral <e^{t xi}> is computed after substituting u = e^{f(r)},
which turns the density into exp(t g(u) - u) du with g = f^{-1} o log, so the
integrand decays like e^{-u} and a peak-extracted adaptive quadrature applies
uniformly to every family.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .errors import BracketError, QuadratureError, ValidationError
from .lattice import Box, LatticeField

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-12, limit=200)


@dataclass(frozen=True)
class TailSpec:
    """Tail shape f plus the pieces needed for sampling and quadrature.

    f is positive near the upper end of the support, strictly increasing and
    smooth; g(u) = f^{-1}(log u) maps the substituted tail variable back to
    potential values.
    """

    name: str
    params: dict
    f: callable
    fp: callable          # f'
    f_inv: callable       # inverse of f on (f(r_lo), inf)
    r_lo: float
    r_hi: float           # 0.0 for bounded families, +inf for unbounded
    bounded: bool

    @property
    def u_lo(self):
        return math.exp(self.f(self.r_lo))

    def g(self, u):
        return self.f_inv(np.log(u))


@dataclass(frozen=True)
class PotentialModel:
    kind: str                      # "double_exponential" | "tail_family" | "constant"
    rho: float | None = None
    c: float | None = None
    tail: TailSpec | None = None
    offset: float = 0.0            # reporting-time shift, not part of the law

    def __post_init__(self):
        if self.kind == "double_exponential":
            if self.rho is None or self.rho <= 0:
                raise ValidationError("double exponential needs rho > 0")
        elif self.kind == "constant":
            if self.c is None:
                raise ValidationError("constant model needs a value c")
        elif self.kind == "tail_family":
            if self.tail is None:
                raise ValidationError("tail_family model needs a TailSpec")
        else:
            raise ValidationError(f"unknown model kind {self.kind!r}")

    @property
    def essinf(self):
        if self.kind == "double_exponential":
            return -np.inf
        if self.kind == "constant":
            return self.c
        return self.tail.r_lo

    @property
    def bounded_above(self):
        if self.kind == "constant":
            return True
        return self.kind == "tail_family" and self.tail.bounded

    def H(self, t, method="auto"):
        return cumulant_H(self, t, method=method)

    def label(self):
        if self.kind == "double_exponential":
            return f"double_exponential(rho={self.rho:g})"
        if self.kind == "constant":
            return f"constant(c={self.c:g})"
        return f"tail_family[{self.tail.name}]({self.tail.params})"

    def to_json(self):
        if self.kind == "double_exponential":
            params = {"rho": self.rho}
        elif self.kind == "constant":
            params = {"c": self.c}
        else:
            params = {"family": self.tail.name, **self.tail.params}
        return {
            "kind": self.kind,
            "params": params,
            "essinf": None if np.isneginf(self.essinf) else float(self.essinf),
            "offset": self.offset,
        }


def model_from_json(obj) -> PotentialModel:
    if isinstance(obj, str):
        obj = json.loads(obj)
    kind, params = obj["kind"], dict(obj.get("params", {}))
    offset = float(obj.get("offset", 0.0))
    if kind == "double_exponential":
        return double_exponential(params["rho"], offset=offset)
    if kind == "constant":
        return constant(params["c"], offset=offset)
    if kind == "tail_family":
        family = params.pop("family")
        builder = {
            "power": tail_power,
            "bounded_power": tail_bounded_power,
            "bounded_log": tail_bounded_log,
        }.get(family)
        if builder is None:
            raise ValidationError(f"unknown tail family {family!r}")
        return builder(**params, offset=offset)
    raise ValidationError(f"unknown model kind {kind!r}")


def double_exponential(rho, offset=0.0) -> PotentialModel:
    return PotentialModel("double_exponential", rho=float(rho), offset=offset)


def constant(c, offset=0.0) -> PotentialModel:
    return PotentialModel("constant", c=float(c), offset=offset)


def tail_power(a, offset=0.0) -> PotentialModel:
    """Unbounded tail family f(r) = r^a on [0, inf); a > 1 is almost bounded."""
    if a <= 0:
        raise ValidationError("tail exponent a must be positive")
    a = float(a)
    spec = TailSpec(
        name="power",
        params={"a": a},
        f=lambda r: np.power(r, a),
        fp=lambda r: a * np.power(r, a - 1.0),
        f_inv=lambda y: np.power(y, 1.0 / a),
        r_lo=0.0,
        r_hi=np.inf,
        bounded=False,
    )
    return PotentialModel("tail_family", tail=spec, offset=offset)


def tail_bounded_power(b, offset=0.0) -> PotentialModel:
    """Bounded almost-bounded family f(r) = |r|^(-b) on [-1, 0)."""
    if b <= 0:
        raise ValidationError("tail exponent b must be positive")
    b = float(b)
    spec = TailSpec(
        name="bounded_power",
        params={"b": b},
        f=lambda r: np.power(np.abs(r), -b),
        fp=lambda r: b * np.power(np.abs(r), -b - 1.0),
        f_inv=lambda y: -np.power(y, -1.0 / b),
        r_lo=-1.0,
        r_hi=0.0,
        bounded=True,
    )
    return PotentialModel("tail_family", tail=spec, offset=offset)


def tail_bounded_log(gamma, offset=0.0) -> PotentialModel:
    """Bounded-above family f(r) = -(gamma/(1-gamma)) log|r| on [-1, 0)."""
    if not 0 < gamma < 1:
        raise ValidationError("gamma must lie in (0, 1)")
    c = float(gamma / (1.0 - gamma))
    spec = TailSpec(
        name="bounded_log",
        params={"gamma": float(gamma)},
        f=lambda r: -c * np.log(np.abs(r)),
        fp=lambda r: c / np.abs(r),
        f_inv=lambda y: -np.exp(-np.asarray(y) / c),
        r_lo=-1.0,
        r_hi=0.0,
        bounded=True,
    )
    return PotentialModel("tail_family", tail=spec, offset=offset)


def catalog() -> dict:
    """The named models used throughout the experiments and tests."""
    return {
        "single_peak": tail_power(0.5),
        "double_exponential": double_exponential(1.0),
        "almost_bounded_unbounded": tail_power(2.0),
        "almost_bounded_bounded": tail_bounded_power(1.0),
        "bounded_above": tail_bounded_log(0.5),
    }


# ---------------------------------------------------------------------------
# Sampling


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_field(model: PotentialModel, box: Box, seed, require_finite_essinf=False) -> LatticeField:
    """One i.i.d. draw per site via the inverse CDF; deterministic per seed."""
    if box.n_sites < 1:
        raise ValidationError("box must be nonempty")
    if require_finite_essinf and np.isneginf(model.essinf):
        raise ValidationError(
            f"{model.label()} has essinf = -inf; almost-sure experiments need a "
            "lower-bounded potential (pass allow_unbounded_below to override)"
        )
    rng = _rng(seed)
    u = rng.random(box.shape)
    if model.kind == "constant":
        vals = np.full(box.shape, model.c)
    elif model.kind == "double_exponential":
        # P(xi > r) = P(-log u > e^{r/rho}) = exp(-e^{r/rho})
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        vals = model.rho * np.log(-np.log(u))
    else:
        spec = model.tail
        y = -np.log1p(-np.clip(u, 0.0, 1.0 - 1e-16))  # -log(1-u), exponential
        atom = y <= spec.u_lo
        vals = np.full(box.shape, spec.r_lo)
        if np.any(~atom):
            vals[~atom] = spec.f_inv(np.log(y[~atom]))
    return LatticeField(box, vals)


# ---------------------------------------------------------------------------
# Cumulant generating function H(t) = log <exp(t xi)>


def _log_tail_integral(gfun, u_lo, t):
    """log of int_{u_lo}^inf exp(t g(u) - u) du by peak-extracted quadrature."""

    def h(u):
        return t * gfun(u) - u

    # Locate the maximum of h on a geometric scan grid, expanding to the
    # right until the integrand has clearly decayed.
    lo = max(u_lo, 1e-12) * (1.0 + 1e-12) if u_lo > 0 else 1e-12
    hi = max(10.0, 4.0 * t, 10.0 * lo)
    while True:
        grid = np.geomspace(lo, hi, 240)
        hv = h(grid)
        imax = int(np.argmax(hv))
        if hv[-1] < hv[imax] - 200.0 or hi > 1e280:
            break
        hi *= 1e3
    # Refine the peak.
    left = grid[max(imax - 1, 0)]
    right = grid[min(imax + 1, len(grid) - 1)]
    if imax in (0, len(grid) - 1) and u_lo > 0 and imax == 0:
        ustar = lo
    else:
        res = optimize.minimize_scalar(
            lambda x: -h(math.exp(x)),
            bounds=(math.log(left), math.log(right)),
            method="bounded",
            options={"xatol": 1e-14},
        )
        ustar = math.exp(res.x)
    M = h(ustar)
    # Local width from the curvature, with a safe fallback.
    du = max(1e-6 * ustar, 1e-9)
    hpp = (h(ustar + du) - 2.0 * M + h(max(ustar - du, lo))) / du**2
    sigma = 1.0 / math.sqrt(-hpp) if hpp < 0 else max(ustar, 1.0)
    sigma = min(max(sigma, 1e-12), 1e280)

    a = max(lo, ustar - 40.0 * sigma)
    b = ustar + 40.0 * sigma
    pieces = []
    if a > lo * (1 + 1e-12):
        pieces.append((lo, a))
    pieces.append((a, ustar))
    pieces.append((ustar, b))
    pieces.append((b, np.inf))

    total, err = 0.0, 0.0

    def scaled(u):
        return math.exp(min(h(u) - M, 0.0))

    for lo_i, hi_i in pieces:
        val, abserr = integrate.quad(scaled, lo_i, hi_i, **_QUAD_OPTS)
        total += val
        err += abserr
    if total <= 0 or err > 1e-8 * total:
        raise QuadratureError(
            f"tail quadrature did not converge (value {total:.3e}, error {err:.3e})",
            achieved=err,
        )
    return M + math.log(total)


def cumulant_H(model: PotentialModel, t, method="auto"):
    """H(t) = log <exp(t xi(0))> for t >= 0.

    ``method`` is one of "auto" (closed form when available), "exact",
    "quadrature" or, for tail families, "laplace" (the saddle approximation
    t r(t) - e^{f(r(t))}).
    """
    t = float(t)
    if t < 0:
        raise ValidationError("cumulant_H requires t >= 0")
    if t == 0.0:
        return 0.0
    if model.kind == "constant":
        return model.c * t
    if model.kind == "double_exponential":
        if method in ("auto", "exact"):
            return float(gammaln(1.0 + model.rho * t))
        if method == "quadrature":
            return _log_tail_integral(lambda u: model.rho * np.log(u), 0.0, t)
        raise ValidationError(f"method {method!r} not available for this model")
    spec = model.tail
    if method == "laplace":
        r = laplace_point_r(model, t)
        return t * r - math.exp(spec.f(r))
    if method == "exact":
        raise ValidationError("no closed form for tail families")
    u_lo = spec.u_lo
    tail_log = _log_tail_integral(spec.g, u_lo, t)
    atom_log = t * spec.r_lo + math.log(-math.expm1(-u_lo))
    return float(np.logaddexp(atom_log, tail_log))


def fast_H(model: PotentialModel, t_max, n_nodes=1025):
    """Vectorised H evaluator on [0, t_max] for Monte Carlo inner loops.

    Exact families return their closed form; tail families are tabulated on a
    uniform grid once and interpolated with a cubic spline (H is smooth).
    """
    if model.kind == "double_exponential":
        rho = model.rho
        return lambda ell: gammaln(1.0 + rho * np.asarray(ell, float))
    if model.kind == "constant":
        c = model.c
        return lambda ell: c * np.asarray(ell, float)
    ts = np.linspace(0.0, float(t_max), n_nodes)
    hs = np.array([cumulant_H(model, tt) for tt in ts])
    spline = CubicSpline(ts, hs)
    t_hi = float(t_max)

    def H_vec(ell):
        ell = np.asarray(ell, float)
        if np.any(ell > t_hi * (1 + 1e-12)):
            raise ValidationError("fast_H evaluated beyond its tabulated range")
        return spline(np.clip(ell, 0.0, t_hi))

    return H_vec


# ---------------------------------------------------------------------------
# Tilting point r(t): t = f'(r) e^{f(r)}


def laplace_point_r(model: PotentialModel, t):
    """Largest root r(t) of t = f'(r) exp(f(r)), by bracketed root-finding."""
    if model.kind != "tail_family":
        raise ValidationError("laplace_point_r is defined for tail families only")
    if t <= 0:
        raise ValidationError("t must be positive")
    spec = model.tail

    def phi(r):
        return math.log(spec.fp(r)) + spec.f(r) - math.log(t)

    if spec.bounded:
        # r in (r_lo, 0); phi -> +inf as r -> 0^-
        xs = spec.r_lo + (0.0 - spec.r_lo) * (1.0 - np.geomspace(1e-12, 1.0, 200))[::-1]
        xs = np.clip(xs, spec.r_lo + 1e-12, -1e-300)
    else:
        xs = spec.r_lo + np.geomspace(1e-8, 1e8, 320)
    vals = np.array([phi(x) for x in xs])
    sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if len(sign_change) == 0:
        raise BracketError(
            f"no root of t = f'(r)exp(f(r)) on the scanned bracket "
            f"[{xs[0]:.6g}, {xs[-1]:.6g}] for t={t:g}",
            scan_points=xs,
            scan_values=vals,
        )
    i = sign_change[-1]  # largest-r branch
    root = optimize.brentq(phi, xs[i], xs[i + 1], xtol=1e-15, rtol=8.9e-16)
    return float(root)
