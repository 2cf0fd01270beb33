"""Scale functions alpha(t) and beta(t).

alpha solves the fixed-point equation kappa(t a^{-d}) / (t a^{-d}) = a^{-2},
equivalently kappa(s)/s = (s/t)^{2/d} for s = t alpha(t)^{-d}.  When several
roots exist on the scan range the largest s is selected (the branch with
s(t) -> infinity used in the existence argument).  beta solves
beta / alpha(beta)^2 = d log t exactly; the asymptotic "~" of the definition
is sharpened to "=" as a normalisation choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import BracketError, ValidationError

_SCAN_DECADES = 6.0
_SCAN_POINTS = 181


def _largest_root(phi, lo, hi, n=_SCAN_POINTS):
    xs = np.linspace(lo, hi, n)
    vals = np.array([phi(x) for x in xs])
    if not np.all(np.isfinite(vals)):
        raise ValidationError("scan produced non-finite values")
    idx = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if len(idx) == 0:
        raise BracketError(
            f"no sign change on scanned bracket [{lo:.6g}, {hi:.6g}]",
            scan_points=xs, scan_values=vals,
        )
    i = idx[-1]
    root = brentq(phi, xs[i], xs[i + 1], xtol=1e-14, rtol=8.9e-16)
    roots = [0.5 * (xs[j] + xs[j + 1]) for j in idx]
    return root, roots


def alpha_of_t(kappa, d, t, kappa_star=None):
    """Spatial scale from kappa(s)/s = (s/t)^{2/d}; alpha = (t/s)^{1/d}.

    In the kappa* = infinity regime the scale is the constant 1 (single-peak
    class); pass kappa_star=inf to short-circuit.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    if kappa_star is not None and np.isinf(kappa_star):
        return 1.0

    lt = math.log(t)

    def phi(ls):
        s = math.exp(ls)
        k = kappa(s)
        if k <= 0:
            # below the asymptotic regime kappa(s)/s sits under any positive
            # right-hand side, so this counts as "LHS < RHS"
            return -1e6
        return math.log(k / s) - (2.0 / d) * (ls - lt)

    ls_root, _ = _largest_root(
        phi, lt - _SCAN_DECADES * math.log(10.0), lt + _SCAN_DECADES * math.log(10.0)
    )
    s = math.exp(ls_root)
    return (t / s) ** (1.0 / d)


def alpha_residual(kappa, d, t, alpha):
    """Relative residual of the fixed-point equation at alpha."""
    s = t * alpha ** (-d)
    return abs(kappa(s) / s - alpha ** (-2.0)) * alpha**2


def beta_of_t(alpha, d, t):
    """Almost-sure time scale: solves b / alpha(b)^2 = d log t for b."""
    if t <= 1:
        raise ValidationError("beta is defined for t > 1")
    rhs = d * math.log(t)
    lr = math.log(rhs)

    def phi(lb):
        b = math.exp(lb)
        return lb - 2.0 * math.log(alpha(b)) - lr

    lb_root, _ = _largest_root(
        phi, lr - _SCAN_DECADES * math.log(10.0), lr + _SCAN_DECADES * math.log(10.0)
    )
    return math.exp(lb_root)


def beta_residual(alpha, d, t, beta):
    rhs = d * math.log(t)
    return abs(beta / alpha(beta) ** 2 - rhs) / rhs


def leading_term(H, alpha, d, p, t):
    """First term of the moment asymptotics: H(pt a(pt)^{-d}) / (pt a(pt)^{-d})."""
    s = p * t * alpha(p * t) ** (-d)
    return H(s) / s


@dataclass
class ScalePair:
    """Bundled alpha/beta callables for one classified model.

    ``alpha`` solves the fixed-point equation (memoised); ``alpha_fast`` is a
    log-log spline of alpha used inside the beta root-solve, where thousands
    of alpha evaluations would otherwise each trigger a full solve.
    """

    kappa: callable
    d: int
    kappa_star: float
    _alpha_cache: dict = field(default_factory=dict)
    _spline: object = None

    def alpha(self, t):
        key = float(t)
        if key not in self._alpha_cache:
            self._alpha_cache[key] = alpha_of_t(self.kappa, self.d, key, self.kappa_star)
        return self._alpha_cache[key]

    def _alpha_fast(self):
        """Log-log spline of alpha over its solvable range, clamped outside.

        The fixed-point equation only has solutions for sufficiently large t;
        below that alpha is continued by its boundary value (it is slowly
        varying there anyway).
        """
        if np.isinf(self.kappa_star):
            return lambda b: 1.0
        if self._spline is None:
            ts, la = [], []
            for t in np.geomspace(1e-2, 1e14, 160):
                try:
                    la.append(math.log(alpha_of_t(self.kappa, self.d, t, self.kappa_star)))
                    ts.append(math.log(t))
                except BracketError:
                    ts.clear()
                    la.clear()
            if len(ts) < 4:
                raise BracketError("alpha not solvable on the spline range")
            self._spline = (CubicSpline(np.array(ts), np.array(la)), ts[0], ts[-1])
        spline, lo, hi = self._spline
        return lambda b: float(np.exp(spline(min(max(math.log(b), lo), hi))))

    def beta(self, t):
        if np.isinf(self.kappa_star):
            return self.d * math.log(t)
        return beta_of_t(self._alpha_fast(), self.d, t)


def regvar_index(t_grid, values):
    """Regular-variation index of positive values on a geometric grid.

    Local log-log slopes are extrapolated against 1/log t; the intercept is
    returned.  A plain least-squares slope overstates the index by O(1/log t)
    for the log-corrected families this package works with.
    """
    t = np.asarray(t_grid, float)
    v = np.abs(np.asarray(values, float))
    if np.any(v <= 0):
        raise ValidationError("regvar_index needs nonzero values")
    lt, lv = np.log(t), np.log(v)
    slopes = np.diff(lv) / np.diff(lt)
    mid = 0.5 * (lt[:-1] + lt[1:])
    x = 1.0 / mid
    coef = np.polyfit(x, slopes, 1)
    return float(coef[1])
