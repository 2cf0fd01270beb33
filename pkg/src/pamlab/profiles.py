"""Discretised functions on uniform grids (continuum profiles g, psi, L_t).

Three grid kinds cover everything the package needs:

* ``line``: a uniform 1-d grid on [-L, L] with Dirichlet endpoints dropped,
  used for the d = 1 continuum problems.
* ``radial``: a uniform grid on [0, L] in the radial variable with a
  dimension tag d >= 2, used for radially reduced continuum problems.
* ``grid``: a dense uniform cartesian grid in d dimensions (full 2-d
  spot checks, rescaled local-time step functions).

Integrals use trapezoid weights on ``line``/``grid`` (spectrally accurate for
smooth decaying integrands) and Simpson weights against the surface Jacobian
on ``radial``.  ``cell_integral`` integrates with plain cell volumes, which is
what step-function profiles require.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


@dataclass
class Profile:
    kind: str            # "line" | "radial" | "grid"
    d: int
    h: float
    values: np.ndarray
    origin: tuple = ()   # grid: physical coordinate of values[0, ..., 0]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind == "line":
            if self.d != 1 or self.values.ndim != 1:
                raise ValidationError("line profiles are 1-d")
        elif self.kind == "radial":
            if self.values.ndim != 1 or self.d < 1:
                raise ValidationError("radial profiles hold a 1-d radial array")
        elif self.kind == "grid":
            if self.values.ndim != self.d:
                raise ValidationError("grid profile values must be d-dimensional")
            if len(self.origin) != self.d:
                raise ValidationError("grid profiles need an origin coordinate")
        else:
            raise ValidationError(f"unknown profile kind {self.kind!r}")

    # -- geometry ----------------------------------------------------------
    def nodes(self):
        if self.kind == "line":
            n = len(self.values)
            L = 0.5 * (n + 1) * self.h
            return -L + self.h * np.arange(1, n + 1)
        if self.kind == "radial":
            return self.h * np.arange(len(self.values))
        axes = [
            self.origin[ax] + self.h * np.arange(self.values.shape[ax])
            for ax in range(self.d)
        ]
        return axes

    def node_volumes(self):
        """Cell volume attached to each node (partition of the domain)."""
        if self.kind == "line":
            return np.full(len(self.values), self.h)
        if self.kind == "radial":
            r = self.nodes()
            lo = np.maximum(r - 0.5 * self.h, 0.0)
            hi = r + 0.5 * self.h
            return ball_volume(self.d) * (hi**self.d - lo**self.d)
        return np.full(self.values.shape, self.h**self.d)

    def quad_weights(self):
        """Weights for smooth integrands (trapezoid / Simpson x Jacobian)."""
        if self.kind == "line":
            return np.full(len(self.values), self.h)
        if self.kind == "radial":
            n = len(self.values)
            w = _simpson_weights(n, self.h)
            r = self.nodes()
            return w * sphere_area(self.d) * r ** (self.d - 1)
        w = np.full(self.values.shape, self.h**self.d)
        return w

    # -- integration -------------------------------------------------------
    def integrate(self, values=None):
        v = self.values if values is None else np.asarray(values, float)
        return float(np.sum(self.quad_weights() * v))

    def cell_integral(self, values=None):
        v = self.values if values is None else np.asarray(values, float)
        return float(np.sum(self.node_volumes() * v))

    def l2_norm_sq(self, values=None):
        v = self.values if values is None else np.asarray(values, float)
        return float(np.sum(self.quad_weights() * v * v))

    def lq_norm(self, q, cell=True):
        w = self.node_volumes() if cell else self.quad_weights()
        return float(np.sum(w * np.abs(self.values) ** q)) ** (1.0 / q)

    def normalized_l2(self):
        nrm = math.sqrt(self.l2_norm_sq())
        if nrm == 0:
            raise ValidationError("cannot normalise the zero profile")
        return Profile(self.kind, self.d, self.h, self.values / nrm, self.origin)

    def with_values(self, values):
        return Profile(self.kind, self.d, self.h, values, self.origin)

    def barycenter(self, weights=None):
        """First moment of values^2 (line profiles)."""
        if self.kind != "line":
            raise ValidationError("barycenter implemented for line profiles")
        x = self.nodes()
        w = self.values**2 if weights is None else weights
        tot = np.sum(w)
        if tot <= 0:
            return 0.0
        return float(np.sum(x * w) / tot)

    def recentered(self, shift=None):
        """Translate a line profile so its barycenter sits at 0."""
        if self.kind != "line":
            raise ValidationError("recentered implemented for line profiles")
        if shift is None:
            shift = self.barycenter()
        x = self.nodes()
        vals = np.interp(x + shift, x, self.values, left=0.0, right=0.0)
        return self.with_values(vals)


def _simpson_weights(n, h):
    if n < 3:
        return np.full(n, h)  # degenerate, fall back to rectangle
    if n % 2 == 0:
        # composite Simpson on the first n-1 nodes, trapezoid on the last cell
        w = _simpson_weights(n - 1, h)
        w = np.append(w, 0.0)
        w[-2] += 0.5 * h
        w[-1] += 0.5 * h
        return w
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-2:2] = 2.0
    return w * (h / 3.0)


# -- builders ---------------------------------------------------------------

def line_profile(L, h, values=None) -> Profile:
    """Interior nodes of [-L, L] with spacing h (Dirichlet endpoints)."""
    n = int(round(2.0 * L / h)) - 1
    if n < 3:
        raise ValidationError("line grid too coarse")
    vals = np.zeros(n) if values is None else values
    return Profile("line", 1, h, vals)


def radial_profile(L, h, d, values=None) -> Profile:
    """Radial nodes 0, h, ..., with the Dirichlet node at L dropped."""
    n = int(round(L / h))
    if n < 4:
        raise ValidationError("radial grid too coarse")
    vals = np.zeros(n) if values is None else values
    return Profile("radial", d, h, vals)


def grid_profile(L, h, d, values=None) -> Profile:
    n = 2 * int(round(L / h)) - 1
    origin = tuple(-0.5 * (n - 1) * h for _ in range(d))
    vals = np.zeros((n,) * d) if values is None else values
    return Profile("grid", d, h, vals, origin)


def _radius_sq(profile: Profile):
    if profile.kind == "line":
        x = profile.nodes()
        return x * x
    if profile.kind == "radial":
        r = profile.nodes()
        return r * r
    axes = profile.nodes()
    grids = np.meshgrid(*axes, indexing="ij")
    return sum(g * g for g in grids)


def gaussian_profile(rho, template: Profile) -> Profile:
    """g_rho(x) = (rho/pi)^{d/4} exp(-rho |x|^2 / 2) sampled on the template."""
    rsq = _radius_sq(template)
    vals = (rho / math.pi) ** (template.d / 4.0) * np.exp(-0.5 * rho * rsq)
    return template.with_values(vals)


def parabola_profile(rho, template: Profile) -> Profile:
    """psi_rho(x) = rho + rho (d/2) log(rho/pi) - rho^2 |x|^2 on the template."""
    rsq = _radius_sq(template)
    vals = rho + rho * (template.d / 2.0) * math.log(rho / math.pi) - rho**2 * rsq
    return template.with_values(vals)


def default_grid(rho, d, refine=1.0):
    """Grid resolving g_rho: L >= 5/sqrt(rho), h <= 0.05/sqrt(rho)."""
    scale = 1.0 / math.sqrt(rho)
    L = 6.0 * scale
    h = 0.05 * scale / refine
    if d == 1:
        return line_profile(L, h)
    return radial_profile(L, h, d)


def random_smooth_profile(template: Profile, rng, n_modes=6) -> Profile:
    """Random smooth unit-L2 profile: a few Gaussian bumps, normalised."""
    rsq_nodes = template.nodes() if template.kind != "grid" else None
    if template.kind == "line":
        x = rsq_nodes
        L = abs(x[0])
        vals = np.zeros_like(x)
        for _ in range(n_modes):
            c = rng.uniform(-0.5 * L, 0.5 * L)
            w = rng.uniform(0.3, 1.5)
            a = rng.uniform(-1.0, 1.0)
            vals += a * np.exp(-((x - c) ** 2) / (2 * w**2))
    elif template.kind == "radial":
        r = rsq_nodes
        L = r[-1]
        vals = np.zeros_like(r)
        for _ in range(n_modes):
            c = rng.uniform(0.0, 0.5 * L)
            w = rng.uniform(0.3, 1.5)
            a = rng.uniform(-1.0, 1.0)
            vals += a * np.exp(-((r - c) ** 2) / (2 * w**2))
    else:
        raise ValidationError("random profiles support line/radial grids")
    out = template.with_values(vals)
    if math.sqrt(out.l2_norm_sq()) < 1e-12:
        return random_smooth_profile(template, rng, n_modes)
    return out.normalized_l2()
