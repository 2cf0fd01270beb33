"""Variational constants of the model and their minimisers.

The continuum constant

    chi(rho) = inf { ||grad g||_2^2 - rho * int g^2 log g^2 : ||g||_2 = 1 }

has the closed form rho*d*(1 - log(rho/pi)/2), attained by the Gaussian
density g_rho; the dual problem inf {L(psi) - lambda(psi)} is attained by the
parabola psi_rho with L(psi) = (rho/e) int exp(psi/rho).  The almost-sure
constant is chi_tilde(rho) = chi(rho) + rho log(rho/e), attained by
psi_rho - rho log rho (the vertical shift that makes L = 1).  The discrete
variant chi^d(delta) lives on probability vectors over Z^d, and the
bounded-class functional

    chi(rho, gamma) = inf { ||grad g||^2 + rho int (g^{2 gamma} - g^2)/(1 - gamma) }

converges to chi(rho) as gamma -> 1 (from above: pointwise the gamma
functional dominates the entropy one since e^x - 1 >= x).

All continuum minimisations run a normalised gradient flow: project the
gradient onto the tangent space of the weighted L^2 sphere, take a fixed step
with backtracking, renormalise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .errors import ConvergenceError, ValidationError
from .lattice import Box, LatticeField, eig, operator_matrix
from .profiles import (
    Profile,
    default_grid,
    gaussian_profile,
    grid_profile,
    line_profile,
    parabola_profile,
    radial_profile,
)

log = logging.getLogger(__name__)

_TINY = 1e-300


@dataclass
class VariationalSolution:
    value: float
    minimizer: Profile | None
    iterations: int
    gradient_norm: float
    grid_meta: dict
    converged: bool = True


# ---------------------------------------------------------------------------
# closed forms


def chi_closed_form(rho, d) -> float:
    """chi(rho) = rho d (1 - log(rho/pi)/2)."""
    if rho <= 0:
        raise ValidationError("rho must be positive")
    return rho * d * (1.0 - 0.5 * math.log(rho / math.pi))


def chi_tilde_closed_form(rho, d) -> float:
    """chi_tilde(rho) = chi(rho) + rho log(rho/e)."""
    return chi_closed_form(rho, d) + rho * (math.log(rho) - 1.0)


def lambda_psi_closed_form(rho, d) -> float:
    """lambda(psi_rho) = rho - rho d + rho (d/2) log(rho/pi)."""
    return rho - rho * d + rho * (d / 2.0) * math.log(rho / math.pi)


def chi_gamma_at_gaussian(rho, gamma, d) -> float:
    """Value of the gamma functional at g_rho (explicit Gaussian integrals)."""
    if not 0.0 <= gamma < 1.0:
        raise ValidationError("gamma must lie in [0, 1)")
    if gamma == 0.0:
        raise ValidationError("gamma = 0 has unbounded support measure at g_rho")
    moment = gamma ** (-d / 2.0) * (rho / math.pi) ** ((gamma - 1.0) * d / 2.0)
    return rho * d / 2.0 + rho * (moment - 1.0) / (1.0 - gamma)


# ---------------------------------------------------------------------------
# discrete energy/entropy building blocks


def _stiffness(profile: Profile) -> sp.csr_matrix:
    """Dirichlet-form matrix K with <v, K v> = discretised ||grad v||^2."""
    if profile.kind == "line":
        n = len(profile.values)
        main = 2.0 * np.ones(n)
        off = -np.ones(n - 1)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr") / profile.h
    if profile.kind == "radial":
        n = len(profile.values)
        h, d = profile.h, profile.d
        r_half = h * (np.arange(n) + 0.5)
        from .profiles import sphere_area

        c = sphere_area(d) * r_half ** (d - 1) / h  # edge (j, j+1), j = n-1 edge to 0
        main = np.zeros(n)
        main[: n - 1] += c[: n - 1]
        main[1:] += c[: n - 1]
        main[n - 1] += c[n - 1]  # Dirichlet edge to the dropped node at L
        off = -c[: n - 1]
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")
    if profile.kind == "grid":
        shape = profile.values.shape
        n = int(np.prod(shape))
        side = shape[0]
        box = Box.centered((side - 1) // 2, profile.d)
        K = -operator_matrix(box) * profile.h ** (profile.d - 2)
        return sp.csr_matrix(K)
    raise ValidationError(f"no stiffness for kind {profile.kind!r}")


def dirichlet_energy(g: Profile) -> float:
    v = g.values.reshape(-1)
    K = _stiffness(g)
    return float(v @ (K @ v))


def entropy_functional(gsq: Profile, rho) -> float:
    """H(g^2) = rho int g^2 log g^2 with the 0 log 0 = 0 convention."""
    s = gsq.values
    if np.any(s < 0):
        raise ValidationError("g^2 must be nonnegative")
    vals = np.where(s > 0, s * np.log(np.maximum(s, _TINY)), 0.0)
    return rho * gsq.integrate(vals)


def legendre_L(psi: Profile, rho) -> float:
    """L(psi) = (rho/e) int exp(psi/rho), accumulated in log space."""
    w = psi.quad_weights()
    pos = w > 0
    log_int = logsumexp(psi.values.reshape(-1)[pos.reshape(-1)] / rho
                        + np.log(w.reshape(-1)[pos.reshape(-1)]))
    return rho * math.exp(log_int - 1.0)


def spectral_lambda(psi: Profile) -> float:
    """Principal eigenvalue of Delta + psi (continuum, Dirichlet zero boundary).

    Finite differences on the profile grid, delegated to the lattice
    eigensolver: (Delta_lattice + h^2 psi)/h^2.
    """
    if psi.kind == "line":
        n = len(psi.values)
        box = Box.centered((n - 1) // 2, 1)
        vals = psi.values if n % 2 == 1 else psi.values[:-1]
        if n % 2 == 0:
            box = Box.centered((n - 2) // 2, 1)
        V = LatticeField(box, vals * psi.h**2)
        dec = eig(V, k=1 if box.n_sites > 512 else "all")
        return float(dec.eigenvalues[0] / psi.h**2)
    if psi.kind == "grid":
        side = psi.values.shape[0]
        box = Box.centered((side - 1) // 2, psi.d)
        V = LatticeField(box, psi.values * psi.h**2)
        dec = eig(V, k=1)
        return float(dec.eigenvalues[0] / psi.h**2)
    raise ValidationError("spectral_lambda supports line and grid profiles")


# ---------------------------------------------------------------------------
# normalised gradient flow on the weighted L2 sphere


def _sphere_flow(K, w, p_fun, p_grad, x0, tol=1e-8, max_iter=100_000,
                 recenter=None, step0=None):
    """Minimise x^T K x + sum_i w_i p(x_i^2) subject to sum_i w_i x_i^2 = 1.

    p_fun(s) -> penalty values, p_grad(s) -> dp/ds.  Gradient wrt x is
    2 K x + 2 w p'(x^2) x; it is projected w-orthogonally to x, a fixed step
    with backtracking is taken, and x is renormalised.  Returns
    (x, value, iterations, grad_norm, converged).
    """
    w = np.asarray(w, float).reshape(-1)
    x = np.asarray(x0, float).reshape(-1).copy()
    x /= math.sqrt(float(np.sum(w * x * x)))

    def objective(v):
        return float(v @ (K @ v)) + float(np.sum(w * p_fun(v * v)))

    lam_max = float(np.max(np.abs(K.diagonal()))) * 2.0 + 1.0
    step = step0 if step0 is not None else 1.0 / lam_max
    F = objective(x)
    it = 0
    gnorm = np.inf
    for it in range(1, int(max_iter) + 1):
        grad = 2.0 * (K @ x) + 2.0 * w * p_grad(x * x) * x
        # Riesz representative in the weighted metric, projected to the sphere tangent
        gfun = grad / w
        gfun -= float(np.sum(w * gfun * x)) * x
        gnorm = math.sqrt(float(np.sum(w * gfun * gfun)))
        if gnorm < tol:
            return x, F, it, gnorm, True
        improved = False
        for _ in range(40):
            cand = x - step * gfun
            cand = np.maximum(cand, 0.0)
            nrm = math.sqrt(float(np.sum(w * cand * cand)))
            if nrm < 1e-14:
                step *= 0.5
                continue
            cand /= nrm
            Fc = objective(cand)
            if Fc <= F - 1e-14 * abs(F) or Fc < F:
                x, F = cand, Fc
                improved = True
                step *= 1.2
                break
            step *= 0.5
        if not improved:
            # Flat to machine precision: treat as converged at this gradient.
            return x, F, it, gnorm, True
        if recenter is not None and it % 100 == 0:
            x = recenter(x)
            nrm = math.sqrt(float(np.sum(w * x * x)))
            x /= nrm
            F = objective(x)
    return x, F, it, gnorm, False


def _entropy_pair(coef):
    """p(s) = -coef * s log s and its derivative, floored inside the log."""

    def p_fun(s):
        return -coef * np.where(s > 0, s * np.log(np.maximum(s, _TINY)), 0.0)

    def p_grad(s):
        return -coef * (np.log(np.maximum(s, _TINY)) + 1.0)

    return p_fun, p_grad


def _gamma_pair(rho, gamma):
    """p(s) = rho (s^gamma - s)/(1 - gamma) and derivative, for gamma in (0,1)."""
    c = rho / (1.0 - gamma)

    def p_fun(s):
        return c * (np.power(np.maximum(s, 0.0), gamma) - s)

    def p_grad(s):
        s = np.maximum(s, _TINY)
        return c * (gamma * np.power(s, gamma - 1.0) - 1.0)

    return p_fun, p_grad


def _initial_bump(profile: Profile, rho):
    """Smooth positive start away from the minimiser (wider than g_rho)."""
    rsq = (
        profile.nodes() ** 2
        if profile.kind in ("line", "radial")
        else sum(g * g for g in np.meshgrid(*profile.nodes(), indexing="ij"))
    )
    vals = np.exp(-0.25 * rho * rsq) + 0.05
    return vals.reshape(-1)


def chi_numeric(rho, d, grid=None, tol=1e-8, max_iter=100_000, x0=None) -> VariationalSolution:
    """Minimise ||grad g||^2 - rho int g^2 log g^2 over the unit L2 sphere.

    d = 1 runs on a line grid; d >= 2 is radially reduced unless a full
    ``grid`` profile is supplied.
    """
    profile = default_grid(rho, d) if grid is None else grid
    K = _stiffness(profile)
    # cell volumes, not Simpson weights: the flow divides by the mass weights
    w = profile.node_volumes().reshape(-1)
    p_fun, p_grad = _entropy_pair(rho)
    recenter = None
    if profile.kind == "line":
        template = profile

        def recenter(xvec):
            prof = template.with_values(xvec)
            return prof.recentered().values

    x0 = _initial_bump(profile, rho) if x0 is None else np.asarray(x0, float).reshape(-1)
    x, F, it, gnorm, ok = _sphere_flow(
        K, w, p_fun, p_grad, x0, tol=tol, max_iter=max_iter, recenter=recenter
    )
    if not ok:
        raise ConvergenceError(
            f"chi_numeric did not converge in {it} iterations",
            iterations=it, residual=gnorm,
        )
    minimizer = profile.with_values(x.reshape(profile.values.shape))
    meta = {"kind": profile.kind, "h": profile.h, "n": x.size, "rho": rho, "d": d}
    return VariationalSolution(F, minimizer, it, gnorm, meta)


def chi_discrete(delta, d, radius=None, tol=1e-8, max_iter=200_000) -> VariationalSolution:
    """Discrete constant chi^d(delta) on probability vectors over Z^d.

    Minimises (1/2) sum_{x~y} (sqrt(mu_x) - sqrt(mu_y))^2 - delta sum mu log mu
    in the sqrt(mu) parameterisation (a unit sphere), on a centred box with
    Dirichlet edges to the outside.
    """
    if delta < 0:
        raise ValidationError("delta must be nonnegative")
    if radius is None:
        radius = max(6, int(math.ceil(4.0 / math.sqrt(delta))) if delta > 0 else 24)
    box = Box.centered(radius, d)
    K = sp.csr_matrix(-operator_matrix(box))
    n = box.n_sites
    w = np.ones(n)
    p_fun, p_grad = _entropy_pair(delta)
    sites = box.sites()
    rsq = np.sum((sites - np.array(box.center)) ** 2, axis=1)
    x0 = np.exp(-0.5 * rsq * max(delta, 0.05))
    x, F, it, gnorm, ok = _sphere_flow(K, w, p_fun, p_grad, x0, tol=tol, max_iter=max_iter)
    if not ok:
        raise ConvergenceError(
            f"chi_discrete did not converge (last gradient norm {gnorm:.3e})",
            iterations=it, residual=gnorm,
        )
    prof = Profile("grid", d, 1.0, (x * x).reshape(box.shape),
                   origin=tuple(float(c - radius) for c in box.center))
    meta = {"radius": radius, "d": d, "delta": delta}
    return VariationalSolution(F, prof, it, gnorm, meta)


def _chi_gamma_zero(rho, d):
    """gamma = 0: ||grad g||^2 + rho(|supp g| - 1), optimal over balls.

    The minimiser is the Dirichlet ground state of a ball; optimise the
    radius against the principal eigenvalue lambda_1(B_R) = j^2 / R^2.
    """
    j = {1: math.pi / 2.0, 2: 2.404825557695773, 3: math.pi}.get(d)
    if j is None:
        raise ValidationError("gamma = 0 closed form implemented for d <= 3")
    from .profiles import ball_volume

    def F(R):
        return (j / R) ** 2 + rho * (ball_volume(d) * R**d - 1.0)

    res = minimize_scalar(F, bounds=(1e-3, 1e3), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.fun), float(res.x)


def chi_gamma(rho, gamma, d, grid=None, tol=1e-8, max_iter=100_000) -> VariationalSolution:
    """Bounded-class functional chi(rho, gamma) for gamma in [0, 1)."""
    if not 0.0 <= gamma < 1.0:
        raise ValidationError("gamma must lie in [0, 1)")
    if gamma == 0.0:
        value, radius = _chi_gamma_zero(rho, d)
        meta = {"gamma": 0.0, "rho": rho, "d": d, "support_radius": radius}
        return VariationalSolution(value, None, 0, 0.0, meta)
    profile = default_grid(rho, d) if grid is None else grid
    K = _stiffness(profile)
    w = profile.node_volumes().reshape(-1)
    p_fun, p_grad = _gamma_pair(rho, gamma)
    x0 = gaussian_profile(rho, profile).values.reshape(-1)
    x, F, it, gnorm, ok = _sphere_flow(K, w, p_fun, p_grad, x0, tol=tol, max_iter=max_iter)
    if not ok:
        raise ConvergenceError(
            f"chi_gamma did not converge (last gradient norm {gnorm:.3e})",
            iterations=it, residual=gnorm,
        )
    minimizer = profile.with_values(x.reshape(profile.values.shape))
    meta = {"kind": profile.kind, "h": profile.h, "gamma": gamma, "rho": rho, "d": d}
    return VariationalSolution(F, minimizer, it, gnorm, meta)


def chi_gamma_functional(g: Profile, rho, gamma) -> float:
    """Evaluate ||grad g||^2 + rho int (g^{2 gamma} - g^2)/(1 - gamma) at g."""
    energy = dirichlet_energy(g)
    s = g.values**2
    p_fun, _ = _gamma_pair(rho, gamma)
    return energy + g.integrate(p_fun(s))


# ---------------------------------------------------------------------------
# duality, certificates, log-Sobolev


def chi_tilde(rho, d, grid=None):
    """Closed form chi_tilde plus a numeric certificate on psi_rho - rho log rho.

    The certificate checks L(psi_tilde) = 1 (feasibility) and
    -lambda(psi_tilde) = chi_tilde (value match).
    """
    value = chi_tilde_closed_form(rho, d)
    if grid is None:
        # the eigenvalue certificate needs a cartesian grid
        scale = 1.0 / math.sqrt(rho)
        if d == 1:
            grid = line_profile(6.0 * scale, 0.02 * scale)
        elif d == 2:
            grid = grid_profile(5.0 * scale, 0.05 * scale, d)
        else:
            grid = None
    certificate = {}
    if grid is not None and grid.kind in ("line", "grid"):
        psi_t = parabola_profile(rho, grid)
        psi_t = psi_t.with_values(psi_t.values - rho * math.log(rho))
        certificate = {
            "L": legendre_L(psi_t, rho),
            "neg_lambda": -spectral_lambda(psi_t),
            "closed_form": value,
        }
    return value, certificate


def log_sobolev_gap(g: Profile, rho) -> float:
    """||grad g||^2 - rho int g^2 log g^2 - chi(rho); >= 0 in the continuum.

    Tiny negatives from discretisation (above -1e-6) are clamped to zero and
    logged; anything more negative is returned raw.
    """
    nrm2 = g.l2_norm_sq()
    if abs(nrm2 - 1.0) > 1e-8:
        raise ValidationError("g must have unit L2 norm")
    gsq = g.with_values(g.values**2)
    gap = dirichlet_energy(g) - entropy_functional(gsq, rho) - chi_closed_form(rho, g.d)
    if -1e-6 < gap < 0.0:
        log.debug("clamping tiny negative log-Sobolev gap %.3e", gap)
        return 0.0
    return gap


def dual_gap(psi: Profile, rho, include_heuristic=False):
    """L(psi) - lambda(psi) - chi(rho); zero exactly at psi_rho.

    With ``include_heuristic`` (rho = 1 only) also returns the unnormalised
    form int exp(psi - 1) - lambda(psi).
    """
    L = legendre_L(psi, rho)
    lam = spectral_lambda(psi)
    gap = L - lam - chi_closed_form(rho, psi.d)
    if not include_heuristic:
        return gap
    raw = psi.integrate(np.exp(psi.values - 1.0)) - lam
    return gap, raw


def duality_chain_gap(sol: VariationalSolution, rho) -> float:
    """|L(psi*) - lambda(psi*) - chi_numeric| for psi* = rho + rho log g*^2."""
    g = sol.minimizer
    s = np.maximum(g.values**2, _TINY)
    psi = g.with_values(rho + rho * np.log(s))
    return abs(legendre_L(psi, rho) - spectral_lambda(psi) - sol.value)
