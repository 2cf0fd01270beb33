"""Finite-box lattice infrastructure.

Boxes are sup-norm balls in Z^d.  The discrete Laplacian acts with Dirichlet
(zero) boundary: neighbours outside the box contribute value 0, so the
operator on a box with n sites is the n x n matrix of the infinite-lattice
Laplacian restricted to the box.  On top of that live Anderson Hamiltonians
Delta + V, their spectra, heat semigroups exp(t(Delta + V)) and the lattice
resolvent (Green's function).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, EscapeMassError, ValidationError

# Largest site count for which dense eigendecompositions are used.
DENSE_LIMIT = 4096

# exp() overflow guard threshold for the eigen path of the semigroup.
_LOG_SHIFT_THRESHOLD = 600.0


@dataclass(frozen=True)
class Box:
    """Sup-norm ball {z : |z - center|_inf <= radius} in Z^d."""

    center: tuple
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValidationError("box radius must be nonnegative")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @staticmethod
    def centered(radius, d):
        return Box((0,) * d, radius)

    @property
    def d(self):
        return len(self.center)

    @property
    def side(self):
        return 2 * self.radius + 1

    @property
    def shape(self):
        return (self.side,) * self.d

    @property
    def n_sites(self):
        return self.side ** self.d

    @property
    def corner(self):
        return tuple(c - self.radius for c in self.center)

    def shifted(self, z):
        return Box(tuple(c + int(dz) for c, dz in zip(self.center, z)), self.radius)

    def contains(self, site):
        return all(abs(int(s) - c) <= self.radius for s, c in zip(site, self.center))

    def contains_box(self, other):
        if other.d != self.d:
            return False
        return all(
            abs(oc - c) + other.radius <= self.radius
            for oc, c in zip(other.center, self.center)
        )

    def sites(self):
        """All sites in lexicographic (C) order, as an (n, d) int array."""
        axes = [np.arange(c - self.radius, c + self.radius + 1) for c in self.center]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def index_of(self, site):
        idx = 0
        for s, c in zip(site, self.center):
            off = int(s) - (c - self.radius)
            if off < 0 or off >= self.side:
                raise ValidationError(f"site {site} outside box")
            idx = idx * self.side + off
        return idx


@dataclass
class LatticeField:
    """Real values on a box; -inf entries mark hard traps.

    ``log_scale`` lets semigroup outputs carry a common exponential factor
    when the linear values would overflow: actual = values * exp(log_scale).
    """

    box: Box
    values: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.box.shape:
            raise ValidationError(
                f"field shape {self.values.shape} != box shape {self.box.shape}"
            )

    @staticmethod
    def constant(box, value):
        return LatticeField(box, np.full(box.shape, float(value)))

    @staticmethod
    def delta(box, site=None):
        v = np.zeros(box.shape)
        site = box.center if site is None else site
        v[tuple(int(s) - c for s, c in zip(site, box.corner))] = 1.0
        return LatticeField(box, v)

    @property
    def flat(self):
        return self.values.reshape(-1)

    def at(self, site):
        return self.values[tuple(int(s) - c for s, c in zip(site, self.box.corner))]

    def total(self):
        return float(np.sum(self.values))

    def log_total(self):
        tot = np.sum(self.values)
        if tot <= 0:
            return -np.inf
        return float(np.log(tot) + self.log_scale)

    def to_csv(self, path, offset=0.0):
        """Write rows x1,...,xd,value (offset added back at reporting time)."""
        sites = self.box.sites()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(f"x{i+1}" for i in range(self.box.d)) + ",value\n")
            for site, v in zip(sites, self.flat):
                coords = ",".join(str(int(c)) for c in site)
                fh.write(f"{coords},{v + offset:.17g}\n")


def laplacian_apply(f: LatticeField) -> LatticeField:
    """Discrete Laplacian sum_{y~z}[f(y)-f(z)] with zero outside the box."""
    v = f.values
    if not np.all(np.isfinite(v)):
        raise ValidationError("laplacian_apply requires a finite field")
    d = f.box.d
    out = -2.0 * d * v
    for ax in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        out[tuple(lo)] += v[tuple(hi)]
        out[tuple(hi)] += v[tuple(lo)]
    return LatticeField(f.box, out)


def operator_matrix(box: Box, V=None, mask=None) -> sp.csr_matrix:
    """Sparse matrix of Delta + diag(V) on the box with Dirichlet boundary.

    ``mask`` (flat boolean, True = active) removes rows/columns of trapped
    sites; the returned matrix then acts on the active sites only.
    """
    side, d = box.side, box.d
    one = sp.identity(1, format="csr")
    lap = None
    T = sp.diags([np.ones(side - 1), -2.0 * np.ones(side), np.ones(side - 1)],
                 offsets=[-1, 0, 1], format="csr")
    eye = sp.identity(side, format="csr")
    for ax in range(d):
        term = one
        for j in range(d):
            term = sp.kron(term, T if j == ax else eye, format="csr")
        lap = term if lap is None else lap + term
    A = lap
    if V is not None:
        vals = V.flat if isinstance(V, LatticeField) else np.asarray(V, float).reshape(-1)
        A = A + sp.diags(vals)
    if mask is not None:
        mask = np.asarray(mask, bool)
        A = A[mask][:, mask]
    return sp.csr_matrix(A)


@dataclass
class EigenDecomposition:
    """Spectrum of Delta + V on a box, eigenvalues in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, orthonormal
    box: Box

    def residual(self, A=None, V=None):
        if A is None:
            A = operator_matrix(self.box, V)
        R = A @ self.eigenvectors - self.eigenvectors * self.eigenvalues
        return float(np.max(np.linalg.norm(R, axis=0)))


def _fix_signs(vecs):
    # Deterministic sign convention: largest-magnitude entry positive.
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eig(V, box=None, k="all", tol=1e-10) -> EigenDecomposition:
    """Top-k (iterative) or full (dense) spectrum of Delta + V, Dirichlet."""
    if isinstance(V, LatticeField):
        box = V.box if box is None else box
        vals = V.flat
    else:
        if box is None:
            raise ValidationError("box required when V is a raw array")
        vals = np.asarray(V, float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("eig requires a finite potential; mask traps first")
    n = box.n_sites
    if k != "all" and k > n:
        raise ValidationError(f"k={k} exceeds box size {n}")
    A = operator_matrix(box, vals)
    if k == "all" or n <= DENSE_LIMIT:
        w, U = scipy.linalg.eigh(A.toarray())
        w, U = w[::-1].copy(), U[:, ::-1].copy()
        if k != "all":
            w, U = w[:k], U[:, :k]
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            w, U = spla.eigsh(A, k=k, which="LA", v0=v0, tol=tol)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"eigsh failed to converge: {exc}", residual=tol
            ) from exc
        order = np.argsort(w)[::-1]
        w, U = w[order], U[:, order]
    return EigenDecomposition(w, _fix_signs(U), box)


def semigroup_apply(V, box, t, init: LatticeField, method="eigen") -> LatticeField:
    """Apply exp(t(Delta + V)) to ``init`` under the Dirichlet boundary.

    Methods: "eigen" (full spectrum, dense boxes), "ode" (stiff adaptive
    integrator) and "krylov" (scaling/squaring action for larger boxes).
    When t*lambda_1 would overflow, the result carries a log_scale.
    """
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if isinstance(V, LatticeField):
        box = V.box if box is None else box
    vals = V.flat if isinstance(V, LatticeField) else np.asarray(V, float).reshape(-1)
    x0 = init.flat.copy()
    if t == 0:
        return LatticeField(box, x0.reshape(box.shape), init.log_scale)

    if method == "eigen":
        if box.n_sites > DENSE_LIMIT:
            raise ValidationError(
                f"dense eigen path limited to {DENSE_LIMIT} sites; use method='krylov'"
            )
        dec = eig(LatticeField(box, vals.reshape(box.shape)))
        lam1 = dec.eigenvalues[0]
        coef = dec.eigenvectors.T @ x0
        shift = t * lam1 if t * lam1 > _LOG_SHIFT_THRESHOLD else 0.0
        out = dec.eigenvectors @ (np.exp(t * dec.eigenvalues - shift) * coef)
        return LatticeField(box, out.reshape(box.shape), init.log_scale + shift)
    if method == "ode":
        A = operator_matrix(box, vals)
        sol = solve_ivp(
            lambda _s, y: A @ y,
            (0.0, t),
            x0,
            method="Radau",
            jac=lambda _s, _y: A,
            rtol=1e-12,
            atol=1e-14,
            dense_output=False,
            t_eval=[t],
        )
        if not sol.success:
            raise ConvergenceError(f"semigroup ODE integration failed: {sol.message}")
        return LatticeField(box, sol.y[:, -1].reshape(box.shape), init.log_scale)
    if method == "krylov":
        shift_c = float(np.max(vals))
        A = operator_matrix(box, vals - shift_c)
        out = spla.expm_multiply(A * t, x0)
        return LatticeField(box, out.reshape(box.shape), init.log_scale + shift_c * t)
    raise ValidationError(f"unknown semigroup method {method!r}")


def green_function(lam, box: Box, truncation: Box) -> np.ndarray:
    """Resolvent kernel G_lam(x, y) = int_0^inf e^{-lam s} p_s(x, y) ds.

    Solves (lam - Delta) g = delta_y on the truncation box and restricts to
    ``box``.  The truncation must contain the box with margin >= 1 and is
    rejected when the resolvent leaks more than 1e-6 of its mass through the
    truncation boundary.
    """
    if lam <= 0:
        raise ValidationError("lam must be positive")
    if not truncation.contains_box(box) or truncation.radius < box.radius + 1:
        raise ValidationError("truncation must contain box with margin >= 1")
    n = truncation.n_sites
    M = (lam * sp.identity(n, format="csc")) - operator_matrix(truncation).tocsc()
    solve = spla.factorized(M)
    sites = box.sites()
    cols = np.empty((n, len(sites)))
    for j, site in enumerate(sites):
        rhs = np.zeros(n)
        rhs[truncation.index_of(site)] = 1.0
        g = solve(rhs)
        escape = 1.0 - lam * float(np.sum(g))
        if escape > 1e-6:
            raise EscapeMassError(
                f"resolvent boundary mass {escape:.3e} exceeds 1e-6; "
                "increase the truncation margin",
                escape_mass=escape,
            )
        cols[:, j] = g
    rows = [truncation.index_of(site) for site in sites]
    return cols[rows, :]


def free_return_probability(t_grid, d, truncation_radius):
    """p_t(0,0) for the free walk, via the Dirichlet semigroup on a box.

    Returns (values, escape_mass_at_tmax).  The caller decides whether the
    escape mass is acceptable.
    """
    box = Box.centered(truncation_radius, d)
    dec = eig(LatticeField.constant(box, 0.0))
    e0 = dec.eigenvectors[box.index_of((0,) * d), :]
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    vals = np.array([float(np.sum(np.exp(tt * dec.eigenvalues) * e0 * e0)) for tt in t_grid])
    col = dec.eigenvectors.T @ np.ones(box.n_sites)
    mass = float(np.sum(np.exp(t_grid[-1] * dec.eigenvalues) * e0 * col))
    return vals, 1.0 - mass
