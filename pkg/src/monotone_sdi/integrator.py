"""Semi-implicit resolvent Euler-Maruyama scheme for monotone inclusions.

Each step takes an explicit drift/noise pre-point and applies the resolvent
of the operator, which keeps the state exactly feasible and unconditionally
stable with respect to the multivalued part.  The discrete solution is
extracted as a triplet (X, Y, M): Y collects the reaction of the operator
tangentially to the domain's affine hull (plus the off-hull drift part, so
that Y minus the accumulated drift stays inside the hull directions), and M
absorbs the noise components orthogonal to the hull.  The auxiliary process
W drives the concentration diagnostics.

Simulations are batched across paths; per-path Brownian increments come
from counter-based Philox streams keyed by (master_seed, path_index), which
makes ensembles bitwise reproducible for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    InitialConditionOutsideDomain,
    InvalidProbe,
    NonFiniteState,
    NoPotential,
)
from .schedules import TikhonovSchedule, zero_noise
from .subspace import SubspaceInfo, domain_subspace

#: snapping tolerance for configured initial conditions
X0_TOL = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform time grid 0 = t_0 < ... < t_N = t_final with step h."""

    t_final: float
    h: float
    thin: int = 1

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.t_final < 10 * self.h:
            raise ValueError("t_final must be at least 10 h")
        if self.thin < 1:
            raise ValueError("thin must be a positive integer")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.h))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.h

    def retained_indices(self):
        idx = np.arange(0, self.n_steps + 1, self.thin)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of scheduling order."""
    key = np.array([master_seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(master_seed, path_indices, n_steps, wiener_dim, h):
    """Stacked N(0, h I) increments, one Philox stream per path index."""
    out = np.empty((len(path_indices), n_steps, wiener_dim))
    root_h = np.sqrt(h)
    for row, idx in enumerate(path_indices):
        gen = path_rng(master_seed, idx)
        out[row] = gen.standard_normal((n_steps, wiener_dim)) * root_h
    return out


@dataclass
class BatchPaths:
    """Discretized solution triplets for a batch of paths.

    X, Y, M, W have shape (n, N+1, d); noise_inc holds the realized
    sigma(t_k, X_k) dB_k terms, drift the running Tikhonov drift integral.
    """

    grid: Grid
    X: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    W: np.ndarray
    noise_inc: np.ndarray
    drift: np.ndarray
    dB: Optional[np.ndarray] = None

    @property
    def n_paths(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[2]

    def path(self, i):
        return Path(grid=self.grid, X=self.X[i], Y=self.Y[i], M=self.M[i],
                    W=self.W[i], noise_inc=self.noise_inc[i],
                    drift=self.drift[i],
                    dB=None if self.dB is None else self.dB[i])


@dataclass
class Path:
    """Single-path view with the same fields as BatchPaths."""

    grid: Grid
    X: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    W: np.ndarray
    noise_inc: np.ndarray
    drift: np.ndarray
    dB: Optional[np.ndarray] = None

    @property
    def times(self):
        return self.grid.times

    @property
    def dim(self):
        return self.X.shape[1]


def step(op, info: SubspaceInfo, x_k, t_k, h, noise_vec, tik: TikhonovSchedule):
    """One resolvent Euler-Maruyama step from x_k.

    noise_vec is the realized sigma(t_k, x_k) dB term.  Returns
    (x_next, dY, dM); the triple satisfies
    x_next = x_k - dY + dM + h F + noise_vec exactly, with
    F = -epsilon(t_k) x_k, dM orthogonal to the domain hull, and
    dY - h F inside the hull directions.
    """
    x_k = np.asarray(x_k, dtype=float)
    noise_vec = np.asarray(noise_vec, dtype=float)
    Pi = info.projector
    eps = float(tik.epsilon(t_k))
    F = -eps * x_k
    p = x_k + h * F + noise_vec
    x_next = op.resolvent(h, p)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("state became non-finite (step too large?)")
    off = np.eye(info.dim) - Pi
    dM = -(noise_vec @ off)
    dY = (p - x_next) @ Pi + h * (F @ off)
    return x_next, dY, dM


def simulate_batch(op, info, noise, tik, x0, grid,
                   dB=None, injected_noise=None):
    """Simulate a batch of paths sharing op/noise/schedule.

    x0: (d,) or (n, d).  dB: (n, N, l) Brownian increments; alternatively
    injected_noise supplies the realized (n, N, d) noise terms directly
    (used by reduction-equivalence tests).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if injected_noise is not None:
        n = injected_noise.shape[0]
    elif dB is not None:
        n = dB.shape[0]
    else:
        n = x0.shape[0]
    if x0.shape[0] == 1 and n > 1:
        x0 = np.repeat(x0, n, axis=0)
    d = info.dim
    N = grid.n_steps
    h = grid.h
    times = grid.times
    member = np.asarray(op.domain_membership(x0, tol=X0_TOL)).reshape(-1)
    if not member.all():
        raise InitialConditionOutsideDomain(
            "x0 violates cl dom A beyond tolerance")
    x0 = np.atleast_2d(op.domain_project(x0))

    Pi = info.projector
    off = np.eye(d) - Pi
    eps = np.asarray(tik.epsilon(times[:-1]), dtype=float)

    X = np.empty((n, N + 1, d))
    Y = np.zeros((n, N + 1, d))
    M = np.zeros((n, N + 1, d))
    W = np.empty((n, N + 1, d))
    noise_inc = np.zeros((n, N, d))
    drift = np.zeros((n, N + 1, d))
    X[:, 0] = x0
    W[:, 0] = x0

    x = x0
    for k in range(N):
        if injected_noise is not None:
            nk = injected_noise[:, k]
        elif dB is not None and not noise.is_zero:
            nk = noise.apply(times[k], x, dB[:, k])
        else:
            nk = np.zeros((n, d))
        F = -eps[k] * x
        p = x + h * F + nk
        x_next = np.atleast_2d(op.resolvent(h, p))
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteState("state became non-finite during simulation")
        noise_inc[:, k] = nk
        drift[:, k + 1] = drift[:, k] + h * F
        Y[:, k + 1] = Y[:, k] + (p - x_next) @ Pi + h * (F @ off)
        M[:, k + 1] = M[:, k] - nk @ off
        W[:, k + 1] = W[:, k] - nk @ Pi
        X[:, k + 1] = x_next
        x = x_next
    return BatchPaths(grid=grid, X=X, Y=Y, M=M, W=W, noise_inc=noise_inc,
                      drift=drift, dB=dB)


def simulate_path(op, noise, tik, x0, grid, seed, path_index=0,
                  info=None) -> Path:
    """Simulate a single path from the (seed, path_index) stream."""
    info = info or domain_subspace(op)
    if noise.is_zero:
        dB = np.zeros((1, grid.n_steps, noise.wiener_dim))
    else:
        dB = brownian_increments(seed, [path_index], grid.n_steps,
                                 noise.wiener_dim, grid.h)
    batch = simulate_batch(op, info, noise, tik, np.asarray(x0, dtype=float),
                           grid, dB=dB)
    return batch.path(0)


def simulate_deterministic_flow(op, tik, x0, grid, info=None):
    """Comparison flow x' in -A(x) - eps(t) x on the same grid; (N+1, d)."""
    info = info or domain_subspace(op)
    batch = simulate_batch(op, info, zero_noise(op.dim), tik,
                           np.asarray(x0, dtype=float), grid,
                           dB=np.zeros((1, grid.n_steps, 1)))
    return batch.X[0]


def decomposition_residual(path: Path) -> float:
    """Max deviation from X = X0 - Y + M + drift + accumulated noise."""
    stoch = np.vstack([np.zeros((1, path.dim)),
                       np.cumsum(path.noise_inc, axis=0)])
    recon = path.X[0] - path.Y + path.M + path.drift + stoch
    return float(np.max(np.abs(path.X - recon)))


def _dyadic_intervals(n_steps, levels=3):
    """Index pairs (a, b) of dyadic subintervals of [0, N], levels 0..levels."""
    out = []
    for lev in range(levels + 1):
        pieces = 2 ** lev
        for i in range(pieces):
            a = (i * n_steps) // pieces
            b = ((i + 1) * n_steps) // pieces
            if b > a:
                out.append((a, b))
    return out


def certificate_tolerance(path: Path) -> float:
    """Discretization allowance for the Riemann-Stieltjes certificates."""
    pathsup = float(np.max(np.linalg.norm(path.X, axis=1)))
    return 0.05 * (1.0 + pathsup) * path.grid.h * path.grid.t_final


def monotonicity_certificate(path: Path, op, probes) -> float:
    """Min over probes and dyadic windows of the discrete measure property.

    For constant graph pairs (alpha, beta), a valid path keeps
    sum <X - alpha, dY_k> - h sum <X - alpha, beta> above a
    discretization-sized negative tolerance on every window.  The sum
    pairs dY_k with the state the resolvent generated it at (the right
    grid endpoint), where the step inclusion holds exactly.
    """
    h = path.grid.h
    N = path.grid.n_steps
    dY = np.diff(path.Y, axis=0)
    worst = np.inf
    for alpha, beta in probes:
        alpha = np.asarray(alpha, dtype=float).reshape(path.dim)
        beta = np.asarray(beta, dtype=float).reshape(path.dim)
        if not op.graph_membership(alpha, beta, tol=1e-7):
            raise InvalidProbe("beta is not in A(alpha)")
        diff = path.X[1:] - alpha
        terms = np.einsum("kd,kd->k", diff, dY) - h * (diff @ beta)
        csum = np.concatenate([[0.0], np.cumsum(terms)])
        for a, b in _dyadic_intervals(N):
            worst = min(worst, csum[b] - csum[a])
    return float(worst)


def convex_value_certificate(path: Path, op, alpha) -> float:
    """Min over dyadic windows of sum (phi(alpha) - phi(X)) h - <alpha - X, dY_k>.

    As in the monotonicity certificate, dY_k pairs with the right grid
    endpoint, where dY_k / h is a subgradient of the potential.
    """
    if op.potential is None:
        raise NoPotential("operator carries no potential")
    h = path.grid.h
    N = path.grid.n_steps
    alpha = np.asarray(alpha, dtype=float).reshape(path.dim)
    phi_alpha = float(op.potential.evaluate(alpha))
    phi_X = np.asarray(op.potential.evaluate(path.X[1:]))
    dY = np.diff(path.Y, axis=0)
    diff = alpha - path.X[1:]
    terms = h * (phi_alpha - phi_X) - np.einsum("kd,kd->k", diff, dY)
    csum = np.concatenate([[0.0], np.cumsum(terms)])
    worst = np.inf
    for a, b in _dyadic_intervals(N):
        worst = min(worst, csum[b] - csum[a])
    return float(worst)


def exact_linear_reference(q, z0, proj_noise, times):
    """Exactly discretized scalar linear SDE z' = -q z + noise.

    Reference z_k = e^{-q t_k} (z0 + sum_{j<k} e^{q t_j} w_j) for realized
    noise increments w_j; shares the increments with the scheme under test.
    """
    w = np.asarray(proj_noise, dtype=float)
    growth = np.exp(q * times[:-1]) * w
    acc = np.concatenate([[0.0], np.cumsum(growth)])
    return np.exp(-q * times) * (z0 + acc)
