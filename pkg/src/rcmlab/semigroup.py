"""Heat kernels, Feynman-Kac semigroups, Poisson solves and caloric evolution.

Semigroups e^{-tM} are applied by uniformization: with Lambda = max_x M_xx the
matrix P = I - M / Lambda is entrywise nonnegative with row sums <= 1 and

    e^{-tM} g = sum_k Poisson(k; Lambda t) P^k g.

Cutting the series after R terms changes every entry by at most
||g||_inf * P(N > R) for N ~ Poisson(Lambda t), which is the certified bound
stored with each result (plus a floating-point allowance).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats
from scipy.sparse import csgraph

from .errors import InvalidArgumentError, SingularSystemError, SizeError
from .lattice import MetricKind, ball
from .operators import DENSE_LIMIT, Boundary, full_spectrum, generator, schrodinger

EPS = np.finfo(float).eps


def memory_budget_bytes():
    return int(float(os.environ.get("RCM_MEMORY_MB", "2048")) * 2**20)


def _check_budget(nbytes, what):
    if nbytes > memory_budget_bytes():
        raise SizeError(
            f"{what} needs about {nbytes / 2**20:.0f} MiB, above the budget of "
            f"{memory_budget_bytes() / 2**20:.0f} MiB; use a smaller box or set RCM_MEMORY_MB"
        )


def poisson_cutoff(mean, tol):
    """Smallest R with P(N > R) <= tol for N ~ Poisson(mean)."""
    if mean == 0:
        return 0
    r = int(stats.poisson.isf(tol, mean))
    while stats.poisson.sf(r, mean) > tol:
        r += 1
    while r > 0 and stats.poisson.sf(r - 1, mean) <= tol:
        r -= 1
    return r


def uniformized_apply(op, G, times, tol=1e-12):
    """e^{-tM} G for every t in times, sharing one pass of the Poisson series.

    Returns (values, bounds): values[i] is e^{-times[i] M} G and bounds[i] the
    certified entrywise error for that time.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise InvalidArgumentError("times must be nonnegative")
    if tol <= 0:
        raise InvalidArgumentError("tolerance must be positive")
    G = np.asarray(G, dtype=float)
    vec = G.ndim == 1
    G2 = G[:, None] if vec else G
    _check_budget(G2.nbytes * (times.size + 2), "semigroup application")
    gnorm = float(np.abs(G2).max()) if G2.size else 0.0
    lam = float(op.diagonal.max())
    out = np.zeros((times.size,) + G2.shape)
    bounds = np.zeros(times.size)
    if lam <= 0 or gnorm == 0:
        out[:] = G2
        return (out[:, :, 0] if vec else out), bounds
    P = (sp.identity(op.size, format="csr") - op.matrix / lam).tocsr()
    P.eliminate_zeros()
    means = lam * times
    # relative tolerance; capped so that tiny inputs still get a meaningful series
    rel = min(tol / gnorm, 1e-3)
    cutoffs = np.array([poisson_cutoff(m, rel) for m in means])
    kmax = int(cutoffs.max())
    ks = np.arange(kmax + 1)
    weights = np.array([stats.poisson.pmf(ks, m) if m > 0 else (ks == 0).astype(float) for m in means])
    # left truncation: terms below the lower cutoff carry mass <= tol / 4 in total
    lefts = np.array([int(stats.poisson.ppf(0.25 * rel, m)) if m > 0 else 0 for m in means])
    lefts = np.maximum(lefts - 1, 0)
    left_mass = np.array([stats.poisson.cdf(lo - 1, m) if (m > 0 and lo > 0) else 0.0 for lo, m in zip(lefts, means)])
    for i, (lo, r) in enumerate(zip(lefts, cutoffs)):
        weights[i, :lo] = 0.0
        weights[i, r + 1 :] = 0.0
    row_nnz = int(np.diff(P.indptr).max()) if P.nnz else 1
    cur = np.ascontiguousarray(G2)
    for k in range(kmax + 1):
        if k:
            cur = P @ cur
        for i in range(times.size):
            w = weights[i, k]
            if w:
                out[i] += w * cur
    for i, (m, r) in enumerate(zip(means, cutoffs)):
        tail = (float(stats.poisson.sf(r, m)) + float(left_mass[i])) if m > 0 else 0.0
        bounds[i] = gnorm * (tail + 4.0 * (r + 1) * (row_nnz + 1) * EPS)
    return (out[:, :, 0] if vec else out), bounds


@dataclass(frozen=True)
class KernelSlice:
    """p_t(x, .) on a domain, theta-normalised, with its certified entrywise error."""

    source: int
    t: float
    domain: np.ndarray = field(repr=False)
    boundary: Boundary
    values: np.ndarray = field(repr=False)
    error_bound: float
    rate: float
    theta: np.ndarray = field(repr=False)

    def at(self, y):
        pos = np.searchsorted(self.domain, y)
        if pos >= self.domain.size or self.domain[pos] != y:
            return 0.0
        return float(self.values[pos])

    def full(self, num_vertices):
        out = np.zeros(num_vertices)
        out[self.domain] = self.values
        return out

    @property
    def mass(self):
        """sum_y p_t(x, y) theta_y = P^x(X_t in A, not killed)."""
        return float(np.sum(self.values * self.theta))

    def to_csv(self, path, graph):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(graph.d)] + ["value", "error_bound"])
            for y, v in zip(self.domain, self.values):
                w.writerow(list(graph.point(y)) + [repr(float(v)), repr(self.error_bound)])


def heat_kernel(env, measure=None, A=None, boundary=Boundary.DIRICHLET, x=0, t=1.0, tol=1e-12, op=None):
    """p^A_t(x, y) = P^x(X_t = y, t < tau_A) / theta_y for all y in A."""
    if op is None:
        op = generator(env, measure, A, boundary)
    cols, bounds = heat_columns(op, [x], [t], tol)
    j = int(op.local_index([x])[0])
    return KernelSlice(
        int(x), float(t), op.domain, op.boundary, cols[0][:, 0], float(bounds[0] / op.theta[j]),
        float(op.diagonal.max()), op.theta,
    )


def heat_columns(op, sources, times, tol=1e-12):
    """p_t(x_j, .) for several sources and times in one series pass.

    Returns (values, bounds) with values[i][:, j] = p_{times[i]}(sources[j], .)
    on op.domain and bounds[i] the entrywise error before division by theta_x
    (divide by theta of the source for the kernel's own bound).
    """
    idx = op.local_index(sources)
    if np.any(idx < 0):
        raise InvalidArgumentError("source vertex outside the operator domain")
    G = np.zeros((op.size, idx.size))
    G[idx, np.arange(idx.size)] = 1.0
    vals, bounds = uniformized_apply(op, G, times, tol)
    vals = vals / op.theta[idx][None, None, :]
    return vals, bounds


def kernel_matrix_dense(op, t):
    """Dense p_t on the domain via the full spectrum (small domains only)."""
    res = full_spectrum(op)
    psi = res.eigenvectors
    return (psi * np.exp(-res.eigenvalues * t)) @ psi.T


def semigroup_apply(op, f, t, tol=1e-12):
    """(e^{-tM} f) on the domain, with its entrywise bound."""
    vals, bounds = uniformized_apply(op, f, [t], tol)
    return vals[0], float(bounds[0])


def spectral_apply(op, f, t, spectrum=None):
    """e^{-tM} f from the eigen-decomposition: sum_i e^{-lambda_i t} <f, psi_i>_theta psi_i."""
    res = full_spectrum(op) if spectrum is None else spectrum
    psi = res.eigenvectors
    coef = psi.T @ (np.asarray(f, dtype=float) * op.theta)
    return psi @ (np.exp(-res.eigenvalues * t) * coef)


def feynman_kac(env, measure, lam, decomposition, A, f, t, tol=1e-12, method="uniformization"):
    """R^t(lambda) f(x) = E^x[f(X_t) exp(-lambda A(t)); t < tau_A] for x in A.

    ``f`` is given on all vertices of the box; the result is returned on all
    vertices (zero outside A). ``method`` is "uniformization", "spectral"
    (domains up to the dense limit) or "both", which raises if the two differ
    by more than tol.
    """
    if tol <= 0:
        raise InvalidArgumentError("tolerance must be positive")
    if t < 0:
        raise InvalidArgumentError("time must be nonnegative")
    op = schrodinger(env, measure, lam, decomposition, A)
    fA = np.asarray(f, dtype=float)[op.domain]
    out = np.zeros(env.graph.num_vertices)
    if method == "spectral":
        out[op.domain] = spectral_apply(op, fA, t)
        return out
    u, bound = semigroup_apply(op, fA, t, tol)
    if method == "both":
        if op.size > DENSE_LIMIT:
            raise SizeError("spectral cross-check needs a domain within the dense limit")
        s = spectral_apply(op, fA, t)
        gap = float(np.abs(s - u).max())
        if gap > max(tol, 2 * bound):
            raise ArithmeticError(f"uniformization and spectral paths differ by {gap:.3e}")
    elif method != "uniformization":
        raise InvalidArgumentError(f"unknown method {method!r}")
    out[op.domain] = u
    return out


def _check_invertible(op):
    # each component of the domain graph must lose mass somewhere
    K = op.stiffness
    off = K.copy()
    off.setdiag(0)
    off.eliminate_zeros()
    k, lab = csgraph.connected_components(off, directed=False)
    killing = np.asarray(K.sum(axis=1)).ravel()
    leak = np.zeros(k)
    np.add.at(leak, lab, np.abs(killing))
    if np.any(leak <= 1e-300):
        raise SingularSystemError("killed generator is singular: a component of the domain never exits")


def _solve(op, rhs):
    _check_invertible(op)
    K = op.stiffness.tocsc()
    lu = spla.splu(K)
    u = lu.solve(rhs)
    r = rhs - K @ u
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    for _ in range(3):
        if np.linalg.norm(r) <= 1e-12 * scale:
            break
        u = u + lu.solve(r)
        r = rhs - K @ u
    return u


def solve_poisson(env, measure, A, f, op=None):
    """u with L u = f on A and u = 0 off A; f = -1 gives u(x) = E^x[tau_A].

    ``f`` may be a scalar or a vector on all vertices; the result is a vector
    on all vertices.
    """
    if op is None:
        op = generator(env, measure, A, Boundary.DIRICHLET)
    nv = env.graph.num_vertices
    fv = np.broadcast_to(np.asarray(f, dtype=float), (nv,))[op.domain]
    out = np.zeros(nv)
    if not np.any(fv):
        return out
    # L u = f  <=>  -D^-1 K u = f  <=>  K u = -theta f
    out[op.domain] = _solve(op, -op.theta * fv)
    return out


def poisson_residual(env, op, u, f):
    """||L u - f|| / ||f|| on the domain."""
    nv = env.graph.num_vertices
    fv = np.broadcast_to(np.asarray(f, dtype=float), (nv,))[op.domain]
    Lu = -op.apply(np.asarray(u)[op.domain])
    return float(np.linalg.norm(Lu - fv) / max(np.linalg.norm(fv), 1e-300))


def harmonic_extension(env, measure, A, values, op=None):
    """h with L h = 0 on A and h = values off A (values given on all vertices)."""
    if op is None:
        op = generator(env, measure, A, Boundary.DIRICHLET)
    g = env.graph
    b = np.asarray(values, dtype=float)
    inside = np.zeros(g.num_vertices, dtype=bool)
    inside[op.domain] = True
    local = np.full(g.num_vertices, -1, dtype=np.int64)
    local[op.domain] = np.arange(op.size)
    u, v = g.edges[:, 0], g.edges[:, 1]
    w = env.conductances
    rhs = np.zeros(op.size)
    m1 = inside[u] & ~inside[v]
    m2 = inside[v] & ~inside[u]
    np.add.at(rhs, local[u[m1]], w[m1] * b[v[m1]])
    np.add.at(rhs, local[v[m2]], w[m2] * b[u[m2]])
    out = b.copy()
    out[op.domain] = _solve(op, rhs) if np.any(rhs) else 0.0
    return out


@dataclass(frozen=True)
class SpaceTimeField:
    """Caloric function on [0, 4T] x B(x0, C* R) sampled on a time grid."""

    x0: int
    R: float
    cstar: float
    T: float
    times: np.ndarray = field(repr=False)
    domain: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    inner: np.ndarray = field(repr=False)
    error_bound: float = 0.0

    def _window(self, lo, hi):
        tm = (self.times >= lo - 1e-12) & (self.times <= hi + 1e-12)
        return self.values[np.ix_(tm, self.inner)]

    def q_minus(self):
        return self._window(self.T, 2 * self.T)

    def q_plus(self):
        return self._window(3 * self.T, 4 * self.T)

    def harnack_ratio(self):
        lo = float(self.q_plus().min())
        return float(self.q_minus().max()) / lo if lo > 0 else np.inf


def cylinder_domain(env, x0, R, cstar):
    """Vertices of B(x0, C* R) and the positions of B(x0, R) inside it (graph metric)."""
    g = env.graph
    outer = ball(g, MetricKind.GRAPH, env, x0, cstar * R)
    inner_v = ball(g, MetricKind.GRAPH, env, x0, R)
    return outer, np.searchsorted(outer, inner_v)


def caloric_evolve(env, measure, x0, R, T, initial, lateral=None, cstar=2.0, step=None, tol=1e-12):
    """Solve d/dt u = L u on B(x0, C* R) for t in [0, 4T].

    ``initial`` and ``lateral`` are vectors on all vertices. Without lateral
    data the solution is killed on leaving the ball; with it, u is held equal
    to the lateral values outside the ball, giving u(t) = h + e^{-tM}(u0 - h)
    with h the harmonic extension of the lateral data. ``step`` sets the
    reporting grid (default T / 8); the evolution itself is exact in space.
    """
    if step is None:
        step = T / 8.0
    if not step > 0:
        raise InvalidArgumentError("time step must be positive")
    domain, inner = cylinder_domain(env, x0, R, cstar)
    if domain.size >= env.graph.num_vertices:
        raise InvalidArgumentError("cylinder does not fit in the sampled box")
    op = generator(env, measure, domain, Boundary.DIRICHLET)
    times = np.arange(0.0, 4 * T + 0.5 * step, step)
    u0 = np.asarray(initial, dtype=float)[domain]
    h = np.zeros(op.size)
    if lateral is not None:
        h = harmonic_extension(env, measure, domain, lateral, op=op)[domain]
    vals, bounds = uniformized_apply(op, u0 - h, times, tol)
    return SpaceTimeField(int(x0), float(R), float(cstar), float(T), times, domain, vals + h, inner, float(bounds.max()))


def time_derivative(env, measure, A, x, y, t, boundary=Boundary.DIRICHLET, tol=1e-12):
    """d/dt p^A_t(x, y).

    Small domains use the spectral sum -sum_i lambda_i e^{-lambda_i t} psi_i(x) psi_i(y);
    larger ones the exact identity d/dt p_t(x, .) = -M p_t(x, .) on the
    uniformized column. Returns (value, error bound).
    """
    if not t > 0:
        raise InvalidArgumentError("time derivative needs t > 0")
    op = generator(env, measure, A, boundary)
    ix, iy = op.local_index([x, y])
    if ix < 0 or iy < 0:
        raise InvalidArgumentError("x and y must lie in the domain")
    if op.size <= DENSE_LIMIT:
        res = full_spectrum(op)
        psi = res.eigenvectors
        val = -np.sum(res.eigenvalues * np.exp(-res.eigenvalues * t) * psi[ix] * psi[iy])
        return float(val), float(1e-12 * max(1.0, np.abs(res.eigenvalues).max()))
    cols, bounds = heat_columns(op, [x], [t], tol)
    deriv = -op.apply(cols[0][:, 0])
    norm_inf = 2.0 * float(op.diagonal.max())
    return float(deriv[iy]), float(norm_inf * bounds[0] / op.theta[ix])


def dirichlet_domination_pair(env, measure, A_small, A_big, x, t, tol=1e-12):
    """(p^A_t(x, .), p^A'_t(x, .)) on all vertices, for checking p^A <= p^A'."""
    g = env.graph
    small = heat_kernel(env, measure, A_small, Boundary.DIRICHLET, x, t, tol)
    big = heat_kernel(env, measure, A_big, Boundary.DIRICHLET, x, t, tol)
    return small.full(g.num_vertices), big.full(g.num_vertices), small.error_bound + big.error_bound

