"""Generators, killed generators and Schrödinger operators as sparse matrices.

Every operator is stored through its symmetric "stiffness" matrix K, with the
action M = D^-1 K for D = diag(theta). M is the positive semidefinite operator
-L (or -G(lambda)); it is self-adjoint for <f, g>_theta = sum f g theta, and all
eigenproblems are solved on S = D^-1/2 K D^-1/2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import Measure, MeasureKind
from .errors import EmptyDomainError, InvalidArgumentError, NonConvergenceError, SizeError

DENSE_LIMIT = 2000


class Boundary(enum.Enum):
    DIRICHLET = "dirichlet"
    RESTRICTED = "restricted"


def resolve_measure(env, measure):
    if measure is None:
        return env.measure()
    if isinstance(measure, Measure):
        return measure
    return env.measure(MeasureKind(measure))


def resolve_domain(g, A):
    if A is None:
        return np.arange(g.num_vertices, dtype=np.int64)
    A = np.asarray(A)
    if A.dtype == bool:
        A = np.nonzero(A)[0]
    A = np.unique(A.astype(np.int64))
    if A.size and (A[0] < 0 or A[-1] >= g.num_vertices):
        raise InvalidArgumentError("domain contains vertices outside the box")
    return A


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """-L (or -G(lambda)) on a vertex subset with Dirichlet or restricted boundary."""

    env: object = field(repr=False)
    domain: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    boundary: Boundary
    measure_kind: MeasureKind
    lam: float = 0.0
    xi: float | None = None
    potential: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self):
        return int(self.domain.size)

    @property
    def diagonal(self):
        return self.stiffness.diagonal() / self.theta

    @property
    def matrix(self):
        """M = D^-1 K as CSR."""
        return sp.diags(1.0 / self.theta) @ self.stiffness

    @property
    def symmetric(self):
        s = 1.0 / np.sqrt(self.theta)
        return (sp.diags(s) @ self.stiffness @ sp.diags(s)).tocsr()

    def apply(self, f):
        """M f for f on the domain (vector or column block)."""
        f = np.asarray(f, dtype=float)
        out = self.stiffness @ f
        return out / (self.theta if out.ndim == 1 else self.theta[:, None])

    def dense(self):
        if self.size > DENSE_LIMIT:
            raise SizeError(f"dense form of a {self.size}-state operator exceeds the {DENSE_LIMIT} limit")
        return self.stiffness.toarray() / self.theta[:, None]

    def local_index(self, vertices):
        """Positions of global vertex ids within the domain; -1 where absent."""
        v = np.asarray(vertices, dtype=np.int64)
        pos = np.searchsorted(self.domain, v)
        pos = np.clip(pos, 0, max(self.size - 1, 0))
        ok = self.domain[pos] == v
        return np.where(ok, pos, -1)

    def inner(self, f, g):
        return float(np.sum(np.asarray(f) * np.asarray(g) * self.theta))


def _assemble(env, measure, A, boundary, extra_diag=None):
    g = env.graph
    A = resolve_domain(g, A)
    if A.size == 0:
        raise EmptyDomainError("operator domain is empty")
    measure = resolve_measure(env, measure)
    theta = np.asarray(measure.values, dtype=float)[A]
    if np.any(theta <= 0):
        raise InvalidArgumentError("speed measure vanishes on the domain (isolated vertex)")
    boundary = Boundary(boundary)
    local = np.full(g.num_vertices, -1, dtype=np.int64)
    local[A] = np.arange(A.size)
    u, v = g.edges[:, 0], g.edges[:, 1]
    w = env.conductances
    lu, lv = local[u], local[v]
    inside = (lu >= 0) & (lv >= 0)
    diag = np.zeros(A.size)
    np.add.at(diag, lu[inside], w[inside])
    np.add.at(diag, lv[inside], w[inside])
    if boundary is Boundary.DIRICHLET:
        cross_u = (lu >= 0) & (lv < 0)
        cross_v = (lv >= 0) & (lu < 0)
        np.add.at(diag, lu[cross_u], w[cross_u])
        np.add.at(diag, lv[cross_v], w[cross_v])
    if extra_diag is not None:
        diag = diag + extra_diag * theta
    rows = np.concatenate([lu[inside], lv[inside], np.arange(A.size)])
    cols = np.concatenate([lv[inside], lu[inside], np.arange(A.size)])
    vals = np.concatenate([-w[inside], -w[inside], diag])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(A.size, A.size))
    K.sum_duplicates()
    K.sort_indices()
    A.setflags(write=False)
    theta.setflags(write=False)
    return A, theta, K, boundary, measure.kind


def generator(env, measure=None, A=None, boundary=Boundary.DIRICHLET):
    """-L_theta on A.

    DIRICHLET keeps the conductance towards the complement of A on the
    diagonal (the walk is killed on leaving A); RESTRICTED drops it (the walk
    is reflected inside A). Killing only happens through edges of the sampled
    box, so a Dirichlet problem on B_n needs an environment on a larger box.
    """
    A, theta, K, boundary, kind = _assemble(env, measure, A, boundary)
    return SparseOperator(env, A, theta, K, boundary, kind)


def schrodinger(env, measure, lam, decomposition, A=None, boundary=Boundary.DIRICHLET):
    """-G(lambda) = -L + lambda * diag(1 on the giant cluster), Dirichlet outside A."""
    if not lam >= 0:
        raise InvalidArgumentError(f"lambda must be nonnegative, got {lam}")
    if decomposition.env.graph is not env.graph:
        raise InvalidArgumentError("decomposition belongs to a different box")
    dom = resolve_domain(env.graph, A)
    phi = decomposition.giant_mask.astype(float)[dom]
    A_, theta, K, boundary, kind = _assemble(env, measure, dom, boundary, extra_diag=lam * phi)
    return SparseOperator(env, A_, theta, K, boundary, kind, float(lam), decomposition.threshold, phi)


def hole_operator(env, measure, decomposition, n=None):
    """-L with Dirichlet condition outside the holes (intersected with B_n when n is given)."""
    mask = decomposition.hole_mask
    if n is not None:
        mask = mask & (env.graph.sup_norm() <= n)
    if not mask.any():
        raise EmptyDomainError("decomposition has no hole vertices in the requested box")
    op = generator(env, measure, np.nonzero(mask)[0], Boundary.DIRICHLET)
    return SparseOperator(
        op.env, op.domain, op.theta, op.stiffness, op.boundary, op.measure_kind, 0.0, decomposition.threshold
    )


def dirichlet_energy(env, f):
    """Sum over edges of omega_xy (f(x) - f(y))^2, which equals <-L f, f>_theta."""
    f = np.asarray(f, dtype=float)
    if f.shape != (env.graph.num_vertices,):
        raise InvalidArgumentError("f must be defined on every vertex of the box")
    e = env.graph.edges
    diff = f[e[:, 0]] - f[e[:, 1]]
    return float(np.sum(env.conductances * diff * diff))


def rayleigh_quotient(op, f):
    """<M f, f>_theta / <f, f>_theta."""
    f = np.asarray(f, dtype=float)
    den = float(f @ (f * op.theta))
    if den == 0:
        raise InvalidArgumentError("Rayleigh quotient of the zero vector")
    return float(f @ (op.stiffness @ f)) / den


@dataclass(frozen=True)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    iterations: int
    method: str

    @property
    def value(self):
        return float(self.eigenvalues[0])

    @property
    def vector(self):
        return self.eigenvectors[:, 0]


def _fix_signs(vecs):
    # largest-magnitude entry (first on ties) made positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _finish(op, vals, v, iterations, method):
    S = op.symmetric
    res = np.linalg.norm(S @ v - v * vals, axis=0)
    psi = _fix_signs(v / np.sqrt(op.theta)[:, None])
    return SpectralResult(vals, psi, res, iterations, method)


def full_spectrum(op):
    """All eigenpairs by dense symmetric decomposition; theta-orthonormal eigenvectors."""
    if op.size > DENSE_LIMIT:
        raise SizeError(f"full spectrum of {op.size} states exceeds the dense limit {DENSE_LIMIT}")
    s = 1.0 / np.sqrt(op.theta)
    Sd = op.stiffness.toarray() * s[:, None] * s[None, :]
    vals, vecs = la.eigh(Sd)
    return _finish(op, vals, vecs, 1, "dense")


def smallest_eigenpairs(op, k=1, tol=1e-8, maxiter=None, check=True):
    """The k smallest eigenpairs of op (theta-orthonormal vectors, ascending values)."""
    if tol <= 0:
        raise InvalidArgumentError("tolerance must be positive")
    if op.size <= DENSE_LIMIT or k >= op.size - 1:
        res = full_spectrum(op)
        out = SpectralResult(
            res.eigenvalues[:k], res.eigenvectors[:, :k], res.residuals[:k], res.iterations, res.method
        )
    else:
        S = op.symmetric.tocsc()
        scale = float(abs(S).sum(axis=1).max())
        # a negative shift keeps S - sigma I positive definite even when 0 is an eigenvalue
        sigma = -1e-6 * max(scale, 1.0)
        v0 = np.ones(op.size)
        try:
            vals, vecs = spla.eigsh(S, k=k, sigma=sigma, which="LM", v0=v0, tol=min(tol, 1e-10), maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            best = np.nan
            if exc.eigenvalues.size:
                r = S @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues
                best = float(np.linalg.norm(r, axis=0).max())
            raise NonConvergenceError("shift-invert Lanczos did not converge", residual=best) from exc
        order = np.argsort(vals)
        out = _finish(op, vals[order], vecs[:, order], 0, "shift-invert-lanczos")
    if check:
        bound = 1e-8 * np.maximum(1.0, np.abs(out.eigenvalues))
        if np.any(out.residuals > bound):
            raise NonConvergenceError(
                "eigen-residual above tolerance", residual=float(out.residuals.max()), iterations=out.iterations
            )
    return out


def smallest_eigenpair(op, tol=1e-8):
    """(lambda_1, theta-normalised eigenvector) of op."""
    res = smallest_eigenpairs(op, 1, tol)
    return res.value, res.vector
