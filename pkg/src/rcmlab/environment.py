"""Conductance fields on a box: sampling, speed measures and a binary file format."""

from __future__ import annotations

import enum
import functools
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from ._kernels import fnv1a64
from .errors import (
    ChecksumError,
    DimensionMismatchError,
    EnvironmentFileError,
    InvalidArgumentError,
    TruncatedFileError,
    TruncationError,
    VersionMismatchError,
)
from .lattice import BoxGraph, build_box

MAGIC = b"RCM1"
FILE_VERSION = 1
_HEADER = struct.Struct("<4sIIQBdQQ")


class LawKind(enum.Enum):
    POLYNOMIAL = 0
    BERNOULLI = 1
    CONSTANT = 2
    EXPLICIT = 3


class Speed(enum.Enum):
    CSRW = "CSRW"
    VSRW = "VSRW"


class MeasureKind(enum.Enum):
    PI = "PI"
    COUNTING = "COUNTING"


@dataclass(frozen=True)
class Law:
    kind: LawKind
    param: float = 0.0

    def __post_init__(self):
        p = float(self.param)
        if self.kind is LawKind.POLYNOMIAL and not (p > 0 and np.isfinite(p)):
            raise InvalidArgumentError(f"polynomial exponent must be positive, got {p}")
        if self.kind is LawKind.BERNOULLI and not (0.0 <= p <= 1.0):
            raise InvalidArgumentError(f"open probability must lie in [0, 1], got {p}")
        if self.kind is LawKind.CONSTANT and not (p > 0 and np.isfinite(p)):
            raise InvalidArgumentError(f"constant conductance must be positive, got {p}")

    def cdf(self, u):
        """P(omega <= u)."""
        u = np.asarray(u, dtype=float)
        if self.kind is LawKind.POLYNOMIAL:
            return np.clip(u, 0.0, 1.0) ** self.param
        if self.kind is LawKind.BERNOULLI:
            return np.where(u < 0, 0.0, np.where(u < 1, 1.0 - self.param, 1.0))
        if self.kind is LawKind.CONSTANT:
            return np.where(u < self.param, 0.0, 1.0)
        raise InvalidArgumentError("explicit fields have no law")


def polynomial(gamma):
    return Law(LawKind.POLYNOMIAL, gamma)


def bernoulli(p):
    return Law(LawKind.BERNOULLI, p)


def constant(value=1.0):
    return Law(LawKind.CONSTANT, value)


EXPLICIT = Law(LawKind.EXPLICIT, 0.0)


@dataclass(frozen=True)
class Measure:
    kind: MeasureKind
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class Environment:
    """Edge-indexed conductances on a BoxGraph plus the walk speed.

    Instances hash by identity so that solvers can memoise per environment.
    """

    graph: BoxGraph
    conductances: np.ndarray = field(repr=False)
    law: Law
    seed: int
    speed: Speed = Speed.CSRW

    @functools.cached_property
    def pi(self):
        g = self.graph
        out = np.zeros(g.num_vertices)
        np.add.at(out, g.edges[:, 0], self.conductances)
        np.add.at(out, g.edges[:, 1], self.conductances)
        out.setflags(write=False)
        return out

    @functools.cached_property
    def neighbor_conductances(self):
        """Conductance of each CSR adjacency slot of the graph."""
        out = self.conductances[self.graph.incident]
        out.setflags(write=False)
        return out

    @property
    def theta(self):
        return self.measure().values

    def measure(self, kind=None):
        if kind is None:
            kind = MeasureKind.PI if self.speed is Speed.CSRW else MeasureKind.COUNTING
        if kind is MeasureKind.PI:
            return Measure(MeasureKind.PI, self.pi)
        return Measure(MeasureKind.COUNTING, np.ones(self.graph.num_vertices))

    def with_speed(self, speed):
        if speed is self.speed:
            return self
        out = replace(self, speed=Speed(speed))
        return out


def _check_conductances(g, values):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (g.num_edges,):
        raise InvalidArgumentError(f"expected {g.num_edges} conductances, got shape {values.shape}")
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise InvalidArgumentError("conductances must be finite and nonnegative")
    out = values.copy()
    out.setflags(write=False)
    return out


def sample(g, law, seed, speed=Speed.CSRW):
    """I.i.d. conductances; edge i uses the i-th uniform of the seed's environment stream."""
    if not isinstance(law, Law):
        raise InvalidArgumentError(f"unknown law {law!r}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
    return Environment(g, _check_conductances(g, edge_values(law, seed, 0, g.num_edges)), law, seed, Speed(speed))


def edge_values(law, seed, start, count):
    """Conductances of edges start .. start+count-1 for the given law and seed."""
    if law.kind is LawKind.CONSTANT:
        return np.full(count, float(law.param))
    if law.kind is LawKind.EXPLICIT:
        raise InvalidArgumentError("explicit fields cannot be sampled")
    u = rng.uniforms(seed, rng.ENV_STREAM, start, count)
    if law.kind is LawKind.POLYNOMIAL:
        # 1 - u lies in (0, 1], so P(omega <= s) = P(1 - u <= s^gamma) = s^gamma
        return (1.0 - u) ** (1.0 / law.param)
    return (u < law.param).astype(np.float64)


def from_array(g, values, speed=Speed.CSRW, law=EXPLICIT, seed=0):
    """Environment with hand-specified conductances in lexicographic edge order."""
    return Environment(g, _check_conductances(g, values), law, int(seed), Speed(speed))


def from_function(g, func, speed=Speed.CSRW):
    """Environment whose conductance on edge {x, y} is func(x, y) (coordinate tuples)."""
    vals = [func(g.point(u), g.point(v)) for u, v in g.edges]
    return from_array(g, np.array(vals, dtype=float), speed)


def pi(env, x):
    """Sum of the conductances incident to vertex x."""
    return float(env.pi[x])


def measure_of_ball(env, measure, x, R):
    """theta(B(x, R)) for the lattice box B(x, R) = x + [-R, R]^d."""
    g = env.graph
    c = np.asarray(g.coords[x])
    if R < 0:
        raise InvalidArgumentError("radius must be nonnegative")
    if np.any(np.abs(c - np.asarray(g.origin)) + R > g.n):
        raise TruncationError(f"box of radius {R} around {tuple(c)} leaves the sampled box")
    if isinstance(measure, MeasureKind):
        measure = env.measure(measure)
    mask = g.sup_norm(c) <= R
    return float(measure.values[mask].sum())


def checksum(body):
    return int(fnv1a64(np.frombuffer(body, dtype=np.uint8)))


def save(env, path):
    """Write the environment in the RCM1 layout (header, f64 body, FNV-1a footer)."""
    g = env.graph
    body = np.ascontiguousarray(env.conductances, dtype="<f8").tobytes()
    header = _HEADER.pack(
        MAGIC, FILE_VERSION, g.d, g.n, env.law.kind.value, float(env.law.param), env.seed, g.num_edges
    )
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(body)
        fh.write(struct.pack("<Q", checksum(body)))
    os.replace(tmp, path)


def load(path, d=None, n=None, speed=Speed.CSRW):
    """Read an RCM1 file; d and n, when given, must match the stored box."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError("file shorter than its header")
    magic, version, fd, fn, tag, param, seed, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EnvironmentFileError("not an environment file")
    if version != FILE_VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {FILE_VERSION}")
    if (d is not None and d != fd) or (n is not None and n != fn):
        raise DimensionMismatchError(f"file holds d={fd}, n={fn}; requested d={d}, n={n}")
    g = build_box(int(fd), int(fn))
    if count != g.num_edges:
        raise DimensionMismatchError(f"edge count {count} does not match the box (expected {g.num_edges})")
    end = _HEADER.size + 8 * count
    if len(raw) < end + 8:
        raise TruncatedFileError(f"expected {end + 8} bytes, found {len(raw)}")
    body = raw[_HEADER.size : end]
    (stored,) = struct.unpack_from("<Q", raw, end)
    if stored != checksum(body):
        raise ChecksumError("body checksum does not match footer")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    try:
        law = Law(LawKind(tag), param)
    except ValueError as exc:
        raise EnvironmentFileError(f"bad law descriptor: {exc}") from exc
    return Environment(g, _check_conductances(g, values), law, int(seed), Speed(speed))


def restrict(env, n, origin=None):
    """The same field seen on the smaller box origin + [-n, n]^d."""
    g = env.graph
    sub = build_box(g.d, n, origin if origin is not None else g.origin)
    if not (g.contains(sub.coords[0]) and g.contains(sub.coords[-1])):
        raise TruncationError("sub-box leaves the sampled box")
    u = g.index(sub.coords[sub.edges[:, 0]])
    v = g.index(sub.coords[sub.edges[:, 1]])
    ids = _edge_ids(g, np.atleast_1d(u), np.atleast_1d(v))
    return Environment(sub, _check_conductances(sub, env.conductances[ids]), env.law, env.seed, env.speed)


def _edge_ids(g, u, v):
    # edges are sorted lexicographically by (u, v), so a combined key is sorted too
    key = g.edges[:, 0] * g.num_vertices + g.edges[:, 1]
    q = np.minimum(u, v) * g.num_vertices + np.maximum(u, v)
    pos = np.searchsorted(key, q)
    if np.any(pos >= key.size) or np.any(key[np.minimum(pos, key.size - 1)] != q):
        raise InvalidArgumentError("vertex pairs are not edges of the box")
    return pos
