"""Compression operators: dense Gaussian matrices and subsampled Hadamard
transforms with a fast O(N log N) forward/adjoint path.

Both kinds follow the N(0, 1/N) normalization of the dense ensemble:
rows have unit norm in expectation (||A||_F^2 / M = 1) and columns have
squared norm ~ M/N.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np


def is_power_of_2(x):
    return x > 0 and (x & (x - 1)) == 0


def fht(v):
    """Orthonormal fast Walsh-Hadamard transform in Sylvester (natural) order.

    Operates on the last axis, which must have power-of-two length.
    The transform is its own inverse: fht(fht(v)) == v.
    """
    a = np.array(v, dtype=float)
    n = a.shape[-1]
    if not is_power_of_2(n):
        raise ValueError("fht length must be a power of two, got %d" % n)
    lead = a.shape[:-1]
    a = np.ascontiguousarray(a).reshape(-1, n)
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        top = a[:, 0, :].copy()
        a[:, 0, :] += a[:, 1, :]
        a[:, 1, :] = top - a[:, 1, :]
        a = a.reshape(-1, n)
        h *= 2
    a /= math.sqrt(n)
    return a.reshape(lead + (n,)) if lead else a[0]


@dataclass(frozen=True)
class SensingOperator:
    """Compression matrix with forward (M-output) and adjoint (N-output) apply.

    kind "dense-gaussian": explicit matrix, entries iid N(0, 1/N).
    kind "subsampled-hadamard": M distinct rows of the orthonormal N x N
    Hadamard matrix, with an optional +-1 column sign diagonal applied first.
    Immutable after construction; concurrent applies are safe.
    """

    kind: str
    m: int
    n: int
    seed: int
    matrix: np.ndarray = None
    rows: np.ndarray = None
    signs: np.ndarray = None

    def forward(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError("forward expects length-%d input, got %r" % (self.n, v.shape))
        if self.kind == "dense-gaussian":
            return self.matrix @ v
        u = v * self.signs if self.signs is not None else v
        return fht(u)[self.rows]

    def adjoint(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.m,):
            raise ValueError("adjoint expects length-%d input, got %r" % (self.m, w.shape))
        if self.kind == "dense-gaussian":
            return self.matrix.T @ w
        full = np.zeros(self.n)
        full[self.rows] = w
        u = fht(full)
        return u * self.signs if self.signs is not None else u

    def apply(self, direction, v):
        if direction == "forward":
            return self.forward(v)
        if direction == "adjoint":
            return self.adjoint(v)
        raise ValueError("direction must be 'forward' or 'adjoint'")

    def take_rows(self, keep):
        """Operator restricted to a subset of measurement rows (puncturing)."""
        keep = np.asarray(keep, dtype=np.intp)
        if self.kind == "dense-gaussian":
            return SensingOperator("dense-gaussian", len(keep), self.n, self.seed,
                                   matrix=self.matrix[keep])
        return SensingOperator("subsampled-hadamard", len(keep), self.n, self.seed,
                               rows=self.rows[keep], signs=self.signs)

    def dense_matrix(self):
        """Explicit M x N matrix; for small-N oracle checks only."""
        eye = np.eye(self.n)
        return np.stack([self.forward(eye[:, j]) for j in range(self.n)], axis=1)

    def checksum(self):
        """Structural checksum used to detect encoder/decoder seed mismatch."""
        crc = zlib.crc32(b"%s:%d:%d" % (self.kind.encode(), self.m, self.n))
        if self.matrix is not None:
            crc = zlib.crc32(np.ascontiguousarray(self.matrix[0]).tobytes(), crc)
        if self.rows is not None:
            crc = zlib.crc32(np.ascontiguousarray(self.rows).tobytes(), crc)
        if self.signs is not None:
            crc = zlib.crc32(np.ascontiguousarray(self.signs).tobytes(), crc)
        return crc


def build_iid_gaussian(m, n, seed):
    """Dense sensing matrix with iid N(0, 1/N) entries, reproducible from seed."""
    if m < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0 / math.sqrt(n), size=(m, n))
    return SensingOperator("dense-gaussian", m, n, _as_seed(seed), matrix=a)


def build_subsampled_hadamard(m, n, seed, signs=True):
    """M uniformly chosen distinct rows of the orthonormal Hadamard matrix.

    The optional independent +-1 column sign diagonal (default on)
    decorrelates structured inputs; switch off for transform-literal runs.
    """
    if not is_power_of_2(n):
        raise ValueError("N must be a power of two, got %d" % n)
    if m < 1 or m > n:
        raise ValueError("need 1 <= M <= N")
    rng = np.random.default_rng(seed)
    rows = rng.permutation(n)[:m]           # Fisher-Yates prefix
    diag = rng.choice(np.array([-1.0, 1.0]), size=n) if signs else None
    return SensingOperator("subsampled-hadamard", m, n, _as_seed(seed),
                           rows=np.sort(rows), signs=diag)


def _as_seed(seed):
    return int(seed) if np.isscalar(seed) else 0


def build_operator(spec, m, n, seed):
    """Operator factory from a JSON-style dict {"kind": ..., "signs": ...}."""
    spec = dict(spec)
    kind = spec.pop("kind", "dense-gaussian")
    if kind == "dense-gaussian":
        if spec:
            raise ValueError("unknown operator keys: %s" % ", ".join(sorted(spec)))
        return build_iid_gaussian(m, n, seed)
    if kind == "subsampled-hadamard":
        signs = bool(spec.pop("signs", True))
        if spec:
            raise ValueError("unknown operator keys: %s" % ", ".join(sorted(spec)))
        return build_subsampled_hadamard(m, n, seed, signs=signs)
    raise ValueError("unknown operator kind %r" % kind)
