"""Reproducible random streams and one-step Wiener packages.

Trajectories are grouped in blocks of ``LANES``.  Block ``b`` of substream
``s`` owns a Philox generator keyed by ``SeedSequence(master_seed,
spawn_key=(s, b))``.  Every draw takes a full ``(rows, LANES)`` array from
the block generator, so the numbers seen by trajectory ``i`` depend only on
``(master_seed, i, substream)`` and the sequence of draws, never on how
trajectories are batched or scheduled.  Normals come from numpy's ziggurat
sampler, which is exact N(0, 1) up to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LANES = 1024
MODES = ("weak_substitute", "exact_gaussian")
LEVY_TERMS = 10


def _block_generator(master_seed: int, block: int, substream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(substream), int(block)))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True)
class StreamSpec:
    """Identity of a single trajectory's random stream."""

    master_seed: int
    trajectory_index: int
    substream: int = 0

    def open(self) -> "BatchStream":
        return BatchStream(BatchSpec(self.master_seed, self.trajectory_index, 1, self.substream))


@dataclass(frozen=True)
class BatchSpec:
    """Contiguous trajectories ``[start, start + count)`` of one substream."""

    master_seed: int
    start: int
    count: int
    substream: int = 0

    def open(self) -> "BatchStream":
        return BatchStream(self)


class BatchStream:
    """Stateful reader of normals for a contiguous range of trajectories.

    ``normals(rows)`` returns an array of shape ``(rows, count)``.
    """

    def __init__(self, spec: BatchSpec):
        if spec.count < 1 or spec.start < 0:
            raise ValueError("batch needs start >= 0 and count >= 1")
        self.spec = spec
        first = spec.start // LANES
        last = (spec.start + spec.count - 1) // LANES
        self._blocks = list(range(first, last + 1))
        self._gens = [_block_generator(spec.master_seed, b, spec.substream) for b in self._blocks]
        self._offset = spec.start - first * LANES
        self._buf = None

    @property
    def count(self) -> int:
        return self.spec.count

    def normals(self, rows: int) -> np.ndarray:
        nb = len(self._blocks)
        if self._buf is None or self._buf.shape[0] != rows:
            self._buf = np.empty((nb, rows, LANES))
        buf = self._buf
        for j, gen in enumerate(self._gens):
            gen.standard_normal(out=buf[j])
        # (blocks, rows, lanes) -> (rows, blocks * lanes)
        flat = buf.transpose(1, 0, 2).reshape(rows, nb * LANES)
        return flat[:, self._offset:self._offset + self.spec.count]


def open_stream(stream) -> BatchStream:
    """Accept a StreamSpec, BatchSpec or an already open BatchStream."""
    if isinstance(stream, BatchStream):
        return stream
    return stream.open()


@dataclass
class WienerPackage:
    """One step's increments.  Arrays carry trailing batch axes.

    dW[r], dZ[r] = int int dW_r ds, dI[r1, r] = int int dW_r1 dW_r.
    """

    dW: np.ndarray
    dZ: np.ndarray
    dI: np.ndarray
    h: float

    @property
    def noise_dim(self) -> int:
        return self.dW.shape[0]

    @classmethod
    def zeros(cls, m: int, h: float, batch: tuple = ()) -> "WienerPackage":
        return cls(np.zeros((m,) + batch), np.zeros((m,) + batch), np.zeros((m, m) + batch), h)


def rows_per_step(m: int, mode: str) -> int:
    """Standard normals consumed per step for noise dimension ``m``."""
    if mode == "weak_substitute":
        return 2 * m + m * (m - 1) // 2
    if mode == "exact_gaussian":
        return m * (2 * LEVY_TERMS + 2)
    raise ValueError(f"unknown integral mode {mode!r}")


def package_from_normals(xi: np.ndarray, h: float, m: int, mode: str) -> WienerPackage:
    """Build a package from ``rows_per_step(m, mode)`` standard normal rows."""
    if not h > 0:
        raise ValueError("step size must be positive")
    sqh = math.sqrt(h)
    batch = xi.shape[1:]
    dW = sqh * xi[:m]
    dI = np.empty((m, m) + batch)
    if mode == "weak_substitute":
        eta = xi[m:2 * m] * math.sqrt(h / 3.0)
        dZ = 0.5 * h * (dW + eta)
        k = 2 * m
        for r1 in range(m):
            dI[r1, r1] = 0.5 * (dW[r1] * dW[r1] - h)
            for r in range(r1 + 1, m):
                v = np.where(xi[k] >= 0.0, h, -h)
                k += 1
                prod = dW[r1] * dW[r]
                dI[r1, r] = 0.5 * (prod - v)
                dI[r, r1] = 0.5 * (prod + v)
        return WienerPackage(dW, dZ, dI, h)
    if mode == "exact_gaussian":
        K = LEVY_TERMS
        alpha = xi[m:m + m * K].reshape((m, K) + batch)
        beta = xi[m + m * K:m + 2 * m * K].reshape((m, K) + batch)
        mu = xi[m + 2 * m * K:m + 2 * m * K + m]
        inv_k = 1.0 / np.arange(1, K + 1)
        inv_k_b = inv_k.reshape((1, K) + (1,) * len(batch))
        rho = 1.0 / 12.0 - np.sum(inv_k * inv_k) / (2.0 * math.pi ** 2)
        h32 = h * sqh
        c = (-(h32 / (math.pi * math.sqrt(2.0))) * np.sum(alpha * inv_k_b, axis=1)
             - h32 * math.sqrt(rho) * mu)
        dZ = 0.5 * h * dW + c
        for r1 in range(m):
            dI[r1, r1] = 0.5 * (dW[r1] * dW[r1] - h)
            for r in range(r1 + 1, m):
                area = (h / (2.0 * math.pi)) * np.sum(
                    inv_k_b[0] * (alpha[r1] * beta[r] - beta[r1] * alpha[r]), axis=0)
                val = 0.5 * dW[r1] * dW[r] + (dW[r] / h) * c[r1] - (dW[r1] / h) * c[r] + area
                dI[r1, r] = val
                dI[r, r1] = dW[r1] * dW[r] - val
        return WienerPackage(dW, dZ, dI, h)
    raise ValueError(f"unknown integral mode {mode!r}")


def sample_package(h: float, m: int, mode: str, stream) -> WienerPackage:
    """Draw one step's package from ``stream`` (spec or open stream).

    A ``StreamSpec`` or ``BatchSpec`` is opened fresh, i.e. the first step of
    its sequence; pass an open ``BatchStream`` to continue a sequence.
    Single-trajectory streams return arrays without a batch axis.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    if m < 1:
        raise ValueError("noise dimension must be >= 1")
    single = isinstance(stream, StreamSpec)
    s = open_stream(stream)
    xi = s.normals(rows_per_step(m, mode))
    if single:
        xi = xi[:, 0]
    return package_from_normals(xi, h, m, mode)


class PackageAccumulator:
    """Aggregate consecutive fine-step packages into one coarse-step package.

    Chen's relation for iterated integrals: over [0, 2h],
    I(r1, r) = I1(r1, r) + I2(r1, r) + dW1[r1] dW2[r] and
    Z[r] = Z1[r] + Z2[r] + dW1[r] h2.
    The diagonal of dI is rebuilt from the coarse increments.
    """

    def __init__(self, m: int, batch: tuple):
        self.m = m
        self.batch = batch
        self.reset()

    def reset(self):
        m, b = self.m, self.batch
        self.W = np.zeros((m,) + b)
        self.Z = np.zeros((m,) + b)
        self.I = np.zeros((m, m) + b)
        self.H = 0.0
        self.steps = 0

    def add(self, pkg: WienerPackage):
        self.Z += pkg.dZ + self.W * pkg.h
        if self.m > 1:
            self.I += pkg.dI + self.W[:, None] * pkg.dW[None, :]
        self.W += pkg.dW
        self.H += pkg.h
        self.steps += 1

    def package(self, h: float | None = None) -> WienerPackage:
        h = self.H if h is None else h
        dI = self.I.copy()
        for r in range(self.m):
            dI[r, r] = 0.5 * (self.W[r] * self.W[r] - h)
        return WienerPackage(self.W.copy(), self.Z.copy(), dI, h)
