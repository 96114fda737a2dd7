"""Distributed Gaussian sequence model: per-machine streams, sampling, data splitting."""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .coeffs import CoeffSeq

ROLES = ("noise", "split", "signal", "test", "aux")
_TWO53 = 2.0**-53


def role_code(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


class RandomStream:
    """Counter-based (Philox) stream keyed by ``(seed, machine, replicate, role)``.

    Normals come from the inverse normal CDF applied to open-interval uniforms,
    so a stream is a pure function of its key and draw position.
    """

    def __init__(self, seed: int, *key: int):
        ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
        self.key = (int(seed),) + tuple(int(k) for k in key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def uniform(self, size=None) -> np.ndarray:
        """Uniforms in the open interval (0, 1)."""
        u = self._gen.integers(0, 2**53, size=size, dtype=np.uint64)
        return (u.astype(float) + 0.5) * _TWO53

    def normal(self, size=None) -> np.ndarray:
        return ndtri(self.uniform(size))

    def signs(self, size=None) -> np.ndarray:
        return np.where(self._gen.integers(0, 2, size=size) == 1, 1.0, -1.0)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def rng_stream(seed: int, machine: int, replicate: int, role: str) -> RandomStream:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
    return RandomStream(seed, machine, replicate, role_code(role))


def derive_seed(seed: int, *key: int) -> int:
    """Child master seed, e.g. one per grid point of an experiment."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ModelConfig:
    n: float
    m: int
    J_max: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("n must be >= 4")
        if self.m < 1 or self.m > self.n:
            raise ValueError("need 1 <= m <= n")
        if self.J_max < 0:
            raise ValueError("J_max must be >= 0")

    @property
    def noise_sd(self) -> float:
        return math.sqrt(self.m / self.n)

    @property
    def log2n(self) -> float:
        return math.log2(self.n)


@dataclass(frozen=True)
class LocalSample:
    machine: int
    obs: CoeffSeq
    noise_sd: float
    replicate: int = 0


@dataclass(frozen=True)
class SplitSample:
    half1: CoeffSeq
    half2: CoeffSeq
    noise_sd: float


def _machine_sample(f0: CoeffSeq, cfg: ModelConfig, replicate: int, i: int, zero_noise: bool) -> LocalSample:
    if zero_noise:
        return LocalSample(i, f0, 0.0, replicate)
    z = rng_stream(cfg.seed, i, replicate, "noise").normal(f0.values.size)
    return LocalSample(i, CoeffSeq(f0.values + cfg.noise_sd * z), cfg.noise_sd, replicate)


def simulate(f0: CoeffSeq, cfg: ModelConfig, replicate: int = 0, *,
             zero_noise: bool = False, workers: int = 1) -> list[LocalSample]:
    """Draw ``X^(i)_jk = f0_jk + sqrt(m/n) Z^(i)_jk`` for every machine ``i``."""
    if f0.J_max != cfg.J_max:
        raise ValueError(f"signal J_max={f0.J_max} does not match config J_max={cfg.J_max}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: _machine_sample(f0, cfg, replicate, i, zero_noise), range(cfg.m)))
    return [_machine_sample(f0, cfg, replicate, i, zero_noise) for i in range(cfg.m)]


def split(sample: LocalSample, rng: RandomStream) -> SplitSample:
    """Add and subtract an independent ``N(0, noise_sd**2)`` draw.

    Each half has noise variance ``2 m / n`` and the two halves are independent.
    """
    zt = sample.noise_sd * rng.normal(sample.obs.values.size)
    x = sample.obs.values
    return SplitSample(CoeffSeq(x + zt), CoeffSeq(x - zt), math.sqrt(2.0) * sample.noise_sd)


def split_for(sample: LocalSample, seed: int) -> SplitSample:
    """Split with the machine's own ``"split"`` stream."""
    return split(sample, rng_stream(seed, sample.machine, sample.replicate, "split"))
