"""Composite Besov smoothness tests and local smoothness selectors.

The level-wise statistic is the centered energy
``T(l) = sum_k X_lk**2 - 2**l sigma**2`` (father only at ``l = 0``), compared
against ``t(l) = L**2 2**(-2 l s2) + L 2**(-l s2) tau_l + tau_l**2 / 4``.
The test rejects the smoother class when any level up to
``floor(log2(n/2m) / (2 s1 + 1/2))`` exceeds its threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoeffSeq, level_masses
from .signals import SelfSimSpec

FATHER_SLOTS = 1
ALPHA_FLOOR = 1e-6


def _floor(x: float) -> int:
    return math.floor(x + 1e-9)


@dataclass(frozen=True)
class TestParams:
    s1: float
    s2: float
    L: float
    alpha: float
    n: float
    m: int

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.s1 < self.s2:
            raise ValueError("need s1 < s2")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.n / (2 * self.m) < 2:
            raise ValueError("need n / (2m) >= 2")
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def local_n(self) -> float:
        """Effective sample size of one half sample, ``n / (2m)``."""
        return self.n / (2 * self.m)

    @property
    def sigma_sq(self) -> float:
        return 2 * self.m / self.n

    @property
    def level_cap(self) -> int:
        return _floor(math.log2(self.local_n) / (2 * self.s1 + 0.5))

    def tau(self, l: int) -> float:
        a = max(self.alpha, ALPHA_FLOOR)
        base = 24 * math.sqrt(FATHER_SLOTS / a) / math.sqrt(self.local_n)
        if l == 0:
            return base
        return base * 2.0 ** (l + _floor(math.log2(self.local_n) / (0.5 + 2 * self.s2)))


@dataclass(frozen=True)
class TestReport:
    levels: tuple[int, ...]
    stats: tuple[float, ...]
    thresholds: tuple[float, ...]
    decision: int

    __test__ = False

    @property
    def rejected_levels(self) -> list[int]:
        return [l for l, T, t in zip(self.levels, self.stats, self.thresholds) if T > t]


def level_statistics(fhat: CoeffSeq, sigma_sq: float, top: int | None = None) -> np.ndarray:
    """``T(l)`` for ``l = 0..top`` in one pass."""
    top = fhat.J_max if top is None else top
    if top > fhat.J_max:
        raise ValueError(f"need J_max >= {top}, have {fhat.J_max}")
    masses = level_masses(fhat)
    T = np.empty(top + 1)
    T[0] = masses[0] - FATHER_SLOTS * sigma_sq
    l = np.arange(1, top + 1)
    T[1:] = masses[l + 1] - 2.0**l * sigma_sq
    return T


def test_statistic(fhat: CoeffSeq, l: int, sigma_sq: float) -> float:
    if not 0 <= l <= fhat.J_max:
        raise IndexError(f"level {l} outside 0..{fhat.J_max}")
    return float(level_statistics(fhat, sigma_sq, l)[l])


test_statistic.__test__ = False


def threshold(l: int, params: TestParams) -> float:
    tau = params.tau(l)
    decay = 2.0 ** (-l * params.s2)
    return params.L**2 * decay**2 + params.L * decay * tau + tau**2 / 4


def thresholds(params: TestParams) -> np.ndarray:
    return np.array([threshold(l, params) for l in range(params.level_cap + 1)])


def run_test(half1: CoeffSeq, params: TestParams, stats: np.ndarray | None = None) -> TestReport:
    cap = params.level_cap
    if cap > half1.J_max:
        raise ValueError(f"test needs levels up to {cap}, J_max is {half1.J_max}")
    T = level_statistics(half1, params.sigma_sq, cap) if stats is None else stats[: cap + 1]
    t = thresholds(params)
    return TestReport(tuple(range(cap + 1)), tuple(T.tolist()), tuple(t.tolist()), int(np.any(T > t)))


run_test.__test__ = False


def two_point_smoothness(half1: CoeffSeq, params: TestParams) -> float:
    return params.s1 if run_test(half1, params).decision else params.s2


def separation_radius(alpha: float, s1: float, L: float, n: float, m: int) -> float:
    """``C_alpha (n/m)^(-s1/(1/2 + 2 s1))`` with the adaptive-procedure constant."""
    return separation_constant(alpha, s1, L) * (n / m) ** (-s1 / (0.5 + 2 * s1))


def separation_constant(alpha: float, s1: float, L: float) -> float:
    return 24 * (2**s1 * L / math.sqrt(1 - 2 ** (-2 * s1)) + 19) * 2 ** (s1 / (1 + 2 * s1)) / math.sqrt(alpha)


def mn_exponent(p: float, s1: float) -> float:
    return 2 * s1 * (0.5 - p * (1 + 2 * s1)) / ((1 + 2 * s1) * (0.5 + 2 * s1))


def mn_alpha(n: float, p: float, s1: float) -> float:
    """``M_n``; the test runs at level ``alpha = 1 / M_n``."""
    e = mn_exponent(p, s1)
    if e < -1e-12:
        raise ValueError(f"s1={s1} is above 1/(4p) - 1/2 = {1 / (4 * p) - 0.5}: M_n would not grow")
    return n ** max(e, 0.0)


def regime_alpha(n: float, p: float, s1: float) -> tuple[float, bool]:
    """``(alpha, in_regime)``; outside the regime ``M_n`` is clamped to 1."""
    e = mn_exponent(p, s1)
    if e < 0:
        return 1.0, False
    return 1.0 / n**e, True


@dataclass(frozen=True)
class SmoothnessGrid:
    points: tuple[float, ...]

    @classmethod
    def build(cls, s1: float, s2: float, n: float) -> "SmoothnessGrid":
        """``{s1, s1 + 1/log2 n, ...}`` plus ``s2`` as the last point."""
        if s2 < s1:
            raise ValueError("need s1 <= s2")
        step = 1 / math.log2(n)
        k = _floor((s2 - s1) / step)
        pts = [s1 + i * step for i in range(k + 1)]
        if s2 - pts[-1] > 1e-9:
            pts.append(s2)
        else:
            pts[-1] = s2
        return cls(tuple(pts))

    @property
    def lo(self) -> float:
        return self.points[0]

    @property
    def hi(self) -> float:
        return self.points[-1]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def grid_smoothness(half1: CoeffSeq, grid: SmoothnessGrid, L: float, n: float, m: int,
                    p: float | None = None) -> float:
    """Largest grid point ``s`` whose null is retained against every smaller grid point ``t``."""
    pts = grid.points
    if len(pts) == 1:
        return pts[0]
    p = math.log(m) / math.log(n) if p is None else p
    sigma_sq = 2 * m / n
    top = max(TestParams(t, pts[-1], L, 1.0, n, m).level_cap for t in pts[:-1])
    stats = level_statistics(half1, sigma_sq, min(top, half1.J_max)) if top <= half1.J_max else None
    if stats is None:
        raise ValueError(f"test needs levels up to {top}, J_max is {half1.J_max}")
    alphas = [regime_alpha(n, p, t)[0] for t in pts]
    best = pts[0]
    for b, s in enumerate(pts[1:], start=1):
        if all(run_test(half1, TestParams(pts[a], s, L, alphas[a], n, m), stats).decision == 0 for a in range(b)):
            best = s
    return best


@dataclass(frozen=True)
class SelfSimEstimate:
    s_hat: float
    block_estimates: dict = field(default_factory=dict)


def selfsim_smoothness(half1: CoeffSeq, spec: SelfSimSpec, grid: SmoothnessGrid, n: float, m: int,
                       *, detail: bool = False):
    """Block-maximum smoothness estimate on a self-similar signal.

    Coefficients below ``sqrt(2m/n) sqrt(2 ln n)`` are discarded.  For each
    block ``[j, rho j]`` the largest surviving ``|X_lk|`` gives
    ``-log2|X_lk| / l - 1/2``; the minimum over blocks, clipped to the grid
    range, is returned.
    """
    lam = math.sqrt(2 * m / n) * math.sqrt(2 * math.log(n))
    J_use = min(_floor(math.log2(n / (2 * m))), half1.J_max)
    est = {}
    for j in range(max(spec.j0, 1), _floor(J_use / spec.rho) + 1):
        hi = min(_floor(spec.rho * j), J_use)
        seg = np.abs(half1.values[2**j : 2 ** (hi + 1)])
        i = int(np.argmax(seg))
        if seg[i] <= lam:
            continue
        l = (i + 2**j).bit_length() - 1
        est[j] = -math.log2(seg[i]) / l - 0.5
    s_hat = min(est.values()) if est else grid.hi
    s_hat = min(max(s_hat, grid.lo), grid.hi)
    return SelfSimEstimate(s_hat, est) if detail else s_hat
