"""Distributed estimation procedures.

Every procedure follows the same shape: each machine picks a contiguous range
of flat indices, sends those coefficients through the finite-precision channel
(bits recorded in a capped ledger), and the center averages what it received.
Averages are accumulated in ascending machine order so results are
reproducible bit for bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import BudgetLedger, EncoderConfig, decode_batch, encode_batch
from .coeffs import CoeffSeq
from .model import LocalSample, ModelConfig, split_for
from .signals import SelfSimSpec
from .smoothness import (SmoothnessGrid, TestParams, grid_smoothness, regime_alpha,
                         selfsim_smoothness, two_point_smoothness)

LEPSKI_KAPPA = 16.0


def ifloor(x: float) -> int:
    """Floor that tolerates round-off just below an integer (``4096 ** (1/3)`` is 15.999...)."""
    return math.floor(x + 1e-9 * max(1.0, abs(x)))


def count_l2(n: float, s: float) -> int:
    return ifloor(n ** (1 / (1 + 2 * s)))


def count_linf(n: float, s: float) -> int:
    return ifloor((n / math.log2(n)) ** (1 / (1 + 2 * s)))


@dataclass
class EstimateReport:
    fhat: CoeffSeq
    ledger: BudgetLedger
    counts: np.ndarray
    cap: int
    s_hat: np.ndarray | None = None
    N_tilde: int | None = None
    m_sizes: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def bits(self) -> np.ndarray:
        return self.ledger.counts

    def to_dict(self) -> dict:
        return {
            "fhat": self.fhat.to_dict(),
            "bits": self.ledger.counts.tolist(),
            "cap": self.cap,
            "counts": self.counts.tolist(),
            "s_hat": None if self.s_hat is None else self.s_hat.tolist(),
            "N_tilde": self.N_tilde,
            "m_sizes": None if self.m_sizes is None else self.m_sizes.tolist(),
            "warnings": list(self.warnings),
            "extra": dict(self.extra),
        }


def median_count(counts: Sequence[int]) -> int:
    """Lower median: the ``ceil(m/2)``-th smallest count."""
    c = np.sort(np.asarray(counts, dtype=np.int64))
    if c.size == 0:
        raise ValueError("need at least one count")
    return int(c[(c.size + 1) // 2 - 1])


@dataclass(frozen=True)
class GroupLayout:
    """Machine groups and the flat-index range each group owns (1-based, half-open on the left)."""

    eta: int
    block: int
    total: int
    group_of: tuple[int, ...]

    def owned(self, group: int) -> tuple[int, int]:
        """Flat indices ``(lo, hi]`` owned by ``group`` (1-based), clipped to the transmitted range."""
        lo = min((group - 1) * self.block, self.total)
        return lo, min(group * self.block, self.total)

    def members(self, group: int) -> list[int]:
        return [i for i, g in enumerate(self.group_of) if g == group]


def group_layout(m: int, eta: int, block: int, total: int) -> GroupLayout:
    """Machine ``i`` (1-based) joins group ``ceil(i eta / m)``."""
    if not 1 <= eta <= m:
        raise ValueError(f"need 1 <= eta <= m, got eta={eta}, m={m}")
    groups = tuple(-(-i * eta // m) for i in range(1, m + 1))
    return GroupLayout(eta, block, min(total, eta * block), groups)


def eta_l2(n: float, m: int, s: float, B: float) -> int:
    raw = (n ** (1 / (1 + 2 * s)) * math.log2(n) / B) ** ((1 + 2 * s) / (2 + 2 * s))
    return min(max(ifloor(raw), 1), m)


def eta_linf(n: float, m: int, s: float, B: float, L: float) -> int:
    raw = (L**2 * n * math.log2(n) ** (2 * s) / B ** (1 + 2 * s)) ** (1 / (2 + 2 * s))
    return max(min(ifloor(raw), m), 1)


def _check(samples: Sequence[LocalSample], cfg: ModelConfig):
    if len(samples) != cfg.m:
        raise ValueError(f"expected {cfg.m} samples, got {len(samples)}")
    for i, smp in enumerate(samples):
        if smp.machine != i or smp.obs.J_max != cfg.J_max:
            raise ValueError("samples must be in machine order and match cfg.J_max")


def _size_check(count: int, cfg: ModelConfig):
    if count > 2 ** (cfg.J_max + 1):
        raise ValueError(f"procedure needs {count} coefficients; J_max={cfg.J_max} holds {2 ** (cfg.J_max + 1)}")


def _transmit(values: Sequence[np.ndarray], ranges: Sequence[tuple[int, int]], enc: EncoderConfig,
              ledger: BudgetLedger, size: int, upto: int | None = None):
    """Send ``values[i][lo:hi]`` from every machine; return summed decodes, contributor counts."""
    acc = np.zeros(size)
    cnt = np.zeros(size, dtype=np.int64)
    for i, (lo, hi) in enumerate(ranges):
        if hi <= lo:
            continue
        packed = encode_batch(values[i][lo:hi], enc)
        ledger.record(i, packed)
        y = decode_batch(packed, enc)
        end = hi if upto is None else min(hi, upto)
        if end > lo:
            acc[lo:end] += y[: end - lo]
            cnt[lo:end] += 1
    return acc, cnt


def _average(acc: np.ndarray, cnt: np.ndarray) -> np.ndarray:
    return np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)


def _nonadaptive(samples, cfg, eta, total, B, D):
    enc = EncoderConfig(cfg.n, D)
    c = enc.max_bits
    if B < c:
        raise ValueError(f"budget {B} cannot carry one {c}-bit message")
    _check(samples, cfg)
    layout = group_layout(cfg.m, eta, ifloor(B / c), total)
    _size_check(layout.total, cfg)
    ranges = [layout.owned(g) for g in layout.group_of]
    ledger = BudgetLedger(cfg.m, cap=B)
    acc, cnt = _transmit([s.obs.values for s in samples], ranges, enc, ledger, 2 ** (cfg.J_max + 1))
    counts = np.array([hi - lo for lo, hi in ranges])
    return EstimateReport(CoeffSeq(_average(acc, cnt)), ledger, counts, int(B),
                          m_sizes=cnt[: layout.total].copy(),
                          extra={"eta": layout.eta, "block": layout.block, "total": layout.total})


def nonadaptive_l2(samples: Sequence[LocalSample], s: float, L: float, B: float, cfg: ModelConfig,
                   *, D: float = 0.5) -> EstimateReport:
    """Grouped transmission for squared L2 risk.

    Group sizes follow ``eta = (floor((n^(1/(1+2s)) log n / B)^((1+2s)/(2+2s))) v 1) ^ m``
    and each machine sends ``floor(B / message_bits)`` coefficients.
    """
    eta = eta_l2(cfg.n, cfg.m, s, B)
    enc = EncoderConfig(cfg.n, D)
    total = min(eta * ifloor(B / enc.max_bits), count_l2(cfg.n, s))
    return _nonadaptive(samples, cfg, eta, total, B, D)


def nonadaptive_linf(samples: Sequence[LocalSample], s: float, L: float, B: float, cfg: ModelConfig,
                     *, D: float = 0.5) -> EstimateReport:
    eta = eta_linf(cfg.n, cfg.m, s, B, L)
    enc = EncoderConfig(cfg.n, D)
    total = min(eta * ifloor(B / enc.max_bits), count_linf(cfg.n, s))
    return _nonadaptive(samples, cfg, eta, total, B, D)


def lepski_level(fbar: np.ndarray, J: int, noise_var: float, kappa: float = LEPSKI_KAPPA) -> int:
    """Smallest ``j`` with ``||fbar_{<=j'} - fbar_{<=j}||^2 <= kappa 2^j' noise_var`` for all ``j < j' <= J``.

    ``fbar`` is in flat order, so levels up to ``j`` occupy its first ``2^(j+1)`` slots.
    """
    energy = np.concatenate([[0.0], np.cumsum(fbar**2)])

    def upto(j):
        return energy[min(2 ** (j + 1), fbar.size)]

    for j in range(J + 1):
        if all(upto(jp) - upto(j) <= kappa * 2.0**jp * noise_var for jp in range(j + 1, J + 1)):
            return j
    return J


def global_adaptive_s0(samples: Sequence[LocalSample], s0: float, s_max: float, cfg: ModelConfig,
                       *, D: float = 0.5, kappa: float = LEPSKI_KAPPA) -> EstimateReport:
    """Every machine sends its first ``floor(n^(1/(1+2 s0)))`` coefficients; the center truncates by Lepski."""
    if not 0 < s0 < s_max:
        raise ValueError("need 0 < s0 < s_max")
    _check(samples, cfg)
    enc = EncoderConfig(cfg.n, D)
    N = count_l2(cfg.n, s0)
    _size_check(N, cfg)
    cap = N * enc.max_bits
    ledger = BudgetLedger(cfg.m, cap=cap)
    size = 2 ** (cfg.J_max + 1)
    acc, cnt = _transmit([s.obs.values for s in samples], [(0, N)] * cfg.m, enc, ledger, size)
    fbar = _average(acc, cnt)[:N]
    noise_var = float(np.mean([s.noise_sd**2 for s in samples])) / cfg.m
    J = ifloor(math.log2(cfg.n) / (1 + 2 * s0))
    j_hat = lepski_level(fbar, J, noise_var, kappa)
    out = np.zeros(size)
    keep = min(2 ** (j_hat + 1), N)
    out[:keep] = fbar[:keep]
    return EstimateReport(CoeffSeq(out), ledger, np.full(cfg.m, N), cap, m_sizes=cnt[:N].copy(),
                          extra={"j_hat": j_hat, "J": J})


def _local_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _adaptive(samples, cfg, selector: Callable, count_of: Callable, cap_count: int, D, warnings, workers):
    """Split, select smoothness on half 1, send ``count_of(s_hat)`` half-2 coefficients, median-aggregate."""
    _check(samples, cfg)
    enc = EncoderConfig(cfg.n, D)
    _size_check(cap_count, cfg)

    def local(smp):
        halves = split_for(smp, cfg.seed)
        s_hat = selector(halves.half1)
        return s_hat, count_of(s_hat), halves.half2.values

    results = _local_map(local, samples, workers)
    s_hat = np.array([r[0] for r in results])
    counts = np.array([r[1] for r in results], dtype=np.int64)
    if np.any(counts > cap_count):
        raise AssertionError("local count above the procedure cap")
    N_tilde = median_count(counts)
    cap = cap_count * enc.max_bits
    ledger = BudgetLedger(cfg.m, cap=cap)
    acc, cnt = _transmit([r[2] for r in results], [(0, int(k)) for k in counts], enc, ledger,
                         2 ** (cfg.J_max + 1), upto=N_tilde)
    m_sizes = cnt[:N_tilde].copy()
    if np.any(m_sizes == 0):
        raise AssertionError("empty contributor set below the median count")
    return EstimateReport(CoeffSeq(_average(acc, cnt)), ledger, counts, cap, s_hat=s_hat,
                          N_tilde=N_tilde, m_sizes=m_sizes, warnings=warnings)


def _regime(n, m, s1, s2, p):
    p = math.log(m) / math.log(n) if p is None else p
    warnings = []
    if s2 > 1 / (4 * p) - 0.5 + 1e-12:
        warnings.append(f"s2={s2} exceeds 1/(4p) - 1/2 = {1 / (4 * p) - 0.5:.4g}; outside the adaptive regime")
    alpha, ok = regime_alpha(n, p, s1)
    if not ok:
        warnings.append("M_n does not grow for s1 at this p; test run at alpha = 1")
    return p, alpha, warnings


def adaptive_l2_twopoint(samples: Sequence[LocalSample], s1: float, s2: float, L: float,
                         p: float | None, cfg: ModelConfig, *, D: float = 0.5,
                         workers: int = 1) -> EstimateReport:
    if cfg.m < 2:
        raise ValueError("need m >= 2")
    p, alpha, warnings = _regime(cfg.n, cfg.m, s1, s2, p)
    params = TestParams(s1, s2, L, alpha, cfg.n, cfg.m)
    return _adaptive(samples, cfg, lambda h: two_point_smoothness(h, params),
                     lambda s: count_l2(cfg.n, s), count_l2(cfg.n, s1), D, warnings, workers)


def adaptive_l2_grid(samples: Sequence[LocalSample], s1: float, s2: float, L: float,
                     p: float | None, cfg: ModelConfig, *, grid: SmoothnessGrid | None = None,
                     D: float = 0.5, workers: int = 1) -> EstimateReport:
    if cfg.m < 2:
        raise ValueError("need m >= 2")
    p, _, warnings = _regime(cfg.n, cfg.m, s1, s2, p)
    grid = SmoothnessGrid.build(s1, s2, cfg.n) if grid is None else grid
    return _adaptive(samples, cfg, lambda h: grid_smoothness(h, grid, L, cfg.n, cfg.m, p),
                     lambda s: count_l2(cfg.n, s), count_l2(cfg.n, grid.lo), D, warnings, workers)


def adaptive_linf_selfsim(samples: Sequence[LocalSample], spec: SelfSimSpec, grid: SmoothnessGrid,
                          cfg: ModelConfig, *, D: float = 0.5, workers: int = 1) -> EstimateReport:
    return _adaptive(samples, cfg, lambda h: selfsim_smoothness(h, spec, grid, cfg.n, cfg.m),
                     lambda s: count_linf(cfg.n, s), count_linf(cfg.n, grid.lo), D, [], workers)
