"""Test signals: random Besov-ball members, self-similar signals, hard instances."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coeffs import (CoeffSeq, besov_2inf_norm, besov_infinf_norm, block,
                     dist_to_B2inf_ball)
from .model import RandomStream

NORM_KINDS = ("B2inf", "BinfInf")


@dataclass(frozen=True)
class BesovSpec:
    s: float
    L: float
    norm_kind: str = "B2inf"

    def __post_init__(self):
        if self.s <= 0 or self.L <= 0:
            raise ValueError("s and L must be positive")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}")

    def norm(self, f: CoeffSeq) -> float:
        if self.norm_kind == "B2inf":
            return besov_2inf_norm(f, self.s)
        return besov_infinf_norm(f, self.s)

    def contains(self, f: CoeffSeq, rtol: float = 1e-12) -> bool:
        return self.norm(f) <= self.L * (1 + rtol)


@dataclass(frozen=True)
class SelfSimSpec:
    s: float
    L: float
    eps: float
    j0: int
    rho: float

    def __post_init__(self):
        if self.s <= 0 or self.L <= 0:
            raise ValueError("s and L must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.j0 < 0 or self.rho <= 1:
            raise ValueError("need j0 >= 0 and rho > 1")


def gen_besov_random(spec: BesovSpec, fill: float, rng: RandomStream, J_max: int) -> CoeffSeq:
    """Deterministic amplitude profile at ``fill * L`` with independent random signs."""
    if not 0 < fill <= 1:
        raise ValueError("fill must lie in (0, 1]")
    s, L = spec.s, spec.L
    size = 2 ** (J_max + 1)
    j = np.concatenate([[0], np.repeat(np.arange(J_max + 1), 2 ** np.arange(J_max + 1))])
    if spec.norm_kind == "BinfInf":
        amp = fill * L * 2.0 ** (-j * (s + 0.5))
    else:
        amp = fill * L * 2.0 ** (-j * s) / np.sqrt(2.0**j)
    amp[0] = fill * L
    return CoeffSeq(amp * rng.signs(size))


def solve_delta_n(n: float, m: int, budgets: Sequence[float], s: float, *,
                  tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Fixed point of ``d = min{m/(n log n), m/(n sum_i [d^(1/(1+2s)) B_i log n ^ 1])}``.

    The map is non-increasing in ``d`` with log-slope at most ``1/(1+2s)``,
    so iterating it contracts in log scale.
    """
    budgets = np.asarray(budgets, dtype=float)
    if n < 4 or m < 1:
        raise ValueError("need n >= 4 and m >= 1")
    if budgets.shape != (m,) or np.any(budgets <= 0):
        raise ValueError("need m positive budgets")
    logn = math.log2(n)
    cap = m / (n * logn)

    def step(d):
        bracket = np.minimum(d ** (1 / (1 + 2 * s)) * budgets * logn, 1.0)
        return min(cap, m / (n * float(bracket.sum())))

    return _iterate(step, cap, tol, max_iter)


def solve_delta_bar(n: float, m: int, budget: float, s: float, *,
                    tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Fixed point of ``d = min{m/(n log m), 1/(n [d^(1/(1+2s)) B ^ 1] log m)}``."""
    if m < 2:
        raise ValueError("need m >= 2 (log m appears in a denominator)")
    if budget <= 0:
        raise ValueError("budget must be positive")
    logm = math.log2(m)
    cap = m / (n * logm)

    def step(d):
        return min(cap, 1.0 / (n * min(d ** (1 / (1 + 2 * s)) * budget, 1.0) * logm))

    return _iterate(step, cap, tol, max_iter)


def _iterate(step, start, tol, max_iter):
    d = start
    for _ in range(max_iter):
        nxt = step(d)
        if abs(nxt - d) <= tol * d:
            return nxt
        d = nxt
    raise RuntimeError("fixed-point iteration did not converge")


def delta_tilde(n: float, m: int, budget: float, s1: float, *, variant: str = "linf",
                eps3: float | None = None, p: float | None = None) -> float:
    """Amplitude level of the local indistinguishability class.

    ``variant="linf"`` caps ``delta_bar`` by ``m/n``; ``variant="l2"`` caps it by
    ``(n/m)^(-(1+2 s1)/(1/2+2 s1)) n^(-eps3)``, with ``eps3`` defaulting to half
    of its admissible upper bound ``(p(1+2 s1) - 1/2)/(1/2 + 2 s1)``.
    """
    dbar = solve_delta_bar(n, m, budget, s1)
    if variant == "linf":
        return min(dbar, m / n)
    if variant != "l2":
        raise ValueError("variant must be 'l2' or 'linf'")
    if eps3 is None:
        p = math.log(m) / math.log(n) if p is None else p
        upper = (p * (1 + 2 * s1) - 0.5) / (0.5 + 2 * s1)
        eps3 = max(upper, 0.0) / 2
    return min(dbar, (n / m) ** (-(1 + 2 * s1) / (0.5 + 2 * s1)) * n ** (-eps3))


def critical_level(delta: float, s: float) -> int:
    return int(math.floor(math.log2(1 / delta) / (1 + 2 * s) + 1e-12))


def gen_hard_l2(s: float, L: float, n: float, m: int, budgets: Sequence[float],
                signs, J_max: int, *, delta: float | None = None) -> CoeffSeq:
    """Sign-pattern signal ``L beta_k delta^(1/2)`` on the critical level only.

    ``signs`` is a +-1 array of length ``2**j_n`` or a :class:`RandomStream`.
    """
    d = solve_delta_n(n, m, budgets, s) if delta is None else delta
    jn = critical_level(d, s)
    if jn > J_max:
        raise ValueError(f"critical level {jn} exceeds J_max={J_max}")
    if isinstance(signs, RandomStream):
        beta = signs.signs(2**jn)
    else:
        beta = np.asarray(signs, dtype=float)
        if beta.shape != (2**jn,) or not np.all(np.abs(beta) == 1):
            raise ValueError(f"need {2**jn} signs in {{-1, +1}}")
    v = np.zeros(2 ** (J_max + 1))
    v[2**jn : 2 ** (jn + 1)] = L * beta * math.sqrt(d)
    f = CoeffSeq(v)
    assert besov_2inf_norm(f, s) <= L * (1 + 1e-12)
    return f


def gen_hard_linf(s: float, L: float, n: float, m: int, budget: float, k_choice: int,
                  J_max: int, *, delta: float | None = None) -> CoeffSeq:
    """Single bump ``delta_tilde^(1/2) psi_{j_n, k}`` (Haar bumps have disjoint supports)."""
    d = delta_tilde(n, m, budget, s, variant="linf") if delta is None else delta
    jn = critical_level(d, s)
    if jn > J_max:
        raise ValueError(f"critical level {jn} exceeds J_max={J_max}")
    if not 1 <= k_choice <= 2**jn:
        raise IndexError(f"k_choice must lie in 1..{2**jn}")
    v = np.zeros(2 ** (J_max + 1))
    v[2**jn + k_choice - 1] = math.sqrt(d)
    return CoeffSeq(v)


def self_similar_violation(f: CoeffSeq, spec: SelfSimSpec) -> int | None:
    """First block start ``j`` whose block ``[j, rho j]`` has norm below ``eps L``.

    Returns ``-1`` when ``f`` is outside ``B^s_inf,inf(L)`` and ``None`` when ``f``
    is self-similar on every checkable block.
    """
    if besov_infinf_norm(f, spec.s) > spec.L * (1 + 1e-12):
        return -1
    last = int(math.floor(f.J_max / spec.rho))
    for j in range(spec.j0, last + 1):
        hi = int(math.floor(spec.rho * j))
        if _wavelet_infinf(block(f, j, hi), spec.s) < spec.eps * spec.L * (1 - 1e-12):
            return j
    return None


def _wavelet_infinf(f: CoeffSeq, s: float) -> float:
    return max(2.0 ** (j * (s + 0.5)) * float(np.max(np.abs(f.level(j)))) for j in range(f.J_max + 1))


def is_self_similar(f: CoeffSeq, spec: SelfSimSpec) -> bool:
    if int(math.floor(f.J_max / spec.rho)) < spec.j0:
        raise ValueError("J_max too small to check any block")
    return self_similar_violation(f, spec) is None


def gen_self_similar(spec: SelfSimSpec, rng: RandomStream, J_max: int, *, spread: float = 0.0) -> CoeffSeq:
    """One spine coefficient ``eps L 2^(-j(s+1/2))`` per level plus signed fill.

    Non-spine coefficients have magnitude ``L 2^(-j(s+1/2)) u`` with ``u`` uniform
    on ``[1 - spread, 1]``; ``spread = 0`` puts every non-spine coefficient on
    the ball boundary.
    """
    if not 0 <= spread <= 1:
        raise ValueError("spread must lie in [0, 1]")
    s, L, eps = spec.s, spec.L, spec.eps
    v = np.empty(2 ** (J_max + 1))
    v[0] = eps * L * rng.signs()
    for j in range(J_max + 1):
        amp = L * 2.0 ** (-j * (s + 0.5))
        mags = amp * (1 - spread * rng.uniform(2**j))
        spine = int(rng.integers(0, 2**j))
        mags[spine] = eps * amp
        v[2**j : 2 ** (j + 1)] = mags * rng.signs(2**j)
    return CoeffSeq(v)


def gen_separated(s1: float, s2: float, L: float, radius: float, J_max: int,
                  rng: RandomStream | None = None) -> CoeffSeq:
    """Scaled ``B^{s1}_{2,inf}`` profile at L2 distance ``radius`` from the ``B^{s2}_{2,inf}(L)`` ball.

    Level ``j`` carries mass ``(c L 2^(-j s1))**2`` spread evenly over its
    coefficients (random signs if ``rng`` is given); ``c`` is found by bisection.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    j = np.concatenate([[0], np.repeat(np.arange(J_max + 1), 2 ** np.arange(J_max + 1))])
    shape = L * 2.0 ** (-j * s1) / np.sqrt(2.0**j)
    shape[0] = L
    if rng is not None:
        shape = shape * rng.signs(shape.size)

    def dist(c):
        return dist_to_B2inf_ball(CoeffSeq(c * shape), s2, L)

    lo, hi = 0.0, 1.0
    while dist(hi) < radius:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dist(mid) < radius:
            lo = mid
        else:
            hi = mid
    return CoeffSeq(hi * shape)
