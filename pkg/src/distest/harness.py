"""Monte Carlo experiments: risk and bit accounting, rate fits, test calibration, hard instances."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .coeffs import CoeffSeq, haar_sup_norm, l2_norm_sq, level_masses
from .estimators import (EstimateReport, adaptive_l2_grid, adaptive_l2_twopoint, adaptive_linf_selfsim,
                         count_l2, count_linf, global_adaptive_s0, ifloor, nonadaptive_l2,
                         nonadaptive_linf)
from .model import LocalSample, ModelConfig, derive_seed, rng_stream, simulate, split_for
from .signals import (BesovSpec, SelfSimSpec, critical_level, delta_tilde, gen_besov_random,
                      gen_hard_l2, gen_hard_linf, gen_self_similar, gen_separated)
from .smoothness import SmoothnessGrid, TestParams, level_statistics, run_test, separation_radius

SCHEMA_VERSION = 1
METHODS = ("l2", "linf", "oracle-s0", "adaptive2", "adaptive-grid", "selfsim")
RISK_NORMS = ("L2sq", "Linf")
CSV_COLUMNS = ("n", "m", "method", "risk", "risk_se", "bits_mean", "bits_max", "slope", "slope_se")


@dataclass(frozen=True)
class ExperimentSpec:
    method: str
    signal: dict
    n_grid: tuple[int, ...]
    reps: int
    risk_norm: str = "L2sq"
    seed: int = 0
    m: int | None = None
    p: float | None = None
    params: dict = field(default_factory=dict)
    J_max: int | None = None
    output: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.risk_norm not in RISK_NORMS:
            raise ValueError(f"risk_norm must be one of {RISK_NORMS}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.n_grid or any(n < 4 or n & (n - 1) for n in self.n_grid):
            raise ValueError("every n in the grid must be a power of two >= 4")
        if (self.m is None) == (self.p is None):
            raise ValueError("give exactly one of m and p")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))

    def machines(self, n: int) -> int:
        return int(self.m) if self.m is not None else max(1, round(n**self.p))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d["n_grid"] = tuple(d["n_grid"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grid"] = list(self.n_grid)
        return d


@dataclass
class RiskReport:
    method: str
    rows: list[dict]
    slope: float | None = None
    slope_se: float | None = None
    warnings: list[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "method": self.method, "rows": self.rows,
                "slope": self.slope, "slope_se": self.slope_se, "warnings": self.warnings}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema_version')}")
        return cls(d["method"], d["rows"], d["slope"], d["slope_se"], d["warnings"])


# signals and methods


def make_signal(sig: dict, J_max: int, rng, n: float, m: int) -> CoeffSeq:
    kind = sig.get("kind", "zero")
    if kind == "zero":
        return CoeffSeq.zeros(J_max)
    if kind == "besov":
        spec = BesovSpec(sig["s"], sig.get("L", 1.0), sig.get("norm", "B2inf"))
        return gen_besov_random(spec, sig.get("fill", 1.0), rng, J_max)
    if kind == "selfsim":
        spec = SelfSimSpec(sig["s"], sig.get("L", 1.0), sig["eps"], sig["j0"], sig["rho"])
        return gen_self_similar(spec, rng, J_max, spread=sig.get("spread", 0.0))
    if kind == "separated":
        s1, L = sig["s1"], sig.get("L", 1.0)
        radius = sig.get("radius") or separation_radius(sig["alpha"], s1, L, n, m)
        return gen_separated(s1, sig["s2"], L, radius, J_max, rng)
    if kind == "hard-l2":
        return gen_hard_l2(sig["s"], sig.get("L", 1.0), n, m, [sig["budget"]] * m, rng, J_max)
    if kind == "hard-linf":
        return gen_hard_linf(sig["s"], sig.get("L", 1.0), n, m, sig["budget"], sig.get("k", 1), J_max)
    if kind == "file":
        f = CoeffSeq.from_json(Path(sig["path"]).read_text())
        if f.J_max != J_max:
            raise ValueError(f"signal file has J_max={f.J_max}, experiment uses {J_max}")
        return f
    raise ValueError(f"unknown signal kind {kind!r}")


def budget_for(method: str, n: float, params: dict) -> float:
    """Explicit ``budget`` or ``budget_factor`` times the sufficient budget ``count * log2 n``."""
    if "budget" in params:
        return float(params["budget"])
    count = count_l2(n, params["s"]) if method == "l2" else count_linf(n, params["s"])
    return params.get("budget_factor", 1.0) * count * math.log2(n)


def default_J_max(method: str, n: float, m: int, params: dict) -> int:
    half = ifloor(math.log2(n / (2 * m))) if n >= 4 * m else 1
    base = math.ceil(math.log2(n) / 2) + 2
    if method in ("adaptive2", "adaptive-grid"):
        s1 = params["s1"]
        return max(base, ifloor(math.log2(n / (2 * m)) / (2 * s1 + 0.5)))
    if method == "selfsim":
        return max(half, 1)
    return base


def run_method(method: str, samples: Sequence[LocalSample], cfg: ModelConfig, params: dict) -> EstimateReport:
    P = params
    if method in ("l2", "linf"):
        fn = nonadaptive_l2 if method == "l2" else nonadaptive_linf
        return fn(samples, P["s"], P.get("L", 1.0), budget_for(method, cfg.n, P), cfg)
    if method == "oracle-s0":
        return global_adaptive_s0(samples, P["s0"], P["s_max"], cfg, kappa=P.get("kappa", 16.0))
    if method == "adaptive2":
        return adaptive_l2_twopoint(samples, P["s1"], P["s2"], P.get("L", 1.0), P.get("p"), cfg)
    if method == "adaptive-grid":
        return adaptive_l2_grid(samples, P["s1"], P["s2"], P.get("L", 1.0), P.get("p"), cfg)
    if method == "selfsim":
        spec = SelfSimSpec(P.get("s", P["s2"]), P.get("L", 1.0), P["eps"], P["j0"], P["rho"])
        grid = SmoothnessGrid.build(P["s1"], P["s2"], cfg.n)
        return adaptive_linf_selfsim(samples, spec, grid, cfg)
    raise ValueError(f"unknown method {method!r}")


def risk_of(fhat: CoeffSeq, f0: CoeffSeq, norm: str) -> float:
    diff = fhat - f0
    return l2_norm_sq(diff) if norm == "L2sq" else haar_sup_norm(diff)


# risk runs


def _map(fn: Callable, items, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_grid_point(spec: ExperimentSpec, index: int, workers: int = 1) -> tuple[dict, list[str]]:
    n = spec.n_grid[index]
    m = spec.machines(n)
    J = spec.J_max if spec.J_max is not None else default_J_max(spec.method, n, m, spec.params)
    gseed = derive_seed(spec.seed, index)
    cfg = ModelConfig(n, m, J, gseed)

    def one(r):
        f0 = make_signal(spec.signal, J, rng_stream(gseed, 0, r, "signal"), n, m)
        rep = run_method(spec.method, simulate(f0, cfg, r), cfg, spec.params)
        if np.any(rep.ledger.counts > rep.cap):
            raise AssertionError(f"bit cap violated at n={n}, rep={r}")
        return risk_of(rep.fhat, f0, spec.risk_norm), rep.ledger.counts.copy(), rep.warnings

    out = _map(one, range(spec.reps), workers)
    risks = np.array([o[0] for o in out])
    bits = np.stack([o[1] for o in out])
    se = float(risks.std(ddof=1) / math.sqrt(spec.reps)) if spec.reps > 1 else 0.0
    row = {"n": n, "m": m, "method": spec.method, "risk": float(risks.mean()), "risk_se": se,
           "bits_mean": float(bits.mean()), "bits_max": int(bits.max())}
    warnings = sorted({w for o in out for w in o[2]})
    return row, [f"n={n}: {w}" for w in warnings]


def run_risk(spec: ExperimentSpec, workers: int = 1, x: str = "log2n") -> RiskReport:
    rows, warnings = [], []
    for i in range(len(spec.n_grid)):
        row, w = run_grid_point(spec, i, workers)
        rows.append(row)
        warnings.extend(w)
    slope = se = None
    if len(rows) >= 3:
        slope, se = fit_rate(rows, x=x)
    return RiskReport(spec.method, rows, slope, se, warnings)


def _xvalue(n: float, x: str) -> float:
    if x == "log2n":
        return math.log2(n)
    if x == "log2(n/log2n)":
        return math.log2(n / math.log2(n))
    raise ValueError(f"unknown abscissa {x!r}")


def fit_rate(rows: Sequence[dict], x: str = "log2n") -> tuple[float, float]:
    """OLS slope of ``log2(risk)`` against ``log2(n)`` (or ``log2(n / log2 n)``) with its standard error."""
    if len(rows) < 3:
        raise ValueError("need at least 3 grid points")
    xs = np.array([_xvalue(r["n"], x) for r in rows])
    ys = np.log2([r["risk"] for r in rows])
    sxx = float(((xs - xs.mean()) ** 2).sum())
    if sxx == 0:
        raise ValueError("degenerate grid: all n equal")
    slope = float(((xs - xs.mean()) * (ys - ys.mean())).sum() / sxx)
    resid = ys - ys.mean() - slope * (xs - xs.mean())
    se = math.sqrt(float(resid @ resid) / (len(rows) - 2) / sxx)
    return slope, se


# reports


def emit(report: RiskReport, path: str | Path | None, fmt: str = "csv") -> str:
    """Write ``report`` as csv or json; returns the text (written to ``path`` if given)."""
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in report.rows:
            w.writerow({**{k: row[k] for k in CSV_COLUMNS[:7]}, "slope": report.slope, "slope_se": report.slope_se})
        text = buf.getvalue()
    else:
        raise ValueError("fmt must be 'csv' or 'json'")
    if path is not None:
        Path(path).write_text(text)
    return text


# smoothness test calibration


def local_half(f0: CoeffSeq, n: float, m: int, seed: int, replicate: int) -> CoeffSeq:
    """First half sample of machine 0, drawn through the full simulate-then-split path."""
    sd = math.sqrt(m / n)
    z = rng_stream(seed, 0, replicate, "noise").normal(f0.values.size)
    smp = LocalSample(0, CoeffSeq(f0.values + sd * z), sd, replicate)
    return split_for(smp, seed).half1


def calibrate_test(alpha: float, n: float, m: int, s1: float, s2: float, L: float, reps: int, seed: int,
                   *, separation: float | None = None, workers: int = 1) -> dict:
    """Empirical type-I error at ``f0 = 0`` and type-II error at a separated alternative."""
    params = TestParams(s1, s2, L, alpha, n, m)
    J = max(params.level_cap, 1)
    sep = separation_radius(alpha, s1, L, n, m) if separation is None else separation
    alt = gen_separated(s1, s2, L, sep, J, rng_stream(seed, 0, 0, "signal"))
    null = CoeffSeq.zeros(J)

    def decide(args):
        f0, r = args
        return run_test(local_half(f0, n, m, seed, r), params).decision

    t1 = _map(decide, [(null, r) for r in range(reps)], workers)
    t2 = _map(decide, [(alt, reps + r) for r in range(reps)], workers)
    return {"alpha": alpha, "n": n, "m": m, "s1": s1, "s2": s2, "type1_hat": float(np.mean(t1)),
            "type2_hat": 1.0 - float(np.mean(t2)), "separation": sep, "reps": reps, "seed": seed}


def concentration_frequency(n: float, j: int, delta: float, reps: int, seed: int,
                            f0: CoeffSeq | None = None) -> float:
    """Frequency of ``|T(l) - ||P_l f||^2| >= 4 sqrt((3/delta)(2^((j+l)/2)/n^2 + 2^(l/4)||P_l f||^2/n))`` for some ``l <= j``.

    Observations carry noise variance ``1/n`` and ``T`` is centered accordingly.
    """
    f0 = CoeffSeq.zeros(j) if f0 is None else f0
    masses = level_masses(f0)
    proj = np.concatenate([[masses[0]], masses[2 : j + 2]])
    l = np.arange(j + 1)
    bound = 4 * np.sqrt((3 / delta) * (2.0 ** ((j + l) / 2) / n**2 + 2.0 ** (l / 4) * proj / n))
    hits = 0
    for r in range(reps):
        x = f0.values + rng_stream(seed, 0, r, "test").normal(f0.values.size) / math.sqrt(n)
        T = level_statistics(CoeffSeq(x), 1 / n, j)
        hits += bool(np.any(np.abs(T - proj) >= bound))
    return hits / reps


# hard-instance indistinguishability


def logcosh(y: np.ndarray) -> np.ndarray:
    a = np.abs(y)
    return a + np.log1p(np.exp(-2 * a)) - math.log(2)


def log_likelihood_ratio(x: np.ndarray, amp: float, var: float) -> float:
    """``log Z`` for the sign mixture ``x_k = amp beta_k + N(0, var)`` against pure noise."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(-amp**2 / (2 * var) + logcosh(amp * x / var)))


def log_likelihood_ratio_enum(x: np.ndarray, amp: float, var: float) -> float:
    """Same quantity by averaging the Gaussian likelihood ratio over every sign vector."""
    x = np.asarray(x, dtype=float)
    K = x.size
    if K > 16:
        raise ValueError("enumeration is limited to 16 coordinates")
    betas = np.array(list(itertools.product((-1.0, 1.0), repeat=K)))
    means = amp * betas
    ll = -((x - means) ** 2).sum(axis=1) / (2 * var) + (x**2).sum() / (2 * var)
    return float(logsumexp(ll) - K * math.log(2))


def log_likelihood_ratio_mixture(x: np.ndarray, amp: float, var: float) -> float:
    """Same quantity from per-coordinate two-component normal mixture densities."""
    from scipy.stats import norm

    x = np.asarray(x, dtype=float)
    sd = math.sqrt(var)
    both = np.stack([norm.logpdf(x, amp, sd), norm.logpdf(x, -amp, sd)])
    return float(np.sum(logsumexp(both, axis=0) - math.log(2) - norm.logpdf(x, 0, sd)))


@dataclass(frozen=True)
class IndistResult:
    type1: float
    type2: float
    delta: float
    j_n: int
    reps: int

    @property
    def total(self) -> float:
        return self.type1 + self.type2


def run_indistinguishability(n: float, m: int, s1: float, s2: float, p: float | None, budgets,
                             reps: int, seed: int, *, variant: str = "l2") -> IndistResult:
    """Likelihood-ratio test ``1{Z > 1}`` between pure noise and the sign-pattern hard class on one machine."""
    if not s1 < s2:
        raise ValueError("need s1 < s2")
    budget = float(np.min(np.atleast_1d(budgets)))
    d = delta_tilde(n, m, budget, s1, variant=variant, p=p)
    jn = critical_level(d, s1)
    K, amp, var = 2**jn, math.sqrt(d), m / n
    sd = math.sqrt(var)
    rej0 = acc1 = 0
    for r in range(reps):
        z0 = rng_stream(seed, 0, r, "noise").normal(K)
        rej0 += log_likelihood_ratio(sd * z0, amp, var) > 0
        beta = rng_stream(seed, 0, r, "signal").signs(K)
        z1 = rng_stream(seed, 1, r, "noise").normal(K)
        acc1 += log_likelihood_ratio(amp * beta + sd * z1, amp, var) <= 0
    return IndistResult(rej0 / reps, acc1 / reps, d, jn, reps)
