"""Wavelet coefficient sequences in the Haar sequence model.

A signal is stored as one flat array of length ``2**(J_max + 1)``.  Slot 0
holds the father (scaling) coefficient, and level ``j`` occupies the slice
``[2**j, 2**(j+1))``, so coefficient ``(j, k)`` (``k`` 1-based) sits at array
position ``2**j + k - 1`` and has flat index ``t = 2**j + k``.  The father
coefficient has flat index 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class CoeffSeq:
    """Immutable table of wavelet coefficients up to level ``J_max``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 1 or v.size < 2 or v.size & (v.size - 1):
            raise ValueError(f"coefficient array must have length 2**(J_max+1), got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficients must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    # construction

    @classmethod
    def zeros(cls, J_max: int) -> "CoeffSeq":
        if J_max < 0:
            raise ValueError("J_max must be >= 0")
        return cls(np.zeros(2 ** (J_max + 1)))

    @classmethod
    def from_levels(cls, father: float, levels: Sequence[Sequence[float]]) -> "CoeffSeq":
        if not levels:
            raise ValueError("at least level 0 is required")
        parts = [np.atleast_1d(np.asarray(father, dtype=float))]
        for j, lev in enumerate(levels):
            lev = np.asarray(lev, dtype=float)
            if lev.shape != (2**j,):
                raise ValueError(f"level {j} must have {2**j} entries, got {lev.shape}")
            parts.append(lev)
        return cls(np.concatenate(parts))

    @classmethod
    def from_flat(cls, flat: Sequence[float], J_max: int) -> "CoeffSeq":
        """Build from the first coefficients in flat-index order, zero-padded."""
        out = np.zeros(2 ** (J_max + 1))
        flat = np.asarray(flat, dtype=float)
        if flat.size > out.size:
            raise ValueError(f"{flat.size} coefficients do not fit into J_max={J_max}")
        out[: flat.size] = flat
        return cls(out)

    # access

    @property
    def J_max(self) -> int:
        return self.values.size.bit_length() - 2

    @property
    def father(self) -> float:
        return float(self.values[0])

    def level(self, j: int) -> np.ndarray:
        if not 0 <= j <= self.J_max:
            raise IndexError(f"level {j} outside 0..{self.J_max}")
        return self.values[2**j : 2 ** (j + 1)]

    @property
    def levels(self) -> list[np.ndarray]:
        return [self.level(j) for j in range(self.J_max + 1)]

    def __getitem__(self, jk: tuple[int, int]) -> float:
        j, k = jk
        return float(self.values[flat_index(j, k, self.J_max) - 1])

    def with_values(self, values: np.ndarray) -> "CoeffSeq":
        return CoeffSeq(values)

    def replace(self, j: int, k: int, value: float) -> "CoeffSeq":
        v = self.values.copy()
        v[flat_index(j, k, self.J_max) - 1] = value
        return CoeffSeq(v)

    # arithmetic

    def _check(self, other: "CoeffSeq"):
        if not isinstance(other, CoeffSeq):
            return NotImplemented
        if other.values.size != self.values.size:
            raise ValueError(f"J_max mismatch: {self.J_max} vs {other.J_max}")
        return other.values

    def __add__(self, other):
        ov = self._check(other)
        return ov if ov is NotImplemented else CoeffSeq(self.values + ov)

    def __sub__(self, other):
        ov = self._check(other)
        return ov if ov is NotImplemented else CoeffSeq(self.values - ov)

    def __mul__(self, c: float):
        return CoeffSeq(self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return CoeffSeq(-self.values)

    def __eq__(self, other):
        if not isinstance(other, CoeffSeq):
            return NotImplemented
        return self.values.size == other.values.size and bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"CoeffSeq(J_max={self.J_max}, father={self.father:.6g}, l2={math.sqrt(l2_norm_sq(self)):.6g})"

    # serialization

    def to_dict(self) -> dict:
        return {
            "J_max": self.J_max,
            "father": self.father,
            "levels": [lev.tolist() for lev in self.levels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoeffSeq":
        seq = cls.from_levels(d["father"], d["levels"])
        if seq.J_max != int(d["J_max"]):
            raise ValueError("J_max does not match the number of levels")
        return seq

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CoeffSeq":
        return cls.from_dict(json.loads(text))


def flat_index(j: int, k: int, J_max: int | None = None) -> int:
    """Flat index ``2**j + k`` of coefficient ``(j, k)``; index 1 is the father."""
    if j < 0 or (J_max is not None and j > J_max):
        raise IndexError(f"level {j} out of range")
    if not 1 <= k <= 2**j:
        raise IndexError(f"position {k} out of range for level {j}")
    return 2**j + k


def level_position(t: int) -> tuple[int, int]:
    """Inverse of :func:`flat_index` for ``t >= 2``."""
    if t < 2:
        raise IndexError("flat index 1 is the father coefficient and has no (j, k)")
    j = (t - 1).bit_length() - 1
    return j, t - 2**j


def level_masses(f: CoeffSeq) -> np.ndarray:
    """Squared mass per slot: ``[father**2, sum_k f_0k**2, ..., sum_k f_Jk**2]``."""
    v = f.values
    out = np.empty(f.J_max + 2)
    out[0] = v[0] ** 2
    for j in range(f.J_max + 1):
        lev = v[2**j : 2 ** (j + 1)]
        out[j + 1] = lev @ lev
    return out


def l2_norm_sq(f: CoeffSeq) -> float:
    return float(f.values @ f.values)


def besov_2inf_norm(f: CoeffSeq, s: float) -> float:
    """``sqrt(sup_j 2**(2js) sum_k f_jk**2)``; the father slot counts with weight 1."""
    if s <= 0:
        raise ValueError("s must be positive")
    masses = level_masses(f)
    weights = np.concatenate([[1.0], 2.0 ** (2 * s * np.arange(f.J_max + 1))])
    return math.sqrt(float(np.max(weights * masses)))


def besov_infinf_norm(f: CoeffSeq, s: float) -> float:
    """``sup_{j,k} 2**(j(s+1/2)) |f_jk|``; the father counts with weight 1."""
    if s <= 0:
        raise ValueError("s must be positive")
    best = abs(f.father)
    for j in range(f.J_max + 1):
        best = max(best, 2.0 ** (j * (s + 0.5)) * float(np.max(np.abs(f.level(j)))))
    return best


def project_level(f: CoeffSeq, l: int) -> CoeffSeq:
    """Keep a single resolution level.  ``l = 0`` keeps the father coefficient only."""
    if not 0 <= l <= f.J_max:
        raise IndexError(f"level {l} outside 0..{f.J_max}")
    out = np.zeros_like(f.values)
    if l == 0:
        out[0] = f.values[0]
    else:
        out[2**l : 2 ** (l + 1)] = f.values[2**l : 2 ** (l + 1)]
    return CoeffSeq(out)


def block(f: CoeffSeq, j1: int, j2: int) -> CoeffSeq:
    """Wavelet levels ``j1..j2`` inclusive (father excluded)."""
    if not 0 <= j1 <= j2 <= f.J_max:
        raise IndexError(f"invalid block [{j1}, {j2}] for J_max={f.J_max}")
    out = np.zeros_like(f.values)
    out[2**j1 : 2 ** (j2 + 1)] = f.values[2**j1 : 2 ** (j2 + 1)]
    return CoeffSeq(out)


def haar_cell_values(f: CoeffSeq) -> np.ndarray:
    """Values of the Haar expansion on the ``2**(J_max+1)`` dyadic cells of [0, 1)."""
    J = f.J_max
    ncell = 2 ** (J + 1)
    vals = np.full(ncell, f.father)
    for j in range(J + 1):
        coef = f.level(j)
        width = ncell // 2**j
        half = width // 2
        amp = 2.0 ** (j / 2)
        contrib = np.empty((2**j, width))
        contrib[:, :half] = (amp * coef)[:, None]
        contrib[:, half:] = (-amp * coef)[:, None]
        vals += contrib.ravel()
    return vals


def haar_sup_norm(f: CoeffSeq) -> float:
    return float(np.max(np.abs(haar_cell_values(f))))


def haar_eval(f: CoeffSeq, x: np.ndarray) -> np.ndarray:
    """Pointwise evaluation of the Haar expansion, straight from the basis functions."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, f.father)
    for j in range(f.J_max + 1):
        scaled = x * 2**j
        k = np.minimum(np.floor(scaled).astype(int), 2**j - 1)
        frac = scaled - k
        sign = np.where(frac < 0.5, 1.0, -1.0)
        out += f.level(j)[k] * 2.0 ** (j / 2) * sign
    return out


def dist_to_B2inf_ball(f: CoeffSeq, s2: float, L: float) -> float:
    """L2 distance from ``f`` to the closed ball ``{g : ||g||_{B^s2_2,inf} <= L}``.

    The ball constrains each level's Euclidean mass separately, so the metric
    projection shrinks every level radially to its own radius.
    """
    if s2 <= 0 or L <= 0:
        raise ValueError("s2 and L must be positive")
    r = np.sqrt(level_masses(f))
    radii = L * np.concatenate([[1.0], 2.0 ** (-s2 * np.arange(f.J_max + 1))])
    excess = np.maximum(r - radii, 0.0)
    return float(math.sqrt(excess @ excess))


def project_to_B2inf_ball(f: CoeffSeq, s2: float, L: float) -> CoeffSeq:
    r = np.sqrt(level_masses(f))
    radii = L * np.concatenate([[1.0], 2.0 ** (-s2 * np.arange(f.J_max + 1))])
    scale = np.where(r > radii, radii / np.where(r > 0, r, 1.0), 1.0)
    v = f.values.copy()
    v[0] *= scale[0]
    for j in range(f.J_max + 1):
        v[2**j : 2 ** (j + 1)] *= scale[j + 1]
    return CoeffSeq(v)
