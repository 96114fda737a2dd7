"""Finite-precision transmission of real numbers and per-machine bit accounting.

Wire format, most significant bit first::

    [1][sign][integer part: w_int bits][fraction: w_frac bits]    if |x| < sqrt(n)
    [0]                                                           otherwise

with ``w_int = ceil(log2(n) / 2)`` and ``w_frac = floor(D log2(n))``.  The sign
bit is 1 for ``x >= 0``; it is read from the IEEE sign so that ``-0.0``
round-trips.  The magnitude is truncated toward zero onto the grid
``2**-w_frac``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BudgetExceeded(RuntimeError):
    """A machine tried to send more bits than its hard cap."""


@dataclass(frozen=True)
class EncoderConfig:
    n: float
    D: float = 0.5

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("n must be >= 4")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if self.w_frac < 1:
            raise ValueError("floor(D log2 n) must be at least 1")

    @property
    def w_int(self) -> int:
        return math.ceil(0.5 * math.log2(self.n) - 1e-12)

    @property
    def w_frac(self) -> int:
        return math.floor(self.D * math.log2(self.n) + 1e-12)

    @property
    def clip(self) -> float:
        return math.sqrt(self.n)

    @property
    def max_bits(self) -> int:
        return 2 + self.w_int + self.w_frac


@dataclass(frozen=True)
class BitMessage:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1 or any(b not in (0, 1) for b in self.bits):
            raise ValueError("a message is a non-empty tuple of 0/1 bits")

    def __len__(self):
        return len(self.bits)

    def __str__(self):
        return "".join(map(str, self.bits))


def encode_value(x: float, cfg: EncoderConfig) -> BitMessage:
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    if abs(x) >= cfg.clip:
        return BitMessage((0,))
    q = math.floor(abs(x) * 2**cfg.w_frac)
    width = cfg.w_int + cfg.w_frac
    digits = tuple((q >> (width - 1 - i)) & 1 for i in range(width))
    return BitMessage((1, 0 if math.copysign(1.0, x) < 0 else 1) + digits)


def decode_value(msg: BitMessage, cfg: EncoderConfig) -> float:
    bits = msg.bits
    if bits == (0,):
        return 0.0
    if bits[0] != 1 or len(bits) != cfg.max_bits:
        raise ValueError(f"malformed message of length {len(bits)} for n={cfg.n}")
    q = 0
    for b in bits[2:]:
        q = (q << 1) | b
    y = q / 2**cfg.w_frac
    return y if bits[1] == 1 else -y


@dataclass(frozen=True)
class PackedMessages:
    """A batch of messages as integer words plus bit lengths (vectorized form of the wire format)."""

    words: np.ndarray
    lengths: np.ndarray

    @property
    def total_bits(self) -> int:
        return int(self.lengths.sum())

    def __len__(self):
        return self.words.size

    def message(self, i: int) -> BitMessage:
        w, l = int(self.words[i]), int(self.lengths[i])
        return BitMessage(tuple((w >> (l - 1 - b)) & 1 for b in range(l)))


def encode_batch(x: np.ndarray, cfg: EncoderConfig) -> PackedMessages:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite values")
    width = cfg.w_int + cfg.w_frac
    if width + 2 > 63:
        raise ValueError("message width exceeds 63 bits")
    send = np.abs(x) < cfg.clip
    q = np.floor(np.abs(x) * 2.0**cfg.w_frac).astype(np.int64)
    sign = (~np.signbit(x)).astype(np.int64)
    words = np.where(send, (1 << (width + 1)) | (sign << width) | q, 0).astype(np.int64)
    lengths = np.where(send, width + 2, 1).astype(np.int64)
    return PackedMessages(words, lengths)


def decode_batch(msgs: PackedMessages, cfg: EncoderConfig) -> np.ndarray:
    width = cfg.w_int + cfg.w_frac
    ok = (msgs.lengths == 1) & (msgs.words == 0) | (msgs.lengths == width + 2) & ((msgs.words >> (width + 1)) == 1)
    if not np.all(ok):
        raise ValueError("malformed message in batch")
    q = (msgs.words & ((1 << width) - 1)).astype(float) / 2.0**cfg.w_frac
    sign = np.where((msgs.words >> width) & 1 == 1, 1.0, -1.0)
    return np.where(msgs.lengths == 1, 0.0, sign * q)


class BudgetLedger:
    """Cumulative bits sent by each machine, with an optional hard cap per machine."""

    def __init__(self, m: int, cap: float | None = None):
        if m < 1:
            raise ValueError("need at least one machine")
        self.counts = np.zeros(m, dtype=np.int64)
        self.cap = cap

    @property
    def m(self) -> int:
        return self.counts.size

    def record_bits(self, machine: int, nbits: int) -> "BudgetLedger":
        if not 0 <= machine < self.m:
            raise IndexError(f"machine {machine} outside 0..{self.m - 1}")
        if nbits < 0:
            raise ValueError("bit counts only increase")
        total = int(self.counts[machine]) + int(nbits)
        if self.cap is not None and total > self.cap:
            raise BudgetExceeded(f"machine {machine}: {total} bits exceeds cap {self.cap}")
        self.counts[machine] = total
        return self

    def record(self, machine: int, msg: BitMessage | PackedMessages) -> "BudgetLedger":
        nbits = msg.total_bits if isinstance(msg, PackedMessages) else len(msg)
        return self.record_bits(machine, nbits)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "cap": self.cap}
