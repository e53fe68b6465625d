"""Row-sampled Hadamard sensing operator and per-section power allocation.

The measurement matrix is ``n`` rows of a natural-(Sylvester-)ordered
Hadamard matrix, scaled by 1/sqrt(n) so every realised column has unit
norm.  Forward and adjoint apply in O(H log H) through the fast
Walsh-Hadamard transform; nothing dense is ever materialised.  The all-ones
row (index 0) is excluded from the draw by default since it carries no
signal contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadDimensions, LengthMismatch
from .tree import TreeCodeConfig


def fwht(x) -> np.ndarray:
    """Fast Walsh-Hadamard transform, natural (Sylvester) ordering.

    Unnormalised: applying it twice returns the input scaled by its length,
    which must be a power of two.
    """
    y = np.array(x, dtype=np.float64, copy=True).ravel()
    n = y.size
    if n == 0 or n & (n - 1):
        raise BadDimensions(f"transform length must be a power of two, got {n}")
    h = 1
    while h < n:
        y = y.reshape(-1, 2, h)
        top = y[:, 0, :].copy()
        y[:, 0, :] += y[:, 1, :]
        y[:, 1, :] = top - y[:, 1, :]
        y = y.reshape(n)
        h *= 2
    return y


def _transform_size(m: int, n: int, skip_dc_row: bool) -> int:
    need = max(m, n + 1 if skip_dc_row else n)
    size = 1
    while size < need:
        size *= 2
    return size


@dataclass
class SensingOperator:
    """n-by-m sampled Hadamard operator with unit-norm columns.

    ``rows`` indexes the sampled rows of the order-``transform_size``
    Hadamard matrix; the first ``m`` columns are used.  When ``m`` is itself
    a power of two at least ``n+1`` (the usual case) the transform size
    equals ``m`` and the operator is exactly ``n`` rows of the order-``m``
    matrix.
    """

    n: int
    m: int
    seed: int
    rows: np.ndarray
    transform_size: int
    _scale: float = field(init=False)

    def __post_init__(self):
        self._scale = 1.0 / np.sqrt(self.n)

    def forward(self, x) -> np.ndarray:
        """A @ x for a length-m vector."""
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.m:
            raise LengthMismatch(f"expected length {self.m}, got {x.size}")
        buf = np.zeros(self.transform_size, dtype=np.float64)
        buf[:self.m] = x
        return fwht(buf)[self.rows] * self._scale

    def adjoint(self, z) -> np.ndarray:
        """A.T @ z for a length-n vector."""
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.size != self.n:
            raise LengthMismatch(f"expected length {self.n}, got {z.size}")
        buf = np.zeros(self.transform_size, dtype=np.float64)
        buf[self.rows] = z
        # the Hadamard matrix is symmetric, so the adjoint is another transform
        return fwht(buf)[:self.m] * self._scale

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "ordering": "sylvester",
            "normalization": "unit-column",
            "skip_dc_row": bool(0 not in self.rows),
        }


def build_operator(n: int, m: int, seed: int, skip_dc_row: bool = True) -> SensingOperator:
    """Draw a deterministic n-by-m sampled Hadamard operator from a seed.

    Rows are sampled without replacement from a Hadamard matrix of order
    ``max(m, n+1)`` rounded up to a power of two; row 0 (all ones) is left
    out unless ``skip_dc_row`` is False.
    """
    n, m = int(n), int(m)
    if n < 1 or m < 1:
        raise BadDimensions(f"need positive dimensions, got n={n}, m={m}")
    size = _transform_size(m, n, skip_dc_row)
    rng = np.random.default_rng(seed)
    if skip_dc_row:
        rows = 1 + rng.choice(size - 1, size=n, replace=False)
    else:
        rows = rng.choice(size, size=n, replace=False)
    return SensingOperator(n=n, m=m, seed=int(seed),
                           rows=rows.astype(np.int64), transform_size=size)


def ebn0_to_power(ebn0_db: float, payload_bits: int, n: int) -> float:
    """Per-channel-use symbol power for a target Eb/N0 in dB.

    Real channel with unit-variance noise: Eb/N0 = n P / (2 w), so
    P = 2 w 10^(dB/10) / n.
    """
    return 2.0 * payload_bits * 10.0 ** (float(ebn0_db) / 10.0) / float(n)


@dataclass
class PowerAllocation:
    """Per-section amplitudes d with sum(d^2) = n P (flat by default)."""

    amplitudes: np.ndarray      # (L,) float64
    power: float                # per-channel-use symbol power P
    n: int
    ka: int

    @property
    def codeword_energy(self) -> float:
        """Energy of one user codeword, sum of d^2 = n P."""
        return float(np.sum(self.amplitudes ** 2))

    def total_energy(self) -> float:
        """Expected received signal energy with ka users."""
        return self.ka * self.codeword_energy

    def expand(self, config: TreeCodeConfig) -> np.ndarray:
        """Per-entry amplitude vector aligned with the sparse layout."""
        if self.amplitudes.size != config.num_sections:
            raise LengthMismatch("allocation does not match the section count")
        return np.repeat(self.amplitudes, np.array(config.section_sizes))


def build_power(config: TreeCodeConfig, n: int, power: float,
                ka: int) -> PowerAllocation:
    """Flat allocation: every section gets amplitude sqrt(n P / L)."""
    if power <= 0 or n < 1 or ka < 1:
        raise BadDimensions(
            f"need positive power, n and ka; got P={power}, n={n}, ka={ka}"
        )
    amp = np.full(config.num_sections,
                  np.sqrt(float(n) * float(power) / config.num_sections))
    return PowerAllocation(amplitudes=amp, power=float(power), n=int(n),
                           ka=int(ka))
