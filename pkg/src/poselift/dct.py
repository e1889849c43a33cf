"""Orthonormal DCT-II / DCT-III transforms for joint trajectories.

A length-F trajectory maps to F coefficients through

    C_i = sqrt(2/F) * sum_f x_f * (1 / sqrt(1 + d_i1)) * cos(pi * (2f - 1) * (i - 1) / (2F))

with indices 1-based in the formula (stored 0-based here) and d_i1 the
Kronecker delta against the first index. The basis is orthonormal, so the
inverse transform is the transpose and Parseval's identity holds exactly.

Transforms are evaluated directly against the O(F^2) basis matrix; sequence
lengths stay in the hundreds, so clarity beats an FFT formulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Trajectory",
    "DctSpectrum",
    "dct_matrix",
    "dct_forward",
    "idct",
    "low_pass",
    "reconstruction_error",
]

Trajectory = np.ndarray


@dataclass
class DctSpectrum:
    """Full coefficient vector plus the low-pass cutoff ``kept``.

    ``coeffs[i] == 0`` for every index ``i >= kept`` after low-pass filtering.
    """

    coeffs: np.ndarray
    kept: int

    @property
    def length(self) -> int:
        return self.coeffs.shape[0]


@lru_cache(maxsize=64)
def _basis(length: int) -> np.ndarray:
    i = np.arange(length)[:, None]  # coefficient index, 0-based
    f = np.arange(length)[None, :]  # time index, 0-based
    b = np.sqrt(2.0 / length) * np.cos(np.pi * (2 * f + 1) * i / (2 * length))
    b[0, :] /= np.sqrt(2.0)
    return b


def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT-II basis matrix B with ``coeffs = B @ values``."""
    if length < 1:
        raise ValueError("dct_matrix: length must be >= 1")
    return _basis(length).copy()


def _as_values(t) -> np.ndarray:
    values = np.asarray(t, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError(f"trajectory must be a non-empty 1-D array, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("trajectory contains non-finite values")
    return values


def dct_forward(t) -> DctSpectrum:
    """Transform one trajectory into its full DCT spectrum (kept = F)."""
    values = _as_values(t)
    length = values.shape[0]
    return DctSpectrum(coeffs=_basis(length) @ values, kept=length)


def idct(s: DctSpectrum) -> Trajectory:
    """Reconstruct the time-domain trajectory from a spectrum."""
    coeffs = np.asarray(s.coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size == 0:
        raise ValueError(f"spectrum must be a non-empty 1-D array, got shape {coeffs.shape}")
    return _basis(coeffs.shape[0]).T @ coeffs


def low_pass(s: DctSpectrum, n: int) -> DctSpectrum:
    """Keep the first ``n`` coefficients, zero the rest."""
    length = s.length
    if not 1 <= n <= length:
        raise ValueError(f"low_pass: n={n} out of range 1..{length}")
    kept = s.coeffs.copy()
    kept[n:] = 0.0
    return DctSpectrum(coeffs=kept, kept=n)


def reconstruction_error(t, n: int) -> float:
    """RMS error between a trajectory and its n-coefficient reconstruction."""
    values = _as_values(t)
    recon = idct(low_pass(dct_forward(values), n))
    return float(np.sqrt(np.mean((values - recon) ** 2)))
