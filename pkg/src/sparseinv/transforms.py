"""Orthonormal DCT-II used as the sparsifying basis for 1-D signals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.fft

__all__ = [
    "DctBasis",
    "dct_analyze",
    "dct_synthesize",
    "dct_matrix",
]


def _check(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("DCT input must have at least one sample along the last axis")
    return x


def dct_analyze(signal) -> np.ndarray:
    """Orthonormal DCT-II of ``signal`` along its last axis.

    Leading axes are treated as a batch.
    """
    x = _check(signal)
    return scipy.fft.dct(x, type=2, norm="ortho", axis=-1)


def dct_synthesize(coeffs) -> np.ndarray:
    """Inverse of :func:`dct_analyze` (orthonormal DCT-III)."""
    c = _check(coeffs)
    return scipy.fft.idct(c, type=2, norm="ortho", axis=-1)


def dct_matrix(n: int) -> np.ndarray:
    """Dense synthesis matrix ``Psi`` with ``Psi @ w == dct_synthesize(w)``.

    Built by direct evaluation of the cosine atoms, O(n^2) memory. Column
    ``k`` is the k-th orthonormal atom.
    """
    if n < 1:
        raise ValueError("n must be positive")
    k = np.arange(n)
    atoms = np.cos(np.pi * (2 * k[:, None] + 1) * k[None, :] / (2 * n))
    scale = np.full(n, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return atoms * scale[None, :]


@dataclass(frozen=True)
class DctBasis:
    """Orthonormal cosine basis of length ``n``.

    ``orientation`` selects which direction :meth:`apply` goes: ``"synthesis"``
    maps coefficients to a signal, ``"analysis"`` maps a signal to
    coefficients. :meth:`adjoint_apply` is always the other direction.
    """

    n: int
    orientation: Literal["synthesis", "analysis"] = "synthesis"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("basis length must be positive")
        if self.orientation not in ("synthesis", "analysis"):
            raise ValueError(f"unknown orientation {self.orientation!r}")

    @property
    def input_dim(self) -> int:
        return self.n

    @property
    def output_dim(self) -> int:
        return self.n

    def _check_len(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected length {self.n}, got {x.shape[-1]}")
        return x

    def apply(self, x) -> np.ndarray:
        x = self._check_len(x)
        if self.orientation == "synthesis":
            return dct_synthesize(x)
        return dct_analyze(x)

    def adjoint_apply(self, x) -> np.ndarray:
        x = self._check_len(x)
        if self.orientation == "synthesis":
            return dct_analyze(x)
        return dct_synthesize(x)

    @property
    def T(self) -> "DctBasis":
        flipped = "analysis" if self.orientation == "synthesis" else "synthesis"
        return DctBasis(self.n, flipped)

    def matrix(self) -> np.ndarray:
        psi = dct_matrix(self.n)
        return psi if self.orientation == "synthesis" else psi.T
