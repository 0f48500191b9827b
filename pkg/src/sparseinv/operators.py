"""Forward operators: subsampling, identity, parallel-beam Radon, composition.

Every operator acts on the last axis of its input; any leading axes are a
batch and are carried through unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .transforms import DctBasis, dct_matrix

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "IdentityOperator",
    "SubsampleOperator",
    "MaskOperator",
    "RadonOperator",
    "ComposedOperator",
    "MaskSpec",
    "CtGeometry",
    "make_subsample_operator",
    "make_identity_operator",
    "radon_forward",
    "radon_adjoint",
    "fbp_reconstruct",
    "compose",
    "column_norms_squared",
    "dot_test",
    "write_sinogram_csv",
    "read_sinogram_csv",
    "write_sinogram_binary",
    "read_sinogram_binary",
]


class LinearOperator:
    """Base class. Subclasses set ``input_dim``/``output_dim`` and implement
    ``_apply`` and ``_adjoint``."""

    input_dim: int
    output_dim: int

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"{type(self).__name__}: expected input length {self.input_dim}, "
                f"got {x.shape[-1]}"
            )
        return self._apply(x)

    def adjoint_apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.output_dim:
            raise ValueError(
                f"{type(self).__name__}: expected adjoint input length "
                f"{self.output_dim}, got {u.shape[-1]}"
            )
        return self._adjoint(u)

    def to_matrix(self) -> np.ndarray:
        """Materialize by applying to every unit vector. Small operators only."""
        eye = np.eye(self.input_dim)
        return self.apply(eye).T

    def take(self, rows) -> "LinearOperator":
        """Operator for a subset of batch rows; unbatched operators return self."""
        return self

    # closed-form column norms, when an operator knows them
    def _column_norms_squared(self):
        return None

    def __repr__(self):
        return f"{type(self).__name__}({self.output_dim}x{self.input_dim})"


class MatrixOperator(LinearOperator):
    """Dense (or scipy.sparse) matrix wrapped as an operator."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            self.matrix = matrix.tocsr()
            self._matrix_t = self.matrix.T.tocsr()
        else:
            self.matrix = np.asarray(matrix, dtype=np.float64)
            if self.matrix.ndim != 2:
                raise ValueError("matrix must be 2-D")
            self._matrix_t = self.matrix.T
        self.output_dim, self.input_dim = self.matrix.shape

    def _apply(self, x):
        if sp.issparse(self.matrix):
            return _sparse_rows(self.matrix, x)
        return _dense_rows(self.matrix, x)

    def _adjoint(self, u):
        if sp.issparse(self.matrix):
            return _sparse_rows(self._matrix_t, u)
        return _dense_rows(self._matrix_t, u)

    def _column_norms_squared(self):
        if sp.issparse(self.matrix):
            return np.asarray(self.matrix.multiply(self.matrix).sum(axis=0)).ravel()
        return np.sum(self.matrix**2, axis=0)


def _dense_rows(mat, x):
    """Matrix-vector products row by row, so a row's result does not depend on
    how many rows are stacked with it (batched BLAS calls may round differently)."""
    if x.ndim == 1:
        return mat @ x
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty((flat.shape[0], mat.shape[0]))
    for i, row in enumerate(flat):
        out[i] = mat @ row
    return out.reshape(*x.shape[:-1], mat.shape[0])


def _sparse_rows(mat, x):
    """Apply a sparse matrix to the last axis of ``x``."""
    if x.ndim == 1:
        return mat @ x
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = (mat @ flat.T).T
    return np.ascontiguousarray(out).reshape(*lead, mat.shape[0])


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be positive")
        self.input_dim = self.output_dim = int(n)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, u):
        return u.copy()

    def _column_norms_squared(self):
        return np.ones(self.input_dim)


@dataclass(frozen=True)
class MaskSpec:
    """Observed index set of a length-``n`` signal."""

    n: int
    observed_indices: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.observed_indices)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("mask must observe at least one index")
        if not np.issubdtype(idx.dtype, np.integer):
            raise ValueError("observed indices must be integers")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError(f"observed index out of range for n={self.n}")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("observed indices must be strictly increasing")
        object.__setattr__(self, "observed_indices", idx.astype(np.int64))

    @property
    def ratio(self) -> float:
        return self.observed_indices.size / self.n

    @property
    def missing_indices(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.observed_indices)

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[self.observed_indices] = True
        return out


class SubsampleOperator(LinearOperator):
    """Keeps the observed entries, in index order."""

    def __init__(self, mask: MaskSpec):
        self.mask = mask
        self.input_dim = mask.n
        self.output_dim = mask.observed_indices.size

    def _apply(self, x):
        return x[..., self.mask.observed_indices]

    def _adjoint(self, u):
        out = np.zeros(u.shape[:-1] + (self.input_dim,))
        out[..., self.mask.observed_indices] = u
        return out

    def _column_norms_squared(self):
        return self.mask.as_bool().astype(np.float64)


class MaskOperator(LinearOperator):
    """Diagonal 0/1 selection that keeps the full signal length.

    Equivalent to ``SubsampleOperator`` followed by its adjoint, so
    ``0.5 * ||M(y - x)||^2`` equals the subsampled residual energy. Unlike
    ``SubsampleOperator`` the mask may carry leading batch axes, which lets a
    stack of differently-masked problems share one operator.
    """

    def __init__(self, mask):
        mask = np.asarray(mask)
        if mask.dtype != bool:
            mask = mask.astype(bool)
        if mask.ndim < 1 or mask.shape[-1] < 1:
            raise ValueError("mask must be at least 1-D")
        if np.any(mask.sum(axis=-1) == 0):
            raise ValueError("every mask row must observe at least one index")
        self.mask = mask
        self._weights = mask.astype(np.float64)
        self.input_dim = self.output_dim = mask.shape[-1]

    @classmethod
    def from_specs(cls, specs) -> "MaskOperator":
        return cls(np.stack([s.as_bool() for s in specs]))

    @property
    def observed_count(self) -> np.ndarray:
        return self.mask.sum(axis=-1)

    def take(self, rows) -> "MaskOperator":
        return MaskOperator(self.mask[rows])

    def _apply(self, x):
        return x * self._weights

    _adjoint = _apply

    def _column_norms_squared(self):
        return self._weights.copy()


@dataclass(frozen=True)
class CtGeometry:
    """Parallel-beam geometry: ``num_angles`` views over [0, pi), unit detector
    spacing, detectors centred on the image centre."""

    image_size: int
    num_angles: int
    detector_count: int | None = None

    def __post_init__(self):
        if self.image_size < 1 or self.num_angles < 1:
            raise ValueError("image_size and num_angles must be positive")
        if self.detector_count is None:
            object.__setattr__(self, "detector_count", self.image_size)
        if self.detector_count < 1:
            raise ValueError("detector_count must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.num_angles) * np.pi / self.num_angles

    @property
    def detector_positions(self) -> np.ndarray:
        return np.arange(self.detector_count) - (self.detector_count - 1) / 2.0

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.num_angles, self.detector_count)


def _radon_matrix(geom: CtGeometry) -> sp.csr_matrix:
    """Sparse system matrix of the ray-sampling projector.

    Each ray is sampled at unit steps; each sample bilinearly interpolates the
    four surrounding pixel centres. Sampling is confined to the disc of
    radius ``n/2 + 1`` around the image centre, which covers the bilinear
    support of every pixel inside the circular field of view.
    """
    n, D = geom.image_size, geom.detector_count
    c = (n - 1) / 2.0
    radius = n / 2.0 + 1.0
    n_steps = int(np.ceil(2 * radius)) + 1
    t = np.arange(n_steps) - (n_steps - 1) / 2.0
    S, T = np.meshgrid(geom.detector_positions, t, indexing="ij")
    inside = S**2 + T**2 <= radius**2
    S, T = S[inside], T[inside]
    det = np.broadcast_to(np.arange(D)[:, None], inside.shape)[inside]

    blocks = []
    for k, theta in enumerate(geom.angles):
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        # ray point s*(cos, sin) + t*(-sin, cos); y axis points up
        x = S * cos_t - T * sin_t
        y = S * sin_t + T * cos_t
        col = x + c
        row = c - y
        j0 = np.floor(col).astype(np.int64)
        i0 = np.floor(row).astype(np.int64)
        fx = col - j0
        fy = row - i0
        r_idx, c_idx, vals = [], [], []
        for di, dj, w in (
            (0, 0, (1 - fy) * (1 - fx)),
            (0, 1, (1 - fy) * fx),
            (1, 0, fy * (1 - fx)),
            (1, 1, fy * fx),
        ):
            ii, jj = i0 + di, j0 + dj
            ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n) & (w > 0)
            r_idx.append(det[ok] + k * D)
            c_idx.append(ii[ok] * n + jj[ok])
            vals.append(w[ok])
        blocks.append(
            sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
                shape=(geom.num_angles * D, n * n),
            )
        )
    # unit step length: the quadrature weight is 1
    return sp.csr_matrix(sum(blocks[1:], blocks[0]))


class RadonOperator(MatrixOperator):
    """Discrete parallel-beam Radon transform on flattened square images.

    Input: images of shape ``(..., n*n)``; output: sinograms flattened to
    ``(..., K*D)`` with angle-major order. The adjoint is the exact transpose.
    """

    def __init__(self, geom: CtGeometry):
        self.geom = geom
        super().__init__(_radon_matrix(geom))


_RADON_CACHE: dict[CtGeometry, RadonOperator] = {}


def radon_operator(geom: CtGeometry) -> RadonOperator:
    op = _RADON_CACHE.get(geom)
    if op is None:
        if len(_RADON_CACHE) > 16:
            _RADON_CACHE.clear()
        op = _RADON_CACHE[geom] = RadonOperator(geom)
    return op


def radon_forward(image, geom: CtGeometry) -> np.ndarray:
    """Sinogram of shape ``(K, detector_count)`` for a square image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if image.shape[0] != geom.image_size:
        raise ValueError(
            f"image size {image.shape[0]} does not match geometry {geom.image_size}"
        )
    return radon_operator(geom).apply(image.ravel()).reshape(geom.sinogram_shape)


def radon_adjoint(sino, geom: CtGeometry) -> np.ndarray:
    """Unfiltered backprojection, the exact adjoint of :func:`radon_forward`."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {sino.shape} != {geom.sinogram_shape}")
    n = geom.image_size
    return radon_operator(geom).adjoint_apply(sino.ravel()).reshape(n, n)


def _ramlak_response(n_det: int) -> tuple[np.ndarray, int]:
    """Frequency response of the band-limited ramp filter on a padded grid.

    Built from the spatial kernel h(0)=1/4, h(odd k)=-1/(pi k)^2, h(even)=0,
    which avoids the DC offset of sampling |f| directly.
    """
    size = max(64, int(2 ** np.ceil(np.log2(2 * n_det))))
    k = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 0.25
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    return np.real(scipy.fft.fft(h)), size


def fbp_reconstruct(sino, geom: CtGeometry) -> np.ndarray:
    """Filtered back-projection with an unwindowed Ram-Lak filter.

    Pixel-driven backprojection with linear interpolation along the detector,
    weighted by pi/K. Pixels outside the circular field of view are zeroed.
    """
    from .data import circular_fov

    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {sino.shape} != {geom.sinogram_shape}")
    n, D = geom.image_size, geom.detector_count
    response, size = _ramlak_response(D)
    padded = np.zeros((geom.num_angles, size))
    padded[:, :D] = sino
    filtered = np.real(scipy.fft.ifft(scipy.fft.fft(padded, axis=-1) * response, axis=-1))
    filtered = filtered[:, :D]

    c = (n - 1) / 2.0
    x = np.arange(n) - c
    X, Y = np.meshgrid(x, -x)  # row i has y = c - i
    det = geom.detector_positions
    image = np.zeros((n, n))
    for theta, proj in zip(geom.angles, filtered):
        s = X * np.cos(theta) + Y * np.sin(theta)
        image += np.interp(s, det, proj, left=0.0, right=0.0)
    image *= np.pi / geom.num_angles
    return image * circular_fov(n)


class ComposedOperator(LinearOperator):
    """``outer(inner(x))``."""

    def __init__(self, outer, inner):
        if outer.input_dim != inner.output_dim:
            raise ValueError(
                f"cannot compose: outer input {outer.input_dim} != inner output "
                f"{inner.output_dim}"
            )
        self.outer = outer
        self.inner = inner
        self.input_dim = inner.input_dim
        self.output_dim = outer.output_dim

    def _apply(self, x):
        return self.outer.apply(self.inner.apply(x))

    def _adjoint(self, u):
        return self.inner.adjoint_apply(self.outer.adjoint_apply(u))

    def _column_norms_squared(self):
        inner = self.inner
        outer = self.outer
        if isinstance(inner, IdentityOperator):
            return column_norms_squared(outer)
        if isinstance(inner, DctBasis) and isinstance(
            outer, (IdentityOperator, SubsampleOperator, MaskOperator)
        ):
            # sum over observed rows of Psi^2, with Psi orthonormal
            weights = outer._column_norms_squared()
            psi = inner.matrix()
            return weights @ (psi * psi)
        return None

    def take(self, rows) -> "ComposedOperator":
        outer = self.outer.take(rows) if hasattr(self.outer, "take") else self.outer
        inner = self.inner.take(rows) if hasattr(self.inner, "take") else self.inner
        if outer is self.outer and inner is self.inner:
            return self
        return ComposedOperator(outer, inner)


def make_subsample_operator(mask: MaskSpec) -> SubsampleOperator:
    return SubsampleOperator(mask)


def make_identity_operator(n: int) -> IdentityOperator:
    return IdentityOperator(n)


def compose(a, basis) -> ComposedOperator:
    """Effective design ``Theta = A Psi``: ``apply(w) = A(Psi w)``."""
    if basis.output_dim != a.input_dim:
        raise ValueError(
            f"basis length {basis.output_dim} does not match operator input {a.input_dim}"
        )
    return ComposedOperator(a, basis)


def column_norms_squared(op, method: str = "auto") -> np.ndarray:
    """Squared l2 norm of every column of ``op``.

    ``method="closed"`` uses an operator-specific formula, ``"probe"`` applies
    the operator to each unit vector, ``"auto"`` prefers the closed form.
    """
    if method not in ("auto", "closed", "probe"):
        raise ValueError(f"unknown method {method!r}")
    if method != "probe":
        closed = op._column_norms_squared() if hasattr(op, "_column_norms_squared") else None
        if closed is not None:
            return np.asarray(closed, dtype=np.float64)
        if method == "closed":
            raise ValueError(f"no closed form for {op!r}")
    n = op.input_dim
    out = np.empty(n)
    chunk = max(1, min(n, 2**22 // max(1, op.output_dim)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        probe = np.zeros((stop - start, n))
        probe[np.arange(stop - start), np.arange(start, stop)] = 1.0
        cols = op.apply(probe)
        if cols.ndim != 2:
            raise ValueError("probing is only defined for unbatched operators")
        out[start:stop] = np.sum(cols * cols, axis=-1)
    return out


def dot_test(op, n_pairs: int = 1, rng=None) -> float:
    """Largest relative mismatch of <A x, u> and <x, A^T u> over random pairs."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.input_dim)
        u = rng.standard_normal(op.output_dim)
        lhs = float(np.dot(op.apply(x).ravel(), u.ravel()))
        rhs = float(np.dot(x, op.adjoint_apply(u).ravel()))
        scale = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# -- sinogram files -----------------------------------------------------------

_SINO_MAGIC = b"SGRAM\x00"
_SINO_HEADER = struct.Struct("<6s2xII")  # 16 bytes


def write_sinogram_csv(path, sino) -> None:
    sino = np.atleast_2d(np.asarray(sino, dtype=np.float64))
    np.savetxt(path, sino, delimiter=",", fmt="%.17g")


def read_sinogram_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


def write_sinogram_binary(path, sino) -> None:
    """Little-endian float64 payload after a 16-byte header
    (magic, 2 pad bytes, u32 angles, u32 detectors)."""
    sino = np.atleast_2d(np.asarray(sino, dtype=np.float64))
    K, D = sino.shape
    with open(path, "wb") as fh:
        fh.write(_SINO_HEADER.pack(_SINO_MAGIC, K, D))
        fh.write(sino.astype("<f8").tobytes(order="C"))


def read_sinogram_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _SINO_HEADER.size:
        raise ValueError("truncated sinogram header")
    magic, K, D = _SINO_HEADER.unpack_from(raw)
    if magic != _SINO_MAGIC:
        raise ValueError("not a sinogram file (bad magic)")
    payload = raw[_SINO_HEADER.size :]
    if len(payload) != 8 * K * D:
        raise ValueError(f"payload holds {len(payload)} bytes, expected {8 * K * D}")
    return np.frombuffer(payload, dtype="<f8").reshape(K, D).copy()
