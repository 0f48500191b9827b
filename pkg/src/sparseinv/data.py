"""Signals, phantoms, masks and noise for the benchmark tasks."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .operators import MaskSpec

__all__ = [
    "FormatError",
    "SignalSpec",
    "ImageSpec",
    "NoiseSpec",
    "synth_signal",
    "normalize_signal",
    "ingest_wav",
    "resample_sinc",
    "shepp_logan",
    "ingest_image",
    "read_pgm",
    "write_pgm",
    "write_csv",
    "resize_bilinear",
    "sample_mask",
    "add_noise",
    "circular_fov",
]


class FormatError(ValueError):
    """Input file could not be decoded."""


@dataclass(frozen=True)
class SignalSpec:
    length: int = 2000
    sample_rate: float = 16000.0

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("signal length must be at least 2")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class ImageSpec:
    size: int = 128
    fov: bool = True

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    alpha: float
    seed: int | None = None

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("noise amplitude must be non-negative")


def normalize_signal(x) -> np.ndarray:
    """Zero mean, unit (population) variance."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    std = centered.std()
    if std == 0 or not np.isfinite(std):
        raise ValueError("signal has zero variance and cannot be normalized")
    out = centered / std
    # second pass removes the O(eps) residual mean/scale of the first
    out -= out.mean()
    return out / out.std()


def synth_signal(spec: SignalSpec = SignalSpec()) -> np.ndarray:
    """Two-tone test signal sin(1392 pi t) + sin(3264 pi t), normalized.

    With the default 16 kHz rate and 2000 samples this covers t in [0, 1/8).
    """
    t = np.arange(spec.length) / spec.sample_rate
    raw = np.sin(1392 * np.pi * t) + np.sin(3264 * np.pi * t)
    return normalize_signal(raw)


def _read_wav(path):
    import scipy.io.wavfile

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise FormatError(f"cannot decode WAV {path}: {exc}") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported WAV sample type {data.dtype}")
    return float(rate), samples


def resample_sinc(samples, rate_in: float, rate_out: float, start: int, count: int,
                  taps: int = 64) -> np.ndarray:
    """Output samples ``start .. start+count-1`` at ``rate_out``.

    Hann-windowed sinc interpolation with ``taps`` input samples per output
    sample; the cutoff drops to ``rate_out/2`` when downsampling.
    """
    samples = np.asarray(samples, dtype=np.float64)
    step = rate_in / rate_out
    pos = (start + np.arange(count)) * step
    if pos[0] < 0 or pos[-1] > samples.size - 1:
        raise IndexError(
            f"segment needs input samples up to {pos[-1]:.1f} but the file has "
            f"{samples.size}"
        )
    if rate_in == rate_out:
        return samples[start : start + count].copy()
    cutoff = min(1.0, rate_out / rate_in)
    half = taps // 2
    base = np.floor(pos).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    idx = base[:, None] + offsets[None, :]
    dist = pos[:, None] - idx
    window = 0.5 * (1 + np.cos(np.pi * dist / (half + 1)))
    kernel = cutoff * np.sinc(cutoff * dist) * window
    valid = (idx >= 0) & (idx < samples.size)
    vals = np.where(valid, samples[np.clip(idx, 0, samples.size - 1)], 0.0)
    return np.sum(kernel * vals, axis=1)


def ingest_wav(path, start_time: float = 2.5, spec: SignalSpec = SignalSpec(2500)) -> np.ndarray:
    """Decode a PCM WAV, resample, cut ``spec.length`` samples at
    ``start_time`` seconds and normalize. Multichannel files use channel 0."""
    rate, samples = _read_wav(path)
    start = int(round(start_time * spec.sample_rate))
    if start < 0:
        raise IndexError("start_time must be non-negative")
    segment = resample_sinc(samples, rate, spec.sample_rate, start, spec.length)
    return normalize_signal(segment)


# (x0, y0, semi-axis a, semi-axis b, rotation in degrees)
_SL_GEOMETRY = [
    (0.0, 0.0, 0.69, 0.92, 0.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0),
    (0.22, 0.0, 0.11, 0.31, -18.0),
    (-0.22, 0.0, 0.16, 0.41, 18.0),
    (0.0, 0.35, 0.21, 0.25, 0.0),
    (0.0, 0.1, 0.046, 0.046, 0.0),
    (0.0, -0.1, 0.046, 0.046, 0.0),
    (-0.08, -0.605, 0.046, 0.023, 0.0),
    (0.0, -0.605, 0.023, 0.023, 0.0),
    (0.06, -0.605, 0.023, 0.046, 0.0),
]
_SL_INTENSITY = {
    "canonical": [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
    "modified": [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
}


def shepp_logan(size: int, variant: str = "canonical") -> np.ndarray:
    """Ten-ellipse Shepp-Logan phantom on a ``size`` x ``size`` grid.

    Intensities are summed where ellipses overlap, then scaled so the image
    spans [0, 1]; the circular field of view is applied last.
    ``variant="modified"`` uses the higher-contrast table.
    """
    if size < 16:
        raise ValueError("phantom size must be at least 16")
    if variant not in _SL_INTENSITY:
        raise ValueError(f"unknown variant {variant!r}")
    c = (size - 1) / 2.0
    coords = (np.arange(size) - c) / (size / 2.0)
    X, Y = np.meshgrid(coords, -coords)
    img = np.zeros((size, size))
    for (x0, y0, a, b, phi), value in zip(_SL_GEOMETRY, _SL_INTENSITY[variant]):
        th = np.deg2rad(phi)
        dx, dy = X - x0, Y - y0
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += value
    img = np.clip(img, 0.0, None)
    if img.max() > 0:
        img /= img.max()
    return np.clip(img, 0.0, 1.0) * circular_fov(size)


def circular_fov(size: int) -> np.ndarray:
    """1 inside the disc of diameter ``size`` centred on the image, else 0."""
    if size < 1:
        raise ValueError("size must be positive")
    c = (size - 1) / 2.0
    i = np.arange(size)
    d2 = (i[:, None] - c) ** 2 + (i[None, :] - c) ** 2
    return (d2 <= (size / 2.0) ** 2).astype(np.float64)


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PGM (P2 or P5) as float64 counts."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    raw = path.read_bytes()
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path} is not a grayscale PGM")
    try:
        (_, w, h, maxval), offset = _pgm_tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad PGM header in {path}") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    if magic == b"P5":
        dtype = np.dtype(">u2" if maxval > 255 else "u1")
        if len(raw) - offset < w * h * dtype.itemsize:
            raise FormatError(f"truncated PGM payload in {path}")
        data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=offset)
    else:
        data = np.array(raw[offset:].split(), dtype=np.int64)
        if data.size < w * h:
            raise FormatError(f"truncated PGM payload in {path}")
        data = data[: w * h]
    return data.reshape(h, w).astype(np.float64)


def write_pgm(path, image, bits: int = 8) -> None:
    """Write an image with values in [0, 1] as binary PGM."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    maxval = 255 if bits == 8 else 65535
    q = np.round(image * maxval)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype("u1" if bits == 8 else ">u2").tobytes())


def write_csv(path, array) -> None:
    np.savetxt(path, np.atleast_1d(array), delimiter=",", fmt="%.17g")


def _resize_axis(img, new_len, axis):
    old_len = img.shape[axis]
    if old_len == new_len:
        return img
    # half-pixel centres
    pos = (np.arange(new_len) + 0.5) * old_len / new_len - 0.5
    pos = np.clip(pos, 0, old_len - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, old_len - 1)
    frac = pos - lo
    a = np.take(img, lo, axis=axis)
    b = np.take(img, hi, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = new_len
    frac = frac.reshape(shape)
    return a * (1 - frac) + b * frac


def resize_bilinear(img, size: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return _resize_axis(_resize_axis(img, size, 0), size, 1)


def ingest_image(path, spec: ImageSpec = ImageSpec()) -> np.ndarray:
    """Load a grayscale image, resize, min-max normalize, apply the FOV.

    PGM is read natively; PNG goes through Pillow when available.
    A constant image normalizes to all zeros.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise FormatError("PNG input needs Pillow") from exc
        try:
            with Image.open(path) as im:
                if im.mode not in ("L", "I;16", "I"):
                    raise FormatError(f"{path} is not single-channel (mode {im.mode})")
                img = np.asarray(im, dtype=np.float64)
        except OSError as exc:
            raise FormatError(f"cannot decode {path}: {exc}") from exc
    else:
        img = read_pgm(path)
    img = resize_bilinear(img, spec.size)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    if spec.fov:
        img = img * circular_fov(spec.size)
    return img


def sample_mask(n: int, ratio: float, seed=None) -> MaskSpec:
    """Observe ``round(ratio * n)`` indices drawn uniformly without replacement."""
    if not 0 < ratio <= 1:
        raise ValueError("sampling ratio must be in (0, 1]")
    count = int(np.floor(ratio * n + 0.5))
    if count == 0:
        raise ValueError(f"ratio {ratio} observes no samples of a length-{n} signal")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=count, replace=False))
    return MaskSpec(n, idx, seed)


def add_noise(x, spec: NoiseSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    return x + spec.alpha * rng.standard_normal(x.shape)
