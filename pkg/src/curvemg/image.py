"""Image container, padding, phantoms, noise injection and quality metrics.

Images are immutable value objects: a 2-D float64 intensity grid plus the
declared dynamic range (``peak``).  All functions here are pure, so images
can be shared freely between threads.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Image",
    "NoiseSpec",
    "MetricReport",
    "pad_symmetric",
    "add_gaussian_noise",
    "psnr",
    "ssim",
    "phantom",
    "read_pgm",
    "write_pgm",
    "read_csv",
    "write_csv",
]


@dataclass(frozen=True)
class Image:
    """Dense 2-D scalar field with a declared intensity range.

    Parameters
    ----------
    data : np.ndarray
        Row-major (height, width) array; converted to read-only float64.
    peak : float
        Declared dynamic range: 255.0 for denoising work, 1.0 for CT/MRI.
    """

    data: np.ndarray
    peak: float = 255.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("image must contain at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if self.peak <= 0:
            raise ValueError("peak must be positive")
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise: std deviation in intensity units + PRNG seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class MetricReport:
    """Quality/effort summary of one solver run."""

    psnr: float
    ssim: float
    energy: float
    iterations: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "energy": self.energy,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
        }


def pad_symmetric(img: Image, margin: int) -> Image:
    """Mirror-pad an image by ``margin`` pixels on every side.

    The border is filled by edge-inclusive reflection: a row ``[1, 2, 3]``
    padded by one becomes ``[1, 1, 2, 3, 3]``.  ``margin=0`` is the identity.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin == 0:
        return img
    out = np.pad(img.data, margin, mode="symmetric")
    return Image(out, img.peak)


def add_gaussian_noise(img: Image, spec: NoiseSpec) -> Image:
    """Add zero-mean white Gaussian noise, deterministic for a given seed.

    Values are NOT clipped to the dynamic range; clipping is a separate,
    optional post-step.
    """
    if spec.sigma == 0.0:
        return img
    rng = np.random.default_rng(spec.seed)
    noisy = img.data + rng.normal(0.0, spec.sigma, size=img.data.shape)
    return Image(noisy, img.peak)


_PSNR_INFINITE = float("inf")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB; returns ``inf`` for identical images."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.peak != b.peak:
        raise ValueError(f"peak mismatch: {a.peak} vs {b.peak}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return _PSNR_INFINITE
    return 10.0 * math.log10(a.peak * a.peak / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(arr: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable weighted local mean, valid windows only."""
    k = w.size
    rows = sum(w[i] * arr[i : arr.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(w[i] * rows[:, i : arr.shape[1] - k + 1 + i] for i in range(k))


def ssim(a: Image, b: Image) -> float:
    """Mean structural similarity over 11x11 Gaussian-weighted windows.

    Uses the de-facto standard constants: window sigma 1.5, K1=0.01,
    K2=0.03, L = declared peak.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    x, y = a.data, b.data
    mu_x = _filter_valid(x, w)
    mu_y = _filter_valid(y, w)
    var_x = _filter_valid(x * x, w) - mu_x * mu_x
    var_y = _filter_valid(y * y, w) - mu_y * mu_y
    cov = _filter_valid(x * y, w) - mu_x * mu_y
    c1 = (_SSIM_K1 * a.peak) ** 2
    c2 = (_SSIM_K2 * a.peak) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Synthetic phantoms
# ---------------------------------------------------------------------------

# Modified Shepp-Logan ellipses: (added value, a, b, x0, y0, angle in degrees).
# Intensities stay inside [0, 1]; the classic table would overshoot.
_SHEPP_LOGAN = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6050, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def _shepp_logan(size: int) -> np.ndarray:
    xs = -1.0 + (2.0 * np.arange(size) + 1.0) / size
    ys = 1.0 - (2.0 * np.arange(size) + 1.0) / size
    X, Y = np.meshgrid(xs, ys)
    img = np.zeros((size, size))
    for value, a, b, x0, y0, deg in _SHEPP_LOGAN:
        phi = math.radians(deg)
        xr = (X - x0) * math.cos(phi) + (Y - y0) * math.sin(phi)
        yr = -(X - x0) * math.sin(phi) + (Y - y0) * math.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def _half_plane(X, Y, p0, p1):
    return (X - p0[0]) * (p1[1] - p0[1]) - (Y - p0[1]) * (p1[0] - p0[0])


def _triangle(size: int) -> np.ndarray:
    # Piecewise-constant: background, one large triangle, one square block.
    cols = np.arange(size, dtype=np.float64) / size
    rows = np.arange(size, dtype=np.float64) / size
    X, Y = np.meshgrid(cols, rows)
    img = np.full((size, size), 60.0)
    v0, v1, v2 = (0.50, 0.12), (0.88, 0.80), (0.12, 0.72)
    s0 = _half_plane(X, Y, v0, v1)
    s1 = _half_plane(X, Y, v1, v2)
    s2 = _half_plane(X, Y, v2, v0)
    inside = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
    img[inside] = 200.0
    img[(Y >= 0.06) & (Y <= 0.22) & (X >= 0.06) & (X <= 0.30)] = 140.0
    return img


def _shapes(size: int) -> np.ndarray:
    # Several flat regions with straight edges; substitute for a public
    # multi-object test scene.
    cols = np.arange(size, dtype=np.float64) / size
    rows = np.arange(size, dtype=np.float64) / size
    X, Y = np.meshgrid(cols, rows)
    img = np.full((size, size), 40.0)
    img[(Y >= 0.10) & (Y <= 0.45) & (X >= 0.08) & (X <= 0.40)] = 120.0
    img[np.abs(X - 0.68) + np.abs(Y - 0.30) <= 0.18] = 220.0
    img[(Y >= 0.60) & (Y <= 0.90) & (X >= 0.15) & (X <= 0.85) & (np.abs(X - Y) <= 0.22)] = 180.0
    img[(Y >= 0.70) & (Y <= 0.78) & (X >= 0.55) & (X <= 0.92)] = 90.0
    return img


_PHANTOMS = {
    "shepp_logan": (_shepp_logan, 1.0),
    "triangle": (_triangle, 255.0),
    "shapes": (_shapes, 255.0),
}


def phantom(kind: str, size: int) -> Image:
    """Rasterize a deterministic analytic phantom at the given size.

    ``shepp_logan`` uses the modified ellipse table with intensities in
    [0, 1]; ``triangle`` and ``shapes`` are piecewise-constant scenes on the
    [0, 255] range.
    """
    if kind not in _PHANTOMS:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {sorted(_PHANTOMS)}")
    if size < 32:
        raise ValueError("phantom size must be at least 32")
    fn, peak = _PHANTOMS[kind]
    return Image(fn(size), peak)


# ---------------------------------------------------------------------------
# File formats: binary PGM (P5, 8/16-bit) and raw float64 CSV + JSON sidecar
# ---------------------------------------------------------------------------


def write_pgm(img: Image, path: str | Path, bits: int = 8) -> None:
    """Write binary PGM, mapping [0, peak] linearly to [0, maxval]."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    scaled = np.clip(np.rint(img.data * (maxval / img.peak)), 0, maxval)
    arr = scaled.astype(">u2" if bits == 16 else "u1")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def read_pgm(path: str | Path) -> Image:
    """Read a binary PGM (P5); the stored maxval becomes the image peak."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        match = re.match(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)", raw[pos:])
        if match is None:
            raise ValueError(f"truncated PGM header in {path}")
        tokens.append(match.group(1))
        pos += match.end()
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = raw[pos + 1 :]
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(data, dtype=dtype, count=width * height)
    return Image(pixels.reshape(height, width).astype(np.float64), float(maxval))


def write_csv(img: Image, path: str | Path) -> None:
    """Write one CSV row per image row, full float64 precision, plus a JSON sidecar."""
    path = Path(path)
    np.savetxt(path, img.data, delimiter=",", fmt="%.17g")
    sidecar = {"peak": img.peak, "width": img.width, "height": img.height}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def read_csv(path: str | Path) -> Image:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    sidecar = path.with_suffix(path.suffix + ".json")
    peak = 255.0
    if sidecar.exists():
        peak = float(json.loads(sidecar.read_text())["peak"])
    return Image(data, peak)
