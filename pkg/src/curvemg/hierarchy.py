"""Multi-grid partition of the pixel domain and its four-colouring.

Layer ``j`` tiles the (padded) domain with (2^j - 1) x (2^j - 1) patches.
The domain is extended to the next multiple of the patch side before
partitioning so every patch is complete; corrections computed on padded
pixels are dropped when mapping back.  Patches are indexed row-major from
the top-left and coloured by coordinate parity, which guarantees that
4-adjacent patches never share a colour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tangent import MAX_LAYER

__all__ = [
    "Partition",
    "ColorClasses",
    "build_hierarchy",
    "color",
    "restrict_fidelity",
    "prolongate",
]


@dataclass(frozen=True)
class Partition:
    """One layer's non-overlapping patch decomposition."""

    layer: int
    image_shape: tuple[int, int]

    @property
    def patch_side(self) -> int:
        return 2**self.layer - 1

    @property
    def grid_shape(self) -> tuple[int, int]:
        m, n = self.image_shape
        side = self.patch_side
        return (-(-m // side), -(-n // side))

    @property
    def padded_shape(self) -> tuple[int, int]:
        mj, nj = self.grid_shape
        return (mj * self.patch_side, nj * self.patch_side)

    @property
    def patch_count(self) -> int:
        mj, nj = self.grid_shape
        return mj * nj

    def patch_rect(self, i1: int, i2: int) -> tuple[int, int, int, int]:
        """(r0, r1, c0, c1) of patch (i1, i2) on the padded domain, half-open."""
        mj, nj = self.grid_shape
        if not (0 <= i1 < mj and 0 <= i2 < nj):
            raise IndexError(f"patch index ({i1}, {i2}) outside {self.grid_shape} grid")
        side = self.patch_side
        return (i1 * side, (i1 + 1) * side, i2 * side, (i2 + 1) * side)

    def patch_rect_clipped(self, i1: int, i2: int) -> tuple[int, int, int, int]:
        """Patch rectangle intersected with the original image domain."""
        r0, r1, c0, c1 = self.patch_rect(i1, i2)
        m, n = self.image_shape
        return (min(r0, m), min(r1, m), min(c0, n), min(c1, n))

    def patch_center(self, i1: int, i2: int) -> tuple[int, int]:
        r0, _, c0, _ = self.patch_rect(i1, i2)
        half = (self.patch_side - 1) // 2
        return (r0 + half, c0 + half)


@dataclass(frozen=True)
class ColorClasses:
    """Four disjoint patch-index groups; same-colour patches are never 4-adjacent."""

    classes: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...], tuple[int, ...]]


def build_hierarchy(m: int, n: int, layers: int) -> list[Partition]:
    """Partitions for layers 1..layers over an m x n image."""
    if m < 1 or n < 1:
        raise ValueError("image dimensions must be positive")
    if layers < 1:
        raise ValueError("need at least one layer")
    if layers > MAX_LAYER:
        raise ValueError(f"at most {MAX_LAYER} layers supported (plane enumeration cap)")
    return [Partition(j, (m, n)) for j in range(1, layers + 1)]


def color_of(i1: int, i2: int) -> int:
    return 2 * (i1 % 2) + (i2 % 2)


def color(partition: Partition) -> ColorClasses:
    """Parity colouring of the patch grid."""
    mj, nj = partition.grid_shape
    groups: list[list[int]] = [[], [], [], []]
    for i1 in range(mj):
        for i2 in range(nj):
            groups[color_of(i1, i2)].append(i1 * nj + i2)
    return ColorClasses(tuple(tuple(g) for g in groups))


def restrict_fidelity(f: np.ndarray, u: np.ndarray, rect: tuple[int, int, int, int]):
    """Patch-average residual: (mean of f - u over the patch, pixel count)."""
    r0, r1, c0, c1 = rect
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty patch rectangle {rect}")
    block = f[r0:r1, c0:c1] - u[r0:r1, c0:c1]
    return float(block.mean()), block.size


def prolongate(c: np.ndarray, partition: Partition, shape: tuple[int, int]) -> np.ndarray:
    """Piecewise-constant injection of per-patch corrections, cropped to ``shape``."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != partition.grid_shape:
        raise ValueError(f"correction grid {c.shape} does not match {partition.grid_shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("corrections must be finite")
    side = partition.patch_side
    full = np.repeat(np.repeat(c, side, axis=0), side, axis=1)
    return full[: shape[0], : shape[1]]


def block_mean(arr: np.ndarray, side: int) -> np.ndarray:
    """Mean over non-overlapping side x side blocks; dims must be multiples of side."""
    m, n = arr.shape
    return arr.reshape(m // side, side, n // side, side).mean(axis=(1, 3))


def block_sum_clipped(arr: np.ndarray, partition: Partition) -> np.ndarray:
    """Per-patch sums of an image-domain array (padded region counts as zero)."""
    mp, np_ = partition.padded_shape
    m, n = arr.shape
    padded = np.zeros((mp, np_))
    padded[:m, :n] = arr
    side = partition.patch_side
    return padded.reshape(mp // side, side, np_ // side, side).sum(axis=(1, 3))
