"""Local tangent-plane geometry of the image surface.

Every pixel (k1, k2, u[k1, k2]) is treated as a point on a surface.  A
tangent plane is spanned by three neighbouring surface points; the signed
distance of the centre point from each plane drives both the
mean-curvature correction (average of the distances) and the
Gaussian-curvature correction (move the centre onto the plane whose normal
curvature is smallest in magnitude).

Layer ``j`` enumerates 2^(j+2) planes over a (2^j + 1)-wide stencil: all
planes of the previous layer plus one pair of planes per opposite
point-pair of the Chebyshev ring of radius 2^(j-1) in each direction not
yet covered.  Layer 1 is the eight planes of the 3x3 neighbourhood; every
set is closed under point reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .image import Image

__all__ = [
    "MAX_LAYER",
    "TangentPlane",
    "TangentPlaneSet",
    "CurvatureEstimate",
    "plane_set",
    "plane_distance",
    "distances",
    "mean_correction",
    "normal_curvatures",
    "curvature_estimate",
    "gaussian_correction",
    "energy",
    "solver_pad",
]

MAX_LAYER = 6


@dataclass(frozen=True)
class TangentPlane:
    """Plane through three neighbour offsets (row, col) relative to the centre.

    The vertex order is normalized so the plane normal ``XZ x XY`` has a
    negative z-component: positive distances then mean the plane lies above
    the centre point, so adding the correction moves the surface toward it.
    """

    x: tuple[int, int]
    y: tuple[int, int]
    z: tuple[int, int]
    ds2: float  # squared grid arc-length of the primary neighbour offset

    @property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        return (self.x, self.y, self.z)

    @property
    def nz(self) -> int:
        dy0, dy1 = self.y[0] - self.x[0], self.y[1] - self.x[1]
        dz0, dz1 = self.z[0] - self.x[0], self.z[1] - self.x[1]
        return dz0 * dy1 - dz1 * dy0


@dataclass(frozen=True)
class TangentPlaneSet:
    layer: int
    planes: tuple[TangentPlane, ...]

    @property
    def count(self) -> int:
        return len(self.planes)

    @property
    def radius(self) -> int:
        """Chebyshev radius of the stencil: 2^(layer-1)."""
        return 2 ** (self.layer - 1)

    @property
    def ds2_array(self) -> np.ndarray:
        return np.array([p.ds2 for p in self.planes])


def _rot90(p: tuple[int, int]) -> tuple[int, int]:
    # +90 degrees in image coordinates (row grows downward).
    return (-p[1], p[0])


@lru_cache(maxsize=None)
def plane_set(layer: int) -> TangentPlaneSet:
    """Enumerate the 2^(layer+2) tangent planes of the given layer.

    Layer 1: one opposite point-pair of the 3x3 ring per direction, each
    paired with its two perpendicular companions (eight planes).  Coarser
    layers keep every plane of the previous layer and add the opposite
    pairs of the radius-2^(layer-1) ring whose directions are new, which
    doubles the count.  Deterministic order: inherited planes first, new
    pairs sorted by angle.
    """
    if not 1 <= layer <= MAX_LAYER:
        raise ValueError(f"layer must be in [1, {MAX_LAYER}], got {layer}")
    planes: list[TangentPlane] = [] if layer == 1 else list(plane_set(layer - 1).planes)
    have = set()
    for pl in planes:
        g = math.gcd(abs(pl.x[0]), abs(pl.x[1]))
        have.add((pl.x[0] // g, pl.x[1] // g))
    r = 2 ** (layer - 1)
    ring = [
        (dr, dc)
        for dr in range(-r, r + 1)
        for dc in range(-r, r + 1)
        if max(abs(dr), abs(dc)) == r
    ]
    reps = [p for p in ring if p[0] < 0 or (p[0] == 0 and p[1] > 0)]
    reps.sort(key=lambda p: math.atan2(-p[0], p[1]))
    for p in reps:
        g = math.gcd(abs(p[0]), abs(p[1]))
        if (p[0] // g, p[1] // g) in have:
            continue
        q = _rot90(p)
        neg = (-p[0], -p[1])
        ds2 = float(p[0] * p[0] + p[1] * p[1])
        planes.append(TangentPlane(p, q, neg, ds2))
        planes.append(TangentPlane(p, neg, (-q[0], -q[1]), ds2))
    pset = TangentPlaneSet(layer, tuple(planes))
    assert all(pl.nz < 0 for pl in pset.planes)
    return pset


def _as_array(u) -> np.ndarray:
    return u.data if isinstance(u, Image) else np.asarray(u, dtype=np.float64)


def _raw_and_norms(u, center, plane):
    r, c = center
    ux = u[r + plane.x[0], c + plane.x[1]]
    uy = u[r + plane.y[0], c + plane.y[1]]
    uz = u[r + plane.z[0], c + plane.z[1]]
    uo = u[r, c]
    dy0, dy1 = plane.y[0] - plane.x[0], plane.y[1] - plane.x[1]
    dz0, dz1 = plane.z[0] - plane.x[0], plane.z[1] - plane.x[1]
    p = uy - ux
    q = uz - ux
    w = uo - ux
    nx = dz1 * p - dy1 * q
    ny = dy0 * q - dz0 * p
    nz = dz0 * dy1 - dz1 * dy0
    raw = -plane.x[0] * nx - plane.x[1] * ny + nz * w
    return raw, math.sqrt(nx * nx + ny * ny + nz * nz), nz


def plane_distance(u, center: tuple[int, int], plane: TangentPlane) -> float:
    """Signed distance of the centre surface point from one tangent plane.

    ``u`` must already be padded so that all plane offsets stay in bounds.
    Affine images give exactly zero; negating the image negates the value.
    """
    raw, norm, nz = _raw_and_norms(_as_array(u), center, plane)
    assert nz != 0, "degenerate plane: collinear vertex offsets"
    return raw / norm


def _vertical_distance(u, center, plane) -> float:
    """Height change that puts the centre exactly onto the plane."""
    raw, _, nz = _raw_and_norms(_as_array(u), center, plane)
    return raw / (-nz)


def distances(u, center: tuple[int, int], layer: int) -> np.ndarray:
    """All signed plane distances at one pixel, ordered like ``plane_set(layer)``."""
    arr = _as_array(u)
    pset = plane_set(layer)
    return np.array([plane_distance(arr, center, pl) for pl in pset.planes])


def vertical_distances(u, center: tuple[int, int], layer: int) -> np.ndarray:
    """Z-axis deviations of the centre from each plane (curvature estimates)."""
    arr = _as_array(u)
    pset = plane_set(layer)
    return np.array([_vertical_distance(arr, center, pl) for pl in pset.planes])


def mean_correction(d: np.ndarray) -> float:
    """Optimal flattening correction: the arithmetic mean of the distances."""
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty distance vector")
    return float(d.mean())


def normal_curvatures(d: np.ndarray, pset: TangentPlaneSet) -> np.ndarray:
    """Normal curvature estimates: distance over squared arc-length per plane."""
    d = np.asarray(d, dtype=np.float64)
    if d.size != pset.count:
        raise ValueError("distance vector does not match plane set")
    return d / pset.ds2_array


@dataclass(frozen=True)
class CurvatureEstimate:
    """Principal-curvature summary at one pixel.

    Curvatures are z-axis plane deviations over squared arc-length, the
    finite-difference normal-curvature estimate.  ``star_index`` is the
    plane with the extreme deviation of smaller magnitude: it carries the
    smaller-magnitude principal curvature whenever the arc-lengths agree,
    and a constant correction keeps it extremal, which is what makes the
    Gaussian correction land exactly on zero curvature.
    """

    kappa_min: float
    kappa_max: float
    mean_h: float
    gauss_k: float
    star_index: int


def curvature_estimate(u, center: tuple[int, int], layer: int) -> CurvatureEstimate:
    """Min/max normal curvature, mean and Gaussian curvature, and the T* plane.

    Ties on the two candidate star planes resolve to the minimum side.
    """
    pset = plane_set(layer)
    dvert = vertical_distances(u, center, layer)
    kappas = normal_curvatures(dvert, pset)
    kmin, kmax = float(kappas.min()), float(kappas.max())
    imin = int(np.argmin(dvert))
    imax = int(np.argmax(dvert))
    star = imin if abs(dvert[imin]) <= abs(dvert[imax]) else imax
    return CurvatureEstimate(
        kappa_min=kmin,
        kappa_max=kmax,
        mean_h=0.5 * (kmin + kmax),
        gauss_k=kmin * kmax,
        star_index=star,
    )


def gaussian_correction(u, center: tuple[int, int], layer: int) -> float:
    """Correction that zeroes the Gaussian-curvature estimate.

    Moves the centre height onto the star plane.  All plane deviations then
    share one sign with the star at zero, so zero is an endpoint of the
    curvature range and the re-estimated Gaussian curvature is exactly 0.
    """
    arr = _as_array(u)
    est = curvature_estimate(arr, center, layer)
    return _vertical_distance(arr, center, plane_set(layer).planes[est.star_index])


# ---------------------------------------------------------------------------
# Vectorized field evaluation (shared by the energy and the sweep drivers)
# ---------------------------------------------------------------------------


def solver_pad(arr: np.ndarray, pad_width) -> np.ndarray:
    """Boundary extension used by the solver and the energy.

    Odd (linearly extrapolating) reflection: it continues affine images
    exactly, so flat and ramp images carry zero curvature up to the border
    and are true fixed points of the solvers.
    """
    return np.pad(arr, pad_width, mode="reflect", reflect_type="odd")


def distance_fields(
    u_pad: np.ndarray,
    origin: tuple[int, int],
    stride: int,
    shape: tuple[int, int],
    pset: TangentPlaneSet,
    vertical: bool = False,
) -> np.ndarray:
    """Plane distances on a regular grid of centres, one layer per plane.

    ``origin`` indexes the first centre inside ``u_pad``; centres advance by
    ``stride``.  Returns an array of shape (plane count, *shape).  With
    ``vertical=True`` the z-axis distances are returned instead of the
    perpendicular ones.
    """
    h, w = shape
    r0, c0 = origin

    def grid(dr: int, dc: int) -> np.ndarray:
        r, c = r0 + dr, c0 + dc
        return u_pad[r : r + stride * h : stride, c : c + stride * w : stride]

    uo = grid(0, 0)
    out = np.empty((pset.count, h, w))
    for i, pl in enumerate(pset.planes):
        ux = grid(*pl.x)
        p = grid(*pl.y) - ux
        q = grid(*pl.z) - ux
        dy0, dy1 = pl.y[0] - pl.x[0], pl.y[1] - pl.x[1]
        dz0, dz1 = pl.z[0] - pl.x[0], pl.z[1] - pl.x[1]
        nx = dz1 * p - dy1 * q
        ny = dy0 * q - dz0 * p
        nz = dz0 * dy1 - dz1 * dy0
        raw = -pl.x[0] * nx - pl.x[1] * ny + nz * (uo - ux)
        if vertical:
            out[i] = raw / (-nz)
        else:
            out[i] = raw / np.sqrt(nx * nx + ny * ny + nz * nz)
    return out


def curvature_field(u: np.ndarray, mode: str) -> np.ndarray:
    """Per-pixel |H| or |K| at layer 1, on the full image."""
    pset = plane_set(1)
    u_pad = solver_pad(np.asarray(u, dtype=np.float64), 1)
    d = distance_fields(u_pad, (1, 1), 1, u.shape, pset, vertical=True)
    kappas = d / pset.ds2_array[:, None, None]
    kmin = kappas.min(axis=0)
    kmax = kappas.max(axis=0)
    if mode == "mean":
        return np.abs(0.5 * (kmin + kmax))
    if mode == "gaussian":
        return np.abs(kmin * kmax)
    raise ValueError(f"mode must be 'mean' or 'gaussian', got {mode!r}")


def energy(u, f, alpha: float, mode: str = "mean") -> float:
    """Total discrete energy: curvature magnitude sum plus quadratic fidelity.

    The curvature term always uses the layer-1 (3x3) estimates, matching the
    single scalar used by the stopping rule.
    """
    ua, fa = _as_array(u), _as_array(f)
    if ua.shape != fa.shape:
        raise ValueError(f"shape mismatch: {ua.shape} vs {fa.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    curv = curvature_field(ua, mode).sum()
    fidelity = 0.5 * alpha * float(((ua - fa) ** 2).sum())
    return float(curv) + fidelity
