"""Outer solver loop: layer sweeps, four-colour updates, stopping rules.

One outer iteration sweeps the layers fine-to-coarse (half V-cycle).  On
each layer the four patch colours are visited in a fixed order; all patches
of one colour read the same snapshot of ``u`` taken at the start of the
colour sweep and write to disjoint pixel rectangles, so the result is
independent of how the patch solves are parallelized.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fbs, tangent
from .hierarchy import Partition, build_hierarchy, prolongate
from .image import Image, psnr
from .tangent import distance_fields, plane_set, solver_pad

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "ConvergenceTrace",
    "SolverDivergence",
    "denoise",
    "rel_err_energy",
    "rel_err_u",
]

COLOR_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


class SolverDivergence(RuntimeError):
    """Raised when the objective stops being finite."""


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the multi-grid solver; carries no randomness."""

    alpha: float = 0.06
    mode: str = "mean"
    layers: int = 3
    epsilon: float = 1e-6
    max_outer: int = 500
    inner_iters: int = 1
    stop_rule: str = "rel_energy"
    full_vcycle: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.mode not in ("mean", "gaussian"):
            raise ValueError(f"mode must be 'mean' or 'gaussian', got {self.mode!r}")
        if not 1 <= self.layers <= tangent.MAX_LAYER:
            raise ValueError(f"layers must be in [1, {tangent.MAX_LAYER}]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not 1 <= self.inner_iters <= 15:
            raise ValueError("inner_iters must be in [1, 15]")
        if self.stop_rule not in ("rel_energy", "rel_u"):
            raise ValueError(f"stop_rule must be 'rel_energy' or 'rel_u', got {self.stop_rule!r}")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be positive")

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get("CURVEMG_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    energy: float
    rel_energy: float
    rel_u: float
    seconds: float
    psnr: float | None = None


_TRACE_SCHEMA = "curvemg-trace-1"


@dataclass
class ConvergenceTrace:
    """Per-outer-iteration convergence log."""

    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration if self.records else 0

    @property
    def final_energy(self) -> float:
        return self.records[-1].energy

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    def to_csv(self, path) -> None:
        lines = [f"# schema={_TRACE_SCHEMA}", "iter,energy,rel_energy,rel_u,seconds,psnr"]
        for r in self.records:
            psnr_s = "" if r.psnr is None else repr(r.psnr)
            rel_e = "" if math.isnan(r.rel_energy) else repr(r.rel_energy)
            rel_u = "" if math.isnan(r.rel_u) else repr(r.rel_u)
            lines.append(f"{r.iteration},{r.energy!r},{rel_e},{rel_u},{r.seconds!r},{psnr_s}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ConvergenceTrace":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or lines[0] != f"# schema={_TRACE_SCHEMA}":
            raise ValueError(f"unrecognized trace schema in {path}")
        records = []
        for ln in lines[2:]:
            it, en, re_, ru, sec, ps = ln.split(",")
            records.append(
                TraceRecord(
                    iteration=int(it),
                    energy=float(en),
                    rel_energy=float(re_) if re_ else math.nan,
                    rel_u=float(ru) if ru else math.nan,
                    seconds=float(sec),
                    psnr=float(ps) if ps else None,
                )
            )
        return cls(records)


def rel_err_energy(f_new: float, f_old: float) -> float:
    """Relative change of the objective; |f_old| by convention when f_new is 0."""
    if f_new == 0.0:
        return abs(f_old)
    return abs(f_new - f_old) / abs(f_new)


def rel_err_u(u_new: np.ndarray, u_old: np.ndarray) -> float:
    """L1 relative change of the iterate."""
    denom = float(np.abs(u_new).sum())
    if denom == 0.0:
        raise ValueError("rel_err_u undefined for an all-zero iterate")
    return float(np.abs(np.asarray(u_new) - np.asarray(u_old)).sum()) / denom


def _rel_u_guarded(u_new: np.ndarray, u_old: np.ndarray) -> float:
    num = float(np.abs(u_new - u_old).sum())
    denom = float(np.abs(u_new).sum())
    if denom == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / denom


def _split_bands(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    step = -(-n // parts)
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


def color_corrections(
    u_pad: np.ndarray,
    fstar: np.ndarray,
    origin: tuple[int, int],
    stride: int,
    pset,
    config: SolverConfig,
    s: int,
    pool: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """Local FBS solves for every patch of one colour, vectorized.

    All patches read the same ``u_pad`` snapshot; sharding the rows across
    threads cannot change the result because every entry is an independent
    elementwise computation.
    """
    hc, wc = fstar.shape
    out = np.empty((hc, wc))
    row0, col0 = origin

    def run_band(lo: int, hi: int) -> None:
        band_origin = (row0 + lo * stride, col0)
        if config.mode == "mean":
            d = distance_fields(u_pad, band_origin, stride, (hi - lo, wc), pset)
            c_half = d.mean(axis=0)
        else:
            # Star plane from the vertical extremes; step by its perpendicular
            # distance, which is bounded on steep data and keeps the sweep
            # stable where the full vertical jump would not be.
            v = distance_fields(u_pad, band_origin, stride, (hi - lo, wc), pset, vertical=True)
            p = distance_fields(u_pad, band_origin, stride, (hi - lo, wc), pset)
            imin = np.argmin(v, axis=0)
            imax = np.argmax(v, axis=0)
            vmin = np.take_along_axis(v, imin[None], axis=0)[0]
            vmax = np.take_along_axis(v, imax[None], axis=0)[0]
            star = np.where(np.abs(vmin) <= np.abs(vmax), imin, imax)
            c_half = np.take_along_axis(p, star[None], axis=0)[0]
        c = np.zeros_like(c_half)
        for t in range(config.inner_iters):
            c = fbs.backward_step(c, c_half, fbs.StepSchedule.eta(t), config.alpha, s, fstar[lo:hi])
        out[lo:hi] = c

    if pool is None:
        run_band(0, hc)
    else:
        bands = _split_bands(hc, pool._max_workers)
        list(pool.map(lambda b: run_band(*b), bands))
    return out


def sweep_layer(
    u: np.ndarray,
    f_pad: np.ndarray,
    part: Partition,
    config: SolverConfig,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """One fine-layer visit: four colour sweeps, corrections applied in place."""
    pset = plane_set(part.layer)
    side = part.patch_side
    r = pset.radius
    m, n = part.image_shape
    mp, npad = part.padded_shape
    mj, nj = part.grid_shape
    pad_width = ((1, 1 + mp - m), (1, 1 + npad - n))
    s = side * side
    stride = 2 * side
    for p, q in COLOR_ORDER:
        u_pad = solver_pad(u, pad_width)
        diff = f_pad - u_pad
        blocks = diff[1 : 1 + mp, 1 : 1 + npad].reshape(mj, side, nj, side)
        fstar = blocks[p::2, :, q::2, :].mean(axis=(1, 3))
        origin = (1 + p * side + r - 1, 1 + q * side + r - 1)
        c = color_corrections(u_pad, fstar, origin, stride, pset, config, s, pool)
        cfull = np.zeros((mj, nj))
        cfull[p::2, q::2] = c
        u += prolongate(cfull, part, (m, n))


def layer_sequence(config: SolverConfig) -> list[int]:
    seq = list(range(1, config.layers + 1))
    if config.full_vcycle:
        seq += list(range(config.layers - 1, 0, -1))
    return seq


def denoise(
    f: Image, config: SolverConfig, reference: Image | None = None
) -> tuple[Image, ConvergenceTrace]:
    """Minimize the curvature energy of ``f`` by multi-grid subspace correction.

    Starts from u = f, sweeps layers fine-to-coarse each outer iteration and
    stops when the relative change of the objective (or of the iterate,
    depending on ``stop_rule``) drops below ``epsilon``.
    """
    m, n = f.shape
    parts = build_hierarchy(m, n, config.layers)
    f_arr = f.data
    f_pads = {}
    for part in parts:
        mp, npad = part.padded_shape
        f_pads[part.layer] = solver_pad(f_arr, ((1, 1 + mp - m), (1, 1 + npad - n)))
    u = f_arr.copy()

    n_threads = config.resolved_threads()
    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    t0 = time.perf_counter()
    trace = ConvergenceTrace()

    def record(iteration: int, f_val: float, rel_e: float, rel_u_val: float) -> None:
        ps = None
        if reference is not None:
            mse = float(np.mean((u - reference.data) ** 2))
            ps = math.inf if mse == 0.0 else 10.0 * math.log10(f.peak**2 / mse)
        trace.records.append(
            TraceRecord(iteration, f_val, rel_e, rel_u_val, time.perf_counter() - t0, ps)
        )

    try:
        f_val = tangent.energy(u, f_arr, config.alpha, config.mode)
        record(0, f_val, math.nan, math.nan)
        for outer in range(1, config.max_outer + 1):
            u_prev = u.copy()
            f_prev = f_val
            for j in layer_sequence(config):
                sweep_layer(u, f_pads[j], parts[j - 1], config, pool)
            f_val = tangent.energy(u, f_arr, config.alpha, config.mode)
            if not math.isfinite(f_val):
                raise SolverDivergence(f"objective became non-finite at outer iteration {outer}")
            rel_e = rel_err_energy(f_val, f_prev)
            rel_u_val = _rel_u_guarded(u, u_prev)
            record(outer, f_val, rel_e, rel_u_val)
            criterion = rel_e if config.stop_rule == "rel_energy" else rel_u_val
            if criterion <= config.epsilon:
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return Image(u, f.peak), trace
