"""Forward-backward splitting for the per-patch 1-D correction problem.

Each patch contributes a scalar correction ``c`` minimizing

    J(c) = curvature(u + c on patch) + (alpha * s / 2) * (c - f*)^2

The forward step has a closed form (mean of the tangent-plane distances for
the mean-curvature model, the T* vertical distance for the Gaussian one);
the backward step solves a three-anchor quadratic exactly.  One pass
already suffices for the mean model, so the default is a single iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tangent

__all__ = [
    "LocalProblem",
    "StepSchedule",
    "forward_step",
    "backward_step",
    "solve_local",
    "local_objective",
]


@dataclass(frozen=True)
class LocalProblem:
    """One patch's correction problem on a padded image.

    ``rect`` is the patch rectangle (r0, r1, c0, c1) in padded coordinates;
    the stencil of the layer must fit around the patch centre.
    """

    rect: tuple[int, int, int, int]
    layer: int
    f_star: float  # patch mean of (f - u)
    s: int  # patch pixel count
    alpha: float
    mode: str = "mean"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.s < 1:
            raise ValueError("patch pixel count must be at least 1")
        if self.mode not in ("mean", "gaussian"):
            raise ValueError(f"mode must be 'mean' or 'gaussian', got {self.mode!r}")

    @property
    def center(self) -> tuple[int, int]:
        r0, _, c0, _ = self.rect
        half = (2**self.layer - 1 - 1) // 2
        return (r0 + half, c0 + half)


class StepSchedule:
    """Diminishing step sizes: eta_0 = 1, eta_t = 1/sqrt(t) afterwards.

    Monotone to zero with divergent sum, as the convergence argument needs.
    """

    @staticmethod
    def eta(t: int) -> float:
        if t < 0:
            raise ValueError("step index must be non-negative")
        return 1.0 if t == 0 else 1.0 / math.sqrt(t)


def forward_step(u_pad: np.ndarray, problem: LocalProblem) -> float:
    """Closed-form curvature-decreasing correction at the patch centre."""
    if problem.mode == "mean":
        return tangent.mean_correction(
            tangent.distances(u_pad, problem.center, problem.layer)
        )
    return tangent.gaussian_correction(u_pad, problem.center, problem.layer)


def backward_step(c_t, c_half, eta_t: float, alpha: float, s, f_star):
    """Exact minimizer of the proximal quadratic around (c_t, c_half, f*).

    Works elementwise on arrays; ``s = 1`` recovers the single-pixel form.
    """
    w = alpha * eta_t * s
    return (c_t + c_half + w * f_star) / (2.0 + w)


def solve_local(u_pad: np.ndarray, problem: LocalProblem, max_inner: int = 1) -> float:
    """Run the splitting iteration and return the final correction.

    The forward solution does not depend on the running iterate, so it is
    computed once; the backward step is then relaxed ``max_inner`` times
    under the diminishing schedule.
    """
    if max_inner < 1:
        raise ValueError("need at least one inner iteration")
    c_half = forward_step(u_pad, problem)
    c = 0.0
    for t in range(max_inner):
        c = backward_step(c, c_half, StepSchedule.eta(t), problem.alpha, problem.s, problem.f_star)
    return c


def local_objective(u_pad: np.ndarray, problem: LocalProblem, c: float) -> float:
    """Evaluate J(c) for one patch.

    Patch sides are 2r - 1 while plane vertices sit at Chebyshev radius r,
    so a constant patch correction shifts only the centre height as far as
    the stencil is concerned; adding ``c`` at the centre is exact.
    """
    r, col = problem.center
    u_mod = u_pad.copy()
    u_mod[r, col] += c
    est = tangent.curvature_estimate(u_mod, (r, col), problem.layer)
    curv = abs(est.mean_h) if problem.mode == "mean" else abs(est.gauss_k)
    return curv + 0.5 * problem.alpha * problem.s * (c - problem.f_star) ** 2
