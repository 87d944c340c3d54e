"""curvemg: multi-grid curvature-energy minimization for imaging problems."""

from .driver import (
    ConvergenceTrace,
    SolverConfig,
    SolverDivergence,
    denoise,
    rel_err_energy,
    rel_err_u,
)
from .fbs import LocalProblem, StepSchedule, backward_step, forward_step, solve_local
from .hierarchy import ColorClasses, Partition, build_hierarchy, color, prolongate, restrict_fidelity
from .image import (
    Image,
    MetricReport,
    NoiseSpec,
    add_gaussian_noise,
    pad_symmetric,
    phantom,
    psnr,
    read_csv,
    read_pgm,
    ssim,
    write_csv,
    write_pgm,
)
from .tangent import (
    CurvatureEstimate,
    TangentPlane,
    TangentPlaneSet,
    curvature_estimate,
    distances,
    energy,
    gaussian_correction,
    mean_correction,
    normal_curvatures,
    plane_distance,
    plane_set,
)

__version__ = "0.1.0"
