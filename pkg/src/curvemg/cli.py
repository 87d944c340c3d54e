"""Command-line front end: denoise / ct / mri runs and scaling benchmarks.

A run is described by a flat JSON manifest; every CLI flag overrides the
matching manifest key.  All randomness is seeded through the manifest, so
a manifest fully determines the outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reconstruction as rec
from .driver import ConvergenceTrace, SolverConfig, SolverDivergence, denoise
from .image import (
    Image,
    MetricReport,
    NoiseSpec,
    add_gaussian_noise,
    phantom,
    psnr,
    read_csv,
    read_pgm,
    ssim,
    write_csv,
    write_pgm,
)
from .tangent import energy

__all__ = ["RunManifest", "run", "bench_scaling", "main"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_DIVERGED = 3


@dataclass
class RunManifest:
    """Everything one experiment needs; JSON round-trippable."""

    command: str = "denoise"
    input: str | None = None
    output_dir: str = "out"
    phantom: str | None = "triangle"
    size: int = 128
    sigma: float = 10.0
    seed: int = 0
    clip: bool = False
    alpha: float = 0.06
    mode: str = "mean"
    layers: int = 3
    epsilon: float = 1e-6
    max_outer: int = 500
    inner_iters: int = 1
    stop: str = "energy"
    full_vcycle: bool = False
    threads: int | None = None
    projections: int = 36
    ct_noise: float = 0.0
    mask: str = "radial"
    rate: float = 0.1265
    sizes: tuple[int, ...] = (128, 256)
    bench_iters: int = 50
    compare_layers: bool = False

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["sizes"] = list(self.sizes)
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        if "sizes" in data:
            data["sizes"] = tuple(data["sizes"])
        return cls(**data)

    def solver_config(self) -> SolverConfig:
        stop_rule = {"energy": "rel_energy", "u": "rel_u"}[self.stop]
        return SolverConfig(
            alpha=self.alpha,
            mode=self.mode,
            layers=self.layers,
            epsilon=self.epsilon,
            max_outer=self.max_outer,
            inner_iters=self.inner_iters,
            stop_rule=stop_rule,
            full_vcycle=self.full_vcycle,
            threads=self.threads,
        )


def _load_input(manifest: RunManifest) -> Image:
    if manifest.input:
        path = Path(manifest.input)
        if path.suffix == ".pgm":
            return read_pgm(path)
        return read_csv(path)
    if manifest.phantom:
        return phantom(manifest.phantom, manifest.size)
    raise ValueError("manifest needs either an input path or a phantom kind")


def _write_image(img: Image, stem: Path) -> None:
    # Integer-peak images go to PGM; unit-range data keeps full precision in CSV.
    if img.peak >= 255.0:
        write_pgm(img, stem.with_suffix(".pgm"))
    else:
        write_csv(img, stem.with_suffix(".csv"))


def _write_report(
    path: Path, manifest: RunManifest, report: MetricReport, converged: bool
) -> None:
    payload = {
        "command": manifest.command,
        "converged": converged,
        **report.to_dict(),
        "config": json.loads(manifest.to_json()),
    }
    path.write_text(json.dumps(payload, indent=2))


def _finish(
    manifest: RunManifest,
    out: Path,
    result: Image,
    reference: Image | None,
    trace: ConvergenceTrace,
    final_energy: float,
    wall: float,
) -> int:
    trace.to_csv(out / "trace.csv")
    _write_image(result, out / "restored")
    ps = psnr(result, reference) if reference is not None else float("nan")
    ss = ssim(result, reference) if reference is not None else float("nan")
    report = MetricReport(
        psnr=ps, ssim=ss, energy=final_energy, iterations=trace.iterations, wall_time=wall
    )
    _write_report(out / "report.json", manifest, report, trace.converged)
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def run_denoise(manifest: RunManifest, out: Path) -> int:
    clean = _load_input(manifest)
    noisy = add_gaussian_noise(clean, NoiseSpec(manifest.sigma, manifest.seed))
    if manifest.clip:
        noisy = Image(np.clip(noisy.data, 0.0, clean.peak), clean.peak)
    _write_image(noisy, out / "noisy")
    config = manifest.solver_config()
    t0 = time.perf_counter()
    result, trace = denoise(noisy, config, reference=clean)
    wall = time.perf_counter() - t0
    final = energy(result.data, noisy.data, config.alpha, config.mode)
    return _finish(manifest, out, result, clean, trace, final, wall)


def run_ct(manifest: RunManifest, out: Path) -> int:
    clean = _load_input(manifest)
    geometry = rec.RadonGeometry.for_image(clean.shape, manifest.projections)
    A = rec.RadonTransform(clean.shape, geometry)
    sino = A.forward(clean.data)
    if manifest.ct_noise > 0:
        rng = np.random.default_rng(manifest.seed)
        sino = sino + rng.normal(0.0, manifest.ct_noise * np.abs(sino).max(), sino.shape)
    rec.save_sinogram(sino, geometry, out / "sinogram.csv")
    config = manifest.solver_config()
    t0 = time.perf_counter()
    result, trace = rec.reconstruct(
        sino, A, config, reference=clean, peak=clean.peak, value_range=(0.0, clean.peak)
    )
    wall = time.perf_counter() - t0
    final = rec.reconstruction_energy(result.data, sino, A, config.alpha)
    return _finish(manifest, out, result, clean, trace, final, wall)


def run_mri(manifest: RunManifest, out: Path) -> int:
    clean = _load_input(manifest)
    if manifest.mask == "radial":
        mask = rec.radial_mask(clean.shape, manifest.rate)
    elif manifest.mask == "cartesian":
        mask = rec.cartesian_mask(clean.shape, manifest.rate, seed=manifest.seed)
    else:
        raise ValueError(f"mask must be 'radial' or 'cartesian', got {manifest.mask!r}")
    rec.mask_to_pgm(mask, out / "mask.pgm")
    A = rec.MaskedFourier(mask)
    kspace = A.forward(clean.data)
    if manifest.sigma > 0:
        rng = np.random.default_rng(manifest.seed)
        # sigma is quoted on the 0..255 intensity scale; rescale to the image peak
        scale = manifest.sigma * (clean.peak / 255.0)
        noise = rng.normal(0.0, scale / np.sqrt(2.0), (kspace.size, 2))
        kspace = kspace + noise[:, 0] + 1j * noise[:, 1]
    rec.save_kspace(kspace, mask, out / "kspace.csv")
    config = manifest.solver_config()
    t0 = time.perf_counter()
    result, trace = rec.reconstruct(kspace, A, config, reference=clean, peak=clean.peak)
    wall = time.perf_counter() - t0
    final = rec.reconstruction_energy(result.data, kspace, A, config.alpha)
    return _finish(manifest, out, result, clean, trace, final, wall)


def bench_scaling(manifest: RunManifest, out: Path) -> int:
    """Fixed-budget runs across sizes; reports per-size time and CPU ratios."""
    rows = []
    prev_time = None
    for size in manifest.sizes:
        clean = phantom(manifest.phantom or "triangle", size)
        noisy = add_gaussian_noise(clean, NoiseSpec(manifest.sigma, manifest.seed))
        config = SolverConfig(
            alpha=manifest.alpha,
            mode=manifest.mode,
            layers=manifest.layers,
            epsilon=1e-300,
            max_outer=manifest.bench_iters,
            inner_iters=manifest.inner_iters,
            threads=manifest.threads,
        )
        t0 = time.perf_counter()
        _, trace = denoise(noisy, config)
        elapsed = time.perf_counter() - t0
        ratio = float("nan") if prev_time is None else elapsed / prev_time
        prev_time = elapsed
        row = {
            "size": size,
            "pixels": size * size,
            "iterations": trace.iterations,
            "seconds": elapsed,
            "cpu_ratio": ratio,
        }
        if manifest.compare_layers:
            for layers in (1, 3):
                cfg = dataclasses.replace(config, layers=layers, max_outer=manifest.max_outer, epsilon=manifest.epsilon)
                _, tr = denoise(noisy, cfg)
                row[f"iters_J{layers}"] = tr.iterations
        rows.append(row)
        print(f"size {size}: {elapsed:.2f}s / {trace.iterations} iters (ratio {ratio:.2f})")
    header = list(rows[0].keys())
    lines = ["# schema=curvemg-bench-1", ",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[k]) for k in header))
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit status."""
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(manifest.to_json())
    handlers = {"denoise": run_denoise, "ct": run_ct, "mri": run_mri, "bench": bench_scaling}
    if manifest.command not in handlers:
        print(f"error: unknown command {manifest.command!r}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return handlers[manifest.command](manifest, out)
    except SolverDivergence as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvemg",
        description="Multi-grid curvature-energy minimization for denoising and reconstruction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("denoise", "ct", "mri", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--manifest", type=str, default=None, help="JSON manifest to start from")
        p.add_argument("--input", type=str, default=None)
        p.add_argument("--output-dir", type=str, default=None)
        p.add_argument("--phantom", type=str, default=None, choices=["shepp_logan", "triangle", "shapes"])
        p.add_argument("--size", type=int, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--mode", type=str, default=None, choices=["mean", "gaussian"])
        p.add_argument("--layers", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--max-outer", type=int, default=None)
        p.add_argument("--inner-iters", type=int, default=None)
        p.add_argument("--stop", type=str, default=None, choices=["energy", "u"])
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--full-vcycle", action="store_true", default=None)
        p.add_argument("--clip", action="store_true", default=None)
        if name == "ct":
            p.add_argument("--projections", type=int, default=None)
            p.add_argument("--ct-noise", type=float, default=None)
        if name == "mri":
            p.add_argument("--mask", type=str, default=None, choices=["radial", "cartesian"])
            p.add_argument("--rate", type=float, default=None)
        if name == "bench":
            p.add_argument("--sizes", type=str, default=None, help="comma-separated, e.g. 128,256,512")
            p.add_argument("--bench-iters", type=int, default=None)
            p.add_argument("--compare-layers", action="store_true", default=None)
    return parser


def manifest_from_args(argv: list[str]) -> RunManifest:
    args = vars(_build_parser().parse_args(argv))
    manifest_path = args.pop("manifest", None)
    manifest = (
        RunManifest.from_json(Path(manifest_path).read_text()) if manifest_path else RunManifest()
    )
    manifest.command = args.pop("command")
    if args.get("sizes") is not None:
        args["sizes"] = tuple(int(s) for s in args["sizes"].split(","))
    for key, value in args.items():
        if value is not None:
            setattr(manifest, key, value)
    if manifest.threads is None and os.environ.get("CURVEMG_THREADS"):
        manifest.threads = max(1, int(os.environ["CURVEMG_THREADS"]))
    return manifest


def main(argv: list[str] | None = None) -> None:
    manifest = manifest_from_args(sys.argv[1:] if argv is None else argv)
    sys.exit(run(manifest))
