"""Executable checks of the statistical identities behind the estimator.

Each check builds both sides of one theoretical statement (second-moment
identity, ensemble/spatial equivalence, paraxial convergence, local
stationarity) from scratch and reports measured vs expected values with a
pass flag.  Tolerances are parameters with engineering defaults; every
report carries the raw numbers so they can be tightened from data.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientSamples, InvalidSpec
from .estimator import GuideStarSpec, build_K_matrix, ensemble_variance_estimate, spatial_variance_estimate
from .forward import assemble_reflection_matrix
from .imaging import (
    ImagingConfig,
    confocal_image_points,
    eta_scaled_config,
    g_kernel,
    phi_c,
    psf_paraxial,
    psf_points,
    psf_source_points,
    psi_c,
)
from .medium import MediumSpec, covariance_integral, sample_matern, shift_realization


@dataclass
class ValidationReport:
    """Outcome of one check: measured vs expected under a relative tolerance."""

    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    runtime_s: float
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
            "runtime_s": self.runtime_s,
            "details": self.details,
        }


def _child_spec(spec: MediumSpec, n: int) -> MediumSpec:
    child = int(np.random.SeedSequence((spec.seed, n)).generate_state(1)[0])
    return replace(spec, seed=child)


def check_variance_identity(
    med_spec: MediumSpec,
    cfg: ImagingConfig,
    z,
    n_realizations: int = 100,
    ratio_band: float = 2.0,
    grid_halfwidth: tuple = (4e-3, 1.5e-3),
) -> ValidationReport:
    """Monte-Carlo Var[I^c(z)] against the second-moment identity.

    The identity: Var[I^c(z)] = (integral of the index covariance) times
    the integral of |F^c(z, y)|^2 over the dual focal spot.  The covariance
    integral comes from the medium module's closed form; |F|^2 is summed on
    a grid of lambda_c/8 spacing covering +-grid_halfwidth around the spot
    centre phi_c^{-1}(z).
    """
    if n_realizations < 50:
        raise InsufficientSamples("variance identity wants >= 50 realizations")
    t0 = time.perf_counter()
    z = np.asarray(z, dtype=float)

    vals = np.empty(n_realizations, dtype=complex)
    intensity = 0.0
    for n in range(n_realizations):
        real = sample_matern(_child_spec(med_spec, n))
        m = assemble_reflection_matrix(real, cfg.probe, cfg.bw)
        vals[n] = confocal_image_points(m, cfg.c, z[None, :])[0]
        intensity += real.intensity
    intensity /= n_realizations
    # E[I] = 0 exactly (zero-mean contrasts), so mean power estimates the variance
    mc_var = float(np.mean(np.abs(vals) ** 2))

    step = cfg.wavelength_c / 8.0
    center = phi_c(z, cfg.c, cfg.c_star, direction="inverse")
    ys = [
        np.arange(center[0] - grid_halfwidth[0], center[0] + grid_halfwidth[0] + step / 2, step),
        np.arange(center[1] - grid_halfwidth[1], center[1] + grid_halfwidth[1] + step / 2, step),
    ]
    gy, gz = np.meshgrid(ys[0], ys[1], indexing="ij")
    ypts = np.column_stack([gy.ravel(), gz.ravel()])
    f_vals = psf_source_points(z, ypts, cfg)
    kernel_l2 = float(np.sum(np.abs(f_vals) ** 2) * step * step)
    analytic = covariance_integral(med_spec, intensity=intensity) * kernel_l2

    ratio = mc_var / analytic if analytic > 0 else np.inf
    elapsed = time.perf_counter() - t0
    return ValidationReport(
        name="variance_identity",
        measured=ratio,
        expected=1.0,
        tolerance=ratio_band,
        passed=bool(1.0 / ratio_band <= ratio <= ratio_band),
        runtime_s=elapsed,
        details={
            "mc_variance": mc_var,
            "analytic_variance": analytic,
            "n_realizations": n_realizations,
            "mean_intensity": intensity,
        },
    )


def check_spatial_vs_ensemble(
    med_spec: MediumSpec,
    guide: GuideStarSpec,
    cfg: ImagingConfig,
    n_realizations: int = 100,
    tolerance: float = 0.3,
    spatial_seed_index: int = 0,
) -> ValidationReport:
    """Relative L2 distance between one-realization F_j and ensemble V_j."""
    if n_realizations < 2:
        raise InsufficientSamples("need >= 2 realizations for the ensemble side")
    t0 = time.perf_counter()
    v = ensemble_variance_estimate(med_spec, n_realizations, guide, cfg)

    real = sample_matern(_child_spec(med_spec, spatial_seed_index))
    m = assemble_reflection_matrix(real, cfg.probe, cfg.bw)
    K = build_K_matrix(m, guide, cfg)
    f = spatial_variance_estimate(K, guide.c_grid).F

    distance = float(np.linalg.norm(f - v) / np.linalg.norm(v))
    elapsed = time.perf_counter() - t0
    return ValidationReport(
        name="spatial_vs_ensemble",
        measured=distance,
        expected=0.0,
        tolerance=tolerance,
        passed=bool(distance <= tolerance),
        runtime_s=elapsed,
        details={
            "argmax_spatial": float(guide.c_grid[int(np.argmax(f))]),
            "argmax_ensemble": float(guide.c_grid[int(np.argmax(v))]),
            "n_shifts": guide.n_shifts,
            "n_realizations": n_realizations,
        },
    )


def check_paraxial_convergence(
    base_cfg: ImagingConfig,
    eta_levels=(1.0, 0.5, 0.25),
    y0=None,
    tolerance: float = 0.15,
) -> ValidationReport:
    """Paraxial-vs-bruteforce PSF error must decay along the eta family.

    Evaluated at the matched speed c = c_star, where the comparison
    isolates the paraxial truncation (discrete-element bias cancels).
    Offsets track the shrinking focal spot (sqrt(eta) transverse, eta
    axial).
    """
    if len(eta_levels) < 3 or np.any(np.diff(eta_levels) >= 0):
        raise InvalidSpec("need >= 3 strictly decreasing eta levels")
    t0 = time.perf_counter()
    if y0 is None:
        y0 = np.array([0.0, 0.045])
    y0 = np.asarray(y0, dtype=float)
    base = base_cfg.with_c(base_cfg.c_star)
    offsets = np.array([
        [0.0, 0.0],
        [1e-4, 0.0],
        [0.0, 1e-4],
        [5e-5, -5e-5],
        [2e-4, 1e-4],
    ])
    errors = []
    for eta in eta_levels:
        cfg = eta_scaled_config(base, eta)
        worst = 0.0
        for dx, dz in offsets:
            d = np.array([dx * np.sqrt(eta), dz * eta])
            target = phi_c(y0, cfg.c, cfg.c_star) + d
            brute = psf_points(y0, target[None, :], cfg)[0]
            parax = psf_paraxial(y0, d, cfg)
            worst = max(worst, abs(parax - brute) / abs(brute))
        errors.append(worst)
    decreasing = bool(np.all(np.diff(errors) < 0))
    finest_ok = errors[-1] <= tolerance
    elapsed = time.perf_counter() - t0
    return ValidationReport(
        name="paraxial_convergence",
        measured=float(errors[-1]),
        expected=0.0,
        tolerance=tolerance,
        passed=bool(decreasing and finest_ok),
        runtime_s=elapsed,
        details={"eta_levels": list(eta_levels), "max_rel_errors": errors,
                 "strictly_decreasing": decreasing},
    )


def check_local_stationarity(
    med_spec: MediumSpec,
    cfg: ImagingConfig,
    t0: float,
    dz,
    eta_levels=(1.0, 0.5, 0.25),
    tolerance: float = 0.2,
) -> ValidationReport:
    """Shifted-pixel value vs same pixel on the counter-shifted medium.

    Compares I^c(z(c) + dz_eta) on the realization with I^c(z(c)) on
    shift_realization(., phi_c^{-1}(dz_eta)); dz_eta = eta * dz per the
    local-stationarity scaling.  The error must fall below `tolerance` at
    the finest level and decay monotonically.
    """
    if len(eta_levels) < 2 or np.any(np.diff(eta_levels) >= 0):
        raise InvalidSpec("need >= 2 strictly decreasing eta levels")
    start = time.perf_counter()
    dz = np.asarray(dz, dtype=float)
    real = sample_matern(med_spec)
    z_c = psi_c(np.zeros(med_spec.dim - 1), t0, cfg.c)

    errors = []
    for eta in eta_levels:
        cfg_eta = eta_scaled_config(cfg, eta)
        dz_eta = eta * dz
        shifted_medium = shift_realization(real, phi_c(dz_eta, cfg.c, cfg.c_star, "inverse"))
        m_orig = assemble_reflection_matrix(real, cfg_eta.probe, cfg_eta.bw)
        m_shift = assemble_reflection_matrix(shifted_medium, cfg_eta.probe, cfg_eta.bw)
        a = confocal_image_points(m_orig, cfg.c, (z_c + dz_eta)[None, :])[0]
        b = confocal_image_points(m_shift, cfg.c, z_c[None, :])[0]
        errors.append(float(abs(a - b) / max(abs(a), abs(b))))
    decreasing = bool(np.all(np.diff(errors) < 0))
    elapsed = time.perf_counter() - start
    return ValidationReport(
        name="local_stationarity",
        measured=errors[-1],
        expected=0.0,
        tolerance=tolerance,
        passed=bool(decreasing and errors[-1] <= tolerance),
        runtime_s=elapsed,
        details={"eta_levels": list(eta_levels), "rel_errors": errors,
                 "strictly_decreasing": decreasing},
    )


def write_reports_jsonl(reports, path) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.as_dict()) + "\n")


def write_summary_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "measured", "expected", "tolerance", "passed", "runtime_s"])
        for rep in reports:
            writer.writerow([rep.name, rep.measured, rep.expected,
                             rep.tolerance, rep.passed, f"{rep.runtime_s:.3f}"])
