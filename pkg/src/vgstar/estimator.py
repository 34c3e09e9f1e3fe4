"""Sound-speed estimators: guide-star amplitude and virtual-guide-star variance.

The speckle estimator scans a trial-speed grid c_j, keeps the imaging point
on the fixed travel-time track z_j = psi_{c_j}(s0, t0) = (c_j^2 s0, c_j t0),
and samples the image at sub-wavelength offsets Delta z_i around each z_j:

    K[i, j] = I^{c_j}(z_j + Delta z_i)        (N_shifts x N_c)
    F[j]    = mean_i |K[i, j]|^2

F peaks at the effective speed because the moving pixel always probes the
same physical spot while the focusing quality varies with c.
"""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CorruptFile,
    EmptyTrace,
    InsufficientSamples,
    InvalidSpec,
    OutOfDomain,
    TooFewShifts,
)
from .forward import ReflectionMatrix, assemble_reflection_matrix
from .imaging import ImagingConfig, PixelGrid, confocal_image_points, phi_c, psf_bruteforce, psf_paraxial, psi_c
from .medium import MediumSpec, sample_matern

KMX_MAGIC = b"KMX1"


@dataclass(frozen=True)
class GuideStarSpec:
    """Virtual-guide-star acquisition parameters.

    s0 is the transverse travel-time offset (psi-coordinates; 0 on axis),
    t0 the travel time, c_grid the uniformly spaced trial speeds and shifts
    the (N, dim) sub-wavelength pixel offsets Delta z_i.
    """

    s0: tuple
    t0: float
    c_grid: np.ndarray
    shifts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c_grid", np.asarray(self.c_grid, dtype=float))
        object.__setattr__(self, "shifts", np.asarray(self.shifts, dtype=float))
        if self.t0 <= 0:
            raise InvalidSpec("t0 must be positive")
        steps = np.diff(self.c_grid)
        if len(self.c_grid) < 2 or np.any(steps <= 0):
            raise InvalidSpec("c_grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9):
            raise InvalidSpec("c_grid must be uniformly spaced")
        if self.shifts.ndim != 2:
            raise InvalidSpec("shifts must be an (N, dim) array")

    @property
    def n_shifts(self) -> int:
        return len(self.shifts)

    @property
    def delta_c(self) -> float:
        return float(self.c_grid[1] - self.c_grid[0])

    def validate_scales(self, scatterer_radius: float, lambda_c: float) -> None:
        """Check the shift sandwich 2*radius < |Delta z| < lambda_c."""
        r = np.linalg.norm(self.shifts, axis=1)
        if np.any(r <= 2.0 * scatterer_radius):
            raise InvalidSpec("shifts must exceed the scatterer diameter")
        if np.any(r >= lambda_c):
            raise InvalidSpec("shifts must stay below the central wavelength")


@dataclass
class EstimatorReport:
    """Output of the spatial-variance estimator."""

    K: np.ndarray
    F: np.ndarray
    c_hat: float
    c_grid: np.ndarray
    n_shifts: int
    c_hat_refined: float | None = None

    def __post_init__(self):
        if np.any(self.F < 0):
            raise InvalidSpec("F must be non-negative")


def make_shift_set(
    n: int,
    lambda_c: float,
    scatterer_radius: float,
    seed: int = 0,
    pattern: str = "spiral",
) -> np.ndarray:
    """Build the sub-wavelength shift set Delta z_i.

    pattern "spiral": a sunflower spiral filling the annulus
    max(2.5*radius, 0.2*lambda_c) < |dz| < 0.95*lambda_c with a seeded
    global rotation; maximally uniform coverage of the legal disc, which
    measurably lowers the estimator variance compared to a single ring.
    pattern "ring": radially jittered ring of radius lambda_c/2 (kept for
    comparison studies).
    """
    if n < 1:
        raise InvalidSpec("need at least one shift")
    rng = np.random.Generator(np.random.Philox(key=seed))
    if pattern == "spiral":
        r_min = max(2.5 * scatterer_radius, 0.2 * lambda_c)
        r_max = 0.95 * lambda_c
        if r_min >= r_max:
            raise InvalidSpec("no legal shift annulus: scatterers too large for the wavelength")
        idx = np.arange(n) + 0.5
        radius = r_min + (r_max - r_min) * np.sqrt(idx / n)
        theta = idx * np.pi * (3.0 - np.sqrt(5.0)) + rng.uniform(0.0, 2.0 * np.pi)
    elif pattern == "ring":
        lo = max(0.5 * lambda_c, 4.0 * scatterer_radius)
        hi = 0.95 * lambda_c
        if lo >= hi:
            raise InvalidSpec("ring radius incompatible with the scatterer exclusion")
        radius = lo + (hi - lo) * rng.random(n)
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
    else:
        raise InvalidSpec(f"unknown shift pattern {pattern!r}")
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def confocal_trace(y0, c_grid, cfg: ImagingConfig, method: str = "bruteforce") -> np.ndarray:
    """Trace c -> F^c(phi_c(y0), y0): PSF value at the moving focal-spot centre."""
    if method not in ("bruteforce", "paraxial"):
        raise InvalidSpec(f"unknown trace method {method!r}")
    y0 = np.asarray(y0, dtype=float)
    c_grid = np.asarray(c_grid, dtype=float)
    out = np.zeros(len(c_grid), dtype=complex)
    for j, c in enumerate(c_grid):
        cfg_j = cfg.with_c(float(c))
        if method == "paraxial":
            out[j] = psf_paraxial(y0, np.zeros_like(y0), cfg_j)
        else:
            center = phi_c(y0, float(c), cfg.c_star)
            one = PixelGrid(tuple(center), (1e-6, 1e-6), (1, 1))
            out[j] = psf_bruteforce(y0, cfg_j, one).values[0, 0]
    return out


def amplitude_estimate(trace, c_grid, refine: bool = False) -> float:
    """Speed at the maximum of |trace|; ties break toward smaller c.

    With refine=True a 3-point parabola through |trace|^2 interpolates the
    peak between grid nodes (no-op at the grid edges).
    """
    trace = np.asarray(trace)
    if trace.size == 0:
        raise EmptyTrace("cannot estimate from an empty trace")
    c_grid = np.asarray(c_grid, dtype=float)
    power = np.abs(trace) ** 2
    j = int(np.argmax(power))  # first occurrence = smallest c on ties
    if not refine or j == 0 or j == len(c_grid) - 1:
        return float(c_grid[j])
    y1, y2, y3 = power[j - 1], power[j], power[j + 1]
    denom = y1 - 2.0 * y2 + y3
    if denom == 0:
        return float(c_grid[j])
    return float(c_grid[j] + 0.5 * (y1 - y3) / denom * (c_grid[1] - c_grid[0]))


def trace_half_width(trace, c_grid) -> float:
    """Half-width at half maximum of the squared-magnitude trace.

    The peak-resolution figure of the estimator curve |trace(c)|^2: distance
    in c from the peak to the half-power level, averaged over both sides
    (one-sided value if the other side never crosses).  Crossings are
    linearly interpolated between grid nodes.
    """
    c_grid = np.asarray(c_grid, dtype=float)
    power = np.abs(np.asarray(trace)) ** 2
    if power.size < 3:
        raise EmptyTrace("trace too short for a width measurement")
    j = int(np.argmax(power))
    half = 0.5 * power[j]

    def crossing(indices):
        prev = j
        for i in indices:
            if power[i] <= half:
                # interpolate between prev (above) and i (below)
                f = (power[prev] - half) / (power[prev] - power[i])
                return abs(c_grid[prev] + f * (c_grid[i] - c_grid[prev]) - c_grid[j])
            prev = i
        return None

    left = crossing(range(j - 1, -1, -1))
    right = crossing(range(j + 1, len(power)))
    sides = [s for s in (left, right) if s is not None]
    if not sides:
        raise EmptyTrace("trace never falls to half maximum on the grid")
    return float(np.mean(sides))


def build_K_matrix(
    m: ReflectionMatrix,
    guide: GuideStarSpec,
    cfg: ImagingConfig,
    n_workers: int | None = None,
) -> np.ndarray:
    """K[i, j] = I^{c_j}(psi_{c_j}(s0, t0) + Delta z_i).

    Only the N_shifts x N_c probed pixels are evaluated; no full image is
    formed.
    """
    if guide.shifts.shape[1] != m.probe.dim:
        raise InvalidSpec("shift vectors must match the data dimension")
    n_c = len(guide.c_grid)
    K = np.zeros((guide.n_shifts, n_c), dtype=complex)

    pixels = []
    for c in guide.c_grid:
        zc = psi_c(np.asarray(guide.s0, dtype=float), guide.t0, float(c))
        pix = zc[None, :] + guide.shifts
        if np.any(pix[:, -1] <= 0):
            raise OutOfDomain(f"probed pixels at c={c} reach above the probe line")
        pixels.append(pix)

    def column(j: int) -> np.ndarray:
        return confocal_image_points(m, float(guide.c_grid[j]), pixels[j])

    if n_workers and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for j, col in enumerate(pool.map(column, range(n_c))):
                K[:, j] = col
    else:
        for j in range(n_c):
            K[:, j] = column(j)
    return K


def spatial_variance_estimate(K, c_grid, refine: bool = False) -> EstimatorReport:
    """Per-column mean power F_j of K and the speed at its maximum.

    Follows the literal recipe F_j = (1/N) sum_i |K_ij|^2 without mean
    subtraction: the speckle image has (asymptotically) zero mean, making
    the mean power and the variance interchangeable.
    """
    K = np.asarray(K)
    c_grid = np.asarray(c_grid, dtype=float)
    if K.ndim != 2 or K.shape[1] != len(c_grid):
        raise InvalidSpec("K must be (n_shifts, n_c)")
    if K.shape[0] < 2:
        raise TooFewShifts("need at least 2 shifts")
    if K.shape[0] < 16:
        warnings.warn("fewer than 16 shifts: variance estimate will be noisy", stacklevel=2)
    F = np.mean(np.abs(K) ** 2, axis=0)
    j = int(np.argmax(F))  # ties resolve to the smallest c
    report = EstimatorReport(K=K, F=F, c_hat=float(c_grid[j]), c_grid=c_grid,
                             n_shifts=K.shape[0])
    if refine:
        report.c_hat_refined = amplitude_estimate(np.sqrt(F), c_grid, refine=True)
    return report


def ensemble_variance_estimate(
    med_spec: MediumSpec,
    n_realizations: int,
    guide: GuideStarSpec,
    cfg: ImagingConfig,
    n_workers: int | None = None,
) -> np.ndarray:
    """V_j = mean over independent media of |I^{c_j}(psi_{c_j}(s0, t0))|^2.

    Realization n uses a child seed derived from (med_spec.seed, n), so the
    whole Monte-Carlo run is reproducible and trivially parallel.
    """
    if n_realizations < 2:
        raise InsufficientSamples("ensemble estimate needs >= 2 realizations")
    pix = np.array([psi_c(np.asarray(guide.s0, float), guide.t0, float(c))
                    for c in guide.c_grid])

    def one(n: int) -> np.ndarray:
        child = int(np.random.SeedSequence((med_spec.seed, n)).generate_state(1)[0])
        real = sample_matern(replace(med_spec, seed=child))
        m = assemble_reflection_matrix(real, cfg.probe, cfg.bw)
        vals = np.array([
            confocal_image_points(m, float(c), pix[j][None, :])[0]
            for j, c in enumerate(guide.c_grid)
        ])
        return np.abs(vals) ** 2

    if n_workers and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            powers = list(pool.map(one, range(n_realizations)))
    else:
        powers = [one(n) for n in range(n_realizations)]
    return np.mean(powers, axis=0)


def write_kmx(K, c_grid, path) -> None:
    """KMX binary: magic, u32 (n_shifts, n_c), f64 c_grid, complex128 K."""
    K = np.asarray(K, dtype=complex)
    with open(path, "wb") as fh:
        fh.write(KMX_MAGIC)
        fh.write(struct.pack("<2I", K.shape[0], K.shape[1]))
        fh.write(np.ascontiguousarray(c_grid, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(K, dtype="<c16").tobytes())


def read_kmx(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a KMX file back as (K, c_grid)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != KMX_MAGIC:
        raise CorruptFile(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CorruptFile(f"{path}: truncated header")
    nd, nc = struct.unpack("<2I", blob[4:12])
    need = 12 + 8 * nc + 16 * nd * nc
    if len(blob) != need:
        raise CorruptFile(f"{path}: size {len(blob)} != expected {need}")
    c_grid = np.frombuffer(blob, "<f8", count=nc, offset=12).copy()
    K = np.frombuffer(blob, "<c16", count=nd * nc, offset=12 + 8 * nc).reshape(nd, nc).copy()
    return K, c_grid


def save_report_json(report: EstimatorReport, path, seed: int | None = None) -> None:
    """Serialise the estimator report (without K) as JSON."""
    doc = {
        "c_grid": report.c_grid.tolist(),
        "F": report.F.tolist(),
        "c_hat": report.c_hat,
        "n_shifts": report.n_shifts,
        "seed": seed,
    }
    if report.c_hat_refined is not None:
        doc["c_hat_refined"] = report.c_hat_refined
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
