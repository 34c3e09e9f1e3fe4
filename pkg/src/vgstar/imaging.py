"""Confocal (Kirchhoff-migration) imaging, point spread functions and focal spots.

The imaging functional backpropagates the conjugated reflection matrix from
both the emit and receive sides at a trial speed c:

    I^c(z) = sum_k w_k conj(M[e, r, k]) G^{w_k/c}(z, x_e) G^{w_k/c}(z, x_r)

Its kernel F^c(z, y) (the point spread function) factorises into an
emit-aperture sum times a receive-aperture sum, which this module evaluates
both by brute force and through the paraxial closed form built on the
oscillatory aperture integral G(xi1, xi2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatch,
    InvalidSpec,
    NoPeakFound,
    NotParaxial,
    OutOfDomain,
)
from .forward import ReflectionMatrix
from .greens import Bandwidth, ProbeGeometry, frequency_grid, green_distance


@dataclass
class PixelGrid:
    """Rectangular image grid strictly below the probe line (z > 0).

    origin is the (x, z) of pixel (0, 0), spacing the (dx, dz) steps and
    shape the (nx, nz) pixel counts.  values, when present, is the complex
    image with values[ix, iz] at (origin[0] + ix*dx, origin[1] + iz*dz).
    """

    origin: tuple
    spacing: tuple
    shape: tuple
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise InvalidSpec("grid spacing must be positive")
        if self.origin[1] <= 0:
            raise InvalidSpec("grid must lie strictly below the probe line (z > 0)")
        if self.shape[0] < 1 or self.shape[1] < 1:
            raise InvalidSpec("grid must hold at least one pixel")
        if self.values is not None and self.values.shape != tuple(self.shape):
            raise InvalidSpec("values shape does not match grid shape")

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.shape[0])

    @property
    def zs(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.shape[1])

    def points(self) -> np.ndarray:
        """All pixel centres as an (nx*nz, 2) array, x-major."""
        gx, gz = np.meshgrid(self.xs, self.zs, indexing="ij")
        return np.column_stack([gx.ravel(), gz.ravel()])

    def pixel_center(self, ix: int, iz: int) -> np.ndarray:
        return np.array([self.origin[0] + ix * self.spacing[0],
                         self.origin[1] + iz * self.spacing[1]])

    def nearest_index(self, point) -> tuple[int, int]:
        ix = int(round((point[0] - self.origin[0]) / self.spacing[0]))
        iz = int(round((point[1] - self.origin[1]) / self.spacing[1]))
        if not (0 <= ix < self.shape[0] and 0 <= iz < self.shape[1]):
            raise OutOfDomain(f"point {point} outside the grid")
        return ix, iz

    def with_values(self, values: np.ndarray) -> "PixelGrid":
        return PixelGrid(self.origin, self.spacing, self.shape, values)


@dataclass(frozen=True)
class ImagingConfig:
    """Backpropagation setup: trial speed c, true speed c_star, probe, band."""

    c: float
    c_star: float
    probe: ProbeGeometry
    bw: Bandwidth

    def __post_init__(self):
        if self.c <= 0 or self.c_star <= 0:
            raise InvalidSpec("speeds must be positive")

    def with_c(self, c: float) -> "ImagingConfig":
        return ImagingConfig(c, self.c_star, self.probe, self.bw)

    @property
    def wavelength_c(self) -> float:
        return self.bw.wavelength_c(self.c_star)


@dataclass(frozen=True)
class FocalSpot:
    """-6 dB focal spot: peak location, its connected region and box widths."""

    center: np.ndarray
    region: frozenset
    widths: tuple


def default_grid(cfg: ImagingConfig, center, half_extent) -> PixelGrid:
    """Grid centred at `center` with lambda_c/8 spacing covering +-half_extent."""
    dx = cfg.wavelength_c / 8.0
    hx, hz = half_extent if np.ndim(half_extent) else (half_extent, half_extent)
    nx = 2 * int(round(hx / dx)) + 1
    nz = 2 * int(round(hz / dx)) + 1
    origin = (center[0] - (nx // 2) * dx, center[1] - (nz // 2) * dx)
    return PixelGrid(origin, (dx, dx), (nx, nz))


def confocal_image_points(m: ReflectionMatrix, c: float, points,
                          n_workers: int | None = None) -> np.ndarray:
    """I^c at arbitrary points (P, dim) without forming a full grid.

    Feeds the K-matrix construction, which only ever needs a handful of
    pixels per trial speed.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if points.shape[1] != m.probe.dim:
        raise DimensionMismatch("points and probe dimensions differ")
    if np.any(points[:, -1] <= 0):
        raise InvalidSpec("imaging points must lie below the probe line")
    omegas = m.omegas
    weights = m.weights
    xe, xr = m.emit_positions, m.receive_positions
    re = np.linalg.norm(points[:, None, :] - xe[None, :, :], axis=2)
    rr = np.linalg.norm(points[:, None, :] - xr[None, :, :], axis=2)
    out = np.zeros(len(points), dtype=complex)

    def accumulate(k: int) -> np.ndarray:
        kk = omegas[k] / c
        ge = green_distance(kk, re, m.probe.dim)
        gr = green_distance(kk, rr, m.probe.dim)
        return weights[k] * np.sum((ge @ np.conj(m.data[:, :, k])) * gr, axis=1)

    if n_workers and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for part in pool.map(accumulate, range(len(omegas))):
                out += part
    else:
        for k in range(len(omegas)):
            out += accumulate(k)
    return out


def confocal_image(m: ReflectionMatrix, cfg: ImagingConfig, grid: PixelGrid,
                   n_workers: int | None = None) -> PixelGrid:
    """Form the confocal image of m on the grid at trial speed cfg.c."""
    if m.probe.dim != 2:
        raise DimensionMismatch("confocal imaging grids are 2D")
    vals = confocal_image_points(m, cfg.c, grid.points(), n_workers=n_workers)
    return grid.with_values(vals.reshape(grid.shape))


def psf_points(y0, z_points, cfg: ImagingConfig) -> np.ndarray:
    """F^c(z, y0) at arbitrary image points z (P, dim) for a fixed source y0.

    Separable evaluation: per frequency, an emit-aperture sum times a
    receive-aperture sum, weighted by w_k * omega_k^2.
    """
    y0 = np.asarray(y0, dtype=float)
    z_points = np.asarray(z_points, dtype=float)
    if z_points.ndim == 1:
        z_points = z_points[None, :]
    omegas, weights = frequency_grid(cfg.bw)
    xe, xr = cfg.probe.emit_positions, cfg.probe.receive_positions
    re = np.linalg.norm(z_points[:, None, :] - xe[None, :, :], axis=2)
    rr = np.linalg.norm(z_points[:, None, :] - xr[None, :, :], axis=2)
    rye = np.linalg.norm(xe - y0[None, :], axis=1)
    ryr = np.linalg.norm(xr - y0[None, :], axis=1)
    acc = np.zeros(len(z_points), dtype=complex)
    for k, om in enumerate(omegas):
        kc, ks = om / cfg.c, om / cfg.c_star
        se = green_distance(kc, re, cfg.probe.dim) @ np.conj(green_distance(ks, rye, cfg.probe.dim))
        sr = green_distance(kc, rr, cfg.probe.dim) @ np.conj(green_distance(ks, ryr, cfg.probe.dim))
        acc += (weights[k] * om**2) * se * sr
    return acc


def psf_source_points(z, y_points, cfg: ImagingConfig) -> np.ndarray:
    """F^c(z, y) over source points y (P, dim) for a fixed image point z.

    The dual view of psf_points; drives the second-moment (speckle
    variance) identity, which integrates |F^c(z, y)|^2 over the medium.
    """
    z = np.asarray(z, dtype=float)
    y_points = np.asarray(y_points, dtype=float)
    if y_points.ndim == 1:
        y_points = y_points[None, :]
    omegas, weights = frequency_grid(cfg.bw)
    xe, xr = cfg.probe.emit_positions, cfg.probe.receive_positions
    rze = np.linalg.norm(xe - z[None, :], axis=1)
    rzr = np.linalg.norm(xr - z[None, :], axis=1)
    rye = np.linalg.norm(y_points[:, None, :] - xe[None, :, :], axis=2)
    ryr = np.linalg.norm(y_points[:, None, :] - xr[None, :, :], axis=2)
    acc = np.zeros(len(y_points), dtype=complex)
    for k, om in enumerate(omegas):
        kc, ks = om / cfg.c, om / cfg.c_star
        se = np.conj(green_distance(ks, rye, cfg.probe.dim)) @ green_distance(kc, rze, cfg.probe.dim)
        sr = np.conj(green_distance(ks, ryr, cfg.probe.dim)) @ green_distance(kc, rzr, cfg.probe.dim)
        acc += (weights[k] * om**2) * se * sr
    return acc


def psf_bruteforce(y0, cfg: ImagingConfig, grid: PixelGrid) -> PixelGrid:
    """Point spread function F^c(., y0) evaluated on an image grid.

    Identical (to rounding) to imaging a unit point target with a flat
    pulse, but through a different code path, which the tests exploit as an
    oracle pair.
    """
    acc = psf_points(y0, grid.points(), cfg)
    return grid.with_values(acc.reshape(grid.shape))


# ---------------------------------------------------------------------------
# the aperture kernel G and the coordinate maps

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _g1d(xi1: float, xi2: float) -> complex:
    """1D aperture integral int_{-1}^{1} exp(-i u xi1 + i u^2 xi2 / 2) du.

    Composite Gauss-Legendre with the panel count tied to the total phase
    swing; absolute error < 1e-10 over |xi| <= 200 (checked against
    arbitrary-precision quadrature in the tests).
    """
    swing = abs(xi1) + 0.5 * abs(xi2)
    panels = 1 + int(swing // 25.0)
    nodes, wts = _gauss_legendre(40)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    total = 0.0 + 0.0j
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        u = mid + half * nodes
        total += half * np.sum(wts * np.exp(1j * (-u * xi1 + 0.5 * u * u * xi2)))
    return total


def g_kernel(xi1, xi2: float, dim: int) -> complex:
    """Aperture kernel G(xi1, xi2); separable product of 1D factors in 3D."""
    if dim == 2:
        return _g1d(float(np.asarray(xi1).reshape(())), xi2)
    if dim == 3:
        a, b = np.asarray(xi1, dtype=float).reshape(2)
        return _g1d(a, xi2) * _g1d(b, xi2)
    raise InvalidSpec(f"dim must be 2 or 3, got {dim}")


def phi_c(y, c: float, c_star: float, direction: str = "forward"):
    """Focal-spot distortion map between medium and image coordinates.

    forward: (y_perp, y_par) -> ((c/c_star)^2 y_perp, (c/c_star) y_par);
    inverse applies the reciprocal scalings.  Acts on (dim,) points or
    (P, dim) batches, transverse = all but the last coordinate.
    """
    if direction not in ("forward", "inverse"):
        raise InvalidSpec(f"direction must be forward or inverse, got {direction!r}")
    y = np.asarray(y, dtype=float)
    ratio = c / c_star if direction == "forward" else c_star / c
    out = y.copy()
    out[..., :-1] *= ratio**2
    out[..., -1] *= ratio
    return out


def psi_c(s0, t0: float, c: float) -> np.ndarray:
    """Travel-time parameterised moving pixel (c^2 s0, c t0).

    Computable without knowing the true speed; equals phi_c(y0) for the
    fixed physical point y0 = (c_star^2 s0, c_star t0).
    """
    if t0 <= 0:
        raise InvalidSpec("travel time t0 must be positive")
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    return np.concatenate([c**2 * s0, [c * t0]])


def psf_paraxial(y0, dz, cfg: ImagingConfig, regime: str = "full") -> complex:
    """Leading-order paraxial PSF at image point phi_c(y0) + dz.

    Physical-units form of the closed-form kernel: a frequency quadrature of
    three mismatch phase factors times G^2, or its broadband sinc collapse
    (regime="broadband").  In 2D the value is normalised to match the
    discrete element sums of psf_bruteforce (factor n_emit*n_receive/4); in
    3D the continuous-aperture form is returned.
    """
    if regime not in ("full", "broadband"):
        raise InvalidSpec(f"regime must be full or broadband, got {regime!r}")
    y0 = np.asarray(y0, dtype=float)
    dz = np.asarray(dz, dtype=float)
    dim = cfg.probe.dim
    if y0.shape != (dim,) or dz.shape != (dim,):
        raise DimensionMismatch(f"y0 and dz must have {dim} coordinates")
    yperp, ypar = y0[:-1], y0[-1]
    if ypar <= 0:
        raise NotParaxial("y0 must lie below the probe line")
    if np.linalg.norm(yperp) / ypar > 0.5:
        raise NotParaxial("|y0_perp| / y0_par exceeds 0.5")

    c, cs = cfg.c, cfg.c_star
    ell = cfg.probe.half_aperture
    ay0 = float(np.linalg.norm(y0))
    rho = cs / c  # c_star / c
    dperp, dpar = dz[:-1], dz[-1]

    # phase per unit omega: mismatch term, axial shift, transverse curvature
    phase_rate = (
        (np.dot(yperp, yperp) / (cs * ay0)) * (1.0 / rho**2 - 1.0)
        + 2.0 * dpar / c
        + (rho**2 / (cs * ay0)) * np.dot(dperp, dperp)
    )
    xi1_rate = (ell / (cs * ay0)) * rho**2 * dperp  # times omega
    xi2_rate = (ell**2 / (cs * ay0)) * (rho**2 - 1.0)

    if dim == 2:
        pref = (cfg.probe.n_emit * cfg.probe.n_receive / 4.0) * cs**2 / (
            64.0 * np.pi**2 * ay0**2
        )
        om_pow = 0
    else:
        pref = rho**2 * ell**4 / (256.0 * np.pi**4 * ay0**4)
        om_pow = 2

    if regime == "broadband":
        om = cfg.bw.omega_c
        g = g_kernel(om * xi1_rate if dim == 3 else float(om * xi1_rate[0]) if len(xi1_rate) else 0.0,
                     om * xi2_rate, dim)
        band = 2.0 * cfg.bw.half_width
        return complex(
            pref * om**om_pow * band * np.exp(1j * om * phase_rate)
            * np.sinc(cfg.bw.half_width * phase_rate / np.pi) * g**2
        )

    omegas, weights = frequency_grid(cfg.bw)
    acc = 0.0 + 0.0j
    for om, w in zip(omegas, weights):
        xi1 = om * xi1_rate if dim == 3 else float(om * xi1_rate[0]) if len(xi1_rate) else 0.0
        g = g_kernel(xi1, om * xi2_rate, dim)
        acc += w * om**om_pow * np.exp(1j * om * phase_rate) * g * g
    return complex(pref * acc)


def eta_scaled_config(cfg: ImagingConfig, eta: float) -> ImagingConfig:
    """Paraxial-family member: omega_c, half_width scale as 1/eta, aperture as sqrt(eta).

    The base config is the eta = 1 member; used by the convergence studies
    only.
    """
    if eta <= 0:
        raise InvalidSpec("eta must be positive")
    bw = Bandwidth(
        omega_c=cfg.bw.omega_c / eta,
        half_width=cfg.bw.half_width / eta,
        n_freq=cfg.bw.n_freq,
        pulse=cfg.bw.pulse,
        pulse_sigma=cfg.bw.pulse_sigma / eta if cfg.bw.pulse == "gaussian" else 0.0,
    )
    probe = ProbeGeometry(
        dim=cfg.probe.dim,
        half_aperture=cfg.probe.half_aperture * np.sqrt(eta),
        n_emit=cfg.probe.n_emit,
        n_receive=cfg.probe.n_receive,
    )
    return ImagingConfig(cfg.c, cfg.c_star, probe, bw)


def focal_spot(img: PixelGrid, near, search_radius: float | None = None) -> FocalSpot:
    """Extract the -6 dB focal spot around the peak nearest to `near`.

    The region is the connected component of {|I| >= 0.5 |I(peak)|}
    containing the peak; widths are the bounding-box spans through the peak,
    counted in pixels times spacing.
    """
    if img.values is None:
        raise NoPeakFound("image carries no values")
    mag = np.abs(img.values)
    near = np.asarray(near, dtype=float)
    if search_radius is not None:
        gx, gz = np.meshgrid(img.xs, img.zs, indexing="ij")
        mask = (gx - near[0]) ** 2 + (gz - near[1]) ** 2 <= search_radius**2
        if not mask.any():
            raise NoPeakFound("search radius excludes the whole grid")
        search = np.where(mask, mag, -1.0)
    else:
        search = mag
    flat = int(np.argmax(search))
    ix, iz = np.unravel_index(flat, mag.shape)
    peak = mag[ix, iz]
    if peak <= 0.0:
        raise NoPeakFound("image is identically zero near the requested point")

    lab, _ = ndimage.label(mag >= 0.5 * peak)
    region_mask = lab == lab[ix, iz]
    xs_idx, zs_idx = np.nonzero(region_mask)
    widths = (
        (xs_idx.max() - xs_idx.min() + 1) * img.spacing[0],
        (zs_idx.max() - zs_idx.min() + 1) * img.spacing[1],
    )
    region = frozenset(zip(xs_idx.tolist(), zs_idx.tolist()))
    return FocalSpot(center=img.pixel_center(ix, iz), region=region, widths=widths)


def write_image_csv(grid: PixelGrid, path) -> None:
    """CSV dump (z-major rows) of |I| and arg(I) with pixel coordinates."""
    if grid.values is None:
        raise InvalidSpec("grid carries no values")
    with open(path, "w") as fh:
        fh.write("x,z,abs,phase\n")
        xs, zs = grid.xs, grid.zs
        for iz in range(grid.shape[1]):
            for ix in range(grid.shape[0]):
                v = grid.values[ix, iz]
                fh.write(f"{xs[ix]!r},{zs[iz]!r},{abs(v)!r},{np.angle(v)!r}\n")


def write_image_pgm(grid: PixelGrid, path) -> None:
    """8-bit binary PGM of the normalised magnitude, for quick inspection."""
    if grid.values is None:
        raise InvalidSpec("grid carries no values")
    mag = np.abs(grid.values).T  # rows = z lines
    top = mag.max()
    img = np.zeros_like(mag, dtype=np.uint8) if top == 0 else np.clip(
        np.round(255.0 * mag / top), 0, 255
    ).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
