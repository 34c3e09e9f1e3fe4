"""Born-model synthesis of the reflection matrix and the RMX binary format.

Under the single-scattering (Born) model with matched background, each
scatterer contributes
``omega^2 * contrast * |Q| * G(x_e, y_i) * G(x_r, y_i) * f_hat(omega)``
to the inter-element response M[e, r, k], where G is the outgoing Green
function at the effective speed.  The scatterer integral is collapsed to
its midpoint because the radius sits far below every wavelength in the
band.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile, DimensionMismatch, InvalidTarget, ScattererTooLarge
from .greens import Bandwidth, ProbeGeometry, frequency_grid, green_distance, pulse_spectrum
from .medium import MediumRealization

RMX_MAGIC = b"RMX1"


@dataclass
class ReflectionMatrix:
    """Measured data M[e, r, k] plus the acquisition geometry.

    emit_positions / receive_positions / omegas are stored explicitly so
    files round-trip byte-identically; probe and bw carry the same
    information in structured form.
    """

    probe: ProbeGeometry
    bw: Bandwidth
    data: np.ndarray
    emit_positions: np.ndarray = field(default=None, repr=False)
    receive_positions: np.ndarray = field(default=None, repr=False)
    omegas: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.emit_positions is None:
            self.emit_positions = self.probe.emit_positions
        if self.receive_positions is None:
            self.receive_positions = self.probe.receive_positions
        if self.omegas is None:
            self.omegas = frequency_grid(self.bw)[0]
        expected = (self.probe.n_emit, self.probe.n_receive, len(self.omegas))
        if self.data.shape != expected:
            raise DimensionMismatch(f"data shape {self.data.shape}, expected {expected}")
        if not np.all(np.isfinite(self.data)):
            raise DimensionMismatch("reflection matrix contains non-finite entries")

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights matching self.omegas."""
        if len(self.omegas) == 1:
            return np.array([2.0 * self.bw.half_width])
        h = self.omegas[1] - self.omegas[0]
        w = np.full(len(self.omegas), h)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


def _scatter_quadrature(real: MediumRealization, refine: bool):
    """Quadrature nodes/weights replacing each scatterer integral.

    Midpoint by default; with refine=True a degree-3 five-point disc rule
    (centre weight |Q|/3, four axis points at radius a*sqrt(3/8) with
    weight |Q|/6 each).
    """
    q = real.spec.scatterer_measure
    if not refine:
        return real.centers, real.contrasts * q
    if real.spec.dim != 2:
        raise DimensionMismatch("5-point scatterer refinement is 2D only")
    a = real.spec.scatterer_radius
    r0 = a * np.sqrt(3.0 / 8.0)
    offsets = np.array([[0.0, 0.0], [r0, 0.0], [-r0, 0.0], [0.0, r0], [0.0, -r0]])
    wq = np.array([q / 3.0] + [q / 6.0] * 4)
    nodes = (real.centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    weights = (real.contrasts[:, None] * wq[None, :]).reshape(-1)
    return nodes, weights


def _check_scatterer_size(real: MediumRealization, bw: Bandwidth) -> None:
    lam_min = bw.wavelength_min(real.spec.c_star)
    a = real.spec.scatterer_radius
    if a > lam_min / 4.0:
        raise ScattererTooLarge(
            f"radius {a:.3e} m exceeds lambda_min/4 = {lam_min / 4:.3e} m"
        )
    if a > lam_min / 20.0:
        warnings.warn(
            f"scatterer radius {a:.3e} m above lambda_min/20; midpoint "
            "quadrature degrades",
            stacklevel=3,
        )


def assemble_reflection_matrix(
    real: MediumRealization,
    probe: ProbeGeometry,
    bw: Bandwidth,
    refine_quadrature: bool = False,
    n_workers: int | None = None,
) -> ReflectionMatrix:
    """Assemble M[e, r, k] from a medium realization.

    Parallelises over frequencies when n_workers is given; every frequency
    slab is written by exactly one task, so the result is independent of
    scheduling.
    """
    if probe.dim != real.spec.dim:
        raise DimensionMismatch("probe and medium dimensions differ")
    _check_scatterer_size(real, bw)
    omegas, _ = frequency_grid(bw)
    c_star = real.spec.c_star
    nodes, node_weights = _scatter_quadrature(real, refine_quadrature)
    xe = probe.emit_positions
    xr = probe.receive_positions
    data = np.zeros((probe.n_emit, probe.n_receive, len(omegas)), dtype=complex)

    if len(nodes):
        re = np.linalg.norm(xe[:, None, :] - nodes[None, :, :], axis=2)
        rr = np.linalg.norm(xr[:, None, :] - nodes[None, :, :], axis=2)
        fhat = pulse_spectrum(bw, omegas)

        def fill(k: int) -> None:
            kk = omegas[k] / c_star
            ge = green_distance(kk, re, probe.dim)
            gr = green_distance(kk, rr, probe.dim)
            data[:, :, k] = (omegas[k] ** 2 * fhat[k]) * ((ge * node_weights) @ gr.T)

        if n_workers and n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(fill, range(len(omegas))))
        else:
            for k in range(len(omegas)):
                fill(k)

    return ReflectionMatrix(probe, bw, data)


def point_target_matrix(
    y0, tau: float, probe: ProbeGeometry, bw: Bandwidth, c_star: float
) -> ReflectionMatrix:
    """Reflection matrix of a single point reflector of strength tau at y0.

    c_star is the (known) homogeneous propagation speed around the target.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (probe.dim,):
        raise DimensionMismatch(f"target must have {probe.dim} coordinates")
    if y0[-1] <= 0.0:
        raise InvalidTarget("point target must lie strictly below the probe line")
    omegas, _ = frequency_grid(bw)
    xe = probe.emit_positions
    xr = probe.receive_positions
    re = np.linalg.norm(xe - y0[None, :], axis=1)
    rr = np.linalg.norm(xr - y0[None, :], axis=1)
    fhat = pulse_spectrum(bw, omegas)
    data = np.zeros((probe.n_emit, probe.n_receive, len(omegas)), dtype=complex)
    for k, om in enumerate(omegas):
        kk = om / c_star
        ge = green_distance(kk, re, probe.dim)
        gr = green_distance(kk, rr, probe.dim)
        data[:, :, k] = (om**2 * tau * fhat[k]) * np.outer(ge, gr)
    return ReflectionMatrix(probe, bw, data)


def born2_residual(
    real: MediumRealization,
    probe: ProbeGeometry,
    bw: Bandwidth,
    e_idx: int,
    r_idx: int,
    k_idx: int,
) -> complex:
    """Second-order Born term U^{s,2} for one (emitter, receiver, frequency).

    Double-scattering sum over ordered pairs i != j; the i == j self term is
    excluded.  Used as a diagnostic of single-scattering validity: report
    |U^{s,2}| / |M| on dilute media.
    """
    _check_scatterer_size(real, bw)
    omegas, _ = frequency_grid(bw)
    om = omegas[k_idx]
    kk = om / real.spec.c_star
    q = real.spec.scatterer_measure
    y = real.centers
    c = real.contrasts
    n = len(y)
    if n < 2:
        return 0.0 + 0.0j
    xe = probe.emit_positions[e_idx]
    xr = probe.receive_positions[r_idx]
    ge = green_distance(kk, np.linalg.norm(y - xe[None, :], axis=1), probe.dim)  # G(y_j, x_e)
    gr = green_distance(kk, np.linalg.norm(y - xr[None, :], axis=1), probe.dim)  # G(y_i, x_r)
    rij = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=2)
    np.fill_diagonal(rij, 1.0)  # placeholder; diagonal masked below
    gij = green_distance(kk, rij, probe.dim)
    np.fill_diagonal(gij, 0.0)
    fhat = float(pulse_spectrum(bw, om))
    total = (c * gr) @ gij @ (c * ge)
    return complex(om**4 * q**2 * fhat * total)


def write_rmx(m: ReflectionMatrix, path) -> None:
    """Write the RMX binary format (little-endian, e-major complex data)."""
    dim = m.probe.dim
    with open(path, "wb") as fh:
        fh.write(RMX_MAGIC)
        fh.write(struct.pack("<4I", dim, m.probe.n_emit, m.probe.n_receive, len(m.omegas)))
        fh.write(np.ascontiguousarray(m.emit_positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(m.receive_positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(m.omegas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(m.data, dtype="<c16").tobytes())


def read_rmx(path) -> ReflectionMatrix:
    """Read an RMX file; raises CorruptFile on bad magic or truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != RMX_MAGIC:
        raise CorruptFile(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise CorruptFile(f"{path}: truncated header")
    dim, ne, nr, nw = struct.unpack("<4I", blob[4:20])
    if dim not in (2, 3):
        raise CorruptFile(f"{path}: invalid dimension {dim}")
    off = 20
    need = off + 8 * (ne * dim + nr * dim + nw) + 16 * ne * nr * nw
    if len(blob) != need:
        raise CorruptFile(f"{path}: size {len(blob)} != expected {need}")

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).copy()
        off += count * np.dtype(dtype).itemsize
        return arr

    emit = take(ne * dim, "<f8").reshape(ne, dim)
    recv = take(nr * dim, "<f8").reshape(nr, dim)
    omegas = take(nw, "<f8")
    data = take(ne * nr * nw, "<c16").reshape(ne, nr, nw)

    half = max(0.5 * (omegas[-1] - omegas[0]), 1e-9 * omegas[0]) if nw > 1 else 0.1 * omegas[0]
    bw = Bandwidth(omega_c=0.5 * (omegas[0] + omegas[-1]), half_width=half, n_freq=nw)
    probe = ProbeGeometry(
        dim=dim,
        half_aperture=float(max(np.abs(emit[:, 0]).max(), np.abs(recv[:, 0]).max(), 1e-12)),
        n_emit=ne,
        n_receive=nr,
    )
    return ReflectionMatrix(probe, bw, data, emit_positions=emit,
                            receive_positions=recv, omegas=omegas)
