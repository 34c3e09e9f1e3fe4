"""Random multi-scale media: hardcore scatterer clouds and their statistics.

A medium is a stationary cloud of small disc/ball scatterers (Matern type-II
hardcore process) carrying i.i.d. zero-mean index contrasts on a homogeneous
background n0 = 1/c_star^2.  Because the contrasts have zero mean, the
effective (homogenised) index equals the background and c_star is both the
background and effective speed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientSamples, InvalidSpec, PackingInfeasible

CONTRAST_LAWS = ("uniform_symmetric", "two_point_symmetric")


@dataclass(frozen=True)
class MediumSpec:
    """Parameters of the random medium.

    domain_lo/domain_hi bound the axis-aligned box holding the scatterers,
    in metres.  scatterer_radius is the physical radius, min_distance the
    hardcore centre-to-centre distance, target_volume_fraction the fraction
    of the box covered by scatterers.  contrast_std is the standard
    deviation of the zero-mean index contrasts n_S - n0 (units of n).
    """

    dim: int
    domain_lo: tuple
    domain_hi: tuple
    c_star: float
    scatterer_radius: float
    min_distance: float
    target_volume_fraction: float
    contrast_std: float
    contrast_law: str = "uniform_symmetric"
    seed: int = 0
    n0: float = 0.0  # 0 means "derive from c_star"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InvalidSpec(f"dim must be 2 or 3, got {self.dim}")
        lo = np.asarray(self.domain_lo, float)
        hi = np.asarray(self.domain_hi, float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise InvalidSpec("domain bounds must have length dim")
        if np.any(hi - lo <= 0):
            raise InvalidSpec("domain box must have positive extent")
        if self.c_star <= 0:
            raise InvalidSpec("c_star must be positive")
        if self.n0 == 0.0:
            object.__setattr__(self, "n0", 1.0 / self.c_star**2)
        elif abs(self.n0 * self.c_star**2 - 1.0) > 1e-9:
            raise InvalidSpec("n0 must equal 1/c_star^2 (matched background)")
        if self.scatterer_radius <= 0:
            raise InvalidSpec("scatterer_radius must be positive")
        if self.min_distance < 2.0 * self.scatterer_radius:
            raise InvalidSpec("min_distance must be >= scatterer diameter")
        if not 0.0 < self.target_volume_fraction < 1.0:
            raise InvalidSpec("target_volume_fraction must lie in (0, 1)")
        if self.dim == 2 and self.target_volume_fraction > 0.5:
            raise InvalidSpec("2D hardcore packing limited to fraction <= 0.5")
        if self.contrast_std < 0:
            raise InvalidSpec("contrast_std must be >= 0")
        if self.contrast_law not in CONTRAST_LAWS:
            raise InvalidSpec(f"unknown contrast law {self.contrast_law!r}")

    @property
    def domain_measure(self) -> float:
        lo = np.asarray(self.domain_lo, float)
        hi = np.asarray(self.domain_hi, float)
        return float(np.prod(hi - lo))

    @property
    def scatterer_measure(self) -> float:
        """Measure |Q| of one scatterer (disc area / ball volume)."""
        a = self.scatterer_radius
        return np.pi * a * a if self.dim == 2 else 4.0 / 3.0 * np.pi * a**3

    @property
    def target_intensity(self) -> float:
        """Target number of scatterer centres per unit volume."""
        return self.target_volume_fraction / self.scatterer_measure


@dataclass(frozen=True)
class MediumRealization:
    """One draw of the medium: centres (N, dim) and index contrasts (N,)."""

    spec: MediumSpec
    centers: np.ndarray
    contrasts: np.ndarray

    def __post_init__(self):
        if len(self.centers) != len(self.contrasts):
            raise InvalidSpec("centers and contrasts must have equal length")
        self.centers.setflags(write=False)
        self.contrasts.setflags(write=False)

    @property
    def n_scatterers(self) -> int:
        return len(self.centers)

    @property
    def volume_fraction(self) -> float:
        return self.n_scatterers * self.spec.scatterer_measure / self.spec.domain_measure

    @property
    def intensity(self) -> float:
        """Realised number of centres per unit volume."""
        return self.n_scatterers / self.spec.domain_measure


def _exclusion_measure(spec: MediumSpec) -> float:
    d = spec.min_distance
    return np.pi * d * d if spec.dim == 2 else 4.0 / 3.0 * np.pi * d**3


def sample_matern(spec: MediumSpec) -> MediumRealization:
    """Draw a Matern type-II hardcore realization hitting the target fraction.

    A Poisson proposal cloud receives i.i.d. uniform priority marks; a point
    survives when no other proposal within min_distance carries a smaller
    mark.  The proposal intensity is chosen by inverting the Matern-II
    retention law lambda = (1 - exp(-lambda_p*V))/V so the thinned cloud
    lands on the requested volume fraction in expectation.

    The RNG is counter-based (Philox keyed by the spec seed), so the mark of
    proposal i is a pure function of (seed, i) and generation can be split
    across workers without changing the result.
    """
    v_excl = _exclusion_measure(spec)
    lam_target = spec.target_intensity
    saturation = lam_target * v_excl
    if saturation >= 0.95:
        raise PackingInfeasible(
            f"target fraction {spec.target_volume_fraction} needs intensity "
            f"{saturation:.2f}/V_excl; Matern-II thinning saturates at 1/V_excl"
        )
    lam_proposal = -np.log1p(-saturation) / v_excl

    lo = np.asarray(spec.domain_lo, float)
    hi = np.asarray(spec.domain_hi, float)
    a = spec.scatterer_radius
    # centres are proposed in the box eroded by one radius so every
    # scatterer lies entirely inside the domain
    lo_e, hi_e = lo + a, hi - a
    if np.any(hi_e - lo_e <= 0):
        raise PackingInfeasible("domain too small for the scatterer radius")
    measure_e = float(np.prod(hi_e - lo_e))

    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n_prop = rng.poisson(lam_proposal * measure_e)
    centers = lo_e + rng.random((n_prop, spec.dim)) * (hi_e - lo_e)
    marks = rng.random(n_prop)
    if spec.contrast_law == "uniform_symmetric":
        amp = np.sqrt(3.0) * spec.contrast_std
        contrasts = rng.uniform(-amp, amp, n_prop)
    else:
        contrasts = spec.contrast_std * np.where(rng.random(n_prop) < 0.5, -1.0, 1.0)

    keep = np.ones(n_prop, dtype=bool)
    if n_prop > 1:
        pairs = cKDTree(centers).query_pairs(spec.min_distance, output_type="ndarray")
        if len(pairs):
            mi, mj = marks[pairs[:, 0]], marks[pairs[:, 1]]
            losers = np.where(mi < mj, pairs[:, 1], pairs[:, 0])
            keep[losers] = False

    real = MediumRealization(spec, centers[keep], contrasts[keep])
    rel = abs(real.volume_fraction - spec.target_volume_fraction) / spec.target_volume_fraction
    if rel > 0.10:
        raise PackingInfeasible(
            f"achieved fraction {real.volume_fraction:.4f} deviates "
            f"{100 * rel:.1f}% from target {spec.target_volume_fraction}"
        )
    return real


def index_field_eval(real: MediumRealization, x):
    """Evaluate the index field n_eps at point(s) x.

    Scatterers are open balls: boundary points evaluate to the background.
    Accepts a single point (dim,) or a batch (P, dim); returns a scalar or
    a (P,) array accordingly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    vals = np.full(len(pts), real.spec.n0)
    if real.n_scatterers:
        tree = cKDTree(real.centers)
        dist, idx = tree.query(pts, k=1)
        inside = dist < real.spec.scatterer_radius
        vals[inside] += real.contrasts[idx[inside]]
    return float(vals[0]) if single else vals


def shift_realization(real: MediumRealization, dy) -> MediumRealization:
    """Translate the medium so the new field at x equals the old one at x+dy.

    Centres move by -dy; any centre leaving the box re-enters periodically.
    The shifted-evaluation identity therefore holds exactly for points
    farther than |dy| + radius from the boundary (the wrap seam).
    """
    dy = np.asarray(dy, dtype=float)
    if dy.shape != (real.spec.dim,):
        raise InvalidSpec("shift vector must have length dim")
    lo = np.asarray(real.spec.domain_lo, float)
    hi = np.asarray(real.spec.domain_hi, float)
    centers = lo + np.mod(real.centers - dy - lo, hi - lo)
    return MediumRealization(real.spec, centers, real.contrasts.copy())


def covariance(realizations, lag, mode: str = "spatial", n_probes: int = 4096,
               probe_seed: int = 0) -> float:
    """Estimate the index covariance C(lag) = Cov(n(x), n(x + lag)).

    mode "spatial" volume-averages over one realization (or averages the
    spatial estimate over a list); mode "ensemble" requires >= 2
    realizations and averages the product across them at common probe
    points.  Uses the known mean n0, so the estimate is unbiased.
    """
    if isinstance(realizations, MediumRealization):
        realizations = [realizations]
    if not realizations:
        raise InsufficientSamples("need at least one realization")
    if mode not in ("spatial", "ensemble"):
        raise InvalidSpec(f"unknown covariance mode {mode!r}")
    if mode == "ensemble" and len(realizations) < 2:
        raise InsufficientSamples("ensemble covariance needs >= 2 realizations")

    spec = realizations[0].spec
    lag = np.asarray(lag, dtype=float)
    lo = np.asarray(spec.domain_lo, float)
    hi = np.asarray(spec.domain_hi, float)
    # probe points such that both x and x+lag stay inside the box
    lo_p = np.maximum(lo, lo - lag)
    hi_p = np.minimum(hi, hi - lag)
    if np.any(hi_p - lo_p <= 0):
        raise InvalidSpec("lag larger than the domain")
    rng = np.random.Generator(np.random.Philox(key=probe_seed))
    x = lo_p + rng.random((n_probes, spec.dim)) * (hi_p - lo_p)

    acc = 0.0
    for real in realizations:
        da = index_field_eval(real, x) - spec.n0
        db = index_field_eval(real, x + lag) - spec.n0
        acc += float(np.mean(da * db))
    return acc / len(realizations)


def ball_set_covariance(radius: float, r, dim: int):
    """Measure of the intersection of two radius-`radius` balls at distance r."""
    r = np.asarray(r, dtype=float)
    a = radius
    out = np.zeros_like(r)
    inside = r < 2.0 * a
    ri = r[inside]
    if dim == 2:
        out[inside] = 2.0 * a * a * np.arccos(ri / (2 * a)) - 0.5 * ri * np.sqrt(
            4 * a * a - ri * ri
        )
    else:
        out[inside] = np.pi / 12.0 * (4 * a + ri) * (2 * a - ri) ** 2
    return out


def analytic_covariance(spec: MediumSpec, lag, intensity: float | None = None):
    """Closed-form C(lag) for non-overlapping balls with i.i.d. contrasts.

    Cross terms between distinct scatterers vanish (independent zero-mean
    contrasts), leaving C(lag) = std^2 * intensity * |B ∩ (B + lag)|.
    """
    lam = spec.target_intensity if intensity is None else intensity
    lag = np.asarray(lag, dtype=float)
    r = np.linalg.norm(lag, axis=-1) if lag.ndim else np.abs(lag)
    return spec.contrast_std**2 * lam * ball_set_covariance(spec.scatterer_radius, r, spec.dim)


def covariance_integral(spec: MediumSpec, intensity: float | None = None) -> float:
    """Integral of C over all lags: std^2 * intensity * |Q|^2.

    Follows from the set covariance of a ball integrating to |Q|^2.
    """
    lam = spec.target_intensity if intensity is None else intensity
    return spec.contrast_std**2 * lam * spec.scatterer_measure**2


def save_realization_csv(real: MediumRealization, path) -> None:
    """Write centres/contrasts as CSV with a JSON MediumSpec sidecar."""
    spec = real.spec
    cols = "x,y" if spec.dim == 2 else "x,y,z"
    with open(path, "w") as fh:
        fh.write(f"{cols},radius,contrast\n")
        for c, v in zip(real.centers, real.contrasts):
            coords = ",".join(f"{ci!r}" for ci in c)
            fh.write(f"{coords},{spec.scatterer_radius!r},{v!r}\n")
    sidecar = dict(asdict(spec))
    sidecar["domain_lo"] = list(spec.domain_lo)
    sidecar["domain_hi"] = list(spec.domain_hi)
    with open(f"{path}.spec.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_realization_csv(path) -> MediumRealization:
    """Inverse of save_realization_csv."""
    with open(f"{path}.spec.json") as fh:
        raw = json.load(fh)
    raw["domain_lo"] = tuple(raw["domain_lo"])
    raw["domain_hi"] = tuple(raw["domain_hi"])
    spec = MediumSpec(**raw)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return MediumRealization(spec, np.zeros((0, spec.dim)), np.zeros(0))
    centers = data[:, : spec.dim].copy()
    contrasts = data[:, -1].copy()
    return MediumRealization(spec, centers, contrasts)
