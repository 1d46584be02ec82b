"""Floating-point curvature of the reference metrics from closed-form jets.

The curvature convention is

    R_{a bbar c dbar} = -g_{a bbar, c dbar} + g^{m nbar} g_{a nbar, c} g_{m bbar, dbar}

evaluated from the exact metric derivatives of
:mod:`conekit.model_geometry`. Finite differences appear only in
:func:`finite_difference_check`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model_geometry import (
    BaseMetric,
    ConeParams,
    DomainSpec,
    HermitianWeight,
    SingularPointError,
    eval_reference_metric,
    hessian_from_jet,
    reference_metric_derivatives,
    reference_potential_jet,
)

COND_WARN = 1e12


class ConditioningWarning(RuntimeWarning):
    pass


class DegenerateFitError(ValueError):
    """All samples of a rate fit are numerically zero."""


@dataclass
class CurvatureSample:
    """Curvature tensor and normalized bisectional values at one point.

    ``bisectional`` maps a pair label (``"11"``, ``"12"``, ...) to
    ``R(v, vbar, w, wbar) / (|v|_g^2 |w|_g^2)`` for the coordinate vectors.
    """

    point: np.ndarray
    R: np.ndarray
    bisectional: dict
    condition: float

    @property
    def normalized_bisectional(self) -> float:
        return self.bisectional["11"]

    def symmetry_defect(self) -> float:
        R = self.R
        scale = max(np.max(np.abs(R)), 1e-300)
        herm = np.max(np.abs(R - np.conj(np.transpose(R, (1, 0, 3, 2)))))
        kahler = np.max(np.abs(R - np.transpose(R, (2, 1, 0, 3))))
        return float(max(herm, kahler) / scale)


@dataclass
class RateFit:
    """Least-squares fit ``log|Q| = exponent * log r + log_coefficient``."""

    exponent: float
    log_coefficient: float
    residual: float
    radii: list
    values: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"exponent": self.exponent, "coefficient": float(np.exp(self.log_coefficient)),
                "log_coefficient": self.log_coefficient, "residual": self.residual,
                "radii": list(self.radii), "values": list(self.values)}


def curvature_tensor(G: np.ndarray, dG: np.ndarray, ddG: np.ndarray) -> np.ndarray:
    """Batched curvature from metric derivatives (conventions of ``model_geometry``)."""
    H = np.linalg.inv(G)
    # g^{m nbar} = H[n, m];  g_{m bbar, dbar} = conj(dG[b, m, d])
    return -ddG + np.einsum("...nm,...anc,...bmd->...abcd", H, dG, np.conj(dG))


def bisectional(R: np.ndarray, G: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``R(v, vbar, w, wbar) / (|v|^2 |w|^2)``, batched over points."""
    num = np.einsum("...abcd,...a,...b,...c,...d->...", R, v, np.conj(v), w, np.conj(w))
    nv = np.einsum("...ab,...a,...b->...", G, v, np.conj(v)).real
    nw = np.einsum("...ab,...a,...b->...", G, w, np.conj(w)).real
    return num.real / (nv * nw)


def frame_bisectional(R: np.ndarray, G: np.ndarray) -> dict:
    """Normalized bisectional values for the pairs ``(d_1, d_1)`` and ``(d_1, d_j)``."""
    n = G.shape[-1]
    out = {"11": (R[..., 0, 0, 0, 0] / G[..., 0, 0] ** 2).real}
    for j in range(1, n):
        out[f"1{j + 1}"] = (R[..., 0, 0, j, j] / (G[..., 0, 0] * G[..., j, j])).real
    return out


def random_pair_bisectional(R: np.ndarray, G: np.ndarray, count: int, rng) -> np.ndarray:
    """Bisectional values for ``count`` random vector pairs per point."""
    n = G.shape[-1]
    batch = G.shape[:-2]
    out = np.empty(batch + (count,))
    for k in range(count):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        out[..., k] = bisectional(R, G, v, w)
    return out


def curvature_batch(params: ConeParams, weight: HermitianWeight, points: np.ndarray,
                    base: BaseMetric | None = None):
    """``(G, R)`` at every point of ``points`` (shape ``(m, n)``)."""
    points = np.atleast_2d(np.asarray(points, dtype=complex))
    if base is None:
        base = BaseMetric.flat(np.ones(points.shape[-1]))
    G, dG, ddG = reference_metric_derivatives(params, weight, base, points)
    return G, curvature_tensor(G, dG, ddG)


def curvature_at(params: ConeParams, weight: HermitianWeight, point,
                 base: BaseMetric | None = None) -> CurvatureSample:
    """Full curvature tensor of the reference metric at ``point``.

    Raises
    ------
    SingularPointError
        On the divisor with ``epsilon = 0``.
    numpy.linalg.LinAlgError
        If the metric is singular.

    Warns
    -----
    ConditioningWarning
        When ``cond(g) > 1e12``.
    """
    point = np.asarray(point, dtype=complex)
    G, R = curvature_batch(params, weight, point[None, :], base)
    cond = float(np.linalg.cond(G[0]))
    if cond > COND_WARN:
        warnings.warn(f"cond(g) = {cond:.3g} at {point.tolist()}", ConditioningWarning)
    bis = {k: float(v[0]) for k, v in frame_bisectional(R, G).items()}
    return CurvatureSample(point, R[0], bis, cond)


def log_radii(r_max: float, r_min: float, per_decade: int = 4) -> np.ndarray:
    """Log-spaced decreasing radii with at least ``per_decade`` points per decade."""
    decades = np.log10(r_max / r_min)
    count = max(int(np.ceil(decades * per_decade)) + 1, 4)
    return np.geomspace(r_max, r_min, count)


def _quantity(G, R, quantity: str, direction: str) -> np.ndarray:
    a = int(direction[0]) - 1
    b = int(direction[1]) - 1
    comp = R[:, a, a, b, b].real
    if quantity == "component":
        return comp
    if quantity == "normalized":
        return comp / (G[:, a, a].real * G[:, b, b].real)
    raise ValueError("quantity must be 'component' or 'normalized'")


def fit_blowup_rate(params: ConeParams, weight: HermitianWeight, radii: Sequence[float],
                    direction: str = "11", quantity: str = "component",
                    base: BaseMetric | None = None, rest: Sequence[complex] | None = None,
                    n: int = 2) -> RateFit:
    """Fit the power law of a curvature quantity along the ray ``z_1 = r > 0``.

    ``quantity="component"`` fits the coordinate component ``R_{1 1bar 1 1bar}``
    (which grows like ``|z_1|^(2t' - 4)`` for the corrected metric);
    ``quantity="normalized"`` divides by ``g_{1 1bar}^2`` (unit vectors).

    Raises
    ------
    DegenerateFitError
        If all samples are below ``1e-12`` in magnitude.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4 or np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("need >= 4 positive decreasing radii")
    if rest is not None:
        n = len(rest) + 1
    pts = np.zeros((radii.size, n), dtype=complex)
    pts[:, 0] = radii
    if rest is not None:
        pts[:, 1:] = np.asarray(rest, dtype=complex)
    G, R = curvature_batch(params, weight, pts, base)
    vals = _quantity(G, R, quantity, direction)
    if np.all(np.abs(vals) < 1e-12):
        raise DegenerateFitError("all curvature samples vanish; nothing to fit")
    x = np.log(radii)
    y = np.log(np.abs(vals))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), resid, radii.tolist(), vals.tolist())


@dataclass
class LowerBoundScan:
    infima: dict
    overall: float
    argmin_radius: dict
    pair_labels: list

    def spread(self) -> float:
        """``max |inf| / min |inf|`` across the scanned parameters."""
        v = np.abs(np.array(list(self.infima.values())))
        return float(v.max() / v.min())

    def to_json(self) -> dict:
        return {"infima": {repr(k): v for k, v in self.infima.items()}, "overall": self.overall,
                "argmin_radius": {repr(k): v for k, v in self.argmin_radius.items()},
                "spread": self.spread()}


def uniform_lower_bound_scan(params: ConeParams, weight: HermitianWeight, eps_list: Sequence[float],
                             domain: DomainSpec, base: BaseMetric | None = None,
                             random_pairs: int = 8, seed: int = 0) -> LowerBoundScan:
    """Infimum of normalized bisectional curvature over the radial grid for each ``eps``.

    Uses the frame pairs ``(d_1, d_1)``, ``(d_1, d_j)`` and ``random_pairs``
    seeded random unit pairs per point.
    """
    if domain.resolution[0] < 32:
        raise ValueError("need at least 32 radial points")
    if any(not 0 < e <= 1 for e in eps_list):
        raise ValueError("eps values must lie in (0, 1]")
    if base is None:
        base = BaseMetric.flat(np.ones(domain.n))
    pts = domain.radial_points()
    r = domain.radii()
    infima, where = {}, {}
    for eps in eps_list:
        rng = np.random.default_rng(seed)
        G, R = curvature_batch(params.with_(epsilon=eps), weight, pts, base)
        frame = frame_bisectional(R, G)
        vals = np.column_stack(list(frame.values()) +
                               ([random_pair_bisectional(R, G, random_pairs, rng)]
                                if random_pairs else []))
        per_point = vals.min(axis=1)
        k = int(np.argmin(per_point))
        infima[eps] = float(per_point[k])
        where[eps] = float(r[k])
    return LowerBoundScan(infima, min(infima.values()), where, ["11"] + [f"1{j}" for j in range(2, domain.n + 1)])


def metric_closeness(params: ConeParams, weight: HermitianWeight, point,
                     base: BaseMetric | None = None) -> float:
    """``|omega_corrected - omega_cone|`` measured in the uncorrected cone metric.

    ``norm^2 = tr(G^-1 D G^-1 D)`` with ``D`` the difference of the two
    metrics and ``G`` the uncorrected one.
    """
    point = np.asarray(point, dtype=complex)
    if params.epsilon == 0 and point[0] == 0:
        raise SingularPointError("closeness is undefined on the divisor")
    if base is None:
        base = BaseMetric.flat(np.ones(point.size))
    if params.c_coef == 0:
        return 0.0
    g_good = eval_reference_metric(params, weight, base, point)
    g_cone = eval_reference_metric(params.with_(c_coef=0.0), weight, base, point)
    D = g_good - g_cone
    A = np.linalg.solve(g_cone, D)
    return float(np.sqrt(max(np.trace(A @ A).real, 0.0)))


def _metric_at(params, weight, base, pts):
    pot = reference_potential_jet(params, weight, base, pts, degree=2)
    (G,) = hessian_from_jet(pot, pts.shape[-1], order=2)
    return G


def finite_difference_check(params: ConeParams, weight: HermitianWeight, point, h: float,
                            base: BaseMetric | None = None) -> float:
    """Worst relative error of closed-form metric derivatives versus central differences.

    ``d_c = (d_x - i d_y) / 2`` and ``d_c dbar_d`` are assembled from real
    central differences of the metric at step ``h``.
    """
    point = np.asarray(point, dtype=complex)
    n = point.size
    if base is None:
        base = BaseMetric.flat(np.ones(n))
    G, dG, ddG = reference_metric_derivatives(params, weight, base, point[None, :], check=False)
    dG, ddG = dG[0], ddG[0]

    def shift(c, kind, s):
        e = np.zeros(n, dtype=complex)
        e[c] = s * (1.0 if kind == "x" else 1j)
        return e

    stencil = []
    for c in range(n):
        for kind in "xy":
            stencil += [point + shift(c, kind, h), point - shift(c, kind, h)]
    for c in range(n):
        for d in range(n):
            for kc in "xy":
                for kd in "xy":
                    for sc in (1, -1):
                        for sd in (1, -1):
                            stencil.append(point + shift(c, kc, sc * h) + shift(d, kd, sd * h))
    Gs = _metric_at(params, weight, base, np.array(stencil))
    it = iter(Gs)
    first = {}
    for c in range(n):
        for kind in "xy":
            gp, gm = next(it), next(it)
            first[(c, kind)] = (gp - gm) / (2 * h)
    second = {}
    for c in range(n):
        for d in range(n):
            for kc in "xy":
                for kd in "xy":
                    vpp, vpm, vmp, vmm = next(it), next(it), next(it), next(it)
                    second[(c, kc, d, kd)] = (vpp - vpm - vmp + vmm) / (4 * h * h)
    fd1 = np.empty_like(dG)
    fd2 = np.empty_like(ddG)
    for c in range(n):
        fd1[:, :, c] = 0.5 * (first[(c, "x")] - 1j * first[(c, "y")])
        for d in range(n):
            # d_c dbar_d = (d_xc - i d_yc)(d_xd + i d_yd) / 4
            fd2[:, :, c, d] = 0.25 * (second[(c, "x", d, "x")] + second[(c, "y", d, "y")]
                                      + 1j * second[(c, "x", d, "y")] - 1j * second[(c, "y", d, "x")])
    e1 = np.max(np.abs(fd1 - dG)) / max(np.max(np.abs(dG)), 1.0)
    e2 = np.max(np.abs(fd2 - ddG)) / max(np.max(np.abs(ddG)), 1.0)
    return float(max(e1, e2))
