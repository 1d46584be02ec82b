"""Conical distances and edge-cone Hoelder seminorms of grid functions.

Two distances are provided on ``C^n`` with the cone along ``z_1 = 0``:

* ``"xi"``: Euclidean distance after ``z_1 -> |z_1|^(tau - 1) z_1``,
* ``"uniformization"`` (``tau = 1/p``): Euclidean distance after
  ``z_1 -> z_1^tau``, minimized over the ``p`` branches.

Both agree on radii and differ only in the angle: at equal radius
``r^tau`` and angular separation ``delta <= pi`` the ratio of the two is
``sin(delta / 2) / sin(tau delta / 2)``, which ranges over ``[1 / sin(pi tau / 2), 1 / tau)``.
The sharp equivalence constant is therefore ``p = 1 / tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model_geometry import MetricField

DIVERGENCE_FACTOR = 1.8


@dataclass(frozen=True)
class ConeDistance:
    """Distance ``d_tau`` with a choice of convention ("xi" or "uniformization")."""

    tau: float
    convention: str = "xi"

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.convention not in ("xi", "uniformization"):
            raise ValueError("convention must be 'xi' or 'uniformization'")
        if self.convention == "uniformization":
            p = 1.0 / self.tau
            if abs(p - round(p)) > 1e-12:
                raise ValueError("uniformization needs tau = 1/p with p an integer")

    @property
    def branches(self) -> int:
        return int(round(1.0 / self.tau)) if self.convention == "uniformization" else 1

    def images(self, points: np.ndarray) -> np.ndarray:
        """Images of ``points`` (shape ``(m, n)``) under the cone map (principal branch)."""
        pts = np.atleast_2d(np.asarray(points, dtype=complex))
        out = pts.copy()
        z = pts[:, 0]
        r = np.abs(z)
        if self.convention == "xi":
            with np.errstate(divide="ignore", invalid="ignore"):
                out[:, 0] = np.where(r > 0, r ** (self.tau - 1) * z, 0.0)
        else:
            out[:, 0] = r ** self.tau * np.exp(1j * self.tau * np.angle(z))
        return out

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distances between corresponding rows of ``a`` and ``b``."""
        ia, ib = self.images(a), self.images(b)
        rest = np.sum(np.abs(ia[:, 1:] - ib[:, 1:]) ** 2, axis=1)
        best = np.full(len(ia), np.inf)
        for k in range(self.branches):
            rot = np.exp(2j * np.pi * self.tau * k)
            d = np.abs(ia[:, 0] - ib[:, 0] * rot) ** 2
            best = np.minimum(best, d)
        return np.sqrt(best + rest)

    def __call__(self, x, y) -> float:
        return float(self.pairwise(np.atleast_2d(x), np.atleast_2d(y))[0])


def d_tau(x, y, tau: float, convention: str = "xi") -> float:
    """Conical distance between two points of ``C^n``."""
    return ConeDistance(tau, convention)(x, y)


# ---------------------------------------------------------------------------
# grid functions


@dataclass
class GridFunction:
    """Values of a function at an unstructured set of points of ``C^n``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=complex))
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.points) != len(self.values):
            raise ValueError("points and values differ in length")


def cone_disc_points(resolution: int, tau: float, n_angle: int | None = None) -> np.ndarray:
    """Polar grid on the unit cone disc ``|xi| <= 1`` in ``C``.

    ``|xi|`` takes the values ``k / resolution`` for ``k = 1..resolution``
    and the angle ``n_angle`` equispaced values; the origin is included once.
    """
    n_angle = n_angle or resolution
    s = np.arange(1, resolution + 1) / resolution
    th = 2 * np.pi * np.arange(n_angle) / n_angle
    S, T = np.meshgrid(s, th, indexing="ij")
    z = (S ** (1.0 / tau)) * np.exp(1j * T)
    return np.concatenate([[0.0], z.ravel()])[:, None]


def grid_function(fn: Callable, points: np.ndarray) -> GridFunction:
    pts = np.atleast_2d(np.asarray(points, dtype=complex))
    return GridFunction(pts, fn(pts))


@dataclass
class HolderReport:
    alpha: float
    tau: float
    sup: float
    seminorm: float
    argmax_pair: tuple
    pairs_checked: int = 0
    exhaustive: bool = True
    diverging: bool = False
    history: list = field(default_factory=list)
    components: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.sup + self.seminorm

    def to_json(self) -> dict:
        pair = [[[float(c.real), float(c.imag)] for c in p] for p in self.argmax_pair] if self.argmax_pair else []
        return {"alpha": self.alpha, "tau": self.tau, "sup": self.sup, "seminorm": self.seminorm,
                "total": self.total, "argmax_pair": pair, "diverging": self.diverging,
                "pairs_checked": self.pairs_checked, "exhaustive": self.exhaustive,
                "history": list(self.history), "components": dict(self.components)}


def _pair_indices(m: int, budget: int, images: np.ndarray, divisor_radius: np.ndarray):
    """All pairs ``i < j`` when they fit the budget; a deterministic stratified subset otherwise.

    The subset is the union of

    * every pair that involves one of the points closest to the divisor,
    * each point with its nearest neighbours (the small distance shells),
    * every pair that involves an evenly strided set of landmark points
      (the large distance shells).
    """
    total = m * (m - 1) // 2
    if total <= budget:
        i, j = np.triu_indices(m, 1)
        return i, j, True
    order = np.argsort(divisor_radius, kind="stable")
    n_near = max(1, min(m // 20, budget // (4 * m)))
    near = order[:n_near]
    k = int(min(m - 1, max(4, budget // (4 * m))))
    tree = cKDTree(np.column_stack([images.real, images.imag]).reshape(m, -1))
    _, nbr = tree.query(tree.data, k=k + 1)
    ii = [np.repeat(np.arange(m), k), np.repeat(near, m)]
    jj = [nbr[:, 1:].ravel(), np.tile(np.arange(m), n_near)]
    n_land = max(1, (budget - m * k - n_near * m) // m)
    stride = max(1, m // n_land)
    land = np.arange(0, m, stride)
    ii.append(np.repeat(land, m))
    jj.append(np.tile(np.arange(m), land.size))
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    keep = i != j
    a, b = np.minimum(i[keep], j[keep]), np.maximum(i[keep], j[keep])
    code = np.unique(a.astype(np.int64) * m + b)
    return code // m, code % m, False


def holder_seminorm(f: GridFunction, alpha: float, tau: float, pair_budget: int = 10_000_000,
                    convention: str = "xi", chunk: int = 1_000_000) -> HolderReport:
    """``sup |f(x) - f(y)| / d_tau(x, y)^alpha`` over pairs of grid points.

    Raises
    ------
    ValueError
        If ``alpha`` is outside ``(0, 1]`` or the grid is empty.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    m = len(f.values)
    if m == 0:
        raise ValueError("empty grid")
    dist = ConeDistance(tau, convention)
    sup = float(np.max(np.abs(f.values)))
    if m == 1:
        return HolderReport(alpha, tau, sup, 0.0, (), 0, True)
    images = dist.images(f.points)
    i, j, exhaustive = _pair_indices(m, pair_budget, images, np.abs(f.points[:, 0]))
    best, arg = 0.0, None
    for s in range(0, i.size, chunk):
        a, b = i[s:s + chunk], j[s:s + chunk]
        d = dist.pairwise(f.points[a], f.points[b])
        diff = np.abs(f.values[a] - f.values[b])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, diff / d ** alpha, 0.0)
        k = int(np.argmax(q))
        if q[k] > best:
            best, arg = float(q[k]), (int(a[k]), int(b[k]))
    pair = (tuple(f.points[arg[0]]), tuple(f.points[arg[1]])) if arg else ()
    return HolderReport(alpha, tau, sup, best, pair, int(i.size), exhaustive)


def refinement_sweep(make: Callable[[int], GridFunction], resolutions: Sequence[int], alpha: float,
                     tau: float, pair_budget: int = 10_000_000, convention: str = "xi",
                     quantity: str = "seminorm") -> HolderReport:
    """Seminorms at increasing resolutions; flags divergence on growth by ``>= 1.8x``.

    ``quantity`` selects what is tracked for the divergence flag
    (``"seminorm"``, ``"sup"`` or ``"total"``). The returned report is the
    one at the finest resolution with ``history`` holding every value.
    """
    history, rep = [], None
    for res in resolutions:
        rep = holder_seminorm(make(res), alpha, tau, pair_budget, convention)
        history.append(getattr(rep, quantity))
    rep.history = history
    rep.diverging = is_diverging(history)
    return rep


def is_diverging(history: Sequence[float]) -> bool:
    """True when the last refinement grows the tracked value by ``>= 1.8x``."""
    if len(history) < 2:
        return False
    a, b = history[-2], history[-1]
    if a <= 0:
        return b > 0
    return b / a >= DIVERGENCE_FACTOR


# ---------------------------------------------------------------------------
# C^{2, alpha}


def frame_components(hessian: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Entries of ``Hess phi`` in a ``g``-orthonormal frame, shape ``(m, n, n)`` (complex)."""
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    return Li @ hessian @ np.conj(np.swapaxes(Li, -1, -2))


def c2alpha_norm(phi: GridFunction, metric: MetricField, alpha: float, tau: float,
                 hessian: np.ndarray, pair_budget: int = 10_000_000) -> HolderReport:
    """Aggregate ``C^{2,alpha}_tau`` size of a potential against a reference metric.

    ``sup`` is ``sup |phi| + sup |dd^c phi|_g`` (Hilbert-Schmidt norm in a
    ``g``-orthonormal frame) and ``seminorm`` the largest seminorm among the
    real and imaginary parts of the frame components of ``dd^c phi``.

    Raises
    ------
    ValueError
        If ``phi``, ``metric`` and ``hessian`` are not on the same points.
    """
    pts = phi.points
    G = np.asarray(metric.G).reshape(-1, pts.shape[1], pts.shape[1])
    H = np.asarray(hessian).reshape(G.shape)
    if G.shape[0] != len(pts) or np.asarray(metric.points).reshape(-1, pts.shape[1]).shape[0] != len(pts):
        raise ValueError("phi and metric are not defined on the same points")
    C = frame_components(H, G)
    size = np.sqrt(np.sum(np.abs(C) ** 2, axis=(-1, -2)))
    sup = float(np.max(np.abs(phi.values)) + np.max(size))
    n = pts.shape[1]
    best = HolderReport(alpha, tau, sup, 0.0, (), 0, True)
    comps = {}
    for a in range(n):
        for b in range(a, n):
            parts = [("re", C[:, a, b].real)] + ([("im", C[:, a, b].imag)] if a != b else [])
            for tag, v in parts:
                rep = holder_seminorm(GridFunction(pts, v), alpha, tau, pair_budget)
                comps[f"{tag}{a + 1}{b + 1}"] = rep.seminorm
                if rep.seminorm >= best.seminorm:
                    best = HolderReport(alpha, tau, sup, rep.seminorm, rep.argmax_pair,
                                        rep.pairs_checked, rep.exhaustive)
    best.components = comps
    best.components["sup_phi"] = float(np.max(np.abs(phi.values)))
    best.components["sup_ddc"] = float(np.max(size))
    return best


def c2alpha_sweep(make: Callable[[int], tuple], resolutions: Sequence[int], alpha: float, tau: float,
                  pair_budget: int = 10_000_000) -> HolderReport:
    """Refinement sweep of ``c2alpha_norm``; ``make(res)`` returns ``(phi, metric, hessian)``.

    Divergence is flagged when the aggregate total grows by ``>= 1.8x``.
    """
    history, rep = [], None
    for res in resolutions:
        phi, metric, hess = make(res)
        rep = c2alpha_norm(phi, metric, alpha, tau, hess, pair_budget)
        history.append(rep.total)
    rep.history = history
    rep.diverging = is_diverging(history)
    return rep


def model_metric_on(points: np.ndarray, tau: float) -> MetricField:
    """Model cone metric ``tau^2 |z_1|^(2 tau - 2)`` (flat in the other directions) at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=complex))
    n = pts.shape[1]
    r = np.abs(pts[:, 0])
    if np.any(r == 0):
        raise ValueError("the model metric is singular on the divisor")
    G = np.zeros((len(pts), n, n), dtype=complex)
    G[:, 0, 0] = tau * tau * r ** (2 * tau - 2)
    for j in range(1, n):
        G[:, j, j] = 1.0
    return MetricField(pts, G)


def radial_power_hessian(points: np.ndarray, beta: float) -> np.ndarray:
    """Complex Hessian of ``|z_1|^(2 beta)``: ``beta^2 |z_1|^(2 beta - 2)`` in the ``(1, 1)`` slot."""
    pts = np.atleast_2d(np.asarray(points, dtype=complex))
    n = pts.shape[1]
    H = np.zeros((len(pts), n, n), dtype=complex)
    H[:, 0, 0] = beta * beta * np.abs(pts[:, 0]) ** (2 * beta - 2)
    return H


def max_equivalence_ratio(points: np.ndarray, tau: float) -> tuple:
    """Extreme ratios ``d_xi / d_uniformization`` over all distinct pairs of ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=complex))
    i, j = np.triu_indices(len(pts), 1)
    a = ConeDistance(tau, "xi").pairwise(pts[i], pts[j])
    b = ConeDistance(tau, "uniformization").pairwise(pts[i], pts[j])
    keep = (a > 0) & (b > 0)
    r = a[keep] / b[keep]
    return float(np.min(r)), float(np.max(r))


def equivalence_constant(tau: float) -> float:
    """Sharp upper bound ``1 / tau`` of ``d_xi / d_uniformization`` (approached by nearby angles)."""
    return 1.0 / tau


def antipodal_ratio(tau: float) -> float:
    """``d_xi / d_uniformization`` for two points of equal radius at opposite angles."""
    return 1.0 / math.sin(math.pi * tau / 2)
