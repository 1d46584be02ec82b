"""Parameters, weights and closed-form evaluation of the cone metric families.

Every metric here is the complex Hessian of an explicit potential. The
reference family is

    Psi = Phi_0 + a_coef * (a |z_1|^2 + eps)^tau + sign * c_coef * (a |z_1|^2 + eps)^tau'

where ``a`` is the line-bundle weight, ``Phi_0`` the potential of the smooth
background metric and ``sign = -1`` for the curvature-corrected metric. The
potential is expanded as a degree-4 jet in ``(z, zbar)``, which yields the
metric, its first derivatives and its mixed second derivatives in closed form.

Tensor conventions: ``G[..., a, b] = g_{a bbar}``,
``dG[..., a, b, c] = d_c g_{a bbar}`` and ``ddG[..., a, b, c, d] = d_c dbar_d g_{a bbar}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .jets import Jet, coordinate_jets, mixed_index


class SingularPointError(ValueError):
    """Raised when a metric is evaluated on the divisor without smoothing."""


class PositivityError(ValueError):
    """Raised when an evaluated metric fails to be positive definite."""

    def __init__(self, point, min_eigenvalue: float):
        self.point = np.asarray(point)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"metric not positive definite at {self.point.tolist()}: "
            f"smallest eigenvalue {self.min_eigenvalue:.6g}"
        )


@dataclass(frozen=True)
class ConeParams:
    """Scalar parameters of the metric family.

    Parameters
    ----------
    tau : float
        Cone angle fraction, ``0 < tau <= 1`` (``tau = 1`` is the smooth case).
    tau_prime : float, optional
        Exponent of the correction potential, ``tau < tau_prime < 1``. Only
        required when ``c_coef > 0``.
    a_coef : float
        Coefficient of the cone potential.
    c_coef : float
        Coefficient of the correction potential.
    epsilon : float
        Smoothing parameter of the regularized family.
    mu : float
        Einstein constant of the Monge-Ampere problem.
    correction_sign : {-1, +1}
        ``-1`` subtracts the correction (curvature bounded below), ``+1``
        adds it (curvature unbounded below).
    """

    tau: float
    tau_prime: float | None = None
    a_coef: float = 1.0
    c_coef: float = 0.0
    epsilon: float = 0.0
    mu: float = 0.0
    correction_sign: int = -1

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.a_coef <= 0:
            raise ValueError("a_coef must be positive")
        if self.c_coef < 0:
            raise ValueError("c_coef must be nonnegative")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.correction_sign not in (-1, 1):
            raise ValueError("correction_sign must be -1 or +1")
        if self.c_coef > 0:
            if self.tau_prime is None or not self.tau < self.tau_prime < 1.0:
                raise ValueError(
                    f"need tau < tau_prime < 1 when c_coef > 0, got "
                    f"tau={self.tau}, tau_prime={self.tau_prime}"
                )

    def with_(self, **changes) -> "ConeParams":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# weights and base potentials

JetBuilder = Callable[[list, list], Jet]


@dataclass(frozen=True)
class HermitianWeight:
    """A positive weight ``a(z)`` given by a closed-form jet builder.

    ``builder(z, zbar)`` receives coordinate jets and returns the jet of ``a``.
    ``adapted_at`` records a point where the weight is normalized
    (``a = 1``, ``da = 0``, ``a_{,ab} = 0``), or ``None``.
    """

    name: str
    builder: JetBuilder
    adapted_at: tuple | None = None
    scale: float = 1.0

    @property
    def adapted_flag(self) -> bool:
        return self.adapted_at is not None and self.scale == 1.0

    def jet(self, points: np.ndarray, degree: int = 4) -> Jet:
        """Jet of ``scale * a`` at every point of ``points`` (shape ``(..., n)``)."""
        z, zb = coordinate_jets(points, degree)
        return self.jet_from(z, zb)

    def jet_from(self, z: list, zb: list) -> Jet:
        out = self.builder(z, zb) * self.scale
        if np.any(out.value.real <= 0):
            raise ValueError(f"weight {self.name!r} is not positive")
        return out

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.jet(points, degree=0).value.real


def scale_line_bundle_metric(weight: HermitianWeight, factor: float) -> HermitianWeight:
    """Return the weight with ``a`` replaced by ``factor * a``."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    return replace(weight, scale=weight.scale * factor)


def constant_weight(value: float = 1.0) -> HermitianWeight:
    """``a`` identically equal to ``value``; adapted everywhere when ``value = 1``."""
    if value <= 0:
        raise ValueError("weight value must be positive")

    def build(z, zb):
        return Jet.constant(z[0].space, value, z[0].value.shape)

    return HermitianWeight("constant", build, (0.0,) if value == 1.0 else None)


def gaussian_weight(lam: float = 1.0, center: Sequence[complex] | None = None) -> HermitianWeight:
    """``a = exp(-lam |z - center|^2)``, adapted at ``center``."""

    def build(z, zb):
        c = np.zeros(len(z), dtype=complex) if center is None else np.asarray(center, dtype=complex)
        s = Jet.constant(z[0].space, 0.0, z[0].value.shape)
        for j in range(len(z)):
            s = s + (z[j] - c[j]) * (zb[j] - np.conj(c[j]))
        return (s * (-lam)).exp()

    ctr = None if center is None else tuple(complex(c) for c in center)
    return HermitianWeight("gaussian", build, ctr if ctr is not None else (0.0,))


def torus_ripple_weight(amp: float = 0.1, period: float = 1.0) -> HermitianWeight:
    """``a = exp(amp * cos(2 pi Re z_2 / period))``; rotation invariant in ``z_1``.

    Requires ``n >= 2``. Not adapted anywhere (its holomorphic second
    derivatives in ``z_2`` do not vanish).
    """

    def build(z, zb):
        if len(z) < 2:
            raise ValueError("torus_ripple weight needs n >= 2")
        x = (z[1] + zb[1]) * 0.5
        return ((x * (2 * np.pi / period)).cos() * amp).exp()

    return HermitianWeight("torus_ripple", build, None)


WEIGHT_CATALOG: dict[str, Callable[..., HermitianWeight]] = {
    "constant": constant_weight,
    "gaussian": gaussian_weight,
    "torus_ripple": torus_ripple_weight,
}


def weight_from_catalog(name: str, **kwargs) -> HermitianWeight:
    try:
        factory = WEIGHT_CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown weight {name!r}; choose from {sorted(WEIGHT_CATALOG)}") from None
    return factory(**kwargs)


@dataclass(frozen=True)
class BaseMetric:
    """Smooth background metric given by its Kahler potential."""

    name: str
    builder: JetBuilder

    @classmethod
    def flat(cls, diag_or_matrix) -> "BaseMetric":
        """Constant metric; a 1-d input is a diagonal, a 2-d input the full matrix."""
        m = np.asarray(diag_or_matrix, dtype=complex)
        if m.ndim == 1:
            m = np.diag(m)
        if not np.allclose(m, m.conj().T):
            raise ValueError("base metric must be Hermitian")

        def build(z, zb):
            out = Jet.constant(z[0].space, 0.0, z[0].value.shape)
            for a in range(m.shape[0]):
                for b in range(m.shape[1]):
                    if m[a, b] != 0:
                        out = out + z[a] * zb[b] * m[a, b]
            return out

        return cls("flat", build)

    @classmethod
    def zero(cls) -> "BaseMetric":
        return cls("zero", lambda z, zb: Jet.constant(z[0].space, 0.0, z[0].value.shape))

    @classmethod
    def fubini_study(cls) -> "BaseMetric":
        """Potential ``log(1 + |z|^2)``; in one variable the metric is ``(1+|z|^2)^-2``."""

        def build(z, zb):
            s = Jet.constant(z[0].space, 1.0, z[0].value.shape)
            for j in range(len(z)):
                s = s + z[j] * zb[j]
            return s.log()

        return cls("fubini_study", build)


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class DomainSpec:
    """Discretized model domain ``C_tau^k x C^(n-k)``.

    Parameters
    ----------
    n : int
        Complex dimension.
    cone_taus : tuple of float
        Cone angle of each cone direction; its length is ``k``.
    rho_min, rho_max : float
        Radial extent in the cone directions.
    period : float
        Period of the real part of each smooth coordinate.
    resolution : tuple of int
        Grid points per axis (radial first).
    radial_spacing : {"log", "linear"}
    """

    n: int = 1
    cone_taus: tuple = (0.75,)
    rho_min: float = 1e-6
    rho_max: float = 1.0
    period: float = 1.0
    resolution: tuple = (64,)
    radial_spacing: str = "log"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 1 <= len(self.cone_taus) <= self.n:
            raise ValueError("need 1 <= k <= n cone directions")
        if self.rho_min < 0 or self.rho_max <= self.rho_min:
            raise ValueError("need 0 <= rho_min < rho_max")
        if any(r < 4 for r in self.resolution):
            raise ValueError("resolutions must be >= 4")
        if self.radial_spacing not in ("log", "linear"):
            raise ValueError("radial_spacing must be 'log' or 'linear'")
        if self.radial_spacing == "log" and self.rho_min == 0:
            raise ValueError("log radial spacing needs rho_min > 0")

    @property
    def k(self) -> int:
        return len(self.cone_taus)

    def check_epsilon(self, epsilon: float) -> None:
        if epsilon == 0 and self.rho_min == 0:
            raise ValueError("rho_min > 0 is required when epsilon = 0")

    def radii(self) -> np.ndarray:
        m = self.resolution[0]
        if self.radial_spacing == "log":
            return np.geomspace(self.rho_min, self.rho_max, m)
        return np.linspace(self.rho_min, self.rho_max, m)

    def radial_points(self, rest: Sequence[complex] | None = None) -> np.ndarray:
        """Points ``(rho, rest...)`` along the positive real axis of ``z_1``."""
        r = self.radii()
        pts = np.zeros((r.size, self.n), dtype=complex)
        pts[:, 0] = r
        if rest is not None:
            pts[:, 1:] = np.asarray(rest, dtype=complex)
        return pts


@dataclass
class MetricField:
    """Grid of Hermitian matrices on a set of points."""

    points: np.ndarray
    G: np.ndarray
    domain: DomainSpec | None = None
    meta: dict = field(default_factory=dict)

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.G)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.G - np.conj(np.swapaxes(self.G, -1, -2)))))


# ---------------------------------------------------------------------------
# evaluation


def eval_model_metric(params: ConeParams, domain: DomainSpec, point) -> np.ndarray:
    """Flat model cone metric ``diag(tau_j^2 |z_j|^(2 tau_j - 2), 1, ...)``.

    ``domain.cone_taus`` gives the angles of the cone directions. When
    ``params.epsilon > 0`` the smoothed model ``dd^c (|z_j|^2 + eps)^tau_j``
    is returned instead.
    """
    p = np.asarray(point, dtype=complex)
    g = np.eye(domain.n, dtype=complex)
    eps = params.epsilon
    for j, t in enumerate(domain.cone_taus):
        r2 = abs(p[j]) ** 2
        if t == 1.0:
            continue
        if eps == 0:
            if r2 == 0:
                raise SingularPointError(f"|z_{j + 1}| = 0 on the divisor with epsilon = 0")
            g[j, j] = t * t * r2 ** (t - 1)
        else:
            u = r2 + eps
            g[j, j] = t * u ** (t - 1) + t * (t - 1) * u ** (t - 2) * r2
    return g


def reference_potential_jet(params: ConeParams, weight: HermitianWeight,
                            base: BaseMetric, points: np.ndarray, degree: int = 4) -> Jet:
    """Jet of the reference potential at ``points`` (cone direction ``z_1``)."""
    points = np.atleast_2d(np.asarray(points, dtype=complex))
    z, zb = coordinate_jets(points, degree)
    a = weight.jet_from(z, zb)
    u = a * z[0] * zb[0] + params.epsilon
    if np.any(np.abs(u.value) == 0):
        raise SingularPointError("point on the divisor with epsilon = 0")
    pot = base.builder(z, zb)
    if params.tau == 1.0:
        pot = pot + u * params.a_coef
    else:
        pot = pot + u.power(params.tau) * params.a_coef
    if params.c_coef > 0:
        pot = pot + u.power(params.tau_prime) * (params.correction_sign * params.c_coef)
    return pot


def hessian_from_jet(pot: Jet, n: int, order: int = 2):
    """Metric and, for ``order >= 3/4``, its first and mixed second derivatives."""
    batch = pot.value.shape
    G = np.empty(batch + (n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            G[..., a, b] = pot.derivative(mixed_index(n, (a,), (b,)))
    out = [G]
    if order >= 3:
        dG = np.empty(batch + (n, n, n), dtype=complex)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    dG[..., a, b, c] = pot.derivative(mixed_index(n, (a, c), (b,)))
        out.append(dG)
    if order >= 4:
        ddG = np.empty(batch + (n, n, n, n), dtype=complex)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    for d in range(n):
                        ddG[..., a, b, c, d] = pot.derivative(mixed_index(n, (a, c), (b, d)))
        out.append(ddG)
    return tuple(out)


def hermitize(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + np.conj(np.swapaxes(G, -1, -2)))


def check_positive(points: np.ndarray, G: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(G)[..., 0]
    if np.any(~(eig > 0)):
        idx = np.unravel_index(np.argmin(np.where(np.isfinite(eig), eig, -np.inf)), eig.shape)
        raise PositivityError(np.asarray(points)[idx], eig[idx])


def reference_metric_derivatives(params: ConeParams, weight: HermitianWeight,
                                 base: BaseMetric, points: np.ndarray, check: bool = True):
    """``(G, dG, ddG)`` of the reference metric at ``points`` of shape ``(m, n)``."""
    points = np.atleast_2d(np.asarray(points, dtype=complex))
    n = points.shape[-1]
    pot = reference_potential_jet(params, weight, base, points, degree=4)
    G, dG, ddG = hessian_from_jet(pot, n, order=4)
    G = hermitize(G)
    if check:
        check_positive(points, G)
    return G, dG, ddG


def eval_reference_metric(params: ConeParams, weight: HermitianWeight,
                          base_metric: BaseMetric, point) -> np.ndarray:
    """Reference metric at a single point, checked for positivity.

    Raises
    ------
    PositivityError
        If the smallest eigenvalue is not positive.
    SingularPointError
        If the point lies on the divisor and ``epsilon = 0``.
    """
    point = np.asarray(point, dtype=complex)
    pot = reference_potential_jet(params, weight, base_metric, point[None, :], degree=2)
    (G,) = hessian_from_jet(pot, point.size, order=2)
    G = hermitize(G)
    check_positive(point[None, :], G)
    return G[0]


def eval_metric_field(params: ConeParams, weight: HermitianWeight, base: BaseMetric,
                      points: np.ndarray, domain: DomainSpec | None = None) -> MetricField:
    points = np.atleast_2d(np.asarray(points, dtype=complex))
    pot = reference_potential_jet(params, weight, base, points, degree=2)
    (G,) = hessian_from_jet(pot, points.shape[-1], order=2)
    G = hermitize(G)
    check_positive(points, G)
    return MetricField(points, G, domain, {"params": params, "weight": weight.name})


def min_eigenvalue_on(params: ConeParams, weight: HermitianWeight, base: BaseMetric,
                      points: np.ndarray) -> float:
    points = np.atleast_2d(np.asarray(points, dtype=complex))
    pot = reference_potential_jet(params, weight, base, points, degree=2)
    (G,) = hessian_from_jet(pot, points.shape[-1], order=2)
    return float(np.min(np.linalg.eigvalsh(hermitize(G))[..., 0]))


def positivity_search(params: ConeParams, weight: HermitianWeight, base: BaseMetric,
                      points: np.ndarray, max_steps: int = 40):
    """Find the first scale ``2^-k`` (k = 0, 1, ...) making the metric positive on ``points``.

    Shrinking the weight weakens the correction relative to the cone term
    (their ratio scales like ``a^(tau' - tau)``), so the sequence halves.

    Returns
    -------
    (factor, weight) : tuple
        The accepted factor and the rescaled weight.
    """
    factor = 1.0
    for _ in range(max_steps + 1):
        w = scale_line_bundle_metric(weight, factor)
        if min_eigenvalue_on(params, w, base, points) > 0:
            return factor, w
        factor *= 0.5
    raise PositivityError(np.asarray(points)[0], min_eigenvalue_on(params, w, base, points))
