"""Complex Monge-Ampere solver on a rotation-reduced model domain.

Functions depend on ``rho = |z_1|`` and, for ``n = 2``, on ``x = Re z_2``.
The radial coordinate is a map ``rho(xi)`` of a uniform computational
coordinate ``xi`` in ``[0, 1]``:

* ``uniform``: ``rho = rho_max * xi`` (contains the origin),
* ``sinh``: ``rho = rho_max * sinh(beta xi) / sinh(beta)`` (origin, clustered),
* ``log``: ``rho = rho_min * (rho_max / rho_min)^xi`` (annulus).

On the ray ``z_1 = rho > 0``, ``z_2 = x`` the complex Hessian of such a
function is

    u_{1 1bar} = (u_rr + u_r / rho) / 4,  u_{1 2bar} = u_rx / 4,  u_{2 2bar} = u_xx / 4,

discretized with second-order centred differences (a 9-point stencil in the
``(xi, x)`` plane). At the origin ``u_{1 1bar} = (u_1 - u_0) / (h rho'(0))^2``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model_geometry import (
    BaseMetric,
    ConeParams,
    HermitianWeight,
    MetricField,
    hessian_from_jet,
    hermitize,
    reference_potential_jet,
)
from .jets import Jet, coordinate_jets, mixed_index
from .numeric_curvature import curvature_batch, frame_bisectional, random_pair_bisectional

MAX_HALVINGS = 40


class SolverError(RuntimeError):
    """Base class for solver failures."""


class PositivityUnrecoverable(SolverError):
    pass


class MaxIterationsError(SolverError):
    pass


class LinearSolveError(SolverError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class ReducedGrid:
    """Tensor grid in ``(rho, x)`` for ``n = 2`` or in ``rho`` alone for ``n = 1``.

    Parameters
    ----------
    n : int
        Complex dimension, 1 or 2.
    n_rho : int
        Radial nodes including boundary nodes.
    n_x : int
        Nodes in ``x``; ignored when ``n = 1``.
    radial : {"uniform", "sinh", "log"}
    rho_max, rho_min : float
        Outer radius and (for ``log``) inner radius.
    beta : float
        Clustering strength of the ``sinh`` map.
    period : float
        Extent of the ``x`` interval.
    x_periodic : bool
        Periodic ``x`` (nodes ``k * period / n_x``) or Dirichlet at both ends
        (nodes ``k * period / (n_x - 1)``).
    """

    n: int = 2
    n_rho: int = 32
    n_x: int = 32
    radial: str = "uniform"
    rho_max: float = 1.0
    rho_min: float = 0.0
    beta: float = 3.0
    period: float = 1.0
    x_periodic: bool = True

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("the reduced solver supports n = 1 or n = 2")
        if self.radial not in ("uniform", "sinh", "log"):
            raise ValueError("radial must be 'uniform', 'sinh' or 'log'")
        if self.radial == "log" and not 0 < self.rho_min < self.rho_max:
            raise ValueError("log grid needs 0 < rho_min < rho_max")
        if self.n_rho < 4 or (self.n == 2 and self.n_x < 4):
            raise ValueError("resolutions must be >= 4")

    # geometry ----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.n_rho,) if self.n == 1 else (self.n_rho, self.n_x)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def has_origin(self) -> bool:
        return self.radial != "log"

    @property
    def h_xi(self) -> float:
        return 1.0 / (self.n_rho - 1)

    @property
    def h_x(self) -> float:
        if self.n == 1:
            return float("nan")
        return self.period / (self.n_x if self.x_periodic else self.n_x - 1)

    @property
    def h(self) -> float:
        """Largest physical mesh width (radial width taken at the outer radius)."""
        d = self.radial_map()[1]
        hr = float(np.max(d) * self.h_xi)
        return hr if self.n == 1 else max(hr, self.h_x)

    def radial_map(self):
        """``(rho, rho', rho'')`` at the radial nodes."""
        xi = np.linspace(0.0, 1.0, self.n_rho)
        R = self.rho_max
        if self.radial == "uniform":
            return R * xi, np.full_like(xi, R), np.zeros_like(xi)
        if self.radial == "sinh":
            b = self.beta
            s = R / math.sinh(b)
            return s * np.sinh(b * xi), s * b * np.cosh(b * xi), s * b * b * np.sinh(b * xi)
        L = math.log(self.rho_max / self.rho_min)
        rho = self.rho_min * np.exp(L * xi)
        return rho, L * rho, L * L * rho

    @property
    def rho(self) -> np.ndarray:
        return self.radial_map()[0]

    @property
    def x(self) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1)
        return np.arange(self.n_x) * self.h_x

    def points(self) -> np.ndarray:
        """Complex coordinates ``(z_1, z_2)`` of every node, shape ``shape + (n,)``."""
        if self.n == 1:
            return self.rho.astype(complex)[:, None]
        R, X = np.meshgrid(self.rho, self.x, indexing="ij")
        return np.stack([R.astype(complex), X.astype(complex)], axis=-1)

    def rho_field(self) -> np.ndarray:
        return self.rho if self.n == 1 else np.broadcast_to(self.rho[:, None], self.shape)

    def x_field(self) -> np.ndarray:
        if self.n == 1:
            return np.zeros(self.shape)
        return np.broadcast_to(self.x[None, :], self.shape)

    def unknown_mask(self) -> np.ndarray:
        m = np.ones(self.shape, dtype=bool)
        m[-1, ...] = False
        if not self.has_origin:
            m[0, ...] = False
        if self.n == 2 and not self.x_periodic:
            m[:, 0] = False
            m[:, -1] = False
        return m

    def refine(self, factor: int = 2) -> "ReducedGrid":
        """Grid with mesh widths divided by ``factor`` (nodes nested)."""
        from dataclasses import replace

        n_rho = (self.n_rho - 1) * factor + 1
        if self.n == 1:
            return replace(self, n_rho=n_rho)
        n_x = self.n_x * factor if self.x_periodic else (self.n_x - 1) * factor + 1
        return replace(self, n_rho=n_rho, n_x=n_x)

    # quadrature --------------------------------------------------------
    def volume_weights(self) -> np.ndarray:
        """Trapezoid weights for ``rho d rho dx`` (angular factors dropped)."""
        rho, d, _ = self.radial_map()
        w = rho * d * self.h_xi
        w[0] *= 0.5
        w[-1] *= 0.5
        if self.n == 1:
            return w
        wx = np.full(self.n_x, self.h_x)
        if not self.x_periodic:
            wx[0] *= 0.5
            wx[-1] *= 0.5
        return np.outer(w, wx)

    # operators ---------------------------------------------------------
    def hessian_operators(self):
        """Sparse ``(D11, D12, D22)`` acting on flattened node values.

        Rows of nodes where the stencil does not fit (Dirichlet nodes) are
        zero. For ``n = 1`` only ``D11`` is returned (the others are ``None``).
        """
        return _hessian_operators(self)


def _idx(grid: ReducedGrid, i, k):
    return i * (grid.n_x if grid.n == 2 else 1) + (k if grid.n == 2 else 0)


def _hessian_operators(grid: ReducedGrid):
    rho, d1, d2 = grid.radial_map()
    hxi = grid.h_xi
    nx = grid.n_x if grid.n == 2 else 1
    mask = grid.unknown_mask()
    rows11, cols11, vals11 = [], [], []
    rows12, cols12, vals12 = [], [], []
    rows22, cols22, vals22 = [], [], []
    hx = grid.h_x
    for i in range(grid.n_rho):
        for k in range(nx):
            node = (i, k) if grid.n == 2 else (i,)
            if not mask[node]:
                continue
            row = _idx(grid, i, k)
            if i == 0:
                c = 1.0 / (hxi * d1[0]) ** 2
                rows11 += [row, row]
                cols11 += [_idx(grid, 1, k), row]
                vals11 += [c, -c]
            else:
                a = 1.0 / (d1[i] ** 2 * hxi ** 2)
                b = (-d2[i] / d1[i] ** 3 + 1.0 / (rho[i] * d1[i])) / (2 * hxi)
                rows11 += [row] * 3
                cols11 += [_idx(grid, i + 1, k), row, _idx(grid, i - 1, k)]
                vals11 += [0.25 * (a + b), -0.5 * a, 0.25 * (a - b)]
            if grid.n == 1:
                continue
            kp = (k + 1) % nx
            km = (k - 1) % nx
            c22 = 1.0 / (4 * hx * hx)
            rows22 += [row] * 3
            cols22 += [_idx(grid, i, kp), row, _idx(grid, i, km)]
            vals22 += [c22, -2 * c22, c22]
            if i > 0:
                c12 = 1.0 / (4 * d1[i] * 4 * hxi * hx)
                rows12 += [row] * 4
                cols12 += [_idx(grid, i + 1, kp), _idx(grid, i + 1, km),
                           _idx(grid, i - 1, kp), _idx(grid, i - 1, km)]
                vals12 += [c12, -c12, -c12, c12]
    N = grid.size

    def mk(r, c, v):
        return sp.csr_matrix((v, (r, c)), shape=(N, N))

    D11 = mk(rows11, cols11, vals11)
    if grid.n == 1:
        return D11, None, None
    return D11, mk(rows12, cols12, vals12), mk(rows22, cols22, vals22)


def discrete_hessian(grid: ReducedGrid, values: np.ndarray, ops=None) -> np.ndarray:
    """Complex Hessian matrices at every node (zero at Dirichlet nodes)."""
    D11, D12, D22 = ops or grid.hessian_operators()
    u = np.asarray(values, dtype=float).ravel()
    n = grid.n
    H = np.zeros((grid.size, n, n))
    H[:, 0, 0] = D11 @ u
    if n == 2:
        H[:, 0, 1] = H[:, 1, 0] = D12 @ u
        H[:, 1, 1] = D22 @ u
    return H.reshape(grid.shape + (n, n))


# ---------------------------------------------------------------------------
# fields


@dataclass
class PotentialField:
    """Scalar potential on a reduced grid with Dirichlet value on the boundary."""

    grid: ReducedGrid
    values: np.ndarray
    boundary_value: float = 0.0

    @classmethod
    def zeros(cls, grid: ReducedGrid) -> "PotentialField":
        return cls(grid, np.zeros(grid.shape))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class SourceTerm:
    """Normalized source ``f = f_raw + constant``."""

    values: np.ndarray
    constant: float
    mu_coupled: bool = False
    normalization_error: float = 0.0


@dataclass
class SolveReport:
    epsilon: float
    iterations: int
    residual: float
    phi_sup: float
    sup_laplacian: float
    inf_f: float
    inf_laplacian_f_neg: float
    inf_bisectional: float
    wall_time: float = 0.0
    converged: bool = True
    residual_history: list = field(default_factory=list)
    normalization_error: float = 0.0
    min_eigenvalue_history: list = field(default_factory=list)

    def constants(self) -> dict:
        """The four inputs of the laplacian bound."""
        return {"phi_sup": self.phi_sup, "inf_bisectional": self.inf_bisectional,
                "inf_f": self.inf_f, "inf_laplacian_f_neg": self.inf_laplacian_f_neg}

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d.pop("wall_time")
        return d


@dataclass
class RicciData:
    """Ricci form ``-dd^c log det g`` on a grid and derived quantities."""

    rho: np.ndarray
    trace: np.ndarray
    potential: np.ndarray | None = None
    laplacian_potential: np.ndarray | None = None
    inf_laplacian_neg: float = float("nan")
    growth_ratio: np.ndarray | None = None


def grid_metric(params: ConeParams, weight: HermitianWeight, base: BaseMetric,
                grid: ReducedGrid) -> MetricField:
    """Reference metric at the nodes of ``grid``, positivity checked."""
    if grid.has_origin and params.epsilon == 0:
        raise ValueError("a grid containing the origin needs epsilon > 0")
    pts = grid.points().reshape(-1, grid.n)
    pot = reference_potential_jet(params, weight, base, pts, degree=2)
    (G,) = hessian_from_jet(pot, grid.n, order=2)
    G = hermitize(G)
    eig = np.linalg.eigvalsh(G)[:, 0]
    if np.any(eig <= 0):
        from .model_geometry import PositivityError

        k = int(np.argmin(eig))
        raise PositivityError(pts[k], eig[k])
    return MetricField(grid.points(), G.reshape(grid.shape + (grid.n, grid.n)), None,
                       {"grid": grid, "params": params, "weight": weight, "base": base})


def _grid_of(metric: MetricField) -> ReducedGrid:
    try:
        return metric.meta["grid"]
    except KeyError:
        raise ValueError("metric field is not attached to a reduced grid") from None


def _trace(Ainv: np.ndarray, H: np.ndarray) -> np.ndarray:
    return np.einsum("...ba,...ab->...", Ainv, H).real


def laplacian(metric: MetricField, values: np.ndarray, ops=None) -> np.ndarray:
    """``tr_g Hess u`` at every node (zero at Dirichlet nodes)."""
    grid = _grid_of(metric)
    H = discrete_hessian(grid, values, ops)
    return _trace(np.linalg.inv(metric.G), H)


# ---------------------------------------------------------------------------
# Ricci


def ricci_form(metric: MetricField) -> RicciData:
    """``rho_{a bbar} = -(log det g)_{, a bbar}`` by centred differences.

    Warns
    -----
    ConditioningWarning
        When some ``cond(g)`` exceeds ``1e12``.
    """
    grid = _grid_of(metric)
    cond = np.linalg.cond(metric.G.reshape(-1, grid.n, grid.n))
    if np.max(cond) > 1e12:
        warnings.warn(f"cond(g) up to {np.max(cond):.3g}", ConditioningWarning)
    logdet = np.log(np.linalg.det(metric.G).real)
    rho = -discrete_hessian(grid, logdet)
    tr = _trace(np.linalg.inv(metric.G), rho)
    return RicciData(rho, tr)


def _linear_operator(grid: ReducedGrid, Ainv: np.ndarray, ops, shift: float = 0.0):
    """Sparse ``u -> tr(Ainv Hess u) + shift * u`` restricted to unknown nodes."""
    D11, D12, D22 = ops
    A = Ainv.reshape(-1, grid.n, grid.n)
    L = sp.diags(A[:, 0, 0].real) @ D11
    if grid.n == 2:
        L = L + sp.diags(2 * A[:, 0, 1].real) @ D12 + sp.diags(A[:, 1, 1].real) @ D22
    U = np.flatnonzero(grid.unknown_mask().ravel())
    L = L.tocsr()[U][:, U]
    if shift:
        L = L + shift * sp.identity(U.size, format="csr")
    return L.tocsc(), U


def ricci_potential(metric: MetricField, mu: float = 0.0, tau: float | None = None) -> RicciData:
    """Solve ``Delta_g f = tr_g(rho) - n mu`` with ``f = 0`` on the Dirichlet boundary.

    ``growth_ratio`` records ``(tr_g rho)^+ * |z_1|^(2 tau)`` at every node,
    which tends to zero toward the divisor exactly when the positive part of
    the Ricci trace is ``o(|z_1|^(-2 tau))``.
    """
    grid = _grid_of(metric)
    data = ricci_form(metric)
    rhs = data.trace - grid.n * mu
    ops = grid.hessian_operators()
    L, U = _linear_operator(grid, np.linalg.inv(metric.G), ops)
    try:
        sol = spla.spsolve(L, rhs.ravel()[U])
    except Exception as exc:  # scipy raises several types here
        raise LinearSolveError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise LinearSolveError("non-finite Ricci potential")
    f = np.zeros(grid.size)
    f[U] = sol
    f = f.reshape(grid.shape)
    lap = laplacian(metric, f, ops)
    mask = grid.unknown_mask()
    data.potential = f
    data.laplacian_potential = lap
    data.inf_laplacian_neg = float(min(np.min(lap[mask]), 0.0))
    if tau is None:
        tau = metric.meta["params"].tau if "params" in metric.meta else 1.0
    data.growth_ratio = np.maximum(data.trace, 0.0) * grid.rho_field() ** (2 * tau)
    return data


# ---------------------------------------------------------------------------
# right-hand side


def integrate(grid: ReducedGrid, values: np.ndarray) -> float:
    return float(np.sum(grid.volume_weights() * values))


def build_rhs(f_raw: np.ndarray, metric: MetricField, mu_coupled: bool = False) -> SourceTerm:
    """Shift ``f_raw`` so that ``int e^f det g = int det g`` (trapezoid rule).

    Raises
    ------
    OverflowError
        If ``sup f_raw > 700``.
    """
    grid = _grid_of(metric)
    f_raw = np.asarray(f_raw, dtype=float)
    if not np.all(np.isfinite(f_raw)):
        raise ValueError("f_raw must be finite")
    if np.max(f_raw) > 700:
        raise OverflowError("sup f_raw > 700 would overflow exp")
    vol = np.linalg.det(metric.G).real
    total = integrate(grid, vol)
    c = math.log(total) - math.log(integrate(grid, np.exp(f_raw) * vol))
    f = f_raw + c
    err = abs(integrate(grid, np.exp(f) * vol) - total) / total
    return SourceTerm(f, c, mu_coupled, err)


def normalization_error(source: SourceTerm, metric: MetricField) -> float:
    grid = _grid_of(metric)
    vol = np.linalg.det(metric.G).real
    total = integrate(grid, vol)
    return abs(integrate(grid, np.exp(source.values) * vol) - total) / total


# ---------------------------------------------------------------------------
# Newton


def _residual(grid, G, logdetG, H, f, phi, mu, mask):
    Gp = G + H
    eig = np.linalg.eigvalsh(Gp[mask])[:, 0]
    if np.any(eig <= 0):
        return None, None, float(np.min(eig))
    F = np.log(np.linalg.det(Gp[mask]).real) - logdetG[mask] - f[mask] + mu * phi[mask]
    return F, Gp, float(np.min(eig))


def newton_solve(params: ConeParams, metric: MetricField, source: SourceTerm, tol: float = 1e-10,
                 max_iter: int = 60, phi0: PotentialField | None = None,
                 mu: float | None = None, monitor: bool = True,
                 iterate_callback: Callable | None = None) -> tuple:
    """Damped Newton iteration for ``log det(g + Hess phi) - log det g = f - mu phi``.

    The linearization is ``tr((g + Hess phi)^-1 Hess psi) + mu psi``. Each
    step is halved (at most 40 times) until ``g + Hess phi`` stays positive
    definite at every unknown node and the residual sup-norm strictly
    decreases. For ``mu > 0`` the coupling is handled by an outer Picard
    iteration on ``f - mu phi``.

    Returns
    -------
    (PotentialField, SolveReport)

    Raises
    ------
    PositivityUnrecoverable
        If no damped step is acceptable.
    MaxIterationsError
        If the tolerance is not met in ``max_iter`` iterations.
    LinearSolveError
        If the sparse solve fails.
    """
    t0 = time.perf_counter()
    grid = _grid_of(metric)
    if grid.has_origin and params.epsilon == 0:
        raise ValueError("a grid containing the origin needs epsilon > 0")
    mu = params.mu if mu is None else mu
    if mu > 0:
        phi, report = _picard(params, metric, source, tol, max_iter, phi0, mu, iterate_callback)
    else:
        phi, report = _newton(metric, source.values, tol, max_iter, phi0, mu, iterate_callback)
    report.epsilon = params.epsilon
    report.normalization_error = normalization_error(source, metric)
    if monitor:
        frag = laplacian_monitor(phi, metric, source)
        for k, v in frag.items():
            setattr(report, k, v)
    report.wall_time = time.perf_counter() - t0
    return phi, report


def _newton(metric, f, tol, max_iter, phi0, mu, callback):
    grid = _grid_of(metric)
    ops = grid.hessian_operators()
    mask = grid.unknown_mask()
    G = metric.G
    logdetG = np.log(np.linalg.det(G).real)
    phi = np.zeros(grid.shape) if phi0 is None else np.array(phi0.values, dtype=float)
    phi[~mask] = 0.0
    H = discrete_hessian(grid, phi, ops)
    F, Gp, mineig = _residual(grid, G, logdetG, H, f, phi, mu, mask)
    if F is None:
        phi = np.zeros(grid.shape)
        H = discrete_hessian(grid, phi, ops)
        F, Gp, mineig = _residual(grid, G, logdetG, H, f, phi, mu, mask)
    res = float(np.max(np.abs(F))) if F.size else 0.0
    history, eigs = [res], [mineig]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise MaxIterationsError(f"residual {res:.3g} after {it} iterations")
        Ainv = np.zeros_like(Gp)
        Ainv[mask] = np.linalg.inv(Gp[mask])
        L, U = _linear_operator(grid, Ainv, ops, shift=mu)
        try:
            delta = spla.spsolve(L, -F)
        except Exception as exc:
            raise LinearSolveError(str(exc)) from exc
        if not np.all(np.isfinite(delta)):
            raise LinearSolveError("non-finite Newton update")
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = phi.copy()
            trial.ravel()[U] += step * delta
            Ht = discrete_hessian(grid, trial, ops)
            Ft, Gpt, me = _residual(grid, G, logdetG, Ht, f, trial, mu, mask)
            if Ft is not None:
                rt = float(np.max(np.abs(Ft)))
                if rt < res:
                    break
            step *= 0.5
        else:
            raise PositivityUnrecoverable(f"no acceptable step after {MAX_HALVINGS} halvings")
        phi, F, Gp, res = trial, Ft, Gpt, rt
        it += 1
        history.append(res)
        eigs.append(me)
        if callback is not None:
            callback(PotentialField(grid, phi.copy()))
    report = SolveReport(0.0, it, res, float(np.max(np.abs(phi))), float("nan"), float("nan"),
                         float("nan"), float("nan"), residual_history=history,
                         min_eigenvalue_history=eigs)
    return PotentialField(grid, phi), report


def _picard(params, metric, source, tol, max_iter, phi0, mu, callback):
    grid = _grid_of(metric)
    phi = PotentialField.zeros(grid) if phi0 is None else phi0
    total_its = 0
    history = []
    for _ in range(max_iter):
        f_eff = source.values - mu * phi.values
        new, rep = _newton(metric, f_eff, tol * 0.1, max_iter, phi, 0.0, callback)
        total_its += rep.iterations
        history += rep.residual_history
        change = float(np.max(np.abs(new.values - phi.values)))
        phi = new
        if change < tol:
            break
    else:
        raise MaxIterationsError("Picard iteration for mu > 0 did not converge")
    # residual of the coupled equation
    mask = grid.unknown_mask()
    H = discrete_hessian(grid, phi.values)
    logdetG = np.log(np.linalg.det(metric.G).real)
    F, _, me = _residual(grid, metric.G, logdetG, H, source.values, phi.values, mu, mask)
    rep.iterations = total_its
    rep.residual = float(np.max(np.abs(F)))
    rep.residual_history = history
    rep.phi_sup = phi.sup_norm()
    return phi, rep


# ---------------------------------------------------------------------------
# monitoring


def grid_curvature_infimum(metric: MetricField, random_pairs: int = 8, seed: int = 0) -> float:
    """Infimum of normalized bisectional curvature of the reference metric on the grid nodes."""
    meta = metric.meta
    if not {"params", "weight", "base"} <= meta.keys():
        return float("nan")
    grid = _grid_of(metric)
    pts = grid.points().reshape(-1, grid.n)
    G, R = curvature_batch(meta["params"], meta["weight"], pts, meta["base"])
    vals = list(frame_bisectional(R, G).values())
    if random_pairs:
        vals.append(random_pair_bisectional(R, G, random_pairs, np.random.default_rng(seed)))
    return float(np.min(np.column_stack(vals)))


def laplacian_monitor(phi: PotentialField, metric: MetricField, source: SourceTerm) -> dict:
    """The quantities entering the laplacian bound, plus ``sup(n + Delta phi)``."""
    grid = _grid_of(metric)
    ops = grid.hessian_operators()
    mask = grid.unknown_mask()
    lap_phi = laplacian(metric, phi.values, ops)
    lap_f = laplacian(metric, source.values, ops)
    if "inf_bisectional" not in metric.meta:
        metric.meta["inf_bisectional"] = grid_curvature_infimum(metric)
    return {
        "phi_sup": phi.sup_norm(),
        "sup_laplacian": float(np.max(lap_phi[mask])),
        "sup_n_plus_laplacian": float(grid.n + np.max(lap_phi[mask])),
        "inf_f": float(np.min(source.values)),
        "inf_laplacian_f_neg": float(min(np.min(lap_f[mask]), 0.0)),
        "inf_bisectional": metric.meta["inf_bisectional"],
    }


# ---------------------------------------------------------------------------
# continuation


@dataclass
class ContinuationStep:
    epsilon: float
    phi: PotentialField
    report: SolveReport
    source: SourceTerm
    cauchy: float = float("nan")
    source_lp_gap: float = float("nan")


def epsilon_continuation(params: ConeParams, weight: HermitianWeight,
                         source_family: Callable, eps_schedule: Sequence[float], tol: float = 1e-10,
                         base: BaseMetric | None = None, grid: ReducedGrid | None = None,
                         lp: float = 2.0) -> list:
    """Solve for each ``eps`` in a decreasing schedule, warm-starting each solve.

    ``source_family(grid, eps)`` returns the raw source on the grid. Each step
    records the sup-norm difference to the previous solution (``cauchy``) and
    the discrete ``L^lp`` distance of ``e^f`` between consecutive sources.

    Raises
    ------
    SolverError
        From the failing solve, with the offending ``eps`` in the message.
    """
    if any(b > a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps_schedule must be decreasing")
    if any(e <= 0 for e in eps_schedule):
        raise ValueError("eps values must be positive")
    grid = grid or ReducedGrid()
    base = base or BaseMetric.flat(np.ones(grid.n))
    out: list = []
    prev = None
    for eps in eps_schedule:
        p = params.with_(epsilon=eps)
        metric = grid_metric(p, weight, base, grid)
        source = build_rhs(source_family(grid, eps), metric)
        try:
            phi, rep = newton_solve(p, metric, source, tol, phi0=prev.phi if prev else None)
        except SolverError as exc:
            raise type(exc)(f"eps={eps}: {exc}") from exc
        step = ContinuationStep(eps, phi, rep, source)
        if prev is not None:
            step.cauchy = float(np.max(np.abs(phi.values - prev.phi.values)))
            gap = np.abs(np.exp(source.values) - np.exp(prev.source.values)) ** lp
            step.source_lp_gap = integrate(grid, gap) ** (1.0 / lp)
        out.append(step)
        prev = step
    return out


# ---------------------------------------------------------------------------
# differential inequality


@dataclass
class InequalityResult:
    margin: np.ndarray
    scale: np.ndarray
    worst: float
    worst_scaled: float
    worst_index: tuple
    h: float
    lhs: np.ndarray
    rhs: np.ndarray


def _frame_quantities(metric: MetricField, phi: np.ndarray, ops):
    """Eigenvalues of ``Hess phi`` relative to ``g`` and the bisectional matrix in that frame."""
    grid = _grid_of(metric)
    n = grid.n
    mask = grid.unknown_mask()
    Hphi = discrete_hessian(grid, phi, ops)
    G = metric.G
    meta = metric.meta
    pts = grid.points().reshape(-1, n)
    Gc, R = curvature_batch(meta["params"], meta["weight"], pts, meta["base"])
    R = R.reshape(grid.shape + (n,) * 4)
    Lc = np.linalg.cholesky(G[mask])
    Li = np.linalg.inv(Lc)
    # g = L L^*; columns e_a of conj(L^{-*} V) satisfy e^T g conj(e) = I and
    # diagonalize Hess phi in the same sense
    M = hermitize(Li @ Hphi[mask] @ np.conj(np.swapaxes(Li, -1, -2)))
    w, V = np.linalg.eigh(M)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("frame diagonalization failed")
    E = np.conj(np.conj(np.swapaxes(Li, -1, -2)) @ V)
    lam = np.zeros(grid.shape + (n,))
    Rab = np.zeros(grid.shape + (n, n))
    lam[mask] = w
    Rab[mask] = np.einsum("mabcd,maA,mbA,mcB,mdB->mAB", R[mask], E, np.conj(E), E, np.conj(E)).real
    return Hphi, lam, Rab


def differential_inequality_check(phi: PotentialField, metric: MetricField,
                                  source: SourceTerm | None = None, C2: float = 0.0,
                                  curvature_bound: float | None = None,
                                  literal: bool = False) -> InequalityResult:
    """Margin ``LHS - RHS`` of the laplacian differential inequality at interior nodes.

    With ``C2 = 0``::

        LHS = Delta' log(n + Delta phi)
        RHS = [Delta f + sum_{a,b} R_{a abar b bbar}((1 + phi_a)/(1 + phi_b) - 1)] / (n + Delta phi)

    in a frame orthonormal for ``g`` that diagonalizes ``Hess phi``. With
    ``C2 != 0`` the shifted form is checked::

        LHS = Delta' (log(n + Delta phi) - C2 phi)
        RHS = [Delta f - C sum_{a,b} Q_ab] / (n + Delta phi) - C2 n + C2 sum_a 1/(1 + phi_a)

    where ``Q_ab = (1+phi_a)/(1+phi_b) + (1+phi_b)/(1+phi_a) - 2`` and ``C``
    is ``curvature_bound`` (default: minus the most negative bisectional
    value in the frame, or 0).

    With ``literal=True`` the left side is ``Delta' log(n + Delta phi - C2 phi)``
    instead, evaluated with ``phi - sup phi`` so that the argument of the
    logarithm stays positive. That form is not implied by the estimate for
    large ``C2``; it is kept for comparison.

    When ``source`` is ``None`` the source solved exactly by ``phi`` on the
    grid is used, so any iterate can be checked.

    Interior nodes are those whose stencil neighbours are all unknown nodes.
    """
    grid = _grid_of(metric)
    n = grid.n
    ops = grid.hessian_operators()
    mask = grid.unknown_mask()
    G = metric.G
    Ginv = np.linalg.inv(G)
    Hphi, lam, Rab = _frame_quantities(metric, phi.values, ops)
    lap_phi = _trace(Ginv, Hphi)
    Gp = G + Hphi
    logdetG = np.log(np.linalg.det(G).real)
    if source is None:
        fvals = np.zeros(grid.shape)
        fvals[mask] = np.log(np.linalg.det(Gp[mask]).real) - logdetG[mask]
        # extend to boundary nodes by the continuous value of the exact source there
        fvals[~mask] = 0.0
    else:
        fvals = source.values
    lap_f = _trace(Ginv, discrete_hessian(grid, fvals, ops))

    one_plus = 1.0 + lam
    ratio = one_plus[..., :, None] / one_plus[..., None, :]
    trace_g = n + lap_phi
    inner = _interior(grid)
    if C2 == 0.0:
        u = np.log(np.where(mask, trace_g, 1.0))
        rhs = (lap_f + np.sum(Rab * (ratio - 1.0), axis=(-1, -2))) / trace_g
    else:
        # normalized so that sup phi = 0; constants do not change Hess phi
        phi_n = phi.values - np.max(phi.values[mask])
        if literal:
            shifted = trace_g - C2 * phi_n
            if np.any(shifted[mask] <= 0):
                raise ValueError("n + Delta phi - C2 phi must be positive")
            u = np.log(np.where(mask, shifted, 1.0))
        else:
            u = np.log(np.where(mask, trace_g, 1.0)) - C2 * phi_n
        if curvature_bound is None:
            curvature_bound = max(0.0, -float(np.min(Rab[mask])))
        Q = ratio + np.swapaxes(ratio, -1, -2) - 2.0
        rhs = ((lap_f - curvature_bound * np.sum(Q, axis=(-1, -2))) / trace_g
               - C2 * n + C2 * np.sum(1.0 / one_plus, axis=-1))
    Ainv = np.zeros_like(Gp)
    Ainv[mask] = np.linalg.inv(Gp[mask])
    lhs = _trace(Ainv, discrete_hessian(grid, u, ops))
    margin = np.where(inner, lhs - rhs, np.inf)
    scale = _local_scale(grid, u, phi.values)
    k = np.unravel_index(np.argmin(margin), margin.shape)
    h = grid.h
    scaled = np.where(inner, margin / (h * h * scale), np.inf)
    return InequalityResult(margin, scale, float(margin[k]), float(np.min(scaled)), tuple(int(i) for i in k),
                            h, lhs, rhs)


def shift_comparison(phi: PotentialField, metric: MetricField, C2: float | None = None,
                     literal: bool = False) -> dict:
    """Margins with and without the ``C2`` shift at the interior minimum of ``n + Delta phi - C2 phi``.

    ``C2`` defaults to ``2 C (n^2 + 1) / min_a (1 + phi_a)`` with ``C`` the
    curvature bound in the diagonalizing frame. The source is the one solved
    exactly by ``phi``.
    """
    grid = _grid_of(metric)
    n = grid.n
    mask = grid.unknown_mask()
    _, lam, Rab = _frame_quantities(metric, phi.values, grid.hessian_operators())
    C = max(0.0, -float(np.min(Rab[mask])))
    min_eig = float(np.min(1.0 + lam[mask]))
    if C2 is None:
        C2 = 2.0 * C * (n * n + 1) / min_eig
    base = differential_inequality_check(phi, metric, None, 0.0)
    shifted = differential_inequality_check(phi, metric, None, C2, C, literal=literal)
    phi_n = phi.values - np.max(phi.values[mask])
    q = np.where(_interior(grid), n + laplacian(metric, phi.values) - C2 * phi_n, np.inf)
    k = np.unravel_index(np.argmin(q), q.shape)
    return {"C": C, "C2": float(C2), "min_eigenvalue": min_eig, "index": tuple(int(i) for i in k),
            "margin_unshifted": float(base.margin[k]), "margin_shifted": float(shifted.margin[k])}


def _interior(grid: ReducedGrid) -> np.ndarray:
    """Unknown nodes whose stencil neighbours are unknown nodes too."""
    m = grid.unknown_mask()
    inner = m.copy()
    inner[1:] &= m[:-1]
    inner[:-1] &= m[1:]
    inner[-1] = False
    if grid.n == 2 and not grid.x_periodic:
        inner[:, 1:] &= m[:, :-1]
        inner[:, :-1] &= m[:, 1:]
    return inner


def _fourth_differences(values: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if periodic:
        r = lambda s: np.roll(v, -s, axis=axis)  # noqa: E731
        return np.abs(r(2) - 4 * r(1) + 6 * v - 4 * r(-1) + r(-2))
    out = np.zeros_like(v)
    sl = [slice(None)] * v.ndim
    sl[axis] = slice(2, -2)
    c = lambda s: np.take(v, np.arange(2 + s, v.shape[axis] - 2 + s), axis=axis)  # noqa: E731
    out[tuple(sl)] = np.abs(c(2) - 4 * c(1) + 6 * c(0) - 4 * c(-1) + c(-2))
    return out


def _local_scale(grid: ReducedGrid, u: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``1 + sum_axes (k^2 / h^2) |D_k^4 (u, phi)| / k^4`` with ``k`` the mesh width of each axis.

    ``h^2 * scale`` estimates the leading truncation error of the centred
    second differences entering both sides of the inequality.
    """
    h2 = grid.h ** 2
    axes = [(0, grid.h_xi, False)]
    if grid.n == 2:
        axes.append((1, grid.h_x, grid.x_periodic))
    s = np.zeros(grid.shape)
    for axis, k, periodic in axes:
        d4 = _fourth_differences(u, axis, periodic) + _fourth_differences(phi, axis, periodic)
        s += d4 / (k * k * h2)
    return 1.0 + s


# ---------------------------------------------------------------------------
# localized equation


def localized_residual(w: PotentialField, mu: float, H, tau: float,
                       hessian: np.ndarray | None = None) -> float:
    """Sup-norm of ``log det Hess w - log |z_1|^(2 tau - 2) + mu w - H`` at unknown nodes off the divisor.

    ``H`` is a scalar or an array on the grid. Values of ``w`` at Dirichlet
    nodes are used only by the stencils of their neighbours. A precomputed
    ``hessian`` replaces the discrete Hessian of ``w``; use it on periodic
    grids, where a potential of a flat ``z_2`` factor is not periodic.

    Raises
    ------
    ValueError
        If ``Hess w`` is not positive definite at some node.
    """
    grid = w.grid
    mask = grid.unknown_mask() & (grid.rho_field() > 0)
    Hw = discrete_hessian(grid, w.values) if hessian is None else hessian
    eig = np.linalg.eigvalsh(Hw[mask])[:, 0]
    if np.any(eig <= 0):
        raise ValueError("w is not strictly plurisubharmonic on the grid")
    rho = grid.rho_field()
    Hv = np.broadcast_to(np.asarray(H, dtype=float), grid.shape)
    r = (np.log(np.linalg.det(Hw[mask]).real) - (2 * tau - 2) * np.log(rho[mask])
         + mu * w.values[mask] - Hv[mask])
    return float(np.max(np.abs(r)))


def recover_pluriharmonic(w: PotentialField, mu: float, tau: float,
                          hessian: np.ndarray | None = None) -> np.ndarray:
    """``H = log det Hess w - log |z_1|^(2 tau - 2) + mu w`` at unknown nodes off the divisor (NaN elsewhere)."""
    grid = w.grid
    mask = grid.unknown_mask() & (grid.rho_field() > 0)
    Hw = discrete_hessian(grid, w.values) if hessian is None else hessian
    out = np.full(grid.shape, np.nan)
    out[mask] = (np.log(np.linalg.det(Hw[mask]).real) - (2 * tau - 2) * np.log(grid.rho_field()[mask])
                 + mu * w.values[mask])
    return out


def reduced_reference_potential(params: ConeParams, weight: HermitianWeight, base_diag: Sequence[float],
                                grid: ReducedGrid) -> np.ndarray:
    """A potential of the reference metric that is independent of ``Im z_2``.

    The flat base ``sum_j lam_j |z_j|^2`` is replaced by
    ``lam_1 |z_1|^2 + 2 lam_2 (Re z_2)^2``, which differs from it by the
    pluriharmonic ``lam_2 Re(z_2^2)`` and can be differenced on the grid.
    The weight must not depend on ``Im z_2`` either.
    """
    pts = grid.points().reshape(-1, grid.n)
    pot = reference_potential_jet(params, weight, BaseMetric.zero(), pts, degree=0)
    vals = pot.value.real.reshape(grid.shape) + base_diag[0] * grid.rho_field() ** 2
    if grid.n == 2:
        vals = vals + 2.0 * base_diag[1] * grid.x_field() ** 2
    return vals


def exact_hessian(builder: Callable, grid: ReducedGrid) -> tuple:
    """Values and exact complex Hessians of a closed-form potential ``builder(z, zbar)``."""
    pts = grid.points().reshape(-1, grid.n)
    z, zb = coordinate_jets(pts, 2)
    jet: Jet = builder(z, zb)
    (H,) = hessian_from_jet(jet, grid.n, order=2)
    return jet.value.real.reshape(grid.shape), hermitize(H).reshape(grid.shape + (grid.n, grid.n))


def manufactured_source(metric: MetricField, builder: Callable) -> tuple:
    """``(phi_exact, f)`` with ``f = log det(g + Hess phi) - log det g`` from exact derivatives."""
    grid = _grid_of(metric)
    vals, H = exact_hessian(builder, grid)
    f = np.log(np.linalg.det(metric.G + H).real) - np.log(np.linalg.det(metric.G).real)
    return vals, f


def bump_cosine(amplitude: float = 1e-2, rho_max: float = 1.0, period: float = 1.0) -> Callable:
    """Builder of ``amplitude * (1 - |z_1|^2/rho_max^2)^2 * cos(2 pi Re z_2 / period)``."""

    def build(z, zb):
        s = 1.0 - z[0] * zb[0] * (1.0 / rho_max ** 2)
        radial = s * s
        if len(z) == 1:
            return radial * amplitude
        ang = ((z[1] + zb[1]) * (np.pi / period)).cos()
        return radial * ang * amplitude

    return build


__all__ = [
    "ReducedGrid", "PotentialField", "SourceTerm", "SolveReport", "RicciData",
    "grid_metric", "ricci_form", "ricci_potential", "build_rhs", "newton_solve",
    "epsilon_continuation", "laplacian_monitor", "differential_inequality_check",
    "localized_residual", "recover_pluriharmonic", "shift_comparison", "manufactured_source", "bump_cosine",
    "discrete_hessian", "laplacian", "integrate", "mixed_index",
]
