"""Numerics for edge-cone Kahler metrics.

Submodules
----------
model_geometry
    Cone parameters, weights, domains and the reference metric.
symbolic_curvature
    Exact expansion of the curvature of the reference metric near the divisor.
numeric_curvature
    Curvature tensors from exact jets, blow-up rates and lower-bound scans.
holder_metrics
    Conical distances and Hoelder seminorms of grid functions.
ma_solver
    Damped Newton solver for the complex Monge-Ampere equation and estimate monitors.
cli
    Batch front end (``conekit`` console script).
"""

from .model_geometry import BaseMetric, ConeParams, DomainSpec, HermitianWeight, MetricField

__version__ = "0.1.0"

__all__ = ["BaseMetric", "ConeParams", "DomainSpec", "HermitianWeight", "MetricField", "__version__"]
