"""Spatial vector-host epidemic model: simulation, equilibrium analysis and
variance-based sensitivity analysis."""

from __future__ import annotations

from .analysis import (
    equilibria_m1,
    fit_decay_rate,
    periodic_equilibrium_m2,
    principal_eigenvalue,
    rayleigh_quotient,
)
from .geometry import SpatialDomain, build_domain, domain_measures, mediterranean_arc
from .gsa import build_design, estimate_indices, lhs_sample, spatiotemporal_gsa
from .pde_core import Formulation, ModelParams, Scheme, StateFields, Trajectory, split_step
from .scenarios import ImpulseSchedule, SimulationConfig, simulate_m1, simulate_m2, simulate_reduced

__all__ = [
    "Formulation",
    "ImpulseSchedule",
    "ModelParams",
    "Scheme",
    "SimulationConfig",
    "SpatialDomain",
    "StateFields",
    "Trajectory",
    "build_design",
    "build_domain",
    "domain_measures",
    "equilibria_m1",
    "estimate_indices",
    "fit_decay_rate",
    "lhs_sample",
    "mediterranean_arc",
    "periodic_equilibrium_m2",
    "principal_eigenvalue",
    "rayleigh_quotient",
    "simulate_m1",
    "simulate_m2",
    "simulate_reduced",
    "spatiotemporal_gsa",
    "split_step",
]
