"""Equilibria, the impulsive periodic orbit, the principal eigenvalue and
empirical decay rates."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .geometry import NonpositiveDiffusionError, SpatialDomain, domain_measures
from .pde_core import (
    DiffusionOperator,
    Formulation,
    ModelParams,
    Scheme,
    StateFields,
    Trajectory,
    graph_laplacian,
)
from .scenarios import ImpulseSchedule, fmt, steps_between


class EigensolverError(RuntimeError):
    pass


class LogFitError(ValueError):
    pass


@dataclass(frozen=True)
class EquilibriumPair:
    disease_free: StateFields
    endemic: StateFields


def vector_equilibrium_level(params: ModelParams, domain: SpatialDomain, C_star: float) -> np.ndarray:
    """Stationary total vector density carrying mass ``C_star``.

    ``C*/(|Omega|_mu D)`` for ``Lap(D u)`` diffusion; flat ``C*/|Omega|`` for
    Fickian diffusion, whose stationary states are constants.
    """
    n = domain.n_cells
    D = params.field("D", n)
    if params.formulation is Formulation.FICKIAN:
        return np.full(n, C_star / domain_measures(domain, D).lebesgue)
    return C_star / (domain_measures(domain, D).mu * D)


def equilibria_m1(params: ModelParams, domain: SpatialDomain, N_field, C_star: float) -> EquilibriumPair:
    """The two nonnegative stationary states with host totals ``N`` and
    vector mass ``C_star``: all hosts susceptible, or all hosts infected."""
    if not C_star > 0:
        raise ValueError("C_star must be positive")
    n = domain.n_cells
    N = np.broadcast_to(np.asarray(N_field, dtype=float), (n,)).copy()
    if np.any(N < 0):
        raise ValueError("N must be nonnegative")
    level = vector_equilibrium_level(params, domain, C_star)
    zero = np.zeros(n)
    dfe = StateFields(N, zero, zero, level, zero)
    endemic = StateFields(zero, zero, N, zero, level)
    return EquilibriumPair(dfe, endemic)


# --------------------------------------------------------------------------
# impulsive periodic orbit


@dataclass(frozen=True)
class PeriodicOrbit:
    times: np.ndarray  # (n_t,) in [0, T]
    S_v: np.ndarray  # (n_t, n_cells)
    I_v: np.ndarray


def periodic_equilibrium_m2(
    params: ModelParams,
    domain: SpatialDomain,
    N_field,
    schedule: ImpulseSchedule,
    dt: float = 0.01,
    scheme: Scheme | str = Scheme.STRANG,
) -> PeriodicOrbit:
    """Vector trajectory over one season once every host is infected.

    Starting from ``(S_v0, 0)`` the vectors follow the linear system with
    infection pressure ``beta_h N``; the same splitting and diffusion
    discretization as the full solver are used so the two are comparable
    step for step.
    """
    scheme = Scheme(scheme)
    n = domain.n_cells
    m = steps_between(schedule.period, dt, "impulse period")
    k = params.field("beta_h", n) * np.broadcast_to(np.asarray(N_field, dtype=float), (n,))
    op = DiffusionOperator(domain, params, dt)

    def react(S, I, tau):
        S1 = S / (1.0 + tau * k)
        return S1, I + tau * k * S1

    S = np.broadcast_to(schedule.reset_S_v, (n,)).astype(float).copy()
    I = np.zeros(n)
    S_hist, I_hist = [S.copy()], [I.copy()]
    for _ in range(m):
        if scheme is Scheme.LIE:
            S, I = react(S, I, dt)
            out = op.apply(np.stack([S, I], axis=1))
            S, I = out[:, 0], out[:, 1]
        else:
            S, I = react(S, I, dt / 2)
            out = op.apply(np.stack([S, I], axis=1))
            S, I = react(out[:, 0], out[:, 1], dt / 2)
        S_hist.append(S.copy())
        I_hist.append(I.copy())
    times = np.arange(m + 1) * dt
    return PeriodicOrbit(times, np.array(S_hist), np.array(I_hist))


# --------------------------------------------------------------------------
# principal eigenvalue


@dataclass(frozen=True)
class SpectralResult:
    lambda_1: float
    phi_1: np.ndarray
    iterations: int


def _spectral_forms(domain: SpatialDomain, D, potential):
    n = domain.n_cells
    D = np.broadcast_to(np.asarray(D, dtype=float), (n,))
    if not np.all(D > 0):
        raise NonpositiveDiffusionError()
    V = np.broadcast_to(np.asarray(potential, dtype=float), (n,))
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    A = graph_laplacian(domain) / domain.cell_area + sp.diags(V / D)
    B = 1.0 / D
    return A.tocsc(), B, V, D


def rayleigh_quotient(domain: SpatialDomain, D, potential, phi: np.ndarray) -> float:
    """Discrete ``(int |grad phi|^2 dx + int V phi^2 dmu) / int phi^2 dmu``."""
    A, B, _, _ = _spectral_forms(domain, D, potential)
    return float(phi @ (A @ phi) / (phi @ (B * phi)))


def mu_norm(domain: SpatialDomain, D, phi: np.ndarray) -> float:
    D = np.broadcast_to(np.asarray(D, dtype=float), phi.shape)
    return float(np.sqrt(domain.cell_area * np.sum(phi * phi / D)))


def principal_eigenvalue(
    domain: SpatialDomain,
    D,
    potential,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> SpectralResult:
    """Smallest eigenvalue of ``-D Lap + V`` with Neumann boundary.

    Inverse power iteration (shift 0) on the pencil ``(L/h^2 + V/D, 1/D)``,
    which is symmetric in the ``dx/D`` inner product. When the operator is
    singular (a connected component with zero potential) the factorization
    uses the pencil shifted by one; the Rayleigh quotient is unaffected.
    The eigenfunction is positive with unit ``L^2(dx/D)`` norm.
    """
    A, B, V, D = _spectral_forms(domain, D, potential)
    n = domain.n_cells
    n_comp, labels = connected_components(graph_laplacian(domain), directed=False)
    singular = np.bincount(labels, weights=V, minlength=n_comp).min() == 0
    lu = splu((A + sp.diags(B)).tocsc() if singular else A)

    phi = np.ones(n)
    phi /= np.sqrt(phi @ (B * phi))
    lam = float(phi @ (A @ phi))
    for it in range(1, max_iter + 1):
        x = lu.solve(B * phi)
        x /= np.sqrt(x @ (B * x))
        if x.sum() < 0:
            x = -x
        new = float(x @ (A @ x))
        phi = x
        if abs(new - lam) < tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    else:
        raise EigensolverError("eigensolver did not converge")
    phi = phi / mu_norm(domain, D, phi)
    return SpectralResult(lambda_1=lam, phi_1=phi, iterations=it)


# --------------------------------------------------------------------------
# decay rates


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    intercept: float
    n_used: int


def fit_decay_rate(times, values, tail: float = 0.5) -> DecayFit:
    """Least-squares fit of ``log(value) = c - rate * t`` on the last
    ``tail`` fraction of the samples (at least three)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 3:
        raise LogFitError("need at least 3 samples")
    if not 0 < tail <= 1:
        raise ValueError("tail must be in (0, 1]")
    k = max(3, int(np.ceil(tail * t.size)))
    t, v = t[-k:], v[-k:]
    if np.any(v <= 0):
        raise LogFitError("cannot log-fit nonpositive values")
    y = np.log(v)
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(y * y))) else 1.0 - ss_res / ss_tot
    return DecayFit(rate=float(-slope), r_squared=r2, intercept=float(intercept), n_used=k)


def sup_distance(a: StateFields, b: StateFields) -> float:
    return float(np.abs(a.as_array() - b.as_array()).max())


def convergence_series(
    trajectory: Trajectory, params: ModelParams, domain: SpatialDomain
) -> dict[str, np.ndarray]:
    """Quantities that decay to zero along an M1 run.

    Keys: ``endemic_sup`` (sup distance to the endemic state), ``S_h_max``,
    ``E_h_max``, ``s_v_max`` (``max D S_v``), ``host_gap`` (``max |I_h - N|``)
    and ``i_v_l2mu`` (``L^2(dx/D)`` distance of ``D I_v`` to its limit).
    """
    n = domain.n_cells
    D = params.field("D", n)
    first = trajectory.snapshots[0]
    N = first.hosts()
    C_star = domain.integrate(first.vectors())
    eq = equilibria_m1(params, domain, N, C_star).endemic
    limit = D * eq.I_v
    out: dict[str, list[float]] = {k: [] for k in ("endemic_sup", "S_h_max", "E_h_max", "s_v_max", "host_gap", "i_v_l2mu")}
    for s in trajectory.snapshots:
        out["endemic_sup"].append(sup_distance(s, eq))
        out["S_h_max"].append(float(s.S_h.max()))
        out["E_h_max"].append(float(s.E_h.max()))
        out["s_v_max"].append(float((D * s.S_v).max()))
        out["host_gap"].append(float(np.abs(s.I_h - N).max()))
        out["i_v_l2mu"].append(mu_norm(domain, D, D * s.I_v - limit))
    return {k: np.array(v) for k, v in out.items()}


# --------------------------------------------------------------------------
# export


def write_decay_report(fits: dict[str, DecayFit], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "lambda_fit", "r_squared"])
        for name, fit in fits.items():
            w.writerow([name, fmt(fit.rate), fmt(fit.r_squared)])
    return path


def write_eigenpair(domain: SpatialDomain, result: SpectralResult, directory: str | Path) -> list[Path]:
    """Write ``eigenfunction.csv`` (x, y, phi_1) and ``spectral.csv``
    (quantity, value) with ``lambda_1``."""
    directory = Path(directory)
    efile = directory / "eigenfunction.csv"
    sfile = directory / "spectral.csv"
    centers = domain.cell_centers
    with efile.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "phi_1"])
        for (x, y), v in zip(centers, result.phi_1):
            w.writerow([fmt(x), fmt(y), fmt(v)])
    with sfile.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        w.writerow(["lambda_1", fmt(result.lambda_1)])
        w.writerow(["iterations", result.iterations])
    return [efile, sfile]


def write_equilibria(domain: SpatialDomain, pair: EquilibriumPair, path: str | Path) -> Path:
    path = Path(path)
    centers = domain.cell_centers
    names = ("S_h", "E_h", "I_h", "S_v", "I_v")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"] + [f"dfe_{c}" for c in names] + [f"endemic_{c}" for c in names])
        a, b = pair.disease_free.as_array(), pair.endemic.as_array()
        for i, (x, y) in enumerate(centers):
            w.writerow([fmt(x), fmt(y)] + [fmt(v) for v in a[:, i]] + [fmt(v) for v in b[:, i]])
    return path
