"""State, parameters and one-step solvers for the vector-host system.

Hosts are fixed and carry an S-E-I structure; vectors diffuse and carry S-I.
Per cell the reaction terms are::

    dS_h = -beta_v S_h I_v
    dE_h =  beta_v S_h I_v - eps E_h
    dI_h =  eps E_h
    dS_v = -beta_h S_v I_h
    dI_v =  beta_h S_v I_h

and the vector compartments additionally diffuse, either as ``Lap(D u)``
(random walk in a heterogeneous medium, the default) or ``div(D grad u)``
(Fickian flux), with zero flux across the domain boundary.

A time step is split into a reaction stage (implicit Euler, Newton per cell)
and a diffusion stage (implicit Euler, finite-volume stencil, sparse direct
solve).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import NonpositiveDiffusionError, SpatialDomain

log = logging.getLogger(__name__)

COMPARTMENTS = ("S_h", "E_h", "I_h", "S_v", "I_v")

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
LINEAR_TOL = 1e-10
CLAMP_TOL = 1e-12


class ReactionSolverError(RuntimeError):
    """Newton iteration failed in at least one cell."""

    def __init__(self, cell: int, residual: float) -> None:
        super().__init__(f"reaction solver diverged in cell {cell} (residual {residual:.3e})")
        self.cell = cell
        self.residual = residual


class DiffusionSolveError(RuntimeError):
    def __init__(self, residual: float) -> None:
        super().__init__(f"diffusion solve failed (relative residual {residual:.3e})")
        self.residual = residual


class Formulation(str, enum.Enum):
    NONFICKIAN = "nonfickian"  # d_t u = Lap(D u)
    FICKIAN = "fickian"  # d_t u = div(D grad u)


class Scheme(str, enum.Enum):
    LIE = "lie"
    STRANG = "strang"


@dataclass(frozen=True)
class ModelParams:
    """Model coefficients; each rate may be a scalar or a per-cell array."""

    beta_v: float | np.ndarray
    beta_h: float | np.ndarray
    D: float | np.ndarray
    epsilon: float
    formulation: Formulation = Formulation.NONFICKIAN

    def __post_init__(self) -> None:
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        if np.any(np.asarray(self.beta_v) < 0) or np.any(np.asarray(self.beta_h) < 0):
            raise ValueError("contact rates must be nonnegative")
        if not np.all(np.asarray(self.D) > 0):
            raise NonpositiveDiffusionError()
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def field(self, name: str, n: int) -> np.ndarray:
        """Broadcast coefficient ``name`` to a length-``n`` array."""
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,))

    def replace(self, **changes) -> "ModelParams":
        values = {k: getattr(self, k) for k in ("beta_v", "beta_h", "D", "epsilon", "formulation")}
        values.update(changes)
        return ModelParams(**values)


@dataclass
class StateFields:
    """The five compartment densities over the masked-in cells."""

    S_h: np.ndarray
    E_h: np.ndarray
    I_h: np.ndarray
    S_v: np.ndarray
    I_v: np.ndarray

    def __post_init__(self) -> None:
        for name in COMPARTMENTS:
            setattr(self, name, np.array(getattr(self, name), dtype=float))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "StateFields":
        return cls(*(np.array(row) for row in arr))

    @classmethod
    def uniform(cls, n: int, S_h=0.0, E_h=0.0, I_h=0.0, S_v=0.0, I_v=0.0) -> "StateFields":
        vals = (S_h, E_h, I_h, S_v, I_v)
        return cls(*(np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy() for v in vals))

    def as_array(self) -> np.ndarray:
        return np.stack([getattr(self, name) for name in COMPARTMENTS])

    def copy(self) -> "StateFields":
        return StateFields.from_array(self.as_array())

    def __iter__(self) -> Iterator[np.ndarray]:
        return (getattr(self, name) for name in COMPARTMENTS)

    @property
    def n_cells(self) -> int:
        return self.S_h.shape[0]

    def hosts(self) -> np.ndarray:
        return self.S_h + self.E_h + self.I_h

    def vectors(self) -> np.ndarray:
        return self.S_v + self.I_v


@dataclass(frozen=True)
class LedgerEntry:
    """Conserved-quantity audit at one snapshot.

    ``host_dev`` is the worst per-cell relative deviation of S_h+E_h+I_h from
    N(x); ``vector_dev`` is the relative deviation of the vector integral
    from its reference value (C*, or the last post-impulse integral).
    """

    t: float
    host_dev: float
    vector_integral: float
    vector_dev: float
    clamp_mass: float


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    snapshots: list[StateFields] = field(default_factory=list)
    ledger: list[LedgerEntry] = field(default_factory=list)
    # worst deviations over every step, not only snapshots
    max_host_dev: float = 0.0
    max_vector_dev: float = 0.0
    # impulsive runs: state right after each reset
    impulse_times: list[float] = field(default_factory=list)
    post_impulse: list[StateFields] = field(default_factory=list)

    def append(self, t: float, state: StateFields, entry: LedgerEntry) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(t)
        self.snapshots.append(state.copy())
        self.ledger.append(entry)

    def series(self, compartment: str) -> np.ndarray:
        """``(n_times, n_cells)`` array for one compartment."""
        return np.stack([getattr(s, compartment) for s in self.snapshots])

    @property
    def final(self) -> StateFields:
        return self.snapshots[-1]


@dataclass
class StepStats:
    clamp_mass: float = 0.0
    newton_iterations: int = 0


def _clamp(arr: np.ndarray, stats: StepStats | None) -> np.ndarray:
    neg = arr < 0
    if neg.any():
        lost = -float(arr[neg].sum())
        floor = CLAMP_TOL * max(1.0, float(np.abs(arr).max()))
        if arr.min() < -floor:
            log.warning("clamped negative density %.3e beyond round-off", arr.min())
        arr[neg] = 0.0
        if stats is not None:
            stats.clamp_mass += lost
    return arr


# --------------------------------------------------------------------------
# reaction stage


def _residual(y, y0, p, q, r):
    Sh, Eh, Ih, Sv, Iv = y
    inf_h = p * Sh * Iv
    inf_v = q * Sv * Ih
    lat = r * Eh
    return np.stack(
        [
            Sh - y0[0] + inf_h,
            Eh - y0[1] - inf_h + lat,
            Ih - y0[2] - lat,
            Sv - y0[3] + inf_v,
            Iv - y0[4] - inf_v,
        ]
    )


def _vector_map(v, y0, p, q, r):
    """``Phi(v)`` and ``Phi'(v)`` for the reduced implicit-Euler equation.

    With ``v`` the new ``I_v``, the host block is solved in closed form and
    the new ``S_v`` follows from the new ``I_h``; the root of
    ``v - Phi(v)`` is the implicit-Euler step. ``Phi`` is increasing and
    concave on ``v >= 0``.
    """
    Sh0, Eh0, Ih0, Sv0, Iv0 = y0
    V = Sv0 + Iv0
    den = 1.0 + p * v
    w = r / (1.0 + r)
    Ih = Ih0 + w * (Eh0 + p * Sh0 * v / den)
    dIh = w * p * Sh0 / (den * den)
    den_v = 1.0 + q * Ih
    return V - Sv0 / den_v, q * Sv0 * dIh / (den_v * den_v)


def _assemble(v, y0, p, q, r):
    Sh0, Eh0, Ih0, Sv0, Iv0 = y0
    Sh = Sh0 / (1.0 + p * v)
    Eh = (Eh0 + p * Sh * v) / (1.0 + r)
    Ih = Ih0 + r * Eh
    Sv = Sv0 / (1.0 + q * Ih)
    return np.stack([Sh, Eh, Ih, Sv, (Sv0 + Iv0) - Sv])


def solve_reaction(
    y0: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    stats: StepStats | None = None,
) -> np.ndarray:
    """Implicit-Euler reaction update of a ``(5, n)`` state array.

    ``p, q, r`` are ``dt*beta_v, dt*beta_h, dt*eps``. Eliminating the other
    compartments leaves ``g(v) = v - Phi(v) = 0`` in the new ``I_v``, with
    ``g`` convex, ``g(0) <= 0 < g(S_v + I_v)``. Newton started at the upper
    end decreases monotonically onto the unique nonnegative root; Newton
    from the current state can instead land on a root with negative
    ``I_v`` when the contact terms are stiff. A cell with no infection at
    all keeps ``v = 0``. Convergence: ``|g|`` below
    ``NEWTON_TOL * max(1, |y0|_inf) / (1 + p S_h)`` per cell, which bounds
    the full five-equation residual by the unscaled tolerance.
    """
    n = y0.shape[1]
    scale = np.maximum(1.0, np.abs(y0).max(axis=0))
    V = y0[3] + y0[4]
    # the host equations see the error in v amplified by p*S_h
    tol = np.maximum(NEWTON_TOL * scale / (1.0 + p * y0[0]), 64 * np.finfo(float).eps * scale)
    v = V.copy()
    lo = np.zeros(n)
    clean = (y0[1] == 0) & (y0[2] == 0) & (y0[4] == 0)
    v[clean] = 0.0
    phi, dphi = _vector_map(v, y0, p, q, r)
    g = v - phi
    active = np.flatnonzero((np.abs(g) > tol) & ~clean)
    it = 0
    while active.size and it < NEWTON_MAX_ITER:
        it += 1
        ya = y0[:, active]
        va, ga = v[active], g[active]
        slope = 1.0 - dphi[active]
        # g > 0 right of the root, so the current point is an upper bracket
        lo_a = lo[active]
        step = np.where(slope > 0, ga / np.where(slope > 0, slope, 1.0), np.inf)
        trial = va - step
        bad = ~(trial > lo_a) | ~np.isfinite(trial)
        trial[bad] = 0.5 * (lo_a[bad] + va[bad])
        ph, dph = _vector_map(trial, ya, p[active], q[active], r[active])
        gt = trial - ph
        below = gt < 0
        lo[active[below]] = trial[below]
        v[active], g[active] = trial, gt
        phi[active], dphi[active] = ph, dph
        keep = np.abs(gt) > tol[active]
        # a point left of the root must not become the Newton start
        resume = below & keep
        if resume.any():
            v[active[resume]] = va[resume]
            g[active[resume]] = ga[resume]
            ph2, dph2 = _vector_map(va[resume], ya[:, resume], p[active[resume]],
                                    q[active[resume]], r[active[resume]])
            phi[active[resume]], dphi[active[resume]] = ph2, dph2
        active = active[keep]
    if stats is not None:
        stats.newton_iterations += it
    if active.size:
        worst = active[np.argmax(np.abs(g[active]))]
        raise ReactionSolverError(int(worst), float(abs(g[worst])))
    y = _assemble(v, y0, p, q, r)
    for k in range(5):
        _clamp(y[k], stats)
    assert y.shape[1] == n
    return y


def _rates(params: ModelParams, n: int, dt: float):
    return (
        dt * params.field("beta_v", n),
        dt * params.field("beta_h", n),
        dt * params.field("epsilon", n),
    )


def reaction_step(
    state: StateFields, params: ModelParams, dt: float, stats: StepStats | None = None
) -> StateFields:
    """Advance the local reaction ODE by ``dt`` in every cell (implicit Euler)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = state.n_cells
    y = solve_reaction(state.as_array(), *_rates(params, n, dt), stats=stats)
    return StateFields.from_array(y)


# --------------------------------------------------------------------------
# diffusion stage


def graph_laplacian(domain: SpatialDomain, weights: np.ndarray | None = None) -> sp.csr_matrix:
    """Finite-volume Neumann Laplacian ``L`` (positive semidefinite).

    ``(L u)_i = sum_j w_ij (u_i - u_j)`` over faces shared with masked-in
    neighbours; faces on the domain boundary carry no flux.
    """
    n = domain.n_cells
    i, j = domain.faces[:, 0], domain.faces[:, 1]
    w = np.ones(len(i)) if weights is None else np.asarray(weights, dtype=float)
    off = sp.coo_matrix((np.concatenate([-w, -w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
    deg = np.bincount(i, weights=w, minlength=n) + np.bincount(j, weights=w, minlength=n)
    return (off + sp.diags(deg)).tocsr()


class DiffusionOperator:
    """Factorized backward-Euler diffusion solve for one ``(params, dt)``.

    NONFICKIAN ``Lap(D u)`` is solved for ``w = D u``:
    ``(D^-1 + dt/h^2 L) w = u_old``, then ``u = w / D``. FICKIAN uses
    harmonic-mean face conductances: ``(I + dt/h^2 L_D) u = u_old``.
    Both matrices are symmetric M-matrices.
    """

    def __init__(self, domain: SpatialDomain, params: ModelParams, dt: float) -> None:
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.domain = domain
        self.dt = dt
        self.formulation = params.formulation
        n = domain.n_cells
        D = params.field("D", n)
        if not np.all(D > 0):
            raise NonpositiveDiffusionError()
        self.D = np.array(D)
        k = dt / domain.cell_area
        if self.formulation is Formulation.NONFICKIAN:
            A = sp.diags(1.0 / self.D) + k * graph_laplacian(domain)
        else:
            i, j = domain.faces[:, 0], domain.faces[:, 1]
            face_D = 2.0 * self.D[i] * self.D[j] / (self.D[i] + self.D[j])
            A = sp.identity(n) + k * graph_laplacian(domain, face_D)
        self.matrix = A.tocsc()
        self._lu = splu(self.matrix)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        scale = np.abs(rhs).max()
        if scale == 0:
            return x
        resid = np.abs(self.matrix @ x - rhs).max() / scale
        if resid >= LINEAR_TOL:
            x = x + self._lu.solve(rhs - self.matrix @ x)
            resid = np.abs(self.matrix @ x - rhs).max() / scale
            if not resid < LINEAR_TOL:
                raise DiffusionSolveError(resid)
        return x

    def apply(self, fields: np.ndarray, stats: StepStats | None = None) -> np.ndarray:
        """Diffuse one field (``(n,)``) or several stacked columns (``(n, m)``)."""
        x = self._solve(np.asarray(fields, dtype=float))
        if self.formulation is Formulation.NONFICKIAN:
            x = x / (self.D if x.ndim == 1 else self.D[:, None])
        return _clamp(x, stats)


def diffusion_step(
    domain: SpatialDomain, field: np.ndarray, params: ModelParams, dt: float
) -> np.ndarray:
    """One backward-Euler diffusion step of a per-cell density."""
    return DiffusionOperator(domain, params, dt).apply(field)


# --------------------------------------------------------------------------
# split step


class SplitStepper:
    """Reusable operator-splitting integrator for fixed ``(domain, params, dt)``.

    ``substeps`` subdivides each stage into that many implicit-Euler sub-steps;
    it exists to separate splitting error from stage error in convergence
    studies and is 1 in normal use.
    """

    def __init__(
        self,
        domain: SpatialDomain,
        params: ModelParams,
        dt: float,
        scheme: Scheme | str = Scheme.STRANG,
        substeps: int = 1,
    ) -> None:
        self.domain = domain
        self.params = params
        self.dt = float(dt)
        self.scheme = Scheme(scheme)
        self.substeps = int(substeps)
        n = domain.n_cells
        h = self.dt / self.substeps
        self._diffusion = DiffusionOperator(domain, params, h)
        self._full = _rates(params, n, h)
        self._half = _rates(params, n, h / 2)
        self.stats = StepStats()

    def _react(self, y: np.ndarray, rates) -> np.ndarray:
        for _ in range(self.substeps):
            y = solve_reaction(y, *rates, stats=self.stats)
        return y

    def _diffuse(self, y: np.ndarray) -> np.ndarray:
        v = y[3:5].T
        for _ in range(self.substeps):
            v = self._diffusion.apply(v, self.stats)
        y = y.copy()
        y[3:5] = v.T
        return y

    def step_array(self, y: np.ndarray) -> np.ndarray:
        if self.scheme is Scheme.LIE:
            return self._diffuse(self._react(y, self._full))
        y = self._react(y, self._half)
        y = self._diffuse(y)
        return self._react(y, self._half)

    def step(self, state: StateFields) -> StateFields:
        return StateFields.from_array(self.step_array(state.as_array()))


def split_step(
    domain: SpatialDomain,
    state: StateFields,
    params: ModelParams,
    dt: float,
    scheme: Scheme | str = Scheme.STRANG,
) -> StateFields:
    """Advance the full system by ``dt`` with Lie or Strang splitting."""
    return SplitStepper(domain, params, dt, scheme).step(state)
