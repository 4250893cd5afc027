"""Full simulations: permanent vectors (M1), annual vector resets (M2), and
the reduced single-equation form of M1 used as a cross-check."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import SpatialDomain
from .pde_core import (
    COMPARTMENTS,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    DiffusionOperator,
    Formulation,
    LedgerEntry,
    ModelParams,
    ReactionSolverError,
    Scheme,
    SplitStepper,
    StateFields,
    Trajectory,
)


class SimulationError(RuntimeError):
    """A solver failure, stamped with the simulation time it occurred at."""

    def __init__(self, t: float, cause: Exception) -> None:
        super().__init__(f"t={t:.6g}: {cause}")
        self.t = t
        self.cause = cause


class ConfigError(ValueError):
    pass


def steps_between(span: float, dt: float, what: str = "interval") -> int:
    """Number of ``dt`` steps in ``span``; raises unless ``dt`` divides it."""
    k = int(round(span / dt))
    if k < 1 or abs(k * dt - span) > 1e-9 * max(abs(span), abs(dt)):
        raise ConfigError(f"dt={dt!r} does not divide {what}={span!r}")
    return k


@dataclass(frozen=True)
class ImpulseSchedule:
    """Annual vector reset: at every ``t = n * period`` the vectors are
    replaced by ``reset_S_v`` susceptibles and no infected vectors."""

    reset_S_v: np.ndarray
    period: float = 1.0

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ConfigError("impulse period must be positive")
        reset = np.array(self.reset_S_v, dtype=float)
        if np.any(reset < 0):
            raise ConfigError("reset profile must be nonnegative")
        object.__setattr__(self, "reset_S_v", reset)


@dataclass
class SimulationConfig:
    domain: SpatialDomain
    params: ModelParams
    initial: StateFields
    t_end: float
    dt: float = 0.01
    snapshot_every: float | None = None
    scheme: Scheme = Scheme.STRANG
    impulse: ImpulseSchedule | None = None
    t_start: float = 0.0

    def __post_init__(self) -> None:
        self.scheme = Scheme(self.scheme)
        if self.snapshot_every is None:
            self.snapshot_every = self.t_end
        self.validate()

    def validate(self) -> None:
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.initial.n_cells != self.domain.n_cells:
            raise ConfigError("initial state does not match the domain")
        if np.any(self.initial.as_array() < 0):
            raise ConfigError("initial densities must be nonnegative")
        steps_between(self.t_end, self.dt, "t_end")
        steps_between(self.snapshot_every, self.dt, "snapshot_every")
        if self.t_start:
            steps_between(self.t_start, self.dt, "t_start")
        if self.n_steps % self.snapshot_steps:
            raise ConfigError("snapshot_every must divide t_end")
        if self.impulse is not None:
            steps_between(self.impulse.period, self.dt, "impulse period")
            if self.impulse.reset_S_v.shape not in ((), (self.domain.n_cells,)):
                raise ConfigError("reset profile does not match the domain")

    @property
    def n_steps(self) -> int:
        return steps_between(self.t_end, self.dt)

    @property
    def snapshot_steps(self) -> int:
        return steps_between(self.snapshot_every, self.dt)


def _host_dev(y: np.ndarray, N: np.ndarray, Nscale: np.ndarray) -> float:
    return float(np.max(np.abs(y[0] + y[1] + y[2] - N) / Nscale))


def _run(config: SimulationConfig, impulsive: bool) -> Trajectory:
    dom, dt = config.domain, config.dt
    stepper = SplitStepper(dom, config.params, dt, config.scheme)
    y = config.initial.as_array()
    N = y[0] + y[1] + y[2]
    Nscale = np.where(N > 0, N, 1.0)
    area = dom.cell_area

    def vec_integral(arr):
        return float(np.sum(arr[3] + arr[4]) * area)

    ref = vec_integral(y)
    ref_scale = ref if ref > 0 else 1.0
    traj = Trajectory()
    t0 = config.t_start
    traj.append(t0, StateFields.from_array(y), LedgerEntry(t0, 0.0, ref, 0.0, 0.0))

    if impulsive:
        period_steps = steps_between(config.impulse.period, dt)
        reset = np.broadcast_to(config.impulse.reset_S_v, (dom.n_cells,))
        g0 = int(round(t0 / dt))
    snap = config.snapshot_steps
    for k in range(1, config.n_steps + 1):
        t = t0 + k * dt
        try:
            y = stepper.step_array(y)
        except (ReactionSolverError, RuntimeError) as exc:
            raise SimulationError(t, exc) from exc
        hdev = _host_dev(y, N, Nscale)
        vint = vec_integral(y)
        vdev = abs(vint - ref) / ref_scale
        traj.max_host_dev = max(traj.max_host_dev, hdev)
        traj.max_vector_dev = max(traj.max_vector_dev, vdev)
        if k % snap == 0:
            entry = LedgerEntry(t, hdev, vint, vdev, stepper.stats.clamp_mass)
            traj.append(t, StateFields.from_array(y), entry)
        if impulsive and (g0 + k) % period_steps == 0:
            y = y.copy()
            y[3] = reset
            y[4] = 0.0
            traj.impulse_times.append(t)
            traj.post_impulse.append(StateFields.from_array(y))
            ref = vec_integral(y)
            ref_scale = ref if ref > 0 else 1.0
    return traj


def simulate_m1(config: SimulationConfig) -> Trajectory:
    """Run the permanent-vector model from ``t_start`` to ``t_start + t_end``."""
    if config.impulse is not None:
        raise ConfigError("simulate_m1 takes no impulse schedule")
    return _run(config, impulsive=False)


def simulate_m2(config: SimulationConfig) -> Trajectory:
    """Run the impulsive model.

    Snapshots falling on a reset time hold the state just *before* the reset
    (end of the vector season); the state right after each reset is kept in
    ``Trajectory.post_impulse``. The initial state is used as given, so an
    infected-vector introduction at ``t_start`` is not wiped.
    """
    if config.impulse is None:
        raise ConfigError("simulate_m2 needs an impulse schedule")
    return _run(config, impulsive=True)


# --------------------------------------------------------------------------
# reduced model


@dataclass
class ReducedTrajectory:
    """Snapshots of the rescaled infected vectors ``i_v = D I_v``, the
    total ``a = D (S_v + I_v)`` and the force term ``f``."""

    times: list[float] = field(default_factory=list)
    i_v: list[np.ndarray] = field(default_factory=list)
    a: list[np.ndarray] = field(default_factory=list)
    f: list[np.ndarray] = field(default_factory=list)
    f_lower: np.ndarray | None = None
    f_upper: np.ndarray | None = None


class _ReducedState:
    """Per-cell memory for the reduced model.

    ``A`` is the running time integral of ``i_v``; ``J`` is
    ``int_0^t exp(eps (tau - t)) exp(-bbar A(tau)) dtau``. Both are advanced
    recursively, so no history is stored.
    """

    def __init__(self, config: SimulationConfig) -> None:
        p = config.params
        n = config.domain.n_cells
        st = config.initial
        self.D = np.array(p.field("D", n))
        self.bbar = p.field("beta_v", n) / self.D
        self.eps = float(p.epsilon)
        N = st.hosts()
        safe = np.where(N > 0, N, 1.0)
        self.s_h0 = np.where(N > 0, st.S_h / safe, 0.0)
        self.e_h0 = np.where(N > 0, st.E_h / safe, 0.0)
        self.i_h0 = np.where(N > 0, st.I_h / safe, 0.0)
        self.coupling = N * p.field("beta_h", n)
        self.i_v = self.D * st.I_v
        self.a = self.D * (st.S_v + st.I_v)
        self.A = np.zeros(n)
        self.J = np.zeros(n)
        self.g = np.ones(n)

    def i_h(self, t: float, J: np.ndarray) -> np.ndarray:
        decay = np.exp(-self.eps * t)
        return self.i_h0 * decay + (1.0 - decay) - self.eps * self.s_h0 * J

    def f(self, t: float) -> np.ndarray:
        return self.coupling * self.i_h(t, self.J)

    def react(self, t0: float, tau: float) -> None:
        """Implicit-Euler update of ``i_v`` over ``[t0, t0 + tau]`` with
        ``a`` frozen.

        ``A`` uses the trapezoid rule. ``J`` integrates the exponential
        kernel exactly against the linear interpolant of ``g``; the two
        weights are positive and sum to the kernel integral, so ``J`` never
        exceeds its ``g = 1`` bound and ``f`` keeps its lower bound.
        """
        t1 = t0 + tau
        i0, a = self.i_v, self.a
        x = self.eps * tau
        decay = np.exp(-x)
        W = -np.expm1(-x) / self.eps
        w1 = tau * (x + np.expm1(-x)) / (x * x)
        w0 = W - w1
        J_base = decay * self.J + w0 * self.g
        A_base = self.A + 0.5 * tau * i0
        half = 0.5 * tau

        def pieces(i1):
            A1 = A_base + half * i1
            g1 = np.exp(-self.bbar * A1)
            J1 = J_base + w1 * g1
            f1 = self.coupling * self.i_h(t1, J1)
            df1 = self.coupling * self.eps * self.s_h0 * self.bbar * g1 * half * w1
            R = i1 - i0 - tau * (a - i1) * f1
            dR = 1.0 + tau * f1 - tau * (a - i1) * df1
            return R, dR, A1, g1, J1

        i1 = i0.copy()
        tol = NEWTON_TOL * np.maximum(1.0, np.abs(a))
        R, dR, A1, g1, J1 = pieces(i1)
        for _ in range(NEWTON_MAX_ITER):
            if np.all(np.abs(R) <= tol):
                break
            step = -R / dR
            lam = np.ones_like(i1)
            trial = i1 + step
            Rt = pieces(trial)[0]
            for _ in range(30):
                worse = np.abs(Rt) > np.abs(R)
                if not worse.any():
                    break
                lam[worse] *= 0.5
                trial = i1 + lam * step
                Rt = pieces(trial)[0]
            i1 = trial
            R, dR, A1, g1, J1 = pieces(i1)
        else:
            if not np.all(np.abs(R) <= tol):
                bad = int(np.argmax(np.abs(R) - tol))
                raise ReactionSolverError(bad, float(abs(R[bad])))
        self.i_v = np.clip(i1, 0.0, None)
        self.A, self.g, self.J = A1, g1, J1


def simulate_reduced(config: SimulationConfig) -> ReducedTrajectory:
    """Integrate the reduced form of M1.

    ``a`` solves the plain Neumann heat equation ``a_t = D Lap a`` and
    ``i_v`` solves ``i_t = D Lap i + (a - i) f(t, x, i)``, with the host
    dynamics folded into ``f`` through the memory integrals. Stage order and
    diffusion discretization follow the full solver, so the discrete ``a``
    equals ``D (S_v + I_v)`` of the full run exactly.
    """
    if config.impulse is not None:
        raise ConfigError("the reduced model has no impulses")
    if config.params.formulation is not Formulation.NONFICKIAN:
        raise ConfigError("the reduced model is derived for the Lap(D u) formulation")
    dt = config.dt
    state = _ReducedState(config)
    op = DiffusionOperator(config.domain, config.params, dt)
    D = state.D

    def diffuse():
        # w = D u diffuses as w_t = D Lap w
        cols = np.stack([state.a / D, state.i_v / D], axis=1)
        out = op.apply(cols) * D[:, None]
        state.a, state.i_v = out[:, 0], out[:, 1]

    out = ReducedTrajectory()
    out.f_lower = state.coupling * state.i_h0
    out.f_upper = state.coupling.copy()

    def record(t):
        out.times.append(t)
        out.i_v.append(state.i_v.copy())
        out.a.append(state.a.copy())
        out.f.append(state.f(t))

    t0 = config.t_start
    record(t0)
    for k in range(1, config.n_steps + 1):
        t = t0 + (k - 1) * dt
        try:
            if config.scheme is Scheme.LIE:
                state.react(t, dt)
                diffuse()
            else:
                state.react(t, dt / 2)
                diffuse()
                state.react(t + dt / 2, dt / 2)
        except (ReactionSolverError, RuntimeError) as exc:
            raise SimulationError(t + dt, exc) from exc
        if k % config.snapshot_steps == 0:
            record(t0 + k * dt)
    return out


# --------------------------------------------------------------------------
# export

SNAPSHOT_HEADER = ("t", "x", "y") + COMPARTMENTS


def fmt(value: float) -> str:
    return repr(float(value))


def write_snapshots_csv(trajectory: Trajectory, domain: SpatialDomain, path: str | Path) -> Path:
    """One row per (snapshot, cell): ``t, x, y, S_h, E_h, I_h, S_v, I_v``."""
    path = Path(path)
    centers = domain.cell_centers
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNAPSHOT_HEADER)
        for t, snap in zip(trajectory.times, trajectory.snapshots):
            arr = snap.as_array()
            for i in range(domain.n_cells):
                w.writerow([fmt(t), fmt(centers[i, 0]), fmt(centers[i, 1])] + [fmt(v) for v in arr[:, i]])
    return path


def read_snapshots_csv(path: str | Path) -> dict[float, np.ndarray]:
    """Inverse of :func:`write_snapshots_csv`: time -> ``(5, n_cells)`` array."""
    out: dict[float, list[list[float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != SNAPSHOT_HEADER:
            raise ValueError(f"unexpected snapshot header {header}")
        for row in r:
            out.setdefault(float(row[0]), []).append([float(v) for v in row[3:]])
    return {t: np.array(rows).T for t, rows in out.items()}


def config_fingerprint(config: SimulationConfig) -> str:
    """Stable hash of everything that determines a run's output."""
    h = hashlib.sha256()
    dom = config.domain
    h.update(repr((dom.cell_size, tuple(map(float, dom.origin)), dom.mask.shape)).encode())
    h.update(np.ascontiguousarray(dom.mask, dtype=np.uint8).tobytes())
    p = config.params
    for name in ("beta_v", "beta_h", "D", "epsilon"):
        h.update(name.encode())
        h.update(np.ascontiguousarray(np.asarray(getattr(p, name), dtype=float)).tobytes())
    h.update(p.formulation.value.encode())
    h.update(np.ascontiguousarray(config.initial.as_array()).tobytes())
    h.update(repr((config.t_start, config.t_end, config.dt, config.snapshot_every, config.scheme.value)).encode())
    if config.impulse is not None:
        h.update(repr(config.impulse.period).encode())
        h.update(np.ascontiguousarray(config.impulse.reset_S_v).tobytes())
    return h.hexdigest()


def with_initial(config: SimulationConfig, state: StateFields, t_start: float, t_end: float, **kw) -> SimulationConfig:
    """Copy of ``config`` restarted from ``state`` at ``t_start``."""
    return replace(config, initial=state, t_start=t_start, t_end=t_end, **kw)
