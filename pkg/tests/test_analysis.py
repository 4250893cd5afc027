from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import square_domain
from oracles import rayleigh_minimize
from vectorhost.analysis import (
    EigensolverError,
    LogFitError,
    convergence_series,
    equilibria_m1,
    fit_decay_rate,
    mu_norm,
    periodic_equilibrium_m2,
    principal_eigenvalue,
    rayleigh_quotient,
    write_decay_report,
    write_eigenpair,
    write_equilibria,
)
from vectorhost.geometry import NonpositiveDiffusionError, domain_measures
from vectorhost.pde_core import Formulation, ModelParams, StateFields
from vectorhost.scenarios import ImpulseSchedule, SimulationConfig, simulate_m1


# --------------------------------------------------------------------------
# equilibria


def test_equilibria_constant_d(unit_square):
    p = ModelParams(1.0, 1.0, 2.0, 0.1)
    pair = equilibria_m1(p, unit_square, 300.0, 300.0)
    assert np.allclose(pair.disease_free.S_v, 300.0)
    assert np.allclose(pair.endemic.I_v, 300.0)
    assert np.array_equal(pair.endemic.I_h, np.full(100, 300.0))
    assert not pair.endemic.S_h.any() and not pair.disease_free.I_v.any()


def test_equilibria_heterogeneous_d(unit_square, rng):
    D = rng.uniform(0.5, 3.0, unit_square.n_cells)
    p = ModelParams(1.0, 1.0, D, 0.1)
    pair = equilibria_m1(p, unit_square, 1.0, 42.0)
    level = pair.endemic.I_v
    assert unit_square.integrate(level) == pytest.approx(42.0, rel=1e-12)
    assert np.allclose(level * D, 42.0 / domain_measures(unit_square, D).mu, rtol=1e-12)
    fick = equilibria_m1(p.replace(formulation=Formulation.FICKIAN), unit_square, 1.0, 42.0)
    assert np.allclose(fick.endemic.I_v, 42.0, rtol=1e-12)


def test_equilibria_validation(unit_square):
    p = ModelParams(1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        equilibria_m1(p, unit_square, 1.0, 0.0)
    with pytest.raises(ValueError):
        equilibria_m1(p, unit_square, -1.0, 1.0)


# --------------------------------------------------------------------------
# periodic orbit


def test_orbit_without_transmission_is_pure_diffusion():
    dom = square_domain(5)
    reset = np.linspace(1, 5, dom.n_cells)
    orbit = periodic_equilibrium_m2(ModelParams(1.0, 0.0, 0.1, 0.1), dom, 300.0, ImpulseSchedule(reset), dt=0.05)
    assert orbit.times[-1] == pytest.approx(1.0)
    assert not orbit.I_v.any()
    assert np.array_equal(orbit.S_v[0], reset)
    assert orbit.S_v[-1].std() < orbit.S_v[0].std()


@pytest.mark.parametrize("scheme", ["lie", "strang"])
def test_orbit_conserves_vectors_and_stays_positive(scheme, rng):
    dom = square_domain(6)
    D = rng.uniform(0.01, 0.5, dom.n_cells)
    reset = rng.uniform(50, 300, dom.n_cells)
    orbit = periodic_equilibrium_m2(ModelParams(1.0, 0.01, D, 0.1), dom, 300.0, ImpulseSchedule(reset), 0.02, scheme)
    totals = (orbit.S_v + orbit.I_v).sum(axis=1)
    assert np.allclose(totals, reset.sum(), rtol=1e-10)
    assert np.all(orbit.S_v > 0) and np.all(orbit.I_v[1:] > 0) and not orbit.I_v[0].any()
    assert np.all(np.diff(orbit.I_v.sum(axis=1)) > 0)


# --------------------------------------------------------------------------
# principal eigenvalue


def half_left(domain, c):
    return np.where(domain.cell_centers[:, 0] < 0.5, c, 0.0)


def test_constant_potential_eigenvalue(unit_square):
    res = principal_eigenvalue(unit_square, 1.0, 3.0)
    assert abs(res.lambda_1 - 3.0) < 1e-10
    assert np.allclose(res.phi_1, res.phi_1[0])


def test_zero_potential_eigenvalue(unit_square):
    res = principal_eigenvalue(unit_square, 2.0, 0.0)
    assert abs(res.lambda_1) < 1e-10


def test_heterogeneous_eigenvalue_matches_direct_minimizer(unit_square):
    V = half_left(unit_square, 5.0)
    res = principal_eigenvalue(unit_square, 1.0, V)
    ref, _ = rayleigh_minimize(unit_square, 1.0, V)
    assert abs(res.lambda_1 - ref) <= 1e-6 * max(1.0, abs(ref))
    assert 0.0 < res.lambda_1 < 5.0


def test_eigenpair_properties(unit_square, rng):
    D = rng.uniform(0.5, 2.0, unit_square.n_cells)
    V = rng.uniform(0.0, 4.0, unit_square.n_cells)
    res = principal_eigenvalue(unit_square, D, V)
    assert np.all(res.phi_1 > 0)
    assert mu_norm(unit_square, D, res.phi_1) == pytest.approx(1.0, rel=1e-12)
    assert rayleigh_quotient(unit_square, D, V, res.phi_1) == pytest.approx(res.lambda_1, rel=1e-10)
    ref, _ = rayleigh_minimize(unit_square, D, V)
    assert res.lambda_1 == pytest.approx(ref, rel=1e-6)
    assert V.min() <= res.lambda_1 <= V.max()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_eigenvalue_monotone_in_potential(seed):
    rng = np.random.default_rng(seed)
    dom = square_domain(6)
    D = rng.uniform(0.2, 2.0, dom.n_cells)
    V1 = rng.uniform(0.0, 5.0, dom.n_cells)
    V2 = V1 + rng.uniform(0.0, 2.0, dom.n_cells) * (rng.random(dom.n_cells) < 0.5)
    l1 = principal_eigenvalue(dom, D, V1).lambda_1
    l2 = principal_eigenvalue(dom, D, V2).lambda_1
    assert l1 <= l2 + 1e-9 * max(1.0, abs(l2))


def test_eigenvalue_monotone_in_constant_diffusion(unit_square):
    V = half_left(unit_square, 5.0)
    lams = [principal_eigenvalue(unit_square, d, V).lambda_1 for d in (0.01, 0.1, 1.0, 10.0)]
    assert np.all(np.diff(lams) > 0)


def test_eigensolver_errors(unit_square):
    with pytest.raises(EigensolverError, match="eigensolver did not converge"):
        principal_eigenvalue(unit_square, 1.0, half_left(unit_square, 5.0), max_iter=1)
    with pytest.raises(NonpositiveDiffusionError):
        principal_eigenvalue(unit_square, 0.0, 1.0)
    with pytest.raises(ValueError):
        principal_eigenvalue(unit_square, 1.0, -1.0)


# --------------------------------------------------------------------------
# decay fits and convergence diagnostics


def test_fit_decay_rate_exact_exponential():
    t = np.linspace(0, 10, 21)
    fit = fit_decay_rate(t, 3.0 * np.exp(-0.7 * t))
    assert fit.rate == pytest.approx(0.7, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_used == 11
    assert fit.intercept == pytest.approx(np.log(3.0), rel=1e-12)


def test_fit_decay_rate_uses_tail():
    t = np.arange(10.0)
    v = np.where(t < 5, 1.0, np.exp(-(t - 5)))
    assert fit_decay_rate(t, v, tail=0.5).rate == pytest.approx(1.0, rel=1e-12)


def test_fit_decay_rate_errors():
    with pytest.raises(LogFitError, match="at least 3"):
        fit_decay_rate([0, 1], [1, 1])
    with pytest.raises(LogFitError, match="nonpositive"):
        fit_decay_rate([0, 1, 2], [1, 0, 1], tail=1.0)
    with pytest.raises(ValueError):
        fit_decay_rate([0, 1, 2], [1, 1, 1], tail=0.0)


def test_convergence_series_decays():
    dom = square_domain(5, side=5.0)
    p = ModelParams(0.05, 0.05, 0.5, 0.5)
    s = StateFields.uniform(dom.n_cells, 10, 0, 0, 10, 0)
    s.I_v[0] = 1.0
    traj = simulate_m1(SimulationConfig(dom, p, s, t_end=40.0, dt=0.05, snapshot_every=1.0))
    series = convergence_series(traj, p, dom)
    for key in ("endemic_sup", "S_h_max", "host_gap", "s_v_max"):
        v = series[key]
        assert v[-1] < 1e-2 * v[0]
        assert fit_decay_rate(traj.times, v).rate > 0
    for key in ("E_h_max", "i_v_l2mu"):
        assert fit_decay_rate(traj.times, series[key]).rate > 0


def test_writers(unit_square, tmp_path):
    p = ModelParams(1.0, 1.0, 1.0, 0.1)
    res = principal_eigenvalue(unit_square, 1.0, 2.0)
    files = write_eigenpair(unit_square, res, tmp_path)
    rows = list(csv.reader(files[0].open()))
    assert rows[0] == ["x", "y", "phi_1"] and len(rows) == 101
    spec = dict(list(csv.reader(files[1].open()))[1:])
    assert float(spec["lambda_1"]) == res.lambda_1
    eq = write_equilibria(unit_square, equilibria_m1(p, unit_square, 300.0, 300.0), tmp_path / "eq.csv")
    header = next(csv.reader(eq.open()))
    assert header[:3] == ["x", "y", "dfe_S_h"] and header[-1] == "endemic_I_v"
    t = np.arange(5.0)
    rep = write_decay_report({"a": fit_decay_rate(t, np.exp(-t))}, tmp_path / "decay.csv")
    assert rep.read_text().splitlines()[0] == "quantity,lambda_fit,r_squared"
