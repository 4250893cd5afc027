from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from conftest import square_domain
from vectorhost import pde_core
from vectorhost.geometry import NonpositiveDiffusionError, SpatialDomain
from vectorhost.pde_core import (
    DiffusionOperator,
    DiffusionSolveError,
    Formulation,
    ModelParams,
    ReactionSolverError,
    Scheme,
    SplitStepper,
    StateFields,
    diffusion_step,
    reaction_step,
    split_step,
)


def reaction_rhs(beta_v, beta_h, eps):
    def f(_, y):
        Sh, Eh, Ih, Sv, Iv = y
        a, b = beta_v * Sh * Iv, beta_h * Sv * Ih
        return [-a, a - eps * Eh, eps * Eh, -b, b]

    return f


def random_state(rng, n, scale=300.0):
    return StateFields(*(rng.uniform(0, scale, n) for _ in range(5)))


# --------------------------------------------------------------------------
# parameters


def test_params_validation():
    with pytest.raises(NonpositiveDiffusionError):
        ModelParams(1.0, 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        ModelParams(-1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.0, 1.0, 0.0)
    p = ModelParams(1.0, 2.0, 3.0, 0.1)
    assert p.replace(D=5.0).D == 5.0 and p.replace(D=5.0).beta_h == 2.0


# --------------------------------------------------------------------------
# reaction stage


def test_disease_free_state_is_fixed(rng):
    n = 20
    s = StateFields(rng.uniform(0, 300, n), np.zeros(n), np.zeros(n), rng.uniform(0, 300, n), np.zeros(n))
    out = reaction_step(s, ModelParams(10.0, 10.0, 1.0, 0.02), 0.01)
    assert np.array_equal(out.as_array(), s.as_array())


def test_zero_beta_v_keeps_hosts(rng):
    n = 20
    s = random_state(rng, n)
    s.E_h[:] = 0.0
    out = reaction_step(s, ModelParams(0.0, 5.0, 1.0, 0.02), 0.01)
    assert np.array_equal(out.S_h, s.S_h)
    assert np.array_equal(out.I_h, s.I_h)


def test_single_cell_matches_reference_ode():
    beta, eps, dt, steps = 1e-3, 0.02, 0.01, 1000
    y0 = np.array([300.0, 0.0, 0.0, 300.0, 1.0])
    p = ModelParams(beta, beta, 1.0, eps)
    s = StateFields.from_array(y0[:, None])
    for _ in range(steps):
        s = reaction_step(s, p, dt)
    ref = solve_ivp(reaction_rhs(beta, beta, eps), (0, dt * steps), y0, method="DOP853", rtol=1e-13, atol=1e-12)
    y_ref = ref.y[:, -1]
    err = np.abs(s.as_array()[:, 0] - y_ref).max() / np.abs(y_ref).max()
    assert err < 1e-4


def implicit_euler_oracle(y0, p, q, r):
    """Implicit-Euler reaction step by bracketing on the new ``I_h``."""
    Sh0, Eh0, Ih0, Sv0, Iv0 = y0
    V = Sv0 + Iv0

    def parts(x):
        Sv = Sv0 / (1 + q * x)
        Iv = V - Sv
        Sh = Sh0 / (1 + p * Iv)
        Eh = (Eh0 + p * Sh * Iv) / (1 + r)
        return np.array([Sh, Eh, Ih0 + r * Eh, Sv, Iv])

    if Eh0 == 0 and Ih0 == 0 and Iv0 == 0:
        return parts(0.0)
    hi = Ih0 + Eh0 + Sh0
    x = brentq(lambda x: x - parts(x)[2], Ih0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return parts(x)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0, 500), min_size=5, max_size=5),
    st.floats(1e-6, 10.0),
    st.floats(1e-6, 10.0),
    st.floats(1e-5, 0.1),
)
def test_reaction_matches_bracketed_oracle(y, p, q, r):
    y0 = np.asarray(y)
    out = pde_core.solve_reaction(y0[:, None], np.array([p]), np.array([q]), np.array([r]))[:, 0]
    ref = implicit_euler_oracle(y0, p, q, r)
    assert np.allclose(out, ref, rtol=1e-7, atol=1e-7 * max(1.0, np.abs(y0).max()))


def test_stiff_contact_stays_on_physical_root():
    # strong contact terms at the introduction of one infected vector
    y0 = np.array([[300.0], [0.0], [0.0], [300.0], [1.0]])
    for bv, bh, dt in [(25, 25, 0.01), (25, 25, 0.5), (5, 25, 1.0)]:
        p, q, r = (np.array([dt * b]) for b in (bv, bh, 0.02))
        y = pde_core.solve_reaction(y0, p, q, r)
        assert y.min() >= 0
        assert y[0, 0] <= 300.0
        assert y[:3].sum() == pytest.approx(300.0, rel=1e-13)
        assert y[3:].sum() == pytest.approx(301.0, rel=1e-13)
        assert np.abs(pde_core._residual(y, y0, p, q, r)).max() <= 1e-10 * 301


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 30.0), st.floats(0.0, 30.0), st.sampled_from([1e-3, 0.01, 0.1]))
def test_reaction_invariants(seed, bv, bh, dt):
    rng = np.random.default_rng(seed)
    s = random_state(rng, 12)
    out = reaction_step(s, ModelParams(bv, bh, 1.0, 0.02), dt)
    N, V = s.hosts(), s.vectors()
    assert np.all(np.abs(out.hosts() - N) <= 1e-8 * np.maximum(N, 1.0))
    assert np.all(np.abs(out.vectors() - V) <= 1e-8 * np.maximum(V, 1.0))
    assert np.all(out.as_array() >= 0)
    assert np.all(out.S_h <= s.S_h + 1e-12 * np.maximum(1.0, s.S_h))
    assert np.all(out.I_h >= s.I_h - 1e-12 * np.maximum(1.0, s.I_h))


def test_reaction_divergence_reports_cell(monkeypatch):
    monkeypatch.setattr(pde_core, "NEWTON_MAX_ITER", 0)
    s = StateFields.uniform(3, 300, 0, 0, 300, 0)
    s.I_v[2] = 5.0
    with pytest.raises(ReactionSolverError, match="reaction solver diverged in cell 2"):
        reaction_step(s, ModelParams(10.0, 10.0, 1.0, 0.02), 0.01)


# --------------------------------------------------------------------------
# diffusion stage


def test_fickian_uniform_unchanged(rng):
    dom = square_domain(8)
    D = rng.uniform(0.5, 5.0, dom.n_cells)
    p = ModelParams(0.0, 0.0, D, 1.0, Formulation.FICKIAN)
    out = diffusion_step(dom, np.full(dom.n_cells, 7.0), p, 0.1)
    assert np.allclose(out, 7.0, rtol=1e-12)


def test_nonfickian_constant_d_uniform_unchanged_and_conservative(rng):
    dom = square_domain(8)
    p = ModelParams(0.0, 0.0, 2.5, 1.0)
    assert np.allclose(diffusion_step(dom, np.full(dom.n_cells, 4.0), p, 0.1), 4.0, rtol=1e-12)
    u = rng.uniform(0, 10, dom.n_cells)
    v = diffusion_step(dom, u, p, 0.1)
    assert abs(dom.integrate(v) - dom.integrate(u)) <= 1e-10 * dom.integrate(u)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Formulation)), st.floats(1e-3, 10.0))
def test_diffusion_conserves_mass_and_sign(seed, formulation, dt):
    rng = np.random.default_rng(seed)
    dom = square_domain(7, ny=5)
    D = rng.uniform(0.1, 10.0, dom.n_cells)
    u = rng.uniform(0, 1, dom.n_cells) * (rng.random(dom.n_cells) < 0.5)
    v = diffusion_step(dom, u, ModelParams(0.0, 0.0, D, 1.0, formulation), dt)
    assert np.all(v >= 0)
    assert abs(dom.integrate(v) - dom.integrate(u)) <= 1e-10 * max(dom.integrate(u), 1e-300)


def test_formulations_agree_for_constant_d(rng):
    dom = square_domain(9)
    u = rng.uniform(0, 5, dom.n_cells)
    a = diffusion_step(dom, u, ModelParams(0.0, 0.0, 3.0, 1.0, Formulation.NONFICKIAN), 0.05)
    b = diffusion_step(dom, u, ModelParams(0.0, 0.0, 3.0, 1.0, Formulation.FICKIAN), 0.05)
    assert np.allclose(a, b, rtol=1e-10, atol=0)


def test_nonfickian_stationary_state_is_c_over_d():
    dom = square_domain(6)
    D = 1.0 + dom.cell_centers[:, 0]
    u = 3.0 / D
    out = diffusion_step(dom, u, ModelParams(0.0, 0.0, D, 1.0), 0.5)
    assert np.allclose(out, u, rtol=1e-12)


def test_gaussian_bump_matches_heat_kernel():
    sigma, D, t_end, dt = 0.2, 0.1, 0.1, 0.001
    h = sigma / 10
    n = int(round(3.0 / h))
    dom = SpatialDomain(h, np.ones((n, n), dtype=bool), origin=(-1.5, -1.5))
    r2 = (dom.cell_centers**2).sum(axis=1)
    u = np.exp(-r2 / (2 * sigma**2))
    op = DiffusionOperator(dom, ModelParams(0.0, 0.0, D, 1.0), dt)
    for _ in range(int(round(t_end / dt))):
        u = op.apply(u)
    s2 = sigma**2 + 2 * D * t_end
    exact = sigma**2 / s2 * np.exp(-r2 / (2 * s2))
    assert np.abs(u - exact).max() / exact.max() < 1e-2


def test_diffusion_solve_failure(monkeypatch):
    monkeypatch.setattr(pde_core, "LINEAR_TOL", 0.0)
    dom = square_domain(4)
    with pytest.raises(DiffusionSolveError, match="diffusion solve failed"):
        diffusion_step(dom, np.arange(16.0), ModelParams(0.0, 0.0, 1.0, 1.0), 0.1)


# --------------------------------------------------------------------------
# splitting


def test_single_cell_split_equals_reaction(rng):
    dom = SpatialDomain(1.0, np.ones((1, 1), dtype=bool))
    s = StateFields.from_array(np.array([[300.0], [0.0], [0.0], [300.0], [2.0]]))
    p = ModelParams(0.5, 0.3, 2.0, 0.1)
    lie = split_step(dom, s, p, 0.05, Scheme.LIE)
    assert np.array_equal(lie.as_array(), reaction_step(s, p, 0.05).as_array())
    strang = split_step(dom, s, p, 0.05, Scheme.STRANG)
    twice = reaction_step(reaction_step(s, p, 0.025), p, 0.025)
    assert np.array_equal(strang.as_array(), twice.as_array())


def test_no_reaction_split_is_diffusion(rng):
    dom = square_domain(6)
    s = random_state(rng, dom.n_cells)
    s.E_h[:] = 0.0
    p = ModelParams(0.0, 0.0, 1.5, 0.02)
    for scheme in Scheme:
        out = split_step(dom, s, p, 0.1, scheme)
        assert np.array_equal(out.S_h, s.S_h) and np.array_equal(out.I_h, s.I_h)
        assert np.array_equal(out.E_h, s.E_h)
        assert np.allclose(out.S_v, diffusion_step(dom, s.S_v, p, 0.1), rtol=1e-13)
        assert np.allclose(out.I_v, diffusion_step(dom, s.I_v, p, 0.1), rtol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Scheme)), st.sampled_from(list(Formulation)))
def test_split_step_invariants(seed, scheme, formulation):
    rng = np.random.default_rng(seed)
    dom = square_domain(5)
    s = random_state(rng, dom.n_cells)
    D = rng.uniform(0.1, 5.0, dom.n_cells)
    out = split_step(dom, s, ModelParams(2.0, 3.0, D, 0.05, formulation), 0.01, scheme)
    N = s.hosts()
    C = dom.integrate(s.vectors())
    assert np.all(np.abs(out.hosts() - N) < 1e-8 * N)
    assert abs(dom.integrate(out.vectors()) - C) < 1e-8 * C
    assert np.all(out.as_array() >= 0)
    assert np.all(out.S_h <= s.S_h + 1e-12 * s.S_h)
    assert np.all(out.I_h >= s.I_h - 1e-12 * s.I_h)


def _splitting_error(scheme, dt, T, dom, p, y0, substeps):
    def run(step):
        stepper = SplitStepper(dom, p, step, scheme, substeps=substeps)
        y = y0.copy()
        for _ in range(int(round(T / step))):
            y = stepper.step_array(y)
        return y

    ref = run(dt / 8)
    return np.abs(run(dt) - ref).max() / np.abs(ref).max()


def test_strang_second_order_lie_first_order():
    """Splitting order against a dt/8 reference. Each stage is resolved with
    many implicit-Euler sub-steps so the splitting error dominates the
    first-order stage error."""
    dom = square_domain(10, side=10.0)
    p = ModelParams(1e-3, 1e-3, 0.5, 0.02)
    s = StateFields.uniform(dom.n_cells, 300, 0, 0, 300, 0)
    s.I_v[0] = 1.0
    y0 = s.as_array()
    dts = (0.8, 0.4, 0.2)
    orders = {}
    for scheme in Scheme:
        e = [_splitting_error(scheme, dt, 1.6, dom, p, y0, substeps=256) for dt in dts]
        orders[scheme] = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(orders[Scheme.STRANG] > 1.7)
    assert np.all((orders[Scheme.LIE] > 0.8) & (orders[Scheme.LIE] < 1.3))
