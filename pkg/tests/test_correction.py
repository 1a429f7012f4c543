import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_pde.burgers import BurgersParams, BurgersSolver, ForcingParams
from hybrid_pde.core import Grid1D, RngStream
from hybrid_pde.correction import (
    CORRECTED_MODES,
    Constant,
    CorrectorSpec,
    GaussianNoise,
    InjectionMode,
    Neural,
    Zero,
    corrector_eval,
    hybrid_step,
    rollout,
)
from hybrid_pde.ks import KSSolver, random_ks_ic
from hybrid_pde.network import init_params, layer_specs, net_forward

ALL_MODES = list(InjectionMode)


def burgers(n=32, dt=1e-3, cfl=None, seed=0):
    g = Grid1D(n, 2 * np.pi)
    fp = ForcingParams.random(np.random.default_rng(seed), length=g.length)
    return BurgersSolver(g, BurgersParams(nu=0.1, dt=dt, cfl=cfl), forcing=fp)


def ks():
    return KSSolver(Grid1D(32, 2 * np.pi * 3), dt=0.05)


def state(solver, seed=0):
    if solver.name == "ks":
        return random_ks_ic(solver.grid, RngStream(seed), warmup_steps=20, warmup_dt=0.05)
    x = solver.grid.x
    return 0.8 * np.sin(x + seed) + 0.2 * np.cos(3 * x)


def test_corrector_eval_zero_sources():
    u = np.ones(16)
    assert not corrector_eval(CorrectorSpec(Zero(), InjectionMode.DIRECT), u).any()
    assert not corrector_eval(CorrectorSpec(GaussianNoise(0.0), InjectionMode.DIRECT), u).any()


def test_noise_is_step_indexed():
    spec = CorrectorSpec(GaussianNoise(1.0, RngStream(4)), InjectionMode.DIRECT)
    a, b = corrector_eval(spec, np.zeros(16), 3), corrector_eval(spec, np.zeros(16), 4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, corrector_eval(spec, np.ones(16), 3))


def test_noise_rejects_negative_eps():
    with pytest.raises(ValueError):
        GaussianNoise(-0.1)


def test_mode_parse_aliases():
    assert InjectionMode.parse("INC") is InjectionMode.INDIRECT
    assert InjectionMode.parse("pre-correct") is InjectionMode.PRE_CORRECT
    assert InjectionMode.parse("csm") is InjectionMode.SCALED
    with pytest.raises(ValueError):
        InjectionMode.parse("sideways")


@pytest.mark.parametrize("make", [burgers, ks], ids=["burgers", "ks"])
@pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
def test_zero_corrector_bit_identical(make, mode):
    solver = make()
    u = state(solver)
    ref = rollout(u, 100, solver, CorrectorSpec())
    got = rollout(u, 100, solver, CorrectorSpec(Zero(), mode))
    assert np.array_equal(ref.states, got.states)


def test_indirect_constant_burgers_euler():
    solver = burgers()
    u = state(solver)
    c = 0.37
    base = hybrid_step(u, solver, CorrectorSpec())
    got = hybrid_step(u, solver, CorrectorSpec(Constant(c), InjectionMode.INDIRECT))
    # u + dt (r + c) and (u + dt r) + dt c agree up to last-bit rounding
    assert np.allclose(got, base + solver.dt * c, rtol=0, atol=4 * np.spacing(np.abs(base).max()))


def test_direct_constant_is_additive():
    for solver in (burgers(), ks()):
        u = state(solver)
        c = np.linspace(-1, 1, solver.grid.n)
        base = hybrid_step(u, solver, CorrectorSpec())
        got = hybrid_step(u, solver, CorrectorSpec(Constant(c), InjectionMode.DIRECT))
        assert np.array_equal(got, base + c)


def test_precorrect_shifts_input():
    solver = ks()
    u = state(solver)
    c = 0.01 * np.cos(solver.grid.x)
    got = hybrid_step(u, solver, CorrectorSpec(Constant(c), InjectionMode.PRE_CORRECT))
    assert np.array_equal(got, solver.step(u + c))


@given(st.floats(-2, 2), st.integers(0, 5))
def test_property_scaled_equals_direct_with_dt(c, seed):
    solver = burgers(seed=seed)
    u = state(solver, seed)
    field = c * np.sin(2 * solver.grid.x)
    scaled = hybrid_step(u, solver, CorrectorSpec(Constant(field), InjectionMode.SCALED))
    direct = hybrid_step(u, solver, CorrectorSpec(Constant(solver.dt * field), InjectionMode.DIRECT))
    assert np.array_equal(scaled, direct)


def test_scaled_neural_matches_manual():
    solver = burgers()
    u = state(solver)
    params = init_params(layer_specs([1, 4, 1], 3), np.random.default_rng(0), last_scale=1.0)
    spec = CorrectorSpec(Neural(params), InjectionMode.SCALED)
    u_star = solver.step(u)
    assert np.array_equal(hybrid_step(u, solver, spec), u_star + solver.dt * net_forward(params, u_star))


def test_direct_dt_g_equals_indirect_g_for_single_euler_step():
    solver = burgers(n=32, dt=1e-3)
    u = state(solver)
    g = 0.5 * np.cos(solver.grid.x)
    a = hybrid_step(u, solver, CorrectorSpec(Constant(solver.dt * g), InjectionMode.DIRECT))
    b = hybrid_step(u, solver, CorrectorSpec(Constant(g), InjectionMode.INDIRECT))
    assert np.allclose(a, b, rtol=0, atol=1e-15)


def _direct_vs_indirect(make, dts):
    errs = []
    for dt in dts:
        solver = make(dt)
        u = state(solver)
        g = 0.5 * np.cos(2 * np.pi * solver.grid.x / solver.grid.length)
        a = hybrid_step(u, solver, CorrectorSpec(Constant(dt * g), InjectionMode.DIRECT))
        b = hybrid_step(u, solver, CorrectorSpec(Constant(g), InjectionMode.INDIRECT))
        errs.append(np.linalg.norm(a - b))
    return [errs[0] / errs[1], errs[1] / errs[2]]


def test_direct_dt_g_vs_indirect_g_second_order_substepped_euler():
    ratios = _direct_vs_indirect(lambda dt: burgers(n=32, dt=dt, cfl=0.05), (0.04, 0.02, 0.01))
    assert min(ratios) > 3.5


def test_direct_dt_g_vs_indirect_g_second_order_etd():
    ratios = _direct_vs_indirect(lambda dt: KSSolver(Grid1D(32, 2 * np.pi * 3), dt=dt), (4e-3, 2e-3, 1e-3))
    assert min(ratios) > 3.5


def test_noise_rollout_composition():
    solver = burgers()
    u = state(solver)
    spec = CorrectorSpec(GaussianNoise(0.01, RngStream(9)), InjectionMode.INDIRECT)
    full = rollout(u, 30, solver, spec)
    first = rollout(u, 12, solver, spec)
    second = rollout(first.final, 18, solver, spec, start_index=12)
    assert np.array_equal(full.final, second.final)
    assert np.allclose(second.times, full.times[12:], rtol=1e-14)


def test_rollout_zero_steps_and_determinism():
    solver = ks()
    u = state(solver)
    assert len(rollout(u, 0, solver, CorrectorSpec())) == 1
    spec = CorrectorSpec(GaussianNoise(0.1, RngStream(2)), InjectionMode.DIRECT)
    assert np.array_equal(rollout(u, 20, solver, spec).states, rollout(u, 20, solver, spec).states)
    with pytest.raises(ValueError):
        rollout(u, -1, solver, spec)


def test_rollout_stops_at_blowup():
    solver = KSSolver(Grid1D(64, 21.6 * np.pi), dt=0.5, scheme="etd1")
    u = random_ks_ic(solver.grid, RngStream(0), warmup_steps=500)
    tr = rollout(u, 100, solver, CorrectorSpec())
    assert tr.blew_up and len(tr) == tr.blowup_step
    assert np.all(np.isfinite(tr.states))


def test_corrected_modes_exclude_no_model():
    assert InjectionMode.NO_MODEL not in CORRECTED_MODES and len(CORRECTED_MODES) == 4
