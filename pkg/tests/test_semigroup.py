import math
import types

import numpy as np
import pytest

from homolab.environment import EnvParams, sample_environment
from homolab.errors import HomolabError
from homolab.holder import verify_solver_localization
from homolab.semigroup import (CutoffSpec, Grid, GridField, QuenchedSolver, chi, compose, cutoff_eval, cutoff_mul,
                               gaussian_kernel, gaussian_op, gaussian_tail_bound, s_n_op, smoothstep,
                               solve_quenched)


def gauss(s0):
    return lambda y: np.exp(-np.sum(y * y, axis=1) / (2 * s0))


def test_grid_basics():
    g = Grid.around([1.0, -1.0], 2.0, 0.5)
    assert g.n == 9 and g.shape == (9, 9) and g.extent == 2.0
    assert g.points().shape == (81, 2)
    assert g.index_of((1.0, -1.0)) == (4, 4)
    assert g.covers((1.0, -1.0), 2.0) and not g.covers((1.5, -1.0), 2.0)
    with pytest.raises(HomolabError):
        Grid((0.0,), 1.0, 0.5, n=4)


def test_heat_kernel_oracle(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 5.0, 0.25)
    f = GridField.from_function(g, gauss(1.0))
    u = solve_quenched(zero_env, f, 0.5)
    exact = GridField.from_function(g, lambda y: 1.5**-1.5 * np.exp(-np.sum(y * y, 1) / 3.0))
    inner = g.radius() <= 2.0
    assert np.abs(u.values - exact.values)[inner].max() < 3e-3
    assert u.at([0, 0, 0]) == pytest.approx(1.5**-1.5, abs=3e-3)


def test_heat_kernel_fine_grid(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 5.0, 0.125)
    u = solve_quenched(zero_env, GridField.from_function(g, gauss(1.0)), 1.0)
    exact = GridField.from_function(g, lambda y: 2.0**-1.5 * np.exp(-np.sum(y * y, 1) / 4.0))
    assert np.abs(u.values - exact.values)[g.radius() <= 1.0].max() < 1e-3


def test_linear_data_fixed(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 6.0, 0.25)
    u = solve_quenched(zero_env, GridField.from_function(g, lambda y: y[:, 0]), 0.5)
    inner = g.radius() <= 1.0
    assert np.abs(u.values - g.mesh()[0])[inner].max() < 1e-10


def test_constant_preserved_inside(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 6.0, 0.5)
    u = solve_quenched(zero_env, GridField.constant(g, 1.0), 0.5)
    assert u.leakage <= 1e-6
    assert np.all(u.values <= 1 + 1e-12)


def test_maximum_principle(full_env, rng):
    g = Grid.around([0.0, 0.0, 0.0], 3.0, 0.25)
    f = GridField(g, rng.uniform(-1, 2, size=g.shape))
    u = solve_quenched(full_env, f, 0.3)
    assert u.values.min() >= -1 - 1e-12 and u.values.max() <= 2 + 1e-12


def test_frozen_solution(full_env):
    g = Grid.around([0.0, 0.0, 0.0], 2.0, 0.25)
    u = solve_quenched(full_env, GridField.from_function(g, lambda y: np.exp(-np.sum(y * y, 1))), 0.5)
    assert u.at([0, 0, 0]) == pytest.approx(0.35390422694091817, rel=1e-12)
    assert float(u.values.sum()) == pytest.approx(304.32943829919975, rel=1e-12)


def test_solver_steps_and_cfl(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 1.0, 0.25)
    s = QuenchedSolver(zero_env, g)
    assert s.dt_max == pytest.approx(0.25**2 / 3)
    assert s.dt == pytest.approx(0.5 * s.dt_max)
    assert s.steps_for(0) == 0
    with pytest.raises(HomolabError) as e:
        QuenchedSolver(zero_env, g, dt=1.0)
    assert e.value.code == "cfl-violation"
    with pytest.raises(HomolabError) as e:
        s.steps_for(-1)
    assert e.value.code == "negative-time"


def test_apply_many_matches_apply(full_env, rng):
    g = Grid.around([0.0, 0.0, 0.0], 2.0, 0.25)
    fs = [GridField(g, rng.normal(size=g.shape)) for _ in range(3)]
    s = QuenchedSolver(full_env, g)
    many = s.apply_many(fs, 0.2)
    for f, m in zip(fs, many):
        assert np.array_equal(s.apply(f, 0.2).values, m.values)


def test_gaussian_op_oracles():
    g = Grid.around([0.0, 0.0, 0.0], 8.0, 0.25)
    ones = gaussian_op(1.0, 1.0, GridField.constant(g, 1.0))
    assert np.abs(ones.values - 1).max() < 1e-14
    r2 = GridField.from_function(g, lambda y: np.sum(y * y, 1))
    assert gaussian_op(1.0, 1.0, r2).at([0, 0, 0]) == pytest.approx(3.0, abs=1e-9)
    f = GridField.from_function(g, gauss(0.5))
    two = gaussian_op(1.0, 0.4, gaussian_op(1.0, 0.6, f))
    one = gaussian_op(1.0, 1.0, f)
    assert abs(two.at([0, 0, 0]) - one.at([0, 0, 0])) < 1e-6
    assert np.array_equal(gaussian_op(2.0, 0.0, f).values, f.values)
    with pytest.raises(HomolabError):
        gaussian_op(0.0, 1.0, f)
    w = gaussian_kernel(1.0, 0.25)
    assert w.sum() == pytest.approx(1.0) and len(w) == 2 * 32 + 1


def test_gaussian_op_matches_zero_environment_solver(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 5.0, 0.25)
    f = GridField.from_function(g, gauss(1.0))
    diff = solve_quenched(zero_env, f, 0.5) - gaussian_op(1.0, 0.5, f)
    assert np.abs(diff.values[g.radius() < 2]).max() < 3e-3


def test_s_n_op_oracles(zero_env):
    hier = types.SimpleNamespace(L=lambda n: 1)
    g = Grid.around([0.0, 0.0, 0.0], 8.0, 0.25)
    assert np.abs(s_n_op(zero_env, hier, 0, 1.0, GridField.constant(g, 2.0)).values[g.radius() < 2]).max() < 1e-9
    lin = s_n_op(zero_env, hier, 0, 1.0, GridField.from_function(g, lambda y: y[:, 1]))
    # the only residual is absorbing-boundary loss six standard deviations away
    assert np.abs(lin.values[g.radius() < 2]).max() < 1e-6
    bump = GridField.from_function(g, lambda y: np.maximum(0.0, 1 - np.sum(y * y, 1) / 4) ** 3)
    assert np.abs(s_n_op(zero_env, hier, 0, 1.0, bump).values).max() < 1e-2


def test_compose_gaussian_additivity():
    g = Grid.around([0.0, 0.0], 12.0, 0.25)
    f = GridField.from_function(g, gauss(0.7))
    assert compose([], f) is f
    step = lambda h: gaussian_op(1.0, 0.5, h)  # noqa: E731
    diff = compose([(step, 4)], f) - gaussian_op(1.0, 2.0, f)
    assert np.abs(diff.values).max() < 1e-6


def test_gaussian_tail_bound(rng):
    from scipy.stats import chi2

    assert gaussian_tail_bound(1.0, 1.0, 0.0, 3) == pytest.approx(1.0)
    assert gaussian_tail_bound(1.0, 1.0, 0.0, 3, power=2) == pytest.approx(3.0)
    assert gaussian_tail_bound(2.0, 1.0, 0.0, 3, power=4) == pytest.approx(15 * 4.0)  # E|Z|^4 = d(d+2) var^2
    assert gaussian_tail_bound(1.0, 4.0, 3.0, 2) == pytest.approx(chi2.sf(9 / 4, 2))
    g = Grid.around([0.0, 0.0, 0.0], 8.0, 0.125)
    cut = 1.0 - CutoffSpec("chi_tilde_n", 0.5).on_grid(g)
    f = GridField(g, rng.uniform(-1, 1, size=g.shape) * cut)
    assert abs(gaussian_op(1.0, 1.0, f).at([0, 0, 0])) <= gaussian_tail_bound(1.0, 1.0, 1.5, 3)
    q = GridField(g, g.radius() ** 2 * cut)
    val = gaussian_op(1.0, 1.0, q).at([0, 0, 0])
    assert 0 < val <= gaussian_tail_bound(1.0, 1.0, 1.5, 3, power=2)
    assert val >= gaussian_tail_bound(1.0, 1.0, 2.0, 3, power=2)


@pytest.mark.slow
def test_solver_localization(desk, full_env):
    rep = verify_solver_localization(full_env, desk, 0, (0.0, 0.0, 0.0))
    assert rep.satisfied and rep.detail["leakage"] < 1e-6
    assert rep.detail["max_value"] < 0.1


def test_cutoffs():
    assert np.array_equal(chi(np.array([0.0, 1.0, 1.5, 2.0, 3.0])), [1.0, 1.0, 0.5, 0.0, 0.0])
    s = np.linspace(-0.5, 1.5, 9)
    v = smoothstep(s)
    assert v[0] == 1.0 and v[-1] == 0.0 and np.all(np.diff(v) <= 0)
    eps = 1e-4
    assert abs(smoothstep(eps) - 1) < 1e-10 and abs(smoothstep(1 - eps)) < 1e-10  # flat ends
    spec = CutoffSpec.chi_v(2.0, (1.0, 0.0))
    assert cutoff_eval(spec, [1.0, 0.0]) == 1.0
    assert cutoff_eval(spec, [4.0, 0.0]) == pytest.approx(0.5)
    assert cutoff_eval(spec, [6.0, 0.0]) == 0.0


def test_cutoff_levels(desk):
    ct = CutoffSpec.chi_tilde(desk, 0)
    D = desk.levels[0].D_tilde
    vals = ct(np.array([[2.9 * D, 0, 0], [3.5 * D, 0, 0], [4.1 * D, 0, 0]]))
    assert vals[0] == 1.0 and 0 < vals[1] < 1 and vals[2] == 0.0
    cx = CutoffSpec.chi_nx(desk, 0, (0.0, 0.0, 0.0))
    assert cx.radius == pytest.approx(30 * math.sqrt(3) * 25)


def test_compose_and_cutoff_mul():
    g = Grid.around([0.0], 4.0, 0.5)
    f = GridField.constant(g, 2.0)
    double = lambda h: h * 2.0  # noqa: E731
    out = compose([(double, 3), cutoff_mul(CutoffSpec.chi_v(1.0))], f)
    assert out.at([0.0]) == 16.0 and out.at([4.0]) == 0.0


def test_field_io_and_errors(tmp_path, rng):
    g = Grid.around([0.0, 0.0], 1.0, 0.25)
    f = GridField(g, rng.normal(size=g.shape))
    f.save(tmp_path / "f.bin")
    back = GridField.load(tmp_path / "f.bin")
    assert back.grid == g and np.array_equal(back.values, f.values)
    bad = np.zeros(g.shape)
    bad[0, 0] = np.nan
    with pytest.raises(HomolabError) as e:
        GridField(g, bad)
    assert e.value.code == "non-finite-field"
    env1 = sample_environment(EnvParams(d=1, eta=0.0, mode="zero", allow_low_dim=True))
    with pytest.raises(HomolabError):
        QuenchedSolver(env1, g)
