import math

import numpy as np
import pytest

from homolab.environment import (DEPENDENCE_RANGE, EnvParams, Environment, evaluate, load_environment,
                                 sample_environment, shifted)
from homolab.errors import HomolabError


def test_frozen_coefficients(full_env):
    assert full_env.U == (0.8794728925799968, 0.45605620368621924, 0.8092930891916635)
    A, b = full_env.evaluate([0.3, -1.2, 2.7])
    assert A[0, 0] == 1.0053366039238925
    assert A[0, 2] == 0.00358318393808932
    assert b[1] == 0.010413760220628555


def test_zero_mode_is_brownian(zero_env, rng):
    A, b = zero_env.evaluate_many(rng.normal(size=(50, 3)) * 10)
    assert np.array_equal(A, np.broadcast_to(np.eye(3), A.shape))
    assert not b.any()


@pytest.mark.parametrize("mode", ["scalar-A", "vector-b", "full"])
def test_bounds_and_symmetry(mode, rng):
    eta = 0.2
    env = sample_environment(EnvParams(eta=eta, mode=mode, seed=3))
    A, b = env.evaluate_many(rng.uniform(-20, 20, size=(4000, 3)))
    assert np.allclose(A, np.swapaxes(A, 1, 2), rtol=0, atol=0)
    dev = np.abs(A - np.eye(3)).max()
    assert dev <= eta + 1e-12
    assert np.linalg.norm(b, axis=1).max() <= eta + 1e-12
    eig = np.linalg.eigvalsh(A)
    nu = env.params.nu
    assert eig.min() >= 1 / nu - 1e-12 and eig.max() <= nu + 1e-12
    if mode == "vector-b":
        assert np.array_equal(A, np.broadcast_to(np.eye(3), A.shape))
    if mode == "scalar-A":
        assert not b.any()


def test_lipschitz_bound(full_env, rng):
    x = rng.uniform(-10, 10, size=(2000, 3))
    e = rng.normal(size=(2000, 3))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    s = 1e-5
    A1, b1 = full_env.evaluate_many(x)
    A2, b2 = full_env.evaluate_many(x + s * e)
    slope = max(np.abs(A2 - A1).max(), np.abs(b2 - b1).max()) / s
    assert slope <= full_env.params.lipschitz_bound


def test_shift_is_exact(full_env, rng):
    y = rng.uniform(-50, 50, size=3)
    x = rng.uniform(-5, 5, size=(100, 3))
    moved = shifted(full_env, y)
    A1, b1 = moved.evaluate_many(x)
    A2, b2 = Environment(full_env.params, full_env.U, tuple(float(v) for v in y)).evaluate_many(x)
    assert np.array_equal(A1, A2) and np.array_equal(b1, b2)
    # shifting by an integer vector is exact in the lattice frame too
    yi = np.array([3.0, -7.0, 11.0])
    A3, _ = shifted(full_env, yi).evaluate_many(x)
    A4, _ = full_env.evaluate_many(x + yi)
    assert np.array_equal(A3, A4)


def test_finite_range_dependence(full_env):
    x = np.array([0.2, 0.4, 0.6])
    cells = full_env.cells_touched(x)
    assert cells
    y = x + full_env.lattice_shift
    for c in cells:
        assert np.linalg.norm(y - np.array(c)) < 1.0
    # points further apart than the dependence range touch disjoint cells
    far = full_env.cells_touched(x + DEPENDENCE_RANGE + 0.01)
    assert not cells & far


def test_restricted_isotropy_in_law(rng):
    # coordinate permutations leave the law of A_00 - 1 unchanged: compare means of the diagonal entries
    diag = []
    for seed in range(40):
        env = sample_environment(EnvParams(eta=0.1, mode="full", seed=seed))
        A, _ = env.evaluate_many(rng.uniform(-100, 100, size=(200, 3)))
        diag.append(np.diagonal(A, axis1=1, axis2=2).mean(axis=0))
    diag = np.array(diag) - 1
    assert np.abs(diag.mean(axis=0)).max() < 0.01


def test_descriptor_roundtrip(full_env, tmp_path):
    moved = full_env.shifted([1.5, 0.0, -2.0])
    path = tmp_path / "env.json"
    path.write_text(moved.to_json())
    back = load_environment(path)
    assert back == moved
    assert Environment.from_json(moved.to_json()) == moved
    bad = moved.descriptor()
    bad["U"] = [0.5, 0.5, 0.5]
    with pytest.raises(HomolabError) as e:
        Environment.from_descriptor(bad)
    assert e.value.code == "descriptor-mismatch"


@pytest.mark.parametrize("kw,code", [
    ({"mode": "tensor"}, "bad-mode"),
    ({"d": 2}, "bad-dimension"),
    ({"eta": -0.1}, "bad-eta"),
    ({"eta": 0.5}, "ellipticity-risk"),
    ({"seed": -1}, "bad-seed"),
])
def test_param_errors(kw, code):
    with pytest.raises(HomolabError) as e:
        EnvParams(**kw)
    assert e.value.code == code


def test_low_dimension_needs_flag():
    env = sample_environment(EnvParams(d=1, eta=0.1, mode="full", allow_low_dim=True))
    A, b = evaluate(env, [0.3])
    assert A.shape == (1, 1) and b.shape == (1,)


def test_dependence_range_property():
    assert EnvParams().dependence_range == DEPENDENCE_RANGE
    assert EnvParams(eta=0.05).nu == pytest.approx(1 / 0.95)
    assert math.isfinite(EnvParams().lipschitz_bound)
