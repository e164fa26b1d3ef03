import types

import numpy as np
import pytest

from homolab.environment import EnvParams, sample_environment
from homolab.errors import HomolabError
from homolab.liouville import (SublinearProbe, ancient_comparison, oscillation_decay, product_bound_experiment,
                               regularization_check)
from homolab.sde_mc import SimConfig
from homolab.semigroup import Grid, GridField


@pytest.fixture(scope="module")
def line_env():
    return sample_environment(EnvParams(d=1, eta=0.0, mode="zero", allow_low_dim=True))


def test_probe_parsing():
    assert SublinearProbe.parse("power:0.25").gamma == 0.25
    assert SublinearProbe.parse("constant:3").label() == "constant:3"
    assert not SublinearProbe.parse("linear").sublinear
    for bad in ("power:1.5", "wave", "log:2"):
        with pytest.raises(HomolabError):
            SublinearProbe.parse(bad)
    y = np.array([[3.0, 4.0, 0.0]])
    assert SublinearProbe("power", gamma=0.5)(y)[0] == pytest.approx(5**0.5)
    assert SublinearProbe("log")(y)[0] == pytest.approx(np.log(6.0))
    assert SublinearProbe("linear", e=(0, 1, 0))(y)[0] == 4.0


def test_product_bound_small(zero_env):
    cfg = SimConfig(0.1, 4.0, 2000, 3)
    const = product_bound_experiment(zero_env, SublinearProbe("constant", c=2.0), [2, 4], cfg, n_roots=2)
    assert const.lhs == 0.0 and const.product_bound == 0.0
    lin = product_bound_experiment(zero_env, SublinearProbe("linear"), [2, 4], cfg, n_roots=2)
    # identical paths, so the entropy terms agree between probes
    assert [r["entropy_term"] for r in lin.rows] == [r["entropy_term"] for r in const.rows]
    for r in lin.rows:
        assert abs(r["diffusivity_factor"] - 1) <= 5 * r["diffusivity_se"]
    with pytest.raises(HomolabError):
        product_bound_experiment(zero_env, SublinearProbe("linear"), [3], cfg)


def test_oscillation_decay_line(line_env):
    g = Grid.around([0.0], 40.0, 0.25)
    times = [1.0, 4.0, 16.0]
    const = oscillation_decay(line_env, SublinearProbe("constant"), times, g)
    assert all(r["osc"] < 1e-12 for r in const)
    power = [r["osc"] for r in oscillation_decay(line_env, SublinearProbe("power"), times, g)]
    assert power[0] > power[1] > power[2]
    lin = oscillation_decay(line_env, SublinearProbe("linear"), times, g)
    assert all(abs(r["osc"] - 2.0) < 1e-9 for r in lin)
    with pytest.raises(HomolabError):
        oscillation_decay(line_env, SublinearProbe("linear"), [2.0, 1.0], g)


def test_regularization_sign_oracle(zero_env):
    # R_1 sign(x_1) = erf(x_1 / sqrt 2): sup 1 plus the 1/2-seminorm 1.0022
    g = Grid.around([0.0, 0.0, 0.0], 12.0, 0.25)
    sign = GridField.from_function(g, lambda y: np.sign(y[:, 0]))
    assert regularization_check(zero_env, sign, 1.0) == pytest.approx(2.0022, abs=0.1)
    with pytest.raises(HomolabError) as e:
        regularization_check(zero_env, sign, 0.5)
    assert e.value.code == "bad-time"


def test_regularization_constant(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 8.0, 0.25)
    assert regularization_check(zero_env, GridField.constant(g, 1.0), 1.0) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(HomolabError) as e:
        regularization_check(zero_env, GridField.constant(g, 1.0), 2.0)
    assert e.value.code == "grid-too-small"


def test_ancient_level_checks(zero_env):
    g = Grid.around([0.0, 0.0, 0.0], 2.0, 0.5)
    f = GridField.constant(g, 1.0)
    lv = types.SimpleNamespace(ell=2, L=5)
    hier = types.SimpleNamespace(levels=[lv, lv])
    with pytest.raises(HomolabError) as e:
        ancient_comparison(zero_env, hier, 0, f, 1.0)
    assert e.value.code == "level-too-small"
    last = types.SimpleNamespace(levels=[types.SimpleNamespace(ell=None, L=5)])
    with pytest.raises(HomolabError) as e:
        ancient_comparison(zero_env, last, 0, f, 1.0)
    assert e.value.code == "bad-level"
