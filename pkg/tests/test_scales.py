import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homolab.errors import HomolabError
from homolab.scales import (ScaleHierarchy, ScaleParams, branching, build_hierarchy, compute_m0, compute_mbar,
                            decompose_time, decompose_times)


def test_desk_table(desk):
    assert [lv.L for lv in desk.levels] == [25, 125, 1250]
    assert [lv.ell for lv in desk.levels] == [5, 10, None]
    lv0 = desk.levels[0]
    assert lv0.kappa == pytest.approx(1.98044, abs=5e-6)
    assert lv0.D == pytest.approx(49.511, abs=5e-4)
    assert lv0.D_tilde == pytest.approx(98.053, abs=5e-4)
    assert desk.delta == 5 / 64
    assert (desk.mbar, desk.m0) == (3, 13)
    assert desk.M0 == pytest.approx(100 * 3 * 1.5**15)


def test_kappa_formula(desk):
    for lv in desk.levels:
        assert lv.kappa == math.exp(0.5 * math.log(math.log(lv.L)) ** 2)
        assert lv.D_tilde == lv.L * math.exp(math.log(math.log(lv.L)) ** 2)


def test_mbar_and_m0_definitions():
    for a in (0.1, 0.2, 0.25, 0.5):
        m = compute_mbar(a)
        assert 3 <= (1 + a) ** m < 4
        m0 = compute_m0(a)
        assert (1 + a) ** (m0 - 2) <= 100 < (1 + a) ** (m0 - 1)


def test_no_mbar_error():
    # (1+a) = 4.5: powers jump from 1 to 4.5, skipping [3, 4)
    with pytest.raises(HomolabError) as e:
        compute_mbar(3.5)
    assert e.value.code == "no-mbar"


def test_constraint_report_desk(desk):
    bad = {(r.constraint, r.level) for r in desk.constraint_report if not r.satisfied}
    assert bad == {("kappa-growth", 0), ("kappa-growth", 1), ("chain", 1)}
    names = {r.constraint for r in desk.constraint_report if r.level == 2}
    assert names == {"chain-local"}


def test_paper_profile_rejects_desk_values():
    with pytest.raises(HomolabError) as e:
        build_hierarchy(ScaleParams(profile="paper"))
    assert e.value.code == "bad-params"


def test_bad_params():
    for kw in ({"d": 2}, {"beta": 0.7}, {"L0": 27}, {"nmax": 99}, {"a": 0.0}):
        with pytest.raises(HomolabError) as e:
            ScaleParams(**kw)
        assert e.value.code == "bad-params"


def test_degenerate_branching():
    with pytest.raises(HomolabError) as e:
        branching(5, 0.5)
    assert e.value.code == "degenerate-branching"
    assert branching(25, 0.5) == 5  # exact power survives the floor


def test_json_roundtrip(desk):
    assert ScaleHierarchy.from_json(desk.to_json()) == desk


def test_decompose_examples():
    h = build_hierarchy(ScaleParams(L0=5, a=2.0, nmax=2))
    assert [lv.L for lv in h.levels] == [5, 125, 1953125]
    assert h.mbar == 1
    dec = decompose_time(h, 1, 15625)
    assert dec.k == (1, 0) and dec.t_tilde == 0
    dec = decompose_time(h, 1, 123456789)
    assert dec.k == (7901, 146) and dec.t_tilde == 14
    assert dec.reconstruct(h) == 123456789


def test_decompose_errors(desk):
    with pytest.raises(HomolabError) as e:
        decompose_time(desk, 1, 10**6)
    assert e.value.code == "too-shallow"
    h = build_hierarchy(ScaleParams(L0=5, a=2.0, nmax=2))
    with pytest.raises(HomolabError) as e:
        decompose_time(h, 1, 100)
    assert e.value.code == "level-mismatch"


H3 = build_hierarchy(ScaleParams(nmax=3))


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=H3.L(3) ** 2, max_value=H3.L(4) ** 2 - 1))
def test_decompose_reconstructs_exactly(t):
    dec = decompose_time(H3, 3, t)
    assert dec.reconstruct(H3) == t
    assert 0 <= dec.t_tilde < H3.L(0) ** 2
    for j in range(1, H3.mbar + 1):
        assert dec.k[j] * H3.L(3 - j) ** 2 < H3.L(3 - j + 1) ** 2


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=float(H3.L(3) ** 2), max_value=float(H3.L(4) ** 2) * 0.999))
def test_decompose_real_times(t):
    dec = decompose_time(H3, 3, t)
    assert dec.reconstruct(H3) == pytest.approx(t, rel=1e-12)
    assert dec.t_tilde >= 0


def test_vectorized_matches_scalar():
    ts = np.random.default_rng(0).integers(H3.L(3) ** 2, H3.L(4) ** 2, size=500)
    k, r = decompose_times(H3, 3, ts)
    for i, t in enumerate(ts):
        d = decompose_time(H3, 3, int(t))
        assert tuple(k[i]) == d.k and r[i] == d.t_tilde
